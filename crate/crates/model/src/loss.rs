use fuseg3d_tensor::Tensor;

/// Differentiable `1 - (2 Σ p g + ε) / (Σ p + Σ g + ε)` over all elements.
pub fn soft_dice_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Tensor {
    assert_eq!(pred.shape(), gt.shape(), "dice loss shape mismatch");
    let inter = pred.mul(gt).sum().mul_scalar(2.0).add_scalar(eps);
    let denom = pred.sum().add(&gt.sum()).add_scalar(eps);
    inter.div(&denom).neg().add_scalar(1.0)
}
