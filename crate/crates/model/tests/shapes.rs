use std::time::Instant;

use fuseg3d_core::{ModelConfig, MsifConfig};
use fuseg3d_model::decoder::UpsampleBlock;
use fuseg3d_model::SegmentationModel;
use fuseg3d_tensor::{no_grad, Init, Tensor};

fn ramp(shape: &[usize], seed: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|i| ((i as f64 * 0.37 + seed).sin() + 1.0) * 0.5).collect(), shape)
}

#[test]
fn default_pyramid_and_output_shape() {
    let model = SegmentationModel::new(ModelConfig::default(), MsifConfig::default(), 7).unwrap();
    let shape = [1, 1, 224, 224, 32];
    let t = Instant::now();
    let trace = no_grad(|| model.forward_traced(&ramp(&shape, 0.1), &ramp(&shape, 0.7))).unwrap();
    eprintln!("default forward: {:.1}s", t.elapsed().as_secs_f64());
    let expected = [[1, 48, 56, 56, 8], [1, 96, 28, 28, 4], [1, 192, 14, 14, 2], [1, 384, 7, 7, 1]];
    for (i, e) in expected.iter().enumerate() {
        assert_eq!(trace.pet.stages[i].shape(), e);
        assert_eq!(trace.ct.stages[i].shape(), e);
        assert_eq!(trace.fused[i].shape(), e);
    }
    assert_eq!(trace.pet.embedding.shape(), &[1, 24, 112, 112, 16]);
    assert_eq!(trace.prob.shape(), &[1, 1, 224, 224, 32]);
    assert!(trace.prob.data().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn upsample_doubles_grid_and_halves_channels() {
    let up = UpsampleBlock::new(&mut Init::new(1), 384, 192, 2);
    let y = up.forward(&ramp(&[1, 384, 7, 7, 1], 0.0));
    assert_eq!(y.shape(), &[1, 192, 14, 14, 2]);
    let twice = UpsampleBlock::new(&mut Init::new(2), 192, 96, 2).forward(&y);
    assert_eq!(twice.shape(), &[1, 96, 28, 28, 4]);
}
