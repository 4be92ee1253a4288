//! Acceptance suite: one PASS/FAIL line per criterion. Tolerances are
//! pinned below. Set `FUSEG3D_FULL_OVERFIT=1` to run the overfit
//! experiment at 112×112×16 instead of the reduced 48×48×16.

#[path = "../../model/tests/common/oracle.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fuseg3d_core::metrics::confusion_slices;
use fuseg3d_core::preprocess::LN2_APPROX;
use fuseg3d_core::{
    dice_loss, dice_loss_grad, fit_agreement, suv_bw, tmtv, AcquisitionMeta, Modality, ModelConfig, MsifConfig, TmtvRecord, Volume3D,
};
use fuseg3d_harness::*;
use fuseg3d_model::backbone::WindowAttention;
use fuseg3d_model::decoder::ResBlock;
use fuseg3d_model::msif::Msif;
use fuseg3d_model::window::WindowLayout;
use fuseg3d_model::{soft_dice_loss, SegmentationModel};
use fuseg3d_tensor::gradcheck::{check_direction, check_input, check_params, Coverage};
use fuseg3d_tensor::{named_params, no_grad, Init, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::statistics::Statistics;

const ATTENTION_TOL: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;
const DICE_GRAD_TOL: f64 = 1e-4;
const OVERFIT_DSC: f64 = 0.95;
const OVERFIT_STEPS: u64 = 500;
const METRIC_PAIRS: usize = 100;
const TMTV_REL_TOL: f64 = 1e-9;
const SUV_REL_TOL: f64 = 1e-9;
const HALF_LIFE_TOL: f64 = 1e-3;
const STATS_TOL: f64 = 1e-9;
const R2_IDENTITY_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-6;
const SOFTMAX_TOL: f64 = 1e-6;
const ABLATION_STEPS: u64 = 50;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration, what: &str) -> std::result::Result<(), String> {
    ensure(elapsed < budget, || format!("{what} took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new((0..shape.iter().product()).map(|_| rng.random_range(-scale..scale)).collect(), shape)
}

fn jitter(m: &dyn Module, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in named_params(m) {
        let v: Vec<f64> = p.values().iter().map(|x| x + rng.random_range(-scale..scale)).collect();
        p.set_values(&v);
    }
}

fn readout(x: &Tensor, seed: u64) -> Tensor {
    x.mul(&random(x.shape(), seed, 1.0)).sum()
}

fn c1_attention_oracle() -> Check {
    let t = Instant::now();
    let layout = WindowLayout::new([14, 14, 14], 7, true);
    let mism = oracle::mask_mismatches(&layout);
    ensure(mism == 0, || format!("14³ shifted mask: {mism} mismatches"))?;
    let mut worst: f64 = 0.0;
    for (grid, m, shifted, seed) in [([7, 7, 7], 7, true, 1), ([5, 6, 4], 7, true, 2), ([3, 3, 3], 3, false, 3), ([2, 1, 2], 2, true, 4)] {
        let e = oracle::self_attention_error(grid, m, shifted, seed);
        ensure(e <= ATTENTION_TOL, || format!("W-MSA on {grid:?}: {e:e}"))?;
        worst = worst.max(e);
    }
    for grid in [[7, 7, 7], [4, 5, 3], [1, 2, 6]] {
        for conventional in [false, true] {
            let (a, b) = oracle::cross_attention_error(grid, conventional);
            ensure(a <= ATTENTION_TOL && b <= ATTENTION_TOL, || format!("cross-attention on {grid:?}: {a:e} {b:e}"))?;
            worst = worst.max(a).max(b);
        }
    }
    within(t.elapsed(), Duration::from_secs(60), "attention oracle")?;
    Ok(format!("14³ mask exact; max abs diff {worst:.1e}"))
}

fn c2_gradients() -> Check {
    let t = Instant::now();
    // Dice: tensor backward and closed form against central differences.
    let gt = Tensor::new((0..64).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect(), &[1, 1, 4, 4, 4]);
    let p = Tensor::leaf(random(&[64], 3, 1.0).to_vec().iter().map(|v| (v + 1.0) / 2.0).collect(), &[1, 1, 4, 4, 4]);
    let dice = check_input(&p, &|x| soft_dice_loss(x, &gt, 1e-5), 1e-6, 1e-6).max_rel_error;
    let analytic = dice_loss_grad(&p.to_vec(), &gt.to_vec(), 1e-5).map_err(|e| e.to_string())?;
    let mut closed: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let h = 1e-6;
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[i] += h;
        lo[i] -= h;
        let n = (dice_loss(&hi, &gt.to_vec(), 1e-5).unwrap() - dice_loss(&lo, &gt.to_vec(), 1e-5).unwrap()) / (2.0 * h);
        closed = closed.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
    }
    ensure(dice < DICE_GRAD_TOL && closed < DICE_GRAD_TOL, || format!("dice: {dice:e} / {closed:e}"))?;

    // Fusion module: every parameter and both inputs.
    let model = ModelConfig { embed_dim: 4, num_heads: 2, window_size: 2, ..Default::default() };
    let msif = Msif::new(&mut Init::new(9), 4, 0, &model, &MsifConfig::default()).map_err(|e| e.to_string())?;
    jitter(&msif, 1, 0.3);
    let f1 = Tensor::leaf(random(&[1, 4, 4, 4, 4], 2, 1.0).to_vec(), &[1, 4, 4, 4, 4]);
    let f2 = Tensor::leaf(random(&[1, 4, 4, 4, 4], 3, 1.0).to_vec(), &[1, 4, 4, 4, 4]);
    let loss = || readout(&msif.forward(&f1, &f2).unwrap(), 4);
    let mut fusion = check_params(&named_params(&msif), &loss, 1e-5, 1e-5, Coverage::All).max_rel_error;
    fusion = fusion.max(check_input(&f1, &|x| readout(&msif.forward(x, &f2).unwrap(), 4), 1e-5, 1e-5).max_rel_error);
    fusion = fusion.max(check_input(&f2, &|x| readout(&msif.forward(&f1, x).unwrap(), 4), 1e-5, 1e-5).max_rel_error);
    ensure(fusion < GRAD_TOL, || format!("msif: {fusion:e}"))?;

    // Toy model: a unit random direction over all parameters, then one
    // coordinate of every parameter tensor.
    let cfg = ModelConfig { embed_dim: 8, window_size: 2, ..Default::default() };
    let net = SegmentationModel::new(cfg, MsifConfig::default(), 17).map_err(|e| e.to_string())?;
    jitter(&net, 11, 0.1);
    let pet = random(&[1, 1, 16, 16, 16], 1, 1.0);
    let ct = random(&[1, 1, 16, 16, 16], 2, 1.0);
    let mask = Tensor::new(random(&[4096], 3, 1.0).to_vec().iter().map(|&v| (v > 0.3) as u8 as f64).collect(), &[1, 1, 16, 16, 16]);
    let loss = || soft_dice_loss(&net.forward(&pet, &ct).unwrap(), &mask, 1e-5);
    let params = named_params(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut dir: Vec<Vec<f64>> = params.iter().map(|(_, p)| (0..p.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().flatten().for_each(|v| *v /= norm);
    let directional = check_direction(&params, &dir, &loss, 1e-5, 1e-5);
    let coords = check_params(&params, &loss, 1e-6, 1e-5, Coverage::Sample(1));
    ensure(directional < GRAD_TOL && coords.max_rel_error < GRAD_TOL, || {
        format!("toy model: directional {directional:e}, coordinates {:e} at {}", coords.max_rel_error, coords.worst)
    })?;
    within(t.elapsed(), Duration::from_secs(600), "gradient checks")?;
    Ok(format!(
        "dice {:.1e}; msif {fusion:.1e}; toy model directional {directional:.1e}, {} coords max {:.1e}",
        dice.max(closed),
        coords.checked,
        coords.max_rel_error
    ))
}

fn c3_shapes() -> Check {
    let model = SegmentationModel::new(ModelConfig::default(), MsifConfig::default(), 0).map_err(|e| e.to_string())?;
    let x = Tensor::new((0..224 * 224 * 32).map(|i| (i as f64 * 1e-3).sin()).collect(), &[1, 1, 224, 224, 32]);
    let trace = no_grad(|| model.forward_traced(&x, &x)).map_err(|e| e.to_string())?;
    let want = [[1, 48, 56, 56, 8], [1, 96, 28, 28, 4], [1, 192, 14, 14, 2], [1, 384, 7, 7, 1]];
    for (pyr, name) in [(&trace.pet, "PET"), (&trace.ct, "CT")] {
        let got: Vec<Vec<usize>> = pyr.stages.iter().map(|s| s.tensor.shape().to_vec()).collect();
        ensure(got == want.map(|w| w.to_vec()), || format!("{name} stages {got:?}"))?;
    }
    ensure(trace.prob.shape() == [1, 1, 224, 224, 32], || format!("probability map {:?}", trace.prob.shape()))?;
    Ok("stages 56·56·8×48 / 28·28·4×96 / 14·14·2×192 / 7·7·1×384; output 224·224·32".into())
}

fn c4_overfit() -> Check {
    let full = std::env::var("FUSEG3D_FULL_OVERFIT").is_ok_and(|v| v == "1");
    let (hw, depth) = if full { (112, 16) } else { (48, 16) };
    let spec = PhantomSpec { dims: [hw, hw, depth], lesions: 3, semi_axis_range: [2.5, 5.0], seed: 7, ..Default::default() };
    let p = generate_phantom(&spec).map_err(|e| e.to_string())?;
    let case = Case::new("overfit", p.pet, p.ct, Some(p.mask)).map_err(|e| e.to_string())?;
    let cfg = ModelConfig { embed_dim: 12, window_size: 7, num_heads: 3, ..Default::default() };
    let train = TrainConfig { window_depth: depth, max_steps: OVERFIT_STEPS, seed: 0, ..Default::default() };
    let run = |steps: u64, target: Option<f64>| {
        let model = SegmentationModel::new(cfg.clone(), MsifConfig::default(), 0).unwrap();
        let mut t = Trainer::new(&model, TrainConfig { max_steps: steps, ..train.clone() }).unwrap();
        t.run(std::slice::from_ref(&case), &[], &TrainOptions { target_train_dsc: target, ..Default::default() })
    };
    let t = Instant::now();
    let out = run(OVERFIT_STEPS, Some(OVERFIT_DSC)).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let best = out.state.history.steps.iter().map(|s| s.train_dsc).fold(0.0, f64::max);
    ensure(out.stop == StopReason::TargetReached, || format!("best training DSC {best:.4} after {} steps", out.state.step))?;
    let again = run(5, None).map_err(|e| e.to_string())?;
    let bits = |h: &History| h.losses().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&again.state.history) == bits(&out.state.history)[..5], || "rerun with the same seed diverged".into())?;
    within(t.elapsed(), Duration::from_secs(4 * 3600), "overfit")?;
    Ok(format!("{hw}×{hw}×{depth}: DSC {best:.4} at step {} ({secs:.0}s); same-seed rerun bitwise equal", out.state.step))
}

/// Per-voxel enumeration.
fn brute(pred: &[bool], gt: &[bool]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        tp += (p && g) as u64;
        fp += (p && !g) as u64;
        fn_ += (!p && g) as u64;
    }
    let both_empty = tp + fp + fn_ == 0;
    let ratio = |a: u64, b: u64| if b == 0 { if both_empty { 1.0 } else { 0.0 } } else { a as f64 / b as f64 };
    (ratio(2 * tp, 2 * tp + fp + fn_), ratio(tp, tp + fn_), ratio(tp, tp + fp))
}

fn c5_metrics() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..METRIC_PAIRS {
        let dims = [rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16)];
        let n = dims.iter().product::<usize>();
        let density = rng.random_range(0.0..0.6);
        let a: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        let f = |m: &[bool]| m.iter().map(|&x| x as u8 as f64).collect::<Vec<_>>();
        let c = confusion_slices(&f(&a), &f(&b)).map_err(|e| e.to_string())?;
        let want = brute(&a, &b);
        ensure((c.dsc(), c.sensitivity(), c.precision()) == want, || format!("pair {i}: {:?} vs {want:?}", (c.dsc(), c.sensitivity(), c.precision())))?;
        let spacing = [rng.random_range(0.5..5.0), rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)];
        let vol = Volume3D::new(f(&a), dims, spacing, Modality::Mask, "m").map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for &x in &a {
            if x {
                sum += spacing[0] * spacing[1] * spacing[2] / 1000.0;
            }
        }
        let got = tmtv(&vol).map_err(|e| e.to_string())?;
        ensure((got - sum).abs() <= TMTV_REL_TOL * sum.max(f64::MIN_POSITIVE), || format!("tmtv {got} vs {sum}"))?;
    }
    let empty = vec![0.0; 27];
    let mut one = empty.clone();
    one[13] = 1.0;
    let ee = confusion_slices(&empty, &empty).unwrap();
    let en = confusion_slices(&empty, &one).unwrap();
    let ne = confusion_slices(&one, &empty).unwrap();
    ensure((ee.dsc(), ee.sensitivity(), ee.precision()) == (1.0, 1.0, 1.0), || "empty/empty must score 1".into())?;
    ensure(en.dsc() == 0.0 && ne.dsc() == 0.0 && en.sensitivity() == 0.0 && ne.precision() == 0.0, || "empty/non-empty must score 0".into())?;
    within(t.elapsed(), Duration::from_secs(60), "metric oracles")?;
    Ok(format!("{METRIC_PAIRS} random pairs exact; TMTV within {TMTV_REL_TOL:e}; empty conventions hold"))
}

fn c6_suv() -> Check {
    let t = Instant::now();
    let half_life = 6586.2;
    let meta = |t1: f64| AcquisitionMeta {
        rescale_slope: 1.0,
        rescale_intercept: 0.0,
        injected_dose_bq: 3.7e8,
        half_life_s: half_life,
        t0_s: 0.0,
        t1_s: t1,
        weight_kg: 70.0,
    };
    let pet = |v: f64| Volume3D::filled([1, 1, 1], [1.0; 3], Modality::PetRaw, "p", v).unwrap();
    let zero = suv_bw(&pet(0.0), &meta(1234.0)).map_err(|e| e.to_string())?.data()[0];
    ensure(zero == 0.0, || format!("zero activity gives {zero}"))?;
    let direct = suv_bw(&pet(5000.0), &meta(0.0)).map_err(|e| e.to_string())?.data()[0];
    let expected = 5000.0 / (3.7e8 / (70.0 * 1000.0));
    ensure(((direct - expected) / expected).abs() < SUV_REL_TOL, || format!("{direct} vs {expected}"))?;
    let later = suv_bw(&pet(5000.0), &meta(half_life)).map_err(|e| e.to_string())?.data()[0];
    let ratio = later / direct;
    ensure((ratio - 2.0).abs() < HALF_LIFE_TOL, || format!("half-life ratio {ratio}"))?;
    ensure(LN2_APPROX == 0.693, || "decay constant".into())?;
    within(t.elapsed(), Duration::from_secs(1), "SUV")?;
    Ok(format!("zero exact; direct {direct:.6}; half-life ratio {ratio:.5}"))
}

fn c7_agreement() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let records: Vec<TmtvRecord> = (0..20)
        .map(|i| {
            let g: f64 = rng.random_range(5.0..2500.0);
            let c = (g * rng.random_range(0.7..1.3) + rng.random_range(-40.0..40.0)).max(0.0);
            TmtvRecord { patient_id: format!("p{i}"), fold: i % 5, ctmtv_ml: c, gtmtv_ml: g }
        })
        .collect();
    let g: Vec<f64> = records.iter().map(|r| r.gtmtv_ml).collect();
    let c: Vec<f64> = records.iter().map(|r| r.ctmtv_ml).collect();
    let d: Vec<f64> = c.iter().zip(&g).map(|(a, b)| a - b).collect();
    let slope = (&g).covariance(&c) / (&g).variance();
    let intercept = (&c).mean() - slope * (&g).mean();
    let r = (&g).covariance(&c) / ((&g).std_dev() * (&c).std_dev());
    let (md, sd) = ((&d).mean(), (&d).std_dev());
    let rep = fit_agreement(&records).map_err(|e| e.to_string())?;
    let pairs = [
        ("slope", rep.slope, slope),
        ("intercept", rep.intercept, intercept),
        ("R²", rep.r_squared, r * r),
        ("Pearson r", rep.pearson_r, r),
        ("mean difference", rep.mean_diff, md),
        ("lower limit", rep.loa_low, md - 1.96 * sd),
        ("upper limit", rep.loa_high, md + 1.96 * sd),
    ];
    for (name, got, want) in pairs {
        ensure((got - want).abs() <= STATS_TOL * want.abs().max(1.0), || format!("{name}: {got} vs {want}"))?;
    }
    let identity = (rep.r_squared - rep.pearson_r * rep.pearson_r).abs();
    ensure(identity <= R2_IDENTITY_TOL, || format!("R² − r² = {identity:e}"))?;
    within(t.elapsed(), Duration::from_secs(1), "agreement")?;
    Ok(format!("20 pairs within {STATS_TOL:e}; |R² − r²| = {identity:.1e}"))
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c8_invariants() -> Check {
    let model = ModelConfig { embed_dim: 8, num_heads: 2, window_size: 3, ..Default::default() };
    let msif = Msif::new(&mut Init::new(3), 8, 0, &model, &MsifConfig::default()).map_err(|e| e.to_string())?;
    msif.tie_modality_weights();
    let f = random(&[1, 8, 5, 4, 6], 1, 1.0);
    let g = random(&[1, 8, 5, 4, 6], 2, 1.0);
    let sym = max_diff(&no_grad(|| msif.forward(&f, &g)).unwrap(), &no_grad(|| msif.forward(&g, &f)).unwrap());
    ensure(sym <= SYMMETRY_TOL, || format!("modality swap differs by {sym:e}"))?;

    let msif = Msif::new(&mut Init::new(4), 8, 0, &model, &MsifConfig::default()).map_err(|e| e.to_string())?;
    let f = random(&[2, 8, 7, 5, 4], 3, 2.0);
    let g = random(&[2, 8, 7, 5, 4], 4, 2.0);
    let (_, trace) = no_grad(|| msif.forward_traced(&f, &g)).map_err(|e| e.to_string())?;
    let in_unit = |t: &Tensor| t.to_vec().iter().all(|&v| v > 0.0 && v < 1.0);
    ensure(trace.gates.iter().all(in_unit), || "a gate left (0, 1)".into())?;
    ensure(trace.channel_weights.iter().chain(&trace.spatial_weights).all(in_unit), || "a CBAM weight left (0, 1)".into())?;
    let layout = msif.layout([7, 5, 4]);
    let n = layout.tokens_per_window();
    let labels = layout.mask.as_ref().map(|m| m.labels.as_slice());
    let mut worst_row: f64 = 0.0;
    // Rows are ordered (batch·window, head, query) with two heads.
    for probs in &trace.attention_probs {
        for (r, row) in probs.chunks(n).enumerate() {
            let window = (r / n / 2) % layout.num_windows();
            if labels.is_some_and(|l| l[window * n + r % n] < 0) {
                ensure(row.iter().all(|&p| p == 0.0), || "padding query attends".into())?;
                continue;
            }
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    // Backbone self-attention on a shifted, padded grid.
    let attn = WindowAttention::new(&mut Init::new(6), 8, 2, 3, true);
    let blayout = WindowLayout::new([5, 7, 4], 3, true);
    let x = random(&[1, 5, 7, 4, 8], 7, 1.0);
    let probs = attn.probabilities(&blayout.partition(&x), blayout.mask.as_ref());
    let bn = blayout.tokens_per_window();
    let blabels = blayout.mask.as_ref().map(|m| m.labels.as_slice());
    // Rows are (window, head, query); fold the head into the window index.
    let mut backbone_worst: f64 = 0.0;
    for (r, row) in probs.chunks(bn).enumerate() {
        let window = r / bn / 2;
        if blabels.is_some_and(|l| l[window * bn + r % bn] < 0) {
            continue;
        }
        backbone_worst = backbone_worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst_row.max(backbone_worst) <= SOFTMAX_TOL, || format!("softmax row sums off by {:e}", worst_row.max(backbone_worst)))?;

    let block = ResBlock::new(&mut Init::new(4), 6, 6);
    block.zero_weights();
    let x = random(&[2, 6, 4, 3, 5], 14, 3.0);
    ensure(block.forward(&x).to_vec() == x.to_vec(), || "zeroed residual block is not the identity".into())?;
    Ok(format!("swap {sym:.1e}; gates in (0,1); row sums within {:.1e}; zeroed block exact", worst_row.max(backbone_worst)))
}

fn tiny_model() -> ModelConfig {
    ModelConfig { embed_dim: 4, num_heads: 2, window_size: 2, depths: [1, 1, 1, 1], fusion_kernels: vec![1, 3], ..Default::default() }
}

fn c9_determinism() -> Check {
    let cases = phantom_cohort(&PhantomSpec { dims: [24, 24, 20], semi_axis_range: [2.0, 4.0], ..Default::default() }, 3).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { window_depth: 8, max_steps: 8, seed: 5, batch_size: 2, ..Default::default() };
    let curve = || -> std::result::Result<Vec<u64>, String> {
        let m = SegmentationModel::new(tiny_model(), MsifConfig::default(), 1).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(&m, cfg.clone()).map_err(|e| e.to_string())?;
        let out = t.run(&cases, &[], &TrainOptions::default()).map_err(|e| e.to_string())?;
        Ok(out.state.history.losses().iter().map(|x| x.to_bits()).collect())
    };
    let (a, b) = (curve()?, curve()?);
    ensure(a == b && a.len() == 8, || "loss curves differ between identical runs".into())?;

    let ids: Vec<String> = (0..165).map(|i| format!("pt{i:03}")).collect();
    let folds = make_folds(&ids, 5, 2025).map_err(|e| e.to_string())?;
    for f in &folds {
        let (fit, val) = holdout(&f.train_patient_ids, 0.2);
        ensure(f.test_patient_ids.iter().all(|t| !fit.contains(t) && !val.contains(t)), || format!("fold {} leaks a test patient", f.fold_index))?;
        ensure(f.test_patient_ids.len() == 33 && f.train_patient_ids.len() == 132, || "fold sizes".into())?;
    }
    let mut tested: Vec<&String> = folds.iter().flat_map(|f| &f.test_patient_ids).collect();
    tested.sort();
    tested.dedup();
    ensure(tested.len() == 165, || "test folds do not partition the cohort".into())?;

    let model = SegmentationModel::new(tiny_model(), MsifConfig::default(), 2).map_err(|e| e.to_string())?;
    let c = &cases[0];
    let n = sliding_windows(&c.pet, 8, 4).map_err(|e| e.to_string())?.len();
    let forward: Vec<usize> = (0..n).collect();
    let reference = predict_stitched_in_order(&model, &c.pet, &c.ct, 8, 4, &forward).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let mut order = forward.clone();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let other = predict_stitched_in_order(&model, &c.pet, &c.ct, 8, 4, &order).map_err(|e| e.to_string())?;
        ensure(other.data().iter().zip(reference.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || format!("order {order:?} changes the stitched map"))?;
    }
    Ok(format!("8-step curves bitwise equal; 5 folds of 165 disjoint; {n}-window stitch order-invariant"))
}

fn c10_ablation() -> Check {
    let t = Instant::now();
    let spec = PhantomSpec { dims: [32, 32, 16], semi_axis_range: [2.5, 4.5], ..Default::default() };
    let cases = phantom_cohort(&spec, 4).map_err(|e| e.to_string())?;
    let (train, test) = cases.split_at(3);
    let test: Vec<&Case> = test.iter().collect();
    let base = ToolkitConfig {
        model: ModelConfig { embed_dim: 12, num_heads: 3, ..Default::default() },
        train: TrainConfig { window_depth: 16, max_steps: ABLATION_STEPS, ..Default::default() },
        ..Default::default()
    };
    let report = ablation_sweep(&base, AblationAxis::MsifModules, None, train, &test, false).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.rows.iter().map(|r| r.variant.as_str()).collect();
    ensure(names == ["Baseline", "MSF", "CMA", "GFM", "MSF+CMA", "Full"], || format!("variants {names:?}"))?;
    for r in &report.rows {
        ensure(r.steps == ABLATION_STEPS && r.final_loss.is_finite(), || format!("{}: {} steps, loss {}", r.variant, r.steps, r.final_loss))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    report.write(dir.path()).map_err(|e| e.to_string())?;
    ensure(dir.path().join("ablation_msif_modules.csv").exists(), || "report table not written".into())?;
    let p = |name: &str| report.rows.iter().find(|r| r.variant == name).unwrap().params;
    // Every variant that adds modules to another has strictly more parameters.
    let chains = [
        ["Baseline", "MSF", "MSF+CMA", "Full"],
        ["Baseline", "CMA", "MSF+CMA", "Full"],
        ["Baseline", "GFM", "Full", "Full"],
    ];
    for chain in chains {
        for w in chain.windows(2).filter(|w| w[0] != w[1]) {
            ensure(p(w[0]) < p(w[1]), || format!("{} ({}) !< {} ({})", w[0], p(w[0]), w[1], p(w[1])))?;
        }
    }
    ensure(report.rows.iter().all(|r| r.params >= p("Baseline") && r.params <= p("Full")), || "Baseline/Full are not the extremes".into())?;
    let counts: Vec<String> = report.rows.iter().map(|r| format!("{}={}", r.variant, r.params)).collect();
    Ok(format!("6 variants × {ABLATION_STEPS} steps finite ({:.0}s); params {}", t.elapsed().as_secs_f64(), counts.join(" ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("window-attention oracle", c1_attention_oracle),
        ("gradient checks", c2_gradients),
        ("shape pyramid", c3_shapes),
        ("overfit one phantom", c4_overfit),
        ("metric and TMTV oracles", c5_metrics),
        ("SUV formula", c6_suv),
        ("agreement statistics", c7_agreement),
        ("symmetry and range invariants", c8_invariants),
        ("determinism and fold hygiene", c9_determinism),
        ("ablation plumbing", c10_ablation),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("C{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|x| x.eq_ignore_ascii_case(&id)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:<3} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:<3} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
