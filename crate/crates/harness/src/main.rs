use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fuseg3d_core::tmtv::{emit_agreement_plots, fit_agreement, write_records_csv};
use fuseg3d_core::{binarize, load_volume, save_volume, tmtv, Modality, TmtvRecord, Volume3D};
use fuseg3d_harness::dataset::{prepare_pair, select};
use fuseg3d_harness::{
    ablation_sweep, evaluate, holdout, load_dataset, make_folds, phantom_cohort, predict_stitched, save_case, AblationAxis,
    EvalSettings, HarnessError, PhantomSpec, Result, ToolkitConfig, TrainOptions, Trainer,
};
use fuseg3d_model::SegmentationModel;
use fuseg3d_tensor::param_count;

#[derive(Parser)]
#[command(name = "fuseg3d", version, about = "PET/CT lesion segmentation with multi-scale cross-modal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the training patients of one cross-validation fold and
    /// score its test patients.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        /// Case directory; defaults to a generated phantom cohort.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Phantom cohort size when no data directory is given.
        #[arg(long, default_value_t = 10)]
        phantoms: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Continue from a `last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment one PET/CT pair.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pet: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        /// Output volume (.fsgv, .nii, .nii.gz).
        #[arg(long)]
        out: PathBuf,
        /// Write the thresholded mask instead of probabilities.
        #[arg(long)]
        binarize: bool,
    },
    /// Score a checkpoint on every case of a directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// TMTV agreement between predicted and reference masks, matched by
    /// patient id.
    Tmtv {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, default_value = "tmtv")]
        out: PathBuf,
    },
    /// Generate synthetic cases.
    Phantom {
        /// Phantom spec JSON; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "phantoms")]
        out: PathBuf,
    },
    /// Train and score every variant along one axis.
    Ablate {
        /// heads, depths, embed_dim or msif_modules.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of the axis values; `;` separates depth tuples.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        phantoms: usize,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<ToolkitConfig> {
    match path {
        Some(p) => ToolkitConfig::load(p),
        None => Ok(ToolkitConfig::default()),
    }
}

fn cases(data: Option<&Path>, phantoms: usize, cfg: &ToolkitConfig) -> Result<Vec<fuseg3d_harness::Case>> {
    match data {
        Some(dir) => load_dataset(dir, &cfg.preprocess),
        None => phantom_cohort(&PhantomSpec::default(), phantoms),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Data(format!("{}: {e}", dir.display())))
}

fn settings(cfg: &ToolkitConfig, fold: usize) -> EvalSettings {
    EvalSettings { depth: cfg.train.window_depth, stride: cfg.train.stride(), threshold: cfg.train.threshold, fold }
}

fn train_cmd(config: &Path, fold: usize, data: Option<&Path>, phantoms: usize, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = ToolkitConfig::load(config)?;
    let all = cases(data, phantoms, &cfg)?;
    let ids: Vec<String> = all.iter().map(|c| c.id.clone()).collect();
    let folds = make_folds(&ids, cfg.train.folds, cfg.train.seed)?;
    let split = folds.get(fold).ok_or_else(|| HarnessError::Config(format!("fold {fold} out of range 0..{}", folds.len())))?;
    let (fit_ids, val_ids) = holdout(&split.train_patient_ids, cfg.train.val_fraction);
    let fit: Vec<_> = select(&all, &fit_ids)?.into_iter().cloned().collect();
    let val = select(&all, &val_ids)?;
    let test = select(&all, &split.test_patient_ids)?;
    let dir = out.join(format!("fold{fold}"));
    mkdir(&dir)?;
    write_json(&dir.join("split.json"), split)?;

    let loaded;
    let fresh;
    let mut trainer = match resume {
        Some(p) => {
            loaded = SegmentationModel::load(p)?;
            let adam = loaded.adam.clone().ok_or_else(|| HarnessError::Data(format!("{}: no optimizer state", p.display())))?;
            Trainer::resume(&loaded.model, cfg.train.clone(), adam, &loaded.extra)?
        }
        None => {
            fresh = SegmentationModel::new(cfg.model.clone(), cfg.msif.clone(), cfg.train.seed)?;
            Trainer::new(&fresh, cfg.train.clone())?
        }
    };
    eprintln!("fold {fold}: {} fit / {} val / {} test patients, {} parameters", fit.len(), val.len(), test.len(), param_count(trainer.model));
    let opts = TrainOptions { checkpoint_dir: Some(dir.clone()), verbose: true, ..Default::default() };
    let outcome = trainer.run(&fit, &val, &opts)?;
    write_json(&dir.join("history.json"), &outcome.state.history)?;
    let best = SegmentationModel::load(&dir.join("best.ckpt"))?;
    let eval = evaluate(&best.model, &test, &settings(&cfg, fold))?;
    eval.write(&dir)?;
    eprintln!("stopped: {:?} after {} steps; test mean DSC {:.4}", outcome.stop, outcome.state.step, eval.mean_dsc());
    Ok(())
}

fn infer_cmd(ckpt: &Path, pet: &Path, ct: &Path, out: &Path, bin: bool) -> Result<()> {
    let loaded = SegmentationModel::load(ckpt)?;
    let train: fuseg3d_harness::TrainConfig = loaded
        .extra
        .get("train")
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| HarnessError::Data(format!("{}: train config: {e}", ckpt.display()))))
        .transpose()?
        .unwrap_or_default();
    let pet = load_volume(pet, None).or_else(|_| load_volume(pet, Some(Modality::PetSuv)))?;
    let ct = load_volume(ct, None).or_else(|_| load_volume(ct, Some(Modality::CtHu)))?;
    let (pet, ct) = prepare_pair(pet, ct, &Default::default())?;
    let prob = predict_stitched(&loaded.model, &pet, &ct, train.window_depth, train.stride())?;
    let result = if bin { binarize(&prob, train.threshold)? } else { prob };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    save_volume(&result, out)?;
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let loaded = SegmentationModel::load(ckpt)?;
    let train: fuseg3d_harness::TrainConfig =
        loaded.extra.get("train").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_default();
    let cfg = ToolkitConfig { train, ..Default::default() };
    let all = load_dataset(data, &cfg.preprocess)?;
    let refs: Vec<_> = all.iter().collect();
    let eval = evaluate(&loaded.model, &refs, &settings(&cfg, 0))?;
    eval.write(out)?;
    if let Ok(report) = fit_agreement(&eval.tmtv) {
        emit_agreement_plots(&report, &eval.tmtv, out, "eval")?;
    }
    eprintln!("{} patients, mean DSC {:.4}", eval.metrics.len(), eval.mean_dsc());
    Ok(())
}

fn masks_by_id(dir: &Path) -> Result<Vec<Volume3D>> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::Data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| HarnessError::Data(e.to_string()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !(name.ends_with(".fsgv") || name.ends_with(".nii") || name.ends_with(".nii.gz")) {
            continue;
        }
        let v = load_volume(&path, None).or_else(|_| load_volume(&path, Some(Modality::Mask)))?;
        let v = match v.modality() {
            Modality::Mask => v,
            Modality::Prob => binarize(&v, 0.5)?,
            m => return Err(HarnessError::Data(format!("{}: expected a mask or probability map, found {m}", path.display()))),
        };
        out.push(v);
    }
    out.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    Ok(out)
}

fn tmtv_cmd(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<()> {
    let preds = masks_by_id(pred_dir)?;
    let gts = masks_by_id(gt_dir)?;
    let mut records = Vec::new();
    for p in &preds {
        let g = gts
            .iter()
            .find(|g| g.patient_id() == p.patient_id())
            .ok_or_else(|| HarnessError::Data(format!("no reference mask for patient `{}`", p.patient_id())))?;
        records.push(TmtvRecord { patient_id: p.patient_id().into(), fold: 0, ctmtv_ml: tmtv(p)?, gtmtv_ml: tmtv(g)? });
    }
    if records.is_empty() {
        return Err(HarnessError::Data(format!("no masks in {}", pred_dir.display())));
    }
    mkdir(out)?;
    write_records_csv(&records, &out.join("tmtv.csv"))?;
    let report = fit_agreement(&records)?;
    emit_agreement_plots(&report, &records, out, "tmtv")?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Data(e.to_string()))?);
    Ok(())
}

fn phantom_cmd(spec: Option<&Path>, count: usize, out: &Path) -> Result<()> {
    let spec: PhantomSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
        }
        None => PhantomSpec::default(),
    };
    for case in phantom_cohort(&spec, count)? {
        save_case(out, &case)?;
    }
    eprintln!("wrote {count} phantom case(s) to {}", out.display());
    Ok(())
}

fn parse_values(axis: AblationAxis, s: &str) -> Vec<String> {
    let sep = if axis == AblationAxis::Depths { ';' } else { ',' };
    s.split(sep).map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

#[allow(clippy::too_many_arguments)]
fn ablate_cmd(
    axis: &str,
    config: Option<&Path>,
    values: Option<&str>,
    steps: Option<u64>,
    data: Option<&Path>,
    phantoms: usize,
    out: &Path,
) -> Result<()> {
    let axis: AblationAxis = axis.parse()?;
    let mut cfg = config_or_default(config)?;
    if let Some(s) = steps {
        cfg.train.max_steps = s;
    }
    let values = values.map(|v| parse_values(axis, v));
    let all = cases(data, phantoms, &cfg)?;
    let n_test = (all.len() / 3).max(1);
    if all.len() < 2 {
        return Err(HarnessError::Data("ablation needs at least 2 cases".into()));
    }
    let (train, test) = all.split_at(all.len() - n_test);
    let test: Vec<_> = test.iter().collect();
    let report = ablation_sweep(&cfg, axis, values.as_deref(), train, &test, true)?;
    report.write(out)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, fold, data, phantoms, out, resume } => {
            train_cmd(&config, fold, data.as_deref(), phantoms, &out, resume.as_deref())
        }
        Command::Infer { ckpt, pet, ct, out, binarize } => infer_cmd(&ckpt, &pet, &ct, &out, binarize),
        Command::Eval { ckpt, data, out } => eval_cmd(&ckpt, &data, &out),
        Command::Tmtv { pred_dir, gt_dir, out } => tmtv_cmd(&pred_dir, &gt_dir, &out),
        Command::Phantom { spec, count, out } => phantom_cmd(spec.as_deref(), count, &out),
        Command::Ablate { axis, config, values, steps, data, phantoms, out } => {
            ablate_cmd(&axis, config.as_deref(), values.as_deref(), steps, data.as_deref(), phantoms, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
