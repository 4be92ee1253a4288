//! Sweeps over one architectural axis, training every variant identically.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fuseg3d_core::metrics::macro_average;
use fuseg3d_core::{ModelConfig, MsifConfig};
use fuseg3d_model::SegmentationModel;
use fuseg3d_tensor::param_count;
use serde::{Deserialize, Serialize};

use crate::config::ToolkitConfig;
use crate::dataset::Case;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, EvalSettings};
use crate::train::{TrainOptions, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Heads,
    Depths,
    EmbedDim,
    MsifModules,
}

impl FromStr for AblationAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "heads" => Ok(AblationAxis::Heads),
            "depths" => Ok(AblationAxis::Depths),
            "embed" | "embed_dim" => Ok(AblationAxis::EmbedDim),
            "msif" | "modules" | "msif_modules" => Ok(AblationAxis::MsifModules),
            _ => Err(HarnessError::Config(format!("unknown ablation axis `{s}` (heads, depths, embed_dim, msif_modules)"))),
        }
    }
}

pub const HEADS: [usize; 4] = [2, 4, 8, 16];
pub const DEPTHS: [[usize; 4]; 3] = [[2, 2, 2, 2], [2, 4, 6, 8], [3, 6, 9, 18]];
pub const EMBED_DIMS: [usize; 4] = [12, 24, 48, 96];
/// Fusion wirings, from the single-scale baseline to the full module:
/// (name, multi-scale, cross-modal attention, gated aggregation).
pub const MSIF_MODULES: [(&str, bool, bool, bool); 6] = [
    ("Baseline", false, false, false),
    ("MSF", true, false, false),
    ("CMA", false, true, false),
    ("GFM", false, false, true),
    ("MSF+CMA", true, true, false),
    ("Full", true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    pub msif: MsifConfig,
}

/// The variants of `axis` around `base`. `values` selects a subset by name
/// (`"8"`, `"2,4,6,8"`, `"MSF+CMA"`); names outside the axis are config
/// errors. The head sweep widens the embedding to the next multiple of 16
/// so that every head count divides it.
pub fn variants(base: &ToolkitConfig, axis: AblationAxis, values: Option<&[String]>) -> Result<Vec<Variant>> {
    let m = &base.model;
    let all: Vec<Variant> = match axis {
        AblationAxis::Heads => {
            let embed = m.embed_dim.div_ceil(16) * 16;
            HEADS
                .iter()
                .map(|&h| Variant {
                    name: h.to_string(),
                    model: ModelConfig { num_heads: h, embed_dim: embed, ..m.clone() },
                    msif: base.msif.clone(),
                })
                .collect()
        }
        AblationAxis::Depths => DEPTHS
            .iter()
            .map(|d| Variant {
                name: d.map(|x| x.to_string()).join(","),
                model: ModelConfig { depths: *d, ..m.clone() },
                msif: base.msif.clone(),
            })
            .collect(),
        AblationAxis::EmbedDim => EMBED_DIMS
            .iter()
            .map(|&e| Variant { name: e.to_string(), model: ModelConfig { embed_dim: e, ..m.clone() }, msif: base.msif.clone() })
            .collect(),
        AblationAxis::MsifModules => MSIF_MODULES
            .iter()
            .map(|&(name, ms, cma, gfm)| Variant {
                name: name.into(),
                model: m.clone(),
                msif: MsifConfig { multi_scale: ms, cross_modal_attention: cma, gated_fusion: gfm, ..base.msif.clone() },
            })
            .collect(),
    };
    let chosen = match values {
        None => all,
        Some(names) => names
            .iter()
            .map(|n| {
                let key = n.replace(' ', "");
                all.iter()
                    .find(|v| v.name.eq_ignore_ascii_case(&key))
                    .cloned()
                    .ok_or_else(|| HarnessError::Config(format!("`{n}` is not a value of the {axis:?} axis")))
            })
            .collect::<Result<_>>()?,
    };
    for v in &chosen {
        v.model.validate()?;
        v.msif.validate()?;
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub dsc: f64,
    pub sensitivity: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {:?} | Params | Steps | Final loss | DSC | Sensitivity | Precision |\n", self.axis);
        s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.variant, r.params, r.steps, r.final_loss, r.dsc, r.sensitivity, r.precision
            );
        }
        s
    }

    /// Writes `ablation_<axis>.csv` and `.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let tag = serde_json::to_value(self.axis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let csv_path = dir.join(format!("ablation_{tag}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::Data(format!("{}: {e}", csv_path.display())))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| HarnessError::Data(format!("{}: {e}", csv_path.display())))?;
        }
        w.flush().map_err(|e| HarnessError::io(&csv_path, e))?;
        let md = dir.join(format!("ablation_{tag}.md"));
        std::fs::write(&md, self.to_markdown()).map_err(|e| HarnessError::io(&md, e))
    }
}

/// Builds, trains for `base.train.max_steps` and scores every variant on
/// the same cases with the same seed.
pub fn ablation_sweep(
    base: &ToolkitConfig,
    axis: AblationAxis,
    values: Option<&[String]>,
    train: &[Case],
    test: &[&Case],
    verbose: bool,
) -> Result<AblationReport> {
    base.train.validate()?;
    let mut rows = Vec::new();
    for v in variants(base, axis, values)? {
        let model = SegmentationModel::new(v.model.clone(), v.msif.clone(), base.train.seed)?;
        let params = param_count(&model);
        if verbose {
            eprintln!("variant {} ({params} parameters)", v.name);
        }
        let mut trainer = Trainer::new(&model, base.train.clone())?;
        let out = trainer.run(train, &[], &TrainOptions { verbose, ..Default::default() })?;
        let settings = EvalSettings { depth: base.train.window_depth, stride: base.train.stride(), threshold: base.train.threshold, fold: 0 };
        let eval = evaluate(&model, test, &settings)?;
        let (dsc, sensitivity, precision) = macro_average(&eval.metrics);
        rows.push(AblationRow {
            variant: v.name,
            params,
            steps: out.state.step,
            final_loss: out.state.history.steps.last().map_or(f64::NAN, |s| s.loss),
            dsc,
            sensitivity,
            precision,
        });
    }
    Ok(AblationReport { axis, rows })
}
