//! Total metabolic tumour volume and agreement between computed and
//! reference volumes.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::Volume3D;

/// Positive-voxel count times voxel volume, in millilitres.
pub fn tmtv(mask: &Volume3D) -> Result<f64> {
    let mut count = 0u64;
    for &v in mask.data() {
        if v == 1.0 {
            count += 1;
        } else if v != 0.0 {
            return Err(CoreError::Metric(format!("TMTV needs a binary mask, found value {v}")));
        }
    }
    Ok(count as f64 * mask.voxel_volume_mm3() / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmtvRecord {
    pub patient_id: String,
    pub fold: usize,
    #[serde(rename = "cTMTV_mL")]
    pub ctmtv_ml: f64,
    #[serde(rename = "gTMTV_mL")]
    pub gtmtv_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub pearson_r: f64,
    pub mean_diff: f64,
    /// Sample standard deviation (n - 1) of `cTMTV - gTMTV`.
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Least squares of cTMTV on gTMTV with intercept, Pearson correlation, and
/// Bland-Altman limits `mean ± 1.96 SD` of the differences.
pub fn fit_agreement(records: &[TmtvRecord]) -> Result<AgreementReport> {
    let n = records.len();
    if n < 3 {
        return Err(CoreError::Statistics(format!("agreement needs at least 3 records, got {n}")));
    }
    let nf = n as f64;
    let g: Vec<f64> = records.iter().map(|r| r.gtmtv_ml).collect();
    let c: Vec<f64> = records.iter().map(|r| r.ctmtv_ml).collect();
    if g.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(CoreError::Statistics("TMTV values must be finite".into()));
    }
    let mg = g.iter().sum::<f64>() / nf;
    let mc = c.iter().sum::<f64>() / nf;
    let mut sgg = 0.0;
    let mut scc = 0.0;
    let mut sgc = 0.0;
    for (gi, ci) in g.iter().zip(&c) {
        sgg += (gi - mg) * (gi - mg);
        scc += (ci - mc) * (ci - mc);
        sgc += (gi - mg) * (ci - mc);
    }
    if sgg == 0.0 {
        return Err(CoreError::Statistics("gTMTV has zero variance; regression slope is undefined".into()));
    }
    if scc == 0.0 {
        return Err(CoreError::Statistics("cTMTV has zero variance; correlation is undefined".into()));
    }
    let slope = sgc / sgg;
    let intercept = mc - slope * mg;
    let ss_res: f64 = g.iter().zip(&c).map(|(gi, ci)| (ci - intercept - slope * gi).powi(2)).sum();
    let r_squared = (1.0 - ss_res / scc).clamp(0.0, 1.0);
    let pearson_r = (sgc / (sgg.sqrt() * scc.sqrt())).clamp(-1.0, 1.0);
    let diffs: Vec<f64> = g.iter().zip(&c).map(|(gi, ci)| ci - gi).collect();
    let mean_diff = diffs.iter().sum::<f64>() / nf;
    let sd_diff = (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    Ok(AgreementReport {
        n,
        slope,
        intercept,
        r_squared,
        pearson_r,
        mean_diff,
        sd_diff,
        loa_low: mean_diff - 1.96 * sd_diff,
        loa_high: mean_diff + 1.96 * sd_diff,
    })
}

pub fn read_records_csv(path: &Path) -> Result<Vec<TmtvRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CoreError::from)).collect()
}

pub fn write_records_csv(records: &[TmtvRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

fn plot_err<E: std::fmt::Debug>(e: E) -> CoreError {
    CoreError::Plot(format!("{e:?}"))
}

fn padded_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-6);
    (lo - 0.08 * span)..(hi + 0.08 * span)
}

/// Writes `<tag>_regression.svg`, `<tag>_bland_altman.svg` and
/// `<tag>_agreement.json` into `out_dir`; returns the three paths.
pub fn emit_agreement_plots(
    report: &AgreementReport,
    records: &[TmtvRecord],
    out_dir: &Path,
    tag: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let reg_path = out_dir.join(format!("{tag}_regression.svg"));
    let ba_path = out_dir.join(format!("{tag}_bland_altman.svg"));
    let json_path = out_dir.join(format!("{tag}_agreement.json"));

    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.gtmtv_ml, r.ctmtv_ml)).collect();
    let lo = pts.iter().flat_map(|p| [p.0, p.1]).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().flat_map(|p| [p.0, p.1]).fold(f64::NEG_INFINITY, f64::max);
    let range = padded_range(lo.min(0.0), hi);
    {
        let root = SVGBackend::new(&reg_path, (640, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(
                format!("cTMTV vs gTMTV ({tag}): y = {:.3}x + {:.2}, R² = {:.3}", report.slope, report.intercept, report.r_squared),
                ("sans-serif", 16),
            )
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(range.clone(), range.clone())
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("gTMTV (mL)").y_desc("cTMTV (mL)").draw().map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new([(range.start, range.start), (range.end, range.end)], &RGBColor(170, 170, 170)))
            .map_err(plot_err)?;
        let fit = |x: f64| report.intercept + report.slope * x;
        chart
            .draw_series(LineSeries::new([(range.start, fit(range.start)), (range.end, fit(range.end))], &RED))
            .map_err(plot_err)?;
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    {
        let ba: Vec<(f64, f64)> = pts.iter().map(|(g, c)| ((g + c) / 2.0, c - g)).collect();
        let xlo = ba.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let xhi = ba.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let ylo = ba.iter().map(|p| p.1).fold(report.loa_low, f64::min);
        let yhi = ba.iter().map(|p| p.1).fold(report.loa_high, f64::max);
        let xr = padded_range(xlo, xhi);
        let yr = padded_range(ylo.min(-1e-3), yhi.max(1e-3));
        let root = SVGBackend::new(&ba_path, (640, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(
                format!("Bland-Altman ({tag}): mean {:.2}, LoA [{:.2}, {:.2}] mL", report.mean_diff, report.loa_low, report.loa_high),
                ("sans-serif", 16),
            )
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(xr.clone(), yr)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("mean of cTMTV and gTMTV (mL)")
            .y_desc("cTMTV - gTMTV (mL)")
            .draw()
            .map_err(plot_err)?;
        for (y, color) in [(report.mean_diff, RED), (report.loa_low, BLACK), (report.loa_high, BLACK)] {
            chart.draw_series(LineSeries::new([(xr.start, y), (xr.end, y)], &color)).map_err(plot_err)?;
        }
        chart.draw_series(ba.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, json).map_err(|e| CoreError::io(&json_path, e))?;
    Ok(vec![reg_path, ba_path, json_path])
}
