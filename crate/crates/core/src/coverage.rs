//! Per-image kelp cover, expert-vs-estimated regression and group means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::student_t_quantile;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("image {0} has no labelled points")]
    NoLabeledPoints(String),
    #[error("image {image_id}: {predicted} predictions for {truth} labelled points")]
    LengthMismatch { image_id: String, predicted: usize, truth: usize },
    #[error("regression needs at least 3 records, got {0}")]
    InsufficientRecords(usize),
    #[error("expert cover is constant; slope is undefined")]
    DegenerateX,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Kelp indicators for the labelled points of one image, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePredictions {
    pub image_id: String,
    pub site_id: String,
    pub year: i32,
    pub predicted_kelp: Vec<bool>,
    pub truth_kelp: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub image_id: String,
    #[serde(rename = "site")]
    pub site_id: String,
    pub year: i32,
    pub expert_pct: f64,
    pub estimated_pct: f64,
    #[serde(skip)]
    pub n_points: usize,
}

fn pct(flags: &[bool]) -> f64 {
    100.0 * flags.iter().filter(|&&k| k).count() as f64 / flags.len() as f64
}

pub fn estimate_cover(images: &[ImagePredictions]) -> Result<Vec<CoverageRecord>, CoverageError> {
    images
        .iter()
        .map(|img| {
            if img.truth_kelp.is_empty() {
                return Err(CoverageError::NoLabeledPoints(img.image_id.clone()));
            }
            if img.predicted_kelp.len() != img.truth_kelp.len() {
                return Err(CoverageError::LengthMismatch {
                    image_id: img.image_id.clone(),
                    predicted: img.predicted_kelp.len(),
                    truth: img.truth_kelp.len(),
                });
            }
            Ok(CoverageRecord {
                image_id: img.image_id.clone(),
                site_id: img.site_id.clone(),
                year: img.year,
                expert_pct: pct(&img.truth_kelp),
                estimated_pct: pct(&img.predicted_kelp),
                n_points: img.truth_kelp.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub fitted: f64,
    pub half_width: f64,
}

/// OLS fit of estimated (y) on expert (x) cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    pub x_mean: f64,
    pub sxx: f64,
    /// Residual standard error, `sqrt(SS_res / (n − 2))`.
    pub residual_se: f64,
    /// Two-sided 95% critical value of t(n − 2).
    pub t_critical: f64,
    /// Mean-response band at each record's expert cover, in record order.
    pub ci95: Vec<BandPoint>,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// `t · s · sqrt(1/n + (x − x̄)² / Sxx)`.
    pub fn band_half_width(&self, x: f64) -> f64 {
        self.t_critical * self.residual_se * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx).sqrt()
    }
}

pub fn fit_ols(records: &[CoverageRecord]) -> Result<RegressionFit, CoverageError> {
    let n = records.len();
    if n < 3 {
        return Err(CoverageError::InsufficientRecords(n));
    }
    let nf = n as f64;
    let x_mean = records.iter().map(|r| r.expert_pct).sum::<f64>() / nf;
    let y_mean = records.iter().map(|r| r.estimated_pct).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for r in records {
        let dx = r.expert_pct - x_mean;
        let dy = r.estimated_pct - y_mean;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CoverageError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = records
        .iter()
        .map(|r| (r.estimated_pct - intercept - slope * r.expert_pct).powi(2))
        .sum();
    // SS_tot = 0 means y is constant: nothing to explain, R² = 0
    let r_squared = if syy == 0.0 { 0.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    let mut fit = RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
        x_mean,
        sxx,
        residual_se: (ss_res / (nf - 2.0)).sqrt(),
        t_critical: student_t_quantile(0.975, nf - 2.0),
        ci95: Vec::new(),
    };
    fit.ci95 = records
        .iter()
        .map(|r| BandPoint {
            x: r.expert_pct,
            fitted: fit.predict(r.expert_pct),
            half_width: fit.band_half_width(r.expert_pct),
        })
        .collect();
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    Site,
    Year,
    SiteYear,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub site: Option<String>,
    pub year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub key: GroupKey,
    pub images: usize,
    pub expert_mean_pct: f64,
    pub estimated_mean_pct: f64,
}

/// Unweighted mean of per-image percentages, groups in key order.
pub fn aggregate(records: &[CoverageRecord], group_by: GroupBy) -> Vec<GroupMean> {
    let mut groups: BTreeMap<GroupKey, Vec<&CoverageRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::Site => GroupKey {
                site: Some(r.site_id.clone()),
                year: None,
            },
            GroupBy::Year => GroupKey {
                site: None,
                year: Some(r.year),
            },
            GroupBy::SiteYear => GroupKey {
                site: Some(r.site_id.clone()),
                year: Some(r.year),
            },
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, members)| {
            let n = members.len() as f64;
            GroupMean {
                key,
                images: members.len(),
                expert_mean_pct: members.iter().map(|r| r.expert_pct).sum::<f64>() / n,
                estimated_mean_pct: members.iter().map(|r| r.estimated_pct).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_coverage_csv(records: &[CoverageRecord], path: &Path) -> Result<(), CoverageError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fit_json(fit: &RegressionFit, path: &Path) -> Result<(), CoverageError> {
    let mut s = serde_json::to_string_pretty(fit)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Scatter of expert vs estimated cover with the fitted line, the identity
/// line (dashed) and the shaded mean-response band. Axes span 0 to 100%.
pub fn render_scatter_svg(records: &[CoverageRecord], fit: &RegressionFit) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 50.0;
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + plot * x.clamp(0.0, 100.0) / 100.0;
    let sy = |y: f64| SIZE - MARGIN - plot * y.clamp(0.0, 100.0) / 100.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.expert_pct), hi.max(r.expert_pct))
    });
    let xs: Vec<f64> = (0..=50).map(|i| lo + (hi - lo) * i as f64 / 50.0).collect();
    let mut band = String::new();
    for &x in &xs {
        let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(fit.predict(x) + fit.band_half_width(x)));
    }
    for &x in xs.iter().rev() {
        let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(fit.predict(x) - fit.band_half_width(x)));
    }
    let _ = writeln!(s, r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##, band.trim_end());

    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
        sx(0.0),
        sy(0.0),
        sx(100.0),
        sy(100.0)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f77b4" stroke-width="2"/>"##,
        sx(lo),
        sy(fit.predict(lo)),
        sx(hi),
        sy(fit.predict(hi))
    );
    for r in records {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black" fill-opacity="0.6"/>"#,
            sx(r.expert_pct),
            sy(r.estimated_pct)
        );
    }

    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{tick}</text>"#,
            sx(tick),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{tick}</text>"#,
            MARGIN - 6.0,
            sy(tick) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">Expert cover (%)</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.2})">Estimated cover (%)</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let lx = MARGIN + 10.0;
    let ly = MARGIN + 16.0;
    let _ = writeln!(
        s,
        r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="#1f77b4" stroke-width="2"/><text x="{}" y="{}" font-size="11">OLS fit (R² = {:.3})</text>"##,
        lx + 24.0,
        lx + 30.0,
        ly + 4.0,
        fit.r_squared
    );
    let _ = writeln!(
        s,
        r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="6,4"/><text x="{}" y="{}" font-size="11">y = x</text>"#,
        ly + 16.0,
        lx + 24.0,
        ly + 16.0,
        lx + 30.0,
        ly + 20.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{lx}" y="{}" width="24" height="10" fill="#1f77b4" fill-opacity="0.2"/><text x="{}" y="{}" font-size="11">95% CI (mean response)</text>"##,
        ly + 27.0,
        lx + 30.0,
        ly + 36.0
    );
    s.push_str("</svg>\n");
    s
}
