//! Dual coordinate descent for the hinge-loss SVM dual
//!
//! ```text
//! max  Σαᵢ − ½‖Σ αᵢ yᵢ x̃ᵢ‖²   s.t. 0 ≤ αᵢ ≤ Cᵢ,   x̃ᵢ = (xᵢ, 1)
//! ```
//!
//! Each step minimises exactly along one coordinate; variables are visited in
//! a fresh random order every epoch and bound variables whose gradient points
//! outward are shrunk from the active set. Bitwise-identical samples (same
//! vector, label and weight) are merged into one variable with the summed
//! bound and their α is split evenly afterwards.

use std::collections::HashMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassWeighting, LinearModel, SvmError, TrainConfig, TrainingInfo};

/// Per-epoch solver history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Dual objective after each epoch.
    pub dual_objective: Vec<f64>,
    /// Final α for every input sample, in input order.
    pub alphas: Vec<f64>,
    /// Per-sample upper bounds Cᵢ.
    pub upper_bounds: Vec<f64>,
}

pub fn train_binary(x: &[&[f32]], y: &[i8], c: f64, cfg: &TrainConfig) -> Result<LinearModel, SvmError> {
    train_binary_traced(x, y, c, cfg).map(|(m, _)| m)
}

fn check_inputs(x: &[&[f32]], y: &[i8], c: f64) -> Result<usize, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch {
            samples: x.len(),
            labels: y.len(),
        });
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(SvmError::InvalidConfig(format!("C = {c} is not positive")));
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(SvmError::SingleClassInput);
    }
    let dim = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteFeature(i));
        }
    }
    Ok(dim)
}

fn sample_bounds(y: &[i8], c: f64, weighting: ClassWeighting) -> Vec<f64> {
    match weighting {
        ClassWeighting::None => vec![c; y.len()],
        ClassWeighting::InverseFrequency => {
            let n = y.len() as f64;
            let pos = y.iter().filter(|&&v| v == 1).count() as f64;
            let neg = n - pos;
            y.iter()
                .map(|&v| if v == 1 { c * n / (2.0 * pos) } else { c * n / (2.0 * neg) })
                .collect()
        }
    }
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * f64::from(b)).sum()
}

pub fn train_binary_traced(x: &[&[f32]], y: &[i8], c: f64, cfg: &TrainConfig) -> Result<(LinearModel, TrainTrace), SvmError> {
    let dim = check_inputs(x, y, c)?;
    let bounds = sample_bounds(y, c, cfg.class_weighting);

    // merge identical samples
    let mut group_of = Vec::with_capacity(x.len());
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut lookup: HashMap<(Vec<u32>, i8, u64), usize> = HashMap::new();
    for (i, row) in x.iter().enumerate() {
        let key = (row.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y[i], bounds[i].to_bits());
        let g = *lookup.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
        group_of.push(g);
    }
    let l = members.len();
    let rows: Vec<&[f32]> = members.iter().map(|m| x[m[0]]).collect();
    let ys: Vec<f64> = members.iter().map(|m| f64::from(y[m[0]])).collect();
    let upper: Vec<f64> = members.iter().map(|m| m.iter().map(|&i| bounds[i]).sum()).collect();
    let qd: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() + 1.0)
        .collect();

    let mut alpha = vec![0f64; l];
    let mut w = vec![0f64; dim];
    let mut wb = 0f64;
    let mut index: Vec<usize> = (0..l).collect();
    let mut active = l;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;
    let mut trace = TrainTrace::default();
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        index[..active].shuffle(&mut rng);
        let mut pg_max_new = f64::NEG_INFINITY;
        let mut pg_min_new = f64::INFINITY;
        let mut s = 0;
        while s < active {
            let i = index[s];
            let g = ys[i] * (dot(&w, rows[i]) + wb) - 1.0;
            let mut pg = 0.0;
            if alpha[i] == 0.0 {
                if cfg.shrinking && g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if alpha[i] == upper[i] {
                if cfg.shrinking && g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max_new = pg_max_new.max(pg);
            pg_min_new = pg_min_new.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper[i]);
                let d = (alpha[i] - old) * ys[i];
                for (wj, &xj) in w.iter_mut().zip(rows[i]) {
                    *wj += d * f64::from(xj);
                }
                wb += d;
            }
            s += 1;
        }
        iterations += 1;
        trace
            .dual_objective
            .push(alpha.iter().sum::<f64>() - 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + wb * wb));

        gap = if active == 0 { 0.0 } else { pg_max_new - pg_min_new };
        if gap <= cfg.tolerance {
            if active == l {
                converged = true;
                break;
            }
            // re-check the shrunk variables before stopping
            active = l;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
        pg_min_old = if pg_min_new >= 0.0 { f64::NEG_INFINITY } else { pg_min_new };
    }
    if !converged {
        warn!("dual coordinate descent stopped at {iterations} epochs with gap {gap:.3e}");
    }

    trace.alphas = group_of.iter().map(|&g| alpha[g] / members[g].len() as f64).collect();
    trace.upper_bounds = bounds;
    let positives = y.iter().filter(|&&v| v == 1).count();
    let model = LinearModel {
        positive_label: "+1".into(),
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: wb,
        c_value: c,
        dim,
        backend_id: String::new(),
        created_at: String::new(),
        training: TrainingInfo {
            iterations,
            max_violation: gap,
            converged,
            support_vectors: trace.alphas.iter().filter(|&&a| a > 0.0).count(),
            low_support: positives < 2,
        },
    };
    Ok((model, trace))
}
