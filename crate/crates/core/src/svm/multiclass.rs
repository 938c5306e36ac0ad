use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{decision_value, train_binary, LinearModel, SvmError, TrainConfig};

/// One binary model per class present in `y`, ordered by class code.
pub fn train_one_vs_all<S: AsRef<str> + Sync>(x: &[&[f32]], y: &[S], c: f64, cfg: &TrainConfig) -> Result<Vec<LinearModel>, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch {
            samples: x.len(),
            labels: y.len(),
        });
    }
    let classes: BTreeSet<&str> = y.iter().map(AsRef::as_ref).collect();
    if classes.len() < 2 {
        return Err(SvmError::SingleClassInput);
    }
    classes
        .into_par_iter()
        .map(|class| {
            let signs: Vec<i8> = y.iter().map(|l| if l.as_ref() == class { 1 } else { -1 }).collect();
            train_binary(x, &signs, c, cfg).map(|m| m.with_label(class))
        })
        .collect()
}

/// Argmax of decision values; equal values go to the lexicographically
/// smallest label.
pub fn predict_multiclass<'m>(models: &'m [LinearModel], x: &[f32]) -> Result<&'m str, SvmError> {
    let mut best: Option<(f64, &str)> = None;
    for m in models {
        let v = decision_value(m, x)?;
        let better = match best {
            None => true,
            Some((bv, bl)) => match v.total_cmp(&bv) {
                Ordering::Greater => true,
                Ordering::Equal => m.positive_label.as_str() < bl,
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((v, &m.positive_label));
        }
    }
    best.map(|(_, l)| l).ok_or(SvmError::EmptyModelList)
}
