//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numerical code; each oracle is the
//! slowest obvious way to compute the same quantity.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num::{BigInt, BigRational, ToPrimitive, Zero};
use rand::{Rng, RngExt};

use benthoscan::coverage::ImagePredictions;
use benthoscan::taxonomy::NodeSpec;

// ---------------------------------------------------------------------------
// Hard-margin SVM by active-set enumeration of the dual.
// ---------------------------------------------------------------------------

/// Separator `w·x + b` for the problem the solver optimises: bias carried as
/// a constant-1 feature, so the regulariser is `|w|² + b²`.
#[derive(Debug, Clone, Copy)]
pub struct Separator {
    pub w: [f64; 2],
    pub b: f64,
}

impl Separator {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.w[0] * x[0] + self.w[1] * x[1] + self.b
    }
}

fn solve3(a: [[f64; 3]; 3], rhs: [f64; 3], n: usize) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..n {
        m[i][..n].copy_from_slice(&a[i][..n]);
        m[i][3] = rhs[i];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for i in 0..n {
        out[i] = m[i][3] / m[i][i];
    }
    Some(out)
}

/// Enumerates every support set of size 1 to 3, solves its KKT system
/// `Σⱼ αⱼ yᵢyⱼ zᵢ·zⱼ = 1` and keeps the feasible one of smallest norm.
pub fn hard_margin_oracle(x: &[[f64; 2]], y: &[i8]) -> Separator {
    let z: Vec<[f64; 3]> = x
        .iter()
        .zip(y)
        .map(|(p, &s)| {
            let s = f64::from(s);
            [s * p[0], s * p[1], s]
        })
        .collect();
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let n = z.len();
    let mut best: Option<([f64; 3], f64)> = None;
    let mut consider = |set: &[usize]| {
        let k = set.len();
        let mut g = [[0.0; 3]; 3];
        for (i, &a) in set.iter().enumerate() {
            for (j, &b) in set.iter().enumerate() {
                g[i][j] = dot(&z[a], &z[b]);
            }
        }
        let Some(alpha) = solve3(g, [1.0; 3], k) else { return };
        if alpha[..k].iter().any(|&a| a < -1e-12) {
            return;
        }
        let mut w = [0.0; 3];
        for (i, &a) in set.iter().enumerate() {
            for d in 0..3 {
                w[d] += alpha[i] * z[a][d];
            }
        }
        if z.iter().any(|zi| dot(&w, zi) < 1.0 - 1e-9) {
            return;
        }
        let norm = dot(&w, &w);
        if best.is_none_or(|(_, b)| norm < b) {
            best = Some((w, norm));
        }
    };
    for a in 0..n {
        consider(&[a]);
        for b in a + 1..n {
            consider(&[a, b]);
            for c in b + 1..n {
                consider(&[a, b, c]);
            }
        }
    }
    let (w, _) = best.expect("separable instance has a feasible support set");
    Separator { w: [w[0], w[1]], b: w[2] }
}

/// Random 2-D instance separable with functional margin at least `gap`
/// around a random line, both classes present.
pub fn separable_instance<R: Rng>(rng: &mut R, n: usize, gap: f64) -> (Vec<[f64; 2]>, Vec<i8>) {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let normal = [theta.cos(), theta.sin()];
    let offset: f64 = rng.random_range(-0.5..0.5);
    loop {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        while x.len() < n {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let s = normal[0] * p[0] + normal[1] * p[1] + offset;
            if s.abs() < gap {
                continue;
            }
            x.push(p);
            y.push(if s > 0.0 { 1 } else { -1 });
        }
        if y.contains(&1) && y.contains(&-1) {
            return (x, y);
        }
    }
}

// ---------------------------------------------------------------------------
// Taxonomy set algebra from node-id prefixes.
// ---------------------------------------------------------------------------

/// Flat view of a taxonomy: node id → code.
pub fn flatten(spec: &NodeSpec) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![spec];
    while let Some(n) = stack.pop() {
        out.insert(n.node_id.clone(), n.code.clone());
        stack.extend(n.children.iter());
    }
    out
}

fn under(node: &str, candidate: &str) -> bool {
    candidate == node || candidate.strip_prefix(node).is_some_and(|r| r.starts_with('.'))
}

/// Codes whose node id equals `node` or extends it.
pub fn prefix_descendants(flat: &BTreeMap<String, String>, node: &str) -> BTreeSet<String> {
    flat.iter()
        .filter(|(id, code)| !code.is_empty() && under(node, id))
        .map(|(_, c)| c.clone())
        .collect()
}

pub fn parent_id(node: &str) -> Option<&str> {
    node.rfind('.').map(|i| &node[..i])
}

/// Positive and negative sample indices by direct filtering.
pub fn policy_sets(
    flat: &BTreeMap<String, String>,
    codes: &[String],
    node: &str,
    sibling: bool,
) -> (Vec<usize>, Vec<usize>) {
    let pos = prefix_descendants(flat, node);
    let all: BTreeSet<String> = flat.values().filter(|c| !c.is_empty()).cloned().collect();
    let neg: BTreeSet<String> = if sibling {
        let parent = parent_id(node).expect("target is not the root");
        prefix_descendants(flat, parent).difference(&pos).cloned().collect()
    } else {
        all.difference(&pos).cloned().collect()
    };
    let p = (0..codes.len()).filter(|&i| pos.contains(&codes[i])).collect();
    let n = (0..codes.len()).filter(|&i| neg.contains(&codes[i])).collect();
    (p, n)
}

/// Random tree with `nodes` nodes; every node carries a unique code except
/// some internal grouping nodes.
pub fn random_taxonomy<R: Rng>(rng: &mut R, nodes: usize) -> NodeSpec {
    let mut ids = vec!["1".to_string()];
    let mut child_count: HashMap<String, usize> = HashMap::new();
    while ids.len() < nodes {
        let parent = ids[rng.random_range(0..ids.len())].clone();
        let k = child_count.entry(parent.clone()).or_insert(0);
        *k += 1;
        ids.push(format!("{parent}.{k}"));
    }
    let has_children: BTreeSet<String> = ids.iter().filter_map(|i| parent_id(i).map(str::to_string)).collect();
    let code_of = |id: &str, rng: &mut R| {
        if has_children.contains(id) && rng.random_bool(0.3) {
            String::new()
        } else {
            format!("C{}", id.replace('.', "_"))
        }
    };
    let codes: HashMap<String, String> = ids.iter().map(|i| (i.clone(), code_of(i, rng))).collect();
    fn build(id: &str, ids: &[String], codes: &HashMap<String, String>) -> NodeSpec {
        let children = ids
            .iter()
            .filter(|c| parent_id(c) == Some(id))
            .map(|c| build(c, ids, codes))
            .collect();
        NodeSpec::new(id, codes[id].clone(), id).with_children(children)
    }
    build("1", &ids, &codes)
}

// ---------------------------------------------------------------------------
// Confusion matrix by hash counting.
// ---------------------------------------------------------------------------

pub struct OracleClass {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub struct OracleReport {
    pub accuracy: f64,
    pub mean_f1: f64,
    pub present: usize,
    pub per_class: BTreeMap<String, OracleClass>,
}

pub fn confusion_oracle(pred: &[String], truth: &[String], classes: &[String]) -> OracleReport {
    let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
    for (p, t) in pred.iter().zip(truth) {
        *pairs.entry((t.as_str(), p.as_str())).or_default() += 1;
    }
    let mut all: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
    all.extend(pred.iter().map(String::as_str));
    all.extend(truth.iter().map(String::as_str));
    let n = pred.len() as u64;
    let mut per_class = BTreeMap::new();
    let (mut f1_sum, mut present, mut correct) = (0.0, 0usize, 0u64);
    for &c in &all {
        let tp = pairs.get(&(c, c)).copied().unwrap_or(0);
        let fp: u64 = pairs.iter().filter(|((t, p), _)| *p == c && *t != c).map(|(_, v)| v).sum();
        let fn_: u64 = pairs.iter().filter(|((t, p), _)| *t == c && *p != c).map(|(_, v)| v).sum();
        let tn = n - tp - fp - fn_;
        correct += tp;
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if tp + fn_ > 0 {
            f1_sum += f1;
            present += 1;
        }
        per_class.insert(c.to_string(), OracleClass { tp, fp, fn_, tn, precision, recall, f1 });
    }
    OracleReport {
        accuracy: correct as f64 / n as f64,
        mean_f1: f1_sum / present as f64,
        present,
        per_class,
    }
}

// ---------------------------------------------------------------------------
// Student t by numerical integration of the density.
// ---------------------------------------------------------------------------

/// `Γ((ν+1)/2) / (√(νπ) Γ(ν/2))` for integer ν, from the half-integer
/// recurrences rather than any gamma approximation.
fn t_density_constant(df: u32) -> f64 {
    let pi = std::f64::consts::PI;
    let nu = f64::from(df);
    // ratio r(ν) = Γ((ν+1)/2) / Γ(ν/2); r(1) = 1/√π, r(2) = √π/2, r(ν+2) = r(ν)·(ν+1)/ν
    let mut r = if df % 2 == 1 { 1.0 / pi.sqrt() } else { pi.sqrt() / 2.0 };
    let mut k = if df % 2 == 1 { 1 } else { 2 };
    while k < df {
        r *= f64::from(k + 1) / f64::from(k);
        k += 2;
    }
    r / (nu * pi).sqrt()
}

/// Two-tailed p-value `P(|T| ≥ |t|)` by composite Simpson on `[0, |t|]`
/// after the substitution `x = tan θ` for large arguments.
pub fn t_two_tailed_oracle(t: f64, df: u32) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let nu = f64::from(df);
    let c = t_density_constant(df);
    // integrate f(tan θ) sec²θ over θ ∈ [0, atan|t|]; smooth and bounded
    let g = |theta: f64| {
        let x = theta.tan();
        let sec2 = 1.0 + x * x;
        c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0) * sec2
    };
    let upper = t.abs().atan();
    let n = 200_000;
    let h = upper / n as f64;
    let mut sum = g(0.0) + g(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * g(i as f64 * h);
    }
    let half = sum * h / 3.0;
    (1.0 - 2.0 * half).max(0.0)
}

/// Sample mean, standard deviation (n − 1) and t statistic.
pub fn t_statistic_oracle(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    (mean, mean / (sd / n.sqrt()))
}

// ---------------------------------------------------------------------------
// Ordinary least squares in exact rational arithmetic.
// ---------------------------------------------------------------------------

pub struct ExactFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

pub fn ols_oracle(x: &[f64], y: &[f64]) -> ExactFit {
    let n = BigRational::from_integer(BigInt::from(x.len()));
    let xs: Vec<BigRational> = x.iter().map(|&v| rat(v)).collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| rat(v)).collect();
    let sx: BigRational = xs.iter().cloned().sum();
    let sy: BigRational = ys.iter().cloned().sum();
    let sxx: BigRational = xs.iter().map(|v| v * v).sum();
    let sxy: BigRational = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let syy: BigRational = ys.iter().map(|v| v * v).sum();
    // normal equations: [n sx; sx sxx] [b; m] = [sy; sxy]
    let det = &n * &sxx - &sx * &sx;
    let slope = (&n * &sxy - &sx * &sy) / &det;
    let intercept = (&sy - &slope * &sx) / &n;
    let ss_tot = &syy - &sy * &sy / &n;
    let ss_res: BigRational = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| {
            let r = b - (&slope * a + &intercept);
            &r * &r
        })
        .sum();
    let r_squared = if ss_tot.is_zero() {
        0.0
    } else {
        (BigRational::from_integer(1.into()) - ss_res / ss_tot).to_f64().unwrap()
    };
    ExactFit {
        slope: slope.to_f64().unwrap(),
        intercept: intercept.to_f64().unwrap(),
        r_squared,
    }
}

// ---------------------------------------------------------------------------
// Pooling and stretch.
// ---------------------------------------------------------------------------

/// Channel-wise max over a row-major `7×7×C` (HWC) buffer.
pub fn triple_loop_max(values: &[f32], side: usize, channels: usize) -> Vec<f32> {
    let mut out = vec![f32::NEG_INFINITY; channels];
    for row in 0..side {
        for col in 0..side {
            for c in 0..channels {
                let v = values[(row * side + col) * channels + c];
                if v > out[c] {
                    out[c] = v;
                }
            }
        }
    }
    out
}

/// Stretch of one channel by a full sort; `None` when degenerate.
pub fn stretch_oracle(values: &[f32]) -> Option<Vec<f32>> {
    let mut sorted: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * 0.01).floor() as usize).max(1);
    let lo = sorted[..k].iter().sum::<f64>() / k as f64;
    let hi = sorted[n - k..].iter().map(|v| (v - lo).max(0.0)).sum::<f64>() / k as f64;
    if hi < 1e-9 {
        return None;
    }
    Some(
        values
            .iter()
            .map(|&v| (((f64::from(v) - lo).max(0.0)) / hi).min(1.0) as f32)
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Site cover table fixture.
// ---------------------------------------------------------------------------

/// Five sites at 50 points per image with the expert kelp totals that give
/// the published site means; site 4 also carries its estimated total.
pub const SITE_COVER_ROWS: [(&str, usize, usize, usize); 5] = [
    // (site, images, expert kelp points, estimated kelp points)
    ("1", 40, 1053, 1204),
    ("2", 25, 808, 890),
    ("3", 50, 1561, 1808),
    ("4", 100, 2462, 2489),
    ("5", 10, 223, 216),
];

pub fn spread(total: usize, images: usize, i: usize) -> usize {
    total / images + usize::from(i < total % images)
}

pub fn site_cover_images() -> Vec<ImagePredictions> {
    let mut out = Vec::new();
    for (site, images, expert, estimated) in SITE_COVER_ROWS {
        for i in 0..images {
            let (e, s) = (spread(expert, images, i), spread(estimated, images, (i + 7) % images));
            out.push(ImagePredictions {
                image_id: format!("s{site}-{i:03}"),
                site_id: site.to_string(),
                year: 2013,
                predicted_kelp: (0..50).map(|p| p < s).collect(),
                truth_kelp: (0..50).map(|p| p < e).collect(),
            });
        }
    }
    out
}
