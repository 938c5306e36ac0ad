//! Module behaviour checked against independent reference computations.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use benthoscan::coverage::{aggregate, fit_ols, CoverageRecord, GroupBy};
use benthoscan::hierclass::{self, assemble_training_set, Policy, Strategy, TrainOptions, TrainedClassifier};
use benthoscan::ingest::{summarize, PointLabel};
use benthoscan::preprocess::{extract_patch, RgbImage};
use benthoscan::svm::{
    cross_validate_binary, decision_value, predict_multiclass, stratified_folds, train_binary, train_one_vs_all,
    LinearModel, TrainConfig, TrainingInfo,
};
use benthoscan::synth;
use benthoscan::taxonomy::{NodeSpec, TaxonomyTree};
use benthoscan::PATCH_SIZE;

use common::*;

fn rows(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(Vec::as_slice).collect()
}

#[test]
fn synthetic_histogram_matches_single_pass_counter() {
    let d = synth::generate(synth::DEFAULT_IMAGES, synth::DEFAULT_SEED);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in &d.labels {
        *counts.entry(l.class_code.clone()).or_default() += 1;
    }
    let s = summarize(&d.labels);
    assert_eq!(s.class_counts, counts);
    assert_eq!(s.point_count, 140);
    assert_eq!(s.image_count, 20);
}

fn dfs_codes(spec: &NodeSpec, target: &str) -> Option<BTreeSet<String>> {
    if spec.node_id == target {
        let mut out = BTreeSet::new();
        let mut stack = vec![spec];
        while let Some(n) = stack.pop() {
            if !n.code.is_empty() {
                out.insert(n.code.clone());
            }
            stack.extend(&n.children);
        }
        return Some(out);
    }
    spec.children.iter().find_map(|c| dfs_codes(c, target))
}

#[test]
fn descendants_match_dfs_and_prefix_oracles_on_50_node_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..20 {
        let spec = random_taxonomy(&mut rng, 50);
        let tree = TaxonomyTree::from_spec(&spec).unwrap();
        assert_eq!(tree.len(), 50);
        let flat = flatten(&spec);
        for id in flat.keys() {
            let got = tree.descendants(id).unwrap();
            assert_eq!(Some(&got), dfs_codes(&spec, id).as_ref(), "node {id}");
            assert_eq!(got, prefix_descendants(&flat, id));
            if let Some(parent) = parent_id(id) {
                let expected: BTreeSet<String> =
                    prefix_descendants(&flat, parent).difference(&got).cloned().collect();
                assert_eq!(tree.siblings_under(id).unwrap(), expected, "siblings of {id}");
            }
        }
    }
}

#[test]
fn interior_patches_match_naive_copier() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, h) = (300, 260);
    let planes: [Vec<f32>; 3] = std::array::from_fn(|_| (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect());
    let img = RgbImage::from_planes(w, h, planes.clone()).unwrap();
    for _ in 0..10 {
        let (x, y) = (rng.random_range(112..w - 112), rng.random_range(112..h - 112));
        let point = PointLabel {
            image_id: "r".into(),
            x_px: x as u32,
            y_px: y as u32,
            class_code: "MAECK".into(),
        };
        let patch = extract_patch(&img, &point).unwrap();
        let mut naive = Vec::new();
        for plane in &planes {
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    naive.push(plane[(y - 112 + r) * w + (x - 112 + c)]);
                }
            }
        }
        assert_eq!(patch.pixels(), naive.as_slice());
    }
}

#[test]
fn twenty_point_separable_set_matches_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (pts, y) = separable_instance(&mut rng, 20, 0.2);
    let data: Vec<Vec<f32>> = pts.iter().map(|p| vec![p[0] as f32, p[1] as f32]).collect();
    let exact: Vec<[f64; 2]> = data.iter().map(|r| [f64::from(r[0]), f64::from(r[1])]).collect();
    let cfg = TrainConfig {
        tolerance: 1e-10,
        max_iterations: 100_000,
        ..TrainConfig::default()
    };
    let model = train_binary(&rows(&data), &y, 1e4, &cfg).unwrap();
    let oracle = hard_margin_oracle(&exact, &y);
    let norm = (oracle.w[0].powi(2) + oracle.w[1].powi(2) + oracle.b.powi(2)).sqrt();
    let diff = ((f64::from(model.weights[0]) - oracle.w[0]).powi(2)
        + (f64::from(model.weights[1]) - oracle.w[1]).powi(2)
        + (model.bias - oracle.b).powi(2))
    .sqrt();
    assert!(diff / norm < 1e-3, "relative distance {}", diff / norm);
    for (r, &s) in data.iter().zip(&y) {
        assert!(f64::from(s) * decision_value(&model, r).unwrap() >= 1.0 - 1e-6);
    }
}

fn random_model(rng: &mut ChaCha8Rng, dim: usize, label: &str) -> LinearModel {
    LinearModel {
        positive_label: label.into(),
        weights: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: rng.random_range(-1.0..1.0),
        c_value: 1.0,
        dim,
        backend_id: "test".into(),
        created_at: String::new(),
        training: TrainingInfo::default(),
    }
}

fn naive_dot(m: &LinearModel, x: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += f64::from(m.weights[i]) * f64::from(x[i]);
    }
    s + m.bias
}

#[test]
fn decision_values_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let dim = rng.random_range(1..64);
        let m = random_model(&mut rng, dim, "A");
        let x: Vec<f32> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = decision_value(&m, &x).unwrap();
        let want = naive_dot(&m, &x);
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn multiclass_argmax_matches_max_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let k = rng.random_range(1..8);
        let models: Vec<LinearModel> = (0..k).map(|i| random_model(&mut rng, 5, &format!("c{i}"))).collect();
        let x: Vec<f32> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut best = (f64::NEG_INFINITY, String::new());
        for m in &models {
            let v = naive_dot(m, &x);
            if v > best.0 {
                best = (v, m.positive_label.clone());
            }
        }
        assert_eq!(predict_multiclass(&models, &x).unwrap(), best.1);
    }
}

#[test]
fn one_vs_all_agrees_with_nearest_centroid_on_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centres = [[6.0f32, 0.0], [-3.0, 5.2], [-3.0, -5.2]];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..15 {
            data.push(vec![c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]);
            labels.push(format!("K{k}"));
        }
    }
    let models = train_one_vs_all(&rows(&data), &labels, 10.0, &TrainConfig::default()).unwrap();
    assert_eq!(models.len(), 3);
    for _ in 0..300 {
        let k = rng.random_range(0..3);
        let p = [centres[k][0] + rng.random_range(-1.0..1.0), centres[k][1] + rng.random_range(-1.0..1.0)];
        let nearest = (0..3)
            .min_by(|&a, &b| {
                let d = |i: usize| (p[0] - centres[i][0]).powi(2) + (p[1] - centres[i][1]).powi(2);
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(predict_multiclass(&models, &p).unwrap(), format!("K{nearest}"));
    }
}

/// Signal in the first coordinate, flipped labels and many nuisance
/// coordinates that a large C uses to fit the flips.
fn noisy_binary(rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<i8>) {
    let mut data = Vec::new();
    let mut y = Vec::new();
    for i in 0..60 {
        let s: i8 = if i % 2 == 0 { 1 } else { -1 };
        let mut row = vec![f32::from(s) * 1.0 + rng.random_range(-0.6..0.6)];
        row.extend((0..40).map(|_| rng.random_range(-1.0..1.0f32)));
        data.push(row);
        y.push(if rng.random_bool(0.2) { -s } else { s });
    }
    (data, y)
}

#[test]
fn cv_choice_matches_fold_by_fold_retraining() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (data, y) = noisy_binary(&mut rng);
    let x = rows(&data);
    let cfg = TrainConfig {
        c_grid: vec![0.01, 100.0],
        folds: 3,
        ..TrainConfig::default()
    };
    let report = cross_validate_binary(&x, &y, &cfg).unwrap();

    let names: Vec<&str> = y.iter().map(|&v| if v == 1 { "+1" } else { "-1" }).collect();
    let folds = stratified_folds(&names, 3, cfg.seed).unwrap();
    let mut means = Vec::new();
    for &c in &cfg.c_grid {
        let mut total = 0.0;
        for f in 0..3 {
            let tr: Vec<usize> = (0..x.len()).filter(|&i| folds[i] != f).collect();
            let te: Vec<usize> = (0..x.len()).filter(|&i| folds[i] == f).collect();
            let tx: Vec<&[f32]> = tr.iter().map(|&i| x[i]).collect();
            let ty: Vec<i8> = tr.iter().map(|&i| y[i]).collect();
            let m = train_binary(&tx, &ty, c, &cfg).unwrap();
            let pred: Vec<String> = te
                .iter()
                .map(|&i| if naive_dot(&m, x[i]) >= 0.0 { "+1" } else { "-1" }.to_string())
                .collect();
            let truth: Vec<String> = te.iter().map(|&i| names[i].to_string()).collect();
            total += confusion_oracle(&pred, &truth, &[]).mean_f1;
        }
        means.push(total / 3.0);
    }
    let best = if means[1] > means[0] { cfg.c_grid[1] } else { cfg.c_grid[0] };
    assert_eq!(report.best_c, best);
    for (s, m) in report.scores.iter().zip(&means) {
        assert!((s.mean - m).abs() < 1e-12);
    }
    assert_eq!(report.best_c, 0.01, "large C should overfit the flipped labels: {means:?}");
}

/// The kelp skeleton with one code per leaf and a non-macroalgae branch.
fn kelp_tree() -> TaxonomyTree {
    let spec = NodeSpec::new("1", "", "biota").with_children(vec![
        NodeSpec::new("1.1", "", "macroalgae").with_children(vec![
            NodeSpec::new("1.1.1", "MAECK", "kelp"),
            NodeSpec::new("1.1.2", "MACAU", "other macroalgae"),
        ]),
        NodeSpec::new("1.2", "SUS", "non-macroalgae"),
        NodeSpec::new("1.3", "CSBL", "coral"),
    ]);
    TaxonomyTree::from_spec(&spec).unwrap()
}

#[test]
fn four_class_policy_sets_match_label_filter() {
    let tree = kelp_tree();
    let codes = ["MAECK", "SUS", "MACAU", "CSBL", "MAECK", "MACAU", "SUS", "CSBL"];
    for (policy, negative_codes) in [(Policy::Inclusive, &["MACAU", "SUS", "CSBL"][..]), (Policy::Sibling, &["MACAU"][..])] {
        let set = assemble_training_set(&tree, &codes, "1.1.1", policy).unwrap();
        let pos: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == "MAECK").collect();
        let neg: Vec<usize> = (0..codes.len()).filter(|&i| negative_codes.contains(&codes[i])).collect();
        assert_eq!(set.positives, pos);
        assert_eq!(set.negatives, neg, "{policy}");
    }
}

fn cluster_data(rng: &mut ChaCha8Rng, per_class: usize) -> (Vec<Vec<f32>>, Vec<&'static str>) {
    let centres = [("MAECK", [4.0f32, 0.0]), ("MACAU", [-4.0, 0.0]), ("SUS", [0.0, 4.0]), ("CSBL", [0.0, -4.0])];
    let mut data = Vec::new();
    let mut codes = Vec::new();
    for (code, c) in centres {
        for _ in 0..per_class {
            data.push(vec![c[0] + rng.random_range(-0.8..0.8), c[1] + rng.random_range(-0.8..0.8)]);
            codes.push(code);
        }
    }
    (data, codes)
}

#[test]
fn sibling_classifier_has_full_held_out_recall_on_separable_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tree = kelp_tree();
    let (train_x, train_codes) = cluster_data(&mut rng, 20);
    let (test_x, test_codes) = cluster_data(&mut rng, 30);
    let strategy = Strategy::LocalBinary {
        policy: Policy::Sibling,
        target_node_id: "1.1.1".into(),
    };
    let clf = hierclass::train(&strategy, &tree, &rows(&train_x), &train_codes, &TrainConfig::default(), &TrainOptions::default())
        .unwrap();
    let kelp: Vec<usize> = (0..test_codes.len()).filter(|&i| test_codes[i] == "MAECK").collect();
    let hits = kelp.iter().filter(|&&i| clf.predict(&test_x[i]).unwrap() == "MAECK").count();
    assert_eq!(hits, kelp.len());
}

#[test]
fn local_binary_predictions_are_the_sign_of_the_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let tree = kelp_tree();
    let (x, codes) = cluster_data(&mut rng, 10);
    let strategy = Strategy::LocalBinary {
        policy: Policy::Inclusive,
        target_node_id: "1.1.1".into(),
    };
    let clf = hierclass::train(&strategy, &tree, &rows(&x), &codes, &TrainConfig::default(), &TrainOptions::default()).unwrap();
    let TrainedClassifier::LocalBinary { target, .. } = &clf else {
        panic!("expected a local binary classifier");
    };
    for _ in 0..1000 {
        let v = [rng.random_range(-6.0..6.0f32), rng.random_range(-6.0..6.0f32)];
        let expected = if naive_dot(&target.model, &v) >= 0.0 { "MAECK" } else { "not-MAECK" };
        assert_eq!(clf.predict(&v).unwrap(), expected);
    }
}

fn record(id: usize, site: &str, expert: f64, estimated: f64) -> CoverageRecord {
    CoverageRecord {
        image_id: format!("i{id}"),
        site_id: site.into(),
        year: 2013,
        expert_pct: expert,
        estimated_pct: estimated,
        n_points: 50,
    }
}

#[test]
fn ols_matches_exact_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let recs: Vec<CoverageRecord> = (0..20)
            .map(|i| {
                let e = f64::from(rng.random_range(0..=50u32)) * 2.0;
                let s = (0.8 * e + rng.random_range(-15.0..15.0f64) + 5.0).clamp(0.0, 100.0);
                record(i, "A", e, s)
            })
            .collect();
        let fit = fit_ols(&recs).unwrap();
        let x: Vec<f64> = recs.iter().map(|r| r.expert_pct).collect();
        let y: Vec<f64> = recs.iter().map(|r| r.estimated_pct).collect();
        let exact = ols_oracle(&x, &y);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(fit.slope, exact.slope) < 1e-9);
        assert!(rel(fit.intercept, exact.intercept) < 1e-9);
        assert!(rel(fit.r_squared, exact.r_squared) < 1e-9);
    }
}

#[test]
fn site_grouping_equals_partition_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let recs: Vec<CoverageRecord> = (0..30)
        .map(|i| {
            let site = if rng.random_bool(0.4) { "N" } else { "S" };
            record(i, site, rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))
        })
        .collect();
    let groups = aggregate(&recs, GroupBy::Site);
    assert_eq!(groups.len(), 2);
    for g in groups {
        let site = g.key.site.as_deref().unwrap();
        let part: Vec<&CoverageRecord> = recs.iter().filter(|r| r.site_id == site).collect();
        let n = part.len() as f64;
        assert_eq!(g.images, part.len());
        assert!((g.expert_mean_pct - part.iter().map(|r| r.expert_pct).sum::<f64>() / n).abs() < 1e-12);
        assert!((g.estimated_mean_pct - part.iter().map(|r| r.estimated_pct).sum::<f64>() / n).abs() < 1e-12);
    }
}
