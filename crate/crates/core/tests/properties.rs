use obil_core::adapter::{AdapterConfig, OnlineAdapter};
use obil_core::baselines::{bbse_estimate_prior, logit_adjust, threshold_moving_fit, ShiftCorrection};
use obil_core::bayes::{
    combined_threshold, lr_from_output, lr_from_posterior, posterior_from_output, relative_lr_error_bound,
    worst_case_relative_lr_error,
    CostStructure, PriorPair, PRIOR_FLOOR,
};
use obil_core::dataset::LabeledDataset;
use obil_core::ensemble::{softmax_weights, weighted_log_fusion};
use obil_core::losses::{LossKind, REGISTRY};
use obil_core::metrics::{auprc, ece, f1, g_mean, ConfusionCounts};
use obil_core::mlp::{CalibratedScorer, NetworkConfig};
use obil_core::resampling::{make_associated, AssociatedProblemSpec, ResampleMethod};
use obil_core::shift_sim::oracle_decision;
use proptest::prelude::*;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

proptest! {
    #[test]
    fn cost_scale_invariance(c00 in 0.0..2.0f64, d10 in 0.1..5.0f64, c11 in 0.0..2.0f64, d01 in 0.1..5.0f64,
                             p1 in 0.01..0.99f64, lambda in 1e-3..1e3f64) {
        let costs = CostStructure::new(c00, c11 + d01, c00 + d10, c11).unwrap();
        let pri = PriorPair::new(p1).unwrap();
        let a = combined_threshold(&costs, &pri).unwrap();
        let b = combined_threshold(&costs.scaled(lambda), &pri).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn output_composition(o in -0.999_999..0.999_999f64, q in 0.01..100.0f64) {
        let a = lr_from_output(o, q);
        let b = lr_from_posterior(posterior_from_output(o).unwrap(), q).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fusion_weight_simplex(vars in prop::collection::vec(0.0..50.0f64, 1..8), tau in 0.01..10.0f64) {
        let w = softmax_weights(&vars, tau).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fused_ratio_within_member_range(
        pairs in prop::collection::vec((0.0..5.0f64, -20.0..20.0f64), 1..8), tau in 0.05..5.0f64
    ) {
        let (vars, logs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let f = weighted_log_fusion(&softmax_weights(&vars, tau).unwrap(), &logs);
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
    }

    #[test]
    fn adapter_stays_safe(seq in prop::collection::vec(-50.0..50.0f64, 1..400),
                          init in 0.0..1.0f64, qc in 0.2..5.0f64) {
        let cfg = AdapterConfig { initial_p1: init, qc, ..AdapterConfig::default() };
        let mut a = OnlineAdapter::new(cfg.clone()).unwrap();
        for l in seq {
            let before = a.p1_hat();
            let r = a.step(l).unwrap();
            prop_assert!(r.p1_hat_after >= PRIOR_FLOOR && r.p1_hat_after <= 1.0 - PRIOR_FLOOR);
            if (r.p_comb - before).abs() >= cfg.delta_max {
                prop_assert!(r.clamped);
                prop_assert!((r.p1_hat_after - before).abs() <= cfg.delta_max + 1e-15);
            }
            let expect = qc * (1.0 - r.p1_hat_after) / r.p1_hat_after;
            prop_assert!((r.threshold_after - expect).abs() <= 1e-12 * expect);
            prop_assert_eq!(r.prediction, u8::from(l.exp() > r.threshold_before));
        }
    }

    #[test]
    fn frequency_signal_depends_on_window_only(seq in prop::collection::vec(-3.0..3.0f64, 1..300), w in 1usize..50) {
        let mut a = OnlineAdapter::new(AdapterConfig { window_w: w, ..AdapterConfig::default() }).unwrap();
        let trace: Vec<_> = seq.iter().map(|&l| a.step(l).unwrap()).collect();
        for (i, r) in trace.iter().enumerate() {
            let lo = (i + 1).saturating_sub(w);
            let window = &seq[lo..=i];
            let hits = window.iter().filter(|&&l| l > 0.0).count() as f64;
            prop_assert_eq!(r.p_freq, hits / window.len() as f64);
        }
    }

    #[test]
    fn auprc_matches_brute_force(data in prop::collection::vec((0u8..6, 0u8..2), 1..=12)) {
        let scores: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
        let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let got = auprc(&scores, &labels).unwrap();
        if n_pos == 0 {
            prop_assert!(!got.defined);
        } else {
            // sweep every distinct threshold from the top, counting from scratch
            let mut cuts = scores.clone();
            cuts.sort_by(|a, b| b.total_cmp(a));
            cuts.dedup();
            let (mut area, mut prev_tp) = (0.0, 0usize);
            for c in cuts {
                let tp = scores.iter().zip(&labels).filter(|(s, y)| **s >= c && **y == 1).count();
                let fp = scores.iter().zip(&labels).filter(|(s, y)| **s >= c && **y == 0).count();
                if tp > prev_tp {
                    area += tp as f64 / (tp + fp) as f64 * ((tp - prev_tp) as f64 / n_pos as f64);
                }
                prev_tp = tp;
            }
            prop_assert_eq!(got.value, area);
        }
    }

    #[test]
    fn temperature_preserves_auprc(data in prop::collection::vec((-5.0..5.0f64, 0u8..2), 2..40), t in 0.05..20.0f64) {
        let z: Vec<f64> = data.iter().map(|d| d.0).collect();
        let y: Vec<u8> = data.iter().map(|d| d.1).collect();
        // compared on the logit scale: squashing can merge saturated scores
        let zt: Vec<f64> = z.iter().map(|&v| v / t).collect();
        prop_assert_eq!(auprc(&z, &y).unwrap(), auprc(&zt, &y).unwrap());
    }

    #[test]
    fn ece_permutation_invariant(data in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..60), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let (c, ok): (Vec<f64>, Vec<bool>) = data.iter().copied().unzip();
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let c2: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
        let ok2: Vec<bool> = idx.iter().map(|&i| ok[i]).collect();
        let a = ece(&c, &ok, 15).unwrap().value;
        let b = ece(&c2, &ok2, 15).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn threshold_moving_is_exhaustive_optimum(data in prop::collection::vec((0u16..60, 0u8..2), 2..=200)) {
        let scores: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 7.0).collect();
        let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
        let n1 = labels.iter().filter(|&&y| y == 1).count();
        let distinct = { let mut s = scores.clone(); s.sort_by(f64::total_cmp); s.dedup(); s };
        prop_assume!(n1 > 0 && n1 < labels.len() && distinct.len() > 1);
        let fit = threshold_moving_fit(&scores, &labels).unwrap();
        // every split position of the sorted sample, including both ends
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mut best: f64 = 0.0;
        for k in 0..=sorted.len() {
            let cut = if k == 0 { f64::NEG_INFINITY } else { sorted[k - 1] };
            let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > cut)).collect();
            best = best.max(f1(&ConfusionCounts::from_predictions(&preds, &labels).unwrap()).value);
        }
        prop_assert_eq!(fit.f1, best);
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > fit.threshold)).collect();
        prop_assert_eq!(f1(&ConfusionCounts::from_predictions(&preds, &labels).unwrap()).value, best);
    }

    #[test]
    fn logit_adjustment_matches_bayes_threshold(log_lr in -8.0..8.0f64, train in 0.02..0.98f64, test in 0.02..0.98f64) {
        let la = ShiftCorrection::LogitAdjustment { train_p1: train, test_p1: test }.decide(log_lr);
        let bayes = oracle_decision(log_lr, 1.0, test);
        prop_assert_eq!(la, bayes);
    }

    #[test]
    fn oracle_threshold_is_optimal_on_finite_samples(
        items in prop::collection::vec(-4.0..4.0f64, 1..=10), p1 in 0.05..0.95f64, c10 in 0.5..3.0f64, c01 in 0.5..3.0f64
    ) {
        // expected cost with C_ij = cost of predicting i when truth is j
        let costs = CostStructure::new(0.0, c01, c10, 0.0).unwrap();
        let qc = costs.cost_ratio().unwrap();
        let thr = combined_threshold(&costs, &PriorPair::new(p1).unwrap()).unwrap();
        let post = |l: f64| sigmoid(l + (p1 / (1.0 - p1)).ln());
        let total = |t: f64| -> f64 {
            items.iter().map(|&l| costs.expected_cost(u8::from(l.exp() > t), post(l))).sum()
        };
        let oracle = total(thr);
        prop_assert_eq!(oracle, items.iter().map(|&l| costs.expected_cost(oracle_decision(l, qc, p1), post(l))).sum::<f64>());
        for &cand in items.iter() {
            prop_assert!(total(cand.exp()) >= oracle - 1e-12);
            prop_assert!(total(cand.exp() * (1.0 - 1e-12)) >= oracle - 1e-12);
        }
    }

    #[test]
    fn scorer_output_bounded(x in prop::collection::vec(-1e6..1e6f64, 3), seed in any::<u64>()) {
        let s = CalibratedScorer::init(&NetworkConfig { hidden_dims: vec![6, 4], seed, ..NetworkConfig::new(3) }).unwrap();
        let o = s.forward(&x).unwrap();
        prop_assert!(o.abs() < 1.0);
        prop_assert!(s.log_lr(&x).unwrap().is_finite());
    }

    #[test]
    fn resampling_keeps_rows_and_labels(
        n0 in 5usize..80, n1 in 2usize..30, target in 0.2..20.0f64, seed in any::<u64>(), m in 0usize..3
    ) {
        let method = [ResampleMethod::Undersample, ResampleMethod::Oversample, ResampleMethod::Smote][m];
        let feats: Vec<f64> = (0..n0 + n1).map(|i| i as f64).collect();
        let labels = [vec![0u8; n0], vec![1u8; n1]].concat();
        let data = LabeledDataset::new(1, feats, labels).unwrap();
        let spec = AssociatedProblemSpec { k_neighbors: 1, ..AssociatedProblemSpec::new(target, method, seed) };
        if let Ok(out) = make_associated(&data, &spec) {
            prop_assert_eq!(&out, &make_associated(&data, &spec).unwrap());
            // integer-valued rows are originals or copies and keep their label
            for (x, y) in out.iter() {
                if x[0].fract() == 0.0 {
                    prop_assert_eq!(y, u8::from(x[0] as usize >= n0));
                }
            }
            let (a, b) = out.class_counts();
            let err0 = (a as f64 - target * b as f64).abs();
            let err1 = (a as f64 / target - b as f64).abs();
            prop_assert!(err0 <= 0.5 + 1e-9 || err1 <= 0.5 + 1e-9, "{a}/{b} vs {target}");
        }
    }
}

#[test]
fn exact_transfer_identity() {
    // posterior under a modified prior with the class conditionals fixed
    for x in [-2.0_f64, -0.7, 0.0, 0.4, 1.9] {
        let q_true: f64 = (2.0 * x).exp();
        for qp in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let p1 = 1.0 / (1.0 + qp);
            let p = q_true * p1 / (q_true * p1 + (1.0 - p1));
            let q = lr_from_posterior(p, qp).unwrap();
            assert!(((q - q_true) / q_true).abs() <= 1e-12, "x={x} qp={qp}");
        }
    }
}

fn realized_errors(p: f64, eps: f64) -> [f64; 2] {
    let q = p / (1.0 - p);
    [p + eps, p - eps].map(|ph| ((ph / (1.0 - ph) - q) / q).abs())
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    (0..100).flat_map(|i| {
        let p = 0.05 + 0.9 * i as f64 / 99.0;
        (0..100).map(move |j| (p, (p.min(1.0 - p) / 2.0) * j as f64 / 100.0))
    })
}

#[test]
fn worst_case_error_is_attained_and_never_exceeded() {
    for (p, eps) in grid() {
        let bound = worst_case_relative_lr_error(p, eps).unwrap();
        let [up, down] = realized_errors(p, eps);
        assert!(up <= bound * (1.0 + 1e-12) + 1e-15 && down <= up + 1e-15);
        assert!((up - bound).abs() <= 1e-12 * bound.max(1e-3), "p={p} eps={eps}");
    }
}

#[test]
fn sensitivity_bound_dominates_below_one_third() {
    for (p, eps) in grid().filter(|&(p, _)| p <= 1.0 / 3.0) {
        let bound = relative_lr_error_bound(p, eps).unwrap();
        for e in realized_errors(p, eps) {
            assert!(e <= bound * (1.0 + 1e-12) + 1e-15, "p={p} eps={eps}");
        }
    }
}

#[test]
fn sensitivity_bound_is_u_shaped() {
    // minimum sits at p = 0.5 + eps, i.e. at a grid point adjacent to 0.5
    let ps: Vec<f64> = (0..100).map(|i| 0.05 + 0.9 * i as f64 / 99.0).collect();
    for eps in [1e-4, 1e-3, 0.01] {
        let b: Vec<f64> = ps.iter().map(|&p| relative_lr_error_bound(p, eps).unwrap()).collect();
        let argmin = (0..b.len()).min_by(|&i, &j| b[i].total_cmp(&b[j])).unwrap();
        assert!((ps[argmin] - 0.5).abs() <= 0.9 / 99.0 + eps, "eps={eps}: {}", ps[argmin]);
        assert!(b[..=argmin].windows(2).all(|w| w[0] > w[1]));
        assert!(b[argmin..].windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn bregman_identity_grids() {
    for i in 0..=100 {
        let o = -1.0 + 2.0 * i as f64 / 100.0;
        for t in [-1.0, 1.0] {
            let d = LossKind::Squared.eval_output(o, t).unwrap().derivative;
            assert_eq!(d + (t - o), 0.0);
            if o.abs() <= 0.99 {
                let d = LossKind::LogisticArctanh.eval_output(o, t).unwrap().derivative;
                assert!((d + (t - o) / (1.0 - o * o)).abs() <= 1e-9, "o={o} t={t}");
            }
        }
    }
}

#[test]
fn population_minimizer_is_2p_minus_1() {
    for spec in REGISTRY.iter().filter(|s| s.bregman_exact) {
        let loss = LossKind::from_id(spec.id, 1.0).unwrap();
        for k in 1..=19 {
            let p = 0.05 * k as f64;
            let risk = |o: f64| {
                p * loss.eval_output(o, 1.0).unwrap().value + (1.0 - p) * loss.eval_output(o, -1.0).unwrap().value
            };
            let (mut a, mut b) = (-0.999_99, 0.999_99);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            while b - a > 1e-10 {
                let c = b - r * (b - a);
                let d = a + r * (b - a);
                if risk(c) < risk(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let o = (a + b) / 2.0;
            assert!((o - (2.0 * p - 1.0)).abs() <= 1e-6, "{} p={p}: {o}", spec.id);
        }
    }
}

#[test]
fn f1_and_g_mean_on_small_matrices() {
    for tp in 0..3u64 {
        for fp in 0..3u64 {
            for tn in 0..3u64 {
                for fn_ in 0..3u64 {
                    let c = ConfusionCounts::new(tp, fp, tn, fn_);
                    let f = f1(&c);
                    if tp + fp + fn_ == 0 {
                        assert!(!f.defined);
                    } else {
                        let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                        let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                        let hand = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
                        assert!((f.value - hand).abs() < 1e-12, "{c:?}");
                    }
                    let g = g_mean(&c);
                    if tp + fn_ == 0 || tn + fp == 0 {
                        assert!(!g.defined);
                    } else {
                        let hand = (tp as f64 / (tp + fn_) as f64 * tn as f64 / (tn + fp) as f64).sqrt();
                        assert!((g.value - hand).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn ece_grows_when_confidences_move_away() {
    // bin (0.6, 0.8] with accuracy 0.5; shifting all confidences up widens the gap
    let conf = [0.62, 0.65, 0.7, 0.71];
    let ok = [true, false, true, false];
    let base = ece(&conf, &ok, 5).unwrap().value;
    let moved: Vec<f64> = conf.iter().map(|c| c + 0.05).collect();
    assert!(ece(&moved, &ok, 5).unwrap().value >= base);
}

#[test]
fn bbse_recovers_exact_priors() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 100 {
        let (a, d) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
        let c = [[a, 1.0 - d], [1.0 - a, d]];
        let det: f64 = a * d - (1.0 - a) * (1.0 - d);
        if det.abs() < 0.05 {
            continue;
        }
        let p1: f64 = rng.random_range(0.01..0.99);
        let mu = [c[0][0] * (1.0 - p1) + c[0][1] * p1, c[1][0] * (1.0 - p1) + c[1][1] * p1];
        let est = bbse_estimate_prior(c, mu, PRIOR_FLOOR).unwrap();
        assert!((est.p1() - p1).abs() <= 1e-10, "{c:?} {p1}");
        checked += 1;
    }
}

#[test]
fn logit_adjust_composes() {
    for (a, b, c) in [(0.1, 0.4, 0.7), (0.9, 0.2, 0.02), (0.5, 0.5, 0.3)] {
        let direct = logit_adjust(0.33, a, c);
        let two = logit_adjust(logit_adjust(0.33, a, b), b, c);
        assert!((direct - two).abs() < 1e-12);
    }
}
