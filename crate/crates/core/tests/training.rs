use obil_core::adapter::{run_stream, AdapterConfig};
use obil_core::bayes::log_lr_from_output;
use obil_core::codec::{decode_ensemble, encode_ensemble};
use obil_core::ensemble::{member_log_lr, train_ensemble, EnsembleConfig, LikelihoodRatioEnsemble};
use obil_core::losses::LossKind;
use obil_core::metrics::fit_temperature;
use obil_core::mlp::{self, mc_dropout_log_lr_variance, CalibratedScorer, DropoutMasks, NetworkConfig, TrainingConfig};
use obil_core::resampling::{make_associated, smote_generate, AssociatedProblemSpec, ResampleMethod};
use obil_core::shift_sim::{run_regret_experiment, GaussianProblem, PriorTrajectory, StreamScenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(n0: usize, n1: usize, seed: u64) -> obil_core::dataset::LabeledDataset {
    GaussianProblem::default().sample_counts(n0, n1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn small_net(seed: u64, dropout: f64) -> NetworkConfig {
    NetworkConfig { hidden_dims: vec![32, 16], dropout_rate: dropout, seed, ..NetworkConfig::new(1) }
}

#[test]
fn balanced_gaussian_posterior_at_origin() {
    let data = gaussian(1000, 1000, 3);
    let s = mlp::train(&data, &NetworkConfig { seed: 5, ..NetworkConfig::new(1) }, &TrainingConfig::default(), &LossKind::Squared)
        .unwrap();
    let p = s.posterior(&[0.0]).unwrap();
    assert!((p - 0.5).abs() < 0.05, "posterior at 0: {p}");
}

#[test]
fn training_is_deterministic() {
    let data = gaussian(150, 50, 8);
    let tc = TrainingConfig { max_epochs: 5, ..TrainingConfig::default() };
    let a = mlp::train(&data, &small_net(9, 0.1), &tc, &LossKind::LogisticArctanh).unwrap();
    let b = mlp::train(&data, &small_net(9, 0.1), &tc, &LossKind::LogisticArctanh).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.training_qp, 3.0);
}

#[test]
fn mc_dropout_variance_matches_replay() {
    let s = CalibratedScorer::init(&NetworkConfig { hidden_dims: vec![12, 7], dropout_rate: 0.3, seed: 4, ..NetworkConfig::new(2) })
        .unwrap();
    let x = [0.4, -1.1];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut replay = rng.clone();
    let got = mc_dropout_log_lr_variance(&s, &x, 50, &mut rng).unwrap();

    // independent forward pass over the same recorded masks
    let keep = 1.0 / (1.0 - 0.3);
    let pass = |masks: &DropoutMasks| -> f64 {
        let mut h = x.to_vec();
        for (l, layer) in s.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|o| layer.bias[o] + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * h[i]).sum::<f64>())
                .collect();
            if l + 1 < s.layers.len() {
                h = z.iter().zip(&masks[l]).map(|(v, &k)| if k { v.max(0.0) * keep } else { 0.0 }).collect();
            } else {
                h = z;
            }
        }
        log_lr_from_output(h[0].tanh(), s.training_qp)
    };
    let vals: Vec<f64> = (0..50).map(|_| pass(&s.sample_dropout_masks(&mut replay))).collect();
    let mean = vals.iter().sum::<f64>() / 50.0;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
    assert!(var > 0.0);
    assert!((got - var).abs() <= 1e-10, "{got} vs {var}");
}

#[test]
fn temperature_recovers_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z: Vec<f64> = (0..20_000).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<u8> = z.iter().map(|&v| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-v).exp()))).collect();
    let t1 = fit_temperature(&z, &y).unwrap().temperature;
    assert!((0.9..=1.1).contains(&t1), "{t1}");
    let doubled: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
    let t2 = fit_temperature(&doubled, &y).unwrap().temperature;
    assert!((1.8..=2.2).contains(&t2), "{t2}");
}

#[test]
fn ensemble_members_near_zero_at_origin() {
    let data = gaussian(6000, 2000, 12);
    let net = NetworkConfig::new(1);
    let tc = TrainingConfig::default();
    let trained = train_ensemble(&data, &EnsembleConfig::default(), &net, &tc, &LossKind::LogisticArctanh, 31).unwrap();
    let ens = &trained.ensemble;
    assert_eq!(ens.members.len(), 5);
    for m in &ens.members {
        let l = member_log_lr(m, &[0.0]).unwrap().0;
        assert!(l.abs() < 0.3, "member at qp {}: {l}", m.training_qp);
    }
    let again = train_ensemble(&data, &EnsembleConfig::default(), &net, &tc, &LossKind::LogisticArctanh, 31).unwrap();
    assert_eq!(&again.ensemble, ens);

    // container round trip keeps fused predictions
    let back: LikelihoodRatioEnsemble = decode_ensemble(encode_ensemble(ens).as_bytes()).unwrap();
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let x = [-3.0 + 0.03 * i as f64];
        assert_eq!(ens.fused_log_lr(&x, &mut r1).unwrap(), back.fused_log_lr(&x, &mut r2).unwrap());
    }
}

#[test]
fn single_member_ensemble_is_single_scorer() {
    let data = gaussian(300, 300, 2);
    let tc = TrainingConfig { max_epochs: 10, ..TrainingConfig::default() };
    let cfg = EnsembleConfig::with_targets(vec![1.0]);
    let trained = train_ensemble(&data, &cfg, &small_net(0, 0.0), &tc, &LossKind::Squared, 4).unwrap();
    let m = &trained.ensemble.members[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for x in [-1.0, 0.0, 0.5] {
        assert_eq!(trained.ensemble.fused_log_lr(&[x], &mut rng).unwrap(), member_log_lr(m, &[x]).unwrap());
    }
    assert_eq!(trained.calibration.class_counts(), (45, 45));
}

#[test]
fn xent_members_get_fitted_temperature() {
    let data = gaussian(400, 100, 6);
    let tc = TrainingConfig { max_epochs: 15, ..TrainingConfig::default() };
    let cfg = EnsembleConfig::with_targets(vec![1.0, 4.0]);
    let trained = train_ensemble(&data, &cfg, &small_net(0, 0.0), &tc, &LossKind::XentSigmoid, 8).unwrap();
    for m in &trained.ensemble.members {
        assert!(m.temperature != 1.0 && m.temperature > 0.05 && m.temperature < 20.0);
    }
}

#[test]
fn stream_of_positive_evidence_raises_prior_monotonically() {
    let cfg = AdapterConfig { gamma: 0.6, beta: 0.6, ..AdapterConfig::default() };
    let g = GaussianProblem::default();
    let xs: Vec<Vec<f64>> = vec![vec![1.5]; 400];
    let trace = run_stream(&g, xs.iter().map(Vec::as_slice), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(trace.len(), 400);
    for w in trace.windows(2) {
        assert!(w[1].p1_hat_after >= w[0].p1_hat_after);
    }
    assert!(trace.last().unwrap().p1_hat_after > 0.9);
    let empty: Vec<&[f64]> = Vec::new();
    assert!(run_stream(&g, empty, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
}

#[test]
fn regret_against_itself_and_in_expectation() {
    let scenario = |seed| StreamScenario {
        problem: GaussianProblem::default(),
        trajectory: PriorTrajectory::Constant { p: 0.3 },
        horizon: 1000,
        seed,
    };
    // oracle-vs-oracle: expected losses coincide step by step
    let run = run_regret_experiment(&scenario(1), &AdapterConfig::default(), &GaussianProblem::default(), &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    for i in 0..run.ledger.len() {
        if run.trace[i].threshold_before == (1.0 - 0.3) / 0.3 {
            assert_eq!(run.ledger.alg_expected[i], run.ledger.oracle_expected[i]);
        }
    }
    let finals: Vec<f64> = (0..20)
        .map(|s| {
            let cfg = AdapterConfig { initial_p1: 0.3, ..AdapterConfig::default() };
            run_regret_experiment(&scenario(s), &cfg, &GaussianProblem::default(), &mut ChaCha8Rng::seed_from_u64(s))
                .unwrap()
                .ledger
                .final_regret()
        })
        .collect();
    let mean = finals.iter().sum::<f64>() / 20.0;
    let sd = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!(mean >= -2.0 * sd / 20f64.sqrt());
}

#[test]
fn drift_regret_rate_falls() {
    let sc = StreamScenario {
        problem: GaussianProblem::default(),
        trajectory: PriorTrajectory::LinearDrift { p_start: 0.2, slope: 0.002, p_end: 0.5 },
        horizon: 2000,
        seed: 3,
    };
    let cfg = AdapterConfig { initial_p1: 0.2, ..AdapterConfig::default() };
    let mut rate500 = 0.0;
    let mut rate2000 = 0.0;
    for s in 0..15 {
        let run = run_regret_experiment(&StreamScenario { seed: s, ..sc.clone() }, &cfg, &GaussianProblem::default(), &mut ChaCha8Rng::seed_from_u64(s))
            .unwrap();
        rate500 += run.ledger.cum_regret[499] / 500.0;
        rate2000 += run.ledger.cum_regret[1999] / 2000.0;
    }
    assert!(rate2000 < rate500, "{rate2000} vs {rate500}");
}

#[test]
fn undersampling_preserves_majority_histogram() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let n0 = 2000;
    let feats: Vec<f64> = (0..n0 + 100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let labels = [vec![0u8; n0], vec![1u8; 100]].concat();
    let data = obil_core::dataset::LabeledDataset::new(1, feats.clone(), labels).unwrap();
    let edges: Vec<f64> = (0..=20).map(|i| -3.0 + 0.3 * i as f64).collect();
    let hist = |xs: &[f64]| -> Vec<f64> {
        let mut h = [0.0; 20];
        for &x in xs {
            if let Some(b) = edges.windows(2).position(|w| x >= w[0] && x < w[1]) {
                h[b] += 1.0;
            }
        }
        let n = xs.len() as f64;
        h.iter().map(|c| c / n).collect()
    };
    let full = hist(&feats[..n0]);
    let runs: Vec<Vec<f64>> = (0..200)
        .map(|s| {
            let out = make_associated(&data, &AssociatedProblemSpec::new(2.0, ResampleMethod::Undersample, s)).unwrap();
            let maj: Vec<f64> = out.iter().filter(|(_, y)| *y == 0).map(|(x, _)| x[0]).collect();
            hist(&maj)
        })
        .collect();
    for b in 0..20 {
        let vals: Vec<f64> = runs.iter().map(|h| h[b]).collect();
        let mean = vals.iter().sum::<f64>() / 200.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        let se = sd / 200f64.sqrt();
        assert!((mean - full[b]).abs() <= 3.0 * se.max(1e-12), "bin {b}: {mean} vs {}", full[b]);
    }
}

#[test]
fn smote_shrinks_variance_to_two_thirds() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let n = 400;
    let minority: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mean = minority.iter().sum::<f64>() / n as f64;
    let var = minority.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let syn = smote_generate(&minority, 1, 100_000, n - 1, 51).unwrap();
    let m = syn.iter().sum::<f64>() / syn.len() as f64;
    let v = syn.iter().map(|x| (x - m).powi(2)).sum::<f64>() / syn.len() as f64;
    assert!((v / var - 2.0 / 3.0).abs() < 0.02, "ratio {}", v / var);
    assert!(v < 0.8 * var);
}
