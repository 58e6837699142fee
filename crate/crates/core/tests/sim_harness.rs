use epr_core::scoring::mean_sd;
use epr_core::sim::{generate_dataset, recompute, run_comparison, SimConfig, SimGeometry};
use epr_core::ExecPolicy;

#[test]
fn tiny_comparison_is_finite_and_recomputable() {
    let cfg = SimConfig {
        n_replicates: 3,
        ..SimConfig::tiny()
    };
    let rep = run_comparison(&cfg, &ExecPolicy::SEQUENTIAL).unwrap();
    assert!(!rep.partial, "{:?}", rep.failures);
    assert_eq!(rep.raw.len(), 6);
    for r in &rep.raw {
        assert!(r.scores.iter().all(|s| s.2.is_finite()), "{r:?}");
    }
    for e in &rep.report.entries {
        assert_eq!(e.summary.count, 3);
        // independent reduction of the raw table
        let vals: Vec<f64> = rep
            .raw
            .iter()
            .filter(|r| r.method == e.method)
            .flat_map(|r| r.scores.iter().filter(|s| s.0 == e.response && s.1 == e.metric).map(|s| s.2))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        assert!((e.summary.mean - m).abs() <= 1e-12 * m.abs().max(1.0));
        assert!((e.summary.sd - sd).abs() <= 1e-12 * sd.max(1.0));
        let again = recompute(&rep.raw, &e.method, &e.response, &e.metric).unwrap();
        assert_eq!(again, e.summary);
    }
    for method in ["epr", "mcmc"] {
        for (resp, metric) in [("y1", "mspe"), ("y2", "crps"), ("y3", "hellinger"), ("all", "cpu_secs")] {
            assert!(rep.report.get(method, resp, metric).is_some(), "{method} {resp} {metric}");
        }
    }
}

#[test]
fn comparison_is_independent_of_thread_count_except_timing() {
    let cfg = SimConfig {
        n_replicates: 2,
        ..SimConfig::tiny()
    };
    let strip = |rep: epr_core::sim::ComparisonReport| {
        rep.raw
            .into_iter()
            .map(|mut r| {
                r.scores.retain(|s| s.1 != "cpu_secs");
                r
            })
            .collect::<Vec<_>>()
    };
    let a = strip(run_comparison(&cfg, &ExecPolicy::SEQUENTIAL).unwrap());
    let b = strip(run_comparison(&cfg, &ExecPolicy::new(3)).unwrap());
    assert_eq!(a, b);
}

#[test]
fn generation_is_deterministic_per_replicate() {
    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let again = SimGeometry::build(&cfg).unwrap();
    assert_eq!(geom.regions, again.regions);
    let (d0, t0) = generate_dataset(&cfg, &geom, 4).unwrap();
    let (d1, t1) = generate_dataset(&cfg, &again, 4).unwrap();
    assert_eq!((d0, t0.clone()), (d1, t1));
    let (_, other) = generate_dataset(&cfg, &geom, 5).unwrap();
    assert_ne!(t0.y1, other.y1);
}

#[test]
fn indicator_counts_follow_their_probabilities() {
    // Σ z3 over replicates against the binomial mean and variance from prob3
    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let (mut count, mut mean, mut var) = (0.0, 0.0, 0.0);
    for t in 0..400 {
        let (ds, truth) = generate_dataset(&cfg, &geom, t).unwrap();
        let ones = truth.z3.iter().filter(|z| **z).count();
        assert_eq!(ds.dims(geom.basis.r()).n1s, ones);
        assert_eq!(ds.points.iter().filter(|p| p.z1.is_some()).count(), ones);
        count += ones as f64;
        mean += truth.prob3.iter().sum::<f64>();
        var += truth.prob3.iter().map(|p| p * (1.0 - p)).sum::<f64>();
    }
    let z = (count - mean) / var.sqrt();
    assert!(z.abs() < 4.0, "z = {z}");
}

#[test]
fn discrepancy_switch_controls_injected_shift() {
    let on = SimConfig::tiny();
    let off = SimConfig {
        discrepancy: false,
        ..SimConfig::tiny()
    };
    let geom = SimGeometry::build(&on).unwrap();
    let (_, t_on) = generate_dataset(&on, &geom, 0).unwrap();
    let (_, t_off) = generate_dataset(&off, &geom, 0).unwrap();
    assert!(t_off.delta1.iter().chain(&t_off.delta2).all(|d| *d == 0.0));
    let spread = mean_sd(&t_on.delta1).unwrap().sd;
    assert!(spread > 0.0);
}

#[test]
fn posterior_signal_and_discrepancy_covary_as_predicted() {
    use epr_core::assembly::{build_alpha_kappa, HyperPrior, HyperState, ModelMatrices, Theta};
    use epr_core::engine::{discrepancy, run_epr, signal, signal_noise_cov, EprModel};

    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let (ds, _) = generate_dataset(&cfg, &geom, 0).unwrap();
    let seq = ExecPolicy::SEQUENTIAL;
    let m = ModelMatrices::from_dataset(&ds, &geom.basis, &seq).unwrap();
    let dyvec = build_alpha_kappa(&ds, 1.0, geom.basis.r()).unwrap();
    let theta = Theta::new(1.0, 1.0, 0.5).unwrap();
    let hyper = HyperState {
        alpha_xi: 1.0,
        prior: HyperPrior::point_mass(theta),
    };
    let model = EprModel::new(m.clone(), dyvec.clone(), hyper).unwrap();
    let reps = run_epr(&model, 20_000, 5, &seq).unwrap();
    let ys = signal(&reps, &m);
    let n = m.dims.n();
    let dy = discrepancy(&reps, &m).columns(0, n).into_owned();
    let exact = signal_noise_cov(&m, theta, &dyvec).unwrap();

    let k = reps.n_reps() as f64;
    let ym = ys.row_mean();
    let dm = dy.row_mean();
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    entries.sort_by(|a, b| exact[*b].abs().total_cmp(&exact[*a].abs()));
    for &(i, j) in entries.iter().take(10) {
        let emp = (0..reps.n_reps())
            .map(|t| (ys[(t, i)] - ym[i]) * (dy[(t, j)] - dm[j]))
            .sum::<f64>()
            / (k - 1.0);
        assert!(exact[(i, j)] != 0.0);
        assert_eq!(emp.signum(), exact[(i, j)].signum(), "entry ({i}, {j}): {emp} vs {}", exact[(i, j)]);
    }
}
