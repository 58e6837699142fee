use epr_core::assembly::{MultiTypeDataset, PointObs, RegionObs};
use epr_core::basis::{ArealRegion, BasisSet, BoundingBox, CellGrid, KnotSet};
use epr_core::mcmc::{gelman_rubin, run_mcmc, ChainOutput, McmcConfig, McmcProblem, Param};
use epr_core::rng::{stream, Purpose};
use epr_core::special::logistic;
use epr_core::ExecPolicy;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn grid() -> CellGrid {
    CellGrid::new(4, 4, BoundingBox::UNIT).unwrap()
}

fn basis() -> BasisSet {
    let shared = KnotSet::new(vec![[0.25, 0.25], [0.75, 0.75]], 0.4).unwrap();
    let ind = KnotSet::new(vec![[0.5, 0.5]], 0.4).unwrap();
    BasisSet::new(shared, ind).unwrap()
}

/// Six Gaussian points, three regions and two zero-indicator points.
fn small_dataset(var: f64, seed: u64) -> MultiTypeDataset {
    let g = grid();
    let mut rng = stream(seed, Purpose::Test, 0);
    let mut points = Vec::new();
    for k in 0..8 {
        let s = [0.1 + 0.1 * k as f64, 0.9 - 0.11 * k as f64];
        let z3 = k < 6;
        points.push(PointObs {
            id: format!("p{k}"),
            coord: s,
            z1: z3.then(|| 0.5 + s[0] + var.sqrt() * rng.sample::<f64, _>(StandardNormal)),
            z3,
            var1: var,
            x1: vec![1.0, s[0]],
            x3: vec![1.0],
        });
    }
    let regions = (0..3)
        .map(|j| RegionObs {
            region: ArealRegion {
                id: format!("r{j}"),
                cells: vec![5 * j, 5 * j + 1],
                cell_area: g.cell_area(),
            },
            z2: -0.3 + 0.4 * j as f64 + var.sqrt() * rng.sample::<f64, _>(StandardNormal),
            var2: var,
            x2: vec![1.0],
        })
        .collect();
    MultiTypeDataset::new(g, points, regions).unwrap()
}

/// Batch-means standard error of the mean of a pooled trace.
fn mean_and_se(traces: &[Vec<f64>]) -> (f64, f64) {
    let batch = 500;
    let mut means = Vec::new();
    for t in traces {
        for chunk in t.chunks_exact(batch) {
            means.push(chunk.iter().sum::<f64>() / batch as f64);
        }
    }
    let k = means.len() as f64;
    let m = means.iter().sum::<f64>() / k;
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (v / k).sqrt())
}

fn traces(out: &ChainOutput, p: Param) -> Vec<Vec<f64>> {
    (0..out.chains.len()).map(|c| out.trace(c, p).unwrap()).collect()
}

#[test]
fn gaussian_submodel_matches_conjugate_posterior() {
    let ds = small_dataset(0.5, 11);
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let [vb, ve, vx] = [4.0, 1.0, 0.25];
    let cfg = McmcConfig {
        chains: 4,
        iters: 22_000,
        burnin: 2_000,
        seed: 5,
        fixed_variances: Some([vb, ve, vx]),
        include_bernoulli: false,
        ..McmcConfig::default()
    };
    let out = run_mcmc(&pb, &cfg, &ExecPolicy::default()).unwrap();

    // ξ integrated out: z_g ~ N(B_g θ, diag(v) + σ²_ξ I).
    let ng = pb.z.len();
    let (p, k) = (pb.dims.p(), 3 * pb.dims.r);
    let mut bg = DMatrix::zeros(ng, p + k);
    bg.view_mut((0, 0), (ng, p)).copy_from(&pb.x.rows(0, ng));
    bg.view_mut((0, p), (ng, k)).copy_from(&pb.g.rows(0, ng));
    let w = DVector::from_fn(ng, |i, _| 1.0 / (pb.var[i] + vx));
    let mut wb = bg.clone();
    for (i, mut row) in wb.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let mut prec = bg.transpose() * &wb;
    for j in 0..p + k {
        prec[(j, j)] += if j < p { 1.0 / vb } else { 1.0 / ve };
    }
    let z = DVector::from_column_slice(&pb.z);
    let exact = prec.cholesky().unwrap().solve(&(wb.transpose() * z));

    for j in 0..p + k {
        let param = if j < p { Param::Beta(j) } else { Param::Eta(j - p) };
        let (m, se) = mean_and_se(&traces(&out, param));
        assert!(
            (m - exact[j]).abs() <= 4.0 * se,
            "{param:?}: chain {m} vs exact {} (se {se})",
            exact[j]
        );
    }
}

#[test]
fn diffuse_data_recover_the_prior() {
    let ds = small_dataset(1e8, 12);
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let cfg = McmcConfig {
        chains: 4,
        iters: 26_000,
        burnin: 1_000,
        seed: 6,
        include_bernoulli: false,
        ..McmcConfig::default()
    };
    let out = run_mcmc(&pb, &cfg, &ExecPolicy::default()).unwrap();
    for param in [Param::Beta(0), Param::Beta(1), Param::Eta(0), Param::Eta(3)] {
        let (m, se) = mean_and_se(&traces(&out, param));
        assert!(m.abs() <= 4.0 * se, "{param:?}: mean {m}, se {se}");
    }
    // InverseGamma(2, 1) has median 1 / 1.6783469900166608.
    let median = 1.0 / 1.678_346_990_016_660_8;
    for j in 0..3 {
        let all: Vec<f64> = traces(&out, Param::Variance(j)).concat();
        let below = all.iter().filter(|v| **v <= median).count() as f64 / all.len() as f64;
        assert!((below - 0.5).abs() < 0.05, "variance {j}: P(<= median) = {below}");
    }
}

#[test]
fn two_parameter_model_matches_rejection_sampler() {
    // One zero-indicator point whose basis value underflows to zero, so the
    // only coupled unknowns are β₃ and Y₃.
    let far = KnotSet::new(vec![[1e3, 1e3]], 0.01).unwrap();
    let basis = BasisSet::new(far.clone(), far).unwrap();
    let ds = MultiTypeDataset::new(
        grid(),
        vec![PointObs {
            id: "only".into(),
            coord: [0.5, 0.5],
            z1: None,
            z3: false,
            var1: 1.0,
            x1: vec![],
            x3: vec![1.0],
        }],
        vec![],
    )
    .unwrap();
    let pb = McmcProblem::from_dataset(&ds, &basis).unwrap();
    assert_eq!(pb.dims.p(), 1);
    let cfg = McmcConfig {
        chains: 4,
        iters: 52_000,
        burnin: 2_000,
        seed: 9,
        fixed_variances: Some([1.0, 1.0, 1.0]),
        ..McmcConfig::default()
    };
    let out = run_mcmc(&pb, &cfg, &ExecPolicy::default()).unwrap();
    let beta = traces(&out, Param::Beta(0));
    let y3: Vec<Vec<f64>> = beta
        .iter()
        .zip(traces(&out, Param::Xi(0)))
        .map(|(b, x)| b.iter().zip(&x).map(|(b, x)| b + x).collect())
        .collect();

    // Oracle: prior draws kept with probability P(z₃ = 0 | Y₃).
    let mut rng = stream(77, Purpose::Test, 0);
    let (mut sb, mut sy, mut syy, mut kept) = (0.0, 0.0, 0.0, 0usize);
    while kept < 400_000 {
        let b: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = b + e;
        if rng.random::<f64>() < 1.0 - logistic(y) {
            sb += b;
            sy += y;
            syy += y * y;
            kept += 1;
        }
    }
    let k = kept as f64;
    let oracle = [sb / k, sy / k, syy / k];
    let y3sq: Vec<Vec<f64>> = y3.iter().map(|t| t.iter().map(|v| v * v).collect()).collect();
    for (name, tr, want) in [("beta", &beta, oracle[0]), ("y3", &y3, oracle[1]), ("y3^2", &y3sq, oracle[2])] {
        let (m, se) = mean_and_se(tr);
        // the oracle's own error is far smaller than the chain's
        assert!((m - want).abs() <= 4.0 * se, "{name}: chain {m} vs oracle {want} (se {se})");
    }
    assert!(out.chains.iter().all(|c| (0.3..0.6).contains(&c.accept_rate)));
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let ds = small_dataset(0.5, 13);
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let cfg = McmcConfig {
        chains: 3,
        iters: 600,
        burnin: 300,
        seed: 21,
        ..McmcConfig::default()
    };
    let a = run_mcmc(&pb, &cfg, &ExecPolicy::SEQUENTIAL).unwrap();
    let b = run_mcmc(&pb, &cfg, &ExecPolicy::new(3)).unwrap();
    assert_eq!(a.chains, b.chains);
    let c = run_mcmc(&pb, &McmcConfig { seed: 22, ..cfg }, &ExecPolicy::SEQUENTIAL).unwrap();
    assert_ne!(a.chains[0].beta, c.chains[0].beta);
}

#[test]
fn adaptation_freezes_after_burnin() {
    let ds = small_dataset(0.5, 14);
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let cfg = McmcConfig {
        chains: 2,
        iters: 2_000,
        burnin: 1_000,
        seed: 3,
        ..McmcConfig::default()
    };
    let out = run_mcmc(&pb, &cfg, &ExecPolicy::SEQUENTIAL).unwrap();
    for c in &out.chains {
        let frozen = &c
            .scale_history
            .iter()
            .find(|(it, _)| *it == cfg.burnin)
            .expect("snapshot at the end of burn-in")
            .1;
        assert!(frozen.iter().all(|s| *s > 0.0));
        for (it, s) in &c.scale_history {
            if *it > cfg.burnin {
                assert_eq!(s, frozen);
            }
        }
        // the scales did move during burn-in
        assert_ne!(&c.scale_history[0].1, frozen);
    }
}

#[test]
fn diagnostics_on_converged_chains() {
    let ds = small_dataset(0.5, 15);
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let cfg = McmcConfig {
        chains: 2,
        iters: 6_000,
        burnin: 2_000,
        seed: 4,
        ..McmcConfig::default()
    };
    let out = run_mcmc(&pb, &cfg, &ExecPolicy::SEQUENTIAL).unwrap();
    for p in [Param::Beta(0), Param::Eta(1), Param::Variance(2)] {
        let r = gelman_rubin(&out, p).unwrap();
        assert!(r.point < 1.1 && r.upper >= r.point, "{p:?}: {r:?}");
    }
    let one = ChainOutput {
        chains: vec![out.chains[0].clone()],
        ..out.clone()
    };
    assert!(gelman_rubin(&one, Param::Beta(0)).is_err());
    assert!(out.trace(0, Param::Beta(99)).is_err());
    let draws = out.coefficient_draws();
    assert_eq!(draws.nrows(), 2 * 4_000);
    assert_eq!(draws.ncols(), pb.dims.p() + 3 * pb.dims.r);
}

#[test]
fn non_finite_state_reports_iteration() {
    let mut ds = small_dataset(0.5, 16);
    ds.points[0].z1 = Some(1e300);
    ds.points[0].var1 = 1e-300;
    let pb = McmcProblem::from_dataset(&ds, &basis()).unwrap();
    let cfg = McmcConfig {
        chains: 1,
        iters: 10,
        burnin: 5,
        ..McmcConfig::default()
    };
    let err = run_mcmc(&pb, &cfg, &ExecPolicy::SEQUENTIAL).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    let msg = err.to_string();
    assert!(msg.contains("chain 0") && msg.contains("iteration 0"), "{msg}");
}
