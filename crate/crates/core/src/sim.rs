//! Synthetic multiscale data and the EPR versus MCMC comparison.
//!
//! Geometry (point lattice, region partition, knots, covariate fields) is a
//! function of the config seed alone and is shared by all replicates. The
//! truth of replicate `t` comes from stream `t` of that seed.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    build_alpha_kappa, HyperPrior, HyperState, ModelMatrices, MultiTypeDataset, PointObs,
    RegionObs, ScalePrior,
};
use crate::basis::{
    select_knots, validate_partition, ArealRegion, BasisSet, BoundingBox, CellGrid, Coord,
};
use crate::engine::{coefficient_draws_to_targets, run_epr, EprModel, Response, Targets};
use crate::error::{Error, Result};
use crate::mcmc::{run_mcmc, McmcConfig, McmcProblem};
use crate::par::ExecPolicy;
use crate::rng::{child_seed, stream, Purpose};
use crate::scoring::{
    crps_presorted, hellinger_bernoulli, interval_score, mean_sd, mspe, quantile_sorted,
    ScoreReport,
};
use crate::special::logistic;

/// A smooth synthetic covariate `center + spread · φ(s)` with `φ ∈ (−1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateField {
    pub center: f64,
    pub spread: f64,
}

impl CovariateField {
    pub const fn new(center: f64, spread: f64) -> Self {
        CovariateField { center, spread }
    }

    /// Field number `k` at `s`: `tanh` of a quadratic trend plus two Gaussian bumps.
    pub fn eval(&self, k: usize, s: Coord) -> f64 {
        let a = 0.7 + 0.37 * k as f64;
        let (x, y) = (s[0] - 0.5, s[1] - 0.5);
        let (c, d) = (a.cos(), a.sin());
        let u = c * x + d * y;
        let v = -d * x + c * y;
        let bump = |cx: f64, cy: f64, h: f64| {
            let r2 = (s[0] - cx).powi(2) + (s[1] - cy).powi(2);
            h * (-r2 / (2.0 * 0.15 * 0.15)).exp()
        };
        let m1 = (
            0.25 + 0.5 * ((k as f64 * 0.61).fract()),
            0.3 + 0.4 * ((k as f64 * 0.43 + 0.2).fract()),
        );
        let m2 = (1.0 - m1.1, m1.0);
        let raw =
            1.6 * u + 0.8 * u * v - 0.6 * v * v + bump(m1.0, m1.1, 1.2) - bump(m2.0, m2.1, 0.9);
        self.center + self.spread * raw.tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Point lattice is `points_per_side²` cell-centred locations.
    pub points_per_side: usize,
    /// Regions aggregate cells of a `cells_per_side²` grid.
    pub cells_per_side: usize,
    pub n_regions: usize,
    pub r: usize,
    /// Knots of the indicator basis; defaults to `⌈r/2⌉`.
    pub r3: Option<usize>,
    pub n_replicates: usize,
    /// Intercept first in every block.
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta3: Vec<f64>,
    /// Non-intercept covariates of responses 1 and 2.
    pub x1_fields: Vec<CovariateField>,
    pub x2_fields: Vec<CovariateField>,
    pub discrepancy: bool,
    /// Truth draws `η ~ N(0, sigma_eta² I)`.
    pub sigma_eta: f64,
    pub sigma_xi: f64,
    pub var1: f64,
    pub var2: f64,
    pub seed: u64,
    pub epr_reps: usize,
    pub alpha_xi: f64,
    pub prior: HyperPrior,
    pub mcmc_chains: usize,
    pub mcmc_iters: usize,
    pub mcmc_burnin: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        let lu = ScalePrior::LogUniform { lo: 0.1, hi: 10.0 };
        SimConfig {
            points_per_side: 20,
            cells_per_side: 60,
            n_regions: 225,
            r: 50,
            r3: None,
            n_replicates: 100,
            beta1: vec![1.17, -0.049, 0.0008, -0.666, 0.0000048],
            beta2: vec![-1.539, 0.0000242],
            beta3: vec![-1.786],
            x1_fields: vec![
                CovariateField::new(20.0, 8.0),
                CovariateField::new(100.0, 60.0),
                CovariateField::new(0.5, 0.3),
                CovariateField::new(5.0e4, 3.0e4),
            ],
            x2_fields: vec![CovariateField::new(2.0e4, 1.5e4)],
            discrepancy: true,
            sigma_eta: 0.5,
            sigma_xi: 0.1,
            var1: 1.0,
            var2: 1.0,
            seed: 1,
            epr_reps: 1000,
            alpha_xi: 1.0,
            prior: HyperPrior {
                sigma_beta: lu,
                sigma_eta: lu,
                sigma_xi: lu,
            },
            mcmc_chains: 2,
            mcmc_iters: 10_000,
            mcmc_burnin: 5_000,
        }
    }
}

impl SimConfig {
    /// 8×8 points, 9 regions, 4 knots: for smoke tests.
    pub fn tiny() -> Self {
        SimConfig {
            points_per_side: 8,
            cells_per_side: 6,
            n_regions: 9,
            r: 4,
            n_replicates: 1,
            epr_reps: 200,
            mcmc_iters: 400,
            mcmc_burnin: 200,
            ..SimConfig::default()
        }
    }

    pub fn r3(&self) -> usize {
        self.r3.unwrap_or(self.r.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.points_per_side == 0 || self.cells_per_side == 0 {
            return cfg("lattice sizes must be positive".into());
        }
        if self.n_regions == 0 || self.n_regions > self.cells_per_side * self.cells_per_side {
            return cfg(format!(
                "n_regions ({}) must lie in 1..={}",
                self.n_regions,
                self.cells_per_side * self.cells_per_side
            ));
        }
        if self.r == 0 || self.r > self.points_per_side * self.points_per_side {
            return cfg(format!("r ({}) must lie in 1..=number of points", self.r));
        }
        if self.r3() == 0 || self.r3() > self.r {
            return cfg("r3 must lie in 1..=r".into());
        }
        if self.n_replicates == 0 || self.epr_reps == 0 {
            return cfg("replicate counts must be at least 1".into());
        }
        if self.beta1.len() != self.x1_fields.len() + 1
            || self.beta2.len() != self.x2_fields.len() + 1
        {
            return cfg("beta1/beta2 need one entry per covariate field plus the intercept".into());
        }
        if self.beta3.len() != 1 {
            return cfg("beta3 holds the indicator intercept only".into());
        }
        for v in [self.sigma_eta, self.sigma_xi, self.var1, self.var2, self.alpha_xi] {
            if !(v.is_finite() && v > 0.0) {
                return cfg("sigma_eta, sigma_xi, var1, var2 and alpha_xi must be positive".into());
            }
        }
        self.prior.validate()?;
        self.mcmc_config(0).validate()
    }

    pub fn mcmc_config(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            chains: self.mcmc_chains,
            iters: self.mcmc_iters,
            burnin: self.mcmc_burnin,
            seed,
            ..McmcConfig::default()
        }
    }

    pub fn hyper(&self) -> HyperState {
        HyperState {
            alpha_xi: self.alpha_xi,
            prior: self.prior,
        }
    }
}

/// Randomized greedy aggregation of grid cells into `k` contiguous regions.
///
/// Seeds `k` distinct cells, then repeatedly draws a random frontier entry and
/// gives its cell to the frontier's region if still free. Every cell is
/// reached because the 4-neighbour grid is connected.
pub fn greedy_partition<R: Rng + ?Sized>(
    grid: &CellGrid,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ArealRegion>> {
    let total = grid.n_cells();
    if k == 0 || k > total {
        return Err(Error::Config(format!(
            "cannot form {k} regions from {total} cells"
        )));
    }
    let mut owner = vec![usize::MAX; total];
    let mut cells: Vec<usize> = (0..total).collect();
    cells.shuffle(rng);
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    let push_neighbours =
        |c: usize, reg: usize, frontier: &mut Vec<(usize, usize)>, owner: &[usize]| {
            let (ix, iy) = grid.cell_coords(c);
            let mut nb = Vec::with_capacity(4);
            if ix > 0 {
                nb.push(grid.index(ix - 1, iy));
            }
            if ix + 1 < grid.nx {
                nb.push(grid.index(ix + 1, iy));
            }
            if iy > 0 {
                nb.push(grid.index(ix, iy - 1));
            }
            if iy + 1 < grid.ny {
                nb.push(grid.index(ix, iy + 1));
            }
            for c in nb {
                if owner[c] == usize::MAX {
                    frontier.push((c, reg));
                }
            }
        };
    for (reg, &c) in cells[..k].iter().enumerate() {
        owner[c] = reg;
        push_neighbours(c, reg, &mut frontier, &owner);
    }
    while !frontier.is_empty() {
        let i = rng.random_range(0..frontier.len());
        let (c, reg) = frontier.swap_remove(i);
        if owner[c] == usize::MAX {
            owner[c] = reg;
            push_neighbours(c, reg, &mut frontier, &owner);
        }
    }
    let mut members = vec![Vec::new(); k];
    for (c, &reg) in owner.iter().enumerate() {
        members[reg].push(c);
    }
    let regions: Vec<ArealRegion> = members
        .into_iter()
        .enumerate()
        .map(|(j, cells)| ArealRegion {
            id: format!("R{j:04}"),
            cells,
            cell_area: grid.cell_area(),
        })
        .collect();
    validate_partition(&regions, grid, true)?;
    Ok(regions)
}

/// Fixed design shared by all replicates of a config.
#[derive(Debug, Clone)]
pub struct SimGeometry {
    pub grid: CellGrid,
    pub points: Vec<(String, Coord)>,
    pub regions: Vec<ArealRegion>,
    pub basis: BasisSet,
    /// Covariates per point (with intercept) for responses 1 and 3.
    pub x1: Vec<Vec<f64>>,
    pub x3: Vec<Vec<f64>>,
    /// Region covariates (with intercept).
    pub x2: Vec<Vec<f64>>,
    /// Matrices of the model with every point carrying response 1.
    pub full: ModelMatrices,
}

impl SimGeometry {
    pub fn build(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = CellGrid::new(cfg.cells_per_side, cfg.cells_per_side, BoundingBox::UNIT)?;
        let m = cfg.points_per_side;
        let h = 1.0 / m as f64;
        let points: Vec<(String, Coord)> = (0..m * m)
            .map(|k| {
                let (ix, iy) = (k % m, k / m);
                (
                    format!("P{k:05}"),
                    [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h],
                )
            })
            .collect();
        let mut rng = stream(cfg.seed, Purpose::SimPartition, 0);
        let regions = greedy_partition(&grid, cfg.n_regions, &mut rng)?;
        let shared = select_knots(&BoundingBox::UNIT, cfg.r)?;
        let indicator = select_knots(&BoundingBox::UNIT, cfg.r3())?;
        let basis = BasisSet::new(shared, indicator)?;

        let eval_fields = |fields: &[CovariateField], s: Coord| {
            let mut x = vec![1.0];
            x.extend(fields.iter().enumerate().map(|(k, f)| f.eval(k, s)));
            x
        };
        let x1: Vec<Vec<f64>> = points
            .iter()
            .map(|(_, s)| eval_fields(&cfg.x1_fields, *s))
            .collect();
        let x3 = vec![vec![1.0]; points.len()];
        let x2: Vec<Vec<f64>> = regions
            .iter()
            .map(|reg| {
                let mut acc = vec![0.0; cfg.x2_fields.len() + 1];
                for &c in &reg.cells {
                    let s = grid.center(c).expect("partition cells lie in the grid");
                    for (a, v) in acc.iter_mut().zip(eval_fields(&cfg.x2_fields, s)) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / reg.cells.len() as f64).collect()
            })
            .collect();

        let all = assemble(
            &grid,
            &points,
            &regions,
            &x1,
            &x3,
            &x2,
            &vec![Some(0.0); m * m],
            &vec![0.0; regions.len()],
            cfg,
        )?;
        let full = ModelMatrices::from_dataset(&all, &basis, &ExecPolicy::SEQUENTIAL)?;
        Ok(SimGeometry {
            grid,
            points,
            regions,
            basis,
            x1,
            x3,
            x2,
            full,
        })
    }

    /// Dataset with the given responses; `z1[k]` present means `z3[k] = 1`.
    pub fn dataset(
        &self,
        z1: &[Option<f64>],
        z2: &[f64],
        cfg: &SimConfig,
    ) -> Result<MultiTypeDataset> {
        assemble(
            &self.grid,
            &self.points,
            &self.regions,
            &self.x1,
            &self.x3,
            &self.x2,
            z1,
            z2,
            cfg,
        )
    }

    /// Prediction targets at every point and region.
    pub fn target_set(&self) -> Result<TargetSet> {
        let all = self.dataset(
            &vec![Some(0.0); self.points.len()],
            &vec![0.0; self.regions.len()],
            &SimConfig::default(),
        )?;
        TargetSet::from_dataset(&all, &self.basis)
    }
}

/// Targets of the three responses: every point for responses 1 and 3 and
/// every region for response 2, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub y1: Targets,
    pub y2: Targets,
    pub y3: Targets,
}

impl TargetSet {
    pub fn from_dataset(ds: &MultiTypeDataset, basis: &BasisSet) -> Result<Self> {
        let dims = ds.dims(basis.r());
        let sites = |x: fn(&PointObs) -> &Vec<f64>| -> Vec<(String, Coord, Vec<f64>)> {
            ds.points
                .iter()
                .map(|p| (p.id.clone(), p.coord, x(p).clone()))
                .collect()
        };
        let regs: Vec<(ArealRegion, Vec<f64>)> = ds
            .regions
            .iter()
            .map(|r| (r.region.clone(), r.x2.clone()))
            .collect();
        Ok(TargetSet {
            y1: Targets::points(Response::Point, &dims, basis, &sites(|p| &p.x1))?,
            y2: Targets::regions(&dims, basis, &ds.grid, &regs)?,
            y3: Targets::points(Response::Indicator, &dims, basis, &sites(|p| &p.x3))?,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    grid: &CellGrid,
    points: &[(String, Coord)],
    regions: &[ArealRegion],
    x1: &[Vec<f64>],
    x3: &[Vec<f64>],
    x2: &[Vec<f64>],
    z1: &[Option<f64>],
    z2: &[f64],
    cfg: &SimConfig,
) -> Result<MultiTypeDataset> {
    let points = points
        .iter()
        .enumerate()
        .map(|(k, (id, s))| PointObs {
            id: id.clone(),
            coord: *s,
            z1: z1[k],
            z3: z1[k].is_some(),
            var1: cfg.var1,
            x1: x1[k].clone(),
            x3: x3[k].clone(),
        })
        .collect();
    let regions = regions
        .iter()
        .enumerate()
        .map(|(j, reg)| RegionObs {
            region: reg.clone(),
            z2: z2[j],
            var2: cfg.var2,
            x2: x2[j].clone(),
        })
        .collect();
    MultiTypeDataset::new(grid.clone(), points, regions)
}

/// Everything drawn for one synthetic replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Latent fields at all points, all regions and all points.
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub y3: Vec<f64>,
    pub prob3: Vec<f64>,
    pub z1: Vec<Option<f64>>,
    pub z2: Vec<f64>,
    pub z3: Vec<bool>,
    /// Injected `δ_y` blocks; all zero when the discrepancy is off.
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub delta3: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Replicate `index` of `cfg`:
/// `Y = Xβ + Gη + ξ − δ_y`, `η ~ N(0, I)`, `ξ ~ N(0, σ²_ξ I)`,
/// `δ = −D⁻¹Qq` with `q ~ N(0, I)` when the discrepancy is on.
pub fn generate_dataset(
    cfg: &SimConfig,
    geom: &SimGeometry,
    index: usize,
) -> Result<(MultiTypeDataset, SimTruth)> {
    generate_with(cfg, geom, index, None)
}

/// As [`generate_dataset`] with `β` and `η` overridden.
pub fn generate_with_effects(
    cfg: &SimConfig,
    geom: &SimGeometry,
    index: usize,
    beta: &[f64],
    eta: &[f64],
) -> Result<(MultiTypeDataset, SimTruth)> {
    generate_with(cfg, geom, index, Some((beta, eta)))
}

fn generate_with(
    cfg: &SimConfig,
    geom: &SimGeometry,
    index: usize,
    effects: Option<(&[f64], &[f64])>,
) -> Result<(MultiTypeDataset, SimTruth)> {
    let full = &geom.full;
    let d = full.dims;
    let (np, nr) = (d.n1s, d.n2);
    let n = d.n();
    let mut rng = stream(cfg.seed, Purpose::SimTruth, index as u64);
    let mut normal = |k: usize| DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));

    let eta_draw = normal(3 * d.r);
    let xi = normal(n) * cfg.sigma_xi;
    let q = normal(n);
    let noise = normal(np + nr);
    let (beta, eta) = match effects {
        Some((b, e)) => {
            if b.len() != d.p() || e.len() != 3 * d.r {
                return Err(Error::dimension(
                    "overridden effects",
                    d.p() + 3 * d.r,
                    b.len() + e.len(),
                ));
            }
            (DVector::from_column_slice(b), DVector::from_column_slice(e))
        }
        None => {
            let mut b = cfg.beta1.clone();
            b.extend(&cfg.beta2);
            b.extend(&cfg.beta3);
            (DVector::from_vec(b), eta_draw * cfg.sigma_eta)
        }
    };
    let delta = if cfg.discrepancy {
        -(&full.t * q)
    } else {
        DVector::zeros(n)
    };
    let y = &full.x * &beta + &full.g * &eta + xi - &delta;

    let y1: Vec<f64> = y.rows(0, np).iter().copied().collect();
    let y2: Vec<f64> = y.rows(np, nr).iter().copied().collect();
    let y3: Vec<f64> = y.rows(np + nr, np).iter().copied().collect();
    let prob3: Vec<f64> = y3.iter().map(|v| logistic(*v)).collect();
    let z3: Vec<bool> = prob3.iter().map(|p| rng.random::<f64>() < *p).collect();
    let z1: Vec<Option<f64>> = (0..np)
        .map(|k| z3[k].then(|| y1[k] + cfg.var1.sqrt() * noise[k]))
        .collect();
    let z2: Vec<f64> = (0..nr)
        .map(|j| y2[j] + cfg.var2.sqrt() * noise[np + j])
        .collect();

    let ds = geom.dataset(&z1, &z2, cfg)?;
    let truth = SimTruth {
        y1,
        y2,
        y3,
        prob3,
        z1,
        z2,
        z3,
        delta1: delta.rows(0, np).iter().copied().collect(),
        delta2: delta.rows(np, nr).iter().copied().collect(),
        delta3: delta.rows(np + nr, np).iter().copied().collect(),
        beta: beta.iter().copied().collect(),
        eta: eta.iter().copied().collect(),
    };
    Ok((ds, truth))
}

/// Scores of one fitted method on one replicate, keyed by `(response, metric)`.
pub type RawScores = BTreeMap<(String, String), f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScores {
    pub replicate: usize,
    pub method: String,
    pub scores: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub raw: Vec<ReplicateScores>,
    pub report: ScoreReport,
    /// `(replicate, error)` for replicates that failed.
    pub failures: Vec<(usize, String)>,
    pub partial: bool,
}

/// Scores posterior coefficient draws (`draws × (p + 3r)`) against the truth.
///
/// Responses 1 and 2: MSPE of the posterior mean, CRPS and 95% interval
/// score averaged over locations. Response 3: Hellinger distance between the
/// true and the posterior-mean probabilities. Effects: MSE of posterior means.
pub fn score_draws(
    targets: &TargetSet,
    truth: &SimTruth,
    coef: &DMatrix<f64>,
    cpu_secs: f64,
) -> Result<RawScores> {
    let mut out = RawScores::new();
    let mut put = |resp: &str, metric: &str, v: f64| {
        out.insert((resp.to_string(), metric.to_string()), v);
    };
    for (t, truth_y) in [(&targets.y1, &truth.y1), (&targets.y2, &truth.y2)] {
        let label = t.response.label();
        let draws = coefficient_draws_to_targets(coef.as_view(), t)?;
        let mean: Vec<f64> = draws.row_iter().map(|r| r.mean()).collect();
        put(label, "mspe", mspe(truth_y, &mean)?);
        let mut buf = vec![0.0; draws.ncols()];
        let (mut crps, mut is) = (0.0, 0.0);
        for (i, row) in draws.row_iter().enumerate() {
            buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
            buf.sort_by(f64::total_cmp);
            crps += crps_presorted(&buf, truth_y[i]);
            is += interval_score(
                quantile_sorted(&buf, 0.025),
                quantile_sorted(&buf, 0.975),
                truth_y[i],
                0.05,
            )?;
        }
        let m = draws.nrows() as f64;
        put(label, "crps", crps / m);
        put(label, "interval", is / m);
    }
    let draws = coefficient_draws_to_targets(coef.as_view(), &targets.y3)?;
    let prob: Vec<f64> = draws
        .row_iter()
        .map(|r| r.iter().map(|v| logistic(*v)).sum::<f64>() / r.len() as f64)
        .collect();
    let hd = hellinger_bernoulli(&truth.prob3, &prob)?;
    put("y3", "hellinger", hd.sum);
    put("y3", "hellinger_mean", hd.mean);

    let p = truth.beta.len();
    let est: Vec<f64> = coef.column_iter().map(|c| c.mean()).collect();
    put("effects", "mse_beta", mspe(&truth.beta, &est[..p])?);
    put("effects", "mse_eta", mspe(&truth.eta, &est[p..])?);
    put("all", "cpu_secs", cpu_secs);
    Ok(out)
}

/// Fits EPR (with discrepancy) and MCMC (without) to replicate `index`.
pub fn run_replicate(
    cfg: &SimConfig,
    geom: &SimGeometry,
    targets: &TargetSet,
    index: usize,
) -> Result<[ReplicateScores; 2]> {
    let (ds, truth) = generate_dataset(cfg, geom, index)?;
    let seq = ExecPolicy::SEQUENTIAL;

    let start = Instant::now();
    let matrices = ModelMatrices::from_dataset(&ds, &geom.basis, &seq)?;
    let dyvec = build_alpha_kappa(&ds, cfg.alpha_xi, geom.basis.r())?;
    let model = EprModel::new(matrices, dyvec, cfg.hyper())?;
    let reps = run_epr(
        &model,
        cfg.epr_reps,
        child_seed(cfg.seed, Purpose::Harness, 2 * index as u64),
        &seq,
    )?;
    let epr_secs = start.elapsed().as_secs_f64();
    let dims = reps.dims;
    let epr_coef = reps.zeta.columns(dims.n(), dims.s()).into_owned();

    let start = Instant::now();
    let problem = McmcProblem::from_dataset(&ds, &geom.basis)?;
    let chains = run_mcmc(
        &problem,
        &cfg.mcmc_config(child_seed(cfg.seed, Purpose::Harness, 2 * index as u64 + 1)),
        &seq,
    )?;
    let mcmc_secs = start.elapsed().as_secs_f64();
    let mcmc_coef = chains.coefficient_draws();

    let pack = |method: &str, s: RawScores| ReplicateScores {
        replicate: index,
        method: method.to_string(),
        scores: s.into_iter().map(|((r, m), v)| (r, m, v)).collect(),
    };
    Ok([
        pack("epr", score_draws(targets, &truth, &epr_coef, epr_secs)?),
        pack("mcmc", score_draws(targets, &truth, &mcmc_coef, mcmc_secs)?),
    ])
}

/// Mean and sd per `(method, response, metric)` over the replicates present.
pub fn summarize_raw(raw: &[ReplicateScores]) -> Result<ScoreReport> {
    let mut grouped: BTreeMap<(String, String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in raw {
        for (resp, metric, v) in &r.scores {
            grouped
                .entry((r.method.clone(), resp.clone(), metric.clone()))
                .or_default()
                .push((r.replicate, *v));
        }
    }
    let mut report = ScoreReport::default();
    for ((method, resp, metric), mut vals) in grouped {
        vals.sort_by_key(|(i, _)| *i);
        let v: Vec<f64> = vals.into_iter().map(|(_, v)| v).collect();
        report.push(&method, &resp, &metric, &v)?;
    }
    Ok(report)
}

/// Runs every replicate (in parallel across replicates under `policy`) and
/// reduces the raw scores. Failed replicates are listed and flag the report
/// as partial.
pub fn run_comparison(cfg: &SimConfig, policy: &ExecPolicy) -> Result<ComparisonReport> {
    let geom = SimGeometry::build(cfg)?;
    let targets = geom.target_set()?;
    let results = policy.map(cfg.n_replicates, |t| {
        run_replicate(cfg, &geom, &targets, t).map_err(|e| e.at("replicate", t))
    });
    let mut raw = Vec::with_capacity(2 * cfg.n_replicates);
    let mut failures = Vec::new();
    for (t, res) in results.into_iter().enumerate() {
        match res {
            Ok(pair) => raw.extend(pair),
            Err(e) => failures.push((t, e.to_string())),
        }
    }
    if raw.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} replicates failed; first: {}",
            cfg.n_replicates,
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    let report = summarize_raw(&raw)?;
    Ok(ComparisonReport {
        partial: !failures.is_empty(),
        raw,
        report,
        failures,
    })
}

/// `mean ± sd` of one raw metric, for recomputation checks.
pub fn recompute(
    raw: &[ReplicateScores],
    method: &str,
    response: &str,
    metric: &str,
) -> Result<crate::scoring::MeanSd> {
    let v: Vec<f64> = raw
        .iter()
        .filter(|r| r.method == method)
        .flat_map(|r| {
            r.scores
                .iter()
                .filter(|s| s.0 == response && s.1 == metric)
                .map(|s| s.2)
        })
        .collect();
    mean_sd(&v)
}
