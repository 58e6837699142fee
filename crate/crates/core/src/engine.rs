//! Exact posterior replicates.
//!
//! Each replicate draws `θ` from its prior and `w` from the DY vector, forms
//! `v = D(θ) w` and maps it to `ζ = (HᵀH)⁻¹Hᵀ v` and `q = Qᵀ v`. With
//! `v = (a, c, d)` split as data rows, `(β, η)` rows and ξ rows:
//!
//! ```text
//! (I + BᵀB/2) θ_βη = Bᵀ(a − d)/2 + c
//! ξ               = (a + d − B θ_βη)/2
//! q               = Tᵀ(a − B c − d)
//! ```
//!
//! Replicates are processed in fixed-size chunks so that every chunk is a
//! handful of matrix products; chunk boundaries do not depend on the thread
//! count, and replicate `t` always uses random stream `t`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{draw_theta, BlockScaling, Dims, HyperState, ModelMatrices, Theta};
use crate::basis::{cos_average, ArealRegion, BasisSet, CellGrid, Coord};
use crate::dy::DyVector;
use crate::error::{Error, Result};
use crate::par::ExecPolicy;
use crate::rng::{stream, Purpose};
use crate::scoring::quantile_sorted;
use crate::special::logistic;

/// Replicates per chunk.
pub const CHUNK: usize = 32;

/// A factorized model ready for sampling. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct EprModel {
    pub matrices: ModelMatrices,
    pub dyvec: DyVector,
    pub hyper: HyperState,
    bt: DMatrix<f64>,
    tt: DMatrix<f64>,
}

/// Wall-clock accounting of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTiming {
    pub total_secs: f64,
    pub per_replicate_secs: f64,
}

impl FitTiming {
    pub fn from_elapsed(elapsed: Duration, count: usize) -> Self {
        let total = elapsed.as_secs_f64();
        FitTiming {
            total_secs: total,
            per_replicate_secs: total / count.max(1) as f64,
        }
    }
}

/// `n_reps` independent posterior draws; row `t` of every matrix is replicate `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorReplicates {
    pub dims: Dims,
    /// `n_reps × (n + p + 3r)`, columns `(ξ, β, η)`.
    pub zeta: DMatrix<f64>,
    /// `n_reps × n`
    pub q: DMatrix<f64>,
    /// `n_reps × 3`, columns `(σ_β, σ_η, σ_ξ)`.
    pub theta: DMatrix<f64>,
    pub seed: u64,
    pub timing: FitTiming,
}

impl PosteriorReplicates {
    pub fn n_reps(&self) -> usize {
        self.zeta.nrows()
    }

    pub fn theta_row(&self, t: usize) -> Theta {
        Theta {
            sigma_beta: self.theta[(t, 0)],
            sigma_eta: self.theta[(t, 1)],
            sigma_xi: self.theta[(t, 2)],
        }
    }

    /// `n_reps × n` block of ξ draws.
    pub fn xi(&self) -> DMatrix<f64> {
        self.zeta.columns(0, self.dims.n()).into_owned()
    }

    /// `n_reps × p` block of β draws.
    pub fn beta(&self) -> DMatrix<f64> {
        self.zeta.columns(self.dims.n(), self.dims.p()).into_owned()
    }

    /// `n_reps × 3r` block of η draws.
    pub fn eta(&self) -> DMatrix<f64> {
        self.zeta
            .columns(self.dims.n() + self.dims.p(), 3 * self.dims.r)
            .into_owned()
    }

    /// Self-normalized importance weights `∝ exp(log_weight(θ_t))`, for
    /// reweighting prior θ draws toward a different θ density.
    pub fn importance_weights(&self, log_weight: impl Fn(&Theta) -> f64) -> Result<Vec<f64>> {
        let lw: Vec<f64> = (0..self.n_reps())
            .map(|t| log_weight(&self.theta_row(t)))
            .collect();
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical(
                "importance log-weights have no finite maximum".into(),
            ));
        }
        let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }
}

impl EprModel {
    pub fn new(matrices: ModelMatrices, dyvec: DyVector, hyper: HyperState) -> Result<Self> {
        hyper.validate()?;
        if dyvec.len() != matrices.dims.rows() {
            return Err(Error::dimension(
                "DY vector",
                matrices.dims.rows(),
                dyvec.len(),
            ));
        }
        let bt = matrices.b.transpose();
        let tt = matrices.t.transpose();
        Ok(EprModel {
            matrices,
            dyvec,
            hyper,
            bt,
            tt,
        })
    }

    pub fn dims(&self) -> Dims {
        self.matrices.dims
    }

    /// Maps a batch of scaled DY vectors (one per column, `2n+p+3r` rows) to
    /// `(ζ, q)` columns.
    pub fn project(&self, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dims = self.dims();
        let (n, s) = (dims.n(), dims.s());
        assert_eq!(v.nrows(), dims.rows(), "batch rows must equal 2n+p+3r");
        let a = v.rows(0, n);
        let c = v.rows(n, s);
        let d = v.rows(n + s, n);
        let b = &self.matrices.b;

        let a_minus_d = a - d;
        let mut theta = &self.bt * &a_minus_d * 0.5 + c;
        self.matrices.r_s.tr_solve_upper_triangular_mut(&mut theta);
        self.matrices.r_s.solve_upper_triangular_mut(&mut theta);

        let mut xi = a + d - b * &theta;
        xi *= 0.5;

        let resid = a_minus_d - b * c;
        let q = &self.tt * resid;

        let mut zeta = DMatrix::zeros(dims.cols(), v.ncols());
        zeta.rows_mut(0, n).copy_from(&xi);
        zeta.rows_mut(n, s).copy_from(&theta);
        (zeta, q)
    }

    /// One replicate from an explicit `w` and `θ`.
    pub fn replicate_from_w(
        &self,
        w: &[f64],
        theta: Theta,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let dims = self.dims();
        if w.len() != dims.rows() {
            return Err(Error::dimension("w", dims.rows(), w.len()));
        }
        let mut v = DMatrix::from_column_slice(w.len(), 1, w);
        BlockScaling::new(&dims, theta).apply(v.as_mut_slice());
        let (zeta, q) = self.project(&v);
        Ok((zeta.column(0).into_owned(), q.column(0).into_owned()))
    }

    /// Replicate number `index` under `seed`: the same draw `run_epr` produces
    /// in row `index`.
    pub fn sample_replicate(
        &self,
        seed: u64,
        index: usize,
    ) -> Result<(DVector<f64>, DVector<f64>, Theta)> {
        let mut rng = stream(seed, Purpose::EprReplicate, index as u64);
        let theta = draw_theta(&self.hyper.prior, &mut rng);
        let mut w = vec![0.0; self.dyvec.len()];
        self.dyvec.sample_into(&mut rng, &mut w);
        let (z, q) = self.replicate_from_w(&w, theta)?;
        check_finite(z.as_slice(), index)?;
        check_finite(q.as_slice(), index)?;
        Ok((z, q, theta))
    }

    fn run_chunk(
        &self,
        seed: u64,
        start: usize,
        len: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<Theta>)> {
        let dims = self.dims();
        let mut v = DMatrix::zeros(dims.rows(), len);
        let mut thetas = Vec::with_capacity(len);
        for (j, mut col) in v.column_iter_mut().enumerate() {
            let mut rng = stream(seed, Purpose::EprReplicate, (start + j) as u64);
            let theta = draw_theta(&self.hyper.prior, &mut rng);
            let col = col.as_mut_slice();
            self.dyvec.sample_into(&mut rng, col);
            BlockScaling::new(&dims, theta).apply(col);
            thetas.push(theta);
        }
        let (zeta, q) = self.project(&v);
        for j in 0..len {
            check_finite(zeta.column(j).as_slice(), start + j)?;
            check_finite(q.column(j).as_slice(), start + j)?;
        }
        Ok((zeta, q, thetas))
    }
}

fn check_finite(x: &[f64], index: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite value in replicate".into()).at("replicate", index))
    }
}

/// Draws `n_reps` independent replicates. The output depends only on
/// `(model, n_reps, seed)`, never on `policy`.
pub fn run_epr(
    model: &EprModel,
    n_reps: usize,
    seed: u64,
    policy: &ExecPolicy,
) -> Result<PosteriorReplicates> {
    if n_reps == 0 {
        return Err(Error::Config("n_reps must be at least 1".into()));
    }
    let start = Instant::now();
    let dims = model.dims();
    let n_chunks = n_reps.div_ceil(CHUNK);
    let chunks = policy.map(n_chunks, |ci| {
        let lo = ci * CHUNK;
        model.run_chunk(seed, lo, CHUNK.min(n_reps - lo))
    });
    let mut zeta = DMatrix::zeros(n_reps, dims.cols());
    let mut q = DMatrix::zeros(n_reps, dims.n());
    let mut theta = DMatrix::zeros(n_reps, 3);
    for (ci, chunk) in chunks.into_iter().enumerate() {
        let (z, qq, th) = chunk?;
        let lo = ci * CHUNK;
        zeta.rows_mut(lo, z.ncols()).copy_from(&z.transpose());
        q.rows_mut(lo, qq.ncols()).copy_from(&qq.transpose());
        for (j, t) in th.iter().enumerate() {
            for (k, v) in t.as_array().into_iter().enumerate() {
                theta[(lo + j, k)] = v;
            }
        }
    }
    Ok(PosteriorReplicates {
        dims,
        zeta,
        q,
        theta,
        seed,
        timing: FitTiming::from_elapsed(start.elapsed(), n_reps),
    })
}

/// `δ = −D(θ)⁻¹ Q q` per replicate, `n_reps × (2n+p+3r)`; the first `n`
/// columns are `δ_y`.
pub fn discrepancy(reps: &PosteriorReplicates, matrices: &ModelMatrices) -> DMatrix<f64> {
    let dims = matrices.dims;
    let (n, s) = (dims.n(), dims.s());
    // Qq = [Tq; −BᵀTq; −Tq]
    let tq = &matrices.t * reps.q.transpose();
    let btq = matrices.b.transpose() * &tq;
    let mut out = DMatrix::zeros(reps.n_reps(), dims.rows());
    let mut col = vec![0.0; dims.rows()];
    for t in 0..reps.n_reps() {
        for i in 0..n {
            col[i] = -tq[(i, t)];
            col[n + s + i] = tq[(i, t)];
        }
        for j in 0..s {
            col[n + j] = btq[(j, t)];
        }
        BlockScaling::new(&dims, reps.theta_row(t)).apply_inverse(&mut col);
        for (k, v) in col.iter().enumerate() {
            out[(t, k)] = *v;
        }
    }
    out
}

/// `y* = ξ + Xβ + Gη` per replicate, `n_reps × n`.
pub fn signal(reps: &PosteriorReplicates, matrices: &ModelMatrices) -> DMatrix<f64> {
    let dims = matrices.dims;
    let coef = reps.zeta.columns(dims.n(), dims.s());
    reps.zeta.columns(0, dims.n()) + coef * matrices.b.transpose()
}

/// `cov(y*, δ_y)` for fixed θ, with `δ_y` as returned by [`discrepancy`]:
/// `−J P Σ (I − P) Jᵀ` where `P = I − QQᵀ` and `Σ = D diag(var w) D`.
pub fn signal_noise_cov(
    matrices: &ModelMatrices,
    theta: Theta,
    dyvec: &DyVector,
) -> Result<DMatrix<f64>> {
    let dims = matrices.dims;
    if dyvec.len() != dims.rows() {
        return Err(Error::dimension("DY vector", dims.rows(), dyvec.len()));
    }
    let mut sigma = dyvec.variances();
    let scale = BlockScaling::new(&dims, theta);
    scale.apply(&mut sigma);
    scale.apply(&mut sigma);
    let q = matrices.q();
    let mut sq = q.clone();
    for (i, mut row) in sq.row_iter_mut().enumerate() {
        row *= sigma[i];
    }
    let qsq = q.transpose() * &sq;
    let t = &matrices.t;
    let n = dims.n();
    let sigma_a_t = DMatrix::from_fn(n, n, |i, j| sigma[i] * t[(i, j)]);
    let inner = sigma_a_t - t * qsq;
    Ok(-(inner * t.transpose()))
}

/// Which response a prediction target belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    /// Point-referenced Gaussian, basis row `(g₁, g₁, 0)`.
    Point,
    /// Areal Gaussian, basis row `(g₂, 0, g₂)`.
    Areal,
    /// Point-referenced Bernoulli, basis row `(g₃, 0, 0)`.
    Indicator,
}

impl Response {
    pub fn label(self) -> &'static str {
        match self {
            Response::Point => "y1",
            Response::Areal => "y2",
            Response::Indicator => "y3",
        }
    }
}

/// Prediction locations with their rows of `[X G]`-style design (length `p + 3r`).
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub response: Response,
    pub ids: Vec<String>,
    pub design: DMatrix<f64>,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Point targets for response 1 or 3.
    pub fn points(
        response: Response,
        dims: &Dims,
        basis: &BasisSet,
        sites: &[(String, Coord, Vec<f64>)],
    ) -> Result<Self> {
        let (offset, width) = match response {
            Response::Point => (0, dims.p1),
            Response::Indicator => (dims.p1 + dims.p2, dims.p3),
            Response::Areal => return Err(Error::Config("areal targets need regions".into())),
        };
        let (p, r) = (dims.p(), dims.r);
        let mut design = DMatrix::zeros(sites.len(), p + 3 * r);
        for (i, (id, s, x)) in sites.iter().enumerate() {
            if x.len() != width {
                return Err(Error::dimension(
                    format!("covariates of target {id}"),
                    width,
                    x.len(),
                ));
            }
            for (j, v) in x.iter().enumerate() {
                design[(i, offset + j)] = *v;
            }
            let g = match response {
                Response::Point => basis.shared.eval(*s),
                _ => basis.eval_indicator(*s),
            };
            for j in 0..r {
                design[(i, p + j)] = g[j];
                if response == Response::Point {
                    design[(i, p + r + j)] = g[j];
                }
            }
        }
        Ok(Targets {
            response,
            ids: sites.iter().map(|s| s.0.clone()).collect(),
            design,
        })
    }

    /// Areal targets for response 2.
    pub fn regions(
        dims: &Dims,
        basis: &BasisSet,
        grid: &CellGrid,
        regions: &[(ArealRegion, Vec<f64>)],
    ) -> Result<Self> {
        let (p, r) = (dims.p(), dims.r);
        let mut design = DMatrix::zeros(regions.len(), p + 3 * r);
        for (i, (reg, x)) in regions.iter().enumerate() {
            if x.len() != dims.p2 {
                return Err(Error::dimension(
                    format!("covariates of target {}", reg.id),
                    dims.p2,
                    x.len(),
                ));
            }
            for (j, v) in x.iter().enumerate() {
                design[(i, dims.p1 + j)] = *v;
            }
            let g = cos_average(reg, &basis.shared, grid).map_err(|e| e.at("target", i))?;
            for j in 0..r {
                design[(i, p + j)] = g[j];
                design[(i, p + 2 * r + j)] = g[j];
            }
        }
        Ok(Targets {
            response: Response::Areal,
            ids: regions.iter().map(|(r, _)| r.id.clone()).collect(),
            design,
        })
    }
}

/// Filtered latent draws `x'β + g*'η`, `targets × n_reps`. ξ and δ never enter.
pub fn predict_draws(reps: &PosteriorReplicates, targets: &Targets) -> Result<DMatrix<f64>> {
    let dims = reps.dims;
    if targets.design.ncols() != dims.s() {
        return Err(Error::dimension(
            "target design columns",
            dims.s(),
            targets.design.ncols(),
        ));
    }
    coefficient_draws_to_targets(reps.zeta.columns(dims.n(), dims.s()), targets)
}

/// Latent draws at the targets from any `draws × (p + 3r)` matrix of `(β, η)`.
pub fn coefficient_draws_to_targets(
    coef: DMatrixView<'_, f64>,
    targets: &Targets,
) -> Result<DMatrix<f64>> {
    if coef.ncols() != targets.design.ncols() {
        return Err(Error::dimension(
            "coefficient columns",
            targets.design.ncols(),
            coef.ncols(),
        ));
    }
    Ok(&targets.design * coef.transpose())
}

/// Posterior summaries per target. For the indicator response the summaries
/// are of `logistic(x'β + g*'η)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSurface {
    pub response: Response,
    pub ids: Vec<String>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Posterior mean of the latent predictor (equals `mean` except for the indicator).
    pub latent_mean: Vec<f64>,
}

/// Central `1 − alpha` bands from empirical quantiles.
pub fn summarize(
    response: Response,
    ids: Vec<String>,
    draws: &DMatrix<f64>,
    alpha: f64,
) -> PredictionSurface {
    let m = draws.ncols();
    let mut out = PredictionSurface {
        response,
        ids,
        mean: Vec::with_capacity(draws.nrows()),
        lower: Vec::with_capacity(draws.nrows()),
        upper: Vec::with_capacity(draws.nrows()),
        latent_mean: Vec::with_capacity(draws.nrows()),
    };
    let mut buf = vec![0.0; m];
    for i in 0..draws.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = draws[(i, j)];
        }
        out.latent_mean.push(buf.iter().sum::<f64>() / m as f64);
        if response == Response::Indicator {
            buf.iter_mut().for_each(|b| *b = logistic(*b));
        }
        let mean = buf.iter().sum::<f64>() / m as f64;
        buf.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&buf, alpha / 2.0);
        let hi = quantile_sorted(&buf, 1.0 - alpha / 2.0);
        out.mean.push(mean.clamp(lo, hi));
        out.lower.push(lo);
        out.upper.push(hi);
    }
    out
}

pub fn predict(reps: &PosteriorReplicates, targets: &Targets) -> Result<PredictionSurface> {
    let draws = predict_draws(reps, targets)?;
    Ok(summarize(
        targets.response,
        targets.ids.clone(),
        &draws,
        0.05,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{build_alpha_kappa, HyperPrior};
    use crate::dy::{DySpec, PartitionTag};
    use crate::linalg::max_abs;

    fn random_model(n: usize, p: usize, k: usize, seed: u64) -> ModelMatrices {
        let mut s = seed;
        let mut next = move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let x = DMatrix::from_fn(n, p, |_, _| next());
        let g = DMatrix::from_fn(n, 3 * k, |_, _| next());
        let dims = Dims {
            n1s: 0,
            n2: n,
            n1: 0,
            p1: 0,
            p2: p,
            p3: 0,
            r: k,
        };
        ModelMatrices::from_blocks(dims, x, g, &ExecPolicy::SEQUENTIAL).unwrap()
    }

    fn gaussian_dy(len: usize) -> DyVector {
        DyVector::from_parts(&vec![(0.3, 0.5, PartitionTag::Gaussian); len]).unwrap()
    }

    fn fixed(theta: Theta) -> HyperState {
        HyperState {
            alpha_xi: 1.0,
            prior: HyperPrior::point_mass(theta),
        }
    }

    #[test]
    fn projection_matches_dense_least_squares() {
        let m = random_model(6, 2, 1, 4);
        let rows = m.dims.rows();
        let model = EprModel::new(m.clone(), gaussian_dy(rows), fixed(Theta::ONES)).unwrap();
        let v = DMatrix::from_fn(rows, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let (zeta, q) = model.project(&v);
        let h = m.h();
        let hth = h.transpose() * &h;
        let want = hth.clone().cholesky().unwrap().solve(&(h.transpose() * &v));
        assert!(max_abs(&(&zeta - want)) < 1e-12);
        assert!(max_abs(&(q - m.q().transpose() * &v)) < 1e-12);
        // v = Hζ + Qq
        let (zeta, q) = model.project(&v);
        assert!(max_abs(&(h * zeta + m.q() * q - v)) < 1e-12);
    }

    #[test]
    fn zero_w_gives_zero_replicate() {
        let m = random_model(5, 1, 1, 2);
        let rows = m.dims.rows();
        let model = EprModel::new(m, gaussian_dy(rows), fixed(Theta::ONES)).unwrap();
        let (z, q) = model
            .replicate_from_w(&vec![0.0; rows], Theta::ONES)
            .unwrap();
        assert!(z.iter().chain(q.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn run_matches_single_replicates_and_is_thread_independent() {
        let m = random_model(7, 2, 2, 9);
        let rows = m.dims.rows();
        let model = EprModel::new(m, gaussian_dy(rows), HyperState::default()).unwrap();
        let a = run_epr(&model, 70, 5, &ExecPolicy::SEQUENTIAL).unwrap();
        let b = run_epr(&model, 70, 5, &ExecPolicy::new(3)).unwrap();
        assert_eq!(a.zeta, b.zeta);
        assert_eq!(a.q, b.q);
        assert_eq!(a.theta, b.theta);
        let (z, q, th) = model.sample_replicate(5, 41).unwrap();
        assert!((a.zeta.row(41).transpose() - z).amax() < 1e-12);
        assert!((a.q.row(41).transpose() - q).amax() < 1e-12);
        assert_eq!(a.theta_row(41), th);
        assert!(run_epr(&model, 0, 5, &ExecPolicy::SEQUENTIAL).is_err());
        assert_eq!(
            run_epr(&model, 1, 5, &ExecPolicy::SEQUENTIAL)
                .unwrap()
                .n_reps(),
            1
        );
    }

    #[test]
    fn discrepancy_round_trip() {
        let m = random_model(6, 2, 1, 3);
        let rows = m.dims.rows();
        let theta = Theta::new(0.5, 2.0, 3.0).unwrap();
        let model = EprModel::new(m.clone(), gaussian_dy(rows), fixed(theta)).unwrap();
        let reps = run_epr(&model, 4, 1, &ExecPolicy::SEQUENTIAL).unwrap();
        let delta = discrepancy(&reps, &m);
        let q = m.q();
        for t in 0..4 {
            let mut d = delta.row(t).transpose().as_slice().to_vec();
            BlockScaling::new(&m.dims, theta).apply(&mut d);
            let back = -(q.transpose() * DVector::from_vec(d));
            assert!((back - reps.q.row(t).transpose()).amax() < 1e-10);
        }
        let model = EprModel::new(m.clone(), gaussian_dy(rows), fixed(Theta::ONES)).unwrap();
        let reps = run_epr(&model, 2, 1, &ExecPolicy::SEQUENTIAL).unwrap();
        let delta = discrepancy(&reps, &m);
        let want = -(&q * reps.q.transpose()).transpose();
        assert!(max_abs(&(delta - want)) < 1e-12);
    }

    #[test]
    fn signal_noise_cov_matches_dense_formula() {
        let m = random_model(5, 2, 1, 8);
        let rows = m.dims.rows();
        let parts: Vec<_> = (0..rows)
            .map(|i| {
                if i % 3 == 0 {
                    (1.5, 4.0, PartitionTag::Bernoulli)
                } else {
                    (0.2, 0.5 + i as f64 * 0.1, PartitionTag::Gaussian)
                }
            })
            .collect();
        let dy = DyVector::from_parts(&parts).unwrap();
        let theta = Theta::new(1.3, 0.7, 2.1).unwrap();
        let got = signal_noise_cov(&m, theta, &dy).unwrap();
        let h = m.h();
        let p = &h * (h.transpose() * &h).try_inverse().unwrap() * h.transpose();
        let mut sigma = dy.variances();
        let d = BlockScaling::new(&m.dims, theta);
        d.apply(&mut sigma);
        d.apply(&mut sigma);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(sigma));
        let full = &p * cov * (DMatrix::identity(rows, rows) - &p);
        let want = -full.view((0, 0), (5, 5)).into_owned();
        assert!(max_abs(&(&got - &want)) < 1e-10 * max_abs(&want).max(1.0));
        assert!(max_abs(&got) > 1e-8);
    }

    #[test]
    fn prediction_ignores_xi_and_q() {
        let m = random_model(4, 2, 1, 5);
        let rows = m.dims.rows();
        let model = EprModel::new(m.clone(), gaussian_dy(rows), fixed(Theta::ONES)).unwrap();
        let mut reps = run_epr(&model, 3, 2, &ExecPolicy::SEQUENTIAL).unwrap();
        let targets = Targets {
            response: Response::Indicator,
            ids: vec!["a".into(), "b".into()],
            design: DMatrix::from_fn(2, m.dims.s(), |i, j| (i + j) as f64 * 0.1),
        };
        let before = predict(&reps, &targets).unwrap();
        reps.zeta.columns_mut(0, m.dims.n()).fill(9.0);
        reps.q.fill(-4.0);
        assert_eq!(predict(&reps, &targets).unwrap(), before);
        for i in 0..2 {
            assert!(before.lower[i] <= before.mean[i] && before.mean[i] <= before.upper[i]);
            assert!((0.0..=1.0).contains(&before.lower[i]) && before.upper[i] <= 1.0);
        }
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let m = random_model(4, 2, 1, 5);
        let dims = m.dims;
        let reps = PosteriorReplicates {
            dims,
            zeta: DMatrix::zeros(2, dims.cols()),
            q: DMatrix::zeros(2, dims.n()),
            theta: DMatrix::from_element(2, 3, 1.0),
            seed: 0,
            timing: FitTiming::default(),
        };
        let targets = Targets {
            response: Response::Indicator,
            ids: vec!["a".into()],
            design: DMatrix::from_element(1, dims.s(), 3.0),
        };
        let s = predict(&reps, &targets).unwrap();
        assert_eq!((s.mean[0], s.lower[0], s.upper[0]), (0.5, 0.5, 0.5));
        assert_eq!(s.latent_mean[0], 0.0);
    }

    #[test]
    fn assembled_dy_vector_feeds_the_engine() {
        use crate::assembly::{MultiTypeDataset, PointObs, RegionObs};
        use crate::basis::{select_knots, BoundingBox};
        let grid = CellGrid::new(4, 4, BoundingBox::UNIT).unwrap();
        let pt = |id: &str, c: Coord, z1: Option<f64>| PointObs {
            id: id.into(),
            coord: c,
            z1,
            z3: z1.is_some(),
            var1: 1.0,
            x1: vec![1.0],
            x3: vec![1.0],
        };
        let ds = MultiTypeDataset::new(
            grid,
            vec![
                pt("a", [0.2, 0.2], Some(1.0)),
                pt("b", [0.7, 0.4], None),
                pt("c", [0.5, 0.9], Some(-0.3)),
            ],
            vec![RegionObs {
                region: ArealRegion {
                    id: "r".into(),
                    cells: vec![0, 1, 4, 5],
                    cell_area: grid.cell_area(),
                },
                z2: 0.2,
                var2: 0.5,
                x2: vec![1.0],
            }],
        )
        .unwrap();
        let basis = BasisSet::new(
            select_knots(&BoundingBox::UNIT, 4).unwrap(),
            select_knots(&BoundingBox::UNIT, 2).unwrap(),
        )
        .unwrap();
        let m = ModelMatrices::from_dataset(&ds, &basis, &ExecPolicy::SEQUENTIAL).unwrap();
        let dy = build_alpha_kappa(&ds, 1.0, basis.r()).unwrap();
        assert_eq!(*dy.get(dy.len() - 1), DySpec::standard_normal());
        let model = EprModel::new(m, dy, HyperState::default()).unwrap();
        let reps = run_epr(&model, 40, 3, &ExecPolicy::SEQUENTIAL).unwrap();
        assert!(reps.zeta.iter().all(|v| v.is_finite()));
        let w = reps.importance_weights(|t| -t.sigma_xi).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
