//! Metropolis-within-Gibbs baseline for the model without a discrepancy term.
//!
//! Priors: `β ~ N(0, σ²_β I)`, `η ~ N(0, σ²_η I)`, `ξ ~ N(0, σ²_ξ I)` and
//! `InverseGamma(2, 1)` on each variance. The Bernoulli rows carry their
//! latent `Y₃ = X₃β₃ + G₃η + ξ₃` directly, which keeps the β and η
//! conditionals Gaussian; each `Y₃ₖ` moves by an adaptive random walk, which
//! is a random-walk move on `ξ₃ₖ` with β and η held fixed.
//!
//! Sweep order per iteration: β, η, ξ (Gaussian rows by exact draws, then the
//! Bernoulli rows by Metropolis), variances.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::assembly::{build_g_for, build_x, Dims, MultiTypeDataset};
use crate::basis::BasisSet;
use crate::dy::ln_gamma_variate;
use crate::engine::FitTiming;
use crate::error::{Error, Result};
use crate::par::ExecPolicy;
use crate::rng::{stream, Purpose, Stream};
use crate::special::log1p_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Iterations per adaptation batch.
    pub batch: usize,
    pub target_accept: f64,
    /// `InverseGamma(shape, scale)` prior on each variance.
    pub prior_shape: f64,
    pub prior_scale: f64,
    /// Holds `(σ²_β, σ²_η, σ²_ξ)` fixed instead of sampling them.
    pub fixed_variances: Option<[f64; 3]>,
    /// When false the Bernoulli response is dropped from the likelihood.
    pub include_bernoulli: bool,
    /// Number of leading ξ entries stored per iteration.
    pub xi_stored: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 2,
            iters: 10_000,
            burnin: 5_000,
            seed: 0,
            batch: 50,
            target_accept: 0.44,
            prior_shape: 2.0,
            prior_scale: 1.0,
            fixed_variances: None,
            include_bernoulli: true,
            xi_stored: 8,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if self.iters <= self.burnin {
            return Err(Error::Config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("adaptation batch must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        if !(self.prior_shape > 0.0 && self.prior_scale > 0.0) {
            return Err(Error::Config(
                "inverse-gamma prior parameters must be positive".into(),
            ));
        }
        if let Some(v) = self.fixed_variances {
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config("fixed variances must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Data and design in the layout the sampler uses.
#[derive(Debug, Clone)]
pub struct McmcProblem {
    pub dims: Dims,
    pub x: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Observations of the Gaussian rows (response 1 then response 2).
    pub z: Vec<f64>,
    /// Measurement variances of the Gaussian rows.
    pub var: Vec<f64>,
    pub z3: Vec<bool>,
}

impl McmcProblem {
    pub fn from_dataset(ds: &MultiTypeDataset, basis: &BasisSet) -> Result<Self> {
        let dims = ds.dims(basis.r());
        let mut z = Vec::with_capacity(dims.n1s + dims.n2);
        let mut var = Vec::with_capacity(dims.n1s + dims.n2);
        for p in ds.response1() {
            z.push(p.z1.expect("validated: z1 present where z3 = 1"));
            var.push(p.var1);
        }
        for r in &ds.regions {
            z.push(r.z2);
            var.push(r.var2);
        }
        Ok(McmcProblem {
            dims,
            x: build_x(ds)?,
            g: build_g_for(ds, basis)?,
            z,
            var,
            z3: ds.points.iter().map(|p| p.z3).collect(),
        })
    }

    fn n_gauss(&self) -> usize {
        self.dims.n1s + self.dims.n2
    }

    /// `(rows, cols)` ranges of the three diagonal blocks of X.
    fn beta_blocks(&self) -> [(std::ops::Range<usize>, std::ops::Range<usize>); 3] {
        let d = &self.dims;
        let ng = self.n_gauss();
        [
            (0..d.n1s, 0..d.p1),
            (d.n1s..ng, d.p1..d.p1 + d.p2),
            (ng..d.n(), d.p1 + d.p2..d.p()),
        ]
    }
}

/// Current values of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    /// Full ξ; the Bernoulli entries are `Y₃ − X₃β₃ − G₃η`.
    pub xi: DVector<f64>,
    pub y3: DVector<f64>,
    /// `(σ²_β, σ²_η, σ²_ξ)`
    pub variances: [f64; 3],
    /// Random-walk scale per Bernoulli row.
    pub scales: Vec<f64>,
    accepted: Vec<u32>,
}

/// Draws of one chain, one row per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub beta: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub variances: DMatrix<f64>,
    pub xi_head: DMatrix<f64>,
    /// `(iteration, scales)` at the end of every adaptation batch.
    pub scale_history: Vec<(usize, Vec<f64>)>,
    /// Metropolis acceptance rate after burn-in.
    pub accept_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chains: Vec<Chain>,
    pub burnin: usize,
    pub iters: usize,
    pub dims: Dims,
    pub timing: FitTiming,
}

/// A scalar parameter tracked per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Beta(usize),
    Eta(usize),
    /// 0: σ²_β, 1: σ²_η, 2: σ²_ξ
    Variance(usize),
    Xi(usize),
}

impl ChainOutput {
    /// Post-burn-in trace of `param` for `chain`.
    pub fn trace(&self, chain: usize, param: Param) -> Result<Vec<f64>> {
        let c = self
            .chains
            .get(chain)
            .ok_or_else(|| Error::Diagnostic(format!("no chain {chain}")))?;
        let (m, j) = match param {
            Param::Beta(j) => (&c.beta, j),
            Param::Eta(j) => (&c.eta, j),
            Param::Variance(j) => (&c.variances, j),
            Param::Xi(j) => (&c.xi_head, j),
        };
        if j >= m.ncols() {
            return Err(Error::Diagnostic(format!("{param:?} is not stored")));
        }
        Ok((self.burnin..self.iters).map(|t| m[(t, j)]).collect())
    }

    /// Post-burn-in `(β, η)` draws of all chains stacked, `draws × (p + 3r)`.
    pub fn coefficient_draws(&self) -> DMatrix<f64> {
        let kept = self.iters - self.burnin;
        let (p, k) = (self.dims.p(), 3 * self.dims.r);
        let mut out = DMatrix::zeros(kept * self.chains.len(), p + k);
        for (ci, c) in self.chains.iter().enumerate() {
            let lo = ci * kept;
            out.view_mut((lo, 0), (kept, p))
                .copy_from(&c.beta.rows(self.burnin, kept));
            out.view_mut((lo, p), (kept, k))
                .copy_from(&c.eta.rows(self.burnin, kept));
        }
        out
    }
}

/// Robbins–Monro style update of a random-walk scale:
/// `log s += sign(rate − target) · min(0.01, batch^{-1/2})`.
pub fn adapt_scale(accepted: usize, tried: usize, target: f64, scale: f64, batch: usize) -> f64 {
    if tried == 0 {
        return scale;
    }
    let rate = accepted as f64 / tried as f64;
    let step = 0.01f64.min(1.0 / (batch.max(1) as f64).sqrt());
    let dir = if rate > target {
        1.0
    } else if rate < target {
        -1.0
    } else {
        0.0
    };
    scale * (dir * step).exp()
}

/// `N(P⁻¹ rhs, P⁻¹)` for a symmetric positive definite precision `P`.
pub fn gaussian_draw(
    prec: DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut Stream,
) -> Result<DVector<f64>> {
    let k = rhs.len();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
    // L Lᵀ = P, so Lᵀ x = z gives cov(x) = P⁻¹.
    let dev = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let x = mean + dev;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("non-finite Gibbs draw".into()))
    }
}

/// `σ² ~ InverseGamma(shape, scale)`.
pub fn inv_gamma_draw(shape: f64, scale: f64, rng: &mut Stream) -> f64 {
    (scale.ln() - ln_gamma_variate(shape, rng)).exp()
}

/// Log full conditional of one Bernoulli latent, up to a constant.
pub fn indicator_log_target(y: f64, z3: bool, mu: f64, var_xi: f64) -> f64 {
    let z = if z3 { 1.0 } else { 0.0 };
    z * y - log1p_exp(y) - (y - mu) * (y - mu) / (2.0 * var_xi)
}

/// One random-walk Metropolis step; returns the new value and whether it moved.
pub fn rw_step(
    y: f64,
    scale: f64,
    log_target: impl Fn(f64) -> f64,
    rng: &mut Stream,
) -> (f64, bool) {
    let prop = y + scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
    let log_ratio = log_target(prop) - log_target(y);
    let u: f64 = Open01.sample(rng);
    if u.ln() < log_ratio {
        (prop, true)
    } else {
        (y, false)
    }
}

struct Precomputed {
    /// `X_bᵀ V_b⁻¹ X_b` for the Gaussian blocks, `X₃ᵀX₃` for the last.
    beta_gram: [DMatrix<f64>; 3],
    /// `G_gᵀ V⁻¹ G_g` over the Gaussian rows.
    eta_gram_gauss: DMatrix<f64>,
    /// `G₃ᵀ G₃`
    eta_gram_bern: DMatrix<f64>,
}

fn precompute(pb: &McmcProblem) -> Precomputed {
    let ng = pb.n_gauss();
    let n = pb.dims.n();
    let blocks = pb.beta_blocks();
    let gram = |b: usize, weighted: bool| {
        let (rows, cols) = &blocks[b];
        let xb =
            pb.x.view((rows.start, cols.start), (rows.len(), cols.len()));
        let mut wx = xb.into_owned();
        if weighted {
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row /= pb.var[rows.start + i];
            }
        }
        xb.transpose() * wx
    };
    let gg = pb.g.rows(0, ng);
    let mut wg = gg.into_owned();
    for (i, mut row) in wg.row_iter_mut().enumerate() {
        row /= pb.var[i];
    }
    let g3 = pb.g.rows(ng, n - ng);
    Precomputed {
        beta_gram: [gram(0, true), gram(1, true), gram(2, false)],
        eta_gram_gauss: gg.transpose() * wg,
        eta_gram_bern: g3.transpose() * g3,
    }
}

fn initial_state(pb: &McmcProblem, cfg: &McmcConfig, rng: &mut Stream) -> ChainState {
    let d = &pb.dims;
    let mut normal = |k: usize| DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *rng));
    let beta = normal(d.p());
    let eta = normal(3 * d.r);
    let y3 = DVector::from_fn(d.n1, |k, _| if pb.z3[k] { 1.0 } else { -1.0 });
    ChainState {
        beta,
        eta,
        xi: DVector::zeros(d.n()),
        y3,
        variances: cfg.fixed_variances.unwrap_or([1.0; 3]),
        scales: vec![1.0; d.n1],
        accepted: vec![0; d.n1],
    }
}

fn run_chain(pb: &McmcProblem, pre: &Precomputed, cfg: &McmcConfig, chain: usize) -> Result<Chain> {
    let d = pb.dims;
    let (n, p, k) = (d.n(), d.p(), 3 * d.r);
    let ng = pb.n_gauss();
    let blocks = pb.beta_blocks();
    let mut rng = stream(cfg.seed, Purpose::McmcChain, chain as u64);
    let mut st = initial_state(pb, cfg, &mut rng);
    let xi_keep = cfg.xi_stored.min(n);
    let mut out = Chain {
        beta: DMatrix::zeros(cfg.iters, p),
        eta: DMatrix::zeros(cfg.iters, k),
        variances: DMatrix::zeros(cfg.iters, 3),
        xi_head: DMatrix::zeros(cfg.iters, xi_keep),
        scale_history: Vec::new(),
        accept_rate: 0.0,
    };
    let (mut acc_post, mut tried_post) = (0usize, 0usize);
    let (a0, b0) = (cfg.prior_shape, cfg.prior_scale);

    for it in 0..cfg.iters {
        let [vb, ve, vx] = st.variances;
        let g_eta = &pb.g * &st.eta;

        // β, block by block
        for (b, (rows, cols)) in blocks.iter().enumerate() {
            if cols.is_empty() {
                continue;
            }
            let xb =
                pb.x.view((rows.start, cols.start), (rows.len(), cols.len()));
            let mut prec = DMatrix::identity(cols.len(), cols.len()) / vb;
            let rhs = if b < 2 {
                prec += &pre.beta_gram[b];
                let r = DVector::from_fn(rows.len(), |i, _| {
                    let row = rows.start + i;
                    (pb.z[row] - g_eta[row] - st.xi[row]) / pb.var[row]
                });
                xb.transpose() * r
            } else if cfg.include_bernoulli {
                prec += &pre.beta_gram[2] / vx;
                let r = DVector::from_fn(rows.len(), |i, _| st.y3[i] - g_eta[rows.start + i]);
                xb.transpose() * r / vx
            } else {
                DVector::zeros(cols.len())
            };
            let draw = gaussian_draw(prec, &rhs, &mut rng).map_err(|e| e.at("iteration", it))?;
            st.beta.rows_mut(cols.start, cols.len()).copy_from(&draw);
        }
        let x_beta = &pb.x * &st.beta;

        // η jointly
        if k > 0 {
            let mut prec = &pre.eta_gram_gauss + DMatrix::identity(k, k) / ve;
            let rg = DVector::from_fn(ng, |i, _| (pb.z[i] - x_beta[i] - st.xi[i]) / pb.var[i]);
            let mut rhs = pb.g.rows(0, ng).transpose() * rg;
            if cfg.include_bernoulli {
                prec += &pre.eta_gram_bern / vx;
                let r3 = DVector::from_fn(d.n1, |i, _| (st.y3[i] - x_beta[ng + i]) / vx);
                rhs += pb.g.rows(ng, d.n1).transpose() * r3;
            }
            st.eta = gaussian_draw(prec, &rhs, &mut rng).map_err(|e| e.at("iteration", it))?;
        }
        let g_eta = &pb.g * &st.eta;

        // ξ on Gaussian rows
        for i in 0..ng {
            let prec = 1.0 / pb.var[i] + 1.0 / vx;
            let mean = (pb.z[i] - x_beta[i] - g_eta[i]) / pb.var[i] / prec;
            let e: f64 = StandardNormal.sample(&mut rng);
            st.xi[i] = mean + e / prec.sqrt();
        }

        // Bernoulli latents
        for j in 0..d.n1 {
            let row = ng + j;
            let mu = x_beta[row] + g_eta[row];
            if cfg.include_bernoulli {
                let z3 = pb.z3[j];
                let target = |y: f64| indicator_log_target(y, z3, mu, vx);
                if !target(st.y3[j]).is_finite() {
                    return Err(
                        Error::Numerical("non-finite log posterior".into()).at("iteration", it)
                    );
                }
                let (y, moved) = rw_step(st.y3[j], st.scales[j], target, &mut rng);
                st.y3[j] = y;
                if moved {
                    st.accepted[j] += 1;
                    if it >= cfg.burnin {
                        acc_post += 1;
                    }
                }
                if it >= cfg.burnin {
                    tried_post += 1;
                }
            } else {
                let e: f64 = StandardNormal.sample(&mut rng);
                st.y3[j] = mu + vx.sqrt() * e;
            }
            st.xi[row] = st.y3[j] - mu;
        }

        // variances
        if cfg.fixed_variances.is_none() {
            let k_xi = if cfg.include_bernoulli { n } else { ng };
            let xi_ss: f64 = st.xi.rows(0, k_xi).norm_squared();
            st.variances = [
                inv_gamma_draw(
                    a0 + p as f64 / 2.0,
                    b0 + st.beta.norm_squared() / 2.0,
                    &mut rng,
                ),
                inv_gamma_draw(
                    a0 + k as f64 / 2.0,
                    b0 + st.eta.norm_squared() / 2.0,
                    &mut rng,
                ),
                inv_gamma_draw(a0 + k_xi as f64 / 2.0, b0 + xi_ss / 2.0, &mut rng),
            ];
        }
        if st.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(
                Error::Numerical("variance draw left the positive reals".into())
                    .at("iteration", it),
            );
        }

        out.beta.row_mut(it).copy_from(&st.beta.transpose());
        out.eta.row_mut(it).copy_from(&st.eta.transpose());
        for (j, v) in st.variances.iter().enumerate() {
            out.variances[(it, j)] = *v;
        }
        for j in 0..xi_keep {
            out.xi_head[(it, j)] = st.xi[j];
        }

        if (it + 1) % cfg.batch == 0 {
            if it < cfg.burnin && cfg.include_bernoulli {
                let b = (it + 1) / cfg.batch;
                for j in 0..d.n1 {
                    st.scales[j] = adapt_scale(
                        st.accepted[j] as usize,
                        cfg.batch,
                        cfg.target_accept,
                        st.scales[j],
                        b,
                    );
                }
            }
            st.accepted.iter_mut().for_each(|a| *a = 0);
            out.scale_history.push((it + 1, st.scales.clone()));
        }
    }
    out.accept_rate = if tried_post > 0 {
        acc_post as f64 / tried_post as f64
    } else {
        0.0
    };
    Ok(out)
}

/// Runs `cfg.chains` independent chains; chain `c` uses random stream `c`.
pub fn run_mcmc(pb: &McmcProblem, cfg: &McmcConfig, policy: &ExecPolicy) -> Result<ChainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let pre = precompute(pb);
    let chains = policy
        .map(cfg.chains, |c| {
            run_chain(pb, &pre, cfg, c).map_err(|e| e.at("chain", c))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainOutput {
        chains,
        burnin: cfg.burnin,
        iters: cfg.iters,
        dims: pb.dims,
        timing: FitTiming::from_elapsed(start.elapsed(), cfg.iters * cfg.chains),
    })
}

/// Potential scale reduction factor and its upper 97.5% limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psrf {
    pub point: f64,
    pub upper: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 - 1.0)
}

/// Gelman–Rubin diagnostic for equal-length chains.
///
/// `R̂² = 1 + (1 + 1/m) B/(nW)`, times the usual `(d + 3)/(d + 1)` degrees
/// of freedom correction, where `B/n` is the variance of the chain means and
/// `W` the mean within-chain variance. Identical chains give exactly 1; a
/// constant parameter gives `(1, 1)`.
pub fn psrf(chains: &[Vec<f64>]) -> Result<Psrf> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::Diagnostic(
            "Gelman-Rubin needs at least two chains".into(),
        ));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostic(
            "Gelman-Rubin needs equal chains of length >= 2".into(),
        ));
    }
    let (mf, nf) = (m as f64, n as f64);
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let s2: Vec<f64> = chains.iter().map(|c| var(c)).collect();
    let w = mean(&s2);
    let b_over_n = var(&means);
    if w == 0.0 {
        return Ok(if b_over_n == 0.0 {
            Psrf {
                point: 1.0,
                upper: 1.0,
            }
        } else {
            Psrf {
                point: f64::INFINITY,
                upper: f64::INFINITY,
            }
        });
    }
    let b = nf * b_over_n;
    let random = (1.0 + 1.0 / mf) * b_over_n / w;
    let v = w + (1.0 + 1.0 / mf) * b_over_n;

    let var_w = var(&s2) / mf;
    let var_b = 2.0 * b * b / (mf - 1.0);
    let means_sq: Vec<f64> = means.iter().map(|x| x * x).collect();
    let grand = mean(&means);
    let cov_wb = nf / mf * (cov(&s2, &means_sq) - 2.0 * grand * cov(&s2, &means));
    let var_v =
        var_w + (1.0 + 1.0 / mf).powi(2) * var_b / (nf * nf) + 2.0 * (1.0 + 1.0 / mf) * cov_wb / nf;
    let df_adj = if var_v > 0.0 {
        let df_v = 2.0 * v * v / var_v;
        (df_v + 3.0) / (df_v + 1.0)
    } else {
        1.0
    };

    // The F quantile loses accuracy and stalls beyond this df; at 1e6 it
    // agrees with the chi-squared limit to about 1e-5.
    const MAX_DF: f64 = 1e6;
    let df_w = if var_w > 0.0 {
        (2.0 * w * w / var_w).min(MAX_DF)
    } else {
        MAX_DF
    };
    let q = FisherSnedecor::new(mf - 1.0, df_w)
        .map_err(|e| Error::Diagnostic(format!("F quantile: {e}")))?
        .inverse_cdf(0.975);
    Ok(Psrf {
        point: (df_adj * (1.0 + random)).sqrt(),
        upper: (df_adj * (1.0 + q * random)).sqrt(),
    })
}

/// [`psrf`] for one tracked parameter of a multi-chain run.
pub fn gelman_rubin(out: &ChainOutput, param: Param) -> Result<Psrf> {
    if out.chains.len() < 2 {
        return Err(Error::Diagnostic(
            "Gelman-Rubin needs at least two chains".into(),
        ));
    }
    let traces = (0..out.chains.len())
        .map(|c| out.trace(c, param))
        .collect::<Result<Vec<_>>>()?;
    psrf(&traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adaptation_direction() {
        assert_eq!(adapt_scale(22, 50, 0.44, 1.3, 7), 1.3);
        let mut s = 1.0;
        for b in 1..20 {
            let next = adapt_scale(50, 50, 0.44, s, b);
            assert!(next > s);
            s = next;
        }
        assert!(adapt_scale(0, 50, 0.44, 1.0, 1) < 1.0);
        assert_relative_eq!(
            adapt_scale(0, 50, 0.44, 1.0, 40_000).ln(),
            -1.0 / 200.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn adaptive_metropolis_on_standard_normal() {
        let mut rng = stream(5, Purpose::Test, 0);
        let mut scale = 0.05;
        let mut y = 0.0;
        let target = |v: f64| -0.5 * v * v;
        for b in 1..=400 {
            let mut acc = 0;
            for _ in 0..50 {
                let (ny, moved) = rw_step(y, scale, target, &mut rng);
                y = ny;
                acc += moved as usize;
            }
            scale = adapt_scale(acc, 50, 0.44, scale, b);
        }
        let mut acc = 0;
        let m = 50_000;
        for _ in 0..m {
            let (ny, moved) = rw_step(y, scale, target, &mut rng);
            y = ny;
            acc += moved as usize;
        }
        let rate = acc as f64 / m as f64;
        assert!((0.35..=0.55).contains(&rate), "{rate}");
    }

    #[test]
    fn psrf_cases() {
        let mut rng = stream(6, Purpose::Test, 0);
        let a: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(psrf(&[a.clone(), a.clone()]).unwrap().point, 1.0);
        assert_eq!(
            psrf(&[vec![2.0; 10], vec![2.0; 10]]).unwrap(),
            Psrf {
                point: 1.0,
                upper: 1.0
            }
        );
        assert!(psrf(&[a.clone()]).is_err());
        let b: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = psrf(&[b.clone(), c]).unwrap();
        assert!(r.point <= 1.1 && r.upper >= r.point);
        let far: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        assert!(psrf(&[b, far]).unwrap().point > 1.1);
    }

    #[test]
    fn gaussian_draw_moments() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let rhs = DVector::from_vec(vec![1.0, -1.0]);
        let cov = prec.clone().try_inverse().unwrap();
        let want = &cov * &rhs;
        let mut rng = stream(7, Purpose::Test, 0);
        let m = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..m {
            let x = gaussian_draw(prec.clone(), &rhs, &mut rng).unwrap();
            sum += &x;
            sq += &x * x.transpose();
        }
        let mean = sum / m as f64;
        let emp = sq / m as f64 - &mean * mean.transpose();
        for i in 0..2 {
            assert!((mean[i] - want[i]).abs() < 4.0 * (cov[(i, i)] / m as f64).sqrt());
        }
        assert!((emp - cov).amax() < 0.02);
    }

    #[test]
    fn config_validation() {
        let bad = McmcConfig {
            iters: 10,
            burnin: 10,
            ..McmcConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(McmcConfig::default().validate().is_ok());
    }
}
