//! Deterministic model objects: the observed dataset, the design blocks X and G,
//! the stacked matrix H, its orthogonal complement Q, the DY parameter vector,
//! the block scaling D(θ) and the hyperprior.
//!
//! Row order everywhere is: response-1 points (those with `z3 = 1`, in dataset
//! order), then regions, then all points for response 3. H has block rows
//! `[I X G; 0 I 0; 0 0 I; I 0 0]` acting on `ζ = (ξ, β, η)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{build_g, validate_partition, ArealRegion, BasisSet, CellGrid, Coord};
use crate::dy::{ln_gamma_variate, DySpec, DyVector};
use crate::error::{Error, Result};
use crate::linalg::{normalize_column_signs, stacked_identity_r, upper_triangular_inverse};
use crate::par::ExecPolicy;

/// One point location, carrying both the indicator and (when present) the
/// continuous response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointObs {
    pub id: String,
    pub coord: Coord,
    /// Present exactly when `z3` is true.
    pub z1: Option<f64>,
    pub z3: bool,
    pub var1: f64,
    pub x1: Vec<f64>,
    pub x3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionObs {
    pub region: ArealRegion,
    pub z2: f64,
    pub var2: f64,
    pub x2: Vec<f64>,
}

/// The observed triple `(z1, z2, z3)` with its supports and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTypeDataset {
    pub grid: CellGrid,
    pub points: Vec<PointObs>,
    pub regions: Vec<RegionObs>,
}

impl MultiTypeDataset {
    /// Builds and validates.
    pub fn new(grid: CellGrid, points: Vec<PointObs>, regions: Vec<RegionObs>) -> Result<Self> {
        let ds = MultiTypeDataset {
            grid,
            points,
            regions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let p1 = self.points.first().map_or(0, |p| p.x1.len());
        let p3 = self.points.first().map_or(0, |p| p.x3.len());
        let p2 = self.regions.first().map_or(0, |r| r.x2.len());
        for pt in &self.points {
            let row = || format!("point {}", pt.id);
            match (pt.z3, pt.z1) {
                (true, None) => return Err(Error::data(row(), "z3 = 1 but z1 is missing")),
                (false, Some(_)) => return Err(Error::data(row(), "z1 present where z3 = 0")),
                (true, Some(z)) if !z.is_finite() => {
                    return Err(Error::data(row(), "z1 is not finite"))
                }
                _ => {}
            }
            if !(pt.var1.is_finite() && pt.var1 > 0.0) {
                return Err(Error::data(
                    row(),
                    format!("var1 = {} must be positive", pt.var1),
                ));
            }
            if !(pt.coord[0].is_finite() && pt.coord[1].is_finite()) {
                return Err(Error::data(row(), "coordinate is not finite"));
            }
            if pt.x1.len() != p1 || pt.x3.len() != p3 {
                return Err(Error::data(
                    row(),
                    "covariate count differs from the first point",
                ));
            }
            if pt.x1.iter().chain(&pt.x3).any(|v| !v.is_finite()) {
                return Err(Error::data(row(), "covariate is not finite"));
            }
        }
        for reg in &self.regions {
            let row = || format!("region {}", reg.region.id);
            if !reg.z2.is_finite() {
                return Err(Error::data(row(), "z2 is not finite"));
            }
            if !(reg.var2.is_finite() && reg.var2 > 0.0) {
                return Err(Error::data(
                    row(),
                    format!("var2 = {} must be positive", reg.var2),
                ));
            }
            if reg.x2.len() != p2 {
                return Err(Error::data(
                    row(),
                    "covariate count differs from the first region",
                ));
            }
            if reg.x2.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(row(), "covariate is not finite"));
            }
        }
        let areal: Vec<ArealRegion> = self.regions.iter().map(|r| r.region.clone()).collect();
        validate_partition(&areal, &self.grid, false)
    }

    /// Points entering response 1, i.e. those with `z3 = 1`.
    pub fn response1(&self) -> impl Iterator<Item = &PointObs> {
        self.points.iter().filter(|p| p.z3)
    }

    pub fn dims(&self, r: usize) -> Dims {
        Dims {
            n1s: self.response1().count(),
            n2: self.regions.len(),
            n1: self.points.len(),
            p1: self.points.first().map_or(0, |p| p.x1.len()),
            p2: self.regions.first().map_or(0, |r| r.x2.len()),
            p3: self.points.first().map_or(0, |p| p.x3.len()),
            r,
        }
    }
}

/// Dimension bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Points with `z3 = 1`.
    pub n1s: usize,
    pub n2: usize,
    pub n1: usize,
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub r: usize,
}

impl Dims {
    pub fn n(&self) -> usize {
        self.n1s + self.n2 + self.n1
    }

    pub fn p(&self) -> usize {
        self.p1 + self.p2 + self.p3
    }

    /// Columns of `[X G]`.
    pub fn s(&self) -> usize {
        self.p() + 3 * self.r
    }

    /// Rows of H and length of the DY vector: `2n + p + 3r`.
    pub fn rows(&self) -> usize {
        2 * self.n() + self.s()
    }

    /// Columns of H and length of ζ: `n + p + 3r`.
    pub fn cols(&self) -> usize {
        self.n() + self.s()
    }

    /// End offsets of the data blocks in the row order: `[n1*, n1*+n2, n]`.
    pub fn data_offsets(&self) -> [usize; 3] {
        [self.n1s, self.n1s + self.n2, self.n()]
    }
}

/// Block-diagonal covariate matrix with blocks `X1 (n1* × p1)`, `X2 (n2 × p2)`, `X3 (n1 × p3)`.
pub fn build_x(ds: &MultiTypeDataset) -> Result<DMatrix<f64>> {
    let d = ds.dims(0);
    let mut x = DMatrix::zeros(d.n(), d.p());
    for (i, pt) in ds.response1().enumerate() {
        if pt.x1.len() != d.p1 {
            return Err(Error::dimension(
                format!("X1 row {}", pt.id),
                d.p1,
                pt.x1.len(),
            ));
        }
        for (j, v) in pt.x1.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    for (k, reg) in ds.regions.iter().enumerate() {
        if reg.x2.len() != d.p2 {
            return Err(Error::dimension(
                format!("X2 row {}", reg.region.id),
                d.p2,
                reg.x2.len(),
            ));
        }
        for (j, v) in reg.x2.iter().enumerate() {
            x[(d.n1s + k, d.p1 + j)] = *v;
        }
    }
    for (k, pt) in ds.points.iter().enumerate() {
        if pt.x3.len() != d.p3 {
            return Err(Error::dimension(
                format!("X3 row {}", pt.id),
                d.p3,
                pt.x3.len(),
            ));
        }
        for (j, v) in pt.x3.iter().enumerate() {
            x[(d.n1s + d.n2 + k, d.p1 + d.p2 + j)] = *v;
        }
    }
    Ok(x)
}

/// Basis matrix for the dataset's supports.
pub fn build_g_for(ds: &MultiTypeDataset, basis: &BasisSet) -> Result<DMatrix<f64>> {
    let p1: Vec<Coord> = ds.response1().map(|p| p.coord).collect();
    let p3: Vec<Coord> = ds.points.iter().map(|p| p.coord).collect();
    let regions: Vec<ArealRegion> = ds.regions.iter().map(|r| r.region.clone()).collect();
    build_g(&p1, &regions, &p3, basis, &ds.grid)
}

/// Dense H with block rows `[I X G; 0 I 0; 0 0 I; I 0 0]`.
pub fn build_h(x: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if g.nrows() != n {
        return Err(Error::dimension("G rows", n, g.nrows()));
    }
    let (p, q3) = (x.ncols(), g.ncols());
    let s = p + q3;
    let mut h = DMatrix::zeros(2 * n + s, n + s);
    for i in 0..n {
        h[(i, i)] = 1.0;
        h[(n + s + i, i)] = 1.0;
    }
    h.view_mut((0, n), (n, p)).copy_from(x);
    h.view_mut((0, n + p), (n, q3)).copy_from(g);
    for j in 0..s {
        h[(n + j, n + j)] = 1.0;
    }
    Ok(h)
}

/// Orthonormal basis of the null space of `Hᵀ` for an arbitrary full-rank H,
/// by a full Householder factorization.
pub fn build_q(h: &DMatrix<f64>, policy: &ExecPolicy) -> Result<DMatrix<f64>> {
    crate::linalg::orthogonal_complement(h, policy)
}

/// The DY vector of the exact posterior:
/// response-1 and response-2 rows `(z/σ², 1/(2σ²))`, Bernoulli rows
/// `(z3 + α_ξ, 1 + 2α_ξ)`, then `n + p + 3r` standard normal components.
pub fn build_alpha_kappa(ds: &MultiTypeDataset, alpha_xi: f64, r: usize) -> Result<DyVector> {
    if !(alpha_xi.is_finite() && alpha_xi > 0.0) {
        return Err(Error::domain(
            "alpha_xi",
            alpha_xi,
            "must be finite and > 0",
        ));
    }
    let d = ds.dims(r);
    let mut specs = Vec::with_capacity(d.rows());
    for pt in ds.response1() {
        let z = pt.z1.expect("validated: z1 present where z3 = 1");
        specs.push(
            DySpec::gaussian(z / pt.var1, 0.5 / pt.var1)
                .map_err(|e| e.at("component", specs.len()))?,
        );
    }
    for reg in &ds.regions {
        specs.push(
            DySpec::gaussian(reg.z2 / reg.var2, 0.5 / reg.var2)
                .map_err(|e| e.at("component", specs.len()))?,
        );
    }
    for pt in &ds.points {
        let z = if pt.z3 { 1.0 } else { 0.0 };
        specs.push(
            DySpec::bernoulli(z + alpha_xi, 1.0 + 2.0 * alpha_xi)
                .map_err(|e| e.at("component", specs.len()))?,
        );
    }
    specs.extend(std::iter::repeat_n(DySpec::standard_normal(), d.cols()));
    debug_assert_eq!(specs.len(), d.rows());
    Ok(DyVector::new(specs))
}

/// Scale hyperparameters `θ = (σ_β, σ_η, σ_ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub sigma_beta: f64,
    pub sigma_eta: f64,
    pub sigma_xi: f64,
}

impl Theta {
    pub const ONES: Theta = Theta {
        sigma_beta: 1.0,
        sigma_eta: 1.0,
        sigma_xi: 1.0,
    };

    pub fn new(sigma_beta: f64, sigma_eta: f64, sigma_xi: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma_beta", sigma_beta),
            ("sigma_eta", sigma_eta),
            ("sigma_xi", sigma_xi),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(name, v, "must be finite and > 0"));
            }
        }
        Ok(Theta {
            sigma_beta,
            sigma_eta,
            sigma_xi,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma_beta, self.sigma_eta, self.sigma_xi]
    }
}

/// `D(θ) = blkdiag(I_n, σ_β I_p, σ_η I_3r, σ_ξ I_n)` as a diagonal operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScaling {
    n: usize,
    p: usize,
    r3: usize,
    theta: Theta,
}

impl BlockScaling {
    pub fn new(dims: &Dims, theta: Theta) -> Self {
        Self::from_sizes(dims.n(), dims.p(), 3 * dims.r, theta)
    }

    /// Block sizes given directly; `eta_len` is the full η length.
    pub fn from_sizes(n: usize, p: usize, eta_len: usize, theta: Theta) -> Self {
        BlockScaling {
            n,
            p,
            r3: eta_len,
            theta,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n + self.p + self.r3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn factors(&self) -> [(usize, f64); 4] {
        [
            (self.n, 1.0),
            (self.p, self.theta.sigma_beta),
            (self.r3, self.theta.sigma_eta),
            (self.n, self.theta.sigma_xi),
        ]
    }

    fn scale(&self, v: &mut [f64], invert: bool) {
        assert_eq!(v.len(), self.len(), "vector length must match D(θ)");
        let mut at = 0;
        for (len, f) in self.factors() {
            let f = if invert { 1.0 / f } else { f };
            if f != 1.0 {
                v[at..at + len].iter_mut().for_each(|x| *x *= f);
            }
            at += len;
        }
    }

    /// `v ← D v`
    pub fn apply(&self, v: &mut [f64]) {
        self.scale(v, false)
    }

    /// `v ← D⁻¹ v`
    pub fn apply_inverse(&self, v: &mut [f64]) {
        self.scale(v, true)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::from_element(self.len(), 1.0);
        self.apply(d.as_mut_slice());
        d
    }
}

pub fn build_d(dims: &Dims, theta: Theta) -> BlockScaling {
    BlockScaling::new(dims, theta)
}

/// Prior family for one scale parameter σ. Serialized as its string form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScalePrior {
    PointMass(f64),
    /// `log σ ~ Uniform(log lo, log hi)`
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// `σ² ~ InverseGamma(shape, scale)`
    InverseGammaVariance {
        shape: f64,
        scale: f64,
    },
}

impl Default for ScalePrior {
    fn default() -> Self {
        ScalePrior::LogUniform { lo: 1e-2, hi: 1e2 }
    }
}

impl ScalePrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalePrior::PointMass(v) => v.is_finite() && v > 0.0,
            ScalePrior::LogUniform { lo, hi } => {
                lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo
            }
            ScalePrior::InverseGammaVariance { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "improper or invalid scale prior {self}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalePrior::PointMass(v) => v,
            ScalePrior::LogUniform { lo, hi } => {
                let u: f64 = Uniform::new(lo.ln(), hi.ln())
                    .expect("validated bounds")
                    .sample(rng);
                u.exp()
            }
            ScalePrior::InverseGammaVariance { shape, scale } => {
                (0.5 * (scale.ln() - ln_gamma_variate(shape, rng))).exp()
            }
        }
    }
}

impl std::fmt::Display for ScalePrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            ScalePrior::PointMass(v) => write!(f, "point:{v}"),
            ScalePrior::LogUniform { lo, hi } => write!(f, "log-uniform:{lo}:{hi}"),
            ScalePrior::InverseGammaVariance { shape, scale } => {
                write!(f, "inv-gamma:{shape}:{scale}")
            }
        }
    }
}

impl std::str::FromStr for ScalePrior {
    type Err = Error;

    /// `point:v`, `log-uniform:lo:hi` or `inv-gamma:shape:scale`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let family = parts.next().unwrap_or_default().trim();
        let args = parts
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number {a:?} in prior {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let prior = match (family, args.as_slice()) {
            ("point", [v]) => ScalePrior::PointMass(*v),
            ("log-uniform", [lo, hi]) => ScalePrior::LogUniform { lo: *lo, hi: *hi },
            ("inv-gamma", [shape, scale]) => ScalePrior::InverseGammaVariance {
                shape: *shape,
                scale: *scale,
            },
            _ => return Err(Error::Config(format!("unknown prior family {s:?}"))),
        };
        prior.validate()?;
        Ok(prior)
    }
}

impl TryFrom<String> for ScalePrior {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScalePrior> for String {
    fn from(p: ScalePrior) -> String {
        p.to_string()
    }
}

/// Independent priors for `(σ_β, σ_η, σ_ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPrior {
    pub sigma_beta: ScalePrior,
    pub sigma_eta: ScalePrior,
    pub sigma_xi: ScalePrior,
}

impl HyperPrior {
    pub fn point_mass(theta: Theta) -> Self {
        HyperPrior {
            sigma_beta: ScalePrior::PointMass(theta.sigma_beta),
            sigma_eta: ScalePrior::PointMass(theta.sigma_eta),
            sigma_xi: ScalePrior::PointMass(theta.sigma_xi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_beta.validate()?;
        self.sigma_eta.validate()?;
        self.sigma_xi.validate()
    }
}

/// Hyperparameter configuration: the θ prior plus the fixed `α_ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub alpha_xi: f64,
    pub prior: HyperPrior,
}

impl Default for HyperState {
    fn default() -> Self {
        HyperState {
            alpha_xi: 1.0,
            prior: HyperPrior::default(),
        }
    }
}

impl HyperState {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_xi.is_finite() && self.alpha_xi > 0.0) {
            return Err(Error::domain(
                "alpha_xi",
                self.alpha_xi,
                "must be finite and > 0",
            ));
        }
        self.prior.validate()
    }
}

/// One independent draw of θ; the three scales are drawn in a fixed order.
pub fn draw_theta<R: Rng + ?Sized>(prior: &HyperPrior, rng: &mut R) -> Theta {
    Theta {
        sigma_beta: prior.sigma_beta.sample(rng),
        sigma_eta: prior.sigma_eta.sample(rng),
        sigma_xi: prior.sigma_xi.sample(rng),
    }
}

/// Everything the sampler needs from the design.
///
/// With `B = [X G]` (n × s), H has the null-space basis
/// `N = [I; −Xᵀ; −Gᵀ; −I]` and `NᵀN = 2I + BBᵀ = R_Nᵀ R_N`, so
/// `Q = N T` with `T = R_N⁻¹` (column signs normalized) is orthonormal.
/// `R_S` is the Cholesky factor of `I + BᵀB/2`, the Schur complement that
/// appears when eliminating ξ from the normal equations of H.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub dims: Dims,
    pub x: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `[X G]`
    pub b: DMatrix<f64>,
    /// Upper triangular, `R_SᵀR_S = I + BᵀB/2`.
    pub r_s: DMatrix<f64>,
    /// Upper triangular top block of Q.
    pub t: DMatrix<f64>,
}

impl ModelMatrices {
    pub fn from_dataset(
        ds: &MultiTypeDataset,
        basis: &BasisSet,
        policy: &ExecPolicy,
    ) -> Result<Self> {
        let x = build_x(ds)?;
        let g = build_g_for(ds, basis)?;
        Self::from_blocks(ds.dims(basis.r()), x, g, policy)
    }

    pub fn from_blocks(
        dims: Dims,
        x: DMatrix<f64>,
        g: DMatrix<f64>,
        policy: &ExecPolicy,
    ) -> Result<Self> {
        let n = dims.n();
        if x.shape() != (n, dims.p()) {
            return Err(Error::dimension("X columns", dims.p(), x.ncols()).at("X rows", x.nrows()));
        }
        if g.shape() != (n, 3 * dims.r) {
            return Err(
                Error::dimension("G columns", 3 * dims.r, g.ncols()).at("G rows", g.nrows())
            );
        }
        let mut b = DMatrix::zeros(n, dims.s());
        b.columns_mut(0, dims.p()).copy_from(&x);
        b.columns_mut(dims.p(), 3 * dims.r).copy_from(&g);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in [X G]".into()));
        }
        let r_s = stacked_identity_r(1.0, &(&b * std::f64::consts::FRAC_1_SQRT_2), policy)?;
        let r_n = stacked_identity_r(std::f64::consts::SQRT_2, &b.transpose(), policy)?;
        let mut t = upper_triangular_inverse(&r_n, policy)?;
        normalize_column_signs(&mut t);
        Ok(ModelMatrices {
            dims,
            x,
            g,
            b,
            r_s,
            t,
        })
    }

    /// Dense H.
    pub fn h(&self) -> DMatrix<f64> {
        build_h(&self.x, &self.g).expect("blocks validated at construction")
    }

    /// Dense Q `= [T; −XᵀT; −GᵀT; −T]`.
    pub fn q(&self) -> DMatrix<f64> {
        let n = self.dims.n();
        let s = self.dims.s();
        let mut q = DMatrix::zeros(2 * n + s, n);
        q.rows_mut(0, n).copy_from(&self.t);
        q.rows_mut(n, s)
            .copy_from(&(-(self.b.transpose() * &self.t)));
        q.rows_mut(n + s, n).copy_from(&(-&self.t));
        q
    }
}
