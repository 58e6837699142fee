//! Diaconis–Ylvisaker random variables with Gaussian and Bernoulli unit
//! log-partition functions.
//!
//! A DY(α, κ; ψ) variable has density proportional to `exp(α w − κ ψ(w))`.
//! With `ψ(w) = w²` this is `Normal(α / 2κ, 1 / 2κ)`; with
//! `ψ(w) = log(1 + eʷ)` it is the logit of a `Beta(α, κ − α)` variable.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{digamma, log1p_exp, trigamma};

/// Which unit log-partition function a component uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionTag {
    /// `ψ(w) = w²`
    Gaussian,
    /// `ψ(w) = log(1 + eʷ)`
    Bernoulli,
}

impl PartitionTag {
    pub fn psi(self, w: f64) -> f64 {
        match self {
            PartitionTag::Gaussian => w * w,
            PartitionTag::Bernoulli => log1p_exp(w),
        }
    }
}

/// One DY component. Construction enforces the parameter domain, so a value
/// of this type can always be sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DySpec {
    alpha: f64,
    kappa: f64,
    tag: PartitionTag,
}

impl DySpec {
    pub fn new(alpha: f64, kappa: f64, tag: PartitionTag) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::domain("alpha", alpha, "must be finite"));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::domain("kappa", kappa, "must be finite and > 0"));
        }
        if tag == PartitionTag::Bernoulli {
            if !(alpha > 0.0) {
                return Err(Error::domain(
                    "alpha",
                    alpha,
                    "Bernoulli DY requires alpha > 0",
                ));
            }
            if !(kappa > alpha) {
                return Err(Error::domain(
                    "kappa",
                    kappa,
                    format!("Bernoulli DY requires kappa > alpha = {alpha}"),
                ));
            }
        }
        Ok(DySpec { alpha, kappa, tag })
    }

    pub fn gaussian(alpha: f64, kappa: f64) -> Result<Self> {
        Self::new(alpha, kappa, PartitionTag::Gaussian)
    }

    pub fn bernoulli(alpha: f64, kappa: f64) -> Result<Self> {
        Self::new(alpha, kappa, PartitionTag::Bernoulli)
    }

    /// DY(0, ½; ψ_G), i.e. a standard normal.
    pub fn standard_normal() -> Self {
        DySpec {
            alpha: 0.0,
            kappa: 0.5,
            tag: PartitionTag::Gaussian,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tag(&self) -> PartitionTag {
        self.tag
    }

    /// `α w − κ ψ(w)`, the log density up to its normalizing constant.
    pub fn log_kernel(&self, w: f64) -> f64 {
        self.alpha * w - self.kappa * self.tag.psi(w)
    }

    /// Posterior after observing `z` from the exponential family with scale `b`:
    /// DY(z + α, b + κ).
    pub fn update(&self, z: f64, b: f64) -> Result<Self> {
        Self::new(self.alpha + z, self.kappa + b, self.tag)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.tag {
            PartitionTag::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.alpha / (2.0 * self.kappa) + z / (2.0 * self.kappa).sqrt()
            }
            // logit(G₁ / (G₁ + G₂)) = log G₁ − log G₂, no division by a tiny p.
            PartitionTag::Bernoulli => {
                ln_gamma_variate(self.alpha, rng) - ln_gamma_variate(self.kappa - self.alpha, rng)
            }
        }
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        match self.tag {
            PartitionTag::Gaussian => (self.alpha / (2.0 * self.kappa), 1.0 / (2.0 * self.kappa)),
            PartitionTag::Bernoulli => {
                let b = self.kappa - self.alpha;
                (
                    digamma(self.alpha) - digamma(b),
                    trigamma(self.alpha) + trigamma(b),
                )
            }
        }
    }
}

/// Single draw from `spec`.
pub fn sample_dy<R: Rng + ?Sized>(spec: &DySpec, rng: &mut R) -> f64 {
    spec.sample(rng)
}

/// `(mean, variance)` of `spec`.
pub fn dy_moments(spec: &DySpec) -> (f64, f64) {
    spec.moments()
}

/// Logarithm of a unit-rate Gamma(`shape`) variate.
///
/// Marsaglia–Tsang for `shape ≥ 1`; below that the boost
/// `G_a = G_{a+1} · U^{1/a}` is applied on the log scale so that tiny shapes
/// do not underflow to `-inf`.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = Open01.sample(rng);
        return ln_gamma_variate(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = Open01.sample(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d.ln() + v.ln();
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// Ordered list of independent DY components; the `w` vector of the exact
/// posterior transformation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DyVector {
    specs: Vec<DySpec>,
}

impl DyVector {
    pub fn new(specs: Vec<DySpec>) -> Self {
        DyVector { specs }
    }

    /// Validates raw `(alpha, kappa, tag)` triples, reporting the offending index.
    pub fn from_parts(parts: &[(f64, f64, PartitionTag)]) -> Result<Self> {
        let specs = parts
            .iter()
            .enumerate()
            .map(|(i, &(a, k, t))| DySpec::new(a, k, t).map_err(|e| e.at("component", i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DyVector { specs })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[DySpec] {
        &self.specs
    }

    pub fn get(&self, i: usize) -> &DySpec {
        &self.specs[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.moments().0).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.moments().1).collect()
    }

    /// Fills `out` with one independent draw per component, in order.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(
            out.len(),
            self.specs.len(),
            "output length must match DY vector"
        );
        for (o, s) in out.iter_mut().zip(&self.specs) {
            *o = s.sample(rng);
        }
    }
}

/// Draws the whole `w` vector.
pub fn sample_w<R: Rng + ?Sized>(vec: &DyVector, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; vec.len()];
    vec.sample_into(rng, &mut out);
    out
}
