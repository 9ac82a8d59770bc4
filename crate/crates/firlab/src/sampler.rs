//! Seeded random sources for centered sub-Gaussian input and noise families.
//!
//! Every family is centered and parameterized by its variance. The psi2
//! (Orlicz) norm of one draw is available in closed form, so bound
//! evaluation can use exact `L_x` / `L_eps` values instead of estimates.
//!
//! Streams are counter-based: a `(master_seed, stream_id)` pair always
//! produces the same sequence, no matter how trials are scheduled across
//! threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while validating or sampling a distribution spec.
#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("variance must be a positive finite number, got {0}")]
    InvalidVariance(f64),

    #[error("psi2 norm must be a positive finite number, got {0}")]
    InvalidPsi2(f64),

    #[error("per-index scale {value} at index {idx} must be positive and finite")]
    InvalidScale { idx: usize, value: f64 },

    #[error(
        "per-index scale {value} at index {idx} implies variance {var} above the declared bound {bound}"
    )]
    ScaleAboveBound {
        idx: usize,
        value: f64,
        var: f64,
        bound: f64,
    },

    #[error("family {0:?} requires a per-index scale sequence")]
    MissingScales(Family),
}

/// The supported sub-Gaussian families.
///
/// `ScaledGaussianHeteroNoise` draws independent Gaussians whose standard
/// deviation cycles through a per-index scale sequence; its `variance` and
/// `psi2_norm` fields act as the common upper bounds over all indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Rademacher,
    Uniform,
    ScaledGaussianHeteroNoise,
}

/// A centered distribution with known variance and psi2-norm metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    /// Variance of one draw; for the heterogeneous family, the common
    /// upper bound over all time indices.
    pub variance: f64,
    /// Orlicz psi2 norm of one draw (upper bound for the heterogeneous
    /// family): the smallest `c` with `E exp(x^2/c^2) <= 2`.
    pub psi2_norm: f64,
    /// Per-index standard deviations, cycled over the time index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_index_scale: Option<Vec<f64>>,
}

impl DistributionSpec {
    pub fn gaussian(variance: f64) -> Result<Self, SamplerError> {
        Self::homogeneous(Family::Gaussian, variance)
    }

    pub fn rademacher(variance: f64) -> Result<Self, SamplerError> {
        Self::homogeneous(Family::Rademacher, variance)
    }

    /// Uniform on `[-sqrt(3 v), sqrt(3 v)]`, which has variance `v`.
    pub fn uniform(variance: f64) -> Result<Self, SamplerError> {
        Self::homogeneous(Family::Uniform, variance)
    }

    fn homogeneous(family: Family, variance: f64) -> Result<Self, SamplerError> {
        let spec = DistributionSpec {
            family,
            variance,
            psi2_norm: variance.max(0.0).sqrt() * psi2_norm_of(family),
            per_index_scale: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Gaussian noise with per-index standard deviations. The declared
    /// variance and psi2 bounds are taken at the largest scale.
    pub fn scaled_gaussian_hetero(scales: Vec<f64>) -> Result<Self, SamplerError> {
        let mut max_scale = 0.0f64;
        for (idx, &s) in scales.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(SamplerError::InvalidScale { idx, value: s });
            }
            max_scale = max_scale.max(s);
        }
        let spec = DistributionSpec {
            family: Family::ScaledGaussianHeteroNoise,
            variance: max_scale * max_scale,
            psi2_norm: max_scale * psi2_norm_of(Family::Gaussian),
            per_index_scale: Some(scales),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the invariants; used on deserialized specs before sampling.
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(SamplerError::InvalidVariance(self.variance));
        }
        if !(self.psi2_norm.is_finite() && self.psi2_norm > 0.0) {
            return Err(SamplerError::InvalidPsi2(self.psi2_norm));
        }
        match (&self.family, &self.per_index_scale) {
            (Family::ScaledGaussianHeteroNoise, None) => {
                Err(SamplerError::MissingScales(self.family))
            }
            (_, Some(scales)) => {
                for (idx, &s) in scales.iter().enumerate() {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(SamplerError::InvalidScale { idx, value: s });
                    }
                    let var = s * s;
                    if var > self.variance * (1.0 + 1e-12) {
                        return Err(SamplerError::ScaleAboveBound {
                            idx,
                            value: s,
                            var,
                            bound: self.variance,
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Standard deviation corresponding to the declared variance bound.
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Per-index variances for a sequence of the given length.
    pub fn variances(&self, len: usize) -> Vec<f64> {
        match &self.per_index_scale {
            Some(scales) => (0..len).map(|i| scales[i % scales.len()].powi(2)).collect(),
            None => vec![self.variance; len],
        }
    }
}

/// Identifies one reproducible random stream.
///
/// The same `(master_seed, stream_id)` yields the identical sequence
/// regardless of thread count or trial execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_id,
        }
    }

    /// Two disjoint substreams (input and noise of one trial own one each).
    pub fn split2(self) -> (SeedSpec, SeedSpec) {
        (
            SeedSpec::new(self.master_seed, 2 * self.stream_id),
            SeedSpec::new(self.master_seed, 2 * self.stream_id + 1),
        )
    }

    fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws `length` independent values from the family.
pub fn draw_sequence(
    spec: &DistributionSpec,
    seed: SeedSpec,
    length: usize,
) -> Result<Vec<f64>, SamplerError> {
    spec.validate()?;
    let mut rng = seed.rng();
    let out = match spec.family {
        Family::Gaussian => {
            let sigma = spec.sigma();
            (0..length)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        Family::Rademacher => {
            let sigma = spec.sigma();
            (0..length)
                .map(|_| if rng.random::<bool>() { sigma } else { -sigma })
                .collect()
        }
        Family::Uniform => {
            let half = (3.0 * spec.variance).sqrt();
            (0..length)
                .map(|_| half * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        }
        Family::ScaledGaussianHeteroNoise => {
            let scales = spec
                .per_index_scale
                .as_ref()
                .expect("validated hetero spec has scales");
            (0..length)
                .map(|i| scales[i % scales.len()] * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    Ok(out)
}

/// Exact Orlicz psi2 norm of one unit-variance draw from the family.
///
/// Convention: the smallest `c` with `E exp(x^2/c^2) <= 2`. Scaling a
/// variable by `s` scales the norm by `|s|`, so the variance-0 degenerate
/// point mass has norm 0.
pub fn psi2_norm_of(family: Family) -> f64 {
    match family {
        // E exp(x^2/c^2) = (1 - 2/c^2)^{-1/2} = 2  =>  c^2 = 8/3.
        Family::Gaussian | Family::ScaledGaussianHeteroNoise => (8.0f64 / 3.0).sqrt(),
        // exp(1/c^2) = 2  =>  c = 1/sqrt(ln 2).
        Family::Rademacher => 1.0 / (2.0f64).ln().sqrt(),
        Family::Uniform => uniform_unit_psi2(),
    }
}

/// psi2 norm of the unit-variance uniform, i.e. `c = sqrt(3)/t*` where
/// `t*` solves `sum_k t^{2k} / (k! (2k+1)) = 2` (the power series of
/// `E exp(x^2/c^2)` with `t = sqrt(3)/c`). The series is entire and
/// strictly increasing in `t`, so bisection is exact to roundoff.
fn uniform_unit_psi2() -> f64 {
    let g = |t: f64| -> f64 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..200 {
            sum += term / (2 * k + 1) as f64;
            term *= t * t / (k + 1) as f64;
            if term < 1e-18 {
                break;
            }
        }
        sum
    };
    let (mut lo, mut hi) = (1.0f64, 1.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    3.0f64.sqrt() / (0.5 * (lo + hi))
}
