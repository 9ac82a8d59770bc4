//! Closed-form evaluation of the theoretical bounds: estimation error,
//! oracle inequality, risk bound, spectrum concentration, multiplier
//! process, the sample-complexity formula, and the Fisher / CRLB
//! quantities used by the efficiency checks.
//!
//! The absolute constant `C` of the probabilistic bounds is a free
//! parameter (default 1); `montecarlo::calibrate_constant` fits the
//! smallest value consistent with an empirical reference sweep.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fir::DesignMatrix;
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("theorem {theorem} requires eta in (0, {max}], got {eta}")]
    EtaOutOfRange { theorem: u8, eta: f64, max: f64 },

    #[error("delta must lie in (0, 1), got {0}")]
    DeltaOutOfRange(f64),

    #[error("constant C must be nonnegative and finite, got {0}")]
    InvalidConstant(f64),

    #[error("{name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("spectrum tail level u must be at least 1, got {0}")]
    TailLevelTooSmall(f64),

    #[error("theorem id must be in 1..=5, got {0}")]
    UnknownTheorem(u8),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which theorem a bound value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    /// Square-error bound for the least squares estimate.
    Estimation,
    /// Oracle inequality for the misspecification prediction loss.
    Oracle,
    /// Excess prediction risk bound.
    Risk,
    /// Operator-norm concentration of the sample covariance.
    Spectrum,
    /// Norm bound for the multiplier process `X^T eps / N`.
    Multiplier,
}

impl TheoremId {
    pub fn from_index(idx: u8) -> Result<Self, BoundsError> {
        match idx {
            1 => Ok(TheoremId::Estimation),
            2 => Ok(TheoremId::Oracle),
            3 => Ok(TheoremId::Risk),
            4 => Ok(TheoremId::Spectrum),
            5 => Ok(TheoremId::Multiplier),
            other => Err(BoundsError::UnknownTheorem(other)),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            TheoremId::Estimation => 1,
            TheoremId::Oracle => 2,
            TheoremId::Risk => 3,
            TheoremId::Spectrum => 4,
            TheoremId::Multiplier => 5,
        }
    }
}

/// Inputs of the closed-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Spectrum half-width, in (0, 1).
    pub delta: f64,
    /// Failure probability; the admissible range depends on the theorem.
    pub eta: f64,
    /// Calibratable absolute constant.
    pub c: f64,
    /// psi2-norm upper bound of one input entry.
    pub l_x: f64,
    /// psi2-norm upper bound of one noise entry.
    pub l_eps: f64,
    /// Input standard deviation (unit by hypothesis, kept explicit).
    pub sigma_x: f64,
    /// Common noise standard-deviation upper bound.
    pub sigma_eps: f64,
    pub t: usize,
    pub n: usize,
}

/// One evaluated bound together with its sample-size condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: TheoremId,
    pub bound_value: f64,
    /// Smallest N satisfying the theorem's condition; ties count as met.
    pub min_n: usize,
    pub condition_met: bool,
}

const TWO_OVER_E: f64 = 2.0 / std::f64::consts::E;
const ONE_OVER_E: f64 = 1.0 / std::f64::consts::E;

impl BoundConfig {
    fn validate(&self, theorem: TheoremId) -> Result<(), BoundsError> {
        let eta_max = match theorem {
            TheoremId::Estimation | TheoremId::Oracle => TWO_OVER_E,
            TheoremId::Risk | TheoremId::Spectrum => ONE_OVER_E,
            TheoremId::Multiplier => 1.0,
        };
        let eta_ok = match theorem {
            TheoremId::Multiplier => self.eta > 0.0 && self.eta < eta_max,
            _ => self.eta > 0.0 && self.eta <= eta_max,
        };
        if !eta_ok {
            return Err(BoundsError::EtaOutOfRange {
                theorem: theorem.index(),
                eta: self.eta,
                max: eta_max,
            });
        }
        if matches!(
            theorem,
            TheoremId::Estimation | TheoremId::Oracle | TheoremId::Risk
        ) && !(self.delta > 0.0 && self.delta < 1.0)
        {
            return Err(BoundsError::DeltaOutOfRange(self.delta));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(BoundsError::InvalidConstant(self.c));
        }
        for (name, value) in [
            ("l_x", self.l_x),
            ("l_eps", self.l_eps),
            ("sigma_x", self.sigma_x),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(BoundsError::InvalidParameter { name, value });
            }
        }
        if self.t == 0 || self.n == 0 {
            return Err(BoundsError::InvalidParameter {
                name: "t/n",
                value: 0.0,
            });
        }
        Ok(())
    }

    fn ratio(&self) -> f64 {
        self.t as f64 / self.n as f64
    }

    /// `ceil(C (L_x^2 v L_x^4) T ln(T v 1/eta) / delta^2)`.
    fn min_sample_size(&self) -> usize {
        let lx2 = self.l_x * self.l_x;
        let l_factor = lx2.max(lx2 * lx2);
        let log_factor = (self.t as f64).max(1.0 / self.eta).ln();
        let raw = self.c * l_factor * self.t as f64 * log_factor / (self.delta * self.delta);
        raw.ceil() as usize
    }

    fn report(&self, theorem: TheoremId, bound_value: f64) -> BoundReport {
        let min_n = match theorem {
            TheoremId::Multiplier => 1,
            _ => self.min_sample_size(),
        };
        BoundReport {
            theorem,
            bound_value,
            min_n,
            condition_met: self.n >= min_n,
        }
    }
}

/// Square-error bound
/// `(2/(1-delta)^2) (T/N) (1 + C L_x^2 L_eps^2 ln^2(2/eta))`.
pub fn thm1_estimation_bound(cfg: &BoundConfig) -> Result<BoundReport, BoundsError> {
    cfg.validate(TheoremId::Estimation)?;
    let log_term = (2.0 / cfg.eta).ln().powi(2);
    let value = 2.0 / (1.0 - cfg.delta).powi(2)
        * cfg.ratio()
        * (1.0 + cfg.c * cfg.l_x.powi(2) * cfg.l_eps.powi(2) * log_term);
    Ok(cfg.report(TheoremId::Estimation, value))
}

/// Oracle-inequality bound
/// `(2/(1-delta)) (T/N) sigma_eps (1 + C L_x^2 L_eps^2 ln^2(2/eta))`.
pub fn thm2_oracle_bound(cfg: &BoundConfig) -> Result<BoundReport, BoundsError> {
    cfg.validate(TheoremId::Oracle)?;
    let log_term = (2.0 / cfg.eta).ln().powi(2);
    let value = 2.0 / (1.0 - cfg.delta)
        * cfg.ratio()
        * cfg.sigma_eps
        * (1.0 + cfg.c * cfg.l_x.powi(2) * cfg.l_eps.powi(2) * log_term);
    Ok(cfg.report(TheoremId::Oracle, value))
}

/// Excess-risk bound `((1+delta)/(1-delta)) (T/N) sigma_eps^2`.
pub fn thm3_risk_bound(cfg: &BoundConfig) -> Result<BoundReport, BoundsError> {
    cfg.validate(TheoremId::Risk)?;
    let value =
        (1.0 + cfg.delta) / (1.0 - cfg.delta) * cfg.ratio() * cfg.sigma_eps * cfg.sigma_eps;
    Ok(cfg.report(TheoremId::Risk, value))
}

/// Spectrum deviation bound at tail level `u >= 1`:
/// `C L_x^2 (T lnT/N + sqrt(T lnT/N) + (T/N) u + sqrt(T/N) sqrt(u))`,
/// holding with probability `1 - e^{-u}`.
pub fn thm4_spectrum_bound(cfg: &BoundConfig, u: f64) -> Result<f64, BoundsError> {
    cfg.validate(TheoremId::Spectrum)?;
    if !(u >= 1.0) {
        return Err(BoundsError::TailLevelTooSmall(u));
    }
    let r = cfg.ratio();
    let rlog = r * (cfg.t as f64).ln();
    Ok(cfg.c * cfg.l_x.powi(2) * (rlog + rlog.sqrt() + r * u + r.sqrt() * u.sqrt()))
}

/// Multiplier-process bound
/// `sqrt(T/N) sigma_x sigma_eps (1 + C L_eps L_x (ln(1/eta) v ln^{3/4}(1/eta)))`.
pub fn thm5_multiplier_bound(cfg: &BoundConfig) -> Result<f64, BoundsError> {
    cfg.validate(TheoremId::Multiplier)?;
    let log = (1.0 / cfg.eta).ln();
    let log_term = log.max(log.powf(0.75));
    Ok(cfg.ratio().sqrt()
        * cfg.sigma_x
        * cfg.sigma_eps
        * (1.0 + cfg.c * cfg.l_eps * cfg.l_x * log_term))
}

/// Sample size sufficient for a square error of at most `epsilon`:
/// `ceil((1/eps) max(C_rate T ln^2(1/eta) / (1-delta)^2,
///                   C_cond T ln(T v 1/eta) / delta^2))`.
pub fn sample_complexity(
    epsilon: f64,
    eta: f64,
    delta: f64,
    t: usize,
    c_rate: f64,
    c_cond: f64,
) -> Result<usize, BoundsError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(BoundsError::InvalidParameter {
            name: "epsilon",
            value: epsilon,
        });
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(BoundsError::EtaOutOfRange {
            theorem: 1,
            eta,
            max: 1.0,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundsError::DeltaOutOfRange(delta));
    }
    let t_f = t as f64;
    let rate = c_rate * t_f * (1.0 / eta).ln().powi(2) / (1.0 - delta).powi(2);
    let cond = c_cond * t_f * t_f.max(1.0 / eta).ln() / (delta * delta);
    Ok((rate.max(cond) / epsilon).ceil() as usize)
}

/// Conditional Fisher information `X^T X / sigma_eps^2`.
pub fn fisher_information(
    x: &DesignMatrix,
    sigma_eps: f64,
) -> Result<DMatrix<f64>, BoundsError> {
    if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
        return Err(BoundsError::InvalidParameter {
            name: "sigma_eps",
            value: sigma_eps,
        });
    }
    Ok(x.matrix().tr_mul(x.matrix()) / (sigma_eps * sigma_eps))
}

/// The conditional MSE floor `(sigma_eps^2 / N) tr(Sigma_hat^+)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbTrace {
    pub value: f64,
    /// Rank-deficient covariance: the pseudo-inverse convention was
    /// applied and the trial should be flagged.
    pub singular: bool,
}

pub fn crlb_trace(x: &DesignMatrix, sigma_eps: f64) -> Result<CrlbTrace, BoundsError> {
    if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
        return Err(BoundsError::InvalidParameter {
            name: "sigma_eps",
            value: sigma_eps,
        });
    }
    let svd = linalg::svd(x.matrix())?;
    Ok(crlb_trace_with(&svd, x, sigma_eps))
}

/// Same as [`crlb_trace`] against a precomputed design SVD. With
/// `s_i(X)` the design's singular values, `(sigma^2/N) tr(Sigma^+)`
/// equals `sigma^2 sum_i 1/s_i(X)^2` over the retained values.
pub fn crlb_trace_with(
    svd: &crate::linalg::SvdResult,
    x: &DesignMatrix,
    sigma_eps: f64,
) -> CrlbTrace {
    let tol = linalg::default_rel_tol(x.rows(), x.cols());
    let s_max = svd.singular_values.max();
    let mut value = 0.0;
    let mut retained = 0usize;
    for &s in svd.singular_values.iter() {
        if s > tol * s_max {
            value += 1.0 / (s * s);
            retained += 1;
        }
    }
    CrlbTrace {
        value: sigma_eps * sigma_eps * value,
        singular: retained < x.cols(),
    }
}

/// Expectation bounds from the spectrum concentration:
/// upper bound on `E s_i(Sigma_hat)` and lower bound on `E tr(Sigma_hat^+)`.
pub fn prop41_expectation_bounds(cfg: &BoundConfig) -> (f64, f64) {
    let rlog = cfg.ratio() * (cfg.t as f64).ln();
    let correction = cfg.c * cfg.l_x.powi(2) * (rlog + rlog.sqrt());
    (1.0 + correction, cfg.t as f64 * (1.0 - correction))
}
