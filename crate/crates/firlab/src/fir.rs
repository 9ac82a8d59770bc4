//! FIR systems, trajectory simulation and the time-shifted design matrix.
//!
//! Index convention: the input sequence is stored 0-based with
//! `inputs[i]` holding the value at time `i - T + 2` of the 1-based
//! convention `t in [2-T, N]`, i.e. `x_t = inputs[t + T - 2]`. Row `t`
//! (0-based) of the design matrix is `[x_{t+1}, x_t, ..., x_{t-T+2}]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{draw_sequence, DistributionSpec, SamplerError, SeedSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("lag must be at least 1")]
    ZeroLag,

    #[error("regressor expects {expected} coefficients, got {got}")]
    CoefficientLength { expected: usize, got: usize },

    #[error("need at least N+T-1 = {needed} inputs, got {got}")]
    InsufficientInputs { needed: usize, got: usize },

    #[error("design matrix has {got} columns but the system lag is {lag}")]
    LagMismatch { got: usize, lag: usize },

    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// The fixed regressor catalogue.
///
/// `LinearQuadratic` and `SaturatedLinear` are genuinely misspecified
/// for the linear least squares class, with oracle values computable in
/// closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Regressor {
    /// f(v) = a.v
    Linear { coeffs: Vec<f64> },
    /// f(v) = a.v + beta (v_1^2 - 1)
    LinearQuadratic { coeffs: Vec<f64>, beta: f64 },
    /// f(v) = tanh(a.v)
    SaturatedLinear { coeffs: Vec<f64> },
}

impl Regressor {
    pub fn coeffs(&self) -> &[f64] {
        match self {
            Regressor::Linear { coeffs }
            | Regressor::LinearQuadratic { coeffs, .. }
            | Regressor::SaturatedLinear { coeffs } => coeffs,
        }
    }

    /// True parameter vector, present only in the well-specified case.
    pub fn linear_coeffs(&self) -> Option<&[f64]> {
        match self {
            Regressor::Linear { coeffs } => Some(coeffs),
            _ => None,
        }
    }

    fn eval(&self, row: &[f64]) -> f64 {
        let dot = |a: &[f64]| -> f64 { a.iter().zip(row).map(|(c, v)| c * v).sum() };
        match self {
            Regressor::Linear { coeffs } => dot(coeffs),
            Regressor::LinearQuadratic { coeffs, beta } => {
                dot(coeffs) + beta * (row[0] * row[0] - 1.0)
            }
            Regressor::SaturatedLinear { coeffs } => dot(coeffs).tanh(),
        }
    }
}

/// An FIR system: lag, regressor, and the input / noise distributions.
///
/// `noise` set to `None` simulates the noiseless system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirSystem {
    pub lag: usize,
    pub regressor: Regressor,
    pub input: DistributionSpec,
    #[serde(default)]
    pub noise: Option<DistributionSpec>,
}

impl FirSystem {
    pub fn new(
        lag: usize,
        regressor: Regressor,
        input: DistributionSpec,
        noise: Option<DistributionSpec>,
    ) -> Result<Self, ModelError> {
        let system = FirSystem {
            lag,
            regressor,
            input,
            noise,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lag == 0 {
            return Err(ModelError::ZeroLag);
        }
        if self.regressor.coeffs().len() != self.lag {
            return Err(ModelError::CoefficientLength {
                expected: self.lag,
                got: self.regressor.coeffs().len(),
            });
        }
        self.input.validate()?;
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// Per-index noise variances (zero for the noiseless system).
    pub fn noise_variances(&self, len: usize) -> Vec<f64> {
        match &self.noise {
            Some(spec) => spec.variances(len),
            None => vec![0.0; len],
        }
    }
}

/// One realized trajectory. The noise is retained so oracle risk
/// computations can recover the noise-free response exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Length `N + T - 1`.
    pub inputs: Vec<f64>,
    /// Length `N`.
    pub outputs: DVector<f64>,
    /// Length `N`.
    pub noise: DVector<f64>,
}

/// The `N x T` matrix of time-shifted covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    m: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Recovers the generating input sequence (length `N + T - 1`):
    /// the first row holds `x_1 .. x_{2-T}` reversed, the first column
    /// holds `x_1 .. x_N`.
    pub fn input_sequence(&self) -> Vec<f64> {
        let (n, t) = (self.rows(), self.cols());
        let mut inputs = Vec::with_capacity(n + t - 1);
        for j in (0..t).rev() {
            inputs.push(self.m[(0, j)]);
        }
        for i in 1..n {
            inputs.push(self.m[(i, 0)]);
        }
        inputs
    }
}

/// Builds the time-shifted design matrix from a raw input sequence.
pub fn build_design(inputs: &[f64], t: usize, n: usize) -> Result<DesignMatrix, ModelError> {
    if t == 0 {
        return Err(ModelError::ZeroLag);
    }
    let needed = n + t - 1;
    if inputs.len() < needed {
        return Err(ModelError::InsufficientInputs {
            needed,
            got: inputs.len(),
        });
    }
    let m = DMatrix::from_fn(n, t, |i, j| inputs[i + t - 1 - j]);
    Ok(DesignMatrix { m })
}

/// Simulates one trajectory. The input and noise sequences each own a
/// substream of `seed`, so trials can run in parallel deterministically.
pub fn simulate(system: &FirSystem, n: usize, seed: SeedSpec) -> Result<Trajectory, ModelError> {
    system.validate()?;
    let t = system.lag;
    let (input_seed, noise_seed) = seed.split2();
    let inputs = draw_sequence(&system.input, input_seed, n + t - 1)?;
    let noise = match &system.noise {
        Some(spec) => DVector::from_vec(draw_sequence(spec, noise_seed, n)?),
        None => DVector::zeros(n),
    };
    let design = build_design(&inputs, t, n)?;
    let f = regressor_values(system, &design)?;
    let outputs = f + &noise;
    Ok(Trajectory {
        inputs,
        outputs,
        noise,
    })
}

/// The noise-free responses `(f(X_1), ..., f(X_N))`.
pub fn regressor_values(
    system: &FirSystem,
    design: &DesignMatrix,
) -> Result<DVector<f64>, ModelError> {
    if design.cols() != system.lag {
        return Err(ModelError::LagMismatch {
            got: design.cols(),
            lag: system.lag,
        });
    }
    let mut row = vec![0.0; system.lag];
    let values = DVector::from_fn(design.rows(), |i, _| {
        for (j, r) in row.iter_mut().enumerate() {
            *r = design.matrix()[(i, j)];
        }
        system.regressor.eval(&row)
    });
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_gaussian() -> DistributionSpec {
        DistributionSpec::gaussian(1.0).unwrap()
    }

    #[test]
    fn design_matches_hand_example() {
        let x = build_design(&[1.0, 2.0, 3.0, 4.0], 2, 3).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 3.0, 2.0, 4.0, 3.0]);
        assert_eq!(x.matrix(), &expected);
    }

    #[test]
    fn lag_one_design_is_the_input_column() {
        let inputs = [0.5, -1.0, 2.0, 7.0];
        let x = build_design(&inputs, 1, 4).unwrap();
        for (i, &v) in inputs.iter().enumerate() {
            assert_eq!(x.matrix()[(i, 0)], v);
        }
    }

    #[test]
    fn zero_inputs_give_zero_design() {
        let x = build_design(&[0.0; 7], 3, 5).unwrap();
        assert_eq!(x.matrix(), &DMatrix::zeros(5, 3));
    }

    #[test]
    fn short_inputs_are_a_dimension_error() {
        assert!(matches!(
            build_design(&[1.0, 2.0], 2, 3),
            Err(ModelError::InsufficientInputs { needed: 4, got: 2 })
        ));
    }

    #[test]
    fn identity_filter_reproduces_inputs() {
        let system = FirSystem::new(
            1,
            Regressor::Linear { coeffs: vec![1.0] },
            unit_gaussian(),
            None,
        )
        .unwrap();
        let traj = simulate(&system, 16, SeedSpec::new(3, 0)).unwrap();
        for t in 0..16 {
            assert_eq!(traj.outputs[t], traj.inputs[t]);
        }
    }

    #[test]
    fn zero_filter_outputs_noise() {
        let system = FirSystem::new(
            3,
            Regressor::Linear {
                coeffs: vec![0.0, 0.0, 0.0],
            },
            unit_gaussian(),
            Some(unit_gaussian()),
        )
        .unwrap();
        let traj = simulate(&system, 12, SeedSpec::new(5, 1)).unwrap();
        assert_eq!(traj.outputs, traj.noise);
    }

    #[test]
    fn differencing_filter_on_a_ramp() {
        let x = build_design(&[1.0, 2.0, 3.0, 4.0], 2, 3).unwrap();
        let system = FirSystem::new(
            2,
            Regressor::Linear {
                coeffs: vec![1.0, -1.0],
            },
            unit_gaussian(),
            None,
        )
        .unwrap();
        let f = regressor_values(&system, &x).unwrap();
        assert_eq!(f, DVector::from_vec(vec![1.0, 1.0, 1.0]));
    }

    #[test]
    fn regressor_values_match_direct_formulas() {
        let x = build_design(&[0.0; 7], 3, 5).unwrap();
        let quad = FirSystem::new(
            3,
            Regressor::LinearQuadratic {
                coeffs: vec![1.0, 0.0, -1.0],
                beta: 0.5,
            },
            unit_gaussian(),
            None,
        )
        .unwrap();
        // On the zero design the centered quadratic gives -beta per row.
        let f = regressor_values(&quad, &x).unwrap();
        for i in 0..5 {
            assert_relative_eq!(f[i], -0.5);
        }
        let sat = FirSystem::new(
            3,
            Regressor::SaturatedLinear {
                coeffs: vec![1.0, 2.0, 3.0],
            },
            unit_gaussian(),
            None,
        )
        .unwrap();
        let f = regressor_values(&sat, &x).unwrap();
        for i in 0..5 {
            assert_eq!(f[i], 0.0);
        }
    }

    #[test]
    fn simulated_outputs_decompose_exactly() {
        let system = FirSystem::new(
            4,
            Regressor::LinearQuadratic {
                coeffs: vec![0.4, -0.2, 0.1, 0.7],
                beta: 0.3,
            },
            unit_gaussian(),
            Some(DistributionSpec::uniform(0.25).unwrap()),
        )
        .unwrap();
        let n = 40;
        let traj = simulate(&system, n, SeedSpec::new(11, 2)).unwrap();
        let x = build_design(&traj.inputs, 4, n).unwrap();
        let f = regressor_values(&system, &x).unwrap();
        // Bitwise: outputs were formed as f + noise.
        assert_eq!(&traj.outputs - f, traj.noise);
    }

    #[test]
    fn input_sequence_round_trips() {
        let inputs: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let x = build_design(&inputs, 3, 7).unwrap();
        assert_eq!(x.input_sequence(), inputs);
    }

    #[test]
    fn coefficient_length_is_checked() {
        assert!(matches!(
            FirSystem::new(
                2,
                Regressor::Linear { coeffs: vec![1.0] },
                unit_gaussian(),
                None,
            ),
            Err(ModelError::CoefficientLength {
                expected: 2,
                got: 1
            })
        ));
    }
}
