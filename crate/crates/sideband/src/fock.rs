//! Truncated Fock space: ladder operators, quadratures and standard states.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{CMat, CVec, C64};

/// Default thermal-tail tolerance for cutoff selection.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FockError {
    #[error("Fock dimension {0} is below the minimum of 2")]
    InvalidDimension(usize),
    #[error("thermal occupation must be finite and non-negative, got {0}")]
    NegativeOccupation(f64),
    #[error("state population {tail:.3e} beyond the cutoff exceeds tolerance {tol:.1e}")]
    Truncation { tail: f64, tol: f64 },
    #[error("invalid oscillator parameters: {0}")]
    InvalidParams(String),
}

/// Mechanical mode in the probe's rotating frame. Rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub omega_m: f64,
    pub kappa_m: f64,
    pub n_th: f64,
    pub delta: f64,
    pub dim: usize,
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<(), FockError> {
        if self.dim < 2 {
            return Err(FockError::InvalidDimension(self.dim));
        }
        if !(self.n_th >= 0.0 && self.n_th.is_finite()) {
            return Err(FockError::NegativeOccupation(self.n_th));
        }
        if !(self.kappa_m > 0.0 && self.kappa_m.is_finite()) {
            return Err(FockError::InvalidParams(format!(
                "kappa_m must be positive, got {}",
                self.kappa_m
            )));
        }
        Ok(())
    }

    /// Population of the untruncated Gibbs state at or above `dim`.
    pub fn thermal_tail(&self) -> f64 {
        thermal_tail(self.n_th, self.dim)
    }

    /// Downward jump rate κ_m(n_th + 1).
    pub fn rate_down(&self) -> f64 {
        self.kappa_m * (self.n_th + 1.0)
    }

    /// Upward jump rate κ_m n_th.
    pub fn rate_up(&self) -> f64 {
        self.kappa_m * self.n_th
    }
}

/// Ladder operators and quadratures x = (a + a†)/2, p = i(a† − a)/2.
#[derive(Debug, Clone)]
pub struct FockOperators {
    pub a: CMat,
    pub a_dag: CMat,
    pub x: CMat,
    pub p: CMat,
}

impl FockOperators {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn number(&self) -> CMat {
        &self.a_dag * &self.a
    }
}

pub fn fock_operators(dim: usize) -> Result<FockOperators, FockError> {
    if dim < 2 {
        return Err(FockError::InvalidDimension(dim));
    }
    let mut a = CMat::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let a_dag = a.adjoint();
    let x = (&a + &a_dag).scale(0.5);
    let p = (&a_dag - &a) * C64::new(0.0, 0.5);
    Ok(FockOperators { a, a_dag, x, p })
}

/// Diagonal of the number operator.
pub fn number_diagonal(dim: usize) -> Vec<f64> {
    (0..dim).map(|n| n as f64).collect()
}

/// P(n ≥ dim) for the Gibbs distribution with mean `n_th`.
pub fn thermal_tail(n_th: f64, dim: usize) -> f64 {
    if n_th <= 0.0 {
        return 0.0;
    }
    (n_th / (n_th + 1.0)).powi(dim as i32)
}

/// Truncated Gibbs populations, renormalized on `dim` levels.
pub fn thermal_populations(dim: usize, n_th: f64) -> Result<Vec<f64>, FockError> {
    if dim < 2 {
        return Err(FockError::InvalidDimension(dim));
    }
    if !(n_th >= 0.0 && n_th.is_finite()) {
        return Err(FockError::NegativeOccupation(n_th));
    }
    let r = n_th / (n_th + 1.0);
    let mut pops = Vec::with_capacity(dim);
    let mut w = 1.0;
    for _ in 0..dim {
        pops.push(w);
        w *= r;
    }
    let z: f64 = pops.iter().sum();
    pops.iter_mut().for_each(|p| *p /= z);
    Ok(pops)
}

pub fn thermal_state(dim: usize, n_th: f64) -> Result<CMat, FockError> {
    let pops = thermal_populations(dim, n_th)?;
    let mut rho = CMat::zeros(dim, dim);
    for (n, p) in pops.into_iter().enumerate() {
        rho[(n, n)] = C64::new(p, 0.0);
    }
    Ok(rho)
}

/// Normalized coherent state |α⟩. Fails if the Poisson tail lost to the
/// cutoff exceeds `DEFAULT_TAIL_TOL`.
pub fn coherent_state(dim: usize, alpha: C64) -> Result<CVec, FockError> {
    coherent_state_with_tol(dim, alpha, DEFAULT_TAIL_TOL)
}

pub fn coherent_state_with_tol(dim: usize, alpha: C64, tol: f64) -> Result<CVec, FockError> {
    if dim < 2 {
        return Err(FockError::InvalidDimension(dim));
    }
    let mut psi = CVec::zeros(dim);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    let mut kept = 0.0;
    for n in 0..dim {
        psi[n] = c;
        kept += c.norm_sqr();
        c = c * alpha / ((n + 1) as f64).sqrt();
    }
    let tail = (1.0 - kept).max(0.0);
    if tail > tol {
        return Err(FockError::Truncation { tail, tol });
    }
    Ok(psi.unscale(kept.sqrt()))
}

/// Smallest dim ≥ 2 whose Gibbs population at or above the cutoff is below
/// `tail_tol`. Coherent displacements need extra headroom: add roughly
/// |α|² + 6|α| + 10 levels on top of this.
pub fn choose_cutoff(n_th: f64, tail_tol: f64) -> usize {
    if n_th <= 0.0 {
        return 2;
    }
    let r = n_th / (n_th + 1.0);
    let est = (tail_tol.ln() / r.ln()).ceil().max(2.0) as usize;
    // guard against rounding at the boundary
    let mut dim = est.saturating_sub(1).max(2);
    while thermal_tail(n_th, dim) >= tail_tol {
        dim += 1;
    }
    dim
}

/// Expectation value Tr(Oρ).
pub fn expect(op: &CMat, rho: &CMat) -> C64 {
    (op * rho).trace()
}

/// Expectation value ⟨ψ|O|ψ⟩.
pub fn expect_pure(op: &CMat, psi: &CVec) -> C64 {
    psi.dotc(&(op * psi))
}

/// Projector |ψ⟩⟨ψ|.
pub fn projector(psi: &CVec) -> CMat {
    psi * psi.adjoint()
}

/// Real diagonal matrix as complex.
pub fn diag_real(values: &[f64]) -> CMat {
    let n = values.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(values[i], 0.0) } else { C64::new(0.0, 0.0) })
}
