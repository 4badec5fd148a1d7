//! Open-system evolution of the mechanical mode.
//!
//! Density matrices are vectorized by column stacking, which is nalgebra's
//! native storage order, so `vec(ρ)` is just `ρ.as_slice()`. With that
//! convention `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fock::{fock_operators, FockError, OscillatorParams};
use crate::{CMat, CVec, C64};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LindbladError {
    #[error("operator must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("superoperator size {0} is not the square of a Hilbert dimension")]
    NotSuperoperator(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("propagation time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("Liouvillian null space is degenerate (second singular value {0:.3e})")]
    NonUniqueSteadyState(f64),
    #[error(transparent)]
    Fock(#[from] FockError),
}

/// Linear map on `dim × dim` matrices, stored as a `dim² × dim²` matrix
/// acting on column-stacked vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    matrix: CMat,
    dim: usize,
}

impl Superoperator {
    pub fn from_matrix(matrix: CMat) -> Result<Self, LindbladError> {
        if !matrix.is_square() {
            return Err(LindbladError::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        let n = matrix.nrows();
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n {
            return Err(LindbladError::NotSuperoperator(n));
        }
        Ok(Self { matrix, dim })
    }

    pub fn zero(dim: usize) -> Self {
        Self { matrix: CMat::zeros(dim * dim, dim * dim), dim }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMat::identity(dim * dim, dim * dim), dim }
    }

    /// ρ ↦ Aρ
    pub fn left(a: &CMat) -> Self {
        let dim = a.nrows();
        Self { matrix: CMat::identity(dim, dim).kronecker(a), dim }
    }

    /// ρ ↦ ρB
    pub fn right(b: &CMat) -> Self {
        let dim = b.nrows();
        Self { matrix: b.transpose().kronecker(&CMat::identity(dim, dim)), dim }
    }

    /// ρ ↦ AρB
    pub fn sandwich(a: &CMat, b: &CMat) -> Self {
        Self { matrix: b.transpose().kronecker(a), dim: a.nrows() }
    }

    pub fn hilbert_dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let v = &self.matrix * vectorize(rho);
        unvectorize(&v, self.dim)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix * &other.matrix, dim: self.dim }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { matrix: self.matrix.scale(s), dim: self.dim }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix + &other.matrix, dim: self.dim }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix - &other.matrix, dim: self.dim }
    }

    /// Frobenius norm of the matrix representation.
    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Row vector `vec(I)†`; trace preservation means `vec(I)† S = vec(I)†`.
    pub fn trace_defect(&self) -> f64 {
        let id = vectorize(&CMat::identity(self.dim, self.dim));
        let row = id.adjoint() * &self.matrix;
        (row - id.adjoint()).norm()
    }

    /// Liouvillian-style defect: `‖vec(I)† L‖`.
    pub fn trace_derivative(&self) -> f64 {
        let id = vectorize(&CMat::identity(self.dim, self.dim));
        (id.adjoint() * &self.matrix).norm()
    }
}

pub fn vectorize(rho: &CMat) -> CVec {
    CVec::from_column_slice(rho.as_slice())
}

pub fn unvectorize(v: &CVec, dim: usize) -> CMat {
    CMat::from_column_slice(dim, dim, v.as_slice())
}

fn check_square(l: &CMat) -> Result<(), LindbladError> {
    if l.is_square() {
        Ok(())
    } else {
        Err(LindbladError::NotSquare { rows: l.nrows(), cols: l.ncols() })
    }
}

/// −i[H, ·]
pub fn hamiltonian_part(h: &CMat) -> Result<Superoperator, LindbladError> {
    check_square(h)?;
    let m = Superoperator::left(h).sub(&Superoperator::right(h)).into_matrix();
    Superoperator::from_matrix(m * C64::new(0.0, -1.0))
}

/// D[L]ρ = LρL† − ½{L†L, ρ}
pub fn dissipator(l: &CMat) -> Result<Superoperator, LindbladError> {
    check_square(l)?;
    let ldl = l.adjoint() * l;
    let jump = Superoperator::sandwich(l, &l.adjoint());
    let anti = Superoperator::left(&ldl).add(&Superoperator::right(&ldl));
    Ok(jump.sub(&anti.scale(0.5)))
}

/// M[L]ρ = Lρ + ρL†
pub fn measurement_part(l: &CMat) -> Result<Superoperator, LindbladError> {
    check_square(l)?;
    Ok(Superoperator::left(l).add(&Superoperator::right(&l.adjoint())))
}

/// Rotating-frame Liouvillian −i[Δa†a, ·] + κ_m(n_th+1)D[a] + κ_m n_th D[a†].
pub fn mech_liouvillian(p: &OscillatorParams) -> Result<Superoperator, LindbladError> {
    p.validate()?;
    let ops = fock_operators(p.dim)?;
    let h = ops.number() * C64::new(p.delta, 0.0);
    let l = hamiltonian_part(&h)?
        .add(&dissipator(&ops.a)?.scale(p.rate_down()))
        .add(&dissipator(&ops.a_dag)?.scale(p.rate_up()));
    Ok(l)
}

/// e^{L t} by Padé scaling-and-squaring.
pub fn propagate(l: &Superoperator, t: f64) -> Result<Superoperator, LindbladError> {
    if t < 0.0 || t.is_nan() {
        return Err(LindbladError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(Superoperator::identity(l.hilbert_dim()));
    }
    let m = (l.matrix() * C64::new(t, 0.0)).exp();
    Ok(Superoperator { matrix: m, dim: l.hilbert_dim() })
}

/// Stationary state from the right singular vector of the smallest singular
/// value, Hermitized and normalized.
pub fn steady_state(l: &Superoperator) -> Result<CMat, LindbladError> {
    let dim = l.hilbert_dim();
    let svd = l.matrix().clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^H");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap());
    let scale = sv.max().max(1e-300);
    if sv.len() > 1 && sv[order[1]] < 1e-10 * scale {
        return Err(LindbladError::NonUniqueSteadyState(sv[order[1]]));
    }
    let null = v_t.row(order[0]).adjoint();
    let rho = unvectorize(&null, dim);
    let rho = (&rho + rho.adjoint()).scale(0.5);
    let tr = rho.trace();
    Ok(rho / tr)
}

/// Emission and absorption Lorentzians of a thermal oscillator and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSpectra {
    pub s_adag_a: f64,
    pub s_a_adag: f64,
    pub s_xx: f64,
}

pub fn analytic_spectra(p: &OscillatorParams, omega: f64) -> AnalyticSpectra {
    let hw2 = (p.kappa_m / 2.0).powi(2);
    let s_adag_a = p.n_th * p.kappa_m / ((omega - p.omega_m).powi(2) + hw2);
    let s_a_adag = (p.n_th + 1.0) * p.kappa_m / ((omega + p.omega_m).powi(2) + hw2);
    AnalyticSpectra { s_adag_a, s_a_adag, s_xx: s_adag_a + s_a_adag }
}

/// Choi matrix Σ_ij |i⟩⟨j| ⊗ S(|i⟩⟨j|), indexed (i·dim + a, j·dim + b).
pub fn choi_matrix(s: &Superoperator) -> CMat {
    let d = s.hilbert_dim();
    let mut choi = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            // column j*d + i of the superoperator is S(|i⟩⟨j|) stacked
            let col = s.matrix().column(j * d + i);
            for b in 0..d {
                for a in 0..d {
                    choi[(i * d + a, j * d + b)] = col[b * d + a];
                }
            }
        }
    }
    choi
}

/// Smallest eigenvalue of the Hermitized Choi matrix; ≥ 0 for CP maps.
pub fn min_choi_eigenvalue(s: &Superoperator) -> f64 {
    let c = choi_matrix(s);
    let h = (&c + c.adjoint()).scale(0.5);
    h.symmetric_eigenvalues().min()
}

/// Exact propagator of the mechanical Liouvillian over a fixed time, applied
/// sector by sector.
///
/// The thermal Liouvillian only couples ρ_{n,m} to ρ_{n±1,m±1}, so each
/// coherence order k = n − m evolves under its own real tridiagonal generator
/// times the phase e^{−iΔkt}. Application costs O(dim³/3) instead of O(dim⁴).
#[derive(Debug, Clone)]
pub struct SectorPropagator {
    dim: usize,
    blocks: Vec<DMatrix<f64>>,
    phases: Vec<C64>,
}

impl SectorPropagator {
    pub fn new(p: &OscillatorParams, t: f64) -> Result<Self, LindbladError> {
        p.validate()?;
        if t < 0.0 || t.is_nan() {
            return Err(LindbladError::NegativeTime(t));
        }
        let dim = p.dim;
        let down = p.rate_down();
        let up = p.rate_up();
        let occ = |n: usize| if n + 1 < dim { (n + 1) as f64 } else { 0.0 };
        let mut blocks = Vec::with_capacity(dim);
        let mut phases = Vec::with_capacity(dim);
        for k in 0..dim {
            let len = dim - k;
            let mut g = DMatrix::<f64>::zeros(len, len);
            for j in 0..len {
                let (n, m) = (j + k, j);
                g[(j, j)] = -0.5 * down * (n + m) as f64 - 0.5 * up * (occ(n) + occ(m));
                if j + 1 < len {
                    g[(j, j + 1)] = down * (((n + 1) * (m + 1)) as f64).sqrt();
                }
                if j > 0 {
                    g[(j, j - 1)] = up * ((n * m) as f64).sqrt();
                }
            }
            blocks.push((g * t).exp());
            phases.push(C64::from_polar(1.0, -p.delta * k as f64 * t));
        }
        Ok(Self { dim, blocks, phases })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Propagate a Hermitian density matrix in place. Only the lower triangle
    /// is read; the result is written Hermitian.
    pub fn apply_in_place(&self, rho: &mut CMat, scratch: &mut Vec<C64>) {
        let d = self.dim;
        for k in 0..d {
            let len = d - k;
            let b = &self.blocks[k];
            scratch.clear();
            scratch.extend((0..len).map(|j| rho[(j + k, j)]));
            let ph = self.phases[k];
            for r in 0..len {
                let mut acc = C64::new(0.0, 0.0);
                // tridiagonal generator, but the exponential is dense
                for c in 0..len {
                    acc += scratch[c] * b[(r, c)];
                }
                let v = acc * ph;
                rho[(r + k, r)] = v;
                if k > 0 {
                    rho[(r, r + k)] = v.conj();
                }
            }
        }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = rho.clone();
        let mut scratch = Vec::with_capacity(self.dim);
        self.apply_in_place(&mut out, &mut scratch);
        out
    }

    /// Populations only (k = 0 sector).
    pub fn apply_populations(&self, pops: &DVector<f64>) -> DVector<f64> {
        &self.blocks[0] * pops
    }
}
