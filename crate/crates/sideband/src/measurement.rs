//! Weak measurement of the oscillator by a two-level probe.
//!
//! The joint space is qubit ⊗ oscillator with the qubit ordered (e, g), so the
//! joint index of |q, n⟩ is `q·dim + n` with q = 0 for |e⟩. The interaction
//! generator is (Ω/2)(σa† − σ†a), which makes every exact block real:
//!
//!   U|e,n⟩   = cos(θ√(n+1)/2)|e,n⟩ + sin(θ√(n+1)/2)|g,n+1⟩
//!   U|g,n+1⟩ = cos(θ√(n+1)/2)|g,n+1⟩ − sin(θ√(n+1)/2)|e,n⟩
//!
//! Readout is in the σx basis |±⟩ = (|g⟩ ± |e⟩)/√2. With these conventions
//! ⟨σx⟩ = −θ⟨x⟩ after preparing |g⟩ and +θ⟨x⟩ after |e⟩, and every Kraus map
//! below (ideal or imperfect) carries the same global sign.

use serde::{Deserialize, Serialize};

use crate::fock::{fock_operators, FockError, OscillatorParams};
use crate::lindblad::{
    dissipator, hamiltonian_part, measurement_part, mech_liouvillian, propagate, vectorize,
    LindbladError, Superoperator,
};
use crate::{CMat, C64};

/// Angle above which the second-order operators are flagged as unreliable.
pub const SECOND_ORDER_ANGLE_LIMIT: f64 = 0.3;
/// Branch probabilities below this are treated as impossible outcomes.
pub const MIN_BRANCH_PROBABILITY: f64 = 1e-14;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeasurementError {
    #[error("rotation angle must be finite and non-negative, got {0}")]
    InvalidAngle(f64),
    #[error("invalid qubit model: {0}")]
    InvalidQubit(String),
    #[error("invalid interaction parameters: {0}")]
    InvalidInteraction(String),
    #[error("outcome probability {0:.3e} is too small to condition on")]
    ZeroProbability(f64),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
}

/// Qubit state prepared before an interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prep {
    #[serde(rename = "g")]
    Ground,
    #[serde(rename = "e")]
    Excited,
}

impl Prep {
    pub fn label(self) -> &'static str {
        match self {
            Prep::Ground => "g",
            Prep::Excited => "e",
        }
    }
}

/// Preparation pattern over successive cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    #[serde(rename = "g")]
    Ground,
    #[serde(rename = "e")]
    Excited,
    /// g on even cycles, e on odd cycles.
    #[serde(rename = "alternating")]
    Alternating,
}

impl Schedule {
    pub fn prep_at(self, cycle: u64) -> Prep {
        match self {
            Schedule::Ground => Prep::Ground,
            Schedule::Excited => Prep::Excited,
            Schedule::Alternating => {
                if cycle % 2 == 0 {
                    Prep::Ground
                } else {
                    Prep::Excited
                }
            }
        }
    }
}

impl From<Prep> for Schedule {
    fn from(p: Prep) -> Self {
        match p {
            Prep::Ground => Schedule::Ground,
            Prep::Excited => Schedule::Excited,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionOrder {
    Exact,
    Second,
}

/// Probe imperfections. Rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitModel {
    pub eta_g: f64,
    pub eta_e: f64,
    pub eps_g: f64,
    pub eps_e: f64,
    pub kappa_1: f64,
    pub kappa_2: f64,
}

impl QubitModel {
    pub fn ideal() -> Self {
        Self { eta_g: 1.0, eta_e: 1.0, eps_g: 0.0, eps_e: 0.0, kappa_1: 0.0, kappa_2: 0.0 }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        for (name, v) in [
            ("eta_g", self.eta_g),
            ("eta_e", self.eta_e),
            ("eps_g", self.eps_g),
            ("eps_e", self.eps_e),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MeasurementError::InvalidQubit(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.kappa_1 >= 0.0 && self.kappa_1.is_finite()) {
            return Err(MeasurementError::InvalidQubit(format!("kappa_1 = {}", self.kappa_1)));
        }
        if !(self.kappa_2.is_finite() && self.kappa_2 >= 0.5 * self.kappa_1 * (1.0 - 1e-12)) {
            return Err(MeasurementError::InvalidQubit(format!(
                "kappa_2 = {} below kappa_1/2 = {}",
                self.kappa_2,
                0.5 * self.kappa_1
            )));
        }
        Ok(())
    }

    /// Pure dephasing rate κ_φ = κ_2 − κ_1/2.
    pub fn kappa_phi(&self) -> f64 {
        (self.kappa_2 - 0.5 * self.kappa_1).max(0.0)
    }

    /// Ground-state population of the prepared qubit.
    pub fn ground_population(&self, prep: Prep) -> f64 {
        match prep {
            Prep::Ground => 0.5 * (1.0 + self.eta_g),
            Prep::Excited => 0.5 * (1.0 - self.eta_e),
        }
    }

    /// Bloch polarization z = 2p − 1 of the prepared state along g.
    pub fn polarization(&self, prep: Prep) -> f64 {
        2.0 * self.ground_population(prep) - 1.0
    }

    /// Readout contrast 1 − ε_g − ε_e.
    pub fn contrast(&self) -> f64 {
        1.0 - self.eps_g - self.eps_e
    }

    /// Total quantum-jump rate of the qubit dissipators (state independent).
    pub fn jump_rate(&self) -> f64 {
        0.5 * self.kappa_1 + 0.5 * self.kappa_phi()
    }

    pub fn is_lossless(&self) -> bool {
        self.kappa_1 == 0.0 && self.kappa_2 == 0.0
    }
}

/// One measurement cycle: interaction for `tau`, repeated every `period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Vacuum Rabi rate Ω (rad/s).
    pub omega: f64,
    pub tau: f64,
    pub period: f64,
    pub schedule: Schedule,
}

impl InteractionParams {
    pub fn theta_1(&self) -> f64 {
        self.omega * self.tau
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(MeasurementError::InvalidInteraction(format!("omega = {}", self.omega)));
        }
        if !(self.tau >= 0.0 && self.period > 0.0 && self.period >= self.tau) {
            return Err(MeasurementError::InvalidInteraction(format!(
                "need 0 <= tau <= period, got tau = {}, period = {}",
                self.tau, self.period
            )));
        }
        Ok(())
    }
}

fn check_angle(theta: f64) -> Result<(), MeasurementError> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(MeasurementError::InvalidAngle(theta))
    }
}

fn check_dim(dim: usize) -> Result<(), MeasurementError> {
    if dim < 2 {
        Err(FockError::InvalidDimension(dim).into())
    } else {
        Ok(())
    }
}

/// Exact interaction unitary on the truncated joint space (size 2·dim).
///
/// The pair {|e,n⟩, |g,n+1⟩} rotates as a closed two-level system. |e,dim−1⟩
/// has its partner outside the cutoff and only keeps the cos factor, so the
/// last row/column is not unitary; everything else is exact.
pub fn exact_interaction_unitary(theta_1: f64, dim: usize) -> Result<CMat, MeasurementError> {
    check_angle(theta_1)?;
    check_dim(dim)?;
    let e = |n: usize| n;
    let g = |n: usize| dim + n;
    let mut u = CMat::zeros(2 * dim, 2 * dim);
    u[(g(0), g(0))] = C64::new(1.0, 0.0);
    for n in 0..dim {
        let half = 0.5 * theta_1 * ((n + 1) as f64).sqrt();
        let (s, c) = half.sin_cos();
        u[(e(n), e(n))] = C64::new(c, 0.0);
        if n + 1 < dim {
            u[(g(n + 1), e(n))] = C64::new(s, 0.0);
            u[(e(n), g(n + 1))] = C64::new(-s, 0.0);
            u[(g(n + 1), g(n + 1))] = C64::new(c, 0.0);
        }
    }
    Ok(u)
}

/// Real operator with a main diagonal and one off-diagonal.
///
/// `Upper` has entries at (n, n+1), `Lower` at (n+1, n). The exact branch
/// operators have this form, which makes M ρ M† an O(dim²) update.
#[derive(Debug, Clone, PartialEq)]
pub struct BidiagonalOperator {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
    pub upper: bool,
}

impl BidiagonalOperator {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> CMat {
        let d = self.dim();
        let mut m = CMat::zeros(d, d);
        for n in 0..d {
            m[(n, n)] = C64::new(self.diag[n], 0.0);
        }
        for (n, &v) in self.off.iter().enumerate() {
            let (r, c) = if self.upper { (n, n + 1) } else { (n + 1, n) };
            m[(r, c)] = C64::new(v, 0.0);
        }
        m
    }

    fn entry(&self, r: usize, c: usize) -> f64 {
        if r == c {
            self.diag[r]
        } else if self.upper && c == r + 1 {
            self.off[r]
        } else if !self.upper && r == c + 1 {
            self.off[c]
        } else {
            0.0
        }
    }

    /// M ρ Mᵀ (M is real).
    pub fn sandwich(&self, rho: &CMat) -> CMat {
        let d = self.dim();
        // columns of row r with nonzero entries
        let cols = |r: usize| -> [Option<usize>; 2] {
            if self.upper {
                [Some(r), if r + 1 < d { Some(r + 1) } else { None }]
            } else {
                [Some(r), if r > 0 { Some(r - 1) } else { None }]
            }
        };
        let mut out = CMat::zeros(d, d);
        for j in 0..d {
            for i in j..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in cols(i).into_iter().flatten() {
                    let mik = self.entry(i, k);
                    for l in cols(j).into_iter().flatten() {
                        acc += rho[(k, l)] * (mik * self.entry(j, l));
                    }
                }
                out[(i, j)] = acc;
                if i != j {
                    out[(j, i)] = acc.conj();
                }
            }
        }
        out
    }

    /// Tr(M ρ Mᵀ) for Hermitian ρ.
    pub fn probability(&self, rho: &CMat) -> f64 {
        let d = self.dim();
        let mut p = 0.0;
        for r in 0..d {
            let dr = self.diag[r];
            p += dr * dr * rho[(r, r)].re;
            let other = if self.upper {
                (r + 1 < d).then(|| (r + 1, self.off[r]))
            } else {
                (r > 0).then(|| (r - 1, self.off[r - 1]))
            };
            if let Some((c, v)) = other {
                p += v * v * rho[(c, c)].re + 2.0 * dr * v * rho[(r, c)].re;
            }
        }
        p
    }
}

/// Exact branch operators M_± = ⟨±|U|i⟩ in bidiagonal form.
///
/// For |e⟩ the overall sign of M_− is dropped (irrelevant for the map).
pub fn exact_branch_operators(
    prep: Prep,
    theta_1: f64,
    dim: usize,
) -> Result<[BidiagonalOperator; 2], MeasurementError> {
    check_angle(theta_1)?;
    check_dim(dim)?;
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let half = |m: usize| 0.5 * theta_1 * (m as f64).sqrt();
    let build = |sign: f64| match prep {
        // (U_gg ± U_eg)/√2: diag cos(θ√n/2), upper −sin(θ√(n+1)/2)
        Prep::Ground => BidiagonalOperator {
            diag: (0..dim).map(|n| r2 * half(n).cos()).collect(),
            off: (0..dim - 1).map(|n| -sign * r2 * half(n + 1).sin()).collect(),
            upper: true,
        },
        // (U_ee ± U_ge)/√2: diag cos(θ√(n+1)/2), lower sin(θ√(n+1)/2)
        Prep::Excited => BidiagonalOperator {
            diag: (0..dim).map(|n| r2 * half(n + 1).cos()).collect(),
            off: (0..dim - 1).map(|n| sign * r2 * half(n + 1).sin()).collect(),
            upper: false,
        },
    };
    Ok([build(1.0), build(-1.0)])
}

#[derive(Debug, Clone)]
pub struct MeasurementOperators {
    pub plus: CMat,
    pub minus: CMat,
    /// Second-order operators requested beyond `SECOND_ORDER_ANGLE_LIMIT`.
    pub large_angle: bool,
}

pub fn measurement_operators(
    prep: Prep,
    theta_1: f64,
    dim: usize,
    order: ExpansionOrder,
) -> Result<MeasurementOperators, MeasurementError> {
    check_angle(theta_1)?;
    check_dim(dim)?;
    match order {
        ExpansionOrder::Exact => {
            let [p, m] = exact_branch_operators(prep, theta_1, dim)?;
            Ok(MeasurementOperators { plus: p.to_dense(), minus: m.to_dense(), large_angle: false })
        }
        ExpansionOrder::Second => {
            let ops = fock_operators(dim)?;
            let id = CMat::identity(dim, dim);
            let r2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let h = C64::new(0.5 * theta_1, 0.0);
            let q = C64::new(theta_1 * theta_1 / 8.0, 0.0);
            let (lin, quad) = match prep {
                Prep::Ground => (-(&ops.a * h), &ops.a_dag * &ops.a * q),
                Prep::Excited => (&ops.a_dag * h, &ops.a * &ops.a_dag * q),
            };
            let plus = (&id + &lin - &quad) * r2;
            let minus = (&id - &lin - &quad) * r2;
            Ok(MeasurementOperators { plus, minus, large_angle: theta_1 > SECOND_ORDER_ANGLE_LIMIT })
        }
    }
}

/// ρ ↦ c_I ρ + c_Ma M[a]ρ + c_Ma† M[a†]ρ + c_Da D[a]ρ + c_Da† D[a†]ρ
/// with M[L]ρ = Lρ + ρL†.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearKrausMap {
    pub identity: f64,
    pub m_a: f64,
    pub m_adag: f64,
    pub d_a: f64,
    pub d_adag: f64,
}

impl LinearKrausMap {
    pub fn scale(&self, s: f64) -> Self {
        Self {
            identity: s * self.identity,
            m_a: s * self.m_a,
            m_adag: s * self.m_adag,
            d_a: s * self.d_a,
            d_adag: s * self.d_adag,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            identity: self.identity + o.identity,
            m_a: self.m_a + o.m_a,
            m_adag: self.m_adag + o.m_adag,
            d_a: self.d_a + o.d_a,
            d_adag: self.d_adag + o.d_adag,
        }
    }

    pub fn superoperator(&self, dim: usize) -> Result<Superoperator, MeasurementError> {
        let ops = fock_operators(dim)?;
        Ok(Superoperator::identity(dim)
            .scale(self.identity)
            .add(&measurement_part(&ops.a)?.scale(self.m_a))
            .add(&measurement_part(&ops.a_dag)?.scale(self.m_adag))
            .add(&dissipator(&ops.a)?.scale(self.d_a))
            .add(&dissipator(&ops.a_dag)?.scale(self.d_adag)))
    }

    /// Tr(Kρ) for Hermitian ρ. Only the identity and M terms carry trace.
    pub fn probability(&self, rho: &CMat) -> f64 {
        let d = rho.nrows();
        let tr: f64 = (0..d).map(|n| rho[(n, n)].re).sum();
        // 2 Re Tr(aρ) = Tr(aρ + ρa†) = Tr(a†ρ + ρa)
        let two_re_a: f64 = (1..d).map(|n| 2.0 * (n as f64).sqrt() * rho[(n, n - 1)].re).sum();
        self.identity * tr + (self.m_a + self.m_adag) * two_re_a
    }

    /// Sparse O(dim²) application.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let d = rho.nrows();
        let sq: Vec<f64> = (0..=d).map(|n| (n as f64).sqrt()).collect();
        let occ = |n: usize| if n + 1 < d { (n + 1) as f64 } else { 0.0 };
        let at = |i: usize, j: usize| rho[(i, j)];
        let mut out = CMat::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                let mut v = at(i, j) * self.identity;
                if self.m_a != 0.0 {
                    // aρ + ρa†
                    let mut t = C64::new(0.0, 0.0);
                    if i + 1 < d {
                        t += at(i + 1, j) * sq[i + 1];
                    }
                    if j + 1 < d {
                        t += at(i, j + 1) * sq[j + 1];
                    }
                    v += t * self.m_a;
                }
                if self.m_adag != 0.0 {
                    // a†ρ + ρa
                    let mut t = C64::new(0.0, 0.0);
                    if i > 0 {
                        t += at(i - 1, j) * sq[i];
                    }
                    if j > 0 {
                        t += at(i, j - 1) * sq[j];
                    }
                    v += t * self.m_adag;
                }
                if self.d_a != 0.0 {
                    let mut t = at(i, j) * (-0.5 * (i + j) as f64);
                    if i + 1 < d && j + 1 < d {
                        t += at(i + 1, j + 1) * (sq[i + 1] * sq[j + 1]);
                    }
                    v += t * self.d_a;
                }
                if self.d_adag != 0.0 {
                    let mut t = at(i, j) * (-0.5 * (occ(i) + occ(j)));
                    if i > 0 && j > 0 {
                        t += at(i - 1, j - 1) * (sq[i] * sq[j]);
                    }
                    v += t * self.d_adag;
                }
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Outcome-resolved maps for one preparation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrausPair {
    pub plus: LinearKrausMap,
    pub minus: LinearKrausMap,
}

impl KrausPair {
    pub fn mean(&self) -> LinearKrausMap {
        self.plus.add(&self.minus)
    }

    pub fn get(&self, outcome_plus: bool) -> &LinearKrausMap {
        if outcome_plus {
            &self.plus
        } else {
            &self.minus
        }
    }
}

/// Second-order ideal maps K_± = ½[I ∓ (θ/2)M[a] + (θ²/4)D[a]] for |g⟩ and
/// ½[I ± (θ/2)M[a†] + (θ²/4)D[a†]] for |e⟩.
pub fn ideal_kraus(prep: Prep, theta_1: f64) -> KrausPair {
    let h = 0.25 * theta_1;
    let d = theta_1 * theta_1 / 8.0;
    let zero = LinearKrausMap { identity: 0.5, m_a: 0.0, m_adag: 0.0, d_a: 0.0, d_adag: 0.0 };
    match prep {
        Prep::Ground => KrausPair {
            plus: LinearKrausMap { m_a: -h, d_a: d, ..zero },
            minus: LinearKrausMap { m_a: h, d_a: d, ..zero },
        },
        Prep::Excited => KrausPair {
            plus: LinearKrausMap { m_adag: h, d_adag: d, ..zero },
            minus: LinearKrausMap { m_adag: -h, d_adag: d, ..zero },
        },
    }
}

#[derive(Debug, Clone)]
pub struct KrausMaps {
    pub k_plus: Superoperator,
    pub k_minus: Superoperator,
    pub k_mean: Superoperator,
}

pub fn kraus_maps(prep: Prep, theta_1: f64, dim: usize) -> Result<KrausMaps, MeasurementError> {
    check_angle(theta_1)?;
    check_dim(dim)?;
    let pair = ideal_kraus(prep, theta_1);
    Ok(KrausMaps {
        k_plus: pair.plus.superoperator(dim)?,
        k_minus: pair.minus.superoperator(dim)?,
        k_mean: pair.mean().superoperator(dim)?,
    })
}

#[derive(Debug, Clone)]
pub struct ConditionalOutcome {
    pub probability: f64,
    pub state: CMat,
}

/// p = Tr(MρM†), ρ' = MρM†/p.
pub fn conditional_update(rho: &CMat, m: &CMat) -> Result<ConditionalOutcome, MeasurementError> {
    let unnorm = m * rho * m.adjoint();
    normalize_branch(unnorm)
}

/// Same as [`conditional_update`] for a linear (not necessarily rank-one) map.
pub fn conditional_update_map(
    rho: &CMat,
    k: &LinearKrausMap,
) -> Result<ConditionalOutcome, MeasurementError> {
    normalize_branch(k.apply(rho))
}

fn normalize_branch(unnorm: CMat) -> Result<ConditionalOutcome, MeasurementError> {
    let p = unnorm.trace().re;
    if !(p >= MIN_BRANCH_PROBABILITY) {
        return Err(MeasurementError::ZeroProbability(p));
    }
    Ok(ConditionalOutcome { probability: p, state: unnorm.unscale(p) })
}

/// Dynamical backaction rate κ = θ²/(4T).
pub fn backaction_rate(theta_1: f64, period: f64) -> f64 {
    theta_1 * theta_1 / (4.0 * period)
}

/// Effective damping and occupation of the measured oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRates {
    pub kappa: f64,
    pub kappa_eff: f64,
    pub n_eff: f64,
    /// Excited-state preparation with κ ≥ κ_m: net anti-damping, no steady state.
    pub amplification_warning: bool,
}

/// Rates implied by adding `extra_down`·D[a] and `extra_up`·D[a†] to the
/// thermal Liouvillian.
pub fn rates_with_extra(p: &OscillatorParams, extra_down: f64, extra_up: f64) -> (f64, f64) {
    let kappa_eff = p.kappa_m + extra_down - extra_up;
    let n_eff = (p.kappa_m * p.n_th + extra_up) / kappa_eff;
    (kappa_eff, n_eff)
}

pub fn effective_rates(schedule: Schedule, kappa: f64, p: &OscillatorParams) -> EffectiveRates {
    let (down, up) = match schedule {
        Schedule::Ground => (kappa, 0.0),
        Schedule::Excited => (0.0, kappa),
        Schedule::Alternating => (0.5 * kappa, 0.5 * kappa),
    };
    let (kappa_eff, n_eff) = rates_with_extra(p, down, up);
    EffectiveRates {
        kappa,
        kappa_eff,
        n_eff,
        amplification_warning: schedule == Schedule::Excited && kappa >= p.kappa_m,
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveDynamics {
    pub liouvillian: Superoperator,
    pub rates: EffectiveRates,
}

/// L_m plus κD[a] (g), κD[a†] (e) or (κ/2)(D[a] + D[a†]) (alternating).
pub fn effective_liouvillian(
    schedule: Schedule,
    ip: &InteractionParams,
    p: &OscillatorParams,
) -> Result<EffectiveDynamics, MeasurementError> {
    ip.validate()?;
    let kappa = backaction_rate(ip.theta_1(), ip.period);
    let rates = effective_rates(schedule, kappa, p);
    let ops = fock_operators(p.dim)?;
    let (down, up) = match schedule {
        Schedule::Ground => (kappa, 0.0),
        Schedule::Excited => (0.0, kappa),
        Schedule::Alternating => (0.5 * kappa, 0.5 * kappa),
    };
    let liouvillian = mech_liouvillian(p)?
        .add(&dissipator(&ops.a)?.scale(down))
        .add(&dissipator(&ops.a_dag)?.scale(up));
    Ok(EffectiveDynamics { liouvillian, rates })
}

/// (1 − e^{−x})/x, stable near 0 and for negative x.
pub fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - 0.5 * x + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// (x − 1 + e^{−x})/x².
fn phi2(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x.powi(4) / 720.0
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

/// (1 − e^{−x}(1 + x))/x² = −φ1'(x).
fn phi1_slope(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x.powi(4) / 144.0
    } else {
        (-(-x).exp_m1() - x * (-x).exp()) / (x * x)
    }
}

/// Qubit-decay kernels of the weak interaction, evaluated at time t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeKernels {
    pub tau_1: f64,
    pub tau_2: f64,
    pub tau_sigma: f64,
    /// (t − τ_2)/κ_2
    pub direct: f64,
    /// (τ_2 − τ_1)/(κ_1 − κ_2)
    pub cross: f64,
}

pub fn time_kernels(kappa_1: f64, kappa_2: f64, t: f64) -> TimeKernels {
    let (x1, x2) = (kappa_1 * t, kappa_2 * t);
    let tau_1 = t * phi1(x1);
    let tau_2 = t * phi1(x2);
    // (e^{−κ2 t} − e^{−κ1 t})/(κ1 − κ2); φ1 handles the equal-rate limit
    let tau_sigma = t * (-x2).exp() * phi1(x1 - x2);
    let direct = t * t * phi2(x2);
    let cross = if (x1 - x2).abs() < 1e-5 {
        t * t * phi1_slope(0.5 * (x1 + x2))
    } else {
        t * t * (phi1(x2) - phi1(x1)) / (x1 - x2)
    };
    TimeKernels { tau_1, tau_2, tau_sigma, direct, cross }
}

/// Outcome maps of a lossy, imperfectly prepared and read probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImperfectKraus {
    /// Before readout errors.
    pub raw: KrausPair,
    /// After the readout confusion matrix.
    pub mixed: KrausPair,
    pub kernels: TimeKernels,
}

impl ImperfectKraus {
    /// Extra D[a] and D[a†] rates of the outcome-averaged map spread over one period.
    pub fn backaction_rates(&self, period: f64) -> (f64, f64) {
        let m = self.mixed.mean();
        (m.d_a / period, m.d_adag / period)
    }
}

/// Second-order maps of an imperfect probe:
///
///   K_± = ½[I ∓ (Ω/4)(zτ_Σ + τ_2)M[a] ∓ (Ω/4)(zτ_Σ − τ_2)M[a†]
///           + (Ω²/4)(direct + z·cross)D[a] + (Ω²/4)(direct − z·cross)D[a†]]
///
/// with z the preparation polarization, followed by the readout confusion
/// K̄_+ = (1 − ε_e)K_+ + ε_g K_−, K̄_− = (1 − ε_g)K_− + ε_e K_+.
///
/// Free evolution of the oscillator during τ is not included; protocols apply
/// it over the whole period.
pub fn imperfect_kraus(
    prep: Prep,
    q: &QubitModel,
    omega: f64,
    tau: f64,
) -> Result<ImperfectKraus, MeasurementError> {
    q.validate()?;
    if !(omega >= 0.0 && tau >= 0.0) {
        return Err(MeasurementError::InvalidInteraction(format!("omega = {omega}, tau = {tau}")));
    }
    let k = time_kernels(q.kappa_1, q.kappa_2, tau);
    let z = q.polarization(prep);
    let lin_a = 0.125 * omega * (z * k.tau_sigma + k.tau_2);
    let lin_adag = 0.125 * omega * (z * k.tau_sigma - k.tau_2);
    let quad = 0.125 * omega * omega;
    let base = LinearKrausMap {
        identity: 0.5,
        m_a: 0.0,
        m_adag: 0.0,
        d_a: quad * (k.direct + z * k.cross),
        d_adag: quad * (k.direct - z * k.cross),
    };
    let raw = KrausPair {
        plus: LinearKrausMap { m_a: -lin_a, m_adag: -lin_adag, ..base },
        minus: LinearKrausMap { m_a: lin_a, m_adag: lin_adag, ..base },
    };
    let (ep, em) = (q.eps_e, q.eps_g);
    let mixed = KrausPair {
        plus: raw.plus.scale(1.0 - ep).add(&raw.minus.scale(em)),
        minus: raw.minus.scale(1.0 - em).add(&raw.plus.scale(ep)),
    };
    Ok(ImperfectKraus { raw, mixed, kernels: k })
}

/// Extra (D[a], D[a†]) rates of the outcome-averaged probe map for one
/// preparation, spread over the cycle period.
pub fn mean_backaction(prep: Prep, q: &QubitModel, ip: &InteractionParams) -> Result<(f64, f64), MeasurementError> {
    ip.validate()?;
    Ok(imperfect_kraus(prep, q, ip.omega, ip.tau)?.backaction_rates(ip.period))
}

/// [`mean_backaction`] averaged over the preparation schedule.
pub fn schedule_backaction(
    schedule: Schedule,
    q: &QubitModel,
    ip: &InteractionParams,
) -> Result<(f64, f64), MeasurementError> {
    match schedule {
        Schedule::Ground => mean_backaction(Prep::Ground, q, ip),
        Schedule::Excited => mean_backaction(Prep::Excited, q, ip),
        Schedule::Alternating => {
            let (gd, gu) = mean_backaction(Prep::Ground, q, ip)?;
            let (ed, eu) = mean_backaction(Prep::Excited, q, ip)?;
            Ok((0.5 * (gd + ed), 0.5 * (gu + eu)))
        }
    }
}

/// Probe operators on the joint space (qubit first, ordered e, g).
struct JointOps {
    sigma: CMat,
    sigma_z: CMat,
    a: CMat,
    a_dag: CMat,
    id_q: CMat,
    id_m: CMat,
}

fn joint_ops(dim: usize) -> Result<JointOps, MeasurementError> {
    let ops = fock_operators(dim)?;
    let mut sigma = CMat::zeros(2, 2);
    sigma[(1, 0)] = C64::new(1.0, 0.0);
    let mut sigma_z = CMat::zeros(2, 2);
    sigma_z[(0, 0)] = C64::new(1.0, 0.0);
    sigma_z[(1, 1)] = C64::new(-1.0, 0.0);
    Ok(JointOps {
        sigma,
        sigma_z,
        a: ops.a,
        a_dag: ops.a_dag,
        id_q: CMat::identity(2, 2),
        id_m: CMat::identity(dim, dim),
    })
}

/// Qubit-only Liouvillian with jumps √(κ_1/2)σ, √(κ_1/2)σ†, √(κ_φ/2)σ_z.
pub fn qubit_liouvillian(q: &QubitModel) -> Result<Superoperator, MeasurementError> {
    q.validate()?;
    let j = joint_ops(2)?;
    Ok(dissipator(&j.sigma)?
        .scale(0.5 * q.kappa_1)
        .add(&dissipator(&j.sigma.adjoint())?.scale(0.5 * q.kappa_1))
        .add(&dissipator(&j.sigma_z)?.scale(0.5 * q.kappa_phi())))
}

/// Full qubit ⊗ oscillator Liouvillian: Δa†a + (iΩ/2)(σa† − σ†a), thermal
/// oscillator damping and qubit decoherence. Brute-force reference only.
pub fn joint_liouvillian_oracle(
    p: &OscillatorParams,
    q: &QubitModel,
    omega: f64,
) -> Result<Superoperator, MeasurementError> {
    p.validate()?;
    q.validate()?;
    let j = joint_ops(p.dim)?;
    let kron = |x: &CMat, y: &CMat| x.kronecker(y);
    let coupling = (kron(&j.sigma, &j.a_dag) - kron(&j.sigma.adjoint(), &j.a)) * C64::new(0.0, 0.5 * omega);
    let h = kron(&j.id_q, &(&j.a_dag * &j.a)) * C64::new(p.delta, 0.0) + coupling;
    let qd = |op: &CMat| kron(op, &j.id_m);
    let md = |op: &CMat| kron(&j.id_q, op);
    Ok(hamiltonian_part(&h)?
        .add(&dissipator(&md(&j.a))?.scale(p.rate_down()))
        .add(&dissipator(&md(&j.a_dag))?.scale(p.rate_up()))
        .add(&dissipator(&qd(&j.sigma))?.scale(0.5 * q.kappa_1))
        .add(&dissipator(&qd(&j.sigma.adjoint()))?.scale(0.5 * q.kappa_1))
        .add(&dissipator(&qd(&j.sigma_z))?.scale(0.5 * q.kappa_phi())))
}

/// Outcome maps ρ ↦ Tr_q[|±⟩⟨±| e^{Lτ}(ρ_q ⊗ ρ)] from the joint Liouvillian,
/// without readout errors. Includes oscillator evolution during τ.
pub fn oracle_kraus(
    p: &OscillatorParams,
    q: &QubitModel,
    omega: f64,
    tau: f64,
    prep: Prep,
) -> Result<[Superoperator; 2], MeasurementError> {
    let dim = p.dim;
    let prop = propagate(&joint_liouvillian_oracle(p, q, omega)?, tau)?;
    let pg = q.ground_population(prep);
    let mut rho_q = CMat::zeros(2, 2);
    rho_q[(0, 0)] = C64::new(1.0 - pg, 0.0);
    rho_q[(1, 1)] = C64::new(pg, 0.0);
    let mut plus = CMat::zeros(dim * dim, dim * dim);
    let mut minus = CMat::zeros(dim * dim, dim * dim);
    for c in 0..dim {
        for r in 0..dim {
            let mut unit = CMat::zeros(dim, dim);
            unit[(r, c)] = C64::new(1.0, 0.0);
            let out = prop.apply(&rho_q.kronecker(&unit));
            let ee = out.view((0, 0), (dim, dim));
            let gg = out.view((dim, dim), (dim, dim));
            let ge = out.view((dim, 0), (dim, dim));
            let eg = out.view((0, dim), (dim, dim));
            let diag = (ee + gg) * C64::new(0.5, 0.0);
            let coh = (ge + eg) * C64::new(0.5, 0.0);
            let col = c * dim + r;
            plus.set_column(col, &vectorize(&(&diag + &coh)));
            minus.set_column(col, &vectorize(&(&diag - &coh)));
        }
    }
    Ok([Superoperator::from_matrix(plus)?, Superoperator::from_matrix(minus)?])
}

/// Frobenius distance between the raw imperfect outcome maps and the joint
/// evolution oracle, summed over both outcomes.
pub fn oracle_distance(
    p: &OscillatorParams,
    q: &QubitModel,
    theta_1: f64,
    tau: f64,
    prep: Prep,
) -> Result<f64, MeasurementError> {
    if !(tau > 0.0) {
        return Err(MeasurementError::InvalidInteraction(format!("tau = {tau}")));
    }
    let omega = theta_1 / tau;
    let [op, om] = oracle_kraus(p, q, omega, tau, prep)?;
    let k = imperfect_kraus(prep, q, omega, tau)?;
    let kp = k.raw.plus.superoperator(p.dim)?;
    let km = k.raw.minus.superoperator(p.dim)?;
    Ok(op.sub(&kp).norm() + om.sub(&km).norm())
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, expect, projector, thermal_state};
    use crate::lindblad::steady_state;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_angle_unitary_is_identity() {
        let u = exact_interaction_unitary(0.0, 5).unwrap();
        assert!(max_abs(&(u - CMat::identity(10, 10))) < 1e-15);
    }

    #[test]
    fn pi_pulse_swaps_single_excitation() {
        let dim = 4;
        let u = exact_interaction_unitary(std::f64::consts::PI, dim).unwrap();
        // |e,0⟩ → |g,1⟩
        assert_abs_diff_eq!(u[(dim + 1, 0)].norm_sqr(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(u[(0, 0)].norm_sqr(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn unitary_away_from_cutoff() {
        let dim = 8;
        let u = exact_interaction_unitary(0.83, dim).unwrap();
        let uu = u.adjoint() * &u;
        for i in 0..2 * dim {
            for j in 0..2 * dim {
                if i == dim - 1 || j == dim - 1 {
                    continue;
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((uu[(i, j)] - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unitary_matches_generator_exponential() {
        // compare with exp(−iHτ) on a space where the cutoff edge is unpopulated
        let dim = 6;
        let j = joint_ops(dim).unwrap();
        let gen = (j.sigma.kronecker(&j.a_dag) - j.sigma.adjoint().kronecker(&j.a)) * C64::new(0.35, 0.0);
        let u_ref = gen.exp();
        let u = exact_interaction_unitary(0.7, dim).unwrap();
        for c in 0..2 * dim {
            if c == dim - 1 {
                continue;
            }
            for r in 0..2 * dim {
                assert!((u[(r, c)] - u_ref[(r, c)]).norm() < 1e-12, "({r},{c})");
            }
        }
    }

    #[test]
    fn branch_operators_are_projections_of_unitary() {
        let dim = 7;
        let theta = 0.9;
        let u = exact_interaction_unitary(theta, dim).unwrap();
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        let blk = |r0: usize, c0: usize| u.view((r0, c0), (dim, dim)).into_owned();
        let (uee, ueg, uge, ugg) = (blk(0, 0), blk(0, dim), blk(dim, 0), blk(dim, dim));
        let g = measurement_operators(Prep::Ground, theta, dim, ExpansionOrder::Exact).unwrap();
        assert!(max_abs(&(&g.plus - (&ugg + &ueg) * C64::new(r2, 0.0))) < 1e-14);
        assert!(max_abs(&(&g.minus - (&ugg - &ueg) * C64::new(r2, 0.0))) < 1e-14);
        let e = measurement_operators(Prep::Excited, theta, dim, ExpansionOrder::Exact).unwrap();
        assert!(max_abs(&(&e.plus - (&uee + &uge) * C64::new(r2, 0.0))) < 1e-14);
        assert!(max_abs(&(&e.minus - (&uee - &uge) * C64::new(r2, 0.0))) < 1e-14);
    }

    #[test]
    fn zero_angle_operators() {
        for prep in [Prep::Ground, Prep::Excited] {
            for order in [ExpansionOrder::Exact, ExpansionOrder::Second] {
                let m = measurement_operators(prep, 0.0, 4, order).unwrap();
                let want = CMat::identity(4, 4) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                assert!(max_abs(&(&m.plus - &want)) < 1e-15);
                assert!(max_abs(&(&m.minus - &want)) < 1e-15);
            }
        }
        assert!(measurement_operators(Prep::Ground, 0.5, 4, ExpansionOrder::Second).unwrap().large_angle);
        assert!(!measurement_operators(Prep::Ground, 0.5, 4, ExpansionOrder::Exact).unwrap().large_angle);
    }

    #[test]
    fn exact_povm_is_complete() {
        let dim = 10;
        for &theta in &[0.05, 0.4, 2.0] {
            let m = measurement_operators(Prep::Ground, theta, dim, ExpansionOrder::Exact).unwrap();
            let s = m.plus.adjoint() * &m.plus + m.minus.adjoint() * &m.minus;
            assert!(max_abs(&(s - CMat::identity(dim, dim))) < 1e-14);
            let m = measurement_operators(Prep::Excited, theta, dim, ExpansionOrder::Exact).unwrap();
            let s = m.plus.adjoint() * &m.plus + m.minus.adjoint() * &m.minus;
            // the top level has no partner inside the cutoff
            let mut inner = s.clone();
            inner[(dim - 1, dim - 1)] = C64::new(1.0, 0.0);
            assert!(max_abs(&(inner - CMat::identity(dim, dim))) < 1e-14);
        }
    }

    #[test]
    fn second_order_povm_defect_is_cubic() {
        // operator norm of the defect, checked on a few low levels
        let dim = 6;
        for prep in [Prep::Ground, Prep::Excited] {
            for &theta in &[0.02, 0.05, 0.1] {
                let m = measurement_operators(prep, theta, dim, ExpansionOrder::Second).unwrap();
                let s = m.plus.adjoint() * &m.plus + m.minus.adjoint() * &m.minus - CMat::identity(dim, dim);
                let top = dim - 2;
                let defect = s.view((0, 0), (top, top)).into_owned();
                let norm = defect.singular_values().max();
                assert!(norm <= 5.0 * theta.powi(3) * (dim as f64).powi(2), "{prep:?} {theta}: {norm}");
            }
        }
    }

    #[test]
    fn sigma_x_tracks_position() {
        let dim = 30;
        let theta = 1e-3;
        let alpha = C64::new(0.8, 0.3);
        let rho = projector(&coherent_state(dim, alpha).unwrap());
        let x = expect(&fock_operators(dim).unwrap().x, &rho).re;
        for (prep, sign) in [(Prep::Ground, -1.0), (Prep::Excited, 1.0)] {
            let m = measurement_operators(prep, theta, dim, ExpansionOrder::Exact).unwrap();
            let pp = conditional_update(&rho, &m.plus).unwrap().probability;
            let pm = conditional_update(&rho, &m.minus).unwrap().probability;
            assert_abs_diff_eq!(pp - pm, sign * theta * x, epsilon = 1e-6 * theta);
        }
    }

    #[test]
    fn excited_coherent_state_outcome_bias() {
        // exact ⟨σx⟩ = 2 Re⟨U_ee ψ|U_ge ψ⟩ summed over the |n+1⟩ components
        let dim = 30;
        let theta: f64 = 0.1;
        let psi = coherent_state(dim, C64::new(1.0, 0.0)).unwrap();
        let mut want = 0.0;
        for n in 0..dim - 1 {
            let h = |k: usize| 0.5 * theta * ((k + 1) as f64).sqrt();
            want += 2.0 * psi[n].re * psi[n + 1].re * h(n).sin() * h(n + 1).cos();
        }
        let rho = projector(&psi);
        let m = measurement_operators(Prep::Excited, theta, dim, ExpansionOrder::Exact).unwrap();
        let pp = conditional_update(&rho, &m.plus).unwrap().probability;
        let pm = conditional_update(&rho, &m.minus).unwrap().probability;
        assert_abs_diff_eq!(pp + pm, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pp - pm, want, epsilon = 1e-12);
        // first-order relation ⟨σx⟩ = θ Re α holds up to O(θ³)
        assert!((pp - pm - theta).abs() < theta.powi(3));
    }

    #[test]
    fn vacuum_and_thermal_updates() {
        let dim = 12;
        let vac = thermal_state(dim, 0.0).unwrap();
        let m = measurement_operators(Prep::Ground, 0.2, dim, ExpansionOrder::Exact).unwrap();
        let out = conditional_update(&vac, &m.plus).unwrap();
        assert!(max_abs(&(out.state - &vac)) < 1e-14);
        let th = thermal_state(dim, 1.0).unwrap();
        let p = conditional_update(&th, &m.plus).unwrap().probability;
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        let zero = CMat::zeros(dim, dim);
        assert!(matches!(conditional_update(&th, &zero), Err(MeasurementError::ZeroProbability(_))));
    }

    #[test]
    fn kraus_maps_limits() {
        let dim = 5;
        let k = kraus_maps(Prep::Ground, 0.0, dim).unwrap();
        let half = Superoperator::identity(dim).scale(0.5);
        assert!(k.k_plus.sub(&half).norm() < 1e-15);
        assert!(k.k_minus.sub(&half).norm() < 1e-15);
        let k = kraus_maps(Prep::Ground, 0.3, 20).unwrap();
        let th = thermal_state(20, 1.0).unwrap();
        assert_abs_diff_eq!(k.k_mean.apply(&th).trace().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_map_cools_one_phonon() {
        let dim = 6;
        let n_op = fock_operators(dim).unwrap().number();
        let mut one = CMat::zeros(dim, dim);
        one[(1, 1)] = C64::new(1.0, 0.0);
        for &theta in &[0.1, 0.05] {
            let k = kraus_maps(Prep::Ground, theta, dim).unwrap();
            let n = expect(&n_op, &k.k_mean.apply(&one)).re;
            assert_abs_diff_eq!(n, 1.0 - theta * theta / 4.0, epsilon = theta.powi(4));
            // the exact branch maps agree to fourth order
            let m = measurement_operators(Prep::Ground, theta, dim, ExpansionOrder::Exact).unwrap();
            let exact = &m.plus * &one * m.plus.adjoint() + &m.minus * &one * m.minus.adjoint();
            assert_abs_diff_eq!(expect(&n_op, &exact).re, n, epsilon = theta.powi(4));
        }
    }

    #[test]
    fn sparse_apply_matches_superoperator() {
        let dim = 10;
        let k = LinearKrausMap { identity: 0.3, m_a: -0.7, m_adag: 0.2, d_a: 1.1, d_adag: 0.4 };
        let sup = k.superoperator(dim).unwrap();
        let psi = coherent_state(dim, C64::new(0.6, -0.2)).unwrap();
        let rho = projector(&psi) * C64::new(0.5, 0.0) + thermal_state(dim, 0.8).unwrap() * C64::new(0.5, 0.0);
        assert!(max_abs(&(k.apply(&rho) - sup.apply(&rho))) < 1e-14);
        assert_abs_diff_eq!(k.probability(&rho), sup.apply(&rho).trace().re, epsilon = 1e-14);
    }

    #[test]
    fn bidiagonal_sandwich_matches_dense() {
        let dim = 9;
        let rho = {
            let psi = coherent_state(dim, C64::new(0.4, 0.5)).unwrap();
            projector(&psi) * C64::new(0.3, 0.0) + thermal_state(dim, 1.2).unwrap() * C64::new(0.7, 0.0)
        };
        for prep in [Prep::Ground, Prep::Excited] {
            for op in exact_branch_operators(prep, 0.77, dim).unwrap() {
                let m = op.to_dense();
                let want = &m * &rho * m.adjoint();
                assert!(max_abs(&(op.sandwich(&rho) - &want)) < 1e-14);
                assert_abs_diff_eq!(op.probability(&rho), want.trace().re, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn backaction_rates_from_published_numbers() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let p = OscillatorParams { omega_m: 0.0, kappa_m: two_pi * 26.1, n_th: 47.0, delta: 0.0, dim: 4 };
        let g = effective_rates(Schedule::Ground, two_pi * 2.4, &p);
        let e = effective_rates(Schedule::Excited, two_pi * 2.4, &p);
        assert_abs_diff_eq!(g.kappa_eff / two_pi, 28.5, epsilon = 1e-9);
        assert_abs_diff_eq!(e.kappa_eff / two_pi, 23.7, epsilon = 1e-9);
        assert!(!e.amplification_warning);
        let k = backaction_rate(0.047, 15.5e-6);
        assert_abs_diff_eq!(k / two_pi, 5.67, epsilon = 0.01);
        assert!(effective_rates(Schedule::Excited, 2.0 * p.kappa_m, &p).amplification_warning);
    }

    #[test]
    fn effective_liouvillian_steady_states() {
        let dim = 30;
        let p = OscillatorParams { omega_m: 0.0, kappa_m: 1.0, n_th: 1.0, delta: 0.3, dim };
        let n_op = fock_operators(dim).unwrap().number();
        let zero = InteractionParams { omega: 0.0, tau: 1.0, period: 2.0, schedule: Schedule::Ground };
        let d = effective_liouvillian(Schedule::Ground, &zero, &p).unwrap();
        assert!(d.liouvillian.sub(&mech_liouvillian(&p).unwrap()).norm() < 1e-15);
        // κ = θ²/4T = 1/8
        let ip = InteractionParams { omega: 2.0, tau: 0.5, period: 2.0, schedule: Schedule::Ground };
        let kappa = 0.125;
        let g = effective_liouvillian(Schedule::Ground, &ip, &p).unwrap();
        let n = expect(&n_op, &steady_state(&g.liouvillian).unwrap()).re;
        assert_abs_diff_eq!(n, 1.0 / (1.0 + kappa), epsilon = 1e-6);
        assert_abs_diff_eq!(g.rates.n_eff, 1.0 / (1.0 + kappa), epsilon = 1e-12);
        let a = effective_liouvillian(Schedule::Alternating, &ip, &p).unwrap();
        let n = expect(&n_op, &steady_state(&a.liouvillian).unwrap()).re;
        assert_abs_diff_eq!(n, 1.0 + kappa / 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(a.rates.kappa_eff, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kernels_of_published_qubit() {
        let k = time_kernels(1.0 / 7.4e-6, 1.0 / 4.2e-6, 4e-6);
        assert_abs_diff_eq!(k.tau_2 / k.tau_sigma, 1.35, epsilon = 0.01);
    }

    #[test]
    fn kernel_limits() {
        let t = 3e-6;
        let k = time_kernels(0.0, 0.0, t);
        assert_eq!(k.tau_1, t);
        assert_eq!(k.tau_2, t);
        assert_abs_diff_eq!(k.tau_sigma, t, epsilon = 1e-20);
        assert_abs_diff_eq!(k.direct, t * t / 2.0, epsilon = 1e-24);
        assert_abs_diff_eq!(k.cross, t * t / 2.0, epsilon = 1e-24);
        // equal rates: τ_Σ → t e^{−κt}
        let kap = 2e5;
        let k = time_kernels(kap, kap, t);
        assert_abs_diff_eq!(k.tau_sigma, t * (-kap * t).exp(), epsilon = 1e-18);
        // continuity across the switch between formulas
        let a = time_kernels(kap, kap * (1.0 + 1e-6), t);
        let b = time_kernels(kap, kap * (1.0 + 1e-3), t);
        assert!((a.cross - b.cross).abs() / b.cross < 1e-3);
        assert!((a.tau_sigma - b.tau_sigma).abs() / b.tau_sigma < 1e-3);
    }

    #[test]
    fn kernels_match_quadrature() {
        let (k1, k2, t) = (1.3e5, 2.9e5, 4e-6);
        let n = 200_000;
        let h = t / n as f64;
        let (mut tau1, mut tau2, mut direct, mut cross) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let s = (i as f64 + 0.5) * h;
            let (e1, e2) = ((-k1 * s).exp(), (-k2 * s).exp());
            tau1 += e1 * h;
            tau2 += e2 * h;
            direct += (t - s) * e2 * h;
            cross += s * (e2 - e1) / ((k1 - k2) * s) * h;
        }
        let k = time_kernels(k1, k2, t);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(k.tau_1, tau1) < 1e-9);
        assert!(rel(k.tau_2, tau2) < 1e-9);
        assert!(rel(k.tau_sigma, (k1 * tau1 - k2 * tau2) / (k1 - k2)) < 1e-8);
        assert!(rel(k.direct, direct) < 1e-9);
        assert!(rel(k.cross, cross) < 1e-9);
    }

    fn lossy_qubit() -> QubitModel {
        QubitModel { eta_g: 0.9, eta_e: 0.8, eps_g: 0.0, eps_e: 0.0, kappa_1: 1.0 / 7.4e-6, kappa_2: 1.0 / 4.2e-6 }
    }

    fn quiet_oscillator(dim: usize) -> OscillatorParams {
        OscillatorParams { omega_m: 0.0, kappa_m: 1e-6, n_th: 0.0, delta: 0.0, dim }
    }

    #[test]
    fn uncoupled_oracle_factorizes() {
        let dim = 4;
        let p = OscillatorParams { omega_m: 0.0, kappa_m: 2e4, n_th: 0.7, delta: 3e4, dim };
        let q = lossy_qubit();
        let t = 5e-6;
        let joint = propagate(&joint_liouvillian_oracle(&p, &q, 0.0).unwrap(), t).unwrap();
        let lq = propagate(&qubit_liouvillian(&q).unwrap(), t).unwrap();
        let lm = propagate(&mech_liouvillian(&p).unwrap(), t).unwrap();
        let mut rho_q = CMat::zeros(2, 2);
        rho_q[(0, 0)] = C64::new(0.3, 0.0);
        rho_q[(1, 1)] = C64::new(0.7, 0.0);
        rho_q[(0, 1)] = C64::new(0.2, 0.1);
        rho_q[(1, 0)] = C64::new(0.2, -0.1);
        let rho_m = projector(&coherent_state(dim, C64::new(0.05, 0.02)).unwrap());
        let out = joint.apply(&rho_q.kronecker(&rho_m));
        let want = lq.apply(&rho_q).kronecker(&lm.apply(&rho_m));
        assert!(max_abs(&(out - want)) < 1e-12);
    }

    #[test]
    fn qubit_decay_closed_form() {
        let q = lossy_qubit();
        for &t in &[1e-6, 4e-6, 2e-5] {
            let e = propagate(&qubit_liouvillian(&q).unwrap(), t).unwrap();
            let (d1, d2) = ((-q.kappa_1 * t).exp(), (-q.kappa_2 * t).exp());
            // column-stacked order (ee, ge, eg, gg)
            let want = [
                [(1.0 + d1) / 2.0, 0.0, 0.0, (1.0 - d1) / 2.0],
                [0.0, d2, 0.0, 0.0],
                [0.0, 0.0, d2, 0.0],
                [(1.0 - d1) / 2.0, 0.0, 0.0, (1.0 + d1) / 2.0],
            ];
            for r in 0..4 {
                for c in 0..4 {
                    assert!((e.matrix()[(r, c)] - C64::new(want[r][c], 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn imperfect_maps_converge_to_joint_evolution() {
        let q = lossy_qubit();
        let p = quiet_oscillator(6);
        for prep in [Prep::Ground, Prep::Excited] {
            let thetas = [0.1, 0.05, 0.025, 0.0125];
            let d: Vec<f64> = thetas.iter().map(|&t| oracle_distance(&p, &q, t, 4e-6, prep).unwrap()).collect();
            let slope = loglog_slope(&thetas, &d);
            assert!((slope - 3.0).abs() < 0.15, "{prep:?}: slope {slope}, distances {d:?}");
        }
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn lossy_sigma_x_matches_oracle() {
        let dim = 8;
        let tau = 4e-6;
        let theta = 0.05;
        let q = lossy_qubit();
        let p = quiet_oscillator(dim);
        let rho = projector(&coherent_state(dim, C64::new(0.3, 0.1)).unwrap());
        for prep in [Prep::Ground, Prep::Excited] {
            let [op, om] = oracle_kraus(&p, &q, theta / tau, tau, prep).unwrap();
            let want = op.apply(&rho).trace().re - om.apply(&rho).trace().re;
            let k = imperfect_kraus(prep, &q, theta / tau, tau).unwrap();
            let got = k.raw.plus.probability(&rho) - k.raw.minus.probability(&rho);
            assert!(want.abs() > 0.2 * theta * 0.3);
            assert!((got - want).abs() < theta.powi(3), "{prep:?}: {got} vs {want}");
        }
    }

    #[test]
    fn imperfect_reduces_to_ideal() {
        for prep in [Prep::Ground, Prep::Excited] {
            let k = imperfect_kraus(prep, &QubitModel::ideal(), 0.1 / 2e-6, 2e-6).unwrap();
            let ideal = ideal_kraus(prep, 0.1);
            for (a, b) in [(k.mixed.plus, ideal.plus), (k.mixed.minus, ideal.minus)] {
                assert_abs_diff_eq!(a.identity, b.identity, epsilon = 1e-15);
                assert_abs_diff_eq!(a.m_a, b.m_a, epsilon = 1e-15);
                assert_abs_diff_eq!(a.m_adag, b.m_adag, epsilon = 1e-15);
                assert_abs_diff_eq!(a.d_a, b.d_a, epsilon = 1e-15);
                assert_abs_diff_eq!(a.d_adag, b.d_adag, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn outcome_sum_is_mean_map() {
        let dim = 10;
        let rho = projector(&coherent_state(dim, C64::new(0.5, -0.4)).unwrap());
        for prep in [Prep::Ground, Prep::Excited] {
            let k = kraus_maps(prep, 0.2, dim).unwrap();
            let sum = k.k_plus.apply(&rho) + k.k_minus.apply(&rho);
            assert!(max_abs(&(sum - k.k_mean.apply(&rho))) < 1e-12);
        }
    }

    #[test]
    fn ideal_mean_backaction_is_theta_squared_over_4t() {
        let ip = InteractionParams { omega: 2.5e4, tau: 4e-6, period: 1e-5, schedule: Schedule::Alternating };
        let k = backaction_rate(ip.theta_1(), ip.period);
        let q = QubitModel::ideal();
        let (d, u) = mean_backaction(Prep::Ground, &q, &ip).unwrap();
        assert_abs_diff_eq!(d, k, epsilon = 1e-12 * k);
        assert_abs_diff_eq!(u, 0.0, epsilon = 1e-12 * k);
        let (d, u) = schedule_backaction(Schedule::Alternating, &q, &ip).unwrap();
        assert_abs_diff_eq!(d, 0.5 * k, epsilon = 1e-12 * k);
        assert_abs_diff_eq!(u, 0.5 * k, epsilon = 1e-12 * k);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn confusion_preserves_trace(eta_g in 0.0f64..1.0, eta_e in 0.0f64..1.0,
                                     eps_g in 0.0f64..0.5, eps_e in 0.0f64..0.5,
                                     k1 in 0.0f64..3e5, extra in 0.0f64..3e5,
                                     theta in 0.0f64..0.3, e_prep in proptest::bool::ANY) {
            let q = QubitModel { eta_g, eta_e, eps_g, eps_e, kappa_1: k1, kappa_2: 0.5 * k1 + extra };
            let prep = if e_prep { Prep::Excited } else { Prep::Ground };
            let k = imperfect_kraus(prep, &q, theta / 4e-6, 4e-6).unwrap();
            let dim = 8;
            let sum = k.mixed.plus.superoperator(dim).unwrap().add(&k.mixed.minus.superoperator(dim).unwrap());
            prop_assert!(sum.trace_defect() < 1e-10);
            let rho = thermal_state(dim, 0.5).unwrap();
            let pp = k.mixed.plus.probability(&rho);
            prop_assert!((pp - 0.5 * (1.0 + eps_g - eps_e)).abs() < 1e-12);
        }

        #[test]
        fn branch_probabilities_sum_to_one(theta in 0.0f64..1.5, re in -1.0f64..1.0, im in -1.0f64..1.0,
                                           n_th in 0.0f64..1.0, e_prep in proptest::bool::ANY) {
            let dim = 24;
            let prep = if e_prep { Prep::Excited } else { Prep::Ground };
            let rho = projector(&coherent_state(dim, C64::new(re, im)).unwrap()) * C64::new(0.5, 0.0)
                + thermal_state(dim, n_th).unwrap() * C64::new(0.5, 0.0);
            let [p, m] = exact_branch_operators(prep, theta, dim).unwrap();
            // |e, dim−1⟩ leaks its sin² weight past the cutoff
            let leak = match prep {
                Prep::Ground => 0.0,
                Prep::Excited => (0.5 * theta * (dim as f64).sqrt()).sin().powi(2) * rho[(dim - 1, dim - 1)].re,
            };
            prop_assert!((p.probability(&rho) + m.probability(&rho) - 1.0 + leak).abs() < 1e-12);
        }
    }
}
