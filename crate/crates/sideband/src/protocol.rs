//! Stroboscopic measurement engine.
//!
//! Each cycle applies free evolution over the full period T, then one probe
//! interaction and a σx readout. Records are produced in independent chunks,
//! each on its own RNG substream and started from (approximately) the
//! stationary state followed by a discarded burn-in, so the output does not
//! depend on scheduling or thread count.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fock::{thermal_populations, thermal_state, FockError, OscillatorParams};
use crate::lindblad::{LindbladError, SectorPropagator};
use crate::measurement::{
    exact_branch_operators, imperfect_kraus, rates_with_extra, schedule_backaction,
    BidiagonalOperator, ExpansionOrder, InteractionParams, KrausPair, MeasurementError, Prep,
    QubitModel,
};
use crate::rng::{substream, StreamRng};
use crate::{CMat, C64};

pub const DEFAULT_CHUNK_CYCLES: u64 = 1 << 20;
/// Abort when the two highest Fock levels hold more than this population.
pub const DEFAULT_TAIL_TOL: f64 = 1e-4;
/// Burn-in length in units of the effective mechanical decay time.
/// Instantaneous tail population of a conditional density matrix, in units
/// of `tail_tol`, that aborts a run.
pub const GROSS_TAIL_FACTOR: f64 = 100.0;
pub const BURN_IN_LIFETIMES: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "Fock cutoff breached at cycle {cycle}: top-level population {population:.3e} exceeds {tol:.1e}"
    )]
    Truncation { cycle: u64, population: f64, tol: f64 },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error(transparent)]
    Fock(#[from] FockError),
}

/// Weak qubit drive applied just before each readout: a rotation about y by
/// φ_k with sin φ_k = c·cos(ω_cal t_k + φ₀), t_k = kT. It shifts the outcome
/// mean by sin φ_k times the qubit polarization at readout and scales the
/// position signal by cos φ_k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTone {
    /// Peak mean shift c of an ideally prepared record.
    pub amplitude: f64,
    /// Tone frequency in the qubit frame (rad/s).
    pub frequency: f64,
    pub phase: f64,
}

impl CalibrationTone {
    /// sin φ at time t.
    pub fn shift_at(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).cos()
    }

    /// Mean of cos φ over the tone phase. Away from lag zero the thermal
    /// covariance is scaled by its square.
    pub fn contrast_factor(&self) -> f64 {
        let n = 256;
        (0..n)
            .map(|i| {
                let u = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                (1.0 - (self.amplitude * u.cos()).powi(2)).sqrt()
            })
            .sum::<f64>()
            / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Quantum,
    Semiclassical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumBackend {
    /// Conditional density matrix.
    DensityMatrix,
    /// Pure-state unraveling of the same conditional dynamics; the record
    /// statistics are identical and each cycle costs O(dim).
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub oscillator: OscillatorParams,
    pub qubit: QubitModel,
    pub interaction: InteractionParams,
    pub n_cycles: u64,
    pub calibration: Option<CalibrationTone>,
    pub engine: Engine,
    pub backend: QuantumBackend,
    /// Density backend only: exact interaction unitary, or the second-order
    /// maps (which include qubit decay). Exact maps with a lossy qubit and
    /// all trajectory runs use the exact joint dynamics.
    pub kraus: ExpansionOrder,
    pub seed: u64,
    pub chunk_cycles: u64,
    /// Discarded cycles per chunk; `None` picks ~10 effective lifetimes.
    pub burn_in: Option<u64>,
    pub tail_tol: f64,
}

impl ProtocolConfig {
    pub fn new(
        oscillator: OscillatorParams,
        qubit: QubitModel,
        interaction: InteractionParams,
        n_cycles: u64,
        seed: u64,
    ) -> Self {
        Self {
            oscillator,
            qubit,
            interaction,
            n_cycles,
            calibration: None,
            engine: Engine::Quantum,
            backend: QuantumBackend::Trajectory,
            kraus: ExpansionOrder::Exact,
            seed,
            chunk_cycles: DEFAULT_CHUNK_CYCLES,
            burn_in: None,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.oscillator.validate()?;
        self.qubit.validate()?;
        self.interaction.validate()?;
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        if self.n_cycles == 0 {
            return bad("n_cycles must be at least 1".into());
        }
        if self.chunk_cycles == 0 {
            return bad("chunk_cycles must be at least 1".into());
        }
        if let Some(c) = &self.calibration {
            if !(c.amplitude.abs() < 0.5 && c.frequency.is_finite() && c.phase.is_finite()) {
                return bad(format!("calibration amplitude {} must be small", c.amplitude));
            }
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return bad(format!("tail_tol = {}", self.tail_tol));
        }
        if self.engine == Engine::Quantum
            && self.backend == QuantumBackend::DensityMatrix
            && self.kraus == ExpansionOrder::Exact
            && !self.qubit.is_lossless()
        {
            return bad("exact maps with a decaying qubit need the trajectory backend".into());
        }
        if self.engine == Engine::Quantum
            && self.backend == QuantumBackend::Trajectory
            && self.kraus == ExpansionOrder::Second
        {
            return bad("the trajectory backend simulates exact dynamics; use kraus = exact".into());
        }
        if self.engine == Engine::Quantum && self.oscillator.dim < 3 {
            return bad("quantum engine needs dim >= 3".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    /// Damping and occupation of the oscillator under the schedule-averaged
    /// probe backaction.
    pub fn stationary_rates(&self) -> Result<(f64, f64), ProtocolError> {
        let (down, up) = match self.engine {
            Engine::Semiclassical => (0.0, 0.0),
            Engine::Quantum => schedule_backaction(self.interaction.schedule, &self.qubit, &self.interaction)?,
        };
        let (k, n) = rates_with_extra(&self.oscillator, down, up);
        if !(k > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "net mechanical damping {k:.3e} is not positive (backaction amplification)"
            )));
        }
        Ok((k, n))
    }

    pub fn burn_in_cycles(&self) -> Result<u64, ProtocolError> {
        if let Some(b) = self.burn_in {
            return Ok(b + b % 2);
        }
        let (k, _) = self.stationary_rates()?;
        let b = (BURN_IN_LIFETIMES / (k * self.interaction.period)).ceil() as u64;
        Ok(b + b % 2)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub chunks: u64,
    pub burn_in: u64,
    /// Cycles where an outcome mean or probability had to be clamped.
    pub clamp_count: u64,
    /// Largest population seen in the two highest Fock levels.
    pub max_tail_population: f64,
    /// Record-averaged population of the two highest Fock levels.
    pub mean_tail_population: f64,
    pub mechanical_jumps: u64,
    pub qubit_jumps: u64,
    #[serde(skip)]
    tail_samples: u64,
}

impl RunDiagnostics {
    fn add_tail(&mut self, tail: f64) {
        self.max_tail_population = self.max_tail_population.max(tail);
        self.tail_samples += 1;
        self.mean_tail_population += (tail - self.mean_tail_population) / self.tail_samples as f64;
    }

    fn merge(&mut self, o: &RunDiagnostics) {
        self.clamp_count += o.clamp_count;
        self.max_tail_population = self.max_tail_population.max(o.max_tail_population);
        let n = self.tail_samples + o.tail_samples;
        if n > 0 {
            self.mean_tail_population = (self.mean_tail_population * self.tail_samples as f64
                + o.mean_tail_population * o.tail_samples as f64)
                / n as f64;
        }
        self.tail_samples = n;
        self.mechanical_jumps += o.mechanical_jumps;
        self.qubit_jumps += o.qubit_jumps;
    }
}

/// ±1 outcomes with their preparation labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub outcomes: Vec<i8>,
    /// `None` for records without preparation labels.
    pub preps: Option<Vec<Prep>>,
    pub period: f64,
    pub fingerprint: String,
    pub seed: u64,
    pub diagnostics: RunDiagnostics,
}

impl MeasurementRecord {
    pub fn unlabeled(outcomes: Vec<i8>, period: f64) -> Self {
        Self {
            outcomes,
            preps: None,
            period,
            fingerprint: String::new(),
            seed: 0,
            diagnostics: RunDiagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|&m| m as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Either engine, dispatched on `cfg.engine`.
pub fn run(cfg: &ProtocolConfig) -> Result<MeasurementRecord, ProtocolError> {
    match cfg.engine {
        Engine::Quantum => run_quantum(cfg),
        Engine::Semiclassical => run_semiclassical(cfg),
    }
}

pub fn run_quantum(cfg: &ProtocolConfig) -> Result<MeasurementRecord, ProtocolError> {
    let cfg = ProtocolConfig { engine: Engine::Quantum, ..cfg.clone() };
    cfg.validate()?;
    let (_, n_eff) = cfg.stationary_rates()?;
    let pops = thermal_populations(cfg.oscillator.dim + 2, n_eff)?;
    let d = cfg.oscillator.dim;
    if pops[d - 2] + pops[d - 1] > 0.1 * cfg.tail_tol {
        return Err(ProtocolError::InvalidConfig(format!(
            "cutoff dim = {d} too small for stationary occupation {n_eff:.3}"
        )));
    }
    let burn_in = cfg.burn_in_cycles()?;
    let model = QuantumModel::new(&cfg, n_eff)?;
    let record = run_chunks(&cfg, burn_in, |chunk, start, len| match cfg.backend {
        QuantumBackend::DensityMatrix => model.density_chunk(&cfg, chunk, start, len, burn_in),
        QuantumBackend::Trajectory => model.trajectory_chunk(&cfg, chunk, start, len, burn_in),
    })?;
    // conditional states visit high levels briefly; the cutoff must
    // contain the record-averaged population
    let mean_tail = record.diagnostics.mean_tail_population;
    if mean_tail > cfg.tail_tol {
        return Err(ProtocolError::Truncation { cycle: cfg.n_cycles, population: mean_tail, tol: cfg.tail_tol });
    }
    Ok(record)
}

pub fn run_semiclassical(cfg: &ProtocolConfig) -> Result<MeasurementRecord, ProtocolError> {
    let cfg = ProtocolConfig { engine: Engine::Semiclassical, ..cfg.clone() };
    cfg.validate()?;
    run_chunks(&cfg, 0, |chunk, start, len| Ok(semiclassical_chunk(&cfg, chunk, start, len)))
}

type ChunkOutput = (Vec<i8>, RunDiagnostics);

fn run_chunks<F>(cfg: &ProtocolConfig, burn_in: u64, f: F) -> Result<MeasurementRecord, ProtocolError>
where
    F: Fn(u64, u64, u64) -> Result<ChunkOutput, ProtocolError> + Sync,
{
    let n_chunks = cfg.n_cycles.div_ceil(cfg.chunk_cycles);
    let results: Vec<Result<ChunkOutput, ProtocolError>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * cfg.chunk_cycles;
            let len = cfg.chunk_cycles.min(cfg.n_cycles - start);
            f(c, start, len)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(cfg.n_cycles as usize);
    let mut diagnostics = RunDiagnostics { chunks: n_chunks, burn_in, ..Default::default() };
    for r in results {
        let (o, d) = r?;
        outcomes.extend_from_slice(&o);
        diagnostics.merge(&d);
    }
    let preps = (0..cfg.n_cycles).map(|k| cfg.interaction.schedule.prep_at(k)).collect();
    Ok(MeasurementRecord {
        outcomes,
        preps: Some(preps),
        period: cfg.interaction.period,
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        diagnostics,
    })
}

/// Run `f` inside a pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, ProtocolError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ProtocolError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Readout confusion: P(− | +) = ε_e, P(+ | −) = ε_g.
struct Readout {
    eps_plus: f64,
    eps_minus: f64,
}

impl Readout {
    fn new(q: &QubitModel) -> Self {
        Self { eps_plus: q.eps_e, eps_minus: q.eps_g }
    }

    fn record(&self, rng: &mut StreamRng, true_plus: bool) -> i8 {
        let flip = if true_plus { self.eps_plus } else { self.eps_minus };
        let plus = if flip > 0.0 && rng.random::<f64>() < flip { !true_plus } else { true_plus };
        if plus {
            1
        } else {
            -1
        }
    }
}

/// Branch operators after a calibration rotation with sin φ = `shift`.
///
/// With ψ_g and ψ_e the probe components after the interaction, the rotated
/// readout projects onto (√(1+s)ψ_g + √(1−s)ψ_e)/√2 and
/// (√(1−s)ψ_g − √(1+s)ψ_e)/√2. The unrotated operators hold the component
/// along the prepared state on the diagonal and the exchanged one off it.
fn tilted_branches(ops: &[BidiagonalOperator; 2], prep: Prep, shift: f64) -> [BidiagonalOperator; 2] {
    let s = match prep {
        Prep::Ground => shift,
        Prep::Excited => -shift,
    };
    let (up, down) = ((1.0 + s).sqrt(), (1.0 - s).sqrt());
    let scale = |op: &BidiagonalOperator, d: f64, o: f64| BidiagonalOperator {
        diag: op.diag.iter().map(|x| x * d).collect(),
        off: op.off.iter().map(|x| x * o).collect(),
        upper: op.upper,
    };
    [scale(&ops[0], up, down), scale(&ops[1], down, up)]
}

fn sample_prep(rng: &mut StreamRng, q: &QubitModel, scheduled: Prep) -> Prep {
    let pg = q.ground_population(scheduled);
    if pg >= 1.0 {
        Prep::Ground
    } else if pg <= 0.0 {
        Prep::Excited
    } else if rng.random::<f64>() < pg {
        Prep::Ground
    } else {
        Prep::Excited
    }
}

/// Precomputed pieces shared by all chunks of a quantum run.
struct QuantumModel {
    dim: usize,
    n_start: f64,
    propagator: Option<SectorPropagator>,
    /// Exact branch operators, indexed [g, e][+, −].
    branches: [[BidiagonalOperator; 2]; 2],
    /// Second-order maps (raw, before readout errors), indexed [g, e].
    second: Option<[KrausPair; 2]>,
    free: FreeEvolution,
    interaction: ProbeInteraction,
    /// Polarization at readout per unit prepared polarization, e^{−κ1 τ}.
    readout_lever: f64,
}

impl QuantumModel {
    fn new(cfg: &ProtocolConfig, n_start: f64) -> Result<Self, ProtocolError> {
        let ip = &cfg.interaction;
        let theta = ip.theta_1();
        let dim = cfg.oscillator.dim;
        let branches = [
            exact_branch_operators(Prep::Ground, theta, dim)?,
            exact_branch_operators(Prep::Excited, theta, dim)?,
        ];
        let second = match (cfg.kraus, cfg.backend) {
            (ExpansionOrder::Second, QuantumBackend::DensityMatrix) => Some([
                imperfect_kraus(Prep::Ground, &cfg.qubit, ip.omega, ip.tau)?.raw,
                imperfect_kraus(Prep::Excited, &cfg.qubit, ip.omega, ip.tau)?.raw,
            ]),
            _ => None,
        };
        let propagator = match cfg.backend {
            QuantumBackend::DensityMatrix => Some(SectorPropagator::new(&cfg.oscillator, ip.period)?),
            QuantumBackend::Trajectory => None,
        };
        let interaction = ProbeInteraction::new(&cfg.qubit, ip.omega, ip.tau, dim);
        Ok(Self {
            dim,
            n_start,
            propagator,
            branches,
            second,
            free: FreeEvolution::new(&cfg.oscillator, ip.period),
            interaction,
            readout_lever: (-cfg.qubit.kappa_1 * ip.tau).exp(),
        })
    }

    fn density_chunk(
        &self,
        cfg: &ProtocolConfig,
        chunk: u64,
        start: u64,
        len: u64,
        burn_in: u64,
    ) -> Result<ChunkOutput, ProtocolError> {
        let mut rng = substream(cfg.seed, chunk);
        let prop = self.propagator.as_ref().expect("density backend has a propagator");
        let readout = Readout::new(&cfg.qubit);
        let mut diag = RunDiagnostics::default();
        let mut rho = thermal_state(self.dim, self.n_start)?;
        let mut scratch = Vec::with_capacity(self.dim);
        let mut out = Vec::with_capacity(len as usize);
        let d = self.dim;
        for i in 0..burn_in + len {
            // burn-in cycles share the parity of the recorded ones
            let k = (start + i).wrapping_sub(burn_in);
            let scheduled = cfg.interaction.schedule.prep_at(k);
            prop.apply_in_place(&mut rho, &mut scratch);
            let shift = cfg.calibration.map(|c| c.shift_at(k as f64 * cfg.interaction.period));
            let plus = match &self.second {
                None => {
                    let actual = sample_prep(&mut rng, &cfg.qubit, scheduled);
                    let ops = &self.branches[actual as usize];
                    let tilted;
                    let [mp, mm] = match shift {
                        Some(s) => {
                            tilted = tilted_branches(ops, actual, s);
                            &tilted
                        }
                        None => ops,
                    };
                    let pp = mp.probability(&rho);
                    let pm = mm.probability(&rho);
                    let plus = rng.random::<f64>() * (pp + pm) < pp;
                    let (op, p) = if plus { (mp, pp) } else { (mm, pm) };
                    rho = op.sandwich(&rho).unscale(p);
                    plus
                }
                Some(maps) => {
                    let raw = &maps[scheduled as usize];
                    let tilted;
                    let pair = match shift {
                        // O_± = ½(1 ± s·z_r)(K_+ + K_−) ± ½cos φ (K_+ − K_−), z_r the
                        // polarization at readout; O(sθ²) terms are dropped
                        Some(s) => {
                            let z = cfg.qubit.polarization(scheduled) * self.readout_lever;
                            let (sum, diff) = (raw.plus.add(&raw.minus), raw.plus.add(&raw.minus.scale(-1.0)));
                            let c = (1.0 - s * s).sqrt();
                            tilted = KrausPair {
                                plus: sum.scale(0.5 * (1.0 + s * z)).add(&diff.scale(0.5 * c)),
                                minus: sum.scale(0.5 * (1.0 - s * z)).add(&diff.scale(-0.5 * c)),
                            };
                            &tilted
                        }
                        None => raw,
                    };
                    let mut pp = pair.plus.probability(&rho);
                    if !(0.0..=1.0).contains(&pp) {
                        diag.clamp_count += 1;
                        pp = pp.clamp(1e-12, 1.0 - 1e-12);
                    }
                    let plus = rng.random::<f64>() < pp;
                    let map = pair.get(plus);
                    let next = map.apply(&rho);
                    let tr = next.trace().re;
                    rho = next.unscale(tr);
                    plus
                }
            };
            let tail = rho[(d - 1, d - 1)].re + rho[(d - 2, d - 2)].re;
            if i >= burn_in {
                diag.add_tail(tail);
            }
            if tail > GROSS_TAIL_FACTOR * cfg.tail_tol {
                return Err(ProtocolError::Truncation { cycle: k, population: tail, tol: cfg.tail_tol });
            }
            let m = readout.record(&mut rng, plus);
            if i >= burn_in {
                out.push(m);
            }
        }
        Ok((out, diag))
    }

    fn trajectory_chunk(
        &self,
        cfg: &ProtocolConfig,
        chunk: u64,
        start: u64,
        len: u64,
        burn_in: u64,
    ) -> Result<ChunkOutput, ProtocolError> {
        let mut rng = substream(cfg.seed, chunk);
        let readout = Readout::new(&cfg.qubit);
        let mut diag = RunDiagnostics::default();
        let d = self.dim;
        let mut psi = vec![C64::new(0.0, 0.0); d];
        psi[sample_thermal_level(&mut rng, self.n_start, d)] = C64::new(1.0, 0.0);
        let mut joint = JointScratch::new(d);
        let mut out = Vec::with_capacity(len as usize);
        for i in 0..burn_in + len {
            let k = (start + i).wrapping_sub(burn_in);
            let scheduled = cfg.interaction.schedule.prep_at(k);
            diag.mechanical_jumps += self.free.evolve(&mut psi, &mut rng);
            let actual = sample_prep(&mut rng, &cfg.qubit, scheduled);
            diag.qubit_jumps += self.interaction.interact(&psi, actual, &mut joint, &mut rng);
            let shift = cfg.calibration.map_or(0.0, |c| c.shift_at(k as f64 * cfg.interaction.period));
            let plus = joint.readout(&mut psi, &mut rng, shift);
            let tail = psi[d - 1].norm_sqr() + psi[d - 2].norm_sqr();
            if i >= burn_in {
                diag.add_tail(tail);
            }
            let m = readout.record(&mut rng, plus);
            if i >= burn_in {
                out.push(m);
            }
            // abort runs that leave the cutoff well before the end
            if diag.tail_samples >= 1 << 16 && diag.mean_tail_population > 10.0 * cfg.tail_tol {
                return Err(ProtocolError::Truncation {
                    cycle: k,
                    population: diag.mean_tail_population,
                    tol: cfg.tail_tol,
                });
            }
        }
        Ok((out, diag))
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn sample_thermal_level(rng: &mut StreamRng, n: f64, dim: usize) -> usize {
    if n <= 0.0 {
        return 0;
    }
    let r = n / (n + 1.0);
    let u: f64 = rng.random();
    // geometric inverse CDF: P(level ≥ k) = r^k
    let k = ((1.0 - u).ln() / r.ln()).floor();
    (k as usize).min(dim - 1)
}

/// Thermal free evolution of a pure state over one period by the waiting-time
/// method. The no-jump generator is diagonal: −iΔn − Γ_n/2 with
/// Γ_n = γ↓n + γ↑N_n and N_n = n + 1 inside the cutoff, 0 at the top level.
struct FreeEvolution {
    period: f64,
    down: f64,
    up: f64,
    rate: Vec<f64>,
    delta: f64,
    step: Vec<C64>,
    decay_sq: Vec<f64>,
}

impl FreeEvolution {
    fn new(p: &OscillatorParams, period: f64) -> Self {
        let d = p.dim;
        let down = p.rate_down();
        let up = p.rate_up();
        let rate: Vec<f64> = (0..d)
            .map(|n| down * n as f64 + up * if n + 1 < d { (n + 1) as f64 } else { 0.0 })
            .collect();
        let step = (0..d)
            .map(|n| C64::new(-0.5 * rate[n] * period, -p.delta * n as f64 * period).exp())
            .collect();
        let decay_sq = rate.iter().map(|g| (-g * period).exp()).collect();
        Self { period, down, up, rate, delta: p.delta, step, decay_sq }
    }

    fn survival(&self, psi: &[C64], s: f64) -> f64 {
        psi.iter().zip(&self.rate).map(|(c, g)| c.norm_sqr() * (-g * s).exp()).sum()
    }

    fn survival_and_slope(&self, psi: &[C64], s: f64) -> (f64, f64) {
        let mut f = 0.0;
        let mut df = 0.0;
        for (c, g) in psi.iter().zip(&self.rate) {
            let w = c.norm_sqr() * (-g * s).exp();
            f += w;
            df -= g * w;
        }
        (f, df)
    }

    fn propagate_no_jump(&self, psi: &mut [C64], s: f64) {
        for (n, c) in psi.iter_mut().enumerate() {
            *c *= C64::new(-0.5 * self.rate[n] * s, -self.delta * n as f64 * s).exp();
        }
    }

    /// Returns the number of jumps.
    fn evolve(&self, psi: &mut [C64], rng: &mut StreamRng) -> u64 {
        let d = psi.len();
        let mut jumps = 0;
        let mut remaining = self.period;
        let mut full = true;
        loop {
            let r: f64 = rng.random();
            let end = if full {
                psi.iter().zip(&self.decay_sq).map(|(c, w)| c.norm_sqr() * w).sum()
            } else {
                self.survival(psi, remaining)
            };
            if end > r {
                if full {
                    for (c, s) in psi.iter_mut().zip(&self.step) {
                        *c *= s;
                    }
                } else {
                    self.propagate_no_jump(psi, remaining);
                }
                let s = 1.0 / end.sqrt();
                psi.iter_mut().for_each(|c| *c *= s);
                return jumps;
            }
            // survival is convex and decreasing, so Newton from s = 0
            // approaches the jump time monotonically from below
            let mut s = 0.0;
            for _ in 0..100 {
                let (f, df) = self.survival_and_slope(psi, s);
                let next = (s + (f - r) / (-df).max(f64::MIN_POSITIVE)).min(remaining);
                if next - s <= 1e-13 * self.period {
                    s = next;
                    break;
                }
                s = next;
            }
            self.propagate_no_jump(psi, s);
            remaining -= s;
            full = false;
            let w_down: f64 = self.down * (1..d).map(|n| n as f64 * psi[n].norm_sqr()).sum::<f64>();
            let w_up: f64 = self.up * (0..d - 1).map(|n| (n + 1) as f64 * psi[n].norm_sqr()).sum::<f64>();
            if rng.random::<f64>() * (w_down + w_up) < w_down {
                // a
                for n in 0..d - 1 {
                    psi[n] = psi[n + 1] * ((n + 1) as f64).sqrt();
                }
                psi[d - 1] = C64::new(0.0, 0.0);
            } else {
                // a†
                for n in (1..d).rev() {
                    psi[n] = psi[n - 1] * (n as f64).sqrt();
                }
                psi[0] = C64::new(0.0, 0.0);
            }
            let s = 1.0 / norm_sqr(psi).sqrt();
            psi.iter_mut().for_each(|c| *c *= s);
            jumps += 1;
        }
    }
}

struct JointScratch {
    e: Vec<C64>,
    g: Vec<C64>,
}

impl JointScratch {
    fn new(d: usize) -> Self {
        Self { e: vec![C64::new(0.0, 0.0); d], g: vec![C64::new(0.0, 0.0); d] }
    }

    /// σx readout after a calibration rotation with sin φ = `shift`:
    /// ψ_+ ∝ √(1+s)ψ_g + √(1−s)ψ_e, ψ_− ∝ √(1−s)ψ_g − √(1+s)ψ_e.
    fn readout(&mut self, psi: &mut [C64], rng: &mut StreamRng, shift: f64) -> bool {
        let (up, down) = ((1.0 + shift).sqrt(), (1.0 - shift).sqrt());
        let mut pp = 0.0;
        let mut pm = 0.0;
        for n in 0..psi.len() {
            pp += (self.g[n] * up + self.e[n] * down).norm_sqr();
            pm += (self.g[n] * down - self.e[n] * up).norm_sqr();
        }
        let plus = rng.random::<f64>() * (pp + pm) < pp;
        let (cg, ce, p) = if plus { (up, down, pp) } else { (down, -up, pm) };
        let s = 1.0 / p.sqrt();
        for n in 0..psi.len() {
            psi[n] = (self.g[n] * cg + self.e[n] * ce) * s;
        }
        plus
    }
}

/// Joint probe–oscillator evolution during the interaction with qubit jumps
/// √(κ1/2)σ, √(κ1/2)σ†, √(κφ/2)σz. Their total rate is state independent, so
/// jump times are Poisson and the no-jump evolution is the bare interaction
/// unitary.
struct ProbeInteraction {
    omega: f64,
    tau: f64,
    kappa_1: f64,
    kappa_phi: f64,
    rate: f64,
    full: Vec<(f64, f64)>,
}

impl ProbeInteraction {
    fn new(q: &QubitModel, omega: f64, tau: f64, dim: usize) -> Self {
        Self {
            omega,
            tau,
            kappa_1: q.kappa_1,
            kappa_phi: q.kappa_phi(),
            rate: q.jump_rate(),
            full: rotation_table(omega * tau, dim),
        }
    }

    fn interact(&self, psi: &[C64], prep: Prep, j: &mut JointScratch, rng: &mut StreamRng) -> u64 {
        let zero = C64::new(0.0, 0.0);
        match prep {
            Prep::Ground => {
                j.g.copy_from_slice(psi);
                j.e.iter_mut().for_each(|c| *c = zero);
            }
            Prep::Excited => {
                j.e.copy_from_slice(psi);
                j.g.iter_mut().for_each(|c| *c = zero);
            }
        }
        let mut t = 0.0;
        let mut jumps = 0;
        loop {
            let wait = if self.rate > 0.0 {
                let x: f64 = Exp1.sample(rng);
                x / self.rate
            } else {
                f64::INFINITY
            };
            if t + wait >= self.tau {
                let s = self.tau - t;
                if t == 0.0 {
                    rotate(&mut j.e, &mut j.g, &self.full);
                } else {
                    rotate(&mut j.e, &mut j.g, &rotation_table(self.omega * s, psi.len()));
                }
                break;
            }
            rotate(&mut j.e, &mut j.g, &rotation_table(self.omega * wait, psi.len()));
            t += wait;
            let ne = norm_sqr(&j.e);
            let ng = norm_sqr(&j.g);
            let w = [0.5 * self.kappa_1 * ne, 0.5 * self.kappa_1 * ng, 0.5 * self.kappa_phi];
            let u = rng.random::<f64>() * (w[0] + w[1] + w[2]);
            if u < w[0] {
                // σ: e → g
                std::mem::swap(&mut j.e, &mut j.g);
                j.e.iter_mut().for_each(|c| *c = zero);
            } else if u < w[0] + w[1] {
                // σ†: g → e
                std::mem::swap(&mut j.e, &mut j.g);
                j.g.iter_mut().for_each(|c| *c = zero);
            } else {
                j.g.iter_mut().for_each(|c| *c = -*c);
            }
            let s = 1.0 / (norm_sqr(&j.e) + norm_sqr(&j.g)).sqrt();
            j.e.iter_mut().chain(j.g.iter_mut()).for_each(|c| *c *= s);
            jumps += 1;
        }
        jumps
    }
}

/// (sin, cos) of θ√(n+1)/2 for each n.
fn rotation_table(theta: f64, dim: usize) -> Vec<(f64, f64)> {
    (0..dim).map(|n| (0.5 * theta * ((n + 1) as f64).sqrt()).sin_cos()).collect()
}

/// Exact interaction on the pairs {|e,n⟩, |g,n+1⟩}.
fn rotate(e: &mut [C64], g: &mut [C64], table: &[(f64, f64)]) {
    let d = e.len();
    for n in 0..d {
        let (s, c) = table[n];
        if n + 1 < d {
            let (en, gn) = (e[n], g[n + 1]);
            e[n] = en * c - gn * s;
            g[n + 1] = en * s + gn * c;
        } else {
            e[n] *= c;
        }
    }
}

fn semiclassical_chunk(cfg: &ProtocolConfig, chunk: u64, start: u64, len: u64) -> ChunkOutput {
    let mut rng = substream(cfg.seed, chunk);
    let p = &cfg.oscillator;
    let ip = &cfg.interaction;
    let theta = ip.theta_1();
    let decay = C64::new(-0.5 * p.kappa_m * ip.period, -p.delta * ip.period).exp();
    let kick = (0.5 * p.n_th * (-(-p.kappa_m * ip.period).exp_m1())).sqrt();
    let stationary = (0.5 * p.n_th).sqrt();
    let gauss = |s: f64, rng: &mut StreamRng| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * s
    };
    let mut alpha = gauss(stationary, &mut rng);
    let mut diag = RunDiagnostics::default();
    let mut out = Vec::with_capacity(len as usize);
    for i in 0..len {
        let k = start + i;
        alpha = alpha * decay + gauss(kick, &mut rng);
        let mut mean = theta * alpha.re;
        if let Some(tone) = &cfg.calibration {
            let s = tone.shift_at(k as f64 * ip.period);
            mean = mean * (1.0 - s * s).sqrt() + s;
        }
        if mean.abs() > 1.0 {
            diag.clamp_count += 1;
            mean = mean.clamp(-1.0, 1.0);
        }
        out.push(if rng.random::<f64>() < 0.5 * (1.0 + mean) { 1 } else { -1 });
    }
    (out, diag)
}

/// Ground-state probability of a classically driven qubit after each duration,
/// for each detuning (rows). The qubit starts in the prepared ground state
/// with fidelity η_g and decays per `qubit`.
pub fn rabi_chevron(
    drive_rate: f64,
    detunings: &[f64],
    durations: &[f64],
    qubit: &QubitModel,
) -> Result<Vec<Vec<f64>>, ProtocolError> {
    qubit.validate()?;
    let dissip = crate::measurement::qubit_liouvillian(qubit)?;
    let pg = qubit.ground_population(Prep::Ground);
    let mut rho0 = CMat::zeros(2, 2);
    rho0[(0, 0)] = C64::new(1.0 - pg, 0.0);
    rho0[(1, 1)] = C64::new(pg, 0.0);
    let mut sx = CMat::zeros(2, 2);
    sx[(0, 1)] = C64::new(1.0, 0.0);
    sx[(1, 0)] = C64::new(1.0, 0.0);
    let mut sz = CMat::zeros(2, 2);
    sz[(0, 0)] = C64::new(1.0, 0.0);
    sz[(1, 1)] = C64::new(-1.0, 0.0);
    let mut grid = Vec::with_capacity(detunings.len());
    for &det in detunings {
        let h = &sz * C64::new(0.5 * det, 0.0) + &sx * C64::new(0.5 * drive_rate, 0.0);
        let l = crate::lindblad::hamiltonian_part(&h)?.add(&dissip);
        let row = durations
            .iter()
            .map(|&t| {
                let rho = crate::lindblad::propagate(&l, t)?.apply(&rho0);
                Ok(rho[(1, 1)].re)
            })
            .collect::<Result<Vec<f64>, ProtocolError>>()?;
        grid.push(row);
    }
    Ok(grid)
}
