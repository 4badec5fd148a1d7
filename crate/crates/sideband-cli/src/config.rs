//! TOML run configuration.
//!
//! Frequencies are given in Hz (ω/2π) and rates as κ/2π; both are converted
//! to rad/s here and nowhere else. Unknown keys are errors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use sideband::device::{DpParams, GeometryParams, Rect};
use sideband::fluxonium::CircuitParams;
use sideband::fock::{choose_cutoff, OscillatorParams};
use sideband::measurement::{ExpansionOrder, InteractionParams, QubitModel, Schedule};
use sideband::protocol::{
    CalibrationTone, Engine, ProtocolConfig, QuantumBackend, DEFAULT_CHUNK_CYCLES, DEFAULT_TAIL_TOL,
};
use sideband::spectral::PsdMethod;

use crate::error::CliError;

pub const SCHEMA_VERSION: i64 = 1;

const MIGRATION_HINT: &str = "rewrite the file against the version-1 keys listed in the README \
     (section \"Configuration\") and set `schema_version = 1`";

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillator: Option<OscillatorSection>,
    #[serde(default)]
    pub qubit: QubitSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub fluxonium: FluxoniumSection,
    #[serde(default)]
    pub stark: StarkSection,
    #[serde(default)]
    pub dp: DpSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSection {
    /// Detuning Δ/2π of the mode from the shifted qubit.
    pub delta_hz: f64,
    /// Mechanical damping κ_m/2π.
    pub kappa_m_hz: f64,
    pub n_th: f64,
    /// Fock cutoff; when absent, the thermal tail at `n_th` is kept below
    /// 10⁻³·`run.tail_tol` to leave room for the probe's heating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QubitSection {
    pub eta_g: f64,
    pub eta_e: f64,
    pub eps_g: f64,
    pub eps_e: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2_s: Option<f64>,
}

impl Default for QubitSection {
    fn default() -> Self {
        Self { eta_g: 1.0, eta_e: 1.0, eps_g: 0.0, eps_e: 0.0, t1_s: None, t2_s: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    /// Vacuum Rabi frequency Ω/2π; give this or `theta_1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_hz: Option<f64>,
    /// Interaction angle Ωτ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_1: Option<f64>,
    pub tau_s: f64,
    pub period_s: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub amplitude: f64,
    pub freq_hz: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_cycles: u64,
    pub seed: u64,
    pub engine: Engine,
    pub backend: QuantumBackend,
    pub kraus: ExpansionOrder,
    pub chunk_cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    pub tail_tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_cycles: 1_000_000,
            seed: 1,
            engine: Engine::Quantum,
            backend: QuantumBackend::Trajectory,
            kraus: ExpansionOrder::Exact,
            chunk_cycles: DEFAULT_CHUNK_CYCLES,
            burn_in: None,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Batch length N of each preparation's sub-record.
    pub batch_len: usize,
    pub method: PsdMethod,
    /// Lorentzian fit window [lo, hi]; defaults to Δ ± 6κ'.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window_hz: Option<[f64; 2]>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { batch_len: 2048, method: PsdMethod::Periodogram, fit_window_hz: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub temperature_k: f64,
    pub omega_m_hz: f64,
    pub mode: [u32; 2],
    pub grid: usize,
    pub l_y_um: f64,
    pub l_z_um: f64,
    pub thickness_nm: f64,
    /// Aluminium pad (y, z) extent.
    pub pad_um: [f64; 2],
    pub pad_thickness_nm: f64,
    pub rho_sin_kg_m3: f64,
    pub rho_al_kg_m3: f64,
    /// Electrode rectangles [y0, y1, z0, z1].
    pub electrodes_um: [[f64; 4]; 2],
    pub gap_um: f64,
    pub c_m_ff: f64,
    pub c_g_ff: f64,
    pub c_q_ff: f64,
    pub c_b_nf: f64,
    pub qubit_freq_hz: f64,
    pub phi_ge: f64,
    /// Bias lever β = V_eff/(V_b − V_offset).
    pub beta: f64,
    pub v_b: f64,
    pub v_offset: f64,
    /// Qubit–mode detuning for the dispersive shift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning_hz: Option<f64>,
    /// Gaps at which the spring-softening coefficient is reported.
    pub softening_gaps_um: Vec<f64>,
    pub eta_g: f64,
    pub eta_e: f64,
    /// Measured assignment probabilities P(g|g), P(e|e).
    pub p_g_meas: f64,
    pub p_e_meas: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            temperature_k: 10e-3,
            omega_m_hz: 4.4e6,
            mode: [1, 2],
            grid: 128,
            l_y_um: 110.0,
            l_z_um: 140.0,
            thickness_nm: 90.0,
            pad_um: [90.0, 120.0],
            pad_thickness_nm: 30.0,
            rho_sin_kg_m3: 3200.0,
            rho_al_kg_m3: 2700.0,
            electrodes_um: [[-30.0, 30.0, 15.0, 55.0], [-30.0, 30.0, -55.0, -15.0]],
            gap_um: 2.5,
            c_m_ff: 13.9,
            c_g_ff: 44.3,
            c_q_ff: 5.7,
            c_b_nf: 1.0,
            qubit_freq_hz: 2.35e6,
            phi_ge: 3.04,
            beta: 5.6 / 11.5,
            v_b: 9.0,
            v_offset: -2.5,
            detuning_hz: Some(2.05e6),
            softening_gaps_um: vec![2.2, 2.5, 2.8],
            eta_g: 0.985,
            eta_e: 0.983,
            p_g_meas: 0.839,
            p_e_meas: 0.683,
        }
    }
}

impl DeviceSection {
    pub fn geometry(&self) -> GeometryParams {
        let um = 1e-6;
        let rect = |r: &[f64; 4]| Rect { y0: r[0] * um, y1: r[1] * um, z0: r[2] * um, z1: r[3] * um };
        GeometryParams {
            l_y: self.l_y_um * um,
            l_z: self.l_z_um * um,
            thickness: self.thickness_nm * 1e-9,
            pad: (self.pad_um[0] * um, self.pad_um[1] * um, self.pad_thickness_nm * 1e-9),
            rho_sin: self.rho_sin_kg_m3,
            rho_al: self.rho_al_kg_m3,
            electrodes: [rect(&self.electrodes_um[0]), rect(&self.electrodes_um[1])],
            gap: self.gap_um * um,
            c_m: self.c_m_ff * 1e-15,
            c_g: self.c_g_ff * 1e-15,
            c_q: self.c_q_ff * 1e-15,
            c_b: self.c_b_nf * 1e-9,
        }
    }

    pub fn omega_m(&self) -> f64 {
        TWO_PI * self.omega_m_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitPreset {
    /// Best fit with one chain mode.
    Best,
    /// Fit with the qubit gap pinned near the Ramsey value.
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxoniumSection {
    pub preset: FitPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_j_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_c_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_l_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_freq_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_qc_hz: Option<f64>,
    pub phi_ext_rad: f64,
    pub basis_dim: usize,
    pub chain_dim: usize,
    /// Number of bare levels reported.
    pub levels: usize,
    /// Flux sweep of the chain-coupled spectrum [lo, hi] and its point count.
    pub sweep_rad: [f64; 2],
    pub sweep_points: usize,
    /// Qubit frequency before and after flip-chip assembly.
    pub omega_bfc_hz: f64,
    pub omega_afc_hz: f64,
    /// E_J and E_L used by the gap-distance inference.
    pub gap_e_j_hz: f64,
    pub gap_e_l_hz: f64,
    pub gap_samples: usize,
}

impl Default for FluxoniumSection {
    fn default() -> Self {
        let cp = CircuitParams::best_fit();
        Self {
            preset: FitPreset::Best,
            e_j_hz: None,
            e_c_hz: None,
            e_l_hz: None,
            chain_freq_hz: None,
            g_qc_hz: None,
            phi_ext_rad: PI,
            basis_dim: cp.basis_dim,
            chain_dim: cp.chain_dim,
            levels: 6,
            sweep_rad: [PI - 0.2, PI + 0.2],
            sweep_points: 21,
            omega_bfc_hz: 4.93e6,
            omega_afc_hz: 2.35e6,
            gap_e_j_hz: 4.82e9,
            gap_e_l_hz: 0.128e9,
            gap_samples: 256,
        }
    }
}

impl FluxoniumSection {
    pub fn circuit(&self) -> CircuitParams {
        let base = match self.preset {
            FitPreset::Best => CircuitParams::best_fit(),
            FitPreset::Pinned => CircuitParams::pinned_gap_fit(),
        };
        CircuitParams {
            e_j: self.e_j_hz.unwrap_or(base.e_j),
            e_c: self.e_c_hz.unwrap_or(base.e_c),
            e_l: self.e_l_hz.unwrap_or(base.e_l),
            phi_ext: self.phi_ext_rad,
            chain_freq: self.chain_freq_hz.unwrap_or(base.chain_freq),
            g_qc: self.g_qc_hz.unwrap_or(base.g_qc),
            basis_dim: self.basis_dim,
            chain_dim: self.chain_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarkSection {
    /// Drive Rabi rates Ω_d/2π to tabulate.
    pub drive_hz: Vec<f64>,
    /// Half the g–h/e–f splitting; taken from the fluxonium spectrum when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_st_hz: Option<f64>,
    /// Up-transition charge element; taken from the fluxonium spectrum when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_up: Option<f64>,
    /// Dressed qubit frequency to reach.
    pub target_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_ge_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_fh_per_s: Option<f64>,
    /// Relative drive-amplitude noise δΩ_d/Ω_d.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amp_noise: Option<f64>,
}

impl Default for StarkSection {
    fn default() -> Self {
        Self {
            drive_hz: (1..=10).map(|k| 2e6 * k as f64).collect(),
            delta_st_hz: None,
            n_up: None,
            target_hz: 4.4e6,
            gamma_ge_per_s: None,
            gamma_fh_per_s: None,
            amp_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub radius_m: f64,
    pub mass_number: f64,
    /// Mass entering the self-energy; the membrane mass when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    pub alpha_sq: f64,
    pub t1m_s: f64,
    /// Thermal occupation; from `device.temperature_k` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    /// Zero-point amplitude; from the device mode mass when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_zpf_m: Option<f64>,
}

impl Default for DpSection {
    fn default() -> Self {
        Self { radius_m: 2.7e-15, mass_number: 28.0, mass_kg: None, alpha_sq: 6.0, t1m_s: 5.9e-3, n_th: None, x_zpf_m: None }
    }
}

impl DpSection {
    pub fn params(&self, membrane_mass: f64) -> DpParams {
        DpParams {
            radius: self.radius_m,
            mass_number: self.mass_number,
            mass: self.mass_kg.unwrap_or(membrane_mass),
            alpha_sq: self.alpha_sq,
        }
    }
}

/// Parses a config, checking the schema version before the keys.
pub fn parse(text: &str) -> Result<Config, CliError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    match table.get("schema_version") {
        None => {
            return Err(CliError::Config(format!(
                "missing `schema_version`; add `schema_version = {SCHEMA_VERSION}` at the top"
            )))
        }
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION => {}
        Some(v) => {
            return Err(CliError::Config(format!(
                "schema_version {v} is not supported by this build (reads {SCHEMA_VERSION}); {MIGRATION_HINT}"
            )))
        }
    }
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

impl Config {
    fn oscillator_section(&self) -> Result<&OscillatorSection, CliError> {
        self.oscillator.as_ref().ok_or_else(|| CliError::Config("missing [oscillator] section".into()))
    }

    fn interaction_section(&self) -> Result<&InteractionSection, CliError> {
        self.interaction.as_ref().ok_or_else(|| CliError::Config("missing [interaction] section".into()))
    }

    pub fn oscillator(&self) -> Result<OscillatorParams, CliError> {
        let o = self.oscillator_section()?;
        Ok(OscillatorParams {
            omega_m: 0.0,
            kappa_m: TWO_PI * o.kappa_m_hz,
            n_th: o.n_th,
            delta: TWO_PI * o.delta_hz,
            dim: o.dim.unwrap_or_else(|| choose_cutoff(o.n_th, 1e-3 * self.run.tail_tol)),
        })
    }

    pub fn qubit(&self) -> QubitModel {
        let q = &self.qubit;
        QubitModel {
            eta_g: q.eta_g,
            eta_e: q.eta_e,
            eps_g: q.eps_g,
            eps_e: q.eps_e,
            kappa_1: q.t1_s.map_or(0.0, |t| 1.0 / t),
            kappa_2: q.t2_s.map_or(0.0, |t| 1.0 / t),
        }
    }

    pub fn interaction(&self) -> Result<InteractionParams, CliError> {
        let i = self.interaction_section()?;
        let omega = match (i.rabi_hz, i.theta_1) {
            (Some(f), None) => TWO_PI * f,
            (None, Some(t)) if i.tau_s > 0.0 => t / i.tau_s,
            (None, Some(_)) => return Err(CliError::Config("theta_1 needs tau_s > 0".into())),
            _ => return Err(CliError::Config("[interaction] needs exactly one of rabi_hz, theta_1".into())),
        };
        Ok(InteractionParams { omega, tau: i.tau_s, period: i.period_s, schedule: i.schedule })
    }

    pub fn calibration(&self) -> Option<CalibrationTone> {
        self.calibration.as_ref().map(|c| CalibrationTone {
            amplitude: c.amplitude,
            frequency: TWO_PI * c.freq_hz,
            phase: c.phase_rad,
        })
    }

    /// Validated protocol configuration.
    pub fn protocol(&self) -> Result<ProtocolConfig, CliError> {
        let r = &self.run;
        let mut cfg = ProtocolConfig::new(self.oscillator()?, self.qubit(), self.interaction()?, r.n_cycles, r.seed);
        cfg.calibration = self.calibration();
        cfg.engine = r.engine;
        cfg.backend = r.backend;
        cfg.kraus = r.kraus;
        cfg.chunk_cycles = r.chunk_cycles;
        cfg.burn_in = r.burn_in;
        cfg.tail_tol = r.tail_tol;
        cfg.validate().map_err(CliError::invalid)?;
        cfg.stationary_rates().map_err(CliError::invalid)?;
        Ok(cfg)
    }
}
