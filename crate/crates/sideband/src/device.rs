//! Electromechanical device calculators: membrane effective mass, zero-point
//! scales, qubit–membrane coupling, electrostatic spring softening,
//! Diósi–Penrose timescales, thermal occupation and readout-fidelity algebra.
//!
//! SI units throughout; capacitances in farads.

use serde::{Deserialize, Serialize};

use crate::constants::{
    ATOMIC_MASS, BOLTZMANN, ELEMENTARY_CHARGE, GRAVITATION, HBAR, PLANCK, VACUUM_PERMITTIVITY,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DeviceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("electrode overlap integral {integral:.3e} is too small to normalize the mode")]
    DegenerateNormalization { integral: f64 },
    #[error("temperature must be positive, got {0} K")]
    Temperature(f64),
    #[error("fidelity system is ill-conditioned (determinant {0:.3e})")]
    IllConditioned(f64),
}

fn positive(name: &str, v: f64) -> Result<(), DeviceError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::InvalidInput(format!("{name} = {v}")))
    }
}

/// Axis-aligned rectangle in membrane coordinates, origin at the centre (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: f64,
    pub y1: f64,
    pub z0: f64,
    pub z1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.y1 - self.y0) * (self.z1 - self.z0)
    }
}

/// Metallized membrane and the qubit-side circuit capacitances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub l_y: f64,
    pub l_z: f64,
    pub thickness: f64,
    /// Aluminum pad (y extent, z extent, thickness).
    pub pad: (f64, f64, f64),
    pub rho_sin: f64,
    pub rho_al: f64,
    /// Overlap of the two coupling capacitors C_m^±.
    pub electrodes: [Rect; 2],
    /// Membrane–qubit gap d.
    pub gap: f64,
    /// C_m at `gap`.
    pub c_m: f64,
    pub c_g: f64,
    pub c_q: f64,
    pub c_b: f64,
}

impl GeometryParams {
    /// Device values; capacitances in femtofarads. The electrode rectangles
    /// sit on the two lobes of the (1,2) mode.
    pub fn reference() -> Self {
        let um = 1e-6;
        let fe = 1e-15;
        Self {
            l_y: 110.0 * um,
            l_z: 140.0 * um,
            thickness: 90e-9,
            pad: (90.0 * um, 120.0 * um, 30e-9),
            rho_sin: 3200.0,
            rho_al: 2700.0,
            electrodes: [
                Rect { y0: -30.0 * um, y1: 30.0 * um, z0: 15.0 * um, z1: 55.0 * um },
                Rect { y0: -30.0 * um, y1: 30.0 * um, z0: -55.0 * um, z1: -15.0 * um },
            ],
            gap: 2.5 * um,
            c_m: 13.9 * fe,
            c_g: 44.3 * fe,
            c_q: 5.7 * fe,
            c_b: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        for (n, v) in [
            ("l_y", self.l_y),
            ("l_z", self.l_z),
            ("thickness", self.thickness),
            ("rho_sin", self.rho_sin),
            ("rho_al", self.rho_al),
            ("gap", self.gap),
            ("c_m", self.c_m),
            ("c_g", self.c_g),
            ("c_q", self.c_q),
            ("c_b", self.c_b),
        ] {
            positive(n, v)?;
        }
        if !(self.pad.0 >= 0.0 && self.pad.1 >= 0.0 && self.pad.2 >= 0.0) {
            return Err(DeviceError::InvalidInput(format!("pad = {:?}", self.pad)));
        }
        let (hy, hz) = (0.5 * self.l_y, 0.5 * self.l_z);
        for r in &self.electrodes {
            let inside = -hy <= r.y0 && r.y0 < r.y1 && r.y1 <= hy && -hz <= r.z0 && r.z0 < r.z1 && r.z1 <= hz;
            if !inside {
                return Err(DeviceError::InvalidInput(format!("electrode {r:?} outside the membrane")));
            }
        }
        Ok(())
    }

    /// Physical mass of the film plus the pad.
    pub fn mass(&self) -> f64 {
        let film = self.rho_sin * self.l_y * self.l_z * self.thickness;
        let (py, pz, pt) = self.pad;
        film + self.rho_al * py * pz * pt
    }

    /// C_m rescaled from `gap` to `d` with the simulated d^{−0.8} law.
    pub fn c_m_at(&self, d: f64) -> f64 {
        self.c_m * (self.gap / d).powf(CAPACITANCE_EXPONENT)
    }

    /// Total fluxonium capacitance C_g + C_m + 2C_q at gap `d`.
    pub fn total_capacitance(&self, d: f64) -> f64 {
        self.c_g + self.c_m_at(d) + 2.0 * self.c_q
    }

    /// E_C = e²/(C_g + C_m + 2C_q) at gap `d`, as a frequency (Hz).
    pub fn charging_energy(&self, d: f64) -> f64 {
        ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / self.total_capacitance(d) / PLANCK
    }
}

/// Exponent of the simulated C_m(d) ∝ d^{−0.8} law.
pub const CAPACITANCE_EXPONENT: f64 = 0.8;

/// Simulated membrane–qubit capacitance C_m(d) = ε₀·54·10⁻⁹/d^{0.8} (SI).
pub fn fig8_capacitance(d: f64) -> f64 {
    VACUUM_PERMITTIVITY * 54e-9 / d.powf(CAPACITANCE_EXPONENT)
}

/// Out-of-plane mode u_{m,n} with unit amplitude, origin at the centre.
pub fn mode_shape(g: &GeometryParams, mode: (u32, u32), y: f64, z: f64) -> f64 {
    let (m, n) = (mode.0 as f64, mode.1 as f64);
    let pi = std::f64::consts::PI;
    (m * pi * (y - 0.5 * g.l_y) / g.l_y).sin() * (n * pi * (z - 0.5 * g.l_z) / g.l_z).sin()
}

/// Midpoint-rule integral of the mode over a rectangle on a grid×grid mesh.
fn integrate_mode(g: &GeometryParams, mode: (u32, u32), r: &Rect, grid: usize) -> f64 {
    let (dy, dz) = ((r.y1 - r.y0) / grid as f64, (r.z1 - r.z0) / grid as f64);
    let mut sum = 0.0;
    for i in 0..grid {
        let y = r.y0 + (i as f64 + 0.5) * dy;
        for j in 0..grid {
            sum += mode_shape(g, mode, y, r.z0 + (j as f64 + 0.5) * dz);
        }
    }
    sum * dy * dz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMass {
    pub lambda: f64,
    /// m_λ = Mλ²/4.
    pub m_eff: f64,
    pub mass: f64,
}

/// Normalization λ such that λ·|∬_A u| = A summed over both electrodes, and
/// the resulting effective mass.
pub fn effective_mass_lambda(g: &GeometryParams, mode: (u32, u32), grid: usize) -> Result<ModeMass, DeviceError> {
    g.validate()?;
    if grid < 64 {
        return Err(DeviceError::InvalidInput(format!("grid = {grid} (need ≥ 64)")));
    }
    if mode.0 == 0 || mode.1 == 0 {
        return Err(DeviceError::InvalidInput(format!("mode {mode:?}")));
    }
    let area: f64 = g.electrodes.iter().map(Rect::area).sum();
    let integral: f64 = g.electrodes.iter().map(|r| integrate_mode(g, mode, r, grid).abs()).sum();
    if integral < 1e-6 * area {
        return Err(DeviceError::DegenerateNormalization { integral });
    }
    let lambda = area / integral;
    let mass = g.mass();
    Ok(ModeMass { lambda, m_eff: mass * lambda * lambda / 4.0, mass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroPoint {
    pub x_zpf: f64,
    pub p_zpf: f64,
}

/// X_zpf = √(ħ/(2mω)), P_zpf = √(ħmω/2).
pub fn zpf(m_eff: f64, omega_m: f64) -> Result<ZeroPoint, DeviceError> {
    positive("m_eff", m_eff)?;
    positive("omega_m", omega_m)?;
    Ok(ZeroPoint {
        x_zpf: (HBAR / (2.0 * m_eff * omega_m)).sqrt(),
        p_zpf: (HBAR * m_eff * omega_m / 2.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingInputs {
    /// Qubit frequency (rad/s).
    pub omega_q: f64,
    /// |⟨g|φ|e⟩|.
    pub phi_ge: f64,
    pub c_m: f64,
    pub gap: f64,
    pub x_zpf: f64,
    pub beta: f64,
    pub v_b: f64,
    pub v_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// Vacuum Rabi frequency (rad/s).
    pub omega: f64,
    /// Ω²/4Δ (rad/s); `None` without a detuning.
    pub chi: Option<f64>,
    /// The bias sits at the offset and the force vanishes.
    pub vanishing: bool,
}

/// Ω = ω_q|⟨g|φ|e⟩|·(2X_zpf C_m/d)·β(V_b − V_offset)/(2e) and χ = Ω²/4Δ.
pub fn coupling_and_dispersive(c: &CouplingInputs, delta: Option<f64>) -> Result<Coupling, DeviceError> {
    positive("gap", c.gap)?;
    positive("c_m", c.c_m)?;
    positive("x_zpf", c.x_zpf)?;
    if delta == Some(0.0) {
        return Err(DeviceError::InvalidInput("Δ = 0 has no dispersive limit".into()));
    }
    let dc_dx = 2.0 * c.x_zpf * c.c_m / c.gap;
    let v_eff = c.beta * (c.v_b - c.v_offset);
    let omega = c.omega_q * c.phi_ge * dc_dx * v_eff / (2.0 * ELEMENTARY_CHARGE);
    Ok(Coupling { omega, chi: delta.map(|d| omega * omega / (4.0 * d)), vanishing: v_eff == 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringSoftening {
    /// Positive tuning coefficient ζ (Hz/V²).
    pub zeta: f64,
}

impl SpringSoftening {
    /// Signed frequency shift δω_m/2π = −ζ(V_b − V_offset)² (Hz).
    pub fn shift(&self, v_b: f64, v_offset: f64) -> f64 {
        -self.zeta * (v_b - v_offset).powi(2)
    }
}

/// ζ = 2C_m(C_g + 2C_q)·(E_C/ħe²)·(X_zpf/d)²·β², evaluated at gap `d` with
/// C_m following the d^{−0.8} law; `e_c` is e²/C_Σ as a frequency (Hz).
pub fn spring_softening(g: &GeometryParams, d: f64, e_c: f64, x_zpf: f64, beta: f64) -> Result<SpringSoftening, DeviceError> {
    positive("d", d)?;
    positive("e_c", e_c)?;
    let e_c_joule = PLANCK * e_c;
    let rate = 2.0 * g.c_m_at(d) * (g.c_g + 2.0 * g.c_q) * e_c_joule / (HBAR * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE)
        * (x_zpf / d).powi(2)
        * beta
        * beta;
    Ok(SpringSoftening { zeta: rate / (2.0 * std::f64::consts::PI) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveBias {
    /// Full expression with finite C_b and both trapped charges.
    pub v_eff: f64,
    /// C_g/(C_g + C_m).
    pub beta: f64,
    /// Q₂/2C_g.
    pub v_offset: f64,
    /// β(V_b − V_offset).
    pub v_eff_limit: f64,
}

pub fn effective_bias(c_g: f64, c_m: f64, c_b: f64, v_b: f64, q2: f64, q3: f64) -> Result<EffectiveBias, DeviceError> {
    positive("c_g", c_g)?;
    positive("c_m", c_m)?;
    positive("c_b", c_b)?;
    let v_eff = (c_g * v_b - q2 / 2.0 + (c_g / c_b) * q3) / (c_g + c_m + 2.0 * c_g * c_m / c_b);
    let beta = c_g / (c_g + c_m);
    let v_offset = q2 / (2.0 * c_g);
    Ok(EffectiveBias { v_eff, beta, v_offset, v_eff_limit: beta * (v_b - v_offset) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    /// Nucleus radius a (m).
    pub radius: f64,
    pub mass_number: f64,
    /// Mass entering the self-energy (kg).
    pub mass: f64,
    /// |α|².
    pub alpha_sq: f64,
}

impl DpParams {
    /// m_a = A·m_u.
    pub fn atomic_mass(&self) -> f64 {
        self.mass_number * ATOMIC_MASS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpTimes {
    pub tau_g: f64,
    pub tau_th: f64,
    pub tau_cat: f64,
    /// 2|α|X_zpf.
    pub delta_x: f64,
    /// ΔX > 2a.
    pub resolved: bool,
    /// τ_G shorter than τ_cat.
    pub collapse_first: bool,
}

/// τ_G = 5ħa/(48πG·m_a·M), τ_th = 2T₁/n_th, τ_cat = T₁/(4n_th|α|²).
pub fn dp_times(dp: &DpParams, t1m: f64, n_th: f64, x_zpf: f64) -> Result<DpTimes, DeviceError> {
    for (n, v) in [("a", dp.radius), ("A", dp.mass_number), ("M", dp.mass), ("|α|²", dp.alpha_sq)] {
        positive(n, v)?;
    }
    positive("T1m", t1m)?;
    positive("n_th", n_th)?;
    positive("x_zpf", x_zpf)?;
    let tau_g = 5.0 * HBAR * dp.radius / (48.0 * std::f64::consts::PI * GRAVITATION * dp.atomic_mass() * dp.mass);
    let tau_th = 2.0 * t1m / n_th;
    let tau_cat = t1m / (4.0 * n_th * dp.alpha_sq);
    let delta_x = 2.0 * dp.alpha_sq.sqrt() * x_zpf;
    Ok(DpTimes { tau_g, tau_th, tau_cat, delta_x, resolved: delta_x > 2.0 * dp.radius, collapse_first: tau_g < tau_cat })
}

/// Bose occupation 1/(e^{ħω/k_BT} − 1).
pub fn thermal_occupation(temperature: f64, omega: f64) -> Result<f64, DeviceError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DeviceError::Temperature(temperature));
    }
    positive("omega", omega)?;
    Ok(1.0 / (HBAR * omega / (BOLTZMANN * temperature)).exp_m1())
}

/// Temperature at which the mode holds `n_th` quanta.
pub fn occupation_temperature(n_th: f64, omega: f64) -> Result<f64, DeviceError> {
    positive("n_th", n_th)?;
    positive("omega", omega)?;
    Ok(HBAR * omega / (BOLTZMANN * (1.0 / n_th).ln_1p()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrasts {
    pub c_g: f64,
    pub c_e: f64,
    pub c_th: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelities {
    pub eta_g: f64,
    pub eta_e: f64,
    pub f_g: f64,
    pub f_e: f64,
}

/// Ground populations p_g = (1 + η_g)/2, p_e = (1 − η_e)/2.
fn ground_populations(eta_g: f64, eta_e: f64) -> (f64, f64) {
    (0.5 * (1.0 + eta_g), 0.5 * (1.0 - eta_e))
}

/// Measured assignment probabilities
/// P(g|ρ_g) = p_gF_g + (1 − p_g)(1 − F_e), P(e|ρ_e) = (1 − p_e)F_e + p_e(1 − F_g).
pub fn measured_fidelities(eta_g: f64, eta_e: f64, f_g: f64, f_e: f64) -> (f64, f64) {
    let (p_g, p_e) = ground_populations(eta_g, eta_e);
    (p_g * f_g + (1.0 - p_g) * (1.0 - f_e), (1.0 - p_e) * f_e + p_e * (1.0 - f_g))
}

/// Preparation fidelities from Rabi contrasts and intrinsic readout
/// fidelities from the measured assignment probabilities.
pub fn fidelity_calibration(c: &Contrasts, p_g_meas: f64, p_e_meas: f64) -> Result<Fidelities, DeviceError> {
    positive("C_th", c.c_th)?;
    if !(c.c_g >= 0.0 && c.c_e >= 0.0) {
        return Err(DeviceError::InvalidInput(format!("contrasts {c:?}")));
    }
    for p in [p_g_meas, p_e_meas] {
        if !(p > 0.0 && p < 1.0) {
            return Err(DeviceError::InvalidInput(format!("probability {p}")));
        }
    }
    let eta_g = c.c_g / c.c_th - 1.0;
    let eta_e = 1.0 - c.c_e / c.c_th;
    fidelities_from_preparation(eta_g, eta_e, p_g_meas, p_e_meas)
}

/// Solves the 2×2 assignment system for (F_g, F_e) at known η_g, η_e.
pub fn fidelities_from_preparation(eta_g: f64, eta_e: f64, p_g_meas: f64, p_e_meas: f64) -> Result<Fidelities, DeviceError> {
    let (p_g, p_e) = ground_populations(eta_g, eta_e);
    // p_g F_g − (1 − p_g) F_e = P_g − (1 − p_g)
    // −p_e F_g + (1 − p_e) F_e = P_e − p_e
    let (a, b, r1) = (p_g, -(1.0 - p_g), p_g_meas - (1.0 - p_g));
    let (c, d, r2) = (-p_e, 1.0 - p_e, p_e_meas - p_e);
    let det = a * d - b * c;
    // det = (η_g + η_e)/2
    if det.abs() < 1e-9 {
        return Err(DeviceError::IllConditioned(det));
    }
    Ok(Fidelities { eta_g, eta_e, f_g: (r1 * d - b * r2) / det, f_e: (a * r2 - c * r1) / det })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn full_membrane_lambda_matches_closed_form() {
        let mut g = GeometryParams::reference();
        let (hy, hz) = (0.5 * g.l_y, 0.5 * g.l_z);
        let whole = Rect { y0: -hy, y1: hy, z0: -hz, z1: hz };
        g.electrodes = [whole, whole];
        // ∬ sin·sin over the membrane = (2/π)²·A
        let r = effective_mass_lambda(&g, (1, 1), 256).unwrap();
        assert!((r.lambda - (PI / 2.0).powi(2)).abs() < 1e-4, "{}", r.lambda);
    }

    #[test]
    fn node_straddling_electrode_is_degenerate() {
        let mut g = GeometryParams::reference();
        let sym = Rect { y0: -20e-6, y1: 20e-6, z0: -30e-6, z1: 30e-6 };
        g.electrodes = [sym, sym];
        assert!(matches!(effective_mass_lambda(&g, (1, 2), 64), Err(DeviceError::DegenerateNormalization { .. })));
    }

    #[test]
    fn reference_mass_and_lambda() {
        let g = GeometryParams::reference();
        let r = effective_mass_lambda(&g, (1, 2), 128).unwrap();
        assert!((r.mass - 5.3e-12).abs() < 0.05e-12, "{}", r.mass);
        assert!((r.lambda - 1.3).abs() < 0.02, "{}", r.lambda);
        assert!((r.m_eff - 2.3e-12).abs() < 0.1e-12, "{}", r.m_eff);
        let fine = effective_mass_lambda(&g, (1, 2), 256).unwrap();
        assert!((fine.lambda / r.lambda - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_point_scales() {
        let z = zpf(2.3e-12, 2.0 * PI * 4.4e6).unwrap();
        assert!((z.x_zpf - 0.9e-15).abs() < 0.05e-15, "{}", z.x_zpf);
        assert!((z.x_zpf * z.p_zpf - HBAR / 2.0).abs() < 1e-12 * HBAR);
        let heavy = zpf(4.0 * 2.3e-12, 2.0 * PI * 4.4e6).unwrap();
        assert!((heavy.x_zpf - 0.5 * z.x_zpf).abs() < 1e-12 * z.x_zpf);
    }

    fn table_coupling() -> CouplingInputs {
        CouplingInputs {
            omega_q: 2.0 * PI * 2.35e6,
            phi_ge: 3.04,
            c_m: 13.9e-15,
            gap: 2.5e-6,
            x_zpf: 0.9e-15,
            beta: 1.0,
            v_b: 5.6,
            v_offset: 0.0,
        }
    }

    #[test]
    fn coupling_from_circuit_inputs() {
        let c = coupling_and_dispersive(&table_coupling(), None).unwrap();
        let khz = c.omega / (2.0 * PI) / 1e3;
        assert!((khz - 1.31).abs() < 0.131, "{khz}");
        // doubling the bias doubles Ω
        let doubled = coupling_and_dispersive(&CouplingInputs { v_b: 11.2, ..table_coupling() }, None).unwrap();
        assert!((doubled.omega - 2.0 * c.omega).abs() < 1e-9 * c.omega);
        let zero = coupling_and_dispersive(&CouplingInputs { v_offset: 5.6, ..table_coupling() }, None).unwrap();
        assert!(zero.vanishing && zero.omega == 0.0);
        let flipped = coupling_and_dispersive(&CouplingInputs { v_b: -5.6, ..table_coupling() }, None).unwrap();
        assert_eq!(flipped.omega, -c.omega);
    }

    #[test]
    fn dispersive_shift() {
        // Ω/2π = 1.5 kHz, Δ/2π = 2.05 MHz → χ/2π = Ω²/4Δ ≈ 0.27 Hz
        let omega = 2.0 * PI * 1.5e3;
        let delta = 2.0 * PI * 2.05e6;
        let target = omega * omega / (4.0 * delta) / (2.0 * PI);
        let scale = omega / coupling_and_dispersive(&table_coupling(), None).unwrap().omega;
        let inputs = CouplingInputs { v_b: 5.6 * scale, ..table_coupling() };
        let chi = coupling_and_dispersive(&inputs, Some(delta)).unwrap().chi.unwrap() / (2.0 * PI);
        assert!((chi - target).abs() < 1e-9);
        assert!((chi - 0.27).abs() < 0.01, "{chi}");
        assert!(coupling_and_dispersive(&inputs, Some(0.0)).is_err());
    }

    #[test]
    fn softening_zero_at_offset_and_d_scaling() {
        let g = GeometryParams::reference();
        let s = spring_softening(&g, 2.5e-6, 0.556e9, 0.92e-15, 0.487).unwrap();
        assert_eq!(s.shift(-3.0, -3.0), 0.0);
        assert!(s.shift(5.0, -3.0) < 0.0);
        // log-log slope over [1.5, 3.5] µm at fixed E_C
        let (d1, d2) = (1.5e-6, 3.5e-6);
        let z1 = spring_softening(&g, d1, 0.556e9, 0.92e-15, 0.487).unwrap().zeta;
        let z2 = spring_softening(&g, d2, 0.556e9, 0.92e-15, 0.487).unwrap().zeta;
        let slope = (z2 / z1).ln() / (d2 / d1).ln();
        assert!((slope + 2.8).abs() < 1e-9, "{slope}");
    }

    #[test]
    fn effective_bias_limits() {
        let (c_g, c_m) = (44.3e-15, 13.9e-15);
        let b = effective_bias(c_g, c_m, 1e-12, 7.0, 0.0, 0.0).unwrap();
        let plug = c_g * 7.0 / (c_g + c_m + 2.0 * c_g * c_m / 1e-12);
        assert!((b.v_eff - plug).abs() < 1e-12);
        let q2 = -2.0 * 2.5 * c_g;
        let big = effective_bias(c_g, c_m, 1e3, 7.0, q2, 1e-15).unwrap();
        assert!((big.v_offset + 2.5).abs() < 1e-12);
        assert!((big.v_eff - big.v_eff_limit).abs() < 1e-9);
        // |V_b − V_offset| = 11.5 V with |V_b| ≤ 9 V needs V_offset ≤ −2.5 V
        assert!((9.0 - big.v_offset - 11.5).abs() < 1e-12);
    }

    fn silicon(mass: f64) -> DpParams {
        DpParams { radius: 2.7e-15, mass_number: 28.0, mass, alpha_sq: 6.0 }
    }

    #[test]
    fn diosi_penrose_timescales() {
        let t = dp_times(&silicon(5.3e-12), 5.9e-3, 47.0, 0.9e-15).unwrap();
        assert!((t.tau_g - 0.5e-3).abs() < 0.1e-3, "{}", t.tau_g);
        assert!((t.tau_th - 0.3e-3).abs() < 0.06e-3, "{}", t.tau_th);
        let cat = dp_times(&silicon(5.3e-12), 5.9e-3, 50.0, 0.9e-15).unwrap();
        assert!((cat.tau_cat - 5e-6).abs() < 0.25e-6, "{}", cat.tau_cat);
        assert!((t.delta_x - 2.0 * 6f64.sqrt() * 0.9e-15).abs() < 1e-30);
        assert_eq!(t.resolved, t.delta_x > 5.4e-15);
        assert!(!t.collapse_first);
    }

    proptest! {
        #[test]
        fn collapse_time_scales_inversely_with_mass(m in 1e-13f64..1e-10) {
            let a = dp_times(&silicon(m), 1e-3, 10.0, 1e-15).unwrap();
            let b = dp_times(&silicon(5.3e-12), 1e-3, 10.0, 1e-15).unwrap();
            prop_assert!((a.tau_g * m / (b.tau_g * 5.3e-12) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fidelity_round_trip(eta_g in 0.5f64..1.0, eta_e in 0.5f64..1.0, f_g in 0.5f64..1.0, f_e in 0.5f64..1.0) {
            let (pg, pe) = measured_fidelities(eta_g, eta_e, f_g, f_e);
            let back = fidelities_from_preparation(eta_g, eta_e, pg, pe).unwrap();
            prop_assert!((back.f_g - f_g).abs() < 1e-10 && (back.f_e - f_e).abs() < 1e-10);
            let (pg2, pe2) = measured_fidelities(eta_g, eta_e, back.f_g, back.f_e);
            prop_assert!((pg2 - pg).abs() < 1e-10 && (pe2 - pe).abs() < 1e-10);
        }
    }

    #[test]
    fn thermal_occupation_values() {
        let n = thermal_occupation(10e-3, 2.0 * PI * 4.4e6).unwrap();
        assert!((n - 46.9).abs() < 0.1, "{n}");
        assert!(thermal_occupation(1e-3, 2.0 * PI * 1e11).unwrap() < 1e-100);
        assert!(thermal_occupation(0.0, 1.0).is_err());
        // a 2.2 mK mode-temperature offset survives the inverse map
        let w = 2.0 * PI * 4.4e6;
        let n_hot = thermal_occupation(12.2e-3, w).unwrap();
        assert!((occupation_temperature(n_hot, w).unwrap() - 12.2e-3).abs() < 1e-12);
    }

    #[test]
    fn perfect_contrasts_give_unit_preparation() {
        let f = fidelity_calibration(&Contrasts { c_g: 2.0, c_e: 0.0, c_th: 1.0 }, 0.9, 0.8).unwrap();
        assert_eq!((f.eta_g, f.eta_e), (1.0, 1.0));
        assert!((f.f_g - 0.9).abs() < 1e-12 && (f.f_e - 0.8).abs() < 1e-12);
    }

    #[test]
    fn readout_fidelities_from_assignment_probabilities() {
        let f = fidelities_from_preparation(0.985, 0.983, 0.839, 0.683).unwrap();
        assert!((f.f_g - 0.848).abs() < 0.01, "{}", f.f_g);
        assert!((f.f_e - 0.691).abs() < 0.01, "{}", f.f_e);
        assert!(matches!(fidelities_from_preparation(0.5, -0.5, 0.6, 0.6), Err(DeviceError::IllConditioned(_))));
    }
}
