//! CODATA 2018 physical constants (SI). Exact values are marked.

/// Planck constant h (J·s), exact.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant ħ (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant k_B (J/K), exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge e (C), exact.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Newtonian constant of gravitation G (m³/kg/s²).
pub const GRAVITATION: f64 = 6.674_30e-11;
/// Vacuum permittivity ε₀ (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Atomic mass constant m_u (kg).
pub const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;
/// Riemann ζ(3).
pub const APERY: f64 = 1.202_056_903_159_594_2;
