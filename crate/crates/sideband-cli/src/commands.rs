//! Subcommand implementations. Each command computes everything first, then
//! writes its artifacts, each stamped with the manifest hash, and the manifest.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use sideband::device::{
    coupling_and_dispersive, dp_times, effective_bias, effective_mass_lambda, fidelities_from_preparation,
    spring_softening, thermal_occupation, zpf, CouplingInputs, DpTimes,
};
use sideband::fluxonium::{chain_coupled_spectrum, diagonalize, dressed_rates, estimate_gap_distance, heavy_gap_approx, stark_shift};
use sideband::fock::OscillatorParams;
use sideband::lindblad::min_choi_eigenvalue;
use sideband::measurement::{imperfect_kraus, loglog_slope, oracle_distance, oracle_kraus, Prep, Schedule};
use sideband::protocol::{self, Engine, MeasurementRecord, ProtocolConfig};
use sideband::spectral::{
    analyze_peaks, asymmetry_analysis, estimate_psd, prep_records, theory_spectrum, PeakAnalysis, PeakSettings,
    PowerSpectrum, TheorySpectra,
};
use sideband::{CMat, C64};

use crate::codec;
use crate::config::{self, Config};
use crate::error::{numeric, CliError};
use crate::manifest::{display_path, hex, unix_now, ManifestCore, RunManifest, Substreams, Versions, WallClock};
use crate::{Cli, Command, Format, RecordArgs};

pub const RECORD_FILE: &str = "record.pqsr";

const TWO_PI: f64 = 2.0 * PI;
/// Oracle interaction angles: three octaves.
const ORACLE_ANGLES: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
const ORACLE_DIM: usize = 6;
const ORACLE_SLOPE_TOL: f64 = 0.3;

fn hz(omega: f64) -> f64 {
    omega / TWO_PI
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (config, config_path) = load_config(cli)?;
    let ctx = Context { cli, config, config_path, started: unix_now(), clock: Instant::now() };
    protocol::with_threads(cli.threads, || match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Spectrum(a) => spectrum(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Asymmetry(a) => asymmetry(&ctx, a),
        Command::Device => device(&ctx),
        Command::Fluxonium => fluxonium(&ctx),
        Command::Stark => stark(&ctx),
        Command::Dp => dp(&ctx),
        Command::Oracle => oracle(&ctx),
    })
    .map_err(numeric)?
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate => "simulate",
        Command::Spectrum(_) => "spectrum",
        Command::Fit(_) => "fit",
        Command::Asymmetry(_) => "asymmetry",
        Command::Device => "device",
        Command::Fluxonium => "fluxonium",
        Command::Stark => "stark",
        Command::Dp => "dp",
        Command::Oracle => "oracle",
    }
}

fn load_config(cli: &Cli) -> Result<(Config, Option<PathBuf>), CliError> {
    let needs_config = matches!(
        cli.command,
        Command::Simulate | Command::Spectrum(_) | Command::Fit(_) | Command::Asymmetry(_)
    );
    let mut config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            config::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None if needs_config => {
            return Err(CliError::Config(format!("`{}` needs --config", command_name(&cli.command))))
        }
        None => config::parse(&format!("schema_version = {}", config::SCHEMA_VERSION))?,
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    Ok((config, cli.config.clone()))
}

struct Context<'a> {
    cli: &'a Cli,
    config: Config,
    config_path: Option<PathBuf>,
    started: f64,
    clock: Instant,
}

/// Files a command is about to write, named before anything is written so
/// the manifest can list them.
struct Plan<'a> {
    ctx: &'a Context<'a>,
    name: &'static str,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
    substreams: Substreams,
}

impl<'a> Plan<'a> {
    fn new(ctx: &'a Context<'a>) -> Self {
        let inputs = ctx.config_path.iter().map(|p| display_path(p)).collect();
        Self {
            ctx,
            name: command_name(&ctx.cli.command),
            inputs,
            outputs: Vec::new(),
            substreams: Substreams::range(0),
        }
    }

    fn output(&mut self, file: &str) -> PathBuf {
        let p = self.ctx.cli.out_dir.join(file);
        self.outputs.push(p.clone());
        p
    }

    fn table_output(&mut self, stem: &str) -> PathBuf {
        let ext = match self.ctx.cli.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        self.output(&format!("{stem}.{ext}"))
    }

    fn manifest_path(&self) -> PathBuf {
        self.ctx.cli.out_dir.join(format!("{}.manifest.json", self.name))
    }

    fn core(&self) -> ManifestCore {
        ManifestCore {
            command: self.name.into(),
            config: self.ctx.config.clone(),
            master_seed: self.ctx.config.run.seed,
            substreams: self.substreams.clone(),
            versions: Versions::default(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.iter().map(|p| display_path(p)).collect(),
        }
    }

    /// Creates the output directory and writes the manifest; returns the hash.
    fn commit(&self) -> Result<[u8; 32], CliError> {
        let dir = &self.ctx.cli.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let core = self.core();
        let hash = core.hash();
        let wall = WallClock {
            started_unix_s: self.ctx.started,
            elapsed_s: self.ctx.clock.elapsed().as_secs_f64(),
            threads: self.ctx.cli.threads,
        };
        let manifest = RunManifest::new(core, wall);
        write_json(&self.manifest_path(), &serde_json::to_value(&manifest).expect("manifest serializes"))?;
        Ok(hash)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// A table with a unit-bearing header, written as CSV (after a comment line
/// carrying the manifest hash) or as JSON rows.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path, format: Format, hash: &str) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                let mut s = format!("# manifest_sha256={hash}\n{}\n", self.header.join(","));
                for row in &self.rows {
                    let cells: Vec<String> = row
                        .iter()
                        .map(|v| match v {
                            Value::String(t) => t.clone(),
                            Value::Null => String::new(),
                            other => other.to_string(),
                        })
                        .collect();
                    let _ = writeln!(s, "{}", cells.join(","));
                }
                write_bytes(path, s.as_bytes())
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| Value::Object(self.header.iter().map(|h| h.to_string()).zip(r.iter().cloned()).collect()))
                    .collect();
                write_json(path, &json!({ "manifest_sha256": hash, "columns": self.header, "rows": rows }))
            }
        }
    }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

// ---------------------------------------------------------------- records

fn simulate_record(cfg: &ProtocolConfig) -> Result<MeasurementRecord, CliError> {
    protocol::run(cfg).map_err(numeric)
}

fn chunk_streams(cfg: &ProtocolConfig) -> Substreams {
    Substreams::range(cfg.n_cycles.div_ceil(cfg.chunk_cycles))
}

fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.config.protocol()?;
    let mut plan = Plan::new(ctx);
    plan.substreams = chunk_streams(&cfg);
    let record_path = plan.output(RECORD_FILE);
    let record = simulate_record(&cfg)?;
    let hash = plan.commit()?;
    let bytes = codec::encode(&record, &hash).map_err(|e| CliError::Record { path: record_path.clone(), source: e })?;
    write_bytes(&record_path, &bytes)?;
    print(&json!({
        "manifest_sha256": hex(&hash),
        "record": display_path(&record_path),
        "cycles": record.len(),
        "mean_outcome": record.mean(),
        "config_fingerprint": record.fingerprint,
        "diagnostics": record.diagnostics,
    }));
    Ok(())
}

/// The record to analyze: decoded from `--record`, or simulated.
struct Source {
    record: MeasurementRecord,
    record_hash: Option<String>,
}

fn obtain_record(plan: &mut Plan, cfg: &ProtocolConfig, args: &RecordArgs) -> Result<Source, CliError> {
    match &args.record {
        None => {
            plan.substreams = chunk_streams(cfg);
            Ok(Source { record: simulate_record(cfg)?, record_hash: None })
        }
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let file = codec::decode(&bytes).map_err(|e| CliError::Record { path: path.clone(), source: e })?;
            let want = cfg.interaction.period;
            if (file.record.period - want).abs() > 1e-12 * want {
                return Err(CliError::Config(format!(
                    "record period {} s differs from interaction.period_s {} s",
                    file.record.period, want
                )));
            }
            if cfg.interaction.schedule == Schedule::Alternating && file.record.preps.is_none() {
                return Err(CliError::Config("alternating schedule needs a record with preparation labels".into()));
            }
            let h = hex(&file.manifest_hash);
            plan.inputs.push(format!("{}#sha256={h}", display_path(path)));
            Ok(Source { record: file.record, record_hash: Some(h) })
        }
    }
}

fn theory(cfg: &ProtocolConfig) -> Option<TheorySpectra> {
    match cfg.engine {
        Engine::Quantum => theory_spectrum(cfg.interaction.schedule, &cfg.oscillator, &cfg.interaction, &cfg.qubit).ok(),
        Engine::Semiclassical => None,
    }
}

fn theory_json(t: &Option<TheorySpectra>, prep: Prep) -> Value {
    match t.as_ref().and_then(|t| t.get(prep)) {
        Some(s) => json!({
            "center_hz": hz(s.center),
            "kappa_eff_hz": hz(s.kappa_eff),
            "n_eff": s.n_eff,
            "peak_area": s.peak_area(),
            "period_s": s.period,
        }),
        None => Value::Null,
    }
}

fn fit_window(ctx: &Context, cfg: &ProtocolConfig) -> Result<(f64, f64), CliError> {
    if let Some([lo, hi]) = ctx.config.spectrum.fit_window_hz {
        return Ok((TWO_PI * lo, TWO_PI * hi));
    }
    let (kappa, _) = cfg.stationary_rates().map_err(CliError::invalid)?;
    Ok((cfg.oscillator.delta - 6.0 * kappa, cfg.oscillator.delta + 6.0 * kappa))
}

fn spectrum(ctx: &Context, args: &RecordArgs) -> Result<(), CliError> {
    let cfg = ctx.config.protocol()?;
    let mut plan = Plan::new(ctx);
    let src = obtain_record(&mut plan, &cfg, args)?;
    let s = &ctx.config.spectrum;
    let spectra: Vec<(Prep, f64, PowerSpectrum)> = prep_records(&src.record, cfg.interaction.schedule)
        .map_err(numeric)?
        .into_iter()
        .map(|(p, r)| estimate_psd(&r, s.batch_len, s.method).map(|spec| (p, r.mean(), spec)))
        .collect::<Result<_, _>>()
        .map_err(numeric)?;
    let table_path = plan.table_output("spectrum");
    let summary_path = plan.output("spectrum.summary.json");
    let hash = hex(&plan.commit()?);
    let mut table = Table::new(vec!["prep", "freq_hz", "psd_s", "stderr_s"]);
    for (p, _, spec) in &spectra {
        for r in 0..spec.omega.len() {
            table.push(vec![json!(p.label()), json!(hz(spec.omega[r])), json!(spec.psd[r]), json!(spec.stderr[r])]);
        }
    }
    table.write(&table_path, ctx.cli.format, &hash)?;
    let th = theory(&cfg);
    let preps: Vec<Value> = spectra
        .iter()
        .map(|(p, mean, spec)| {
            json!({
                "prep": p.label(),
                "n_batches": spec.n_batches,
                "batch_len": spec.batch_len,
                "period_s": spec.period,
                "bin_width_hz": hz(spec.bin_width()),
                "parseval_sum": spec.parseval_sum(),
                "mean_outcome": mean,
                "theory": theory_json(&th, *p),
            })
        })
        .collect();
    let summary = json!({
        "manifest_sha256": hash,
        "record_manifest_sha256": src.record_hash,
        "method": s.method,
        "preps": preps,
    });
    write_json(&summary_path, &summary)?;
    print(&summary);
    Ok(())
}

fn peaks(ctx: &Context, cfg: &ProtocolConfig, record: &MeasurementRecord) -> Result<Vec<PeakAnalysis>, CliError> {
    let settings = PeakSettings {
        batch_len: ctx.config.spectrum.batch_len,
        method: ctx.config.spectrum.method,
        window: fit_window(ctx, cfg)?,
    };
    analyze_peaks(record, cfg, &settings).map_err(numeric)
}

fn peak_json(a: &PeakAnalysis, th: &Option<TheorySpectra>) -> Value {
    let f = &a.fit;
    json!({
        "prep": a.prep.label(),
        "center_hz": hz(f.center),
        "center_err_hz": hz(f.center_err),
        "fwhm_hz": hz(f.fwhm),
        "fwhm_err_hz": hz(f.fwhm_err),
        "area": f.area,
        "area_err": f.area_err,
        "background_s": f.background,
        "background_err_s": f.background_err,
        "chi2_red": f.chi2_red,
        "dof": f.dof,
        "iterations": f.iterations,
        "calibration_area": a.calibrated.as_ref().map(|c| c.calibration_area),
        "calibration_snr": a.calibrated.as_ref().map(|c| c.calibration_snr),
        "normalized_area": a.calibrated.as_ref().map(|c| c.area),
        "phonons": a.phonons,
        "theory": theory_json(th, a.prep),
    })
}

fn fit(ctx: &Context, args: &RecordArgs) -> Result<(), CliError> {
    let cfg = ctx.config.protocol()?;
    let mut plan = Plan::new(ctx);
    let src = obtain_record(&mut plan, &cfg, args)?;
    let analyses = peaks(ctx, &cfg, &src.record)?;
    let table_path = plan.table_output("fit");
    let summary_path = plan.output("fit.summary.json");
    let hash = hex(&plan.commit()?);
    let mut table = Table::new(vec!["prep", "freq_hz", "psd_s", "stderr_s", "model_s", "normalized"]);
    for a in &analyses {
        let spec = &a.spectrum;
        for r in 0..spec.omega.len() {
            let normalized = a.calibrated.as_ref().map_or(Value::Null, |c| json!(c.normalized.psd[r]));
            table.push(vec![
                json!(a.prep.label()),
                json!(hz(spec.omega[r])),
                json!(spec.psd[r]),
                json!(spec.stderr[r]),
                json!(a.fit.model.eval(spec.omega[r])),
                normalized,
            ]);
        }
    }
    table.write(&table_path, ctx.cli.format, &hash)?;
    let th = theory(&cfg);
    let (lo, hi) = fit_window(ctx, &cfg)?;
    let summary = json!({
        "manifest_sha256": hash,
        "record_manifest_sha256": src.record_hash,
        "fit_window_hz": [hz(lo), hz(hi)],
        "peaks": analyses.iter().map(|a| peak_json(a, &th)).collect::<Vec<_>>(),
    });
    write_json(&summary_path, &summary)?;
    print(&summary);
    Ok(())
}

fn asymmetry(ctx: &Context, args: &RecordArgs) -> Result<(), CliError> {
    let cfg = ctx.config.protocol()?;
    if cfg.interaction.schedule != Schedule::Alternating {
        return Err(CliError::Config("asymmetry needs interaction.schedule = \"alternating\"".into()));
    }
    if cfg.calibration.is_none() {
        return Err(CliError::Config("asymmetry needs a [calibration] tone to normalize the peaks".into()));
    }
    let mut plan = Plan::new(ctx);
    let src = obtain_record(&mut plan, &cfg, args)?;
    let analyses = peaks(ctx, &cfg, &src.record)?;
    let phonons = |p: Prep| {
        analyses.iter().find(|a| a.prep == p).and_then(|a| a.phonons).expect("both preparations are calibrated")
    };
    let result = asymmetry_analysis(phonons(Prep::Ground), phonons(Prep::Excited), &cfg.qubit, cfg.interaction.tau);
    let table_path = plan.table_output("asymmetry");
    let summary_path = plan.output("asymmetry.summary.json");
    let hash = hex(&plan.commit()?);
    let mut table = Table::new(vec!["prep", "center_hz", "fwhm_hz", "normalized_area", "normalized_area_err", "phonons", "phonons_err"]);
    for a in &analyses {
        let (area, n) = (a.calibrated.as_ref().expect("calibrated").area, a.phonons.expect("calibrated"));
        table.push(vec![
            json!(a.prep.label()),
            json!(hz(a.fit.center)),
            json!(hz(a.fit.fwhm)),
            json!(area.value),
            json!(area.err),
            json!(n.value),
            json!(n.err),
        ]);
    }
    table.write(&table_path, ctx.cli.format, &hash)?;
    let th = theory(&cfg);
    let summary = json!({
        "manifest_sha256": hash,
        "record_manifest_sha256": src.record_hash,
        "measured": result.measured,
        "predicted": result.predicted,
        "pull": result.pull(),
        "peaks": analyses.iter().map(|a| peak_json(a, &th)).collect::<Vec<_>>(),
    });
    write_json(&summary_path, &summary)?;
    print(&summary);
    Ok(())
}

// ---------------------------------------------------------------- device

struct MembraneScales {
    mass: f64,
    m_eff: f64,
    lambda: f64,
    x_zpf: f64,
    p_zpf: f64,
    n_th: f64,
}

fn membrane_scales(config: &Config) -> Result<MembraneScales, CliError> {
    let d = &config.device;
    let g = d.geometry();
    g.validate().map_err(CliError::invalid)?;
    let mm = effective_mass_lambda(&g, (d.mode[0], d.mode[1]), d.grid).map_err(numeric)?;
    let z = zpf(mm.m_eff, d.omega_m()).map_err(CliError::invalid)?;
    let n_th = thermal_occupation(d.temperature_k, d.omega_m()).map_err(CliError::invalid)?;
    Ok(MembraneScales { mass: mm.mass, m_eff: mm.m_eff, lambda: mm.lambda, x_zpf: z.x_zpf, p_zpf: z.p_zpf, n_th })
}

fn dp_json(t: &DpTimes, mass: f64) -> Value {
    json!({
        "mass_kg": mass,
        "tau_g_s": t.tau_g,
        "tau_th_s": t.tau_th,
        "tau_cat_s": t.tau_cat,
        "delta_x_m": t.delta_x,
        "resolved": t.resolved,
        "collapse_first": t.collapse_first,
    })
}

fn dp_results(config: &Config, m: &MembraneScales) -> Result<Value, CliError> {
    let s = &config.dp;
    let n_th = s.n_th.unwrap_or(m.n_th);
    let x_zpf = s.x_zpf_m.unwrap_or(m.x_zpf);
    let physical = s.params(m.mass);
    let t = dp_times(&physical, s.t1m_s, n_th, x_zpf).map_err(CliError::invalid)?;
    let mut out = json!({
        "n_th": n_th,
        "x_zpf_m": x_zpf,
        "atomic_mass_kg": physical.atomic_mass(),
        "physical_mass": dp_json(&t, physical.mass),
    });
    if s.mass_kg.is_none() {
        let eff = dp_times(&s.params(m.m_eff), s.t1m_s, n_th, x_zpf).map_err(CliError::invalid)?;
        out["effective_mass"] = dp_json(&eff, m.m_eff);
    }
    Ok(out)
}

fn device(ctx: &Context) -> Result<(), CliError> {
    let d = &ctx.config.device;
    let g = d.geometry();
    let m = membrane_scales(&ctx.config)?;
    let inputs = CouplingInputs {
        omega_q: TWO_PI * d.qubit_freq_hz,
        phi_ge: d.phi_ge,
        c_m: g.c_m,
        gap: g.gap,
        x_zpf: m.x_zpf,
        beta: d.beta,
        v_b: d.v_b,
        v_offset: d.v_offset,
    };
    let coupling = coupling_and_dispersive(&inputs, d.detuning_hz.map(|f| TWO_PI * f)).map_err(CliError::invalid)?;
    let softening: Vec<Value> = d
        .softening_gaps_um
        .iter()
        .map(|&um| {
            let gap = um * 1e-6;
            let e_c = g.charging_energy(gap);
            spring_softening(&g, gap, e_c, m.x_zpf, d.beta).map(|s| {
                json!({
                    "gap_um": um,
                    "c_m_ff": g.c_m_at(gap) * 1e15,
                    "e_c_hz": e_c,
                    "zeta_hz_per_v2": s.zeta,
                    "shift_hz": s.shift(d.v_b, d.v_offset),
                })
            })
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::invalid)?;
    let bias = effective_bias(g.c_g, g.c_m, g.c_b, d.v_b, 2.0 * g.c_g * d.v_offset, 0.0).map_err(CliError::invalid)?;
    let fid = fidelities_from_preparation(d.eta_g, d.eta_e, d.p_g_meas, d.p_e_meas).map_err(numeric)?;
    let dp = dp_results(&ctx.config, &m)?;
    let mut plan = Plan::new(ctx);
    let path = plan.output("device.json");
    let hash = hex(&plan.commit()?);
    let out = json!({
        "manifest_sha256": hash,
        "inputs": d,
        "membrane": {
            "mass_kg": m.mass,
            "lambda": m.lambda,
            "m_eff_kg": m.m_eff,
            "x_zpf_m": m.x_zpf,
            "p_zpf_kg_m_per_s": m.p_zpf,
            "n_th": m.n_th,
        },
        "coupling": {
            "omega_hz": hz(coupling.omega),
            "chi_hz": coupling.chi.map(hz),
            "vanishing": coupling.vanishing,
        },
        "softening": softening,
        "bias": bias,
        "fidelities": fid,
        "diosi_penrose": dp,
    });
    write_json(&path, &out)?;
    print(&out);
    Ok(())
}

fn dp(ctx: &Context) -> Result<(), CliError> {
    let m = membrane_scales(&ctx.config)?;
    let results = dp_results(&ctx.config, &m)?;
    let mut plan = Plan::new(ctx);
    let path = plan.output("dp.json");
    let hash = hex(&plan.commit()?);
    let out = json!({ "manifest_sha256": hash, "inputs": ctx.config.dp, "results": results });
    write_json(&path, &out)?;
    print(&out);
    Ok(())
}

// ---------------------------------------------------------------- circuit

fn fluxonium(ctx: &Context) -> Result<(), CliError> {
    let f = &ctx.config.fluxonium;
    let cp = f.circuit();
    cp.validate().map_err(CliError::invalid)?;
    if f.sweep_points < 2 {
        return Err(CliError::Config("fluxonium.sweep_points must be at least 2".into()));
    }
    let sys = diagonalize(&cp, f.levels.max(4)).map_err(numeric)?;
    let e0 = sys.energies[0];
    let at_flux = chain_coupled_spectrum(&cp, &[cp.phi_ext]).map_err(numeric)?;
    let fluxes: Vec<f64> = (0..f.sweep_points)
        .map(|k| f.sweep_rad[0] + (f.sweep_rad[1] - f.sweep_rad[0]) * k as f64 / (f.sweep_points - 1) as f64)
        .collect();
    let sweep = chain_coupled_spectrum(&cp, &fluxes).map_err(numeric)?;
    let gap = estimate_gap_distance(f.omega_bfc_hz, f.omega_afc_hz, f.gap_e_j_hz, f.gap_e_l_hz, f.gap_samples, ctx.config.run.seed)
        .map_err(numeric)?;
    let mut plan = Plan::new(ctx);
    plan.substreams = Substreams::range(f.gap_samples as u64);
    let table_path = plan.table_output("fluxonium_sweep");
    let path = plan.output("fluxonium.summary.json");
    let hash = hex(&plan.commit()?);
    const SHOWN: usize = 8;
    let mut table = Table::new(vec![
        "phi_ext_rad", "qubit_gap_hz", "level1_hz", "level2_hz", "level3_hz", "level4_hz", "level5_hz", "level6_hz",
        "level7_hz", "level8_hz",
    ]);
    for pt in &sweep {
        let mut row = vec![json!(pt.phi_ext), json!(pt.qubit_gap())];
        row.extend((1..=SHOWN).map(|k| pt.levels.get(k).map_or(Value::Null, |l| json!(l.energy - pt.levels[0].energy))));
        table.push(row);
    }
    table.write(&table_path, ctx.cli.format, &hash)?;
    let out = json!({
        "manifest_sha256": hash,
        "inputs": { "section": f, "circuit": cp },
        "bare": {
            "energies_hz": sys.energies.iter().take(f.levels).map(|e| e - e0).collect::<Vec<_>>(),
            "qubit_gap_hz": sys.qubit_gap(),
            "heavy_gap_approx_hz": heavy_gap_approx(cp.e_j, cp.e_c, cp.e_l),
            "phi_ge": sys.phase_element(0, 1),
            "n_ge": sys.charge_element(0, 1),
            "n_gf": sys.charge_element(0, 2),
            "n_eh": sys.charge_element(1, 3),
            "n_gh": sys.charge_element(0, 3),
            "n_ef": sys.charge_element(1, 2),
        },
        "chain_coupled": {
            "qubit_gap_hz": at_flux[0].qubit_gap(),
            "levels": at_flux[0]
                .levels
                .iter()
                .take(SHOWN + 1)
                .map(|l| json!({ "energy_hz": l.energy, "qubit": l.qubit, "photons": l.photons, "weight": l.weight }))
                .collect::<Vec<_>>(),
        },
        "gap_distance": {
            "d_um": gap.d * 1e6,
            "sigma_d_um": gap.sigma_d * 1e6,
            "e_c_far_hz": gap.e_c_far,
            "e_c_near_hz": gap.e_c_near,
            "samples": gap.samples,
        },
    });
    write_json(&path, &out)?;
    print(&out);
    Ok(())
}

fn stark(ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.config.stark;
    let (delta_st_hz, n_up, from_circuit) = match (s.delta_st_hz, s.n_up) {
        (Some(d), Some(n)) => (d, n, false),
        (d, n) => {
            let cp = ctx.config.fluxonium.circuit();
            cp.validate().map_err(CliError::invalid)?;
            let sys = diagonalize(&cp, 4).map_err(numeric)?;
            let half = 0.5 * (sys.transition(0, 3) - sys.transition(1, 2));
            (d.unwrap_or(half), n.unwrap_or(sys.charge_element(0, 3)), true)
        }
    };
    let q0 = ctx.config.device.qubit_freq_hz;
    let delta = TWO_PI * delta_st_hz;
    let rates = match (s.gamma_ge_per_s, s.gamma_fh_per_s, s.amp_noise) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err(CliError::Config("stark rates need gamma_ge_per_s, gamma_fh_per_s and amp_noise together".into())),
    };
    let mut rows = Vec::new();
    for &drive in &s.drive_hz {
        let sh = stark_shift(TWO_PI * drive, delta, n_up).map_err(CliError::invalid)?;
        let dressed = match rates {
            Some((a, b, c)) => Some(dressed_rates(a, b, sh.exact, delta, c).map_err(CliError::invalid)?),
            None => None,
        };
        rows.push((drive, sh, dressed));
    }
    // drive that pulls the qubit to the target: √(Δ² + x²) − Δ = δ
    let shift = TWO_PI * (s.target_hz - q0);
    let x = ((shift + delta).powi(2) - delta * delta).max(0.0).sqrt();
    let target_drive_hz = if n_up > 0.0 { Some(hz(x / n_up)) } else { None };
    let mut plan = Plan::new(ctx);
    let table_path = plan.table_output("stark_sweep");
    let path = plan.output("stark.summary.json");
    let hash = hex(&plan.commit()?);
    let mut table = Table::new(vec![
        "drive_hz", "shift_exact_hz", "shift_series_hz", "mixing_angle_rad", "qubit_freq_hz", "gamma_1_per_s",
        "gamma_2star_per_s",
    ]);
    for (drive, sh, dr) in &rows {
        table.push(vec![
            json!(drive),
            json!(hz(sh.exact)),
            json!(hz(sh.series)),
            json!(sh.mixing_angle),
            json!(q0 + hz(sh.exact)),
            dr.map_or(Value::Null, |d| json!(d.gamma_1)),
            dr.map_or(Value::Null, |d| json!(d.gamma_2star)),
        ]);
    }
    table.write(&table_path, ctx.cli.format, &hash)?;
    let out = json!({
        "manifest_sha256": hash,
        "inputs": s,
        "bare_qubit_hz": q0,
        "delta_st_hz": delta_st_hz,
        "n_up": n_up,
        "from_circuit": from_circuit,
        "target_hz": s.target_hz,
        "target_drive_hz": target_drive_hz,
        "rows": rows
            .iter()
            .map(|(d, sh, dr)| {
                json!({
                    "drive_hz": d,
                    "shift_exact_hz": hz(sh.exact),
                    "shift_series_hz": hz(sh.series),
                    "mixing_angle_rad": sh.mixing_angle,
                    "qubit_freq_hz": q0 + hz(sh.exact),
                    "rates_per_s": dr,
                })
            })
            .collect::<Vec<_>>(),
    });
    write_json(&path, &out)?;
    print(&out);
    Ok(())
}

// ---------------------------------------------------------------- oracle

fn oracle(ctx: &Context) -> Result<(), CliError> {
    let q = ctx.config.qubit();
    q.validate().map_err(CliError::invalid)?;
    let tau = ctx.config.interaction.as_ref().map_or(4e-6, |i| i.tau_s);
    if !(tau > 0.0) {
        return Err(CliError::Config("oracle needs interaction.tau_s > 0".into()));
    }
    let quiet = OscillatorParams { omega_m: 0.0, kappa_m: 1e-6, n_th: 0.0, delta: 0.0, dim: ORACLE_DIM };
    let mut checks = Vec::new();
    for prep in [Prep::Ground, Prep::Excited] {
        let d: Vec<f64> = ORACLE_ANGLES
            .iter()
            .map(|&t| oracle_distance(&quiet, &q, t, tau, prep))
            .collect::<Result<_, _>>()
            .map_err(numeric)?;
        let slope = loglog_slope(&ORACLE_ANGLES, &d);
        checks.push(json!({
            "name": format!("distance_scaling_{}", prep.label()),
            "value": slope,
            "target": "3 ± 0.3",
            "pass": (slope - 3.0).abs() <= ORACLE_SLOPE_TOL,
            "distances": d,
        }));
        let theta = ORACLE_ANGLES[1];
        let [op, om] = oracle_kraus(&quiet, &q, theta / tau, tau, prep).map_err(numeric)?;
        let defect = op.add(&om).trace_defect();
        checks.push(json!({
            "name": format!("trace_preservation_{}", prep.label()),
            "value": defect,
            "target": "<= 1e-10",
            "pass": defect <= 1e-10,
        }));
        let choi = min_choi_eigenvalue(&op).min(min_choi_eigenvalue(&om));
        checks.push(json!({
            "name": format!("complete_positivity_{}", prep.label()),
            "value": choi,
            "target": ">= -1e-9",
            "pass": choi >= -1e-9,
        }));
        let psi = sideband::fock::coherent_state(ORACLE_DIM, C64::new(0.3, 0.1)).map_err(numeric)?;
        let rho: CMat = &psi * psi.adjoint();
        let want = op.apply(&rho).trace().re - om.apply(&rho).trace().re;
        let k = imperfect_kraus(prep, &q, theta / tau, tau).map_err(numeric)?;
        let got = k.raw.plus.probability(&rho) - k.raw.minus.probability(&rho);
        let err = (got - want).abs();
        checks.push(json!({
            "name": format!("sigma_x_agreement_{}", prep.label()),
            "value": err,
            "target": "<= theta^3",
            "pass": err <= theta.powi(3),
        }));
    }
    let passed = checks.iter().all(|c| c["pass"] == json!(true));
    let mut plan = Plan::new(ctx);
    let path = plan.output("oracle.json");
    let hash = hex(&plan.commit()?);
    let out = json!({
        "manifest_sha256": hash,
        "qubit": q,
        "tau_s": tau,
        "dim": ORACLE_DIM,
        "checks": checks,
        "pass": passed,
    });
    write_json(&path, &out)?;
    for c in &checks {
        let mark = if c["pass"] == json!(true) { "PASS" } else { "FAIL" };
        println!("{mark} {} = {} (target {})", c["name"].as_str().unwrap_or(""), c["value"], c["target"].as_str().unwrap_or(""));
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Check("oracle cross-checks failed".into()))
    }
}
