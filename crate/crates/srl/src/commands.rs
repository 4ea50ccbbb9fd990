//! The subcommands. Each validates its configuration, computes, writes its
//! artifacts through [`OutputDir`] and returns a short text summary.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use srl_core::dicke::{self, DickeSpace, DensityState, OracleParams};
use srl_core::meanfield::{self, EvolveOptions, SteadyReport};
use srl_core::model::{self, hz, to_hz, DerivedQuantities, PLANCK, SPEED_OF_LIGHT};
use srl_core::spectrum;
use srl_core::sweep::{CellStatus, Quantity, SweepGrid};
use srl_core::{MeanFieldState, NoWatchdog, PhysicalParams};

use crate::config::RunConfig;
use crate::output::{num, opt_num, Artifact, OutputDir};
use crate::runner::{self, SweepRequest};
use crate::svg::{self, Heatmap};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Derive,
    Dynamics,
    Steady,
    Spectrum,
    Sweep,
    Oracle,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Derive => "derive",
            Command::Dynamics => "dynamics",
            Command::Steady => "steady",
            Command::Spectrum => "spectrum",
            Command::Sweep => "sweep",
            Command::Oracle => "oracle",
            Command::Compare => "compare",
        }
    }
}

/// Settings that do not change results and are therefore kept out of the
/// embedded configuration.
#[derive(Clone, Debug, Default)]
pub struct Context {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Report {
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

pub fn run(cmd: Command, cfg: &RunConfig, ctx: &Context) -> Result<Report, CliError> {
    let mut out = OutputDir::new(&ctx.out_dir, cmd.name(), cfg)?;
    let summary = match cmd {
        Command::Derive => derive(cfg, &mut out)?,
        Command::Dynamics => dynamics(cfg, ctx, &mut out)?,
        Command::Steady => steady(cfg, &mut out)?,
        Command::Spectrum => spectrum_cmd(cfg, &mut out)?,
        Command::Sweep => sweep(cfg, ctx, &mut out)?,
        Command::Oracle => oracle(cfg, ctx, &mut out)?,
        Command::Compare => compare(cfg, ctx, &mut out)?,
    };
    Ok(Report {
        summary,
        artifacts: out.artifacts().to_vec(),
    })
}

/// What a command would do, without computing.
pub fn plan(cmd: Command, cfg: &RunConfig, ctx: &Context) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let mut s = String::new();
    let _ = writeln!(s, "command: {}", cmd.name());
    let _ = writeln!(s, "output directory: {}", ctx.out_dir.display());
    match cmd {
        Command::Derive => {
            let _ = writeln!(s, "closed-form quantities for one parameter set");
        }
        Command::Steady => {
            let _ = writeln!(s, "steady state by {:?}", cfg.steady.method);
        }
        Command::Dynamics => {
            let runs = cfg.dynamics.eta_scan_hz.len().max(1);
            let _ = writeln!(
                s,
                "{runs} trajectories to t = {} s, {} samples each",
                num(cfg.dynamics.t_end),
                cfg.dynamics.samples
            );
        }
        Command::Spectrum => {
            let samples = cfg
                .spectrum
                .fixed_samples()
                .map_or("chosen from the regression modes".to_string(), |n| format!("{n}"));
            let _ = writeln!(s, "correlation samples: {samples}");
            if let Some(n) = cfg.spectrum.fixed_samples() {
                let fft = (2 * n * cfg.spectrum.options().pad_factor).next_power_of_two();
                let _ = writeln!(s, "transform length {fft}, about {} MiB of complex samples", (fft + n) * 16 >> 20);
            }
        }
        Command::Sweep => {
            let spec = cfg.sweep.grid();
            spec.validate(cfg.sweep.cell_budget)?;
            let workers = runner::worker_count(ctx.workers)?;
            let _ = writeln!(
                s,
                "{} x {} = {} cells ({:?}), {workers} workers, {} s per-cell timeout",
                spec.n_axis.count,
                spec.eta_axis_hz.count,
                spec.cells(),
                spec.quantity,
                cfg.sweep.timeout_s
            );
            if let Some(ck) = &ctx.checkpoint {
                let _ = writeln!(s, "checkpoint: {}", ck.display());
            }
        }
        Command::Oracle | Command::Compare => {
            let etas = cfg.oracle.eta_values_hz(&p);
            let _ = writeln!(s, "{} atom numbers x {} pump rates", cfg.oracle.n_list.len(), etas.len());
            for &n in &cfg.oracle.n_list {
                let nf = cfg.oracle.n_fock.unwrap_or(cfg.oracle.n_fock_cap);
                let space = DickeSpace::new(n, nf)?;
                let _ = writeln!(s, "  N = {n}: {} stored elements at n_fock <= {nf}", space.dim());
            }
        }
    }
    let _ = writeln!(s, "resolved configuration:");
    s.push_str(&toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?);
    Ok(s)
}

#[derive(Serialize)]
struct Linewidths {
    schawlow_townes_hz: Option<f64>,
    bad_cavity_haken_hz: Option<f64>,
    bad_cavity_photon_hz: f64,
    cooperativity_hz: f64,
}

#[derive(Serialize)]
struct DeriveData {
    params_angular: PhysicalParams,
    derived: DerivedQuantities,
    n_crit_is_infinite: bool,
    nu_hz: Option<f64>,
    p_out_w: Option<f64>,
    linewidths: Linewidths,
    ion_number: Option<f64>,
    material_cooperativity: Option<f64>,
    excitation_volume_um3: Option<f64>,
}

fn derive(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let d = model::derive(&p)?;
    let material = cfg.material.as_ref().map(|m| m.resolve()).transpose()?;
    let nu_hz = cfg.derive.nu_hz.or_else(|| {
        cfg.material
            .as_ref()
            .and_then(|m| m.wavelength_nm)
            .map(|l| SPEED_OF_LIGHT / (l * 1e-9))
    });
    // P_out = M_c h nu kappa turns Eq. 1 into kappa / (4 pi M_c)
    let p_out = cfg
        .derive
        .p_out_w
        .or_else(|| nu_hz.filter(|_| d.m_c.is_finite()).map(|nu| d.m_c * PLANCK * nu * p.kappa()));
    let st = match (nu_hz, p_out) {
        (Some(nu), Some(po)) => Some(model::linewidth_schawlow_townes(nu, p.kappa(), po)?),
        _ => None,
    };
    let haken = match (nu_hz, p_out) {
        (Some(nu), Some(po)) => Some(model::linewidth_bad_cavity_haken(
            nu,
            cfg.derive.nu0_hz.unwrap_or(nu),
            p.kappa(),
            p.gamma(),
            po,
            cfg.derive.n_excited,
            cfg.derive.n_ground,
        )?),
        _ => None,
    };
    let (gamma_hz, kappa_hz) = (to_hz(p.gamma()), to_hz(p.kappa()));
    let lw = Linewidths {
        schawlow_townes_hz: st,
        bad_cavity_haken_hz: haken,
        bad_cavity_photon_hz: model::linewidth_bad_cavity_photon(gamma_hz, kappa_hz, d.m_c),
        cooperativity_hz: model::linewidth_cooperativity(d.c1, gamma_hz),
    };
    let data = DeriveData {
        params_angular: p,
        derived: d,
        n_crit_is_infinite: d.n_crit.is_infinite(),
        nu_hz,
        p_out_w: p_out,
        ion_number: material.as_ref().map(model::ion_number_estimate),
        material_cooperativity: material.as_ref().and_then(|m| m.cooperativity()),
        excitation_volume_um3: material.as_ref().map(|m| m.excitation_volume_um3),
        linewidths: lw,
    };
    out.json("derive.json", &data)?;

    let mut s = String::new();
    let _ = writeln!(s, "C1                 {}", num(d.c1));
    let _ = writeln!(s, "N_c = gamma kappa/g^2  {}", num(d.n_c));
    let _ = writeln!(s, "M_c = gamma^2/g^2      {}", num(d.m_c));
    let _ = writeln!(s, "N_crit             {}", num(d.n_crit));
    let _ = writeln!(s, "group index n_g    {}", num(d.group_index));
    let _ = writeln!(s, "pulling P          {}", num(d.pulling));
    let _ = writeln!(s, "N C1 gamma         {} Hz", num(to_hz(d.collective_rate)));
    let or_missing = |v: Option<f64>| v.map_or("n/a (no laser frequency given)".to_string(), |v| format!("{} Hz", num(v)));
    let _ = writeln!(s, "linewidth, Schawlow-Townes   {}", or_missing(data.linewidths.schawlow_townes_hz));
    let _ = writeln!(s, "linewidth, bad-cavity Haken  {}", or_missing(data.linewidths.bad_cavity_haken_hz));
    let _ = writeln!(s, "linewidth, photon number     {} Hz", num(data.linewidths.bad_cavity_photon_hz));
    let _ = writeln!(s, "linewidth, cooperativity     {} Hz", num(data.linewidths.cooperativity_hz));
    if let Some(ni) = data.ion_number {
        let _ = writeln!(
            s,
            "ion number N_i     {} (V_ex = {} um^3)",
            num(ni),
            opt_num(data.excitation_volume_um3)
        );
    }
    Ok(s)
}

#[derive(Serialize)]
struct SteadyData {
    params_angular: PhysicalParams,
    report: SteadyReport,
    stable: bool,
}

fn steady(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let r = meanfield::steady_state_with(&p, &cfg.steady.options(), &NoWatchdog)?;
    out.json(
        "steady.json",
        &SteadyData {
            params_angular: p,
            report: r,
            stable: r.is_stable(),
        },
    )?;
    let s = &r.state;
    Ok(format!(
        "n_photon  {}\ncoherence {} {:+e}i\nsigma_z   {}\nspin_corr {} {:+e}i\nresidual  {}\ngrowth rate {} rad/s ({})\n",
        num(s.n_photon),
        num(s.coherence.re),
        s.coherence.im,
        num(s.inversion),
        num(s.spin_corr.re),
        s.spin_corr.im,
        num(r.residual),
        num(r.growth_rate),
        if r.is_stable() { "stable" } else { "unstable" }
    ))
}

fn state_row(t: f64, s: &MeanFieldState) -> Vec<String> {
    vec![
        num(t),
        num(s.n_photon),
        num(s.coherence.re),
        num(s.coherence.im),
        num(s.inversion),
        num(s.spin_corr.re),
        num(s.spin_corr.im),
    ]
}

const STATE_HEADER: [&str; 7] = [
    "t_s",
    "n_photon",
    "coherence_re",
    "coherence_im",
    "sigma_z",
    "spin_corr_re",
    "spin_corr_im",
];

#[derive(Serialize)]
struct DynamicsRun {
    eta_hz: f64,
    file: String,
    /// Rows are means over the preceding output interval.
    averaged: bool,
    final_state: MeanFieldState,
    /// Range of `sigma_z` over the last tenth of the rows; large when the
    /// run ends on a limit cycle.
    late_spread: f64,
    /// Rootfind steady state, when one exists.
    steady: Option<MeanFieldState>,
    steady_stable: Option<bool>,
    /// First sample time after which `sigma_z` stays within the plateau
    /// tolerance of its reference value.
    plateau_time_s: Option<f64>,
    plateau_reference: f64,
}

/// Collapses a trajectory sampled at `sub` points per output interval into
/// one row per interval: the first sample, then trapezoidal means over each
/// interval, stamped with the interval's end.
pub fn interval_means(times: &[f64], states: &[MeanFieldState], sub: usize) -> (Vec<f64>, Vec<MeanFieldState>) {
    if sub <= 1 {
        return (times.to_vec(), states.to_vec());
    }
    let mut t_out = vec![times[0]];
    let mut out = vec![states[0]];
    for w in (0..states.len() - 1).step_by(sub) {
        let mut acc = [0.0; 6];
        for k in w..w + sub {
            let (a, b) = (states[k].to_array(), states[k + 1].to_array());
            for i in 0..6 {
                acc[i] += 0.5 * (a[i] + b[i]) / sub as f64;
            }
        }
        t_out.push(times[w + sub]);
        out.push(MeanFieldState::from_slice(&acc));
    }
    (t_out, out)
}

/// Time after which `values` stay within `tol` of `reference`.
pub fn settle_time(times: &[f64], values: &[f64], reference: f64, tol: f64) -> Option<f64> {
    let last_out = values.iter().rposition(|v| (v - reference).abs() > tol);
    match last_out {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

fn dynamics(cfg: &RunConfig, ctx: &Context, out: &mut OutputDir) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let dy = &cfg.dynamics;
    let etas: Vec<f64> = if dy.eta_scan_hz.is_empty() {
        vec![to_hz(p.eta())]
    } else {
        dy.eta_scan_hz.clone()
    };
    let n = dy.samples;
    let sub = if dy.average { dy.substeps.max(1) } else { 1 };
    let fine = (n - 1) * sub + 1;
    let times: Vec<f64> = (0..fine).map(|k| dy.t_end * k as f64 / (fine - 1) as f64).collect();
    let opts = EvolveOptions {
        tol: dy.tol,
        max_steps: dy.max_steps,
        integrator: dy.integrator,
    };
    let initial = dy.initial.state();
    let pool = pool(ctx)?;
    let results: Vec<Result<_, CliError>> = pool.install(|| {
        etas.par_iter()
            .map(|&eta| {
                let pe = p.with_eta(hz(eta))?;
                let tr = meanfield::evolve_with(&initial, &pe, dy.t_end, Some(&times), &opts, &NoWatchdog)?;
                let ss = meanfield::steady_state_with(&pe, &cfg.steady.options(), &NoWatchdog).ok();
                let (t_out, states) = interval_means(&tr.times, &tr.states, sub);
                Ok((eta, t_out, states, ss))
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut series = Vec::new();
    let mut s = String::new();
    for (k, r) in results.into_iter().enumerate() {
        let (eta, t_out, states, ss) = r?;
        let file = format!("dynamics_{k:02}.csv");
        out.csv(&file, &STATE_HEADER, t_out.iter().zip(&states).map(|(t, st)| state_row(*t, st)))?;
        let sz: Vec<f64> = states.iter().map(|st| st.inversion).collect();
        let tail = &sz[sz.len() - (sz.len() / 10).max(1)..];
        let late_mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let late_spread = tail.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - tail.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        // an unstable fixed point is never approached; the late mean stands in
        let reference = match ss {
            Some(r) if r.is_stable() => r.state.inversion,
            _ => late_mean,
        };
        let plateau = settle_time(&t_out, &sz, reference, dy.plateau_tol);
        let _ = writeln!(
            s,
            "eta = {} Hz: sigma_z(t_end) = {}, plateau {}",
            num(eta),
            num(*sz.last().expect("samples")),
            plateau.map_or("not reached".to_string(), |t| format!("after {} s", num(t)))
        );
        series.push((format!("eta = {} Hz", num(eta)), t_out.iter().copied().zip(sz).collect()));
        runs.push(DynamicsRun {
            eta_hz: eta,
            file,
            averaged: sub > 1,
            final_state: *states.last().expect("samples"),
            late_spread,
            steady: ss.map(|r| r.state),
            steady_stable: ss.map(|r| r.is_stable()),
            plateau_time_s: plateau,
            plateau_reference: reference,
        });
    }
    out.json("dynamics.json", &runs)?;
    out.svg("dynamics.svg", &svg::line_plot("Atomic inversion", "t (s)", "<sigma_z>", &series))?;
    Ok(s)
}

#[derive(Serialize)]
struct SpectrumData {
    params_angular: PhysicalParams,
    steady: SteadyReport,
    modes: Vec<spectrum::Mode>,
    fit: spectrum::LorentzianFit,
    fwhm_hz: f64,
    gamma_hz: f64,
    sub_gamma: bool,
    dt_s: f64,
    t_max_s: f64,
    correlation_samples: usize,
    probe_seed: bool,
    df_hz: f64,
    tail: f64,
    truncated: bool,
    window_broadening_hz: f64,
    spectrum_points: usize,
    exported_points: usize,
}

/// Half-width of the exported spectrum around the fitted centre, in FWHM.
const EXPORT_FWHMS: f64 = 50.0;

fn spectrum_cmd(cfg: &RunConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let lw = spectrum::linewidth(&p, &cfg.steady.options(), &cfg.spectrum.options(), &NoWatchdog)?;
    let fit = lw.fit;
    let reach = EXPORT_FWHMS * fit.fwhm_hz();
    let rows: Vec<(f64, f64)> = lw
        .spectrum
        .freqs_hz
        .iter()
        .zip(&lw.spectrum.psd)
        .filter(|(f, _)| (**f - fit.center_hz).abs() <= reach)
        .map(|(f, v)| (*f, *v))
        .collect();
    out.csv(
        "spectrum.csv",
        &["freq_hz", "psd", "lorentzian_fit"],
        rows.iter().map(|&(f, v)| vec![num(f), num(v), num(fit.eval(f))]),
    )?;
    let gamma_hz = to_hz(p.gamma());
    let data = SpectrumData {
        params_angular: p,
        steady: lw.steady,
        modes: lw.modes.clone(),
        fit,
        fwhm_hz: lw.fwhm_hz,
        gamma_hz,
        sub_gamma: lw.fwhm_hz < gamma_hz,
        dt_s: lw.trace.dt,
        t_max_s: lw.trace.t_max(),
        correlation_samples: lw.trace.g1.len(),
        probe_seed: lw.trace.probe_seed,
        df_hz: lw.spectrum.df_hz,
        tail: lw.spectrum.tail,
        truncated: lw.spectrum.truncated,
        window_broadening_hz: lw.spectrum.window_broadening_hz,
        spectrum_points: lw.spectrum.psd.len(),
        exported_points: rows.len(),
    };
    out.json("spectrum.json", &data)?;
    let near = 10.0 * fit.fwhm_hz();
    let view: Vec<(f64, f64)> = rows.iter().copied().filter(|(f, _)| (f - fit.center_hz).abs() <= near).collect();
    let series = vec![
        ("spectrum".to_string(), view.clone()),
        ("Lorentzian fit".to_string(), view.iter().map(|&(f, _)| (f, fit.eval(f))).collect()),
    ];
    out.svg("spectrum.svg", &svg::line_plot("Emission spectrum", "offset (Hz)", "PSD", &series))?;
    Ok(format!(
        "n_photon {}\nFWHM {} Hz (gamma = {} Hz{})\ncentre {} Hz, fit rms {}\n{} correlation samples, dt {} s{}\n",
        num(lw.steady.state.n_photon),
        num(lw.fwhm_hz),
        num(gamma_hz),
        if data.sub_gamma { ", sub-gamma" } else { "" },
        num(fit.center_hz),
        num(fit.rms_residual),
        data.correlation_samples,
        num(data.dt_s),
        if data.truncated { ", tail truncated" } else { "" }
    ))
}

#[derive(Serialize)]
struct SweepData<'a> {
    grid: &'a SweepGrid,
    counts: srl_core::sweep::StatusCounts,
    min_fwhm: Option<(usize, usize, f64)>,
}

fn matrix_rows(grid: &SweepGrid, value: impl Fn(&srl_core::sweep::CellRecord) -> String) -> Vec<Vec<String>> {
    grid.n_values
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut row = vec![num(*n)];
            row.extend((0..grid.eta_values_hz.len()).map(|j| value(grid.cell(i, j))));
            row
        })
        .collect()
}

fn heatmap_svg(grid: &SweepGrid, title: &str, label: &str, value: impl Fn(&srl_core::sweep::CellRecord) -> Option<f64>) -> String {
    // atom number across, pump rate up
    let (rows, cols) = (grid.eta_values_hz.len(), grid.n_values.len());
    let values: Vec<Option<f64>> = (0..rows * cols).map(|k| value(grid.cell(k % cols, k / cols))).collect();
    let mut lines = vec![(grid.overlays.max_pump_line.clone(), "white", true)];
    if let Some(nc) = grid.overlays.crit_atom_line {
        lines.push((vec![(nc, grid.spec.eta_axis_hz.min), (nc, grid.spec.eta_axis_hz.max)], "red", false));
    }
    Heatmap {
        title,
        colorbar_label: label,
        x_axis: &grid.spec.n_axis,
        x_label: "atom number N",
        y_axis: &grid.spec.eta_axis_hz,
        y_label: "pump rate eta (Hz)",
        values: &values,
        lines,
    }
    .render()
}

pub fn write_sweep(grid: &SweepGrid, svg_out: bool, out: &mut OutputDir) -> Result<(), CliError> {
    let mut header = vec!["n_atoms".to_string()];
    header.extend(grid.eta_values_hz.iter().map(|e| format!("eta_hz={}", num(*e))));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("photon.csv", &header, matrix_rows(grid, |c| opt_num(c.n_photon)))?;
    out.csv("status.csv", &header, matrix_rows(grid, |c| c.status.as_str().to_string()))?;
    if grid.spec.quantity == Quantity::Linewidth {
        out.csv("fwhm.csv", &header, matrix_rows(grid, |c| opt_num(c.fwhm_hz)))?;
    }
    out.json(
        "sweep.json",
        &SweepData {
            grid,
            counts: grid.counts(),
            min_fwhm: grid.min_fwhm(),
        },
    )?;
    if svg_out {
        out.svg("photon.svg", &heatmap_svg(grid, "Intracavity photon number", "photons", |c| c.n_photon))?;
        if grid.spec.quantity == Quantity::Linewidth {
            let ok = |c: &srl_core::sweep::CellRecord| c.fwhm_hz.filter(|_| c.status == CellStatus::Ok);
            out.svg("fwhm.svg", &heatmap_svg(grid, "Linewidth FWHM", "Hz", ok))?;
        }
    }
    Ok(())
}

fn pool(ctx: &Context) -> Result<rayon::ThreadPool, CliError> {
    let n = runner::worker_count(ctx.workers)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))
}

fn sweep(cfg: &RunConfig, ctx: &Context, out: &mut OutputDir) -> Result<String, CliError> {
    let base = cfg.physical()?;
    let spec = cfg.sweep.grid();
    let opts = cfg.cell_options();
    let digest = out.config_digest();
    let outcome = runner::run_sweep(&SweepRequest {
        base: &base,
        spec: &spec,
        options: &opts,
        cell_budget: cfg.sweep.cell_budget,
        timeout: Duration::from_secs_f64(cfg.sweep.timeout_s),
        workers: runner::worker_count(ctx.workers)?,
        checkpoint: ctx.checkpoint.as_deref(),
        config_sha256: &digest,
    })?;
    write_sweep(&outcome.grid, cfg.sweep.svg, out)?;
    let c = outcome.grid.counts();
    let mut s = format!(
        "{} cells: {} ok, {} failed, {} skipped ({} resumed from checkpoint)\n",
        spec.cells(),
        c.ok,
        c.failed,
        c.skipped,
        outcome.resumed
    );
    let mut by_status: Vec<(CellStatus, usize)> = Vec::new();
    for cell in &outcome.grid.cells {
        match by_status.iter_mut().find(|(st, _)| *st == cell.status) {
            Some((_, n)) => *n += 1,
            None => by_status.push((cell.status, 1)),
        }
    }
    for (st, n) in by_status {
        let _ = writeln!(s, "  {:<15} {n}", st.as_str());
    }
    if let Some((i, j, f)) = outcome.grid.min_fwhm() {
        let _ = writeln!(
            s,
            "minimum FWHM {} Hz at N = {}, eta = {} Hz",
            num(f),
            num(outcome.grid.n_values[i]),
            num(outcome.grid.eta_values_hz[j])
        );
    }
    Ok(s)
}

#[derive(Serialize)]
struct OracleRow {
    n_atoms: usize,
    eta_hz: f64,
    n_fock: usize,
    stored_elements: usize,
    n_photon: f64,
    jz_per_atom: f64,
    residual: f64,
    fell_back: bool,
    trace_error: f64,
    hermiticity_error: f64,
    min_eigenvalue: f64,
}

#[derive(Serialize)]
struct OracleEvolution {
    n_atoms: usize,
    file: String,
    trace_error: f64,
    hermiticity_error: f64,
    min_eigenvalue: f64,
}

fn oracle_n_fock(cfg: &RunConfig, p: &PhysicalParams) -> usize {
    match cfg.oracle.n_fock {
        Some(n) => n,
        None => {
            let mft = meanfield::steady_state(p, meanfield::SteadyMethod::Rootfind).map_or(0.0, |s| s.n_photon);
            dicke::default_n_fock(mft).min(cfg.oracle.n_fock_cap).max(2)
        }
    }
}

fn oracle(cfg: &RunConfig, ctx: &Context, out: &mut OutputDir) -> Result<String, CliError> {
    let p = cfg.physical()?;
    let etas = cfg.oracle.eta_values_hz(&p);
    let jobs: Vec<(usize, f64)> = cfg
        .oracle
        .n_list
        .iter()
        .flat_map(|&n| etas.iter().map(move |&e| (n, e)))
        .collect();
    let pool = pool(ctx)?;
    let rows: Vec<Result<OracleRow, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, eta)| {
                let pe = p.with_n_atoms(n as f64)?.with_eta(hz(eta))?;
                let n_fock = oracle_n_fock(cfg, &pe);
                let space = DickeSpace::new(n, n_fock)?;
                let l = dicke::build_liouvillian(&OracleParams::from_physical(&pe, n_fock), &space, cfg.oracle.memory_cap)?;
                let ss = dicke::me_steady_state(&l, cfg.oracle.method, &NoWatchdog)?;
                let st = &ss.state;
                Ok(OracleRow {
                    n_atoms: n,
                    eta_hz: eta,
                    n_fock,
                    stored_elements: space.dim(),
                    n_photon: st.photon_number(),
                    jz_per_atom: st.jz() / n as f64,
                    residual: ss.residual,
                    fell_back: ss.fell_back,
                    trace_error: (st.trace() - 1.0).abs(),
                    hermiticity_error: st.hermiticity_error(),
                    min_eigenvalue: st.min_eigenvalue(),
                })
            })
            .collect()
    });
    let rows: Vec<OracleRow> = rows.into_iter().collect::<Result<_, _>>()?;
    out.csv(
        "oracle.csv",
        &["n_atoms", "eta_hz", "n_fock", "n_photon", "jz_per_atom", "residual", "min_eigenvalue"],
        rows.iter().map(|r| {
            vec![
                r.n_atoms.to_string(),
                num(r.eta_hz),
                r.n_fock.to_string(),
                num(r.n_photon),
                num(r.jz_per_atom),
                num(r.residual),
                num(r.min_eigenvalue),
            ]
        }),
    )?;

    let mut evolutions = Vec::new();
    if let Some(t_end) = cfg.oracle.evolve_t_end {
        let m = cfg.oracle.evolve_samples.max(2);
        let grid: Vec<f64> = (0..m).map(|k| t_end * k as f64 / (m - 1) as f64).collect();
        for &n in &cfg.oracle.n_list {
            let pe = p.with_n_atoms(n as f64)?;
            let n_fock = oracle_n_fock(cfg, &pe);
            let space = DickeSpace::new(n, n_fock)?;
            let l = dicke::build_liouvillian(&OracleParams::from_physical(&pe, n_fock), &space, cfg.oracle.memory_cap)?;
            let tr = dicke::me_evolve(&l, &DensityState::excited(&space), &grid, cfg.oracle.tol, &NoWatchdog)?;
            let file = format!("oracle_evolution_n{n}.csv");
            out.csv(
                &file,
                &["t_s", "n_photon", "jz_per_atom"],
                (0..tr.times.len()).map(|k| vec![num(tr.times[k]), num(tr.n_photon[k]), num(tr.jz_per_atom[k])]),
            )?;
            evolutions.push(OracleEvolution {
                n_atoms: n,
                file,
                trace_error: tr.trace_error,
                hermiticity_error: tr.hermiticity_error,
                min_eigenvalue: tr.min_eigenvalue,
            });
        }
    }
    out.json("oracle.json", &serde_json::json!({ "steady": rows, "evolution": evolutions }))?;

    let mut s = String::from("N   eta_hz        n_fock  <a+a>          <Jz>/N\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<3} {:<13} {:<7} {:<14} {}",
            r.n_atoms,
            num(r.eta_hz),
            r.n_fock,
            num(r.n_photon),
            num(r.jz_per_atom)
        );
    }
    Ok(s)
}

/// Per-atom-number summary of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArgmaxSummary {
    pub n_atoms: usize,
    pub mft_argmax: Option<usize>,
    pub me_argmax: usize,
    /// Index distance between the two maxima.
    pub offset: Option<usize>,
}

pub fn argmax_summary(rows: &[dicke::ComparisonRow]) -> Vec<ArgmaxSummary> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n_atoms).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let sub: Vec<&dicke::ComparisonRow> = rows.iter().filter(|r| r.n_atoms == n).collect();
            let me_argmax = argmax(sub.iter().map(|r| r.me)).unwrap_or(0);
            let mft_argmax = if sub.iter().all(|r| r.mft.is_some()) {
                argmax(sub.iter().map(|r| r.mft.unwrap_or(0.0)))
            } else {
                None
            };
            ArgmaxSummary {
                n_atoms: n,
                mft_argmax,
                me_argmax,
                offset: mft_argmax.map(|a| a.abs_diff(me_argmax)),
            }
        })
        .collect()
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    values
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// Mean-field and master-equation photon numbers on the oracle grid.
pub fn comparison_rows(cfg: &RunConfig, ctx: &Context) -> Result<Vec<dicke::ComparisonRow>, CliError> {
    let p = cfg.physical()?;
    let etas: Vec<f64> = cfg.oracle.eta_values_hz(&p).into_iter().map(hz).collect();
    let pool = pool(ctx)?;
    let parts: Vec<Result<Vec<dicke::ComparisonRow>, CliError>> = pool.install(|| {
        cfg.oracle
            .n_list
            .par_iter()
            .map(|&n| Ok(dicke::compare_mft_me(&p, &[n], &etas, cfg.oracle.n_fock_cap, &NoWatchdog)?))
            .collect()
    });
    let mut rows = Vec::new();
    for part in parts {
        rows.extend(part?);
    }
    Ok(rows)
}

fn compare(cfg: &RunConfig, ctx: &Context, out: &mut OutputDir) -> Result<String, CliError> {
    let rows = comparison_rows(cfg, ctx)?;
    let summary = argmax_summary(&rows);
    out.csv(
        "compare.csv",
        &["n_atoms", "eta_hz", "n_fock", "mft_photons", "me_photons", "ratio", "flagged"],
        rows.iter().map(|r| {
            vec![
                r.n_atoms.to_string(),
                num(to_hz(r.eta)),
                r.n_fock.to_string(),
                opt_num(r.mft),
                num(r.me),
                opt_num(r.ratio),
                r.flagged.to_string(),
            ]
        }),
    )?;
    out.json("compare.json", &serde_json::json!({ "rows": rows, "argmax": summary }))?;
    let mut s = String::from("N   eta_hz        MFT            ME             ratio\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<3} {:<13} {:<14} {:<14} {}{}",
            r.n_atoms,
            num(to_hz(r.eta)),
            opt_num(r.mft),
            num(r.me),
            opt_num(r.ratio),
            if r.flagged { "  (outside [0.5, 2])" } else { "" }
        );
    }
    for a in &summary {
        let _ = writeln!(
            s,
            "N = {}: maximum at pump index {} (ME) and {} (MFT)",
            a.n_atoms,
            a.me_argmax,
            a.mft_argmax.map_or("-".to_string(), |k| k.to_string())
        );
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settle_time_cases() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(settle_time(&t, &[0.0, 0.5, 0.99, 1.0], 1.0, 0.05), Some(2.0));
        assert_eq!(settle_time(&t, &[1.0; 4], 1.0, 0.05), Some(0.0));
        assert_eq!(settle_time(&t, &[0.0, 0.0, 0.0, 0.5], 1.0, 0.05), None);
    }

    #[test]
    fn interval_means_average_an_oscillation_away() {
        let sub = 64;
        let times: Vec<f64> = (0..=4 * sub).map(|k| k as f64 / sub as f64).collect();
        let states: Vec<MeanFieldState> = times
            .iter()
            .map(|t| MeanFieldState {
                inversion: 0.3 + (2.0 * std::f64::consts::PI * 5.0 * t).sin(),
                ..MeanFieldState::zero()
            })
            .collect();
        let (t, m) = interval_means(&times, &states, sub);
        assert_eq!(t, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        for s in &m[1..] {
            assert!((s.inversion - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_per_atom_number() {
        let row = |n, k: usize, mft: f64, me: f64| dicke::ComparisonRow {
            n_atoms: n,
            eta: k as f64,
            mft: Some(mft),
            me,
            n_fock: 8,
            ratio: Some(mft / me),
            flagged: false,
        };
        let rows = vec![row(4, 0, 1.0, 1.0), row(4, 1, 3.0, 2.0), row(4, 2, 2.0, 3.0)];
        let s = argmax_summary(&rows);
        assert_eq!(s[0].me_argmax, 2);
        assert_eq!(s[0].mft_argmax, Some(1));
        assert_eq!(s[0].offset, Some(1));
    }
}
