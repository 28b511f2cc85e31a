use clap::{Args, Parser, Subcommand};
use ringtrap::compensation::{response_matrix, solve_compensation_in, suppression_report};
use ringtrap::constants::{MICRO, TWO_PI};
use ringtrap::crystal::{
    solve_crystal_with, spacing_report, spacing_report_positions, HolePerturbation, SolverOptions,
    SpacingReport, HOLE_FREQUENCY_HZ,
};
use ringtrap::fields::{find_minimum_ring, secular_modes, VoltageSet};
use ringtrap::geometry::validate;
use ringtrap::io::{self, ErrorKind, PipelineError, RunConfig, StrayRef};
use ringtrap::metrology::{measure_sites, FieldEstimate};
use ringtrap::TrapModel;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ringtrap",
    version,
    about = "Segmented ring ion trap: fields, modes, crystals, stray-field measurement and compensation",
    after_help = "Set RINGTRAP_THREADS to parallelize per-site work.\nExit codes: 0 success, 1 usage error, 2 numerical failure."
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); flags override its settings
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Layout file (TOML); the generated default layout when absent
    #[arg(long, global = true, value_name = "FILE")]
    layout: Option<PathBuf>,
    /// Stray-field specification (TOML)
    #[arg(long, global = true, value_name = "FILE")]
    stray: Option<PathBuf>,
    /// Control voltages (CSV: electrode,volts_V); all zero when absent
    #[arg(long, global = true, value_name = "FILE")]
    volts: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Site list, e.g. g00..g19,g25..g43
    #[arg(long, global = true)]
    sites: Option<String>,
    /// Number of ions
    #[arg(long, global = true)]
    n: Option<usize>,
    /// RF amplitude, V
    #[arg(long = "rf-volts", global = true)]
    rf_volts: Option<f64>,
    /// RF frequency, MHz
    #[arg(long = "rf-mhz", global = true)]
    rf_mhz: Option<f64>,
    /// Ridge weight of the compensation solve, (V/m)^2/V^2
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Control voltage bound, V
    #[arg(long, global = true)]
    vbound: Option<f64>,
    /// Switch off measurement noise
    #[arg(long = "no-noise", global = true)]
    no_noise: bool,
    /// Also cancel interpolated fields at unmeasured sites
    #[arg(long = "fill-unmeasured", global = true)]
    fill_unmeasured: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Electrode layout
    Layout {
        #[command(subcommand)]
        action: LayoutCmd,
    },
    /// Field maps
    Field {
        #[command(subcommand)]
        action: FieldCmd,
    },
    /// Secular frequencies at sites (MHz)
    Modes {
        /// Single site (same as --sites)
        #[arg(long)]
        site: Option<String>,
    },
    /// Ring Coulomb crystals
    Crystal {
        #[command(subcommand)]
        action: CrystalCmd,
    },
    /// Virtual stray-field measurement at the sites
    Measure,
    /// Solve for compensation voltages from measured fields
    Compensate {
        /// Response matrix CSV (row = site); computed from the layout when absent
        #[arg(long, value_name = "FILE")]
        response: Option<PathBuf>,
        /// Measured fields CSV (site,E_T_V_per_m,sigma_V_per_m)
        #[arg(long, value_name = "FILE")]
        measured: PathBuf,
        /// Post-compensation measurement CSV for the suppression report;
        /// the predicted residual is reported when absent
        #[arg(long, value_name = "FILE")]
        after: Option<PathBuf>,
    },
    /// Full seeded measure, solve, verify and crystal run
    Loop,
}

#[derive(Subcommand)]
enum LayoutCmd {
    /// Write the layout as an explicit TOML file
    Export,
    /// Pseudopotential minimum ring as CSV
    Ring {
        #[arg(long, default_value_t = 176)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum FieldCmd {
    /// Potential, field and pseudopotential on a grid
    Map {
        /// START:STOP:COUNT or a single value, um
        #[arg(long = "x-um", allow_hyphen_values = true)]
        x: String,
        #[arg(long = "y-um", allow_hyphen_values = true)]
        y: String,
        #[arg(long = "z-um", allow_hyphen_values = true)]
        z: String,
    },
}

#[derive(Subcommand)]
enum CrystalCmd {
    /// Equilibrium positions and spacing report
    Solve {
        /// Leave out the loading-hole perturbation
        #[arg(long = "no-hole")]
        no_hole: bool,
    },
    /// Spacing report of a positions file
    Report {
        #[arg(long, value_name = "FILE")]
        positions: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(e.to_string())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.kind {
            ErrorKind::Usage => Failure::Usage(e.to_string()),
            ErrorKind::Numerical => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        usage(e)
    }
}

type Res<T> = Result<T, Failure>;

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    }
}

/// Configuration file (if any) with the command-line flags applied.
fn load_config(c: &Common) -> Res<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            base_dir: absolute(Path::new(".")),
            ..RunConfig::default()
        },
    };
    if let Some(p) = &c.layout {
        cfg.layout = Some(absolute(p));
        cfg.params = None;
    }
    if let Some(p) = &c.stray {
        cfg.stray = Some(StrayRef::Path(absolute(p)));
    }
    if let Some(p) = &c.out {
        cfg.out = absolute(p);
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = &c.sites {
        cfg.sites = s.clone();
    }
    if let Some(n) = c.n {
        cfg.crystal.n = n;
    }
    if c.rf_volts.is_some() {
        cfg.rf_volts = c.rf_volts;
    }
    if c.rf_mhz.is_some() {
        cfg.rf_mhz = c.rf_mhz;
    }
    if c.lambda.is_some() {
        cfg.compensation.lambda = c.lambda;
    }
    if let Some(v) = c.vbound {
        cfg.compensation.vbound = v;
    }
    if c.no_noise {
        cfg.measurement.noise = false;
    }
    if c.fill_unmeasured {
        cfg.compensation.fill_unmeasured = true;
    }
    if let Some(p) = &c.volts {
        if !p.is_file() {
            return Err(usage(format!(
                "--volts: {} is not a readable file",
                p.display()
            )));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_volts(c: &Common) -> Res<VoltageSet> {
    match &c.volts {
        Some(p) => Ok(io::read_voltages(
            &io::read_text(p)?,
            &p.display().to_string(),
        )?),
        None => Ok(VoltageSet::new()),
    }
}

fn out_file(cfg: &RunConfig, name: &str, text: &str) -> Res<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    io::write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

fn site_list(cfg: &RunConfig, model: &TrapModel) -> Res<Vec<String>> {
    let sites = cfg.site_list()?;
    for s in &sites {
        if model.site(s).is_none() {
            return Err(usage(format!("layout has no site {s}")));
        }
    }
    Ok(sites)
}

/// START:STOP:COUNT (inclusive) or a single value, um, into meters.
fn axis(spec: &str, name: &str) -> Res<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("--{name}: '{s}' is not a number")))
    };
    match parts.as_slice() {
        [v] => Ok(vec![num(v)? * MICRO]),
        [a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n
                .trim()
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| usage(format!("--{name}: count must be a positive integer")))?;
            Ok((0..n)
                .map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 } * MICRO)
                .collect())
        }
        _ => Err(usage(format!(
            "--{name}: expected START:STOP:COUNT or a value"
        ))),
    }
}

fn print_spacing(r: &SpacingReport) {
    println!(
        "{} spacings: mean {:.3} um, std/mean {:.4}, min {:.3} um, max {:.3} um",
        r.stats.count,
        r.stats.mean / MICRO,
        r.stats.relative_std(),
        r.stats.min / MICRO,
        r.stats.max / MICRO
    );
}

fn write_spacing(cfg: &RunConfig, model: &TrapModel, r: &SpacingReport) -> Res<()> {
    let k = &cfg.crystal;
    let outside = r
        .stats_excluding_sites(model, &k.exclude, k.exclude_pitches)
        .map_err(usage)?;
    out_file(cfg, "spacing.csv", &io::spacing_csv(r))?;
    let p = out_file(
        cfg,
        "spacing_summary.csv",
        &io::spacing_summary_csv(r, &[("outside_excluded".to_string(), outside)]),
    )?;
    print_spacing(r);
    println!(
        "outside {:?} (+-{} pitch): std/mean {:.4}",
        k.exclude,
        k.exclude_pitches,
        outside.relative_std()
    );
    println!("wrote {}", p.display());
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    let cfg = load_config(&cli.common)?;
    match cli.cmd {
        Cmd::Loop => {
            let s = io::run_pipeline(&cfg)?;
            println!(
                "suppression: rms {:.4} -> {:.4} V/m, ratio {:.1}",
                s.report.rms_before, s.report.rms_after, s.report.ratio
            );
            println!("max |delta V| {:.4} V", s.delta_volts.max_abs());
            print_spacing(&s.spacing);
            println!(
                "outside excluded arcs: std/mean {:.4}",
                s.outside_excluded.relative_std()
            );
            println!(
                "wrote {} files to {}",
                s.manifest.files.len() + 1,
                s.out_dir.display()
            );
            return Ok(());
        }
        Cmd::Crystal {
            action: CrystalCmd::Report { positions },
        } => {
            let pos = io::read_positions(
                &io::read_text(&positions)?,
                &positions.display().to_string(),
            )?;
            let r = spacing_report_positions(&pos).map_err(numerical)?;
            let model = io::build_model(&cfg)?;
            return write_spacing(&cfg, &model, &r);
        }
        _ => {}
    }
    let model = io::build_model(&cfg)?;
    let volts = load_volts(&cli.common)?;
    match cli.cmd {
        Cmd::Layout { action } => match action {
            LayoutCmd::Export => {
                let report = validate(&model);
                let p = out_file(&cfg, "layout.toml", &io::layout_to_toml(&model))?;
                println!(
                    "{} electrodes, {} gaps, {} sites; validation: {}",
                    model.electrodes().len(),
                    model.gaps().len(),
                    model.sites().len(),
                    if report.is_clean() {
                        "clean".to_string()
                    } else {
                        report.to_string()
                    }
                );
                println!("wrote {}", p.display());
            }
            LayoutCmd::Ring { samples } => {
                if samples == 0 {
                    return Err(usage("--samples must be positive"));
                }
                let ring = find_minimum_ring(&model, samples).map_err(numerical)?;
                let p = out_file(&cfg, "minimum_ring.csv", &io::ring_csv(&ring))?;
                println!(
                    "minimum ring: mean radius {:.3} um, mean height {:.3} um",
                    ring.mean_radius / MICRO,
                    ring.mean_height / MICRO
                );
                println!("wrote {}", p.display());
            }
        },
        Cmd::Field {
            action: FieldCmd::Map { x, y, z },
        } => {
            let (xs, ys, zs) = (axis(&x, "x-um")?, axis(&y, "y-um")?, axis(&z, "z-um")?);
            let mut pts = Vec::with_capacity(xs.len() * ys.len() * zs.len());
            for &a in &xs {
                for &b in &ys {
                    for &c in &zs {
                        pts.push([a, b, c]);
                    }
                }
            }
            let text = io::field_map_csv(&model, &volts, &pts).map_err(numerical)?;
            let p = out_file(&cfg, "field_map.csv", &text)?;
            println!("{} points; wrote {}", pts.len(), p.display());
        }
        Cmd::Modes { site } => {
            let sites = match site {
                Some(s) => {
                    let l = io::parse_site_list(&s)?;
                    for s in &l {
                        if model.site(s).is_none() {
                            return Err(usage(format!("layout has no site {s}")));
                        }
                    }
                    l
                }
                None => site_list(&cfg, &model)?,
            };
            let mut all = Vec::new();
            for s in &sites {
                let m = secular_modes(&model, &volts, model.site(s).expect("checked"))
                    .map_err(numerical)?;
                println!(
                    "{}: f_T {:.4} MHz, f_R {:.4} MHz, f_Z {:.4} MHz, rotation {:.2} deg",
                    s,
                    m.omega_t / TWO_PI / 1e6,
                    m.omega_r / TWO_PI / 1e6,
                    m.omega_z / TWO_PI / 1e6,
                    m.rotation_angle.to_degrees()
                );
                all.push(m);
            }
            let p = out_file(&cfg, "modes.csv", &io::modes_csv(&all))?;
            println!("wrote {}", p.display());
        }
        Cmd::Crystal {
            action: CrystalCmd::Solve { no_hole },
        } => {
            let stray = io::build_stray(&cfg, &model)?;
            let hole = if !no_hole && cfg.crystal.hole && model.loading_hole().is_some() {
                Some(HolePerturbation::calibrated(&model, HOLE_FREQUENCY_HZ).map_err(numerical)?)
            } else {
                None
            };
            let opts = SolverOptions {
                max_iterations: cfg.crystal.max_iterations,
                ..SolverOptions::default()
            };
            let c = solve_crystal_with(
                &model,
                &volts,
                stray.as_ref(),
                hole,
                cfg.crystal.n,
                cfg.seed,
                &opts,
            )
            .map_err(numerical)?;
            let p = out_file(&cfg, "positions.csv", &io::positions_csv(&c.positions))?;
            println!(
                "{} ions, {} iterations; wrote {}",
                c.n,
                c.iterations,
                p.display()
            );
            let r = spacing_report(&c).map_err(numerical)?;
            write_spacing(&cfg, &model, &r)?;
        }
        Cmd::Measure => {
            let stray = io::build_stray(&cfg, &model)?;
            let sites = site_list(&cfg, &model)?;
            let m = measure_sites(
                &model,
                &volts,
                stray.as_ref(),
                &sites,
                &cfg.measurement.alphas,
                &cfg.noise(),
            );
            out_file(&cfg, "measurements.json", &io::measurements_json(&m))?;
            let p = out_file(&cfg, "measurements.csv", &io::estimates_csv(&m))?;
            let failed = m.iter().filter(|s| s.result.is_err()).count();
            println!(
                "{} records ({} failed); wrote {}",
                m.len(),
                failed,
                p.display()
            );
            if failed == m.len() {
                return Err(numerical("every site measurement failed"));
            }
        }
        Cmd::Compensate {
            response,
            measured,
            after,
        } => {
            let before =
                io::read_estimates(&io::read_text(&measured)?, &measured.display().to_string())?;
            let used: Vec<(String, FieldEstimate)> = before
                .iter()
                .filter_map(|(s, e)| e.map(|e| (s.clone(), e)))
                .collect();
            if used.is_empty() {
                return Err(usage(format!("{}: no measured values", measured.display())));
            }
            let full = match &response {
                Some(p) => io::read_response(&io::read_text(p)?, &p.display().to_string())?,
                None => {
                    let labels: Vec<String> = used.iter().map(|u| u.0.clone()).collect();
                    for s in &labels {
                        if model.site(s).is_none() {
                            return Err(usage(format!("layout has no site {s}")));
                        }
                    }
                    response_matrix(&model, &labels, &model.drivable_ids()).map_err(numerical)?
                }
            };
            // Rows of the response in the order of the measured sites.
            let mut rows = Vec::with_capacity(used.len());
            for (s, _) in &used {
                let i = full
                    .sites
                    .iter()
                    .position(|r| r == s)
                    .ok_or_else(|| usage(format!("response matrix has no row for {s}")))?;
                rows.push(i);
            }
            let mut resp = full.clone();
            resp.sites = used.iter().map(|u| u.0.clone()).collect();
            resp.matrix = full.matrix.select_rows(&rows);
            resp.radial = full.radial.select_rows(&rows);
            resp.vertical = full.vertical.select_rows(&rows);
            let estimates: Vec<FieldEstimate> = used.iter().map(|u| u.1).collect();
            let opts = cfg.compensation_options();
            if response.is_some() && opts.radial_weight > 0.0 {
                return Err(usage(
                    "radial_weight needs the radial response, which response files do not store",
                ));
            }
            let plan =
                solve_compensation_in(&model, &resp, &estimates, &opts).map_err(numerical)?;
            let p = out_file(
                &cfg,
                "delta.csv",
                &io::voltages_csv(&resp.electrodes, &plan.delta_volts),
            )?;
            println!(
                "max |delta V| {:.6} V; wrote {}",
                plan.delta_volts.max_abs(),
                p.display()
            );
            let after_rows: Vec<(String, Option<FieldEstimate>)> = match &after {
                Some(a) => io::read_estimates(&io::read_text(a)?, &a.display().to_string())?,
                None => {
                    let mut it = plan.predicted_residual.iter();
                    before
                        .iter()
                        .map(|(s, e)| {
                            let pred = e.and_then(|_| it.next()).map(|&r| FieldEstimate {
                                e_t: r,
                                sigma: 0.0,
                                residual: 0.0,
                            });
                            (s.clone(), pred)
                        })
                        .collect()
                }
            };
            let report = suppression_report(&before, &after_rows).map_err(usage)?;
            out_file(&cfg, "suppression.csv", &io::suppression_csv(&report))?;
            let p = out_file(
                &cfg,
                "suppression_summary.csv",
                &io::suppression_summary_csv(&report),
            )?;
            println!(
                "{}: rms {:.4} -> {:.4} V/m, ratio {:.1}; wrote {}",
                if after.is_some() {
                    "measured"
                } else {
                    "predicted"
                },
                report.rms_before,
                report.rms_after,
                report.ratio,
                p.display()
            );
        }
        Cmd::Loop | Cmd::Crystal { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
