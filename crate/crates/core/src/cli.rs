//! Command-line front end. `run` parses arguments, executes one subcommand
//! and maps the outcome to an exit status: 0 success, 1 failed test or
//! runtime failure, 2 usage or validation error.
//!
//! Graph-taking subcommands read a spec file (`--spec FILE`, `-` or nothing
//! for stdin), so `nilwalk preset triangular | nilwalk albanese` works.
//! Reports go to stdout as JSON; CSV sidecars go to `--out DIR`, defaulting
//! to `$NILWALK_OUT_DIR` and then the working directory.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::diffusion::{castell_simulate, euler_simulate, DiffusionSpec, DriftKind};
use crate::error::{Error, Result};
use crate::graph_model::{dice, triangular, DiceParams, TriangularParams, VoltageGraph};
use crate::harmonic::{analyze, RealizationOverrides, WalkData};
use crate::spec::{write_csv, CriterionResult, ExperimentReport, GraphSpecFile};
use crate::tensor_free::{signature, FreeNilpotent};
use crate::verify::{
    ensemble_expectation, functional_clt, gaussian_bump, measure_change, nonharmonic_test, random_offset_perturbation,
    semigroup_dp, twisted_clt_test, Check, CltConfig, DpOptions, FunctionalCltReport, DP_STATE_LIMIT,
};
use crate::walk_sim::{sample_walk, PathEnsemble, WalkConfig};

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "NILWALK_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "nilwalk", version, about = "Random walks on nilpotent covering graphs")]
struct Cli {
    /// Worker threads for Monte-Carlo runs (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for CSV sidecars.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SpecArg {
    /// Graph spec file; `-` or absent reads stdin.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetKind {
    Triangular,
    Dice,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scheme {
    Castell,
    Euler,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit a preset graph spec.
    Preset {
        kind: PresetKind,
        /// Six comma-separated probabilities.
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<f64>>,
        /// Dice only: second-layer offsets `κ₁,κ₂` of the vertices y and z.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        kappa: Option<Vec<f64>>,
    },
    /// Invariant measure, homological direction, Albanese metric and frame, β.
    Albanese(SpecArg),
    /// The modified harmonic realization: offsets, increments, residual.
    Realize(SpecArg),
    /// The drift β(Φ₀) in both bases.
    Beta(SpecArg),
    /// Sample the scaled, centered walk and write its trajectories as CSV.
    SimulateWalk {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Record every `stride`-th step.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Sample the limiting diffusion and write its trajectories as CSV.
    SimulateDiffusion {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_enum, default_value = "castell")]
        scheme: Scheme,
        #[arg(long, default_value_t = crate::diffusion::DEFAULT_STEP)]
        h: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum, default_value = "beta")]
        drift: DriftArg,
    },
    /// Exact semigroup value `E f(τ_{n^-1/2}(ξ_n))` for the Gaussian bump, and
    /// optionally its gap to a Castell estimate of `E f(Y_1)`.
    SemigroupDp {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        n: Vec<usize>,
        #[arg(long, default_value_t = DP_STATE_LIMIT)]
        max_states: usize,
        /// Castell paths for the diffusion comparison; 0 skips it.
        #[arg(long, default_value_t = 0)]
        castell_paths: usize,
    },
    /// Functional CLT moment battery against the limiting diffusion.
    CltTest {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
        times: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        diffusion_paths: usize,
        /// Perturb first-layer offsets by up to this much and run the
        /// non-harmonic battery instead.
        #[arg(long)]
        perturb: Option<f64>,
        /// Walk lengths for the sup-gap fit of the non-harmonic battery.
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        gap_n: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        gap_paths: usize,
    },
    /// Exponential tilt making Φ₀ harmonic; `--clt` also runs the battery
    /// for the twisted walk.
    MeasureChange {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long)]
        clt: bool,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 2_000_000)]
        ergodic_steps: usize,
    },
    /// Truncated signature and its log of a piecewise-linear path read from
    /// a headerless CSV of points.
    Signature {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DriftArg {
    Beta,
    Rho,
}

/// Entry point used by the binary.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("{}", json!({"error": "threads", "message": e.to_string()}));
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(Outcome { value, pass }) => {
            let text = serde_json::to_string_pretty(&value).unwrap_or_default();
            // A closed pipe (`| head`) is not a failure of the command.
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => ExitCode::from(1),
                _ => ExitCode::from(if pass { 0 } else { 1 }),
            }
        }
        Err(e) => {
            let (kind, pointer) = match &e {
                Error::Validation { pointer, .. } => ("validation", Some(pointer.clone())),
                _ => (error_kind(&e), None),
            };
            eprintln!(
                "{}",
                json!({"error": kind, "pointer": pointer, "message": e.to_string()})
            );
            ExitCode::from(exit_code(&e))
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Structural(_) => "structural",
        Error::Domain(_) => "domain",
        Error::Validation { .. } => "validation",
        Error::InvalidAlgebra(_) => "invalid-algebra",
        Error::Stochasticity { .. } => "stochasticity",
        Error::InversePairing { .. } => "inverse-pairing",
        Error::Reducible { .. } => "reducible",
        Error::Numerical(_) => "numerical",
        Error::Degenerate(_) => "degenerate",
        Error::Resource { .. } => "resource",
        Error::Precondition(_) => "precondition",
        Error::Unsupported(_) => "unsupported",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Input problems exit with 2, runtime failures with 1.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::Resource { .. } | Error::Io(_) | Error::Csv(_) => 1,
        _ => 2,
    }
}

struct Outcome {
    value: Value,
    pass: bool,
}

fn ok(value: impl Serialize) -> Result<Outcome> {
    Ok(Outcome {
        value: serde_json::to_value(value)?,
        pass: true,
    })
}

fn read_spec(arg: &SpecArg) -> Result<(VoltageGraph, RealizationOverrides)> {
    let text = match &arg.spec {
        Some(p) if p.as_os_str() != "-" => std::fs::read_to_string(p)?,
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    GraphSpecFile::parse(&text)?.build()
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn albanese_json(w: &WalkData) -> Value {
    let a = &w.albanese;
    json!({
        "invariant_measure": w.measure.m,
        "rho": w.gamma.rho,
        "centered": w.gamma.is_centered(1e-10),
        "gram": matrix(&a.gram),
        "metric": matrix(&a.metric),
        "frame": matrix(&a.frame),
        "coframe": matrix(&a.coframe),
        "volume": a.volume,
        "inv_volume": a.inv_volume(),
        "beta": beta_json(w),
    })
}

fn beta_json(w: &WalkData) -> Value {
    json!({
        "coordinates": w.beta.beta,
        "frame_coordinates": w.beta.beta_frame,
        "beta_bar": w.beta.beta_bar.as_ref().map(matrix),
    })
}

fn ensemble_csv(cli: &Cli, name: &str, ens: &PathEnsemble) -> Result<String> {
    let path = out_dir(cli)?.join(name);
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((0..ens.dim()).map(|i| format!("y{i}")));
    let rows = (0..ens.num_paths()).flat_map(|p| {
        ens.times().iter().enumerate().map(move |(k, t)| {
            let mut row = vec![p as f64, *t];
            row.extend_from_slice(ens.point(p, k));
            row
        })
    });
    write_csv(&path, &header, rows)?;
    Ok(path.display().to_string())
}

fn check_results(criterion: &str, report: &FunctionalCltReport, level: f64) -> Vec<CriterionResult> {
    let mut out = Vec::new();
    for r in &report.reports {
        for c in &r.checks {
            out.push(from_check(criterion, r.t, c));
        }
        if let Some(e) = r.energy {
            out.push(CriterionResult {
                criterion: criterion.into(),
                name: format!("t={} energy permutation p-value", r.t),
                estimate: e.p_value,
                target: level,
                ci: [level, 1.0],
                pass: e.p_value >= level,
            });
        }
    }
    out
}

fn from_check(criterion: &str, t: f64, c: &Check) -> CriterionResult {
    CriterionResult {
        criterion: criterion.into(),
        name: format!("t={t} {}", c.name),
        estimate: c.estimate,
        target: c.target,
        ci: c.ci,
        pass: c.pass,
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Preset { kind, params, kappa } => {
            let (g, ov) = match kind {
                PresetKind::Triangular => {
                    if kappa.is_some() {
                        return Err(Error::Domain("the triangular preset has no free offsets".into()));
                    }
                    let p = params.clone().unwrap_or_else(|| vec![0.25, 0.15, 0.2, 0.1, 0.2, 0.1]);
                    (
                        triangular(TriangularParams::from_slice(&p)?)?,
                        RealizationOverrides::default(),
                    )
                }
                PresetKind::Dice => {
                    let p = params.clone().unwrap_or_else(|| vec![0.2, 0.2, 0.1, 0.3, 0.3, 0.4]);
                    let ov = match kappa {
                        Some(k) => RealizationOverrides {
                            higher_layers: vec![(1, vec![k[0]]), (2, vec![-k[1]])],
                        },
                        None => RealizationOverrides::default(),
                    };
                    (dice(DiceParams::from_slice(&p)?)?, ov)
                }
            };
            ok(GraphSpecFile::from_graph(&g, &ov))
        }
        Command::Albanese(s) => {
            let (g, ov) = read_spec(s)?;
            ok(albanese_json(&analyze(&g, &ov)?))
        }
        Command::Realize(s) => {
            let (g, ov) = read_spec(s)?;
            let w = analyze(&g, &ov)?;
            ok(json!({
                "offsets": w.phi.offsets().iter().map(|o| o.layers()).collect::<Vec<_>>(),
                "increments": w.phi.increments().iter().map(|o| o.layers()).collect::<Vec<_>>(),
                "residual": w.phi.residual(),
                "modified_harmonic": w.phi.is_modified_harmonic(),
            }))
        }
        Command::Beta(s) => {
            let (g, ov) = read_spec(s)?;
            ok(beta_json(&analyze(&g, &ov)?))
        }
        Command::SimulateWalk {
            spec,
            n,
            paths,
            horizon,
            stride,
        } => {
            let (g, ov) = read_spec(spec)?;
            let w = analyze(&g, &ov)?;
            let cfg = WalkConfig {
                horizon: *horizon,
                stride: *stride,
                ..WalkConfig::new(*n, *paths, cli.seed)
            };
            let ens = sample_walk(&g, &w.phi, &w.gamma, &cfg)?;
            let file = ensemble_csv(cli, "walk.csv", &ens)?;
            ok(json!({
                "seed": cli.seed,
                "n": n, "paths": paths, "horizon": horizon, "stride": stride,
                "records": ens.times().len(),
                "csv": file,
            }))
        }
        Command::SimulateDiffusion {
            spec,
            scheme,
            h,
            paths,
            horizon,
            stride,
            drift,
        } => {
            let (g, ov) = read_spec(spec)?;
            let w = analyze(&g, &ov)?;
            let kind = match drift {
                DriftArg::Beta => DriftKind::Beta,
                DriftArg::Rho => DriftKind::Rho,
            };
            let mut d = DiffusionSpec::for_walk(&w, kind)?;
            d.h = *h;
            d.paths = *paths;
            d.horizon = *horizon;
            d.stride = *stride;
            d.seed = cli.seed;
            let ens = match scheme {
                Scheme::Castell => castell_simulate(&d)?,
                Scheme::Euler => euler_simulate(&d)?,
            };
            let file = ensemble_csv(cli, "diffusion.csv", &ens)?;
            ok(json!({
                "seed": cli.seed,
                "scheme": format!("{scheme:?}").to_lowercase(),
                "h": h, "paths": paths, "horizon": horizon, "stride": stride,
                "drift": d.drift(),
                "csv": file,
            }))
        }
        Command::SemigroupDp {
            spec,
            n,
            max_states,
            castell_paths,
        } => {
            let (g, ov) = read_spec(spec)?;
            let w = analyze(&g, &ov)?;
            let opts = DpOptions {
                max_states: *max_states,
                ..DpOptions::default()
            };
            let values = n
                .iter()
                .map(|&k| semigroup_dp(&g, &w.phi, &w.gamma, k, &gaussian_bump, &opts))
                .collect::<Result<Vec<_>>>()?;
            let mut results = Vec::new();
            let mut pass = true;
            let mut target_json = Value::Null;
            if *castell_paths > 0 {
                let mut d = DiffusionSpec::for_walk(&w, DriftKind::Beta)?;
                d.paths = *castell_paths;
                d.seed = cli.seed;
                d.stride = d.steps();
                let target = ensemble_expectation(&castell_simulate(&d)?, &gaussian_bump);
                target_json = serde_json::to_value(target)?;
                let gaps: Vec<f64> = values.iter().map(|v| (v.value - target.value).abs()).collect();
                let monotone = gaps.windows(2).all(|p| p[1] < p[0]);
                for (v, gap) in values.iter().zip(&gaps) {
                    results.push(CriterionResult {
                        criterion: "5".into(),
                        name: format!("n={} |DP - E f(Y_1)|", v.n),
                        estimate: *gap,
                        target: 0.0,
                        ci: [0.0, 4.0 * target.se],
                        pass: *gap < 4.0 * target.se,
                    });
                }
                let last = results.last().is_none_or(|r| r.pass);
                pass = monotone && last;
            }
            let report = ExperimentReport {
                command: "semigroup-dp".into(),
                seed: cli.seed,
                config: json!({"n": n, "max_states": max_states, "castell_paths": castell_paths, "f": "exp(-|y|^2/2)"}),
                results,
                details: json!({"dp": values, "diffusion": target_json}),
                sidecars: Vec::new(),
                pass,
            };
            Ok(Outcome {
                value: serde_json::to_value(report)?,
                pass,
            })
        }
        Command::CltTest {
            spec,
            n,
            paths,
            times,
            diffusion_paths,
            perturb,
            gap_n,
            gap_paths,
        } => {
            let (g, ov) = read_spec(spec)?;
            let w = analyze(&g, &ov)?;
            let cfg = CltConfig {
                n: *n,
                paths: *paths,
                times: times.clone(),
                seed: cli.seed,
                diffusion_paths: *diffusion_paths,
                ..CltConfig::default()
            };
            let (results, details, pass, criterion) = match perturb {
                None => {
                    let rep = functional_clt(&g, &w.phi, &w, &cfg)?;
                    (
                        check_results("6", &rep, cfg.level),
                        serde_json::to_value(&rep)?,
                        rep.pass,
                        "6",
                    )
                }
                Some(scale) => {
                    let delta = random_offset_perturbation(&g, *scale, cli.seed);
                    let bent = w.phi.perturbed(&g, &w.gamma, &delta)?;
                    let rep = nonharmonic_test(&g, &bent, &w, &cfg, gap_n, *gap_paths)?;
                    let mut res = check_results("8", &rep.clt, cfg.level);
                    res.push(CriterionResult {
                        criterion: "8".into(),
                        name: "sup-gap decay exponent".into(),
                        estimate: rep.exponent,
                        target: -0.5,
                        ci: [f64::NEG_INFINITY, crate::verify::GAP_EXPONENT_BOUND],
                        pass: rep.exponent <= crate::verify::GAP_EXPONENT_BOUND,
                    });
                    (res, serde_json::to_value(&rep)?, rep.pass, "8")
                }
            };
            let report = ExperimentReport {
                command: "clt-test".into(),
                seed: cli.seed,
                config: serde_json::to_value(&cfg)?,
                results,
                details: json!({"criterion": criterion, "report": details}),
                sidecars: Vec::new(),
                pass,
            };
            Ok(Outcome {
                value: serde_json::to_value(report)?,
                pass,
            })
        }
        Command::MeasureChange {
            spec,
            clt,
            n,
            paths,
            ergodic_steps,
        } => {
            let (g, ov) = read_spec(spec)?;
            let w = analyze(&g, &ov)?;
            let twist = measure_change(&g, &w.phi, cli.seed)?;
            let mut results = vec![
                CriterionResult {
                    criterion: "9".into(),
                    name: "twisted first-layer drift residual".into(),
                    estimate: twist.residual,
                    target: 0.0,
                    ci: [0.0, crate::verify::TWIST_RESIDUAL_TOL],
                    pass: twist.residual <= crate::verify::TWIST_RESIDUAL_TOL,
                },
                CriterionResult {
                    criterion: "9".into(),
                    name: "Newton random-start spread".into(),
                    estimate: twist.start_spread,
                    target: 0.0,
                    ci: [0.0, crate::verify::START_AGREEMENT],
                    pass: twist.start_spread <= crate::verify::START_AGREEMENT,
                },
            ];
            let mut details = json!({
                "lambda_star": twist.lambda_star,
                "twisted_p": twist.twisted_p,
                "iterations": twist.iterations,
                "min_hessian_eigenvalue": twist.min_hessian_eigenvalue,
                "twisted": albanese_json(&twist.twisted),
                "twisted_spec": GraphSpecFile::from_graph(&twist.graph, &ov),
            });
            if *clt {
                let cfg = CltConfig {
                    n: *n,
                    paths: *paths,
                    seed: cli.seed,
                    ..CltConfig::default()
                };
                let rep = twisted_clt_test(&g, &w.phi, &cfg, *ergodic_steps)?;
                results.extend(check_results("9", &rep.clt, cfg.level));
                for (k, avg) in rep.beta_ergodic.iter().enumerate() {
                    results.push(CriterionResult {
                        criterion: "9".into(),
                        name: format!("beta[{k}] ergodic average vs direct sum"),
                        estimate: avg.trajectory,
                        target: rep.beta_direct[k],
                        ci: [avg.trajectory - 4.0 * avg.se, avg.trajectory + 4.0 * avg.se],
                        pass: (avg.trajectory - rep.beta_direct[k]).abs() <= 4.0 * avg.se,
                    });
                }
                details["clt"] = serde_json::to_value(&rep)?;
            }
            let pass = results.iter().all(|r| r.pass);
            let report = ExperimentReport {
                command: "measure-change".into(),
                seed: cli.seed,
                config: json!({"clt": clt, "n": n, "paths": paths, "ergodic_steps": ergodic_steps}),
                results,
                details,
                sidecars: Vec::new(),
                pass,
            };
            Ok(Outcome {
                value: serde_json::to_value(report)?,
                pass,
            })
        }
        Command::Signature { input, depth } => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(input)?;
            let mut points = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let row = rec
                    .iter()
                    .enumerate()
                    .map(|(j, f)| {
                        f.trim().parse::<f64>().map_err(|e| Error::Validation {
                            pointer: format!("/{i}/{j}"),
                            message: e.to_string(),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                points.push(row);
            }
            let sig = signature(&points, *depth)?;
            let d = sig.dim();
            let log = sig.log()?;
            let free = FreeNilpotent::new(d, *depth)?;
            let lie = free.tensor_to_lie(&log)?;
            ok(json!({
                "dimension": d,
                "depth": depth,
                "signature": (0..=*depth).map(|k| sig.level(k).to_vec()).collect::<Vec<_>>(),
                "log_signature": (0..=*depth).map(|k| log.level(k).to_vec()).collect::<Vec<_>>(),
                "lyndon_words": free.words(),
                "lyndon_coordinates": lie,
            }))
        }
    }
}
