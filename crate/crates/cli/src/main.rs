//! Command-line front end: run simulations, re-run the separation
//! analysis on stored trajectories, check model assumptions, and print
//! manufactured-solution convergence tables.
//!
//! Failures go to stderr as a single JSON object so wrapping scripts can
//! parse them; normal output is human-readable.

use anyhow::{bail, Context};
use chb_core::brinkman::ViscousForm;
use chb_core::degiorgi::{self, DeGiorgiParams, DgConstants};
use chb_core::error::ChbError;
use chb_core::material::ValidationReport;
use chb_core::{config::SimConfig, io, mms, sim};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

const PRESET_NAMES: &str = "constant, spinodal, stripe";

#[derive(Parser)]
#[command(
    name = "chb",
    version,
    about = "Nonlocal Cahn-Hilliard-Brinkman simulator and separation analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its artifact directory.
    Run {
        /// Path to a TOML config, or a preset name (constant, spinodal, stripe).
        config: String,
        /// Output directory for the run artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run the separation analysis over a stored run directory.
    Certify {
        /// Run directory written by `chb run`.
        dir: PathBuf,
        /// Final analysis time.
        #[arg(long)]
        t_end: f64,
        /// Analysis window length (the final time must exceed three of these).
        #[arg(long)]
        tau: f64,
        /// Fixed separation target in (0, 1/4).
        #[arg(long, conflicts_with = "scan")]
        delta: Option<f64>,
        /// Scan for the largest certifiable target instead.
        #[arg(long)]
        scan: bool,
        /// Depth of the level ladder.
        #[arg(long, default_value_t = 5)]
        n_max: usize,
    },
    /// Check the structural assumptions for a config and print the report.
    Validate {
        /// Path to a TOML config, or a preset name.
        config: String,
    },
    /// Print a manufactured-solution convergence table.
    Mms {
        /// Which study: "flow" or "phase".
        study: String,
    },
}

fn load_config(arg: &str) -> anyhow::Result<SimConfig> {
    if Path::new(arg).is_file() {
        let text = std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
        return SimConfig::from_toml(&text).with_context(|| format!("parsing {arg}"));
    }
    SimConfig::preset(arg).ok_or_else(|| {
        anyhow::Error::new(ChbError::Config(format!(
            "{arg:?} is neither a config file nor a preset ({PRESET_NAMES})"
        )))
    })
}

fn validated_report(cfg: &SimConfig) -> anyhow::Result<ValidationReport> {
    let g = cfg.build_grid()?;
    let model = cfg.build_model()?;
    let kernel = cfg.build_kernel(g)?;
    Ok(model.validate_assumptions(kernel.a_min(), kernel.a_max(), sim::VALIDATION_SCAN_POINTS))
}

fn cmd_run(config: &str, out: &Path, seed: Option<u64>) -> anyhow::Result<i32> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let res = sim::run(&cfg)?;
    io::emit(out, &cfg, &res.trajectory, res.certificate.as_ref(), res.scan.as_ref())?;

    let recs = res.trajectory.records();
    let last = recs.last().expect("a run always records its initial state");
    println!("accepted steps   {}", res.accepted_steps);
    println!("rejected steps   {}", res.rejected_steps);
    println!("final time       {}", last.t);
    println!("mass             {}", last.mass);
    println!("separation gap   {}", last.sep_gap);
    if let Some(scan) = &res.scan {
        match scan.window {
            Some((lo, hi)) => println!("delta scan       best {} (window {lo}..{hi})", scan.delta),
            None => println!("delta scan       best {} (no fully-qualified window)", scan.delta),
        }
    }
    if let Some(cert) = &res.certificate {
        let verdict = if cert.passed { "certified" } else { "not certified" };
        println!("separation       {verdict} (delta = {}, route = {})", cert.delta, cert.route);
    }
    println!("artifacts        {}", out.display());
    Ok(0)
}

fn cmd_certify(
    dir: &Path,
    t_end: f64,
    tau: f64,
    delta: Option<f64>,
    scan: bool,
    n_max: usize,
) -> anyhow::Result<i32> {
    let (cfg, traj) = io::load_trajectory(dir)?;
    let g = cfg.build_grid()?;
    let mut model = cfg.build_model()?;
    let kernel = cfg.build_kernel(g)?;
    let report = model.validate_assumptions(kernel.a_min(), kernel.a_max(), sim::VALIDATION_SCAN_POINTS);
    if !report.passed() {
        bail!("stored config fails its structural assumptions:\n{}", report.summary());
    }
    model.apply_validation(&report)?;
    let constants = DgConstants {
        k_bound: model.entropy_k_bound(),
        lambda_ma_sup: report.lambda_ma_sup,
        m_sup: report.m_sup,
        grad_a_inf: kernel.grad_a_inf(),
        grad_j_l1: kernel.grad_l1_norm(),
        tau_tilde: tau,
        omega_area: g.lx() * g.ly(),
    };

    let cert = if let Some(d) = delta {
        let params = DeGiorgiParams::new(t_end, tau, d, n_max)?;
        degiorgi::certify(&traj, &params, &model, &constants)?
    } else if scan {
        let res = degiorgi::scan_delta(&traj, t_end, tau, n_max, &model, &constants)?;
        let mut text = serde_json::to_string_pretty(&res)?;
        text.push('\n');
        std::fs::write(dir.join("scan.json"), text)?;
        res.certificate
    } else {
        bail!("pass either --delta <value> or --scan");
    };

    io::write_certificate(&dir.join("certificate.json"), &cert)?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    Ok(if cert.passed { 0 } else { 3 })
}

fn cmd_validate(config: &str) -> anyhow::Result<i32> {
    let cfg = load_config(config)?;
    let report = validated_report(&cfg)?;
    println!("{}", report.summary());
    Ok(if report.passed() { 0 } else { 2 })
}

fn cmd_mms(study: &str) -> anyhow::Result<i32> {
    match study {
        "flow" => {
            let reports = mms::flow_convergence_study(&[16, 32, 64, 128], ViscousForm::DivGrad)?;
            println!("flow study (manufactured vortex, div-grad form)");
            println!("{:>6} {:>13} {:>13} {:>8} {:>13}", "n", "u_inf", "u_l2", "rate", "pi_l2");
            let mut prev: Option<f64> = None;
            for r in &reports {
                let rate = prev
                    .map(|p| format!("{:8.2}", (p / r.u_l2_err).log2()))
                    .unwrap_or_else(|| format!("{:>8}", "-"));
                println!(
                    "{:>6} {:>13.4e} {:>13.4e} {} {:>13.4e}",
                    r.n, r.u_inf_err, r.u_l2_err, rate, r.pi_l2_err
                );
                prev = Some(r.u_l2_err);
            }
        }
        "phase" => {
            let reports = mms::ch_convergence_study(&[16, 32, 64])?;
            println!("phase study (manufactured decaying mode)");
            println!("{:>6} {:>10} {:>13} {:>8}", "n", "steps", "linf", "rate");
            let mut prev: Option<f64> = None;
            for r in &reports {
                let rate = prev
                    .map(|p| format!("{:8.2}", (p / r.linf_err).log2()))
                    .unwrap_or_else(|| format!("{:>8}", "-"));
                println!("{:>6} {:>10} {:>13.4e} {}", r.n, r.steps, r.linf_err, rate);
                prev = Some(r.linf_err);
            }
        }
        other => bail!("unknown study {other:?}; expected \"flow\" or \"phase\""),
    }
    Ok(0)
}

/// Stable tag for the error JSON, mirroring the library error variants.
fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<ChbError>() {
        Some(ChbError::Config(_)) => "config",
        Some(ChbError::Domain(_)) => "domain",
        Some(ChbError::Assumption(_)) => "assumption",
        Some(ChbError::Solver(_)) => "solver",
        Some(ChbError::StepRejected(_)) => "step_rejected",
        Some(ChbError::Aborted(_)) => "aborted",
        Some(ChbError::Certification(_)) => "certification",
        Some(ChbError::Window(_)) => "window",
        Some(ChbError::Coverage(_)) => "coverage",
        Some(ChbError::Io(_)) => "io",
        None => "other",
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Certify { dir, t_end, tau, delta, scan, n_max } => {
            cmd_certify(&dir, t_end, tau, delta, scan, n_max)
        }
        Command::Validate { config } => cmd_validate(&config),
        Command::Mms { study } => cmd_mms(&study),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            let payload = serde_json::json!({
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}
