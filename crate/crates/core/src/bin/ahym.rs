//! Scenario-driven batch runner for the affine Hermitian-Yang-Mills flow.
//!
//! Exit codes: 0 ok, 1 usage/config error, 2 numeric failure, 3 invariant
//! failure.

use ahym_core::flow::Termination;
use ahym_core::scenario::{
    SCENARIO_PRESETS, Scenario, dump_schema_text, run_scenario, scenario_preset,
};
use ahym_core::verify::{SUITES, run_suite};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ahym", about = "Affine Hermitian-Yang-Mills heat flow simulator", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario from a TOML file (or `preset:<name>`)
    Run {
        /// path to a scenario file, or `preset:<name>`
        scenario: String,
        /// directory for CSV series, JSON summary and field dumps
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a named invariant battery and print per-check pass/fail lines
    Verify {
        /// one of: gauduchon-laws, flow-monotonicity, key-identity,
        /// gauge-equivalence, chern-weil, or `all`
        suite: String,
    },
    /// List the built-in scenario, metric and bundle presets
    Presets,
    /// Print the byte-exact field-dump layout and the CSV schema
    DumpSchema,
}

fn load_scenario(spec: &str) -> Result<Scenario, ahym_core::scenario::ScenarioError> {
    if let Some(name) = spec.strip_prefix("preset:") {
        scenario_preset(name)
    } else {
        Scenario::from_file(std::path::Path::new(spec))
    }
}

fn cmd_run(spec: &str, out_dir: &PathBuf) -> i32 {
    let scn = match load_scenario(spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }
    match run_scenario(&scn, out_dir) {
        Ok(outcome) => {
            if let Some(flow) = &outcome.flow {
                let reason = match flow.termination {
                    Termination::Converged => "converged",
                    Termination::TMax => "t-max",
                    Termination::BlowupGuard => "blowup-guard",
                    Termination::DivergenceDetected => "divergence-detected",
                };
                println!(
                    "flow: {reason} at t = {:.6} ({} steps, dt = {:.3e}), sup|Phi| = {:.3e}, lambda = {:.6e}",
                    flow.final_t, flow.steps, flow.dt, flow.final_sup_phi, flow.lambda
                );
            }
            if let Some(st) = &outcome.stability {
                println!(
                    "stability: {:?} (mu(E) = {:+.6e}, margin = {:?})",
                    st.verdict, st.mu_e, st.margin
                );
            }
            if let Some(d) = &outcome.destabilizer {
                println!(
                    "destabilizer: levels {:?}, gamma = {:+.3e}, best candidate rank {}",
                    d.mu, d.gamma, d.candidates[d.best].rank
                );
            }
            if let Some(pairs) = &outcome.exhaustion_pairs {
                for ((a, b), sup) in pairs {
                    println!("exhaustion: sup_Omega sigma(H_{a}, H_{b}) = {sup:.6e}");
                }
                if let Some(cert) = outcome.exhaustion_certificate {
                    println!("exhaustion: sup |Lap phi_exh| = {cert:.6}");
                }
            }
            if let Some(ids) = &outcome.identities {
                println!(
                    "identities: key residual {:.3e}, gauge norm {:.3e}, gauge deriv {:.3e}",
                    ids.key_identity_residual, ids.gauge_norm_defect, ids.gauge_deriv_defect
                );
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_verify(which: &str) -> i32 {
    let suites: Vec<&str> = if which == "all" { SUITES.to_vec() } else { vec![which] };
    let mut any_fail = false;
    for name in suites {
        match run_suite(name) {
            Ok(rep) => {
                for c in &rep.checks {
                    println!(
                        "[{}] {}::{}  measured = {:.6e}  threshold = {:.3e}  {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        rep.suite,
                        c.name,
                        c.measured,
                        c.threshold,
                        c.detail
                    );
                    any_fail |= !c.pass;
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    if any_fail { 3 } else { 0 }
}

fn cmd_presets() {
    println!("scenario presets (run with `ahym run preset:<name>`):");
    for (name, text) in SCENARIO_PRESETS {
        let first = text.lines().find(|l| l.starts_with('#')).unwrap_or(&"#");
        println!("  {name:<20} {}", first.trim_start_matches('#').trim());
    }
    println!("\nmetric presets (scenario [metric] preset = ...):");
    for (name, what) in [
        ("flat", "Euclidean metric, any dimension"),
        ("conformal:sech2", "g = sech^2(x) dx^2 on a 1-D chart (finite-volume line)"),
        ("conformal:sin", "g = exp(amp sin(2 pi x^1/L)) delta"),
        ("gauduchon:cross2d", "exactly Gauduchon non-conformal 2-D family"),
        ("gauduchon:aniso2d", "continuum-Gauduchon anisotropic 2-D family"),
    ] {
        println!("  {name:<20} {what}");
    }
    println!("\nbundle presets (scenario [bundle] preset = ...):");
    for (name, what) in [
        ("trivial", "rank 2, trivial holonomy, zero Higgs field"),
        ("trivial1", "rank 1, trivial holonomy, zero Higgs field"),
        ("unipotent2", "rank 2, holonomy [[1,1],[0,1]], zero Higgs field"),
        ("diag-higgs2", "rank 2, theta_1 = diag(1,-1)"),
        ("nilpotent-higgs2", "rank 2, theta_1 = [[0,1],[0,0]]"),
    ] {
        println!("  {name:<20} {what}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { scenario, out_dir } => cmd_run(&scenario, &out_dir),
        Cmd::Verify { suite } => cmd_verify(&suite),
        Cmd::Presets => {
            cmd_presets();
            0
        }
        Cmd::DumpSchema => {
            print!("{}", dump_schema_text());
            0
        }
    };
    ExitCode::from(code as u8)
}
