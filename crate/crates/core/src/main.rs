//! `gazelab` — command-line harness for the eye-tracking privacy lab.
//!
//! Every subcommand is a pure function of (config file, dataset, seed) up
//! to the timestamps recorded in provenance and audit metadata. Flags
//! override config fields, which override defaults.
//!
//! Administrator credential: interactive commands (`phase2`, `resolve`)
//! prompt without echo. For tests and automation only, the
//! `GAZELAB_ADMIN_CREDENTIAL` environment variable supplies the credential
//! non-interactively; do not set it in normal operation.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use gazelab::config::ExperimentConfig;
use gazelab::error::{Error, Result};
use gazelab::experiments::{
    cmd_phase2, cmd_scenario1, cmd_scenario2, cmd_scenario3, cmd_scenario4, cmd_synth,
};
use gazelab::vault::{Vault, VaultKeys};

/// Environment variable recognized as the admin credential in tests and
/// automation. Interactive prompts are used when it is unset.
const ADMIN_CREDENTIAL_ENV: &str = "GAZELAB_ADMIN_CREDENTIAL";

#[derive(Parser)]
#[command(
    name = "gazelab",
    version,
    about = "Privacy attack and defense laboratory for eye-tracking data",
    long_about = "Runs the four re-identification attack scenarios, the \
                  dual-layer defense pipeline (identity vault + federated \
                  training), synthetic data generation, and report digests.\n\
                  \n\
                  Credential handling: `phase2` and `resolve` prompt for the \
                  admin passphrase without echo. For tests and automation \
                  only, the GAZELAB_ADMIN_CREDENTIAL environment variable \
                  supplies it non-interactively."
)]
struct Cli {
    /// Experiment config JSON; defaults are used when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the top-level random seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use this CSV dataset (default column schema) as the data source
    #[arg(long, global = true, value_name = "CSV")]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset as CSV
    Synth,
    /// Scenario 1: diagnosis classification, train levels 1-2, test level 3
    Scenario1,
    /// Scenario 2: student re-identification across the level split
    Scenario2,
    /// Scenario 3: student re-identification, stratified random split (+ gap report)
    Scenario3,
    /// Scenario 4: novel-student detection with all six assignment strategies
    Scenario4,
    /// Phase 2: identity vault + federated training on dummy labels
    Phase2,
    /// Resolve a dummy ID back to the true student ID (admin only)
    Resolve {
        /// Dummy name to resolve, e.g. "beast797"
        dummy: String,
        /// Epoch to resolve against; defaults to the vault's current epoch
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Print a digest of a previous run's artifacts in the output directory
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.apply_overrides(cli.seed, cli.out.clone(), cli.data.clone());
    config.validate()?;
    Ok(config)
}

/// Reads the admin credential: from `GAZELAB_ADMIN_CREDENTIAL` when set
/// (tests/automation), otherwise from an echo-free prompt.
fn admin_credential(prompt: &str) -> Result<String> {
    if let Ok(value) = std::env::var(ADMIN_CREDENTIAL_ENV) {
        return Ok(value);
    }
    rpassword::prompt_password(prompt)
        .map_err(|e| Error::Config(format!("could not read credential: {e}")))
}

fn run_resolve(config: &ExperimentConfig, dummy: &str, epoch: Option<u64>) -> Result<()> {
    let vault_path = config.vault_path();
    let mut vault = Vault::open(&vault_path)?;
    let passphrase = admin_credential("Vault admin passphrase: ")?;
    let keys = VaultKeys {
        ek1: vault.load_ek1()?,
        ek2: vault.derive_ek2(&passphrase)?,
    };
    let epoch = epoch.unwrap_or_else(|| vault.epoch());
    let outcome = vault.resolve_dummy(dummy, epoch, &keys, &passphrase);
    // The attempt is recorded in the audit log whether or not it succeeded.
    vault.save()?;
    let true_id = outcome?;
    println!("{true_id}");
    Ok(())
}

fn print_json_digest(label: &str, path: &Path, pointers: &[(&str, &str)]) {
    let Ok(text) = std::fs::read_to_string(path) else {
        return;
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else {
        return;
    };
    println!("{label}:");
    for (name, pointer) in pointers {
        if let Some(v) = value.pointer(pointer) {
            println!("  {name}: {v}");
        }
    }
}

/// Prints headline numbers from whichever command artifacts exist under
/// the output directory.
fn run_report(config: &ExperimentConfig) -> Result<()> {
    let root = &config.out_dir;
    if !root.exists() {
        return Err(Error::NotFound(format!(
            "output directory {} does not exist",
            root.display()
        )));
    }
    let mut printed = false;
    let synth = root.join("synth/provenance.json");
    if synth.exists() {
        print_json_digest(
            "synth",
            &synth,
            &[("records", "/dataset/n_records"), ("seed", "/seed")],
        );
        printed = true;
    }
    for scenario in ["scenario1", "scenario2", "scenario3"] {
        let dir = root.join(scenario);
        if !dir.exists() {
            continue;
        }
        for model in ["random_forest", "decision_tree"] {
            print_json_digest(
                &format!("{scenario}/{model}"),
                &dir.join(format!("report_{model}.json")),
                &[("test_accuracy", "/test/accuracy"), ("cv_mean", "/cv_mean")],
            );
        }
        if scenario == "scenario3" {
            print_json_digest(
                "scenario3/gap",
                &dir.join("gap_report.json"),
                &[
                    ("random_forest_gap", "/random_forest/gap"),
                    ("decision_tree_gap", "/decision_tree/gap"),
                ],
            );
        }
        printed = true;
    }
    let s4 = root.join("scenario4/summary.json");
    if s4.exists() {
        print_json_digest(
            "scenario4",
            &s4,
            &[
                ("held_out_id", "/held_out_id"),
                ("chosen_k", "/chosen_k"),
                ("tau", "/tau"),
                ("ensemble_new_fraction", "/new_id_fraction/ensemble"),
            ],
        );
        printed = true;
    }
    let p2 = root.join("phase2/report.json");
    if p2.exists() {
        print_json_digest(
            "phase2",
            &p2,
            &[
                ("final_test_accuracy", "/final_test_accuracy"),
                ("aggregation", "/aggregation"),
            ],
        );
        print_json_digest(
            "phase2/privacy_audit",
            &root.join("phase2/privacy_audit.json"),
            &[
                ("files_scanned", "/files_scanned"),
                ("matches", "/matches"),
            ],
        );
        printed = true;
    }
    if !printed {
        return Err(Error::NotFound(format!(
            "no run artifacts found under {}",
            root.display()
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            let out = cmd_synth(&config)?;
            println!(
                "wrote {} records to {}",
                out.n_records,
                out.csv_path.display()
            );
        }
        Command::Scenario1 => {
            let out = cmd_scenario1(&config)?;
            println!(
                "scenario1: random_forest accuracy {:.4}, decision_tree accuracy {:.4} -> {}",
                out.random_forest.test.accuracy,
                out.decision_tree.test.accuracy,
                out.out_dir.display()
            );
        }
        Command::Scenario2 => {
            let out = cmd_scenario2(&config)?;
            println!(
                "scenario2: random_forest accuracy {:.4}, decision_tree accuracy {:.4} -> {}",
                out.random_forest.test.accuracy,
                out.decision_tree.test.accuracy,
                out.out_dir.display()
            );
        }
        Command::Scenario3 => {
            let (out, gap) = cmd_scenario3(&config)?;
            println!(
                "scenario3: random_forest accuracy {:.4} (gap {:+.4}), decision_tree accuracy {:.4} (gap {:+.4}) -> {}",
                out.random_forest.test.accuracy,
                gap.random_forest.gap,
                out.decision_tree.test.accuracy,
                gap.decision_tree.gap,
                out.out_dir.display()
            );
        }
        Command::Scenario4 => {
            let out = cmd_scenario4(&config)?;
            println!(
                "scenario4: held out student {}, k={}, tau={:.4}, ensemble new-id fraction {:.2} -> {}",
                out.held_out_id,
                out.chosen_k,
                out.tau,
                out.new_id_fraction.get("ensemble").copied().unwrap_or(0.0),
                out.out_dir.display()
            );
        }
        Command::Phase2 => {
            let passphrase = admin_credential("New vault admin passphrase: ")?;
            if std::env::var(ADMIN_CREDENTIAL_ENV).is_err() {
                let confirm = admin_credential("Confirm passphrase: ")?;
                if confirm != passphrase {
                    return Err(Error::Config("passphrases do not match".into()));
                }
            }
            let out = cmd_phase2(&config, &passphrase)?;
            println!(
                "phase2: final test accuracy {:.4} over {} dummy labels, privacy audit {} -> {}",
                out.final_test_accuracy,
                out.n_dummies,
                if out.audit_passed { "passed" } else { "FAILED" },
                out.out_dir.display()
            );
        }
        Command::Resolve { dummy, epoch } => run_resolve(&config, dummy, *epoch)?,
        Command::Report => run_report(&config)?,
    }
    Ok(())
}

/// Restores the default SIGPIPE disposition so that piping output into a
/// pager that exits early (`gazelab report | head`) terminates the process
/// quietly, unix-style, instead of panicking on the next print.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
