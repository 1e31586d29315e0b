use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use diarize_core::selfcheck::{format_table, run_selfcheck, Fault, SelfCheckConfig};

use crate::config::output_dir;
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::ManifestBuilder;

#[derive(clap::Args)]
pub struct Args {
    /// Break one production path to show the harness catches it.
    #[arg(long, value_parser = |s: &str| s.parse::<Fault>().map_err(|e| e.to_string()))]
    inject_fault: Option<Fault>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("selfcheck");
    let cfg = SelfCheckConfig {
        seed: a.seed,
        fault: a.inject_fault,
        ..SelfCheckConfig::default()
    };
    let results = run_selfcheck(&cfg);
    print!("{}", format_table(&results));

    let out = output_dir(a.out, root, "selfcheck");
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    m.seed(a.seed);
    m.config(&json!({
        "seed": cfg.seed,
        "pit_instances": cfg.pit_instances,
        "meetings": cfg.meetings,
        "der_cases": cfg.der_cases,
        "rttm_cases": cfg.rttm_cases,
        "inject_fault": cfg.fault.map(|f| f.name()),
        "passed": results.iter().filter(|r| r.passed).map(|r| r.name).collect::<Vec<_>>(),
    }))?;
    m.finish(&out)?;

    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}
