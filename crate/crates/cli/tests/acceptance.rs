//! Runs every acceptance criterion and prints one pass/fail line each.

use std::process::ExitCode;

use mmfg_cli::accept::{report_line, run_all};
use mmfg_cli::config::Settings;

fn main() -> ExitCode {
    let out = std::env::temp_dir().join(format!("mmfg-acceptance-{}", std::process::id()));
    let mut s = Settings::default();
    s.set("out", &out.display().to_string()).expect("out is a valid key");
    let (manifest, path) = run_all(&s, |c| println!("{}", report_line(c))).expect("manifest written");
    let passed = manifest.criteria.iter().filter(|c| c.pass).count();
    println!("acceptance: {passed}/{} passed; manifest {}", manifest.criteria.len(), path.display());
    if manifest.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
