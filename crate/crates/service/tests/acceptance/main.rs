//! Acceptance run: one line per criterion, `PASS` or `FAIL`, with the time
//! taken against its budget. Exits non-zero when anything fails.
//!
//! `cargo test -p vault-service --test acceptance -- <filter>` runs only the
//! criteria whose name contains `<filter>`.

mod actions;
mod e2e;
mod kde;
mod oracle;
mod selection;
mod serialization;
mod tsne;
mod wire;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

pub type Outcome = Result<String, String>;

/// Fails with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const fn criterion(name: &'static str, secs: u64, run: fn() -> Outcome) -> Criterion {
    Criterion {
        name,
        limit: Duration::from_secs(secs),
        run,
    }
}

const CRITERIA: &[Criterion] = &[
    criterion("selection-sharing", 10, selection::chains),
    criterion("group-sync", 5, selection::groups),
    criterion("event-bus", 10, events::schedules),
    criterion("action-sync", 10, actions::fixed_point),
    criterion("serialization", 60, serialization::round_trips),
    criterion("pca", 10, pca::against_eigen_oracle),
    criterion("tsne", 120, tsne::correctness),
    criterion("progressive-updates", 300, progressive::updates),
    criterion("kde-meanshift", 60, kde::density_and_modes),
    criterion("e2e-cli", 300, e2e::headless_pipeline),
    criterion("wire-protocol", 30, wire::protocol),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let took = start.elapsed();
        let verdict = match result {
            Ok(detail) if took <= c.limit => Ok(detail),
            Ok(detail) => Err(format!("{detail}; over budget")),
            Err(e) => Err(e),
        };
        let timing = format!("{:.1}s/{}s", took.as_secs_f64(), c.limit.as_secs());
        match verdict {
            Ok(detail) => println!("PASS {:<20} {timing:>12}  {detail}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {:<20} {timing:>12}  {e}", c.name);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
