//! Scenario runner behind the `comrades` binary.
//!
//! Both commands return a process exit status: 0 on success, 2 when the
//! scenario file is missing, malformed or invalid, 1 on any other failure.

use std::fs;
use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use comrades_core::{run, MetricsReport, Scenario};
use comrades_core::sim::ScenarioError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SummaryFormat {
    #[default]
    Table,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInvocation {
    pub scenario_path: PathBuf,
    pub seed_override: Option<u64>,
    pub sweep: Option<RangeInclusive<u64>>,
    pub output_path: PathBuf,
    pub summary_format: SummaryFormat,
}

impl RunInvocation {
    pub fn new(scenario_path: impl Into<PathBuf>, output_path: impl Into<PathBuf>) -> Self {
        Self {
            scenario_path: scenario_path.into(),
            seed_override: None,
            sweep: None,
            output_path: output_path.into(),
            summary_format: SummaryFormat::Table,
        }
    }
}

/// Parses `A..B` or `A..=B`; both ends are included.
pub fn parse_sweep(text: &str) -> Result<RangeInclusive<u64>, String> {
    let (a, b) = text
        .split_once("..=")
        .or_else(|| text.split_once(".."))
        .ok_or_else(|| format!("expected A..B, got {text:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("sweep start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("sweep end {b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty sweep {a}..{b}"));
    }
    Ok(a..=b)
}

/// Where the metrics stream for `seed` goes during a sweep:
/// `out.ndjson` becomes `out.seed-7.ndjson`.
pub fn per_seed_path(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.seed-{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed-{seed}"),
    };
    base.with_file_name(name)
}

fn load(path: &Path, err: &mut dyn Write) -> Result<Scenario, i32> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            return Err(EXIT_INVALID);
        }
    };
    Scenario::from_json(&text).map_err(|e| {
        report_error(path, &e, err);
        exit_code(&e)
    })
}

fn exit_code(e: &ScenarioError) -> i32 {
    match e {
        ScenarioError::Parse { .. } | ScenarioError::Invalid(_) => EXIT_INVALID,
        ScenarioError::Runtime(_) => EXIT_FAILURE,
    }
}

fn report_error(path: &Path, e: &ScenarioError, err: &mut dyn Write) {
    match e {
        ScenarioError::Parse { line, column, message } => {
            let _ = writeln!(err, "{}:{line}:{column}: {message}", path.display());
        }
        _ => {
            for d in e.diagnostics() {
                let _ = writeln!(err, "{}: {d}", path.display());
            }
        }
    }
}

pub fn cmd_validate(scenario_path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let scenario = match load(scenario_path, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Ok(warnings) = scenario.validate() {
        for w in warnings {
            let _ = writeln!(err, "warning: {w}");
        }
    }
    match writeln!(out, "{}", scenario.to_json_pretty()) {
        Ok(()) => EXIT_OK,
        Err(_) => EXIT_FAILURE,
    }
}

pub fn cmd_run(inv: &RunInvocation, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let scenario = match load(&inv.scenario_path, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (seeds, sweeping): (Vec<u64>, bool) = match (&inv.sweep, inv.seed_override) {
        (Some(range), _) => (range.clone().collect(), true),
        (None, Some(seed)) => (vec![seed], false),
        (None, None) => (vec![scenario.seed], false),
    };
    if seeds.is_empty() {
        let _ = writeln!(err, "error: empty seed sweep");
        return EXIT_INVALID;
    }

    let results = run_seeds(&scenario, &seeds);
    let mut code = EXIT_OK;
    let mut reports = Vec::new();
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(report) => {
                let path = if sweeping { per_seed_path(&inv.output_path, *seed) } else { inv.output_path.clone() };
                if let Err(e) = write_stream(&report, &path) {
                    let _ = writeln!(err, "error: writing {}: {e}", path.display());
                    code = EXIT_FAILURE;
                }
                log::info!("seed {seed}: metrics written to {}", path.display());
                reports.push(report);
            }
            Err(e) => {
                let _ = writeln!(err, "seed {seed}: {e}");
                code = code.max(exit_code(&e));
            }
        }
    }

    let printed = match inv.summary_format {
        SummaryFormat::JsonLines => reports.iter().try_for_each(|r| writeln!(out, "{}", r.summary_json())),
        SummaryFormat::Table if sweeping => write!(out, "{}", sweep_table(&reports)),
        SummaryFormat::Table => reports.iter().try_for_each(|r| write!(out, "{}", r.summary_table())),
    };
    if printed.is_err() && code == EXIT_OK {
        code = EXIT_FAILURE;
    }
    code
}

fn write_stream(report: &MetricsReport, path: &Path) -> io::Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    report.write_stream(&mut file)?;
    file.flush()
}

/// Runs every seed, spreading them over the available cores. Results come
/// back in the order of `seeds`.
fn run_seeds(scenario: &Scenario, seeds: &[u64]) -> Vec<Result<MetricsReport, ScenarioError>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<MetricsReport, ScenarioError>>>> = Mutex::new(vec![None; seeds.len()]);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                log::debug!("running seed {seed}");
                let result = run(&Scenario { seed, ..scenario.clone() });
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

fn sweep_table(reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:>8} {:>10} {:>9} {:>12} {:>13} {:>12} {:>12}\n",
        "seed", "campaigns", "launched", "convergence", "traffic cost", "lost revenue", "adv. joins"
    );
    for r in reports {
        let convergence = r.urls.iter().map(|u| u.convergence).fold(0.0, f64::max);
        s.push_str(&format!(
            "{:>8} {:>10} {:>9} {:>12.3} {:>13.6} {:>12.2} {:>12}\n",
            r.seed,
            r.campaigns.len(),
            r.launched_campaigns(),
            convergence,
            r.total_traffic_cost(),
            r.total_lost_revenue(),
            r.attack.honest_joins_on_adversarial_starts
        ));
    }
    s
}
