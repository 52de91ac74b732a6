//! The hyper-parameter sweep: 40-ish seeds for every combination of the
//! moderation factor K, schedule decay d, and exploration exponent xi,
//! emitting the heat-map data behind the optimal-policy-rate analysis.

use std::path::Path;

use clap::Args;
use rayon::prelude::*;

use marl_core::config::ExperimentConfig;
use marl_core::harness::{self, PolicyClass};

use crate::{build_config, user, CliError, CommonOverrides};

pub const GRID_K: [f64; 3] = [1.0, 2.0, 3.0];
pub const GRID_D: [f64; 3] = [0.9, 0.95, 0.99];
pub const GRID_XI: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: CommonOverrides,
    /// Seeds per grid cell.
    #[arg(long, default_value_t = 2)]
    pub runs: usize,
    /// Parallel run workers.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Skip cells whose run directories already hold a summary.
    #[arg(long)]
    pub resume: bool,
}

struct Job {
    cell: usize,
    config: ExperimentConfig,
}

enum JobOutcome {
    Done(PolicyClass),
    Skipped(PolicyClass),
    Failed(String),
}

pub fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = build_config(&args.overrides)?;
    if args.runs == 0 {
        return Err(user("--runs must be at least 1"));
    }
    let cells: Vec<(f64, f64, f64)> = GRID_K
        .iter()
        .flat_map(|&k| {
            GRID_D
                .iter()
                .flat_map(move |&d| GRID_XI.iter().map(move |&xi| (k, d, xi)))
        })
        .collect();

    let mut jobs = Vec::new();
    for (cell, &(k, d, xi)) in cells.iter().enumerate() {
        for r in 0..args.runs {
            let mut config = base.clone();
            config
                .apply("agent", "k", &k.to_string())
                .and_then(|_| config.apply("agent", "d", &d.to_string()))
                .and_then(|_| config.apply("agent", "xi", &xi.to_string()))
                .map_err(user)?;
            let run_index = (cell * args.runs + r) as u64;
            config.seed = base.seed + run_index;
            jobs.push(Job { cell, config });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| user(format!("thread pool: {e}")))?;
    let resume = args.resume;
    let outcomes: Vec<(usize, JobOutcome)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| (job.cell, run_one(&job.config, resume)))
            .collect()
    });

    let mut optimal = vec![0usize; cells.len()];
    let mut failures = vec![0usize; cells.len()];
    for (cell, outcome) in &outcomes {
        match outcome {
            JobOutcome::Done(class) | JobOutcome::Skipped(class) => {
                if *class == PolicyClass::Optimal {
                    optimal[*cell] += 1;
                }
            }
            JobOutcome::Failed(message) => {
                eprintln!("run failed: {message}");
                failures[*cell] += 1;
            }
        }
    }

    let out_dir = Path::new(&base.output_dir);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| user(format!("output {}: {e}", out_dir.display())))?;
    let mut heatmap = String::from("K,d,xi,optimal_rate\n");
    for (cell, &(k, d, xi)) in cells.iter().enumerate() {
        let rate = optimal[cell] as f64 / args.runs as f64;
        heatmap.push_str(&format!("{k},{d},{xi},{rate}\n"));
    }
    let heatmap_path = out_dir.join("heatmap.csv");
    std::fs::write(&heatmap_path, heatmap)
        .map_err(|e| user(format!("write {}: {e}", heatmap_path.display())))?;

    let failed_total: usize = failures.iter().sum();
    if failed_total > 0 {
        let mut report = String::from("K,d,xi,failures\n");
        for (cell, &(k, d, xi)) in cells.iter().enumerate() {
            if failures[cell] > 0 {
                report.push_str(&format!("{k},{d},{xi},{}\n", failures[cell]));
            }
        }
        std::fs::write(out_dir.join("failures.csv"), report)
            .map_err(|e| user(format!("write failures.csv: {e}")))?;
    }
    let skipped = outcomes
        .iter()
        .filter(|(_, o)| matches!(o, JobOutcome::Skipped(_)))
        .count();
    println!(
        "sweep complete: {} cells x {} runs, {} skipped, {} failed -> {}",
        cells.len(),
        args.runs,
        skipped,
        failed_total,
        heatmap_path.display()
    );
    Ok(())
}

fn run_one(config: &ExperimentConfig, resume: bool) -> JobOutcome {
    let dir = Path::new(&config.output_dir).join(config.run_id());
    if resume {
        if let Some(class) = read_summary_policy(&dir) {
            println!("skip {} (complete)", config.run_id());
            return JobOutcome::Skipped(class);
        }
    }
    match harness::execute_run(config) {
        Ok((_, result)) => {
            println!(
                "run {} seed={} -> {}",
                config.run_id(),
                config.seed,
                result.converged_policy.tag()
            );
            JobOutcome::Done(result.converged_policy)
        }
        Err(e) => JobOutcome::Failed(format!("{} seed={}: {e}", config.run_id(), config.seed)),
    }
}

/// Reads the converged-policy column back from an existing summary file.
fn read_summary_policy(dir: &Path) -> Option<PolicyClass> {
    let text = std::fs::read_to_string(dir.join("summary.csv")).ok()?;
    let mut lines = text.lines();
    if lines.next()? != harness::SUMMARY_CSV_HEADER {
        return None;
    }
    let fields: Vec<&str> = lines.next()?.split(',').collect();
    match *fields.get(5)? {
        "optimal" => Some(PolicyClass::Optimal),
        "suboptimal" => Some(PolicyClass::Suboptimal),
        "none" => Some(PolicyClass::None),
        _ => None,
    }
}
