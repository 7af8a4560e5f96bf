//! Command-line front end: run scenarios, sweep seeds, query the
//! exhaustive oracle, and reproduce the canonical experiment protocols.

use clap::{Parser, Subcommand};
use femtoq::error::{Error, Result};
use femtoq::netmodel::{ChannelGains, PowerAllocation};
use femtoq::oracle::{exhaustive_optimal, greedy_policy_value, DEFAULT_ORACLE_CAP};
use femtoq::scenario::{
    parse_scenario, preset_scenarios, scenario_to_string, Preset, Scenario,
};
use femtoq::simulator::{
    check_convergence, reconvergence_time, Algorithm, Simulation,
};
use femtoq::trace::{
    fmt_sig, line_chart_svg, trace_to_csv, write_svg, OracleComparison, RunSummary,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "femtoq",
    about = "Cognitive femtocell power allocation via tabular Q-learning",
    version
)]
struct Cli {
    /// Output directory (defaults to $FEMTOQ_OUT, then the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment from a scenario file.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Emit SVG charts of macro and aggregate femto capacity.
        #[arg(long)]
        plot: bool,
    },
    /// Run one replication per seed and write an aggregate table.
    Sweep {
        scenario: PathBuf,
        /// Inclusive seed range, e.g. `1..10`.
        #[arg(long)]
        seeds: String,
        /// Maximum concurrent replications (0 = hardware default).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        plot: bool,
    },
    /// Exhaustive search only: the constrained optimum for the scenario's
    /// topology and target.
    Oracle {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Canonical experiment protocols at desk scale (fig1a, fig2, fig3).
    Preset {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plot: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("FEMTOQ_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    match dispatch(cli.command, &out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    match command {
        Command::Run { scenario, seed, plot } => {
            let (name, mut sc) = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                sc.config.seed = seed;
            }
            execute_run(&name, &sc, out_dir, plot)?;
            Ok(())
        }
        Command::Sweep { scenario, seeds, jobs, plot } => {
            let (name, sc) = load_scenario(&scenario)?;
            let seeds = parse_seed_range(&seeds)?;
            sweep(&name, &sc, &seeds, jobs, out_dir, plot)
        }
        Command::Oracle { scenario, seed } => {
            let (name, mut sc) = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                sc.config.seed = seed;
            }
            oracle_only(&name, &sc, out_dir)
        }
        Command::Preset { name, seed, plot } => {
            let preset: Preset = name.parse()?;
            let seed = seed.unwrap_or(1);
            for (scenario_name, text) in preset_scenarios(preset, seed)? {
                let path = out_dir.join(format!("{scenario_name}.scenario"));
                std::fs::write(&path, &text)?;
                let sc = parse_scenario(&text)?;
                execute_run(&scenario_name, &sc, out_dir, plot)?;
            }
            Ok(())
        }
    }
}

fn load_scenario(path: &Path) -> Result<(String, Scenario)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    Ok((name, parse_scenario(&text)?))
}

fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("seed range must look like `1..10`, got `{text}`")))?;
    let lo: u64 = a
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad seed `{a}`")))?;
    let hi: u64 = b
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad seed `{b}`")))?;
    if hi < lo {
        return Err(Error::Config("seed range must be ascending".into()));
    }
    Ok((lo..=hi).collect())
}

/// Run one scenario, write its trace, summary, and optional charts, and
/// return the summary for aggregation.
fn execute_run(name: &str, scenario: &Scenario, out_dir: &Path, plot: bool) -> Result<RunSummary> {
    let started = Instant::now();
    let mut sim = Simulation::new(scenario.config.clone(), scenario.schedule.clone())?;
    sim.run_to_end()?;
    let oracle_cmp = if scenario.oracle_compare {
        Some(compare_to_oracle(&sim)?)
    } else {
        None
    };
    let summary = summarize(scenario, &sim, oracle_cmp, started.elapsed().as_secs_f64());

    let stem = format!("{name}_seed{}", scenario.config.seed);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, trace_to_csv(sim.trace(), scenario.config.subcarriers))
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", csv_path.display())))?;
    std::fs::write(out_dir.join(format!("{stem}_summary.txt")), summary.render())?;

    if plot {
        write_charts(&stem, scenario, &sim, out_dir)?;
    }
    println!(
        "{stem}: {} records, converged = {}, mean femto capacity = {} bits/s/Hz",
        sim.trace().len(),
        summary.final_converged,
        fmt_sig(summary.final_window_mean_agg_femto, 6)
    );
    Ok(summary)
}

fn compare_to_oracle(sim: &Simulation) -> Result<OracleComparison> {
    let config = sim.config();
    let macro_w =
        PowerAllocation::equal_split_macro(config.p_max_macro_dbm, config.subcarriers);
    let oracle = exhaustive_optimal(
        sim.gains(),
        &macro_w,
        &config.vector_levels_dbm,
        config.target_capacity,
        config.convergence_band,
        config.p_max_femto_dbm,
        config.noise_w,
        DEFAULT_ORACLE_CAP,
    )?;
    let greedy = greedy_policy_value(sim, config.convergence_band)?;
    Ok(OracleComparison {
        oracle,
        greedy_total_femto: greedy.report.total_femto,
        greedy_macro_aggregate: greedy.report.macro_aggregate,
        greedy_in_band: greedy.in_band,
    })
}

fn summarize(
    scenario: &Scenario,
    sim: &Simulation,
    oracle: Option<OracleComparison>,
    wall_time_secs: f64,
) -> RunSummary {
    let trace = sim.trace();
    let config = sim.config();
    let window = scenario.summary_window.min(trace.len()).max(1);
    let final_converged = check_convergence(
        trace,
        config.target_capacity,
        config.convergence_band,
        window,
    );
    let tail = &trace[trace.len().saturating_sub(window)..];
    let final_window_mean_agg_femto = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|r| r.aggregate_femto_capacity).sum::<f64>() / tail.len() as f64
    };
    let reconvergence = scenario
        .schedule
        .events
        .iter()
        .map(|e| {
            let after = trace.iter().filter(|r| r.iteration >= e.iteration).count();
            let w = scenario.summary_window.min(after).max(1);
            let delta = reconvergence_time(
                trace,
                e.iteration,
                config.target_capacity,
                config.convergence_band,
                w,
            );
            (e.iteration, delta, w)
        })
        .collect();

    RunSummary {
        scenario_echo: scenario_to_string(scenario),
        final_converged,
        reconvergence,
        final_window_mean_agg_femto,
        final_window_len: window,
        total_messages: sim.total_messages(),
        oracle,
        wall_time_secs,
    }
}

fn write_charts(stem: &str, scenario: &Scenario, sim: &Simulation, out_dir: &Path) -> Result<()> {
    let config = &scenario.config;
    let band = (
        config.target_capacity - config.convergence_band,
        config.target_capacity + config.convergence_band,
    );
    let (macro_points, macro_title): (Vec<(f64, f64)>, &str) = match config.algorithm {
        Algorithm::Dpcq => (
            sim.trace()
                .iter()
                .map(|r| (r.iteration as f64, r.macro_capacity[0]))
                .collect(),
            "macro capacity on subcarrier 1",
        ),
        _ => (
            sim.trace()
                .iter()
                .map(|r| (r.iteration as f64, r.macro_capacity.iter().sum()))
                .collect(),
            "aggregate macro capacity",
        ),
    };
    let macro_svg = line_chart_svg(
        &macro_points,
        macro_title,
        "iteration",
        "bits/s/Hz",
        Some(band),
    );
    write_svg(&macro_svg, &out_dir.join(format!("{stem}_macro.svg")))?;

    let femto_points: Vec<(f64, f64)> = sim
        .trace()
        .iter()
        .map(|r| (r.iteration as f64, r.aggregate_femto_capacity))
        .collect();
    let femto_svg = line_chart_svg(
        &femto_points,
        "aggregate femto capacity",
        "iteration",
        "bits/s/Hz",
        None,
    );
    write_svg(&femto_svg, &out_dir.join(format!("{stem}_femto.svg")))
}

fn sweep(
    name: &str,
    scenario: &Scenario,
    seeds: &[u64],
    jobs: usize,
    out_dir: &Path,
    plot: bool,
) -> Result<()> {
    let run_one = |seed: &u64| -> Result<(u64, RunSummary)> {
        let mut sc = scenario.clone();
        sc.config.seed = *seed;
        let summary = execute_run(name, &sc, out_dir, plot)?;
        Ok((*seed, summary))
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<(u64, RunSummary)>> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(run_one).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(u64, RunSummary)>> = {
        let _ = jobs;
        seeds.iter().map(run_one).collect()
    };

    let mut rows = Vec::new();
    for r in results {
        rows.push(r?);
    }
    rows.sort_by_key(|(seed, _)| *seed);

    let mut aggregate = String::from(
        "seed,final_window_mean_agg_femto,final_converged,total_messages,wall_time_secs\n",
    );
    for (seed, s) in &rows {
        aggregate.push_str(&format!(
            "{seed},{},{},{},{:.3}\n",
            fmt_sig(s.final_window_mean_agg_femto, 9),
            u8::from(s.final_converged),
            s.total_messages,
            s.wall_time_secs
        ));
    }
    let path = out_dir.join(format!("{name}_sweep.csv"));
    std::fs::write(&path, aggregate)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    println!("{name}: swept {} seeds -> {}", rows.len(), path.display());
    Ok(())
}

fn oracle_only(name: &str, scenario: &Scenario, out_dir: &Path) -> Result<()> {
    let config = &scenario.config;
    let topology = Simulation::sample_topology(config)?;
    let gains = ChannelGains::from_topology(&topology, config.subcarriers)?;
    let macro_w = PowerAllocation::equal_split_macro(config.p_max_macro_dbm, config.subcarriers);
    let result = exhaustive_optimal(
        &gains,
        &macro_w,
        &config.vector_levels_dbm,
        config.target_capacity,
        config.convergence_band,
        config.p_max_femto_dbm,
        config.noise_w,
        DEFAULT_ORACLE_CAP,
    )?;

    let mut out = String::new();
    out.push_str(&format!(
        "best_total_femto = {}\n",
        fmt_sig(result.best_total_femto, 9)
    ));
    out.push_str(&format!("feasible_count = {}\n", result.feasible_count));
    out.push_str(&format!("evaluated_count = {}\n", result.evaluated_count));
    for (n, row) in result.best_allocation.iter().enumerate() {
        let row_s: Vec<String> = row.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("best_allocation_f{n} = {}\n", row_s.join(",")));
    }
    let path = out_dir.join(format!("{name}_seed{}_oracle.txt", config.seed));
    std::fs::write(&path, &out)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    print!("{out}");
    Ok(())
}
