//! Scenario files: a flat `key = value` text format describing one
//! experiment, with `#` comments. Missing keys fall back to the built-in
//! defaults; unknown keys are rejected with their line number. Deployment
//! events repeat as `deploy = <iteration>,<count>,<scratch|docitive>`
//! lines.

use crate::agents::RewardKind;
use crate::error::{Error, Result};
use crate::netmodel::{evaluate, ChannelGains, PowerAllocation};
use crate::qcore::MergeRule;
use crate::simulator::{
    Algorithm, DeploymentEvent, DeploymentSchedule, InitMode, Paradigm, SimConfig, Simulation,
};

/// A parsed scenario: the simulation config, the deployment schedule, and
/// the reporting knobs that live outside `SimConfig`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub schedule: DeploymentSchedule,
    /// Run the exhaustive oracle after training and embed the comparison
    /// in the run summary.
    pub oracle_compare: bool,
    /// Trailing-record window used for the summary's convergence flag and
    /// final-window statistics.
    pub summary_window: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            config: SimConfig::default(),
            schedule: DeploymentSchedule::empty(),
            oracle_compare: false,
            summary_window: 200,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.schedule.validate(&self.config)?;
        if self.summary_window == 0 {
            return Err(Error::Config("summary_window must be >= 1".into()));
        }
        Ok(())
    }
}

fn err_at(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| err_at(line, format!("cannot parse {what} from `{}`", value.trim())))
}

/// Parse a scenario document. Every number is validated, defaults cover
/// missing keys, and the subcarrier count defaults per algorithm (6 for
/// DPC-Q, 3 for PDPC-Q and CPC-Q) when not given explicitly.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    let mut deploys: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err_at(line_no, "expected `key = value`"));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key == "deploy" {
            deploys.push((value, line_no));
        } else {
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(err_at(line_no, format!("duplicate key `{key}`")));
            }
            entries.push((key, value, line_no));
        }
    }

    let mut scenario = Scenario::default();
    let config = &mut scenario.config;
    let mut subcarriers_set = false;

    for (key, value, line) in &entries {
        let (value, line) = (value.as_str(), *line);
        match key.as_str() {
            "algorithm" => {
                config.algorithm = match value {
                    "dpcq" => Algorithm::Dpcq,
                    "pdpcq" => Algorithm::Pdpcq,
                    "cpcq" => Algorithm::Cpcq,
                    _ => return Err(err_at(line, "algorithm must be dpcq, pdpcq, or cpcq")),
                };
            }
            "paradigm" => {
                config.paradigm = match value {
                    "il" => Paradigm::Il,
                    "cl" => Paradigm::Cl,
                    _ => return Err(err_at(line, "paradigm must be il or cl")),
                };
            }
            "reward" => {
                config.reward_kind = match value {
                    "r0" => RewardKind::R0,
                    "r1" => RewardKind::R1,
                    _ => return Err(err_at(line, "reward must be r0 or r1")),
                };
            }
            "subcarriers" => {
                config.subcarriers = parse_num(value, line, "subcarriers")?;
                subcarriers_set = true;
            }
            "initial_femto_count" => {
                config.initial_femto_count = parse_num(value, line, "initial_femto_count")?;
            }
            "target_capacity" => {
                config.target_capacity = parse_num(value, line, "target_capacity")?;
            }
            "alpha" => config.params.alpha = parse_num(value, line, "alpha")?,
            "gamma" => config.params.gamma = parse_num(value, line, "gamma")?,
            "epsilon" => config.params.epsilon = parse_num(value, line, "epsilon")?,
            "epsilon_off_at" => {
                config.epsilon_off_at = if value == "none" {
                    None
                } else {
                    Some(parse_num(value, line, "epsilon_off_at")?)
                };
            }
            "iterations" => config.iterations = parse_num(value, line, "iterations")?,
            "seed" => config.seed = parse_num(value, line, "seed")?,
            "log_stride" => config.log_stride = parse_num(value, line, "log_stride")?,
            "noise" => config.noise_w = parse_num(value, line, "noise")?,
            "p_max_macro_dbm" => config.p_max_macro_dbm = parse_num(value, line, "p_max_macro_dbm")?,
            "p_max_femto_dbm" => config.p_max_femto_dbm = parse_num(value, line, "p_max_femto_dbm")?,
            "a1_dbm" => config.a1_dbm = parse_num(value, line, "a1_dbm")?,
            "a2_dbm" => config.a2_dbm = parse_num(value, line, "a2_dbm")?,
            "path_loss_exponent" => {
                config.path_loss_exponent = parse_num(value, line, "path_loss_exponent")?;
            }
            "dpcq_power_min_dbm" => {
                config.dpcq_grid.min_dbm = parse_num(value, line, "dpcq_power_min_dbm")?;
            }
            "dpcq_power_step_dbm" => {
                config.dpcq_grid.step_dbm = parse_num(value, line, "dpcq_power_step_dbm")?;
            }
            "dpcq_power_levels" => {
                config.dpcq_grid.count = parse_num(value, line, "dpcq_power_levels")?;
            }
            "vector_levels_dbm" => {
                config.vector_levels_dbm = value
                    .split(',')
                    .map(|v| parse_num(v, line, "vector level"))
                    .collect::<Result<Vec<f64>>>()?;
            }
            "docitive_merge" => {
                config.docitive_merge = match value {
                    "mean" => MergeRule::Mean,
                    "first" => MergeRule::First,
                    "max" => MergeRule::Max,
                    _ => return Err(err_at(line, "docitive_merge must be mean, first, or max")),
                };
            }
            "cooperation_radius" => {
                config.cooperation_radius = if value == "inf" || value == "infinity" {
                    f64::INFINITY
                } else {
                    parse_num(value, line, "cooperation_radius")?
                };
            }
            "convergence_band" => {
                config.convergence_band = parse_num(value, line, "convergence_band")?;
            }
            "oracle" => {
                scenario.oracle_compare = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(err_at(line, "oracle must be true or false")),
                };
            }
            "summary_window" => {
                scenario.summary_window = parse_num(value, line, "summary_window")?;
            }
            other => return Err(err_at(line, format!("unknown key `{other}`"))),
        }
    }

    if !subcarriers_set {
        scenario.config.subcarriers = scenario.config.algorithm.default_subcarriers();
    }

    for (value, line) in &deploys {
        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(err_at(
                *line,
                "deploy needs `<iteration>,<count>,<scratch|docitive>`",
            ));
        }
        let iteration = parse_num(parts[0], *line, "deploy iteration")?;
        let add_count = parse_num(parts[1], *line, "deploy count")?;
        let init = match parts[2] {
            "scratch" => InitMode::Scratch,
            "docitive" => InitMode::Docitive,
            _ => return Err(err_at(*line, "deploy mode must be scratch or docitive")),
        };
        scenario.schedule.events.push(DeploymentEvent { iteration, add_count, init });
    }

    scenario.validate()?;
    Ok(scenario)
}

/// Serialize a scenario back into the file format. Reparsing the output
/// reproduces the scenario exactly.
pub fn scenario_to_string(scenario: &Scenario) -> String {
    let c = &scenario.config;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("algorithm", c.algorithm.name().into());
    kv("paradigm", c.paradigm.name().into());
    kv(
        "reward",
        match c.reward_kind {
            RewardKind::R0 => "r0".into(),
            RewardKind::R1 => "r1".into(),
        },
    );
    kv("subcarriers", c.subcarriers.to_string());
    kv("initial_femto_count", c.initial_femto_count.to_string());
    kv("target_capacity", c.target_capacity.to_string());
    kv("alpha", c.params.alpha.to_string());
    kv("gamma", c.params.gamma.to_string());
    kv("epsilon", c.params.epsilon.to_string());
    kv(
        "epsilon_off_at",
        c.epsilon_off_at.map_or("none".into(), |t| t.to_string()),
    );
    kv("iterations", c.iterations.to_string());
    kv("seed", c.seed.to_string());
    kv("log_stride", c.log_stride.to_string());
    kv("noise", c.noise_w.to_string());
    kv("p_max_macro_dbm", c.p_max_macro_dbm.to_string());
    kv("p_max_femto_dbm", c.p_max_femto_dbm.to_string());
    kv("a1_dbm", c.a1_dbm.to_string());
    kv("a2_dbm", c.a2_dbm.to_string());
    kv("path_loss_exponent", c.path_loss_exponent.to_string());
    kv("dpcq_power_min_dbm", c.dpcq_grid.min_dbm.to_string());
    kv("dpcq_power_step_dbm", c.dpcq_grid.step_dbm.to_string());
    kv("dpcq_power_levels", c.dpcq_grid.count.to_string());
    kv(
        "vector_levels_dbm",
        c.vector_levels_dbm
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    kv(
        "docitive_merge",
        match c.docitive_merge {
            MergeRule::Mean => "mean".into(),
            MergeRule::First => "first".into(),
            MergeRule::Max => "max".into(),
        },
    );
    kv(
        "cooperation_radius",
        if c.cooperation_radius.is_infinite() {
            "inf".into()
        } else {
            c.cooperation_radius.to_string()
        },
    );
    kv("convergence_band", c.convergence_band.to_string());
    kv("oracle", scenario.oracle_compare.to_string());
    kv("summary_window", scenario.summary_window.to_string());
    for e in &scenario.schedule.events {
        kv(
            "deploy",
            format!("{},{},{}", e.iteration, e.add_count, e.init.name()),
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// The canonical experiment protocols at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// CPC-Q versus the exhaustive optimum at one and two femtocells.
    Fig1a,
    /// DPC-Q/CL macro convergence under incremental docitive deployments.
    Fig2,
    /// The same deployment protocol with scratch-initialized newcomers.
    Fig3,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1a" => Ok(Preset::Fig1a),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected fig1a, fig2, or fig3)"
            ))),
        }
    }
}

/// The deployment protocol shared by the fig2/fig3 presets: five arrivals,
/// one every 2000 iterations, all after exploration has been removed.
fn deployment_run(seed: u64, init: InitMode) -> Scenario {
    let iterations = 30_000;
    Scenario {
        config: SimConfig {
            algorithm: Algorithm::Dpcq,
            paradigm: Paradigm::Cl,
            reward_kind: RewardKind::R1,
            subcarriers: 6,
            initial_femto_count: 5,
            target_capacity: 6.0,
            iterations,
            // Exploration ends at 60% of the run; the arrivals land in the
            // greedy tail so re-convergence is measurable per iteration.
            epsilon_off_at: Some(iterations * 6 / 10),
            seed,
            log_stride: 100,
            ..SimConfig::default()
        },
        schedule: DeploymentSchedule {
            events: (0..5)
                .map(|i| DeploymentEvent {
                    iteration: 20_000 + 2_000 * i,
                    add_count: 1,
                    init,
                })
                .collect(),
        },
        oracle_compare: false,
        summary_window: 200,
    }
}

/// CPC-Q scenario against a per-topology feasible aggregate target: the
/// macro-alone capacity minus 2 bits/s/Hz.
fn cpcq_versus_oracle(n_femto: usize, seed: u64) -> Result<Scenario> {
    let mut config = SimConfig {
        algorithm: Algorithm::Cpcq,
        subcarriers: 3,
        initial_femto_count: n_femto,
        iterations: 30_000,
        epsilon_off_at: Some(20_000),
        seed,
        ..SimConfig::default()
    };
    config.target_capacity = macro_alone_aggregate(&config)? - 2.0;
    Ok(Scenario {
        config,
        schedule: DeploymentSchedule::empty(),
        oracle_compare: true,
        summary_window: 200,
    })
}

/// Aggregate macro capacity of the configured topology with every
/// femtocell silent.
pub fn macro_alone_aggregate(config: &SimConfig) -> Result<f64> {
    let topology = Simulation::sample_topology(config)?;
    let gains = ChannelGains::from_topology(&topology, config.subcarriers)?;
    let alloc = PowerAllocation::new(
        PowerAllocation::equal_split_macro(config.p_max_macro_dbm, config.subcarriers),
        vec![vec![0.0; config.subcarriers]; config.initial_femto_count],
    )?;
    Ok(evaluate(&gains, &alloc, config.noise_w)?.macro_aggregate)
}

/// Materialize a preset into named scenario documents. The text goes
/// through the ordinary parser, so presets obey the same validation as
/// user-written files.
pub fn preset_scenarios(preset: Preset, seed: u64) -> Result<Vec<(String, String)>> {
    let built: Vec<(String, Scenario)> = match preset {
        Preset::Fig1a => vec![
            ("fig1a_nf1".into(), cpcq_versus_oracle(1, seed)?),
            ("fig1a_nf2".into(), cpcq_versus_oracle(2, seed)?),
        ],
        Preset::Fig2 => vec![("fig2".into(), deployment_run(seed, InitMode::Docitive))],
        Preset::Fig3 => vec![("fig3".into(), deployment_run(seed, InitMode::Scratch))],
    };
    built
        .into_iter()
        .map(|(name, s)| {
            s.validate()?;
            Ok((name, scenario_to_string(&s)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_the_builtin_defaults() {
        let s = parse_scenario("").unwrap();
        assert_eq!(s.config, SimConfig::default());
        assert!(s.schedule.events.is_empty());
        assert!(!s.oracle_compare);

        // The baked-in parameter set.
        let c = &s.config;
        assert_eq!(c.params.alpha, 0.5);
        assert_eq!(c.params.gamma, 0.9);
        assert_eq!(c.params.epsilon, 0.1);
        assert_eq!(c.noise_w, 1e-7);
        assert_eq!(c.p_max_macro_dbm, 43.0);
        assert_eq!(c.p_max_femto_dbm, 15.0);
        assert_eq!(c.a1_dbm, 5.0);
        assert_eq!(c.a2_dbm, 5.0);
        assert_eq!(c.path_loss_exponent, 2.0);
    }

    #[test]
    fn subcarrier_default_tracks_the_algorithm() {
        assert_eq!(parse_scenario("algorithm = dpcq").unwrap().config.subcarriers, 6);
        assert_eq!(parse_scenario("algorithm = pdpcq").unwrap().config.subcarriers, 3);
        assert_eq!(
            parse_scenario("algorithm = cpcq\ninitial_femto_count = 2").unwrap().config.subcarriers,
            3
        );
        let overridden = parse_scenario("algorithm = pdpcq\nsubcarriers = 4").unwrap();
        assert_eq!(overridden.config.subcarriers, 4);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\n# a comment\nalpha = 0.25  # trailing comment\n\nseed = 9\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.config.params.alpha, 0.25);
        assert_eq!(s.config.seed, 9);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected_with_line_numbers() {
        let err = parse_scenario("alpha = 0.5\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("bogus"));

        let err = parse_scenario("alpha = 0.5\nalpha = 0.6\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = parse_scenario("not a kv line\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn deploy_lines_build_the_schedule() {
        let text = "iterations = 100\ndeploy = 10,1,scratch\ndeploy = 20,2,docitive\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.schedule.events.len(), 2);
        assert_eq!(
            s.schedule.events[0],
            DeploymentEvent { iteration: 10, add_count: 1, init: InitMode::Scratch }
        );
        assert_eq!(
            s.schedule.events[1],
            DeploymentEvent { iteration: 20, add_count: 2, init: InitMode::Docitive }
        );

        assert!(parse_scenario("deploy = 10,1\n").is_err());
        assert!(parse_scenario("iterations = 5\ndeploy = 10,1,scratch\n").is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let text = "algorithm = pdpcq\nparadigm = il\nreward = r0\nseed = 77\n\
                    iterations = 500\nepsilon_off_at = 300\nvector_levels_dbm = 0,6,12\n\
                    deploy = 100,1,docitive\ncooperation_radius = 450.5\n";
        let parsed = parse_scenario(text).unwrap();
        let serialized = scenario_to_string(&parsed);
        let reparsed = parse_scenario(&serialized).unwrap();
        assert_eq!(parsed, reparsed);
        // Idempotence of the canonical form.
        assert_eq!(serialized, scenario_to_string(&reparsed));
    }

    #[test]
    fn presets_pass_the_standard_validator() {
        for preset in [Preset::Fig1a, Preset::Fig2, Preset::Fig3] {
            for (name, text) in preset_scenarios(preset, 1).unwrap() {
                let parsed = parse_scenario(&text)
                    .unwrap_or_else(|e| panic!("preset {name} failed to parse: {e}"));
                parsed.validate().unwrap();
            }
        }
    }

    #[test]
    fn fig2_preset_matches_the_deployment_protocol() {
        let scenarios = preset_scenarios(Preset::Fig2, 3).unwrap();
        let (name, text) = &scenarios[0];
        assert_eq!(name, "fig2");
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.config.algorithm, Algorithm::Dpcq);
        assert_eq!(s.config.paradigm, Paradigm::Cl);
        assert_eq!(s.config.reward_kind, RewardKind::R1);
        assert_eq!(s.config.subcarriers, 6);
        assert_eq!(s.config.initial_femto_count, 5);
        assert_eq!(s.config.target_capacity, 6.0);
        assert_eq!(s.config.seed, 3);
        assert!(s.config.epsilon_off_at.unwrap() < s.schedule.events[0].iteration);
        let final_count = s.config.initial_femto_count
            + s.schedule.events.iter().map(|e| e.add_count).sum::<usize>();
        assert_eq!(final_count, 10);
        let gaps: Vec<u64> = s
            .schedule
            .events
            .windows(2)
            .map(|w| w[1].iteration - w[0].iteration)
            .collect();
        assert!(gaps.iter().all(|g| *g == 2000));
    }

    #[test]
    fn fig1a_preset_sets_a_feasible_looking_target() {
        let scenarios = preset_scenarios(Preset::Fig1a, 5).unwrap();
        assert_eq!(scenarios.len(), 2);
        for (name, text) in &scenarios {
            let s = parse_scenario(text).unwrap();
            assert_eq!(s.config.algorithm, Algorithm::Cpcq);
            assert!(s.oracle_compare);
            let alone = macro_alone_aggregate(&s.config).unwrap();
            assert!(
                (s.config.target_capacity - (alone - 2.0)).abs() < 1e-9,
                "{name}: target {} vs alone {alone}",
                s.config.target_capacity
            );
        }
    }
}
