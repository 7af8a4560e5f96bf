//! The experiment engine: drives the observe / act / evaluate / reward /
//! update loop for any algorithm and paradigm, executes deployment
//! schedules, applies the epsilon-removal schedule, and logs traces.
//!
//! One simulation run is strictly sequential so traces are reproducible;
//! independent replications (different seeds) can run concurrently because
//! a `Simulation` owns all of its state.

use crate::agents::{
    cpcq_reward, dpcq_encode_state, dpcq_reward, pdpcq_encode_state, pdpcq_feasible_action_set,
    pdpcq_reward, CpcqController, DpcqActionGrid, DpcqAgent, PdpcqAgent, RewardKind,
    DEFAULT_VECTOR_LEVELS_DBM, DPCQ_STATE_COUNT,
};
use crate::error::{Error, Result};
use crate::netmodel::{
    dbm_to_watts, evaluate, place_network, watts_to_dbm, CapacityReport, ChannelGains,
    NetworkTopology, PlacementBounds, PowerAllocation,
};
use crate::qcore::{
    argmax_lowest, broadcast_rows, docitive_init, select_cooperative, select_egreedy,
    LearningParams, MergeRule, QTable, SharedRow,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dpcq,
    Pdpcq,
    Cpcq,
}

impl Algorithm {
    /// Subcarrier count used when a scenario does not override it.
    pub fn default_subcarriers(&self) -> usize {
        match self {
            Algorithm::Dpcq => 6,
            Algorithm::Pdpcq | Algorithm::Cpcq => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dpcq => "dpcq",
            Algorithm::Pdpcq => "pdpcq",
            Algorithm::Cpcq => "cpcq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    /// Independent learning: every agent treats the others as environment.
    Il,
    /// Cooperative learning: agents act on summed shared Q-rows.
    Cl,
}

impl Paradigm {
    pub fn name(&self) -> &'static str {
        match self {
            Paradigm::Il => "il",
            Paradigm::Cl => "cl",
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    /// Ignored by CPC-Q (a single controller has nobody to cooperate with).
    pub paradigm: Paradigm,
    pub reward_kind: RewardKind,
    pub subcarriers: usize,
    pub initial_femto_count: usize,
    /// Per-subcarrier target for DPC-Q, aggregate target otherwise,
    /// in bits/s/Hz.
    pub target_capacity: f64,
    pub params: LearningParams,
    /// Noise power in watts.
    pub noise_w: f64,
    pub p_max_macro_dbm: f64,
    pub p_max_femto_dbm: f64,
    pub a1_dbm: f64,
    pub a2_dbm: f64,
    pub path_loss_exponent: f64,
    pub iterations: u64,
    /// Exploration is forced to zero at and after this iteration.
    pub epsilon_off_at: Option<u64>,
    pub seed: u64,
    pub log_stride: u64,
    pub dpcq_grid: DpcqActionGrid,
    /// Level set for PDPC-Q vectors and CPC-Q matrices, strictly ascending dBm.
    pub vector_levels_dbm: Vec<f64>,
    pub docitive_merge: MergeRule,
    /// FBS-to-FBS cooperation range in meters; infinite means every
    /// deployed femtocell cooperates.
    pub cooperation_radius: f64,
    /// Half-width of the macro protection band in bits/s/Hz.
    pub convergence_band: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dpcq,
            paradigm: Paradigm::Cl,
            reward_kind: RewardKind::R1,
            subcarriers: 6,
            initial_femto_count: 5,
            target_capacity: 6.0,
            params: LearningParams { alpha: 0.5, gamma: 0.9, epsilon: 0.1 },
            noise_w: 1e-7,
            p_max_macro_dbm: 43.0,
            p_max_femto_dbm: 15.0,
            a1_dbm: 5.0,
            a2_dbm: 5.0,
            path_loss_exponent: 2.0,
            iterations: 10_000,
            epsilon_off_at: None,
            seed: 1,
            log_stride: 100,
            dpcq_grid: DpcqActionGrid::default(),
            vector_levels_dbm: DEFAULT_VECTOR_LEVELS_DBM.to_vec(),
            docitive_merge: MergeRule::Mean,
            cooperation_radius: f64::INFINITY,
            convergence_band: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.subcarriers == 0 {
            return Err(Error::Config("subcarriers must be >= 1".into()));
        }
        if self.log_stride == 0 {
            return Err(Error::Config("log_stride must be >= 1".into()));
        }
        if let Some(t) = self.epsilon_off_at {
            if t > self.iterations {
                return Err(Error::Config(format!(
                    "epsilon_off_at ({t}) must not exceed iterations ({})",
                    self.iterations
                )));
            }
        }
        if !(self.noise_w > 0.0) {
            return Err(Error::Config("noise power must be > 0".into()));
        }
        if !(self.convergence_band > 0.0) {
            return Err(Error::Config("convergence band must be > 0".into()));
        }
        if !(self.target_capacity >= 0.0) || !self.target_capacity.is_finite() {
            return Err(Error::Config("target capacity must be finite and >= 0".into()));
        }
        if !self.p_max_macro_dbm.is_finite() || !self.p_max_femto_dbm.is_finite() {
            return Err(Error::Config("power budgets must be finite".into()));
        }
        if !(self.a1_dbm >= 0.0) || !(self.a2_dbm >= 0.0) {
            return Err(Error::Config("A1 and A2 must be >= 0 dBm".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::Config("path loss exponent must be > 0".into()));
        }
        if !(self.cooperation_radius > 0.0) {
            return Err(Error::Config("cooperation radius must be > 0".into()));
        }
        self.dpcq_grid.validate()?;
        if self.vector_levels_dbm.is_empty()
            || self.vector_levels_dbm.iter().any(|l| !l.is_finite())
            || self.vector_levels_dbm.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "vector power levels must be a non-empty strictly ascending dBm list".into(),
            ));
        }
        if self.algorithm == Algorithm::Cpcq && self.initial_femto_count == 0 {
            return Err(Error::Config("CPC-Q needs at least one femtocell".into()));
        }
        Ok(())
    }

    fn selection_params(&self, epsilon: f64) -> LearningParams {
        LearningParams { epsilon, ..self.params }
    }
}

/// How a newly deployed femtocell initializes its Q-tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// All-zero tables.
    Scratch,
    /// Tables merged from the already deployed agents.
    Docitive,
}

impl InitMode {
    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Scratch => "scratch",
            InitMode::Docitive => "docitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeploymentEvent {
    /// The event fires before the observation phase of this iteration.
    pub iteration: u64,
    pub add_count: usize,
    pub init: InitMode,
}

/// Femtocell arrivals over the course of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeploymentSchedule {
    pub events: Vec<DeploymentEvent>,
}

impl DeploymentSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self, config: &SimConfig) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].iteration <= pair[0].iteration {
                return Err(Error::Config(
                    "deployment iterations must be strictly increasing".into(),
                ));
            }
        }
        for e in &self.events {
            if e.add_count == 0 {
                return Err(Error::Config("deployment add_count must be >= 1".into()));
            }
            if e.iteration >= config.iterations {
                return Err(Error::Config(format!(
                    "deployment at iteration {} is outside the run of {} iterations",
                    e.iteration, config.iterations
                )));
            }
        }
        if config.algorithm == Algorithm::Cpcq && !self.events.is_empty() {
            return Err(Error::Config(
                "CPC-Q does not support deployments: its joint action space is \
                 fixed by the femtocell count"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One logged sample of the running experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub n_femto: usize,
    pub macro_capacity: Vec<f64>,
    pub aggregate_femto_capacity: f64,
    /// Mean reward over every (agent, task) pair this iteration.
    pub mean_reward: f64,
    /// Cooperation messages exchanged this iteration.
    pub messages: u64,
    pub epsilon: f64,
    /// Whether the macro protection quantity sat inside the band this
    /// iteration (every subcarrier for DPC-Q, the aggregate otherwise).
    pub converged: bool,
}

/// Effective exploration probability at `iteration`.
pub fn epsilon_schedule(iteration: u64, config: &SimConfig) -> f64 {
    match config.epsilon_off_at {
        Some(t) if iteration >= t => 0.0,
        _ => config.params.epsilon,
    }
}

/// True when the last `window_len` records all keep every per-subcarrier
/// macro capacity inside the closed band `[target - band, target + band]`.
pub fn check_convergence(
    trace: &[IterationRecord],
    target: f64,
    band: f64,
    window_len: usize,
) -> bool {
    assert!(window_len >= 1, "window length must be >= 1");
    if trace.len() < window_len {
        return false;
    }
    trace[trace.len() - window_len..].iter().all(|r| {
        r.macro_capacity
            .iter()
            .all(|c| *c >= target - band && *c <= target + band)
    })
}

/// Iterations after `deployment_iteration` until an in-band window of
/// `window_len` records begins, or `None` when the trace never settles.
pub fn reconvergence_time(
    trace: &[IterationRecord],
    deployment_iteration: u64,
    target: f64,
    band: f64,
    window_len: usize,
) -> Option<u64> {
    assert!(window_len >= 1, "window length must be >= 1");
    let start = trace.partition_point(|r| r.iteration < deployment_iteration);
    for i in start..trace.len().saturating_sub(window_len - 1) {
        if check_convergence(&trace[..i + window_len], target, band, window_len) {
            return Some(trace[i].iteration - deployment_iteration);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Learner state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Learner {
    Dpcq {
        agents: Vec<DpcqAgent>,
        levels_dbm: Vec<f64>,
    },
    Pdpcq {
        agents: Vec<PdpcqAgent>,
        /// Feasible power vectors shared by every agent, dBm.
        actions: Vec<Vec<f64>>,
    },
    Cpcq(CpcqController),
}

impl Learner {
    fn n_agents(&self) -> usize {
        match self {
            Learner::Dpcq { agents, .. } => agents.len(),
            Learner::Pdpcq { agents, .. } => agents.len(),
            Learner::Cpcq(c) => c.n_femto,
        }
    }

    /// Cold-start transmit powers (watts) for `n` femtocells: every
    /// subcarrier at the minimum action.
    fn cold_start_rows(&self, n: usize, subcarriers: usize) -> Vec<Vec<f64>> {
        let row_dbm: Vec<f64> = match self {
            Learner::Dpcq { levels_dbm, .. } => vec![levels_dbm[0]; subcarriers],
            Learner::Pdpcq { actions, .. } => actions[0].clone(),
            Learner::Cpcq(c) => vec![c.levels_dbm[0]; subcarriers],
        };
        let row_w: Vec<f64> = row_dbm.iter().map(|d| dbm_to_watts(*d)).collect();
        vec![row_w; n]
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// A running experiment; owns every piece of mutable state.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    schedule: DeploymentSchedule,
    bounds: PlacementBounds,
    topology: NetworkTopology,
    gains: ChannelGains,
    alloc: PowerAllocation,
    /// Capacities for the currently applied powers; refreshed whenever
    /// `alloc` or the topology changes.
    report: CapacityReport,
    learner: Learner,
    /// Cooperating-neighbor indices per agent (self included); rebuilt on
    /// deployment.
    coop_sets: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    iteration: u64,
    next_event: usize,
    total_messages: u64,
    trace: Vec<IterationRecord>,
}

impl Simulation {
    /// Sample the run's topology exactly as `new` would, without building
    /// the rest of the simulation.
    pub fn sample_topology(config: &SimConfig) -> Result<NetworkTopology> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        place_network(
            &PlacementBounds::default(),
            config.initial_femto_count,
            config.path_loss_exponent,
            &mut rng,
        )
    }

    pub fn new(config: SimConfig, schedule: DeploymentSchedule) -> Result<Self> {
        config.validate()?;
        schedule.validate(&config)?;
        let bounds = PlacementBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let topology = place_network(
            &bounds,
            config.initial_femto_count,
            config.path_loss_exponent,
            &mut rng,
        )?;
        let gains = ChannelGains::from_topology(&topology, config.subcarriers)?;
        Self::assemble(config, schedule, bounds, topology, gains, rng)
    }

    /// Build a simulation over an explicitly provided environment.
    ///
    /// Meant for synthetic instances; deployments recompute gains from the
    /// topology, so schedules only make sense when `gains` came from it.
    pub fn with_environment(
        config: SimConfig,
        schedule: DeploymentSchedule,
        topology: NetworkTopology,
        gains: ChannelGains,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate(&config)?;
        if gains.subcarriers() != config.subcarriers
            || gains.n_femto() != config.initial_femto_count
            || topology.n_femto() != config.initial_femto_count
        {
            return Err(Error::Config(
                "provided environment does not match the configured shape".into(),
            ));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(config, schedule, PlacementBounds::default(), topology, gains, rng)
    }

    fn assemble(
        config: SimConfig,
        schedule: DeploymentSchedule,
        bounds: PlacementBounds,
        topology: NetworkTopology,
        gains: ChannelGains,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let n = config.initial_femto_count;
        let learner = match config.algorithm {
            Algorithm::Dpcq => {
                let levels = config.dpcq_grid.levels_dbm();
                let agents = (0..n)
                    .map(|id| DpcqAgent::new(id, config.subcarriers, levels.len()))
                    .collect();
                Learner::Dpcq { agents, levels_dbm: levels }
            }
            Algorithm::Pdpcq => {
                let actions = pdpcq_feasible_action_set(
                    config.subcarriers,
                    &config.vector_levels_dbm,
                    config.p_max_femto_dbm,
                );
                if actions.is_empty() {
                    return Err(Error::Config(
                        "no PDPC-Q power vector respects the femto budget".into(),
                    ));
                }
                let agents = (0..n).map(|id| PdpcqAgent::new(id, actions.len())).collect();
                Learner::Pdpcq { agents, actions }
            }
            Algorithm::Cpcq => Learner::Cpcq(CpcqController::new(
                n,
                config.subcarriers,
                &config.vector_levels_dbm,
                config.p_max_femto_dbm,
            )?),
        };

        let macro_w = PowerAllocation::equal_split_macro(config.p_max_macro_dbm, config.subcarriers);
        let femto_w = learner.cold_start_rows(n, config.subcarriers);
        let alloc = PowerAllocation::new(macro_w, femto_w)?;
        let report = evaluate(&gains, &alloc, config.noise_w)?;
        let coop_sets = cooperation_sets(&topology, config.cooperation_radius);

        Ok(Self {
            config,
            schedule,
            bounds,
            topology,
            gains,
            alloc,
            report,
            learner,
            coop_sets,
            rng,
            iteration: 0,
            next_event: 0,
            total_messages: 0,
            trace: Vec::new(),
        })
    }

    // -- Accessors ----------------------------------------------------------

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<IterationRecord> {
        self.trace
    }

    pub fn total_messages(&self) -> u64 {
        self.total_messages
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn gains(&self) -> &ChannelGains {
        &self.gains
    }

    pub fn report(&self) -> &CapacityReport {
        &self.report
    }

    /// The currently applied joint powers (the previous iteration's actions).
    pub fn allocation(&self) -> &PowerAllocation {
        &self.alloc
    }

    pub fn n_femto(&self) -> usize {
        self.learner.n_agents()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Q-tables of every agent for one task index (the subcarrier for
    /// DPC-Q; 0 for the single PDPC-Q/CPC-Q task).
    pub fn tables_for_task(&self, task: usize) -> Vec<&QTable> {
        match &self.learner {
            Learner::Dpcq { agents, .. } => agents.iter().map(|a| &a.tables[task]).collect(),
            Learner::Pdpcq { agents, .. } => agents.iter().map(|a| &a.table).collect(),
            Learner::Cpcq(c) => vec![&c.table],
        }
    }

    // -- Running ------------------------------------------------------------

    pub fn run_to_end(&mut self) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step()?;
        }
        Ok(())
    }

    /// Advance one iteration: fire due deployments, observe, share (CL),
    /// select, apply, reward, update, log.
    pub fn step(&mut self) -> Result<()> {
        debug_assert!(self.iteration < self.config.iterations);
        while self
            .schedule
            .events
            .get(self.next_event)
            .is_some_and(|e| e.iteration == self.iteration)
        {
            let e = self.schedule.events[self.next_event];
            self.deploy_femtocells(e.add_count, e.init)?;
            self.next_event += 1;
        }

        let epsilon = epsilon_schedule(self.iteration, &self.config);
        let (mean_reward, messages) = match self.config.algorithm {
            Algorithm::Dpcq => self.step_dpcq(epsilon)?,
            Algorithm::Pdpcq => self.step_pdpcq(epsilon)?,
            Algorithm::Cpcq => self.step_cpcq(epsilon)?,
        };

        self.total_messages += messages;
        if self.iteration % self.config.log_stride == 0 {
            let converged = in_band(&self.report, &self.config);
            self.trace.push(IterationRecord {
                iteration: self.iteration,
                n_femto: self.learner.n_agents(),
                macro_capacity: self.report.macro_capacity.clone(),
                aggregate_femto_capacity: self.report.total_femto,
                mean_reward,
                messages,
                epsilon,
                converged,
            });
        }
        self.iteration += 1;
        Ok(())
    }

    fn step_dpcq(&mut self, epsilon: f64) -> Result<(f64, u64)> {
        let (n, kk) = (self.learner.n_agents(), self.config.subcarriers);
        if n == 0 {
            return Ok((0.0, 0));
        }
        let sel = self.config.selection_params(epsilon);

        // (a) Observe states from the previously applied powers.
        let states = self.dpcq_states();

        // (b) Cooperative sharing round.
        let cl = self.config.paradigm == Paradigm::Cl;
        let (shared, messages) = if cl {
            let Learner::Dpcq { agents, .. } = &self.learner else { unreachable!() };
            let per_task: Vec<Vec<(&QTable, usize)>> = (0..kk)
                .map(|k| (0..n).map(|i| (&agents[i].tables[k], states[i][k])).collect())
                .collect();
            let (rows, full_count) = broadcast_rows(&per_task)?;
            let messages = self.message_count(full_count);
            (Some(rows), messages)
        } else {
            (None, 0)
        };

        // (c) Simultaneous action selection, agent-major then subcarrier.
        let mut actions = vec![vec![0usize; kk]; n];
        match &self.learner {
            Learner::Dpcq { agents, .. } => {
                for i in 0..n {
                    for k in 0..kk {
                        actions[i][k] = match &shared {
                            Some(rows) => {
                                let subset = self.coop_subset(&rows[k], i);
                                select_cooperative(&subset, &sel, &mut self.rng)?
                            }
                            None => {
                                select_egreedy(&agents[i].tables[k], states[i][k], &sel, &mut self.rng)
                            }
                        };
                    }
                }
            }
            _ => unreachable!(),
        }

        // (d) Apply powers and evaluate.
        let Learner::Dpcq { levels_dbm, .. } = &self.learner else { unreachable!() };
        let levels = levels_dbm.clone();
        for i in 0..n {
            for k in 0..kk {
                self.alloc.set_femto_power(i, k, dbm_to_watts(levels[actions[i][k]]));
            }
        }
        self.report = evaluate(&self.gains, &self.alloc, self.config.noise_w)?;

        // (e) Rewards from the new capacities and totals.
        let mut rewards = vec![vec![0.0; kk]; n];
        let mut totals_dbm = vec![0.0; n];
        for i in 0..n {
            totals_dbm[i] = watts_to_dbm(self.alloc.femto_total_w(i))?;
            for k in 0..kk {
                rewards[i][k] = dpcq_reward(
                    self.config.reward_kind,
                    self.report.macro_capacity[k],
                    self.report.femto_capacity[i][k],
                    totals_dbm[i],
                    self.config.target_capacity,
                    self.config.p_max_femto_dbm,
                );
            }
        }

        // (f) Q-updates toward the successor states.
        let next_states = self.dpcq_states();
        let params = self.config.params;
        let Learner::Dpcq { agents, .. } = &mut self.learner else { unreachable!() };
        for (i, agent) in agents.iter_mut().enumerate() {
            for k in 0..kk {
                agent.tables[k].update(states[i][k], actions[i][k], rewards[i][k], next_states[i][k], &params);
            }
        }

        let mean = rewards.iter().flatten().sum::<f64>() / (n * kk) as f64;
        Ok((mean, messages))
    }

    fn step_pdpcq(&mut self, epsilon: f64) -> Result<(f64, u64)> {
        let n = self.learner.n_agents();
        if n == 0 {
            return Ok((0.0, 0));
        }
        let sel = self.config.selection_params(epsilon);
        let state = pdpcq_encode_state(self.report.macro_aggregate, self.config.target_capacity);

        let cl = self.config.paradigm == Paradigm::Cl;
        let (shared, messages) = if cl {
            let Learner::Pdpcq { agents, .. } = &self.learner else { unreachable!() };
            let task: Vec<(&QTable, usize)> = agents.iter().map(|a| (&a.table, state)).collect();
            let (rows, full_count) = broadcast_rows(&[task])?;
            let messages = self.message_count(full_count);
            (Some(rows.into_iter().next().unwrap()), messages)
        } else {
            (None, 0)
        };

        let mut actions = vec![0usize; n];
        match &self.learner {
            Learner::Pdpcq { agents, .. } => {
                for i in 0..n {
                    actions[i] = match &shared {
                        Some(rows) => {
                            let subset = self.coop_subset(rows, i);
                            select_cooperative(&subset, &sel, &mut self.rng)?
                        }
                        None => select_egreedy(&agents[i].table, state, &sel, &mut self.rng),
                    };
                }
            }
            _ => unreachable!(),
        }

        let Learner::Pdpcq { actions: action_set, .. } = &self.learner else { unreachable!() };
        let chosen: Vec<Vec<f64>> = actions.iter().map(|a| action_set[*a].clone()).collect();
        for (i, vec_dbm) in chosen.iter().enumerate() {
            for (k, dbm) in vec_dbm.iter().enumerate() {
                self.alloc.set_femto_power(i, k, dbm_to_watts(*dbm));
            }
        }
        self.report = evaluate(&self.gains, &self.alloc, self.config.noise_w)?;

        let mut rewards = vec![0.0; n];
        for i in 0..n {
            rewards[i] = pdpcq_reward(
                self.report.macro_aggregate,
                self.report.femto_aggregate[i],
                self.config.target_capacity,
            );
        }

        let next_state =
            pdpcq_encode_state(self.report.macro_aggregate, self.config.target_capacity);
        let params = self.config.params;
        let Learner::Pdpcq { agents, .. } = &mut self.learner else { unreachable!() };
        for (i, agent) in agents.iter_mut().enumerate() {
            agent.table.update(state, actions[i], rewards[i], next_state, &params);
        }

        let mean = rewards.iter().sum::<f64>() / n as f64;
        Ok((mean, messages))
    }

    fn step_cpcq(&mut self, epsilon: f64) -> Result<(f64, u64)> {
        let sel = self.config.selection_params(epsilon);
        let state = pdpcq_encode_state(self.report.macro_aggregate, self.config.target_capacity);

        let Learner::Cpcq(controller) = &self.learner else { unreachable!() };
        let action = select_egreedy(&controller.table, state, &sel, &mut self.rng);
        let matrix = controller.action_matrix(action);
        for (i, row) in matrix.iter().enumerate() {
            for (k, dbm) in row.iter().enumerate() {
                self.alloc.set_femto_power(i, k, dbm_to_watts(*dbm));
            }
        }
        self.report = evaluate(&self.gains, &self.alloc, self.config.noise_w)?;

        let reward = cpcq_reward(
            self.report.macro_aggregate,
            self.report.total_femto,
            self.config.target_capacity,
        );
        let next_state =
            pdpcq_encode_state(self.report.macro_aggregate, self.config.target_capacity);
        let params = self.config.params;
        let Learner::Cpcq(controller) = &mut self.learner else { unreachable!() };
        controller.table.update(state, action, reward, next_state, &params);

        Ok((reward, 0))
    }

    /// DPC-Q state indices per (agent, subcarrier) from the capacities and
    /// totals currently in force.
    fn dpcq_states(&self) -> Vec<Vec<usize>> {
        let (n, kk) = (self.learner.n_agents(), self.config.subcarriers);
        (0..n)
            .map(|i| {
                let total_w = self.alloc.femto_total_w(i);
                (0..kk)
                    .map(|k| {
                        dpcq_encode_state(
                            self.report.macro_capacity[k],
                            total_w,
                            self.config.target_capacity,
                            self.config.p_max_femto_dbm,
                            self.config.a1_dbm,
                            self.config.a2_dbm,
                        )
                        .encode()
                    })
                    .collect()
            })
            .collect()
    }

    /// The shared rows visible to agent `i` under the cooperation radius.
    fn coop_subset(&self, rows: &[SharedRow], i: usize) -> Vec<SharedRow> {
        if self.coop_sets[i].len() == rows.len() {
            rows.to_vec()
        } else {
            self.coop_sets[i].iter().map(|j| rows[*j].clone()).collect()
        }
    }

    /// Messages for one sharing round: the full quadratic exchange when
    /// everyone is in range, otherwise one message per ordered neighbor
    /// pair.
    fn message_count(&self, full_broadcast_count: u64) -> u64 {
        let n = self.learner.n_agents();
        if self.coop_sets.iter().all(|s| s.len() == n) {
            full_broadcast_count
        } else {
            self.coop_sets.iter().map(|s| s.len() as u64 - 1).sum()
        }
    }

    /// Place `add_count` femtocells and hand each one its initial Q-tables
    /// and cold-start powers. New agents participate from the current
    /// iteration onward.
    fn deploy_femtocells(&mut self, add_count: usize, init: InitMode) -> Result<()> {
        for _ in 0..add_count {
            self.topology.add_femtocell(&self.bounds, &mut self.rng)?;
            self.gains = ChannelGains::from_topology(&self.topology, self.config.subcarriers)?;

            let kk = self.config.subcarriers;
            let merge = self.config.docitive_merge;
            match &mut self.learner {
                Learner::Dpcq { agents, levels_dbm } => {
                    let id = agents.len();
                    let mut newcomer = DpcqAgent::new(id, kk, levels_dbm.len());
                    if init == InitMode::Docitive {
                        for k in 0..kk {
                            let donors: Vec<&QTable> = agents.iter().map(|a| &a.tables[k]).collect();
                            newcomer.tables[k] =
                                docitive_init(DPCQ_STATE_COUNT, levels_dbm.len(), &donors, merge)?;
                        }
                    }
                    self.alloc.add_femto_row(vec![dbm_to_watts(levels_dbm[0]); kk])?;
                    agents.push(newcomer);
                }
                Learner::Pdpcq { agents, actions } => {
                    let id = agents.len();
                    let mut newcomer = PdpcqAgent::new(id, actions.len());
                    if init == InitMode::Docitive {
                        let donors: Vec<&QTable> = agents.iter().map(|a| &a.table).collect();
                        newcomer.table = docitive_init(2, actions.len(), &donors, merge)?;
                    }
                    let row = actions[0].iter().map(|d| dbm_to_watts(*d)).collect();
                    self.alloc.add_femto_row(row)?;
                    agents.push(newcomer);
                }
                Learner::Cpcq(_) => {
                    return Err(Error::Config("CPC-Q does not support deployments".into()));
                }
            }
        }
        self.coop_sets = cooperation_sets(&self.topology, self.config.cooperation_radius);
        self.report = evaluate(&self.gains, &self.alloc, self.config.noise_w)?;
        Ok(())
    }

    // -- Greedy policy extraction --------------------------------------------

    /// Roll the purely greedy policy forward from the cold-start powers,
    /// recording each applied joint allocation (dBm) and its capacities.
    /// Stops at a repeated joint action (fixed point or cycle) or after
    /// `max_steps` applications. Consumes no randomness.
    pub fn greedy_rollout(&self, max_steps: usize) -> Result<GreedyRollout> {
        let n = self.learner.n_agents();
        let kk = self.config.subcarriers;
        let macro_w =
            PowerAllocation::equal_split_macro(self.config.p_max_macro_dbm, kk);
        let mut alloc = PowerAllocation::new(macro_w, self.learner.cold_start_rows(n, kk))?;
        let mut report = evaluate(&self.gains, &alloc, self.config.noise_w)?;

        let mut visited: Vec<(Vec<Vec<f64>>, CapacityReport)> = Vec::new();
        let mut cycled = false;
        for _ in 0..max_steps {
            let matrix = self.greedy_joint_matrix(&report, &alloc)?;
            if visited.iter().any(|(m, _)| *m == matrix) {
                cycled = true;
                break;
            }
            for (i, row) in matrix.iter().enumerate() {
                for (k, dbm) in row.iter().enumerate() {
                    alloc.set_femto_power(i, k, dbm_to_watts(*dbm));
                }
            }
            report = evaluate(&self.gains, &alloc, self.config.noise_w)?;
            visited.push((matrix, report.clone()));
        }
        Ok(GreedyRollout { visited, cycled })
    }

    /// The joint dBm matrix every agent would pick greedily (no
    /// exploration) given `report` and `alloc` as the observed environment.
    fn greedy_joint_matrix(
        &self,
        report: &CapacityReport,
        alloc: &PowerAllocation,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.learner.n_agents();
        let kk = self.config.subcarriers;
        let cl = self.config.paradigm == Paradigm::Cl;
        match &self.learner {
            Learner::Dpcq { agents, levels_dbm } => {
                let mut matrix = vec![vec![0.0; kk]; n];
                for i in 0..n {
                    let total_w = alloc.femto_total_w(i);
                    for k in 0..kk {
                        let s = dpcq_encode_state(
                            report.macro_capacity[k],
                            total_w,
                            self.config.target_capacity,
                            self.config.p_max_femto_dbm,
                            self.config.a1_dbm,
                            self.config.a2_dbm,
                        )
                        .encode();
                        let a = if cl {
                            let mut sum = vec![0.0; levels_dbm.len()];
                            for j in &self.coop_sets[i] {
                                let total_j = alloc.femto_total_w(*j);
                                let sj = dpcq_encode_state(
                                    report.macro_capacity[k],
                                    total_j,
                                    self.config.target_capacity,
                                    self.config.p_max_femto_dbm,
                                    self.config.a1_dbm,
                                    self.config.a2_dbm,
                                )
                                .encode();
                                for (acc, v) in sum.iter_mut().zip(agents[*j].tables[k].row(sj)) {
                                    *acc += v;
                                }
                            }
                            argmax_lowest(&sum)
                        } else {
                            argmax_lowest(agents[i].tables[k].row(s))
                        };
                        matrix[i][k] = levels_dbm[a];
                    }
                }
                Ok(matrix)
            }
            Learner::Pdpcq { agents, actions } => {
                let s = pdpcq_encode_state(report.macro_aggregate, self.config.target_capacity);
                let mut matrix = Vec::with_capacity(n);
                for i in 0..n {
                    let a = if cl {
                        let mut sum = vec![0.0; actions.len()];
                        for j in &self.coop_sets[i] {
                            for (acc, v) in sum.iter_mut().zip(agents[*j].table.row(s)) {
                                *acc += v;
                            }
                        }
                        argmax_lowest(&sum)
                    } else {
                        argmax_lowest(agents[i].table.row(s))
                    };
                    matrix.push(actions[a].clone());
                }
                Ok(matrix)
            }
            Learner::Cpcq(c) => {
                let s = pdpcq_encode_state(report.macro_aggregate, self.config.target_capacity);
                Ok(c.action_matrix(argmax_lowest(c.table.row(s))))
            }
        }
    }
}

/// Joint allocations visited by a greedy rollout, in visit order.
#[derive(Debug, Clone)]
pub struct GreedyRollout {
    pub visited: Vec<(Vec<Vec<f64>>, CapacityReport)>,
    /// True when the rollout ended by revisiting an allocation.
    pub cycled: bool,
}

/// Whether the report's protection quantity sits inside the configured band.
fn in_band(report: &CapacityReport, config: &SimConfig) -> bool {
    let (t, b) = (config.target_capacity, config.convergence_band);
    match config.algorithm {
        Algorithm::Dpcq => report.macro_capacity.iter().all(|c| (c - t).abs() <= b),
        _ => (report.macro_aggregate - t).abs() <= b,
    }
}

fn cooperation_sets(topology: &NetworkTopology, radius: f64) -> Vec<Vec<usize>> {
    let n = topology.n_femto();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|j| {
                    i == *j
                        || radius.is_infinite()
                        || topology.fbs_positions[i].dist(&topology.fbs_positions[*j]) <= radius
                })
                .collect()
        })
        .collect()
}

/// Build and run a complete experiment.
pub fn run(config: SimConfig, schedule: DeploymentSchedule) -> Result<Simulation> {
    let mut sim = Simulation::new(config, schedule)?;
    sim.run_to_end()?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(algorithm: Algorithm, paradigm: Paradigm) -> SimConfig {
        SimConfig {
            algorithm,
            paradigm,
            subcarriers: algorithm.default_subcarriers().min(3),
            initial_femto_count: 2,
            iterations: 50,
            log_stride: 1,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_iterations_leave_an_empty_trace() {
        let config = SimConfig {
            algorithm: Algorithm::Cpcq,
            subcarriers: 1,
            initial_femto_count: 1,
            iterations: 0,
            ..SimConfig::default()
        };
        let sim = run(config, DeploymentSchedule::empty()).unwrap();
        assert!(sim.trace().is_empty());
        assert_eq!(sim.total_messages(), 0);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        for (alg, par) in [
            (Algorithm::Dpcq, Paradigm::Il),
            (Algorithm::Dpcq, Paradigm::Cl),
            (Algorithm::Pdpcq, Paradigm::Cl),
            (Algorithm::Cpcq, Paradigm::Il),
        ] {
            let a = run(small_config(alg, par), DeploymentSchedule::empty()).unwrap();
            let b = run(small_config(alg, par), DeploymentSchedule::empty()).unwrap();
            assert_eq!(a.trace(), b.trace(), "{alg:?}/{par:?} diverged");
        }
    }

    #[test]
    fn cl_message_counts_match_the_quadratic_formula() {
        let config = SimConfig {
            initial_femto_count: 5,
            iterations: 3,
            log_stride: 1,
            ..SimConfig::default()
        };
        let sim = run(config, DeploymentSchedule::empty()).unwrap();
        for r in sim.trace() {
            assert_eq!(r.messages, 20);
        }
        assert_eq!(sim.total_messages(), 60);
    }

    #[test]
    fn il_runs_exchange_nothing() {
        let config = SimConfig {
            paradigm: Paradigm::Il,
            initial_femto_count: 4,
            iterations: 10,
            log_stride: 1,
            ..SimConfig::default()
        };
        let sim = run(config, DeploymentSchedule::empty()).unwrap();
        assert!(sim.trace().iter().all(|r| r.messages == 0));
        assert_eq!(sim.total_messages(), 0);
    }

    #[test]
    fn deployment_grows_the_agent_count_and_message_rate() {
        let config = SimConfig {
            initial_femto_count: 5,
            iterations: 6,
            log_stride: 1,
            seed: 21,
            ..SimConfig::default()
        };
        let schedule = DeploymentSchedule {
            events: vec![DeploymentEvent { iteration: 3, add_count: 1, init: InitMode::Scratch }],
        };
        let sim = run(config, schedule).unwrap();
        let trace = sim.trace();
        assert!(trace.iter().take(3).all(|r| r.n_femto == 5 && r.messages == 20));
        assert!(trace.iter().skip(3).all(|r| r.n_femto == 6 && r.messages == 30));
        // Cumulative accounting: 3*20 + 3*30.
        assert_eq!(sim.total_messages(), 150);
        // Agent counts never decrease.
        assert!(trace.windows(2).all(|w| w[0].n_femto <= w[1].n_femto));
    }

    #[test]
    fn scratch_newcomers_start_with_zero_tables() {
        let config = SimConfig {
            initial_femto_count: 2,
            iterations: 4,
            subcarriers: 2,
            seed: 5,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(config, DeploymentSchedule::empty()).unwrap();
        {
            let Learner::Dpcq { agents, .. } = &mut sim.learner else { unreachable!() };
            for agent in agents.iter_mut() {
                agent.tables[0].set(0, 3, 4.25);
            }
        }
        sim.deploy_femtocells(1, InitMode::Scratch).unwrap();
        let Learner::Dpcq { agents, .. } = &sim.learner else { unreachable!() };
        assert_eq!(agents.len(), 3);
        for table in &agents[2].tables {
            assert!((0..DPCQ_STATE_COUNT).all(|s| table.row(s).iter().all(|v| *v == 0.0)));
        }
        // The newcomer transmits its cold-start minimum power.
        assert!((sim.alloc.femto_total_w(2) - 2.0 * dbm_to_watts(-20.0)).abs() < 1e-15);
    }

    #[test]
    fn docitive_newcomer_gets_the_donor_mean() {
        let config = SimConfig {
            initial_femto_count: 2,
            iterations: 4,
            subcarriers: 1,
            seed: 9,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(config, DeploymentSchedule::empty()).unwrap();
        {
            let Learner::Dpcq { agents, .. } = &mut sim.learner else { unreachable!() };
            agents[0].tables[0].set(0, 3, 4.0);
            agents[1].tables[0].set(0, 3, 2.0);
            agents[0].tables[0].set(5, 1, -0.5);
            agents[1].tables[0].set(5, 1, -0.5);
        }
        sim.deploy_femtocells(1, InitMode::Docitive).unwrap();
        let Learner::Dpcq { agents, .. } = &sim.learner else { unreachable!() };
        assert_eq!(agents.len(), 3);
        assert!((agents[2].tables[0].get(0, 3) - 3.0).abs() < 1e-12);
        assert!((agents[2].tables[0].get(5, 1) + 0.5).abs() < 1e-12);
        // Identical donors reduce the mean to a plain copy.
        let merged =
            docitive_init(DPCQ_STATE_COUNT, 18, &[&agents[0].tables[0], &agents[0].tables[0]], MergeRule::Mean)
                .unwrap();
        assert_eq!(merged, agents[0].tables[0]);
    }

    #[test]
    fn epsilon_schedule_examples() {
        let config = SimConfig {
            epsilon_off_at: Some(50_000),
            iterations: 60_000,
            ..SimConfig::default()
        };
        assert_eq!(epsilon_schedule(0, &config), 0.1);
        assert_eq!(epsilon_schedule(49_999, &config), 0.1);
        assert_eq!(epsilon_schedule(50_000, &config), 0.0);
        assert_eq!(epsilon_schedule(59_999, &config), 0.0);
        let always = SimConfig { epsilon_off_at: None, ..SimConfig::default() };
        assert_eq!(epsilon_schedule(123_456, &always), 0.1);
    }

    fn record_at(iteration: u64, macro_c: f64) -> IterationRecord {
        IterationRecord {
            iteration,
            n_femto: 1,
            macro_capacity: vec![macro_c],
            aggregate_femto_capacity: 0.0,
            mean_reward: 0.0,
            messages: 0,
            epsilon: 0.0,
            converged: false,
        }
    }

    #[test]
    fn convergence_check_band_edges() {
        let on_target: Vec<_> = (0..5).map(|i| record_at(i, 6.0)).collect();
        assert!(check_convergence(&on_target, 6.0, 1.0, 5));

        let mut spike = on_target.clone();
        spike[2].macro_capacity[0] = 7.5;
        assert!(!check_convergence(&spike, 6.0, 1.0, 5));

        let mut boundary = on_target;
        boundary[4].macro_capacity[0] = 7.0;
        assert!(check_convergence(&boundary, 6.0, 1.0, 5));

        // Not enough records to certify.
        assert!(!check_convergence(&[record_at(0, 6.0)], 6.0, 1.0, 2));
    }

    #[test]
    fn reconvergence_time_cases() {
        let instant: Vec<_> = (0..10).map(|i| record_at(i, 6.0)).collect();
        assert_eq!(reconvergence_time(&instant, 4, 6.0, 1.0, 3), Some(0));

        let never: Vec<_> = (0..10).map(|i| record_at(i, 9.0)).collect();
        assert_eq!(reconvergence_time(&never, 4, 6.0, 1.0, 3), None);

        // Out of band for two records after the deployment, then settled.
        let mut mixed: Vec<_> = (0..10).map(|i| record_at(i, 6.0)).collect();
        mixed[4].macro_capacity[0] = 9.0;
        mixed[5].macro_capacity[0] = 8.5;
        assert_eq!(reconvergence_time(&mixed, 4, 6.0, 1.0, 3), Some(2));
    }

    #[test]
    fn cpcq_rejects_deployments_and_oversized_instances() {
        let config = SimConfig {
            algorithm: Algorithm::Cpcq,
            subcarriers: 3,
            initial_femto_count: 2,
            iterations: 10,
            ..SimConfig::default()
        };
        let schedule = DeploymentSchedule {
            events: vec![DeploymentEvent { iteration: 5, add_count: 1, init: InitMode::Scratch }],
        };
        assert!(Simulation::new(config.clone(), schedule).is_err());

        let big = SimConfig { initial_femto_count: 5, ..config };
        let err = Simulation::new(big, DeploymentSchedule::empty()).unwrap_err();
        assert!(matches!(err, Error::ActionSpaceOverflow { .. }));
    }

    #[test]
    fn schedule_validation_rejects_bad_shapes() {
        let config = SimConfig { iterations: 100, ..SimConfig::default() };
        let non_increasing = DeploymentSchedule {
            events: vec![
                DeploymentEvent { iteration: 10, add_count: 1, init: InitMode::Scratch },
                DeploymentEvent { iteration: 10, add_count: 1, init: InitMode::Scratch },
            ],
        };
        assert!(non_increasing.validate(&config).is_err());

        let past_end = DeploymentSchedule {
            events: vec![DeploymentEvent { iteration: 100, add_count: 1, init: InitMode::Scratch }],
        };
        assert!(past_end.validate(&config).is_err());

        let zero_add = DeploymentSchedule {
            events: vec![DeploymentEvent { iteration: 5, add_count: 0, init: InitMode::Scratch }],
        };
        assert!(zero_add.validate(&config).is_err());
    }

    #[test]
    fn greedy_rollout_reaches_a_fixed_point_on_a_one_hot_table() {
        let mut config = SimConfig {
            algorithm: Algorithm::Cpcq,
            subcarriers: 1,
            initial_femto_count: 1,
            iterations: 0,
            seed: 3,
            ..SimConfig::default()
        };
        config.target_capacity = 5.0;
        let mut sim = Simulation::new(config, DeploymentSchedule::empty()).unwrap();
        let hot = {
            let Learner::Cpcq(c) = &mut sim.learner else { unreachable!() };
            c.table.set(0, 2, 5.0);
            c.table.set(1, 2, 5.0);
            c.action_matrix(2)
        };
        let rollout = sim.greedy_rollout(100).unwrap();
        assert!(rollout.cycled);
        assert_eq!(rollout.visited.len(), 1);
        assert_eq!(rollout.visited[0].0, hot);
    }

    #[test]
    fn trace_respects_the_log_stride() {
        let config = SimConfig {
            initial_femto_count: 1,
            iterations: 10,
            log_stride: 4,
            subcarriers: 2,
            seed: 2,
            ..SimConfig::default()
        };
        let sim = run(config, DeploymentSchedule::empty()).unwrap();
        let logged: Vec<u64> = sim.trace().iter().map(|r| r.iteration).collect();
        assert_eq!(logged, vec![0, 4, 8]);
    }
}
