//! Round orchestration: one learner's per-round bookkeeping and the
//! server-side exchange step for each mode.
//!
//! The protocol is a synchronous round barrier: every agent runs the same
//! number of local episodes, then all uploads happen at once, the server
//! aggregates (or averages, or concatenates, depending on the mode), and
//! every agent downloads and applies the result before anyone continues.
//! This module simulates that barrier faithfully by executing the steps
//! sequentially in agent order; nothing here depends on wall-clock timing.
//!
//! Every upload is pushed through its real wire encoding and decoded
//! again before aggregation, so payload sizes are measured on the actual
//! bytes that would travel and any schema violation fails loudly in
//! tests and simulations alike.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, EpisodeReport};
use crate::baselines::{
    average_snapshots, deserialize_raw, serialize_raw, snapshot_from_bytes, snapshot_to_bytes,
    BaselineError, RawExperienceMessage,
};
use crate::distill::{distill_policy, distill_value, raw_policy_distill, DistillConfig, DistillError};
use crate::env::{CartPole, EnvState, PolicyVector};
use crate::federation::{
    aggregate, deserialize, serialize, AggregationMode, ExchangeMessage, ExchangePayload,
    FederationError, GlobalProxyMemory,
};
use crate::memory::{ClusterGrid, ExperienceMemory, LocalProxyMemory, LocalValueMemory, StepRecorder};
use crate::nn::NeuralError;
use crate::seeding::{derive_seed, StreamKind, SHARED_STREAM_AGENT};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// What travels between agents, and how it is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No exchange at all; each agent learns alone.
    Solo,
    /// Clustered average policies out, cross-entropy distillation in.
    FrdPolicy,
    /// Clustered average values out, squared-error distillation in.
    FrdValue,
    /// Both proxy memories each round.
    FrdBoth,
    /// Raw (state, policy) experience out, cross-entropy distillation in.
    PolicyDistillation,
    /// Policy-network parameters out, elementwise mean back in.
    FedAvg,
}

pub const MODE_NAMES: [&str; 6] = [
    "solo",
    "frd_policy",
    "frd_value",
    "frd_both",
    "policy_distillation",
    "fedavg",
];

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Solo,
        Mode::FrdPolicy,
        Mode::FrdValue,
        Mode::FrdBoth,
        Mode::PolicyDistillation,
        Mode::FedAvg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Solo => "solo",
            Mode::FrdPolicy => "frd_policy",
            Mode::FrdValue => "frd_value",
            Mode::FrdBoth => "frd_both",
            Mode::PolicyDistillation => "policy_distillation",
            Mode::FedAvg => "fedavg",
        }
    }

    pub fn exchanges(&self) -> bool {
        !matches!(self, Mode::Solo)
    }

    pub fn records_policy_memory(&self) -> bool {
        matches!(self, Mode::FrdPolicy | Mode::FrdBoth)
    }

    pub fn records_value_memory(&self) -> bool {
        matches!(self, Mode::FrdValue | Mode::FrdBoth)
    }

    pub fn records_experience(&self) -> bool {
        matches!(self, Mode::PolicyDistillation)
    }

    /// FedAvg needs every averaged network to start from identical
    /// parameters; averaging unrelated random initializations tears the
    /// networks apart instead of combining them.
    pub fn shares_initial_policy(&self) -> bool {
        matches!(self, Mode::FedAvg)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(text: &str) -> Result<Mode, String> {
        match text {
            "solo" => Ok(Mode::Solo),
            "frd_policy" => Ok(Mode::FrdPolicy),
            "frd_value" => Ok(Mode::FrdValue),
            "frd_both" => Ok(Mode::FrdBoth),
            "policy_distillation" => Ok(Mode::PolicyDistillation),
            "fedavg" => Ok(Mode::FedAvg),
            other => Err(format!(
                "unknown mode {other:?}; expected one of {}",
                MODE_NAMES.join(", ")
            )),
        }
    }
}

/// One agent plus everything it owns during a run: its environment and
/// RNG streams, its per-round memories, and its episode bookkeeping.
pub struct AgentRunner {
    pub agent: Agent,
    env: CartPole,
    env_rng: ChaCha8Rng,
    pub proxy_memory: LocalProxyMemory,
    pub value_memory: LocalValueMemory,
    pub experience: ExperienceMemory,
    /// Episode lengths, in order, since the start of the run.
    pub durations: Vec<u32>,
    pub reports: Vec<EpisodeReport>,
    steps_since_exchange: u64,
}

impl AgentRunner {
    /// Build a runner whose four RNG streams are derived from the master
    /// seed and the agent id. When `mode` averages parameters, the
    /// averaged networks are initialized from a shared stream instead of
    /// the per-agent one so that all agents start identical.
    pub fn new(agent_id: u32, config: AgentConfig, master_seed: u64, grid: &ClusterGrid, mode: Mode) -> AgentRunner {
        let init_agent = if mode.shares_initial_policy() {
            SHARED_STREAM_AGENT
        } else {
            agent_id
        };
        let policy_seed = derive_seed(master_seed, init_agent, StreamKind::PolicyInit);
        let value_seed = derive_seed(master_seed, agent_id, StreamKind::ValueInit);
        let sampling_seed = derive_seed(master_seed, agent_id, StreamKind::ActionSampling);
        let env_seed = derive_seed(master_seed, agent_id, StreamKind::Env);
        AgentRunner {
            agent: Agent::new(agent_id, config, policy_seed, value_seed, sampling_seed),
            env: CartPole::new(),
            env_rng: ChaCha8Rng::seed_from_u64(env_seed),
            proxy_memory: LocalProxyMemory::new(grid.clone()),
            value_memory: LocalValueMemory::new(grid.clone()),
            experience: ExperienceMemory::new(),
            durations: Vec::new(),
            reports: Vec::new(),
            steps_since_exchange: 0,
        }
    }

    pub fn episodes_run(&self) -> usize {
        self.durations.len()
    }

    pub fn steps_since_exchange(&self) -> u64 {
        self.steps_since_exchange
    }

    /// Run one episode, learn from it, and feed the memories the mode
    /// wants filled. Returns the episode length.
    pub fn run_one_episode(&mut self, mode: Mode) -> Result<u32, RunError> {
        let AgentRunner {
            agent,
            env,
            env_rng,
            proxy_memory,
            value_memory,
            experience,
            ..
        } = self;
        let mut recorders: Vec<&mut dyn StepRecorder> = Vec::new();
        if mode.records_policy_memory() {
            recorders.push(proxy_memory);
        }
        if mode.records_value_memory() {
            recorders.push(value_memory);
        }
        if mode.records_experience() {
            recorders.push(experience);
        }
        let report = agent.run_episode(env, env_rng, &mut recorders)?;
        let length = report.length;
        self.durations.push(length);
        self.reports.push(report);
        self.steps_since_exchange += length as u64;
        Ok(length)
    }
}

/// One agent's share of a round: what it uploaded and what the
/// distillation (if any) did to its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRoundLog {
    pub agent_id: u32,
    pub upload_records: u64,
    pub upload_bytes: u64,
    /// Environment steps taken since the previous exchange.
    pub steps: u64,
    /// One loss trace per distilled network (policy first, then value).
    pub distill_losses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u32,
    pub agents: Vec<AgentRoundLog>,
}

impl RoundLog {
    pub fn total_records(&self) -> u64 {
        self.agents.iter().map(|a| a.upload_records).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.agents.iter().map(|a| a.upload_bytes).sum()
    }

    pub fn max_agent_records(&self) -> u64 {
        self.agents.iter().map(|a| a.upload_records).max().unwrap_or(0)
    }
}

/// Run one full exchange for `mode` over all runners: collect uploads
/// through their wire formats, combine them, and apply the result to
/// every agent. `Solo` is a no-op that produces an empty log.
pub fn exchange(
    runners: &mut [AgentRunner],
    mode: Mode,
    round: u32,
    aggregation: AggregationMode,
    distill_cfg: &DistillConfig,
    fedavg_include_value: bool,
) -> Result<RoundLog, RunError> {
    if runners.is_empty() {
        return Ok(RoundLog {
            round,
            agents: Vec::new(),
        });
    }
    let mut log = RoundLog {
        round,
        agents: runners
            .iter()
            .map(|r| AgentRoundLog {
                agent_id: r.agent.id(),
                upload_records: 0,
                upload_bytes: 0,
                steps: r.steps_since_exchange,
                distill_losses: Vec::new(),
            })
            .collect(),
    };
    for runner in runners.iter_mut() {
        runner.steps_since_exchange = 0;
    }

    match mode {
        Mode::Solo => {
            log.agents.clear();
        }
        Mode::FrdPolicy => {
            exchange_policy_memories(runners, round, aggregation, distill_cfg, &mut log)?;
        }
        Mode::FrdValue => {
            exchange_value_memories(runners, round, aggregation, distill_cfg, &mut log)?;
        }
        Mode::FrdBoth => {
            exchange_policy_memories(runners, round, aggregation, distill_cfg, &mut log)?;
            exchange_value_memories(runners, round, aggregation, distill_cfg, &mut log)?;
        }
        Mode::PolicyDistillation => {
            exchange_raw_experience(runners, round, distill_cfg, &mut log)?;
        }
        Mode::FedAvg => {
            exchange_parameters(runners, fedavg_include_value, &mut log)?;
        }
    }
    Ok(log)
}

fn exchange_policy_memories(
    runners: &mut [AgentRunner],
    round: u32,
    aggregation: AggregationMode,
    distill_cfg: &DistillConfig,
    log: &mut RoundLog,
) -> Result<(), RunError> {
    let grid = runners[0].proxy_memory.grid().clone();
    let mut texts = Vec::with_capacity(runners.len());
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let records = runner.proxy_memory.finalize();
        let message = ExchangeMessage::new(
            runner.agent.id(),
            round,
            ExchangePayload::Policy(records),
        )?;
        let text = serialize(&message);
        agent_log.upload_records += message.record_count() as u64;
        agent_log.upload_bytes += text.len() as u64;
        texts.push(text);
    }
    let messages: Vec<ExchangeMessage> = texts
        .iter()
        .map(|t| deserialize(t))
        .collect::<Result<_, _>>()?;
    let global = aggregate(&messages, aggregation)?;
    if global.is_empty() {
        return Ok(());
    }
    let GlobalProxyMemory::Policy(entries) = &global else {
        unreachable!("policy messages aggregate to a policy memory");
    };
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let trace = distill_policy(&mut runner.agent, &grid, entries, distill_cfg)?;
        agent_log.distill_losses.push(trace);
    }
    Ok(())
}

fn exchange_value_memories(
    runners: &mut [AgentRunner],
    round: u32,
    aggregation: AggregationMode,
    distill_cfg: &DistillConfig,
    log: &mut RoundLog,
) -> Result<(), RunError> {
    let grid = runners[0].value_memory.grid().clone();
    let mut texts = Vec::with_capacity(runners.len());
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let records = runner.value_memory.finalize();
        let message =
            ExchangeMessage::new(runner.agent.id(), round, ExchangePayload::Value(records))?;
        let text = serialize(&message);
        agent_log.upload_records += message.record_count() as u64;
        agent_log.upload_bytes += text.len() as u64;
        texts.push(text);
    }
    let messages: Vec<ExchangeMessage> = texts
        .iter()
        .map(|t| deserialize(t))
        .collect::<Result<_, _>>()?;
    let global = aggregate(&messages, aggregation)?;
    if global.is_empty() {
        return Ok(());
    }
    let GlobalProxyMemory::Value(entries) = &global else {
        unreachable!("value messages aggregate to a value memory");
    };
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let trace = distill_value(&mut runner.agent, &grid, entries, distill_cfg)?;
        agent_log.distill_losses.push(trace);
    }
    Ok(())
}

fn exchange_raw_experience(
    runners: &mut [AgentRunner],
    round: u32,
    distill_cfg: &DistillConfig,
    log: &mut RoundLog,
) -> Result<(), RunError> {
    let mut texts = Vec::with_capacity(runners.len());
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let entries = runner.experience.take_entries();
        let message = RawExperienceMessage::new(runner.agent.id(), round, entries)?;
        let text = serialize_raw(&message);
        agent_log.upload_records += message.entries.len() as u64;
        agent_log.upload_bytes += text.len() as u64;
        texts.push(text);
    }
    let mut decoded: Vec<RawExperienceMessage> = texts
        .iter()
        .map(|t| deserialize_raw(t))
        .collect::<Result<_, _>>()?;
    decoded.sort_by_key(|m| m.agent_id);
    let union: Vec<(EnvState, PolicyVector)> =
        decoded.into_iter().flat_map(|m| m.entries).collect();
    if union.is_empty() {
        return Ok(());
    }
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let trace = raw_policy_distill(&mut runner.agent, &union, distill_cfg)?;
        agent_log.distill_losses.push(trace);
    }
    Ok(())
}

fn exchange_parameters(
    runners: &mut [AgentRunner],
    include_value: bool,
    log: &mut RoundLog,
) -> Result<(), RunError> {
    let mut policy_snaps = Vec::with_capacity(runners.len());
    for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
        let snap = runner.agent.policy_net().snapshot();
        let bytes = snapshot_to_bytes(&snap);
        agent_log.upload_records += snap.params.len() as u64;
        agent_log.upload_bytes += bytes.len() as u64;
        policy_snaps.push(snapshot_from_bytes(&bytes)?);
    }
    let policy_mean = average_snapshots(&policy_snaps)?;
    for runner in runners.iter_mut() {
        runner.agent.policy_net_mut().load_snapshot(&policy_mean)?;
    }

    if include_value {
        let mut value_snaps = Vec::with_capacity(runners.len());
        for (runner, agent_log) in runners.iter_mut().zip(&mut log.agents) {
            let snap = runner.agent.value_net().snapshot();
            let bytes = snapshot_to_bytes(&snap);
            agent_log.upload_records += snap.params.len() as u64;
            agent_log.upload_bytes += bytes.len() as u64;
            value_snaps.push(snapshot_from_bytes(&bytes)?);
        }
        let value_mean = average_snapshots(&value_snaps)?;
        for runner in runners.iter_mut() {
            runner.agent.value_net_mut().load_snapshot(&value_mean)?;
        }
    }
    Ok(())
}
