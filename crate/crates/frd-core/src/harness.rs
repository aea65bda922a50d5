//! Experiment driver: named settings, mission evaluation, group runs,
//! multi-seed sweeps, statistics, and CSV output.
//!
//! A *mission* is complete for one agent when its trailing window of
//! episode durations (10 episodes by default) has a mean at or above the
//! threshold. A *group* run keeps all agents in lockstep — everyone runs
//! episode k before anyone runs episode k+1, matching the synchronous
//! exchange barrier — and stops the instant any single agent's mission
//! completes, checked after every episode.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::agent::AgentConfig;
use crate::distill::DistillConfig;
use crate::federation::{AggregationMode, RoundSchedule};
use crate::memory::{ClusterGrid, DEFAULT_GRID_BOUNDS, STATE_DIMS};
use crate::rounds::{exchange, AgentRunner, Mode, RoundLog, RunError};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 450.0;
pub const DEFAULT_EPISODE_CAP: u32 = 3000;
pub const PRESET_COUNT: u32 = 7;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid setting: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Every knob of one experiment. `Default` gives the base configuration
/// that the numbered presets and config files override.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetting {
    /// Label used in CSV rows and output paths.
    pub id: String,
    /// Grid subsections per state dimension (S).
    pub subsections: usize,
    /// Episodes between exchanges (E).
    pub exchange_period: u32,
    /// Episodes of purely local learning before the first exchange (I).
    pub initial_episodes: u32,
    /// Hidden width of both networks (n).
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub mode: Mode,
    /// Number of agents in the group (U).
    pub agents: u32,
    pub seed: u64,
    /// Mission threshold: trailing-window mean duration to reach.
    pub threshold: f64,
    /// Trailing window length in episodes.
    pub window: usize,
    /// Per-agent episode budget before the run is declared incomplete.
    pub episode_cap: u32,
    pub aggregation: AggregationMode,
    pub gamma: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub entropy_coeff: f64,
    pub distill_epochs: u32,
    pub distill_lr: f64,
    /// Whether parameter averaging also averages the value networks.
    pub fedavg_include_value: bool,
    pub grid_bounds: [(f64, f64); STATE_DIMS],
}

impl Default for ExperimentSetting {
    fn default() -> ExperimentSetting {
        let agent = AgentConfig::default();
        ExperimentSetting {
            id: "custom".into(),
            subsections: 100,
            exchange_period: 25,
            initial_episodes: 50,
            hidden_width: agent.hidden_width,
            hidden_layers: agent.hidden_layers,
            mode: Mode::FrdPolicy,
            agents: 2,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            episode_cap: DEFAULT_EPISODE_CAP,
            aggregation: AggregationMode::Unweighted,
            gamma: agent.gamma,
            policy_lr: agent.policy_lr,
            value_lr: agent.value_lr,
            entropy_coeff: agent.entropy_coeff,
            distill_epochs: 50,
            distill_lr: 1e-3,
            fedavg_include_value: false,
            grid_bounds: DEFAULT_GRID_BOUNDS,
        }
    }
}

/// The seven canonical hyperparameter presets, numbered 1–7. Each tuple
/// of (S, E, I, n, layers) differs; everything else is the default.
pub fn preset(number: u32) -> Option<ExperimentSetting> {
    let (subsections, exchange_period, initial_episodes, hidden_width, hidden_layers) =
        match number {
            1 => (100, 25, 50, 24, 2),
            2 => (100, 25, 50, 100, 2),
            3 => (100, 25, 100, 100, 2),
            4 => (50, 25, 50, 100, 2),
            5 => (100, 10, 0, 24, 1),
            6 => (100, 50, 0, 24, 1),
            7 => (100, 25, 125, 24, 1),
            _ => return None,
        };
    Some(ExperimentSetting {
        id: number.to_string(),
        subsections,
        exchange_period,
        initial_episodes,
        hidden_width,
        hidden_layers,
        ..ExperimentSetting::default()
    })
}

impl ExperimentSetting {
    pub fn validate(&self) -> Result<(), String> {
        if self.agents == 0 {
            return Err("agents must be at least 1".into());
        }
        if self.subsections == 0 {
            return Err("subsections must be at least 1".into());
        }
        if self.exchange_period == 0 {
            return Err("exchange_period must be at least 1".into());
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err("network needs at least one hidden unit and layer".into());
        }
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        if self.episode_cap == 0 {
            return Err("episode_cap must be at least 1".into());
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(format!("bad threshold {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("bad gamma {}", self.gamma));
        }
        for (name, lr) in [
            ("policy_lr", self.policy_lr),
            ("value_lr", self.value_lr),
            ("distill_lr", self.distill_lr),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(format!("bad {name} {lr}"));
            }
        }
        if !(self.entropy_coeff.is_finite() && self.entropy_coeff >= 0.0) {
            return Err(format!("bad entropy_coeff {}", self.entropy_coeff));
        }
        if self.distill_epochs == 0 {
            return Err("distill_epochs must be at least 1".into());
        }
        for (lo, hi) in self.grid_bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(format!("bad grid bound ({lo}, {hi})"));
            }
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            gamma: self.gamma,
            policy_lr: self.policy_lr,
            value_lr: self.value_lr,
            entropy_coeff: self.entropy_coeff,
        }
    }

    pub fn grid(&self) -> ClusterGrid {
        ClusterGrid::with_bounds(self.subsections, self.grid_bounds)
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            epochs: self.distill_epochs,
            learning_rate: self.distill_lr,
        }
    }

    pub fn schedule(&self) -> RoundSchedule {
        RoundSchedule::new(self.initial_episodes, self.exchange_period)
    }
}

/// True iff the window is exactly full and its mean duration reaches the
/// threshold (ties count as reaching it).
pub fn windowed_mission_complete(last_durations: &[u32], threshold: f64, window: usize) -> bool {
    if window == 0 || last_durations.len() != window {
        return false;
    }
    let sum: u64 = last_durations.iter().map(|&d| u64::from(d)).sum();
    sum as f64 / window as f64 >= threshold
}

/// [`windowed_mission_complete`] with the default 10-episode window.
pub fn mission_complete(last_durations: &[u32], threshold: f64) -> bool {
    windowed_mission_complete(last_durations, threshold, DEFAULT_WINDOW)
}

fn window_tail(durations: &[u32], window: usize) -> &[u32] {
    &durations[durations.len().saturating_sub(window)..]
}

/// Everything one group run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRunResult {
    pub setting_id: String,
    pub mode: Mode,
    pub agents: u32,
    pub seed: u64,
    /// The completing agent's episode count, or the cap when incomplete.
    pub episodes: u32,
    pub complete: bool,
    pub completing_agent: Option<u32>,
    /// Episode lengths per agent, in execution order.
    pub durations: Vec<Vec<u32>>,
    pub rounds: Vec<RoundLog>,
    pub total_payload_records: u64,
    pub total_payload_bytes: u64,
}

/// Run one full group experiment: lockstep episodes, scheduled exchanges,
/// stop at the first completed mission or at the episode cap.
pub fn run_group(setting: &ExperimentSetting) -> Result<GroupRunResult, HarnessError> {
    setting.validate().map_err(HarnessError::Config)?;
    let grid = setting.grid();
    let config = setting.agent_config();
    let mut runners: Vec<AgentRunner> = (0..setting.agents)
        .map(|id| AgentRunner::new(id, config.clone(), setting.seed, &grid, setting.mode))
        .collect();
    let schedule = setting.schedule();
    let distill_cfg = setting.distill_config();

    let mut rounds: Vec<RoundLog> = Vec::new();
    let mut completion: Option<u32> = None;

    'waves: for wave in 0..setting.episode_cap {
        for runner in runners.iter_mut() {
            runner.run_one_episode(setting.mode)?;
            let tail = window_tail(&runner.durations, setting.window);
            if windowed_mission_complete(tail, setting.threshold, setting.window) {
                completion = Some(runner.agent.id());
                break 'waves;
            }
        }
        let completed_episodes = wave + 1;
        if setting.mode.exchanges() && schedule.should_exchange(completed_episodes) {
            let round = schedule.round_index(completed_episodes);
            let log = exchange(
                &mut runners,
                setting.mode,
                round,
                setting.aggregation,
                &distill_cfg,
                setting.fedavg_include_value,
            )?;
            rounds.push(log);
        }
    }

    let episodes = match completion {
        Some(agent_id) => runners[agent_id as usize].episodes_run() as u32,
        None => setting.episode_cap,
    };
    let total_payload_records = rounds.iter().map(RoundLog::total_records).sum();
    let total_payload_bytes = rounds.iter().map(RoundLog::total_bytes).sum();
    Ok(GroupRunResult {
        setting_id: setting.id.clone(),
        mode: setting.mode,
        agents: setting.agents,
        seed: setting.seed,
        episodes,
        complete: completion.is_some(),
        completing_agent: completion,
        durations: runners.into_iter().map(|r| r.durations).collect(),
        rounds,
        total_payload_records,
        total_payload_bytes,
    })
}

// ---------------------------------------------------------------------
// CSV rows.

pub const CSV_HEADER: &str =
    "setting,mode,agents,seed,episodes,complete,total_payload_records,total_payload_bytes";

/// One result row, as written to and read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub setting: String,
    pub mode: Mode,
    pub agents: u32,
    pub seed: u64,
    pub episodes: u32,
    pub complete: bool,
    pub total_payload_records: u64,
    pub total_payload_bytes: u64,
}

impl From<&GroupRunResult> for CsvRow {
    fn from(result: &GroupRunResult) -> CsvRow {
        CsvRow {
            setting: result.setting_id.clone(),
            mode: result.mode,
            agents: result.agents,
            seed: result.seed,
            episodes: result.episodes,
            complete: result.complete,
            total_payload_records: result.total_payload_records,
            total_payload_bytes: result.total_payload_bytes,
        }
    }
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.setting,
            self.mode,
            self.agents,
            self.seed,
            self.episodes,
            self.complete,
            self.total_payload_records,
            self.total_payload_bytes
        )
    }
}

pub fn csv_row(result: &GroupRunResult) -> String {
    CsvRow::from(result).to_line()
}

/// Parse a results CSV (header plus rows) back into rows. The inverse of
/// writing, so statistics recomputed from a file match the originals.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        Some(header) => return Err(format!("line 1: unexpected header {header:?}")),
        None => return Err("line 1: empty file".into()),
    }
    let mut rows = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!(
                "line {line_no}: expected 8 fields, found {}",
                fields.len()
            ));
        }
        let parse_err = |what: &str, value: &str| format!("line {line_no}: bad {what} {value:?}");
        rows.push(CsvRow {
            setting: fields[0].to_string(),
            mode: Mode::from_str(fields[1]).map_err(|_| parse_err("mode", fields[1]))?,
            agents: fields[2].parse().map_err(|_| parse_err("agents", fields[2]))?,
            seed: fields[3].parse().map_err(|_| parse_err("seed", fields[3]))?,
            episodes: fields[4].parse().map_err(|_| parse_err("episodes", fields[4]))?,
            complete: match fields[5] {
                "true" => true,
                "false" => false,
                other => return Err(parse_err("complete", other)),
            },
            total_payload_records: fields[6]
                .parse()
                .map_err(|_| parse_err("records", fields[6]))?,
            total_payload_bytes: fields[7]
                .parse()
                .map_err(|_| parse_err("bytes", fields[7]))?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Statistics.

/// Quantile by linear interpolation between order statistics:
/// rank h = (n − 1)p, interpolating between floor(h) and ceil(h).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile fraction out of range");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Order statistics of episodes-to-completion over a set of runs.
/// Incomplete runs contribute their cap value, which biases results
/// toward the cap rather than dropping the hardest seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStats {
    pub runs: usize,
    pub completed: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

impl SweepStats {
    pub fn from_episodes(episodes: &[u32], completed: usize) -> Option<SweepStats> {
        if episodes.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = episodes.iter().map(|&e| f64::from(e)).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Some(SweepStats {
            runs: sorted.len(),
            completed,
            mean,
            median: quantile(&sorted, 0.5),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }

    pub fn interquartile_range(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Per-(setting, mode, agents) statistics over a set of result rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub setting: String,
    pub mode: Mode,
    pub agents: u32,
    pub stats: SweepStats,
}

pub fn group_stats(rows: &[CsvRow]) -> Vec<SweepCell> {
    let mut groups: BTreeMap<(String, String, u32), (Vec<u32>, usize)> = BTreeMap::new();
    for row in rows {
        let entry = groups
            .entry((row.setting.clone(), row.mode.to_string(), row.agents))
            .or_default();
        entry.0.push(row.episodes);
        entry.1 += usize::from(row.complete);
    }
    groups
        .into_iter()
        .map(|((setting, mode, agents), (episodes, completed))| SweepCell {
            setting,
            mode: Mode::from_str(&mode).expect("mode came from Mode::to_string"),
            agents,
            stats: SweepStats::from_episodes(&episodes, completed)
                .expect("group is non-empty by construction"),
        })
        .collect()
}

// ---------------------------------------------------------------------
// Sweeps.

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<CsvRow>,
    pub cells: Vec<SweepCell>,
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The per-run output path: `<out>/<setting>/<mode>/U<agents>/seed<k>.csv`.
pub fn run_csv_path(out_dir: &Path, row: &CsvRow) -> PathBuf {
    out_dir
        .join(&row.setting)
        .join(row.mode.to_string())
        .join(format!("U{}", row.agents))
        .join(format!("seed{}.csv", row.seed))
}

/// Run the cartesian product of agent counts and seeds over one base
/// setting. Each run lands in its own CSV file under `out_dir` (when
/// given), plus a combined `summary.csv`; `on_run` observes every result
/// as it finishes.
pub fn run_sweep(
    base: &ExperimentSetting,
    agent_counts: &[u32],
    seeds: &[u64],
    out_dir: Option<&Path>,
    mut on_run: impl FnMut(&GroupRunResult),
) -> Result<SweepOutcome, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("seed list is empty".into()));
    }
    if agent_counts.is_empty() {
        return Err(HarnessError::Config("agent-count list is empty".into()));
    }
    let mut rows = Vec::with_capacity(agent_counts.len() * seeds.len());
    for &agents in agent_counts {
        for &seed in seeds {
            let setting = ExperimentSetting {
                agents,
                seed,
                ..base.clone()
            };
            let result = run_group(&setting)?;
            on_run(&result);
            let row = CsvRow::from(&result);
            if let Some(dir) = out_dir {
                let text = format!("{CSV_HEADER}\n{}\n", row.to_line());
                write_text(&run_csv_path(dir, &row), &text)?;
            }
            rows.push(row);
        }
    }
    if let Some(dir) = out_dir {
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for row in &rows {
            let _ = writeln!(text, "{}", row.to_line());
        }
        write_text(&dir.join("summary.csv"), &text)?;
    }
    let cells = group_stats(&rows);
    Ok(SweepOutcome { rows, cells })
}

// ---------------------------------------------------------------------
// Config files and argument grammars.

/// Parse a flat `key = value` settings file. Keys mirror the
/// [`ExperimentSetting`] fields; `preset = <1..7>` loads a preset as the
/// new base and may be overridden by later keys. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ExperimentSetting, String> {
    let mut setting = ExperimentSetting::default();
    for (offset, raw_line) in text.lines().enumerate() {
        let line_no = offset + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {line_no}: expected key = value, got {line:?}"));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| format!("line {line_no}: bad {what} {value:?}");
        match key {
            "preset" => {
                let number: u32 = value.parse().map_err(|_| bad("preset"))?;
                let id = setting.id.clone();
                setting = preset(number)
                    .ok_or_else(|| format!("line {line_no}: no preset {number}"))?;
                if id != ExperimentSetting::default().id {
                    setting.id = id;
                }
            }
            "id" => setting.id = value.to_string(),
            "subsections" => setting.subsections = value.parse().map_err(|_| bad(key))?,
            "exchange_period" => setting.exchange_period = value.parse().map_err(|_| bad(key))?,
            "initial_episodes" => {
                setting.initial_episodes = value.parse().map_err(|_| bad(key))?
            }
            "hidden_width" => setting.hidden_width = value.parse().map_err(|_| bad(key))?,
            "hidden_layers" => setting.hidden_layers = value.parse().map_err(|_| bad(key))?,
            "mode" => setting.mode = Mode::from_str(value).map_err(|e| format!("line {line_no}: {e}"))?,
            "agents" => setting.agents = value.parse().map_err(|_| bad(key))?,
            "seed" => setting.seed = value.parse().map_err(|_| bad(key))?,
            "threshold" => setting.threshold = value.parse().map_err(|_| bad(key))?,
            "window" => setting.window = value.parse().map_err(|_| bad(key))?,
            "episode_cap" => setting.episode_cap = value.parse().map_err(|_| bad(key))?,
            "aggregation" => {
                setting.aggregation =
                    AggregationMode::from_str(value).map_err(|e| format!("line {line_no}: {e}"))?
            }
            "gamma" => setting.gamma = value.parse().map_err(|_| bad(key))?,
            "policy_lr" => setting.policy_lr = value.parse().map_err(|_| bad(key))?,
            "value_lr" => setting.value_lr = value.parse().map_err(|_| bad(key))?,
            "entropy_coeff" => setting.entropy_coeff = value.parse().map_err(|_| bad(key))?,
            "distill_epochs" => setting.distill_epochs = value.parse().map_err(|_| bad(key))?,
            "distill_lr" => setting.distill_lr = value.parse().map_err(|_| bad(key))?,
            "fedavg_include_value" => {
                setting.fedavg_include_value = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad(key)),
                }
            }
            "grid_bounds" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 * STATE_DIMS {
                    return Err(format!(
                        "line {line_no}: grid_bounds needs {} comma-separated numbers",
                        2 * STATE_DIMS
                    ));
                }
                let mut numbers = [0.0; 2 * STATE_DIMS];
                for (slot, part) in numbers.iter_mut().zip(&parts) {
                    *slot = part.parse().map_err(|_| bad(key))?;
                }
                for d in 0..STATE_DIMS {
                    setting.grid_bounds[d] = (numbers[2 * d], numbers[2 * d + 1]);
                }
            }
            other => return Err(format!("line {line_no}: unknown key {other:?}")),
        }
    }
    setting.validate().map_err(|e| format!("invalid setting: {e}"))?;
    Ok(setting)
}

/// Render a setting in the config-file format that [`parse_config`] reads.
pub fn render_config(setting: &ExperimentSetting) -> String {
    let b = setting.grid_bounds;
    format!(
        "id = {}\nsubsections = {}\nexchange_period = {}\ninitial_episodes = {}\n\
         hidden_width = {}\nhidden_layers = {}\nmode = {}\nagents = {}\nseed = {}\n\
         threshold = {}\nwindow = {}\nepisode_cap = {}\naggregation = {}\ngamma = {}\n\
         policy_lr = {}\nvalue_lr = {}\nentropy_coeff = {}\ndistill_epochs = {}\n\
         distill_lr = {}\nfedavg_include_value = {}\n\
         grid_bounds = {},{},{},{},{},{},{},{}\n",
        setting.id,
        setting.subsections,
        setting.exchange_period,
        setting.initial_episodes,
        setting.hidden_width,
        setting.hidden_layers,
        setting.mode,
        setting.agents,
        setting.seed,
        setting.threshold,
        setting.window,
        setting.episode_cap,
        setting.aggregation,
        setting.gamma,
        setting.policy_lr,
        setting.value_lr,
        setting.entropy_coeff,
        setting.distill_epochs,
        setting.distill_lr,
        setting.fedavg_include_value,
        b[0].0, b[0].1, b[1].0, b[1].1, b[2].0, b[2].1, b[3].0, b[3].1,
    )
}

/// Parse `"7"`, `"1,2,3"`, or `"0..10"` (half-open range) into seeds.
pub fn parse_seed_spec(spec: &str) -> Result<Vec<u64>, String> {
    let spec = spec.trim();
    if let Some((start, end)) = spec.split_once("..") {
        let start: u64 = start
            .trim()
            .parse()
            .map_err(|_| format!("bad range start {start:?}"))?;
        let end: u64 = end
            .trim()
            .parse()
            .map_err(|_| format!("bad range end {end:?}"))?;
        if start >= end {
            return Err(format!("empty seed range {spec:?}"));
        }
        return Ok((start..end).collect());
    }
    spec.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| format!("bad seed {part:?}"))
        })
        .collect()
}

/// Parse `"4"` or `"1,4"` into agent counts.
pub fn parse_agent_counts(spec: &str) -> Result<Vec<u32>, String> {
    spec.split(',')
        .map(|part| {
            let count: u32 = part
                .trim()
                .parse()
                .map_err(|_| format!("bad agent count {part:?}"))?;
            if count == 0 {
                return Err("agent count must be at least 1".into());
            }
            Ok(count)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mission_requires_a_full_window_reaching_the_threshold() {
        assert!(mission_complete(&[500; 10], 450.0));
        assert!(!mission_complete(&[500; 9], 450.0));
        assert!(!mission_complete(&[500; 11], 450.0)); // not a 10-window
        let mixed = [400, 400, 400, 400, 400, 500, 500, 500, 500, 500];
        assert!(mission_complete(&mixed, 450.0)); // mean exactly 450: ties pass
        assert!(!mission_complete(&mixed, 450.1));
        assert!(windowed_mission_complete(&[10, 20], 15.0, 2));
        assert!(!windowed_mission_complete(&[10, 20], 15.0, 3));
    }

    #[test]
    fn presets_match_the_published_grid() {
        let table = [
            (1, 100, 25, 50, 24, 2),
            (2, 100, 25, 50, 100, 2),
            (3, 100, 25, 100, 100, 2),
            (4, 50, 25, 50, 100, 2),
            (5, 100, 10, 0, 24, 1),
            (6, 100, 50, 0, 24, 1),
            (7, 100, 25, 125, 24, 1),
        ];
        for (number, s, e, i, n, layers) in table {
            let p = preset(number).unwrap();
            assert_eq!(p.id, number.to_string());
            assert_eq!(p.subsections, s, "preset {number} S");
            assert_eq!(p.exchange_period, e, "preset {number} E");
            assert_eq!(p.initial_episodes, i, "preset {number} I");
            assert_eq!(p.hidden_width, n, "preset {number} n");
            assert_eq!(p.hidden_layers, layers, "preset {number} layers");
            assert!(p.validate().is_ok());
        }
        assert!(preset(0).is_none());
        assert!(preset(8).is_none());
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let sorted = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile(&sorted, 0.25), 17.5);
        assert_eq!(quantile(&sorted, 0.5), 25.0);
        assert_eq!(quantile(&sorted, 0.75), 32.5);
        assert_eq!(quantile(&sorted, 0.0), 10.0);
        assert_eq!(quantile(&sorted, 1.0), 40.0);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);

        let stats = SweepStats::from_episodes(&[10, 20, 30, 40], 4).unwrap();
        assert_eq!(stats.median, 25.0);
        assert_eq!(stats.q25, 17.5);
        assert_eq!(stats.q75, 32.5);
        assert_eq!(stats.mean, 25.0);
        assert_eq!(stats.min, 10.0);
        assert_eq!(stats.max, 40.0);
        assert!(stats.q25 <= stats.median && stats.median <= stats.q75);
        assert!(SweepStats::from_episodes(&[], 0).is_none());
    }

    #[test]
    fn zero_threshold_completes_at_exactly_one_window() {
        let setting = ExperimentSetting {
            id: "t0".into(),
            mode: Mode::Solo,
            agents: 1,
            threshold: 0.0,
            episode_cap: 50,
            ..ExperimentSetting::default()
        };
        let result = run_group(&setting).unwrap();
        assert!(result.complete);
        assert_eq!(result.episodes, DEFAULT_WINDOW as u32);
        assert_eq!(result.completing_agent, Some(0));
        assert_eq!(result.durations[0].len(), DEFAULT_WINDOW);
        assert!(result.rounds.is_empty());
        assert_eq!(result.total_payload_records, 0);
    }

    fn small_group_setting() -> ExperimentSetting {
        ExperimentSetting {
            id: "tiny".into(),
            subsections: 5,
            exchange_period: 5,
            initial_episodes: 0,
            hidden_width: 8,
            hidden_layers: 1,
            mode: Mode::FrdPolicy,
            agents: 2,
            seed: 11,
            threshold: 30.0,
            window: 5,
            episode_cap: 60,
            distill_epochs: 3,
            ..ExperimentSetting::default()
        }
    }

    #[test]
    fn identical_settings_replay_identically() {
        let setting = small_group_setting();
        let first = run_group(&setting).unwrap();
        let second = run_group(&setting).unwrap();
        assert_eq!(first, second);
        assert_eq!(csv_row(&first), csv_row(&second));
        // Exchanges actually happened, so the replay covered the full
        // upload-aggregate-distill pipeline.
        assert!(!first.rounds.is_empty());
        assert!(first.total_payload_records > 0);
        assert!(first.total_payload_bytes > first.total_payload_records);
    }

    #[test]
    fn different_seeds_diverge() {
        let base = small_group_setting();
        let first = run_group(&base).unwrap();
        let other = run_group(&ExperimentSetting {
            seed: 12,
            ..base
        })
        .unwrap();
        assert_ne!(first.durations, other.durations);
    }

    #[test]
    fn csv_rows_round_trip_through_text() {
        let row = CsvRow {
            setting: "2".into(),
            mode: Mode::FrdPolicy,
            agents: 4,
            seed: 7,
            episodes: 123,
            complete: true,
            total_payload_records: 10,
            total_payload_bytes: 220,
        };
        assert_eq!(row.to_line(), "2,frd_policy,4,7,123,true,10,220");
        let text = format!("{CSV_HEADER}\n{}\n", row.to_line());
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, vec![row]);

        assert!(parse_csv("nope\n").unwrap_err().contains("header"));
        let bad = format!("{CSV_HEADER}\n2,frd_policy,4,7,123,yes,10,220\n");
        assert!(parse_csv(&bad).unwrap_err().contains("line 2"));
    }

    #[test]
    fn stats_recomputed_from_csv_match_the_originals() {
        let rows: Vec<CsvRow> = [(1u64, 40u32), (2, 20), (3, 30), (4, 10)]
            .iter()
            .map(|&(seed, episodes)| CsvRow {
                setting: "s".into(),
                mode: Mode::Solo,
                agents: 1,
                seed,
                episodes,
                complete: true,
                total_payload_records: 0,
                total_payload_bytes: 0,
            })
            .collect();
        let direct = group_stats(&rows);
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for row in &rows {
            text.push_str(&row.to_line());
            text.push('\n');
        }
        let reread = group_stats(&parse_csv(&text).unwrap());
        assert_eq!(direct, reread);
        assert_eq!(direct.len(), 1);
        assert_eq!(direct[0].stats.median, 25.0);
        assert_eq!(direct[0].stats.completed, 4);
    }

    #[test]
    fn sweeps_write_the_expected_layout() {
        let dir = std::env::temp_dir().join(format!("frd-harness-test-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let base = ExperimentSetting {
            id: "t0".into(),
            mode: Mode::Solo,
            threshold: 0.0,
            episode_cap: 30,
            ..ExperimentSetting::default()
        };
        let mut seen = 0;
        let outcome = run_sweep(&base, &[1], &[1, 2], Some(&dir), |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(outcome.rows.len(), 2);
        assert_eq!(outcome.cells.len(), 1);
        assert_eq!(outcome.cells[0].stats.runs, 2);
        assert_eq!(outcome.cells[0].stats.completed, 2);

        for seed in [1, 2] {
            let path = dir.join("t0").join("solo").join("U1").join(format!("seed{seed}.csv"));
            let text = std::fs::read_to_string(&path).unwrap();
            let rows = parse_csv(&text).unwrap();
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].seed, seed);
            assert_eq!(rows[0].episodes, 10);
        }
        let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert_eq!(parse_csv(&summary).unwrap().len(), 2);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn sweep_rejects_empty_axes() {
        let base = ExperimentSetting::default();
        assert!(matches!(
            run_sweep(&base, &[1], &[], None, |_| {}),
            Err(HarnessError::Config(_))
        ));
        assert!(matches!(
            run_sweep(&base, &[], &[1], None, |_| {}),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn config_files_round_trip_every_field() {
        let mut setting = small_group_setting();
        setting.aggregation = AggregationMode::VisitWeighted;
        setting.fedavg_include_value = true;
        setting.grid_bounds = [(-1.0, 1.0), (-2.0, 2.0), (-0.3, 0.3), (-4.0, 4.0)];
        setting.entropy_coeff = 0.01;
        let text = render_config(&setting);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, setting);
    }

    #[test]
    fn config_parser_reports_line_numbers_and_unknown_keys() {
        assert!(parse_config("subsections = 10\nbogus_key = 3\n")
            .unwrap_err()
            .contains("line 2: unknown key"));
        assert!(parse_config("subsections = ten\n")
            .unwrap_err()
            .contains("line 1"));
        assert!(parse_config("agents = 0\n").unwrap_err().contains("agents"));
        assert!(parse_config("mode = warp\n").unwrap_err().contains("unknown mode"));
        // Comments and blank lines are fine.
        let ok = parse_config("# comment\n\nmode = solo # trailing\nagents = 1\n").unwrap();
        assert_eq!(ok.mode, Mode::Solo);
        assert_eq!(ok.agents, 1);
    }

    #[test]
    fn config_presets_can_be_refined() {
        let setting = parse_config("preset = 5\nagents = 4\nmode = frd_both\n").unwrap();
        assert_eq!(setting.id, "5");
        assert_eq!(setting.subsections, 100);
        assert_eq!(setting.exchange_period, 10);
        assert_eq!(setting.initial_episodes, 0);
        assert_eq!(setting.hidden_layers, 1);
        assert_eq!(setting.agents, 4);
        assert_eq!(setting.mode, Mode::FrdBoth);
    }

    #[test]
    fn seed_and_agent_specs_parse() {
        assert_eq!(parse_seed_spec("7").unwrap(), vec![7]);
        assert_eq!(parse_seed_spec("1,2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seed_spec("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seed_spec(" 5 .. 8 ").unwrap(), vec![5, 6, 7]);
        assert!(parse_seed_spec("8..8").is_err());
        assert!(parse_seed_spec("a,b").is_err());
        assert_eq!(parse_agent_counts("1,4").unwrap(), vec![1, 4]);
        assert_eq!(parse_agent_counts("4").unwrap(), vec![4]);
        assert!(parse_agent_counts("0").is_err());
        assert!(parse_agent_counts("x").is_err());
    }

    #[test]
    fn settings_validate_their_ranges() {
        let ok = ExperimentSetting::default();
        assert!(ok.validate().is_ok());
        for broken in [
            ExperimentSetting { agents: 0, ..ok.clone() },
            ExperimentSetting { subsections: 0, ..ok.clone() },
            ExperimentSetting { exchange_period: 0, ..ok.clone() },
            ExperimentSetting { window: 0, ..ok.clone() },
            ExperimentSetting { threshold: f64::NAN, ..ok.clone() },
            ExperimentSetting { gamma: 1.5, ..ok.clone() },
            ExperimentSetting { policy_lr: 0.0, ..ok.clone() },
            ExperimentSetting { distill_epochs: 0, ..ok.clone() },
            ExperimentSetting { grid_bounds: [(1.0, -1.0); 4], ..ok.clone() },
        ] {
            assert!(broken.validate().is_err());
        }
    }
}
