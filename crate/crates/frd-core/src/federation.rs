//! The server side of memory exchange: message validation, the exchange
//! schedule, aggregation into a global proxy memory, and the wire format.
//!
//! Messages carry only `(cluster id, average, visit count)` records — the
//! schema has no field that could hold a raw state or a per-step policy,
//! which is the structural privacy property of proxy-memory exchange.
//! Aggregation internally orders messages by agent id before summing, so
//! the result is bitwise independent of the order messages arrive in.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::env::{PolicyVector, ACTION_COUNT};
use crate::memory::{validate_policy, ClusterId, MemoryError, PolicyRecord, ValueRecord};

#[derive(Debug, Error, PartialEq)]
pub enum FederationError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("header promises {expected} records but {found} were present")]
    RecordCountMismatch { expected: usize, found: usize },
    #[error("record for cluster {0} is out of order or duplicated")]
    UnsortedRecords(u64),
    #[error("record for cluster {cluster} is invalid: {source}")]
    InvalidRecord {
        cluster: u64,
        source: MemoryError,
    },
    #[error("record for cluster {0} has zero visits")]
    ZeroVisits(u64),
    #[error("cannot aggregate an empty message list")]
    NoMessages,
    #[error("messages mix policy and value payloads")]
    MixedKinds,
    #[error("duplicate agent id {0} in one round")]
    DuplicateAgent(u32),
    #[error("messages from different rounds: {0} and {1}")]
    RoundMismatch(u32, u32),
}

/// Which kind of proxy knowledge a message carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeKind {
    Policy,
    Value,
}

impl ExchangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExchangeKind::Policy => "policy",
            ExchangeKind::Value => "value",
        }
    }
}

impl std::fmt::Display for ExchangeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The records of one message: per-cluster averages of one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ExchangePayload {
    Policy(Vec<PolicyRecord>),
    Value(Vec<ValueRecord>),
}

/// One agent's finalized local proxy memory, in transit to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMessage {
    pub agent_id: u32,
    pub round: u32,
    pub payload: ExchangePayload,
}

impl ExchangeMessage {
    /// Build a message, validating the payload invariants: records sorted
    /// strictly ascending by cluster id, visit counts positive, policies
    /// valid distributions, values finite.
    pub fn new(
        agent_id: u32,
        round: u32,
        payload: ExchangePayload,
    ) -> Result<ExchangeMessage, FederationError> {
        let mut previous: Option<u64> = None;
        let mut check_order = |cluster: ClusterId, visits: u64| -> Result<(), FederationError> {
            if visits == 0 {
                return Err(FederationError::ZeroVisits(cluster.0));
            }
            if previous.is_some_and(|p| p >= cluster.0) {
                return Err(FederationError::UnsortedRecords(cluster.0));
            }
            previous = Some(cluster.0);
            Ok(())
        };
        match &payload {
            ExchangePayload::Policy(records) => {
                for r in records {
                    check_order(r.cluster, r.visits)?;
                    validate_policy(&r.policy).map_err(|source| {
                        FederationError::InvalidRecord {
                            cluster: r.cluster.0,
                            source,
                        }
                    })?;
                }
            }
            ExchangePayload::Value(records) => {
                for r in records {
                    check_order(r.cluster, r.visits)?;
                    if !r.value.is_finite() {
                        return Err(FederationError::InvalidRecord {
                            cluster: r.cluster.0,
                            source: MemoryError::InvalidValue { value: r.value },
                        });
                    }
                }
            }
        }
        Ok(ExchangeMessage {
            agent_id,
            round,
            payload,
        })
    }

    pub fn kind(&self) -> ExchangeKind {
        match self.payload {
            ExchangePayload::Policy(_) => ExchangeKind::Policy,
            ExchangePayload::Value(_) => ExchangeKind::Value,
        }
    }

    pub fn record_count(&self) -> usize {
        match &self.payload {
            ExchangePayload::Policy(r) => r.len(),
            ExchangePayload::Value(r) => r.len(),
        }
    }
}

/// When exchanges happen: after `initial_episodes` of purely local
/// learning, every `exchange_period` episodes, up to `total_round_cap`
/// rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSchedule {
    pub initial_episodes: u32,
    pub exchange_period: u32,
    pub total_round_cap: u32,
}

impl RoundSchedule {
    pub fn new(initial_episodes: u32, exchange_period: u32) -> RoundSchedule {
        assert!(exchange_period >= 1, "exchange period must be at least 1");
        RoundSchedule {
            initial_episodes,
            exchange_period,
            total_round_cap: u32::MAX,
        }
    }

    pub fn with_round_cap(mut self, cap: u32) -> RoundSchedule {
        self.total_round_cap = cap;
        self
    }

    /// True when a group that has completed `completed_episodes` episodes
    /// per agent should exchange now: the episode count is past the
    /// initial learning time by a positive multiple of the period.
    pub fn should_exchange(&self, completed_episodes: u32) -> bool {
        if completed_episodes <= self.initial_episodes {
            return false;
        }
        let past = completed_episodes - self.initial_episodes;
        past % self.exchange_period == 0 && past / self.exchange_period <= self.total_round_cap
    }

    /// 1-based round number of the exchange fired at `completed_episodes`.
    pub fn round_index(&self, completed_episodes: u32) -> u32 {
        debug_assert!(self.should_exchange(completed_episodes));
        (completed_episodes - self.initial_episodes) / self.exchange_period
    }
}

/// How per-cluster contributions from different agents are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    /// Arithmetic mean of the contributing agents' cluster means; every
    /// contributing agent counts equally regardless of visit count.
    #[default]
    Unweighted,
    /// Visit-count-weighted mean, equal to the mean over the union of all
    /// underlying visits.
    VisitWeighted,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Unweighted => "unweighted",
            AggregationMode::VisitWeighted => "visit_weighted",
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unweighted" => Ok(AggregationMode::Unweighted),
            "visit_weighted" => Ok(AggregationMode::VisitWeighted),
            other => Err(format!(
                "unknown aggregation mode `{other}` (expected unweighted or visit_weighted)"
            )),
        }
    }
}

/// One cluster of the aggregated global memory (policy kind).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalPolicyEntry {
    pub cluster: ClusterId,
    pub policy: PolicyVector,
    /// How many agents contributed to this cluster.
    pub contributors: u32,
    /// Total visits across contributing agents.
    pub visits: u64,
}

/// One cluster of the aggregated global memory (value kind).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalValueEntry {
    pub cluster: ClusterId,
    pub value: f64,
    pub contributors: u32,
    pub visits: u64,
}

/// The server's aggregate of one round, sorted by cluster id. Its entry
/// count is the number of clusters visited by the union of agents.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalProxyMemory {
    Policy(Vec<GlobalPolicyEntry>),
    Value(Vec<GlobalValueEntry>),
}

impl GlobalProxyMemory {
    pub fn len(&self) -> usize {
        match self {
            GlobalProxyMemory::Policy(e) => e.len(),
            GlobalProxyMemory::Value(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ExchangeKind {
        match self {
            GlobalProxyMemory::Policy(_) => ExchangeKind::Policy,
            GlobalProxyMemory::Value(_) => ExchangeKind::Value,
        }
    }
}

/// Combine one round's messages into the global proxy memory.
///
/// Messages are ordered by agent id before any floating-point work, so the
/// result is bitwise identical under any permutation of `messages`.
pub fn aggregate(
    messages: &[ExchangeMessage],
    mode: AggregationMode,
) -> Result<GlobalProxyMemory, FederationError> {
    if messages.is_empty() {
        return Err(FederationError::NoMessages);
    }
    let kind = messages[0].kind();
    let round = messages[0].round;
    for m in messages {
        if m.kind() != kind {
            return Err(FederationError::MixedKinds);
        }
        if m.round != round {
            return Err(FederationError::RoundMismatch(round, m.round));
        }
    }
    let mut ordered: Vec<&ExchangeMessage> = messages.iter().collect();
    ordered.sort_by_key(|m| m.agent_id);
    for pair in ordered.windows(2) {
        if pair[0].agent_id == pair[1].agent_id {
            return Err(FederationError::DuplicateAgent(pair[0].agent_id));
        }
    }

    match kind {
        ExchangeKind::Policy => {
            // cluster -> (sum of means or visit-weighted sum, contributors, visits)
            let mut cells: BTreeMap<u64, ([f64; ACTION_COUNT], u32, u64)> = BTreeMap::new();
            for message in &ordered {
                let ExchangePayload::Policy(records) = &message.payload else {
                    unreachable!("kind checked above");
                };
                for r in records {
                    let cell = cells.entry(r.cluster.0).or_insert(([0.0; ACTION_COUNT], 0, 0));
                    let weight = match mode {
                        AggregationMode::Unweighted => 1.0,
                        AggregationMode::VisitWeighted => r.visits as f64,
                    };
                    for (acc, p) in cell.0.iter_mut().zip(&r.policy) {
                        *acc += weight * p;
                    }
                    cell.1 += 1;
                    cell.2 += r.visits;
                }
            }
            let entries = cells
                .into_iter()
                .map(|(id, (sum, contributors, visits))| {
                    let denom = match mode {
                        AggregationMode::Unweighted => contributors as f64,
                        AggregationMode::VisitWeighted => visits as f64,
                    };
                    let mut policy = [0.0; ACTION_COUNT];
                    for (slot, s) in policy.iter_mut().zip(sum) {
                        *slot = s / denom;
                    }
                    GlobalPolicyEntry {
                        cluster: ClusterId(id),
                        policy,
                        contributors,
                        visits,
                    }
                })
                .collect();
            Ok(GlobalProxyMemory::Policy(entries))
        }
        ExchangeKind::Value => {
            let mut cells: BTreeMap<u64, (f64, u32, u64)> = BTreeMap::new();
            for message in &ordered {
                let ExchangePayload::Value(records) = &message.payload else {
                    unreachable!("kind checked above");
                };
                for r in records {
                    let cell = cells.entry(r.cluster.0).or_insert((0.0, 0, 0));
                    let weight = match mode {
                        AggregationMode::Unweighted => 1.0,
                        AggregationMode::VisitWeighted => r.visits as f64,
                    };
                    cell.0 += weight * r.value;
                    cell.1 += 1;
                    cell.2 += r.visits;
                }
            }
            let entries = cells
                .into_iter()
                .map(|(id, (sum, contributors, visits))| {
                    let denom = match mode {
                        AggregationMode::Unweighted => contributors as f64,
                        AggregationMode::VisitWeighted => visits as f64,
                    };
                    GlobalValueEntry {
                        cluster: ClusterId(id),
                        value: sum / denom,
                        contributors,
                        visits,
                    }
                })
                .collect();
            Ok(GlobalProxyMemory::Value(entries))
        }
    }
}

/// Render a message in the line-oriented wire format:
///
/// ```text
/// FRD,v1,<agent_id>,<round>,<kind>,<num_records>
/// <cluster_id>,<p0>,<p1>,<visit_count>     (policy kind)
/// <cluster_id>,<value>,<visit_count>       (value kind)
/// ```
///
/// Floats are printed as the shortest decimal that round-trips the 64-bit
/// value, so serialize → deserialize is bit-exact.
pub fn serialize(message: &ExchangeMessage) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "FRD,v1,{},{},{},{}",
        message.agent_id,
        message.round,
        message.kind(),
        message.record_count()
    );
    match &message.payload {
        ExchangePayload::Policy(records) => {
            for r in records {
                let _ = writeln!(out, "{},{},{},{}", r.cluster.0, r.policy[0], r.policy[1], r.visits);
            }
        }
        ExchangePayload::Value(records) => {
            for r in records {
                let _ = writeln!(out, "{},{},{}", r.cluster.0, r.value, r.visits);
            }
        }
    }
    out
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    line: usize,
    what: &str,
) -> Result<T, FederationError> {
    field.parse().map_err(|_| FederationError::Malformed {
        line,
        message: format!("cannot parse {what} from `{field}`"),
    })
}

fn parse_finite(field: &str, line: usize, what: &str) -> Result<f64, FederationError> {
    let value: f64 = parse_field(field, line, what)?;
    if !value.is_finite() {
        return Err(FederationError::Malformed {
            line,
            message: format!("{what} must be finite, got `{field}`"),
        });
    }
    Ok(value)
}

/// Parse a message from the wire format, re-validating every invariant.
pub fn deserialize(text: &str) -> Result<ExchangeMessage, FederationError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FederationError::Malformed {
        line: 1,
        message: "empty input".into(),
    })?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 6 || fields[0] != "FRD" || fields[1] != "v1" {
        return Err(FederationError::Malformed {
            line: 1,
            message: format!("bad header `{header}` (expected FRD,v1,agent,round,kind,count)"),
        });
    }
    let agent_id: u32 = parse_field(fields[2], 1, "agent id")?;
    let round: u32 = parse_field(fields[3], 1, "round")?;
    let kind = match fields[4] {
        "policy" => ExchangeKind::Policy,
        "value" => ExchangeKind::Value,
        other => {
            return Err(FederationError::Malformed {
                line: 1,
                message: format!("unknown payload kind `{other}`"),
            })
        }
    };
    let expected: usize = parse_field(fields[5], 1, "record count")?;

    let mut policy_records = Vec::new();
    let mut value_records = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        if line.is_empty() {
            continue; // tolerate a trailing blank line
        }
        let fields: Vec<&str> = line.split(',').collect();
        match kind {
            ExchangeKind::Policy => {
                if fields.len() != 4 {
                    return Err(FederationError::Malformed {
                        line: line_no,
                        message: format!(
                            "policy record needs 4 fields (cluster,p0,p1,visits), got {}",
                            fields.len()
                        ),
                    });
                }
                policy_records.push(PolicyRecord {
                    cluster: ClusterId(parse_field(fields[0], line_no, "cluster id")?),
                    policy: [
                        parse_finite(fields[1], line_no, "policy component")?,
                        parse_finite(fields[2], line_no, "policy component")?,
                    ],
                    visits: parse_field(fields[3], line_no, "visit count")?,
                });
            }
            ExchangeKind::Value => {
                if fields.len() != 3 {
                    return Err(FederationError::Malformed {
                        line: line_no,
                        message: format!(
                            "value record needs 3 fields (cluster,value,visits), got {}",
                            fields.len()
                        ),
                    });
                }
                value_records.push(ValueRecord {
                    cluster: ClusterId(parse_field(fields[0], line_no, "cluster id")?),
                    value: parse_finite(fields[1], line_no, "value")?,
                    visits: parse_field(fields[2], line_no, "visit count")?,
                });
            }
        }
    }

    let found = match kind {
        ExchangeKind::Policy => policy_records.len(),
        ExchangeKind::Value => value_records.len(),
    };
    if found != expected {
        return Err(FederationError::RecordCountMismatch { expected, found });
    }
    let payload = match kind {
        ExchangeKind::Policy => ExchangePayload::Policy(policy_records),
        ExchangeKind::Value => ExchangePayload::Value(value_records),
    };
    ExchangeMessage::new(agent_id, round, payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy_message(agent_id: u32, round: u32, records: &[(u64, f64, u64)]) -> ExchangeMessage {
        let records = records
            .iter()
            .map(|&(cluster, p0, visits)| PolicyRecord {
                cluster: ClusterId(cluster),
                policy: [p0, 1.0 - p0],
                visits,
            })
            .collect();
        ExchangeMessage::new(agent_id, round, ExchangePayload::Policy(records)).unwrap()
    }

    #[test]
    fn schedule_matches_the_documented_examples() {
        let schedule = RoundSchedule::new(50, 25);
        for fire in [75, 100, 125] {
            assert!(schedule.should_exchange(fire), "episode {fire}");
        }
        for hold in [0, 1, 50, 60, 74, 76] {
            assert!(!schedule.should_exchange(hold), "episode {hold}");
        }
        assert_eq!(schedule.round_index(75), 1);
        assert_eq!(schedule.round_index(125), 3);

        let immediate = RoundSchedule::new(0, 10);
        assert!(immediate.should_exchange(10));
        assert!(!immediate.should_exchange(5));
        assert_eq!(immediate.round_index(10), 1);

        let capped = RoundSchedule::new(0, 10).with_round_cap(2);
        assert!(capped.should_exchange(20));
        assert!(!capped.should_exchange(30), "past the round cap");
    }

    #[test]
    fn message_validation_rejects_broken_records() {
        // Unsorted
        let unsorted = ExchangeMessage::new(
            0,
            1,
            ExchangePayload::Policy(vec![
                PolicyRecord { cluster: ClusterId(5), policy: [0.5, 0.5], visits: 1 },
                PolicyRecord { cluster: ClusterId(3), policy: [0.5, 0.5], visits: 1 },
            ]),
        );
        assert_eq!(unsorted.unwrap_err(), FederationError::UnsortedRecords(3));
        // Duplicate cluster
        let duplicate = ExchangeMessage::new(
            0,
            1,
            ExchangePayload::Policy(vec![
                PolicyRecord { cluster: ClusterId(5), policy: [0.5, 0.5], visits: 1 },
                PolicyRecord { cluster: ClusterId(5), policy: [0.5, 0.5], visits: 1 },
            ]),
        );
        assert_eq!(duplicate.unwrap_err(), FederationError::UnsortedRecords(5));
        // Zero visits
        let empty_cell = ExchangeMessage::new(
            0,
            1,
            ExchangePayload::Policy(vec![PolicyRecord {
                cluster: ClusterId(5),
                policy: [0.5, 0.5],
                visits: 0,
            }]),
        );
        assert_eq!(empty_cell.unwrap_err(), FederationError::ZeroVisits(5));
        // Invalid distribution
        let bad_policy = ExchangeMessage::new(
            0,
            1,
            ExchangePayload::Policy(vec![PolicyRecord {
                cluster: ClusterId(5),
                policy: [0.9, 0.9],
                visits: 1,
            }]),
        );
        assert!(matches!(
            bad_policy.unwrap_err(),
            FederationError::InvalidRecord { cluster: 5, .. }
        ));
    }

    #[test]
    fn unweighted_aggregate_averages_contributing_agents() {
        let a = policy_message(0, 1, &[(3, 0.2, 10)]);
        let b = policy_message(1, 1, &[(3, 0.6, 2)]);
        let global = aggregate(&[a, b], AggregationMode::Unweighted).unwrap();
        let GlobalProxyMemory::Policy(entries) = global else { panic!() };
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].cluster, ClusterId(3));
        assert!((entries[0].policy[0] - 0.4).abs() < 1e-15);
        assert!((entries[0].policy[1] - 0.6).abs() < 1e-15);
        assert_eq!(entries[0].contributors, 2);
        assert_eq!(entries[0].visits, 12);
    }

    #[test]
    fn clusters_seen_by_one_agent_pass_through() {
        let a = policy_message(0, 1, &[(3, 0.2, 5), (9, 0.7, 1)]);
        let b = policy_message(1, 1, &[(9, 0.7, 3)]);
        let global = aggregate(&[a, b], AggregationMode::Unweighted).unwrap();
        let GlobalProxyMemory::Policy(entries) = global else { panic!() };
        // Union semantics: both clusters appear.
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].cluster, ClusterId(3));
        assert_eq!(entries[0].policy, [0.2, 0.8]);
        assert_eq!(entries[0].contributors, 1);
    }

    #[test]
    fn visit_weighted_aggregate_matches_flattened_visits() {
        // Counts 1 and 3 with means (1,0) and (0,1): the weighted mean is
        // (0.25, 0.75), the same as averaging the four underlying visits.
        let a = policy_message(0, 1, &[(3, 1.0, 1)]);
        let b = policy_message(1, 1, &[(3, 0.0, 3)]);
        let global = aggregate(&[a, b], AggregationMode::VisitWeighted).unwrap();
        let GlobalProxyMemory::Policy(entries) = global else { panic!() };
        assert_eq!(entries[0].policy, [0.25, 0.75]);
        let brute = [
            ([1.0, 0.0], 1u64),
            ([0.0, 1.0], 3u64),
        ];
        let total: u64 = brute.iter().map(|(_, n)| n).sum();
        let mean0: f64 = brute.iter().map(|(p, n)| p[0] * *n as f64).sum::<f64>() / total as f64;
        assert_eq!(entries[0].policy[0], mean0);
    }

    #[test]
    fn aggregate_rejects_invalid_message_sets() {
        assert_eq!(
            aggregate(&[], AggregationMode::Unweighted).unwrap_err(),
            FederationError::NoMessages
        );

        let a = policy_message(0, 1, &[(3, 0.2, 1)]);
        let also_a = policy_message(0, 1, &[(4, 0.5, 1)]);
        assert_eq!(
            aggregate(&[a.clone(), also_a], AggregationMode::Unweighted).unwrap_err(),
            FederationError::DuplicateAgent(0)
        );

        let late = policy_message(1, 2, &[(3, 0.2, 1)]);
        assert_eq!(
            aggregate(&[a.clone(), late], AggregationMode::Unweighted).unwrap_err(),
            FederationError::RoundMismatch(1, 2)
        );

        let values = ExchangeMessage::new(
            1,
            1,
            ExchangePayload::Value(vec![ValueRecord { cluster: ClusterId(0), value: 1.0, visits: 1 }]),
        )
        .unwrap();
        assert_eq!(
            aggregate(&[a, values], AggregationMode::Unweighted).unwrap_err(),
            FederationError::MixedKinds
        );
    }

    #[test]
    fn aggregation_is_bitwise_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut messages: Vec<ExchangeMessage> = (0..6u32)
            .map(|agent| {
                let mut records = Vec::new();
                let mut cluster = 0u64;
                for _ in 0..rng.random_range(1..20) {
                    cluster += rng.random_range(1..50);
                    let p = rng.random_range(0.0..1.0);
                    records.push(PolicyRecord {
                        cluster: ClusterId(cluster),
                        policy: [p, 1.0 - p],
                        visits: rng.random_range(1..100),
                    });
                }
                ExchangeMessage::new(agent, 1, ExchangePayload::Policy(records)).unwrap()
            })
            .collect();

        let baseline = aggregate(&messages, AggregationMode::Unweighted).unwrap();
        for _ in 0..10 {
            // Fisher-Yates shuffle
            for i in (1..messages.len()).rev() {
                let j = rng.random_range(0..=i);
                messages.swap(i, j);
            }
            let shuffled = aggregate(&messages, AggregationMode::Unweighted).unwrap();
            assert_eq!(baseline, shuffled, "aggregate depended on message order");
        }
    }

    #[test]
    fn union_of_visited_clusters_sets_the_entry_count() {
        let a = policy_message(0, 1, &[(1, 0.5, 1), (2, 0.5, 1)]);
        let b = policy_message(1, 1, &[(2, 0.5, 1), (3, 0.5, 1)]);
        let c = policy_message(2, 1, &[(10, 0.5, 1)]);
        let global = aggregate(&[a, b, c], AggregationMode::Unweighted).unwrap();
        assert_eq!(global.len(), 4); // {1, 2, 3, 10}
    }

    #[test]
    fn replicated_messages_aggregate_to_the_single_message_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for copies in [2usize, 3, 5] {
            let mut records = Vec::new();
            let mut cluster = 0u64;
            for _ in 0..10 {
                cluster += rng.random_range(1..40);
                let p = rng.random_range(0.0..1.0);
                records.push(PolicyRecord {
                    cluster: ClusterId(cluster),
                    policy: [p, 1.0 - p],
                    visits: rng.random_range(1..50),
                });
            }
            let single =
                ExchangeMessage::new(0, 1, ExchangePayload::Policy(records.clone())).unwrap();
            let clones: Vec<ExchangeMessage> = (0..copies as u32)
                .map(|agent| {
                    ExchangeMessage::new(agent, 1, ExchangePayload::Policy(records.clone()))
                        .unwrap()
                })
                .collect();

            let from_single = aggregate(std::slice::from_ref(&single), AggregationMode::Unweighted).unwrap();
            let from_clones = aggregate(&clones, AggregationMode::Unweighted).unwrap();
            let (GlobalProxyMemory::Policy(a), GlobalProxyMemory::Policy(b)) =
                (from_single, from_clones)
            else {
                panic!()
            };
            for (ea, eb) in a.iter().zip(&b) {
                assert_eq!(ea.cluster, eb.cluster);
                // k identical means averaged over k agents reproduce the
                // mean up to one rounding of the sum-then-divide.
                for (pa, pb) in ea.policy.iter().zip(&eb.policy) {
                    assert!((pa - pb).abs() <= 1e-15, "{pa} vs {pb}");
                }
            }
        }
    }

    #[test]
    fn wire_format_matches_the_documented_shape() {
        let message = policy_message(8, 3, &[(8, 0.4, 7)]);
        let text = serialize(&message);
        assert_eq!(text, "FRD,v1,8,3,policy,1\n8,0.4,0.6,7\n");
        // The shortest-decimal floats round-trip bit-exactly.
        let parsed = deserialize(&text).unwrap();
        assert_eq!(parsed, message);
        let ExchangePayload::Policy(records) = &parsed.payload else { panic!() };
        assert_eq!(records[0].policy[0].to_bits(), 0.4f64.to_bits());
        assert_eq!(records[0].policy[1].to_bits(), 0.6f64.to_bits());
    }

    #[test]
    fn empty_messages_serialize_to_a_header_only_line() {
        let message = ExchangeMessage::new(2, 9, ExchangePayload::Policy(vec![])).unwrap();
        let text = serialize(&message);
        assert_eq!(text, "FRD,v1,2,9,policy,0\n");
        let parsed = deserialize(&text).unwrap();
        assert_eq!(parsed.record_count(), 0);
        assert_eq!(parsed.agent_id, 2);
        assert_eq!(parsed.round, 9);
    }

    #[test]
    fn serialization_round_trips_100_random_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for case in 0..100 {
            let agent = rng.random_range(0..64);
            let round = rng.random_range(0..1000);
            let message = if case % 2 == 0 {
                let mut records = Vec::new();
                let mut cluster = 0u64;
                for _ in 0..rng.random_range(0..40) {
                    cluster += rng.random_range(1..1_000_000);
                    let p = rng.random_range(0.0..1.0);
                    records.push(PolicyRecord {
                        cluster: ClusterId(cluster),
                        policy: [p, 1.0 - p],
                        visits: rng.random_range(1..10_000),
                    });
                }
                ExchangeMessage::new(agent, round, ExchangePayload::Policy(records)).unwrap()
            } else {
                let mut records = Vec::new();
                let mut cluster = 0u64;
                for _ in 0..rng.random_range(0..40) {
                    cluster += rng.random_range(1..1_000_000);
                    records.push(ValueRecord {
                        cluster: ClusterId(cluster),
                        value: rng.random_range(-500.0..500.0),
                        visits: rng.random_range(1..10_000),
                    });
                }
                ExchangeMessage::new(agent, round, ExchangePayload::Value(records)).unwrap()
            };
            let text = serialize(&message);
            let parsed = deserialize(&text).unwrap();
            assert_eq!(parsed, message, "round trip drifted on case {case}");
        }
    }

    #[test]
    fn deserialize_reports_malformed_lines_with_positions() {
        let missing_field = "FRD,v1,0,1,policy,1\n8,0.4,7\n";
        match deserialize(missing_field).unwrap_err() {
            FederationError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }

        let bad_float = "FRD,v1,0,1,policy,1\n8,zero,0.6,7\n";
        assert!(matches!(
            deserialize(bad_float).unwrap_err(),
            FederationError::Malformed { line: 2, .. }
        ));

        let non_finite = "FRD,v1,0,1,value,1\n8,inf,7\n";
        assert!(matches!(
            deserialize(non_finite).unwrap_err(),
            FederationError::Malformed { line: 2, .. }
        ));

        let bad_header = "HELLO,v1,0,1,policy,0\n";
        assert!(matches!(
            deserialize(bad_header).unwrap_err(),
            FederationError::Malformed { line: 1, .. }
        ));

        let wrong_count = "FRD,v1,0,1,policy,2\n8,0.4,0.6,7\n";
        assert_eq!(
            deserialize(wrong_count).unwrap_err(),
            FederationError::RecordCountMismatch { expected: 2, found: 1 }
        );

        // A record shaped like raw per-step data (state + policy, 6 fields)
        // must not parse.
        let raw_shaped = "FRD,v1,0,1,policy,1\n0.1,0.2,0.01,-0.3,0.4,0.6\n";
        assert!(matches!(
            deserialize(raw_shaped).unwrap_err(),
            FederationError::Malformed { line: 2, .. }
        ));
    }
}
