//! Primitives for the two comparison schemes.
//!
//! *Weight averaging*: agents ship full parameter snapshots; the server
//! returns the elementwise mean, which every agent loads verbatim. The
//! snapshot wire format is a one-line ASCII header followed by the raw
//! little-endian `f64` parameters, so its size is dominated by
//! `8 * param_count` bytes.
//!
//! *Raw experience exchange*: agents ship their visited states with the
//! policies they played there, unclustered and unaveraged. The server
//! concatenates everything and each agent distills from the union. This
//! is the no-privacy, no-compression reference point for payload sizes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::env::{EnvState, PolicyVector, ACTION_COUNT};
use crate::memory::validate_policy;
use crate::nn::{fingerprint, NetSnapshot, NeuralError};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no snapshots to average")]
    NoSnapshots,
    #[error("snapshot shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("malformed snapshot bytes: {0}")]
    MalformedSnapshot(String),
    #[error("malformed experience message at line {line}: {message}")]
    MalformedExperience { line: usize, message: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Elementwise mean of identically shaped parameter snapshots.
pub fn average_snapshots(snapshots: &[NetSnapshot]) -> Result<NetSnapshot, BaselineError> {
    let first = snapshots.first().ok_or(BaselineError::NoSnapshots)?;
    first.validate()?;
    let expected = fingerprint(&first.widths);
    for snap in &snapshots[1..] {
        snap.validate()?;
        let found = fingerprint(&snap.widths);
        if found != expected {
            return Err(BaselineError::ShapeMismatch {
                expected,
                found,
            });
        }
    }
    let n = snapshots.len() as f64;
    let mut params = vec![0.0; first.params.len()];
    for snap in snapshots {
        for (acc, &p) in params.iter_mut().zip(&snap.params) {
            *acc += p;
        }
    }
    for p in params.iter_mut() {
        *p /= n;
    }
    Ok(NetSnapshot {
        widths: first.widths.clone(),
        params,
    })
}

const SNAPSHOT_MAGIC: &str = "MLPSNAP,v1";

/// Encode a snapshot as `MLPSNAP,v1,<widths>,<count>\n` followed by
/// `count` little-endian `f64` values.
pub fn snapshot_to_bytes(snapshot: &NetSnapshot) -> Vec<u8> {
    let header = format!(
        "{},{},{}\n",
        SNAPSHOT_MAGIC,
        fingerprint(&snapshot.widths),
        snapshot.params.len()
    );
    let mut bytes = Vec::with_capacity(header.len() + 8 * snapshot.params.len());
    bytes.extend_from_slice(header.as_bytes());
    for p in &snapshot.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

pub fn snapshot_from_bytes(bytes: &[u8]) -> Result<NetSnapshot, BaselineError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| BaselineError::MalformedSnapshot("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| BaselineError::MalformedSnapshot("header is not utf-8".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 4 || fields[0] != "MLPSNAP" || fields[1] != "v1" {
        return Err(BaselineError::MalformedSnapshot(format!(
            "unrecognized header {header:?}"
        )));
    }
    let widths: Vec<usize> = fields[2]
        .split('-')
        .map(|w| w.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| BaselineError::MalformedSnapshot(format!("bad widths {:?}", fields[2])))?;
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(BaselineError::MalformedSnapshot(format!(
            "bad widths {:?}",
            fields[2]
        )));
    }
    let count: usize = fields[3]
        .parse()
        .map_err(|_| BaselineError::MalformedSnapshot(format!("bad count {:?}", fields[3])))?;
    let payload = &bytes[newline + 1..];
    if payload.len() != 8 * count {
        return Err(BaselineError::MalformedSnapshot(format!(
            "expected {} payload bytes, found {}",
            8 * count,
            payload.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(8) {
        let value = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !value.is_finite() {
            return Err(BaselineError::MalformedSnapshot(format!(
                "non-finite parameter {value}"
            )));
        }
        params.push(value);
    }
    let snapshot = NetSnapshot { widths, params };
    snapshot.validate()?;
    Ok(snapshot)
}

/// One agent's raw experience upload: visited states paired with the
/// policies it played there.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExperienceMessage {
    pub agent_id: u32,
    pub round: u32,
    pub entries: Vec<(EnvState, PolicyVector)>,
}

impl RawExperienceMessage {
    pub fn new(
        agent_id: u32,
        round: u32,
        entries: Vec<(EnvState, PolicyVector)>,
    ) -> Result<RawExperienceMessage, BaselineError> {
        for (index, (state, policy)) in entries.iter().enumerate() {
            if !state.is_finite() {
                return Err(BaselineError::MalformedExperience {
                    line: index + 2,
                    message: "non-finite state".into(),
                });
            }
            validate_policy(policy).map_err(|e| BaselineError::MalformedExperience {
                line: index + 2,
                message: e.to_string(),
            })?;
        }
        Ok(RawExperienceMessage {
            agent_id,
            round,
            entries,
        })
    }
}

const RAW_MAGIC: &str = "RAWXP,v1";

/// Encode as `RAWXP,v1,<agent>,<round>,<count>\n` followed by one
/// `x,xdot,theta,thetadot,p0,p1` line per entry. Floats use the shortest
/// decimal form that round-trips exactly.
pub fn serialize_raw(message: &RawExperienceMessage) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{},{},{},{}",
        RAW_MAGIC,
        message.agent_id,
        message.round,
        message.entries.len()
    );
    for (state, policy) in &message.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            state.position, state.velocity, state.angle, state.angular_velocity, policy[0], policy[1]
        );
    }
    out
}

fn parse_raw_f64(text: &str, line: usize) -> Result<f64, BaselineError> {
    let value: f64 = text.trim().parse().map_err(|_| BaselineError::MalformedExperience {
        line,
        message: format!("bad float {text:?}"),
    })?;
    if !value.is_finite() {
        return Err(BaselineError::MalformedExperience {
            line,
            message: format!("non-finite float {text:?}"),
        });
    }
    Ok(value)
}

pub fn deserialize_raw(text: &str) -> Result<RawExperienceMessage, BaselineError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(BaselineError::MalformedExperience {
        line: 1,
        message: "empty message".into(),
    })?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 5 || fields[0] != "RAWXP" || fields[1] != "v1" {
        return Err(BaselineError::MalformedExperience {
            line: 1,
            message: format!("unrecognized header {header:?}"),
        });
    }
    let agent_id: u32 = fields[2].parse().map_err(|_| BaselineError::MalformedExperience {
        line: 1,
        message: format!("bad agent id {:?}", fields[2]),
    })?;
    let round: u32 = fields[3].parse().map_err(|_| BaselineError::MalformedExperience {
        line: 1,
        message: format!("bad round {:?}", fields[3]),
    })?;
    let count: usize = fields[4].parse().map_err(|_| BaselineError::MalformedExperience {
        line: 1,
        message: format!("bad count {:?}", fields[4]),
    })?;

    let mut entries = Vec::with_capacity(count);
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        if line.is_empty() {
            return Err(BaselineError::MalformedExperience {
                line: line_no,
                message: "blank line inside message".into(),
            });
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(BaselineError::MalformedExperience {
                line: line_no,
                message: format!("expected 6 fields, found {}", cols.len()),
            });
        }
        let state = EnvState {
            position: parse_raw_f64(cols[0], line_no)?,
            velocity: parse_raw_f64(cols[1], line_no)?,
            angle: parse_raw_f64(cols[2], line_no)?,
            angular_velocity: parse_raw_f64(cols[3], line_no)?,
        };
        let policy = [parse_raw_f64(cols[4], line_no)?, parse_raw_f64(cols[5], line_no)?];
        entries.push((state, policy));
    }
    if entries.len() != count {
        return Err(BaselineError::MalformedExperience {
            line: 1,
            message: format!("header promised {count} entries, found {}", entries.len()),
        });
    }
    debug_assert_eq!(ACTION_COUNT, 2);
    RawExperienceMessage::new(agent_id, round, entries)
}
