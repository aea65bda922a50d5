//! State-space quantization and the local proxy memories built on it.
//!
//! Instead of shipping raw `(state, policy)` visits to the aggregation
//! server, an agent partitions the four-dimensional state space into a
//! uniform grid of S^4 *clusters*, averages its policy (or value estimate)
//! per cluster, and ships only `(cluster id, average, visit count)`
//! records. The grid can reconstruct a representative *proxy state* — the
//! cell midpoint — from any cluster id, which is all the distillation step
//! ever sees of other agents' experience.
//!
//! [`ExperienceMemory`] keeps the raw visits verbatim; it exists for the
//! raw-distillation baseline and for payload-size comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvState, PolicyVector, ACTION_COUNT};

/// Dimensionality of the quantized state space.
pub const STATE_DIMS: usize = 4;

/// Default quantization ranges per dimension: position, velocity, angle,
/// angular velocity. Positions and angles cover the survivable region;
/// velocities cover the range a balanced cart realistically reaches.
/// States outside are clamped onto the boundary cells.
pub const DEFAULT_GRID_BOUNDS: [(f64, f64); STATE_DIMS] = [
    (-2.4, 2.4),
    (-3.0, 3.0),
    (-0.2095, 0.2095),
    (-3.5, 3.5),
];

/// Tolerance for validating that a recorded policy sums to one.
pub const POLICY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("policy is not a distribution (sum {sum})")]
    InvalidPolicy { sum: f64 },
    #[error("non-finite value estimate {value}")]
    InvalidValue { value: f64 },
    #[error("cluster id {id} out of range for this grid ({count} clusters)")]
    UnknownCluster { id: u64, count: u64 },
}

/// Flat index of one grid cell, in `0..grid.cluster_count()`.
///
/// For per-dimension indices `(i0, i1, i2, i3)` and `S` subsections the
/// flat id is `i0*S^3 + i1*S^2 + i2*S + i3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u64);

/// A uniform S^4 partition of the state space.
///
/// Each dimension `d` splits `[lo_d, hi_d)` into `S` half-open cells; the
/// topmost cell is closed above so the upper boundary still belongs to the
/// grid. Out-of-range components are clamped to the nearest boundary cell,
/// so *every* state maps to exactly one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGrid {
    subsections: usize,
    bounds: [(f64, f64); STATE_DIMS],
}

impl ClusterGrid {
    /// Grid with [`DEFAULT_GRID_BOUNDS`].
    pub fn new(subsections: usize) -> ClusterGrid {
        ClusterGrid::with_bounds(subsections, DEFAULT_GRID_BOUNDS)
    }

    pub fn with_bounds(subsections: usize, bounds: [(f64, f64); STATE_DIMS]) -> ClusterGrid {
        assert!(subsections >= 1, "need at least one subsection");
        for (lo, hi) in bounds {
            assert!(lo.is_finite() && hi.is_finite() && lo < hi, "bad bounds [{lo}, {hi}]");
        }
        ClusterGrid { subsections, bounds }
    }

    pub fn subsections(&self) -> usize {
        self.subsections
    }

    pub fn bounds(&self) -> [(f64, f64); STATE_DIMS] {
        self.bounds
    }

    /// Total number of clusters, S^4.
    pub fn cluster_count(&self) -> u64 {
        (self.subsections as u64).pow(STATE_DIMS as u32)
    }

    fn width(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (hi - lo) / self.subsections as f64
    }

    /// Per-dimension cell indices for `state`.
    pub fn indices_of(&self, state: &EnvState) -> [usize; STATE_DIMS] {
        let components = state.to_array();
        let mut indices = [0usize; STATE_DIMS];
        for dim in 0..STATE_DIMS {
            let (lo, hi) = self.bounds[dim];
            let x = components[dim].clamp(lo, hi);
            let raw = ((x - lo) / self.width(dim)).floor();
            // The top boundary (and any float spill) lands in the last cell.
            indices[dim] = (raw as usize).min(self.subsections - 1);
        }
        indices
    }

    /// Flatten per-dimension indices into a [`ClusterId`].
    pub fn encode(&self, indices: [usize; STATE_DIMS]) -> ClusterId {
        let s = self.subsections as u64;
        let mut id = 0u64;
        for &i in &indices {
            debug_assert!(i < self.subsections);
            id = id * s + i as u64;
        }
        ClusterId(id)
    }

    /// Per-dimension indices of a flat id.
    pub fn decode(&self, id: ClusterId) -> Result<[usize; STATE_DIMS], MemoryError> {
        if id.0 >= self.cluster_count() {
            return Err(MemoryError::UnknownCluster {
                id: id.0,
                count: self.cluster_count(),
            });
        }
        let s = self.subsections as u64;
        let mut rest = id.0;
        let mut indices = [0usize; STATE_DIMS];
        for slot in indices.iter_mut().rev() {
            *slot = (rest % s) as usize;
            rest /= s;
        }
        Ok(indices)
    }

    /// The cluster containing `state`.
    pub fn cluster_of(&self, state: &EnvState) -> ClusterId {
        self.encode(self.indices_of(state))
    }

    /// The representative state of a cluster: the cell midpoint.
    pub fn proxy_state(&self, id: ClusterId) -> Result<EnvState, MemoryError> {
        let indices = self.decode(id)?;
        let mut components = [0.0f64; STATE_DIMS];
        for dim in 0..STATE_DIMS {
            let (lo, _) = self.bounds[dim];
            components[dim] = lo + (indices[dim] as f64 + 0.5) * self.width(dim);
        }
        Ok(EnvState::from_array(components))
    }
}

/// Check that `policy` is a finite, non-negative vector summing to one
/// within [`POLICY_SUM_TOLERANCE`].
pub fn validate_policy(policy: &PolicyVector) -> Result<(), MemoryError> {
    let mut sum = 0.0;
    for &p in policy {
        if !p.is_finite() || p < 0.0 {
            return Err(MemoryError::InvalidPolicy { sum: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > POLICY_SUM_TOLERANCE {
        return Err(MemoryError::InvalidPolicy { sum });
    }
    Ok(())
}

/// One finalized proxy record: the visit-averaged policy of one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyRecord {
    pub cluster: ClusterId,
    pub policy: PolicyVector,
    pub visits: u64,
}

/// One finalized proxy record: the visit-averaged value estimate of one
/// cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRecord {
    pub cluster: ClusterId,
    pub value: f64,
    pub visits: u64,
}

/// Accumulates per-cluster policy averages between exchange rounds.
///
/// By default [`LocalProxyMemory::finalize`] drains the memory so each
/// round ships only the experience gathered since the previous exchange;
/// [`LocalProxyMemory::with_lifetime_accumulation`] keeps accumulating
/// across rounds instead.
#[derive(Debug, Clone)]
pub struct LocalProxyMemory {
    grid: ClusterGrid,
    cells: BTreeMap<u64, ([f64; ACTION_COUNT], u64)>,
    keep_across_rounds: bool,
}

impl LocalProxyMemory {
    pub fn new(grid: ClusterGrid) -> LocalProxyMemory {
        LocalProxyMemory {
            grid,
            cells: BTreeMap::new(),
            keep_across_rounds: false,
        }
    }

    /// Memory that keeps its running averages across finalize calls,
    /// accumulating over the agent's whole lifetime.
    pub fn with_lifetime_accumulation(grid: ClusterGrid) -> LocalProxyMemory {
        LocalProxyMemory {
            grid,
            cells: BTreeMap::new(),
            keep_across_rounds: true,
        }
    }

    pub fn grid(&self) -> &ClusterGrid {
        &self.grid
    }

    /// Fold one visit into the cluster containing `state`.
    pub fn record(&mut self, state: &EnvState, policy: &PolicyVector) -> Result<(), MemoryError> {
        validate_policy(policy)?;
        let id = self.grid.cluster_of(state).0;
        let (sum, visits) = self.cells.entry(id).or_insert(([0.0; ACTION_COUNT], 0));
        for (acc, p) in sum.iter_mut().zip(policy) {
            *acc += p;
        }
        *visits += 1;
        Ok(())
    }

    /// Number of distinct clusters visited so far.
    pub fn occupied_clusters(&self) -> usize {
        self.cells.len()
    }

    pub fn total_visits(&self) -> u64 {
        self.cells.values().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Produce the per-cluster averages, sorted by cluster id ascending,
    /// and (unless configured for lifetime accumulation) clear the memory
    /// for the next round.
    pub fn finalize(&mut self) -> Vec<PolicyRecord> {
        let records = self
            .cells
            .iter()
            .map(|(&id, &(sum, visits))| {
                let mut policy = [0.0; ACTION_COUNT];
                for (slot, s) in policy.iter_mut().zip(sum) {
                    *slot = s / visits as f64;
                }
                PolicyRecord {
                    cluster: ClusterId(id),
                    policy,
                    visits,
                }
            })
            .collect();
        if !self.keep_across_rounds {
            self.cells.clear();
        }
        records
    }
}

/// Accumulates per-cluster value-estimate averages between exchange
/// rounds; the value-distillation counterpart of [`LocalProxyMemory`].
#[derive(Debug, Clone)]
pub struct LocalValueMemory {
    grid: ClusterGrid,
    cells: BTreeMap<u64, (f64, u64)>,
    keep_across_rounds: bool,
}

impl LocalValueMemory {
    pub fn new(grid: ClusterGrid) -> LocalValueMemory {
        LocalValueMemory {
            grid,
            cells: BTreeMap::new(),
            keep_across_rounds: false,
        }
    }

    pub fn with_lifetime_accumulation(grid: ClusterGrid) -> LocalValueMemory {
        LocalValueMemory {
            grid,
            cells: BTreeMap::new(),
            keep_across_rounds: true,
        }
    }

    pub fn grid(&self) -> &ClusterGrid {
        &self.grid
    }

    pub fn record(&mut self, state: &EnvState, value: f64) -> Result<(), MemoryError> {
        if !value.is_finite() {
            return Err(MemoryError::InvalidValue { value });
        }
        let id = self.grid.cluster_of(state).0;
        let (sum, visits) = self.cells.entry(id).or_insert((0.0, 0));
        *sum += value;
        *visits += 1;
        Ok(())
    }

    pub fn occupied_clusters(&self) -> usize {
        self.cells.len()
    }

    pub fn total_visits(&self) -> u64 {
        self.cells.values().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn finalize(&mut self) -> Vec<ValueRecord> {
        let records = self
            .cells
            .iter()
            .map(|(&id, &(sum, visits))| ValueRecord {
                cluster: ClusterId(id),
                value: sum / visits as f64,
                visits,
            })
            .collect();
        if !self.keep_across_rounds {
            self.cells.clear();
        }
        records
    }
}

/// Raw experience memory: every `(state, policy)` visit verbatim, in
/// visit order. Used by the raw-distillation baseline, where it is also
/// the unit of (much larger) payload accounting.
#[derive(Debug, Clone, Default)]
pub struct ExperienceMemory {
    entries: Vec<(EnvState, PolicyVector)>,
}

impl ExperienceMemory {
    pub fn new() -> ExperienceMemory {
        ExperienceMemory::default()
    }

    pub fn record(&mut self, state: &EnvState, policy: &PolicyVector) -> Result<(), MemoryError> {
        validate_policy(policy)?;
        self.entries.push((*state, *policy));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(EnvState, PolicyVector)] {
        &self.entries
    }

    /// Drain all entries, leaving the memory empty for the next round.
    pub fn take_entries(&mut self) -> Vec<(EnvState, PolicyVector)> {
        std::mem::take(&mut self.entries)
    }
}

/// Anything that wants to observe every step an agent takes: the local
/// memories implement this so episodes can feed them directly.
pub trait StepRecorder {
    fn record_step(&mut self, state: &EnvState, policy: &PolicyVector, value: f64);
}

impl StepRecorder for LocalProxyMemory {
    fn record_step(&mut self, state: &EnvState, policy: &PolicyVector, _value: f64) {
        self.record(state, policy)
            .expect("softmax output is always a valid distribution");
    }
}

impl StepRecorder for LocalValueMemory {
    fn record_step(&mut self, state: &EnvState, _policy: &PolicyVector, value: f64) {
        self.record(state, value)
            .expect("value estimates from a finite network are finite");
    }
}

impl StepRecorder for ExperienceMemory {
    fn record_step(&mut self, state: &EnvState, policy: &PolicyVector, _value: f64) {
        self.record(state, policy)
            .expect("softmax output is always a valid distribution");
    }
}
