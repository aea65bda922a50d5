//! Deterministic derivation of per-agent random streams from one master
//! seed.
//!
//! Every run owns a single `u64` master seed. Each agent draws from several
//! independent streams (network initialization, environment resets, action
//! sampling); conflating them would let, say, an extra reset shift which
//! actions get sampled. Streams are identified by `(agent, kind)` and mixed
//! into the master seed with a splitmix64 finalizer, which is enough to
//! decorrelate neighboring ids.

/// The purpose a derived stream serves for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Policy-network weight initialization.
    PolicyInit = 0,
    /// Value-network weight initialization.
    ValueInit = 1,
    /// Environment resets.
    Env = 2,
    /// Action sampling from policy distributions.
    ActionSampling = 3,
}

/// Pseudo-agent id for streams shared by a whole group, e.g. the common
/// policy-network initialization used by weight averaging.
pub const SHARED_STREAM_AGENT: u32 = u32::MAX;

/// splitmix64 finalizer: a cheap, well-mixed u64 -> u64 bijection.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `(agent, kind)` stream under `master`.
pub fn derive_seed(master: u64, agent: u32, kind: StreamKind) -> u64 {
    let stream = ((agent as u64) << 8) | kind as u64;
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}
