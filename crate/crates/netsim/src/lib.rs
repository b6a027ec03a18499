// SPDX-License-Identifier: Apache-2.0
//! Deterministic simulation of citizens and politicians around a pollring
//! ledger: safe samples, offloaded ring and vote checks with blacklisting,
//! sharded transaction pools and poll discovery, on a logical clock.

pub mod config;
pub mod discovery;
pub mod evidence;
pub mod offload;
pub mod pool;
pub mod sim;

pub use config::{Adversary, BehaviorProfile, ConfigError, FMap, FSelect, SimConfig, Timing, TxPoolPolicy, Workload};
pub use discovery::{discover_polls, discovery_traffic, DiscoveryLoad, DiscoveryOutcome, DiscoveryTraffic};
pub use evidence::{audit, AuditContext, Blacklist, BlacklistEntry, Claim, Evidence, SignedStatement, Statement};
pub use offload::{draw_safe_sample, offload_ring, offload_vote_verify, Accusation, OffloadError, RingAnswer, RingQuery, VoteItem};
pub use pool::{pool_assign, shard_of, PendingTx, PoolCommit, PoolSlot};
pub use sim::{
    run_simulation, run_simulation_with_state, BlockLog, ExpectTally, NodeCounters, NodeSpec, PollTally, Role, Safety, SimError,
    SimReport, Totals,
};
