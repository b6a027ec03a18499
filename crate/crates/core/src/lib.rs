// SPDX-License-Identifier: Apache-2.0
//! Anonymous, sybil-resistant opinion polls on a replicated ledger.
//!
//! Voters are drawn per poll from a topic audience, sign with a unique ring
//! signature over the drawn ring, and the ledger accepts one vote per ring
//! member. Real-valued parts are generic over [`num::Real`] and
//! [`num::ThresholdScalar`]; the aliases below fix the usual choices.

pub mod analysis;
pub mod blindsig;
pub mod group;
pub mod ledger;
pub mod num;
pub mod sortition;
pub mod urs;

/// Epoch threshold with a floating-point multiplier.
pub type Threshold = sortition::EpochThreshold<f64>;
/// Epoch threshold with an exact rational multiplier.
pub type ExactThreshold = sortition::EpochThreshold<num_rational::Rational64>;
pub type HijackParams = analysis::HijackParams<f64>;
