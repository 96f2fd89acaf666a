//! Shared fixtures for the criterion benches.

use fekf::harness::{Prepared, Scenario};

/// Scenario 1 with a single round count, ready to filter.
pub fn scenario1(rounds: usize) -> Prepared {
    let mut s = Scenario::preset("scenario1").expect("preset");
    s.filter.rounds = vec![rounds];
    Prepared::new(&s).expect("scenario 1 prepares")
}
