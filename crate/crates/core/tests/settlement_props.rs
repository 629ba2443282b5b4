//! Settlement over random small DAGs, checked against a from-scratch
//! recomputation of the whole history.

mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn settlement_matches_whole_history_oracle(steps in common::histories()) {
        common::check(&steps)?;
    }
}
