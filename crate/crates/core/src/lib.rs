//! Deterministic protocol library and discrete-event simulator for
//! DAG-structured decentralized federated learning.

pub mod adversary;
pub mod baselines;
pub mod crypto;
pub mod dag;
pub mod dataset;
pub mod ledger;
pub mod model;
pub mod pol;
pub mod report;
pub mod settlement;
pub mod sim;
pub mod store;
pub mod task;
pub mod worker;
