//! Arbitrage theory for a market with a linear capital-gains tax, on
//! finite scenario trees and in exact rational arithmetic.
//!
//! The crate decides no-arbitrage by linear programming, checks the local
//! return conditions that sandwich it, extracts separating measures from LP
//! duals, rebuilds the classical counterexamples with every defining
//! inequality certified, and embeds the tax model into a market with
//! proportional transaction costs.

pub mod arbitrage;
pub mod bidask;
pub mod foundry;
pub mod gains;
pub mod io;
pub mod lp;
pub mod market;
pub mod random;
pub mod measures;
pub mod rational;
pub mod reduced;
pub mod schedule;
pub mod tree;

pub use arbitrage::{
    arbitrage_scale, check_na, check_na_reduced, check_never_sure, check_one_period,
    check_rlna_sufficient, kappa, ArbitrageVerdict, LocalConditionReport, Status,
};
pub use gains::{gain_matrix, liquidation_value, wealth_recursion, GainMatrix, Strategy, StrategyError};
pub use market::{node_return, validate_market, NodeReturn, TaxMarket, ValidationReport};
pub use measures::{
    find_separating_measure, snell_martingale_part, verify_stopping_constraints, SeparatingMeasure,
    SnellEnvelope, StoppingCheck,
};
pub use rational::{format_rational, parse_rational, rat, Rational};
pub use reduced::{paste_process, reduced_gain_matrix, reduced_liquidation_value, ReducedMarket};
pub use tree::{NodeId, ScenarioTree, TreeBuilder};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid market: {}", .0.join("; "))]
    InvalidMarket(Vec<String>),
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("absorbing-zero violated at {node:?}: zero price followed by positive price")]
    AbsorbingZero { node: String },
    #[error("{0}")]
    Parameter(String),
    #[error("tree too large for exhaustive verification: {count} stopping times exceed the cap {cap}")]
    TooLarge { count: String, cap: u128 },
    #[error("{0}")]
    Certification(String),
    #[error("malformed input: {0}")]
    Input(String),
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tax-model.md")]
    mod tax_model {}
    #[doc = include_str!("../../../book/src/gains.md")]
    mod gains {}
    #[doc = include_str!("../../../book/src/no-arbitrage.md")]
    mod no_arbitrage {}
    #[doc = include_str!("../../../book/src/local-conditions.md")]
    mod local_conditions {}
    #[doc = include_str!("../../../book/src/separating-measures.md")]
    mod separating_measures {}
    #[doc = include_str!("../../../book/src/examples.md")]
    mod examples {}
    #[doc = include_str!("../../../book/src/transaction-costs.md")]
    mod transaction_costs {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
