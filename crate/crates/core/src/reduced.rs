//! Markets with one period eliminated, and the pasting of returns.
//!
//! With period `t` eliminated, the time domain is `{0, .., t-1, t+1, .., T}`,
//! one period of interest disappears before the gap and decisions of slot
//! `t-1` may use the time-`t` information. Such a market lives on the same
//! tree as the base market; the reduced price `hat` is simply unused on
//! time-`t` nodes.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::gains::{check_strategy, gains_on, holdings_on, strategy_from_holdings, value_on};
use crate::gains::{GainMatrix, Strategy, StrategyError};
use crate::market::TaxMarket;
use crate::rational::Rational;
use crate::schedule::Schedule;
use crate::tree::NodeId;
use crate::Error;

#[derive(Clone, Debug)]
pub struct ReducedMarket {
    /// Supplies the tree, the rates and the period-`t` returns used when pasting.
    pub base: TaxMarket,
    pub t: usize,
    /// Reduced price per node; `None` on time-`t` nodes.
    pub hat: Vec<Option<Rational>>,
}

impl ReducedMarket {
    pub fn new(base: TaxMarket, t: usize, hat: Vec<Option<Rational>>) -> Result<Self, Error> {
        let horizon = base.horizon();
        if t == 0 || t > horizon {
            return Err(Error::Parameter(format!(
                "eliminated period {t} outside 1..={horizon}"
            )));
        }
        if hat.len() != base.tree.len() {
            return Err(Error::Parameter(format!(
                "expected {} reduced prices, found {}",
                base.tree.len(),
                hat.len()
            )));
        }
        let mut hat = hat;
        for (id, node) in base.tree.nodes() {
            if node.time == t {
                hat[id.0] = None;
                continue;
            }
            match &hat[id.0] {
                None => {
                    return Err(Error::Parameter(format!(
                        "missing reduced price at {:?}",
                        node.label
                    )))
                }
                Some(p) if p.is_negative() => {
                    return Err(Error::Parameter(format!(
                        "negative reduced price at {:?}",
                        node.label
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(ReducedMarket { base, t, hat })
    }

    /// Reduced market obtained by taking the period-`t` return out of the
    /// base price; pasting it back recovers the base market.
    pub fn removing_period(base: TaxMarket, t: usize) -> Result<Self, Error> {
        let tree = &base.tree;
        let mut hat = Vec::with_capacity(tree.len());
        for (id, node) in tree.nodes() {
            hat.push(if node.time < t {
                Some(base.price(id).clone())
            } else if node.time == t {
                None
            } else {
                let at_t = tree.ancestor_at(id, t);
                let before = base.price(tree.parent(at_t).unwrap());
                let after = base.price(at_t);
                Some(if after.is_zero() { Rational::zero() } else { base.price(id) * before / after })
            });
        }
        Self::new(base, t, hat)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::reduced(self.base.horizon(), self.t)
    }

    pub fn hat_price(&self, v: NodeId) -> &Rational {
        self.hat[v.0].as_ref().expect("no reduced price on eliminated level")
    }

    pub fn gain_matrix(&self) -> GainMatrix {
        reduced_gain_matrix(self)
    }

    pub(crate) fn check(&self, strategy: &Strategy) -> Result<(), StrategyError> {
        check_strategy(&self.base.tree, &self.schedule(), strategy)
    }

    /// Period-`t` price ratio `S_t / S_{t-1}` at a time-`t` node, `0/0 := 0`.
    pub fn ratio(&self, v: NodeId) -> Result<Rational, Error> {
        let tree = &self.base.tree;
        let p = tree.parent(v).expect("time-t node has a parent");
        let (before, after) = (self.base.price(p), self.base.price(v));
        if before.is_zero() {
            if after.is_zero() {
                Ok(Rational::zero())
            } else {
                Err(Error::AbsorbingZero { node: tree.label(v).to_string() })
            }
        } else {
            Ok(after / before)
        }
    }
}

/// `X^_{s,u}` for all `s < u` off period `t`; sales at slot `t-1` sit on
/// time-`t` nodes.
pub fn reduced_gain_matrix(reduced: &ReducedMarket) -> GainMatrix {
    let base = &reduced.base;
    gains_on(&base.tree, &reduced.schedule(), &base.tax, &base.growth(), |v| {
        reduced.hat_price(v).clone()
    })
}

pub fn reduced_liquidation_value(
    reduced: &ReducedMarket,
    strategy: &Strategy,
) -> Result<Vec<Rational>, StrategyError> {
    reduced.check(strategy)?;
    Ok(value_on(
        &reduced.base.tree,
        &reduced.schedule(),
        &reduced_gain_matrix(reduced),
        strategy,
    ))
}

/// The pasted process: reduced prices before `t`, then scaled by the
/// base market's period-`t` ratio.
pub fn paste_process(reduced: &ReducedMarket) -> Result<TaxMarket, Error> {
    let base = &reduced.base;
    let tree = &base.tree;
    let t = reduced.t;
    let mut price = Vec::with_capacity(tree.len());
    for (id, node) in tree.nodes() {
        let p = if node.time < t {
            reduced.hat_price(id).clone()
        } else {
            let at_t = tree.ancestor_at(id, t);
            let rho = reduced.ratio(at_t)?;
            if node.time == t {
                reduced.hat_price(tree.parent(id).unwrap()) * rho
            } else {
                reduced.hat_price(id) * rho
            }
        };
        price.push(p);
    }
    Ok(TaxMarket::new(tree.clone(), price, base.rate.clone(), base.tax.clone()))
}

/// Maps a strategy of the pasted market to the reduced market: sales of
/// old lots at `t-1` and `t` merge into slot `t-1`, and lots bought at `t`
/// or later are rescaled by `S_t / (g S_{t-1})`, the fraction of a position
/// that can be repurchased across the gap.
pub fn lift_strategy(reduced: &ReducedMarket, strategy: &Strategy) -> Result<Strategy, Error> {
    let base = &reduced.base;
    let tree = &base.tree;
    let t = reduced.t;
    let horizon = base.horizon();
    let full = Schedule::full(horizon);
    check_strategy(tree, &full, strategy)?;
    let n = holdings_on(tree, &full, strategy);
    let held = |s: usize, v: NodeId| n.get(&(s, v)).cloned().unwrap_or_else(Rational::zero);
    let c = Rational::one() / base.growth();
    let factor = |v: NodeId| -> Result<Rational, Error> {
        Ok(&c * reduced.ratio(tree.ancestor_at(v, t))?)
    };

    let sched = reduced.schedule();
    let mut hat: BTreeMap<(usize, NodeId), Rational> = BTreeMap::new();
    for a in sched.lot_slots() {
        let s = sched.slot(a).time;
        for b in a..sched.lot_slots().end {
            let slot = sched.slot(b);
            for &v in tree.nodes_at(slot.decision_time) {
                // For old lots, slot t-1 sits on time-t nodes and so carries
                // the time-t holding.
                let value = if s + 2 <= t {
                    held(s, v)
                } else if s + 1 == t {
                    held(s, v) + factor(v)? * held(t, v)
                } else {
                    factor(v)? * held(s, v)
                };
                hat.insert((s, v), value);
            }
        }
    }
    Ok(strategy_from_holdings(tree, &sched, &hat))
}
