//! After-tax gains, liquidation values and the self-financing recursion.
//!
//! A lot bought at slot `a` and sold at slot `b` leaves the terminal gain
//!
//! ```text
//! X_{a,b} = [S_b - alpha (S_b - S_a)] g^{e(b)} - S_a g^{e(a)},   g = 1 + (1 - alpha) r
//! ```
//!
//! where `e` counts the remaining compounding periods. The liquidation value
//! of a strategy is the sum of sold quantities times these gains.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{Signed, Zero};

use crate::market::TaxMarket;
use crate::rational::{pow, Rational};
use crate::schedule::Schedule;
use crate::tree::{NodeId, ScenarioTree};

/// `X_{s,u}` keyed by `(s, node)` where `node` carries the sale decision.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GainMatrix {
    entries: BTreeMap<(usize, NodeId), Rational>,
}

impl GainMatrix {
    pub fn get(&self, lot: usize, node: NodeId) -> Option<&Rational> {
        self.entries.get(&(lot, node))
    }

    /// Gain of `lot` sold at `node`; panics when the pair is not a sale.
    pub fn at(&self, lot: usize, node: NodeId) -> &Rational {
        self.entries
            .get(&(lot, node))
            .unwrap_or_else(|| panic!("no gain for lot {lot} at {node}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, NodeId), &Rational)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Purchases and sales, keyed by `(lot, node)`.
///
/// `lot` is the purchase time. A buy sits on the node where the lot is
/// bought; a sale of that lot sits on the node where the sale happens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Strategy {
    pub buys: BTreeMap<(usize, NodeId), Rational>,
    pub sells: BTreeMap<(usize, NodeId), Rational>,
}

impl Strategy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buy(&mut self, lot: usize, node: NodeId, amount: Rational) -> &mut Self {
        add_to(&mut self.buys, (lot, node), amount);
        self
    }

    pub fn sell(&mut self, lot: usize, node: NodeId, amount: Rational) -> &mut Self {
        add_to(&mut self.sells, (lot, node), amount);
        self
    }

    pub fn bought(&self, lot: usize, node: NodeId) -> Rational {
        self.buys.get(&(lot, node)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn sold(&self, lot: usize, node: NodeId) -> Rational {
        self.sells.get(&(lot, node)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn scaled(&self, k: &Rational) -> Strategy {
        let f = |m: &BTreeMap<(usize, NodeId), Rational>| {
            m.iter()
                .filter(|_| !k.is_zero())
                .map(|(key, v)| (*key, v * k))
                .collect()
        };
        Strategy { buys: f(&self.buys), sells: f(&self.sells) }
    }

    pub fn plus(&self, other: &Strategy) -> Strategy {
        let mut out = self.clone();
        for (k, v) in &other.buys {
            add_to(&mut out.buys, *k, v.clone());
        }
        for (k, v) in &other.sells {
            add_to(&mut out.sells, *k, v.clone());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.buys.values().chain(self.sells.values()).all(Zero::is_zero)
    }

    /// Largest single purchase.
    pub fn max_buy(&self) -> Rational {
        self.buys.values().cloned().fold(Rational::zero(), |a, b| if b > a { b } else { a })
    }
}

fn add_to(map: &mut BTreeMap<(usize, NodeId), Rational>, key: (usize, NodeId), amount: Rational) {
    if amount.is_zero() {
        return;
    }
    let e = map.entry(key).or_insert_with(Rational::zero);
    *e += amount;
    if e.is_zero() {
        map.remove(&key);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error("negative amount for lot {lot} at {node:?}")]
    Negative { lot: usize, node: String },
    #[error("lot {lot} cannot be bought at {node:?}")]
    BadBuy { lot: usize, node: String },
    #[error("lot {lot} cannot be sold at {node:?}")]
    BadSell { lot: usize, node: String },
    #[error("lot {lot} on the path to {leaf:?}: bought {bought}, sold {sold}")]
    Liquidation { lot: usize, leaf: String, bought: String, sold: String },
}

/// Checks keys, signs and the full-liquidation identity on every path.
pub(crate) fn check_strategy(
    tree: &ScenarioTree,
    sched: &Schedule,
    strategy: &Strategy,
) -> Result<(), StrategyError> {
    let label = |v: NodeId| tree.label(v).to_string();
    for (&(lot, v), amount) in &strategy.buys {
        if amount.is_negative() {
            return Err(StrategyError::Negative { lot, node: label(v) });
        }
        let ok = v.0 < tree.len()
            && sched
                .slot_of_time(lot)
                .filter(|&a| sched.lot_slots().contains(&a))
                .is_some_and(|a| sched.slot(a).decision_time == tree.time(v));
        if !ok {
            return Err(StrategyError::BadBuy { lot, node: label(v) });
        }
    }
    for (&(lot, v), amount) in &strategy.sells {
        if amount.is_negative() {
            return Err(StrategyError::Negative { lot, node: label(v) });
        }
        let ok = v.0 < tree.len()
            && match (sched.slot_of_time(lot), sched.slot_of_level(tree.time(v))) {
                (Some(a), Some(b)) => a < b,
                _ => false,
            };
        if !ok {
            return Err(StrategyError::BadSell { lot, node: label(v) });
        }
    }
    for a in sched.lot_slots() {
        let lot = sched.slot(a).time;
        for &leaf in tree.leaves() {
            let path = tree.path(leaf);
            let bought = strategy.bought(lot, path[sched.slot(a).decision_time]);
            let sold: Rational = (a + 1..sched.len())
                .map(|b| strategy.sold(lot, path[sched.slot(b).decision_time]))
                .sum();
            if bought != sold {
                return Err(StrategyError::Liquidation {
                    lot,
                    leaf: label(leaf),
                    bought: crate::rational::format_rational(&bought),
                    sold: crate::rational::format_rational(&sold),
                });
            }
        }
    }
    Ok(())
}

/// Gains for every (lot slot, later slot, decision node). `price` is read at
/// the ancestor whose time matches each slot's price time.
pub(crate) fn gains_on(
    tree: &ScenarioTree,
    sched: &Schedule,
    tax: &Rational,
    g: &Rational,
    price: impl Fn(NodeId) -> Rational,
) -> GainMatrix {
    let powers: Vec<Rational> = (0..=tree.horizon()).map(|k| pow(g, k)).collect();
    let mut entries = BTreeMap::new();
    for b in 1..sched.len() {
        let sb = sched.slot(b);
        for &v in tree.nodes_at(sb.decision_time) {
            let s_b = price(tree.ancestor_at(v, sb.time));
            for a in 0..b {
                let sa = sched.slot(a);
                let s_a = price(tree.ancestor_at(v, sa.time));
                let x = (&s_b - tax * (&s_b - &s_a)) * &powers[sb.exponent] - &s_a * &powers[sa.exponent];
                entries.insert((sa.time, v), x);
            }
        }
    }
    GainMatrix { entries }
}

pub(crate) fn value_on(
    tree: &ScenarioTree,
    sched: &Schedule,
    gains: &GainMatrix,
    strategy: &Strategy,
) -> Vec<Rational> {
    tree.leaves()
        .iter()
        .map(|&leaf| {
            let path = tree.path(leaf);
            let mut v = Rational::zero();
            for b in 1..sched.len() {
                let node = path[sched.slot(b).decision_time];
                for a in 0..b {
                    let lot = sched.slot(a).time;
                    if let Some(q) = strategy.sells.get(&(lot, node)) {
                        v += q * gains.at(lot, node);
                    }
                }
            }
            v
        })
        .collect()
}

/// Holdings `N_{s,u}` after trading at every decision node from the lot's
/// purchase slot on; the liquidation slot is omitted (it is always zero).
pub(crate) fn holdings_on(
    tree: &ScenarioTree,
    sched: &Schedule,
    strategy: &Strategy,
) -> BTreeMap<(usize, NodeId), Rational> {
    let mut out = BTreeMap::new();
    for a in sched.lot_slots() {
        let lot = sched.slot(a).time;
        for &v in tree.nodes_at(sched.slot(a).decision_time) {
            out.insert((lot, v), strategy.bought(lot, v));
        }
        for b in a + 1..sched.lot_slots().end {
            let prev = sched.slot(b - 1).decision_time;
            for &v in tree.nodes_at(sched.slot(b).decision_time) {
                let before = out[&(lot, tree.ancestor_at(v, prev))].clone();
                out.insert((lot, v), before - strategy.sold(lot, v));
            }
        }
    }
    out
}

/// Inverse of [`holdings_on`]: purchases and sales from holdings.
pub(crate) fn strategy_from_holdings(
    tree: &ScenarioTree,
    sched: &Schedule,
    holdings: &BTreeMap<(usize, NodeId), Rational>,
) -> Strategy {
    let mut s = Strategy::new();
    let held = |lot: usize, v: NodeId| holdings.get(&(lot, v)).cloned().unwrap_or_else(Rational::zero);
    let last = sched.len() - 1;
    for a in sched.lot_slots() {
        let lot = sched.slot(a).time;
        for &v in tree.nodes_at(sched.slot(a).decision_time) {
            s.buy(lot, v, held(lot, v));
        }
        for b in a + 1..=last {
            let prev = sched.slot(b - 1).decision_time;
            for &v in tree.nodes_at(sched.slot(b).decision_time) {
                let now = if b == last { Rational::zero() } else { held(lot, v) };
                s.sell(lot, v, held(lot, tree.ancestor_at(v, prev)) - now);
            }
        }
    }
    s
}

pub fn gain_matrix(market: &TaxMarket) -> GainMatrix {
    let sched = Schedule::full(market.horizon());
    gains_on(&market.tree, &sched, &market.tax, &market.growth(), |v| market.price(v).clone())
}

/// Terminal wealth at every leaf (in the order of `tree.leaves()`).
pub fn liquidation_value(market: &TaxMarket, strategy: &Strategy) -> Result<Vec<Rational>, StrategyError> {
    let sched = Schedule::full(market.horizon());
    check_strategy(&market.tree, &sched, strategy)?;
    Ok(value_on(&market.tree, &sched, &gain_matrix(market), strategy))
}

/// Cash position after trading at every node, by the self-financing
/// recursion from zero initial capital. Indexed by `NodeId`.
pub fn wealth_recursion(market: &TaxMarket, strategy: &Strategy) -> Result<Vec<Rational>, StrategyError> {
    let tree = &market.tree;
    check_strategy(tree, &Schedule::full(market.horizon()), strategy)?;
    let g = market.growth();
    let alpha = &market.tax;
    let mut eta = vec![Rational::zero(); tree.len()];
    for u in 0..=market.horizon() {
        for &v in tree.nodes_at(u) {
            let s_u = market.price(v);
            let mut e = match tree.parent(v) {
                Some(p) => &g * &eta[p.0],
                None => Rational::zero(),
            };
            e -= strategy.bought(u, v) * s_u;
            for s in 0..u {
                if let Some(q) = strategy.sells.get(&(s, v)) {
                    let s_s = market.price(tree.ancestor_at(v, s));
                    e += q * (s_u - alpha * (s_u - s_s));
                }
            }
            eta[v.0] = e;
        }
    }
    Ok(eta)
}

/// Holdings view `N_{s,u}` of a full-market strategy.
pub fn holdings(market: &TaxMarket, strategy: &Strategy) -> BTreeMap<(usize, NodeId), Rational> {
    holdings_on(&market.tree, &Schedule::full(market.horizon()), strategy)
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::rational::Exact;
        for ((lot, v), q) in &self.buys {
            writeln!(f, "buy  lot {lot} at {v}: {}", Exact(q))?;
        }
        for ((lot, v), q) in &self.sells {
            writeln!(f, "sell lot {lot} at {v}: {}", Exact(q))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};
    use crate::tree::TreeBuilder;

    fn deterministic(prices: Vec<Rational>, r: Rational, alpha: Rational) -> TaxMarket {
        let mut b = TreeBuilder::new();
        let mut v = b.root();
        for _ in 1..prices.len() {
            v = b.child(v, int(1));
        }
        TaxMarket::new(b.build(), prices, r, alpha)
    }

    #[test]
    fn untaxed_flat_price_loses_interest() {
        let r = rat(1, 10);
        let m = deterministic(vec![int(2), int(2), int(2)], r.clone(), int(0));
        let x = gain_matrix(&m);
        let g = int(1) + &r;
        assert_eq!(x.at(0, NodeId(2)), &(int(2) * (int(1) - &g * &g)));
        assert_eq!(x.at(1, NodeId(2)), &(int(2) * (int(1) - &g)));
        assert_eq!(x.at(0, NodeId(1)), &(int(2) * (&g - &g * &g)));
    }

    #[test]
    fn replicating_the_bank_account_gains_nothing() {
        let g = rat(11, 10);
        let m = deterministic(vec![int(1), g.clone(), &g * &g], rat(1, 10), int(0));
        assert!(gain_matrix(&m).iter().all(|(_, x)| x.is_zero()));
    }

    #[test]
    fn deferral_makes_buy_and_hold_profitable() {
        let r = rat(1, 10);
        let alpha = rat(1, 4);
        let up = int(1) + &r;
        let m = deterministic(vec![int(1), up.clone(), &up * &up], r, alpha.clone());
        let x = gain_matrix(&m).at(0, NodeId(2)).clone();
        let g = m.growth();
        let s_t = &up * &up;
        assert_eq!(x, &s_t - &alpha * (&s_t - int(1)) - &g * &g);
        assert!(x.is_positive());
    }

    #[test]
    fn single_sale_value_and_recursion() {
        let m = deterministic(vec![int(1), rat(6, 5)], rat(1, 10), rat(1, 2));
        let mut s = Strategy::new();
        s.buy(0, NodeId(0), int(1)).sell(0, NodeId(1), int(1));
        let v = liquidation_value(&m, &s).unwrap();
        assert_eq!(v, vec![gain_matrix(&m).at(0, NodeId(1)).clone()]);
        assert_eq!(wealth_recursion(&m, &s).unwrap()[1], v[0]);
    }

    #[test]
    fn liquidation_identity_is_enforced() {
        let m = deterministic(vec![int(1), int(1), int(1)], rat(1, 10), rat(1, 2));
        let mut s = Strategy::new();
        s.buy(0, NodeId(0), int(2)).sell(0, NodeId(1), int(1));
        assert!(matches!(
            liquidation_value(&m, &s),
            Err(StrategyError::Liquidation { lot: 0, .. })
        ));
        let mut s = Strategy::new();
        s.buy(1, NodeId(0), int(1));
        assert!(matches!(liquidation_value(&m, &s), Err(StrategyError::BadBuy { .. })));
    }

    #[test]
    fn holdings_round_trip() {
        let m = deterministic(vec![int(1), int(1), int(1), int(1)], rat(1, 10), rat(1, 2));
        let mut s = Strategy::new();
        s.buy(0, NodeId(0), int(3))
            .sell(0, NodeId(1), int(1))
            .sell(0, NodeId(3), int(2))
            .buy(1, NodeId(1), rat(1, 2))
            .sell(1, NodeId(2), rat(1, 2));
        let sched = Schedule::full(3);
        let h = holdings_on(&m.tree, &sched, &s);
        assert_eq!(h[&(0, NodeId(2))], int(2));
        assert_eq!(strategy_from_holdings(&m.tree, &sched, &h), s);
    }
}
