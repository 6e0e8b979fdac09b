//! Markets with proportional transaction costs.
//!
//! Assets trade at an ask when bought and a bid when sold; a missing price
//! means the trade is not possible at that node. Cash sits in a bank
//! account with a fixed interest rate and no spread. A strategy is a set of
//! purchases and sales per (asset, node) whose net amount closes out on
//! every path by the horizon.
//!
//! A tax market embeds into this setting with one fictitious asset per
//! purchase date: asset `i` can be bought at `S_i` at time `i` only, and
//! sold afterwards at the after-tax price `S_t - alpha (S_t - S_i)`, with
//! the bank account paying `(1-alpha) r`.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::arbitrage::{check_never_sure, Status};
use crate::gains::Strategy;
use crate::lp::{self, LinearProgram, LpStatus, Sense};
use crate::market::TaxMarket;
use crate::rational::{pow, rat, Rational};
use crate::tree::{NodeId, ScenarioTree};
use crate::Error;

#[derive(Clone, Debug)]
pub struct BidAskMarket {
    pub tree: ScenarioTree,
    pub assets: Vec<String>,
    /// `ask[asset][node]`; `None` forbids buying.
    pub ask: Vec<Vec<Option<Rational>>>,
    /// `bid[asset][node]`; `None` forbids selling.
    pub bid: Vec<Vec<Option<Rational>>>,
    pub interest: Rational,
}

/// Purchases and sales per `(asset, node)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BidAskStrategy {
    pub buys: BTreeMap<(usize, NodeId), Rational>,
    pub sells: BTreeMap<(usize, NodeId), Rational>,
}

impl BidAskStrategy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buy(&mut self, asset: usize, node: NodeId, amount: Rational) -> &mut Self {
        *self.buys.entry((asset, node)).or_insert_with(Rational::zero) += amount;
        self
    }

    pub fn sell(&mut self, asset: usize, node: NodeId, amount: Rational) -> &mut Self {
        *self.sells.entry((asset, node)).or_insert_with(Rational::zero) += amount;
        self
    }
}

impl BidAskMarket {
    /// Violations of the structural invariants, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.tree.violations().iter().map(ToString::to_string).collect();
        if self.ask.len() != self.assets.len() || self.bid.len() != self.assets.len() {
            out.push("one bid and one ask row per asset required".into());
            return out;
        }
        for (k, name) in self.assets.iter().enumerate() {
            if self.ask[k].len() != self.tree.len() || self.bid[k].len() != self.tree.len() {
                out.push(format!("asset {name:?}: one price per node required"));
                continue;
            }
            for (id, node) in self.tree.nodes() {
                if let (Some(b), Some(a)) = (&self.bid[k][id.0], &self.ask[k][id.0]) {
                    if b > a {
                        out.push(format!("asset {name:?} at {:?}: bid above ask", node.label));
                    }
                }
            }
        }
        if self.interest.is_negative() {
            out.push("negative interest rate".into());
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), Error> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMarket(v))
        }
    }

    fn discount(&self) -> Vec<Rational> {
        let growth = Rational::one() + &self.interest;
        (0..=self.tree.horizon()).map(|k| pow(&growth, k)).collect()
    }
}

/// Terminal wealth per leaf; fails unless every trade has a price and
/// every position is closed on every path.
pub fn bidask_liquidation_value(market: &BidAskMarket, strategy: &BidAskStrategy) -> Result<Vec<Rational>, Error> {
    market.ensure_valid()?;
    let tree = &market.tree;
    for (&(k, v), amount) in strategy.buys.iter() {
        if amount.is_negative() || k >= market.assets.len() || market.ask[k][v.0].is_none() {
            return Err(Error::Parameter(format!("cannot buy asset {k} at {:?}", tree.label(v))));
        }
    }
    for (&(k, v), amount) in strategy.sells.iter() {
        if amount.is_negative() || k >= market.assets.len() || market.bid[k][v.0].is_none() {
            return Err(Error::Parameter(format!("cannot sell asset {k} at {:?}", tree.label(v))));
        }
    }
    let factor = market.discount();
    let horizon = tree.horizon();
    let zero = Rational::zero();
    let mut out = Vec::new();
    for &leaf in tree.leaves() {
        let mut value = Rational::zero();
        for k in 0..market.assets.len() {
            let mut position = Rational::zero();
            for v in tree.path(leaf) {
                let b = strategy.buys.get(&(k, v)).unwrap_or(&zero);
                let s = strategy.sells.get(&(k, v)).unwrap_or(&zero);
                let f = &factor[horizon - tree.time(v)];
                if !b.is_zero() {
                    value -= b * market.ask[k][v.0].as_ref().unwrap() * f;
                }
                if !s.is_zero() {
                    value += s * market.bid[k][v.0].as_ref().unwrap() * f;
                }
                position += b - s;
            }
            if !position.is_zero() {
                return Err(Error::Parameter(format!(
                    "asset {:?} not closed out on the path to {:?}",
                    market.assets[k],
                    tree.label(leaf)
                )));
            }
        }
        out.push(value);
    }
    Ok(out)
}

/// One fictitious asset per purchase date `0..T`.
pub fn embed_tax_market(market: &TaxMarket) -> Result<BidAskMarket, Error> {
    market.ensure_valid()?;
    let tree = &market.tree;
    let horizon = market.horizon();
    let mut ask = Vec::new();
    let mut bid = Vec::new();
    for i in 0..horizon {
        let mut a = vec![None; tree.len()];
        let mut b = vec![None; tree.len()];
        for (id, node) in tree.nodes() {
            if node.time == i {
                a[id.0] = Some(market.price(id).clone());
            } else if node.time > i {
                let s_i = market.price(tree.ancestor_at(id, i));
                let s_t = market.price(id);
                b[id.0] = Some(s_t - &market.tax * (s_t - s_i));
            }
        }
        ask.push(a);
        bid.push(b);
    }
    Ok(BidAskMarket {
        tree: tree.clone(),
        assets: (0..horizon).map(|i| format!("lot{i}")).collect(),
        ask,
        bid,
        interest: (Rational::one() - &market.tax) * &market.rate,
    })
}

/// A tax strategy traded lot by lot in the embedding.
pub fn embed_strategy(strategy: &Strategy) -> BidAskStrategy {
    let mut out = BidAskStrategy::new();
    for (&(lot, v), q) in &strategy.buys {
        out.buy(lot, v, q.clone());
    }
    for (&(lot, v), q) in &strategy.sells {
        out.sell(lot, v, q.clone());
    }
    out
}

/// Strictly more favorable prices for the embedded market.
#[derive(Clone, Debug)]
pub struct PerturbedPrices {
    pub ask_c: Vec<Vec<Option<Rational>>>,
    pub bid_c: Vec<Vec<Option<Rational>>>,
    /// Whether the market satisfies the never-sure condition, under which
    /// the perturbed market stays arbitrage-free.
    pub never_sure: bool,
}

impl PerturbedPrices {
    /// The embedded market with the perturbed prices.
    pub fn apply(&self, embedded: &BidAskMarket) -> BidAskMarket {
        BidAskMarket { ask: self.ask_c.clone(), bid: self.bid_c.clone(), ..embedded.clone() }
    }
}

/// `ask_c = S_i (1 - (1/3) alpha (1-alpha) r / g^(T-i))` and
/// `bid_c = bid + (1/3) alpha (1-alpha) r S_i`.
pub fn perturb_robust(market: &TaxMarket) -> Result<PerturbedPrices, Error> {
    market.ensure_valid()?;
    if market.tax.is_zero() {
        return Err(Error::Parameter("the perturbation vanishes for a zero tax rate".into()));
    }
    let embedded = embed_tax_market(market)?;
    let tree = &market.tree;
    let horizon = market.horizon();
    let g = market.growth();
    let shift = rat(1, 3) * &market.tax * (Rational::one() - &market.tax) * &market.rate;
    let mut ask_c = embedded.ask.clone();
    let mut bid_c = embedded.bid.clone();
    for i in 0..horizon {
        let cut = &shift / pow(&g, horizon - i);
        for (id, node) in tree.nodes() {
            if node.time < i {
                continue;
            }
            let s_i = market.price(tree.ancestor_at(id, i));
            if let Some(a) = ask_c[i][id.0].as_mut() {
                *a = s_i * (Rational::one() - &cut);
            }
            if let Some(b) = bid_c[i][id.0].as_mut() {
                *b += &shift * s_i;
            }
        }
    }
    let never_sure = check_never_sure(market)?.overall;
    Ok(PerturbedPrices { ask_c, bid_c, never_sure })
}

/// Trade variables of the bid-ask LP.
struct TradeLp {
    /// `(asset, node, is_buy)` per variable.
    vars: Vec<(usize, NodeId, bool)>,
    /// Terminal wealth coefficients per leaf index.
    leaf_coeffs: Vec<Vec<(usize, Rational)>>,
    /// Net-position coefficients per (asset, leaf index).
    closure: Vec<Vec<(usize, Rational)>>,
}

impl TradeLp {
    fn new(market: &BidAskMarket) -> Self {
        let tree = &market.tree;
        let factor = market.discount();
        let horizon = tree.horizon();
        let n_leaves = tree.leaves().len();
        let mut vars = Vec::new();
        let mut leaf_coeffs = vec![Vec::new(); n_leaves];
        let mut closure = vec![Vec::new(); market.assets.len() * n_leaves];
        for k in 0..market.assets.len() {
            for (id, node) in tree.nodes() {
                let f = &factor[horizon - node.time];
                for (is_buy, price) in [(true, &market.ask[k][id.0]), (false, &market.bid[k][id.0])] {
                    let Some(price) = price else { continue };
                    let j = vars.len();
                    vars.push((k, id, is_buy));
                    let (cash, pos) = if is_buy {
                        (-(price * f), Rational::one())
                    } else {
                        (price * f, -Rational::one())
                    };
                    for &l in tree.leaf_set(id) {
                        if !cash.is_zero() {
                            leaf_coeffs[l].push((j, cash.clone()));
                        }
                        closure[k * n_leaves + l].push((j, pos.clone()));
                    }
                }
            }
        }
        TradeLp { vars, leaf_coeffs, closure }
    }

    fn base_program(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.vars.len());
        for row in &self.closure {
            if !row.is_empty() {
                lp.add_constraint(row.clone(), Sense::Eq, Rational::zero());
            }
        }
        lp
    }

    fn strategy(&self, x: &[Rational]) -> BidAskStrategy {
        let mut s = BidAskStrategy::new();
        for (&(k, v, is_buy), q) in self.vars.iter().zip(x) {
            if q.is_zero() {
                continue;
            }
            if is_buy {
                s.buy(k, v, q.clone());
            } else {
                s.sell(k, v, q.clone());
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct BidAskVerdict {
    pub status: Status,
    pub certificate: Option<BidAskStrategy>,
    pub values: Option<Vec<Rational>>,
    pub dual_weights: Option<Vec<Rational>>,
}

/// (NA) of a bid-ask market. With a bound, decides whether some strategy
/// with every trade at most the bound makes a profit of at least 1 on
/// some leaf while losing nowhere.
pub fn bidask_check_na(market: &BidAskMarket, bound: Option<&Rational>) -> Result<BidAskVerdict, Error> {
    market.ensure_valid()?;
    let t = TradeLp::new(market);
    match bound {
        None => unbounded_check(market, &t),
        Some(b) => bounded_check(market, &t, b),
    }
}

fn certified(program: &LinearProgram) -> Result<lp::LpSolution, Error> {
    let sol = lp::solve(program);
    let violations = lp::check_certificates(program, &sol);
    if !violations.is_empty() {
        return Err(Error::Certification(format!("bid-ask LP certificate rejected: {}", violations[0])));
    }
    Ok(sol)
}

fn unbounded_check(market: &BidAskMarket, t: &TradeLp) -> Result<BidAskVerdict, Error> {
    let mut program = t.base_program();
    for (coeffs, p) in t.leaf_coeffs.iter().zip(market.tree.leaf_probs()) {
        for (j, c) in coeffs {
            let cur = program.objective[*j].clone();
            program.set_objective(*j, cur + &p * c);
        }
    }
    let leaf_rows: Vec<usize> = t
        .leaf_coeffs
        .iter()
        .map(|c| program.add_constraint(c.iter().map(|(j, a)| (*j, -a)).collect(), Sense::Le, Rational::zero()))
        .collect();
    program.add_constraint((0..t.vars.len()).map(|j| (j, Rational::one())).collect(), Sense::Le, Rational::one());
    let sol = certified(&program)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Certification(format!("bid-ask LP not optimal: {:?}", sol.status)));
    }
    if sol.value.is_positive() {
        let strategy = t.strategy(&sol.primal);
        let values = bidask_liquidation_value(market, &strategy)?;
        if values.iter().any(Signed::is_negative) {
            return Err(Error::Certification("bid-ask certificate failed re-evaluation".into()));
        }
        Ok(BidAskVerdict { status: Status::Arbitrage, certificate: Some(strategy), values: Some(values), dual_weights: None })
    } else {
        let dual = leaf_rows.iter().map(|&i| sol.dual[i].clone()).collect();
        Ok(BidAskVerdict { status: Status::NoArbitrage, certificate: None, values: None, dual_weights: Some(dual) })
    }
}

fn bounded_check(market: &BidAskMarket, t: &TradeLp, bound: &Rational) -> Result<BidAskVerdict, Error> {
    for target in 0..t.leaf_coeffs.len() {
        let mut program = t.base_program();
        for j in 0..t.vars.len() {
            program.add_constraint(vec![(j, Rational::one())], Sense::Le, bound.clone());
        }
        for (l, c) in t.leaf_coeffs.iter().enumerate() {
            let rhs = if l == target { Rational::one() } else { Rational::zero() };
            program.add_constraint(c.clone(), Sense::Ge, rhs);
        }
        let sol = certified(&program)?;
        if sol.status == LpStatus::Optimal {
            let strategy = t.strategy(&sol.primal);
            let values = bidask_liquidation_value(market, &strategy)?;
            return Ok(BidAskVerdict {
                status: Status::Arbitrage,
                certificate: Some(strategy),
                values: Some(values),
                dual_weights: None,
            });
        }
    }
    Ok(BidAskVerdict { status: Status::NoArbitrage, certificate: None, values: None, dual_weights: None })
}
