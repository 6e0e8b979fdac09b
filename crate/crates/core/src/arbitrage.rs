//! Deciding no-arbitrage and checking the local return conditions.
//!
//! (NA) is decided by a linear program over lot holdings. Holdings of lot
//! `s` live on the decision nodes from its purchase slot up to the slot
//! before liquidation; they may only decrease along a path, which encodes
//! the full-liquidation identity. Terminal wealth is linear in holdings,
//! and the attainable set is a cone, so normalizing total purchases keeps
//! the optimum finite without changing the verdict.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::gains::{gains_on, strategy_from_holdings, value_on, GainMatrix, Strategy};
use crate::lp::{self, LinearProgram, LpStatus, Sense};
use crate::market::TaxMarket;
use crate::rational::{pow, Rational};
use crate::reduced::ReducedMarket;
use crate::schedule::Schedule;
use crate::tree::{NodeId, ScenarioTree};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    NoArbitrage,
    Arbitrage,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::NoArbitrage => "no_arbitrage",
            Status::Arbitrage => "arbitrage",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArbitrageVerdict {
    pub status: Status,
    /// Optimal strategy when an arbitrage exists.
    pub certificate: Option<Strategy>,
    /// Terminal wealth of the certificate per leaf.
    pub values: Option<Vec<Rational>>,
    /// Multipliers of the leaf constraints `V(omega) >= 0` when no
    /// arbitrage exists.
    pub dual_weights: Option<Vec<Rational>>,
    /// Optimal LP value, `sum_omega p_omega V(omega)`.
    pub lp_value: Rational,
}

/// The NA-LP of a schedule together with the bookkeeping to read it back.
pub(crate) struct HoldingsLp {
    /// `(lot slot, decision node)` of every holding variable.
    pub vars: Vec<(usize, NodeId)>,
    /// Sparse terminal-wealth coefficients per leaf index.
    pub leaf_coeffs: Vec<Vec<(usize, Rational)>>,
    /// Variables that are purchases (holding at the purchase slot).
    pub buys: Vec<usize>,
    /// `(variable, predecessor)` pairs with `h(var) <= h(pred)`.
    pub monotone: Vec<(usize, usize)>,
}

impl HoldingsLp {
    pub fn new(tree: &ScenarioTree, sched: &Schedule, gains: &GainMatrix) -> Self {
        let mut vars = Vec::new();
        let mut index = BTreeMap::new();
        let mut buys = Vec::new();
        let mut monotone = Vec::new();
        let last = sched.len() - 1;
        let mut leaf_coeffs = vec![Vec::new(); tree.leaves().len()];
        for a in sched.lot_slots() {
            let lot = sched.slot(a).time;
            for b in a..last {
                let level = sched.slot(b).decision_time;
                let next = sched.slot(b + 1).decision_time;
                for &w in tree.nodes_at(level) {
                    let j = vars.len();
                    vars.push((a, w));
                    index.insert((a, w), j);
                    if b == a {
                        buys.push(j);
                    } else {
                        let prev = sched.slot(b - 1).decision_time;
                        monotone.push((j, index[&(a, tree.ancestor_at(w, prev))]));
                    }
                    let own = if b == a { Rational::zero() } else { gains.at(lot, w).clone() };
                    for &leaf_idx in tree.leaf_set(w) {
                        let leaf = tree.leaves()[leaf_idx];
                        let c = gains.at(lot, tree.ancestor_at(leaf, next)) - &own;
                        if !c.is_zero() {
                            leaf_coeffs[leaf_idx].push((j, c));
                        }
                    }
                }
            }
        }
        HoldingsLp { vars, leaf_coeffs, buys, monotone }
    }

    /// Adds the structural variables and monotonicity rows to a fresh LP.
    pub fn base_program(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.vars.len());
        for &(j, k) in &self.monotone {
            lp.add_constraint(vec![(j, Rational::one()), (k, -Rational::one())], Sense::Le, Rational::zero());
        }
        lp
    }

    pub fn holdings(&self, sched: &Schedule, x: &[Rational]) -> BTreeMap<(usize, NodeId), Rational> {
        self.vars
            .iter()
            .zip(x)
            .map(|(&(a, w), v)| ((sched.slot(a).time, w), v.clone()))
            .collect()
    }
}

fn neg_row(coeffs: &[(usize, Rational)]) -> Vec<(usize, Rational)> {
    coeffs.iter().map(|(j, c)| (*j, -c)).collect()
}

pub(crate) fn solve_na(
    tree: &ScenarioTree,
    sched: &Schedule,
    gains: &GainMatrix,
) -> Result<ArbitrageVerdict, Error> {
    let h = HoldingsLp::new(tree, sched, gains);
    let mut program = h.base_program();
    let probs = tree.leaf_probs();
    for (coeffs, p) in h.leaf_coeffs.iter().zip(&probs) {
        for (j, c) in coeffs {
            let cur = program.objective[*j].clone();
            program.set_objective(*j, cur + p * c);
        }
    }
    let leaf_rows: Vec<usize> = h
        .leaf_coeffs
        .iter()
        .map(|coeffs| program.add_constraint(neg_row(coeffs), Sense::Le, Rational::zero()))
        .collect();
    program.add_constraint(
        h.buys.iter().map(|&j| (j, Rational::one())).collect(),
        Sense::Le,
        Rational::one(),
    );
    let solution = lp::solve(&program);
    if solution.status != LpStatus::Optimal {
        return Err(Error::Certification(format!("NA-LP not optimal: {:?}", solution.status)));
    }
    let violations = lp::check_certificates(&program, &solution);
    if !violations.is_empty() {
        return Err(Error::Certification(format!("NA-LP certificate rejected: {}", violations[0])));
    }
    let verdict = if solution.value.is_positive() {
        let strategy = strategy_from_holdings(tree, sched, &h.holdings(sched, &solution.primal));
        let values = value_on(tree, sched, gains, &strategy);
        if values.iter().any(Signed::is_negative) || !values.iter().any(Signed::is_positive) {
            return Err(Error::Certification("arbitrage certificate failed re-evaluation".into()));
        }
        ArbitrageVerdict {
            status: Status::Arbitrage,
            certificate: Some(strategy),
            values: Some(values),
            dual_weights: None,
            lp_value: solution.value.clone(),
        }
    } else {
        ArbitrageVerdict {
            status: Status::NoArbitrage,
            certificate: None,
            values: None,
            dual_weights: Some(leaf_rows.iter().map(|&i| solution.dual[i].clone()).collect()),
            lp_value: solution.value.clone(),
        }
    };
    Ok(verdict)
}

pub fn check_na(market: &TaxMarket) -> Result<ArbitrageVerdict, Error> {
    market.ensure_valid()?;
    let sched = Schedule::full(market.horizon());
    let gains = crate::gains::gain_matrix(market);
    solve_na(&market.tree, &sched, &gains)
}

/// (NA) for a market with period `t` eliminated.
pub fn check_na_reduced(reduced: &ReducedMarket) -> Result<ArbitrageVerdict, Error> {
    reduced.base.ensure_valid()?;
    let base = &reduced.base;
    let sched = reduced.schedule();
    let gains = gains_on(&base.tree, &sched, &base.tax, &base.growth(), |v| {
        reduced.hat_price(v).clone()
    });
    solve_na(&base.tree, &sched, &gains)
}

/// `kappa_{t,T} = ((-alpha + (1-alpha)^2 r) G + alpha) / (G - alpha)` with
/// `G = (1 + (1-alpha) r)^(T-t)`.
pub fn kappa(t: usize, horizon: usize, alpha: &Rational, r: &Rational) -> Result<Rational, Error> {
    check_params(alpha, r)?;
    if t < 1 || t > horizon {
        return Err(Error::Parameter(format!("period {t} outside 1..={horizon}")));
    }
    let one = Rational::one();
    let big_g = pow(&crate::market::growth(alpha, r), horizon - t);
    let lead = -alpha + (&one - alpha) * (&one - alpha) * r;
    Ok((lead * &big_g + alpha) / (big_g - alpha))
}

pub(crate) fn check_params(alpha: &Rational, r: &Rational) -> Result<(), Error> {
    if alpha.is_negative() || *alpha >= Rational::one() {
        return Err(Error::Parameter("tax rate out of range [0, 1)".into()));
    }
    if !r.is_positive() {
        return Err(Error::Parameter("interest rate must be positive".into()));
    }
    Ok(())
}

/// Which branch of a local condition held in an atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Some child return is strictly below the loss threshold.
    SomeBelow,
    /// All child returns stay at or below the capped return.
    AllCapped,
    /// Some child return is at or below the capped return.
    SomeCapped,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::SomeBelow => "some_below",
            Branch::AllCapped => "all_capped",
            Branch::SomeCapped => "some_capped",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AtomVerdict {
    /// Time-`t-1` node of the atom.
    pub node: NodeId,
    pub returns: Vec<Rational>,
    pub branch: Option<Branch>,
}

#[derive(Clone, Debug)]
pub struct LocalConditionReport {
    pub period: usize,
    pub atoms: Vec<AtomVerdict>,
    pub overall: bool,
}

fn period_in_range(market: &TaxMarket, t: usize) -> Result<(), Error> {
    let horizon = market.horizon();
    if t < 1 || t > horizon {
        return Err(Error::Parameter(format!("period {t} outside 1..={horizon}")));
    }
    Ok(())
}

fn dichotomy(
    market: &TaxMarket,
    t: usize,
    below: &Rational,
    cap: &Rational,
) -> Result<LocalConditionReport, Error> {
    period_in_range(market, t)?;
    let mut atoms = Vec::new();
    for (node, rets) in market.period_returns(t)? {
        let returns: Vec<Rational> = rets.into_iter().map(|r| r.value).collect();
        let branch = if returns.iter().any(|x| x < below) {
            Some(Branch::SomeBelow)
        } else if returns.iter().all(|x| x <= cap) {
            Some(Branch::AllCapped)
        } else {
            None
        };
        atoms.push(AtomVerdict { node, returns, branch });
    }
    let overall = atoms.iter().all(|a| a.branch.is_some());
    Ok(LocalConditionReport { period: t, atoms, overall })
}

/// No one-period arbitrage in period `t`: in every time-`t-1` atom some
/// return is below `r` or all returns are at most `r`.
pub fn check_one_period(market: &TaxMarket, t: usize) -> Result<LocalConditionReport, Error> {
    dichotomy(market, t, &market.rate, &market.rate)
}

/// The sufficient condition for robust local no-arbitrage in period `t`:
/// some return below `kappa_{t,T}` or all returns at most `(1-alpha) r`.
pub fn check_rlna_sufficient(market: &TaxMarket, t: usize) -> Result<LocalConditionReport, Error> {
    period_in_range(market, t)?;
    let k = kappa(t, market.horizon(), &market.tax, &market.rate)?;
    let cap = (Rational::one() - &market.tax) * &market.rate;
    dichotomy(market, t, &k, &cap)
}

#[derive(Clone, Debug)]
pub struct NeverSureReport {
    pub periods: Vec<LocalConditionReport>,
    pub overall: bool,
}

/// In every atom of every period some return is at most `(1-alpha) r`:
/// the investor is never sure to beat the after-tax bank account.
pub fn check_never_sure(market: &TaxMarket) -> Result<NeverSureReport, Error> {
    check_params(&market.tax, &market.rate)?;
    if market.tax.is_zero() {
        return Err(Error::Parameter("the never-sure condition requires a positive tax rate".into()));
    }
    let cap = (Rational::one() - &market.tax) * &market.rate;
    let mut periods = Vec::new();
    for t in 1..=market.horizon() {
        let mut atoms = Vec::new();
        for (node, rets) in market.period_returns(t)? {
            let returns: Vec<Rational> = rets.into_iter().map(|r| r.value).collect();
            let branch = returns.iter().any(|x| x <= &cap).then_some(Branch::SomeCapped);
            atoms.push(AtomVerdict { node, returns, branch });
        }
        let overall = atoms.iter().all(|a| a.branch.is_some());
        periods.push(LocalConditionReport { period: t, atoms, overall });
    }
    let overall = periods.iter().all(|p| p.overall);
    Ok(NeverSureReport { periods, overall })
}

/// Smallest purchase bound admitting an arbitrage with profit at least 1
/// on some leaf.
#[derive(Clone, Debug)]
pub struct ScaleReport {
    /// Exact threshold; `None` when no arbitrage exists at any scale.
    pub threshold: Option<Rational>,
    /// Leaf on which the threshold is attained.
    pub leaf: Option<NodeId>,
    /// Minimal-scale arbitrage.
    pub certificate: Option<Strategy>,
    pub values: Option<Vec<Rational>>,
    /// Verdict with every purchase capped by the requested bound.
    pub status_at_bound: Option<Status>,
}

/// Per leaf, `min B` subject to all purchases `<= B`, `V >= 0` and
/// `V(omega) >= 1`; the threshold is the minimum over leaves.
pub fn arbitrage_scale(market: &TaxMarket, bound: Option<&Rational>) -> Result<ScaleReport, Error> {
    market.ensure_valid()?;
    let tree = &market.tree;
    let sched = Schedule::full(market.horizon());
    let gains = crate::gains::gain_matrix(market);
    let h = HoldingsLp::new(tree, &sched, &gains);
    let mut best: Option<(Rational, usize, Vec<Rational>)> = None;
    for target in 0..tree.leaves().len() {
        let mut program = h.base_program();
        let b = program.add_var();
        program.set_objective(b, -Rational::one());
        for &j in &h.buys {
            program.add_constraint(vec![(j, Rational::one()), (b, -Rational::one())], Sense::Le, Rational::zero());
        }
        for (idx, coeffs) in h.leaf_coeffs.iter().enumerate() {
            let rhs = if idx == target { -Rational::one() } else { Rational::zero() };
            program.add_constraint(neg_row(coeffs), Sense::Le, rhs);
        }
        let sol = lp::solve(&program);
        let violations = lp::check_certificates(&program, &sol);
        if !violations.is_empty() {
            return Err(Error::Certification(format!("scale LP certificate rejected: {}", violations[0])));
        }
        match sol.status {
            LpStatus::Infeasible => {}
            LpStatus::Optimal => {
                let threshold = -sol.value.clone();
                if best.as_ref().is_none_or(|(t, _, _)| threshold < *t) {
                    best = Some((threshold, target, sol.primal));
                }
            }
            LpStatus::Unbounded => {
                return Err(Error::Certification("scale LP unbounded".into()));
            }
        }
    }
    let status_at = |threshold: Option<&Rational>| {
        bound.map(|b| match threshold {
            Some(t) if t <= b => Status::Arbitrage,
            _ => Status::NoArbitrage,
        })
    };
    Ok(match best {
        None => ScaleReport {
            threshold: None,
            leaf: None,
            certificate: None,
            values: None,
            status_at_bound: status_at(None),
        },
        Some((threshold, target, x)) => {
            let strategy = strategy_from_holdings(tree, &sched, &h.holdings(&sched, &x[..h.vars.len()]));
            let values = value_on(tree, &sched, &gains, &strategy);
            let status_at_bound = status_at(Some(&threshold));
            ScaleReport {
                threshold: Some(threshold),
                leaf: Some(tree.leaves()[target]),
                certificate: Some(strategy),
                values: Some(values),
                status_at_bound,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::liquidation_value;
    use crate::rational::{int, rat};
    use crate::tree::TreeBuilder;

    fn deterministic(horizon: usize, step: Rational, r: Rational, alpha: Rational) -> TaxMarket {
        let mut b = TreeBuilder::new();
        let mut v = b.root();
        for _ in 0..horizon {
            v = b.child(v, int(1));
        }
        let price = (0..=horizon).map(|u| pow(&step, u)).collect();
        TaxMarket::new(b.build(), price, r, alpha)
    }

    fn one_step(returns: &[Rational], r: Rational, alpha: Rational) -> TaxMarket {
        let mut b = TreeBuilder::new();
        let root = b.root();
        let n = returns.len() as i64;
        for _ in returns {
            b.child(root, rat(1, n));
        }
        let mut price = vec![int(1)];
        price.extend(returns.iter().map(|x| int(1) + x));
        TaxMarket::new(b.build(), price, r, alpha)
    }

    #[test]
    fn deferral_is_an_arbitrage() {
        let m = deterministic(2, rat(11, 10), rat(1, 10), rat(1, 2));
        let v = check_na(&m).unwrap();
        assert_eq!(v.status, Status::Arbitrage);
        let values = liquidation_value(&m, v.certificate.as_ref().unwrap()).unwrap();
        assert!(values.iter().all(|x| x.is_positive()));
        assert!(v.certificate.unwrap().buys.keys().any(|k| k.0 == 0));
    }

    #[test]
    fn untaxed_bank_copy_is_arbitrage_free() {
        let m = deterministic(2, rat(11, 10), rat(1, 10), int(0));
        let v = check_na(&m).unwrap();
        assert_eq!(v.status, Status::NoArbitrage);
        assert!(v.dual_weights.unwrap().iter().all(|w| !w.is_negative()));
    }

    #[test]
    fn one_period_branches() {
        let r = rat(1, 10);
        let flat = one_step(std::slice::from_ref(&r), r.clone(), rat(1, 3));
        assert_eq!(check_one_period(&flat, 1).unwrap().atoms[0].branch, Some(Branch::AllCapped));
        let jump = one_step(&[&r * int(2)], r.clone(), rat(1, 3));
        assert!(!check_one_period(&jump, 1).unwrap().overall);
        let mixed = one_step(&[&r / int(2), &r * int(2)], r.clone(), rat(1, 3));
        assert_eq!(check_one_period(&mixed, 1).unwrap().atoms[0].branch, Some(Branch::SomeBelow));
    }

    #[test]
    fn kappa_anchors() {
        let (a, r) = (rat(1, 4), rat(1, 10));
        assert_eq!(kappa(3, 3, &a, &r).unwrap(), (int(1) - &a) * &r);
        assert_eq!(kappa(1, 5, &int(0), &r).unwrap(), r);
        assert!(kappa(0, 3, &a, &r).is_err());
        assert!(kappa(1, 3, &int(1), &r).is_err());
    }

    #[test]
    fn kappa_equality_fails_the_strict_branch() {
        let (a, r) = (rat(1, 2), rat(1, 10));
        let k = kappa(1, 1, &a, &r).unwrap();
        let m = one_step(&[k, int(1)], r, a);
        let rep = check_rlna_sufficient(&m, 1).unwrap();
        assert!(!rep.overall);
    }

    #[test]
    fn never_sure_rejects_zero_tax() {
        let m = deterministic(1, rat(11, 10), rat(1, 10), int(0));
        assert!(check_never_sure(&m).is_err());
    }

    #[test]
    fn scale_is_infinite_without_arbitrage_and_attained_otherwise() {
        let m = deterministic(2, rat(11, 10), rat(1, 10), int(0));
        let s = arbitrage_scale(&m, Some(&int(5))).unwrap();
        assert!(s.threshold.is_none());
        assert_eq!(s.status_at_bound, Some(Status::NoArbitrage));

        let m = deterministic(2, rat(11, 10), rat(1, 10), rat(1, 2));
        let s = arbitrage_scale(&m, None).unwrap();
        let b = s.threshold.unwrap();
        assert!(b.is_positive());
        let cert = s.certificate.unwrap();
        assert_eq!(cert.max_buy(), b);
        let values = liquidation_value(&m, &cert).unwrap();
        assert!(values.iter().any(|x| *x >= int(1)));
        assert!(values.iter().all(|x| !x.is_negative()));
    }
}
