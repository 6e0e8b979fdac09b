//! Separating measures, stopping times and Snell envelopes.
//!
//! A measure `Q ~ P` separates when every after-tax lot gain, stopped at
//! any stopping time, has nonpositive `Q`-expectation. On a finite tree it
//! comes for free from the NA-LP dual: with `lambda` the multipliers of the
//! leaf rows, `q` proportional to `p + lambda` makes `E_q V(N) <= 0` for
//! every strategy.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::arbitrage::{solve_na, HoldingsLp, Status};
use crate::gains::{gain_matrix, GainMatrix};
use crate::lp::{self, LpStatus, Sense};
use crate::market::TaxMarket;
use crate::rational::Rational;
use crate::schedule::Schedule;
use crate::tree::{NodeId, ScenarioTree};
use crate::Error;

/// Default cap on the number of stopping times enumerated per start index.
pub const DEFAULT_STOPPING_CAP: u128 = 100_000;

/// Environment variable overriding [`DEFAULT_STOPPING_CAP`].
pub const STOPPING_CAP_ENV: &str = "TAXARB_STOPPING_CAP";

/// Probability weights per leaf, in the order of `tree.leaves()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeparatingMeasure {
    pub weights: Vec<Rational>,
}

impl SeparatingMeasure {
    /// Checks positivity and normalization against a tree.
    pub fn validate(&self, tree: &ScenarioTree) -> Result<(), Error> {
        if self.weights.len() != tree.leaves().len() {
            return Err(Error::Parameter(format!(
                "measure has {} weights for {} leaves",
                self.weights.len(),
                tree.leaves().len()
            )));
        }
        if let Some(k) = self.weights.iter().position(|w| !w.is_positive()) {
            return Err(Error::Parameter(format!(
                "measure weight at {:?} is not positive",
                tree.label(tree.leaves()[k])
            )));
        }
        let total: Rational = self.weights.iter().sum();
        if !total.is_one() {
            return Err(Error::Parameter(format!("measure weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// `Q` of every node (sum over its leaves).
    pub fn node_weights(&self, tree: &ScenarioTree) -> Vec<Rational> {
        (0..tree.len())
            .map(|k| tree.leaf_set(NodeId(k)).iter().map(|&l| self.weights[l].clone()).sum())
            .collect()
    }

    pub fn expectation(&self, values: &[Rational]) -> Rational {
        self.weights.iter().zip(values).map(|(q, v)| q * v).sum()
    }
}

/// `q` proportional to `p + lambda` from the NA-LP dual, or `None` when the
/// market admits an arbitrage.
pub fn find_separating_measure(market: &TaxMarket) -> Result<Option<SeparatingMeasure>, Error> {
    market.ensure_valid()?;
    let sched = Schedule::full(market.horizon());
    let gains = gain_matrix(market);
    let verdict = solve_na(&market.tree, &sched, &gains)?;
    if verdict.status == Status::Arbitrage {
        return Ok(None);
    }
    let lambda = verdict.dual_weights.expect("dual weights accompany no_arbitrage");
    let m: Vec<Rational> = market.tree.leaf_probs().iter().zip(&lambda).map(|(p, l)| p + l).collect();
    let total: Rational = m.iter().sum();
    let q = SeparatingMeasure { weights: m.iter().map(|x| x / &total).collect() };
    q.validate(&market.tree)?;
    Ok(Some(q))
}

/// `max E_q V(N)` over strategies with total purchases at most 1; `q`
/// separates iff this is zero. Independent of how `q` was found.
pub fn max_expected_value(market: &TaxMarket, q: &SeparatingMeasure) -> Result<Rational, Error> {
    market.ensure_valid()?;
    q.validate(&market.tree)?;
    let sched = Schedule::full(market.horizon());
    let h = HoldingsLp::new(&market.tree, &sched, &gain_matrix(market));
    let mut program = h.base_program();
    for (coeffs, w) in h.leaf_coeffs.iter().zip(&q.weights) {
        for (j, c) in coeffs {
            let cur = program.objective[*j].clone();
            program.set_objective(*j, cur + w * c);
        }
    }
    program.add_constraint(h.buys.iter().map(|&j| (j, Rational::one())).collect(), Sense::Le, Rational::one());
    let sol = lp::solve(&program);
    let violations = lp::check_certificates(&program, &sol);
    if sol.status != LpStatus::Optimal || !violations.is_empty() {
        return Err(Error::Certification("expected-value LP failed to certify".into()));
    }
    Ok(sol.value)
}

/// Outcome of the exhaustive stopping-time check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoppingCheck {
    /// Number of stopping times checked per start index.
    Ok { counts: Vec<u128> },
    /// A stopping time with positive expected stopped gain.
    Violated { start: usize, stop_nodes: Vec<NodeId>, expectation: Rational },
}

/// The cap from the environment, falling back to the default.
pub fn stopping_cap() -> u128 {
    std::env::var(STOPPING_CAP_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_STOPPING_CAP)
}

/// Number of stopping times in `T_i` on the whole tree.
pub fn count_stopping_times(tree: &ScenarioTree, start: usize) -> BigUint {
    fn count(tree: &ScenarioTree, v: NodeId) -> BigUint {
        let children = tree.children(v);
        if children.is_empty() {
            return BigUint::one();
        }
        BigUint::one() + children.iter().map(|&c| count(tree, c)).product::<BigUint>()
    }
    tree.nodes_at(start).iter().map(|&v| count(tree, v)).product()
}

pub fn verify_stopping_constraints(market: &TaxMarket, q: &SeparatingMeasure) -> Result<StoppingCheck, Error> {
    verify_stopping_constraints_with_cap(market, q, stopping_cap())
}

/// Enumerates every stopping time `tau` in `T_i` for each `i < T` and
/// checks `E_q(X_{i,tau}) <= 0`, with `X_{i,i} := 0`.
pub fn verify_stopping_constraints_with_cap(
    market: &TaxMarket,
    q: &SeparatingMeasure,
    cap: u128,
) -> Result<StoppingCheck, Error> {
    market.ensure_valid()?;
    let tree = &market.tree;
    q.validate(tree)?;
    let gains = gain_matrix(market);
    let qn = q.node_weights(tree);
    let mut counts = Vec::new();
    for start in 0..market.horizon() {
        let total = count_stopping_times(tree, start);
        if total > BigUint::from(cap) {
            return Err(Error::TooLarge { count: total.to_string(), cap });
        }
        counts.push(total.to_u128().expect("bounded by the cap"));
        // Per time-`start` node, every way of stopping in its subtree.
        let per_node: Vec<Vec<(Vec<NodeId>, Rational)>> = tree
            .nodes_at(start)
            .iter()
            .map(|&v| stop_options(tree, &gains, &qn, start, v))
            .collect();
        let mut digits = vec![0usize; per_node.len()];
        loop {
            let expectation: Rational = per_node.iter().zip(&digits).map(|(opts, &d)| &opts[d].1).sum();
            if expectation.is_positive() {
                let stop_nodes = per_node
                    .iter()
                    .zip(&digits)
                    .flat_map(|(opts, &d)| opts[d].0.iter().copied())
                    .collect();
                return Ok(StoppingCheck::Violated { start, stop_nodes, expectation });
            }
            let mut k = 0;
            while k < digits.len() {
                digits[k] += 1;
                if digits[k] < per_node[k].len() {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == digits.len() {
                break;
            }
        }
    }
    Ok(StoppingCheck::Ok { counts })
}

/// All stopping rules on the subtree of `v`: the set of stop nodes and
/// the contribution `sum q(w) X_{start}(w)` over them.
fn stop_options(
    tree: &ScenarioTree,
    gains: &GainMatrix,
    qn: &[Rational],
    start: usize,
    v: NodeId,
) -> Vec<(Vec<NodeId>, Rational)> {
    let here = if tree.time(v) == start {
        Rational::zero()
    } else {
        &qn[v.0] * gains.at(start, v)
    };
    let mut out = vec![(vec![v], here)];
    let children = tree.children(v);
    if children.is_empty() {
        return out;
    }
    let mut combos: Vec<(Vec<NodeId>, Rational)> = vec![(Vec::new(), Rational::zero())];
    for &c in children {
        let sub = stop_options(tree, gains, qn, start, c);
        let mut next = Vec::with_capacity(combos.len() * sub.len());
        for (nodes, val) in &combos {
            for (sn, sv) in &sub {
                let mut all = nodes.clone();
                all.extend_from_slice(sn);
                next.push((all, val + sv));
            }
        }
        combos = next;
    }
    out.extend(combos);
    out
}

/// Snell envelope of `X_{i,.}` under `q` and its Doob martingale part.
#[derive(Clone, Debug)]
pub struct SnellEnvelope {
    pub start: usize,
    /// `U` on every node at or after `start`.
    pub u: BTreeMap<NodeId, Rational>,
    /// Martingale part, `M_i = 0`.
    pub m: BTreeMap<NodeId, Rational>,
    /// The stopped gain `X_{i,t}` on the same nodes.
    pub x: BTreeMap<NodeId, Rational>,
}

impl SnellEnvelope {
    /// Broken structural invariants (recursion, `M_i = 0`, martingale).
    pub fn violations(&self, tree: &ScenarioTree, q: &SeparatingMeasure) -> Vec<String> {
        let qn = q.node_weights(tree);
        let mut out = Vec::new();
        for (&v, u) in &self.u {
            let children = tree.children(v);
            let expected = if children.is_empty() {
                self.x[&v].clone()
            } else {
                let cont = conditional(&qn, children, v, |c| self.u[&c].clone());
                crate::rational::max(&self.x[&v], &cont)
            };
            if *u != expected {
                out.push(format!("U recursion fails at {:?}", tree.label(v)));
            }
            if tree.time(v) == self.start && !self.m[&v].is_zero() {
                out.push(format!("M is not zero at the start node {:?}", tree.label(v)));
            }
            if !children.is_empty() && conditional(&qn, children, v, |c| self.m[&c].clone()) != self.m[&v] {
                out.push(format!("M is not a martingale at {:?}", tree.label(v)));
            }
        }
        out
    }

    /// `M_t >= X_{i,t}` on every node after the start.
    pub fn dominates(&self, tree: &ScenarioTree) -> bool {
        self.m.iter().all(|(v, m)| tree.time(*v) == self.start || m >= &self.x[v])
    }
}

fn conditional(
    qn: &[Rational],
    children: &[NodeId],
    v: NodeId,
    f: impl Fn(NodeId) -> Rational,
) -> Rational {
    children.iter().map(|&c| &qn[c.0] * f(c)).sum::<Rational>() / &qn[v.0]
}

pub fn snell_martingale_part(
    market: &TaxMarket,
    q: &SeparatingMeasure,
    start: usize,
) -> Result<SnellEnvelope, Error> {
    market.ensure_valid()?;
    let tree = &market.tree;
    q.validate(tree)?;
    if start >= market.horizon() {
        return Err(Error::Parameter(format!(
            "start {start} must be below the horizon {}",
            market.horizon()
        )));
    }
    let gains = gain_matrix(market);
    let qn = q.node_weights(tree);
    let mut x = BTreeMap::new();
    for t in start..=market.horizon() {
        for &v in tree.nodes_at(t) {
            let xv = if t == start { Rational::zero() } else { gains.at(start, v).clone() };
            x.insert(v, xv);
        }
    }
    let mut u: BTreeMap<NodeId, Rational> = BTreeMap::new();
    for t in (start..=market.horizon()).rev() {
        for &v in tree.nodes_at(t) {
            let children = tree.children(v);
            let val = if children.is_empty() {
                x[&v].clone()
            } else {
                let cont = conditional(&qn, children, v, |c| u[&c].clone());
                crate::rational::max(&x[&v], &cont)
            };
            u.insert(v, val);
        }
    }
    let mut m = BTreeMap::new();
    for t in start..=market.horizon() {
        for &v in tree.nodes_at(t) {
            if t == start {
                m.insert(v, Rational::zero());
                continue;
            }
            let p = tree.parent(v).expect("non-root node");
            let siblings = tree.children(p);
            let cont = conditional(&qn, siblings, p, |c| u[&c].clone());
            let val = &m[&p] + &u[&v] - cont;
            m.insert(v, val);
        }
    }
    let snell = SnellEnvelope { start, u, m, x };
    let broken = snell.violations(tree, q);
    if !broken.is_empty() {
        return Err(Error::Certification(broken.join("; ")));
    }
    Ok(snell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{liquidation_value, Strategy};
    use crate::rational::{int, rat};
    use crate::tree::TreeBuilder;

    fn one_step(up: Rational, down: Rational, r: Rational) -> TaxMarket {
        let mut b = TreeBuilder::new();
        let root = b.root();
        b.child(root, rat(1, 2));
        b.child(root, rat(1, 2));
        TaxMarket::new(b.build(), vec![int(1), int(1) + up, int(1) - down], r, int(0))
    }

    #[test]
    fn untaxed_one_step_measure_is_a_martingale_measure() {
        let (u, d, r) = (rat(1, 5), rat(1, 10), rat(1, 20));
        let m = one_step(u.clone(), d.clone(), r.clone());
        let q = find_separating_measure(&m).unwrap().unwrap();
        // Hand solution of q_u (1+u) + q_d (1-d) = 1 + r.
        let qu = (&r + &d) / (&u + &d);
        assert_eq!(q.weights, vec![qu.clone(), int(1) - qu]);
        let gains = gain_matrix(&m);
        let e: Rational = m
            .tree
            .leaves()
            .iter()
            .zip(&q.weights)
            .map(|(&l, w)| w * gains.at(0, l))
            .sum();
        assert!(e.is_zero());
        assert!(max_expected_value(&m, &q).unwrap().is_zero());
    }

    #[test]
    fn arbitrage_has_no_measure_and_uniform_weights_are_caught() {
        let mut b = TreeBuilder::new();
        let r0 = b.root();
        let r1 = b.child(r0, int(1));
        b.child(r1, int(1));
        let m = TaxMarket::new(b.build(), vec![int(1), rat(11, 10), rat(121, 100)], rat(1, 10), rat(1, 2));
        assert!(find_separating_measure(&m).unwrap().is_none());
        let uniform = SeparatingMeasure { weights: vec![int(1)] };
        match verify_stopping_constraints(&m, &uniform).unwrap() {
            StoppingCheck::Violated { expectation, .. } => assert!(expectation.is_positive()),
            other => panic!("expected a violation, got {other:?}"),
        }
    }

    #[test]
    fn stopping_counts_match_the_recursion() {
        let mut b = TreeBuilder::new();
        let r = b.root();
        for _ in 0..2 {
            let c = b.child(r, rat(1, 2));
            b.child(c, rat(1, 2));
            b.child(c, rat(1, 2));
        }
        let tree = b.build();
        // Level 1 nodes: 1 + 1*1 = 2 each; root: 1 + 2*2 = 5.
        assert_eq!(count_stopping_times(&tree, 0), BigUint::from(5u32));
        assert_eq!(count_stopping_times(&tree, 1), BigUint::from(4u32));
        assert_eq!(count_stopping_times(&tree, 2), BigUint::from(1u32));
    }

    #[test]
    fn cap_is_enforced() {
        let m = one_step(rat(1, 5), rat(1, 10), rat(1, 20));
        let q = find_separating_measure(&m).unwrap().unwrap();
        let err = verify_stopping_constraints_with_cap(&m, &q, 1).unwrap_err();
        assert!(err.to_string().contains("tree too large for exhaustive verification"));
    }

    #[test]
    fn deterministic_snell_envelope_has_no_martingale_increment() {
        let mut b = TreeBuilder::new();
        let mut v = b.root();
        for _ in 0..3 {
            v = b.child(v, int(1));
        }
        let price = vec![int(1), rat(6, 5), rat(1, 2), rat(3, 2)];
        let m = TaxMarket::new(b.build(), price, rat(1, 10), rat(1, 4));
        let q = SeparatingMeasure { weights: vec![int(1)] };
        let s = snell_martingale_part(&m, &q, 0).unwrap();
        let root = m.tree.root();
        let best = s.x.values().max().unwrap().clone();
        assert_eq!(s.u[&root], best);
        assert!(s.m.values().all(Zero::is_zero));
    }

    #[test]
    fn separating_measure_bounds_expected_wealth() {
        let mut b = TreeBuilder::new();
        let r = b.root();
        let a = b.child(r, rat(1, 3));
        let c = b.child(r, rat(2, 3));
        b.child(a, rat(1, 2));
        b.child(a, rat(1, 2));
        b.child(c, int(1));
        let price = vec![int(1), rat(3, 2), rat(4, 5), int(2), rat(1, 2), rat(7, 10)];
        let m = TaxMarket::new(b.build(), price, rat(1, 10), rat(1, 3));
        let q = find_separating_measure(&m).unwrap().unwrap();
        let mut s = Strategy::new();
        s.buy(0, r, int(1)).sell(0, a, int(1)).sell(0, c, int(1));
        s.buy(1, c, int(2)).sell(1, NodeId(5), int(2));
        let v = liquidation_value(&m, &s).unwrap();
        assert!(!q.expectation(&v).is_positive());
        for i in 0..2 {
            let snell = snell_martingale_part(&m, &q, i).unwrap();
            assert!(m.tree.nodes_at(i).iter().all(|v| snell.u[v].is_zero()));
            assert!(snell.dominates(&m.tree));
        }
    }
}
