//! Seeded random markets and strategies for property tests.
//!
//! Prices are built multiplicatively from per-edge returns, so a zero
//! price is absorbing by construction. All values lie on small rational
//! grids to keep the exact LPs cheap.

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::arbitrage::kappa;
use crate::gains::Strategy;
use crate::market::TaxMarket;
use crate::rational::{int, rat, Rational};
use crate::reduced::ReducedMarket;
use crate::tree::{NodeId, ScenarioTree, TreeBuilder};

pub const RATES: [(i64, i64); 4] = [(1, 25), (1, 20), (1, 10), (1, 5)];
pub const TAXES: [(i64, i64); 5] = [(0, 1), (1, 5), (1, 4), (1, 2), (3, 4)];

/// Tax and interest rate from fixed grids; `positive_tax` excludes zero.
pub fn random_params<R: Rng>(rng: &mut R, positive_tax: bool) -> (Rational, Rational) {
    let taxes = if positive_tax { &TAXES[1..] } else { &TAXES[..] };
    let (a, b) = *taxes.choose(rng).unwrap();
    let (c, d) = *RATES.choose(rng).unwrap();
    (rat(a, b), rat(c, d))
}

/// Tree with the given number of periods and 1 to `max_branches`
/// children per node, branch weights drawn from `1..=4`.
pub fn random_tree<R: Rng>(rng: &mut R, periods: usize, max_branches: usize) -> ScenarioTree {
    let mut b = TreeBuilder::new();
    let mut layer = vec![b.root()];
    for _ in 0..periods {
        let mut next = Vec::new();
        for &v in &layer {
            let k = rng.gen_range(1..=max_branches);
            let w: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
            let total: i64 = w.iter().sum();
            for x in w {
                next.push(b.child(v, rat(x, total)));
            }
        }
        layer = next;
    }
    b.build()
}

/// Tree on which exhaustive stopping-time enumeration stays below
/// `10^5` per start: up to three periods with three branches, or four
/// periods with two.
pub fn random_small_tree<R: Rng>(rng: &mut R) -> ScenarioTree {
    let periods = rng.gen_range(1..=4);
    let branches = if periods == 4 { 2 } else { 3 };
    random_tree(rng, periods, branches)
}

/// Return drawn uniformly from the grid `k/20`, `k = -20..=30`.
pub fn grid_return<R: Rng>(rng: &mut R) -> Rational {
    rat(rng.gen_range(-20..=30), 20)
}

/// Return in `[lo, hi]` on a grid of ten steps.
pub fn return_between<R: Rng>(rng: &mut R, lo: &Rational, hi: &Rational) -> Rational {
    lo + (hi - lo) * rat(rng.gen_range(0..=10), 10)
}

/// Return in `[-1, x)` for `x > -1`.
pub fn return_below<R: Rng>(rng: &mut R, x: &Rational) -> Rational {
    let lo = -Rational::one();
    &lo + (x - &lo) * rat(rng.gen_range(0..10), 10)
}

/// Prices from per-period returns; `returns(rng, t, n)` yields the
/// returns of the `n` children of a time-`t-1` node.
pub fn market_from_returns<R: Rng>(
    rng: &mut R,
    tree: ScenarioTree,
    alpha: Rational,
    r: Rational,
    mut returns: impl FnMut(&mut R, usize, usize) -> Vec<Rational>,
) -> TaxMarket {
    let mut price = vec![Rational::zero(); tree.len()];
    let root = tree.root();
    price[root.0] = int(rng.gen_range(1..=3));
    for t in 1..=tree.horizon() {
        for &v in tree.nodes_at(t - 1) {
            let kids = tree.children(v);
            let rets = returns(rng, t, kids.len());
            for (&w, ret) in kids.iter().zip(rets) {
                price[w.0] = &price[v.0] * (Rational::one() + ret);
            }
        }
    }
    TaxMarket::new(tree, price, r, alpha)
}

/// Unconstrained returns; roughly half of these markets admit an arbitrage.
pub fn random_market<R: Rng>(rng: &mut R, tree: ScenarioTree) -> TaxMarket {
    let (alpha, r) = random_params(rng, false);
    let cap = (Rational::one() - &alpha) * &r;
    market_from_returns(rng, tree, alpha, r, |rng, _, n| {
        let capped = rng.gen_bool(0.4);
        (0..n)
            .map(|_| {
                if capped {
                    return_between(rng, &-Rational::one(), &cap)
                } else {
                    grid_return(rng)
                }
            })
            .collect()
    })
}

/// Returns satisfying the sufficient local condition in period `t`: some
/// return below `kappa_{t,T}`, or all at most `(1-alpha) r`.
pub fn dichotomy_returns<R: Rng>(rng: &mut R, n: usize, kappa_t: &Rational, cap: &Rational) -> Vec<Rational> {
    let mut rets: Vec<Rational>;
    if kappa_t > &-Rational::one() && rng.gen_bool(0.5) {
        rets = (0..n).map(|_| grid_return(rng)).collect();
        let k = rng.gen_range(0..n);
        rets[k] = return_below(rng, kappa_t);
    } else {
        rets = (0..n).map(|_| return_between(rng, &-Rational::one(), cap)).collect();
    }
    rets
}

/// Market satisfying the sufficient local condition in every period.
pub fn dichotomy_market<R: Rng>(rng: &mut R, tree: ScenarioTree) -> TaxMarket {
    let (alpha, r) = random_params(rng, false);
    let horizon = tree.horizon();
    let cap = (Rational::one() - &alpha) * &r;
    let kappas: Vec<Rational> =
        (1..=horizon).map(|t| kappa(t, horizon, &alpha, &r).expect("valid parameters")).collect();
    market_from_returns(rng, tree, alpha, r, |rng, t, n| dichotomy_returns(rng, n, &kappas[t - 1], &cap))
}

/// Market in which every atom has some return at most `(1-alpha) r`.
pub fn never_sure_market<R: Rng>(rng: &mut R, tree: ScenarioTree) -> TaxMarket {
    let (alpha, r) = random_params(rng, true);
    let cap = (Rational::one() - &alpha) * &r;
    market_from_returns(rng, tree, alpha, r, |rng, _, n| {
        let mut rets: Vec<Rational> = (0..n).map(|_| grid_return(rng)).collect();
        let k = rng.gen_range(0..n);
        rets[k] = return_between(rng, &-Rational::one(), &cap);
        rets
    })
}

/// Base market with the sufficient local condition in period `t` and
/// random reduced prices elsewhere; the reduced prices are not checked
/// for absence of arbitrage.
pub fn random_reduced<R: Rng>(rng: &mut R, tree: ScenarioTree, t: usize) -> ReducedMarket {
    let (alpha, r) = random_params(rng, false);
    let horizon = tree.horizon();
    let cap = (Rational::one() - &alpha) * &r;
    let kt = kappa(t, horizon, &alpha, &r).expect("valid parameters");
    let base = market_from_returns(rng, tree, alpha, r, |rng, u, n| {
        if u == t {
            dichotomy_returns(rng, n, &kt, &cap)
        } else {
            (0..n).map(|_| grid_return(rng)).collect()
        }
    });
    let tree = &base.tree;
    let mut hat: Vec<Option<Rational>> = vec![None; tree.len()];
    hat[tree.root().0] = Some(base.price[tree.root().0].clone());
    let mut atom_capped = std::collections::HashMap::new();
    for u in 1..=horizon {
        if u == t {
            continue;
        }
        for &w in tree.nodes_at(u) {
            let from = if u == t + 1 { tree.ancestor_at(w, u - 2) } else { tree.parent(w).expect("not root") };
            let decided = tree.parent(w).expect("not root");
            let capped = *atom_capped.entry(decided).or_insert_with(|| rng.gen_bool(0.7));
            let ret = if capped { return_between(rng, &-Rational::one(), &cap) } else { grid_return(rng) };
            let prev = hat[from.0].clone().expect("earlier reduced price");
            hat[w.0] = Some(prev * (Rational::one() + ret));
        }
    }
    ReducedMarket::new(base, t, hat).expect("consistent reduced market")
}

/// Fully liquidated strategy: every lot bought at a random subset of
/// nodes and sold off in random fractions along each path.
pub fn random_strategy<R: Rng>(rng: &mut R, market: &TaxMarket) -> Strategy {
    let tree = &market.tree;
    let horizon = tree.horizon();
    let mut s = Strategy::new();
    for lot in 0..horizon {
        for &v in tree.nodes_at(lot) {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let amount = rat(rng.gen_range(1..=6), 2);
            s.buy(lot, v, amount.clone());
            sell_down(rng, tree, lot, v, amount, &mut s);
        }
    }
    s
}

fn sell_down<R: Rng>(rng: &mut R, tree: &ScenarioTree, lot: usize, v: NodeId, held: Rational, s: &mut Strategy) {
    for &w in tree.children(v) {
        let sold = if tree.children(w).is_empty() { held.clone() } else { &held * rat(rng.gen_range(0..=4), 4) };
        s.sell(lot, w, sold.clone());
        let rest = &held - sold;
        if !rest.is_zero() {
            sell_down(rng, tree, lot, w, rest, s);
        }
    }
}
