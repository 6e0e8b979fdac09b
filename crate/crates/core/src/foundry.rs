//! Parametric examples built from their defining inequalities.
//!
//! Every generator fixes its free parameters deterministically (closed
//! forms where they exist, halving or doubling toward the feasible side
//! otherwise, bisection brackets for irrational roots) and records each
//! defining relation with its exact residual. An instance is only returned
//! when every recorded relation holds.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::arbitrage::{check_na, check_na_reduced, check_params, kappa, Status};
use crate::bidask::{BidAskMarket, BidAskStrategy};
use crate::gains::{gain_matrix, liquidation_value, Strategy};
use crate::market::{growth, TaxMarket};
use crate::rational::{floor_plus_one, format_rational, int, min, pow, rat, Rational};
use crate::reduced::{paste_process, ReducedMarket};
use crate::measures::{find_separating_measure, SeparatingMeasure};
use crate::tree::{NodeId, ScenarioTree, TreeBuilder};
use crate::Error;

/// Iteration cap for every halving, doubling and bisection loop.
pub const MAX_STEPS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        }
    }

    fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Relation::Lt => lhs < rhs,
            Relation::Le => lhs <= rhs,
            Relation::Eq => lhs == rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
        }
    }
}

/// One certified relation `lhs (rel) rhs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certification {
    pub id: String,
    pub formula: String,
    pub relation: Relation,
    pub lhs: Rational,
    pub rhs: Rational,
    /// `lhs - rhs`.
    pub residual: Rational,
    pub holds: bool,
}

impl fmt::Display for Certification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}]: {} {} {} (residual {}) {}",
            self.id,
            self.formula,
            format_rational(&self.lhs),
            self.relation.symbol(),
            format_rational(&self.rhs),
            format_rational(&self.residual),
            if self.holds { "holds" } else { "FAILS" }
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    pub entries: Vec<Certification>,
}

impl Ledger {
    pub fn check(&mut self, id: impl Into<String>, formula: &str, lhs: Rational, rel: Relation, rhs: Rational) -> bool {
        let holds = rel.holds(&lhs, &rhs);
        self.entries.push(Certification {
            id: id.into(),
            formula: formula.to_string(),
            relation: rel,
            residual: &lhs - &rhs,
            lhs,
            rhs,
            holds,
        });
        holds
    }

    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|c| c.holds)
    }

    fn into_verified(self, what: &str) -> Result<Vec<Certification>, Error> {
        match self.entries.iter().find(|c| !c.holds) {
            Some(c) => Err(Error::Certification(format!("{what}: {c}"))),
            None => Ok(self.entries),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExampleInstance {
    pub name: &'static str,
    pub market: TaxMarket,
    pub reduced: Option<ReducedMarket>,
    pub pasted: Option<TaxMarket>,
    pub strategies: Vec<(String, Strategy)>,
    pub parameters: BTreeMap<String, Rational>,
    pub certified: Vec<Certification>,
    /// LP verdicts established for the instance.
    pub verdicts: Vec<(String, Status)>,
}

fn open_unit(alpha: &Rational, r: &Rational) -> Result<(), Error> {
    check_params(alpha, r)?;
    if alpha.is_zero() {
        return Err(Error::Parameter("this construction needs a positive tax rate".into()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BreakEven {
    pub big_r: Rational,
    pub r_bar: Rational,
}

/// The next-period return at which holding a position with book-profit
/// parameter `R` one more period breaks even with selling now:
/// `(1+R)(1+rbar)(1-alpha) + alpha = [(1+R)(1-alpha) + alpha] g`.
pub fn break_even(big_r: &Rational, alpha: &Rational, r: &Rational) -> Result<BreakEven, Error> {
    check_params(alpha, r)?;
    if big_r.is_negative() {
        return Err(Error::Parameter("R must be nonnegative".into()));
    }
    let one = Rational::one();
    let base = (&one + big_r) * (&one - alpha);
    let r_bar = ((&base + alpha) * growth(alpha, r) - alpha) / &base - &one;
    Ok(BreakEven { big_r: big_r.clone(), r_bar })
}

impl BreakEven {
    /// For `R' > R`, holding beats selling strictly at return `rbar`.
    pub fn certify_larger(&self, r_prime: &Rational, alpha: &Rational, r: &Rational) -> Result<Certification, Error> {
        if r_prime <= &self.big_r {
            return Err(Error::Parameter("R' must exceed R".into()));
        }
        let one = Rational::one();
        let mut ledger = Ledger::default();
        ledger.check(
            "break_even_larger_book_profit",
            "(1+R')(1+rbar)(1-a)+a > [(1+R')(1-a)+a](1+(1-a)r)",
            (&one + r_prime) * (&one + &self.r_bar) * (&one - alpha) + alpha,
            Relation::Gt,
            ((&one + r_prime) * (&one - alpha) + alpha) * growth(alpha, r),
        );
        Ok(ledger.entries.pop().unwrap())
    }
}

#[derive(Clone, Debug)]
pub struct NoteTwo {
    pub n: usize,
    pub big_r: Rational,
    /// Root of the equality `(1+R)(1+rbar)(1-a)+a = g^(n+1)`.
    pub r_bar_star: Rational,
    pub delta: Rational,
    pub r_bar: Rational,
    pub certified: Vec<Certification>,
}

fn note_two_ledger(n: usize, big_r: &Rational, r_bar: &Rational, alpha: &Rational, r: &Rational) -> Ledger {
    let one = Rational::one();
    let g = growth(alpha, r);
    let lead = (&one + big_r) * (&one - alpha);
    let mut ledger = Ledger::default();
    ledger.check("rbar_positive", "rbar > 0", r_bar.clone(), Relation::Gt, Rational::zero());
    ledger.check(
        "one_more_period_loses",
        "(1+R)(1+rbar)(1-a)+a < (1+(1-a)r)^(n+1)",
        &lead * (&one + r_bar) + alpha,
        Relation::Lt,
        pow(&g, n + 1),
    );
    ledger.check(
        "two_more_periods_win",
        "(1+R)(1+rbar)^2(1-a)+a > (1+(1-a)r)^(n+2)",
        &lead * pow(&(&one + r_bar), 2) + alpha,
        Relation::Gt,
        pow(&g, n + 2),
    );
    ledger
}

/// `R` with `(1+R)(1-a)+a = g^n` and an `rbar` losing over one more
/// period but winning over two.
pub fn note_ii_rbar(n: usize, alpha: &Rational, r: &Rational) -> Result<NoteTwo, Error> {
    open_unit(alpha, r)?;
    let one = Rational::one();
    let g = growth(alpha, r);
    let big_r = (pow(&g, n) - alpha) / (&one - alpha) - &one;
    let r_bar_star = (pow(&g, n + 1) - alpha) / (pow(&g, n) - alpha) - &one;
    let mut delta = &r_bar_star - (&one - alpha) * r;
    for _ in 0..MAX_STEPS {
        let r_bar = &r_bar_star - &delta;
        let mut ledger = note_two_ledger(n, &big_r, &r_bar, alpha, r);
        if ledger.all_hold() {
            ledger.check(
                "book_profit_parameter",
                "(1+R)(1-a)+a = (1+(1-a)r)^n",
                (&one + &big_r) * (&one - alpha) + alpha,
                Relation::Eq,
                pow(&g, n),
            );
            let certified = ledger.into_verified("break-even pair")?;
            return Ok(NoteTwo { n, big_r, r_bar_star, delta, r_bar, certified });
        }
        delta /= int(2);
    }
    Err(Error::Certification("break-even pair: halving did not certify".into()))
}

/// Evaluation of the implication
/// `(1+r1)^m1 (1-a)+a >= g^m1  =>  (1+r1)^m2 (1-a)+a >= g^m2`.
#[derive(Clone, Debug)]
pub struct NoteThree {
    pub premise: bool,
    pub conclusion: bool,
    pub implication: bool,
    pub certified: Vec<Certification>,
}

pub fn note_iii_check(r1: &Rational, m1: usize, m2: usize, alpha: &Rational, r: &Rational) -> Result<NoteThree, Error> {
    check_params(alpha, r)?;
    if m1 == 0 || m1 > m2 {
        return Err(Error::Parameter("need 1 <= m1 <= m2".into()));
    }
    if *r1 <= -Rational::one() {
        return Err(Error::Parameter("r1 must exceed -1".into()));
    }
    let one = Rational::one();
    let g = growth(alpha, r);
    let side = |m: usize| pow(&(&one + r1), m) * (&one - alpha) + alpha;
    let mut ledger = Ledger::default();
    let premise = ledger.check("premise", "(1+r1)^m1 (1-a)+a >= g^m1", side(m1), Relation::Ge, pow(&g, m1));
    let conclusion = ledger.check("conclusion", "(1+r1)^m2 (1-a)+a >= g^m2", side(m2), Relation::Ge, pow(&g, m2));
    Ok(NoteThree { premise, conclusion, implication: !premise || conclusion, certified: ledger.entries })
}

/// `(1-a)(g^T - a) / ((g^(t-1) - a)(g^(T-t) - a)) - 1`, the bound above
/// which a loss threshold still admits an arbitrage through period `t`.
pub fn kappa_threshold(t: usize, horizon: usize, alpha: &Rational, r: &Rational) -> Result<Rational, Error> {
    check_params(alpha, r)?;
    if t < 2 || t + 1 > horizon {
        return Err(Error::Parameter(format!("need 2 <= t <= T-1, got t={t}, T={horizon}")));
    }
    let one = Rational::one();
    let g = growth(alpha, r);
    Ok((&one - alpha) * (pow(&g, horizon) - alpha)
        / ((pow(&g, t - 1) - alpha) * (pow(&g, horizon - t) - alpha))
        - one)
}

/// Rational interval `[lo, hi]` around the positive root of `y^k = c`
/// for `c > 1`, with `lo^k < c <= hi^k`.
#[derive(Clone, Debug)]
struct RootBracket {
    k: usize,
    c: Rational,
    lo: Rational,
    hi: Rational,
}

impl RootBracket {
    fn new(k: usize, c: Rational) -> Self {
        assert!(k >= 1 && c > Rational::one());
        RootBracket { k, lo: Rational::one(), hi: c.clone(), c }
    }

    fn refine(&mut self) {
        let mid = (&self.lo + &self.hi) / int(2);
        if pow(&mid, self.k) < self.c {
            self.lo = mid;
        } else {
            self.hi = mid;
        }
    }
}

/// Two-state market in which the period-`t` return can fall below `kappa`
/// and still the pasted market has an arbitrage.
pub fn gen_kappa_maximality(
    t: usize,
    horizon: usize,
    alpha: &Rational,
    r: &Rational,
    kappa_bound: &Rational,
) -> Result<ExampleInstance, Error> {
    let theta = kappa_threshold(t, horizon, alpha, r)?;
    if kappa_bound <= &theta {
        return Err(Error::Parameter(format!(
            "kappa not above maximality bound {}",
            format_rational(&theta)
        )));
    }
    let one = Rational::one();
    let g = growth(alpha, r);
    let r2_low = (&theta + kappa_bound) / int(2);

    let mut first = RootBracket::new(t - 1, (pow(&g, t - 1) - alpha) / (&one - alpha));
    let mut third = RootBracket::new(horizon - t, (pow(&g, horizon - t) - alpha) / (&one - alpha));
    let profit_low = |r1: &Rational, r3: &Rational| {
        pow(&(&one + r1), t - 1) * (&one + &r2_low) * pow(&(&one + r3), horizon - t) * (&one - alpha) + alpha
    };
    let mut steps = 0;
    let (r1, r3) = loop {
        let (r1, r3) = (&first.lo - &one, &third.lo - &one);
        if r1.is_positive() && r3.is_positive() && profit_low(&r1, &r3) > pow(&g, horizon) {
            break (r1, r3);
        }
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Certification("kappa example: bisection did not certify".into()));
        }
        first.refine();
        third.refine();
    };
    let before = pow(&(&one + &r1), t - 1);
    let mut r2_high = crate::rational::max(&one, &(&r2_low + &one));
    let mut steps = 0;
    while &before * (&one + &r2_high) * (&one - alpha) + alpha <= pow(&g, t) {
        r2_high *= int(2);
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Certification("kappa example: doubling did not certify".into()));
        }
    }

    let mut ledger = Ledger::default();
    ledger.check("low_return_below_kappa", "r2_low < kappa", r2_low.clone(), Relation::Lt, kappa_bound.clone());
    ledger.check(
        "low_return_above_threshold",
        "(1+r2_low)(g^(t-1)-a)(g^(T-t)-a) > (1-a)(g^T-a)",
        (&one + &r2_low) * (pow(&g, t - 1) - alpha) * (pow(&g, horizon - t) - alpha),
        Relation::Gt,
        (&one - alpha) * (pow(&g, horizon) - alpha),
    );
    ledger.check("r1_positive", "r1 > 0", r1.clone(), Relation::Gt, Rational::zero());
    ledger.check("r3_positive", "r3_high > 0", r3.clone(), Relation::Gt, Rational::zero());
    ledger.check("returns_ordered", "r2_low < r2_high", r2_low.clone(), Relation::Lt, r2_high.clone());
    ledger.check(
        "no_arbitrage_before_gap",
        "(1+r1)^(t-1)(1-a)+a < g^(t-1)",
        &before * (&one - alpha) + alpha,
        Relation::Lt,
        pow(&g, t - 1),
    );
    ledger.check(
        "no_arbitrage_after_reveal",
        "(1+r3_high)^(T-t)(1-a)+a < g^(T-t)",
        pow(&(&one + &r3), horizon - t) * (&one - alpha) + alpha,
        Relation::Lt,
        pow(&g, horizon - t),
    );
    ledger.check(
        "hold_to_horizon_wins_on_low_state",
        "(1+r1)^(t-1)(1+r2_low)(1+r3_high)^(T-t)(1-a)+a > g^T",
        profit_low(&r1, &r3),
        Relation::Gt,
        pow(&g, horizon),
    );
    ledger.check(
        "sell_after_gap_wins_on_high_state",
        "(1+r1)^(t-1)(1+r2_high)(1-a)+a > g^t",
        &before * (&one + &r2_high) * (&one - alpha) + alpha,
        Relation::Gt,
        pow(&g, t),
    );

    let mut b = TreeBuilder::new();
    let mut v = b.root();
    for _ in 1..t {
        v = b.child(v, one.clone());
    }
    let mut branch = Vec::new();
    for state in 1..=2 {
        let mut w = b.child_labeled(v, rat(1, 2), format!("w{state}.{t}"));
        let top = w;
        for u in t + 1..=horizon {
            w = b.child_labeled(w, one.clone(), format!("w{state}.{u}"));
        }
        branch.push((top, w));
    }
    let tree = b.build();
    let mut price = vec![Rational::zero(); tree.len()];
    let mut hat = vec![None; tree.len()];
    for (id, node) in tree.nodes() {
        let u = node.time;
        let state = if u >= t { Some(node.label.starts_with("w1")) } else { None };
        price[id.0] = match state {
            None => one.clone(),
            Some(true) => &one + &r2_low,
            Some(false) => &one + &r2_high,
        };
        hat[id.0] = match state {
            None => Some(pow(&(&one + &r1), u)),
            Some(_) if u == t => None,
            Some(true) => Some(&before * pow(&(&one + &r3), u - t)),
            Some(false) => Some(before.clone()),
        };
    }
    let market = TaxMarket::new(tree, price, r.clone(), alpha.clone());
    let reduced = ReducedMarket::new(market.clone(), t, hat)?;
    let pasted = paste_process(&reduced)?;

    let mut strategy = Strategy::new();
    let low_leaf = branch[0].1;
    let high_top = branch[1].0;
    strategy
        .buy(0, market.tree.root(), one.clone())
        .sell(0, low_leaf, one.clone())
        .sell(0, high_top, one.clone());
    let values = liquidation_value(&pasted, &strategy)?;
    for (k, value) in values.iter().enumerate() {
        ledger.check(
            format!("buy_at_zero_profit_{}", k + 1),
            "V(buy at 0, sell at T on low state / at t on high state) > 0",
            value.clone(),
            Relation::Gt,
            Rational::zero(),
        );
    }
    let certified = ledger.into_verified("kappa example")?;

    let reduced_verdict = check_na_reduced(&reduced)?.status;
    let pasted_verdict = check_na(&pasted)?.status;
    if reduced_verdict != Status::NoArbitrage || pasted_verdict != Status::Arbitrage {
        return Err(Error::Certification(format!(
            "kappa example: reduced market {}, pasted market {}",
            reduced_verdict.as_str(),
            pasted_verdict.as_str()
        )));
    }
    let parameters = BTreeMap::from([
        ("kappa".to_string(), kappa_bound.clone()),
        ("threshold".to_string(), theta),
        ("kappa_tT".to_string(), kappa(t, horizon, alpha, r)?),
        ("r1".to_string(), r1),
        ("r2_low".to_string(), r2_low),
        ("r2_high".to_string(), r2_high),
        ("r3_high".to_string(), r3),
    ]);
    Ok(ExampleInstance {
        name: "kappa-maximality",
        market,
        reduced: Some(reduced),
        pasted: Some(pasted),
        strategies: vec![("buy_at_zero".into(), strategy)],
        parameters,
        certified,
        verdicts: vec![("reduced".into(), reduced_verdict), ("pasted".into(), pasted_verdict)],
    })
}

/// Three periods, two states revealed at time 2: a long-term and a
/// short-term position that offset exactly.
pub fn gen_hedge_example(alpha: &Rational, r: &Rational) -> Result<ExampleInstance, Error> {
    open_unit(alpha, r)?;
    let one = Rational::one();
    let g = growth(alpha, r);
    let note = note_ii_rbar(1, alpha, r)?;
    let rb = note.r_bar.clone();
    let up = &one + &rb;
    let c = (&one - alpha) * &g * &up;
    let x03_low = |e1: &Rational| &up * &up * (&one + r - e1) * (&one - alpha) + alpha - pow(&g, 3);
    let mut e1 = r.clone();
    let mut steps = 0;
    while !x03_low(&e1).is_positive() || (&one + r - &e1).is_negative() {
        e1 /= int(2);
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Certification("hedge example: halving did not certify".into()));
        }
    }
    // X02(w2) = a0 + c e2 and F(e1, e2) = -c e1 (a0 + c e2) - c e2 X03(w1).
    let a0 = (&up * (&one + r) * (&one - alpha) + alpha) * &g - pow(&g, 3);
    let e2 = -(&e1 * &a0) / (&c * &e1 + x03_low(&e1));

    let mut b = TreeBuilder::new();
    let root = b.root();
    let a = b.child(root, one.clone());
    let w1 = b.child_labeled(a, rat(1, 2), "w1.2");
    let w2 = b.child_labeled(a, rat(1, 2), "w2.2");
    let l1 = b.child_labeled(w1, one.clone(), "w1.3");
    let l2 = b.child_labeled(w2, one.clone(), "w2.3");
    let tree = b.build();
    let mut price = vec![Rational::zero(); tree.len()];
    price[root.0] = one.clone();
    price[a.0] = up.clone();
    price[w1.0] = &up * (&one + r - &e1);
    price[l1.0] = &price[w1.0] * &up;
    price[w2.0] = &up * (&one + r + &e2);
    price[l2.0] = Rational::zero();
    let market = TaxMarket::new(tree, price, r.clone(), alpha.clone());
    let x = gain_matrix(&market);

    let mut ledger = Ledger { entries: note.certified.clone() };
    ledger.check("rbar_below_r", "rbar < r", rb.clone(), Relation::Lt, r.clone());
    ledger.check("eps1_positive", "eps1 > 0", e1.clone(), Relation::Gt, Rational::zero());
    ledger.check("eps2_positive", "eps2 > 0", e2.clone(), Relation::Gt, Rational::zero());
    ledger.check(
        "offsetting_positions",
        "X12(w1) X02(w2) - X12(w2) X03(w1) = 0",
        x.at(1, w1) * x.at(0, w2) - x.at(1, w2) * x.at(0, l1),
        Relation::Eq,
        Rational::zero(),
    );
    ledger.check("long_term_wins_on_w1", "X03(w1) > 0", x.at(0, l1).clone(), Relation::Gt, Rational::zero());
    ledger.check("long_term_loses_on_w2", "X02(w2) < 0", x.at(0, w2).clone(), Relation::Lt, Rational::zero());
    ledger.check(
        "short_term_gain_w1",
        "X12(w1) = -(1-a) g (1+rbar) eps1",
        x.at(1, w1).clone(),
        Relation::Eq,
        -(&c * &e1),
    );
    ledger.check("short_term_gain_w2", "X12(w2) = (1-a) g (1+rbar) eps2", x.at(1, w2).clone(), Relation::Eq, &c * &e2);

    let k = -(x.at(0, l1) / x.at(1, w1));
    let mut strategy = Strategy::new();
    strategy
        .buy(0, root, one.clone())
        .sell(0, l1, one.clone())
        .sell(0, w2, one.clone())
        .buy(1, a, k.clone())
        .sell(1, w1, k.clone())
        .sell(1, w2, k.clone());
    for (idx, v) in liquidation_value(&market, &strategy)?.into_iter().enumerate() {
        ledger.check(format!("hedge_value_{}", idx + 1), "V(hedge) = 0", v, Relation::Eq, Rational::zero());
    }
    let certified = ledger.into_verified("hedge example")?;
    let verdict = check_na(&market)?.status;
    if verdict != Status::NoArbitrage {
        return Err(Error::Certification("hedge example: market admits an arbitrage".into()));
    }
    let parameters = BTreeMap::from([
        ("rbar".to_string(), rb),
        ("eps1".to_string(), e1),
        ("eps2".to_string(), e2),
        ("short_term_amount".to_string(), k),
    ]);
    Ok(ExampleInstance {
        name: "hedge",
        market,
        reduced: None,
        pasted: None,
        strategies: vec![("hedge".into(), strategy)],
        parameters,
        certified,
        verdicts: vec![("market".into(), verdict)],
    })
}

/// Truncation of the four-period market with countably many states that
/// has no arbitrage but no separating measure.
#[derive(Clone, Debug)]
pub struct InfiniteExample {
    pub instance: ExampleInstance,
    pub depth: usize,
    /// Time-1 node.
    pub first: NodeId,
    /// Per block `n = 1..=depth`: (time-2 node, time-3 node of `w_{n,1}`,
    /// leaf of `w_{n,1}`, time-3 node of `w_{n,2}`, leaf of `w_{n,2}`).
    pub blocks: Vec<[NodeId; 5]>,
    /// `-X04(w_{n,1}) / X13(w_{n,1})` per block.
    pub ratios: Vec<Rational>,
    /// `[(1+r1)(1+r)(1+r2)(1-a)+a-g^3] g`, the uniform lower bound of `V(N^m)`.
    pub lower_bound: Rational,
}

impl InfiniteExample {
    /// Buy one share at 0 and hold it to 4 on the first state of each
    /// block, to 3 on the second; buy `m` at 1 and keep `min(ratio_n, m)`
    /// of them from 2 to 3 in block `n`.
    pub fn strategy(&self, m: &Rational) -> Strategy {
        let one = Rational::one();
        let mut s = Strategy::new();
        s.buy(0, self.instance.market.tree.root(), one.clone());
        s.buy(1, self.first, m.clone());
        for (block, ratio) in self.blocks.iter().zip(&self.ratios) {
            let [b, n1, l1, n2, _] = *block;
            let keep = min(ratio, m);
            s.sell(0, l1, one.clone()).sell(0, n2, one.clone());
            s.sell(1, b, m - &keep).sell(1, n1, keep.clone()).sell(1, n2, keep);
        }
        s
    }

    /// Pointwise limit of the lower bound of `V(N^m)`: zero on the first
    /// state of each block, `-(1/2)(X04(w_{n,1})/X13(w_{n,1})) X13(w_{n,2})`
    /// on the second.
    pub fn limit_payoff(&self) -> Vec<Rational> {
        let tree = &self.instance.market.tree;
        let x = gain_matrix(&self.instance.market);
        let mut out = vec![Rational::zero(); tree.leaves().len()];
        for (block, ratio) in self.blocks.iter().zip(&self.ratios) {
            let [_, _, _, n2, l2] = *block;
            let idx = tree.leaf_index(l2).expect("leaf");
            out[idx] = ratio * x.at(1, n2) / int(2);
        }
        out
    }
}

pub const DEFAULT_DEPTH: usize = 8;

pub fn gen_infinite_example(alpha: &Rational, r: &Rational, depth: usize) -> Result<InfiniteExample, Error> {
    open_unit(alpha, r)?;
    if depth == 0 {
        return Err(Error::Parameter("depth must be at least 1".into()));
    }
    let one = Rational::one();
    let a1 = &one - alpha;
    let g = growth(alpha, r);
    let r2 = (pow(&g, 2) - alpha) / ((&one + r) * &a1) - &one;
    let note = note_ii_rbar(2, alpha, r)?;
    let r1 = note.r_bar.clone();
    let (u1, ur, u2) = (&one + &r1, &one + r, &one + &r2);

    let mut ledger = Ledger::default();
    ledger.check(
        "r2_definition",
        "(1+r)(1+r2)(1-a)+a = g^2",
        &ur * &u2 * &a1 + alpha,
        Relation::Eq,
        pow(&g, 2),
    );
    ledger.check("r2_positive", "r2 > 0", r2.clone(), Relation::Gt, Rational::zero());
    ledger.check("r2_below_r", "r2 < r", r2.clone(), Relation::Lt, r.clone());
    ledger.check("r1_positive", "r1 > 0", r1.clone(), Relation::Gt, Rational::zero());
    ledger.check(
        "three_periods_lose",
        "(1+r1)(1+r)(1+r2)(1-a)+a < g^3",
        &u1 * &ur * &u2 * &a1 + alpha,
        Relation::Lt,
        pow(&g, 3),
    );
    ledger.check(
        "four_periods_win",
        "(1+r1)(1+r)(1+r2)(1+r1)(1-a)+a > g^4",
        &u1 * &ur * &u2 * &u1 * &a1 + alpha,
        Relation::Gt,
        pow(&g, 4),
    );
    ledger.check("r1_below_r2", "r1 < r2", r1.clone(), Relation::Lt, r2.clone());

    let e2_ok = |e: &Rational| {
        &u1 * &ur * (&u2 + e) * &a1 + alpha < pow(&g, 3) && &r2 + e < *r
    };
    let mut e2 = r - &r2;
    let mut steps = 0;
    while !e2_ok(&e2) {
        e2 /= int(2);
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Certification("infinite example: eps2 halving did not certify".into()));
        }
    }
    let long_low = |e: &Rational| &u1 * &ur * (&u2 - e) * &u1 * &a1 + alpha - pow(&g, 4);
    let mut e1 = r2.clone();
    let mut steps = 0;
    while !long_low(&e1).is_positive() {
        e1 /= int(2);
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Certification("infinite example: eps1 halving did not certify".into()));
        }
    }
    ledger.check("eps2_positive", "eps2 > 0", e2.clone(), Relation::Gt, Rational::zero());
    ledger.check(
        "eps2_keeps_three_periods_losing",
        "(1+r1)(1+r)(1+r2+eps2)(1-a)+a < g^3",
        &u1 * &ur * (&u2 + &e2) * &a1 + alpha,
        Relation::Lt,
        pow(&g, 3),
    );
    ledger.check("eps2_keeps_r2_below_r", "r2 + eps2 < r", &r2 + &e2, Relation::Lt, r.clone());
    ledger.check("eps1_positive", "eps1 > 0", e1.clone(), Relation::Gt, Rational::zero());
    ledger.check(
        "eps1_keeps_four_periods_winning",
        "(1+r1)(1+r)(1+r2-eps1)(1+r1)(1-a)+a > g^4",
        long_low(&e1) + pow(&g, 4),
        Relation::Gt,
        pow(&g, 4),
    );

    // Closed forms of the block gains, used to pick eps_{n,1}.
    let c13 = &u1 * &ur * &a1 * &g;
    let x03_high = |e: &Rational| (&u1 * &ur * (&u2 + e) * &a1 + alpha) * &g - pow(&g, 4);
    let mut eps = Vec::new();
    for n in 1..=depth {
        let en2 = min(&rat(1, n as i64), &e2);
        // f_n(e) = X13(w_{n,2}) long_low(e) + 2 X03(w_{n,2}) c13 e is affine
        // and decreasing in e; its root bounds eps_{n,1}.
        let x13_hi = &c13 * &en2;
        let x03_hi = x03_high(&en2);
        let slope = &x13_hi * &u1 * &ur * &u1 * &a1 - int(2) * &x03_hi * &c13;
        let root = &x13_hi * long_low(&Rational::zero()) / slope;
        let cap = min(&e1, &root);
        let k: BigInt = floor_plus_one(&(one.clone() / cap));
        let en1 = Rational::new(BigInt::one(), k);
        eps.push((en1, en2));
    }

    let mut b = TreeBuilder::new();
    let root = b.root();
    let first = b.child(root, one.clone());
    let mut blocks = Vec::new();
    for n in 1..=depth {
        let bn = b.child_labeled(first, rat(1, depth as i64), format!("n{n}"));
        let n1 = b.child_labeled(bn, rat(1, 2), format!("n{n}.1"));
        let l1 = b.child_labeled(n1, one.clone(), format!("n{n}.1.4"));
        let n2 = b.child_labeled(bn, rat(1, 2), format!("n{n}.2"));
        let l2 = b.child_labeled(n2, one.clone(), format!("n{n}.2.4"));
        blocks.push([bn, n1, l1, n2, l2]);
    }
    let tree = b.build();
    let mut price = vec![Rational::zero(); tree.len()];
    price[root.0] = one.clone();
    price[first.0] = u1.clone();
    for (block, (en1, en2)) in blocks.iter().zip(&eps) {
        let [bn, n1, l1, n2, l2] = *block;
        price[bn.0] = &u1 * &ur;
        price[n1.0] = &u1 * &ur * (&u2 - en1);
        price[l1.0] = &price[n1.0] * &u1;
        price[n2.0] = &u1 * &ur * (&u2 + en2);
        price[l2.0] = Rational::zero();
    }
    let market = TaxMarket::new(tree, price, r.clone(), alpha.clone());
    let x = gain_matrix(&market);
    let lower_bound = (&u1 * &ur * &u2 * &a1 + alpha - pow(&g, 3)) * &g;
    let mut ratios = Vec::new();
    for (n, block) in blocks.iter().enumerate() {
        let [bn, n1, l1, n2, _] = *block;
        let n = n + 1;
        let id = |s: &str| format!("{s}_block_{n}");
        ledger.check(id("eps_n1_positive"), "eps_{n,1} > 0", eps[n - 1].0.clone(), Relation::Gt, Rational::zero());
        ledger.check(id("eps_n1_below_eps1"), "eps_{n,1} < eps1", eps[n - 1].0.clone(), Relation::Lt, e1.clone());
        ledger.check(id("deferral_wins"), "X04(w_{n,1}) > 0", x.at(0, l1).clone(), Relation::Gt, Rational::zero());
        ledger.check(id("short_term_loses"), "X13(w_{n,1}) < 0", x.at(1, n1).clone(), Relation::Lt, Rational::zero());
        ledger.check(id("long_term_loses"), "X03(w_{n,2}) < 0", x.at(0, n2).clone(), Relation::Lt, Rational::zero());
        ledger.check(id("short_term_wins"), "X13(w_{n,2}) > 0", x.at(1, n2).clone(), Relation::Gt, Rational::zero());
        ledger.check(id("late_purchase_loses"), "X23(w_{n,2}) < 0", x.at(2, n2).clone(), Relation::Lt, Rational::zero());
        ledger.check(id("hold_one_period_flat"), "X12 = 0", x.at(1, bn).clone(), Relation::Eq, Rational::zero());
        ledger.check(
            id("ratio_condition"),
            "X13(w_{n,2}) X04(w_{n,1}) - 2 X13(w_{n,1}) X03(w_{n,2}) >= 0",
            x.at(1, n2) * x.at(0, l1) - int(2) * x.at(1, n1) * x.at(0, n2),
            Relation::Ge,
            Rational::zero(),
        );
        ledger.check(
            id("uniform_lower_bound"),
            "X03(w_{n,2}) > [(1+r1)(1+r)(1+r2)(1-a)+a-g^3] g",
            x.at(0, n2).clone(),
            Relation::Gt,
            lower_bound.clone(),
        );
        ratios.push(-(x.at(0, l1) / x.at(1, n1)));
    }
    let certified = ledger.into_verified("infinite example")?;
    let parameters = BTreeMap::from([
        ("r1".to_string(), r1),
        ("r2".to_string(), r2),
        ("eps1".to_string(), e1),
        ("eps2".to_string(), e2),
        ("lower_bound".to_string(), lower_bound.clone()),
    ]);
    let instance = ExampleInstance {
        name: "infinite",
        market,
        reduced: None,
        pasted: None,
        strategies: Vec::new(),
        parameters,
        certified,
        verdicts: Vec::new(),
    };
    let mut out = InfiniteExample { instance, depth, first, blocks, ratios, lower_bound };
    let m_max = out.ratios.iter().max().cloned().unwrap_or_else(Rational::zero).ceil();
    out.instance.strategies = vec![
        ("N^1".into(), out.strategy(&one)),
        (format!("N^{}", format_rational(&m_max)), out.strategy(&m_max)),
    ];
    Ok(out)
}

/// Where the measure of a [`BoundProbe`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureSource {
    Separating,
    Candidate,
}

impl MeasureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureSource::Separating => "separating",
            MeasureSource::Candidate => "candidate",
        }
    }
}

/// Expectations of the approximate-arbitrage sequence on one truncation.
#[derive(Clone, Debug)]
pub struct BoundProbe {
    pub depth: usize,
    pub source: MeasureSource,
    /// `E_q V(N^m)` for `m = 1..=depth`.
    pub expectations: Vec<Rational>,
    pub max_expectation: Rational,
    /// Smallest value of `V(N^m)` over all leaves and `m`.
    pub min_value: Rational,
    pub lower_bound: Rational,
    pub limit_expectation: Rational,
}

/// For each depth, the expectations of `N^1..N^depth` under the
/// truncation's separating measure, or under `candidate` when the
/// truncation has none, together with the expectation of the limit payoff.
pub fn separating_bound_probe(
    alpha: &Rational,
    r: &Rational,
    depths: &[usize],
    candidate: impl Fn(&ScenarioTree) -> SeparatingMeasure,
) -> Result<Vec<BoundProbe>, Error> {
    let mut out = Vec::new();
    for &depth in depths {
        let ex = gen_infinite_example(alpha, r, depth)?;
        let market = &ex.instance.market;
        let (q, source) = match find_separating_measure(market)? {
            Some(q) => (q, MeasureSource::Separating),
            None => (candidate(&market.tree), MeasureSource::Candidate),
        };
        q.validate(&market.tree)?;
        let mut expectations = Vec::new();
        let mut min_value: Option<Rational> = None;
        for m in 1..=depth {
            let values = liquidation_value(market, &ex.strategy(&int(m as i64)))?;
            let low = values.iter().min().cloned().unwrap_or_else(Rational::zero);
            min_value = Some(match min_value {
                Some(v) if v <= low => v,
                _ => low,
            });
            expectations.push(q.expectation(&values));
        }
        let max_expectation = expectations.iter().max().cloned().unwrap_or_else(Rational::zero);
        out.push(BoundProbe {
            depth,
            source,
            expectations,
            max_expectation,
            min_value: min_value.unwrap_or_else(Rational::zero),
            lower_bound: ex.lower_bound.clone(),
            limit_expectation: q.expectation(&ex.limit_payoff()),
        });
    }
    Ok(out)
}

/// The physical measure of a tree as a candidate.
pub fn physical_measure(tree: &ScenarioTree) -> SeparatingMeasure {
    SeparatingMeasure { weights: tree.leaf_probs() }
}

/// Truncation of the two-period, three-asset bid-ask market without a
/// consistent price system.
#[derive(Clone, Debug)]
pub struct GrigorievExample {
    pub market: BidAskMarket,
    pub depth: usize,
    /// Per block: (time-1 node, leaf `w_{n,1}`, leaf `w_{n,2}`).
    pub blocks: Vec<[NodeId; 3]>,
}

impl GrigorievExample {
    /// One share of stock 1 and `m` of stock 2 at time 0; in block `n`,
    /// sell the `(m - n)^+` shares of stock 2 not needed at time 1.
    pub fn strategy(&self, m: u64) -> BidAskStrategy {
        let mut s = BidAskStrategy::new();
        let root = self.market.tree.root();
        s.buy(0, root, Rational::one()).buy(1, root, int(m as i64));
        for (n, block) in self.blocks.iter().enumerate() {
            let n = (n + 1) as u64;
            let [bn, l1, l2] = *block;
            let excess = m.saturating_sub(n);
            if excess > 0 {
                s.sell(1, bn, int(excess as i64));
            }
            let keep = int(m.min(n) as i64);
            for leaf in [l1, l2] {
                s.sell(0, leaf, Rational::one());
                if !keep.is_zero() {
                    s.sell(1, leaf, keep.clone());
                }
            }
        }
        s
    }

    /// `2 - (n ^ m)/n` on `w_{n,1}` and `-1 + (n ^ m)/n` on `w_{n,2}`.
    pub fn value_formula(n: u64, m: u64, first_state: bool) -> Rational {
        let frac = rat(n.min(m) as i64, n as i64);
        if first_state {
            int(2) - frac
        } else {
            frac - int(1)
        }
    }

    /// Pointwise limit of the values: one on every first state.
    pub fn limit_payoff(&self) -> Vec<Rational> {
        let tree = &self.market.tree;
        let mut out = vec![Rational::zero(); tree.leaves().len()];
        for block in &self.blocks {
            out[tree.leaf_index(block[1]).expect("leaf")] = Rational::one();
        }
        out
    }
}

pub fn gen_grigoriev_counterexample(depth: usize) -> Result<GrigorievExample, Error> {
    if depth == 0 {
        return Err(Error::Parameter("depth must be at least 1".into()));
    }
    let mut b = TreeBuilder::new();
    let root = b.root();
    let mut blocks = Vec::new();
    for n in 1..=depth {
        let bn = b.child_labeled(root, rat(1, depth as i64), format!("n{n}"));
        let l1 = b.child_labeled(bn, rat(1, 2), format!("n{n}.1"));
        let l2 = b.child_labeled(bn, rat(1, 2), format!("n{n}.2"));
        blocks.push([bn, l1, l2]);
    }
    let tree = b.build();
    let len = tree.len();
    let mut ask = vec![vec![None; len]; 2];
    let mut bid = vec![vec![None; len]; 2];
    for k in 0..2 {
        ask[k][root.0] = Some(int(1));
        bid[k][root.0] = Some(int(1));
    }
    for (n, block) in blocks.iter().enumerate() {
        let n = (n + 1) as i64;
        let [bn, l1, l2] = *block;
        bid[0][bn.0] = Some(int(0));
        ask[0][bn.0] = Some(int(3));
        bid[1][bn.0] = Some(int(1));
        ask[1][bn.0] = Some(int(3));
        for (leaf, s1, s2) in [(l1, int(3), int(1) - rat(1, n)), (l2, int(0), int(1) + rat(1, n))] {
            ask[0][leaf.0] = Some(s1.clone());
            bid[0][leaf.0] = Some(s1);
            ask[1][leaf.0] = Some(s2.clone());
            bid[1][leaf.0] = Some(s2);
        }
    }
    let market = BidAskMarket {
        tree,
        assets: vec!["stock1".into(), "stock2".into()],
        ask,
        bid,
        interest: Rational::zero(),
    };
    market.ensure_valid()?;
    Ok(GrigorievExample { market, depth, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidask::bidask_liquidation_value;

    #[test]
    fn break_even_anchors() {
        let (a, r) = (rat(1, 4), rat(1, 10));
        assert_eq!(break_even(&int(0), &a, &r).unwrap().r_bar, r);
        assert_eq!(break_even(&int(3), &int(0), &r).unwrap().r_bar, r);
        let be = break_even(&rat(1, 2), &a, &r).unwrap();
        assert!(be.r_bar < r && be.r_bar > (int(1) - &a) * &r);
        assert!(be.certify_larger(&int(1), &a, &r).unwrap().holds);
    }

    #[test]
    fn note_two_pairs_certify() {
        let (a, r) = (rat(1, 4), rat(1, 10));
        for n in 0..4 {
            let p = note_ii_rbar(n, &a, &r).unwrap();
            assert!(p.certified.iter().all(|c| c.holds));
            let half = &p.r_bar_star - &p.delta / int(2);
            assert!(note_two_ledger(n, &p.big_r, &half, &a, &r).all_hold());
        }
        assert!(note_ii_rbar(0, &a, &r).unwrap().big_r.is_zero());
    }

    #[test]
    fn note_three_identity_case() {
        let (a, r) = (rat(1, 3), rat(1, 10));
        let out = note_iii_check(&r, 1, 5, &a, &r).unwrap();
        assert!(out.premise && out.conclusion && out.implication);
        assert!(note_iii_check(&r, 0, 1, &a, &r).is_err());
    }

    #[test]
    fn kappa_instance_small() {
        let (a, r) = (rat(1, 2), rat(1, 10));
        let theta = kappa_threshold(2, 3, &a, &r).unwrap();
        let inst = gen_kappa_maximality(2, 3, &a, &r, &(&theta + rat(1, 1000))).unwrap();
        assert!(inst.certified.iter().all(|c| c.holds));
        let err = gen_kappa_maximality(2, 3, &a, &r, &theta).unwrap_err();
        assert!(err.to_string().contains("kappa not above maximality bound"));
    }

    #[test]
    fn untaxed_threshold_is_r() {
        let r = rat(1, 10);
        assert_eq!(kappa_threshold(2, 4, &int(0), &r).unwrap(), r);
    }

    #[test]
    fn hedge_instance() {
        let inst = gen_hedge_example(&rat(1, 4), &rat(1, 10)).unwrap();
        let s = &inst.strategies[0].1;
        assert!(liquidation_value(&inst.market, s).unwrap().iter().all(Zero::is_zero));
    }

    #[test]
    fn infinite_instance_chain() {
        let ex = gen_infinite_example(&rat(1, 4), &rat(1, 10), 3).unwrap();
        let tree = &ex.instance.market.tree;
        let big = ex.ratios.iter().max().unwrap().ceil();
        let v = liquidation_value(&ex.instance.market, &ex.strategy(&big)).unwrap();
        let limit = ex.limit_payoff();
        for block in &ex.blocks {
            let i1 = tree.leaf_index(block[2]).unwrap();
            let i2 = tree.leaf_index(block[4]).unwrap();
            assert!(v[i1].is_zero());
            assert!(v[i2] >= limit[i2] && limit[i2].is_positive());
            assert!(v[i2] >= ex.lower_bound);
        }
    }

    #[test]
    fn probe_limit_expectation_positive() {
        let probes = separating_bound_probe(&rat(1, 4), &rat(1, 10), &[1, 2], physical_measure).unwrap();
        for p in probes {
            assert!(p.limit_expectation.is_positive());
            assert!(p.min_value >= p.lower_bound);
        }
    }

    #[test]
    fn grigoriev_values_match_the_formula() {
        let ex = gen_grigoriev_counterexample(4).unwrap();
        for m in 1..=5u64 {
            let v = bidask_liquidation_value(&ex.market, &ex.strategy(m)).unwrap();
            for (n, block) in ex.blocks.iter().enumerate() {
                let n = n as u64 + 1;
                let tree = &ex.market.tree;
                assert_eq!(v[tree.leaf_index(block[1]).unwrap()], GrigorievExample::value_formula(n, m, true));
                assert_eq!(v[tree.leaf_index(block[2]).unwrap()], GrigorievExample::value_formula(n, m, false));
            }
        }
    }
}
