use num_traits::{One, Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taxarb::bidask::{bidask_check_na, bidask_liquidation_value, embed_strategy, embed_tax_market, perturb_robust};
use taxarb::foundry::{gen_hedge_example, gen_kappa_maximality, kappa_threshold};
use taxarb::lp::{self, LinearProgram, LpStatus, Sense};
use taxarb::measures::max_expected_value;
use taxarb::random::{
    dichotomy_market, random_market, random_params, random_reduced, random_small_tree, random_strategy, random_tree,
};
use taxarb::reduced::lift_strategy;
use taxarb::{
    check_na, check_na_reduced, check_one_period, check_rlna_sufficient, find_separating_measure, gain_matrix,
    liquidation_value, node_return, paste_process, rat, reduced_liquidation_value, snell_martingale_part,
    verify_stopping_constraints, NodeId, Rational, SeparatingMeasure, Status, StoppingCheck, ScenarioTree, Strategy, TaxMarket,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_measure(r: &mut ChaCha8Rng, leaves: usize) -> SeparatingMeasure {
    let w: Vec<Rational> = (0..leaves).map(|_| rat(r.gen_range(1..=5), 1)).collect();
    let total: Rational = w.iter().sum();
    SeparatingMeasure { weights: w.iter().map(|x| x / &total).collect() }
}

/// Random strategy holding nothing from `t-1` to `t`: lots bought before
/// `t-1` are sold by `t-1`, and nothing is bought at `t-1`.
fn liquidated_before(r: &mut ChaCha8Rng, m: &TaxMarket, t: usize) -> Strategy {
    fn sell_down(r: &mut ChaCha8Rng, tree: &ScenarioTree, lot: usize, v: NodeId, held: Rational, deadline: usize, s: &mut Strategy) {
        for &w in tree.children(v) {
            let sold = if tree.time(w) == deadline { held.clone() } else { &held * rat(r.gen_range(0..=4), 4) };
            s.sell(lot, w, sold.clone());
            let rest = &held - sold;
            if !rest.is_zero() {
                sell_down(r, tree, lot, w, rest, deadline, s);
            }
        }
    }
    let horizon = m.horizon();
    let mut s = Strategy::new();
    for lot in (0..horizon).filter(|&l| l + 1 != t) {
        let deadline = if lot + 1 < t { t - 1 } else { horizon };
        for &v in m.tree.nodes_at(lot) {
            if r.gen_bool(0.6) {
                let amount = rat(r.gen_range(1..=6), 2);
                s.buy(lot, v, amount.clone());
                sell_down(r, &m.tree, lot, v, amount, deadline, &mut s);
            }
        }
    }
    s
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn leaf_probabilities_sum_to_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let periods = r.gen_range(0..=4);
        let tree = random_tree(&mut r, periods, 3);
        let probs = tree.leaf_probs();
        prop_assert!(probs.iter().all(Signed::is_positive));
        prop_assert!(probs.iter().sum::<Rational>().is_one());
    }

    #[test]
    fn atoms_refine(seed in any::<u64>()) {
        let mut r = rng(seed);
        let periods = r.gen_range(1..=4);
        let tree = random_tree(&mut r, periods, 3);
        for t in 1..=periods {
            let coarse = tree.atoms_at(t - 1).unwrap();
            for atom in tree.atoms_at(t).unwrap() {
                let containing = coarse
                    .iter()
                    .filter(|c| atom.leaves.iter().all(|l| c.leaves.contains(l)))
                    .count();
                prop_assert_eq!(containing, 1);
            }
        }
    }

    #[test]
    fn returns_are_scale_invariant(seed in any::<u64>(), num in 1i64..20, den in 1i64..20) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let pick = NodeId(r.gen_range(0..m.tree.len()));
        let c = rat(num, den);
        let mut scaled = m.clone();
        let mut stack = vec![pick];
        let mut inside = Vec::new();
        while let Some(v) = stack.pop() {
            scaled.price[v.0] = &m.price[v.0] * &c;
            stack.extend_from_slice(m.tree.children(v));
            if v != pick {
                inside.push(v);
            }
        }
        for v in inside {
            prop_assert_eq!(node_return(&m, v).unwrap(), node_return(&scaled, v).unwrap());
        }
    }

    #[test]
    fn recursion_matches_closed_form(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let s = random_strategy(&mut r, &m);
        let eta = taxarb::wealth_recursion(&m, &s).unwrap();
        let at_leaves: Vec<Rational> = m.tree.leaves().iter().map(|l| eta[l.0].clone()).collect();
        prop_assert_eq!(at_leaves, liquidation_value(&m, &s).unwrap());
    }

    #[test]
    fn value_is_positively_homogeneous_and_additive(seed in any::<u64>(), k in 0i64..12) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let s1 = random_strategy(&mut r, &m);
        let s2 = random_strategy(&mut r, &m);
        let lambda = rat(k, 3);
        let v1 = liquidation_value(&m, &s1).unwrap();
        let v2 = liquidation_value(&m, &s2).unwrap();
        let scaled = liquidation_value(&m, &s1.scaled(&lambda)).unwrap();
        let sum = liquidation_value(&m, &s1.plus(&s2)).unwrap();
        for i in 0..v1.len() {
            prop_assert_eq!(&scaled[i], &(&v1[i] * &lambda));
            prop_assert_eq!(&sum[i], &(&v1[i] + &v2[i]));
        }
    }

    #[test]
    fn gains_follow_the_closed_form_on_atoms(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let x = gain_matrix(&m);
        let g = m.growth();
        let horizon = m.horizon();
        for s in 0..horizon {
            for u in s + 1..=horizon {
                for atom in m.tree.atoms_at(u).unwrap() {
                    for &leaf in &atom.leaves {
                        let here = m.tree.ancestor_at(leaf, u);
                        prop_assert_eq!(here, atom.node);
                        let sa = m.price(m.tree.ancestor_at(leaf, s));
                        let sb = m.price(here);
                        let oracle = (sb - &m.tax * (sb - sa)) * g.pow((horizon - u) as i32)
                            - sa * g.pow((horizon - s) as i32);
                        prop_assert_eq!(x.at(s, here), &oracle);
                        if sa.is_zero() {
                            prop_assert!(x.at(s, here).is_zero());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn certificates_are_sound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let verdict = check_na(&m).unwrap();
        if verdict.status == Status::Arbitrage {
            let v = liquidation_value(&m, verdict.certificate.as_ref().unwrap()).unwrap();
            prop_assert!(v.iter().all(|x| !x.is_negative()));
            prop_assert!(v.iter().any(Signed::is_positive));
        } else {
            for t in 1..=m.horizon() {
                prop_assert!(check_one_period(&m, t).unwrap().overall);
            }
        }
    }

    #[test]
    fn dichotomy_everywhere_excludes_arbitrage(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = dichotomy_market(&mut r, tree);
        for t in 1..=m.horizon() {
            prop_assert!(check_rlna_sufficient(&m, t).unwrap().overall);
        }
        prop_assert_eq!(check_na(&m).unwrap().status, Status::NoArbitrage);
    }

    #[test]
    fn untaxed_local_conditions_coincide(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let mut m = random_market(&mut r, tree);
        m.tax = Rational::zero();
        for t in 1..=m.horizon() {
            let a = check_one_period(&m, t).unwrap();
            let b = check_rlna_sufficient(&m, t).unwrap();
            prop_assert_eq!(a.overall, b.overall);
            for (x, y) in a.atoms.iter().zip(&b.atoms) {
                prop_assert_eq!(x.branch.is_some(), y.branch.is_some());
            }
        }
    }

    #[test]
    fn embedding_preserves_values(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let s = random_strategy(&mut r, &m);
        let e = embed_tax_market(&m).unwrap();
        prop_assert_eq!(
            liquidation_value(&m, &s).unwrap(),
            bidask_liquidation_value(&e, &embed_strategy(&s)).unwrap()
        );
    }

    #[test]
    fn perturbation_is_strictly_inside_the_spread(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let (alpha, rate) = random_params(&mut r, true);
        let mut m = random_market(&mut r, tree);
        m.tax = alpha;
        m.rate = rate;
        let e = embed_tax_market(&m).unwrap();
        let p = perturb_robust(&m).unwrap();
        for i in 0..m.horizon() {
            for v in 0..m.tree.len() {
                let si = m.price(m.tree.ancestor_at(NodeId(v), i.min(m.tree.time(NodeId(v)))));
                if !si.is_positive() {
                    continue;
                }
                if let (Some(a), Some(ac)) = (&e.ask[i][v], &p.ask_c[i][v]) {
                    prop_assert!(ac < a);
                }
                if let (Some(b), Some(bc)) = (&e.bid[i][v], &p.bid_c[i][v]) {
                    prop_assert!(bc > b);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn pasting_keeps_no_arbitrage(seed in any::<u64>()) {
        let mut r = rng(seed);
        let periods = r.gen_range(2..=3);
        let tree = random_tree(&mut r, periods, 2);
        let t = r.gen_range(1..=periods);
        let red = random_reduced(&mut r, tree, t);
        prop_assume!(check_na_reduced(&red).unwrap().status == Status::NoArbitrage);
        prop_assert_eq!(check_na(&paste_process(&red).unwrap()).unwrap().status, Status::NoArbitrage);
    }

    #[test]
    fn lifted_strategies_scale_by_growth(seed in any::<u64>()) {
        let mut r = rng(seed);
        let periods = r.gen_range(2..=3);
        let tree = random_tree(&mut r, periods, 2);
        let t = r.gen_range(1..=periods);
        let red = random_reduced(&mut r, tree, t);
        let pasted = paste_process(&red).unwrap();
        let s = liquidated_before(&mut r, &pasted, t);
        let v_hat = reduced_liquidation_value(&red, &lift_strategy(&red, &s).unwrap()).unwrap();
        let v_tilde = liquidation_value(&pasted, &s).unwrap();
        let g = pasted.growth();
        for (a, b) in v_hat.iter().zip(&v_tilde) {
            prop_assert_eq!(a * &g, b.clone());
        }
    }

    #[test]
    fn duality_in_both_directions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let na = check_na(&m).unwrap().status == Status::NoArbitrage;
        match find_separating_measure(&m).unwrap() {
            Some(q) => {
                prop_assert!(na);
                prop_assert!(q.weights.iter().all(Signed::is_positive));
                prop_assert!(max_expected_value(&m, &q).unwrap().is_zero());
                let ok = matches!(verify_stopping_constraints(&m, &q).unwrap(), StoppingCheck::Ok { .. });
                prop_assert!(ok);
                for start in 0..m.horizon() {
                    let env = snell_martingale_part(&m, &q, start).unwrap();
                    prop_assert!(env.violations(&m.tree, &q).is_empty());
                    prop_assert!(env.dominates(&m.tree));
                }
            }
            None => {
                prop_assert!(!na);
                let q = random_measure(&mut r, m.tree.leaves().len());
                prop_assert!(max_expected_value(&m, &q).unwrap().is_positive());
                let violated = matches!(verify_stopping_constraints(&m, &q).unwrap(), StoppingCheck::Violated { .. });
                prop_assert!(violated);
            }
        }
    }

    #[test]
    fn embedding_transfers_the_verdict(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tree = random_small_tree(&mut r);
        let m = random_market(&mut r, tree);
        let e = embed_tax_market(&m).unwrap();
        prop_assert_eq!(check_na(&m).unwrap().status, bidask_check_na(&e, None).unwrap().status);
    }

    #[test]
    fn lp_is_deterministic_and_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=6);
        let mut program = LinearProgram::new(n);
        let mut optimum = Rational::zero();
        for j in 0..n {
            let c = rat(r.gen_range(1..=9), r.gen_range(1..=4));
            let b = rat(r.gen_range(0..=9), r.gen_range(1..=4));
            program.set_objective(j, c.clone());
            program.add_constraint(vec![(j, Rational::one())], Sense::Le, b.clone());
            optimum += c * b;
        }
        // Redundant coupling rows, never binding.
        for _ in 0..r.gen_range(0..=3) {
            let coeffs: Vec<(usize, Rational)> = (0..n).map(|j| (j, rat(r.gen_range(0..=3), 1))).collect();
            program.add_constraint(coeffs, Sense::Le, rat(1000, 1));
        }
        let a = lp::solve(&program);
        let b = lp::solve(&program);
        prop_assert_eq!(a.status, LpStatus::Optimal);
        prop_assert_eq!(&a.value, &optimum);
        prop_assert_eq!(a.pivots, b.pivots);
        prop_assert_eq!(&a.primal, &b.primal);
        prop_assert_eq!(&a.dual, &b.dual);
        prop_assert!(lp::check_certificates(&program, &a).is_empty());
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn hedge_instances_offset_exactly(ai in 1usize..5, ri in 0usize..4) {
        let (a, b) = taxarb::random::TAXES[ai];
        let (c, d) = taxarb::random::RATES[ri];
        let inst = gen_hedge_example(&rat(a, b), &rat(c, d)).unwrap();
        let (_, s) = &inst.strategies[0];
        prop_assert!(liquidation_value(&inst.market, s).unwrap().iter().all(Zero::is_zero));
        prop_assert_eq!(check_na(&inst.market).unwrap().status, Status::NoArbitrage);
        prop_assert!(inst.certified.iter().all(|c| c.holds));
    }

    #[test]
    fn kappa_instances_split_the_verdicts(ai in 1usize..5, ri in 0usize..4, horizon in 3usize..=4) {
        let (a, b) = taxarb::random::TAXES[ai];
        let (c, d) = taxarb::random::RATES[ri];
        let (alpha, r) = (rat(a, b), rat(c, d));
        let t = 2;
        let theta = kappa_threshold(t, horizon, &alpha, &r).unwrap();
        let inst = gen_kappa_maximality(t, horizon, &alpha, &r, &(theta + rat(1, 100))).unwrap();
        prop_assert!(inst.certified.iter().all(|c| c.holds));
        prop_assert_eq!(check_na_reduced(inst.reduced.as_ref().unwrap()).unwrap().status, Status::NoArbitrage);
        prop_assert_eq!(check_na(inst.pasted.as_ref().unwrap()).unwrap().status, Status::Arbitrage);
    }
}
