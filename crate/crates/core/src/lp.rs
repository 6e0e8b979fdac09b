//! Exact linear programming.
//!
//! A dense tableau simplex over rationals with Bland's rule, so results
//! are exact and pivoting cannot cycle. Problems are stated as
//!
//! ```text
//! maximize c.x  subject to  a_i.x (<=|=|>=) b_i,  x >= 0
//! ```
//!
//! Every solution carries its certificate: an optimal dual, a Farkas ray
//! for infeasibility, or a feasible point plus an improving ray for
//! unboundedness. [`check_certificates`] re-verifies any of them.

use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, Rational)>,
    pub sense: Sense,
    pub rhs: Rational,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<Rational>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: vec![Rational::zero(); num_vars],
            constraints: Vec::new(),
        }
    }

    /// Adds a variable with objective coefficient zero and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.objective.push(Rational::zero());
        self.num_vars - 1
    }

    pub fn set_objective(&mut self, var: usize, c: Rational) {
        self.objective[var] = c;
    }

    /// Adds a row; repeated variable indices are summed. Returns the row index.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, Rational)>, sense: Sense, rhs: Rational) -> usize {
        let mut dense: Vec<(usize, Rational)> = Vec::with_capacity(coeffs.len());
        let mut sorted = coeffs;
        sorted.sort_by_key(|(j, _)| *j);
        for (j, a) in sorted {
            assert!(j < self.num_vars, "variable {j} out of range");
            match dense.last_mut() {
                Some((k, b)) if *k == j => *b += a,
                _ => dense.push((j, a)),
            }
        }
        dense.retain(|(_, a)| !a.is_zero());
        self.constraints.push(Constraint { coeffs: dense, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn row_value(&self, i: usize, x: &[Rational]) -> Rational {
        self.constraints[i].coeffs.iter().map(|(j, a)| a * &x[*j]).sum()
    }

    pub fn objective_value(&self, x: &[Rational]) -> Rational {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// `A^T y` over the structural columns.
    pub fn transpose_times(&self, y: &[Rational]) -> Vec<Rational> {
        let mut out = vec![Rational::zero(); self.num_vars];
        for (row, yi) in self.constraints.iter().zip(y) {
            if yi.is_zero() {
                continue;
            }
            for (j, a) in &row.coeffs {
                out[*j] += a * yi;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal value (zero unless optimal).
    pub value: Rational,
    /// Optimal vertex, or a feasible vertex when unbounded.
    pub primal: Vec<Rational>,
    /// Optimal multipliers, or the Farkas multipliers when infeasible.
    pub dual: Vec<Rational>,
    /// Improving direction when unbounded.
    pub ray: Vec<Rational>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CertificateViolation {
    PrimalInfeasible(String),
    DualInfeasible(String),
    Slackness(String),
    DualityGap { primal: Rational, dual: Rational },
    Farkas(String),
    Ray(String),
}

impl fmt::Display for CertificateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::rational::Exact;
        match self {
            CertificateViolation::PrimalInfeasible(s) => write!(f, "primal infeasible: {s}"),
            CertificateViolation::DualInfeasible(s) => write!(f, "dual infeasible: {s}"),
            CertificateViolation::Slackness(s) => write!(f, "complementary slackness fails: {s}"),
            CertificateViolation::DualityGap { primal, dual } => write!(
                f,
                "duality gap nonzero: primal {} vs dual {}",
                Exact(primal),
                Exact(dual)
            ),
            CertificateViolation::Farkas(s) => write!(f, "invalid infeasibility certificate: {s}"),
            CertificateViolation::Ray(s) => write!(f, "invalid unbounded ray: {s}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    rows: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    kinds: Vec<ColKind>,
    pivots: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.rows.len() - 1
    }

    fn rhs(&self) -> usize {
        self.kinds.len()
    }

    fn pivot(&mut self, r: usize, j: usize) {
        self.pivots += 1;
        let width = self.kinds.len() + 1;
        let piv = self.rows[r][j].clone();
        let nz: Vec<usize> = (0..width).filter(|&k| !self.rows[r][k].is_zero()).collect();
        if !piv.is_one() {
            for &k in &nz {
                self.rows[r][k] /= &piv;
            }
        }
        let prow: Vec<(usize, Rational)> = nz.iter().map(|&k| (k, self.rows[r][k].clone())).collect();
        for i in 0..self.rows.len() {
            if i == r || self.rows[i][j].is_zero() {
                continue;
            }
            let f = self.rows[i][j].clone();
            let row = &mut self.rows[i];
            for (k, v) in &prow {
                row[*k] -= &f * v;
            }
        }
        self.basis[r] = j;
    }

    /// Rewrites the objective row as `z_j - c_j` for the given costs.
    fn price_out(&mut self, costs: &[Rational]) {
        let m = self.m();
        let width = self.kinds.len() + 1;
        let mut obj: Vec<Rational> = (0..width)
            .map(|k| if k < costs.len() { -costs[k].clone() } else { Rational::zero() })
            .collect();
        for r in 0..m {
            let cb = &costs[self.basis[r]];
            if cb.is_zero() {
                continue;
            }
            for (k, v) in self.rows[r].iter().enumerate() {
                if !v.is_zero() {
                    obj[k] += cb * v;
                }
            }
        }
        self.rows[m] = obj;
    }

    /// Runs Bland's rule to optimality; returns the entering column on
    /// unboundedness.
    fn optimize(&mut self, allow: impl Fn(ColKind) -> bool) -> Option<usize> {
        let m = self.m();
        let rhs = self.rhs();
        loop {
            let entering = (0..self.kinds.len())
                .find(|&j| allow(self.kinds[j]) && self.rows[m][j].is_negative());
            let j = entering?;
            let mut best: Option<(usize, Rational)> = None;
            for r in 0..m {
                let a = &self.rows[r][j];
                if !a.is_positive() {
                    continue;
                }
                let ratio = &self.rows[r][rhs] / a;
                let better = match &best {
                    None => true,
                    Some((br, bv)) => ratio < *bv || (ratio == *bv && self.basis[r] < self.basis[*br]),
                };
                if better {
                    best = Some((r, ratio));
                }
            }
            match best {
                None => return Some(j),
                Some((r, _)) => self.pivot(r, j),
            }
        }
    }

    fn basic_solution(&self, n: usize) -> Vec<Rational> {
        let mut x = vec![Rational::zero(); n];
        let rhs = self.rhs();
        for (r, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.rows[r][rhs].clone();
            }
        }
        x
    }
}

pub fn solve(lp: &LinearProgram) -> LpSolution {
    let n = lp.num_vars;
    let m = lp.constraints.len();
    // Normalize to nonnegative right-hand sides.
    let mut signs = Vec::with_capacity(m);
    let mut senses = Vec::with_capacity(m);
    for c in &lp.constraints {
        let flip = c.rhs.is_negative();
        signs.push(if flip { -Rational::one() } else { Rational::one() });
        senses.push(match (c.sense, flip) {
            (Sense::Le, true) => Sense::Ge,
            (Sense::Ge, true) => Sense::Le,
            (s, _) => s,
        });
    }
    let mut kinds = vec![ColKind::Structural; n];
    let mut init_col = Vec::with_capacity(m);
    let mut surplus = vec![None; m];
    for (i, s) in senses.iter().enumerate() {
        match s {
            Sense::Le => {
                kinds.push(ColKind::Slack);
                init_col.push(kinds.len() - 1);
            }
            Sense::Ge => {
                kinds.push(ColKind::Slack);
                surplus[i] = Some(kinds.len() - 1);
                kinds.push(ColKind::Artificial);
                init_col.push(kinds.len() - 1);
            }
            Sense::Eq => {
                kinds.push(ColKind::Artificial);
                init_col.push(kinds.len() - 1);
            }
        }
    }
    let width = kinds.len() + 1;
    let mut rows = Vec::with_capacity(m + 1);
    for (i, c) in lp.constraints.iter().enumerate() {
        let mut row = vec![Rational::zero(); width];
        for (j, a) in &c.coeffs {
            row[*j] = a * &signs[i];
        }
        row[init_col[i]] = Rational::one();
        if let Some(s) = surplus[i] {
            row[s] = -Rational::one();
        }
        row[width - 1] = &c.rhs * &signs[i];
        rows.push(row);
    }
    rows.push(vec![Rational::zero(); width]);
    let mut tab = Tableau { rows, basis: init_col.clone(), kinds, pivots: 0 };
    let unsign = |y: Vec<Rational>| -> Vec<Rational> { y.into_iter().zip(&signs).map(|(v, s)| v * s).collect() };

    let has_artificial = tab.kinds.contains(&ColKind::Artificial);
    if has_artificial {
        let costs1: Vec<Rational> = tab
            .kinds
            .iter()
            .map(|k| if *k == ColKind::Artificial { -Rational::one() } else { Rational::zero() })
            .collect();
        tab.price_out(&costs1);
        tab.optimize(|_| true);
        let value = tab.rows[m][tab.rhs()].clone();
        if value.is_negative() {
            let w: Vec<Rational> = init_col
                .iter()
                .map(|&k| &tab.rows[m][k] + &costs1[k])
                .collect();
            return LpSolution {
                status: LpStatus::Infeasible,
                value: Rational::zero(),
                primal: Vec::new(),
                dual: unsign(w),
                ray: Vec::new(),
                pivots: tab.pivots,
            };
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if tab.kinds[tab.basis[r]] != ColKind::Artificial {
                continue;
            }
            if let Some(j) = (0..tab.kinds.len())
                .find(|&j| tab.kinds[j] != ColKind::Artificial && !tab.rows[r][j].is_zero())
            {
                tab.pivot(r, j);
            }
        }
    }

    let mut costs = vec![Rational::zero(); tab.kinds.len()];
    costs[..n].clone_from_slice(&lp.objective);
    tab.price_out(&costs);
    let unbounded = tab.optimize(|k| k != ColKind::Artificial);
    let primal = tab.basic_solution(n);
    if let Some(j) = unbounded {
        let mut ray = vec![Rational::zero(); n];
        if j < n {
            ray[j] = Rational::one();
        }
        for (r, &b) in tab.basis.iter().enumerate() {
            if b < n {
                ray[b] = -tab.rows[r][j].clone();
            }
        }
        return LpSolution {
            status: LpStatus::Unbounded,
            value: Rational::zero(),
            primal,
            dual: Vec::new(),
            ray,
            pivots: tab.pivots,
        };
    }
    let y: Vec<Rational> = init_col.iter().map(|&k| tab.rows[m][k].clone()).collect();
    LpSolution {
        status: LpStatus::Optimal,
        value: tab.rows[m][tab.rhs()].clone(),
        primal,
        dual: unsign(y),
        ray: Vec::new(),
        pivots: tab.pivots,
    }
}

fn sign_ok(sense: Sense, y: &Rational) -> bool {
    match sense {
        Sense::Le => !y.is_negative(),
        Sense::Ge => !y.is_positive(),
        Sense::Eq => true,
    }
}

fn primal_violations(lp: &LinearProgram, x: &[Rational], out: &mut Vec<CertificateViolation>) {
    if x.len() != lp.num_vars {
        out.push(CertificateViolation::PrimalInfeasible("wrong dimension".into()));
        return;
    }
    if let Some(j) = x.iter().position(Signed::is_negative) {
        out.push(CertificateViolation::PrimalInfeasible(format!("x[{j}] < 0")));
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        let lhs = lp.row_value(i, x);
        let ok = match c.sense {
            Sense::Le => lhs <= c.rhs,
            Sense::Ge => lhs >= c.rhs,
            Sense::Eq => lhs == c.rhs,
        };
        if !ok {
            out.push(CertificateViolation::PrimalInfeasible(format!("row {i}")));
        }
    }
}

/// Re-verifies a solution's certificate by exact arithmetic.
pub fn check_certificates(lp: &LinearProgram, sol: &LpSolution) -> Vec<CertificateViolation> {
    let mut out = Vec::new();
    match sol.status {
        LpStatus::Optimal => {
            primal_violations(lp, &sol.primal, &mut out);
            if sol.dual.len() != lp.constraints.len() {
                out.push(CertificateViolation::DualInfeasible("wrong dimension".into()));
                return out;
            }
            for (i, (c, y)) in lp.constraints.iter().zip(&sol.dual).enumerate() {
                if !sign_ok(c.sense, y) {
                    out.push(CertificateViolation::DualInfeasible(format!("sign of y[{i}]")));
                }
            }
            let aty = lp.transpose_times(&sol.dual);
            for (j, (a, c)) in aty.iter().zip(&lp.objective).enumerate() {
                let reduced = a - c;
                if reduced.is_negative() {
                    out.push(CertificateViolation::DualInfeasible(format!("column {j}")));
                } else if !reduced.is_zero() && sol.primal.get(j).is_some_and(|x| !x.is_zero()) {
                    out.push(CertificateViolation::Slackness(format!("column {j}")));
                }
            }
            for (i, (c, y)) in lp.constraints.iter().zip(&sol.dual).enumerate() {
                if !y.is_zero() && sol.primal.len() == lp.num_vars && lp.row_value(i, &sol.primal) != c.rhs {
                    out.push(CertificateViolation::Slackness(format!("row {i}")));
                }
            }
            let primal = lp.objective_value(&sol.primal);
            let dual: Rational = lp.constraints.iter().zip(&sol.dual).map(|(c, y)| &c.rhs * y).sum();
            if primal != dual || primal != sol.value {
                out.push(CertificateViolation::DualityGap { primal, dual });
            }
        }
        LpStatus::Infeasible => {
            if sol.dual.len() != lp.constraints.len() {
                out.push(CertificateViolation::Farkas("wrong dimension".into()));
                return out;
            }
            for (i, (c, y)) in lp.constraints.iter().zip(&sol.dual).enumerate() {
                if !sign_ok(c.sense, y) {
                    out.push(CertificateViolation::Farkas(format!("sign of y[{i}]")));
                }
            }
            if let Some(j) = lp.transpose_times(&sol.dual).iter().position(Signed::is_negative) {
                out.push(CertificateViolation::Farkas(format!("column {j} negative")));
            }
            let by: Rational = lp.constraints.iter().zip(&sol.dual).map(|(c, y)| &c.rhs * y).sum();
            if !by.is_negative() {
                out.push(CertificateViolation::Farkas("b.y is not negative".into()));
            }
        }
        LpStatus::Unbounded => {
            primal_violations(lp, &sol.primal, &mut out);
            let d = &sol.ray;
            if d.len() != lp.num_vars || d.iter().any(Signed::is_negative) {
                out.push(CertificateViolation::Ray("direction leaves x >= 0".into()));
                return out;
            }
            for (i, c) in lp.constraints.iter().enumerate() {
                let ad = lp.row_value(i, d);
                let ok = match c.sense {
                    Sense::Le => !ad.is_positive(),
                    Sense::Ge => !ad.is_negative(),
                    Sense::Eq => ad.is_zero(),
                };
                if !ok {
                    out.push(CertificateViolation::Ray(format!("row {i}")));
                }
            }
            if !lp.objective_value(d).is_positive() {
                out.push(CertificateViolation::Ray("objective does not improve".into()));
            }
        }
    }
    out
}
