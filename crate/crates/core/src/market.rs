//! Tax markets: a scenario tree with a stock price at every node, a
//! riskless rate `r` and a linear capital-gains tax rate `alpha`.

use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::rational::{Exact, Rational};
use crate::tree::{NodeId, ScenarioTree, TreeViolation};
use crate::Error;

#[derive(Clone, Debug)]
pub struct TaxMarket {
    pub tree: ScenarioTree,
    /// Stock price at every node, indexed by `NodeId`.
    pub price: Vec<Rational>,
    pub rate: Rational,
    pub tax: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarketViolation {
    Tree(TreeViolation),
    PriceCount { expected: usize, found: usize },
    NegativePrice { node: String },
    RateNotPositive,
    TaxOutOfRange,
    /// Zero price followed by a positive price.
    AbsorbingZero { node: String, parent: String },
}

impl fmt::Display for MarketViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarketViolation::Tree(v) => v.fmt(f),
            MarketViolation::PriceCount { expected, found } => {
                write!(f, "expected {expected} prices, found {found}")
            }
            MarketViolation::NegativePrice { node } => write!(f, "negative price at {node:?}"),
            MarketViolation::RateNotPositive => f.write_str("interest rate must be positive"),
            MarketViolation::TaxOutOfRange => f.write_str("tax rate out of range [0, 1)"),
            MarketViolation::AbsorbingZero { node, parent } => write!(
                f,
                "zero price followed by positive price at {node:?} (parent {parent:?})"
            ),
        }
    }
}

/// Outcome of [`validate_market`]; empty means the market is usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<MarketViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Return along the edge into a node, with `0/0 := 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeReturn {
    pub node: NodeId,
    pub value: Rational,
}

impl TaxMarket {
    pub fn new(tree: ScenarioTree, price: Vec<Rational>, rate: Rational, tax: Rational) -> Self {
        TaxMarket { tree, price, rate, tax }
    }

    /// Growth factor of the bank account after tax, `1 + (1 - alpha) r`.
    pub fn growth(&self) -> Rational {
        growth(&self.tax, &self.rate)
    }

    pub fn horizon(&self) -> usize {
        self.tree.horizon()
    }

    pub fn price(&self, v: NodeId) -> &Rational {
        &self.price[v.0]
    }

    /// Fails with the full violation list unless the market is valid.
    pub fn ensure_valid(&self) -> Result<(), Error> {
        let report = validate_market(self);
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidMarket(
                report.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }

    /// Node returns of every time-`t` node, grouped by their time-`t-1` parent.
    pub fn period_returns(&self, t: usize) -> Result<Vec<(NodeId, Vec<NodeReturn>)>, Error> {
        let mut out = Vec::new();
        for &p in self.tree.nodes_at(t - 1) {
            let rets = self
                .tree
                .children(p)
                .iter()
                .map(|&c| node_return(self, c))
                .collect::<Result<Vec<_>, _>>()?;
            out.push((p, rets));
        }
        Ok(out)
    }
}

pub fn growth(tax: &Rational, rate: &Rational) -> Rational {
    Rational::one() + (Rational::one() - tax) * rate
}

pub fn validate_market(market: &TaxMarket) -> ValidationReport {
    let tree = &market.tree;
    let mut violations: Vec<MarketViolation> =
        tree.violations().into_iter().map(MarketViolation::Tree).collect();
    if market.price.len() != tree.len() {
        violations.push(MarketViolation::PriceCount {
            expected: tree.len(),
            found: market.price.len(),
        });
    } else {
        for (id, node) in tree.nodes() {
            if market.price[id.0].is_negative() {
                violations.push(MarketViolation::NegativePrice { node: node.label.clone() });
            }
            if let Some(p) = node.parent {
                if market.price[p.0].is_zero() && market.price[id.0].is_positive() {
                    violations.push(MarketViolation::AbsorbingZero {
                        node: node.label.clone(),
                        parent: tree.label(p).to_string(),
                    });
                }
            }
        }
    }
    if !market.rate.is_positive() {
        violations.push(MarketViolation::RateNotPositive);
    }
    if market.tax.is_negative() || market.tax >= Rational::one() {
        violations.push(MarketViolation::TaxOutOfRange);
    }
    ValidationReport { violations }
}

/// `(S_v - S_parent) / S_parent` with `0/0 := 0`.
pub fn node_return(market: &TaxMarket, node: NodeId) -> Result<NodeReturn, Error> {
    let parent = market
        .tree
        .parent(node)
        .ok_or_else(|| Error::Parameter("the root has no return".into()))?;
    let value = ratio_return(market.price(parent), market.price(node)).ok_or_else(|| {
        Error::AbsorbingZero {
            node: market.tree.label(node).to_string(),
        }
    })?;
    Ok(NodeReturn { node, value })
}

/// `(b - a) / a`, `0` when both vanish, `None` for `a = 0 < b`.
pub(crate) fn ratio_return(a: &Rational, b: &Rational) -> Option<Rational> {
    if a.is_zero() {
        if b.is_zero() {
            Some(Rational::zero())
        } else {
            None
        }
    } else {
        Some((b - a) / a)
    }
}

impl fmt::Display for NodeReturn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, Exact(&self.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};
    use crate::tree::TreeBuilder;

    fn chain(prices: &[Rational]) -> TaxMarket {
        let mut b = TreeBuilder::new();
        let mut v = b.root();
        for _ in 1..prices.len() {
            v = b.child(v, int(1));
        }
        TaxMarket::new(b.build(), prices.to_vec(), rat(1, 25), rat(1, 4))
    }

    #[test]
    fn single_node_market_is_valid() {
        assert!(validate_market(&chain(&[int(1)])).is_ok());
    }

    #[test]
    fn zero_then_positive_is_flagged() {
        let report = validate_market(&chain(&[int(0), int(1)]));
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0]
            .to_string()
            .contains("zero price followed by positive price"));
    }

    #[test]
    fn tax_of_one_is_out_of_range() {
        let mut m = chain(&[int(1)]);
        m.tax = int(1);
        let report = validate_market(&m);
        assert_eq!(report.violations, vec![MarketViolation::TaxOutOfRange]);
    }

    #[test]
    fn returns_follow_the_convention() {
        let m = chain(&[int(4), int(3), int(0), int(0)]);
        let v = |i| NodeId(i);
        assert_eq!(node_return(&m, v(1)).unwrap().value, rat(-1, 4));
        assert_eq!(node_return(&m, v(2)).unwrap().value, int(-1));
        assert_eq!(node_return(&m, v(3)).unwrap().value, int(0));
        let r = rat(1, 25);
        let m = chain(&[int(1), int(1) + &r]);
        assert_eq!(node_return(&m, v(1)).unwrap().value, r);
        let m = chain(&[int(0), int(1)]);
        assert!(matches!(node_return(&m, v(1)), Err(Error::AbsorbingZero { .. })));
    }
}
