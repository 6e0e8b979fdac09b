//! JSON file formats.
//!
//! Every rational is a `"p/q"` or integer string; JSON numbers are
//! rejected. Nodes are referred to by their labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bidask::{BidAskMarket, BidAskStrategy};
use crate::foundry::{Certification, ExampleInstance};
use crate::gains::{liquidation_value, Strategy};
use crate::market::TaxMarket;
use crate::measures::SeparatingMeasure;
use crate::rational::{format_rational, parse_rational, serde_rational, Rational};
use crate::reduced::ReducedMarket;
use crate::tree::{NodeId, NodeSpec, ScenarioTree};
use crate::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub time: usize,
    pub parent: Option<String>,
    #[serde(with = "serde_rational")]
    pub branch_prob: Rational,
    #[serde(with = "serde_rational")]
    pub price: Rational,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub horizon: usize,
    pub nodes: Vec<NodeRecord>,
    #[serde(with = "serde_rational")]
    pub rate: Rational,
    #[serde(with = "serde_rational")]
    pub tax: Rational,
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T, Error> {
    serde_json::from_str(text).map_err(|e| Error::Input(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn tree_specs(tree: &ScenarioTree) -> impl Iterator<Item = (NodeId, NodeSpec)> + '_ {
    tree.nodes().map(move |(id, n)| {
        (
            id,
            NodeSpec {
                label: n.label.clone(),
                time: n.time,
                parent: n.parent.map(|p| tree.label(p).to_string()),
                branch_prob: n.branch_prob.clone(),
            },
        )
    })
}

impl MarketFile {
    pub fn from_market(market: &TaxMarket) -> Self {
        let nodes = tree_specs(&market.tree)
            .map(|(id, s)| NodeRecord {
                id: s.label,
                time: s.time,
                parent: s.parent,
                branch_prob: s.branch_prob,
                price: market.price[id.0].clone(),
            })
            .collect();
        MarketFile {
            horizon: market.horizon(),
            nodes,
            rate: market.rate.clone(),
            tax: market.tax.clone(),
        }
    }

    /// Builds the market without validating it; see [`crate::validate_market`].
    pub fn into_market(self) -> Result<TaxMarket, Error> {
        let price = self.nodes.iter().map(|n| n.price.clone()).collect();
        let specs = self
            .nodes
            .into_iter()
            .map(|n| NodeSpec { label: n.id, time: n.time, parent: n.parent, branch_prob: n.branch_prob })
            .collect();
        let tree = ScenarioTree::new(self.horizon, specs)?;
        Ok(TaxMarket::new(tree, price, self.rate, self.tax))
    }
}

pub fn read_market(text: &str) -> Result<TaxMarket, Error> {
    parse_json::<MarketFile>(text)?.into_market()
}

pub fn write_market(market: &TaxMarket) -> String {
    to_json(&MarketFile::from_market(market))
}

fn node_by_label(tree: &ScenarioTree, label: &str) -> Result<NodeId, Error> {
    tree.find(label).ok_or_else(|| Error::Input(format!("unknown node id {label:?}")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeRecord {
    /// Lot (purchase time) for tax strategies, asset name for bid-ask ones.
    pub lot: serde_json::Value,
    pub node: String,
    #[serde(with = "serde_rational")]
    pub amount: Rational,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyFile {
    pub buys: Vec<TradeRecord>,
    pub sells: Vec<TradeRecord>,
}

fn lot_of(record: &TradeRecord) -> Result<usize, Error> {
    record
        .lot
        .as_u64()
        .map(|l| l as usize)
        .ok_or_else(|| Error::Input(format!("lot must be a nonnegative integer, got {}", record.lot)))
}

/// Loads a strategy and checks that every lot is fully liquidated on
/// every path.
pub fn read_strategy(market: &TaxMarket, text: &str) -> Result<Strategy, Error> {
    let file: StrategyFile = parse_json(text)?;
    let mut s = Strategy::new();
    for r in &file.buys {
        s.buy(lot_of(r)?, node_by_label(&market.tree, &r.node)?, r.amount.clone());
    }
    for r in &file.sells {
        s.sell(lot_of(r)?, node_by_label(&market.tree, &r.node)?, r.amount.clone());
    }
    liquidation_value(market, &s)?;
    Ok(s)
}

pub fn strategy_file(tree: &ScenarioTree, strategy: &Strategy) -> StrategyFile {
    let rec = |(&(lot, v), amount): (&(usize, NodeId), &Rational)| TradeRecord {
        lot: lot.into(),
        node: tree.label(v).to_string(),
        amount: amount.clone(),
    };
    StrategyFile { buys: strategy.buys.iter().map(rec).collect(), sells: strategy.sells.iter().map(rec).collect() }
}

pub fn write_strategy(tree: &ScenarioTree, strategy: &Strategy) -> String {
    to_json(&strategy_file(tree, strategy))
}

pub fn bidask_strategy_file(market: &BidAskMarket, strategy: &BidAskStrategy) -> StrategyFile {
    let rec = |(&(asset, v), amount): (&(usize, NodeId), &Rational)| TradeRecord {
        lot: market.assets[asset].clone().into(),
        node: market.tree.label(v).to_string(),
        amount: amount.clone(),
    };
    StrategyFile { buys: strategy.buys.iter().map(rec).collect(), sells: strategy.sells.iter().map(rec).collect() }
}

/// Leaf id to weight.
pub type MeasureFile = BTreeMap<String, String>;

pub fn read_measure(tree: &ScenarioTree, text: &str) -> Result<SeparatingMeasure, Error> {
    let file: MeasureFile = parse_json(text)?;
    for label in file.keys() {
        let v = node_by_label(tree, label)?;
        if tree.leaf_index(v).is_none() {
            return Err(Error::Input(format!("measure weight on non-leaf node {label:?}")));
        }
    }
    let weights = tree
        .leaves()
        .iter()
        .map(|&l| {
            let label = tree.label(l);
            let raw = file.get(label).ok_or_else(|| Error::Input(format!("no weight for leaf {label:?}")))?;
            parse_rational(raw).map_err(|e| Error::Input(format!("leaf {label:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SeparatingMeasure { weights })
}

pub fn measure_file(tree: &ScenarioTree, q: &SeparatingMeasure) -> MeasureFile {
    tree.leaves().iter().zip(&q.weights).map(|(&l, w)| (tree.label(l).to_string(), format_rational(w))).collect()
}

pub fn write_measure(tree: &ScenarioTree, q: &SeparatingMeasure) -> String {
    to_json(&measure_file(tree, q))
}

/// Market on the time domain without period `t`. `hat_prices` omits the
/// time-`t` nodes (or marks them `"none"`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedFile {
    pub base: MarketFile,
    pub eliminated_period: usize,
    pub hat_prices: BTreeMap<String, String>,
}

pub fn read_reduced(text: &str) -> Result<ReducedMarket, Error> {
    let file: ReducedFile = parse_json(text)?;
    let base = file.base.into_market()?;
    for label in file.hat_prices.keys() {
        node_by_label(&base.tree, label)?;
    }
    let mut hat = vec![None; base.tree.len()];
    for (id, node) in base.tree.nodes() {
        match file.hat_prices.get(&node.label).map(String::as_str) {
            None | Some("none") => {
                if node.time != file.eliminated_period {
                    return Err(Error::Input(format!("no reduced price for node {:?}", node.label)));
                }
            }
            Some(raw) => {
                hat[id.0] =
                    Some(parse_rational(raw).map_err(|e| Error::Input(format!("node {:?}: {e}", node.label)))?)
            }
        }
    }
    ReducedMarket::new(base, file.eliminated_period, hat)
}

pub fn write_reduced(reduced: &ReducedMarket) -> String {
    let tree = &reduced.base.tree;
    let hat_prices = tree
        .nodes()
        .filter_map(|(id, n)| reduced.hat[id.0].as_ref().map(|p| (n.label.clone(), format_rational(p))))
        .collect();
    to_json(&ReducedFile {
        base: MarketFile::from_market(&reduced.base),
        eliminated_period: reduced.t,
        hat_prices,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quote {
    pub bid: String,
    pub ask: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidAskNodeRecord {
    pub id: String,
    pub time: usize,
    pub parent: Option<String>,
    #[serde(with = "serde_rational")]
    pub branch_prob: Rational,
    /// Quote per asset; `"none"` forbids the trade.
    pub quotes: BTreeMap<String, Quote>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidAskFile {
    pub horizon: usize,
    pub assets: Vec<String>,
    pub nodes: Vec<BidAskNodeRecord>,
    #[serde(with = "serde_rational")]
    pub interest: Rational,
}

fn parse_quote(raw: &str, where_: &str) -> Result<Option<Rational>, Error> {
    if raw == "none" {
        return Ok(None);
    }
    parse_rational(raw).map(Some).map_err(|e| Error::Input(format!("{where_}: {e}")))
}

fn quote_text(x: &Option<Rational>) -> String {
    x.as_ref().map(format_rational).unwrap_or_else(|| "none".to_string())
}

pub fn read_bidask(text: &str) -> Result<BidAskMarket, Error> {
    let file: BidAskFile = parse_json(text)?;
    let k = file.assets.len();
    let mut ask = vec![Vec::with_capacity(file.nodes.len()); k];
    let mut bid = vec![Vec::with_capacity(file.nodes.len()); k];
    for n in &file.nodes {
        if let Some(extra) = n.quotes.keys().find(|a| !file.assets.contains(a)) {
            return Err(Error::Input(format!("node {:?}: unknown asset {extra:?}", n.id)));
        }
        for (a, name) in file.assets.iter().enumerate() {
            let q = n.quotes.get(name).ok_or_else(|| Error::Input(format!("node {:?}: no quote for {name:?}", n.id)))?;
            let at = format!("node {:?}, asset {name:?}", n.id);
            ask[a].push(parse_quote(&q.ask, &at)?);
            bid[a].push(parse_quote(&q.bid, &at)?);
        }
    }
    let specs = file
        .nodes
        .into_iter()
        .map(|n| NodeSpec { label: n.id, time: n.time, parent: n.parent, branch_prob: n.branch_prob })
        .collect();
    let tree = ScenarioTree::new(file.horizon, specs)?;
    Ok(BidAskMarket { tree, assets: file.assets, ask, bid, interest: file.interest })
}

pub fn write_bidask(market: &BidAskMarket) -> String {
    let nodes = tree_specs(&market.tree)
        .map(|(id, s)| BidAskNodeRecord {
            id: s.label,
            time: s.time,
            parent: s.parent,
            branch_prob: s.branch_prob,
            quotes: market
                .assets
                .iter()
                .enumerate()
                .map(|(a, name)| {
                    (name.clone(), Quote { bid: quote_text(&market.bid[a][id.0]), ask: quote_text(&market.ask[a][id.0]) })
                })
                .collect(),
        })
        .collect();
    to_json(&BidAskFile {
        horizon: market.tree.horizon(),
        assets: market.assets.clone(),
        nodes,
        interest: market.interest.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub id: String,
    pub formula: String,
    pub relation: String,
    pub lhs: String,
    pub rhs: String,
    pub residual: String,
    pub holds: bool,
}

impl From<&Certification> for CertificationRecord {
    fn from(c: &Certification) -> Self {
        CertificationRecord {
            id: c.id.clone(),
            formula: c.formula.clone(),
            relation: c.relation.symbol().to_string(),
            lhs: format_rational(&c.lhs),
            rhs: format_rational(&c.rhs),
            residual: format_rational(&c.residual),
            holds: c.holds,
        }
    }
}

pub fn write_certifications(entries: &[Certification]) -> String {
    to_json(&entries.iter().map(CertificationRecord::from).collect::<Vec<_>>())
}

/// Files making up a generated instance, keyed by file name.
pub fn instance_files(instance: &ExampleInstance) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("market.json".to_string(), write_market(&instance.market));
    if let Some(reduced) = &instance.reduced {
        out.insert("reduced.json".to_string(), write_reduced(reduced));
    }
    if let Some(pasted) = &instance.pasted {
        out.insert("pasted.json".to_string(), write_market(pasted));
    }
    for (name, s) in &instance.strategies {
        let file = format!("strategy-{}.json", name.replace(['^', '/'], "_"));
        out.insert(file, write_strategy(&instance.market.tree, s));
    }
    out.insert("certification.json".to_string(), write_certifications(&instance.certified));
    let params: BTreeMap<_, _> = instance.parameters.iter().map(|(k, v)| (k.clone(), format_rational(v))).collect();
    out.insert("parameters.json".to_string(), to_json(&params));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foundry::gen_hedge_example;
    use crate::rational::rat;

    #[test]
    fn market_round_trip() {
        let inst = gen_hedge_example(&rat(1, 4), &rat(1, 10)).unwrap();
        let text = write_market(&inst.market);
        let back = read_market(&text).unwrap();
        assert_eq!(write_market(&back), text);
        let s = &inst.strategies[0].1;
        let st = write_strategy(&back.tree, s);
        assert_eq!(&read_strategy(&back, &st).unwrap(), s);
    }

    #[test]
    fn floats_rejected_with_location() {
        let text = r#"{"horizon": 0, "nodes": [{"id": "r", "time": 0, "parent": null,
            "branch_prob": "1", "price": 0.5}], "rate": "1/10", "tax": "0"}"#;
        let err = read_market(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let text = text.replace("0.5", "\"0.5\"");
        assert!(read_market(&text).is_err());
    }

    #[test]
    fn unliquidated_strategy_rejected() {
        let inst = gen_hedge_example(&rat(1, 4), &rat(1, 10)).unwrap();
        let text = r#"{"buys": [{"lot": 0, "node": "r", "amount": "1"}], "sells": []}"#;
        assert!(read_strategy(&inst.market, text).is_err());
    }
}
