use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ops::{ArchitectureParameters, CellTopology, OperationKind, SearchSpace};
use crate::{Error, Result};

/// How many incoming edges each intermediate node keeps after discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RetainPolicy {
    All,
    /// Keep the `k` strongest incoming edges (fewer when a node has fewer).
    Top(usize),
}

impl RetainPolicy {
    pub fn validate(self, topology: &CellTopology) -> Result<()> {
        if let RetainPolicy::Top(k) = self {
            let max_in = topology.num_intermediate();
            if k == 0 || k > max_in {
                return Err(Error::invalid(format!(
                    "retain=top{k} exceeds the available incoming edges (at most {max_in} per node)"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn keep(self, indegree: usize) -> usize {
        match self {
            RetainPolicy::All => indegree,
            RetainPolicy::Top(k) => k.min(indegree),
        }
    }
}

impl fmt::Display for RetainPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetainPolicy::All => f.write_str("all"),
            RetainPolicy::Top(k) => write!(f, "top{k}"),
        }
    }
}

impl FromStr for RetainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(RetainPolicy::All);
        }
        s.strip_prefix("top")
            .and_then(|k| k.parse().ok())
            .map(RetainPolicy::Top)
            .ok_or_else(|| Error::invalid(format!("unknown retain policy `{s}`")))
    }
}

impl TryFrom<String> for Genotype {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Genotype::parse(&s)
    }
}

impl From<Genotype> for String {
    fn from(g: Genotype) -> String {
        g.to_text()
    }
}

impl TryFrom<String> for RetainPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RetainPolicy> for String {
    fn from(p: RetainPolicy) -> String {
        p.to_string()
    }
}

/// A discrete architecture: one operation per retained edge.
///
/// Serializes as its text form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Genotype {
    num_intermediate: usize,
    retain: RetainPolicy,
    choices: Vec<(usize, OperationKind)>,
}

impl Genotype {
    /// Validates against the dense topology on `num_intermediate` nodes and
    /// sorts the choices canonically.
    pub fn new(
        num_intermediate: usize,
        retain: RetainPolicy,
        mut choices: Vec<(usize, OperationKind)>,
    ) -> Result<Self> {
        let topology = CellTopology::dense(num_intermediate)?;
        retain.validate(&topology)?;
        choices.sort_by_key(|&(e, _)| e);
        for w in choices.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("edge {} appears twice", w[0].0)));
            }
        }
        for &(e, op) in &choices {
            if e >= topology.num_edges() {
                return Err(Error::invalid(format!(
                    "edge index {e} out of range for {} edges",
                    topology.num_edges()
                )));
            }
            if op == OperationKind::Zero {
                return Err(Error::invalid(format!("retained edge {e} carries zero")));
            }
        }
        if let RetainPolicy::Top(k) = retain {
            for dst in 1..=num_intermediate {
                let kept = choices
                    .iter()
                    .filter(|(e, _)| topology.edges()[*e].dst == dst)
                    .count();
                if kept > k {
                    return Err(Error::invalid(format!(
                        "node {dst} keeps {kept} edges but retain is top{k}"
                    )));
                }
            }
        }
        Ok(Self {
            num_intermediate,
            retain,
            choices,
        })
    }

    pub fn num_intermediate(&self) -> usize {
        self.num_intermediate
    }

    pub fn retain(&self) -> RetainPolicy {
        self.retain
    }

    pub fn choices(&self) -> &[(usize, OperationKind)] {
        &self.choices
    }

    pub fn topology(&self) -> CellTopology {
        CellTopology::dense(self.num_intermediate).expect("validated on construction")
    }

    pub fn op_on(&self, edge: usize) -> Option<OperationKind> {
        self.choices
            .iter()
            .find(|&&(e, _)| e == edge)
            .map(|&(_, op)| op)
    }

    /// Per-edge canonical op index, with absent edges reading as `zero`.
    pub fn key(&self) -> Vec<usize> {
        let n = self.topology().num_edges();
        (0..n)
            .map(|e| self.op_on(e).map_or(0, OperationKind::index))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let topology = self.topology();
        let mut out = format!(
            "genotype v1; nodes={}; retain={}\n",
            self.num_intermediate, self.retain
        );
        for &(e, op) in &self.choices {
            let edge = topology.edges()[e];
            out.push_str(&format!("edge {}->{}: {}\n", edge.src, edge.dst, op));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_genotype(text)
    }
}

impl Ord for Genotype {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num_intermediate, self.key(), self.retain.to_string()).cmp(&(
            other.num_intermediate,
            other.key(),
            other.retain.to_string(),
        ))
    }
}

impl PartialOrd for Genotype {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for Genotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_genotype(s)
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Column (1-based) of `part` within `line`, which it must borrow from.
fn col_of(line: &str, part: &str) -> usize {
    part.as_ptr() as usize - line.as_ptr() as usize + 1
}

fn parse_genotype(text: &str) -> Result<Genotype> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hno, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty genotype text"))?;
    let hline = hno + 1;
    let mut fields = header.split(';').map(str::trim);
    if fields.next() != Some("genotype v1") {
        return Err(parse_err(hline, 1, "expected header `genotype v1; nodes=<n>; retain=<policy>`"));
    }
    let mut nodes = None;
    let mut retain = None;
    for field in fields {
        let col = col_of(header, field);
        match field.split_once('=') {
            Some(("nodes", v)) => {
                nodes = Some(v.parse::<usize>().map_err(|_| {
                    parse_err(hline, col_of(header, v), format!("invalid node count `{v}`"))
                })?)
            }
            Some(("retain", v)) => {
                retain = Some(v.parse::<RetainPolicy>().map_err(|_| {
                    parse_err(hline, col_of(header, v), format!("invalid retain policy `{v}`"))
                })?)
            }
            _ => return Err(parse_err(hline, col, format!("unexpected header field `{field}`"))),
        }
    }
    let nodes = nodes.ok_or_else(|| parse_err(hline, 1, "header is missing `nodes=`"))?;
    let retain = retain.ok_or_else(|| parse_err(hline, 1, "header is missing `retain=`"))?;
    let topology =
        CellTopology::dense(nodes).map_err(|e| parse_err(hline, 1, e.to_string()))?;
    retain
        .validate(&topology)
        .map_err(|e| parse_err(hline, 1, e.to_string()))?;

    let mut choices: Vec<(usize, OperationKind)> = Vec::new();
    for (no, line) in lines {
        let lno = no + 1;
        let body = line
            .trim_start()
            .strip_prefix("edge ")
            .ok_or_else(|| parse_err(lno, 1, "expected `edge <src>-><dst>: <op>`"))?;
        let (endpoints, op_part) = body
            .split_once(':')
            .ok_or_else(|| parse_err(lno, col_of(line, body), "missing `:` after edge"))?;
        let (src, dst) = endpoints
            .trim()
            .split_once("->")
            .ok_or_else(|| parse_err(lno, col_of(line, endpoints), "expected `<src>-><dst>`"))?;
        let parse_node = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(lno, col_of(line, s), format!("invalid node id `{}`", s.trim())))
        };
        let (src, dst) = (parse_node(src)?, parse_node(dst)?);
        let edge = topology.edge_index(src, dst).ok_or_else(|| {
            parse_err(lno, col_of(line, endpoints), format!("no edge {src}->{dst} in a {nodes}-node cell"))
        })?;
        let tag = op_part.trim();
        let op = OperationKind::from_tag(tag)
            .ok_or_else(|| parse_err(lno, col_of(line, op_part) + 1, format!("unknown operation `{tag}`")))?;
        if op == OperationKind::Zero {
            return Err(parse_err(lno, col_of(line, op_part) + 1, "a retained edge cannot carry `zero`"));
        }
        if choices.iter().any(|&(e, _)| e == edge) {
            return Err(parse_err(lno, 1, format!("duplicate edge {src}->{dst}")));
        }
        choices.push((edge, op));
    }
    Genotype::new(nodes, retain, choices).map_err(|e| parse_err(hline, 1, e.to_string()))
}

/// Argmax discretization of architecture logits.
///
/// Each edge takes its highest-logit non-zero operation (ties to the lower
/// operation index); then every intermediate node keeps its strongest
/// incoming edges under `retain`, ranked by the chosen operation's softmax
/// weight with ties to the lower operation index, then the lower edge index.
pub fn discretize(
    alpha: &ArchitectureParameters,
    space: &SearchSpace,
    retain: RetainPolicy,
) -> Result<Genotype> {
    let topology = space.topology();
    retain.validate(topology)?;
    if alpha.tensor().shape() != [space.num_edges(), space.num_ops()] {
        return Err(Error::Shape {
            op: "discretize",
            lhs: alpha.tensor().shape().to_vec(),
            rhs: vec![space.num_edges(), space.num_ops()],
        });
    }
    if !alpha.tensor().all_finite() {
        return Err(Error::NonFinite("architecture parameters".into()));
    }
    let candidates: Vec<usize> = (0..space.num_ops())
        .filter(|&c| space.ops()[c] != OperationKind::Zero)
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid("search space has no non-zero operation"));
    }

    // (edge, column, softmax weight) of each edge's winner
    let winners: Vec<(usize, usize, f64)> = (0..space.num_edges())
        .map(|e| {
            let row = alpha.row(e);
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            (e, best, alpha.weights(e)[best])
        })
        .collect();

    let mut choices = Vec::new();
    for dst in 1..=topology.num_intermediate() {
        let mut incoming: Vec<_> = topology.incoming(dst).into_iter().map(|e| winners[e]).collect();
        incoming.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then(space.ops()[a.1].cmp(&space.ops()[b.1]))
                .then(a.0.cmp(&b.0))
        });
        let keep = retain.keep(incoming.len());
        choices.extend(incoming[..keep].iter().map(|&(e, c, _)| (e, space.ops()[c])));
    }
    Genotype::new(topology.num_intermediate(), retain, choices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use OperationKind::*;

    fn alpha(space: &SearchSpace, rows: &[&[f64]]) -> ArchitectureParameters {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ArchitectureParameters::new(
            Tensor::matrix(rows.len(), rows[0].len(), data).unwrap(),
            space,
        )
        .unwrap()
    }

    #[test]
    fn zero_is_excluded_from_argmax() {
        let space = SearchSpace::full(1).unwrap();
        let a = alpha(&space, &[&[9.0, 1.0, 0.0, 0.0, 0.0]]);
        let g = discretize(&a, &space, RetainPolicy::All).unwrap();
        assert_eq!(g.choices(), &[(0, Identity)]);
    }

    #[test]
    fn ties_go_to_the_lower_operation_index() {
        let space = SearchSpace::full(1).unwrap();
        let a = alpha(&space, &[&[0.0, 2.0, 2.0, 1.0, 1.0]]);
        let g = discretize(&a, &space, RetainPolicy::All).unwrap();
        assert_eq!(g.choices(), &[(0, Identity)]);
    }

    #[test]
    fn top1_keeps_the_strongest_incoming_edge() {
        let space = SearchSpace::full(2).unwrap();
        // node 2 has edges 1 (0->2) and 2 (1->2); edge 2 is more confident
        let a = alpha(
            &space,
            &[
                &[0.0, 0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.5, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 3.0, 0.0],
            ],
        );
        let g = discretize(&a, &space, RetainPolicy::Top(1)).unwrap();
        assert_eq!(g.choices(), &[(0, Linear), (2, ReluLinear)]);
    }

    #[test]
    fn retain_beyond_indegree_is_rejected() {
        let space = SearchSpace::full(2).unwrap();
        let a = ArchitectureParameters::zeros(&space);
        assert!(discretize(&a, &space, RetainPolicy::Top(3)).is_err());
        assert!(discretize(&a, &space, RetainPolicy::Top(0)).is_err());
    }

    #[test]
    fn text_form_is_canonical() {
        let g = Genotype::new(2, RetainPolicy::All, vec![(2, Identity), (0, ReluLinear), (1, Linear)]).unwrap();
        assert_eq!(
            g.to_text(),
            "genotype v1; nodes=2; retain=all\n\
             edge 0->1: relu_linear\n\
             edge 0->2: linear\n\
             edge 1->2: identity\n"
        );
        assert_eq!(Genotype::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn unknown_operation_is_named_with_position() {
        let text = "genotype v1; nodes=1; retain=all\nedge 0->1: conv3x3\n";
        match Genotype::parse(text).unwrap_err() {
            Error::Parse { line, column, message } => {
                assert_eq!(line, 2);
                assert_eq!(column, 12);
                assert!(message.contains("conv3x3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_edge_is_rejected() {
        let text = "genotype v1; nodes=2; retain=all\nedge 0->1: linear\nedge 0->1: identity\n";
        let err = Genotype::parse(text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_headers_and_edges() {
        assert!(Genotype::parse("").is_err());
        assert!(Genotype::parse("genotype v2; nodes=1; retain=all\n").is_err());
        assert!(Genotype::parse("genotype v1; nodes=1\n").is_err());
        assert!(Genotype::parse("genotype v1; nodes=1; retain=all\nedge 1->0: linear\n").is_err());
        assert!(Genotype::parse("genotype v1; nodes=1; retain=all\nedge 0->1: zero\n").is_err());
    }

    #[test]
    fn retain_policy_text() {
        assert_eq!("top2".parse::<RetainPolicy>().unwrap(), RetainPolicy::Top(2));
        assert_eq!(RetainPolicy::Top(2).to_string(), "top2");
        assert!("best".parse::<RetainPolicy>().is_err());
    }
}
