use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::{Error, Result};

/// Candidate operation on an edge. Declaration order is the canonical
/// operation index used for tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    Zero,
    Identity,
    Linear,
    ReluLinear,
    TanhLinear,
}

impl OperationKind {
    pub const ALL: [OperationKind; 5] = [
        OperationKind::Zero,
        OperationKind::Identity,
        OperationKind::Linear,
        OperationKind::ReluLinear,
        OperationKind::TanhLinear,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            OperationKind::Zero => "zero",
            OperationKind::Identity => "identity",
            OperationKind::Linear => "linear",
            OperationKind::ReluLinear => "relu_linear",
            OperationKind::TanhLinear => "tanh_linear",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.tag() == tag)
    }

    /// Owns a `d×d` weight and a bias.
    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            OperationKind::Linear | OperationKind::ReluLinear | OperationKind::TanhLinear
        )
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Dense cell DAG with `num_intermediate` intermediate nodes.
///
/// Edges are listed in canonical order, lexicographic by `(dst, src)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellTopology {
    num_intermediate: usize,
    edges: Vec<Edge>,
}

impl CellTopology {
    pub fn dense(num_intermediate: usize) -> Result<Self> {
        if num_intermediate == 0 {
            return Err(Error::invalid("a cell needs at least one intermediate node"));
        }
        let edges = (1..=num_intermediate)
            .flat_map(|dst| (0..dst).map(move |src| Edge { src, dst }))
            .collect();
        Ok(Self {
            num_intermediate,
            edges,
        })
    }

    pub fn num_intermediate(&self) -> usize {
        self.num_intermediate
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical indices of the edges entering `dst`.
    pub fn incoming(&self, dst: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].dst == dst)
            .collect()
    }

    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.src == src && e.dst == dst)
    }
}

/// Topology plus the candidate operation set (the α columns).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchSpace {
    topology: CellTopology,
    ops: Vec<OperationKind>,
}

impl SearchSpace {
    /// `ops` must be strictly increasing in canonical order.
    pub fn new(topology: CellTopology, ops: Vec<OperationKind>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::invalid("operation set is empty"));
        }
        if ops.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "operation set must be unique and in canonical order, got {ops:?}"
            )));
        }
        Ok(Self { topology, ops })
    }

    /// Dense topology over all five operations.
    pub fn full(num_intermediate: usize) -> Result<Self> {
        Self::new(
            CellTopology::dense(num_intermediate)?,
            OperationKind::ALL.to_vec(),
        )
    }

    pub fn topology(&self) -> &CellTopology {
        &self.topology
    }

    pub fn ops(&self) -> &[OperationKind] {
        &self.ops
    }

    pub fn num_edges(&self) -> usize {
        self.topology.num_edges()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn column_of(&self, op: OperationKind) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    pub fn non_zero_ops(&self) -> Vec<OperationKind> {
        self.ops
            .iter()
            .copied()
            .filter(|&o| o != OperationKind::Zero)
            .collect()
    }
}

/// Architecture logits: one row per edge, one column per candidate op.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureParameters {
    alpha: Tensor,
}

impl ArchitectureParameters {
    pub fn new(alpha: Tensor, space: &SearchSpace) -> Result<Self> {
        let expected = [space.num_edges(), space.num_ops()];
        if alpha.shape() != expected {
            return Err(Error::Shape {
                op: "architecture_parameters",
                lhs: alpha.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        if !alpha.all_finite() {
            return Err(Error::NonFinite("architecture parameters".into()));
        }
        Ok(Self { alpha })
    }

    pub fn zeros(space: &SearchSpace) -> Self {
        Self {
            alpha: Tensor::zeros(&[space.num_edges(), space.num_ops()]),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.alpha
    }

    pub fn row(&self, edge: usize) -> &[f64] {
        self.alpha.row(edge)
    }

    pub fn set(&mut self, edge: usize, column: usize, value: f64) {
        let n = self.alpha.last_dim();
        self.alpha.data_mut()[edge * n + column] = value;
    }

    /// Softmax of one edge's logits.
    pub fn weights(&self, edge: usize) -> Vec<f64> {
        let mut row = self.row(edge).to_vec();
        crate::diffcore::softmax_row(&mut row);
        row
    }
}
