//! Micro cell-based search space over vector features.
//!
//! A cell is the dense DAG on `1 + n` nodes: node 0 is the cell input and
//! every intermediate node `j` receives one edge from each earlier node.
//! Each edge carries a mixed operation whose weights are the softmax of
//! that edge's row of architecture logits. The cell output is the sum of
//! its intermediate nodes; cells are stacked between a linear stem and a
//! linear classification head.

mod discrete;
mod enumerate;
mod genotype;
mod ops;
mod supernet;

pub use discrete::{build_discrete_net, DiscreteNet};
pub use enumerate::{enumerate_genotypes, genotype_count, EnumerationOptions, DEFAULT_ENUMERATION_CAP};
pub use genotype::{discretize, Genotype, RetainPolicy};
pub use ops::{ArchitectureParameters, CellTopology, Edge, OperationKind, SearchSpace};
pub use supernet::{mixed_edge_forward, GradMode, NetShape, Supernet};
