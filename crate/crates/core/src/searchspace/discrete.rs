use super::genotype::Genotype;
use super::ops::{CellTopology, OperationKind};
use super::supernet::{affine, apply_op, sum_vars, GradMode, Linear, NetShape, Supernet};
use crate::diffcore::{derive_seed, ParamId, ParamStore, RngState, Tape, Tensor, Var};
use crate::{Error, Result};

/// A network with exactly one operation per retained edge.
#[derive(Clone, Debug)]
pub struct DiscreteNet {
    genotype: Genotype,
    topology: CellTopology,
    shape: NetShape,
    params: ParamStore,
    stem: Linear,
    head: Linear,
    /// `cells[c]`: `(edge, op, params)` for each retained edge.
    cells: Vec<Vec<(usize, OperationKind, Option<Linear>)>>,
}

/// Fresh weights for `genotype`, initialised like the supernet's.
pub fn build_discrete_net(genotype: &Genotype, shape: NetShape, seed: u64) -> Result<DiscreteNet> {
    shape.validate()?;
    let mut rng = RngState::new(derive_seed(seed, 0x4449_5343));
    let mut params = ParamStore::new();
    let d = shape.feature_dim;
    let stem = Linear::init(&mut params, &mut rng, "stem", shape.input_dim, d)?;
    let mut cells = Vec::with_capacity(shape.num_cells);
    for c in 0..shape.num_cells {
        let mut edges = Vec::with_capacity(genotype.choices().len());
        for &(e, op) in genotype.choices() {
            let p = if op.is_parametric() {
                Some(Linear::init(&mut params, &mut rng, &format!("cell{c}.edge{e}.{op}"), d, d)?)
            } else {
                None
            };
            edges.push((e, op, p));
        }
        cells.push(edges);
    }
    let head = Linear::init(&mut params, &mut rng, "head", d, shape.classes)?;
    Ok(DiscreteNet {
        genotype: genotype.clone(),
        topology: genotype.topology(),
        shape,
        params,
        stem,
        head,
        cells,
    })
}

impl DiscreteNet {
    /// Copies the supernet's stem, head and the chosen operations' weights.
    pub fn from_supernet(net: &Supernet, genotype: &Genotype) -> Result<Self> {
        if genotype.num_intermediate() != net.space().topology().num_intermediate() {
            return Err(Error::invalid(format!(
                "genotype has {} nodes but the supernet has {}",
                genotype.num_intermediate(),
                net.space().topology().num_intermediate()
            )));
        }
        let mut params = ParamStore::new();
        let src = net.params();
        let copy = |params: &mut ParamStore, l: Linear| Linear {
            weight: params.add(src.name(l.weight), src.get(l.weight).clone()),
            bias: params.add(src.name(l.bias), src.get(l.bias).clone()),
        };
        let stem = copy(&mut params, net.stem());
        let mut cells = Vec::with_capacity(net.shape().num_cells);
        for c in 0..net.shape().num_cells {
            let mut edges = Vec::new();
            for &(e, op) in genotype.choices() {
                let column = net
                    .space()
                    .column_of(op)
                    .ok_or_else(|| Error::invalid(format!("{op} is not in the supernet's operation set")))?;
                let p = net.op_params(c, e, column).map(|l| copy(&mut params, l));
                edges.push((e, op, p));
            }
            cells.push(edges);
        }
        let head = copy(&mut params, net.head());
        Ok(Self {
            genotype: genotype.clone(),
            topology: genotype.topology(),
            shape: net.shape(),
            params,
            stem,
            head,
            cells,
        })
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.params.ids().collect()
    }

    /// `GradMode::Alpha` behaves like `None`: there is no α here.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mode: GradMode) -> Result<Var> {
        if x.shape().len() != 2 || x.shape()[1] != self.shape.input_dim {
            return Err(Error::Shape {
                op: "discrete_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.shape.input_dim],
            });
        }
        let trainable = matches!(mode, GradMode::Weights | GradMode::All);
        let xv = tape.constant(x.clone());
        let stem = self.stem.bind(tape, &self.params, trainable);
        let mut h = affine(tape, xv, stem)?;
        for cell in &self.cells {
            let mut nodes = vec![h];
            for dst in 1..=self.topology.num_intermediate() {
                let mut inputs = Vec::new();
                for &(e, op, p) in cell {
                    let edge = self.topology.edges()[e];
                    if edge.dst != dst {
                        continue;
                    }
                    let bound = p.map(|l| l.bind(tape, &self.params, trainable));
                    if let Some(out) = apply_op(tape, op, nodes[edge.src], bound)? {
                        inputs.push(out);
                    }
                }
                let node = sum_vars(tape, &inputs, h)?;
                nodes.push(node);
            }
            h = sum_vars(tape, &nodes[1..], h)?;
        }
        let head = self.head.bind(tape, &self.params, trainable);
        affine(tape, h, head)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, GradMode::None)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{draw, Distribution};
    use crate::searchspace::genotype::{discretize, RetainPolicy};
    use crate::searchspace::ops::{ArchitectureParameters, SearchSpace};

    fn shape() -> NetShape {
        NetShape { input_dim: 2, classes: 3, num_cells: 2, feature_dim: 4 }
    }

    #[test]
    fn saturated_supernet_matches_its_discretization() {
        let space = SearchSpace::full(3).unwrap();
        let mut net = Supernet::new(space.clone(), shape(), 3).unwrap();
        let mut rng = RngState::new(17);
        let mut a = ArchitectureParameters::zeros(&space);
        for e in 0..space.num_edges() {
            // one dominant non-zero op per edge
            a.set(e, 1 + rng.below(4), 200.0);
        }
        net.set_arch_params(&a).unwrap();
        let g = discretize(&a, &space, RetainPolicy::All).unwrap();
        let discrete = DiscreteNet::from_supernet(&net, &g).unwrap();
        let x = draw(&mut rng, &[7, 2], Distribution::Normal { mean: 0.0, std: 1.0 }).unwrap();
        let s = net.logits(&x).unwrap();
        let d = discrete.logits(&x).unwrap();
        for (p, q) in s.data().iter().zip(d.data()) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }

    #[test]
    fn node_without_inputs_contributes_zero() {
        let g = Genotype::new(2, RetainPolicy::All, vec![(1, OperationKind::Identity)]).unwrap();
        let net = build_discrete_net(&g, shape(), 0).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
        assert!(net.logits(&x).unwrap().all_finite());
    }

    #[test]
    fn only_parametric_choices_own_weights() {
        let g = Genotype::new(
            2,
            RetainPolicy::All,
            vec![(0, OperationKind::Linear), (1, OperationKind::Identity), (2, OperationKind::TanhLinear)],
        )
        .unwrap();
        let net = build_discrete_net(&g, shape(), 0).unwrap();
        // stem + head + 2 parametric ops per cell, two tensors each
        assert_eq!(net.params().len(), 2 + 2 + 2 * 2 * 2);
    }

    #[test]
    fn build_is_seed_deterministic() {
        let g = Genotype::new(1, RetainPolicy::All, vec![(0, OperationKind::ReluLinear)]).unwrap();
        let a = build_discrete_net(&g, shape(), 9).unwrap();
        let b = build_discrete_net(&g, shape(), 9).unwrap();
        let c = build_discrete_net(&g, shape(), 10).unwrap();
        let ids = a.weight_ids();
        assert_eq!(a.params().checksum(&ids), b.params().checksum(&ids));
        assert_ne!(a.params().checksum(&ids), c.params().checksum(&ids));
    }
}
