use serde::{Deserialize, Serialize};

use super::ops::{ArchitectureParameters, OperationKind, SearchSpace};
use crate::diffcore::{derive_seed, draw, Distribution, ParamId, ParamStore, RngState, Tape, Tensor, Var};
use crate::{Error, Result};

/// Dimensions of a stacked network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub input_dim: usize,
    pub classes: usize,
    pub num_cells: usize,
    pub feature_dim: usize,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 || self.num_cells == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }
}

/// Which leaves of a forward pass require gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    None,
    Alpha,
    Weights,
    All,
}

impl GradMode {
    fn alpha(self) -> bool {
        matches!(self, GradMode::Alpha | GradMode::All)
    }

    fn weights(self) -> bool {
        matches!(self, GradMode::Weights | GradMode::All)
    }
}

/// Weight and bias of one linear map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn init(
        store: &mut ParamStore,
        rng: &mut RngState,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = draw(rng, &[fan_in, fan_out], Distribution::Uniform { low: -bound, high: bound })?;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        })
    }

    pub(crate) fn bind(self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> (Var, Var) {
        (
            bind(tape, store, self.weight, trainable),
            bind(tape, store, self.bias, trainable),
        )
    }
}

pub(crate) fn bind(tape: &mut Tape, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
    if trainable {
        tape.param(id, store.get(id))
    } else {
        tape.constant(store.get(id).clone())
    }
}

pub(crate) fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

/// Output of a single operation, `None` for `zero`.
pub(crate) fn apply_op(
    tape: &mut Tape,
    op: OperationKind,
    x: Var,
    params: Option<(Var, Var)>,
) -> Result<Option<Var>> {
    let lin = |tape: &mut Tape| -> Result<Var> {
        let p = params.ok_or_else(|| Error::invalid(format!("{op} is missing its parameters")))?;
        affine(tape, x, p)
    };
    Ok(match op {
        OperationKind::Zero => None,
        OperationKind::Identity => Some(x),
        OperationKind::Linear => Some(lin(tape)?),
        OperationKind::ReluLinear => {
            let h = lin(tape)?;
            Some(tape.relu(h))
        }
        OperationKind::TanhLinear => {
            let h = lin(tape)?;
            Some(tape.tanh(h))
        }
    })
}

pub(crate) fn sum_vars(tape: &mut Tape, vars: &[Var], like: Var) -> Result<Var> {
    match vars.split_first() {
        None => {
            let zeros = Tensor::zeros(tape.value(like).shape());
            Ok(tape.constant(zeros))
        }
        Some((&first, rest)) => {
            let mut acc = first;
            for &v in rest {
                acc = tape.add(acc, v)?;
            }
            Ok(acc)
        }
    }
}

/// Softmax-weighted sum of the candidate operations on one edge.
///
/// `weights` holds the edge's mixing weights (one per entry of `ops`);
/// `params[k]` must be present exactly when `ops[k]` is parametric.
pub fn mixed_edge_forward(
    tape: &mut Tape,
    x: Var,
    weights: Var,
    ops: &[OperationKind],
    params: &[Option<(Var, Var)>],
) -> Result<Var> {
    if tape.value(weights).len() != ops.len() || params.len() != ops.len() {
        return Err(Error::Shape {
            op: "mixed_edge_forward",
            lhs: tape.value(weights).shape().to_vec(),
            rhs: vec![ops.len()],
        });
    }
    let mut terms = Vec::with_capacity(ops.len());
    for (k, (&op, &p)) in ops.iter().zip(params).enumerate() {
        if let Some(out) = apply_op(tape, op, x, p)? {
            terms.push((k, out));
        }
    }
    if terms.is_empty() {
        return sum_vars(tape, &[], x);
    }
    tape.weighted_sum(weights, &terms)
}

/// The over-parameterized network: every candidate op on every edge of every
/// cell, with one α shared by all cells.
#[derive(Clone, Debug)]
pub struct Supernet {
    space: SearchSpace,
    shape: NetShape,
    params: ParamStore,
    alpha: ParamId,
    stem: Linear,
    head: Linear,
    /// `cells[c][e][k]`: parameters of op column `k` on edge `e` of cell `c`.
    cells: Vec<Vec<Vec<Option<Linear>>>>,
    weight_ids: Vec<ParamId>,
}

impl Supernet {
    /// Weights are uniform in `±1/√fan_in` with zero biases; α is drawn from
    /// `N(0, 1e-3²)` on its own seed stream.
    pub fn new(space: SearchSpace, shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = RngState::new(derive_seed(seed, 0x5745_4947));
        let mut params = ParamStore::new();
        let d = shape.feature_dim;
        let stem = Linear::init(&mut params, &mut rng, "stem", shape.input_dim, d)?;
        let mut cells = Vec::with_capacity(shape.num_cells);
        for c in 0..shape.num_cells {
            let mut edges = Vec::with_capacity(space.num_edges());
            for e in 0..space.num_edges() {
                let mut ops = Vec::with_capacity(space.num_ops());
                for &op in space.ops() {
                    ops.push(if op.is_parametric() {
                        Some(Linear::init(&mut params, &mut rng, &format!("cell{c}.edge{e}.{op}"), d, d)?)
                    } else {
                        None
                    });
                }
                edges.push(ops);
            }
            cells.push(edges);
        }
        let head = Linear::init(&mut params, &mut rng, "head", d, shape.classes)?;
        let weight_ids: Vec<ParamId> = params.ids().collect();
        let mut arng = RngState::new(derive_seed(seed, 0x414c_5048));
        let alpha_init = draw(
            &mut arng,
            &[space.num_edges(), space.num_ops()],
            Distribution::Normal { mean: 0.0, std: 1e-3 },
        )?;
        let alpha = params.add("alpha", alpha_init);
        Ok(Self {
            space,
            shape,
            params,
            alpha,
            stem,
            head,
            cells,
            weight_ids,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
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

    pub fn alpha_id(&self) -> ParamId {
        self.alpha
    }

    pub fn weight_ids(&self) -> &[ParamId] {
        &self.weight_ids
    }

    pub fn arch_params(&self) -> ArchitectureParameters {
        ArchitectureParameters::new(self.params.get(self.alpha).clone(), &self.space)
            .expect("alpha keeps its shape")
    }

    pub fn set_arch_params(&mut self, alpha: &ArchitectureParameters) -> Result<()> {
        let checked = ArchitectureParameters::new(alpha.tensor().clone(), &self.space)?;
        *self.params.get_mut(self.alpha) = checked.tensor().clone();
        Ok(())
    }

    pub(crate) fn stem(&self) -> Linear {
        self.stem
    }

    pub(crate) fn head(&self) -> Linear {
        self.head
    }

    pub(crate) fn op_params(&self, cell: usize, edge: usize, column: usize) -> Option<Linear> {
        self.cells[cell][edge][column]
    }

    /// Logits for the batch `x (m × input_dim)`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mode: GradMode) -> Result<Var> {
        if x.shape().len() != 2 || x.shape()[1] != self.shape.input_dim {
            return Err(Error::Shape {
                op: "supernet_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.shape.input_dim],
            });
        }
        let topology = self.space.topology();
        let xv = tape.constant(x.clone());
        let stem = self.stem.bind(tape, &self.params, mode.weights());
        let mut h = affine(tape, xv, stem)?;

        let alpha = bind(tape, &self.params, self.alpha, mode.alpha());
        let mix = tape.softmax(alpha);
        let rows: Vec<Var> = (0..self.space.num_edges())
            .map(|e| tape.row(mix, e))
            .collect::<Result<_>>()?;

        for cell in &self.cells {
            let mut nodes = vec![h];
            for dst in 1..=topology.num_intermediate() {
                let mut inputs = Vec::new();
                for e in topology.incoming(dst) {
                    let src = nodes[topology.edges()[e].src];
                    let params: Vec<Option<(Var, Var)>> = cell[e]
                        .iter()
                        .map(|p| p.map(|l| l.bind(tape, &self.params, mode.weights())))
                        .collect();
                    inputs.push(mixed_edge_forward(tape, src, rows[e], self.space.ops(), &params)?);
                }
                let node = sum_vars(tape, &inputs, h)?;
                nodes.push(node);
            }
            h = sum_vars(tape, &nodes[1..], h)?;
        }
        let head = self.head.bind(tape, &self.params, mode.weights());
        affine(tape, h, head)
    }

    /// Forward pass without gradients.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, GradMode::None)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradient_check;
    use crate::searchspace::ops::CellTopology;
    use OperationKind::*;

    fn batch(m: usize, n: usize, seed: u64) -> Tensor {
        draw(&mut RngState::new(seed), &[m, n], Distribution::Normal { mean: 0.0, std: 1.0 }).unwrap()
    }

    #[test]
    fn uniform_zero_identity_mix_halves_the_input() {
        let mut tape = Tape::new();
        let x = batch(3, 4, 1);
        let xv = tape.constant(x.clone());
        let logits = tape.constant(Tensor::zeros(&[2]));
        let w = tape.softmax(logits);
        let out = mixed_edge_forward(&mut tape, xv, w, &[Zero, Identity], &[None, None]).unwrap();
        for (o, i) in tape.value(out).data().iter().zip(x.data()) {
            assert!((o - i / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_identity_passes_input_through() {
        let mut tape = Tape::new();
        let x = batch(2, 4, 2);
        let xv = tape.constant(x.clone());
        let logits = tape.constant(Tensor::vector(vec![0.0, 40.0]));
        let w = tape.softmax(logits);
        let out = mixed_edge_forward(&mut tape, xv, w, &[Zero, Identity], &[None, None]).unwrap();
        for (o, i) in tape.value(out).data().iter().zip(x.data()) {
            assert!((o - i).abs() < 1e-6);
        }
    }

    #[test]
    fn mixed_edge_matches_explicit_recomputation() {
        let d = 3;
        let mut rng = RngState::new(11);
        let x = batch(4, d, 3);
        let alpha_row: Vec<f64> = (0..5).map(|_| rng.gen_normal(0.0, 1.0)).collect();
        let ws: Vec<Tensor> = (0..3)
            .map(|_| draw(&mut rng, &[d, d], Distribution::Normal { mean: 0.0, std: 0.5 }).unwrap())
            .collect();
        let bs: Vec<Tensor> = (0..3)
            .map(|_| draw(&mut rng, &[d], Distribution::Normal { mean: 0.0, std: 0.5 }).unwrap())
            .collect();

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let a = tape.constant(Tensor::vector(alpha_row.clone()));
        let w = tape.softmax(a);
        let params: Vec<Option<(Var, Var)>> = vec![None, None]
            .into_iter()
            .chain((0..3).map(|k| Some((tape.constant(ws[k].clone()), tape.constant(bs[k].clone())))))
            .collect();
        let out = mixed_edge_forward(&mut tape, xv, w, &OperationKind::ALL, &params).unwrap();

        // direct evaluation, one example and one output coordinate at a time
        let z: f64 = alpha_row.iter().map(|a| a.exp()).sum();
        let p: Vec<f64> = alpha_row.iter().map(|a| a.exp() / z).collect();
        for i in 0..4 {
            for j in 0..d {
                let lin = |k: usize| -> f64 {
                    (0..d).map(|q| x.data()[i * d + q] * ws[k].data()[q * d + j]).sum::<f64>() + bs[k].data()[j]
                };
                let expected = p[1] * x.data()[i * d + j]
                    + p[2] * lin(0)
                    + p[3] * lin(1).max(0.0)
                    + p[4] * lin(2).tanh();
                let got = tape.value(out).data()[i * d + j];
                assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn all_zero_network_outputs_head_bias() {
        let space = SearchSpace::full(2).unwrap();
        let shape = NetShape { input_dim: 2, classes: 3, num_cells: 2, feature_dim: 4 };
        let mut net = Supernet::new(space.clone(), shape, 5).unwrap();
        let mut a = ArchitectureParameters::zeros(&space);
        for e in 0..space.num_edges() {
            a.set(e, 0, 1e3);
        }
        net.set_arch_params(&a).unwrap();
        let logits = net.logits(&batch(5, 2, 9)).unwrap();
        // biases start at zero
        assert!(logits.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn single_identity_edge_is_head_of_stem() {
        let space = SearchSpace::new(CellTopology::dense(1).unwrap(), vec![Identity]).unwrap();
        let shape = NetShape { input_dim: 2, classes: 2, num_cells: 1, feature_dim: 3 };
        let net = Supernet::new(space, shape, 8).unwrap();
        let x = batch(4, 2, 10);
        let got = net.logits(&x).unwrap();

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let stem = net.stem().bind(&mut tape, net.params(), false);
        let h = affine(&mut tape, xv, stem).unwrap();
        let head = net.head().bind(&mut tape, net.params(), false);
        let y = affine(&mut tape, h, head).unwrap();
        assert_eq!(tape.value(y), &got);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = Supernet::new(
            SearchSpace::full(2).unwrap(),
            NetShape { input_dim: 2, classes: 2, num_cells: 1, feature_dim: 4 },
            0,
        )
        .unwrap();
        assert!(net.logits(&batch(3, 5, 0)).is_err());
    }

    #[test]
    fn supernet_gradients_match_finite_differences() {
        let space = SearchSpace::full(2).unwrap();
        let shape = NetShape { input_dim: 2, classes: 3, num_cells: 2, feature_dim: 4 };
        let mut net = Supernet::new(space, shape, 21).unwrap();
        // spread α so softmax weights are not all equal
        let mut rng = RngState::new(4);
        let alpha_id = net.alpha_id();
        for v in net.params_mut().get_mut(alpha_id).data_mut() {
            *v = rng.gen_normal(0.0, 1.0);
        }
        let x = batch(6, 2, 12);
        let labels = vec![0, 1, 2, 1, 0, 2];
        let ids: Vec<ParamId> = net.params().ids().collect();
        let proto = net.clone();
        let mut store = net.params().clone();
        let report = gradient_check(
            |s, tape| {
                let mut n = proto.clone();
                *n.params_mut() = s.clone();
                let logits = n.forward(tape, &x, GradMode::All)?;
                tape.cross_entropy(logits, &labels)
            },
            &mut store,
            &ids,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
