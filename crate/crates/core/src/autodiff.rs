//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Computations are written once against the [`Graph`] trait. Running them on
//! [`Eager`] evaluates the primitives directly; running them on a [`Tape`]
//! evaluates the same primitives in the same order and records each one, so
//! recorded values are bit-identical to eager values.

use crate::error::{Error, Result};
use crate::tensor::{Activation, Precision, Tensor};

/// Something that can apply the primitive set.
pub trait Graph {
    type Value: Clone;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn div_scalar(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn matvec(&mut self, m: &Self::Value, v: &Self::Value) -> Result<Self::Value>;
    fn activation(&mut self, a: &Self::Value, act: Activation) -> Result<Self::Value>;
    fn cast(&mut self, a: &Self::Value, precision: Precision) -> Result<Self::Value>;
    fn precision_of(&self, a: &Self::Value) -> Result<Precision>;
}

/// Direct evaluation, nothing recorded.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.scale(c))
    }
    fn div_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.div_scalar(c))
    }
    fn matvec(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        m.matvec(v)
    }
    fn activation(&mut self, a: &Tensor, act: Activation) -> Result<Tensor> {
        Ok(a.activation(act))
    }
    fn cast(&mut self, a: &Tensor, precision: Precision) -> Result<Tensor> {
        Ok(a.cast(precision))
    }
    fn precision_of(&self, a: &Tensor) -> Result<Precision> {
        Ok(a.precision())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    DivScalar(usize, f64),
    MatVec(usize, usize),
    Act(usize, Activation),
    Cast(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive applications.
///
/// A tape belongs to a single computation; it is not meant to be shared
/// between concurrent solves.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an input. Every leaf receives a cotangent from [`Tape::vjp`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaves += 1;
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::UnknownVar(v.0))
    }

    /// Stored tensors: leaves plus recorded primitives.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves
    }

    pub fn num_primitives(&self) -> usize {
        self.nodes.len() - self.leaves
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: &Var) -> Result<&Tensor> {
        self.value(*v)
    }

    /// Replay the recorded primitives in reverse, seeding `output` with
    /// `cotangent`. Returns a cotangent for every leaf; leaves that do not
    /// influence `output` get zeros.
    pub fn vjp(&self, output: Var, cotangent: &Tensor) -> Result<Cotangents> {
        let out = self.value(output)?;
        if out.shape() != cotangent.shape() {
            return Err(Error::ShapeMismatch {
                op: "vjp",
                lhs: out.shape().to_vec(),
                rhs: cotangent.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(cotangent.cast(out.precision()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    accumulate(&mut grads[a], g.clone())?;
                    accumulate(&mut grads[b], g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a], g.clone())?;
                    accumulate(&mut grads[b], g.scale(-1.0))?;
                }
                Op::Scale(a, c) => accumulate(&mut grads[a], g.scale(c))?,
                Op::DivScalar(a, c) => accumulate(&mut grads[a], g.div_scalar(c))?,
                Op::MatVec(m, v) => {
                    let mat = &self.nodes[m].value;
                    let vec = &self.nodes[v].value;
                    accumulate(&mut grads[m], Tensor::outer(&g, vec))?;
                    accumulate(&mut grads[v], mat.matvec_transposed(&g)?)?;
                }
                Op::Act(a, act) => {
                    let local = match act {
                        Activation::Tanh => {
                            let t = &node.value;
                            let p = t.precision();
                            t.with_data(t.data().iter().map(|&v| p.round(1.0 - p.round(v * v))).collect())
                        }
                        Activation::Relu => {
                            let x = &self.nodes[a].value;
                            x.with_data(x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect())
                        }
                    };
                    accumulate(&mut grads[a], g.mul(&local)?)?;
                }
                Op::Cast(a) => {
                    let p = self.nodes[a].value.precision();
                    accumulate(&mut grads[a], g.cast(p))?;
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match node.op {
                Op::Leaf => Some(g.unwrap_or_else(|| Tensor::zeros_like(&node.value))),
                _ => None,
            })
            .collect();
        Ok(Cotangents { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.add(&g)?,
    });
    Ok(())
}

/// Leaf cotangents produced by [`Tape::vjp`].
#[derive(Debug, Clone)]
pub struct Cotangents {
    grads: Vec<Option<Tensor>>,
}

impl Cotangents {
    /// Cotangent of a leaf; `None` for non-leaf variables.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph for Tape {
    type Value = Var;

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.node(a)?.add(self.node(b)?)?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.node(a)?.sub(self.node(b)?)?;
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Result<Var> {
        let v = self.node(a)?.scale(c);
        Ok(self.push(v, Op::Scale(a.0, c)))
    }
    fn div_scalar(&mut self, a: &Var, c: f64) -> Result<Var> {
        let v = self.node(a)?.div_scalar(c);
        Ok(self.push(v, Op::DivScalar(a.0, c)))
    }
    fn matvec(&mut self, m: &Var, v: &Var) -> Result<Var> {
        let out = self.node(m)?.matvec(self.node(v)?)?;
        Ok(self.push(out, Op::MatVec(m.0, v.0)))
    }
    fn activation(&mut self, a: &Var, act: Activation) -> Result<Var> {
        let v = self.node(a)?.activation(act);
        Ok(self.push(v, Op::Act(a.0, act)))
    }
    /// Casting to the value's own precision records nothing.
    fn cast(&mut self, a: &Var, precision: Precision) -> Result<Var> {
        let src = self.node(a)?;
        if src.precision() == precision {
            return Ok(*a);
        }
        let v = src.cast(precision);
        Ok(self.push(v, Op::Cast(a.0)))
    }
    fn precision_of(&self, a: &Var) -> Result<Precision> {
        Ok(self.node(a)?.precision())
    }
}
