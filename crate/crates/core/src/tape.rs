//! Reverse-mode differentiation over [`SeqTensor`] values.
//!
//! A [`GradTape`] evaluates eagerly and records each operation with handles to
//! its inputs. [`GradTape::backward`] replays the record in reverse and returns
//! an adjoint for every node that influenced the loss, plus a zero adjoint for
//! leaves that did not. A tape is single-threaded; run one tape per video.

use crate::error::{Error, Result};
use crate::nn::{self, ConvGeom};
use crate::postprocess;
use crate::scalar::Scalar;
use crate::tensor::{self, SeqTensor};
use crate::tps;
use crate::train;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Concat(Vec<Var>),
    Normalize {
        x: Var,
        eps: S,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: SeqTensor<S>,
        rstd: Vec<S>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Distances {
        x: Var,
        radius: usize,
    },
    Smooth {
        x: Var,
        taps: Vec<S>,
    },
    Bce {
        pred: Var,
        target: Vec<S>,
    },
}

struct Node<S> {
    value: SeqTensor<S>,
    op: Op<S>,
}

pub struct GradTape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for GradTape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> GradTape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: SeqTensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: SeqTensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &SeqTensor<S> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(SeqTensor::from_raw(1, 1, vec![s]), Op::Sum(x))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&SeqTensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = tensor::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    pub fn l2_normalize_rows(&mut self, x: Var, eps: S) -> Var {
        let y = tensor::l2_normalize_rows(self.value(x), eps);
        self.push(y, Op::Normalize { x, eps })
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        nn::check_conv_input(self.value(x), &geom)?;
        if self.value(w).shape() != geom.weight_shape() {
            return Err(Error::shape("conv1d", "weight shape does not match geometry"));
        }
        let y = nn::conv1d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        Ok(self.push(y, Op::Conv { x, w, b, geom }))
    }

    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        nn::check_depthwise_input(self.value(x), self.value(w))?;
        let y = nn::depthwise_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), dilation);
        Ok(self.push(y, Op::Depthwise { x, w, b, dilation }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        nn::check_norm_input(self.value(x), self.value(gamma), self.value(beta))?;
        let (y, xhat, rstd) = nn::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = nn::gelu(self.value(x));
        self.push(y, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = nn::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    /// Squared distances from every frame to its `radius` neighbours on each side.
    pub fn neighbor_distances(&mut self, x: Var, radius: usize) -> Result<Var> {
        let y = tps::neighbor_distances(self.value(x), radius)?;
        Ok(self.push(y, Op::Distances { x, radius }))
    }

    /// Edge-renormalized Gaussian smoothing along time, channel by channel.
    pub fn gaussian_smooth(&mut self, x: Var, fps: f64) -> Var {
        let taps: Vec<S> = postprocess::gaussian_taps(fps).into_iter().map(S::lit).collect();
        let y = postprocess::smooth_columns(self.value(x), &taps);
        self.push(y, Op::Smooth { x, taps })
    }

    /// Mean binary cross-entropy of a `T × 1` prediction against `target`.
    pub fn bce_loss(&mut self, pred: Var, target: &[S]) -> Result<Var> {
        let p = self.value(pred);
        if p.cols() != 1 || p.rows() != target.len() {
            return Err(Error::shape(
                "bce_loss",
                format!("prediction {:?} vs {} targets", p.shape(), target.len()),
            ));
        }
        let loss = train::bce_forward(p.data(), target);
        Ok(self.push(
            SeqTensor::from_raw(1, 1, vec![loss]),
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<SeqTensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(SeqTensor::filled(1, 1, S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = tensor::mul(&g, self.value(*b))?;
                    let gb = tensor::mul(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, SeqTensor::filled(r, c, g.get(0, 0)));
                }
                Op::Concat(parts) => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
                    for (p, gp) in parts.iter().zip(tensor::split_channels(&g, &widths)?) {
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Normalize { x, eps } => {
                    let gx = tensor::l2_normalize_rows_backward(self.value(*x), &node.value, &g, *eps);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv { x, w, b, geom } => {
                    let (gx, gw, gb) = nn::conv1d_backward(self.value(*x), self.value(*w), &g, geom);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Depthwise { x, w, b, dilation } => {
                    let (gx, gw, gb) = nn::depthwise_backward(self.value(*x), self.value(*w), &g, *dilation);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (gx, gg, gb) = nn::layer_norm_backward(xhat, rstd, self.value(*gamma), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                }
                Op::Gelu(x) => {
                    let gx = nn::gelu_backward(self.value(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = nn::sigmoid_backward(&node.value, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Distances { x, radius } => {
                    let gx = tps::neighbor_distances_backward(self.value(*x), *radius, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Smooth { x, taps } => {
                    let gx = postprocess::smooth_columns_backward(&g, taps);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred);
                    let gx = train::bce_backward(p.data(), target, g.get(0, 0));
                    accumulate(&mut grads, *pred, SeqTensor::from_raw(p.rows(), 1, gx));
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                let (r, c) = node.value.shape();
                grads[i] = Some(SeqTensor::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<SeqTensor<S>>], v: Var, g: SeqTensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`GradTape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<SeqTensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Adjoint of `v`; always present for leaves.
    pub fn get(&self, v: Var) -> Option<&SeqTensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of a leaf. Panics if `v` is not a leaf of the differentiated tape.
    pub fn wrt(&self, v: Var) -> &SeqTensor<S> {
        self.get(v).expect("adjoint requested for a node outside the loss graph")
    }

    pub fn take(&mut self, v: Var) -> Option<SeqTensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
