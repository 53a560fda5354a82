//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Only the operators the message-passing model needs are provided: affine
//! layers, leaky ReLU, column concatenation, row gathering and segmented
//! max aggregation. Losses are computed outside the tape and enter
//! [`Tape::backward`] as seed gradients on their input variables.

mod check;
mod loss;
mod optim;
mod params;

pub use check::grad_check;
pub use loss::{focal_loss, sigmoid};
pub use optim::{optimizer_step, CosineRestarts, OptimizerState, RAdamConfig};
pub use params::{Layer, LayerGrad, LayerId, ParamGrads, ParameterSet};

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row groups for segmented aggregation, stored as offsets into a row list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segments {
    offsets: Vec<usize>,
    rows: Vec<usize>,
}

impl Segments {
    /// Build from `(segment, row)` memberships; rows keep their insertion
    /// order within a segment.
    pub fn from_pairs(n_segments: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        let mut counts = vec![0usize; n_segments + 1];
        for &(seg, _) in &pairs {
            if seg >= n_segments {
                return Err(Error::IndexOutOfRange {
                    index: seg,
                    len: n_segments,
                });
            }
            counts[seg + 1] += 1;
        }
        for i in 0..n_segments {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut rows = vec![0usize; pairs.len()];
        for (seg, row) in pairs {
            rows[fill[seg]] = row;
            fill[seg] += 1;
        }
        Ok(Self {
            offsets: counts,
            rows,
        })
    }

    /// One segment per entry of `groups`.
    pub fn from_groups(groups: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut rows = Vec::new();
        offsets.push(0);
        for g in groups {
            rows.extend_from_slice(g);
            offsets.push(rows.len());
        }
        Self { offsets, rows }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, s: usize) -> &[usize] {
        &self.rows[self.offsets[s]..self.offsets[s + 1]]
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Affine { x: Var, layer: LayerId },
    LeakyRelu { x: Var, slope: f64 },
    Concat { parts: Vec<Var> },
    Gather { x: Var, idx: Vec<usize> },
    /// `argmax[s * cols + c]` is the winning source row, `usize::MAX` when the
    /// segment is empty.
    SegmentMax { x: Var, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation against a borrowed parameter set.
pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    pub params: ParamGrads,
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(Matrix::zeros((rows, cols)))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, layer: LayerId) -> Result<Var> {
        let l = self.params.layer(layer);
        let xv = self.value(x);
        if xv.ncols() != l.weight.nrows() {
            return Err(Error::Shape {
                op: "affine",
                lhs: xv.dim(),
                rhs: l.weight.dim(),
            });
        }
        let mut y = xv.dot(&l.weight);
        y += &l.bias;
        Ok(self.push(y, Op::Affine { x, layer }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(y, Op::LeakyRelu { x, slope })
    }

    /// Concatenate along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidInput("empty concat".into()))?;
        let rows = self.value(*first).nrows();
        for p in parts {
            let d = self.value(*p).dim();
            if d.0 != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(*first).dim(),
                    rhs: d,
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let y = concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Select rows by index (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.nrows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let y = xv.select(Axis(0), idx);
        Ok(self.push(
            y,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Column-wise maximum of each segment's rows; empty segments give zeros.
    /// Ties resolve to the first listed row.
    pub fn segment_max(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        if let Some(&bad) = segments.rows.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let n_seg = segments.len();
        let mut y = Matrix::zeros((n_seg, d));
        let mut argmax = vec![usize::MAX; n_seg * d];
        for s in 0..n_seg {
            let rows = segments.segment(s);
            let Some((&r0, rest)) = rows.split_first() else {
                continue;
            };
            let mut out = y.row_mut(s);
            out.assign(&xv.row(r0));
            let am = &mut argmax[s * d..(s + 1) * d];
            am.fill(r0);
            for &r in rest {
                for (c, &v) in xv.row(r).iter().enumerate() {
                    if v > out[c] {
                        out[c] = v;
                        am[c] = r;
                    }
                }
            }
        }
        Ok(self.push(y, Op::SegmentMax { x, argmax }))
    }

    /// Propagate seed gradients back through the tape.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let dim = self.value(*v).dim();
            if g.dim() != dim {
                return Err(Error::Shape {
                    op: "backward seed",
                    lhs: dim,
                    rhs: g.dim(),
                });
            }
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut pgrads = ParamGrads::zeros_like(self.params);
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Affine { x, layer } => {
                    let l = self.params.layer(*layer);
                    let xv = self.value(*x);
                    let lg = &mut pgrads.layers[layer.0];
                    lg.weight += &xv.t().dot(&g);
                    lg.bias += &g.sum_axis(Axis(0));
                    accumulate(&mut grads[x.0], g.dot(&l.weight.t()));
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    dx.zip_mut_with(xv, |d, &v| {
                        if v <= 0.0 {
                            *d *= slope;
                        }
                    });
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat { parts } => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., c0..c0 + w]).to_owned());
                        c0 += w;
                    }
                }
                Op::Gather { x, idx } => {
                    let mut dx = Matrix::zeros(self.value(*x).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = dx.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SegmentMax { x, argmax } => {
                    let mut dx = Matrix::zeros(self.value(*x).dim());
                    let d = g.ncols();
                    for ((s, c), &gv) in g.indexed_iter() {
                        let r = argmax[s * d + c];
                        if r != usize::MAX {
                            dx[(r, c)] += gv;
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            params: pgrads,
            nodes: grads,
        })
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}
