//! Attention heads with factorized query-key and output-value matrices,
//! attention patterns, multi-head attention layers, and composition of
//! heads into virtual heads.
//!
//! A head is the map `X -> A(X) X W_OV^T` where the pattern
//! `A(X) = sm*(X W_QK X^T)` is the masked softmax of the bilinear scores
//! between row pairs. `W_QK = W_Q^T W_K` and `W_OV = W_O W_V` are cached at
//! assembly and treated as the head's identity; the four factors are kept
//! for serialization and rank checks. There is no score scaling by default;
//! a flag enables the conventional `1/sqrt(d_head)` factor.

use crate::error::{Error, Result};
use crate::tensor::{masked_softmax, Matrix, SoftmaxMode};

/// One attention head, immutable after assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    d: usize,
    d_head: usize,
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_o: Matrix,
    w_qk: Matrix,
    w_ov: Matrix,
    mode: SoftmaxMode,
    scaled: bool,
}

impl AttentionHead {
    /// Assembles a head from its four factor matrices. `W_Q`, `W_K`, `W_V`
    /// must be `d_head x d` and `W_O` must be `d x d_head`, with
    /// `d_head < d`.
    pub fn assemble(
        w_q: Matrix,
        w_k: Matrix,
        w_v: Matrix,
        w_o: Matrix,
        mode: SoftmaxMode,
        scaled: bool,
    ) -> Result<Self> {
        let d_head = w_q.rows();
        let d = w_q.cols();
        for (name, m) in [("W_K", &w_k), ("W_V", &w_v)] {
            if m.rows() != d_head || m.cols() != d {
                return Err(Error::Config(format!(
                    "{name} must be {d_head}x{d} like W_Q, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if w_o.rows() != d || w_o.cols() != d_head {
            return Err(Error::Config(format!(
                "W_O must be {d}x{d_head}, got {}x{}",
                w_o.rows(),
                w_o.cols()
            )));
        }
        if d_head >= d {
            return Err(Error::Config(format!(
                "head dimension {d_head} must be smaller than the model width {d}"
            )));
        }
        let w_qk = w_q.transpose().matmul(&w_k)?;
        let w_ov = w_o.matmul(&w_v)?;
        Ok(AttentionHead {
            d,
            d_head,
            w_q,
            w_k,
            w_v,
            w_o,
            w_qk,
            w_ov,
            mode,
            scaled,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    pub fn w_o(&self) -> &Matrix {
        &self.w_o
    }

    /// The assembled query-key matrix `W_Q^T W_K`.
    pub fn w_qk(&self) -> &Matrix {
        &self.w_qk
    }

    /// The assembled output-value matrix `W_O W_V`.
    pub fn w_ov(&self) -> &Matrix {
        &self.w_ov
    }

    pub fn mode(&self) -> SoftmaxMode {
        self.mode
    }

    pub fn scaled(&self) -> bool {
        self.scaled
    }

    /// Attention pattern `sm*(X W_QK X^T)`: the masked softmax of the
    /// bilinear score of every row pair.
    pub fn pattern(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d {
            return Err(Error::Shape(format!(
                "attention head of width {} applied to a matrix with {} columns",
                self.d,
                x.cols()
            )));
        }
        let mut scores = x.matmul(&self.w_qk)?.matmul(&x.transpose())?;
        if self.scaled {
            scores = scores.scale(1.0 / (self.d_head as f64).sqrt())?;
        }
        masked_softmax(&scores, self.mode)
    }

    /// Applies the head: `A(X) X W_OV^T`, shape `n x d`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.pattern(x)?.matmul(x)?.matmul(&self.w_ov.transpose())
    }
}

/// A nonempty set of heads sharing the same model width and head dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHead {
    heads: Vec<AttentionHead>,
}

impl MultiHead {
    pub fn new(heads: Vec<AttentionHead>) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::Config("multi-head needs at least one head".into()));
        };
        let (d, d_head) = (first.d, first.d_head);
        for (i, h) in heads.iter().enumerate() {
            if h.d != d || h.d_head != d_head {
                return Err(Error::Config(format!(
                    "head {i} has dimensions d={}, d_head={}, expected d={d}, d_head={d_head}",
                    h.d, h.d_head
                )));
            }
        }
        Ok(MultiHead { heads })
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one head
    }

    pub fn d(&self) -> usize {
        self.heads[0].d
    }

    pub fn d_head(&self) -> usize {
        self.heads[0].d_head
    }
}

/// Attention layer: `X + sum of h(X) over the heads`.
pub fn attention_layer(heads: &MultiHead, x: &Matrix) -> Result<Matrix> {
    if x.cols() != heads.d() {
        return Err(Error::Shape(format!(
            "attention layer of width {} applied to a matrix with {} columns",
            heads.d(),
            x.cols()
        )));
    }
    let sum = heads_sum_dispatch(heads, x)?;
    x.add(&sum)
}

pub(crate) fn heads_sum_seq_impl(heads: &MultiHead, x: &Matrix) -> Result<Matrix> {
    let mut total = Matrix::zeros(x.rows(), x.cols());
    for head in &heads.heads {
        total = total.add(&head.apply(x)?)?;
    }
    Ok(total)
}

#[cfg(feature = "parallel")]
pub(crate) fn heads_sum_par_impl(heads: &MultiHead, x: &Matrix) -> Result<Matrix> {
    use rayon::prelude::*;
    // evaluate heads in parallel, then fold in head order so the floating
    // point result is identical to the sequential path
    let outputs: Vec<Result<Matrix>> = heads.heads.par_iter().map(|h| h.apply(x)).collect();
    let mut total = Matrix::zeros(x.rows(), x.cols());
    for out in outputs {
        total = total.add(&out?)?;
    }
    Ok(total)
}

fn heads_sum_dispatch(heads: &MultiHead, x: &Matrix) -> Result<Matrix> {
    #[cfg(feature = "parallel")]
    {
        let (n, d) = (x.rows(), x.cols());
        let per_head = n * d * (n + d); // score and output products dominate
        if heads.len() >= 2 && heads.len() * per_head >= crate::tensor::PAR_MIN_FLOPS {
            return heads_sum_par_impl(heads, x);
        }
    }
    heads_sum_seq_impl(heads, x)
}

/// The product of one or more heads, which acts like a head with the
/// composed output-value matrix once the constituent patterns are fixed.
///
/// Stores the ordered list of constituent output-value matrices and their
/// product; the patterns are supplied at application time because they
/// depend on the input nonlinearly.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualHead {
    d: usize,
    ov_factors: Vec<Matrix>,
    w_ov: Matrix,
}

impl VirtualHead {
    /// Generalized single-factor head with an arbitrary square
    /// output-value matrix.
    pub fn from_ov(w_ov: Matrix) -> Result<Self> {
        if w_ov.rows() != w_ov.cols() {
            return Err(Error::Config(format!(
                "output-value matrix must be square, got {}x{}",
                w_ov.rows(),
                w_ov.cols()
            )));
        }
        Ok(VirtualHead {
            d: w_ov.rows(),
            ov_factors: vec![w_ov.clone()],
            w_ov,
        })
    }

    /// Composes `self` after `other`: the result's output-value matrix is
    /// `self.w_ov * other.w_ov` and the factor lists concatenate.
    pub fn compose(&self, other: &VirtualHead) -> Result<VirtualHead> {
        if self.d != other.d {
            return Err(Error::Config(format!(
                "cannot compose heads of widths {} and {}",
                self.d, other.d
            )));
        }
        let w_ov = self.w_ov.matmul(&other.w_ov)?;
        let mut ov_factors = self.ov_factors.clone();
        ov_factors.extend(other.ov_factors.iter().cloned());
        Ok(VirtualHead {
            d: self.d,
            ov_factors,
            w_ov,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Output-value matrices of the constituents, outermost first.
    pub fn ov_factors(&self) -> &[Matrix] {
        &self.ov_factors
    }

    /// The composed output-value matrix.
    pub fn w_ov(&self) -> &Matrix {
        &self.w_ov
    }

    /// Applies the virtual head under fixed patterns, one per factor:
    /// `(A_1 A_2 ... A_k) X w_ov^T`.
    pub fn apply_with_patterns(&self, patterns: &[Matrix], x: &Matrix) -> Result<Matrix> {
        if patterns.len() != self.ov_factors.len() {
            return Err(Error::Config(format!(
                "virtual head of {} factors given {} patterns",
                self.ov_factors.len(),
                patterns.len()
            )));
        }
        if x.cols() != self.d {
            return Err(Error::Shape(format!(
                "virtual head of width {} applied to a matrix with {} columns",
                self.d,
                x.cols()
            )));
        }
        let n = x.rows();
        let mut combined = Matrix::identity(n);
        for (i, a) in patterns.iter().enumerate() {
            if a.rows() != n || a.cols() != n {
                return Err(Error::Shape(format!(
                    "pattern {i} must be {n}x{n}, got {}x{}",
                    a.rows(),
                    a.cols()
                )));
            }
            combined = combined.matmul(a)?;
        }
        combined.matmul(x)?.matmul(&self.w_ov.transpose())
    }
}

impl From<&AttentionHead> for VirtualHead {
    fn from(head: &AttentionHead) -> Self {
        VirtualHead {
            d: head.d,
            ov_factors: vec![head.w_ov.clone()],
            w_ov: head.w_ov.clone(),
        }
    }
}

/// Composes two heads (real or virtual) into a virtual head.
pub fn compose_heads(h1: impl Into<VirtualHead>, h2: impl Into<VirtualHead>) -> Result<VirtualHead> {
    h1.into().compose(&h2.into())
}
