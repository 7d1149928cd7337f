//! Sequential and parallel kernel pairs, exposed for the benchmark suite.
//! Not part of the public API; use [`Matrix::matmul`](crate::Matrix::matmul),
//! [`feedforward_layer`](crate::feedforward_layer) and
//! [`attention_layer`](crate::attention_layer) instead, which pick a kernel
//! themselves.

use crate::attention::MultiHead;
use crate::ffn::Mlp;
use crate::tensor::Matrix;

pub fn matmul_seq(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows(), "kernel caller must pre-validate shapes");
    crate::tensor::matmul_seq_impl(a, b)
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows(), "kernel caller must pre-validate shapes");
    crate::tensor::matmul_par_impl(a, b)
}

pub fn mlp_rows_seq(mlp: &Mlp, x: &Matrix) -> Matrix {
    assert_eq!(mlp.input_dim(), x.cols());
    crate::ffn::mlp_rows_seq_impl(mlp, x)
}

#[cfg(feature = "parallel")]
pub fn mlp_rows_par(mlp: &Mlp, x: &Matrix) -> Matrix {
    assert_eq!(mlp.input_dim(), x.cols());
    crate::ffn::mlp_rows_par_impl(mlp, x)
}

pub fn heads_sum_seq(heads: &MultiHead, x: &Matrix) -> Matrix {
    crate::attention::heads_sum_seq_impl(heads, x).expect("kernel caller must pre-validate shapes")
}

#[cfg(feature = "parallel")]
pub fn heads_sum_par(heads: &MultiHead, x: &Matrix) -> Matrix {
    crate::attention::heads_sum_par_impl(heads, x).expect("kernel caller must pre-validate shapes")
}
