//! Independent oracles shared by the integration tests. Everything here
//! recomputes results from first principles, without reusing the library's
//! evaluation paths.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tinygpt::Matrix;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Reference BPE trainer: recounts every adjacent pair from scratch each
/// iteration and rebuilds the stream with a fresh vector. Ties break to the
/// pair whose first occurrence in the current stream is earliest.
pub fn bruteforce_bpe_merges(
    corpus: &[String],
    alphabet: &BTreeSet<char>,
    n_vocab: usize,
) -> Vec<(usize, usize)> {
    const EOW: usize = 0;
    const EOA: usize = 1;
    let char_id: HashMap<char, usize> = alphabet
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i + 2))
        .collect();

    let mut stream: Vec<usize> = Vec::new();
    for (index, artefact) in corpus.iter().enumerate() {
        if index > 0 {
            stream.push(EOA);
        }
        for word in artefact.split_whitespace() {
            for ch in word.chars() {
                stream.push(char_id[&ch]);
            }
            stream.push(EOW);
        }
    }

    let mut merges = Vec::new();
    let mut next_id = 2 + alphabet.len();
    while next_id < n_vocab {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        let mut first_at: HashMap<(usize, usize), usize> = HashMap::new();
        for i in 0..stream.len().saturating_sub(1) {
            let pair = (stream[i], stream[i + 1]);
            if pair.0 != EOW && pair.0 != EOA && pair.1 != EOW && pair.1 != EOA {
                *counts.entry(pair).or_insert(0) += 1;
                first_at.entry(pair).or_insert(i);
            }
        }
        let Some(&max_count) = counts.values().max() else {
            break;
        };
        let best = counts
            .iter()
            .filter(|&(_, &c)| c == max_count)
            .map(|(&pair, _)| (first_at[&pair], pair))
            .min()
            .map(|(_, pair)| pair)
            .expect("at least one candidate");

        let mut rebuilt = Vec::with_capacity(stream.len());
        let mut i = 0;
        while i < stream.len() {
            if i + 1 < stream.len() && (stream[i], stream[i + 1]) == best {
                rebuilt.push(next_id);
                i += 2;
            } else {
                rebuilt.push(stream[i]);
                i += 1;
            }
        }
        stream = rebuilt;
        merges.push(best);
        next_id += 1;
    }
    merges
}

/// Numerical rank by Gaussian elimination with partial pivoting; a pivot
/// counts if its magnitude exceeds the tolerance.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    let mut a = m.to_rows();
    let (rows, cols) = (m.rows(), m.cols());
    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row == rows {
            break;
        }
        let mut best = pivot_row;
        for r in pivot_row + 1..rows {
            if a[r][col].abs() > a[best][col].abs() {
                best = r;
            }
        }
        if a[best][col].abs() <= tol {
            continue;
        }
        a.swap(pivot_row, best);
        let pivot = a[pivot_row].clone();
        for row in a.iter_mut().skip(pivot_row + 1) {
            let factor = row[col] / pivot[col];
            for (entry, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *entry -= factor * p;
            }
        }
        rank += 1;
        pivot_row += 1;
    }
    rank
}

/// Applies `A (x) W` to `X` by materializing the full Kronecker-product
/// matrix and letting it act on the row-major flattening of `X`: the
/// literal tensor-product reading of the attention head formula.
pub fn kronecker_apply(a: &Matrix, w: &Matrix, x: &Matrix) -> Matrix {
    let n = a.rows();
    let d = w.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(w.cols(), d);
    assert_eq!((x.rows(), x.cols()), (n, d));

    let flat: Vec<f64> = x.data().to_vec();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for r in 0..d {
            let mut acc = 0.0;
            for j in 0..n {
                for c in 0..d {
                    acc += a.get(i, j) * w.get(r, c) * flat[j * d + c];
                }
            }
            out[i * d + r] = acc;
        }
    }
    Matrix::from_fn(n, d, |i, r| out[i * d + r])
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
