//! Straight-line reimplementation of the whole forward pipeline for the
//! end-to-end oracle. Reads the model file with raw JSON values and shares
//! no code with the library: its own embedding lookup, factor-by-factor
//! attention (project, mix, output), unstabilized masked softmax, MLP
//! recursion and final softmax.

use serde_json::Value;

type Mat = Vec<Vec<f64>>;

fn mat(v: &Value) -> Mat {
    v.as_array()
        .expect("matrix is an array of rows")
        .iter()
        .map(|row| {
            row.as_array()
                .expect("row is an array")
                .iter()
                .map(|x| x.as_f64().expect("entry is a number"))
                .collect()
        })
        .collect()
}

fn vecf(v: &Value) -> Vec<f64> {
    v.as_array()
        .expect("vector is an array")
        .iter()
        .map(|x| x.as_f64().expect("entry is a number"))
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Next-token probabilities for the given ids, computed from the model
/// file alone. Assumes the paper-global masked softmax, gelu activation,
/// untied embeddings and no score scaling.
pub fn next_token_probs(model_json: &str, ids: &[usize]) -> Vec<f64> {
    let v: Value = serde_json::from_str(model_json).expect("valid model JSON");
    let d = v["config"]["d"].as_u64().unwrap() as usize;
    assert_eq!(v["config"]["softmax_mode"].as_str().unwrap(), "paper");
    assert_eq!(v["config"]["activation"].as_str().unwrap(), "gelu");
    assert!(!v["config"]["tied"].as_bool().unwrap());
    assert!(!v["config"]["attention_scale"].as_bool().unwrap());

    let w_e = mat(&v["tensors"]["W_E"]); // d x n_vocab
    let w_u = mat(&v["tensors"]["W_U"]); // n_vocab x d
    let p = mat(&v["tensors"]["P"]); // n_ctx x d

    let n = ids.len();
    let mut x: Mat = (0..n)
        .map(|i| (0..d).map(|j| w_e[j][ids[i]] + p[i][j]).collect())
        .collect();

    for block in v["tensors"]["blocks"].as_array().unwrap() {
        // attention layer: x + sum over heads
        let mut attn = x.clone();
        for head in block["heads"].as_array().unwrap() {
            let w_q = mat(&head["W_Q"]); // d_head x d
            let w_k = mat(&head["W_K"]);
            let w_v = mat(&head["W_V"]);
            let w_o = mat(&head["W_O"]); // d x d_head
            let d_head = w_q.len();

            // scores from the projected vectors: (W_Q x_i) . (W_K x_j)
            let project = |w: &Mat, row: &[f64]| -> Vec<f64> {
                w.iter()
                    .map(|wr| wr.iter().zip(row).map(|(a, b)| a * b).sum())
                    .collect()
            };
            let queries: Vec<Vec<f64>> = x.iter().map(|r| project(&w_q, r)).collect();
            let keys: Vec<Vec<f64>> = x.iter().map(|r| project(&w_k, r)).collect();
            let values: Vec<Vec<f64>> = x.iter().map(|r| project(&w_v, r)).collect();

            let scores: Vec<Vec<f64>> = queries
                .iter()
                .map(|q| {
                    keys.iter()
                        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum())
                        .collect()
                })
                .collect();

            // global masked softmax, direct formula
            let mut denom = 0.0;
            for (i, row) in scores.iter().enumerate() {
                for s in &row[..=i] {
                    denom += s.exp();
                }
            }
            let mut pattern = vec![vec![0.0; n]; n];
            for (i, row) in scores.iter().enumerate() {
                for (j, s) in row[..=i].iter().enumerate() {
                    pattern[i][j] = s.exp() / denom;
                }
            }

            // mix values by the pattern, then apply the output projection
            for i in 0..n {
                let mut mixed = vec![0.0; d_head];
                for j in 0..n {
                    for r in 0..d_head {
                        mixed[r] += pattern[i][j] * values[j][r];
                    }
                }
                for (q, w_row) in attn[i].iter_mut().zip(&w_o) {
                    *q += w_row.iter().zip(&mixed).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }

        // feedforward layer: attn + mlp(attn) row by row
        let weights: Vec<Mat> = block["mlp"]["weights"]
            .as_array()
            .unwrap()
            .iter()
            .map(mat)
            .collect();
        let biases: Vec<Vec<f64>> = block["mlp"]["biases"]
            .as_array()
            .unwrap()
            .iter()
            .map(vecf)
            .collect();
        let depth = weights.len();

        let mut out = attn.clone();
        for (row_out, row_in) in out.iter_mut().zip(&attn) {
            let mut a = row_in.clone();
            for l in 0..depth {
                let mut z = biases[l].clone();
                for (zi, w_row) in z.iter_mut().zip(&weights[l]) {
                    *zi += w_row.iter().zip(&a).map(|(w, t)| w * t).sum::<f64>();
                }
                a = if l + 1 < depth {
                    z.into_iter().map(gelu).collect()
                } else {
                    z
                };
            }
            for (o, m) in row_out.iter_mut().zip(&a) {
                *o += m;
            }
        }
        x = out;
    }

    // unembed the last row and softmax it
    let last = &x[n - 1];
    let logits: Vec<f64> = w_u
        .iter()
        .map(|row| row.iter().zip(last).map(|(a, b)| a * b).sum())
        .collect();
    let denom: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / denom).collect()
}
