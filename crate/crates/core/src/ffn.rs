//! Feedforward networks: evaluation of a general feed-forward network on a
//! directed acyclic graph, the fully-connected multi-layer perceptron as
//! its layered special case, and the residual feedforward layer that maps
//! `X` to `X + m(X)` row by row.
//!
//! Vertex classification follows the graph: inputs have no incoming edges,
//! outputs no outgoing edges, and everything else is hidden. Input vertices
//! pass their coordinate through unchanged, hidden vertices apply their
//! activation, and the network's value is the preactivation at the output
//! vertices (no activation at the final layer).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Scalar activation functions, applied component-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// tanh approximation of the Gaussian error linear unit
    Gelu,
    Identity,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu, gelu, identity or tanh)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum VertexSpec {
    /// Input vertex carrying coordinate `index` of the network input.
    Input { index: usize },
    Hidden { activation: Activation, bias: f64 },
    Output { bias: f64 },
}

/// Incrementally assembles a [`DagNetwork`]; `build` validates the graph.
#[derive(Default)]
pub struct DagNetworkBuilder {
    vertices: Vec<VertexSpec>,
    edges: Vec<(usize, usize, f64)>,
    n_inputs: usize,
}

impl DagNetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the next input vertex (inputs are ordered by insertion).
    pub fn input(&mut self) -> usize {
        let id = self.vertices.len();
        self.vertices.push(VertexSpec::Input {
            index: self.n_inputs,
        });
        self.n_inputs += 1;
        id
    }

    pub fn hidden(&mut self, activation: Activation, bias: f64) -> usize {
        let id = self.vertices.len();
        self.vertices.push(VertexSpec::Hidden { activation, bias });
        id
    }

    /// Adds the next output vertex (outputs are ordered by insertion).
    pub fn output(&mut self, bias: f64) -> usize {
        let id = self.vertices.len();
        self.vertices.push(VertexSpec::Output { bias });
        id
    }

    pub fn edge(&mut self, from: usize, to: usize, weight: f64) -> &mut Self {
        self.edges.push((from, to, weight));
        self
    }

    pub fn build(self) -> Result<DagNetwork> {
        let n = self.vertices.len();
        let cfg = |msg: String| Err(Error::Config(msg));

        for spec in &self.vertices {
            let bias = match spec {
                VertexSpec::Input { .. } => continue,
                VertexSpec::Hidden { bias, .. } | VertexSpec::Output { bias } => *bias,
            };
            if !bias.is_finite() {
                return Err(Error::NonFinite {
                    context: "network bias".into(),
                });
            }
        }

        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut out_degree = vec![0usize; n];
        let mut seen = std::collections::HashSet::new();
        for &(from, to, weight) in &self.edges {
            if from >= n || to >= n {
                return cfg(format!("edge ({from}, {to}) references an unknown vertex"));
            }
            if !weight.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("weight of edge ({from}, {to})"),
                });
            }
            if !seen.insert((from, to)) {
                return cfg(format!("duplicate edge ({from}, {to})"));
            }
            incoming[to].push((from, weight));
            out_degree[from] += 1;
        }

        let mut input_ids = Vec::new();
        let mut output_ids = Vec::new();
        for (v, spec) in self.vertices.iter().enumerate() {
            let (in_deg, out_deg) = (incoming[v].len(), out_degree[v]);
            match spec {
                VertexSpec::Input { .. } => {
                    if in_deg > 0 {
                        return cfg(format!("input vertex {v} has incoming edges"));
                    }
                    if out_deg == 0 {
                        return cfg(format!("input vertex {v} has no edges"));
                    }
                    input_ids.push(v);
                }
                VertexSpec::Output { .. } => {
                    if out_deg > 0 {
                        return cfg(format!("output vertex {v} has outgoing edges"));
                    }
                    if in_deg == 0 {
                        return cfg(format!("output vertex {v} has no edges"));
                    }
                    output_ids.push(v);
                }
                VertexSpec::Hidden { .. } => {
                    if in_deg == 0 || out_deg == 0 {
                        return cfg(format!(
                            "hidden vertex {v} must have incoming and outgoing edges"
                        ));
                    }
                }
            }
        }
        if input_ids.is_empty() {
            return cfg("network has no input vertices".into());
        }
        if output_ids.is_empty() {
            return cfg("network has no output vertices".into());
        }

        // Kahn's algorithm, smallest vertex id first, as the canonical order.
        let mut remaining: Vec<usize> = incoming.iter().map(Vec::len).collect();
        let mut topo = Vec::with_capacity(n);
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&v| remaining[v] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (to, ins) in incoming.iter().enumerate() {
            for &(from, _) in ins {
                succ[from].push(to);
            }
        }
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            topo.push(v);
            for &next in &succ[v] {
                remaining[next] -= 1;
                if remaining[next] == 0 {
                    ready.push(std::cmp::Reverse(next));
                }
            }
        }
        if topo.len() != n {
            return cfg("network graph contains a cycle".into());
        }

        Ok(DagNetwork {
            vertices: self.vertices,
            incoming,
            input_ids,
            output_ids,
            topo,
        })
    }
}

/// A feed-forward network on an arbitrary DAG with per-vertex activations,
/// weights and biases. Immutable once built.
#[derive(Clone, Debug)]
pub struct DagNetwork {
    vertices: Vec<VertexSpec>,
    incoming: Vec<Vec<(usize, f64)>>,
    input_ids: Vec<usize>,
    output_ids: Vec<usize>,
    topo: Vec<usize>,
}

impl DagNetwork {
    pub fn input_dim(&self) -> usize {
        self.input_ids.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_ids.len()
    }

    /// Evaluates the network: preactivations at the output vertices, in
    /// output order.
    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Vector::new(self.eval_in_order(x.as_slice(), &self.topo))
    }

    /// Evaluation under an explicit vertex order; the order must be
    /// topological for the result to be meaningful. Used to check that the
    /// result does not depend on which valid order is chosen.
    pub(crate) fn eval_in_order(&self, x: &[f64], order: &[usize]) -> Vec<f64> {
        debug_assert_eq!(order.len(), self.vertices.len());
        let mut value = vec![0.0; self.vertices.len()];
        for &v in order {
            let weighted_sum = |value: &[f64]| -> f64 {
                self.incoming[v]
                    .iter()
                    .map(|&(src, w)| w * value[src])
                    .sum()
            };
            value[v] = match &self.vertices[v] {
                VertexSpec::Input { index } => x[*index],
                VertexSpec::Hidden { activation, bias } => {
                    activation.apply(bias + weighted_sum(&value))
                }
                VertexSpec::Output { bias } => bias + weighted_sum(&value),
            };
        }
        self.output_ids.iter().map(|&o| value[o]).collect()
    }
}

/// Fully-connected multi-layer perceptron: weight matrices `W(1)..W(L)`,
/// bias vectors, and one shared activation. The value is the final-layer
/// preactivation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    activation: Activation,
}

impl Mlp {
    pub fn new(weights: Vec<Matrix>, biases: Vec<Vector>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        if biases.len() != weights.len() {
            return Err(Error::Config(format!(
                "MLP has {} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for l in 1..weights.len() {
            if weights[l].cols() != weights[l - 1].rows() {
                return Err(Error::Config(format!(
                    "MLP layer {} expects {} inputs but layer {} produces {}",
                    l + 1,
                    weights[l].cols(),
                    l,
                    weights[l - 1].rows()
                )));
            }
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if b.len() != w.rows() {
                return Err(Error::Config(format!(
                    "MLP layer {} has {} rows but a bias of length {}",
                    l + 1,
                    w.rows(),
                    b.len()
                )));
            }
        }
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    /// All-zero MLP with the given layer widths `n_0..n_L`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("MLP widths must list n_0..n_L".into()));
        }
        let weights = widths
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = widths[1..].iter().map(|&n| Vector::zeros(n)).collect();
        Mlp::new(weights, biases, activation)
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Layer widths `n_0..n_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].cols()];
        w.extend(self.weights.iter().map(Matrix::rows));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    /// Layered evaluation: `z(l+1) = b(l+1) + W(l+1) σ(z(l))` with the
    /// inputs passed through unchanged and no activation at the output.
    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Vector::new(self.eval_slice(x.as_slice()))
    }

    pub(crate) fn eval_slice(&self, x: &[f64]) -> Vec<f64> {
        let depth = self.depth();
        let mut a: Vec<f64> = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: Vec<f64> = b.as_slice().to_vec();
            for (zi, row) in z.iter_mut().zip(w.iter_rows()) {
                *zi += row.iter().zip(&a).map(|(wij, aj)| wij * aj).sum::<f64>();
            }
            if l + 1 < depth {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        a
    }

    /// The same parameters as a general DAG network: layered, fully
    /// connected, shared activation at the hidden vertices.
    pub fn to_dag(&self) -> DagNetwork {
        let depth = self.depth();
        let mut builder = DagNetworkBuilder::new();
        let mut prev: Vec<usize> = (0..self.input_dim()).map(|_| builder.input()).collect();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let layer: Vec<usize> = (0..w.rows())
                .map(|i| {
                    if l + 1 == depth {
                        builder.output(b.get(i))
                    } else {
                        builder.hidden(self.activation, b.get(i))
                    }
                })
                .collect();
            for (i, &to) in layer.iter().enumerate() {
                for (j, &from) in prev.iter().enumerate() {
                    builder.edge(from, to, w.get(i, j));
                }
            }
            prev = layer;
        }
        builder
            .build()
            .expect("a fully-connected MLP always induces a valid DAG")
    }
}

/// Residual feedforward layer: `X + m(X)` with the MLP applied to each row
/// independently. Requires `n_0 == n_L == X.cols`.
pub fn feedforward_layer(mlp: &Mlp, x: &Matrix) -> Result<Matrix> {
    if mlp.input_dim() != mlp.output_dim() {
        return Err(Error::Shape(format!(
            "feedforward layer needs matching input/output widths, got {} and {}",
            mlp.input_dim(),
            mlp.output_dim()
        )));
    }
    if x.cols() != mlp.input_dim() {
        return Err(Error::Shape(format!(
            "feedforward layer of width {} applied to a matrix with {} columns",
            mlp.input_dim(),
            x.cols()
        )));
    }
    let m_of_x = mlp_rows_dispatch(mlp, x);
    x.add(&m_of_x)
}

pub(crate) fn mlp_rows_seq_impl(mlp: &Mlp, x: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(x.rows() * mlp.output_dim());
    for row in x.iter_rows() {
        data.extend(mlp.eval_slice(row));
    }
    Matrix::from_raw(x.rows(), mlp.output_dim(), data)
}

#[cfg(feature = "parallel")]
pub(crate) fn mlp_rows_par_impl(mlp: &Mlp, x: &Matrix) -> Matrix {
    use rayon::prelude::*;
    let out_dim = mlp.output_dim();
    let mut data = vec![0.0; x.rows() * out_dim];
    data.par_chunks_mut(out_dim)
        .enumerate()
        .for_each(|(i, out)| out.copy_from_slice(&mlp.eval_slice(x.row(i))));
    Matrix::from_raw(x.rows(), out_dim, data)
}

fn mlp_rows_dispatch(mlp: &Mlp, x: &Matrix) -> Matrix {
    #[cfg(feature = "parallel")]
    {
        let per_row: usize = mlp.weights.iter().map(|w| w.rows() * w.cols()).sum();
        if x.rows() * per_row >= crate::tensor::PAR_MIN_FLOPS {
            return mlp_rows_par_impl(mlp, x);
        }
    }
    mlp_rows_seq_impl(mlp, x)
}
