//! The assembled decoder model: token embedding, learned additive
//! positional matrix, a stack of residual blocks, unembedding, next-token
//! prediction and autoregressive generation.
//!
//! No layer normalization, no dropout, no biases in attention. Short
//! contexts use the first `n` rows of the positional matrix; generation
//! past the context window drops the oldest token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{attention_layer, AttentionHead, MultiHead};
use crate::error::{Error, Result};
use crate::ffn::{feedforward_layer, Activation, Mlp};
use crate::tensor::{softmax_vector, Matrix, SoftmaxMode, Vector};
use crate::tokenizer::{BpeModel, TokenId, TokenMatrix};

/// Architecture hyperparameters; the shapes of every tensor follow from
/// these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_vocab: usize,
    pub n_ctx: usize,
    /// Model width `d < n_vocab`.
    pub d: usize,
    /// Attention head dimension, below `d`.
    pub d_head: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Number of MLP layers `L` in each block.
    pub mlp_depth: usize,
    /// Width of the hidden MLP layers (unused when `mlp_depth` is 1).
    pub mlp_hidden: usize,
    pub activation: Activation,
    pub softmax_mode: SoftmaxMode,
    /// Unembedding tied to the transpose of the embedding.
    pub tied: bool,
    /// Divide attention scores by sqrt(d_head); off reproduces the plain
    /// formulation.
    #[serde(default)]
    pub attention_scale: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 8] = [
            ("n_vocab", self.n_vocab),
            ("n_ctx", self.n_ctx),
            ("d", self.d),
            ("d_head", self.d_head),
            ("n_heads", self.n_heads),
            ("n_blocks", self.n_blocks),
            ("mlp_depth", self.mlp_depth),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d >= self.n_vocab {
            return Err(Error::Config(format!(
                "model width d = {} must be smaller than n_vocab = {}",
                self.d, self.n_vocab
            )));
        }
        if self.d_head >= self.d {
            return Err(Error::Config(format!(
                "d_head = {} must be smaller than d = {}",
                self.d_head, self.d
            )));
        }
        Ok(())
    }

    /// MLP layer widths `n_0..n_L` used in every block.
    pub fn mlp_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.d];
        widths.extend(std::iter::repeat_n(self.mlp_hidden, self.mlp_depth - 1));
        widths.push(self.d);
        widths
    }

    /// Trainable parameter count implied by the configuration: embedding,
    /// unembedding (when untied), positional matrix, head factors and MLP
    /// weights and biases.
    pub fn parameter_count(&self) -> usize {
        let embed = self.d * self.n_vocab;
        let unembed = if self.tied { 0 } else { self.n_vocab * self.d };
        let positional = self.n_ctx * self.d;
        let per_head = 3 * self.d_head * self.d + self.d * self.d_head;
        let widths = self.mlp_widths();
        let mlp: usize = widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum();
        embed + unembed + positional + self.n_blocks * (self.n_heads * per_head + mlp)
    }
}

/// One attention-plus-feedforward unit: `B(X) = X + m(X + sum_h h(X))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    heads: MultiHead,
    mlp: Mlp,
}

impl ResidualBlock {
    pub fn new(heads: MultiHead, mlp: Mlp) -> Result<Self> {
        let d = heads.d();
        if mlp.input_dim() != d || mlp.output_dim() != d {
            return Err(Error::Config(format!(
                "block MLP must map width {d} to itself, got {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(ResidualBlock { heads, mlp })
    }

    pub fn heads(&self) -> &MultiHead {
        &self.heads
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Feedforward layer composed after the attention layer.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        feedforward_layer(&self.mlp, &attention_layer(&self.heads, x)?)
    }
}

/// A point of the parameter space: embedding, unembedding, positional
/// matrix and the residual blocks. Immutable after construction; forward
/// passes are pure.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    config: ModelConfig,
    w_e: Matrix,
    w_u: Matrix,
    positional: Matrix,
    blocks: Vec<ResidualBlock>,
}

impl TransformerModel {
    /// Builds a model from explicit tensors, validating every shape
    /// against the configuration. Tied models must pass `w_u: None`; the
    /// unembedding is materialized as the embedding's transpose.
    pub fn new(
        config: ModelConfig,
        w_e: Matrix,
        w_u: Option<Matrix>,
        positional: Matrix,
        blocks: Vec<ResidualBlock>,
    ) -> Result<Self> {
        config.validate()?;
        if w_e.rows() != config.d || w_e.cols() != config.n_vocab {
            return Err(Error::Shape(format!(
                "W_E must be {}x{}, got {}x{}",
                config.d,
                config.n_vocab,
                w_e.rows(),
                w_e.cols()
            )));
        }
        let w_u = match (config.tied, w_u) {
            (true, None) => w_e.transpose(),
            (true, Some(_)) => {
                return Err(Error::Config(
                    "tied model must not carry a separate unembedding".into(),
                ))
            }
            (false, Some(m)) => {
                if m.rows() != config.n_vocab || m.cols() != config.d {
                    return Err(Error::Shape(format!(
                        "W_U must be {}x{}, got {}x{}",
                        config.n_vocab,
                        config.d,
                        m.rows(),
                        m.cols()
                    )));
                }
                m
            }
            (false, None) => {
                return Err(Error::Config(
                    "untied model needs an unembedding matrix".into(),
                ))
            }
        };
        if positional.rows() != config.n_ctx || positional.cols() != config.d {
            return Err(Error::Shape(format!(
                "P must be {}x{}, got {}x{}",
                config.n_ctx,
                config.d,
                positional.rows(),
                positional.cols()
            )));
        }
        if blocks.len() != config.n_blocks {
            return Err(Error::Config(format!(
                "expected {} blocks, got {}",
                config.n_blocks,
                blocks.len()
            )));
        }
        let widths = config.mlp_widths();
        for (i, block) in blocks.iter().enumerate() {
            if block.heads.d() != config.d
                || block.heads.d_head() != config.d_head
                || block.heads.len() != config.n_heads
            {
                return Err(Error::Config(format!(
                    "block {i} heads do not match the configuration"
                )));
            }
            if block.mlp.widths() != widths {
                return Err(Error::Config(format!(
                    "block {i} MLP widths {:?} do not match the configuration {:?}",
                    block.mlp.widths(),
                    widths
                )));
            }
            for (h, head) in block.heads.heads().iter().enumerate() {
                if head.mode() != config.softmax_mode || head.scaled() != config.attention_scale {
                    return Err(Error::Config(format!(
                        "block {i} head {h} disagrees with the configured softmax mode"
                    )));
                }
            }
            if block.mlp.activation() != config.activation {
                return Err(Error::Config(format!(
                    "block {i} MLP activation disagrees with the configuration"
                )));
            }
        }
        Ok(TransformerModel {
            config,
            w_e,
            w_u,
            positional,
            blocks,
        })
    }

    /// Deterministic pseudo-random initialization: weights from
    /// `Normal(0, 0.02^2)`, positional entries from `Normal(0, 0.01^2)`,
    /// biases zero. The draw order is fixed (embedding, unembedding when
    /// untied, positional, then per block: head factors Q/K/V/O then MLP
    /// weights), so the same config and seed rebuild the same model
    /// bit for bit.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Normal::new(0.0, 0.02).expect("valid normal");
        let pos = Normal::new(0.0, 0.01).expect("valid normal");
        let draw = |rows: usize, cols: usize, dist: &Normal<f64>, rng: &mut ChaCha8Rng| -> Matrix {
            Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
        };

        let w_e = draw(config.d, config.n_vocab, &weight, &mut rng);
        let w_u = if config.tied {
            None
        } else {
            Some(draw(config.n_vocab, config.d, &weight, &mut rng))
        };
        let positional = draw(config.n_ctx, config.d, &pos, &mut rng);

        let widths = config.mlp_widths();
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            let mut heads = Vec::with_capacity(config.n_heads);
            for _ in 0..config.n_heads {
                let w_q = draw(config.d_head, config.d, &weight, &mut rng);
                let w_k = draw(config.d_head, config.d, &weight, &mut rng);
                let w_v = draw(config.d_head, config.d, &weight, &mut rng);
                let w_o = draw(config.d, config.d_head, &weight, &mut rng);
                heads.push(AttentionHead::assemble(
                    w_q,
                    w_k,
                    w_v,
                    w_o,
                    config.softmax_mode,
                    config.attention_scale,
                )?);
            }
            let weights: Vec<Matrix> = widths
                .windows(2)
                .map(|w| draw(w[1], w[0], &weight, &mut rng))
                .collect();
            let biases: Vec<Vector> = widths[1..].iter().map(|&n| Vector::zeros(n)).collect();
            let mlp = Mlp::new(weights, biases, config.activation)?;
            blocks.push(ResidualBlock::new(MultiHead::new(heads)?, mlp)?);
        }

        TransformerModel::new(config, w_e, w_u, positional, blocks)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn w_e(&self) -> &Matrix {
        &self.w_e
    }

    /// The unembedding; for tied models these are the transposed
    /// embedding entries.
    pub fn w_u(&self) -> &Matrix {
        &self.w_u
    }

    pub fn positional(&self) -> &Matrix {
        &self.positional
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// Number of trainable parameters actually stored (tied models count
    /// the embedding once).
    pub fn parameter_count(&self) -> usize {
        let mut total = self.w_e.data().len() + self.positional.data().len();
        if !self.config.tied {
            total += self.w_u.data().len();
        }
        for block in &self.blocks {
            for head in block.heads.heads() {
                total += head.w_q().data().len()
                    + head.w_k().data().len()
                    + head.w_v().data().len()
                    + head.w_o().data().len();
            }
            for w in block.mlp.weights() {
                total += w.data().len();
            }
            for b in block.mlp.biases() {
                total += b.len();
            }
        }
        total
    }

    /// Embedding step: `t W_E^T + P[1..n]`.
    pub fn embed(&self, t: &TokenMatrix) -> Result<Matrix> {
        if t.width() != self.config.n_vocab {
            return Err(Error::Shape(format!(
                "token matrix width {} does not match n_vocab {}",
                t.width(),
                self.config.n_vocab
            )));
        }
        if t.n() > self.config.n_ctx {
            return Err(Error::Shape(format!(
                "context of {} tokens exceeds n_ctx = {}",
                t.n(),
                self.config.n_ctx
            )));
        }
        let embedded = t.to_matrix().matmul(&self.w_e.transpose())?;
        embedded.add(&self.positional.top_rows(t.n()))
    }

    /// Unembedding step: `X W_U^T`.
    pub fn unembed(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.d {
            return Err(Error::Shape(format!(
                "unembedding expects width {}, got {}",
                self.config.d,
                x.cols()
            )));
        }
        x.matmul(&self.w_u.transpose())
    }

    /// The decoder stack: every residual block applied in order.
    pub fn decoder(&self, x: &Matrix) -> Result<Matrix> {
        let mut current = x.clone();
        for block in &self.blocks {
            current = block.apply(&current)?;
        }
        Ok(current)
    }

    /// Full map: unembedding of the decoded embedding; one logit row per
    /// position.
    pub fn forward(&self, t: &TokenMatrix) -> Result<Matrix> {
        self.unembed(&self.decoder(&self.embed(t)?)?)
    }

    /// Logits for the next token: the final row of the forward pass.
    pub fn logits(&self, tokens: &[TokenId]) -> Result<Vector> {
        if tokens.is_empty() {
            return Err(Error::Domain("next-token prediction needs a non-empty context".into()));
        }
        let t = TokenMatrix::from_ids(tokens, self.config.n_vocab, self.config.n_ctx)?;
        let out = self.forward(&t)?;
        Vector::new(out.row(out.rows() - 1).to_vec())
    }

    /// Probability distribution over the next token.
    pub fn next_token_distribution(&self, tokens: &[TokenId]) -> Result<NextTokenDistribution> {
        let probs = softmax_vector(&self.logits(tokens)?)?;
        Ok(NextTokenDistribution { probs })
    }

    /// Most probable next token; ties go to the lowest token id.
    pub fn predict_next(&self, tokens: &[TokenId]) -> Result<TokenId> {
        Ok(self.next_token_distribution(tokens)?.argmax())
    }

    /// Appends `steps` tokens to the tokenized prompt and detokenizes the
    /// result. When the context outgrows the window, the oldest token is
    /// dropped. Sampling draws from the softmax of `logits / temperature`
    /// with its own seeded generator, so a fixed seed reproduces the
    /// output exactly.
    pub fn generate(
        &self,
        bpe: &BpeModel,
        prompt: &str,
        steps: usize,
        strategy: GenerationStrategy,
    ) -> Result<String> {
        if bpe.n_vocab() != self.config.n_vocab {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the model expects {}",
                bpe.n_vocab(),
                self.config.n_vocab
            )));
        }
        let mut rng = match strategy {
            GenerationStrategy::Greedy => None,
            GenerationStrategy::Sample { temperature, seed } => {
                if temperature <= 0.0 || !temperature.is_finite() {
                    return Err(Error::Config(format!(
                        "temperature must be positive, got {temperature}"
                    )));
                }
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
        };

        let mut ids = bpe.tokenize(prompt)?;
        if ids.is_empty() {
            return Err(Error::Domain("prompt tokenizes to no tokens".into()));
        }
        for _ in 0..steps {
            let start = ids.len().saturating_sub(self.config.n_ctx);
            let window = &ids[start..];
            let next = match strategy {
                GenerationStrategy::Greedy => self.predict_next(window)?,
                GenerationStrategy::Sample { temperature, .. } => {
                    let logits = self.logits(window)?;
                    let probs = softmax_vector(&logits.scale(1.0 / temperature)?)?;
                    sample_index(probs.as_slice(), rng.as_mut().expect("sampling rng"))
                }
            };
            ids.push(next);
        }
        bpe.detokenize(&ids)
    }
}

/// How [`TransformerModel::generate`] picks each next token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GenerationStrategy {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Probability distribution over the vocabulary for the next token.
#[derive(Clone, Debug, PartialEq)]
pub struct NextTokenDistribution {
    probs: Vector,
}

impl NextTokenDistribution {
    pub fn probs(&self) -> &Vector {
        &self.probs
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        let mut best_p = self.probs.get(0);
        for (i, &p) in self.probs.as_slice().iter().enumerate().skip(1) {
            if p > best_p {
                best = i;
                best_p = p;
            }
        }
        best
    }

    /// The `k` most probable tokens, highest first; equal probabilities
    /// are ordered by token id.
    pub fn top_k(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut entries: Vec<(TokenId, f64)> =
            self.probs.as_slice().iter().copied().enumerate().collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }
}

/// Inverse-CDF draw from a probability vector.
fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    probs.len() - 1
}
