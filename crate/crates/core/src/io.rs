//! File formats and corpus ingestion.
//!
//! Both the vocabulary and the model are stored as UTF-8 JSON with decimal
//! floats. Serialization uses the shortest decimal that round-trips each
//! 64-bit float exactly, so save -> load -> save is byte-identical and
//! loading reproduces the model bit for bit. Loaders re-validate every
//! structural invariant before returning a value; nothing partially
//! constructed ever escapes.
//!
//! Vocabulary file: `{ "alphabet": [...], "specials": ["<eow>", "<eoa>"],
//! "merges": [[leftId, rightId], ...], "n_vocab": N }`. Token ids are
//! positional: the two specials, the alphabet in code-point order, then
//! the merged symbols in merge order.
//!
//! Model file: `{ "format_version": 1, "config": {...}, "tensors": {
//! "W_E": [[...]], "W_U": [[...]]?, "P": [[...]], "blocks": [{ "heads":
//! [{"W_Q": ..., "W_K": ..., "W_V": ..., "W_O": ...}], "mlp": {"weights":
//! [...], "biases": [...]} }] } }`. Tied models omit `W_U`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionHead, MultiHead};
use crate::error::{Error, Result};
use crate::ffn::Mlp;
use crate::model::{ModelConfig, ResidualBlock, TransformerModel};
use crate::tensor::{Matrix, Vector};
use crate::tokenizer::{BpeModel, TokenId};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const SPECIAL_NAMES: [&str; 2] = ["<eow>", "<eoa>"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    alphabet: Vec<char>,
    specials: Vec<String>,
    merges: Vec<[TokenId; 2]>,
    n_vocab: usize,
}

/// Writes the vocabulary file; same model, same bytes.
pub fn save_vocab(model: &BpeModel, path: &Path) -> Result<()> {
    let file = VocabFile {
        alphabet: model.alphabet().iter().copied().collect(),
        specials: SPECIAL_NAMES.iter().map(|s| s.to_string()).collect(),
        merges: model.merges().iter().map(|m| [m.left, m.right]).collect(),
        n_vocab: model.n_vocab(),
    };
    write_atomic(path, &to_json_bytes(&file)?)
}

/// Loads and fully validates a vocabulary file.
pub fn load_vocab(path: &Path) -> Result<BpeModel> {
    let load_err = |msg: String| Error::Load(format!("{}: {msg}", path.display()));
    let bytes = std::fs::read(path)?;
    let file: VocabFile =
        serde_json::from_slice(&bytes).map_err(|e| load_err(format!("invalid JSON: {e}")))?;

    if file.specials != SPECIAL_NAMES {
        return Err(load_err(format!(
            "specials must be {SPECIAL_NAMES:?}, got {:?}",
            file.specials
        )));
    }
    let mut alphabet = BTreeSet::new();
    let mut previous: Option<char> = None;
    for &ch in &file.alphabet {
        if previous.is_some_and(|p| p >= ch) {
            return Err(load_err(format!(
                "alphabet must be strictly increasing by code point near {ch:?}"
            )));
        }
        previous = Some(ch);
        alphabet.insert(ch);
    }
    let pairs: Vec<(TokenId, TokenId)> = file.merges.iter().map(|m| (m[0], m[1])).collect();
    let model = BpeModel::from_parts(alphabet, &pairs).map_err(|e| load_err(e.to_string()))?;
    if model.n_vocab() != file.n_vocab {
        return Err(load_err(format!(
            "n_vocab field says {} but the symbols add up to {}",
            file.n_vocab,
            model.n_vocab()
        )));
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    tensors: TensorsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorsFile {
    #[serde(rename = "W_E")]
    w_e: Vec<Vec<f64>>,
    #[serde(rename = "W_U", skip_serializing_if = "Option::is_none", default)]
    w_u: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    blocks: Vec<BlockFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    heads: Vec<HeadFile>,
    mlp: MlpFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    #[serde(rename = "W_Q")]
    w_q: Vec<Vec<f64>>,
    #[serde(rename = "W_K")]
    w_k: Vec<Vec<f64>>,
    #[serde(rename = "W_V")]
    w_v: Vec<Vec<f64>>,
    #[serde(rename = "W_O")]
    w_o: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

/// Writes the model file; tied models omit the unembedding tensor.
pub fn save_model(model: &TransformerModel, path: &Path) -> Result<()> {
    let config = model.config();
    let tensors = TensorsFile {
        w_e: model.w_e().to_rows(),
        w_u: if config.tied {
            None
        } else {
            Some(model.w_u().to_rows())
        },
        p: model.positional().to_rows(),
        blocks: model
            .blocks()
            .iter()
            .map(|block| BlockFile {
                heads: block
                    .heads()
                    .heads()
                    .iter()
                    .map(|h| HeadFile {
                        w_q: h.w_q().to_rows(),
                        w_k: h.w_k().to_rows(),
                        w_v: h.w_v().to_rows(),
                        w_o: h.w_o().to_rows(),
                    })
                    .collect(),
                mlp: MlpFile {
                    weights: block.mlp().weights().iter().map(Matrix::to_rows).collect(),
                    biases: block
                        .mlp()
                        .biases()
                        .iter()
                        .map(|b| b.as_slice().to_vec())
                        .collect(),
                },
            })
            .collect(),
    };
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        tensors,
    };
    write_atomic(path, &to_json_bytes(&file)?)
}

/// Loads a model file, re-validating version, every tensor shape,
/// finiteness and the tying convention.
pub fn load_model(path: &Path) -> Result<TransformerModel> {
    let load_err = |msg: String| Error::Load(format!("{}: {msg}", path.display()));
    let bytes = std::fs::read(path)?;
    let file: ModelFile =
        serde_json::from_slice(&bytes).map_err(|e| load_err(format!("invalid JSON: {e}")))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(load_err(format!(
            "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let config = file.config;
    config.validate().map_err(|e| load_err(e.to_string()))?;

    let tensor = |name: String, rows: usize, cols: usize, data: &[Vec<f64>]| -> Result<Matrix> {
        if data.len() != rows || data.iter().any(|r| r.len() != cols) {
            let got_rows = data.len();
            let got_cols = data.first().map_or(0, Vec::len);
            return Err(load_err(format!(
                "tensor {name}: expected {rows}x{cols}, got {got_rows}x{got_cols}"
            )));
        }
        Matrix::from_rows(data.to_vec()).map_err(|e| load_err(format!("tensor {name}: {e}")))
    };

    let w_e = tensor("W_E".into(), config.d, config.n_vocab, &file.tensors.w_e)?;
    let w_u = match (&file.tensors.w_u, config.tied) {
        (Some(_), true) => {
            return Err(load_err(
                "tensor W_U present but the config says tied".into(),
            ))
        }
        (Some(rows), false) => Some(tensor("W_U".into(), config.n_vocab, config.d, rows)?),
        (None, true) => None,
        (None, false) => return Err(load_err("tensor W_U missing for an untied model".into())),
    };
    let p = tensor("P".into(), config.n_ctx, config.d, &file.tensors.p)?;

    if file.tensors.blocks.len() != config.n_blocks {
        return Err(load_err(format!(
            "expected {} blocks, got {}",
            config.n_blocks,
            file.tensors.blocks.len()
        )));
    }
    let widths = config.mlp_widths();
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for (bi, block) in file.tensors.blocks.iter().enumerate() {
        if block.heads.len() != config.n_heads {
            return Err(load_err(format!(
                "block {bi}: expected {} heads, got {}",
                config.n_heads,
                block.heads.len()
            )));
        }
        let mut heads = Vec::with_capacity(config.n_heads);
        for (hi, head) in block.heads.iter().enumerate() {
            let name = |w: &str| format!("blocks[{bi}].heads[{hi}].{w}");
            let w_q = tensor(name("W_Q"), config.d_head, config.d, &head.w_q)?;
            let w_k = tensor(name("W_K"), config.d_head, config.d, &head.w_k)?;
            let w_v = tensor(name("W_V"), config.d_head, config.d, &head.w_v)?;
            let w_o = tensor(name("W_O"), config.d, config.d_head, &head.w_o)?;
            heads.push(
                AttentionHead::assemble(
                    w_q,
                    w_k,
                    w_v,
                    w_o,
                    config.softmax_mode,
                    config.attention_scale,
                )
                .map_err(|e| load_err(format!("blocks[{bi}].heads[{hi}]: {e}")))?,
            );
        }

        if block.mlp.weights.len() != config.mlp_depth || block.mlp.biases.len() != config.mlp_depth
        {
            return Err(load_err(format!(
                "block {bi}: MLP must have {} weight matrices and bias vectors",
                config.mlp_depth
            )));
        }
        let mut weights = Vec::with_capacity(config.mlp_depth);
        let mut biases = Vec::with_capacity(config.mlp_depth);
        for l in 0..config.mlp_depth {
            let w_name = format!("blocks[{bi}].mlp.weights[{l}]");
            weights.push(tensor(
                w_name,
                widths[l + 1],
                widths[l],
                &block.mlp.weights[l],
            )?);
            let b = &block.mlp.biases[l];
            if b.len() != widths[l + 1] {
                return Err(load_err(format!(
                    "tensor blocks[{bi}].mlp.biases[{l}]: expected length {}, got {}",
                    widths[l + 1],
                    b.len()
                )));
            }
            biases.push(
                Vector::new(b.clone())
                    .map_err(|e| load_err(format!("blocks[{bi}].mlp.biases[{l}]: {e}")))?,
            );
        }
        let mlp = Mlp::new(weights, biases, config.activation)
            .map_err(|e| load_err(format!("block {bi} MLP: {e}")))?;
        let multi =
            MultiHead::new(heads).map_err(|e| load_err(format!("block {bi} heads: {e}")))?;
        blocks.push(
            ResidualBlock::new(multi, mlp).map_err(|e| load_err(format!("block {bi}: {e}")))?,
        );
    }

    TransformerModel::new(config, w_e, w_u, p, blocks).map_err(|e| load_err(e.to_string()))
}

/// An ordered list of artefact files forming a corpus; consecutive
/// artefacts are separated by exactly one end-of-artefact symbol when the
/// corpus is flattened for training.
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    paths: Vec<PathBuf>,
    alphabet: Option<BTreeSet<char>>,
}

impl CorpusManifest {
    pub fn new(paths: Vec<PathBuf>) -> Self {
        CorpusManifest {
            paths,
            alphabet: None,
        }
    }

    /// Validates every ingested (non-whitespace) character against the
    /// given alphabet.
    pub fn with_alphabet(mut self, alphabet: BTreeSet<char>) -> Self {
        self.alphabet = Some(alphabet);
        self
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Reads every artefact as UTF-8, in manifest order. Errors name the
    /// file and the byte or character offset of the problem.
    pub fn ingest(&self) -> Result<Vec<String>> {
        let mut artefacts = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let bytes = std::fs::read(path)
                .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::Ingest(format!(
                    "{}: invalid UTF-8 at byte offset {}",
                    path.display(),
                    e.utf8_error().valid_up_to()
                ))
            })?;
            if let Some(alphabet) = &self.alphabet {
                for (offset, ch) in text.chars().enumerate() {
                    if !ch.is_whitespace() && !alphabet.contains(&ch) {
                        return Err(Error::Ingest(format!(
                            "{}: character {ch:?} at offset {offset} is not in the alphabet",
                            path.display()
                        )));
                    }
                }
            }
            artefacts.push(text);
        }
        Ok(artefacts)
    }
}

/// Truncates the corpus to a global character budget, in artefact order;
/// artefacts past the budget are dropped.
pub fn truncate_corpus(artefacts: Vec<String>, max_chars: Option<usize>) -> Vec<String> {
    let Some(budget) = max_chars else {
        return artefacts;
    };
    let mut remaining = budget;
    let mut out = Vec::new();
    for artefact in artefacts {
        if remaining == 0 {
            break;
        }
        let len = artefact.chars().count();
        if len <= remaining {
            remaining -= len;
            out.push(artefact);
        } else {
            out.push(artefact.chars().take(remaining).collect());
            remaining = 0;
        }
    }
    out
}

/// The distinct non-whitespace characters of a corpus, i.e. the alphabet
/// implied by the corpus itself.
pub fn corpus_alphabet(artefacts: &[String]) -> BTreeSet<char> {
    artefacts
        .iter()
        .flat_map(|a| a.chars())
        .filter(|c| !c.is_whitespace())
        .collect()
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes via a temporary file in the target directory followed by a
/// rename, so a crash never leaves a half-written file behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffn::Activation;
    use crate::model::GenerationStrategy;
    use crate::tensor::SoftmaxMode;

    fn toy_config(tied: bool) -> ModelConfig {
        ModelConfig {
            n_vocab: 9,
            n_ctx: 5,
            d: 3,
            d_head: 1,
            n_heads: 2,
            n_blocks: 2,
            mlp_depth: 2,
            mlp_hidden: 6,
            activation: Activation::Gelu,
            softmax_mode: SoftmaxMode::PaperGlobal,
            tied,
            attention_scale: false,
        }
    }

    fn trained_vocab() -> BpeModel {
        let corpus = vec!["abab abab".to_string(), "baba".to_string()];
        let alphabet: BTreeSet<char> = "ab".chars().collect();
        BpeModel::train(&corpus, &alphabet, 7).unwrap()
    }

    #[test]
    fn vocab_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let model = trained_vocab();
        let path_a = dir.path().join("a.json");
        let path_b = dir.path().join("b.json");
        save_vocab(&model, &path_a).unwrap();
        save_vocab(&trained_vocab(), &path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );

        let loaded = load_vocab(&path_a).unwrap();
        assert_eq!(loaded, model);

        // save(load(x)) is byte-identical to x
        let path_c = dir.path().join("c.json");
        save_vocab(&loaded, &path_c).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_c).unwrap()
        );
    }

    #[test]
    fn vocab_loader_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");

        // out-of-range merge id
        std::fs::write(
            &path,
            r#"{"alphabet":["a","b"],"specials":["<eow>","<eoa>"],"merges":[[2,9]],"n_vocab":5}"#,
        )
        .unwrap();
        assert!(matches!(load_vocab(&path), Err(Error::Load(_))));

        // wrong specials
        std::fs::write(
            &path,
            r#"{"alphabet":["a"],"specials":["<eos>","<eoa>"],"merges":[],"n_vocab":3}"#,
        )
        .unwrap();
        assert!(matches!(load_vocab(&path), Err(Error::Load(_))));

        // inconsistent n_vocab
        std::fs::write(
            &path,
            r#"{"alphabet":["a"],"specials":["<eow>","<eoa>"],"merges":[],"n_vocab":9}"#,
        )
        .unwrap();
        assert!(matches!(load_vocab(&path), Err(Error::Load(_))));

        // unsorted alphabet
        std::fs::write(
            &path,
            r#"{"alphabet":["b","a"],"specials":["<eow>","<eoa>"],"merges":[],"n_vocab":4}"#,
        )
        .unwrap();
        assert!(matches!(load_vocab(&path), Err(Error::Load(_))));
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        for tied in [true, false] {
            let dir = tempfile::tempdir().unwrap();
            let model = TransformerModel::init(toy_config(tied), 42).unwrap();
            let path_a = dir.path().join("m.json");
            let path_b = dir.path().join("m2.json");
            save_model(&model, &path_a).unwrap();
            let loaded = load_model(&path_a).unwrap();
            assert_eq!(loaded, model);
            save_model(&loaded, &path_b).unwrap();
            assert_eq!(
                std::fs::read(&path_a).unwrap(),
                std::fs::read(&path_b).unwrap()
            );
        }
    }

    #[test]
    fn model_loader_names_the_bad_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let model = TransformerModel::init(toy_config(true), 1).unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();

        let mut value: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        value["tensors"]["W_E"][0]
            .as_array_mut()
            .unwrap()
            .pop();
        std::fs::write(&path, serde_json::to_vec(&value).unwrap()).unwrap();

        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("W_E"), "{err}");
    }

    #[test]
    fn model_loader_rejects_tied_file_with_unembedding() {
        let dir = tempfile::tempdir().unwrap();
        let untied = TransformerModel::init(toy_config(false), 1).unwrap();
        let path = dir.path().join("m.json");
        save_model(&untied, &path).unwrap();

        let mut value: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        value["config"]["tied"] = serde_json::Value::Bool(true);
        std::fs::write(&path, serde_json::to_vec(&value).unwrap()).unwrap();

        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("W_U"), "{err}");
    }

    #[test]
    fn model_loader_rejects_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let model = TransformerModel::init(toy_config(true), 1).unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();

        let mut value: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        value["format_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_vec(&value).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Load(_))));
    }

    #[test]
    fn loaded_model_behaves_identically() {
        let dir = tempfile::tempdir().unwrap();
        let model = TransformerModel::init(toy_config(true), 7).unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        let bpe = BpeModel::base("abcdefg".chars().collect()).unwrap();
        let strategy = GenerationStrategy::Sample {
            temperature: 1.0,
            seed: 5,
        };
        assert_eq!(
            model.generate(&bpe, "abc", 6, strategy).unwrap(),
            loaded.generate(&bpe, "abc", 6, strategy).unwrap()
        );
    }

    #[test]
    fn ingest_reads_artefacts_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.txt");
        let p2 = dir.path().join("two.txt");
        std::fs::write(&p1, "ab").unwrap();
        std::fs::write(&p2, "cd").unwrap();
        let artefacts = CorpusManifest::new(vec![p1, p2]).ingest().unwrap();
        assert_eq!(artefacts, vec!["ab".to_string(), "cd".to_string()]);
    }

    #[test]
    fn ingest_rejects_invalid_utf8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, [0x61, 0xff, 0x62]).unwrap();
        let err = CorpusManifest::new(vec![path]).ingest().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.txt") && msg.contains("offset 1"), "{msg}");
    }

    #[test]
    fn ingest_validates_alphabet_when_configured() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("art.txt");
        std::fs::write(&path, "ab xz").unwrap();
        let manifest = CorpusManifest::new(vec![path])
            .with_alphabet("ab".chars().collect());
        let msg = manifest.ingest().unwrap_err().to_string();
        assert!(msg.contains("'x'") && msg.contains("art.txt"), "{msg}");
    }

    #[test]
    fn empty_manifest_trains_zero_merges() {
        let artefacts = CorpusManifest::new(vec![]).ingest().unwrap();
        assert!(artefacts.is_empty());
        let alphabet: BTreeSet<char> = "ab".chars().collect();
        let model = BpeModel::train(&artefacts, &alphabet, 10).unwrap();
        assert!(model.merges().is_empty());
    }

    #[test]
    fn truncate_corpus_budget() {
        let artefacts = vec!["abcde".to_string(), "fgh".to_string()];
        assert_eq!(
            truncate_corpus(artefacts.clone(), Some(6)),
            vec!["abcde".to_string(), "f".to_string()]
        );
        assert_eq!(
            truncate_corpus(artefacts.clone(), Some(3)),
            vec!["abc".to_string()]
        );
        assert_eq!(truncate_corpus(artefacts.clone(), None), artefacts);
    }

    #[test]
    fn corpus_alphabet_skips_whitespace() {
        let artefacts = vec!["ab c\n".to_string(), "bd".to_string()];
        let alphabet = corpus_alphabet(&artefacts);
        let expected: BTreeSet<char> = "abcd".chars().collect();
        assert_eq!(alphabet, expected);
    }
}
