//! Statistics pooling, the two-layer classification head, and the encoder-
//! and decoder-embedding pipelines built on them.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;
use crate::model::{decode_graph, encode_graph, CrossKv, DecoderRollout, ModelConfig, SpeechModel, Token, ENGLISH};
use crate::numerics::{column_moments, softmax_in_place, Graph, ParamStore, Tensor, Var};

/// Width of the head's hidden layers and of exported embeddings.
pub const EMBEDDING_DIM: usize = 512;

/// Regularizer used only by the derivative of the pooled deviation.
pub const POOL_EPS: f64 = 1e-10;

/// Decoder positions dropped before pooling: SOT and the language, task
/// and timestamp positions of the prompt.
pub const DROPPED_PROMPT_POSITIONS: usize = 4;

pub const DEFAULT_N_LINGUISTIC: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub concatenated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEmbedding {
    pub values: Vec<f64>,
}

/// Per-column mean and population standard deviation of a `U × d` matrix.
pub fn statistics_pooling(h: &Tensor) -> Result<PooledEmbedding> {
    let (u, d) = (h.rows(), h.cols());
    if u == 0 {
        return Err(Error::EmptySequence);
    }
    let (mean, std) = column_moments(h, u, d);
    let mut concatenated = mean.clone();
    concatenated.extend_from_slice(&std);
    Ok(PooledEmbedding {
        mean,
        std,
        concatenated,
    })
}

/// Draws `head.fc1`, `head.fc2` and `head.out` into `params`.
pub fn init_head_params<R: Rng + ?Sized>(
    params: &mut ParamStore,
    input_dim: usize,
    hidden: usize,
    languages: usize,
    rng: &mut R,
) {
    for (name, fan_in, fan_out) in [
        ("head.fc1", input_dim, hidden),
        ("head.fc2", hidden, hidden),
        ("head.out", hidden, languages),
    ] {
        let std = (2.0 / fan_in as f64).sqrt();
        params.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
        params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
    }
}

/// Graph outputs of the head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `1 × hidden`, fc1 before its activation.
    pub embedding: Var,
    /// `1 × L`.
    pub logits: Var,
}

pub fn head_graph(g: &mut Graph<'_>, pooled: Var) -> Result<HeadVars> {
    let embedding = g.linear(pooled, "head.fc1")?;
    let logits = head_tail_graph(g, embedding)?;
    Ok(HeadVars { embedding, logits })
}

fn head_tail_graph(g: &mut Graph<'_>, embedding: Var) -> Result<Var> {
    let h = g.tape.relu(embedding);
    let h = g.linear(h, "head.fc2")?;
    let h = g.tape.relu(h);
    g.linear(h, "head.out")
}

/// `fc1 → ReLU → fc2 → ReLU → out`, held as a standalone parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    params: ParamStore,
}

const HEAD_PARAMS: [&str; 6] = [
    "head.fc1.w",
    "head.fc1.b",
    "head.fc2.w",
    "head.fc2.b",
    "head.out.w",
    "head.out.b",
];

impl EmbeddingHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, languages: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        init_head_params(&mut params, input_dim, hidden, languages, rng);
        Self { params }
    }

    /// All weights and biases zero.
    pub fn zeros(input_dim: usize, hidden: usize, languages: usize) -> Self {
        let mut params = ParamStore::new();
        for (name, fan_in, fan_out) in [
            ("head.fc1", input_dim, hidden),
            ("head.fc2", hidden, hidden),
            ("head.out", hidden, languages),
        ] {
            params.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
            params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        }
        Self { params }
    }

    /// Copies the `head.*` tensors out of a model's parameter store.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mut params = ParamStore::new();
        for name in HEAD_PARAMS {
            let t = store
                .by_name(name)
                .ok_or_else(|| Error::Config(format!("parameter store has no `{name}`")))?;
            params.insert(name, t.clone());
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.by_name("head.fc1.w").map_or(0, |t| t.rows())
    }

    pub fn languages(&self) -> usize {
        self.params.by_name("head.out.w").map_or(0, |t| t.cols())
    }

    fn check_input(&self, h_p: &PooledEmbedding) -> Result<()> {
        if h_p.concatenated.len() != self.input_dim() {
            return Err(Error::dims(
                "head",
                &[1, h_p.concatenated.len()],
                &[self.input_dim(), EMBEDDING_DIM],
            ));
        }
        Ok(())
    }

    fn pooled_var(g: &mut Graph<'_>, h_p: &PooledEmbedding) -> Result<Var> {
        let row = Tensor::new(vec![1, h_p.concatenated.len()], h_p.concatenated.clone())?;
        Ok(g.tape.constant(row))
    }
}

/// Language posterior from pooled statistics.
pub fn head_forward(h_p: &PooledEmbedding, head: &EmbeddingHead) -> Result<Vec<f64>> {
    head.check_input(h_p)?;
    let mut g = Graph::new(&head.params);
    let x = EmbeddingHead::pooled_var(&mut g, h_p)?;
    let out = head_graph(&mut g, x)?;
    let mut p = g.tape.value(out.logits).data().to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// The fc1 output before its activation.
pub fn extract_embedding(h_p: &PooledEmbedding, head: &EmbeddingHead) -> Result<UtteranceEmbedding> {
    head.check_input(h_p)?;
    let mut g = Graph::new(&head.params);
    let x = EmbeddingHead::pooled_var(&mut g, h_p)?;
    let e = g.linear(x, "head.fc1")?;
    Ok(UtteranceEmbedding {
        values: g.tape.value(e).data().to_vec(),
    })
}

/// Runs the rest of the head on an extracted embedding.
pub fn posterior_from_embedding(e: &UtteranceEmbedding, head: &EmbeddingHead) -> Result<Vec<f64>> {
    let mut g = Graph::new(&head.params);
    let x = g.tape.constant(Tensor::new(vec![1, e.values.len()], e.values.clone())?);
    let logits = head_tail_graph(&mut g, x)?;
    let mut p = g.tape.value(logits).data().to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Encoder states pooled over time.
pub fn enc_lemb_pooled(model: &SpeechModel, mel: &LogMelSpectrogram) -> Result<PooledEmbedding> {
    statistics_pooling(&model.encode(mel)?.states)
}

pub fn enc_lemb_forward(model: &SpeechModel, mel: &LogMelSpectrogram, head: &EmbeddingHead) -> Result<Vec<f64>> {
    head_forward(&enc_lemb_pooled(model, mel)?, head)
}

/// Greedy rollout under the fixed English prompt. EOT is barred at the
/// first step so every rollout carries at least one linguistic state.
pub fn dec_lemb_rollout(model: &SpeechModel, mel: &LogMelSpectrogram, n_linguistic: usize) -> Result<DecoderRollout> {
    if n_linguistic == 0 {
        return Err(Error::Config("n_linguistic must be at least 1".into()));
    }
    let enc = model.encode(mel)?;
    let prompt = model.vocab().prompt(ENGLISH);
    model.rollout(&enc, &prompt, n_linguistic, true)
}

/// Hidden states past the dropped prompt positions.
pub fn linguistic_states(rollout: &DecoderRollout) -> Result<Tensor> {
    let u = rollout.hiddens.rows();
    if u <= DROPPED_PROMPT_POSITIONS {
        return Err(Error::DegenerateRollout);
    }
    rollout.hiddens.slice_rows(DROPPED_PROMPT_POSITIONS, u)
}

pub fn dec_lemb_pooled(model: &SpeechModel, mel: &LogMelSpectrogram, n_linguistic: usize) -> Result<PooledEmbedding> {
    let rollout = dec_lemb_rollout(model, mel, n_linguistic)?;
    statistics_pooling(&linguistic_states(&rollout)?)
}

pub fn dec_lemb_forward(
    model: &SpeechModel,
    mel: &LogMelSpectrogram,
    head: &EmbeddingHead,
    n_linguistic: usize,
) -> Result<Vec<f64>> {
    head_forward(&dec_lemb_pooled(model, mel, n_linguistic)?, head)
}

/// Training-graph form of the encoder-embedding pipeline.
pub fn enc_lemb_graph(g: &mut Graph<'_>, cfg: &ModelConfig, mel: &Tensor) -> Result<HeadVars> {
    let enc = encode_graph(g, cfg, mel)?;
    let pooled = g.tape.stats_pool(enc, POOL_EPS)?;
    head_graph(g, pooled)
}

/// Training-graph form of the decoder-embedding pipeline: teacher-forces
/// `tokens` (typically a greedy rollout) through the decoder and pools the
/// hidden states past the prompt.
pub fn dec_lemb_graph(g: &mut Graph<'_>, cfg: &ModelConfig, cross: &CrossKv, tokens: &[Token]) -> Result<HeadVars> {
    if tokens.len() <= DROPPED_PROMPT_POSITIONS {
        return Err(Error::DegenerateRollout);
    }
    let (_, hiddens) = decode_graph(g, cfg, cross, tokens)?;
    let states = g.tape.slice_rows(hiddens, DROPPED_PROMPT_POSITIONS, tokens.len())?;
    let pooled = g.tape.stats_pool(states, POOL_EPS)?;
    head_graph(g, pooled)
}

/// One exported embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utterance_id: String,
    pub true_language: usize,
    pub embedding: UtteranceEmbedding,
}

/// Writes `utterance_id,true_language,e0,…` rows with a header line.
pub fn write_embeddings_csv(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(EMBEDDING_DIM, |r| r.embedding.values.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["utterance_id".to_string(), "true_language".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        if r.embedding.values.len() != dim {
            return Err(Error::dims("embedding export", &[r.embedding.values.len()], &[dim]));
        }
        let mut row = vec![r.utterance_id.clone(), r.true_language.to_string()];
        row.extend(r.embedding.values.iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Format {
            path: path.to_path_buf(),
            reason: format!("row {}: {what}", line + 1),
        };
        if rec.len() < 3 {
            return Err(bad("too few columns"));
        }
        let true_language = rec[1].parse().map_err(|_| bad("bad language index"))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad embedding value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingRecord {
            utterance_id: rec[0].to_string(),
            true_language,
            embedding: UtteranceEmbedding { values },
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {other:?}")),
    }
}
