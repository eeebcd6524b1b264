//! Alignment training of the projector against a frozen mock decoder.
//!
//! The decoder is the smallest conditional language model through which
//! the answer likelihood depends on the projector: a context vector `c` is
//! the mean of the input stream (token embeddings for text, projector
//! outputs for graph rows), and answer token `y_t` is scored by
//! `softmax(O · tanh(c + E[y_{t-1}]))`. Only projector parameters ever
//! receive updates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par::Executor;
use crate::projector::{ProjectorGrads, ProjectorParams};
use crate::prompt::{self, EncodedSample, Segment, Task, TokenId, Tokenizer};
use crate::rng;

pub const DEFAULT_DECODER_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MockDecoder {
    token_embeddings: Matrix,
    output_weights: Matrix,
    seed: u64,
}

impl MockDecoder {
    /// Entries drawn from `N(0, 1/√d)`.
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::invalid("decoder needs a nonempty vocabulary and dim >= 1"));
        }
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut rng = rng::rng_for(&[rng::TAG_DECODER, seed]);
        let mut draw = |rows: usize| {
            Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| normal.sample(&mut rng)).collect())
        };
        let token_embeddings = draw(vocab_size);
        let output_weights = draw(vocab_size);
        Ok(Self {
            token_embeddings,
            output_weights,
            seed,
        })
    }

    pub fn from_parts(token_embeddings: Matrix, output_weights: Matrix) -> Result<Self> {
        if token_embeddings.rows() != output_weights.rows() || token_embeddings.cols() != output_weights.cols() {
            return Err(Error::shape("decoder matrices must share vocab x dim shape"));
        }
        Ok(Self {
            token_embeddings,
            output_weights,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.token_embeddings.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.rows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_embeddings(&self) -> &Matrix {
        &self.token_embeddings
    }

    pub fn output_weights(&self) -> &Matrix {
        &self.output_weights
    }

    fn embedding(&self, id: TokenId) -> Result<&[f64]> {
        if id as usize >= self.vocab_size() {
            return Err(Error::invalid(format!(
                "token id {id} outside decoder vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(self.token_embeddings.row(id as usize))
    }

    /// `(tanh(c + E[prev]), logits)`
    fn step(&self, context: &[f64], prev: TokenId) -> Result<(Vec<f64>, Vec<f64>)> {
        let z: Vec<f64> = context
            .iter()
            .zip(self.embedding(prev)?)
            .map(|(c, e)| (c + e).tanh())
            .collect();
        let logits = self.output_weights.matvec(&z);
        Ok((z, logits))
    }
}

fn check_dims(dec: &MockDecoder, proj: &ProjectorParams) -> Result<()> {
    if proj.out_dim() != dec.dim() {
        return Err(Error::shape(format!(
            "projector outputs {} dims, decoder embeds in {}",
            proj.out_dim(),
            dec.dim()
        )));
    }
    Ok(())
}

/// Mean of the stream's input embeddings.
pub fn context_vector(dec: &MockDecoder, sample: &EncodedSample, proj: &ProjectorParams) -> Result<Vec<f64>> {
    check_dims(dec, proj)?;
    let n = sample.stream_len();
    if n == 0 {
        return Err(Error::invalid("empty input stream"));
    }
    let mut c = vec![0.0; dec.dim()];
    for seg in &sample.segments {
        match seg {
            Segment::Tokens(ids) => {
                for &id in ids {
                    for (c, e) in c.iter_mut().zip(dec.embedding(id)?) {
                        *c += e;
                    }
                }
            }
            Segment::Graph(g) => {
                for r in 0..g.len() {
                    for (c, e) in c.iter_mut().zip(proj.forward(g.row(r))?) {
                        *c += e;
                    }
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    c.iter_mut().for_each(|x| *x *= inv);
    Ok(c)
}

fn log_softmax_at(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.into_iter().map(|e| e / sum).collect();
    (logits[target] - max - sum.ln(), probs)
}

/// Mean answer negative log-likelihood and its gradient w.r.t. the projector.
pub fn answer_loss(dec: &MockDecoder, sample: &EncodedSample, proj: &ProjectorParams) -> Result<(f64, ProjectorGrads)> {
    if sample.answer.len() < 2 {
        return Err(Error::invalid("sample has no answer tokens"));
    }
    let c = context_vector(dec, sample, proj)?;
    let steps = sample.answer.len() - 1;
    let mut loss = 0.0;
    let mut grad_c = vec![0.0; dec.dim()];
    for t in 1..=steps {
        let (prev, target) = (sample.answer[t - 1], sample.answer[t] as usize);
        if target >= dec.vocab_size() {
            return Err(Error::invalid(format!("answer token {target} outside vocabulary")));
        }
        let (z, logits) = dec.step(&c, prev)?;
        let (logp, mut probs) = log_softmax_at(&logits, target);
        loss -= logp;
        probs[target] -= 1.0;
        let grad_z = dec.output_weights.matvec_t(&probs);
        for ((gc, gz), z) in grad_c.iter_mut().zip(&grad_z).zip(&z) {
            *gc += gz * (1.0 - z * z);
        }
    }
    let inv_steps = 1.0 / steps as f64;
    loss *= inv_steps;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    // each graph row enters c with weight 1/stream_len
    let scale = inv_steps / sample.stream_len() as f64;
    grad_c.iter_mut().for_each(|g| *g *= scale);

    let mut grads = ProjectorGrads::zeros_like(proj);
    for g in sample.graphs() {
        for r in 0..g.len() {
            proj.backward_accumulate(g.row(r), &grad_c, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Self::adam()),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Extra copies per epoch for samples of the named dataset.
    pub replicate: BTreeMap<String, usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 16,
            epochs: 1,
            optimizer: Optimizer::adam(),
            replicate: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    /// Sample indices for one epoch before shuffling, with replication.
    pub fn epoch_stream(&self, dataset: &[EncodedSample]) -> Vec<usize> {
        dataset
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                let copies = self.replicate.get(&s.dataset).copied().unwrap_or(1);
                std::iter::repeat_n(i, copies)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    /// `step<TAB>loss` lines.
    pub fn to_log(&self) -> String {
        self.losses
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}\t{l}\n"))
            .collect()
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Mini-batch training. Per-sample losses may be computed concurrently but
/// are reduced in batch order, so results are independent of thread count.
pub fn train(
    proj: ProjectorParams,
    dataset: &[EncodedSample],
    dec: &MockDecoder,
    cfg: &TrainConfig,
    exec: &Executor,
) -> Result<(ProjectorParams, LossCurve)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    check_dims(dec, &proj)?;
    let mut proj = proj;
    let mut curve = LossCurve::default();
    let mut adam = AdamState {
        m: vec![0.0; proj.num_params()],
        v: vec![0.0; proj.num_params()],
        t: 0,
    };
    let base = cfg.epoch_stream(dataset);

    for epoch in 0..cfg.epochs {
        let mut order = base.clone();
        order.shuffle(&mut rng::rng_for(&[rng::TAG_SHUFFLE, cfg.seed, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let step = curve.steps();
            let results = exec.map(batch, |&i| answer_loss(dec, &dataset[i], &proj));
            let mut total = 0.0;
            let mut grads = ProjectorGrads::zeros_like(&proj);
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step },
                    other => other,
                })?;
                total += l;
                grads.add_assign(&g);
            }
            let inv = 1.0 / batch.len() as f64;
            let mean = total * inv;
            if !mean.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            grads.scale(inv);
            apply_update(&mut proj, &grads, cfg, &mut adam);
            curve.losses.push(mean);
        }
    }
    Ok((proj, curve))
}

fn apply_update(proj: &mut ProjectorParams, grads: &ProjectorGrads, cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in proj.flat_mut().zip(grads.flat()) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t);
            let bc2 = 1.0 - beta2.powi(adam.t);
            for (((p, g), m), v) in proj
                .flat_mut()
                .zip(grads.flat())
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Argmax decoding from BOS; ties go to the lowest id. The returned ids
/// include the terminating EOS when one is produced.
pub fn greedy_decode(
    dec: &MockDecoder,
    sample: &EncodedSample,
    proj: &ProjectorParams,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let c = context_vector(dec, sample, proj)?;
    let mut out = Vec::new();
    let mut prev = Tokenizer::BOS;
    while out.len() < max_len {
        let (_, logits) = dec.step(&c, prev)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        let id = best as TokenId;
        out.push(id);
        if id == Tokenizer::EOS {
            break;
        }
        prev = id;
    }
    Ok(out)
}

fn decode_budget(sample: &EncodedSample) -> usize {
    sample.answer.len().max(2) + 4
}

/// Greedy-decodes every sample and scores it against its stored answer.
///
/// Node classification and description use the full-category-name rule
/// on tokenizer-normalized text; link prediction compares the first
/// decoded word with the expected yes/no.
pub fn evaluate(
    task: Task,
    samples: &[EncodedSample],
    dec: &MockDecoder,
    proj: &ProjectorParams,
    tok: &Tokenizer,
    category_names: &[String],
    exec: &Executor,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    if let Some(s) = samples.iter().find(|s| s.task != task) {
        return Err(Error::invalid(format!("sample for {:?} passed to {task:?} evaluation", s.task)));
    }
    let responses = exec
        .map(samples, |s| {
            greedy_decode(dec, &s.without_answer(), proj, decode_budget(s)).map(|ids| tok.decode(&ids))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    match task {
        Task::NodeClassification | Task::NodeDescription => {
            let names: Vec<String> = category_names.iter().map(|c| Tokenizer::normalize(c)).collect();
            let labels: Vec<String> = samples
                .iter()
                .map(|s| {
                    let answer = s.answer_text(tok);
                    match task {
                        Task::NodeDescription => prompt::extract_nd_label(&answer).unwrap_or("").to_string(),
                        _ => answer,
                    }
                })
                .collect();
            prompt::description_label_accuracy(&responses, &labels, &names)
        }
        Task::LinkPrediction => {
            let correct = responses
                .iter()
                .zip(samples)
                .filter(|(r, s)| {
                    let expected = s.answer_text(tok);
                    let first = r.split_whitespace().next().unwrap_or("");
                    (first == "yes" || first == "no") && first == expected
                })
                .count();
            Ok(correct as f64 / samples.len() as f64)
        }
    }
}
