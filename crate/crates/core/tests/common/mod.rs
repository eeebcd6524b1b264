//! Shared fixtures for integration and acceptance tests.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use graphseq::graph::{make_splits, GraphStore, SplitKind};
use graphseq::pipeline::Template;
use graphseq::projector::{Activation, ProjectorParams};
use graphseq::prompt::Task;
use graphseq::synth::{two_block_graph, TwoBlockConfig};
use graphseq::tasks::{build_task_prompts, build_tokenizer, encode_task_samples, PromptOptions};
use graphseq::trainer::{evaluate, train, LossCurve, MockDecoder, TrainConfig, DEFAULT_DECODER_DIM};
use graphseq::Executor;
use graphseq::linalg::Matrix;
use graphseq::prompt::{EncodedSample, Segment, TokenId, Tokenizer};
use graphseq::EmbeddingSequence;
use rand::Rng;

// A=0 B=1 C=2 D=3 E=4 F=5 G=6
pub fn figure_graph() -> GraphStore {
    GraphStore::from_edges(7, [(0, 1), (0, 2), (0, 3), (1, 6), (3, 4), (3, 5)]).unwrap()
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub nc_train_accuracy: f64,
    pub lp_test_accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub elapsed: Duration,
}

/// Two-block graph, hop-field template with four hops, node classification
/// and link prediction trained jointly; node classification scored on the
/// training nodes, link prediction on 100 balanced pairs of the test split.
pub fn toy_alignment_run(cfg: &TrainConfig, exec: &Executor) -> ToyOutcome {
    let start = Instant::now();
    let seed = cfg.seed;
    let g = two_block_graph(&TwoBlockConfig { seed, ..TwoBlockConfig::default() }).unwrap();
    let split = make_splits(&g, [0.6, 0.2, 0.2], seed).unwrap();
    let tpl = Template::ho(&g, g.features().unwrap(), 4, exec).unwrap();
    let opts = PromptOptions::default();
    let nc_train = build_task_prompts(&g, &split, SplitKind::Train, Task::NodeClassification, &opts, seed).unwrap();
    let lp_train = build_task_prompts(&g, &split, SplitKind::Train, Task::LinkPrediction, &opts, seed).unwrap();
    let held_out = PromptOptions { link_pairs: Some(100), ..opts };
    let lp_test = build_task_prompts(&g, &split, SplitKind::Test, Task::LinkPrediction, &held_out, seed).unwrap();
    let tok = build_tokenizer([&nc_train, &lp_train], g.category_names()).unwrap();

    let nc = encode_task_samples(&nc_train, &tpl, &g, &tok, "toy", exec).unwrap();
    let lp = encode_task_samples(&lp_train, &tpl, &g, &tok, "toy", exec).unwrap();
    let lp_eval = encode_task_samples(&lp_test, &tpl, &g, &tok, "toy", exec).unwrap();
    let mut samples = nc.clone();
    samples.extend(lp);

    let d = DEFAULT_DECODER_DIM;
    let proj = ProjectorParams::init(8, d, d, Activation::Gelu, seed).unwrap();
    let dec = MockDecoder::new(tok.vocab_size(), d, seed).unwrap();
    let (proj, curve) = train(proj, &samples, &dec, cfg, exec).unwrap();
    let cats = g.category_names();
    ToyOutcome {
        nc_train_accuracy: evaluate(Task::NodeClassification, &nc, &dec, &proj, &tok, cats, exec).unwrap(),
        lp_test_accuracy: evaluate(Task::LinkPrediction, &lp_eval, &dec, &proj, &tok, cats, exec).unwrap(),
        initial_loss: curve.losses[0],
        final_loss: *curve.losses.last().unwrap(),
        steps: curve.steps(),
        elapsed: start.elapsed(),
    }
}

/// Node classification alone on the two-block graph; returns the training
/// accuracy after `cfg` with the loss curve.
pub fn toy_nc_only_run(cfg: &TrainConfig, exec: &Executor) -> (f64, LossCurve) {
    let seed = cfg.seed;
    let g = two_block_graph(&TwoBlockConfig { seed, ..TwoBlockConfig::default() }).unwrap();
    let split = make_splits(&g, [0.6, 0.2, 0.2], seed).unwrap();
    let tpl = Template::ho(&g, g.features().unwrap(), 4, exec).unwrap();
    let nc_train = build_task_prompts(
        &g,
        &split,
        SplitKind::Train,
        Task::NodeClassification,
        &PromptOptions::default(),
        seed,
    )
    .unwrap();
    let tok = build_tokenizer([&nc_train], g.category_names()).unwrap();
    let nc = encode_task_samples(&nc_train, &tpl, &g, &tok, "toy", exec).unwrap();
    let d = DEFAULT_DECODER_DIM;
    let proj = ProjectorParams::init(8, d, d, Activation::Gelu, seed).unwrap();
    let dec = MockDecoder::new(tok.vocab_size(), d, seed).unwrap();
    let (proj, curve) = train(proj, &nc, &dec, cfg, exec).unwrap();
    let acc = evaluate(Task::NodeClassification, &nc, &dec, &proj, &tok, g.category_names(), exec).unwrap();
    (acc, curve)
}

/// Random text/graph interleaving with a random answer, for gradient checks.
pub fn random_sample(rng: &mut impl Rng, vocab: usize, row_dim: usize) -> EncodedSample {
    let tokens = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<TokenId> {
        (0..n).map(|_| rng.random_range(4..vocab as TokenId)).collect()
    };
    let graph = |rng: &mut dyn rand::RngCore, rows: usize| {
        let data = (0..rows * row_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = (0..rows).map(|r| r % 4 == 3).collect();
        EmbeddingSequence::new(Matrix::from_vec(rows, row_dim, data), mask, 0).unwrap()
    };
    let n1 = rng.random_range(1..6);
    let r1 = rng.random_range(1..5);
    let n2 = rng.random_range(0..4);
    let r2 = rng.random_range(1..5);
    let mut segments = vec![Segment::Tokens(tokens(rng, n1)), Segment::Graph(graph(rng, r1))];
    if n2 > 0 {
        segments.push(Segment::Tokens(tokens(rng, n2)));
    }
    segments.push(Segment::Graph(graph(rng, r2)));
    let mut answer = vec![Tokenizer::BOS];
    let answer_len = rng.random_range(1..5);
    answer.extend(tokens(rng, answer_len));
    answer.push(Tokenizer::EOS);
    EncodedSample {
        segments,
        answer,
        centers: vec![0, 1],
        task: Task::LinkPrediction,
        dataset: String::new(),
    }
}
