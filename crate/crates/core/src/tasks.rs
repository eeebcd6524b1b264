//! Turning a split of a labeled graph into prompt/sequence samples.

use crate::error::{Error, Result};
use crate::graph::{sample_link_pairs, GraphStore, NodeId, Split, SplitKind};
use crate::par::Executor;
use crate::pipeline::{encode_nodes, Template};
use crate::prompt::{self, encode_sample, ChatPrompt, EncodedSample, Task, Tokenizer};
use crate::sequence::EmbeddingSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptOptions {
    pub include_center_text: bool,
    pub domain_word: String,
    /// Link pairs per split; defaults to the split size rounded down to even.
    pub link_pairs: Option<usize>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            include_center_text: false,
            domain_word: "paper".into(),
            link_pairs: None,
        }
    }
}

/// Prompts for one task over one split, with the center node(s) of each.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrompts {
    pub task: Task,
    pub split: SplitKind,
    pub centers: Vec<Vec<NodeId>>,
    pub prompts: Vec<ChatPrompt>,
}

impl TaskPrompts {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

fn labeled_nodes(g: &GraphStore, split: &Split, kind: SplitKind) -> Result<Vec<(NodeId, usize)>> {
    if g.category_names().len() < 2 {
        return Err(Error::invalid("the graph needs labels with at least 2 category names"));
    }
    Ok(split
        .nodes(kind)
        .into_iter()
        .filter_map(|v| g.label(v).map(|c| (v, c)))
        .collect())
}

/// Builds the prompts for `task` on the nodes of `kind`, in ascending node
/// order (or, for link prediction, in seeded pair order).
pub fn build_task_prompts(
    g: &GraphStore,
    split: &Split,
    kind: SplitKind,
    task: Task,
    opts: &PromptOptions,
    seed: u64,
) -> Result<TaskPrompts> {
    let mut centers = Vec::new();
    let mut prompts = Vec::new();
    match task {
        Task::NodeClassification => {
            for (v, c) in labeled_nodes(g, split, kind)? {
                let text = g.node_text(v);
                prompts.push(prompt::build_nc_prompt(
                    g.category_names(),
                    Some(c),
                    opts.include_center_text,
                    text,
                )?);
                centers.push(vec![v]);
            }
        }
        Task::NodeDescription => {
            for (v, c) in labeled_nodes(g, split, kind)? {
                let text = g
                    .node_text(v)
                    .ok_or_else(|| Error::invalid(format!("node description needs a text for node {v}")))?;
                prompts.push(prompt::build_nd_prompt(&opts.domain_word, text, &g.category_names()[c]));
                centers.push(vec![v]);
            }
        }
        Task::LinkPrediction => {
            let count = match opts.link_pairs {
                Some(c) => c,
                None => (split.nodes(kind).len() / 2 * 2).max(2),
            };
            for pair in sample_link_pairs(g, split, kind, count, seed)? {
                prompts.push(prompt::build_lp_prompt(Some(pair.connected)));
                centers.push(vec![pair.u, pair.v]);
            }
        }
    }
    Ok(TaskPrompts {
        task,
        split: kind,
        centers,
        prompts,
    })
}

/// Vocabulary over the given prompts plus the category names and the
/// link-prediction answers, so every gradable answer is in vocabulary.
pub fn build_tokenizer<'a, I>(prompt_sets: I, category_names: &[String]) -> Result<Tokenizer>
where
    I: IntoIterator<Item = &'a TaskPrompts>,
{
    let mut corpus: Vec<String> = prompt_sets
        .into_iter()
        .flat_map(|set| set.prompts.iter().map(ChatPrompt::vocab_text))
        .collect();
    corpus.extend(category_names.iter().cloned());
    corpus.push("yes no".into());
    Tokenizer::build_vocab(&corpus)
}

/// Sequences for every sample's centers, computed once per distinct node.
pub fn encode_centers(
    set: &TaskPrompts,
    tpl: &Template,
    g: &GraphStore,
    exec: &Executor,
) -> Result<Vec<Vec<EmbeddingSequence>>> {
    let feats = g
        .features()
        .ok_or_else(|| Error::invalid("graph has no node features"))?;
    let mut nodes: Vec<NodeId> = set.centers.iter().flatten().copied().collect();
    nodes.sort_unstable();
    nodes.dedup();
    let seqs = encode_nodes(tpl, g, feats, &nodes, exec)?;
    Ok(set
        .centers
        .iter()
        .map(|cs| {
            cs.iter()
                .map(|c| seqs[nodes.binary_search(c).expect("center was encoded")].clone())
                .collect()
        })
        .collect())
}

/// Substitutes per-sample sequences into the prompts.
pub fn attach_prompts(
    set: &TaskPrompts,
    seqs: Vec<Vec<EmbeddingSequence>>,
    tok: &Tokenizer,
    dataset: &str,
) -> Result<Vec<EncodedSample>> {
    if seqs.len() != set.len() {
        return Err(Error::shape(format!("{} sequence groups for {} prompts", seqs.len(), set.len())));
    }
    set.prompts
        .iter()
        .zip(&set.centers)
        .zip(seqs)
        .map(|((p, cs), s)| Ok(encode_sample(p, tok, s)?.with_centers(cs.clone()).with_dataset(dataset)))
        .collect()
}

pub fn encode_task_samples(
    set: &TaskPrompts,
    tpl: &Template,
    g: &GraphStore,
    tok: &Tokenizer,
    dataset: &str,
    exec: &Executor,
) -> Result<Vec<EncodedSample>> {
    attach_prompts(set, encode_centers(set, tpl, g, exec)?, tok, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_splits;
    use crate::synth::{two_block_graph, TwoBlockConfig};

    #[test]
    fn prompts_for_each_task() {
        let g = two_block_graph(&TwoBlockConfig::default()).unwrap();
        let split = make_splits(&g, [0.6, 0.2, 0.2], 3).unwrap();
        let opts = PromptOptions::default();
        let nc = build_task_prompts(&g, &split, SplitKind::Train, Task::NodeClassification, &opts, 3).unwrap();
        assert_eq!(nc.len(), split.nodes(SplitKind::Train).len());
        assert!(nc.centers.windows(2).all(|w| w[0][0] < w[1][0]));
        let lp = build_task_prompts(&g, &split, SplitKind::Test, Task::LinkPrediction, &opts, 3).unwrap();
        assert_eq!(lp.len(), 40);
        assert_eq!(lp.prompts.iter().filter(|p| p.answer == "yes").count(), 20);
        let nd = build_task_prompts(&g, &split, SplitKind::Valid, Task::NodeDescription, &opts, 3).unwrap();
        assert!(nd.prompts[0].answer.contains(" domain, it's about "));

        let tok = build_tokenizer([&nc, &lp, &nd], g.category_names()).unwrap();
        let tpl = Template::Center;
        let samples = encode_task_samples(&lp, &tpl, &g, &tok, "toy", &Executor::sequential()).unwrap();
        assert_eq!(samples.len(), 40);
        assert_eq!(samples[0].graphs().count(), 2);
        assert_eq!(samples[0].centers, lp.centers[0]);
        assert!(samples[0].answer.iter().all(|&t| t != Tokenizer::UNK));
    }
}
