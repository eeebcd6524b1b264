//! Chat prompts for the three graph tasks, a word-level tokenizer, and the
//! task metrics.
//!
//! A prompt's question carries one or two [`GRAPH_SLOT`] markers. Encoding
//! replaces each marker with the rows of an [`EmbeddingSequence`] while the
//! surrounding text keeps its position, producing an [`EncodedSample`].

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::sequence::EmbeddingSequence;

pub const GRAPH_SLOT: &str = "<GRAPH_SLOT>";

pub const SYSTEM_MESSAGE: &str = "You are a helpful language and graph assistant. You are able to understand the graph content provided and assist with graph-related questions.";

pub const ND_QUESTION: &str = "Please describe the center node: <GRAPH_SLOT>.";
pub const LP_QUESTION: &str =
    "Given two node-centered graphs: <GRAPH_SLOT> and <GRAPH_SLOT>, are these two center nodes connected? Answer yes or no.";

const USER_TAG: &str = "USER:";
const ASSISTANT_TAG: &str = "ASSISTANT:";

/// Marks a token that followed whitespace in the source text.
const SPACE_MARK: char = '▁';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
    NodeDescription,
}

impl Task {
    pub fn slot_count(self) -> usize {
        match self {
            Task::LinkPrediction => 2,
            _ => 1,
        }
    }

    /// Record code in sequence files; `0` is reserved for untasked encodings.
    pub fn code(self) -> u8 {
        match self {
            Task::NodeClassification => 1,
            Task::LinkPrediction => 2,
            Task::NodeDescription => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Task::NodeClassification),
            2 => Some(Task::LinkPrediction),
            3 => Some(Task::NodeDescription),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Task::NodeClassification => "nc",
            Task::LinkPrediction => "lp",
            Task::NodeDescription => "nd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nc" => Ok(Task::NodeClassification),
            "lp" => Ok(Task::LinkPrediction),
            "nd" => Ok(Task::NodeDescription),
            _ => Err(Error::invalid(format!("unknown task {s:?} (expected nc, lp or nd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatPrompt {
    pub system: String,
    pub question: String,
    pub answer: String,
    pub task: Task,
    pub include_center_text: bool,
}

impl ChatPrompt {
    pub fn slot_count(&self) -> usize {
        self.question.matches(GRAPH_SLOT).count()
    }

    /// The prompt text up to the assistant turn, split at the slots.
    fn text_segments(&self) -> Vec<String> {
        let full = format!("{} {USER_TAG} {} {ASSISTANT_TAG}", self.system, self.question);
        full.split(GRAPH_SLOT).map(str::to_string).collect()
    }

    /// Every piece of text the prompt contributes to a vocabulary.
    pub fn vocab_text(&self) -> String {
        let mut text = self.text_segments().join(" ");
        text.push(' ');
        text.push_str(&self.answer);
        text
    }

    /// Human-readable dump with `⟦GRAPH:k rows⟧` at each slot.
    pub fn render(&self, rows_per_slot: &[usize]) -> String {
        let segs = self.text_segments();
        let mut out = String::new();
        for (i, seg) in segs.iter().enumerate() {
            out.push_str(seg);
            if i + 1 < segs.len() {
                let k = rows_per_slot.get(i).copied().unwrap_or(0);
                let _ = write!(out, "⟦GRAPH:{k} rows⟧");
            }
        }
        if !self.answer.is_empty() {
            out.push(' ');
            out.push_str(&self.answer);
        }
        out
    }
}

pub fn build_nd_prompt(domain_word: &str, description: &str, label_name: &str) -> ChatPrompt {
    ChatPrompt {
        system: SYSTEM_MESSAGE.to_string(),
        question: ND_QUESTION.to_string(),
        answer: format!(
            "The center node represents a {domain_word} in the {label_name} domain, it's about {description}."
        ),
        task: Task::NodeDescription,
        include_center_text: false,
    }
}

/// Recovers `X` from an answer of the form `... in the X domain ...`.
pub fn extract_nd_label(answer: &str) -> Option<&str> {
    let start = answer.find(" in the ")? + " in the ".len();
    let len = answer[start..].rfind(" domain")?;
    Some(&answer[start..start + len])
}

/// `label` selects the answer; `None` leaves it empty for inference.
pub fn build_nc_prompt(
    category_names: &[String],
    label: Option<usize>,
    include_center_text: bool,
    center_text: Option<&str>,
) -> Result<ChatPrompt> {
    if category_names.len() < 2 {
        return Err(Error::invalid("node classification needs at least 2 categories"));
    }
    let mut question = String::new();
    if include_center_text {
        let text = center_text
            .ok_or_else(|| Error::invalid("center text requested but not supplied"))?;
        let _ = write!(question, "The center node text is: {text}. ");
    }
    let _ = write!(
        question,
        "Given a node-centered graph: {GRAPH_SLOT}, which category does the center node belong to? Choose from: {}.",
        category_names.join("; ")
    );
    let answer = match label {
        Some(c) => category_names
            .get(c)
            .ok_or_else(|| Error::invalid(format!("label {c} has no category name")))?
            .clone(),
        None => String::new(),
    };
    Ok(ChatPrompt {
        system: SYSTEM_MESSAGE.to_string(),
        question,
        answer,
        task: Task::NodeClassification,
        include_center_text,
    })
}

pub fn build_lp_prompt(connected: Option<bool>) -> ChatPrompt {
    ChatPrompt {
        system: SYSTEM_MESSAGE.to_string(),
        question: LP_QUESTION.to_string(),
        answer: match connected {
            Some(true) => "yes".to_string(),
            Some(false) => "no".to_string(),
            None => String::new(),
        },
        task: Task::LinkPrediction,
        include_center_text: false,
    }
}

pub type TokenId = u32;

/// Lowercasing word/punctuation tokenizer.
///
/// Words are maximal alphanumeric runs; any other non-space character is a
/// token of its own. A token that followed whitespace carries a leading
/// `▁`, so decoding reproduces the lowercased, whitespace-collapsed text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Tokenizer {
    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const UNK: TokenId = 2;
    pub const GRAPH: TokenId = 3;
    const SPECIALS: [&'static str; 4] = ["<s>", "</s>", "<unk>", "<graph>"];

    pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut pieces = BTreeSet::new();
        for text in corpus {
            for seg in text.as_ref().split(GRAPH_SLOT) {
                pieces.extend(pre_tokenize(seg));
            }
        }
        Self::from_tokens(pieces.into_iter())
    }

    fn from_tokens(words: impl Iterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.filter(|w| !Self::SPECIALS.contains(&w.as_str())));
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Ok(Self { tokens, ids })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_id(&self, piece: &str) -> Option<TokenId> {
        self.ids.get(piece).copied()
    }

    /// One token per line, in id order.
    pub fn to_vocab_file(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_vocab_file(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < Self::SPECIALS.len() || lines[..4] != Self::SPECIALS {
            return Err(Error::invalid("vocabulary file does not start with the special tokens"));
        }
        Self::from_tokens(lines[4..].iter().map(|s| s.to_string()))
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        pre_tokenize(text)
            .into_iter()
            .map(|p| self.ids.get(&p).copied().unwrap_or(Self::UNK))
            .collect()
    }

    /// Specials other than UNK are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                Self::BOS | Self::EOS | Self::GRAPH => {}
                Self::UNK => out.push_str(" <unk>"),
                _ => {
                    if let Some(t) = self.token(id) {
                        out.extend(t.chars().map(|c| if c == SPACE_MARK { ' ' } else { c }));
                    }
                }
            }
        }
        out.trim_start().to_string()
    }

    /// The text as the model sees it: `decode(encode(text))` for in-vocab text.
    pub fn normalize(text: &str) -> String {
        pre_tokenize(text)
            .concat()
            .replace(SPACE_MARK, " ")
            .trim_start()
            .to_string()
    }
}

fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut space_before = true;
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            flush(&mut word, &mut out);
            space_before = true;
        } else if ch.is_alphanumeric() {
            if word.is_empty() && space_before {
                word.push(SPACE_MARK);
            }
            word.push(ch);
            space_before = false;
        } else {
            flush(&mut word, &mut out);
            let mut p = String::new();
            if space_before {
                p.push(SPACE_MARK);
            }
            p.push(ch);
            out.push(p);
            space_before = false;
        }
    }
    flush(&mut word, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Tokens(Vec<TokenId>),
    Graph(EmbeddingSequence),
}

/// A prompt ready for the decoder: text and graph segments in stream order
/// plus BOS/EOS-framed answer ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub segments: Vec<Segment>,
    pub answer: Vec<TokenId>,
    pub centers: Vec<NodeId>,
    pub task: Task,
    /// Source dataset name, used for replication during training.
    pub dataset: String,
}

impl EncodedSample {
    pub fn stream_len(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Tokens(t) => t.len(),
                Segment::Graph(g) => g.len(),
            })
            .sum()
    }

    pub fn graph_rows(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Graph(g) => g.len(),
                Segment::Tokens(_) => 0,
            })
            .sum()
    }

    pub fn graphs(&self) -> impl Iterator<Item = &EmbeddingSequence> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Graph(g) => Some(g),
            Segment::Tokens(_) => None,
        })
    }

    /// `(start, len)` of each graph segment within the stream.
    pub fn slot_spans(&self) -> Vec<(usize, usize)> {
        let mut pos = 0;
        let mut spans = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Tokens(t) => pos += t.len(),
                Segment::Graph(g) => {
                    spans.push((pos, g.len()));
                    pos += g.len();
                }
            }
        }
        spans
    }

    /// Answer text without BOS/EOS.
    pub fn answer_text(&self, tok: &Tokenizer) -> String {
        tok.decode(&self.answer)
    }

    pub fn dump(&self, tok: &Tokenizer) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Tokens(t) => {
                    let text = tok.decode(t);
                    if !out.is_empty() && !out.ends_with('⟧') {
                        out.push(' ');
                    }
                    out.push_str(&text);
                }
                Segment::Graph(g) => {
                    let _ = write!(out, "⟦GRAPH:{} rows⟧", g.len());
                }
            }
        }
        if !self.answer.is_empty() {
            out.push(' ');
            out.push_str(&self.answer_text(tok));
        }
        out
    }

    pub fn with_centers(mut self, centers: Vec<NodeId>) -> Self {
        self.centers = centers;
        self
    }

    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self
    }

    pub fn without_answer(&self) -> Self {
        Self {
            answer: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn encode_sample(prompt: &ChatPrompt, tok: &Tokenizer, seqs: Vec<EmbeddingSequence>) -> Result<EncodedSample> {
    let slots = prompt.slot_count();
    if slots != prompt.task.slot_count() {
        return Err(Error::invalid(format!(
            "{:?} prompt has {slots} slots, expected {}",
            prompt.task,
            prompt.task.slot_count()
        )));
    }
    if seqs.len() != slots {
        return Err(Error::invalid(format!(
            "prompt has {slots} graph slots but {} sequences were supplied",
            seqs.len()
        )));
    }
    let mut segments = Vec::with_capacity(2 * slots + 1);
    let mut seqs = seqs.into_iter();
    let texts = prompt.text_segments();
    let last = texts.len() - 1;
    for (i, text) in texts.iter().enumerate() {
        let ids = tok.encode(text);
        if !ids.is_empty() {
            segments.push(Segment::Tokens(ids));
        }
        if i < last {
            segments.push(Segment::Graph(seqs.next().expect("slot count checked")));
        }
    }
    let answer = if prompt.answer.is_empty() {
        Vec::new()
    } else {
        let mut a = vec![Tokenizer::BOS];
        a.extend(tok.encode(&prompt.answer));
        a.push(Tokenizer::EOS);
        a
    };
    Ok(EncodedSample {
        segments,
        answer,
        centers: Vec::new(),
        task: prompt.task,
        dataset: String::new(),
    })
}

/// Fraction of responses that name their label's full category name
/// (case-sensitive) and no other category. Empty input scores 0.
pub fn description_label_accuracy<R, L, C>(responses: &[R], labels: &[L], category_names: &[C]) -> Result<f64>
where
    R: AsRef<str>,
    L: AsRef<str>,
    C: AsRef<str>,
{
    if responses.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} responses for {} labels",
            responses.len(),
            labels.len()
        )));
    }
    if responses.is_empty() {
        return Ok(0.0);
    }
    let correct = responses
        .iter()
        .zip(labels)
        .filter(|(r, l)| names_only_label(r.as_ref(), l.as_ref().trim(), category_names))
        .count();
    Ok(correct as f64 / responses.len() as f64)
}

fn names_only_label<C: AsRef<str>>(response: &str, label: &str, category_names: &[C]) -> bool {
    if label.is_empty() || !response.contains(label) {
        return false;
    }
    // another name only counts where it is not part of a label occurrence
    let label_spans: Vec<(usize, usize)> = response
        .match_indices(label)
        .map(|(i, m)| (i, i + m.len()))
        .collect();
    !category_names
        .iter()
        .map(|c| c.as_ref().trim())
        .filter(|c| !c.is_empty() && *c != label)
        .any(|c| {
            overlapping_matches(response, c)
                .any(|(s, e)| !label_spans.iter().any(|&(ls, le)| ls <= s && e <= le))
        })
}

fn overlapping_matches<'a>(haystack: &'a str, needle: &'a str) -> impl Iterator<Item = (usize, usize)> + 'a {
    haystack
        .char_indices()
        .map(|(i, _)| i)
        .filter(move |&i| haystack[i..].starts_with(needle))
        .map(move |i| (i, i + needle.len()))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = crate::linalg::norm(a);
    let nb = crate::linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((crate::linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn seq(rows: usize) -> EmbeddingSequence {
        EmbeddingSequence::new(Matrix::zeros(rows, 2), vec![false; rows], 0).unwrap()
    }

    #[test]
    fn vocab_examples() {
        let tok = Tokenizer::build_vocab(&["a b", "b c"]).unwrap();
        assert_eq!(tok.vocab_size(), 4 + 3);
        assert_eq!(&tok.tokens()[4..], &["▁a", "▁b", "▁c"]);
        let ids = tok.encode("b a");
        assert_eq!(ids, vec![tok.token_id("▁b").unwrap(), tok.token_id("▁a").unwrap()]);
        assert_eq!(tok.encode("zebra"), vec![Tokenizer::UNK]);
        assert!(Tokenizer::build_vocab::<&str>(&[]).is_err());
    }

    #[test]
    fn round_trip_normalizes() {
        let text = "Please  describe\tthe Center node: it's cs.CV(Computer Vision).";
        let tok = Tokenizer::build_vocab(&[text]).unwrap();
        let want = "please describe the center node: it's cs.cv(computer vision).";
        assert_eq!(tok.decode(&tok.encode(text)), want);
        assert_eq!(Tokenizer::normalize(text), want);
        let back = Tokenizer::from_vocab_file(&tok.to_vocab_file()).unwrap();
        assert_eq!(back, tok);
    }

    #[test]
    fn nd_prompt_format() {
        let p = build_nd_prompt(
            "paper",
            "hand gesture recognition",
            "cs.CV(Computer Vision and Pattern Recognition)",
        );
        assert!(p
            .answer
            .starts_with("The center node represents a paper in the cs.CV(Computer Vision and Pattern Recognition) domain"));
        assert_eq!(p.slot_count(), 1);
        assert_eq!(
            extract_nd_label(&p.answer),
            Some("cs.CV(Computer Vision and Pattern Recognition)")
        );
        let empty = build_nd_prompt("paper", "", "x");
        assert!(empty.answer.ends_with("it's about ."));
    }

    #[test]
    fn nc_prompt_format() {
        let names = vec!["alpha".to_string(), "beta gamma".to_string()];
        let p = build_nc_prompt(&names, Some(1), false, None).unwrap();
        assert_eq!(p.question.matches("alpha").count(), 1);
        assert_eq!(p.question.matches("beta gamma").count(), 1);
        assert_eq!(p.answer, "beta gamma");
        assert_eq!(p.slot_count(), 1);
        let t = build_nc_prompt(&names, Some(0), true, Some("some raw text")).unwrap();
        assert!(t.question.starts_with("The center node text is: some raw text. "));
        assert!(build_nc_prompt(&names[..1], None, false, None).is_err());
        assert!(build_nc_prompt(&names, None, true, None).is_err());
    }

    #[test]
    fn lp_prompt_format() {
        assert_eq!(build_lp_prompt(Some(true)).answer, "yes");
        assert_eq!(build_lp_prompt(Some(false)).answer, "no");
        assert_eq!(build_lp_prompt(None).slot_count(), 2);
    }

    #[test]
    fn slot_substitution() {
        let p = build_nd_prompt("paper", "graphs", "cs.LG");
        let tok = Tokenizer::build_vocab(&[p.render(&[]), p.answer.clone()]).unwrap();
        let s = encode_sample(&p, &tok, vec![seq(4)]).unwrap();
        let spans = s.slot_spans();
        assert_eq!(spans.len(), 1);
        let Segment::Tokens(pre) = &s.segments[0] else { panic!() };
        assert_eq!(spans[0], (pre.len(), 4));
        assert_eq!(s.stream_len(), s.segments.iter().map(|x| match x {
            Segment::Tokens(t) => t.len(),
            Segment::Graph(g) => g.len(),
        }).sum::<usize>());
        assert_eq!(s.answer.first(), Some(&Tokenizer::BOS));
        assert_eq!(s.answer.last(), Some(&Tokenizer::EOS));
        assert!(tok.decode(pre).ends_with("please describe the center node:"));
        assert!(s.dump(&tok).contains("⟦GRAPH:4 rows⟧"));

        let lp = build_lp_prompt(Some(true));
        assert!(encode_sample(&lp, &tok, vec![seq(4)]).is_err());
    }

    #[test]
    fn table_examples_adjudicated() {
        let cats = [
            "cs.CV(Computer Vision and Pattern Recognition)",
            "cs.LG(Machine Learning)",
            "cs.SI(Social and Information Networks)",
        ];
        let ok = "This node represents a paper in cs.LG(Machine Learning) domain, it's about deep graph convolutional networks.";
        let wrong = "This node represents a paper in  cs.SI(Social and Information Networks) domain,  it's about predicting suicide risk.";
        assert_eq!(description_label_accuracy(&[ok], &[cats[1]], &cats).unwrap(), 1.0);
        assert_eq!(description_label_accuracy(&[wrong], &[cats[1]], &cats).unwrap(), 0.0);
        assert_eq!(description_label_accuracy(&[""], &[cats[1]], &cats).unwrap(), 0.0);
        let both = format!("{ok} {wrong}");
        assert_eq!(description_label_accuracy(&[both], &[cats[1]], &cats).unwrap(), 0.0);
        assert!(description_label_accuracy(&[ok], &[] as &[&str], &cats).is_err());
    }

    #[test]
    fn substring_category_names() {
        let cats = ["Networks", "Social Networks"];
        assert_eq!(description_label_accuracy(&["about Social Networks"], &["Social Networks"], &cats).unwrap(), 1.0);
        assert_eq!(description_label_accuracy(&["about Social Networks"], &["Networks"], &cats).unwrap(), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3, -1.2, 2.0];
        assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 1.0]).is_err());
    }
}
