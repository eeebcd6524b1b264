//! The `graphseq` command line.
//!
//! All artifacts of a run live under `out_dir`:
//!
//! ```text
//! store/    graph.edges features.lgfm labels.tsv categories.txt texts.txt
//!           split.tsv meta.txt
//! encode/   train.llga valid.llga test.llga [basis.lglb]
//! tasks/    <task>_<split>.llga <task>_<split>.prompts.txt
//! train/    projector.lgpj train.log vocab.txt
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SEED_ENV};
use crate::error::{Error, Result};
use crate::graph::{
    load_edge_list, load_labels, load_lines, make_splits, write_edge_list, write_labels, write_lines,
    FeatureMatrix, GraphStore, Split, SplitKind,
};
use crate::laplacian::TreeShape;
use crate::nd::NdConfig;
use crate::par::Executor;
use crate::pipeline::{write_node_sequences, Template};
use crate::projector::ProjectorParams;
use crate::prompt::{Task, Tokenizer};
use crate::seqfile::{read_sequences, SequenceHeader, SequenceWriter, TemplateKind};
use crate::sequence::EmbeddingSequence;
use crate::tasks::{attach_prompts, build_task_prompts, build_tokenizer, encode_centers, PromptOptions, TaskPrompts};
use crate::trainer::{evaluate, train, MockDecoder};

#[derive(Debug, Parser)]
#[command(name = "graphseq", version, about = "Graph-to-sequence encoding and projector alignment")]
struct Cli {
    /// Run configuration (flat key = value file)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory holding all run artifacts (overrides `out_dir`)
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads, 0 for all cores (overrides `threads`)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an edge list, features and labels and write a store dump
    Ingest(IngestArgs),
    /// Encode every node of each split into a sequence file
    Encode(EncodeArgs),
    /// Build prompts and encoded samples for one task
    Tasks(TasksArgs),
    /// Train the projector against the frozen decoder
    Train(SeedArg),
    /// Report accuracy of the trained projector
    Eval(EvalArgs),
    /// Print a sequence file header and its first records
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    categories: Option<PathBuf>,
    #[arg(long)]
    texts: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long, value_parser = ["nd", "ho", "none"])]
    template: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TasksArgs {
    #[arg(long, value_parser = ["nc", "lp", "nd"])]
    task: String,
    #[arg(long, value_parser = ["nd", "ho", "none"])]
    template: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_parser = ["nc", "lp", "nd"])]
    task: Option<String>,
    #[arg(long, default_value = "test", value_parser = ["train", "valid", "test"])]
    split: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
    /// Number of records to summarize
    #[arg(long, default_value_t = 3)]
    records: usize,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

struct Context {
    cfg: RunConfig,
    root: PathBuf,
    exec: Executor,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &cli.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(t) = cli.threads {
            cfg.threads = t;
        }
        Ok(Self {
            root: cfg.out_dir.clone(),
            exec: Executor::new(cfg.threads),
            cfg,
        })
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        self.cfg
            .resolve_seed(flag, std::env::var(SEED_ENV).ok().as_deref())
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn template(&self, flag: Option<&str>) -> Result<TemplateKind> {
        flag.map_or(Ok(self.cfg.template), TemplateKind::parse)
    }

    fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            include_center_text: self.cfg.include_center_text,
            domain_word: self.cfg.domain_word.clone(),
            link_pairs: self.cfg.link_pairs,
        }
    }

    fn build_template(&self, kind: TemplateKind, g: &GraphStore, seed: u64) -> Result<Template> {
        let feats = features(g)?;
        match kind {
            TemplateKind::Nd => {
                let nd = NdConfig {
                    shape: TreeShape::new(self.cfg.branching.clone())?,
                    seed,
                    include_parent: self.cfg.include_parent,
                };
                Template::nd(nd, self.cfg.lap_dim)
            }
            TemplateKind::Ho => Template::ho(g, feats, self.cfg.num_hops, &self.exec),
            TemplateKind::Center => Ok(Template::Center),
        }
    }
}

fn features(g: &GraphStore) -> Result<&FeatureMatrix> {
    g.features()
        .ok_or_else(|| Error::invalid("the store has no node features"))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let ctx = Context::new(&cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Encode(a) => encode(&ctx, a, out),
        Command::Tasks(a) => tasks(&ctx, a, out),
        Command::Train(a) => train_cmd(&ctx, a.seed, out),
        Command::Eval(a) => eval(&ctx, a, out),
        Command::Inspect(a) => inspect(&a.file, a.records, out),
    }
}

fn required(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.clone())
        .ok_or_else(|| Error::Config(format!("missing input: pass --{name} or set `{name}` in the config")))
}

fn ingest(ctx: &Context, a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let feats = FeatureMatrix::load(required(&a.features, &cfg.features, "features")?)?;
    let n = cfg.num_nodes.unwrap_or(feats.rows());
    let mut g = load_edge_list(required(&a.edges, &cfg.edges, "edges")?, n)?.with_features(feats)?;
    let labels = a.labels.clone().or_else(|| cfg.labels.clone());
    let categories = a.categories.clone().or_else(|| cfg.categories.clone());
    match (labels, categories) {
        (Some(l), Some(c)) => {
            let names = load_lines(c)?;
            g = g.with_labels(load_labels(l, n)?, names)?;
        }
        (None, None) => {}
        _ => return Err(Error::Config("labels and categories must be given together".into())),
    }
    if let Some(t) = a.texts.clone().or_else(|| cfg.texts.clone()) {
        let texts = load_lines(t)?
            .into_iter()
            .map(|s| s.replace('\t', " "))
            .collect();
        g = g.with_texts(texts)?;
    }
    let seed = ctx.seed(a.seed)?;
    let split = make_splits(&g, cfg.split_ratios, seed)?;
    save_store(&ctx.dir("store")?, &g, &split, &cfg.dataset)?;
    let (tr, va, te) = split.sizes();
    writeln!(
        out,
        "ingested {} nodes, {} edges, {}-dim features; split train={tr} valid={va} test={te}",
        g.num_nodes(),
        g.num_edges(),
        features(&g)?.dim()
    )?;
    Ok(())
}

fn save_store(dir: &Path, g: &GraphStore, split: &Split, dataset: &str) -> Result<()> {
    write_edge_list(g, dir.join("graph.edges"))?;
    features(g)?.write(dir.join("features.lgfm"))?;
    write_labels(g, dir.join("labels.tsv"))?;
    write_lines(g.category_names(), dir.join("categories.txt"))?;
    if let Some(t) = g.node_texts() {
        write_lines(t, dir.join("texts.txt"))?;
    }
    let assignment: Vec<String> = split
        .assignment()
        .iter()
        .enumerate()
        .map(|(v, k)| format!("{v}\t{}", k.name()))
        .collect();
    write_lines(&assignment, dir.join("split.tsv"))?;
    let r = split.ratios();
    let meta = vec![
        format!("dataset={dataset}"),
        format!("num_nodes={}", g.num_nodes()),
        format!("num_edges={}", g.num_edges()),
        format!("split_seed={}", split.seed()),
        format!("split_ratios={},{},{}", r[0], r[1], r[2]),
    ];
    write_lines(&meta, dir.join("meta.txt"))
}

fn load_store(ctx: &Context) -> Result<(GraphStore, Split)> {
    let dir = ctx.root.join("store");
    if !dir.join("meta.txt").exists() {
        return Err(Error::Config(format!(
            "missing input: no store under {} (run `ingest` first)",
            dir.display()
        )));
    }
    let meta: BTreeMap<String, String> = load_lines(dir.join("meta.txt"))?
        .into_iter()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Config(format!("store meta.txt lacks {k}")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("store meta.txt has a bad {k}")))
    };
    let n = num("num_nodes")? as usize;
    let mut g = load_edge_list(dir.join("graph.edges"), n)?
        .with_features(FeatureMatrix::load(dir.join("features.lgfm"))?)?
        .with_labels(load_labels(dir.join("labels.tsv"), n)?, load_lines(dir.join("categories.txt"))?)?;
    if dir.join("texts.txt").exists() {
        g = g.with_texts(load_lines(dir.join("texts.txt"))?)?;
    }
    let ratios: Vec<f64> = get("split_ratios")?
        .split(',')
        .map(|s| s.parse().map_err(|_| Error::Config("store meta.txt has bad split_ratios".into())))
        .collect::<Result<_>>()?;
    let mut assignment = vec![SplitKind::Train; n];
    for (i, line) in load_lines(dir.join("split.tsv"))?.iter().enumerate() {
        let (v, k) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected <node>\\t<split>".into(),
        })?;
        let v: usize = v.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("bad node id {v:?}"),
        })?;
        *assignment
            .get_mut(v)
            .ok_or(Error::NodeOutOfRange { id: v, num_nodes: n })? = SplitKind::parse(k)?;
    }
    let ratios = ratios
        .try_into()
        .map_err(|_| Error::Config("store meta.txt has bad split_ratios".into()))?;
    Ok((g, Split::from_assignment(assignment, num("split_seed")?, ratios)))
}

fn encode(ctx: &Context, a: &EncodeArgs, out: &mut dyn Write) -> Result<()> {
    let (g, split) = load_store(ctx)?;
    let seed = ctx.seed(a.seed)?;
    let kind = ctx.template(a.template.as_deref())?;
    let tpl = ctx.build_template(kind, &g, seed)?;
    let dir = ctx.dir("encode")?;
    if let Template::Nd(enc) = &tpl {
        enc.basis().write(dir.join("basis.lglb"))?;
    }
    for kind in SplitKind::ALL {
        let path = dir.join(format!("{}.llga", kind.name()));
        let h = write_node_sequences(&path, &tpl, &g, features(&g)?, &split.nodes(kind), seed, &ctx.exec)?;
        writeln!(
            out,
            "{}: {} samples, template={}, seq_len={}, row_dim={}",
            path.display(),
            h.sample_count,
            h.template.name(),
            h.seq_len,
            h.row_dim()
        )?;
    }
    Ok(())
}

fn task_file(ctx: &Context, task: Task, split: SplitKind, ext: &str) -> PathBuf {
    ctx.root
        .join("tasks")
        .join(format!("{}_{}.{ext}", task.short_name(), split.name()))
}

fn tasks(ctx: &Context, a: &TasksArgs, out: &mut dyn Write) -> Result<()> {
    let (g, split) = load_store(ctx)?;
    let seed = ctx.seed(a.seed)?;
    let task = Task::parse(&a.task)?;
    let tpl = ctx.build_template(ctx.template(a.template.as_deref())?, &g, seed)?;
    ctx.dir("tasks")?;
    let header = tpl.header(features(&g)?.dim(), seed);
    for kind in SplitKind::ALL {
        let set = build_task_prompts(&g, &split, kind, task, &ctx.prompt_options(), seed)?;
        let seqs = encode_centers(&set, &tpl, &g, &ctx.exec)?;
        let path = task_file(ctx, task, kind, "llga");
        let mut w = SequenceWriter::create(&path, header)?;
        let mut dump = Vec::with_capacity(set.len());
        for ((centers, prompt), s) in set.centers.iter().zip(&set.prompts).zip(&seqs) {
            w.write_sample(centers, task.code(), &s.iter().collect::<Vec<_>>())?;
            dump.push(prompt.render(&s.iter().map(EmbeddingSequence::len).collect::<Vec<_>>()));
        }
        let h = w.finish()?;
        write_lines(&dump, task_file(ctx, task, kind, "prompts.txt"))?;
        writeln!(out, "{}: {} samples", path.display(), h.sample_count)?;
    }
    Ok(())
}

/// Rebuilds the prompts for a split and pairs them with the sequences
/// stored by `tasks`, checking that both agree on the centers.
fn load_task_split(ctx: &Context, g: &GraphStore, split: &Split, task: Task, kind: SplitKind, seed: u64) -> Result<(TaskPrompts, SequenceHeader, Vec<Vec<EmbeddingSequence>>)> {
    let set = build_task_prompts(g, split, kind, task, &ctx.prompt_options(), seed)?;
    let path = task_file(ctx, task, kind, "llga");
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing input: {} (run `tasks --task {}` first)",
            path.display(),
            task.short_name()
        )));
    }
    let (header, records) = read_sequences(&path)?;
    let mut seqs = Vec::with_capacity(set.len());
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if set.centers.get(i) != Some(&rec.centers) || rec.task_code != task.code() {
            return Err(Error::invalid(format!(
                "{} record {i} does not match the current configuration; rerun `tasks`",
                path.display()
            )));
        }
        seqs.push(rec.sequences(&header)?);
    }
    if seqs.len() != set.len() {
        return Err(Error::invalid(format!(
            "{} holds {} records, configuration yields {}; rerun `tasks`",
            path.display(),
            seqs.len(),
            set.len()
        )));
    }
    Ok((set, header, seqs))
}

fn train_cmd(ctx: &Context, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let (g, split) = load_store(ctx)?;
    let seed = ctx.seed(seed)?;
    let loaded = ctx
        .cfg
        .tasks
        .iter()
        .map(|&t| load_task_split(ctx, &g, &split, t, SplitKind::Train, seed))
        .collect::<Result<Vec<_>>>()?;
    let row_dim = loaded[0].1.row_dim();
    if loaded.iter().any(|(_, h, _)| h.row_dim() != row_dim) {
        return Err(Error::shape("task files were encoded with different row widths"));
    }
    let tok = build_tokenizer(loaded.iter().map(|(s, _, _)| s), g.category_names())?;
    let mut samples = Vec::new();
    for (set, _, seqs) in loaded {
        samples.extend(attach_prompts(&set, seqs, &tok, &ctx.cfg.dataset)?);
    }
    let cfg = &ctx.cfg;
    let proj = ProjectorParams::init(row_dim, cfg.hidden_dim, cfg.decoder_dim, cfg.activation, seed)?;
    let dec = MockDecoder::new(tok.vocab_size(), cfg.decoder_dim, seed)?;
    let (proj, curve) = train(proj, &samples, &dec, &cfg.train_config(seed), &ctx.exec)?;
    let dir = ctx.dir("train")?;
    proj.write(dir.join("projector.lgpj"))?;
    fs::write(dir.join("train.log"), curve.to_log()).map_err(|e| Error::io(dir.join("train.log"), e))?;
    fs::write(dir.join("vocab.txt"), tok.to_vocab_file()).map_err(|e| Error::io(dir.join("vocab.txt"), e))?;
    writeln!(
        out,
        "trained on {} samples for {} steps; loss {:.6} -> {:.6}",
        samples.len(),
        curve.steps(),
        curve.losses.first().copied().unwrap_or(f64::NAN),
        curve.losses.last().copied().unwrap_or(f64::NAN)
    )?;
    Ok(())
}

fn eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (g, split) = load_store(ctx)?;
    let seed = ctx.seed(a.seed)?;
    let kind = SplitKind::parse(&a.split)?;
    let dir = ctx.root.join("train");
    let vocab_path = dir.join("vocab.txt");
    let vocab = fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let tok = Tokenizer::from_vocab_file(&vocab)?;
    let proj = ProjectorParams::load(dir.join("projector.lgpj"))?;
    let dec = MockDecoder::new(tok.vocab_size(), proj.out_dim(), seed)?;
    let task_list = match &a.task {
        Some(t) => vec![Task::parse(t)?],
        None => ctx.cfg.tasks.clone(),
    };
    for task in task_list {
        let (set, _, seqs) = load_task_split(ctx, &g, &split, task, kind, seed)?;
        let samples = attach_prompts(&set, seqs, &tok, &ctx.cfg.dataset)?;
        let acc = evaluate(task, &samples, &dec, &proj, &tok, g.category_names(), &ctx.exec)?;
        writeln!(out, "{}\t{}\taccuracy={acc:.4}\tsamples={}", task.short_name(), kind.name(), samples.len())?;
    }
    Ok(())
}

fn inspect(path: &Path, k: usize, out: &mut dyn Write) -> Result<()> {
    let (h, records) = read_sequences(path)?;
    writeln!(
        out,
        "magic=LLGA version=1 template={} feature_dim={} lap_dim={} seq_len={} sample_count={} seed={} checksum={:#010x}",
        h.template.name(),
        h.feature_dim,
        h.lap_dim,
        h.seq_len,
        h.sample_count,
        h.seed,
        h.checksum
    )?;
    for (i, rec) in records.take(k).enumerate() {
        let rec = rec?;
        let task = Task::from_code(rec.task_code).map_or("none", Task::short_name);
        let pads: Vec<String> = rec
            .pad_masks
            .iter()
            .map(|m| format!("{}/{}", m.iter().filter(|&&p| p).count(), m.len()))
            .collect();
        let (lo, hi) = rec
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        writeln!(
            out,
            "record {i}: centers={:?} task={task} pad={} min={lo} max={hi}",
            rec.centers,
            pads.join(",")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("graphseq").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_fails_with_usage() {
        let (code, _, err) = run_capture(&["frobnicate"]);
        assert_ne!(code, 0);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn unknown_flag_fails() {
        let (code, _, err) = run_capture(&["encode", "--colour", "red"]);
        assert_ne!(code, 0);
        assert!(!err.is_empty());
    }

    #[test]
    fn missing_input_is_one_line() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = run_capture(&["encode", "--out-dir", dir.path().to_str().unwrap(), "--seed", "1"]);
        assert_eq!(code, 1);
        assert_eq!(err.trim().lines().count(), 1);
        assert!(err.contains("ingest"));
    }
}
