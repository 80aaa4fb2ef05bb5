//! Command-line grammar and command handlers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use graspkg_core::annotation::{
    aggregate, filter_annotators, vote_kappa, MajorityOutcome, Qualification, QualificationMode, VoteRecord,
};
use graspkg_core::dataset::{generate_synthetic, Dataset, Ontology, SyntheticConfig};
use graspkg_core::evaluation::SplitMode;
use graspkg_core::graph::{build_graph, Variant};
use graspkg_core::model::{decode_checkpoint, encode_checkpoint, GcnGraspModel, Method};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layout::{self, load_dataset, load_embeddings, to_json, write_dataset};
use crate::pipeline::{self, Prepared, RunReport};
use crate::votes::{read_gold, read_votes};

/// Node and edge counts of the TaskGrasp ontology graphs, for side-by-side
/// comparison with user-supplied ontologies.
pub const REFERENCE_COUNTS: [(Variant, usize, usize); 3] = [
    (Variant::Full, 345, 989),
    (Variant::TasksOnly, 131, 693),
    (Variant::WordnetOnly, 155, 106),
];

#[derive(Debug, Parser)]
#[command(name = "graspkg", version, about = "Task-oriented grasp scoring over a semantic knowledge graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural synthetic dataset directory.
    GenSynthetic(GenArgs),
    /// Build the knowledge graph and print node/edge counts per variant.
    BuildKg(BuildKgArgs),
    /// Train the graph model on one fold and write a checkpoint.
    Train(TrainArgs),
    /// Score one fold's held-out pairs with a checkpoint.
    Eval(EvalArgs),
    /// Cross-validate a method and write a JSON report.
    Crossval(CrossvalArgs),
    /// Cross-validate a baseline; random scores are averaged over several seeds.
    Baseline(BaselineArgs),
    /// Majority-vote crowd labels, optionally after gold-question qualification.
    Aggregate(AggregateArgs),
    /// Randolph's free-marginal kappa of raw votes.
    Kappa(KappaArgs),
    /// Render a JSON report as a text table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub objects: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub grasps: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    TasksOnly,
    WordnetOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::TasksOnly => Variant::TasksOnly,
            VariantArg::WordnetOnly => Variant::WordnetOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildKgArgs {
    /// Dataset directory whose ontology.json is used.
    #[arg(long, conflicts_with = "ontology", required_unless_present = "ontology")]
    pub data: Option<PathBuf>,
    /// Ontology JSON file.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Variant written to --out.
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    #[arg(long)]
    pub include_instances: bool,
    /// Graph document (JSON) output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Instance,
    Class,
    Task,
}

impl From<ModeArg> for SplitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Instance => SplitMode::Instance,
            ModeArg::Class => SplitMode::Class,
            ModeArg::Task => SplitMode::Task,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Gcn,
    Sgn,
    SgnWe,
    Random,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gcn => Method::Gcn,
            MethodArg::Sgn => Method::Sgn,
            MethodArg::SgnWe => Method::SgnWe,
            MethodArg::Random => Method::Random,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// key=value run configuration; desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Held-out setting.
    #[arg(long, value_enum, default_value = "instance")]
    pub mode: ModeArg,
    /// Number of folds.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Overrides split_seed and train_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Word-vector file; defaults to <data>/embeddings.txt when present.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss history (JSON) output.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Report (JSON) output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "gcn")]
    pub method: MethodArg,
    /// Report (JSON) output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long = "type", value_enum)]
    pub kind: MethodArg,
    /// Runs with consecutive seeds; 5 for random, 1 otherwise.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Report (JSON) output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QualifyArgs {
    /// Gold answers CSV (item_key,truth) used to qualify annotators.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Keep annotators with at least this gold accuracy.
    #[arg(long, requires = "gold", conflicts_with = "top_fraction")]
    pub threshold: Option<f64>,
    /// Keep this fraction of the most accurate annotators.
    #[arg(long, requires = "gold")]
    pub top_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Raw votes CSV (object_id,task,grasp_id,annotator_id,vote).
    #[arg(long)]
    pub raw: PathBuf,
    #[command(flatten)]
    pub qualify: QualifyArgs,
    /// Aggregated labels (JSON) output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    #[arg(long)]
    pub raw: PathBuf,
    /// 1 for object-task items, 2 for grasp items; both when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: Option<u8>,
    #[command(flatten)]
    pub qualify: QualifyArgs,
    /// Kappa (JSON) output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON written by crossval, baseline or eval.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug)]
enum Created {
    File(PathBuf),
    Dir { path: PathBuf, existed: bool },
}

/// Outputs written by a command, removed again if it fails.
#[derive(Debug, Default)]
pub struct Artifacts {
    created: Vec<Created>,
}

impl Artifacts {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                return Err(Error::usage(format!("output directory {} does not exist", parent.display())));
            }
        }
        self.created.push(Created::File(path.to_path_buf()));
        layout::write_bytes(path, bytes)
    }

    /// Claims an output directory that must be absent or empty.
    pub fn dir(&mut self, path: &Path) -> Result<()> {
        let existed = path.exists();
        if existed {
            let mut entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            if entries.next().is_some() {
                return Err(Error::usage(format!("output directory {} is not empty", path.display())));
            }
        }
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        self.created.push(Created::Dir {
            path: path.to_path_buf(),
            existed,
        });
        Ok(())
    }

    pub fn paths(&self) -> Vec<&Path> {
        self.created
            .iter()
            .map(|c| match c {
                Created::File(p) | Created::Dir { path: p, .. } => p.as_path(),
            })
            .collect()
    }

    pub fn cleanup(&mut self) {
        for c in self.created.drain(..).rev() {
            let result = match &c {
                Created::File(p) => fs::remove_file(p),
                Created::Dir { path, existed: false } => fs::remove_dir_all(path),
                Created::Dir { path, existed: true } => {
                    fs::remove_dir_all(path).and_then(|_| fs::create_dir(path))
                }
            };
            if let Err(e) = result {
                log::warn!("could not remove partial output {c:?}: {e}");
            }
        }
    }
}

pub fn run(cli: Cli, out: &mut Artifacts) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, out),
        Command::BuildKg(a) => build_kg(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Crossval(a) => crossval(a, out),
        Command::Baseline(a) => baseline(a, out),
        Command::Aggregate(a) => aggregate_votes(a, out),
        Command::Kappa(a) => kappa(a, out),
        Command::Report(a) => report(a),
    }
}

fn gen_synthetic(a: GenArgs, out: &mut Artifacts) -> Result<()> {
    let cfg = SyntheticConfig {
        n_objects: a.objects,
        n_classes: a.classes,
        grasps_per_object: a.grasps,
        points_per_object: a.points,
        ..SyntheticConfig::default()
    };
    log::info!("synthetic config {cfg:?}, seed {}", a.seed);
    let ds = generate_synthetic(&cfg, a.seed).map_err(|e| Error::usage(e.to_string()))?;
    out.dir(&a.out)?;
    write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} objects, {} grasps, {} labeled pairs to {}",
        ds.objects.len(),
        ds.grasp_count(),
        ds.labeled_pairs().len(),
        a.out.display()
    );
    Ok(())
}

/// Node/edge count table for every variant, with the reference counts.
pub fn graph_counts(ontology: &Ontology, include_instances: bool) -> Result<String> {
    let mut s = format!("{:<14}{:>7}{:>7}   reference nodes/edges\n", "variant", "nodes", "edges");
    for (variant, rn, re) in REFERENCE_COUNTS {
        let g = build_graph(ontology, variant, include_instances)?;
        s.push_str(&format!(
            "{:<14}{:>7}{:>7}   {rn}/{re}\n",
            variant.name(),
            g.node_count(),
            g.edge_count()
        ));
    }
    Ok(s)
}

fn build_kg(a: BuildKgArgs, out: &mut Artifacts) -> Result<()> {
    let path = match (&a.data, &a.ontology) {
        (Some(d), _) => d.join(layout::ONTOLOGY_FILE),
        (None, Some(o)) => o.clone(),
        (None, None) => return Err(Error::usage("one of --data or --ontology is required")),
    };
    let text = layout::read_text(&path)?;
    let ontology: Ontology = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("line {} column {}", e.line(), e.column()), e))?;
    ontology.validate().map_err(|e| Error::format(&path, "ontology", e))?;
    print!("{}", graph_counts(&ontology, a.include_instances)?);
    if let Some(dst) = &a.out {
        let g = build_graph(&ontology, a.variant.into(), a.include_instances)?;
        out.write(dst, to_json(&g.document()).as_bytes())?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::parse(&layout::read_text(p)?).map_err(|e| match e {
            Error::Usage(m) => Error::usage(format!("{}: {m}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    let cfg = match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    log::info!("resolved config (hash {}):\n{}", cfg.hash(), cfg.to_text().trim_end());
    log::info!(
        "seeds: split {}, train {}, embedding {}",
        cfg.split_seed,
        cfg.train.seed,
        cfg.embedding_seed
    );
    Ok(cfg)
}

struct Loaded {
    dataset: Dataset,
    cfg: RunConfig,
    embeddings: graspkg_core::dataset::EmbeddingTable,
}

fn load_run(a: &RunArgs) -> Result<Loaded> {
    if a.k < 2 {
        return Err(Error::usage("--k must be at least 2"));
    }
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let dataset = load_dataset(&a.data)?;
    let dim = cfg.model.embedding_dim();
    let embeddings = match &a.embeddings {
        Some(p) => load_embeddings(p, dataset.ontology.vocabulary(), dim, cfg.embedding_seed)?,
        None => layout::dataset_embeddings(&a.data, &dataset, dim, cfg.embedding_seed)?,
    };
    Ok(Loaded {
        dataset,
        cfg,
        embeddings,
    })
}

fn emit(report: &RunReport, dst: Option<&Path>, out: &mut Artifacts) -> Result<()> {
    if let Some(p) = dst {
        out.write(p, report.to_json().as_bytes())?;
    }
    print!("{}", report.table());
    Ok(())
}

fn train(a: TrainArgs, out: &mut Artifacts) -> Result<()> {
    let l = load_run(&a.run)?;
    let prep = Prepared::new(&l.dataset, l.embeddings, &l.cfg)?;
    let (model, history) = pipeline::train_fold(&prep, &l.cfg, a.run.mode.into(), a.run.k, a.fold)?;
    out.write(&a.out, &encode_checkpoint(&model.to_checkpoint()))?;
    if let Some(h) = &a.history {
        out.write(h, to_json(&history).as_bytes())?;
    }
    if let Some(e) = history.epochs.last() {
        println!("fold {}: final train loss {:.6}", a.fold, e.train_loss);
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut Artifacts) -> Result<()> {
    let l = load_run(&a.run)?;
    let bytes = fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let ckpt = decode_checkpoint(&bytes).map_err(|e| Error::format(&a.checkpoint, "checkpoint", e))?;
    let model = GcnGraspModel::from_checkpoint(&ckpt).map_err(|e| Error::format(&a.checkpoint, "checkpoint", e))?;
    let prep = Prepared::new(&l.dataset, l.embeddings, &l.cfg)?;
    let report = pipeline::eval_fold(&prep, &l.cfg, model, a.run.mode.into(), a.run.k, a.fold)?;
    emit(&report, a.out.as_deref(), out)
}

fn cross_validate(command: &str, run: &RunArgs, method: Method, runs: usize, dst: &Path, out: &mut Artifacts) -> Result<()> {
    let l = load_run(run)?;
    let prep = Prepared::new(&l.dataset, l.embeddings, &l.cfg)?;
    let report = pipeline::run_crossval(command, &prep, &l.cfg, run.mode.into(), run.k, method, runs)?;
    emit(&report, Some(dst), out)
}

fn crossval(a: CrossvalArgs, out: &mut Artifacts) -> Result<()> {
    cross_validate("crossval", &a.run, a.method.into(), 1, &a.out, out)
}

fn baseline(a: BaselineArgs, out: &mut Artifacts) -> Result<()> {
    let method: Method = a.kind.into();
    let runs = a.runs.unwrap_or(if method == Method::Random { 5 } else { 1 });
    cross_validate("baseline", &a.run, method, runs, &a.out, out)
}

fn qualification(votes: &[VoteRecord], q: &QualifyArgs) -> Result<Option<Qualification>> {
    let Some(gold_path) = &q.gold else {
        return Ok(None);
    };
    let gold = read_gold(gold_path)?;
    let mode = match (q.threshold, q.top_fraction) {
        (Some(t), None) => QualificationMode::AccuracyThreshold(t),
        (None, Some(f)) => QualificationMode::TopFraction(f),
        _ => return Err(Error::usage("--gold needs exactly one of --threshold or --top-fraction")),
    };
    let qual = filter_annotators(votes, &gold, mode).map_err(|e| Error::usage(e.to_string()))?;
    log::info!("{} of {} graded annotators qualified", qual.qualified.len(), qual.accuracy.len());
    Ok(Some(qual))
}

#[derive(Serialize)]
struct AggregatedItem {
    item: String,
    label: u8,
    tie: bool,
}

#[derive(Serialize)]
struct AggregateOutput {
    version: u32,
    qualification: Option<Qualification>,
    items: Vec<AggregatedItem>,
}

fn aggregate_votes(a: AggregateArgs, out: &mut Artifacts) -> Result<()> {
    let votes = read_votes(&a.raw)?;
    let qual = qualification(&votes, &a.qualify)?;
    let labels: BTreeMap<_, MajorityOutcome> = aggregate(&votes, qual.as_ref().map(|q| &q.qualified))?;
    let ties = labels.values().filter(|m| m.tie).count();
    let items = labels
        .iter()
        .map(|(k, m)| AggregatedItem {
            item: k.to_string(),
            label: m.label as u8,
            tie: m.tie,
        })
        .collect();
    let doc = AggregateOutput {
        version: 1,
        qualification: qual,
        items,
    };
    out.write(&a.out, to_json(&doc).as_bytes())?;
    println!("aggregated {} items ({ties} ties)", labels.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageKappa {
    pub stage: u8,
    pub items: usize,
    pub raters: usize,
    pub kappa: f64,
}

/// Kappa per annotation stage present in `votes`.
pub fn stage_kappas(votes: &[VoteRecord], stage: Option<u8>) -> Result<Vec<StageKappa>> {
    let stages: BTreeSet<u8> = votes.iter().map(|v| v.item.stage()).collect();
    let wanted: Vec<u8> = match stage {
        Some(s) if stages.contains(&s) => vec![s],
        Some(s) => return Err(Error::usage(format!("no stage-{s} votes in the file"))),
        None => stages.into_iter().collect(),
    };
    let mut out = Vec::new();
    for s in wanted {
        let subset: Vec<VoteRecord> = votes.iter().filter(|v| v.item.stage() == s).cloned().collect();
        let kappa = vote_kappa(&subset)?;
        let items: BTreeSet<_> = subset.iter().map(|v| &v.item).collect();
        let raters = subset.len() / items.len();
        out.push(StageKappa {
            stage: s,
            items: items.len(),
            raters,
            kappa,
        });
    }
    Ok(out)
}

fn kappa(a: KappaArgs, out: &mut Artifacts) -> Result<()> {
    let mut votes = read_votes(&a.raw)?;
    if let Some(q) = qualification(&votes, &a.qualify)? {
        votes.retain(|v| q.qualified.contains(&v.annotator));
    }
    let ks = stage_kappas(&votes, a.stage)?;
    for k in &ks {
        println!("stage {}: kappa {:.6} over {} items, {} raters each", k.stage, k.kappa, k.items, k.raters);
    }
    if let Some(dst) = &a.out {
        out.write(dst, to_json(&ks).as_bytes())?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let text = layout::read_text(&a.input)?;
    let r: RunReport = serde_json::from_str(&text)
        .map_err(|e| Error::format(&a.input, format!("line {} column {}", e.line(), e.column()), e))?;
    if r.version != RunReport::VERSION {
        return Err(Error::format(&a.input, "version", format!("unsupported report version {}", r.version)));
    }
    print!("{}", r.table());
    Ok(())
}
