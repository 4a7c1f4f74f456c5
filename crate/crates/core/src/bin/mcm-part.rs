use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mcm_part::bench::{self, Strategy};
use mcm_part::pipeline::{self, Corpus, SelectionCriterion, ValidationConfig};
use mcm_part::rl::{self, PolicyConfig, PolicyParams, PpoConfig, RepairMode, RlEnv};
use mcm_part::util::rng_from_seed;
use mcm_part::{
    greedy_heuristic, random_search, simulated_annealing, solve_fix, solve_sample, AnalyticalModel, ChipTopology,
    ComputationGraph, DistributionMatrix, Error, EvalResult, Evaluator, FailureReason, GeneratorConfig, GraphFamily,
    NodeOrder, Partition, SaConfig, SearchBudget, SearchTrace, SurrogateConfig,
};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("CARGO_PKG_NAME"), ")");

#[derive(Parser)]
#[command(name = "mcm-part", version = VERSION, about = "Partition computation graphs onto multi-chip modules")]
struct Cli {
    /// TOML file with defaults for any setting below.
    #[arg(long, global = true, env = "MCMPART_CONFIG")]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true, env = "MCMPART_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph, or a split corpus with --count.
    Gen(GenArgs),
    /// Produce a valid partition with the solver.
    Partition(PartitionArgs),
    /// Evaluate a partition.
    Eval(EvalArgs),
    /// Run a baseline search strategy.
    Search(SearchArgs),
    /// Train a policy from scratch on one graph.
    Train(TrainArgs),
    /// Pretrain a policy over a corpus, writing checkpoints.
    Pretrain(PretrainArgs),
    /// Score checkpoints on the validation set and pick one.
    Validate(ValidateArgs),
    /// Run a frozen checkpoint on a new graph.
    Zeroshot(ZeroshotArgs),
    /// Fine-tune a checkpoint on a new graph.
    Finetune(FinetuneArgs),
    /// Experiment harness.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long, env = "MCMPART_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "MCMPART_CHIPS")]
    chips: Option<usize>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct EvalOpts {
    #[arg(long, value_enum, env = "MCMPART_EVALUATOR")]
    evaluator: Option<EvalKind>,
    /// JSON surrogate settings.
    #[arg(long)]
    surrogate_config: Option<PathBuf>,
    /// Leave cross-chip transfer time out of the latency model.
    #[arg(long)]
    no_comm: bool,
}

#[derive(Args, Clone, Default)]
struct PolicyOpts {
    /// Network size: `default` (8x128) or `tiny` (2x16).
    #[arg(long, env = "MCMPART_PROFILE")]
    profile: Option<String>,
    #[arg(long, env = "MCMPART_LEARNING_RATE")]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    repair: Option<RepairArg>,
    /// Train without the solver; invalid candidates earn zero.
    #[arg(long)]
    no_solver: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
enum EvalKind {
    Analytical,
    Surrogate,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepairArg {
    Fix,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sample,
    Fix,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Sa,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    ZeroShot,
    FineTune,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Family, or a comma-separated list with --count.
    #[arg(long, default_value = "layered")]
    family: String,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    /// Largest node count for corpus graphs (defaults to --nodes).
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Generate a corpus of this many graphs into --out-dir.
    #[arg(long)]
    count: Option<usize>,
    /// Train and validation set sizes; the rest is the test set.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<usize>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "sample")]
    mode: Mode,
    /// Candidate partition JSON for fix mode; uniform random when omitted.
    #[arg(long)]
    candidate: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    partition: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    /// Also write the best partition as JSON.
    #[arg(long)]
    best_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Directory for the final checkpoint, `<dir>/<samples>.ckpt`.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 20000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    #[arg(long)]
    checkpoint_out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint_dir: PathBuf,
    #[arg(long, value_enum, default_value = "fine-tune")]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 100)]
    finetune_budget: usize,
    #[arg(long, default_value_t = 20)]
    zeroshot_samples: usize,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Where to write the fine-tuned parameters.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Strategy comparison curves.
    Compare(CompareArgs),
    /// Fraction of random assignments that pass the static check.
    Sparsity(SparsityArgs),
    /// Analytical versus surrogate runtimes.
    Calibrate(CalibrateArgs),
    /// Samples needed to reach improvement thresholds in a trace.
    S2t(S2tArgs),
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    policy: PolicyOpts,
    /// Graph files to compare on.
    #[arg(long, value_delimiter = ',', required = true)]
    graphs: Vec<PathBuf>,
    /// Any of random, sa, rl, and finetune:<checkpoint>.
    #[arg(long, value_delimiter = ',', default_value = "random,sa,rl")]
    strategies: Vec<String>,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct SparsityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 10000)]
    samples: u64,
    /// Enumerate every assignment instead of sampling.
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Also write the summary as JSON.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct S2tArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalOpts,
    /// Trace CSV with a `best` column.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<f64>,
    /// Throughput that targets are relative to.
    #[arg(long, conflicts_with = "graph")]
    reference: Option<f64>,
    /// Use the greedy heuristic's throughput on this graph as reference.
    #[arg(long)]
    graph: Option<PathBuf>,
}

/// Settings read from the `--config` file. Command-line flags and
/// `MCMPART_*` variables take precedence.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    chips: Option<usize>,
    sram_bytes_per_chip: Option<u64>,
    link_bandwidth: Option<f64>,
    evaluator: Option<EvalKind>,
    include_comm: Option<bool>,
    profile: Option<String>,
    value_head: Option<bool>,
    surrogate: Option<SurrogateConfig>,
    sa: Option<SaConfig>,
    ppo: Option<PpoConfig>,
}

/// Fully resolved settings, echoed into JSON artifacts.
#[derive(Debug, Clone, Serialize)]
struct Settings {
    seed: u64,
    topology: Option<ChipTopology>,
    evaluator: Evaluator,
    sa: SaConfig,
    ppo: PpoConfig,
    profile: String,
    value_head: bool,
}

struct Ctx {
    file: FileConfig,
}

impl Ctx {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Ok(Ctx { file })
    }

    fn settings(
        &self,
        common: &Common,
        eval: Option<&EvalOpts>,
        policy: Option<&PolicyOpts>,
    ) -> Result<Settings, Error> {
        let f = &self.file;
        let seed = common.seed.or(f.seed).unwrap_or(0);
        let topology = match common.chips.or(f.chips) {
            Some(c) => {
                let base = ChipTopology::with_chips(c)?;
                Some(ChipTopology::new(
                    c,
                    f.sram_bytes_per_chip.unwrap_or(base.sram_bytes_per_chip),
                    f.link_bandwidth.unwrap_or(base.link_bandwidth_bytes_per_time),
                )?)
            }
            None => None,
        };
        let default_eval = EvalOpts::default();
        let e = eval.unwrap_or(&default_eval);
        let include_comm = !e.no_comm && f.include_comm.unwrap_or(true);
        let evaluator = match e.evaluator.or(f.evaluator).unwrap_or(EvalKind::Analytical) {
            EvalKind::Analytical => Evaluator::Analytical(AnalyticalModel { include_comm }),
            EvalKind::Surrogate => {
                let mut cfg = match &e.surrogate_config {
                    Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                    None => f.surrogate.unwrap_or_default(),
                };
                cfg.include_comm = cfg.include_comm && include_comm;
                cfg.validate().map_err(Error::InvalidArgument)?;
                Evaluator::Surrogate(cfg)
            }
        };
        let sa = f.sa.unwrap_or_default();
        sa.validate().map_err(Error::InvalidArgument)?;
        let mut ppo = f.ppo.unwrap_or_default();
        let mut profile = f.profile.clone().unwrap_or_else(|| "default".into());
        if let Some(p) = policy {
            if let Some(lr) = p.learning_rate {
                ppo.learning_rate = lr;
            }
            if let Some(r) = p.repair {
                ppo.repair = match r {
                    RepairArg::Fix => RepairMode::Fix,
                    RepairArg::Sample => RepairMode::Sample,
                };
            }
            if p.no_solver {
                ppo.use_solver = false;
            }
            if let Some(name) = &p.profile {
                profile = name.clone();
            }
        }
        ppo.validate().map_err(Error::InvalidArgument)?;
        Ok(Settings { seed, topology, evaluator, sa, ppo, profile, value_head: f.value_head.unwrap_or(false) })
    }
}

impl Settings {
    fn topo(&self) -> Result<ChipTopology, Error> {
        self.topology.ok_or_else(|| Error::InvalidArgument("--chips is required".into()))
    }

    fn policy(&self) -> Result<PolicyConfig, Error> {
        let mut p = PolicyConfig::profile(&self.profile, self.topo()?.num_chips)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown profile `{}`", self.profile)))?;
        p.value_head = self.value_head;
        Ok(p)
    }

    fn provenance(&self, command: &str) -> serde_json::Value {
        json!({ "tool": format!("mcm-part {VERSION}"), "command": command, "settings": self })
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_out(path, text.as_bytes())
}

fn write_trace(path: Option<&Path>, trace: &SearchTrace) -> Result<(), Error> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_out(path, &buf)
}

fn load_graph(path: &Path) -> Result<ComputationGraph, Error> {
    Ok(ComputationGraph::load(path)?)
}

fn partition_json(
    p: &Partition,
    g: &ComputationGraph,
    topo: &ChipTopology,
    s: &Settings,
    cmd: &str,
) -> serde_json::Value {
    let mut v = p.to_json_value(g, topo.num_chips);
    v["provenance"] = s.provenance(cmd);
    v
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, None, None)?;
    let families: Vec<GraphFamily> =
        a.family.split(',').map(|f| f.trim().parse()).collect::<Result<_, mcm_part::GraphError>>()?;
    match a.count {
        None => {
            if families.len() != 1 {
                return Err(Error::InvalidArgument("a single graph takes one --family".into()));
            }
            let g = mcm_part::generate_synthetic(&GeneratorConfig::new(families[0], a.nodes, s.seed))?;
            let mut text = g.to_json_string();
            text.push('\n');
            write_out(a.common.out.as_deref(), text.as_bytes())
        }
        Some(count) => {
            let dir = a.out_dir.as_deref().ok_or_else(|| Error::InvalidArgument("--count needs --out-dir".into()))?;
            let split = a.split.clone().unwrap_or_else(|| vec![count, 0]);
            if split.len() != 2 {
                return Err(Error::InvalidArgument("--split takes two sizes, e.g. 8,1".into()));
            }
            let nodes = (a.nodes, a.max_nodes.unwrap_or(a.nodes).max(a.nodes));
            let corpus = Corpus::synthetic(&families, count, nodes, (split[0], split[1]), s.seed)?;
            let manifest = corpus.write(dir)?;
            write_json(a.common.out.as_deref(), &json!({ "manifest": manifest }))
        }
    }
}

fn cmd_partition(ctx: &Ctx, a: &PartitionArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, None, None)?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let mut rng = rng_from_seed(s.seed);
    let order = NodeOrder::random(g.num_nodes(), &mut rng);
    let p = match a.mode {
        Mode::Sample => {
            let probs = DistributionMatrix::uniform(g.num_nodes(), topo.num_chips);
            solve_sample(&g, &topo, &order, &probs, &mut rng)?
        }
        Mode::Fix => {
            let candidate = match &a.candidate {
                Some(path) => Partition::from_json_str(&std::fs::read_to_string(path)?)?.assignment,
                None => {
                    use rand::Rng as _;
                    (0..g.num_nodes()).map(|_| rng.random_range(0..topo.num_chips as u32)).collect()
                }
            };
            solve_fix(&g, &topo, &order, &candidate, &mut rng)?
        }
    };
    write_json(a.common.out.as_deref(), &partition_json(&p, &g, &topo, &s, "partition"))
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), None)?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let p = Partition::from_json_str(&std::fs::read_to_string(&a.partition)?)?;
    let r = if p.check_shape(&g, topo.num_chips).is_ok() {
        s.evaluator.evaluate(&g, &topo, &p.assignment)
    } else {
        EvalResult {
            valid: false,
            throughput: 0.0,
            per_chip_latency: vec![0.0; topo.num_chips],
            per_chip_memory: vec![0; topo.num_chips],
            failure_reason: Some(FailureReason::Static),
        }
    };
    let mut v = serde_json::to_value(&r)?;
    v["provenance"] = s.provenance("eval");
    write_json(a.common.out.as_deref(), &v)
}

fn cmd_search(ctx: &Ctx, a: &SearchArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), None)?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let budget = SearchBudget::new(a.budget, s.seed);
    let trace = match a.strategy {
        StrategyArg::Random => random_search(&g, &topo, &s.evaluator, &budget)?,
        StrategyArg::Sa => simulated_annealing(&g, &topo, &s.evaluator, &budget, &s.sa)?,
        StrategyArg::Greedy => {
            let p = greedy_heuristic(&g, &topo);
            let r = s.evaluator.evaluate(&g, &topo, &p.assignment);
            let mut t = SearchTrace::default();
            t.push(r.throughput, r.valid, Some(&p));
            t
        }
    };
    write_trace(a.common.out.as_deref(), &trace)?;
    if let (Some(path), Some(p)) = (&a.best_out, &trace.best_partition) {
        write_json(Some(path), &partition_json(p, &g, &topo, &s, "search"))?;
    }
    Ok(())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let env = RlEnv::new(&g, &topo, &s.evaluator);
    let (params, trace) = rl::train_from_scratch(&env, s.policy()?, &s.ppo, &SearchBudget::new(a.samples, s.seed))?;
    if let Some(dir) = &a.checkpoint_out {
        std::fs::create_dir_all(dir)?;
        params.save(&pipeline::checkpoint_path(dir, trace.len()))?;
    }
    write_trace(a.common.out.as_deref(), &trace)
}

fn cmd_pretrain(ctx: &Ctx, a: &PretrainArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let corpus = Corpus::load_manifest(&a.manifest)?;
    let init = rl::init_params(s.policy()?, s.seed)?;
    std::fs::create_dir_all(&a.checkpoint_out)?;
    let dir = a.checkpoint_out.clone();
    let (_, records) = pipeline::pretrain(
        &corpus,
        &topo,
        init,
        &s.ppo,
        &s.evaluator,
        a.samples,
        a.checkpoint_every,
        s.seed,
        |r, p| {
            p.save(&pipeline::checkpoint_path(&dir, r.id))?;
            Ok(())
        },
    )?;
    let ids: Vec<usize> = records.iter().map(|r| r.id).collect();
    write_json(a.common.out.as_deref(), &json!({ "checkpoints": ids, "provenance": s.provenance("pretrain") }))
}

/// Checkpoint ids in `dir`, ascending.
fn list_checkpoints(dir: &Path) -> Result<Vec<usize>, Error> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ckpt") {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

fn cmd_validate(ctx: &Ctx, a: &ValidateArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let corpus = Corpus::load_manifest(&a.manifest)?;
    let ids = list_checkpoints(&a.checkpoint_dir)?;
    let vcfg = ValidationConfig {
        zeroshot_samples: a.zeroshot_samples,
        finetune_budget: a.finetune_budget,
        criterion: match a.criterion {
            CriterionArg::ZeroShot => SelectionCriterion::ZeroShot,
            CriterionArg::FineTune => SelectionCriterion::FineTune,
        },
        seed: s.seed,
    };
    let dir = &a.checkpoint_dir;
    let load = |id| Ok(PolicyParams::load(&pipeline::checkpoint_path(dir, id))?);
    let (records, best) = pipeline::validate(&ids, load, &corpus.validation, &topo, &s.evaluator, &s.ppo, &vcfg)?;
    let mut buf = Vec::new();
    pipeline::write_validation_csv(&records, &mut buf)?;
    write_out(a.common.out.as_deref(), &buf)?;
    eprintln!("best checkpoint: {}", records[best].id);
    Ok(())
}

fn load_checkpoint(path: &Path, topo: &ChipTopology) -> Result<PolicyParams, Error> {
    let p = PolicyParams::load(path)?;
    if p.config.num_chips != topo.num_chips {
        return Err(mcm_part::RlError::DimensionMismatch(format!(
            "checkpoint built for {} chips, --chips is {}",
            p.config.num_chips, topo.num_chips
        ))
        .into());
    }
    Ok(p)
}

fn cmd_zeroshot(ctx: &Ctx, a: &ZeroshotArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let ck = load_checkpoint(&a.checkpoint, &topo)?;
    let trace = pipeline::zero_shot(&ck, &g, &topo, &s.evaluator, &s.ppo, &SearchBudget::new(a.samples, s.seed))?;
    write_trace(a.common.out.as_deref(), &trace)
}

fn cmd_finetune(ctx: &Ctx, a: &FinetuneArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let ck = load_checkpoint(&a.checkpoint, &topo)?;
    let (params, trace) =
        pipeline::fine_tune(&ck, &g, &topo, &s.evaluator, &s.ppo, &SearchBudget::new(a.samples, s.seed))?;
    if let Some(path) = &a.checkpoint_out {
        params.save(path)?;
    }
    write_trace(a.common.out.as_deref(), &trace)
}

fn cmd_compare(ctx: &Ctx, a: &CompareArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), Some(&a.policy))?;
    let topo = s.topo()?;
    let graphs: Vec<ComputationGraph> = a.graphs.iter().map(|p| load_graph(p)).collect::<Result<_, _>>()?;
    let mut strategies = Vec::new();
    for name in &a.strategies {
        let st = match name.as_str() {
            "random" => Strategy::Random,
            "sa" => Strategy::Annealing(s.sa),
            "rl" => Strategy::RlScratch { policy: s.policy()?, ppo: s.ppo },
            other => match other.strip_prefix("finetune:") {
                Some(path) => {
                    Strategy::RlFinetune { params: Box::new(load_checkpoint(Path::new(path), &topo)?), ppo: s.ppo }
                }
                None => return Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
            },
        };
        strategies.push((name.clone(), st));
    }
    let table = bench::compare_strategies(&graphs, &topo, &s.evaluator, &strategies, a.samples, &a.seeds)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_out(a.common.out.as_deref(), &buf)
}

fn cmd_sparsity(ctx: &Ctx, a: &SparsityArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, None, None)?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let est = if a.exhaustive {
        bench::sparsity_exhaustive(&g, &topo, 1 << 24)?
    } else {
        bench::sparsity_probe(&g, &topo, a.samples, &mut rng_from_seed(s.seed))
    };
    let mut out = csv::Writer::from_writer(Vec::new());
    out.serialize(est)?;
    write_out(a.common.out.as_deref(), &out.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), None)?;
    let topo = s.topo()?;
    let g = load_graph(&a.graph)?;
    let cfg = match s.evaluator {
        Evaluator::Surrogate(c) => c,
        Evaluator::Analytical(_) => match &a.eval.surrogate_config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => ctx.file.surrogate.unwrap_or_default(),
        },
    };
    let report = bench::calibration_study(&g, &topo, a.samples, &cfg, s.seed)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_out(a.common.out.as_deref(), &buf)?;
    let summary = json!({
        "pearson_r": report.pearson_r,
        "invalid_fraction": report.invalid_fraction,
        "two_point": report.two_point,
        "solver_failures": report.solver_failures,
        "surrogate": cfg,
        "provenance": s.provenance("bench calibrate"),
    });
    match &a.summary_out {
        Some(p) => write_json(Some(p), &summary),
        None => {
            eprintln!("{summary}");
            Ok(())
        }
    }
}

fn cmd_s2t(ctx: &Ctx, a: &S2tArgs) -> Result<(), Error> {
    let s = ctx.settings(&a.common, Some(&a.eval), None)?;
    let reference = match (a.reference, &a.graph) {
        (Some(r), _) => r,
        (None, Some(path)) => mcm_part::heuristic_baseline(&load_graph(path)?, &s.topo()?, &s.evaluator),
        (None, None) => return Err(Error::InvalidArgument("s2t needs --reference or --graph".into())),
    };
    #[derive(Deserialize)]
    struct Row {
        best: f64,
    }
    let mut rdr = csv::Reader::from_path(&a.trace)?;
    let best: Vec<f64> = rdr.deserialize::<Row>().map(|r| r.map(|r| r.best / reference)).collect::<Result<_, _>>()?;
    let counts = bench::samples_to_target(&best, &a.targets);
    let mut buf = Vec::new();
    bench::write_s2t_csv(&a.targets, &counts, &mut buf)?;
    write_out(a.common.out.as_deref(), &buf)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--jobs: {e}")))?;
    }
    let ctx = Ctx::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Partition(a) => cmd_partition(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Zeroshot(a) => cmd_zeroshot(&ctx, a),
        Command::Finetune(a) => cmd_finetune(&ctx, a),
        Command::Bench(BenchCommand::Compare(a)) => cmd_compare(&ctx, a),
        Command::Bench(BenchCommand::Sparsity(a)) => cmd_sparsity(&ctx, a),
        Command::Bench(BenchCommand::Calibrate(a)) => cmd_calibrate(&ctx, a),
        Command::Bench(BenchCommand::S2t(a)) => cmd_s2t(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MCMPART_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: code={} message={message}", e.code());
            ExitCode::from(1)
        }
    }
}
