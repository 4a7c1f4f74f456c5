//! Pretraining over a corpus, checkpoint validation, zero-shot inference and
//! fine-tuning on unseen graphs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, RlError};
use crate::evaluator::Evaluator;
use crate::generate::{generate_synthetic, GeneratorConfig, GraphFamily};
use crate::graph::{ChipTopology, ComputationGraph};
use crate::rl::{self, PolicyParams, PpoConfig, RlEnv};
use crate::search::{SearchBudget, SearchTrace};
use crate::util::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedGraph {
    pub name: String,
    pub graph: ComputationGraph,
}

/// Disjoint train/validation/test graph sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<NamedGraph>,
    pub validation: Vec<NamedGraph>,
    pub test: Vec<NamedGraph>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split_seed: u64,
    pub train: Vec<PathBuf>,
    pub validation: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl Corpus {
    /// Shuffles `graphs` with `seed` and cuts it into sets of the given sizes.
    pub fn split(mut graphs: Vec<NamedGraph>, train: usize, validation: usize, seed: u64) -> Result<Self, Error> {
        if train + validation > graphs.len() {
            return Err(Error::InvalidArgument(format!(
                "{train} train + {validation} validation graphs requested from {}",
                graphs.len()
            )));
        }
        graphs.shuffle(&mut rng_from_seed(seed));
        let test = graphs.split_off(train + validation);
        let validation_set = graphs.split_off(train);
        Ok(Corpus { train: graphs, validation: validation_set, test, split_seed: seed })
    }

    /// `count` generated graphs cycling through `families`, node counts drawn
    /// uniformly from `nodes`, then split.
    pub fn synthetic(
        families: &[GraphFamily],
        count: usize,
        nodes: (usize, usize),
        sizes: (usize, usize),
        seed: u64,
    ) -> Result<Self, Error> {
        if families.is_empty() {
            return Err(Error::InvalidArgument("no graph families given".into()));
        }
        let mut graphs = Vec::with_capacity(count);
        for k in 0..count {
            let family = families[k % families.len()];
            let s = derive_seed(&[seed, k as u64]);
            let span = (nodes.1.saturating_sub(nodes.0) + 1) as u64;
            let n = nodes.0 + (s % span) as usize;
            let graph = generate_synthetic(&GeneratorConfig::new(family, n, s))?;
            graphs.push(NamedGraph { name: format!("{}-{k:03}", family.name()), graph });
        }
        Corpus::split(graphs, sizes.0, sizes.1, seed)
    }

    /// Reads a manifest; graph paths are relative to the manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Self, Error> {
        let m: Manifest = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let load = |list: &[PathBuf]| -> Result<Vec<NamedGraph>, Error> {
            list.iter()
                .map(|p| {
                    let graph = ComputationGraph::load(&base.join(p))?;
                    Ok(NamedGraph { name: p.display().to_string(), graph })
                })
                .collect()
        };
        let corpus = Corpus {
            train: load(&m.train)?,
            validation: load(&m.validation)?,
            test: load(&m.test)?,
            split_seed: m.split_seed,
        };
        let mut fps: Vec<u64> = corpus.all().map(|g| g.graph.fingerprint()).collect();
        let total = fps.len();
        fps.sort_unstable();
        fps.dedup();
        if fps.len() != total {
            log::warn!("manifest {} lists the same graph more than once", path.display());
        }
        Ok(corpus)
    }

    /// Writes every graph as `<dir>/<set>/<name>.json` plus `<dir>/manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        let mut manifest = Manifest { split_seed: self.split_seed, train: vec![], validation: vec![], test: vec![] };
        for (set, graphs, out) in [
            ("train", &self.train, &mut manifest.train),
            ("validation", &self.validation, &mut manifest.validation),
            ("test", &self.test, &mut manifest.test),
        ] {
            std::fs::create_dir_all(dir.join(set))?;
            for g in graphs {
                let rel = PathBuf::from(set).join(format!("{}.json", g.name));
                std::fs::write(dir.join(&rel), g.graph.to_json_string())?;
                out.push(rel);
            }
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    pub fn all(&self) -> impl Iterator<Item = &NamedGraph> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Sample count at save time; also the checkpoint's file stem.
    pub id: usize,
    pub zeroshot_score: Option<f64>,
    pub finetune_score: Option<f64>,
}

/// Path of checkpoint `id` under `dir`.
pub fn checkpoint_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id}.ckpt"))
}

/// Round-robin training over `corpus.train` with one shared parameter set:
/// each visit runs one batch of `cfg.num_rollouts` rollouts on the next
/// graph followed by an update. `on_checkpoint` is called every time the
/// sample count crosses a multiple of `checkpoint_every`. Graphs whose
/// rollouts fail are skipped with a warning.
pub fn pretrain(
    corpus: &Corpus,
    topo: &ChipTopology,
    init: PolicyParams,
    cfg: &PpoConfig,
    evaluator: &Evaluator,
    total_samples: usize,
    checkpoint_every: usize,
    seed: u64,
    mut on_checkpoint: impl FnMut(&CheckpointRecord, &PolicyParams) -> Result<(), Error>,
) -> Result<(PolicyParams, Vec<CheckpointRecord>), Error> {
    cfg.validate().map_err(RlError::Config)?;
    if corpus.train.is_empty() {
        return Err(Error::InvalidArgument("corpus has no training graphs".into()));
    }
    if checkpoint_every == 0 {
        return Err(Error::InvalidArgument("checkpoint_every must be positive".into()));
    }
    let envs: Vec<RlEnv> = corpus.train.iter().map(|g| RlEnv::new(&g.graph, topo, evaluator)).collect();
    let mut alive = vec![true; envs.len()];
    let mut params = init;
    let mut samples = 0;
    let mut records = Vec::new();
    let mut visit = 0usize;
    while samples < total_samples {
        if !alive.iter().any(|&a| a) {
            return Err(Error::InvalidArgument("every training graph failed".into()));
        }
        let k = visit % envs.len();
        visit += 1;
        if !alive[k] {
            continue;
        }
        let count = cfg.num_rollouts.min(total_samples - samples);
        let batch = match rl::collect_batch(&envs[k], &params, cfg, seed, samples, count) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("skipping training graph {}: {e}", corpus.train[k].name);
                alive[k] = false;
                continue;
            }
        };
        if batch.len() == cfg.num_rollouts {
            let mut rng = rng_from_seed(derive_seed(&[seed, 0x9e7, samples as u64]));
            match rl::ppo_update(&params, &envs[k], &batch, cfg, &mut rng) {
                Ok((next, _)) => params = next,
                Err(RlError::NonFiniteLoss) => {
                    log::warn!("non-finite loss on {}; update skipped", corpus.train[k].name)
                }
                Err(e) => return Err(e.into()),
            }
        }
        let before = samples;
        samples += batch.len();
        if samples / checkpoint_every > before / checkpoint_every {
            let rec = CheckpointRecord { id: samples, zeroshot_score: None, finetune_score: None };
            on_checkpoint(&rec, &params)?;
            records.push(rec);
        }
    }
    Ok((params, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    ZeroShot,
    #[default]
    FineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub zeroshot_samples: usize,
    pub finetune_budget: usize,
    pub criterion: SelectionCriterion,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            zeroshot_samples: 20,
            finetune_budget: 100,
            criterion: SelectionCriterion::FineTune,
            seed: 0,
        }
    }
}

/// Index of the best record by `criterion`; ties go to the earlier record.
pub fn select(records: &[CheckpointRecord], criterion: SelectionCriterion) -> Option<usize> {
    let score = |r: &CheckpointRecord| match criterion {
        SelectionCriterion::ZeroShot => r.zeroshot_score,
        SelectionCriterion::FineTune => r.finetune_score,
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(s) = score(r) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn mean_best_reward(
    params: &PolicyParams,
    graphs: &[NamedGraph],
    topo: &ChipTopology,
    evaluator: &Evaluator,
    cfg: &PpoConfig,
    samples: usize,
    seed: u64,
    learn: bool,
) -> Result<f64, Error> {
    let mut total = 0.0;
    for (k, g) in graphs.iter().enumerate() {
        let env = RlEnv::new(&g.graph, topo, evaluator);
        let budget = SearchBudget::new(samples, derive_seed(&[seed, k as u64]));
        let trace = if learn {
            rl::fine_tune(params, &env, cfg, &budget)?.1
        } else {
            rl::zero_shot(params, &env, cfg, &budget)?
        };
        total += trace.best() / env.reference;
    }
    Ok(total / graphs.len() as f64)
}

/// Scores every checkpoint on the validation graphs (mean over graphs of the
/// best heuristic-relative throughput, zero-shot and after a short
/// fine-tune) and returns the scored records with the selected index.
/// `load` fetches a checkpoint's parameters by id; it is called once per id.
pub fn validate(
    ids: &[usize],
    mut load: impl FnMut(usize) -> Result<PolicyParams, Error>,
    validation: &[NamedGraph],
    topo: &ChipTopology,
    evaluator: &Evaluator,
    cfg: &PpoConfig,
    vcfg: &ValidationConfig,
) -> Result<(Vec<CheckpointRecord>, usize), Error> {
    if ids.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("validation needs at least one checkpoint and one graph".into()));
    }
    let mut records = Vec::with_capacity(ids.len());
    for &id in ids {
        let params = load(id)?;
        let zs = mean_best_reward(&params, validation, topo, evaluator, cfg, vcfg.zeroshot_samples, vcfg.seed, false)?;
        let ft = mean_best_reward(&params, validation, topo, evaluator, cfg, vcfg.finetune_budget, vcfg.seed, true)?;
        log::info!("checkpoint {id}: zero-shot {zs:.4} fine-tune {ft:.4}");
        records.push(CheckpointRecord { id, zeroshot_score: Some(zs), finetune_score: Some(ft) });
    }
    let best = select(&records, vcfg.criterion).expect("every record is scored");
    Ok((records, best))
}

/// CSV with header `checkpoint,zeroshot_score,finetune_score`.
pub fn write_validation_csv<W: std::io::Write>(records: &[CheckpointRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["checkpoint", "zeroshot_score", "finetune_score"])?;
    let fmt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    for r in records {
        out.write_record([r.id.to_string(), fmt(r.zeroshot_score), fmt(r.finetune_score)])?;
    }
    out.flush()?;
    Ok(())
}

/// Frozen-parameter rollouts on a new graph.
pub fn zero_shot(
    ck: &PolicyParams,
    g: &ComputationGraph,
    topo: &ChipTopology,
    evaluator: &Evaluator,
    cfg: &PpoConfig,
    budget: &SearchBudget,
) -> Result<SearchTrace, RlError> {
    rl::zero_shot(ck, &RlEnv::new(g, topo, evaluator), cfg, budget)
}

/// Training on a new graph warm-started from `ck`.
pub fn fine_tune(
    ck: &PolicyParams,
    g: &ComputationGraph,
    topo: &ChipTopology,
    evaluator: &Evaluator,
    cfg: &PpoConfig,
    budget: &SearchBudget,
) -> Result<(PolicyParams, SearchTrace), RlError> {
    rl::fine_tune(ck, &RlEnv::new(g, topo, evaluator), cfg, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let fam = [GraphFamily::Chain, GraphFamily::Layered];
        let a = Corpus::synthetic(&fam, 12, (4, 9), (7, 2), 5).unwrap();
        let b = Corpus::synthetic(&fam, 12, (4, 9), (7, 2), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (7, 2, 3));
        let mut names: Vec<&str> = a.all().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 12);
        assert!(a.all().all(|g| (4..=9).contains(&g.graph.num_nodes())));
        let c = Corpus::synthetic(&fam, 12, (4, 9), (7, 2), 6).unwrap();
        assert_ne!(a.train, c.train);
        assert!(Corpus::synthetic(&fam, 3, (4, 9), (3, 1), 6).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let corpus = Corpus::synthetic(&[GraphFamily::RnnLike], 5, (6, 8), (3, 1), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = corpus.write(dir.path()).unwrap();
        let back = Corpus::load_manifest(&path).unwrap();
        assert_eq!(back.split_seed, 2);
        for (x, y) in corpus.all().zip(back.all()) {
            assert_eq!(x.graph, y.graph);
        }
    }

    #[test]
    fn selection_prefers_earlier_on_ties() {
        let r = |id, z, f| CheckpointRecord { id, zeroshot_score: Some(z), finetune_score: Some(f) };
        let recs = [r(10, 0.5, 0.9), r(20, 0.8, 0.9), r(30, 0.8, 0.7)];
        assert_eq!(select(&recs, SelectionCriterion::FineTune), Some(0));
        assert_eq!(select(&recs, SelectionCriterion::ZeroShot), Some(1));
        assert_eq!(select(&[], SelectionCriterion::ZeroShot), None);
    }

    #[test]
    fn validation_csv_header() {
        let mut buf = Vec::new();
        let recs = [CheckpointRecord { id: 40, zeroshot_score: Some(1.25), finetune_score: Some(1.5) }];
        write_validation_csv(&recs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "checkpoint,zeroshot_score,finetune_score\n40,1.25,1.5\n");
    }
}
