//! Pipeline stages over a persisted artifacts directory. Each stage reads
//! the artifacts of earlier stages and writes its own atomically.

use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterKind};
use crate::artifact::write_atomic;
use crate::car::{build_training_pairs, train_car_adapter, BehaviorIndex, CarTrainReport};
use crate::config::{DataFormat, ProviderKind, RunConfig};
use crate::corpus::{
    movielens, read_interactions, temporal_split, CorpusStats, IngestOptions, Interaction,
    InteractionCorpus, SplitSpec,
};
use crate::crm::{train_bpr_mf, CrmModel, CrmTrainReport};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_report, EvalReport};
use crate::providers::{
    HashEmbedder, LanguageModel, RemoteEmbedder, RemoteLlm, RemoteLlmConfig, StubLlm, TextEmbedder,
};
use crate::recommender::{read_predictions, write_predictions, Pipeline, TestPair};
use crate::sare::{
    build_instances, build_rankings, generate_assessments, read_assessments, sample_targets,
    train_sare_adapter, write_assessments, SareTrainReport,
};

/// Fixed artifact file names inside the artifacts directory.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    dir: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ArtifactPaths { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn corpus(&self) -> PathBuf {
        self.file("corpus.tsv")
    }
    pub fn items(&self) -> PathBuf {
        self.file("items.tsv")
    }
    pub fn split_spec(&self) -> PathBuf {
        self.file("split.json")
    }
    pub fn partition(&self, name: &str) -> PathBuf {
        self.file(&format!("{name}.tsv"))
    }
    pub fn crm(&self) -> PathBuf {
        self.file("crm.bin")
    }
    pub fn car(&self) -> PathBuf {
        self.file("car.adp")
    }
    pub fn index(&self) -> PathBuf {
        self.file("index.emb")
    }
    pub fn assessments(&self) -> PathBuf {
        self.file("assessments.jsonl")
    }
    pub fn sare(&self) -> PathBuf {
        self.file("sare.adp")
    }
    pub fn predictions(&self) -> PathBuf {
        self.file("predictions.jsonl")
    }
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::artifact(path, e.to_string()))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "required input is missing"),
        ))
    }
}

pub fn embedder(cfg: &RunConfig) -> Result<Box<dyn TextEmbedder>> {
    Ok(match cfg.providers.kind {
        ProviderKind::Stub => Box::new(HashEmbedder::new(cfg.embedding.dim)?),
        ProviderKind::Remote => {
            let endpoint = cfg.providers.embed_endpoint.clone().unwrap_or_default();
            Box::new(
                RemoteEmbedder::new(endpoint, cfg.embedding.dim, Duration::from_secs(cfg.providers.timeout_secs))?
                    .with_concurrency(cfg.providers.concurrency),
            )
        }
    })
}

/// The stub model needs the item catalogue; the remote one does not.
pub fn language_model(cfg: &RunConfig, corpus: &InteractionCorpus) -> Result<Box<dyn LanguageModel>> {
    Ok(match cfg.providers.kind {
        ProviderKind::Stub => Box::new(StubLlm::from_items(corpus.items())),
        ProviderKind::Remote => Box::new(RemoteLlm::new(RemoteLlmConfig {
            endpoint: cfg.providers.llm_endpoint.clone().unwrap_or_default(),
            model: cfg.providers.model.clone(),
            timeout_secs: cfg.providers.timeout_secs,
            max_retries: cfg.providers.max_retries,
            ..RemoteLlmConfig::default()
        })?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub stats: CorpusStats,
    pub window_start: Option<i64>,
    pub split: Option<SplitBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: i64,
    pub val_end: i64,
}

/// Reads the raw data, applies the configured filters and writes the
/// normalised corpus. MovieLens input also fixes the split boundaries.
pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    require(&cfg.paths.interactions)?;
    require(&cfg.paths.items)?;
    let mut options = cfg.data.ingest_options();
    let (corpus, split) = match cfg.data.format {
        DataFormat::Tsv => (
            InteractionCorpus::ingest(&cfg.paths.interactions, &cfg.paths.items, &options)?,
            None,
        ),
        DataFormat::Movielens => {
            let records = movielens::read_ratings(&cfg.paths.interactions)?;
            let items = movielens::read_movies(&cfg.paths.items)?;
            let protocol = movielens::protocol(&records)?;
            options.window_start = Some(options.window_start.unwrap_or(protocol.window_start));
            let split = SplitBounds {
                train_end: protocol.split.train_end,
                val_end: protocol.split.val_end,
            };
            (InteractionCorpus::from_records(records, items, &options)?, Some(split))
        }
    };
    let mut buf = Vec::new();
    corpus.write_interactions(&mut buf).map_err(|e| Error::io(paths.corpus(), e))?;
    write_atomic(paths.corpus(), &buf)?;
    let mut buf = Vec::new();
    corpus.write_metadata(&mut buf).map_err(|e| Error::io(paths.items(), e))?;
    write_atomic(paths.items(), &buf)?;
    let summary = IngestSummary {
        stats: corpus.stats(),
        window_start: options.window_start,
        split,
    };
    write_json(paths.file("ingest.json"), &summary)?;
    Ok(summary)
}

/// The normalised corpus written by [`ingest`].
pub fn load_corpus(cfg: &RunConfig) -> Result<InteractionCorpus> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    require(&paths.corpus())?;
    let options = IngestOptions {
        binarize_threshold: cfg.data.binarize_threshold,
        ..IngestOptions::default()
    };
    InteractionCorpus::ingest(paths.corpus(), paths.items(), &options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub bounds: SplitBounds,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

fn split_bounds(cfg: &RunConfig, paths: &ArtifactPaths) -> Result<SplitBounds> {
    match (cfg.data.train_end, cfg.data.val_end) {
        (Some(train_end), Some(val_end)) => Ok(SplitBounds { train_end, val_end }),
        (None, None) => {
            let ingest: IngestSummary = read_json(paths.file("ingest.json"))?;
            ingest
                .split
                .ok_or_else(|| Error::config("train_end", "split boundaries are required for this data format"))
        }
        (None, _) => Err(Error::config("train_end", "must be set together with val_end")),
        (_, None) => Err(Error::config("val_end", "must be set together with train_end")),
    }
}

pub fn split(cfg: &RunConfig) -> Result<SplitSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let corpus = load_corpus(cfg)?;
    let bounds = split_bounds(cfg, &paths)?;
    let spec = SplitSpec::new(bounds.train_end, bounds.val_end)?;
    let parts = temporal_split(&corpus, &spec)?;
    for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        let mut buf = Vec::new();
        corpus.write_subset(part, &mut buf).map_err(|e| Error::io(paths.partition(name), e))?;
        write_atomic(paths.partition(name), &buf)?;
    }
    write_json(paths.split_spec(), &bounds)?;
    Ok(SplitSummary {
        bounds,
        train: parts.train.len(),
        val: parts.val.len(),
        test: parts.test.len(),
    })
}

/// Interactions of a written partition, resolved against `corpus`.
pub fn load_partition(cfg: &RunConfig, corpus: &InteractionCorpus, name: &str) -> Result<Vec<Interaction>> {
    let path = ArtifactPaths::new(&cfg.paths.artifacts).partition(name);
    require(&path)?;
    read_interactions(&path)?
        .into_iter()
        .map(|r| {
            Ok(Interaction {
                user: corpus.user_ix(&r.user_id)?,
                item: corpus.item_ix(&r.item_id)?,
                rating: r.rating,
                label: r.rating >= cfg.data.binarize_threshold,
                timestamp: r.timestamp,
            })
        })
        .collect()
}

/// The training partition as a corpus sharing the full user/item tables.
pub fn training_corpus(cfg: &RunConfig) -> Result<InteractionCorpus> {
    let full = load_corpus(cfg)?;
    let train = load_partition(cfg, &full, "train")?;
    Ok(full.restrict(&train))
}

pub fn train_crm(cfg: &RunConfig) -> Result<CrmTrainReport> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let train = training_corpus(cfg)?;
    let (model, report) = train_bpr_mf(&train, &cfg.crm_config()?, cfg.crm_mode()?)?;
    model.save(paths.crm())?;
    write_json(paths.file("crm_report.json"), &report)?;
    Ok(report)
}

pub fn train_car(cfg: &RunConfig) -> Result<CarTrainReport> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let train = training_corpus(cfg)?;
    require(&paths.crm())?;
    let crm = CrmModel::load(paths.crm(), cfg.crm_mode()?)?;
    let car = cfg.car_config();
    let pairs = build_training_pairs(&train, &crm, car.k_c)?;
    info!("{} training anchors, {} skipped", pairs.entries.len(), pairs.skipped_anchors);
    let embedder = embedder(cfg)?;
    let (adapter, report) = train_car_adapter(&pairs, &train, embedder.as_ref(), &car)?;
    adapter.save(paths.car())?;
    write_json(paths.file("car_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub rows: usize,
    pub dim: usize,
}

pub fn build_index(cfg: &RunConfig) -> Result<IndexSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let train = training_corpus(cfg)?;
    require(&paths.car())?;
    let car = Adapter::load(paths.car(), AdapterKind::Retriever)?;
    let embedder = embedder(cfg)?;
    let index = BehaviorIndex::build(&car, &train, embedder.as_ref(), cfg.embedding.max_items)?;
    index.save(paths.index())?;
    Ok(IndexSummary {
        rows: index.len(),
        dim: index.dim(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessSummary {
    pub targets: usize,
    pub records: usize,
    pub skipped: usize,
}

pub fn assess(cfg: &RunConfig) -> Result<AssessSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let train = training_corpus(cfg)?;
    let sare = cfg.sare_config();
    let targets = sample_targets(&train, sare.sample_users, cfg.embedding.max_items, sare.seed)?;
    let embedder = embedder(cfg)?;
    let llm = language_model(cfg, &train)?;
    let (records, skipped) = generate_assessments(
        llm.as_ref(),
        &train,
        &targets,
        embedder.as_ref(),
        &cfg.prompts,
        cfg.providers.concurrency,
    )?;
    write_assessments(paths.assessments(), &records)?;
    Ok(AssessSummary {
        targets: targets.len(),
        records: records.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SareSummary {
    pub rankings: usize,
    pub short_rankings: usize,
    #[serde(flatten)]
    pub report: SareTrainReport,
}

pub fn train_sare(cfg: &RunConfig) -> Result<SareSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let train = training_corpus(cfg)?;
    for p in [paths.assessments(), paths.car(), paths.index()] {
        require(&p)?;
    }
    let records = read_assessments(paths.assessments())?;
    let car = Adapter::load(paths.car(), AdapterKind::Retriever)?;
    let index = BehaviorIndex::load(paths.index())?;
    let embedder = embedder(cfg)?;
    let max_items = cfg.embedding.max_items;
    let rankings = build_rankings(&records, &train, &car, &index, embedder.as_ref(), cfg.inference.k_e, max_items)?;
    let sare = cfg.sare_config();
    let (instances, short) = build_instances(&rankings, &train, &cfg.prompts, &sare, max_items)?;
    let (adapter, report) = train_sare_adapter(&instances, embedder.as_ref(), &sare)?;
    adapter.save(paths.sare())?;
    let summary = SareSummary {
        rankings: rankings.len(),
        short_rankings: short,
        report,
    };
    write_json(paths.file("sare_report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub pairs: usize,
    pub scored: usize,
    pub cold_start: usize,
}

/// Scores every labelled test pair; behaviour texts come from the training
/// partition.
pub fn predict(cfg: &RunConfig) -> Result<PredictSummary> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let full = load_corpus(cfg)?;
    let train = full.restrict(&load_partition(cfg, &full, "train")?);
    let test = load_partition(cfg, &full, "test")?;
    let pairs: Vec<TestPair> = test
        .iter()
        .map(|x| TestPair {
            user: full.user_key(x.user).to_string(),
            item: full.item(x.item).item_id.clone(),
            label: x.label,
        })
        .collect();
    let embedder = embedder(cfg)?;
    let llm = language_model(cfg, &train)?;
    let inference = cfg.inference_config();
    let mut pipeline = Pipeline::new(&train, embedder.as_ref(), llm.as_ref(), &cfg.prompts, inference);
    let retrieval;
    let reranker;
    if inference.k_s > 0 {
        for p in [paths.car(), paths.index(), paths.sare()] {
            require(&p)?;
        }
        retrieval = (
            Adapter::load(paths.car(), AdapterKind::Retriever)?,
            BehaviorIndex::load(paths.index())?,
        );
        reranker = Adapter::load(paths.sare(), AdapterKind::Reranker)?;
        pipeline = pipeline.with_retriever(&retrieval.0, &retrieval.1).with_reranker(&reranker);
    }
    let (records, cold) = pipeline.recommend_all(&pairs)?;
    write_predictions(paths.predictions(), &records)?;
    Ok(PredictSummary {
        pairs: pairs.len(),
        scored: records.len(),
        cold_start: cold,
    })
}

pub fn evaluate_predictions(cfg: &RunConfig) -> Result<EvalReport> {
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    require(&paths.predictions())?;
    let records = read_predictions(paths.predictions())?;
    let report = evaluate(&records, &cfg.digest(), cfg.seed)?;
    write_report(cfg.report_path(), &report)?;
    Ok(report)
}

/// Every stage in order. With `k_s = 0` the retrieval and reranking stages
/// are skipped, since the basic prompt needs none of their artifacts.
pub fn run_experiment(cfg: &RunConfig) -> Result<EvalReport> {
    let ingested = ingest(cfg)?;
    info!("ingested {:?}", ingested.stats);
    let s = split(cfg)?;
    info!("split train={} val={} test={}", s.train, s.val, s.test);
    if cfg.inference.k_s > 0 {
        train_crm(cfg)?;
        let car = train_car(cfg)?;
        info!("car loss {:.4} -> {:.4}", car.initial_loss, car.final_loss);
        build_index(cfg)?;
        assess(cfg)?;
        let sare = train_sare(cfg)?;
        info!("sare loss {:.4} -> {:.4}", sare.report.initial_loss, sare.report.final_loss);
    }
    let p = predict(cfg)?;
    info!("scored {} of {} test pairs", p.scored, p.pairs);
    evaluate_predictions(cfg)
}
