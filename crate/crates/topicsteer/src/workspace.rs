//! Pipeline stages over a workspace directory.
//!
//! Each stage reads named artifacts written by earlier stages, writes its own
//! artifacts and a `<stage>.meta.json` sidecar holding the config echo and the
//! SHA-256 of every input and output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicsteer_core::auto_eval::{classify_generated, compare_parametrizations, Comparison, ConfusionMatrix};
use topicsteer_core::corpus::{build_vocab, bow_encode, chunk_sequences, Document, TokenSequence, Vocabulary};
use topicsteer_core::discriminator::{train_discriminator, DiscConfig, DiscReport, Discriminator};
use topicsteer_core::lm::{train_lm, LmConfig, LmParams};
use topicsteer_core::metrics::{evaluate_rankings, sweep, Cooccurrence, MetricsReport, SweepRow};
use topicsteer_core::steering::{GenerationRecord, Generator, SteeringConfig};
use topicsteer_core::synth::planted_corpus;
use topicsteer_core::topic_model::{
    content_word_embeddings, embed_document, label_corpus, train_topic_model, LabeledCorpus, LabeledDoc, TopicInputs,
    TopicModel, TopicModelConfig, TrainedTopicModel,
};

use crate::config::PipelineConfig;
use crate::container;
use crate::error::{AtStage, Kind, StageError, StageResult};
use crate::io::{self, fmt_f64, fmt_opt, CorpusFormat};

pub const CORPUS: &str = "corpus.jsonl";
pub const DOCUMENTS: &str = "documents.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const SEQUENCES: &str = "sequences.jsonl";
pub const BOW: &str = "bow.jsonl";
pub const LM: &str = "lm.bin";
pub const LM_LOSS: &str = "lm_loss.csv";
pub const TM_SWEEP: &str = "tm_sweep.csv";
pub const TOPIC_MODEL: &str = "topic_model.bin";
pub const TM_LOSS: &str = "tm_loss.csv";
pub const TM_TOPICS: &str = "tm_topics.txt";
pub const TM_METRICS: &str = "tm_metrics.json";
pub const LABELS: &str = "labels.jsonl";
pub const LABEL_COUNTS: &str = "label_counts.csv";
pub const DISC: &str = "disc.bin";
pub const DISC_REPORT: &str = "disc_report.csv";
pub const DISC_REPORT_JSON: &str = "disc_report.json";
pub const DISC_LOSS: &str = "disc_loss.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const REPORT_DIR: &str = "report";

const TOP_WORDS_SHOWN: usize = 10;

pub fn generations_name(tag: &str) -> String {
    format!("generations_{tag}.jsonl")
}

pub fn generations_summary_name(tag: &str) -> String {
    format!("generations_{tag}_summary.csv")
}

pub fn confusion_name(tag: &str, ext: &str) -> String {
    format!("confusion_{tag}.{ext}")
}

/// Tags become file-name components.
pub fn validate_tag(stage: &'static str, tag: &str) -> StageResult<()> {
    if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(StageError::validation(stage, format!("tag {tag:?} must be non-empty [A-Za-z0-9_-]")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct StageMeta<'a, C: Serialize> {
    stage: &'a str,
    config: &'a C,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmMeta {
    pub config: LmConfig,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicModelMeta {
    pub config: TopicModelConfig,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscMeta {
    pub classes: Vec<usize>,
    pub d_model: usize,
    pub config: DiscConfig,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BowRecord {
    doc_id: String,
    /// Sparse `(content id, count)` pairs, ascending id.
    counts: Vec<(usize, u32)>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn require(&self, stage: &'static str, name: &str) -> StageResult<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(StageError::missing(stage, p))
        }
    }

    fn hashes(&self, stage: &'static str, names: &[&str]) -> StageResult<BTreeMap<String, String>> {
        names.iter().map(|n| Ok((n.to_string(), io::sha256_file(&self.require(stage, n)?).at(stage)?))).collect()
    }

    fn finish<C: Serialize>(
        &self,
        stage: &'static str,
        meta_name: &str,
        config: &C,
        inputs: &[&str],
        outputs: &[&str],
    ) -> StageResult<()> {
        let meta = StageMeta {
            stage,
            config,
            inputs: self.hashes(stage, inputs)?,
            outputs: self.hashes(stage, outputs)?,
        };
        io::write_json(&self.path(&format!("{meta_name}.meta.json")), &meta).at(stage)
    }

    pub fn documents(&self, stage: &'static str) -> StageResult<Vec<Document>> {
        io::load_corpus(&self.require(stage, DOCUMENTS)?, CorpusFormat::Jsonl).at(stage)
    }

    pub fn vocab(&self, stage: &'static str) -> StageResult<Vocabulary> {
        io::read_vocab(&self.require(stage, VOCAB)?).at(stage)
    }

    pub fn bows(&self, stage: &'static str, vocab: &Vocabulary) -> StageResult<Vec<Vec<u32>>> {
        let recs: Vec<BowRecord> = io::read_jsonl(&self.require(stage, BOW)?).at(stage)?;
        recs.into_iter()
            .map(|r| {
                let mut b = vec![0u32; vocab.content_len()];
                for (id, c) in r.counts {
                    *b.get_mut(id).ok_or_else(|| {
                        StageError::validation(stage, format!("{BOW}: content id {id} out of range for {}", r.doc_id))
                    })? = c;
                }
                Ok(b)
            })
            .collect()
    }

    pub fn lm(&self, stage: &'static str) -> StageResult<LmParams> {
        let (meta, tensors): (LmMeta, _) = container::read(&self.require(stage, LM)?, "lm").at(stage)?;
        LmParams::from_tensors(meta.config, tensors).at(stage)
    }

    pub fn topic_model(&self, stage: &'static str) -> StageResult<TopicModel> {
        let (m, tensors): (TopicModelMeta, _) =
            container::read(&self.require(stage, TOPIC_MODEL)?, "topic_model").at(stage)?;
        TopicModel::from_tensors(m.config, m.embed_dim, m.vocab_size, tensors).at(stage)
    }

    pub fn discriminator(&self, stage: &'static str) -> StageResult<Discriminator> {
        let (m, mut tensors): (DiscMeta, Vec<(String, _)>) =
            container::read(&self.require(stage, DISC)?, "discriminator").at(stage)?;
        if tensors.len() != 2 {
            return Err(StageError::validation(stage, format!("{DISC}: expected 2 tensors, got {}", tensors.len())));
        }
        let (_, bias) = tensors.pop().unwrap();
        let (_, weight) = tensors.pop().unwrap();
        Discriminator::from_tensors(m.classes, weight, bias).at(stage)
    }

    pub fn labels(&self, stage: &'static str) -> StageResult<LabeledCorpus> {
        let docs: Vec<LabeledDoc> = io::read_jsonl(&self.require(stage, LABELS)?).at(stage)?;
        let k = docs.first().map(|d| d.theta.len()).ok_or_else(|| StageError::validation(stage, "no labels"))?;
        let mut counts = vec![0usize; k];
        let mut retained = std::collections::BTreeSet::new();
        for d in &docs {
            *counts.get_mut(d.label).ok_or_else(|| StageError::validation(stage, "label out of range"))? += 1;
            if d.retained {
                retained.insert(d.label);
            }
        }
        Ok(LabeledCorpus { docs, retained_topics: retained.into_iter().collect(), label_counts: counts })
    }

    pub fn generations(&self, stage: &'static str, tag: &str) -> StageResult<Vec<GenerationRecord>> {
        io::read_jsonl(&self.require(stage, &generations_name(tag))?).at(stage)
    }

    pub fn confusion(&self, stage: &'static str, tag: &str) -> StageResult<ConfusionMatrix> {
        io::read_json(&self.require(stage, &confusion_name(tag, "json"))?).at(stage)
    }
}

fn numerical(stage: &'static str, msg: impl Into<String>) -> StageError {
    StageError::new(stage, Kind::Numerical, msg)
}

fn doc_embeddings(stage: &'static str, docs: &[Document], vocab: &Vocabulary, lm: &LmParams) -> StageResult<Vec<Vec<f64>>> {
    docs.iter()
        .map(|d| embed_document(d, vocab, lm).map_err(|e| StageError::validation(stage, format!("document {}: {e}", d.id))))
        .collect()
}

fn topic_inputs(ws: &Workspace, stage: &'static str) -> StageResult<(Vec<Document>, Vocabulary, LmParams, TopicInputs)> {
    let docs = ws.documents(stage)?;
    let vocab = ws.vocab(stage)?;
    let lm = ws.lm(stage)?;
    let bows = ws.bows(stage, &vocab)?;
    if bows.len() != docs.len() {
        return Err(StageError::validation(stage, format!("{} bags of words for {} documents", bows.len(), docs.len())));
    }
    let embeddings = doc_embeddings(stage, &docs, &vocab, &lm)?;
    Ok((docs, vocab, lm, TopicInputs { embeddings, bows }))
}

// ---------------------------------------------------------------- stages

pub fn synth(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<usize> {
    const S: &str = "synth";
    let sc = cfg.synth_config();
    let docs = planted_corpus(&sc).at(S)?;
    io::write_corpus(&ws.path(CORPUS), &docs).at(S)?;
    ws.finish(S, S, &sc, &[], &[CORPUS])?;
    Ok(docs.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub dropped_empty: usize,
    pub sequences: usize,
    pub seq_vocab: usize,
    pub content_vocab: usize,
}

pub fn ingest(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<IngestSummary> {
    const S: &str = "ingest";
    let (path, format) = match &cfg.corpus.path {
        Some(p) => (p.clone(), cfg.corpus.format),
        None => (ws.require(S, CORPUS)?, CorpusFormat::Jsonl),
    };
    let raw = io::load_corpus(&path, format).at(S)?;
    let opts = cfg.vocab.options();
    let n_raw = raw.len();
    let docs: Vec<Document> = raw
        .into_iter()
        .filter(|d| !topicsteer_core::corpus::tokenize(&d.text, opts.lowercase).is_empty())
        .collect();
    if docs.len() < n_raw {
        log::warn!("ingest: dropped {} document(s) without tokens", n_raw - docs.len());
    }
    let vocab = build_vocab(&docs, opts).at(S)?;
    let seqs = chunk_sequences(&docs, &vocab, cfg.lm.max_len.saturating_sub(2)).at(S)?;
    let bows: Vec<BowRecord> = docs
        .iter()
        .map(|d| BowRecord {
            doc_id: d.id.clone(),
            counts: bow_encode(d, &vocab).into_iter().enumerate().filter(|(_, c)| *c > 0).collect(),
        })
        .collect();
    io::write_corpus(&ws.path(DOCUMENTS), &docs).at(S)?;
    io::write_vocab(&ws.path(VOCAB), &vocab).at(S)?;
    io::write_jsonl(&ws.path(SEQUENCES), &seqs).at(S)?;
    io::write_jsonl(&ws.path(BOW), &bows).at(S)?;
    let summary = IngestSummary {
        documents: docs.len(),
        dropped_empty: n_raw - docs.len(),
        sequences: seqs.len(),
        seq_vocab: vocab.seq_len(),
        content_vocab: vocab.content_len(),
    };
    #[derive(Serialize)]
    struct Echo<'a> {
        corpus: &'a crate::config::CorpusSection,
        vocab: &'a crate::config::VocabSection,
        max_len: usize,
        input_sha256: String,
        summary: &'a IngestSummary,
    }
    let echo = Echo {
        corpus: &cfg.corpus,
        vocab: &cfg.vocab,
        max_len: cfg.lm.max_len,
        input_sha256: io::sha256_file(&path).at(S)?,
        summary: &summary,
    };
    ws.finish(S, S, &echo, &[], &[DOCUMENTS, VOCAB, SEQUENCES, BOW])?;
    Ok(summary)
}

pub fn lm_train(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<Vec<f64>> {
    const S: &str = "lm-train";
    let vocab = ws.vocab(S)?;
    let seqs: Vec<TokenSequence> = io::read_jsonl(&ws.require(S, SEQUENCES)?).at(S)?;
    let lc = cfg.lm_config(vocab.seq_len());
    let (lm, curve) = train_lm(&seqs, lc.clone()).at(S)?;
    let inputs = ws.hashes(S, &[VOCAB, SEQUENCES])?;
    let tensors: Vec<(&str, _)> = lm.params().iter().map(|p| (p.name.as_str(), &p.value)).collect();
    container::write(&ws.path(LM), "lm", &LmMeta { config: lc.clone(), inputs }, &tensors).at(S)?;
    let rows: Vec<Vec<String>> = curve.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt_f64(*l)]).collect();
    io::write_csv(&ws.path(LM_LOSS), &["epoch", "loss"], &rows).at(S)?;
    ws.finish(S, S, &lc, &[VOCAB, SEQUENCES], &[LM, LM_LOSS])?;
    Ok(curve)
}

fn write_topic_model(
    ws: &Workspace,
    stage: &'static str,
    trained: &TrainedTopicModel,
    vocab: &Vocabulary,
    report: &MetricsReport,
    inputs: &[&str],
) -> StageResult<()> {
    let m = &trained.model;
    let meta = TopicModelMeta {
        config: m.config().clone(),
        embed_dim: m.embed_dim(),
        vocab_size: m.vocab_size(),
        inputs: ws.hashes(stage, inputs)?,
    };
    let tensors: Vec<(&str, _)> = m.params().iter().map(|p| (p.name.as_str(), &p.value)).collect();
    container::write(&ws.path(TOPIC_MODEL), "topic_model", &meta, &tensors).at(stage)?;
    let rows: Vec<Vec<String>> = trained
        .loss_curve
        .iter()
        .zip(&trained.kl_curve)
        .enumerate()
        .map(|(i, (l, k))| vec![(i + 1).to_string(), fmt_f64(*l), fmt_f64(*k)])
        .collect();
    io::write_csv(&ws.path(TM_LOSS), &["epoch", "loss", "kl"], &rows).at(stage)?;
    let mut text = String::new();
    for t in 0..m.k() {
        let words: Vec<&str> = m
            .top_words(t, TOP_WORDS_SHOWN.min(m.vocab_size()))
            .at(stage)?
            .into_iter()
            .map(|w| vocab.content_token(w).unwrap_or("?"))
            .collect();
        let _ = writeln!(text, "topic {t}: {}", words.join(" "));
    }
    io::write_text(&ws.path(TM_TOPICS), &text).at(stage)?;
    io::write_json(&ws.path(TM_METRICS), report).at(stage)
}

fn score(
    stage: &'static str,
    trained: &TrainedTopicModel,
    inputs: &TopicInputs,
    vocab: &Vocabulary,
    lm: &LmParams,
    cfg: &PipelineConfig,
) -> StageResult<MetricsReport> {
    let s = &cfg.metrics;
    let co = Cooccurrence::from_bows(&inputs.bows).at(stage)?;
    let word_emb = content_word_embeddings(vocab, lm).at(stage)?;
    let n = s.npmi_top_n.max(s.alpha_top_n).max(s.rbo_top_n).min(trained.model.vocab_size());
    let rankings = trained.model.top_word_lists(n).at(stage)?;
    evaluate_rankings(&rankings, &co, &word_emb, s).at(stage)
}

pub fn tm_train(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<MetricsReport> {
    const S: &str = "tm-train";
    let (_, vocab, lm, inputs) = topic_inputs(ws, S)?;
    let tc = cfg.topic_config();
    let trained = train_topic_model(&inputs, tc.clone()).at(S)?;
    let report = score(S, &trained, &inputs, &vocab, &lm, cfg)?;
    let ins = [DOCUMENTS, VOCAB, BOW, LM];
    write_topic_model(ws, S, &trained, &vocab, &report, &ins)?;
    ws.finish(S, S, &tc, &ins, &[TOPIC_MODEL, TM_LOSS, TM_TOPICS, TM_METRICS])?;
    Ok(report)
}

pub fn tm_sweep(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<Vec<SweepRow>> {
    const S: &str = "tm-sweep";
    let t = &cfg.topic_model;
    if t.sweep_ks.is_empty() {
        return Err(StageError::validation(S, "topic_model.sweep_ks is empty"));
    }
    let (_, vocab, lm, inputs) = topic_inputs(ws, S)?;
    let co = Cooccurrence::from_bows(&inputs.bows).at(S)?;
    let word_emb = content_word_embeddings(&vocab, &lm).at(S)?;
    let template = cfg.topic_config();
    let cells = sweep(&inputs, &template, &t.sweep_variants, &t.sweep_ks, &co, &word_emb, &cfg.metrics).at(S)?;
    let rows: Vec<SweepRow> = cells.iter().map(|c| c.row.clone()).collect();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.to_string(),
                r.k.to_string(),
                fmt_opt(r.alpha),
                fmt_opt(r.rho),
                fmt_opt(r.tau),
                r.selected.to_string(),
            ]
        })
        .collect();
    io::write_csv(&ws.path(TM_SWEEP), &["variant", "K", "alpha", "rho", "tau", "selected"], &csv_rows).at(S)?;
    let chosen = cells
        .iter()
        .find(|c| c.row.selected)
        .ok_or_else(|| numerical(S, "no sweep cell produced finite scores"))?;
    let trained = chosen.trained.as_ref().expect("selected cell is trained");
    let report = score(S, trained, &inputs, &vocab, &lm, cfg)?;
    let ins = [DOCUMENTS, VOCAB, BOW, LM];
    write_topic_model(ws, S, trained, &vocab, &report, &ins)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        template: &'a TopicModelConfig,
        variants: &'a [topicsteer_core::topic_model::Variant],
        ks: &'a [usize],
        metrics: &'a topicsteer_core::metrics::MetricSettings,
        rows: &'a [SweepRow],
    }
    let echo = Echo { template: &template, variants: &t.sweep_variants, ks: &t.sweep_ks, metrics: &cfg.metrics, rows: &rows };
    ws.finish(S, S, &echo, &ins, &[TM_SWEEP, TOPIC_MODEL, TM_LOSS, TM_TOPICS, TM_METRICS])?;
    Ok(rows)
}

pub fn label(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<LabeledCorpus> {
    const S: &str = "label";
    let tm = ws.topic_model(S)?;
    let (docs, _, _, inputs) = topic_inputs(ws, S)?;
    let thetas = tm.infer_all(&inputs).at(S)?;
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let retain = cfg.topic_model.retain_top.min(tm.k());
    let labeled = label_corpus(&ids, &thetas, retain).at(S)?;
    io::write_jsonl(&ws.path(LABELS), &labeled.docs).at(S)?;
    let rows: Vec<Vec<String>> = labeled
        .label_counts
        .iter()
        .enumerate()
        .map(|(t, c)| vec![t.to_string(), c.to_string(), labeled.retained_topics.contains(&t).to_string()])
        .collect();
    io::write_csv(&ws.path(LABEL_COUNTS), &["topic", "count", "retained"], &rows).at(S)?;
    ws.finish(S, S, &serde_json::json!({ "retain_top": retain }), &[TOPIC_MODEL, DOCUMENTS, VOCAB, BOW, LM], &[LABELS, LABEL_COUNTS])?;
    Ok(labeled)
}

pub fn disc_train(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<DiscReport> {
    const S: &str = "disc-train";
    let labeled = ws.labels(S)?;
    let docs = ws.documents(S)?;
    let vocab = ws.vocab(S)?;
    let lm = ws.lm(S)?;
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    for (_, d) in labeled.retained_docs() {
        let doc = by_id
            .get(d.doc_id.as_str())
            .ok_or_else(|| StageError::validation(S, format!("labelled document {} not in {DOCUMENTS}", d.doc_id)))?;
        kept.push((*doc).clone());
        labels.push(d.label);
    }
    let features = doc_embeddings(S, &kept, &vocab, &lm)?;
    let dc = cfg.disc_config();
    let (disc, report) = train_discriminator(&features, &labels, &dc).at(S)?;
    let meta = DiscMeta {
        classes: disc.classes().to_vec(),
        d_model: disc.d_model(),
        config: dc.clone(),
        inputs: ws.hashes(S, &[LABELS, DOCUMENTS, VOCAB, LM])?,
    };
    container::write(&ws.path(DISC), "discriminator", &meta, &[("weight", disc.weight()), ("bias", disc.bias())])
        .at(S)?;
    let rows: Vec<Vec<String>> = (0..report.classes.len())
        .map(|c| {
            vec![
                c.to_string(),
                report.classes[c].to_string(),
                fmt_f64(report.precision[c]),
                fmt_f64(report.recall[c]),
                report.support[c].to_string(),
            ]
        })
        .collect();
    io::write_csv(&ws.path(DISC_REPORT), &["class", "topic", "precision", "recall", "support"], &rows).at(S)?;
    io::write_json(&ws.path(DISC_REPORT_JSON), &report).at(S)?;
    let loss: Vec<Vec<String>> =
        report.loss_curve.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt_f64(*l)]).collect();
    io::write_csv(&ws.path(DISC_LOSS), &["epoch", "loss"], &loss).at(S)?;
    ws.finish(S, S, &dc, &[LABELS, DOCUMENTS, VOCAB, LM], &[DISC, DISC_REPORT, DISC_REPORT_JSON, DISC_LOSS])?;
    Ok(report)
}

pub fn generate(
    cfg: &PipelineConfig,
    ws: &Workspace,
    tag: &str,
    steering: &SteeringConfig,
) -> StageResult<Vec<GenerationRecord>> {
    const S: &str = "generate";
    validate_tag(S, tag)?;
    let vocab = ws.vocab(S)?;
    let lm = ws.lm(S)?;
    let disc = ws.discriminator(S)?;
    let g = Generator { lm: &lm, disc: Some(&disc), vocab: &vocab };
    let classes: Vec<usize> = (0..disc.num_classes()).collect();
    let prefixes = &cfg.generation.prefixes;
    let records = g.generate_grid(&classes, prefixes, cfg.generation.samples, steering).at(S)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed == records.len() {
        let first = records[0].error.clone().unwrap_or_default();
        let kind = if first.contains("non-finite") { Kind::Numerical } else { Kind::Validation };
        return Err(StageError::new(S, kind, format!("every generation failed; first error: {first}")));
    }
    let (gen, summary) = (generations_name(tag), generations_summary_name(tag));
    io::write_jsonl(&ws.path(&gen), &records).at(S)?;
    let mut rows = Vec::new();
    for &c in disc.classes() {
        for (pi, p) in prefixes.iter().enumerate() {
            let means: Vec<f64> = records
                .iter()
                .filter(|r| r.target_topic == c && r.prefix_index == pi)
                .filter_map(|r| r.mean_p_target())
                .collect();
            let mean = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
            rows.push(vec![c.to_string(), p.clone(), fmt_opt(mean)]);
        }
    }
    io::write_csv(&ws.path(&summary), &["topic", "prefix", "mean_p_target"], &rows).at(S)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        tag: &'a str,
        steering: &'a SteeringConfig,
        prefixes: &'a [String],
        samples: usize,
        failed: usize,
    }
    let echo = Echo { tag, steering, prefixes, samples: cfg.generation.samples, failed };
    ws.finish(S, &format!("generate_{tag}"), &echo, &[VOCAB, LM, DISC], &[&gen, &summary])?;
    Ok(records)
}

/// Aligned text rendering of a confusion matrix.
pub fn render_confusion(cm: &ConfusionMatrix, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "rows: conditioning topic, columns: predicted topic");
    let w = cm.counts.iter().flatten().map(|c| c.to_string().len()).max().unwrap_or(1).max(5);
    let _ = write!(s, "{:>8}", "");
    for t in &cm.topics {
        let _ = write!(s, " {:>w$}", format!("t{t}"));
    }
    let _ = writeln!(s);
    for (t, row) in cm.topics.iter().zip(&cm.counts) {
        let _ = write!(s, "{:>8}", format!("t{t}"));
        for c in row {
            let _ = write!(s, " {c:>w$}");
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(
        s,
        "accuracy {:.4} ({} of {} classified, {} unclassifiable)",
        cm.accuracy(),
        cm.trace(),
        cm.total(),
        cm.unclassifiable
    );
    s
}

pub fn auto_eval(_cfg: &PipelineConfig, ws: &Workspace, tag: &str) -> StageResult<ConfusionMatrix> {
    const S: &str = "auto-eval";
    validate_tag(S, tag)?;
    let records = ws.generations(S, tag)?;
    let tm = ws.topic_model(S)?;
    let vocab = ws.vocab(S)?;
    let lm = ws.lm(S)?;
    let labeled = ws.labels(S)?;
    let cm = classify_generated(&records, &tm, &vocab, &lm, &labeled.retained_topics).at(S)?;
    let header: Vec<String> =
        std::iter::once("conditioned".to_string()).chain(cm.topics.iter().map(|t| format!("pred_{t}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = cm
        .topics
        .iter()
        .zip(&cm.counts)
        .map(|(t, r)| std::iter::once(t.to_string()).chain(r.iter().map(|c| c.to_string())).collect())
        .collect();
    let (csv, txt, json) = (confusion_name(tag, "csv"), confusion_name(tag, "txt"), confusion_name(tag, "json"));
    io::write_csv(&ws.path(&csv), &header, &rows).at(S)?;
    io::write_text(&ws.path(&txt), &render_confusion(&cm, &format!("confusion matrix ({tag})"))).at(S)?;
    io::write_json(&ws.path(&json), &cm).at(S)?;
    let gen = generations_name(tag);
    ws.finish(
        S,
        &format!("auto-eval_{tag}"),
        &serde_json::json!({ "tag": tag, "topics": cm.topics }),
        &[&gen, TOPIC_MODEL, VOCAB, LM, LABELS],
        &[&csv, &txt, &json],
    )?;
    Ok(cm)
}

pub fn compare(ws: &Workspace, weak: &str, strong: &str) -> StageResult<Comparison> {
    const S: &str = "auto-eval";
    validate_tag(S, weak)?;
    validate_tag(S, strong)?;
    let cw = ws.confusion(S, weak)?;
    let cs = ws.confusion(S, strong)?;
    let cmp = compare_parametrizations(&cw, &cs).at(S)?;
    let mut rows: Vec<Vec<String>> = cmp
        .per_topic
        .iter()
        .map(|d| vec![d.topic.to_string(), fmt_f64(d.weak), fmt_f64(d.strong), fmt_f64(d.delta)])
        .collect();
    rows.push(vec!["all".into(), fmt_f64(cmp.weak_accuracy), fmt_f64(cmp.strong_accuracy), fmt_f64(cmp.delta)]);
    io::write_csv(&ws.path(COMPARISON), &["topic", "weak", "strong", "delta"], &rows).at(S)?;
    io::write_json(&ws.path(COMPARISON_JSON), &cmp).at(S)?;
    let (a, b) = (confusion_name(weak, "json"), confusion_name(strong, "json"));
    ws.finish(
        S,
        "compare",
        &serde_json::json!({ "weak": weak, "strong": strong }),
        &[&a, &b],
        &[COMPARISON, COMPARISON_JSON],
    )?;
    Ok(cmp)
}

/// Collates existing artifacts into `report/`. Reads only; never retrains.
pub fn report(ws: &Workspace) -> StageResult<Vec<String>> {
    const S: &str = "report";
    let dir = ws.path(REPORT_DIR);
    let mut written = Vec::new();
    let mut summary = String::from("# Pipeline report\n");
    let mut inputs: Vec<String> = Vec::new();

    if let Ok(p) = ws.require(S, TM_SWEEP) {
        let (_, rows) = io::read_csv(&p).at(S)?;
        let out: Vec<Vec<String>> =
            rows.iter().map(|r| vec![r[0].clone(), r[1].clone(), r[4].clone(), r[2].clone(), r[3].clone()]).collect();
        io::write_csv(&dir.join("npmi_sweep.csv"), &["variant", "K", "tau", "alpha", "rho"], &out).at(S)?;
        written.push("npmi_sweep.csv".to_string());
        let _ = writeln!(summary, "\n## Topic-count sweep\n\n| variant | K | alpha | rho | tau | selected |\n|---|---|---|---|---|---|");
        for r in &rows {
            let _ = writeln!(summary, "| {} |", r.join(" | "));
        }
        inputs.push(TM_SWEEP.into());
    }
    if let Ok(p) = ws.require(S, TM_TOPICS) {
        let _ = writeln!(summary, "\n## Topics\n\n```\n{}```", io::read_text(&p).at(S)?);
        inputs.push(TM_TOPICS.into());
    }
    if let Ok(p) = ws.require(S, LM_LOSS) {
        let (_, rows) = io::read_csv(&p).at(S)?;
        if let Some(last) = rows.last() {
            let _ = writeln!(summary, "\n## Language model\n\nfinal epoch {} loss {}", last[0], last[1]);
        }
        inputs.push(LM_LOSS.into());
    }
    if let Ok(p) = ws.require(S, DISC_REPORT_JSON) {
        let r: DiscReport = io::read_json(&p).at(S)?;
        let _ = writeln!(
            summary,
            "\n## Discriminator\n\ntest accuracy {:.4} over {} classes ({} train / {} test)",
            r.accuracy,
            r.classes.len(),
            r.train_size,
            r.test_size
        );
        inputs.push(DISC_REPORT_JSON.into());
    }
    let mut confusions: Vec<String> = std::fs::read_dir(ws.root())
        .map_err(|e| StageError::new(S, Kind::MissingArtifact, format!("{}: {e}", ws.root().display())))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("confusion_") && n.ends_with(".json"))
        .collect();
    confusions.sort();
    for name in &confusions {
        let tag = &name["confusion_".len()..name.len() - ".json".len()];
        let cm = ws.confusion(S, tag)?;
        let mut rows = Vec::new();
        for (t, r) in cm.topics.iter().zip(&cm.counts) {
            let total: usize = r.iter().sum();
            for (j, c) in r.iter().enumerate() {
                let frac = if total == 0 { 0.0 } else { *c as f64 / total as f64 };
                rows.push(vec![t.to_string(), cm.topics[j].to_string(), c.to_string(), fmt_f64(frac)]);
            }
        }
        let out = format!("heatmap_{tag}.csv");
        io::write_csv(&dir.join(&out), &["conditioned", "predicted", "count", "row_fraction"], &rows).at(S)?;
        written.push(out);
        let _ = writeln!(summary, "\n## Automatic evaluation: {tag}\n\n```\n{}```", render_confusion(&cm, tag));
        inputs.push(name.clone());
    }
    if let Ok(p) = ws.require(S, COMPARISON) {
        let bytes = io::read_bytes(&p).at(S)?;
        io::write_bytes(&dir.join(COMPARISON), &bytes).at(S)?;
        written.push(COMPARISON.into());
        let (_, rows) = io::read_csv(&p).at(S)?;
        let _ = writeln!(summary, "\n## Weak vs strong\n\n| topic | weak | strong | delta |\n|---|---|---|---|");
        for r in &rows {
            let _ = writeln!(summary, "| {} |", r.join(" | "));
        }
        inputs.push(COMPARISON.into());
    }
    if inputs.is_empty() {
        return Err(StageError::new(S, Kind::MissingArtifact, format!("nothing to collate in {}", ws.root().display())));
    }
    io::write_text(&dir.join("summary.md"), &summary).at(S)?;
    written.push("summary.md".into());
    let hashes = inputs
        .iter()
        .map(|n| Ok((n.clone(), io::sha256_file(&ws.path(n)).at(S)?)))
        .collect::<StageResult<BTreeMap<_, _>>>()?;
    let outs = written
        .iter()
        .map(|n| Ok((n.clone(), io::sha256_file(&dir.join(n)).at(S)?)))
        .collect::<StageResult<BTreeMap<_, _>>>()?;
    io::write_json(&dir.join("meta.json"), &serde_json::json!({ "stage": S, "inputs": hashes, "outputs": outs }))
        .at(S)?;
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub weak: ConfusionMatrix,
    pub strong: ConfusionMatrix,
    pub comparison: Comparison,
}

/// Every stage in order. Synthesises a corpus first when none is configured.
pub fn run(cfg: &PipelineConfig, ws: &Workspace) -> StageResult<RunSummary> {
    cfg.validate()?;
    if cfg.corpus.path.is_none() {
        synth(cfg, ws)?;
    }
    ingest(cfg, ws)?;
    lm_train(cfg, ws)?;
    if cfg.topic_model.sweep_ks.is_empty() {
        tm_train(cfg, ws)?;
    } else {
        tm_sweep(cfg, ws)?;
    }
    label(cfg, ws)?;
    disc_train(cfg, ws)?;
    let g = &cfg.generation;
    generate(cfg, ws, "weak", &cfg.steering_with(g.weak))?;
    generate(cfg, ws, "strong", &cfg.steering_with(g.strong))?;
    let weak = auto_eval(cfg, ws, "weak")?;
    let strong = auto_eval(cfg, ws, "strong")?;
    let comparison = compare(ws, "weak", "strong")?;
    report(ws)?;
    Ok(RunSummary { weak, strong, comparison })
}
