use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::dedup::Deduplicator;
use super::filters::{edu_filter, heuristic_filters, parallel_filter, TextStats, MIN_WORDS};
use super::langid::{LanguageClassifier, NgramLanguageClassifier};
use super::lm::{calibrate_buckets, score_perplexity, KneserNeyTrigram, PerplexityModel};
use super::{Document, FilterConfig, FilterOutcome, ParallelPair};
use crate::error::{Error, Result};

const CHUNK_LINES: usize = 8192;
const MAX_ERROR_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Dedup,
    #[serde(rename = "langid")]
    LanguageId,
    Heuristics,
    Perplexity,
    Edu,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Dedup => "dedup",
            Stage::LanguageId => "langid",
            Stage::Heuristics => "heuristics",
            Stage::Perplexity => "perplexity",
            Stage::Edu => "edu",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dedup" => Ok(Stage::Dedup),
            "langid" => Ok(Stage::LanguageId),
            "heuristics" => Ok(Stage::Heuristics),
            "perplexity" => Ok(Stage::Perplexity),
            "edu" => Ok(Stage::Edu),
            other => Err(Error::validation(
                "stages",
                format!("unknown stage `{other}` (expected dedup, langid, heuristics, perplexity or edu)"),
            )),
        }
    }
}

/// Models the stages need. Only the ones for the requested stages have to
/// be present.
#[derive(Clone, Default)]
pub struct PipelineResources {
    pub classifier: Option<Arc<dyn LanguageClassifier>>,
    pub perplexity: BTreeMap<String, PerplexityModel>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

impl PipelineResources {
    /// Builds the models `stages` need from plain-text files, one sample per
    /// line. The classifier is trained on `langid_seeds`; each language in
    /// `lm_corpora` gets a trigram model. Bucket boundaries come from
    /// `config.perplexity_buckets`, else from the `lm_calibration` sample,
    /// else from the corpus lines with index ≡ `seed` (mod 10), which are
    /// then held out of training.
    pub fn load(
        stages: &[Stage],
        langid_seeds: &BTreeMap<String, PathBuf>,
        lm_corpora: &BTreeMap<String, PathBuf>,
        lm_calibration: &BTreeMap<String, PathBuf>,
        config: &FilterConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut out = Self::default();
        if stages.contains(&Stage::LanguageId) {
            let mut seeds = Vec::new();
            for (lang, path) in langid_seeds {
                seeds.extend(read_lines(path)?.into_iter().map(|l| (lang.clone(), l)));
            }
            let classifier = NgramLanguageClassifier::train(seeds.iter().map(|(l, t)| (l.as_str(), t.as_str())))
                .map_err(|_| Error::Config("stage `langid` needs `paths.langid_seeds`".into()))?;
            out.classifier = Some(Arc::new(classifier));
        }
        if stages.contains(&Stage::Perplexity) {
            if let Some(lang) = lm_calibration.keys().find(|l| !lm_corpora.contains_key(*l)) {
                return Err(Error::validation(
                    format!("paths.lm_calibration.{lang}"),
                    "no matching entry in `paths.lm_corpora`",
                ));
            }
            for (lang, path) in lm_corpora {
                let lines = read_lines(path)?;
                let fixed = config.perplexity_buckets.contains_key(lang);
                let calibration = match lm_calibration.get(lang) {
                    Some(p) if !fixed => Some(read_lines(p)?),
                    _ => None,
                };
                let hold_out = !fixed && calibration.is_none();
                let slot = (seed % 10) as usize;
                let (train, held): (Vec<(usize, &String)>, Vec<(usize, &String)>) =
                    lines.iter().enumerate().partition(|(i, _)| !hold_out || i % 10 != slot);
                let train: Vec<&str> = train.into_iter().map(|(_, l)| l.as_str()).collect();
                let lm = KneserNeyTrigram::train(&train.join("\n"))?;
                let boundaries = if fixed {
                    None
                } else {
                    let sample: Vec<&str> = match &calibration {
                        Some(c) => c.iter().map(String::as_str).collect(),
                        None => held.into_iter().map(|(_, l)| l.as_str()).collect(),
                    };
                    Some(calibrate_buckets(&lm, sample, config.perplexity_percentiles).map_err(|e| {
                        Error::Config(format!("cannot calibrate perplexity buckets for `{lang}`: {e}"))
                    })?)
                };
                out.perplexity.insert(lang.clone(), PerplexityModel { lm: Arc::new(lm), boundaries });
            }
        }
        Ok(out)
    }
}

/// Counters for one stage. `input == kept + Σ rejected`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub input: u64,
    pub kept: u64,
    pub rejected: BTreeMap<String, u64>,
}

impl StageStats {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            ..Self::default()
        }
    }

    fn record(&mut self, reason: Option<&str>) {
        self.input += 1;
        match reason {
            None => self.kept += 1,
            Some(r) => *self.rejected.entry(r.to_string()).or_insert(0) += 1,
        }
    }
}

pub const PARSE_STAGE: &str = "parse";
pub const MALFORMED: &str = "malformed";
pub const DATA_ERROR: &str = "data_error";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineReport {
    pub output: PathBuf,
    /// The `parse` stage first, then one entry per requested stage.
    pub stages: Vec<StageStats>,
    /// First few messages behind `malformed` and `data_error` counts.
    pub error_samples: Vec<String>,
}

impl PipelineReport {
    /// Tab-separated `stage, metric, count` rows with a header line.
    pub fn stats_tsv(&self) -> String {
        let mut out = String::from("stage\tmetric\tcount\n");
        for s in &self.stages {
            out.push_str(&format!("{}\tinput\t{}\n", s.stage, s.input));
            out.push_str(&format!("{}\tkept\t{}\n", s.stage, s.kept));
            for (reason, n) in &s.rejected {
                out.push_str(&format!("{}\trejected:{}\t{}\n", s.stage, reason, n));
            }
        }
        out
    }

    pub fn write_stats(&self, path: &Path) -> Result<()> {
        fs::write(path, self.stats_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn kept(&self) -> u64 {
        self.stages.last().map_or(0, |s| s.kept)
    }

    fn sample_error(&mut self, msg: String) {
        if self.error_samples.len() < MAX_ERROR_SAMPLES {
            self.error_samples.push(msg);
        }
    }
}

/// Reads JSON lines from each input in turn, handing over chunks of parsed
/// records. Blank lines are skipped; undecodable lines are counted.
fn for_each_chunk<T, F>(
    inputs: &[PathBuf],
    pool: &rayon::ThreadPool,
    report: &mut PipelineReport,
    mut f: F,
) -> Result<()>
where
    T: DeserializeOwned + Send,
    F: FnMut(Vec<T>, &mut PipelineReport) -> Result<()>,
{
    let mut parse = StageStats::new(PARSE_STAGE);
    for path in inputs {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line_no = 0usize;
        loop {
            let mut raw: Vec<(usize, Vec<u8>)> = Vec::with_capacity(CHUNK_LINES);
            while raw.len() < CHUNK_LINES {
                let mut buf = Vec::new();
                let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if line_no == 1 && buf.starts_with(b"\xEF\xBB\xBF") {
                    buf.drain(..3);
                }
                if buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                raw.push((line_no, buf));
            }
            if raw.is_empty() {
                break;
            }
            let parsed: Vec<std::result::Result<T, String>> = pool.install(|| {
                raw.par_iter()
                    .map(|(n, bytes)| {
                        serde_json::from_slice::<T>(bytes)
                            .map_err(|e| format!("{} line {n}: {e}", path.display()))
                    })
                    .collect()
            });
            let mut records = Vec::with_capacity(parsed.len());
            for p in parsed {
                match p {
                    Ok(r) => {
                        parse.record(None);
                        records.push(r);
                    }
                    Err(msg) => {
                        parse.record(Some(MALFORMED));
                        report.sample_error(msg);
                    }
                }
            }
            f(records, report)?;
        }
    }
    report.stages.insert(0, parse);
    Ok(())
}

/// Writes to a sibling temporary file that is renamed into place only once
/// everything succeeded.
struct AtomicOutput {
    tmp: PathBuf,
    target: PathBuf,
    writer: BufWriter<File>,
}

impl AtomicOutput {
    fn create(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::validation("output", format!("`{}` is not a file path", target.display())))?;
        let tmp = target.with_file_name(format!(".{}.partial", name.to_string_lossy()));
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    fn write_json<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record).map_err(|e| Error::Io {
            path: self.tmp.clone(),
            source: e.into(),
        })?;
        self.writer.write_all(b"\n").map_err(|e| Error::io(&self.tmp, e))
    }

    fn commit(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.tmp, e))?;
        self.writer.get_ref().sync_all().map_err(|e| Error::io(&self.tmp, e))?;
        fs::rename(&self.tmp, &self.target).map_err(|e| Error::io(&self.target, e))
    }
}

impl Drop for AtomicOutput {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.tmp);
    }
}

fn thread_pool(worker_count: usize) -> Result<rayon::ThreadPool> {
    if worker_count == 0 {
        return Err(Error::validation("worker_count", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Turns a per-record result into a rejection reason. Data problems reject
/// the record; anything else aborts the run.
fn reason_of(result: Result<FilterOutcome>, report: &mut PipelineReport, id: &str) -> Result<Option<String>> {
    match result {
        Ok(o) => Ok(o.reason),
        Err(Error::Data(msg)) => {
            report.sample_error(format!("{id}: {msg}"));
            Ok(Some(DATA_ERROR.to_string()))
        }
        Err(e) => Err(e),
    }
}

fn check_stages(stages: &[Stage], resources: &PipelineResources) -> Result<()> {
    let mut seen = HashSet::new();
    for s in stages {
        if !seen.insert(s) {
            return Err(Error::validation("stages", format!("stage `{s}` listed twice")));
        }
    }
    if stages.contains(&Stage::LanguageId) && resources.classifier.is_none() {
        return Err(Error::Config(
            "stage `langid` needs a language classifier (seed corpora)".into(),
        ));
    }
    if stages.contains(&Stage::Perplexity) && resources.perplexity.is_empty() {
        return Err(Error::Config(
            "stage `perplexity` needs at least one language model".into(),
        ));
    }
    Ok(())
}

/// Runs documents from `inputs` (JSON lines, read in order) through
/// `stages` and writes the survivors to `output`. Deduplication is global
/// across all inputs. The output file only appears if the run succeeds, and
/// its bytes do not depend on `worker_count`.
pub fn run_pipeline(
    inputs: &[PathBuf],
    output: &Path,
    stages: &[Stage],
    config: &FilterConfig,
    resources: &PipelineResources,
    worker_count: usize,
) -> Result<PipelineReport> {
    config.validate()?;
    check_stages(stages, resources)?;
    let pool = thread_pool(worker_count)?;
    let mut out = AtomicOutput::create(output)?;
    let mut stats: Vec<StageStats> = stages.iter().map(|s| StageStats::new(s.name())).collect();
    let mut dedup = Deduplicator::new(config);
    let mut report = PipelineReport {
        output: output.to_path_buf(),
        ..PipelineReport::default()
    };

    for_each_chunk::<Document, _>(inputs, &pool, &mut report, |mut docs, report| {
        for (stage, st) in stages.iter().zip(stats.iter_mut()) {
            let reasons: Vec<Option<String>> = match stage {
                Stage::Dedup => {
                    let keys: Vec<_> = pool.install(|| docs.par_iter().map(|d| dedup.key(&d.text)).collect());
                    keys.into_iter()
                        .map(|k| (!dedup.admit(k)).then(|| "duplicate".to_string()))
                        .collect()
                }
                Stage::LanguageId => {
                    let clf = resources.classifier.as_deref().expect("checked above");
                    let results: Vec<Result<(String, f64)>> =
                        pool.install(|| docs.par_iter().map(|d| clf.classify(&d.text)).collect());
                    let mut reasons = Vec::with_capacity(docs.len());
                    for (doc, r) in docs.iter_mut().zip(results) {
                        let outcome = r.map(|(lang, conf)| {
                            let mut o = FilterOutcome::new();
                            let _ = o.check("language_confidence", conf >= config.langid_min_confidence)
                                && o.check(
                                    "language_not_allowed",
                                    config.allowed_languages.is_empty() || config.allowed_languages.contains(&lang),
                                );
                            doc.language = Some(lang);
                            doc.scores.insert("lang_confidence".into(), conf);
                            o
                        });
                        // Empty text cannot be classified; treat it as bad data.
                        let outcome = outcome.map_err(|e| match e {
                            Error::Validation { message, .. } => Error::Data(message),
                            other => other,
                        });
                        reasons.push(reason_of(outcome, report, &doc.id)?);
                    }
                    reasons
                }
                Stage::Heuristics => pool.install(|| {
                    docs.par_iter()
                        .map(|d| heuristic_filters(d, config).reason)
                        .collect()
                }),
                Stage::Perplexity => {
                    let results: Vec<Result<(f64, FilterOutcome)>> = pool.install(|| {
                        docs.par_iter()
                            .map(|d| {
                                let mut o = FilterOutcome::new();
                                if !o.check(MIN_WORDS, TextStats::of(&d.text).words >= config.min_words) {
                                    return Ok((f64::NAN, o));
                                }
                                let (ppl, bucket) = score_perplexity(d, &resources.perplexity, config)?;
                                o.check("perplexity", config.perplexity_keep.contains(&bucket));
                                Ok((ppl, o))
                            })
                            .collect()
                    });
                    let mut reasons = Vec::with_capacity(docs.len());
                    for (doc, r) in docs.iter_mut().zip(results) {
                        let r = r.map(|(ppl, o)| {
                            if ppl.is_finite() {
                                doc.scores.insert("perplexity".into(), ppl);
                            }
                            o
                        });
                        reasons.push(reason_of(r, report, &doc.id)?);
                    }
                    reasons
                }
                Stage::Edu => {
                    let results: Vec<Result<FilterOutcome>> =
                        pool.install(|| docs.par_iter().map(|d| edu_filter(d, config)).collect());
                    let mut reasons = Vec::with_capacity(docs.len());
                    for (doc, r) in docs.iter().zip(results) {
                        reasons.push(reason_of(r, report, &doc.id)?);
                    }
                    reasons
                }
            };
            for r in &reasons {
                st.record(r.as_deref());
            }
            docs = docs
                .into_iter()
                .zip(reasons)
                .filter_map(|(d, r)| r.is_none().then_some(d))
                .collect();
        }
        for d in &docs {
            out.write_json(d)?;
        }
        Ok(())
    })?;

    out.commit()?;
    report.stages.extend(stats);
    Ok(report)
}

/// Applies the pair thresholds to parallel data read as JSON lines. Pairs
/// with missing or invalid score channels are rejected as `data_error`.
pub fn run_pair_pipeline(
    inputs: &[PathBuf],
    output: &Path,
    config: &FilterConfig,
    worker_count: usize,
) -> Result<PipelineReport> {
    config.validate()?;
    let pool = thread_pool(worker_count)?;
    let mut out = AtomicOutput::create(output)?;
    let mut stats = StageStats::new("parallel");
    let mut report = PipelineReport {
        output: output.to_path_buf(),
        ..PipelineReport::default()
    };
    for_each_chunk::<ParallelPair, _>(inputs, &pool, &mut report, |pairs, report| {
        let results: Vec<Result<FilterOutcome>> =
            pool.install(|| pairs.par_iter().map(|p| parallel_filter(p, config)).collect());
        for (pair, r) in pairs.iter().zip(results) {
            let id = format!("{}→{} pair", pair.source_lang, pair.target_lang);
            let reason = reason_of(r, report, &id)?;
            stats.record(reason.as_deref());
            if reason.is_none() {
                out.write_json(pair)?;
            }
        }
        Ok(())
    })?;
    out.commit()?;
    report.stages.push(stats);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EDU_SCORE;

    fn write_docs(dir: &Path, name: &str, docs: &[Document]) -> PathBuf {
        let path = dir.join(name);
        let body: String = docs
            .iter()
            .map(|d| serde_json::to_string(d).unwrap() + "\n")
            .collect();
        fs::write(&path, body).unwrap();
        path
    }

    const PARAGRAPH: &str = "The committee met on Tuesday to review the proposal in detail.";

    #[test]
    fn empty_input_gives_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        fs::write(&input, "").unwrap();
        let output = dir.path().join("out.jsonl");
        let r = run_pipeline(&[input], &output, &[Stage::Dedup, Stage::Heuristics], &FilterConfig::default(), &PipelineResources::default(), 2).unwrap();
        assert_eq!(fs::read_to_string(&output).unwrap(), "");
        assert!(r.stages.iter().all(|s| s.input == 0 && s.kept == 0 && s.rejected.is_empty()));
        assert_eq!(r.stages.len(), 3);
    }

    #[test]
    fn rejections_are_attributed_to_their_stage() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![
            Document::new("a", PARAGRAPH),
            Document::new("b", PARAGRAPH),
            Document::new("c", "too short"),
            Document::new("d", "Another perfectly ordinary sentence about the weather today."),
        ];
        let input = write_docs(dir.path(), "in.jsonl", &docs);
        let output = dir.path().join("out.jsonl");
        let r = run_pipeline(&[input], &output, &[Stage::Dedup, Stage::Heuristics], &FilterConfig::default(), &PipelineResources::default(), 1).unwrap();
        let dedup = &r.stages[1];
        assert_eq!((dedup.input, dedup.kept), (4, 3));
        assert_eq!(dedup.rejected["duplicate"], 1);
        let heur = &r.stages[2];
        assert_eq!((heur.input, heur.kept), (3, 2));
        assert_eq!(heur.rejected["min_words"], 1);
        let kept: Vec<Document> = fs::read_to_string(&output)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(kept.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "d"]);
        assert!(r.stats_tsv().contains("dedup\trejected:duplicate\t1\n"));
    }

    #[test]
    fn malformed_lines_are_counted_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        let good = serde_json::to_string(&Document::new("a", PARAGRAPH)).unwrap();
        let mut bytes = format!("{good}\n{{not json\n\n").into_bytes();
        bytes.extend_from_slice(b"\xff\xfe\n");
        fs::write(&input, bytes).unwrap();
        let output = dir.path().join("out.jsonl");
        let r = run_pipeline(&[input], &output, &[Stage::Heuristics], &FilterConfig::default(), &PipelineResources::default(), 1).unwrap();
        assert_eq!(r.stages[0].rejected[MALFORMED], 2);
        assert_eq!(r.stages[0].kept, 1);
        assert_eq!(r.kept(), 1);
        assert_eq!(r.error_samples.len(), 2);
    }

    #[test]
    fn missing_edu_channel_is_a_data_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![
            Document::new("a", PARAGRAPH).with_score(EDU_SCORE, 3.0),
            Document::new("b", PARAGRAPH),
            Document::new("c", PARAGRAPH).with_score(EDU_SCORE, 2.0),
        ];
        let input = write_docs(dir.path(), "in.jsonl", &docs);
        let output = dir.path().join("out.jsonl");
        let r = run_pipeline(&[input], &output, &[Stage::Edu], &FilterConfig::default(), &PipelineResources::default(), 3).unwrap();
        let edu = &r.stages[1];
        assert_eq!(edu.kept, 1);
        assert_eq!(edu.rejected[DATA_ERROR], 1);
        assert_eq!(edu.rejected["edu_score"], 1);
        assert!(r.error_samples[0].contains("b: "));
    }

    #[test]
    fn unreadable_input_names_the_path_and_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let output = dir.path().join("out.jsonl");
        let missing = dir.path().join("nope.jsonl");
        let err = run_pipeline(&[missing], &output, &[Stage::Dedup], &FilterConfig::default(), &PipelineResources::default(), 1).unwrap_err();
        assert!(err.to_string().contains("nope.jsonl"));
        assert!(!output.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn stages_are_checked_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let output = dir.path().join("out.jsonl");
        let none = PipelineResources::default();
        let cfg = FilterConfig::default();
        assert!(matches!(run_pipeline(&[], &output, &[Stage::LanguageId], &cfg, &none, 1), Err(Error::Config(_))));
        assert!(matches!(run_pipeline(&[], &output, &[Stage::Perplexity], &cfg, &none, 1), Err(Error::Config(_))));
        assert!(run_pipeline(&[], &output, &[Stage::Dedup, Stage::Dedup], &cfg, &none, 1).is_err());
        assert!(run_pipeline(&[], &output, &[], &cfg, &none, 0).is_err());
    }

    #[test]
    fn pair_pipeline_applies_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let pair = |lang: &str, c: Option<f64>, q: f64| ParallelPair {
            source_text: "x".into(),
            target_text: "y".into(),
            source_lang: lang.into(),
            target_lang: "en".into(),
            cleanliness_score: c,
            quality_estimate: Some(q),
        };
        let input = dir.path().join("pairs.jsonl");
        let body: String = [pair("pt", Some(0.55), 0.9), pair("de", Some(0.55), 0.9), pair("de", Some(0.8), 0.69), pair("de", None, 0.9)]
            .iter()
            .map(|p| serde_json::to_string(p).unwrap() + "\n")
            .collect();
        fs::write(&input, body).unwrap();
        let output = dir.path().join("out.jsonl");
        let r = run_pair_pipeline(&[input], &output, &FilterConfig::default(), 2).unwrap();
        let s = &r.stages[1];
        assert_eq!(s.kept, 1);
        assert_eq!(s.rejected["cleanliness"], 1);
        assert_eq!(s.rejected["quality"], 1);
        assert_eq!(s.rejected[DATA_ERROR], 1);
        assert!(r.error_samples[0].contains("cleanliness_score"));
        assert_eq!(fs::read_to_string(&output).unwrap().lines().count(), 1);
    }

    #[test]
    fn resources_load_from_seed_files() {
        let dir = tempfile::tempdir().unwrap();
        let en = dir.path().join("en.txt");
        let de = dir.path().join("de.txt");
        let en_lines: Vec<String> = (0..40).map(|i| format!("the weather is fine and the river is calm {i}")).collect();
        fs::write(&en, en_lines.join("\n")).unwrap();
        fs::write(&de, "das wetter ist schön und der fluss ist ruhig\nich habe heute keine zeit für dich\n").unwrap();
        let seeds = BTreeMap::from([("en".to_string(), en.clone()), ("de".to_string(), de)]);
        let corpora = BTreeMap::from([("en".to_string(), en)]);
        let config = FilterConfig::default();
        let none = BTreeMap::new();

        let r = PipelineResources::load(&[Stage::LanguageId, Stage::Perplexity], &seeds, &corpora, &none, &config, 3).unwrap();
        let (lang, _) = r.classifier.as_ref().unwrap().classify("der fluss ist ruhig heute").unwrap();
        assert_eq!(lang, "de");
        let [head, middle] = r.perplexity["en"].boundaries.unwrap();
        assert!(head <= middle);

        let r = PipelineResources::load(&[Stage::Dedup], &none, &none, &none, &config, 0).unwrap();
        assert!(r.classifier.is_none() && r.perplexity.is_empty());
        let Err(err) = PipelineResources::load(&[Stage::LanguageId], &none, &none, &none, &config, 0) else {
            panic!("loading without seeds must fail");
        };
        assert!(err.to_string().contains("langid_seeds"));
    }
}
