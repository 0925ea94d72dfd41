//! Output formats. Every report starts with its schema id: as a `# schema`
//! comment line in table form, and as the `schema` field of the first JSON
//! line in record form. Rendering is a pure function of its input, so the
//! same result always gives the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Category, MixturePlan, Phase, PlanEntry, RepetitionRow, ENGLISH};
use crate::scaling_law::{FitReport, Recommendation};
use crate::corpus::PipelineReport;
use crate::tokenizer::{ChatSequence, FertilityReport, Pack, TokenizerModel};
use crate::train_plan::ParamCount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Records,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Format::Table),
            "records" => Ok(Format::Records),
            other => Err(Error::validation(
                "format",
                format!("unknown format `{other}` (expected table or records)"),
            )),
        }
    }
}

pub const PLAN_SCHEMA: &str = "polyplan.plan/1";
pub const FIT_SCHEMA: &str = "polyplan.fit/1";
pub const PARAMS_SCHEMA: &str = "polyplan.params/1";
pub const SCHEDULE_SCHEMA: &str = "polyplan.schedule/1";
pub const RECOMMEND_SCHEMA: &str = "polyplan.recommend/1";
pub const PREDICT_SCHEMA: &str = "polyplan.predict/1";
pub const FERTILITY_SCHEMA: &str = "polyplan.fertility/1";
pub const FILTER_SCHEMA: &str = "polyplan.filter/1";
pub const ENCODE_SCHEMA: &str = "polyplan.encode/1";
pub const CHAT_SCHEMA: &str = "polyplan.chat/1";

#[derive(Serialize)]
struct HeaderOut<'a, H> {
    schema: &'a str,
    #[serde(flatten)]
    meta: &'a H,
}

#[derive(Deserialize)]
struct HeaderIn<H> {
    schema: String,
    #[serde(flatten)]
    meta: H,
}

/// Header line with `meta` fields, then one JSON object per row.
pub fn render_records<H: Serialize, R: Serialize>(schema: &str, meta: &H, rows: &[R]) -> String {
    let mut out = serde_json::to_string(&HeaderOut { schema, meta }).expect("header serializes");
    out.push('\n');
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_records<H: DeserializeOwned, R: DeserializeOwned>(schema: &str, text: &str) -> Result<(H, Vec<R>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(schema.to_string(), "missing header line"))?;
    let header: HeaderIn<H> =
        serde_json::from_str(first).map_err(|e| Error::parse(format!("{schema} header"), e))?;
    if header.schema != schema {
        return Err(Error::validation(
            "schema",
            format!("expected `{schema}`, found `{}`", header.schema),
        ));
    }
    let rows = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{schema} line {}", i + 1), e)))
        .collect::<Result<Vec<R>>>()?;
    Ok((header.meta, rows))
}

#[derive(Serialize, Deserialize)]
struct Empty {}

/// Column-aligned text table. The first column is left-aligned, the rest
/// right-aligned.
fn table(schema: &str, preamble: &[String], headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = format!("# {schema}\n");
    for p in preamble {
        out.push_str(p);
        out.push('\n');
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    out.push_str(&line(headers.to_vec()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

// ---- mixture plan ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanMeta {
    phase: Phase,
    budget_tokens: u64,
    warnings: Vec<String>,
}

/// One row of the machine-readable plan table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub language: String,
    pub category: Category,
    pub tokens: u64,
    pub available_tokens: u64,
    pub epochs: Option<f64>,
    pub share: f64,
}

pub fn plan_records(plan: &MixturePlan) -> String {
    let meta = PlanMeta {
        phase: plan.phase,
        budget_tokens: plan.budget_tokens,
        warnings: plan.warnings.clone(),
    };
    let rows: Vec<PlanRecord> = plan
        .entries
        .iter()
        .map(|e| PlanRecord {
            language: e.language.clone(),
            category: e.category,
            tokens: e.allocated_tokens,
            available_tokens: e.available_tokens,
            epochs: e.epochs,
            share: e.allocated_tokens as f64 / plan.budget_tokens as f64,
        })
        .collect();
    render_records(PLAN_SCHEMA, &meta, &rows)
}

pub fn parse_plan_records(text: &str) -> Result<MixturePlan> {
    let (meta, rows): (PlanMeta, Vec<PlanRecord>) = parse_records(PLAN_SCHEMA, text)?;
    Ok(MixturePlan {
        phase: meta.phase,
        budget_tokens: meta.budget_tokens,
        warnings: meta.warnings,
        entries: rows
            .into_iter()
            .map(|r| PlanEntry {
                language: r.language,
                category: r.category,
                allocated_tokens: r.tokens,
                available_tokens: r.available_tokens,
                epochs: r.epochs,
            })
            .collect(),
    })
}

/// Human-readable plan: headline shares (English, code/math, everything
/// else), per-language and per-category shares, then every dataset.
pub fn plan_table(plan: &MixturePlan, repetition: &[RepetitionRow]) -> String {
    let phase = match plan.phase {
        Phase::Main => "main",
        Phase::Annealing => "annealing",
    };
    let mut pre = vec![format!("phase: {phase}"), format!("budget_tokens: {}", plan.budget_tokens)];
    for w in &plan.warnings {
        pre.push(format!("warning: {w}"));
    }
    if plan.entries.is_empty() {
        return table(PLAN_SCHEMA, &pre, &["dataset", "tokens", "available", "epochs", "share", "flag"], &[]);
    }
    let langs = plan.language_shares();
    let en = langs.get(ENGLISH).copied().unwrap_or(0.0);
    let code = langs.get("code_math").copied().unwrap_or(0.0);
    pre.push(format!("english: {}", pct(en)));
    pre.push(format!("code_math: {}", pct(code)));
    pre.push(format!("other_languages: {}", pct(plan.other_languages_share())));
    pre.push(String::new());

    let mut lang_rows: Vec<Vec<String>> = langs.iter().map(|(l, s)| vec![l.clone(), pct(*s)]).collect();
    lang_rows.sort_by(|a, b| a[0].cmp(&b[0]));
    let mut out = table(PLAN_SCHEMA, &pre, &["language", "share"], &lang_rows);
    out.push('\n');
    let cat_rows: Vec<Vec<String>> = plan.category_shares().iter().map(|(c, s)| vec![c.clone(), pct(*s)]).collect();
    let cats = table(PLAN_SCHEMA, &[], &["category", "share"], &cat_rows);
    out.push_str(cats.split_once('\n').unwrap().1);
    out.push('\n');

    let flags: BTreeMap<&str, String> = repetition.iter().map(|r| (r.dataset.as_str(), r.flag.to_string())).collect();
    let rows: Vec<Vec<String>> = plan
        .entries
        .iter()
        .map(|e| {
            let ds = e.dataset();
            vec![
                ds.clone(),
                e.allocated_tokens.to_string(),
                e.available_tokens.to_string(),
                e.epochs.map_or("-".into(), |x| format!("{x:.3}")),
                format!("{:.2}%", 100.0 * e.allocated_tokens as f64 / plan.budget_tokens as f64),
                flags.get(ds.as_str()).cloned().unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let ds = table(PLAN_SCHEMA, &[], &["dataset", "tokens", "available", "epochs", "share", "flag"], &rows);
    out.push_str(ds.split_once('\n').unwrap().1);
    out
}

// ---- scaling-law fit ----

pub fn fit_records(reports: &BTreeMap<String, FitReport>) -> String {
    let rows: Vec<&FitReport> = reports.values().collect();
    render_records(FIT_SCHEMA, &Empty {}, &rows)
}

pub fn parse_fit_records(text: &str) -> Result<BTreeMap<String, FitReport>> {
    let (_, rows): (Empty, Vec<FitReport>) = parse_records(FIT_SCHEMA, text)?;
    Ok(rows.into_iter().map(|r| (r.params.domain_tag.clone(), r)).collect())
}

pub fn fit_table(reports: &BTreeMap<String, FitReport>) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(d, r)| {
            let p = &r.params;
            vec![
                d.clone(),
                format!("{:.6}", p.alpha),
                format!("{:.6e}", p.beta),
                format!("{:.6}", p.l_inf),
                format!("{:.6}", p.c1),
                format!("{:.6}", p.c2),
                format!("{:.6}", p.c3),
                format!("{:.3e}", r.rmse),
                r.iterations.to_string(),
                if r.converged { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    table(
        FIT_SCHEMA,
        &[],
        &["domain", "alpha", "beta", "l_inf", "c1", "c2", "c3", "rmse", "iterations", "converged"],
        &rows,
    )
}

// ---- parameter counts ----

pub fn params_report(count: &ParamCount, format: Format) -> String {
    match format {
        Format::Records => render_records(PARAMS_SCHEMA, &Empty {}, &[count]),
        Format::Table => {
            let rows = [
                ("embedding", count.embedding),
                ("lm_head", count.lm_head),
                ("non_embedding", count.non_embedding),
                ("total", count.total),
            ]
            .iter()
            .map(|(k, v)| vec![k.to_string(), v.to_string(), format!("{:.3}B", *v as f64 / 1e9)])
            .collect::<Vec<_>>();
            table(PARAMS_SCHEMA, &[], &["component", "parameters", "billions"], &rows)
        }
    }
}

// ---- schedule ----

#[derive(Serialize)]
struct SchedulePoint {
    step: u64,
    lr: f64,
}

/// Two tab-separated columns in table form so the output can be plotted
/// directly.
pub fn schedule_report(points: &[(u64, f64)], format: Format) -> String {
    match format {
        Format::Records => {
            let rows: Vec<SchedulePoint> = points.iter().map(|&(step, lr)| SchedulePoint { step, lr }).collect();
            render_records(SCHEDULE_SCHEMA, &Empty {}, &rows)
        }
        Format::Table => {
            let mut out = format!("# {SCHEDULE_SCHEMA}\nstep\tlr\n");
            for (s, lr) in points {
                let _ = writeln!(out, "{s}\t{lr:e}");
            }
            out
        }
    }
}

// ---- recommendation ----

pub fn recommend_report(rec: &Recommendation, format: Format) -> String {
    match format {
        Format::Records => {
            #[derive(Serialize)]
            struct Meta<'a> {
                chosen: f64,
                target_domain: &'a str,
                n_params: f64,
            }
            let meta = Meta { chosen: rec.chosen, target_domain: &rec.target_domain, n_params: rec.n_params };
            render_records(RECOMMEND_SCHEMA, &meta, &rec.rationale)
        }
        Format::Table => {
            let domains: Vec<&String> = rec.rationale.first().map(|c| c.losses.keys().collect()).unwrap_or_default();
            let mut headers = vec!["weight"];
            headers.extend(domains.iter().map(|d| d.as_str()));
            let rows: Vec<Vec<String>> = rec
                .rationale
                .iter()
                .map(|c| {
                    let mut r = vec![format!("{}{}", c.weight, if c.weight == rec.chosen { " *" } else { "" })];
                    r.extend(domains.iter().map(|d| format!("{:.6}", c.losses[*d])));
                    r
                })
                .collect();
            let pre = [
                format!("target_domain: {}", rec.target_domain),
                format!("n_params: {}", rec.n_params),
                format!("chosen: {}", rec.chosen),
            ];
            table(RECOMMEND_SCHEMA, &pre, &headers, &rows)
        }
    }
}

// ---- predictions ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub domain: String,
    pub n_params: f64,
    pub weight: f64,
    pub loss: f64,
}

pub fn predict_report(preds: &[Prediction], format: Format) -> String {
    match format {
        Format::Records => render_records(PREDICT_SCHEMA, &Empty {}, preds),
        Format::Table => {
            let rows: Vec<Vec<String>> = preds
                .iter()
                .map(|p| vec![p.domain.clone(), format!("{:e}", p.n_params), p.weight.to_string(), format!("{:.6}", p.loss)])
                .collect();
            table(PREDICT_SCHEMA, &[], &["domain", "n_params", "weight", "loss"], &rows)
        }
    }
}

// ---- fertility ----

/// Tokenizer × language fertility table.
pub fn fertility_report(reports: &[FertilityReport], format: Format) -> String {
    match format {
        Format::Records => {
            #[derive(Serialize)]
            struct Row<'a> {
                tokenizer: &'a str,
                corpus: &'a str,
                language: &'a str,
                words: u64,
                pieces: u64,
                fertility: f64,
                caveat: bool,
            }
            let rows: Vec<Row> = reports
                .iter()
                .flat_map(|r| {
                    r.rows.iter().map(move |x| Row {
                        tokenizer: &r.tokenizer,
                        corpus: &r.corpus,
                        language: &x.language,
                        words: x.words,
                        pieces: x.pieces,
                        fertility: x.fertility,
                        caveat: x.caveat,
                    })
                })
                .collect();
            render_records(FERTILITY_SCHEMA, &Empty {}, &rows)
        }
        Format::Table => {
            let mut langs: Vec<&str> = reports.iter().flat_map(|r| r.rows.iter().map(|x| x.language.as_str())).collect();
            langs.sort_unstable();
            langs.dedup();
            let mut headers = vec!["tokenizer"];
            headers.extend(langs.iter().copied());
            let mut caveats = Vec::new();
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    let mut row = vec![r.tokenizer.clone()];
                    for l in &langs {
                        row.push(match r.rows.iter().find(|x| x.language == *l) {
                            Some(x) => {
                                if x.caveat && !caveats.contains(l) {
                                    caveats.push(*l);
                                }
                                format!("{:.3}{}", x.fertility, if x.caveat { "†" } else { "" })
                            }
                            None => "-".into(),
                        });
                    }
                    row
                })
                .collect();
            let mut out = table(FERTILITY_SCHEMA, &[], &headers, &rows);
            if !caveats.is_empty() {
                let _ = writeln!(
                    out,
                    "† whitespace does not delimit words in: {}; fertility counts whitespace-separated units",
                    caveats.join(", ")
                );
            }
            out
        }
    }
}

// ---- filter ----

#[derive(Serialize)]
struct FilterRow<'a> {
    stage: &'a str,
    metric: String,
    count: u64,
}

/// Per-stage counters; the table form is the same TSV as the stats file.
pub fn filter_report(report: &PipelineReport, format: Format) -> String {
    match format {
        Format::Table => format!("# {FILTER_SCHEMA}\n{}", report.stats_tsv()),
        Format::Records => {
            let mut rows = Vec::new();
            for s in &report.stages {
                rows.push(FilterRow { stage: &s.stage, metric: "input".into(), count: s.input });
                rows.push(FilterRow { stage: &s.stage, metric: "kept".into(), count: s.kept });
                for (reason, n) in &s.rejected {
                    rows.push(FilterRow { stage: &s.stage, metric: format!("rejected:{reason}"), count: *n });
                }
            }
            #[derive(Serialize)]
            struct Meta<'a> {
                output: &'a std::path::Path,
            }
            render_records(FILTER_SCHEMA, &Meta { output: &report.output }, &rows)
        }
    }
}

// ---- tokenizer encode ----

pub fn encode_report(model: &TokenizerModel, ids: &[u32], format: Format) -> String {
    let surface = |id: u32| model.token(id).map_or(String::new(), |t| t.surface.clone());
    match format {
        Format::Records => {
            #[derive(Serialize)]
            struct Row {
                id: u32,
                surface: String,
            }
            let rows: Vec<Row> = ids.iter().map(|&id| Row { id, surface: surface(id) }).collect();
            #[derive(Serialize)]
            struct Meta {
                tokens: usize,
            }
            render_records(ENCODE_SCHEMA, &Meta { tokens: ids.len() }, &rows)
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = ids.iter().map(|&id| vec![id.to_string(), format!("{:?}", surface(id))]).collect();
            table(ENCODE_SCHEMA, &[format!("tokens: {}", ids.len())], &["id", "surface"], &rows)
        }
    }
}

// ---- chat ----

#[derive(Serialize)]
struct ChatRow<'a> {
    token_ids: &'a [u32],
    loss_mask: &'a [u8],
    #[serde(skip_serializing_if = "Option::is_none")]
    boundaries: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    examples: Option<&'a [usize]>,
}

/// Formatted conversations, or packs of them when `packs` is given.
pub fn chat_report(model: &TokenizerModel, seqs: &[ChatSequence], packs: Option<&[Pack]>, format: Format) -> Result<String> {
    let rows: Vec<(&[u32], &[u8], Option<&[usize]>, Option<&[usize]>)> = match packs {
        Some(p) => p
            .iter()
            .map(|p| (&p.token_ids[..], &p.loss_mask[..], Some(&p.boundaries[..]), Some(&p.examples[..])))
            .collect(),
        None => seqs.iter().map(|s| (&s.token_ids[..], &s.loss_mask[..], None, None)).collect(),
    };
    match format {
        Format::Records => {
            let rows: Vec<ChatRow> = rows
                .into_iter()
                .map(|(token_ids, loss_mask, boundaries, examples)| ChatRow { token_ids, loss_mask, boundaries, examples })
                .collect();
            #[derive(Serialize)]
            struct Meta {
                sequences: usize,
                packed: bool,
            }
            Ok(render_records(CHAT_SCHEMA, &Meta { sequences: seqs.len(), packed: packs.is_some() }, &rows))
        }
        Format::Table => {
            let mut out = format!("# {CHAT_SCHEMA}\n");
            for (i, (ids, mask, _, examples)) in rows.into_iter().enumerate() {
                let masked = mask.iter().filter(|&&m| m == 1).count();
                let _ = write!(out, "sequence {i}: {} tokens, {masked} in loss", ids.len());
                if let Some(ex) = examples {
                    let ex: Vec<String> = ex.iter().map(usize::to_string).collect();
                    let _ = write!(out, ", examples [{}]", ex.join(", "));
                }
                out.push('\n');
                let _ = writeln!(out, "{:?}", model.decode(ids)?);
            }
            Ok(out)
        }
    }
}
