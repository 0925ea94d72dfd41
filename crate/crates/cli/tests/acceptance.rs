//! Acceptance suite. Each criterion prints one line:
//!
//! ```text
//! PASS  1 params: embedding=262144000 ... (0.04 s)
//! ```
//!
//! Run with `cargo test -p polyplan-cli --test acceptance -- --nocapture` to
//! see the lines; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};

use polyplan::corpus::{
    edu_filter, parallel_filter, run_pipeline, Document, FilterConfig, ParallelPair, PipelineResources, Stage,
    EDU_SCORE,
};
use polyplan::mixture::{token_accounting, Category, MixturePolicy};
use polyplan::report::{parse_plan_records, parse_records, PARAMS_SCHEMA};
use polyplan::scaling_law::{fit, ratio_function, FitOptions, LossObservation, ScalingLawParams};
use polyplan::tokenizer::{fertility, format_chat, Role, TokenKind, TokenizerModel, TrainOptions, ALL_LANGUAGES};
use polyplan::train_plan::{lr_at, ParamCount, ScheduleKind, ScheduleSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {:.2} s, limit {:.0} s", t.as_secs_f64(), limit.as_secs_f64()))?;
    Ok(t)
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn polyplan(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_polyplan"))
        .args(args)
        .env_remove("POLYPLAN_LANGUAGE_STATS")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("polyplan {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

// ---- synthetic text ----

/// Pseudo-languages with distinct syllable inventories, so character
/// statistics separate them the way real languages separate.
fn syllables(lang: &str) -> &'static [&'static str] {
    match lang {
        "en" => &["th", "e", "an", "ing", "er", "o", "wa", "s", "re", "ly", "ou", "ght", "st", "ea", "wh", "ch"],
        "de" => &["sch", "ei", "ung", "ich", "ge", "en", "der", "au", "ü", "ck", "zu", "ßt", "ie", "lich", "kei", "tz"],
        "pt" => &["ção", "ão", "lh", "nh", "qu", "es", "do", "ra", "mo", "ê", "ci", "dade", "ma", "pa", "õe", "te"],
        _ => unreachable!(),
    }
}

struct Lexicon {
    words: Vec<String>,
    zipf: Zipf<f64>,
}

impl Lexicon {
    fn new(lang: &str, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let syl = syllables(lang);
        let mut words: Vec<String> = Vec::with_capacity(size);
        let mut seen = std::collections::HashSet::new();
        while words.len() < size {
            let n = rng.gen_range(1..=4);
            let w: String = (0..n).map(|_| *syl.choose(rng).unwrap()).collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        Self { zipf: Zipf::new(size as u64, 1.05).unwrap(), words }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, len: usize) -> String {
        let ws: Vec<&str> = (0..len).map(|_| self.words[self.zipf.sample(rng) as usize - 1].as_str()).collect();
        let mut s = ws.join(" ");
        s.push('.');
        s
    }
}

// ---- criteria ----

fn c1_params() -> Outcome {
    let start = Instant::now();
    let cfg = workspace_root().join("configs/default.toml");
    let out = polyplan(&["--config", cfg.to_str().unwrap(), "--format", "records", "params"])?;
    let t = within_time(start, Duration::from_secs(1))?;
    let (_, rows): (BTreeMap<String, String>, Vec<ParamCount>) =
        parse_records(PARAMS_SCHEMA, &out).map_err(|e| e.to_string())?;
    let p = rows.first().ok_or("no params record")?;
    check(p.embedding == 262_144_000, || format!("embedding {}", p.embedding))?;
    check(p.lm_head == 262_144_000, || format!("lm_head {}", p.lm_head))?;
    let rel = |x: u64, y: f64| (x as f64 - y).abs() / y;
    check(rel(p.non_embedding, 1.133e9) < 0.005, || format!("non_embedding {}", p.non_embedding))?;
    check(rel(p.total, 1.657e9) < 0.005, || format!("total {}", p.total))?;
    Ok(format!(
        "embedding={} lm_head={} (exact); non_embedding={} total={} (tol 0.5% of 1.133e9/1.657e9); {:.2} s < 1 s",
        p.embedding,
        p.lm_head,
        p.non_embedding,
        p.total,
        t.as_secs_f64()
    ))
}

fn c2_mixture() -> Outcome {
    let start = Instant::now();
    let cfg = workspace_root().join("configs/default.toml");
    let cfg = cfg.to_str().unwrap();
    let policy = MixturePolicy::default();
    let mut details = Vec::new();
    for (phase, want) in [("main", [0.50, 0.05, 0.45]), ("annealing", [0.325, 0.07, 0.605])] {
        let table = polyplan(&["--config", cfg, "plan", "--phase", phase])?;
        for (label, share) in ["english", "code_math", "other_languages"].iter().zip(want) {
            let line = format!("{label}: {:.1}%", 100.0 * share);
            check(table.lines().any(|l| l == line), || format!("{phase}: missing `{line}`"))?;
        }
        let plan = parse_plan_records(&polyplan(&["--config", cfg, "--format", "records", "plan", "--phase", phase])?)
            .map_err(|e| e.to_string())?;
        let budget = plan.budget_tokens as f64;
        let mut en = 0u64;
        let mut code = 0u64;
        let mut other = 0u64;
        let mut by_lang: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for e in &plan.entries {
            if e.category == Category::CodeMath {
                code += e.allocated_tokens;
            } else if e.language == "en" {
                en += e.allocated_tokens;
            } else {
                other += e.allocated_tokens;
                let slot = by_lang.entry(&e.language).or_default();
                slot.0 += e.allocated_tokens;
                if e.category.is_parallel() {
                    slot.1 += e.allocated_tokens;
                }
            }
        }
        // Shares are exact up to one token of integer apportionment.
        for (got, share, what) in [(en, want[0], "english"), (code, want[1], "code_math"), (other, want[2], "other")] {
            check((got as f64 - share * budget).abs() <= 1.0, || format!("{phase} {what}: {got} of {budget}"))?;
        }
        for (lang, (total, parallel)) in &by_lang {
            let target = policy.parallel_share_within_language * *total as f64;
            check((*parallel as f64 - target).abs() <= 1.0, || {
                format!("{phase} {lang}: parallel {parallel} of {total}, want {target}")
            })?;
        }
        details.push(format!("{phase} {:.1}/{:.1}/{:.1}%", 100.0 * want[0], 100.0 * want[1], 100.0 * want[2]));
        if phase == "main" {
            details.push(format!("parallel 20% ±1 token in {} languages", by_lang.len()));
        }
    }
    let t = within_time(start, Duration::from_secs(1))?;
    Ok(format!("{}; {:.2} s < 1 s", details.join(", "), t.as_secs_f64()))
}

const SIZES: [f64; 3] = [1e8, 2.03e8, 3.41e8];
const WEIGHTS: [f64; 3] = [0.25, 0.5, 1.0];

fn generator() -> ScalingLawParams {
    ScalingLawParams { alpha: 0.32, beta: 520.0, l_inf: 1.62, c1: 0.9, c2: 0.7, c3: 1.3, domain_tag: "pt".into() }
}

fn observe(law: &ScalingLawParams, sizes: &[f64], weights: &[f64], mut noise: impl FnMut() -> f64) -> Vec<LossObservation> {
    let mut out = Vec::new();
    for &n in sizes {
        for &p in weights {
            out.push(LossObservation {
                run_id: format!("n{n:e}-p{p}"),
                n_params: n,
                weight: p,
                domain_tag: law.domain_tag.clone(),
                loss: law.predict(n, p).unwrap() * (1.0 + noise()),
            });
        }
    }
    out
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn c3_fit() -> Outcome {
    let start = Instant::now();
    let law = generator();
    let opts = FitOptions::default();

    let clean = observe(&law, &SIZES, &WEIGHTS, || 0.0);
    let report = fit(&clean, &opts).map_err(|e| e.to_string())?;
    let noiseless = rms(clean.iter().map(|o| report.params.predict(o.n_params, o.weight).unwrap() - o.loss));
    check(noiseless < 1e-6, || format!("noiseless RMSE {noiseless:e}"))?;

    // Held-out runs sit between the training sizes and weights. The noise
    // floor is the RMS of the 1% noise itself, i.e. the error a perfect
    // model makes on the held-out observations. With 9 runs for 6
    // parameters a single draw is very noisy, so the error is pooled over
    // independent noise seeds.
    let held_sizes = [1.4e8, 2.3e8, 3.0e8];
    let held_weights = [0.3, 0.6, 0.8];
    let sigma = 0.01;
    let seeds = 20;
    let (mut err_sq, mut floor_sq, mut count) = (0.0, 0.0, 0.0);
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let train = observe(&law, &SIZES, &WEIGHTS, || normal.sample(&mut rng));
        let held = observe(&law, &held_sizes, &held_weights, || normal.sample(&mut rng));
        let r = fit(&train, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        let truth: Vec<f64> = held.iter().map(|o| law.predict(o.n_params, o.weight).unwrap()).collect();
        let sq: Vec<f64> = held.iter().map(|o| (r.params.predict(o.n_params, o.weight).unwrap() - o.loss).powi(2)).collect();
        let seed_floor = sigma * rms(truth.iter().copied());
        worst = worst.max((sq.iter().sum::<f64>() / sq.len() as f64).sqrt() / seed_floor);
        err_sq += sq.iter().sum::<f64>();
        floor_sq += truth.iter().map(|y| (sigma * y).powi(2)).sum::<f64>();
        count += held.len() as f64;
    }
    let ratio = (err_sq / count).sqrt() / (floor_sq / count).sqrt();
    check(ratio < 2.0, || format!("held-out error {ratio:.3}× noise floor"))?;
    let t = within_time(start, Duration::from_secs(10))?;
    Ok(format!(
        "noiseless RMSE {noiseless:.1e} < 1e-6; 1% noise: held-out error {ratio:.2}× floor < 2× (pooled over {seeds} seeds × 9 runs, worst seed {worst:.2}×); {:.2} s < 10 s",
        t.as_secs_f64()
    ))
}

fn c4_ratio_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 10_000;
    for i in 0..draws {
        let law = ScalingLawParams {
            alpha: rng.gen_range(0.01..2.0),
            beta: 10f64.powf(rng.gen_range(-3.0..6.0)),
            l_inf: rng.gen_range(0.0..5.0),
            c1: rng.gen_range(-10.0..10.0),
            c2: rng.gen_range(1e-3..10.0),
            c3: rng.gen_range(1e-3..10.0),
            domain_tag: "x".into(),
        };
        let f0 = ratio_function(&law, 0.0).map_err(|e| e.to_string())?;
        let f1 = ratio_function(&law, 1.0).map_err(|e| e.to_string())?;
        check(f0.abs() <= f64::EPSILON && (f1 - 1.0).abs() <= f64::EPSILON, || {
            format!("draw {i}: f(0)={f0:e} f(1)={f1:e} for {law:?}")
        })?;
    }
    Ok(format!("|f(0)|, |f(1)-1| <= {:e} over {draws} draws", f64::EPSILON))
}

fn c5_thresholds() -> Outcome {
    let cfg = FilterConfig::default();
    let pair = |lang: &str, clean: f64, quality: f64| ParallelPair {
        source_text: "source".into(),
        target_text: "target".into(),
        source_lang: lang.into(),
        target_lang: "en".into(),
        cleanliness_score: Some(clean),
        quality_estimate: Some(quality),
    };
    let cases = [
        (pair("pt", 0.55, 0.90), false, Some("cleanliness")),
        (pair("de", 0.55, 0.90), true, None),
        (pair("de", 0.80, 0.69), false, Some("quality")),
        (pair("pt", 0.60, 0.70), true, None),
        (pair("de", 0.50, 0.70), true, None),
    ];
    for (p, kept, reason) in &cases {
        let o = parallel_filter(p, &cfg).map_err(|e| e.to_string())?;
        check(o.kept == *kept && o.reason.as_deref() == *reason, || {
            format!("{}: clean {:?} quality {:?} gave {:?}", p.source_lang, p.cleanliness_score, p.quality_estimate, o.reason)
        })?;
    }
    let doc = |score: Option<f64>| {
        let d = Document::new("d", "text");
        match score {
            Some(s) => d.with_score(EDU_SCORE, s),
            None => d,
        }
    };
    let kept = |s: f64| edu_filter(&doc(Some(s)), &cfg).map(|o| o.kept).map_err(|e| e.to_string());
    check(kept(2.5)?, || "edu 2.5 rejected".into())?;
    check(!kept(2.0)?, || "edu 2.0 kept".into())?;
    check(kept(2.0 + 1e-9)?, || "edu just above 2 rejected".into())?;
    let missing = edu_filter(&doc(None), &cfg).map_err(|e| e.to_string());
    check(matches!(&missing, Err(m) if m.contains(EDU_SCORE)), || format!("missing channel gave {missing:?}"))?;
    Ok(format!("{} pair cases (pt 0.6 / other 0.5 / quality 0.7, equality kept); edu 2.5 kept, 2.0 rejected, missing errors", cases.len()))
}

fn small_tokenizer(vocab_size: usize) -> TokenizerModel {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut texts = Vec::new();
    for lang in ["en", "de", "pt"] {
        let lex = Lexicon::new(lang, 400, &mut rng);
        texts.extend((0..300).map(|_| lex.sentence(&mut rng, 12)));
    }
    TokenizerModel::train(texts.iter().map(String::as_str), &TrainOptions { vocab_size, ..TrainOptions::default() })
        .expect("training succeeds")
}

fn random_char(rng: &mut ChaCha8Rng) -> char {
    const SAMPLES: &[char] = &[' ', '\t', '\n', '\r', '\u{3000}', '\u{2581}', '\u{0378}', '\u{0380}', '\u{FFFE}', '\u{10FFFF}', '\u{E000}', '\u{FEFF}'];
    match rng.gen_range(0..5) {
        0 => rng.gen_range(' '..='~'),
        1 => *SAMPLES.choose(rng).unwrap(),
        2 => rng.gen_range('\u{80}'..='\u{2FFF}'),
        // Whole scalar range, assigned or not (surrogates are skipped by
        // the char range).
        _ => rng.gen_range('\0'..=char::MAX),
    }
}

fn c6_round_trip() -> Outcome {
    let model = small_tokenizer(600);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let n = 10_000;
    for i in 0..n {
        let len = rng.gen_range(0..40);
        let mut s: String = (0..len).map(|_| random_char(&mut rng)).collect();
        if i % 50 == 0 {
            s.push_str("<|im_end|>");
        }
        let ids = model.encode(&s, false);
        let back = model.decode(&ids).map_err(|e| e.to_string())?;
        check(back == s, || format!("string {i}: {s:?} decoded as {back:?}"))?;
    }
    // Characters with no piece of their own fall back to one byte token per
    // UTF-8 byte.
    let mut tested = [0usize; 4];
    for c in ['é', 'ж', '中', '\u{0378}', '😀', '\u{10FFFF}', 'Ω', '€'] {
        check(model.piece_id(&c.to_string()).is_none(), || format!("{c:?} unexpectedly in vocabulary"))?;
        let ids = model.encode_continuation(&c.to_string(), false);
        let all_bytes = ids.iter().all(|&id| model.token(id).map(|t| t.kind) == Some(TokenKind::Byte));
        check(all_bytes && ids.len() == c.len_utf8(), || format!("{c:?} gave {ids:?}"))?;
        tested[c.len_utf8() - 1] += 1;
    }
    Ok(format!(
        "decode(encode(x)) == x for {n} random strings; absent chars of 2/3/4 bytes → {}/{}/{} checked, byte count exact",
        tested[1], tested[2], tested[3]
    ))
}

fn c7_fertility() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for lang in ["en", "de", "pt"] {
        let lex = Lexicon::new(lang, 12_000, &mut rng);
        train.extend((0..4000).map(|_| lex.sentence(&mut rng, 15)));
        held.extend((0..300).map(|i| Document::new(format!("{lang}{i}"), lex.sentence(&mut rng, 15)).with_language(lang)));
    }
    let sizes = [1_000usize, 4_000, 16_000];
    let mut rows: Vec<BTreeMap<String, f64>> = Vec::new();
    for &size in &sizes {
        let model = TokenizerModel::train(train.iter().map(String::as_str), &TrainOptions { vocab_size: size, ..TrainOptions::default() })
            .map_err(|e| e.to_string())?;
        check(model.vocab_size() == size, || format!("vocab {size} reached only {}", model.vocab_size()))?;
        let mut per = fertility(&model, &held, true).map_err(|e| e.to_string())?;
        let (w, p) = fertility(&model, &held, false).map_err(|e| e.to_string())?[ALL_LANGUAGES];
        per.insert(ALL_LANGUAGES.into(), (w, p));
        rows.push(per.into_iter().map(|(l, (w, p))| (l, p as f64 / w as f64)).collect());
    }
    for pair in rows.windows(2) {
        for (lang, f) in &pair[1] {
            check(*f <= pair[0][lang], || format!("{lang}: fertility rose from {} to {f}", pair[0][lang]))?;
        }
    }
    let all: Vec<String> = rows.iter().map(|r| format!("{:.3}", r[ALL_LANGUAGES])).collect();
    Ok(format!(
        "held-out fertility at {{1k, 4k, 16k}} = {} (non-increasing for all, en, de, pt); {:.1} s",
        all.join(" ≥ "),
        start.elapsed().as_secs_f64()
    ))
}

fn c8_schedules() -> Outcome {
    let acct = token_accounting(3072, 4096, 4_000_000_000_000, MixturePolicy::default().annealing_fraction_of_steps)
        .map_err(|e| e.to_string())?;
    check(acct.total_steps == 317_892, || format!("total_steps {}", acct.total_steps))?;
    let spec = ScheduleSpec { total_steps: acct.total_steps, ..ScheduleSpec::default() };
    let lr = |s: &ScheduleSpec, step: u64| lr_at(s, step).map_err(|e| e.to_string());
    let tol = 1e-15;
    let near = |a: f64, b: f64| (a - b).abs() <= tol;
    let (w, d) = (spec.warmup_end(), spec.decay_start());
    check(near(lr(&spec, w)?, 3e-4), || format!("lr at warmup end {w}"))?;
    for step in [w, w + 1, (w + d) / 2, d - 1, d] {
        check(near(lr(&spec, step)?, 3e-4), || format!("lr at plateau step {step}"))?;
    }
    check(lr(&spec, d + 1)? < 3e-4, || "decay did not start after onset".into())?;
    check(near(lr(&spec, spec.total_steps)?, 3e-5), || "final lr".into())?;
    check(d == acct.annealing_start_step, || format!("decay onset {d} vs annealing start {}", acct.annealing_start_step))?;

    let cosine = ScheduleSpec { kind: ScheduleKind::Cosine, total_steps: 1000, ..ScheduleSpec::default() };
    let mid = cosine.warmup_end() + (cosine.total_steps - cosine.warmup_end()) / 2;
    check((cosine.total_steps - cosine.warmup_end()).is_multiple_of(2), || "cosine midpoint not on a step".into())?;
    let at_mid = lr(&cosine, mid)?;
    check(near(at_mid, 1.65e-4), || format!("cosine midpoint {at_mid:e}"))?;
    Ok(format!(
        "trapezoid 3e-4 on [{w}, {d}], 3e-5 at {}; cosine midpoint {at_mid:.6e}; decay onset = annealing start = {d} (tol {tol:e})",
        spec.total_steps
    ))
}

fn c9_chat() -> Outcome {
    let model = small_tokenizer(500);
    let dialogue = vec![
        (Role::System, "Answer every question in one short sentence.".to_string()),
        (Role::User, "Qual é a capital de Portugal?".to_string()),
        (Role::Assistant, "The capital of Portugal is Lisbon.".to_string()),
        (Role::User, "¿Y cuántos habitantes tiene la ciudad?".to_string()),
        (Role::Assistant, "Lisbon has a little over half a million residents.".to_string()),
    ];
    let seq = format_chat(&dialogue, &model).map_err(|e| e.to_string())?;
    let text = model.decode(&seq.token_ids).map_err(|e| e.to_string())?;
    check(text.starts_with("<s><|im_start|>system"), || format!("decoded text starts {:?}", &text[..40.min(text.len())]))?;
    let im_end = model.control_id("<|im_end|>").ok_or("no <|im_end|>")?;
    check(seq.eos_id == im_end, || "eos is not <|im_end|>".into())?;
    // Oracle mask from the turn layout: assistant text plus its closing
    // <|im_end|>, nothing else.
    let mut want = vec![0u8; seq.token_ids.len()];
    let mut assistant_tokens = 0;
    for t in seq.turns.iter().filter(|t| t.role == Role::Assistant) {
        check(seq.token_ids[t.end - 1] == im_end, || "assistant turn not closed by <|im_end|>".into())?;
        want[t.content_start..t.end].iter_mut().for_each(|m| *m = 1);
        assistant_tokens += t.end - t.content_start;
    }
    check(seq.loss_mask == want, || "loss mask differs from assistant spans".into())?;
    let ones = seq.loss_mask.iter().filter(|&&m| m == 1).count();
    Ok(format!("decoded text begins <s><|im_start|>system; mask = {ones} tokens = assistant spans incl. 2 <|im_end|> ({assistant_tokens})"))
}

fn c10_pipeline() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let en = Lexicon::new("en", 3000, &mut rng);
    let de = Lexicon::new("de", 3000, &mut rng);

    let write_lines = |name: &str, lines: &[String]| -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, lines.join("\n")).unwrap();
        p
    };
    let seeds = BTreeMap::from([
        ("en".to_string(), write_lines("en.txt", &(0..400).map(|_| en.sentence(&mut rng, 12)).collect::<Vec<_>>())),
        ("de".to_string(), write_lines("de.txt", &(0..400).map(|_| de.sentence(&mut rng, 12)).collect::<Vec<_>>())),
    ]);

    let n = 10_000;
    let mut lines = Vec::with_capacity(n);
    let mut texts: Vec<String> = Vec::new();
    for i in 0..n {
        let len = rng.gen_range(8..40);
        let text = match rng.gen_range(0..20) {
            0 | 1 if !texts.is_empty() => texts[rng.gen_range(0..texts.len())].clone(),
            2 => "too short".to_string(),
            3 => (0..12).map(|_| rng.gen_range(10_000..99_999).to_string()).collect::<Vec<_>>().join(" "),
            4 => (0..20).map(|_| "qxzv".repeat(rng.gen_range(1..3))).collect::<Vec<_>>().join(" "),
            5..=9 => de.sentence(&mut rng, len),
            _ => en.sentence(&mut rng, len),
        };
        texts.push(text.clone());
        let doc = Document::new(format!("doc{i:05}"), text);
        lines.push(if i % 997 == 0 { "{not json".to_string() } else { serde_json_line(&doc) });
    }
    let input = write_lines("in.jsonl", &lines);

    let config = FilterConfig::default();
    let stages = [Stage::Dedup, Stage::LanguageId, Stage::Heuristics, Stage::Perplexity];
    let resources = PipelineResources::load(&stages, &seeds, &seeds, &BTreeMap::new(), &config, 0).map_err(|e| e.to_string())?;

    let mut outputs = Vec::new();
    for workers in [1, 8] {
        let out = dir.path().join(format!("out{workers}.jsonl"));
        let report = run_pipeline(std::slice::from_ref(&input), &out, &stages, &config, &resources, workers).map_err(|e| e.to_string())?;
        outputs.push((fs::read(&out).map_err(|e| e.to_string())?, report));
    }
    let (bytes1, r1) = &outputs[0];
    let (bytes8, r8) = &outputs[1];
    check(bytes1 == bytes8, || "outputs differ between 1 and 8 workers".into())?;
    check(r1.stages == r8.stages, || "stage counters differ between 1 and 8 workers".into())?;
    for s in &r1.stages {
        check(s.kept + s.rejected.values().sum::<u64>() == s.input, || format!("stage {} counters do not add up", s.stage))?;
    }
    let rejected: u64 = r1.stages.iter().flat_map(|s| s.rejected.values()).sum();
    check(r1.stages[0].input == n as u64, || "not every line was read".into())?;

    // A second dedup pass over the output rejects nothing and changes nothing.
    let first = dir.path().join("out1.jsonl");
    let again = dir.path().join("again.jsonl");
    let r = run_pipeline(&[first], &again, &[Stage::Dedup], &config, &PipelineResources::default(), 4).map_err(|e| e.to_string())?;
    check(r.stages.iter().all(|s| s.rejected.is_empty()), || format!("second dedup pass rejected {:?}", r.stages))?;
    check(fs::read(&again).map_err(|e| e.to_string())? == *bytes1, || "dedup pass changed the output".into())?;

    let t = within_time(start, Duration::from_secs(30))?;
    let reasons: Vec<String> = r1
        .stages
        .iter()
        .flat_map(|s| s.rejected.iter().map(move |(k, v)| format!("{}:{k}={v}", s.stage)))
        .collect();
    Ok(format!(
        "{n} docs, workers 1 vs 8 byte-identical, kept {} / rejected {rejected} [{}]; dedup idempotent; {:.1} s < 30 s",
        r1.kept(),
        reasons.join(" "),
        t.as_secs_f64()
    ))
}

fn serde_json_line(doc: &Document) -> String {
    // Built by hand so this crate does not need a JSON dependency; ids and
    // generated texts contain no characters that need escaping.
    format!("{{\"id\":\"{}\",\"text\":\"{}\"}}", doc.id, doc.text)
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("params", c1_params),
        ("mixture shares", c2_mixture),
        ("scaling-law fit recovery", c3_fit),
        ("ratio-function boundaries", c4_ratio_bounds),
        ("threshold filters", c5_thresholds),
        ("tokenizer round trip", c6_round_trip),
        ("fertility monotonicity", c7_fertility),
        ("schedules", c8_schedules),
        ("chat format", c9_chat),
        ("pipeline determinism", c10_pipeline),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
