//! Parameter counting and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense decoder-only transformer hyperparameters (GQA, SwiGLU, RMSNorm,
/// no biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub layers: u64,
    pub d_model: u64,
    pub ffn_hidden: u64,
    pub heads: u64,
    pub kv_heads: u64,
    pub vocab_size: u64,
    pub seq_len: u64,
    pub tied_embeddings: bool,
    pub rope_theta: f64,
}

impl Default for ModelShape {
    /// The 1.7B-parameter reference configuration.
    fn default() -> Self {
        Self {
            layers: 24,
            d_model: 2048,
            ffn_hidden: 5632,
            heads: 16,
            kv_heads: 8,
            vocab_size: 128_000,
            seq_len: 4096,
            tied_embeddings: false,
            rope_theta: 10_000.0,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("model.d_model", self.d_model),
            ("model.heads", self.heads),
            ("model.kv_heads", self.kv_heads),
            ("model.vocab_size", self.vocab_size),
            ("model.seq_len", self.seq_len),
        ];
        for (key, v) in nonzero {
            if v == 0 {
                return Err(Error::validation(key, "must be positive"));
            }
        }
        if !self.heads.is_multiple_of(self.kv_heads) {
            return Err(Error::validation(
                "model.kv_heads",
                format!("{} heads are not divisible by {} kv heads", self.heads, self.kv_heads),
            ));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::validation(
                "model.heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.heads),
            ));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0) {
            return Err(Error::validation("model.rope_theta", "must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub embedding: u64,
    pub lm_head: u64,
    pub non_embedding: u64,
    pub total: u64,
}

pub fn count_params(shape: &ModelShape) -> Result<ParamCount> {
    shape.validate()?;
    let d = shape.d_model;
    let embedding = shape.vocab_size * d;
    let lm_head = if shape.tied_embeddings { 0 } else { embedding };

    let kv_dim = shape.kv_heads * shape.head_dim();
    // Q and O are square; K and V project to the shared kv heads.
    let attention = 2 * d * d + 2 * d * kv_dim;
    // gate, up and down projections
    let ffn = 3 * d * shape.ffn_hidden;
    // pre-attention and pre-FFN RMSNorm gains
    let norms = 2 * d;
    let non_embedding = shape.layers * (attention + ffn + norms) + d;

    Ok(ParamCount {
        embedding,
        lm_head,
        non_embedding,
        total: embedding + lm_head + non_embedding,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Trapezoid,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "trapezoid" | "wsd" => Ok(ScheduleKind::Trapezoid),
            other => Err(Error::validation(
                "schedule.kind",
                format!("unknown schedule `{other}` (expected cosine or trapezoid)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    /// Length of the final linear decay; ignored by the cosine schedule.
    pub decay_fraction: f64,
    pub max_lr: f64,
    pub min_lr: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Trapezoid,
            total_steps: 317_892,
            warmup_fraction: 0.10,
            decay_fraction: 0.10,
            max_lr: 3e-4,
            min_lr: 3e-5,
        }
    }
}

/// `floor(total · fraction)`, snapping to the nearest integer when the
/// product is within float noise of it (so `10 · 0.9` gives 9, not 8).
pub(crate) fn fraction_of_steps(total: u64, fraction: f64) -> u64 {
    let x = total as f64 * fraction;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        x.floor() as u64
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::validation("schedule.total_steps", "must be positive"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::validation(
                "schedule.warmup_fraction",
                "must lie in (0, 1)",
            ));
        }
        if self.kind == ScheduleKind::Trapezoid {
            if !(self.decay_fraction > 0.0 && self.decay_fraction < 1.0) {
                return Err(Error::validation(
                    "schedule.decay_fraction",
                    "must lie in (0, 1)",
                ));
            }
            if self.warmup_fraction + self.decay_fraction >= 1.0 {
                return Err(Error::validation(
                    "schedule.decay_fraction",
                    "warmup_fraction + decay_fraction must be below 1",
                ));
            }
        }
        if !(self.min_lr.is_finite() && self.max_lr.is_finite() && self.min_lr >= 0.0) {
            return Err(Error::validation("schedule.min_lr", "must be finite and non-negative"));
        }
        if self.min_lr > self.max_lr {
            return Err(Error::validation("schedule.min_lr", "must not exceed max_lr"));
        }
        if self.warmup_end() == 0 || self.warmup_end() >= self.total_steps {
            return Err(Error::validation(
                "schedule.total_steps",
                "too few steps to fit a warmup phase",
            ));
        }
        if self.kind == ScheduleKind::Trapezoid && self.decay_start() <= self.warmup_end() {
            return Err(Error::validation(
                "schedule.total_steps",
                "too few steps to fit warmup, plateau and decay",
            ));
        }
        Ok(())
    }

    /// Step at which warmup reaches `max_lr`.
    pub fn warmup_end(&self) -> u64 {
        fraction_of_steps(self.total_steps, self.warmup_fraction)
    }

    /// First step of the trapezoid's linear decay.
    pub fn decay_start(&self) -> u64 {
        fraction_of_steps(self.total_steps, 1.0 - self.decay_fraction)
    }
}

pub fn lr_at(spec: &ScheduleSpec, step: u64) -> Result<f64> {
    spec.validate()?;
    if step > spec.total_steps {
        return Err(Error::validation(
            "step",
            format!("{step} is past total_steps {}", spec.total_steps),
        ));
    }
    Ok(lr_unchecked(spec, step))
}

fn lr_unchecked(spec: &ScheduleSpec, step: u64) -> f64 {
    let warmup = spec.warmup_end();
    if step < warmup {
        return spec.max_lr * step as f64 / warmup as f64;
    }
    match spec.kind {
        ScheduleKind::Trapezoid => {
            let decay = spec.decay_start();
            if step <= decay {
                spec.max_lr
            } else {
                let t = (step - decay) as f64 / (spec.total_steps - decay) as f64;
                spec.min_lr + (spec.max_lr - spec.min_lr) * (1.0 - t)
            }
        }
        ScheduleKind::Cosine => {
            let t = (step - warmup) as f64 / (spec.total_steps - warmup) as f64;
            spec.min_lr
                + 0.5 * (spec.max_lr - spec.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// `resolution` evenly spaced `(step, lr)` samples including both endpoints.
pub fn schedule_table(spec: &ScheduleSpec, resolution: usize) -> Result<Vec<(u64, f64)>> {
    spec.validate()?;
    if resolution < 2 {
        return Err(Error::validation("resolution", "must be at least 2"));
    }
    let last = (resolution - 1) as u128;
    Ok((0..resolution as u128)
        .map(|i| {
            let step = (i * spec.total_steps as u128 / last) as u64;
            (step, lr_unchecked(spec, step))
        })
        .collect())
}
