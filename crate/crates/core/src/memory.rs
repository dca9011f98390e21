//! Per-GPU training memory estimate and minimum-GPU search.
//!
//! Under data parallelism with ZeRO-3, gradient checkpointing and
//! FlashAttention, per-GPU memory in bytes is approximately
//!
//! ```text
//! 16·p/n + (12 + 2·l)·b·s·h + 12·b·s·v
//! ```
//!
//! for `p` parameters, `n` GPUs, `l` layers, per-GPU batch `b`, sequence
//! length `s`, hidden size `h` and vocabulary `v`. The three terms cover
//! sharded parameters/gradients/optimizer state, checkpointed activations
//! and the logits. Byte terms are computed in exact integer arithmetic;
//! reported sizes are in GiB (2^30 bytes), the unit under which LLaMA-2 7B
//! on two GPUs with `b = 8, s = 4096` comes to 71.42.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingShape {
    pub params: u64,
    pub gpus: u64,
    pub layers: u64,
    pub batch: u64,
    pub seq_len: u64,
    pub hidden: u64,
    pub vocab: u64,
}

impl TrainingShape {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("params", self.params),
            ("gpus", self.gpus),
            ("layers", self.layers),
            ("batch", self.batch),
            ("seq_len", self.seq_len),
            ("hidden", self.hidden),
            ("vocab", self.vocab),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("{name} must be a positive integer"))),
            None => Ok(()),
        }
    }

    pub fn with_gpus(self, gpus: u64) -> Self {
        Self { gpus, ..self }
    }
}

/// Exact byte terms. The parameter term is `param_numerator / gpus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTerms {
    pub param_numerator: u128,
    pub gpus: u64,
    pub activation: u128,
    pub logits: u128,
}

impl ByteTerms {
    pub fn param(&self) -> f64 {
        self.param_numerator as f64 / self.gpus as f64
    }

    pub fn total(&self) -> f64 {
        self.param() + (self.activation + self.logits) as f64
    }
}

pub fn estimate_bytes(shape: &TrainingShape) -> ByteTerms {
    let s = |v: u64| v as u128;
    let tokens = s(shape.batch) * s(shape.seq_len);
    ByteTerms {
        param_numerator: 16 * s(shape.params),
        gpus: shape.gpus,
        activation: (12 + 2 * s(shape.layers)) * tokens * s(shape.hidden),
        logits: 12 * tokens * s(shape.vocab),
    }
}

/// Per-GPU memory in GiB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub param_term: f64,
    pub activation_term: f64,
    pub logits_term: f64,
    pub total: f64,
}

pub fn estimate(shape: &TrainingShape) -> MemoryEstimate {
    let b = estimate_bytes(shape);
    let param_term = b.param_numerator as f64 / (b.gpus as f64 * GIB);
    let activation_term = b.activation as f64 / GIB;
    let logits_term = b.logits as f64 / GIB;
    MemoryEstimate {
        param_term,
        activation_term,
        logits_term,
        total: param_term + activation_term + logits_term,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuProfile {
    pub name: String,
    pub capacity_gib: f64,
}

impl GpuProfile {
    pub fn new(name: &str, capacity_gib: f64) -> Self {
        Self {
            name: name.into(),
            capacity_gib,
        }
    }

    pub fn a100() -> Self {
        Self::new("A100", 80.0)
    }

    pub fn a6000() -> Self {
        Self::new("A6000", 48.0)
    }

    /// Looks up a built-in profile by case-insensitive name.
    pub fn named(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "a100" | "a100-80g" => Some(Self::a100()),
            "a6000" | "a6000-48g" => Some(Self::a6000()),
            _ => None,
        }
    }
}

/// Smallest GPU count in `[1, n_max]` whose estimate fits `gpu`, or `None`.
/// The estimate is decreasing in the GPU count, so this bisects.
pub fn min_gpus(shape: &TrainingShape, gpu: &GpuProfile, n_max: u64) -> Option<u64> {
    let fits = |n: u64| estimate(&shape.with_gpus(n)).total <= gpu.capacity_gib;
    if n_max == 0 || !fits(n_max) {
        return None;
    }
    let (mut lo, mut hi) = (1u64, n_max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Architecture of a named model size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub name: &'static str,
    /// Size label as usually quoted, e.g. "6.7B".
    pub label: &'static str,
    pub params: u64,
    pub layers: u64,
    pub hidden: u64,
    pub vocab: u64,
    pub max_seq_len: u64,
}

impl ModelPreset {
    pub fn shape(&self, gpus: u64, batch: u64, seq_len: u64) -> TrainingShape {
        TrainingShape {
            params: self.params,
            gpus,
            layers: self.layers,
            batch,
            seq_len,
            hidden: self.hidden,
            vocab: self.vocab,
        }
    }
}

pub const PRESETS: [ModelPreset; 6] = [
    ModelPreset {
        name: "opt-1.3b",
        label: "1.3B",
        params: 1_315_758_080,
        layers: 24,
        hidden: 2048,
        vocab: 50272,
        max_seq_len: 2048,
    },
    ModelPreset {
        name: "opt-2.7b",
        label: "2.7B",
        params: 2_651_596_800,
        layers: 32,
        hidden: 2560,
        vocab: 50272,
        max_seq_len: 2048,
    },
    ModelPreset {
        name: "llama2-7b",
        label: "6.7B",
        params: 6_738_415_616,
        layers: 32,
        hidden: 4096,
        vocab: 32000,
        max_seq_len: 4096,
    },
    ModelPreset {
        name: "llama2-13b",
        label: "13B",
        params: 13_015_864_320,
        layers: 40,
        hidden: 5120,
        vocab: 32000,
        max_seq_len: 4096,
    },
    ModelPreset {
        name: "llama-30b",
        label: "30B",
        params: 32_528_943_616,
        layers: 60,
        hidden: 6656,
        vocab: 32000,
        max_seq_len: 2048,
    },
    ModelPreset {
        name: "llama2-70b",
        label: "70B",
        params: 68_976_648_192,
        layers: 80,
        hidden: 8192,
        vocab: 32000,
        max_seq_len: 4096,
    },
];

pub fn preset(name: &str) -> Option<&'static ModelPreset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Published ZeRO-3 minimum GPU counts as `(label, A100 80G, A6000 48G)`.
pub const PUBLISHED_ZERO3: [(&str, u64, u64); 6] = [
    ("1.3B", 1, 1),
    ("2.7B", 1, 2),
    ("6.7B", 2, 3),
    ("13B", 3, 5),
    ("30B", 8, 12),
    ("70B", 16, 26),
];

fn published(label: &str, gpu: &str) -> Option<u64> {
    let row = PUBLISHED_ZERO3.iter().find(|r| r.0 == label)?;
    match gpu {
        "A100" => Some(row.1),
        "A6000" => Some(row.2),
        _ => None,
    }
}

/// Batch size and sequence length used for every cell of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableAssumptions {
    pub batch: u64,
    pub seq_len: u64,
    /// Largest GPU count searched.
    pub n_max: u64,
}

impl Default for TableAssumptions {
    /// `b = 2, s = 4096`: reproduces the published 6.7B, 13B and 70B A100
    /// entries exactly.
    fn default() -> Self {
        Self {
            batch: 2,
            seq_len: 4096,
            n_max: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub gpu: String,
    pub min_gpus: Option<u64>,
    /// Per-GPU GiB at `min_gpus`.
    pub per_gpu_gib: Option<f64>,
    pub published: Option<u64>,
}

impl TableCell {
    /// Computed and published counts differ (including infeasible cells).
    pub fn is_discrepant(&self) -> bool {
        self.published.is_some() && self.published != self.min_gpus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub preset: String,
    pub label: String,
    pub cells: Vec<TableCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuTable {
    pub assumptions: TableAssumptions,
    pub rows: Vec<TableRow>,
}

pub fn report_table(
    presets: &[ModelPreset],
    gpus: &[GpuProfile],
    assumptions: TableAssumptions,
) -> GpuTable {
    let rows = presets
        .iter()
        .map(|p| TableRow {
            preset: p.name.into(),
            label: p.label.into(),
            cells: gpus
                .iter()
                .map(|g| {
                    let shape = p.shape(1, assumptions.batch, assumptions.seq_len);
                    let n = min_gpus(&shape, g, assumptions.n_max);
                    TableCell {
                        gpu: g.name.clone(),
                        min_gpus: n,
                        per_gpu_gib: n.map(|n| estimate(&shape.with_gpus(n)).total),
                        published: published(p.label, &g.name),
                    }
                })
                .collect(),
        })
        .collect();
    GpuTable { assumptions, rows }
}

impl GpuTable {
    /// Plain-text rendering. Cells that disagree with the published count
    /// carry it in brackets.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Minimum GPUs (ZeRO-3), batch={} seq_len={}",
            self.assumptions.batch, self.assumptions.seq_len
        );
        let gpus: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.cells.iter().map(|c| c.gpu.as_str()).collect())
            .unwrap_or_default();
        let _ = write!(out, "{:<8} {:<12}", "size", "preset");
        for g in &gpus {
            let _ = write!(out, " {:>24}", g);
        }
        out.push('\n');
        let mut discrepancies = Vec::new();
        for row in &self.rows {
            let _ = write!(out, "{:<8} {:<12}", row.label, row.preset);
            for c in &row.cells {
                let mut cell = match (c.min_gpus, c.per_gpu_gib) {
                    (Some(n), Some(gib)) => format!("{n} x {gib:.2} GiB"),
                    _ => String::from("infeasible"),
                };
                if c.is_discrepant() {
                    if let Some(p) = c.published {
                        cell.push_str(&format!(" [{p}]"));
                    }
                    discrepancies.push(format!(
                        "{} on {}: computed {}, published {}",
                        row.label,
                        c.gpu,
                        c.min_gpus
                            .map_or(String::from("infeasible"), |n| format!("{n}")),
                        c.published.unwrap_or(0)
                    ));
                }
                let _ = write!(out, " {:>24}", cell);
            }
            out.push('\n');
        }
        for d in discrepancies {
            let _ = writeln!(out, "discrepancy: {d}");
        }
        out
    }
}
