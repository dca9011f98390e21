use std::fs;
use std::io::Write;
use std::path::Path;

use deskbox_core::cache::CacheStats;
use deskbox_core::scoring::{compute_metrics, Answer, Metric};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Top-level `schema_version` of evaluation reports.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub sum_logprob: f64,
    pub token_count: usize,
    pub byte_count: usize,
    pub avg_ppl: f64,
}

/// Mode-specific evidence behind a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    PplOptions {
        options: Vec<OptionScore>,
    },
    LetterOptions {
        letter_logits: Vec<f32>,
    },
    Generation {
        samples: Vec<String>,
        extracted: Vec<Option<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: Answer,
    pub reference: Answer,
    pub correct: bool,
    /// Tokens this instance sent through the prompt cache.
    pub prompt_tokens: u64,
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub metric: Metric,
    pub correct: usize,
    pub total: usize,
    pub score: f64,
}

impl Metrics {
    pub fn from_predictions(
        predictions: &[Prediction],
        metric: Metric,
    ) -> deskbox_core::Result<Self> {
        let preds: Vec<Answer> = predictions.iter().map(|p| p.prediction.clone()).collect();
        let refs: Vec<Answer> = predictions.iter().map(|p| p.reference.clone()).collect();
        Ok(Self {
            metric,
            correct: predictions.iter().filter(|p| p.correct).count(),
            total: predictions.len(),
            score: compute_metrics(&preds, &refs, metric)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instances: usize,
    pub fewshot_ids: Vec<String>,
    /// Length of the few-shot prefix shared by every prompt.
    pub prefix_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub deskbox: String,
    pub report_schema: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            deskbox: env!("CARGO_PKG_VERSION").into(),
            report_schema: REPORT_SCHEMA_VERSION,
        }
    }
}

/// Wall-clock milliseconds. The only part of a report that varies between
/// identical runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub load_ms: f64,
    pub score_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub run: RunSummary,
    pub predictions: Vec<Prediction>,
    pub metrics: Metrics,
    pub cache_stats: CacheStats,
    pub versions: Versions,
    pub timing: Timing,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Runtime(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the report to `path`, or stdout when `None`.
    pub fn write(&self, path: Option<&Path>) -> Result<()> {
        let json = self.to_json()?;
        match path {
            Some(p) => fs::write(p, json).map_err(|e| Error::io(p, e)),
            None => std::io::stdout()
                .write_all(json.as_bytes())
                .map_err(|e| Error::io("<stdout>", e)),
        }
    }

    /// Recomputes every derived field from the per-instance records.
    pub fn verify(&self) -> std::result::Result<(), String> {
        let metric = self.metrics.metric;
        for p in &self.predictions {
            let single = compute_metrics(
                std::slice::from_ref(&p.prediction),
                std::slice::from_ref(&p.reference),
                metric,
            )
            .map_err(|e| e.to_string())?;
            if (single == 1.0) != p.correct {
                return Err(format!("instance {}: stored correctness disagrees", p.id));
            }
            if let (Detail::PplOptions { options }, Answer::Index(chosen)) =
                (&p.detail, &p.prediction)
            {
                let mut best = 0;
                for (i, o) in options.iter().enumerate() {
                    if o.avg_ppl < options[best].avg_ppl {
                        best = i;
                    }
                }
                if best != *chosen {
                    return Err(format!(
                        "instance {}: chosen option is not the lowest perplexity",
                        p.id
                    ));
                }
            }
        }
        let recomputed =
            Metrics::from_predictions(&self.predictions, metric).map_err(|e| e.to_string())?;
        if recomputed != self.metrics {
            return Err(format!(
                "stored metrics {:?} != recomputed {:?}",
                self.metrics, recomputed
            ));
        }
        let presented: u64 = self.predictions.iter().map(|p| p.prompt_tokens).sum();
        if self.cache_stats.tokens_presented() != presented {
            return Err(format!(
                "cache accounts for {} tokens but instances presented {presented}",
                self.cache_stats.tokens_presented()
            ));
        }
        if self.run.instances != self.predictions.len() {
            return Err("instance count does not match predictions".into());
        }
        Ok(())
    }
}

/// A report's JSON with the `timing` member removed, for comparing runs.
pub fn without_timing(json: &str) -> Result<serde_json::Value> {
    let mut v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Runtime(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    Ok(v)
}
