use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub dataset: String,
    pub weight: f64,
}

/// Static mixture proportions over named datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
    pub total_samples: usize,
    pub seed: u64,
}

/// FLAN / Alpaca proportions used for instruction tuning comparisons.
pub const FLAN_ALPACA_PRESETS: [(&str, f64, f64); 3] = [
    ("100/0", 100.0, 0.0),
    ("50/50", 50.0, 50.0),
    ("0/100", 0.0, 100.0),
];

impl MixtureSpec {
    pub fn new(entries: &[(&str, f64)], total_samples: usize, seed: u64) -> Self {
        Self {
            entries: entries
                .iter()
                .map(|&(d, w)| MixtureEntry {
                    dataset: d.into(),
                    weight: w,
                })
                .collect(),
            total_samples,
            seed,
        }
    }

    /// One of [`FLAN_ALPACA_PRESETS`] over datasets named `flan` and `alpaca`.
    pub fn flan_alpaca(preset: &str, total_samples: usize, seed: u64) -> Option<Self> {
        FLAN_ALPACA_PRESETS
            .iter()
            .find(|(name, _, _)| *name == preset)
            .map(|&(_, f, a)| Self::new(&[("flan", f), ("alpaca", a)], total_samples, seed))
    }

    /// Weights scaled to sum to one.
    pub fn proportions(&self) -> Result<Vec<f64>> {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        if self
            .entries
            .iter()
            .any(|e| !e.weight.is_finite() || e.weight < 0.0)
        {
            return Err(Error::Contract(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Contract("mixture weights sum to zero".into()));
        }
        Ok(self.entries.iter().map(|e| e.weight / total).collect())
    }
}

/// What to do when a dataset runs out of unseen examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exhaustion {
    /// Start another pass over the dataset in a fresh order.
    #[default]
    Replace,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSample<T> {
    pub source: String,
    /// Index of the item in its source dataset.
    pub index: usize,
    pub item: T,
}

/// Draws `spec.total_samples` items. Each draw picks a dataset with
/// probability proportional to its weight, then takes that dataset's next
/// item in a seeded shuffled order.
pub fn sample_mixture<T: Clone>(
    spec: &MixtureSpec,
    datasets: &BTreeMap<String, Vec<T>>,
    exhaustion: Exhaustion,
) -> Result<Vec<MixtureSample<T>>> {
    spec.proportions()?;
    let mut sources = Vec::with_capacity(spec.entries.len());
    for (i, e) in spec.entries.iter().enumerate() {
        let data = datasets.get(&e.dataset).ok_or_else(|| {
            Error::Contract(format!("unknown dataset {:?} in mixture", e.dataset))
        })?;
        if e.weight > 0.0 && data.is_empty() {
            return Err(Error::Contract(format!(
                "dataset {:?} has weight but no items",
                e.dataset
            )));
        }
        sources.push((i, data));
    }
    let picker = WeightedIndex::new(spec.entries.iter().map(|e| e.weight))
        .map_err(|e| Error::Contract(format!("invalid mixture weights: {e}")))?;
    let mut rng = stream(Domain::Mixture, spec.seed, u64::MAX, 0);

    struct Cursor {
        order: Vec<usize>,
        next: usize,
        epoch: u64,
    }
    let reshuffle = |source: usize, len: usize, epoch: u64| {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut stream(
            Domain::Mixture,
            spec.seed,
            source as u64,
            epoch,
        ));
        order
    };
    let mut cursors: Vec<Cursor> = sources
        .iter()
        .map(|(i, d)| Cursor {
            order: reshuffle(*i, d.len(), 0),
            next: 0,
            epoch: 0,
        })
        .collect();

    let mut out = Vec::with_capacity(spec.total_samples);
    for _ in 0..spec.total_samples {
        let s = picker.sample(&mut rng);
        let (src, data) = sources[s];
        let cur = &mut cursors[s];
        if cur.next == cur.order.len() {
            match exhaustion {
                Exhaustion::Error => {
                    return Err(Error::Contract(format!(
                        "dataset {:?} exhausted after {} items",
                        spec.entries[src].dataset,
                        data.len()
                    )))
                }
                Exhaustion::Replace => {
                    cur.epoch += 1;
                    cur.order = reshuffle(src, data.len(), cur.epoch);
                    cur.next = 0;
                }
            }
        }
        let index = cur.order[cur.next];
        cur.next += 1;
        out.push(MixtureSample {
            source: spec.entries[src].dataset.clone(),
            index,
            item: data[index].clone(),
        });
    }
    Ok(out)
}
