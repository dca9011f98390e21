use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cache::PromptCache;
use crate::model::{argmax, softmax, ModelBackend};
use crate::rng::sample_stream;
use crate::{Error, Result, TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub strategy: DecodeStrategy,
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f32,
    pub max_new_tokens: usize,
    pub stop_token: Option<TokenId>,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            strategy: DecodeStrategy::Greedy,
            temperature: 1.0,
            top_p: 1.0,
            repetition_penalty: 1.0,
            max_new_tokens: 16,
            stop_token: None,
            num_samples: 1,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategy == DecodeStrategy::Sample
            && (self.temperature.is_nan() || self.temperature <= 0.0)
        {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.repetition_penalty.is_nan() || self.repetition_penalty < 1.0 {
            return Err(Error::Config(format!(
                "repetition_penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be >= 1".into()));
        }
        if self.num_samples > 1 && self.strategy != DecodeStrategy::Sample {
            return Err(Error::Config(
                "num_samples > 1 requires the sample strategy".into(),
            ));
        }
        Ok(())
    }
}

/// Keeps the smallest set of most-probable tokens whose mass reaches `p`
/// (the boundary token included) and renormalizes it. Ties in probability
/// are ordered by token index.
pub fn filter_top_p(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = probs[i];
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    for v in &mut out {
        *v /= mass;
    }
    out
}

/// Divides positive logits and multiplies negative logits of every token in
/// `history` by `penalty`. Each distinct token is penalized once.
pub fn apply_repetition_penalty(logits: &mut [f32], history: &[TokenId], penalty: f32) {
    let mut seen = vec![false; logits.len()];
    for &t in history {
        if let Some(s) = seen.get_mut(t as usize) {
            *s = true;
        }
    }
    penalize(logits, &seen, penalty);
}

fn penalize(logits: &mut [f32], seen: &[bool], penalty: f32) {
    if penalty == 1.0 {
        return;
    }
    for (l, _) in logits.iter_mut().zip(seen).filter(|(_, &s)| s) {
        if *l > 0.0 {
            *l /= penalty;
        } else {
            *l *= penalty;
        }
    }
}

fn draw<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Autoregressive generation of `cfg.num_samples` continuations of `prompt`.
///
/// The prompt is prefilled once through `cache`; each sample then decodes
/// from its own copy of that state. Sample `k` of instance `instance` draws
/// from a random stream keyed by `(cfg.seed, instance, k)`. The stop token
/// ends a sample and is not included in it.
pub fn generate(
    backend: &dyn ModelBackend,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    instance: u64,
    cache: &mut dyn PromptCache,
) -> Result<Vec<TokenSequence>> {
    cfg.validate()?;
    let max_len = backend.config().max_seq_len;
    if prompt.len() + cfg.max_new_tokens > max_len {
        return Err(Error::Length(format!(
            "prompt of {} tokens plus {} new tokens exceeds max_seq_len {max_len}",
            prompt.len(),
            cfg.max_new_tokens
        )));
    }
    let vocab = backend.config().vocab_size;
    let start = cache.prefill(backend, prompt)?;
    let mut prompt_seen = vec![false; vocab];
    for &t in prompt {
        prompt_seen[t as usize] = true;
    }

    let mut samples = Vec::with_capacity(cfg.num_samples);
    for k in 0..cfg.num_samples {
        let mut rng = sample_stream(cfg.seed, instance, k as u64);
        let mut seen = prompt_seen.clone();
        let mut logits = start.logits.clone();
        let mut kv = start.kv.clone();
        let mut out = Vec::new();
        while out.len() < cfg.max_new_tokens {
            penalize(&mut logits, &seen, cfg.repetition_penalty);
            let next = match cfg.strategy {
                DecodeStrategy::Greedy => argmax(&logits),
                DecodeStrategy::Sample => {
                    let probs = filter_top_p(&softmax(&logits, cfg.temperature), cfg.top_p);
                    draw(&probs, &mut rng)
                }
            } as TokenId;
            if Some(next) == cfg.stop_token {
                break;
            }
            out.push(next);
            seen[next as usize] = true;
            if out.len() == cfg.max_new_tokens {
                break;
            }
            let step = backend.forward_incremental(&kv, &[next])?;
            logits = step.logits.last().to_vec();
            kv = step.kv;
        }
        samples.push(out);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{Budget, PrefixCache, Uncached};
    use crate::model::{CountingBackend, ModelConfig, ScriptedBackend, ToyTransformer};

    fn toy() -> ToyTransformer {
        ToyTransformer::new(ModelConfig::small(42)).unwrap()
    }

    #[test]
    fn top_p_one_is_identity() {
        let p = [0.1, 0.6, 0.3];
        assert_eq!(filter_top_p(&p, 1.0), p.to_vec());
    }

    #[test]
    fn top_p_keeps_boundary_token() {
        let out = filter_top_p(&[0.5, 0.3, 0.2], 0.7);
        assert!((out[0] - 0.625).abs() < 1e-12);
        assert!((out[1] - 0.375).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn top_p_degenerate_distribution() {
        for p in [0.01, 0.5, 0.99, 1.0] {
            assert_eq!(filter_top_p(&[1.0, 0.0, 0.0], p), vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn repetition_penalty_rule() {
        let mut l = vec![2.0, 1.0];
        apply_repetition_penalty(&mut l, &[0], 2.0);
        assert_eq!(l, vec![1.0, 1.0]);
        let mut l = vec![-1.0, 3.0];
        apply_repetition_penalty(&mut l, &[0, 0, 0], 2.0);
        assert_eq!(l, vec![-2.0, 3.0]);
        let mut l = vec![-1.0, 3.0, 0.5];
        apply_repetition_penalty(&mut l, &[0, 1, 2], 1.0);
        assert_eq!(l, vec![-1.0, 3.0, 0.5]);
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig::default();
        assert!(c.validate().is_ok());
        c.num_samples = 3;
        assert!(c.validate().is_err());
        c.strategy = DecodeStrategy::Sample;
        assert!(c.validate().is_ok());
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        c.temperature = 1.0;
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.repetition_penalty = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stops_at_stop_token() {
        // emits history length mod 5, so after [0] comes 1,2,3,4,0...
        let b = ScriptedBackend::new(5, 64, |h| {
            let mut row = vec![0.0; 5];
            row[h.len() % 5] = 5.0;
            row
        });
        let cfg = GenerationConfig {
            max_new_tokens: 10,
            stop_token: Some(4),
            ..Default::default()
        };
        let out = generate(&b, &[0], &cfg, 0, &mut Uncached::new()).unwrap();
        assert_eq!(out, vec![vec![1, 2, 3]]);
    }

    #[test]
    fn respects_max_new_tokens_and_context() {
        let m = toy();
        let cfg = GenerationConfig {
            max_new_tokens: 7,
            ..Default::default()
        };
        let out = generate(&m, &[1, 2, 3], &cfg, 0, &mut Uncached::new()).unwrap();
        assert_eq!(out[0].len(), 7);
        let long = vec![1; 250];
        assert!(matches!(
            generate(&m, &long, &cfg, 0, &mut Uncached::new()),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn greedy_matches_full_forward_oracle() {
        let m = toy();
        let prompt = vec![5, 17, 33, 2];
        let cfg = GenerationConfig {
            max_new_tokens: 12,
            ..Default::default()
        };
        let out = generate(&m, &prompt, &cfg, 0, &mut Uncached::new()).unwrap();
        let mut seq = prompt.clone();
        for _ in 0..12 {
            let logits = m.forward_full(&seq).unwrap().logits;
            seq.push(argmax(logits.last()) as TokenId);
        }
        assert_eq!(out[0], seq[prompt.len()..]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let m = toy();
        let cfg = GenerationConfig {
            strategy: DecodeStrategy::Sample,
            temperature: 1.3,
            top_p: 0.9,
            repetition_penalty: 1.2,
            max_new_tokens: 10,
            num_samples: 4,
            seed: 11,
            ..Default::default()
        };
        let a = generate(&m, &[1, 2, 3], &cfg, 5, &mut Uncached::new()).unwrap();
        let b = generate(&m, &[1, 2, 3], &cfg, 5, &mut Uncached::new()).unwrap();
        assert_eq!(a, b);
        let c = generate(&m, &[1, 2, 3], &cfg, 6, &mut Uncached::new()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let m = toy();
        let greedy = GenerationConfig {
            max_new_tokens: 8,
            ..Default::default()
        };
        let cold = GenerationConfig {
            strategy: DecodeStrategy::Sample,
            temperature: 1e-6,
            ..greedy.clone()
        };
        for i in 0..10u32 {
            let prompt = vec![i, i * 3 % 64, (i * 7 + 1) % 64];
            let g = generate(&m, &prompt, &greedy, i as u64, &mut Uncached::new()).unwrap();
            let s = generate(&m, &prompt, &cold, i as u64, &mut Uncached::new()).unwrap();
            assert_eq!(g, s);
        }
    }

    #[test]
    fn samples_share_one_prompt_prefill() {
        let m = CountingBackend::new(toy());
        let prompt: Vec<TokenId> = (0..20).collect();
        let cfg = GenerationConfig {
            strategy: DecodeStrategy::Sample,
            max_new_tokens: 4,
            num_samples: 5,
            seed: 3,
            ..Default::default()
        };
        let mut cache = PrefixCache::new(Budget::unlimited());
        generate(&m, &prompt, &cfg, 0, &mut cache).unwrap();
        assert_eq!(cache.stats().tokens_computed, 20);
        // prompt once, then 3 decode forwards per sample
        assert_eq!(m.tokens(), 20 + 5 * 3);
    }
}
