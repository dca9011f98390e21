use std::time::Instant;

use deskbox_core::dataset::{
    select_fewshot, ByteTokenizer, EvalInstance, EvalMode, InstanceFormatter, InstanceOptions,
    Tokenizer,
};
use deskbox_core::model::{build_toy_model, ModelBackend};
use deskbox_core::scoring::{
    aggregate_self_consistency, generate, score_option_letter, score_perplexity, Answer, Metric,
};
use deskbox_core::TokenSequence;
use sha2::{Digest, Sha256};

use crate::config::{Extractor, RunConfig};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::plan::{run_planned, CachePlan};
use crate::report::{
    Detail, Metrics, OptionScore, Prediction, RunReport, RunSummary, Timing, Versions,
    REPORT_SCHEMA_VERSION,
};

/// Sampling stream index of an instance, derived from its id so that it
/// does not depend on file order or scheduling.
pub fn instance_stream(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn metric_for(mode: EvalMode) -> Metric {
    match mode {
        EvalMode::Generation => Metric::ExactMatch,
        _ => Metric::Accuracy,
    }
}

fn decode_lossy(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter_map(|&t| u8::try_from(t).ok())
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Runs an evaluation on the built-in toy backend described by the config.
pub fn run_eval(config: RunConfig) -> Result<RunReport> {
    let mut config = config;
    config.validate(&ByteTokenizer)?;
    let backend = build_toy_model(config.model.config)?;
    run_eval_with(config, &backend)
}

/// Runs an evaluation on `backend`. Everything up to instance formatting is
/// validation; nothing touches the model before it succeeds.
pub fn run_eval_with(mut config: RunConfig, backend: &dyn ModelBackend) -> Result<RunReport> {
    let started = Instant::now();
    let tokenizer = ByteTokenizer;
    config.validate(&tokenizer)?;
    if backend.config().vocab_size < tokenizer.vocab_size() {
        return Err(Error::Invalid(deskbox_core::Error::Config(format!(
            "backend vocab_size {} is smaller than the tokenizer's {}",
            backend.config().vocab_size,
            tokenizer.vocab_size()
        ))));
    }
    let max_seq_len = backend.config().max_seq_len;

    let data = load_dataset(&config.dataset, &config.schema, config.mode)?;
    let fewshot = select_fewshot(&data.pool, config.shots, config.seed)?;
    let fewshot_ids = fewshot.iter().map(|e| e.id.clone()).collect();
    let formatter = InstanceFormatter::new(
        config.template.clone(),
        config.schema.clone(),
        config.mode,
        fewshot,
        &tokenizer,
        max_seq_len,
    )?;
    let instances = data
        .eval
        .iter()
        .map(|ex| formatter.format(ex))
        .collect::<deskbox_core::Result<Vec<EvalInstance>>>()?;
    let prompts: Vec<TokenSequence> = instances.iter().map(EvalInstance::prompt).collect();
    if config.mode == EvalMode::Generation {
        let new = config.generation.max_new_tokens;
        if let Some((inst, p)) = instances
            .iter()
            .zip(&prompts)
            .find(|(_, p)| p.len() + new > max_seq_len)
        {
            return Err(Error::Invalid(deskbox_core::Error::Length(format!(
                "instance {} has {} prompt tokens; with {new} new tokens it exceeds max_seq_len {max_seq_len}",
                inst.id,
                p.len()
            ))));
        }
    }
    let load_ms = started.elapsed().as_secs_f64() * 1e3;

    let scoring = Instant::now();
    let plan = CachePlan::new(config.cache.enabled, config.cache.max_cached_tokens);
    let streams: Vec<u64> = instances.iter().map(|i| instance_stream(&i.id)).collect();
    let (scored, cache_stats) =
        run_planned(backend, &prompts, plan, config.workers, |i, cache| {
            score_instance(
                backend,
                &instances[i],
                &prompts[i],
                &config,
                streams[i],
                cache,
            )
        })?;
    let score_ms = scoring.elapsed().as_secs_f64() * 1e3;

    let metric = metric_for(config.mode);
    let predictions: Vec<Prediction> = instances
        .iter()
        .zip(scored)
        .map(|(inst, (prediction, detail, prompt_tokens))| {
            let correct = deskbox_core::scoring::compute_metrics(
                std::slice::from_ref(&prediction),
                std::slice::from_ref(&inst.reference),
                metric,
            )? == 1.0;
            Ok(Prediction {
                id: inst.id.clone(),
                prediction,
                reference: inst.reference.clone(),
                correct,
                prompt_tokens,
                detail,
            })
        })
        .collect::<deskbox_core::Result<_>>()
        .map_err(Error::runtime)?;
    let metrics = Metrics::from_predictions(&predictions, metric).map_err(Error::runtime)?;

    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        run: RunSummary {
            instances: predictions.len(),
            fewshot_ids,
            prefix_tokens: formatter.prefix_tokens().len(),
        },
        config,
        predictions,
        metrics,
        cache_stats,
        versions: Versions::default(),
        timing: Timing {
            load_ms,
            score_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

fn score_instance(
    backend: &dyn ModelBackend,
    inst: &EvalInstance,
    prompt: &[u32],
    config: &RunConfig,
    stream: u64,
    cache: &mut dyn deskbox_core::cache::PromptCache,
) -> deskbox_core::Result<(Answer, Detail, u64)> {
    match &inst.options {
        InstanceOptions::Continuations { tokens, texts } => {
            let mut scores = score_perplexity(backend, prompt, tokens, cache)?;
            scores.set_byte_counts(&texts.iter().map(String::len).collect::<Vec<_>>())?;
            let presented = tokens.iter().map(|t| (prompt.len() + t.len()) as u64).sum();
            let options = scores
                .options
                .iter()
                .map(|o| OptionScore {
                    sum_logprob: o.sum_logprob,
                    token_count: o.token_count,
                    byte_count: o.byte_count.unwrap_or_default(),
                    avg_ppl: o.avg_ppl,
                })
                .collect();
            Ok((
                Answer::Index(scores.chosen),
                Detail::PplOptions { options },
                presented,
            ))
        }
        InstanceOptions::Letters(letters) => {
            let choice = score_option_letter(backend, prompt, letters, cache)?;
            Ok((
                Answer::Index(choice.chosen),
                Detail::LetterOptions {
                    letter_logits: choice.letter_logits,
                },
                prompt.len() as u64,
            ))
        }
        InstanceOptions::None => {
            let samples = generate(backend, prompt, &config.generation, stream, cache)?;
            let texts: Vec<String> = samples.iter().map(|s| decode_lossy(s)).collect();
            let extractor: Extractor = config.extractor;
            let extracted: Vec<Option<String>> =
                texts.iter().map(|t| extractor.extract(t)).collect();
            let answer = if texts.len() == 1 {
                extracted[0].clone()
            } else {
                aggregate_self_consistency(&texts, |t| extractor.extract(t))
            };
            Ok((
                answer.map_or(Answer::NoAnswer, Answer::Text),
                Detail::Generation {
                    samples: texts,
                    extracted,
                },
                prompt.len() as u64,
            ))
        }
    }
}
