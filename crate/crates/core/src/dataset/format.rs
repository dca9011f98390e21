use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{DatasetSchema, EvalMode, RawExample, Tokenizer};
use crate::rng::{stream, Domain};
use crate::scoring::Answer;
use crate::{Error, Result, TokenId, TokenSequence};

/// Text conventions for rendering prompts.
///
/// A solved example renders as
/// `{query_prefix}{question}\n[{label}. {choice}\n...]{answer_prefix} {answer}`,
/// where the choice list only appears in letter mode. The few-shot prefix is
/// the instruction and each solved example, every block followed by
/// `example_separator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub example_separator: String,
    pub option_labels: Vec<String>,
    pub query_prefix: String,
    pub answer_prefix: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: String::new(),
            example_separator: "\n\n".into(),
            option_labels: (b'A'..=b'Z').map(|c| (c as char).to_string()).collect(),
            query_prefix: "Question: ".into(),
            answer_prefix: "Answer:".into(),
        }
    }
}

/// Candidate answers of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceOptions {
    None,
    /// Completions scored by perplexity, with their rendered text.
    Continuations {
        tokens: Vec<TokenSequence>,
        texts: Vec<String>,
    },
    /// Single-token option letters.
    Letters(Vec<TokenId>),
}

/// A formatted evaluation item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalInstance {
    pub id: String,
    pub fewshot_prefix: TokenSequence,
    pub context: TokenSequence,
    pub context_text: String,
    pub mode: EvalMode,
    pub options: InstanceOptions,
    pub reference: Answer,
}

impl EvalInstance {
    /// The full prompt: few-shot prefix followed by the context.
    pub fn prompt(&self) -> TokenSequence {
        let mut p = Vec::with_capacity(self.fewshot_prefix.len() + self.context.len());
        p.extend_from_slice(&self.fewshot_prefix);
        p.extend_from_slice(&self.context);
        p
    }
}

/// Draws `k` distinct examples from `pool` in a seed-determined order.
pub fn select_fewshot(pool: &[RawExample], k: usize, seed: u64) -> Result<Vec<RawExample>> {
    if k > pool.len() {
        return Err(Error::Contract(format!(
            "requested {k} few-shot examples from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = stream(Domain::FewShot, seed, 0, 0);
    Ok(index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Formats every instance of a run against one shared few-shot prefix,
/// which is rendered and tokenized once.
pub struct InstanceFormatter<'a> {
    template: PromptTemplate,
    schema: DatasetSchema,
    mode: EvalMode,
    tokenizer: &'a dyn Tokenizer,
    fewshot: Vec<RawExample>,
    prefix_text: String,
    prefix: TokenSequence,
    max_seq_len: usize,
}

impl<'a> InstanceFormatter<'a> {
    pub fn new(
        template: PromptTemplate,
        schema: DatasetSchema,
        mode: EvalMode,
        fewshot: Vec<RawExample>,
        tokenizer: &'a dyn Tokenizer,
        max_seq_len: usize,
    ) -> Result<Self> {
        for (i, l) in template.option_labels.iter().enumerate() {
            if template.option_labels[..i].contains(l) {
                return Err(Error::Config(format!("option label {l:?} is used twice")));
            }
        }
        let mut this = Self {
            template,
            schema,
            mode,
            tokenizer,
            fewshot: Vec::new(),
            prefix_text: String::new(),
            prefix: Vec::new(),
            max_seq_len,
        };
        let mut text = String::new();
        if !this.template.instruction.is_empty() {
            text.push_str(&this.template.instruction);
            text.push_str(&this.template.example_separator);
        }
        for ex in &fewshot {
            let (context, completion) = this.render(ex)?;
            text.push_str(&context);
            text.push_str(&completion);
            text.push_str(&this.template.example_separator);
        }
        this.prefix = this.tokenizer.encode(&text);
        this.prefix_text = text;
        this.fewshot = fewshot;
        Ok(this)
    }

    pub fn prefix_text(&self) -> &str {
        &self.prefix_text
    }

    pub fn prefix_tokens(&self) -> &[TokenId] {
        &self.prefix
    }

    fn labels_for(&self, ex: &RawExample) -> Result<&[String]> {
        let n = self.schema.choices(ex).len();
        if n > self.template.option_labels.len() {
            return Err(Error::Config(format!(
                "instance {} has {n} choices but only {} option labels exist",
                ex.id,
                self.template.option_labels.len()
            )));
        }
        Ok(&self.template.option_labels[..n])
    }

    /// Context text and the reference completion for `ex`.
    fn render(&self, ex: &RawExample) -> Result<(String, String)> {
        let t = &self.template;
        let mut context = format!("{}{}\n", t.query_prefix, self.schema.question(ex));
        let completion = match self.mode {
            EvalMode::LetterOptions => {
                let labels = self.labels_for(ex)?;
                for (label, choice) in labels.iter().zip(self.schema.choices(ex)) {
                    context.push_str(&format!("{label}. {choice}\n"));
                }
                context.push_str(&t.answer_prefix);
                context.push(' ');
                match self.schema.reference(ex, self.mode) {
                    Answer::Index(i) => labels[i].clone(),
                    _ => String::new(),
                }
            }
            _ => {
                context.push_str(&t.answer_prefix);
                format!(" {}", self.schema.answer_text(ex, self.mode))
            }
        };
        Ok((context, completion))
    }

    pub fn format(&self, ex: &RawExample) -> Result<EvalInstance> {
        if self.fewshot.iter().any(|f| f.same_content(ex)) {
            return Err(Error::Contract(format!(
                "instance {} appears among its own few-shot examples",
                ex.id
            )));
        }
        let (context_text, _) = self.render(ex)?;
        let context = self.tokenizer.encode(&context_text);
        let options = match self.mode {
            EvalMode::Generation => InstanceOptions::None,
            EvalMode::PplOptions => {
                let texts: Vec<String> = self
                    .schema
                    .choices(ex)
                    .iter()
                    .map(|c| format!(" {c}"))
                    .collect();
                let tokens = texts.iter().map(|t| self.tokenizer.encode(t)).collect();
                InstanceOptions::Continuations { tokens, texts }
            }
            EvalMode::LetterOptions => {
                let letters = self
                    .labels_for(ex)?
                    .iter()
                    .map(|l| match self.tokenizer.encode(l).as_slice() {
                        [t] => Ok(*t),
                        _ => Err(Error::Config(format!(
                            "option label {l:?} is not a single token"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                InstanceOptions::Letters(letters)
            }
        };
        let longest_option = match &options {
            InstanceOptions::Continuations { tokens, .. } => {
                tokens.iter().map(Vec::len).max().unwrap_or(0)
            }
            _ => 0,
        };
        let total = self.prefix.len() + context.len() + longest_option;
        if total > self.max_seq_len {
            return Err(Error::Length(format!(
                "instance {} renders to {total} tokens, over max_seq_len {}",
                ex.id, self.max_seq_len
            )));
        }
        Ok(EvalInstance {
            id: ex.id.clone(),
            fewshot_prefix: self.prefix.clone(),
            context,
            context_text,
            mode: self.mode,
            options,
            reference: self.schema.reference(ex, self.mode),
        })
    }
}
