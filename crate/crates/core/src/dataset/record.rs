use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::scoring::Answer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// How instances are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Free-form generation compared against a reference string.
    Generation,
    /// Lowest average perplexity among the choice completions.
    PplOptions,
    /// Highest-probability option letter after a prompt listing all choices.
    LetterOptions,
}

impl EvalMode {
    pub fn has_options(self) -> bool {
        !matches!(self, EvalMode::Generation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Integer(i64),
    Text(String),
    List(Vec<String>),
}

/// One validated dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub fields: BTreeMap<String, FieldValue>,
    pub split: Split,
    /// 1-based line in the source file.
    pub line: usize,
}

impl RawExample {
    /// Equal id and fields, regardless of where the record came from.
    pub fn same_content(&self, other: &RawExample) -> bool {
        self.id == other.id && self.fields == other.fields
    }
}

/// Which record keys carry the id, question, choices, answer and split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSchema {
    pub id_field: String,
    pub question_field: String,
    pub choices_field: String,
    pub answer_field: String,
    pub split_field: String,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            id_field: "id".into(),
            question_field: "question".into(),
            choices_field: "choices".into(),
            answer_field: "answer".into(),
            split_field: "split".into(),
        }
    }
}

fn schema_err(line: usize, message: String) -> Error {
    Error::Schema { line, message }
}

impl DatasetSchema {
    /// Validates one parsed record. Records without a split field belong to
    /// the eval split.
    pub fn validate(
        &self,
        line: usize,
        mut fields: BTreeMap<String, FieldValue>,
        mode: EvalMode,
    ) -> Result<RawExample> {
        let id = match fields.remove(&self.id_field) {
            Some(FieldValue::Text(s)) => s,
            Some(FieldValue::Integer(i)) => i.to_string(),
            Some(_) => {
                return Err(schema_err(
                    line,
                    format!("field \"{}\" must be a string", self.id_field),
                ))
            }
            None => {
                return Err(schema_err(
                    line,
                    format!("missing required field \"{}\"", self.id_field),
                ))
            }
        };
        let split = match fields.remove(&self.split_field) {
            None => Split::Eval,
            Some(FieldValue::Text(s)) if s == "eval" || s == "test" => Split::Eval,
            Some(FieldValue::Text(s)) if s == "train" => Split::Train,
            Some(other) => {
                return Err(schema_err(
                    line,
                    format!(
                        "field \"{}\" must be \"train\" or \"eval\", got {other:?}",
                        self.split_field
                    ),
                ))
            }
        };
        match fields.get(&self.question_field) {
            Some(FieldValue::Text(_)) => {}
            Some(_) => {
                return Err(schema_err(
                    line,
                    format!("field \"{}\" must be a string", self.question_field),
                ))
            }
            None => {
                return Err(schema_err(
                    line,
                    format!("missing required field \"{}\"", self.question_field),
                ))
            }
        }
        let answer = fields.get(&self.answer_field).ok_or_else(|| {
            schema_err(
                line,
                format!("missing required field \"{}\"", self.answer_field),
            )
        })?;
        if mode.has_options() {
            let choices = match fields.get(&self.choices_field) {
                Some(FieldValue::List(c)) if !c.is_empty() => c,
                Some(_) => {
                    return Err(schema_err(
                        line,
                        format!(
                            "field \"{}\" must be a non-empty array of strings",
                            self.choices_field
                        ),
                    ))
                }
                None => {
                    return Err(schema_err(
                        line,
                        format!("missing required field \"{}\"", self.choices_field),
                    ))
                }
            };
            match answer {
                FieldValue::Integer(i) if *i >= 0 && (*i as usize) < choices.len() => {}
                _ => {
                    return Err(schema_err(
                        line,
                        format!(
                            "field \"{}\" must be a choice index in [0, {})",
                            self.answer_field,
                            choices.len()
                        ),
                    ))
                }
            }
        } else if matches!(answer, FieldValue::List(_)) {
            return Err(schema_err(
                line,
                format!("field \"{}\" must be a string", self.answer_field),
            ));
        }
        Ok(RawExample {
            id,
            fields,
            split,
            line,
        })
    }

    pub fn question<'a>(&self, ex: &'a RawExample) -> &'a str {
        match ex.fields.get(&self.question_field) {
            Some(FieldValue::Text(s)) => s,
            _ => "",
        }
    }

    pub fn choices<'a>(&self, ex: &'a RawExample) -> &'a [String] {
        match ex.fields.get(&self.choices_field) {
            Some(FieldValue::List(c)) => c,
            _ => &[],
        }
    }

    /// Ground truth for `ex` under `mode`.
    pub fn reference(&self, ex: &RawExample, mode: EvalMode) -> Answer {
        match (ex.fields.get(&self.answer_field), mode.has_options()) {
            (Some(FieldValue::Integer(i)), true) => Answer::Index(*i as usize),
            (Some(FieldValue::Integer(i)), false) => Answer::Text(i.to_string()),
            (Some(FieldValue::Text(s)), false) => Answer::Text(s.clone()),
            _ => Answer::NoAnswer,
        }
    }

    /// Reference rendered as text, as it appears in a solved example.
    pub fn answer_text(&self, ex: &RawExample, mode: EvalMode) -> String {
        match self.reference(ex, mode) {
            Answer::Index(i) => self.choices(ex).get(i).cloned().unwrap_or_default(),
            Answer::Text(s) => s,
            Answer::NoAnswer => String::new(),
        }
    }
}

/// Fails when an id repeats within one split, listing every repeated id.
pub fn check_unique_ids(examples: &[RawExample]) -> Result<()> {
    let mut seen: BTreeMap<(bool, &str), usize> = BTreeMap::new();
    let mut dups: Vec<String> = Vec::new();
    for ex in examples {
        let key = (ex.split == Split::Train, ex.id.as_str());
        match seen.get(&key) {
            Some(first) => dups.push(format!("{} (lines {} and {})", ex.id, first, ex.line)),
            None => {
                seen.insert(key, ex.line);
            }
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "duplicate ids: {}",
            dups.join(", ")
        )))
    }
}
