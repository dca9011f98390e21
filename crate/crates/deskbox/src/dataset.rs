use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use deskbox_core::dataset::{
    check_unique_ids, DatasetSchema, EvalMode, FieldValue, RawExample, Split,
};
use serde_json::Value;

use crate::error::{Error, Result};

/// Records of one dataset file, separated by split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub eval: Vec<RawExample>,
    /// Train-split records, the few-shot example pool.
    pub pool: Vec<RawExample>,
}

fn schema_err(line: usize, message: String) -> deskbox_core::Error {
    deskbox_core::Error::Schema { line, message }
}

fn field_value(line: usize, key: &str, v: Value) -> deskbox_core::Result<FieldValue> {
    match v {
        Value::String(s) => Ok(FieldValue::Text(s)),
        Value::Number(n) if n.is_i64() => Ok(FieldValue::Integer(n.as_i64().unwrap_or_default())),
        Value::Array(items) => items
            .into_iter()
            .map(|i| match i {
                Value::String(s) => Ok(s),
                _ => Err(schema_err(
                    line,
                    format!("field \"{key}\" must contain only strings"),
                )),
            })
            .collect::<deskbox_core::Result<Vec<_>>>()
            .map(FieldValue::List),
        other => Err(schema_err(
            line,
            format!("field \"{key}\" has unsupported value {other}"),
        )),
    }
}

/// Parses JSONL text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_dataset(
    text: &str,
    schema: &DatasetSchema,
    mode: EvalMode,
) -> deskbox_core::Result<Dataset> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => return Err(schema_err(line, "record must be a JSON object".into())),
            Err(e) => return Err(schema_err(line, format!("invalid JSON: {e}"))),
        };
        let fields = obj
            .into_iter()
            .map(|(k, v)| field_value(line, &k, v).map(|f| (k, f)))
            .collect::<deskbox_core::Result<BTreeMap<_, _>>>()?;
        records.push(schema.validate(line, fields, mode)?);
    }
    check_unique_ids(&records)?;
    let (pool, eval): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split == Split::Train);
    if eval.is_empty() {
        return Err(deskbox_core::Error::Contract(
            "dataset has no eval records".into(),
        ));
    }
    Ok(Dataset { eval, pool })
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema, mode: EvalMode) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_dataset(&text, schema, mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> deskbox_core::Result<Dataset> {
        parse_dataset(text, &DatasetSchema::default(), EvalMode::PplOptions)
    }

    #[test]
    fn three_valid_lines() {
        let text = r#"{"id": "a", "question": "q1", "choices": ["x", "y"], "answer": 0}
{"id": "b", "question": "q2", "choices": ["x", "y"], "answer": 1}

{"id": "c", "question": "q3", "choices": ["x", "y"], "answer": 1, "split": "train"}
"#;
        let d = parse(text).unwrap();
        assert_eq!(d.eval.len(), 2);
        assert_eq!(d.pool.len(), 1);
        assert_eq!(d.pool[0].line, 4);
    }

    #[test]
    fn missing_answer_cites_line() {
        let text = "{\"id\": \"a\", \"question\": \"q\", \"choices\": [\"x\"], \"answer\": 0}\n{\"id\": \"b\", \"question\": \"q\", \"choices\": [\"x\"]}";
        match parse(text) {
            Err(deskbox_core::Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("answer"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_are_listed() {
        let row = r#"{"id": "dup", "question": "q", "choices": ["x"], "answer": 0}"#;
        let err = parse(&format!("{row}\n{row}\n{row}")).unwrap_err();
        assert!(err.to_string().contains("dup"), "{err}");
    }

    #[test]
    fn bad_json_and_types() {
        assert!(matches!(
            parse("{oops"),
            Err(deskbox_core::Error::Schema { line: 1, .. })
        ));
        assert!(matches!(
            parse("[1]"),
            Err(deskbox_core::Error::Schema { line: 1, .. })
        ));
        let text = r#"{"id": "a", "question": "q", "choices": ["x", 2], "answer": 0}"#;
        assert!(matches!(
            parse(text),
            Err(deskbox_core::Error::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn empty_eval_split() {
        let text =
            r#"{"id": "a", "question": "q", "choices": ["x"], "answer": 0, "split": "train"}"#;
        assert!(matches!(parse(text), Err(deskbox_core::Error::Contract(_))));
        assert!(matches!(parse(""), Err(deskbox_core::Error::Contract(_))));
    }
}
