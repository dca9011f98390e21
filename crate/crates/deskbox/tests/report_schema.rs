//! Checks generated reports against docs/report.schema.json with a small
//! validator covering the keywords that file uses.

use std::path::PathBuf;

use deskbox::{run_eval, RunConfig};
use deskbox_core::dataset::EvalMode;
use serde_json::Value;

fn resolve<'a>(root: &'a Value, schema: &'a Value) -> &'a Value {
    match schema.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let path = r.trim_start_matches("#/");
            path.split('/').fold(root, |v, k| &v[k])
        }
        None => schema,
    }
}

fn type_ok(v: &Value, t: &str) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        other => panic!("unsupported type {other}"),
    }
}

fn check(root: &Value, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let s = resolve(root, schema);
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_ok(v, t),
            Value::Array(ts) => ts.iter().any(|t| type_ok(v, t.as_str().unwrap())),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            errors.push(format!("{at}: expected type {t}"));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            errors.push(format!("{at}: expected {c}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(min) = s.get("minimum").and_then(Value::as_f64) {
        if v.as_f64().is_some_and(|x| x < min) {
            errors.push(format!("{at}: below minimum"));
        }
    }
    if let Some(Value::Array(variants)) = s.get("oneOf") {
        let matching = variants
            .iter()
            .filter(|sub| {
                let mut e = Vec::new();
                check(root, sub, v, at, &mut e);
                e.is_empty()
            })
            .count();
        if matching != 1 {
            errors.push(format!("{at}: matches {matching} oneOf variants"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in s
            .get("required")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            if !obj.contains_key(key.as_str().unwrap()) {
                errors.push(format!("{at}: missing {key}"));
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(root, sub, child, &format!("{at}.{k}"), errors),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
        if let Some(n) = s.get("maxProperties").and_then(Value::as_u64) {
            if obj.len() as u64 > n {
                errors.push(format!("{at}: too many keys"));
            }
        }
    }
    if let (Some(items), Some(arr)) = (s.get("items"), v.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            check(root, items, item, &format!("{at}[{i}]"), errors);
        }
    }
}

#[test]
fn reports_of_every_mode_match_schema() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let schema: Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("../../docs/report.schema.json")).unwrap(),
    )
    .unwrap();
    let fixtures = root.join("fixtures");
    let mut configs = vec![
        RunConfig::new(fixtures.join("mc_questions.jsonl"), EvalMode::PplOptions),
        RunConfig::new(fixtures.join("mc_questions.jsonl"), EvalMode::LetterOptions),
        RunConfig::new(fixtures.join("arithmetic_gen.jsonl"), EvalMode::Generation),
    ];
    configs[0].cache.max_cached_tokens = Some(200);
    configs[2].generation.max_new_tokens = 4;
    for c in configs {
        let report: Value = serde_json::from_str(&run_eval(c).unwrap().to_json().unwrap()).unwrap();
        let mut errors = Vec::new();
        check(&schema, &schema, &report, "$", &mut errors);
        assert!(errors.is_empty(), "{errors:#?}");
    }
}

#[test]
fn validator_rejects_drift() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let schema: Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("../../docs/report.schema.json")).unwrap(),
    )
    .unwrap();
    let c = RunConfig::new(
        root.join("fixtures/mc_questions.jsonl"),
        EvalMode::PplOptions,
    );
    let mut report: Value = serde_json::from_str(&run_eval(c).unwrap().to_json().unwrap()).unwrap();
    report["extra"] = Value::Bool(true);
    report["predictions"][0]["prediction"] = serde_json::json!({"index": -1});
    let mut errors = Vec::new();
    check(&schema, &schema, &report, "$", &mut errors);
    assert_eq!(errors.len(), 2, "{errors:#?}");
}
