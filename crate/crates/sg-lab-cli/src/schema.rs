//! Minimal JSON-schema subset validator for the run-summary contract.
//!
//! Supports the keywords the summary schema actually uses — `type`
//! (including `"integer"`), `properties`, `required`,
//! `additionalProperties` (boolean form), `items` (single schema), and
//! `enum` — which keeps the output contract machine-checkable without
//! pulling in a full validator.

use serde_json::Value;

/// Validates `value` against `schema`, returning one message per violation
/// (empty means valid). `path` in messages is a `/`-joined pointer.
pub fn validate(value: &Value, schema: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(value, schema, "", &mut errors);
    errors
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn matches_type(value: &Value, ty: &str) -> bool {
    match ty {
        "integer" => match value {
            Value::Number(n) => n.is_i64() || n.is_u64(),
            _ => false,
        },
        "number" => value.is_number(),
        other => type_name(value) == other,
    }
}

fn check(value: &Value, schema: &Value, path: &str, errors: &mut Vec<String>) {
    let Some(schema_obj) = schema.as_object() else {
        errors.push(format!("{path}: schema node is not an object"));
        return;
    };

    if let Some(ty) = schema_obj.get("type") {
        let allowed: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(list) => list.iter().filter_map(|v| v.as_str()).collect(),
            _ => vec![],
        };
        if !allowed.iter().any(|t| matches_type(value, t)) {
            errors.push(format!(
                "{path}: expected type {allowed:?}, found {}",
                type_name(value)
            ));
            return;
        }
    }

    if let Some(options) = schema_obj.get("enum").and_then(|e| e.as_array()) {
        if !options.contains(value) {
            errors.push(format!("{path}: value {value} not in enum {options:?}"));
        }
    }

    if let Some(obj) = value.as_object() {
        if let Some(required) = schema_obj.get("required").and_then(|r| r.as_array()) {
            for key in required.iter().filter_map(|k| k.as_str()) {
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required property {key:?}"));
                }
            }
        }
        let props = schema_obj.get("properties").and_then(|p| p.as_object());
        if let Some(props) = props {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    check(v, sub, &format!("{path}/{key}"), errors);
                }
            }
        }
        if schema_obj.get("additionalProperties") == Some(&Value::Bool(false)) {
            for key in obj.keys() {
                if props.map_or(true, |p| !p.contains_key(key)) {
                    errors.push(format!("{path}: unexpected property {key:?}"));
                }
            }
        }
    }

    if let (Some(items), Some(array)) = (schema_obj.get("items"), value.as_array()) {
        for (i, v) in array.iter().enumerate() {
            check(v, items, &format!("{path}/{i}"), errors);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_conforming_object() {
        let schema = json!({
            "type": "object",
            "required": ["name", "count", "tags"],
            "additionalProperties": false,
            "properties": {
                "name": {"type": "string", "enum": ["a", "b"]},
                "count": {"type": "integer"},
                "tags": {"type": "array", "items": {"type": "number"}}
            }
        });
        let value = json!({"name": "a", "count": 3, "tags": [1.5, 2]});
        assert!(validate(&value, &schema).is_empty());
    }

    #[test]
    fn reports_each_violation() {
        let schema = json!({
            "type": "object",
            "required": ["name"],
            "additionalProperties": false,
            "properties": {
                "name": {"type": "string"},
                "count": {"type": "integer"}
            }
        });
        let value = json!({"count": 1.5, "extra": true});
        let errors = validate(&value, &schema);
        assert_eq!(errors.len(), 3, "{errors:?}");
    }

    #[test]
    fn integer_is_a_number_but_not_conversely() {
        let int_schema = json!({"type": "integer"});
        let num_schema = json!({"type": "number"});
        assert!(validate(&json!(3), &int_schema).is_empty());
        assert!(!validate(&json!(3.5), &int_schema).is_empty());
        assert!(validate(&json!(3.5), &num_schema).is_empty());
        assert!(validate(&json!(3), &num_schema).is_empty());
    }
}
