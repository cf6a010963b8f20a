//! Validation against the subset of JSON Schema used by the report schemas:
//! `type`, `properties`, `required`, `additionalProperties` (boolean),
//! `items`, `enum`, `minimum`, `minItems`, `anyOf` and `$ref` into
//! `definitions`.

use serde_json::Value;

/// Report schemas shipped with the binary, keyed by subcommand.
pub const REPORT_SCHEMAS: [(&str, &str); 6] = [
    ("stream", include_str!("../schemas/stream.schema.json")),
    ("ate", include_str!("../schemas/ate.schema.json")),
    ("stitch", include_str!("../schemas/stitch.schema.json")),
    ("bench", include_str!("../schemas/bench.schema.json")),
    ("gradcheck", include_str!("../schemas/gradcheck.schema.json")),
    ("recall", include_str!("../schemas/recall.schema.json")),
];

pub fn report_schema(command: &str) -> Option<Value> {
    REPORT_SCHEMAS
        .iter()
        .find(|(c, _)| *c == command)
        .map(|(_, text)| serde_json::from_str(text).expect("shipped schemas are valid JSON"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", if self.path.is_empty() { "$" } else { &self.path }, self.message)
    }
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        _ => false,
    }
}

struct Validator<'a> {
    root: &'a Value,
    errors: Vec<SchemaError>,
}

impl<'a> Validator<'a> {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(SchemaError {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn resolve(&mut self, schema: &'a Value, path: &str) -> Option<&'a Value> {
        let Some(r) = schema.get("$ref").and_then(Value::as_str) else {
            return Some(schema);
        };
        let root = self.root;
        let found = r
            .strip_prefix("#/definitions/")
            .and_then(|name| root.get("definitions").and_then(|d| d.get(name)));
        if found.is_none() {
            self.fail(path, format!("unresolvable reference {r}"));
        }
        found
    }

    fn check(&mut self, schema: &'a Value, v: &Value, path: &str) {
        let Some(schema) = self.resolve(schema, path) else {
            return;
        };
        if let Some(branches) = schema.get("anyOf").and_then(Value::as_array) {
            let ok = branches.iter().any(|b| {
                let mut sub = Validator {
                    root: self.root,
                    errors: Vec::new(),
                };
                sub.check(b, v, path);
                sub.errors.is_empty()
            });
            if !ok {
                self.fail(path, "matches no branch of anyOf");
            }
        }
        if let Some(t) = schema.get("type") {
            let ok = match t {
                Value::String(name) => type_matches(name, v),
                Value::Array(names) => names.iter().filter_map(Value::as_str).any(|n| type_matches(n, v)),
                _ => false,
            };
            if !ok {
                self.fail(path, format!("expected type {t}, found {v}"));
                return;
            }
        }
        if let Some(options) = schema.get("enum").and_then(Value::as_array) {
            if !options.contains(v) {
                self.fail(path, format!("{v} not in {}", Value::Array(options.clone())));
            }
        }
        if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), v.as_f64()) {
            if x < min {
                self.fail(path, format!("{x} below minimum {min}"));
            }
        }
        if let Value::Object(map) = v {
            if let Some(req) = schema.get("required").and_then(Value::as_array) {
                for key in req.iter().filter_map(Value::as_str) {
                    if !map.contains_key(key) {
                        self.fail(path, format!("missing required property `{key}`"));
                    }
                }
            }
            let props = schema.get("properties").and_then(Value::as_object);
            for (key, val) in map {
                let sub = format!("{path}.{key}");
                match props.and_then(|p| p.get(key)) {
                    Some(s) => self.check(s, val, &sub),
                    None => match schema.get("additionalProperties") {
                        Some(Value::Bool(false)) => self.fail(&sub, "unexpected property"),
                        Some(s @ Value::Object(_)) => self.check(s, val, &sub),
                        _ => {}
                    },
                }
            }
        }
        if let Value::Array(items) = v {
            if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
                if (items.len() as u64) < min {
                    self.fail(path, format!("{} items, need at least {min}", items.len()));
                }
            }
            if let Some(item_schema) = schema.get("items") {
                for (i, item) in items.iter().enumerate() {
                    self.check(item_schema, item, &format!("{path}[{i}]"));
                }
            }
        }
    }
}

/// Every violation of `schema` by `value`; empty when valid.
pub fn validate(schema: &Value, value: &Value) -> Vec<SchemaError> {
    let mut v = Validator {
        root: schema,
        errors: Vec::new(),
    };
    v.check(schema, value, "");
    v.errors
}
