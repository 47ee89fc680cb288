//! OpenAPI 3.x import: one [`ToolSpec`] per (path, method) operation.

use serde_json::{Map, Value};

use super::{OutputField, ParamLocation, ParamSpec, ParamType, ToolError, ToolSpec};

const METHODS: [&str; 8] = ["delete", "get", "head", "options", "patch", "post", "put", "trace"];

#[derive(Debug, Clone, Default)]
pub struct ImportOptions {
    /// Replaces the document's `servers[0].url`.
    pub base_url: Option<String>,
}

fn yaml_to_json(value: serde_yaml::Value) -> Value {
    match value {
        serde_yaml::Value::Null => Value::Null,
        serde_yaml::Value::Bool(b) => Value::Bool(b),
        serde_yaml::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64().map_or(Value::Null, Value::from)
            }
        }
        serde_yaml::Value::String(s) => Value::String(s),
        serde_yaml::Value::Sequence(items) => Value::Array(items.into_iter().map(yaml_to_json).collect()),
        serde_yaml::Value::Mapping(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let key = match k {
                    serde_yaml::Value::String(s) => s,
                    serde_yaml::Value::Number(n) => n.to_string(),
                    serde_yaml::Value::Bool(b) => b.to_string(),
                    other => serde_yaml::to_string(&other).unwrap_or_default().trim().to_owned(),
                };
                out.insert(key, yaml_to_json(v));
            }
            Value::Object(out)
        }
        serde_yaml::Value::Tagged(tagged) => yaml_to_json(tagged.value),
    }
}

fn parse_document(document: &str) -> Result<Value, ToolError> {
    if let Ok(value) = serde_json::from_str::<Value>(document) {
        return Ok(value);
    }
    serde_yaml::from_str::<serde_yaml::Value>(document)
        .map(yaml_to_json)
        .map_err(|e| ToolError::MalformedDocument(e.to_string()))
}

/// Follows a local `#/...` reference.
fn resolve<'a>(root: &'a Value, value: &'a Value) -> Result<&'a Value, ToolError> {
    let mut current = value;
    for _ in 0..16 {
        let Some(reference) = current.get("$ref").and_then(Value::as_str) else {
            return Ok(current);
        };
        let pointer = reference
            .strip_prefix('#')
            .ok_or_else(|| ToolError::MalformedDocument(format!("external reference '{reference}'")))?;
        current = root
            .pointer(pointer)
            .ok_or_else(|| ToolError::MalformedDocument(format!("dangling reference '{reference}'")))?;
    }
    Err(ToolError::MalformedDocument("reference cycle".into()))
}

fn scalar_type(root: &Value, schema: Option<&Value>, name: &str) -> Result<ParamType, ToolError> {
    let Some(schema) = schema else {
        return Ok(ParamType::String);
    };
    let schema = resolve(root, schema)?;
    match schema.get("type").and_then(Value::as_str) {
        None | Some("string") => Ok(ParamType::String),
        Some("number") | Some("integer") => Ok(ParamType::Number),
        Some("boolean") => Ok(ParamType::Boolean),
        Some(other) => Err(ToolError::UnsupportedParamType {
            name: name.to_owned(),
            detail: format!("type {other}"),
        }),
    }
}

fn operation_params(root: &Value, list: Option<&Value>, out: &mut Vec<ParamSpec>) -> Result<(), ToolError> {
    let Some(list) = list else { return Ok(()) };
    let items = list
        .as_array()
        .ok_or_else(|| ToolError::MalformedDocument("parameters must be a list".into()))?;
    for item in items {
        let param = resolve(root, item)?;
        let name = param
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::MalformedDocument("parameter without name".into()))?;
        let location = match param.get("in").and_then(Value::as_str) {
            Some("query") => ParamLocation::Query,
            Some("path") => ParamLocation::Path,
            other => {
                return Err(ToolError::UnsupportedParamType {
                    name: name.to_owned(),
                    detail: format!("location {}", other.unwrap_or("missing")),
                })
            }
        };
        let required =
            location == ParamLocation::Path || param.get("required").and_then(Value::as_bool).unwrap_or(false);
        let spec = ParamSpec {
            name: name.to_owned(),
            location,
            param_type: scalar_type(root, param.get("schema"), name)?,
            required,
        };
        // operation-level parameters override path-level ones of the same name
        out.retain(|p| p.name != spec.name);
        out.push(spec);
    }
    Ok(())
}

fn json_schema<'a>(root: &'a Value, holder: &'a Value) -> Result<Option<&'a Value>, ToolError> {
    let holder = resolve(root, holder)?;
    match holder
        .get("content")
        .and_then(|c| c.get("application/json"))
        .and_then(|c| c.get("schema"))
    {
        Some(schema) => resolve(root, schema).map(Some),
        None => Ok(None),
    }
}

fn body_params(root: &Value, operation: &Value, out: &mut Vec<ParamSpec>) -> Result<(), ToolError> {
    let Some(body) = operation.get("requestBody") else {
        return Ok(());
    };
    let Some(schema) = json_schema(root, body)? else {
        return Ok(());
    };
    match schema.get("type").and_then(Value::as_str) {
        None | Some("object") => {}
        Some(other) => {
            return Err(ToolError::UnsupportedParamType {
                name: "requestBody".into(),
                detail: format!("type {other}"),
            })
        }
    }
    let required: Vec<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    if let Some(Value::Object(properties)) = schema.get("properties") {
        for (name, property) in properties {
            out.push(ParamSpec {
                name: name.clone(),
                location: ParamLocation::Body,
                param_type: scalar_type(root, Some(property), name)?,
                required: required.contains(&name.as_str()),
            });
        }
    }
    Ok(())
}

fn output_fields(root: &Value, operation: &Value) -> Result<Vec<OutputField>, ToolError> {
    let Some(Value::Object(responses)) = operation.get("responses") else {
        return Ok(Vec::new());
    };
    let Some((_, response)) = responses.iter().find(|(code, _)| code.starts_with('2')) else {
        return Ok(Vec::new());
    };
    let Some(schema) = json_schema(root, response)? else {
        return Ok(Vec::new());
    };
    let mut fields = Vec::new();
    if let Some(Value::Object(properties)) = schema.get("properties") {
        for (name, property) in properties {
            // non-scalar outputs stay available in the raw body only
            if let Ok(field_type) = scalar_type(root, Some(property), name) {
                fields.push(OutputField {
                    name: name.clone(),
                    field_type,
                });
            }
        }
    }
    Ok(fields)
}

pub fn import_openapi(document: &str) -> Result<Vec<ToolSpec>, ToolError> {
    import_openapi_with(document, &ImportOptions::default())
}

/// Tool specs in path order, then method order.
pub fn import_openapi_with(document: &str, options: &ImportOptions) -> Result<Vec<ToolSpec>, ToolError> {
    let root = parse_document(document)?;
    let version = root
        .get("openapi")
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::MalformedDocument("missing 'openapi' version".into()))?;
    if !version.starts_with("3.") {
        return Err(ToolError::MalformedDocument(format!(
            "unsupported OpenAPI version {version}"
        )));
    }
    let paths = root
        .get("paths")
        .and_then(Value::as_object)
        .ok_or_else(|| ToolError::MalformedDocument("missing 'paths' object".into()))?;
    let base = options
        .base_url
        .clone()
        .or_else(|| {
            root.pointer("/servers/0/url")
                .and_then(Value::as_str)
                .map(str::to_owned)
        })
        .unwrap_or_default();
    let base = base.trim_end_matches('/');

    let mut specs = Vec::new();
    for (path, item) in paths {
        let item = resolve(&root, item)?;
        for method in METHODS {
            let Some(operation) = item.get(method) else {
                continue;
            };
            let tool_id = operation
                .get("operationId")
                .and_then(Value::as_str)
                .filter(|id| !id.trim().is_empty())
                .ok_or_else(|| ToolError::MissingOperationId {
                    path: path.clone(),
                    method: method.to_uppercase(),
                })?;
            let summary = operation.get("summary").and_then(Value::as_str);
            let description = operation.get("description").and_then(Value::as_str);

            let mut params = Vec::new();
            operation_params(&root, item.get("parameters"), &mut params)?;
            operation_params(&root, operation.get("parameters"), &mut params)?;
            body_params(&root, operation, &mut params)?;

            specs.push(ToolSpec {
                tool_id: tool_id.to_owned(),
                name: summary.unwrap_or(tool_id).to_owned(),
                description: description.or(summary).unwrap_or_default().to_owned(),
                endpoint: format!("{base}{path}"),
                method: method.to_uppercase(),
                params,
                output_fields: output_fields(&root, operation)?,
            });
        }
    }
    Ok(specs)
}
