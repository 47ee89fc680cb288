//! The central processor: Thought in, Directive out.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::foundation::{render_prompt, ModelRegistry, ProviderError, TaskKind};
use crate::kernel::{ChainStep, Directive, OfferedAction, StoreKind};
use crate::working_memory::{serialize_thought, Thought};

pub const REPAIR_BUDGET: usize = 2;
pub const FALLBACK_TEXT: &str = "I could not determine a next step.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorReason {
    NoJson,
    UnknownAction,
    MissingField,
    MalformedField,
}

impl ParseErrorReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorReason::NoJson => "no_json",
            ParseErrorReason::UnknownAction => "unknown_action",
            ParseErrorReason::MissingField => "missing_field",
            ParseErrorReason::MalformedField => "malformed_field",
        }
    }
}

impl fmt::Display for ParseErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub reason: ParseErrorReason,
    pub detail: String,
    pub raw: String,
}

pub type ParseOutcome = Result<Directive, ParseError>;

/// Finds the last top-level JSON object embedded in `text`.
fn last_json_object(text: &str) -> Option<Map<String, Value>> {
    let mut found = None;
    let mut i = 0;
    while let Some(offset) = text[i..].find('{') {
        let start = i + offset;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                found = Some(map);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    found
}

struct FieldReader<'a> {
    map: &'a Map<String, Value>,
    raw: &'a str,
}

impl<'a> FieldReader<'a> {
    fn fail(&self, reason: ParseErrorReason, detail: impl Into<String>) -> ParseError {
        ParseError {
            reason,
            detail: detail.into(),
            raw: self.raw.to_owned(),
        }
    }

    fn get(&self, name: &str) -> Result<&'a Value, ParseError> {
        self.map
            .get(name)
            .ok_or_else(|| self.fail(ParseErrorReason::MissingField, name))
    }

    fn string(&self, name: &str) -> Result<String, ParseError> {
        match self.get(name)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.fail(ParseErrorReason::MalformedField, name)),
        }
    }

    fn object(&self, name: &str) -> Result<BTreeMap<String, Value>, ParseError> {
        match self.get(name)? {
            Value::Object(map) => Ok(map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
            _ => Err(self.fail(ParseErrorReason::MalformedField, name)),
        }
    }

    fn non_empty_array(&self, name: &str) -> Result<&'a Vec<Value>, ParseError> {
        match self.get(name)? {
            Value::Array(items) if !items.is_empty() => Ok(items),
            _ => Err(self.fail(ParseErrorReason::MalformedField, name)),
        }
    }
}

/// Placeholders of the form `${bind.field}` in a string value.
pub(crate) fn placeholders(text: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else { break };
        if let Some((bind, field)) = after[..end].split_once('.') {
            out.push((bind, field));
        }
        rest = &after[end + 1..];
    }
    out
}

/// Checks that every placeholder names a bind declared by an earlier step.
pub fn check_chain_bindings(steps: &[ChainStep]) -> Result<(), String> {
    let mut declared = HashSet::new();
    for (i, step) in steps.iter().enumerate() {
        for value in step.args.values() {
            if let Value::String(s) = value {
                for (bind, _) in placeholders(s) {
                    if !declared.contains(bind) {
                        return Err(format!("steps[{i}] references undeclared bind '{bind}'"));
                    }
                }
            }
        }
        if let Some(bind) = &step.bind {
            declared.insert(bind.as_str());
        }
    }
    Ok(())
}

/// Maps the last JSON object in a completion onto a [`Directive`].
pub fn parse_directive(completion: &str) -> ParseOutcome {
    let no_json = || ParseError {
        reason: ParseErrorReason::NoJson,
        detail: "no JSON object found".into(),
        raw: completion.to_owned(),
    };
    let map = last_json_object(completion).ok_or_else(no_json)?;
    let fields = FieldReader {
        map: &map,
        raw: completion,
    };
    let action = fields.string("action")?;

    match action.as_str() {
        "respond" => {
            let text = fields.string("text")?;
            let actions = match map.get("actions") {
                None | Some(Value::Null) => Vec::new(),
                Some(value) => serde_json::from_value::<Vec<OfferedAction>>(value.clone())
                    .map_err(|_| fields.fail(ParseErrorReason::MalformedField, "actions"))?,
            };
            Ok(Directive::Respond { text, actions })
        }
        "invoke_tool" => Ok(Directive::InvokeTool {
            tool_id: fields.string("tool")?,
            args: fields.object("args")?,
        }),
        "query_memory" => {
            let store = fields.string("store")?;
            let store_kind: StoreKind = store
                .parse()
                .map_err(|_| fields.fail(ParseErrorReason::MalformedField, "store"))?;
            Ok(Directive::QueryMemory {
                store_kind,
                query: fields.string("query")?,
            })
        }
        "plan" => {
            let items = fields.non_empty_array("subgoals")?;
            let subgoals = items
                .iter()
                .map(|v| match v {
                    Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
                    _ => Err(fields.fail(ParseErrorReason::MalformedField, "subgoals")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Directive::Plan { subgoals })
        }
        "chain" => {
            let items = fields.non_empty_array("steps")?;
            let steps = items
                .iter()
                .map(|v| serde_json::from_value::<ChainStep>(v.clone()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fields.fail(ParseErrorReason::MalformedField, format!("steps: {e}")))?;
            check_chain_bindings(&steps).map_err(|e| fields.fail(ParseErrorReason::MalformedField, e))?;
            Ok(Directive::Chain { steps })
        }
        "finish" => Ok(Directive::Finish {
            result: fields.string("result")?,
        }),
        other => Err(fields.fail(ParseErrorReason::UnknownAction, other)),
    }
}

const REPAIR_HEADER: &str = "\n\n## Repair\nYour previous reply could not be parsed (reason: ";
const REPAIR_GRAMMAR: &str = ").
Reply with exactly one JSON object using one of these actions:
{\"action\":\"respond\",\"text\":\"...\"}
{\"action\":\"invoke_tool\",\"tool\":\"<tool id>\",\"args\":{}}
{\"action\":\"query_memory\",\"store\":\"<store kind>\",\"query\":\"...\"}
{\"action\":\"plan\",\"subgoals\":[\"...\"]}
{\"action\":\"chain\",\"steps\":[{\"tool\":\"<tool id>\",\"args\":{},\"bind\":\"<name>\"}]}
{\"action\":\"finish\",\"result\":\"...\"}
";

/// Original prompt followed by a fixed block naming the failure and restating
/// the directive grammar.
pub fn build_repair_prompt(original_prompt: &str, error: &ParseError) -> String {
    format!("{original_prompt}{REPAIR_HEADER}{}{REPAIR_GRAMMAR}", error.reason)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub prompt: String,
    pub completion: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ParseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub directive: Directive,
    pub model_id: String,
    pub attempts: Vec<Attempt>,
    pub fell_back: bool,
}

impl StepOutcome {
    pub fn provider_calls(&self) -> usize {
        self.attempts.len()
    }
}

/// serialize → schedule → render → complete → parse, with up to
/// [`REPAIR_BUDGET`] repair attempts.
pub async fn step(
    models: &ModelRegistry,
    thought: &Thought,
    task_kind: TaskKind,
) -> Result<StepOutcome, ProviderError> {
    let thought_text = serialize_thought(thought);
    let (descriptor, template) = models.schedule(task_kind)?;
    let prompt = render_prompt(&template, &thought_text);

    let mut attempts = Vec::new();
    let mut next_prompt = prompt.clone();
    for _ in 0..=REPAIR_BUDGET {
        let completion = models.complete(&descriptor, &next_prompt).await?;
        match parse_directive(&completion) {
            Ok(directive) => {
                attempts.push(Attempt {
                    prompt: next_prompt,
                    completion,
                    error: None,
                });
                return Ok(StepOutcome {
                    directive,
                    model_id: descriptor.model_id,
                    attempts,
                    fell_back: false,
                });
            }
            Err(error) => {
                let repair = build_repair_prompt(&prompt, &error);
                attempts.push(Attempt {
                    prompt: std::mem::replace(&mut next_prompt, repair),
                    completion,
                    error: Some(error),
                });
            }
        }
    }
    Ok(StepOutcome {
        directive: Directive::respond(FALLBACK_TEXT),
        model_id: descriptor.model_id,
        attempts,
        fell_back: true,
    })
}
