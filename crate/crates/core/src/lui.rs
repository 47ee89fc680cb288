//! Language User Interface: input events become perception text, responses
//! become layout plans.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::OfferedAction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LuiError {
    #[error("response text is empty")]
    EmptyResponse,
    #[error("action id '{0}' offered twice")]
    DuplicateActionId(String),
    #[error("no interactive element '{0}' in plan")]
    UnknownElement(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputEvent {
    Utterance {
        text: String,
    },
    FileUpload {
        name: String,
        media_type: String,
        byte_count: u64,
    },
    UiAction {
        element_id: String,
        label: String,
    },
    ImageRef {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
}

impl InputEvent {
    pub fn utterance(text: impl Into<String>) -> Self {
        InputEvent::Utterance { text: text.into() }
    }
}

pub fn normalize_input(event: &InputEvent) -> String {
    match event {
        InputEvent::Utterance { text } => text.clone(),
        InputEvent::FileUpload {
            name,
            media_type,
            byte_count,
        } => format!("User uploaded file '{name}' ({media_type}, {byte_count} bytes)."),
        InputEvent::UiAction { label, .. } => format!("User clicked '{label}'."),
        InputEvent::ImageRef { caption: Some(c) } if !c.trim().is_empty() => {
            format!("User shared an image: {c}")
        }
        InputEvent::ImageRef { .. } => "User shared an image.".to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutOption {
    pub label: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutElement {
    TextBlock {
        text: String,
    },
    Button {
        label: String,
        element_id: String,
    },
    OptionList {
        label: String,
        element_id: String,
        options: Vec<LayoutOption>,
    },
    FileRef {
        label: String,
        uri: String,
    },
}

impl LayoutElement {
    fn interactive(&self) -> Option<(&str, &str)> {
        match self {
            LayoutElement::Button { label, element_id } | LayoutElement::OptionList { label, element_id, .. } => {
                Some((element_id, label))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub elements: Vec<LayoutElement>,
}

impl LayoutPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn element_ids_unique(&self) -> bool {
        let mut seen = HashSet::new();
        self.elements
            .iter()
            .filter_map(LayoutElement::interactive)
            .all(|(id, _)| seen.insert(id))
    }

    /// The text of the first text block.
    pub fn text(&self) -> Option<&str> {
        self.elements.iter().find_map(|e| match e {
            LayoutElement::TextBlock { text } => Some(text.as_str()),
            _ => None,
        })
    }
}

/// One text block, then one button per offered action in order.
pub fn plan_layout(response_text: &str, offered_actions: &[OfferedAction]) -> Result<LayoutPlan, LuiError> {
    if response_text.trim().is_empty() {
        return Err(LuiError::EmptyResponse);
    }
    let mut seen = HashSet::new();
    let mut elements = vec![LayoutElement::TextBlock {
        text: response_text.to_owned(),
    }];
    for action in offered_actions {
        if !seen.insert(action.action_id.as_str()) {
            return Err(LuiError::DuplicateActionId(action.action_id.clone()));
        }
        elements.push(LayoutElement::Button {
            label: action.label.clone(),
            element_id: action.action_id.clone(),
        });
    }
    Ok(LayoutPlan { elements })
}

pub fn resolve_action(plan: &LayoutPlan, element_id: &str) -> Result<InputEvent, LuiError> {
    plan.elements
        .iter()
        .filter_map(LayoutElement::interactive)
        .find(|(id, _)| *id == element_id)
        .map(|(id, label)| InputEvent::UiAction {
            element_id: id.to_owned(),
            label: label.to_owned(),
        })
        .ok_or_else(|| LuiError::UnknownElement(element_id.to_owned()))
}
