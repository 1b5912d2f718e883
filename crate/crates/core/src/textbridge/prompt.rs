use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::TextRole;

pub const DEFAULT_VLM_PROMPT: &str = "Please comprehensively describe the distribution and shape of the image";

pub const DEFAULT_LLM_PROMPT: &str = "A drilled-hole pattern was recorded with center x {mean_x} y {mean_y}, \
standard deviation x {std_x} y {std_y} and ring counts {ring_counts} out of {total_points} holes. \
Holes of a well-made part have a standard deviation near 1.9 around the origin. \
Summarize the numbers and judge whether the placement deviates from that reference.";

/// Slots available to templates.
pub const SLOTS: &[&str] = &[
    "mean_x",
    "mean_y",
    "std_x",
    "std_y",
    "ring_counts",
    "total_points",
    "lit_pixels",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: TextRole,
    pub template: String,
}

impl PromptTemplate {
    pub fn new(role: TextRole, template: &str) -> Result<Self> {
        let t = PromptTemplate {
            role,
            template: template.to_string(),
        };
        for slot in t.slots()? {
            if !SLOTS.contains(&slot.as_str()) {
                return Err(Error::Config(format!("prompt slot {{{slot}}} cannot be filled")));
            }
        }
        Ok(t)
    }

    pub fn default_for(role: TextRole) -> Self {
        let text = match role {
            TextRole::Vlm => DEFAULT_VLM_PROMPT,
            TextRole::Llm => DEFAULT_LLM_PROMPT,
        };
        PromptTemplate::new(role, text).expect("default prompts are valid")
    }

    pub fn slots(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::Config(format!("unclosed slot in prompt: {}", self.template)))?;
            out.push(rest[open + 1..open + close].to_string());
            rest = &rest[open + close + 1..];
        }
        Ok(out)
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String> {
        let mut text = self.template.clone();
        for slot in self.slots()? {
            let v = values
                .get(slot.as_str())
                .ok_or_else(|| Error::Config(format!("no value for prompt slot {{{slot}}}")))?;
            text = text.replace(&format!("{{{slot}}}"), v);
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        assert!(PromptTemplate::default_for(TextRole::Vlm).slots().unwrap().is_empty());
        assert_eq!(PromptTemplate::default_for(TextRole::Llm).slots().unwrap().len(), 6);
    }

    #[test]
    fn unknown_slot_rejected() {
        assert!(PromptTemplate::new(TextRole::Llm, "label is {label}").is_err());
        assert!(PromptTemplate::new(TextRole::Llm, "broken {mean_x").is_err());
    }

    #[test]
    fn render_fills_slots() {
        let t = PromptTemplate::new(TextRole::Llm, "x={mean_x} y={mean_y}").unwrap();
        let vals = BTreeMap::from([("mean_x", "1.0".to_string()), ("mean_y", "2.0".to_string())]);
        assert_eq!(t.render(&vals).unwrap(), "x=1.0 y=2.0");
    }
}
