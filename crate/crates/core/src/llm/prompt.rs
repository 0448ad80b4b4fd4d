//! Versioned prompt templates with `{{name}}` placeholders.

use std::collections::BTreeMap;

use thiserror::Error;

pub const TEMPLATE_VERSION: &str = "v1";

pub const SYSTEM_PROMPT: &str = include_str!("../../templates/system.v1.txt");
const AGENT_TURN: &str = include_str!("../../templates/agent_turn.v1.txt");
const FINAL_VERDICT: &str = include_str!("../../templates/final_verdict.v1.txt");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TemplateId {
    AgentTurn,
    FinalVerdict,
}

impl TemplateId {
    pub fn source(&self) -> &'static str {
        match self {
            TemplateId::AgentTurn => AGENT_TURN,
            TemplateId::FinalVerdict => FINAL_VERDICT,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        for segment in segments(self.source()) {
            if let Segment::Var(name) = segment {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template variable {0:?} is not bound")]
    MissingVariable(String),
}

enum Segment<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else {
            break;
        };
        out.push(Segment::Text(&rest[..start]));
        out.push(Segment::Var(rest[start + 2..start + 2 + len].trim()));
        rest = &rest[start + 2 + len + 2..];
    }
    out.push(Segment::Text(rest));
    out
}

/// Substitutes every placeholder. Unused variables are ignored.
pub fn render_prompt(template: TemplateId, variables: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    render_str(template.source(), variables)
}

pub(crate) fn render_str(template: &str, variables: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    for segment in segments(template) {
        match segment {
            Segment::Text(text) => out.push_str(text),
            Segment::Var(name) => {
                let value = variables
                    .get(name)
                    .ok_or_else(|| PromptError::MissingVariable(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}
