//! The decision-prompt battery and its plain-text pack format.

use std::path::Path;

use crate::error::{Error, Result};

/// The pack shipped with the crate.
pub const BUNDLED_PACK: &str = include_str!("../../data/prompt_battery.txt");

/// One scenario prompt; the shared template wraps it at render time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub id: u32,
    pub body: String,
}

/// Template plus prompts; everything `eval` sends comes from here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBattery {
    pub template_start: String,
    pub template_end: String,
    pub prompts: Vec<PromptSpec>,
}

impl PromptBattery {
    /// The ten-prompt battery bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PACK).expect("bundled pack is well-formed")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse the pack format: `::start`, `::end`, and `::prompt <id>`
    /// directives, each followed by body lines joined with spaces.
    /// `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        enum Section {
            None,
            Start,
            End,
            Prompt(u32),
        }
        let mut section = Section::None;
        let mut template_start = String::new();
        let mut template_end = String::new();
        let mut prompts: Vec<PromptSpec> = Vec::new();
        let mut body = String::new();

        let mut close =
            |section: &Section, body: &mut String, prompts: &mut Vec<PromptSpec>| -> Result<()> {
                let text = std::mem::take(body);
                match section {
                    Section::None => {}
                    Section::Start => template_start = text,
                    Section::End => template_end = text,
                    Section::Prompt(id) => {
                        if prompts.iter().any(|p| p.id == *id) {
                            return Err(Error::Format(format!("duplicate prompt id {id}")));
                        }
                        prompts.push(PromptSpec {
                            id: *id,
                            body: text,
                        });
                    }
                }
                Ok(())
            };

        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('#') || trimmed.is_empty() {
                continue;
            }
            if let Some(directive) = trimmed.strip_prefix("::") {
                close(&section, &mut body, &mut prompts)?;
                section = match directive.trim() {
                    "start" => Section::Start,
                    "end" => Section::End,
                    other => match other.strip_prefix("prompt ") {
                        Some(id) => Section::Prompt(id.trim().parse().map_err(|_| {
                            Error::Format(format!("bad prompt id in directive `::{other}`"))
                        })?),
                        None => {
                            return Err(Error::Format(format!("unknown directive `::{other}`")))
                        }
                    },
                };
            } else {
                if !body.is_empty() {
                    body.push(' ');
                }
                body.push_str(trimmed);
            }
        }
        close(&section, &mut body, &mut prompts)?;

        if template_start.is_empty() || template_end.is_empty() {
            return Err(Error::Format(
                "pack must define ::start and ::end sections".into(),
            ));
        }
        if prompts.is_empty() {
            return Err(Error::Format("pack defines no prompts".into()));
        }
        Ok(Self {
            template_start,
            template_end,
            prompts,
        })
    }

    /// start + " " + body + " " + end.
    pub fn render(&self, prompt: &PromptSpec) -> String {
        format!(
            "{} {} {}",
            self.template_start, prompt.body, self.template_end
        )
    }
}
