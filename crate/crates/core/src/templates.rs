//! Prompt templates and a minimal placeholder renderer.
//!
//! Templates use brace placeholders: `{name}` is substituted, `{{` and `}}`
//! render as literal braces. A placeholder missing from the bindings is an
//! error, so a template can never silently ship with an unfilled slot.

use std::collections::HashMap;

use thiserror::Error;

pub const STAGE1_GENERATE: &str = include_str!("../templates/stage1_generate.txt");
pub const STAGE2_VALIDATE: &str = include_str!("../templates/stage2_validate.txt");
pub const STAGE3_SELECT: &str = include_str!("../templates/stage3_select.txt");
pub const STAGE4_LEAKAGE: &str = include_str!("../templates/stage4_leakage.txt");
pub const EVAL_WITH_RETRIEVAL: &str = include_str!("../templates/eval_with_retrieval.txt");
pub const EVAL_NO_RETRIEVAL: &str = include_str!("../templates/eval_no_retrieval.txt");
pub const GRADER_MATCH: &str = include_str!("../templates/grader_match.txt");

/// Version tag recorded alongside generated artifacts.
pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: no binding for placeholder {{{name}}}")]
    Unbound { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template}: stray '}}' at byte {offset}")]
    StrayBrace { template: String, offset: usize },
}

#[derive(Debug, Clone)]
pub struct Template {
    name: String,
    source: String,
}

impl Template {
    pub fn new(name: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Names of all placeholders, in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut names = Vec::new();
        self.walk(|piece| {
            if let Piece::Slot(name) = piece {
                if !names.iter().any(|n: &String| n == name) {
                    names.push(name.to_string());
                }
            }
            Ok(())
        })?;
        Ok(names)
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: HashMap<&str, &str> = bindings.iter().copied().collect();
        let mut out = String::with_capacity(self.source.len() + 256);
        self.walk(|piece| {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => match map.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(TemplateError::Unbound {
                            template: self.name.clone(),
                            name: name.to_string(),
                        })
                    }
                },
            }
            Ok(())
        })?;
        Ok(out)
    }

    fn walk<'a, F>(&'a self, mut f: F) -> Result<(), TemplateError>
    where
        F: FnMut(Piece<'a>) -> Result<(), TemplateError>,
    {
        let src = self.source.as_str();
        let bytes = src.as_bytes();
        let mut literal_start = 0;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    f(Piece::Literal(&src[literal_start..i + 1]))?;
                    i += 2;
                    literal_start = i;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    f(Piece::Literal(&src[literal_start..i + 1]))?;
                    i += 2;
                    literal_start = i;
                }
                b'{' => {
                    let close =
                        src[i + 1..]
                            .find('}')
                            .map(|p| p + i + 1)
                            .ok_or_else(|| TemplateError::Unterminated {
                                template: self.name.clone(),
                                offset: i,
                            })?;
                    f(Piece::Literal(&src[literal_start..i]))?;
                    f(Piece::Slot(&src[i + 1..close]))?;
                    i = close + 1;
                    literal_start = i;
                }
                b'}' => {
                    return Err(TemplateError::StrayBrace {
                        template: self.name.clone(),
                        offset: i,
                    })
                }
                _ => i += 1,
            }
        }
        f(Piece::Literal(&src[literal_start..]))
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

pub fn stage1_generate() -> Template {
    Template::new("stage1_generate", STAGE1_GENERATE)
}

pub fn stage2_validate() -> Template {
    Template::new("stage2_validate", STAGE2_VALIDATE)
}

pub fn stage3_select() -> Template {
    Template::new("stage3_select", STAGE3_SELECT)
}

pub fn stage4_leakage() -> Template {
    Template::new("stage4_leakage", STAGE4_LEAKAGE)
}

pub fn eval_with_retrieval() -> Template {
    Template::new("eval_with_retrieval", EVAL_WITH_RETRIEVAL)
}

pub fn eval_no_retrieval() -> Template {
    Template::new("eval_no_retrieval", EVAL_NO_RETRIEVAL)
}

pub fn grader_match() -> Template {
    Template::new("grader_match", GRADER_MATCH)
}
