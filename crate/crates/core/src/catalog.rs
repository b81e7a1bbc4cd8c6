//! Pattern documentation catalog.
//!
//! A catalog is a JSON array of pattern descriptors, each carrying ten
//! required elements. Validation reports every missing or blank element of
//! every entry at once; rendering produces a Markdown document with the
//! elements in a fixed order.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// The catalog shipped with this crate.
pub const SHIPPED_CATALOG: &str = include_str!("../catalog/patterns.json");

/// Element keys in rendering order, with their section titles.
pub const ELEMENTS: [(&str, &str); 10] = [
    ("name", "Name"),
    ("context", "Context"),
    ("problem", "Problem"),
    ("solution", "Solution"),
    ("forces", "Forces"),
    ("resulting_context", "Resulting Context"),
    ("examples", "Examples"),
    ("rationale", "Rationale"),
    ("related_patterns", "Related Patterns"),
    ("known_uses", "Known Uses"),
];

const LIST_ELEMENTS: [&str; 2] = ["related_patterns", "known_uses"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternDescriptor {
    pub name: String,
    pub context: String,
    pub problem: String,
    pub solution: String,
    pub forces: String,
    pub resulting_context: String,
    pub examples: String,
    pub rationale: String,
    pub related_patterns: Vec<String>,
    pub known_uses: Vec<String>,
}

impl PatternDescriptor {
    fn text(&self, key: &str) -> Option<&str> {
        Some(match key {
            "name" => &self.name,
            "context" => &self.context,
            "problem" => &self.problem,
            "solution" => &self.solution,
            "forces" => &self.forces,
            "resulting_context" => &self.resulting_context,
            "examples" => &self.examples,
            "rationale" => &self.rationale,
            _ => return None,
        })
    }

    fn list(&self, key: &str) -> &[String] {
        match key {
            "related_patterns" => &self.related_patterns,
            "known_uses" => &self.known_uses,
            _ => &[],
        }
    }
}

/// Problems found in one catalog entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryProblem {
    /// The entry's name, or `#<index>` when it has none.
    pub entry: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog does not parse: {0}")]
    ParseError(String),
    #[error("catalog schema violations: {}", describe(.0))]
    SchemaError(Vec<EntryProblem>),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::ParseError(_) => "ParseError",
            CatalogError::SchemaError(_) => "SchemaError",
        }
    }
}

fn describe(problems: &[EntryProblem]) -> String {
    problems
        .iter()
        .map(|p| format!("`{}` missing or empty: {}", p.entry, p.fields.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

fn is_blank_text(value: Option<&Value>) -> bool {
    !matches!(value, Some(Value::String(s)) if !s.trim().is_empty())
}

fn is_blank_list(value: Option<&Value>) -> bool {
    match value {
        Some(Value::Array(items)) => {
            items.is_empty()
                || items
                    .iter()
                    .any(|item| !matches!(item, Value::String(s) if !s.trim().is_empty()))
        }
        _ => true,
    }
}

/// Parses and validates catalog text.
pub fn validate_catalog(source: &str) -> Result<Vec<PatternDescriptor>, CatalogError> {
    let value: Value =
        serde_json::from_str(source).map_err(|e| CatalogError::ParseError(e.to_string()))?;
    let Value::Array(entries) = value else {
        return Err(CatalogError::ParseError(
            "catalog must be a JSON array of pattern objects".into(),
        ));
    };

    let mut problems = Vec::new();
    let mut names = HashSet::new();
    for (index, entry) in entries.iter().enumerate() {
        let Value::Object(fields) = entry else {
            problems.push(EntryProblem {
                entry: format!("#{index}"),
                fields: ELEMENTS.iter().map(|(k, _)| k.to_string()).collect(),
            });
            continue;
        };
        let label = match fields.get("name") {
            Some(Value::String(n)) if !n.trim().is_empty() => n.clone(),
            _ => format!("#{index}"),
        };
        let mut missing: Vec<String> = ELEMENTS
            .iter()
            .map(|(key, _)| *key)
            .filter(|key| {
                let value = fields.get(*key);
                if LIST_ELEMENTS.contains(key) {
                    is_blank_list(value)
                } else {
                    is_blank_text(value)
                }
            })
            .map(str::to_string)
            .collect();
        if !missing.iter().any(|f| f == "name") && !names.insert(label.clone()) {
            missing.push("name (duplicate)".into());
        }
        if !missing.is_empty() {
            problems.push(EntryProblem {
                entry: label,
                fields: missing,
            });
        }
    }
    if !problems.is_empty() {
        return Err(CatalogError::SchemaError(problems));
    }
    entries
        .into_iter()
        .map(serde_json::from_value)
        .collect::<Result<_, _>>()
        .map_err(|e| CatalogError::ParseError(e.to_string()))
}

pub fn render_catalog(descriptors: &[PatternDescriptor]) -> String {
    let mut out = String::from("# Pattern Catalog\n");
    for d in descriptors {
        let _ = write!(out, "\n## {}\n", d.name);
        for (key, title) in ELEMENTS {
            let _ = write!(out, "\n### {title}\n\n");
            match d.text(key) {
                Some(text) => {
                    out.push_str(text.trim());
                    out.push('\n');
                }
                None => {
                    for item in d.list(key) {
                        let _ = writeln!(out, "- {}", item.trim());
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_catalog_validates() {
        let descriptors = validate_catalog(SHIPPED_CATALOG).unwrap();
        let names: Vec<_> = descriptors.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "Notification (Observer)",
                "Request (Chain Of Responsibility)"
            ]
        );
    }

    #[test]
    fn empty_array_is_valid() {
        assert!(validate_catalog("[]").unwrap().is_empty());
        assert_eq!(render_catalog(&[]), "# Pattern Catalog\n");
    }

    #[test]
    fn missing_forces_is_listed() {
        let mut entries: Vec<Value> = serde_json::from_str(SHIPPED_CATALOG).unwrap();
        entries[0].as_object_mut().unwrap().remove("forces");
        let err = validate_catalog(&serde_json::to_string(&entries).unwrap()).unwrap_err();
        assert_eq!(
            err,
            CatalogError::SchemaError(vec![EntryProblem {
                entry: "Notification (Observer)".into(),
                fields: vec!["forces".into()],
            }])
        );
    }

    #[test]
    fn parse_and_shape_errors() {
        assert_eq!(validate_catalog("{").unwrap_err().code(), "ParseError");
        assert_eq!(validate_catalog("{}").unwrap_err().code(), "ParseError");
        let err = validate_catalog("[3]").unwrap_err();
        assert_eq!(err.code(), "SchemaError");
        assert!(err.to_string().contains("#0"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let entries: Vec<Value> = serde_json::from_str(SHIPPED_CATALOG).unwrap();
        let doubled = vec![entries[0].clone(), entries[0].clone()];
        let err = validate_catalog(&serde_json::to_string(&doubled).unwrap()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn render_orders_elements() {
        let descriptors = validate_catalog(SHIPPED_CATALOG).unwrap();
        let doc = render_catalog(&descriptors);
        assert_eq!(doc.matches("\n## ").count(), 2);
        let positions: Vec<usize> = ELEMENTS
            .iter()
            .map(|(_, title)| doc.find(&format!("### {title}\n")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(doc, render_catalog(&descriptors));
    }
}
