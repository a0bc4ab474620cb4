//! Event ontology: typed events, their permitted roles, and how many
//! arguments each role may take.
//!
//! The on-disk format is a TSV file with one event type per line:
//!
//! ```text
//! # comment
//! Conflict.Attack.AirstrikeMissileStrike  attacker  target  instrument  place
//! Movement.Transport  transporter:2  origin  destination
//! ```
//!
//! Fields are separated by single tabs (shown as spaces above).
//!
//! A role may carry a `:m` suffix giving its multiplicity (default 1).

use crate::decoder::LinkPrediction;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("failed to read ontology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown event type `{0}`")]
    UnknownType(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSlot {
    pub name: String,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventType {
    pub name: String,
    pub roles: Vec<RoleSlot>,
}

impl EventType {
    pub fn role(&self, name: &str) -> Option<&RoleSlot> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn levels(&self) -> Vec<&str> {
        self.name.split('.').collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    types: Vec<EventType>,
    by_name: BTreeMap<String, usize>,
    roles: Vec<String>,
    role_index: BTreeMap<String, usize>,
}

impl Ontology {
    /// Builds an ontology, checking type names and per-type role uniqueness.
    pub fn new(types: Vec<EventType>) -> Result<Self, OntologyError> {
        let mut by_name = BTreeMap::new();
        let mut all_roles = BTreeSet::new();
        for (i, t) in types.iter().enumerate() {
            let line = i + 1;
            validate_type_name(&t.name).map_err(|message| OntologyError::Format { line, message })?;
            if by_name.insert(t.name.clone(), i).is_some() {
                return Err(OntologyError::Format {
                    line,
                    message: format!("duplicate event type `{}`", t.name),
                });
            }
            let mut seen = BTreeSet::new();
            for r in &t.roles {
                if r.name.is_empty() {
                    return Err(OntologyError::Format {
                        line,
                        message: "empty role name".into(),
                    });
                }
                if r.multiplicity == 0 {
                    return Err(OntologyError::Format {
                        line,
                        message: format!("role `{}` has multiplicity 0", r.name),
                    });
                }
                if !seen.insert(r.name.as_str()) {
                    return Err(OntologyError::Format {
                        line,
                        message: format!("role `{}` listed twice for `{}`", r.name, t.name),
                    });
                }
                all_roles.insert(r.name.clone());
            }
        }
        let roles: Vec<String> = all_roles.into_iter().collect();
        let role_index = roles
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect();
        Ok(Ontology {
            types,
            by_name,
            roles,
            role_index,
        })
    }

    pub fn parse(text: &str) -> Result<Self, OntologyError> {
        let mut types = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split('\t');
            let name = fields.next().unwrap_or_default().trim().to_string();
            let mut roles = Vec::new();
            for field in fields {
                let field = field.trim();
                if field.is_empty() {
                    continue;
                }
                let (role, multiplicity) = match field.split_once(':') {
                    Some((r, m)) => {
                        let m: usize = m.parse().ok().filter(|&m| m >= 1).ok_or_else(|| {
                            OntologyError::Format {
                                line,
                                message: format!("bad multiplicity `{m}` for role `{r}`"),
                            }
                        })?;
                        (r, m)
                    }
                    None => (field, 1),
                };
                roles.push(RoleSlot {
                    name: role.to_string(),
                    multiplicity,
                });
            }
            types.push(EventType { name, roles });
            lines.push(line);
        }
        // Re-map errors from type position to source line.
        Ontology::new(types).map_err(|e| match e {
            OntologyError::Format { line, message } => OntologyError::Format {
                line: lines.get(line - 1).copied().unwrap_or(line),
                message,
            },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        Ontology::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.types {
            out.push_str(&t.name);
            for r in &t.roles {
                out.push('\t');
                out.push_str(&r.name);
                if r.multiplicity != 1 {
                    let _ = write!(out, ":{}", r.multiplicity);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn types(&self) -> &[EventType] {
        &self.types
    }

    pub fn event_type(&self, name: &str) -> Option<&EventType> {
        self.by_name.get(name).map(|&i| &self.types[i])
    }

    /// Declared roles of `event_type`, in file order.
    pub fn roles_for(&self, event_type: &str) -> Result<&[RoleSlot], OntologyError> {
        self.event_type(event_type)
            .map(|t| t.roles.as_slice())
            .ok_or_else(|| OntologyError::UnknownType(event_type.to_string()))
    }

    /// The global role set, sorted lexicographically; position is the role index.
    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn num_roles(&self) -> usize {
        self.roles.len()
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.role_index.get(role).copied()
    }

    pub fn role_name(&self, index: usize) -> Option<&str> {
        self.roles.get(index).map(String::as_str)
    }

    /// Checks predictions against the ontology: roles outside the event's
    /// type, and more than `m_r` distinct spans for one (event, role).
    /// Predictions on events with no known type count as disallowed roles.
    pub fn violations(
        &self,
        predictions: &[LinkPrediction],
        gold_types: &BTreeMap<EventKey, String>,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut spans: BTreeMap<(EventKey, &str), BTreeSet<(usize, usize)>> = BTreeMap::new();
        for p in predictions {
            let key = EventKey::new(&p.doc_id, &p.event_id);
            let slot = gold_types
                .get(&key)
                .and_then(|t| self.event_type(t))
                .and_then(|t| t.role(&p.role));
            if slot.is_none() {
                out.push(Violation {
                    event: key,
                    role: p.role.clone(),
                    kind: ViolationKind::RoleNotAllowed,
                });
                continue;
            }
            spans
                .entry((key, p.role.as_str()))
                .or_default()
                .insert((p.span.start, p.span.end));
        }
        for ((key, role), set) in spans {
            let allowed = gold_types
                .get(&key)
                .and_then(|t| self.event_type(t))
                .and_then(|t| t.role(role))
                .map_or(0, |s| s.multiplicity);
            if set.len() > allowed {
                out.push(Violation {
                    event: key,
                    role: role.to_string(),
                    kind: ViolationKind::TooManyArguments {
                        predicted: set.len(),
                        allowed,
                    },
                });
            }
        }
        out
    }
}

fn validate_type_name(name: &str) -> Result<(), String> {
    let levels: Vec<&str> = name.split('.').collect();
    if name.is_empty() || levels.len() > 3 || levels.iter().any(|l| l.is_empty()) {
        return Err(format!("event type `{name}` must have 1-3 non-empty dot-separated levels"));
    }
    Ok(())
}

/// Identifies an event across a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub doc_id: String,
    pub event_id: String,
}

impl EventKey {
    pub fn new(doc_id: &str, event_id: &str) -> Self {
        EventKey {
            doc_id: doc_id.to_string(),
            event_id: event_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    RoleNotAllowed,
    TooManyArguments { predicted: usize, allowed: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub event: EventKey,
    pub role: String,
    pub kind: ViolationKind,
}
