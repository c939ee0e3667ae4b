//! Role parameter values and their published schemas.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A scalar role parameter. All numbers are carried as `f64`; integer-typed
/// parameters are checked for integrality against the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    String(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::String(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Number(x) => write!(f, "{x}"),
            ParamValue::String(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Integer,
    Number,
    String,
    Bool,
}

/// Inclusive or exclusive numeric bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<Bound>,
    pub description: String,
}

impl ParamSpec {
    pub fn integer(name: &str, default: i64, description: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer,
            default: Some(ParamValue::Number(default as f64)),
            min: None,
            max: None,
            description: description.into(),
        }
    }

    pub fn number(name: &str, default: f64, description: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Number,
            default: Some(ParamValue::Number(default)),
            min: None,
            max: None,
            description: description.into(),
        }
    }

    /// Optional string parameter with no default.
    pub fn optional_string(name: &str, description: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::String,
            default: None,
            min: None,
            max: None,
            description: description.into(),
        }
    }

    pub fn at_least(mut self, value: f64) -> Self {
        self.min = Some(Bound {
            value,
            inclusive: true,
        });
        self
    }

    pub fn above(mut self, value: f64) -> Self {
        self.min = Some(Bound {
            value,
            inclusive: false,
        });
        self
    }

    pub fn at_most(mut self, value: f64) -> Self {
        self.max = Some(Bound {
            value,
            inclusive: true,
        });
        self
    }

    pub fn below(mut self, value: f64) -> Self {
        self.max = Some(Bound {
            value,
            inclusive: false,
        });
        self
    }

    /// Checks a supplied value against this spec.
    pub fn check(&self, value: &ParamValue) -> Result<(), String> {
        let type_ok = matches!(
            (self.kind, value),
            (ParamKind::Integer | ParamKind::Number, ParamValue::Number(_))
                | (ParamKind::String, ParamValue::String(_))
                | (ParamKind::Bool, ParamValue::Bool(_))
        );
        if !type_ok {
            return Err(format!("expected {:?}, got {value}", self.kind).to_lowercase());
        }
        if let ParamValue::Number(x) = value {
            if !x.is_finite() {
                return Err(format!("{x} is not finite"));
            }
            if self.kind == ParamKind::Integer && x.fract() != 0.0 {
                return Err(format!("expected an integer, got {x}"));
            }
            if let Some(b) = self.min {
                if *x < b.value || (!b.inclusive && *x == b.value) {
                    let op = if b.inclusive { ">=" } else { ">" };
                    return Err(format!("must be {op} {}, got {x}", b.value));
                }
            }
            if let Some(b) = self.max {
                if *x > b.value || (!b.inclusive && *x == b.value) {
                    let op = if b.inclusive { "<=" } else { "<" };
                    return Err(format!("must be {op} {}, got {x}", b.value));
                }
            }
        }
        Ok(())
    }
}

/// One parameter problem found while resolving a binding.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIssue {
    pub param: String,
    pub message: String,
}

/// Parameters after schema checking with defaults filled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn usize(&self, name: &str) -> Option<usize> {
        self.f64(name).map(|x| x as usize)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(ParamValue::as_str)
    }
}

/// Validates `supplied` against `specs` and fills defaults.
pub fn resolve_params(
    specs: &[ParamSpec],
    supplied: &BTreeMap<String, ParamValue>,
) -> Result<Params, Vec<ParamIssue>> {
    let mut issues = Vec::new();
    for name in supplied.keys() {
        if !specs.iter().any(|s| &s.name == name) {
            issues.push(ParamIssue {
                param: name.clone(),
                message: "unknown parameter".into(),
            });
        }
    }
    let mut resolved = BTreeMap::new();
    for spec in specs {
        match supplied.get(&spec.name) {
            Some(v) => match spec.check(v) {
                Ok(()) => {
                    resolved.insert(spec.name.clone(), v.clone());
                }
                Err(message) => issues.push(ParamIssue {
                    param: spec.name.clone(),
                    message,
                }),
            },
            None => {
                if let Some(d) = &spec.default {
                    resolved.insert(spec.name.clone(), d.clone());
                }
            }
        }
    }
    if issues.is_empty() {
        Ok(Params(resolved))
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::integer("num_pulses", 10, "").at_least(1.0),
            ParamSpec::number("fraction", 0.1, "").above(0.0).below(1.0),
            ParamSpec::optional_string("peer", ""),
        ]
    }

    #[test]
    fn defaults_fill() {
        let p = resolve_params(&specs(), &BTreeMap::new()).unwrap();
        assert_eq!(p.usize("num_pulses"), Some(10));
        assert_eq!(p.f64("fraction"), Some(0.1));
        assert_eq!(p.str("peer"), None);
    }

    #[test]
    fn range_and_type_issues() {
        let mut supplied = BTreeMap::new();
        supplied.insert("num_pulses".to_string(), ParamValue::Number(2.5));
        supplied.insert("fraction".to_string(), ParamValue::Number(1.0));
        supplied.insert("peer".to_string(), ParamValue::Bool(true));
        supplied.insert("bogus".to_string(), ParamValue::Number(1.0));
        let issues = resolve_params(&specs(), &supplied).unwrap_err();
        let names: Vec<&str> = issues.iter().map(|i| i.param.as_str()).collect();
        assert_eq!(names, vec!["bogus", "num_pulses", "fraction", "peer"]);
    }
}
