use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::colormap::ColorMapName;
use crate::error::{CoreError, Result};
use crate::ids::DatasetId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Decimal,
    Integral,
    String,
    Option,
    Toggle,
    Trigger,
    Color,
    ColorMap1D,
    DimensionPicker,
    Group,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::Decimal,
        ActionKind::Integral,
        ActionKind::String,
        ActionKind::Option,
        ActionKind::Toggle,
        ActionKind::Trigger,
        ActionKind::Color,
        ActionKind::ColorMap1D,
        ActionKind::DimensionPicker,
        ActionKind::Group,
    ];
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ActionKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| CoreError::UnknownKind(s.to_string()))
    }
}

/// Kind-specific payload of an action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum ActionValue {
    Decimal {
        value: f64,
        min: f64,
        max: f64,
        step: f64,
        decimals: u32,
        suffix: String,
    },
    Integral {
        value: i64,
        min: i64,
        max: i64,
    },
    String(String),
    Option {
        choices: Vec<String>,
        current: i64,
    },
    Toggle(bool),
    Trigger,
    Color([u8; 4]),
    ColorMap1D(ColorMapName),
    DimensionPicker {
        dataset: Option<DatasetId>,
        selected: Vec<usize>,
    },
    Group,
}

/// A requested change of an action's value.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueUpdate {
    Decimal(f64),
    Integral(i64),
    String(String),
    OptionIndex(i64),
    /// Selects an option by its label.
    OptionChoice(String),
    Toggle(bool),
    Trigger,
    Color([u8; 4]),
    ColorMap(ColorMapName),
    Dimensions {
        dataset: Option<DatasetId>,
        selected: Vec<usize>,
    },
}

impl ActionValue {
    pub fn decimal(value: f64, min: f64, max: f64) -> Self {
        ActionValue::Decimal {
            value,
            min,
            max,
            step: 0.01,
            decimals: 2,
            suffix: String::new(),
        }
    }

    pub fn integral(value: i64, min: i64, max: i64) -> Self {
        ActionValue::Integral { value, min, max }
    }

    pub fn option(choices: &[&str], current: i64) -> Self {
        ActionValue::Option {
            choices: choices.iter().map(|s| s.to_string()).collect(),
            current,
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            ActionValue::Decimal { .. } => ActionKind::Decimal,
            ActionValue::Integral { .. } => ActionKind::Integral,
            ActionValue::String(_) => ActionKind::String,
            ActionValue::Option { .. } => ActionKind::Option,
            ActionValue::Toggle(_) => ActionKind::Toggle,
            ActionValue::Trigger => ActionKind::Trigger,
            ActionValue::Color(_) => ActionKind::Color,
            ActionValue::ColorMap1D(_) => ActionKind::ColorMap1D,
            ActionValue::DimensionPicker { .. } => ActionKind::DimensionPicker,
            ActionValue::Group => ActionKind::Group,
        }
    }

    pub fn as_decimal(&self) -> Option<f64> {
        match self {
            ActionValue::Decimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn as_integral(&self) -> Option<i64> {
        match self {
            ActionValue::Integral { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn as_toggle(&self) -> Option<bool> {
        match self {
            ActionValue::Toggle(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ActionValue::String(s) => Some(s),
            _ => None,
        }
    }

    /// The current option label, if any.
    pub fn as_choice(&self) -> Option<&str> {
        match self {
            ActionValue::Option { choices, current } if *current >= 0 => {
                choices.get(*current as usize).map(String::as_str)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionValue::Decimal {
                value,
                min,
                max,
                step,
                ..
            } => {
                if !(value.is_finite() && min.is_finite() && max.is_finite() && step.is_finite()) {
                    return Err(CoreError::InvalidAction("non-finite decimal".into()));
                }
                if min > max {
                    return Err(CoreError::InvalidAction(format!("min {min} > max {max}")));
                }
            }
            ActionValue::Integral { min, max, .. } if min > max => {
                return Err(CoreError::InvalidAction(format!("min {min} > max {max}")));
            }
            ActionValue::Option { choices, current } => {
                let ok = if choices.is_empty() {
                    *current == -1 || *current == 0
                } else {
                    *current >= 0 && (*current as usize) < choices.len()
                };
                if !ok {
                    return Err(CoreError::InvalidAction(format!(
                        "option index {current} out of range for {} choices",
                        choices.len()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical form: numeric values clamped, empty options at -1, picked
    /// dimensions sorted and unique.
    pub fn normalized(&self) -> Self {
        let mut v = self.clone();
        match &mut v {
            ActionValue::Decimal { value, min, max, .. } => *value = value.clamp(*min, *max),
            ActionValue::Integral { value, min, max } => *value = (*value).clamp(*min, *max),
            ActionValue::Option { choices, current } if choices.is_empty() => *current = -1,
            ActionValue::DimensionPicker { selected, .. } => {
                selected.sort_unstable();
                selected.dedup();
            }
            _ => {}
        }
        v
    }

    /// Applies an update, returning the new value.
    pub fn apply(&self, update: ValueUpdate) -> Result<ActionValue> {
        let mismatch = |found: &str| CoreError::KindMismatch {
            expected: self.kind().to_string(),
            found: found.to_string(),
        };
        let mut next = self.clone();
        match (&mut next, update) {
            (ActionValue::Decimal { value, min, max, .. }, ValueUpdate::Decimal(v)) => {
                if !v.is_finite() {
                    return Err(CoreError::InvalidParameter("non-finite decimal".into()));
                }
                *value = v.clamp(*min, *max);
            }
            (ActionValue::Decimal { value, min, max, .. }, ValueUpdate::Integral(v)) => {
                *value = (v as f64).clamp(*min, *max);
            }
            (ActionValue::Integral { value, min, max }, ValueUpdate::Integral(v)) => {
                *value = v.clamp(*min, *max);
            }
            (ActionValue::String(s), ValueUpdate::String(v)) => *s = v,
            (ActionValue::Option { choices, current }, ValueUpdate::OptionIndex(i)) => {
                if i < 0 || i as usize >= choices.len() {
                    return Err(CoreError::InvalidParameter(format!(
                        "option index {i} out of range for {} choices",
                        choices.len()
                    )));
                }
                *current = i;
            }
            (ActionValue::Option { choices, current }, ValueUpdate::OptionChoice(label)) => {
                let i = choices.iter().position(|c| *c == label).ok_or_else(|| {
                    CoreError::InvalidParameter(format!(
                        "`{label}` is not one of {}",
                        choices.join(", ")
                    ))
                })?;
                *current = i as i64;
            }
            (ActionValue::Toggle(b), ValueUpdate::Toggle(v)) => *b = v,
            (ActionValue::Color(c), ValueUpdate::Color(v)) => *c = v,
            (ActionValue::ColorMap1D(c), ValueUpdate::ColorMap(v)) => *c = v,
            (
                ActionValue::DimensionPicker { dataset, selected },
                ValueUpdate::Dimensions {
                    dataset: d,
                    selected: s,
                },
            ) => {
                *dataset = d;
                *selected = s;
                selected.sort_unstable();
                selected.dedup();
            }
            (_, update) => return Err(mismatch(update.kind_name())),
        }
        Ok(next)
    }

    /// Parses a textual parameter (as given on a command line) into an
    /// update suitable for this value's kind.
    pub fn parse_update(&self, text: &str) -> Result<ValueUpdate> {
        let bad = || CoreError::InvalidParameter(format!("cannot read `{text}` as {}", self.kind()));
        Ok(match self {
            ActionValue::Decimal { .. } => ValueUpdate::Decimal(text.parse().map_err(|_| bad())?),
            ActionValue::Integral { .. } => ValueUpdate::Integral(text.parse().map_err(|_| bad())?),
            ActionValue::String(_) => ValueUpdate::String(text.to_string()),
            ActionValue::Option { choices, .. } => {
                if choices.iter().any(|c| c == text) {
                    ValueUpdate::OptionChoice(text.to_string())
                } else {
                    ValueUpdate::OptionIndex(text.parse().map_err(|_| bad())?)
                }
            }
            ActionValue::Toggle(_) => ValueUpdate::Toggle(match text {
                "true" | "1" | "on" | "yes" => true,
                "false" | "0" | "off" | "no" => false,
                _ => return Err(bad()),
            }),
            ActionValue::Trigger => ValueUpdate::Trigger,
            ActionValue::Color(_) => {
                let hex = text.trim_start_matches('#');
                if hex.len() != 8 {
                    return Err(bad());
                }
                let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
                ValueUpdate::Color([byte(0)?, byte(2)?, byte(4)?, byte(6)?])
            }
            ActionValue::ColorMap1D(_) => ValueUpdate::ColorMap(text.parse()?),
            ActionValue::DimensionPicker { dataset, .. } => ValueUpdate::Dimensions {
                dataset: *dataset,
                selected: text
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            },
            ActionValue::Group => return Err(bad()),
        })
    }
}

impl ValueUpdate {
    fn kind_name(&self) -> &'static str {
        match self {
            ValueUpdate::Decimal(_) => "Decimal",
            ValueUpdate::Integral(_) => "Integral",
            ValueUpdate::String(_) => "String",
            ValueUpdate::OptionIndex(_) | ValueUpdate::OptionChoice(_) => "Option",
            ValueUpdate::Toggle(_) => "Toggle",
            ValueUpdate::Trigger => "Trigger",
            ValueUpdate::Color(_) => "Color",
            ValueUpdate::ColorMap(_) => "ColorMap1D",
            ValueUpdate::Dimensions { .. } => "DimensionPicker",
        }
    }
}
