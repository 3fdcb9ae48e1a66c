use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic category of an image. Index order is fixed: the four anomaly
/// classes first, `Normal` last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyLabel {
    Anencephaly,
    Encephalocele,
    Holoprosencephaly,
    Rachischisis,
    Normal,
}

impl AnomalyLabel {
    pub const ALL: [AnomalyLabel; 5] = [
        AnomalyLabel::Anencephaly,
        AnomalyLabel::Encephalocele,
        AnomalyLabel::Holoprosencephaly,
        AnomalyLabel::Rachischisis,
        AnomalyLabel::Normal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AnomalyLabel::Anencephaly => "Anencephaly",
            AnomalyLabel::Encephalocele => "Encephalocele",
            AnomalyLabel::Holoprosencephaly => "Holoprosencephaly",
            AnomalyLabel::Rachischisis => "Rachischisis",
            AnomalyLabel::Normal => "Normal",
        }
    }

    pub fn is_anomaly(self) -> bool {
        self != AnomalyLabel::Normal
    }
}

impl fmt::Display for AnomalyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyLabel::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| {
            let valid: Vec<_> = AnomalyLabel::ALL.iter().map(|l| l.name()).collect();
            Error::Label(format!("unknown label {s:?}; valid labels are {}", valid.join(", ")))
        })
    }
}

/// Acquisition plane. Metadata only, never a training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaneKind {
    ThalamicTransverse,
    LateralVentricleTransverse,
    CerebellarTransverse,
    SpinalLongitudinal,
    Unspecified,
}

/// Which class set a model or evaluation works over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// The four anomaly classes.
    #[serde(rename = "4class")]
    FourClass,
    /// Four anomalies plus `Normal`.
    #[serde(rename = "5class")]
    FiveClass,
    /// `Abnormal` vs `Normal`.
    #[serde(rename = "binary")]
    Binary,
}

impl Task {
    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::FourClass => AnomalyLabel::ALL[..4].iter().map(|l| l.name()).collect(),
            Task::FiveClass => AnomalyLabel::ALL.iter().map(|l| l.name()).collect(),
            Task::Binary => vec!["Abnormal", "Normal"],
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::FourClass => 4,
            Task::FiveClass => 5,
            Task::Binary => 2,
        }
    }

    pub fn class_index(self, name: &str) -> Result<usize> {
        self.class_names().iter().position(|n| *n == name).ok_or_else(|| {
            Error::Label(format!(
                "label {name:?} is not part of the {} task ({})",
                self,
                self.class_names().join(", ")
            ))
        })
    }

    /// Training target index for an anomaly label, if the task covers it.
    pub fn target_of(self, label: AnomalyLabel) -> Result<usize> {
        match self {
            Task::FourClass if label == AnomalyLabel::Normal => {
                Err(Error::Label("Normal is excluded from the 4class task".into()))
            }
            Task::FourClass | Task::FiveClass => Ok(label.index()),
            Task::Binary => Ok(if label.is_anomaly() { 0 } else { 1 }),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::FourClass => "4class",
            Task::FiveClass => "5class",
            Task::Binary => "binary",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4class" => Ok(Task::FourClass),
            "5class" => Ok(Task::FiveClass),
            "binary" => Ok(Task::Binary),
            other => Err(Error::Parse(format!(
                "unknown task {other:?} (expected 4class, 5class or binary)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip_and_error_lists_valid_names() {
        for l in AnomalyLabel::ALL {
            assert_eq!(l.name().parse::<AnomalyLabel>().unwrap(), l);
        }
        let err = "Foo".parse::<AnomalyLabel>().unwrap_err().to_string();
        assert!(err.contains("Rachischisis") && err.contains("Normal"), "{err}");
    }

    #[test]
    fn task_targets() {
        assert_eq!(Task::FourClass.num_classes(), 4);
        assert!(Task::FourClass.target_of(AnomalyLabel::Normal).is_err());
        assert_eq!(Task::Binary.target_of(AnomalyLabel::Anencephaly).unwrap(), 0);
        assert_eq!(Task::Binary.target_of(AnomalyLabel::Normal).unwrap(), 1);
        assert_eq!(Task::FiveClass.target_of(AnomalyLabel::Normal).unwrap(), 4);
        assert_eq!(serde_json::to_string(&Task::FiveClass).unwrap(), "\"5class\"");
    }
}
