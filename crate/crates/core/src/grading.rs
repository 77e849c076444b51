//! Vd:Cd based celiac grading and classification scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marsh {
    Normal,
    Marsh1,
    Marsh2,
    Marsh3,
}

impl Marsh {
    pub const ALL: [Marsh; 4] = [Marsh::Normal, Marsh::Marsh1, Marsh::Marsh2, Marsh::Marsh3];

    pub fn binary(self) -> Binary {
        if self == Marsh::Normal {
            Binary::Normal
        } else {
            Binary::Ced
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Marsh::Normal => "normal",
            Marsh::Marsh1 => "marsh1",
            Marsh::Marsh2 => "marsh2",
            Marsh::Marsh3 => "marsh3",
        }
    }
}

impl fmt::Display for Marsh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binary {
    Normal,
    Ced,
}

/// Ratio cut points. A ratio above `normal_above` is normal, at or above
/// `marsh1_from` is Marsh 1, at or above `marsh2_from` is Marsh 2, below is
/// Marsh 3. With `interior_ties_less_severe` off the two interior cut points
/// become strict, sending exact ties to the more severe grade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeThresholds {
    pub normal_above: f64,
    pub marsh1_from: f64,
    pub marsh2_from: f64,
    pub interior_ties_less_severe: bool,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        Self {
            normal_above: 3.0,
            marsh1_from: 1.05,
            marsh2_from: 0.95,
            interior_ties_less_severe: true,
        }
    }
}

pub fn marsh_grade(vd_cd: f64, t: &GradeThresholds) -> Result<Marsh> {
    if !vd_cd.is_finite() || vd_cd < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "Vd:Cd ratio must be finite and non-negative, got {vd_cd}"
        )));
    }
    let at_least = |cut: f64| {
        if t.interior_ties_less_severe {
            vd_cd >= cut
        } else {
            vd_cd > cut
        }
    };
    Ok(if vd_cd > t.normal_above {
        Marsh::Normal
    } else if at_least(t.marsh1_from) {
        Marsh::Marsh1
    } else if at_least(t.marsh2_from) {
        Marsh::Marsh2
    } else {
        Marsh::Marsh3
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub id: String,
    pub vd_cd: f64,
    pub binary: Binary,
    pub marsh: Marsh,
}

pub fn grade(id: impl Into<String>, vd_cd: f64, t: &GradeThresholds) -> Result<GradeResult> {
    let marsh = marsh_grade(vd_cd, t)?;
    Ok(GradeResult {
        id: id.into(),
        vd_cd,
        binary: marsh.binary(),
        marsh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Marsh,
}

/// Scores in [0, 1]; multi-class precision/recall/F1 are macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationScores {
    pub fn percent(&self) -> Self {
        Self {
            accuracy: self.accuracy * 100.0,
            precision: self.precision * 100.0,
            recall: self.recall * 100.0,
            f1: self.f1 * 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    // an empty denominator scores 1 when the other side has no errors either
    fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 if self.fn_ == 0 => 1.0,
            0 => 0.0,
            d => self.tp as f64 / d as f64,
        }
    }

    fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 if self.fp == 0 => 1.0,
            0 => 0.0,
            d => self.tp as f64 / d as f64,
        }
    }

    fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn counts_for<L: PartialEq + Copy>(pred: &[L], truth: &[L], class: L) -> Counts {
    let mut c = Counts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

pub fn classification_scores(pred: &[Marsh], truth: &[Marsh], task: Task) -> Result<ClassificationScores> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted grades vs {} true grades",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("grade lists"));
    }
    let n = pred.len() as f64;
    match task {
        Task::Binary => {
            let p: Vec<Binary> = pred.iter().map(|m| m.binary()).collect();
            let t: Vec<Binary> = truth.iter().map(|m| m.binary()).collect();
            let correct = p.iter().zip(&t).filter(|(a, b)| a == b).count();
            let c = counts_for(&p, &t, Binary::Ced);
            Ok(ClassificationScores {
                accuracy: correct as f64 / n,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            })
        }
        Task::Marsh => {
            let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
            let present: Vec<Marsh> = Marsh::ALL
                .into_iter()
                .filter(|m| pred.contains(m) || truth.contains(m))
                .collect();
            let k = present.len() as f64;
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for &m in &present {
                let c = counts_for(pred, truth, m);
                p += c.precision();
                r += c.recall();
                f += c.f1();
            }
            Ok(ClassificationScores {
                accuracy: correct as f64 / n,
                precision: p / k,
                recall: r / k,
                f1: f / k,
            })
        }
    }
}
