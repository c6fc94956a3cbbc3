//! Calibration/test records and the loss functions that turn raw model
//! outputs into a bounded relative loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One example as read from disk. The loss may be precomputed or derived
/// from answers or embeddings, see [`resolve_loss`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
    /// Uncertainty score of the non-thinking model, in `[0, 1]`.
    pub uncertainty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheap_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheap_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_thinking: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_cheap: Option<u64>,
}

impl Record {
    /// Field names accepted in JSONL/CSV input.
    pub const FIELDS: &'static [&'static str] = &[
        "id",
        "group_label",
        "uncertainty",
        "loss",
        "thinking_answer",
        "cheap_answer",
        "gold_answer",
        "thinking_embedding",
        "cheap_embedding",
        "tokens_thinking",
        "tokens_cheap",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.uncertainty) {
            return Err(Error::input(format!(
                "record {}: uncertainty {} outside [0, 1]",
                self.id, self.uncertainty
            )));
        }
        Ok(())
    }
}

/// A record whose loss has been resolved and validated against the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRecord {
    pub id: String,
    pub group_label: Option<String>,
    pub uncertainty: f64,
    pub loss: f64,
    pub tokens_thinking: Option<u64>,
    pub tokens_cheap: Option<u64>,
}

impl ResolvedRecord {
    /// Convenience constructor used by tests and the simulator.
    pub fn new(id: impl Into<String>, uncertainty: f64, loss: f64) -> Self {
        ResolvedRecord {
            id: id.into(),
            group_label: None,
            uncertainty,
            loss,
            tokens_thinking: None,
            tokens_cheap: None,
        }
    }

    pub fn with_group(mut self, label: impl Into<String>) -> Self {
        self.group_label = Some(label.into());
        self
    }

    pub fn with_tokens(mut self, thinking: u64, cheap: u64) -> Self {
        self.tokens_thinking = Some(thinking);
        self.tokens_cheap = Some(cheap);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Precomputed,
    Binary,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    kind: LossKind,
    bound: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::config(format!(
                "loss bound must be positive, got {bound}"
            )));
        }
        if kind == LossKind::Binary && bound != 1.0 {
            return Err(Error::config("binary loss has bound 1"));
        }
        Ok(LossSpec { kind, bound })
    }

    pub fn precomputed(bound: f64) -> Result<Self> {
        Self::new(LossKind::Precomputed, bound)
    }

    pub fn binary() -> Self {
        LossSpec {
            kind: LossKind::Binary,
            bound: 1.0,
        }
    }

    pub fn cosine() -> Self {
        LossSpec {
            kind: LossKind::Cosine,
            bound: 2.0,
        }
    }

    /// Default bound for `kind`: 1 for precomputed and binary, 2 for cosine.
    pub fn default_for(kind: LossKind) -> Self {
        match kind {
            LossKind::Precomputed => LossSpec { kind, bound: 1.0 },
            LossKind::Binary => Self::binary(),
            LossKind::Cosine => Self::cosine(),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

fn normalized<'a>(answer: &'a str, which: &str) -> Result<&'a str> {
    let trimmed = answer.trim();
    if trimmed.is_empty() {
        return Err(Error::input(format!("{which} answer is empty")));
    }
    Ok(trimmed)
}

/// Relative 0-1 loss: 1 exactly when the thinking model is right and the
/// cheap model is wrong. Answers match on exact equality after trimming.
pub fn binary_loss(thinking: &str, cheap: &str, gold: &str) -> Result<f64> {
    let thinking = normalized(thinking, "thinking")?;
    let cheap = normalized(cheap, "cheap")?;
    let gold = normalized(gold, "gold")?;
    let lost = cheap != gold && thinking == gold;
    Ok(if lost { 1.0 } else { 0.0 })
}

/// Cosine distance `1 - cos(v1, v2)`, in `[0, 2]`.
pub fn cosine_loss(v1: &[f64], v2: &[f64]) -> Result<f64> {
    if v1.is_empty() || v1.len() != v2.len() {
        return Err(Error::input(format!(
            "embedding lengths must match and be non-empty ({} vs {})",
            v1.len(),
            v2.len()
        )));
    }
    let dot: f64 = v1.iter().zip(v2).map(|(a, b)| a * b).sum();
    let n1 = v1.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n2 = v2.iter().map(|b| b * b).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::input("embedding has zero or non-finite norm"));
    }
    Ok((1.0 - dot / (n1 * n2)).clamp(0.0, 2.0))
}

fn missing(id: &str, what: &str) -> Error {
    Error::input(format!("record {id}: missing {what}"))
}

pub fn resolve_loss(record: &Record, spec: &LossSpec) -> Result<ResolvedRecord> {
    record.validate()?;
    let loss = match spec.kind {
        LossKind::Precomputed => record.loss.ok_or_else(|| missing(&record.id, "loss"))?,
        LossKind::Binary => {
            let (Some(t), Some(c), Some(g)) = (
                record.thinking_answer.as_deref(),
                record.cheap_answer.as_deref(),
                record.gold_answer.as_deref(),
            ) else {
                return Err(missing(&record.id, "thinking/cheap/gold answers"));
            };
            binary_loss(t, c, g).map_err(|e| Error::input(format!("record {}: {e}", record.id)))?
        }
        LossKind::Cosine => {
            let (Some(a), Some(b)) = (
                record.thinking_embedding.as_deref(),
                record.cheap_embedding.as_deref(),
            ) else {
                return Err(missing(&record.id, "thinking/cheap embeddings"));
            };
            cosine_loss(a, b).map_err(|e| Error::input(format!("record {}: {e}", record.id)))?
        }
    };
    if !(0.0..=spec.bound).contains(&loss) {
        return Err(Error::LossOutOfBounds {
            id: record.id.clone(),
            loss,
            bound: spec.bound,
        });
    }
    Ok(ResolvedRecord {
        id: record.id.clone(),
        group_label: record.group_label.clone(),
        uncertainty: record.uncertainty,
        loss,
        tokens_thinking: record.tokens_thinking,
        tokens_cheap: record.tokens_cheap,
    })
}

pub fn resolve_all(records: &[Record], spec: &LossSpec) -> Result<Vec<ResolvedRecord>> {
    records.iter().map(|r| resolve_loss(r, spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn binary_loss_cases() {
        assert_eq!(binary_loss("A", "B", "A").unwrap(), 1.0);
        assert_eq!(binary_loss("A", "A", "A").unwrap(), 0.0);
        assert_eq!(binary_loss("B", "C", "A").unwrap(), 0.0);
        assert_eq!(binary_loss(" A\n", "B", "A ").unwrap(), 1.0);
    }

    #[test]
    fn binary_loss_rejects_blank() {
        assert!(matches!(binary_loss("A", "   ", "A"), Err(Error::Input(_))));
        assert!(binary_loss("", "B", "A").is_err());
    }

    #[test]
    fn cosine_loss_cases() {
        assert_abs_diff_eq!(cosine_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            cosine_loss(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            1.0 - 1.0 / 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(cosine_loss(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_loss_errors() {
        assert!(cosine_loss(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_loss(&[1.0], &[1.0, 0.0]).is_err());
        assert!(cosine_loss(&[], &[]).is_err());
    }

    #[test]
    fn resolve_precomputed_and_binary() {
        let rec = Record {
            id: "r1".into(),
            uncertainty: 0.2,
            loss: Some(0.4),
            ..Default::default()
        };
        let spec = LossSpec::precomputed(1.0).unwrap();
        assert_eq!(resolve_loss(&rec, &spec).unwrap().loss, 0.4);

        let rec = Record {
            id: "r2".into(),
            uncertainty: 0.2,
            thinking_answer: Some("A".into()),
            cheap_answer: Some("B".into()),
            gold_answer: Some("A".into()),
            ..Default::default()
        };
        assert_eq!(resolve_loss(&rec, &LossSpec::binary()).unwrap().loss, 1.0);
    }

    #[test]
    fn resolve_rejects_out_of_bound_loss() {
        let rec = Record {
            id: "bad".into(),
            uncertainty: 0.2,
            loss: Some(1.5),
            ..Default::default()
        };
        let err = resolve_loss(&rec, &LossSpec::precomputed(1.0).unwrap()).unwrap_err();
        match err {
            Error::LossOutOfBounds { id, .. } => assert_eq!(id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolve_requires_source_fields() {
        let rec = Record {
            id: "r".into(),
            uncertainty: 0.5,
            ..Default::default()
        };
        assert!(resolve_loss(&rec, &LossSpec::binary()).is_err());
        assert!(resolve_loss(&rec, &LossSpec::cosine()).is_err());
        assert!(resolve_loss(&rec, &LossSpec::precomputed(1.0).unwrap()).is_err());
    }

    #[test]
    fn binary_spec_bound_is_fixed() {
        assert!(LossSpec::new(LossKind::Binary, 2.0).is_err());
        assert!(LossSpec::new(LossKind::Cosine, 1.0).is_ok());
        assert!(LossSpec::new(LossKind::Precomputed, 0.0).is_err());
    }

    #[test]
    fn cosine_bound_override_is_enforced() {
        let rec = Record {
            id: "neg".into(),
            uncertainty: 0.5,
            thinking_embedding: Some(vec![1.0, 0.0]),
            cheap_embedding: Some(vec![-1.0, 0.0]),
            ..Default::default()
        };
        let spec = LossSpec::new(LossKind::Cosine, 1.0).unwrap();
        assert!(matches!(
            resolve_loss(&rec, &spec),
            Err(Error::LossOutOfBounds { .. })
        ));
    }

    fn vec2() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn binary_zero_when_thinking_wrong(c in "[A-D]", g in "[A-D]", t in "[A-D]") {
            prop_assume!(t != g);
            prop_assert_eq!(binary_loss(&t, &c, &g).unwrap(), 0.0);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(a in vec2(), b in vec2(), s in 0.01f64..100.0, t in 0.01f64..100.0) {
            let base = cosine_loss(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&base));
            prop_assert!((base - cosine_loss(&b, &a).unwrap()).abs() < 1e-12);
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
            prop_assert!((base - cosine_loss(&sa, &tb).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn resolved_loss_within_bound(loss in -1.0f64..3.0, bound in 0.5f64..2.5) {
            let rec = Record { id: "p".into(), uncertainty: 0.5, loss: Some(loss), ..Default::default() };
            if let Ok(r) = resolve_loss(&rec, &LossSpec::precomputed(bound).unwrap()) {
                prop_assert!(r.loss >= 0.0 && r.loss <= bound);
            }
        }
    }
}
