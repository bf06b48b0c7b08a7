//! Reward scoring for fine-tuning data: a normalized reward
//! R = alpha * correctness + beta * format_score, where correctness is the
//! label-weighted accuracy of the three dominant directions and the format
//! score grades compliance with the think-block + strict-JSON contract.
//! Also emits SFT / GSPO-candidate training records as stable-ordered JSONL.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::prediction::{
    count_present_fields, dominant_direction, extract_json_document, numeric_checks,
    parse_prediction, PredictionSet, ValidationPolicy, NUMERIC_CHECK_COUNT, REQUIRED_FIELD_COUNT,
};
use crate::threshold::Direction;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Mixing weights: alpha + beta = 1 blends correctness against format, and
/// w1 + w5 + w20 = 1 weights the three horizons inside correctness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub w1: f64,
    pub w5: f64,
    pub w20: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { alpha: 0.8, beta: 0.2, w1: 1.0 / 3.0, w5: 1.0 / 3.0, w20: 1.0 / 3.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.w1, self.w5, self.w20];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParams(
                "reward weights must be finite and nonnegative".into(),
            ));
        }
        if (self.alpha + self.beta - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "alpha + beta must equal 1, got {}",
                self.alpha + self.beta
            )));
        }
        let ws = self.w1 + self.w5 + self.w20;
        if (ws - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "horizon weights must sum to 1, got {ws}"
            )));
        }
        Ok(())
    }
}

/// Every component of one candidate's reward, kept separately so training
/// records explain their own scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Per-horizon direction-hit indicators, 0 or 1.
    pub i1: f64,
    pub i5: f64,
    pub i20: f64,
    pub correctness: f64,
    pub format_basic: f64,
    pub format_fields: f64,
    pub format_numeric: f64,
    pub format_score: f64,
    pub reward: f64,
}

/// Weighted accuracy of the three dominant directions against realized
/// labels. Returns the weighted sum plus the raw hit indicators.
pub fn correctness(
    pred: &PredictionSet,
    labels: &[Direction; 3],
    weights: &RewardWeights,
) -> Result<(f64, [bool; 3])> {
    weights.validate()?;
    let hits = [
        dominant_direction(&pred.t1) == labels[0],
        dominant_direction(&pred.t5) == labels[1],
        dominant_direction(&pred.t20) == labels[2],
    ];
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let value = weights.w1 * ind(hits[0]) + weights.w5 * ind(hits[1]) + weights.w20 * ind(hits[2]);
    Ok((value, hits))
}

/// Format-score components for one raw output text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatScore {
    /// 0.5 for think tags, 0.5 for a parseable JSON object.
    pub basic: f64,
    /// Fraction of the 12 required leaf fields present.
    pub fields: f64,
    /// Fraction of the 9 numeric constraints satisfied.
    pub numeric: f64,
    /// 0.3 * basic + 0.3 * fields + 0.4 * numeric.
    pub total: f64,
}

/// Grade arbitrary text against the output contract. Total over all inputs:
/// prose without JSON simply scores low, it never errors.
pub fn format_score(raw_text: &str, policy: &ValidationPolicy) -> FormatScore {
    let doc = extract_json_document(raw_text);
    let mut basic = 0.0;
    if doc.think_block {
        basic += 0.5;
    }
    let (fields, numeric) = match &doc.json {
        Some(root) => {
            basic += 0.5;
            let present = count_present_fields(root) as f64 / REQUIRED_FIELD_COUNT as f64;
            let checks = numeric_checks(root, policy);
            let passed = checks.iter().filter(|ok| **ok).count() as f64;
            (present, passed / NUMERIC_CHECK_COUNT as f64)
        }
        None => (0.0, 0.0),
    };
    let total = 0.3 * basic + 0.3 * fields + 0.4 * numeric;
    FormatScore { basic, fields, numeric, total }
}

/// The affine reward combination. Bounded inputs give R in [0, 1].
pub fn reward(correctness_value: f64, format_total: f64, weights: &RewardWeights) -> Result<f64> {
    weights.validate()?;
    if !(0.0..=1.0).contains(&correctness_value) || !(0.0..=1.0).contains(&format_total) {
        return Err(Error::InvalidParams(format!(
            "reward components must lie in [0, 1], got correctness {correctness_value} format {format_total}"
        )));
    }
    Ok(weights.alpha * correctness_value + weights.beta * format_total)
}

/// Score one candidate text end to end. A candidate that fails validation
/// earns zero correctness; format components still accrue, so malformed
/// outputs are ranked by how close to the contract they came.
pub fn score_candidate(
    raw_text: &str,
    labels: &[Direction; 3],
    weights: &RewardWeights,
    policy: &ValidationPolicy,
) -> Result<RewardBreakdown> {
    let fmt = format_score(raw_text, policy);
    let (value, hits) = match parse_prediction(raw_text, policy) {
        Ok(set) => correctness(&set, labels, weights)?,
        Err(_) => {
            weights.validate()?;
            (0.0, [false; 3])
        }
    };
    let r = reward(value, fmt.total, weights)?;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(RewardBreakdown {
        i1: ind(hits[0]),
        i5: ind(hits[1]),
        i20: ind(hits[2]),
        correctness: value,
        format_basic: fmt.basic,
        format_fields: fmt.fields,
        format_numeric: fmt.numeric,
        format_score: fmt.total,
        reward: r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Sft,
    GspoCandidate,
}

/// One JSONL training record. Candidates of one sample share `group_id` so
/// the trainer can normalize rewards within the group; SFT records carry the
/// teacher text and no reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub record_kind: RecordKind,
    pub fund_code: String,
    pub as_of: NaiveDate,
    pub group_id: String,
    pub candidate_index: u32,
    pub input_payload: Value,
    pub text: String,
    pub labels: [Direction; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

/// One scoring unit: an assembled prediction input, its realized labels, and
/// one or more candidate texts (exactly one teacher text for SFT).
#[derive(Debug, Clone)]
pub struct RewardSample {
    pub fund_code: String,
    pub as_of: NaiveDate,
    pub input_payload: Value,
    pub labels: [Direction; 3],
    pub candidates: Vec<String>,
}

/// Build training records for a batch of samples, scoring GSPO candidates
/// and passing SFT teacher texts through. Output is sorted by
/// (fund, date, candidate index) so files are reproducible.
pub fn emit_records(
    kind: RecordKind,
    samples: &[RewardSample],
    weights: &RewardWeights,
    policy: &ValidationPolicy,
) -> Result<Vec<TrainingRecord>> {
    weights.validate()?;
    let mut records = Vec::new();
    for sample in samples {
        if sample.candidates.is_empty() {
            return Err(Error::InvalidParams(format!(
                "sample {} {} has no candidate texts",
                sample.fund_code, sample.as_of
            )));
        }
        // The payload's own date stamp must agree with the labels' date.
        if let Some(payload_date) = sample.input_payload.get("as_of").and_then(Value::as_str) {
            if payload_date != sample.as_of.to_string() {
                return Err(Error::InputMismatch(format!(
                    "payload dated {payload_date} but labels dated {}",
                    sample.as_of
                )));
            }
        }
        let group_id = format!("{}:{}", sample.fund_code, sample.as_of);
        for (i, text) in sample.candidates.iter().enumerate() {
            let reward = match kind {
                RecordKind::Sft => None,
                RecordKind::GspoCandidate => {
                    Some(score_candidate(text, &sample.labels, weights, policy)?)
                }
            };
            records.push(TrainingRecord {
                record_kind: kind,
                fund_code: sample.fund_code.clone(),
                as_of: sample.as_of,
                group_id: group_id.clone(),
                candidate_index: i as u32,
                input_payload: sample.input_payload.clone(),
                text: text.clone(),
                labels: sample.labels,
                reward,
            });
        }
    }
    records.sort_by(|a, b| {
        (&a.fund_code, a.as_of, a.candidate_index).cmp(&(&b.fund_code, b.as_of, b.candidate_index))
    });
    Ok(records)
}

/// Write records as JSONL, one record per line.
pub fn write_records_jsonl(path: &Path, records: &[TrainingRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization is infallible");
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::HorizonPrediction;
    use serde_json::json;

    fn set(t1: (f64, f64, f64), t5: (f64, f64, f64), t20: (f64, f64, f64)) -> PredictionSet {
        let h = |(up, down, side): (f64, f64, f64)| HorizonPrediction {
            p_up: up,
            p_down: down,
            p_side: side,
            confidence: 0.5,
        };
        PredictionSet {
            t1: h(t1),
            t5: h(t5),
            t20: h(t20),
            raw_text: String::new(),
            had_think_block: true,
        }
    }

    const UP: (f64, f64, f64) = (0.6, 0.15, 0.25);
    const DOWN: (f64, f64, f64) = (0.15, 0.6, 0.25);
    const SIDE: (f64, f64, f64) = (0.25, 0.15, 0.6);

    #[test]
    fn weight_invariants_are_enforced() {
        assert!(RewardWeights::default().validate().is_ok());
        let bad = RewardWeights { alpha: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RewardWeights { w1: 0.5, w5: 0.5, w20: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RewardWeights { alpha: 1.2, beta: -0.2, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn correctness_matches_hand_cases() {
        let w = RewardWeights::default();
        let labels = [Direction::Up, Direction::Down, Direction::Side];
        let (v, hits) = correctness(&set(UP, DOWN, SIDE), &labels, &w).unwrap();
        assert_eq!(v, w.w1 + w.w5 + w.w20);
        assert_eq!(hits, [true, true, true]);

        // t1 and t5 match, t20 misses: 2/3 under equal weights.
        let (v, hits) = correctness(&set(UP, DOWN, UP), &labels, &w).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hits, [true, true, false]);

        // Unequal weights, only t20 matches.
        let w = RewardWeights { w1: 0.2, w5: 0.3, w20: 0.5, ..Default::default() };
        let (v, _) = correctness(&set(DOWN, UP, SIDE), &labels, &w).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn format_score_grades_the_stub_output_at_one() {
        let policy = ValidationPolicy::default();
        for chg in [-3.0, 0.0, 0.4, 2.5] {
            let payload =
                json!({"price_context": {"chg_5d_pct": chg, "eps5": 0.009}}).to_string();
            let text = crate::gateway::stub_predict(&payload).unwrap();
            let fmt = format_score(&text, &policy);
            assert_eq!(fmt.basic, 1.0);
            assert_eq!(fmt.fields, 1.0);
            assert_eq!(fmt.numeric, 1.0);
            assert_eq!(fmt.total, 1.0);
        }
    }

    #[test]
    fn format_score_on_prose_and_partial_outputs() {
        let policy = ValidationPolicy::default();
        let fmt = format_score("<think>musing</think>\nno json here", &policy);
        assert_eq!(fmt.basic, 0.5);
        assert_eq!(fmt.fields, 0.0);
        assert_eq!(fmt.numeric, 0.0);
        assert!((fmt.total - 0.15).abs() < 1e-15);

        let fmt = format_score("plain prose, nothing else", &policy);
        assert_eq!(fmt.total, 0.0);

        // Valid everywhere except the t5 sum (0.9): 8 of 9 numeric checks.
        let text = set(UP, (0.5, 0.2, 0.2), DOWN).render("r");
        let fmt = format_score(&text, &policy);
        assert_eq!(fmt.basic, 1.0);
        assert_eq!(fmt.fields, 1.0);
        assert!((fmt.numeric - 8.0 / 9.0).abs() < 1e-12);
        assert!((fmt.total - (0.3 + 0.3 + 0.4 * 8.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_is_the_affine_combination() {
        let w = RewardWeights::default();
        assert_eq!(reward(1.0, 1.0, &w).unwrap(), 1.0);
        assert!((reward(1.0, 0.5, &w).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(reward(0.0, 0.0, &w).unwrap(), 0.0);
        assert!(reward(1.5, 0.0, &w).is_err());
        let bad = RewardWeights { alpha: 0.5, beta: 0.6, ..Default::default() };
        assert!(reward(1.0, 1.0, &bad).is_err());
    }

    #[test]
    fn reward_rises_with_each_indicator_and_format_component() {
        let w = RewardWeights::default();
        let labels = [Direction::Up, Direction::Down, Direction::Side];
        let policy = ValidationPolicy::default();
        // Indicator monotonicity: one more hit never lowers the score.
        let worse = score_candidate(&set(UP, DOWN, UP).render("r"), &labels, &w, &policy).unwrap();
        let better =
            score_candidate(&set(UP, DOWN, SIDE).render("r"), &labels, &w, &policy).unwrap();
        assert!(better.reward > worse.reward);
        // Format monotonicity at fixed correctness.
        assert!(reward(0.5, 0.8, &w).unwrap() > reward(0.5, 0.3, &w).unwrap());
    }

    #[test]
    fn correctness_depends_only_on_argmax_directions() {
        let w = RewardWeights::default();
        let labels = [Direction::Up, Direction::Down, Direction::Side];
        let policy = ValidationPolicy::default();
        // Same argmax pattern, different probability mass.
        let a = set(UP, DOWN, SIDE);
        let b = set((0.5, 0.2, 0.3), (0.1, 0.45, 0.45 - 1e-9), (0.21, 0.395 - 1e-9, 0.395));
        // b's t5: down 0.45 > side; t20: side wins the near-tie.
        let sa = score_candidate(&a.render("r"), &labels, &w, &policy).unwrap();
        let sb = score_candidate(&b.render("r"), &labels, &w, &policy).unwrap();
        assert_eq!(sa.correctness, sb.correctness);
        assert_eq!((sa.i1, sa.i5, sa.i20), (sb.i1, sb.i5, sb.i20));
        // Both fully valid, so the whole reward coincides.
        assert_eq!(sa.reward, sb.reward);
    }

    #[test]
    fn invalid_candidates_keep_format_credit_but_no_correctness() {
        let w = RewardWeights::default();
        let labels = [Direction::Up, Direction::Up, Direction::Up];
        let policy = ValidationPolicy::default();
        // Sum violation on t5 makes the prediction unparseable.
        let text = set(UP, (0.5, 0.2, 0.2), UP).render("r");
        let s = score_candidate(&text, &labels, &w, &policy).unwrap();
        assert_eq!(s.correctness, 0.0);
        assert_eq!((s.i1, s.i5, s.i20), (0.0, 0.0, 0.0));
        assert!(s.format_score > 0.9);
        assert!((s.reward - 0.2 * s.format_score).abs() < 1e-15);
    }

    #[test]
    fn emit_records_groups_candidates_and_orders_stably() {
        let w = RewardWeights::default();
        let policy = ValidationPolicy::default();
        let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
        let labels = [Direction::Up, Direction::Down, Direction::Side];
        let candidate = set(UP, DOWN, SIDE).render("r");
        let samples = vec![
            RewardSample {
                fund_code: "508001".into(),
                as_of: date,
                input_payload: json!({"as_of": "2024-03-01"}),
                labels,
                candidates: vec![candidate.clone(); 4],
            },
            RewardSample {
                fund_code: "508000".into(),
                as_of: date,
                input_payload: json!({"as_of": "2024-03-01"}),
                labels,
                candidates: vec![candidate.clone()],
            },
        ];
        let records = emit_records(RecordKind::GspoCandidate, &samples, &w, &policy).unwrap();
        assert_eq!(records.len(), 5);
        // Sorted by fund first, then candidate index.
        assert_eq!(records[0].fund_code, "508000");
        assert!(records[1..].iter().all(|r| r.fund_code == "508001"));
        assert_eq!(
            records[1..].iter().map(|r| r.candidate_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        let gid = &records[1].group_id;
        assert!(records[1..].iter().all(|r| &r.group_id == gid));
        // Identical candidates score identically.
        let r0 = records[1].reward.unwrap();
        assert!(records[1..].iter().all(|r| r.reward.unwrap() == r0));

        // SFT records carry no reward.
        let sft = emit_records(RecordKind::Sft, &samples[1..], &w, &policy).unwrap();
        assert_eq!(sft.len(), 1);
        assert!(sft[0].reward.is_none());

        // Payload/label date mismatch is rejected.
        let bad = RewardSample {
            input_payload: json!({"as_of": "2024-03-02"}),
            ..samples[1].clone()
        };
        assert!(matches!(
            emit_records(RecordKind::Sft, &[bad], &w, &policy),
            Err(Error::InputMismatch(_))
        ));

        // No candidates is invalid.
        let empty = RewardSample { candidates: vec![], ..samples[1].clone() };
        assert!(emit_records(RecordKind::GspoCandidate, &[empty], &w, &policy).is_err());
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let w = RewardWeights::default();
        let policy = ValidationPolicy::default();
        let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
        let samples = vec![RewardSample {
            fund_code: "508000".into(),
            as_of: date,
            input_payload: json!({"k": 1}),
            labels: [Direction::Side, Direction::Side, Direction::Side],
            candidates: vec![set(SIDE, SIDE, SIDE).render("r")],
        }];
        let records = emit_records(RecordKind::GspoCandidate, &samples, &w, &policy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records_jsonl(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let parsed: TrainingRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(parsed.group_id, "508000:2024-03-01");
        assert_eq!(parsed.reward.unwrap().reward, records[0].reward.unwrap().reward);
    }
}
