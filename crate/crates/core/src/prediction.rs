//! Prediction-agent I/O: assembling the model's input payload from the four
//! agent reports plus price context, and parsing the "reasoning block +
//! strict JSON" output into typed multi-horizon probabilities.
//!
//! The output contract, also emitted by the offline stub:
//!
//! ```json
//! {"t1":{"up":0.6,"down":0.15,"side":0.25,"confidence":0.5},
//!  "t5":{...},"t20":{...}}
//! ```
//!
//! Validation rules live here and are shared with the reward scorer, so the
//! parser and the format score cannot drift apart.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent_context::{AgentKind, AgentReport};
use crate::error::{Error, Result};
use crate::threshold::{Direction, HorizonThresholds};

/// Machine-readable validation outcome codes. Parse failures carry exactly
/// one; the format scorer uses the same constraint battery for partial
/// credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationCode {
    /// Reasoning tags absent; never fatal on its own, recorded as a flag.
    MissingThinkBlock,
    NoJson,
    MissingHorizon,
    MissingField,
    NotANumber,
    /// A probability outside [0, 1].
    ProbOutOfRange,
    /// A probability below the policy floor.
    ProbBelowMin,
    SumViolation,
    DominantOutOfRange,
    ConfidenceOutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationPolicy {
    /// Tolerance on |p_up + p_down + p_side - 1|.
    pub sum_tol: f64,
    /// Floor for every probability.
    pub p_min: f64,
    /// Dominant (maximum) probability must land in this closed band.
    pub dominant_min: f64,
    pub dominant_max: f64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy { sum_tol: 0.01, p_min: 0.01, dominant_min: 0.34, dominant_max: 0.95 }
    }
}

impl ValidationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min < 1.0 / 3.0) {
            return Err(Error::InvalidParams(format!(
                "p_min must lie in (0, 1/3), got {}",
                self.p_min
            )));
        }
        if !(self.dominant_min > 1.0 / 3.0
            && self.dominant_min <= self.dominant_max
            && self.dominant_max <= 1.0)
        {
            return Err(Error::InvalidParams(format!(
                "dominant band must satisfy 1/3 < min <= max <= 1, got [{}, {}]",
                self.dominant_min, self.dominant_max
            )));
        }
        if !(self.sum_tol >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "sum_tol must be nonnegative, got {}",
                self.sum_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonPrediction {
    #[serde(rename = "up")]
    pub p_up: f64,
    #[serde(rename = "down")]
    pub p_down: f64,
    #[serde(rename = "side")]
    pub p_side: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub t1: HorizonPrediction,
    pub t5: HorizonPrediction,
    pub t20: HorizonPrediction,
    #[serde(skip)]
    pub raw_text: String,
    /// False when the output lacked reasoning tags and the first JSON object
    /// was taken instead.
    #[serde(skip)]
    pub had_think_block: bool,
}

pub const HORIZON_KEYS: [&str; 3] = ["t1", "t5", "t20"];
pub const FIELD_KEYS: [&str; 4] = ["up", "down", "side", "confidence"];
/// Leaf fields the output schema requires.
pub const REQUIRED_FIELD_COUNT: usize = 12;
/// Numeric constraints: per horizon, probability sum, dominant band, and
/// probability floor.
pub const NUMERIC_CHECK_COUNT: usize = 9;

/// Result of locating the JSON document inside raw model output.
#[derive(Debug, Clone)]
pub struct ExtractedDocument {
    pub json: Option<Value>,
    pub think_block: bool,
}

/// Locate the JSON document in model output: after the final `</think>` tag
/// when reasoning tags are present, otherwise the first JSON object anywhere
/// in the text.
pub fn extract_json_document(text: &str) -> ExtractedDocument {
    let think_block = match (text.find("<think>"), text.rfind("</think>")) {
        (Some(open), Some(close)) => open < close,
        _ => false,
    };
    let region = if think_block {
        &text[text.rfind("</think>").expect("checked above") + "</think>".len()..]
    } else {
        text
    };
    ExtractedDocument { json: first_json_object(region), think_block }
}

fn first_json_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b != b'{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn invalid(code: ValidationCode, detail: String) -> Error {
    Error::PredictionInvalid { code, detail }
}

/// Parse and validate model output against the policy. Fails with the first
/// violated constraint's code, checked in schema order (t1, t5, t20) and
/// within a horizon: probability range, probability floor, sum, dominant
/// band, confidence range.
pub fn parse_prediction(text: &str, policy: &ValidationPolicy) -> Result<PredictionSet> {
    policy.validate()?;
    let doc = extract_json_document(text);
    let root = doc
        .json
        .ok_or_else(|| invalid(ValidationCode::NoJson, "no JSON object in output".into()))?;

    let mut horizons = Vec::with_capacity(3);
    for hk in HORIZON_KEYS {
        let h = root
            .get(hk)
            .and_then(Value::as_object)
            .ok_or_else(|| invalid(ValidationCode::MissingHorizon, format!("horizon {hk} absent or not an object")))?;
        let mut vals = [0.0f64; 4];
        for (fi, fk) in FIELD_KEYS.iter().enumerate() {
            let v = h.get(*fk).ok_or_else(|| {
                invalid(ValidationCode::MissingField, format!("{hk}.{fk} absent"))
            })?;
            vals[fi] = v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| invalid(ValidationCode::NotANumber, format!("{hk}.{fk} is not a finite number")))?;
        }
        let [p_up, p_down, p_side, confidence] = vals;
        for (fk, p) in FIELD_KEYS.iter().zip([p_up, p_down, p_side]) {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(
                    ValidationCode::ProbOutOfRange,
                    format!("{hk}.{fk} = {p} outside [0, 1]"),
                ));
            }
        }
        for (fk, p) in FIELD_KEYS.iter().zip([p_up, p_down, p_side]) {
            if p < policy.p_min {
                return Err(invalid(
                    ValidationCode::ProbBelowMin,
                    format!("{hk}.{fk} = {p} below floor {}", policy.p_min),
                ));
            }
        }
        let sum = p_up + p_down + p_side;
        if (sum - 1.0).abs() > policy.sum_tol {
            return Err(invalid(
                ValidationCode::SumViolation,
                format!("{hk} probabilities sum to {sum}"),
            ));
        }
        let dominant = p_up.max(p_down).max(p_side);
        if dominant < policy.dominant_min || dominant > policy.dominant_max {
            return Err(invalid(
                ValidationCode::DominantOutOfRange,
                format!(
                    "{hk} dominant probability {dominant} outside [{}, {}]",
                    policy.dominant_min, policy.dominant_max
                ),
            ));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(invalid(
                ValidationCode::ConfidenceOutOfRange,
                format!("{hk}.confidence = {confidence} outside [0, 1]"),
            ));
        }
        horizons.push(HorizonPrediction { p_up, p_down, p_side, confidence });
    }

    Ok(PredictionSet {
        t1: horizons[0],
        t5: horizons[1],
        t20: horizons[2],
        raw_text: text.to_string(),
        had_think_block: doc.think_block,
    })
}

/// Fraction denominator companions for the format scorer: which of the 12
/// required leaf fields exist in the document.
pub fn count_present_fields(root: &Value) -> usize {
    let mut present = 0;
    for hk in HORIZON_KEYS {
        if let Some(h) = root.get(hk).and_then(Value::as_object) {
            for fk in FIELD_KEYS {
                if h.contains_key(fk) {
                    present += 1;
                }
            }
        }
    }
    present
}

/// The nine numeric constraints in fixed order: for each horizon (t1, t5,
/// t20), [sum within tolerance, dominant inside band, every probability in
/// [p_min, 1]]. A horizon with missing or non-numeric probabilities fails
/// all three of its checks.
pub fn numeric_checks(root: &Value, policy: &ValidationPolicy) -> [bool; NUMERIC_CHECK_COUNT] {
    let mut out = [false; NUMERIC_CHECK_COUNT];
    for (hi, hk) in HORIZON_KEYS.iter().enumerate() {
        let probs = root.get(*hk).and_then(Value::as_object).and_then(|h| {
            let p = |k: &str| h.get(k).and_then(Value::as_f64).filter(|x| x.is_finite());
            Some([p("up")?, p("down")?, p("side")?])
        });
        if let Some(ps) = probs {
            let sum: f64 = ps.iter().sum();
            let dominant = ps.iter().fold(f64::MIN, |a, b| a.max(*b));
            out[hi * 3] = (sum - 1.0).abs() <= policy.sum_tol;
            out[hi * 3 + 1] = dominant >= policy.dominant_min && dominant <= policy.dominant_max;
            out[hi * 3 + 2] = ps.iter().all(|p| *p >= policy.p_min && *p <= 1.0);
        }
    }
    out
}

/// Argmax direction; exact ties resolve up, then side, then down.
pub fn dominant_direction(h: &HorizonPrediction) -> Direction {
    let mut best = (h.p_up, Direction::Up);
    for (p, d) in [(h.p_side, Direction::Side), (h.p_down, Direction::Down)] {
        if p > best.0 {
            best = (p, d);
        }
    }
    best.1
}

impl HorizonPrediction {
    pub fn to_json(&self) -> Value {
        json!({
            "up": self.p_up,
            "down": self.p_down,
            "side": self.p_side,
            "confidence": self.confidence,
        })
    }
}

impl PredictionSet {
    pub fn to_json(&self) -> Value {
        json!({
            "t1": self.t1.to_json(),
            "t5": self.t5.to_json(),
            "t20": self.t20.to_json(),
        })
    }

    /// Render in the output contract's shape: reasoning tags, newline, JSON.
    pub fn render(&self, think: &str) -> String {
        format!("<think>{think}</think>\n{}", self.to_json())
    }
}

/// Price context handed to the prediction agent alongside the four reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceContext {
    pub fund_code: String,
    pub as_of: NaiveDate,
    /// Trailing closes, oldest first.
    pub recent_closes: Vec<f64>,
    pub chg_5d_pct: f64,
    pub thresholds: HorizonThresholds,
}

/// Deterministic prediction-agent input: the four agent payloads in fixed
/// order (momentum, announcement, event, market) plus the price context.
pub fn assemble_prediction_input(reports: &[AgentReport], ctx: &PriceContext) -> Result<Value> {
    let mut by_kind: [Option<&AgentReport>; 4] = [None; 4];
    for report in reports {
        let slot = AgentKind::ALL
            .iter()
            .position(|k| *k == report.agent)
            .expect("AgentKind::ALL is exhaustive");
        if by_kind[slot].is_some() {
            return Err(Error::InputMismatch(format!(
                "duplicate {} report",
                report.agent.name()
            )));
        }
        if report.fund_code != ctx.fund_code {
            return Err(Error::InputMismatch(format!(
                "{} report is for fund {} but price context is for {}",
                report.agent.name(),
                report.fund_code,
                ctx.fund_code
            )));
        }
        if report.as_of != ctx.as_of {
            return Err(Error::InputMismatch(format!(
                "{} report dated {} but price context dated {}",
                report.agent.name(),
                report.as_of,
                ctx.as_of
            )));
        }
        by_kind[slot] = Some(report);
    }

    let mut agents = serde_json::Map::new();
    for (kind, slot) in AgentKind::ALL.iter().zip(&by_kind) {
        let report = slot.ok_or_else(|| {
            Error::InputMismatch(format!("missing {} report", kind.name()))
        })?;
        agents.insert(kind.name().to_string(), report.payload.clone());
    }

    Ok(json!({
        "schema_version": crate::agent_context::SCHEMA_VERSION,
        "fund_code": ctx.fund_code,
        "as_of": ctx.as_of,
        "agents": Value::Object(agents),
        "price_context": {
            "recent_closes": ctx.recent_closes,
            "chg_5d_pct": ctx.chg_5d_pct,
            "eps1": ctx.thresholds.eps1,
            "eps5": ctx.thresholds.eps5,
            "eps20": ctx.thresholds.eps20,
        },
    }))
}
