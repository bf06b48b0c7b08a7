//! Structured payload builders for the four analytical agents (momentum,
//! announcement, event, market). Payloads are deterministic JSON documents
//! with fixed key order; narrative text is a model concern and stays out of
//! the builders.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::indicators::IndicatorSnapshot;
use crate::macro_state::MarketSnapshot;
use crate::market_data::{daily_returns, Announcement, DailyBar, NewsItem, OperationalReport, ReportKind, Sentiment};
use crate::threshold::{compute_theta, horizon_thresholds, DatedThreshold, ThresholdParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Natural-day lookback for the announcement agent's disclosure window.
pub const ANNOUNCEMENT_WINDOW_DAYS: i64 = 7;
/// Natural-day lookback for high-impact news in the event agent.
pub const NEWS_WINDOW_DAYS: i64 = 14;
/// Natural days ahead within which a scheduled release raises the warning.
pub const QUARTERLY_WARNING_DAYS: i64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Momentum,
    Announcement,
    Event,
    Market,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] =
        [AgentKind::Momentum, AgentKind::Announcement, AgentKind::Event, AgentKind::Market];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Momentum => "momentum",
            AgentKind::Announcement => "announcement",
            AgentKind::Event => "event",
            AgentKind::Market => "market",
        }
    }
}

/// One agent's structured output for one fund-date. `narrative` is filled
/// only when a language model interprets the payload; offline runs leave it
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: AgentKind,
    pub fund_code: String,
    pub as_of: NaiveDate,
    pub payload: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub narrative: Option<String>,
}

/// Post-announcement outcome statistics for one horizon window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactWindowStats {
    /// Announcements with a full forward window of bars.
    pub n: usize,
    /// Fraction with positive cumulative return over the window.
    pub p_up: f64,
    /// Mean cumulative return over the window (fraction).
    pub avg_chg: f64,
    /// Fraction whose |cumulative return| exceeded the horizon threshold
    /// taken at the announcement date.
    pub sig_freq: f64,
}

/// Historical impact profile of one announcement type within one sentiment
/// group. Window stats are absent when no announcement had enough forward
/// bars for that window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnouncementImpactStats {
    pub ann_type: String,
    pub sentiment_group: Sentiment,
    /// Announcements of this type and sentiment considered.
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<ImpactWindowStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d5: Option<ImpactWindowStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d20: Option<ImpactWindowStats>,
}

/// Proximity alert for the next scheduled quarterly disclosure. The release
/// date is a forward-looking expectation, exempt from the payload date audit
/// (serialized under an `expected_`-prefixed key).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuarterlyWarning {
    pub active: bool,
    #[serde(rename = "expected_next_release", skip_serializing_if = "Option::is_none")]
    pub next_release: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days_until: Option<i64>,
}

/// Short price summary handed to the announcement agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecentTrend {
    pub chg_5d_pct: f64,
    pub chg_20d_pct: f64,
    /// Fraction of the last 20 days whose move stayed inside the dynamic
    /// threshold.
    pub sideways_fraction_20d: f64,
}

/// Momentum agent payload: the indicator battery grouped into the sections
/// the prediction prompt consumes, plus the dynamic threshold and which of
/// the last five days broke it.
pub fn build_momentum_context(
    fund_code: &str,
    snapshot: &IndicatorSnapshot,
    theta_history: &[DatedThreshold],
    breach_last5: &[bool; 5],
) -> Result<AgentReport> {
    let last = theta_history.last().ok_or_else(|| {
        Error::InputMismatch("momentum context requires a non-empty threshold history".into())
    })?;
    if last.date != snapshot.as_of {
        return Err(Error::InputMismatch(format!(
            "threshold history ends {} but indicator snapshot is as of {}",
            last.date, snapshot.as_of
        )));
    }
    let theta_5d: Vec<f64> = theta_history
        .iter()
        .rev()
        .take(5)
        .map(|d| d.value.theta)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();

    let payload = json!({
        "schema_version": SCHEMA_VERSION,
        "agent": AgentKind::Momentum,
        "fund_code": fund_code,
        "as_of": snapshot.as_of,
        "trend": {
            "ma5": snapshot.ma5,
            "ma10": snapshot.ma10,
            "ma20": snapshot.ma20,
            "ma60": snapshot.ma60,
            "ma5_deviation_pct": snapshot.ma5_deviation_pct,
            "ma10_deviation_pct": snapshot.ma10_deviation_pct,
            "ma20_deviation_pct": snapshot.ma20_deviation_pct,
            "ma60_deviation_pct": snapshot.ma60_deviation_pct,
            "ma_alignment": snapshot.ma_alignment,
            "chg_1d_pct": snapshot.chg_1d,
            "chg_5d_pct": snapshot.chg_5d,
            "chg_20d_pct": snapshot.chg_20d,
            "chg_60d_pct": snapshot.chg_60d,
            "consec_streak": snapshot.consec_streak,
            "up_days_20": snapshot.up_days_20,
            "down_days_20": snapshot.down_days_20,
            "last5_chg_pct": snapshot.last5_chg,
        },
        "momentum": {
            "rsi6": snapshot.rsi6,
            "rsi6_state": snapshot.rsi6_state,
            "rsi12": snapshot.rsi12,
            "rsi12_state": snapshot.rsi12_state,
            "rsi24": snapshot.rsi24,
            "rsi24_state": snapshot.rsi24_state,
            "macd_dif": snapshot.macd_dif,
            "macd_dea": snapshot.macd_dea,
            "macd_hist": snapshot.macd_hist,
            "macd_cross": snapshot.macd_cross,
            "momentum_10d_pct": snapshot.momentum_10d,
        },
        "bollinger": {
            "mid": snapshot.boll_mid,
            "upper": snapshot.boll_upper,
            "lower": snapshot.boll_lower,
            "position": snapshot.boll_position,
        },
        "price_volume": {
            "vol_ma5": snapshot.vol_ma5,
            "vol_ma10": snapshot.vol_ma10,
            "vol_ma20": snapshot.vol_ma20,
            "volume_ratio": snapshot.volume_ratio,
            "pv_label": snapshot.pv_label,
            "avg_amp_20_pct": snapshot.avg_amp_20,
            "max_amp_20_pct": snapshot.max_amp_20,
        },
        "volatility": {
            "vol20": snapshot.vol20,
            "atr_simplified": snapshot.atr_simplified,
        },
        "support_resistance": {
            "support": snapshot.support,
            "resistance": snapshot.resistance,
        },
        "threshold": {
            "theta": last.value.theta,
            "sigma": last.value.sigma,
            "multiplier": last.value.multiplier,
            "clamped": last.value.clamped,
            "theta_last5": theta_5d,
            "breach_last5": breach_last5,
        },
    });
    Ok(AgentReport {
        agent: AgentKind::Momentum,
        fund_code: fund_code.to_string(),
        as_of: snapshot.as_of,
        payload,
        narrative: None,
    })
}

/// Cumulative-return statistics over 1/5/20 trading days following each
/// historical announcement of one type, grouped by sentiment. Only
/// announcements published strictly before `as_of` count, and a window only
/// counts when all its forward bars are dated at or before `as_of`.
pub fn announcement_impact_stats(
    history: &[Announcement],
    bars: &[DailyBar],
    ann_type: &str,
    as_of: NaiveDate,
    params: &ThresholdParams,
) -> Result<Vec<AnnouncementImpactStats>> {
    const WINDOWS: [usize; 3] = [1, 5, 20];
    let returns: Vec<f64> = daily_returns(bars).iter().map(|r| r.value).collect();
    let min_returns = params.min_returns();

    // outcomes[group][window] = (cum_return, significant) pairs
    let mut outcomes: [[Vec<(f64, bool)>; 3]; 3] = Default::default();
    let mut group_n = [0usize; 3];

    for ann in history {
        if ann.ann_type != ann_type || ann.published >= as_of {
            continue;
        }
        let gi = match ann.sentiment {
            Sentiment::Positive => 0,
            Sentiment::Neutral => 1,
            Sentiment::Negative => 2,
        };
        group_n[gi] += 1;

        // Anchor at the last bar on or before the publication date.
        let anchor = bars.partition_point(|b| b.date <= ann.published);
        if anchor == 0 {
            continue;
        }
        let i0 = anchor - 1;
        // Returns up to and including the anchor day feed the announcement-date
        // threshold; skip announcements too early in the series to have one.
        if i0 < min_returns {
            continue;
        }
        // A degenerate window (all-zero returns) has no significance scale;
        // skip it like any other announcement without a computable threshold.
        let eps = match compute_theta(params, &returns[..i0])
            .and_then(|t| horizon_thresholds(t.theta))
        {
            Ok(e) => e,
            Err(_) => continue,
        };
        let eps_k = [eps.eps1, eps.eps5, eps.eps20];

        for (wi, k) in WINDOWS.iter().enumerate() {
            let end = i0 + k;
            if end >= bars.len() || bars[end].date > as_of {
                continue;
            }
            let cum = bars[end].close / bars[i0].close - 1.0;
            outcomes[gi][wi].push((cum, cum.abs() > eps_k[wi]));
        }
    }

    let groups = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];
    Ok(groups
        .iter()
        .enumerate()
        .map(|(gi, sentiment)| {
            let window = |wi: usize| -> Option<ImpactWindowStats> {
                let xs = &outcomes[gi][wi];
                if xs.is_empty() {
                    return None;
                }
                let n = xs.len();
                Some(ImpactWindowStats {
                    n,
                    p_up: xs.iter().filter(|(c, _)| *c > 0.0).count() as f64 / n as f64,
                    avg_chg: xs.iter().map(|(c, _)| c).sum::<f64>() / n as f64,
                    sig_freq: xs.iter().filter(|(_, s)| *s).count() as f64 / n as f64,
                })
            };
            AnnouncementImpactStats {
                ann_type: ann_type.to_string(),
                sentiment_group: *sentiment,
                n: group_n[gi],
                d1: window(0),
                d5: window(1),
                d20: window(2),
            }
        })
        .collect())
}

/// Announcement agent payload: disclosures from the trailing 7-natural-day
/// half-open window `[as_of - 7, as_of)`, historical impact statistics for
/// the key types, and the recent price trend.
pub fn build_announcement_context(
    fund_code: &str,
    announcements: &[Announcement],
    impact_stats: &[AnnouncementImpactStats],
    recent_trend: &RecentTrend,
    as_of: NaiveDate,
) -> AgentReport {
    let window_start = as_of - chrono::Duration::days(ANNOUNCEMENT_WINDOW_DAYS);
    let recent: Vec<&Announcement> = announcements
        .iter()
        .filter(|a| a.fund_code == fund_code && a.published >= window_start && a.published < as_of)
        .collect();

    let recent_json: Vec<Value> = recent
        .iter()
        .map(|a| {
            json!({
                "published": a.published,
                "ann_type": a.ann_type,
                "summary": a.summary,
                "sentiment": a.sentiment,
            })
        })
        .collect();

    let mut payload = json!({
        "schema_version": SCHEMA_VERSION,
        "agent": AgentKind::Announcement,
        "fund_code": fund_code,
        "as_of": as_of,
        "window_days": ANNOUNCEMENT_WINDOW_DAYS,
        "recent_announcements": recent_json,
        "historical_impact": impact_stats,
        "recent_trend": recent_trend,
    });
    if recent.is_empty() {
        payload["note"] = Value::String("no recent disclosures".into());
    }
    AgentReport {
        agent: AgentKind::Announcement,
        fund_code: fund_code.to_string(),
        as_of,
        payload,
        narrative: None,
    }
}

/// Next scheduled release on or after `as_of`, active when it falls within
/// `warning_days` natural days.
pub fn quarterly_warning(
    as_of: NaiveDate,
    release_dates: &[NaiveDate],
    warning_days: i64,
) -> QuarterlyWarning {
    let next = release_dates.iter().filter(|d| **d >= as_of).min().copied();
    match next {
        Some(date) => {
            let days_until = (date - as_of).num_days();
            QuarterlyWarning {
                active: days_until <= warning_days,
                next_release: Some(date),
                days_until: Some(days_until),
            }
        }
        None => QuarterlyWarning { active: false, next_release: None, days_until: None },
    }
}

/// Event agent payload: high-impact news inside the trailing window with
/// recency weights `1 / (1 + age_days)`, the latest quarterly report plus
/// any later operational updates, and the quarterly-release warning.
pub fn build_event_context(
    fund_code: &str,
    news: &[NewsItem],
    reports: &[OperationalReport],
    warning: &QuarterlyWarning,
    as_of: NaiveDate,
    window_days: i64,
) -> AgentReport {
    let mut weighted: Vec<Value> = Vec::new();
    for item in news {
        if item.impact != crate::market_data::Impact::High {
            continue;
        }
        let age = (as_of - item.date).num_days();
        if !(0..window_days).contains(&age) {
            continue;
        }
        weighted.push(json!({
            "date": item.date,
            "age_days": age,
            "weight": 1.0 / (1.0 + age as f64),
            "summary": item.summary,
            "sentiment": item.sentiment,
        }));
    }
    // Newest first; ties broken by input order.
    weighted.sort_by_key(|v| v["age_days"].as_i64());

    let fund_reports: Vec<&OperationalReport> = reports
        .iter()
        .filter(|r| r.fund_code == fund_code && r.period_end <= as_of)
        .collect();
    let latest_quarterly = fund_reports
        .iter()
        .filter(|r| r.kind == ReportKind::QuarterlyReport)
        .max_by_key(|r| r.period_end);
    let report_json = |r: &OperationalReport| {
        json!({
            "period_end": r.period_end,
            "kind": r.kind,
            "summary": r.summary,
            "sentiment": r.sentiment,
            "reasoning": r.reasoning,
        })
    };
    let operational_updates: Vec<Value> = match latest_quarterly {
        Some(q) => fund_reports
            .iter()
            .filter(|r| r.kind == ReportKind::OperationalData && r.period_end >= q.period_end)
            .map(|r| report_json(r))
            .collect(),
        None => fund_reports
            .iter()
            .filter(|r| r.kind == ReportKind::OperationalData)
            .map(|r| report_json(r))
            .collect(),
    };

    let mut payload = json!({
        "schema_version": SCHEMA_VERSION,
        "agent": AgentKind::Event,
        "fund_code": fund_code,
        "as_of": as_of,
        "news_window_days": window_days,
        "high_impact_news": weighted,
        "latest_quarterly": latest_quarterly.map(|r| report_json(r)),
        "operational_updates": operational_updates,
        "quarterly_warning": warning,
    });
    if latest_quarterly.is_none() {
        payload["note"] = Value::String("no quarterly report on file".into());
    }
    AgentReport {
        agent: AgentKind::Event,
        fund_code: fund_code.to_string(),
        as_of,
        payload,
        narrative: None,
    }
}

/// Market agent payload: the whole-market snapshot's three layers plus the
/// regime read, shared by every fund on the date.
pub fn build_market_context(fund_code: &str, snapshot: &MarketSnapshot) -> AgentReport {
    let layers = snapshot.to_json();
    let payload = json!({
        "schema_version": SCHEMA_VERSION,
        "agent": AgentKind::Market,
        "fund_code": fund_code,
        "as_of": snapshot.as_of,
        "raw": layers["raw"],
        "interpretation": layers["interpretation"],
        "state": layers["state"],
    });
    AgentReport {
        agent: AgentKind::Market,
        fund_code: fund_code.to_string(),
        as_of: snapshot.as_of,
        payload,
        narrative: None,
    }
}

/// Walk a payload and list every date-valued string later than `as_of`,
/// excluding keys prefixed `expected_` (forward-looking schedule entries).
/// Returns violation paths; empty means the payload is clean.
pub fn audit_payload_dates(payload: &Value, as_of: NaiveDate) -> Vec<String> {
    let mut violations = Vec::new();
    walk_dates(payload, as_of, "$", &mut violations);
    violations
}

fn walk_dates(value: &Value, as_of: NaiveDate, path: &str, out: &mut Vec<String>) {
    match value {
        Value::String(s) => {
            if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
                if date > as_of {
                    out.push(format!("{path} = {date}"));
                }
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                walk_dates(item, as_of, &format!("{path}[{i}]"), out);
            }
        }
        Value::Object(map) => {
            for (k, v) in map {
                if k.starts_with("expected_") {
                    continue;
                }
                walk_dates(v, as_of, &format!("{path}.{k}"), out);
            }
        }
        _ => {}
    }
}
