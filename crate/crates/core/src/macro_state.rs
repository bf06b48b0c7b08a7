//! Macro regime classification: rate trend bands, equity state bands, the
//! four-quadrant map, and the whole-market snapshot with its three-layer
//! JSON rendering (raw numbers / interpretation labels / regime state).

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::indicators::{self, PvLabel};
use crate::market_data::{DailyBar, HasDate, IndexBar, YieldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateTrendKind {
    ClearlyDown,
    SlowlyDown,
    Sideways,
    SlowlyUp,
    ClearlyUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTrend {
    pub kind: RateTrendKind,
    pub bp_chg_20d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquityStateKind {
    Bull,
    OscillationStrong,
    Oscillation,
    OscillationWeak,
    Bear,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityState {
    pub kind: EquityStateKind,
    pub chg_20d_pct: f64,
    pub rsi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadrantKind {
    Q1,
    Q2,
    Q3,
    Q4,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroQuadrant {
    pub kind: QuadrantKind,
    pub rationale: String,
}

/// 20-day basis-point change bands. Band edges: -20 counts as slowly_down,
/// +-5 as sideways, +20 as slowly_up.
pub fn classify_rate_trend(bp_chg_20d: f64) -> RateTrend {
    let kind = if bp_chg_20d < -20.0 {
        RateTrendKind::ClearlyDown
    } else if bp_chg_20d < -5.0 {
        RateTrendKind::SlowlyDown
    } else if bp_chg_20d <= 5.0 {
        RateTrendKind::Sideways
    } else if bp_chg_20d <= 20.0 {
        RateTrendKind::SlowlyUp
    } else {
        RateTrendKind::ClearlyUp
    };
    RateTrend { kind, bp_chg_20d }
}

/// Joint 20-day-change / RSI bands, evaluated in the order bull, bear,
/// oscillation_strong, oscillation_weak, oscillation; anything that matches
/// none of them is indeterminate.
pub fn classify_equity_state(chg_20d_pct: f64, rsi: f64) -> Result<EquityState> {
    if !(0.0..=100.0).contains(&rsi) || !rsi.is_finite() || !chg_20d_pct.is_finite() {
        return Err(Error::InvalidParams(format!(
            "equity state inputs out of range: chg {chg_20d_pct}, rsi {rsi}"
        )));
    }
    let kind = if chg_20d_pct > 5.0 && rsi > 60.0 {
        EquityStateKind::Bull
    } else if chg_20d_pct < -5.0 && rsi < 40.0 {
        EquityStateKind::Bear
    } else if (0.0..=5.0).contains(&chg_20d_pct) && (50.0..=60.0).contains(&rsi) {
        EquityStateKind::OscillationStrong
    } else if (-5.0..=0.0).contains(&chg_20d_pct) && (40.0..=50.0).contains(&rsi) {
        EquityStateKind::OscillationWeak
    } else if (-2.0..=2.0).contains(&chg_20d_pct) && (40.0..=60.0).contains(&rsi) {
        EquityStateKind::Oscillation
    } else {
        EquityStateKind::Indeterminate
    };
    Ok(EquityState { kind, chg_20d_pct, rsi })
}

/// Four-quadrant map over (rate trend, equity state). Sideways rates, an
/// indeterminate equity read, or rising rates with plain oscillation land in
/// the transition zone.
pub fn quadrant(rate: RateTrendKind, equity: EquityStateKind) -> MacroQuadrant {
    use EquityStateKind as E;
    use QuadrantKind as Q;
    use RateTrendKind as R;

    let kind = match (rate, equity) {
        (_, E::Indeterminate) | (R::Sideways, _) => Q::Transition,
        (R::ClearlyDown | R::SlowlyDown, E::Bull | E::OscillationStrong) => Q::Q1,
        (R::SlowlyUp | R::ClearlyUp, E::Bull | E::OscillationStrong) => Q::Q2,
        (R::ClearlyDown | R::SlowlyDown, _) => Q::Q3,
        (R::SlowlyUp | R::ClearlyUp, E::Oscillation) => Q::Transition,
        (R::SlowlyUp | R::ClearlyUp, E::OscillationWeak | E::Bear) => Q::Q4,
    };
    let rationale = match kind {
        Q::Q1 => "rates falling while equities hold up: cautiously optimistic, valuation tailwind with some rotation risk",
        Q::Q2 => "rates rising while equities hold up: double squeeze, opportunity cost works against yield assets",
        Q::Q3 => "rates falling while equities oscillate or weaken: allocation window for defensive yield assets",
        Q::Q4 => "rates rising while equities weaken: defensive stance, limited upside",
        Q::Transition => "transition zone: macro signals mixed, no clear quadrant",
    };
    MacroQuadrant { kind, rationale: rationale.to_string() }
}

/// Cutoffs for the interpretation labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRules {
    pub high_quantile: f64,
    pub low_quantile: f64,
    pub momentum_strong: f64,
    pub momentum_weak: f64,
    pub turnover_sluggish_quantile: f64,
    pub seesaw_pp: f64,
}

impl Default for LabelRules {
    fn default() -> Self {
        LabelRules {
            high_quantile: 0.8,
            low_quantile: 0.2,
            momentum_strong: 0.6,
            momentum_weak: 0.4,
            turnover_sluggish_quantile: 0.3,
            seesaw_pp: 1.0,
        }
    }
}

/// Whole-market state as of one date: REITs index structure, rates, the
/// equity and dividend benchmarks, and market-wide activity.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub as_of: NaiveDate,
    pub reits_close: f64,
    pub reits_chg_5d: f64,
    pub reits_chg_20d: f64,
    pub reits_chg_60d: f64,
    pub reits_price_quantile_1y: f64,
    pub reits_rsi14: f64,
    pub reits_macd_state: MacdState,
    pub reits_vol20: f64,
    pub vol_quantile_1y: f64,
    pub up_day_ratio_20d: f64,
    pub rate_level_pct: f64,
    pub rate_bp_chg_20d: f64,
    pub rate_quantile_1y: f64,
    pub rate_ma_dev_pct: f64,
    pub rate_reits_corr_60d: f64,
    pub sse_chg_20d: f64,
    pub sse_rsi14: f64,
    pub div_chg_20d: f64,
    pub div_rsi14: f64,
    pub rel_strength_reits_vs_div_20d: f64,
    pub market_volume: f64,
    pub market_turnover_rate: f64,
    pub turnover_quantile_1y: f64,
    pub market_pv_label: PvLabel,
    pub labels: Vec<String>,
    pub rate_trend: RateTrend,
    pub equity_state: EquityState,
    pub quadrant: MacroQuadrant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacdState {
    Golden,
    Death,
    AboveSignal,
    BelowSignal,
}

/// Quantile rank of the last element within the window, in [0, 1]:
/// `(count(v <= x) - 1) / (n - 1)`. The window maximum ranks 1, minimum 0.
fn quantile_rank(window: &[f64], x: f64) -> f64 {
    let count = window.iter().filter(|v| **v <= x).count();
    (count as f64 - 1.0) / (window.len() as f64 - 1.0)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        // A flat series carries no co-movement information.
        0.0
    } else {
        cov / (vx.sqrt() * vy.sqrt())
    }
}

fn tail<'a, T: HasDate>(series: &'a [T], as_of: NaiveDate, n: usize, name: &str) -> Result<&'a [T]> {
    let end = series.partition_point(|x| x.date() <= as_of);
    if end < n {
        return Err(Error::InsufficientHistory {
            what: name.to_string(),
            needed: n,
            available: end,
        });
    }
    Ok(&series[end - n..end])
}

const YEAR_WINDOW: usize = 250;
const CORR_WINDOW: usize = 60;

/// Build the market snapshot as of a date. Each input series needs a year of
/// history (250 observations) at or before `as_of`.
pub fn build_market_snapshot(
    reits: &[IndexBar],
    sse: &[IndexBar],
    dividend: &[IndexBar],
    yields: &[YieldPoint],
    market_activity: &[DailyBar],
    as_of: NaiveDate,
    rules: &LabelRules,
) -> Result<MarketSnapshot> {
    let reits_w = tail(reits, as_of, YEAR_WINDOW, "reits index")?;
    let sse_w = tail(sse, as_of, YEAR_WINDOW, "sse index")?;
    let div_w = tail(dividend, as_of, YEAR_WINDOW, "dividend index")?;
    let yield_w = tail(yields, as_of, YEAR_WINDOW, "yield series")?;
    let act_w = tail(market_activity, as_of, YEAR_WINDOW, "market activity")?;

    let closes: Vec<f64> = reits_w.iter().map(|b| b.close).collect();
    let n = closes.len();
    let close = closes[n - 1];
    let chg = |xs: &[f64], k: usize| (xs[xs.len() - 1] / xs[xs.len() - 1 - k] - 1.0) * 100.0;

    let rets: Vec<f64> = (1..n).map(|i| closes[i] / closes[i - 1] - 1.0).collect();
    let vol20_series: Vec<f64> = (20..=rets.len())
        .map(|end| indicators::sample_std(&rets[end - 20..end]))
        .collect();
    let reits_vol20 = *vol20_series.last().expect("window is a year long");

    let e12 = indicators::ema(&closes, 12);
    let e26 = indicators::ema(&closes, 26);
    let dif: Vec<f64> = e12.iter().zip(&e26).map(|(a, b)| a - b).collect();
    let dea = indicators::ema(&dif, 9);
    let reits_macd_state = if dif[n - 2] <= dea[n - 2] && dif[n - 1] > dea[n - 1] {
        MacdState::Golden
    } else if dif[n - 2] >= dea[n - 2] && dif[n - 1] < dea[n - 1] {
        MacdState::Death
    } else if dif[n - 1] >= dea[n - 1] {
        MacdState::AboveSignal
    } else {
        MacdState::BelowSignal
    };

    let last20 = &rets[rets.len() - 20..];
    let up_day_ratio_20d = last20.iter().filter(|r| **r > 0.0).count() as f64 / 20.0;

    let yv: Vec<f64> = yield_w.iter().map(|y| y.yield_pct).collect();
    let rate_level_pct = yv[yv.len() - 1];
    let rate_bp_chg_20d = (rate_level_pct - yv[yv.len() - 21]) * 100.0;
    let rate_ma20 = indicators::mean(&yv[yv.len() - 20..]);
    let rate_ma_dev_pct = (rate_level_pct - rate_ma20) / rate_ma20 * 100.0;

    // Correlation of daily changes over the last 60 common dates:
    // yield change in bp against REITs return in percent.
    let mut common: Vec<(f64, f64)> = Vec::new();
    {
        let ye = yields.partition_point(|y| y.date() <= as_of);
        let re = reits.partition_point(|b| b.date() <= as_of);
        let (mut i, mut j) = (0usize, 0usize);
        let (ys, rs) = (&yields[..ye], &reits[..re]);
        while i < ys.len() && j < rs.len() {
            match ys[i].date.cmp(&rs[j].date) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    common.push((ys[i].yield_pct, rs[j].close));
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    if common.len() < CORR_WINDOW + 1 {
        return Err(Error::InsufficientHistory {
            what: "yield/REITs overlap for correlation".into(),
            needed: CORR_WINDOW + 1,
            available: common.len(),
        });
    }
    let tail_common = &common[common.len() - (CORR_WINDOW + 1)..];
    let dy: Vec<f64> = (1..tail_common.len())
        .map(|i| (tail_common[i].0 - tail_common[i - 1].0) * 100.0)
        .collect();
    let dr: Vec<f64> = (1..tail_common.len())
        .map(|i| (tail_common[i].1 / tail_common[i - 1].1 - 1.0) * 100.0)
        .collect();
    let rate_reits_corr_60d = pearson(&dy, &dr);

    let sse_closes: Vec<f64> = sse_w.iter().map(|b| b.close).collect();
    let div_closes: Vec<f64> = div_w.iter().map(|b| b.close).collect();
    let reits_chg_20d = chg(&closes, 20);
    let div_chg_20d = chg(&div_closes, 20);

    let turnovers: Vec<f64> = act_w.iter().map(|b| b.turnover_rate).collect();
    let volumes: Vec<f64> = act_w.iter().map(|b| b.volume).collect();
    let market_turnover_rate = turnovers[turnovers.len() - 1];
    let turnover_quantile_1y = quantile_rank(&turnovers, market_turnover_rate);
    let market_volume = volumes[volumes.len() - 1];
    let vol_ratio = indicators::volume_ratio(&volumes, as_of)?;
    let r_today = *rets.last().expect("non-empty");
    let market_pv_label = match (r_today, vol_ratio > 1.0) {
        (r, _) if r == 0.0 => PvLabel::Flat,
        (r, true) if r > 0.0 => PvLabel::PriceUpVolUp,
        (r, false) if r > 0.0 => PvLabel::PriceUpVolDown,
        (_, true) => PvLabel::PriceDownVolUp,
        (_, false) => PvLabel::PriceDownVolDown,
    };

    let reits_price_quantile_1y = quantile_rank(&closes, close);
    let vol_quantile_1y = quantile_rank(&vol20_series, reits_vol20);
    let rate_quantile_1y = quantile_rank(&yv, rate_level_pct);

    let sse_rsi14 = indicators::rsi(&sse_closes, 14);
    let sse_chg_20d = chg(&sse_closes, 20);
    let rel_strength_reits_vs_div_20d = reits_chg_20d - div_chg_20d;

    let mut labels = Vec::new();
    let mut quantile_label = |q: f64, name: &str| {
        if q >= rules.high_quantile {
            labels.push(format!("{name} relatively high"));
        } else if q <= rules.low_quantile {
            labels.push(format!("{name} relatively low"));
        }
    };
    quantile_label(reits_price_quantile_1y, "valuation");
    quantile_label(rate_quantile_1y, "interest rate");
    quantile_label(vol_quantile_1y, "volatility");
    if up_day_ratio_20d >= rules.momentum_strong {
        labels.push("momentum relatively strong".into());
    } else if up_day_ratio_20d <= rules.momentum_weak {
        labels.push("momentum relatively weak".into());
    }
    if turnover_quantile_1y < rules.turnover_sluggish_quantile {
        labels.push("turnover rate sluggish".into());
    }
    if rel_strength_reits_vs_div_20d <= -rules.seesaw_pp {
        labels.push("dividend strong, capital rotating away from REITs".into());
    } else if rel_strength_reits_vs_div_20d >= rules.seesaw_pp {
        labels.push("REITs strong versus dividend assets".into());
    }

    let rate_trend = classify_rate_trend(rate_bp_chg_20d);
    let equity_state = classify_equity_state(sse_chg_20d, sse_rsi14)?;
    let quadrant = quadrant(rate_trend.kind, equity_state.kind);

    Ok(MarketSnapshot {
        as_of,
        reits_close: close,
        reits_chg_5d: chg(&closes, 5),
        reits_chg_20d,
        reits_chg_60d: chg(&closes, 60),
        reits_price_quantile_1y,
        reits_rsi14: indicators::rsi(&closes, 14),
        reits_macd_state,
        reits_vol20,
        vol_quantile_1y,
        up_day_ratio_20d,
        rate_level_pct,
        rate_bp_chg_20d,
        rate_quantile_1y,
        rate_ma_dev_pct,
        rate_reits_corr_60d,
        sse_chg_20d,
        sse_rsi14,
        div_chg_20d,
        div_rsi14: indicators::rsi(&div_closes, 14),
        rel_strength_reits_vs_div_20d,
        market_volume,
        market_turnover_rate,
        turnover_quantile_1y,
        market_pv_label,
        labels,
        rate_trend,
        equity_state,
        quadrant,
    })
}

impl MarketSnapshot {
    /// Three-layer JSON: raw numeric readings, interpretation labels, and
    /// the regime state with its rationale.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "raw": {
                "as_of": self.as_of,
                "reits_close": self.reits_close,
                "reits_chg_5d": self.reits_chg_5d,
                "reits_chg_20d": self.reits_chg_20d,
                "reits_chg_60d": self.reits_chg_60d,
                "reits_price_quantile_1y": self.reits_price_quantile_1y,
                "reits_rsi14": self.reits_rsi14,
                "reits_macd_state": self.reits_macd_state,
                "reits_vol20": self.reits_vol20,
                "vol_quantile_1y": self.vol_quantile_1y,
                "up_day_ratio_20d": self.up_day_ratio_20d,
                "rate_level_pct": self.rate_level_pct,
                "rate_bp_chg_20d": self.rate_bp_chg_20d,
                "rate_quantile_1y": self.rate_quantile_1y,
                "rate_ma_dev_pct": self.rate_ma_dev_pct,
                "rate_reits_corr_60d": self.rate_reits_corr_60d,
                "sse_chg_20d": self.sse_chg_20d,
                "sse_rsi14": self.sse_rsi14,
                "div_chg_20d": self.div_chg_20d,
                "div_rsi14": self.div_rsi14,
                "rel_strength_reits_vs_div_20d": self.rel_strength_reits_vs_div_20d,
                "market_volume": self.market_volume,
                "market_turnover_rate": self.market_turnover_rate,
                "turnover_quantile_1y": self.turnover_quantile_1y,
                "market_pv_label": self.market_pv_label,
            },
            "interpretation": {
                "labels": self.labels,
            },
            "state": {
                "rate_trend": self.rate_trend.kind,
                "rate_bp_chg_20d": self.rate_trend.bp_chg_20d,
                "equity_state": self.equity_state.kind,
                "equity_chg_20d_pct": self.equity_state.chg_20d_pct,
                "equity_rsi": self.equity_state.rsi,
                "quadrant": self.quadrant.kind,
                "rationale": self.quadrant.rationale,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_bands_pin_boundaries() {
        assert_eq!(classify_rate_trend(-30.0).kind, RateTrendKind::ClearlyDown);
        assert_eq!(classify_rate_trend(-20.0).kind, RateTrendKind::SlowlyDown);
        assert_eq!(classify_rate_trend(-12.0).kind, RateTrendKind::SlowlyDown);
        assert_eq!(classify_rate_trend(-5.0).kind, RateTrendKind::Sideways);
        assert_eq!(classify_rate_trend(0.0).kind, RateTrendKind::Sideways);
        assert_eq!(classify_rate_trend(5.0).kind, RateTrendKind::Sideways);
        assert_eq!(classify_rate_trend(12.0).kind, RateTrendKind::SlowlyUp);
        assert_eq!(classify_rate_trend(20.0).kind, RateTrendKind::SlowlyUp);
        assert_eq!(classify_rate_trend(20.5).kind, RateTrendKind::ClearlyUp);
    }

    #[test]
    fn equity_precedence_resolves_overlaps() {
        // (1.0, 55) satisfies both oscillation_strong and oscillation; the
        // earlier rule wins.
        assert_eq!(
            classify_equity_state(1.0, 55.0).unwrap().kind,
            EquityStateKind::OscillationStrong
        );
        assert_eq!(
            classify_equity_state(-1.0, 45.0).unwrap().kind,
            EquityStateKind::OscillationWeak
        );
        assert_eq!(
            classify_equity_state(1.5, 42.0).unwrap().kind,
            EquityStateKind::Oscillation
        );
        assert_eq!(classify_equity_state(6.0, 61.0).unwrap().kind, EquityStateKind::Bull);
        assert_eq!(classify_equity_state(-6.0, 39.0).unwrap().kind, EquityStateKind::Bear);
        assert_eq!(
            classify_equity_state(10.0, 30.0).unwrap().kind,
            EquityStateKind::Indeterminate
        );
        assert!(classify_equity_state(0.0, 101.0).is_err());
        assert!(classify_equity_state(0.0, -1.0).is_err());
    }

    #[test]
    fn quadrant_pins_paper_cells() {
        assert_eq!(
            quadrant(RateTrendKind::ClearlyDown, EquityStateKind::Bull).kind,
            QuadrantKind::Q1
        );
        assert_eq!(
            quadrant(RateTrendKind::SlowlyDown, EquityStateKind::Oscillation).kind,
            QuadrantKind::Q3
        );
        assert_eq!(
            quadrant(RateTrendKind::Sideways, EquityStateKind::Bull).kind,
            QuadrantKind::Transition
        );
        assert_eq!(
            quadrant(RateTrendKind::SlowlyUp, EquityStateKind::Oscillation).kind,
            QuadrantKind::Transition
        );
        assert_eq!(
            quadrant(RateTrendKind::ClearlyUp, EquityStateKind::Bear).kind,
            QuadrantKind::Q4
        );
        assert_eq!(
            quadrant(RateTrendKind::SlowlyUp, EquityStateKind::OscillationStrong).kind,
            QuadrantKind::Q2
        );
        let q3 = quadrant(RateTrendKind::SlowlyDown, EquityStateKind::Bear);
        assert!(q3.rationale.contains("allocation window"));
    }

    #[test]
    fn quantile_rank_hits_extremes() {
        let xs: Vec<f64> = (1..=250).map(|i| i as f64).collect();
        assert_eq!(quantile_rank(&xs, 250.0), 1.0);
        assert_eq!(quantile_rank(&xs, 1.0), 0.0);
        let mid = quantile_rank(&xs, 125.0);
        assert!((mid - 124.0 / 249.0).abs() < 1e-12);
        // Ties at the maximum still rank 1.0.
        let tied = [1.0, 2.0, 3.0, 3.0];
        assert_eq!(quantile_rank(&tied, 3.0), 1.0);
    }

    #[test]
    fn pearson_degenerate_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&xs, &ys) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
        assert!((pearson(&xs, &neg) + 1.0).abs() < 1e-12);
    }
}
