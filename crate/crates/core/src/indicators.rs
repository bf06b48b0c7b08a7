//! Daily technical indicator battery for a single fund: moving averages,
//! oscillators, MACD, Bollinger bands, volume structure, support/resistance,
//! and streak statistics, all as of one trading day.
//!
//! Percent-valued fields are in percent units; volatility fields (`vol20`,
//! `atr_simplified`) are plain return fractions. Recursive indicators (EMA,
//! Wilder RSI) run over the whole window handed in, seeded at its first bar,
//! so the same window always reproduces the same snapshot.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::DailyBar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaAlignment {
    Bullish,
    Bearish,
    Chaotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsiState {
    Overbought,
    Oversold,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacdCross {
    Golden,
    Death,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BollPosition {
    BreakUpper,
    BreakLower,
    BiasedUp,
    BiasedDown,
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvLabel {
    PriceUpVolUp,
    PriceUpVolDown,
    PriceDownVolUp,
    PriceDownVolDown,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorConfig {
    pub rsi_overbought: f64,
    pub rsi_oversold: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig { rsi_overbought: 70.0, rsi_oversold: 30.0 }
    }
}

/// Full indicator battery for one fund-date. Serializes to a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSnapshot {
    pub as_of: NaiveDate,
    pub ma5: f64,
    pub ma10: f64,
    pub ma20: f64,
    pub ma60: f64,
    pub ma5_deviation_pct: f64,
    pub ma10_deviation_pct: f64,
    pub ma20_deviation_pct: f64,
    pub ma60_deviation_pct: f64,
    pub ma_alignment: MaAlignment,
    pub chg_1d: f64,
    pub chg_5d: f64,
    pub chg_20d: f64,
    pub chg_60d: f64,
    pub rsi6: f64,
    pub rsi6_state: RsiState,
    pub rsi12: f64,
    pub rsi12_state: RsiState,
    pub rsi24: f64,
    pub rsi24_state: RsiState,
    pub macd_dif: f64,
    pub macd_dea: f64,
    pub macd_hist: f64,
    pub macd_cross: MacdCross,
    pub momentum_10d: f64,
    pub boll_mid: f64,
    pub boll_upper: f64,
    pub boll_lower: f64,
    pub boll_position: BollPosition,
    pub vol20: f64,
    pub atr_simplified: f64,
    pub vol_ma5: f64,
    pub vol_ma10: f64,
    pub vol_ma20: f64,
    pub volume_ratio: f64,
    pub pv_label: PvLabel,
    pub support: f64,
    pub resistance: f64,
    pub consec_streak: i64,
    pub up_days_20: u32,
    pub down_days_20: u32,
    pub avg_amp_20: f64,
    pub max_amp_20: f64,
    pub last5_chg: [f64; 5],
}

/// Bars required per indicator; the error for a short window names the
/// indicators that do not fit.
const REQUIREMENTS: &[(&str, usize)] = &[
    ("ma5", 5),
    ("ma10", 10),
    ("ma20", 20),
    ("ma60", 60),
    ("chg_1d", 2),
    ("chg_5d", 6),
    ("chg_20d", 21),
    ("chg_60d", 61),
    ("rsi6", 7),
    ("rsi12", 13),
    ("rsi24", 25),
    ("macd", 26),
    ("momentum_10d", 11),
    ("bollinger", 20),
    ("vol20", 21),
    ("atr_simplified", 15),
    ("volume_ratio", 6),
    ("support_resistance", 60),
];

pub const MIN_BARS: usize = 61;

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

pub(crate) fn ema(values: &[f64], n: usize) -> Vec<f64> {
    let k = 2.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut prev = values[0];
    out.push(prev);
    for v in &values[1..] {
        prev = v * k + prev * (1.0 - k);
        out.push(prev);
    }
    out
}

/// Wilder-smoothed RSI over the whole window. A flat window (no gains, no
/// losses) reads as neutral 50.
pub(crate) fn rsi(closes: &[f64], n: usize) -> f64 {
    let mut avg_gain = 0.0;
    let mut avg_loss = 0.0;
    for i in 1..=n {
        let diff = closes[i] - closes[i - 1];
        avg_gain += diff.max(0.0);
        avg_loss += (-diff).max(0.0);
    }
    avg_gain /= n as f64;
    avg_loss /= n as f64;
    for i in n + 1..closes.len() {
        let diff = closes[i] - closes[i - 1];
        avg_gain = (avg_gain * (n as f64 - 1.0) + diff.max(0.0)) / n as f64;
        avg_loss = (avg_loss * (n as f64 - 1.0) + (-diff).max(0.0)) / n as f64;
    }
    let denom = avg_gain + avg_loss;
    if denom == 0.0 {
        50.0
    } else {
        100.0 * avg_gain / denom
    }
}

/// Today's volume over the mean of the five prior days (today excluded).
pub fn volume_ratio(volumes: &[f64], date: NaiveDate) -> Result<f64> {
    if volumes.len() < 6 {
        return Err(Error::InsufficientHistory {
            what: "volume_ratio".into(),
            needed: 6,
            available: volumes.len(),
        });
    }
    let n = volumes.len();
    let prior = mean(&volumes[n - 6..n - 1]);
    if prior <= 0.0 {
        return Err(Error::UndefinedVolumeRatio { date });
    }
    Ok(volumes[n - 1] / prior)
}

/// Nearest candidate levels below and above the close. Candidates are the
/// rolling 5/10/20/60-day close extrema, the four MAs, and the band edges;
/// candidates within 0.5% of the nearest one merge into their mean. With no
/// candidate strictly below (above), the 60-day low (high) stands in.
pub fn support_resistance(
    closes: &[f64],
    mas: [f64; 4],
    boll_upper: f64,
    boll_lower: f64,
) -> (f64, f64) {
    let n = closes.len();
    debug_assert!(n >= 60);
    let close = closes[n - 1];
    let mut candidates = Vec::with_capacity(14);
    for w in [5usize, 10, 20, 60] {
        let win = &closes[n - w..];
        let lo = win.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = win.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        candidates.push(lo);
        candidates.push(hi);
    }
    candidates.extend(mas);
    candidates.push(boll_upper);
    candidates.push(boll_lower);

    let win60 = &closes[n - 60..];
    let low60 = win60.iter().copied().fold(f64::INFINITY, f64::min);
    let high60 = win60.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let cluster_mean = |anchor: f64, side: &[f64]| {
        let members: Vec<f64> = side
            .iter()
            .copied()
            .filter(|v| (v - anchor).abs() <= 0.005 * anchor)
            .collect();
        mean(&members)
    };

    let below: Vec<f64> = candidates.iter().copied().filter(|c| *c < close).collect();
    let support = match below.iter().copied().fold(f64::NEG_INFINITY, f64::max) {
        best if best.is_finite() => cluster_mean(best, &below),
        _ => low60,
    };
    let above: Vec<f64> = candidates.iter().copied().filter(|c| *c > close).collect();
    let resistance = match above.iter().copied().fold(f64::INFINITY, f64::min) {
        best if best.is_finite() => cluster_mean(best, &above),
        _ => high60,
    };
    (support, resistance)
}

/// Compute the whole battery as of the final bar of `bars`, which must be
/// dated `as_of`.
pub fn compute_snapshot(
    bars: &[DailyBar],
    as_of: NaiveDate,
    config: &IndicatorConfig,
) -> Result<IndicatorSnapshot> {
    if bars.len() < MIN_BARS {
        let missing: Vec<String> = REQUIREMENTS
            .iter()
            .filter(|(_, need)| *need > bars.len())
            .map(|(name, need)| format!("{name} (needs {need})"))
            .collect();
        return Err(Error::InsufficientHistory {
            what: format!("indicators [{}]", missing.join(", ")),
            needed: MIN_BARS,
            available: bars.len(),
        });
    }
    let last = bars.last().expect("checked non-empty");
    if last.date != as_of {
        return Err(Error::InputMismatch(format!(
            "indicator window ends {} but as_of is {as_of}",
            last.date
        )));
    }

    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let volumes: Vec<f64> = bars.iter().map(|b| b.volume).collect();
    let n = closes.len();
    let close = closes[n - 1];

    let ma_of = |w: usize| mean(&closes[n - w..]);
    let (ma5, ma10, ma20, ma60) = (ma_of(5), ma_of(10), ma_of(20), ma_of(60));
    let dev = |m: f64| (close - m) / m * 100.0;
    let ma_alignment = if ma5 > ma10 && ma10 > ma20 && ma20 > ma60 {
        MaAlignment::Bullish
    } else if ma5 < ma10 && ma10 < ma20 && ma20 < ma60 {
        MaAlignment::Bearish
    } else {
        MaAlignment::Chaotic
    };

    let chg = |k: usize| (close / closes[n - 1 - k] - 1.0) * 100.0;

    let rsi6 = rsi(&closes, 6);
    let rsi12 = rsi(&closes, 12);
    let rsi24 = rsi(&closes, 24);
    let rsi_state = |v: f64| {
        if v > config.rsi_overbought {
            RsiState::Overbought
        } else if v < config.rsi_oversold {
            RsiState::Oversold
        } else {
            RsiState::Normal
        }
    };

    let e12 = ema(&closes, 12);
    let e26 = ema(&closes, 26);
    let dif: Vec<f64> = e12.iter().zip(&e26).map(|(a, b)| a - b).collect();
    let dea = ema(&dif, 9);
    let macd_dif = dif[n - 1];
    let macd_dea = dea[n - 1];
    let macd_cross = if dif[n - 2] <= dea[n - 2] && dif[n - 1] > dea[n - 1] {
        MacdCross::Golden
    } else if dif[n - 2] >= dea[n - 2] && dif[n - 1] < dea[n - 1] {
        MacdCross::Death
    } else {
        MacdCross::None
    };

    let boll_mid = ma20;
    let sd20 = sample_std(&closes[n - 20..]);
    let boll_upper = boll_mid + 2.0 * sd20;
    let boll_lower = boll_mid - 2.0 * sd20;
    let boll_position = if boll_upper == boll_lower {
        BollPosition::Middle
    } else {
        let pct_b = (close - boll_lower) / (boll_upper - boll_lower);
        if pct_b > 1.0 {
            BollPosition::BreakUpper
        } else if pct_b < 0.0 {
            BollPosition::BreakLower
        } else if pct_b >= 0.8 {
            BollPosition::BiasedUp
        } else if pct_b <= 0.2 {
            BollPosition::BiasedDown
        } else {
            BollPosition::Middle
        }
    };

    let rets: Vec<f64> = (1..n).map(|i| closes[i] / closes[i - 1] - 1.0).collect();
    let nr = rets.len();
    let vol20 = sample_std(&rets[nr - 20..]);
    let atr_simplified = mean(&rets[nr - 14..].iter().map(|r| r.abs()).collect::<Vec<_>>());

    let vmean = |w: usize| mean(&volumes[n - w..]);
    let volume_ratio = volume_ratio(&volumes, as_of)?;

    let r_today = rets[nr - 1];
    // Volume counts as expanding only strictly above ratio 1.
    let pv_label = match (r_today, volume_ratio > 1.0) {
        (r, _) if r == 0.0 => PvLabel::Flat,
        (r, true) if r > 0.0 => PvLabel::PriceUpVolUp,
        (r, false) if r > 0.0 => PvLabel::PriceUpVolDown,
        (_, true) => PvLabel::PriceDownVolUp,
        (_, false) => PvLabel::PriceDownVolDown,
    };

    let (support, resistance) =
        support_resistance(&closes, [ma5, ma10, ma20, ma60], boll_upper, boll_lower);

    let mut consec_streak = 0i64;
    if r_today != 0.0 {
        let positive = r_today > 0.0;
        for r in rets.iter().rev() {
            if (*r > 0.0) == positive && *r != 0.0 {
                consec_streak += 1;
            } else {
                break;
            }
        }
        if !positive {
            consec_streak = -consec_streak;
        }
    }

    let last20 = &rets[nr - 20..];
    let up_days_20 = last20.iter().filter(|r| **r > 0.0).count() as u32;
    let down_days_20 = last20.iter().filter(|r| **r < 0.0).count() as u32;
    let avg_amp_20 = mean(&last20.iter().map(|r| r.abs() * 100.0).collect::<Vec<_>>());
    let max_amp_20 = last20
        .iter()
        .map(|r| r.abs() * 100.0)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut last5_chg = [0.0; 5];
    for (slot, r) in last5_chg.iter_mut().zip(&rets[nr - 5..]) {
        *slot = r * 100.0;
    }

    Ok(IndicatorSnapshot {
        as_of,
        ma5,
        ma10,
        ma20,
        ma60,
        ma5_deviation_pct: dev(ma5),
        ma10_deviation_pct: dev(ma10),
        ma20_deviation_pct: dev(ma20),
        ma60_deviation_pct: dev(ma60),
        ma_alignment,
        chg_1d: chg(1),
        chg_5d: chg(5),
        chg_20d: chg(20),
        chg_60d: chg(60),
        rsi6,
        rsi6_state: rsi_state(rsi6),
        rsi12,
        rsi12_state: rsi_state(rsi12),
        rsi24,
        rsi24_state: rsi_state(rsi24),
        macd_dif,
        macd_dea,
        macd_hist: macd_dif - macd_dea,
        macd_cross,
        momentum_10d: (close / closes[n - 11] - 1.0) * 100.0,
        boll_mid,
        boll_upper,
        boll_lower,
        boll_position,
        vol20,
        atr_simplified,
        vol_ma5: vmean(5),
        vol_ma10: vmean(10),
        vol_ma20: vmean(20),
        volume_ratio,
        pv_label,
        support,
        resistance,
        consec_streak,
        up_days_20,
        down_days_20,
        avg_amp_20,
        max_amp_20,
        last5_chg,
    })
}
