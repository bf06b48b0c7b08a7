//! Dynamic volatility threshold, horizon scaling, and direction labeling.
//!
//! The day-t threshold is recent return volatility scaled by an adaptive
//! multiplier and clamped into an empirical quantile band of absolute
//! returns, so one-off volatility spikes cannot drag it to extremes:
//!
//! ```text
//! theta_t = max(q_lo, min(sigma_t * m_t, q_hi))
//! ```
//!
//! Horizon thresholds follow square-root-of-time scaling; direction labels
//! compare cumulative forward returns against them.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{daily_returns, DailyBar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdParams {
    /// Volatility estimation window, in trading days.
    pub n_v: usize,
    /// Short window of the regime ratio.
    pub n_short: usize,
    /// Long window of the regime ratio.
    pub n_long: usize,
    /// Quantile clamp window over absolute returns.
    pub n_b: usize,
    pub q_lo_pct: f64,
    pub q_hi_pct: f64,
    /// Ratio above which volatility counts as expanding.
    pub tau_high: f64,
    /// Ratio below which volatility counts as contracting.
    pub tau_low: f64,
    /// Base multiplier, calibrated so that on synthetic Gaussian returns
    /// roughly a third of days land inside the threshold.
    pub m0: f64,
    pub a_high: f64,
    pub a_low: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            n_v: 30,
            n_short: 10,
            n_long: 60,
            n_b: 120,
            q_lo_pct: 0.30,
            q_hi_pct: 0.70,
            tau_high: 1.4,
            tau_low: 0.7,
            m0: 0.5,
            a_high: 1.2,
            a_low: 0.8,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_v < 2 || self.n_short < 2 || self.n_long < 2 || self.n_b < 2 {
            return Err(Error::InvalidParams("threshold windows must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.q_lo_pct)
            || !(0.0..=1.0).contains(&self.q_hi_pct)
            || self.q_lo_pct > self.q_hi_pct
        {
            return Err(Error::InvalidParams(
                "quantile percentiles must satisfy 0 <= q_lo_pct <= q_hi_pct <= 1".into(),
            ));
        }
        if self.tau_low >= self.tau_high {
            return Err(Error::InvalidParams("tau_low must be below tau_high".into()));
        }
        if self.m0 <= 0.0 || self.a_high <= 0.0 || self.a_low <= 0.0 {
            return Err(Error::InvalidParams("multipliers must be positive".into()));
        }
        Ok(())
    }

    /// Return observations required before a threshold exists.
    pub fn min_returns(&self) -> usize {
        self.n_v.max(self.n_long).max(self.n_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    Floor,
    Ceiling,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub theta: f64,
    pub sigma: f64,
    pub sigma_short: f64,
    pub sigma_long: f64,
    pub multiplier: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub clamped: Clamp,
    /// The short/long ratio was undefined (zero long-window volatility) and
    /// the base multiplier was used as-is.
    pub multiplier_fallback: bool,
}

/// A threshold paired with the date it was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatedThreshold {
    pub date: NaiveDate,
    pub value: ThresholdValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonThresholds {
    pub eps1: f64,
    pub eps5: f64,
    pub eps20: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Side,
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Linear interpolation between order statistics; `sorted` must be ascending.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    match sorted.get(lo + 1) {
        Some(next) => sorted[lo] + (h - lo as f64) * (next - sorted[lo]),
        None => sorted[sorted.len() - 1],
    }
}

/// Threshold at the last date of `returns`. Windows end at (and include) the
/// final observation.
pub fn compute_theta(params: &ThresholdParams, returns: &[f64]) -> Result<ThresholdValue> {
    params.validate()?;
    let needed = params.min_returns();
    if returns.len() < needed {
        return Err(Error::InsufficientHistory {
            what: "dynamic threshold".into(),
            needed,
            available: returns.len(),
        });
    }
    let n = returns.len();
    let sigma = sample_std(&returns[n - params.n_v..]);
    let sigma_short = sample_std(&returns[n - params.n_short..]);
    let sigma_long = sample_std(&returns[n - params.n_long..]);

    let (multiplier, multiplier_fallback) = if sigma_long == 0.0 {
        (params.m0, true)
    } else {
        let ratio = sigma_short / sigma_long;
        let m = if ratio > params.tau_high {
            params.m0 * params.a_high
        } else if ratio < params.tau_low {
            params.m0 * params.a_low
        } else {
            params.m0
        };
        (m, false)
    };

    let mut abs: Vec<f64> = returns[n - params.n_b..].iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
    let q_lo = quantile(&abs, params.q_lo_pct);
    let q_hi = quantile(&abs, params.q_hi_pct);

    let raw = sigma * multiplier;
    let (theta, clamped) = if raw < q_lo {
        (q_lo, Clamp::Floor)
    } else if raw > q_hi {
        (q_hi, Clamp::Ceiling)
    } else {
        (raw, Clamp::None)
    };

    Ok(ThresholdValue {
        theta,
        sigma,
        sigma_short,
        sigma_long,
        multiplier,
        q_lo,
        q_hi,
        clamped,
        multiplier_fallback,
    })
}

/// Square-root-of-time horizon scaling. eps20 is computed as 2 * eps5 so the
/// identity holds bit-for-bit.
pub fn horizon_thresholds(theta: f64) -> Result<HorizonThresholds> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParams(format!("theta must be positive, got {theta}")));
    }
    let eps5 = 5.0f64.sqrt() * theta;
    Ok(HorizonThresholds { eps1: theta, eps5, eps20: 2.0 * eps5 })
}

/// Label a cumulative return against a horizon threshold. Boundary values
/// count as trending.
pub fn classify(r_cum: f64, eps: f64) -> Direction {
    debug_assert!(eps > 0.0);
    if r_cum >= eps {
        Direction::Up
    } else if r_cum <= -eps {
        Direction::Down
    } else {
        Direction::Side
    }
}

/// Training sample: the threshold state on a date plus forward outcomes.
/// Horizon fields are absent when the series ends before the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub fund_code: String,
    pub date: NaiveDate,
    pub theta: f64,
    pub eps1: f64,
    pub eps5: f64,
    pub eps20: f64,
    pub r_fwd_1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_fwd_5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_fwd_20: Option<f64>,
    pub label_1: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_5: Option<Direction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_20: Option<Direction>,
}

/// Emit one sample per date that has a computable threshold and at least one
/// forward bar. `r_fwd_k = close[t+k]/close[t] - 1` over trading days.
pub fn annotate(fund_code: &str, bars: &[DailyBar], params: &ThresholdParams) -> Result<Vec<LabeledSample>> {
    params.validate()?;
    let returns: Vec<f64> = daily_returns(bars).iter().map(|r| r.value).collect();
    let needed = params.min_returns();
    if returns.len() < needed + 1 {
        return Err(Error::InsufficientHistory {
            what: format!("labeling {fund_code}"),
            needed: needed + 2,
            available: bars.len(),
        });
    }
    let mut out = Vec::new();
    // Bar index t has `t` trailing returns; thresholds exist from t = needed.
    for t in needed..bars.len() - 1 {
        let value = compute_theta(params, &returns[..t])?;
        let eps = horizon_thresholds(value.theta)?;
        let base = bars[t].close;
        let fwd = |k: usize| bars.get(t + k).map(|b| b.close / base - 1.0);
        let r1 = fwd(1).expect("t < len - 1");
        let r5 = fwd(5);
        let r20 = fwd(20);
        out.push(LabeledSample {
            fund_code: fund_code.to_string(),
            date: bars[t].date,
            theta: value.theta,
            eps1: eps.eps1,
            eps5: eps.eps5,
            eps20: eps.eps20,
            r_fwd_1: r1,
            r_fwd_5: r5,
            r_fwd_20: r20,
            label_1: classify(r1, eps.eps1),
            label_5: r5.map(|r| classify(r, eps.eps5)),
            label_20: r20.map(|r| classify(r, eps.eps20)),
        });
    }
    Ok(out)
}

/// Fraction of classifiable days whose same-day absolute return stays inside
/// the threshold. The day-t threshold window includes the day-t return.
pub fn sideways_fraction(bars: &[DailyBar], params: &ThresholdParams) -> Result<f64> {
    params.validate()?;
    if bars.len() < params.n_b + params.n_long {
        return Err(Error::InsufficientHistory {
            what: "sideways fraction".into(),
            needed: params.n_b + params.n_long,
            available: bars.len(),
        });
    }
    let returns: Vec<f64> = daily_returns(bars).iter().map(|r| r.value).collect();
    let needed = params.min_returns();
    let mut sideways = 0usize;
    let mut total = 0usize;
    for t in needed..=returns.len() {
        let value = compute_theta(params, &returns[..t])?;
        total += 1;
        if returns[t - 1].abs() <= value.theta {
            sideways += 1;
        }
    }
    if total == 0 {
        return Err(Error::InsufficientHistory {
            what: "sideways fraction".into(),
            needed: needed + 1,
            available: returns.len(),
        });
    }
    Ok(sideways as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_scaling_matches_square_root_of_time() {
        let eps = horizon_thresholds(0.004).unwrap();
        assert_eq!(eps.eps1, 0.004);
        assert!((eps.eps5 - 0.0089443).abs() < 1e-7);
        assert!((eps.eps20 - 0.0178885).abs() < 1e-7);
        assert_eq!(eps.eps20.to_bits(), (2.0 * eps.eps5).to_bits());
        assert!(horizon_thresholds(0.0).is_err());
        assert!(horizon_thresholds(-0.1).is_err());
    }

    #[test]
    fn classify_boundaries_count_as_trending() {
        assert_eq!(classify(0.01, 0.01), Direction::Up);
        assert_eq!(classify(-0.01, 0.01), Direction::Down);
        assert_eq!(classify(0.0099, 0.01), Direction::Side);
        assert_eq!(classify(-0.0099, 0.01), Direction::Side);
    }

    #[test]
    fn clamp_floors_and_ceilings() {
        // 120 returns: mostly +-0.2%, last 10 tiny so sigma*m drops below q_lo.
        let mut rets = Vec::new();
        for i in 0..110 {
            rets.push(if i % 2 == 0 { 0.002 } else { -0.002 });
        }
        for i in 0..10 {
            rets.push(if i % 2 == 0 { 1e-5 } else { -1e-5 });
        }
        let params = ThresholdParams::default();
        let v = compute_theta(&params, &rets).unwrap();
        assert_eq!(v.clamped, Clamp::Floor);
        assert_eq!(v.theta, v.q_lo);
        assert!(v.q_lo <= v.theta && v.theta <= v.q_hi);

        // Mostly tiny, last 30 large: sigma*m exceeds q_hi.
        let mut rets = Vec::new();
        for i in 0..90 {
            rets.push(if i % 2 == 0 { 1e-4 } else { -1e-4 });
        }
        for i in 0..30 {
            rets.push(if i % 2 == 0 { 0.02 } else { -0.02 });
        }
        let v = compute_theta(&params, &rets).unwrap();
        assert_eq!(v.clamped, Clamp::Ceiling);
        assert_eq!(v.theta, v.q_hi);
    }

    #[test]
    fn multiplier_branches_on_volatility_ratio() {
        let params = ThresholdParams::default();
        // Long window quiet, short window loud: ratio > tau_high.
        let mut rets: Vec<f64> = (0..110).map(|i| if i % 2 == 0 { 0.001 } else { -0.001 }).collect();
        rets.extend((0..10).map(|i| if i % 2 == 0 { 0.02 } else { -0.02 }));
        let v = compute_theta(&params, &rets).unwrap();
        assert!(v.sigma_short / v.sigma_long > params.tau_high);
        assert!((v.multiplier - params.m0 * params.a_high).abs() < 1e-15);

        // Short window quiet relative to long: ratio < tau_low.
        let mut rets: Vec<f64> = (0..110).map(|i| if i % 2 == 0 { 0.02 } else { -0.02 }).collect();
        rets.extend((0..10).map(|i| if i % 2 == 0 { 0.0001 } else { -0.0001 }));
        let v = compute_theta(&params, &rets).unwrap();
        assert!(v.sigma_short / v.sigma_long < params.tau_low);
        assert!((v.multiplier - params.m0 * params.a_low).abs() < 1e-15);
    }

    #[test]
    fn zero_long_volatility_falls_back_to_base_multiplier() {
        let rets = vec![0.0; 120];
        let v = compute_theta(&ThresholdParams::default(), &rets).unwrap();
        assert!(v.multiplier_fallback);
        assert_eq!(v.multiplier, ThresholdParams::default().m0);
        assert_eq!(v.theta, 0.0);
    }

    #[test]
    fn insufficient_history_is_an_error() {
        let rets = vec![0.001; 119];
        assert!(matches!(
            compute_theta(&ThresholdParams::default(), &rets),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ThresholdParams::default();
        p.q_lo_pct = 0.8;
        p.q_hi_pct = 0.3;
        assert!(matches!(compute_theta(&p, &[0.0; 120]), Err(Error::InvalidParams(_))));
        let mut p = ThresholdParams::default();
        p.m0 = 0.0;
        assert!(p.validate().is_err());
        let mut p = ThresholdParams::default();
        p.tau_low = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        // Four points: q=0.30 sits at h = 0.9 between the first two.
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&xs, 0.30) - 1.9).abs() < 1e-12);
        assert!((quantile(&xs, 0.70) - 3.1).abs() < 1e-12);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
    }

    #[test]
    fn annotate_emits_labels_until_forward_bars_run_out() {
        use crate::market_data::DailyBar;
        let mut closes = vec![10.0];
        for i in 0..140 {
            let r = if i % 2 == 0 { 0.004 } else { -0.004 };
            closes.push(closes.last().unwrap() * (1.0 + r));
        }
        let bars: Vec<DailyBar> = closes
            .iter()
            .enumerate()
            .map(|(i, c)| DailyBar {
                date: chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap() + chrono::Duration::days(i as i64),
                close: *c,
                volume: 1e6,
                turnover_rate: 0.002,
            })
            .collect();
        let samples = annotate("T1", &bars, &ThresholdParams::default()).unwrap();
        assert!(!samples.is_empty());
        // Last emitted date is the second-to-last bar; its 5/20-day fields are absent.
        let last = samples.last().unwrap();
        assert_eq!(last.date, bars[bars.len() - 2].date);
        assert!(last.r_fwd_5.is_none() && last.label_5.is_none());
        assert!(last.r_fwd_20.is_none() && last.label_20.is_none());
        // The 5-day horizon survives up to exactly the fifth-from-last bar:
        // the last emitted sample with it is samples[len-5] (t = bars-6).
        assert!(samples[samples.len() - 5].label_5.is_some());
        for s in &samples[samples.len() - 4..] {
            assert!(s.label_5.is_none());
            assert!(s.label_20.is_none());
        }
        // Early samples carry all horizons and are self-consistent.
        let first = &samples[0];
        assert!(first.label_20.is_some());
        assert_eq!(first.label_1, classify(first.r_fwd_1, first.eps1));
        assert_eq!(first.label_5.unwrap(), classify(first.r_fwd_5.unwrap(), first.eps5));
        assert_eq!(first.eps20.to_bits(), (2.0 * first.eps5).to_bits());
    }

    #[test]
    fn labeled_sample_serializes_without_absent_horizons() {
        let s = LabeledSample {
            fund_code: "F".into(),
            date: chrono::NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
            theta: 0.004,
            eps1: 0.004,
            eps5: 0.0089,
            eps20: 0.0178,
            r_fwd_1: 0.01,
            r_fwd_5: None,
            r_fwd_20: None,
            label_1: Direction::Up,
            label_5: None,
            label_20: None,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"label_1\":\"up\""));
        assert!(!json.contains("label_5"));
        assert!(!json.contains("r_fwd_20"));
    }
}
