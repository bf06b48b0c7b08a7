//! Independent straight-line reference implementations of the numeric
//! formulas, used as oracles. Deliberately plain loops over raw arrays,
//! sharing no code with the library.

pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    assert!(n >= 2, "sample std needs at least 2 points");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub struct RefTheta {
    pub theta: f64,
    pub sigma: f64,
    pub sigma_short: f64,
    pub sigma_long: f64,
    pub multiplier: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn ref_theta(
    returns: &[f64],
    n_v: usize,
    n_short: usize,
    n_long: usize,
    n_b: usize,
    q_lo_pct: f64,
    q_hi_pct: f64,
    tau_high: f64,
    tau_low: f64,
    m0: f64,
    a_high: f64,
    a_low: f64,
) -> RefTheta {
    let n = returns.len();
    let sigma = sample_std(&returns[n - n_v..]);
    let sigma_short = sample_std(&returns[n - n_short..]);
    let sigma_long = sample_std(&returns[n - n_long..]);
    let multiplier = if sigma_long == 0.0 {
        m0
    } else {
        let ratio = sigma_short / sigma_long;
        if ratio > tau_high {
            m0 * a_high
        } else if ratio < tau_low {
            m0 * a_low
        } else {
            m0
        }
    };
    let mut abs: Vec<f64> = returns[n - n_b..].iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q_lo = quantile(&abs, q_lo_pct);
    let q_hi = quantile(&abs, q_hi_pct);
    let theta = (sigma * multiplier).min(q_hi).max(q_lo);
    RefTheta { theta, sigma, sigma_short, sigma_long, multiplier, q_lo, q_hi }
}

/// Reference indicator battery over raw close/volume arrays. Fields mirror
/// the library snapshot one-to-one but are computed independently.
pub struct RefSnapshot {
    pub ma5: f64,
    pub ma10: f64,
    pub ma20: f64,
    pub ma60: f64,
    pub ma5_deviation_pct: f64,
    pub ma10_deviation_pct: f64,
    pub ma20_deviation_pct: f64,
    pub ma60_deviation_pct: f64,
    pub ma_alignment: &'static str,
    pub chg_1d: f64,
    pub chg_5d: f64,
    pub chg_20d: f64,
    pub chg_60d: f64,
    pub rsi6: f64,
    pub rsi12: f64,
    pub rsi24: f64,
    pub rsi6_state: &'static str,
    pub rsi12_state: &'static str,
    pub rsi24_state: &'static str,
    pub macd_dif: f64,
    pub macd_dea: f64,
    pub macd_hist: f64,
    pub macd_cross: &'static str,
    pub momentum_10d: f64,
    pub boll_mid: f64,
    pub boll_upper: f64,
    pub boll_lower: f64,
    pub boll_position: &'static str,
    pub vol20: f64,
    pub atr_simplified: f64,
    pub vol_ma5: f64,
    pub vol_ma10: f64,
    pub vol_ma20: f64,
    pub volume_ratio: f64,
    pub pv_label: &'static str,
    pub support: f64,
    pub resistance: f64,
    pub consec_streak: i64,
    pub up_days_20: u32,
    pub down_days_20: u32,
    pub avg_amp_20: f64,
    pub max_amp_20: f64,
    pub last5_chg: [f64; 5],
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ema_series(values: &[f64], n: usize) -> Vec<f64> {
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

fn wilder_rsi(closes: &[f64], n: usize) -> f64 {
    let mut gains = Vec::new();
    let mut losses = Vec::new();
    for i in 1..closes.len() {
        let diff = closes[i] - closes[i - 1];
        gains.push(diff.max(0.0));
        losses.push((-diff).max(0.0));
    }
    assert!(gains.len() >= n);
    let mut avg_gain = mean(&gains[..n]);
    let mut avg_loss = mean(&losses[..n]);
    for i in n..gains.len() {
        avg_gain = (avg_gain * (n as f64 - 1.0) + gains[i]) / n as f64;
        avg_loss = (avg_loss * (n as f64 - 1.0) + losses[i]) / n as f64;
    }
    let denom = avg_gain + avg_loss;
    if denom == 0.0 {
        50.0
    } else {
        100.0 * avg_gain / denom
    }
}

fn rsi_state(rsi: f64) -> &'static str {
    if rsi > 70.0 {
        "overbought"
    } else if rsi < 30.0 {
        "oversold"
    } else {
        "normal"
    }
}

pub fn ref_snapshot(closes: &[f64], volumes: &[f64]) -> RefSnapshot {
    let n = closes.len();
    assert!(n >= 61, "reference snapshot needs 61 bars");
    let close = closes[n - 1];

    let ma = |w: usize| mean(&closes[n - w..]);
    let (ma5, ma10, ma20, ma60) = (ma(5), ma(10), ma(20), ma(60));
    let dev = |m: f64| (close - m) / m * 100.0;

    let ma_alignment = if ma5 > ma10 && ma10 > ma20 && ma20 > ma60 {
        "bullish"
    } else if ma5 < ma10 && ma10 < ma20 && ma20 < ma60 {
        "bearish"
    } else {
        "chaotic"
    };

    let chg = |k: usize| (close / closes[n - 1 - k] - 1.0) * 100.0;

    let rsi6 = wilder_rsi(closes, 6);
    let rsi12 = wilder_rsi(closes, 12);
    let rsi24 = wilder_rsi(closes, 24);

    let e12 = ema_series(closes, 12);
    let e26 = ema_series(closes, 26);
    let dif: Vec<f64> = e12.iter().zip(&e26).map(|(a, b)| a - b).collect();
    let dea = ema_series(&dif, 9);
    let macd_dif = dif[n - 1];
    let macd_dea = dea[n - 1];
    let macd_hist = macd_dif - macd_dea;
    let macd_cross = if dif[n - 2] <= dea[n - 2] && dif[n - 1] > dea[n - 1] {
        "golden"
    } else if dif[n - 2] >= dea[n - 2] && dif[n - 1] < dea[n - 1] {
        "death"
    } else {
        "none"
    };

    let momentum_10d = (close / closes[n - 11] - 1.0) * 100.0;

    let boll_mid = ma20;
    let sd20 = sample_std(&closes[n - 20..]);
    let boll_upper = boll_mid + 2.0 * sd20;
    let boll_lower = boll_mid - 2.0 * sd20;
    let boll_position = if boll_upper == boll_lower {
        "middle"
    } else {
        let pct_b = (close - boll_lower) / (boll_upper - boll_lower);
        if pct_b > 1.0 {
            "break_upper"
        } else if pct_b < 0.0 {
            "break_lower"
        } else if pct_b >= 0.8 {
            "biased_up"
        } else if pct_b <= 0.2 {
            "biased_down"
        } else {
            "middle"
        }
    };

    let mut rets = Vec::with_capacity(n - 1);
    for i in 1..n {
        rets.push(closes[i] / closes[i - 1] - 1.0);
    }
    let nr = rets.len();
    let vol20 = sample_std(&rets[nr - 20..]);
    let atr_simplified = mean(&rets[nr - 14..].iter().map(|r| r.abs()).collect::<Vec<_>>());

    let vmean = |w: usize| mean(&volumes[n - w..]);
    let (vol_ma5, vol_ma10, vol_ma20) = (vmean(5), vmean(10), vmean(20));
    let prior5 = mean(&volumes[n - 6..n - 1]);
    assert!(prior5 > 0.0, "fixture must have positive prior volume");
    let volume_ratio = volumes[n - 1] / prior5;

    let r_today = rets[nr - 1];
    let pv_label = if r_today == 0.0 {
        "flat"
    } else if r_today > 0.0 {
        if volume_ratio > 1.0 { "price_up_vol_up" } else { "price_up_vol_down" }
    } else if volume_ratio > 1.0 {
        "price_down_vol_up"
    } else {
        "price_down_vol_down"
    };

    // Support/resistance: rolling extrema, MAs, and band edges; cluster the
    // candidates nearest the close within 0.5% and average them.
    let mut candidates = Vec::new();
    for w in [5usize, 10, 20, 60] {
        let win = &closes[n - w..];
        candidates.push(win.iter().cloned().fold(f64::INFINITY, f64::min));
        candidates.push(win.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    candidates.extend([ma5, ma10, ma20, ma60, boll_upper, boll_lower]);
    let below: Vec<f64> = candidates.iter().cloned().filter(|c| *c < close).collect();
    let above: Vec<f64> = candidates.iter().cloned().filter(|c| *c > close).collect();
    let win60 = &closes[n - 60..];
    let low60 = win60.iter().cloned().fold(f64::INFINITY, f64::min);
    let high60 = win60.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let support = if below.is_empty() {
        low60
    } else {
        let best = below.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cluster: Vec<f64> = below.iter().cloned().filter(|v| (v - best).abs() <= 0.005 * best).collect();
        mean(&cluster)
    };
    let resistance = if above.is_empty() {
        high60
    } else {
        let best = above.iter().cloned().fold(f64::INFINITY, f64::min);
        let cluster: Vec<f64> = above.iter().cloned().filter(|v| (v - best).abs() <= 0.005 * best).collect();
        mean(&cluster)
    };

    let mut consec_streak = 0i64;
    let last = rets[nr - 1];
    if last > 0.0 {
        let mut i = nr;
        while i > 0 && rets[i - 1] > 0.0 {
            consec_streak += 1;
            i -= 1;
        }
    } else if last < 0.0 {
        let mut i = nr;
        while i > 0 && rets[i - 1] < 0.0 {
            consec_streak -= 1;
            i -= 1;
        }
    }

    let last20 = &rets[nr - 20..];
    let up_days_20 = last20.iter().filter(|r| **r > 0.0).count() as u32;
    let down_days_20 = last20.iter().filter(|r| **r < 0.0).count() as u32;
    let avg_amp_20 = mean(&last20.iter().map(|r| r.abs() * 100.0).collect::<Vec<_>>());
    let max_amp_20 = last20.iter().map(|r| r.abs() * 100.0).fold(f64::NEG_INFINITY, f64::max);

    let mut last5_chg = [0.0; 5];
    for (i, r) in rets[nr - 5..].iter().enumerate() {
        last5_chg[i] = r * 100.0;
    }

    RefSnapshot {
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
        rsi12,
        rsi24,
        rsi6_state: rsi_state(rsi6),
        rsi12_state: rsi_state(rsi12),
        rsi24_state: rsi_state(rsi24),
        macd_dif,
        macd_dea,
        macd_hist,
        macd_cross,
        momentum_10d,
        boll_mid,
        boll_upper,
        boll_lower,
        boll_position,
        vol20,
        atr_simplified,
        vol_ma5,
        vol_ma10,
        vol_ma20,
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
    }
}

/// Brute-force maximum drawdown: scan every peak up to each point.
pub fn ref_max_drawdown(nav: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..nav.len() {
        let mut peak = f64::NEG_INFINITY;
        for v in &nav[..=j] {
            peak = peak.max(*v);
        }
        worst = worst.min(nav[j] / peak - 1.0);
    }
    worst
}

pub fn ref_sharpe(nav: &[f64], risk_free: f64, trading_days: f64) -> Option<f64> {
    if nav.len() < 3 {
        return None;
    }
    let mut rets = Vec::new();
    for i in 1..nav.len() {
        rets.push(nav[i] / nav[i - 1] - 1.0 - risk_free / trading_days);
    }
    let sd = sample_std(&rets);
    if sd == 0.0 {
        None
    } else {
        Some(mean(&rets) / sd * trading_days.sqrt())
    }
}

// --- macro four-quadrant hand tables, evaluated independently ---

pub fn ref_rate_trend(bp: f64) -> &'static str {
    if bp < -20.0 {
        "clearly_down"
    } else if bp < -5.0 {
        "slowly_down"
    } else if bp <= 5.0 {
        "sideways"
    } else if bp <= 20.0 {
        "slowly_up"
    } else {
        "clearly_up"
    }
}

pub fn ref_equity_state(chg_pct: f64, rsi: f64) -> &'static str {
    if chg_pct > 5.0 && rsi > 60.0 {
        "bull"
    } else if chg_pct < -5.0 && rsi < 40.0 {
        "bear"
    } else if (0.0..=5.0).contains(&chg_pct) && (50.0..=60.0).contains(&rsi) {
        "oscillation_strong"
    } else if (-5.0..=0.0).contains(&chg_pct) && (40.0..=50.0).contains(&rsi) {
        "oscillation_weak"
    } else if (-2.0..=2.0).contains(&chg_pct) && (40.0..=60.0).contains(&rsi) {
        "oscillation"
    } else {
        "indeterminate"
    }
}

pub fn ref_quadrant(rate: &str, equity: &str) -> &'static str {
    if rate == "sideways" || equity == "indeterminate" {
        return "transition";
    }
    let rate_down = rate == "clearly_down" || rate == "slowly_down";
    match (rate_down, equity) {
        (true, "bull") | (true, "oscillation_strong") => "q1",
        (false, "bull") | (false, "oscillation_strong") => "q2",
        (true, _) => "q3",
        (false, "oscillation") => "transition",
        (false, _) => "q4",
    }
}
