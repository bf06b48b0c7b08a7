//! Shared test support: seeded synthetic data generators and independent
//! reference implementations used as oracles.

pub mod reference;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reitquant::market_data::DailyBar;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Deterministic weekday sequence starting at `start`, `n` dates long.
pub fn trading_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut dates = Vec::with_capacity(n);
    let mut day = start;
    while dates.len() < n {
        if day.format("%u").to_string().parse::<u32>().unwrap() <= 5 {
            dates.push(day);
        }
        day = day.succ_opt().unwrap();
    }
    dates
}

/// Gaussian via Box-Muller so only `rand`'s uniform source is needed.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_returns(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| sigma * gauss(&mut r)).collect()
}

/// Random-walk daily bars with positive, varying volume.
pub fn random_walk_bars(seed: u64, n: usize, start_price: f64, daily_vol: f64) -> Vec<DailyBar> {
    let mut r = rng(seed);
    let dates = trading_dates(d("2023-01-02"), n);
    let mut price = start_price;
    let mut bars = Vec::with_capacity(n);
    for date in dates {
        let ret = daily_vol * gauss(&mut r);
        price *= 1.0 + ret.clamp(-0.09, 0.09);
        price = price.max(0.01);
        let volume = (1.0e6 * (1.0 + 0.5 * gauss(&mut r).abs())).max(1000.0);
        let turnover_rate = (volume / 5.0e8).max(1e-6);
        bars.push(DailyBar { date, close: price, volume, turnover_rate });
    }
    bars
}

/// Bars realizing an exact return sequence: close[i] = close[i-1] * (1 + r[i]).
pub fn bars_from_returns(start_price: f64, returns: &[f64]) -> Vec<DailyBar> {
    let dates = trading_dates(d("2023-01-02"), returns.len() + 1);
    let mut bars = vec![DailyBar { date: dates[0], close: start_price, volume: 1.0e6, turnover_rate: 0.002 }];
    for (i, r) in returns.iter().enumerate() {
        let close = bars[i].close * (1.0 + r);
        bars.push(DailyBar { date: dates[i + 1], close, volume: 1.0e6, turnover_rate: 0.002 });
    }
    bars
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let denom = expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= tol * denom,
        "{what}: actual {actual} vs expected {expected} (tol {tol})"
    );
}
