//! Single-asset account simulation: decision-signal mapping, lot-and-fee
//! trade execution, the daily strategy loop (decide on day t from data dated
//! at or before t, execute at the close of day t+1), a Buy & Hold control,
//! and CR / Sharpe / MDD metrics.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent_context::{
    announcement_impact_stats, build_announcement_context, build_event_context,
    build_market_context, build_momentum_context, quarterly_warning, RecentTrend,
    NEWS_WINDOW_DAYS, QUARTERLY_WARNING_DAYS, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway};
use crate::indicators::{compute_snapshot, IndicatorConfig};
use crate::macro_state::{build_market_snapshot, LabelRules};
use crate::market_data::{daily_returns, DailyBar, DataStore};
use crate::prediction::{
    assemble_prediction_input, parse_prediction, PriceContext, ValidationPolicy,
};
use crate::threshold::{
    compute_theta, horizon_thresholds, DatedThreshold, ThresholdParams,
};

/// Natural-day gap between consecutive bars above which a backtest aborts.
pub const GAP_LIMIT_DAYS: i64 = 10;
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// The seven discrete position adjustments a decision can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSignal {
    ClosePosition,
    Reduce40,
    Reduce20,
    Hold,
    Increase20,
    Increase40,
    IncreaseToLimit,
}

pub const ACTION_TOKENS: [(&str, ActionSignal); 7] = [
    ("close_position", ActionSignal::ClosePosition),
    ("reduce_40", ActionSignal::Reduce40),
    ("reduce_20", ActionSignal::Reduce20),
    ("hold", ActionSignal::Hold),
    ("increase_20", ActionSignal::Increase20),
    ("increase_40", ActionSignal::Increase40),
    ("increase_to_limit", ActionSignal::IncreaseToLimit),
];

impl ActionSignal {
    pub fn token(self) -> &'static str {
        ACTION_TOKENS
            .iter()
            .find(|(_, s)| *s == self)
            .expect("token table is exhaustive")
            .0
    }
}

/// Map a decision model's output to an action. Reasoning tags are stripped,
/// then the remaining text must declare exactly one known action token.
pub fn parse_decision(text: &str) -> Result<ActionSignal> {
    let region = match (text.find("<think>"), text.rfind("</think>")) {
        (Some(open), Some(close)) if open < close => &text[close + "</think>".len()..],
        _ => text,
    };
    let mut found: Vec<ActionSignal> = Vec::new();
    for word in region.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        if let Some((_, signal)) = ACTION_TOKENS.iter().find(|(t, _)| *t == word) {
            if !found.contains(signal) {
                found.push(*signal);
            }
        }
    }
    match found.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::UnrecognizedAction(snippet(region))),
        _ => Err(Error::UnrecognizedAction(format!(
            "conflicting action tokens in {:?}",
            snippet(region)
        ))),
    }
}

fn snippet(text: &str) -> String {
    let t = text.trim();
    let mut end = t.len().min(60);
    while !t.is_char_boundary(end) {
        end -= 1;
    }
    t[..end].to_string()
}

/// Position and execution limits for one account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    pub initial_capital: f64,
    pub fee_rate: f64,
    pub lot_size: u64,
    /// Fraction of initial capital per 20% adjustment step.
    pub step_fraction: f64,
    pub max_position_fraction: f64,
    /// Length of the opening position-building phase, in trading days.
    pub building_phase_days: u32,
    /// Maximum upward steps per day during the building phase.
    pub building_max_daily_steps: u32,
    /// Execute decisions at the decision day's own close instead of the next
    /// trading day's (sensitivity runs only; the default avoids lookahead).
    pub same_day_execution: bool,
    /// Optional account-level stop: when drawdown from the NAV peak reaches
    /// this fraction, the next decision is forced to close_position. An
    /// extension beyond the core position rules; off by default.
    pub drawdown_stop: Option<f64>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            initial_capital: 1_000_000.0,
            fee_rate: 0.0003,
            lot_size: 100,
            step_fraction: 0.20,
            max_position_fraction: 1.0,
            building_phase_days: 10,
            building_max_daily_steps: 1,
            same_day_execution: false,
            drawdown_stop: None,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_capital > 0.0) || !self.initial_capital.is_finite() {
            return Err(Error::InvalidParams("initial_capital must be positive".into()));
        }
        if !(self.fee_rate >= 0.0) || !self.fee_rate.is_finite() {
            return Err(Error::InvalidParams("fee_rate must be nonnegative".into()));
        }
        if self.lot_size < 1 {
            return Err(Error::InvalidParams("lot_size must be at least 1".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::InvalidParams("step_fraction must lie in (0, 1]".into()));
        }
        if !(self.max_position_fraction > 0.0) || !self.max_position_fraction.is_finite() {
            return Err(Error::InvalidParams("max_position_fraction must be positive".into()));
        }
        if let Some(stop) = self.drawdown_stop {
            if !(stop > 0.0 && stop < 1.0) {
                return Err(Error::InvalidParams("drawdown_stop must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeSide {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub side: TradeSide,
    pub shares: u64,
    pub price: f64,
    pub fee: f64,
    pub cash_after: f64,
    pub shares_after: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavPoint {
    pub date: NaiveDate,
    pub nav: f64,
}

/// One simulated single-asset account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub fund_code: String,
    pub cash: f64,
    pub shares: u64,
    pub trades: Vec<Trade>,
    pub nav_series: Vec<NavPoint>,
}

impl Account {
    pub fn new(fund_code: &str, risk: &RiskConfig) -> Self {
        Account {
            fund_code: fund_code.to_string(),
            cash: risk.initial_capital,
            shares: 0,
            trades: Vec::new(),
            nav_series: Vec::new(),
        }
    }

    pub fn nav(&self, price: f64) -> f64 {
        self.cash + self.shares as f64 * price
    }

    fn mark(&mut self, date: NaiveDate, price: f64) {
        let nav = self.nav(price);
        self.nav_series.push(NavPoint { date, nav });
    }
}

fn floor_to_lot(shares: u64, lot: u64) -> u64 {
    shares / lot * lot
}

/// Largest lot multiple whose cost including fee fits in `cash`.
fn affordable_shares(cash: f64, price: f64, fee_rate: f64, lot: u64) -> u64 {
    let raw = cash / (price * (1.0 + fee_rate));
    if !raw.is_finite() || raw <= 0.0 {
        return 0;
    }
    floor_to_lot(raw.floor().min(9.0e15) as u64, lot)
}

/// Translate a signal into a target share count. Total via clamps: reductions
/// saturate at zero, increases are capped by affordable cash, by
/// `max_position_fraction` of NAV, and during the building phase by the
/// remaining daily step allowance. Step notional is anchored to initial
/// capital, so a 20% step is always the same CNY amount.
pub fn target_shares(
    signal: ActionSignal,
    account: &Account,
    price: f64,
    risk: &RiskConfig,
    in_building_phase: bool,
    steps_today: u32,
) -> u64 {
    assert!(price > 0.0 && price.is_finite(), "price must be positive, got {price}");
    let lot = risk.lot_size;
    let step_notional = risk.step_fraction * risk.initial_capital;
    let step_shares =
        |steps: u32| floor_to_lot(((steps as f64 * step_notional) / price).floor() as u64, lot);

    let allowed_steps = if in_building_phase {
        risk.building_max_daily_steps.saturating_sub(steps_today)
    } else {
        u32::MAX
    };

    let nav = account.nav(price);
    let mpf_cap = ((risk.max_position_fraction * nav) / price).floor().max(0.0) as u64;
    let headroom_mpf = floor_to_lot(mpf_cap.saturating_sub(account.shares), lot);
    let headroom_cash = affordable_shares(account.cash, price, risk.fee_rate, lot);
    let max_added = headroom_mpf.min(headroom_cash);

    match signal {
        ActionSignal::Hold => account.shares,
        ActionSignal::ClosePosition => 0,
        ActionSignal::Reduce20 => account.shares.saturating_sub(step_shares(1)),
        ActionSignal::Reduce40 => account.shares.saturating_sub(step_shares(2)),
        ActionSignal::Increase20 => {
            account.shares + step_shares(1.min(allowed_steps)).min(max_added)
        }
        ActionSignal::Increase40 => {
            account.shares + step_shares(2.min(allowed_steps)).min(max_added)
        }
        ActionSignal::IncreaseToLimit => {
            let desired = if in_building_phase {
                max_added.min(step_shares(allowed_steps.min(1_000_000)))
            } else {
                max_added
            };
            account.shares + desired
        }
    }
}

/// Trade tolerance for the cash ledger, in CNY.
pub const LEDGER_TOL: f64 = 1e-6;

/// Move the account to `target` shares at `price`, charging `fee_rate` per
/// side. NAV changes by exactly the fee; violation of that, negative cash, or
/// an unaffordable buy is an internal invariant failure, not user error.
pub fn execute(
    account: &mut Account,
    date: NaiveDate,
    target: u64,
    price: f64,
    fee_rate: f64,
) -> Result<()> {
    assert!(price > 0.0 && price.is_finite(), "price must be positive, got {price}");
    if target == account.shares {
        return Ok(());
    }
    let nav_before = account.nav(price);
    let (side, delta) = if target > account.shares {
        (TradeSide::Buy, target - account.shares)
    } else {
        (TradeSide::Sell, account.shares - target)
    };
    let notional = delta as f64 * price;
    let fee = notional * fee_rate;
    match side {
        TradeSide::Buy => {
            let total = notional + fee;
            if total > account.cash + LEDGER_TOL {
                return Err(Error::Invariant(format!(
                    "unaffordable buy of {delta} shares at {price}: cost {total} exceeds cash {}",
                    account.cash
                )));
            }
            account.cash = (account.cash - total).max(0.0);
        }
        TradeSide::Sell => {
            account.cash += notional - fee;
        }
    }
    account.shares = target;
    let nav_after = account.nav(price);
    if ((nav_before - fee) - nav_after).abs() > LEDGER_TOL {
        return Err(Error::Invariant(format!(
            "ledger leak on {date}: NAV {nav_before} - fee {fee} != {nav_after}"
        )));
    }
    account.trades.push(Trade {
        date,
        side,
        shares: delta,
        price,
        fee,
        cash_after: account.cash,
        shares_after: account.shares,
    });
    Ok(())
}

/// Performance summary of one NAV series. `sharpe` is `None` when undefined
/// (fewer than two returns, or zero return volatility) — never infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cr: f64,
    pub sharpe: Option<f64>,
    pub mdd: f64,
}

pub fn metrics(nav: &[NavPoint]) -> Result<Metrics> {
    metrics_with(nav, TRADING_DAYS_PER_YEAR, 0.0)
}

/// CR = NAV_end/NAV_0 - 1; Sharpe = mean(r - rf_daily)/std(r) * sqrt(days)
/// with sample standard deviation; MDD = min over t of NAV_t/peak_t - 1.
pub fn metrics_with(nav: &[NavPoint], days_per_year: f64, rf_annual: f64) -> Result<Metrics> {
    if nav.is_empty() {
        return Err(Error::EmptyNavSeries);
    }
    let first = nav[0].nav;
    let last = nav[nav.len() - 1].nav;
    let cr = last / first - 1.0;

    let mut peak = f64::MIN;
    let mut mdd = 0.0f64;
    for point in nav {
        peak = peak.max(point.nav);
        mdd = mdd.min(point.nav / peak - 1.0);
    }

    let returns: Vec<f64> = nav.windows(2).map(|w| w[1].nav / w[0].nav - 1.0).collect();
    let sharpe = if returns.len() < 2 {
        None
    } else {
        let rf_daily = rf_annual / days_per_year;
        let excess: Vec<f64> = returns.iter().map(|r| r - rf_daily).collect();
        let sd = crate::indicators::sample_std(&excess);
        if sd == 0.0 {
            None
        } else {
            Some(crate::indicators::mean(&excess) / sd * days_per_year.sqrt())
        }
    };
    Ok(Metrics { cr, sharpe, mdd })
}

/// Sum account NAVs per date. An account missing a date contributes its last
/// known NAV (forward fill). Accounts whose date spans do not overlap the
/// common start are rejected.
pub fn aggregate_nav(accounts: &[&Account]) -> Result<Vec<NavPoint>> {
    if accounts.is_empty() {
        return Err(Error::EmptyNavSeries);
    }
    for account in accounts {
        if account.nav_series.is_empty() {
            return Err(Error::EmptyNavSeries);
        }
    }
    let start = accounts
        .iter()
        .map(|a| a.nav_series[0].date)
        .max()
        .expect("nonempty");
    for account in accounts {
        let end = account.nav_series.last().expect("nonempty").date;
        if end < start {
            return Err(Error::DisjointCalendars(format!(
                "account {} ends {end} before the common start {start}",
                account.fund_code
            )));
        }
    }
    let mut dates = BTreeSet::new();
    for account in accounts {
        dates.extend(account.nav_series.iter().map(|p| p.date).filter(|d| *d >= start));
    }
    let mut cursors = vec![0usize; accounts.len()];
    let mut out = Vec::with_capacity(dates.len());
    for date in dates {
        let mut total = 0.0;
        for (account, cursor) in accounts.iter().zip(cursors.iter_mut()) {
            let series = &account.nav_series;
            while *cursor + 1 < series.len() && series[*cursor + 1].date <= date {
                *cursor += 1;
            }
            // Cursor sits on the last point dated <= date (the series starts
            // at or before `start`, so one always exists).
            total += series[*cursor].nav;
        }
        out.push(NavPoint { date, nav: total });
    }
    Ok(out)
}

/// Everything configurable about one strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BacktestConfig {
    pub risk: RiskConfig,
    pub threshold: ThresholdParams,
    pub indicator: IndicatorConfig,
    pub labels: LabelRules,
    pub policy: ValidationPolicy,
}

/// One decision made during the loop: when it was made, what it asked for,
/// when it was executed, and whether it fell back to hold on unparseable
/// model output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub as_of: NaiveDate,
    pub action: ActionSignal,
    pub executed_on: Option<NaiveDate>,
    pub fallback_hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRun {
    pub account: Account,
    pub metrics: Metrics,
    pub decisions: Vec<DecisionRecord>,
}

pub const PREDICT_SYSTEM: &str = "You are the prediction agent for a listed REITs fund. Read the four analyst payloads and the price context. Reason step by step inside <think></think> tags, then output exactly one JSON object of the form {\"t1\":{\"up\":p,\"down\":p,\"side\":p,\"confidence\":c},\"t5\":{...},\"t20\":{...}} and nothing else. Probabilities in each horizon must sum to 1. A horizon counts as sideways when the absolute cumulative return does not exceed its threshold (eps1, eps5, eps20 in the price context).";

pub const DECIDE_SYSTEM: &str = "You are the trading decision agent for a single REITs fund account. Read the prediction and the position state, reason inside <think></think> tags, then output exactly one action token from: close_position, reduce_40, reduce_20, hold, increase_20, increase_40, increase_to_limit.";

fn gaps_ok(code: &str, bars: &[DailyBar]) -> Result<()> {
    for w in bars.windows(2) {
        let days = (w[1].date - w[0].date).num_days();
        if days > GAP_LIMIT_DAYS {
            return Err(Error::DataGap {
                fund: code.to_string(),
                from: w[0].date,
                to: w[1].date,
                days,
                limit: GAP_LIMIT_DAYS,
            });
        }
    }
    Ok(())
}

/// Build the day's contexts through an audited point-in-time view, ask the
/// gateway for a prediction and then a decision. Unparseable model output
/// (after the gateway's own retries) degrades to hold; transport-level
/// failures propagate.
fn decide_for_day(
    store: &DataStore,
    code: &str,
    as_of: NaiveDate,
    gateway: &Gateway,
    cfg: &BacktestConfig,
    account: &Account,
    in_building_phase: bool,
) -> Result<(ActionSignal, bool)> {
    let view = store.view(as_of);
    let bars = view.fund_bars(code)?;
    let snapshot = compute_snapshot(bars, as_of, &cfg.indicator)?;

    // Thresholds for the last six day-ends: five for the agent payload, one
    // extra so each day's move is judged against the threshold in force
    // before it happened.
    let returns: Vec<f64> = daily_returns(bars).iter().map(|r| r.value).collect();
    let needed = cfg.threshold.min_returns() + 5;
    if returns.len() < needed {
        return Err(Error::InsufficientHistory {
            what: format!("threshold history for {code}"),
            needed,
            available: returns.len(),
        });
    }
    let n = returns.len();
    let mut six = Vec::with_capacity(6);
    for upto in (n - 5)..=n {
        let value = compute_theta(&cfg.threshold, &returns[..upto])?;
        six.push(DatedThreshold { date: bars[upto].date, value });
    }
    let theta_history = &six[1..];
    let mut breach_last5 = [false; 5];
    for (i, b) in breach_last5.iter_mut().enumerate() {
        // Move on day six[i+1].date against the previous day-end threshold.
        *b = returns[n - 5 + i].abs() > six[i].value.theta;
    }

    let momentum = build_momentum_context(code, &snapshot, theta_history, &breach_last5)?;

    let announcements: Vec<_> = view.announcements(code).into_iter().cloned().collect();
    let ann_types: BTreeSet<&str> = announcements.iter().map(|a| a.ann_type.as_str()).collect();
    let mut impact_stats = Vec::new();
    for ann_type in ann_types {
        impact_stats.extend(announcement_impact_stats(
            &announcements,
            bars,
            ann_type,
            as_of,
            &cfg.threshold,
        )?);
    }
    let theta_today = six[5].value.theta;
    let eps = horizon_thresholds(theta_today)?;
    let last20 = &returns[n - 20..];
    let sideways_20 = last20.iter().filter(|r| r.abs() <= eps.eps1).count() as f64 / 20.0;
    let trend = RecentTrend {
        chg_5d_pct: snapshot.chg_5d,
        chg_20d_pct: snapshot.chg_20d,
        sideways_fraction_20d: sideways_20,
    };
    let announcement =
        build_announcement_context(code, &announcements, &impact_stats, &trend, as_of);

    let reports: Vec<_> = view.reports(code).into_iter().cloned().collect();
    let warning = quarterly_warning(as_of, &view.release_dates(code), QUARTERLY_WARNING_DAYS);
    let event =
        build_event_context(code, view.news(), &reports, &warning, as_of, NEWS_WINDOW_DAYS);

    let market_snapshot = build_market_snapshot(
        view.reits_index(),
        view.sse_index(),
        view.dividend_index(),
        view.yields(),
        view.market_activity(),
        as_of,
        &cfg.labels,
    )?;
    let market = build_market_context(code, &market_snapshot);

    let recent_closes: Vec<f64> = bars[bars.len() - 5..].iter().map(|b| b.close).collect();
    let ctx = PriceContext {
        fund_code: code.to_string(),
        as_of,
        recent_closes,
        chg_5d_pct: snapshot.chg_5d,
        thresholds: eps,
    };
    let input = assemble_prediction_input(&[momentum, announcement, event, market], &ctx)?;

    let predict_request = ChatRequest::new(
        PREDICT_SYSTEM,
        &input.to_string(),
        &format!("predict:{code}:{as_of}"),
    );
    let predict_text = gateway.complete(&predict_request)?;
    let prediction = match parse_prediction(&predict_text, &cfg.policy) {
        Ok(set) => set,
        Err(_) => return Ok((ActionSignal::Hold, true)),
    };

    let position_fraction = account.shares as f64 * *bars.last().map(|b| &b.close).expect("nonempty")
        / account.nav(bars.last().expect("nonempty").close);
    let decision_input = json!({
        "schema_version": SCHEMA_VERSION,
        "fund_code": code,
        "as_of": as_of,
        "prediction": prediction.to_json(),
        "position": {
            "cash": account.cash,
            "shares": account.shares,
            "nav": account.nav(bars.last().expect("nonempty").close),
            "position_fraction": position_fraction,
            "in_building_phase": in_building_phase,
        },
        "constraints": {
            "actions": ACTION_TOKENS.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            "step_fraction": cfg.risk.step_fraction,
            "max_position_fraction": cfg.risk.max_position_fraction,
        },
    });
    let decide_request = ChatRequest::new(
        DECIDE_SYSTEM,
        &decision_input.to_string(),
        &format!("decide:{code}:{as_of}"),
    );
    let decide_text = gateway.complete(&decide_request)?;
    match parse_decision(&decide_text) {
        Ok(signal) => Ok((signal, false)),
        Err(_) => Ok((ActionSignal::Hold, true)),
    }
}

/// The daily loop. For each trading day t in the period: execute yesterday's
/// decision at today's close, then (except on the last day) build contexts
/// from data dated <= t and obtain the next decision. NAV is marked at every
/// close; metrics are computed at period end.
pub fn run_backtest(
    store: &DataStore,
    code: &str,
    period: (NaiveDate, NaiveDate),
    gateway: &Gateway,
    cfg: &BacktestConfig,
) -> Result<BacktestRun> {
    cfg.risk.validate()?;
    cfg.threshold.validate()?;
    cfg.policy.validate()?;
    let full = store.full_fund_bars(code)?;
    let lo = full.partition_point(|b| b.date < period.0);
    let hi = full.partition_point(|b| b.date <= period.1);
    let bars = &full[lo..hi];
    if bars.is_empty() {
        return Err(Error::EmptyWindow {
            series: format!("bars/{code} in the backtest period"),
            as_of: period.1,
        });
    }
    gaps_ok(code, bars)?;

    let mut account = Account::new(code, &cfg.risk);
    let mut decisions: Vec<DecisionRecord> = Vec::new();
    let mut pending: Option<(usize, ActionSignal)> = None;
    let mut nav_peak = f64::MIN;

    for (i, bar) in bars.iter().enumerate() {
        if let Some((decided_on, signal)) = pending.take() {
            let in_building = decided_on < cfg.risk.building_phase_days as usize;
            let target = target_shares(signal, &account, bar.close, &cfg.risk, in_building, 0);
            execute(&mut account, bar.date, target, bar.close, cfg.risk.fee_rate)?;
            if let Some(d) = decisions.last_mut() {
                d.executed_on = Some(bar.date);
            }
        }

        if i + 1 < bars.len() {
            let in_building = i < cfg.risk.building_phase_days as usize;
            nav_peak = nav_peak.max(account.nav(bar.close));
            let stop_hit = cfg
                .risk
                .drawdown_stop
                .map(|stop| account.nav(bar.close) / nav_peak - 1.0 <= -stop)
                .unwrap_or(false);
            let (signal, fallback) = if stop_hit && account.shares > 0 {
                (ActionSignal::ClosePosition, false)
            } else {
                decide_for_day(store, code, bar.date, gateway, cfg, &account, in_building)?
            };
            decisions.push(DecisionRecord {
                as_of: bar.date,
                action: signal,
                executed_on: None,
                fallback_hold: fallback,
            });
            if cfg.risk.same_day_execution {
                let target =
                    target_shares(signal, &account, bar.close, &cfg.risk, in_building, 0);
                execute(&mut account, bar.date, target, bar.close, cfg.risk.fee_rate)?;
                decisions.last_mut().expect("just pushed").executed_on = Some(bar.date);
            } else {
                pending = Some((i, signal));
            }
        }

        account.mark(bar.date, bar.close);
    }

    let metrics = metrics(&account.nav_series)?;
    Ok(BacktestRun { account, metrics, decisions })
}

/// Control strategy: invest all initial capital at the first close of the
/// period (largest affordable lot multiple), then hold to the end.
pub fn buy_and_hold(
    store: &DataStore,
    code: &str,
    period: (NaiveDate, NaiveDate),
    risk: &RiskConfig,
) -> Result<BacktestRun> {
    risk.validate()?;
    let full = store.full_fund_bars(code)?;
    let lo = full.partition_point(|b| b.date < period.0);
    let hi = full.partition_point(|b| b.date <= period.1);
    let bars = &full[lo..hi];
    if bars.is_empty() {
        return Err(Error::EmptyWindow {
            series: format!("bars/{code} in the backtest period"),
            as_of: period.1,
        });
    }
    gaps_ok(code, bars)?;

    let mut account = Account::new(code, risk);
    let first = &bars[0];
    let target = target_shares(
        ActionSignal::IncreaseToLimit,
        &account,
        first.close,
        risk,
        false,
        0,
    );
    execute(&mut account, first.date, target, first.close, risk.fee_rate)?;
    for bar in bars {
        account.mark(bar.date, bar.close);
    }
    let metrics = metrics(&account.nav_series)?;
    let decisions = vec![DecisionRecord {
        as_of: first.date,
        action: ActionSignal::IncreaseToLimit,
        executed_on: Some(first.date),
        fallback_hold: false,
    }];
    Ok(BacktestRun { account, metrics, decisions })
}

// ---------------------------------------------------------------------------
// Artifact writers.
// ---------------------------------------------------------------------------

pub fn write_trades_csv(path: &Path, trades: &[Trade]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["date", "side", "shares", "price", "fee", "cash_after", "shares_after"])
        .map_err(|e| csv_err(path, e))?;
    for t in trades {
        let side = match t.side {
            TradeSide::Buy => "buy",
            TradeSide::Sell => "sell",
        };
        w.write_record([
            t.date.to_string(),
            side.to_string(),
            t.shares.to_string(),
            t.price.to_string(),
            t.fee.to_string(),
            t.cash_after.to_string(),
            t.shares_after.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_nav_csv(path: &Path, nav: &[NavPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["date", "nav"]).map_err(|e| csv_err(path, e))?;
    for p in nav {
        w.write_record([p.date.to_string(), p.nav.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("metrics serialization is infallible");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invariant(format!("csv write to {}: {other:?}", path.display())),
    }
}
