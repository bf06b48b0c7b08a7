//! Data layer: typed loaders for the CSV/JSONL input formats, point-in-time
//! windowing, and the access-audited store every downstream consumer reads
//! through.
//!
//! All series are sorted by date after load; duplicate dates and non-positive
//! prices are rejected at the boundary so the rest of the crate can assume
//! clean inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trading day of a single fund.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub close: f64,
    pub volume: f64,
    pub turnover_rate: f64,
}

/// One trading day of a benchmark index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexBar {
    pub date: NaiveDate,
    pub close: f64,
}

/// One observation of the 10-year treasury yield, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldPoint {
    pub date: NaiveDate,
    pub yield_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impact {
    High,
    Medium,
    Low,
}

/// A fund disclosure (dividend notice, holder change, quarterly filing, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub fund_code: String,
    pub published: NaiveDate,
    pub ann_type: String,
    pub summary: String,
    pub sentiment: Sentiment,
}

/// Market-wide or sector news item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub date: NaiveDate,
    pub impact: Impact,
    pub summary: String,
    pub sentiment: Sentiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    QuarterlyReport,
    OperationalData,
}

/// Fundamental disclosure from the fund operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalReport {
    pub fund_code: String,
    pub period_end: NaiveDate,
    pub kind: ReportKind,
    pub summary: String,
    pub sentiment: Sentiment,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundMeta {
    pub code: String,
    pub listing_date: NaiveDate,
}

/// Scheduled quarterly disclosure date. Release calendars are expectations
/// known ahead of time, not observed market data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseDate {
    pub fund_code: String,
    pub release_date: NaiveDate,
}

pub trait HasDate {
    fn date(&self) -> NaiveDate;
}

macro_rules! impl_has_date {
    ($t:ty, $field:ident) => {
        impl HasDate for $t {
            fn date(&self) -> NaiveDate {
                self.$field
            }
        }
    };
}

impl_has_date!(DailyBar, date);
impl_has_date!(IndexBar, date);
impl_has_date!(YieldPoint, date);
impl_has_date!(NewsItem, date);
impl_has_date!(Announcement, published);

/// A return aligned to the later of its two defining dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatedReturn {
    pub date: NaiveDate,
    pub value: f64,
}

impl HasDate for DatedReturn {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

/// Trailing observations ending at or before an as-of date.
#[derive(Debug, Clone, Copy)]
pub struct SeriesWindow<'a, T> {
    pub items: &'a [T],
    /// Fewer observations were available than requested.
    pub short_history: bool,
}

/// Last `n` observations of `series` dated at or before `as_of`.
pub fn window<'a, T: HasDate>(
    series: &'a [T],
    series_name: &str,
    as_of: NaiveDate,
    n: usize,
) -> Result<SeriesWindow<'a, T>> {
    let end = series.partition_point(|x| x.date() <= as_of);
    if end == 0 {
        return Err(Error::EmptyWindow {
            series: series_name.to_string(),
            as_of,
        });
    }
    let start = end.saturating_sub(n);
    Ok(SeriesWindow {
        items: &series[start..end],
        short_history: end < n,
    })
}

/// Simple daily returns `close_t / close_{t-1} - 1`, aligned to the later date.
pub fn daily_returns(bars: &[DailyBar]) -> Vec<DatedReturn> {
    bars.windows(2)
        .map(|w| DatedReturn {
            date: w[1].date,
            value: w[1].close / w[0].close - 1.0,
        })
        .collect()
}

/// Funds listed at least `min_days` natural days before `as_of`.
pub fn eligible_funds(funds: &[FundMeta], as_of: NaiveDate, min_days: i64) -> Vec<&FundMeta> {
    funds
        .iter()
        .filter(|f| (as_of - f.listing_date).num_days() >= min_days)
        .collect()
}

// ---------------------------------------------------------------------------
// Loaders. CSV schemas: bars `date,close,volume,turnover_rate`, index
// `date,close`, yield `date,yield_pct`, funds `code,listing_date`, release
// calendar `fund_code,release_date`. Event data is JSONL, one object per line.
// ---------------------------------------------------------------------------

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn malformed(path: &Path, err: &csv::Error) -> Error {
    let line = err
        .position()
        .map(|p| p.line())
        .unwrap_or_default();
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

fn load_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row.map_err(|e| malformed(path, &e))?);
    }
    Ok(out)
}

fn sort_and_check_dates<T: HasDate>(path: &Path, rows: &mut [T]) -> Result<()> {
    rows.sort_by_key(|r| r.date());
    for w in rows.windows(2) {
        if w[0].date() == w[1].date() {
            return Err(Error::DuplicateDate {
                path: path.to_path_buf(),
                date: w[0].date(),
            });
        }
    }
    Ok(())
}

fn check_price(path: &Path, date: NaiveDate, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::NonPositivePrice {
            path: path.to_path_buf(),
            date,
            value,
        });
    }
    Ok(())
}

pub fn load_daily_bars(path: impl AsRef<Path>) -> Result<Vec<DailyBar>> {
    let path = path.as_ref();
    let mut bars: Vec<DailyBar> = load_csv(path)?;
    sort_and_check_dates(path, &mut bars)?;
    for bar in &bars {
        check_price(path, bar.date, bar.close)?;
        if !bar.volume.is_finite() || bar.volume < 0.0 || !bar.turnover_rate.is_finite() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 0,
                message: format!("invalid volume/turnover on {}", bar.date),
            });
        }
    }
    Ok(bars)
}

pub fn load_index_bars(path: impl AsRef<Path>) -> Result<Vec<IndexBar>> {
    let path = path.as_ref();
    let mut bars: Vec<IndexBar> = load_csv(path)?;
    sort_and_check_dates(path, &mut bars)?;
    for bar in &bars {
        check_price(path, bar.date, bar.close)?;
    }
    Ok(bars)
}

pub fn load_yield_points(path: impl AsRef<Path>) -> Result<Vec<YieldPoint>> {
    let path = path.as_ref();
    let mut points: Vec<YieldPoint> = load_csv(path)?;
    sort_and_check_dates(path, &mut points)?;
    for p in &points {
        if !p.yield_pct.is_finite() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 0,
                message: format!("non-finite yield on {}", p.date),
            });
        }
    }
    Ok(points)
}

pub fn load_fund_metas(path: impl AsRef<Path>) -> Result<Vec<FundMeta>> {
    let path = path.as_ref();
    let mut metas: Vec<FundMeta> = load_csv(path)?;
    metas.sort_by(|a, b| a.code.cmp(&b.code));
    for pair in metas.windows(2) {
        if pair[0].code == pair[1].code {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 0,
                message: format!("duplicate fund code {}", pair[0].code),
            });
        }
    }
    Ok(metas)
}

pub fn load_release_dates(path: impl AsRef<Path>) -> Result<Vec<ReleaseDate>> {
    let path = path.as_ref();
    let mut rows: Vec<ReleaseDate> = load_csv(path)?;
    rows.sort_by(|a, b| (a.fund_code.as_str(), a.release_date).cmp(&(b.fund_code.as_str(), b.release_date)));
    Ok(rows)
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_announcements(path: impl AsRef<Path>) -> Result<Vec<Announcement>> {
    let mut rows: Vec<Announcement> = load_jsonl(path.as_ref())?;
    rows.sort_by(|a, b| (a.published, a.fund_code.as_str()).cmp(&(b.published, b.fund_code.as_str())));
    Ok(rows)
}

pub fn load_news(path: impl AsRef<Path>) -> Result<Vec<NewsItem>> {
    let mut rows: Vec<NewsItem> = load_jsonl(path.as_ref())?;
    rows.sort_by_key(|n| n.date);
    Ok(rows)
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<OperationalReport>> {
    let mut rows: Vec<OperationalReport> = load_jsonl(path.as_ref())?;
    rows.sort_by(|a, b| (a.period_end, a.fund_code.as_str()).cmp(&(b.period_end, b.fund_code.as_str())));
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Writers. Float fields use the shortest representation that parses back to
// the identical value, so write -> load round-trips exactly.
// ---------------------------------------------------------------------------

fn create(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_daily_bars(path: impl AsRef<Path>, bars: &[DailyBar]) -> Result<()> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let mut text = String::from("date,close,volume,turnover_rate\n");
    for b in bars {
        text.push_str(&format!(
            "{},{},{},{}\n",
            b.date, b.close, b.volume, b.turnover_rate
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_index_bars(path: impl AsRef<Path>, bars: &[IndexBar]) -> Result<()> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let mut text = String::from("date,close\n");
    for b in bars {
        text.push_str(&format!("{},{}\n", b.date, b.close));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_yield_points(path: impl AsRef<Path>, points: &[YieldPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let mut text = String::from("date,yield_pct\n");
    for p in points {
        text.push_str(&format!("{},{}\n", p.date, p.yield_pct));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Trading calendar and the audited store.
// ---------------------------------------------------------------------------

/// Ordered set of trading dates, derived as the union of all bar dates.
#[derive(Debug, Clone, Default)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn from_dates(set: BTreeSet<NaiveDate>) -> Self {
        TradingCalendar {
            dates: set.into_iter().collect(),
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> &[NaiveDate] {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        &self.dates[lo..hi]
    }

    pub fn next_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        let i = self.dates.partition_point(|d| *d <= date);
        self.dates.get(i).copied()
    }
}

/// One recorded read through a point-in-time view: which series was touched
/// and the latest observation date actually served.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessRecord {
    pub series: String,
    pub as_of: NaiveDate,
    pub latest_served: Option<NaiveDate>,
}

/// Shared audit sink proving no view ever serves data beyond its as-of date.
#[derive(Debug, Default)]
pub struct AccessAudit {
    records: Mutex<Vec<AccessRecord>>,
}

impl AccessAudit {
    pub fn take(&self) -> Vec<AccessRecord> {
        std::mem::take(&mut self.records.lock().unwrap())
    }

    pub fn snapshot(&self) -> Vec<AccessRecord> {
        self.records.lock().unwrap().clone()
    }

    fn record(&self, series: &str, as_of: NaiveDate, latest: Option<NaiveDate>) {
        self.records.lock().unwrap().push(AccessRecord {
            series: series.to_string(),
            as_of,
            latest_served: latest,
        });
    }
}

/// Everything a run reads: per-fund bars, benchmark indices, the yield curve
/// point, market activity, and event streams.
#[derive(Debug, Default)]
pub struct DataStore {
    pub funds: Vec<FundMeta>,
    bars: BTreeMap<String, Vec<DailyBar>>,
    pub reits_index: Vec<IndexBar>,
    pub sse_index: Vec<IndexBar>,
    pub dividend_index: Vec<IndexBar>,
    pub yields: Vec<YieldPoint>,
    pub market_activity: Vec<DailyBar>,
    announcements: Vec<Announcement>,
    news: Vec<NewsItem>,
    reports: Vec<OperationalReport>,
    release_calendar: Vec<ReleaseDate>,
    calendar: TradingCalendar,
    audit: Option<Arc<AccessAudit>>,
}

impl DataStore {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        funds: Vec<FundMeta>,
        bars: BTreeMap<String, Vec<DailyBar>>,
        reits_index: Vec<IndexBar>,
        sse_index: Vec<IndexBar>,
        dividend_index: Vec<IndexBar>,
        yields: Vec<YieldPoint>,
        market_activity: Vec<DailyBar>,
        announcements: Vec<Announcement>,
        news: Vec<NewsItem>,
        reports: Vec<OperationalReport>,
        release_calendar: Vec<ReleaseDate>,
    ) -> Self {
        let mut dates = BTreeSet::new();
        for series in bars.values() {
            dates.extend(series.iter().map(|b| b.date));
        }
        dates.extend(reits_index.iter().map(|b| b.date));
        DataStore {
            funds,
            bars,
            reits_index,
            sse_index,
            dividend_index,
            yields,
            market_activity,
            announcements,
            news,
            reports,
            release_calendar,
            calendar: TradingCalendar::from_dates(dates),
            audit: None,
        }
    }

    /// Turn on access auditing; every subsequent view read is recorded.
    pub fn enable_audit(&mut self) -> Arc<AccessAudit> {
        let audit = Arc::new(AccessAudit::default());
        self.audit = Some(audit.clone());
        audit
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn fund_codes(&self) -> Vec<String> {
        self.bars.keys().cloned().collect()
    }

    pub fn full_fund_bars(&self, code: &str) -> Result<&[DailyBar]> {
        self.bars
            .get(code)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::UnknownFund(code.to_string()))
    }

    /// Point-in-time view: every read through it is clipped to `as_of`.
    pub fn view(&self, as_of: NaiveDate) -> MarketView<'_> {
        MarketView { store: self, as_of }
    }
}

/// Read handle that only serves observations dated at or before `as_of`
/// and reports every read to the store's audit sink when enabled.
#[derive(Clone, Copy)]
pub struct MarketView<'a> {
    store: &'a DataStore,
    as_of: NaiveDate,
}

impl<'a> MarketView<'a> {
    pub fn as_of(&self) -> NaiveDate {
        self.as_of
    }

    fn clip<T: HasDate>(&self, series: &'a [T], name: &str) -> &'a [T] {
        let end = series.partition_point(|x| x.date() <= self.as_of);
        let out = &series[..end];
        if let Some(audit) = &self.store.audit {
            audit.record(name, self.as_of, out.last().map(|x| x.date()));
        }
        out
    }

    pub fn fund_bars(&self, code: &str) -> Result<&'a [DailyBar]> {
        let bars = self.store.full_fund_bars(code)?;
        Ok(self.clip(bars, &format!("bars/{code}")))
    }

    pub fn reits_index(&self) -> &'a [IndexBar] {
        self.clip(&self.store.reits_index, "index/reits")
    }

    pub fn sse_index(&self) -> &'a [IndexBar] {
        self.clip(&self.store.sse_index, "index/sse")
    }

    pub fn dividend_index(&self) -> &'a [IndexBar] {
        self.clip(&self.store.dividend_index, "index/dividend")
    }

    pub fn yields(&self) -> &'a [YieldPoint] {
        self.clip(&self.store.yields, "yields")
    }

    pub fn market_activity(&self) -> &'a [DailyBar] {
        self.clip(&self.store.market_activity, "market_activity")
    }

    pub fn announcements(&self, fund: &str) -> Vec<&'a Announcement> {
        let clipped = self.clip(&self.store.announcements, "announcements");
        clipped.iter().filter(|a| a.fund_code == fund).collect()
    }

    pub fn news(&self) -> &'a [NewsItem] {
        self.clip(&self.store.news, "news")
    }

    /// Reports available by `as_of` (period_end used as the availability
    /// proxy; publication lag is not modeled in the input format).
    pub fn reports(&self, fund: &str) -> Vec<&'a OperationalReport> {
        if let Some(audit) = &self.store.audit {
            let latest = self
                .store
                .reports
                .iter()
                .filter(|r| r.fund_code == fund && r.period_end <= self.as_of)
                .map(|r| r.period_end)
                .max();
            audit.record("reports", self.as_of, latest);
        }
        self.store
            .reports
            .iter()
            .filter(|r| r.fund_code == fund && r.period_end <= self.as_of)
            .collect()
    }

    /// Scheduled release dates for a fund. Deliberately not clipped: the
    /// disclosure calendar is a forward-looking expectation, not market data.
    pub fn release_dates(&self, fund: &str) -> Vec<NaiveDate> {
        self.store
            .release_calendar
            .iter()
            .filter(|r| r.fund_code == fund)
            .map(|r| r.release_date)
            .collect()
    }
}
