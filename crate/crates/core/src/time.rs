//! Clock helpers. All instants are UTC with minute or second precision.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Timelike, Utc};

pub type Timestamp = DateTime<Utc>;

pub const MINUTES_PER_DAY: u32 = 24 * 60;

/// The instant at `time` on `date`.
pub fn at(date: NaiveDate, time: NaiveTime) -> Timestamp {
    Utc.from_utc_datetime(&date.and_time(time))
}

/// Midnight starting `date`.
pub fn midnight(date: NaiveDate) -> Timestamp {
    at(date, NaiveTime::MIN)
}

pub fn minute_of_day(ts: &Timestamp) -> u32 {
    ts.hour() * 60 + ts.minute()
}

pub fn time_minutes(time: NaiveTime) -> u32 {
    time.hour() * 60 + time.minute()
}

/// Clock time from minutes after midnight; values past the end of the day wrap.
pub fn clock(minutes: u32) -> NaiveTime {
    let m = minutes % MINUTES_PER_DAY;
    NaiveTime::from_hms_opt(m / 60, m % 60, 0).expect("minute in range")
}

pub fn minutes(n: i64) -> Duration {
    Duration::minutes(n)
}

/// Monday = 0 .. Sunday = 6.
pub fn weekday_index(ts: &Timestamp) -> usize {
    ts.weekday().num_days_from_monday() as usize
}

/// Truncate to whole seconds.
pub fn truncate_seconds(ts: Timestamp) -> Timestamp {
    ts.with_nanosecond(0).unwrap_or(ts)
}

/// Iterate `[start, end)` day by day.
pub fn days(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start.iter_days().take_while(move |d| *d < end)
}

/// A daily interval `[start, end)` in clock time. `start > end` wraps past midnight and
/// `start == end` covers the whole day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DailyInterval {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl DailyInterval {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Self {
        Self { start, end }
    }

    pub fn contains_minute(&self, minute: u32) -> bool {
        let s = time_minutes(self.start);
        let e = time_minutes(self.end);
        match s.cmp(&e) {
            std::cmp::Ordering::Less => minute >= s && minute < e,
            std::cmp::Ordering::Greater => minute >= s || minute < e,
            std::cmp::Ordering::Equal => true,
        }
    }

    pub fn covers_whole_day(&self) -> bool {
        self.start == self.end
    }
}
