//! Deterministic synthetic student cohorts that stand in for real participants.
//!
//! A cohort is a list of [`BehaviorProfile`]s: a weekly timetable of busy blocks plus answer
//! propensities. The day a participant actually lives is derived from the timetable, a
//! per-day attendance draw, and a fixed background routine (sleep 00:00–07:00, meals at
//! 12:00–13:00 and 19:00–20:00, free time otherwise). [`runner`] drives a cohort against
//! the service.

pub mod runner;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use runner::{run_experiment, ExperimentResult, Policy, SimConfig, SimError, SimEvent, SimEventKind};

use crate::plan::{
    ExperimentPlan, PlanConstraints, QuestionKind, Recurrence, TaskKind, TaskTemplate, PLAN_FORMAT_VERSION,
};
use crate::context::SensorKind;
use crate::time::{clock, time_minutes, DailyInterval, MINUTES_PER_DAY};
use crate::vocab::BUSY_ACTIVITIES;

/// Seed of the reference cohort used by the acceptance suite and `demo`.
pub const DEFAULT_SEED: u64 = 20_240_304;

pub type GeoPoint = (f64, f64);

/// An inclusive `[lo, hi]` range that profile parameters are drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.1 <= self.0 {
            self.0
        } else {
            rng.gen_range(self.0..=self.1)
        }
    }

    fn draw_count(&self, rng: &mut ChaCha8Rng) -> usize {
        self.draw(rng).round().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Places {
    pub classroom: GeoPoint,
    pub library: GeoPoint,
    pub canteen: GeoPoint,
    pub outdoors: Vec<GeoPoint>,
    /// Homes are scattered this far (km) from the classroom.
    pub home_distance_km: Span,
}

impl Default for Places {
    fn default() -> Self {
        Self {
            classroom: (46.0669, 11.1503),
            library: (46.0692, 11.1530),
            canteen: (46.0648, 11.1478),
            outdoors: vec![(46.0703, 11.1211), (46.0590, 11.1302), (46.0785, 11.1350)],
            home_distance_km: Span(1.0, 4.0),
        }
    }
}

/// Cohort configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub size: usize,
    /// First simulated day; a Monday keeps weeks aligned.
    pub start: NaiveDate,
    pub days: u32,
    pub seed: u64,
    pub places: Places,
    pub lectures_per_week: Span,
    pub study_groups_per_week: Span,
    pub study_alone_per_week: Span,
    /// Share of study-alone blocks spent in the library rather than at home.
    pub library_study_share: f64,
    /// Probability of attending any one timetable block.
    pub attendance: f64,
    pub base_answer: Span,
    pub busy_answer: Span,
    pub snooze: Span,
    /// Per-minute answer probability of the geometric delay.
    pub delay_p: Span,
    /// Share of free-time hours spent outdoors.
    pub outdoors_share: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            size: 40,
            start: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            days: 28,
            seed: DEFAULT_SEED,
            places: Places::default(),
            lectures_per_week: Span(6.0, 9.0),
            study_groups_per_week: Span(1.0, 2.0),
            study_alone_per_week: Span(2.0, 4.0),
            library_study_share: 0.7,
            attendance: 0.9,
            base_answer: Span(0.75, 0.95),
            busy_answer: Span(0.0, 0.1),
            snooze: Span(0.2, 0.5),
            delay_p: Span(0.2, 0.5),
            outdoors_share: 0.3,
        }
    }
}

impl CohortConfig {
    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(i64::from(self.days))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimetableEntry {
    /// 0 = Monday.
    pub weekday: u32,
    pub start: NaiveTime,
    pub end: NaiveTime,
    pub activity: String,
    pub location: String,
}

impl TimetableEntry {
    fn minutes(&self) -> (u32, u32) {
        (time_minutes(self.start), time_minutes(self.end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub id: String,
    pub timetable: Vec<TimetableEntry>,
    pub base_answer: f64,
    pub busy_answer: f64,
    pub delay_p: f64,
    pub snooze: f64,
    pub home: GeoPoint,
    /// Weights over the vocabulary moods (happy, neutral, tired, stressed, sad) when free.
    pub mood_free: Vec<f64>,
    /// Mood weights while busy.
    pub mood_busy: Vec<f64>,
    pub gender: u8,
    pub department: u8,
    pub extraversion: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileViolation {
    BusyNotBelowBase,
    ProbabilityOutOfRange(&'static str),
    OffGrid { index: usize },
    Overlap { a: usize, b: usize },
    EmptyOrInverted { index: usize },
}

impl BehaviorProfile {
    /// Invariant checker: probabilities in range, busy below base, timetable blocks on the
    /// 30-minute grid, non-empty and non-overlapping within each weekday.
    pub fn violations(&self) -> Vec<ProfileViolation> {
        let mut v = Vec::new();
        for (name, p) in [("base_answer", self.base_answer), ("busy_answer", self.busy_answer), ("snooze", self.snooze)] {
            if !(0.0..=1.0).contains(&p) {
                v.push(ProfileViolation::ProbabilityOutOfRange(name));
            }
        }
        if !(self.delay_p > 0.0 && self.delay_p <= 1.0) {
            v.push(ProfileViolation::ProbabilityOutOfRange("delay_p"));
        }
        if self.busy_answer >= self.base_answer {
            v.push(ProfileViolation::BusyNotBelowBase);
        }
        for (i, e) in self.timetable.iter().enumerate() {
            let (s, t) = e.minutes();
            if s % 30 != 0 || t % 30 != 0 {
                v.push(ProfileViolation::OffGrid { index: i });
            }
            if t <= s || e.weekday > 6 {
                v.push(ProfileViolation::EmptyOrInverted { index: i });
            }
            for (j, f) in self.timetable.iter().enumerate().skip(i + 1) {
                let (fs, ft) = f.minutes();
                if e.weekday == f.weekday && s < ft && fs < t {
                    v.push(ProfileViolation::Overlap { a: i, b: j });
                }
            }
        }
        v
    }
}

/// splitmix64 over the parts, for independent deterministic substreams.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

const STREAM_PROFILE: u64 = 1;
const STREAM_DAY: u64 = 2;
pub(crate) const STREAM_RESPONSE: u64 = 3;
pub(crate) const STREAM_JITTER: u64 = 4;

fn block(start: (u32, u32), end: (u32, u32)) -> (NaiveTime, NaiveTime) {
    let t = |(h, m): (u32, u32)| NaiveTime::from_hms_opt(h, m, 0).expect("valid time");
    (t(start), t(end))
}

/// Candidate weekday lecture blocks.
fn lecture_blocks() -> Vec<(NaiveTime, NaiveTime)> {
    vec![block((8, 30), (10, 30)), block((10, 30), (12, 0)), block((14, 0), (16, 0)), block((16, 0), (18, 0))]
}

/// Extra weekday blocks for study, after lectures.
fn evening_blocks() -> Vec<(NaiveTime, NaiveTime)> {
    vec![block((18, 0), (19, 0)), block((20, 0), (21, 30))]
}

fn weekend_blocks() -> Vec<(NaiveTime, NaiveTime)> {
    vec![block((10, 0), (12, 0)), block((15, 0), (17, 30))]
}

fn offset_km(origin: GeoPoint, km: f64, bearing: f64) -> GeoPoint {
    let dlat = km * bearing.cos() / 111.32;
    let dlon = km * bearing.sin() / (111.32 * origin.0.to_radians().cos());
    (origin.0 + dlat, origin.1 + dlon)
}

fn normalized(w: [f64; 5]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// One profile, drawn from its own substream so cohort size does not shift others.
pub fn generate_profile(config: &CohortConfig, index: usize) -> BehaviorProfile {
    let mut rng = rng_for(&[config.seed, STREAM_PROFILE, index as u64]);
    let mut slots: Vec<(u32, NaiveTime, NaiveTime)> = (0..5)
        .flat_map(|d| lecture_blocks().into_iter().map(move |(s, e)| (d, s, e)))
        .collect();
    slots.shuffle(&mut rng);
    let n_lectures = config.lectures_per_week.draw_count(&mut rng).min(slots.len());
    let mut timetable: Vec<TimetableEntry> = slots
        .drain(..n_lectures)
        .map(|(weekday, start, end)| TimetableEntry {
            weekday,
            start,
            end,
            activity: "lecture".into(),
            location: "classroom".into(),
        })
        .collect();
    slots.extend((0..5).flat_map(|d| evening_blocks().into_iter().map(move |(s, e)| (d, s, e))));
    slots.extend((5..7).flat_map(|d| weekend_blocks().into_iter().map(move |(s, e)| (d, s, e))));
    slots.shuffle(&mut rng);
    let n_groups = config.study_groups_per_week.draw_count(&mut rng).min(slots.len());
    for (weekday, start, end) in slots.drain(..n_groups) {
        timetable.push(TimetableEntry { weekday, start, end, activity: "study_group".into(), location: "library".into() });
    }
    let n_alone = config.study_alone_per_week.draw_count(&mut rng).min(slots.len());
    for (weekday, start, end) in slots.drain(..n_alone) {
        let location = if rng.gen_bool(config.library_study_share.clamp(0.0, 1.0)) { "library" } else { "home" };
        timetable.push(TimetableEntry { weekday, start, end, activity: "study_alone".into(), location: location.into() });
    }
    timetable.sort_by_key(|e| (e.weekday, e.start));

    let base_answer = config.base_answer.draw(&mut rng);
    let busy_answer = config.busy_answer.draw(&mut rng).min(base_answer * 0.5);
    let km = config.places.home_distance_km.draw(&mut rng);
    let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
    let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(0.5..1.5);
    let mood_free = normalized([3.0 * jitter(&mut rng), 3.0 * jitter(&mut rng), jitter(&mut rng), 0.5 * jitter(&mut rng), 0.3 * jitter(&mut rng)]);
    let mood_busy = normalized([jitter(&mut rng), 2.0 * jitter(&mut rng), 2.0 * jitter(&mut rng), 2.0 * jitter(&mut rng), 0.5 * jitter(&mut rng)]);
    BehaviorProfile {
        id: format!("S{:03}", index + 1),
        timetable,
        base_answer,
        busy_answer,
        delay_p: config.delay_p.draw(&mut rng),
        snooze: config.snooze.draw(&mut rng),
        home: offset_km(config.places.classroom, km, bearing),
        mood_free,
        mood_busy,
        gender: rng.gen_range(0..2),
        department: rng.gen_range(0..4),
        extraversion: (rng.gen_range(1.0..5.0_f64) * 10.0).round() / 10.0,
    }
}

/// `config.size` profiles with ids `S001`, `S002`, ...
pub fn generate_cohort(config: &CohortConfig) -> Vec<BehaviorProfile> {
    (0..config.size).map(|i| generate_profile(config, i)).collect()
}

/// A stretch of one day doing one thing somewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start_minute: u32,
    pub end_minute: u32,
    pub activity: String,
    pub location: String,
    pub position: GeoPoint,
}

impl Episode {
    pub fn busy(&self) -> bool {
        BUSY_ACTIVITIES.contains(&self.activity.as_str())
    }
}

/// The ground-truth day of one participant: contiguous episodes covering 00:00–24:00.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPlan {
    pub date: NaiveDate,
    pub episodes: Vec<Episode>,
}

impl DayPlan {
    pub fn at_minute(&self, minute: u32) -> &Episode {
        let i = self.episodes.partition_point(|e| e.end_minute <= minute);
        &self.episodes[i.min(self.episodes.len() - 1)]
    }

    pub fn busy_minutes(&self) -> impl Iterator<Item = u32> + '_ {
        self.episodes.iter().filter(|e| e.busy()).flat_map(|e| e.start_minute..e.end_minute)
    }
}

fn place(config: &CohortConfig, profile: &BehaviorProfile, location: &str, outdoor_spot: usize) -> GeoPoint {
    let p = &config.places;
    match location {
        "classroom" => p.classroom,
        "library" => p.library,
        "canteen" => p.canteen,
        "outdoors" if !p.outdoors.is_empty() => p.outdoors[outdoor_spot % p.outdoors.len()],
        _ => profile.home,
    }
}

/// Ground truth for `profile` on `date`. Depends only on the seed, the participant index and
/// the date, never on how the service treats the participant.
pub fn day_plan(config: &CohortConfig, index: usize, profile: &BehaviorProfile, date: NaiveDate) -> DayPlan {
    let day_no = (date - config.start).num_days();
    let mut rng = rng_for(&[config.seed, STREAM_DAY, index as u64, day_no as u64]);
    let weekday = date.weekday().num_days_from_monday();
    let attended: Vec<&TimetableEntry> = profile
        .timetable
        .iter()
        .filter(|e| e.weekday == weekday)
        .filter(|_| rng.gen_bool(config.attendance.clamp(0.0, 1.0)))
        .collect();
    let on_campus = attended.iter().any(|e| e.location != "home");

    // Background routine in 30-minute cells, then attended blocks on top.
    let cells = (MINUTES_PER_DAY / 30) as usize;
    let mut acts: Vec<(String, String, usize)> = Vec::with_capacity(cells);
    let mut hour_outdoors = [false; 24];
    let mut hour_spot = [0usize; 24];
    for h in 0..24 {
        hour_outdoors[h] = rng.gen_bool(config.outdoors_share.clamp(0.0, 1.0));
        hour_spot[h] = rng.gen_range(0..8);
    }
    for c in 0..cells {
        let minute = c as u32 * 30;
        let hour = (minute / 60) as usize;
        let (a, l) = match minute {
            m if m < 7 * 60 => ("sleeping", "home"),
            m if (12 * 60..13 * 60).contains(&m) => ("eating", if on_campus { "canteen" } else { "home" }),
            m if (19 * 60..20 * 60).contains(&m) => ("eating", "home"),
            _ if hour_outdoors[hour] => ("free_time", "outdoors"),
            _ => ("free_time", "home"),
        };
        acts.push((a.to_string(), l.to_string(), hour_spot[hour]));
    }
    for e in &attended {
        let (s, t) = e.minutes();
        for c in (s / 30)..(t / 30) {
            acts[c as usize] = (e.activity.clone(), e.location.clone(), 0);
        }
    }
    let mut episodes: Vec<Episode> = Vec::new();
    for (c, (a, l, spot)) in acts.into_iter().enumerate() {
        let start = c as u32 * 30;
        let pos = place(config, profile, &l, spot);
        match episodes.last_mut() {
            Some(last) if last.activity == a && last.location == l && last.position == pos => last.end_minute = start + 30,
            _ => episodes.push(Episode { start_minute: start, end_minute: start + 30, activity: a, location: l, position: pos }),
        }
    }
    DayPlan { date, episodes }
}

/// The plan the demo and acceptance experiments run: nine daily activity questions between
/// 08:30 and 20:30 and a geo reading every 15 minutes.
pub fn demo_plan(start: NaiveDate, days: u32) -> ExperimentPlan {
    ExperimentPlan {
        format_version: PLAN_FORMAT_VERSION,
        id: "diary".into(),
        researcher: "researcher".into(),
        start,
        end: start + Duration::days(i64::from(days)),
        templates: vec![
            TaskTemplate {
                id: "what".into(),
                kind: TaskKind::Question { question: QuestionKind::What },
                recurrence: Recurrence::Daily { times: (0..9).map(|i| clock(8 * 60 + 30 + i * 90)).collect() },
                validity_minutes: 60,
                priority: 1,
            },
            TaskTemplate {
                id: "geo".into(),
                kind: TaskKind::Sensor { sensor: SensorKind::Geo },
                recurrence: Recurrence::Every { minutes: 15 },
                validity_minutes: 15,
                priority: 0,
            },
        ],
        constraints: PlanConstraints {
            min_gap_minutes: 30,
            quiet_hours: Some(DailyInterval::new(clock(22 * 60), clock(7 * 60 + 30))),
            max_daily_questions: 12,
        },
    }
}

#[cfg(test)]
mod tests;
