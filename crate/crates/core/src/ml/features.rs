//! Feature extraction over a per-participant history of sensor readings, answers and
//! deliveries.

use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, Timelike};
use serde::{Deserialize, Serialize};

use crate::context::{SensorBatch, SensorValue};
use crate::plan::{ActionState, Schedule};
use crate::store::{AnswerRecord, LtmPayload, LtmStore};
use crate::time::{weekday_index, Timestamp};

const METERS_PER_DEGREE: f64 = 111_320.0;

/// Approximate ground distance in meters (equirectangular).
pub fn distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lat = ((a.0 + b.0) / 2.0).to_radians();
    let dy = (a.0 - b.0) * METERS_PER_DEGREE;
    let dx = (a.1 - b.1) * METERS_PER_DEGREE * lat.cos();
    (dx * dx + dy * dy).sqrt()
}

/// Named places as cluster centers; positions farther than `radius_m` from every center map
/// to the unknown slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationClusters {
    pub centers: Vec<(f64, f64)>,
    pub radius_m: f64,
}

impl Default for LocationClusters {
    fn default() -> Self {
        Self { centers: Vec::new(), radius_m: 150.0 }
    }
}

impl LocationClusters {
    pub fn assign(&self, p: (f64, f64)) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.centers.iter().enumerate() {
            let d = distance_m(p, *c);
            if d <= self.radius_m && best.is_none_or(|b| d < b.0) {
                best = Some((d, i));
            }
        }
        best.map(|b| b.1)
    }

    /// Seed `k` centers at the densest grid cells (cell side = radius), then refine with
    /// Lloyd iterations over the points within radius. Deterministic for a given input.
    pub fn fit(points: &[(f64, f64)], k: usize, radius_m: f64) -> Self {
        if points.is_empty() || k == 0 {
            return Self { centers: Vec::new(), radius_m };
        }
        let lat0 = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
        let dlat = radius_m / METERS_PER_DEGREE;
        let dlon = radius_m / (METERS_PER_DEGREE * lat0.to_radians().cos().max(1e-6));
        let mut cells: BTreeMap<(i64, i64), (usize, f64, f64)> = BTreeMap::new();
        for p in points {
            let key = ((p.0 / dlat).floor() as i64, (p.1 / dlon).floor() as i64);
            let e = cells.entry(key).or_default();
            e.0 += 1;
            e.1 += p.0;
            e.2 += p.1;
        }
        let mut ranked: Vec<_> = cells.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.0.cmp(&b.0)));
        let mut clusters = Self {
            centers: ranked.iter().take(k).map(|(_, (n, la, lo))| (la / *n as f64, lo / *n as f64)).collect(),
            radius_m,
        };
        for _ in 0..10 {
            let mut sums = vec![(0usize, 0.0, 0.0); clusters.centers.len()];
            for p in points {
                if let Some(i) = clusters.assign(*p) {
                    sums[i].0 += 1;
                    sums[i].1 += p.0;
                    sums[i].2 += p.1;
                }
            }
            let next: Vec<(f64, f64)> = sums
                .iter()
                .zip(&clusters.centers)
                .map(|((n, la, lo), c)| if *n == 0 { *c } else { (la / *n as f64, lo / *n as f64) })
                .collect();
            if next == clusters.centers {
                break;
            }
            clusters.centers = next;
        }
        clusters
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSchema {
    pub clusters: LocationClusters,
    pub moods: Vec<String>,
    pub static_slots: Vec<String>,
    pub geo_window_minutes: i64,
    pub companion_window_minutes: i64,
    pub response_window_hours: i64,
    pub impute_weeks: i64,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            clusters: LocationClusters::default(),
            moods: crate::vocab::Vocabulary::default().moods,
            static_slots: Vec::new(),
            geo_window_minutes: 15,
            companion_window_minutes: 120,
            response_window_hours: 48,
            impute_weeks: 3,
        }
    }
}

pub const NEUTRAL_RESPONSE_RATE: f64 = 0.5;

impl FeatureSchema {
    pub fn with_clusters(clusters: LocationClusters) -> Self {
        Self { clusters, ..Self::default() }
    }

    pub fn dimension(&self) -> usize {
        2 + 7 + self.clusters.centers.len() + 1 + 3 + self.static_slots.len()
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["hour_sin".to_string(), "hour_cos".to_string()];
        v.extend((0..7).map(|i| format!("weekday_{i}")));
        v.extend((0..self.clusters.centers.len()).map(|i| format!("location_{i}")));
        v.push("location_unknown".into());
        v.extend(["companion".into(), "response_rate".into(), "mood".into()]);
        v.extend(self.static_slots.iter().map(|s| format!("static_{s}")));
        v
    }

    /// Assemble a vector from already-resolved situational values.
    pub fn assemble(&self, at: Timestamp, situation: &Situation, statics: &BTreeMap<String, f64>) -> Vec<f64> {
        let hour = f64::from(at.hour()) + f64::from(at.minute()) / 60.0 + f64::from(at.second()) / 3600.0;
        let angle = 2.0 * std::f64::consts::PI * hour / 24.0;
        let mut v = Vec::with_capacity(self.dimension());
        v.push(angle.sin());
        v.push(angle.cos());
        let wd = weekday_index(&at);
        v.extend((0..7).map(|i| if i == wd { 1.0 } else { 0.0 }));
        let k = self.clusters.centers.len();
        let slot = situation.cluster.filter(|c| *c < k).unwrap_or(k);
        v.extend((0..=k).map(|i| if i == slot { 1.0 } else { 0.0 }));
        v.push(if situation.companion { 1.0 } else { 0.0 });
        v.push(situation.response_rate);
        v.push(situation.mood.and_then(|m| i32::try_from(m).ok()).map_or(-1.0, f64::from));
        v.extend(self.static_slots.iter().map(|s| statics.get(s).copied().unwrap_or(0.0)));
        v
    }
}

/// The situational slots of one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Situation {
    pub cluster: Option<usize>,
    pub companion: bool,
    pub response_rate: f64,
    pub mood: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct AnswerPoint {
    at: Timestamp,
    companion: bool,
    mood: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticipantHistory {
    geo: Vec<(Timestamp, (f64, f64))>,
    answers: Vec<AnswerPoint>,
    deliveries: Vec<(Timestamp, String)>,
    answered: HashMap<String, Timestamp>,
    pub statics: BTreeMap<String, f64>,
}

fn insert_by_time<T>(v: &mut Vec<(Timestamp, T)>, t: Timestamp, item: T) {
    let i = v.partition_point(|(x, _)| *x <= t);
    v.insert(i, (t, item));
}

/// Time-indexed history of every participant, fed incrementally as data arrives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryIndex {
    participants: BTreeMap<String, ParticipantHistory>,
}

impl HistoryIndex {
    /// Index everything currently in the stores.
    pub fn from_stores(schedule: &Schedule, ltm: &LtmStore) -> Self {
        let mut h = Self::default();
        for r in ltm.records() {
            match &r.payload {
                LtmPayload::Sensor(b) => h.observe_sensors(b),
                LtmPayload::Answer(a) => h.observe_answer(a),
                LtmPayload::Snapshot(_) => {}
            }
        }
        for a in schedule.actions.values().filter(|a| a.is_question()) {
            if let Some(t) = a.first_notified() {
                h.observe_delivery(&a.participant, &a.id, t);
            }
            if let ActionState::Answered { at } = a.state {
                h.observe_answered(&a.participant, &a.id, at);
            }
        }
        h
    }

    fn entry(&mut self, p: &str) -> &mut ParticipantHistory {
        self.participants.entry(p.to_string()).or_default()
    }

    pub fn participant(&self, p: &str) -> Option<&ParticipantHistory> {
        self.participants.get(p)
    }

    pub fn observe_sensors(&mut self, batch: &SensorBatch) {
        let h = self.entry(&batch.participant);
        for r in &batch.readings {
            if let SensorValue::Geo { latitude, longitude } = r.value {
                insert_by_time(&mut h.geo, r.at, (latitude, longitude));
            }
        }
    }

    pub fn observe_answer(&mut self, a: &AnswerRecord) {
        let h = self.entry(&a.participant);
        let point = AnswerPoint { at: a.answer_time, companion: !a.answers.who.is_empty(), mood: a.answers.mood.clone() };
        let i = h.answers.partition_point(|x| x.at <= point.at);
        h.answers.insert(i, point);
    }

    /// First delivery of a question.
    pub fn observe_delivery(&mut self, participant: &str, action_id: &str, at: Timestamp) {
        insert_by_time(&mut self.entry(participant).deliveries, at, action_id.to_string());
    }

    pub fn observe_answered(&mut self, participant: &str, action_id: &str, at: Timestamp) {
        self.entry(participant).answered.insert(action_id.to_string(), at);
    }

    pub fn set_static(&mut self, participant: &str, name: &str, value: f64) {
        self.entry(participant).statics.insert(name.to_string(), value);
    }

    /// All geo positions, for fitting location clusters.
    pub fn geo_points(&self) -> Vec<(f64, f64)> {
        self.participants.values().flat_map(|h| h.geo.iter().map(|g| g.1)).collect()
    }

    /// Geo positions recorded before `until`.
    pub fn geo_points_before(&self, until: Timestamp) -> Vec<(f64, f64)> {
        self.participants.values().flat_map(|h| h.geo.iter().take_while(move |g| g.0 < until).map(|g| g.1)).collect()
    }

    fn geo_near(&self, p: &str, from: Timestamp, to: Timestamp, target: Timestamp) -> Option<(f64, f64)> {
        let h = self.participants.get(p)?;
        let lo = h.geo.partition_point(|g| g.0 < from);
        let hi = h.geo.partition_point(|g| g.0 <= to);
        h.geo[lo..hi].iter().min_by_key(|g| ((g.0 - target).num_seconds().abs(), std::cmp::Reverse(g.0))).map(|g| g.1)
    }

    fn last_answer_before(&self, p: &str, at: Timestamp, window: Duration) -> Option<&AnswerPoint> {
        let h = self.participants.get(p)?;
        let i = h.answers.partition_point(|a| a.at < at);
        h.answers[..i].last().filter(|a| a.at >= at - window)
    }

    /// Answered share of questions first delivered in `[at - window, at)`, counting answers
    /// given before `at`. `None` when nothing was delivered.
    pub fn response_rate(&self, p: &str, at: Timestamp, window: Duration) -> Option<f64> {
        let h = self.participants.get(p)?;
        let lo = h.deliveries.partition_point(|d| d.0 < at - window);
        let hi = h.deliveries.partition_point(|d| d.0 < at);
        let sent = &h.deliveries[lo..hi];
        if sent.is_empty() {
            return None;
        }
        let answered = sent.iter().filter(|(_, id)| h.answered.get(id).is_some_and(|t| *t < at)).count();
        Some(answered as f64 / sent.len() as f64)
    }

    fn mood_index(schema: &FeatureSchema, mood: Option<&String>) -> Option<usize> {
        mood.and_then(|m| schema.moods.iter().position(|x| x == m))
    }

    /// The situation at `at` from data available at that instant: the latest geo reading in
    /// the preceding window, the last answer within the companion window, and the trailing
    /// response rate.
    pub fn observed_situation(&self, p: &str, at: Timestamp, schema: &FeatureSchema) -> Situation {
        let geo = self.geo_near(p, at - Duration::minutes(schema.geo_window_minutes), at, at);
        let last = self.last_answer_before(p, at, Duration::minutes(schema.companion_window_minutes));
        Situation {
            cluster: geo.and_then(|g| schema.clusters.assign(g)),
            companion: last.is_some_and(|a| a.companion),
            response_rate: self
                .response_rate(p, at, Duration::hours(schema.response_window_hours))
                .unwrap_or(NEUTRAL_RESPONSE_RATE),
            mood: last.and_then(|a| Self::mood_index(schema, a.mood.as_ref())),
        }
    }

    /// The situation at a future instant, imputed from the same weekday and clock time in up
    /// to `impute_weeks` past weeks (modal location, majority companion flag, most recent
    /// mood) and the response rate as of `as_of`.
    pub fn imputed_situation(&self, p: &str, at: Timestamp, as_of: Timestamp, schema: &FeatureSchema) -> Situation {
        let half = Duration::minutes(schema.geo_window_minutes);
        let mut votes: BTreeMap<Option<usize>, (usize, usize)> = BTreeMap::new();
        let (mut with, mut seen) = (0, 0);
        let mut mood = None;
        for w in 1..=schema.impute_weeks {
            let t = at - Duration::weeks(w);
            if t > as_of {
                continue;
            }
            if let Some(g) = self.geo_near(p, t - half, (t + half).min(as_of), t) {
                let e = votes.entry(schema.clusters.assign(g)).or_insert((0, usize::MAX));
                e.0 += 1;
                e.1 = e.1.min(w as usize);
            }
            if let Some(a) = self.last_answer_before(p, t, Duration::minutes(schema.companion_window_minutes)) {
                seen += 1;
                with += usize::from(a.companion);
                if mood.is_none() {
                    mood = Self::mood_index(schema, a.mood.as_ref());
                }
            }
        }
        let cluster = votes.into_iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).and_then(|(c, _)| c);
        Situation {
            cluster,
            companion: seen > 0 && 2 * with > seen,
            response_rate: self
                .response_rate(p, as_of, Duration::hours(schema.response_window_hours))
                .unwrap_or(NEUTRAL_RESPONSE_RATE),
            mood,
        }
    }

    fn statics(&self, p: &str) -> BTreeMap<String, f64> {
        self.participants.get(p).map(|h| h.statics.clone()).unwrap_or_default()
    }

    pub fn extract_features(&self, p: &str, at: Timestamp, schema: &FeatureSchema) -> Vec<f64> {
        schema.assemble(at, &self.observed_situation(p, at, schema), &self.statics(p))
    }

    /// Features for `at`, observed when `at <= as_of` and imputed otherwise.
    pub fn features_as_of(&self, p: &str, at: Timestamp, as_of: Timestamp, schema: &FeatureSchema) -> Vec<f64> {
        if at <= as_of {
            return self.extract_features(p, at, schema);
        }
        schema.assemble(at, &self.imputed_situation(p, at, as_of, schema), &self.statics(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{DiaryAnswerSet, SensorReading};
    use crate::time::at;
    use chrono::{NaiveDate, NaiveTime};

    fn ts(d: u32, h: u32, m: u32) -> Timestamp {
        // 2024-03-04 is a Monday
        at(NaiveDate::from_ymd_opt(2024, 3, 4 + d).unwrap(), NaiveTime::from_hms_opt(h, m, 0).unwrap())
    }

    const CAMPUS: (f64, f64) = (46.0670, 11.1500);
    const HOME: (f64, f64) = (46.0500, 11.1200);

    fn schema() -> FeatureSchema {
        FeatureSchema::with_clusters(LocationClusters { centers: vec![CAMPUS, HOME], radius_m: 150.0 })
    }

    fn answer(id: &str, notified: Timestamp, answered: Timestamp, who: &[&str], mood: Option<&str>) -> AnswerRecord {
        AnswerRecord {
            action_id: id.into(),
            participant: "P1".into(),
            template_id: "q".into(),
            notification_time: notified,
            answer_time: answered,
            answers: DiaryAnswerSet {
                who: who.iter().map(|s| s.to_string()).collect(),
                mood: mood.map(str::to_string),
                ..Default::default()
            },
        }
    }

    #[test]
    fn time_slots_follow_the_clock() {
        let s = schema();
        let v = HistoryIndex::default().extract_features("P1", ts(1, 10, 30), &s);
        assert_eq!(v.len(), s.dimension());
        assert_eq!(v.len(), s.names().len());
        assert!((v[0] - (2.0 * std::f64::consts::PI * 10.5 / 24.0).sin()).abs() < 1e-15);
        assert!((v[1] - (2.0 * std::f64::consts::PI * 10.5 / 24.0).cos()).abs() < 1e-15);
        assert_eq!(&v[2..9], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_history_is_neutral() {
        let s = schema();
        let v = HistoryIndex::default().extract_features("P1", ts(0, 9, 0), &s);
        let names = s.names();
        let get = |n: &str| v[names.iter().position(|x| x == n).unwrap()];
        assert_eq!(get("location_unknown"), 1.0);
        assert_eq!(get("location_0") + get("location_1"), 0.0);
        assert_eq!(get("companion"), 0.0);
        assert_eq!(get("response_rate"), 0.5);
        assert_eq!(get("mood"), -1.0);
    }

    #[test]
    fn trailing_response_rate() {
        let mut h = HistoryIndex::default();
        for (i, answered) in [true, true, false, true].into_iter().enumerate() {
            let t = ts(0, 8 + 2 * i as u32, 0);
            let id = format!("a{i}");
            h.observe_delivery("P1", &id, t);
            if answered {
                h.observe_answered("P1", &id, t + Duration::minutes(5));
            }
        }
        h.observe_delivery("P1", "old", ts(0, 8, 0) - Duration::hours(49));
        assert_eq!(h.response_rate("P1", ts(1, 9, 0), Duration::hours(48)), Some(0.75));
        assert_eq!(h.response_rate("P1", ts(0, 8, 3), Duration::hours(48)), Some(0.0));
        let v = h.extract_features("P1", ts(1, 9, 0), &schema());
        assert_eq!(v[schema().names().iter().position(|n| n == "response_rate").unwrap()], 0.75);
    }

    #[test]
    fn observed_location_companion_and_mood() {
        let s = schema();
        let mut h = HistoryIndex::default();
        h.observe_sensors(&SensorBatch::new("P1", vec![SensorReading::geo(ts(0, 9, 50), CAMPUS.0 + 0.0003, CAMPUS.1)]));
        h.observe_answer(&answer("x", ts(0, 9, 0), ts(0, 9, 5), &["Peter"], Some("tired")));
        let sit = h.observed_situation("P1", ts(0, 10, 0), &s);
        assert_eq!(sit, Situation { cluster: Some(0), companion: true, response_rate: 0.5, mood: Some(2) });
        // readings after the instant are not visible
        assert_eq!(h.observed_situation("P1", ts(0, 9, 45), &s).cluster, None);
        assert!(!h.observed_situation("P1", ts(0, 11, 6), &s).companion);
    }

    #[test]
    fn imputation_uses_modal_past_location() {
        let s = schema();
        let mut h = HistoryIndex::default();
        for (w, place) in [(0u32, HOME), (1, CAMPUS), (2, CAMPUS)] {
            h.observe_sensors(&SensorBatch::new("P1", vec![SensorReading::geo(ts(7 * w, 10, 0), place.0, place.1)]));
        }
        let target = ts(21, 10, 0);
        let sit = h.imputed_situation("P1", target, ts(20, 23, 0), &s);
        assert_eq!(sit.cluster, Some(0));
        let v = h.features_as_of("P1", target, ts(20, 23, 0), &s);
        assert_eq!(v, s.assemble(target, &sit, &BTreeMap::new()));
    }

    #[test]
    fn clusters_find_dense_places() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let j = f64::from(i % 5) * 1e-5;
            pts.push((CAMPUS.0 + j, CAMPUS.1 - j));
            if i % 2 == 0 {
                pts.push((HOME.0 - j, HOME.1 + j));
            }
        }
        pts.push((45.0, 10.0));
        let c = LocationClusters::fit(&pts, 2, 150.0);
        assert_eq!(c.centers.len(), 2);
        assert!(distance_m(c.centers[0], CAMPUS) < 10.0);
        assert!(distance_m(c.centers[1], HOME) < 10.0);
        assert_eq!(c.assign((45.0, 10.0)), None);
        assert_eq!(c, LocationClusters::fit(&pts, 2, 150.0));
    }
}
