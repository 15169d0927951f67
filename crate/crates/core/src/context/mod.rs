//! Situational context as a small knowledge graph.
//!
//! A [`ContextSnapshot`] pairs the subject entity (`me`) with the five context dimensions:
//! activity (WA), location (WE), inner state (WI), objects (WO) and companions (WU). Diary
//! answers name vocabulary terms; each term becomes an entity whose id is derived from its
//! class and name, so the same answers always yield the same graph.

mod graph;
mod sensors;

use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{
    geo_in_bounds, validate_graph, AttributeValue, ContextGraph, DanglingRef, Entity, EntityId, Predicate,
    Relation, ValidationReport,
};
pub use sensors::{SensorBatch, SensorKind, SensorReading, SensorValue};

use crate::ids::derived_id;
use crate::time::Timestamp;
use crate::vocab::{VocabError, Vocabulary};

/// Default distance between a snapshot and the sensor readings attached to it.
pub const DEFAULT_SENSOR_WINDOW_MINUTES: i64 = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("participant id is missing")]
    MissingParticipant,
    #[error(transparent)]
    Vocabulary(#[from] VocabError),
    #[error("geo coordinate out of range: ({latitude}, {longitude})")]
    InvalidGeo { latitude: f64, longitude: f64 },
}

impl ContextError {
    /// The answer field responsible for the error, if any.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ContextError::Vocabulary(VocabError::UnknownTerm { field, .. }) => Some(field),
            ContextError::MissingParticipant => Some("participant"),
            _ => None,
        }
    }
}

/// Answers to the five context questions. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiaryAnswerSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub what: Option<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub who: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notified_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answered_at: Option<Timestamp>,
}

impl DiaryAnswerSet {
    /// Check every answered term against `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), VocabError> {
        if let Some(a) = &self.what {
            vocab.activity(a)?;
        }
        if let Some(l) = &self.location {
            vocab.location_chain(l)?;
        }
        if let Some(m) = &self.mood {
            vocab.mood_index(m)?;
        }
        for o in &self.objects {
            vocab.object(o)?;
        }
        for p in &self.who {
            vocab.person(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    WA,
    WE,
    WI,
    WO,
    WU,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DimensionValue<'a> {
    Entities(Vec<&'a Entity>),
    Mood(Option<&'a str>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub participant: String,
    pub timestamp: Timestamp,
    pub me: EntityId,
    pub wa: Option<EntityId>,
    pub we: Option<EntityId>,
    pub wi: Option<String>,
    pub wo: Vec<EntityId>,
    pub wu: Vec<EntityId>,
    pub graph: ContextGraph,
}

/// Id of the subject entity for `participant`.
pub fn me_id(participant: &str) -> EntityId {
    derived_id("me-", &[participant])
}

/// Id of a vocabulary-backed entity.
pub fn term_id(class: &str, name: &str) -> EntityId {
    derived_id("ent-", &[class, name])
}

fn term_entity(class: &str, name: &str) -> Entity {
    Entity::new(term_id(class, name), class).with("Name", AttributeValue::text(name))
}

/// Build the context graph for one set of diary answers, optionally annotated with sensors.
pub fn build_snapshot(
    vocab: &Vocabulary,
    participant: &str,
    ts: Timestamp,
    answers: &DiaryAnswerSet,
    sensors: Option<&SensorBatch>,
) -> Result<ContextSnapshot, ContextError> {
    if participant.trim().is_empty() {
        return Err(ContextError::MissingParticipant);
    }
    answers.validate(vocab)?;

    let mut graph = ContextGraph::default();
    let mut me = Entity::new(me_id(participant), "Person")
        .with("Class", AttributeValue::text("Person"))
        .with("Name", AttributeValue::text(participant));
    if let Some(mood) = &answers.mood {
        me = me.with("Mood", AttributeValue::text(mood.as_str()));
    }
    if let Some(t) = answers.notified_at {
        me = me.with("NotificationTime", AttributeValue::timestamp(t));
    }
    if let Some(t) = answers.answered_at {
        me = me.with("AnswerTime", AttributeValue::timestamp(t));
    }
    let me = graph.upsert(me);

    let wa = match &answers.what {
        Some(a) => {
            let term = vocab.activity(a)?;
            Some(graph.upsert(term_entity(&term.class, &term.name)))
        }
        None => None,
    };

    let we = match &answers.location {
        Some(l) => {
            let chain = vocab.location_chain(l)?;
            let ids: Vec<EntityId> = chain.iter().map(|t| graph.upsert(term_entity(&t.class, &t.name))).collect();
            for pair in ids.windows(2) {
                graph.relate(&pair[0], Predicate::PartOf, &pair[1]);
            }
            ids.into_iter().next()
        }
        None => None,
    };

    let mut wo = Vec::new();
    for o in &answers.objects {
        let term = vocab.object(o)?;
        let id = graph.upsert(term_entity(&term.class, &term.name));
        if !wo.contains(&id) {
            wo.push(id);
        }
    }
    let mut wu = Vec::new();
    for p in &answers.who {
        let term = vocab.person(p)?;
        let id = graph.upsert(term_entity(&term.class, &term.name));
        if !wu.contains(&id) {
            wu.push(id);
        }
    }

    if let Some(loc) = &we {
        if let Some(act) = &wa {
            graph.relate(loc, Predicate::HasActivity, act);
        }
        for x in wo.iter().chain(wu.iter()).chain(std::iter::once(&me)) {
            graph.relate(x, Predicate::In, loc);
        }
    }

    let snapshot = ContextSnapshot {
        participant: participant.to_string(),
        timestamp: ts,
        me,
        wa,
        we,
        wi: answers.mood.clone(),
        wo,
        wu,
        graph,
    };
    Ok(match sensors {
        Some(batch) => annotate_with_sensors(&snapshot, batch, Duration::minutes(DEFAULT_SENSOR_WINDOW_MINUTES)).snapshot,
        None => snapshot,
    })
}

/// Result of [`annotate_with_sensors`]: the annotated snapshot and how many readings were
/// ignored because they fell outside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub snapshot: ContextSnapshot,
    pub ignored: usize,
}

/// Attach sensor-derived attributes: the geo reading nearest the snapshot time becomes the
/// `Position` of the root of the location chain; accelerometer and app usage summaries become
/// attributes of `me`. Readings further than `window` from the snapshot are ignored.
pub fn annotate_with_sensors(snapshot: &ContextSnapshot, batch: &SensorBatch, window: Duration) -> Annotation {
    let mut out = snapshot.clone();
    let ts = snapshot.timestamp;
    let (in_window, outside): (Vec<&SensorReading>, Vec<&SensorReading>) =
        batch.readings.iter().partition(|r| (r.at - ts).abs() <= window);
    let ignored = outside.len();
    if !outside.is_empty() {
        log::warn!(
            "{} sensor reading(s) for {} outside the ±{} min window",
            ignored,
            snapshot.participant,
            window.num_minutes()
        );
    }

    let nearest_geo = in_window
        .iter()
        .filter_map(|r| match r.value {
            SensorValue::Geo { latitude, longitude } if geo_in_bounds(latitude, longitude) => {
                Some(((r.at - ts).abs(), r.at, latitude, longitude))
            }
            _ => None,
        })
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    if let (Some((_, _, lat, lon)), Some(we)) = (nearest_geo, snapshot.we.as_deref()) {
        let root = snapshot.graph.part_of_root(we).to_string();
        if let Some(entity) = out.graph.entity_mut(&root) {
            entity.attributes.insert("Position".into(), AttributeValue::Geo { latitude: lat, longitude: lon });
        }
    }

    let magnitudes: Vec<f64> = in_window
        .iter()
        .filter_map(|r| match r.value {
            SensorValue::Accelerometer { x, y, z } => Some((x * x + y * y + z * z).sqrt()),
            _ => None,
        })
        .collect();
    let mut usage: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &in_window {
        if let SensorValue::AppUsage { app, seconds } = &r.value {
            *usage.entry(app.as_str()).or_default() += seconds;
        }
    }
    if let Some(me) = out.graph.entity_mut(&snapshot.me) {
        if !magnitudes.is_empty() {
            let mean = magnitudes.iter().sum::<f64>() / magnitudes.len() as f64;
            me.attributes.insert("Acceleration".into(), AttributeValue::number(mean, Some("m/s^2")));
        }
        if let Some((app, _)) = usage.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))) {
            me.attributes.insert("AppUsage".into(), AttributeValue::text(*app));
            let total: f64 = usage.values().sum();
            me.attributes.insert("AppUsageSeconds".into(), AttributeValue::number(total, Some("s")));
        }
    }
    Annotation { snapshot: out, ignored }
}

/// Resolve one dimension of `snapshot`. Missing references are skipped.
pub fn query_dimension(snapshot: &ContextSnapshot, dim: Dimension) -> DimensionValue<'_> {
    let resolve = |ids: &mut dyn Iterator<Item = &EntityId>| -> Vec<&Entity> {
        ids.filter_map(|id| snapshot.graph.entity(id)).collect()
    };
    match dim {
        Dimension::WA => DimensionValue::Entities(resolve(&mut snapshot.wa.iter())),
        Dimension::WE => DimensionValue::Entities(resolve(&mut snapshot.we.iter())),
        Dimension::WO => DimensionValue::Entities(resolve(&mut snapshot.wo.iter())),
        Dimension::WU => DimensionValue::Entities(resolve(&mut snapshot.wu.iter())),
        Dimension::WI => DimensionValue::Mood(snapshot.wi.as_deref()),
    }
}

/// Graph validation plus the snapshot-level checks: dimension references resolve and the
/// mood is in the vocabulary.
pub fn validate_snapshot(snapshot: &ContextSnapshot, vocab: Option<&Vocabulary>) -> ValidationReport {
    let mut report = validate_graph(&snapshot.graph);
    let mut refs: Vec<(String, &EntityId)> = vec![("me".into(), &snapshot.me)];
    refs.extend(snapshot.wa.iter().map(|id| ("wa".to_string(), id)));
    refs.extend(snapshot.we.iter().map(|id| ("we".to_string(), id)));
    refs.extend(snapshot.wo.iter().enumerate().map(|(i, id)| (format!("wo[{i}]"), id)));
    refs.extend(snapshot.wu.iter().enumerate().map(|(i, id)| (format!("wu[{i}]"), id)));
    for (location, id) in refs {
        if snapshot.graph.entity(id).is_none() {
            report.dangling.push(DanglingRef { location, missing: id.clone() });
        }
    }
    if let (Some(mood), Some(v)) = (&snapshot.wi, vocab) {
        if v.mood_index(mood).is_err() {
            report.invalid_mood = Some(mood.clone());
        }
    }
    report
}

/// Serialize as a single UTF-8 JSON document with stable field order.
pub fn to_document(snapshot: &ContextSnapshot) -> String {
    serde_json::to_string(snapshot).expect("snapshot serializes")
}

pub fn from_document(doc: &str) -> Result<ContextSnapshot, serde_json::Error> {
    serde_json::from_str(doc)
}

#[cfg(test)]
mod tests;
