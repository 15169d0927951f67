//! Entities, relations and structural validation of context graphs.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use super::ContextError;
use crate::time::Timestamp;

pub type EntityId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttributeValue {
    Text { value: String },
    Number {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Timestamp { value: Timestamp },
    Geo { latitude: f64, longitude: f64 },
}

impl AttributeValue {
    pub fn text(value: impl Into<String>) -> Self {
        AttributeValue::Text { value: value.into() }
    }

    pub fn number(value: f64, unit: Option<&str>) -> Self {
        AttributeValue::Number { value, unit: unit.map(str::to_string) }
    }

    pub fn timestamp(value: Timestamp) -> Self {
        AttributeValue::Timestamp { value }
    }

    pub fn geo(latitude: f64, longitude: f64) -> Result<Self, ContextError> {
        if geo_in_bounds(latitude, longitude) {
            Ok(AttributeValue::Geo { latitude, longitude })
        } else {
            Err(ContextError::InvalidGeo { latitude, longitude })
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttributeValue::Text { value } => Some(value),
            _ => None,
        }
    }
}

pub fn geo_in_bounds(latitude: f64, longitude: f64) -> bool {
    (-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub class: String,
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl Entity {
    pub fn new(id: EntityId, class: &str) -> Self {
        Self { id, class: class.to_string(), attributes: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: AttributeValue) -> Self {
        self.attributes.insert(key.to_string(), value);
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.attributes.get("Name").and_then(AttributeValue::as_text)
    }

    /// Latitude/longitude stored under `Position`.
    pub fn position(&self) -> Option<(f64, f64)> {
        match self.attributes.get("Position") {
            Some(AttributeValue::Geo { latitude, longitude }) => Some((*latitude, *longitude)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Predicate {
    PartOf,
    In,
    HasActivity,
    With,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub subject: EntityId,
    pub predicate: Predicate,
    pub object: EntityId,
}

impl Relation {
    pub fn new(subject: &str, predicate: Predicate, object: &str) -> Self {
        Self { subject: subject.to_string(), predicate, object: object.to_string() }
    }
}

/// Entities sorted by id and relations sorted lexicographically, so equal graphs serialize
/// identically.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextGraph {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

impl ContextGraph {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        match self.entities.binary_search_by(|e| e.id.as_str().cmp(id)) {
            Ok(i) => Some(&self.entities[i]),
            // graphs built by hand may be unsorted
            Err(_) => self.entities.iter().find(|e| e.id == id),
        }
    }

    pub fn entity_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.id == id)
    }

    /// Insert unless an entity with the same id exists. Returns the id.
    pub fn upsert(&mut self, entity: Entity) -> EntityId {
        let id = entity.id.clone();
        if let Err(pos) = self.entities.binary_search_by(|e| e.id.cmp(&entity.id)) {
            self.entities.insert(pos, entity);
        }
        id
    }

    pub fn relate(&mut self, subject: &str, predicate: Predicate, object: &str) {
        let rel = Relation::new(subject, predicate, object);
        if let Err(pos) = self.relations.binary_search(&rel) {
            self.relations.insert(pos, rel);
        }
    }

    /// Follow `PartOf` edges from `id` to an entity with no parent. Stops on cycles.
    pub fn part_of_root<'a>(&'a self, id: &'a str) -> &'a str {
        let mut seen = BTreeSet::new();
        let mut current = id;
        while seen.insert(current) {
            match self
                .relations
                .iter()
                .find(|r| r.predicate == Predicate::PartOf && r.subject == current)
            {
                Some(r) => current = &r.object,
                None => break,
            }
        }
        current
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingRef {
    /// Where the reference occurs, e.g. `relation[3].object` or `wo[0]`.
    pub location: String,
    pub missing: EntityId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub duplicate_ids: Vec<EntityId>,
    pub empty_classes: Vec<EntityId>,
    pub dangling: Vec<DanglingRef>,
    /// Each cycle lists its member ids in ascending order.
    pub part_of_cycles: Vec<Vec<EntityId>>,
    pub invalid_geo: Vec<EntityId>,
    pub invalid_mood: Option<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.error_count() == 0
    }

    pub fn error_count(&self) -> usize {
        self.duplicate_ids.len()
            + self.empty_classes.len()
            + self.dangling.len()
            + self.part_of_cycles.len()
            + self.invalid_geo.len()
            + usize::from(self.invalid_mood.is_some())
    }
}

pub fn validate_graph(graph: &ContextGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = BTreeSet::new();
    for e in &graph.entities {
        if !ids.insert(e.id.as_str()) && !report.duplicate_ids.contains(&e.id) {
            report.duplicate_ids.push(e.id.clone());
        }
        if e.class.trim().is_empty() {
            report.empty_classes.push(e.id.clone());
        }
        let bad_geo = e.attributes.values().any(|v| {
            matches!(v, AttributeValue::Geo { latitude, longitude } if !geo_in_bounds(*latitude, *longitude))
        });
        if bad_geo {
            report.invalid_geo.push(e.id.clone());
        }
    }
    for (i, r) in graph.relations.iter().enumerate() {
        if !ids.contains(r.subject.as_str()) {
            report.dangling.push(DanglingRef { location: format!("relation[{i}].subject"), missing: r.subject.clone() });
        }
        if !ids.contains(r.object.as_str()) {
            report.dangling.push(DanglingRef { location: format!("relation[{i}].object"), missing: r.object.clone() });
        }
    }
    report.part_of_cycles = part_of_cycles(graph);
    report
}

fn part_of_cycles(graph: &ContextGraph) -> Vec<Vec<EntityId>> {
    let mut g: DiGraphMap<&str, ()> = DiGraphMap::new();
    for r in graph.relations.iter().filter(|r| r.predicate == Predicate::PartOf) {
        g.add_edge(r.subject.as_str(), r.object.as_str(), ());
    }
    let mut cycles: Vec<Vec<EntityId>> = tarjan_scc(&g)
        .into_iter()
        .filter(|scc| scc.len() > 1 || g.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut ids: Vec<EntityId> = scc.into_iter().map(str::to_string).collect();
            ids.sort();
            ids
        })
        .collect();
    cycles.sort();
    cycles
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str) -> Entity {
        Entity::new(id.to_string(), "Room")
    }

    #[test]
    fn detects_single_part_of_cycle() {
        let mut g = ContextGraph::default();
        g.upsert(node("A"));
        g.upsert(node("B"));
        g.relate("A", Predicate::PartOf, "B");
        g.relate("B", Predicate::PartOf, "A");
        let report = validate_graph(&g);
        assert_eq!(report.part_of_cycles, vec![vec!["A".to_string(), "B".to_string()]]);
        assert_eq!(report.error_count(), 1);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut g = ContextGraph::default();
        g.upsert(node("A"));
        g.relate("A", Predicate::PartOf, "A");
        assert_eq!(validate_graph(&g).part_of_cycles.len(), 1);
    }

    #[test]
    fn in_edges_do_not_form_part_of_cycles() {
        let mut g = ContextGraph::default();
        g.upsert(node("A"));
        g.upsert(node("B"));
        g.relate("A", Predicate::In, "B");
        g.relate("B", Predicate::In, "A");
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn reports_duplicates_dangling_and_empty_class() {
        let g = ContextGraph {
            entities: vec![node("A"), node("A"), Entity::new("C".into(), " ")],
            relations: vec![Relation::new("A", Predicate::In, "Z")],
        };
        let report = validate_graph(&g);
        assert_eq!(report.duplicate_ids, vec!["A".to_string()]);
        assert_eq!(report.empty_classes, vec!["C".to_string()]);
        assert_eq!(report.dangling.len(), 1);
        assert_eq!(report.dangling[0].missing, "Z");
    }

    #[test]
    fn geo_bounds_enforced() {
        assert!(AttributeValue::geo(46.07, 11.12).is_ok());
        assert!(AttributeValue::geo(91.0, 0.0).is_err());
        assert!(AttributeValue::geo(0.0, -180.5).is_err());
        let g = ContextGraph {
            entities: vec![node("A").with("Position", AttributeValue::Geo { latitude: 100.0, longitude: 0.0 })],
            relations: vec![],
        };
        assert_eq!(validate_graph(&g).invalid_geo, vec!["A".to_string()]);
    }

    #[test]
    fn part_of_root_stops_on_cycle() {
        let mut g = ContextGraph::default();
        g.relate("A", Predicate::PartOf, "B");
        g.relate("B", Predicate::PartOf, "A");
        let root = g.part_of_root("A");
        assert!(root == "A" || root == "B");
    }
}
