//! Closed vocabularies for diary answers.
//!
//! Every answer a participant gives must name a term configured for the experiment. Terms
//! carry the entity class used in the context graph and, for locations, an optional parent
//! location (e.g. a sitting room that is part of a home).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Activities encoded as busy (label 1) by the scheduler.
pub const BUSY_ACTIVITIES: [&str; 3] = ["study_alone", "study_group", "lecture"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_of: Option<String>,
}

impl Term {
    pub fn new(name: &str, class: &str) -> Self {
        Self { name: name.to_string(), class: class.to_string(), part_of: None }
    }

    pub fn within(mut self, parent: &str) -> Self {
        self.part_of = Some(parent.to_string());
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("unknown {field} term {term:?}")]
    UnknownTerm { field: &'static str, term: String },
    #[error("location {0:?} has a part-of chain that does not terminate")]
    CyclicLocation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub activities: Vec<Term>,
    pub locations: Vec<Term>,
    pub moods: Vec<String>,
    pub objects: Vec<Term>,
    pub persons: Vec<Term>,
}

impl Vocabulary {
    pub fn activity(&self, name: &str) -> Result<&Term, VocabError> {
        find(&self.activities, name, "what")
    }

    pub fn location(&self, name: &str) -> Result<&Term, VocabError> {
        find(&self.locations, name, "where")
    }

    pub fn object(&self, name: &str) -> Result<&Term, VocabError> {
        find(&self.objects, name, "objects")
    }

    pub fn person(&self, name: &str) -> Result<&Term, VocabError> {
        find(&self.persons, name, "who")
    }

    /// Position of `mood` in the mood list.
    pub fn mood_index(&self, mood: &str) -> Result<usize, VocabError> {
        self.moods
            .iter()
            .position(|m| m == mood)
            .ok_or_else(|| VocabError::UnknownTerm { field: "mood", term: mood.to_string() })
    }

    /// The chain `[location, parent, grandparent, ...]`.
    pub fn location_chain(&self, name: &str) -> Result<Vec<&Term>, VocabError> {
        let mut chain = vec![self.location(name)?];
        while let Some(parent) = chain.last().and_then(|t| t.part_of.as_deref()) {
            if chain.len() > self.locations.len() {
                return Err(VocabError::CyclicLocation(name.to_string()));
            }
            chain.push(self.location(parent)?);
        }
        Ok(chain)
    }

    /// 1 for study and lecture activities, 0 for every other known activity.
    pub fn encode_label(&self, activity: &str) -> Result<u8, VocabError> {
        self.activity(activity)?;
        Ok(u8::from(BUSY_ACTIVITIES.contains(&activity)))
    }

    /// The vocabulary used by the bundled simulator and demo.
    pub fn student_default() -> Self {
        let acts = [
            ("lecture", "Lecture"),
            ("study_alone", "Study"),
            ("study_group", "Study"),
            ("sleeping", "Rest"),
            ("eating", "Meal"),
            ("free_time", "Leisure"),
            ("discussion", "Conversation"),
            ("commuting", "Travel"),
            ("sport", "Sport"),
        ];
        Self {
            activities: acts.iter().map(|(n, c)| Term::new(n, c)).collect(),
            locations: vec![
                Term::new("home", "Home"),
                Term::new("sitting room", "Room").within("home"),
                Term::new("bedroom", "Room").within("home"),
                Term::new("campus", "Campus"),
                Term::new("classroom", "Room").within("campus"),
                Term::new("library", "Building").within("campus"),
                Term::new("canteen", "Building").within("campus"),
                Term::new("outdoors", "Place"),
            ],
            moods: ["happy", "neutral", "tired", "stressed", "sad"].map(String::from).to_vec(),
            objects: vec![
                Term::new("dining table", "Table"),
                Term::new("book", "Book"),
                Term::new("laptop", "Computer"),
                Term::new("notebook", "Stationery"),
                Term::new("phone", "Phone"),
                Term::new("plate", "Tableware"),
                Term::new("bed", "Furniture"),
            ],
            persons: vec![
                Term::new("Peter", "Person"),
                Term::new("Anna", "Person"),
                Term::new("Marco", "Person"),
                Term::new("Giulia", "Person"),
                Term::new("classmates", "Group"),
                Term::new("roommate", "Person"),
                Term::new("family", "Group"),
            ],
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::student_default()
    }
}

fn find<'a>(terms: &'a [Term], name: &str, field: &'static str) -> Result<&'a Term, VocabError> {
    terms
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| VocabError::UnknownTerm { field, term: name.to_string() })
}
