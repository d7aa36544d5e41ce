//! Stored behaviours and their matching against received content.
//!
//! A behaviour fires when every clause of its trigger holds. `equals` needs
//! the field present and identical; `contains` is a case-insensitive
//! substring test. Reactions come out in behaviour insertion order, then in
//! the order listed inside each behaviour.

use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::dabml::{validate_behaviour, BehaviourDef, ContentSection, DabmlMessage, MatchKind, Payload, Reaction, TriggerClause};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BehaviourError {
    #[error("behaviour {0:?} already exists")]
    DuplicateId(String),
    #[error("invalid behaviour: {0}")]
    InvalidDefinition(String),
    #[error("no behaviour with id {0:?}")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acknowledgement {
    pub behaviour_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiredReaction {
    pub behaviour_id: String,
    pub reaction: Reaction,
    pub triggering_message: Arc<DabmlMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct BehaviourStore {
    behaviours: IndexMap<String, BehaviourDef>,
}

impl BehaviourStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.behaviours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviours.is_empty()
    }

    pub fn get(&self, behaviour_id: &str) -> Option<&BehaviourDef> {
        self.behaviours.get(behaviour_id)
    }

    /// Definitions in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &BehaviourDef> {
        self.behaviours.values()
    }

    pub fn add_behaviour(&mut self, def: BehaviourDef) -> Result<Acknowledgement, BehaviourError> {
        if let Some(v) = validate_behaviour(&def).into_iter().next() {
            return Err(BehaviourError::InvalidDefinition(format!("{}: {}", v.path, v.message)));
        }
        if self.behaviours.contains_key(&def.behaviour_id) {
            return Err(BehaviourError::DuplicateId(def.behaviour_id));
        }
        let behaviour_id = def.behaviour_id.clone();
        self.behaviours.insert(behaviour_id.clone(), def);
        Ok(Acknowledgement { behaviour_id })
    }

    pub fn remove_behaviour(&mut self, behaviour_id: &str) -> Result<Acknowledgement, BehaviourError> {
        // shift_remove keeps the remaining insertion order intact
        self.behaviours
            .shift_remove(behaviour_id)
            .map(|def| Acknowledgement { behaviour_id: def.behaviour_id })
            .ok_or_else(|| BehaviourError::NotFound(behaviour_id.to_owned()))
    }

    /// Reactions triggered by `msg`. Only content payloads can match.
    pub fn match_message(&self, msg: &Arc<DabmlMessage>) -> Vec<FiredReaction> {
        if !matches!(msg.payload, Payload::AudioContent(_) | Payload::DataContent(_)) {
            return Vec::new();
        }
        self.behaviours
            .values()
            .filter(|def| def.trigger.iter().all(|clause| clause_holds(clause, msg)))
            .flat_map(|def| {
                def.reactions.iter().map(|reaction| FiredReaction {
                    behaviour_id: def.behaviour_id.clone(),
                    reaction: reaction.clone(),
                    triggering_message: Arc::clone(msg),
                })
            })
            .collect()
    }
}

fn field_value<'a>(clause: &TriggerClause, msg: &'a DabmlMessage) -> Option<&'a str> {
    match (&msg.payload, clause.field.section) {
        (Payload::AudioContent(audio), ContentSection::Audio) => audio.field(&clause.field.field),
        (Payload::DataContent(data), ContentSection::Data) => data.field(&clause.field.field),
        _ => None,
    }
}

pub fn clause_holds(clause: &TriggerClause, msg: &DabmlMessage) -> bool {
    let Some(value) = field_value(clause, msg) else { return false };
    match clause.kind {
        MatchKind::Equals => value == clause.value,
        MatchKind::Contains => value.to_lowercase().contains(&clause.value.to_lowercase()),
    }
}
