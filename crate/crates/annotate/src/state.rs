//! Events and the state they fold into.

use std::collections::BTreeMap;

use ptg_core::pseudo_triplets::{manifest_bytes, ManifestRow};
use ptg_core::selection::{RoundStatus, SelectionRound};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub round_id: String,
    pub pair_id: String,
    /// Stored exactly as submitted.
    pub modification_text: String,
    pub annotator_id: String,
    pub submitted_at: String,
    /// Client-chosen token; a retried submission with the same token is not stored twice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_nonce: Option<String>,
    /// Sequence number of the event that produced this record.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    RoundCreated {
        round: SelectionRound,
    },
    AnnotationSubmitted {
        round_id: String,
        pair_id: String,
        text: String,
        annotator_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_nonce: Option<String>,
    },
    AnnotationRevised {
        round_id: String,
        pair_id: String,
        text: String,
        annotator_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_nonce: Option<String>,
    },
    RoundExported {
        round_id: String,
    },
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub at: String,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Pending,
    Annotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: SelectionRound,
    /// Latest accepted annotation per pair.
    pub annotations: BTreeMap<String, AnnotationRecord>,
    /// Every accepted annotation, in log order.
    pub history: Vec<AnnotationRecord>,
}

impl RoundState {
    pub fn status_of(&self, pair_id: &str) -> PairStatus {
        if self.annotations.contains_key(pair_id) {
            PairStatus::Annotated
        } else {
            PairStatus::Pending
        }
    }

    /// Chosen pair ids without an annotation, in round order.
    pub fn missing(&self) -> Vec<String> {
        self.round
            .chosen_ids()
            .filter(|id| !self.annotations.contains_key(*id))
            .map(str::to_string)
            .collect()
    }

    /// Earlier record for `pair_id` carrying `nonce`, if any.
    pub fn by_nonce(&self, pair_id: &str, nonce: &str) -> Option<&AnnotationRecord> {
        self.history
            .iter()
            .find(|r| r.pair_id == pair_id && r.client_nonce.as_deref() == Some(nonce))
    }

    pub fn is_exported(&self) -> bool {
        self.round.status == RoundStatus::Exported
    }

    /// Triplet rows for every chosen pair, categories in name order and pairs in
    /// chosen order. Fails while any pair lacks an annotation.
    pub fn manifest_rows(&self) -> Result<Vec<ManifestRow>, ServiceError> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(ServiceError::Incomplete {
                round_id: self.round.round_id.clone(),
                missing,
            });
        }
        Ok(self
            .round
            .chosen_ids()
            .map(|id| {
                let info = &self.round.pairs[id];
                ManifestRow {
                    reference: info.ref_image_id.clone(),
                    text: self.annotations[id].modification_text.clone(),
                    target: info.target_image_id.clone(),
                    plan: None,
                }
            })
            .collect())
    }

    pub fn manifest(&self) -> Result<Vec<u8>, ServiceError> {
        Ok(manifest_bytes(&self.manifest_rows()?))
    }
}

/// Everything the service knows; a pure function of the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub rounds: BTreeMap<String, RoundState>,
    pub last_seq: u64,
}

pub(crate) fn text_is_valid(text: &str) -> bool {
    !text.trim().is_empty()
}

impl ServiceState {
    pub fn round(&self, round_id: &str) -> Result<&RoundState, ServiceError> {
        self.rounds
            .get(round_id)
            .ok_or_else(|| ServiceError::UnknownRound(round_id.to_string()))
    }

    fn writable_pair(&self, round_id: &str, pair_id: &str) -> Result<&RoundState, ServiceError> {
        let state = self.round(round_id)?;
        if state.is_exported() {
            return Err(ServiceError::ReadOnly(round_id.to_string()));
        }
        if !state.round.contains_chosen(pair_id) {
            return Err(ServiceError::UnknownPair {
                round_id: round_id.to_string(),
                pair_id: pair_id.to_string(),
            });
        }
        Ok(state)
    }

    /// Whether `event` may be applied to the current state.
    pub fn check(&self, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::RoundCreated { round } => {
                round
                    .validate()
                    .map_err(|e| ServiceError::InvalidRound(e.to_string()))?;
                if self.rounds.contains_key(&round.round_id) {
                    return Err(ServiceError::DuplicateRound(round.round_id.clone()));
                }
                Ok(())
            }
            Event::AnnotationSubmitted {
                round_id,
                pair_id,
                text,
                annotator_id,
                ..
            }
            | Event::AnnotationRevised {
                round_id,
                pair_id,
                text,
                annotator_id,
                ..
            } => {
                let state = self.writable_pair(round_id, pair_id)?;
                if !text_is_valid(text) {
                    return Err(ServiceError::EmptyText);
                }
                if annotator_id.trim().is_empty() {
                    return Err(ServiceError::MissingAnnotator);
                }
                let exists = state.annotations.contains_key(pair_id);
                let revising = matches!(event, Event::AnnotationRevised { .. });
                if exists != revising {
                    return Err(ServiceError::InvalidRound(format!(
                        "{} for pair {pair_id} that {} an annotation",
                        if revising { "revision" } else { "first submission" },
                        if exists { "already has" } else { "lacks" }
                    )));
                }
                Ok(())
            }
            Event::RoundExported { round_id } => {
                let state = self.round(round_id)?;
                if state.is_exported() {
                    return Err(ServiceError::ReadOnly(round_id.clone()));
                }
                state.manifest_rows().map(|_| ())
            }
        }
    }

    /// Folds one logged event in. Sequence numbers must strictly increase.
    pub fn apply(&mut self, logged: &LoggedEvent) -> Result<(), ServiceError> {
        if logged.seq <= self.last_seq {
            return Err(ServiceError::InvalidRound(format!(
                "sequence {} does not follow {}",
                logged.seq, self.last_seq
            )));
        }
        self.check(&logged.event)?;
        match &logged.event {
            Event::RoundCreated { round } => {
                let mut round = round.clone();
                round.status = RoundStatus::Annotating;
                self.rounds.insert(
                    round.round_id.clone(),
                    RoundState {
                        round,
                        annotations: BTreeMap::new(),
                        history: Vec::new(),
                    },
                );
            }
            Event::AnnotationSubmitted {
                round_id,
                pair_id,
                text,
                annotator_id,
                client_nonce,
            }
            | Event::AnnotationRevised {
                round_id,
                pair_id,
                text,
                annotator_id,
                client_nonce,
            } => {
                let record = AnnotationRecord {
                    round_id: round_id.clone(),
                    pair_id: pair_id.clone(),
                    modification_text: text.clone(),
                    annotator_id: annotator_id.clone(),
                    submitted_at: logged.at.clone(),
                    client_nonce: client_nonce.clone(),
                    seq: logged.seq,
                };
                let state = self.rounds.get_mut(round_id).expect("checked");
                state.history.push(record.clone());
                state.annotations.insert(pair_id.clone(), record);
            }
            Event::RoundExported { round_id } => {
                self.rounds.get_mut(round_id).expect("checked").round.status = RoundStatus::Exported;
            }
        }
        self.last_seq = logged.seq;
        Ok(())
    }
}
