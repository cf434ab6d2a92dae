use std::collections::HashSet;

use super::ModelError;
use crate::features::SpeakerId;

/// Candidate speaker profiles supplied alongside the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerInventory {
    ids: Vec<SpeakerId>,
    profiles: Vec<Vec<f64>>,
}

impl SpeakerInventory {
    pub fn new(ids: Vec<SpeakerId>, profiles: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Inventory("inventory must hold at least one profile".into()));
        }
        if ids.len() != profiles.len() {
            return Err(ModelError::Inventory(format!("{} ids but {} profiles", ids.len(), profiles.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(*id)) {
            return Err(ModelError::Inventory(format!("duplicate speaker id {dup}")));
        }
        let dim = profiles[0].len();
        for (id, p) in ids.iter().zip(&profiles) {
            if p.len() != dim || dim == 0 {
                return Err(ModelError::Inventory(format!("profile {id} has dimension {}, expected {dim}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) || p.iter().all(|v| *v == 0.0) {
                return Err(ModelError::Inventory(format!("profile {id} has zero norm or non-finite values")));
            }
        }
        Ok(Self { ids, profiles })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.profiles[0].len()
    }

    pub fn ids(&self) -> &[SpeakerId] {
        &self.ids
    }

    pub fn profiles(&self) -> &[Vec<f64>] {
        &self.profiles
    }

    pub fn id(&self, k: usize) -> &SpeakerId {
        &self.ids[k]
    }

    pub fn profile(&self, k: usize) -> &[f64] {
        &self.profiles[k]
    }

    pub fn index_of(&self, id: &SpeakerId) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn contains(&self, id: &SpeakerId) -> bool {
        self.index_of(id).is_some()
    }

    /// Profiles stacked row-wise.
    pub fn matrix_data(&self) -> Vec<f64> {
        self.profiles.iter().flatten().copied().collect()
    }

    /// Reorders entries so that new position `i` holds old entry `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
            profiles: order.iter().map(|&i| self.profiles[i].clone()).collect(),
        }
    }

    /// Every profile multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            ids: self.ids.clone(),
            profiles: self.profiles.iter().map(|p| p.iter().map(|v| v * s).collect()).collect(),
        }
    }
}
