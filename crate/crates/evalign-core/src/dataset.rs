//! Shared dataset types: paired (event frame, image, class, prompt) samples
//! and class-disjoint train/heldout splits.

use ndarray::Array2;

use crate::event::EventFrame;

/// One class with its prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    pub prompt: String,
}

/// A paired training tuple.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub id: u64,
    pub class_id: usize,
    /// Grayscale image, values in [0, 1].
    pub image: Array2<f64>,
    pub frame: EventFrame,
    pub prompt: String,
}

/// Samples restricted to one side of the class split.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub classes: Vec<ClassInfo>,
    pub samples: Vec<PairedSample>,
}

impl Split {
    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A generated or loaded dataset with class-disjoint splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub template: String,
    pub clamp_cap: u32,
    pub seed: u64,
    pub train: Split,
    pub heldout: Split,
}

impl Dataset {
    /// Both splits merged: the corpus the teacher trains on. The teacher
    /// stands in for a model pretrained on everything, while the event
    /// encoder's alignment only ever sees the train split.
    pub fn full_split(&self) -> Split {
        let mut classes = self.train.classes.clone();
        classes.extend(self.heldout.classes.iter().cloned());
        classes.sort_by_key(|c| c.id);
        let mut samples = self.train.samples.clone();
        samples.extend(self.heldout.samples.iter().cloned());
        samples.sort_by_key(|s| s.id);
        Split { classes, samples }
    }
}
