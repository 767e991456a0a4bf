//! Feedback and adaptation: concept-targeted augmentation of a single
//! demonstration, the finetuning set, and the interactive session loop.

pub mod session;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::concept::{edit_scene, ConceptAssignment, ConceptEdit, ConceptRef, ConceptSchema, Directive};
use crate::env::trajectory::FrameEncoding;
use crate::env::{default_placement, replay, Provenance, Trajectory};
use crate::error::{DfaError, Result};
pub use session::{run_dfa, DfaConfig, DfaSession, Phase, RoundRecord, SessionLog, SessionStatus};

/// One demonstration in the finetuning set and the edit that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneEntry {
    pub trajectory: Trajectory,
    /// `None` for the user's own demonstration.
    pub edit: Option<ConceptEdit>,
}

/// The user's demonstration followed by its augmentations.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSet {
    entries: Vec<FinetuneEntry>,
}

impl FinetuneSet {
    pub fn new(demo: Trajectory) -> Self {
        Self { entries: vec![FinetuneEntry { trajectory: demo, edit: None }] }
    }

    pub fn demo(&self) -> &Trajectory {
        &self.entries[0].trajectory
    }

    pub fn extend(&mut self, augmented: Vec<FinetuneEntry>) -> Result<()> {
        let (domain, horizon) = (self.demo().domain(), self.demo().len());
        for e in &augmented {
            if e.trajectory.domain() != domain || e.trajectory.len() != horizon {
                return Err(DfaError::LengthMismatch { expected: horizon, got: e.trajectory.len() });
            }
        }
        self.entries.extend(augmented);
        Ok(())
    }

    pub fn entries(&self) -> &[FinetuneEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn augmented_count(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.entries.iter().map(|e| e.trajectory.clone()).collect()
    }

    /// Every trajectory in the JSONL trajectory format, back to back.
    pub fn write_jsonl<W: Write>(&self, mut out: W, encoding: FrameEncoding) -> Result<()> {
        for e in &self.entries {
            e.trajectory.write_jsonl(&mut out, encoding)?;
        }
        Ok(())
    }
}

/// Edits that cover every instantiation of `concept` in `scene`.
///
/// A concept of a present object yields one recoloring per value, including
/// the current one. The presence of a present object yields its removal plus
/// a recoloring to each other value; the presence of an absent object yields
/// one spawn per value at the default placement.
pub fn variant_edits(
    scene: &crate::env::SceneDescriptor,
    concept: &ConceptRef,
    schema: &ConceptSchema,
) -> Result<Vec<ConceptEdit>> {
    let spec = schema.object(concept.object())?;
    let object = spec.name.clone();
    let first = spec
        .concepts
        .first()
        .ok_or_else(|| DfaError::IllegalEdit(format!("{object} has no concepts to vary")))?;
    let current = scene.object(&object);
    let edits = match (concept, current) {
        (ConceptRef::Instantiation { concept: name, .. }, Some(_)) => {
            let cspec = schema.concept(&object, name)?;
            cspec
                .instantiations
                .iter()
                .map(|v| Directive::SetInstantiation { object: object.clone(), concept: name.clone(), value: v.clone() })
                .collect()
        }
        (ConceptRef::Instantiation { .. }, None) => {
            return Err(DfaError::IllegalEdit(format!("cannot vary a concept of absent {object}")));
        }
        (ConceptRef::Presence { .. }, Some(obj)) => {
            let own = obj.concepts.get(&first.name).cloned();
            let mut out = vec![Directive::RemoveObject { object: object.clone() }];
            out.extend(first.instantiations.iter().filter(|v| Some(*v) != own.as_ref()).map(|v| {
                Directive::SetInstantiation { object: object.clone(), concept: first.name.clone(), value: v.clone() }
            }));
            out
        }
        (ConceptRef::Presence { .. }, None) => {
            let placement = default_placement(scene, &object)?;
            first
                .instantiations
                .iter()
                .map(|v| {
                    let mut assignment: Vec<ConceptAssignment> = spec
                        .concepts
                        .iter()
                        .map(|c| ConceptAssignment { concept: c.name.clone(), value: c.instantiations[0].clone() })
                        .collect();
                    assignment[0].value = v.clone();
                    Directive::SpawnObject { object: object.clone(), assignment, placement: Some(placement) }
                })
                .collect()
        }
    };
    Ok(edits.into_iter().map(ConceptEdit::single).collect())
}

/// Replay the demonstration's actions from every variant of `concept`.
pub fn augment(demo: &Trajectory, concept: &ConceptRef, schema: &ConceptSchema) -> Result<Vec<FinetuneEntry>> {
    if demo.provenance != Provenance::HumanDemo {
        return Err(DfaError::InvalidConfig(format!("augmentation needs a demonstration, got {:?}", demo.provenance)));
    }
    let actions = demo.actions();
    variant_edits(&demo.initial, concept, schema)?
        .into_iter()
        .map(|edit| {
            let scene = edit_scene(&demo.initial, &edit, schema)?;
            let trajectory = replay(&scene, &actions, Provenance::Augmented)?;
            Ok(FinetuneEntry { trajectory, edit: Some(edit) })
        })
        .collect()
}

/// Replay the demonstration from every combination of the variants of
/// `concepts`, one variant per concept.
pub fn augment_product(demo: &Trajectory, concepts: &[ConceptRef], schema: &ConceptSchema) -> Result<Vec<FinetuneEntry>> {
    if demo.provenance != Provenance::HumanDemo {
        return Err(DfaError::InvalidConfig(format!("augmentation needs a demonstration, got {:?}", demo.provenance)));
    }
    let mut combos = vec![ConceptEdit::empty()];
    for concept in concepts {
        let variants = variant_edits(&demo.initial, concept, schema)?;
        combos = combos
            .iter()
            .flat_map(|c| {
                variants.iter().map(move |v| {
                    let mut e = c.clone();
                    e.directives.extend(v.directives.iter().cloned());
                    e
                })
            })
            .collect();
    }
    let actions = demo.actions();
    combos
        .into_iter()
        .filter(|e| !e.is_empty())
        .map(|edit| {
            let scene = edit_scene(&demo.initial, &edit, schema)?;
            let trajectory = replay(&scene, &actions, Provenance::Augmented)?;
            Ok(FinetuneEntry { trajectory, edit: Some(edit) })
        })
        .collect()
}

/// Short summary of an augmentation, for logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub concept: ConceptRef,
    pub edits: Vec<ConceptEdit>,
    pub set_size: usize,
}
