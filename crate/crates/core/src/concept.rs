//! Object-centric concept abstraction over scenes.
//!
//! A [`ConceptVector`] is the abstract view of a scene: for every object in the
//! [`ConceptSchema`] it carries an explicit presence flag and one one-hot block
//! per concept. An absent object has all-zero blocks. Edits ([`ConceptEdit`])
//! act on vectors, and [`realize`] maps an edited vector back onto a concrete
//! scene, keeping everything that is not a concept (positions, agent pose)
//! from the base scene.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{self, Position, SceneDescriptor, SceneObject};
use crate::error::{DfaError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    pub instantiations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub concepts: Vec<ConceptSpec>,
    pub removable: bool,
    pub spawnable: bool,
}

/// Ordered objects, their concepts, and the named instantiations of each concept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub objects: Vec<ObjectSpec>,
}

impl ConceptSchema {
    pub fn new(objects: Vec<ObjectSpec>) -> Result<Self> {
        let schema = Self { objects };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for obj in &self.objects {
            if !names.insert(obj.name.as_str()) {
                return Err(DfaError::SchemaMismatch(format!("duplicate object {}", obj.name)));
            }
            let mut concepts = BTreeSet::new();
            for c in &obj.concepts {
                if !concepts.insert(c.name.as_str()) {
                    return Err(DfaError::SchemaMismatch(format!(
                        "duplicate concept {}.{}",
                        obj.name, c.name
                    )));
                }
                if c.instantiations.len() < 2 {
                    return Err(DfaError::SchemaMismatch(format!(
                        "concept {}.{} needs at least two instantiations",
                        obj.name, c.name
                    )));
                }
                let unique: BTreeSet<_> = c.instantiations.iter().collect();
                if unique.len() != c.instantiations.len() {
                    return Err(DfaError::SchemaMismatch(format!(
                        "duplicate instantiation in {}.{}",
                        obj.name, c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn object_index(&self, name: &str) -> Result<usize> {
        self.objects
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| DfaError::SchemaMismatch(format!("unknown object {name}")))
    }

    pub fn object(&self, name: &str) -> Result<&ObjectSpec> {
        Ok(&self.objects[self.object_index(name)?])
    }

    pub fn concept(&self, object: &str, concept: &str) -> Result<&ConceptSpec> {
        self.object(object)?
            .concepts
            .iter()
            .find(|c| c.name == concept)
            .ok_or_else(|| DfaError::SchemaMismatch(format!("unknown concept {object}.{concept}")))
    }

    pub fn instantiation_index(&self, object: &str, concept: &str, value: &str) -> Result<usize> {
        self.concept(object, concept)?
            .instantiations
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| {
                DfaError::SchemaMismatch(format!("{value} is not an instantiation of {object}.{concept}"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptBlock {
    pub concept: String,
    pub one_hot: Vec<u8>,
}

impl ConceptBlock {
    fn zero(concept: &ConceptSpec) -> Self {
        Self { concept: concept.name.clone(), one_hot: vec![0; concept.instantiations.len()] }
    }

    fn hot(concept: &ConceptSpec, index: usize) -> Self {
        let mut block = Self::zero(concept);
        block.one_hot[index] = 1;
        block
    }

    /// Index of the set entry, `None` for the zero block.
    pub fn active(&self) -> Option<usize> {
        self.one_hot.iter().position(|&v| v == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectConcepts {
    pub object: String,
    pub present: bool,
    pub blocks: Vec<ConceptBlock>,
}

/// Abstract scene: presence flag plus one-hot blocks for every schema object.
///
/// Canonical JSON order: `objects` in schema order, each as
/// `{object, present, blocks: [{concept, one_hot}]}` with blocks in schema order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptVector {
    pub objects: Vec<ObjectConcepts>,
}

impl ConceptVector {
    pub fn validate(&self, schema: &ConceptSchema) -> Result<()> {
        if self.objects.len() != schema.objects.len() {
            return Err(DfaError::SchemaMismatch(format!(
                "vector has {} objects, schema has {}",
                self.objects.len(),
                schema.objects.len()
            )));
        }
        for (oc, spec) in self.objects.iter().zip(&schema.objects) {
            if oc.object != spec.name || oc.blocks.len() != spec.concepts.len() {
                return Err(DfaError::SchemaMismatch(format!(
                    "object block {} does not match schema object {}",
                    oc.object, spec.name
                )));
            }
            for (block, cspec) in oc.blocks.iter().zip(&spec.concepts) {
                if block.concept != cspec.name || block.one_hot.len() != cspec.instantiations.len() {
                    return Err(DfaError::SchemaMismatch(format!(
                        "block {}.{} does not match schema",
                        oc.object, block.concept
                    )));
                }
                if block.one_hot.iter().any(|&v| v > 1) {
                    return Err(DfaError::SchemaMismatch("one-hot entries must be 0 or 1".into()));
                }
                let ones = block.one_hot.iter().filter(|&&v| v == 1).count();
                match (oc.present, ones) {
                    (true, 1) | (false, 0) => {}
                    (true, _) => {
                        return Err(DfaError::SchemaMismatch(format!(
                            "present object {} needs exactly one active instantiation in {}",
                            oc.object, block.concept
                        )))
                    }
                    (false, _) => {
                        return Err(DfaError::SchemaMismatch(format!(
                            "absent object {} must have zero blocks",
                            oc.object
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_present(&self, object: &str) -> bool {
        self.objects.iter().any(|o| o.object == object && o.present)
    }

    /// Named instantiation of `object.concept`, if the object is present.
    pub fn value<'s>(&self, schema: &'s ConceptSchema, object: &str, concept: &str) -> Option<&'s str> {
        let oi = schema.object_index(object).ok()?;
        let ci = schema.objects[oi].concepts.iter().position(|c| c.name == concept)?;
        let idx = self.objects.get(oi)?.blocks.get(ci)?.active()?;
        Some(schema.objects[oi].concepts[ci].instantiations[idx].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptAssignment {
    pub concept: String,
    pub value: String,
}

/// One atomic change made by the state editor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Directive {
    SetInstantiation { object: String, concept: String, value: String },
    RemoveObject { object: String },
    SpawnObject {
        object: String,
        assignment: Vec<ConceptAssignment>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        placement: Option<Position>,
    },
}

impl Directive {
    pub fn object(&self) -> &str {
        match self {
            Directive::SetInstantiation { object, .. }
            | Directive::RemoveObject { object }
            | Directive::SpawnObject { object, .. } => object,
        }
    }

    pub fn is_presence(&self) -> bool {
        !matches!(self, Directive::SetInstantiation { .. })
    }

    /// The concept slot this directive changes.
    pub fn concept_ref(&self) -> ConceptRef {
        match self {
            Directive::SetInstantiation { object, concept, .. } => {
                ConceptRef::Instantiation { object: object.clone(), concept: concept.clone() }
            }
            Directive::RemoveObject { object } | Directive::SpawnObject { object, .. } => {
                ConceptRef::Presence { object: object.clone() }
            }
        }
    }

    /// Plain-language description, e.g. `goal color -> red`.
    pub fn describe(&self, before: &ConceptVector, schema: &ConceptSchema) -> String {
        match self {
            Directive::SetInstantiation { object, concept, value } => {
                let old = before.value(schema, object, concept).unwrap_or("?");
                format!("{object} {concept} changed {old} -> {value}")
            }
            Directive::RemoveObject { object } => format!("{object} removed"),
            Directive::SpawnObject { object, assignment, .. } => {
                let parts: Vec<String> =
                    assignment.iter().map(|a| format!("{} {}", a.value, a.concept)).collect();
                format!("{object} added ({})", parts.join(", "))
            }
        }
    }
}

/// A concept slot: either one named concept of an object, or the object's presence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConceptRef {
    Instantiation { object: String, concept: String },
    Presence { object: String },
}

impl ConceptRef {
    pub fn object(&self) -> &str {
        match self {
            ConceptRef::Instantiation { object, .. } | ConceptRef::Presence { object } => object,
        }
    }
}

impl fmt::Display for ConceptRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConceptRef::Instantiation { object, concept } => write!(f, "{object}.{concept}"),
            ConceptRef::Presence { object } => write!(f, "{object}.presence"),
        }
    }
}

/// A set of directives, at most one per object, kept in schema object order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptEdit {
    pub directives: Vec<Directive>,
}

impl ConceptEdit {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(d: Directive) -> Self {
        Self { directives: vec![d] }
    }

    /// Number of directives.
    pub fn cardinality(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn concept_refs(&self) -> BTreeSet<ConceptRef> {
        self.directives.iter().map(Directive::concept_ref).collect()
    }

    pub fn placement_hints(&self) -> BTreeMap<String, Position> {
        self.directives
            .iter()
            .filter_map(|d| match d {
                Directive::SpawnObject { object, placement: Some(p), .. } => Some((object.clone(), *p)),
                _ => None,
            })
            .collect()
    }

    pub fn describe(&self, before: &ConceptVector, schema: &ConceptSchema) -> String {
        if self.directives.is_empty() {
            return "no change".to_string();
        }
        self.directives.iter().map(|d| d.describe(before, schema)).collect::<Vec<_>>().join("; ")
    }
}

/// Project a scene onto the schema (the abstraction `Φ`).
pub fn abstract_scene(scene: &SceneDescriptor, schema: &ConceptSchema) -> Result<ConceptVector> {
    for obj in &scene.objects {
        schema.object_index(&obj.name)?;
    }
    let mut objects = Vec::with_capacity(schema.objects.len());
    for spec in &schema.objects {
        let found = scene.object(&spec.name);
        let present = found.is_some() || (spec.concepts.is_empty() && spec.name == env::AGENT);
        let mut blocks = Vec::with_capacity(spec.concepts.len());
        for cspec in &spec.concepts {
            match found {
                Some(obj) => {
                    let value = obj.concepts.get(&cspec.name).ok_or_else(|| {
                        DfaError::SchemaMismatch(format!("{} lacks concept {}", spec.name, cspec.name))
                    })?;
                    let idx = schema.instantiation_index(&spec.name, &cspec.name, value)?;
                    blocks.push(ConceptBlock::hot(cspec, idx));
                }
                None => blocks.push(ConceptBlock::zero(cspec)),
            }
        }
        if let Some(obj) = found {
            if let Some(extra) = obj.concepts.keys().find(|k| !spec.concepts.iter().any(|c| &c.name == *k)) {
                return Err(DfaError::SchemaMismatch(format!("{} has unknown concept {extra}", spec.name)));
            }
        }
        objects.push(ObjectConcepts { object: spec.name.clone(), present, blocks });
    }
    Ok(ConceptVector { objects })
}

fn check_edit_shape(cv: &ConceptVector, edit: &ConceptEdit, schema: &ConceptSchema) -> Result<()> {
    cv.validate(schema)?;
    let mut seen = BTreeSet::new();
    for d in &edit.directives {
        schema.object_index(d.object())?;
        if !seen.insert(d.object()) {
            return Err(DfaError::IllegalEdit(format!("more than one directive for {}", d.object())));
        }
    }
    Ok(())
}

/// Apply an edit to an abstract vector (the state editor `f`).
pub fn apply_edit(cv: &ConceptVector, edit: &ConceptEdit, schema: &ConceptSchema) -> Result<ConceptVector> {
    check_edit_shape(cv, edit, schema)?;
    let mut out = cv.clone();
    for d in &edit.directives {
        let oi = schema.object_index(d.object())?;
        let spec = &schema.objects[oi];
        let slot = &mut out.objects[oi];
        match d {
            Directive::SetInstantiation { object, concept, value } => {
                if !slot.present {
                    return Err(DfaError::IllegalEdit(format!("cannot edit absent object {object}")));
                }
                let ci = spec
                    .concepts
                    .iter()
                    .position(|c| &c.name == concept)
                    .ok_or_else(|| DfaError::SchemaMismatch(format!("unknown concept {object}.{concept}")))?;
                let vi = schema.instantiation_index(object, concept, value)?;
                slot.blocks[ci] = ConceptBlock::hot(&spec.concepts[ci], vi);
            }
            Directive::RemoveObject { object } => {
                if !slot.present {
                    return Err(DfaError::IllegalEdit(format!("cannot remove absent object {object}")));
                }
                if !spec.removable {
                    return Err(DfaError::IllegalEdit(format!("{object} is not removable")));
                }
                slot.present = false;
                for (block, cspec) in slot.blocks.iter_mut().zip(&spec.concepts) {
                    *block = ConceptBlock::zero(cspec);
                }
            }
            Directive::SpawnObject { object, assignment, .. } => {
                if slot.present {
                    return Err(DfaError::IllegalEdit(format!("cannot spawn present object {object}")));
                }
                if !spec.spawnable {
                    return Err(DfaError::IllegalEdit(format!("{object} is not spawnable")));
                }
                if assignment.len() != spec.concepts.len() {
                    return Err(DfaError::IllegalEdit(format!(
                        "spawn of {object} must assign all {} concepts",
                        spec.concepts.len()
                    )));
                }
                slot.present = true;
                for (ci, cspec) in spec.concepts.iter().enumerate() {
                    let a = assignment.iter().find(|a| a.concept == cspec.name).ok_or_else(|| {
                        DfaError::IllegalEdit(format!("spawn of {object} misses concept {}", cspec.name))
                    })?;
                    let vi = schema.instantiation_index(object, &cspec.name, &a.value)?;
                    slot.blocks[ci] = ConceptBlock::hot(cspec, vi);
                }
            }
        }
    }
    Ok(out)
}

/// Conditional inverse `Φ⁻¹(cv, base)`: concept values from `cv`, everything else from `base`.
///
/// Spawned objects go to their hint in `hints`, or to the domain's default
/// placement (first free candidate in row-major order).
pub fn realize_with_hints(
    cv: &ConceptVector,
    base: &SceneDescriptor,
    schema: &ConceptSchema,
    hints: &BTreeMap<String, Position>,
) -> Result<SceneDescriptor> {
    cv.validate(schema)?;
    let mut scene = base.clone();
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut spawns = Vec::new();
    for (oc, spec) in cv.objects.iter().zip(&schema.objects) {
        if spec.name == env::AGENT {
            if !oc.present {
                return Err(DfaError::IllegalEdit("the agent cannot be removed".into()));
            }
            continue;
        }
        if !oc.present {
            continue;
        }
        let concepts: BTreeMap<String, String> = oc
            .blocks
            .iter()
            .zip(&spec.concepts)
            .map(|(b, c)| (c.name.clone(), c.instantiations[b.active().expect("validated")].clone()))
            .collect();
        match base.object(&spec.name) {
            Some(existing) => objects.push(SceneObject {
                name: spec.name.clone(),
                concepts,
                position: existing.position,
            }),
            None => spawns.push((spec.name.clone(), concepts)),
        }
    }
    scene.objects = objects;
    // Spawns are placed in schema order against the scene built so far.
    for (name, concepts) in spawns {
        let position = match hints.get(&name) {
            Some(p) => {
                env::check_placement(&scene, &name, *p)?;
                *p
            }
            None => env::default_placement(&scene, &name)?,
        };
        scene.objects.push(SceneObject { name, concepts, position });
    }
    scene.sort_objects(schema);
    Ok(scene)
}

pub fn realize(cv: &ConceptVector, base: &SceneDescriptor, schema: &ConceptSchema) -> Result<SceneDescriptor> {
    realize_with_hints(cv, base, schema, &BTreeMap::new())
}

/// `Φ⁻¹(f(Φ(scene), edit), scene)`.
pub fn edit_scene(scene: &SceneDescriptor, edit: &ConceptEdit, schema: &ConceptSchema) -> Result<SceneDescriptor> {
    let cv = abstract_scene(scene, schema)?;
    let edited = apply_edit(&cv, edit, schema)?;
    realize_with_hints(&edited, scene, schema, &edit.placement_hints())
}

/// Number of `(object, concept)` blocks that differ between two vectors.
pub fn edit_distance(a: &ConceptVector, b: &ConceptVector) -> Result<usize> {
    if a.objects.len() != b.objects.len() {
        return Err(DfaError::SchemaMismatch("vectors have different object counts".into()));
    }
    let mut count = 0;
    for (x, y) in a.objects.iter().zip(&b.objects) {
        if x.object != y.object || x.blocks.len() != y.blocks.len() {
            return Err(DfaError::SchemaMismatch(format!("object {} vs {}", x.object, y.object)));
        }
        for (bx, by) in x.blocks.iter().zip(&y.blocks) {
            if bx.concept != by.concept || bx.one_hot.len() != by.one_hot.len() {
                return Err(DfaError::SchemaMismatch(format!("block {} vs {}", bx.concept, by.concept)));
            }
            if bx.one_hot != by.one_hot {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Ordering of candidate edits within one cardinality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationOrder {
    /// List remove/spawn directives before instantiation changes.
    pub presence_first: bool,
}

/// All directives that can be applied to a single object, in schema order.
fn object_directives(oc: &ObjectConcepts, spec: &ObjectSpec) -> Vec<Directive> {
    let mut out = Vec::new();
    if oc.present {
        if spec.removable {
            out.push(Directive::RemoveObject { object: spec.name.clone() });
        }
        for (block, cspec) in oc.blocks.iter().zip(&spec.concepts) {
            let current = block.active();
            for (vi, value) in cspec.instantiations.iter().enumerate() {
                if Some(vi) != current {
                    out.push(Directive::SetInstantiation {
                        object: spec.name.clone(),
                        concept: cspec.name.clone(),
                        value: value.clone(),
                    });
                }
            }
        }
    } else if spec.spawnable && !spec.concepts.is_empty() {
        // Cartesian product of all concept instantiations, first concept slowest.
        let mut combos: Vec<Vec<ConceptAssignment>> = vec![Vec::new()];
        for cspec in &spec.concepts {
            let mut next = Vec::with_capacity(combos.len() * cspec.instantiations.len());
            for prefix in &combos {
                for value in &cspec.instantiations {
                    let mut c = prefix.clone();
                    c.push(ConceptAssignment { concept: cspec.name.clone(), value: value.clone() });
                    next.push(c);
                }
            }
            combos = next;
        }
        out.extend(
            combos
                .into_iter()
                .map(|assignment| Directive::SpawnObject { object: spec.name.clone(), assignment, placement: None }),
        );
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Enumerate every legal edit with 1..=`max_edits` directives.
///
/// Output is sorted by cardinality; within a cardinality, edits with more
/// presence directives come first when `order.presence_first` is set, and ties
/// keep schema declaration order.
pub fn enumerate_edits(
    cv: &ConceptVector,
    schema: &ConceptSchema,
    max_edits: usize,
    order: EnumerationOrder,
) -> Result<Vec<ConceptEdit>> {
    cv.validate(schema)?;
    let per_object: Vec<Vec<Directive>> =
        cv.objects.iter().zip(&schema.objects).map(|(oc, spec)| object_directives(oc, spec)).collect();
    let active: Vec<usize> = (0..per_object.len()).filter(|&i| !per_object[i].is_empty()).collect();

    let mut out = Vec::new();
    for k in 1..=max_edits.min(active.len()) {
        let mut level: Vec<ConceptEdit> = Vec::new();
        for combo in combinations(active.len(), k) {
            let lists: Vec<&Vec<Directive>> = combo.iter().map(|&c| &per_object[active[c]]).collect();
            let mut idx = vec![0usize; k];
            loop {
                level.push(ConceptEdit {
                    directives: idx.iter().zip(&lists).map(|(&i, l)| l[i].clone()).collect(),
                });
                // Odometer increment, last position fastest.
                let mut exhausted = true;
                for pos in (0..k).rev() {
                    idx[pos] += 1;
                    if idx[pos] < lists[pos].len() {
                        exhausted = false;
                        break;
                    }
                    idx[pos] = 0;
                }
                if exhausted {
                    break;
                }
            }
        }
        if order.presence_first {
            level.sort_by_key(|e| e.directives.iter().filter(|d| !d.is_presence()).count());
        }
        out.extend(level);
    }
    Ok(out)
}

/// Closed-form number of edits `enumerate_edits` yields.
pub fn count_edits(cv: &ConceptVector, schema: &ConceptSchema, max_edits: usize) -> usize {
    let sizes: Vec<usize> = cv
        .objects
        .iter()
        .zip(&schema.objects)
        .map(|(oc, spec)| {
            if oc.present {
                usize::from(spec.removable)
                    + spec.concepts.iter().map(|c| c.instantiations.len() - 1).sum::<usize>()
            } else if spec.spawnable && !spec.concepts.is_empty() {
                spec.concepts.iter().map(|c| c.instantiations.len()).product()
            } else {
                0
            }
        })
        .collect();
    // Elementary symmetric polynomials e_1..e_max of the per-object sizes.
    let mut e = vec![0usize; max_edits + 1];
    e[0] = 1;
    for s in sizes {
        for k in (1..=max_edits).rev() {
            e[k] += e[k - 1] * s;
        }
    }
    e[1..].iter().sum()
}
