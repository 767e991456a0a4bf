use std::collections::BTreeSet;

use dfa_core::adapt::{augment, augment_product, variant_edits, FinetuneSet};
use dfa_core::concept::{ConceptRef, Directive};
use dfa_core::env::render::footprint;
use dfa_core::env::trajectory::FrameEncoding;
use dfa_core::env::{Domain, Provenance, Trajectory};
use dfa_core::harness::{concept_pool, gen_shift_task, gen_train_task, ShiftKind, TaskSpec};

fn task(domain: Domain, shift: ShiftKind, seed: u64) -> TaskSpec {
    gen_shift_task(&gen_train_task(domain, seed).unwrap(), shift, seed).unwrap()
}

fn color(object: &str) -> ConceptRef {
    ConceptRef::Instantiation { object: object.into(), concept: "color".into() }
}

/// Pixels where two frames differ, as (col, row).
fn changed_pixels(a: &Trajectory, b: &Trajectory, t: usize) -> BTreeSet<(usize, usize)> {
    let (x, y) = (a.steps[t].observation.as_slice(), b.steps[t].observation.as_slice());
    (0..x.len() / 3)
        .filter(|&p| x[3 * p..3 * p + 3] != y[3 * p..3 * p + 3])
        .map(|p| (p % 36, p / 36))
        .collect()
}

fn assert_within_footprint(demo: &Trajectory, aug: &Trajectory, object: &str) {
    for t in 0..demo.len() {
        let mut allowed: BTreeSet<(usize, usize)> = footprint(&demo.steps[t].state.scene, object).into_iter().collect();
        allowed.extend(footprint(&aug.steps[t].state.scene, object));
        let changed = changed_pixels(demo, aug, t);
        assert!(changed.is_subset(&allowed), "step {t}: {:?} outside the {object} footprint", changed.difference(&allowed).collect::<Vec<_>>());
    }
}

#[test]
fn color_augmentation_covers_every_value_and_keeps_actions() {
    let task = task(Domain::Nav2d, ShiftKind::ConceptTi, 1);
    let demo = task.demo().unwrap();
    let entries = augment(&demo, &color("goal"), &Domain::Nav2d.schema()).unwrap();
    assert_eq!(entries.len(), 4);
    let colors: BTreeSet<String> =
        entries.iter().map(|e| e.trajectory.initial.object("goal").unwrap().color().unwrap().to_string()).collect();
    assert_eq!(colors.len(), 4);
    for e in &entries {
        assert_eq!(e.trajectory.actions(), demo.actions());
        assert_eq!(e.trajectory.provenance, Provenance::Augmented);
        assert_within_footprint(&demo, &e.trajectory, "goal");
    }
}

#[test]
fn doorkey_color_augmentation_stays_in_footprint() {
    for seed in 0..4 {
        let task = task(Domain::Doorkey, ShiftKind::ConceptTi, seed);
        let demo = task.demo().unwrap();
        let object = task.shifted.as_ref().unwrap().object().to_string();
        let entries = augment(&demo, &color(&object), &Domain::Doorkey.schema()).unwrap();
        assert_eq!(entries.len(), 4);
        for e in &entries {
            assert_eq!(e.trajectory.actions(), demo.actions());
            assert_within_footprint(&demo, &e.trajectory, &object);
        }
    }
}

#[test]
fn presence_variants() {
    let schema = Domain::Nav2d.schema();
    let distractor = ConceptRef::Presence { object: "distractor".into() };
    // Absent object: one spawn per color.
    let plain = task(Domain::Nav2d, ShiftKind::ConceptTi, 2);
    let spawns = variant_edits(&plain.test_scene, &distractor, &schema).unwrap();
    assert_eq!(spawns.len(), 4);
    assert!(spawns.iter().all(|e| matches!(e.directives[0], Directive::SpawnObject { .. })));
    // Present object: removal plus the other colors.
    let shifted = task(Domain::Nav2d, ShiftKind::DistractorTi, 2);
    let variants = variant_edits(&shifted.test_scene, &distractor, &schema).unwrap();
    assert_eq!(variants.len(), 4);
    assert!(matches!(variants[0].directives[0], Directive::RemoveObject { .. }));
    let demo = shifted.demo().unwrap();
    for e in augment(&demo, &distractor, &schema).unwrap() {
        assert_eq!(e.trajectory.actions(), demo.actions());
    }
}

#[test]
fn augmenting_a_concept_of_an_absent_object_fails() {
    let task = task(Domain::Nav2d, ShiftKind::ConceptTi, 0);
    let demo = task.demo().unwrap();
    assert!(augment(&demo, &color("distractor"), &Domain::Nav2d.schema()).is_err());
}

#[test]
fn only_demonstrations_are_augmented() {
    let task = task(Domain::Nav2d, ShiftKind::ConceptTi, 0);
    let demo = task.demo().unwrap().with_provenance(Provenance::Rollout);
    assert!(augment(&demo, &color("goal"), &Domain::Nav2d.schema()).is_err());
}

#[test]
fn full_product_combines_every_concept() {
    let task = task(Domain::Nav2d, ShiftKind::ConceptTi, 4);
    let demo = task.demo().unwrap();
    let entries = augment_product(&demo, &concept_pool(Domain::Nav2d), &Domain::Nav2d.schema()).unwrap();
    assert_eq!(entries.len(), 16);
    for e in &entries {
        assert_eq!(e.edit.as_ref().unwrap().cardinality(), 2);
        assert_eq!(e.trajectory.actions(), demo.actions());
    }
}

#[test]
fn finetune_set_rejects_other_lengths_and_serializes() {
    let nav = task(Domain::Nav2d, ShiftKind::ConceptTi, 0).demo().unwrap();
    let dk = task(Domain::Doorkey, ShiftKind::ConceptTi, 0);
    let dk_demo = dk.demo().unwrap();
    let mut set = FinetuneSet::new(nav.clone());
    let foreign = augment(&dk_demo, dk.shifted.as_ref().unwrap(), &Domain::Doorkey.schema()).unwrap();
    assert!(set.extend(foreign).is_err());
    set.extend(augment(&nav, &color("goal"), &Domain::Nav2d.schema()).unwrap()).unwrap();
    assert_eq!((set.len(), set.augmented_count()), (5, 4));
    assert_eq!(set.demo(), &nav);

    let mut buf = Vec::new();
    set.write_jsonl(&mut buf, FrameEncoding::Png).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5 * (nav.len() + 2));
}
