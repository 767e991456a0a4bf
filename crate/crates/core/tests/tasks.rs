use dfa_core::concept::{abstract_scene, edit_distance, ConceptRef};
use dfa_core::env::{Domain, COLORS, LAVA_COLORS};
use dfa_core::harness::task::{nav_clearance, nav_in_way, EVAL_SCENES, TRAIN_DEMOS};
use dfa_core::harness::{concept_pool, gen_shift_task, gen_train_task, ShiftKind};
use dfa_core::oracle::{success, Relevance};
use proptest::prelude::*;

#[test]
fn every_shift_generates_a_valid_solvable_task() {
    for domain in Domain::ALL {
        for seed in 0..8 {
            let train = gen_train_task(domain, seed).unwrap();
            assert_eq!(train.demos.len(), TRAIN_DEMOS);
            for d in &train.demos {
                assert_eq!(d.len(), domain.horizon());
                assert!(success(d, &train.reward), "{domain} seed {seed}: train demo fails");
            }
            for shift in ShiftKind::ALL {
                let task = gen_shift_task(&train, shift, seed).unwrap();
                task.validate().unwrap();
                let demo = task.demo().unwrap();
                assert!(success(&demo, &task.reward), "{}: demo fails its reward", task.id);
            }
        }
    }
}

#[test]
fn shifted_concept_relevance_matches_the_shift_kind() {
    for domain in Domain::ALL {
        for seed in 0..6 {
            let train = gen_train_task(domain, seed).unwrap();
            for shift in [ShiftKind::ConceptTi, ShiftKind::ConceptTr, ShiftKind::DistractorTi, ShiftKind::DistractorTr] {
                let task = gen_shift_task(&train, shift, seed).unwrap();
                let shifted = task.shifted.clone().unwrap();
                let want = if shift.is_ti() { Relevance::Ti } else { Relevance::Tr };
                assert_eq!(task.reward.relevance_of(&shifted), want, "{}", task.id);
            }
        }
    }
}

#[test]
fn concept_shift_changes_one_block_and_other_shift_none() {
    for domain in Domain::ALL {
        let schema = domain.schema();
        let train = gen_train_task(domain, 3).unwrap();
        let before = abstract_scene(&train.scene, &schema).unwrap();
        let ti = gen_shift_task(&train, ShiftKind::ConceptTi, 3).unwrap();
        assert_eq!(edit_distance(&before, &abstract_scene(&ti.test_scene, &schema).unwrap()).unwrap(), 1);
        let other = gen_shift_task(&train, ShiftKind::Other, 3).unwrap();
        assert_eq!(edit_distance(&before, &abstract_scene(&other.test_scene, &schema).unwrap()).unwrap(), 0);
        assert!(other.shifted.is_none());
        assert_ne!(other.test_scene, other.train_scene);
    }
}

#[test]
fn nav_distractors_sit_on_or_off_the_path() {
    for seed in 0..10 {
        let train = gen_train_task(Domain::Nav2d, seed).unwrap();
        let ti = gen_shift_task(&train, ShiftKind::DistractorTi, seed).unwrap();
        let tr = gen_shift_task(&train, ShiftKind::DistractorTr, seed).unwrap();
        assert!(!nav_in_way(&ti, "distractor"), "clearance {:?}", nav_clearance(&ti, "distractor"));
        assert!(nav_in_way(&tr, "distractor"), "clearance {:?}", nav_clearance(&tr, "distractor"));
        let goal = ti.test_scene.object("goal").unwrap().color().unwrap().to_string();
        assert_ne!(ti.test_scene.object("distractor").unwrap().color().unwrap(), goal);
    }
}

#[test]
fn eval_scenes_resample_only_the_shifted_color() {
    let train = gen_train_task(Domain::Doorkey, 5).unwrap();
    let task = gen_shift_task(&train, ShiftKind::DistractorTi, 5).unwrap();
    let scenes = task.eval_scenes();
    assert_eq!(scenes.len(), EVAL_SCENES);
    for s in &scenes {
        let lava = s.object("lava").unwrap();
        assert!(LAVA_COLORS.contains(&lava.color().unwrap()));
        let mut same = s.clone();
        same.object_mut("lava").unwrap().concepts = task.test_scene.object("lava").unwrap().concepts.clone();
        assert_eq!(same, task.test_scene);
    }
    let ti = gen_shift_task(&train, ShiftKind::ConceptTi, 5).unwrap();
    let object = ti.shifted.as_ref().unwrap().object().to_string();
    let colors: std::collections::BTreeSet<String> =
        ti.eval_scenes().iter().map(|s| s.object(&object).unwrap().color().unwrap().to_string()).collect();
    assert!(colors.len() > 1 && colors.iter().all(|c| COLORS.contains(&c.as_str())));

    let other = gen_shift_task(&train, ShiftKind::Other, 5).unwrap();
    assert!(other.eval_scenes().iter().all(|s| *s == other.test_scene));
}

#[test]
fn concept_pools() {
    let names = |d| concept_pool(d).iter().map(|c: &ConceptRef| c.to_string()).collect::<Vec<_>>();
    assert_eq!(names(Domain::Nav2d).len(), 2);
    assert_eq!(names(Domain::Doorkey).len(), 4);
    assert!(concept_pool(Domain::Doorkey).contains(&ConceptRef::Presence { object: "lava".into() }));
}

#[test]
fn shift_names_round_trip() {
    for s in ShiftKind::ALL {
        assert_eq!(s.name().parse::<ShiftKind>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
    }
    let err = "sideways".parse::<ShiftKind>().unwrap_err().to_string();
    assert!(err.contains("concept_ti"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn task_generation_is_deterministic_and_valid(seed in 0u64..10_000, d in 0usize..2, s in 0usize..5) {
        let domain = Domain::ALL[d];
        let shift = ShiftKind::ALL[s];
        let a = gen_shift_task(&gen_train_task(domain, seed).unwrap(), shift, seed).unwrap();
        let b = gen_shift_task(&gen_train_task(domain, seed).unwrap(), shift, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.validate().is_ok());
        prop_assert!(success(&a.demo().unwrap(), &a.reward));
        prop_assert_eq!(a.eval_scenes(), b.eval_scenes());
    }
}
