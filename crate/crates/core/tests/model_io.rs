mod common;

use common::*;
use covsteer::model::{self, load_problem, parse_problem, problem_to_json, save_problem, validate};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn json_round_trip_is_exact(inst in any_feasible_instance(), chance in any::<bool>()) {
        let inst = if chance { with_loose_chance(inst) } else { inst };
        let text = problem_to_json(&inst);
        let back = parse_problem(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(problem_to_json(&back), text);
    }
}

#[test]
fn builtins_survive_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    for label in model::BUILTIN_LABELS {
        let inst = model::builtin(label).unwrap();
        let path = dir.path().join(format!("{label}.json"));
        save_problem(&inst, &path).unwrap();
        let back = load_problem(&path).unwrap();
        assert_eq!(back, inst);
        validate(&back).unwrap();
    }
}

#[test]
fn missing_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_problem(dir.path().join("absent.json")).is_err());
}
