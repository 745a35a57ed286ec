use std::fs;

use dfo_core::network::{
    format_schedule, load_schedule_file, matching_alternation, random_ring_split,
    schedule_from_text, validate_assumption1, MixingMatrix, ViolationKind,
};

fn period(schedule: &dfo_core::MixingSchedule, len: usize) -> Vec<MixingMatrix> {
    (1..=len).map(|t| schedule.matrix(t).into_owned()).collect()
}

#[test]
fn written_schedule_loads_back() {
    let original = random_ring_split(6, 3, 42).unwrap();
    let matrices = period(&original, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    fs::write(&path, format_schedule(&matrices)).unwrap();
    let loaded = load_schedule_file(&path, None).unwrap();
    assert_eq!(loaded.agents(), 6);
    assert!(loaded.window() <= 3);
    for t in 1..=9 {
        let diff = (loaded.matrix(t).entries() - matrices[(t - 1) % 3].entries()).amax();
        assert!(diff < 1e-15, "t={t}: {diff}");
    }
    assert!(validate_assumption1(&loaded, 30).passes());
}

#[test]
fn smallest_valid_window_is_inferred() {
    let matching = matching_alternation(2).unwrap();
    let text = format_schedule(&period(&matching, 2));
    let loaded = schedule_from_text(&text, None).unwrap();
    assert_eq!(loaded.window(), 2);
    assert!((loaded.zeta() - matching.zeta()).abs() < 1e-15);
}

#[test]
fn too_small_window_is_rejected() {
    let text = format_schedule(&period(&matching_alternation(2).unwrap(), 2));
    let err = schedule_from_text(&text, Some(1)).unwrap_err();
    assert_eq!(err.code(), "bad-mixing-matrix");
}

#[test]
fn malformed_files_report_the_line() {
    let err = schedule_from_text("2 1\n0.5 0.5\n0.5\n", None).unwrap_err();
    assert_eq!(err.code(), "parse");
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn non_stochastic_matrices_are_rejected() {
    let err = schedule_from_text("2 1\n0.6 0.4\n0.6 0.4\n", None).unwrap_err();
    assert_eq!(err.code(), "bad-mixing-matrix", "{err}");
}

#[test]
fn zero_floor_is_an_entry_floor_violation() {
    let schedule = random_ring_split(4, 1, 3).unwrap().with_zeta(0.0);
    assert!(validate_assumption1(&schedule, 10).has(ViolationKind::EntryFloor));
}
