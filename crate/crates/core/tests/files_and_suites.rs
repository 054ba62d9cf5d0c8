use std::sync::Arc;

use asdplanner::dataset::{gen_dataset, load_dataset, DatasetConfig, DatasetEntry, DatasetKind};
use asdplanner::eval::{
    build_suite, emit_report, load_report, run_suite, summarize, HeuristicSpec, ReportFormat, SuiteConfig,
};
use asdplanner::heuristics::HeuristicTable;
use asdplanner::inference::{load_weights, riskmap2_forward, state_forward, Architecture, ModelWeights};
use asdplanner::riskmap::{generate_random_map, load_map, save_map};
use asdplanner::Cell;

fn suite(size: usize, tasks: usize, seed: u64) -> asdplanner::eval::Suite {
    let mut config = SuiteConfig::new(size, seed);
    config.maps = 8;
    config.tasks = tasks;
    build_suite(&config).unwrap()
}

#[test]
fn map_and_table_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let map = generate_random_map(12, 9, 4).unwrap();
    save_map(&map, dir.path().join("m.riskmap")).unwrap();
    assert_eq!(load_map(dir.path().join("m.riskmap")).unwrap(), map);

    let table = HeuristicTable::manhattan(&map, Cell::new(3, 2));
    table.save(dir.path().join("h.table")).unwrap();
    assert_eq!(HeuristicTable::load(dir.path().join("h.table")).unwrap(), table);
}

#[test]
fn weight_files_round_trip_and_drive_the_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let map = generate_random_map(8, 8, 2).unwrap();
    let (start, dest) = (Cell::new(0, 0), Cell::new(7, 7));

    let r2 = ModelWeights::random(Architecture::riskmap2(8, 4, 16, 2, 2, 32), 3).unwrap();
    r2.save(dir.path().join("r2.bin")).unwrap();
    let back = load_weights(dir.path().join("r2.bin")).unwrap();
    assert_eq!(back.tensors(), r2.tensors());
    assert_eq!(
        riskmap2_forward(&map, start, dest, &back).unwrap(),
        riskmap2_forward(&map, start, dest, &r2).unwrap()
    );

    let st = ModelWeights::random(Architecture::state(8, 16, 2, 2, 32), 4).unwrap();
    st.save(dir.path().join("st.bin")).unwrap();
    let back = load_weights(dir.path().join("st.bin")).unwrap();
    let a = state_forward(&map, start, 0.97, dest, &back).unwrap();
    assert_eq!(
        a.to_bits(),
        state_forward(&map, start, 0.97, dest, &st).unwrap().to_bits()
    );
    assert!((0.0..=252.0).contains(&a));
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [DatasetKind::Riskmap2, DatasetKind::State] {
        let config = DatasetConfig::new(kind, 8, 30, 6);
        let path = dir.path().join("d.jsonl");
        let summary = gen_dataset(&config, &path).unwrap();
        assert_eq!(summary.written + summary.skipped, 30);
        let (header, entries) = load_dataset(&path).unwrap();
        assert_eq!((header.kind, header.map_size, header.seed), (kind, 8, 6));
        let expected: Vec<DatasetEntry> = (0..30).filter_map(|i| config.entry(i).unwrap()).collect();
        assert_eq!(entries, expected);
    }
}

#[test]
fn report_files_round_trip_with_consistent_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let s = suite(12, 40, 5);
    let specs = [HeuristicSpec::Manhattan, HeuristicSpec::Oracle];
    let (summary, records) = run_suite(&s, &specs).unwrap();
    for (name, format) in [("r.csv", ReportFormat::Csv), ("r.json", ReportFormat::Json)] {
        emit_report(&summary, &records, dir.path().join(name), format).unwrap();
        let (s2, r2) = load_report(dir.path().join(name), format).unwrap();
        assert_eq!(r2, records);
        for h in &s2.heuristics {
            let again = summarize(&h.heuristic, &r2).unwrap();
            assert!((again.mean_nodes_explored - h.mean_nodes_explored).abs() < 1e-9);
            assert!((again.spl - h.spl).abs() < 1e-9);
        }
    }
}

#[test]
fn suite_invariants() {
    let s = suite(16, 100, 8);
    assert!(s.tasks.iter().all(|t| t.start != t.dest && t.optimal_length > 0));
    let specs = [
        HeuristicSpec::Manhattan,
        HeuristicSpec::Zero,
        HeuristicSpec::Expert { penalty: 4 },
    ];
    let (summary, records) = run_suite(&s, &specs).unwrap();
    let (_, again) = run_suite(&s, &specs).unwrap();
    let nodes = |r: &[asdplanner::eval::EvalRecord]| r.iter().map(|r| r.nodes_explored).collect::<Vec<_>>();
    assert_eq!(nodes(&records), nodes(&again));

    for r in &records {
        assert!(r.wall_time_ns > 0 && r.heuristic_time_ns > 0);
        assert!(r.heuristic_time_ns <= r.wall_time_ns);
    }
    for trio in records.chunks(3) {
        assert_eq!(trio[0].found_length, trio[1].found_length);
        assert_eq!(trio[0].found_length, trio[0].optimal_length);
    }
    assert_eq!(summary.get("manhattan").unwrap().spl, 1.0);
    assert_eq!(summary.get("expert:4").unwrap().success_rate, 1.0);
}

#[test]
fn learned_heuristics_always_reach_a_feasible_path() {
    // Untrained models only reorder expansion; the search itself guarantees
    // feasibility, so success is total and SPL is well defined.
    let s = suite(8, 30, 10);
    let r2 = Arc::new(ModelWeights::random(Architecture::riskmap2(8, 4, 16, 1, 2, 32), 11).unwrap());
    let st = Arc::new(ModelWeights::random(Architecture::state(8, 16, 1, 2, 32), 12).unwrap());
    let (summary, _) = run_suite(&s, &[HeuristicSpec::Riskmap2(r2), HeuristicSpec::State(st)]).unwrap();
    for h in &summary.heuristics {
        assert_eq!(h.success_rate, 1.0, "{}", h.heuristic);
        assert!(h.spl > 0.0 && h.spl <= 1.0);
    }
}
