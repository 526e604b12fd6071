use std::fs;

use graphflame::blowup::Outcome;
use graphflame::experiment::{run_experiment, write_outputs, ExperimentConfig};

const BOUNDED: &str = "\
[experiment]
name = small
seed = 3

[graph]
family = regular_tree(3,5)
radius = 5
radii = 3,4,5

[source]
kind = linear_plus_power
a = 0.02
p = 2
minorant = self

[datum]
kind = eigenfunction
value = 0.01

[solver]
delta = 0.02
horizon = 20
phi_vertex = v00
";

const BLOWUP: &str = "\
[graph]
family = complete(2)

[source]
kind = power
p = 2

[datum]
kind = constant
value = 1

[solver]
delta = 1
horizon = 2
";

fn last_row(csv: &str) -> Vec<String> {
    csv.lines().last().unwrap().split(',').map(String::from).collect()
}

#[test]
fn bounded_run_is_reproducible_and_consistent() {
    let cfg = ExperimentConfig::parse(BOUNDED).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut first = run_experiment(&cfg);
    assert!(first.is_success(), "{:?}", first.failure);
    write_outputs(&mut first, &a).unwrap();
    let mut second = run_experiment(&cfg);
    write_outputs(&mut second, &b).unwrap();
    for entry in &first.manifest {
        let p = entry.path.as_ref().expect("every output present");
        assert!(a.join(p).exists());
        if p.ends_with(".csv") {
            assert_eq!(fs::read(a.join(p)).unwrap(), fs::read(b.join(p)).unwrap(), "{p} differs");
        }
    }
    let det = first.data.detection.as_ref().unwrap();
    assert!(matches!(det.outcome, Outcome::Bounded { .. }));
    let final_norm: f64 = last_row(&fs::read_to_string(a.join("norm_trace.csv")).unwrap())[1].parse().unwrap();
    assert!(final_norm <= det.supersolution_sup.unwrap() + 1e-12);
    // three radii and a bounded outcome: the solution comes from the exhaustion
    let solver = first.solver.unwrap();
    assert_eq!(solver.method, "exhaustion");
    assert_eq!(solver.gaps.len(), 2);
}

#[test]
fn blowup_reciprocal_trace_extrapolates_to_estimate() {
    let mut report = run_experiment(&ExperimentConfig::parse(BLOWUP).unwrap());
    let tmp = tempfile::tempdir().unwrap();
    write_outputs(&mut report, tmp.path()).unwrap();
    let t_est = match report.detection.unwrap() {
        Outcome::Blowup { t_est, .. } => t_est,
        other => panic!("{other:?}"),
    };
    let row = last_row(&fs::read_to_string(tmp.path().join("reciprocal_norm.csv")).unwrap());
    let ext: f64 = row[3].parse().unwrap();
    assert!((ext - t_est).abs() < 0.01, "{ext} vs {t_est}");
    assert!(!tmp.path().join("phi_trace.csv").exists());
    assert!(report.manifest.iter().any(|m| m.kind == "phi_trace" && m.path.is_none() && !m.note.is_empty()));
}

#[test]
fn zero_source_stays_below_datum() {
    let text = BLOWUP.replace("kind = power\np = 2", "kind = zero");
    let report = run_experiment(&ExperimentConfig::parse(&text).unwrap());
    match report.detection.unwrap() {
        Outcome::Bounded { sup_norm } => assert!(sup_norm <= 1.0 + 1e-12),
        other => panic!("{other:?}"),
    }
}
