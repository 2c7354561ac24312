use std::time::Instant;

use treeqn_training::gradcheck::{run_suite, Scope, END_TO_END_TOL, LOSS_INSTANCES, PRIMITIVE_TOL};

#[test]
fn full_suite_passes_quickly() {
    let start = Instant::now();
    let results = run_suite(&Scope::ALL, 0);
    let elapsed = start.elapsed().as_secs_f64();
    for r in &results {
        println!(
            "{:<11} {:<45} n={:<3} coords={:<6} max_rel={:.2e} tol={:.0e} {:.1}s",
            format!("{:?}", r.scope),
            r.name,
            r.instances,
            r.coords_checked,
            r.max_rel_error,
            r.tolerance,
            r.seconds
        );
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    assert!(failed.is_empty(), "failed: {failed:#?}");
    for r in results.iter().filter(|r| !r.name.contains("(absolute)")) {
        let expected = if r.scope == Scope::Primitives {
            PRIMITIVE_TOL
        } else {
            END_TO_END_TOL
        };
        assert_eq!(r.tolerance, expected, "{}", r.name);
    }
    assert!(results
        .iter()
        .any(|r| r.name.starts_with("treeqn-d3") && r.instances >= LOSS_INSTANCES));
    assert!(results
        .iter()
        .any(|r| r.name.starts_with("atreec-d3") && r.instances >= LOSS_INSTANCES));
    assert!(elapsed < 120.0, "suite took {elapsed:.1}s");
}
