//! One PASS/FAIL line per acceptance criterion. Includes the training
//! probes, so expect several minutes on one core.

use dhformer::dataset::mini_dataset;
use dhformer::trainer::loss_csv;
use dhformer::verify::{
    ablation_suite, checkpoint_suite, gradient_suite, metric_suite, oracle_suite, overfit_suite, scattering_suite,
    sha256_hex, transformer_suite, SuiteOutcome, GOLDEN_PROBE_LOSS_SHA256,
};

#[test]
fn acceptance() {
    let dataset = mini_dataset();
    let artifacts = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut results: Vec<(&str, SuiteOutcome)> = Vec::new();
    let report = |label: &'static str, s: SuiteOutcome, results: &mut Vec<(&str, SuiteOutcome)>| {
        println!("[{label}] {}", s.line());
        results.push((label, s));
    };
    report("1 gradient suite", gradient_suite(None), &mut results);
    report("2 scattering identities", scattering_suite(100), &mut results);
    report("3 metric sanity", metric_suite(), &mut results);
    report("4 oracle evaluation", oracle_suite(), &mut results);
    let (probe, outcome) = overfit_suite(&dataset);
    report("5 overfit probe", probe, &mut results);
    report("6 transformer invariants", transformer_suite(), &mut results);
    let (ablation, _) = ablation_suite(&dataset, Some(&artifacts));
    report("7 ablation direction", ablation, &mut results);
    report("8 checkpoint + tiling", checkpoint_suite(), &mut results);

    if let Some(o) = &outcome {
        let hash = sha256_hex(loss_csv(&o.trained.history).as_bytes());
        let status = if hash == GOLDEN_PROBE_LOSS_SHA256 { "match" } else { "DIFFERS" };
        println!("probe loss curve sha256 {hash} ({status} golden)");
    }
    println!("ablation CSVs in {}", artifacts.display());
    let failed: Vec<&str> = results.iter().filter(|(_, s)| !s.passed).map(|(l, _)| *l).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
