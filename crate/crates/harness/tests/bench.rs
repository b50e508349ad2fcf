use lotus_harness::bench::{account_table, bench_svd, format_account_table, format_svd_table};
use lotus_harness::verify::{descent_bound_check, DescentCheckConfig};

#[test]
fn randomized_projector_is_faster_at_512() {
    let b = bench_svd(512, 512, 64, 3, 1).unwrap();
    assert_eq!(b.randomized_us.len(), 3);
    assert!(b.ratio() < 1.0, "ratio {}", b.ratio());
    let table = format_svd_table(&[b]);
    assert!(table.contains("512x512"), "{table}");
}

#[test]
fn account_table_keeps_ranks_that_fit() {
    let reports = account_table(&[(64, 64), (2048, 2048), (128, 512)], &[16, 512]);
    // rank 512 does not fit 64x64 or 128x512
    assert_eq!(reports.len(), 4);
    let table = format_account_table(&reports);
    assert_eq!(table.matches("41.67%").count(), 2, "{table}");
    // rectangular shapes save more since the projector is on the short side
    let rect = reports
        .iter()
        .find(|r| (r.rows, r.cols, r.rank) == (128, 512, 16))
        .unwrap();
    assert!(rect.reduction > 0.417);
}

#[test]
fn descent_bound_tight_on_larger_problem() {
    let cfg = DescentCheckConfig {
        dim: 48,
        rank: 6,
        steps: 800,
        switch_interval: 40,
        condition: 100.0,
        ..DescentCheckConfig::default()
    };
    let r = descent_bound_check(&cfg, 3).unwrap();
    assert_eq!(r.violations, 0);
    assert_eq!(r.steps, 800);
    assert!(r.min_rho > 0.0 && r.min_rho <= 1.0 + 1e-12);
    assert!(r.final_loss < r.initial_loss);
}
