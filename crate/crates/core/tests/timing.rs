//! Wall-clock scaling. Kept to a single test so nothing else shares the
//! core while it measures.

use aircomp_gpr::experiment::bench_training_time;

#[test]
fn likelihood_time_scaling() {
    let t = bench_training_time(&[128, 256, 512], &[1, 4], 17).unwrap();

    let one = t.row(256, 1).unwrap();
    assert!(
        (one.speedup - 1.0).abs() <= 0.2,
        "M = 1 speedup {:.3}",
        one.speedup
    );

    // Cubic cost: doubling N multiplies the time by about 8.
    for (a, b) in [(128, 256), (256, 512)] {
        let growth = t.row(b, 4).unwrap().full_time_s / t.row(a, 4).unwrap().full_time_s;
        assert!((4.0..=12.0).contains(&growth), "N {a} -> {b}: x{growth:.2}");
    }

    let s = t.row(512, 4).unwrap().speedup;
    assert!(s >= 10.0, "speedup {s:.1}");
}
