//! Scratch tuning harness; not part of the suite (ignored by default).

use cx_core::amnesic::{inlp, InlpConfig};
use cx_core::model::LatentRepr;
use cx_core::numerics::{RngKey, Vector};
use rand::Rng;

fn single_axis_data(n: usize, d: usize, axis: usize, seed: u64) -> (Vec<LatentRepr>, Vec<u8>) {
    let mut rng = RngKey::new(seed).rng();
    let mut reprs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let mut h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        h[axis] = if label == 1 { 1.0 } else { -1.0 };
        reprs.push(LatentRepr::new(format!("x{i}"), Vector(h)));
        labels.push(label);
    }
    (reprs, labels)
}

#[test]
#[ignore]
fn scan_stain_schemes() {
    use cx_core::staining::{run_stain_scheme, StainHarnessConfig, StainScheme, TOPIC_CLASSES};
    let classes: Vec<String> = TOPIC_CLASSES.iter().map(|c| c.to_string()).collect();
    let config = StainHarnessConfig::default();
    for idx in 0..3 {
        let scheme = StainScheme::for_class_index(&classes, idx).unwrap();
        for seed in 0..10u64 {
            let t0 = std::time::Instant::now();
            match run_stain_scheme(&scheme, &config, seed) {
                Ok(report) => {
                    let fail_sample: Vec<String> = report
                        .failures
                        .iter()
                        .take(3)
                        .map(|c| {
                            format!(
                                "{}:{}->{} top={}",
                                c.example_id, c.fact, c.foil, c.top_item
                            )
                        })
                        .collect();
                    println!(
                        "scheme={idx} seed={seed} dev={:.4} recovery={:.4} grid={} secs={:.1} fails={:?}",
                        report.model_dev_accuracy,
                        report.recovery_accuracy,
                        report.grid_pattern_holds,
                        t0.elapsed().as_secs_f64(),
                        fail_sample,
                    );
                }
                Err(e) => println!("scheme={idx} seed={seed} ERROR {e}"),
            }
        }
    }
}

#[test]
#[ignore]
fn scan_single_axis() {
    for n in [600usize, 2000, 4000] {
        for seed in 0..10u64 {
            let (reprs, labels) = single_axis_data(n, 8, 3, seed);
            let stack = inlp(
                &reprs,
                "axis3",
                &labels,
                &InlpConfig {
                    seed,
                    ..InlpConfig::default()
                },
            )
            .unwrap();
            let cos = stack
                .directions
                .first()
                .map(|v| v.as_slice()[3].abs())
                .unwrap_or(0.0);
            println!(
                "n={n} seed={seed} iters={} converged={} cos={cos:.4} accs={:?} majority={:.4}",
                stack.iterations, stack.converged, stack.dev_accuracies, stack.majority_baseline
            );
        }
    }
}
