//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! Run with `cargo test --release -p scan-core --test acceptance`.

use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scan_core::config::{PositiveMode, RunConfig};
use scan_core::encoders::{attention_weights, self_attention};
use scan_core::experiment::{desk_config, desk_synthetic, run_synthetic, AblationCell, Outcome, DESK_SPLIT};
use scan_core::gradcheck::{full_loss_check, GradCheckOptions, LossCheckSetup};
use scan_core::losses::{
    batch_hard_mine, kl_divergence, semantic_consistency_loss, semantic_consistency_regrouped, ClassProbabilities,
    TripletMarginConfig,
};
use scan_core::retrieval::{median_rank, rank_queries, recall_at_k};
use scan_core::tensor::{layer_normalize, softmax_rows};
use scan_core::{Error, Tensor};

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict {
        id,
        name,
        passed,
        detail,
    }
}

fn seeds_passing(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

// ---------------------------------------------------------------- 1

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let setup = LossCheckSetup::default();
    let opts = GradCheckOptions {
        step: 1e-5,
        tolerance: 1e-4,
        max_coords: None,
        seed: 0,
    };
    let out = full_loss_check(&setup, &opts);
    let elapsed = start.elapsed();
    match out {
        Ok(o) => verdict(
            1,
            "gradient integrity",
            o.report.passed && elapsed < Duration::from_secs(60),
            format!(
                "max rel err {:.2e} over {} tensors (draw seed {}, kink gap {:.1e}), {:.1}s",
                o.report.max_rel_error,
                o.report.params.len(),
                o.draw_seed,
                o.kink_gap,
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => verdict(1, "gradient integrity", false, e.to_string()),
    }
}

// ---------------------------------------------------------------- 2

/// Exhaustive mining: rank every candidate by (distance, index) and take
/// the extreme one.
#[allow(clippy::needless_range_loop)]
fn brute_force_mine(
    d: &[Vec<f64>],
    positive: &dyn Fn(usize, usize) -> bool,
    image_anchor: bool,
) -> Option<Vec<(usize, usize)>> {
    let b = d.len();
    let mut out = Vec::with_capacity(b);
    for a in 0..b {
        let at = |c: usize| if image_anchor { d[a][c] } else { d[c][a] };
        let mut pos: Vec<usize> = (0..b).filter(|&c| positive(a, c)).collect();
        let mut neg: Vec<usize> = (0..b).filter(|&c| !positive(a, c)).collect();
        pos.sort_by(|&x, &y| at(y).total_cmp(&at(x)).then(x.cmp(&y)));
        neg.sort_by(|&x, &y| at(x).total_cmp(&at(y)).then(x.cmp(&y)));
        out.push((*pos.first()?, *neg.first()?));
    }
    Some(out)
}

fn mining_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut errors_matched = 0;
    for case in 0..500 {
        let b = rng.random_range(2..=64);
        // Coarse values in half the cases force distance ties.
        let coarse = case % 2 == 0;
        let d: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                (0..b)
                    .map(|_| {
                        if coarse {
                            rng.random_range(0..4) as f64
                        } else {
                            rng.random::<f64>() * 3.0
                        }
                    })
                    .collect()
            })
            .collect();
        let pair_ids: Vec<u64> = (0..b as u64).map(|i| 100 + i).collect();
        let classes = rng.random_range(1..=8);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let mode = if case % 4 < 2 {
            PositiveMode::Paired
        } else {
            PositiveMode::SameClass
        };
        let positive = |a: usize, c: usize| match mode {
            PositiveMode::Paired => a == c,
            PositiveMode::SameClass => a == c || labels[a] == labels[c],
        };
        let cfg = TripletMarginConfig {
            positive_mode: mode,
            ..TripletMarginConfig::default()
        };
        let flat = Tensor::from_rows(&d).unwrap();
        let got = batch_hard_mine(&flat, &pair_ids, &labels, &cfg);
        let want_img = brute_force_mine(&d, &positive, true);
        let want_rec = brute_force_mine(&d, &positive, false);
        match (got, want_img, want_rec) {
            (Ok(m), Some(wi), Some(wr)) => {
                if m.image_anchors != wi || m.recipe_anchors != wr {
                    mismatches += 1;
                }
            }
            (Err(Error::Mining { .. }), None, _) | (Err(Error::Mining { .. }), _, None) => errors_matched += 1,
            _ => mismatches += 1,
        }
    }
    verdict(
        2,
        "oracle equivalence: mining",
        mismatches == 0,
        format!("500 batches, {mismatches} mismatches ({errors_matched} with no valid negative)"),
    )
}

// ---------------------------------------------------------------- 3

fn oracle_ranks(q: &[Vec<f64>], g: &[Vec<f64>]) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    (0..q.len())
        .map(|i| {
            let mut order: Vec<(f64, usize)> = g.iter().enumerate().map(|(j, gj)| (dist(&q[i], gj), j)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            1 + order.iter().position(|&(_, j)| j == i).unwrap()
        })
        .collect()
}

fn oracle_median(ranks: &[usize]) -> f64 {
    let mut s = ranks.to_vec();
    s.sort();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        0.5 * (s[n / 2 - 1] as f64 + s[n / 2] as f64)
    }
}

fn ranking_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for case in 0..200 {
        let m = rng.random_range(1..=200);
        let dim = rng.random_range(1..=8);
        // Small integer coordinates in half the cases produce exact ties.
        let integer = case % 2 == 0;
        let mut draw = || -> Vec<Vec<f64>> {
            (0..m)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            if integer {
                                rng.random_range(-2..=2) as f64
                            } else {
                                rng.random::<f64>() * 2.0 - 1.0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let q = draw();
        let g = draw();
        let got = rank_queries(&Tensor::from_rows(&q).unwrap(), &Tensor::from_rows(&g).unwrap()).unwrap();
        let want = oracle_ranks(&q, &g);
        let medr_ok = (median_rank(&got).unwrap() - oracle_median(&want)).abs() <= 1e-12;
        let recall_ok = [1, 5, 10].iter().all(|&k| {
            let hits = want.iter().filter(|&&r| r <= k).count();
            recall_at_k(&got, k) == 100.0 * hits as f64 / m as f64
        });
        if got != want || !medr_ok || !recall_ok {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "oracle equivalence: ranking",
        mismatches == 0,
        format!("200 instances, {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------- 4

fn matrix(max_rows: usize, max_cols: usize, bound: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-bound..bound, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, n)
}

fn run_property<S: Strategy>(
    failures: &mut Vec<String>,
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    if let Err(e) = runner.run(&strategy, test) {
        failures.push(format!("{name}: {e}"));
    }
}

fn distribution_invariants() -> Verdict {
    let mut failures = Vec::new();
    run_property(&mut failures, "softmax row sums", matrix(6, 12, 500.0), |x| {
        let s = softmax_rows(&x);
        for i in 0..s.rows() {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
            prop_assert!(s.row(i).iter().all(|&p| p >= 0.0));
        }
        Ok(())
    });
    run_property(
        &mut failures,
        "KL nonnegative",
        (2..=12usize).prop_flat_map(|n| (logits(n), logits(n))),
        |(a, b)| {
            let kl = kl_divergence(
                &ClassProbabilities::from_logits(&a),
                &ClassProbabilities::from_logits(&b),
            )
            .unwrap();
            prop_assert!(kl >= 0.0, "KL = {kl}");
            Ok(())
        },
    );
    run_property(
        &mut failures,
        "KL(p||p) = 0",
        (2..=12usize).prop_flat_map(logits),
        |a| {
            let p = ClassProbabilities::from_logits(&a);
            let kl = kl_divergence(&p, &p).unwrap();
            prop_assert!(kl.abs() <= 1e-12, "KL = {kl}");
            Ok(())
        },
    );
    run_property(&mut failures, "layer norm moments", matrix(4, 32, 1e3), |x| {
        let y = layer_normalize(&x, 0.0);
        let c = x.cols();
        for i in 0..x.rows() {
            let row = x.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let spread = row.iter().map(|v| (v - mu).abs()).fold(0.0, f64::max);
            let scale = row.iter().map(|v| v.abs()).fold(0.0, f64::max);
            // Near-constant rows are dominated by cancellation; eps exists for them.
            prop_assume!(c >= 2 && spread > 1e-3 * scale);
            let out = y.row(i);
            let mean = out.iter().sum::<f64>() / c as f64;
            let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() <= 1e-10, "mean {mean}");
            prop_assert!((var - 1.0).abs() <= 1e-8, "variance {var}");
        }
        Ok(())
    });
    run_property(&mut failures, "attention row-stochastic", matrix(10, 8, 5.0), |h| {
        let w = attention_weights(&h).unwrap();
        prop_assert_eq!(w.shape(), &[h.rows(), h.rows()][..]);
        for i in 0..w.rows() {
            let sum: f64 = w.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {} sums to {}", i, sum);
        }
        Ok(())
    });
    run_property(
        &mut failures,
        "attention permutation equivariance",
        matrix(10, 8, 5.0).prop_flat_map(|h| {
            let n = h.rows();
            (Just(h), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        |(h, perm)| {
            let permuted = Tensor::from_rows(&perm.iter().map(|&i| h.row(i)).collect::<Vec<_>>()).unwrap();
            let a = self_attention(&h).unwrap();
            let b = self_attention(&permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                for (x, y) in b.row(k).iter().zip(a.row(i)) {
                    prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{} vs {}", x, y);
                }
            }
            Ok(())
        },
    );
    verdict(
        4,
        "distribution invariants",
        failures.is_empty(),
        if failures.is_empty() {
            "6 properties x 1000 cases".into()
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 5

fn regrouping_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let classes = rng.random_range(2..=10);
        let mut dist = || -> Vec<ClassProbabilities> {
            (0..n)
                .map(|_| {
                    let l: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
                    ClassProbabilities::from_logits(&l)
                })
                .collect()
        };
        let p_img = dist();
        let p_rec = dist();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let a = semantic_consistency_loss(&p_img, &p_rec, &labels, &labels).unwrap();
        let b = semantic_consistency_regrouped(&p_img, &p_rec, &labels, &labels).unwrap();
        worst = worst.max((a - b).abs());
    }
    verdict(
        5,
        "semantic consistency regrouping",
        worst <= 1e-12,
        format!("100 inputs, max |diff| {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 6-9

const SEEDS: [u64; 3] = [0, 1, 2];

struct SeedRuns {
    scan: Outcome,
    tl: Outcome,
    tl_sa: Outcome,
    heavy_lambda: Outcome,
    scan_time: Duration,
}

fn train(cfg: &RunConfig, seed: u64) -> (Outcome, Duration) {
    let start = Instant::now();
    let o = run_synthetic(cfg, &desk_synthetic(seed), DESK_SPLIT).expect("synthetic run");
    (o, start.elapsed())
}

fn seed_runs(seed: u64) -> SeedRuns {
    let base = desk_config(seed);
    let (scan, scan_time) = train(&AblationCell::SCAN.apply(&base), seed);
    let (tl, _) = train(&AblationCell::TL.apply(&base), seed);
    let (tl_sa, _) = train(&AblationCell::TL_SA.apply(&base), seed);
    let mut heavy = AblationCell::SCAN.apply(&base);
    heavy.loss.lambda = 0.5;
    let (heavy_lambda, _) = train(&heavy, seed);
    SeedRuns {
        scan,
        tl,
        tl_sa,
        heavy_lambda,
        scan_time,
    }
}

fn convergence(runs: &[SeedRuns]) -> Verdict {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| r.scan.test_medr() <= 2.0 && r.scan.test_r1() >= 60.0 && r.scan_time < Duration::from_secs(600))
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: medR {:.1} R@1 {:.1} ({:.0}s)",
                r.scan.seed,
                r.scan.test_medr(),
                r.scan.test_r1(),
                r.scan_time.as_secs_f64()
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(6, "end-to-end synthetic convergence", seeds_passing(&ok) >= 2, detail)
}

fn semantic_direction(runs: &[SeedRuns]) -> Verdict {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| {
            r.scan.intra_class.overall_mean < r.tl.intra_class.overall_mean && r.scan.test_r1() >= r.tl.test_r1() - 2.0
        })
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: dist SCAN {:.3} vs TL {:.3}, R@1 {:.0} vs {:.0}",
                r.scan.seed,
                r.scan.intra_class.overall_mean,
                r.tl.intra_class.overall_mean,
                r.scan.test_r1(),
                r.tl.test_r1()
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(7, "semantic-consistency direction", seeds_passing(&ok) >= 2, detail)
}

fn lambda_direction(runs: &[SeedRuns]) -> Verdict {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| r.heavy_lambda.test_r1() <= r.scan.test_r1() - 5.0)
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: R@1 λ=0.5 {:.0} vs λ=0.05 {:.0}",
                r.scan.seed,
                r.heavy_lambda.test_r1(),
                r.scan.test_r1()
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(8, "lambda sweep direction", seeds_passing(&ok) >= 2, detail)
}

fn ablation_direction(runs: &[SeedRuns]) -> Verdict {
    let ok: Vec<bool> = runs
        .iter()
        .map(|r| {
            let (scan, sa, tl) = (r.scan.test_r1(), r.tl_sa.test_r1(), r.tl.test_r1());
            scan >= sa && sa >= tl - 1.0 && scan > tl
        })
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: R@1 SCAN {:.0}, TL+SA {:.0}, TL {:.0}",
                r.scan.seed,
                r.scan.test_r1(),
                r.tl_sa.test_r1(),
                r.tl.test_r1()
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(9, "ablation direction", seeds_passing(&ok) >= 2, detail)
}

// ---------------------------------------------------------------- 10

fn determinism(first: &Outcome) -> Verdict {
    let cfg = AblationCell::SCAN.apply(&desk_config(first.seed));
    let (second, _) = train(&cfg, first.seed);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let same_trace = bits(&first.loss_trace) == bits(&second.loss_trace);
    let same_eval = serde_json::to_string(&first.test).unwrap() == serde_json::to_string(&second.test).unwrap()
        && first.test == second.test
        && first.intra_class == second.intra_class;
    verdict(
        10,
        "determinism",
        same_trace && same_eval,
        format!(
            "{} batch losses, trace identical: {same_trace}, eval identical: {same_eval}",
            first.loss_trace.len()
        ),
    )
}

fn main() -> ExitCode {
    // libtest-style filter arguments are accepted and ignored.
    let start = Instant::now();
    let training = thread::spawn(|| {
        SEEDS
            .iter()
            .map(|&s| thread::spawn(move || seed_runs(s)))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().expect("training thread"))
            .collect::<Vec<SeedRuns>>()
    });
    let mut verdicts = vec![
        gradient_integrity(),
        mining_oracle(),
        ranking_oracle(),
        distribution_invariants(),
        regrouping_identity(),
    ];
    let runs = training.join().expect("training");
    verdicts.push(convergence(&runs));
    verdicts.push(semantic_direction(&runs));
    verdicts.push(lambda_direction(&runs));
    verdicts.push(ablation_direction(&runs));
    verdicts.push(determinism(&runs[0].scan));

    println!();
    for v in &verdicts {
        println!(
            "[{}] criterion {:>2} {}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed ({:.0}s)",
        verdicts.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
