//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default. `REDATTN_ACCEPTANCE=2,7` restricts the
//! run to the listed criteria.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redattn::attention::{reduce_attention, AttentionParams};
use redattn::data::{SyntheticKind, SyntheticSpec};
use redattn::experiments::{run_sweep, summarize, CorpusSource, ModelDims, SweepResult, SweepSpec};
use redattn::model::{Autoencoder, ModelConfig};
use redattn::train::{fit_with, lr_at, TrainConfig};
use redattn::{Tape, Tensor};

use common::{case, gradcheck, naive_attention, naive_matmul, rows, CASE_KINDS, TOLERANCE};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Gradient correctness against central differences.
fn c1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 13 * CASE_KINDS;
    let mut worst = (0.0f64, "");
    for i in 0..cases {
        let c = case(i, rng.gen());
        let err = gradcheck(&c);
        if err > worst.0 {
            worst = (err, c.name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.0 < TOLERANCE && secs < 60.0,
        format!(
            "{cases} random cases over {CASE_KINDS} ops incl. full model; worst rel err {:.2e} ({}); {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

/// Identity scaling matrix reproduces textbook attention.
fn c2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, d_in, d_attn) = (rng.gen_range(1..=8), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let x = Tensor::uniform(&[n, d_in], 1.0, &mut rng);
        let w: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[d_in, d_attn], 1.0, &mut rng)).collect();
        let p = AttentionParams::new(w[0].clone(), w[1].clone(), w[2].clone(), Tensor::identity(n)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let vars = p.watch(&mut tape);
        let y = reduce_attention(&mut tape, xv, &vars).unwrap();

        let xr = rows(&x);
        let expected = naive_attention(
            &naive_matmul(&xr, &rows(&w[0])),
            &naive_matmul(&xr, &rows(&w[1])),
            &naive_matmul(&xr, &rows(&w[2])),
        );
        for (got, want) in rows(tape.value(y)).iter().zip(&expected) {
            for (a, b) in got.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("50 instances; max |diff| {worst:.2e}"))
}

/// Output length equals the scaling matrix's row count.
fn c3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = Vec::new();
    for n_in in 1..=8 {
        for n_out in 1..=8 {
            let p = AttentionParams::init(5, 4, n_in, n_out, &mut rng);
            let mut tape = Tape::new();
            let x = tape.leaf(&Tensor::uniform(&[n_in, 5], 1.0, &mut rng));
            let vars = p.watch(&mut tape);
            let y = reduce_attention(&mut tape, x, &vars).unwrap();
            if tape.value(y).shape() != [n_out, 4] {
                bad.push((n_in, n_out));
            }
        }
    }
    verdict(bad.is_empty(), format!("64 (n_in, n_out) pairs; mismatches {bad:?}"))
}

fn dims(width: usize) -> ModelDims {
    ModelDims {
        d_model: width,
        d_attn: width,
        use_positional: true,
        depth: 1,
    }
}

/// Identity regime on uniform random tokens.
fn c4() -> Verdict {
    let start = Instant::now();
    let spec = SweepSpec {
        corpus: CorpusSource::Synthetic(SyntheticSpec {
            kind: SyntheticKind::UniformRandom,
            vocab_size: 50,
            length: 16,
            count: 2000,
            seed: 0,
        }),
        input_len: 16,
        latent_lens: vec![16],
        seeds: vec![1],
        train: TrainConfig {
            max_epochs: 30,
            ..TrainConfig::default()
        },
        dims: dims(64),
        threads: Some(1),
        ..SweepSpec::desk_default()
    };
    let row = &run_sweep(&spec).unwrap().result.rows[0];
    let secs = start.elapsed().as_secs_f64();
    verdict(
        row.best_accuracy >= 0.99 && secs < 300.0,
        format!(
            "N=L=16, V=50, lr 0.001->0.0001: best val acc {:.4} at epoch {} of {}; {secs:.0}s",
            row.best_accuracy, row.best_epoch, row.epochs_run
        ),
    )
}

fn mean_best(result: &SweepResult, latent_len: usize) -> f64 {
    let accs: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.latent_len == latent_len)
        .map(|r| r.best_accuracy)
        .collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

/// The standard desk sweep, shared by criteria 5 and 6.
fn desk_sweep() -> (SweepResult, f64) {
    let start = Instant::now();
    let result = run_sweep(&SweepSpec::desk_default()).unwrap().result;
    (result, start.elapsed().as_secs_f64())
}

/// Halving the sequence keeps nearly everything.
fn c5(result: &SweepResult) -> Verdict {
    let cells: Vec<_> = result.rows.iter().filter(|r| r.latent_len == 16).collect();
    let accs: Vec<String> = cells.iter().map(|r| format!("{:.4}", r.best_accuracy)).collect();
    let slowest = cells
        .iter()
        .map(|r| r.trail.iter().map(|e| e.seconds).sum::<f64>())
        .fold(0.0, f64::max);
    let mean = mean_best(result, 16);
    verdict(
        cells.len() == 3 && mean >= 0.95 && slowest < 900.0,
        format!(
            "N=32, L=16, 3 seeds: best acc [{}], mean {mean:.4}; slowest run {slowest:.0}s",
            accs.join(", ")
        ),
    )
}

/// Accuracy falls as the latent sequence shrinks.
fn c6(result: &SweepResult, secs: f64) -> Verdict {
    let lens = [32, 24, 16, 8, 4];
    let means: Vec<f64> = lens.iter().map(|&l| mean_best(result, l)).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let gap = means[2] - means[4];
    let table: Vec<String> = lens.iter().zip(&means).map(|(l, m)| format!("L={l}: {m:.4}")).collect();
    verdict(
        monotone && gap >= 0.05,
        format!(
            "{}; L=16 minus L=4 = {gap:.4}; sweep {secs:.0}s",
            table.join(", ")
        ),
    )
}

/// Learning-rate schedule values.
fn c7() -> Verdict {
    let cfg = TrainConfig::default();
    let checks = [(0, 0.001), (2, 0.00064), (5, 0.0001), (6, 0.0001), (19, 0.0001), (100, 0.0001)];
    let worst = checks
        .iter()
        .map(|&(e, want)| (lr_at(e, &cfg) - want).abs())
        .fold(0.0, f64::max);
    verdict(worst <= 1e-12, format!("epochs 0, 2, 5, 6, 19, 100; max |err| {worst:.1e}"))
}

/// Early stopping after a frozen validation accuracy.
fn c8() -> Verdict {
    let model = Autoencoder::init(
        ModelConfig {
            d_model: 4,
            d_attn: 4,
            ..ModelConfig::new(4, 2, 6)
        },
        0,
    )
    .unwrap();
    let script = [0.2, 0.4, 0.6, 0.8];
    let mut snapshot = None;
    let out = fit_with(model, &TrainConfig::default(), |m, epoch, _| {
        // every epoch changes the parameters
        m.out_proj.data_mut()[0] += 1.0;
        if epoch == 3 {
            snapshot = Some(m.clone());
        }
        Ok((1.0, script[epoch.min(3)]))
    })
    .unwrap();
    let last = out.records.last().map_or(0, |r| r.epoch);
    let same = snapshot.is_some_and(|s| s == out.best);
    verdict(
        last == 8 && out.records.len() == 9 && out.best_epoch == 3 && same,
        format!(
            "accuracy frozen after epoch 3: stopped after epoch {last}, best epoch {}, best params equal epoch 3: {same}",
            out.best_epoch
        ),
    )
}

fn cli(args: &[&str], out: &Path, threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_redattn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("REDATTN_THREADS", threads)
        .output()
        .expect("run redattn")
}

/// Identical sweeps give identical bytes, serial or parallel.
fn c9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep", "--input-len", "16", "--latent-len", "16", "--latent-len", "8", "--seeds", "1,2", "--samples",
        "400", "--epochs", "4", "--d-model", "16", "--d-attn", "16", "--no-charts",
    ];
    let runs = [("serial-a", "1"), ("serial-b", "1"), ("parallel", "4")];
    let mut csvs = Vec::new();
    for (name, threads) in runs {
        let out = dir.path().join(name);
        let o = cli(&args, &out, threads);
        if !o.status.success() {
            return verdict(false, format!("{name} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        csvs.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    verdict(
        csvs[0] == csvs[1] && csvs[0] == csvs[2],
        format!(
            "results.csv serial/serial identical: {}, serial/4 threads identical: {} ({} bytes)",
            csvs[0] == csvs[1],
            csvs[0] == csvs[2],
            csvs[0].len()
        ),
    )
}

/// Ten-seed variance study with the elevated learning-rate preset.
fn c10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("variance");
    let args = [
        "sweep", "--input-len", "16", "--latent-len", "9", "--num-seeds", "10", "--preset", "elevated-lr",
        "--samples", "1000", "--epochs", "10", "--d-model", "32", "--d-attn", "32",
    ];
    let threads = std::env::var("REDATTN_THREADS").unwrap_or_else(|_| "1".into());
    let o = cli(&args, &out, &threads);
    if !o.status.success() {
        return verdict(false, String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let result = redattn::experiments::read_result(&out.join("results.csv"), Some(&out.join("trails.csv"))).unwrap();
    let summary = summarize(&result).unwrap();
    let trails_ok = result.rows.len() == 20 && result.rows.iter().all(|r| !r.trail.is_empty() && r.trail.len() <= 10);
    let stats_ok = summary.groups.len() == 2
        && summary
            .groups
            .iter()
            .all(|g| g.runs == 10 && g.min <= g.mean && g.mean <= g.max && g.std.is_finite());
    let table = String::from_utf8_lossy(&o.stdout);
    let side_by_side = table.contains("warmdown") && table.contains("static");
    for line in table.lines() {
        println!("      {line}");
    }
    verdict(
        trails_ok && stats_ok && side_by_side,
        format!(
            "N=16, L=9, 10 seeds x 2 schedules: {} rows with trails, summary groups {}, side-by-side table printed",
            result.rows.len(),
            summary.groups.len()
        ),
    )
}

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> = std::env::var("REDATTN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| selected.as_ref().is_none_or(|s| s.contains(&i));
    let names = [
        "gradient correctness",
        "mechanism equivalence",
        "shape law",
        "identity-regime reconstruction",
        "halving is lossless",
        "monotone degradation",
        "lr schedule exactness",
        "early stopping semantics",
        "determinism",
        "variance study harness",
    ];
    println!("\nacceptance suite");

    let mut sweep: Option<(SweepResult, f64)> = None;
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let v = match id {
            1 => c1(),
            2 => c2(),
            3 => c3(),
            4 => c4(),
            5 | 6 => {
                let (result, secs) = sweep.get_or_insert_with(desk_sweep);
                if id == 5 {
                    c5(result)
                } else {
                    c6(result, *secs)
                }
            }
            7 => c7(),
            8 => c8(),
            9 => c9(),
            _ => c10(),
        };
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        println!("acceptance: all selected criteria passed\n");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed\n");
        ExitCode::FAILURE
    }
}
