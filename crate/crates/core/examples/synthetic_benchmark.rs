//! Runs the synthetic end-to-end benchmark at desk scale and prints its
//! metrics.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark -- [SEED] [key=value ...]
//! ```
//!
//! Extra arguments are configuration overrides, e.g. `train.iterations=2000`.

#[path = "../tests/common/e2e.rs"]
mod e2e;

use stem::config::RunConfig;
use stem::eval::Statistic;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> stem::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let overrides: Vec<String> = args.collect();
    let run = RunConfig::from_value(None, &overrides)?;
    let dir = std::env::temp_dir().join(format!("stem-benchmark-{seed}"));
    let out = e2e::run(&dir, seed, run)?;

    println!("seed {seed}: train {:.1?}, sample {:.1?}", out.train_time, out.sample_time);
    println!("first loss {:.4}, last-1000 mean {:.4}", out.losses[0], {
        let tail = &out.losses[out.losses.len().saturating_sub(1000)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    });
    let windows = out.smoothed_losses(500, 200);
    let rises = windows.windows(2).map(|w| w[1] - w[0]).fold(f64::MIN, f64::max);
    println!("200-step window means from step 500: {} windows, largest rise {rises:.5}", windows.len());
    for (i, w) in windows.iter().enumerate().step_by(10) {
        println!("  window {i:3}: {w:.5}");
    }
    for stat in [Statistic::Mean, Statistic::Median, Statistic::Mode] {
        let pred = out.predictions(stat)?;
        let report = out.report(&pred, &[e2e::GENES])?;
        let gap = out.oracle_gap(&pred)?;
        println!(
            "{stat:>6}: pcc-16 {:.4}  rvd {:.4}  mae {:.4}  oracle gap mean {:.4} max {:.4}",
            report.pcc_top.0[0].1.unwrap_or(f64::NAN),
            report.rvd,
            report.mae,
            gap.mean(),
            gap.max()
        );
    }
    Ok(())
}
