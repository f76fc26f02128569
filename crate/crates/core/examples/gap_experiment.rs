//! Trains the learned codec on a synthetic corpus and prints the gap report
//! against a static baseline fitted on the same training images.
//!
//! Usage: `cargo run --release -p distcomp --example gap_experiment [steps] [lr]`

use std::time::Instant;

use distcomp::codecs::{static_fit, DistModel};
use distcomp::eval::{gap_report, generate_corpus, train_learned, SyntheticCorpusSpec};
use distcomp::histogram::latent_histograms;
use distcomp::nn::{lambda_q, TrainConfig, TransformConfig};
use distcomp::HistogramSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(4000);
    let lr: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(1e-4);
    let spec = HistogramSpec::centered(128)?;
    let corpus = generate_corpus(&SyntheticCorpusSpec::new(32, 256, 32, 32, spec, 2024))?;
    let latents: Vec<_> = corpus.into_iter().map(|im| im.latent).collect();
    let (train, rest) = latents.split_at(176);
    let (val, test) = rest.split_at(16);

    let banks = train.iter().map(latent_histograms).collect::<Result<Vec<_>, _>>()?;
    let baseline = static_fit(&banks)?;
    let cfg = TrainConfig {
        lr,
        max_steps: steps,
        eval_every: 100,
        lambda_q: lambda_q(32, 32, 32, 32)?,
        seed: 7,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, summary) = train_learned(TransformConfig::low_res(32, 128), &cfg, train, val, |log| {
        if let Some(v) = log.validation {
            if log.step % 500 == 0 {
                eprintln!("step {:6} lr {:.1e} train {:9.1} val R_y {:9.1} R_q {:7.1} total {:9.1}", log.step, log.lr, log.train.total, v.rate_y, v.rate_q, v.total);
            }
        }
    })?;
    eprintln!("trained {} steps in {:.1?}: {summary:?}", summary.steps, t0.elapsed());
    let report = gap_report(test, &DistModel::Learned(model), &baseline)?;
    print!("{}", report.to_table());
    let wins = report.rows.iter().filter(|r| r.achieved_gain_bpp < 0.0).count();
    println!("recovered {:.1}% of potential; learned beats static on {wins}/{}", 100.0 * report.aggregate.achieved_gain_pct / report.aggregate.potential_gain_pct, report.rows.len());
    Ok(())
}
