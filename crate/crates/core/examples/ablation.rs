//! Runs the soft-match ablation on a synthetic world and prints Testing-RAW
//! MRR for the full, frozen and exact-match variants.
//!
//! `cargo run --release --example ablation -- [density] [noise] [queries] [seed]`

use std::time::Instant;

use knrm::eval::permutation_test;
use knrm::experiment::{mean, prepare, raw_mrr, train_variant, ExperimentConfig};
use knrm::kernel::KernelBank;
use knrm::model::ModelVariant;
use knrm::synth::{generate, SyntheticSpec};

fn main() -> knrm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let spec = SyntheticSpec {
        synonym_density: arg(0, 0.5),
        noise: arg(1, 0.1),
        query_count: arg(2, 1500.0) as usize,
        seed: arg(3, 0.0) as u64,
        ..Default::default()
    };
    let sigma = arg(4, 0.1);
    let world = generate(&spec)?;
    let mut pretrained = Vec::new();
    world.write_pretrained(&mut pretrained)?;
    let config = ExperimentConfig::default();
    let prepared = prepare(&world.train, world.test.clone(), Some(pretrained.as_slice()), spec.embedding_dim, &config)?;
    println!("pairs {} cases {}", prepared.pairs.len(), prepared.cases.len());
    let bank = KernelBank::with_soft_sigma(sigma)?;
    let mut results = Vec::new();
    for variant in [ModelVariant::Full, ModelVariant::Frozen, ModelVariant::ExactMatch] {
        let start = Instant::now();
        let (model, report) = train_variant(&prepared, variant, &bank, &config.train)?;
        let mrr = raw_mrr(&prepared, &model, config.caps)?;
        println!(
            "{variant}\tMRR {:.4}\tepochs {}\tselected {}\t{:.1}s",
            mean(&mrr),
            report.epochs.len(),
            report.selected_epoch,
            start.elapsed().as_secs_f64()
        );
        results.push(mrr);
    }
    let p = permutation_test(&results[0], &results[2], 10_000, 0)?;
    println!("full vs exact p {:.4}", p.p_value);
    let p = permutation_test(&results[0], &results[1], 10_000, 0)?;
    println!("full vs frozen p {:.4}", p.p_value);
    Ok(())
}
