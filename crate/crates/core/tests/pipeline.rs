use knrm::clicks::{default_grade_target, dctr_scores, map_to_grades};
use knrm::experiment::{mean, prepare, raw_mrr, train_variant, ExperimentConfig};
use knrm::kernel::KernelBank;
use knrm::model::ModelVariant;
use knrm::synth::{generate, SyntheticSpec};
use knrm::trainer::TrainConfig;

fn small_world() -> knrm::synth::SyntheticWorld {
    generate(&SyntheticSpec { vocab_size: 400, query_count: 300, seed: 5, ..Default::default() }).unwrap()
}

#[test]
fn grades_are_monotone_in_dctr() {
    let world = small_world();
    let mut labels = dctr_scores(&world.train);
    let mapping = map_to_grades(&mut labels, &default_grade_target()).unwrap();
    assert!((mapping.achieved.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let all: Vec<_> = labels.labels.values().flat_map(|d| d.values()).collect();
    for a in &all {
        assert!((0.0..=1.0).contains(&a.score));
        for b in &all {
            if a.score > b.score {
                assert!(a.grade >= b.grade);
            }
        }
    }
}

#[test]
fn trained_model_beats_its_initialization_and_is_reproducible() {
    let world = small_world();
    let mut pretrained = Vec::new();
    world.write_pretrained(&mut pretrained).unwrap();
    let config = ExperimentConfig { train: TrainConfig { max_epochs: 8, ..Default::default() }, ..Default::default() };
    let prepared = prepare(&world.train, world.test.clone(), Some(pretrained.as_slice()), 32, &config).unwrap();
    assert_eq!(prepared.embedding_coverage, 1.0);

    let bank = KernelBank::default_bank();
    let (a, report) = train_variant(&prepared, ModelVariant::Full, &bank, &config.train).unwrap();
    let (b, _) = train_variant(&prepared, ModelVariant::Full, &bank, &config.train).unwrap();
    assert_eq!(a, b);
    assert!(report.epochs.len() <= 8);

    let untrained = ModelVariant::Full.build(prepared.initial_embeddings.clone(), &bank);
    let before = mean(&raw_mrr(&prepared, &untrained, config.caps).unwrap());
    let after = mean(&raw_mrr(&prepared, &a, config.caps).unwrap());
    assert!(after > before + 0.05, "{before} -> {after}");
}
