//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use knrm::clicks::{map_to_grades, default_grade_target, Label, RelevanceLabelSet, TREC_GRADE_DISTRIBUTION};
use knrm::corpus::{build_vocabulary, parse_query_log, write_query_log, TermIdSequence};
use knrm::embedding::{init_random, load_embeddings, save_embeddings, EmbeddingMatrix};
use knrm::eval::{mrr, ndcg_at_k, permutation_test, ClickCase, PerQuery, DEFAULT_PERMUTATION_ITERATIONS};
use knrm::experiment::{mean, prepare, raw_mrr, train_variant, ExperimentConfig, Prepared};
use knrm::kernel::{rbf_kernel_row, translation_matrix, Kernel, KernelBank, DEFAULT_SOFT_MUS};
use knrm::model::{score, ModelVariant, RankingModel};
use knrm::model_io::{load_model, save_model, ModelBundle};
use knrm::synth::{generate, SyntheticSpec};
use knrm::trainer::gradcheck::{run_gradcheck, GradCheckConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// Criterion 1.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let config = GradCheckConfig::default();
    let report = run_gradcheck(&config).expect("gradcheck runs");
    let elapsed = start.elapsed();
    outcome(
        report.passed(100) && config.kernel_bank.len() == 11 && elapsed < Duration::from_secs(120),
        format!(
            "{} draws, {} coordinates, max rel err {:.2e}, {} mismatches, {:.1}s",
            report.draws,
            report.coordinates,
            report.max_rel_error,
            report.mismatches.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> TermIdSequence {
    TermIdSequence { ids: (0..len).map(|_| rng.gen_range(1..vocab)).collect(), original_length: len }
}

// Criterion 2.
fn pooling_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mus: Vec<f64> = std::iter::once(1.0).chain(DEFAULT_SOFT_MUS).collect();
    let flat: Vec<Kernel> = mus.iter().map(|&mu| Kernel::new(mu, 100.0)).collect();
    let emb = init_random(500, 50, 7);
    let mut worst_flat: f64 = 0.0;
    for _ in 0..500 {
        let (ql, dl) = (rng.gen_range(1..4), rng.gen_range(1..30));
        let q = random_seq(&mut rng, 500, ql);
        let d = random_seq(&mut rng, 500, dl);
        let m = translation_matrix(&emb, &q, &d).unwrap();
        for row in m.rows() {
            for k in &flat {
                let v = rbf_kernel_row(k, row);
                worst_flat = worst_flat.max((v - d.len() as f64).abs() / d.len() as f64);
            }
        }
    }

    let exact = Kernel::exact_match();
    let mut worst_exact: f64 = 0.0;
    let mut checked = 0;
    while checked < 500 {
        let q = random_seq(&mut rng, 500, 1);
        let dl = rng.gen_range(1..20);
        let mut d = random_seq(&mut rng, 500, dl);
        let copies = rng.gen_range(0..4);
        for _ in 0..copies {
            let pos = rng.gen_range(0..=d.ids.len());
            d.ids.insert(pos, q.ids[0]);
        }
        d.original_length = d.ids.len();
        let m = translation_matrix(&emb, &q, &d).unwrap();
        let row = m.row(0);
        let matches = d.ids.iter().filter(|&&t| t == q.ids[0]).count() as f64;
        let others_ok = d.ids.iter().zip(row).all(|(&t, &s)| t == q.ids[0] || s <= 0.9);
        if !others_ok {
            continue;
        }
        checked += 1;
        worst_exact = worst_exact.max((rbf_kernel_row(&exact, row) - matches).abs());
    }
    outcome(
        worst_flat <= 1e-4 && worst_exact <= 1e-6,
        format!("sigma=100 worst relative gap {worst_flat:.2e}; exact-match worst count gap {worst_exact:.2e}"),
    )
}

struct Ablation {
    prepared: Prepared,
    config: ExperimentConfig,
}

impl Ablation {
    fn new(density: f64) -> Self {
        let spec = SyntheticSpec { query_count: 1500, synonym_density: density, noise: 0.1, seed: 0, ..Default::default() };
        let world = generate(&spec).expect("world");
        let mut pretrained = Vec::new();
        world.write_pretrained(&mut pretrained).unwrap();
        let config = ExperimentConfig::default();
        let prepared = prepare(&world.train, world.test, Some(pretrained.as_slice()), spec.embedding_dim, &config)
            .expect("prepare");
        Self { prepared, config }
    }

    fn mrr(&self, variant: ModelVariant, bank: &KernelBank) -> PerQuery {
        let (model, _) = train_variant(&self.prepared, variant, bank, &self.config.train).expect("training");
        raw_mrr(&self.prepared, &model, self.config.caps).expect("evaluation")
    }
}

fn p_value(a: &PerQuery, b: &PerQuery) -> f64 {
    permutation_test(a, b, DEFAULT_PERMUTATION_ITERATIONS, 0).expect("aligned").p_value
}

// Criteria 3 and 7 share the density-0.5 world.
fn ablation_and_kernel_width() -> (Outcome, Outcome) {
    let start = Instant::now();
    let ab = Ablation::new(0.5);
    let bank = KernelBank::default_bank();
    let full = ab.mrr(ModelVariant::Full, &bank);
    let frozen = ab.mrr(ModelVariant::Frozen, &bank);
    let exact = ab.mrr(ModelVariant::ExactMatch, &bank);
    let elapsed = start.elapsed();
    let (f, z, e) = (mean(&full), mean(&frozen), mean(&exact));
    let p = p_value(&full, &exact);
    let c3 = outcome(
        f - e >= 0.05 && p < 0.05 && f > z && elapsed < Duration::from_secs(600),
        format!(
            "MRR full {f:.4}, frozen {z:.4}, exact-match {e:.4}; full-exact {:+.4} (p={p:.5}); {} queries, {:.0}s",
            f - e,
            full.len(),
            elapsed.as_secs_f64()
        ),
    );

    let mut gaps = Vec::new();
    let mut required_ok = true;
    for sigma in [0.05, 0.1, 0.2, 0.0001, 1.0] {
        let m = if sigma == 0.1 { f } else { mean(&ab.mrr(ModelVariant::Full, &KernelBank::with_soft_sigma(sigma).unwrap())) };
        let gap = m - e;
        let required = [0.05, 0.1, 0.2].contains(&sigma);
        if required && gap < 0.03 {
            required_ok = false;
        }
        gaps.push(format!("{sigma}: {gap:+.4}{}", if required { "" } else { " (may degrade)" }));
    }
    let c7 = outcome(required_ok, format!("full-exact gap by sigma {}", gaps.join(", ")));
    (c3, c7)
}

// Criterion 4.
fn exact_match_world() -> Outcome {
    let ab = Ablation::new(0.0);
    let bank = KernelBank::default_bank();
    let full = ab.mrr(ModelVariant::Full, &bank);
    let exact = ab.mrr(ModelVariant::ExactMatch, &bank);
    let p = p_value(&full, &exact);
    outcome(p > 0.05, format!("MRR full {:.4}, exact-match {:.4}, p={p:.4}", mean(&full), mean(&exact)))
}

/// NDCG written out term by term, independent of the library.
fn hand_ndcg(order: &[&str], grades: &BTreeMap<String, u8>, k: usize) -> f64 {
    let dcg_of = |gs: &[u8]| {
        let mut total = 0.0;
        for (i, g) in gs.iter().take(k).enumerate() {
            total += (2f64.powi(*g as i32) - 1.0) / ((i + 2) as f64).log2();
        }
        total
    };
    let mut ideal: Vec<u8> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_of(&ideal);
    if idcg == 0.0 {
        return 0.0;
    }
    let actual: Vec<u8> = order.iter().map(|d| grades[*d]).collect();
    dcg_of(&actual) / idcg
}

fn permutations(items: &[&'static str]) -> Vec<Vec<&'static str>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

// Criterion 5.
fn metric_oracles() -> Outcome {
    let docs = ["a", "b", "c", "d"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ndcg_checks = 0;
    let mut ndcg_ok = true;
    for n in 1..=4 {
        for _ in 0..25 {
            let grades: BTreeMap<String, u8> = docs[..n].iter().map(|d| (d.to_string(), rng.gen_range(0..5))).collect();
            for order in permutations(&docs[..n]) {
                for k in 1..=4 {
                    ndcg_checks += 1;
                    if ndcg_at_k(&order, &grades, k) != hand_ndcg(&order, &grades, k) {
                        ndcg_ok = false;
                    }
                }
            }
        }
    }

    let mut mrr_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..20);
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let mut cases = Vec::new();
        let mut expected = 0.0;
        for _ in 0..n {
            let mut ranked: Vec<&str> = ids.iter().map(String::as_str).collect();
            ranked.shuffle(&mut rng);
            let pos = rng.gen_range(0..ranked.len());
            expected += 1.0 / (pos + 1) as f64;
            cases.push(ClickCase { query_key: "q", clicked: ranked[pos], ranked });
        }
        if mrr(&cases).unwrap() != expected / n as f64 {
            mrr_ok = false;
        }
    }

    let base: PerQuery = (0..50).map(|i| (format!("q{i:02}"), rng.gen::<f64>() * 0.7)).collect();
    let shifted: PerQuery = base.iter().map(|(q, v)| (q.clone(), v + 0.2)).collect();
    let p_same = p_value(&base, &base);
    let p_shift = p_value(&shifted, &base);
    outcome(
        ndcg_ok && mrr_ok && p_same == 1.0 && p_shift <= 0.001,
        format!("{ndcg_checks} NDCG orderings exact: {ndcg_ok}; MRR exact: {mrr_ok}; p(identical)={p_same}, p(+0.2 shift)={p_shift:.6}"),
    )
}

// Criterion 6.
fn grade_mapping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut labels = RelevanceLabelSet::default();
    let docs = labels.labels.entry("q".into()).or_default();
    for i in 0..10_000 {
        docs.insert(format!("d{i:05}"), Label { score: rng.gen(), grade: None });
    }
    let mapping = map_to_grades(&mut labels, &default_grade_target()).unwrap();
    let worst = mapping
        .achieved
        .iter()
        .zip(TREC_GRADE_DISTRIBUTION)
        .map(|(a, t)| (a - t).abs())
        .fold(0.0, f64::max);
    let shown: Vec<String> = mapping.achieved.iter().map(|a| format!("{:.2}%", 100.0 * a)).collect();
    outcome(worst <= 0.02, format!("achieved {} (worst deviation {:.2} points)", shown.join(", "), 100.0 * worst))
}

fn knrm(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_knrm"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> bool {
    let steps: [&[&str]; 7] = [
        &["synth", "--out-dir", "w", "--vocab-size", "500", "--queries", "300", "--seed", "8"],
        &["labels", "--log", "w/train.log", "--out", "train_labels.tsv"],
        &["labels", "--log", "w/test.log", "--out", "test_labels.tsv", "--raw-cases", "cases.tsv"],
        &[
            "train", "--log", "w/train.log", "--labels", "train_labels.tsv", "--embeddings", "w/pretrained.vec",
            "--model", "full.model", "--report", "train_report.tsv", "--seed", "8", "--max-epochs", "6",
        ],
        &["rank", "--model", "full.model", "--log", "w/test.log", "--out", "full.run"],
        &["rank", "--baseline", "bm25", "--log", "w/test.log", "--out", "bm25.run"],
        &["eval", "--runs", "bm25.run", "full.run", "--raw-cases", "cases.tsv", "--out", "eval.tsv", "--iterations", "2000"],
    ];
    steps.iter().all(|args| knrm(dir, args))
}

// Criterion 8.
fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !(pipeline(a.path()) && pipeline(b.path())) {
        return outcome(false, "pipeline command failed");
    }
    let files = ["full.model", "train_report.tsv", "full.run", "eval.tsv", "train_labels.tsv", "w/train.log", "w/pretrained.vec"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two seeded runs", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// Criterion 9.
fn round_trips() -> Outcome {
    let world = generate(&SyntheticSpec { vocab_size: 400, query_count: 200, seed: 9, ..Default::default() }).unwrap();
    let mut log_bytes = Vec::new();
    write_query_log(&world.train, &mut log_bytes).unwrap();
    let parsed = parse_query_log(log_bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_query_log(&parsed.log, &mut again).unwrap();
    let log_ok = parsed.skipped == 0 && parsed.log.sessions == world.train.sessions && again == log_bytes;

    let vocab = build_vocabulary(&world.train, 1);
    let emb = init_random(vocab.len(), 32, 3);
    let mut emb_bytes = Vec::new();
    save_embeddings(&emb, &vocab, &mut emb_bytes).unwrap();
    let loaded = load_embeddings(emb_bytes.as_slice(), &vocab, 32, 0).unwrap().matrix;
    let emb_err = max_abs_diff(&emb, &loaded);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_score: f64 = 0.0;
    for variant in ModelVariant::ALL {
        let mut model: RankingModel = variant.build(emb.clone(), &KernelBank::default_bank());
        for w in &mut model.ranking.w {
            *w = rng.gen_range(-0.1..0.1);
        }
        model.ranking.b = rng.gen_range(-0.3..0.3);
        let bundle = ModelBundle { variant, vocab: vocab.clone(), caps: Default::default(), model };
        let mut bytes = Vec::new();
        save_model(&bundle, &mut bytes).unwrap();
        let back = load_model(bytes.as_slice()).unwrap();
        for _ in 0..100 {
            let q = random_seq(&mut rng, vocab.len(), 2);
            let d = random_seq(&mut rng, vocab.len(), 8);
            let a = score(&bundle.model, &q, &d).unwrap().0;
            let b = score(&back.model, &q, &d).unwrap().0;
            worst_score = worst_score.max((a - b).abs());
        }
    }
    outcome(
        log_ok && emb_err <= 1e-6 && worst_score <= 1e-12,
        format!("log identity {log_ok}; embedding max error {emb_err:.1e}; model score max error {worst_score:.1e}"),
    )
}

fn max_abs_diff(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "gradient correctness", gradient_correctness()));
    results.push((2, "pooling limits", pooling_limits()));
    let (c3, c7) = ablation_and_kernel_width();
    results.push((3, "ablation direction full > frozen > exact-match", c3));
    results.push((4, "exact-match-only world", exact_match_world()));
    results.push((5, "metric oracles", metric_oracles()));
    results.push((6, "grade mapping", grade_mapping()));
    results.push((7, "kernel-width robustness", c7));
    results.push((8, "determinism", determinism()));
    results.push((9, "round-trips", round_trips()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        if !o.passed {
            failed += 1;
        }
        println!("{} criterion {n} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
