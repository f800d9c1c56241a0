use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use knrm::baselines::Baseline;
use knrm::clicks::{
    default_grade_target, dctr_scores_smoothed, extract_raw_click_cases, map_to_grades, read_raw_cases,
    write_raw_cases, RawClickCase, RelevanceLabelSet,
};
use knrm::corpus::{build_vocabulary, parse_query_log_with, write_query_log, ParseOptions, QueryLog, SplitTag};
use knrm::diagnose::{movement, occupancy, sample_word_pairs, single_kernel_ablation, Diagnostics};
use knrm::embedding::{init_random, load_embeddings};
use knrm::eval::{format_report, metric_names, MethodScores, NDCG_DEPTHS};
use knrm::experiment::PairLabels;
use knrm::model::PoolingMode;
use knrm::model_io::{load_model, save_model, ModelBundle};
use knrm::runs::{graded_scores, rank_log, rank_log_baseline, rankings, raw_click_scores, read_runs, write_runs};
use knrm::synth::{generate, SyntheticSpec};
use knrm::trainer::gradcheck::{run_gradcheck, GradCheckConfig};
use knrm::trainer::{make_pairs, train as train_model};
use knrm::Error;

use crate::config::{parse_kernel_list, RunConfig};
use crate::{DiagnoseArgs, EvalArgs, GradcheckArgs, LabelsArgs, RankArgs, SynthArgs, TrainArgs};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_log(path: &Path, split: SplitTag) -> Result<QueryLog> {
    let parsed = parse_query_log_with(open(path)?, &ParseOptions { split, lowercase: false })
        .with_context(|| format!("parsing {}", path.display()))?;
    if parsed.skipped > 0 {
        eprintln!("warning: skipped {} malformed lines in {}", parsed.skipped, path.display());
    }
    Ok(parsed.log)
}

pub fn synth(a: &SynthArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        vocab_size: a.vocab_size,
        query_count: a.queries,
        docs_per_query: a.docs_per_query,
        synonym_density: a.density,
        noise: a.noise,
        seed: a.seed,
        sessions_per_query: a.sessions_per_query,
        test_fraction: a.test_fraction,
        embedding_dim: a.dim,
        pretrained_correlation: a.correlation,
    };
    let world = generate(&spec)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = create(&dir.join("train.log"))?;
    write_query_log(&world.train, &mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("test.log"))?;
    write_query_log(&world.test, &mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("truth.tsv"))?;
    world.truth.write_to(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("pretrained.vec"))?;
    world.write_pretrained(&mut out)?;
    out.flush()?;
    eprintln!(
        "wrote {} training and {} test sessions to {}",
        world.train.sessions.len(),
        world.test.sessions.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn labels(a: &LabelsArgs) -> Result<ExitCode> {
    let log = read_log(&a.log, SplitTag::Train)?;
    let mut labels = dctr_scores_smoothed(&log, a.smoothing);
    let mapping = map_to_grades(&mut labels, &default_grade_target())?;
    let mut out = create(&a.out)?;
    labels.write_to(&mut out)?;
    out.flush()?;
    let achieved: Vec<String> = mapping.achieved.iter().map(|f| format!("{:.1}%", 100.0 * f)).collect();
    eprintln!("{} labels; grade distribution 0..4: {}", labels.len(), achieved.join(", "));
    if let Some(path) = &a.raw_cases {
        let cases = extract_raw_click_cases(&log);
        let mut out = create(path)?;
        write_raw_cases(&cases, &mut out)?;
        out.flush()?;
        eprintln!("{} single-click cases of {} sessions", cases.len(), log.sessions.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!("missing {what} path (flag or config file)"),
    }
}

fn apply_overrides(c: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut c.paths.log, &a.log);
    set(&mut c.paths.labels, &a.labels);
    set(&mut c.paths.embeddings, &a.embeddings);
    set(&mut c.paths.model, &a.model);
    set(&mut c.paths.report, &a.report);
    if let Some(v) = &a.variant {
        c.model.variant.clone_from(v);
    }
    if let Some(v) = &a.pooling {
        c.model.pooling = Some(v.clone());
    }
    if let Some(v) = &a.kernels {
        c.model.kernels = Some(parse_kernel_list(v)?);
    }
    if a.soft_sigma.is_some() {
        c.model.soft_sigma = a.soft_sigma;
    }
    if let Some(v) = a.dim {
        c.model.dim = v;
    }
    if let Some(v) = &a.pair_labels {
        c.train.pair_labels.clone_from(v);
    }
    if let Some(v) = a.lr {
        c.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.train.batch_size = v;
    }
    if let Some(v) = a.max_epochs {
        c.train.max_epochs = v;
    }
    if let Some(v) = a.patience {
        c.train.patience_epochs = v;
    }
    if a.grad_clip.is_some() {
        c.train.grad_clip = a.grad_clip;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let mut config = RunConfig::load(a.config.as_deref())?;
    apply_overrides(&mut config, a)?;
    let resolved = config.resolve()?;

    let log_path = require(&config.paths.log, "log")?;
    let labels_path = require(&config.paths.labels, "labels")?;
    let model_path = require(&config.paths.model, "model")?;
    for p in [Some(log_path), Some(labels_path), config.paths.embeddings.as_deref()].into_iter().flatten() {
        if !p.exists() {
            bail!("input {} does not exist", p.display());
        }
    }

    let log = read_log(log_path, SplitTag::Train)?;
    let labels = RelevanceLabelSet::read_from(open(labels_path)?)
        .with_context(|| format!("parsing {}", labels_path.display()))?;
    let values = match resolved.pair_labels {
        PairLabels::Scores => labels.scores(),
        PairLabels::Grades => labels.grades(),
    };
    let vocab = build_vocabulary(&log, config.model.min_count);
    let pairs = make_pairs(&values, &log, &vocab, resolved.caps, resolved.train.seed)?;
    let embeddings = match &config.paths.embeddings {
        Some(p) => {
            let loaded = load_embeddings(open(p)?, &vocab, config.model.dim, resolved.train.seed)
                .with_context(|| format!("loading {}", p.display()))?;
            eprintln!("embedding coverage {:.1}%", 100.0 * loaded.coverage);
            loaded.matrix
        }
        None => init_random(vocab.len(), config.model.dim, resolved.train.seed),
    };
    let mut model = resolved.variant.build(embeddings, &resolved.bank);
    if model.pooling != resolved.pooling {
        model = knrm::model::RankingModel::new(model.embeddings, model.kernel_bank, resolved.pooling, model.embeddings_frozen);
    }
    eprintln!("training {} on {} pairs", resolved.variant, pairs.len());

    let (model, report) = match train_model(model, &pairs, &resolved.train) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, snapshot }) => {
            let path = model_path.with_extension("diverged");
            let bundle = ModelBundle { variant: resolved.variant, vocab, caps: resolved.caps, model: *snapshot };
            let mut out = create(&path)?;
            save_model(&bundle, &mut out)?;
            out.flush()?;
            bail!("training diverged at epoch {epoch}; last finite model saved to {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };
    let bundle = ModelBundle { variant: resolved.variant, vocab, caps: resolved.caps, model };
    let mut out = create(model_path)?;
    save_model(&bundle, &mut out)?;
    out.flush()?;

    let echo = config.resolved_echo(&resolved);
    let mut text = echo.to_comment_block()?;
    text.push_str(&format!("# train_pairs = {}\n# val_pairs = {}\n", report.train_pairs, report.val_pairs));
    let mut body = Vec::new();
    report.write_tsv(&mut body, a.timing)?;
    text.push_str(std::str::from_utf8(&body)?);
    match &config.paths.report {
        Some(p) => {
            let mut out = create(p)?;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        None => print!("{text}"),
    }
    eprintln!("selected epoch {} of {}", report.selected_epoch, report.epochs.len());
    Ok(ExitCode::SUCCESS)
}

pub fn rank(a: &RankArgs) -> Result<ExitCode> {
    let log = read_log(&a.log, SplitTag::Test)?;
    let runs = match (&a.model, &a.baseline) {
        (Some(path), None) => {
            let bundle = load_model(open(path)?).with_context(|| format!("loading model {}", path.display()))?;
            rank_log(&bundle.model, &bundle.vocab, bundle.caps, &log)?
        }
        (None, Some(b)) => rank_log_baseline(b.parse::<Baseline>().map_err(anyhow::Error::msg)?, &log),
        _ => bail!("give exactly one of --model and --baseline"),
    };
    let flagged = runs.iter().filter(|r| r.warning.is_some() && r.rank == 1).count();
    if flagged > 0 {
        eprintln!("warning: {flagged} queries consist only of out-of-vocabulary terms");
    }
    let mut out = create(&a.out)?;
    write_runs(&runs, &mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn method_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    enum Target {
        Graded(RelevanceLabelSet),
        Raw(Vec<RawClickCase>),
    }
    let target = match (&a.labels, &a.raw_cases, &a.log) {
        (Some(p), None, None) => Target::Graded(RelevanceLabelSet::read_from(open(p)?)?),
        (None, Some(p), None) => Target::Raw(read_raw_cases(open(p)?)?),
        (None, None, Some(p)) => Target::Raw(extract_raw_click_cases(&read_log(p, SplitTag::Test)?)),
        _ => bail!("give exactly one of --labels, --raw-cases and --log"),
    };
    let graded = matches!(target, Target::Graded(_));
    let mut methods = Vec::new();
    for path in &a.runs {
        let runs = rankings(&read_runs(open(path)?).with_context(|| format!("parsing {}", path.display()))?);
        let mut scores = MethodScores { name: method_name(path), ..Default::default() };
        match &target {
            Target::Graded(labels) => {
                for (k, name) in NDCG_DEPTHS.iter().zip(metric_names(true)) {
                    let per_query = graded_scores(&runs, labels, *k).with_context(|| format!("evaluating {}", path.display()))?;
                    scores.metrics.insert(name, per_query);
                }
            }
            Target::Raw(cases) => {
                let per_query = raw_click_scores(&runs, cases).with_context(|| format!("evaluating {}", path.display()))?;
                scores.metrics.insert("MRR".into(), per_query);
            }
        }
        methods.push(scores);
    }
    let report = format_report(&methods, &metric_names(graded), a.iterations, a.seed)?;
    match &a.out {
        Some(p) => {
            let mut out = create(p)?;
            out.write_all(report.as_bytes())?;
            out.flush()?;
        }
        None => print!("{report}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<ExitCode> {
    let bundle = load_model(open(&a.model)?).with_context(|| format!("loading model {}", a.model.display()))?;
    let log = read_log(&a.log, SplitTag::Test)?;
    let model = &bundle.model;
    let ablation = if model.pooling == PoolingMode::Kernel {
        let cases = extract_raw_click_cases(&log);
        Some(single_kernel_ablation(model, &bundle.vocab, bundle.caps, &log, &cases)?)
    } else {
        None
    };
    let pairs = sample_word_pairs(&log, &bundle.vocab, bundle.caps, a.max_pairs, a.seed);
    let bank = &model.kernel_bank;
    let mut diag = Diagnostics {
        ablation,
        sampled_pairs: pairs.len(),
        occupancy_after: occupancy(bank, &model.embeddings, &pairs),
        ..Default::default()
    };
    match &a.reference_embeddings {
        Some(p) if p.exists() => {
            let reference = load_embeddings(open(p)?, &bundle.vocab, model.embeddings.dim(), a.seed)?.matrix;
            diag.occupancy_before = Some(occupancy(bank, &reference, &pairs));
            diag.movement = Some(movement(bank, &reference, &model.embeddings, &pairs));
        }
        Some(p) => eprintln!("notice: reference embeddings {} not found; skipping movement matrix", p.display()),
        None => eprintln!("notice: no reference embeddings; skipping movement matrix"),
    }
    let text = diag.format(bank);
    match &a.out {
        Some(p) => {
            let mut out = create(p)?;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let config = GradCheckConfig {
        draws: a.draws,
        vocab_size: a.vocab_size,
        dim: a.dim,
        step: a.step,
        rel_tol: a.rel_tol,
        seed: a.seed,
        pooling: a.pooling.parse()?,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let report = run_gradcheck(&config)?;
    println!(
        "draws {} (redrawn {}), coordinates {}, max relative error {:.3e}, max absolute error {:.3e}, {:.1}s",
        report.draws,
        report.redraws,
        report.coordinates,
        report.max_rel_error,
        report.max_abs_error,
        start.elapsed().as_secs_f64()
    );
    for m in report.mismatches.iter().take(20) {
        println!("mismatch draw {} {}: analytic {:e} numeric {:e}", m.draw, m.parameter, m.analytic, m.numeric);
    }
    if report.passed(config.draws) {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck FAILED");
        Ok(ExitCode::FAILURE)
    }
}
