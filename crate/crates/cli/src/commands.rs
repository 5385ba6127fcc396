use std::path::Path;

use serde_json::json;
use tomprobe_core::behavior::{evaluate, write_outcomes_csv, Cell};
use tomprobe_core::corpus::{derive_condition, load_corpus, Condition, Corpus};
use tomprobe_core::decoder::{decode_model, DecodeOptions, DEFAULT_TRAIN_FRACTION};
use tomprobe_core::report::{
    load_run, paper_reference, read_result, render_reports, write_result, AccuracyFile, DecodeFile, ReportOptions,
    RunInfo, SelectivityFile, SeparationFile, ACCURACY_CSV, ACCURACY_JSON, DECODE_CSV, DECODE_JSON, OUTCOMES_CSV,
    SELECTIVITY_CSV, SELECTIVITY_JSON, SEPARATION_JSON,
};
use tomprobe_core::runtime::capture_io::{read_capture_dir, write_capture, write_manifest, Manifest};
use tomprobe_core::runtime::synthetic::write_model_dir;
use tomprobe_core::runtime::{params_label, Gpt2Model, ModelSpec, TrialRunner};
use tomprobe_core::selectivity::{
    fit_exponential, layer_percentages, question_mean, selectivity_map, zscored_separation, QuestionFeatureMatrix,
    SelectivityMap,
};

use crate::{
    CliError, CliResult, Command, DecodeArgs, FitArgs, ModelArgs, ReportArgs, RunConfig, SynthArgs, ValidateArgs,
    CAPTURES_DIR, FIT_JSON,
};

/// Runs one subcommand and returns its one-line summary.
pub fn execute(command: &Command) -> CliResult<String> {
    match command {
        Command::Capture(a) => with_pool(&a.config, || capture(a)),
        Command::Eval(a) => with_pool(&a.config, || eval(a)),
        Command::Selectivity(c) => with_pool(c, || selectivity(c)),
        Command::Decode(a) => with_pool(&a.config, || decode(a)),
        Command::Report(a) => report(a),
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::SynthModel(a) => synth_model(a),
    }
}

fn with_pool(config: &RunConfig, f: impl FnOnce() -> CliResult<String> + Send) -> CliResult<String> {
    config.check()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.effective_threads()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// The corpus for the configured condition. An intact file is transformed;
/// a file already holding the requested condition is used as is.
fn corpus_for(path: Option<&Path>, condition: Condition, seed: u64) -> CliResult<Corpus> {
    let path = path.ok_or_else(|| CliError::Config("--corpus-path is required".into()))?;
    let corpus = load_corpus(path)?;
    if corpus.condition == Condition::Intact {
        Ok(derive_condition(&corpus, condition, seed)?)
    } else if corpus.condition == condition {
        Ok(corpus)
    } else {
        Err(CliError::Config(format!(
            "{} holds the {} condition, cannot derive {condition}",
            path.display(),
            corpus.condition
        )))
    }
}

fn load_model(config: &RunConfig) -> CliResult<Gpt2Model> {
    let dir = config
        .model_dir
        .as_ref()
        .ok_or_else(|| CliError::Config("--model-dir is required".into()))?;
    Ok(Gpt2Model::load(dir)?)
}

fn model_info(model: &Gpt2Model, name: Option<&String>, config: &RunConfig, corpus: &Corpus) -> RunInfo {
    RunInfo {
        model: name.cloned().unwrap_or_else(|| model.name()),
        n_params: params_label(model.weights.parameter_count()),
        condition: config.condition,
        seed: Some(config.seed),
        corpus_fingerprint: corpus.fingerprint(),
    }
}

fn capture(args: &ModelArgs) -> CliResult<String> {
    use rayon::prelude::*;
    let config = &args.config;
    let model = load_model(config)?;
    let corpus = corpus_for(config.corpus_path.as_deref(), config.condition, config.seed)?;
    let info = model_info(&model, args.model_name.as_ref(), config, &corpus);
    let dir = config.out_dir.join(CAPTURES_DIR);
    create_dir(&dir)?;
    let trials: Vec<_> = corpus.trials().collect();
    let captures = trials
        .par_iter()
        .map(|trial| {
            let capture = model.run(trial, &trial.belief_question, true)?;
            write_capture(&dir, &capture, "belief")
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        model: info.model.clone(),
        n_params: Some(model.weights.parameter_count()),
        condition: config.condition.to_string(),
        seed: Some(config.seed),
        corpus_fingerprint: info.corpus_fingerprint.clone(),
        config: serde_json::to_value(config).expect("config serialises"),
        config_hash: config.config_hash(),
        captures,
    };
    let path = write_manifest(&dir, &manifest)?;
    Ok(format!(
        "capture: {} {} -> {} captures, manifest {}",
        info.model,
        config.condition,
        manifest.captures.len(),
        path.display()
    ))
}

fn eval(args: &ModelArgs) -> CliResult<String> {
    let config = &args.config;
    let model = load_model(config)?;
    let corpus = corpus_for(config.corpus_path.as_deref(), config.condition, config.seed)?;
    let info = model_info(&model, args.model_name.as_ref(), config, &corpus);
    create_dir(&config.out_dir)?;
    let ev = evaluate(&corpus, &model, &model.tokenizer)?;
    ev.table.write_csv(&config.out_dir.join(ACCURACY_CSV))?;
    write_outcomes_csv(&ev.outcomes, &config.out_dir.join(OUTCOMES_CSV))?;
    write_result(
        &config.out_dir.join(ACCURACY_JSON),
        &AccuracyFile {
            run: info.clone(),
            table: ev.table.clone(),
        },
    )?;
    let cells: Vec<String> = Cell::ALL
        .iter()
        .map(|&c| {
            let n = ev.table.cell(c);
            format!("{} {}/{}", c.as_str(), n.correct, n.total)
        })
        .collect();
    Ok(format!(
        "eval: {} {}: {}",
        info.model,
        config.condition,
        cells.join(", ")
    ))
}

/// Captures of the run plus features and run identity.
struct Loaded {
    info: RunInfo,
    features: QuestionFeatureMatrix,
}

fn load_features(config: &RunConfig) -> CliResult<Loaded> {
    let corpus = corpus_for(config.corpus_path.as_deref(), config.condition, config.seed)?;
    let dir = config.out_dir.join(CAPTURES_DIR);
    let (manifest, captures) = read_capture_dir(&dir)?;
    if manifest.corpus_fingerprint != corpus.fingerprint() {
        return Err(CliError::Config(format!(
            "{}: captures were made from a different corpus (fingerprint {} vs {})",
            dir.display(),
            manifest.corpus_fingerprint,
            corpus.fingerprint()
        )));
    }
    if manifest.condition != config.condition.to_string() {
        return Err(CliError::Config(format!(
            "{}: captures are for condition {}, not {}",
            dir.display(),
            manifest.condition,
            config.condition
        )));
    }
    let info = RunInfo {
        model: manifest.model.clone(),
        n_params: manifest.n_params.map(params_label).unwrap_or_default(),
        condition: config.condition,
        seed: Some(config.seed),
        corpus_fingerprint: manifest.corpus_fingerprint.clone(),
    };
    let features = question_mean(&captures, &corpus)?;
    Ok(Loaded { info, features })
}

fn write_selectivity(config: &RunConfig, loaded: &Loaded, map: &SelectivityMap) -> CliResult<SelectivityFile> {
    map.write_csv(&config.out_dir.join(SELECTIVITY_CSV))?;
    let file = SelectivityFile {
        run: loaded.info.clone(),
        alpha: map.alpha,
        n_trials: loaded.features.n_trials(),
        d: map.d,
        layers: layer_percentages(map),
    };
    write_result(&config.out_dir.join(SELECTIVITY_JSON), &file)?;
    Ok(file)
}

fn selectivity(config: &RunConfig) -> CliResult<String> {
    let loaded = load_features(config)?;
    let map = selectivity_map(&loaded.features, config.alpha)?;
    let file = write_selectivity(config, &loaded, &map)?;
    Ok(format!(
        "selectivity: {} {}: {} of {} dims significant, peak {:.2}% at layer {}",
        loaded.info.model,
        config.condition,
        map.significant().count(),
        map.tests.len(),
        file.layers.model_summary,
        file.layers.peak_layer
    ))
}

fn decode(args: &DecodeArgs) -> CliResult<String> {
    let config = &args.config;
    let loaded = load_features(config)?;
    let opts = DecodeOptions {
        repeats: config.repeats,
        seed: config.seed,
        c: config.c,
        train_fraction: DEFAULT_TRAIN_FRACTION,
        standardize: args.standardize,
    };
    let result = decode_model(&loaded.features, &opts)?;
    result.write_csv(&config.out_dir.join(DECODE_CSV))?;

    let map = selectivity_map(&loaded.features, config.alpha)?;
    let separation = if map.significant().next().is_none() {
        SeparationFile {
            run: loaded.info.clone(),
            separation: None,
            note: Some(format!("no dimension significant at alpha = {}", config.alpha)),
        }
    } else {
        let sep = zscored_separation(&loaded.features, &map, &result.trial_correct())?;
        SeparationFile {
            run: loaded.info.clone(),
            separation: Some(sep),
            note: None,
        }
    };
    write_result(&config.out_dir.join(SEPARATION_JSON), &separation)?;
    let summary = format!(
        "decode: {} {}: mean {:.3} over {} layers, best layer {} ({:.3})",
        loaded.info.model,
        config.condition,
        result.model_average,
        result.layers.len(),
        result.best_layer,
        result.layers[result.best_layer].mean
    );
    write_result(
        &config.out_dir.join(DECODE_JSON),
        &DecodeFile {
            run: loaded.info,
            result,
        },
    )?;
    Ok(summary)
}

fn report(args: &ReportArgs) -> CliResult<String> {
    let runs = args.runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    let options = ReportOptions {
        large_models: args.large.iter().cloned().collect(),
        welch: args.welch,
    };
    let out = render_reports(&runs, &args.out_dir, &options)?;
    Ok(format!(
        "report: {} runs -> {} files in {}",
        runs.len(),
        out.files.len(),
        args.out_dir.display()
    ))
}

fn fit(args: &FitArgs) -> CliResult<String> {
    let mut points = Vec::new();
    for dir in &args.runs {
        let acc: AccuracyFile = read_result(&dir.join(ACCURACY_JSON))?;
        let sel: SelectivityFile = read_result(&dir.join(SELECTIVITY_JSON))?;
        if acc.run.condition != Condition::Intact || sel.run.condition != Condition::Intact {
            return Err(CliError::Config(format!(
                "{}: fit uses intact runs only",
                dir.display()
            )));
        }
        points.push((acc.run.model, acc.table.false_belief.accuracy, sel.layers.model_summary));
    }
    points.sort_by(|a, b| a.0.cmp(&b.0));
    let xy: Vec<(f64, f64)> = points.iter().filter(|p| p.2 > 0.0).map(|p| (p.1, p.2)).collect();
    let fit = fit_exponential(&xy)?;
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join(FIT_JSON);
    write_result(
        &path,
        &json!({
            "model": "y = a * exp(b * x)",
            "x": "false-belief accuracy",
            "y": "peak percent of significant dimensions",
            "points": points.iter().map(|(m, x, y)| json!({"model": m, "x": x, "y": y})).collect::<Vec<_>>(),
            "fit": fit,
            "paper_reported": {"a": paper_reference("exp_fit_a"), "b": paper_reference("exp_fit_b")},
        }),
    )?;
    Ok(format!(
        "fit: a = {:.4}, b = {:.3} over {} points{} -> {}",
        fit.a,
        fit.b,
        xy.len(),
        if fit.converged { "" } else { " (not converged)" },
        path.display()
    ))
}

fn validate(args: &ValidateArgs) -> CliResult<String> {
    let (manifest, captures) = read_capture_dir(&args.captures_dir)?;
    if manifest.captures.is_empty() {
        return Err(CliError::Config(format!(
            "{}: manifest lists no captures",
            args.captures_dir.display()
        )));
    }
    let shape = (captures[0].n_layers, captures[0].d_model, captures[0].vocab_size());
    for c in &captures {
        if (c.n_layers, c.d_model, c.vocab_size()) != shape {
            return Err(CliError::Config(format!(
                "`{}` has shape (L={}, d={}, V={}), others have (L={}, d={}, V={})",
                c.trial_id,
                c.n_layers,
                c.d_model,
                c.vocab_size(),
                shape.0,
                shape.1,
                shape.2
            )));
        }
    }
    let mut note = String::new();
    if let Some(path) = &args.corpus_path {
        let corpus = corpus_for(Some(path), args.condition, args.seed)?;
        if manifest.corpus_fingerprint != corpus.fingerprint() {
            return Err(CliError::Config(
                "manifest corpus fingerprint does not match --corpus-path".into(),
            ));
        }
        let mut listed: Vec<&str> = manifest.captures.iter().map(|e| e.trial_id.as_str()).collect();
        let mut expected: Vec<&str> = corpus.trials().map(|t| t.trial_id.as_str()).collect();
        listed.sort_unstable();
        expected.sort_unstable();
        if listed != expected {
            return Err(CliError::Config(
                "captures do not cover the corpus trials exactly once".into(),
            ));
        }
        note = ", corpus coverage ok".into();
    }
    Ok(format!(
        "validate: {} captures ok (L={}, d={}, V={}){note}",
        captures.len(),
        shape.0,
        shape.1,
        shape.2
    ))
}

fn synth_model(args: &SynthArgs) -> CliResult<String> {
    let spec = ModelSpec {
        n_layers: args.layers,
        d_model: args.d_model,
        n_heads: args.heads,
        vocab_size: ModelSpec::gpt2_small().vocab_size,
        context_len: args.context,
        layer_norm_eps: 1e-5,
    };
    write_model_dir(&args.out_dir, &spec, args.seed, &args.tokenizer_dir)?;
    Ok(format!(
        "synth-model: {} layers, d = {}, seed {} -> {}",
        spec.n_layers,
        spec.d_model,
        args.seed,
        args.out_dir.display()
    ))
}
