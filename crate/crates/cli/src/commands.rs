use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ggp_core::active::{
    active_loop, curves_csv, summarize, Acquisition, ActiveConfig, GgpClassifier, LpClassifier, NodeClassifier,
};
use ggp_core::checkpoint::Checkpoint;
use ggp_core::data::{load_dataset, synth_sbm, write_dataset, Dataset, SbmConfig};
use ggp_core::train::{fit, grad_check, parse_key_values, random_instance, InstanceShape};
use ggp_core::{GgpError, KernelSpec, TrainConfig, TrainedModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::*;

pub const DATA_ROOT_ENV: &str = "GGP_DATA_ROOT";

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Active(a) => active(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
        Command::ValidateData(a) => validate_data(a),
    }
}

/// A path that exists as given wins; otherwise relative paths are looked up
/// under `$GGP_DATA_ROOT`.
pub fn resolve_data_dir(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn load(args: &DataArgs) -> CliResult<Dataset> {
    let dir = resolve_data_dir(&args.data);
    let ds = load_dataset(&dir)?;
    log::info!("loaded {} ({:?})", dir.display(), ds.stats());
    Ok(ds)
}

fn kernel_spec(kernel: KernelArg) -> KernelSpec {
    match kernel {
        KernelArg::Poly3 => KernelSpec::polynomial(1.0, 1.0),
        KernelArg::Linear => KernelSpec::linear(1.0),
    }
    .expect("valid default hyperparameters")
}

fn kernel_name(kernel: KernelArg) -> &'static str {
    match kernel {
        KernelArg::Poly3 => "poly3",
        KernelArg::Linear => "linear",
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub kernel: KernelArg,
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_settings(flags: &FitFlags) -> CliResult<Settings> {
    let mut train = TrainConfig::default();
    let mut kernel = KernelArg::Poly3;
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        for (key, value) in parse_key_values(&text)? {
            if key == "kernel" {
                kernel = match value.as_str() {
                    "poly3" => KernelArg::Poly3,
                    "linear" => KernelArg::Linear,
                    _ => return Err(GgpError::Input(format!("kernel: expected poly3 or linear, got `{value}`")).into()),
                };
            } else if !train.set(&key, &value)? {
                return Err(GgpError::Input(format!("{}: unknown config key `{key}`", path.display())).into());
            }
        }
    }
    if let Some(k) = flags.kernel {
        kernel = k;
    }
    if let Some(v) = flags.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = flags.max_iters {
        train.max_iters = v;
    }
    if let Some(v) = flags.seed {
        train.seed = v;
    }
    if let Some(v) = flags.quad_points {
        train.quad_points = v;
    }
    if let Some(v) = flags.epsilon {
        train.epsilon = v;
    }
    if let Some(v) = flags.train_z {
        train.train_z = v;
    }
    if let Some(v) = flags.tfidf {
        train.tfidf = v;
    }
    if let Some(v) = flags.init_hyperparameters {
        train.init_hyperparameters = v;
    }
    train.validate()?;
    Ok(Settings { train, kernel })
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

fn accuracy_on(model: &TrainedModel, ds: &Dataset, split: &[usize]) -> CliResult<Option<f64>> {
    if split.is_empty() {
        return Ok(None);
    }
    Ok(Some(model.accuracy(split, &ds.labels)?))
}

#[derive(Debug, Serialize)]
struct RestartMetrics {
    seed: u64,
    iterations: usize,
    initial_elbo: Option<f64>,
    final_elbo: f64,
    train_accuracy: f64,
    val_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn train(args: TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let settings = resolve_settings(&args.fit)?;
    if args.restarts == 0 {
        return Err(GgpError::Input("restarts must be >= 1".into()).into());
    }
    let ds = load(&args.data)?;
    let mut train_nodes = ds.splits.train.clone();
    if args.use_val_labels {
        train_nodes.extend_from_slice(&ds.splits.val);
        train_nodes.sort_unstable();
    }
    if train_nodes.is_empty() {
        return Err(GgpError::Input("the training split is empty".into()).into());
    }
    let labelled = ds.labelled(&train_nodes);
    let prior = ds.prior(kernel_spec(settings.kernel), settings.train.tfidf)?;
    let seeds: Vec<u64> = (0..args.restarts as u64).map(|r| settings.train.seed + r).collect();
    create_dir(&args.out)?;

    let fits = par_map(&seeds, |&seed| {
        let cfg = TrainConfig { seed, ..settings.train.clone() };
        fit(&prior, &labelled, ds.n_classes, &cfg)
    });

    let mut artifacts = Vec::new();
    let mut restarts = Vec::new();
    let mut first_error = None;
    for (&seed, result) in seeds.iter().zip(fits) {
        let model = match result {
            Ok(m) => m,
            Err(e) => {
                if let Some(div) = &e.divergence {
                    let path = args.out.join(format!("divergence-{seed}.json"));
                    write_json(&path, div)?;
                    artifacts.push(path);
                }
                log::error!("restart with seed {seed} failed: {e}");
                first_error.get_or_insert(e.error);
                continue;
            }
        };
        let cfg = TrainConfig { seed, ..settings.train.clone() };
        let ck_path = args.out.join(format!("checkpoint-{seed}.json"));
        Checkpoint::new(&model, &ds, &train_nodes, &cfg).save(&ck_path)?;
        let trace_path = args.out.join(format!("trace-{seed}.csv"));
        write_text(&trace_path, &model.trace_csv())?;
        artifacts.push(ck_path);
        artifacts.push(trace_path);
        restarts.push(RestartMetrics {
            seed,
            iterations: model.elbo_trace.len(),
            initial_elbo: model.elbo_trace.first().copied(),
            final_elbo: model.final_elbo,
            train_accuracy: model.accuracy(&train_nodes, &ds.labels)?,
            val_accuracy: if args.use_val_labels { None } else { accuracy_on(&model, &ds, &ds.splits.val)? },
            test_accuracy: accuracy_on(&model, &ds, &ds.splits.test)?,
        });
    }

    let test: Vec<f64> = restarts.iter().filter_map(|r| r.test_accuracy).collect();
    let train_acc: Vec<f64> = restarts.iter().map(|r| r.train_accuracy).collect();
    let summary = json!({
        "completed_restarts": restarts.len(),
        "mean_train_accuracy": (!train_acc.is_empty()).then(|| mean_std(&train_acc).0),
        "mean_test_accuracy": (!test.is_empty()).then(|| mean_std(&test).0),
        "std_test_accuracy": (!test.is_empty()).then(|| mean_std(&test).1),
    });
    let metrics = json!({ "summary": summary, "restarts": restarts });
    let metrics_path = args.out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    artifacts.push(metrics_path);

    let manifest = RunManifest {
        command: "train".into(),
        config: json!({
            "train": settings.train,
            "kernel": kernel_name(settings.kernel),
            "restarts": args.restarts,
            "use_val_labels": args.use_val_labels,
            "data": resolve_data_dir(&args.data.data),
            "dataset": ds.stats(),
        }),
        seeds,
        dataset_fingerprint: Some(ds.fingerprint()),
        artifacts,
        duration_seconds: start.elapsed().as_secs_f64(),
        metrics: summary,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    print_json(&manifest);
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.restore(&ds)?;
    let nodes = ds.splits.get(&args.split)?;
    if nodes.is_empty() {
        return Err(GgpError::Input(format!("split `{}` has no nodes", args.split)).into());
    }
    let pred = model.predict(nodes)?;
    let k = ds.n_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&v, &p) in nodes.iter().zip(&pred) {
        confusion[ds.labels[v]][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    print_json(&json!({
        "split": args.split,
        "nodes": nodes.len(),
        "accuracy": correct as f64 / nodes.len() as f64,
        "confusion": confusion,
        "confusion_layout": "rows are true classes, columns predicted classes",
    }));
    Ok(())
}

fn active(args: ActiveArgs) -> CliResult<()> {
    let start = Instant::now();
    let settings = resolve_settings(&args.fit)?;
    if args.seeds == 0 {
        return Err(GgpError::Input("seeds must be >= 1".into()).into());
    }
    let full = load(&args.data)?;
    let (ds, _) = full.restrict_to_largest_component()?;
    log::info!("largest connected component: {} of {} nodes", ds.n_nodes(), full.n_nodes());

    let model: Box<dyn NodeClassifier> = match args.model {
        ModelArg::Ggp => Box::new(GgpClassifier {
            prior: ds.prior(kernel_spec(settings.kernel), settings.train.tfidf)?,
            n_classes: ds.n_classes,
            config: settings.train.clone(),
        }),
        ModelArg::Lp => Box::new(LpClassifier { graph: Arc::clone(&ds.graph), n_classes: ds.n_classes }),
    };
    let config = ActiveConfig {
        acquisition: match args.acq {
            AcqArg::Sopt => Acquisition::Sopt,
            AcqArg::Rand => Acquisition::Random,
        },
        budget: args.budget,
        delta: args.delta,
    };
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|s| settings.train.seed + s).collect();
    let runs = active_loop(&ds.graph, &ds.labels, model.as_ref(), &config, &seeds)?;
    let summary = summarize(model.name(), &config, &runs)?;

    create_dir(&args.out)?;
    let curves = args.out.join("curves.csv");
    write_text(&curves, &curves_csv(&runs))?;
    let alc_path = args.out.join("alc.json");
    write_json(&alc_path, &summary)?;
    let queries = args.out.join("queries.json");
    let query_lists: Vec<Value> = runs.iter().map(|r| json!({ "seed": r.seed, "queries": r.queries })).collect();
    write_json(&queries, &query_lists)?;

    let manifest = RunManifest {
        command: "active".into(),
        config: json!({
            "model": model.name(),
            "active": config,
            "train": settings.train,
            "kernel": kernel_name(settings.kernel),
            "data": resolve_data_dir(&args.data.data),
            "nodes_total": full.n_nodes(),
            "nodes_largest_component": ds.n_nodes(),
        }),
        seeds,
        dataset_fingerprint: Some(full.fingerprint()),
        artifacts: vec![curves, alc_path, queries],
        duration_seconds: start.elapsed().as_secs_f64(),
        metrics: json!({ "alc_mean": summary.alc_mean, "alc_std_error": summary.alc_std_error }),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    print_json(&manifest);
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let shape = InstanceShape {
        nodes: args.nodes,
        classes: args.classes,
        inducing: args.inducing,
        features: args.features,
    };
    let spec = match args.kernel {
        KernelArg::Poly3 => KernelSpec::polynomial(0.5, 1.0)?,
        KernelArg::Linear => KernelSpec::linear(0.8)?,
    };
    let mut cfg = TrainConfig::default();
    if let Some(q) = args.quad_points {
        cfg.quad_points = q;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    cfg.validate()?;
    let (prior, state, labelled) = random_instance(&shape, spec, args.seed)?;
    let report = grad_check(&prior, &state, &labelled, &cfg)?;
    let out = json!({
        "instance": shape,
        "kernel": kernel_name(args.kernel),
        "seed": args.seed,
        "quad_points": cfg.quad_points,
        "tolerance": args.tolerance,
        "passes": report.passes(args.tolerance),
        "report": report,
    });
    print_json(&out);
    if report.passes(args.tolerance) {
        return Ok(());
    }
    let worst = report.worst().expect("at least one block");
    Err(CliError::Check {
        message: format!(
            "gradient check failed: block `{}` has relative error {:e} at parameter {} (tolerance {:e})",
            worst.block, worst.max_rel_error, worst.worst_index, args.tolerance
        ),
        report: out,
    })
}

fn synth(args: SynthArgs) -> CliResult<()> {
    let cfg = SbmConfig {
        n_per_block: args.n_per_block,
        n_blocks: args.blocks,
        p_in: args.p_in,
        p_out: args.p_out,
        d_per_block: args.d_per_block,
        noise: args.noise,
        seed: args.seed,
        train_per_block: args.train_per_block,
        n_val: args.val,
    };
    let ds = synth_sbm(&cfg)?;
    write_dataset(&ds, &args.out)?;
    print_json(&json!({
        "out": args.out,
        "config": cfg,
        "stats": ds.stats(),
        "fingerprint": ds.fingerprint(),
    }));
    Ok(())
}

fn validate_data(args: DataArgs) -> CliResult<()> {
    let ds = load(&args)?;
    let comp = ds.graph.connected_components();
    let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
    let (lcc, _) = ds.restrict_to_largest_component()?;
    print_json(&json!({
        "data": resolve_data_dir(&args.data),
        "stats": ds.stats(),
        "connected_components": n_comp,
        "largest_component_nodes": lcc.n_nodes(),
        "fingerprint": ds.fingerprint(),
    }));
    Ok(())
}
