use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ctxfuse_core::audio::{to_image, FeatureParams};
use ctxfuse_core::calibration::{ace_thresholded, ece, ReliabilityBins};
use ctxfuse_core::diff::{grad_check, GradCheckConfig};
use ctxfuse_core::pipeline::{
    ablation_harness, assemble_model, generate_task, reports_to_csv, run_experiment, sample_loss, AblationAxis,
    ExperimentConfig, InputShape, Metrics, RunReport,
};
use ctxfuse_core::significance::AsoConfig;
use ctxfuse_core::transport::{barycentric_map, cost_matrix, emd_exact, sinkhorn, uniform, Coupling, Metric};
use ctxfuse_core::{Matrix, Mode};

use crate::error::{CliError, CliResult};
use crate::input::{read_points, read_predictions, read_scores, read_text, read_wav, write_text};
use crate::{
    AblateArgs, AsoArgs, CalibArgs, EvalArgs, FeatureFormat, FeaturesArgs, GradcheckArgs, OtArgs, ReportArgs, Solver,
    TableFormat, TrainArgs,
};

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = read_text(path)?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn to_json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values always serialize");
    s.push('\n');
    s
}

fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn summary_line(r: &RunReport) -> String {
    let mut line = format!("{}: {} runs", r.name, r.runs.len());
    for (name, (m, s)) in Metrics::NAMES.iter().zip(r.mean.values().iter().zip(r.std.values())) {
        line.push_str(&format!(", {name} {m:.4} ± {s:.4}"));
    }
    if !r.failures.is_empty() {
        line.push_str(&format!(", {} failed", r.failures.len()));
    }
    line
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into()),
    };
    let report = run_experiment(&name, &cfg.model, &cfg.train, &cfg.task)?;
    let mut json = report.to_json()?;
    json.push('\n');
    write_text(&args.out, &json)?;
    println!("{}", summary_line(&report));
    Ok(())
}

fn load_report(path: &Path) -> CliResult<RunReport> {
    RunReport::from_json(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let report = load_report(&args.report)?;
    match args.format {
        TableFormat::Json => {
            let runs: Vec<_> = report
                .runs
                .iter()
                .map(|r| json!({ "seed": r.seed, "best_epoch": r.outcome.best_epoch, "evaluation": r.evaluation }))
                .collect();
            print!("{}", to_json(&json!({ "name": report.name, "runs": runs })));
        }
        TableFormat::Csv => {
            let mut header = vec!["seed", "epochs", "best_epoch"];
            header.extend(Metrics::NAMES);
            header.extend(["tp", "fp", "tn", "fn"]);
            println!("{}", header.join(","));
            for r in &report.runs {
                let mut row = vec![
                    r.seed.to_string(),
                    r.outcome.epochs_run.to_string(),
                    r.outcome.best_epoch.to_string(),
                ];
                row.extend(r.evaluation.metrics.values().iter().map(|v| format!("{v:.6}")));
                let c = &r.evaluation.confusion;
                row.extend([c.tp, c.fp, c.tn, c.fn_].iter().map(|v| v.to_string()));
                println!("{}", row.join(","));
            }
        }
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let axes: Vec<AblationAxis> = if args.axis == "all" {
        AblationAxis::VARIANTS.to_vec()
    } else {
        vec![args.axis.parse().map_err(|e: ctxfuse_core::Error| CliError::Usage(e.to_string()))?]
    };
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut reports = Vec::new();
    for axis in axes {
        for report in ablation_harness(&cfg.model, &cfg.train, &cfg.task, axis)? {
            let mut json = report.to_json()?;
            json.push('\n');
            write_text(&args.out_dir.join(format!("{}.json", report.name)), &json)?;
            println!("{}", summary_line(&report));
            reports.push(report);
        }
    }
    write_text(&args.out_dir.join("summary.csv"), &reports_to_csv(&reports)?)
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.task.train_size = cfg.task.train_size.clamp(2, 8);
    cfg.task.val_size = 0;
    cfg.task.test_size = 2;
    let data = generate_task(&cfg.task)?;
    let shape = InputShape {
        n: cfg.task.n,
        t: cfg.task.t,
        d_input: cfg.task.d,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut model = assemble_model(&cfg.model, shape, &mut rng)?;
    let images: Vec<&Matrix> = data.train.iter().map(|s| &s.y).collect();
    model.init_references_from(&images, &mut rng)?;
    let sample = data.train[0].clone();
    let frozen = model.transport_weights(&sample.x, &sample.y)?;
    let mut store = model.store.clone();
    let check = GradCheckConfig {
        tolerance: args.tolerance,
        max_entries: Some(args.entries),
        seed: args.seed,
        ..GradCheckConfig::default()
    };
    let reports = grad_check(&mut store, &check, |tape, params| {
        sample_loss(&model, tape, params, &sample, &mut Mode::Eval, frozen.as_ref())
    })?;
    println!("parameter,max_rel_error,passed");
    for r in &reports {
        println!("{},{:.3e},{}", r.name, r.max_rel_error, r.passed);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} of {} parameters exceed relative error {}",
            reports.len(),
            args.tolerance
        )));
    }
    Ok(())
}

pub fn ot(args: &OtArgs) -> CliResult<()> {
    let src = read_points(&args.source)?;
    let tgt = read_points(&args.target)?;
    let metric: Metric = args.metric.parse().map_err(|e: ctxfuse_core::Error| CliError::Usage(e.to_string()))?;
    let cost = cost_matrix(&src, &tgt, metric)?;
    let (a, b) = (uniform(src.rows()), uniform(tgt.rows()));
    let (coupling, iterations): (Coupling, Option<usize>) = match args.solver {
        Solver::Emd => (emd_exact(&a, &b, &cost)?, None),
        Solver::Sinkhorn => {
            let r = sinkhorn(&a, &b, &cost, args.eps, args.max_iters, args.tol)?;
            let iterations = r.iterations;
            (r.into_converged()?, Some(iterations))
        }
    };
    let summary = json!({
        "solver": format!("{:?}", args.solver).to_lowercase(),
        "cost": coupling.cost(&cost),
        "marginal_violation": coupling.marginal_violation(),
        "iterations": iterations,
    });
    print!("{}", to_json(&summary));
    if let Some(p) = &args.plan {
        write_text(p, &matrix_csv(&coupling.plan))?;
    }
    if let Some(p) = &args.mapped {
        write_text(p, &matrix_csv(&barycentric_map(&coupling, &tgt)?))?;
    }
    Ok(())
}

fn bins_csv(name: &str, bins: &ReliabilityBins, out: &mut String) {
    for b in &bins.bins {
        let class = b.class.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{name},{class},{},{},{},{},{}\n",
            b.lower, b.upper, b.count, b.accuracy, b.confidence
        ));
    }
}

pub fn calib(args: &CalibArgs) -> CliResult<()> {
    let preds = read_predictions(&args.input)?;
    let (e, e_bins) = ece(&preds, args.bins)?;
    let (a, a_bins) = ace_thresholded(&preds, args.ranges, args.threshold)?;
    match args.format {
        TableFormat::Json => {
            print!("{}", to_json(&json!({ "ece": e, "ace": a, "ece_bins": e_bins, "ace_bins": a_bins })));
        }
        TableFormat::Csv => {
            let mut out = format!("# ece={e}\n# ace={a}\nmetric,class,lower,upper,count,accuracy,confidence\n");
            bins_csv("ece", &e_bins, &mut out);
            bins_csv("ace", &a_bins, &mut out);
            print!("{out}");
        }
    }
    Ok(())
}

pub fn aso(args: &AsoArgs) -> CliResult<()> {
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let cfg = AsoConfig {
        confidence: args.confidence,
        bootstrap_iters: args.iterations,
        num_comparisons: args.comparisons,
        seed: args.seed,
    };
    let r = ctxfuse_core::significance::aso(&a, &b, &cfg)?;
    println!("eps_min: {:.6}", r.eps_min);
    println!("violation_ratio: {:.6}", r.violation_ratio);
    println!("bootstrap_std: {:.6}", r.bootstrap_std);
    println!("verdict: {}", r.verdict);
    if r.small_sample {
        eprintln!("warning: fewer than five scores in one sample; the bound is unreliable");
    }
    Ok(())
}

pub fn features(args: &FeaturesArgs) -> CliResult<()> {
    let wave = read_wav(&args.input)?;
    let params = FeatureParams {
        n_fft: args.n_fft,
        hop: args.hop,
        n_mels: args.n_mels,
        delta_width: args.delta_width,
        top_db: args.top_db,
        image_size: args.image_size,
    };
    let image = to_image(&wave, &params)?;
    match args.format {
        FeatureFormat::Tensor => {
            let file = fs::File::create(&args.output).map_err(|e| CliError::io(&args.output, e))?;
            image.write_tensor(std::io::BufWriter::new(file)).map_err(|e| match e {
                ctxfuse_core::Error::Io(io) => CliError::io(&args.output, io),
                other => other.into(),
            })?;
        }
        FeatureFormat::Csv => {
            let prefix = args.output.to_string_lossy();
            for (channel, m) in ["mel", "delta", "delta2"].iter().zip(&image.channels) {
                write_text(Path::new(&format!("{prefix}.{channel}.csv")), &matrix_csv(m))?;
            }
        }
    }
    let (c, h, w) = image.shape();
    println!("{c}x{h}x{w} from {} samples at {} Hz", wave.len(), wave.sample_rate());
    Ok(())
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let reports = args.reports.iter().map(|p| load_report(p)).collect::<CliResult<Vec<_>>>()?;
    let table = reports_to_csv(&reports)?;
    match &args.out {
        Some(p) => write_text(p, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}
