mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use treecert::io::{self, GenSpec};
use treecert::metrics::{measure, MeasureReport};
use treecert::{
    analyze_ensemble, neighborhood_experiment, AnalysisConfig, Dataset, Ensemble, Error, HyperRectangle, Interval,
    Label, LabeledInstance, StableRegion, ThreatModel,
};

use args::{AnalysisArgs, AnalyzeArgs, Cli, Command, DataArgs, GenArgs, PerturbArgs, ThreatArgs, VerifyArgs};

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TREECERT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Analyze(a) => analyze(cli, a),
        Command::Verify(v) => verify(cli, v),
        Command::Perturb(p) => perturb(cli, p),
        Command::Gen(g) => gen(cli, g),
    }
}

fn require_file(path: &Path) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        }))
    }
}

fn prepare_out_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

/// Writes everything needed to rerun the command.
fn echo_config(cli: &Cli, dir: &Path, extra: serde_json::Value) -> Outcome<()> {
    let echo = json!({
        "treecert_version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
        "args": cli,
        "resolved": extra,
    });
    Ok(io::save_json(dir.join("config.json"), &echo)?)
}

fn threat_for(args: &ThreatArgs, d: usize) -> Outcome<ThreatModel> {
    match (&args.threat_json, args.delta, args.budget) {
        (Some(path), _, _) => {
            let t = io::load_threat(path)?;
            t.check_dim(d)?;
            Ok(t)
        }
        (None, Some(delta), Some(budget)) => {
            if delta.is_nan() || delta < 0.0 {
                return Err(Failure::Usage(format!("--delta must be >= 0, got {delta}")));
            }
            Ok(ThreatModel::uniform(d, delta, budget)?)
        }
        _ => Err(Failure::Usage("give either --threat-json or --delta with --budget".into())),
    }
}

fn analysis_config(args: &AnalysisArgs, seed: u64) -> Outcome<AnalysisConfig> {
    let config = AnalysisConfig {
        max_iterations: args.iterations.get(),
        split_fraction: args.split_fraction,
        workers: args.workers,
        rng_seed: seed,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Outcome<()> {
    require_file(&a.model)?;
    if let Some(p) = &a.threat.threat_json {
        require_file(p)?;
    }
    let config = analysis_config(&a.analysis, a.seed)?;
    prepare_out_dir(&a.out)?;
    let model = io::load_model(&a.model)?;
    let threat = threat_for(&a.threat, model.n_features())?;
    echo_config(cli, &a.out, json!({ "threat": threat, "analysis": config }))?;

    let analysis = analyze_ensemble(&model, &threat, &config)?;
    let region = StableRegion::from_attacks(&analysis.attacks, model.n_features())?;
    io::save_attacks(a.out.join("attacks.json"), &analysis.attacks, model.n_features())?;
    io::save_region(a.out.join("region.json"), &region)?;
    io::save_json(a.out.join("telemetry.json"), &analysis.telemetry)?;
    println!(
        "{} attacks, {} unstable boxes, converged: {}, {:.3}s",
        analysis.attacks.len(),
        region.unstable_pres().len(),
        analysis.telemetry.converged,
        analysis.telemetry.wall_time_secs
    );
    Ok(())
}

/// Model, test set, threat model and certified region shared by `verify` and `perturb`.
struct Prepared {
    model: Ensemble,
    data: Dataset,
    threat: ThreatModel,
    region: StableRegion,
    clip: Option<HyperRectangle>,
    analysis_secs: f64,
    resolved: serde_json::Value,
}

fn prepare(d: &DataArgs, seed: u64) -> Outcome<Prepared> {
    require_file(&d.model)?;
    require_file(&d.data)?;
    for p in d.region.iter().chain(&d.threat.threat_json) {
        require_file(p)?;
    }
    if let Some(e) = d.epsilons.iter().find(|e| e.is_nan() || **e < 0.0) {
        return Err(Failure::Usage(format!("--epsilon must be >= 0, got {e}")));
    }
    let config = analysis_config(&d.analysis, seed)?;
    prepare_out_dir(&d.out)?;

    let model = io::load_model(&d.model)?;
    let mut data = io::load_dataset_libsvm(&d.data)?.with_features(model.n_features())?;
    if d.normalize {
        data = io::normalize(&data)?.0;
    }
    let threat = threat_for(&d.threat, model.n_features())?;
    let start = Instant::now();
    let region = match &d.region {
        Some(p) => {
            let r = io::load_region(p)?;
            if r.dim() != model.n_features() {
                return Err(Failure::Data(Error::DimensionMismatch {
                    expected: model.n_features(),
                    found: r.dim(),
                }));
            }
            r
        }
        None => {
            let analysis = analyze_ensemble(&model, &threat, &config)?;
            info!("analysis: {:?}", analysis.telemetry);
            StableRegion::from_attacks(&analysis.attacks, model.n_features())?
        }
    };
    let clip = d
        .clip_domain
        .map(|(lo, hi)| HyperRectangle::new(vec![Interval::closed(lo, hi); model.n_features()]));
    let resolved = json!({
        "threat": threat,
        "analysis": if d.region.is_some() { serde_json::Value::Null } else { serde_json::to_value(&config).unwrap_or_default() },
        "instances": data.len(),
        "features": model.n_features(),
    });
    Ok(Prepared {
        model,
        data,
        threat,
        region,
        clip,
        analysis_secs: start.elapsed().as_secs_f64(),
        resolved,
    })
}

fn names(d: &DataArgs) -> (String, String) {
    let stem = |p: &PathBuf| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    (d.dataset_name.clone().unwrap_or_else(|| stem(&d.data)), stem(&d.model))
}

fn verify(cli: &Cli, v: &VerifyArgs) -> Outcome<()> {
    let p = prepare(&v.data, v.seed)?;
    echo_config(cli, &v.data.out, p.resolved.clone())?;
    let (dataset, model_name) = names(&v.data);
    let mut reports = Vec::new();
    for &eps in &v.data.epsilons {
        let exact = (!v.no_exact).then_some(&p.threat);
        let mut inputs = match measure(&p.region, &p.model, &p.data, eps, exact, p.clip.as_ref()) {
            Err(Error::OracleInfeasible { count, cap }) => {
                warn!("exact robustness skipped: {count} attack representatives exceed the cap of {cap}");
                measure(&p.region, &p.model, &p.data, eps, None, p.clip.as_ref())?
            }
            other => other?,
        };
        inputs.dataset = dataset.clone();
        inputs.model = model_name.clone();
        inputs.budget = p.threat.budget();
        inputs.analysis_secs = p.analysis_secs;
        inputs.config = p.resolved.clone();
        reports.push(MeasureReport::new(inputs)?);
    }
    io::save_report(v.data.out.join("report.csv"), v.data.out.join("report.json"), &reports)?;
    print_reports(&reports);
    Ok(())
}

fn perturb(cli: &Cli, a: &PerturbArgs) -> Outcome<()> {
    let p = prepare(&a.data, a.seed)?;
    let mut resolved = p.resolved.clone();
    resolved["sets"] = json!(a.sets);
    resolved["seed"] = json!(a.seed);
    echo_config(cli, &a.data.out, resolved.clone())?;
    let (dataset, model_name) = names(&a.data);
    let mut reports = Vec::new();
    for &eps in &a.data.epsilons {
        let mut inputs = measure(&p.region, &p.model, &p.data, eps, Some(&p.threat), p.clip.as_ref())?;
        let start = Instant::now();
        let exp = neighborhood_experiment(&p.model, &p.data, eps, &p.threat, a.sets, a.seed)?;
        let worst_path = a.data.out.join(format!("worst_eps{eps}.libsvm"));
        io::write_atomic(&worst_path, io::write_libsvm(&exp.worst).as_bytes())?;
        inputs.measure_secs += start.elapsed().as_secs_f64();
        inputs.experiment = Some(exp);
        inputs.dataset = dataset.clone();
        inputs.model = model_name.clone();
        inputs.budget = p.threat.budget();
        inputs.analysis_secs = p.analysis_secs;
        inputs.config = resolved.clone();
        reports.push(MeasureReport::new(inputs)?);
    }
    io::save_report(a.data.out.join("perturb.csv"), a.data.out.join("perturb.json"), &reports)?;
    print_reports(&reports);
    Ok(())
}

fn print_reports(reports: &[MeasureReport]) {
    let opt = |f: Option<treecert::Fraction>| f.map_or("-".to_string(), |f| format!("{:.4}", f.value()));
    for r in reports {
        println!(
            "eps={} a={:.4} r={} r_hat={:.4} R_hat={:.4} r_bar={} r_min={} r_max={}",
            r.epsilon,
            r.a.value(),
            opt(r.r),
            r.r_hat.value(),
            r.resilience_hat.value(),
            opt(r.r_bar),
            opt(r.r_min),
            opt(r.r_max)
        );
    }
}

fn gen(cli: &Cli, g: &GenArgs) -> Outcome<()> {
    let spec = GenSpec {
        n_trees: g.trees,
        depth: g.depth,
        n_features: g.features,
        threshold_lo: g.threshold_lo,
        threshold_hi: g.threshold_hi,
        threshold_step: g.threshold_step,
        labels: g.labels.iter().map(|&l| Label(l)).collect(),
        seed: g.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&g.label_noise) {
        return Err(Failure::Usage(format!("--label-noise must lie in [0,1], got {}", g.label_noise)));
    }
    let model = io::random_ensemble(&spec)?;
    io::save_model(&g.out, &model)?;
    if let (Some(n), Some(path)) = (g.instances, &g.data_out) {
        let data = sample_dataset(&model, &spec, n, g.label_noise);
        io::write_atomic(path, io::write_libsvm(&data).as_bytes())?;
    }
    let dir = g.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = g.out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let echo = json!({
        "treecert_version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
        "args": cli,
        "resolved": { "spec": spec },
    });
    io::save_json(dir.join(format!("{name}.config.json")), &echo)?;
    println!("wrote {} trees to {}", model.trees().len(), g.out.display());
    Ok(())
}

/// Uniform instances over the threshold range, labelled by the model with
/// some label noise. Uses the ChaCha stream after the trees' streams.
fn sample_dataset(model: &Ensemble, spec: &GenSpec, n: usize, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.n_trees as u64);
    let labels: Vec<Label> = model.labels().iter().collect();
    let instances = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..spec.n_features)
                .map(|_| rng.gen_range(spec.threshold_lo..=spec.threshold_hi))
                .collect();
            let mut y = model.predict(&x).expect("dimension matches");
            if rng.gen_bool(noise) {
                y = labels[rng.gen_range(0..labels.len())];
            }
            LabeledInstance::new(x, y)
        })
        .collect();
    Dataset::new(instances, spec.n_features).expect("rows share the dimension")
}
