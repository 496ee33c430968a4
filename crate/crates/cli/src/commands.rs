use std::fmt::Write as _;
use std::path::PathBuf;

use gfdrift::ensemble::format_scalar;
use gfdrift::{
    mmd2_biased, run_flow, train as train_generator, EnergyConfig, Ensemble, FieldContext, FlowConfig,
    Generator, Geometry, KernelFamily, KernelSpec, SeededStream, TrainConfig, VectorField,
};
use serde_json::{json, Value};

use crate::config::{FieldKind, InitialSpec, RunConfig};
use crate::manifest::RunDir;
use crate::verify::run_checks;
use crate::{CliError, CommonArgs, MmdArgs};

struct Loaded {
    cfg: RunConfig,
    echo: Value,
    seed: u64,
}

fn load(args: &CommonArgs, required: bool) -> Result<Loaded, CliError> {
    let (mut cfg, mut echo) = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(CliError::usage("--config is required for this command")),
        None => (RunConfig::default(), json!({})),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Value::Object(m) = &mut echo {
        m.insert("seed".into(), json!(cfg.seed));
    }
    let seed = cfg.seed;
    Ok(Loaded { cfg, echo, seed })
}

fn out_dir(args: &CommonArgs, cfg: &RunConfig) -> Result<RunDir, CliError> {
    let dir: PathBuf = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output.dir"))?;
    RunDir::create(&dir)
}

fn target(cfg: &RunConfig) -> Result<Ensemble<f64>, CliError> {
    match (&cfg.dataset, &cfg.ensembles) {
        (Some(d), None) => Ok(d.sample()?),
        (None, Some(e)) => Ok(Ensemble::load_csv(&e.data, e.sphere)?),
        (Some(_), Some(_)) => Err(CliError::usage("give either `dataset` or `ensembles`, not both")),
        (None, None) => Err(CliError::usage("config needs a `dataset` or `ensembles` section")),
    }
}

fn initial(cfg: &RunConfig, spec: Option<&InitialSpec>, dim: usize, seed: u64) -> Result<Ensemble<f64>, CliError> {
    if let Some(e) = &cfg.ensembles {
        if let Some(path) = &e.generated {
            if spec.is_some() {
                return Err(CliError::usage("give either flow.initial or ensembles.generated, not both"));
            }
            return Ok(Ensemble::load_csv(path, e.sphere)?);
        }
    }
    let spec = spec.ok_or_else(|| CliError::usage("flow needs initial particles: flow.initial or ensembles.generated"))?;
    let mut rng = SeededStream::derived(seed, 1);
    match spec {
        InitialSpec::Gaussian { n, mean, std } => {
            if mean.len() != dim {
                return Err(CliError::usage(format!("flow.initial.mean has {} entries, data dimension is {dim}", mean.len())));
            }
            if !(*std > 0.0) || *n == 0 {
                return Err(CliError::usage("flow.initial needs n >= 1 and std > 0"));
            }
            let pts = (0..*n).flat_map(|_| mean.iter().map(|m| m + std * rng.normal()).collect::<Vec<_>>()).collect();
            Ok(Ensemble::new(Geometry::euclidean(dim)?, pts)?)
        }
        InitialSpec::UniformSphere { n, dim: sd } => {
            if *sd != dim || *n == 0 {
                return Err(CliError::usage(format!("flow.initial must have n >= 1 and dim {dim}")));
            }
            let mut pts = Vec::with_capacity(n * dim);
            for _ in 0..*n {
                let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                pts.extend(v.into_iter().map(|a| a / r));
            }
            Ok(Ensemble::new(Geometry::sphere(dim)?, pts)?)
        }
    }
}

pub fn verify(args: &CommonArgs, argv: Vec<String>) -> Result<(), CliError> {
    let Loaded { cfg, echo, seed } = load(args, false)?;
    let mut run = out_dir(args, &cfg)?;
    let section = cfg.verify.clone().unwrap_or_default();
    let report = run_checks(&section, seed)?;
    run.write_json("verify.json", &report)?;
    for c in &report.checks {
        println!("{:<40} {:<24} {}", c.kernel, c.check, c.status);
    }
    run.finish(argv, echo, seed)?;
    if report.all_passed {
        Ok(())
    } else {
        Err(CliError::check("one or more verification checks failed (see verify.json)"))
    }
}

pub fn flow(args: &CommonArgs, argv: Vec<String>) -> Result<(), CliError> {
    let Loaded { cfg, echo, seed } = load(args, true)?;
    let section = cfg.flow.clone().ok_or_else(|| CliError::usage("config has no `flow` section"))?;
    let data = target(&cfg)?;
    let start = initial(&cfg, section.initial.as_ref(), data.dim(), seed)?;
    let kernel = KernelSpec::new(cfg.kernel()?, data.geometry())?;
    let field = match section.field {
        FieldKind::Velocity => VectorField::Divergence(cfg.divergence()?),
        FieldKind::Drifting => VectorField::Drifting,
    };
    let energy = match &section.energy {
        Some(e) => {
            let divergence = match (e.divergence, cfg.divergence) {
                (Some(d), _) | (None, Some(d)) => d,
                (None, None) => return Err(CliError::usage("flow.energy needs a divergence")),
            };
            Some(EnergyConfig { estimator: e.estimator.clone(), divergence })
        }
        None => None,
    };
    let config = FlowConfig { dt: section.dt, steps: section.steps, snapshot_every: section.snapshot_every, seed, energy };
    config.validate()?;
    let mut ctx = FieldContext::new(kernel, data, start)?.with_zero_at_cusp(section.zero_at_cusp);
    if let Some(c) = section.log_ratio_clamp {
        if !(c > 0.0) {
            return Err(CliError::usage("flow.log_ratio_clamp must be positive"));
        }
        ctx = ctx.with_log_ratio_clamp(c);
    }
    let mut run = out_dir(args, &cfg)?;
    let traj = run_flow(&ctx, &field, &config)?;
    ctx.data.save_csv(run.path("data.csv"))?;
    run.record(&run.path("data.csv"));
    for p in traj.export(run.dir())? {
        run.record(&p);
    }
    if let (Some(first), Some(last)) = (traj.energy_series.first(), traj.energy_series.last()) {
        println!("energy: step {} {} -> step {} {}", first.0, format_scalar(first.1), last.0, format_scalar(last.1));
    }
    println!("{} frames written", traj.frames.len());
    run.finish(argv, echo, seed)
}

pub fn train(args: &CommonArgs, argv: Vec<String>) -> Result<(), CliError> {
    let Loaded { cfg, echo, seed } = load(args, true)?;
    let section = cfg.train.clone().ok_or_else(|| CliError::usage("config has no `train` section"))?;
    let dataset = cfg.dataset.clone().ok_or_else(|| CliError::usage("train needs a `dataset` section"))?;
    let data = dataset.sample()?;
    let holdout = gfdrift::DatasetSpec { seed: dataset.seed.wrapping_add(1), ..dataset.clone() }.with_n(section.holdout).sample()?;
    let geometry = data.geometry();
    if section.layers.last() != Some(&data.dim()) {
        return Err(CliError::usage(format!("train.layers must end with the data dimension {}", data.dim())));
    }
    let gen = Generator::new(&section.layers, section.activation, seed)?;
    let mut tc = TrainConfig::new(KernelSpec::new(cfg.kernel()?, geometry)?, cfg.divergence()?);
    tc.batch_size = section.batch_size;
    tc.iterations = section.iterations;
    tc.learning_rate = section.learning_rate;
    tc.optimizer = section.optimizer;
    tc.metric_every = section.metric_every;
    tc.seed = seed;
    if let Some(c) = section.log_ratio_clamp {
        tc.log_ratio_clamp = c;
    }
    tc.validate()?;
    let mut run = out_dir(args, &cfg)?;
    let out = train_generator(&gen, &data, &holdout, &tc)?;
    let ckpt = run.path("checkpoint.json");
    out.generator.save_json(&ckpt)?;
    run.record(&ckpt);
    let mut loss = String::from("iteration,loss\n");
    for (i, l) in out.loss_history.iter().enumerate() {
        let _ = writeln!(loss, "{},{}", i, format_scalar(*l));
    }
    run.write_text("loss.csv", &loss)?;
    let mut metrics = String::from("step,metric_name,value\n");
    for (s, m) in &out.metric_history {
        let _ = writeln!(metrics, "{s},mmd2_holdout,{}", format_scalar(*m));
    }
    run.write_text("metrics.csv", &metrics)?;
    let final_mmd = out.metric_history.last().map(|m| m.1).unwrap_or(f64::NAN);
    println!("final held-out MMD²: {}", format_scalar(final_mmd));
    run.finish(argv, echo, seed)?;
    match section.mmd_threshold {
        Some(t) if !(final_mmd <= t) => Err(CliError::check(format!("final MMD² {final_mmd} exceeds threshold {t}"))),
        _ => Ok(()),
    }
}

pub fn gen_data(args: &CommonArgs, argv: Vec<String>) -> Result<(), CliError> {
    let Loaded { mut cfg, mut echo, seed } = load(args, true)?;
    let dataset = cfg.dataset.as_mut().ok_or_else(|| CliError::usage("config has no `dataset` section"))?;
    if let Some(s) = args.seed {
        dataset.seed = s;
        if let Some(d) = echo.get_mut("dataset").and_then(Value::as_object_mut) {
            d.insert("seed".into(), json!(s));
        }
    }
    let dataset = dataset.clone();
    let data = dataset.sample()?;
    let mut run = out_dir(args, &cfg)?;
    data.save_csv(run.path("data.csv"))?;
    run.record(&run.path("data.csv"));
    let info = json!({
        "spec": dataset,
        "geometry": data.geometry(),
        "mode_centers": dataset.mode_centers(),
        "mode_radius": dataset.mode_radius(),
    });
    run.write_json("dataset.json", &info)?;
    println!("{} points written", data.len());
    run.finish(argv, echo, seed)
}

pub fn mmd(args: &MmdArgs, argv: Vec<String>) -> Result<(), CliError> {
    let Loaded { cfg, echo, seed } = load(&args.common, false)?;
    let a = Ensemble::load_csv(&args.first, args.sphere)?;
    let b = Ensemble::load_csv(&args.second, args.sphere)?;
    let family = cfg.kernel.unwrap_or(KernelFamily::Gaussian { h: args.bandwidth });
    let kernel = KernelSpec::new(family, a.geometry())?;
    let value = mmd2_biased(&kernel, &a, &b)?;
    println!("{}", format_scalar(value));
    if args.common.out.is_some() || cfg.output.dir.is_some() {
        let mut run = out_dir(&args.common, &cfg)?;
        run.write_json(
            "mmd.json",
            &json!({
                "first": args.first,
                "second": args.second,
                "kernel": family,
                "mmd2_biased": value,
            }),
        )?;
        run.finish(argv, echo, seed)?;
    }
    Ok(())
}
