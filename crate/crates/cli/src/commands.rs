use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ladder_hsi::experiments::{
    aggregates_to_csv, run_sweep, table1_protocol, write_table1, RunConfig, SweepSpec, Table1Row,
};
use ladder_hsi::hsi::{convert_raw, prepare, Endian, HsiCube, RawOrder, RawType};
use ladder_hsi::train::{evaluate, peek_dtype, Checkpoint, CheckpointPolicy, Trainer};
use ladder_hsi::{par, DType, Real};

use crate::config::{self, Flags, Source};
use crate::error::CliError;
use crate::run::{self, RunContext, RunDir};
use crate::{Global, Precision};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum RawDType {
    U8,
    U16,
    I16,
    F32,
    F64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum OrderArg {
    /// C / NumPy order, last axis fastest.
    Row,
    /// Fortran / MATLAB order, first axis fastest.
    Column,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum EndianArg {
    Little,
    Big,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated dimensions, outermost first, e.g. 610,340,103.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, value_enum)]
    pub dtype: RawDType,
    #[arg(long, value_enum, default_value_t = OrderArg::Row)]
    pub order: OrderArg,
    #[arg(long, value_enum, default_value_t = EndianArg::Little)]
    pub endian: EndianArg,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Labeled training pixels per class.
    #[arg(long)]
    pub labels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled training pixels per class.
    #[arg(long)]
    pub labels: Option<usize>,
    /// Save a checkpoint every N iterations (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from a checkpoint. Its training settings win over the config.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Stop once this many iterations are complete, leaving a resumable
    /// checkpoint.
    #[arg(long, value_name = "N")]
    pub stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score. Without --config, the config.toml beside it is used.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Continue an interrupted sweep in an existing run directory.
    #[arg(long, value_name = "RUN_DIR")]
    pub resume: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Fc,
    Conv,
    All,
}

#[derive(Args, Debug)]
pub struct Table1Args {
    #[arg(long, value_enum, default_value_t = Variant::All)]
    pub variant: Variant,
    /// Labels-per-class counts.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub labels: Vec<usize>,
}

fn data_dir(g: &Global) -> PathBuf {
    g.data_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn load(g: &Global, default: &str, labels: Option<usize>) -> Result<(Source, RunConfig), CliError> {
    let source = config::read_source(g.config.as_deref().unwrap_or(default))?;
    let flags = Flags { seed: g.seed, labels };
    let cfg = config::build(&source, &g.set, &flags)?;
    Ok((source, cfg))
}

/// Prints the resolved config as TOML followed by a comment carrying the λ
/// vector, so the whole output still parses.
fn print_resolved(cfg: &RunConfig) {
    print!("{}", cfg.to_toml());
    println!("# lambdas = {}", config::lambda_line(cfg));
}

fn dry_run(g: &Global, cfg: &mut RunConfig) -> Result<(), CliError> {
    let bands = config::bands(cfg, &data_dir(g))?;
    config::resolve(cfg, bands)?;
    print_resolved(cfg);
    Ok(())
}

fn load_cube(g: &Global, cfg: &mut RunConfig) -> Result<HsiCube, CliError> {
    // Validate what can be validated before touching the dataset.
    config::resolve(cfg, None)?;
    let cube = cfg.dataset.load(&data_dir(g))?;
    config::resolve(cfg, Some(cube.bands))?;
    Ok(cube)
}

fn context<'a>(
    g: &'a Global,
    command: &'a str,
    source: &'a Source,
    cfg: &'a RunConfig,
    dd: &'a Path,
    seeds: Vec<u64>,
) -> RunContext<'a> {
    RunContext {
        command,
        source,
        config: cfg,
        data_dir: dd,
        seeds,
        precision: g.precision.name(),
        workers: g.workers,
    }
}

fn io_err(p: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", p.display()))
}

pub fn convert(g: &Global, a: &ConvertArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.input).map_err(|e| io_err(&a.input, e))?;
    let raw = match a.dtype {
        RawDType::U8 => RawType::U8,
        RawDType::U16 => RawType::U16,
        RawDType::I16 => RawType::I16,
        RawDType::F32 => RawType::F32,
        RawDType::F64 => RawType::F64,
    };
    let order = match a.order {
        OrderArg::Row => RawOrder::RowMajor,
        OrderArg::Column => RawOrder::ColumnMajor,
    };
    let endian = match a.endian {
        EndianArg::Little => Endian::Little,
        EndianArg::Big => Endian::Big,
    };
    let file = convert_raw(&bytes, &a.dims, raw, order, endian)?;
    if !g.dry_run {
        file.write(&a.output)?;
    }
    println!(
        "{} dims={:?} dtype={:?} output={}",
        if g.dry_run { "would write" } else { "wrote" },
        file.dims,
        file.data.dtype(),
        a.output.display()
    );
    Ok(())
}

pub fn split(g: &Global, a: &SplitArgs) -> Result<(), CliError> {
    let (source, mut cfg) = load(g, "fc_pavia", a.labels)?;
    if g.dry_run {
        return dry_run(g, &mut cfg);
    }
    let cube = load_cube(g, &mut cfg)?;
    let dd = data_dir(g);
    let dir = run::start(&g.out, &context(g, "split", &source, &cfg, &dd, vec![cfg.train.seed]))?;
    let data = prepare(&cube, &cfg.data, cfg.train.seed)?;
    let path = dir.file("split.csv");
    data.split.write_csv(&data.patches, &path)?;
    println!(
        "labeled={} unlabeled={} test={} split={}",
        data.split.labeled_train.len(),
        data.split.unlabeled_train.len(),
        data.split.test.len(),
        path.display()
    );
    println!("run_dir={}", dir.path.display());
    Ok(())
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<(), CliError> {
    let default = match &a.resume {
        Some(ck) => sibling_config(ck),
        None => "fc_pavia".to_string(),
    };
    let (source, mut cfg) = load(g, &default, a.labels)?;
    let resumed = match &a.resume {
        Some(p) => {
            // The checkpoint's training settings are authoritative.
            let dtype = peek_dtype(p)?;
            let ck_cfg = match dtype {
                DType::F32 => Checkpoint::<f32>::load(p)?.config()?,
                _ => Checkpoint::<f64>::load(p)?.config()?,
            };
            cfg.train = ck_cfg;
            Some((p.clone(), dtype))
        }
        None => None,
    };
    if g.dry_run {
        return dry_run(g, &mut cfg);
    }
    let cube = load_cube(g, &mut cfg)?;
    let dd = data_dir(g);
    let precision = match resumed {
        Some((_, DType::F32)) => Precision::F32,
        Some(_) => Precision::F64,
        None => g.precision,
    };
    let mut ctx = context(g, "train", &source, &cfg, &dd, vec![cfg.train.seed]);
    ctx.precision = precision.name();
    let dir = run::start(&g.out, &ctx)?;
    let resume = resumed.map(|(p, _)| p);
    match precision {
        Precision::F32 => train_in::<f32>(g, a, &cfg, &cube, &dir, resume.as_deref()),
        Precision::F64 => train_in::<f64>(g, a, &cfg, &cube, &dir, resume.as_deref()),
    }
}

fn sibling_config(checkpoint: &Path) -> String {
    checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join("config.toml")
        .to_string_lossy()
        .into_owned()
}

fn train_in<T: Real>(
    g: &Global,
    a: &TrainArgs,
    cfg: &RunConfig,
    cube: &HsiCube,
    dir: &RunDir,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let data = prepare(cube, &cfg.data, cfg.train.seed)?;
    data.split.write_csv(&data.patches, &dir.file("split.csv"))?;
    let ck_path = dir.file(CHECKPOINT_FILE);
    let policy = CheckpointPolicy {
        path: &ck_path,
        every: a.checkpoint_every,
    };
    let report = par::with_workers(g.workers, || -> Result<_, CliError> {
        let mut trainer = match resume {
            Some(p) => Trainer::<T>::resume(Checkpoint::load(p)?, &data)?,
            None => Trainer::<T>::new(&cfg.train, &data)?,
        };
        let until = a
            .stop_after
            .map_or(cfg.train.iterations, |n| n.min(cfg.train.iterations));
        trainer.run_until(until, Some(policy))?;
        Ok(trainer.report()?)
    })?;
    report.write(&dir.path)?;
    println!(
        "oa={:.4} aa={:.4} iterations={} seconds={:.1}",
        report.metrics.oa, report.metrics.aa, report.iterations, report.seconds
    );
    println!("run_dir={}", dir.path.display());
    Ok(())
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<(), CliError> {
    let default = sibling_config(&a.checkpoint);
    let (source, mut cfg) = load(g, &default, None)?;
    let dtype = peek_dtype(&a.checkpoint)?;
    cfg.train = match dtype {
        DType::F32 => Checkpoint::<f32>::load(&a.checkpoint)?.config()?,
        _ => Checkpoint::<f64>::load(&a.checkpoint)?.config()?,
    };
    if g.dry_run {
        return dry_run(g, &mut cfg);
    }
    let cube = load_cube(g, &mut cfg)?;
    let dd = data_dir(g);
    let mut ctx = context(g, "eval", &source, &cfg, &dd, vec![cfg.train.seed]);
    ctx.precision = if dtype == DType::F32 { "f32" } else { "f64" };
    let dir = run::start(&g.out, &ctx)?;
    match dtype {
        DType::F32 => eval_in::<f32>(g, a, &cfg, &cube, &dir),
        _ => eval_in::<f64>(g, a, &cfg, &cube, &dir),
    }
}

fn eval_in<T: Real>(g: &Global, a: &EvalArgs, cfg: &RunConfig, cube: &HsiCube, dir: &RunDir) -> Result<(), CliError> {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    let data = prepare(cube, &cfg.data, cfg.train.seed)?;
    let m = par::with_workers(g.workers, || {
        evaluate(
            &cfg.train.ladder,
            &ck.params,
            &data.patches,
            &data.split.test,
            cfg.train.eval_chunk,
        )
    })?;
    let mut s = String::new();
    writeln!(s, "checkpoint={}", a.checkpoint.display()).unwrap();
    writeln!(s, "iteration={}", ck.iteration).unwrap();
    writeln!(s, "test={}", data.split.test.len()).unwrap();
    writeln!(s, "oa={}", m.oa).unwrap();
    writeln!(s, "aa={}", m.aa).unwrap();
    let per_class: Vec<String> = m
        .per_class
        .iter()
        .map(|p| p.map_or("nan".into(), |v| v.to_string()))
        .collect();
    writeln!(s, "per_class={}", per_class.join(",")).unwrap();
    let rows: Vec<String> = m
        .confusion
        .iter()
        .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
        .collect();
    writeln!(s, "confusion={}", rows.join(";")).unwrap();
    dir.write("eval.txt", s.as_bytes())?;
    println!("oa={:.4} aa={:.4} test={}", m.oa, m.aa, data.split.test.len());
    println!("run_dir={}", dir.path.display());
    Ok(())
}

fn sweep_seeds(g: &Global, configured: &[u64]) -> Vec<u64> {
    match g.seed {
        Some(s) => vec![s],
        None => configured.to_vec(),
    }
}

pub fn sweep(g: &Global, a: &SweepArgs) -> Result<(), CliError> {
    let default = match &a.resume {
        Some(d) => d.join("config.toml").to_string_lossy().into_owned(),
        None => "synthetic".to_string(),
    };
    let (source, mut cfg) = load(g, &default, None)?;
    let Some(sw) = cfg.sweep.clone() else {
        return Err(CliError::config("config has no [sweep] section"));
    };
    if g.dry_run {
        return dry_run(g, &mut cfg);
    }
    let cube = load_cube(g, &mut cfg)?;
    let seeds = sweep_seeds(g, &sw.seeds);
    let spec = SweepSpec {
        base: cfg.train.clone(),
        data: cfg.data.clone(),
        axis: sw.axis,
        values: sw.values.clone(),
        seeds: seeds.clone(),
        lambda_mode: sw.lambda_mode,
    };
    spec.validate()?;
    let dir = match &a.resume {
        Some(d) if d.join(run::MANIFEST).is_file() => RunDir { path: d.clone() },
        Some(d) => return Err(CliError::config(format!("{} is not a run directory", d.display()))),
        None => {
            let dd = data_dir(g);
            run::start(&g.out, &context(g, "sweep", &source, &cfg, &dd, seeds))?
        }
    };
    let runs = dir.file("sweep_runs.csv");
    let result = match g.precision {
        Precision::F32 => run_sweep::<f32>(&spec, &cube, Some(&runs), g.workers)?,
        Precision::F64 => run_sweep::<f64>(&spec, &cube, Some(&runs), g.workers)?,
    };
    let summary = aggregates_to_csv(sw.axis, &result.aggregates);
    dir.write("sweep_summary.csv", summary.as_bytes())?;
    print!("{summary}");
    println!("run_dir={}", dir.path.display());
    Ok(())
}

pub fn table1(g: &Global, a: &Table1Args) -> Result<(), CliError> {
    let variants: Vec<(&str, &str)> = match (a.variant, &g.config) {
        (Variant::All, Some(_)) => {
            return Err(CliError::config(
                "--config with table1 needs --variant fc or --variant conv",
            ))
        }
        (Variant::All, None) => vec![("fc", "fc_pavia"), ("conv", "conv_pavia")],
        (Variant::Fc, _) => vec![("fc", "fc_pavia")],
        (Variant::Conv, _) => vec![("conv", "conv_pavia")],
    };
    if a.labels.is_empty() {
        return Err(CliError::config("--labels needs at least one count"));
    }
    let mut loaded = Vec::new();
    for (variant, preset) in &variants {
        let (source, cfg) = load(g, preset, None)?;
        loaded.push((*variant, source, cfg));
    }
    if g.dry_run {
        for (variant, _, cfg) in &mut loaded {
            println!("# variant = {variant}");
            dry_run(g, cfg)?;
        }
        return Ok(());
    }
    let seeds = match g.seed {
        Some(s) => vec![s],
        None => (1..=5).collect(),
    };
    let mut cubes = Vec::new();
    for (_, _, cfg) in &mut loaded {
        cubes.push(load_cube(g, cfg)?);
    }
    let combined = Source {
        name: loaded
            .iter()
            .map(|(_, s, _)| s.name.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        path: loaded[0].1.path.clone(),
        text: loaded
            .iter()
            .map(|(_, s, _)| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
    };
    let dd = data_dir(g);
    let dir = run::start(
        &g.out,
        &context(g, "table1", &combined, &loaded[0].2, &dd, seeds.clone()),
    )?;
    for (variant, _, cfg) in loaded.iter().skip(1) {
        dir.write(&format!("config_{variant}.toml"), cfg.to_toml().as_bytes())?;
    }
    let mut rows: Vec<Table1Row> = Vec::new();
    for ((variant, _, cfg), cube) in loaded.iter().zip(&cubes) {
        let r = match g.precision {
            Precision::F32 => table1_protocol::<f32>(variant, cfg, cube, &a.labels, &seeds, g.workers, &dir.path)?,
            Precision::F64 => table1_protocol::<f64>(variant, cfg, cube, &a.labels, &seeds, g.workers, &dir.path)?,
        };
        rows.extend(r);
    }
    let path = dir.file("table1.csv");
    write_table1(&rows, &path)?;
    print!("{}", std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?);
    println!("run_dir={}", dir.path.display());
    Ok(())
}
