//! The `force-effect` command line: `gen`, `train`, `eval`, `predict`, `simulate`, `plot`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

pub mod model_file;
pub mod plot;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::dataset::{encode_records, generate, Dataset, GenConfig, Record, Split};
use crate::encode::{EncodeOptions, EncodedSample};
use crate::eval::{evaluate, holdout_split, EDIT_DS, RELAXED_KS};
use crate::net::{self, InitScheme, ModelConfig};
use crate::physics::simulate;
use crate::quantize::{build_vocabulary, quantize_velocity, sample_steps, VelocitySequence};
use crate::scene::{BandConfig, Category};
use crate::train::{self, majority_sequence, TrainConfig};
use crate::Error;
use model_file::{index_tensor, LoadedModel, ModelFile, ModelHeader, ModelKind};
use report::{Provenance, ReportFile, REPORT_SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Stop threshold applied to regression outputs, whose targets are unit vectors or zero.
pub const REGRESSION_STOP_SPEED: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "force-effect", version, about = "Simulate, learn and evaluate the effect of forces on objects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Tiny,
    Small,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Regression,
    Nn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Every weight N(0, 0.01²).
    Gaussian,
    /// Fan-in scaled weights; extra image channels N(0, 0.01²).
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Relu,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of scenes, forces and ground-truth sequences.
    Gen {
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long, default_value_t = 2)]
        forces_per_body: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Magnitude band edges in newtons: small_lo,medium_lo,large_lo,large_hi.
        #[arg(long, default_value = "2,6,14,30")]
        bands: String,
        /// Probability of repeating a direction in every band.
        #[arg(long, default_value_t = 0.2)]
        p_band: f64,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 64)]
        image_size: u32,
        /// Require every movable category in both the train and test splits.
        #[arg(long)]
        holdout_ready: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sequence model or a baseline.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "small")]
        arch: Arch,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Remove training records whose target has this category.
        #[arg(long)]
        exclude_category: Option<String>,
        /// Add a depth channel to the image input.
        #[arg(long)]
        depth: bool,
        #[arg(long, default_value_t = 1e-2)]
        lr_start: f64,
        #[arg(long, default_value_t = 1e-4)]
        lr_end: f64,
        #[arg(long, value_enum, default_value = "scaled")]
        init: InitArg,
        #[arg(long, value_enum, default_value = "relu")]
        head: HeadArg,
        /// Output-layer weight std for the scaled init.
        #[arg(long, default_value_t = 0.3)]
        head_std: f64,
        /// Output-layer bias for the scaled init.
        #[arg(long, default_value_t = 1.0)]
        head_bias: f64,
        /// Disable inverse-frequency class weighting.
        #[arg(long)]
        no_class_weights: bool,
    },
    /// Evaluate a model on one split and write a report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the prediction for one record.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
    },
    /// Re-simulate one record and print its sampled velocities.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
    },
    /// Draw relaxed-accuracy and edit-distance curves from a report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericAbort { .. } => EXIT_NUMERIC,
            Error::Config(_) | Error::UnknownCategory(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let command_line: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, &command_line, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn execute(cmd: Command, command_line: &[String], out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Gen {
            scenes,
            forces_per_body,
            seed,
            bands,
            p_band,
            image_size,
            holdout_ready,
            out: path,
        } => {
            let mut cfg = GenConfig {
                scenes,
                forces_per_body,
                seed,
                p_band,
                holdout_ready,
                bands: parse_bands(&bands)?,
                ..GenConfig::default()
            };
            cfg.scene.image_width = image_size;
            cfg.scene.image_height = image_size;
            cfg.validate()?;
            let ds = generate(&cfg)?;
            write_atomic(&path, &ds.to_bytes()?)?;
            let c = &ds.header.counts;
            writeln!(
                out,
                "wrote {} records from {} scenes ({} not converged, {} unplaceable forces) to {}",
                c.records,
                c.scenes_generated,
                c.not_converged,
                c.forces_unplaceable,
                path.display()
            )?;
            Ok(())
        }
        Command::Train {
            data,
            arch,
            iters,
            batch,
            seed,
            out: path,
            baseline,
            exclude_category,
            depth,
            lr_start,
            lr_end,
            init,
            head,
            head_std,
            head_bias,
            no_class_weights,
        } => {
            let opts = TrainOptions {
                arch,
                iters,
                batch,
                seed,
                baseline,
                exclude_category,
                depth,
                lr_start,
                lr_end,
                init,
                head,
                head_std,
                head_bias,
                class_weights: !no_class_weights,
            };
            cmd_train(&data, &path, &opts, out, err)
        }
        Command::Eval {
            model,
            data,
            split,
            out: path,
        } => cmd_eval(&model, &data, split.into(), &path, command_line, out, err),
        Command::Predict { model, data, index } => cmd_predict(&model, &data, index, out, err),
        Command::Simulate { data, index } => cmd_simulate(&data, index, out),
        Command::Plot { report, out: dir } => cmd_plot(&report, &dir, out),
    }
}

fn parse_bands(s: &str) -> CliResult<BandConfig> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("--bands: {e}")))?;
    let [a, b, c, d] = v[..] else {
        return Err(usage("--bands takes four comma-separated edges"));
    };
    let bands = BandConfig {
        small: (a, b),
        medium: (b, c),
        large: (c, d),
    };
    bands.validate().map_err(|e| usage(format!("--bands: {e}")))?;
    Ok(bands)
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_dataset(path: &Path) -> CliResult<(Dataset, String)> {
    let bytes = std::fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let ds = Dataset::read_from(&bytes[..])?;
    Ok((ds, sha256_hex(&bytes)))
}

fn config_hash(ds: &Dataset) -> CliResult<String> {
    Ok(sha256_hex(&serde_json::to_vec(&ds.header.config).map_err(Error::from)?))
}

pub struct TrainOptions {
    pub arch: Arch,
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
    pub baseline: Option<Baseline>,
    pub exclude_category: Option<String>,
    pub depth: bool,
    pub lr_start: f64,
    pub lr_end: f64,
    pub init: InitArg,
    pub head: HeadArg,
    pub head_std: f64,
    pub head_bias: f64,
    pub class_weights: bool,
}

fn model_config(opts: &TrainOptions, encode: &EncodeOptions, ds: &Dataset) -> ModelConfig {
    let w = ds.header.config.scene.image_width as usize;
    let h = ds.header.config.scene.image_height as usize;
    let c = encode.image_channels();
    let mut cfg = match opts.arch {
        Arch::Tiny => ModelConfig::tiny(c, h, w),
        Arch::Small => ModelConfig::small(c, h, w),
    };
    cfg.relu_head = opts.head == HeadArg::Relu;
    cfg.init = match opts.init {
        InitArg::Gaussian => InitScheme::Gaussian { std: 0.01 },
        InitArg::Scaled => InitScheme::scaled_with_head(opts.head_std, opts.head_bias),
    };
    cfg
}

fn encode_options(ds: &Dataset, depth: bool) -> EncodeOptions {
    EncodeOptions {
        with_depth: depth,
        f_max: ds.header.config.bands.f_max(),
        ..EncodeOptions::default()
    }
}

fn cmd_train(
    data: &Path,
    path: &Path,
    opts: &TrainOptions,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let (ds, ds_hash) = load_dataset(data)?;
    let (train_records, removed): (Vec<Record>, usize) = match &opts.exclude_category {
        Some(cat) => {
            let h = holdout_split(&ds, cat)?;
            writeln!(
                err,
                "excluding category {cat}: removed {} training records, {} remain, {} test records untouched",
                h.removed.len(),
                h.train.len(),
                h.test.len()
            )?;
            (h.train, h.removed.len())
        }
        None => (ds.split(Split::Train).into_iter().cloned().collect(), 0),
    };
    if train_records.is_empty() {
        return Err(data_err("the train split is empty"));
    }
    let encode = encode_options(&ds, opts.depth);
    let refs: Vec<&Record> = train_records.iter().collect();
    let samples = encode_records(&refs, &encode)?;
    let model = model_config(opts, &encode, &ds);
    let tc = TrainConfig {
        batch_size: opts.batch,
        iterations: opts.iters,
        lr_start: opts.lr_start,
        lr_end: opts.lr_end,
        seed: opts.seed,
        class_weighting: opts.class_weights,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let vocab = build_vocabulary();
    let (kind, tensors, history, index_labels, stop_speed) = match opts.baseline {
        Some(Baseline::Regression) => {
            let o = train::train_regression(&samples, &model, &tc, &vocab)?;
            let t = o.params.tensors().into_iter().cloned().collect();
            (ModelKind::Regression, t, o.loss_history, Vec::new(), REGRESSION_STOP_SPEED)
        }
        Some(Baseline::Nn) => {
            let o = train::train(&samples, &model, &tc)?;
            let index = train::build_index(&o.params, &samples)?;
            let (it, labels) = index_tensor(&index);
            let mut t: Vec<_> = o.params.tensors().into_iter().cloned().collect();
            t.push(it);
            (ModelKind::Nn, t, o.loss_history, labels, ds.header.config.sim.stop_speed)
        }
        None => {
            let o = train::train(&samples, &model, &tc)?;
            let t = o.params.tensors().into_iter().cloned().collect();
            (ModelKind::Sequence, t, o.loss_history, Vec::new(), ds.header.config.sim.stop_speed)
        }
    };
    let header = ModelHeader {
        kind,
        precision: "f64".into(),
        model,
        train: tc,
        encode,
        stop_speed,
        dataset_sha256: ds_hash,
        dataset_config_sha256: config_hash(&ds)?,
        excluded_category: opts.exclude_category.clone(),
        removed_records: removed,
        train_records: samples.len(),
        index_labels,
        manifest: Vec::new(),
    };
    let file = ModelFile::new(header, tensors);
    write_atomic(path, &file.to_bytes()?)?;
    let mut sidecar = String::new();
    for l in &history {
        sidecar.push_str(&format!("{l}\n"));
    }
    write_atomic(&loss_history_path(path), sidecar.as_bytes())?;
    let tail = &history[history.len().saturating_sub(100)..];
    writeln!(
        out,
        "trained {} model on {} records; final mean loss (last {} iterations) {:.6}; wrote {}",
        kind.name(),
        samples.len(),
        tail.len(),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        path.display()
    )?;
    Ok(())
}

/// `<model>.loss.txt`: one mean batch loss per line.
pub fn loss_history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".loss.txt");
    PathBuf::from(s)
}

fn predict_samples(model: &LoadedModel, samples: &[EncodedSample], stop_speed: f64) -> CliResult<Vec<VelocitySequence>> {
    let vocab = build_vocabulary();
    Ok(match model {
        LoadedModel::Sequence(p) => train::predict_all(p, samples)?,
        LoadedModel::Regression(p) => samples
            .iter()
            .map(|s| train::predict_regression(p, s, &vocab, stop_speed))
            .collect::<crate::Result<_>>()?,
        LoadedModel::Nn(p, idx) => samples
            .iter()
            .map(|s| train::nn_predict(idx, p, s))
            .collect::<crate::Result<_>>()?,
    })
}

fn check_dataset(header: &ModelHeader, ds: &Dataset, err: &mut dyn Write) -> CliResult<()> {
    if header.dataset_config_sha256 != config_hash(ds)? {
        writeln!(
            err,
            "warning: dataset configuration differs from the one the model was trained on"
        )?;
    }
    Ok(())
}

fn cmd_eval(
    model_path: &Path,
    data: &Path,
    split: Split,
    path: &Path,
    command_line: &[String],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let model_bytes = std::fs::read(model_path).map_err(|e| data_err(format!("{}: {e}", model_path.display())))?;
    let file = ModelFile::from_bytes(&model_bytes)?;
    let (ds, ds_hash) = load_dataset(data)?;
    check_dataset(&file.header, &ds, err)?;
    let header = file.header.clone();
    let records = ds.split(split);
    if records.is_empty() {
        return Err(data_err(format!("the {} split is empty", split.name())));
    }
    let samples = encode_records(&records, &header.encode)?;
    let model = file.into_model()?;
    let preds = predict_samples(&model, &samples, header.stop_speed)?;
    let gt: Vec<VelocitySequence> = records.iter().map(|r| r.label.clone()).collect();
    let cats: Vec<Category> = records
        .iter()
        .map(|r| r.target_category())
        .collect::<crate::Result<_>>()?;
    let report = evaluate(&preds, &gt, &cats, &build_vocabulary())?;
    let majority = majority_sequence(&gt).map(|(s, _)| s.to_string()).unwrap_or_default();
    let rf = ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        model_kind: header.kind.name().into(),
        split: split.name().into(),
        excluded_category: header.excluded_category.clone(),
        majority_sequence: majority,
        report,
        provenance: Provenance {
            dataset_sha256: ds_hash,
            model_sha256: sha256_hex(&model_bytes),
            command_line: command_line.to_vec(),
            seed: header.train.seed,
        },
    };
    write_atomic(path, &rf.to_bytes()?)?;
    let r = &rf.report;
    writeln!(
        out,
        "{} samples: strict {:.4}, majority {:.4}, chance {:.4}; wrote {}",
        r.n_samples,
        r.strict_accuracy,
        r.majority_level,
        r.chance_level,
        path.display()
    )?;
    Ok(())
}

fn record_at(ds: &Dataset, index: usize) -> CliResult<&Record> {
    ds.records
        .get(index)
        .ok_or_else(|| data_err(format!("record index {index} out of range (dataset has {})", ds.len())))
}

fn cmd_predict(model_path: &Path, data: &Path, index: usize, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let file = ModelFile::load(model_path)?;
    let (ds, _) = load_dataset(data)?;
    check_dataset(&file.header, &ds, err)?;
    let rec = record_at(&ds, index)?;
    let header = file.header.clone();
    let sample = rec.encode(&header.encode)?;
    match file.into_model()? {
        LoadedModel::Sequence(p) => {
            let (dists, _) = net::forward(&p, &sample)?;
            let seq = net::decode_greedy(&dists);
            writeln!(out, "prediction: {seq}")?;
            for (t, (o, tok)) in dists.iter().zip(seq.tokens()).enumerate() {
                let probs: Vec<String> = o.iter().map(|v| format!("{v:.4}")).collect();
                writeln!(out, "step {t}: {tok} p={:.4} [{}]", o[tok.index()], probs.join(" "))?;
            }
        }
        LoadedModel::Regression(p) => {
            let outputs = p.outputs(&sample)?;
            let seq = train::decode_regression(&outputs, &build_vocabulary(), header.stop_speed);
            writeln!(out, "prediction: {seq}")?;
            for (t, c) in outputs.chunks_exact(3).enumerate().take(seq.len()) {
                writeln!(out, "step {t}: ({:.4}, {:.4}, {:.4})", c[0], c[1], c[2])?;
            }
        }
        LoadedModel::Nn(p, idx) => {
            let (row, d2) = idx.nearest(&net::embed(&p, &sample)?)?;
            writeln!(out, "prediction: {}", idx.labels[row])?;
            writeln!(out, "neighbour: training row {row}, distance {:.6}", d2.sqrt())?;
        }
    }
    writeln!(out, "ground truth: {}", rec.label)?;
    Ok(())
}

fn cmd_simulate(data: &Path, index: usize, out: &mut dyn Write) -> CliResult<()> {
    let (ds, _) = load_dataset(data)?;
    let rec = record_at(&ds, index)?;
    let sim = &ds.header.config.sim;
    let trace = simulate(&rec.scene, &rec.force, sim)?;
    let vocab = build_vocabulary();
    writeln!(
        out,
        "record {index}: body {} ({}), force ({:.4}, {:.4}, {:.4}), {} macro-steps, converged {}",
        rec.force.body_id,
        rec.target_category()?,
        rec.force.force.x,
        rec.force.force.y,
        rec.force.force.z,
        trace.states.len(),
        trace.converged
    )?;
    let last = trace.states.len().saturating_sub(1);
    for s in sample_steps(sim) {
        let st = trace.states[s.min(last)];
        let v = st.velocity;
        let tok = quantize_velocity(v, &vocab, sim.stop_speed);
        writeln!(out, "step {s:2}: v = ({:.4}, {:.4}, {:.4}) |v| = {:.4} -> {tok}", v.x, v.y, v.z, v.norm())?;
        if tok.is_stop() {
            break;
        }
    }
    let label = crate::quantize::extract_sequence(&trace, &vocab, sim)?;
    writeln!(out, "sequence: {label}")?;
    writeln!(out, "stored label: {} (match: {})", rec.label, label == rec.label)?;
    if label != rec.label {
        return Err(data_err("re-simulated label differs from the stored label"));
    }
    Ok(())
}

pub const RELAXED_PLOT: &str = "relaxed_accuracy.svg";
pub const EDIT_PLOT: &str = "edit_distance.svg";

fn cmd_plot(report: &Path, dir: &Path, out: &mut dyn Write) -> CliResult<()> {
    let bytes = std::fs::read(report).map_err(|e| data_err(format!("{}: {e}", report.display())))?;
    let rf = ReportFile::from_bytes(&bytes)?;
    std::fs::create_dir_all(dir)?;
    let ks: Vec<f64> = (0..RELAXED_KS).map(|k| k as f64).collect();
    let ds: Vec<f64> = (0..EDIT_DS).map(|d| d as f64).collect();
    let a = plot::line_chart(&plot::Chart {
        title: &format!("Relaxed accuracy ({} model, {} split)", rf.model_kind, rf.split),
        x_label: "k (nearest directions accepted)",
        y_label: "accuracy",
        xs: &ks,
        ys: &rf.report.relaxed,
    });
    let b = plot::line_chart(&plot::Chart {
        title: &format!("Edit-distance curve ({} model, {} split)", rf.model_kind, rf.split),
        x_label: "edit distance d",
        y_label: "fraction within distance d",
        xs: &ds,
        ys: &rf.report.edit_curve,
    });
    write_atomic(&dir.join(RELAXED_PLOT), a.as_bytes())?;
    write_atomic(&dir.join(EDIT_PLOT), b.as_bytes())?;
    writeln!(out, "wrote {} and {} to {}", RELAXED_PLOT, EDIT_PLOT, dir.display())?;
    Ok(())
}

/// Process entry point used by the binary.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
