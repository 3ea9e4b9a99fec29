//! The `vlhsa` command-line front end.
//!
//! Machine-readable results go to stdout; the resolved configuration and
//! progress messages go to stderr. Exit codes: 0 ok, 2 usage or
//! configuration, 3 I/O, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::align::Levels;
use crate::datagen::{
    load_external, make_dataset, DatasetConfig, FeatureWidths, LoadedDataset, SceneStyle, Split, SplitSizes,
    MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::puzzle::{piece_accuracy, EvalReport, GridGeometry};
use crate::training::{evaluate, load_checkpoint, parse_log, save_checkpoint, train, Checkpoint, LogRecord, TrainConfig};
use crate::viz;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train.log.jsonl";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Parser)]
#[command(name = "vlhsa", version, about = "Jigsaw puzzle solving with hierarchical vision-language alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic puzzle dataset.
    Gen(GenArgs),
    /// Train a model and keep the best checkpoint by validation piece accuracy.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split; prints an EvalReport as JSON.
    Eval(EvalArgs),
    /// Solve one instance; prints the assignment as JSON.
    Solve(SolveArgs),
    /// Plot curves and tabulate the off-by-k distribution of a training log.
    Report(ReportArgs),
    /// Train and evaluate the alignment-module ablation grid.
    Ablate(AblateArgs),
}

/// Grid shape written as `ROWSxCOLS`, e.g. `3x3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad grid dimension `{t}`"));
        Ok(Grid {
            rows: parse(r)?,
            cols: parse(c)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum StyleArg {
    Objects,
    DistinctCells,
}

impl From<StyleArg> for SceneStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Objects => SceneStyle::Objects,
            StyleArg::DistinctCells => SceneStyle::DistinctCells,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory (created if missing).
    #[arg(long, env = "VLHSA_GEN_OUT")]
    pub out: PathBuf,
    /// Grid shape, ROWSxCOLS.
    #[arg(long, env = "VLHSA_GEN_GRID", default_value = "3x3")]
    pub grid: Grid,
    /// Side of each square piece in pixels.
    #[arg(long, env = "VLHSA_GEN_PIECE_PX", default_value_t = 16)]
    pub piece_px: usize,
    /// Eroded pixels between neighbouring cells.
    #[arg(long, env = "VLHSA_GEN_GAP_PX", default_value_t = 4)]
    pub gap_px: usize,
    /// Maximum per-axis piece displacement; at most half the gap.
    #[arg(long, env = "VLHSA_GEN_JITTER_PX", default_value_t = 2)]
    pub jitter_px: usize,
    /// Number of training records.
    #[arg(long, env = "VLHSA_GEN_TRAIN", default_value_t = 64)]
    pub train: usize,
    /// Number of validation records.
    #[arg(long, env = "VLHSA_GEN_VAL", default_value_t = 16)]
    pub val: usize,
    /// Number of test records.
    #[arg(long, env = "VLHSA_GEN_TEST", default_value_t = 16)]
    pub test: usize,
    /// Generation seed.
    #[arg(long, env = "VLHSA_GEN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Scene style.
    #[arg(long, env = "VLHSA_GEN_STYLE", value_enum, default_value = "objects")]
    pub style: StyleArg,
    /// Minimum number of objects per scene.
    #[arg(long, env = "VLHSA_GEN_MIN_OBJECTS", default_value_t = 1)]
    pub min_objects: usize,
    /// Maximum number of objects per scene.
    #[arg(long, env = "VLHSA_GEN_MAX_OBJECTS", default_value_t = 3)]
    pub max_objects: usize,
    /// Dataset name stored in the manifest header.
    #[arg(long, env = "VLHSA_GEN_NAME", default_value = "synthetic")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration (JSON).
    #[arg(long, env = "VLHSA_TRAIN_CONFIG")]
    pub config: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long, env = "VLHSA_TRAIN_DATA")]
    pub data: PathBuf,
    /// Output directory for the checkpoint and log.
    #[arg(long, env = "VLHSA_TRAIN_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long, env = "VLHSA_EVAL_CKPT")]
    pub ckpt: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long, env = "VLHSA_EVAL_DATA")]
    pub data: PathBuf,
    /// Split to evaluate.
    #[arg(long, env = "VLHSA_EVAL_SPLIT", value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Checkpoint file.
    #[arg(long, env = "VLHSA_SOLVE_CKPT")]
    pub ckpt: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long, env = "VLHSA_SOLVE_DATA")]
    pub data: PathBuf,
    /// Record id, e.g. `test-00003`.
    #[arg(long, env = "VLHSA_SOLVE_INSTANCE_ID")]
    pub instance_id: String,
    /// Write the reconstruction with correctness frames to this PNG.
    #[arg(long, env = "VLHSA_SOLVE_RENDER")]
    pub render: Option<PathBuf>,
    /// Frame width around each rendered piece, in pixels.
    #[arg(long, env = "VLHSA_SOLVE_BORDER", default_value_t = 2)]
    pub border: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Training log (JSON Lines).
    #[arg(long, env = "VLHSA_REPORT_LOG")]
    pub log: PathBuf,
    /// Output directory for the curves and the table.
    #[arg(long, env = "VLHSA_REPORT_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Base training configuration (JSON); its alignment levels are overridden per row.
    #[arg(long, env = "VLHSA_ABLATE_CONFIG")]
    pub config: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long, env = "VLHSA_ABLATE_DATA")]
    pub data: PathBuf,
    /// Output directory for per-row logs and the table.
    #[arg(long, env = "VLHSA_ABLATE_OUT")]
    pub out: PathBuf,
    /// Split the retained checkpoints are scored on.
    #[arg(long, env = "VLHSA_ABLATE_SPLIT", value_enum, default_value = "test")]
    pub split: SplitArg,
}

/// Rows of the alignment ablation: global only, token + global,
/// region + global, all three.
pub const ABLATION_GRID: [Levels; 4] = [
    Levels {
        token: false,
        region: false,
        global: true,
    },
    Levels {
        token: true,
        region: false,
        global: true,
    },
    Levels {
        token: false,
        region: true,
        global: true,
    },
    Levels::ALL,
];

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command, writing its machine-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Report(a) => cmd_report(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}

fn print_resolved<T: Serialize>(what: &str, value: &T) {
    eprintln!("resolved {what}: {}", serde_json::to_string(value).expect("config serializes"));
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    emit(out, &serde_json::to_string(value).expect("payload serializes"))
}

/// Accepts a dataset directory or the manifest inside it.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load_data(data: &Path, config: &TrainConfig) -> Result<LoadedDataset> {
    let path = manifest_path(data);
    if !path.exists() {
        return Err(Error::Config(format!("no dataset manifest at {}", path.display())));
    }
    let enc = &config.model.encoder;
    load_external(
        &path,
        Some(FeatureWidths {
            visual: enc.d_b,
            text: enc.d_t,
        }),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct GenSummary {
    manifest: PathBuf,
    train: usize,
    val: usize,
    test: usize,
    total: usize,
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let geometry = GridGeometry::new(a.grid.rows, a.grid.cols, a.piece_px, a.gap_px, a.jitter_px)?;
    let splits = SplitSizes {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let mut config = DatasetConfig::new(geometry, splits, a.seed).with_style(a.style.into());
    config.name = a.name.clone();
    config.min_objects = a.min_objects;
    config.max_objects = a.max_objects;
    print_resolved("dataset config", &config);
    let manifest = make_dataset(&config, &a.out)?;
    let count = |s: Split| manifest.records.iter().filter(|r| r.split == s).count();
    emit_json(
        out,
        &GenSummary {
            manifest: a.out.join(MANIFEST_FILE),
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
            total: manifest.records.len(),
        },
    )
}

/// Trains with `config` on `data`, streaming the log to `out_dir` and
/// saving the retained checkpoint there. Returns its validation report.
pub fn train_to_dir(config: &TrainConfig, data: &LoadedDataset, out_dir: &Path) -> Result<(Checkpoint, EvalReport)> {
    create_dir(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train(config, data, |r: &LogRecord| {
        writeln!(log, "{}", r.to_json()).map_err(|e| Error::io(&log_path, e))
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&outcome.best, &out_dir.join(CHECKPOINT_FILE))?;
    Ok((outcome.best, outcome.best_report))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = TrainConfig::load(&a.config)?;
    print_resolved("train config", &config);
    let data = load_data(&a.data, &config)?;
    let (_, report) = train_to_dir(&config, &data, &a.out)?;
    emit_json(out, &report)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.hash_mismatch {
        log::warn!("{}: stored configuration hash does not match its configuration", path.display());
    }
    print_resolved("train config", &ck.config);
    Ok(ck)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let data = load_data(&a.data, &ck.config)?;
    let report = evaluate(&ck, &data, a.split.into())?;
    emit_json(out, &report)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    id: &'a str,
    assignment: &'a [usize],
    truth: &'a [usize],
    piece_accuracy: f64,
    misplaced: usize,
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let data = load_data(&a.data, &ck.config)?;
    let rec = data
        .find(&a.instance_id)
        .ok_or_else(|| Error::arg(format!("no instance with id `{}`", a.instance_id)))?;
    if rec.instance.geometry != data.geometry() || data.geometry().n() != ck.model.geometry.n() {
        return Err(Error::Config("instance geometry does not match the checkpoint".into()));
    }
    let sample = ck.model.prepare(&rec.instance, rec.features.as_ref())?;
    let (_, pred) = ck.model.predict(&sample)?;
    if let Some(path) = &a.render {
        let img = viz::render_solution(&rec.instance, &pred, a.border)?;
        viz::save_png(&img, path)?;
    }
    let truth = &rec.instance.shuffle;
    emit_json(
        out,
        &SolveOutput {
            id: &rec.instance.id,
            assignment: pred.as_slice(),
            truth: truth.as_slice(),
            piece_accuracy: piece_accuracy(&pred, truth)?,
            misplaced: pred.misplaced_against(truth)?,
        },
    )
}

#[derive(Serialize)]
struct ReportOutput {
    loss_curve: PathBuf,
    accuracy_curve: PathBuf,
    off_by_k: PathBuf,
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.log).map_err(|e| Error::io(&a.log, e))?;
    let log = parse_log(&text)?;
    let report = viz::final_report(&log)
        .ok_or_else(|| Error::arg(format!("{} contains no epoch records", a.log.display())))?;
    create_dir(&a.out)?;
    let paths = ReportOutput {
        loss_curve: a.out.join("loss.png"),
        accuracy_curve: a.out.join("accuracy.png"),
        off_by_k: a.out.join("off_by_k.csv"),
    };
    viz::save_png(&viz::loss_curve(&log), &paths.loss_curve)?;
    viz::save_png(&viz::accuracy_curve(&log), &paths.accuracy_curve)?;
    let csv = viz::off_by_csv(&report.off_by_k);
    fs::write(&paths.off_by_k, csv).map_err(|e| Error::io(&paths.off_by_k, e))?;
    emit_json(out, &paths)
}

/// Directory name of one ablation row, e.g. `token-global`.
pub fn levels_name(l: &Levels) -> String {
    let on: Vec<_> = [("token", l.token), ("region", l.region), ("global", l.global)]
        .iter()
        .filter(|(_, b)| *b)
        .map(|(n, _)| *n)
        .collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("-")
    }
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let base = TrainConfig::load(&a.config)?;
    print_resolved("train config", &base);
    let data = load_data(&a.data, &base)?;
    let mut rows = Vec::new();
    for levels in ABLATION_GRID {
        let mut config = base.clone();
        config.model.align.levels = levels;
        let dir = a.out.join(levels_name(&levels));
        log::info!("ablation row {}", levels_name(&levels));
        let (ck, _) = train_to_dir(&config, &data, &dir)?;
        rows.push((levels, evaluate(&ck, &data, a.split.into())?));
    }
    let table = viz::ablation_table(&rows);
    let path = a.out.join(ABLATION_FILE);
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    emit(out, table.trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_parses() {
        assert_eq!("5x5".parse::<Grid>().unwrap(), Grid { rows: 5, cols: 5 });
        assert_eq!("3X4".parse::<Grid>().unwrap(), Grid { rows: 3, cols: 4 });
        assert!("3by3".parse::<Grid>().is_err());
        assert!("3x".parse::<Grid>().is_err());
    }

    #[test]
    fn ablation_names() {
        let names: Vec<_> = ABLATION_GRID.iter().map(levels_name).collect();
        assert_eq!(names, ["global", "token-global", "region-global", "token-region-global"]);
    }

    #[test]
    fn unknown_flags_exit_with_usage_code() {
        assert_eq!(run(["vlhsa", "gen", "--out", "x", "--bogus"]), 2);
        assert_eq!(run(["vlhsa", "frobnicate"]), 2);
    }
}
