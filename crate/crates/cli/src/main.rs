//! `utgpose`: generate datasets, train the three networks, evaluate them and
//! simulate walks towards the gate.
//!
//! Exit status is 0 on success, 1 for invalid input or usage and 2 for I/O
//! failures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use utgpose_core::channel::{read_cir_file, CirCsvWriter};
use utgpose_core::harness::dataset::{split_cir_rows, split_imu_windows, CIR_FILE, IMU_FILE};
use utgpose_core::harness::eval::{evaluate, evaluate_walks, EvalReport};
use utgpose_core::harness::import::{import_cir_corpus, SchemaConfig};
use utgpose_core::harness::train::{limit_cir_rows, limit_windows, raw_accuracy, train_los, train_pose, CirInput};
use utgpose_core::harness::walk::{
    all_pairs, cross_class_pairs, measure_transition_delay, pose_walks, run_walk, switch_delays, transition_walks,
    Classifiers, WalkScenario,
};
use utgpose_core::harness::{generate_datasets, Config, HarnessError};
use utgpose_core::imusim::read_imu_csv;
use utgpose_core::models::{
    pose_model_name, save_los_classifier, save_pose_detector, LosLabel, ModelBundle, LOS_MODEL,
};
use utgpose_neural::io::{manifest_path, write_loss_curve};

#[derive(Parser, Debug)]
#[command(name = "utgpose", version, about = "UWB gate-approach LOS/NLOS and pose detection simulator")]
struct Cli {
    /// Master seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every output.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// TOML file with one section per module.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic CIR and IMU datasets.
    Gen,
    /// Convert an external CIR corpus into the native CSV schema.
    Import {
        #[arg(long)]
        input: PathBuf,
        /// Column layout; `config` takes the `[import]` section.
        #[arg(long, value_enum, default_value_t = Schema::Public)]
        schema: Schema,
    },
    /// Train the CIR LOS/NLOS classifier.
    TrainLos {
        /// Dataset directory (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Train on all 1016 magnitudes instead of the effective window.
        #[arg(long)]
        full_input: bool,
    },
    /// Train both pose-detector branches.
    TrainPose {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score the trained models on the held-out split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model directory (default: `<out-dir>/models`).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Simulate one walk and write its estimate stream.
    Walk {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Use ground-truth probabilities instead of the networks.
        #[arg(long)]
        oracle: bool,
    },
    /// Repeated single-pose and transition walks.
    Report {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Schema {
    Native,
    Public,
    Config,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Harness(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<utgpose_core::models::ModelError> for CliError {
    fn from(e: utgpose_core::models::ModelError) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<utgpose_core::channel::ChannelError> for CliError {
    fn from(e: utgpose_core::channel::ChannelError) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<utgpose_core::imusim::ImuError> for CliError {
    fn from(e: utgpose_core::imusim::ImuError) -> Self {
        CliError::Harness(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    cfg: Config,
    out: PathBuf,
}

impl Ctx {
    fn models_dir(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join("models"))
    }

    fn data_dir(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.clone())
    }
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn load_models(dir: &Path) -> Result<ModelBundle> {
    for name in [LOS_MODEL, pose_model_name(LosLabel::Los), pose_model_name(LosLabel::Nlos)] {
        if !manifest_path(dir, name).exists() {
            return Err(CliError::Invalid(format!(
                "model {name:?} not found in {}; run train-los and train-pose first",
                dir.display()
            )));
        }
    }
    Ok(ModelBundle::load(dir)?)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Invalid(format!("{} not found", path.display())))
    }
}

fn dataset_file(dir: &Path, name: &str) -> Result<PathBuf> {
    existing(dir.join(name)).map_err(|e| CliError::Invalid(format!("{e}; run gen or import first")))
}

fn gen(ctx: &Ctx) -> Result<()> {
    let m = generate_datasets(ctx.cfg.dataset, &ctx.cfg.channel, &ctx.cfg.gait, ctx.cfg.seed, &ctx.out)?;
    println!("wrote {} LOS + {} NLOS CIR rows and {} IMU samples to {}", m.n_los, m.n_nlos, 4 * m.n_imu_per_pose, ctx.out.display());
    Ok(())
}

fn import(ctx: &Ctx, input: &Path, schema: Schema) -> Result<()> {
    let schema = match schema {
        Schema::Native => SchemaConfig::default(),
        Schema::Public => SchemaConfig::public_corpus(),
        Schema::Config => ctx.cfg.import.clone(),
    };
    if !input.exists() {
        return Err(CliError::Invalid(format!("{} not found", input.display())));
    }
    std::fs::create_dir_all(&ctx.out)?;
    let mut writer = CirCsvWriter::new(BufWriter::new(File::create(ctx.out.join(CIR_FILE))?))?;
    let stats = import_cir_corpus(input, &schema, |row| Ok(writer.write_row(&row)?))?;
    writer.finish()?.flush()?;
    write_json(&ctx.out.join("import_stats.json"), &stats)?;
    println!("imported {} of {} rows ({} healed, {} skipped)", stats.imported, stats.rows_read, stats.healed, stats.skipped);
    Ok(())
}

fn train_los_cmd(ctx: &Ctx, data: &Option<PathBuf>, full: bool) -> Result<()> {
    let rows = read_cir_file(&dataset_file(&ctx.data_dir(data), CIR_FILE)?)?;
    let (train, test) = split_cir_rows(rows);
    let train = limit_cir_rows(&train, ctx.cfg.train_los.limit_per_group);
    let input = if full { CirInput::Full } else { CirInput::Ecir };
    let (model, report) = train_los(&train, input, &ctx.cfg.los_train())?;
    let dir = ctx.models_dir(&None);
    save_los_classifier(&model, &dir)?;
    write_loss_curve(&dir.join("los_loss.csv"), &report.epoch_losses).map_err(|e| HarnessError::Model(e.into()))?;
    let acc = raw_accuracy(&model, &test, input)?;
    println!("CIR classifier: {} epochs, held-out accuracy without smoothing {acc:.4}", report.epoch_losses.len());
    Ok(())
}

fn train_pose_cmd(ctx: &Ctx, data: &Option<PathBuf>) -> Result<()> {
    let path = dataset_file(&ctx.data_dir(data), IMU_FILE)?;
    let rows = read_imu_csv(std::io::BufReader::new(File::open(path)?))?;
    let windows = split_imu_windows(&rows);
    let train = limit_windows(&windows.train, ctx.cfg.train_pose.limit_per_group);
    let dir = ctx.models_dir(&None);
    for (model, report) in train_pose(&train, &ctx.cfg.pose_train())? {
        save_pose_detector(&model, &dir)?;
        let curve = dir.join(format!("{}_loss.csv", pose_model_name(model.branch)));
        write_loss_curve(&curve, &report.epoch_losses).map_err(|e| HarnessError::Model(e.into()))?;
        println!("{} pose detector: {} epochs, final loss {:.4}", model.branch, report.epoch_losses.len(), report.epoch_losses.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

fn write_report(out: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join(format!("{stem}.json")), report)?;
    let table = report.table();
    write_text(&out.join(format!("{stem}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

fn eval_cmd(ctx: &Ctx, data: &Option<PathBuf>, models: &Option<PathBuf>) -> Result<()> {
    let bundle = load_models(&ctx.models_dir(models))?;
    let data = ctx.data_dir(data);
    let (_, test) = split_cir_rows(read_cir_file(&dataset_file(&data, CIR_FILE)?)?);
    let imu = data.join(IMU_FILE);
    let windows = if imu.exists() {
        split_imu_windows(&read_imu_csv(std::io::BufReader::new(File::open(imu)?))?).test
    } else {
        Vec::new()
    };
    let mut params = ctx.cfg.eval;
    params.seed = ctx.cfg.seed;
    let report = evaluate(&bundle, &test, &windows, &params)?;
    write_report(&ctx.out, "eval", &report)
}

fn classifiers<'a>(oracle: bool, bundle: &'a Option<ModelBundle>) -> Classifiers<'a> {
    match (oracle, bundle) {
        (false, Some(b)) => Classifiers::Learned(b),
        _ => Classifiers::Oracle,
    }
}

fn walk_cmd(ctx: &Ctx, scenario: &Path, models: &Option<PathBuf>, oracle: bool) -> Result<()> {
    let text = std::fs::read_to_string(existing(scenario.to_path_buf())?)?;
    let mut scenario: WalkScenario = toml_scenario(&text)?;
    if scenario.seed == 0 {
        scenario.seed = ctx.cfg.seed;
    }
    let bundle = if oracle { None } else { Some(load_models(&ctx.models_dir(models))?) };
    let estimates = run_walk(&scenario, classifiers(oracle, &bundle), &ctx.cfg.walk_env())?;

    std::fs::create_dir_all(&ctx.out)?;
    let mut f = BufWriter::new(File::create(ctx.out.join("estimates.jsonl"))?);
    for e in &estimates {
        serde_json::to_writer(&mut f, e)?;
        writeln!(f)?;
    }
    f.flush()?;

    let mut segments: Vec<(utgpose_core::models::Pose, Vec<_>)> = Vec::new();
    for e in &estimates {
        match segments.last_mut() {
            Some((p, v)) if *p == e.true_pose => v.push(*e),
            _ => segments.push((e.true_pose, vec![*e])),
        }
    }
    let mut summary = if segments.is_empty() {
        "no estimates (walk shorter than the IMU warm-up)\n".to_string()
    } else {
        evaluate_walks(&segments)?.table()
    };
    for d in switch_delays(&estimates, &scenario.pose_schedule) {
        let delay = d.delay_ms.map_or("censored".to_string(), |v| format!("{v:.0} ms"));
        summary.push_str(&format!("switch {} -> {} at {:.0} ms: {delay}\n", d.from, d.to, d.t_switch_ms));
    }
    write_text(&ctx.out.join("walk_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn toml_scenario(text: &str) -> Result<WalkScenario> {
    let s: WalkScenario = utgpose_core::harness::config::parse_toml(text)?;
    s.validate()?;
    Ok(s)
}

fn report_cmd(ctx: &Ctx, models: &Option<PathBuf>, oracle: bool) -> Result<()> {
    let bundle = if oracle { None } else { Some(load_models(&ctx.models_dir(models))?) };
    let clf = classifiers(oracle, &bundle);
    let mut params = ctx.cfg.experiment.clone();
    params.seed = ctx.cfg.seed;
    let env = ctx.cfg.walk_env();
    let mut report = evaluate_walks(&pose_walks(clf, &env, &params)?)?;
    let pairs = if oracle { all_pairs() } else { cross_class_pairs() };
    report.transitions = measure_transition_delay(&transition_walks(clf, &env, &params, &pairs)?);
    write_report(&ctx.out, "report", &report)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(&existing(path.clone())?)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = Ctx { cfg, out: cli.out_dir };
    match &cli.command {
        Command::Gen => gen(&ctx),
        Command::Import { input, schema } => import(&ctx, input, *schema),
        Command::TrainLos { data, full_input } => train_los_cmd(&ctx, data, *full_input),
        Command::TrainPose { data } => train_pose_cmd(&ctx, data),
        Command::Eval { data, models } => eval_cmd(&ctx, data, models),
        Command::Walk { scenario, models, oracle } => walk_cmd(&ctx, scenario, models, *oracle),
        Command::Report { models, oracle } => report_cmd(&ctx, models, *oracle),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
