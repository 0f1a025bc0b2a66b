//! Command-line surface. Every command writes `manifest-<command>.json`
//! into the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::heatmap::{heatmap_scores, write_colored_points, write_heatmap_csv, Fixings, HeatmapVariant};
use super::pipeline::{collect, eval_all};
use super::selftest::{gradient_suite, rotation_suite};
use super::{HarnessError, Manifest, RunConfig};
use crate::datagen::{load_dataset, save_dataset, SceneRef};
use crate::geometry::{GripperAction, SixDRotation};
use crate::perception::{infer, DualAfford};
use crate::sim::{ObjectModel, TaskSpec};
use crate::tensor::Rng;
use crate::training::{
    collaborative_adaptation, train_all, write_loss_csv, AdaptSetup, SimLabeler, TrainingSet,
};

/// Stream for tasks drawn by `infer` and `export-heatmap` when none is given.
const TASK_STREAM: u64 = 41;
/// Configuration count of the full evaluation protocol.
pub const FULL_PROTOCOL_CONFIGS: usize = 500;

#[derive(Debug, Parser)]
#[command(name = "dualafford", version, about = "Dual-gripper affordance learning in a toy simulator")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the configured one, else `runs`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Scene selection shared by `infer` and `export-heatmap`.
#[derive(Debug, Clone, clap::Args)]
pub struct SceneArgs {
    /// Object id (default: the first configured object).
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub pose_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub camera_seed: u64,
    /// Task parameters, comma separated (default: drawn from the seed).
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random (and optionally RL) interaction collection.
    Collect,
    /// Trains module 2, then module 1.
    Train {
        /// Dataset (default: `<out>/dataset.jsonl`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Collaborative adaptation of a trained checkpoint.
    Adapt {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample-success-rate of a checkpoint and the baselines.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// 500 configurations instead of the configured count.
        #[arg(long)]
        full_protocol: bool,
    },
    /// Proposes both gripper actions for one scene.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Per-point scores as CSV.
    ExportHeatmap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// affordance-1 | affordance-2 | critic-1 | critic-2
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        scene: SceneArgs,
        /// First action as `x,y,z,r1,..,r6` (camera frame).
        #[arg(long)]
        u1: Option<String>,
        /// Orientation as six comma-separated reals.
        #[arg(long)]
        rotation: Option<String>,
        /// Also write `x y z r g b` rows for point viewers.
        #[arg(long)]
        colored: bool,
    },
    /// Gradient checks and rotation round trips.
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Collect => "collect",
            Command::Train { .. } => "train",
            Command::Adapt { .. } => "adapt",
            Command::Eval { .. } => "eval",
            Command::Infer { .. } => "infer",
            Command::ExportHeatmap { .. } => "export-heatmap",
            Command::Selftest => "selftest",
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(HarnessError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Resolved configuration of one invocation.
struct Ctx {
    cfg: RunConfig,
    text: String,
    library: Vec<ObjectModel>,
    out: PathBuf,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self, HarnessError> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| HarnessError::Usage(format!("`{}` needs --config PATH", cli.command.name())))?;
        let (mut cfg, text) = RunConfig::load(path)?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        // one seed drives every stage
        cfg.train.seed = cfg.seed;
        let base = path.parent().unwrap_or(Path::new("."));
        let library = cfg.object_library(base)?;
        cfg.validate(&library)?;
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        std::fs::create_dir_all(&out)?;
        Ok(Self {
            cfg,
            text,
            library,
            out,
        })
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, &self.text, self.cfg.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model(&self, checkpoint: &Option<PathBuf>) -> Result<(DualAfford, PathBuf), HarnessError> {
        let path = checkpoint.clone().unwrap_or_else(|| self.path("model.daf"));
        if !path.exists() {
            return Err(HarnessError::MissingArtifact(format!("checkpoint {}", path.display())));
        }
        let model = DualAfford::load(&path)?;
        if model.task != self.cfg.task {
            return Err(HarnessError::Config(format!(
                "checkpoint was trained for `{}`, config asks for `{}`",
                model.task.name(),
                self.cfg.task.name()
            )));
        }
        Ok((model, path))
    }

    fn finish(&self, mut m: Manifest, artifacts: &[(&str, &Path)]) -> Result<(), HarnessError> {
        for (k, p) in artifacts {
            m.artifacts.insert(k.to_string(), p.display().to_string());
        }
        m.write(&self.path(&format!("manifest-{}.json", m.command)))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_reals(s: &str, want: usize, what: &str) -> Result<Vec<f64>, HarnessError> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == want => Ok(v),
        _ => Err(HarnessError::Usage(format!("{what} expects {want} comma-separated reals, got `{s}`"))),
    }
}

fn scene_and_task(ctx: &Ctx, args: &SceneArgs) -> Result<(crate::datagen::Observation, TaskSpec), HarnessError> {
    let object_id = args.object.clone().unwrap_or_else(|| ctx.cfg.objects[0].clone());
    let obs = SceneRef {
        object_id,
        pose_seed: args.pose_seed,
        camera_seed: args.camera_seed,
    }
    .observe(&ctx.library, ctx.cfg.n_points)?;
    let task = match &args.task {
        Some(s) => {
            let v = parse_reals(s, ctx.cfg.task.dim(), "--task")?;
            TaskSpec::from_parts(ctx.cfg.task, &v)?
        }
        None => TaskSpec::sample(ctx.cfg.task, &mut Rng::stream(ctx.cfg.seed, TASK_STREAM)),
    };
    Ok((obs, task))
}

#[derive(Serialize)]
struct InferReport {
    object_id: String,
    pose_seed: u64,
    camera_seed: u64,
    task_vec: Vec<f64>,
    u1: GripperAction,
    u2: GripperAction,
    idx1: usize,
    idx2: usize,
    critic1: f64,
    critic2: f64,
    critic_calls: [usize; 2],
}

#[derive(Serialize)]
struct AdaptReport {
    rounds: usize,
    executed: usize,
    positives: usize,
    sim_errors: usize,
    infer_failures: usize,
    invisible_scenes: usize,
}

pub fn run(cli: &Cli) -> Result<(), HarnessError> {
    if let Command::Selftest = cli.command {
        return selftest(cli);
    }
    let ctx = Ctx::load(cli)?;
    let seed = ctx.cfg.seed;
    match &cli.command {
        Command::Selftest => unreachable!("handled above"),
        Command::Collect => {
            let c = collect(&ctx.cfg, &ctx.library, seed)?;
            let data = ctx.path("dataset.jsonl");
            save_dataset(&data, &c.records)?;
            let summary = ctx.path("collect.json");
            write_json(&summary, &c.summary)?;
            let mut arts = vec![("dataset", data.as_path()), ("summary", summary.as_path())];
            let sac_path = ctx.path("sac.daf");
            if let Some(sac) = &c.sac {
                sac.save(&sac_path)?;
                arts.push(("sac", sac_path.as_path()));
            }
            println!(
                "collected {} interactions ({} positive), kept {}",
                c.summary.total, c.summary.positives, c.summary.kept
            );
            ctx.finish(ctx.manifest("collect"), &arts)
        }
        Command::Train { data } => {
            let data = data.clone().unwrap_or_else(|| ctx.path("dataset.jsonl"));
            if !data.exists() {
                return Err(HarnessError::MissingArtifact(format!("dataset {}", data.display())));
            }
            let records = load_dataset(&data)?;
            let set = TrainingSet::from_records(&records, &ctx.library, ctx.cfg.n_points)?;
            let mut model = DualAfford::new(ctx.cfg.task, ctx.cfg.model, seed)?;
            let history = train_all(&mut model, &set, &ctx.cfg.train)?;
            let ck = ctx.path("model.daf");
            model.save(&ck)?;
            let log = ctx.path("train_loss.csv");
            let mut w = BufWriter::new(File::create(&log)?);
            write_loss_csv(&mut w, &history, true)?;
            w.flush()?;
            println!("trained on {} interactions; checkpoint {}", set.len(), ck.display());
            ctx.finish(
                ctx.manifest("train"),
                &[("dataset", data.as_path()), ("checkpoint", ck.as_path()), ("loss_log", log.as_path())],
            )
        }
        Command::Adapt { checkpoint } => {
            let (mut model, input) = ctx.model(checkpoint)?;
            let setup = AdaptSetup {
                library: &ctx.library,
                objects: ctx.cfg.objects.clone(),
                n_points: ctx.cfg.n_points,
                infer: ctx.cfg.infer.options(),
            };
            let labeler = SimLabeler { spec: ctx.cfg.gripper };
            let outcome = collaborative_adaptation(&mut model, &setup, &ctx.cfg.train, &labeler)?;
            let ck = ctx.path("model_ca.daf");
            model.save(&ck)?;
            let data = ctx.path("ca_dataset.jsonl");
            save_dataset(&data, &outcome.records)?;
            let log = ctx.path("adapt_loss.csv");
            let mut w = BufWriter::new(File::create(&log)?);
            write_loss_csv(&mut w, &outcome.history, true)?;
            w.flush()?;
            let s = &outcome.stats;
            let stats = ctx.path("adapt.json");
            write_json(
                &stats,
                &AdaptReport {
                    rounds: s.rounds,
                    executed: s.executed,
                    positives: s.positives,
                    sim_errors: s.sim_errors,
                    infer_failures: s.infer_failures,
                    invisible_scenes: s.invisible_scenes,
                },
            )?;
            println!("adapted over {} rounds, {} online positives", s.rounds, s.positives);
            ctx.finish(
                ctx.manifest("adapt"),
                &[
                    ("input_checkpoint", input.as_path()),
                    ("checkpoint", ck.as_path()),
                    ("online_dataset", data.as_path()),
                    ("loss_log", log.as_path()),
                    ("stats", stats.as_path()),
                ],
            )
        }
        Command::Eval {
            checkpoint,
            full_protocol,
        } => {
            let (model, input) = ctx.model(checkpoint)?;
            let mut cfg = ctx.cfg.clone();
            if *full_protocol {
                cfg.eval.n_configs = FULL_PROTOCOL_CONFIGS;
            }
            let bundle = eval_all(&cfg, &ctx.library, Some(&model), seed)?;
            let report = ctx.path("eval.json");
            write_json(&report, &bundle)?;
            for r in [&bundle.learned, &bundle.random, &bundle.heuristic].into_iter().flatten() {
                println!("{:<10} ssr {:.4} ({}/{})", r.policy, r.ssr, r.successes, r.n_configs * r.trials);
            }
            ctx.finish(ctx.manifest("eval"), &[("checkpoint", input.as_path()), ("report", report.as_path())])
        }
        Command::Infer { checkpoint, scene } => {
            let (model, input) = ctx.model(checkpoint)?;
            let (obs, task) = scene_and_task(&ctx, scene)?;
            let mut rng = Rng::new(seed);
            let inf = infer(&model, &obs.cloud, &task, &mut rng, &ctx.cfg.infer.options())?;
            let report = InferReport {
                object_id: obs.scene_ref.object_id.clone(),
                pose_seed: obs.scene_ref.pose_seed,
                camera_seed: obs.scene_ref.camera_seed,
                task_vec: task.to_vec(),
                u1: inf.u1,
                u2: inf.u2,
                idx1: inf.idx1,
                idx2: inf.idx2,
                critic1: inf.critic1,
                critic2: inf.critic2,
                critic_calls: inf.critic_calls,
            };
            let path = ctx.path("infer.json");
            write_json(&path, &report)?;
            println!("{}", serde_json::to_string(&report)?);
            ctx.finish(ctx.manifest("infer"), &[("checkpoint", input.as_path()), ("inference", path.as_path())])
        }
        Command::ExportHeatmap {
            checkpoint,
            variant,
            scene,
            u1,
            rotation,
            colored,
        } => {
            let variant: HeatmapVariant = variant.parse()?;
            let (model, input) = ctx.model(checkpoint)?;
            let (obs, task) = scene_and_task(&ctx, scene)?;
            let fix = Fixings {
                first: match u1 {
                    Some(s) => {
                        let v = parse_reals(s, 9, "--u1")?;
                        Some(GripperAction {
                            point: [v[0], v[1], v[2]],
                            rotation: SixDRotation(v[3..9].try_into().expect("six")),
                        })
                    }
                    None => None,
                },
                rotation: match rotation {
                    Some(s) => Some(SixDRotation(parse_reals(s, 6, "--rotation")?.try_into().expect("six"))),
                    None => None,
                },
            };
            let scores = heatmap_scores(&model, &obs.cloud, &task, variant, &fix)?;
            let csv = ctx.path(&format!("heatmap-{}.csv", variant.name()));
            let mut w = BufWriter::new(File::create(&csv)?);
            write_heatmap_csv(&mut w, &obs.cloud, &scores)?;
            w.flush()?;
            let mut arts = vec![("checkpoint", input.as_path()), ("heatmap", csv.as_path())];
            let pts = ctx.path(&format!("heatmap-{}.xyzrgb", variant.name()));
            if *colored {
                let mut w = BufWriter::new(File::create(&pts)?);
                write_colored_points(&mut w, &obs.cloud, &scores)?;
                w.flush()?;
                arts.push(("colored_points", pts.as_path()));
            }
            println!("wrote {} rows to {}", scores.len(), csv.display());
            ctx.finish(ctx.manifest("export-heatmap"), &arts)
        }
    }
}

fn selftest(cli: &Cli) -> Result<(), HarnessError> {
    let seed = cli.seed.unwrap_or(0);
    let mut failed = 0;
    for line in gradient_suite(seed)? {
        let ok = line.report.passes(1e-4);
        failed += !ok as usize;
        println!(
            "{} gradient {}: max rel err {:.2e} over {} scalars",
            if ok { "ok  " } else { "FAIL" },
            line.name,
            line.report.max_rel_err,
            line.report.checked
        );
    }
    let rot = rotation_suite(1000, seed);
    let ok = rot.worst() < 1e-9;
    failed += !ok as usize;
    println!(
        "{} rotations: {} round trips, worst error {:.2e}",
        if ok { "ok  " } else { "FAIL" },
        rot.samples,
        rot.worst()
    );
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out)?;
    Manifest::new("selftest", "", seed).write(&out.join("manifest-selftest.json"))?;
    if failed > 0 {
        return Err(HarnessError::Failed(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}
