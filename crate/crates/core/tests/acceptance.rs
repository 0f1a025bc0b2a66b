//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. The push fixture (collection plus full training) is built once and
//! shared by the criteria that need a trained model.

mod common;

use std::cell::OnceCell;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dualafford::datagen::{
    collect_random, load_dataset, plan_scenes, random_action_at, rl_collect, rl_scenes, save_dataset, CollectPlan,
    InteractionRecord, RlConfig, Sac, SacConfig, SceneRef,
};
use dualafford::geometry::{UnitVector3, Vec3};
use dualafford::harness::selftest::{gradient_suite, rotation_suite};
use dualafford::harness::{collect, eval_all, RunConfig};
use dualafford::perception::{affordance_map, infer_with, DualAfford, FirstAction, ModuleId, PerceptionError, PreparedCloud};
use dualafford::sim::{builtin_library, PointCloud, is_steady, judge_success, GripperSpec, ObjectModel, SimOutcome, TaskKind, TaskSpec};
use dualafford::tensor::Rng;
use dualafford::training::{
    collaborative_adaptation, target_affordance, target_c1, train_all, AdaptSetup, LatentChoice, ModuleView,
    PointChoice, SimLabeler, TrainingSet,
};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 60.0;
const ROTATION_SAMPLES: usize = 1000;
const ROTATION_TOL: f64 = 1e-9;
const ENUM_TOL: f64 = 1e-12;
/// Offset either side of each success threshold, in units or degrees.
const BOUNDARY_EPS: f64 = 1e-6;
const FIXTURE_RECORDS: usize = 2000;
const SSR_RATIO: f64 = 3.0;
const E2E_SECS: f64 = 30.0 * 60.0;
const RL_EPISODES: usize = 5000;
const RL_UPDATE_EVERY: usize = 25;
const RL_SCENES: usize = 200;
/// Random samples per scene for the baseline rate; more than the RL budget
/// so the (small) baseline rate is not dominated by counting noise.
const RANDOM_PER_SCENE: usize = 100;
const RL_RATIO: f64 = 2.0;
const CA_SEEDS: u64 = 3;
const CA_ROUNDS: usize = 10;
const CA_FLOOR: f64 = 0.02;
const CA_STRICT_WINS: usize = 2;
const CONDITIONING_DELTA: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Fixture {
    cfg: RunConfig,
    library: Vec<ObjectModel>,
    records: Vec<InteractionRecord>,
    model: DualAfford,
    build_secs: f64,
}

fn push_config() -> RunConfig {
    RunConfig::from_toml(include_str!("../../../configs/push.toml")).expect("push config")
}

fn build_fixture() -> Fixture {
    let cfg = push_config();
    let library = builtin_library();
    let t = Instant::now();
    let collected = collect(&cfg, &library, cfg.seed).expect("collect");
    let set = TrainingSet::from_records(&collected.records, &library, cfg.n_points).expect("training set");
    let mut model = DualAfford::new(cfg.task, cfg.model, cfg.seed).expect("model");
    train_all(&mut model, &set, &cfg.train).expect("train");
    Fixture {
        records: collected.records,
        model,
        build_secs: t.elapsed().as_secs_f64(),
        cfg,
        library,
    }
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let lines = match gradient_suite(0) {
        Ok(l) => l,
        Err(e) => return verdict(false, format!("error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = lines.iter().max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err)).expect("lines");
    verdict(
        worst.report.max_rel_err < GRAD_TOL && secs < GRAD_SECS && lines.len() == 8,
        format!(
            "{} checks, max rel err {:.2e} ({}), {secs:.1}s",
            lines.len(),
            worst.report.max_rel_err,
            worst.name
        ),
    )
}

fn rotations() -> Verdict {
    let r = rotation_suite(ROTATION_SAMPLES, 0);
    verdict(
        r.samples == ROTATION_SAMPLES && r.worst() < ROTATION_TOL,
        format!(
            "{} samples, orth {:.1e} det {:.1e} round trip {:.1e} symmetry {:.1e} known angles {:.1e}",
            r.samples, r.orthonormality, r.determinant, r.round_trip, r.symmetry, r.known_angle
        ),
    )
}

/// Critic depends on the contact row and the first decoded entry; the
/// decoder copies the latent into the orientation.
struct Stub {
    map: Vec<f64>,
    per_point: Vec<f64>,
    weight: f64,
}

impl ModuleView for Stub {
    fn num_points(&self) -> usize {
        self.map.len()
    }
    fn latent_dim(&self) -> usize {
        2
    }
    fn affordance_map(&self) -> Result<Vec<f64>, PerceptionError> {
        Ok(self.map.clone())
    }
    fn decode(&self, rows: &[usize], z: &[f64]) -> Result<Vec<[f64; 6]>, PerceptionError> {
        Ok((0..rows.len()).map(|i| [z[2 * i], z[2 * i + 1], 0.0, 0.0, 0.0, 0.0]).collect())
    }
    fn critic(&self, rows: &[usize], rot6: &[[f64; 6]]) -> Result<Vec<f64>, PerceptionError> {
        Ok(rows.iter().zip(rot6).map(|(&r, o)| self.per_point[r] + self.weight * o[0] * o[1]).collect())
    }
}

fn estimators() -> Verdict {
    let mut rng = Rng::new(3);
    let n = 17;
    let mut worst_const: f64 = 0.0;
    for c in [0.0, 0.25, 0.7, 1.0] {
        let s = Stub {
            map: (0..n).map(|i| (i as f64 * 0.37).sin().abs()).collect(),
            per_point: vec![c; n],
            weight: 0.0,
        };
        for (k, m) in [(1, 1), (10, 5), (7, 13)] {
            let c1 = target_c1(&s, PointChoice::Sample(k), LatentChoice::Prior(m), &mut rng).expect("c1");
            let a = target_affordance(&s, k % n, LatentChoice::Prior(m), &mut rng).expect("aff");
            worst_const = worst_const.max((c1 - c).abs()).max((a - c).abs());
        }
    }
    // exhaustive oracle over every point and a frozen codebook
    let book: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3 - 0.6, 1.0 - i as f64 * 0.17]).collect();
    let per_point: Vec<f64> = (0..n).map(|i| ((i * 5) % n) as f64 / n as f64).collect();
    let s = Stub {
        map: vec![0.5; n],
        per_point: per_point.clone(),
        weight: 0.4,
    };
    let mut total = 0.0;
    let mut worst_aff: f64 = 0.0;
    for (p, base) in per_point.iter().enumerate() {
        let mut per = 0.0;
        for z in &book {
            per += base + 0.4 * z[0] * z[1];
        }
        per /= book.len() as f64;
        total += per;
        let a = target_affordance(&s, p, LatentChoice::Codebook(&book), &mut rng).expect("aff");
        worst_aff = worst_aff.max((a - per).abs());
    }
    let exact = total / n as f64;
    let c1 = target_c1(&s, PointChoice::All, LatentChoice::Codebook(&book), &mut rng).expect("c1");
    let enum_err = (c1 - exact).abs().max(worst_aff);
    verdict(
        worst_const == 0.0 && enum_err < ENUM_TOL,
        format!("constant stubs off by {worst_const:.1e}, enumeration off by {enum_err:.1e}"),
    )
}

struct Case {
    name: &'static str,
    task: TaskSpec,
    outcome: SimOutcome,
    expect: bool,
}

fn planar(d: f64, angle_deg: f64, yaw_deg: f64, tilt_deg: f64) -> SimOutcome {
    let a = angle_deg.to_radians();
    let disp = Vec3::new(d * a.cos(), d * a.sin(), 0.0);
    let mut o = SimOutcome::at_rest();
    o.displacement = disp;
    o.planar_direction = UnitVector3::normalize(disp);
    o.yaw = yaw_deg.to_radians();
    o.tilt = tilt_deg.to_radians();
    o.steady = is_steady(o.yaw, o.tilt);
    o
}

fn twist(yaw_deg: f64) -> SimOutcome {
    let mut o = SimOutcome::at_rest();
    o.yaw = yaw_deg.to_radians();
    o.steady = is_steady(o.yaw, 0.0);
    o
}

fn tip(tilt_deg: f64, angle_deg: f64, yaw_deg: f64) -> SimOutcome {
    let a = angle_deg.to_radians();
    let mut o = SimOutcome::at_rest();
    o.tilt = tilt_deg.to_radians();
    o.tilt_direction = UnitVector3::normalize(Vec3::new(a.cos(), a.sin(), 0.0));
    o.yaw = yaw_deg.to_radians();
    o.steady = is_steady(o.yaw, o.tilt);
    o
}

fn lift(h: f64, angle_deg: f64, tilt_deg: f64) -> SimOutcome {
    let a = angle_deg.to_radians();
    let mut o = SimOutcome::at_rest();
    o.displacement = Vec3::new(h * a.tan(), 0.0, h);
    o.height_gain = h;
    o.tilt = tilt_deg.to_radians();
    o.steady = is_steady(0.0, o.tilt);
    o
}

/// Twelve thresholds, each probed just inside and just outside.
fn boundary_cases() -> Vec<Case> {
    let e = BOUNDARY_EPS;
    let push = TaskSpec::Push(UnitVector3::x());
    let topple = TaskSpec::Topple(UnitVector3::x());
    let pick = TaskSpec::Pick(UnitVector3::z());
    let mut out = Vec::new();
    let mut pair = |name: &'static str, task: &TaskSpec, inside: SimOutcome, outside: SimOutcome| {
        out.push(Case { name, task: *task, outcome: inside, expect: true });
        out.push(Case { name, task: *task, outcome: outside, expect: false });
    };
    pair("push distance", &push, planar(0.05 + e, 0.0, 2.0, 1.0), planar(0.05 - e, 0.0, 2.0, 1.0));
    pair("push direction", &push, planar(0.08, 30.0 - e, 2.0, 1.0), planar(0.08, 30.0 + e, 2.0, 1.0));
    pair("push yaw", &push, planar(0.08, 0.0, 10.0 - e, 1.0), planar(0.08, 0.0, 10.0 + e, 1.0));
    pair("push tilt", &push, planar(0.08, 0.0, 2.0, 10.0 - e), planar(0.08, 0.0, 2.0, 10.0 + e));
    let r35 = TaskSpec::Rotate(35f64.to_radians());
    pair("rotate minimum", &r35, twist(10.0 + e), twist(10.0 - e));
    let r40 = TaskSpec::Rotate(40f64.to_radians());
    pair("rotate tolerance", &r40, twist(70.0 - e), twist(70.0 + e));
    pair("topple tilt", &topple, tip(10.0 + e, 0.0, 2.0), tip(10.0 - e, 0.0, 2.0));
    pair("topple direction", &topple, tip(20.0, 30.0 - e, 2.0), tip(20.0, 30.0 + e, 2.0));
    pair("topple yaw", &topple, tip(20.0, 0.0, 10.0 - e), tip(20.0, 0.0, 10.0 + e));
    pair("pick height", &pick, lift(0.05 + e, 0.0, 1.0), lift(0.05 - e, 0.0, 1.0));
    pair("pick direction", &pick, lift(0.08, 45.0 - e, 1.0), lift(0.08, 45.0 + e, 1.0));
    pair("pick tilt", &pick, lift(0.08, 0.0, 10.0 - e), lift(0.08, 0.0, 10.0 + e));
    out
}

fn success_table() -> Verdict {
    let cases = boundary_cases();
    let mut wrong: Vec<String> = cases
        .iter()
        .filter(|c| judge_success(&c.task, &c.outcome) != c.expect)
        .map(|c| format!("{} (expected {})", c.name, c.expect))
        .collect();
    let first: Vec<bool> = cases.iter().map(|c| judge_success(&c.task, &c.outcome)).collect();
    let mut order: Vec<usize> = (0..cases.len()).collect();
    Rng::new(21).shuffle(&mut order);
    let mut again = vec![false; cases.len()];
    for &i in &order {
        again[i] = judge_success(&cases[i].task, &cases[i].outcome);
    }
    if again != first {
        wrong.push("order dependence".into());
    }
    let thresholds = cases.len() / 2;
    verdict(
        wrong.is_empty() && thresholds == 12,
        if wrong.is_empty() {
            format!("{thresholds} thresholds x 2 sides classified, shuffled recheck identical")
        } else {
            wrong.join("; ")
        },
    )
}

fn cli_run(dir: &Path, cmd: &str) -> Result<(), String> {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_dualafford"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(dir)
        .arg(cmd)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{cmd}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn determinism(fx: &Fixture) -> Verdict {
    let dirs = [tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp")];
    for d in &dirs {
        for cmd in ["collect", "train", "adapt", "eval"] {
            if let Err(e) = cli_run(d.path(), cmd) {
                return verdict(false, e);
            }
        }
    }
    let artifacts = [
        "dataset.jsonl",
        "collect.json",
        "model.daf",
        "train_loss.csv",
        "model_ca.daf",
        "ca_dataset.jsonl",
        "adapt.json",
        "eval.json",
    ];
    let differing: Vec<&str> = artifacts
        .iter()
        .copied()
        .filter(|a| std::fs::read(dirs[0].path().join(a)).ok() != std::fs::read(dirs[1].path().join(a)).ok())
        .collect();
    // the trained fixture's report, twice
    let a = eval_all(&fx.cfg, &fx.library, Some(&fx.model), 5).expect("eval");
    let b = eval_all(&fx.cfg, &fx.library, Some(&fx.model), 5).expect("eval");
    let same_report = serde_json::to_vec(&a).ok() == serde_json::to_vec(&b).ok();
    verdict(
        differing.is_empty() && same_report,
        format!(
            "{} artifacts byte-identical across reruns{}, fixture eval report {}",
            artifacts.len() - differing.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {})", differing.join(", ")) },
            if same_report { "identical" } else { "differs" }
        ),
    )
}

fn labels(fx: &Fixture) -> Verdict {
    let dir = tempfile::tempdir().expect("tmp");
    let path = dir.path().join("dataset.jsonl");
    save_dataset(&path, &fx.records).expect("save");
    let stored = load_dataset(&path).expect("load");
    let positives: Vec<&InteractionRecord> = stored.iter().filter(|r| r.positive()).collect();
    let spec = fx.cfg.gripper;
    let ok = positives.iter().filter(|r| common::resimulate(r, &fx.library, fx.cfg.n_points, &spec)).count();
    verdict(
        !positives.is_empty() && ok == positives.len(),
        format!("{ok}/{} stored positives re-simulate positive", positives.len()),
    )
}

fn end_to_end(fx: &Fixture) -> Verdict {
    let t = Instant::now();
    let b = eval_all(&fx.cfg, &fx.library, Some(&fx.model), fx.cfg.seed).expect("eval");
    let secs = fx.build_secs + t.elapsed().as_secs_f64();
    let learned = b.learned.expect("learned");
    let random = b.random.expect("random");
    let balanced = fx.records.len() == FIXTURE_RECORDS
        && fx.records.iter().filter(|r| r.positive()).count() == FIXTURE_RECORDS / 2;
    verdict(
        balanced && learned.ssr >= SSR_RATIO * random.ssr && learned.ssr > 0.0 && secs < E2E_SECS,
        format!(
            "{} records, learned ssr {:.3} vs random {:.3} over {}x{}, {:.1} min",
            fx.records.len(),
            learned.ssr,
            random.ssr,
            learned.n_configs,
            learned.trials,
            secs / 60.0
        ),
    )
}

fn rl_yield() -> Verdict {
    let library = builtin_library();
    let spec = GripperSpec::default();
    let objects = vec!["bucket".to_string()];
    let mut rng = Rng::new(7);
    let plans = plan_scenes(&objects, TaskKind::Pick, RL_SCENES, &mut rng);
    let scenes = rl_scenes(&plans, &library, 512).expect("scenes");
    // same seed, so the same scenes and tasks
    let plan = CollectPlan {
        objects,
        task: TaskKind::Pick,
        scenes: RL_SCENES,
        samples_per_scene: RANDOM_PER_SCENE,
        n_points: 512,
    };
    let (_, random) = collect_random(&library, &plan, &spec, 7).expect("random");
    let cfg = RlConfig {
        episodes: RL_EPISODES,
        sac: SacConfig {
            update_every: RL_UPDATE_EVERY,
            ..SacConfig::default()
        },
    };
    let t = Instant::now();
    let sac = Sac::new(cfg.sac, 1).expect("sac");
    let (_, _, st) = rl_collect(&scenes, sac, &cfg, &spec, &mut rng).expect("rl");
    verdict(
        st.positive_rate() > 0.0 && st.positive_rate() >= RL_RATIO * random.positive_rate(),
        format!(
            "rl {}/{} = {:.5} vs random {}/{} = {:.5}, {} updates, {:.1} min",
            st.positives,
            st.episodes,
            st.positive_rate(),
            random.positives,
            random.total,
            random.positive_rate(),
            st.updates,
            t.elapsed().as_secs_f64() / 60.0
        ),
    )
}

fn adaptation(fx: &Fixture) -> Verdict {
    let mut cfg = fx.cfg.clone();
    cfg.eval.baselines = false;
    cfg.train.ca_rounds = CA_ROUNDS;
    let setup = AdaptSetup {
        library: &fx.library,
        objects: cfg.objects.clone(),
        n_points: cfg.n_points,
        infer: cfg.infer.options(),
    };
    let mut pairs = Vec::new();
    for seed in 0..CA_SEEDS {
        cfg.train.seed = seed;
        let eval_seed = 100 + seed;
        let before = eval_all(&cfg, &fx.library, Some(&fx.model), eval_seed).expect("eval").learned.expect("ssr").ssr;
        let mut m = fx.model.clone();
        if let Err(e) = collaborative_adaptation(&mut m, &setup, &cfg.train, &SimLabeler { spec: cfg.gripper }) {
            return verdict(false, format!("seed {seed}: {e}"));
        }
        let after = eval_all(&cfg, &fx.library, Some(&m), eval_seed).expect("eval").learned.expect("ssr").ssr;
        pairs.push((before, after));
    }
    let n = pairs.len() as f64;
    let mean_before = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_after = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let wins = pairs.iter().filter(|p| p.1 > p.0).count();
    let per: Vec<String> = pairs.iter().map(|(b, a)| format!("{b:.3}->{a:.3}")).collect();
    verdict(
        mean_after >= mean_before - CA_FLOOR && wins >= CA_STRICT_WINS,
        format!("mean {mean_before:.3} -> {mean_after:.3}, improved on {wins}/{CA_SEEDS} ({})", per.join(", ")),
    )
}

fn reference_scene(fx: &Fixture) -> (PointCloud, TaskSpec) {
    let obs = SceneRef {
        object_id: "box".into(),
        pose_seed: 0,
        camera_seed: 0,
    }
    .observe(&fx.library, fx.cfg.n_points)
    .expect("reference scene");
    (obs.cloud, TaskSpec::Push(UnitVector3::x()))
}

fn conditioning(fx: &Fixture) -> Verdict {
    let (raw, task) = reference_scene(fx);
    let cloud = PreparedCloud::new(&raw);
    let mut rng = Rng::new(4);
    let inf = infer_with(&fx.model, &cloud, &task, &mut rng, &fx.cfg.infer.options(), &|_, s| s).expect("infer");
    // the second first action sits at the cloud point farthest from the first
    let a = inf.u1.point();
    let far = (0..cloud.len())
        .max_by(|&i, &j| {
            let d = |k: usize| (cloud.points[k] - a).norm();
            d(i).total_cmp(&d(j))
        })
        .expect("points");
    let other = random_action_at(&raw, far, &mut rng);
    let tv = task.to_vec();
    let m2 = fx.model.module(ModuleId::Second);
    let a2 = affordance_map(m2, &fx.model.params, &cloud, &tv, Some(FirstAction::new(&cloud, &inf.u1))).expect("map");
    let b2 = affordance_map(m2, &fx.model.params, &cloud, &tv, Some(FirstAction::new(&cloud, &other))).expect("map");
    let delta = a2.iter().zip(&b2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    verdict(delta > CONDITIONING_DELTA, format!("max per-point |dA2| {delta:.3} over {} points", cloud.len()))
}

fn linear_search(fx: &Fixture) -> Verdict {
    let opts = fx.cfg.infer.options();
    let budget = opts.k_points * opts.k_orients;
    let plans = plan_scenes(&fx.cfg.objects, fx.cfg.task, 20, &mut Rng::new(17));
    let mut worst = [0usize; 2];
    let mut scenes = 0;
    let mut n_points = 0;
    let mut mismatch = false;
    for sp in &plans {
        let Ok(obs) = sp.scene.observe(&fx.library, fx.cfg.n_points) else { continue };
        let cloud = PreparedCloud::new(&obs.cloud);
        let seen = std::cell::RefCell::new([0usize; 2]);
        let hook = |id: ModuleId, s: Vec<f64>| {
            seen.borrow_mut()[(id == ModuleId::Second) as usize] += s.len();
            s
        };
        let inf = infer_with(&fx.model, &cloud, &sp.task, &mut sp.rng.clone(), &opts, &hook).expect("infer");
        let counted = *seen.borrow();
        mismatch |= counted != inf.critic_calls;
        for m in 0..2 {
            worst[m] = worst[m].max(counted[m]);
        }
        scenes += 1;
        n_points = cloud.len();
    }
    verdict(
        scenes > 0 && !mismatch && worst.iter().all(|&c| c <= budget && c < n_points * n_points),
        format!(
            "{scenes} scenes, at most {}/{} critic calls per module (budget {budget}, N^2 = {})",
            worst[0],
            worst[1],
            n_points * n_points
        ),
    )
}

fn main() {
    let fixture: OnceCell<Fixture> = OnceCell::new();
    let fx = || fixture.get_or_init(build_fixture);
    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient suite", Box::new(gradients)),
        ("rotation suite", Box::new(rotations)),
        ("estimator oracles", Box::new(estimators)),
        ("success-predicate table", Box::new(success_table)),
        ("determinism", Box::new(|| determinism(fx()))),
        ("label reproducibility", Box::new(|| labels(fx()))),
        ("end-to-end learning signal", Box::new(|| end_to_end(fx()))),
        ("rl yield", Box::new(rl_yield)),
        ("collaborative adaptation", Box::new(|| adaptation(fx()))),
        ("conditioning sensitivity", Box::new(|| conditioning(fx()))),
        ("linear-search contract", Box::new(|| linear_search(fx()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if i == 4 {
            let t = Instant::now();
            fx();
            println!("push fixture built in {:.1} min", t.elapsed().as_secs_f64() / 60.0);
        }
        let t = Instant::now();
        let v = run();
        failed += !v.pass as usize;
        println!(
            "criterion {:>2} {:<28} {}  {} [{:.1}s]",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
