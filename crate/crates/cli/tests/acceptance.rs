//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and the test fails if any
//! criterion does. Criteria run one after another so timings are honest.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ggik::cvae::{elbo_terms, sample_solutions, train, Batch, CvaeConfig, GgikModel, TrainOptions};
use ggik::data::{
    ablate, evaluate, generate_dataset, suite_chain, AblationOptions, CvaeSampler, EvalOptions, IkDataset, SUITE_NAMES,
};
use ggik::dgp::{
    brute_force_ik, complete_partial_all, config_from_points, config_from_points_with_goal, recover_angles,
    DgpSolveOptions,
};
use ggik::egnn::{baseline_mpnn_layer, egnn_layer, init_layer, Arch, GraphBatch, GraphState, LayerConfig};
use ggik::graph::{complete_graph, partial_graph, points_from_config, PointGraph};
use ggik::kinematics::{pose_error, wrap_angle, JointConfig, KinematicChain, Pose};
use ggik::tensor::{check_gradients, ModelParams, Tape, Tensor, Var};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, o: &Outcome) {
    let line = format!(
        "ACCEPTANCE {id} {name}: {} ({}; {:.1}s)\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    // straight to the process stderr so the line shows even when the test passes
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("equivariance", equivariance),
        ("gradients", gradients),
        ("oracle equivalence", oracle_equivalence),
        ("desk-scale training", desk_scale_training),
        ("ablation ordering", ablation_ordering),
        ("two-link diversity", two_link_diversity),
        ("determinism and formats", determinism_and_formats),
    ];
    // GGIK_ACCEPTANCE=1,3 runs a subset while iterating locally
    let only: Option<Vec<usize>> =
        std::env::var("GGIK_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            let _ = std::io::stderr().write_all(format!("ACCEPTANCE {} {name}: SKIPPED\n", i + 1).as_bytes());
            continue;
        }
        let t = Instant::now();
        let o = run();
        report(i + 1, name, t, &o);
        if !o.pass {
            failed.push(format!("{} {name}: {}", i + 1, o.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

fn random_orthogonal(rng: &mut ChaCha8Rng, planar: bool) -> Matrix3<f64> {
    let r = if planar {
        Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI)).into_inner()
    } else {
        let axis = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        Rotation3::from_scaled_axis(axis.normalize() * rng.random_range(-PI..PI)).into_inner()
    };
    if rng.random_bool(0.5) {
        r * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0))
    } else {
        r
    }
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut worst, mut worst_angle) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let chain = suite_chain(SUITE_NAMES[trial % SUITE_NAMES.len()]).unwrap();
        let cfg = CvaeConfig { hidden: 16, message: 16, layers: 3, ..CvaeConfig::default() };
        let model = GgikModel::new(cfg, 1000 + trial as u64).unwrap();
        let goal = chain.forward_kinematics(&chain.random_config_with(&mut rng)).unwrap();
        let g = partial_graph(&chain, &goal).unwrap();
        let z = Tensor::from_fn(g.num_nodes(), model.cfg.latent, |_, _| rng.sample(StandardNormal));
        let base = model.decode(&g, &z).unwrap();
        let planar = chain.dim() == 2;
        let r = random_orthogonal(&mut rng, planar);
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), if planar { 0.0 } else { rng.random_range(-5.0..5.0) });
        let moved = model.decode(&g.transformed(&r, &t), &z).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            worst = worst.max((r * a + t - b).amax());
        }
        // angles are only defined for decodings that form a valid chain; compare whenever both recover
        if let (Ok(q0), Ok(q1)) = (recover_angles(&chain, &base), recover_angles(&chain, &moved)) {
            for (a, b) in q0.0.iter().zip(&q1.0) {
                worst_angle = worst_angle.max(wrap_angle(a - b).abs());
            }
        }
    }
    Outcome {
        pass: worst < 1e-8 && worst_angle < 1e-6,
        detail: format!("100 transforms, max position deviation {worst:.2e}, max angle deviation {worst_angle:.2e} rad"),
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn split(all: &ModelParams, part: &str) -> (ModelParams, ModelParams) {
    let (mut sub, mut rest) = (ModelParams::new(all.version), ModelParams::new(all.version));
    for (n, t) in all.iter() {
        if n.contains(part) {
            sub.insert(n.clone(), t.clone());
        } else {
            rest.insert(n.clone(), t.clone());
        }
    }
    (sub, rest)
}

/// Largest relative error of the parameters named like `part`.
fn grad_err(all: &ModelParams, part: &str, f: &dyn Fn(&Tape, &ModelParams) -> ggik::tensor::Result<Var>) -> f64 {
    let (sub, rest) = split(all, part);
    assert!(!sub.is_empty(), "{part}");
    check_gradients(&sub, 1e-5, None, |t, p| {
        let mut merged = rest.clone();
        merged.extend_prefixed("", p.clone());
        f(t, &merged)
    })
    .unwrap()
    .max_rel_err
}

fn untensor(e: ggik::cvae::CvaeError) -> ggik::tensor::TensorError {
    match e {
        ggik::cvae::CvaeError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst_block = 0.0f64;
    let mut notes = Vec::new();

    // single layers of both kinds
    let chain = suite_chain("spatial-6r").unwrap();
    let g = partial_graph(&chain, &chain.forward_kinematics(&chain.random_config(5)).unwrap()).unwrap();
    let batch = GraphBatch::new(&[&g, &g], 1.0);
    let n = batch.num_nodes();
    let (pos, hid) = (rand_tensor(&mut rng, n, 3), rand_tensor(&mut rng, n, 5));
    let (wp, wh) = (rand_tensor(&mut rng, n, 3), rand_tensor(&mut rng, n, 5));
    for arch in [Arch::Egnn, Arch::Baseline] {
        let cfg = LayerConfig { arch, hidden: 5, message: 4, dim: 3, dist_norm: 2.0 };
        let params = init_layer(&cfg, "l.", &mut rng);
        let loss = |t: &Tape, p: &ModelParams| {
            let s = GraphState { positions: t.constant(pos.clone()), hidden: t.constant(hid.clone()) };
            let out = match arch {
                Arch::Egnn => egnn_layer(t, p, "l.", &cfg, &batch, s)?,
                Arch::Baseline => baseline_mpnn_layer(t, p, "l.", &cfg, &batch, s)?,
            };
            let a = t.sum(t.mul(out.positions, t.constant(wp.clone()))?)?;
            let b = t.sum(t.mul(out.hidden, t.constant(wh.clone()))?)?;
            t.add(a, b)
        };
        let parts: &[&str] = match arch {
            Arch::Egnn => &["phi_e", "phi_x", "phi_h"],
            Arch::Baseline => &["phi_e", "phi_p", "phi_h"],
        };
        for part in parts {
            let e = grad_err(&params, part, &loss);
            notes.push(format!("{arch:?}.{part} {e:.1e}"));
            worst_block = worst_block.max(e);
        }
    }

    // model heads and the full bound on a mixed planar/spatial batch
    let cfg = CvaeConfig { latent: 2, mixtures: 2, hidden: 4, message: 4, layers: 2, length_scale: 3.0, ..CvaeConfig::default() };
    let model = GgikModel::new(cfg, 21).unwrap();
    let chains = [KinematicChain::planar("p3", &[1.0, 0.8, 0.5]).unwrap(), suite_chain("spatial-4r").unwrap()];
    let graphs: Vec<(PointGraph, PointGraph)> = chains
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let q = c.random_config(i as u64 + 30);
            (partial_graph(c, &c.forward_kinematics(&q).unwrap()).unwrap(), complete_graph(c, &q).unwrap())
        })
        .collect();
    let items: Vec<_> = graphs.iter().map(|(p, c)| (p, Some(c))).collect();
    let b = Batch::new(&items, model.cfg.length_scale).unwrap();
    let n = b.num_nodes();
    let eps = vec![Tensor::from_fn(n, 2, |_, _| rng.sample(StandardNormal))];
    let (w2, w4, w3) = (rand_tensor(&mut rng, n, 2), rand_tensor(&mut rng, n, 4), rand_tensor(&mut rng, n, 3));
    let with = |p: &ModelParams| GgikModel { cfg: model.cfg.clone(), params: p.clone() };
    let enc = |t: &Tape, p: &ModelParams| {
        let (mu, sigma) = with(p).encode_vars(t, &b).map_err(untensor)?;
        t.add(t.sum(t.mul(mu, t.constant(w2.clone()))?)?, t.sum(t.mul(sigma, t.constant(w2.clone()))?)?)
    };
    let prior = |t: &Tape, p: &ModelParams| {
        let (mu, sigma, log_pi) = with(p).prior_vars(t, &b).map_err(untensor)?;
        let a = t.add(t.sum(t.mul(mu, t.constant(w4.clone()))?)?, t.sum(t.mul(sigma, t.constant(w4.clone()))?)?)?;
        t.add(a, t.sum(t.mul(log_pi, t.constant(w2.clone()))?)?)
    };
    let dec = |t: &Tape, p: &ModelParams| {
        let x = with(p).decode_var(t, &b, t.constant(eps[0].clone())).map_err(untensor)?;
        t.sum(t.mul(x, t.constant(w3.clone()))?)
    };
    for (part, f) in [("enc.", &enc as &dyn Fn(&Tape, &ModelParams) -> _), ("prior.", &prior), ("dec.", &dec)] {
        let e = grad_err(&model.params, part, f);
        notes.push(format!("{part} {e:.1e}"));
        worst_block = worst_block.max(e);
    }
    let full = check_gradients(&model.params, 1e-5, None, |t, p| Ok(elbo_terms(&with(p), t, &b, &eps).map_err(untensor)?.elbo))
        .unwrap()
        .max_rel_err;
    Outcome {
        pass: worst_block < 1e-5 && full < 1e-4,
        detail: format!("worst block {worst_block:.1e} (< 1e-5), full bound {full:.1e} (< 1e-4) [{}]", notes.join(", ")),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let chains = [suite_chain("planar-2r").unwrap(), suite_chain("planar-3r").unwrap()];
    let generic = KinematicChain::planar("planar-3r-generic", &[1.0, 0.8, 0.5]).unwrap();

    // (a) angles -> points -> angles
    let mut worst_a = 0.0f64;
    for chain in chains.iter().chain([&generic]) {
        for _ in 0..100 {
            let q = chain.random_config_with(&mut rng);
            let (pts, _) = points_from_config(chain, &q).unwrap();
            let back = if chain.has_roll_joint() {
                config_from_points_with_goal(chain, &pts, &chain.forward_kinematics(&q).unwrap())
            } else {
                config_from_points(chain, &pts)
            };
            worst_a = worst_a.max(back.map(|b| b.max_angle_diff(&q)).unwrap_or(f64::INFINITY));
        }
    }

    // (b) completions of 50 reachable goals against exhaustive search
    let (mut goals, mut unconverged, mut unmatched, mut worst_res) = (0, 0, 0, 0.0f64);
    for chain in &chains {
        let opts = DgpSolveOptions { num_restarts: 4, ..DgpSolveOptions::for_chain(chain) };
        for _ in 0..25 {
            goals += 1;
            let goal = chain.forward_kinematics(&chain.random_config_with(&mut rng)).unwrap();
            let g = partial_graph(chain, &goal).unwrap();
            let reference = brute_force_ik(chain, &goal, 64, (1e-9, 1e-9)).unwrap();
            let sols = complete_partial_all(&g, &opts).unwrap();
            let best = sols.iter().map(|s| s.residual).fold(f64::INFINITY, f64::min);
            worst_res = worst_res.max(best);
            if best >= 1e-10 {
                unconverged += 1;
            }
            for s in sols.iter().filter(|s| s.success) {
                let ok = config_from_points_with_goal(chain, &s.points, &goal).is_ok_and(|q| {
                    let (pos, _) = pose_error(&chain.forward_kinematics(&q).unwrap(), &goal);
                    pos < 1e-3 && reference.configs.iter().any(|c| c.max_angle_diff(&q) < 1e-3)
                });
                if !ok {
                    unmatched += 1;
                }
            }
        }
    }

    // (c) both elbows of the two-link goal (1, 1)
    let two = &chains[0];
    let g = partial_graph(two, &Pose::planar(0.0, 1.0, 1.0)).unwrap();
    let found: Vec<JointConfig> = complete_partial_all(&g, &DgpSolveOptions { num_restarts: 16, ..DgpSolveOptions::for_chain(two) })
        .unwrap()
        .into_iter()
        .filter(|s| s.success)
        .filter_map(|s| config_from_points(two, &s.points).ok())
        .collect();
    let both = [JointConfig(vec![0.0, PI / 2.0]), JointConfig(vec![PI / 2.0, -PI / 2.0])]
        .iter()
        .all(|a| found.iter().any(|q| q.max_angle_diff(a) < 1e-6));

    Outcome {
        pass: worst_a < 1e-9 && unconverged == 0 && unmatched == 0 && both,
        detail: format!(
            "(a) worst round trip {worst_a:.1e} rad; (b) {goals} goals, {unconverged} unconverged (worst best residual {worst_res:.1e}), {unmatched} completions without a reference match; (c) both elbows {}",
            if both { "found" } else { "missing" }
        ),
    }
}

/// Mean ELBO over ten equal windows of the step trace.
fn smoothed(trace: &[f64]) -> Vec<f64> {
    let w = (trace.len() / 10).max(1);
    trace.chunks(w).filter(|c| c.len() == w).map(|c| c.iter().sum::<f64>() / w as f64).collect()
}

/// Mean over problems of the best of the drawn samples; a problem whose
/// samples were all malformed counts as a miss of one full reach / 180 deg.
fn best_of(summary: &ggik::data::EvalSummary, robot: &str) -> (f64, f64, usize) {
    let probs: Vec<_> = summary.problems.iter().filter(|p| p.robot == robot).collect();
    let best = |v: &[f64], miss: f64| if v.is_empty() { miss } else { v.iter().copied().fold(f64::INFINITY, f64::min) };
    let n = probs.len().max(1) as f64;
    let pos = probs.iter().map(|p| best(&p.pos, 1000.0)).sum::<f64>() / n;
    let rot = probs.iter().map(|p| best(&p.rot, 180.0)).sum::<f64>() / n;
    (pos / 10.0, rot, probs.iter().filter(|p| p.failed).count())
}

fn desk_scale_training() -> Outcome {
    let names = ["planar-3r", "spatial-6r", "spatial-7r"];
    let chains: Vec<_> = names.iter().map(|n| suite_chain(n).unwrap()).collect();
    let train_set = generate_dataset(&chains, 20_000, 1);
    let test_set = generate_dataset(&chains, 167, 2).slice(0..500);
    let mut model = GgikModel::new(CvaeConfig::default(), 1).unwrap();
    let t = Instant::now();
    let report = train(&mut model, &train_set, &TrainOptions { seed: 1, ..TrainOptions::default() }, |_, _| {}).unwrap();
    let train_secs = t.elapsed().as_secs_f64();
    let curve = smoothed(&report.step_elbo);
    let monotone = curve.windows(2).all(|w| w[1] >= w[0]);
    let summary = evaluate(&CvaeSampler(&model), &test_set, &EvalOptions { samples_per_problem: 32, seed: 2, threads: None }).unwrap();
    let mut pass = monotone;
    let mut parts = Vec::new();
    for n in names {
        let (pos_pct, rot, failed) = best_of(&summary, n);
        pass &= pos_pct < 2.0 && rot < 5.0;
        parts.push(format!("{n}: best-of-32 pos {pos_pct:.2}% reach, rot {rot:.2} deg, {failed} all-malformed"));
    }
    Outcome {
        pass,
        detail: format!(
            "{}; smoothed ELBO {} [{}]; {} steps in {train_secs:.0}s; malformed rate {:.3}",
            parts.join("; "),
            if monotone { "nondecreasing" } else { "decreases" },
            curve.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(" "),
            report.step_elbo.len(),
            summary.malformed_rate()
        ),
    }
}

fn ablation_ordering() -> Outcome {
    let chain = suite_chain("planar-3r").unwrap();
    let train_set = generate_dataset(std::slice::from_ref(&chain), 20_000, 11);
    let test_set = generate_dataset(std::slice::from_ref(&chain), 500, 12);
    let opts = AblationOptions {
        model: CvaeConfig::default(),
        train: TrainOptions { seed: 5, epochs: 16, ..TrainOptions::default() },
        init_seed: 5,
        eval: EvalOptions { samples_per_problem: 32, seed: 6, threads: None },
        elbo_mc: 4,
    };
    let r = ablate(&train_set, &test_set, &opts, |_, _, _| {}).unwrap();
    let (e, b) = (r.arm(Arch::Egnn).unwrap(), r.arm(Arch::Baseline).unwrap());
    let pass = r.params_matched() && e.test_elbo > b.test_elbo && b.malformed_rate >= e.malformed_rate;
    Outcome {
        pass,
        detail: format!(
            "params {} vs {} (ratio {:.3}); held-out ELBO egnn {:.2} vs baseline {:.2}; malformed egnn {:.3} vs baseline {:.3}",
            e.num_params, b.num_params, r.param_ratio, e.test_elbo, b.test_elbo, e.malformed_rate, b.malformed_rate
        ),
    }
}

fn two_link_diversity() -> Outcome {
    let chain = suite_chain("planar-2r").unwrap();
    let data = generate_dataset(std::slice::from_ref(&chain), 20_000, 21);
    let mut model = GgikModel::new(CvaeConfig::default(), 21).unwrap();
    train(&mut model, &data, &TrainOptions { seed: 21, epochs: 16, ..TrainOptions::default() }, |_, _| {}).unwrap();
    let goal = Pose::planar(0.0, 1.0, 1.0);
    let analytic = [JointConfig(vec![0.0, PI / 2.0]), JointConfig(vec![PI / 2.0, -PI / 2.0])];
    let (mut both, mut full) = (0, 0);
    for trial in 0..50 {
        let Ok(out) = sample_solutions(&model, &chain, &goal, 32, 32, 1000 + trial) else { continue };
        let hit = |a: &JointConfig| out.solutions.configs.iter().any(|q| q.max_angle_diff(a) < 0.2);
        if analytic.iter().all(hit) {
            both += 1;
        }
        if out.solutions.len() == 32 {
            full += 1;
        }
    }
    Outcome {
        pass: both >= 45,
        detail: format!("both solutions within 0.2 rad in {both}/50 trials (need 45); {full}/50 trials returned all 32 samples"),
    }
}

fn ggik(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ggik"))
        .arg("--out-dir")
        .arg(dir)
        .args(["--log-level", "error"])
        .args(args)
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".manifest.json") {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Every subcommand in sequence inside `dir`; returns each command's exit code and output.
fn pipeline(dir: &Path) -> Vec<(String, Option<i32>, Vec<u8>, Vec<u8>)> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let fx = |n: &str| fixtures.join(n).to_string_lossy().into_owned();
    let at = |n: &str| dir.join(n).to_string_lossy().into_owned();
    let tiny = ["--latent", "2", "--mixtures", "2", "--hidden", "8", "--message", "8", "--layers", "1", "--max-steps", "6", "--batch-size", "4"];
    let (data, ckpt, goal, held) = (at("train.ggik"), at("m.ckpt"), fx("goal_2r.json"), fx("heldout_small.ggik"));
    let (spec, ab) = (fx("planar_2r.json"), at("ab"));
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("robot validate", vec!["robot", "validate", &spec]),
        ("robot show", vec!["robot", "show", "spatial-7r"]),
        ("data generate", vec!["--seed", "3", "data", "generate", "--robots", "planar-2r", "spatial-6r", "--per-chain", "8", "--with-graphs", "--out", &data]),
        ("solve dgp", vec!["solve", "dgp", "--robot", "planar-2r", "--goal", &goal]),
        ("train", [&["--seed", "3", "train", "--data", &data, "--out", &ckpt][..], &tiny].concat()),
        ("sample", vec!["--seed", "4", "sample", "--ckpt", &ckpt, "--robot", "planar-2r", "--goal", &goal, "-L", "8", "-K", "4"]),
        ("eval", vec!["--seed", "5", "eval", "--ckpt", &ckpt, "--data", &held, "--samples", "4"]),
        ("eval oracle", vec!["eval", "--oracle", "perfect", "--data", &held, "--emit-plot-data"]),
        ("ablate", [&["--seed", "6", "ablate", "--data", &held, "--out", &ab, "--test-per-chain", "2", "--samples", "2", "--emit-plot-data"][..], &tiny].concat()),
    ];
    commands
        .into_iter()
        .map(|(name, args)| {
            let out = ggik(dir, &args);
            (name.to_string(), out.status.code(), out.stdout, out.stderr)
        })
        .collect()
}

fn determinism_and_formats() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (pipeline(a.path()), pipeline(b.path()));
    let mut problems = Vec::new();
    for (x, y) in ra.iter().zip(&rb) {
        if x != y {
            problems.push(format!("{} output differs between runs", x.0));
        }
        // an untrained model may legitimately find no well-formed sample
        if x.1 != Some(0) && !(x.0 == "sample" && x.1 == Some(2)) {
            problems.push(format!("{} exited {:?}: {}", x.0, x.1, String::from_utf8_lossy(&x.3)));
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    if fa != fb {
        problems.push(format!("written files differ ({} vs {} files)", fa.len(), fb.len()));
    }

    // write -> read -> write for every file format
    let data = a.path().join("train.ggik");
    let ckpt = a.path().join("m.ckpt");
    let mut again = Vec::new();
    IkDataset::load(&data).unwrap().write_to(&mut again).unwrap();
    if again != std::fs::read(&data).unwrap() {
        problems.push("dataset file does not round-trip".into());
    }
    let (model, meta) = GgikModel::load(&ckpt).unwrap();
    let copy = a.path().join("copy.ckpt");
    model.save(&copy, &meta).unwrap();
    if std::fs::read(&copy).unwrap() != std::fs::read(&ckpt).unwrap() {
        problems.push("checkpoint does not round-trip".into());
    }
    for name in SUITE_NAMES {
        let c = suite_chain(name).unwrap();
        if KinematicChain::from_json(&c.to_json()).unwrap().to_json() != c.to_json() {
            problems.push(format!("{name} spec does not round-trip"));
        }
        let q = c.random_config(9);
        let goal = c.forward_kinematics(&q).unwrap();
        for g in [complete_graph(&c, &q).unwrap(), partial_graph(&c, &goal).unwrap()] {
            if PointGraph::from_json(&g.to_json()).unwrap() != g {
                problems.push(format!("{name} graph does not round-trip"));
            }
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("{} subcommands and {} written files byte-identical across runs; dataset, checkpoint, spec and graph files round-trip", ra.len(), fa.len())
        } else {
            problems.join("; ")
        },
    }
}
