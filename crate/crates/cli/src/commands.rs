use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use ggik::cvae::{chain_hash, sample_solutions, train, CvaeConfig, GgikModel, ModelMeta, TrainOptions};
use ggik::data::{
    ablate, evaluate, generate_dataset, suite_chain, AblationOptions, BruteForceOracle, CvaeSampler, EvalOptions,
    EvalSummary, IkDataset, PerfectOracle,
};
use ggik::dgp::{complete_partial_all, config_from_points_with_goal, DgpError, DgpSolveOptions};
use ggik::graph::partial_graph;
use ggik::kinematics::{pose_error, JointConfig, KinematicChain, Pose, PoseJson};

use crate::error::{io_err, CliError};
use crate::{AblateArgs, Cli, Command, DataCmd, DgpArgs, EvalArgs, ModelArgs, RobotCmd, SampleArgs, ScheduleArgs, SolveCmd, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let name = match &cli.command {
        Command::Robot(RobotCmd::Validate { .. }) => "robot-validate",
        Command::Robot(RobotCmd::Show { .. }) => "robot-show",
        Command::Data(DataCmd::Generate(_)) => "data-generate",
        Command::Solve(SolveCmd::Dgp(_)) => "solve-dgp",
        Command::Train(_) => "train",
        Command::Sample(_) => "sample",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
    };
    fs::create_dir_all(&cli.out_dir).map_err(|e| io_err(&cli.out_dir, e))?;
    write_manifest(cli, name)?;
    match &cli.command {
        Command::Robot(RobotCmd::Validate { spec }) => {
            let text = read_text(spec)?;
            println!("{}", KinematicChain::from_json(&text)?.to_json());
            Ok(())
        }
        Command::Robot(RobotCmd::Show { name }) => {
            let chain = suite_chain(name).ok_or_else(|| CliError::Validation(format!("unknown chain {name:?}")))?;
            println!("{}", chain.to_json());
            Ok(())
        }
        Command::Data(DataCmd::Generate(a)) => {
            let chains = a.robots.iter().map(|r| load_robot(r)).collect::<Result<Vec<_>>>()?;
            let mut d = generate_dataset(&chains, a.per_chain, cli.seed);
            d.manifest.with_graphs = a.with_graphs;
            d.save(&a.out)?;
            info!("wrote {} problems to {}", d.len(), a.out.display());
            Ok(())
        }
        Command::Solve(SolveCmd::Dgp(a)) => solve_dgp(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Sample(a) => run_sample(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::Ablate(a) => run_ablate(cli, a),
    }
}

fn write_manifest(cli: &Cli, name: &str) -> Result<()> {
    let started = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let m = json!({
        "command": name,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "resolved": cli,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
    });
    let path = cli.out_dir.join(format!("{name}.manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n").map_err(|e| io_err(&path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// A built-in chain name or a spec file.
fn load_robot(r: &str) -> Result<KinematicChain> {
    if let Some(c) = suite_chain(r) {
        if !Path::new(r).exists() {
            return Ok(c);
        }
    }
    Ok(KinematicChain::from_json(&read_text(Path::new(r))?)?)
}

fn load_goal(path: &Path, chain: &KinematicChain) -> Result<Pose> {
    let pj: PoseJson =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let pose = pj.to_pose()?;
    if pose.dim() != chain.dim() {
        return Err(CliError::Validation(format!("goal is {}-D but the robot is {}-D", pose.dim(), chain.dim())));
    }
    Ok(pose)
}

fn load_dataset(path: &Path) -> Result<IkDataset> {
    IkDataset::load(path).map_err(|e| match e {
        ggik::data::DataError::Io(m) => io_err(path, m),
        other => other.into(),
    })
}

#[derive(Serialize)]
struct SolutionJson {
    config: JointConfig,
    pos_err: f64,
    rot_err_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
}

fn solution(chain: &KinematicChain, goal: &Pose, q: JointConfig, residual: Option<f64>) -> Result<SolutionJson> {
    let (p, r) = pose_error(goal, &chain.forward_kinematics(&q)?);
    Ok(SolutionJson { config: q, pos_err: p, rot_err_deg: r.to_degrees(), residual })
}

fn solve_dgp(cli: &Cli, a: &DgpArgs) -> Result<()> {
    let chain = load_robot(&a.robot)?;
    let goal = load_goal(&a.goal, &chain)?;
    let g = partial_graph(&chain, &goal).map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = DgpSolveOptions { num_restarts: a.restarts, seed: cli.seed, ..DgpSolveOptions::for_chain(&chain) };
    let runs = complete_partial_all(&g, &opts)?;
    let mut found: Vec<SolutionJson> = Vec::new();
    // lowest residual, earliest restart on ties
    let best_run = runs.iter().fold(&runs[0], |b, s| if s.residual < b.residual { s } else { b });
    let best = best_run.residual;
    for s in &runs {
        if !s.success {
            continue;
        }
        let q = match config_from_points_with_goal(&chain, &s.points, &goal) {
            Ok(q) => q,
            Err(DgpError::MalformedPointSet(m)) => {
                warn!("restart {}: {m}", s.restart_used);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if found.iter().all(|f| f.config.max_angle_diff(&q) > 1e-3) {
            found.push(solution(&chain, &goal, q, Some(s.residual))?);
        }
    }
    if found.is_empty() {
        return Err(CliError::NonConvergence(format!(
            "no restart out of {} converged (best residual {best:.3e})",
            runs.len()
        )));
    }
    let out = json!({
        "robot": chain.name(),
        "restarts": runs.len(),
        "converged": runs.iter().filter(|s| s.success).count(),
        "best_residual": best,
        "report": best_run.report(),
        "solutions": found,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(())
}

fn model_config(m: &ModelArgs) -> Result<CvaeConfig> {
    let d = CvaeConfig::default();
    let cfg = CvaeConfig {
        arch: m.arch.parse().map_err(CliError::Validation)?,
        latent: m.latent.unwrap_or(d.latent),
        mixtures: m.mixtures.unwrap_or(d.mixtures),
        hidden: m.hidden.unwrap_or(d.hidden),
        message: m.message.unwrap_or(d.message),
        layers: m.layers.unwrap_or(d.layers),
        length_scale: m.length_scale.unwrap_or(d.length_scale),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_options(s: &ScheduleArgs, seed: u64) -> TrainOptions {
    let d = TrainOptions::default();
    TrainOptions {
        epochs: s.epochs.unwrap_or(d.epochs),
        lr: s.lr.unwrap_or(d.lr),
        batch_size: s.batch_size.unwrap_or(d.batch_size),
        max_steps: s.max_steps.or(d.max_steps),
        seed,
        ..d
    }
}

fn elbo_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,elbo\n");
    for (i, v) in trace.iter().enumerate() {
        s += &format!("{i},{v}\n");
    }
    s
}

fn run_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let cfg = model_config(&a.model)?;
    let opts = train_options(&a.schedule, cli.seed);
    let mut model = GgikModel::new(cfg.clone(), cli.seed)?;
    info!("training {} parameters on {} problems", model.num_params(), data.len());
    let report = train(&mut model, &data, &opts, |s, e| {
        if (s + 1) % 50 == 0 {
            info!("step {} elbo {e:.4}", s + 1);
        }
    })?;
    let meta = ModelMeta { config: cfg, chain_hashes: data.chains.iter().map(chain_hash).collect(), seed: cli.seed };
    model.save(&a.out, &meta)?;
    write_text(&with_suffix(&a.out, ".elbo.csv"), &elbo_csv(&report.step_elbo))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<(GgikModel, ModelMeta)> {
    GgikModel::load(path).map_err(|e| match e {
        ggik::cvae::CvaeError::Tensor(ggik::tensor::TensorError::Io(m)) => io_err(path, m),
        other => other.into(),
    })
}

fn run_sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let (model, meta) = load_model(&a.ckpt)?;
    let chain = load_robot(&a.robot)?;
    if !meta.chain_hashes.contains(&chain_hash(&chain)) {
        warn!("{} was not among the training chains", chain.name());
    }
    let goal = load_goal(&a.goal, &chain)?;
    let out = sample_solutions(&model, &chain, &goal, a.k, a.l, cli.seed)?;
    let sols = out
        .solutions
        .configs
        .into_iter()
        .map(|q| solution(&chain, &goal, q, None))
        .collect::<Result<Vec<_>>>()?;
    let body = json!({
        "robot": chain.name(),
        "drawn": out.drawn,
        "malformed": out.malformed,
        "clamped": out.clamped,
        "solutions": sols,
    });
    println!("{}", serde_json::to_string_pretty(&body).expect("serializes"));
    Ok(())
}

fn write_summary(cli: &Cli, stem: &str, s: &EvalSummary, plot: bool) -> Result<()> {
    write_text(&cli.out_dir.join(format!("{stem}.csv")), &s.stats.to_csv())?;
    write_text(&cli.out_dir.join(format!("{stem}.json")), &(s.stats.to_json() + "\n"))?;
    if plot {
        write_text(&cli.out_dir.join(format!("{stem}_plot.csv")), &s.plot_csv())?;
    }
    Ok(())
}

fn run_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let opts = EvalOptions { samples_per_problem: a.samples, seed: cli.seed, threads: None };
    let summary = match (&a.ckpt, a.oracle.as_deref()) {
        (Some(ckpt), _) => {
            let (model, _) = load_model(ckpt)?;
            evaluate(&CvaeSampler(&model), &data, &opts)?
        }
        (None, Some("perfect")) => evaluate(&PerfectOracle, &data, &opts)?,
        (None, Some("brute-force")) => evaluate(&BruteForceOracle { grid_per_joint: 64 }, &data, &opts)?,
        (None, other) => return Err(CliError::Validation(format!("unknown oracle {other:?} (perfect or brute-force)"))),
    };
    write_summary(cli, "eval", &summary, a.emit_plot_data)?;
    print!("{}", summary.stats.to_csv());
    Ok(())
}

fn run_ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let train_set = load_dataset(&a.data)?;
    let test_set = match &a.test {
        Some(p) => load_dataset(p)?,
        None => generate_dataset(&train_set.chains, a.test_per_chain, train_set.manifest.seed ^ 0x5eed_7e57),
    };
    let seen: std::collections::HashSet<_> = (0..train_set.len()).map(|i| train_set.record_hash(i)).collect();
    if (0..test_set.len()).any(|i| seen.contains(&test_set.record_hash(i))) {
        return Err(CliError::Validation("held-out set overlaps the training set".into()));
    }
    let opts = AblationOptions {
        model: model_config(&a.model)?,
        train: train_options(&a.schedule, cli.seed),
        init_seed: cli.seed,
        eval: EvalOptions { samples_per_problem: a.samples, seed: cli.seed, threads: None },
        elbo_mc: 4,
    };
    let report = ablate(&train_set, &test_set, &opts, |arch, s, e| {
        if (s + 1) % 50 == 0 {
            info!("{arch:?} step {} elbo {e:.4}", s + 1);
        }
    })?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut csv = String::from("arch,num_params,test_elbo,malformed_rate\n");
    let mut trace = String::from("arch,step,elbo\n");
    for arm in &report.arms {
        let arch = serde_json::to_value(arm.arch).expect("serializes");
        let arch = arch.as_str().expect("string");
        csv += &format!("{arch},{},{},{}\n", arm.num_params, arm.test_elbo, arm.malformed_rate);
        write_text(&a.out.join(format!("{arch}_stats.csv")), &arm.stats.to_csv())?;
        for (i, v) in arm.train.step_elbo.iter().enumerate() {
            trace += &format!("{arch},{i},{v}\n");
        }
    }
    write_text(&a.out.join("summary.csv"), &csv)?;
    write_text(&a.out.join("report.json"), &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))?;
    if a.emit_plot_data {
        write_text(&a.out.join("elbo_trace.csv"), &trace)?;
    }
    print!("{csv}");
    Ok(())
}
