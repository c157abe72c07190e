//! The seven subcommands and the end-to-end pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qmimic::baselines::{cut_learn, CartForest, CutTree};
use qmimic::datagen::{record_experience, ActiveStream};
use qmimic::envs::{make_env, EnvKind, MiniBird};
use qmimic::eval::{consecutive_test, fidelity, play_eval, FidelityReport, PlayReport, QSource};
use qmimic::interpret::{extract_rules, feature_influence, superpixels, InfluenceTable};
use qmimic::io;
use qmimic::lmut::LmutForest;
use qmimic::teacher::{train, TeacherModel};
use qmimic::types::TransitionRecord;

use crate::artifacts::{read_json, write_csv, write_json, write_pgm_mask, write_text, Manifest};
use crate::config::{DataMode, ModelKind, RunConfig};
use crate::CliError;

fn stage(name: &str) -> impl Fn(qmimic::Error) -> CliError + '_ {
    move |e| CliError::stage(name, e.to_string())
}

// ---------------------------------------------------------------------------
// Artifact payloads
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TeacherPayload {
    env: EnvKind,
    arpe: f64,
    model: TeacherModel,
}

#[derive(Serialize, Deserialize)]
struct DataPayload {
    env: EnvKind,
    mode: String,
    n: usize,
    teacher_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct ModelPayload {
    kind: String,
    env: EnvKind,
    leaf_count: usize,
    model: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct FidelityPayload {
    env: EnvKind,
    mode: String,
    model_kind: String,
    report: FidelityReport,
}

#[derive(Serialize, Deserialize)]
struct PlayPayload {
    env: EnvKind,
    policy: String,
    report: PlayReport,
}

/// Any trained mimic model, behind one prediction surface.
pub enum MimicModel {
    Lmut(LmutForest),
    Cart(CartForest),
    Cut(CutTree),
}

impl MimicModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            MimicModel::Lmut(_) => ModelKind::Lmut,
            MimicModel::Cart(_) => ModelKind::Cart,
            MimicModel::Cut(_) => ModelKind::Cut,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            MimicModel::Lmut(m) => m.leaf_count(),
            MimicModel::Cart(m) => m.leaf_count(),
            MimicModel::Cut(m) => m.leaf_count(),
        }
    }

    pub fn predict_record(&self, rec: &TransitionRecord) -> Result<f64, qmimic::Error> {
        match self {
            MimicModel::Lmut(m) => m.predict(&rec.obs, rec.action),
            MimicModel::Cart(m) => m.predict(&rec.obs, rec.action),
            MimicModel::Cut(m) => Ok(m.q_of(&rec.obs)?.q[rec.action.index()]),
        }
    }

    pub fn q_source(&self) -> &dyn QSource {
        match self {
            MimicModel::Lmut(m) => m,
            MimicModel::Cart(m) => m,
            MimicModel::Cut(m) => m,
        }
    }

    fn to_value(&self) -> Result<serde_json::Value, CliError> {
        let json = match self {
            MimicModel::Lmut(m) => m.to_json(),
            MimicModel::Cart(m) => m.to_json(),
            MimicModel::Cut(m) => m.to_json(),
        }
        .map_err(stage("serialize-model"))?;
        serde_json::from_str(&json).map_err(|e| CliError::stage("serialize-model", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, EnvKind), CliError> {
        let artifact = read_json::<ModelPayload>(path)?;
        let payload = artifact.payload;
        let json = payload.model.to_string();
        let model = match payload.kind.as_str() {
            "lmut" => MimicModel::Lmut(LmutForest::from_json(&json).map_err(stage("load-model"))?),
            "cart" => MimicModel::Cart(CartForest::from_json(&json).map_err(stage("load-model"))?),
            "cut" => MimicModel::Cut(CutTree::from_json(&json).map_err(stage("load-model"))?),
            other => {
                return Err(CliError::stage(
                    "load-model",
                    format!("unknown model kind '{other}' in {}", path.display()),
                ))
            }
        };
        Ok((model, payload.env))
    }
}

fn load_teacher(path: &Path) -> Result<TeacherModel, CliError> {
    Ok(read_json::<TeacherPayload>(path)?.payload.model)
}

// ---------------------------------------------------------------------------
// train-teacher
// ---------------------------------------------------------------------------

pub fn cmd_train_teacher(config: &RunConfig) -> Result<PathBuf, CliError> {
    let path = config.primary_out("train-teacher");
    let model = train(config.env, &config.teacher_cfg, config.seed).map_err(stage("train-teacher"))?;
    let mut env = make_env(config.env);
    let report = play_eval(&model, env.as_mut(), config.eval_episodes, config.seed + 1_000_000)
        .map_err(stage("train-teacher"))?;
    write_json(
        &path,
        Manifest::new(config, "train-teacher"),
        TeacherPayload {
            env: config.env,
            arpe: report.arpe,
            model,
        },
    )?;
    println!(
        "train-teacher: {} ARPE {:.2} over {} episodes -> {}",
        config.env,
        report.arpe,
        report.episodes,
        path.display()
    );
    Ok(path)
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

pub fn cmd_collect(config: &RunConfig) -> Result<PathBuf, CliError> {
    let data_path = config.primary_out("collect");
    let teacher_path = config.teacher_artifact();
    let (records, fingerprint) = match config.mode {
        DataMode::Active => {
            if !teacher_path.exists() {
                return Err(CliError::Config(format!(
                    "active collection needs a teacher artifact at {} (run train-teacher or pass --teacher)",
                    teacher_path.display()
                )));
            }
            let teacher = load_teacher(&teacher_path)?;
            let mut stream = ActiveStream::new(
                config.env,
                config.seed,
                config.batch,
                config.epsilon_budget,
            )
            .map_err(stage("collect"))?;
            let mut records = Vec::with_capacity(config.n);
            while records.len() < config.n {
                let batch = stream.next_batch(&teacher).map_err(stage("collect"))?;
                records.extend(batch);
            }
            records.truncate(config.n);
            (records, teacher.fingerprint())
        }
        DataMode::Experience => {
            let (dataset, teacher) =
                record_experience(config.env, &config.teacher_cfg, config.seed, config.n)
                    .map_err(stage("collect"))?;
            if teacher_path.exists() {
                let prior = load_teacher(&teacher_path)?;
                if prior.fingerprint() != teacher.fingerprint() {
                    return Err(CliError::stage(
                        "collect",
                        format!(
                            "teacher at {} does not match the teacher retrained for experience \
                             collection; seeds or teacher settings changed",
                            teacher_path.display()
                        ),
                    ));
                }
            } else {
                let mut env = make_env(config.env);
                let report =
                    play_eval(&teacher, env.as_mut(), config.eval_episodes, config.seed + 1_000_000)
                        .map_err(stage("collect"))?;
                write_json(
                    &teacher_path,
                    Manifest::new(config, "collect"),
                    TeacherPayload {
                        env: config.env,
                        arpe: report.arpe,
                        model: teacher.clone(),
                    },
                )?;
            }
            (dataset.records, dataset.teacher_fingerprint)
        }
    };

    if let Some(parent) = data_path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::stage("collect", format!("{}: {e}", parent.display())))?;
    }
    io::write_ndjson_file(&data_path, &records).map_err(stage("collect"))?;
    let sidecar = data_path.with_extension("ndjson.manifest.json");
    write_json(
        &sidecar,
        Manifest::new(config, "collect"),
        DataPayload {
            env: config.env,
            mode: config.mode.name().to_string(),
            n: records.len(),
            teacher_fingerprint: format!("{fingerprint:016x}"),
        },
    )?;
    println!(
        "collect: {} {} transitions ({}) -> {}",
        config.env,
        records.len(),
        config.mode.name(),
        data_path.display()
    );
    Ok(data_path)
}

// ---------------------------------------------------------------------------
// mimic-train
// ---------------------------------------------------------------------------

/// Splits the dataset into contiguous folds and withholds the evaluation
/// fold; the rest trains in recorded order.
fn training_slice(records: &[TransitionRecord], folds: usize, eval_fold: usize) -> Vec<TransitionRecord> {
    let n = records.len();
    let lo = eval_fold * n / folds;
    let hi = (eval_fold + 1) * n / folds;
    let mut out = Vec::with_capacity(n - (hi - lo));
    out.extend_from_slice(&records[..lo]);
    out.extend_from_slice(&records[hi..]);
    out
}

fn eval_slice(records: &[TransitionRecord], folds: usize, eval_fold: usize) -> Vec<TransitionRecord> {
    let n = records.len();
    let lo = eval_fold * n / folds;
    let hi = (eval_fold + 1) * n / folds;
    records[lo..hi].to_vec()
}

fn load_data(config: &RunConfig) -> Result<Vec<TransitionRecord>, CliError> {
    let path = config.data_artifact();
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no dataset at {} (run collect or pass --data)",
            path.display()
        )));
    }
    io::read_ndjson_file(&path).map_err(stage("load-data"))
}

pub fn cmd_mimic_train(config: &RunConfig) -> Result<PathBuf, CliError> {
    let model_path = config.primary_out("mimic-train");
    let env_spec = {
        let env = make_env(config.env);
        env.spec().clone()
    };

    let model = match config.model_kind {
        ModelKind::Lmut => {
            let mut forest = LmutForest::new(
                env_spec.feature_count,
                env_spec.action_count,
                config.model_gamma,
                config.lmut.clone(),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            // Consecutive testing (test-then-train) scores each batch
            // before it is absorbed, producing the learning curve for free.
            let curve = match config.mode {
                DataMode::Active => {
                    let teacher_path = config.teacher_artifact();
                    if !teacher_path.exists() {
                        return Err(CliError::Config(format!(
                            "active training needs a teacher artifact at {}",
                            teacher_path.display()
                        )));
                    }
                    let teacher = load_teacher(&teacher_path)?;
                    let mut stream = ActiveStream::new(
                        config.env,
                        config.seed,
                        config.batch,
                        config.epsilon_budget,
                    )
                    .map_err(stage("mimic-train"))?;
                    consecutive_test(&mut forest, || stream.next_batch(&teacher), config.n)
                        .map_err(stage("mimic-train"))?
                }
                DataMode::Experience => {
                    // The static dataset replays as a simulated stream in
                    // recorded order.
                    let records = load_data(config)?;
                    let train = training_slice(&records, config.folds, config.eval_fold);
                    let total = train.len();
                    let mut chunks = train.chunks(config.batch);
                    consecutive_test(
                        &mut forest,
                        || Ok(chunks.next().map(|c| c.to_vec()).unwrap_or_default()),
                        total,
                    )
                    .map_err(stage("mimic-train"))?
                }
            };
            let curve_path = config.out_dir.join("curve.csv");
            write_csv(
                &curve_path,
                &Manifest::new(config, "mimic-train"),
                "batch_index,rae,rse",
                curve.iter().map(|p| {
                    format!("{},{},{}", p.batch_index, csv_opt(p.rae), csv_opt(p.rse))
                }),
            )?;
            MimicModel::Lmut(forest)
        }
        ModelKind::Cart => {
            if config.mode != DataMode::Experience {
                return Err(CliError::Config(
                    "CART is a batch learner; it requires data.mode = experience".to_string(),
                ));
            }
            let records = load_data(config)?;
            let train = training_slice(&records, config.folds, config.eval_fold);
            let forest = CartForest::fit(&train, env_spec.action_count, config.cart)
                .map_err(stage("mimic-train"))?;
            MimicModel::Cart(forest)
        }
        ModelKind::Cut => {
            let mut env = make_env(config.env);
            let tree = cut_learn(env.as_mut(), config.cut.clone(), config.seed, config.n)
                .map_err(stage("mimic-train"))?;
            MimicModel::Cut(tree)
        }
    };

    let payload = ModelPayload {
        kind: model.kind().name().to_string(),
        env: config.env,
        leaf_count: model.leaf_count(),
        model: model.to_value()?,
    };
    write_json(&model_path, Manifest::new(config, "mimic-train"), payload)?;
    println!(
        "mimic-train: {} {} model, {} leaves -> {}",
        config.env,
        model.kind().name(),
        model.leaf_count(),
        model_path.display()
    );
    Ok(model_path)
}

// ---------------------------------------------------------------------------
// fidelity-eval
// ---------------------------------------------------------------------------

/// Evaluation transitions: the held-out fold (experience) or a fresh
/// greedy teacher stream (active).
fn evaluation_records(config: &RunConfig) -> Result<Vec<TransitionRecord>, CliError> {
    match config.mode {
        DataMode::Experience => {
            let records = load_data(config)?;
            Ok(eval_slice(&records, config.folds, config.eval_fold))
        }
        DataMode::Active => {
            let teacher_path = config.teacher_artifact();
            if !teacher_path.exists() {
                return Err(CliError::Config(format!(
                    "active evaluation needs a teacher artifact at {}",
                    teacher_path.display()
                )));
            }
            let teacher = load_teacher(&teacher_path)?;
            let mut stream = ActiveStream::with_schedule(
                config.env,
                config.seed + 500_000,
                config.batch,
                config.eval_n,
                0.0,
                0.0,
            )
            .map_err(stage("fidelity-eval"))?;
            let mut records = Vec::with_capacity(config.eval_n);
            while records.len() < config.eval_n {
                records.extend(stream.next_batch(&teacher).map_err(stage("fidelity-eval"))?);
            }
            records.truncate(config.eval_n);
            Ok(records)
        }
    }
}

pub fn cmd_fidelity_eval(config: &RunConfig) -> Result<PathBuf, CliError> {
    let model_path = config.model_artifact();
    let (model, _) = MimicModel::load(&model_path)?;
    let records = evaluation_records(config)?;
    if records.is_empty() {
        return Err(CliError::stage("fidelity-eval", "no evaluation records"));
    }
    let mut predictions = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for rec in &records {
        predictions.push(model.predict_record(rec).map_err(stage("fidelity-eval"))?);
        targets.push(rec.q_hat);
    }
    let report =
        fidelity(&predictions, &targets, model.leaf_count()).map_err(stage("fidelity-eval"))?;

    let out = config.primary_out("fidelity-eval");
    write_json(
        &out,
        Manifest::new(config, "fidelity-eval"),
        FidelityPayload {
            env: config.env,
            mode: config.mode.name().to_string(),
            model_kind: model.kind().name().to_string(),
            report: report.clone(),
        },
    )?;
    println!(
        "fidelity-eval: {}",
        fidelity_table(config, model.kind().name(), &report)
    );
    Ok(out)
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "na".to_string())
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".to_string())
}

fn fidelity_table(config: &RunConfig, model_kind: &str, report: &FidelityReport) -> String {
    format!(
        "{:<13} {:<10} {:>9} {:>9} {:>9} {:>9} {:>7}\n{:<13} {:<10} {:>9.4} {:>9.4} {:>9} {:>9} {:>7}",
        "env",
        "model",
        "MAE",
        "RMSE",
        "RAE",
        "RSE",
        "leaves",
        config.env,
        model_kind,
        report.mae,
        report.rmse,
        format_opt(report.rae),
        format_opt(report.rse),
        report.leaf_count,
    )
}

// ---------------------------------------------------------------------------
// play-eval
// ---------------------------------------------------------------------------

enum Policy {
    Teacher(TeacherModel),
    Model(MimicModel),
}

impl Policy {
    fn name(&self) -> String {
        match self {
            Policy::Teacher(_) => "teacher".to_string(),
            Policy::Model(m) => m.kind().name().to_string(),
        }
    }

    fn q_source(&self) -> &dyn QSource {
        match self {
            Policy::Teacher(t) => t,
            Policy::Model(m) => m.q_source(),
        }
    }
}

pub fn cmd_play_eval(config: &RunConfig) -> Result<PathBuf, CliError> {
    let policy = if config.eval_policy == "teacher" {
        Policy::Teacher(load_teacher(&config.teacher_artifact())?)
    } else {
        Policy::Model(MimicModel::load(&config.model_artifact())?.0)
    };
    let mut env = make_env(config.env);
    // The same seed base the teacher threshold check uses, so playing the
    // teacher reproduces that check.
    let report = play_eval(
        policy.q_source(),
        env.as_mut(),
        config.eval_episodes,
        config.seed + 1_000_000,
    )
    .map_err(stage("play-eval"))?;

    let out = config.primary_out("play-eval");
    write_json(
        &out,
        Manifest::new(config, "play-eval"),
        PlayPayload {
            env: config.env,
            policy: policy.name(),
            report: report.clone(),
        },
    )?;
    println!(
        "play-eval: {} {} ARPE {:.2} over {} episodes -> {}",
        config.env,
        policy.name(),
        report.arpe,
        report.episodes,
        out.display()
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// interpret
// ---------------------------------------------------------------------------

/// Feature names for the low-dimensional environments; pixel features
/// are named by their (frame, row, col) location.
fn feature_name(env: EnvKind, index: usize) -> String {
    match env {
        EnvKind::MountainCar => ["position", "velocity"]
            .get(index)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("f{index}")),
        EnvKind::CartPole => ["cart_position", "cart_velocity", "pole_angle", "pole_velocity"]
            .get(index)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("f{index}")),
        EnvKind::MiniBird => {
            let g = MiniBird::geometry();
            let (frame, row, col) = g.locate(index);
            format!("px_f{frame}_r{row}_c{col}")
        }
    }
}

fn action_name(env: EnvKind, action: usize) -> String {
    let names: &[&str] = match env {
        EnvKind::MountainCar => &["push_left", "no_push", "push_right"],
        EnvKind::CartPole => &["push_left", "push_right"],
        EnvKind::MiniBird => &["glide", "flap"],
    };
    names
        .get(action)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("a{action}"))
}

fn write_influence_csv(
    path: &Path,
    manifest: &Manifest,
    env: EnvKind,
    table: &InfluenceTable,
) -> Result<(), CliError> {
    write_csv(
        path,
        manifest,
        "feature,name,influence",
        table
            .ranking()
            .into_iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|(idx, v)| format!("{idx},{},{v}", feature_name(env, idx))),
    )
}

fn rules_text(env: EnvKind, report: &qmimic::interpret::RuleReport) -> String {
    let mut out = String::new();
    for (i, rule) in report.rules.iter().enumerate() {
        out.push_str(&format!(
            "rule {i}: visits {} -> {}\n  if {}\n  Q = [{}]\n",
            rule.visits,
            action_name(env, rule.action.index()),
            rule.cell,
            rule.q
                .values()
                .iter()
                .enumerate()
                .map(|(a, q)| format!("{}: {q:.3}", action_name(env, a)))
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    out
}

pub fn cmd_interpret(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let model_path = config.model_artifact();
    let (model, model_env) = MimicModel::load(&model_path)?;
    let MimicModel::Lmut(forest) = model else {
        return Err(CliError::Config(format!(
            "interpret requires an lmut model; {} holds {}",
            model_path.display(),
            model.kind().name()
        )));
    };
    let manifest = Manifest::new(config, "interpret");
    let mut written = Vec::new();

    let table = feature_influence(&forest);
    let influence_path = config.out_dir.join("influence.csv");
    write_influence_csv(&influence_path, &manifest, model_env, &table)?;
    written.push(influence_path);

    let rules = extract_rules(&forest, config.top_k).map_err(stage("interpret"))?;
    let rules_path = config.out_dir.join("rules.txt");
    write_text(&rules_path, &manifest, &rules_text(model_env, &rules))?;
    written.push(rules_path);
    let rules_json = config.out_dir.join("rules.json");
    write_json(&rules_json, manifest.clone(), &rules)?;
    written.push(rules_json);

    if model_env == EnvKind::MiniBird {
        written.extend(write_superpixels(config, &forest, &table, &manifest)?);
    }

    println!(
        "interpret: wrote {}",
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(written)
}

/// Two probe observations: the start of a fresh episode and a mid-game
/// state reached by playing the forest greedily for a few steps.
fn write_superpixels(
    config: &RunConfig,
    forest: &LmutForest,
    table: &InfluenceTable,
    manifest: &Manifest,
) -> Result<Vec<PathBuf>, CliError> {
    let geometry = MiniBird::geometry();
    let mut env = make_env(EnvKind::MiniBird);
    let start_obs = env.reset(config.seed + 42);
    let mut mid_obs = start_obs.clone();
    for _ in 0..12 {
        let action = forest.q_vector(&mid_obs).map_err(stage("interpret"))?.greedy();
        let step = env.step(action).map_err(stage("interpret"))?;
        if step.done {
            break;
        }
        mid_obs = step.next_obs;
    }

    let mut written = Vec::new();
    for (tag, obs) in [("start", &start_obs), ("mid", &mid_obs)] {
        let sp = superpixels(forest, table, obs, geometry).map_err(stage("interpret"))?;
        let json_path = config.out_dir.join(format!("superpixels_{tag}.json"));
        write_json(&json_path, manifest.clone(), &sp)?;
        written.push(json_path);
        for frame in 0..geometry.frames {
            let pixels: Vec<(usize, usize)> = sp
                .located
                .iter()
                .filter(|(f, _, _)| *f == frame)
                .map(|&(_, r, c)| (r, c))
                .collect();
            let mask_path = config
                .out_dir
                .join(format!("superpixels_{tag}_frame{frame}.pgm"));
            write_pgm_mask(&mask_path, geometry.rows, geometry.cols, &pixels)?;
            written.push(mask_path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

pub fn cmd_pipeline(config: &RunConfig) -> Result<(), CliError> {
    if config.out_path.is_some() {
        return Err(CliError::Config(
            "--out names one stage's output; the pipeline takes --out-dir".to_string(),
        ));
    }
    let slots: Vec<(&str, Vec<PathBuf>)> = vec![
        ("train-teacher", vec![config.teacher_artifact()]),
        ("collect", vec![config.data_artifact()]),
        ("mimic-train", vec![config.model_artifact()]),
        ("fidelity-eval", vec![config.out_dir.join("fidelity.json")]),
        ("play-eval", vec![config.out_dir.join("play.json")]),
        (
            "interpret",
            vec![config.out_dir.join("influence.csv"), config.out_dir.join("rules.txt")],
        ),
    ];

    for (name, outputs) in slots {
        let done = !config.force && outputs.iter().all(|p| p.exists());
        if done {
            println!("pipeline: {name} up to date");
            continue;
        }
        if name == "interpret" && config.model_kind != ModelKind::Lmut {
            println!("pipeline: interpret skipped ({} model)", config.model_kind.name());
            continue;
        }
        match name {
            "train-teacher" => {
                cmd_train_teacher(config)?;
            }
            "collect" => {
                cmd_collect(config)?;
            }
            "mimic-train" => {
                cmd_mimic_train(config)?;
            }
            "fidelity-eval" => {
                cmd_fidelity_eval(config)?;
            }
            "play-eval" => {
                cmd_play_eval(config)?;
            }
            "interpret" => {
                cmd_interpret(config)?;
            }
            _ => unreachable!(),
        }
    }
    println!("pipeline: complete in {}", config.out_dir.display());
    Ok(())
}
