//! Flat key=value configuration with section-prefixed keys.
//!
//! A config file holds lines like `lmut.min_split_fraction = 0.02`; every
//! key can be overridden by a same-named CLI flag (`--lmut.min_split_fraction
//! 0.02`). A few short flags alias common keys (`--env`, `--seed`, `--mode`,
//! `--n`, `--teacher`, `--data`, `--model`, `--out-dir`, `--force`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qmimic::baselines::{CartConfig, CutConfig};
use qmimic::envs::EnvKind;
use qmimic::lmut::{LmutHyperparams, SplitGate};
use qmimic::teacher::{DqnConfig, TeacherConfig, TileConfig};

use crate::CliError;

pub type ConfigResult<T> = Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

const ALIASES: &[(&str, &str)] = &[
    ("env", "env.name"),
    ("seed", "run.seed"),
    ("out-dir", "run.out_dir"),
    ("force", "run.force"),
    ("mode", "data.mode"),
    ("n", "data.n"),
    ("batch", "data.batch"),
    ("teacher", "paths.teacher"),
    ("data", "paths.data"),
    ("model", "paths.model"),
    ("out", "paths.out"),
    ("kind", "model.kind"),
    ("policy", "eval.policy"),
    ("episodes", "eval.episodes"),
    ("fold", "eval.fold"),
    ("top-k", "interpret.top_k"),
];

impl Settings {
    pub fn parse_file(path: &Path) -> ConfigResult<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut settings = Settings::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    idx + 1
                )));
            };
            settings
                .map
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(settings)
    }

    /// Applies `--key value` style arguments on top of the file settings.
    /// `--config FILE` loads a file first (lowest precedence); `--force`
    /// is a bare boolean flag.
    pub fn from_args(args: &[String]) -> ConfigResult<Settings> {
        let mut settings = Settings::default();
        // First pass: config files.
        let mut i = 0;
        while i < args.len() {
            if args[i] == "--config" {
                let path = args
                    .get(i + 1)
                    .ok_or_else(|| config_err("--config requires a path"))?;
                let file = Settings::parse_file(Path::new(path))?;
                settings.map.extend(file.map);
                i += 2;
            } else {
                i += 1;
            }
        }
        // Second pass: direct overrides.
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            if arg == "--config" {
                i += 2;
                continue;
            }
            let Some(name) = arg.strip_prefix("--") else {
                return Err(config_err(format!("unexpected argument '{arg}'")));
            };
            let key = ALIASES
                .iter()
                .find(|(a, _)| *a == name)
                .map(|(_, full)| full.to_string())
                .unwrap_or_else(|| name.to_string());
            if !key.contains('.') {
                return Err(config_err(format!(
                    "unknown flag --{name}; config keys are section-prefixed (env.name, lmut.alpha, ...)"
                )));
            }
            // Bare boolean flags.
            let next = args.get(i + 1);
            let consumes_value = match next {
                Some(v) if !v.starts_with("--") => true,
                _ => false,
            };
            if consumes_value {
                settings.map.insert(key, next.unwrap().clone());
                i += 2;
            } else if key == "run.force" {
                settings.map.insert(key, "true".to_string());
                i += 1;
            } else {
                return Err(config_err(format!("--{name} requires a value")));
            }
        }
        Ok(settings)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> ConfigResult<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| config_err(format!("invalid value '{raw}' for {key}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> ConfigResult<u64> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> ConfigResult<usize> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> ConfigResult<bool> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// Canonical `key = value` rendering (sorted), hashed into manifests.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Which data setting generates the mimic stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Experience,
    Active,
}

impl DataMode {
    pub fn name(self) -> &'static str {
        match self {
            DataMode::Experience => "experience",
            DataMode::Active => "active",
        }
    }
}

/// Which mimic model to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lmut,
    Cart,
    Cut,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lmut => "lmut",
            ModelKind::Cart => "cart",
            ModelKind::Cut => "cut",
        }
    }
}

/// Fully resolved configuration shared by all subcommands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub force: bool,
    pub mode: DataMode,
    pub n: usize,
    pub batch: usize,
    /// Query budget the active stream's epsilon schedule decays over
    /// (epsilon reaches 0 halfway through); defaults to `n`.
    pub epsilon_budget: usize,
    pub eval_n: usize,
    pub model_kind: ModelKind,
    pub teacher_cfg: TeacherConfig,
    pub lmut: LmutHyperparams,
    pub cart: CartConfig,
    pub cut: CutConfig,
    pub model_gamma: f64,
    pub eval_episodes: usize,
    pub eval_fold: usize,
    pub folds: usize,
    /// What play-eval drives: "model" (default) or "teacher".
    pub eval_policy: String,
    pub top_k: usize,
    pub teacher_path: Option<PathBuf>,
    pub data_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    pub config_hash: u64,
}

impl RunConfig {
    pub fn resolve(settings: &Settings) -> ConfigResult<RunConfig> {
        let env_name = settings
            .get("env.name")
            .ok_or_else(|| config_err("missing env.name (use --env)"))?;
        let env = EnvKind::parse(env_name).map_err(|e| config_err(e.to_string()))?;

        let seed = settings.u64_or("run.seed", 1)?;
        let out_dir = settings
            .get("run.out_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs").join(env.name()));

        let mode = match settings.get("data.mode").unwrap_or("active") {
            "active" => DataMode::Active,
            "experience" => DataMode::Experience,
            other => {
                return Err(config_err(format!(
                    "data.mode must be active or experience, got '{other}'"
                )))
            }
        };
        let model_kind = match settings.get("model.kind").unwrap_or("lmut") {
            "lmut" => ModelKind::Lmut,
            "cart" => ModelKind::Cart,
            "cut" => ModelKind::Cut,
            other => {
                return Err(config_err(format!(
                    "model.kind must be lmut, cart or cut, got '{other}'"
                )))
            }
        };

        let teacher_cfg = resolve_teacher(settings, env)?;
        let lmut = resolve_lmut(settings)?;
        let cart = CartConfig {
            min_leaf: settings.usize_or("cart.min_leaf", 8)?,
            max_depth: settings.usize_or("cart.max_depth", 30)?,
        };
        let model_gamma = settings.f64_or("model.gamma", 0.99)?;
        let cut_default = CutConfig::default();
        let cut = CutConfig {
            gamma: model_gamma,
            buffer_capacity: settings.usize_or("cut.buffer_capacity", cut_default.buffer_capacity)?,
            min_child: settings.usize_or("cut.min_child", cut_default.min_child)?,
            candidates_per_feature: settings
                .usize_or("cut.candidates", cut_default.candidates_per_feature)?,
            min_split_fraction: settings
                .f64_or("cut.min_split_fraction", cut_default.min_split_fraction)?,
            split_period: settings.usize_or("cut.split_period", cut_default.split_period)?,
            epsilon_start: settings.f64_or("cut.epsilon_start", cut_default.epsilon_start)?,
            epsilon_final: settings.f64_or("cut.epsilon_final", cut_default.epsilon_final)?,
            max_leaves: settings.usize_or("cut.max_leaves", cut_default.max_leaves)?,
        };

        let n = settings.usize_or("data.n", 30_000)?;
        let config = RunConfig {
            env,
            seed,
            out_dir,
            force: settings.bool_or("run.force", false)?,
            mode,
            n,
            batch: settings.usize_or("data.batch", 32)?,
            epsilon_budget: settings.usize_or("data.epsilon_budget", n)?,
            eval_n: settings.usize_or("data.eval_n", 10_000)?,
            model_kind,
            teacher_cfg,
            lmut,
            cart,
            cut,
            model_gamma,
            eval_episodes: settings.usize_or("eval.episodes", 100)?,
            eval_fold: settings.usize_or("eval.fold", 9)?,
            folds: settings.usize_or("eval.folds", 10)?,
            eval_policy: settings.get("eval.policy").unwrap_or("model").to_string(),
            top_k: settings.usize_or("interpret.top_k", 5)?,
            teacher_path: settings.get("paths.teacher").map(PathBuf::from),
            data_path: settings.get("paths.data").map(PathBuf::from),
            model_path: settings.get("paths.model").map(PathBuf::from),
            out_path: settings.get("paths.out").map(PathBuf::from),
            config_hash: fnv1a(settings.canonical().as_bytes()),
        };
        if config.batch == 0 || config.n == 0 {
            return Err(config_err("data.n and data.batch must be positive"));
        }
        if config.eval_fold >= config.folds {
            return Err(config_err(format!(
                "eval.fold {} out of range for {} folds",
                config.eval_fold, config.folds
            )));
        }
        Ok(config)
    }

    pub fn teacher_artifact(&self) -> PathBuf {
        self.teacher_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("teacher.json"))
    }

    /// The primary output of `cmd`, honoring a `--out` override.
    pub fn primary_out(&self, cmd: &str) -> PathBuf {
        if let Some(out) = &self.out_path {
            return out.clone();
        }
        match cmd {
            "train-teacher" => self.teacher_artifact(),
            "collect" => self.data_artifact(),
            "mimic-train" => self.model_artifact(),
            "fidelity-eval" => self.out_dir.join("fidelity.json"),
            "play-eval" => self.out_dir.join("play.json"),
            other => self.out_dir.join(other),
        }
    }

    pub fn data_artifact(&self) -> PathBuf {
        self.data_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("data.ndjson"))
    }

    pub fn model_artifact(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.json"))
    }
}

fn resolve_teacher(settings: &Settings, env: EnvKind) -> ConfigResult<TeacherConfig> {
    let default = TeacherConfig::default_for(env);
    let kind = settings.get("teacher.kind").unwrap_or(match &default {
        TeacherConfig::Tile(_) => "tile",
        TeacherConfig::Dqn(_) => "dqn",
    });
    match kind {
        "tile" => {
            let base = match default {
                TeacherConfig::Tile(c) => c,
                TeacherConfig::Dqn(_) => TileConfig::default(),
            };
            Ok(TeacherConfig::Tile(TileConfig {
                tilings: settings.usize_or("teacher.tilings", base.tilings)?,
                bins: settings.usize_or("teacher.bins", base.bins)?,
                alpha: settings.f64_or("teacher.alpha", base.alpha)?,
                gamma: settings.f64_or("teacher.gamma", base.gamma)?,
                episodes: settings.usize_or("teacher.episodes", base.episodes)?,
                epsilon_start: settings.f64_or("teacher.epsilon_start", base.epsilon_start)?,
                epsilon_final: settings.f64_or("teacher.epsilon_final", base.epsilon_final)?,
                arpe_threshold: settings.f64_or("teacher.arpe_threshold", base.arpe_threshold)?,
                eval_episodes: settings.usize_or("teacher.eval_episodes", base.eval_episodes)?,
            }))
        }
        "dqn" => {
            let base = match default {
                TeacherConfig::Dqn(c) => c,
                TeacherConfig::Tile(_) => DqnConfig::default(),
            };
            let hidden = match settings.get("teacher.hidden") {
                None => base.hidden.clone(),
                Some(raw) => raw
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<usize>()
                            .map_err(|_| config_err(format!("invalid teacher.hidden '{raw}'")))
                    })
                    .collect::<ConfigResult<Vec<usize>>>()?,
            };
            Ok(TeacherConfig::Dqn(DqnConfig {
                hidden,
                alpha: settings.f64_or("teacher.alpha", base.alpha)?,
                replay_capacity: settings
                    .usize_or("teacher.replay_capacity", base.replay_capacity)?,
                minibatch: settings.usize_or("teacher.minibatch", base.minibatch)?,
                target_refresh: settings.usize_or("teacher.target_refresh", base.target_refresh)?,
                epsilon_start: settings.f64_or("teacher.epsilon_start", base.epsilon_start)?,
                epsilon_final: settings.f64_or("teacher.epsilon_final", base.epsilon_final)?,
                gamma: settings.f64_or("teacher.gamma", base.gamma)?,
                episodes: settings.usize_or("teacher.episodes", base.episodes)?,
                train_every: settings.usize_or("teacher.train_every", base.train_every)?,
                warmup: settings.usize_or("teacher.warmup", base.warmup)?,
                arpe_threshold: settings.f64_or("teacher.arpe_threshold", base.arpe_threshold)?,
                eval_episodes: settings.usize_or("teacher.eval_episodes", base.eval_episodes)?,
            }))
        }
        other => Err(config_err(format!(
            "teacher.kind must be tile or dqn, got '{other}'"
        ))),
    }
}

fn resolve_lmut(settings: &Settings) -> ConfigResult<LmutHyperparams> {
    let base = LmutHyperparams::default();
    let gate = match settings.get("lmut.gate").unwrap_or("relative-improvement") {
        "relative-improvement" => SplitGate::RelativeImprovement,
        "absolute-error" => SplitGate::AbsoluteError,
        other => {
            return Err(config_err(format!(
                "lmut.gate must be relative-improvement or absolute-error, got '{other}'"
            )))
        }
    };
    let min_split_abs = match settings
        .get("lmut.min_split_abs")
        .or_else(|| settings.get("lmut.min_split"))
    {
        None => None,
        Some(raw) => Some(
            raw.parse::<f64>()
                .map_err(|_| config_err(format!("invalid lmut.min_split '{raw}'")))?,
        ),
    };
    let hyper = LmutHyperparams {
        min_improvement: settings.f64_or("lmut.min_improvement", base.min_improvement)?,
        min_split_fraction: settings.f64_or("lmut.min_split_fraction", base.min_split_fraction)?,
        min_split_abs,
        min_residual: settings.f64_or("lmut.min_residual", base.min_residual)?,
        flag_mdp: settings.bool_or("lmut.flag_mdp", base.flag_mdp)?,
        sgd_epochs: settings.usize_or("lmut.sgd_epochs", base.sgd_epochs)?,
        alpha: settings.f64_or("lmut.alpha", base.alpha)?,
        buffer_capacity: settings.usize_or("lmut.buffer_capacity", base.buffer_capacity)?,
        min_child: settings.usize_or("lmut.min_child", base.min_child)?,
        candidates_per_feature: settings
            .usize_or("lmut.candidates", base.candidates_per_feature)?,
        gate,
    };
    hyper
        .validate()
        .map_err(|e| config_err(format!("lmut hyperparameters: {e}")))?;
    Ok(hyper)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
