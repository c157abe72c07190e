use qmimic_cli::commands;
use qmimic_cli::config::{RunConfig, Settings};
use qmimic_cli::CliError;

const USAGE: &str = "\
qmimic — mimic a reinforcement-learning teacher's Q-function with tree models

USAGE:
    qmimic <SUBCOMMAND> [--config FILE] [--key value]...

SUBCOMMANDS:
    train-teacher   Train the teacher Q-function and save teacher.json
    collect         Generate mimic data (experience or active) as NDJSON
    mimic-train     Train a mimic model (lmut | cart | cut) to model.json
    fidelity-eval   Regression agreement against the teacher labels
    play-eval       Greedy game-play evaluation (ARPE)
    interpret       Feature influence, rules and super-pixel reports
    pipeline        All of the above in order, resuming from artifacts

COMMON FLAGS (aliases for config keys):
    --env {mountain-car|cart-pole|mini-bird}   environment (env.name)
    --seed N          master seed (run.seed, default 1)
    --mode {active|experience}                 data setting (data.mode)
    --n N             transition budget (data.n, default 30000)
    --kind {lmut|cart|cut}                     model kind (model.kind)
    --teacher PATH    teacher artifact (paths.teacher)
    --data PATH       dataset artifact (paths.data)
    --model PATH      model artifact (paths.model)
    --out-dir DIR     artifact directory (run.out_dir, default runs/<env>)
    --force           rerun pipeline stages even if artifacts exist

Any config key can be set directly: --lmut.min_split_fraction 0.02,
--teacher.episodes 4000, --eval.episodes 100, ...

EXIT CODES: 0 success, 2 configuration error, 3 stage failure.
";

fn run() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(subcommand) = args.first().cloned() else {
        eprint!("{USAGE}");
        return Err(CliError::Config("missing subcommand".to_string()));
    };
    if subcommand == "--help" || subcommand == "-h" || subcommand == "help" {
        print!("{USAGE}");
        return Ok(());
    }
    let settings = Settings::from_args(&args[1..])?;
    let config = RunConfig::resolve(&settings)?;

    match subcommand.as_str() {
        "train-teacher" => {
            commands::cmd_train_teacher(&config)?;
        }
        "collect" => {
            commands::cmd_collect(&config)?;
        }
        "mimic-train" => {
            commands::cmd_mimic_train(&config)?;
        }
        "fidelity-eval" => {
            commands::cmd_fidelity_eval(&config)?;
        }
        "play-eval" => {
            commands::cmd_play_eval(&config)?;
        }
        "interpret" => {
            commands::cmd_interpret(&config)?;
        }
        "pipeline" => {
            commands::cmd_pipeline(&config)?;
        }
        other => {
            eprint!("{USAGE}");
            return Err(CliError::Config(format!("unknown subcommand '{other}'")));
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("qmimic: {err}");
        std::process::exit(err.exit_code());
    }
}
