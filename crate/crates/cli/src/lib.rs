//! Batch front end for hutamp: unmixing jobs, model-order selection,
//! synthetic scenes, Monte-Carlo sweeps and metric reports.

pub mod commands;
pub mod config;
pub mod harness;

use hutamp::HutampError;

pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    /// Library failure, attributed to the key whose value led to it.
    #[error("config key `{key}`: {source}")]
    Run {
        key: String,
        #[source]
        source: HutampError,
    },
}

impl CliError {
    pub fn run(key: &str) -> impl FnOnce(HutampError) -> CliError + '_ {
        move |source| CliError::Run { key: key.to_string(), source }
    }

    pub fn io(key: &str) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Run { key: key.to_string(), source: HutampError::Io(e) }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_VALIDATION,
            CliError::Run { source, .. } => match source {
                HutampError::Input(_)
                | HutampError::Parameter(_)
                | HutampError::Dimension(_)
                | HutampError::Parse { .. }
                | HutampError::Io(_)
                | HutampError::Json(_) => EXIT_VALIDATION,
                _ => EXIT_NUMERIC,
            },
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// What a command reports back to the caller.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    /// Some trials or candidates failed but the run completed.
    pub partial: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.partial {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        }
    }
}

pub fn run_command(name: &str, cfg: &Config) -> Result<Outcome, CliError> {
    match name {
        "unmix" => commands::unmix(cfg, false),
        "mos" => commands::unmix(cfg, true),
        "synth" => commands::synth(cfg),
        "metrics" => commands::metrics(cfg),
        "sweep" => harness::sweep(cfg),
        other => Err(CliError::Config { key: "command".into(), msg: format!("unknown command {other:?}") }),
    }
}
