pub mod eval;
pub mod gen;
pub mod report;
pub mod train;

use clap::ValueEnum;
use dpkws_core::kws::ScoringMode;
use dpkws_core::trainer::{DataKind, Mode};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Class,
    Instance,
    Joint,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Class => Mode::Class,
            ModeArg::Instance => Mode::Instance,
            ModeArg::Joint => Mode::Joint,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DataArg {
    Clean,
    Noisy,
    Auto,
}

impl DataArg {
    pub fn resolve(self, corpus_has_noise: bool) -> DataKind {
        match self {
            DataArg::Clean => DataKind::Clean,
            DataArg::Noisy => DataKind::Noisy,
            DataArg::Auto => {
                if corpus_has_noise {
                    DataKind::Noisy
                } else {
                    DataKind::Clean
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoringArg {
    Forward,
    Viterbi,
}

impl From<ScoringArg> for ScoringMode {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Forward => ScoringMode::Forward,
            ScoringArg::Viterbi => ScoringMode::Viterbi,
        }
    }
}
