use promptalign::benchmark::BenchmarkError;
use promptalign::config::ConfigError;
use promptalign::corpus::CorpusError;
use promptalign::curation::CurationError;
use promptalign::grpo::GrpoError;
use promptalign::orchestrator::OrchestratorError;
use promptalign::taxonomy::TaxonomyError;
use thiserror::Error;

/// Every failure a subcommand can report. Each maps to a stable code printed
/// as `error[CODE]: message` and to exit status 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Server(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{failed} of {total} item(s) failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Corpus(CorpusError::SchemaViolation { .. } | CorpusError::InvalidRecord { .. }) => "E_SCHEMA",
            CliError::Corpus(_) => "E_IO",
            CliError::Taxonomy(_) => "E_TAXONOMY",
            CliError::Curation(CurationError::StoreCorruption(_)) => "E_STORE_CORRUPT",
            CliError::Curation(CurationError::IncompleteSelection { .. }) => "E_INCOMPLETE",
            CliError::Curation(_) => "E_CURATION",
            CliError::Grpo(_) => "E_GRPO",
            CliError::Orchestrator(_) => "E_ALIGN",
            CliError::Benchmark(BenchmarkError::KeypointSetMismatch { .. }) => "E_KEYPOINT_MISMATCH",
            CliError::Benchmark(_) => "E_BENCHMARK",
            CliError::Io { .. } => "E_IO",
            CliError::Server(_) => "E_SERVER",
            CliError::Invalid(_) => "E_INVALID",
            CliError::Partial { .. } => "E_PARTIAL",
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
