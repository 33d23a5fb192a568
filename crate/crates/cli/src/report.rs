use serde::Serialize;
use serde_json::Value;

pub const EXIT_IO: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SEARCH_SPACE: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

pub fn exit_code(e: &rtjscc::Error) -> u8 {
    match e {
        rtjscc::Error::Io { .. } => EXIT_IO,
        rtjscc::Error::SearchSpaceExceeded { .. } => EXIT_SEARCH_SPACE,
        e if e.is_validation() => EXIT_VALIDATION,
        _ => EXIT_INTERNAL,
    }
}

fn kind(e: &rtjscc::Error) -> &'static str {
    use rtjscc::Error::*;
    match e {
        NonStochasticRow { .. } => "non_stochastic_row",
        NegativeEntry { .. } => "negative_entry",
        DimensionMismatch(_) => "dimension_mismatch",
        BadHorizon(_) => "bad_horizon",
        Parse { .. } => "parse",
        Io { .. } => "io",
        UncoveredSupportPair { .. } => "uncovered_support_pair",
        SearchSpaceExceeded { .. } => "search_space_exceeded",
        EmptyState => "empty_state",
        ClosureCapExceeded { .. } => "closure_cap_exceeded",
    }
}

#[derive(Debug, Serialize)]
pub struct InstanceInfo {
    pub path: String,
    /// SHA-256 of the file bytes; null when the file could not be read.
    pub sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: u8,
    /// Candidate count for search-space failures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<u128>,
}

impl From<&rtjscc::Error> for ErrorInfo {
    fn from(e: &rtjscc::Error) -> Self {
        let count = match e {
            rtjscc::Error::SearchSpaceExceeded { count, .. } => Some(*count),
            _ => None,
        };
        ErrorInfo { kind: kind(e), message: e.to_string(), exit_code: exit_code(e), count }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub load_ms: f64,
    pub run_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub version: &'static str,
    pub instance: InstanceInfo,
    pub results: Option<Value>,
    pub error: Option<ErrorInfo>,
    pub timings: Timings,
    /// One-line human summary; stderr only.
    #[serde(skip)]
    pub summary: String,
}

impl RunReport {
    pub fn new(command: &'static str, path: String) -> RunReport {
        RunReport {
            command,
            version: env!("CARGO_PKG_VERSION"),
            instance: InstanceInfo { path, sha256: None },
            results: None,
            error: None,
            timings: Timings::default(),
            summary: String::new(),
        }
    }

    pub fn fail(&mut self, e: &rtjscc::Error) {
        self.error = Some(ErrorInfo::from(e));
    }

    pub fn summarize(&self) {
        match &self.error {
            Some(e) => eprintln!("{}: error: {}", self.command, e.message),
            None => eprintln!(
                "{}: {} ({:.1} ms)",
                self.command,
                self.summary,
                self.timings.load_ms + self.timings.run_ms
            ),
        }
    }
}
