//! Error and validation-report types shared across the crate.

use std::fmt;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by scenario handling, the mean-field recursion, transition
/// matrices, and the agent simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// The scenario file could not be parsed at all (syntax, unknown keys,
    /// wrong value shapes).
    #[error("parse error: {0}")]
    Parse(String),

    /// A scenario parsed but violates one or more structural invariants.
    #[error("invalid scenario: {0}")]
    InvalidScenario(ValidationReport),

    /// Inputs to an operation violate the invariants of their type
    /// (non-stochastic rows, asymmetric kernels, shape mismatches, ...).
    #[error("invalid inputs: {0}")]
    InvalidInputs(ValidationReport),

    /// The matching intensities create asymmetric matched mass, or integer
    /// pair targets cannot be accommodated by the unmatched pools.
    #[error("matching infeasible: {0}")]
    MatchingInfeasible(String),

    /// The initial population could not be rounded to integer counts that
    /// respect pair symmetry and diagonal parity.
    #[error("infeasible rounding: {0}")]
    InfeasibleRounding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error onto: 2 for validation
    /// failures, 3 for runtime infeasibility, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::InvalidScenario(_) | Error::InvalidInputs(_) => 2,
            Error::MatchingInfeasible(_) | Error::InfeasibleRounding(_) => 3,
            Error::Io(_) => 1,
        }
    }
}

/// Category of a single validation violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A mass or probability entry is negative.
    Negative,
    /// An entry lies outside [0, 1].
    OutOfRange,
    /// A distribution or kernel row does not sum to the required total.
    SumNotOne,
    /// A row-stochastic matrix row sums above 1 (negative leftover mass).
    RowSumExceedsOne,
    /// A pair-symmetric quantity differs from its mirror image.
    Asymmetric,
    /// A table has the wrong dimensions for the type space.
    Shape,
    /// A scenario-level configuration problem (labels, modes, coverage).
    Config,
    /// An entry is NaN or infinite.
    NotFinite,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ViolationKind::Negative => "negative",
            ViolationKind::OutOfRange => "out-of-range",
            ViolationKind::SumNotOne => "sum-not-one",
            ViolationKind::RowSumExceedsOne => "row-sum-exceeds-one",
            ViolationKind::Asymmetric => "asymmetric",
            ViolationKind::Shape => "shape",
            ViolationKind::Config => "config",
            ViolationKind::NotFinite => "not-finite",
        };
        f.write_str(name)
    }
}

/// One violated invariant, with a human-readable description.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.kind, self.message)
    }
}

/// Accumulated validation violations. Empty report means the checked object
/// satisfies every invariant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn has_kind(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    /// Turn the report into a hard error unless it is empty.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidInputs(self))
        }
    }

    /// Single-violation convenience constructor.
    pub fn single(kind: ViolationKind, message: impl Into<String>) -> Self {
        let mut report = Self::new();
        report.push(kind, message);
        report
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        let rendered: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&rendered.join("; "))
    }
}
