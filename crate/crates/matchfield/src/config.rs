//! Scenario files, environment processes, and intensity specifications.
//!
//! A scenario is a TOML document with top-level keys `types`, `horizon`,
//! `population`, `master_seed`, `replications`, `p0`, `environment`, and
//! `intensities`. The parser rejects unknown keys. See the repository README
//! for the full schema.

use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport, ViolationKind};
use crate::rng::{cumulative, sample_from_cumulative, substream, StreamKind};
use crate::types::{
    validate_distribution, validate_inputs, ExtendedTypeDistribution, InputMatrices, PairKernel,
    SideKernel, SquareMatrix, TypeSpace, ALGEBRAIC_TOL,
};

use rand::Rng;

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

/// Partner column of a `p0` entry: a 1-based type index or the string "J".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartnerLabel {
    Type(usize),
    J,
}

impl Serialize for PartnerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PartnerLabel::Type(t) => serializer.serialize_u64(*t as u64),
            PartnerLabel::J => serializer.serialize_str("J"),
        }
    }
}

impl<'de> Deserialize<'de> for PartnerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct LabelVisitor;
        impl Visitor<'_> for LabelVisitor {
            type Value = PartnerLabel;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a type index or the string \"J\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<PartnerLabel, E> {
                Ok(PartnerLabel::Type(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<PartnerLabel, E> {
                if v < 0 {
                    return Err(E::custom("type index must be positive"));
                }
                Ok(PartnerLabel::Type(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<PartnerLabel, E> {
                if v == "J" {
                    Ok(PartnerLabel::J)
                } else {
                    Err(E::custom(format!("expected \"J\" or a type index, got \"{v}\"")))
                }
            }
        }
        deserializer.deserialize_any(LabelVisitor)
    }
}

/// One `p0` entry: `[k, l-or-"J", mass]` with 1-based type indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MassEntry {
    pub own: usize,
    pub partner: PartnerLabel,
    pub mass: f64,
}

impl Serialize for MassEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(3))?;
        seq.serialize_element(&(self.own as u64))?;
        seq.serialize_element(&self.partner)?;
        seq.serialize_element(&self.mass)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for MassEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntryVisitor;
        impl<'de> Visitor<'de> for EntryVisitor {
            type Value = MassEntry;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [k, l-or-\"J\", mass] triple")
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<MassEntry, A::Error> {
                let own: u64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let partner: PartnerLabel = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let mass: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(2, &self))?;
                if seq.next_element::<toml::Value>()?.is_some() {
                    return Err(de::Error::custom("p0 entry has more than three elements"));
                }
                Ok(MassEntry {
                    own: own as usize,
                    partner,
                    mass,
                })
            }
        }
        deserializer.deserialize_seq(EntryVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub states: Vec<String>,
    pub transition: Vec<Vec<f64>>,
    pub initial: String,
    pub path_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityTableFile {
    pub state: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    pub eta: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    pub xi: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<Vec<f64>>>>,
    pub varsigma: Vec<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensitiesFile {
    pub mode: String,
    pub tables: Vec<IntensityTableFile>,
}

/// Scenario file as parsed, before semantic validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub types: usize,
    pub horizon: usize,
    pub population: usize,
    pub master_seed: u64,
    pub replications: usize,
    pub p0: Vec<MassEntry>,
    pub environment: EnvironmentFile,
    pub intensities: IntensitiesFile,
}

// ---------------------------------------------------------------------------
// Environment process
// ---------------------------------------------------------------------------

/// How the per-period environment states are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum PathMode {
    /// Sample a path per replication from the transition kernel, starting in
    /// the initial state at period 1.
    Sampled,
    /// Use the given path (state indices, one per period) for every
    /// replication.
    Fixed(Vec<usize>),
}

/// Finite-state environment process conditioning all intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentProcess {
    labels: Vec<String>,
    transition: SquareMatrix,
    initial: usize,
    path_mode: PathMode,
}

impl EnvironmentProcess {
    pub fn new(
        labels: Vec<String>,
        transition: SquareMatrix,
        initial: usize,
        path_mode: PathMode,
    ) -> Result<Self> {
        let process = EnvironmentProcess {
            labels,
            transition,
            initial,
            path_mode,
        };
        let report = process.validate(usize::MAX);
        if !report.is_valid() {
            return Err(Error::InvalidScenario(report));
        }
        Ok(process)
    }

    /// A single-state environment with a trivial kernel.
    pub fn single_state() -> Self {
        EnvironmentProcess {
            labels: vec!["base".to_string()],
            transition: SquareMatrix::identity(1),
            initial: 0,
            path_mode: PathMode::Sampled,
        }
    }

    fn validate(&self, horizon: usize) -> ValidationReport {
        let mut report = ValidationReport::new();
        let n = self.labels.len();
        if n == 0 {
            report.push(ViolationKind::Config, "environment must have at least one state");
            return report;
        }
        for (i, label) in self.labels.iter().enumerate() {
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                report.push(
                    ViolationKind::Config,
                    format!("state label {} (\"{label}\") must be nonempty [A-Za-z0-9_-]", i + 1),
                );
            }
            if self.labels[..i].contains(label) {
                report.push(ViolationKind::Config, format!("duplicate state label \"{label}\""));
            }
        }
        if self.transition.dim() != n {
            report.push(
                ViolationKind::Shape,
                format!("environment transition must be {n}x{n}"),
            );
            return report;
        }
        for i in 0..n {
            let row = self.transition.row(i);
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    report.push(
                        ViolationKind::Negative,
                        format!("environment transition[{},{}] = {v}", i + 1, j + 1),
                    );
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ALGEBRAIC_TOL {
                report.push(
                    ViolationKind::SumNotOne,
                    format!("environment transition row {} sums to {sum}", i + 1),
                );
            }
        }
        if self.initial >= n {
            report.push(ViolationKind::Config, "environment initial state out of range");
        }
        if let PathMode::Fixed(path) = &self.path_mode {
            if horizon != usize::MAX && path.len() != horizon {
                report.push(
                    ViolationKind::Config,
                    format!(
                        "fixed environment path has {} entries, horizon is {horizon}",
                        path.len()
                    ),
                );
            }
            for &s in path {
                if s >= n {
                    report.push(ViolationKind::Config, "fixed environment path state out of range");
                }
            }
        }
        report
    }

    pub fn states(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transition(&self) -> &SquareMatrix {
        &self.transition
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn path_mode(&self) -> &PathMode {
        &self.path_mode
    }

    /// Realize the environment path for one replication: `horizon` state
    /// indices, one per period. Sampled paths start in the initial state at
    /// period 1 and then step through the transition kernel; fixed paths are
    /// returned as given.
    pub fn realize_path(&self, horizon: usize, master_seed: u64, replication: u64) -> Vec<usize> {
        match &self.path_mode {
            PathMode::Fixed(path) => path[..horizon].to_vec(),
            PathMode::Sampled => {
                let mut rng = substream(master_seed, replication, 0, StreamKind::EnvironmentPath);
                let cumulative_rows: Vec<Vec<f64>> = (0..self.states())
                    .map(|s| cumulative(self.transition.row(s)))
                    .collect();
                let mut path = Vec::with_capacity(horizon);
                let mut current = self.initial;
                for period in 0..horizon {
                    if period > 0 {
                        let u: f64 = rng.gen();
                        current = sample_from_cumulative(&cumulative_rows[current], u);
                    }
                    path.push(current);
                }
                path
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Intensity specification
// ---------------------------------------------------------------------------

/// Base tables plus the proportional-search rule
/// `theta[k][l](p) = min(c[k][l] · p(l,J), cap[k][l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    pub eta: SquareMatrix,
    pub xi: SquareMatrix,
    pub sigma: PairKernel,
    pub varsigma: SideKernel,
    pub coefficient: SquareMatrix,
    pub cap: SquareMatrix,
}

/// Per-period intensity tables as a function of (environment state, period,
/// distribution).
#[derive(Debug, Clone, PartialEq)]
pub enum IntensitySpec {
    /// One fixed table per environment state.
    Constant { tables: Vec<InputMatrices> },
    /// One table per (environment state, period); indexed `[state][period-1]`.
    Schedule { tables: Vec<Vec<InputMatrices>> },
    /// Per-state base tables with distribution-dependent matching.
    Feedback { tables: Vec<FeedbackTable> },
}

impl IntensitySpec {
    pub fn mode_name(&self) -> &'static str {
        match self {
            IntensitySpec::Constant { .. } => "constant",
            IntensitySpec::Schedule { .. } => "schedule",
            IntensitySpec::Feedback { .. } => "feedback",
        }
    }

    fn states(&self) -> usize {
        match self {
            IntensitySpec::Constant { tables } => tables.len(),
            IntensitySpec::Schedule { tables } => tables.len(),
            IntensitySpec::Feedback { tables } => tables.len(),
        }
    }
}

/// Evaluate the intensity specification at one (environment state, period,
/// distribution) point. Pure: identical arguments produce identical tables.
/// The result is validated against the InputMatrices invariants.
pub fn evaluate_intensities(
    spec: &IntensitySpec,
    env_state: usize,
    period: usize,
    p: &ExtendedTypeDistribution,
) -> Result<InputMatrices> {
    if env_state >= spec.states() {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Config,
            format!("environment state {env_state} out of range"),
        )));
    }
    if period == 0 {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Config,
            "periods are 1-based",
        )));
    }
    let m = match spec {
        IntensitySpec::Constant { tables } => tables[env_state].clone(),
        IntensitySpec::Schedule { tables } => {
            let per_state = &tables[env_state];
            if period > per_state.len() {
                return Err(Error::InvalidInputs(ValidationReport::single(
                    ViolationKind::Config,
                    format!(
                        "schedule covers {} periods, period {period} requested",
                        per_state.len()
                    ),
                )));
            }
            per_state[period - 1].clone()
        }
        IntensitySpec::Feedback { tables } => {
            let t = &tables[env_state];
            let k = t.eta.dim();
            let mut theta = SquareMatrix::zeros(k);
            for row in 0..k {
                for col in 0..k {
                    let raw = t.coefficient.get(row, col) * p.unmatched(col);
                    theta.set(row, col, raw.min(t.cap.get(row, col)));
                }
            }
            InputMatrices::new_unchecked(
                p.space(),
                t.eta.clone(),
                theta,
                t.xi.clone(),
                t.sigma.clone(),
                t.varsigma.clone(),
            )?
        }
    };
    let report = validate_inputs(&m, ALGEBRAIC_TOL);
    if !report.is_valid() {
        return Err(Error::InvalidInputs(report));
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// A fully validated scenario: type space, horizon, population size, seeds,
/// deterministic initial distribution, environment process, and intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    space: TypeSpace,
    horizon: usize,
    population: usize,
    master_seed: u64,
    replications: usize,
    p0: ExtendedTypeDistribution,
    environment: EnvironmentProcess,
    intensities: IntensitySpec,
}

impl ScenarioConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        space: TypeSpace,
        horizon: usize,
        population: usize,
        master_seed: u64,
        replications: usize,
        p0: ExtendedTypeDistribution,
        environment: EnvironmentProcess,
        intensities: IntensitySpec,
    ) -> Result<Self> {
        let mut report = ValidationReport::new();
        if horizon == 0 {
            report.push(ViolationKind::Config, "horizon must be at least 1");
        }
        if population < 2 {
            report.push(ViolationKind::Config, "population must be at least 2");
        }
        if replications == 0 {
            report.push(ViolationKind::Config, "replications must be at least 1");
        }
        if p0.space() != space {
            report.push(ViolationKind::Shape, "p0 does not match the type space");
        }
        report.merge(p0.validate(ALGEBRAIC_TOL));
        report.merge(environment.validate(horizon));
        if intensities.states() != environment.states() {
            report.push(
                ViolationKind::Config,
                format!(
                    "intensities cover {} environment states, environment has {}",
                    intensities.states(),
                    environment.states()
                ),
            );
        }
        if let IntensitySpec::Schedule { tables } = &intensities {
            for (s, per_state) in tables.iter().enumerate() {
                if per_state.len() < horizon {
                    report.push(
                        ViolationKind::Config,
                        format!(
                            "schedule for state {} covers {} periods, horizon is {horizon}",
                            s + 1,
                            per_state.len()
                        ),
                    );
                }
            }
        }
        if !report.is_valid() {
            return Err(Error::InvalidScenario(report));
        }
        Ok(ScenarioConfig {
            space,
            horizon,
            population,
            master_seed,
            replications,
            p0,
            environment,
            intensities,
        })
    }

    pub fn space(&self) -> TypeSpace {
        self.space
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn p0(&self) -> &ExtendedTypeDistribution {
        &self.p0
    }

    pub fn environment(&self) -> &EnvironmentProcess {
        &self.environment
    }

    pub fn intensities(&self) -> &IntensitySpec {
        &self.intensities
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Result<Self> {
        if replications == 0 {
            return Err(Error::InvalidScenario(ValidationReport::single(
                ViolationKind::Config,
                "replications must be at least 1",
            )));
        }
        self.replications = replications;
        Ok(self)
    }

    pub fn with_population(mut self, population: usize) -> Result<Self> {
        if population < 2 {
            return Err(Error::InvalidScenario(ValidationReport::single(
                ViolationKind::Config,
                "population must be at least 2",
            )));
        }
        self.population = population;
        Ok(self)
    }

    /// Override the horizon. Fixed environment paths and schedules must
    /// cover at least the new horizon.
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidScenario(ValidationReport::single(
                ViolationKind::Config,
                "horizon must be at least 1",
            )));
        }
        if let PathMode::Fixed(path) = self.environment.path_mode() {
            if path.len() < horizon {
                return Err(Error::InvalidScenario(ValidationReport::single(
                    ViolationKind::Config,
                    format!(
                        "fixed environment path has {} entries, cannot cover horizon {horizon}",
                        path.len()
                    ),
                )));
            }
        }
        if let IntensitySpec::Schedule { tables } = &self.intensities {
            for (s, per_state) in tables.iter().enumerate() {
                if per_state.len() < horizon {
                    return Err(Error::InvalidScenario(ValidationReport::single(
                        ViolationKind::Config,
                        format!(
                            "schedule for state {} covers {} periods, cannot cover horizon {horizon}",
                            s + 1,
                            per_state.len()
                        ),
                    )));
                }
            }
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_config()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(&self.to_file()).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Rebuild the file representation (inverse of `ScenarioFile::into_config`
    /// up to omission of zero-mass p0 cells).
    pub fn to_file(&self) -> ScenarioFile {
        let space = self.space;
        let mut p0 = Vec::new();
        for (i, &mass) in self.p0.mass().iter().enumerate() {
            if mass != 0.0 {
                let ext = space.extended_type(i);
                let partner = match ext.partner {
                    crate::types::Partner::Matched(l) => PartnerLabel::Type(l + 1),
                    crate::types::Partner::Unmatched => PartnerLabel::J,
                };
                p0.push(MassEntry {
                    own: ext.own + 1,
                    partner,
                    mass,
                });
            }
        }
        let environment = EnvironmentFile {
            states: self.environment.labels().to_vec(),
            transition: self.environment.transition().to_rows(),
            initial: self.environment.label(self.environment.initial()).to_string(),
            path_mode: match self.environment.path_mode() {
                PathMode::Sampled => "sampled".to_string(),
                PathMode::Fixed(_) => "fixed".to_string(),
            },
            path: match self.environment.path_mode() {
                PathMode::Sampled => None,
                PathMode::Fixed(path) => Some(
                    path.iter()
                        .map(|&s| self.environment.label(s).to_string())
                        .collect(),
                ),
            },
        };
        let table_to_file = |state: &str, period: Option<usize>, m: &InputMatrices| {
            IntensityTableFile {
                state: state.to_string(),
                period,
                eta: m.eta().to_rows(),
                theta: Some(m.theta().to_rows()),
                xi: m.xi().to_rows(),
                sigma: m.sigma().to_nested(),
                varsigma: m.varsigma().to_nested(),
                c: None,
                cap: None,
            }
        };
        let intensities = match &self.intensities {
            IntensitySpec::Constant { tables } => IntensitiesFile {
                mode: "constant".to_string(),
                tables: tables
                    .iter()
                    .enumerate()
                    .map(|(s, m)| table_to_file(self.environment.label(s), None, m))
                    .collect(),
            },
            IntensitySpec::Schedule { tables } => IntensitiesFile {
                mode: "schedule".to_string(),
                tables: tables
                    .iter()
                    .enumerate()
                    .flat_map(|(s, per_state)| {
                        per_state.iter().enumerate().map(move |(n, m)| (s, n + 1, m))
                    })
                    .map(|(s, n, m)| table_to_file(self.environment.label(s), Some(n), m))
                    .collect(),
            },
            IntensitySpec::Feedback { tables } => IntensitiesFile {
                mode: "feedback".to_string(),
                tables: tables
                    .iter()
                    .enumerate()
                    .map(|(s, t)| IntensityTableFile {
                        state: self.environment.label(s).to_string(),
                        period: None,
                        eta: t.eta.to_rows(),
                        theta: None,
                        xi: t.xi.to_rows(),
                        sigma: t.sigma.to_nested(),
                        varsigma: t.varsigma.to_nested(),
                        c: Some(t.coefficient.to_rows()),
                        cap: Some(t.cap.to_rows()),
                    })
                    .collect(),
            },
        };
        ScenarioFile {
            types: space.types(),
            horizon: self.horizon,
            population: self.population,
            master_seed: self.master_seed,
            replications: self.replications,
            p0,
            environment,
            intensities,
        }
    }
}

impl ScenarioFile {
    /// Semantic validation: convert the parsed file into a ScenarioConfig,
    /// accumulating every violation before failing.
    pub fn into_config(self) -> Result<ScenarioConfig> {
        let mut report = ValidationReport::new();

        if self.types == 0 {
            report.push(ViolationKind::Config, "types must be at least 1");
            return Err(Error::InvalidScenario(report));
        }
        let space = TypeSpace::new(self.types)?;
        let k = space.types();

        // p0 entries -> mass vector.
        let mut mass = vec![0.0; space.extended_len()];
        let mut seen = vec![false; space.extended_len()];
        for entry in &self.p0 {
            if entry.own == 0 || entry.own > k {
                report.push(
                    ViolationKind::Config,
                    format!("p0 type index {} out of range 1..={k}", entry.own),
                );
                continue;
            }
            let idx = match entry.partner {
                PartnerLabel::J => space.unmatched_index(entry.own - 1),
                PartnerLabel::Type(l) => {
                    if l == 0 || l > k {
                        report.push(
                            ViolationKind::Config,
                            format!("p0 partner index {l} out of range 1..={k}"),
                        );
                        continue;
                    }
                    space.matched_index(entry.own - 1, l - 1)
                }
            };
            if seen[idx] {
                report.push(
                    ViolationKind::Config,
                    format!("duplicate p0 entry for cell ({}, {:?})", entry.own, entry.partner),
                );
            }
            seen[idx] = true;
            mass[idx] = entry.mass;
        }
        report.merge(validate_distribution(space, &mass, ALGEBRAIC_TOL));

        // Environment.
        let env = self.environment;
        let transition = match SquareMatrix::from_rows(&env.transition) {
            Ok(m) if m.dim() == env.states.len() => m,
            Ok(m) => {
                report.push(
                    ViolationKind::Shape,
                    format!(
                        "environment transition is {}x{}, expected {} states",
                        m.dim(),
                        m.dim(),
                        env.states.len()
                    ),
                );
                SquareMatrix::identity(env.states.len().max(1))
            }
            Err(_) => {
                report.push(ViolationKind::Shape, "environment transition must be square");
                SquareMatrix::identity(env.states.len().max(1))
            }
        };
        let state_index = |label: &str| env.states.iter().position(|s| s == label);
        let initial = match state_index(&env.initial) {
            Some(i) => i,
            None => {
                report.push(
                    ViolationKind::Config,
                    format!("environment initial state \"{}\" is not listed", env.initial),
                );
                0
            }
        };
        let path_mode = match env.path_mode.as_str() {
            "sampled" => {
                if env.path.is_some() {
                    report.push(
                        ViolationKind::Config,
                        "environment path is only allowed with path_mode = \"fixed\"",
                    );
                }
                PathMode::Sampled
            }
            "fixed" => match &env.path {
                None => {
                    report.push(
                        ViolationKind::Config,
                        "path_mode = \"fixed\" requires an environment path",
                    );
                    PathMode::Sampled
                }
                Some(labels) => {
                    let mut path = Vec::with_capacity(labels.len());
                    for label in labels {
                        match state_index(label) {
                            Some(i) => path.push(i),
                            None => {
                                report.push(
                                    ViolationKind::Config,
                                    format!("environment path state \"{label}\" is not listed"),
                                );
                            }
                        }
                    }
                    PathMode::Fixed(path)
                }
            },
            other => {
                report.push(
                    ViolationKind::Config,
                    format!("path_mode must be \"sampled\" or \"fixed\", got \"{other}\""),
                );
                PathMode::Sampled
            }
        };
        let environment = EnvironmentProcess {
            labels: env.states.clone(),
            transition,
            initial,
            path_mode,
        };

        // Intensities.
        let intensities = build_intensities(
            &self.intensities,
            space,
            &env.states,
            self.horizon,
            &mut report,
        );

        if !report.is_valid() {
            return Err(Error::InvalidScenario(report));
        }
        let p0 = ExtendedTypeDistribution::from_mass_unchecked(space, mass);
        ScenarioConfig::new(
            space,
            self.horizon,
            self.population,
            self.master_seed,
            self.replications,
            p0,
            environment,
            intensities.expect("intensities present when report is clean"),
        )
    }
}

fn parse_square(
    rows: &[Vec<f64>],
    k: usize,
    what: &str,
    report: &mut ValidationReport,
) -> SquareMatrix {
    match SquareMatrix::from_rows(rows) {
        Ok(m) if m.dim() == k => m,
        _ => {
            report.push(ViolationKind::Shape, format!("{what} must be a {k}x{k} matrix"));
            SquareMatrix::zeros(k)
        }
    }
}

fn build_intensities(
    file: &IntensitiesFile,
    space: TypeSpace,
    states: &[String],
    horizon: usize,
    report: &mut ValidationReport,
) -> Option<IntensitySpec> {
    let k = space.types();
    let state_index = |label: &str| states.iter().position(|s| s == label);

    struct ParsedTable {
        state: usize,
        period: Option<usize>,
        eta: SquareMatrix,
        theta: Option<SquareMatrix>,
        xi: SquareMatrix,
        sigma: PairKernel,
        varsigma: SideKernel,
        coefficient: Option<SquareMatrix>,
        cap: Option<SquareMatrix>,
    }

    let mut parsed = Vec::new();
    for table in &file.tables {
        let Some(state) = state_index(&table.state) else {
            report.push(
                ViolationKind::Config,
                format!("intensity table references unknown state \"{}\"", table.state),
            );
            continue;
        };
        let eta = parse_square(&table.eta, k, "eta", report);
        let xi = parse_square(&table.xi, k, "xi", report);
        let theta = table.theta.as_ref().map(|t| parse_square(t, k, "theta", report));
        let coefficient = table.c.as_ref().map(|t| parse_square(t, k, "c", report));
        let cap = table.cap.as_ref().map(|t| parse_square(t, k, "cap", report));
        let sigma = match PairKernel::from_nested(&table.sigma) {
            Ok(s) if s.types() == k => s,
            _ => {
                report.push(
                    ViolationKind::Shape,
                    format!("sigma must be a KxKxKxK table with K={k}"),
                );
                PairKernel::keep_types(k)
            }
        };
        let varsigma = match SideKernel::from_nested(&table.varsigma) {
            Ok(s) if s.types() == k => s,
            _ => {
                report.push(
                    ViolationKind::Shape,
                    format!("varsigma must be a KxKxK table with K={k}"),
                );
                SideKernel::keep_types(k)
            }
        };
        parsed.push(ParsedTable {
            state,
            period: table.period,
            eta,
            theta,
            xi,
            sigma,
            varsigma,
            coefficient,
            cap,
        });
    }

    let mode = file.mode.as_str();
    if !matches!(mode, "constant" | "schedule" | "feedback") {
        report.push(
            ViolationKind::Config,
            format!("intensities mode must be constant, schedule, or feedback, got \"{mode}\""),
        );
        return None;
    }

    // Mode-specific key checks.
    for t in &parsed {
        let state = &states[t.state];
        if mode == "feedback" {
            if t.theta.is_some() {
                report.push(
                    ViolationKind::Config,
                    format!("feedback table for state \"{state}\" must not set theta"),
                );
            }
            if t.coefficient.is_none() || t.cap.is_none() {
                report.push(
                    ViolationKind::Config,
                    format!("feedback table for state \"{state}\" requires c and cap"),
                );
            }
        } else {
            if t.theta.is_none() {
                report.push(
                    ViolationKind::Config,
                    format!("{mode} table for state \"{state}\" requires theta"),
                );
            }
            if t.coefficient.is_some() || t.cap.is_some() {
                report.push(
                    ViolationKind::Config,
                    format!("c/cap are only allowed in feedback mode (state \"{state}\")"),
                );
            }
        }
        if mode == "schedule" {
            if t.period.is_none() {
                report.push(
                    ViolationKind::Config,
                    format!("schedule table for state \"{state}\" requires a period"),
                );
            }
        } else if t.period.is_some() {
            report.push(
                ViolationKind::Config,
                format!("period is only allowed in schedule mode (state \"{state}\")"),
            );
        }
    }
    if !report.is_valid() {
        return None;
    }

    let validate_table = |m: &InputMatrices, context: String, report: &mut ValidationReport| {
        let table_report = validate_inputs(m, ALGEBRAIC_TOL);
        for v in table_report.violations() {
            report.push(v.kind, format!("{context}: {}", v.message));
        }
    };

    match mode {
        "constant" => {
            let mut tables: Vec<Option<InputMatrices>> = vec![None; states.len()];
            for t in parsed {
                let m = InputMatrices::new_unchecked(
                    space,
                    t.eta,
                    t.theta.expect("checked above"),
                    t.xi,
                    t.sigma,
                    t.varsigma,
                )
                .expect("shapes checked");
                validate_table(&m, format!("state \"{}\"", states[t.state]), report);
                if tables[t.state].replace(m).is_some() {
                    report.push(
                        ViolationKind::Config,
                        format!("duplicate intensity table for state \"{}\"", states[t.state]),
                    );
                }
            }
            for (s, t) in tables.iter().enumerate() {
                if t.is_none() {
                    report.push(
                        ViolationKind::Config,
                        format!("missing intensity table for state \"{}\"", states[s]),
                    );
                }
            }
            if !report.is_valid() {
                return None;
            }
            Some(IntensitySpec::Constant {
                tables: tables.into_iter().map(Option::unwrap).collect(),
            })
        }
        "schedule" => {
            let mut tables: Vec<Vec<Option<InputMatrices>>> =
                vec![vec![None; horizon]; states.len()];
            for t in parsed {
                let period = t.period.expect("checked above");
                if period == 0 || period > horizon {
                    report.push(
                        ViolationKind::Config,
                        format!("schedule period {period} out of range 1..={horizon}"),
                    );
                    continue;
                }
                let m = InputMatrices::new_unchecked(
                    space,
                    t.eta,
                    t.theta.expect("checked above"),
                    t.xi,
                    t.sigma,
                    t.varsigma,
                )
                .expect("shapes checked");
                validate_table(
                    &m,
                    format!("state \"{}\" period {period}", states[t.state]),
                    report,
                );
                if tables[t.state][period - 1].replace(m).is_some() {
                    report.push(
                        ViolationKind::Config,
                        format!(
                            "duplicate intensity table for state \"{}\" period {period}",
                            states[t.state]
                        ),
                    );
                }
            }
            for (s, per_state) in tables.iter().enumerate() {
                for (n, t) in per_state.iter().enumerate() {
                    if t.is_none() {
                        report.push(
                            ViolationKind::Config,
                            format!(
                                "missing intensity table for state \"{}\" period {}",
                                states[s],
                                n + 1
                            ),
                        );
                    }
                }
            }
            if !report.is_valid() {
                return None;
            }
            Some(IntensitySpec::Schedule {
                tables: tables
                    .into_iter()
                    .map(|per_state| per_state.into_iter().map(Option::unwrap).collect())
                    .collect(),
            })
        }
        "feedback" => {
            let mut tables: Vec<Option<FeedbackTable>> = vec![None; states.len()];
            for t in parsed {
                let coefficient = t.coefficient.expect("checked above");
                let cap = t.cap.expect("checked above");
                for i in 0..k {
                    for j in 0..k {
                        let c = coefficient.get(i, j);
                        if !c.is_finite() || c < 0.0 {
                            report.push(
                                ViolationKind::Negative,
                                format!("c[{},{}] = {c}", i + 1, j + 1),
                            );
                        }
                        let cp = cap.get(i, j);
                        if !cp.is_finite() || !(0.0..=1.0).contains(&cp) {
                            report.push(
                                ViolationKind::OutOfRange,
                                format!("cap[{},{}] = {cp}", i + 1, j + 1),
                            );
                        }
                    }
                }
                // Base tables validated with theta = 0; theta itself is
                // validated at every evaluation.
                let probe = InputMatrices::new_unchecked(
                    space,
                    t.eta.clone(),
                    SquareMatrix::zeros(k),
                    t.xi.clone(),
                    t.sigma.clone(),
                    t.varsigma.clone(),
                )
                .expect("shapes checked");
                validate_table(&probe, format!("state \"{}\"", states[t.state]), report);
                let table = FeedbackTable {
                    eta: t.eta,
                    xi: t.xi,
                    sigma: t.sigma,
                    varsigma: t.varsigma,
                    coefficient,
                    cap,
                };
                if tables[t.state].replace(table).is_some() {
                    report.push(
                        ViolationKind::Config,
                        format!("duplicate intensity table for state \"{}\"", states[t.state]),
                    );
                }
            }
            for (s, t) in tables.iter().enumerate() {
                if t.is_none() {
                    report.push(
                        ViolationKind::Config,
                        format!("missing intensity table for state \"{}\"", states[s]),
                    );
                }
            }
            if !report.is_valid() {
                return None;
            }
            Some(IntensitySpec::Feedback {
                tables: tables.into_iter().map(Option::unwrap).collect(),
            })
        }
        _ => unreachable!(),
    }
}
