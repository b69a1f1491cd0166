//! Command-level orchestration behind the CLI: scenario loading with
//! overrides, the meanfield/transition/simulate/compare commands, and output
//! emission. Partial outputs are removed when a command fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::agentsim::{dump_population, run_simulation, SimulationTrajectory};
use crate::compare::{parallel_map_indexed, run_compare};
use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::export;
use crate::markov::{evolve, transition_matrices};
use crate::meanfield::iterate_meanfield;

/// CLI-level overrides applied after parsing a scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub periods: Option<usize>,
}

/// Output format for the compare command. The other commands always emit CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Parse and validate a scenario file, then apply overrides.
pub fn load_scenario(path: impl AsRef<Path>, overrides: &Overrides) -> Result<ScenarioConfig> {
    let mut scenario = ScenarioConfig::from_file(path)?;
    if let Some(seed) = overrides.seed {
        scenario = scenario.with_master_seed(seed);
    }
    if let Some(replications) = overrides.replications {
        scenario = scenario.with_replications(replications)?;
    }
    if let Some(periods) = overrides.periods {
        scenario = scenario.with_horizon(periods)?;
    }
    Ok(scenario)
}

/// Parse and validate a scenario file; the Err carries the violation report.
pub fn cmd_validate(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    ScenarioConfig::from_file(path)
}

/// Tracks files created by a command so they can be removed if the command
/// fails before committing.
struct OutputSet {
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(OutputSet {
            files: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<()> {
        self.files.push(path.clone());
        let mut file = fs::File::create(&path)?;
        file.write_all(contents)?;
        Ok(())
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.files {
                let _ = fs::remove_file(path);
            }
        }
    }
}

/// Run the mean-field recursion (environment path of replication 0) and
/// write `meanfield.csv` and `env_path.csv`.
pub fn cmd_meanfield(scenario: &ScenarioConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutputSet::new(out_dir)?;
    let env = scenario.environment();
    let env_path = env.realize_path(scenario.horizon(), scenario.master_seed(), 0);
    let trajectory = iterate_meanfield(scenario, &env_path)?;

    let mut buf = Vec::new();
    export::write_meanfield_csv(&mut buf, &trajectory, env)?;
    out.write(out_dir.join("meanfield.csv"), &buf)?;

    let mut buf = Vec::new();
    export::write_env_paths_csv(&mut buf, &[(0, env_path)], env)?;
    out.write(out_dir.join("env_path.csv"), &buf)?;

    Ok(out.commit())
}

/// Build the per-period transition matrices (environment path of
/// replication 0) and write `transitions.csv`, `gamma_z_residuals.csv`, and
/// `env_path.csv`.
pub fn cmd_transition(scenario: &ScenarioConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutputSet::new(out_dir)?;
    let env = scenario.environment();
    let env_path = env.realize_path(scenario.horizon(), scenario.master_seed(), 0);
    let trajectory = iterate_meanfield(scenario, &env_path)?;
    let matrices = transition_matrices(scenario, &trajectory)?;

    let mut residuals = Vec::with_capacity(matrices.len());
    for n in 1..=trajectory.horizon() {
        let evolved = evolve(trajectory.p_hat(n - 1), &matrices[n - 1])?;
        let linf = evolved
            .mass()
            .iter()
            .zip(trajectory.p_hat(n).mass())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residuals.push((n, env_path[n - 1], linf));
    }

    let mut buf = Vec::new();
    export::write_transitions_csv(&mut buf, &matrices)?;
    out.write(out_dir.join("transitions.csv"), &buf)?;

    let mut buf = Vec::new();
    export::write_residuals_csv(&mut buf, &residuals, env)?;
    out.write(out_dir.join("gamma_z_residuals.csv"), &buf)?;

    let mut buf = Vec::new();
    export::write_env_paths_csv(&mut buf, &[(0, env_path)], env)?;
    out.write(out_dir.join("env_path.csv"), &buf)?;

    Ok(out.commit())
}

/// Run the agent simulation for every replication and write
/// `snapshots.csv`, `env_paths.csv`, and one `population_r<N>.bin` dump per
/// replication.
pub fn cmd_simulate(scenario: &ScenarioConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = OutputSet::new(out_dir)?;
    let env = scenario.environment();

    type RunOutput = Result<(Vec<usize>, SimulationTrajectory, crate::agentsim::Population)>;
    let results: Vec<RunOutput> = parallel_map_indexed(scenario.replications(), |r| {
        let env_path = env.realize_path(scenario.horizon(), scenario.master_seed(), r as u64);
        let (trajectory, population) = run_simulation(scenario, &env_path, r as u64)?;
        Ok((env_path, trajectory, population))
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut paths = Vec::with_capacity(results.len());
    let mut populations = Vec::with_capacity(results.len());
    for (r, result) in results.into_iter().enumerate() {
        let (env_path, trajectory, population) = result?;
        paths.push((r, env_path));
        runs.push((r, trajectory));
        populations.push(population);
    }

    let mut buf = Vec::new();
    export::write_snapshots_csv(&mut buf, &runs, env)?;
    out.write(out_dir.join("snapshots.csv"), &buf)?;

    let mut buf = Vec::new();
    export::write_env_paths_csv(&mut buf, &paths, env)?;
    out.write(out_dir.join("env_paths.csv"), &buf)?;

    for (r, population) in populations.iter().enumerate() {
        let mut buf = Vec::new();
        dump_population(population, &mut buf)?;
        out.write(out_dir.join(format!("population_r{r}.bin")), &buf)?;
    }

    Ok(out.commit())
}

/// Run mean-field and simulation per replication over shared environment
/// paths and emit the comparison report. CSV mode writes
/// `compare_stages.csv`, `compare_residuals.csv`, `compare_summary.csv`, and
/// `env_paths.csv`; JSON mode writes `compare.json`.
pub fn cmd_compare(
    scenario: &ScenarioConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    let mut out = OutputSet::new(out_dir)?;
    let report = run_compare(scenario)?;
    let env = scenario.environment();

    match format {
        OutputFormat::Json => {
            let json = export::compare_report_json(&report, scenario);
            out.write(out_dir.join("compare.json"), json.as_bytes())?;
        }
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            export::write_compare_stages_csv(&mut buf, &report, env)?;
            out.write(out_dir.join("compare_stages.csv"), &buf)?;

            let mut buf = Vec::new();
            export::write_compare_residuals_csv(&mut buf, &report, env)?;
            out.write(out_dir.join("compare_residuals.csv"), &buf)?;

            let mut buf = Vec::new();
            export::write_compare_summary_csv(&mut buf, &report)?;
            out.write(out_dir.join("compare_summary.csv"), &buf)?;

            let paths: Vec<(usize, Vec<usize>)> = report
                .replications
                .iter()
                .map(|rep| (rep.replication, rep.env_path.clone()))
                .collect();
            let mut buf = Vec::new();
            export::write_env_paths_csv(&mut buf, &paths, env)?;
            out.write(out_dir.join("env_paths.csv"), &buf)?;
        }
    }

    Ok(out.commit())
}
