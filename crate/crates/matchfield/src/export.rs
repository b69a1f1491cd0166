//! CSV and JSON emission for trajectories, transition matrices, snapshots,
//! and comparison reports.
//!
//! All files are UTF-8 with LF line endings and `.` as the decimal
//! separator. Floats are written with Rust's shortest round-trip formatting,
//! so re-parsing an emitted file reproduces the in-memory values bit for bit.
//! Type indices are 1-based in files; the unmatched marker is the literal
//! `J`. Period 0 rows (the initial condition) carry an empty environment
//! state.

use std::io::{self, Write};

use crate::agentsim::{SimulationTrajectory, Stage};
use crate::compare::ComparisonReport;
use crate::config::{EnvironmentProcess, ScenarioConfig};
use crate::error::{Error, Result};
use crate::markov::TransitionMatrix;
use crate::meanfield::MeanfieldTrajectory;
use crate::types::{partner_label, ExtendedTypeDistribution, Partner};

fn write_distribution_rows<W: Write>(
    w: &mut W,
    prefix: &str,
    period: usize,
    env_state: &str,
    stage: Stage,
    dist: &ExtendedTypeDistribution,
) -> io::Result<()> {
    let space = dist.space();
    for (i, &mass) in dist.mass().iter().enumerate() {
        let ext = space.extended_type(i);
        writeln!(
            w,
            "{prefix}{period},{env_state},{},{},{},{mass}",
            stage.name(),
            ext.own + 1,
            partner_label(ext.partner),
        )?;
    }
    Ok(())
}

/// Mean-field trajectory: `period,env_state,stage,k,l,mass`.
pub fn write_meanfield_csv<W: Write>(
    w: &mut W,
    trajectory: &MeanfieldTrajectory,
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "period,env_state,stage,k,l,mass")?;
    write_distribution_rows(w, "", 0, "", Stage::Hat, &trajectory.p0)?;
    for (idx, period) in trajectory.periods.iter().enumerate() {
        let n = idx + 1;
        let label = env.label(period.env_state);
        write_distribution_rows(w, "", n, label, Stage::Check, &period.p_check)?;
        write_distribution_rows(w, "", n, label, Stage::Ccheck, &period.p_ccheck)?;
        write_distribution_rows(w, "", n, label, Stage::Hat, &period.p_hat)?;
    }
    Ok(())
}

/// Simulation snapshots: `replication,period,env_state,stage,k,l,mass`.
pub fn write_snapshots_csv<W: Write>(
    w: &mut W,
    runs: &[(usize, SimulationTrajectory)],
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "replication,period,env_state,stage,k,l,mass")?;
    for (replication, trajectory) in runs {
        let prefix = format!("{replication},");
        write_distribution_rows(w, &prefix, 0, "", Stage::Hat, &trajectory.initial)?;
        for (idx, period) in trajectory.periods.iter().enumerate() {
            let n = idx + 1;
            let label = env.label(period.env_state);
            write_distribution_rows(w, &prefix, n, label, Stage::Check, &period.check)?;
            write_distribution_rows(w, &prefix, n, label, Stage::Ccheck, &period.ccheck)?;
            write_distribution_rows(w, &prefix, n, label, Stage::Hat, &period.hat)?;
        }
    }
    Ok(())
}

/// Transition matrices: `period,src_k,src_l,dst_k,dst_l,probability`.
pub fn write_transitions_csv<W: Write>(
    w: &mut W,
    matrices: &[TransitionMatrix],
) -> io::Result<()> {
    writeln!(w, "period,src_k,src_l,dst_k,dst_l,probability")?;
    for z in matrices {
        let space = z.space();
        for src in 0..z.dim() {
            let source = space.extended_type(src);
            for dst in 0..z.dim() {
                let target = space.extended_type(dst);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    z.period(),
                    source.own + 1,
                    partner_label(source.partner),
                    target.own + 1,
                    partner_label(target.partner),
                    z.get(src, dst),
                )?;
            }
        }
    }
    Ok(())
}

/// Mean-field vs transition-matrix residuals: `period,env_state,gamma_z_linf`.
pub fn write_residuals_csv<W: Write>(
    w: &mut W,
    residuals: &[(usize, usize, f64)],
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "period,env_state,gamma_z_linf")?;
    for &(period, env_state, residual) in residuals {
        writeln!(w, "{period},{},{residual}", env.label(env_state))?;
    }
    Ok(())
}

/// Realized environment paths: `replication,period,state`.
pub fn write_env_paths_csv<W: Write>(
    w: &mut W,
    paths: &[(usize, Vec<usize>)],
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "replication,period,state")?;
    for (replication, path) in paths {
        for (idx, &state) in path.iter().enumerate() {
            writeln!(w, "{replication},{},{}", idx + 1, env.label(state))?;
        }
    }
    Ok(())
}

/// Per-stage comparison rows:
/// `replication,period,env_state,stage,tv_distance,linf_distance`.
pub fn write_compare_stages_csv<W: Write>(
    w: &mut W,
    report: &ComparisonReport,
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "replication,period,env_state,stage,tv_distance,linf_distance")?;
    for rep in &report.replications {
        for row in &rep.rows {
            let label = if row.period == 0 {
                ""
            } else {
                env.label(rep.env_path[row.period - 1])
            };
            writeln!(
                w,
                "{},{},{label},{},{},{}",
                rep.replication,
                row.period,
                row.stage.name(),
                row.tv_distance,
                row.linf_distance,
            )?;
        }
    }
    Ok(())
}

/// Per-replication residual rows: `replication,period,env_state,gamma_z_linf`.
pub fn write_compare_residuals_csv<W: Write>(
    w: &mut W,
    report: &ComparisonReport,
    env: &EnvironmentProcess,
) -> io::Result<()> {
    writeln!(w, "replication,period,env_state,gamma_z_linf")?;
    for rep in &report.replications {
        for (idx, residual) in rep.gamma_z_residuals.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{residual}",
                rep.replication,
                idx + 1,
                env.label(rep.env_path[idx]),
            )?;
        }
    }
    Ok(())
}

/// Cross-replication TV quantiles: `period,stage,tv_min,tv_median,tv_max`.
pub fn write_compare_summary_csv<W: Write>(
    w: &mut W,
    report: &ComparisonReport,
) -> io::Result<()> {
    writeln!(w, "period,stage,tv_min,tv_median,tv_max")?;
    for row in &report.summary {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.period,
            row.stage.name(),
            row.tv_min,
            row.tv_median,
            row.tv_max,
        )?;
    }
    Ok(())
}

/// JSON form of the comparison report, with environment paths rendered as
/// state labels.
pub fn compare_report_json(report: &ComparisonReport, scenario: &ScenarioConfig) -> String {
    let env = scenario.environment();
    let value = serde_json::json!({
        "replications": report.replications.iter().map(|rep| {
            serde_json::json!({
                "replication": rep.replication,
                "env_path": rep.env_path.iter().map(|&s| env.label(s)).collect::<Vec<_>>(),
                "rows": rep.rows,
                "gamma_z_residuals": rep.gamma_z_residuals,
            })
        }).collect::<Vec<_>>(),
        "summary": report.summary,
    });
    serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
}

/// A parsed row of a distribution CSV (mean-field or snapshot schema).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub replication: Option<usize>,
    pub period: usize,
    pub env_state: String,
    pub stage: Stage,
    pub own: usize,
    pub partner: Partner,
    pub mass: f64,
}

/// Parse a distribution CSV emitted by [`write_meanfield_csv`]
/// (`with_replication = false`) or [`write_snapshots_csv`]
/// (`with_replication = true`).
pub fn parse_distribution_csv(text: &str, with_replication: bool) -> Result<Vec<DistributionRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".to_string()))?;
    let expected_header = if with_replication {
        "replication,period,env_state,stage,k,l,mass"
    } else {
        "period,env_state,stage,k,l,mass"
    };
    if header != expected_header {
        return Err(Error::Parse(format!("unexpected header: {header}")));
    }
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if with_replication { 7 } else { 6 };
        if fields.len() != expected {
            return Err(Error::Parse(format!(
                "line {}: expected {expected} fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let mut at = 0;
        let mut next = || {
            let f = fields[at];
            at += 1;
            f
        };
        let replication = if with_replication {
            Some(parse_field(next(), lineno, "replication")?)
        } else {
            None
        };
        let period = parse_field(next(), lineno, "period")?;
        let env_state = next().to_string();
        let stage_name = next();
        let stage = Stage::from_name(stage_name)
            .ok_or_else(|| Error::Parse(format!("line {}: bad stage {stage_name}", lineno + 2)))?;
        let own: usize = parse_field(next(), lineno, "k")?;
        let partner_field = next();
        let partner = if partner_field == "J" {
            Partner::Unmatched
        } else {
            Partner::Matched(parse_field::<usize>(partner_field, lineno, "l")? - 1)
        };
        let mass: f64 = parse_field(next(), lineno, "mass")?;
        rows.push(DistributionRow {
            replication,
            period,
            env_state,
            stage,
            own: own - 1,
            partner,
            mass,
        });
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(field: &str, lineno: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("line {}: bad {what} value {field}", lineno + 2)))
}
