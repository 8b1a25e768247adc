//! Experiment orchestration: reads a config, runs one pipeline and writes
//! CSV outputs plus a manifest.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{build_region, CapacityRegion, Face, GeometryError};
use crate::large_deviations::{optimize_jstar, LdError, OptimalMode};
use crate::rational::format_rational;
use crate::schedulers::SchedulerError;
use crate::simulator::{
    decay_slope, estimate_overflow, estimates_csv, simulate, stability_check, trace_csv, DecayFit,
    EstimationBudget, EstimationMethod, OverflowEstimate, SimError, TiltPlan,
};

pub use config::{
    parse_config, parse_config_with, AuditSettings, ConfigError, ConfigIssue, DecaySettings,
    DriftSettings, ExperimentConfig, ExperimentKind, MethodKind, NamedScheduler, Number, Overrides,
    PartitionSettings, RawConfig, SimulateSettings, DEFAULT_REPLICATIONS, DEFAULT_SEED,
};

pub const TOOL_NAME: &str = "oppsched";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Simulation {
        context: String,
        #[source]
        source: SimError,
    },
    #[error("{context}: {source}")]
    LargeDeviations {
        context: String,
        #[source]
        source: LdError,
    },
    #[error("{context}: {source}")]
    Scheduler {
        context: String,
        #[source]
        source: SchedulerError,
    },
    #[error("{context}: {source}")]
    Geometry {
        context: String,
        #[source]
        source: GeometryError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Record of one run: what went in and what came out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    /// Hash of the resolved config text.
    pub config_sha256: String,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects output files in memory, then writes them in order.
struct Outputs {
    files: Vec<(String, String)>,
    notes: Vec<String>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }
}

/// Runs the configured experiment and writes its outputs, the resolved
/// config and `manifest.json` into the output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let resolved = config.resolved_toml();
    let mut out = Outputs {
        files: vec![(RESOLVED_CONFIG_FILE.into(), resolved.clone())],
        notes: vec![],
    };
    match config.kind {
        ExperimentKind::Geometry => run_geometry(config, &mut out)?,
        ExperimentKind::Partition => run_partition(config, &mut out)?,
        ExperimentKind::Audit => run_audit(config, &mut out)?,
        ExperimentKind::JStar => run_jstar(config, &mut out)?,
        ExperimentKind::Simulate => run_simulate(config, &mut out)?,
        ExperimentKind::Decay | ExperimentKind::Compare => run_decay(config, &mut out)?,
    }

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut listed = Vec::new();
    for (name, body) in &out.files {
        write_file(&dir.join(name), body)?;
        listed.push(OutputFile {
            file: name.clone(),
            sha256: sha256_hex(body.as_bytes()),
            bytes: body.len(),
        });
    }
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        kind: config.kind.name().into(),
        seed: config.seed,
        config_sha256: sha256_hex(resolved.as_bytes()),
        started_unix_seconds: started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: listed,
        notes: out.notes,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

fn write_file(path: &Path, body: &str) -> Result<(), RunError> {
    std::fs::write(path, body).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn region_of(config: &ExperimentConfig) -> Result<CapacityRegion, RunError> {
    build_region(config.system.model(), config.system.pi()).map_err(|source| RunError::Geometry {
        context: "building the capacity region".into(),
        source,
    })
}

fn run_geometry(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let region = region_of(config)?;
    let b = config.system.scheduler().weights();
    let (k, l) = region.select_k_l(b);
    let max = region.max_weighted_rate(b);
    let face = match &max.face {
        Face::Vertex(m) => format!("vertex {m}"),
        Face::Edge(a, b) => format!("edge {a}-{b}"),
    };
    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "states,{}", config.system.model().len());
    let _ = writeln!(
        summary,
        "maximal_vertices,{}",
        region.maximal_vertices().len()
    );
    let _ = writeln!(summary, "facets,{}", region.facet_count());
    let _ = writeln!(summary, "b1,{}", format_rational(&b.get()[0]));
    let _ = writeln!(summary, "b2,{}", format_rational(&b.get()[1]));
    let _ = writeln!(summary, "k,{k}");
    let _ = writeln!(summary, "l,{l}");
    let _ = writeln!(summary, "max_weighted_rate,{}", format_rational(&max.value));
    let _ = writeln!(summary, "max_face,{face}");
    let mean = config.system.arrivals().mean();
    let _ = writeln!(summary, "lambda1,{}", format_rational(&mean[0]));
    let _ = writeln!(summary, "lambda2,{}", format_rational(&mean[1]));
    let _ = writeln!(summary, "stabilizable,{}", config.system.is_stabilizable());
    out.add("vertices.csv", region.vertices_csv());
    out.add("slopes.csv", region.slopes_csv());
    out.add("geometry.csv", summary);
    Ok(())
}

fn scheduler_context(kind: &str, name: &str) -> String {
    format!("{kind} experiment, scheduler `{name}`")
}

fn run_partition(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let settings = config.partition.as_ref().expect("validated");
    let region = region_of(config)?;
    for s in &config.schedulers {
        let mut grid = String::from("x1,x2,label\n");
        let mut x1 = 0;
        while x1 <= settings.grid_max {
            let mut x2 = 0;
            while x2 <= settings.grid_max {
                let label = match s.spec.partition_of_state([x1, x2], &region) {
                    Ok(l) => l.to_string(),
                    Err(SchedulerError::UndefinedSlope { .. }) => "undefined".into(),
                    Err(source) => {
                        return Err(RunError::Scheduler {
                            context: scheduler_context("partition", &s.name),
                            source,
                        })
                    }
                };
                let _ = writeln!(grid, "{x1},{x2},{label}");
                x2 += settings.grid_step;
            }
            x1 += settings.grid_step;
        }
        out.add(format!("partition_{}.csv", s.name), grid);

        let mut curves = String::from("slope,x1,x2\n");
        let range = (0.0, settings.grid_max as f64);
        for r in region.normal_slopes() {
            match s
                .spec
                .switching_curve_samples(r, range, settings.curve_points)
            {
                Ok(points) => {
                    for p in points {
                        let _ = writeln!(curves, "{},{},{}", format_rational(r), p[0], p[1]);
                    }
                }
                Err(SchedulerError::UnsupportedCurve { .. }) => out.notes.push(format!(
                    "scheduler `{}` has no closed-form switching curve at slope {}",
                    s.name,
                    format_rational(r)
                )),
                Err(source) => {
                    return Err(RunError::Scheduler {
                        context: scheduler_context("partition", &s.name),
                        source,
                    })
                }
            }
        }
        out.add(format!("curves_{}.csv", s.name), curves);
    }
    Ok(())
}

fn run_audit(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let settings = config.audit.as_ref().expect("validated");
    let region = region_of(config)?;
    let mut summary = String::from(
        "scheduler,q1,q2,theta_max,monotone,theta_star,holds_max_after_theta_star,max_rate\n",
    );
    for s in &config.schedulers {
        let report = s
            .spec
            .rsm_audit(
                settings.q,
                settings.theta_max,
                config.system.pi(),
                config.system.model(),
                &region,
            )
            .map_err(|source| RunError::Scheduler {
                context: scheduler_context("audit", &s.name),
                source,
            })?;
        let mut rows = String::from("theta,weighted_rate,is_max\n");
        for (i, v) in report.values.iter().enumerate() {
            let _ = writeln!(
                rows,
                "{},{},{}",
                i + 1,
                format_rational(v),
                *v == report.max_rate
            );
        }
        out.add(format!("audit_{}.csv", s.name), rows);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            s.name,
            settings.q[0],
            settings.q[1],
            settings.theta_max,
            report.monotone,
            report.theta_star.map_or(String::new(), |t| t.to_string()),
            report.holds_max_after_theta_star,
            format_rational(&report.max_rate)
        );
    }
    out.add("audit_summary.csv", summary);
    Ok(())
}

fn optimal_mode(config: &ExperimentConfig) -> Result<OptimalMode, RunError> {
    let sys = &config.system;
    optimize_jstar(
        sys.arrivals(),
        sys.model(),
        sys.pi(),
        sys.scheduler().weights(),
    )
    .map_err(|source| RunError::LargeDeviations {
        context: "optimizing J_*".into(),
        source,
    })
}

fn run_jstar(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let mode = optimal_mode(config)?;
    if let Some(r) = &mode.reason {
        out.notes.push(r.clone());
    }
    out.add("mode.csv", mode.to_csv());
    if !mode.alternates.is_empty() {
        let mut alt = String::from("index,j,lambda1,lambda2,v1,v2,drift");
        for i in 0..config.system.model().len() {
            let _ = write!(alt, ",gamma{}", i + 1);
        }
        alt.push('\n');
        for (i, m) in mode.alternates.iter().enumerate() {
            let _ = write!(
                alt,
                "{},{},{},{},{},{},{}",
                i + 1,
                m.j(),
                m.lambda[0],
                m.lambda[1],
                m.v_star[0],
                m.v_star[1],
                m.drift
            );
            for g in &m.gamma {
                let _ = write!(alt, ",{g}");
            }
            alt.push('\n');
        }
        out.add("alternates.csv", alt);
    }
    Ok(())
}

fn run_simulate(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let settings = config.simulate.as_ref().expect("validated");
    let mut table = String::from(
        "scheduler,slots,mean_q1,mean_q2,mean_weighted,max_q1,max_q2,final_q1,final_q2,arrivals1,arrivals2,departures1,departures2,offered1,offered2\n",
    );
    let mut drift_table =
        String::from("scheduler,level,window,samples,mean,stderr,lower95,upper95\n");
    for s in &config.schedulers {
        let context = || scheduler_context("simulate", &s.name);
        let sys = config
            .system
            .with_scheduler(s.spec.clone())
            .map_err(|source| RunError::Simulation {
                context: context(),
                source,
            })?;
        let summary = simulate(&sys, settings.horizon, settings.initial, settings.trace).map_err(
            |source| RunError::Simulation {
                context: context(),
                source,
            },
        )?;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.name,
            summary.slots,
            summary.time_average[0],
            summary.time_average[1],
            summary.time_average_weighted,
            summary.max_queue[0],
            summary.max_queue[1],
            summary.final_state[0],
            summary.final_state[1],
            summary.arrivals[0],
            summary.arrivals[1],
            summary.departures[0],
            summary.departures[1],
            summary.offered_service[0],
            summary.offered_service[1]
        );
        if let Some(trace) = &summary.trace {
            out.add(format!("trace_{}.csv", s.name), trace_csv(trace));
        }
        if let Some(d) = &settings.drift {
            let stat = stability_check(&sys, d.level, d.window, d.samples).map_err(|source| {
                RunError::Simulation {
                    context: context(),
                    source,
                }
            })?;
            let _ = writeln!(
                drift_table,
                "{},{},{},{},{},{},{},{}",
                s.name,
                d.level,
                d.window,
                stat.samples,
                stat.mean,
                stat.std_error,
                stat.lower95,
                stat.upper95
            );
        }
    }
    out.add("simulate.csv", table);
    if settings.drift.is_some() {
        out.add("drift.csv", drift_table);
    }
    Ok(())
}

/// Overflow estimates and decay fit for one scheduler.
#[derive(Debug, Clone)]
pub struct SchedulerDecay {
    pub name: String,
    pub estimates: Vec<OverflowEstimate>,
    pub fit: Option<DecayFit>,
}

#[derive(Debug, Clone)]
pub struct DecayOutcome {
    /// Present when the method is tilted.
    pub optimal: Option<OptimalMode>,
    pub schedulers: Vec<SchedulerDecay>,
    pub notes: Vec<String>,
}

/// Runs the decay pipeline for every scheduler on the same seed, so all
/// schedulers see the same arrival and channel streams.
pub fn decay_experiment(config: &ExperimentConfig) -> Result<DecayOutcome, RunError> {
    let settings = config.decay.as_ref().expect("decay settings are validated");
    let budget = EstimationBudget {
        replications: settings.replications,
        slots: settings.slots,
        cycles: settings.cycles,
        length_cycles: settings.length_cycles,
        max_cycle_slots: settings.max_cycle_slots,
        workers: config.workers,
    };
    let optimal = match settings.method {
        MethodKind::Tilted => Some(optimal_mode(config)?),
        _ => None,
    };
    let method = match settings.method {
        MethodKind::Naive => EstimationMethod::Naive,
        MethodKind::Regenerative => EstimationMethod::Regenerative,
        MethodKind::Tilted => {
            let plan = TiltPlan::from_optimal(
                &config.system,
                optimal.as_ref().expect("computed"),
                settings.defensive,
            )
            .map_err(|source| RunError::Simulation {
                context: "building the tilted sampling law".into(),
                source,
            })?;
            EstimationMethod::Tilted(plan)
        }
    };
    let mut notes = Vec::new();
    let mut results = Vec::new();
    for s in &config.schedulers {
        let context = || scheduler_context(config.kind.name(), &s.name);
        let sys = config
            .system
            .with_scheduler(s.spec.clone())
            .map_err(|source| RunError::Simulation {
                context: context(),
                source,
            })?;
        let estimates =
            estimate_overflow(&sys, &settings.thresholds, &method, &budget).map_err(|source| {
                RunError::Simulation {
                    context: context(),
                    source,
                }
            })?;
        let truncated: u64 = estimates.iter().map(|e| e.total.truncated_cycles).sum();
        if truncated > 0 {
            notes.push(format!(
                "scheduler `{}`: {truncated} cycles hit max_cycle_slots and were truncated",
                s.name
            ));
        }
        let fit = match decay_slope(&estimates) {
            Ok(f) => Some(f),
            Err(e @ SimError::TooFewPoints { .. }) => {
                notes.push(format!("scheduler `{}`: no decay fit ({e})", s.name));
                None
            }
            Err(source) => {
                return Err(RunError::Simulation {
                    context: context(),
                    source,
                })
            }
        };
        results.push(SchedulerDecay {
            name: s.name.clone(),
            estimates,
            fit,
        });
    }
    Ok(DecayOutcome {
        optimal,
        schedulers: results,
        notes,
    })
}

fn fit_csv(results: &[SchedulerDecay], optimal: Option<&OptimalMode>) -> String {
    let mut out = String::from("scheduler,slope,slope_stderr,intercept,residual,excluded,j_star\n");
    let j = optimal.map_or(String::new(), |m| format!("{}", m.j_star));
    for r in results {
        match &r.fit {
            Some(f) => {
                let excluded: Vec<String> = f.excluded.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.name,
                    f.slope,
                    f.slope_std_error.map_or(String::new(), |s| s.to_string()),
                    f.intercept,
                    f.residual,
                    excluded.join(" "),
                    j
                );
            }
            None => {
                let _ = writeln!(out, "{},,,,,,{}", r.name, j);
            }
        }
    }
    out
}

fn run_decay(config: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let DecayOutcome {
        optimal,
        schedulers: results,
        notes,
    } = decay_experiment(config)?;
    out.notes.extend(notes);
    if let Some(m) = &optimal {
        out.add("mode.csv", m.to_csv());
    }
    if config.kind == ExperimentKind::Compare {
        out.add("compare.csv", compare_csv(&results));
        out.add("compare_fit.csv", fit_csv(&results, optimal.as_ref()));
    } else {
        for r in &results {
            out.add(
                format!("estimates_{}.csv", r.name),
                estimates_csv(&r.estimates),
            );
        }
        out.add("fit.csv", fit_csv(&results, optimal.as_ref()));
    }
    Ok(())
}

/// Side-by-side table: one row per threshold, an estimate and standard
/// error column per scheduler.
fn compare_csv(results: &[SchedulerDecay]) -> String {
    let mut out = String::from("n");
    for r in results {
        let _ = write!(out, ",estimate_{0},stderr_{0}", r.name);
    }
    out.push('\n');
    let Some(first) = results.first() else {
        return out;
    };
    for (i, e) in first.estimates.iter().enumerate() {
        let _ = write!(out, "{}", e.threshold);
        for r in results {
            let x = &r.estimates[i];
            let _ = write!(out, ",{:e},{:e}", x.estimate, x.std_error);
        }
        out.push('\n');
    }
    out
}
