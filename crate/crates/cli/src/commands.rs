//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mrct_core::analysis::{analyze_trial, forest_rows, TrialAnalysisReport};
use mrct_core::design::{
    allocate_largest_remainder, attaining_n0, check_feasibility, consistency_probability,
    cp_equal_allocation, cp_lower_bound, cp_profile, solve_overall_n0, Attainment, DesignConfig,
    DesignResult, Feasibility, LowerBound, ProfilePoint, RegionDesignInput,
};
use mrct_core::model::RandomEffectsParams;
use mrct_core::sim::{simulate_study, ReplicationStatus, SimulationReport};
use mrct_core::MrctError;

use crate::config::{self, SCHEMA_VERSION};
use crate::output::{ensure_dir, write_csv, write_json, Envelope};
use crate::{CliError, Command, RunConfig};

pub fn run(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    match run.command {
        Command::Design => design(run),
        Command::Cp => cp(run),
        Command::Bound => bound(run),
        Command::Profile => profile(run),
        Command::Analyze => analyze(run),
        Command::Simulate => simulate(run),
    }
}

/// Writes the JSON envelope and CSV rows requested by `--format`.
fn emit<T: Serialize, R: Serialize>(
    run: &RunConfig,
    units: &Option<String>,
    report: T,
    csv_name: &str,
    rows: &[R],
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(&run.output_dir)?;
    let name = run.command.name();
    let mut written = Vec::new();
    if run.format.json() {
        let env = Envelope::new(name, units, report);
        written.push(write_json(&run.output_dir, &format!("{name}.json"), &env)?);
    }
    if run.format.csv() {
        written.push(write_csv(&run.output_dir, csv_name, rows)?);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub effects: RandomEffectsParams,
    pub design: DesignConfig,
    pub regions: Vec<RegionDesignInput>,
    pub feasibility: Feasibility,
    pub result: DesignResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub schema_version: u32,
    pub units: Option<String>,
    pub region_id: String,
    pub fraction: f64,
    pub omega: f64,
    pub n0: u64,
    pub regional_n0: u64,
    pub cp: f64,
    pub meets_assurance: bool,
}

fn design(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_design(&run.config_path)?;
    let effects = f.effects()?;
    let regions = f.regions()?;
    let feasibility = check_feasibility(&effects, &f.design, regions.len())?;
    let result = solve_overall_n0(&effects, &f.design, &regions)?;
    let rows: Vec<RegionRow> = regions
        .iter()
        .enumerate()
        .map(|(r, reg)| RegionRow {
            schema_version: SCHEMA_VERSION,
            units: f.units.clone(),
            region_id: reg.region_id.clone(),
            fraction: f.design.fractions[r],
            omega: reg.omega,
            n0: result.n0,
            regional_n0: result.regional_n0[r],
            cp: result.cp_per_region[r].value(),
            meets_assurance: result.meets_assurance[r],
        })
        .collect();
    let report = DesignReport {
        effects,
        design: f.design.clone(),
        regions,
        feasibility,
        result,
    };
    emit(run, &f.units, report, "design.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpReport {
    pub effects: RandomEffectsParams,
    pub n0: u64,
    /// Whether `n0` was solved for rather than given.
    pub solved: bool,
    pub regions: Vec<RegionRow>,
}

fn cp(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_design(&run.config_path)?;
    let effects = f.effects()?;
    let regions = f.regions()?;
    let (n0, solved) = match f.n0 {
        Some(n) => (n, false),
        None => (solve_overall_n0(&effects, &f.design, &regions)?.n0, true),
    };
    let alloc = allocate_largest_remainder(n0, &f.design.fractions);
    let assurance = f.design.assurance.value();
    let rows = regions
        .iter()
        .enumerate()
        .map(|(r, reg)| {
            let cp = consistency_probability(&effects, &f.design, &regions, n0, r)?.value();
            Ok(RegionRow {
                schema_version: SCHEMA_VERSION,
                units: f.units.clone(),
                region_id: reg.region_id.clone(),
                fraction: f.design.fractions[r],
                omega: reg.omega,
                n0,
                regional_n0: alloc[r],
                cp,
                meets_assurance: cp >= assurance,
            })
        })
        .collect::<Result<Vec<_>, MrctError>>()?;
    let report = CpReport {
        effects,
        n0,
        solved,
        regions: rows.clone(),
    };
    emit(run, &f.units, report, "cp.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttainingSize {
    pub fraction: f64,
    pub omega: f64,
    pub n0: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualAllocation {
    pub regions: usize,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub effects: RandomEffectsParams,
    pub lower_bound: LowerBound,
    pub attaining: Vec<AttainingSize>,
    pub equal_allocation: Option<EqualAllocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub schema_version: u32,
    pub units: Option<String>,
    pub quantity: String,
    pub value: f64,
    pub attainment: Option<Attainment>,
    pub fraction: Option<f64>,
    pub regions: Option<usize>,
}

fn bound(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_design(&run.config_path)?;
    let effects = f.effects()?;
    let lower_bound = cp_lower_bound(&effects, &f.design)?;
    let attaining = match &f.attain_fractions {
        Some(fracs) => {
            let omega = f
                .omega
                .ok_or_else(|| CliError::Schema("attain_fractions requires omega".into()))?;
            fracs
                .iter()
                .map(|&fr| {
                    Ok(AttainingSize {
                        fraction: fr,
                        omega,
                        n0: attaining_n0(&effects, &f.design, omega, fr)?,
                    })
                })
                .collect::<Result<Vec<_>, MrctError>>()?
        }
        None => Vec::new(),
    };
    let equal_allocation = f
        .equal_allocation_regions
        .map(|r| {
            cp_equal_allocation(&effects, &f.design, r).map(|cp| EqualAllocation {
                regions: r,
                cp: cp.value(),
            })
        })
        .transpose()?;

    let row = |quantity: &str, value: f64| BoundRow {
        schema_version: SCHEMA_VERSION,
        units: f.units.clone(),
        quantity: quantity.to_string(),
        value,
        attainment: None,
        fraction: None,
        regions: None,
    };
    let mut rows = vec![BoundRow {
        attainment: Some(lower_bound.attainment),
        ..row("lower_bound", lower_bound.value.value())
    }];
    rows.extend(attaining.iter().map(|a| BoundRow {
        fraction: Some(a.fraction),
        ..row("attaining_n0", a.n0 as f64)
    }));
    if let Some(eq) = &equal_allocation {
        rows.push(BoundRow {
            regions: Some(eq.regions),
            ..row("equal_allocation_cp", eq.cp)
        });
    }
    let report = BoundReport {
        effects,
        lower_bound,
        attaining,
        equal_allocation,
    };
    emit(run, &f.units, report, "bound.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub effects: RandomEffectsParams,
    pub region_id: String,
    pub points: Vec<ProfilePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub schema_version: u32,
    pub units: Option<String>,
    pub region_id: String,
    pub fraction: f64,
    pub n0: u64,
    pub regional_n0: u64,
    pub cp: f64,
}

fn profile(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_design(&run.config_path)?;
    let (Some(r), Some(grid)) = (f.region, f.grid.as_ref()) else {
        return Err(CliError::Schema("profile needs region and grid".into()));
    };
    let effects = f.effects()?;
    let regions = f.regions()?;
    let points = cp_profile(&effects, &f.design, &regions, r, grid)?;
    let region_id = f.region_id(r);
    let rows: Vec<ProfileRow> = points
        .iter()
        .map(|p| ProfileRow {
            schema_version: SCHEMA_VERSION,
            units: f.units.clone(),
            region_id: region_id.clone(),
            fraction: p.fraction,
            n0: p.n0,
            regional_n0: p.regional_n0,
            cp: p.cp.value(),
        })
        .collect();
    let report = ProfileReport {
        effects,
        region_id,
        points,
    };
    emit(run, &f.units, report, "profile.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestCsvRow {
    pub schema_version: u32,
    pub units: Option<String>,
    pub label: String,
    pub kind: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

fn analyze(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_analyze(&run.config_path)?;
    let base = run.config_path.parent().unwrap_or(Path::new("."));
    let input = f.to_input(base)?;
    let report: TrialAnalysisReport = analyze_trial(&input)?;
    let rows: Vec<ForestCsvRow> = forest_rows(&report)
        .into_iter()
        .map(|r| ForestCsvRow {
            schema_version: SCHEMA_VERSION,
            units: f.units.clone(),
            label: r.label,
            kind: r.kind,
            estimate: r.estimate,
            lower: r.lower,
            upper: r.upper,
        })
        .collect();
    emit(run, &f.units, report, "forest.csv", &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub schema_version: u32,
    pub index: usize,
    pub status: ReplicationStatus,
    pub delta_design: Option<f64>,
    pub tau_design: Option<f64>,
    pub n0_design: Option<u64>,
    pub cp_design: Option<f64>,
    pub verification_runs: usize,
    pub verification_failures: usize,
    pub significant: usize,
    pub consistent: usize,
    pub empirical_power: Option<f64>,
    pub empirical_cp: Option<f64>,
    pub dev_power: Option<f64>,
    pub dev_cp: Option<f64>,
    pub bernoulli_clamps: usize,
    pub resampled_effects: usize,
    pub message: Option<String>,
}

fn replication_rows(report: &SimulationReport) -> Vec<ReplicationRow> {
    report
        .records
        .iter()
        .map(|r| ReplicationRow {
            schema_version: SCHEMA_VERSION,
            index: r.index,
            status: r.status,
            delta_design: r.delta_design,
            tau_design: r.tau_design,
            n0_design: r.n0_design,
            cp_design: r.cp_design,
            verification_runs: r.verification_runs,
            verification_failures: r.verification_failures,
            significant: r.significant,
            consistent: r.consistent,
            empirical_power: r.empirical_power,
            empirical_cp: r.empirical_cp,
            dev_power: r.dev_power,
            dev_cp: r.dev_cp,
            bernoulli_clamps: r.bernoulli_clamps,
            resampled_effects: r.resampled_effects,
            message: r.message.clone(),
        })
        .collect()
}

fn simulate(run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let f = config::load_simulate(&run.config_path)?;
    let mut cfg = f.config.clone();
    if let Some(s) = run.seed {
        cfg.master_seed = s;
    }
    if let Some(m) = run.m_design {
        cfg.m_design = m;
    }
    if let Some(m) = run.m_verify {
        cfg.m_verify = m;
    }
    let report = simulate_study(&cfg)?;
    let rows = replication_rows(&report);
    emit(run, &f.units, report, "replications.csv", &rows)
}
