//! Configuration files: parsing with line-anchored errors and dry-run checks.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mrct_core::analysis::{RegionInput, Scale, TrialAnalysisInput};
use mrct_core::design::{check_feasibility, validate_fractions, DesignConfig, RegionDesignInput};
use mrct_core::endpoints::{omega_for, EndpointSpec};
use mrct_core::model::RandomEffectsParams;
use mrct_core::sim::SimulationConfig;
use mrct_core::survival::{cox_loghr, Group, SubjectRecord};
use mrct_core::{MrctError, Probability};

use crate::{CliError, Command};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Overall effect and between-region spread; give exactly one of `tau` or `tau2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsSpec {
    pub delta: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub tau2: Option<f64>,
}

impl EffectsSpec {
    pub fn params(&self) -> Result<RandomEffectsParams, MrctError> {
        match (self.tau, self.tau2) {
            (Some(t), None) => RandomEffectsParams::from_tau(self.delta, t),
            (None, Some(t2)) => RandomEffectsParams::new(self.delta, t2),
            _ => Err(MrctError::Domain(
                "effects need exactly one of tau or tau2".into(),
            )),
        }
    }
}

/// Shared by `design`, `cp`, `profile` and `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub units: Option<String>,
    pub effects: EffectsSpec,
    pub design: DesignConfig,
    /// Variance scales per region; alternative to `endpoints`.
    #[serde(default)]
    pub omegas: Option<Vec<f64>>,
    #[serde(default)]
    pub endpoints: Option<Vec<EndpointSpec>>,
    #[serde(default)]
    pub region_ids: Option<Vec<String>>,
    /// `cp`: evaluate at this overall control size instead of solving for it.
    #[serde(default)]
    pub n0: Option<u64>,
    /// `profile`: zero-based region index.
    #[serde(default)]
    pub region: Option<usize>,
    /// `profile`: fractions assigned to `region`.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// `bound`: variance scale used for the attaining sample sizes.
    #[serde(default)]
    pub omega: Option<f64>,
    /// `bound`: fractions for which the attaining `n0` is reported.
    #[serde(default)]
    pub attain_fractions: Option<Vec<f64>>,
    /// `bound`: number of equally sized regions for the equal-allocation CP.
    #[serde(default)]
    pub equal_allocation_regions: Option<usize>,
}

impl DesignFile {
    pub fn effects(&self) -> Result<RandomEffectsParams, MrctError> {
        self.effects.params()
    }

    pub fn region_count(&self) -> Option<usize> {
        self.omegas
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.endpoints.as_ref().map(Vec::len))
    }

    pub fn region_id(&self, r: usize) -> String {
        self.region_ids
            .as_ref()
            .and_then(|ids| ids.get(r).cloned())
            .unwrap_or_else(|| format!("region{}", r + 1))
    }

    pub fn regions(&self) -> Result<Vec<RegionDesignInput>, MrctError> {
        let omegas: Vec<f64> = match (&self.omegas, &self.endpoints) {
            (Some(o), None) => o.clone(),
            (None, Some(eps)) => eps
                .iter()
                .map(|e| omega_for(e, self.design.ell))
                .collect::<Result<_, _>>()?,
            _ => {
                return Err(MrctError::Domain(
                    "give exactly one of omegas or endpoints".into(),
                ))
            }
        };
        if let Some(ids) = &self.region_ids {
            if ids.len() != omegas.len() {
                return Err(MrctError::Domain(format!(
                    "{} region ids for {} regions",
                    ids.len(),
                    omegas.len()
                )));
            }
        }
        omegas
            .iter()
            .enumerate()
            .map(|(r, &o)| RegionDesignInput::new(self.region_id(r), o))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateFile {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(flatten)]
    pub config: SimulationConfig,
}

/// Regional estimates inline, from a regions CSV, or from subject-level data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeFile {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub regions: Option<Vec<RegionInput>>,
    /// Columns `region, estimate, variance, events`; one of the last two may be empty.
    #[serde(default)]
    pub regions_csv: Option<PathBuf>,
    /// Columns `region, time, event, group`; a Cox model is fitted per region.
    #[serde(default)]
    pub subjects_csv: Option<PathBuf>,
    #[serde(default)]
    pub margin: f64,
    pub alpha: Probability,
    pub pi: f64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub ci_level: Option<Probability>,
    #[serde(default)]
    pub ell: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    region: String,
    estimate: f64,
    variance: Option<f64>,
    events: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct SubjectRow {
    region: String,
    time: f64,
    event: u8,
    group: u8,
}

impl AnalyzeFile {
    /// Resolves the regional inputs; relative CSV paths are taken from the config's directory.
    pub fn to_input(&self, base: &Path) -> Result<TrialAnalysisInput, CliError> {
        let sources = [
            self.regions.is_some(),
            self.regions_csv.is_some(),
            self.subjects_csv.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(CliError::Schema(
                "give exactly one of regions, regions_csv or subjects_csv".into(),
            ));
        }
        let regions = if let Some(r) = &self.regions {
            r.clone()
        } else if let Some(p) = &self.regions_csv {
            read_regions_csv(&base.join(p))?
        } else {
            let p = self.subjects_csv.as_ref().expect("checked above");
            regions_from_subjects(&base.join(p), self.scale)?
        };
        let mut input = TrialAnalysisInput {
            regions,
            margin: self.margin,
            alpha: self.alpha,
            pi: self.pi,
            scale: self.scale,
            ci_level: Probability::saturating(0.95),
            ell: 1.0,
        };
        if let Some(c) = self.ci_level {
            input.ci_level = c;
        }
        if let Some(e) = self.ell {
            input.ell = e;
        }
        Ok(input)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let at = e
        .position()
        .map(|p| format!(":{}", p.line()))
        .unwrap_or_default();
    match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => CliError::Schema(format!("{}{at}: {e}", path.display())),
    }
}

fn read_regions_csv(path: &Path) -> Result<Vec<RegionInput>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    rdr.deserialize::<RegionRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok(RegionInput {
                region_id: row.region,
                estimate: row.estimate,
                variance: row.variance,
                events: row.events,
            })
        })
        .collect()
}

/// Fits a Cox model per region; estimates are hazard ratios on the log-HR scale
/// and `-log HR` otherwise.
fn regions_from_subjects(path: &Path, scale: Scale) -> Result<Vec<RegionInput>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut groups: Vec<(String, Vec<SubjectRecord>)> = Vec::new();
    for (i, row) in rdr.deserialize::<SubjectRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let group = match row.group {
            0 => Group::Control,
            1 => Group::Treatment,
            g => {
                return Err(CliError::Schema(format!(
                    "{}:{line}: group must be 0 or 1, got {g}",
                    path.display()
                )))
            }
        };
        if row.event > 1 {
            return Err(CliError::Schema(format!(
                "{}:{line}: event must be 0 or 1, got {}",
                path.display(),
                row.event
            )));
        }
        let rec = SubjectRecord::new(row.time, row.event == 1, group)
            .map_err(|e| CliError::Schema(format!("{}:{line}: {e}", path.display())))?;
        match groups.iter_mut().find(|(id, _)| *id == row.region) {
            Some((_, v)) => v.push(rec),
            None => groups.push((row.region, vec![rec])),
        }
    }
    groups
        .into_iter()
        .map(|(id, data)| {
            let (d, var) = cox_loghr(&data)
                .map_err(|e| CliError::Model(MrctError::Estimation(format!("region {id}: {e}"))))?;
            let estimate = match scale {
                Scale::LogHr => (-d).exp(),
                Scale::Identity => d,
            };
            Ok(RegionInput {
                region_id: id,
                estimate,
                variance: Some(var),
                events: None,
            })
        })
        .collect()
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Parses JSON, reporting failures as `path:line:column: message`.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let msg = match full.rfind(" at line ") {
            Some(i) => &full[..i],
            None => &full,
        };
        CliError::Schema(format!(
            "{}:{}:{}: {msg}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_file(path)?;
    let value: T = parse_json(path, &text)?;
    Ok(value)
}

fn check_version(version: u32) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::Schema(format!(
            "schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

pub fn load_design(path: &Path) -> Result<DesignFile, CliError> {
    let f: DesignFile = load(path)?;
    check_version(f.schema_version)?;
    Ok(f)
}

pub fn load_simulate(path: &Path) -> Result<SimulateFile, CliError> {
    let f: SimulateFile = load(path)?;
    check_version(f.schema_version)?;
    Ok(f)
}

pub fn load_analyze(path: &Path) -> Result<AnalyzeFile, CliError> {
    let f: AnalyzeFile = load(path)?;
    check_version(f.schema_version)?;
    Ok(f)
}

/// Dry-run report. Errors make the run fail with status 1; warnings do not.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    fn check<T>(&mut self, r: Result<T, MrctError>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(strip_prefix(&e));
                None
            }
        }
    }
}

fn strip_prefix(e: &MrctError) -> String {
    match e {
        MrctError::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        if self.errors.is_empty() {
            writeln!(f, "ok")?;
        }
        for n in &self.notes {
            writeln!(f, "  {n}")?;
        }
        Ok(())
    }
}

fn check_design(
    diag: &mut Diagnostics,
    effects: Option<RandomEffectsParams>,
    design: &DesignConfig,
    omegas: Option<Vec<f64>>,
    ids: impl Fn(usize) -> String,
) {
    diag.check(design.validate_scalars());
    if !design.fractions.is_empty() {
        diag.check(validate_fractions(&design.fractions));
    }
    if let Some(om) = &omegas {
        if !design.fractions.is_empty() && om.len() != design.fractions.len() {
            diag.errors.push(format!(
                "{} regions but {} fractions",
                om.len(),
                design.fractions.len()
            ));
        }
        diag.notes.push("omega preview:".into());
        for (r, o) in om.iter().enumerate() {
            diag.notes.push(format!("  {}: {o:.4}", ids(r)));
        }
    }
    let r = omegas
        .as_ref()
        .map(Vec::len)
        .unwrap_or(design.fractions.len());
    if let (Some(eff), true) = (effects, r > 0) {
        if let Some(feas) = diag.check(check_feasibility(&eff, design, r)) {
            if !feas.feasible {
                diag.warnings.push(format!(
                    "tau/(delta+M) = {:.4} is not below sqrt(R)/(z_(1-alpha)+z_(1-beta)) = {:.4} for R = {r}; no sample size reaches the target power",
                    feas.ratio, feas.limit
                ));
            } else {
                diag.notes.push(format!(
                    "feasibility: tau/(delta+M) = {:.4} < sqrt(R)/(z_(1-alpha)+z_(1-beta)) = {:.4}",
                    feas.ratio, feas.limit
                ));
            }
        }
    }
}

fn warn_units(diag: &mut Diagnostics, units: &Option<String>, endpoints: Option<&[EndpointSpec]>) {
    let timed = endpoints.is_some_and(|eps| {
        eps.iter().any(|e| {
            matches!(
                e,
                EndpointSpec::SurvivalPh { .. } | EndpointSpec::SurvivalRmst { .. }
            )
        })
    });
    if timed && units.is_none() {
        diag.warnings
            .push("survival endpoints without a units string; times and rates are unitless".into());
    }
}

/// Schema validation followed by semantic checks. Only I/O and schema
/// failures are returned as `Err`.
pub fn validate_config(command: Command, path: &Path) -> Result<Diagnostics, CliError> {
    let mut diag = Diagnostics::default();
    match command {
        Command::Design | Command::Cp | Command::Profile | Command::Bound => {
            let f = load_design(path)?;
            let effects = diag.check(f.effects());
            let omegas = if command == Command::Bound && f.region_count().is_none() {
                None
            } else {
                diag.check(f.regions())
                    .map(|rs| rs.iter().map(|r| r.omega).collect())
            };
            if command != Command::Bound && f.design.fractions.is_empty() {
                diag.errors.push("design.fractions is empty".into());
            }
            warn_units(&mut diag, &f.units, f.endpoints.as_deref());
            check_design(&mut diag, effects, &f.design, omegas, |r| f.region_id(r));
            if command == Command::Profile {
                match (&f.region, &f.grid) {
                    (Some(r), Some(_)) if f.region_count().is_some_and(|n| *r >= n) => {
                        diag.errors.push(format!("region index {r} out of range"))
                    }
                    (Some(_), Some(_)) => {}
                    _ => diag.errors.push("profile needs region and grid".into()),
                }
            }
            if command == Command::Bound && f.attain_fractions.is_some() && f.omega.is_none() {
                diag.errors.push("attain_fractions requires omega".into());
            }
        }
        Command::Analyze => {
            let f = load_analyze(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let input = f.to_input(base)?;
            if let Some(s) = diag.check(input.summaries()) {
                diag.notes.push(format!("{} regions", s.len()));
            }
        }
        Command::Simulate => {
            let f = load_simulate(path)?;
            let cfg = &f.config;
            warn_units(&mut diag, &f.units, Some(&cfg.endpoints));
            diag.check(cfg.validate());
            let omegas = cfg
                .endpoints
                .iter()
                .map(|e| omega_for(e, cfg.design.ell))
                .collect::<Result<Vec<_>, _>>();
            let omegas = diag.check(omegas);
            let effects = diag.check(cfg.true_effects()).and_then(|d| {
                let p = mrct_core::model::naive_hyperparams(&d).ok()?;
                Some(match cfg.hyperparameter_decimals {
                    Some(k) => p.rounded(k),
                    None => p,
                })
            });
            check_design(&mut diag, effects, &cfg.design, omegas, |r| {
                format!("region{}", r + 1)
            });
        }
    }
    Ok(diag)
}
