//! Stage orchestration: family, subdivision, refinement, or the classical
//! partition in zero-center mode.

use std::path::Path;
use std::time::Instant;

use mtv_core::refinement::{MarkovFamily, RefineError};
use mtv_core::symbolic_cover::{default_nu, subdivide_with, CoverError, SymbolTable, DEFAULT_MAX_DEPTH};
use mtv_core::torus_model::AffinePHSystem;
use mtv_core::transversal::{AdaptedFamily, FamilyError, FamilyParams, DEFAULT_MARGIN};
use mtv_core::zero_center::{ClassicalPartition, ZeroCenterError};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Resolved};
use crate::PipelineError;

/// Contents of `partition.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Partition {
    Center(MarkovFamily),
    ZeroCenter(ClassicalPartition),
}

impl Partition {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        if text.trim().is_empty() {
            return Err(PipelineError::Input("partition file is empty".into()));
        }
        serde_json::from_str(text).map_err(|e| PipelineError::Input(format!("partition: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub struct CenterBuild {
    pub family: AdaptedFamily,
    pub table: SymbolTable,
    pub markov: MarkovFamily,
}

pub struct ZeroBuild {
    pub system: AffinePHSystem,
    pub partition: ClassicalPartition,
}

pub enum Built {
    Center(Box<CenterBuild>),
    ZeroCenter(Box<ZeroBuild>),
}

impl Built {
    pub fn partition(&self) -> Partition {
        match self {
            Built::Center(c) => Partition::Center(c.markov.clone()),
            Built::ZeroCenter(z) => Partition::ZeroCenter(z.partition.clone()),
        }
    }
}

fn family_error(stage: &'static str, e: FamilyError) -> PipelineError {
    match e {
        FamilyError::ParameterViolation(message) => PipelineError::Parameter { stage, message },
        other => PipelineError::Construction { stage, message: other.to_string() },
    }
}

fn cover_error(e: CoverError) -> PipelineError {
    match e {
        CoverError::Family(f) => family_error("subdivision", f),
        other => PipelineError::Construction { stage: "subdivision", message: other.to_string() },
    }
}

fn refine_error(e: RefineError) -> PipelineError {
    match e {
        RefineError::Family(f) => family_error("refinement", f),
        RefineError::Cover(c) => cover_error(c),
        other => PipelineError::Construction { stage: "refinement", message: other.to_string() },
    }
}

/// The transversal family alone, for stages that only need charts.
pub fn family(config: &PipelineConfig, system: &AffinePHSystem, resolved: &Resolved) -> Result<AdaptedFamily, PipelineError> {
    let params = FamilyParams {
        epsilon: resolved.epsilon,
        delta: Some(resolved.delta),
        lattice: config.lattice,
        margin: DEFAULT_MARGIN,
    };
    AdaptedFamily::build(system, &params).map_err(|e| family_error("family", e))
}

pub fn build(config: &PipelineConfig) -> Result<Built, PipelineError> {
    let system = config.system()?;
    let resolved = config.resolve(&system)?;
    if config.zero_center {
        let partition = ClassicalPartition::build(&system).map_err(|e| match e {
            ZeroCenterError::Unsupported(m) => PipelineError::Parameter { stage: "zero-center", message: m },
            other => PipelineError::Construction { stage: "zero-center", message: other.to_string() },
        })?;
        log::info!("zero-center partition: {} cylinders", partition.len());
        return Ok(Built::ZeroCenter(Box::new(ZeroBuild { system, partition })));
    }
    let t = Instant::now();
    let family = family(config, &system, &resolved)?;
    log::info!("family: n = {}, δ = {:.6e}, C = {:.4} ({:.2?})", family.lattice(), family.delta(), family.constant(), t.elapsed());
    let nu = resolved.nu.unwrap_or_else(|| default_nu(&family));
    let t = Instant::now();
    let table = subdivide_with(&family, nu, DEFAULT_MAX_DEPTH).map_err(cover_error)?;
    log::info!("subdivision: {} pieces, {} classes ({:.2?})", table.len(), table.classes.len(), t.elapsed());
    let t = Instant::now();
    let markov = MarkovFamily::build(&family, &table).map_err(refine_error)?;
    log::info!("refinement: {} bases, {} cells ({:.2?})", markov.bases.len(), markov.len(), t.elapsed());
    Ok(Built::Center(Box::new(CenterBuild { family, table, markov })))
}
