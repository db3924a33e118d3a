//! File formats and run configuration.
//!
//! Experiment logs are JSON lines; captures of a log go to a sibling
//! `<stem>.captures.jsonl` with one frame per line. Models are JSON, plans
//! and constraint sets use their own line formats, and configuration files
//! are TOML.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::effectiveness::EffectivenessModel;
use crate::plan::{ConstraintSet, DrapingPlan};
use crate::search::SearchConfig;
use crate::sheet_state::CaptureFrame;
use crate::simulator::{ExperimentLog, GroundTruthParams};
use crate::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_plan(path: &Path) -> Result<DrapingPlan> {
    DrapingPlan::parse(&read_text(path)?)
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet> {
    ConstraintSet::parse(&read_text(path)?)
}

pub fn load_params(path: &Path) -> Result<GroundTruthParams> {
    GroundTruthParams::from_toml(&read_text(path)?)
}

pub fn load_search_config(path: &Path) -> Result<SearchConfig> {
    SearchConfig::from_toml(&read_text(path)?)
}

pub fn load_model(path: &Path) -> Result<EffectivenessModel> {
    EffectivenessModel::from_json(&read_text(path)?)
}

pub fn load_log(path: &Path) -> Result<ExperimentLog> {
    let f = fs::File::open(path)?;
    ExperimentLog::read_jsonl(BufReader::new(f))
}

/// `runs/d1-s3.jsonl` → `runs/d1-s3.captures.jsonl`.
pub fn captures_path(log_path: &Path) -> PathBuf {
    let stem = log_path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    log_path.with_file_name(format!("{stem}.captures.jsonl"))
}

/// Writes the log and, when it carries captures, their sidecar.
pub fn write_log(path: &Path, log: &ExperimentLog) -> Result<()> {
    let mut w = create(path)?;
    log.write_jsonl(&mut w)?;
    w.flush()?;
    if !log.captures.is_empty() {
        write_captures(&captures_path(path), &log.captures)?;
    }
    Ok(())
}

pub fn write_captures(path: &Path, frames: &[CaptureFrame]) -> Result<()> {
    let mut w = create(path)?;
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_captures(path: &Path) -> Result<Vec<CaptureFrame>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: CaptureFrame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        frame.validate()?;
        out.push(frame);
    }
    Ok(out)
}

/// Everything a CLI run needs besides its positional inputs. Relative paths
/// resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sheet: Option<String>,
    pub params: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub search: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(&read_text(path)?).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.params, &mut cfg.constraints, &mut cfg.search, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&cfg.params, &cfg.constraints, &cfg.search].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }
}
