//! Run configuration shared by every command.
//!
//! A single TOML document with one table per tool. Camera, color bounds,
//! detector, drag and filter settings live at the top level and are copied
//! into the race and arc-study settings by the accessors below. Relative
//! paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraConfig;
use crate::control::FeasibilityConfig;
use crate::corpus::CorpusSpec;
use crate::detect::{DetectorParams, HistogramParams};
use crate::ekf::{DragParams, EkfTuning};
use crate::imaging::ColorBounds;
use crate::pose::PoseBenchConfig;
use crate::racesim::{ArcStudyConfig, RaceConfig, TrackSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackPreset {
    #[default]
    FiveGate,
    Oval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrackSource {
    pub preset: TrackPreset,
    /// TOML track file; takes precedence over the preset.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub count: usize,
    #[serde(flatten)]
    pub spec: CorpusSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 600,
            spec: CorpusSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RocConfig {
    pub sigma_l: Vec<f64>,
    pub sigma_cf: Vec<f64>,
    /// Detector runs per image with different sampling seeds.
    pub repeats: usize,
    /// Worst-corner distance for a detection to match a label (px).
    pub match_tol: f64,
    /// Evaluate an existing corpus instead of generating one.
    pub corpus_dir: Option<PathBuf>,
    /// Distance bin edges for the per-distance detection rate (m).
    pub distance_bins: Vec<f64>,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            sigma_l: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0],
            sigma_cf: vec![0.5],
            repeats: 10,
            match_tol: 8.0,
            corpus_dir: None,
            distance_bins: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of seeded race runs, seeds `seed..seed + race_runs`.
    pub race_runs: usize,
    pub out_dir: Option<PathBuf>,
    pub camera: CameraConfig,
    pub bounds: ColorBounds,
    pub detector: DetectorParams,
    pub histogram: HistogramParams,
    pub drag: DragParams,
    pub ekf: EkfTuning,
    pub corpus: CorpusConfig,
    pub roc: RocConfig,
    pub pose_bench: PoseBenchConfig,
    pub feasibility: FeasibilityConfig,
    pub race: RaceConfig,
    pub arc_study: ArcStudyConfig,
    pub track: TrackSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            race_runs: 10,
            out_dir: None,
            camera: CameraConfig::default(),
            bounds: ColorBounds::default(),
            detector: DetectorParams::default(),
            histogram: HistogramParams::default(),
            drag: DragParams::default(),
            ekf: EkfTuning::default(),
            corpus: CorpusConfig::default(),
            roc: RocConfig::default(),
            pose_bench: PoseBenchConfig::default(),
            feasibility: FeasibilityConfig::default(),
            race: RaceConfig::default(),
            arc_study: ArcStudyConfig::default(),
            track: TrackSource::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without validation; `path` only labels errors.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.out_dir,
            &mut self.roc.corpus_dir,
            &mut self.track.file,
        ] {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        }
    }

    /// Every violated invariant across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.camera.model().violations());
        out.extend(self.bounds.violations());
        out.extend(self.detector.violations());
        if self.histogram.window == 0 {
            out.push("histogram.window must be >= 1".into());
        }
        out.extend(self.drag.violations());
        out.extend(self.ekf.violations());
        out.extend(self.corpus.spec.violations());
        if self.roc.sigma_l.is_empty() || self.roc.sigma_cf.is_empty() {
            out.push("roc.sigma_l and roc.sigma_cf must be non-empty".into());
        }
        if self.roc.repeats == 0 {
            out.push("roc.repeats must be >= 1".into());
        }
        if self.roc.distance_bins.len() < 2
            || self.roc.distance_bins.windows(2).any(|w| !(w[0] < w[1]))
        {
            out.push("roc.distance_bins needs at least two increasing edges".into());
        }
        if !(self.roc.match_tol > 0.0) {
            out.push("roc.match_tol must be > 0".into());
        }
        if let Some(d) = &self.roc.corpus_dir {
            if !d.is_dir() {
                out.push(format!("roc.corpus_dir {} does not exist", d.display()));
            }
        }
        out.extend(self.pose_bench.violations());
        out.extend(self.feasibility.violations());
        out.extend(self.race_config().violations());
        if self.race_runs == 0 {
            out.push("race_runs must be >= 1".into());
        }
        if self.arc_study.trials < 2 {
            out.push("arc_study.trials must be >= 2".into());
        }
        match &self.track.file {
            Some(f) if !f.is_file() => {
                out.push(format!("track.file {} does not exist", f.display()));
            }
            Some(_) => {
                if let Err(e) = self.track() {
                    out.push(e.to_string());
                }
            }
            None => {}
        }
        // sections shared with the race settings are checked twice
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(m.clone()));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn race_config(&self) -> RaceConfig {
        RaceConfig {
            detector: self.detector,
            histogram: self.histogram,
            bounds: self.bounds,
            camera: self.camera,
            true_drag: self.drag,
            ekf: self.ekf,
            ..self.race.clone()
        }
    }

    pub fn arc_study_config(&self) -> ArcStudyConfig {
        ArcStudyConfig {
            seed: self.seed,
            true_drag: self.drag,
            ..self.arc_study
        }
    }

    pub fn pose_bench_config(&self) -> PoseBenchConfig {
        PoseBenchConfig {
            seed: self.seed,
            ..self.pose_bench.clone()
        }
    }

    pub fn feasibility_config(&self) -> FeasibilityConfig {
        FeasibilityConfig {
            ky: self.drag.ky,
            ..self.feasibility.clone()
        }
    }

    pub fn race_seeds(&self) -> Vec<u64> {
        (0..self.race_runs as u64).map(|i| self.seed + i).collect()
    }

    pub fn track(&self) -> Result<TrackSpec> {
        let track = match &self.track.file {
            Some(f) => {
                let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
                toml::from_str(&text).map_err(|e| Error::Parse {
                    path: f.clone(),
                    msg: e.to_string(),
                })?
            }
            None => match self.track.preset {
                TrackPreset::FiveGate => TrackSpec::five_gate(),
                TrackPreset::Oval => TrackSpec::oval(),
            },
        };
        let v = track.violations();
        if v.is_empty() {
            Ok(track)
        } else {
            Err(Error::Invalid(v))
        }
    }
}
