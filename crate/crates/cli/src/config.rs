//! Run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use kdc_core::ablation::TrialScene;
use kdc_core::encode::CentroidMode;
use kdc_core::pipeline::{DecodeConfig, NoiseConfig};
use kdc_core::pose::PoseConfig;
use kdc_core::scene::{DEFAULT_CANVAS, MIN_CANVAS};
use kdc_core::seg::SegConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub radius: f64,
    pub sigma_hvk: f64,
    pub sigma_lvk: f64,
    pub sigma_instance: f64,
    pub sigma_igo: f64,
    pub threshold: f64,
    pub nms_radius: f64,
    pub mode: CentroidMode,
    /// Offset and KeyCentroid noise σ in pixels.
    pub noise: f64,
    pub heatmap_noise: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub persons: usize,
    pub count: usize,
    pub canvas: usize,
    pub occlude: Option<f64>,
    pub bench_iters: usize,
    pub bench_warmup: usize,
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: usize,
    pub overlap: f64,
    pub offset_noise: f64,
    pub heatmap_noise: f64,
    pub radii: Vec<f64>,
    pub igo_sigmas: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: 30,
            overlap: 0.7,
            offset_noise: 1.5,
            heatmap_noise: 0.2,
            radii: vec![8.0, 16.0, 32.0],
            igo_sigmas: vec![0.1, 0.5],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let pose = PoseConfig::default();
        let seg = SegConfig::default();
        Self {
            radius: pose.radius,
            sigma_hvk: pose.sigma_hvk,
            sigma_lvk: pose.sigma_lvk,
            sigma_instance: seg.sigma_instance,
            sigma_igo: seg.sigma_igo,
            threshold: pose.threshold,
            nms_radius: pose.nms_radius,
            mode: seg.mode,
            noise: 0.0,
            heatmap_noise: 0.0,
            seed: 0,
            workers: 0,
            persons: 3,
            count: 1,
            canvas: DEFAULT_CANVAS,
            occlude: None,
            bench_iters: 20,
            bench_warmup: 2,
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            pose: PoseConfig {
                radius: self.radius,
                sigma_hvk: self.sigma_hvk,
                sigma_lvk: self.sigma_lvk,
                threshold: self.threshold,
                nms_radius: self.nms_radius,
                ..PoseConfig::default()
            },
            seg: SegConfig {
                mode: self.mode,
                sigma_instance: self.sigma_instance,
                sigma_igo: self.sigma_igo,
                ..SegConfig::default()
            },
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            offset: self.noise,
            heatmap: self.heatmap_noise,
        }
    }

    pub fn trial_scene(&self) -> TrialScene {
        TrialScene {
            canvas: self.canvas,
            overlap: self.ablation.overlap,
        }
    }

    /// Checks every parameter against the range its module accepts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.decode_config().validate().map_err(CliError::from_core_config)?;
        self.noise().validate().map_err(CliError::from_core_config)?;
        if self.persons == 0 {
            return Err(CliError::config("persons must be at least 1"));
        }
        if self.count == 0 {
            return Err(CliError::config("count must be at least 1"));
        }
        if self.canvas < MIN_CANVAS {
            return Err(CliError::config(format!("canvas must be at least {MIN_CANVAS}, got {}", self.canvas)));
        }
        if let Some(f) = self.occlude {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::config(format!("occlude must lie in [0, 1], got {f}")));
            }
            if self.persons < 2 {
                return Err(CliError::config("occlude needs at least 2 persons"));
            }
        }
        if self.bench_iters == 0 || self.bench_warmup == 0 {
            return Err(CliError::config("bench needs at least one warmup and one timed iteration"));
        }
        let a = &self.ablation;
        if a.seeds == 0 || a.radii.is_empty() || a.igo_sigmas.is_empty() {
            return Err(CliError::config("ablation needs seeds, radii and IGO sigmas"));
        }
        if !(0.0..=1.0).contains(&a.overlap) {
            return Err(CliError::config(format!("ablation overlap must lie in [0, 1], got {}", a.overlap)));
        }
        NoiseConfig {
            offset: a.offset_noise,
            heatmap: a.heatmap_noise,
        }
        .validate()
        .map_err(CliError::from_core_config)?;
        for &r in &a.radii {
            PoseConfig::with_radius(r).validate().map_err(CliError::from_core_config)?;
        }
        for &s in &a.igo_sigmas {
            if !(0.1..=1.0).contains(&s) {
                return Err(CliError::config(format!("IGO sigma must lie in [0.1, 1], got {s}")));
            }
        }
        Ok(())
    }
}
