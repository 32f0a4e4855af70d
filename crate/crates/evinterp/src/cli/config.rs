//! One configuration schema for every subcommand. A run starts from a
//! preset, overlays the config file (fields may be partial), then applies
//! command-line flags, in that order.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::event::SimulatorConfig;
use crate::model::ModelConfig;
use crate::scene::{ObjectSpec, SceneSpec, Shape, Trajectory};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?}; expected paper or desk"
            ))),
        }
    }
}

/// Everything a run needs, shared by all subcommands; each reads the
/// sections it cares about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    /// Held-out positions between sample endpoints.
    pub skip: usize,
    pub aggregation: Aggregation,
    pub scene: SceneSpec,
    pub simulator: SimulatorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for AppConfig {
    fn default() -> AppConfig {
        AppConfig::preset(Preset::Desk)
    }
}

impl AppConfig {
    pub fn preset(which: Preset) -> AppConfig {
        match which {
            Preset::Desk => AppConfig {
                seed: 7,
                skip: 7,
                aggregation: Aggregation::Whole,
                scene: desk_scene(),
                simulator: SimulatorConfig::default(),
                model: ModelConfig {
                    scales: 3,
                    base_width: 8,
                    ..ModelConfig::default()
                },
                train: TrainConfig::desk(),
            },
            Preset::Paper => AppConfig {
                seed: 7,
                skip: 7,
                aggregation: Aggregation::Whole,
                scene: paper_scene(),
                simulator: SimulatorConfig::default(),
                model: ModelConfig::default(),
                train: TrainConfig::paper(),
            },
        }
    }

    /// Overlays `path` onto this configuration. The file may set any
    /// subset of fields; unknown keys are rejected by name.
    pub fn overlay_file(&self, path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::format(path, format!("not valid TOML: {e}")))?;
        let base = toml::Value::try_from(self)
            .map_err(|e| Error::format(path, format!("config serialization failed: {e}")))?;
        let merged = merge(base, file);
        merged
            .try_into()
            .map_err(|e| Error::format(path, format!("bad config field: {e}")))
    }

    /// Preset, then config file, then the seed flag. A top-level `seed` in
    /// the file reseeds the trainer too unless the file pins `train.seed`
    /// itself; the flag reseeds both unconditionally.
    pub fn resolve(
        preset: Preset,
        config_path: Option<&Path>,
        seed_override: Option<u64>,
    ) -> Result<AppConfig> {
        let mut cfg = AppConfig::preset(preset);
        if let Some(path) = config_path {
            cfg = cfg.overlay_file(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let raw: toml::Value = toml::from_str(&text)
                .map_err(|e| Error::format(path, format!("not valid TOML: {e}")))?;
            let file_sets_train_seed = raw
                .get("train")
                .and_then(|t| t.get("seed"))
                .is_some();
            if raw.get("seed").is_some() && !file_sets_train_seed {
                cfg.train.seed = cfg.seed;
            }
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.skip == 0 {
            return Err(Error::invalid("skip must be at least 1"));
        }
        let div = self.model.resolution_divisor();
        if self.scene.width % div != 0 || self.scene.height % div != 0 {
            return Err(Error::invalid(format!(
                "scene {}x{} is not divisible by the model's resolution divisor {div}",
                self.scene.width, self.scene.height
            )));
        }
        Ok(())
    }
}

/// Right-biased recursive merge; tables merge key-wise, everything else is
/// replaced wholesale (arrays included, so object lists swap cleanly).
fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(prev) => merge(prev, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}

/// Two objects exercising the motions linear flow cannot express: a
/// textured square on a parabolic arc and a disk bouncing off the walls.
fn desk_scene() -> SceneSpec {
    SceneSpec {
        width: 64,
        height: 64,
        duration: 2.0,
        fps_gt: 32.0,
        background: 0.12,
        objects: vec![
            ObjectSpec {
                shape: Shape::Textured { half_size: 9.0 },
                intensity: 0.85,
                texture_seed: 11,
                trajectory: Trajectory::Quadratic {
                    pos: (14.0, 20.0),
                    vel: (16.0, 3.0),
                    acc: (-10.0, 6.0),
                },
            },
            ObjectSpec {
                shape: Shape::Disk { radius: 6.0 },
                intensity: 0.55,
                texture_seed: 0,
                trajectory: Trajectory::Bounce {
                    pos: (44.0, 28.0),
                    vel: (-20.0, 26.0),
                },
            },
            ObjectSpec {
                shape: Shape::Textured { half_size: 5.0 },
                intensity: 0.6,
                texture_seed: 5,
                trajectory: Trajectory::Bounce {
                    pos: (50.0, 12.0),
                    vel: (30.0, -38.0),
                },
            },
        ],
    }
}

/// Same scene scaled up for the published training schedule.
fn paper_scene() -> SceneSpec {
    SceneSpec {
        width: 128,
        height: 128,
        duration: 2.0,
        fps_gt: 64.0,
        background: 0.12,
        objects: vec![
            ObjectSpec {
                shape: Shape::Textured { half_size: 18.0 },
                intensity: 0.85,
                texture_seed: 11,
                trajectory: Trajectory::Quadratic {
                    pos: (28.0, 40.0),
                    vel: (32.0, 6.0),
                    acc: (-20.0, 12.0),
                },
            },
            ObjectSpec {
                shape: Shape::Disk { radius: 12.0 },
                intensity: 0.55,
                texture_seed: 0,
                trajectory: Trajectory::Bounce {
                    pos: (88.0, 56.0),
                    vel: (-40.0, 52.0),
                },
            },
            ObjectSpec {
                shape: Shape::Textured { half_size: 10.0 },
                intensity: 0.6,
                texture_seed: 5,
                trajectory: Trajectory::Bounce {
                    pos: (100.0, 24.0),
                    vel: (60.0, -76.0),
                },
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        AppConfig::preset(Preset::Desk).validate().unwrap();
        AppConfig::preset(Preset::Paper).validate().unwrap();
    }

    #[test]
    fn paper_preset_pins_the_published_schedule() {
        let cfg = AppConfig::preset(Preset::Paper);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.lr_decay, 0.1);
        assert_eq!(cfg.train.lr_decay_every, 200);
        assert_eq!(cfg.train.epochs, 500);
        assert_eq!(cfg.model.scales, 4);
        assert_eq!(cfg.model.base_width, 32);
    }

    #[test]
    fn overlay_keeps_unmentioned_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "seed = 99\n[train]\nepochs = 3\n").unwrap();

        let base = AppConfig::preset(Preset::Desk);
        let cfg = base.overlay_file(&path).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.epochs, 3);
        // Untouched fields keep their preset values.
        assert_eq!(cfg.train.lr, base.train.lr);
        assert_eq!(cfg.scene, base.scene);
    }

    #[test]
    fn unknown_and_malformed_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "epochz = 3\n").unwrap();
        assert!(AppConfig::preset(Preset::Desk).overlay_file(&path).is_err());

        std::fs::write(&path, "seed = \"not a number").unwrap();
        assert!(AppConfig::preset(Preset::Desk).overlay_file(&path).is_err());
    }

    #[test]
    fn resolve_propagates_seeds_sensibly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");

        // Top-level seed reseeds the trainer when the file leaves it alone.
        std::fs::write(&path, "seed = 21\n").unwrap();
        let cfg = AppConfig::resolve(Preset::Desk, Some(&path), None).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (21, 21));

        // An explicit train.seed survives a top-level seed.
        std::fs::write(&path, "seed = 21\n[train]\nseed = 5\n").unwrap();
        let cfg = AppConfig::resolve(Preset::Desk, Some(&path), None).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (21, 5));

        // The flag overrides everything.
        let cfg = AppConfig::resolve(Preset::Desk, Some(&path), Some(9)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let cfg = AppConfig::preset(Preset::Desk);
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
