use std::fs;
use std::path::{Path, PathBuf};

use bos_tomo::optim::TrainConfig;
use bos_tomo::scene::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::commands::Command;
use crate::Failure;

pub const TOOL: &str = "bos-tomo";

/// A command with every input resolved: absolute file paths plus inline scene and
/// training configuration. Written as `manifest.json` next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Directory relative texture paths in the scene resolve against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl Manifest {
    pub fn new(command: Command, scene: Option<(SceneConfig, PathBuf)>, train: Option<TrainConfig>) -> Self {
        let (scene, scene_dir) = match scene {
            Some((s, d)) => (Some(s), Some(d)),
            None => (None, None),
        };
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            scene_dir,
            scene,
            train,
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.tool != TOOL {
            return Err(Failure::Usage(format!("manifest was written by '{}', not {TOOL}", m.tool)));
        }
        Ok(m)
    }

    /// The recorded run, optionally redirected to another output directory.
    pub fn into_invocation(mut self, out: Option<PathBuf>) -> Result<Self, Failure> {
        if let Some(o) = out {
            let o = if o.is_absolute() { o } else { std::env::current_dir()?.join(o) };
            self.command.set_out(o);
        }
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
