//! Run configuration files.
//!
//! A config is TOML restricted to one level of `[section]` headers:
//!
//! ```toml
//! [loop]                  # any LoopConfig field; `preset` supplies defaults
//! preset = "gp_base"
//! dataset = "air"
//! seed = 3
//!
//! [paths]                 # relative to the config file
//! dataset = "data/series.csv"
//! metadata = "data/series.txt"
//! proposer_fixture = "proposals.json"
//! critic_fixture = "critic.json"
//! templates = "templates"
//! output_dir = "runs"
//!
//! [data]
//! target = "length"       # modeled column of a table
//! split = 120             # first held-out row of a series
//! train_end = 10.0        # last training time of a trajectory
//! seed = 0                # noise seed of simulated presets
//! ```
//!
//! Unknown sections and keys are rejected.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::boxloop::LoopConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub proposer_fixture: Option<PathBuf>,
    pub critic_fixture: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOptions {
    pub target: Option<String>,
    pub split: Option<usize>,
    pub train_end: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loop_config: LoopConfig,
    pub paths: Paths,
    pub data: DataOptions,
}

const SECTIONS: [&str; 3] = ["loop", "paths", "data"];

impl RunConfig {
    /// Config built from a preset with no overrides.
    pub fn preset(name: &str) -> Result<Self, IoError> {
        Ok(Self { loop_config: LoopConfig::preset(name)?, paths: Paths::default(), data: DataOptions::default() })
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, IoError> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| IoError::Config(e.to_string()))?;
        let mut sections: [toml::Table; 3] = Default::default();
        for (name, value) in doc {
            let i = SECTIONS
                .iter()
                .position(|s| *s == name)
                .ok_or_else(|| IoError::Config(format!("unknown section `{name}` (expected {})", SECTIONS.join(", "))))?;
            let toml::Value::Table(t) = value else {
                return Err(IoError::Config(format!("`{name}` must be a [section]")));
            };
            if let Some((k, _)) = t.iter().find(|(_, v)| v.is_table() || v.is_array()) {
                return Err(IoError::Config(format!("[{name}] {k}: nested values are not allowed")));
            }
            sections[i] = t;
        }
        let [lp, paths, data] = sections;
        let mut paths: Paths = toml::Value::Table(paths).try_into().map_err(|e| section_error("paths", e))?;
        let data: DataOptions = toml::Value::Table(data).try_into().map_err(|e| section_error("data", e))?;
        for p in [
            &mut paths.dataset,
            &mut paths.metadata,
            &mut paths.proposer_fixture,
            &mut paths.critic_fixture,
            &mut paths.templates,
            &mut paths.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = join_clean(base, p);
            }
        }
        Ok(Self { loop_config: loop_config(lp)?, paths, data })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Dataset spec: the explicit path if given, else the loop's dataset
    /// name.
    pub fn dataset_spec(&self) -> String {
        match &self.paths.dataset {
            Some(p) => p.display().to_string(),
            None => self.loop_config.dataset.clone(),
        }
    }

    /// Overrides one key: `section.key` or a bare `[loop]` key. The value is
    /// read as a TOML scalar, or else taken as a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), IoError> {
        let (section, key) = key.split_once('.').unwrap_or(("loop", key));
        let value: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut doc: toml::Table = self.to_toml()?.parse().map_err(|e: toml::de::Error| IoError::Config(e.to_string()))?;
        let Some(toml::Value::Table(t)) = doc.get_mut(section) else {
            return Err(IoError::Config(format!("unknown section `{section}`")));
        };
        // A new preset replaces the preset defaults, not just the name.
        if section == "loop" && key == "preset" {
            t.retain(|k, _| k == "dataset" || k == "seed");
        }
        t.insert(key.to_string(), value);
        *self = Self::parse(&toml::to_string(&doc).map_err(|e| IoError::Config(e.to_string()))?, Path::new(""))?;
        Ok(())
    }

    /// The config as TOML, with every loop field spelled out.
    pub fn to_toml(&self) -> Result<String, IoError> {
        let mut doc = toml::Table::new();
        doc.insert("loop".into(), to_table(&self.loop_config)?.into());
        doc.insert("paths".into(), to_table(&self.paths)?.into());
        doc.insert("data".into(), to_table(&self.data)?.into());
        toml::to_string(&doc).map_err(|e| IoError::Config(e.to_string()))
    }
}

/// `base/rel` with `..` folded into preceding normal components.
fn join_clean(base: &Path, rel: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in base.join(rel).components() {
        match c {
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            Component::CurDir => {}
            c => out.push(c),
        }
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

fn section_error(name: &str, e: toml::de::Error) -> IoError {
    IoError::Config(format!("[{name}] {}", e.message()))
}

fn to_table<T: Serialize>(v: &T) -> Result<toml::Table, IoError> {
    toml::Table::try_from(v).map_err(|e| IoError::Config(e.to_string()))
}

/// Preset defaults (if `preset` is set) overlaid with the given keys.
fn loop_config(overrides: toml::Table) -> Result<LoopConfig, IoError> {
    let base = match overrides.get("preset") {
        Some(toml::Value::String(name)) => LoopConfig::preset(name)?,
        Some(_) => return Err(IoError::Config("[loop] preset must be a string".into())),
        None => LoopConfig::default(),
    };
    let mut table = to_table(&base)?;
    table.extend(overrides);
    let cfg: LoopConfig = toml::Value::Table(table).try_into().map_err(|e| section_error("loop", e))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxloop::{AgentKind, Backend, PRESETS};

    #[test]
    fn preset_with_overrides() {
        let text = "[loop]\npreset = \"gp_augmented\"\ndataset = \"air\"\nseed = 4\nrounds = 5\n\n[paths]\noutput_dir = \"runs\"\n";
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        let l = &c.loop_config;
        assert_eq!((l.backend, l.rounds, l.proposals, l.seed), (Backend::Gp, 5, 8, 4));
        assert!(l.augmented_kernels);
        assert_eq!(c.paths.output_dir.as_deref(), Some(Path::new("/cfg/runs")));
    }

    #[test]
    fn presets_match_loop_presets() {
        for p in PRESETS {
            let c = RunConfig::parse(&format!("[loop]\npreset = \"{p}\"\n"), Path::new(".")).unwrap();
            assert_eq!(c.loop_config, LoopConfig::preset(p).unwrap());
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "[loop]\nroundz = 3\n",
            "[paths]\ndata = \"x\"\n",
            "[data]\ntargets = \"y\"\n",
            "[other]\nx = 1\n",
            "top = 1\n",
            "[loop]\npreset = \"nope\"\n",
            "[loop]\nproposer = \"human\"\n",
            "[loop]\n[loop.sub]\nx = 1\n",
        ] {
            assert!(matches!(RunConfig::parse(text, Path::new(".")), Err(IoError::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[loop]\nproposals = 2\nexemplars = 3\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_are_folded() {
        assert_eq!(join_clean(Path::new("a/b"), Path::new("../../runs")), Path::new("runs"));
        assert_eq!(join_clean(Path::new("/x/y"), Path::new("./z/../w")), Path::new("/x/y/w"));
        assert_eq!(join_clean(Path::new(""), Path::new("..")), Path::new(".."));
        assert_eq!(join_clean(Path::new("a"), Path::new("..")), Path::new("."));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::preset("gp_base").unwrap();
        c.set("rounds", "7").unwrap();
        c.set("loop.dataset", "air").unwrap();
        c.set("data.split", "100").unwrap();
        c.set("paths.output_dir", "out/runs").unwrap();
        assert_eq!((c.loop_config.rounds, c.loop_config.dataset.as_str(), c.data.split), (7, "air", Some(100)));
        assert_eq!(c.paths.output_dir.as_deref(), Some(Path::new("out/runs")));
        c.set("preset", "ppl_default").unwrap();
        assert_eq!((c.loop_config.backend, c.loop_config.rounds, c.loop_config.dataset.as_str()), (Backend::Ppl, 3, "air"));
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("nope.key", "1").is_err());
        assert!(c.set("rounds", "three").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::preset("lv_ws_constraint").unwrap();
        c.loop_config.proposer = AgentKind::Scripted;
        c.data.train_end = Some(10.0);
        c.paths.output_dir = Some("/tmp/runs".into());
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text, Path::new("/elsewhere")).unwrap(), c);
    }
}
