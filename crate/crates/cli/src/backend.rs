use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context};
use iou_sketch::{BlobStore, DirStore, LatencyModel, SimulatedStore};
use serde::Deserialize;

/// Where blobs live, as given by `--store`.
#[derive(Debug, Clone, PartialEq)]
pub enum StoreArg {
    Dir(PathBuf),
    /// A directory behind modeled object-storage latency, configured by a TOML file.
    Sim(PathBuf),
    /// S3-compatible endpoint configured through `IOU_S3_*` variables.
    Cloud,
}

impl FromStr for StoreArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("dir", path)) if !path.is_empty() => Ok(StoreArg::Dir(path.into())),
            Some(("sim", path)) if !path.is_empty() => Ok(StoreArg::Sim(path.into())),
            None if s == "cloud" => Ok(StoreArg::Cloud),
            _ => Err(format!("expected dir:<path>, sim:<config.toml> or cloud, got {s:?}")),
        }
    }
}

/// Contents of a `sim:` configuration file.
///
/// ```toml
/// root = "data"
/// [latency]
/// base_ms = 50.0
/// jitter = 0.1
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Directory holding the blobs; relative paths resolve against the file.
    pub root: PathBuf,
    #[serde(default)]
    pub latency: LatencyModel,
}

impl StoreArg {
    pub fn open(&self) -> anyhow::Result<Arc<dyn BlobStore>> {
        Ok(match self {
            StoreArg::Dir(path) => Arc::new(DirStore::new(path)?),
            StoreArg::Sim(file) => {
                let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
                let config: SimConfig = toml::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
                let root = match file.parent() {
                    Some(dir) if config.root.is_relative() => dir.join(&config.root),
                    _ => config.root,
                };
                Arc::new(SimulatedStore::new(Arc::new(DirStore::new(root)?), config.latency))
            }
            StoreArg::Cloud => open_cloud()?,
        })
    }
}

#[cfg(feature = "http")]
fn open_cloud() -> anyhow::Result<Arc<dyn BlobStore>> {
    Ok(Arc::new(iou_sketch::store::http::HttpStore::from_env()?))
}

#[cfg(not(feature = "http"))]
fn open_cloud() -> anyhow::Result<Arc<dyn BlobStore>> {
    bail!("built without the http feature")
}

/// Comma-separated list such as `1,2,4,8`.
pub fn parse_list<T: FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{x:?}: {e}")))
        .collect::<anyhow::Result<_>>()?;
    if items.is_empty() {
        bail!("empty list");
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_args() {
        assert_eq!("dir:/tmp/x".parse(), Ok(StoreArg::Dir("/tmp/x".into())));
        assert_eq!("sim:s.toml".parse(), Ok(StoreArg::Sim("s.toml".into())));
        assert_eq!("cloud".parse(), Ok(StoreArg::Cloud));
        assert!("dir:".parse::<StoreArg>().is_err());
        assert!("s3://bucket".parse::<StoreArg>().is_err());
    }

    #[test]
    fn sim_config_resolves_relative_root() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("blobs")).unwrap();
        std::fs::write(dir.path().join("blobs/a"), b"abc").unwrap();
        let file = dir.path().join("sim.toml");
        std::fs::write(&file, "root = \"blobs\"\n[latency]\nbase_ms = 0.0\n").unwrap();
        let store = StoreArg::Sim(file).open().unwrap();
        assert_eq!(store.get_full("a").unwrap(), b"abc");
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<u32>("1, 2,4").unwrap(), vec![1, 2, 4]);
        assert!(parse_list::<u32>("1,x").is_err());
    }
}
