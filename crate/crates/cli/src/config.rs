//! The run-configuration file: a JSON document with `l1`, `l2`, `latency`,
//! `prefetcher` and `warmup` sections. Absent keys take the default core
//! configuration; unknown keys are rejected. `--set path=value` overrides
//! individual keys, which is also how sweeps mutate the config.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use fetchsim_core::cache::CacheGeometry;
use fetchsim_core::engine::{EngineConfig, DEFAULT_BEYOND_L2_LATENCY, DEFAULT_L1, DEFAULT_L2};
use fetchsim_core::prefetcher::PrefetcherConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub l1: CacheSection,
    pub l2: CacheSection,
    pub latency: LatencySection,
    pub prefetcher: Option<PrefetcherConfig>,
    pub warmup: WarmupSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheSection {
    pub kb: Option<u64>,
    pub ways: Option<u32>,
    pub hit_latency: Option<u64>,
}

impl CacheSection {
    fn to_geometry(&self, defaults: &CacheGeometry) -> CacheGeometry {
        CacheGeometry {
            total_bytes: self.kb.map(|kb| kb * 1024).unwrap_or(defaults.total_bytes),
            ways: self.ways.unwrap_or(defaults.ways),
            hit_latency: self.hit_latency.unwrap_or(defaults.hit_latency),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencySection {
    pub beyond_l2: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupSection {
    pub instructions: Option<u64>,
}

impl RunConfigFile {
    pub fn to_engine_config(&self) -> Result<EngineConfig> {
        let config = EngineConfig {
            l1: self.l1.to_geometry(&DEFAULT_L1),
            l2: self.l2.to_geometry(&DEFAULT_L2),
            beyond_l2_latency: self.latency.beyond_l2.unwrap_or(DEFAULT_BEYOND_L2_LATENCY),
            prefetcher: self.prefetcher.unwrap_or_default(),
            warmup_instructions: self.warmup.instructions,
        };
        config.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(config)
    }
}

/// Loads and validates a config document; `None` means all defaults.
pub fn load_config(path: Option<&std::path::Path>, overrides: &[String]) -> Result<RunConfigFile> {
    let mut value: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    for spec in overrides {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects path=value, got {spec:?}"))?;
        set_path(&mut value, path, parse_scalar(raw))?;
    }
    seed_prefetcher_kind(&mut value);
    parse_config_value(value)
}

/// Overrides like `prefetcher.lookahead=5` imply the default kind when the
/// document never named one.
pub fn seed_prefetcher_kind(value: &mut Value) {
    if let Some(map) = value.get_mut("prefetcher").and_then(Value::as_object_mut) {
        map.entry("kind")
            .or_insert_with(|| Value::String("mana".into()));
    }
}

pub fn parse_config_value(value: Value) -> Result<RunConfigFile> {
    serde_json::from_value(value).map_err(|e| anyhow!("invalid config: {e}"))
}

/// Parses an override value: JSON scalar if it reads as one, else a string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets a dotted path inside a JSON object tree, creating maps as needed.
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow!("config path {path:?}: {part:?} is not an object"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

/// Keys `sweep --vary` accepts, mapped onto config paths.
pub fn sweep_path(key: &str) -> Result<&'static str> {
    Ok(match key {
        "lookahead" => "prefetcher.lookahead",
        "srq_length" => "prefetcher.srq_length",
        "table_entries" => "prefetcher.table_entries",
        "table_ways" => "prefetcher.table_ways",
        "partial_tag_bits" => "prefetcher.partial_tag_bits",
        "sab_count" => "prefetcher.sab_count",
        "sab_capacity" => "prefetcher.sab_capacity",
        "geometry" => "prefetcher.geometry",
        "l1.kb" => "l1.kb",
        other => bail!(
            "unknown sweep key {other:?} (expected one of: lookahead, srq_length, \
             table_entries, table_ways, partial_tag_bits, geometry, l1.kb, \
             sab_count, sab_capacity)"
        ),
    })
}

/// Parses one sweep value for a key; `geometry` takes `BEHIND:AHEAD`.
pub fn sweep_value(key: &str, raw: &str) -> Result<Value> {
    if key == "geometry" {
        let (behind, ahead) = raw
            .split_once(':')
            .ok_or_else(|| anyhow!("geometry values look like BEHIND:AHEAD, got {raw:?}"))?;
        let behind: u8 = behind.trim().parse().context("geometry behind")?;
        let ahead: u8 = ahead.trim().parse().context("geometry ahead")?;
        return Ok(serde_json::json!({ "behind": behind, "ahead": ahead }));
    }
    let n: u64 = raw
        .trim()
        .parse()
        .with_context(|| format!("sweep value {raw:?} for {key:?} is not a number"))?;
    Ok(Value::from(n))
}
