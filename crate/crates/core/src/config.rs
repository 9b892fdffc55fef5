//! Run configuration layered as defaults < preset or file < overrides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{Interpolation, Normalize};
use crate::pipeline::PipelineConfig;
use crate::refine::RefineConfig;
use crate::warp::DEFAULT_CHUNK_BUDGET;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    OneStage,
    CoarseToFine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub normalize: Normalize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            normalize: Normalize::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpConfig {
    /// Output pixels per chunk.
    pub chunk_budget_px: usize,
    pub interpolation: Interpolation,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            chunk_budget_px: DEFAULT_CHUNK_BUDGET,
            interpolation: Interpolation::Bicubic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Success-rate thresholds in pixels.
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![1.0, 2.0, 3.0, 5.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub input: InputConfig,
    pub pipeline: PipelineConfig,
    pub refine: RefineConfig,
    pub warp: WarpConfig,
    pub eval: EvalConfig,
}

/// Named presets shipped with the library.
pub const PRESETS: [(&str, &str); 4] = [
    (
        "one-stage-sparse",
        include_str!("../presets/one-stage-sparse.toml"),
    ),
    (
        "one-stage-mnn",
        include_str!("../presets/one-stage-mnn.toml"),
    ),
    (
        "c2f-small-ratio",
        include_str!("../presets/c2f-small-ratio.toml"),
    ),
    (
        "c2f-large-ratio",
        include_str!("../presets/c2f-large-ratio.toml"),
    ),
];

pub(crate) fn toml_err(e: toml::de::Error) -> Error {
    Error::Parse {
        offset: e.span().map_or(0, |s| s.start as u64),
        message: e.message().to_string(),
    }
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::invalid(format!(
                "unknown preset {name:?}; available: {}",
                names.join(", ")
            ))
        })?;
        let cfg = RunConfig::default().layered(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a TOML document over the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = RunConfig::default().layered(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a TOML document on top of `self`: keys present in `text`
    /// replace the current values, nested tables merge. The result is not
    /// validated, so several layers may be applied before [`Self::validate`].
    pub fn layered(&self, text: &str) -> Result<Self> {
        let layer: toml::Table = toml::from_str(text).map_err(toml_err)?;
        self.with_table(layer)
    }

    fn with_table(&self, layer: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| Error::invalid(e.to_string()))?;
        merge(&mut base, layer);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Sets one dotted key, e.g. `pipeline.patch_size` = `512`. The value is
    /// read as a TOML value, or as a bare string if it does not parse.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::invalid(format!("bad configuration key {key:?}")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut layer = toml::Table::new();
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut layer;
        for part in &parts[..parts.len() - 1] {
            cur = cur
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("fresh table");
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
        self.with_table(layer)
            .map_err(|e| Error::invalid(format!("cannot set {key}: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::invalid(format!(
                "seed {} exceeds {}",
                self.seed,
                i64::MAX
            )));
        }
        if self.warp.chunk_budget_px == 0 {
            return Err(Error::invalid("chunk budget must be positive"));
        }
        if self.eval.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid("success-rate thresholds must be positive"));
        }
        self.pipeline.validate()?;
        self.refine.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn presets_load_and_round_trip() {
        for (name, _) in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            assert_eq!(
                RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
                cfg,
                "{name}"
            );
        }
        let sparse = RunConfig::preset("one-stage-sparse").unwrap();
        assert_eq!(
            (sparse.pipeline.patch_size, sparse.pipeline.patch_stride),
            (1536, 1152)
        );
        assert_eq!(sparse.pipeline.max_keypoints_per_patch, 3840);
        let mnn = RunConfig::preset("one-stage-mnn").unwrap();
        assert_eq!(
            (mnn.pipeline.patch_size, mnn.pipeline.patch_stride),
            (1024, 768)
        );
        assert_eq!(mnn.pipeline.max_keypoints_per_patch, 2560);
        let large = RunConfig::preset("c2f-large-ratio").unwrap();
        assert_eq!(large.mode, Mode::CoarseToFine);
        assert_eq!(large.refine.regime, crate::refine::Regime::LargeRatio);
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn layering_order() {
        let base = RunConfig::preset("c2f-small-ratio").unwrap();
        let file = base
            .layered("seed = 9\n[pipeline]\npatch_size = 512\npatch_stride = 384\n")
            .unwrap();
        assert_eq!(file.seed, 9);
        assert_eq!(file.pipeline.patch_size, 512);
        // untouched keys keep the preset's values
        assert_eq!(file.pipeline.max_keypoints_per_patch, 2560);
        assert_eq!(file.refine.regime, crate::refine::Regime::SmallRatio);

        let flag = file.with_override("pipeline.patch_size", "768").unwrap();
        assert_eq!((flag.pipeline.patch_size, flag.seed), (768, 9));
        let flag = flag.with_override("refine.regime", "large-ratio").unwrap();
        assert_eq!(flag.refine.regime, crate::refine::Regime::LargeRatio);
        let flag = flag.with_override("refine.th_out", "2.5").unwrap();
        assert_eq!(flag.refine.th_out, Some(2.5));
        let flag = flag
            .with_override("pipeline.detector.blackhat_radii", "[1, 2]")
            .unwrap();
        assert_eq!(flag.pipeline.detector.blackhat_radii, vec![1, 2]);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 1\n").is_err());
        assert!(RunConfig::from_toml("[pipeline]\npatch_sise = 3\n").is_err());
        assert!(RunConfig::default()
            .with_override("pipeline.nope", "1")
            .is_err());
        let small = RunConfig::default()
            .with_override("pipeline.patch_size", "8")
            .unwrap();
        assert!(small.validate().is_err());
        // intermediate states may be invalid as long as the final one is not
        let ok = RunConfig::default()
            .with_override("pipeline.patch_size", "384")
            .and_then(|c| c.with_override("pipeline.patch_stride", "288"))
            .unwrap();
        ok.validate().unwrap();
        assert!(RunConfig::default().with_override("", "1").is_err());
        assert!(matches!(
            RunConfig::from_toml("seed = = 1"),
            Err(Error::Parse { .. })
        ));
    }
}
