use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use splatpose_core::losses::LossWeights;
use splatpose_core::optimizer::OptimizerConfig;
use splatpose_core::scene::{Layout, SynthSpec};

use crate::HarnessError;

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoMatching,
    NoComparing,
}

impl Ablation {
    /// Zeroes the disabled term; the other weight is kept as configured.
    pub fn apply(self, w: LossWeights) -> LossWeights {
        match self {
            Self::Full => w,
            Self::NoMatching => LossWeights { w_m: 0.0, ..w },
            Self::NoComparing => LossWeights { w_c: 0.0, ..w },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoMatching => "no_matching",
            Self::NoComparing => "no_comparing",
        }
    }
}

/// `builtin`, `oracle`, or `file:<path>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MatcherChoice {
    Builtin,
    Oracle,
    File(PathBuf),
}

impl FromStr for MatcherChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "builtin" => Ok(Self::Builtin),
            "oracle" => Ok(Self::Oracle),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!("unknown matcher {s:?}; expected builtin, oracle or file:<path>")),
            },
        }
    }
}

impl TryFrom<String> for MatcherChoice {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MatcherChoice> for String {
    fn from(m: MatcherChoice) -> String {
        m.to_string()
    }
}

impl fmt::Display for MatcherChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Builtin => f.write_str("builtin"),
            Self::Oracle => f.write_str("oracle"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// How rotation buckets are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalStyle {
    /// Each bucket is its own `[lo, hi]`.
    Disjoint,
    /// Every bucket starts at 0; only the upper bounds are used.
    Cumulative,
}

/// A PLY file, or a synthetic scene when `path` is unset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub path: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl FromStr for SceneConfig {
    type Err = String;

    /// `path/to/scene.ply` or `synth:key=value,...` with keys `count`, `seed`,
    /// `extent` (half box size), `scale_min`, `scale_max`, `layout` (`volume`
    /// or `shell`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(spec) = s.strip_prefix("synth:") else {
            return Ok(Self {
                path: Some(PathBuf::from(s)),
                synth: SynthSpec::default(),
            });
        };
        let mut synth = SceneConfig::default().synth;
        for kv in spec.split(',').filter(|t| !t.is_empty()) {
            let (key, val) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in synth spec, got {kv:?}"))?;
            let num = || val.parse::<f64>().map_err(|e| format!("{key}: {e}"));
            match key {
                "count" => synth.count = val.parse().map_err(|e| format!("count: {e}"))?,
                "seed" => synth.seed = val.parse().map_err(|e| format!("seed: {e}"))?,
                "extent" => {
                    let e = num()?;
                    synth.box_min = [-e; 3];
                    synth.box_max = [e; 3];
                }
                "scale_min" => synth.scale_range.0 = num()?,
                "scale_max" => synth.scale_range.1 = num()?,
                "layout" => {
                    synth.layout = match val {
                        "volume" => Layout::Volume,
                        "shell" => Layout::Shell,
                        _ => return Err(format!("unknown layout {val:?}")),
                    }
                }
                _ => return Err(format!("unknown synth key {key:?}")),
            }
        }
        Ok(Self { path: None, synth })
    }
}

/// Ground-truth views look at `target` from `distance`, at a random azimuth
/// and an elevation inside the given band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub distance: f64,
    pub target: [f64; 3],
    pub max_elevation_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            hfov_deg: 50.0,
            distance: 2.5,
            target: [0.0; 3],
            max_elevation_deg: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub master_seed: u64,
    pub trials_per_bucket: usize,
    pub interval_style: IntervalStyle,
    /// Rotation perturbation intervals, degrees.
    pub rotation_buckets: Vec<[f64; 2]>,
    /// Per-axis translation offset bound, meters.
    pub translation_range_m: f64,
    /// Paired with `trans_thresholds_m`; a trial succeeds at threshold `i`
    /// when both errors are within the `i`-th entries.
    pub rot_thresholds_deg: Vec<f64>,
    pub trans_thresholds_m: Vec<f64>,
    pub outlier_deg: f64,
    pub ablation: Ablation,
    pub matcher: MatcherChoice,
    /// Means sampled per step by the oracle matcher.
    pub oracle_samples: usize,
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            trials_per_bucket: 50,
            interval_style: IntervalStyle::Disjoint,
            rotation_buckets: vec![[0.0, 20.0], [20.0, 40.0], [40.0, 60.0]],
            translation_range_m: 0.2,
            rot_thresholds_deg: vec![1.0, 5.0, 10.0],
            trans_thresholds_m: vec![0.01, 0.05, 0.10],
            outlier_deg: 20.0,
            ablation: Ablation::Full,
            matcher: MatcherChoice::Builtin,
            oracle_samples: 128,
            scene: SceneConfig::default(),
            camera: CameraConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Buckets as actually sampled, after applying the interval style.
    pub fn buckets(&self) -> Vec<(f64, f64)> {
        self.rotation_buckets
            .iter()
            .map(|&[lo, hi]| match self.interval_style {
                IntervalStyle::Disjoint => (lo, hi),
                IntervalStyle::Cumulative => (0.0, hi),
            })
            .collect()
    }

    /// Loss weights after the ablation.
    pub fn weights(&self) -> LossWeights {
        self.ablation.apply(self.optimizer.weights)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.rotation_buckets.is_empty() {
            return bad("at least one rotation bucket is required".into());
        }
        let mut prev_hi = f64::NEG_INFINITY;
        for &[lo, hi] in &self.rotation_buckets {
            if !(0.0 <= lo && lo <= hi && hi < 180.0) {
                return bad(format!("rotation bucket [{lo}, {hi}] outside [0, 180)"));
            }
            let ordered = match self.interval_style {
                IntervalStyle::Disjoint => lo >= prev_hi,
                IntervalStyle::Cumulative => hi > prev_hi,
            };
            if !ordered {
                return bad(format!("rotation bucket [{lo}, {hi}] overlaps or is out of order"));
            }
            prev_hi = hi;
        }
        if self.rot_thresholds_deg.len() != self.trans_thresholds_m.len() {
            return bad("rotation and translation threshold lists differ in length".into());
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| *x > 0.0);
        if !increasing(&self.rot_thresholds_deg) || !increasing(&self.trans_thresholds_m) {
            return bad("thresholds must be positive and increasing".into());
        }
        if !(self.translation_range_m >= 0.0 && self.translation_range_m.is_finite()) {
            return bad(format!("translation range {}", self.translation_range_m));
        }
        if !(self.outlier_deg > 0.0) {
            return bad(format!("outlier threshold {}", self.outlier_deg));
        }
        let cam = &self.camera;
        if !(cam.distance > 0.0) || !(0.0..90.0).contains(&cam.max_elevation_deg) {
            return bad("camera distance must be positive and elevation below 90".into());
        }
        if self.matcher == MatcherChoice::Oracle && self.oracle_samples == 0 {
            return bad("oracle_samples must be at least 1".into());
        }
        self.weights()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let cfg = BenchmarkConfig::default();
        let back = BenchmarkConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = BenchmarkConfig::from_toml(
            "trials_per_bucket = 3\nablation = \"no_matching\"\n[optimizer]\nmax_iters = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.trials_per_bucket, 3);
        assert_eq!(cfg.optimizer.max_iters, 10);
        assert_eq!(cfg.optimizer.lr, OptimizerConfig::default().lr);
        assert_eq!(cfg.weights().w_m, 0.0);
    }

    #[test]
    fn rejects_overlapping_buckets() {
        let cfg = BenchmarkConfig {
            rotation_buckets: vec![[0.0, 30.0], [20.0, 40.0]],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cumulative = BenchmarkConfig {
            interval_style: IntervalStyle::Cumulative,
            rotation_buckets: vec![[0.0, 20.0], [0.0, 40.0], [0.0, 60.0]],
            ..Default::default()
        };
        assert!(cumulative.validate().is_ok());
        assert_eq!(cumulative.buckets()[2], (0.0, 60.0));
    }

    #[test]
    fn matcher_and_scene_strings() {
        assert_eq!("oracle".parse::<MatcherChoice>().unwrap(), MatcherChoice::Oracle);
        assert_eq!(
            "file:m.txt".parse::<MatcherChoice>().unwrap(),
            MatcherChoice::File("m.txt".into())
        );
        assert!("loftr".parse::<MatcherChoice>().is_err());
        let s: SceneConfig = "synth:count=20,seed=4,extent=0.5".parse().unwrap();
        assert_eq!((s.synth.count, s.synth.seed, s.synth.box_max), (20, 4, [0.5; 3]));
        assert!(s.path.is_none());
        assert!("synth:bogus=1".parse::<SceneConfig>().is_err());
        let p: SceneConfig = "room.ply".parse().unwrap();
        assert_eq!(p.path.as_deref(), Some(Path::new("room.ply")));
    }
}
