//! Run configuration: a flat JSON file whose keys mirror the command-line
//! flags. Flags given on the command line take precedence.

use std::fs;
use std::path::{Path, PathBuf};

use mtt_core::birth::H1Rule;
use mtt_core::filtering::GammaRule;
use mtt_core::metrics::OspaParams;
use mtt_core::params::{ObservationModel, PriorConfig};
use mtt_core::sampler::SamplerConfig;
use mtt_core::scenario::ScenarioConfig;
use mtt_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every key is optional in the file; missing keys take the defaults below.
///
/// | key | meaning | default |
/// |---|---|---|
/// | `seed` | 64-bit RNG seed (required by simulate, track, learn) | none |
/// | `chains` | independent chains run concurrently | 1 |
/// | `input` | image stack (`.mts` file or frame directory) | none |
/// | `params` | θ as JSON (known θ for track, θ⁰ for learn) | none |
/// | `truth` | ground-truth tracks CSV | none |
/// | `run` | directory written by track or learn | none |
/// | `output` | output directory | none |
/// | `iterations`, `burn_in`, `warmup` | outer iterations, discarded fraction, iterations before θ updates | 1000, 0.25, 0 |
/// | `n1`, `n2`, `n3` | moves, cSMC passes and θ updates per iteration | 30, 1, command-specific |
/// | `particles` | cSMC particles | 15 |
/// | `move_probs` | birth/death, multi-step, one-step, swap | ¼ each |
/// | `gamma_rule` | `min`, `max` or `fixed:<value>` | `min` |
/// | `h1_rule` | `min-one` or `odds` | `min-one` |
/// | `observation_model` | `per_frame`, `pooled` or `noise_only` | `per_frame` |
/// | `prior` | hyperparameters, see `PriorConfig` | diffuse |
/// | `ospa_p`, `ospa_c` | OSPA order and cut-off | 1, 10 |
/// | `bins` | histogram bins in exported summaries | 30 |
/// | `scenario` | synthetic data shape for simulate | 64×64, 20 frames, 5 targets |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub chains: usize,
    pub input: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub iterations: usize,
    pub burn_in: f64,
    pub warmup: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: Option<usize>,
    pub particles: usize,
    pub move_probs: [f64; 4],
    pub gamma_rule: GammaRule,
    pub h1_rule: H1Rule,
    pub observation_model: ObservationModel,
    pub prior: PriorConfig,
    pub ospa_p: f64,
    pub ospa_c: f64,
    pub bins: usize,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            seed: None,
            chains: 1,
            input: None,
            params: None,
            truth: None,
            run: None,
            output: None,
            iterations: s.iterations,
            burn_in: s.burn_in,
            warmup: s.warmup,
            n1: s.n1,
            n2: s.n2,
            n3: None,
            particles: s.csmc.particles,
            move_probs: s.moves.probs,
            gamma_rule: GammaRule::default(),
            h1_rule: H1Rule::default(),
            observation_model: ObservationModel::default(),
            prior: PriorConfig::default(),
            ospa_p: 1.0,
            ospa_c: 10.0,
            bins: 30,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidParams("--seed is required".into()))
    }

    pub fn output(&self) -> Result<&Path> {
        self.output.as_deref().ok_or_else(|| Error::InvalidParams("--output is required".into()))
    }

    /// A path that must name an existing file or directory.
    pub fn existing<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        let p = p.as_deref().ok_or_else(|| Error::InvalidParams(format!("--{flag} is required")))?;
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::InvalidParams(format!("--{flag} {} does not exist", p.display())))
        }
    }

    pub fn ospa(&self) -> Result<OspaParams> {
        if !(self.ospa_p >= 1.0 && self.ospa_c > 0.0) {
            return Err(Error::InvalidParams("OSPA needs p >= 1 and c > 0".into()));
        }
        Ok(OspaParams { p: self.ospa_p, c: self.ospa_c })
    }

    /// Sampler settings; `default_n3` applies when the config leaves n₃ unset.
    pub fn sampler(&self, default_n3: usize) -> Result<SamplerConfig> {
        let mut s = SamplerConfig {
            n1: self.n1,
            n2: self.n2,
            n3: self.n3.unwrap_or(default_n3),
            iterations: self.iterations,
            warmup: self.warmup,
            burn_in: self.burn_in,
            prior: self.prior,
            ..Default::default()
        };
        s.moves.probs = self.move_probs;
        s.moves.birth.gamma_rule = self.gamma_rule;
        s.moves.birth.h1_rule = self.h1_rule;
        s.csmc.particles = self.particles;
        s.learn.observation_model = self.observation_model;
        if self.chains == 0 {
            return Err(Error::InvalidParams("--chains must be at least 1".into()));
        }
        s.validate()?;
        Ok(s)
    }
}
