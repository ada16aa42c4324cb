//! Run configuration: TOML with `[scenario]`, `[train]` and `[output]`
//! sections. Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use bowsim_core::eval::MetricConvention;
use bowsim_core::fdm::{InitialCondition, OscillatorConfig, AUDIO_RATE, REFERENCE_RATE};
use bowsim_core::nets::{DeepOnetArch, PinnArch};
use bowsim_core::spectra::{LanczosSettings, SlqSettings};
use bowsim_core::train::TrainPlan;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "defaults::f")]
    pub f: f64,
    pub bow_force: f64,
    #[serde(default = "defaults::bow_velocity")]
    pub bow_velocity: f64,
    #[serde(default = "defaults::a")]
    pub a: f64,
    #[serde(default)]
    pub p0: f64,
    #[serde(default)]
    pub q0: f64,
    /// Simulated / predicted span in seconds.
    #[serde(default = "defaults::t_max")]
    pub t_max: f64,
    /// FDM sample rate for the `fdm` pipeline.
    #[serde(default = "defaults::fdm_rate")]
    pub fdm_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    #[default]
    Pinn,
    Deeponet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub net: NetKind,
    pub width: usize,
    /// Number of gated layers `L`.
    pub depth: usize,
    pub c_rff: usize,
    pub sigma_prime: f64,
    /// DeepONet merge width `c_O`.
    pub output_dim: usize,
    pub scale_t: f64,
    pub scale_pq: f64,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub plan: TrainPlan,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            net: NetKind::Pinn,
            width: 100,
            depth: 4,
            c_rff: 50,
            sigma_prime: 1.0,
            output_dim: 200,
            scale_t: 0.1,
            scale_pq: 0.2,
            seed: 0,
            plan: TrainPlan::pinn(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Model consumed by `eval`, `hessian`, `landscape` and `synth`;
    /// relative paths resolve against the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Sample rate of exported trajectory CSVs (must divide the source rate).
    pub csv_rate: f64,
    pub eval: EvalSection,
    pub spectra: SpectraSection,
    pub landscape: LandscapeSection,
    pub synth: SynthSection,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint: None,
            csv_rate: AUDIO_RATE,
            eval: EvalSection::default(),
            spectra: SpectraSection::default(),
            landscape: LandscapeSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cases: usize,
    /// Defaults to `scenario.t_max`.
    pub t_max: Option<f64>,
    pub convention: MetricConvention,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { cases: 100, t_max: None, convention: MetricConvention::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraSection {
    pub top_k: usize,
    pub lanczos: LanczosSettings,
    pub slq: SlqSettings,
}

impl Default for SpectraSection {
    fn default() -> Self {
        Self { top_k: 2, lanczos: LanczosSettings::default(), slq: SlqSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    pub grid_n: usize,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self { grid_n: 21 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthSource {
    #[default]
    Fdm,
    Model,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub source: SynthSource,
    pub file: Option<String>,
}

mod defaults {
    pub fn f() -> f64 {
        100.0
    }
    pub fn bow_velocity() -> f64 {
        0.2
    }
    pub fn a() -> f64 {
        100.0
    }
    pub fn t_max() -> f64 {
        0.1
    }
    pub fn fdm_rate() -> f64 {
        super::REFERENCE_RATE
    }
}

/// Seeds of one run, all derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub plan: u64,
    pub init: u64,
    pub rff: u64,
    pub dataset: u64,
    pub test_set: u64,
    pub spectra: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            plan: master,
            init: master,
            rff: master,
            dataset: master.wrapping_add(1),
            test_set: master.wrapping_add(2),
            spectra: master.wrapping_add(3),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        // DeepONet plans default to the DeepONet schedule unless set explicitly
        let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let plan_keys = raw
            .get("train")
            .and_then(|t| t.get("plan"))
            .and_then(|p| p.as_table())
            .map(|t| t.keys().cloned().collect::<Vec<_>>())
            .unwrap_or_default();
        if cfg.train.net == NetKind::Deeponet {
            let d = TrainPlan::deeponet();
            if !plan_keys.iter().any(|k| k == "decay_steps") {
                cfg.train.plan.decay_steps = d.decay_steps;
            }
            if !plan_keys.iter().any(|k| k == "annealing") {
                cfg.train.plan.annealing = d.annealing;
            }
        }
        if plan_keys.iter().any(|k| k == "seed") {
            return Err(CliError::Config("[train.plan] seed is derived from [train] seed; set that instead".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.train.seed)
    }

    /// Applies `--seed` and refreshes the plan seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.train.plan.seed = self.seeds().plan;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        OscillatorConfig::new(s.f, s.bow_force, s.bow_velocity, s.a).map_err(|e| CliError::Config(e.to_string()))?;
        InitialCondition::new(s.p0, s.q0).map_err(|e| CliError::Config(e.to_string()))?;
        if !(s.t_max > 0.0 && s.t_max.is_finite()) {
            return Err(CliError::Config(format!("scenario.t_max must be > 0, got {}", s.t_max)));
        }
        self.train.plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
        match self.train.net {
            NetKind::Pinn => self.pinn_arch().validate(),
            NetKind::Deeponet => self.deeponet_arch().validate(),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.output.csv_rate > 0.0) {
            return Err(CliError::Config("output.csv_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn oscillator(&self) -> OscillatorConfig {
        let s = &self.scenario;
        OscillatorConfig::new(s.f, s.bow_force, s.bow_velocity, s.a).expect("validated")
    }

    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition { p0: self.scenario.p0, q0: self.scenario.q0 }
    }

    pub fn plan(&self) -> TrainPlan {
        TrainPlan { seed: self.seeds().plan, ..self.train.plan.clone() }
    }

    pub fn pinn_arch(&self) -> PinnArch {
        let t = &self.train;
        PinnArch {
            width: t.width,
            depth: t.depth,
            c_rff: t.c_rff,
            sigma_prime: t.sigma_prime,
            scale_t: t.scale_t,
            scale_pq: t.scale_pq,
            t_start: 0.0,
            rff_seed: self.seeds().rff,
        }
    }

    pub fn deeponet_arch(&self) -> DeepOnetArch {
        let t = &self.train;
        DeepOnetArch {
            width: t.width,
            depth: t.depth,
            c_rff: t.c_rff,
            sigma_prime: t.sigma_prime,
            output_dim: t.output_dim,
            scale_t: t.scale_t,
            scale_pq: t.scale_pq,
            rff_seed: self.seeds().rff,
        }
    }

    pub fn eval_t_max(&self) -> f64 {
        self.output.eval.t_max.unwrap_or(self.scenario.t_max)
    }
}
