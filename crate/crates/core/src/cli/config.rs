//! Run configuration: the JSON document that fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuits::{
    build_dd_schedule, build_free_schedule, build_ghz_schedule, ghz_state, ghz_to_rad_per_ns, hadamard_transform_state,
    plus_state_computational, w_state, Basis, InitialState, Noise, Schedule, SparseState,
};
use crate::error::{Error, Result};
use crate::estimators::{ObservableSpec, DEFAULT_BOOTSTRAP_RESAMPLES};
use crate::operators::ONE;
use crate::redfield::{build_model, RedfieldParams};
use crate::stepper::{observation_grid, DtPolicy, Method};
use crate::walkers::DEFAULT_INITIATOR_XI;

pub const SCHEMA_VERSION: u32 = 1;

/// Default Redfield window in the model's time units.
pub const DEFAULT_REDFIELD_DURATION: f64 = 10.0;

const DENSE_TARGET_MAX_QUBITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    DdPlus,
    DdW,
    Free,
    Ghz,
    Redfield,
}

fn default_tau() -> f64 {
    100.0
}
fn default_j_khz() -> f64 {
    100.0
}
fn default_one() -> usize {
    1
}
fn default_xi() -> f64 {
    DEFAULT_INITIATOR_XI
}
fn default_method() -> Method {
    Method::Ab2
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_resamples() -> usize {
    DEFAULT_BOOTSTRAP_RESAMPLES
}

/// Times are in ns except for `redfield`, which uses the model's units.
/// `t1`/`t2` set to `null` omit the corresponding channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub n: usize,
    #[serde(default)]
    pub total_duration: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub t1: Option<f64>,
    #[serde(default)]
    pub t2: Option<f64>,
    #[serde(default = "default_j_khz")]
    pub j_khz: f64,
    /// Initial state of `free` runs (default `plus`).
    #[serde(default)]
    pub initial: Option<InitialState>,
    pub n_diag: u64,
    pub n_samples: usize,
    #[serde(default = "default_one")]
    pub n_replicas: usize,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub dt: DtPolicy,
    pub seed: u64,
    #[serde(default)]
    pub observation_stride: Option<f64>,
    /// Write population snapshots every this many time units.
    #[serde(default)]
    pub snapshot_stride: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub redfield: Option<RedfieldParams>,
    #[serde(default)]
    pub trace_renormalize: bool,
    #[serde(default)]
    pub basis_override: Option<Basis>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

impl RunConfig {
    /// A ready-to-run configuration for each experiment.
    pub fn template(experiment: Experiment) -> Self {
        let base = RunConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            n: 4,
            total_duration: Some(5000.0),
            tau: default_tau(),
            t1: Some(1e5),
            t2: Some(5e4),
            j_khz: default_j_khz(),
            initial: None,
            n_diag: 100_000,
            n_samples: 4,
            n_replicas: 1,
            xi: DEFAULT_INITIATOR_XI,
            method: Method::Ab2,
            dt: DtPolicy::default(),
            seed: 42,
            observation_stride: None,
            snapshot_stride: None,
            output_dir: default_output(),
            redfield: None,
            trace_renormalize: false,
            basis_override: None,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
        };
        match experiment {
            Experiment::DdPlus | Experiment::DdW => base,
            Experiment::Free => RunConfig { initial: Some(InitialState::Plus), ..base },
            Experiment::Ghz => RunConfig { total_duration: None, ..base },
            Experiment::Redfield => RunConfig {
                n: 2,
                total_duration: Some(DEFAULT_REDFIELD_DURATION),
                t1: None,
                t2: None,
                j_khz: 0.0,
                n_diag: 1_000_000,
                n_samples: 1,
                redfield: Some(RedfieldParams::REFERENCE),
                ..base
            },
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON with `seed` and `output_dir` removed.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("seed");
            m.remove("output_dir");
        }
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.n_diag == 0 || self.n_samples == 0 || self.n_replicas == 0 {
            return Err(Error::Config("n_diag, n_samples and n_replicas must be positive".into()));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::Config(format!("xi must be non-negative, got {}", self.xi)));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap_resamples must be positive".into()));
        }
        if !self.j_khz.is_finite() {
            return Err(Error::Config("j_khz must be finite".into()));
        }
        for (name, v) in [("observation_stride", self.observation_stride), ("snapshot_stride", self.snapshot_stride)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        match self.experiment {
            Experiment::DdPlus | Experiment::DdW | Experiment::Ghz if self.n < 2 => {
                Err(Error::Config(format!("{:?} needs n >= 2", self.experiment)))
            }
            Experiment::DdPlus | Experiment::DdW | Experiment::Free if self.total_duration.is_none() => {
                Err(Error::Config("total_duration is required".into()))
            }
            Experiment::Redfield if self.n != 2 => Err(Error::Config("redfield runs have n = 2".into())),
            Experiment::Redfield if self.redfield.is_none() => Err(Error::Config("redfield parameters missing".into())),
            _ => Ok(()),
        }
    }

    pub fn noise(&self) -> Noise {
        Noise::new(self.t1, self.t2)
    }

    pub fn j_rad_per_ns(&self) -> f64 {
        ghz_to_rad_per_ns(self.j_khz * 1e-6)
    }

    fn initial_state(&self) -> InitialState {
        match self.experiment {
            Experiment::DdW => InitialState::W,
            Experiment::Free => self.initial.unwrap_or(InitialState::Plus),
            _ => InitialState::Plus,
        }
    }

    pub fn build_schedule(&self) -> Result<Schedule> {
        self.validate()?;
        let duration = self.total_duration.unwrap_or(0.0);
        let j = self.j_rad_per_ns();
        let sched = match self.experiment {
            Experiment::DdPlus | Experiment::DdW => {
                build_dd_schedule(self.n, duration, self.tau, self.noise(), j, self.initial_state())?
            }
            Experiment::Free => build_free_schedule(self.n, duration, self.noise(), j, self.initial_state())?,
            Experiment::Ghz => build_ghz_schedule(self.n, self.noise(), j)?,
            Experiment::Redfield => {
                let model = build_model(self.redfield.as_ref().expect("validated"))?;
                let d = self.total_duration.unwrap_or(DEFAULT_REDFIELD_DURATION);
                let basis = match self.basis_override {
                    None | Some(Basis::Eigenbasis) => Basis::Eigenbasis,
                    Some(b) => b,
                };
                return model.schedule(d, basis);
            }
        };
        match self.basis_override {
            Some(b) if b != sched.basis => {
                if b == Basis::Eigenbasis {
                    return Err(Error::Config("the eigenbasis frame applies to redfield runs only".into()));
                }
                sched.hadamard_transformed()
            }
            _ => Ok(sched),
        }
    }

    pub fn observation_stride_or_default(&self) -> f64 {
        self.observation_stride.unwrap_or(match self.experiment {
            Experiment::Ghz => 1.0,
            Experiment::Redfield => 0.05,
            _ => 10.0,
        })
    }

    pub fn observation_times(&self, schedule: &Schedule) -> Result<Vec<f64>> {
        observation_grid(schedule.duration(), self.observation_stride_or_default())
    }

    /// Observation times at which snapshots are written.
    pub fn snapshot_indices(&self, times: &[f64]) -> Vec<usize> {
        let Some(stride) = self.snapshot_stride else { return Vec::new() };
        let last = times.len().saturating_sub(1);
        times
            .iter()
            .enumerate()
            .filter(|&(k, &t)| {
                let x = t / stride;
                k == last || (x - x.round()).abs() < 1e-6
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Observables reported for this experiment, expressed in the schedule's frame.
    pub fn observables(&self, schedule: &Schedule) -> Result<Vec<ObservableSpec>> {
        let n = self.n;
        let in_frame = |computational: SparseState| -> Result<SparseState> {
            match schedule.basis {
                Basis::Hadamard => {
                    if n > DENSE_TARGET_MAX_QUBITS {
                        return Err(Error::SizeGuard { what: "rotated fidelity target", n, max: DENSE_TARGET_MAX_QUBITS });
                    }
                    Ok(hadamard_transform_state(n, &computational))
                }
                _ => Ok(computational),
            }
        };
        let mut out = match self.experiment {
            Experiment::Redfield => {
                let model = build_model(self.redfield.as_ref().expect("validated"))?;
                let mut specs = model.rotated_element_specs(schedule.basis)?;
                specs.push(match schedule.basis {
                    Basis::Eigenbasis => ObservableSpec::diagonal(3),
                    _ => ObservableSpec::fidelity("rho_3_3", model.basis_state(3))?,
                });
                specs
            }
            _ => {
                let target = match (self.initial_state(), self.experiment, schedule.basis) {
                    (_, Experiment::Ghz, _) => in_frame(ghz_state(n))?,
                    (InitialState::Plus, _, Basis::Hadamard) => vec![(0, ONE)],
                    (InitialState::Plus, _, _) => {
                        if n > DENSE_TARGET_MAX_QUBITS {
                            return Err(Error::SizeGuard { what: "dense |+> target", n, max: DENSE_TARGET_MAX_QUBITS });
                        }
                        plus_state_computational(n)
                    }
                    (InitialState::W, _, _) => in_frame(w_state(n))?,
                };
                vec![ObservableSpec::fidelity("fidelity", target)?]
            }
        };
        out.push(ObservableSpec::Trace);
        Ok(out)
    }
}
