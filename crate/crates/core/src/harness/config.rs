use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::{BlockConfig, BoundaryMode, EtaEvidence, NuRateMode};
use crate::channel::{CorrelationKind, EtaProcess, FrameConfig, FrameLayout, Modulation};
use crate::error::{Error, Result};
use crate::online::{OnlineConfig, PredictionMode, VbPriors};

/// Receiver evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    VbOnline,
    /// Online receiver on a frame split into this many pilot/data sections.
    VbOnlineInterleaved(usize),
    VbBlock,
    Lmmse,
    Kf,
    Genie,
}

impl Method {
    /// Number of pilot/data sections of the frame this method runs on.
    pub fn sections(self) -> usize {
        match self {
            Method::VbOnlineInterleaved(l) => l,
            _ => 1,
        }
    }

    pub fn is_variational(self) -> bool {
        matches!(self, Method::VbOnline | Method::VbOnlineInterleaved(_) | Method::VbBlock)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::VbOnline => f.write_str("vb-online"),
            Method::VbOnlineInterleaved(l) => write!(f, "vb-online-interleaved:{l}"),
            Method::VbBlock => f.write_str("vb-block"),
            Method::Lmmse => f.write_str("lmmse"),
            Method::Kf => f.write_str("kf"),
            Method::Genie => f.write_str("genie"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(l) = s.strip_prefix("vb-online-interleaved:") {
            let l: usize = l
                .parse()
                .map_err(|_| Error::Config(format!("bad section count in method '{s}'")))?;
            if l == 0 {
                return Err(Error::Config(format!("method '{s}' needs at least one section")));
            }
            return Ok(Method::VbOnlineInterleaved(l));
        }
        match s {
            "vb-online" => Ok(Method::VbOnline),
            "vb-block" => Ok(Method::VbBlock),
            "lmmse" => Ok(Method::Lmmse),
            "kf" => Ok(Method::Kf),
            "genie" => Ok(Method::Genie),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

/// Knobs of the block receiver that have no online counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockOptions {
    pub boundary: BoundaryMode,
    pub nu_rate: NuRateMode,
    pub eta_evidence: EtaEvidence,
    /// Per-slot iterations of the online pass that seeds the sweeps;
    /// defaults to the main iteration count.
    pub warm_start_iterations: Option<usize>,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            boundary: BoundaryMode::PseudoNeighbor,
            nu_rate: NuRateMode::Lemma,
            eta_evidence: EtaEvidence::WithCovariance,
            warm_start_iterations: None,
        }
    }
}

/// One experiment: a scenario, an SNR grid and the receivers to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub antennas: usize,
    pub users: usize,
    pub pilot_slots: usize,
    pub data_slots: usize,
    pub snr_db: Vec<f64>,
    pub modulation: Modulation,
    pub correlation: CorrelationKind,
    pub eta: EtaProcess,
    pub methods: Vec<Method>,
    /// Coordinate-ascent iterations per slot (online) or per frame (block).
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    /// Hand the variational receivers the nominal time correlation.
    pub known_eta: bool,
    pub priors: VbPriors,
    pub prediction: PredictionMode,
    pub block: BlockOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            users: 4,
            pilot_slots: 8,
            data_slots: 128,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            modulation: Modulation::Qpsk,
            correlation: CorrelationKind::exponential(num_complex::Complex64::new(0.5, 0.5)),
            eta: EtaProcess::Fixed { value: 0.985 },
            methods: vec![Method::VbOnline, Method::Lmmse, Method::Kf],
            iterations: 50,
            trials: 100,
            seed: 1,
            known_eta: false,
            priors: VbPriors::default(),
            prediction: PredictionMode::SecondMoment,
            block: BlockOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: SimConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 {
            return Err(Error::Config("antennas and users must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr grid must be non-empty and finite".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        self.priors.validate()?;
        for (idx, m) in self.methods.iter().enumerate() {
            if self.methods[..idx].contains(m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
        }
        for &m in &self.methods {
            let layout = self.layout(m.sections())?;
            if layout.sections().iter().any(|&(p, _)| p < self.users) {
                return Err(Error::Config(format!(
                    "method {m}: every section needs at least {} pilot slots, got {:?}",
                    self.users,
                    layout.sections()
                )));
            }
        }
        Ok(())
    }

    pub fn layout(&self, sections: usize) -> Result<FrameLayout> {
        FrameLayout::interleaved(self.pilot_slots, self.data_slots, sections)
    }

    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        crate::channel::noise_variance_from_snr(snr_db, self.antennas, self.users)
    }

    pub fn frame_config(&self, sections: usize, snr_db: f64) -> Result<FrameConfig> {
        Ok(FrameConfig {
            antennas: self.antennas,
            users: self.users,
            layout: self.layout(sections)?,
            constellation: self.modulation.constellation(),
            correlation: self.correlation,
            eta: self.eta,
            n0: self.noise_variance(snr_db),
        })
    }

    /// Correlation a genie-aided receiver is told, one per user.
    pub fn nominal_eta(&self) -> Vec<f64> {
        vec![self.eta.nominal(); self.users]
    }

    pub fn online_config(&self) -> OnlineConfig {
        OnlineConfig {
            iterations: self.iterations,
            priors: self.priors,
            prediction: self.prediction,
            early_exit: None,
            known_eta: self.known_eta.then(|| self.nominal_eta()),
        }
    }

    pub fn block_config(&self) -> BlockConfig {
        BlockConfig {
            iterations: self.iterations,
            priors: self.priors,
            boundary: self.block.boundary,
            nu_rate: self.block.nu_rate,
            eta_evidence: self.block.eta_evidence,
            warm_start_iterations: self.block.warm_start_iterations.unwrap_or(self.iterations),
            known_eta: self.known_eta.then(|| self.nominal_eta()),
        }
    }

    /// Label written to the results for `method`.
    pub fn label(&self, method: Method) -> String {
        if self.known_eta && method.is_variational() {
            format!("{method}+known-eta")
        } else {
            method.to_string()
        }
    }
}
