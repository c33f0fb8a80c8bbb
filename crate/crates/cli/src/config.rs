//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! command = "solve"
//! seed = 0
//!
//! [mesh]
//! n_coarse = 4
//! refine_factor = 4
//!
//! [physics]
//! omega = 1.0
//! coefficient = { kind = "checkerboard", contrast = 10.0 }
//! source = { kind = "smooth" }
//!
//! [method]
//! m = 2            # omit for the logarithmic schedule
//!
//! [output]
//! dir = "out"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use maxlod::analysis::{MSchedule, MeshLevel, StudyConfig, StudyKind, INFSUP_CAP};
use maxlod::corrector::DEFAULT_IDEAL_CAP;
use maxlod::fem::{CoefficientKind, Source};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    StudyConvergence,
    StudyDecay,
    StudyInfsup,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::StudyConvergence => "study-convergence",
            Command::StudyDecay => "study-decay",
            Command::StudyInfsup => "study-infsup",
            Command::Verify => "verify",
        }
    }

    fn study_kind(self) -> Option<StudyKind> {
        match self {
            Command::StudyConvergence | Command::Solve => Some(StudyKind::Convergence),
            Command::StudyDecay => Some(StudyKind::Decay),
            Command::StudyInfsup => Some(StudyKind::Infsup),
            Command::Verify => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub n_coarse: usize,
    pub refine_factor: usize,
    /// Study ladder as `[n_coarse, refine_factor]` pairs; defaults to the single level above.
    pub levels: Option<Vec<[usize; 2]>>,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { n_coarse: 2, refine_factor: 2, levels: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub omega: Option<f64>,
    /// Frequency sweep for studies; takes precedence over `omega`.
    pub omegas: Option<Vec<f64>>,
    pub coefficient: Option<CoefficientKind>,
    pub source: Option<Source>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSection {
    /// Fixed patch order. Absent means `m = max(2, ⌈|log₂ H|⌉)`.
    pub m: Option<usize>,
    pub m_max: usize,
    pub ideal_cap: usize,
    pub infsup_cap: usize,
    pub record_wall_time: bool,
    /// Extra seeds for studies; the top-level seed is used when absent.
    pub seeds: Option<Vec<u64>>,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            m: None,
            m_max: 4,
            ideal_cap: DEFAULT_IDEAL_CAP,
            infsup_cap: INFSUP_CAP,
            record_wall_time: false,
            seeds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write solution vectors and corrector matrices for `solve`.
    pub vectors: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), vectors: true }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub n_coarse: Option<usize>,
    pub refine_factor: Option<usize>,
    pub omega: Option<f64>,
    pub m: Option<usize>,
    pub m_max: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text, overrides)
}

pub fn parse_str(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_else(|| "config".into());
        ConfigError::new(&key, e.message().trim())
    })?;
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

// Best-effort dotted key for the line a parse error points at.
fn key_at(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len() + 1;
        if pos > offset {
            break;
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, true) => "config".into(),
        (true, false) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(c) = o.command {
            self.command = c;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.n_coarse {
            self.mesh.n_coarse = n;
        }
        if let Some(f) = o.refine_factor {
            self.mesh.refine_factor = f;
        }
        if let Some(w) = o.omega {
            self.physics.omega = Some(w);
            self.physics.omegas = None;
        }
        if let Some(m) = o.m {
            self.method.m = Some(m);
        }
        if let Some(m) = o.m_max {
            self.method.m_max = m;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
    }

    /// Checks every numeric parameter; nothing is allocated before this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let needs_physics = self.command != Command::Verify;
        if self.mesh.n_coarse == 0 {
            return Err(ConfigError::new("mesh.n_coarse", "must be at least 1"));
        }
        if self.mesh.refine_factor < 2 {
            return Err(ConfigError::new("mesh.refine_factor", "must be at least 2"));
        }
        if let Some(levels) = &self.mesh.levels {
            if self.command == Command::Solve {
                return Err(ConfigError::new("mesh.levels", "only studies take a ladder; use n_coarse and refine_factor"));
            }
            if let Some(l) = levels.iter().find(|l| l[0] == 0 || l[1] < 2) {
                return Err(ConfigError::new("mesh.levels", format!("need n_coarse >= 1 and refine_factor >= 2, got {l:?}")));
            }
        }
        if let Some(w) = self.physics.omega {
            check_omega("physics.omega", w)?;
        }
        if let Some(ws) = &self.physics.omegas {
            if self.command == Command::Solve || self.command == Command::Verify {
                return Err(ConfigError::new("physics.omegas", "a frequency sweep needs a study command"));
            }
            for &w in ws {
                check_omega("physics.omegas", w)?;
            }
        }
        if needs_physics && self.physics.omega.is_none() && self.physics.omegas.is_none() {
            return Err(ConfigError::new("physics.omega", format!("required for {}", self.command.name())));
        }
        match &self.physics.coefficient {
            None if needs_physics => {
                return Err(ConfigError::new("physics.coefficient", format!("required for {}", self.command.name())))
            }
            Some(c) => c.validate().map_err(|e| ConfigError::new("physics.coefficient", e.to_string()))?,
            None => {}
        }
        if let Some(Source::Cellwise { .. }) = &self.physics.source {
            return Err(ConfigError::new("physics.source", "cellwise sources are library-only"));
        }
        if self.method.m == Some(0) {
            return Err(ConfigError::new("method.m", "must be at least 1"));
        }
        if self.method.m_max == 0 {
            return Err(ConfigError::new("method.m_max", "must be at least 1"));
        }
        if self.method.ideal_cap == 0 {
            return Err(ConfigError::new("method.ideal_cap", "must be positive"));
        }
        if self.method.infsup_cap == 0 {
            return Err(ConfigError::new("method.infsup_cap", "must be positive"));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(ConfigError::new("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<MeshLevel> {
        match &self.mesh.levels {
            Some(ls) => ls.iter().map(|l| MeshLevel { n_coarse: l[0], factor: l[1] }).collect(),
            None => vec![MeshLevel { n_coarse: self.mesh.n_coarse, factor: self.mesh.refine_factor }],
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.physics.omegas.clone().or(self.physics.omega.map(|w| vec![w])).unwrap_or_else(|| vec![1.0])
    }

    pub fn coefficient(&self) -> CoefficientKind {
        self.physics.coefficient.clone().unwrap_or(CoefficientKind::Identity)
    }

    pub fn source(&self) -> Source {
        self.physics.source.clone().unwrap_or(Source::Smooth)
    }

    /// Hash of the resolved configuration. The output directory is left out
    /// so the same run lands under the same id wherever it is written.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn study_config(&self) -> Option<StudyConfig> {
        let kind = self.command.study_kind()?;
        let mut s = StudyConfig::new(kind, self.levels(), self.omegas(), self.coefficient());
        s.run_id = self.run_id();
        s.source = self.source();
        s.seeds = self.method.seeds.clone().unwrap_or_else(|| vec![self.seed]);
        s.schedule = match self.method.m {
            Some(m) => MSchedule::Fixed { m },
            None => MSchedule::Log,
        };
        s.m_max = self.method.m_max;
        s.ideal_cap = self.method.ideal_cap;
        s.infsup_cap = self.method.infsup_cap;
        s.record_wall_time = self.method.record_wall_time;
        Some(s)
    }
}

fn check_omega(key: &str, w: f64) -> Result<(), ConfigError> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be a positive frequency, got {w}")))
    }
}
