//! Experiment configuration: defaults matching the benchmark protocol, a
//! plain-text `key = value` file format, and the manifest round trip that
//! makes artifacts reproducible.

use std::fmt;
use std::path::PathBuf;

use precond::preconditioners::Parametrization;
use precond::trainer::{InitPolicy, InnerSolver, TauPolicy};

use crate::error::{HarnessError, Result};

/// Which preconditioner structure to train, before image dimensions are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Scalar,
    Diagonal,
    Full,
    Conv,
}

impl ParamKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Self::Scalar),
            "diagonal" => Ok(Self::Diagonal),
            "full" => Ok(Self::Full),
            "conv" => Ok(Self::Conv),
            other => Err(HarnessError::Config(format!(
                "unknown parametrization '{other}' (expected scalar|diagonal|full|conv)"
            ))),
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Scalar => "scalar",
            Self::Diagonal => "diagonal",
            Self::Full => "full",
            Self::Conv => "conv",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// Start each run at the observation.
    Observation,
    /// Start each run at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Freeze,
    Recycle,
}

impl PolicyKind {
    pub fn to_deploy(self) -> precond::deploy::DeployPolicy {
        match self {
            Self::Freeze => precond::deploy::DeployPolicy::Freeze,
            Self::Recycle => precond::deploy::DeployPolicy::Recycle,
        }
    }
}

/// Full experiment description. Defaults reproduce the benchmark protocol:
/// Gaussian blur σ = 2, relative noise 0.04, Huber-TV weights α = 1e-4 and
/// ε = 0.01, 1000/100/100 splits, T = 100 outer iterations with inner cap 5000
/// and tolerance 1e-3, and a convolutional preconditioner whose kernel
/// defaults to the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub train_ones: usize,
    pub test_ones: usize,
    pub test_others: usize,
    pub blur_sigma: f64,
    pub noise_level: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub parametrization: ParamKind,
    /// Learned kernel size for the convolutional variant; image dims if unset.
    pub kernel_h1: Option<usize>,
    pub kernel_h2: Option<usize>,
    pub outer_iterations: usize,
    pub inner_cap: usize,
    pub tolerance: f64,
    pub inner_solver: InnerSolver,
    pub init_policy: InitPolicy,
    pub safeguard: bool,
    pub tau_policy: TauPolicy,
    pub deploy_policy: PolicyKind,
    /// Deployment iteration budget for evaluation runs.
    pub eval_iterations: usize,
    pub start: StartPolicy,
    /// Optional downscale (images become `image_dim x image_dim`).
    pub image_dim: Option<usize>,
    pub seed: u64,
    /// Worker threads; 0 picks the machine default.
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::new(),
            labels: PathBuf::new(),
            train_ones: 1000,
            test_ones: 100,
            test_others: 100,
            blur_sigma: 2.0,
            noise_level: 0.04,
            alpha: 1e-4,
            epsilon: 0.01,
            parametrization: ParamKind::Conv,
            kernel_h1: None,
            kernel_h2: None,
            outer_iterations: 100,
            inner_cap: 5000,
            tolerance: 1e-3,
            inner_solver: InnerSolver::PlainDescent,
            init_policy: InitPolicy::SafeguardStart,
            safeguard: true,
            tau_policy: TauPolicy::SmoothOnly,
            deploy_policy: PolicyKind::Freeze,
            eval_iterations: 100,
            start: StartPolicy::Observation,
            image_dim: None,
            seed: 0,
            threads: 0,
            out: PathBuf::from("artifacts"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("cannot parse '{value}' for key '{key}'")))
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment (the config-file vocabulary, which
    /// mirrors the CLI flags).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "images" => self.images = PathBuf::from(value),
            "labels" => self.labels = PathBuf::from(value),
            "train-ones" => self.train_ones = parse_num(key, value)?,
            "test-ones" => self.test_ones = parse_num(key, value)?,
            "test-others" => self.test_others = parse_num(key, value)?,
            "sigma" => self.blur_sigma = parse_num(key, value)?,
            "noise" => self.noise_level = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "parametrization" => self.parametrization = ParamKind::parse(value)?,
            "kernel-h1" => self.kernel_h1 = Some(parse_num(key, value)?),
            "kernel-h2" => self.kernel_h2 = Some(parse_num(key, value)?),
            "outer-iters" => self.outer_iterations = parse_num(key, value)?,
            "inner-cap" => self.inner_cap = parse_num(key, value)?,
            "tolerance" => self.tolerance = parse_num(key, value)?,
            "inner-solver" => {
                self.inner_solver = match value {
                    "descent" => InnerSolver::PlainDescent,
                    "accelerated" => InnerSolver::Accelerated,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown inner solver '{other}' (expected descent|accelerated)"
                        )))
                    }
                }
            }
            "init" => {
                self.init_policy = match value {
                    "safeguard" => InitPolicy::SafeguardStart,
                    "warm" => InitPolicy::WarmStart,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown init policy '{other}' (expected safeguard|warm)"
                        )))
                    }
                }
            }
            "safeguard" => self.safeguard = parse_num(key, value)?,
            "tau-policy" => {
                self.tau_policy = match value {
                    "smooth" => TauPolicy::SmoothOnly,
                    "strong" => TauPolicy::StronglyConvex,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown tau policy '{other}' (expected smooth|strong)"
                        )))
                    }
                }
            }
            "policy" => {
                self.deploy_policy = match value {
                    "freeze" => PolicyKind::Freeze,
                    "recycle" => PolicyKind::Recycle,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown deploy policy '{other}' (expected freeze|recycle)"
                        )))
                    }
                }
            }
            "eval-iters" => self.eval_iterations = parse_num(key, value)?,
            "x0" => {
                self.start = match value {
                    "observation" => StartPolicy::Observation,
                    "zero" => StartPolicy::Zero,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown start policy '{other}' (expected observation|zero)"
                        )))
                    }
                }
            }
            "image-dim" => self.image_dim = Some(parse_num(key, value)?),
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Every field as `(key, value)` pairs in the config-file vocabulary.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("images", self.images.display().to_string()),
            ("labels", self.labels.display().to_string()),
            ("train-ones", self.train_ones.to_string()),
            ("test-ones", self.test_ones.to_string()),
            ("test-others", self.test_others.to_string()),
            ("sigma", format!("{:?}", self.blur_sigma)),
            ("noise", format!("{:?}", self.noise_level)),
            ("alpha", format!("{:?}", self.alpha)),
            ("epsilon", format!("{:?}", self.epsilon)),
            ("parametrization", self.parametrization.to_string()),
        ];
        if let Some(h1) = self.kernel_h1 {
            out.push(("kernel-h1", h1.to_string()));
        }
        if let Some(h2) = self.kernel_h2 {
            out.push(("kernel-h2", h2.to_string()));
        }
        out.extend([
            ("outer-iters", self.outer_iterations.to_string()),
            ("inner-cap", self.inner_cap.to_string()),
            ("tolerance", format!("{:?}", self.tolerance)),
            (
                "inner-solver",
                match self.inner_solver {
                    InnerSolver::PlainDescent => "descent".to_string(),
                    InnerSolver::Accelerated => "accelerated".to_string(),
                },
            ),
            (
                "init",
                match self.init_policy {
                    InitPolicy::SafeguardStart => "safeguard".to_string(),
                    InitPolicy::WarmStart => "warm".to_string(),
                },
            ),
            ("safeguard", self.safeguard.to_string()),
            (
                "tau-policy",
                match self.tau_policy {
                    TauPolicy::SmoothOnly => "smooth".to_string(),
                    TauPolicy::StronglyConvex => "strong".to_string(),
                },
            ),
            (
                "policy",
                match self.deploy_policy {
                    PolicyKind::Freeze => "freeze".to_string(),
                    PolicyKind::Recycle => "recycle".to_string(),
                },
            ),
            ("eval-iters", self.eval_iterations.to_string()),
            (
                "x0",
                match self.start {
                    StartPolicy::Observation => "observation".to_string(),
                    StartPolicy::Zero => "zero".to_string(),
                },
            ),
        ]);
        if let Some(dim) = self.image_dim {
            out.push(("image-dim", dim.to_string()));
        }
        out.extend([
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("out", self.out.display().to_string()),
        ]);
        out
    }

    /// Applies a plain-text configuration file: `key = value` lines, `#`
    /// comments and blank lines ignored.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serializes the configuration in the file format [`Self::apply_file`]
    /// accepts.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// The trained kernel dimensions for the convolutional variant.
    pub fn kernel_dims(&self, image_side: usize) -> (usize, usize) {
        (
            self.kernel_h1.unwrap_or(image_side),
            self.kernel_h2.unwrap_or(image_side),
        )
    }

    /// Core parametrization for `side x side` images.
    pub fn core_parametrization(&self, side: usize) -> Parametrization {
        match self.parametrization {
            ParamKind::Scalar => Parametrization::Scalar,
            ParamKind::Diagonal => Parametrization::Diagonal { n: side * side },
            ParamKind::Full => Parametrization::FullMatrix { n: side * side },
            ParamKind::Conv => {
                let (h1, h2) = self.kernel_dims(side);
                Parametrization::Conv {
                    h1,
                    h2,
                    m1: side,
                    m2: side,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.as_os_str().is_empty() || self.labels.as_os_str().is_empty() {
            return Err(HarnessError::Config(
                "image and label paths are required (keys 'images' and 'labels')".to_string(),
            ));
        }
        if self.train_ones == 0 {
            return Err(HarnessError::Config(
                "training split must be nonempty".to_string(),
            ));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(HarnessError::Config(format!(
                "blur width must be positive, got {}",
                self.blur_sigma
            )));
        }
        if self.out.as_os_str().is_empty() {
            return Err(HarnessError::Config("output directory required".to_string()));
        }
        Ok(())
    }
}

/// FNV-1a over the canonical config text; the provenance hash recorded in
/// schedules and manifests.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in config.to_file_text().bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}
