//! Benchmark run configuration: an INI-style structured-text document
//! with sections [data], [model], [attack], [defense], [bench]. Every
//! field has a default; unknown sections or keys are rejected. The
//! config hash covers the *effective* configuration (after defaults and
//! the ARW_SEED override), so equal hashes imply equal reports.

use arw_core::attacks::{Budget, NormKind, SimbaBasis};
use arw_core::defenses::{DefenseConfig, DiffusionSchedule, InnerAttack};
use arw_core::error::{ArwError, Result};
use arw_core::evalkit::AttackSpec;
use arw_core::rng::fnv1a;

#[derive(Debug, Clone)]
pub struct RunConfig {
    // [data]
    pub sign_train: usize,
    pub sign_test: usize,
    pub road_train: usize,
    pub road_frames: usize,
    pub road_d0: f32,
    pub road_d1: f32,
    // [model]
    pub det_epochs: usize,
    pub det_lr: f32,
    pub reg_epochs: usize,
    pub reg_lr: f32,
    // [attack]
    pub attack_names: Vec<String>,
    pub eps: f32,
    pub alpha: f32,
    pub iters: usize,
    pub queries: usize,
    pub sigma: f32,
    pub lambda: f32,
    pub rp2_iters: usize,
    pub basis: SimbaBasis,
    // [defense]
    pub defense_names: Vec<String>,
    pub median_k: usize,
    pub bits: u8,
    pub adv_inner: InnerAttack,
    pub adv_epochs: usize,
    pub adv_lr: f32,
    pub contrastive_tau: f32,
    pub contrastive_epochs: usize,
    pub contrastive_lr: f32,
    pub diffpir_sigma: f32,
    // [bench]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sign_train: 400,
            sign_test: 120,
            road_train: 1200,
            road_frames: 120,
            road_d0: 8.0,
            road_d1: 75.0,
            det_epochs: 30,
            det_lr: 0.08,
            reg_epochs: 30,
            reg_lr: 0.08,
            attack_names: ["gaussian", "fgsm", "autopgd", "simba", "rp2", "cap"]
                .map(String::from)
                .to_vec(),
            eps: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iters: 20,
            queries: 400,
            sigma: 0.08,
            lambda: 0.05,
            rp2_iters: 40,
            basis: SimbaBasis::Pixel,
            defense_names: [
                "none",
                "medianblur",
                "bitdepth",
                "randomize",
                "advtrain",
                "contrastive",
                "diffpir",
            ]
            .map(String::from)
            .to_vec(),
            median_k: 3,
            bits: 3,
            adv_inner: InnerAttack::Fgsm,
            adv_epochs: 12,
            adv_lr: 0.05,
            contrastive_tau: 0.5,
            contrastive_epochs: 6,
            contrastive_lr: 0.04,
            diffpir_sigma: 0.1,
            seed: 7,
        }
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        ArwError::config(format!("[{section}] {key}: cannot parse {value:?}"))
    })
}

impl RunConfig {
    /// Parses the document, applying defaults for absent keys. The
    /// ARW_SEED environment variable, when set, overrides the seed.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["data", "model", "attack", "defense", "bench"].contains(&section.as_str()) {
                    return Err(ArwError::config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ArwError::config(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(&section, key, value)?;
        }

        if let Ok(env_seed) = std::env::var("ARW_SEED") {
            cfg.seed = env_seed
                .parse()
                .map_err(|_| ArwError::config(format!("ARW_SEED: cannot parse {env_seed:?}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("data", "sign_train") => self.sign_train = parse_num(section, key, value)?,
            ("data", "sign_test") => self.sign_test = parse_num(section, key, value)?,
            ("data", "road_train") => self.road_train = parse_num(section, key, value)?,
            ("data", "road_frames") => self.road_frames = parse_num(section, key, value)?,
            ("data", "road_d0") => self.road_d0 = parse_num(section, key, value)?,
            ("data", "road_d1") => self.road_d1 = parse_num(section, key, value)?,
            ("model", "det_epochs") => self.det_epochs = parse_num(section, key, value)?,
            ("model", "det_lr") => self.det_lr = parse_num(section, key, value)?,
            ("model", "reg_epochs") => self.reg_epochs = parse_num(section, key, value)?,
            ("model", "reg_lr") => self.reg_lr = parse_num(section, key, value)?,
            ("attack", "names") => {
                self.attack_names = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            ("attack", "eps") => self.eps = parse_num(section, key, value)?,
            ("attack", "alpha") => self.alpha = parse_num(section, key, value)?,
            ("attack", "iters") => self.iters = parse_num(section, key, value)?,
            ("attack", "queries") => self.queries = parse_num(section, key, value)?,
            ("attack", "sigma") => self.sigma = parse_num(section, key, value)?,
            ("attack", "lambda") => self.lambda = parse_num(section, key, value)?,
            ("attack", "rp2_iters") => self.rp2_iters = parse_num(section, key, value)?,
            ("attack", "basis") => {
                self.basis = match value {
                    "pixel" => SimbaBasis::Pixel,
                    "dct" => SimbaBasis::Dct,
                    other => {
                        return Err(ArwError::config(format!(
                            "[attack] basis: {other:?} is not pixel|dct"
                        )))
                    }
                }
            }
            ("defense", "names") => {
                self.defense_names = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            ("defense", "median_k") => self.median_k = parse_num(section, key, value)?,
            ("defense", "bits") => self.bits = parse_num(section, key, value)?,
            ("defense", "adv_inner") => self.adv_inner = InnerAttack::parse(value)?,
            ("defense", "adv_epochs") => self.adv_epochs = parse_num(section, key, value)?,
            ("defense", "adv_lr") => self.adv_lr = parse_num(section, key, value)?,
            ("defense", "contrastive_tau") => {
                self.contrastive_tau = parse_num(section, key, value)?
            }
            ("defense", "contrastive_epochs") => {
                self.contrastive_epochs = parse_num(section, key, value)?
            }
            ("defense", "contrastive_lr") => {
                self.contrastive_lr = parse_num(section, key, value)?
            }
            ("defense", "diffpir_sigma") => self.diffpir_sigma = parse_num(section, key, value)?,
            ("bench", "seed") => self.seed = parse_num(section, key, value)?,
            _ => {
                return Err(ArwError::config(format!(
                    "unknown key {key:?} in section [{section}]"
                )))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for name in &self.attack_names {
            self.attack_spec(name)?;
        }
        for name in &self.defense_names {
            self.defense_config(name)?.validate()?;
        }
        Ok(())
    }

    pub fn attack_spec(&self, name: &str) -> Result<AttackSpec> {
        let budget = |max_iters: usize| Budget {
            norm: NormKind::Linf,
            epsilon: self.eps,
            alpha: self.alpha,
            max_iters,
            max_queries: self.queries,
            seed: self.seed,
        };
        Ok(match name {
            "none" => AttackSpec::None,
            "gaussian" => AttackSpec::Gaussian { sigma: self.sigma },
            "fgsm" => AttackSpec::Fgsm { budget: budget(1) },
            "autopgd" => AttackSpec::AutoPgd {
                budget: budget(self.iters),
            },
            "simba" => AttackSpec::Simba {
                budget: budget(1),
                basis: self.basis,
            },
            "rp2" => AttackSpec::Rp2 {
                lambda: self.lambda,
                iters: self.rp2_iters,
                seed: self.seed,
            },
            "cap" => AttackSpec::Cap {
                budget: budget(1),
                lambda: self.lambda,
            },
            other => {
                return Err(ArwError::config(format!(
                    "unknown attack {other:?}; expected none|gaussian|fgsm|autopgd|simba|rp2|cap"
                )))
            }
        })
    }

    pub fn defense_config(&self, name: &str) -> Result<DefenseConfig> {
        Ok(match name {
            "none" => DefenseConfig::None,
            "medianblur" => DefenseConfig::MedianBlur { k: self.median_k },
            "bitdepth" => DefenseConfig::BitDepth { bits: self.bits },
            "randomize" => DefenseConfig::Randomize {
                seed: self.seed ^ 0x7A4D,
            },
            "advtrain" => DefenseConfig::AdvTrain {
                inner: self.adv_inner,
                budget: Budget {
                    norm: NormKind::Linf,
                    epsilon: self.eps,
                    alpha: self.eps,
                    max_iters: 1,
                    max_queries: 0,
                    seed: self.seed,
                },
                epochs: self.adv_epochs,
                lr: self.adv_lr,
                seed: self.seed ^ 0xAD17,
            },
            "contrastive" => DefenseConfig::Contrastive {
                tau: self.contrastive_tau,
                epochs: self.contrastive_epochs,
                lr: self.contrastive_lr,
                seed: self.seed ^ 0xC027,
            },
            "diffpir" => DefenseConfig::DiffPir {
                schedule: DiffusionSchedule::default_schedule(),
                denoiser_sigma: self.diffpir_sigma,
                seed: self.seed ^ 0xD1FF,
            },
            other => {
                return Err(ArwError::config(format!(
                    "unknown defense {other:?}; expected none|medianblur|bitdepth|randomize|advtrain|contrastive|diffpir"
                )))
            }
        })
    }

    /// Canonical serialization of the effective configuration.
    pub fn canonical(&self) -> String {
        format!(
            "[data]\nsign_train = {}\nsign_test = {}\nroad_train = {}\nroad_frames = {}\nroad_d0 = {}\nroad_d1 = {}\n\
             [model]\ndet_epochs = {}\ndet_lr = {}\nreg_epochs = {}\nreg_lr = {}\n\
             [attack]\nnames = {}\neps = {}\nalpha = {}\niters = {}\nqueries = {}\nsigma = {}\nlambda = {}\nrp2_iters = {}\nbasis = {}\n\
             [defense]\nnames = {}\nmedian_k = {}\nbits = {}\nadv_inner = {}\nadv_epochs = {}\nadv_lr = {}\ncontrastive_tau = {}\ncontrastive_epochs = {}\ncontrastive_lr = {}\ndiffpir_sigma = {}\n\
             [bench]\nseed = {}\n",
            self.sign_train, self.sign_test, self.road_train, self.road_frames,
            self.road_d0, self.road_d1,
            self.det_epochs, self.det_lr, self.reg_epochs, self.reg_lr,
            self.attack_names.join(","), self.eps, self.alpha, self.iters,
            self.queries, self.sigma, self.lambda, self.rp2_iters,
            match self.basis { SimbaBasis::Pixel => "pixel", SimbaBasis::Dct => "dct" },
            self.defense_names.join(","), self.median_k, self.bits,
            self.adv_inner.name(), self.adv_epochs, self.adv_lr,
            self.contrastive_tau, self.contrastive_epochs, self.contrastive_lr,
            self.diffpir_sigma, self.seed,
        )
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}
