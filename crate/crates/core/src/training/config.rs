use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mil::Aggregation;

/// How patch posteriors combine into a clip decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Voting {
    /// Average posteriors, then take the argmax.
    Mean,
    /// Count per-patch argmax votes.
    Majority,
}

impl FromStr for Voting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Voting::Mean),
            "majority" => Ok(Voting::Majority),
            _ => Err(Error::Config(format!("unknown voting rule {s:?}"))),
        }
    }
}

impl std::fmt::Display for Voting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Voting::Mean => "mean",
            Voting::Majority => "majority",
        })
    }
}

/// Every knob of a run. Serializes to and parses from flat `key=value`
/// text with dotted section keys.
/// Learning rate of the desk-scale defaults (A-mini, batch 32).
pub const DESK_LEARNING_RATE: f64 = 0.003;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: String,
    pub patch_frames: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_rho: f64,
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub train_fraction: f64,
    pub eval_overlap: f64,
    pub voting: Voting,
    pub seed: u64,
    pub jobs: usize,
    pub augment_n_total: usize,
    pub augment_emda_fraction: f64,
    pub augment_max_delay: Option<f64>,
    pub mil_enabled: bool,
    pub mil_bag_size: usize,
    pub mil_aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: "A-mini".into(),
            patch_frames: 200,
            batch_size: 32,
            epochs: 30,
            learning_rate: DESK_LEARNING_RATE,
            momentum: crate::nnet::MOMENTUM,
            l1_rho: crate::nnet::loss::L1_RHO,
            lr_decay: 0.5,
            lr_patience: 3,
            train_fraction: 0.75,
            eval_overlap: 0.5,
            voting: Voting::Mean,
            seed: 0,
            jobs: 1,
            augment_n_total: 0,
            augment_emda_fraction: 0.5,
            augment_max_delay: None,
            mil_enabled: false,
            mil_bag_size: 2,
            mil_aggregation: Aggregation::Max,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Full-scale settings: architecture A on 400-frame patches, batch 128.
    pub fn full_scale() -> Self {
        Self {
            arch: "A".into(),
            patch_frames: 400,
            batch_size: 128,
            learning_rate: crate::nnet::LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "arch" => self.arch = v.to_string(),
            "patch_frames" => self.patch_frames = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "l1_rho" => self.l1_rho = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "lr_patience" => self.lr_patience = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "eval_overlap" => self.eval_overlap = parse(key, v)?,
            "voting" => self.voting = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "augment.n_total" => self.augment_n_total = parse(key, v)?,
            "augment.emda_fraction" => self.augment_emda_fraction = parse(key, v)?,
            "augment.max_delay" => {
                self.augment_max_delay = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "mil.enabled" => self.mil_enabled = parse(key, v)?,
            "mil.bag_size" => self.mil_bag_size = parse(key, v)?,
            "mil.aggregation" => self.mil_aggregation = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` assignments in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {p:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parse a config file body; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !matches!(self.patch_frames, 200 | 400) {
            return bad(format!("patch_frames must be 200 or 400, got {}", self.patch_frames));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.l1_rho < 0.0 {
            return bad("learning_rate > 0, momentum in [0, 1) and l1_rho >= 0 required".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_patience == 0 {
            return bad("lr_decay in (0, 1] and lr_patience >= 1 required".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) || !(0.0..1.0).contains(&self.eval_overlap) {
            return bad("train_fraction in (0, 1) and eval_overlap in [0, 1) required".into());
        }
        if !(0.0..=1.0).contains(&self.augment_emda_fraction) || self.augment_max_delay.is_some_and(|d| !(d >= 0.0)) {
            return bad("augment.emda_fraction in [0, 1] and augment.max_delay >= 0 required".into());
        }
        if self.mil_bag_size == 0 || self.jobs == 0 {
            return bad("mil.bag_size and jobs must be at least 1".into());
        }
        crate::zoo::ArchId::parse(&self.arch)?;
        Ok(())
    }

    /// Canonical text form; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let delay = self.augment_max_delay.map_or("none".to_string(), |d| d.to_string());
        let pairs: [(&str, String); 20] = [
            ("arch", self.arch.clone()),
            ("patch_frames", self.patch_frames.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("l1_rho", self.l1_rho.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("eval_overlap", self.eval_overlap.to_string()),
            ("voting", self.voting.to_string()),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
            ("augment.n_total", self.augment_n_total.to_string()),
            ("augment.emda_fraction", self.augment_emda_fraction.to_string()),
            ("augment.max_delay", delay),
            ("mil.enabled", self.mil_enabled.to_string()),
            ("mil.bag_size", self.mil_bag_size.to_string()),
            ("mil.aggregation", self.mil_aggregation.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply(["mil.enabled=true", "mil.aggregation=noisy_or", "augment.max_delay=0.25", "seed=7", "learning_rate=0.003"])
            .unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::from_text(&RunConfig::full_scale().to_text()).unwrap(), RunConfig::full_scale());
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(RunConfig::from_text("nope=1").is_err());
        assert!(RunConfig::from_text("epochs=many").is_err());
        assert!(RunConfig::from_text("epochs").is_err());
        assert!(RunConfig::from_text("batch_size=0").is_err());
        assert!(RunConfig::from_text("patch_frames=300").is_err());
        assert!(RunConfig::from_text("arch=Z").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::from_text("# desk run\n\nepochs=3 # short\n").unwrap();
        assert_eq!(cfg.epochs, 3);
    }
}
