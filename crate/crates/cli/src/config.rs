//! Experiment configuration: a `key = value` file plus command-line overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments win,
//! so applying `--set` overrides after the file gives flags precedence.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dp_mtv::construction::NoiseMode;
use dp_mtv::privacy::{NeighbourRelation, PrivacyParams};
use dp_mtv::selection::{PolicyConfig, SelectionConfig};
use dp_mtv::toy_model::{SteerableToyModel, SyntheticTask, ToyModelConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Public,
    Private,
    /// Injects at the toy model's known task heads; no selection is run.
    Oracle,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Public => "public",
            Variant::Private => "private",
            Variant::Oracle => "oracle",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "public" => Ok(Variant::Public),
            "private" => Ok(Variant::Private),
            "oracle" => Ok(Variant::Oracle),
            _ => Err(format!("unknown variant {s:?} (expected public, private or oracle)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ToyModelConfig,
    /// `None` selects every layer.
    pub layers: Option<Vec<usize>>,
    pub m: usize,
    pub k: usize,
    pub clip_c: f64,
    pub clip_sel: f64,
    pub eps_tv: f64,
    pub eps_sel: f64,
    pub delta: f64,
    pub neighbours: NeighbourRelation,
    pub noise: NoiseMode,
    pub variant: Variant,
    pub k_bar: usize,
    pub num_mask_samples: usize,
    pub policy: PolicyConfig,
    /// Validation examples for private scoring (B).
    pub val_size: usize,
    pub seed: u64,
    pub task: SyntheticTask,
    /// `None` sizes the private dataset to `m·(K+1) + B`.
    pub dataset_size: Option<usize>,
    pub public_size: usize,
    pub eval_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let privacy = PrivacyParams::default();
        let selection = SelectionConfig::default();
        Self {
            model: ToyModelConfig::default(),
            layers: None,
            m: 100,
            k: 8,
            clip_c: privacy.clip_c,
            clip_sel: privacy.clip_sel,
            eps_tv: 1.0,
            eps_sel: 0.5,
            delta: privacy.delta,
            neighbours: NeighbourRelation::ZeroOut,
            noise: NoiseMode::Private,
            variant: Variant::Private,
            k_bar: selection.k_bar,
            num_mask_samples: selection.num_samples,
            policy: selection.policy,
            val_size: 100,
            seed: 0,
            task: SyntheticTask::Flip,
            dataset_size: None,
            public_size: 200,
            eval_size: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_sites(value: &str) -> CliResult<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (l, h) = s
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("task_heads: expected layer:head, got {s:?}")))?;
            Ok((parse("task_heads", l.trim())?, parse("task_heads", h.trim())?))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_assignment(line)
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` (or `key = value`) assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> CliResult<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "num_layers" => self.model.num_layers = parse(key, value)?,
            "num_heads" => self.model.num_heads = parse(key, value)?,
            "head_dim" => self.model.head_dim = parse(key, value)?,
            "feature_dim" => self.model.feature_dim = parse(key, value)?,
            "task_heads" => self.model.task_heads = parse_sites(value)?,
            "signal" => self.model.signal = parse(key, value)?,
            "cue_gain" => self.model.cue_gain = parse(key, value)?,
            "readout_gain" => self.model.readout_gain = parse(key, value)?,
            "noise_level" => self.model.noise_level = parse(key, value)?,
            "weight_seed" => self.model.weight_seed = parse(key, value)?,
            "layers" => {
                self.layers = if value == "all" { None } else { Some(parse_list(key, value)?) }
            }
            "m" => self.m = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "clip_c" => self.clip_c = parse(key, value)?,
            "clip_sel" => self.clip_sel = parse(key, value)?,
            "eps_tv" => self.eps_tv = parse(key, value)?,
            "eps_sel" => self.eps_sel = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "neighbours" => {
                self.neighbours = match value {
                    "zero_out" => NeighbourRelation::ZeroOut,
                    "replace_one" => NeighbourRelation::ReplaceOne,
                    _ => {
                        return Err(CliError::Config(format!(
                            "neighbours: expected zero_out or replace_one, got {value:?}"
                        )))
                    }
                }
            }
            "noise" => {
                self.noise = match value {
                    "private" => NoiseMode::Private,
                    "disabled" => NoiseMode::Disabled,
                    _ => {
                        return Err(CliError::Config(format!(
                            "noise: expected private or disabled, got {value:?}"
                        )))
                    }
                }
            }
            "variant" => self.variant = parse(key, value)?,
            "k_bar" => self.k_bar = parse(key, value)?,
            "num_mask_samples" => self.num_mask_samples = parse(key, value)?,
            "iterations" => self.policy.iterations = parse(key, value)?,
            "minibatch" => self.policy.minibatch = parse(key, value)?,
            "learning_rate" => self.policy.learning_rate = parse(key, value)?,
            "baseline_decay" => self.policy.baseline_decay = parse(key, value)?,
            "val_size" => self.val_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "task" => self.task = parse(key, value)?,
            "dataset_size" => {
                self.dataset_size = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "public_size" => self.public_size = parse(key, value)?,
            "eval_size" => self.eval_size = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn privacy(&self) -> PrivacyParams {
        PrivacyParams {
            eps_tv: self.eps_tv,
            eps_sel: self.eps_sel,
            delta: self.delta,
            clip_c: self.clip_c,
            clip_sel: self.clip_sel,
            neighbours: self.neighbours,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            policy: self.policy,
            num_samples: self.num_mask_samples,
            k_bar: self.k_bar,
        }
    }

    pub fn layers(&self) -> Vec<usize> {
        self.layers
            .clone()
            .unwrap_or_else(|| (0..self.model.num_layers).collect())
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
            .unwrap_or(self.m * (self.k + 1) + self.val_size)
    }

    pub fn build_model(&self) -> CliResult<SteerableToyModel> {
        SteerableToyModel::new(self.model.clone())
            .map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// Checks everything that can be checked without running the pipeline.
    pub fn validate(&self) -> CliResult<()> {
        let model = self.build_model()?;
        dp_mtv::model::ModelInterface::check_layers(&model, &self.layers())
            .map_err(|e| CliError::Config(format!("layers: {e}")))?;
        self.privacy()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.variant == Variant::Private && self.eps_sel <= 0.0 {
            return Err(CliError::Config("eps_sel: private variant needs eps_sel > 0".into()));
        }
        let positive = [
            ("m", self.m),
            ("k_bar", self.k_bar),
            ("num_mask_samples", self.num_mask_samples),
            ("minibatch", self.policy.minibatch),
            ("val_size", self.val_size),
            ("public_size", self.public_size),
            ("eval_size", self.eval_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{name}: must be at least 1")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!((c.m, c.k, c.k_bar, c.num_mask_samples, c.val_size), (100, 8, 12, 2000, 100));
        assert_eq!((c.clip_c, c.clip_sel, c.delta), (1.0, 1.0, 1e-5));
        assert_eq!(c.dataset_size(), 1000);
        assert_eq!(c.layers(), vec![0, 1, 2, 3]);
        c.validate().unwrap();
    }

    #[test]
    fn text_and_overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# comment\n\nm = 50\nvariant=public\nlayers = 1,2\ntask_heads = 1:1, 2:3\n")
            .unwrap();
        c.apply_assignment("m=20").unwrap();
        assert_eq!(c.m, 20);
        assert_eq!(c.variant, Variant::Public);
        assert_eq!(c.layers(), vec![1, 2]);
        assert_eq!(c.model.task_heads, vec![(1, 1), (2, 3)]);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = ExperimentConfig::default();
        let e = c.apply_text("m = 1\nclip_c = abc\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("clip_c"), "{e}");
        assert!(c.set("bogus", "1").unwrap_err().to_string().contains("bogus"));
        assert!(c.apply_assignment("m").is_err());
        c.eps_sel = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("eps_sel"));
    }
}
