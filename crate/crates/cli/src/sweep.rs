//! Privacy-budget sweeps and hyperparameter ablations, written as long-format CSV.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{measure, Measurement};

pub const DEFAULT_EPS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

pub const COLUMNS: [&str; 9] = [
    "eps",
    "seed",
    "variant",
    "accuracy",
    "zero_shot_accuracy",
    "non_private_accuracy",
    "sigma",
    "total_eps",
    "total_delta",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Clipping threshold C.
    Clip,
    /// Number of chunks m.
    Chunks,
    /// Shots per chunk K.
    Shots,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Clip => "c",
            AblationAxis::Chunks => "m",
            AblationAxis::Shots => "k",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> CliResult<()> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Usage(format!("ablation {}: {value} is not a positive integer", self.name())))
            }
        };
        match self {
            AblationAxis::Clip => cfg.clip_c = value,
            AblationAxis::Chunks => cfg.m = count()?,
            AblationAxis::Shots => cfg.k = count()?,
        }
        Ok(())
    }
}

/// One ablation axis and the values to visit, parsed from `axis=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub axis: AblationAxis,
    pub values: Vec<f64>,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (axis, values) = s
            .split_once('=')
            .ok_or_else(|| format!("expected axis=v1,v2,..., got {s:?}"))?;
        let axis = match axis.trim() {
            "c" | "C" => AblationAxis::Clip,
            "m" => AblationAxis::Chunks,
            "k" | "K" => AblationAxis::Shots,
            other => return Err(format!("unknown ablation axis {other:?} (expected c, m or k)")),
        };
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("ablation value {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("ablation needs at least one value".into());
        }
        Ok(Ablation { axis, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Ablated axis value, if any.
    pub ablation_value: Option<f64>,
    pub eps: f64,
    /// `None` marks a seed-averaged row.
    pub seed: Option<u64>,
    pub variant: String,
    pub m: Measurement,
}

/// Runs every `(value, eps, seed)` combination in parallel. Seeds are
/// `cfg.seed .. cfg.seed + num_seeds`; each `eps` sets `eps_tv`.
///
/// Rows come back grouped by ablation value, then `eps`: the per-seed rows in
/// seed order followed by their average.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    eps_list: &[f64],
    num_seeds: usize,
    ablation: Option<&Ablation>,
) -> CliResult<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return Err(CliError::Usage("eps list is empty".into()));
    }
    if num_seeds == 0 {
        return Err(CliError::Usage("need at least one seed".into()));
    }
    let values: Vec<Option<f64>> = match ablation {
        Some(a) => a.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut jobs = Vec::new();
    for &value in &values {
        for &eps in eps_list {
            for i in 0..num_seeds as u64 {
                let mut c = cfg.clone();
                if let (Some(a), Some(v)) = (ablation, value) {
                    a.axis.apply(&mut c, v)?;
                }
                c.eps_tv = eps;
                c.seed = cfg.seed.wrapping_add(i);
                c.validate()?;
                jobs.push((value, eps, c));
            }
        }
    }
    let measured = jobs
        .par_iter()
        .map(|(_, _, c)| measure(c))
        .collect::<CliResult<Vec<_>>>()?;

    let variant = cfg.variant.name().to_string();
    let mut rows = Vec::with_capacity(measured.len() + measured.len() / num_seeds);
    for (group, results) in jobs.chunks(num_seeds).zip(measured.chunks(num_seeds)) {
        let (value, eps, _) = &group[0];
        for ((_, _, c), m) in group.iter().zip(results) {
            rows.push(SweepRow {
                ablation_value: *value,
                eps: *eps,
                seed: Some(c.seed),
                variant: variant.clone(),
                m: m.clone(),
            });
        }
        let n = results.len() as f64;
        let avg = |f: fn(&Measurement) -> f64| results.iter().map(f).sum::<f64>() / n;
        rows.push(SweepRow {
            ablation_value: *value,
            eps: *eps,
            seed: None,
            variant: variant.clone(),
            m: Measurement {
                accuracy: avg(|m| m.accuracy),
                zero_shot_accuracy: avg(|m| m.zero_shot_accuracy),
                non_private_accuracy: avg(|m| m.non_private_accuracy),
                sigma: avg(|m| m.sigma),
                total_eps: avg(|m| m.total_eps),
                total_delta: avg(|m| m.total_delta),
            },
        });
    }
    Ok(rows)
}

pub fn write_csv(rows: &[SweepRow], axis: Option<AblationAxis>, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if axis.is_some() {
        header.extend(["axis", "value"]);
    }
    header.extend(COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(a) = axis {
            rec.push(a.name().to_string());
            rec.push(r.ablation_value.map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(r.eps.to_string());
        rec.push(r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()));
        rec.push(r.variant.clone());
        for v in [
            r.m.accuracy,
            r.m.zero_shot_accuracy,
            r.m.non_private_accuracy,
            r.m.sigma,
            r.m.total_eps,
            r.m.total_delta,
        ] {
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
