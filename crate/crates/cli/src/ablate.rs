//! Ablation matrix: every variant for every seed, then a per-variant
//! summary.

use std::path::Path;

use maser_core::config::CorrectionMode;
use maser_core::subgoal::SubgoalMode;
use maser_core::{MaserError, Result, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::train::run_train;

pub const ABLATION_FILE: &str = "ablation.csv";

pub const VARIANTS: &[&str] = &[
    "maser",
    "random-subgoal",
    "alpha0",
    "alpha1",
    "no-li",
    "no-correction",
    "over-correction",
    "no-repr",
    "qmix",
];

/// The base config with one ablation applied.
pub fn apply_variant(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut c = base.clone();
    match variant {
        "maser" => {}
        "random-subgoal" => c.subgoal_mode = SubgoalMode::Random,
        "alpha0" => c.alpha = 0.0,
        "alpha1" => c.alpha = 1.0,
        "no-li" => c.disable_li = true,
        "no-correction" => c.correction = CorrectionMode::None,
        "over-correction" => c.correction = CorrectionMode::Over,
        "no-repr" => c.disable_repr = true,
        "qmix" => c = c.qmix_reduction(),
        other => {
            return Err(MaserError::Config(format!(
                "unknown variant `{other}`; expected one of {}",
                VARIANTS.join(", ")
            )))
        }
    }
    Ok(c)
}

/// One CSV line: `kind` is `run` for a single seed or `aggregate` for the
/// per-variant mean and sample standard deviation over completed runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: String,
    pub variant: String,
    pub seed: Option<u64>,
    pub status: String,
    pub win_rate: Option<f64>,
    pub win_rate_std: Option<f64>,
    pub runs: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs the matrix sequentially; a failing run is recorded and the sweep
/// continues. Writes `ablation.csv` under `out_dir`.
pub fn run_ablation(base: &TrainConfig, variants: &[String], seeds: &[u64], out_dir: &Path) -> Result<Vec<AblationRow>> {
    let configs = variants
        .iter()
        .map(|v| apply_variant(base, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (variant, cfg) in configs {
        let mut rates = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let dir = out_dir.join(&variant).join(format!("seed{seed}"));
            let (status, win_rate) = match run_train(&cfg, &dir) {
                Ok(s) => {
                    rates.push(s.final_win_rate);
                    ("ok".to_string(), Some(s.final_win_rate))
                }
                Err(e) => (format!("failed: {e}"), None),
            };
            rows.push(AblationRow {
                kind: "run".into(),
                variant: variant.clone(),
                seed: Some(seed),
                status,
                win_rate,
                win_rate_std: None,
                runs: 1,
            });
        }
        let (mean, std) = if rates.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&rates) };
        aggregates.push(AblationRow {
            kind: "aggregate".into(),
            variant,
            seed: None,
            status: if rates.len() == seeds.len() { "ok".into() } else { format!("{} of {} runs failed", seeds.len() - rates.len(), seeds.len()) },
            win_rate: (!rates.is_empty()).then_some(mean),
            win_rate_std: (!rates.is_empty()).then_some(std),
            runs: rates.len(),
        });
    }
    rows.extend(aggregates);
    let mut w = csv::Writer::from_path(out_dir.join(ABLATION_FILE)).map_err(|e| MaserError::Io(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| MaserError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_map_to_configs() {
        let base = TrainConfig::default();
        for v in VARIANTS {
            apply_variant(&base, v).unwrap();
        }
        let q = apply_variant(&base, "qmix").unwrap();
        assert_eq!((q.lambda, q.lambda_i, q.lambda_e, q.lambda_d), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(apply_variant(&base, "alpha0").unwrap().alpha, 0.0);
        assert!(apply_variant(&base, "bogus").is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.25, 0.75]);
        assert_eq!(m, 0.5);
        assert!((s - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
    }
}
