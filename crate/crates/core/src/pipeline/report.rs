use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::Metrics;
use super::train::RunResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Per-run results of one experiment and their mean and population
/// standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_fingerprint: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub mean: Metrics,
    pub std: Metrics,
}

/// FNV-1a over the canonical TOML form of the config.
pub fn config_fingerprint(cfg: &ExperimentConfig) -> Result<String> {
    let text = cfg.to_toml_string()?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Mean and population standard deviation of each metric.
pub fn aggregate(metrics: &[Metrics]) -> Result<(Metrics, Metrics)> {
    if metrics.is_empty() {
        return Err(Error::Input("nothing to aggregate".into()));
    }
    let k = metrics.len() as f64;
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    for m in metrics {
        for (acc, v) in mean.iter_mut().zip(m.values()) {
            *acc += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= k;
    }
    for m in metrics {
        for ((acc, v), mu) in std.iter_mut().zip(m.values()).zip(mean) {
            *acc += (v - mu).powi(2);
        }
    }
    for v in std.iter_mut() {
        *v = (*v / k).sqrt();
    }
    Ok((Metrics::from_values(mean), Metrics::from_values(std)))
}

impl RunReport {
    pub fn new(name: &str, config: ExperimentConfig, runs: Vec<RunResult>, failures: Vec<RunFailure>) -> Result<Self> {
        let metrics: Vec<Metrics> = runs.iter().map(|r| r.evaluation.metrics).collect();
        let (mean, std) = aggregate(&metrics)?;
        Ok(Self {
            name: name.to_string(),
            config_fingerprint: config_fingerprint(&config)?,
            seeds: runs.iter().map(|r| r.seed).collect(),
            config,
            runs,
            failures,
            mean,
            std,
        })
    }

    /// Per-run values of one metric, in seed order.
    pub fn metric_values(&self, pick: impl Fn(&Metrics) -> f64) -> Vec<f64> {
        self.runs.iter().map(|r| pick(&r.evaluation.metrics)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("malformed report: {e}")))
    }
}

/// Header of the summary table: precision, recall, F1, accuracy,
/// specificity, ECE, ACE, each as a mean and standard deviation column.
pub fn table_header() -> Vec<String> {
    let mut h = vec!["model".to_string(), "runs".to_string()];
    for name in ["prec", "rec", "f1", "acc", "spec", "ece", "ace"] {
        h.push(format!("{name}_mean"));
        h.push(format!("{name}_std"));
    }
    h
}

/// One CSV line per report.
pub fn reports_to_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(table_header()).map_err(to_err)?;
    for r in reports {
        let mut row = vec![r.name.clone(), r.runs.len().to_string()];
        for (m, s) in r.mean.values().iter().zip(r.std.values()) {
            row.push(format!("{m:.6}"));
            row.push(format!("{s:.6}"));
        }
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: f64) -> Metrics {
        Metrics::from_values([v; 7])
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let (mean, std) = aggregate(&[m(1.0), m(3.0)]).unwrap();
        assert_eq!(mean.f1, 2.0);
        assert_eq!(std.f1, 1.0);
        let (mean, std) = aggregate(&[m(0.7)]).unwrap();
        assert_eq!(mean.accuracy, 0.7);
        assert_eq!(std.accuracy, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.lr = 0.5;
        assert_eq!(config_fingerprint(&a).unwrap(), config_fingerprint(&a).unwrap());
        assert_ne!(config_fingerprint(&a).unwrap(), config_fingerprint(&b).unwrap());
    }

    #[test]
    fn header_order() {
        let h = table_header();
        assert_eq!(h.len(), 16);
        assert_eq!(&h[2..6], ["prec_mean", "prec_std", "rec_mean", "rec_std"]);
        assert_eq!(&h[14..], ["ace_mean", "ace_std"]);
    }
}
