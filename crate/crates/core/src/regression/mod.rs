//! Log-population model: Huber loss with ℓ1 penalty on z-scored features,
//! spatial cross-validation with inner hyperparameter selection, and the
//! mean-count null model.

mod cv;
mod huber;

pub use cv::{
    inner_folds, nested_cv_train, spatial_kfold, CandidateScore, CvOutput, CvSettings, FoldAssignment,
    PooledPrediction, TileLocation, TrainingData,
};
pub use huber::{fit_huber_l1, huber, huber_location, huber_psi, lambda_max, objective, HuberFit, SolverOptions};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log(1 + y)`.
pub fn target_transform(counts: &[f64]) -> Result<Vec<f64>> {
    counts
        .iter()
        .map(|&c| {
            if c >= 0.0 && c.is_finite() {
                Ok(c.ln_1p())
            } else {
                Err(Error::invalid(format!(
                    "population count must be non-negative, got {c}"
                )))
            }
        })
        .collect()
}

/// `max(0, exp(v) − 1)`.
pub fn inverse_transform(v: f64) -> f64 {
    v.exp_m1().max(0.0)
}

/// Candidate grids for the Huber transition and the ℓ1 weight. Lambda values
/// are multiples of the data-dependent `λ_max` of each fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHyperparams {
    pub deltas: Vec<f64>,
    pub lambda_factors: Vec<f64>,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        ModelHyperparams {
            deltas: vec![0.5, 1.0, 1.35, 2.0],
            lambda_factors: vec![0.0001, 0.001, 0.01, 0.1, 1.0],
        }
    }
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.lambda_factors.is_empty() {
            return Err(Error::invalid("hyperparameter grids must be non-empty"));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!("delta candidates must be positive, got {d}")));
        }
        if let Some(l) = self.lambda_factors.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!(
                "lambda candidates must be non-negative, got {l}"
            )));
        }
        Ok(())
    }

    /// `(delta, lambda_factor)` pairs, delta-major.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        self.deltas
            .iter()
            .flat_map(|&d| self.lambda_factors.iter().map(move |&l| (d, l)))
            .collect()
    }
}

/// Column means and population standard deviations. Columns with zero
/// spread are dropped from the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub kept: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        let mut kept = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            // spread indistinguishable from rounding noise counts as constant
            let keep = sd > 1e-12 * mean.abs().max(1.0);
            means.push(mean);
            sds.push(if keep { sd } else { 0.0 });
            kept.push(keep);
        }
        Standardizer { means, sds, kept }
    }

    /// Z-scores of the kept columns only.
    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let cols: Vec<usize> = (0..self.kept.len()).filter(|&j| self.kept[j]).collect();
        Array2::from_shape_fn((x.nrows(), cols.len()), |(i, k)| {
            let j = cols[k];
            (x[[i, j]] - self.means[j]) / self.sds[j]
        })
    }
}

/// A fitted model, self-contained for prediction and serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub feature_names: Vec<String>,
    /// Coefficients on the z-scored scale; 0 for dropped features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    pub dropped_features: Vec<String>,
    /// The log target is fitted as `(log(1 + y) − target_mean) / target_scale`.
    pub target_mean: f64,
    pub target_scale: f64,
    pub delta: f64,
    pub lambda: f64,
    pub lambda_factor: f64,
    pub seed: u64,
    pub fold: Option<usize>,
    pub iterations: usize,
    pub objective: f64,
}

impl FittedModel {
    /// Fits on raw feature rows and observed counts.
    pub fn fit(
        names: &[String],
        x: ArrayView2<f64>,
        counts: &[f64],
        delta: f64,
        lambda_factor: f64,
        solver: &SolverOptions,
    ) -> Result<FittedModel> {
        if names.len() != x.ncols() {
            return Err(Error::invalid("feature names do not match design columns"));
        }
        let logs = target_transform(counts)?;
        let n = logs.len().max(1) as f64;
        let target_mean = logs.iter().sum::<f64>() / n;
        let sd = (logs.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / n).sqrt();
        let target_scale = if sd > 0.0 { sd } else { 1.0 };
        let y: Vec<f64> = logs.iter().map(|v| (v - target_mean) / target_scale).collect();

        let scaler = Standardizer::fit(x);
        let z = scaler.transform(x);
        let lambda = lambda_factor * lambda_max(z.view(), &y, delta);
        let fit = fit_huber_l1(z.view(), &y, delta, lambda, solver)?;

        let mut coefficients = vec![0.0; names.len()];
        let mut kept = fit.coefficients.iter();
        for (j, c) in coefficients.iter_mut().enumerate() {
            if scaler.kept[j] {
                *c = *kept.next().expect("one coefficient per kept column");
            }
        }
        Ok(FittedModel {
            feature_names: names.to_vec(),
            coefficients,
            intercept: fit.intercept,
            feature_means: scaler.means,
            feature_sds: scaler.sds,
            dropped_features: names
                .iter()
                .zip(&scaler.kept)
                .filter(|(_, k)| !**k)
                .map(|(n, _)| n.clone())
                .collect(),
            target_mean,
            target_scale,
            delta,
            lambda,
            lambda_factor,
            seed: 0,
            fold: None,
            iterations: fit.iterations,
            objective: fit.objective(),
        })
    }

    /// Predicted `log(1 + count)` for one raw feature row.
    pub fn predict_log(&self, row: &[f64]) -> f64 {
        let mut s = self.intercept;
        for (j, &v) in row.iter().enumerate() {
            if self.feature_sds[j] > 0.0 {
                s += self.coefficients[j] * (v - self.feature_means[j]) / self.feature_sds[j];
            }
        }
        self.target_mean + self.target_scale * s
    }

    pub fn predict_count(&self, row: &[f64]) -> f64 {
        inverse_transform(self.predict_log(row))
    }

    pub fn predict_counts(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.outer_iter()
            .map(|row| self.predict_count(row.as_slice().expect("standard layout")))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Predicts the training-set mean count everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub mean: f64,
}

impl NullModel {
    pub fn predict(&self) -> f64 {
        self.mean
    }
}

pub fn null_model(train_counts: &[f64]) -> Result<NullModel> {
    if train_counts.is_empty() {
        return Err(Error::invalid("null model needs at least one training row"));
    }
    Ok(NullModel {
        mean: train_counts.iter().sum::<f64>() / train_counts.len() as f64,
    })
}
