use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FittedModel, ModelHyperparams, SolverOptions};
use crate::error::{Error, Result};
use crate::evaluation::meae;
use crate::features::{FeatureTable, TileKey};
use crate::survey::SurveyTable;

/// Tile center used for spatial splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct TileLocation {
    pub key: TileKey,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Folds were built within each ROI separately.
    pub per_roi: bool,
    pub folds: BTreeMap<TileKey, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, key: &TileKey) -> Option<usize> {
        self.folds.get(key).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Recursive median bisection: split along easting, then each half along
/// northing, alternating, until `k` groups remain. Ties fall back to tile
/// order. Group sizes are proportional to the folds they receive.
fn bisect(
    tiles: &mut [&TileLocation],
    k: usize,
    by_easting: bool,
    first_fold: usize,
    out: &mut BTreeMap<TileKey, usize>,
) {
    if k == 1 {
        for t in tiles.iter() {
            out.insert(t.key.clone(), first_fold);
        }
        return;
    }
    tiles.sort_by(|a, b| {
        let (ca, cb) = if by_easting { (a.x, b.x) } else { (a.y, b.y) };
        ca.total_cmp(&cb).then_with(|| a.key.cmp(&b.key))
    });
    let k_left = k / 2;
    let n_left = (tiles.len() * k_left + k / 2) / k;
    let (left, right) = tiles.split_at_mut(n_left);
    bisect(left, k_left, !by_easting, first_fold, out);
    bisect(right, k - k_left, !by_easting, first_fold + k_left, out);
}

/// Spatially contiguous folds built separately within each ROI. For `k = 4`
/// this is a split at the median easting followed by a split of each half at
/// its median northing.
pub fn spatial_kfold(tiles: &[TileLocation], k: usize) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut by_roi: BTreeMap<&str, Vec<&TileLocation>> = BTreeMap::new();
    for t in tiles {
        by_roi.entry(t.key.roi.as_str()).or_default().push(t);
    }
    let mut folds = BTreeMap::new();
    for (roi, mut group) in by_roi {
        if group.len() < k {
            return Err(Error::invalid(format!(
                "ROI `{roi}` has {} tiles, fewer than {k} folds",
                group.len()
            )));
        }
        let first = (group[0].x, group[0].y);
        if group.iter().all(|t| (t.x, t.y) == first) {
            log::warn!("ROI `{roi}`: all tiles share one location; folds follow tile order");
        }
        bisect(&mut group, k, true, 0, &mut folds);
    }
    if folds.len() != tiles.len() {
        return Err(Error::invalid("duplicate tile keys in spatial split"));
    }
    Ok(FoldAssignment {
        k,
        per_roi: true,
        folds,
    })
}

/// Seeded random assignment of `keys` to `k` folds, stratified by ROI: each
/// ROI's tiles are shuffled and dealt round-robin, continuing the deal where
/// the previous ROI stopped.
pub fn inner_folds(keys: &[TileKey], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 inner folds, got {k}")));
    }
    if keys.len() < k {
        return Err(Error::invalid(format!(
            "empty inner fold: {} training tiles for {k} inner folds",
            keys.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_roi: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        by_roi.entry(key.roi.as_str()).or_default().push(i);
    }
    let mut out = vec![0; keys.len()];
    let mut next = 0;
    for (_, mut idx) in by_roi {
        idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % k;
            next += 1;
        }
    }
    Ok(out)
}

/// Feature rows joined with observed counts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub keys: Vec<TileKey>,
    pub names: Vec<String>,
    /// Raw (unstandardized) features, one row per key.
    pub x: Array2<f64>,
    pub counts: Vec<f64>,
}

impl TrainingData {
    /// Active survey rows that also have a feature row, in survey order.
    pub fn join(features: &FeatureTable, survey: &SurveyTable) -> Result<TrainingData> {
        let index = features.row_index();
        let mut keys = Vec::new();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        let mut missing = Vec::new();
        for r in survey.active() {
            match index.get(&r.key) {
                Some(&i) => {
                    keys.push(r.key.clone());
                    rows.push(i);
                    counts.push(r.observed as f64);
                }
                None => missing.push(r.key.to_string()),
            }
        }
        if !missing.is_empty() {
            log::warn!(
                "{} surveyed tiles have no complete feature row and are skipped: {}",
                missing.len(),
                missing.join(", ")
            );
        }
        if keys.is_empty() {
            return Err(Error::invalid("no surveyed tile has a feature row"));
        }
        let x = Array2::from_shape_fn((rows.len(), features.n_columns()), |(i, j)| {
            features.columns[j].values[rows[i]]
        });
        Ok(TrainingData {
            keys,
            names: features.names().into_iter().map(str::to_string).collect(),
            x,
            counts,
        })
    }

    fn subset(&self, idx: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<TileKey>) {
        let x = self.x.select(ndarray::Axis(0), idx);
        let counts = idx.iter().map(|&i| self.counts[i]).collect();
        let keys = idx.iter().map(|&i| self.keys[i].clone()).collect();
        (x, counts, keys)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvSettings {
    pub grid: ModelHyperparams,
    pub inner_k: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            grid: ModelHyperparams::default(),
            inner_k: 3,
            seed: 17,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledPrediction {
    pub tile_id: u32,
    pub roi: String,
    pub fold: usize,
    pub observed: f64,
    pub predicted: f64,
}

impl PooledPrediction {
    pub fn key(&self) -> TileKey {
        TileKey::new(&self.roi, self.tile_id)
    }
}

/// Inner-CV score of one hyperparameter candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub delta: f64,
    pub lambda_factor: f64,
    /// Mean over inner folds of the count-scale MeAE; `None` if a fit failed.
    pub inner_meae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOutput {
    /// One model per outer fold, refitted on the whole training part.
    pub models: Vec<FittedModel>,
    /// Held-out predictions of every tile, in training-data order.
    pub predictions: Vec<PooledPrediction>,
    pub scores: Vec<Vec<CandidateScore>>,
}

fn score_candidate(
    data: &TrainingData,
    train: &[usize],
    inner: &[usize],
    settings: &CvSettings,
    delta: f64,
    factor: f64,
) -> Option<f64> {
    let mut total = 0.0;
    for j in 0..settings.inner_k {
        let fit_idx: Vec<usize> = train
            .iter()
            .zip(inner)
            .filter(|(_, &f)| f != j)
            .map(|(&i, _)| i)
            .collect();
        let val_idx: Vec<usize> = train
            .iter()
            .zip(inner)
            .filter(|(_, &f)| f == j)
            .map(|(&i, _)| i)
            .collect();
        let (x_fit, c_fit, _) = data.subset(&fit_idx);
        let (x_val, c_val, _) = data.subset(&val_idx);
        let model = match FittedModel::fit(&data.names, x_fit.view(), &c_fit, delta, factor, &settings.solver) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("inner fit failed for delta={delta} lambda_factor={factor}: {e}");
                return None;
            }
        };
        let predicted = model.predict_counts(x_val.view());
        total += meae(&c_val, &predicted).ok()?;
    }
    Some(total / settings.inner_k as f64)
}

/// Refitted model, candidate scores and `(row, prediction)` pairs of one fold.
type FoldResult = (FittedModel, Vec<CandidateScore>, Vec<(usize, f64)>);

/// Outer spatial folds; inside each, seeded inner folds choose `(δ, λ)` by
/// mean count-scale MeAE, the winner is refitted on the training part and
/// predicts the held-out fold.
pub fn nested_cv_train(data: &TrainingData, outer: &FoldAssignment, settings: &CvSettings) -> Result<CvOutput> {
    settings.grid.validate()?;
    let mut fold_of = Vec::with_capacity(data.keys.len());
    for key in &data.keys {
        fold_of.push(
            outer
                .fold_of(key)
                .ok_or_else(|| Error::invalid(format!("tile {key} has no outer fold")))?,
        );
    }
    let candidates = settings.grid.candidates();

    let per_fold: Vec<Result<FoldResult>> = (0..outer.k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.keys.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..data.keys.len()).filter(|&i| fold_of[i] == f).collect();
            if test.is_empty() || train.is_empty() {
                return Err(Error::invalid(format!(
                    "outer fold {f} has no training or no held-out tiles"
                )));
            }
            let train_keys: Vec<TileKey> = train.iter().map(|&i| data.keys[i].clone()).collect();
            let inner = inner_folds(&train_keys, settings.inner_k, settings.seed.wrapping_add(f as u64))?;

            let scores: Vec<CandidateScore> = if candidates.len() == 1 {
                vec![CandidateScore {
                    delta: candidates[0].0,
                    lambda_factor: candidates[0].1,
                    inner_meae: None,
                }]
            } else {
                candidates
                    .par_iter()
                    .map(|&(delta, factor)| CandidateScore {
                        delta,
                        lambda_factor: factor,
                        inner_meae: score_candidate(data, &train, &inner, settings, delta, factor),
                    })
                    .collect()
            };
            let best = if candidates.len() == 1 {
                &scores[0]
            } else {
                scores
                    .iter()
                    .filter(|s| s.inner_meae.is_some_and(f64::is_finite))
                    .min_by(|a, b| a.inner_meae.unwrap().total_cmp(&b.inner_meae.unwrap()))
                    .ok_or_else(|| Error::invalid(format!("every candidate failed in outer fold {f}")))?
            };

            let (x_train, c_train, _) = data.subset(&train);
            let mut model = FittedModel::fit(
                &data.names,
                x_train.view(),
                &c_train,
                best.delta,
                best.lambda_factor,
                &settings.solver,
            )?;
            model.seed = settings.seed;
            model.fold = Some(f);
            let (x_test, _, _) = data.subset(&test);
            let preds = model.predict_counts(x_test.view());
            Ok((model, scores, test.into_iter().zip(preds).collect()))
        })
        .collect();

    let mut models = Vec::with_capacity(outer.k);
    let mut scores = Vec::with_capacity(outer.k);
    let mut predicted = HashMap::with_capacity(data.keys.len());
    for result in per_fold {
        let (model, s, preds) = result?;
        models.push(model);
        scores.push(s);
        predicted.extend(preds);
    }
    let predictions = data
        .keys
        .iter()
        .enumerate()
        .map(|(i, key)| PooledPrediction {
            tile_id: key.tile_id,
            roi: key.roi.clone(),
            fold: fold_of[i],
            observed: data.counts[i],
            predicted: predicted[&i],
        })
        .collect();
    Ok(CvOutput {
        models,
        predictions,
        scores,
    })
}
