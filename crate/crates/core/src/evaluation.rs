//! Accuracy metrics over pooled held-out predictions, the report format and
//! the predicted-vs-observed artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TileKey;
use crate::regression::PooledPrediction;

fn check_lengths(observed: &[f64], predicted: &[f64]) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "observed has {} rows, predicted has {}",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::invalid("metric over empty input"));
    }
    Ok(())
}

/// Median with the midpoint rule for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of empty input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Coefficient of determination against the mean of `observed`. Not clamped.
pub fn r2(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R2 undefined: observed values are constant"));
    }
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn meae(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let errs: Vec<f64> = observed.iter().zip(predicted).map(|(y, p)| (y - p).abs()).collect();
    median(&errs)
}

/// Median absolute percentage error in percent over rows with a positive
/// observation. Returns the value and the number of skipped zero rows.
pub fn meape(observed: &[f64], predicted: &[f64]) -> Result<(f64, usize)> {
    check_lengths(observed, predicted)?;
    let ratios: Vec<f64> = observed
        .iter()
        .zip(predicted)
        .filter(|(y, _)| **y > 0.0)
        .map(|(y, p)| (y - p).abs() / y)
        .collect();
    if ratios.is_empty() {
        return Err(Error::invalid("MeAPE undefined: every observed value is zero"));
    }
    Ok((median(&ratios)? * 100.0, observed.len() - ratios.len()))
}

/// Median of `|y - ŷ| / (y + 10)`, as a ratio.
pub fn ameape(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let ratios: Vec<f64> = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs() / (y + 10.0))
        .collect();
    median(&ratios)
}

/// Relative error of the total, in percent.
pub fn aggpe(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let total: f64 = observed.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("AggPE undefined: observed total is zero"));
    }
    let pred: f64 = predicted.iter().sum();
    Ok((total - pred).abs() / total * 100.0)
}

/// The five headline metrics. Field names are the report keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "MeAPE")]
    pub meape: f64,
    #[serde(rename = "aMeAPE")]
    pub ameape: f64,
    #[serde(rename = "MeAE")]
    pub meae: f64,
    #[serde(rename = "AggPE")]
    pub aggpe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub rows: usize,
    pub meape_used: usize,
    pub meape_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub metrics: Metrics,
    /// AggPE per ROI, percent. `None` where the ROI's observed total is zero.
    pub aggpe_by_roi: BTreeMap<String, Option<f64>>,
    pub counts: RowCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl MetricsReport {
    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const MODEL_ROW: &str = "Model";
pub const NULL_ROW: &str = "Null Model";

fn report_row(name: &str, keys: &[TileKey], observed: &[f64], predicted: &[f64]) -> Result<ReportRow> {
    let (meape_v, skipped) = meape(observed, predicted)?;
    let metrics = Metrics {
        r2: r2(observed, predicted)?,
        meape: meape_v,
        ameape: ameape(observed, predicted)?,
        meae: meae(observed, predicted)?,
        aggpe: aggpe(observed, predicted)?,
    };
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((k, y), p) in keys.iter().zip(observed).zip(predicted) {
        let g = groups.entry(k.roi.as_str()).or_default();
        g.0.push(*y);
        g.1.push(*p);
    }
    let aggpe_by_roi = groups
        .into_iter()
        .map(|(roi, (y, p))| (roi.to_string(), aggpe(&y, &p).ok()))
        .collect();
    Ok(ReportRow {
        model: name.to_string(),
        metrics,
        aggpe_by_roi,
        counts: RowCounts {
            rows: observed.len(),
            meape_used: observed.len() - skipped,
            meape_skipped: skipped,
        },
    })
}

/// Null-model held-out predictions: each fold gets the mean observed count of
/// the other folds.
pub fn null_predictions(predictions: &[PooledPrediction]) -> Result<Vec<f64>> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for p in predictions {
        let e = sums.entry(p.fold).or_default();
        e.0 += p.observed;
        e.1 += 1;
    }
    let total: f64 = sums.values().map(|v| v.0).sum();
    let n: usize = sums.values().map(|v| v.1).sum();
    predictions
        .iter()
        .map(|p| {
            let (s, c) = sums[&p.fold];
            if n == c {
                Err(Error::invalid("null model needs at least two folds"))
            } else {
                Ok((total - s) / (n - c) as f64)
            }
        })
        .collect()
}

/// Metrics for the model and the null model over pooled predictions. If
/// `expected` is given, predictions must cover exactly those tiles.
pub fn pooled_report(predictions: &[PooledPrediction], expected: Option<&[TileKey]>) -> Result<MetricsReport> {
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for p in predictions {
        if !seen.insert(p.key()) {
            dups.push(p.key().to_string());
        }
    }
    if !dups.is_empty() {
        return Err(Error::invalid(format!(
            "duplicate predictions for tiles {}",
            dups.join(", ")
        )));
    }
    if let Some(expected) = expected {
        let want: BTreeSet<TileKey> = expected.iter().cloned().collect();
        let missing: Vec<String> = want.difference(&seen).map(|k| k.to_string()).collect();
        let extra: Vec<String> = seen.difference(&want).map(|k| k.to_string()).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::invalid(format!(
                "prediction coverage mismatch; missing [{}], unexpected [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
    }
    let keys: Vec<TileKey> = predictions.iter().map(|p| p.key()).collect();
    let observed: Vec<f64> = predictions.iter().map(|p| p.observed).collect();
    let predicted: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let null = null_predictions(predictions)?;
    Ok(MetricsReport {
        rows: vec![
            report_row(MODEL_ROW, &keys, &observed, &predicted)?,
            report_row(NULL_ROW, &keys, &observed, &null)?,
        ],
        config: None,
    })
}

pub fn predictions_to_csv(predictions: &[PooledPrediction]) -> String {
    let mut out = String::from("tile_id,roi,fold,observed,predicted\n");
    for p in predictions {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?}",
            p.tile_id, p.roi, p.fold, p.observed, p.predicted
        );
    }
    out
}

pub fn write_predictions_csv(path: &Path, predictions: &[PooledPrediction]) -> Result<()> {
    std::fs::write(path, predictions_to_csv(predictions)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PooledPrediction>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| Error::parse(path, i + 2, e.to_string()))?);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

/// `roi,tile_id,observed,predicted,null_predicted` rows for plotting.
pub fn observed_vs_predicted_csv(predictions: &[PooledPrediction]) -> Result<String> {
    let null = null_predictions(predictions)?;
    let mut out = String::from("roi,tile_id,observed,predicted,null_predicted\n");
    for (p, n) in predictions.iter().zip(null) {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?}",
            p.roi, p.tile_id, p.observed, p.predicted, n
        );
    }
    Ok(out)
}

/// 600×600 scatter of predicted against observed on `log10(1 + count)` axes
/// with the identity line.
pub fn scatter_svg(predictions: &[PooledPrediction]) -> String {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 60.0;
    let t = |v: f64| (1.0 + v.max(0.0)).log10();
    let hi = predictions
        .iter()
        .flat_map(|p| [t(p.observed), t(p.predicted)])
        .fold(1.0_f64, f64::max)
        .ceil();
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + v / hi * span;
    let py = |v: f64| SIZE - MARGIN - v / hi * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="0 0 600 600">"#
    );
    let _ = writeln!(s, r#"<rect width="600" height="600" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        px(0.0),
        py(0.0),
        px(hi),
        py(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        px(0.0),
        py(0.0),
        px(0.0),
        py(hi)
    );
    for d in 0..=hi as u32 {
        let v = d as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            px(v),
            py(0.0) + 18.0,
            10u64.pow(d)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
            px(0.0) - 6.0,
            py(v) + 4.0,
            10u64.pow(d)
        );
    }
    let _ = writeln!(
        s,
        r#"<line id="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(hi),
        py(hi)
    );
    for p in predictions {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.6"/>"#,
            px(t(p.observed)),
            py(t(p.predicted))
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="300" y="590" font-size="14" text-anchor="middle">observed (1 + count, log scale)</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="300" font-size="14" text-anchor="middle" transform="rotate(-90 16 300)">predicted (1 + count, log scale)</text>"#
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(roi: &str, id: u32, fold: usize, observed: f64, predicted: f64) -> PooledPrediction {
        PooledPrediction {
            tile_id: id,
            roi: roi.into(),
            fold,
            observed,
            predicted,
        }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 1.0, 3.0]).unwrap(), 0.5);
        assert!(r2(&[2.0, 2.0], &[1.0, 3.0]).is_err());

        assert_eq!(meae(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(meae(&[0.0, 0.0, 0.0], &[0.0, 1.0, 10.0]).unwrap(), 1.0);
        assert!(meae(&[], &[]).is_err());

        assert_eq!(meape(&[10.0, 20.0, 40.0], &[15.0, 20.0, 30.0]).unwrap(), (25.0, 0));
        assert_eq!(meape(&[0.0, 10.0], &[5.0, 10.0]).unwrap(), (0.0, 1));
        assert!(meape(&[0.0], &[1.0]).is_err());

        assert_eq!(ameape(&[10.0, 20.0, 40.0], &[15.0, 20.0, 30.0]).unwrap(), 0.2);
        assert_eq!(ameape(&[0.0], &[5.0]).unwrap(), 0.5);

        assert_eq!(aggpe(&[60.0, 40.0], &[50.0, 37.0]).unwrap(), 13.0);
        assert!(aggpe(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn in_sample_null_is_trivial() {
        let y = [3.0, 9.0, 1.0, 7.0];
        let m = crate::regression::null_model(&y).unwrap().predict();
        let p = vec![m; 4];
        assert_eq!(r2(&y, &p).unwrap(), 0.0);
        assert_eq!(aggpe(&y, &p).unwrap(), 0.0);
    }

    #[test]
    fn report_keys_and_null_row() {
        let preds = vec![
            pred("A", 0, 0, 10.0, 10.0),
            pred("A", 1, 0, 20.0, 20.0),
            pred("B", 0, 1, 30.0, 30.0),
            pred("B", 1, 1, 0.0, 0.0),
        ];
        let rep = pooled_report(&preds, None).unwrap();
        let m = &rep.row(MODEL_ROW).unwrap().metrics;
        assert_eq!((m.r2, m.meape, m.ameape, m.meae, m.aggpe), (1.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(rep.row(MODEL_ROW).unwrap().counts.meape_skipped, 1);
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for row in json["rows"].as_array().unwrap() {
            let keys: BTreeSet<&str> = row["metrics"].as_object().unwrap().keys().map(|s| s.as_str()).collect();
            assert_eq!(keys, BTreeSet::from(["R2", "MeAPE", "aMeAPE", "MeAE", "AggPE"]));
        }
        // fold means 15 and 15: the null model predicts 15 in fold 0 and 15 in fold 1
        let null = rep.row(NULL_ROW).unwrap();
        assert_eq!(null_predictions(&preds).unwrap(), vec![15.0, 15.0, 15.0, 15.0]);
        assert!(null.metrics.r2 <= 0.0);
    }

    #[test]
    fn pooled_null_can_be_negative() {
        let preds = vec![
            pred("A", 0, 0, 1.0, 1.0),
            pred("A", 1, 0, 2.0, 2.0),
            pred("A", 2, 1, 10.0, 10.0),
            pred("A", 3, 1, 12.0, 12.0),
        ];
        let rep = pooled_report(&preds, None).unwrap();
        assert!(rep.row(NULL_ROW).unwrap().metrics.r2 < 0.0);
    }

    #[test]
    fn coverage_errors() {
        let preds = vec![pred("A", 0, 0, 1.0, 1.0), pred("A", 0, 1, 2.0, 2.0)];
        assert!(pooled_report(&preds, None).is_err());
        let preds = vec![pred("A", 0, 0, 1.0, 1.0), pred("A", 1, 1, 2.0, 2.0)];
        let want = [TileKey::new("A", 0), TileKey::new("A", 2)];
        assert!(pooled_report(&preds, Some(&want)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let preds = vec![pred("A", 3, 2, 7.0, 0.1 + 0.2), pred("B", 0, 0, 0.0, 1e-300)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions_csv(&path, &preds).unwrap();
        assert_eq!(read_predictions_csv(&path).unwrap(), preds);
        assert!(read_predictions_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn scatter_shape() {
        let svg = scatter_svg(&[pred("A", 0, 0, 10.0, 12.0), pred("A", 1, 0, 300.0, 250.0)]);
        assert!(svg.contains(r#"width="600" height="600""#));
        assert!(svg.contains(r#"id="identity""#));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1.0..500.0f64, 0.0..500.0f64), 2..30)
    }

    proptest! {
        #[test]
        fn permutation_invariant(v in pairs(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut w = v.clone();
            w.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (y1, p1): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let (y2, p2): (Vec<f64>, Vec<f64>) = w.into_iter().unzip();
            prop_assert_eq!(meae(&y1, &p1).unwrap(), meae(&y2, &p2).unwrap());
            prop_assert_eq!(meape(&y1, &p1).unwrap(), meape(&y2, &p2).unwrap());
            prop_assert_eq!(ameape(&y1, &p1).unwrap(), ameape(&y2, &p2).unwrap());
            if let (Ok(a), Ok(b)) = (r2(&y1, &p1), r2(&y2, &p2)) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
            let (a, b) = (aggpe(&y1, &p1).unwrap(), aggpe(&y2, &p2).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn medians_stable_under_duplication(v in pairs()) {
            let (y, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
            let p2: Vec<f64> = p.iter().chain(&p).copied().collect();
            prop_assert_eq!(meae(&y, &p).unwrap(), meae(&y2, &p2).unwrap());
            prop_assert_eq!(meape(&y, &p).unwrap().0, meape(&y2, &p2).unwrap().0);
            prop_assert_eq!(ameape(&y, &p).unwrap(), ameape(&y2, &p2).unwrap());
        }

        #[test]
        fn aggpe_zero_iff_totals_match(v in pairs()) {
            let (y, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let sy: f64 = y.iter().sum();
            let sp: f64 = p.iter().sum();
            prop_assert_eq!(aggpe(&y, &p).unwrap() == 0.0, sy == sp);
        }
    }
}
