//! Descriptor-count sweep: train the cascade at several descriptor
//! orders, a few seeds each, and tabulate test metrics per order.

use std::io::Write;

use rayon::prelude::*;

use super::network::CascadedModel;
use super::train::{make_sample, train, LabeledSet, TrainSample};
use super::{ModelError, NetworkConfig, TrainConfig};
use crate::autodiff::Scalar;
use crate::eval::{aggregate_metrics, pixel_metrics, postprocess_columns, threshold_posteriors,
                  PixelMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub order: usize,
    pub seeds: usize,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f_score_mean: f64,
    pub f_score_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test-set pixel metrics of a trained model: predict, threshold at 0.5,
/// column-postprocess, compare per image, average.
pub fn evaluate_test_set<S: Scalar>(
    model: &CascadedModel<S>,
    test: &LabeledSet,
) -> Result<PixelMetrics, ModelError> {
    let per_image: Vec<Result<PixelMetrics, ModelError>> = test
        .images
        .par_iter()
        .zip(&test.masks)
        .map(|(image, mask)| {
            let (_, posteriors) = model.predict(image)?;
            let predicted = postprocess_columns(&threshold_posteriors(&posteriors, 0.5));
            pixel_metrics(&predicted, mask).map_err(|e| ModelError::ShapeMismatch(e.to_string()))
        })
        .collect();
    let mut metrics = Vec::with_capacity(per_image.len());
    for m in per_image {
        metrics.push(m?);
    }
    Ok(aggregate_metrics(&metrics))
}

/// Materialize train samples for a given descriptor order.
pub fn build_samples<S: Scalar>(
    set: &LabeledSet,
    order: usize,
    num_classes: usize,
) -> Result<Vec<TrainSample<S>>, ModelError> {
    let samples: Vec<Result<TrainSample<S>, ModelError>> = set
        .images
        .par_iter()
        .zip(&set.masks)
        .map(|(image, mask)| make_sample(image, mask, order, num_classes))
        .collect();
    samples.into_iter().collect()
}

/// Train one model per (order, seed) and aggregate test metrics per
/// order. Seeds are `train_config.seed + k` for k in 0..num_seeds; the
/// same seed drives initialization and the training schedule of one run.
pub fn run_sweep<S: Scalar>(
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    test_set: &LabeledSet,
    orders: &[usize],
    num_seeds: usize,
) -> Result<Vec<SweepRow>, ModelError> {
    if num_seeds == 0 {
        return Err(ModelError::ConfigError("need at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(orders.len());
    for &order in orders {
        let config = NetworkConfig { descriptor_order: order, ..net_config.clone() };
        config.validate()?;
        let train_samples = build_samples::<S>(train_set, order, config.num_classes)?;
        let val_samples = build_samples::<S>(val_set, order, config.num_classes)?;

        let mut precisions = Vec::with_capacity(num_seeds);
        let mut recalls = Vec::with_capacity(num_seeds);
        let mut f_scores = Vec::with_capacity(num_seeds);
        for k in 0..num_seeds {
            let seed = train_config.seed + k as u64;
            let tc = TrainConfig { seed, ..train_config.clone() };
            let mut model = CascadedModel::<S>::build(&config, seed)?;
            train(&mut model, &train_samples, &val_samples, &tc)?;
            let metrics = evaluate_test_set(&model, test_set)?;
            precisions.push(metrics.precision);
            recalls.push(metrics.recall);
            f_scores.push(metrics.f_score);
        }
        let (precision_mean, precision_std) = mean_std(&precisions);
        let (recall_mean, recall_std) = mean_std(&recalls);
        let (f_score_mean, f_score_std) = mean_std(&f_scores);
        rows.push(SweepRow {
            order,
            seeds: num_seeds,
            precision_mean,
            precision_std,
            recall_mean,
            recall_std,
            f_score_mean,
            f_score_std,
        });
    }
    Ok(rows)
}

/// CSV: one row per descriptor order with mean and standard deviation of
/// each metric over the seeds.
pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "n,seeds,precision_mean,precision_std,recall_mean,recall_std,f_score_mean,f_score_std"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.order,
            r.seeds,
            r.precision_mean,
            r.precision_std,
            r.recall_mean,
            r.recall_std,
            r.f_score_mean,
            r.f_score_std
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[2.0]);
        assert_eq!((m, s), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![SweepRow {
            order: 1,
            seeds: 3,
            precision_mean: 0.9,
            precision_std: 0.01,
            recall_mean: 0.8,
            recall_std: 0.02,
            f_score_mean: 0.85,
            f_score_std: 0.015,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,seeds,"));
        assert!(text.contains("1,3,0.9,0.01,0.8,0.02,0.85,0.015"));
    }
}
