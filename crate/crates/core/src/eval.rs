//! Metrics, leave-one-patient-out cross-validation, grouped k-fold
//! hyperparameter search and the prospective train/test protocol.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::features::EventTable;
use crate::gbt::{train_gbt, DummyModel, GbtModel, GbtParams};

/// Absolute prediction errors above this percentage must not affect more
/// than [`CLINICAL_MAX_EXCEEDANCE_PCT`] of events for clinical use.
pub const CLINICAL_PE_THRESHOLD_PCT: f64 = 15.0;
pub const CLINICAL_MAX_EXCEEDANCE_PCT: f64 = 15.0;

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerEventResult {
    pub patient_id: String,
    pub visit: u32,
    pub target: f64,
    pub prediction: f64,
    /// Prediction error, percent: 100·(prediction − target)/target.
    pub pe: f64,
}

/// Aggregated evaluation of one model on one event set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub relative_rmse: f64,
    pub pct_abs_pe_gt_10: f64,
    pub pct_abs_pe_gt_15: f64,
    pub clinically_applicable: bool,
    /// The mean-predicting baseline on the same folds or split.
    pub dummy_relative_rmse: f64,
    pub per_event: Vec<PerEventResult>,
}

/// RMSE divided by the mean target.
pub fn relative_rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mean_t = targets.iter().sum::<f64>() / targets.len() as f64;
    if !(mean_t > 0.0) {
        return Err(Error::Config(format!("mean target {mean_t} must be > 0")));
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt() / mean_t)
}

/// Percent of events whose absolute prediction error exceeds the threshold.
pub fn pe_exceedance(predictions: &[f64], targets: &[f64], threshold_pct: f64) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut over = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        if !(*t > 0.0) {
            return Err(Error::Config(format!("target {t} must be > 0")));
        }
        if (100.0 * (p - t) / t).abs() > threshold_pct {
            over += 1;
        }
    }
    Ok(100.0 * over as f64 / targets.len() as f64)
}

/// Assemble a report from held-out predictions and the matching dummy
/// baseline predictions.
pub fn build_report(per_event: Vec<PerEventResult>, dummy_predictions: &[f64]) -> Result<EvalReport> {
    let predictions: Vec<f64> = per_event.iter().map(|e| e.prediction).collect();
    let targets: Vec<f64> = per_event.iter().map(|e| e.target).collect();
    let relative = relative_rmse(&predictions, &targets)?;
    let gt10 = pe_exceedance(&predictions, &targets, 10.0)?;
    let gt15 = pe_exceedance(&predictions, &targets, CLINICAL_PE_THRESHOLD_PCT)?;
    let dummy = relative_rmse(dummy_predictions, &targets)?;
    Ok(EvalReport {
        relative_rmse: relative,
        pct_abs_pe_gt_10: gt10,
        pct_abs_pe_gt_15: gt15,
        clinically_applicable: gt15 <= CLINICAL_MAX_EXCEEDANCE_PCT,
        dummy_relative_rmse: dummy,
        per_event,
    })
}

fn distinct_patients(table: &EventTable) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in &table.rows {
        if seen.insert(row.patient_id.clone()) {
            out.push(row.patient_id.clone());
        }
    }
    out
}

fn feature_rows(table: &EventTable, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| table.rows[i].features.clone()).collect()
}

fn target_rows(table: &EventTable, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| table.rows[i].target_auc).collect()
}

fn assert_no_leakage(table: &EventTable, train: &[usize], val: &[usize]) {
    let train_patients: BTreeSet<&str> =
        train.iter().map(|&i| table.rows[i].patient_id.as_str()).collect();
    let val_patients: BTreeSet<&str> =
        val.iter().map(|&i| table.rows[i].patient_id.as_str()).collect();
    assert!(
        train_patients.is_disjoint(&val_patients),
        "patient leakage between train and validation folds"
    );
}

/// Leave-one-patient-out cross-validation: one fold per distinct patient,
/// trained on every other patient's events.
pub fn lopo_cv(table: &EventTable, params: &GbtParams) -> Result<EvalReport> {
    table.validate()?;
    let patients = distinct_patients(table);
    if patients.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-patient-out needs ≥ 2 patients, got {}",
            patients.len()
        )));
    }
    let n = table.rows.len();

    let fold_results: Vec<Result<Vec<(usize, f64, f64)>>> = patients
        .par_iter()
        .map(|held_out| {
            let val: Vec<usize> =
                (0..n).filter(|&i| table.rows[i].patient_id == *held_out).collect();
            let train: Vec<usize> =
                (0..n).filter(|&i| table.rows[i].patient_id != *held_out).collect();
            if val.is_empty() {
                return Err(Error::Empty(format!("patient {held_out} has no events")));
            }
            assert_no_leakage(table, &train, &val);
            let model = train_gbt(
                &feature_rows(table, &train),
                &target_rows(table, &train),
                params,
                &table.schema.schema_id,
            )?;
            let dummy = DummyModel::train(&target_rows(table, &train))?;
            val.iter()
                .map(|&i| {
                    let p = model.predict(&table.rows[i].features)?;
                    Ok((i, p, dummy.predict()))
                })
                .collect()
        })
        .collect();

    let mut predictions = vec![f64::NAN; n];
    let mut dummy_predictions = vec![f64::NAN; n];
    for fold in fold_results {
        for (i, p, d) in fold? {
            predictions[i] = p;
            dummy_predictions[i] = d;
        }
    }
    let per_event: Vec<PerEventResult> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| PerEventResult {
            patient_id: row.patient_id.clone(),
            visit: row.visit,
            target: row.target_auc,
            prediction: predictions[i],
            pe: 100.0 * (predictions[i] - row.target_auc) / row.target_auc,
        })
        .collect();
    build_report(per_event, &dummy_predictions)
}

/// Partition events into k folds with every patient's events confined to
/// exactly one validation fold; fold sizes balanced by patient count (±1).
pub fn group_kfold_split(
    groups: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if groups.is_empty() {
        return Err(Error::Empty("no events to split".into()));
    }
    let mut patients: Vec<String> = Vec::new();
    {
        let mut seen = BTreeSet::new();
        for g in groups {
            if seen.insert(g.clone()) {
                patients.push(g.clone());
            }
        }
    }
    if k < 2 || k > patients.len() {
        return Err(Error::Config(format!(
            "k = {k} must be in [2, {}] (distinct patients)",
            patients.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Seeded Fisher-Yates, then round-robin assignment.
    for i in (1..patients.len()).rev() {
        let j = rng.random_range(0..=i);
        patients.swap(i, j);
    }
    let fold_of = |patient: &str| -> usize {
        patients.iter().position(|p| p == patient).expect("patient present") % k
    };
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let val: Vec<usize> =
            (0..groups.len()).filter(|&i| fold_of(&groups[i]) == f).collect();
        let train: Vec<usize> =
            (0..groups.len()).filter(|&i| fold_of(&groups[i]) != f).collect();
        if val.is_empty() || train.is_empty() {
            return Err(Error::Config(format!("fold {f} is empty with k = {k}")));
        }
        folds.push((train, val));
    }
    Ok(folds)
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: GbtParams,
    /// Mean over folds of the validation relative RMSE.
    pub mean_relative_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GbtParams,
    pub table: Vec<GridPoint>,
}

/// Evaluate every grid point with grouped k-fold CV and pick the lowest
/// mean validation relative RMSE; ties break toward fewer rounds, then
/// shallower trees, then lower learning rate.
pub fn grid_search(
    table: &EventTable,
    grid: &[GbtParams],
    k: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid is empty".into()));
    }
    table.validate()?;
    let groups = table.groups();
    let folds = group_kfold_split(&groups, k, seed)?;
    for (train, val) in &folds {
        assert_no_leakage(table, train, val);
    }

    let points: Vec<Result<GridPoint>> = grid
        .par_iter()
        .map(|params| {
            let mut total = 0.0;
            for (train, val) in &folds {
                let model = train_gbt(
                    &feature_rows(table, train),
                    &target_rows(table, train),
                    params,
                    &table.schema.schema_id,
                )?;
                let preds: Vec<f64> = val
                    .iter()
                    .map(|&i| model.predict(&table.rows[i].features))
                    .collect::<Result<_>>()?;
                total += relative_rmse(&preds, &target_rows(table, val))?;
            }
            Ok(GridPoint { params: *params, mean_relative_rmse: total / folds.len() as f64 })
        })
        .collect();
    let table_points: Vec<GridPoint> = points.into_iter().collect::<Result<_>>()?;

    let best = table_points
        .iter()
        .min_by(|a, b| {
            a.mean_relative_rmse
                .total_cmp(&b.mean_relative_rmse)
                .then(a.params.n_rounds.cmp(&b.params.n_rounds))
                .then(a.params.max_depth.cmp(&b.params.max_depth))
                .then(a.params.learning_rate.total_cmp(&b.params.learning_rate))
        })
        .expect("grid is non-empty")
        .params;
    Ok(GridSearchResult { best, table: table_points })
}

/// Train on one table, evaluate on another. The dummy baseline is the
/// training-set mean.
pub fn train_and_evaluate(
    train_table: &EventTable,
    test_table: &EventTable,
    params: &GbtParams,
) -> Result<(GbtModel, EvalReport)> {
    if train_table.schema.schema_id != test_table.schema.schema_id {
        return Err(Error::SchemaMismatch {
            expected: train_table.schema.schema_id.clone(),
            got: test_table.schema.schema_id.clone(),
        });
    }
    if test_table.rows.is_empty() {
        return Err(Error::Empty("test set has no events".into()));
    }
    let all: Vec<usize> = (0..train_table.rows.len()).collect();
    let model = train_gbt(
        &feature_rows(train_table, &all),
        &target_rows(train_table, &all),
        params,
        &train_table.schema.schema_id,
    )?;
    let dummy = DummyModel::train(&train_table.targets())?;
    let per_event: Vec<PerEventResult> = test_table
        .rows
        .iter()
        .map(|row| {
            let prediction = model.predict(&row.features)?;
            Ok(PerEventResult {
                patient_id: row.patient_id.clone(),
                visit: row.visit,
                target: row.target_auc,
                prediction,
                pe: 100.0 * (prediction - row.target_auc) / row.target_auc,
            })
        })
        .collect::<Result<_>>()?;
    let dummy_predictions = vec![dummy.predict(); test_table.rows.len()];
    let report = build_report(per_event, &dummy_predictions)?;
    Ok((model, report))
}

/// Outcome of a tuned prospective run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProspectiveOutcome {
    pub best_params: GbtParams,
    pub grid_table: Vec<GridPoint>,
    pub report: EvalReport,
}

/// Tune on the development events with grouped k-fold CV, train on all of
/// them, then evaluate once on the disjoint test events.
pub fn prospective_run(
    dev: &EventTable,
    test: &EventTable,
    grid: &[GbtParams],
    k: usize,
    seed: u64,
) -> Result<(GbtModel, ProspectiveOutcome)> {
    let dev_patients: BTreeSet<&str> =
        dev.rows.iter().map(|r| r.patient_id.as_str()).collect();
    let test_patients: BTreeSet<&str> =
        test.rows.iter().map(|r| r.patient_id.as_str()).collect();
    let shared: Vec<&&str> = dev_patients.intersection(&test_patients).collect();
    if !shared.is_empty() {
        return Err(Error::Leakage(format!(
            "patients in both development and test sets: {shared:?}"
        )));
    }
    if test.rows.is_empty() {
        return Err(Error::Empty("test set has no events".into()));
    }
    let search = grid_search(dev, grid, k, seed)?;
    let (model, report) = train_and_evaluate(dev, test, &search.best)?;
    Ok((model, ProspectiveOutcome { best_params: search.best, grid_table: search.table, report }))
}
