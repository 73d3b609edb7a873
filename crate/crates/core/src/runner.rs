//! Subcommand orchestration: every CLI verb maps to one function here so
//! tests can drive the full workflow without spawning the binary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, CohortConfig, PatientRecord};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    grid_search, lopo_cv, prospective_run, train_and_evaluate, EvalReport, GridPoint,
    PerEventResult,
};
use crate::features::{
    build_event_table, expand_flexible_events, prepare_event, EventTable, FeatureSchema,
    ModelVariant, PreparedEvent, ALL_VARIANTS, FLEXIBLE_LAST_TIMES,
};
use crate::gbt::{train_gbt, DummyModel, GbtModel, GbtParams};
use crate::io::{self, Provenance};
use crate::pk::{ConcentrationProfile, NominalGrid};
use crate::poppk::{map_fit, predict_auc_map, MapFit};
use crate::shap::{rank_features, shap_values, Attribution, FeatureRank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortKind {
    Dev,
    Test,
}

impl CohortKind {
    fn stream(&self) -> &'static str {
        match self {
            CohortKind::Dev => "cohort_dev",
            CohortKind::Test => "cohort_test",
        }
    }

    fn config<'a>(&self, config: &'a RunConfig) -> &'a CohortConfig {
        match self {
            CohortKind::Dev => &config.cohort_dev,
            CohortKind::Test => &config.cohort_test,
        }
    }
}

/// Generate a cohort and write the profile, patient and ground-truth CSVs.
pub fn simulate(
    config: &RunConfig,
    kind: CohortKind,
    profiles_path: &Path,
    patients_path: &Path,
    truth_path: &Path,
) -> Result<()> {
    config.validate()?;
    let provenance = Provenance::new(config.seed, config.hash());
    let cohort = generate_cohort(kind.config(config), config.named_seed(kind.stream()))?;
    let profiles: Vec<ConcentrationProfile> =
        cohort.profiles.iter().map(|sp| sp.profile.clone()).collect();
    io::write_profiles_csv(profiles_path, &profiles, &provenance)?;
    io::write_patients_csv(patients_path, &cohort.patients, &provenance)?;
    io::write_truth_csv(truth_path, &cohort.profiles, &provenance)?;
    Ok(())
}

/// Load raw profile and patient CSVs and prepare every profile
/// (trough substitution, reference AUC, imputation).
pub fn load_and_prepare(
    profiles_path: &Path,
    patients_path: &Path,
) -> Result<Vec<PreparedEvent>> {
    let profiles = io::read_profiles_csv(profiles_path)?;
    let patients = io::read_patients_csv(patients_path, &profiles)?;
    let by_id: BTreeMap<&str, &PatientRecord> =
        patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    profiles
        .iter()
        .map(|profile| {
            let patient = by_id.get(profile.patient_id.as_str()).ok_or_else(|| {
                Error::Config(format!("no patient record for {}", profile.patient_id))
            })?;
            prepare_event(profile, patient)
        })
        .collect()
}

/// Preprocess: write the imputed profiles and the reference AUC table.
pub fn preprocess(
    config: &RunConfig,
    profiles_path: &Path,
    patients_path: &Path,
    imputed_path: &Path,
    auc_path: &Path,
) -> Result<Vec<PreparedEvent>> {
    let provenance = Provenance::new(config.seed, config.hash());
    let prepared = load_and_prepare(profiles_path, patients_path)?;
    let imputed: Vec<ConcentrationProfile> =
        prepared.iter().map(|e| e.profile.clone()).collect();
    io::write_profiles_csv(imputed_path, &imputed, &provenance)?;
    let aucs: Vec<(String, u32, f64)> = prepared
        .iter()
        .map(|e| (e.profile.patient_id.clone(), e.profile.visit, e.reference_auc))
        .collect();
    io::write_reference_auc_csv(auc_path, &aucs, &provenance)?;
    Ok(prepared)
}

/// Build the feature matrix of the configured variant and write it with its
/// schema document.
pub fn build_features(
    config: &RunConfig,
    profiles_path: &Path,
    patients_path: &Path,
    features_path: &Path,
    schemas_path: &Path,
) -> Result<EventTable> {
    let variant = config.model.variant()?;
    let provenance = Provenance::new(config.seed, config.hash());
    let prepared = load_and_prepare(profiles_path, patients_path)?;
    let table = build_event_table(&prepared, variant, &config.priors)?;
    io::write_features_csv(features_path, &table, &provenance)?;
    let schemas: Vec<FeatureSchema> = ALL_VARIANTS.iter().map(|v| v.schema()).collect();
    io::write_schema_json(schemas_path, &schemas, &provenance)?;
    Ok(table)
}

fn load_table(config: &RunConfig, features_path: &Path, schemas_path: &Path) -> Result<EventTable> {
    let schema = io::read_schema_json(schemas_path, config.model.variant()?.id())?;
    io::read_features_csv(features_path, &schema)
}

/// Tuning artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub provenance: Provenance,
    pub schema_id: String,
    pub k: usize,
    pub grid_points: usize,
    pub best: GbtParams,
    pub table: Vec<GridPoint>,
}

/// Grouped k-fold grid search over the configured grid.
pub fn tune(
    config: &RunConfig,
    features_path: &Path,
    schemas_path: &Path,
    out_path: &Path,
) -> Result<TuneOutcome> {
    let table = load_table(config, features_path, schemas_path)?;
    let grid = config.grid.expand(config.named_seed("gbt"));
    let result = grid_search(&table, &grid, config.grid.k, config.named_seed("folds"))?;
    let outcome = TuneOutcome {
        provenance: Provenance::new(config.seed, config.hash()),
        schema_id: table.schema.schema_id.clone(),
        k: config.grid.k,
        grid_points: grid.len(),
        best: result.best,
        table: result.table,
    };
    io::write_json(out_path, &outcome)?;
    Ok(outcome)
}

/// Train on every event of the feature matrix and write the model file.
/// `params` overrides the configured defaults (e.g. from a tune artifact).
pub fn train(
    config: &RunConfig,
    features_path: &Path,
    schemas_path: &Path,
    params: Option<GbtParams>,
    model_path: &Path,
) -> Result<GbtModel> {
    let table = load_table(config, features_path, schemas_path)?;
    let params = params.unwrap_or(GbtParams {
        seed: config.named_seed("gbt"),
        ..config.gbt
    });
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r.features.clone()).collect();
    let model = train_gbt(&rows, &table.targets(), &params, &table.schema.schema_id)?;
    io::write_model_json(model_path, &model, &Provenance::new(config.seed, config.hash()))?;
    Ok(model)
}

/// Report artifact shared by `cv` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub provenance: Provenance,
    pub schema_id: String,
    pub n_events: usize,
    pub report: EvalReport,
}

/// Keep only each patient's first visit (the lowest visit number present).
pub fn filter_first_visits(table: &EventTable) -> EventTable {
    let mut first: BTreeMap<&str, u32> = BTreeMap::new();
    for row in &table.rows {
        first
            .entry(row.patient_id.as_str())
            .and_modify(|v| *v = (*v).min(row.visit))
            .or_insert(row.visit);
    }
    EventTable {
        schema: table.schema.clone(),
        rows: table
            .rows
            .iter()
            .filter(|r| first[r.patient_id.as_str()] == r.visit)
            .cloned()
            .collect(),
    }
}

/// Leave-one-patient-out CV on first-visit events with the configured
/// fixed hyperparameters.
pub fn cv(
    config: &RunConfig,
    features_path: &Path,
    schemas_path: &Path,
    out_path: &Path,
) -> Result<ReportArtifact> {
    let table = load_table(config, features_path, schemas_path)?;
    let first_visits = filter_first_visits(&table);
    let params = GbtParams { seed: config.named_seed("gbt"), ..config.gbt };
    let report = lopo_cv(&first_visits, &params)?;
    let artifact = ReportArtifact {
        provenance: Provenance::new(config.seed, config.hash()),
        schema_id: table.schema.schema_id.clone(),
        n_events: first_visits.rows.len(),
        report,
    };
    io::write_json(out_path, &artifact)?;
    Ok(artifact)
}

/// Evaluate a trained model on a feature matrix.
pub fn evaluate(
    config: &RunConfig,
    model_path: &Path,
    features_path: &Path,
    schemas_path: &Path,
    out_path: &Path,
) -> Result<ReportArtifact> {
    let (model, _) = io::read_model_json(model_path)?;
    let schema = io::read_schema_json(schemas_path, &model.schema_id)?;
    let table = io::read_features_csv(features_path, &schema)?;
    let per_event: Vec<PerEventResult> = table
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
    // The in-file targets stand in for the training mean: the dummy
    // baseline of a standalone evaluation is the evaluated set's own mean.
    let dummy = DummyModel::train(&table.targets())?;
    let dummy_predictions = vec![dummy.predict(); table.rows.len()];
    let report = crate::eval::build_report(per_event, &dummy_predictions)?;
    let artifact = ReportArtifact {
        provenance: Provenance::new(config.seed, config.hash()),
        schema_id: model.schema_id.clone(),
        n_events: table.rows.len(),
        report,
    };
    io::write_json(out_path, &artifact)?;
    Ok(artifact)
}

/// Predictions for rows of a feature matrix, optionally restricted to one
/// (patient, visit) pair.
pub fn predict_from_features(
    model: &GbtModel,
    table: &EventTable,
    selector: Option<(&str, Option<u32>)>,
) -> Result<Vec<(String, u32, f64)>> {
    if table.schema.schema_id != model.schema_id {
        return Err(Error::SchemaMismatch {
            expected: model.schema_id.clone(),
            got: table.schema.schema_id.clone(),
        });
    }
    let mut out = Vec::new();
    for row in &table.rows {
        if let Some((patient, visit)) = selector {
            if row.patient_id != patient || visit.is_some_and(|v| v != row.visit) {
                continue;
            }
        }
        out.push((row.patient_id.clone(), row.visit, model.predict(&row.features)?));
    }
    if out.is_empty() {
        return Err(Error::Empty("no matching events to predict".into()));
    }
    Ok(out)
}

/// Build one feature vector from a raw profile and predict its AUC.
///
/// Three-concentration variants need exactly the trough, the 1 h sample and
/// (for flexible schemas) one sample at a nominal last time; the full
/// schema needs an imputable profile.
pub fn predict_from_profile(
    model: &GbtModel,
    profile: &ConcentrationProfile,
    patient: &PatientRecord,
    config: &RunConfig,
) -> Result<f64> {
    let variant = ModelVariant::parse(&model.schema_id)?;
    let features = match variant {
        ModelVariant::Full16 | ModelVariant::Fixed3 { .. } => {
            let prepared = prepare_event(profile, patient)?;
            let table = build_event_table(
                std::slice::from_ref(&prepared),
                variant,
                &config.priors,
            )?;
            table.rows[0].features.clone()
        }
        ModelVariant::FlexibleRaw { .. } | ModelVariant::FlexibleEstimated { .. } => {
            let grid = NominalGrid;
            let trough = profile.trough().ok_or(Error::MissingTrough)?;
            let one_h = profile
                .point_at_slot(grid.slot_of(1.0).unwrap())
                .ok_or_else(|| Error::Config("no 1 h sample in profile".into()))?;
            let (last_nominal, last) = flexible_event_from_raw(profile)?;
            let event = crate::features::FlexibleEvent {
                patient_id: profile.patient_id.clone(),
                visit: profile.visit,
                dose_mg: profile.dose_mg,
                nominal_last_time: last_nominal,
                c0: trough.concentration,
                c1: one_h.concentration,
                c_last: last.1,
                t0_actual: trough.time,
                t1_actual: one_h.time,
                t_last_actual: last.0,
                target_auc: 0.0,
            };
            match variant {
                ModelVariant::FlexibleRaw { variant: raw } => {
                    crate::features::approach_one_features(&event, patient, raw)
                }
                ModelVariant::FlexibleEstimated { strategy } => {
                    crate::features::approach_two_features(
                        &event,
                        patient,
                        strategy,
                        &config.priors,
                    )?
                }
                _ => unreachable!(),
            }
        }
    };
    model.predict(&features)
}

/// Identify the single flexible last sample of a raw 3-sample profile.
fn flexible_event_from_raw(profile: &ConcentrationProfile) -> Result<(f64, (f64, f64))> {
    let grid = NominalGrid;
    let mut found: Option<(f64, (f64, f64))> = None;
    for p in &profile.points {
        let slot = grid.nearest_slot(p.time);
        let nominal = crate::pk::NOMINAL_TIMES[slot];
        if FLEXIBLE_LAST_TIMES.contains(&nominal) {
            if found.is_some() {
                return Err(Error::Config(
                    "raw flexible prediction needs exactly one sample in {2, 2.5, 3, 4, 5} h"
                        .into(),
                ));
            }
            found = Some((nominal, (p.time, p.concentration)));
        }
    }
    found.ok_or_else(|| {
        Error::Config("no sample at a nominal last time in {2, 2.5, 3, 4, 5} h".into())
    })
}

/// Attribution artifact of an `explain` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub provenance: Provenance,
    pub schema_id: String,
    pub n_explained: usize,
    pub n_background: usize,
    pub ranking: Vec<FeatureRank>,
}

/// Explain every row of a feature matrix against a background matrix and
/// write the per-event attributions and the feature ranking.
pub fn explain(
    config: &RunConfig,
    model: &GbtModel,
    explain_table: &EventTable,
    background_table: &EventTable,
    phi_path: &Path,
    ranking_path: &Path,
) -> Result<(Vec<Attribution>, ExplainOutcome)> {
    if background_table.schema.schema_id != model.schema_id
        || explain_table.schema.schema_id != model.schema_id
    {
        return Err(Error::SchemaMismatch {
            expected: model.schema_id.clone(),
            got: format!(
                "{} / {}",
                explain_table.schema.schema_id, background_table.schema.schema_id
            ),
        });
    }
    // A seeded subsample caps the background for speed; the full training
    // matrix is used when it is small enough.
    let mut background: Vec<&[f64]> =
        background_table.rows.iter().map(|r| r.features.as_slice()).collect();
    if background.len() > config.shap_background_max {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng =
            rand_chacha::ChaCha12Rng::seed_from_u64(config.named_seed("shap_background"));
        let mut idx: Vec<usize> = (0..background.len()).collect();
        for i in 0..config.shap_background_max {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(config.shap_background_max);
        idx.sort_unstable();
        background = idx.iter().map(|&i| background_table.rows[i].features.as_slice()).collect();
    }

    let names = &explain_table.schema.slots;
    let attributions: Vec<Attribution> = explain_table
        .rows
        .iter()
        .map(|row| shap_values(model, &row.features, &background, names))
        .collect::<Result<_>>()?;
    let ranking = rank_features(&attributions)?;

    let provenance = Provenance::new(config.seed, config.hash());
    let events: Vec<(String, u32)> = explain_table
        .rows
        .iter()
        .map(|r| (r.patient_id.clone(), r.visit))
        .collect();
    io::write_attributions_csv(phi_path, &events, &attributions, &provenance)?;
    io::write_ranking_csv(ranking_path, &ranking, &provenance)?;
    let outcome = ExplainOutcome {
        provenance,
        schema_id: model.schema_id.clone(),
        n_explained: attributions.len(),
        n_background: background.len(),
        ranking: ranking.clone(),
    };
    Ok((attributions, outcome))
}

/// One model variant's row in the consolidated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: String,
    pub dev_events: usize,
    pub lopo_events: usize,
    /// Leave-one-patient-out CV on first-visit development events with the
    /// fixed default hyperparameters.
    pub lopo: EvalReport,
    /// Hyperparameters chosen by grouped k-fold search on all development
    /// events.
    pub best_params: GbtParams,
    /// External test evaluation of the tuned model.
    pub prospective: EvalReport,
}

/// A MAP comparator row: the estimator receives raw samples, not features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopPkOutcome {
    pub inputs: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub provenance: Provenance,
    pub variants: Vec<VariantOutcome>,
    pub dummy_prospective_relative_rmse: f64,
    pub poppk: Vec<PopPkOutcome>,
}

/// Run every configured variant (LOPO + tuned prospective test), the dummy
/// baseline and the MAP comparator; write the consolidated JSON, the text
/// table and the comparator fit export.
pub fn consolidated_report(
    config: &RunConfig,
    dev_profiles: &Path,
    dev_patients: &Path,
    test_profiles: &Path,
    test_patients: &Path,
    report_path: &Path,
    fits_path: &Path,
    table_path: &Path,
) -> Result<ConsolidatedReport> {
    config.validate()?;
    let provenance = Provenance::new(config.seed, config.hash());
    let dev = load_and_prepare(dev_profiles, dev_patients)?;
    let test = load_and_prepare(test_profiles, test_patients)?;
    let grid = config.report_grid.expand(config.named_seed("gbt"));
    let lopo_params = GbtParams { seed: config.named_seed("gbt"), ..config.gbt };

    let mut variants = Vec::new();
    let mut dummy_prospective = f64::NAN;
    for name in &config.report_variants {
        let variant = ModelVariant::parse(name)?;
        let dev_table = build_event_table(&dev, variant, &config.priors)?;
        let test_table = build_event_table(&test, variant, &config.priors)?;
        let lopo_table = filter_first_visits(&dev_table);
        log::info!(
            "report variant {name}: {} dev events, {} first-visit, {} test",
            dev_table.rows.len(),
            lopo_table.rows.len(),
            test_table.rows.len()
        );
        let lopo = lopo_cv(&lopo_table, &lopo_params)?;
        let (_, outcome) = prospective_run(
            &dev_table,
            &test_table,
            &grid,
            config.report_grid.k,
            config.named_seed("folds"),
        )?;
        dummy_prospective = outcome.report.dummy_relative_rmse;
        variants.push(VariantOutcome {
            variant: name.clone(),
            dev_events: dev_table.rows.len(),
            lopo_events: lopo_table.rows.len(),
            lopo,
            best_params: outcome.best_params,
            prospective: outcome.report,
        });
    }

    let (poppk, fits) = poppk_comparator(config, &dev, &test)?;
    io::write_fits_csv(fits_path, &fits, &provenance)?;

    let report = ConsolidatedReport {
        provenance,
        variants,
        dummy_prospective_relative_rmse: dummy_prospective,
        poppk,
    };
    io::write_json(report_path, &report)?;
    std::fs::write(table_path, render_consolidated_table(&report))?;
    Ok(report)
}

/// Evaluate the MAP comparator on the test events for the three input
/// regimes the models see: three fixed samples, all sixteen, and the
/// flexible three-sample events.
fn poppk_comparator(
    config: &RunConfig,
    dev: &[PreparedEvent],
    test: &[PreparedEvent],
) -> Result<(Vec<PopPkOutcome>, Vec<(String, u32, MapFit, f64)>)> {
    let grid = NominalGrid;
    let dev_mean_auc =
        dev.iter().map(|e| e.reference_auc).sum::<f64>() / dev.len().max(1) as f64;

    let sample_at = |e: &PreparedEvent, t: f64| -> (f64, f64) {
        let p = e.profile.point_at_slot(grid.slot_of(t).unwrap()).expect("prepared profile");
        (p.time, p.concentration)
    };

    let mut outcomes = Vec::new();
    let mut fixed3_fits = Vec::new();

    // Fixed 0/1/3 h samples.
    let mut per_event = Vec::new();
    for e in test {
        let obs = [sample_at(e, 0.0), sample_at(e, 1.0), sample_at(e, 3.0)];
        let fit = map_fit(&config.priors, &obs, e.profile.dose_mg, &e.patient)?;
        let auc = predict_auc_map(&fit.params, e.profile.dose_mg)?;
        fixed3_fits.push((e.profile.patient_id.clone(), e.profile.visit, fit, auc));
        per_event.push(PerEventResult {
            patient_id: e.profile.patient_id.clone(),
            visit: e.profile.visit,
            target: e.reference_auc,
            prediction: auc,
            pe: 100.0 * (auc - e.reference_auc) / e.reference_auc,
        });
    }
    let dummy = vec![dev_mean_auc; per_event.len()];
    outcomes.push(PopPkOutcome {
        inputs: "fixed3".into(),
        report: crate::eval::build_report(per_event, &dummy)?,
    });

    // All sixteen samples.
    let mut per_event = Vec::new();
    for e in test {
        let obs: Vec<(f64, f64)> =
            e.profile.points.iter().map(|p| (p.time, p.concentration)).collect();
        let fit = map_fit(&config.priors, &obs, e.profile.dose_mg, &e.patient)?;
        let auc = predict_auc_map(&fit.params, e.profile.dose_mg)?;
        per_event.push(PerEventResult {
            patient_id: e.profile.patient_id.clone(),
            visit: e.profile.visit,
            target: e.reference_auc,
            prediction: auc,
            pe: 100.0 * (auc - e.reference_auc) / e.reference_auc,
        });
    }
    let dummy = vec![dev_mean_auc; per_event.len()];
    outcomes.push(PopPkOutcome {
        inputs: "full16".into(),
        report: crate::eval::build_report(per_event, &dummy)?,
    });

    // Flexible events: the comparator receives the deviating time directly.
    let mut per_event = Vec::new();
    for e in test {
        for fe in expand_flexible_events(e)? {
            let obs = [
                (fe.t0_actual, fe.c0),
                (fe.t1_actual, fe.c1),
                (fe.t_last_actual, fe.c_last),
            ];
            let fit = map_fit(&config.priors, &obs, fe.dose_mg, &e.patient)?;
            let auc = predict_auc_map(&fit.params, fe.dose_mg)?;
            per_event.push(PerEventResult {
                patient_id: fe.patient_id.clone(),
                visit: fe.visit,
                target: fe.target_auc,
                prediction: auc,
                pe: 100.0 * (auc - fe.target_auc) / fe.target_auc,
            });
        }
    }
    let dummy = vec![dev_mean_auc; per_event.len()];
    outcomes.push(PopPkOutcome {
        inputs: "flexible".into(),
        report: crate::eval::build_report(per_event, &dummy)?,
    });

    Ok((outcomes, fixed3_fits))
}

/// Human-readable summary table.
pub fn render_consolidated_table(report: &ConsolidatedReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>10} {:>10} {:>9} {:>9} {:>9}\n",
        "model", "lopo_rmse", "test_rmse", "|PE|>10%", "|PE|>15%", "clinical"
    ));
    for v in &report.variants {
        out.push_str(&format!(
            "{:<28} {:>10.4} {:>10.4} {:>9.2} {:>9.2} {:>9}\n",
            v.variant,
            v.lopo.relative_rmse,
            v.prospective.relative_rmse,
            v.prospective.pct_abs_pe_gt_10,
            v.prospective.pct_abs_pe_gt_15,
            if v.prospective.clinically_applicable { "yes" } else { "no" }
        ));
    }
    out.push_str(&format!(
        "{:<28} {:>10} {:>10.4} {:>9} {:>9} {:>9}\n",
        "dummy", "-", report.dummy_prospective_relative_rmse, "-", "-", "-"
    ));
    for p in &report.poppk {
        out.push_str(&format!(
            "{:<28} {:>10} {:>10.4} {:>9.2} {:>9.2} {:>9}\n",
            format!("poppk_{}", p.inputs),
            "-",
            p.report.relative_rmse,
            p.report.pct_abs_pe_gt_10,
            p.report.pct_abs_pe_gt_15,
            if p.report.clinically_applicable { "yes" } else { "no" }
        ));
    }
    out
}

/// Convenience wrapper used by `evaluate`-style flows: train on one table
/// with fixed params and evaluate on another.
pub fn train_eval_tables(
    train_table: &EventTable,
    test_table: &EventTable,
    params: &GbtParams,
) -> Result<(GbtModel, EvalReport)> {
    train_and_evaluate(train_table, test_table, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.cohort_dev.n_patients = 10;
        config.cohort_dev.second_visit_patients = 3;
        config.cohort_test.n_patients = 3;
        config.gbt.n_rounds = 40;
        config.report_grid = crate::config::GridConfig {
            k: 3,
            learning_rates: vec![0.1],
            max_depths: vec![2],
            n_rounds: vec![40],
            min_child_weights: vec![1.0],
            lambdas: vec![1.0],
            subsamples: vec![1.0],
        };
        config.report_variants = vec!["fixed3".into(), "flex_delta".into()];
        config
    }

    #[test]
    fn simulate_writes_deterministic_artifacts() {
        let dir = tempdir().unwrap();
        let config = small_config();
        let p1 = dir.path().join("a/profiles.csv");
        let q1 = dir.path().join("a/patients.csv");
        let t1 = dir.path().join("a/truth.csv");
        simulate(&config, CohortKind::Dev, &p1, &q1, &t1).unwrap();
        let p2 = dir.path().join("b/profiles.csv");
        let q2 = dir.path().join("b/patients.csv");
        let t2 = dir.path().join("b/truth.csv");
        simulate(&config, CohortKind::Dev, &p2, &q2, &t2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(std::fs::read(&q1).unwrap(), std::fs::read(&q2).unwrap());
        assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());
    }

    #[test]
    fn full_pipeline_runs_end_to_end() {
        let dir = tempdir().unwrap();
        let mut config = small_config();
        config.model = crate::config::ModelConfig {
            mode: crate::config::Mode::Fixed3,
            approach: None,
            demographics: false,
        };
        let profiles = dir.path().join("profiles.csv");
        let patients = dir.path().join("patients.csv");
        let truth = dir.path().join("truth.csv");
        simulate(&config, CohortKind::Dev, &profiles, &patients, &truth).unwrap();

        let imputed = dir.path().join("imputed.csv");
        let aucs = dir.path().join("auc.csv");
        let prepared = preprocess(&config, &profiles, &patients, &imputed, &aucs).unwrap();
        assert_eq!(prepared.len(), 13); // 10 patients + 3 second visits
        assert!(prepared.iter().all(|e| e.profile.is_complete()));

        let features = dir.path().join("features.csv");
        let schemas = dir.path().join("schemas.json");
        let table =
            build_features(&config, &profiles, &patients, &features, &schemas).unwrap();
        assert_eq!(table.rows.len(), 13);

        let model_path = dir.path().join("model.json");
        let model = train(&config, &features, &schemas, None, &model_path).unwrap();
        let report_path = dir.path().join("cv.json");
        let artifact = cv(&config, &features, &schemas, &report_path).unwrap();
        assert_eq!(artifact.n_events, 10); // first visits only
        assert!(artifact.report.relative_rmse.is_finite());

        // Predict on a training event matches the model's direct output.
        let loaded = io::read_model_json(&model_path).unwrap().0;
        assert_eq!(loaded, model);
        let preds = predict_from_features(&model, &table, Some(("D001", Some(1)))).unwrap();
        assert_eq!(preds.len(), 1);
        let direct = model.predict(&table.rows[0].features).unwrap();
        assert_eq!(preds[0].2, direct);
    }

    #[test]
    fn consolidated_report_covers_variants_dummy_and_poppk() {
        let dir = tempdir().unwrap();
        let config = small_config();
        let dp = dir.path().join("dev_profiles.csv");
        let dq = dir.path().join("dev_patients.csv");
        let dt = dir.path().join("dev_truth.csv");
        simulate(&config, CohortKind::Dev, &dp, &dq, &dt).unwrap();
        let tp = dir.path().join("test_profiles.csv");
        let tq = dir.path().join("test_patients.csv");
        let tt = dir.path().join("test_truth.csv");
        simulate(&config, CohortKind::Test, &tp, &tq, &tt).unwrap();

        let report_path = dir.path().join("report.json");
        let fits_path = dir.path().join("fits.csv");
        let table_path = dir.path().join("report.txt");
        let report = consolidated_report(
            &config, &dp, &dq, &tp, &tq, &report_path, &fits_path, &table_path,
        )
        .unwrap();
        assert_eq!(report.variants.len(), 2);
        assert_eq!(report.poppk.len(), 3);
        assert!(report.dummy_prospective_relative_rmse.is_finite());
        let text = std::fs::read_to_string(&table_path).unwrap();
        assert!(text.contains("fixed3"));
        assert!(text.contains("poppk_full16"));
        // Flexible expansion: 3 test patients × 2 visits × 5 events.
        assert_eq!(report.poppk[2].report.per_event.len(), 30);
    }
}
