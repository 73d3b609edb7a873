//! File formats: profile/patient/truth CSVs, feature matrices, model JSON
//! and attribution exports.
//!
//! Every artifact embeds provenance (format version, master seed, config
//! hash). CSV files carry it as a leading `# provenance: {...}` comment
//! line; readers skip comments.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::cohort::{Assay, PatientRecord, Sex, SimulatedProfile};
use crate::error::{Error, Result};
use crate::features::{EventRow, EventTable, FeatureSchema};
use crate::gbt::{GbtModel, GbtParams, Tree, MODEL_FORMAT_VERSION};
use crate::pk::{ConcentrationPoint, ConcentrationProfile};
use crate::poppk::MapFit;
use crate::shap::{Attribution, FeatureRank};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Provenance stamp shared by all artifacts of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self { format_version: ARTIFACT_FORMAT_VERSION, seed, config_hash: config_hash.into() }
    }

    fn comment_line(&self) -> Result<String> {
        Ok(format!("# provenance: {}", serde_json::to_string(self)?))
    }
}

fn open_csv_writer(path: &Path, provenance: &Provenance) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", provenance.comment_line()?)?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn open_csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(fs::File::open(path)?))
}

/// Read the provenance comment of a CSV artifact, if present.
pub fn read_csv_provenance(path: &Path) -> Result<Option<Provenance>> {
    let content = fs::read_to_string(path)?;
    let Some(first) = content.lines().next() else { return Ok(None) };
    let Some(json) = first.strip_prefix("# provenance: ") else {
        return Ok(None);
    };
    Ok(Some(serde_json::from_str(json)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    patient_id: String,
    visit: u32,
    dose_mg: f64,
    time_h: f64,
    #[serde(rename = "conc_ugL")]
    conc_ug_l: f64,
    measured: bool,
}

/// Write profiles as one row per concentration point.
pub fn write_profiles_csv(
    path: &Path,
    profiles: &[ConcentrationProfile],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    for p in profiles {
        for pt in &p.points {
            w.serialize(ProfileRow {
                patient_id: p.patient_id.clone(),
                visit: p.visit,
                dose_mg: p.dose_mg,
                time_h: pt.time,
                conc_ug_l: pt.concentration,
                measured: pt.measured,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read profiles back, grouping rows by (patient_id, visit) in file order.
pub fn read_profiles_csv(path: &Path) -> Result<Vec<ConcentrationProfile>> {
    let mut reader = open_csv_reader(path)?;
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut map: std::collections::BTreeMap<(String, u32), (f64, Vec<ConcentrationPoint>)> =
        Default::default();
    for row in reader.deserialize() {
        let row: ProfileRow = row?;
        let key = (row.patient_id.clone(), row.visit);
        let entry = map.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (row.dose_mg, Vec::new())
        });
        if (entry.0 - row.dose_mg).abs() > 1e-9 {
            return Err(Error::InvalidProfile(format!(
                "inconsistent dose for {}/{}",
                row.patient_id, row.visit
            )));
        }
        entry.1.push(ConcentrationPoint {
            time: row.time_h,
            concentration: row.conc_ug_l,
            measured: row.measured,
        });
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let (dose, mut points) = map.remove(&key).expect("key present");
        points.sort_by(|a, b| a.time.total_cmp(&b.time));
        out.push(ConcentrationProfile::new(key.0, key.1, dose, points)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct PatientRow {
    patient_id: String,
    sex: String,
    weight_kg: f64,
    height_cm: f64,
    hct: f64,
    txt_days: f64,
    assay: String,
    sigma_add: f64,
    sigma_prop: f64,
}

pub fn write_patients_csv(
    path: &Path,
    patients: &[PatientRecord],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    for p in patients {
        w.serialize(PatientRow {
            patient_id: p.patient_id.clone(),
            sex: p.sex.as_str().to_string(),
            weight_kg: p.weight_kg,
            height_cm: p.height_cm,
            hct: p.hematocrit,
            txt_days: p.txt_days,
            assay: p.assay.as_str().to_string(),
            sigma_add: p.sigma_add,
            sigma_prop: p.sigma_prop,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Read patients; the morning dose is not part of the patient schema, so it
/// is back-filled from each patient's first profile.
pub fn read_patients_csv(
    path: &Path,
    profiles: &[ConcentrationProfile],
) -> Result<Vec<PatientRecord>> {
    let mut reader = open_csv_reader(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: PatientRow = row?;
        let dose = profiles
            .iter()
            .find(|p| p.patient_id == row.patient_id)
            .map(|p| p.dose_mg)
            .ok_or_else(|| {
                Error::Config(format!("patient {} has no profile rows", row.patient_id))
            })?;
        let record = PatientRecord {
            patient_id: row.patient_id,
            sex: Sex::parse(&row.sex)?,
            weight_kg: row.weight_kg,
            height_cm: row.height_cm,
            hematocrit: row.hct,
            txt_days: row.txt_days,
            assay: Assay::parse(&row.assay)?,
            sigma_add: row.sigma_add,
            sigma_prop: row.sigma_prop,
            dose_mg: dose,
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    patient_id: String,
    visit: u32,
    true_auc: f64,
}

pub fn write_truth_csv(
    path: &Path,
    profiles: &[SimulatedProfile],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    for sp in profiles {
        w.serialize(TruthRow {
            patient_id: sp.profile.patient_id.clone(),
            visit: sp.profile.visit,
            true_auc: sp.true_auc,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<(String, u32, f64)>> {
    let mut reader = open_csv_reader(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: TruthRow = row?;
        out.push((row.patient_id, row.visit, row.true_auc));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct AucRow {
    patient_id: String,
    visit: u32,
    auc_ref: f64,
}

pub fn write_reference_auc_csv(
    path: &Path,
    rows: &[(String, u32, f64)],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    for (patient_id, visit, auc_ref) in rows {
        w.serialize(AucRow {
            patient_id: patient_id.clone(),
            visit: *visit,
            auc_ref: *auc_ref,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Feature matrix: `patient_id,visit,<slot names...>,target_auc`.
pub fn write_features_csv(
    path: &Path,
    table: &EventTable,
    provenance: &Provenance,
) -> Result<()> {
    table.validate()?;
    let mut w = open_csv_writer(path, provenance)?;
    let mut header = vec!["patient_id".to_string(), "visit".to_string()];
    header.extend(table.schema.slots.iter().cloned());
    header.push("target_auc".to_string());
    w.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![row.patient_id.clone(), row.visit.to_string()];
        record.extend(row.features.iter().map(|v| format_float(*v)));
        record.push(format_float(row.target_auc));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float serializes")
}

pub fn read_features_csv(path: &Path, schema: &FeatureSchema) -> Result<EventTable> {
    let mut reader = open_csv_reader(path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("patient_id")
        .chain(std::iter::once("visit"))
        .chain(schema.slots.iter().map(|s| s.as_str()))
        .chain(std::iter::once("target_auc"))
        .collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::SchemaMismatch {
            expected: expected.join(","),
            got: got.join(","),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Config(format!("short record at column {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad float in column {i}: {e}")))
        };
        let patient_id = record.get(0).unwrap_or_default().to_string();
        let visit: u32 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Config(format!("bad visit: {e}")))?;
        let mut features = Vec::with_capacity(schema.len());
        for i in 0..schema.len() {
            features.push(parse(2 + i)?);
        }
        let target_auc = parse(2 + schema.len())?;
        rows.push(EventRow { patient_id, visit, features, target_auc });
    }
    let table = EventTable { schema: schema.clone(), rows };
    table.validate()?;
    Ok(table)
}

/// Schema definitions document, keyed by schema id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub schemas: std::collections::BTreeMap<String, Vec<String>>,
}

pub fn write_schema_json(
    path: &Path,
    schemas: &[FeatureSchema],
    provenance: &Provenance,
) -> Result<()> {
    let file = SchemaFile {
        format_version: provenance.format_version,
        seed: provenance.seed,
        config_hash: provenance.config_hash.clone(),
        schemas: schemas
            .iter()
            .map(|s| (s.schema_id.clone(), s.slots.clone()))
            .collect(),
    };
    write_json(path, &file)
}

pub fn read_schema_json(path: &Path, schema_id: &str) -> Result<FeatureSchema> {
    let file: SchemaFile = read_json(path)?;
    let slots = file.schemas.get(schema_id).ok_or_else(|| Error::SchemaMismatch {
        expected: schema_id.to_string(),
        got: format!("schemas {:?}", file.schemas.keys().collect::<Vec<_>>()),
    })?;
    Ok(FeatureSchema { schema_id: schema_id.to_string(), slots: slots.clone() })
}

/// Model artifact: provenance plus the canonical ensemble fields.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    seed: u64,
    config_hash: String,
    schema_id: String,
    n_features: usize,
    base_score: f64,
    params: GbtParams,
    trees: Vec<Tree>,
}

pub fn write_model_json(path: &Path, model: &GbtModel, provenance: &Provenance) -> Result<()> {
    let file = ModelFile {
        format_version: model.format_version,
        seed: provenance.seed,
        config_hash: provenance.config_hash.clone(),
        schema_id: model.schema_id.clone(),
        n_features: model.n_features,
        base_score: model.base_score,
        params: model.params,
        trees: model.trees.clone(),
    };
    write_json(path, &file)
}

pub fn read_model_json(path: &Path) -> Result<(GbtModel, Provenance)> {
    let file: ModelFile = read_json(path)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported model format_version {}",
            file.format_version
        )));
    }
    let model = GbtModel {
        format_version: file.format_version,
        schema_id: file.schema_id,
        n_features: file.n_features,
        base_score: file.base_score,
        params: file.params,
        trees: file.trees,
    };
    let provenance = Provenance {
        format_version: file.format_version,
        seed: file.seed,
        config_hash: file.config_hash,
    };
    Ok((model, provenance))
}

/// Attribution export: `patient_id,visit,base_value,<one column per slot>`.
pub fn write_attributions_csv(
    path: &Path,
    events: &[(String, u32)],
    attributions: &[Attribution],
    provenance: &Provenance,
) -> Result<()> {
    if events.len() != attributions.len() {
        return Err(Error::Config(format!(
            "{} events vs {} attributions",
            events.len(),
            attributions.len()
        )));
    }
    let mut w = open_csv_writer(path, provenance)?;
    if let Some(first) = attributions.first() {
        let mut header = vec!["patient_id".to_string(), "visit".to_string(), "base_value".into()];
        header.extend(first.feature_names.iter().map(|n| format!("phi_{n}")));
        w.write_record(&header)?;
        for ((patient_id, visit), attr) in events.iter().zip(attributions) {
            let mut record = vec![patient_id.clone(), visit.to_string(), format_float(attr.base_value)];
            record.extend(attr.phi.iter().map(|v| format_float(*v)));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranking_csv(
    path: &Path,
    ranking: &[FeatureRank],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    w.write_record(["feature", "mean_abs_phi", "rank"])?;
    for r in ranking {
        w.write_record([r.feature.clone(), format_float(r.mean_abs_phi), r.rank.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// MAP fit export: `patient_id,visit,cl,v,ka,auc_map,converged`.
pub fn write_fits_csv(
    path: &Path,
    fits: &[(String, u32, MapFit, f64)],
    provenance: &Provenance,
) -> Result<()> {
    let mut w = open_csv_writer(path, provenance)?;
    w.write_record(["patient_id", "visit", "cl", "v", "ka", "auc_map", "converged"])?;
    for (patient_id, visit, fit, auc) in fits {
        w.write_record([
            patient_id.clone(),
            visit.to_string(),
            format_float(fit.params.cl),
            format_float(fit.params.v),
            format_float(fit.params.ka),
            format_float(*auc),
            fit.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialize any artifact to compact canonical JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
