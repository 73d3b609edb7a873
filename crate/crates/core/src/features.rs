//! Feature construction: the 43-slot full schema, fixed three-concentration
//! schemas, and the flexible last-sample-time variants with their four
//! concentration-estimation strategies.

use serde::{Deserialize, Serialize};

use crate::cohort::PatientRecord;
use crate::error::{Error, Result};
use crate::pk::{
    impute_missing_concentrations, substitute_trough_for_12h, ConcentrationProfile, NominalGrid,
    NOMINAL_TIMES,
};
use crate::poppk::{map_fit, predict_conc_map, PopulationPriors};

/// The five admissible nominal times of the flexible last sample, hours.
pub const FLEXIBLE_LAST_TIMES: [f64; 5] = [2.0, 2.5, 3.0, 4.0, 5.0];

/// Ordered slot names frozen under a schema id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub slots: Vec<String>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// One event: its features, provenance and regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub patient_id: String,
    pub visit: u32,
    pub features: Vec<f64>,
    /// Reference AUC, µg·h/L.
    pub target_auc: f64,
}

/// A feature matrix bound to its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    pub schema: FeatureSchema,
    pub rows: Vec<EventRow>,
}

impl EventTable {
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.features.len() != self.schema.len() {
                return Err(Error::SchemaMismatch {
                    expected: format!("{} slots ({})", self.schema.len(), self.schema.schema_id),
                    got: format!("{} values", row.features.len()),
                });
            }
            if row.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "non-finite feature for {}/{}",
                    row.patient_id, row.visit
                )));
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_auc).collect()
    }

    pub fn groups(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.patient_id.clone()).collect()
    }
}

/// Which model's inputs to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawTimeVariant {
    /// Concentrations plus the offset of the last sample from 3 h.
    DeltaOnly,
    /// Concentrations plus exact times (minutes after dose) for all three.
    ExactTimes,
    /// Union of the two plus seven demographic covariates.
    CombinedPlusDemographics,
    /// Union of the two without further features.
    CombinedMinimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C3Strategy {
    Linear,
    ReverseLinear,
    LogLinear,
    PopPk,
}

/// The configured model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelVariant {
    /// All 16 concentrations, their time deltas, dose and covariates.
    Full16,
    /// Trough, 1 h and 3 h concentrations at their nominal times.
    Fixed3 { demographics: bool },
    /// Flexible last sample, raw time features (approach one).
    FlexibleRaw { variant: RawTimeVariant },
    /// Flexible last sample, 3 h concentration estimated (approach two).
    FlexibleEstimated { strategy: C3Strategy },
}

impl ModelVariant {
    pub fn id(&self) -> &'static str {
        match self {
            ModelVariant::Full16 => "full16",
            ModelVariant::Fixed3 { demographics: false } => "fixed3",
            ModelVariant::Fixed3 { demographics: true } => "fixed3_demog",
            ModelVariant::FlexibleRaw { variant: RawTimeVariant::DeltaOnly } => "flex_delta",
            ModelVariant::FlexibleRaw { variant: RawTimeVariant::ExactTimes } => {
                "flex_exact_times"
            }
            ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedMinimal } => {
                "flex_combined"
            }
            ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedPlusDemographics } => {
                "flex_combined_demog"
            }
            ModelVariant::FlexibleEstimated { strategy: C3Strategy::Linear } => "flex_est_linear",
            ModelVariant::FlexibleEstimated { strategy: C3Strategy::ReverseLinear } => {
                "flex_est_reverse_linear"
            }
            ModelVariant::FlexibleEstimated { strategy: C3Strategy::LogLinear } => {
                "flex_est_loglinear"
            }
            ModelVariant::FlexibleEstimated { strategy: C3Strategy::PopPk } => "flex_est_poppk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .find(|v| v.id() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }

    pub fn is_flexible(&self) -> bool {
        matches!(
            self,
            ModelVariant::FlexibleRaw { .. } | ModelVariant::FlexibleEstimated { .. }
        )
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut slots: Vec<String> = Vec::new();
        match self {
            ModelVariant::Full16 => {
                for &t in &NOMINAL_TIMES {
                    slots.push(format!("conc_{}", time_label(t)));
                }
                for &t in &NOMINAL_TIMES {
                    slots.push(format!("dt_{}", time_label(t)));
                }
                slots.extend(
                    [
                        "dose_mg",
                        "weight_kg",
                        "height_cm",
                        "bmi",
                        "bsa",
                        "sex",
                        "hematocrit",
                        "txt_days",
                        "assay",
                        "sigma_add",
                        "sigma_prop",
                    ]
                    .map(String::from),
                );
            }
            ModelVariant::Fixed3 { demographics } => {
                slots.extend(["conc_0", "conc_1", "conc_3"].map(String::from));
                if *demographics {
                    slots.extend(DEMOGRAPHIC_SLOTS.map(String::from));
                }
            }
            ModelVariant::FlexibleRaw { variant } => {
                slots.extend(["conc_0", "conc_1", "conc_last"].map(String::from));
                match variant {
                    RawTimeVariant::DeltaOnly => slots.push("delta_3h".into()),
                    RawTimeVariant::ExactTimes => {
                        slots.extend(["t_0_min", "t_1_min", "t_last_min"].map(String::from));
                    }
                    RawTimeVariant::CombinedMinimal => {
                        slots.push("delta_3h".into());
                        slots.extend(["t_0_min", "t_1_min", "t_last_min"].map(String::from));
                    }
                    RawTimeVariant::CombinedPlusDemographics => {
                        slots.push("delta_3h".into());
                        slots.extend(["t_0_min", "t_1_min", "t_last_min"].map(String::from));
                        slots.extend(DEMOGRAPHIC_SLOTS.map(String::from));
                    }
                }
            }
            ModelVariant::FlexibleEstimated { .. } => {
                slots.extend(
                    ["conc_0", "conc_1", "conc_3", "estimated_flag"].map(String::from),
                );
            }
        }
        FeatureSchema { schema_id: self.id().to_string(), slots }
    }
}

/// Every configured variant, in report order.
pub const ALL_VARIANTS: [ModelVariant; 11] = [
    ModelVariant::Full16,
    ModelVariant::Fixed3 { demographics: false },
    ModelVariant::Fixed3 { demographics: true },
    ModelVariant::FlexibleRaw { variant: RawTimeVariant::DeltaOnly },
    ModelVariant::FlexibleRaw { variant: RawTimeVariant::ExactTimes },
    ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedMinimal },
    ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedPlusDemographics },
    ModelVariant::FlexibleEstimated { strategy: C3Strategy::Linear },
    ModelVariant::FlexibleEstimated { strategy: C3Strategy::ReverseLinear },
    ModelVariant::FlexibleEstimated { strategy: C3Strategy::LogLinear },
    ModelVariant::FlexibleEstimated { strategy: C3Strategy::PopPk },
];

const DEMOGRAPHIC_SLOTS: [&str; 7] =
    ["weight_kg", "height_cm", "sex", "bmi", "bsa", "hematocrit", "assay"];

fn time_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

fn demographic_values(patient: &PatientRecord) -> [f64; 7] {
    [
        patient.weight_kg,
        patient.height_cm,
        patient.sex.code(),
        patient.bmi(),
        patient.bsa(),
        patient.hematocrit,
        patient.assay.code(),
    ]
}

/// One profile made model-ready: trough substituted, reference AUC frozen,
/// every nominal slot filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedEvent {
    pub profile: ConcentrationProfile,
    pub patient: PatientRecord,
    /// Log-linear trapezoidal AUC of the available (pre-imputation) points.
    pub reference_auc: f64,
}

/// Preprocess one raw profile: copy the trough to 12 h if needed, compute
/// the reference AUC from the available points, then impute the rest.
pub fn prepare_event(
    profile: &ConcentrationProfile,
    patient: &PatientRecord,
) -> Result<PreparedEvent> {
    if profile.patient_id != patient.patient_id {
        return Err(Error::Config(format!(
            "profile {} paired with patient {}",
            profile.patient_id, patient.patient_id
        )));
    }
    let substituted = substitute_trough_for_12h(profile)?;
    let reference_auc = substituted.auc()?;
    let complete = impute_missing_concentrations(&substituted, NominalGrid)?;
    Ok(PreparedEvent { profile: complete, patient: patient.clone(), reference_auc })
}

fn slot_point(profile: &ConcentrationProfile, slot: usize) -> Result<(f64, f64)> {
    profile
        .point_at_slot(slot)
        .map(|p| (p.time, p.concentration))
        .ok_or_else(|| Error::SchemaMismatch {
            expected: format!("profile with nominal slot {} h filled", NOMINAL_TIMES[slot]),
            got: "missing slot".into(),
        })
}

/// All 43 features of the full schema. The profile must be fully imputed.
pub fn build_full_event(event: &PreparedEvent) -> Result<Vec<f64>> {
    if !event.profile.is_complete() {
        return Err(Error::SchemaMismatch {
            expected: "fully imputed 16-slot profile".into(),
            got: format!("{} points", event.profile.points.len()),
        });
    }
    let mut values = Vec::with_capacity(43);
    for slot in 0..NOMINAL_TIMES.len() {
        let (_, c) = slot_point(&event.profile, slot)?;
        values.push(c);
    }
    for slot in 0..NOMINAL_TIMES.len() {
        let (t, _) = slot_point(&event.profile, slot)?;
        values.push((t - NOMINAL_TIMES[slot]) * 60.0); // minutes off nominal
    }
    values.push(event.profile.dose_mg);
    values.push(event.patient.weight_kg);
    values.push(event.patient.height_cm);
    values.push(event.patient.bmi());
    values.push(event.patient.bsa());
    values.push(event.patient.sex.code());
    values.push(event.patient.hematocrit);
    values.push(event.patient.txt_days);
    values.push(event.patient.assay.code());
    values.push(event.patient.sigma_add);
    values.push(event.patient.sigma_prop);
    Ok(values)
}

/// One flexible-time event: the base samples plus the roaming last sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibleEvent {
    pub patient_id: String,
    pub visit: u32,
    pub dose_mg: f64,
    /// Nominal time of the last sample, one of [`FLEXIBLE_LAST_TIMES`].
    pub nominal_last_time: f64,
    pub c0: f64,
    pub c1: f64,
    pub c_last: f64,
    /// Actual sampling times, hours.
    pub t0_actual: f64,
    pub t1_actual: f64,
    pub t_last_actual: f64,
    pub target_auc: f64,
}

impl FlexibleEvent {
    /// Offset of the nominal last time from 3 h, hours.
    pub fn delta_from_3h(&self) -> f64 {
        self.nominal_last_time - 3.0
    }

    /// 1 when the 3 h concentration must be estimated.
    pub fn estimated_flag(&self) -> f64 {
        if self.nominal_last_time == 3.0 {
            0.0
        } else {
            1.0
        }
    }
}

/// Expand one prepared profile into the five flexible-last-time events.
pub fn expand_flexible_events(event: &PreparedEvent) -> Result<Vec<FlexibleEvent>> {
    let grid = NominalGrid;
    let (t0, c0) = slot_point(&event.profile, 0)?;
    let slot_1h = grid.slot_of(1.0).expect("1 h is on the nominal grid");
    let (t1, c1) = slot_point(&event.profile, slot_1h)?;
    let mut events = Vec::with_capacity(FLEXIBLE_LAST_TIMES.len());
    for &t_nom in &FLEXIBLE_LAST_TIMES {
        let slot = grid.slot_of(t_nom).expect("flexible times are on the nominal grid");
        let (t_last, c_last) = slot_point(&event.profile, slot)?;
        events.push(FlexibleEvent {
            patient_id: event.profile.patient_id.clone(),
            visit: event.profile.visit,
            dose_mg: event.profile.dose_mg,
            nominal_last_time: t_nom,
            c0,
            c1,
            c_last,
            t0_actual: t0,
            t1_actual: t1,
            t_last_actual: t_last,
            target_auc: event.reference_auc,
        });
    }
    Ok(events)
}

/// Approach-one features for one flexible event.
pub fn approach_one_features(
    event: &FlexibleEvent,
    patient: &PatientRecord,
    variant: RawTimeVariant,
) -> Vec<f64> {
    let mut values = vec![event.c0, event.c1, event.c_last];
    let times_min =
        [event.t0_actual * 60.0, event.t1_actual * 60.0, event.t_last_actual * 60.0];
    match variant {
        RawTimeVariant::DeltaOnly => values.push(event.delta_from_3h()),
        RawTimeVariant::ExactTimes => values.extend(times_min),
        RawTimeVariant::CombinedMinimal => {
            values.push(event.delta_from_3h());
            values.extend(times_min);
        }
        RawTimeVariant::CombinedPlusDemographics => {
            values.push(event.delta_from_3h());
            values.extend(times_min);
            values.extend(demographic_values(patient));
        }
    }
    values
}

/// Line through (1 h, c1) and (t_last, c_last) evaluated at 3 h, clamped ≥ 0.
pub fn estimate_c3_linear(c1: f64, c_last: f64, t_last: f64) -> Result<f64> {
    if (t_last - 1.0).abs() < 1e-9 {
        return Err(Error::ImputationDegenerate(
            "last sample at 1 h gives a degenerate slope".into(),
        ));
    }
    let slope = (c_last - c1) / (t_last - 1.0);
    Ok((c1 + slope * 2.0).max(0.0))
}

/// As [`estimate_c3_linear`], but the two concentrations swap when the last
/// one is higher; the peak is assumed before 3 h, so an ascending line would
/// extrapolate an unrealistically high value.
pub fn estimate_c3_reverse_linear(c1: f64, c_last: f64, t_last: f64) -> Result<f64> {
    if c_last > c1 {
        estimate_c3_linear(c_last, c1, t_last)
    } else {
        estimate_c3_linear(c1, c_last, t_last)
    }
}

/// Exponential through (t_last, c_last) and (12 h, trough) evaluated at 3 h.
pub fn estimate_c3_loglinear(c_last: f64, t_last: f64, c_trough: f64) -> Result<f64> {
    if c_last <= 0.0 || c_trough <= 0.0 {
        return Err(Error::LogDomain(format!(
            "log-linear estimate needs positive concentrations, got c_last={c_last}, trough={c_trough}"
        )));
    }
    if (crate::pk::DOSE_INTERVAL_H - t_last).abs() < 1e-9 {
        return Err(Error::ImputationDegenerate(
            "last sample at 12 h gives a degenerate log slope".into(),
        ));
    }
    let k = (c_trough / c_last).ln() / (crate::pk::DOSE_INTERVAL_H - t_last);
    Ok((c_last * (k * (3.0 - t_last)).exp()).max(0.0))
}

/// MAP-fit the three observations and read the model concentration at 3 h.
pub fn estimate_c3_poppk(
    patient: &PatientRecord,
    observations: &[(f64, f64)],
    dose_mg: f64,
    priors: &PopulationPriors,
) -> Result<f64> {
    let fit = map_fit(priors, observations, dose_mg, patient)?;
    Ok(predict_conc_map(&fit.params, dose_mg, 3.0)?.max(0.0))
}

/// Approach-two features: [c0, c1, c3 (measured or estimated), flag].
/// The pop-PK strategy propagates fit failures to the caller.
pub fn approach_two_features(
    event: &FlexibleEvent,
    patient: &PatientRecord,
    strategy: C3Strategy,
    priors: &PopulationPriors,
) -> Result<Vec<f64>> {
    let c3 = if event.nominal_last_time == 3.0 {
        event.c_last
    } else {
        match strategy {
            C3Strategy::Linear => {
                estimate_c3_linear(event.c1, event.c_last, event.nominal_last_time)?
            }
            C3Strategy::ReverseLinear => {
                estimate_c3_reverse_linear(event.c1, event.c_last, event.nominal_last_time)?
            }
            C3Strategy::LogLinear => {
                estimate_c3_loglinear(event.c_last, event.nominal_last_time, event.c0)?
            }
            C3Strategy::PopPk => {
                let obs = [
                    (event.t0_actual, event.c0),
                    (event.t1_actual, event.c1),
                    (event.t_last_actual, event.c_last),
                ];
                estimate_c3_poppk(patient, &obs, event.dose_mg, priors)?
            }
        }
    };
    Ok(vec![event.c0, event.c1, c3, event.estimated_flag()])
}

/// Build the event table of one model variant over prepared events.
///
/// Flexible variants expand every profile into five events; events whose
/// pop-PK estimation fails are dropped with a warning so the remaining
/// strategies stay comparable.
pub fn build_event_table(
    prepared: &[PreparedEvent],
    variant: ModelVariant,
    priors: &PopulationPriors,
) -> Result<EventTable> {
    let schema = variant.schema();
    let mut rows = Vec::new();
    for ev in prepared {
        match variant {
            ModelVariant::Full16 => {
                rows.push(EventRow {
                    patient_id: ev.profile.patient_id.clone(),
                    visit: ev.profile.visit,
                    features: build_full_event(ev)?,
                    target_auc: ev.reference_auc,
                });
            }
            ModelVariant::Fixed3 { demographics } => {
                let grid = NominalGrid;
                let (_, c0) = slot_point(&ev.profile, 0)?;
                let (_, c1) = slot_point(&ev.profile, grid.slot_of(1.0).unwrap())?;
                let (_, c3) = slot_point(&ev.profile, grid.slot_of(3.0).unwrap())?;
                let mut features = vec![c0, c1, c3];
                if demographics {
                    features.extend(demographic_values(&ev.patient));
                }
                rows.push(EventRow {
                    patient_id: ev.profile.patient_id.clone(),
                    visit: ev.profile.visit,
                    features,
                    target_auc: ev.reference_auc,
                });
            }
            ModelVariant::FlexibleRaw { variant: raw } => {
                for fe in expand_flexible_events(ev)? {
                    rows.push(EventRow {
                        patient_id: fe.patient_id.clone(),
                        visit: fe.visit,
                        features: approach_one_features(&fe, &ev.patient, raw),
                        target_auc: fe.target_auc,
                    });
                }
            }
            ModelVariant::FlexibleEstimated { strategy } => {
                for fe in expand_flexible_events(ev)? {
                    match approach_two_features(&fe, &ev.patient, strategy, priors) {
                        Ok(features) => rows.push(EventRow {
                            patient_id: fe.patient_id.clone(),
                            visit: fe.visit,
                            features,
                            target_auc: fe.target_auc,
                        }),
                        Err(err) => log::warn!(
                            "dropping event {}/{} at {} h: {err}",
                            fe.patient_id,
                            fe.visit,
                            fe.nominal_last_time
                        ),
                    }
                }
            }
        }
    }
    let table = EventTable { schema, rows };
    table.validate()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Assay, PkParameters, Sex};
    use crate::pk::ConcentrationPoint;
    use approx::assert_relative_eq;

    fn patient() -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            sex: Sex::Male,
            weight_kg: 75.0,
            height_cm: 178.0,
            hematocrit: 0.35,
            txt_days: 200.0,
            assay: Assay::Lcms,
            sigma_add: 0.24,
            sigma_prop: 0.064,
            dose_mg: 5.0,
        }
    }

    fn on_grid_profile() -> ConcentrationProfile {
        let params = PkParameters { cl: 25.0, v: 350.0, ka: 1.5 };
        let points = NOMINAL_TIMES
            .iter()
            .map(|&t| ConcentrationPoint {
                time: t,
                concentration: crate::cohort::steady_state_concentration(&params, 5.0, t)
                    .unwrap(),
                measured: true,
            })
            .collect();
        ConcentrationProfile::new("p1", 1, 5.0, points).unwrap()
    }

    #[test]
    fn full_schema_has_exactly_43_slots() {
        let schema = ModelVariant::Full16.schema();
        assert_eq!(schema.len(), 43);
        assert_eq!(schema.slots[0], "conc_0");
        assert_eq!(schema.slots[1], "conc_0.5");
        assert_eq!(schema.slots[15], "conc_12");
        assert_eq!(schema.slots[16], "dt_0");
        assert_eq!(schema.slots[42], "sigma_prop");
    }

    #[test]
    fn variant_schema_lengths_are_frozen() {
        let expect = [
            (ModelVariant::Full16, 43),
            (ModelVariant::Fixed3 { demographics: false }, 3),
            (ModelVariant::Fixed3 { demographics: true }, 10),
            (ModelVariant::FlexibleRaw { variant: RawTimeVariant::DeltaOnly }, 4),
            (ModelVariant::FlexibleRaw { variant: RawTimeVariant::ExactTimes }, 6),
            (ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedMinimal }, 7),
            (
                ModelVariant::FlexibleRaw { variant: RawTimeVariant::CombinedPlusDemographics },
                14,
            ),
            (ModelVariant::FlexibleEstimated { strategy: C3Strategy::Linear }, 4),
        ];
        for (variant, len) in expect {
            assert_eq!(variant.schema().len(), len, "{}", variant.id());
        }
    }

    #[test]
    fn variant_ids_round_trip() {
        for v in ALL_VARIANTS {
            assert_eq!(ModelVariant::parse(v.id()).unwrap(), v);
        }
        assert!(ModelVariant::parse("bogus").is_err());
    }

    #[test]
    fn full_event_on_grid_has_zero_time_deltas() {
        let prepared = prepare_event(&on_grid_profile(), &patient()).unwrap();
        let values = build_full_event(&prepared).unwrap();
        assert_eq!(values.len(), 43);
        for (i, &dt) in values[16..32].iter().enumerate() {
            assert_eq!(dt, 0.0, "dt slot {i}");
        }
        assert_eq!(values[32], 5.0); // dose
        assert_eq!(values[37], 1.0); // sex code: male
    }

    #[test]
    fn off_grid_sample_yields_minute_delta() {
        let mut profile = on_grid_profile();
        let slot_3h = NominalGrid.slot_of(3.0).unwrap();
        for p in profile.points.iter_mut() {
            if p.time == 3.0 {
                p.time = 3.1;
            }
        }
        let prepared = prepare_event(&profile, &patient()).unwrap();
        let values = build_full_event(&prepared).unwrap();
        assert_relative_eq!(values[16 + slot_3h], 6.0, max_relative = 1e-9);
    }

    #[test]
    fn unimputed_profile_is_a_schema_error() {
        let points = vec![
            ConcentrationPoint { time: 0.0, concentration: 4.0, measured: true },
            ConcentrationPoint { time: 1.0, concentration: 10.0, measured: true },
            ConcentrationPoint { time: 3.0, concentration: 8.0, measured: true },
        ];
        let profile = ConcentrationProfile::new("p1", 1, 5.0, points).unwrap();
        let ev = PreparedEvent { profile, patient: patient(), reference_auc: 100.0 };
        assert!(matches!(build_full_event(&ev), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn expansion_gives_five_events_per_profile() {
        let prepared = prepare_event(&on_grid_profile(), &patient()).unwrap();
        let events = expand_flexible_events(&prepared).unwrap();
        assert_eq!(events.len(), 5);
        let times: Vec<f64> = events.iter().map(|e| e.nominal_last_time).collect();
        assert_eq!(times, FLEXIBLE_LAST_TIMES.to_vec());
        assert_eq!(events[2].delta_from_3h(), 0.0);
        assert_eq!(events[4].delta_from_3h(), 2.0);
        assert_eq!(events[2].estimated_flag(), 0.0);
        assert_eq!(events[0].estimated_flag(), 1.0);
        // One physical dose interval: the same target across expansions.
        assert!(events.iter().all(|e| e.target_auc == events[0].target_auc));
    }

    #[test]
    fn linear_estimator_matches_two_point_arithmetic() {
        assert_relative_eq!(
            estimate_c3_linear(12.0, 8.0, 5.0).unwrap(),
            10.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            estimate_c3_linear(7.0, 7.0, 2.0).unwrap(),
            7.0,
            max_relative = 1e-12
        );
        // Rising data extrapolates without a swap in this variant.
        assert_relative_eq!(
            estimate_c3_linear(2.0, 14.0, 2.0).unwrap(),
            26.0,
            max_relative = 1e-12
        );
        assert!(estimate_c3_linear(5.0, 5.0, 1.0).is_err());
    }

    #[test]
    fn reverse_linear_swaps_rising_pairs_and_clamps() {
        // (1,14) and (2,2) after the swap: 14 - 12*2 = -10, clamped to 0.
        assert_relative_eq!(
            estimate_c3_reverse_linear(2.0, 14.0, 2.0).unwrap(),
            0.0,
            max_relative = 1e-12
        );
        // No swap when the last concentration is not higher.
        assert_relative_eq!(
            estimate_c3_reverse_linear(12.0, 8.0, 5.0).unwrap(),
            estimate_c3_linear(12.0, 8.0, 5.0).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn loglinear_estimator_matches_closed_form() {
        let c3 = estimate_c3_loglinear(8.0, 4.0, 4.0).unwrap();
        assert_relative_eq!(c3, 8.0 * (2f64.ln() / 8.0).exp(), max_relative = 1e-12);
        assert_relative_eq!(c3, 8.724_061_861_322_622, max_relative = 1e-9);

        let c3b = estimate_c3_loglinear(8.0, 2.0, 4.0).unwrap();
        assert_relative_eq!(c3b, 8.0 * 0.5f64.powf(0.1), max_relative = 1e-12);
        assert_relative_eq!(c3b, 7.464_263_932_294_459, max_relative = 1e-9);

        let flat = estimate_c3_loglinear(6.0, 4.0, 6.0).unwrap();
        assert_relative_eq!(flat, 6.0, max_relative = 1e-12);

        assert!(matches!(
            estimate_c3_loglinear(0.0, 4.0, 4.0),
            Err(Error::LogDomain(_))
        ));
    }

    #[test]
    fn loglinear_exact_on_single_exponential_terminal_phase() {
        // Terminal phase A·e^(-k t): the estimator reproduces C(3) exactly.
        let a = 14.0_f64;
        let k = 0.11_f64;
        let c = |t: f64| a * (-k * t).exp();
        for t_last in [2.0, 2.5, 4.0, 5.0] {
            let est = estimate_c3_loglinear(c(t_last), t_last, c(12.0)).unwrap();
            assert_relative_eq!(est, c(3.0), max_relative = 1e-9);
        }
    }

    #[test]
    fn poppk_estimator_recovers_c3_from_noiseless_samples() {
        let truth = PkParameters { cl: 25.0, v: 350.0, ka: 1.5 };
        let priors = PopulationPriors::default();
        let obs: Vec<(f64, f64)> = [0.0, 1.0, 5.0]
            .iter()
            .map(|&t| {
                (t, crate::cohort::steady_state_concentration(&truth, 5.0, t).unwrap())
            })
            .collect();
        let c3 = estimate_c3_poppk(&patient(), &obs, 5.0, &priors).unwrap();
        let c3_true = crate::cohort::steady_state_concentration(&truth, 5.0, 3.0).unwrap();
        assert!((c3 - c3_true).abs() / c3_true < 0.02, "{c3} vs {c3_true}");
    }

    #[test]
    fn approach_two_uses_measured_value_at_three_hours() {
        let prepared = prepare_event(&on_grid_profile(), &patient()).unwrap();
        let events = expand_flexible_events(&prepared).unwrap();
        let at3 = &events[2];
        let priors = PopulationPriors::default();
        for strategy in
            [C3Strategy::Linear, C3Strategy::ReverseLinear, C3Strategy::LogLinear, C3Strategy::PopPk]
        {
            let f = approach_two_features(at3, &patient(), strategy, &priors).unwrap();
            assert_eq!(f[2], at3.c_last);
            assert_eq!(f[3], 0.0);
        }
    }

    #[test]
    fn event_table_counts_match_expansion() {
        let prepared: Vec<PreparedEvent> = (0..3)
            .map(|i| {
                let mut p = on_grid_profile();
                p.visit = i + 1;
                prepare_event(&p, &patient()).unwrap()
            })
            .collect();
        let priors = PopulationPriors::default();
        let fixed =
            build_event_table(&prepared, ModelVariant::Fixed3 { demographics: true }, &priors)
                .unwrap();
        assert_eq!(fixed.rows.len(), 3);
        assert_eq!(fixed.schema.len(), 10);
        let flex = build_event_table(
            &prepared,
            ModelVariant::FlexibleRaw { variant: RawTimeVariant::DeltaOnly },
            &priors,
        )
        .unwrap();
        assert_eq!(flex.rows.len(), 15);
    }
}
