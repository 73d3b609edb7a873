//! Synthetic patients and steady-state concentration profiles.
//!
//! Profiles come from a one-compartment first-order-absorption model at
//! steady state, which keeps every downstream number checkable: the true
//! exposure is AUC_τ = dose / CL in closed form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::{ConcentrationPoint, ConcentrationProfile, NominalGrid, DOSE_INTERVAL_H, NOMINAL_TIMES};

/// Reference covariate values the population model is centred on.
pub const REFERENCE_HEMATOCRIT: f64 = 0.35;
pub const REFERENCE_WEIGHT_KG: f64 = 75.0;

/// Absorption rate bounds applied after log-normal perturbation; keeps the
/// steady-state peak inside (0.5, 3.5) h for any plausible elimination rate.
const KA_MIN: f64 = 0.6;
const KA_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// Feature encoding: 0 = female, 1 = male.
    pub fn code(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "female" => Ok(Sex::Female),
            "male" => Ok(Sex::Male),
            other => Err(Error::Config(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Assay {
    Lcms,
    Immuno,
}

impl Assay {
    /// Feature encoding: 0 = LCMS, 1 = IMMUNO.
    pub fn code(self) -> f64 {
        match self {
            Assay::Lcms => 0.0,
            Assay::Immuno => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Assay::Lcms => "LCMS",
            Assay::Immuno => "IMMUNO",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "LCMS" => Ok(Assay::Lcms),
            "IMMUNO" => Ok(Assay::Immuno),
            other => Err(Error::Config(format!("unknown assay {other:?}"))),
        }
    }
}

/// Demographics and assay characteristics of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub weight_kg: f64,
    pub height_cm: f64,
    /// Red-cell volume fraction, in (0.15, 0.60).
    pub hematocrit: f64,
    /// Days since transplantation, ≥ 1.
    pub txt_days: f64,
    pub assay: Assay,
    /// Additive assay error SD, µg/L.
    pub sigma_add: f64,
    /// Proportional assay error SD, fraction.
    pub sigma_prop: f64,
    /// Morning dose in mg.
    pub dose_mg: f64,
}

impl PatientRecord {
    pub fn bmi(&self) -> f64 {
        let h_m = self.height_cm / 100.0;
        self.weight_kg / (h_m * h_m)
    }

    /// DuBois body surface area in m².
    pub fn bsa(&self) -> f64 {
        0.007184 * self.weight_kg.powf(0.425) * self.height_cm.powf(0.725)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_kg.is_finite() && self.weight_kg > 0.0) {
            return Err(Error::Config(format!("weight {} kg", self.weight_kg)));
        }
        if !(self.height_cm.is_finite() && self.height_cm > 0.0) {
            return Err(Error::Config(format!("height {} cm", self.height_cm)));
        }
        if !(self.hematocrit > 0.15 && self.hematocrit < 0.60) {
            return Err(Error::Config(format!("hematocrit {}", self.hematocrit)));
        }
        if !(self.txt_days >= 1.0) {
            return Err(Error::Config(format!("txt {} days", self.txt_days)));
        }
        if self.sigma_add < 0.0 || self.sigma_prop < 0.0 {
            return Err(Error::Config("negative assay sigma".into()));
        }
        if !(self.dose_mg > 0.0) {
            return Err(Error::Config(format!("dose {} mg", self.dose_mg)));
        }
        Ok(())
    }
}

/// Individual apparent PK parameters (bioavailability folded in).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParameters {
    /// Apparent clearance, L/h.
    pub cl: f64,
    /// Apparent volume of distribution, L.
    pub v: f64,
    /// First-order absorption rate, 1/h.
    pub ka: f64,
}

impl PkParameters {
    pub fn new(cl: f64, v: f64, ka: f64) -> Result<Self> {
        let p = Self { cl, v, ka };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cl", self.cl), ("v", self.v), ("ka", self.ka)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be finite and > 0")));
            }
        }
        if rates_coincide(self.ka, self.ke()) {
            return Err(Error::DegenerateParameters);
        }
        Ok(())
    }

    /// Elimination rate constant CL/V, 1/h.
    pub fn ke(&self) -> f64 {
        self.cl / self.v
    }
}

fn rates_coincide(ka: f64, ke: f64) -> bool {
    (ka - ke).abs() <= 1e-10 * ka.abs().max(ke.abs())
}

/// Population medians and log-normal inter-individual variability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationParams {
    pub cl_pop: f64,
    pub v_pop: f64,
    pub ka_pop: f64,
    pub omega_cl: f64,
    pub omega_v: f64,
    pub omega_ka: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            cl_pop: 25.0,
            v_pop: 350.0,
            ka_pop: 1.5,
            omega_cl: 0.3,
            omega_v: 0.3,
            omega_ka: 0.5,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cl_pop", self.cl_pop), ("v_pop", self.v_pop), ("ka_pop", self.ka_pop)]
        {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be > 0")));
            }
        }
        for (name, v) in
            [("omega_cl", self.omega_cl), ("omega_v", self.omega_v), ("omega_ka", self.omega_ka)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Sampling priors for patient covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortPriors {
    pub male_fraction: f64,
    pub weight_mean_male: f64,
    pub weight_mean_female: f64,
    pub weight_sd: f64,
    pub height_mean_male: f64,
    pub height_mean_female: f64,
    pub height_sd: f64,
    pub hematocrit_mean: f64,
    pub hematocrit_sd: f64,
    /// Time after transplantation is log-uniform over this range (days).
    pub txt_min_days: f64,
    pub txt_max_days: f64,
    pub lcms_fraction: f64,
    /// Base assay error model; per-assay multipliers scale it.
    pub sigma_add_base: f64,
    pub sigma_prop_base: f64,
    pub lcms_sigma_scale: f64,
    pub immuno_sigma_scale: f64,
    pub dose_min_mg: u32,
    pub dose_max_mg: u32,
    /// Re-titrate each patient's dose toward a target exposure once the
    /// true clearance is known, the way clinical dosing is adjusted; the
    /// dose stays an integer in [dose_min_mg, dose_max_mg].
    pub titrate_doses: bool,
    pub target_auc_mean: f64,
    pub target_auc_sd: f64,
}

impl Default for CohortPriors {
    fn default() -> Self {
        Self {
            male_fraction: 2.0 / 3.0,
            weight_mean_male: 83.0,
            weight_mean_female: 70.0,
            weight_sd: 13.0,
            height_mean_male: 179.0,
            height_mean_female: 166.0,
            height_sd: 7.0,
            hematocrit_mean: 0.40,
            hematocrit_sd: 0.045,
            txt_min_days: 12.0,
            txt_max_days: 5600.0,
            lcms_fraction: 0.7,
            sigma_add_base: 0.3,
            sigma_prop_base: 0.08,
            lcms_sigma_scale: 0.8,
            immuno_sigma_scale: 1.2,
            dose_min_mg: 1,
            dose_max_mg: 8,
            titrate_doses: true,
            target_auc_mean: 165.0,
            target_auc_sd: 25.0,
        }
    }
}

impl CohortPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weight_sd", self.weight_sd),
            ("height_sd", self.height_sd),
            ("hematocrit_sd", self.hematocrit_sd),
            ("sigma_add_base", self.sigma_add_base),
            ("sigma_prop_base", self.sigma_prop_base),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("prior {name} = {v} must be ≥ 0")));
            }
        }
        for (name, v) in
            [("male_fraction", self.male_fraction), ("lcms_fraction", self.lcms_fraction)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("prior {name} = {v} outside [0, 1]")));
            }
        }
        if !(1.0 <= self.txt_min_days && self.txt_min_days <= self.txt_max_days) {
            return Err(Error::Config(format!(
                "txt range [{}, {}] invalid",
                self.txt_min_days, self.txt_max_days
            )));
        }
        if self.dose_min_mg < 1 || self.dose_min_mg > self.dose_max_mg {
            return Err(Error::Config(format!(
                "dose range [{}, {}] mg invalid",
                self.dose_min_mg, self.dose_max_mg
            )));
        }
        if self.lcms_sigma_scale < 0.0 || self.immuno_sigma_scale < 0.0 {
            return Err(Error::Config("negative assay sigma scale".into()));
        }
        if self.titrate_doses
            && (!(self.target_auc_mean > 0.0)
                || !(self.target_auc_sd.is_finite() && self.target_auc_sd >= 0.0))
        {
            return Err(Error::Config(format!(
                "target exposure ({} ± {}) invalid",
                self.target_auc_mean, self.target_auc_sd
            )));
        }
        Ok(())
    }
}

fn sample_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
    let dist = Normal::new(mean, sd)
        .map_err(|e| Error::Config(format!("normal({mean}, {sd}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Draw one patient from the covariate priors. Deterministic per seed.
pub fn sample_patient(
    seed: u64,
    patient_id: impl Into<String>,
    priors: &CohortPriors,
) -> Result<PatientRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_patient_with_rng(&mut rng, patient_id, priors)
}

pub fn sample_patient_with_rng<R: Rng>(
    rng: &mut R,
    patient_id: impl Into<String>,
    priors: &CohortPriors,
) -> Result<PatientRecord> {
    priors.validate()?;
    let sex = if rng.random_bool(priors.male_fraction) { Sex::Male } else { Sex::Female };
    let (w_mean, h_mean) = match sex {
        Sex::Male => (priors.weight_mean_male, priors.height_mean_male),
        Sex::Female => (priors.weight_mean_female, priors.height_mean_female),
    };
    let weight = sample_normal(rng, w_mean, priors.weight_sd)?.clamp(40.0, 150.0);
    let height = sample_normal(rng, h_mean, priors.height_sd)?.clamp(140.0, 205.0);
    let hct = sample_normal(rng, priors.hematocrit_mean, priors.hematocrit_sd)?
        .clamp(0.20, 0.55);
    let txt = if priors.txt_max_days - priors.txt_min_days < 1e-12 {
        priors.txt_min_days
    } else {
        let u: f64 = rng.random_range(priors.txt_min_days.ln()..priors.txt_max_days.ln());
        u.exp()
    };
    let assay = if rng.random_bool(priors.lcms_fraction) { Assay::Lcms } else { Assay::Immuno };
    let scale = match assay {
        Assay::Lcms => priors.lcms_sigma_scale,
        Assay::Immuno => priors.immuno_sigma_scale,
    };
    let dose = rng.random_range(priors.dose_min_mg..=priors.dose_max_mg) as f64;
    let record = PatientRecord {
        patient_id: patient_id.into(),
        sex,
        weight_kg: weight,
        height_cm: height,
        hematocrit: hct,
        txt_days: txt,
        assay,
        sigma_add: priors.sigma_add_base * scale,
        sigma_prop: priors.sigma_prop_base * scale,
        dose_mg: dose,
    };
    record.validate()?;
    Ok(record)
}

/// Steady-state concentration of the one-compartment oral model, µg/L.
///
/// C(t) = D·ka / (V·(ka−ke)) · [ e^(−ke·t)/(1−e^(−ke·τ)) − e^(−ka·t)/(1−e^(−ka·τ)) ]
/// with D the dose in µg and τ = 12 h. Periodic: C(0) = C(τ).
pub fn steady_state_concentration(p: &PkParameters, dose_mg: f64, t: f64) -> Result<f64> {
    if !(0.0..=DOSE_INTERVAL_H).contains(&t) {
        return Err(Error::Config(format!("t = {t} h outside [0, {DOSE_INTERVAL_H}]")));
    }
    if !(dose_mg.is_finite() && dose_mg > 0.0) {
        return Err(Error::Config(format!("dose {dose_mg} mg must be > 0")));
    }
    p.validate()?;
    let ke = p.ke();
    let ka = p.ka;
    let tau = DOSE_INTERVAL_H;
    let dose_ug = dose_mg * 1000.0;
    let pref = dose_ug * ka / (p.v * (ka - ke));
    let acc_ke = (-ke * t).exp() / (1.0 - (-ke * tau).exp());
    let acc_ka = (-ka * t).exp() / (1.0 - (-ka * tau).exp());
    Ok(pref * (acc_ke - acc_ka))
}

/// Time of the steady-state concentration maximum, hours.
pub fn steady_state_peak_time(p: &PkParameters) -> Result<f64> {
    p.validate()?;
    let ke = p.ke();
    let ka = p.ka;
    let tau = DOSE_INTERVAL_H;
    let ratio = ka * (1.0 - (-ke * tau).exp()) / (ke * (1.0 - (-ka * tau).exp()));
    Ok(ratio.ln() / (ka - ke))
}

/// Covariate-shifted population medians shared by the generator and the
/// MAP estimator: clearance scales inversely with hematocrit and
/// allometrically with weight; volume scales linearly with weight.
pub fn covariate_adjusted_medians(
    patient: &PatientRecord,
    pop: &PopulationParams,
) -> (f64, f64, f64) {
    let hct_ratio = patient.hematocrit / REFERENCE_HEMATOCRIT;
    let wt_ratio = patient.weight_kg / REFERENCE_WEIGHT_KG;
    let cl = pop.cl_pop * hct_ratio.powi(-1) * wt_ratio.powf(0.75);
    let v = pop.v_pop * wt_ratio;
    let ka = pop.ka_pop;
    (cl, v, ka)
}

/// Draw individual PK parameters around the covariate-adjusted medians.
pub fn individualize_parameters(
    patient: &PatientRecord,
    pop: &PopulationParams,
    seed: u64,
) -> Result<PkParameters> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    individualize_with_rng(patient, pop, &mut rng)
}

pub fn individualize_with_rng<R: Rng>(
    patient: &PatientRecord,
    pop: &PopulationParams,
    rng: &mut R,
) -> Result<PkParameters> {
    pop.validate()?;
    let (cl_med, v_med, ka_med) = covariate_adjusted_medians(patient, pop);
    // Re-draw the rare parameter sets where absorption and elimination
    // rates coincide.
    for _ in 0..32 {
        let cl = cl_med * sample_normal(rng, 0.0, pop.omega_cl)?.exp();
        let v = v_med * sample_normal(rng, 0.0, pop.omega_v)?.exp();
        let ka = (ka_med * sample_normal(rng, 0.0, pop.omega_ka)?.exp()).clamp(KA_MIN, KA_MAX);
        let candidate = PkParameters { cl, v, ka };
        if !rates_coincide(candidate.ka, candidate.ke()) {
            return Ok(candidate);
        }
    }
    Err(Error::DegenerateParameters)
}

/// A simulated dose interval together with its analytic exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedProfile {
    pub profile: ConcentrationProfile,
    /// Exact AUC over the interval: dose (µg) / CL.
    pub true_auc: f64,
}

/// Simulate one dose interval at the given sampling times.
pub fn simulate_profile(
    patient: &PatientRecord,
    params: &PkParameters,
    dose_mg: f64,
    sampling_times: &[f64],
    seed: u64,
    noise_on: bool,
) -> Result<SimulatedProfile> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    simulate_profile_with_rng(patient, params, dose_mg, sampling_times, &mut rng, noise_on, 1)
}

pub fn simulate_profile_with_rng<R: Rng>(
    patient: &PatientRecord,
    params: &PkParameters,
    dose_mg: f64,
    sampling_times: &[f64],
    rng: &mut R,
    noise_on: bool,
    visit: u32,
) -> Result<SimulatedProfile> {
    if sampling_times.is_empty() {
        return Err(Error::Config("sampling_times is empty".into()));
    }
    let mut points = Vec::with_capacity(sampling_times.len());
    for &t in sampling_times {
        let c_true = steady_state_concentration(params, dose_mg, t)?;
        let c = if noise_on {
            let eps_prop = sample_normal(rng, 0.0, patient.sigma_prop)?;
            let eps_add = sample_normal(rng, 0.0, patient.sigma_add)?;
            (c_true * (1.0 + eps_prop) + eps_add).max(0.0)
        } else {
            c_true
        };
        points.push(ConcentrationPoint { time: t, concentration: c, measured: true });
    }
    points.sort_by(|a, b| a.time.total_cmp(&b.time));
    let profile = ConcentrationProfile::new(patient.patient_id.clone(), visit, dose_mg, points)?;
    let true_auc = dose_mg * 1000.0 / params.cl;
    Ok(SimulatedProfile { profile, true_auc })
}

/// Shape parameters of one generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Base number of visits for every patient.
    pub visits_per_patient: u32,
    /// The first `second_visit_patients` patients get one extra visit.
    pub second_visit_patients: usize,
    /// Inclusive range of sampled nominal slots per profile (trough always kept).
    pub points_min: usize,
    pub points_max: usize,
    pub noise: bool,
    /// SD of sampling-time deviation from the nominal grid, minutes; 0 = on grid.
    pub time_jitter_sd_min: f64,
    pub id_prefix: String,
    pub priors: CohortPriors,
    pub population: PopulationParams,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self::dev_default()
    }
}

impl CohortConfig {
    /// Development cohort: 68 patients, 25 with a second visit (93 profiles),
    /// 8-15 concentrations per interval.
    pub fn dev_default() -> Self {
        Self {
            n_patients: 68,
            visits_per_patient: 1,
            second_visit_patients: 25,
            points_min: 8,
            points_max: 15,
            noise: true,
            time_jitter_sd_min: 0.0,
            id_prefix: "D".into(),
            priors: CohortPriors::default(),
            population: PopulationParams::default(),
        }
    }

    /// Test cohort: 7 patients with two visits each, 12 concentrations per
    /// interval.
    pub fn test_default() -> Self {
        Self {
            n_patients: 7,
            visits_per_patient: 2,
            second_visit_patients: 0,
            points_min: 12,
            points_max: 12,
            noise: true,
            time_jitter_sd_min: 0.0,
            id_prefix: "T".into(),
            priors: CohortPriors::default(),
            population: PopulationParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be ≥ 1".into()));
        }
        if self.visits_per_patient == 0 {
            return Err(Error::Config("visits_per_patient must be ≥ 1".into()));
        }
        if self.second_visit_patients > self.n_patients {
            return Err(Error::Config(format!(
                "second_visit_patients {} exceeds n_patients {}",
                self.second_visit_patients, self.n_patients
            )));
        }
        if !(2 <= self.points_min
            && self.points_min <= self.points_max
            && self.points_max <= NOMINAL_TIMES.len())
        {
            return Err(Error::Config(format!(
                "points range [{}, {}] invalid",
                self.points_min, self.points_max
            )));
        }
        if !(self.time_jitter_sd_min.is_finite() && self.time_jitter_sd_min >= 0.0) {
            return Err(Error::Config("time_jitter_sd_min must be ≥ 0".into()));
        }
        self.priors.validate()?;
        self.population.validate()
    }
}

/// One generated cohort: patients, their true PK parameters, and the
/// simulated dose intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    /// True individual parameters, aligned with `patients`.
    pub params: Vec<PkParameters>,
    pub profiles: Vec<SimulatedProfile>,
}

impl Cohort {
    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    pub fn params_of(&self, id: &str) -> Option<&PkParameters> {
        self.patients
            .iter()
            .position(|p| p.patient_id == id)
            .map(|i| &self.params[i])
    }
}

fn patient_sub_seed(master: u64, index: usize) -> u64 {
    master ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)
}

/// The whole-milligram dose whose steady-state exposure dose/CL lands
/// nearest the patient's sampled target.
fn titrated_dose<R: Rng>(rng: &mut R, priors: &CohortPriors, cl: f64) -> Result<f64> {
    let target = sample_normal(rng, priors.target_auc_mean, priors.target_auc_sd)?
        .max(0.5 * priors.target_auc_mean);
    let ideal = target * cl / 1000.0;
    Ok(ideal.round().clamp(priors.dose_min_mg as f64, priors.dose_max_mg as f64))
}

/// Pick which nominal slots a profile keeps: the trough always, plus a
/// seeded draw of the remaining slots down to `n_keep` in total.
fn choose_slots<R: Rng>(rng: &mut R, n_keep: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (1..NOMINAL_TIMES.len()).collect();
    // Partial Fisher-Yates: the first n_keep-1 entries are the keepers.
    for i in 0..(n_keep - 1).min(others.len()) {
        let j = rng.random_range(i..others.len());
        others.swap(i, j);
    }
    let mut slots: Vec<usize> = others[..n_keep - 1].to_vec();
    slots.push(0);
    slots.sort_unstable();
    slots
}

fn jitter_time<R: Rng>(rng: &mut R, slot: usize, sd_min: f64) -> Result<f64> {
    let t = NOMINAL_TIMES[slot];
    if sd_min <= 0.0 || slot == 0 || slot == NOMINAL_TIMES.len() - 1 {
        return Ok(t);
    }
    // Deviations stay small enough that the point keeps its nominal slot.
    let dt_h = (sample_normal(rng, 0.0, sd_min)? / 60.0).clamp(-0.2, 0.2);
    Ok(t + dt_h)
}

/// Generate a full cohort. Pure function of (config, seed).
pub fn generate_cohort(config: &CohortConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut all_params = Vec::with_capacity(config.n_patients);
    let mut profiles = Vec::new();
    for i in 0..config.n_patients {
        let mut rng = ChaCha12Rng::seed_from_u64(patient_sub_seed(seed, i));
        let id = format!("{}{:03}", config.id_prefix, i + 1);
        let mut record = sample_patient_with_rng(&mut rng, id, &config.priors)?;
        let params = individualize_with_rng(&record, &config.population, &mut rng)?;
        if config.priors.titrate_doses {
            record.dose_mg = titrated_dose(&mut rng, &config.priors, params.cl)?;
        }
        let visits = config.visits_per_patient
            + if i < config.second_visit_patients { 1 } else { 0 };
        for visit in 1..=visits {
            let sim = simulate_visit(&record, &params, config, &mut rng, visit)?;
            profiles.push(sim);
        }
        patients.push(record);
        all_params.push(params);
    }
    Ok(Cohort { patients, params: all_params, profiles })
}

fn simulate_visit<R: Rng>(
    record: &PatientRecord,
    params: &PkParameters,
    config: &CohortConfig,
    rng: &mut R,
    visit: u32,
) -> Result<SimulatedProfile> {
    // Re-draw slot patterns that would leave the profile non-imputable
    // (for example a lone measured point before the concentration maximum).
    for _ in 0..100 {
        let n_keep = if config.points_min == config.points_max {
            config.points_min
        } else {
            rng.random_range(config.points_min..=config.points_max)
        };
        let slots = choose_slots(rng, n_keep);
        let mut times = Vec::with_capacity(slots.len());
        for &s in &slots {
            times.push(jitter_time(rng, s, config.time_jitter_sd_min)?);
        }
        let sim = simulate_profile_with_rng(
            record,
            params,
            record.dose_mg,
            &times,
            rng,
            config.noise,
            visit,
        )?;
        let substituted = crate::pk::substitute_trough_for_12h(&sim.profile)?;
        if crate::pk::impute_missing_concentrations(&substituted, NominalGrid).is_ok() {
            return Ok(sim);
        }
    }
    // Fall back to the full grid, which always imputes trivially.
    let times: Vec<f64> = NOMINAL_TIMES.to_vec();
    simulate_profile_with_rng(record, params, record.dose_mg, &times, rng, config.noise, visit)
}
