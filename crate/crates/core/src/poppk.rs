//! MAP Bayesian individual parameter estimation and exposure prediction
//! from sparse concentration samples.
//!
//! The structural model is the same one-compartment oral steady-state form
//! the cohort generator uses; priors shift with the patient's covariates
//! through the shared covariate model.

use serde::{Deserialize, Serialize};

use crate::cohort::{
    covariate_adjusted_medians, steady_state_concentration, PatientRecord, PkParameters,
    PopulationParams,
};
use crate::error::{Error, Result};
use crate::simplex::nelder_mead;

/// Simplex diameter (log-parameter space) below which a fit counts as
/// converged.
const FIT_TOL: f64 = 1e-6;
/// Objective evaluation budget per start point.
const FIT_MAX_EVALS: usize = 2000;
/// Initial simplex edge length in log-parameter space.
const FIT_STEP: f64 = 0.25;
/// An omega at or below this freezes its axis at the prior median.
const OMEGA_FLOOR: f64 = 1e-12;

/// Population medians, inter-individual variability and residual error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationPriors {
    pub population: PopulationParams,
    /// Additive residual SD, µg/L.
    pub sigma_add: f64,
    /// Proportional residual SD, fraction.
    pub sigma_prop: f64,
}

impl Default for PopulationPriors {
    fn default() -> Self {
        Self { population: PopulationParams::default(), sigma_add: 0.3, sigma_prop: 0.08 }
    }
}

impl PopulationPriors {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if !(self.sigma_add.is_finite() && self.sigma_add >= 0.0)
            || !(self.sigma_prop.is_finite() && self.sigma_prop >= 0.0)
        {
            return Err(Error::Config("residual sigmas must be ≥ 0".into()));
        }
        if self.sigma_add <= 0.0 && self.sigma_prop <= 0.0 {
            return Err(Error::Config("residual error model is identically zero".into()));
        }
        Ok(())
    }
}

/// One MAP fit with convergence bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub params: PkParameters,
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Janmahasatian fat-free mass, kg. Part of the comparator's input
    /// contract; the simplified structural model does not use it.
    pub fat_free_mass_kg: f64,
}

/// Sex-specific Janmahasatian fat-free mass, kg.
pub fn fat_free_mass(patient: &PatientRecord) -> f64 {
    let bmi = patient.bmi();
    let w = patient.weight_kg;
    match patient.sex {
        crate::cohort::Sex::Male => 9270.0 * w / (6680.0 + 216.0 * bmi),
        crate::cohort::Sex::Female => 9270.0 * w / (8780.0 + 244.0 * bmi),
    }
}

/// Penalized weighted least squares in log-parameter space:
///
/// J(θ) = Σ_obs (c_obs − C(t;θ))² / (σ_add + σ_prop·C(t;θ))²
///      + Σ_k (ln θ_k − ln θ_med,k)² / ω_k²
fn map_objective(
    log_theta: &[f64],
    log_medians: &[f64; 3],
    omegas: &[f64; 3],
    observations: &[(f64, f64)],
    dose_mg: f64,
    sigma_add: f64,
    sigma_prop: f64,
) -> f64 {
    let params = PkParameters {
        cl: log_theta[0].exp(),
        v: log_theta[1].exp(),
        ka: log_theta[2].exp(),
    };
    let mut j = 0.0;
    for &(t, c_obs) in observations {
        let c_pred = match steady_state_concentration(&params, dose_mg, t) {
            Ok(c) => c,
            Err(_) => return f64::INFINITY,
        };
        let sd = sigma_add + sigma_prop * c_pred;
        if sd <= 0.0 {
            return f64::INFINITY;
        }
        let r = (c_obs - c_pred) / sd;
        j += r * r;
    }
    for k in 0..3 {
        if omegas[k] > OMEGA_FLOOR {
            let d = log_theta[k] - log_medians[k];
            j += d * d / (omegas[k] * omegas[k]);
        }
    }
    j
}

/// MAP-fit individual parameters from observed (time, concentration) pairs.
///
/// Deterministic multi-start Nelder-Mead over the log-parameters: one start
/// at the covariate-adjusted prior medians plus ±1ω along each free axis.
/// Axes with ω ≈ 0 stay fixed at their median. With no observations the
/// covariate-adjusted medians are returned directly.
pub fn map_fit(
    priors: &PopulationPriors,
    observations: &[(f64, f64)],
    dose_mg: f64,
    patient: &PatientRecord,
) -> Result<MapFit> {
    priors.validate()?;
    if !(dose_mg.is_finite() && dose_mg > 0.0) {
        return Err(Error::Config(format!("dose {dose_mg} mg must be > 0")));
    }
    for &(t, c) in observations {
        if !(t.is_finite() && (0.0..=crate::pk::DOSE_INTERVAL_H).contains(&t)) {
            return Err(Error::Config(format!("observation time {t} h outside the interval")));
        }
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Config(format!("observation {c} µg/L negative or non-finite")));
        }
    }

    let ffm = fat_free_mass(patient);
    log::debug!(
        "map_fit patient={} dose={} mg obs={} ffm={:.2} kg",
        patient.patient_id,
        dose_mg,
        observations.len(),
        ffm
    );

    let (cl_med, v_med, ka_med) = covariate_adjusted_medians(patient, &priors.population);
    let medians = PkParameters::new(cl_med, v_med, ka_med)?;
    let log_medians = [cl_med.ln(), v_med.ln(), ka_med.ln()];
    let omegas = [
        priors.population.omega_cl,
        priors.population.omega_v,
        priors.population.omega_ka,
    ];

    if observations.is_empty() {
        return Ok(MapFit {
            params: medians,
            objective: 0.0,
            evaluations: 0,
            converged: true,
            fat_free_mass_kg: ffm,
        });
    }

    let free: Vec<usize> = (0..3).filter(|&k| omegas[k] > OMEGA_FLOOR).collect();
    if free.is_empty() {
        let objective = map_objective(
            &log_medians,
            &log_medians,
            &omegas,
            observations,
            dose_mg,
            priors.sigma_add,
            priors.sigma_prop,
        );
        return Ok(MapFit {
            params: medians,
            objective,
            evaluations: 1,
            converged: true,
            fat_free_mass_kg: ffm,
        });
    }

    // Start set: prior median, then median shifted by ±1ω on each free axis.
    let mut starts: Vec<Vec<f64>> = vec![free.iter().map(|&k| log_medians[k]).collect()];
    for (slot, &k) in free.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let mut s: Vec<f64> = free.iter().map(|&k2| log_medians[k2]).collect();
            s[slot] += sign * omegas[k];
            starts.push(s);
        }
    }

    let objective = |reduced: &[f64]| {
        let mut full = log_medians;
        for (slot, &k) in free.iter().enumerate() {
            full[k] = reduced[slot];
        }
        map_objective(
            &full,
            &log_medians,
            &omegas,
            observations,
            dose_mg,
            priors.sigma_add,
            priors.sigma_prop,
        )
    };

    let mut best: Option<crate::simplex::MinimizeResult> = None;
    let mut total_evals = 0usize;
    let mut any_converged = false;
    for start in &starts {
        let r = nelder_mead(objective, start, FIT_STEP, FIT_TOL, FIT_MAX_EVALS);
        total_evals += r.evaluations;
        any_converged |= r.converged;
        let better = match &best {
            None => true,
            Some(b) => r.fx < b.fx,
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start point");
    if !best.fx.is_finite() {
        return Err(Error::FitFailed(format!(
            "objective non-finite after {total_evals} evaluations for patient {}",
            patient.patient_id
        )));
    }

    let mut full = log_medians;
    for (slot, &k) in free.iter().enumerate() {
        full[k] = best.x[slot];
    }
    let params = PkParameters::new(full[0].exp(), full[1].exp(), full[2].exp())
        .map_err(|e| Error::FitFailed(format!("fitted parameters invalid: {e}")))?;
    Ok(MapFit {
        params,
        objective: best.fx,
        evaluations: total_evals,
        converged: any_converged,
        fat_free_mass_kg: ffm,
    })
}

/// Steady-state exposure for one interval: dose (µg) / apparent clearance.
pub fn predict_auc_map(params: &PkParameters, dose_mg: f64) -> Result<f64> {
    params.validate()?;
    if !(dose_mg.is_finite() && dose_mg > 0.0) {
        return Err(Error::Config(format!("dose {dose_mg} mg must be > 0")));
    }
    Ok(dose_mg * 1000.0 / params.cl)
}

/// Model concentration at `t` hours post dose, µg/L.
pub fn predict_conc_map(params: &PkParameters, dose_mg: f64, t: f64) -> Result<f64> {
    steady_state_concentration(params, dose_mg, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Assay, Sex};
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
            sigma_add: 0.3,
            sigma_prop: 0.08,
            dose_mg: 5.0,
        }
    }

    fn observe(params: &PkParameters, dose: f64, times: &[f64]) -> Vec<(f64, f64)> {
        times
            .iter()
            .map(|&t| (t, steady_state_concentration(params, dose, t).unwrap()))
            .collect()
    }

    #[test]
    fn noiseless_fit_recovers_truth_within_one_percent() {
        let truth = PkParameters { cl: 25.0, v: 350.0, ka: 1.5 };
        let priors = PopulationPriors::default();
        let obs = observe(&truth, 5.0, &[0.0, 1.0, 3.0]);
        let fit = map_fit(&priors, &obs, 5.0, &patient()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params.cl, truth.cl, max_relative = 0.01);
    }

    #[test]
    fn zero_observations_return_prior_medians() {
        let priors = PopulationPriors::default();
        let fit = map_fit(&priors, &[], 5.0, &patient()).unwrap();
        assert_relative_eq!(fit.params.cl, 25.0, max_relative = 1e-12);
        assert_relative_eq!(fit.params.v, 350.0, max_relative = 1e-12);
        assert_relative_eq!(fit.params.ka, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn zero_omega_pins_parameters_to_medians() {
        let mut priors = PopulationPriors::default();
        priors.population.omega_cl = 0.0;
        priors.population.omega_v = 0.0;
        priors.population.omega_ka = 0.0;
        // Observations from a different parameter set cannot move the fit.
        let other = PkParameters { cl: 40.0, v: 500.0, ka: 2.5 };
        let obs = observe(&other, 5.0, &[0.0, 1.0, 3.0]);
        let fit = map_fit(&priors, &obs, 5.0, &patient()).unwrap();
        assert_relative_eq!(fit.params.cl, 25.0, max_relative = 1e-12);
        assert_relative_eq!(fit.params.v, 350.0, max_relative = 1e-12);
        assert_relative_eq!(fit.params.ka, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn descent_over_every_start_point() {
        let truth = PkParameters { cl: 32.0, v: 280.0, ka: 1.1 };
        let priors = PopulationPriors::default();
        let obs = observe(&truth, 4.0, &[0.0, 1.0, 2.5]);
        let fit = map_fit(&priors, &obs, 4.0, &patient()).unwrap();

        let log_medians = [25.0f64.ln(), 350.0f64.ln(), 1.5f64.ln()];
        let omegas = [0.3, 0.3, 0.5];
        let value_at = |lt: &[f64; 3]| {
            map_objective(lt, &log_medians, &omegas, &obs, 4.0, 0.3, 0.08)
        };
        // Starts: median and ±1ω per axis.
        let mut starts = vec![log_medians];
        for k in 0..3 {
            for sign in [1.0, -1.0] {
                let mut s = log_medians;
                s[k] += sign * omegas[k];
                starts.push(s);
            }
        }
        for s in &starts {
            assert!(fit.objective <= value_at(s) + 1e-12);
        }
    }

    #[test]
    fn interpolates_noiseless_data_with_weak_prior() {
        let truth = PkParameters { cl: 20.0, v: 300.0, ka: 2.0 };
        let mut priors = PopulationPriors::default();
        priors.population.omega_cl = 10.0;
        priors.population.omega_v = 10.0;
        priors.population.omega_ka = 10.0;
        let obs = observe(&truth, 6.0, &[0.0, 1.5, 4.0]);
        let fit = map_fit(&priors, &obs, 6.0, &patient()).unwrap();
        for &(t, c_obs) in &obs {
            let c_fit = predict_conc_map(&fit.params, 6.0, t).unwrap();
            assert!(
                (c_fit - c_obs).abs() / c_obs < 0.005,
                "at {t} h: fit {c_fit} vs obs {c_obs}"
            );
        }
    }

    #[test]
    fn auc_identity_and_proportionality() {
        let p = PkParameters { cl: 25.0, v: 350.0, ka: 1.5 };
        assert_relative_eq!(predict_auc_map(&p, 5.0).unwrap(), 200.0, max_relative = 1e-12);
        let doubled = PkParameters { cl: 50.0, ..p };
        assert_relative_eq!(predict_auc_map(&doubled, 5.0).unwrap(), 100.0, max_relative = 1e-12);
    }

    #[test]
    fn auc_matches_quadrature_of_concentration_curve() {
        let p = PkParameters { cl: 18.0, v: 260.0, ka: 1.9 };
        let dose = 3.0;
        let n = 40_000usize;
        let h = crate::pk::DOSE_INTERVAL_H / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * predict_conc_map(&p, dose, t).unwrap();
        }
        let quad = sum * h / 3.0;
        assert_relative_eq!(predict_auc_map(&p, dose).unwrap(), quad, max_relative = 1e-6);
    }

    #[test]
    fn conc_round_trip_at_three_hours() {
        let truth = PkParameters { cl: 28.0, v: 390.0, ka: 1.3 };
        let priors = PopulationPriors::default();
        let obs = observe(&truth, 5.0, &[0.0, 1.0, 5.0]);
        let fit = map_fit(&priors, &obs, 5.0, &patient()).unwrap();
        let c3_true = steady_state_concentration(&truth, 5.0, 3.0).unwrap();
        let c3_fit = predict_conc_map(&fit.params, 5.0, 3.0).unwrap();
        assert!((c3_fit - c3_true).abs() / c3_true < 0.02, "{c3_fit} vs {c3_true}");
    }

    #[test]
    fn prior_median_concentrations_in_sanity_band() {
        let p = PkParameters { cl: 25.0, v: 350.0, ka: 1.5 };
        for t in [0.0, 1.0, 3.0, 6.0, 12.0] {
            let c = predict_conc_map(&p, 5.0, t).unwrap();
            assert!(c > 0.0 && c < 100.0, "C({t}) = {c}");
        }
    }

    #[test]
    fn fat_free_mass_is_sex_specific() {
        let m = fat_free_mass(&patient());
        let mut f = patient();
        f.sex = Sex::Female;
        let fm = fat_free_mass(&f);
        assert!(m > fm);
        assert!(m > 30.0 && m < 90.0);
    }
}
