//! Concentration-time domain types, reference AUC computation and the
//! missing-concentration imputation rules.
//!
//! A dose interval is fixed at 12 h (twice-daily dosing at steady state).
//! Sampling targets the 16 nominal hours in [`NOMINAL_TIMES`]; actual sample
//! times may deviate slightly and are mapped back to their nearest nominal
//! slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one dose interval in hours.
pub const DOSE_INTERVAL_H: f64 = 12.0;

/// The 16 nominal post-dose sampling hours.
pub const NOMINAL_TIMES: [f64; 16] = [
    0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0,
];

/// The nominal sampling grid. Always the 16 hours of [`NOMINAL_TIMES`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NominalGrid;

impl NominalGrid {
    pub fn times(&self) -> &'static [f64; 16] {
        &NOMINAL_TIMES
    }

    pub fn len(&self) -> usize {
        NOMINAL_TIMES.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the nominal slot nearest to `time`; earlier slot wins ties.
    pub fn nearest_slot(&self, time: f64) -> usize {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, &t) in NOMINAL_TIMES.iter().enumerate() {
            let d = (time - t).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }

    /// Slot index of a nominal time that is exactly on the grid.
    pub fn slot_of(&self, time: f64) -> Option<usize> {
        NOMINAL_TIMES.iter().position(|&t| t == time)
    }
}

/// One blood sample: time after dose and measured (or estimated) concentration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    /// Hours after dose, in [0, 12].
    pub time: f64,
    /// Whole-blood concentration in µg/L, ≥ 0.
    pub concentration: f64,
    /// False when the value was imputed or substituted rather than assayed.
    pub measured: bool,
}

impl ConcentrationPoint {
    pub fn new(time: f64, concentration: f64, measured: bool) -> Result<Self> {
        if !time.is_finite() || !(0.0..=DOSE_INTERVAL_H).contains(&time) {
            return Err(Error::InvalidProfile(format!(
                "point time {time} outside [0, {DOSE_INTERVAL_H}]"
            )));
        }
        if !concentration.is_finite() || concentration < 0.0 {
            return Err(Error::InvalidProfile(format!(
                "concentration {concentration} at {time} h is negative or non-finite"
            )));
        }
        Ok(Self { time, concentration, measured })
    }
}

/// All samples of one dose interval for one patient visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub patient_id: String,
    /// 1-based visit counter.
    pub visit: u32,
    /// Administered dose in mg.
    pub dose_mg: f64,
    /// Points in strictly increasing time order, at most one per nominal slot.
    pub points: Vec<ConcentrationPoint>,
}

impl ConcentrationProfile {
    pub fn new(
        patient_id: impl Into<String>,
        visit: u32,
        dose_mg: f64,
        points: Vec<ConcentrationPoint>,
    ) -> Result<Self> {
        let profile = Self { patient_id: patient_id.into(), visit, dose_mg, points };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.visit == 0 {
            return Err(Error::InvalidProfile("visit index must be ≥ 1".into()));
        }
        if !self.dose_mg.is_finite() || self.dose_mg <= 0.0 {
            return Err(Error::InvalidProfile(format!("dose {} mg must be > 0", self.dose_mg)));
        }
        if self.points.len() < 2 {
            return Err(Error::InvalidProfile(format!(
                "profile {}/{} has {} point(s); at least 2 required",
                self.patient_id,
                self.visit,
                self.points.len()
            )));
        }
        let grid = NominalGrid;
        let mut seen = [false; 16];
        let mut prev = f64::NEG_INFINITY;
        for p in &self.points {
            ConcentrationPoint::new(p.time, p.concentration, p.measured)?;
            if p.time <= prev {
                return Err(Error::InvalidProfile(format!(
                    "times not strictly increasing at {} h",
                    p.time
                )));
            }
            prev = p.time;
            let slot = grid.nearest_slot(p.time);
            if seen[slot] {
                return Err(Error::InvalidProfile(format!(
                    "two points map to nominal slot {} h",
                    NOMINAL_TIMES[slot]
                )));
            }
            seen[slot] = true;
        }
        Ok(())
    }

    /// The point assigned to a nominal slot, if present.
    pub fn point_at_slot(&self, slot: usize) -> Option<&ConcentrationPoint> {
        let grid = NominalGrid;
        self.points.iter().find(|p| grid.nearest_slot(p.time) == slot)
    }

    /// Trough sample: the point in the 0 h slot.
    pub fn trough(&self) -> Option<&ConcentrationPoint> {
        self.point_at_slot(0)
    }

    /// True when every nominal slot holds a point.
    pub fn is_complete(&self) -> bool {
        (0..NOMINAL_TIMES.len()).all(|s| self.point_at_slot(s).is_some())
    }

    /// Reference AUC over the interval from the points currently present.
    pub fn auc(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> =
            self.points.iter().map(|p| (p.time, p.concentration)).collect();
        auc_log_linear_trapezoid(&pts)
    }
}

/// Area under the concentration-time curve by the log-linear trapezoidal
/// rule: logarithmic trapezoids on strictly decreasing positive segments,
/// linear trapezoids everywhere else.
pub fn auc_log_linear_trapezoid(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidProfile(format!(
            "AUC needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut auc = 0.0;
    for pair in points.windows(2) {
        let (t1, c1) = pair[0];
        let (t2, c2) = pair[1];
        if !(t1.is_finite() && t2.is_finite()) || t2 <= t1 {
            return Err(Error::InvalidProfile(format!(
                "times not strictly increasing: {t1} then {t2}"
            )));
        }
        if c1 < 0.0 || c2 < 0.0 || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidProfile(format!(
                "negative or non-finite concentration in segment [{t1}, {t2}]"
            )));
        }
        let dt = t2 - t1;
        auc += if c2 < c1 && c1 > 0.0 && c2 > 0.0 {
            (c1 - c2) * dt / (c1 / c2).ln()
        } else {
            0.5 * (c1 + c2) * dt
        };
    }
    Ok(auc)
}

/// When the 12 h slot is empty, append a copy of the trough concentration
/// there (steady state: C(0) = C(12)). Identity when 12 h is present.
pub fn substitute_trough_for_12h(profile: &ConcentrationProfile) -> Result<ConcentrationProfile> {
    let trough = profile.trough().ok_or(Error::MissingTrough)?;
    let grid = NominalGrid;
    let last_slot = grid.len() - 1;
    if profile.point_at_slot(last_slot).is_some() {
        return Ok(profile.clone());
    }
    let mut out = profile.clone();
    out.points.push(ConcentrationPoint {
        time: DOSE_INTERVAL_H,
        concentration: trough.concentration,
        measured: false,
    });
    out.validate()?;
    Ok(out)
}

/// Ordinary least-squares line through (x, y) pairs; returns (intercept, slope).
fn ols_line(xy: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = xy.len() as f64;
    if xy.len() < 2 {
        return Err(Error::ImputationDegenerate(format!(
            "least-squares fit needs ≥ 2 points, got {}",
            xy.len()
        )));
    }
    let sx: f64 = xy.iter().map(|p| p.0).sum();
    let sy: f64 = xy.iter().map(|p| p.1).sum();
    let sxx: f64 = xy.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = xy.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::ImputationDegenerate(
            "least-squares fit over coincident times".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((intercept, slope))
}

/// Fill every empty nominal slot of `profile` with an estimated point.
///
/// With t_max the time of the maximum measured concentration (earliest on
/// ties) and t_next the first measured time after it:
///
/// * slots before t_max — linear least squares over the measured points in
///   (0, t_max] (trough excluded);
/// * slots in (t_max, t_next) — linear interpolation between the two;
/// * slots after t_next — least squares of ln(c) on t over the measured
///   points after t_max, exponentiated.
///
/// When only one measured point follows t_max, the trough is first copied
/// to 12 h ([`substitute_trough_for_12h`]) and the terminal fit anchors on
/// that pair instead of degenerating to a constant.
///
/// Estimates are clamped at 0; measured points are never altered. Identity
/// on complete profiles.
pub fn impute_missing_concentrations(
    profile: &ConcentrationProfile,
    grid: NominalGrid,
) -> Result<ConcentrationProfile> {
    let measured: Vec<&ConcentrationPoint> =
        profile.points.iter().filter(|p| p.measured).collect();
    if measured.len() < 2 {
        return Err(Error::ImputationDegenerate(format!(
            "profile {}/{} has {} measured point(s)",
            profile.patient_id,
            profile.visit,
            measured.len()
        )));
    }
    if profile.trough().is_none() {
        return Err(Error::MissingTrough);
    }

    let missing: Vec<usize> =
        (0..grid.len()).filter(|&s| profile.point_at_slot(s).is_none()).collect();
    if missing.is_empty() {
        return Ok(profile.clone());
    }

    // Earliest time attaining the measured maximum.
    let (t_max, c_max) = measured
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(tm, cm), p| {
            if p.concentration > cm {
                (p.time, p.concentration)
            } else {
                (tm, cm)
            }
        });

    let after_max: Vec<&ConcentrationPoint> =
        measured.iter().filter(|p| p.time > t_max).copied().collect();

    // Footnote rule: one measured point after the maximum would make the
    // terminal fit constant; anchor it on the trough copied to 12 h.
    let mut working = profile.clone();
    if after_max.len() == 1 {
        working = substitute_trough_for_12h(&working)?;
    }

    // Anchors for the terminal log-linear fit: measured points after t_max,
    // plus the synthetic 12 h point when the footnote rule added one.
    let terminal_anchors: Vec<(f64, f64)> = working
        .points
        .iter()
        .filter(|p| p.time > t_max && (p.measured || after_max.len() == 1))
        .map(|p| (p.time, p.concentration))
        .collect();

    let (t_next, c_next) = terminal_anchors
        .first()
        .copied()
        .unwrap_or((t_max, c_max));

    // Rule (a) fit inputs: measured points in (0, t_max], trough excluded.
    let rise_points: Vec<(f64, f64)> = measured
        .iter()
        .filter(|p| p.time > 0.0 && p.time <= t_max)
        .map(|p| (p.time, p.concentration))
        .collect();

    let mut rise_fit: Option<(f64, f64)> = None;
    let mut decay_fit: Option<(f64, f64)> = None;

    let mut new_points = working.points.clone();
    for &slot in &missing {
        let t = NOMINAL_TIMES[slot];
        if working.point_at_slot(slot).is_some() {
            continue; // the footnote rule already filled 12 h
        }
        let estimate = if t < t_max {
            if rise_fit.is_none() {
                rise_fit = Some(ols_line(&rise_points)?);
            }
            let (b, m) = rise_fit.unwrap();
            b + m * t
        } else if t <= t_next {
            if (t_next - t_max).abs() < 1e-12 {
                return Err(Error::ImputationDegenerate(format!(
                    "no measured point after the maximum at {t_max} h"
                )));
            }
            c_max + (c_next - c_max) * (t - t_max) / (t_next - t_max)
        } else {
            if decay_fit.is_none() {
                let logged: Vec<(f64, f64)> = terminal_anchors
                    .iter()
                    .filter(|&&(_, c)| c > 0.0)
                    .map(|&(tt, c)| (tt, c.ln()))
                    .collect();
                decay_fit = Some(ols_line(&logged)?);
            }
            let (b, m) = decay_fit.unwrap();
            (b + m * t).exp()
        };
        new_points.push(ConcentrationPoint {
            time: t,
            concentration: estimate.max(0.0),
            measured: false,
        });
    }

    new_points.sort_by(|a, b| a.time.total_cmp(&b.time));
    let out = ConcentrationProfile {
        patient_id: working.patient_id.clone(),
        visit: working.visit,
        dose_mg: working.dose_mg,
        points: new_points,
    };
    out.validate()?;
    Ok(out)
}
