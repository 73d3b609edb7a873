//! Deterministic Nelder-Mead simplex minimization for small dimensions.
//!
//! Fixed coefficients (reflection 1, expansion 2, contraction 0.5, shrink
//! 0.5), no randomization, so the same problem and starting point always
//! produce the same trajectory.

/// Outcome of one minimization run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    /// True when the simplex diameter shrank below the tolerance before the
    /// evaluation budget ran out.
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with an orthogonal initial simplex.
///
/// `step` sets the initial simplex edge length per axis, `tol` the simplex
/// diameter below which the run stops, and `max_evals` the evaluation budget.
/// Non-finite objective values are treated as +infinity.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> MinimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    if n == 0 {
        let fx = eval(x0, &mut evals);
        return MinimizeResult { x: x0.to_vec(), fx, evaluations: evals, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let diameter = |simplex: &[Vec<f64>]| -> f64 {
        let mut d: f64 = 0.0;
        for a in simplex {
            for b in simplex {
                let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                d = d.max(dist2.sqrt());
            }
        }
        d
    };

    let mut converged = false;
    while evals < max_evals {
        // Order by value; stable sort keeps the walk deterministic on ties.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        if diameter(&simplex) < tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let worst = simplex[n].clone();
        let f_best = values[0];
        let f_second_worst = values[n - 1];
        let f_worst = values[n];

        let lerp = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = lerp(1.0);
        let f_reflected = eval(&reflected, &mut evals);

        if f_reflected < f_best {
            let expanded = lerp(2.0);
            let f_expanded = eval(&expanded, &mut evals);
            if f_expanded < f_reflected {
                simplex[n] = expanded;
                values[n] = f_expanded;
            } else {
                simplex[n] = reflected;
                values[n] = f_reflected;
            }
        } else if f_reflected < f_second_worst {
            simplex[n] = reflected;
            values[n] = f_reflected;
        } else {
            let (contracted, f_contracted) = if f_reflected < f_worst {
                let c = lerp(0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            } else {
                let c = lerp(-0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            };
            if f_contracted < f_worst.min(f_reflected) {
                simplex[n] = contracted;
                values[n] = f_contracted;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for i in 1..=n {
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    values[i] = eval(&simplex[i].clone(), &mut evals);
                }
            }
        }
    }

    let mut best = 0usize;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    MinimizeResult {
        x: simplex[best].clone(),
        fx: values[best],
        evaluations: evals,
        converged,
    }
}
