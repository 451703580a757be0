//! Bounded Nelder-Mead. Trial points are projected onto the box before they
//! are evaluated, so the objective never sees an infeasible point.

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when every vertex value is within `f_tol_abs + f_tol_rel·|f_best|`
    /// of the best one.
    pub f_tol_abs: f64,
    pub f_tol_rel: f64,
    /// Per-coordinate edge of the initial simplex.
    pub initial_step: Vec<f64>,
    /// Rebuild the simplex around the incumbent this many times after it
    /// converges.
    pub restarts: usize,
}

#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n && opts.initial_step.len() == n);
    let project = |x: &mut [f64]| {
        for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    project(&mut best_x);
    let mut best_f = eval(&best_x, &mut evals);
    let mut converged = false;

    for _round in 0..=opts.restarts {
        // initial simplex around the incumbent; flip a step that would leave the box
        let mut pts: Vec<Vec<f64>> = vec![best_x.clone()];
        let mut vals = vec![best_f];
        for i in 0..n {
            let mut p = best_x.clone();
            let step = opts.initial_step[i];
            p[i] = if p[i] + step <= upper[i] { p[i] + step } else { p[i] - step };
            project(&mut p);
            vals.push(eval(&p, &mut evals));
            pts.push(p);
        }
        converged = false;
        while evals < opts.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            pts = order.iter().map(|&i| pts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let spread = vals[n] - vals[0];
            if spread <= opts.f_tol_abs + opts.f_tol_rel * vals[0].abs() {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|d| pts[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&pts[n])
                    .map(|(&c, &w)| c + t * (c - w))
                    .collect();
                project(&mut p);
                p
            };

            let xr = along(1.0);
            let fr = eval(&xr, &mut evals);
            if fr < vals[0] {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    pts[n] = xe;
                    vals[n] = fe;
                } else {
                    pts[n] = xr;
                    vals[n] = fr;
                }
            } else if fr < vals[n - 1] {
                pts[n] = xr;
                vals[n] = fr;
            } else {
                let (xc, fc) = if fr < vals[n] {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < vals[n].min(fr) {
                    pts[n] = xc;
                    vals[n] = fc;
                } else {
                    // shrink towards the best vertex
                    for i in 1..=n {
                        let mut p: Vec<f64> = pts[0]
                            .iter()
                            .zip(&pts[i])
                            .map(|(&b, &x)| b + 0.5 * (x - b))
                            .collect();
                        project(&mut p);
                        vals[i] = eval(&p, &mut evals);
                        pts[i] = p;
                    }
                }
            }
        }
        let (ib, fb) = vals
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty simplex");
        if fb < best_f {
            best_f = fb;
            best_x = pts[ib].clone();
        }
        if evals >= opts.max_evals {
            break;
        }
    }

    SimplexResult {
        x: best_x,
        f: best_f,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> SimplexOptions {
        SimplexOptions {
            max_evals: 5000,
            f_tol_abs: 1e-14,
            f_tol_rel: 1e-12,
            initial_step: vec![0.5; n],
            restarts: 2,
        }
    }

    #[test]
    fn minimises_rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &opts(2),
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn respects_box() {
        let r = nelder_mead(
            |x| (x[0] - 10.0).powi(2) + (x[1] + 10.0).powi(2),
            &[0.0, 0.0],
            &[-3.0, -3.0],
            &[3.0, 3.0],
            &opts(2),
        );
        assert!((r.x[0] - 3.0).abs() < 1e-6 && (r.x[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn start_at_minimum_is_kept() {
        let r = nelder_mead(|x| x.iter().map(|v| v * v).sum(), &[0.0; 4], &[-1.0; 4], &[1.0; 4], &opts(4));
        assert_eq!(r.x, vec![0.0; 4]);
        assert_eq!(r.f, 0.0);
    }
}
