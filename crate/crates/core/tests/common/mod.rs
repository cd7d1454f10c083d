//! Helpers shared by the integration tests.

/// Nelder-Mead on a flat vector, restarted from its best vertex until a
/// restart no longer improves.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut best = (x0.to_vec(), f(x0));
    let mut evals = 1;
    loop {
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![best.clone()];
        for k in 0..d {
            let mut x = best.0.clone();
            x[k] += step * x[k].abs().max(0.1);
            let fx = f(&x);
            simplex.push((x, fx));
        }
        evals += d;
        for _ in 0..20_000 {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[d].1 - simplex[0].1;
            if spread.is_finite() && spread < 1e-12 * simplex[0].1.abs().max(1.0) {
                break;
            }
            let centroid: Vec<f64> =
                (0..d).map(|k| simplex[..d].iter().map(|v| v.0[k]).sum::<f64>() / d as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[d].0).map(|(c, w)| c + t * (w - c)).collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = f(&xe);
                evals += 1;
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
            } else {
                let xc = if fr < simplex[d].1 { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                evals += 1;
                if fc < simplex[d].1.min(fr) {
                    simplex[d] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        v.0 = v.0.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        v.1 = f(&v.0);
                    }
                    evals += d;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best.1 - 1e-10;
        if simplex[0].1 < best.1 {
            best = simplex[0].clone();
        }
        if !improved || evals > max_evals {
            return best;
        }
    }
}
