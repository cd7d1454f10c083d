//! Covariate bases on the periodic domain `[0, 360)` degrees and their
//! roughness penalties.
//!
//! | kind            | columns                               | penalty                         |
//! |-----------------|---------------------------------------|---------------------------------|
//! | Constant        | `1`                                   | `[1]`                           |
//! | Spline          | wrapped cardinal B-splines, `p` knots | `DᵀD`, first differences        |
//! | Fourier         | `1, cos kθ.., sin kθ..`, `k = 1..n_p` | `diag(0, k⁴.., k⁴..)`           |
//! | GaussianProcess | nearest-node indicators, `p` nodes    | inverse periodic SE correlation |
//!
//! All trigonometry uses `θ_rad = 2πθ/360`, so every basis has period 360°.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPLINE_P: usize = 50;
pub const DEFAULT_GP_P: usize = 50;
pub const DEFAULT_FOURIER_ORDER: usize = 25;
pub const DEFAULT_CORRELATION_LENGTH: f64 = 0.6;
pub const DEFAULT_SPLINE_DEGREE: usize = 3;
/// Added to the node correlation matrix before inversion.
pub const GP_JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Constant,
    Spline,
    Fourier,
    #[serde(alias = "gp")]
    GaussianProcess,
}

impl BasisKind {
    pub const ALL: [BasisKind; 4] = [
        BasisKind::Constant,
        BasisKind::Spline,
        BasisKind::Fourier,
        BasisKind::GaussianProcess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Constant => "Constant",
            BasisKind::Spline => "Spline",
            BasisKind::Fourier => "Fourier",
            BasisKind::GaussianProcess => "GaussianProcess",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(BasisKind::Constant),
            "spline" => Ok(BasisKind::Spline),
            "fourier" => Ok(BasisKind::Fourier),
            "gaussianprocess" | "gaussian_process" | "gp" => Ok(BasisKind::GaussianProcess),
            _ => Err(Error::Config(format!("unknown basis kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A covariate parameterisation. Fields not relevant to `kind` are carried
/// with their defaults and ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasisSpec")]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub p: usize,
    pub fourier_order: usize,
    pub correlation_length: f64,
    pub spline_degree: usize,
    /// Spline only: include the wrap-around difference `β_p − β_1`.
    pub periodic_penalty: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBasisSpec {
    kind: BasisKind,
    p: Option<usize>,
    fourier_order: Option<usize>,
    correlation_length: Option<f64>,
    spline_degree: Option<usize>,
    periodic_penalty: Option<bool>,
}

impl TryFrom<RawBasisSpec> for BasisSpec {
    type Error = Error;

    fn try_from(raw: RawBasisSpec) -> Result<Self> {
        let mut spec = BasisSpec::default_for(raw.kind);
        if let Some(n_p) = raw.fourier_order {
            spec.fourier_order = n_p;
            if raw.kind == BasisKind::Fourier {
                spec.p = 2 * n_p + 1;
            }
        }
        if let Some(p) = raw.p {
            spec.p = p;
        }
        if let Some(r) = raw.correlation_length {
            spec.correlation_length = r;
        }
        if let Some(d) = raw.spline_degree {
            spec.spline_degree = d;
        }
        if let Some(w) = raw.periodic_penalty {
            spec.periodic_penalty = w;
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl BasisSpec {
    pub fn constant() -> Self {
        BasisSpec {
            kind: BasisKind::Constant,
            p: 1,
            fourier_order: DEFAULT_FOURIER_ORDER,
            correlation_length: DEFAULT_CORRELATION_LENGTH,
            spline_degree: DEFAULT_SPLINE_DEGREE,
            periodic_penalty: true,
        }
    }

    pub fn spline(p: usize) -> Self {
        BasisSpec {
            kind: BasisKind::Spline,
            p,
            ..Self::constant()
        }
    }

    pub fn fourier(order: usize) -> Self {
        BasisSpec {
            kind: BasisKind::Fourier,
            p: 2 * order + 1,
            fourier_order: order,
            ..Self::constant()
        }
    }

    pub fn gaussian_process(p: usize, correlation_length: f64) -> Self {
        BasisSpec {
            kind: BasisKind::GaussianProcess,
            p,
            correlation_length,
            ..Self::constant()
        }
    }

    /// The default complexity for each kind: Spline and GP with 50
    /// coefficients, Fourier of order 25 (51 coefficients).
    pub fn default_for(kind: BasisKind) -> Self {
        match kind {
            BasisKind::Constant => Self::constant(),
            BasisKind::Spline => Self::spline(DEFAULT_SPLINE_P),
            BasisKind::Fourier => Self::fourier(DEFAULT_FOURIER_ORDER),
            BasisKind::GaussianProcess => {
                Self::gaussian_process(DEFAULT_GP_P, DEFAULT_CORRELATION_LENGTH)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.kind {
            BasisKind::Constant if self.p != 1 => bad(format!("Constant basis needs p = 1, got {}", self.p)),
            BasisKind::Fourier if self.fourier_order == 0 => bad("Fourier order must be positive".into()),
            BasisKind::Fourier if self.p != 2 * self.fourier_order + 1 => bad(format!(
                "Fourier basis of order {} needs p = {}, got {}",
                self.fourier_order,
                2 * self.fourier_order + 1,
                self.p
            )),
            BasisKind::Spline if self.p < 2 => bad("Spline basis needs p >= 2".into()),
            BasisKind::Spline if self.p < self.spline_degree + 1 => bad(format!(
                "wrapped splines of degree {} need p >= {}",
                self.spline_degree,
                self.spline_degree + 1
            )),
            BasisKind::GaussianProcess if self.p < 2 => bad("GaussianProcess basis needs p >= 2".into()),
            BasisKind::GaussianProcess
                if !(self.correlation_length.is_finite() && self.correlation_length > 0.0) =>
            {
                bad("correlation length must be positive".into())
            }
            _ => Ok(()),
        }
    }

    /// Knot spacing in degrees.
    fn spacing(&self) -> f64 {
        360.0 / self.p as f64
    }

    /// GP node angles: centres of `p` equal bins, `(j + 0.5)·360/p`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.p).map(|j| (j as f64 + 0.5) * h).collect()
    }

    /// Non-zero entries of the basis row at `angle`, appended to `out`.
    /// The angle must already be in `[0, 360)`.
    pub fn row_entries(&self, angle: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        match self.kind {
            BasisKind::Constant => out.push((0, 1.0)),
            BasisKind::Spline => {
                let p = self.p;
                let t = angle / self.spacing();
                let cell = (t.floor() as usize).min(p - 1);
                let frac = t - cell as f64;
                for m in 0..=self.spline_degree {
                    let col = (cell + p - m) % p;
                    let v = cardinal_bspline(self.spline_degree, frac + m as f64);
                    if v != 0.0 {
                        out.push((col, v));
                    }
                }
            }
            BasisKind::Fourier => {
                let n = self.fourier_order;
                let (s1, c1) = angle.to_radians().sin_cos();
                out.push((0, 1.0));
                let (mut c, mut s) = (1.0f64, 0.0f64);
                let start = out.len();
                out.resize(start + 2 * n, (0, 0.0));
                for k in 1..=n {
                    let (cn, sn) = (c * c1 - s * s1, s * c1 + c * s1);
                    c = cn;
                    s = sn;
                    out[start + k - 1] = (k, c);
                    out[start + n + k - 1] = (n + k, s);
                }
            }
            BasisKind::GaussianProcess => out.push((self.nearest_node(angle), 1.0)),
        }
    }

    /// Nearest node on the circle, ties going to the lower index.
    fn nearest_node(&self, angle: f64) -> usize {
        let p = self.p;
        let u = angle / self.spacing();
        let b = (u.floor() as usize).min(p - 1);
        let dist = |j: usize| {
            let d = (u - (j as f64 + 0.5)).abs();
            d.min(p as f64 - d)
        };
        let mut cands = [(b + p - 1) % p, b, (b + 1) % p];
        cands.sort_unstable();
        let mut best = cands[0];
        for &j in &cands[1..] {
            if dist(j) < dist(best) {
                best = j;
            }
        }
        best
    }

    /// `B(θ)·β` at a single angle in `[0, 360)`.
    pub fn curve_at(&self, angle: f64, coeffs: &[f64], scratch: &mut Vec<(usize, f64)>) -> f64 {
        self.row_entries(angle, scratch);
        scratch.iter().map(|&(j, b)| b * coeffs[j]).sum()
    }

    pub fn evaluate(&self, angles: &[f64]) -> Result<BasisMatrix> {
        evaluate_basis(self, angles)
    }

    pub fn roughness(&self) -> Result<RoughnessMatrix> {
        roughness_matrix(self)
    }

    /// Coefficients of the constant curve `value` (all-equal for partition-of
    /// unity and indicator bases, intercept-only for Fourier).
    pub fn constant_coeffs(&self, value: f64) -> Vec<f64> {
        match self.kind {
            BasisKind::Fourier => {
                let mut c = vec![0.0; self.p];
                c[0] = value;
                c
            }
            _ => vec![value; self.p],
        }
    }
}

/// Cardinal B-spline of degree `d` on integer knots, supported on `[0, d+1)`.
pub fn cardinal_bspline(d: usize, x: f64) -> f64 {
    if d == 0 {
        return if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    if x <= 0.0 || x >= (d + 1) as f64 {
        return 0.0;
    }
    let df = d as f64;
    (x * cardinal_bspline(d - 1, x) + (df + 1.0 - x) * cardinal_bspline(d - 1, x - 1.0)) / df
}

pub fn check_angle(angle: f64) -> Result<()> {
    if angle.is_finite() && (0.0..360.0).contains(&angle) {
        Ok(())
    } else {
        Err(Error::Domain(format!("angle {angle} outside [0, 360)")))
    }
}

/// Map any finite angle in degrees onto `[0, 360)`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Evaluated design matrix with a row-sparse copy for fast products.
#[derive(Clone, Debug)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub angles: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `B·β`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, b)| b * beta[j]).sum())
            .collect()
    }

    /// `Bᵀ·g`.
    pub fn tr_mul_vec(&self, g: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        for (r, &gi) in self.rows.iter().zip(g) {
            for &(j, b) in r {
                out[j] += b * gi;
            }
        }
        out
    }

    /// `Bᵀ·diag(w)·B`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let p = self.ncols();
        let mut out = DMatrix::zeros(p, p);
        for (r, &wi) in self.rows.iter().zip(w) {
            for &(j, bj) in r {
                let s = wi * bj;
                for &(k, bk) in r {
                    out[(j, k)] += s * bk;
                }
            }
        }
        out
    }

    /// Rows selected by `index` (repeats allowed).
    pub fn select_rows(&self, index: &[usize]) -> BasisMatrix {
        let rows: Vec<_> = index.iter().map(|&i| self.rows[i].clone()).collect();
        let angles = index.iter().map(|&i| self.angles[i]).collect();
        let values = DMatrix::from_fn(index.len(), self.ncols(), |r, c| self.values[(index[r], c)]);
        BasisMatrix { values, angles, rows }
    }
}

pub fn evaluate_basis(spec: &BasisSpec, angles: &[f64]) -> Result<BasisMatrix> {
    spec.validate()?;
    for &a in angles {
        check_angle(a)?;
    }
    let mut rows = Vec::with_capacity(angles.len());
    let mut scratch = Vec::new();
    let mut values = DMatrix::zeros(angles.len(), spec.p);
    for (i, &a) in angles.iter().enumerate() {
        spec.row_entries(a, &mut scratch);
        for &(j, b) in &scratch {
            values[(i, j)] = b;
        }
        rows.push(scratch.clone());
    }
    Ok(BasisMatrix {
        values,
        angles: angles.to_vec(),
        rows,
    })
}

/// Symmetric penalty matrix `R` in `½λβᵀRβ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughnessMatrix {
    pub values: DMatrix<f64>,
}

impl RoughnessMatrix {
    pub fn quadratic_form(&self, beta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        (b.transpose() * &self.values * &b)[(0, 0)]
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// First-difference matrix; `periodic` appends the row `β_0 − β_{p−1}`.
pub fn difference_matrix(p: usize, periodic: bool) -> DMatrix<f64> {
    let rows = if periodic { p } else { p - 1 };
    let mut d = DMatrix::zeros(rows, p);
    for r in 0..p - 1 {
        d[(r, r)] = -1.0;
        d[(r, r + 1)] = 1.0;
    }
    if periodic {
        d[(p - 1, p - 1)] = -1.0;
        d[(p - 1, 0)] += 1.0;
    }
    d
}

/// Node correlation `C_jk = exp(−(2/r²)·sin²((φ_j − φ_k)/2))`, radians.
pub fn node_correlation(spec: &BasisSpec) -> DMatrix<f64> {
    let nodes: Vec<f64> = spec.nodes().iter().map(|a| a.to_radians()).collect();
    let r2 = spec.correlation_length * spec.correlation_length;
    DMatrix::from_fn(spec.p, spec.p, |j, k| {
        let s = ((nodes[j] - nodes[k]) / 2.0).sin();
        (-(2.0 / r2) * s * s).exp()
    })
}

pub fn roughness_matrix(spec: &BasisSpec) -> Result<RoughnessMatrix> {
    spec.validate()?;
    let values = match spec.kind {
        BasisKind::Constant => DMatrix::from_element(1, 1, 1.0),
        BasisKind::Spline => {
            let d = difference_matrix(spec.p, spec.periodic_penalty);
            d.transpose() * d
        }
        BasisKind::Fourier => {
            let n = spec.fourier_order;
            let mut diag = DVector::zeros(spec.p);
            for k in 1..=n {
                let k4 = (k as f64).powi(4);
                diag[k] = k4;
                diag[n + k] = k4;
            }
            DMatrix::from_diagonal(&diag)
        }
        BasisKind::GaussianProcess => {
            let c = node_correlation(spec);
            let jittered = &c + DMatrix::identity(spec.p, spec.p) * GP_JITTER;
            let chol = jittered.cholesky().ok_or_else(|| {
                let eig = c.clone().symmetric_eigen().eigenvalues;
                let (lo, hi) = (eig.min(), eig.max());
                Error::Numeric(format!(
                    "GP node correlation singular after jitter: eigenvalues in [{lo:e}, {hi:e}], \
                     condition ~ {:e}",
                    hi / (lo.abs() + GP_JITTER)
                ))
            })?;
            let inv = chol.inverse();
            (&inv + inv.transpose()) * 0.5
        }
    };
    Ok(RoughnessMatrix { values })
}

/// `B(θ)·β` for each angle.
pub fn param_curve(spec: &BasisSpec, coeffs: &[f64], angles: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if coeffs.len() != spec.p {
        return Err(Error::Contract(format!(
            "{} coefficients supplied for a basis with p = {}",
            coeffs.len(),
            spec.p
        )));
    }
    let mut scratch = Vec::new();
    angles
        .iter()
        .map(|&a| {
            check_angle(a)?;
            Ok(spec.curve_at(a, coeffs, &mut scratch))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn all_specs() -> Vec<BasisSpec> {
        vec![
            BasisSpec::constant(),
            BasisSpec::default_for(BasisKind::Spline),
            BasisSpec::default_for(BasisKind::Fourier),
            BasisSpec::default_for(BasisKind::GaussianProcess),
            BasisSpec::spline(7),
            BasisSpec::fourier(3),
            BasisSpec::gaussian_process(12, 1.0),
        ]
    }

    #[test]
    fn constant_rows_are_ones() {
        let b = evaluate_basis(&BasisSpec::constant(), &[10.0, 250.0]).unwrap();
        assert_eq!(b.values.shape(), (2, 1));
        assert!(b.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gp_node_centre_is_one_hot() {
        let spec = BasisSpec::default_for(BasisKind::GaussianProcess);
        let b = evaluate_basis(&spec, &[spec.nodes()[7]]).unwrap();
        for j in 0..spec.p {
            assert_eq!(b.values[(0, j)], if j == 7 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn gp_ties_go_to_lower_node() {
        let spec = BasisSpec::gaussian_process(50, 0.6);
        // 7.2° sits halfway between node 0 (3.6°) and node 1 (10.8°)
        let b = evaluate_basis(&spec, &[7.2, 0.0]).unwrap();
        assert_eq!(b.row(0), &[(0, 1.0)]);
        // 0° is halfway between node 0 and node 49 around the circle
        assert_eq!(b.row(1), &[(0, 1.0)]);
        let b = evaluate_basis(&spec, &[359.0]).unwrap();
        assert_eq!(b.row(0), &[(49, 1.0)]);
    }

    #[test]
    fn spline_rows_partition_unity() {
        let spec = BasisSpec::default_for(BasisKind::Spline);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let angles: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..360.0)).collect();
        let b = evaluate_basis(&spec, &angles).unwrap();
        for i in 0..b.nrows() {
            let row = b.values.row(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_columns_in_documented_order() {
        let spec = BasisSpec::fourier(2);
        let b = evaluate_basis(&spec, &[30.0]).unwrap();
        let t = 30f64.to_radians();
        let want = [1.0, t.cos(), (2.0 * t).cos(), t.sin(), (2.0 * t).sin()];
        for (j, w) in want.iter().enumerate() {
            assert!((b.values[(0, j)] - w).abs() < 1e-14);
        }
    }

    #[test]
    fn angles_outside_domain_rejected() {
        let spec = BasisSpec::constant();
        assert!(matches!(evaluate_basis(&spec, &[360.0]), Err(Error::Domain(_))));
        assert!(matches!(evaluate_basis(&spec, &[-0.1]), Err(Error::Domain(_))));
        assert!(matches!(evaluate_basis(&spec, &[f64::NAN]), Err(Error::Domain(_))));
        assert_eq!(evaluate_basis(&spec, &[]).unwrap().nrows(), 0);
    }

    #[test]
    fn fourier_penalty_diagonal() {
        let r = roughness_matrix(&BasisSpec::fourier(2)).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 16.0, 1.0, 16.0]));
        assert_eq!(r.values, want);
    }

    #[test]
    fn non_periodic_difference_matches_printed_form() {
        let mut spec = BasisSpec::spline(3);
        spec.spline_degree = 2;
        spec.periodic_penalty = false;
        let d = difference_matrix(3, false);
        assert_eq!(d, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]));
        let r = roughness_matrix(&spec).unwrap();
        assert_eq!(r.quadratic_form(&[2.5, 2.5, 2.5]), 0.0);
        assert!(r.quadratic_form(&[0.0, 1.0, 0.0]) > 0.0);
    }

    #[test]
    fn gp_correlation_endpoints() {
        let spec = BasisSpec::gaussian_process(50, 0.6);
        let c = node_correlation(&spec);
        assert_eq!(c[(7, 7)], 1.0);
        // nodes 0 and 25 are 180° apart
        let want = (-2.0 / 0.36f64).exp();
        assert!((c[(0, 25)] - want).abs() < 1e-15);
    }

    #[test]
    fn gp_penalty_inverts_jittered_correlation() {
        let spec = BasisSpec::gaussian_process(12, 1.0);
        let c = node_correlation(&spec) + DMatrix::identity(12, 12) * GP_JITTER;
        let r = roughness_matrix(&spec).unwrap();
        let prod = c * &r.values;
        assert!((prod - DMatrix::identity(12, 12)).amax() < 1e-6);
    }

    #[test]
    fn param_curve_examples() {
        assert_eq!(param_curve(&BasisSpec::constant(), &[2.5], &[123.0]).unwrap(), vec![2.5]);
        let gp = BasisSpec::gaussian_process(10, 0.6);
        let beta: Vec<f64> = (0..10).map(|j| j as f64 * 1.5 - 2.0).collect();
        let at_nodes = param_curve(&gp, &beta, &gp.nodes()).unwrap();
        assert_eq!(at_nodes, beta);
        let f = param_curve(&BasisSpec::fourier(1), &[0.0, 1.0, 0.0], &[0.0]).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15);
        assert!(matches!(
            param_curve(&BasisSpec::fourier(1), &[0.0, 1.0], &[0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn penalties_symmetric_and_psd() {
        for spec in all_specs() {
            let r = roughness_matrix(&spec).unwrap().values;
            assert!((&r - r.transpose()).amax() <= 1e-12, "{spec:?}");
            let eig = r.symmetric_eigen().eigenvalues;
            assert!(eig.min() >= -1e-10, "{:?} min eig {}", spec.kind, eig.min());
        }
    }

    #[test]
    fn periodic_spline_penalty_nullspace_is_constants() {
        let r = roughness_matrix(&BasisSpec::spline(20)).unwrap().values;
        let eig = r.clone().symmetric_eigen().eigenvalues;
        let zero = eig.iter().filter(|&&e| e.abs() < 1e-10).count();
        assert_eq!(zero, 1);
        let rq = RoughnessMatrix { values: r };
        assert!(rq.quadratic_form(&[4.2; 20]).abs() < 1e-12);
    }

    #[test]
    fn fourier_penalty_is_scaled_curvature_integral() {
        // ∫₀^{2π} (η″)² dθ = π Σ k⁴ (a_k² + b_k²); the penalty drops the π.
        let spec = BasisSpec::fourier(4);
        let r = roughness_matrix(&spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..spec.p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = 20_000;
            let h = 2.0 * std::f64::consts::PI / n as f64;
            let second = |t: f64| -> f64 {
                (1..=spec.fourier_order)
                    .map(|k| {
                        let kf = k as f64;
                        -kf * kf * (beta[k] * (kf * t).cos() + beta[spec.fourier_order + k] * (kf * t).sin())
                    })
                    .sum()
            };
            // periodic trapezoid rule is spectrally accurate here
            let integral: f64 = (0..n).map(|i| second(i as f64 * h).powi(2)).sum::<f64>() * h;
            let penalty = r.quadratic_form(&beta) * std::f64::consts::PI;
            assert!((integral - penalty).abs() <= 1e-6 * integral.abs());
        }
    }

    #[test]
    fn wrapped_spline_is_continuous_at_origin() {
        let spec = BasisSpec::spline(12);
        let beta: Vec<f64> = (0..12).map(|j| (j as f64).sin()).collect();
        let v = param_curve(&spec, &beta, &[0.0, 359.999_999]).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-6);
    }

    #[test]
    fn raw_spec_fills_kind_defaults() {
        let raw = RawBasisSpec {
            kind: BasisKind::Fourier,
            p: None,
            fourier_order: Some(3),
            correlation_length: None,
            spline_degree: None,
            periodic_penalty: None,
        };
        assert_eq!(BasisSpec::try_from(raw).unwrap(), BasisSpec::fourier(3));
        let raw = RawBasisSpec {
            kind: BasisKind::Constant,
            p: Some(3),
            fourier_order: None,
            correlation_length: None,
            spline_degree: None,
            periodic_penalty: None,
        };
        assert!(BasisSpec::try_from(raw).is_err());
    }

    proptest! {
        #[test]
        fn param_curve_is_linear(seed in 0u64..1000, which in 0usize..7) {
            let spec = &all_specs()[which];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b1: Vec<f64> = (0..spec.p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b2: Vec<f64> = (0..spec.p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
            let angles: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..360.0)).collect();
            let c1 = param_curve(spec, &b1, &angles).unwrap();
            let c2 = param_curve(spec, &b2, &angles).unwrap();
            let cs = param_curve(spec, &sum, &angles).unwrap();
            for i in 0..angles.len() {
                prop_assert!((cs[i] - c1[i] - c2[i]).abs() <= 1e-12);
            }
        }
    }
}
