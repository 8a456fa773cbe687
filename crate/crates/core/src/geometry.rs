//! Gauduchon metrics, measures and the two Laplacians.
//!
//! The sign and constant conventions are anchored once and for all by the
//! affine Laplacian `Lap f = 4 tr_g(partial dbar f) = g^{ij} d_i d_j f`; every
//! other contraction constant in the crate is derived from it.

use crate::chart::{Chart, Topology};
use crate::field::{
    ComplexField, MatrixField, ScalarField, SeamTwists, d2_matrix, d2_scalar, d_matrix, d_scalar,
};
use crate::forms::Form;
use crate::linalg::{Mat, pairwise_sum};
use serde::{Deserialize, Serialize};

pub const GAUDUCHON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GeometryError {
    #[error("metric is not positive definite at grid point {index} (min eig {min_eig:.3e})")]
    NotPositiveDefinite { index: usize, min_eig: f64 },
    #[error("field and metric live on different charts")]
    ChartMismatch,
    #[error("non-finite field values")]
    NonFinite,
    #[error("metric preset `{0}` is unknown (try `flat`, `conformal:sin`, `conformal:sech2`, `gauduchon:cross2d`)")]
    UnknownPreset(String),
    #[error("metric preset `{name}` requires dimension {need}, chart has {got}")]
    PresetDimension { name: String, need: usize, got: usize },
    #[error("gauduchon:cross2d requires equal axis lengths")]
    CrossNeedsSquare,
}

/// Riemannian metric samples with cached inverse and determinant, the
/// Gauduchon (1,1)-form they induce, and the parallel-volume-form constant.
///
/// All integrals use the measure `dmu = det(g) dx / c_nu`, which absorbs the
/// combinatorial constant of `omega_g^n / nu`; degrees and volumes are always
/// computed through mean-curvature quadrature so the common constant cancels
/// from every ratio.
#[derive(Clone)]
pub struct MetricField {
    chart: Chart,
    g: Vec<[[f64; 3]; 3]>,
    ginv: Vec<[[f64; 3]; 3]>,
    det: Vec<f64>,
    c_nu: f64,
    gauduchon_certified: bool,
}

fn sym_inverse(n: usize, g: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let mut inv = [[0.0f64; 3]; 3];
    match n {
        1 => {
            let d = g[0][0];
            inv[0][0] = 1.0 / d;
            (inv, d)
        }
        2 => {
            let d = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            inv[0][0] = g[1][1] / d;
            inv[1][1] = g[0][0] / d;
            inv[0][1] = -g[0][1] / d;
            inv[1][0] = -g[1][0] / d;
            (inv, d)
        }
        _ => {
            let d = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
                - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
                + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
            let c = |i: usize, j: usize| -> f64 {
                let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                g[i1][j1] * g[i2][j2] - g[i1][j2] * g[i2][j1]
            };
            for i in 0..3 {
                for j in 0..3 {
                    inv[i][j] = c(j, i) / d;
                }
            }
            (inv, d)
        }
    }
}

/// Positive definiteness by Sylvester's criterion (n <= 3).
fn sym_min_check(n: usize, g: &[[f64; 3]; 3]) -> Result<(), f64> {
    let m1 = g[0][0];
    if n == 1 {
        return if m1 > 0.0 { Ok(()) } else { Err(m1) };
    }
    let m2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if n == 2 {
        return if m1 > 0.0 && m2 > 0.0 { Ok(()) } else { Err(m1.min(m2)) };
    }
    let (_, m3) = sym_inverse(3, g);
    if m1 > 0.0 && m2 > 0.0 && m3 > 0.0 { Ok(()) } else { Err(m1.min(m2).min(m3)) }
}

impl MetricField {
    pub fn from_fn(
        chart: &Chart,
        c_nu: f64,
        f: impl Fn(&[f64; 3]) -> [[f64; 3]; 3],
    ) -> Result<Self, GeometryError> {
        let n = chart.dim();
        let mut g = Vec::with_capacity(chart.size());
        let mut ginv = Vec::with_capacity(chart.size());
        let mut det = Vec::with_capacity(chart.size());
        for (idx, m) in chart.iter().enumerate() {
            let mut gm = f(&chart.coords(&m));
            // symmetrize defensively
            for i in 0..n {
                for j in 0..i {
                    let s = 0.5 * (gm[i][j] + gm[j][i]);
                    gm[i][j] = s;
                    gm[j][i] = s;
                }
            }
            if let Err(min_eig) = sym_min_check(n, &gm) {
                return Err(GeometryError::NotPositiveDefinite { index: idx, min_eig });
            }
            let (inv, d) = sym_inverse(n, &gm);
            g.push(gm);
            ginv.push(inv);
            det.push(d);
        }
        let mut out = MetricField {
            chart: chart.clone(),
            g,
            ginv,
            det,
            c_nu,
            gauduchon_certified: false,
        };
        out.gauduchon_certified = out.chart.is_closed() && check_gauduchon(&out) < GAUDUCHON_TOL;
        Ok(out)
    }

    pub fn flat(chart: &Chart) -> Self {
        let n = chart.dim();
        let mut id = [[0.0; 3]; 3];
        for i in 0..n {
            id[i][i] = 1.0;
        }
        let mut m = MetricField::from_fn(chart, 1.0, |_| id).unwrap();
        m.gauduchon_certified = true;
        m
    }

    #[inline]
    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    #[inline]
    pub fn g_at(&self, idx: usize) -> &[[f64; 3]; 3] {
        &self.g[idx]
    }

    #[inline]
    pub fn ginv_at(&self, idx: usize) -> &[[f64; 3]; 3] {
        &self.ginv[idx]
    }

    #[inline]
    pub fn det_at(&self, idx: usize) -> f64 {
        self.det[idx]
    }

    #[inline]
    pub fn c_nu(&self) -> f64 {
        self.c_nu
    }

    pub fn is_gauduchon_certified(&self) -> bool {
        self.gauduchon_certified
    }

    /// Measure weight of one grid point: `det(g)/c_nu` times the quadrature
    /// cell (rectangle rule on periodic axes, trapezoid on Dirichlet axes).
    #[inline]
    pub fn measure_weight(&self, idx: usize, m: &[usize; 3]) -> f64 {
        self.det[idx] / self.c_nu * self.chart.quad_weight(m)
    }

    /// Largest eigenvalue bound of `g^{ij}` at a point (exact for n<=2,
    /// Gershgorin bound for n=3); used by the CFL step-size rule.
    pub fn ginv_max_eig(&self, idx: usize) -> f64 {
        let n = self.chart.dim();
        let a = &self.ginv[idx];
        match n {
            1 => a[0][0],
            2 => {
                let tr = a[0][0] + a[1][1];
                let dd = (a[0][0] - a[1][1]).powi(2) + 4.0 * a[0][1] * a[1][0];
                0.5 * (tr + dd.max(0.0).sqrt())
            }
            _ => (0..3)
                .map(|i| (0..3).map(|j| a[i][j].abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}

/// `integral f dmu` with a deterministic pairwise-tree reduction.
pub fn integrate(f: &ScalarField, g: &MetricField) -> Result<f64, GeometryError> {
    if f.data.len() != g.chart.size() {
        return Err(GeometryError::ChartMismatch);
    }
    if !f.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let vals: Vec<f64> = g
        .chart
        .iter()
        .enumerate()
        .map(|(i, m)| f.data[i] * g.measure_weight(i, &m))
        .collect();
    Ok(pairwise_sum(&vals))
}

pub fn integrate_complex(f: &ComplexField, g: &MetricField) -> Result<(f64, f64), GeometryError> {
    let re = ScalarField { data: f.data.iter().map(|z| z.re).collect() };
    let im = ScalarField { data: f.data.iter().map(|z| z.im).collect() };
    Ok((integrate(&re, g)?, integrate(&im, g)?))
}

/// Total volume `integral 1 dmu`.
pub fn volume(g: &MetricField) -> f64 {
    integrate(&ScalarField::constant(g.chart(), 1.0), g).expect("constant field is finite")
}

/// Affine Laplacian `Lap f = g^{ij} d_i d_j f` of a scalar field.
pub fn affine_laplacian(f: &ScalarField, g: &MetricField) -> Result<ScalarField, GeometryError> {
    let chart = g.chart();
    if f.data.len() != chart.size() {
        return Err(GeometryError::ChartMismatch);
    }
    if !f.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let n = chart.dim();
    let mut out = ScalarField::zeros(chart);
    // Pure second derivatives.
    for a in 0..n {
        let daa = d2_scalar(chart, f, a);
        for i in 0..out.data.len() {
            out.data[i] += g.ginv[i][a][a] * daa.data[i];
        }
    }
    // Mixed derivatives (symmetric pairs).
    for a in 0..n {
        let da = d_scalar(chart, f, a);
        for b in (a + 1)..n {
            let dab = d_scalar(chart, &da, b);
            for i in 0..out.data.len() {
                out.data[i] += 2.0 * g.ginv[i][a][b] * dab.data[i];
            }
        }
    }
    Ok(out)
}

/// Affine Laplacian of a matrix field (same contraction, seam-aware stencils).
pub fn affine_laplacian_matrix(
    f: &MatrixField,
    g: &MetricField,
    twists: &SeamTwists,
) -> Result<MatrixField, GeometryError> {
    let chart = g.chart();
    if f.data.len() != chart.size() {
        return Err(GeometryError::ChartMismatch);
    }
    if !f.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let n = chart.dim();
    let mut out = MatrixField::new(chart, f.r, f.kind);
    for a in 0..n {
        let daa = d2_matrix(chart, twists, f, a);
        for i in 0..out.data.len() {
            out.data[i] = out.data[i] + daa.data[i].scale(g.ginv[i][a][a]);
        }
    }
    for a in 0..n {
        let da = d_matrix(chart, twists, f, a);
        for b in (a + 1)..n {
            let dab = d_matrix(chart, twists, &da, b);
            for i in 0..out.data.len() {
                out.data[i] = out.data[i] + dab.data[i].scale(2.0 * g.ginv[i][a][b]);
            }
        }
    }
    Ok(out)
}

/// Drift vector of the Beltrami Laplacian:
/// `V_l = d_i g^{il} + g^{kl} Gamma^i_{ik}` with `Gamma^i_{ik} = (1/2) d_k log det g`.
pub fn beltrami_drift(g: &MetricField) -> Result<Vec<ScalarField>, GeometryError> {
    let chart = g.chart();
    let n = chart.dim();
    if g.det.iter().any(|&d| !(d > 0.0)) {
        return Err(GeometryError::NotPositiveDefinite { index: 0, min_eig: 0.0 });
    }
    let logdet = ScalarField { data: g.det.iter().map(|d| d.ln()).collect() };
    let gamma: Vec<ScalarField> = (0..n)
        .map(|k| {
            let d = d_scalar(chart, &logdet, k);
            ScalarField { data: d.data.iter().map(|x| 0.5 * x).collect() }
        })
        .collect();
    let mut v = Vec::with_capacity(n);
    for l in 0..n {
        let mut vl = ScalarField::zeros(chart);
        for i in 0..n {
            let comp = ScalarField { data: g.ginv.iter().map(|gi| gi[i][l]).collect() };
            let d = d_scalar(chart, &comp, i);
            for (o, x) in vl.data.iter_mut().zip(d.data.iter()) {
                *o += x;
            }
        }
        for k in 0..n {
            for (idx, o) in vl.data.iter_mut().enumerate() {
                *o += g.ginv[idx][k][l] * gamma[k].data[idx];
            }
        }
        v.push(vl);
    }
    Ok(v)
}

/// Beltrami Laplacian `Delta f = Lap f - <V, grad f>_g` (the drift identity
/// fixes the sign convention; for constant metrics the two Laplacians agree).
pub fn beltrami_laplacian(f: &ScalarField, g: &MetricField) -> Result<ScalarField, GeometryError> {
    let chart = g.chart();
    let mut out = affine_laplacian(f, g)?;
    let v = beltrami_drift(g)?;
    for (l, vl) in v.iter().enumerate() {
        let dl = d_scalar(chart, f, l);
        for i in 0..out.data.len() {
            out.data[i] -= vl.data[i] * dl.data[i];
        }
    }
    Ok(out)
}

/// Max-norm of the discretized `partial dbar (omega_g^{n-1})` coefficients;
/// zero identifies an affine Gauduchon metric. On Dirichlet charts the
/// maximum is taken over points at least two layers inside the boundary.
pub fn check_gauduchon(g: &MetricField) -> f64 {
    let chart = g.chart();
    let n = chart.dim();
    if n == 1 {
        return 0.0; // omega^0 is the constant 1
    }
    let mut omega = Form::zero(1, 1);
    for i in 0..n {
        for j in 0..n {
            let coef = ScalarField { data: g.g.iter().map(|gm| gm[i][j]).collect() };
            omega.comps.insert((1 << i, 1 << j), coef);
        }
    }
    let mut pow = omega.clone();
    for _ in 1..(n - 1) {
        pow = pow.wedge(&omega, chart);
    }
    let dd = pow.dbar(chart).partial(chart);
    let interior: Vec<usize> = chart
        .iter()
        .enumerate()
        .filter(|(_, m)| {
            (0..n).all(|a| {
                chart.topology(a) == Topology::Periodic
                    || (m[a] >= 2 && m[a] + 2 < chart.npts(a))
            })
        })
        .map(|(i, _)| i)
        .collect();
    dd.max_abs_at(interior.iter().copied())
}

/// Named metric presets addressable from scenario configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum MetricPreset {
    /// Euclidean metric, any dimension.
    Flat,
    /// `g = sech^2(x) dx^2` on a 1-D chart; the finite-volume line model.
    ConformalSech2,
    /// `g = exp(amp sin(2 pi x^1 / L_1)) delta`, any dimension.
    ConformalSin { amp: f64 },
    /// Exactly Gauduchon non-conformal 2-D family:
    /// `g_11 = g_22 = 1 - amp cos(k x^1) cos(k x^2)`, `g_12 = amp sin(k x^1) sin(k x^2)`.
    GauduchonCross2d { amp: f64 },
    /// Continuum-Gauduchon anisotropic 2-D family with mixed wavenumbers
    /// `k_1 = 2 pi/L`, `k_2 = 4 pi/L`:
    /// `g_11 = 1 + amp sin(k_1 x^1) sin(k_2 x^2)`,
    /// `g_22 = 1 - 4 amp sin(k_1 x^1) sin(k_2 x^2)`.
    /// Its discrete Gauduchon residual is O(h^2), so it exercises genuine
    /// second-order decay of the integral law.
    GauduchonAniso2d { amp: f64 },
}

impl MetricPreset {
    pub fn parse(name: &str, amp: Option<f64>) -> Result<Self, GeometryError> {
        match name {
            "flat" => Ok(MetricPreset::Flat),
            "conformal:sech2" => Ok(MetricPreset::ConformalSech2),
            "conformal:sin" => Ok(MetricPreset::ConformalSin { amp: amp.unwrap_or(0.5) }),
            "gauduchon:cross2d" => Ok(MetricPreset::GauduchonCross2d { amp: amp.unwrap_or(0.3) }),
            "gauduchon:aniso2d" => Ok(MetricPreset::GauduchonAniso2d { amp: amp.unwrap_or(0.15) }),
            other => Err(GeometryError::UnknownPreset(other.to_string())),
        }
    }

    pub fn build(&self, chart: &Chart) -> Result<MetricField, GeometryError> {
        self.build_with(chart, 1.0)
    }

    /// Build with an explicit parallel-volume constant `c_nu`.
    pub fn build_with(&self, chart: &Chart, c_nu: f64) -> Result<MetricField, GeometryError> {
        let n = chart.dim();
        match *self {
            MetricPreset::Flat => {
                let mut id = [[0.0; 3]; 3];
                for i in 0..n {
                    id[i][i] = 1.0;
                }
                MetricField::from_fn(chart, c_nu, move |_| id)
            }
            MetricPreset::ConformalSech2 => {
                if n != 1 {
                    return Err(GeometryError::PresetDimension {
                        name: "conformal:sech2".into(),
                        need: 1,
                        got: n,
                    });
                }
                MetricField::from_fn(chart, c_nu, |x| {
                    let s = 1.0 / x[0].cosh();
                    [[s * s, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
                })
            }
            MetricPreset::ConformalSin { amp } => {
                let l0 = chart.len_axis(0);
                MetricField::from_fn(chart, c_nu, move |x| {
                    let f = (amp * (2.0 * std::f64::consts::PI * x[0] / l0).sin()).exp();
                    let mut g = [[0.0; 3]; 3];
                    for i in 0..n {
                        g[i][i] = f;
                    }
                    g
                })
            }
            MetricPreset::GauduchonCross2d { amp } => {
                if n != 2 {
                    return Err(GeometryError::PresetDimension {
                        name: "gauduchon:cross2d".into(),
                        need: 2,
                        got: n,
                    });
                }
                if (chart.len_axis(0) - chart.len_axis(1)).abs() > 1e-12 {
                    return Err(GeometryError::CrossNeedsSquare);
                }
                let k = 2.0 * std::f64::consts::PI / chart.len_axis(0);
                MetricField::from_fn(chart, c_nu, move |x| {
                    let c = amp * (k * x[0]).cos() * (k * x[1]).cos();
                    let s = amp * (k * x[0]).sin() * (k * x[1]).sin();
                    [[1.0 - c, s, 0.0], [s, 1.0 - c, 0.0], [0.0, 0.0, 0.0]]
                })
            }
            MetricPreset::GauduchonAniso2d { amp } => {
                if n != 2 {
                    return Err(GeometryError::PresetDimension {
                        name: "gauduchon:aniso2d".into(),
                        need: 2,
                        got: n,
                    });
                }
                let k1 = 2.0 * std::f64::consts::PI / chart.len_axis(0);
                let k2 = 4.0 * std::f64::consts::PI / chart.len_axis(1);
                MetricField::from_fn(chart, c_nu, move |x| {
                    let s = amp * (k1 * x[0]).sin() * (k2 * x[1]).sin();
                    [[1.0 + s, 0.0, 0.0], [0.0, 1.0 - 4.0 * s, 0.0], [0.0, 0.0, 0.0]]
                })
            }
        }
    }
}

/// Laplacian of matrix fields restricted to scalar multiples of the identity
/// agrees with the scalar Laplacian; convenience for r=1 reductions.
pub fn scalar_as_matrix(chart: &Chart, f: &ScalarField) -> MatrixField {
    let mut out = MatrixField::new(chart, 1, crate::field::TwistKind::AdjointLike);
    for (i, v) in f.data.iter().enumerate() {
        out.data[i] = Mat::scalar(1, crate::linalg::C64::new(*v, 0.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_eigenfunction_on_circle() {
        let chart = Chart::circle(128);
        let g = MetricField::flat(&chart);
        let f = ScalarField::from_fn(&chart, |x| (2.0 * PI * x[0]).sin());
        let lap = affine_laplacian(&f, &g).unwrap();
        let mut err = 0.0f64;
        for (i, m) in chart.iter().enumerate() {
            let x = chart.coords(&m)[0];
            err = err.max((lap.data[i] + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs());
        }
        assert!(err < 0.01 * 4.0 * PI * PI, "err = {err}");
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let chart = Chart::torus2(16);
        let g = MetricField::flat(&chart);
        let f = ScalarField::constant(&chart, 3.7);
        let lap = affine_laplacian(&f, &g).unwrap();
        assert_eq!(lap.max_abs(), 0.0);
    }

    #[test]
    fn laplacian_rejects_nan() {
        let chart = Chart::circle(8);
        let g = MetricField::flat(&chart);
        let mut f = ScalarField::constant(&chart, 0.0);
        f.data[3] = f64::NAN;
        assert!(matches!(affine_laplacian(&f, &g), Err(GeometryError::NonFinite)));
    }

    #[test]
    fn sech_metric_log_cosh_certificate() {
        // Lap(log cosh x) = cosh^2 sech^2 = 1 on the sech-metric line. The
        // one-sided boundary stencil multiplies its O(h^2) error by cosh^2 at
        // the domain edge, so the certificate needs h ~ 0.0125 for 1e-3.
        let chart = Chart::interval(-4.0, 4.0, 641);
        let g = MetricPreset::ConformalSech2.build(&chart).unwrap();
        let f = ScalarField::from_fn(&chart, |x| x[0].cosh().ln());
        let lap = affine_laplacian(&f, &g).unwrap();
        for v in &lap.data {
            assert!((v - 1.0).abs() < 1e-3, "Lap log cosh = {v}");
        }
    }

    #[test]
    fn beltrami_flat_equals_affine() {
        let chart = Chart::torus2(24);
        let g = MetricField::flat(&chart);
        let v = beltrami_drift(&g).unwrap();
        for vl in &v {
            assert_eq!(vl.max_abs(), 0.0);
        }
        let f = ScalarField::from_fn(&chart, |x| (2.0 * PI * x[0]).cos() + x[1].sin());
        let a = affine_laplacian(&f, &g).unwrap();
        let b = beltrami_laplacian(&f, &g).unwrap();
        for i in 0..a.data.len() {
            assert!((a.data[i] - b.data[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn beltrami_drift_sech_symbolic() {
        // g = sech^2 x: g^11 = cosh^2 x, det g = sech^2 x.
        // V_1 = d(cosh^2)/dx + cosh^2 * (1/2) d(log sech^2)/dx
        //     = 2 cosh sinh - cosh^2 tanh = cosh sinh.
        let chart = Chart::interval(-2.0, 2.0, 201);
        let g = MetricPreset::ConformalSech2.build(&chart).unwrap();
        let v = beltrami_drift(&g).unwrap();
        for (i, m) in chart.iter().enumerate() {
            let x = chart.coords(&m)[0];
            let expect = x.cosh() * x.sinh();
            assert!((v[0].data[i] - expect).abs() < 2e-3 * (1.0 + expect.abs()), "x={x}");
        }
    }

    #[test]
    fn beltrami_identity_random_metric() {
        // Lap f - Delta f - <V, grad f>_g = 0 by construction; verify the
        // three routines are mutually consistent on a curved metric.
        let chart = Chart::circle(96);
        let g = MetricField::from_fn(&chart, 1.0, |x| {
            let v = 1.0 + 0.3 * (2.0 * PI * x[0]).sin();
            [[v, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        })
        .unwrap();
        let f = ScalarField::from_fn(&chart, |x| (4.0 * PI * x[0]).cos());
        let lap = affine_laplacian(&f, &g).unwrap();
        let bel = beltrami_laplacian(&f, &g).unwrap();
        let v = beltrami_drift(&g).unwrap();
        let df = d_scalar(&chart, &f, 0);
        for i in 0..lap.data.len() {
            let drift = v[0].data[i] * df.data[i];
            assert!((lap.data[i] - bel.data[i] - drift).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_flat_torus() {
        let chart = Chart::torus2(32);
        let g = MetricField::flat(&chart);
        let one = ScalarField::constant(&chart, 1.0);
        assert!((integrate(&one, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_sech_line() {
        // integral sech^2 dx over [-20, 20] = 2 tanh(20) ~ 2.
        let chart = Chart::interval(-20.0, 20.0, 4001);
        let g = MetricPreset::ConformalSech2.build(&chart).unwrap();
        let one = ScalarField::constant(&chart, 1.0);
        assert!((integrate(&one, &g).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn integrate_is_linear() {
        let chart = Chart::circle(64);
        let g = MetricPreset::ConformalSin { amp: 0.4 }.build(&chart).unwrap();
        let f1 = ScalarField::from_fn(&chart, |x| (2.0 * PI * x[0]).sin());
        let f2 = ScalarField::from_fn(&chart, |x| (6.0 * PI * x[0]).cos() + 1.0);
        let (a, b) = (2.25, -0.75);
        let comb = ScalarField {
            data: f1.data.iter().zip(f2.data.iter()).map(|(x, y)| a * x + b * y).collect(),
        };
        let lhs = integrate(&comb, &g).unwrap();
        let rhs = a * integrate(&f1, &g).unwrap() + b * integrate(&f2, &g).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn gauduchon_residuals() {
        // n=1: always zero.
        let c1 = Chart::circle(32);
        let g1 = MetricPreset::ConformalSin { amp: 0.8 }.build(&c1).unwrap();
        assert_eq!(check_gauduchon(&g1), 0.0);
        assert!(g1.is_gauduchon_certified());

        // constant coefficients: zero up to roundoff.
        let c2 = Chart::torus2(16);
        let g2 = MetricField::flat(&c2);
        assert!(check_gauduchon(&g2) < 1e-14);

        // cross2d preset: exactly Gauduchon despite being non-flat.
        let g3 = MetricPreset::GauduchonCross2d { amp: 0.3 }.build(&c2).unwrap();
        assert!(check_gauduchon(&g3) < 1e-10, "residual = {}", check_gauduchon(&g3));
        assert!(g3.is_gauduchon_certified());
    }

    #[test]
    fn gauduchon_residual_conformal_2d_symbolic() {
        // g = e^{sin(2 pi x1)} delta on the 2-torus: the single coefficient of
        // partial dbar omega is -(1/4)(d11 + d22) e^f = -(1/4) d11 e^{sin}.
        let tp = 2.0 * PI;
        let symbolic = |x: f64| -> f64 {
            let s = (tp * x).sin();
            let c = (tp * x).cos();
            -0.25 * tp * tp * s.exp() * (c * c - s)
        };
        let mut prev_err = f64::INFINITY;
        for npts in [32usize, 64] {
            let chart = Chart::torus2(npts);
            let g = MetricPreset::ConformalSin { amp: 1.0 }.build(&chart).unwrap();
            let residual = check_gauduchon(&g);
            let exact_max = (0..npts)
                .map(|i| symbolic(i as f64 / npts as f64).abs())
                .fold(0.0, f64::max);
            let err = (residual - exact_max).abs();
            assert!(err < prev_err, "no refinement: {err} !< {prev_err}");
            assert!(err < 0.1 * exact_max);
            prev_err = err;
        }
    }

    #[test]
    fn gauduchon_integral_law() {
        // closed Gauduchon chart: |integral Lap f dmu| = O(h^2).
        for (npts, bound) in [(24usize, 0.02), (48, 0.005)] {
            let chart = Chart::new(
                &[0.0, 0.0],
                &[1.0, 1.0],
                &[npts, npts],
                &[Topology::Periodic, Topology::Periodic],
            )
            .unwrap();
            let g = MetricPreset::GauduchonCross2d { amp: 0.3 }.build(&chart).unwrap();
            let f = ScalarField::from_fn(&chart, |x| {
                (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.5 * (2.0 * PI * x[1]).sin()
            });
            let lap = affine_laplacian(&f, &g).unwrap();
            let integral = integrate(&lap, &g).unwrap();
            assert!(integral.abs() < bound, "N={npts}: {integral}");
        }
    }

    #[test]
    fn integration_by_parts_dirichlet() {
        // For phi with constant boundary value a:
        // integral |d phi|^2 dmu = (1/2) integral (a - phi) Lap phi dmu,
        // with |d phi|^2 = (1/2) g^{ij} d_i phi d_j phi. O(h^2) defect.
        let defect = |npts: usize| -> f64 {
            let chart = Chart::interval(0.0, 1.0, npts);
            let g = MetricField::flat(&chart);
            let a = 0.25;
            let phi = ScalarField::from_fn(&chart, |x| a + (PI * x[0]).sin().powi(2));
            let dphi = d_scalar(&chart, &phi, 0);
            let grad_sq = ScalarField { data: dphi.data.iter().map(|d| 0.5 * d * d).collect() };
            let lhs = integrate(&grad_sq, &g).unwrap();
            let lap = affine_laplacian(&phi, &g).unwrap();
            let integrand = ScalarField {
                data: phi.data.iter().zip(lap.data.iter()).map(|(p, l)| (a - p) * l).collect(),
            };
            (lhs - 0.5 * integrate(&integrand, &g).unwrap()).abs()
        };
        let (e1, e2) = (defect(161), defect(321));
        assert!(e1 < 5e-3, "defect = {e1}");
        assert!(e1 / e2 > 3.3, "no O(h^2) decay: {e1} vs {e2}");
    }

    #[test]
    fn laplacian_order_of_accuracy() {
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&n| {
                let chart = Chart::circle(n);
                let g = MetricField::flat(&chart);
                let f = ScalarField::from_fn(&chart, |x| (2.0 * PI * x[0]).sin());
                let lap = affine_laplacian(&f, &g).unwrap();
                chart
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let x = chart.coords(&m)[0];
                        (lap.data[i] + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] / errs[1] >= 3.5, "ratio = {}", errs[0] / errs[1]);
    }

    #[test]
    fn metric_rejects_indefinite() {
        let chart = Chart::torus2(8);
        let r = MetricField::from_fn(&chart, 1.0, |_| {
            [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 0.0]]
        });
        assert!(matches!(r, Err(GeometryError::NotPositiveDefinite { .. })));
    }
}
