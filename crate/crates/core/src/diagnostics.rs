//! Scalar monitors and integral identities: Donaldson distance, the
//! endomorphism logarithm, spectral kernels, the key integral identity, the
//! I(t) functional and the local C1 monitor, plus the per-sample diagnostics
//! row and its CSV/JSON serialization.

use crate::bundle::FlatHiggsBundle;
use crate::chart::Chart;
use crate::curvature::{
    CurvatureError, DPrime, connection_form, dprime, dprime_norm_sq_at, inverses,
    one_form_norm_sq_at, phi_field,
};
use crate::field::{EndoOneForm, MatrixField, ScalarField, TwistKind, d_matrix};
use crate::geometry::{GeometryError, MetricField, integrate};
use crate::linalg::{LinalgError, Mat, inner_h};
use serde::Serialize;

#[derive(Debug, Clone, thiserror::Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error("Dirichlet key identity requires H = H0 on the boundary (defect {0:.3e})")]
    BoundaryMismatch(f64),
}

/// Donaldson distance `sigma(H,K) = tr(H^{-1}K) + tr(K^{-1}H) - 2r`,
/// pointwise, with its sup and dmu-integral.
pub struct Sigma {
    pub field: ScalarField,
    pub sup: f64,
    pub integral: f64,
}

pub fn donaldson_distance(
    h: &MatrixField,
    k: &MatrixField,
    g: &MetricField,
) -> Result<Sigma, DiagnosticsError> {
    let r = h.r as f64;
    let mut field = ScalarField::zeros(g.chart());
    let mut sup = 0.0f64;
    for (i, (hm, km)) in h.data.iter().zip(k.data.iter()).enumerate() {
        let v = (hm.inverse()? * *km).trace().re + (km.inverse()? * *hm).trace().re - 2.0 * r;
        field.data[i] = v;
        sup = sup.max(v);
    }
    let integral = integrate(&field, g)?;
    Ok(Sigma { field, sup, integral })
}

/// `sigma` between two single matrices.
pub fn sigma_pointwise(h: &Mat, k: &Mat) -> Result<f64, LinalgError> {
    let r = h.rank() as f64;
    Ok((h.inverse()? * *k).trace().re + (k.inverse()? * *h).trace().re - 2.0 * r)
}

/// Whitened spectral frame of an `H0`-Hermitian endomorphism at one point:
/// `W = H0^{1/2}`, `W s W^{-1} = Q diag(evals) Q^dag`.
pub struct SpectralFrame {
    pub w: Mat,
    pub winv: Mat,
    pub q: Mat,
    pub evals: [f64; 4],
}

impl SpectralFrame {
    pub fn new(h0: &Mat, s: &Mat) -> Result<Self, LinalgError> {
        let w = h0.sqrt_pd()?;
        let winv = w.inverse()?;
        let hat = (w * *s * winv).hermitize();
        let (evals, q) = hat.eigh()?;
        Ok(SpectralFrame { w, winv, q, evals })
    }

    /// Apply a two-argument spectral kernel to an endomorphism:
    /// in the `H0`-orthonormal eigenbasis of `s`, `out_ab = k(l_a, l_b) eta_ab`.
    pub fn transform(&self, eta: &Mat, kernel: impl Fn(f64, f64) -> f64) -> Mat {
        let r = eta.rank();
        let hat = self.w * *eta * self.winv;
        let mut coords = self.q.adjoint() * hat * self.q;
        for a in 0..r {
            for b in 0..r {
                coords[(a, b)] *= kernel(self.evals[a], self.evals[b]);
            }
        }
        self.winv * (self.q * coords * self.q.adjoint()) * self.w
    }
}

/// The paper's kernel `Psi(x,y) = (e^{y-x}-1)/(y-x)`, `Psi(x,x) = 1`.
pub fn psi(x: f64, y: f64) -> f64 {
    let d = y - x;
    if d.abs() < 1e-9 {
        // 4th-order series around the diagonal
        1.0 + d * (0.5 + d * (1.0 / 6.0 + d / 24.0))
    } else {
        (d.exp() - 1.0) / d
    }
}

/// Difference-quotient kernel of a scalar function:
/// `dP(x,y) = (P(x)-P(y))/(x-y)`, `dP(x,x) = P'(x)` (0 a.e. for steps).
pub fn diff_quotient(p: impl Fn(f64) -> f64, x: f64, y: f64) -> f64 {
    if (x - y).abs() < 1e-12 { 0.0 } else { (p(x) - p(y)) / (x - y) }
}

/// `s = log(H0^{-1} H)` fieldwise, `H0`-Hermitian with `e^s = H0^{-1} H`.
pub fn endo_log(
    h0: &MatrixField,
    h: &MatrixField,
    chart: &Chart,
) -> Result<MatrixField, DiagnosticsError> {
    let mut out = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
    for (i, (m0, m)) in h0.data.iter().zip(h.data.iter()).enumerate() {
        let w = m0.sqrt_pd()?;
        let winv = w.inverse()?;
        let inner = (winv * *m * winv).hermitize();
        out.data[i] = winv * inner.log_pd()? * w;
    }
    Ok(out)
}

/// Pointwise `H0`-norm of an `H0`-Hermitian endomorphism field, with sup and
/// L2(dmu) aggregates.
pub fn endo_norms(
    s: &MatrixField,
    h0: &MatrixField,
    h0_inv: &[Mat],
    g: &MetricField,
) -> (ScalarField, f64, f64) {
    let mut field = ScalarField::zeros(g.chart());
    let mut sup = 0.0f64;
    for (i, m) in s.data.iter().enumerate() {
        let v = crate::linalg::norm_sqr_h(m, &h0.data[i], &h0_inv[i]).sqrt();
        field.data[i] = v;
        sup = sup.max(v);
    }
    let sq = ScalarField { data: field.data.iter().map(|v| v * v).collect() };
    let l2 = integrate(&sq, g).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN);
    (field, sup, l2)
}

/// `integral < Psi(s)(D''s), D''s >_{H0} dmu`, the quadratic middle term of
/// the key identity. The kernel is applied as `(e^{l_a - l_b}-1)/(l_a - l_b)`
/// on the `(a,b)` component; the orientation is pinned by the closed-form
/// constant-field case in the tests below.
pub fn psi_quadratic_term(
    s: &MatrixField,
    h0: &MatrixField,
    h0_inv: &[Mat],
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<f64, DiagnosticsError> {
    let chart = g.chart();
    let dp = dprime(s, bundle, chart);
    let n = chart.dim();
    let mut integrand = ScalarField::zeros(chart);
    for idx in 0..chart.size() {
        let frame = SpectralFrame::new(&h0.data[idx], &s.data[idx])?;
        let kernel = |a: f64, b: f64| psi(b, a);
        let ginv = g.ginv_at(idx);
        let mut acc = 0.0;
        for part in [&dp.dbar, &dp.higgs] {
            for i in 0..n {
                let ti = frame.transform(&part.comps[i].data[idx], kernel);
                for j in 0..n {
                    let w = ginv[i][j];
                    if w == 0.0 {
                        continue;
                    }
                    acc += w
                        * inner_h(&ti, &part.comps[j].data[idx], &h0.data[idx], &h0_inv[idx]).re;
                }
            }
        }
        integrand.data[idx] = acc;
    }
    Ok(integrate(&integrand, g)?)
}

/// Residual of the key integral identity
/// `int tr(Phi(H0)s) + <Psi(s)(D''s), D''s>_{H0} dmu - int tr(Phi(H)s) dmu`;
/// the magnitude is pure discretization defect.
pub fn key_identity_residual(
    h0: &MatrixField,
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<f64, DiagnosticsError> {
    let chart = g.chart();
    if chart.has_dirichlet() {
        let mut defect = 0.0f64;
        for (i, m) in chart.iter().enumerate() {
            if chart.is_boundary(&m) {
                defect = defect.max((h.data[i] - h0.data[i]).norm());
            }
        }
        if defect > 1e-10 * h0.max_abs().max(1.0) {
            return Err(DiagnosticsError::BoundaryMismatch(defect));
        }
    }
    let h0_inv = inverses(h0)?;
    let s = endo_log(h0, h, chart)?;
    let phi0 = phi_field(h0, bundle, g, lambda)?;
    let phi1 = phi_field(h, bundle, g, lambda)?;
    let tr0 = ScalarField {
        data: (0..chart.size()).map(|i| (phi0.data[i] * s.data[i]).trace().re).collect(),
    };
    let tr1 = ScalarField {
        data: (0..chart.size()).map(|i| (phi1.data[i] * s.data[i]).trace().re).collect(),
    };
    let lhs1 = integrate(&tr0, g)?;
    let rhs = integrate(&tr1, g)?;
    let middle = psi_quadratic_term(&s, h0, &h0_inv, bundle, g)?;
    Ok(lhs1 + middle - rhs)
}

/// `I = int ( |D_H Phi|'^2_H + 2 |[Phi, theta]|^2_H ) dmu` where `D_H` is the
/// extended Hermitian connection (its Higgs directions enter through the
/// commutator term).
pub fn i_functional(
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<f64, DiagnosticsError> {
    let phi = phi_field(h, bundle, g, lambda)?;
    i_functional_of_phi(&phi, h, bundle, g)
}

/// `i_functional` when `Phi` is already available.
pub fn i_functional_of_phi(
    phi: &MatrixField,
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<f64, DiagnosticsError> {
    let chart = g.chart();
    let n = chart.dim();
    let hinv = inverses(h)?;
    let a = connection_form(h, &hinv, g, bundle);
    // (1,0) part (1/2)(d_i Phi + [A_i, Phi]) and (0,1) part (1/2) d_j Phi
    let mut d10 = EndoOneForm::zeros(chart, h.r);
    let mut d01 = EndoOneForm::zeros(chart, h.r);
    for axis in 0..n {
        let d = d_matrix(chart, bundle.twists(), phi, axis);
        for idx in 0..chart.size() {
            let comm = a.comps[axis].data[idx].commutator(&phi.data[idx]);
            d10.comps[axis].data[idx] = (d.data[idx] + comm).scale(0.5);
            d01.comps[axis].data[idx] = d.data[idx].scale(0.5);
        }
    }
    let theta = bundle.theta();
    let mut bracket = EndoOneForm::zeros(chart, h.r);
    for axis in 0..n {
        if theta[axis].norm() > 0.0 {
            for idx in 0..chart.size() {
                bracket.comps[axis].data[idx] = phi.data[idx].commutator(&theta[axis]);
            }
        }
    }
    let mut integrand = ScalarField::zeros(chart);
    for idx in 0..chart.size() {
        let hm = &h.data[idx];
        let hi = &hinv[idx];
        integrand.data[idx] = one_form_norm_sq_at(&d10, idx, g, hm, hi)
            + one_form_norm_sq_at(&d01, idx, g, hm, hi)
            + 2.0 * one_form_norm_sq_at(&bracket, idx, g, hm, hi);
    }
    Ok(integrate(&integrand, g)?)
}

/// Local C1 monitor `sup_Omega |h^{-1} partial_{H0} h|_{H0}` with
/// `h = H0^{-1} H` and `partial_{H0} h = (1/2)(d_i h + [A0_i, h])`.
pub fn c1_monitor(
    h0: &MatrixField,
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    probe: Option<&[usize]>,
) -> Result<f64, DiagnosticsError> {
    let chart = g.chart();
    let n = chart.dim();
    let h0_inv = inverses(h0)?;
    let a0 = connection_form(h0, &h0_inv, g, bundle);
    let mut hfield = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
    for idx in 0..chart.size() {
        hfield.data[idx] = h0_inv[idx] * h.data[idx];
    }
    let mut tcal = EndoOneForm::zeros(chart, h.r);
    for axis in 0..n {
        let d = d_matrix(chart, bundle.twists(), &hfield, axis);
        for idx in 0..chart.size() {
            let pd = (d.data[idx] + a0.comps[axis].data[idx].commutator(&hfield.data[idx]))
                .scale(0.5);
            tcal.comps[axis].data[idx] = hfield.data[idx].inverse()? * pd;
        }
    }
    let mut sup = 0.0f64;
    let all: Vec<usize>;
    let indices: &[usize] = match probe {
        Some(p) => p,
        None => {
            all = (0..chart.size()).collect();
            &all
        }
    };
    for &idx in indices {
        let v = one_form_norm_sq_at(&tcal, idx, g, &h0.data[idx], &h0_inv[idx]);
        sup = sup.max(v.max(0.0).sqrt());
    }
    Ok(sup)
}

/// `|D'' s|` L2 norm over the chart.
pub fn dprime_l2(
    s: &MatrixField,
    h0: &MatrixField,
    h0_inv: &[Mat],
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<f64, DiagnosticsError> {
    let dp: DPrime = dprime(s, bundle, g.chart());
    let mut integrand = ScalarField::zeros(g.chart());
    for idx in 0..g.chart().size() {
        integrand.data[idx] = dprime_norm_sq_at(&dp, idx, g, &h0.data[idx], &h0_inv[idx]);
    }
    Ok(integrate(&integrand, g)?.max(0.0).sqrt())
}

/// One monitored sample of a flow run. Column order is the fixed CSV schema.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub sup_phi: f64,
    pub l2_phi: f64,
    pub int_tr_phi: f64,
    pub sigma_h0: f64,
    pub l2_s: f64,
    pub sup_s: f64,
    pub l2_dprime_s: f64,
    pub key_identity_residual: f64,
    pub i_functional: f64,
    pub sup_t: f64,
    pub min_eig_h: f64,
}

pub const CSV_HEADER: &str = "t,sup_phi,l2_phi,int_tr_phi,sigma_H0,l2_s,sup_s,l2_dprime_s,key_identity_residual,i_functional,sup_T,min_eig_H";

impl DiagnosticsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.sup_phi,
            self.l2_phi,
            self.int_tr_phi,
            self.sigma_h0,
            self.l2_s,
            self.sup_s,
            self.l2_dprime_s,
            self.key_identity_residual,
            self.i_functional,
            self.sup_t,
            self.min_eig_h
        )
    }

    pub fn all_finite(&self) -> bool {
        [
            self.t,
            self.sup_phi,
            self.l2_phi,
            self.int_tr_phi,
            self.sigma_h0,
            self.l2_s,
            self.sup_s,
            self.l2_dprime_s,
            self.key_identity_residual,
            self.i_functional,
            self.sup_t,
            self.min_eig_h,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Gauge-equivalence defects: with `sigma = h^{1/2}`, `h = H0^{-1} H`, the
/// conjugated curvature-plus-bracket tensor measured in `H0` must equal the
/// original measured in `H`, pointwise; ditto for `D_H Phi`. Returns the max
/// relative defects (curvature-norm transport, derivative-norm transport).
pub fn gauge_equivalence_defect(
    h0: &MatrixField,
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<(f64, f64), DiagnosticsError> {
    let chart = g.chart();
    let n = chart.dim();
    let hinv = inverses(h)?;
    let h0_inv = inverses(h0)?;
    let a = connection_form(h, &hinv, g, bundle);
    let theta = bundle.theta();

    // componentwise F_{ij} = -1/4 d_j A_i + [theta_i, (theta_j)^{*H}]
    let mut f11: Vec<Vec<MatrixField>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let da = d_matrix(chart, bundle.twists(), &a.comps[i], j);
            let mut comp = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
            for idx in 0..chart.size() {
                let mut v = da.data[idx].scale(-0.25);
                if theta[i].norm() > 0.0 || theta[j].norm() > 0.0 {
                    let tj_star = hinv[idx] * theta[j].adjoint() * h.data[idx];
                    v = v + theta[i] * tj_star - tj_star * theta[i];
                }
                comp.data[idx] = v;
            }
            row.push(comp);
        }
        f11.push(row);
    }

    // sigma = h^{1/2} pointwise, h = H0^{-1} H (H0-Hermitian PD)
    let mut sig = vec![Mat::zeros(h.r); chart.size()];
    let mut sig_inv = vec![Mat::zeros(h.r); chart.size()];
    for idx in 0..chart.size() {
        let w = h0.data[idx].sqrt_pd()?;
        let winv = w.inverse()?;
        let hat = (winv * h.data[idx] * winv).hermitize();
        let root = hat.sqrt_pd()?;
        sig[idx] = winv * root * w;
        sig_inv[idx] = sig[idx].inverse()?;
    }

    let norm11 = |comps: &dyn Fn(usize, usize, usize) -> Mat,
                  idx: usize,
                  hm: &Mat,
                  hmi: &Mat|
     -> f64 {
        let ginv = g.ginv_at(idx);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let w = ginv[i][k] * ginv[j][l];
                        if w == 0.0 {
                            continue;
                        }
                        acc += w * inner_h(&comps(i, j, idx), &comps(k, l, idx), hm, hmi).re;
                    }
                }
            }
        }
        acc
    };

    let mut norm_defect = 0.0f64;
    for idx in 0..chart.size() {
        let orig = norm11(&|i, j, ii| f11[i][j].data[ii], idx, &h.data[idx], &hinv[idx]);
        let conj = norm11(
            &|i, j, ii| sig[ii] * f11[i][j].data[ii] * sig_inv[ii],
            idx,
            &h0.data[idx],
            &h0_inv[idx],
        );
        let scale = orig.abs().max(1e-30);
        norm_defect = norm_defect.max((orig - conj).abs() / scale);
    }

    // same transport identity for D_H Phi
    let phi = phi_field(h, bundle, g, lambda)?;
    let mut d10 = EndoOneForm::zeros(chart, h.r);
    let mut d01 = EndoOneForm::zeros(chart, h.r);
    for axis in 0..n {
        let d = d_matrix(chart, bundle.twists(), &phi, axis);
        for idx in 0..chart.size() {
            let comm = a.comps[axis].data[idx].commutator(&phi.data[idx]);
            d10.comps[axis].data[idx] = (d.data[idx] + comm).scale(0.5);
            d01.comps[axis].data[idx] = d.data[idx].scale(0.5);
        }
    }
    let mut deriv_defect = 0.0f64;
    for idx in 0..chart.size() {
        let orig = one_form_norm_sq_at(&d10, idx, g, &h.data[idx], &hinv[idx])
            + one_form_norm_sq_at(&d01, idx, g, &h.data[idx], &hinv[idx]);
        let mut acc = 0.0;
        let ginv = g.ginv_at(idx);
        for part in [&d10, &d01] {
            for i in 0..n {
                let ci = sig[idx] * part.comps[i].data[idx] * sig_inv[idx];
                for j in 0..n {
                    let w = ginv[i][j];
                    if w == 0.0 {
                        continue;
                    }
                    let cj = sig[idx] * part.comps[j].data[idx] * sig_inv[idx];
                    acc += w * inner_h(&ci, &cj, &h0.data[idx], &h0_inv[idx]).re;
                }
            }
        }
        let scale = orig.abs().max(1e-30);
        deriv_defect = deriv_defect.max((orig - acc).abs() / scale);
    }
    Ok((norm_defect, deriv_defect))
}

/// Fit a linear upper envelope `sup|s| <= C1 ||s||_L2 + C2` over recorded
/// pairs (least squares for the slope, then the smallest valid intercept).
pub fn interpolation_envelope(pairs: &[(f64, f64)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (sup, l2) in pairs {
        num += (l2 - mx) * (sup - my);
        den += (l2 - mx) * (l2 - mx);
    }
    let c1 = if den > 1e-30 { (num / den).max(0.0) } else { 0.0 };
    let c2 = pairs.iter().map(|(sup, l2)| sup - c1 * l2).fold(f64::MIN, f64::max).max(0.0);
    (c1, c2)
}
