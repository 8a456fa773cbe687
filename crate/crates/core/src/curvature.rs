//! Extended connection, curvature, mean curvature, first Chern form, degrees
//! and the deviation tensor `Phi` in raw affine coordinates.
//!
//! Contraction constants are fixed in one place by two anchors:
//! `Lap f = g^{ij} d_i d_j f` and the flow form
//! `-4 H tr_g F_H = Lap H - g^{ij} d_j H H^{-1} d_i H`, which force the
//! curvature coefficient `-1/4` below. Every `partial`/`dbar` half is folded
//! into the stored components: one-form components produced here already
//! carry their 1/2, so all norms contract with plain `g^{ij}`.

use crate::bundle::{BundleError, FlatHiggsBundle, higgs_adjoint};
use crate::chart::Chart;
use crate::field::{ComplexField, EndoOneForm, MatrixField, ScalarField, TwistKind, d_matrix, d_scalar};
use crate::geometry::{GeometryError, MetricField, integrate};
use crate::linalg::{C64, LinalgError, Mat};

#[derive(Debug, Clone, thiserror::Error)]
pub enum CurvatureError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("projection field fails its invariants: idempotency defect {idem:.3e}, self-adjointness defect {selfadj:.3e} (tolerance {tol:.1e})")]
    BadProjection { idem: f64, selfadj: f64, tol: f64 },
}

/// Pointwise inverses of a positive-definite metric section.
pub fn inverses(h: &MatrixField) -> Result<Vec<Mat>, LinalgError> {
    h.data.iter().map(Mat::inverse).collect()
}

/// Extended connection components `A_i = H^{-1} d_i H` (the 1/2 of `partial`
/// is deferred to the curvature contraction).
pub fn connection_form(
    h: &MatrixField,
    hinv: &[Mat],
    g: &MetricField,
    bundle: &FlatHiggsBundle,
) -> EndoOneForm {
    let chart = g.chart();
    let mut a = EndoOneForm::zeros(chart, h.r);
    for axis in 0..chart.dim() {
        let dh = d_matrix(chart, bundle.twists(), h, axis);
        for (i, m) in a.comps[axis].data.iter_mut().enumerate() {
            *m = hinv[i] * dh.data[i];
        }
    }
    a
}

/// Extended mean curvature with Higgs term:
/// `K = -1/4 g^{ij} d_j(A_i) + g^{ij} [theta_i, (theta_j)^{*H}]`.
pub fn mean_curvature_higgs(
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<MatrixField, CurvatureError> {
    let hinv = inverses(h)?;
    mean_curvature_higgs_cached(h, &hinv, bundle, g)
}

/// `mean_curvature_higgs` with the metric inverses supplied by the caller
/// (the flow inner loop reuses them for the update and the norms).
pub fn mean_curvature_higgs_cached(
    h: &MatrixField,
    hinv: &[Mat],
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<MatrixField, CurvatureError> {
    let chart = g.chart();
    let n = chart.dim();
    let a = connection_form(h, hinv, g, bundle);
    let mut k = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
    for i_ax in 0..n {
        let da = d_matrix(chart, bundle.twists(), &a.comps[i_ax], i_ax);
        for (idx, m) in k.data.iter_mut().enumerate() {
            *m = *m + da.data[idx].scale(-0.25 * g.ginv_at(idx)[i_ax][i_ax]);
        }
        for j_ax in 0..n {
            if j_ax == i_ax {
                continue;
            }
            let da = d_matrix(chart, bundle.twists(), &a.comps[i_ax], j_ax);
            for (idx, m) in k.data.iter_mut().enumerate() {
                *m = *m + da.data[idx].scale(-0.25 * g.ginv_at(idx)[i_ax][j_ax]);
            }
        }
    }
    // Project onto the H-Hermitian part. The continuum K is H-self-adjoint
    // exactly; the stencil route leaves an O(h^2) defect which this removes
    // without changing the order of consistency, and it keeps the flow update
    // `H + dt (-4 H Phi)` Hermitian to roundoff.
    for (idx, m) in k.data.iter_mut().enumerate() {
        let star = hinv[idx] * m.adjoint() * h.data[idx];
        *m = (*m + star).scale(0.5);
    }
    if !bundle.theta_is_zero() {
        let theta = bundle.theta();
        let adj = higgs_adjoint_cached(theta, h, hinv, chart);
        for (idx, m) in k.data.iter_mut().enumerate() {
            let ginv = g.ginv_at(idx);
            let mut acc = Mat::zeros(h.r);
            for i in 0..n {
                for j in 0..n {
                    let w = ginv[i][j];
                    if w == 0.0 {
                        continue;
                    }
                    let aj = adj[j].data[idx];
                    acc = acc + (theta[i] * aj - aj * theta[i]).scale(w);
                }
            }
            *m = *m + acc;
        }
    }
    Ok(k)
}

fn higgs_adjoint_cached(
    theta: &[Mat],
    h: &MatrixField,
    hinv: &[Mat],
    chart: &Chart,
) -> Vec<MatrixField> {
    theta
        .iter()
        .map(|t| {
            let tadj = t.adjoint();
            let mut comp = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
            for (i, hm) in h.data.iter().enumerate() {
                comp.data[i] = hinv[i] * tadj * *hm;
            }
            comp
        })
        .collect()
}

/// `Phi(H, theta) = K_{H,theta} - lambda Id`.
pub fn phi_field(
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<MatrixField, CurvatureError> {
    let mut k = mean_curvature_higgs(h, bundle, g)?;
    let id = Mat::identity(h.r).scale(lambda);
    for m in k.data.iter_mut() {
        *m = *m - id;
    }
    Ok(k)
}

/// First Chern form data: raw components `c_{ij} = -1/4 d_j tr(A_i)` and the
/// contraction `g^{ij} c_{ij}`, which coincides with `tr K` pointwise.
pub struct FirstChern {
    pub comps: Vec<Vec<ComplexField>>,
    pub g_trace: ComplexField,
}

pub fn first_chern(
    h: &MatrixField,
    g: &MetricField,
    bundle: &FlatHiggsBundle,
) -> Result<FirstChern, CurvatureError> {
    let chart = g.chart();
    let n = chart.dim();
    for m in &h.data {
        if m.determinant().re <= 0.0 {
            return Err(CurvatureError::Linalg(LinalgError::NotPositiveDefinite {
                min_eig: m.determinant().re,
            }));
        }
    }
    let hinv = inverses(h)?;
    let a = connection_form(h, &hinv, g, bundle);
    // tr A_i is a well-defined complex scalar field (holonomy conjugation
    // drops out of the trace), so plain scalar stencils apply.
    let tra: Vec<(ScalarField, ScalarField)> = (0..n)
        .map(|i| {
            let re = ScalarField { data: a.comps[i].data.iter().map(|m| m.trace().re).collect() };
            let im = ScalarField { data: a.comps[i].data.iter().map(|m| m.trace().im).collect() };
            (re, im)
        })
        .collect();
    let mut comps: Vec<Vec<ComplexField>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let dre = d_scalar(chart, &tra[i].0, j);
            let dim = d_scalar(chart, &tra[i].1, j);
            let mut c = ComplexField::zeros(chart);
            for idx in 0..c.data.len() {
                c.data[idx] = C64::new(-0.25 * dre.data[idx], -0.25 * dim.data[idx]);
            }
            row.push(c);
        }
        comps.push(row);
    }
    let mut g_trace = ComplexField::zeros(chart);
    for idx in 0..g_trace.data.len() {
        let ginv = g.ginv_at(idx);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += comps[i][j].data[idx] * ginv[i][j];
            }
        }
        g_trace.data[idx] = acc;
    }
    Ok(FirstChern { comps, g_trace })
}

/// Analytic degree `deg_g(E, H0) = (1/n) integral tr K_{H0,theta} dmu`.
pub fn degree(
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<f64, CurvatureError> {
    let k = mean_curvature_higgs(h0, bundle, g)?;
    let tr = ScalarField { data: k.data.iter().map(|m| m.trace().re).collect() };
    Ok(integrate(&tr, g)? / g.chart().dim() as f64)
}

/// The (0,1)+theta operator `D'' = dbar + theta` applied to an endomorphism
/// field. Components carry their calculus constants: the dbar part stores
/// `(1/2) d_j s`, the Higgs part stores `[theta_i, s]`; all norms below
/// contract with plain `g^{ij}`.
pub struct DPrime {
    pub dbar: EndoOneForm,
    pub higgs: EndoOneForm,
}

pub fn dprime(
    s: &MatrixField,
    bundle: &FlatHiggsBundle,
    chart: &Chart,
) -> DPrime {
    let n = chart.dim();
    let mut dbar = EndoOneForm::zeros(chart, s.r);
    let mut higgs = EndoOneForm::zeros(chart, s.r);
    for axis in 0..n {
        let d = d_matrix(chart, bundle.twists(), s, axis);
        for (i, m) in dbar.comps[axis].data.iter_mut().enumerate() {
            *m = d.data[i].scale(0.5);
        }
        let t = bundle.theta()[axis];
        if t.norm() > 0.0 {
            for (i, m) in higgs.comps[axis].data.iter_mut().enumerate() {
                *m = t * s.data[i] - s.data[i] * t;
            }
        }
    }
    DPrime { dbar, higgs }
}

/// Plain `g^{ij}` contraction of a pair of one-form component sets in the
/// fiberwise `H`-inner product; real part (the full sum is real for equal
/// arguments).
pub fn one_form_norm_sq_at(
    comps: &EndoOneForm,
    idx: usize,
    g: &MetricField,
    h: &Mat,
    hinv: &Mat,
) -> f64 {
    let n = comps.comps.len();
    let ginv = g.ginv_at(idx);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = ginv[i][j];
            if w == 0.0 {
                continue;
            }
            acc += w * crate::linalg::inner_h(&comps.comps[i].data[idx], &comps.comps[j].data[idx], h, hinv).re;
        }
    }
    acc
}

/// `|D'' s|^2_H` pointwise.
pub fn dprime_norm_sq_at(
    dp: &DPrime,
    idx: usize,
    g: &MetricField,
    h: &Mat,
    hinv: &Mat,
) -> f64 {
    one_form_norm_sq_at(&dp.dbar, idx, g, h, hinv) + one_form_norm_sq_at(&dp.higgs, idx, g, h, hinv)
}

/// `H0`-orthogonal projection field onto a constant subspace spanned by the
/// columns of `basis` (an `r x k` slab inside a square matrix):
/// `pi = B (B^dag H0 B)^{-1} B^dag H0`.
pub fn orth_projector_field(
    basis: &Mat,
    k: usize,
    h0: &MatrixField,
    chart: &Chart,
) -> Result<MatrixField, CurvatureError> {
    let r = h0.r;
    let mut out = MatrixField::new(chart, r, TwistKind::AdjointLike);
    for (idx, h) in h0.data.iter().enumerate() {
        // gram = B^dag H0 B restricted to the leading k x k block
        let bh = basis.adjoint() * *h * *basis;
        let mut gram = Mat::identity(r);
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] = bh[(i, j)];
            }
        }
        let gram_inv = gram.inverse()?;
        let mut ginv_slab = Mat::zeros(r);
        for i in 0..k {
            for j in 0..k {
                ginv_slab[(i, j)] = gram_inv[(i, j)];
            }
        }
        out.data[idx] = *basis * ginv_slab * basis.adjoint() * *h;
    }
    Ok(out)
}

/// Idempotency and `H0`-self-adjointness defects of a projection field.
pub fn projection_defects(pi: &MatrixField, h0: &MatrixField) -> Result<(f64, f64), CurvatureError> {
    let mut idem = 0.0f64;
    let mut selfadj = 0.0f64;
    for (p, h) in pi.data.iter().zip(h0.data.iter()) {
        idem = idem.max((*p * *p - *p).norm());
        let hinv = h.inverse()?;
        let star = hinv * p.adjoint() * *h;
        selfadj = selfadj.max((star - *p).norm());
    }
    Ok((idem, selfadj))
}

/// Chern-Weil degree of the sub-bundle cut out by the projection field:
/// `(1/n) integral [ tr(pi K_{H0,theta}) - |D'' pi|^2 ] dmu`.
pub fn sub_degree(
    pi: &MatrixField,
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    tol: f64,
) -> Result<f64, CurvatureError> {
    let (idem, selfadj) = projection_defects(pi, h0)?;
    if idem > tol || selfadj > tol {
        return Err(CurvatureError::BadProjection { idem, selfadj, tol });
    }
    let chart = g.chart();
    let k = mean_curvature_higgs(h0, bundle, g)?;
    let hinv = inverses(h0)?;
    let dp = dprime(pi, bundle, chart);
    let mut integrand = ScalarField::zeros(chart);
    for idx in 0..integrand.data.len() {
        let first = (pi.data[idx] * k.data[idx]).trace().re;
        let second = dprime_norm_sq_at(&dp, idx, g, &h0.data[idx], &hinv[idx]);
        integrand.data[idx] = first - second;
    }
    Ok(integrate(&integrand, g)? / chart.dim() as f64)
}

/// Pointwise `H`-norm field `|Phi|_H` and its sup / L2(dmu) aggregates.
pub struct HNorms {
    pub field: ScalarField,
    pub sup: f64,
    pub l2: f64,
}

pub fn h_norms(
    phi: &MatrixField,
    h: &MatrixField,
    hinv: &[Mat],
    g: &MetricField,
) -> HNorms {
    let mut field = ScalarField::zeros(g.chart());
    let mut sup = 0.0f64;
    for (i, p) in phi.data.iter().enumerate() {
        let v = crate::linalg::norm_sqr_h(p, &h.data[i], &hinv[i]).sqrt();
        field.data[i] = v;
        sup = sup.max(v);
    }
    let sq = ScalarField { data: field.data.iter().map(|v| v * v).collect() };
    let l2 = integrate(&sq, g).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN);
    HNorms { field, sup, l2 }
}

/// Mixed curvature diagnostics `F^{2,0} = partial_H theta`, `F^{0,2} = dbar theta^{*H}`
/// (antisymmetrized raw components; identically zero on 1-D charts).
pub struct MixedCurvature {
    /// `(i,k)` with `i<k`: `(1/2)([A_i, theta_k] - [A_k, theta_i])`
    pub f20: Vec<((usize, usize), MatrixField)>,
    /// `(j,k)` with `j<k`: `(1/2)(d_j (theta_k)^{*H} - d_k (theta_j)^{*H})`
    pub f02: Vec<((usize, usize), MatrixField)>,
}

pub fn mixed_curvature(
    h: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<MixedCurvature, CurvatureError> {
    let chart = g.chart();
    let n = chart.dim();
    let hinv = inverses(h)?;
    let a = connection_form(h, &hinv, g, bundle);
    let theta = bundle.theta();
    let adj = higgs_adjoint(theta, h, chart)?;
    let mut f20 = Vec::new();
    let mut f02 = Vec::new();
    for i in 0..n {
        for k in (i + 1)..n {
            let mut comp = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
            for idx in 0..comp.data.len() {
                let ai = a.comps[i].data[idx];
                let ak = a.comps[k].data[idx];
                comp.data[idx] =
                    (ai.commutator(&theta[k]) - ak.commutator(&theta[i])).scale(0.5);
            }
            f20.push(((i, k), comp));

            let dj = d_matrix(chart, bundle.twists(), &adj[k], i);
            let dk = d_matrix(chart, bundle.twists(), &adj[i], k);
            let mut comp2 = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
            for idx in 0..comp2.data.len() {
                comp2.data[idx] = (dj.data[idx] - dk.data[idx]).scale(0.5);
            }
            f02.push(((i, k), comp2));
        }
    }
    Ok(MixedCurvature { f20, f02 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{bundle_preset, metric_constant, random_hermitian_field, metric_from_log_perturbation};
    use crate::geometry::affine_laplacian;
    use std::f64::consts::TAU;

    fn circle(n: usize) -> Chart {
        Chart::circle(n)
    }

    #[test]
    fn constant_metric_zero_curvature() {
        let c = circle(32);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let h = metric_constant(&c, Mat::from_real_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]));
        let k = mean_curvature_higgs(&h, &b, &g).unwrap();
        assert_eq!(k.max_abs(), 0.0);
        assert!((degree(&h, &b, &g).unwrap()).abs() == 0.0);
    }

    #[test]
    fn scalar_reduction_matches_laplacian() {
        // r=1, H=e^u, flat g: K = -(1/4) Lap u up to O(h^2).
        let c = circle(256);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let g = MetricField::flat(&c);
        let u = ScalarField::from_fn(&c, |x| 0.4 * (TAU * x[0]).sin());
        let h = MatrixField::from_fn(&c, 1, TwistKind::MetricLike, |x| {
            Mat::diag_real(&[(0.4 * (TAU * x[0]).sin()).exp()])
        });
        let k = mean_curvature_higgs(&h, &b, &g).unwrap();
        let lap = affine_laplacian(&u, &g).unwrap();
        for i in 0..c.size() {
            assert!((k.data[i][(0, 0)].re + 0.25 * lap.data[i]).abs() < 5e-3);
        }
    }

    #[test]
    fn connection_form_scalar_log_derivative() {
        let c = circle(128);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let g = MetricField::flat(&c);
        let h = MatrixField::from_fn(&c, 1, TwistKind::MetricLike, |x| {
            Mat::diag_real(&[(0.7 * (TAU * x[0]).cos()).exp()])
        });
        let hinv = inverses(&h).unwrap();
        let a = connection_form(&h, &hinv, &g, &b);
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m)[0];
            let du = -0.7 * TAU * (TAU * x).sin();
            assert!((a.comps[0].data[i][(0, 0)].re - du).abs() < 3e-3);
        }
    }

    #[test]
    fn nilpotent_closed_form_mean_curvature() {
        // theta = E12, H = diag(e^w, e^-w), flat circle:
        // K = -(1/4) diag(w'', -w'') + e^{2w} diag(1, -1).
        let c = circle(256);
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let w0 = 0.3;
        let h = MatrixField::from_fn(&c, 2, TwistKind::MetricLike, |x| {
            let w = w0 * (TAU * x[0]).sin();
            Mat::diag_real(&[w.exp(), (-w).exp()])
        });
        let k = mean_curvature_higgs(&h, &b, &g).unwrap();
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m)[0];
            let w = w0 * (TAU * x).sin();
            let wpp = -w0 * TAU * TAU * (TAU * x).sin();
            let expect = Mat::diag_real(&[
                -0.25 * wpp + (2.0 * w).exp(),
                0.25 * wpp - (2.0 * w).exp(),
            ]);
            assert!((k.data[i] - expect).norm() < 5e-3, "x={x}");
        }
    }

    #[test]
    fn trace_identity_and_hermiticity() {
        let c = circle(64);
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let b0 = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let s = random_hermitian_field(&c, 2, 0.5, 3, 42);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let k_higgs = mean_curvature_higgs(&h, &b, &g).unwrap();
        let k_plain = mean_curvature_higgs(&h, &b0, &g).unwrap();
        for i in 0..c.size() {
            // tr K_{H,theta} = tr K_H pointwise (Higgs bracket is trace free)
            assert!((k_higgs.data[i].trace() - k_plain.data[i].trace()).norm() < 1e-12);
            // H K is Hermitian
            let hk = h.data[i] * k_higgs.data[i];
            assert!(hk.herm_defect() <= 1e-10 * hk.norm().max(1.0));
        }
    }

    #[test]
    fn phi_zero_for_hermitian_einstein_input() {
        let c = circle(32);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let h = metric_constant(&c, Mat::identity(2));
        let phi = phi_field(&h, &b, &g, 0.0).unwrap();
        assert_eq!(phi.max_abs(), 0.0);
    }

    #[test]
    fn first_chern_matches_mean_curvature_trace() {
        let c = circle(96);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let s = random_hermitian_field(&c, 2, 0.4, 2, 3);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let k = mean_curvature_higgs(&h, &b, &g).unwrap();
        let c1 = first_chern(&h, &g, &b).unwrap();
        for i in 0..c.size() {
            let diff = (c1.g_trace.data[i] - k.data[i].trace()).norm();
            assert!(diff < 1e-10, "pointwise trace/Chern-form defect {diff}");
        }
    }

    #[test]
    fn first_chern_constant_metric_is_zero() {
        let c = circle(64);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let h = metric_constant(&c, Mat::diag_real(&[2.0, 3.0]));
        let c1 = first_chern(&h, &g, &b).unwrap();
        assert_eq!(c1.g_trace.max_abs(), 0.0);
    }

    #[test]
    fn first_chern_constant_det_refines_to_zero() {
        // det H == 1 pointwise, so c1 -> 0; the discrete tr(H^{-1} dH) route
        // leaves only an O(h^2) residue.
        let res: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&n| {
                let c = circle(n);
                let b = FlatHiggsBundle::trivial(&c, 2);
                let g = MetricField::flat(&c);
                let h = MatrixField::from_fn(&c, 2, TwistKind::MetricLike, |x| {
                    let w = 0.3 * (TAU * x[0]).sin();
                    Mat::diag_real(&[w.exp(), (-w).exp()])
                });
                first_chern(&h, &g, &b).unwrap().g_trace.max_abs()
            })
            .collect();
        assert!(res[0] < 0.05);
        assert!(res[0] / res[1] > 3.5, "no O(h^2) decay: {res:?}");
    }

    #[test]
    fn degree_closed_chart_vanishes_at_h2() {
        let c = circle(64);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = crate::geometry::MetricPreset::ConformalSin { amp: 0.5 }.build(&c).unwrap();
        let s = random_hermitian_field(&c, 2, 0.6, 2, 9);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let d = degree(&h, &b, &g).unwrap();
        assert!(d.abs() < 5e-3, "degree = {d}");
    }

    #[test]
    fn degree_dirichlet_boundary_flux() {
        // r=1, H=e^u on [0,1], flat: deg = -(1/4)(u'(1) - u'(0)).
        let c = Chart::interval(0.0, 1.0, 201);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let g = MetricField::flat(&c);
        let h = MatrixField::from_fn(&c, 1, TwistKind::MetricLike, |x| {
            Mat::diag_real(&[(x[0] * x[0]).exp()])
        });
        let d = degree(&h, &b, &g).unwrap();
        let expect = -0.25 * (2.0 - 0.0);
        assert!((d - expect).abs() < 1e-4, "deg = {d} expect {expect}");
    }

    #[test]
    fn conformal_change_preserves_closed_degree() {
        let c = circle(64);
        let b = bundle_preset(&c, "diag-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let s = random_hermitian_field(&c, 2, 0.4, 2, 21);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let f = ScalarField::from_fn(&c, |x| 0.5 * (TAU * x[0]).cos());
        let hf = crate::bundle::metric_conformal_scale(&h, &f);
        let d0 = degree(&h, &b, &g).unwrap();
        let d1 = degree(&hf, &b, &g).unwrap();
        assert!((d1 - d0).abs() < 1e-3, "conformal drift {}", d1 - d0);
    }

    #[test]
    fn sub_degree_identity_projection_equals_degree() {
        let c = circle(64);
        let b = bundle_preset(&c, "diag-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let s = random_hermitian_field(&c, 2, 0.3, 2, 8);
        let h0 = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let pi = MatrixField::constant(&c, Mat::identity(2), TwistKind::AdjointLike);
        let full = sub_degree(&pi, &h0, &b, &g, 1e-8).unwrap();
        let deg = degree(&h0, &b, &g).unwrap();
        assert!((full - deg).abs() < 1e-14);
    }

    #[test]
    fn sub_degree_constant_orthogonal_line() {
        // constant orthogonal pi commuting with theta, H0 = Id, flat torus -> 0.
        let c = circle(64);
        let b = bundle_preset(&c, "diag-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let pi = MatrixField::constant(&c, Mat::diag_real(&[1.0, 0.0]), TwistKind::AdjointLike);
        let d = sub_degree(&pi, &h0, &b, &g, 1e-10).unwrap();
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn sub_degree_unipotent_line_chern_weil_exact() {
        // The two terms of the sub-degree integrand are each O(0.1) but cancel:
        // the flat sub-line carries an exactly periodic induced metric
        // (rho^{-1} e1 = e1), so its Chern-Weil degree vanishes on a closed
        // chart. The cancellation is a sharp cross-check of the 1/4
        // contraction constant in |D'' pi|^2.
        let parts_of = |n: usize| {
            let c = circle(n);
            let b = bundle_preset(&c, "unipotent2").unwrap();
            let g = MetricField::flat(&c);
            let h0 = crate::bundle::metric_equivariant_interpolation(&c, &b).unwrap();
            let mut basis = Mat::zeros(2);
            basis[(0, 0)] = C64::new(1.0, 0.0);
            let pi = orth_projector_field(&basis, 1, &h0, &c).unwrap();
            let total = sub_degree(&pi, &h0, &b, &g, 1e-8).unwrap();
            // first term alone
            let k = mean_curvature_higgs(&h0, &b, &g).unwrap();
            let tr = ScalarField {
                data: (0..c.size()).map(|i| (pi.data[i] * k.data[i]).trace().re).collect(),
            };
            let first = integrate(&tr, &g).unwrap();
            (total, first)
        };
        let (d128, first128) = parts_of(128);
        let (d256, _) = parts_of(256);
        assert!(first128 > 0.01, "tr(pi K) integral should be order 0.1, got {first128}");
        assert!(d128.abs() < 1e-3, "closed-chart flat sub-line degree must vanish, got {d128}");
        assert!(d128 <= first128, "sub_degree must not exceed its first term");
        // mesh self-consistency at O(h^2)
        assert!((d128 - d256).abs() < 20.0 * (1.0f64 / 128.0).powi(2), "d128={d128} d256={d256}");
    }

    #[test]
    fn sub_degree_rejects_non_projection() {
        let c = circle(32);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let bad = MatrixField::constant(&c, Mat::diag_real(&[0.5, 0.0]), TwistKind::AdjointLike);
        assert!(matches!(
            sub_degree(&bad, &h0, &b, &g, 1e-8),
            Err(CurvatureError::BadProjection { .. })
        ));
    }

    #[test]
    fn mixed_curvature_vanishes_on_line_and_for_commuting_data() {
        let c = circle(32);
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let h = metric_constant(&c, Mat::identity(2));
        let mc = mixed_curvature(&h, &b, &g).unwrap();
        assert!(mc.f20.is_empty() && mc.f02.is_empty());
    }

    #[test]
    fn mixed_curvature_2d_closed_forms() {
        // theta_1 = E12, theta_2 = c E12 on a 2-torus.
        // Conformal H: A_i scalar, theta^{*H} constant -> F20 = F02 = 0.
        // H = diag(e^w, e^-w): F20_{12} = (c d_1 w - d_2 w) E12.
        let chart = Chart::torus2(48);
        let g = MetricField::flat(&chart);
        let cc = 0.7;
        let mut t1 = Mat::zeros(2);
        t1[(0, 1)] = C64::new(1.0, 0.0);
        let t2 = t1.scale(cc);
        let b = FlatHiggsBundle::new(&chart, 2, vec![], vec![t1, t2]).unwrap();

        let conf = MatrixField::from_fn(&chart, 2, TwistKind::MetricLike, |x| {
            Mat::identity(2).scale((0.3 * (TAU * x[0]).sin()).exp())
        });
        let mc = mixed_curvature(&conf, &b, &g).unwrap();
        assert!(mc.f20[0].1.max_abs() < 1e-12);
        assert!(mc.f02[0].1.max_abs() < 1e-12);

        let w_of = |x: &[f64; 3]| 0.2 * (TAU * x[0]).sin() * (TAU * x[1]).cos();
        let h = MatrixField::from_fn(&chart, 2, TwistKind::MetricLike, move |x| {
            let w = w_of(x);
            Mat::diag_real(&[w.exp(), (-w).exp()])
        });
        let mc = mixed_curvature(&h, &b, &g).unwrap();
        for (i, m) in chart.iter().enumerate() {
            let x = chart.coords(&m);
            let d1 = 0.2 * TAU * (TAU * x[0]).cos() * (TAU * x[1]).cos();
            let d2 = -0.2 * TAU * (TAU * x[0]).sin() * (TAU * x[1]).sin();
            let mut expect = Mat::zeros(2);
            expect[(0, 1)] = C64::new(cc * d1 - d2, 0.0);
            assert!(
                (mc.f20[0].1.data[i] - expect).norm() < 2e-2,
                "F20 mismatch at {x:?}"
            );
        }
    }
}
