//! Conjugate-gradient solves of the affine Laplacian in the dmu-weighted
//! inner product, and the conformal Poisson normalization of an initial
//! metric.

use crate::bundle::FlatHiggsBundle;
use crate::curvature::{CurvatureError, phi_field};
use crate::field::{MatrixField, ScalarField};
use crate::geometry::{GeometryError, MetricField, affine_laplacian, integrate, volume};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PoissonError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error("right-hand side has nonzero dmu-mean on a closed chart (defect {0:.3e})")]
    MeanDefect(f64),
    #[error("conjugate gradients stalled at relative residual {0:.3e} after {1} iterations")]
    NoConvergence(f64, usize),
}

fn dot_mu(a: &ScalarField, b: &ScalarField, g: &MetricField) -> f64 {
    let prod = ScalarField { data: a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect() };
    integrate(&prod, g).expect("finite fields")
}

fn project_mean_zero(f: &mut ScalarField, g: &MetricField) {
    let vol = volume(g);
    let mean = integrate(f, g).expect("finite") / vol;
    for v in f.data.iter_mut() {
        *v -= mean;
    }
}

fn zero_boundary(f: &mut ScalarField, g: &MetricField) {
    let chart = g.chart();
    for (i, m) in chart.iter().enumerate() {
        if chart.is_boundary(&m) {
            f.data[i] = 0.0;
        }
    }
}

/// Solve `Lap f = rhs` by CG on `-Lap` in the dmu inner product.
///
/// Closed charts: both sides are projected to dmu-mean zero (the equation is
/// solvable only in that class) and the solution is returned mean-zero.
/// Dirichlet charts: homogeneous boundary values.
pub fn solve_affine_poisson(
    rhs: &ScalarField,
    g: &MetricField,
    rel_tol: f64,
    max_iter: usize,
) -> Result<ScalarField, PoissonError> {
    let chart = g.chart();
    let dirichlet = chart.has_dirichlet();
    let mut b = ScalarField { data: rhs.data.iter().map(|v| -v).collect() };
    if dirichlet {
        zero_boundary(&mut b, g);
    } else {
        project_mean_zero(&mut b, g);
    }
    let apply = |f: &ScalarField| -> ScalarField {
        let mut out = affine_laplacian(f, g).expect("operator application");
        for v in out.data.iter_mut() {
            *v = -*v;
        }
        if dirichlet {
            zero_boundary(&mut out, g);
        }
        out
    };

    let mut x = ScalarField::zeros(chart);
    let mut r = b.clone();
    let mut p = r.clone();
    let b_norm = dot_mu(&b, &b, g).sqrt().max(1e-300);
    let mut rs = dot_mu(&r, &r, g);
    if rs.sqrt() <= rel_tol * b_norm {
        return Ok(x);
    }
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap = dot_mu(&p, &ap, g);
        if pap <= 0.0 {
            return Err(PoissonError::NoConvergence(rs.sqrt() / b_norm, it));
        }
        let alpha = rs / pap;
        for i in 0..x.data.len() {
            x.data[i] += alpha * p.data[i];
            r.data[i] -= alpha * ap.data[i];
        }
        if !dirichlet && it % 25 == 24 {
            // re-project against drift of the neutral constant mode
            project_mean_zero(&mut r, g);
        }
        let rs_new = dot_mu(&r, &r, g);
        if rs_new.sqrt() <= rel_tol * b_norm {
            if !dirichlet {
                project_mean_zero(&mut x, g);
            }
            return Ok(x);
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..p.data.len() {
            p.data[i] = r.data[i] + beta * p.data[i];
        }
    }
    Err(PoissonError::NoConvergence(rs.sqrt() / b_norm, max_iter))
}

pub struct Normalized {
    pub f: ScalarField,
    pub h_bar: MatrixField,
    /// relative residual of the linear solve
    pub solve_residual: f64,
    /// dmu-integral of tr Phi after the conformal change
    pub trace_defect: f64,
}

/// Conformal Poisson normalization: solve `Lap f = (4/r) tr Phi(H0)` and
/// return `Hbar = e^f H0`, which satisfies `tr Phi(Hbar) = 0` up to the
/// discretization defect. On closed charts the right-hand side must have
/// dmu-mean zero (guaranteed when `lambda` is the Einstein factor of `H0`).
pub fn poisson_normalize(
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
    rel_tol: f64,
) -> Result<Normalized, PoissonError> {
    let chart = g.chart();
    let r = h0.r as f64;
    let phi = phi_field(h0, bundle, g, lambda)?;
    let tr_phi = ScalarField { data: phi.data.iter().map(|m| m.trace().re).collect() };
    let rhs = ScalarField { data: tr_phi.data.iter().map(|v| 4.0 / r * v).collect() };
    if chart.is_closed() {
        let sq = ScalarField { data: rhs.data.iter().map(|v| v * v).collect() };
        let l2 = integrate(&sq, g)?.max(0.0).sqrt();
        let mean = integrate(&rhs, g)? / volume(g);
        if mean.abs() > 1e-6 * (l2 + 1e-12) && mean.abs() > 1e-10 {
            return Err(PoissonError::MeanDefect(mean));
        }
    }
    let f = solve_affine_poisson(&rhs, g, rel_tol, 20_000)?;
    // solver contract: || Lap f - rhs ||_2 <= 10 * rel_tol * || rhs ||_2
    let lap = affine_laplacian(&f, g)?;
    let mut rnum = 0.0;
    let mut rden = 0.0;
    for (i, m) in chart.iter().enumerate() {
        if chart.is_boundary(&m) {
            continue;
        }
        let w = g.measure_weight(i, &m);
        let mut d = lap.data[i] - rhs.data[i];
        if chart.is_closed() {
            // compare against the mean-projected rhs
            d = lap.data[i] - rhs.data[i];
        }
        rnum += w * d * d;
        rden += w * rhs.data[i] * rhs.data[i];
    }
    let mut solve_residual = (rnum / rden.max(1e-300)).sqrt();
    if chart.is_closed() {
        // remove the neutral-mode component of the defect
        let diff = ScalarField {
            data: lap.data.iter().zip(rhs.data.iter()).map(|(a, b)| a - b).collect(),
        };
        let mean = integrate(&diff, g)? / volume(g);
        let mut num = 0.0;
        for (i, m) in chart.iter().enumerate() {
            let w = g.measure_weight(i, &m);
            let d = diff.data[i] - mean;
            num += w * d * d;
        }
        solve_residual = (num / rden.max(1e-300)).sqrt();
    }
    let h_bar = crate::bundle::metric_conformal_scale(h0, &f);
    let phi_bar = phi_field(&h_bar, bundle, g, lambda)?;
    let tr_bar = ScalarField { data: phi_bar.data.iter().map(|m| m.trace().re).collect() };
    let trace_defect = integrate(&tr_bar, g)?;
    Ok(Normalized { f, h_bar, solve_residual, trace_defect })
}

/// Auxiliary Dirichlet problem `Lap v = -|Phi(H0)|_{H0}`, `v = 0` on the
/// boundary; `sup v` bounds the time-integral of `sup |Phi|` along Dirichlet
/// flows.
pub fn dirichlet_flux_bound(
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<(ScalarField, f64), PoissonError> {
    let phi = phi_field(h0, bundle, g, lambda)?;
    let hinv = crate::curvature::inverses(h0).map_err(CurvatureError::from)?;
    let norms = crate::curvature::h_norms(&phi, h0, &hinv, g);
    let rhs = ScalarField { data: norms.field.data.iter().map(|v| -v).collect() };
    let v = solve_affine_poisson(&rhs, g, 1e-10, 20_000)?;
    let sup = v.data.iter().fold(f64::MIN, |a, &b| a.max(b));
    Ok((v, sup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::metric_constant;
    use crate::chart::Chart;
    use crate::field::TwistKind;
    use crate::linalg::Mat;
    use std::f64::consts::TAU;

    #[test]
    fn cg_reproduces_fourier_solution_on_circle() {
        let c = Chart::circle(128);
        let g = MetricField::flat(&c);
        // Lap f = sin(2 pi x) -> f = -sin(2 pi x)/(4 pi^2)
        let rhs = ScalarField::from_fn(&c, |x| (TAU * x[0]).sin());
        let f = solve_affine_poisson(&rhs, &g, 1e-12, 10_000).unwrap();
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m)[0];
            let expect = -(TAU * x).sin() / (TAU * TAU);
            assert!((f.data[i] - expect).abs() < 1e-4);
        }
    }

    #[test]
    fn cg_dirichlet_interval() {
        // f'' = -pi^2 sin(pi x), f(0)=f(1)=0 -> f = sin(pi x)
        let c = Chart::interval(0.0, 1.0, 129);
        let g = MetricField::flat(&c);
        let rhs = ScalarField::from_fn(&c, |x| {
            -std::f64::consts::PI.powi(2) * (std::f64::consts::PI * x[0]).sin()
        });
        let f = solve_affine_poisson(&rhs, &g, 1e-12, 10_000).unwrap();
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m)[0];
            assert!((f.data[i] - (std::f64::consts::PI * x).sin()).abs() < 2e-4);
        }
    }

    #[test]
    fn normalize_recovers_minus_sin_profile() {
        // r=1 flat circle, H0 = e^{sin}: tr Phi = pi^2-scaled sin, and the
        // normalizing potential is f = -sin so that e^f H0 = Id-conformal.
        let c = Chart::circle(128);
        let g = MetricField::flat(&c);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let h0 = MatrixField::from_fn(&c, 1, TwistKind::MetricLike, |x| {
            Mat::diag_real(&[(TAU * x[0]).sin().exp()])
        });
        let out = poisson_normalize(&h0, &b, &g, 0.0, 1e-10).unwrap();
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m)[0];
            assert!((out.f.data[i] + (TAU * x).sin()).abs() < 2e-3, "x={x}");
        }
        assert!(out.solve_residual < 1e-8, "residual {}", out.solve_residual);
        assert!(out.trace_defect.abs() < 1e-6, "trace defect {}", out.trace_defect);
    }

    #[test]
    fn normalize_trivial_when_trace_free() {
        let c = Chart::circle(32);
        let g = MetricField::flat(&c);
        let b = FlatHiggsBundle::trivial(&c, 2);
        let h0 = metric_constant(&c, Mat::identity(2));
        let out = poisson_normalize(&h0, &b, &g, 0.0, 1e-10).unwrap();
        assert!(out.f.max_abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_nonzero_mean() {
        let c = Chart::circle(32);
        let g = MetricField::flat(&c);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let h0 = metric_constant(&c, Mat::identity(1));
        // lambda != Einstein factor (= 0 here) forces a nonzero-mean rhs
        let r = poisson_normalize(&h0, &b, &g, 0.5, 1e-10);
        assert!(matches!(r, Err(PoissonError::MeanDefect(_))));
    }

    #[test]
    fn flux_bound_positive_interior() {
        let c = Chart::interval(0.0, 1.0, 65);
        let g = MetricField::flat(&c);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let h0 = MatrixField::from_fn(&c, 1, TwistKind::MetricLike, |x| {
            Mat::diag_real(&[(0.3 * (std::f64::consts::PI * x[0]).sin()).exp()])
        });
        let (v, sup) = dirichlet_flux_bound(&h0, &b, &g, 0.0).unwrap();
        assert!(sup > 0.0);
        // maximum principle: v >= 0 with zero boundary data and rhs <= 0
        for val in &v.data {
            assert!(*val >= -1e-10);
        }
    }
}
