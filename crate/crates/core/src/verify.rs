//! Named verification suites driving the invariant batteries of each module;
//! the CLI prints one pass/fail line per check with the measured defect.

use crate::bundle::{
    FlatHiggsBundle, bundle_preset, metric_constant, metric_conformal_scale,
    metric_equivariant_interpolation, metric_from_log_perturbation, random_hermitian_field,
};
use crate::chart::Chart;
use crate::curvature::{degree, first_chern, mean_curvature_higgs, orth_projector_field, sub_degree};
use crate::diagnostics::{gauge_equivalence_defect, key_identity_residual};
use crate::field::{MatrixField, ScalarField, TwistKind, d_scalar};
use crate::flow::{
    FlowConfig, Termination, distance_bound_defect, einstein_factor, run_closed,
    sup_phi_monotone_defect,
};
use crate::geometry::{
    MetricField, MetricPreset, affine_laplacian, check_gauduchon, integrate,
};
use crate::linalg::{C64, Mat};
use serde::Serialize;
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    /// true when `measured <= threshold`
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub const SUITES: &[&str] = &[
    "gauduchon-laws",
    "flow-monotonicity",
    "key-identity",
    "gauge-equivalence",
    "chern-weil",
];

fn check(name: &str, measured: f64, threshold: f64, detail: String) -> Check {
    Check {
        name: name.to_string(),
        measured,
        threshold,
        pass: measured <= threshold && measured.is_finite(),
        detail,
    }
}

/// A check that passes when `measured >= floor` (refinement ratios).
fn check_ge(name: &str, measured: f64, floor: f64, detail: String) -> Check {
    Check {
        name: name.to_string(),
        measured,
        threshold: floor,
        pass: measured >= floor && measured.is_finite(),
        detail: format!("(pass when >= threshold) {detail}"),
    }
}

pub fn run_suite(name: &str) -> Result<SuiteReport, String> {
    let checks = match name {
        "gauduchon-laws" => gauduchon_laws(),
        "flow-monotonicity" => flow_monotonicity(),
        "key-identity" => key_identity(),
        "gauge-equivalence" => gauge_equivalence(),
        "chern-weil" => chern_weil(),
        other => return Err(format!("unknown suite `{other}` (have: {})", SUITES.join(", "))),
    };
    let passed = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { suite: name.to_string(), checks, passed })
}

fn gauduchon_laws() -> Vec<Check> {
    let mut out = Vec::new();

    // n = 1: any metric is Gauduchon identically
    let c1 = Chart::circle(64);
    let g1 = MetricPreset::ConformalSin { amp: 0.7 }.build(&c1).unwrap();
    out.push(check("n1-residual-exact", check_gauduchon(&g1), 0.0, "omega^0 constant".into()));

    // constant coefficients: roundoff
    let c2 = Chart::torus2(32);
    let g2 = MetricField::flat(&c2);
    out.push(check("flat-2d-residual", check_gauduchon(&g2), 1e-13, String::new()));

    // the cross2d family is exactly Gauduchon although non-flat
    let g3 = MetricPreset::GauduchonCross2d { amp: 0.3 }.build(&c2).unwrap();
    out.push(check("cross2d-residual", check_gauduchon(&g3), 1e-9, String::new()));

    // integral law: exact (discrete conservation) on the cross2d family,
    // honest O(h^2) decay on the anisotropic family with a resonant test
    // function
    let c2x = Chart::torus2(32);
    let gx = MetricPreset::GauduchonCross2d { amp: 0.3 }.build(&c2x).unwrap();
    let fx = ScalarField::from_fn(&c2x, |x| {
        (TAU * x[0]).sin() * (TAU * x[1]).cos() + 0.3 * (TAU * x[1]).sin()
    });
    let exact = integrate(&affine_laplacian(&fx, &gx).unwrap(), &gx).unwrap().abs();
    out.push(check("integral-law-cross2d", exact, 1e-12, "discrete conservation".into()));
    let law = |npts: usize| -> f64 {
        let c = Chart::torus2(npts);
        let g = MetricPreset::GauduchonAniso2d { amp: 0.15 }.build(&c).unwrap();
        let f = ScalarField::from_fn(&c, |x| {
            (TAU * x[0]).sin() * (TAU * x[1]).cos()
                + 0.5 * (TAU * x[0]).sin() * (2.0 * TAU * x[1]).sin()
        });
        integrate(&affine_laplacian(&f, &g).unwrap(), &g).unwrap().abs()
    };
    let (l1, l2) = (law(32), law(64));
    out.push(check("integral-law-aniso", l1, 0.05, format!("N=32: {l1:.3e}")));
    out.push(check_ge("integral-law-ratio", l1 / l2, 3.5, String::new()));

    // integration by parts with constant boundary values
    let ibp = |npts: usize| -> f64 {
        let c = Chart::interval(0.0, 1.0, npts);
        let g = MetricField::flat(&c);
        let a = 0.25;
        let phi = ScalarField::from_fn(&c, |x| a + (PI * x[0]).sin().powi(2));
        let dphi = d_scalar(&c, &phi, 0);
        let grad = ScalarField { data: dphi.data.iter().map(|d| 0.5 * d * d).collect() };
        let lhs = integrate(&grad, &g).unwrap();
        let lap = affine_laplacian(&phi, &g).unwrap();
        let prod = ScalarField {
            data: phi.data.iter().zip(lap.data.iter()).map(|(p, l)| (a - p) * l).collect(),
        };
        (lhs - 0.5 * integrate(&prod, &g).unwrap()).abs()
    };
    let (b1, b2) = (ibp(161), ibp(321));
    out.push(check("by-parts", b1, 5e-3, format!("N=161: {b1:.3e}")));
    out.push(check_ge("by-parts-ratio", b1 / b2, 3.3, String::new()));

    // exhaustion-function certificate on the sech line
    let c = Chart::interval(-3.0, 3.0, 481);
    let g = MetricPreset::ConformalSech2.build(&c).unwrap();
    let f = ScalarField::from_fn(&c, |x| x[0].cosh().ln());
    let lap = affine_laplacian(&f, &g).unwrap();
    let sup = lap.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.push(check("exhaustion-certificate", sup, 1.0 + 1e-3, format!("sup {sup:.6}")));
    out
}

fn flow_monotonicity() -> Vec<Check> {
    let mut out = Vec::new();
    let c = Chart::circle(64);
    let g = MetricField::flat(&c);
    let b = bundle_preset(&c, "diag-higgs2").unwrap();
    let s0 = random_hermitian_field(&c, 2, 0.3, 2, 11);
    let h0 = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s0).unwrap();
    let lambda = einstein_factor(&h0, &b, &g).unwrap();
    let cfg = FlowConfig {
        t_max: 1.5,
        tol: 1e-6,
        sample_interval: 0.01,
        keep_checkpoints: true,
        ..Default::default()
    };
    let rep = run_closed(&h0, &b, &g, lambda, &cfg).unwrap();
    out.push(check(
        "converged",
        if rep.summary.termination == Termination::Converged { 0.0 } else { 1.0 },
        0.0,
        format!("sup|Phi| final {:.3e}", rep.summary.final_sup_phi),
    ));
    let h2 = (1.0f64 / 64.0).powi(2);
    out.push(check(
        "sup-phi-monotone",
        sup_phi_monotone_defect(&rep.rows),
        1e-8 + 10.0 * h2,
        "worst positive slope of sup|Phi|(t)".into(),
    ));
    let drift = rep
        .rows
        .iter()
        .map(|r| (r.int_tr_phi - rep.rows[0].int_tr_phi).abs() / (1.0 + r.t))
        .fold(0.0f64, f64::max);
    out.push(check("trace-conservation", drift, 1e-4, "int tr Phi drift per (1+t)".into()));
    out.push(check(
        "distance-bound",
        distance_bound_defect(&rep.rows, &rep.checkpoints, 2),
        1e-6,
        "sigma(H(t),H(t1)) vs 2r(e^{4 int sup|Phi|}-1)".into(),
    ));
    let tail = &rep.rows[rep.rows.len() / 2..];
    let tail_growth = tail
        .windows(2)
        .map(|w| w[1].i_functional - w[0].i_functional)
        .fold(0.0f64, f64::max);
    out.push(check("i-functional-tail", tail_growth, 1e-9, "I(t) nonincreasing on tail".into()));
    out.push(check(
        "i-functional-final",
        rep.summary.final_i_functional,
        1e-8,
        String::new(),
    ));
    out
}

fn key_identity() -> Vec<Check> {
    let mut out = Vec::new();
    let resid = |n: usize| -> f64 {
        let c = Chart::circle(n);
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let s = random_hermitian_field(&c, 2, 0.35, 3, 99);
        let h = metric_from_log_perturbation(&h0, &s).unwrap();
        key_identity_residual(&h0, &h, &b, &g, 0.0).unwrap().abs()
    };
    let (r128, r256) = (resid(128), resid(256));
    out.push(check("residual-n128", r128, 1e-3, format!("{r128:.3e}")));
    out.push(check_ge("refinement-ratio", r128 / r256, 3.5, String::new()));

    // constant-field closed form: exact up to matrix-function roundoff
    let c = Chart::circle(16);
    let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
    let g = MetricField::flat(&c);
    let h0 = metric_constant(&c, Mat::identity(2));
    let h = metric_constant(&c, Mat::diag_real(&[0.7f64.exp(), (-0.7f64).exp()]));
    let exact = key_identity_residual(&h0, &h, &b, &g, 0.0).unwrap().abs();
    out.push(check("constant-fields-exact", exact, 1e-12, String::new()));
    out
}

fn gauge_equivalence() -> Vec<Check> {
    let mut out = Vec::new();
    let c = Chart::circle(64);
    let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
    let g = MetricField::flat(&c);
    let s0 = random_hermitian_field(&c, 2, 0.4, 2, 31);
    let h0 = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s0).unwrap();
    let s1 = random_hermitian_field(&c, 2, 0.5, 3, 32);
    let h = metric_from_log_perturbation(&h0, &s1).unwrap();
    let (norm_defect, deriv_defect) = gauge_equivalence_defect(&h0, &h, &b, &g, 0.1).unwrap();
    out.push(check("curvature-norm-transport", norm_defect, 1e-8, String::new()));
    out.push(check("derivative-norm-transport", deriv_defect, 1e-8, String::new()));

    // along a short run
    let lambda = einstein_factor(&h0, &b, &g).unwrap();
    let cfg = FlowConfig { t_max: 0.05, sample_interval: 0.01, ..Default::default() };
    let rep = run_closed(&h0, &b, &g, lambda, &cfg).unwrap();
    out.push(check("norm-transport-along-run", rep.summary.max_gauge_norm_defect, 1e-8, String::new()));
    out.push(check("deriv-transport-along-run", rep.summary.max_gauge_deriv_defect, 1e-8, String::new()));
    out
}

fn chern_weil() -> Vec<Check> {
    let mut out = Vec::new();
    let c = Chart::circle(96);
    let g = MetricField::flat(&c);
    let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
    let b0 = FlatHiggsBundle::trivial(&c, 2);
    let s = random_hermitian_field(&c, 2, 0.4, 2, 42);
    let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();

    // tr K_{H,theta} = tr K_H pointwise
    let kh = mean_curvature_higgs(&h, &b, &g).unwrap();
    let k0 = mean_curvature_higgs(&h, &b0, &g).unwrap();
    let mut tdef = 0.0f64;
    for i in 0..c.size() {
        tdef = tdef.max((kh.data[i].trace() - k0.data[i].trace()).norm());
    }
    out.push(check("trace-identity", tdef, 1e-12, "Higgs bracket is trace free".into()));

    // pointwise (first Chern) g-trace equals tr K
    let c1f = first_chern(&h, &g, &b).unwrap();
    let mut cdef = 0.0f64;
    for i in 0..c.size() {
        cdef = cdef.max((c1f.g_trace.data[i] - kh.data[i].trace()).norm());
    }
    out.push(check("c1-trace-pointwise", cdef, 1e-10, String::new()));

    // H K Hermitian
    let mut hdef = 0.0f64;
    for i in 0..c.size() {
        let hk = h.data[i] * kh.data[i];
        hdef = hdef.max(hk.herm_defect() / hk.norm().max(1.0));
    }
    out.push(check("hk-hermitian", hdef, 1e-10, String::new()));

    // conformal invariance of the closed-chart degree
    let f = ScalarField::from_fn(&c, |x| 0.5 * (TAU * x[0]).cos());
    let hf = metric_conformal_scale(&h, &f);
    let dd = (degree(&hf, &b, &g).unwrap() - degree(&h, &b, &g).unwrap()).abs();
    out.push(check("conformal-degree", dd, 1e-3, String::new()));

    // identity projection reproduces the full degree exactly
    let pi_id = MatrixField::constant(&c, Mat::identity(2), TwistKind::AdjointLike);
    let d_all = degree(&h, &b, &g).unwrap();
    let d_pi = sub_degree(&pi_id, &h, &b, &g, 1e-8).unwrap();
    out.push(check("identity-projection", (d_all - d_pi).abs(), 0.0, String::new()));

    // unipotent sub-line: the two Chern-Weil terms cancel on the closed chart
    let flat_line_deg = |n: usize| -> f64 {
        let c = Chart::circle(n);
        let b = bundle_preset(&c, "unipotent2").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_equivariant_interpolation(&c, &b).unwrap();
        let mut basis = Mat::zeros(2);
        basis[(0, 0)] = C64::new(1.0, 0.0);
        let pi = orth_projector_field(&basis, 1, &h0, &c).unwrap();
        sub_degree(&pi, &h0, &b, &g, 1e-8).unwrap()
    };
    let (u128, u256) = (flat_line_deg(128).abs(), flat_line_deg(256).abs());
    out.push(check("flat-subline-degree", u128, 1e-3, format!("|deg| {u128:.3e}")));
    out.push(check_ge("flat-subline-ratio", u128 / u256, 3.0, String::new()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for name in SUITES {
            let rep = run_suite(name).unwrap();
            for c in &rep.checks {
                assert!(c.pass, "{}::{} measured {:.3e} > threshold {:.3e}", name, c.name, c.measured, c.threshold);
            }
        }
    }

    #[test]
    fn unknown_suite_rejected() {
        assert!(run_suite("nope").is_err());
    }
}
