//! Time integration of the affine Hermitian-Yang-Mills flow
//! `dH/dt = -4 H (K_{H,theta} - lambda Id)` on closed charts, Dirichlet
//! domains and exhaustion sequences, with the per-sample diagnostics stream.

use crate::bundle::FlatHiggsBundle;
use crate::chart::Chart;
use crate::curvature::{
    CurvatureError, degree, h_norms, inverses, mean_curvature_higgs_cached, phi_field,
};
use crate::diagnostics::{
    DiagnosticsError, DiagnosticsRow, dprime_l2, endo_log, endo_norms, gauge_equivalence_defect,
    i_functional_of_phi, key_identity_residual, c1_monitor, sigma_pointwise,
};
use crate::field::{MatrixField, ScalarField};
use crate::geometry::{GeometryError, MetricField, integrate, volume};
use crate::linalg::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("closed-chart flow requires all axes periodic")]
    NotClosed,
    #[error("Dirichlet flow requires at least one Dirichlet axis")]
    NotDirichlet,
    #[error("closed-chart flow requires a Gauduchon-certified metric (residual {0:.3e})")]
    NotGauduchon(f64),
    #[error("initial metric violates the boundary condition (defect {0:.3e})")]
    BoundaryMismatch(f64),
    #[error("zero volume")]
    ZeroVolume,
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    TMax,
    BlowupGuard,
    DivergenceDetected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub integrator: Integrator,
    /// CFL safety factor; `dt = cfl * min_x [ sum_ab |g^{ab}|/(h_a h_b) ]^{-1}`.
    pub cfl: f64,
    pub dt_override: Option<f64>,
    pub t_max: f64,
    /// convergence threshold on `sup |Phi|_H`
    pub tol: f64,
    /// samples must stay below `tol` this many consecutive times
    pub consecutive: usize,
    pub sample_interval: f64,
    /// `||s||_L2` ceiling that flags divergence (stability dichotomy)
    pub divergence_ceiling: Option<f64>,
    /// keep the trailing normalized-log snapshots for the destabilizer extractor
    pub snapshots_keep: usize,
    /// retain sampled metrics for post-run distance-bound checks
    pub keep_checkpoints: bool,
    /// evaluate the gauge-equivalence identity at sample times
    pub check_gauge: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            integrator: Integrator::Euler,
            cfl: 0.2,
            dt_override: None,
            t_max: 1.0,
            tol: 1e-6,
            consecutive: 10,
            sample_interval: 0.01,
            divergence_ceiling: None,
            snapshots_keep: 8,
            keep_checkpoints: false,
            check_gauge: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowSummary {
    pub termination: Termination,
    pub final_t: f64,
    pub steps: u64,
    pub dt: f64,
    pub lambda: f64,
    pub final_sup_phi: f64,
    pub final_i_functional: f64,
    pub final_sigma_h0: f64,
    pub max_gauge_norm_defect: f64,
    pub max_gauge_deriv_defect: f64,
    pub key_identity_valid: bool,
    /// fitted linear upper envelope `sup|s| <= C1 ||s||_L2 + C2` (soft check)
    pub envelope_c1: f64,
    pub envelope_c2: f64,
}

pub struct FlowReport {
    pub rows: Vec<DiagnosticsRow>,
    pub summary: FlowSummary,
    pub final_h: MatrixField,
    /// trailing `(t, s)` snapshots for the destabilizer extractor
    pub snapshots: Vec<(f64, MatrixField)>,
    /// sampled `(t, H)` checkpoints when requested
    pub checkpoints: Vec<(f64, MatrixField)>,
}

/// Einstein factor `lambda = deg_g(E, H0) / (rank Vol)`.
pub fn einstein_factor(
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<f64, FlowError> {
    let vol = volume(g);
    if !(vol > 0.0) {
        return Err(FlowError::ZeroVolume);
    }
    Ok(degree(h0, bundle, g)? / (bundle.rank() as f64 * vol))
}

/// Parabolic step-size bound for the explicit schemes.
pub fn cfl_dt(g: &MetricField, cfl: f64) -> f64 {
    let chart = g.chart();
    let n = chart.dim();
    let mut worst = 0.0f64;
    for idx in 0..chart.size() {
        let ginv = g.ginv_at(idx);
        let mut denom = 0.0;
        for a in 0..n {
            for b in 0..n {
                denom += ginv[a][b].abs() / (chart.spacing(a) * chart.spacing(b));
            }
        }
        worst = worst.max(denom);
    }
    cfl / worst
}

/// `-4 H Phi(H)` evaluated through the mean curvature; the caller passes the
/// inverses of `H`.
fn flow_rhs(
    h: &MatrixField,
    hinv: &[Mat],
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
) -> Result<MatrixField, FlowError> {
    let mut k = mean_curvature_higgs_cached(h, hinv, bundle, g)?;
    let idl = Mat::identity(h.r).scale(lambda);
    for (idx, m) in k.data.iter_mut().enumerate() {
        let phi = *m - idl;
        *m = (h.data[idx] * phi).scale(-4.0);
    }
    Ok(k)
}

fn pin_boundary(h: &mut MatrixField, chart: &Chart, boundary: &MatrixField) {
    if !chart.has_dirichlet() {
        return;
    }
    for (i, m) in chart.iter().enumerate() {
        if chart.is_boundary(&m) {
            h.data[i] = boundary.data[i];
        }
    }
}

/// One explicit step (Euler or midpoint); Hermitian symmetrization after the
/// update; returns `false` when positivity is lost (blow-up guard).
pub fn flow_step(
    h: &mut MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
    dt: f64,
    integrator: Integrator,
    boundary: Option<&MatrixField>,
) -> Result<bool, FlowError> {
    let chart = g.chart();
    let hinv = match inverses(h) {
        Ok(v) => v,
        Err(_) => return Ok(false),
    };
    let update = match integrator {
        Integrator::Euler => flow_rhs(h, &hinv, bundle, g, lambda)?,
        Integrator::Rk2 => {
            let k1 = flow_rhs(h, &hinv, bundle, g, lambda)?;
            let mut mid = h.clone();
            for (idx, m) in mid.data.iter_mut().enumerate() {
                *m = (*m + k1.data[idx].scale(0.5 * dt)).hermitize();
            }
            if let Some(b) = boundary {
                pin_boundary(&mut mid, chart, b);
            }
            let mid_inv = match inverses(&mid) {
                Ok(v) => v,
                Err(_) => return Ok(false),
            };
            flow_rhs(&mid, &mid_inv, bundle, g, lambda)?
        }
    };
    for (idx, m) in h.data.iter_mut().enumerate() {
        *m = (*m + update.data[idx].scale(dt)).hermitize();
    }
    if let Some(b) = boundary {
        pin_boundary(h, chart, b);
    }
    // positivity guard: a tripped floor aborts, it is never projected away
    for m in h.data.iter() {
        if !m.is_finite() || !m.is_pd_hermitian() {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Monitor<'a> {
    h0: &'a MatrixField,
    h0_inv: Vec<Mat>,
    bundle: &'a FlatHiggsBundle,
    g: &'a MetricField,
    lambda: f64,
    key_identity_valid: bool,
    probe: Option<Vec<usize>>,
}

impl<'a> Monitor<'a> {
    fn row(&self, t: f64, h: &MatrixField) -> Result<(DiagnosticsRow, MatrixField, f64), FlowError> {
        let g = self.g;
        let chart = g.chart();
        let hinv = inverses(h).map_err(CurvatureError::from)?;
        let phi = phi_field(h, self.bundle, g, self.lambda)?;
        let norms = h_norms(&phi, h, &hinv, g);
        // Convergence on Dirichlet charts is judged on the interior: the
        // boundary layer of Phi is a one-sided evaluation of pinned data and
        // carries an O(h^2) floor the interior scheme cannot drive to zero.
        let sup_phi_interior = if chart.has_dirichlet() {
            let mut sup = 0.0f64;
            for (i, m) in chart.iter().enumerate() {
                if !chart.is_boundary(&m) {
                    sup = sup.max(norms.field.data[i]);
                }
            }
            sup
        } else {
            norms.sup
        };
        let tr_phi = ScalarField { data: phi.data.iter().map(|m| m.trace().re).collect() };
        let int_tr_phi = integrate(&tr_phi, g)?;
        let mut sigma_sup = 0.0f64;
        for idx in 0..chart.size() {
            sigma_sup = sigma_sup
                .max(sigma_pointwise(&h.data[idx], &self.h0.data[idx]).unwrap_or(f64::NAN));
        }
        let s = endo_log(self.h0, h, chart)?;
        let (_, sup_s, l2_s) = endo_norms(&s, self.h0, &self.h0_inv, g);
        let l2_dp = dprime_l2(&s, self.h0, &self.h0_inv, self.bundle, g)?;
        let key = if self.key_identity_valid {
            key_identity_residual(self.h0, h, self.bundle, g, self.lambda)?
        } else {
            0.0
        };
        let i_fn = i_functional_of_phi(&phi, h, self.bundle, g)?;
        let sup_t = c1_monitor(self.h0, h, self.bundle, g, self.probe.as_deref())?;
        let mut min_eig = f64::INFINITY;
        for m in h.data.iter() {
            min_eig = min_eig.min(m.min_eig_hermitian().map_err(CurvatureError::from)?);
        }
        let row = DiagnosticsRow {
            t,
            sup_phi: norms.sup,
            l2_phi: norms.l2,
            int_tr_phi,
            sigma_h0: sigma_sup,
            l2_s,
            sup_s,
            l2_dprime_s: l2_dp,
            key_identity_residual: key,
            i_functional: i_fn,
            sup_t,
            min_eig_h: min_eig,
        };
        Ok((row, s, sup_phi_interior))
    }
}

fn run_flow(
    h_init: &MatrixField,
    h0_ref: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
    cfg: &FlowConfig,
    boundary: Option<&MatrixField>,
) -> Result<FlowReport, FlowError> {
    let chart = g.chart();
    let dt = cfg.dt_override.unwrap_or_else(|| cfl_dt(g, cfg.cfl));
    let steps_per_sample = ((cfg.sample_interval / dt).ceil() as u64).max(1);
    let h0_inv = inverses(h0_ref).map_err(CurvatureError::from)?;
    // the key identity applies on closed charts and on Dirichlet charts whose
    // boundary data equals the reference metric
    let key_valid = if chart.has_dirichlet() {
        let mut ok = true;
        for (i, m) in chart.iter().enumerate() {
            if chart.is_boundary(&m)
                && (h_init.data[i] - h0_ref.data[i]).norm() > 1e-10 * h0_ref.max_abs().max(1.0)
            {
                ok = false;
                break;
            }
        }
        ok
    } else {
        true
    };
    let monitor = Monitor {
        h0: h0_ref,
        h0_inv,
        bundle,
        g,
        lambda,
        key_identity_valid: key_valid,
        probe: None,
    };

    let mut h = h_init.clone();
    let mut t = 0.0f64;
    let mut steps = 0u64;
    let mut rows: Vec<DiagnosticsRow> = Vec::new();
    let mut snapshots: Vec<(f64, MatrixField)> = Vec::new();
    let mut checkpoints: Vec<(f64, MatrixField)> = Vec::new();
    let mut below_tol = 0usize;
    let termination;
    let mut max_norm = 0.0f64;
    let mut max_deriv = 0.0f64;

    'outer: loop {
        let (row, s, sup_phi_conv) = monitor.row(t, &h)?;
        if !row.all_finite() {
            return Err(FlowError::NonFinite(t));
        }
        if cfg.check_gauge {
            let (norm_defect, deriv_defect) = gauge_equivalence_defect(h0_ref, &h, bundle, g, lambda)?;
            max_norm = max_norm.max(norm_defect);
            max_deriv = max_deriv.max(deriv_defect);
        }
        snapshots.push((t, s));
        if snapshots.len() > cfg.snapshots_keep.max(3) {
            snapshots.remove(0);
        }
        if cfg.keep_checkpoints {
            checkpoints.push((t, h.clone()));
        }
        let l2_s = row.l2_s;
        rows.push(row);

        if sup_phi_conv < cfg.tol {
            below_tol += 1;
            if below_tol >= cfg.consecutive || (t == 0.0 && sup_phi_conv == 0.0) {
                termination = Termination::Converged;
                break 'outer;
            }
        } else {
            below_tol = 0;
        }
        if let Some(ceiling) = cfg.divergence_ceiling {
            if l2_s > ceiling {
                termination = Termination::DivergenceDetected;
                break 'outer;
            }
        }
        if t >= cfg.t_max {
            termination = Termination::TMax;
            break 'outer;
        }

        for _ in 0..steps_per_sample {
            if !flow_step(&mut h, bundle, g, lambda, dt, cfg.integrator, boundary)? {
                termination = Termination::BlowupGuard;
                break 'outer;
            }
            t += dt;
            steps += 1;
            if t >= cfg.t_max {
                break;
            }
        }
    }

    let last = rows.last().expect("at least one sample");
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.sup_s, r.l2_s)).collect();
    let (envelope_c1, envelope_c2) = crate::diagnostics::interpolation_envelope(&pairs);
    let summary = FlowSummary {
        termination,
        final_t: t,
        steps,
        dt,
        lambda,
        final_sup_phi: last.sup_phi,
        final_i_functional: last.i_functional,
        final_sigma_h0: last.sigma_h0,
        max_gauge_norm_defect: max_norm,
        max_gauge_deriv_defect: max_deriv,
        key_identity_valid: key_valid,
        envelope_c1,
        envelope_c2,
    };
    Ok(FlowReport { rows, summary, final_h: h, snapshots, checkpoints })
}

/// Initial-value flow on a closed chart (all axes periodic, Gauduchon
/// metric). The reference metric for diagnostics is the initial metric.
pub fn run_closed(
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
    cfg: &FlowConfig,
) -> Result<FlowReport, FlowError> {
    if !g.chart().is_closed() {
        return Err(FlowError::NotClosed);
    }
    if !g.is_gauduchon_certified() {
        return Err(FlowError::NotGauduchon(crate::geometry::check_gauduchon(g)));
    }
    run_flow(h0, h0, bundle, g, lambda, cfg, None)
}

/// Dirichlet boundary-value flow: the boundary layers stay pinned to the
/// given data. `h_init` must satisfy the boundary condition.
pub fn run_dirichlet(
    h_init: &MatrixField,
    boundary: &MatrixField,
    h0_ref: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
    lambda: f64,
    cfg: &FlowConfig,
) -> Result<FlowReport, FlowError> {
    let chart = g.chart();
    if !chart.has_dirichlet() {
        return Err(FlowError::NotDirichlet);
    }
    let mut defect = 0.0f64;
    for (i, m) in chart.iter().enumerate() {
        if chart.is_boundary(&m) {
            defect = defect.max((h_init.data[i] - boundary.data[i]).norm());
        }
    }
    if defect > 1e-10 * boundary.max_abs().max(1.0) {
        return Err(FlowError::BoundaryMismatch(defect));
    }
    run_flow(h_init, h0_ref, bundle, g, lambda, cfg, Some(boundary))
}

/// One truncated domain of an exhaustion run.
pub struct ExhaustionDomain {
    pub chart: Chart,
    pub report: FlowReport,
}

pub struct ExhaustionReport {
    pub domains: Vec<ExhaustionDomain>,
    /// `((phi, psi), sup_Omega sigma(H_phi, H_psi))` at final time, phi < psi
    pub pairs: Vec<((usize, usize), f64)>,
    /// `sup |Lap(exhaustion function)|` certificate on the largest domain
    pub certificate: f64,
}

/// Dirichlet flows on a nested family of truncations of the sech-metric line
/// (or any 1-D metric builder), compared pairwise on the probe window.
///
/// All truncations share the grid spacing so fields restrict to the probe
/// window by index arithmetic.
pub fn run_exhaustion(
    radii: &[f64],
    spacing: f64,
    probe: (f64, f64),
    metric_of: impl Fn(&Chart) -> Result<MetricField, GeometryError>,
    bundle_of: impl Fn(&Chart) -> FlatHiggsBundle,
    h_init_of: impl Fn(&Chart) -> MatrixField,
    exhaustion_fn: impl Fn(f64) -> f64,
    lambda: f64,
    cfg: &FlowConfig,
) -> Result<ExhaustionReport, FlowError> {
    let mut domains: Vec<ExhaustionDomain> = Vec::new();
    for &radius in radii {
        let npts = (2.0 * radius / spacing).round() as usize + 1;
        let chart = Chart::interval(-radius, radius, npts);
        let g = metric_of(&chart)?;
        let bundle = bundle_of(&chart);
        let h_init = h_init_of(&chart);
        let report = run_dirichlet(&h_init, &h_init, &h_init, &bundle, &g, lambda, cfg)?;
        domains.push(ExhaustionDomain { chart, report });
    }
    // pairwise comparison on the probe window at the final common time
    let mut pairs = Vec::new();
    for a in 0..domains.len() {
        for b in (a + 1)..domains.len() {
            let (ca, cb) = (&domains[a].chart, &domains[b].chart);
            let (ha, hb) = (&domains[a].report.final_h, &domains[b].report.final_h);
            let mut sup = 0.0f64;
            for (ia, m) in ca.iter().enumerate() {
                let x = ca.coords(&m)[0];
                if x < probe.0 - 1e-12 || x > probe.1 + 1e-12 {
                    continue;
                }
                let ib = ((x - cb.origin(0)) / cb.spacing(0)).round() as usize;
                debug_assert!((cb.coords(&[ib, 0, 0])[0] - x).abs() < 1e-9);
                sup = sup.max(
                    sigma_pointwise(&ha.data[ia], &hb.data[ib]).unwrap_or(f64::INFINITY),
                );
            }
            pairs.push(((a, b), sup));
        }
    }
    // Assumption-2 certificate on the largest domain
    let last = domains.last().expect("at least one domain");
    let g = metric_of(&last.chart)?;
    let f = ScalarField::from_fn(&last.chart, |x| exhaustion_fn(x[0]));
    let lap = crate::geometry::affine_laplacian(&f, &g)?;
    let certificate = lap.max_abs();
    Ok(ExhaustionReport { domains, pairs, certificate })
}

/// Boundary-flux defect on a Dirichlet run: the running time-integral of
/// `sup|Phi|` must stay below the sup of the auxiliary potential solving
/// `Lap v = -|Phi(H0)|`, `v|_boundary = 0`. Returns the worst
/// `int_0^t sup|Phi| ds - sup v` over the samples (negative = bound holds).
pub fn flux_bound_defect(rows: &[DiagnosticsRow], sup_v: f64) -> f64 {
    let mut acc = 0.0;
    let mut worst = f64::MIN;
    worst = worst.max(acc - sup_v);
    for w in rows.windows(2) {
        acc += 0.5 * (w[0].sup_phi + w[1].sup_phi) * (w[1].t - w[0].t);
        worst = worst.max(acc - sup_v);
    }
    worst
}

/// Post-run check of maximum-principle monotonicity: `sup|Phi|(t)` may increase
/// between consecutive samples by at most `slack_rate * dt_sample`.
pub fn sup_phi_monotone_defect(rows: &[DiagnosticsRow]) -> f64 {
    let mut worst: f64 = 0.0;
    for w in rows.windows(2) {
        let dt = (w[1].t - w[0].t).max(1e-300);
        worst = worst.max((w[1].sup_phi - w[0].sup_phi) / dt);
    }
    worst
}

/// Distance-bound check: `sigma(H(t), H(t1)) <= 2r (exp(4 int_{t1}^t sup|Phi|) - 1)`
/// over all ordered checkpoint pairs. Returns the worst `lhs - rhs`.
pub fn distance_bound_defect(
    rows: &[DiagnosticsRow],
    checkpoints: &[(f64, MatrixField)],
    rank: usize,
) -> f64 {
    let mut worst = f64::MIN;
    for a in 0..checkpoints.len() {
        for b in (a + 1)..checkpoints.len() {
            let (t1, ref h1) = checkpoints[a];
            let (t2, ref h2) = checkpoints[b];
            // trapezoid of sup|Phi| over the sample series between t1 and t2
            let mut acc = 0.0;
            for w in rows.windows(2) {
                let (lo, hi) = (w[0].t.max(t1), w[1].t.min(t2));
                if hi <= lo {
                    continue;
                }
                acc += 0.5 * (w[0].sup_phi + w[1].sup_phi) * (hi - lo);
            }
            let bound = 2.0 * rank as f64 * ((4.0 * acc).exp() - 1.0);
            let mut sup_sigma = 0.0f64;
            for (m1, m2) in h1.data.iter().zip(h2.data.iter()) {
                sup_sigma = sup_sigma.max(sigma_pointwise(m1, m2).unwrap_or(f64::INFINITY));
            }
            worst = worst.max(sup_sigma - bound);
        }
    }
    worst
}
