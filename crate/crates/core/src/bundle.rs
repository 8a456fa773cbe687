//! Flat Higgs bundle data: holonomy, constant Higgs matrices in the locally
//! constant frame, and equivariant Hermitian metric sections.

use crate::chart::{Chart, Topology};
use crate::field::{MatrixField, ScalarField, SeamTwists, TwistKind};
use crate::linalg::{C64, LinalgError, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance for the commutation invariants of a flat Higgs bundle.
pub const BUNDLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BundleError {
    #[error("rank {0} out of range (1..=4)")]
    BadRank(usize),
    #[error("holonomy matrix on axis {axis} is singular")]
    SingularHolonomy { axis: usize },
    #[error("bundle invariants violated: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("metric section is not Hermitian positive definite at point {index} (min eig {min_eig:.3e})")]
    NotPositiveDefinite { index: usize, min_eig: f64 },
    #[error("equivariant interpolation supports at most one twisted axis")]
    TooManyTwists,
    #[error("{got} {what} matrices supplied but the chart has {axes} axes")]
    TooManyMatrices { what: &'static str, got: usize, axes: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One violated commutation invariant, with its Frobenius norm.
#[derive(Debug, Clone)]
pub struct Violation {
    pub what: String,
    pub norm: f64,
}

/// Flat Higgs bundle over a torus/line quotient: rank, one holonomy matrix
/// per periodic axis, and constant Higgs matrices `theta_i` in the locally
/// constant frame. The three commutator families
/// `[rho_k, rho_l] = [theta_i, theta_j] = [rho_k, theta_i] = 0`
/// encode the abelian fundamental group, `theta ^ theta = 0`, and the
/// covariant constancy of `theta`.
#[derive(Debug, Clone)]
pub struct FlatHiggsBundle {
    rank: usize,
    rho: Vec<Option<Mat>>,
    theta: Vec<Mat>,
    twists: SeamTwists,
}

impl FlatHiggsBundle {
    pub fn new(
        chart: &Chart,
        rank: usize,
        rho: Vec<Option<Mat>>,
        theta: Vec<Mat>,
    ) -> Result<Self, BundleError> {
        if rank < 1 || rank > 4 {
            return Err(BundleError::BadRank(rank));
        }
        let n = chart.dim();
        if rho.len() > n {
            return Err(BundleError::TooManyMatrices { what: "holonomy", got: rho.len(), axes: n });
        }
        if theta.len() > n {
            return Err(BundleError::TooManyMatrices { what: "Higgs", got: theta.len(), axes: n });
        }
        let mut rho_full: Vec<Option<Mat>> = vec![None; n];
        for (a, r) in rho.into_iter().enumerate().take(n) {
            if let Some(m) = r {
                if chart.topology(a) == Topology::Periodic {
                    if m.inverse().is_err() {
                        return Err(BundleError::SingularHolonomy { axis: a });
                    }
                    // identity holonomy is stored as untwisted
                    if (m - Mat::identity(rank)).norm() > 0.0 {
                        rho_full[a] = Some(m);
                    }
                }
            }
        }
        let mut theta_full = vec![Mat::zeros(rank); n];
        for (a, t) in theta.into_iter().enumerate().take(n) {
            theta_full[a] = t;
        }
        let mut twists = SeamTwists::trivial();
        for (a, r) in rho_full.iter().enumerate() {
            if let Some(m) = r {
                twists = twists.with_axis(a, *m)?;
            }
        }
        let b = FlatHiggsBundle { rank, rho: rho_full, theta: theta_full, twists };
        match b.validate() {
            Ok(()) => Ok(b),
            Err(v) => Err(BundleError::Invalid(v)),
        }
    }

    /// Rank-r bundle with trivial holonomy and zero Higgs field.
    pub fn trivial(chart: &Chart, rank: usize) -> Self {
        FlatHiggsBundle::new(chart, rank, vec![], vec![]).expect("trivial bundle is valid")
    }

    /// Validate the three commutation families; `Ok` iff all hold within
    /// `BUNDLE_TOL` relative to the factors' norms.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut bad = Vec::new();
        let rhos: Vec<(usize, &Mat)> =
            self.rho.iter().enumerate().filter_map(|(a, r)| r.as_ref().map(|m| (a, m))).collect();
        let mut check = |what: String, a: &Mat, b: &Mat| {
            let scale = (a.norm() * b.norm()).max(1e-300);
            let c = a.commutator(b);
            if c.norm() > BUNDLE_TOL * scale {
                bad.push(Violation { what, norm: c.norm() });
            }
        };
        for (i, (ai, ra)) in rhos.iter().enumerate() {
            for (aj, rb) in rhos.iter().skip(i + 1) {
                check(format!("[rho_{}, rho_{}]", ai + 1, aj + 1), ra, rb);
            }
        }
        for i in 0..self.theta.len() {
            for j in i + 1..self.theta.len() {
                check(format!("[theta_{}, theta_{}]", i + 1, j + 1), &self.theta[i], &self.theta[j]);
            }
        }
        for (a, r) in &rhos {
            for (i, t) in self.theta.iter().enumerate() {
                check(format!("[rho_{}, theta_{}]", a + 1, i + 1), r, t);
            }
        }
        if bad.is_empty() { Ok(()) } else { Err(bad) }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn theta(&self) -> &[Mat] {
        &self.theta
    }

    pub fn theta_is_zero(&self) -> bool {
        self.theta.iter().all(|t| t.norm() == 0.0)
    }

    #[inline]
    pub fn holonomy(&self, axis: usize) -> Option<&Mat> {
        self.rho.get(axis).and_then(|r| r.as_ref())
    }

    #[inline]
    pub fn twists(&self) -> &SeamTwists {
        &self.twists
    }

    /// Generators of the commuting matrix family `{rho_k, theta_i}` (nonzero
    /// ones only), used by the invariant-subspace enumeration.
    pub fn generators(&self) -> Vec<Mat> {
        let mut gens: Vec<Mat> = self.rho.iter().filter_map(|r| *r).collect();
        for t in &self.theta {
            if t.norm() > 0.0 {
                gens.push(*t);
            }
        }
        gens
    }
}

/// Named bundle presets (see the scenario config docs).
pub fn bundle_preset(chart: &Chart, name: &str) -> Result<FlatHiggsBundle, BundleError> {
    let one = C64::new(1.0, 0.0);
    match name {
        "trivial" => Ok(FlatHiggsBundle::trivial(chart, 2)),
        "trivial1" => Ok(FlatHiggsBundle::trivial(chart, 1)),
        "unipotent2" => {
            let rho = Mat::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
            FlatHiggsBundle::new(chart, 2, vec![Some(rho)], vec![])
        }
        "diag-higgs2" => {
            let t = Mat::diag_real(&[1.0, -1.0]);
            FlatHiggsBundle::new(chart, 2, vec![], vec![t])
        }
        "nilpotent-higgs2" => {
            let mut t = Mat::zeros(2);
            t[(0, 1)] = one;
            FlatHiggsBundle::new(chart, 2, vec![], vec![t])
        }
        other => Err(BundleError::Invalid(vec![Violation {
            what: format!("unknown bundle preset `{other}`"),
            norm: f64::NAN,
        }])),
    }
}

/// Validate a Hermitian positive-definite metric section.
pub fn validate_metric_section(h: &MatrixField) -> Result<(), BundleError> {
    for (i, m) in h.data.iter().enumerate() {
        if !m.is_finite() {
            return Err(BundleError::Linalg(LinalgError::NonFinite));
        }
        let herm = m.hermitize();
        if (*m - herm).norm() > 1e-10 * m.norm().max(1.0) || !herm.is_pd_hermitian() {
            let min_eig = herm.eigh().map(|(w, _)| w[0]).unwrap_or(f64::NAN);
            return Err(BundleError::NotPositiveDefinite { index: i, min_eig });
        }
    }
    Ok(())
}

/// Constant metric section.
pub fn metric_constant(chart: &Chart, h: Mat) -> MatrixField {
    MatrixField::constant(chart, h.hermitize(), TwistKind::MetricLike)
}

/// Conformal scaling `H <- e^{phi} H` by a scalar field.
pub fn metric_conformal_scale(h: &MatrixField, phi: &ScalarField) -> MatrixField {
    let mut out = h.clone();
    for (m, p) in out.data.iter_mut().zip(phi.data.iter()) {
        *m = m.scale(p.exp());
    }
    out
}

/// `C^inf` transition profile: 0 on `[0, delta]`, 1 on `[1-delta, 1]`,
/// strictly monotone in between with all derivatives vanishing at the ends.
pub fn smooth_transition(tau: f64, delta: f64) -> f64 {
    let t = ((tau - delta) / (1.0 - 2.0 * delta)).clamp(0.0, 1.0);
    let s = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    let (a, b) = (s(t), s(1.0 - t));
    a / (a + b)
}

/// Equivariant initial metric on a chart with at most one twisted axis:
/// the positive-cone geodesic `H(x) = G^{phi(x_k/L_k)}` between `Id` at the
/// seam and `G = rho^{-dag} rho^{-1}`, with a profile that is flat near the
/// seam so the section continues smoothly across it.
pub fn metric_equivariant_interpolation(
    chart: &Chart,
    bundle: &FlatHiggsBundle,
) -> Result<MatrixField, BundleError> {
    let twisted: Vec<usize> =
        (0..chart.dim()).filter(|&a| bundle.holonomy(a).is_some()).collect();
    if twisted.len() > 1 {
        return Err(BundleError::TooManyTwists);
    }
    let r = bundle.rank();
    if twisted.is_empty() {
        return Ok(metric_constant(chart, Mat::identity(r)));
    }
    let axis = twisted[0];
    let rho = bundle.holonomy(axis).unwrap();
    let rho_inv = rho.inverse()?;
    let g_end = (rho_inv.adjoint() * rho_inv).hermitize();
    let (w, q) = g_end.eigh()?;
    let l = chart.len_axis(axis);
    let x0 = chart.origin(axis);
    let field = MatrixField::from_fn(chart, r, TwistKind::MetricLike, |x| {
        let tau = ((x[axis] - x0) / l).clamp(0.0, 1.0);
        let phi = smooth_transition(tau, 0.15);
        let mut d = Mat::zeros(r);
        for i in 0..r {
            d[(i, i)] = C64::new(w[i].powf(phi), 0.0);
        }
        (q * d * q.adjoint()).hermitize()
    });
    validate_metric_section(&field)?;
    Ok(field)
}

/// Band-limited random Hermitian endomorphism field on a closed chart with
/// trivial holonomy (used to build equivariant test perturbations).
pub fn random_hermitian_field(
    chart: &Chart,
    r: usize,
    amplitude: f64,
    max_mode: usize,
    seed: u64,
) -> MatrixField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    // coefficients per (entry, mode vector) pair
    let mut modes: Vec<(usize, usize, [i32; 3], f64, f64)> = Vec::new();
    for i in 0..r {
        for j in 0..r {
            for k0 in 0..=(max_mode as i32) {
                for k1 in 0..=(if n > 1 { max_mode as i32 } else { 0 }) {
                    for k2 in 0..=(if n > 2 { max_mode as i32 } else { 0 }) {
                        let amp: f64 = rng.gen_range(-1.0..1.0);
                        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        modes.push((i, j, [k0, k1, k2], amp, phase));
                    }
                }
            }
        }
    }
    let field = MatrixField::from_fn(chart, r, TwistKind::AdjointLike, |x| {
        let mut m = Mat::zeros(r);
        for &(i, j, k, amp, phase) in &modes {
            let mut arg = phase;
            for a in 0..n {
                arg += std::f64::consts::TAU * k[a] as f64 * x[a] / chart.len_axis(a);
            }
            m[(i, j)] += C64::new(amp * arg.cos(), amp * arg.sin());
        }
        m.hermitize()
    });
    let scale = field.max_abs().max(1e-300);
    let mut out = field;
    for m in out.data.iter_mut() {
        *m = m.scale(amplitude / scale);
    }
    out
}

/// Exponentiate a Hermitian perturbation against a base metric:
/// `H = H0^{1/2} exp(W s W) H0^{1/2}`-free variant; here the base is assumed
/// `Id`-conformal so `H = H0 e^s` reduces to pointwise `H0^{1/2} e^s H0^{1/2}`.
pub fn metric_from_log_perturbation(
    h0: &MatrixField,
    s: &MatrixField,
) -> Result<MatrixField, BundleError> {
    let mut out = h0.clone();
    for (hm, sm) in out.data.iter_mut().zip(s.data.iter()) {
        let w = hm.sqrt_pd()?;
        let e = sm.hermitize().exp_hermitian()?;
        *hm = (w * e * w).hermitize();
    }
    validate_metric_section(&out)?;
    Ok(out)
}

/// Pointwise adjoint of the Higgs field: `(theta_j)^{*H} = H^{-1} theta_j^dag H`.
pub fn higgs_adjoint(
    theta: &[Mat],
    h: &MatrixField,
    chart: &Chart,
) -> Result<Vec<MatrixField>, BundleError> {
    validate_metric_section(h)?;
    let mut out = Vec::with_capacity(theta.len());
    for t in theta {
        let mut comp = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
        let tadj = t.adjoint();
        for (i, hm) in h.data.iter().enumerate() {
            let hinv = hm.inverse()?;
            comp.data[i] = hinv * tadj * *hm;
        }
        out.push(comp);
    }
    Ok(out)
}

/// `tr_g [theta, theta^{*H}] = g^{ij} (theta_i (theta_j)^{*H} - (theta_j)^{*H} theta_i)`.
pub fn higgs_bracket(
    theta: &[Mat],
    h: &MatrixField,
    g: &crate::geometry::MetricField,
) -> Result<MatrixField, BundleError> {
    let chart = g.chart();
    let n = chart.dim();
    let adj = higgs_adjoint(theta, h, chart)?;
    let mut out = MatrixField::new(chart, h.r, TwistKind::AdjointLike);
    for idx in 0..out.data.len() {
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
        out.data[idx] = acc;
    }
    Ok(out)
}

/// Equivariance defect of an analytically-given section across each periodic
/// seam: `max |f(x + L_k e_k) - rho_k^{-dag} f(x) rho_k^{-1}|` sampled on the
/// seam face (adjoint transport for `TwistKind::AdjointLike` builders).
pub fn seam_check(
    chart: &Chart,
    bundle: &FlatHiggsBundle,
    kind: TwistKind,
    f: impl Fn(&[f64; 3]) -> Mat,
) -> f64 {
    let mut worst = 0.0f64;
    for axis in 0..chart.dim() {
        if chart.topology(axis) != Topology::Periodic {
            continue;
        }
        let ident = Mat::identity(bundle.rank());
        let (rho, rho_inv) = match bundle.holonomy(axis) {
            Some(r) => (*r, r.inverse().expect("holonomy invertible")),
            None => (ident, ident),
        };
        // walk the seam face x_axis = origin
        for m in chart.iter() {
            if m[axis] != 0 {
                continue;
            }
            let x = chart.coords(&m);
            let mut x_far = x;
            x_far[axis] += chart.len_axis(axis);
            let transported = match kind {
                TwistKind::MetricLike => rho_inv.adjoint() * f(&x) * rho_inv,
                TwistKind::AdjointLike => rho * f(&x) * rho_inv,
            };
            worst = worst.max((f(&x_far) - transported).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricField;

    fn circle() -> Chart {
        Chart::circle(64)
    }

    #[test]
    fn validate_accepts_presets() {
        let c = circle();
        for name in ["trivial", "unipotent2", "diag-higgs2", "nilpotent-higgs2"] {
            let b = bundle_preset(&c, name).unwrap();
            assert!(b.validate().is_ok(), "{name}");
        }
    }

    #[test]
    fn validate_rejects_noncommuting_higgs() {
        let c = Chart::torus2(8);
        let mut t1 = Mat::zeros(2);
        t1[(0, 1)] = C64::new(1.0, 0.0);
        let mut t2 = Mat::zeros(2);
        t2[(1, 0)] = C64::new(1.0, 0.0);
        let r = FlatHiggsBundle::new(&c, 2, vec![], vec![t1, t2]);
        match r {
            Err(BundleError::Invalid(v)) => {
                assert!(v.iter().any(|x| x.what.contains("theta_1, theta_2")));
                // [t1, t2] = diag(1, -1), norm sqrt(2)
                assert!((v[0].norm - 2.0f64.sqrt()).abs() < 1e-14);
            }
            other => panic!("expected invalid bundle, got {other:?}"),
        }
    }

    #[test]
    fn unipotent_rho_commutes_with_upper_theta() {
        let c = circle();
        let rho = Mat::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let mut t = Mat::zeros(2);
        t[(0, 1)] = C64::new(1.0, 0.0);
        let b = FlatHiggsBundle::new(&c, 2, vec![Some(rho)], vec![t]);
        assert!(b.is_ok());
    }

    #[test]
    fn higgs_adjoint_identity_metric() {
        let c = circle();
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let h = metric_constant(&c, Mat::identity(2));
        let adj = higgs_adjoint(b.theta(), &h, &c).unwrap();
        let expect = b.theta()[0].adjoint();
        assert!((adj[0].data[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn higgs_adjoint_diagonal_exponential() {
        // theta = E12, H = diag(e^w, e^-w): theta^{*H} = e^{2w} E21.
        let c = circle();
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let w0 = 0.37;
        let h = MatrixField::from_fn(&c, 2, TwistKind::MetricLike, |x| {
            let w = w0 * (std::f64::consts::TAU * x[0]).sin();
            Mat::diag_real(&[w.exp(), (-w).exp()])
        });
        let adj = higgs_adjoint(b.theta(), &h, &c).unwrap();
        for (i, m) in c.iter().enumerate() {
            let w = w0 * (std::f64::consts::TAU * c.coords(&m)[0]).sin();
            let mut expect = Mat::zeros(2);
            expect[(1, 0)] = C64::new((2.0 * w).exp(), 0.0);
            assert!((adj[0].data[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn higgs_adjoint_is_antiinvolution() {
        let c = circle();
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let s = random_hermitian_field(&c, 2, 0.4, 2, 5);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let adj = higgs_adjoint(b.theta(), &h, &c).unwrap();
        let thetas: Vec<Mat> = vec![adj[0].data[17]];
        // apply *H again at the same point
        let mut h_pt = MatrixField::constant(&Chart::circle(4), h.data[17], TwistKind::MetricLike);
        h_pt.r = 2;
        let back = higgs_adjoint(&thetas, &h_pt, &Chart::circle(4)).unwrap();
        assert!((back[0].data[0] - b.theta()[0]).norm() < 1e-12);
    }

    #[test]
    fn bracket_diagonal_higgs_vanishes_for_identity() {
        let c = circle();
        let b = bundle_preset(&c, "diag-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let h = metric_constant(&c, Mat::identity(2));
        let br = higgs_bracket(b.theta(), &h, &g).unwrap();
        assert!(br.max_abs() < 1e-15);
    }

    #[test]
    fn bracket_nilpotent_closed_form_and_trace_free() {
        // theta = E12, H = diag(e^w, e^-w): bracket = e^{2w} diag(1, -1).
        let c = circle();
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let w0 = 0.21;
        let h = MatrixField::from_fn(&c, 2, TwistKind::MetricLike, |x| {
            let w = w0 * (std::f64::consts::TAU * x[0]).cos();
            Mat::diag_real(&[w.exp(), (-w).exp()])
        });
        let br = higgs_bracket(b.theta(), &h, &g).unwrap();
        for (i, m) in c.iter().enumerate() {
            let w = w0 * (std::f64::consts::TAU * c.coords(&m)[0]).cos();
            let expect = Mat::diag_real(&[(2.0 * w).exp(), -(2.0 * w).exp()]);
            assert!((br.data[i] - expect).norm() < 1e-12);
            assert!(br.data[i].trace().norm() < 1e-13);
        }
    }

    #[test]
    fn bracket_is_h_hermitian() {
        // H * bracket must be Hermitian pointwise.
        let c = circle();
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let s = random_hermitian_field(&c, 2, 0.5, 3, 11);
        let h = metric_from_log_perturbation(&metric_constant(&c, Mat::identity(2)), &s).unwrap();
        let br = higgs_bracket(b.theta(), &h, &g).unwrap();
        for i in 0..c.size() {
            let hb = h.data[i] * br.data[i];
            assert!(hb.herm_defect() < 1e-10 * hb.norm().max(1.0));
        }
    }

    #[test]
    fn equivariant_interpolation_satisfies_seam_law() {
        let c = circle();
        let b = bundle_preset(&c, "unipotent2").unwrap();
        let h = metric_equivariant_interpolation(&c, &b).unwrap();
        validate_metric_section(&h).unwrap();
        // rebuild the analytic section for the seam check
        let rho_inv = b.holonomy(0).unwrap().inverse().unwrap();
        let g_end = (rho_inv.adjoint() * rho_inv).hermitize();
        let (w, q) = g_end.eigh().unwrap();
        let f = |x: &[f64; 3]| {
            let phi = smooth_transition(x[0].clamp(0.0, 1.0), 0.15);
            let mut d = Mat::zeros(2);
            for i in 0..2 {
                d[(i, i)] = C64::new(w[i].powf(phi), 0.0);
            }
            (q * d * q.adjoint()).hermitize()
        };
        let defect = seam_check(&c, &b, TwistKind::MetricLike, f);
        assert!(defect < 1e-10, "defect = {defect}");
    }

    #[test]
    fn seam_check_trivial_and_violation() {
        let c = circle();
        let trivial = bundle_preset(&c, "trivial").unwrap();
        let periodic = |x: &[f64; 3]| {
            Mat::diag_real(&[
                (0.3 * (std::f64::consts::TAU * x[0]).sin()).exp(),
                1.0,
            ])
        };
        assert!(seam_check(&c, &trivial, TwistKind::MetricLike, periodic) < 1e-14);

        let uni = bundle_preset(&c, "unipotent2").unwrap();
        let defect = seam_check(&c, &uni, TwistKind::MetricLike, periodic);
        assert!(defect > 0.1, "periodic section must violate the twisted seam law, defect = {defect}");
    }
}
