//! Flat Higgs sub-bundle enumeration, slope tables and the destabilizer
//! extractor built from spectral projections of the normalized log-metric.
//!
//! Ranks are capped at 4 and the generating matrices `{rho_k, theta_i}`
//! commute pairwise, so joint invariant subspaces decompose along joint
//! generalized eigenspaces; the enumeration refines blocks per generator,
//! collects kernel/image chains inside each block, and closes the candidate
//! set under sums and intersections (see `docs/stability.md`).

use crate::bundle::FlatHiggsBundle;
use crate::curvature::{
    CurvatureError, degree, dprime, orth_projector_field, projection_defects, sub_degree,
};
use crate::diagnostics::{DiagnosticsError, SpectralFrame, endo_norms};
use crate::field::{MatrixField, ScalarField, TwistKind};
use crate::geometry::{MetricField, integrate, volume};
use crate::linalg::{C64, LinalgError, Mat};
use serde::Serialize;

pub const INVARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, thiserror::Error)]
pub enum StabilityError {
    #[error("rank {0} unsupported (enumeration is exhaustive only for r <= 4)")]
    RankTooLarge(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("need at least {need} normalized snapshots, got {got}")]
    TooFewSnapshots { need: usize, got: usize },
    #[error("normalized snapshot violates tr u = 0 / ||u|| = 1 (defects {0:.2e}, {1:.2e})")]
    BadNormalization(f64, f64),
}

// ---------------------------------------------------------------------------
// small dense complex elimination helpers (rows <= 4, cols <= 8)

type Col = [C64; 4];

fn col_zero() -> Col {
    [C64::new(0.0, 0.0); 4]
}

fn col_dot(a: &Col, b: &Col, r: usize) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..r {
        s += a[i].conj() * b[i];
    }
    s
}

fn col_norm(a: &Col, r: usize) -> f64 {
    col_dot(a, a, r).re.max(0.0).sqrt()
}

fn mat_col(m: &Mat, j: usize) -> Col {
    let mut c = col_zero();
    for i in 0..m.rank() {
        c[i] = m[(i, j)];
    }
    c
}

/// Modified Gram-Schmidt; drops vectors below `tol` of their original norm.
fn orthonormalize(r: usize, cols: &[Col]) -> Vec<Col> {
    let mut basis: Vec<Col> = Vec::new();
    for c in cols {
        let mut v = *c;
        for _ in 0..2 {
            for b in &basis {
                let proj = col_dot(b, &v, r);
                for i in 0..r {
                    v[i] -= proj * b[i];
                }
            }
        }
        let n = col_norm(&v, r);
        if n > 1e-9 {
            for i in 0..r {
                v[i] /= n;
            }
            basis.push(v);
        }
    }
    basis
}

/// Nullspace of an `rows x cols` complex matrix (entries in row-major `a`).
fn nullspace(rows: usize, cols: usize, a: &mut Vec<Vec<C64>>, scale: f64) -> Vec<Vec<C64>> {
    let tol = 1e-10 * scale.max(1.0);
    let mut pivot_col_of_row: Vec<usize> = Vec::new();
    let mut row = 0usize;
    for col in 0..cols {
        // find pivot
        let mut best = row;
        let mut best_v = 0.0;
        for rr in row..rows {
            let v = a[rr][col].norm();
            if v > best_v {
                best_v = v;
                best = rr;
            }
        }
        if best_v <= tol {
            continue;
        }
        a.swap(row, best);
        let p = a[row][col];
        for cc in 0..cols {
            a[row][cc] /= p;
        }
        for rr in 0..rows {
            if rr == row {
                continue;
            }
            let f = a[rr][col];
            if f.norm() == 0.0 {
                continue;
            }
            for cc in 0..cols {
                let v = a[row][cc];
                a[rr][cc] -= f * v;
            }
        }
        pivot_col_of_row.push(col);
        row += 1;
        if row == rows {
            break;
        }
    }
    let pivot_set: Vec<usize> = pivot_col_of_row.clone();
    let mut out = Vec::new();
    for free in 0..cols {
        if pivot_set.contains(&free) {
            continue;
        }
        let mut v = vec![C64::new(0.0, 0.0); cols];
        v[free] = C64::new(1.0, 0.0);
        for (rr, &pc) in pivot_set.iter().enumerate() {
            v[pc] = -a[rr][free];
        }
        out.push(v);
    }
    out
}

/// Orthonormal-basis representation of a joint invariant subspace in the
/// locally constant frame.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantSubspace {
    pub dim: usize,
    /// column vectors, each of length `r` as `[re, im]` pairs
    pub basis: Vec<Vec<[f64; 2]>>,
    /// worst invariance defect over all generators
    pub defect: f64,
}

#[derive(Clone)]
struct Sub {
    r: usize,
    cols: Vec<Col>,
}

impl Sub {
    fn dim(&self) -> usize {
        self.cols.len()
    }

    fn projector(&self) -> Mat {
        let mut p = Mat::zeros(self.r);
        for c in &self.cols {
            for i in 0..self.r {
                for j in 0..self.r {
                    p[(i, j)] += c[i] * c[j].conj();
                }
            }
        }
        p
    }

    fn basis_mat(&self) -> Mat {
        let mut b = Mat::zeros(self.r);
        for (j, c) in self.cols.iter().enumerate() {
            for i in 0..self.r {
                b[(i, j)] = c[i];
            }
        }
        b
    }
}

/// Worst `|(I - P) G P|` over the generators; zero iff the span is invariant.
fn invariance_defect(sub: &Sub, gens: &[Mat]) -> f64 {
    let p = sub.projector();
    let id = Mat::identity(sub.r);
    let mut worst = 0.0f64;
    for g in gens {
        let d = ((id - p) * *g * p).norm() / g.norm().max(1.0);
        worst = worst.max(d);
    }
    worst
}

/// Roots of the characteristic polynomial by Faddeev-LeVerrier coefficients
/// and Durand-Kerner iteration (degree <= 4).
fn eigenvalues(m: &Mat) -> Vec<C64> {
    let r = m.rank();
    // p(z) = z^r - c1 z^{r-1} - c2 z^{r-2} - ... - cr
    let mut cs = Vec::with_capacity(r);
    let mut mk = *m;
    for k in 1..=r {
        let ck = mk.trace() / k as f64;
        cs.push(ck);
        if k < r {
            mk = *m * (mk - Mat::scalar(r, ck));
        }
    }
    let eval = |z: C64| -> C64 {
        let mut pows = vec![C64::new(1.0, 0.0)];
        for _ in 0..r {
            pows.push(*pows.last().unwrap() * z);
        }
        let mut v = pows[r];
        for k in 1..=r {
            v -= cs[k - 1] * pows[r - k];
        }
        v
    };
    let scale = 1.0 + m.max_abs();
    let mut roots: Vec<C64> = (0..r)
        .map(|i| C64::new(0.4, 0.9).powu(i as u32 + 1) * scale)
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..r {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..r {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                roots[i] += C64::new(1e-6 * scale, 1e-6 * scale);
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-14 * scale {
            break;
        }
    }
    roots
}

fn cluster_roots(mut roots: Vec<C64>, scale: f64) -> Vec<C64> {
    let tol = 1e-7 * (1.0 + scale);
    let mut out: Vec<(C64, usize)> = Vec::new();
    roots.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    for z in roots {
        if let Some((c, n)) = out.last_mut() {
            if (*c / (*n as f64) - z).norm() < tol {
                *c += z;
                *n += 1;
                continue;
            }
        }
        out.push((z, 1));
    }
    out.into_iter().map(|(c, n)| c / (n as f64)).collect()
}

fn kernel_of_power(m: &Mat, lambda: C64, power: usize) -> Vec<Col> {
    let r = m.rank();
    let shifted = *m - Mat::scalar(r, lambda);
    let mut pw = Mat::identity(r);
    for _ in 0..power {
        pw = pw * shifted;
    }
    let mut rows: Vec<Vec<C64>> = (0..r).map(|i| (0..r).map(|j| pw[(i, j)]).collect()).collect();
    let null = nullspace(r, r, &mut rows, pw.max_abs());
    null.iter()
        .map(|v| {
            let mut c = col_zero();
            for i in 0..r {
                c[i] = v[i];
            }
            c
        })
        .collect()
}

fn image_of_power(m: &Mat, lambda: C64, power: usize) -> Vec<Col> {
    let r = m.rank();
    let shifted = *m - Mat::scalar(r, lambda);
    let mut pw = Mat::identity(r);
    for _ in 0..power {
        pw = pw * shifted;
    }
    (0..r).map(|j| mat_col(&pw, j)).collect()
}

fn sum_subspace(r: usize, a: &Sub, b: &Sub) -> Sub {
    let mut cols = a.cols.clone();
    cols.extend_from_slice(&b.cols);
    Sub { r, cols: orthonormalize(r, &cols) }
}

fn intersect_subspace(r: usize, a: &Sub, b: &Sub) -> Sub {
    // x = A u = B v  <=>  [A | -B] (u; v) = 0
    let (ka, kb) = (a.dim(), b.dim());
    let cols = ka + kb;
    let mut rows: Vec<Vec<C64>> = (0..r)
        .map(|i| {
            let mut row = Vec::with_capacity(cols);
            for u in 0..ka {
                row.push(a.cols[u][i]);
            }
            for v in 0..kb {
                row.push(-b.cols[v][i]);
            }
            row
        })
        .collect();
    let null = nullspace(r, cols, &mut rows, 1.0);
    let vecs: Vec<Col> = null
        .iter()
        .map(|n| {
            let mut x = col_zero();
            for u in 0..ka {
                for i in 0..r {
                    x[i] += n[u] * a.cols[u][i];
                }
            }
            x
        })
        .collect();
    Sub { r, cols: orthonormalize(r, &vecs) }
}

/// Exhaustive enumeration of proper joint invariant subspaces of the
/// commuting family `{rho_k, theta_i}` (r <= 4): joint generalized
/// eigenspace refinement, per-generator kernel/image chains, invariant
/// coordinate lines, then closure under sums and intersections; every
/// candidate is re-verified by its invariance defect.
pub fn invariant_subspaces(
    bundle: &FlatHiggsBundle,
) -> Result<Vec<InvariantSubspace>, StabilityError> {
    let r = bundle.rank();
    if r > 4 {
        return Err(StabilityError::RankTooLarge(r));
    }
    let gens = bundle.generators();
    let mut cands: Vec<Sub> = Vec::new();

    // joint generalized eigenspace refinement
    let full = Sub {
        r,
        cols: (0..r)
            .map(|i| {
                let mut c = col_zero();
                c[i] = C64::new(1.0, 0.0);
                c
            })
            .collect(),
    };
    let mut blocks = vec![full];
    for gmat in &gens {
        let mut next: Vec<Sub> = Vec::new();
        for block in &blocks {
            let d = block.dim();
            // restriction of the generator to the block
            let bm = block.basis_mat();
            let restricted_full = bm.adjoint() * *gmat * bm;
            let mut restricted = Mat::zeros(d.max(1));
            for i in 0..d {
                for j in 0..d {
                    restricted[(i, j)] = restricted_full[(i, j)];
                }
            }
            let lams = cluster_roots(eigenvalues(&restricted), restricted.max_abs());
            if lams.len() <= 1 {
                next.push(block.clone());
                continue;
            }
            for lam in lams {
                let sub_cols = kernel_of_power(&restricted, lam, d);
                let lifted: Vec<Col> = sub_cols
                    .iter()
                    .map(|sc| {
                        let mut x = col_zero();
                        for (u, col) in block.cols.iter().enumerate() {
                            for i in 0..r {
                                x[i] += sc[u] * col[i];
                            }
                        }
                        x
                    })
                    .collect();
                let s = Sub { r, cols: orthonormalize(r, &lifted) };
                if s.dim() > 0 {
                    next.push(s);
                }
            }
        }
        blocks = next;
    }
    cands.extend(blocks.iter().cloned());

    // kernel/image chains of each generator at each eigenvalue
    for gmat in &gens {
        for lam in cluster_roots(eigenvalues(gmat), gmat.max_abs()) {
            for power in 1..r {
                let ker = Sub { r, cols: orthonormalize(r, &kernel_of_power(gmat, lam, power)) };
                if ker.dim() > 0 {
                    cands.push(ker);
                }
                let im = Sub { r, cols: orthonormalize(r, &image_of_power(gmat, lam, power)) };
                if im.dim() > 0 {
                    cands.push(im);
                }
            }
        }
    }

    // invariant coordinate lines (canonical representatives in scalar blocks)
    for i in 0..r {
        let mut c = col_zero();
        c[i] = C64::new(1.0, 0.0);
        let line = Sub { r, cols: vec![c] };
        if invariance_defect(&line, &gens) < INVARIANCE_TOL {
            cands.push(line);
        }
    }

    // keep only invariant candidates, dedupe by projector
    let mut keep: Vec<Sub> = Vec::new();
    let push_unique = |s: Sub, keep: &mut Vec<Sub>| {
        if s.dim() == 0 || s.dim() >= r {
            return;
        }
        if invariance_defect(&s, &gens) >= INVARIANCE_TOL {
            return;
        }
        let p = s.projector();
        if keep.iter().all(|k| (k.projector() - p).norm() > 1e-8) {
            keep.push(s);
        }
    };
    for s in cands {
        push_unique(s, &mut keep);
    }

    // closure under sums and intersections
    for _round in 0..4 {
        let snapshot = keep.clone();
        let before = keep.len();
        for a in 0..snapshot.len() {
            for b in (a + 1)..snapshot.len() {
                push_unique(sum_subspace(r, &snapshot[a], &snapshot[b]), &mut keep);
                push_unique(intersect_subspace(r, &snapshot[a], &snapshot[b]), &mut keep);
            }
        }
        if keep.len() == before {
            break;
        }
    }

    keep.sort_by_key(|s| s.dim());
    Ok(keep
        .into_iter()
        .map(|s| {
            let defect = invariance_defect(&s, &gens);
            InvariantSubspace {
                dim: s.dim(),
                basis: s
                    .cols
                    .iter()
                    .map(|c| (0..r).map(|i| [c[i].re, c[i].im]).collect())
                    .collect(),
                defect,
            }
        })
        .collect())
}

fn subspace_basis_mat(r: usize, sub: &InvariantSubspace) -> Mat {
    let mut b = Mat::zeros(r);
    for (j, col) in sub.basis.iter().enumerate() {
        for i in 0..r {
            b[(i, j)] = C64::new(col[i][0], col[i][1]);
        }
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    SemistableNotStable,
    UnstableWitness,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub dim: usize,
    /// orthonormal basis columns in the locally constant frame, `[re, im]` pairs
    pub basis: Vec<Vec<[f64; 2]>>,
    pub degree: f64,
    pub slope: f64,
    /// idempotency / self-adjointness / (Id-pi) dbar pi / (Id-pi)[theta,pi] defects
    pub projection_defects: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityVerdict {
    pub degree_e: f64,
    pub mu_e: f64,
    pub rows: Vec<SlopeRow>,
    pub verdict: Verdict,
    /// `mu(E) - max slope` over proper sub-bundles; `None` when vacuous
    pub margin: Option<f64>,
    pub witness: Option<usize>,
    /// slope-equality tolerance used for the verdict (O(h^2) scale)
    pub eq_tol: f64,
}

/// Max-norm of `(Id - pi) (dbar pi)` and `(Id - pi) [theta, pi]` over the grid.
fn tilt_defects(
    pi: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> (f64, f64) {
    let chart = g.chart();
    let dp = dprime(pi, bundle, chart);
    let id = Mat::identity(pi.r);
    let (mut dbar_def, mut higgs_def) = (0.0f64, 0.0f64);
    for idx in 0..chart.size() {
        let complement = id - pi.data[idx];
        for comp in &dp.dbar.comps {
            dbar_def = dbar_def.max((complement * comp.data[idx]).norm());
        }
        for comp in &dp.higgs.comps {
            higgs_def = higgs_def.max((complement * comp.data[idx]).norm());
        }
    }
    (dbar_def, higgs_def)
}

/// Degrees, slopes and the stability verdict over all proper joint invariant
/// flat sub-bundles, on a closed chart.
pub fn slope_table(
    bundle: &FlatHiggsBundle,
    h0: &MatrixField,
    g: &MetricField,
) -> Result<StabilityVerdict, StabilityError> {
    let chart = g.chart();
    let r = bundle.rank();
    let subs = invariant_subspaces(bundle)?;
    let degree_e = degree(h0, bundle, g)?;
    let mu_e = degree_e / r as f64;
    let h_max = (0..chart.dim()).map(|a| chart.spacing(a)).fold(0.0, f64::max);
    let eq_tol = (20.0 * h_max * h_max).max(1e-8);

    let mut rows = Vec::new();
    for sub in &subs {
        let basis = subspace_basis_mat(r, sub);
        let pi = orth_projector_field(&basis, sub.dim, h0, chart)?;
        let (idem, selfadj) = projection_defects(&pi, h0)?;
        let (dbar_def, higgs_def) = tilt_defects(&pi, bundle, g);
        let deg = sub_degree(&pi, h0, bundle, g, 1e-8)?;
        rows.push(SlopeRow {
            dim: sub.dim,
            basis: sub.basis.clone(),
            degree: deg,
            slope: deg / sub.dim as f64,
            projection_defects: [idem, selfadj, dbar_def, higgs_def],
        });
    }

    let (verdict, margin, witness) = if rows.is_empty() {
        (Verdict::Stable, None, None)
    } else {
        let (best_idx, best_slope) = rows
            .iter()
            .enumerate()
            .map(|(i, row)| (i, row.slope))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let margin = mu_e - best_slope;
        if best_slope > mu_e + eq_tol {
            (Verdict::UnstableWitness, Some(margin), Some(best_idx))
        } else if best_slope >= mu_e - eq_tol {
            (Verdict::SemistableNotStable, Some(margin), Some(best_idx))
        } else {
            (Verdict::Stable, Some(margin), None)
        }
    };
    Ok(StabilityVerdict { degree_e, mu_e, rows, verdict, margin, witness, eq_tol })
}

#[derive(Debug, Clone, Serialize)]
pub struct DestabCandidate {
    pub alpha: usize,
    pub rank: usize,
    pub degree: f64,
    pub slope: f64,
    /// `mu_alpha - mu(E)`; positive values violate stability
    pub slope_violation: f64,
    pub projection_defects: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct DestabilizerReport {
    /// distinct eigenvalue levels of the limiting normalized log-metric
    pub mu: Vec<f64>,
    /// fiber multiplicities per level
    pub counts: Vec<usize>,
    pub gamma: f64,
    pub candidates: Vec<DestabCandidate>,
    /// index of the candidate with maximal slope violation
    pub best: usize,
    /// `| mu_l rank(E) - sum (mu_{a+1}-mu_a) rank(E_a) |`
    pub rank_identity_defect: f64,
    /// worst normalization defects of the supplied snapshots (tr, L2)
    pub normalization_defects: [f64; 2],
}

/// projector fields for each spectral level cut; `None` when inconclusive.
pub struct Extraction {
    pub report: DestabilizerReport,
    pub projectors: Vec<MatrixField>,
}

/// Cluster the pooled eigenvalues of the final normalized snapshot and build
/// the spectral step projectors below each gap. Returns `None` when no
/// admissible clustering exists (gap < 5x pooled intra-cluster std, spatially
/// varying clusters, or inconsistent per-point multiplicities).
pub fn extract_destabilizer(
    snapshots: &[(f64, MatrixField)],
    h0: &MatrixField,
    bundle: &FlatHiggsBundle,
    g: &MetricField,
) -> Result<Option<Extraction>, StabilityError> {
    if snapshots.len() < 3 {
        return Err(StabilityError::TooFewSnapshots { need: 3, got: snapshots.len() });
    }
    let chart = g.chart();
    let r = bundle.rank();
    let h0_inv: Vec<Mat> = h0
        .data
        .iter()
        .map(Mat::inverse)
        .collect::<Result<_, _>>()?;

    // normalize the trailing snapshots u_i = s_i / ||s_i||_{L2}
    let mut tr_defect = 0.0f64;
    let mut norm_defect = 0.0f64;
    let mut last_u: Option<MatrixField> = None;
    for (_, s) in snapshots.iter().rev().take(3).collect::<Vec<_>>().into_iter().rev() {
        let (_, _, l2) = endo_norms(s, h0, &h0_inv, g);
        if l2 <= 1e-14 {
            return Ok(None);
        }
        let mut u = s.clone();
        for m in u.data.iter_mut() {
            *m = m.scale(1.0 / l2);
        }
        let tr = ScalarField { data: u.data.iter().map(|m| m.trace().re).collect() };
        let tr_int = integrate(&tr, g).unwrap_or(f64::NAN).abs() / volume(g);
        let (_, _, l2u) = endo_norms(&u, h0, &h0_inv, g);
        tr_defect = tr_defect.max(tr_int);
        norm_defect = norm_defect.max((l2u - 1.0).abs());
        last_u = Some(u);
    }
    if tr_defect > 1e-6 || norm_defect > 1e-8 {
        return Err(StabilityError::BadNormalization(tr_defect, norm_defect));
    }
    let u = last_u.expect("at least three snapshots");

    // pooled spectrum
    let mut frames: Vec<SpectralFrame> = Vec::with_capacity(chart.size());
    let mut pooled: Vec<f64> = Vec::with_capacity(chart.size() * r);
    for idx in 0..chart.size() {
        let f = SpectralFrame::new(&h0.data[idx], &u.data[idx])?;
        pooled.extend_from_slice(&f.evals[..r]);
        frames.push(f);
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // try l = 2..=r clusters: cut at the l-1 largest gaps between CONSECUTIVE
    // per-point sorted levels; accept when the smallest inter-cluster gap
    // exceeds 5x the pooled intra-cluster std and clusters are near-constant.
    let npts = chart.size();
    let mut accepted: Option<(Vec<f64>, Vec<usize>, Vec<f64>)> = None;
    'levels: for l in (2..=r).rev() {
        // candidate cut positions between the sorted per-point level groups:
        // a valid clustering needs per-point multiplicities constant, so cuts
        // must sit at multiples of npts in the pooled sorted array.
        let mut gap_at: Vec<(f64, usize)> = (1..r)
            .map(|k| {
                let lo = pooled[k * npts - 1];
                let hi = pooled[k * npts];
                (hi - lo, k)
            })
            .collect();
        gap_at.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut cuts: Vec<usize> = gap_at.iter().take(l - 1).map(|&(_, k)| k).collect();
        cuts.sort_unstable();
        // cluster stats
        let mut bounds = vec![0usize];
        bounds.extend(cuts.iter().map(|&k| k * npts));
        bounds.push(r * npts);
        let mut centers = Vec::new();
        let mut stds = Vec::new();
        let mut counts = Vec::new();
        for w in bounds.windows(2) {
            let slice = &pooled[w[0]..w[1]];
            let mean = slice.iter().sum::<f64>() / slice.len() as f64;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / slice.len() as f64;
            centers.push(mean);
            stds.push(var.sqrt());
            counts.push(slice.len() / npts);
        }
        let min_gap = centers.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let pooled_std = stds.iter().cloned().fold(0.0f64, f64::max);
        if !(min_gap > 5.0 * pooled_std.max(1e-12)) {
            continue 'levels;
        }
        // spatial near-constancy: every cluster std below 10% of the min gap
        if stds.iter().any(|s| *s > 0.1 * min_gap) {
            continue 'levels;
        }
        accepted = Some((centers, counts, bounds.iter().map(|&b| b as f64).collect()));
        let _ = &mut cuts;
        break;
    }
    let Some((mu, counts, _)) = accepted else {
        return Ok(None);
    };
    let l = mu.len();

    // spectral step projectors pi_alpha = P_alpha(u) below each gap
    let mut projectors = Vec::new();
    let mut candidates = Vec::new();
    let degree_e = degree(h0, bundle, g)?;
    let mu_e = degree_e / r as f64;
    let mut gamma = 0.0;
    let mut rank_partial = 0usize;
    for alpha in 0..(l - 1) {
        let threshold = 0.5 * (mu[alpha] + mu[alpha + 1]);
        let mut pi = MatrixField::new(chart, r, TwistKind::AdjointLike);
        for idx in 0..chart.size() {
            // the sharp step P_alpha(u) is diagonal in the spectral frame
            let f = &frames[idx];
            let mut diag = Mat::zeros(r);
            for a in 0..r {
                if f.evals[a] <= threshold {
                    diag[(a, a)] = C64::new(1.0, 0.0);
                }
            }
            pi.data[idx] = f.winv * (f.q * diag * f.q.adjoint()) * f.w;
        }
        let (idem, selfadj) = projection_defects(&pi, h0)?;
        let (dbar_def, higgs_def) = tilt_defects(&pi, bundle, g);
        let deg = sub_degree(&pi, h0, bundle, g, 1e-6)?;
        rank_partial += counts[alpha];
        let rank_alpha = rank_partial;
        let slope = deg / rank_alpha as f64;
        gamma += (mu[alpha + 1] - mu[alpha]) * rank_alpha as f64 * (mu_e - slope);
        candidates.push(DestabCandidate {
            alpha,
            rank: rank_alpha,
            degree: deg,
            slope,
            slope_violation: slope - mu_e,
            projection_defects: [idem, selfadj, dbar_def, higgs_def],
        });
        projectors.push(pi);
    }

    // rank identity: mu_l rank(E) = sum (mu_{a+1} - mu_a) rank(E_a)
    let mut acc = 0.0;
    let mut rp = 0usize;
    for alpha in 0..(l - 1) {
        rp += counts[alpha];
        acc += (mu[alpha + 1] - mu[alpha]) * rp as f64;
    }
    let rank_identity_defect = (mu[l - 1] * r as f64 - acc).abs();

    let best = candidates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.slope_violation.partial_cmp(&b.1.slope_violation).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let report = DestabilizerReport {
        mu,
        counts,
        gamma,
        candidates,
        best,
        rank_identity_defect,
        normalization_defects: [tr_defect, norm_defect],
    };
    Ok(Some(Extraction { report, projectors }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{bundle_preset, metric_constant};
    use crate::chart::Chart;
    use crate::geometry::MetricField;

    fn lines_of(subs: &[InvariantSubspace]) -> Vec<Vec<[f64; 2]>> {
        subs.iter().filter(|s| s.dim == 1).map(|s| s.basis[0].clone()).collect()
    }

    fn is_coord_line(basis: &[Vec<[f64; 2]>], which: usize) -> bool {
        basis.iter().any(|col| {
            col.iter().enumerate().all(|(i, z)| {
                let mag = (z[0] * z[0] + z[1] * z[1]).sqrt();
                if i == which { (mag - 1.0).abs() < 1e-9 } else { mag < 1e-9 }
            })
        })
    }

    #[test]
    fn diagonal_higgs_two_lines() {
        let c = Chart::circle(16);
        let b = bundle_preset(&c, "diag-higgs2").unwrap();
        let subs = invariant_subspaces(&b).unwrap();
        assert_eq!(subs.len(), 2, "{subs:?}");
        let lines = lines_of(&subs);
        assert!(is_coord_line(&lines, 0) && is_coord_line(&lines, 1));
        for s in &subs {
            assert!(s.defect < INVARIANCE_TOL);
        }
    }

    #[test]
    fn unipotent_single_line() {
        let c = Chart::circle(16);
        let b = bundle_preset(&c, "unipotent2").unwrap();
        let subs = invariant_subspaces(&b).unwrap();
        assert_eq!(subs.len(), 1, "{subs:?}");
        assert_eq!(subs[0].dim, 1);
        assert!(is_coord_line(&lines_of(&subs), 0));
    }

    #[test]
    fn rotation_eigenlines() {
        // rho = rotation by an irrational angle: the two complex eigenlines
        // (1, -i)/sqrt 2 and (1, i)/sqrt 2.
        let c = Chart::circle(16);
        let a = 1.0f64; // radians
        let rho = Mat::from_real_rows(&[vec![a.cos(), -a.sin()], vec![a.sin(), a.cos()]]);
        let b = FlatHiggsBundle::new(&c, 2, vec![Some(rho)], vec![Mat::identity(2).scale(0.7)])
            .unwrap();
        let subs = invariant_subspaces(&b).unwrap();
        assert_eq!(subs.len(), 2, "{subs:?}");
        for s in &subs {
            assert_eq!(s.dim, 1);
            let col = &s.basis[0];
            // |v1| = |v2| = 1/sqrt(2) for both eigenlines of a rotation
            let m0 = (col[0][0].powi(2) + col[0][1].powi(2)).sqrt();
            let m1 = (col[1][0].powi(2) + col[1][1].powi(2)).sqrt();
            assert!((m0 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
            assert!((m1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        }
    }

    #[test]
    fn trivial_rank2_gives_coordinate_lines() {
        let c = Chart::circle(16);
        let b = bundle_preset(&c, "trivial").unwrap();
        let subs = invariant_subspaces(&b).unwrap();
        let lines = lines_of(&subs);
        assert!(is_coord_line(&lines, 0) && is_coord_line(&lines, 1), "{subs:?}");
    }

    #[test]
    fn rank3_mixed_spectrum_lattice() {
        let c = Chart::circle(16);
        let t = Mat::diag_real(&[1.0, 1.0, -2.0]);
        let b = FlatHiggsBundle::new(&c, 3, vec![], vec![t]).unwrap();
        let subs = invariant_subspaces(&b).unwrap();
        // lines e1, e2, e3 and planes e1+e2, e1+e3, e2+e3
        assert_eq!(subs.iter().filter(|s| s.dim == 1).count(), 3);
        assert_eq!(subs.iter().filter(|s| s.dim == 2).count(), 3);
    }

    #[test]
    fn slope_table_semistable_trivial() {
        let c = Chart::circle(64);
        let b = bundle_preset(&c, "trivial").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let v = slope_table(&b, &h0, &g).unwrap();
        assert_eq!(v.verdict, Verdict::SemistableNotStable);
        for row in &v.rows {
            assert!(row.degree.abs() < 1e-12);
        }
        assert!(v.mu_e.abs() < 1e-12);
    }

    #[test]
    fn slope_table_rank1_vacuous() {
        let c = Chart::circle(32);
        let b = FlatHiggsBundle::trivial(&c, 1);
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(1));
        let v = slope_table(&b, &h0, &g).unwrap();
        assert_eq!(v.verdict, Verdict::Stable);
        assert!(v.rows.is_empty() && v.margin.is_none());
    }

    #[test]
    fn slope_table_unipotent_closed_chart() {
        // The unique invariant line carries an exactly periodic induced
        // metric, so its closed-chart degree vanishes: the verdict is
        // semistable (equality of slopes within the O(h^2) tolerance).
        let c = Chart::circle(128);
        let b = bundle_preset(&c, "unipotent2").unwrap();
        let g = MetricField::flat(&c);
        let h0 = crate::bundle::metric_equivariant_interpolation(&c, &b).unwrap();
        let v = slope_table(&b, &h0, &g).unwrap();
        assert_eq!(v.rows.len(), 1);
        assert!(v.rows[0].degree.abs() < v.eq_tol, "deg {}", v.rows[0].degree);
        assert_eq!(v.verdict, Verdict::SemistableNotStable);
        // projection invariants hold tightly; tilt defects are O(h^2)
        assert!(v.rows[0].projection_defects[0] < 1e-10);
        assert!(v.rows[0].projection_defects[1] < 1e-10);
        assert!(v.rows[0].projection_defects[2] < 5e-2);
    }

    #[test]
    fn synthetic_two_level_extraction() {
        // u = diag(-c, c) constant: the extractor returns the rank-1 spectral
        // projector onto the low eigenvalue, exactly.
        let c = Chart::circle(32);
        let b = bundle_preset(&c, "nilpotent-higgs2").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let s = MatrixField::constant(&c, Mat::diag_real(&[-1.3, 1.3]), TwistKind::AdjointLike);
        let snaps = vec![(0.1, s.clone()), (0.2, s.clone()), (0.3, s)];
        let ext = extract_destabilizer(&snaps, &h0, &b, &g).unwrap().expect("conclusive");
        assert_eq!(ext.report.mu.len(), 2);
        assert_eq!(ext.report.counts, vec![1, 1]);
        let pi = &ext.projectors[0];
        let expect = Mat::diag_real(&[1.0, 0.0]);
        for m in &pi.data {
            assert!((*m - expect).norm() < 1e-10);
        }
        assert_eq!(ext.report.candidates[0].rank, 1);
        assert!(ext.report.rank_identity_defect < 1e-10);
        // nilpotent-higgs2 with H0 = Id: deg(span e1) = 0 = mu(E), gamma = 0
        assert!(ext.report.gamma.abs() < 1e-10, "gamma {}", ext.report.gamma);
    }

    #[test]
    fn extraction_inconclusive_for_smeared_spectrum() {
        // eigenvalues vary strongly in space: no admissible clustering.
        let c = Chart::circle(32);
        let b = bundle_preset(&c, "trivial").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let s = MatrixField::from_fn(&c, 2, TwistKind::AdjointLike, |x| {
            let v = (std::f64::consts::TAU * x[0]).sin();
            Mat::diag_real(&[-0.5 - v, 0.5 + v])
        });
        let snaps = vec![(0.1, s.clone()), (0.2, s.clone()), (0.3, s)];
        let out = extract_destabilizer(&snaps, &h0, &b, &g).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn extraction_needs_three_snapshots() {
        let c = Chart::circle(16);
        let b = bundle_preset(&c, "trivial").unwrap();
        let g = MetricField::flat(&c);
        let h0 = metric_constant(&c, Mat::identity(2));
        let s = MatrixField::constant(&c, Mat::diag_real(&[-1.0, 1.0]), TwistKind::AdjointLike);
        let r = extract_destabilizer(&[(0.0, s)], &h0, &b, &g);
        assert!(matches!(r, Err(StabilityError::TooFewSnapshots { .. })));
    }
}
