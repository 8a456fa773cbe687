//! Scalar (p,q)-forms on a chart in the affine Dolbeault calculus.
//!
//! A (p,q)-form is stored componentwise on the basis
//! `dz^{i_1} ^ ... ^ dz^{i_p} (x) dzbar^{j_1} ^ ... ^ dzbar^{j_q}` with sorted
//! index tuples encoded as bitmasks. The operators here carry the calculus
//! conventions used throughout the crate: `partial` and `dbar` each carry a
//! factor 1/2, `dbar` carries `(-1)^p`, and the wedge of mixed-type factors
//! carries `(-1)^{q1 p2}`.

use crate::chart::Chart;
use crate::field::{ScalarField, d_scalar};
use std::collections::BTreeMap;

/// Sign of merging two disjoint sorted index sets (wedge concatenation).
fn merge_sign(a: u8, b: u8) -> f64 {
    let mut inv = 0u32;
    for bit_b in 0..8 {
        if b & (1 << bit_b) == 0 {
            continue;
        }
        for bit_a in (bit_b + 1)..8 {
            if a & (1 << bit_a) != 0 {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 { 1.0 } else { -1.0 }
}

/// Sign of prepending `dz^axis` to the sorted tuple encoded by `mask`.
fn insert_sign(mask: u8, axis: usize) -> f64 {
    let below = (mask & ((1u8 << axis) - 1)).count_ones();
    if below % 2 == 0 { 1.0 } else { -1.0 }
}

/// A scalar-coefficient (p,q)-form.
#[derive(Clone)]
pub struct Form {
    pub p: usize,
    pub q: usize,
    pub comps: BTreeMap<(u8, u8), ScalarField>,
}

impl Form {
    pub fn zero(p: usize, q: usize) -> Self {
        Form { p, q, comps: BTreeMap::new() }
    }

    /// Constant function viewed as a (0,0)-form.
    pub fn constant(chart: &Chart, v: f64) -> Self {
        let mut f = Form::zero(0, 0);
        f.comps.insert((0, 0), ScalarField::constant(chart, v));
        f
    }

    fn add_into(&mut self, key: (u8, u8), chart: &Chart, scale: f64, src: &ScalarField) {
        let entry = self.comps.entry(key).or_insert_with(|| ScalarField::zeros(chart));
        for (d, s) in entry.data.iter_mut().zip(src.data.iter()) {
            *d += scale * s;
        }
    }

    /// `partial = (1/2) d (x) Id`, raising (p,q) to (p+1,q).
    pub fn partial(&self, chart: &Chart) -> Form {
        let mut out = Form::zero(self.p + 1, self.q);
        for (&(im, jm), coef) in &self.comps {
            for a in 0..chart.dim() {
                if im & (1 << a) != 0 {
                    continue;
                }
                let d = d_scalar(chart, coef, a);
                out.add_into((im | (1 << a), jm), chart, 0.5 * insert_sign(im, a), &d);
            }
        }
        out
    }

    /// `dbar = (-1)^p (1/2) Id (x) d`, raising (p,q) to (p,q+1).
    pub fn dbar(&self, chart: &Chart) -> Form {
        let ps = if self.p % 2 == 0 { 1.0 } else { -1.0 };
        let mut out = Form::zero(self.p, self.q + 1);
        for (&(im, jm), coef) in &self.comps {
            for a in 0..chart.dim() {
                if jm & (1 << a) != 0 {
                    continue;
                }
                let d = d_scalar(chart, coef, a);
                out.add_into((im, jm | (1 << a)), chart, ps * 0.5 * insert_sign(jm, a), &d);
            }
        }
        out
    }

    /// Wedge with the mixed-type sign `(-1)^{q1 p2}`.
    pub fn wedge(&self, other: &Form, chart: &Chart) -> Form {
        let mut out = Form::zero(self.p + other.p, self.q + other.q);
        let mix = if (self.q * other.p) % 2 == 0 { 1.0 } else { -1.0 };
        for (&(i1, j1), c1) in &self.comps {
            for (&(i2, j2), c2) in &other.comps {
                if i1 & i2 != 0 || j1 & j2 != 0 {
                    continue;
                }
                let sign = mix * merge_sign(i1, i2) * merge_sign(j1, j2);
                let prod = ScalarField {
                    data: c1.data.iter().zip(c2.data.iter()).map(|(a, b)| a * b).collect(),
                };
                out.add_into((i1 | i2, j1 | j2), chart, sign, &prod);
            }
        }
        out
    }

    /// Largest coefficient magnitude over the given points.
    pub fn max_abs_at(&self, points: impl Iterator<Item = usize> + Clone) -> f64 {
        let mut best = 0.0f64;
        for coef in self.comps.values() {
            for i in points.clone() {
                best = best.max(coef.data[i].abs());
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;

    #[test]
    fn merge_signs() {
        // dz2 ^ dz1 = -dz1 ^ dz2
        assert_eq!(merge_sign(0b10, 0b01), -1.0);
        assert_eq!(merge_sign(0b01, 0b10), 1.0);
        assert_eq!(insert_sign(0b01, 1), -1.0); // dz2 in front of dz1
        assert_eq!(insert_sign(0b10, 0), 1.0); // dz1 in front of dz2
    }

    #[test]
    fn ddbar_of_function_matches_quarter_hessian() {
        // partial dbar f on a torus: component ({i},{j}) = (1/4) d_i d_j f.
        let c = Chart::torus2(48);
        let tp = 2.0 * std::f64::consts::PI;
        let mut f = Form::zero(0, 0);
        f.comps.insert((0, 0), ScalarField::from_fn(&c, |x| (tp * x[0]).sin() * (tp * x[1]).cos()));
        let dd = f.dbar(&c).partial(&c);
        // component (1<<0, 1<<1): (1/4) d1 d2 f = (1/4) tp^2 cos cos ... sign: -sin'...
        let comp = dd.comps.get(&(0b01, 0b10)).unwrap();
        for (i, m) in c.iter().enumerate() {
            let x = c.coords(&m);
            let expect = 0.25 * tp * tp * (tp * x[0]).cos() * (-(tp * x[1]).sin());
            assert!((comp.data[i] - expect).abs() < 0.08);
        }
    }
}
