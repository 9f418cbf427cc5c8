//! Closed intervals and axis-aligned boxes with linear-constraint contraction.

use nalgebra::{DMatrix, DVector};

use crate::model::Rel;
use crate::system::Lin;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ENTIRE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, o: &Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }

    pub fn meet(&self, o: &Interval) -> Interval {
        Interval::new(self.lo.max(o.lo), self.hi.min(o.hi))
    }

    pub fn intersects(&self, o: &Interval) -> bool {
        !self.meet(o).is_empty()
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn scale(&self, k: f64) -> Interval {
        if k == 0.0 {
            return Interval::point(0.0);
        }
        if k > 0.0 {
            Interval::new(self.lo * k, self.hi * k)
        } else {
            Interval::new(self.hi * k, self.lo * k)
        }
    }

    /// Outward widening by `abs + rel·magnitude`.
    pub fn widen(&self, rel: f64, abs: f64) -> Interval {
        let e = abs + rel * self.mag();
        Interval::new(self.lo - e, self.hi + e)
    }
}

pub type IBox = Vec<Interval>;

pub fn box_is_empty(b: &[Interval]) -> bool {
    b.iter().any(Interval::is_empty)
}

pub fn box_is_finite(b: &[Interval]) -> bool {
    b.iter().all(|i| i.lo.is_finite() && i.hi.is_finite())
}

pub fn box_hull(a: &[Interval], b: &[Interval]) -> IBox {
    a.iter().zip(b).map(|(x, y)| x.hull(y)).collect()
}

pub fn box_meet(a: &[Interval], b: &[Interval]) -> IBox {
    a.iter().zip(b).map(|(x, y)| x.meet(y)).collect()
}

pub fn box_contains(outer: &[Interval], inner: &[Interval]) -> bool {
    outer.iter().zip(inner).all(|(o, i)| o.contains_interval(i))
}

pub fn box_contains_point(b: &[Interval], x: &[f64], rtol: f64) -> bool {
    b.iter().zip(x).all(|(i, &v)| i.widen(rtol, rtol * 1e-6).contains(v))
}

pub fn box_widen(b: &[Interval], rel: f64, abs: f64) -> IBox {
    b.iter().map(|i| i.widen(rel, abs)).collect()
}

pub fn point_box(x: &[f64]) -> IBox {
    x.iter().map(|&v| Interval::point(v)).collect()
}

/// `m·b + off` in interval arithmetic.
pub fn affine_image(m: &DMatrix<f64>, off: &DVector<f64>, b: &[Interval]) -> IBox {
    (0..m.nrows())
        .map(|i| {
            let mut acc = Interval::point(off[i]);
            for (j, x) in b.iter().enumerate() {
                let k = m[(i, j)];
                if k != 0.0 {
                    acc = acc.add(&x.scale(k));
                }
            }
            acc
        })
        .collect()
}

/// Range of `c.coef·x + c.constant` over the box.
pub fn lin_range(c: &Lin, b: &[Interval]) -> Interval {
    let mut acc = Interval::point(c.constant);
    for (k, x) in c.coef.iter().zip(b) {
        if *k != 0.0 {
            acc = acc.add(&x.scale(*k));
        }
    }
    acc
}

/// Narrows `b` to points satisfying every constraint up to its slack; `false` when the result is empty.
pub fn contract(b: &mut [Interval], cs: &[(Lin, f64)]) -> bool {
    for _ in 0..20 {
        let mut changed = false;
        for (c, slack) in cs {
            let (le, ge) = match c.rel {
                Rel::Le | Rel::Lt => (true, false),
                Rel::Ge | Rel::Gt => (false, true),
                Rel::Eq => (true, true),
            };
            for j in 0..b.len() {
                let a = c.coef[j];
                if a == 0.0 {
                    continue;
                }
                let mut rest = Interval::point(c.constant);
                for (k, x) in b.iter().enumerate() {
                    if k != j && c.coef[k] != 0.0 {
                        rest = rest.add(&x.scale(c.coef[k]));
                    }
                }
                // a·x_j ∈ [-slack - rest.hi, slack - rest.lo] as needed
                let lo_term = if ge { -slack - rest.hi } else { f64::NEG_INFINITY };
                let hi_term = if le { slack - rest.lo } else { f64::INFINITY };
                let bound = Interval::new(lo_term, hi_term).scale(1.0 / a);
                if bound.lo.is_nan() || bound.hi.is_nan() {
                    continue;
                }
                let bound = Interval::new(bound.lo - 1e-14 * bound.lo.abs(), bound.hi + 1e-14 * bound.hi.abs());
                let old = b[j];
                let new = old.meet(&bound);
                if new.is_empty() {
                    b[j] = new;
                    return false;
                }
                let tiny = 1e-12 * old.width().max(old.mag()).max(1e-300);
                if old.lo.is_infinite() && new.lo.is_finite()
                    || old.hi.is_infinite() && new.hi.is_finite()
                    || new.lo - old.lo > tiny
                    || old.hi - new.hi > tiny
                {
                    changed = true;
                }
                b[j] = new;
            }
        }
        if !changed {
            break;
        }
    }
    !box_is_empty(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contraction_bounds_a_triangle() {
        let cs = vec![
            (Lin { coef: vec![1.0, 0.0], constant: 0.0, rel: Rel::Ge }, 0.0),
            (Lin { coef: vec![0.0, 1.0], constant: 0.0, rel: Rel::Ge }, 0.0),
            (Lin { coef: vec![1.0, 1.0], constant: -1.0, rel: Rel::Le }, 0.0),
        ];
        let mut b = vec![Interval::ENTIRE; 2];
        assert!(contract(&mut b, &cs));
        assert!((b[0].lo).abs() < 1e-12 && (b[0].hi - 1.0).abs() < 1e-12);
        assert!((b[1].hi - 1.0).abs() < 1e-12);
        let mut e = vec![Interval::new(2.0, 3.0), Interval::new(0.0, 1.0)];
        assert!(!contract(&mut e, &cs));
    }

    #[test]
    fn equality_pins_a_point() {
        let cs = vec![(Lin { coef: vec![1.0], constant: -0.25, rel: Rel::Eq }, 0.0)];
        let mut b = vec![Interval::ENTIRE];
        assert!(contract(&mut b, &cs));
        assert!((b[0].lo - 0.25).abs() < 1e-12 && (b[0].hi - 0.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_image_contains_point_images(
            m in proptest::collection::vec(-3.0f64..3.0, 4),
            lo in proptest::collection::vec(-2.0f64..2.0, 2),
            w in proptest::collection::vec(0.0f64..1.0, 2),
            s in proptest::collection::vec(0.0f64..1.0, 2),
        ) {
            let mm = DMatrix::from_row_slice(2, 2, &m);
            let off = DVector::from_column_slice(&[0.5, -0.5]);
            let b: IBox = (0..2).map(|i| Interval::new(lo[i], lo[i] + w[i])).collect();
            let x: Vec<f64> = (0..2).map(|i| lo[i] + s[i] * w[i]).collect();
            let y = &mm * DVector::from_column_slice(&x) + &off;
            let img = box_widen(&affine_image(&mm, &off, &b), 1e-12, 1e-12);
            prop_assert!(box_contains_point(&img, y.as_slice(), 0.0));
        }

        #[test]
        fn contraction_keeps_satisfying_points(
            a in proptest::collection::vec(-2.0f64..2.0, 2),
            c in -1.0f64..1.0,
            x in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let lin = Lin { coef: a, constant: c, rel: Rel::Le };
            prop_assume!(lin.holds(&x));
            let mut b = vec![Interval::new(-1.0, 1.0); 2];
            prop_assert!(contract(&mut b, &[(lin, 0.0)]));
            prop_assert!(box_contains_point(&b, &x, 1e-12));
        }
    }
}
