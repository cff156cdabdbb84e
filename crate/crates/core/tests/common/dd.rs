//! Minimal double-double arithmetic (about 32 significant digits).

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Dd {
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Taylor series; accurate for the moderate arguments used here.
    pub fn exp(self) -> Dd {
        assert!(self.hi.abs() < 8.0, "argument out of range");
        // Halve until small, then square back up.
        let mut x = self;
        let mut halvings = 0;
        while x.hi.abs() > 0.125 {
            x = x * Dd::from(0.5);
            halvings += 1;
        }
        let mut term = Dd::from(1.0);
        let mut sum = Dd::from(1.0);
        for k in 1..30 {
            term = term * x / Dd::from(k as f64);
            sum = sum + term;
        }
        for _ in 0..halvings {
            sum = sum * sum;
        }
        sum
    }

    pub fn sigmoid(self) -> Dd {
        Dd::from(1.0) / (Dd::from(1.0) + (-self).exp())
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p) + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

#[test]
fn dd_matches_known_values() {
    let third = Dd::from(1.0) / Dd::from(3.0);
    let back = third * Dd::from(3.0) - Dd::from(1.0);
    assert!(back.to_f64().abs() < 1e-30);
    let e = Dd::from(1.0).exp();
    assert_eq!(e.hi, std::f64::consts::E);
    // exp(a) exp(-a) = 1 to double-double accuracy.
    let a = Dd::from(1.7);
    assert!((a.exp() * (-a).exp() - Dd::from(1.0)).to_f64().abs() < 1e-29);
    assert!((Dd::from(0.0).sigmoid().to_f64() - 0.5).abs() == 0.0);
}
