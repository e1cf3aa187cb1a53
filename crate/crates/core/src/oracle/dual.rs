//! Forward-mode dual numbers with three tangent directions.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 3] }
    }

    /// The `i`-th input variable.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Self {
            v,
            d: self.d.map(|t| t * dv),
        }
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn atan2(self, x: Self) -> Self {
        let y = self;
        let r2 = x.v * x.v + y.v * y.v;
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = (x.v * y.d[i] - y.v * x.d[i]) / r2;
        }
        Self { v: y.v.atan2(x.v), d }
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            v: self.v * k,
            d: self.d.map(|t| t * k),
        }
    }

    pub fn offset(self, k: f64) -> Self {
        Self { v: self.v + k, d: self.d }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for Dual3 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl Div for Dual3 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = (self.d[i] * o.v - self.v * o.d[i]) / (o.v * o.v);
        }
        Self { v: self.v / o.v, d }
    }
}
