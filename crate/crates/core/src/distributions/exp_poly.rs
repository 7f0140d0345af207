//! Finite sums of terms `c * y^n * e^(k*y)`.
//!
//! The set is closed under addition, multiplication, shifting the origin,
//! differentiation and integration, which is everything the distribution
//! layer needs to keep CDFs, densities and partial moments in closed form.

/// Terms with `|rate| * len` below this are expanded into a Taylor polynomial
/// before integrating, so antiderivatives never divide by a tiny rate.
const SMALL_RATE_SPAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Term {
    pub coef: f64,
    pub power: u32,
    pub rate: f64,
}

impl Term {
    fn eval(&self, y: f64) -> f64 {
        let poly = if self.power == 0 {
            1.0
        } else {
            y.powi(self.power as i32)
        };
        if self.rate == 0.0 {
            self.coef * poly
        } else {
            self.coef * poly * (self.rate * y).exp()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ExpPoly {
    terms: Vec<Term>,
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

impl ExpPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, 0, 0.0)
    }

    pub fn monomial(coef: f64, power: u32, rate: f64) -> Self {
        let mut p = Self::zero();
        p.push(Term { coef, power, rate });
        p
    }

    /// `sum_i coefs[i] * y^i`.
    pub fn polynomial(coefs: &[f64]) -> Self {
        let mut p = Self::zero();
        for (i, &c) in coefs.iter().enumerate() {
            p.push(Term {
                coef: c,
                power: i as u32,
                rate: 0.0,
            });
        }
        p
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn push(&mut self, t: Term) {
        if t.coef == 0.0 {
            return;
        }
        let rate = if t.rate == 0.0 { 0.0 } else { t.rate };
        match self
            .terms
            .iter_mut()
            .find(|s| s.power == t.power && s.rate == rate)
        {
            Some(s) => s.coef += t.coef,
            None => self.terms.push(Term { rate, ..t }),
        }
        self.terms.retain(|s| s.coef != 0.0);
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(y)).sum()
    }

    /// Limit as `y -> +inf`, if finite.
    pub fn limit_at_infinity(&self) -> Option<f64> {
        let mut acc = 0.0;
        for t in &self.terms {
            if t.rate < 0.0 {
                continue;
            }
            if t.rate == 0.0 && t.power == 0 {
                acc += t.coef;
            } else {
                return None;
            }
        }
        Some(acc)
    }

    /// Every term decays at infinity.
    pub fn decays(&self) -> bool {
        self.terms.iter().all(|t| t.rate < 0.0)
    }

    pub fn scale(&self, f: f64) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            out.push(Term {
                coef: t.coef * f,
                ..*t
            });
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for t in &other.terms {
            out.push(*t);
        }
        out
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.add(&Self::constant(c))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for a in &self.terms {
            for b in &other.terms {
                out.push(Term {
                    coef: a.coef * b.coef,
                    power: a.power + b.power,
                    rate: a.rate + b.rate,
                });
            }
        }
        out
    }

    /// Multiplies by `y`.
    pub fn mul_y(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            out.push(Term {
                power: t.power + 1,
                ..*t
            });
        }
        out
    }

    pub fn derivative(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            if t.power > 0 {
                out.push(Term {
                    coef: t.coef * f64::from(t.power),
                    power: t.power - 1,
                    rate: t.rate,
                });
            }
            if t.rate != 0.0 {
                out.push(Term {
                    coef: t.coef * t.rate,
                    ..*t
                });
            }
        }
        out
    }

    /// Re-expresses the function in a coordinate whose origin is `d` to the
    /// right: returns `q` with `q(y) = p(y + d)`.
    pub fn shift(&self, d: f64) -> Self {
        if d == 0.0 {
            return self.clone();
        }
        let mut out = Self::zero();
        for t in &self.terms {
            let base = if t.rate == 0.0 {
                t.coef
            } else {
                t.coef * (t.rate * d).exp()
            };
            for j in 0..=t.power {
                out.push(Term {
                    coef: base * binomial(t.power, j) * d.powi((t.power - j) as i32),
                    power: j,
                    rate: t.rate,
                });
            }
        }
        out
    }

    /// Density of the variable stretched by `c`: returns `q` with
    /// `q(y) = p(y / c) / c`.
    pub fn rescale(&self, c: f64) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            out.push(Term {
                coef: t.coef / c.powi(t.power as i32 + 1),
                power: t.power,
                rate: t.rate / c,
            });
        }
        out
    }

    /// Replaces slowly varying exponentials by their Taylor polynomials,
    /// accurate to machine precision on `[0, len]`.
    pub fn conditioned(&self, len: f64) -> Self {
        if !len.is_finite() {
            return self.clone();
        }
        let mut out = Self::zero();
        for t in &self.terms {
            let span = t.rate.abs() * len;
            if t.rate == 0.0 || span >= SMALL_RATE_SPAN {
                out.push(*t);
                continue;
            }
            let mut factor = 1.0;
            let mut m = 0u32;
            loop {
                out.push(Term {
                    coef: t.coef * factor,
                    power: t.power + m,
                    rate: 0.0,
                });
                m += 1;
                factor *= t.rate / f64::from(m);
                if (factor * len.powi(m as i32)).abs() < 1e-19 || m > 60 {
                    break;
                }
            }
        }
        out
    }

    /// An antiderivative (no conditioning applied).
    pub fn antiderivative(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            if t.rate == 0.0 {
                out.push(Term {
                    coef: t.coef / f64::from(t.power + 1),
                    power: t.power + 1,
                    rate: 0.0,
                });
                continue;
            }
            // d/dy [e^{ky} sum_j (-1)^j n!/(n-j)! y^{n-j} / k^{j+1}] = y^n e^{ky}
            let mut falling = 1.0;
            let mut inv_k_pow = 1.0 / t.rate;
            for j in 0..=t.power {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Term {
                    coef: t.coef * sign * falling * inv_k_pow,
                    power: t.power - j,
                    rate: t.rate,
                });
                falling *= f64::from(t.power - j);
                inv_k_pow /= t.rate;
            }
        }
        out
    }

    /// `int_a^b p(y) dy` for `0 <= a <= b`, `b` possibly infinite.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = self.conditioned(b).antiderivative();
        let upper = if b.is_infinite() {
            anti.limit_at_infinity().unwrap_or(f64::INFINITY)
        } else {
            anti.eval(b)
        };
        upper - anti.eval(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + h * i as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn integrate_matches_simpson_on_mixed_terms() {
        let p = ExpPoly::monomial(2.0, 2, -1.5)
            .add(&ExpPoly::monomial(0.3, 1, 0.7))
            .add(&ExpPoly::polynomial(&[1.0, -0.2, 0.05]));
        let exact = p.integrate(0.0, 3.0);
        let approx = simpson(|y| p.eval(y), 0.0, 3.0, 20_000);
        assert!((exact - approx).abs() < 1e-10, "{exact} vs {approx}");
    }

    #[test]
    fn integrate_to_infinity() {
        // int_0^inf y e^{-y} dy = 1
        let p = ExpPoly::monomial(1.0, 1, -1.0);
        assert!((p.integrate(0.0, f64::INFINITY) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_rate_is_well_conditioned() {
        let k = 1e-9;
        let p = ExpPoly::monomial(1.0, 3, k);
        // int_0^1 y^3 e^{ky} ~ 1/4 + k/5
        let v = p.integrate(0.0, 1.0);
        assert!((v - (0.25 + k / 5.0)).abs() < 1e-15, "{v}");
    }

    #[test]
    fn shift_and_derivative_agree_with_evaluation() {
        let p = ExpPoly::monomial(1.5, 3, 0.4).add(&ExpPoly::constant(2.0));
        let q = p.shift(0.75);
        for &y in &[0.0, 0.3, 1.7] {
            assert!((q.eval(y) - p.eval(y + 0.75)).abs() < 1e-12);
        }
        let d = p.derivative();
        let h = 1e-6;
        let fd = (p.eval(1.0 + h) - p.eval(1.0 - h)) / (2.0 * h);
        assert!((d.eval(1.0) - fd).abs() < 1e-6);
    }

    #[test]
    fn products_merge_like_terms() {
        let a = ExpPoly::constant(1.0).add(&ExpPoly::monomial(-1.0, 0, -1.0));
        let sq = a.mul(&a);
        // (1 - e^-y)^2 = 1 - 2e^-y + e^-2y
        assert_eq!(sq.terms().len(), 3);
        assert!((sq.eval(0.5) - (1.0 - (-0.5f64).exp()).powi(2)).abs() < 1e-15);
    }
}
