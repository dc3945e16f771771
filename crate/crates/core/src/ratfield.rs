//! Complex scalars over MPFR, dense polynomials, rational functions in `z`,
//! matrices over them, and an evaluation-based identity tester.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::float::Constant;
use rug::ops::Pow;
use rug::Float;
use serde_json::{json, Value};

use crate::{Ctx, Error, Result};

fn fl<T>(prec: u32, v: T) -> Float
where
    Float: rug::Assign<T>,
{
    Float::with_val(prec, v)
}

pub fn pi(prec: u32) -> Float {
    Float::with_val(prec, Constant::Pi)
}

fn parse_real(prec: u32, s: &str) -> Result<Float> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a = parse_real(prec, a)?;
        let b = parse_real(prec, b)?;
        if b.is_zero() {
            return Err(Error::Input(format!("zero denominator in '{s}'")));
        }
        return Ok(a / b);
    }
    let p = Float::parse(s).map_err(|e| Error::Input(format!("bad number '{s}': {e}")))?;
    Ok(Float::with_val(prec, p))
}

fn decimal_digits(prec: u32) -> usize {
    (prec as f64 * std::f64::consts::LOG10_2).ceil() as usize + 1
}

fn real_to_string(x: &Float) -> String {
    if x.is_zero() {
        return "0".to_string();
    }
    x.to_string_radix(10, Some(decimal_digits(x.prec())))
}

// ---------------------------------------------------------------------------
// Scalar

/// Arbitrary-precision complex number.
#[derive(Clone, Debug)]
pub struct Scalar {
    pub re: Float,
    pub im: Float,
}

impl Scalar {
    pub fn zero(prec: u32) -> Self {
        Scalar { re: fl(prec, 0), im: fl(prec, 0) }
    }

    pub fn one(prec: u32) -> Self {
        Scalar { re: fl(prec, 1), im: fl(prec, 0) }
    }

    pub fn from_f64(prec: u32, re: f64, im: f64) -> Self {
        Scalar { re: fl(prec, re), im: fl(prec, im) }
    }

    pub fn real(prec: u32, re: f64) -> Self {
        Self::from_f64(prec, re, 0.0)
    }

    pub fn from_int(prec: u32, n: i64) -> Self {
        Scalar { re: fl(prec, n), im: fl(prec, 0) }
    }

    /// `n / d` rounded once to the working precision.
    pub fn ratio(prec: u32, n: i64, d: i64) -> Self {
        let mut re = fl(prec, n);
        re /= d;
        Scalar { re, im: fl(prec, 0) }
    }

    pub fn from_c64(prec: u32, z: Complex64) -> Self {
        Self::from_f64(prec, z.re, z.im)
    }

    /// Parses decimal strings; `"a/b"` fractions are also accepted.
    pub fn parse(prec: u32, re: &str, im: &str) -> Result<Self> {
        Ok(Scalar { re: parse_real(prec, re)?, im: parse_real(prec, im)? })
    }

    pub fn prec(&self) -> u32 {
        self.re.prec()
    }

    pub fn with_prec(&self, prec: u32) -> Self {
        Scalar { re: fl(prec, &self.re), im: fl(prec, &self.im) }
    }

    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    pub fn is_exact_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn abs(&self) -> Float {
        self.re.clone().hypot(&self.im)
    }

    pub fn abs_f64(&self) -> f64 {
        self.abs().to_f64()
    }

    pub fn norm_sqr(&self) -> Float {
        let p = self.prec();
        fl(p, &self.re * &self.re) + fl(p, &self.im * &self.im)
    }

    /// Distance `|a − b|` as `f64`.
    pub fn dist(&self, o: &Scalar) -> f64 {
        (self - o).abs_f64()
    }

    /// `|a − b| / max(|a|, |b|)`, zero when both vanish.
    pub fn rel_dist(&self, o: &Scalar) -> f64 {
        let d = self.dist(o);
        let s = self.abs_f64().max(o.abs_f64());
        if s == 0.0 {
            0.0
        } else {
            d / s
        }
    }

    pub fn conj(&self) -> Self {
        Scalar { re: self.re.clone(), im: -self.im.clone() }
    }

    pub fn recip(&self) -> Self {
        let p = self.prec();
        let n = self.norm_sqr();
        Scalar { re: fl(p, &self.re / &n), im: -fl(p, &self.im / &n) }
    }

    pub fn scale_real(&self, s: &Float) -> Self {
        let p = self.prec();
        Scalar { re: fl(p, &self.re * s), im: fl(p, &self.im * s) }
    }

    pub fn powi(&self, n: i64) -> Self {
        if n < 0 {
            return self.recip().powi(-n);
        }
        let mut base = self.clone();
        let mut acc = Scalar::one(self.prec());
        let mut e = n as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn exp(&self) -> Self {
        let p = self.prec();
        let m = self.re.clone().exp();
        let c = self.im.clone().cos();
        let s = self.im.clone().sin();
        Scalar { re: fl(p, &m * &c), im: fl(p, &m * &s) }
    }

    /// Principal logarithm; the cut lies along the negative real axis.
    pub fn ln(&self) -> Self {
        Scalar { re: self.abs().ln(), im: self.im.clone().atan2(&self.re) }
    }

    /// Principal square root.
    pub fn sqrt(&self) -> Self {
        let p = self.prec();
        let r = self.abs();
        let two = fl(p, 2);
        let a = (fl(p, &r + &self.re) / &two).sqrt();
        let mut b = (fl(p, &r - &self.re) / &two).sqrt();
        if self.im.is_sign_negative() {
            b = -b;
        }
        Scalar { re: a, im: b }
    }

    /// Total order by `(Re, Im)` used for deterministic reporting.
    pub fn lex_cmp(&self, o: &Scalar) -> Ordering {
        self.re
            .partial_cmp(&o.re)
            .unwrap_or(Ordering::Equal)
            .then(self.im.partial_cmp(&o.im).unwrap_or(Ordering::Equal))
    }

    pub fn to_json(&self) -> Value {
        json!({ "re": real_to_string(&self.re), "im": real_to_string(&self.im) })
    }

    pub fn from_json(prec: u32, v: &Value) -> Result<Self> {
        match v {
            Value::Object(m) => {
                for k in m.keys() {
                    if k != "re" && k != "im" {
                        return Err(Error::Input(format!("unknown scalar field '{k}'")));
                    }
                }
                let re = m.get("re").ok_or_else(|| Error::Input("scalar missing 're'".into()))?;
                let im = m.get("im").map(json_num_str).transpose()?.unwrap_or_else(|| "0".into());
                Scalar::parse(prec, &json_num_str(re)?, &im)
            }
            Value::String(_) | Value::Number(_) => Scalar::parse(prec, &json_num_str(v)?, "0"),
            _ => Err(Error::Input(format!("expected scalar, got {v}"))),
        }
    }
}

fn json_num_str(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::Input(format!("expected number or string, got {v}"))),
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.to_c64();
        write!(f, "{}{:+}i", c.re, c.im)
    }
}

impl<'a> Add<&'a Scalar> for &'a Scalar {
    type Output = Scalar;
    fn add(self, o: &Scalar) -> Scalar {
        let p = self.prec();
        Scalar { re: fl(p, &self.re + &o.re), im: fl(p, &self.im + &o.im) }
    }
}

impl<'a> Sub<&'a Scalar> for &'a Scalar {
    type Output = Scalar;
    fn sub(self, o: &Scalar) -> Scalar {
        let p = self.prec();
        Scalar { re: fl(p, &self.re - &o.re), im: fl(p, &self.im - &o.im) }
    }
}

impl<'a> Mul<&'a Scalar> for &'a Scalar {
    type Output = Scalar;
    fn mul(self, o: &Scalar) -> Scalar {
        let p = self.prec();
        let ac = fl(p, &self.re * &o.re);
        let bd = fl(p, &self.im * &o.im);
        let ad = fl(p, &self.re * &o.im);
        let bc = fl(p, &self.im * &o.re);
        Scalar { re: ac - bd, im: ad + bc }
    }
}

impl<'a> Div<&'a Scalar> for &'a Scalar {
    type Output = Scalar;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: &Scalar) -> Scalar {
        self * &o.recip()
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar { re: -self.re.clone(), im: -self.im.clone() }
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar { re: -self.re, im: -self.im }
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<Scalar> for Scalar {
            type Output = Scalar;
            fn $m(self, o: Scalar) -> Scalar { (&self).$m(&o) }
        }
        impl<'a> $tr<&'a Scalar> for Scalar {
            type Output = Scalar;
            fn $m(self, o: &Scalar) -> Scalar { (&self).$m(o) }
        }
        impl<'a> $tr<Scalar> for &'a Scalar {
            type Output = Scalar;
            fn $m(self, o: Scalar) -> Scalar { self.$m(&o) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul, Div div);

/// Sorts in place by `(Re, Im)`.
pub fn sort_lex(v: &mut [Scalar]) {
    v.sort_by(|a, b| a.lex_cmp(b));
}

// ---------------------------------------------------------------------------
// Poly

/// Dense polynomial in `z`, coefficients in ascending degree.
///
/// The zero polynomial has an empty coefficient vector.
#[derive(Clone, Debug)]
pub struct Poly {
    prec: u32,
    c: Vec<Scalar>,
}

impl Poly {
    pub fn new(prec: u32, coeffs: Vec<Scalar>) -> Self {
        let mut p = Poly { prec, c: coeffs };
        p.trim();
        p
    }

    /// Builds without trimming (leading entries may be tiny).
    fn raw(prec: u32, coeffs: Vec<Scalar>) -> Self {
        Poly { prec, c: coeffs }
    }

    pub fn zero(prec: u32) -> Self {
        Poly { prec, c: vec![] }
    }

    pub fn one(prec: u32) -> Self {
        Poly::constant(Scalar::one(prec))
    }

    pub fn constant(s: Scalar) -> Self {
        let prec = s.prec();
        Poly::new(prec, vec![s])
    }

    /// The polynomial `z`.
    pub fn z(prec: u32) -> Self {
        Poly::new(prec, vec![Scalar::zero(prec), Scalar::one(prec)])
    }

    pub fn from_f64(prec: u32, coeffs: &[f64]) -> Self {
        Poly::new(prec, coeffs.iter().map(|&x| Scalar::real(prec, x)).collect())
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn coeffs(&self) -> &[Scalar] {
        &self.c
    }

    pub fn coeff(&self, j: usize) -> Scalar {
        self.c.get(j).cloned().unwrap_or_else(|| Scalar::zero(self.prec))
    }

    pub fn is_zero(&self) -> bool {
        self.c.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn deg(&self) -> usize {
        self.c.len().saturating_sub(1)
    }

    pub fn leading(&self) -> Scalar {
        self.c.last().cloned().unwrap_or_else(|| Scalar::zero(self.prec))
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|x| x.abs_f64()).fold(0.0, f64::max)
    }

    fn trim(&mut self) {
        let m = self.max_abs();
        let thr = m * 2f64.powf(-0.8 * self.prec as f64);
        while let Some(last) = self.c.last() {
            if last.is_exact_zero() || last.abs_f64() <= thr {
                self.c.pop();
            } else {
                break;
            }
        }
    }

    pub fn eval(&self, z: &Scalar) -> Scalar {
        let mut acc = Scalar::zero(self.prec);
        for c in self.c.iter().rev() {
            acc = &(&acc * z) + c;
        }
        acc
    }

    pub fn eval_c64(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.c.iter().rev() {
            acc = acc * z + c.to_c64();
        }
        acc
    }

    pub fn scale(&self, s: &Scalar) -> Poly {
        Poly::new(self.prec, self.c.iter().map(|c| c * s).collect())
    }

    pub fn neg(&self) -> Poly {
        Poly::raw(self.prec, self.c.iter().map(|c| -c).collect())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let n = self.c.len().max(o.c.len());
        let v = (0..n)
            .map(|j| match (self.c.get(j), o.c.get(j)) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => unreachable!(),
            })
            .collect();
        Poly::new(self.prec, v)
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero(self.prec);
        }
        let mut v = vec![Scalar::zero(self.prec); self.c.len() + o.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                v[i + j] = &v[i + j] + &(a * b);
            }
        }
        Poly::new(self.prec, v)
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut acc = Poly::one(self.prec);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// `f(a·z)`.
    pub fn q_shift(&self, a: &Scalar) -> Result<Poly> {
        if a.is_exact_zero() {
            return Err(Error::ZeroShift);
        }
        let mut pw = Scalar::one(self.prec);
        let mut v = Vec::with_capacity(self.c.len());
        for c in &self.c {
            v.push(c * &pw);
            pw = &pw * a;
        }
        Ok(Poly::new(self.prec, v))
    }

    /// `q_shift` for shifts known to be nonzero.
    pub fn shift(&self, a: &Scalar) -> Poly {
        self.q_shift(a).expect("nonzero shift")
    }

    pub fn derivative(&self) -> Poly {
        let v = self
            .c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, c)| c * &Scalar::from_int(self.prec, j as i64))
            .collect();
        Poly::new(self.prec, v)
    }

    /// Monic normalization together with the removed leading coefficient.
    pub fn monic(&self) -> (Poly, Scalar) {
        let lc = self.leading();
        if self.is_zero() {
            return (self.clone(), lc);
        }
        let inv = lc.recip();
        (self.scale(&inv), lc)
    }

    /// Long division; returns `(quotient, remainder)`.
    pub fn divrem(&self, d: &Poly) -> Result<(Poly, Poly)> {
        if d.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        if self.c.len() < d.c.len() {
            return Ok((Poly::zero(self.prec), self.clone()));
        }
        let dl = d.leading().recip();
        let mut r = self.c.clone();
        let dn = d.c.len();
        let nq = r.len() - dn + 1;
        let mut q = vec![Scalar::zero(self.prec); nq];
        for k in (0..nq).rev() {
            let t = &r[k + dn - 1] * &dl;
            for (j, dc) in d.c.iter().enumerate() {
                r[k + j] = &r[k + j] - &(&t * dc);
            }
            q[k] = t;
        }
        r.truncate(dn - 1);
        Ok((Poly::new(self.prec, q), Poly::new(self.prec, r)))
    }

    /// Product of `(z − r)` over `roots`, times `leading`.
    pub fn from_roots(roots: &[Scalar], leading: &Scalar) -> Poly {
        let prec = leading.prec();
        let mut c = vec![leading.clone()];
        for r in roots {
            let mut n = vec![Scalar::zero(prec); c.len() + 1];
            for (j, a) in c.iter().enumerate() {
                n[j + 1] = &n[j + 1] + a;
                n[j] = &n[j] - &(a * r);
            }
            c = n;
        }
        Poly::new(prec, c)
    }

    /// Maximum coefficient difference relative to the larger coefficient scale.
    pub fn rel_dist(&self, o: &Poly) -> f64 {
        let n = self.c.len().max(o.c.len());
        let s = self.max_abs().max(o.max_abs());
        if s == 0.0 {
            return 0.0;
        }
        let mut m: f64 = 0.0;
        for j in 0..n {
            m = m.max(self.coeff(j).dist(&o.coeff(j)));
        }
        m / s
    }

    /// All complex roots with multiplicity (Aberth–Ehrlich).
    pub fn roots(&self) -> Vec<Scalar> {
        aberth(self)
    }

    pub fn to_json(&self) -> Value {
        if self.c.is_empty() {
            return json!([Scalar::zero(self.prec).to_json()]);
        }
        Value::Array(self.c.iter().map(|c| c.to_json()).collect())
    }

    pub fn from_json(prec: u32, v: &Value) -> Result<Poly> {
        let a = v.as_array().ok_or_else(|| Error::Input(format!("expected coefficient array, got {v}")))?;
        let c = a.iter().map(|x| Scalar::from_json(prec, x)).collect::<Result<Vec<_>>>()?;
        Ok(Poly::new(prec, c))
    }
}

fn aberth(p: &Poly) -> Vec<Scalar> {
    let n = p.deg();
    let prec = p.prec;
    if p.is_zero() || n == 0 {
        return vec![];
    }
    let (m, _) = p.monic();
    let dm = m.derivative();
    // Cauchy-type radius for the start circle.
    let mut rad: f64 = 0.0;
    for k in 0..n {
        let a = m.c[k].abs_f64();
        if a > 0.0 {
            rad = rad.max(a.powf(1.0 / (n - k) as f64));
        }
    }
    if !rad.is_finite() || rad == 0.0 {
        rad = 1.0;
    }
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(rad, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4))
        .collect();
    let coeff_ok = m.c.iter().all(|c| c.to_c64().norm().is_finite());
    if coeff_ok {
        for _ in 0..500 {
            let mut maxw: f64 = 0.0;
            for k in 0..n {
                let pv = m.eval_c64(z[k]);
                let dv = dm.eval_c64(z[k]);
                if pv.norm() == 0.0 {
                    continue;
                }
                let w = pv / dv;
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    if j != k {
                        s += 1.0 / (z[k] - z[j]);
                    }
                }
                let corr = w / (1.0 - w * s);
                if corr.norm().is_finite() {
                    z[k] -= corr;
                    maxw = maxw.max(corr.norm() / z[k].norm().max(1.0));
                }
            }
            if maxw < 1e-15 {
                break;
            }
        }
    }
    let mut zs: Vec<Scalar> = z.iter().map(|&c| Scalar::from_c64(prec, c)).collect();
    let thr = 2f64.powf(-(prec as f64) + 6.0);
    let mut prev = f64::INFINITY;
    for it in 0..200 {
        let mut maxw: f64 = 0.0;
        for k in 0..n {
            let pv = m.eval(&zs[k]);
            if pv.is_exact_zero() {
                continue;
            }
            let dv = dm.eval(&zs[k]);
            let w = &pv / &dv;
            let mut s = Scalar::zero(prec);
            for j in 0..n {
                if j != k {
                    s = &s + &(&zs[k] - &zs[j]).recip();
                }
            }
            let den = &Scalar::one(prec) - &(&w * &s);
            let corr = &w / &den;
            if corr.is_finite() {
                zs[k] = &zs[k] - &corr;
                maxw = maxw.max(corr.abs_f64() / zs[k].abs_f64().max(1.0));
            }
        }
        if maxw < thr || (it > 20 && maxw >= prev && maxw < 1e-20) {
            break;
        }
        prev = maxw;
    }
    zs
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.c.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> =
            self.c.iter().enumerate().map(|(j, c)| format!("({c})z^{j}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// RatFunc

/// Quotient `num / den` with `den` monic.
#[derive(Clone, Debug)]
pub struct RatFunc {
    pub num: Poly,
    pub den: Poly,
}

impl RatFunc {
    /// Normalizes `den` to be monic; no cancellation.
    pub fn new(num: Poly, den: Poly) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        let (d, lc) = den.monic();
        let n = num.scale(&lc.recip());
        Ok(RatFunc { num: n, den: d })
    }

    pub fn from_poly(p: Poly) -> Self {
        let prec = p.prec();
        RatFunc { num: p, den: Poly::one(prec) }
    }

    pub fn constant(s: Scalar) -> Self {
        RatFunc::from_poly(Poly::constant(s))
    }

    pub fn zero(prec: u32) -> Self {
        RatFunc::from_poly(Poly::zero(prec))
    }

    pub fn one(prec: u32) -> Self {
        RatFunc::from_poly(Poly::one(prec))
    }

    pub fn prec(&self) -> u32 {
        self.num.prec()
    }

    pub fn is_poly(&self) -> bool {
        self.den.deg() == 0
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn total_degree(&self) -> usize {
        self.num.deg().max(self.den.deg())
    }

    pub fn eval(&self, z: &Scalar) -> Scalar {
        &self.num.eval(z) / &self.den.eval(z)
    }

    pub fn poles(&self) -> Vec<Scalar> {
        self.den.roots()
    }

    pub fn add(&self, o: &RatFunc) -> RatFunc {
        if same_poly(&self.den, &o.den) {
            return RatFunc { num: self.num.add(&o.num), den: self.den.clone() };
        }
        RatFunc {
            num: self.num.mul(&o.den).add(&o.num.mul(&self.den)),
            den: self.den.mul(&o.den),
        }
    }

    pub fn neg(&self) -> RatFunc {
        RatFunc { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn sub(&self, o: &RatFunc) -> RatFunc {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &RatFunc) -> RatFunc {
        RatFunc { num: self.num.mul(&o.num), den: self.den.mul(&o.den) }
    }

    pub fn scale(&self, s: &Scalar) -> RatFunc {
        RatFunc { num: self.num.scale(s), den: self.den.clone() }
    }

    pub fn recip(&self) -> Result<RatFunc> {
        RatFunc::new(self.den.clone(), self.num.clone())
    }

    pub fn div(&self, o: &RatFunc) -> Result<RatFunc> {
        Ok(self.mul(&o.recip()?))
    }

    /// `f(a·z)`.
    pub fn q_shift(&self, a: &Scalar) -> Result<RatFunc> {
        RatFunc::new(self.num.q_shift(a)?, self.den.q_shift(a)?)
    }

    pub fn reduce(&self, ctx: &Ctx) -> RatFunc {
        rat_reduce(&self.num, &self.den, ctx).expect("denominator is nonzero")
    }

    pub fn to_json(&self) -> Value {
        json!({ "num": self.num.to_json(), "den": self.den.to_json() })
    }

    pub fn from_json(prec: u32, v: &Value) -> Result<RatFunc> {
        let num = v.get("num").ok_or_else(|| Error::Input("ratfunc missing 'num'".into()))?;
        let den = v.get("den").ok_or_else(|| Error::Input("ratfunc missing 'den'".into()))?;
        RatFunc::new(Poly::from_json(prec, num)?, Poly::from_json(prec, den)?)
    }
}

fn same_poly(a: &Poly, b: &Poly) -> bool {
    a.c.len() == b.c.len() && a.rel_dist(b) <= 2f64.powf(-0.9 * a.prec as f64)
}

/// Cancels roots of `num` and `den` that agree within `cluster_tol`.
pub fn rat_reduce(num: &Poly, den: &Poly, ctx: &Ctx) -> Result<RatFunc> {
    let f = RatFunc::new(num.clone(), den.clone())?;
    if f.den.deg() == 0 || f.num.is_zero() {
        if f.num.is_zero() {
            return Ok(RatFunc::zero(num.prec()));
        }
        return Ok(f);
    }
    let dr = f.den.roots();
    let mut nr = f.num.roots();
    let mut matched = Vec::new();
    for d in &dr {
        let scale = d.abs_f64().max(1.0);
        let best = nr
            .iter()
            .enumerate()
            .map(|(k, n)| (k, n.dist(d)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
        if let Some((k, dist)) = best {
            if dist <= ctx.cluster_tol * scale {
                matched.push(d.clone());
                nr.swap_remove(k);
            }
        }
    }
    if matched.is_empty() {
        return Ok(f);
    }
    let common = Poly::from_roots(&matched, &Scalar::one(num.prec()));
    let (n, _) = f.num.divrem(&common)?;
    let (d, _) = f.den.divrem(&common)?;
    RatFunc::new(n, d)
}

// ---------------------------------------------------------------------------
// Numeric dense linear algebra over Scalar

/// Row-major numeric matrix.
#[derive(Clone, Debug)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub e: Vec<Scalar>,
}

impl CMat {
    pub fn zeros(prec: u32, rows: usize, cols: usize) -> Self {
        CMat { rows, cols, e: vec![Scalar::zero(prec); rows * cols] }
    }

    pub fn at(&self, r: usize, c: usize) -> &Scalar {
        &self.e[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Scalar) {
        self.e[r * self.cols + c] = v;
    }

    pub fn matmul(&self, o: &CMat) -> CMat {
        let prec = self.e.first().map(|s| s.prec()).unwrap_or(64);
        let mut out = CMat::zeros(prec, self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc = Scalar::zero(prec);
                for k in 0..self.cols {
                    acc = &acc + &(self.at(i, k) * o.at(k, j));
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn det(&self) -> Scalar {
        det_numeric(self)
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_numeric(m: &CMat) -> Scalar {
    let n = m.rows;
    let prec = m.e.first().map(|s| s.prec()).unwrap_or(64);
    let mut a = m.e.clone();
    let mut det = Scalar::one(prec);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs_f64();
        for r in col + 1..n {
            let v = a[r * n + col].abs_f64();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if a[piv * n + col].is_exact_zero() {
            return Scalar::zero(prec);
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            det = -det;
        }
        let p = a[col * n + col].clone();
        det = &det * &p;
        let pinv = p.recip();
        for r in col + 1..n {
            let f = &a[r * n + col] * &pinv;
            if f.is_exact_zero() {
                continue;
            }
            for c in col..n {
                let t = &f * &a[col * n + c];
                a[r * n + c] = &a[r * n + c] - &t;
            }
        }
    }
    det
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinSolveError {
    /// Rank below the number of unknowns.
    Singular,
    /// Least-norm residual above tolerance; the value is the relative residual.
    Inconsistent(f64),
}

/// Solves a possibly overdetermined system `A x = b` that is expected to be
/// exactly consistent.
pub fn solve_consistent(a: &CMat, b: &[Scalar], ctx: &Ctx) -> std::result::Result<Vec<Scalar>, LinSolveError> {
    let (m, n) = (a.rows, a.cols);
    let prec = ctx.prec;
    if n == 0 {
        let r = b.iter().map(|x| x.abs_f64()).fold(0.0, f64::max);
        return if r == 0.0 { Ok(vec![]) } else { Err(LinSolveError::Inconsistent(1.0)) };
    }
    let mut w: Vec<Vec<Scalar>> = (0..m)
        .map(|r| {
            let mut row: Vec<Scalar> = (0..n).map(|c| a.at(r, c).clone()).collect();
            row.push(b[r].clone());
            row
        })
        .collect();
    let scale = a.e.iter().map(|x| x.abs_f64()).fold(0.0, f64::max);
    if scale == 0.0 || m < n {
        return Err(LinSolveError::Singular);
    }
    let thr = scale * ctx.rank_tol();
    for col in 0..n {
        let mut piv = col;
        let mut best = -1.0;
        for (r, row) in w.iter().enumerate().skip(col) {
            let v = row[col].abs_f64();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= thr {
            return Err(LinSolveError::Singular);
        }
        w.swap(col, piv);
        let pinv = w[col][col].recip();
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = &w[r][col] * &pinv;
            if f.is_exact_zero() {
                continue;
            }
            for c in col..=n {
                let t = &f * &w[col][c];
                w[r][c] = &w[r][c] - &t;
            }
        }
    }
    let x: Vec<Scalar> = (0..n).map(|i| &w[i][n] / &w[i][i]).collect();
    // residual against the original system
    let xs = x.iter().map(|v| v.abs_f64()).fold(0.0, f64::max);
    let bs = b.iter().map(|v| v.abs_f64()).fold(0.0, f64::max);
    let mut res: f64 = 0.0;
    for r in 0..m {
        let mut acc = Scalar::zero(prec);
        for (c, xc) in x.iter().enumerate() {
            acc = &acc + &(a.at(r, c) * xc);
        }
        res = res.max(acc.dist(&b[r]));
    }
    let denom = scale * xs + bs;
    let rel = if denom == 0.0 { 0.0 } else { res / denom };
    if rel > ctx.tol {
        return Err(LinSolveError::Inconsistent(rel));
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// RFMatrix

/// Row-major matrix over [`RatFunc`].
#[derive(Clone, Debug)]
pub struct RFMatrix {
    pub rows: usize,
    pub cols: usize,
    pub e: Vec<RatFunc>,
}

impl RFMatrix {
    pub fn zeros(prec: u32, rows: usize, cols: usize) -> Self {
        RFMatrix { rows, cols, e: vec![RatFunc::zero(prec); rows * cols] }
    }

    pub fn identity(prec: u32, n: usize) -> Self {
        let mut m = RFMatrix::zeros(prec, n, n);
        for i in 0..n {
            m.set(i, i, RatFunc::one(prec));
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> RatFunc) -> Self {
        let mut e = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                e.push(f(r, c));
            }
        }
        RFMatrix { rows, cols, e }
    }

    pub fn diagonal(d: &[RatFunc]) -> Self {
        let prec = d.first().map(|x| x.prec()).unwrap_or(64);
        let mut m = RFMatrix::zeros(prec, d.len(), d.len());
        for (i, x) in d.iter().enumerate() {
            m.set(i, i, x.clone());
        }
        m
    }

    pub fn prec(&self) -> u32 {
        self.e.first().map(|x| x.prec()).unwrap_or(64)
    }

    pub fn get(&self, r: usize, c: usize) -> &RatFunc {
        &self.e[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: RatFunc) {
        self.e[r * self.cols + c] = v;
    }

    pub fn matmul(&self, o: &RFMatrix) -> Result<RFMatrix> {
        if self.cols != o.rows {
            return Err(Error::Shape(format!("{}x{} times {}x{}", self.rows, self.cols, o.rows, o.cols)));
        }
        let prec = self.prec();
        Ok(RFMatrix::from_fn(self.rows, o.cols, |i, j| {
            let mut acc = RatFunc::zero(prec);
            for k in 0..self.cols {
                let a = self.get(i, k);
                let b = o.get(k, j);
                if a.is_zero() || b.is_zero() {
                    continue;
                }
                acc = acc.add(&a.mul(b));
            }
            acc
        }))
    }

    pub fn sub(&self, o: &RFMatrix) -> Result<RFMatrix> {
        if self.rows != o.rows || self.cols != o.cols {
            return Err(Error::Shape("subtraction of unequal shapes".into()));
        }
        Ok(RFMatrix { rows: self.rows, cols: self.cols, e: self.e.iter().zip(&o.e).map(|(a, b)| a.sub(b)).collect() })
    }

    pub fn q_shift(&self, a: &Scalar) -> Result<RFMatrix> {
        let e = self.e.iter().map(|x| x.q_shift(a)).collect::<Result<Vec<_>>>()?;
        Ok(RFMatrix { rows: self.rows, cols: self.cols, e })
    }

    pub fn scale(&self, s: &Scalar) -> RFMatrix {
        RFMatrix { rows: self.rows, cols: self.cols, e: self.e.iter().map(|x| x.scale(s)).collect() }
    }

    pub fn eval(&self, z: &Scalar) -> CMat {
        CMat { rows: self.rows, cols: self.cols, e: self.e.iter().map(|x| x.eval(z)).collect() }
    }

    pub fn poles(&self) -> Vec<Scalar> {
        let mut v = Vec::new();
        for x in &self.e {
            if !x.is_poly() {
                v.extend(x.poles());
            }
        }
        v
    }

    /// Submatrix keeping the listed rows and columns (0-based, in order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> RFMatrix {
        RFMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]).clone())
    }

    /// Determinant of the matrix with the given rows and columns removed
    /// (`M^a_b`: row `a`, column `b` deleted; 0-based).
    pub fn minor(&self, rows_removed: &[usize], cols_removed: &[usize]) -> Result<RatFunc> {
        for &r in rows_removed {
            if r >= self.rows {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
        }
        for &c in cols_removed {
            if c >= self.cols {
                return Err(Error::Shape(format!("column {c} out of range")));
            }
        }
        let rows: Vec<usize> = (0..self.rows).filter(|r| !rows_removed.contains(r)).collect();
        let cols: Vec<usize> = (0..self.cols).filter(|c| !cols_removed.contains(c)).collect();
        self.submatrix(&rows, &cols).det()
    }

    /// Division-free expansion for `n ≤ 6`, evaluation–interpolation above.
    pub fn det(&self) -> Result<RatFunc> {
        if self.rows != self.cols {
            return Err(Error::Shape(format!("determinant of {}x{}", self.rows, self.cols)));
        }
        if self.rows <= 6 {
            Ok(self.det_expand())
        } else {
            Ok(self.det_interp())
        }
    }

    /// Sum over permutations, memoised on the set of used columns.
    pub fn det_expand(&self) -> RatFunc {
        let n = self.rows;
        let prec = self.prec();
        if n == 0 {
            return RatFunc::one(prec);
        }
        // f[mask] = signed sum over assignments of the first popcount(mask) rows to `mask`
        let mut f: Vec<Option<RatFunc>> = vec![None; 1 << n];
        f[0] = Some(RatFunc::one(prec));
        for mask in 0usize..(1 << n) {
            let Some(cur) = f[mask].clone() else { continue };
            let row = mask.count_ones() as usize;
            if row == n {
                continue;
            }
            for c in 0..n {
                if mask & (1 << c) != 0 {
                    continue;
                }
                let a = self.get(row, c);
                if a.is_zero() {
                    continue;
                }
                // sign = (-1)^(number of used columns greater than c)
                let above = (mask >> (c + 1)).count_ones();
                let mut t = cur.mul(a);
                if above % 2 == 1 {
                    t = t.neg();
                }
                let nm = mask | (1 << c);
                f[nm] = Some(match f[nm].take() {
                    Some(x) => x.add(&t),
                    None => t,
                });
            }
        }
        f[(1 << n) - 1].clone().unwrap_or_else(|| RatFunc::zero(prec))
    }

    /// Clears denominators row by row, interpolates the numerator on roots of unity.
    pub fn det_interp(&self) -> RatFunc {
        let n = self.rows;
        let prec = self.prec();
        let mut rows_poly: Vec<Vec<Poly>> = Vec::with_capacity(n);
        let mut den_total = Poly::one(prec);
        let mut degsum = 0usize;
        for r in 0..n {
            let dens: Vec<Poly> = (0..n).map(|c| self.get(r, c).den.clone()).collect();
            let mut lcm = Poly::one(prec);
            let mut uniq: Vec<Poly> = Vec::new();
            for d in &dens {
                if d.deg() == 0 || uniq.iter().any(|u| same_poly(u, d)) {
                    continue;
                }
                uniq.push(d.clone());
                lcm = lcm.mul(d);
            }
            let row: Vec<Poly> = (0..n)
                .map(|c| {
                    let e = self.get(r, c);
                    let mut p = e.num.clone();
                    if e.den.deg() > 0 {
                        let mut skipped = false;
                        for u in &uniq {
                            if !skipped && same_poly(u, &e.den) {
                                skipped = true;
                                continue;
                            }
                            p = p.mul(u);
                        }
                    } else {
                        p = p.mul(&lcm);
                    }
                    p
                })
                .collect();
            degsum += row.iter().map(|p| p.deg()).max().unwrap_or(0);
            den_total = den_total.mul(&lcm);
            rows_poly.push(row);
        }
        let npts = degsum + 1;
        let tau = fl(prec, pi(prec) * 2u32);
        let vals: Vec<Scalar> = (0..npts)
            .map(|k| {
                let th = fl(prec, &tau * k as u32) / npts as u32;
                let z = Scalar { re: th.clone().cos(), im: th.sin() };
                let mut m = CMat::zeros(prec, n, n);
                for (r, row) in rows_poly.iter().enumerate() {
                    for (c, p) in row.iter().enumerate() {
                        m.set(r, c, p.eval(&z));
                    }
                }
                det_numeric(&m)
            })
            .collect();
        let mut coeffs = Vec::with_capacity(npts);
        for j in 0..npts {
            let mut acc = Scalar::zero(prec);
            for (k, v) in vals.iter().enumerate() {
                let th = -fl(prec, &tau * ((j * k) % npts) as u32) / npts as u32;
                let w = Scalar { re: th.clone().cos(), im: th.sin() };
                acc = &acc + &(v * &w);
            }
            coeffs.push(acc.scale_real(&(fl(prec, 1) / npts as u32)));
        }
        RatFunc { num: Poly::new(prec, coeffs), den: den_total }
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = (0..self.rows)
            .map(|r| Value::Array((0..self.cols).map(|c| self.get(r, c).to_json()).collect()))
            .collect();
        Value::Array(rows)
    }
}

// ---------------------------------------------------------------------------
// Identity testing

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdentityReport {
    pub pass: bool,
    pub max_residual: f64,
}

impl IdentityReport {
    pub fn from_residual(r: f64, tol: f64) -> Self {
        IdentityReport { pass: r <= tol, max_residual: r }
    }

    pub fn merge(self, o: IdentityReport) -> IdentityReport {
        IdentityReport { pass: self.pass && o.pass, max_residual: self.max_residual.max(o.max_residual) }
    }

    pub fn trivial() -> Self {
        IdentityReport { pass: true, max_residual: 0.0 }
    }
}

/// Fixed seed so every check is reproducible.
const SAMPLE_SEED: u64 = 0x5eed_0f_9e7a;

/// `n` jittered points on a circle `|z| = R` whose radius keeps every pole at
/// least `10⁻³·R` away.
pub fn sample_points(poles: &[Scalar], n: usize, prec: u32) -> Result<Vec<Scalar>> {
    let radii = (0..64).map(|k| {
        let e = if k % 2 == 0 { k / 2 } else { -((k + 1) / 2) };
        1.25f64.powi(e)
    });
    let pole_abs: Vec<f64> = poles.iter().map(|p| p.abs_f64()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    for rad in radii {
        if pole_abs.iter().all(|&a| (a - rad).abs() > 1e-3 * rad) {
            let tau = fl(prec, pi(prec) * 2u32);
            return Ok((0..n)
                .map(|k| {
                    let u: f64 = rng.gen_range(0.1..0.9);
                    let th = fl(prec, &tau * (k as f64 + u)) / n as u32;
                    let r = fl(prec, rad);
                    Scalar { re: fl(prec, &r * &th.clone().cos()), im: fl(prec, &r * &th.sin()) }
                })
                .collect());
        }
    }
    Err(Error::ResampleExhausted)
}

/// Evaluates `lhs − rhs` at sampled points; residual is relative to `max(|lhs|, |rhs|)`.
pub fn identity_test(lhs: &RatFunc, rhs: &RatFunc, n_points: usize, ctx: &Ctx) -> Result<IdentityReport> {
    let mut poles = lhs.poles();
    poles.extend(rhs.poles());
    let need = lhs.total_degree().max(rhs.total_degree()) + 1;
    let pts = sample_points(&poles, n_points.max(need), ctx.prec)?;
    let mut m: f64 = 0.0;
    for z in &pts {
        m = m.max(lhs.eval(z).rel_dist(&rhs.eval(z)));
    }
    Ok(IdentityReport::from_residual(m, ctx.tol))
}

/// Term-normalized check of `Σ_k t_k(z) = 0`: residual `|Σ t_k| / max_k |t_k|`.
pub fn check_terms<F>(n_points: usize, poles: &[Scalar], ctx: &Ctx, f: F) -> Result<IdentityReport>
where
    F: Fn(&Scalar) -> Vec<Scalar>,
{
    let pts = sample_points(poles, n_points, ctx.prec)?;
    let mut m: f64 = 0.0;
    for z in &pts {
        m = m.max(term_residual(&f(z)));
    }
    Ok(IdentityReport::from_residual(m, ctx.tol))
}

pub fn term_residual(terms: &[Scalar]) -> f64 {
    let prec = terms.first().map(|t| t.prec()).unwrap_or(64);
    let mut s = Scalar::zero(prec);
    let mut mx: f64 = 0.0;
    for t in terms {
        s = &s + t;
        mx = mx.max(t.abs_f64());
    }
    if mx == 0.0 {
        0.0
    } else {
        s.abs_f64() / mx
    }
}

/// Entrywise check that two matrix-valued functions agree.
pub fn check_matrix_fn<F>(n_points: usize, poles: &[Scalar], ctx: &Ctx, f: F) -> Result<IdentityReport>
where
    F: Fn(&Scalar) -> (CMat, CMat),
{
    let pts = sample_points(poles, n_points, ctx.prec)?;
    let mut m: f64 = 0.0;
    for z in &pts {
        let (a, b) = f(z);
        for (x, y) in a.e.iter().zip(&b.e) {
            m = m.max(x.rel_dist(y));
        }
    }
    Ok(IdentityReport::from_residual(m, ctx.tol))
}

/// Term-normalized residual of `A·B = C`, entry by entry.
pub fn product_residual(a: &CMat, b: &CMat, c: &CMat) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut terms: Vec<Scalar> = (0..a.cols).map(|k| a.at(i, k) * b.at(k, j)).collect();
            terms.push(-c.at(i, j));
            m = m.max(term_residual(&terms));
        }
    }
    m
}

/// Maximum of a pointwise residual over sampled points.
pub fn check_points<F>(n_points: usize, poles: &[Scalar], ctx: &Ctx, f: F) -> Result<IdentityReport>
where
    F: Fn(&Scalar) -> f64,
{
    let pts = sample_points(poles, n_points, ctx.prec)?;
    let m = pts.iter().map(f).fold(0.0, f64::max);
    Ok(IdentityReport::from_residual(m, ctx.tol))
}

/// Float power helper kept here so callers need not import `rug::ops::Pow`.
pub fn float_pow(x: &Float, e: i32) -> Float {
    x.clone().pow(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 192;

    fn s(x: f64) -> Scalar {
        Scalar::real(P, x)
    }

    fn ctx() -> Ctx {
        Ctx::new(P)
    }

    #[test]
    fn from_roots_examples() {
        let p = Poly::from_roots(&[s(1.0), s(2.0)], &s(1.0));
        assert!(p.rel_dist(&Poly::from_f64(P, &[2.0, -3.0, 1.0])) < 1e-50);
        let c = Poly::from_roots(&[], &s(5.0));
        assert_eq!(c.deg(), 0);
        assert!(c.coeff(0).dist(&s(5.0)) < 1e-50);
        let i = Scalar::from_f64(P, 0.0, 1.0);
        let q = Poly::from_roots(&[i.clone(), -&i], &s(1.0));
        assert!(q.rel_dist(&Poly::from_f64(P, &[1.0, 0.0, 1.0])) < 1e-50);
    }

    #[test]
    fn q_shift_examples() {
        let f = Poly::from_f64(P, &[1.0, 0.0, 1.0]);
        assert!(f.q_shift(&s(2.0)).unwrap().rel_dist(&Poly::from_f64(P, &[1.0, 0.0, 4.0])) < 1e-50);
        let c = Poly::constant(s(3.5));
        assert!(c.q_shift(&s(7.0)).unwrap().rel_dist(&c) == 0.0);
        assert_eq!(f.q_shift(&Scalar::zero(P)).unwrap_err(), Error::ZeroShift);
        let g = RatFunc::new(Poly::z(P), Poly::from_f64(P, &[-1.0, 1.0])).unwrap();
        let q = Scalar::from_f64(P, 1.3, 0.4);
        let back = g.q_shift(&q).unwrap().q_shift(&q.recip()).unwrap();
        assert!(identity_test(&back, &g, 8, &ctx()).unwrap().pass);
    }

    #[test]
    fn reduce_examples() {
        let c = ctx();
        let r = rat_reduce(&Poly::from_f64(P, &[-1.0, 0.0, 1.0]), &Poly::from_f64(P, &[-1.0, 1.0]), &c).unwrap();
        assert!(r.is_poly());
        assert!(r.num.rel_dist(&Poly::from_f64(P, &[1.0, 1.0])) < 1e-40);
        let r = rat_reduce(&Poly::from_f64(P, &[0.0, 2.0]), &Poly::from_f64(P, &[2.0]), &c).unwrap();
        assert!(r.num.rel_dist(&Poly::z(P)) < 1e-50);
        // ε below cluster_tol collapses to the ε = 0 reduction, which is 1
        let eps = c.cluster_tol * 1e-3;
        let r = rat_reduce(&Poly::from_f64(P, &[-1.0, 1.0]), &Poly::from_f64(P, &[-1.0 - eps, 1.0]), &c).unwrap();
        assert!(r.is_poly());
        assert!((r.num.coeff(0).abs_f64() - 1.0).abs() < 1e-12);
        assert_eq!(rat_reduce(&Poly::one(P), &Poly::zero(P), &c).unwrap_err(), Error::ZeroDenominator);
    }

    #[test]
    fn reduce_idempotent() {
        let c = ctx();
        let n = Poly::from_roots(&[s(1.0), s(3.0), s(-2.0)], &s(2.0));
        let d = Poly::from_roots(&[s(3.0), s(0.5)], &s(1.0));
        let r1 = rat_reduce(&n, &d, &c).unwrap();
        let r2 = r1.reduce(&c);
        assert_eq!(r1.den.deg(), 1);
        assert!(r1.num.rel_dist(&r2.num) < 1e-40 && r1.den.rel_dist(&r2.den) < 1e-40);
    }

    #[test]
    fn det_examples() {
        let id = RFMatrix::identity(P, 3);
        let d = id.det().unwrap();
        assert!(d.num.rel_dist(&Poly::one(P)) < 1e-50);
        let mut u = RFMatrix::zeros(P, 2, 2);
        u.set(0, 0, RatFunc::from_poly(Poly::z(P)));
        u.set(0, 1, RatFunc::from_poly(Poly::from_f64(P, &[7.0, 1.0, 3.0])));
        u.set(1, 1, RatFunc::from_poly(Poly::from_f64(P, &[1.0, 1.0])));
        let d = u.det().unwrap();
        assert!(d.num.rel_dist(&Poly::from_f64(P, &[0.0, 1.0, 1.0])) < 1e-50);
        // Desnanot–Jacobi on the identity: M^1_1 M^2_3 − M^1_3 M^2_1 = M^{12}_{13} det M
        let m11 = id.minor(&[0], &[0]).unwrap();
        let m23 = id.minor(&[1], &[2]).unwrap();
        let m13 = id.minor(&[0], &[2]).unwrap();
        let m21 = id.minor(&[1], &[0]).unwrap();
        let m1213 = id.minor(&[0, 1], &[0, 2]).unwrap();
        let lhs = m11.mul(&m23).sub(&m13.mul(&m21));
        let rhs = m1213.mul(&d);
        assert!(lhs.is_zero() && rhs.is_zero() || identity_test(&lhs, &rhs, 4, &ctx()).unwrap().pass);
        assert!(matches!(RFMatrix::zeros(P, 2, 3).det(), Err(Error::Shape(_))));
    }

    #[test]
    fn det_interp_matches_expansion() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let mut co = vec![];
        for _ in 0..n * n {
            co.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        let m = RFMatrix::from_fn(n, n, |i, j| RatFunc::from_poly(Poly::from_f64(P, &co[i * n + j])));
        // make entries distinct
        let m = RFMatrix::from_fn(n, n, |i, j| {
            let base = m.get(i, j).clone();
            let t = Poly::from_f64(P, &[(i * 7 + j * 3) as f64 * 0.1 - 1.0, ((i + 2 * j) % 5) as f64 * 0.3]);
            let den = if (i + j) % 3 == 0 { Poly::from_f64(P, &[0.5 + i as f64, 1.0]) } else { Poly::one(P) };
            RatFunc::new(base.num.add(&t), den).unwrap()
        });
        let a = m.det_expand();
        let b = m.det_interp();
        let r = identity_test(&a, &b, 10, &c).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn identity_test_examples() {
        let c = ctx();
        let z2 = RatFunc::from_poly(Poly::from_f64(P, &[0.0, 0.0, 1.0]));
        let r = identity_test(&z2, &z2, 3, &c).unwrap();
        assert!(r.pass && r.max_residual == 0.0);
        let l = RatFunc::new(Poly::from_f64(P, &[-1.0, 0.0, 1.0]), Poly::from_f64(P, &[-1.0, 1.0])).unwrap();
        let rr = RatFunc::from_poly(Poly::from_f64(P, &[1.0, 1.0]));
        assert!(identity_test(&l, &rr, 4, &c).unwrap().pass);
        let z2e = RatFunc::from_poly(Poly::from_f64(P, &[1e-5, 0.0, 1.0]));
        let r = identity_test(&z2, &z2e, 3, &c.with_tol(1e-10)).unwrap();
        assert!(!r.pass);
        assert!(r.max_residual > 0.5e-5 && r.max_residual < 2e-5, "{}", r.max_residual);
    }

    #[test]
    fn aberth_recovers_roots() {
        let roots = [s(1.0), Scalar::from_f64(P, 0.3, -2.0), s(-4.5), Scalar::from_f64(P, 0.0, 0.7)];
        let p = Poly::from_roots(&roots, &Scalar::from_f64(P, 2.0, 1.0));
        let mut got = p.roots();
        sort_lex(&mut got);
        let mut want = roots.to_vec();
        sort_lex(&mut want);
        for (a, b) in got.iter().zip(&want) {
            assert!(a.dist(b) < 1e-50, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_transcendentals() {
        let z = Scalar::from_f64(P, 0.3, -1.2);
        assert!(z.ln().exp().dist(&z) < 1e-55);
        assert!((&z.sqrt() * &z.sqrt()).dist(&z) < 1e-55);
        assert!(z.powi(-3).dist(&(&z * &(&z * &z)).recip()) < 1e-55);
        let j = z.to_json();
        assert!(Scalar::from_json(P, &j).unwrap().dist(&z) < 1e-55);
        let h = Scalar::parse(P, "17/8", "0").unwrap();
        assert_eq!(h.to_c64().re, 2.125);
    }

    #[test]
    fn solve_consistent_detects_rank() {
        let c = ctx();
        let mut a = CMat::zeros(P, 3, 2);
        a.set(0, 0, s(1.0));
        a.set(1, 1, s(2.0));
        a.set(2, 0, s(1.0));
        a.set(2, 1, s(1.0));
        let x = solve_consistent(&a, &[s(1.0), s(4.0), s(3.0)], &c).unwrap();
        assert!(x[0].dist(&s(1.0)) < 1e-50 && x[1].dist(&s(2.0)) < 1e-50);
        assert!(matches!(solve_consistent(&a, &[s(1.0), s(4.0), s(5.0)], &c), Err(LinSolveError::Inconsistent(_))));
        let mut b = CMat::zeros(P, 2, 2);
        b.set(0, 0, s(1.0));
        b.set(1, 0, s(1.0));
        assert!(matches!(solve_consistent(&b, &[s(1.0), s(1.0)], &c), Err(LinSolveError::Singular)));
    }
}
