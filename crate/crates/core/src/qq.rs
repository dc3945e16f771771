//! QQ-system data, Bethe equations and their solver, extended-QQ chains,
//! Bäcklund moves and nondegeneracy checks for SL(r+1).
//!
//! Nodes are 1-based throughout: `i ∈ 1..=r`, with `Q⁺_0 = Q⁺_{r+1} = 1`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ratfield::{check_terms, solve_consistent, sort_lex, CMat, IdentityReport, LinSolveError, Poly, Scalar};
use crate::{Ctx, Error, Execution, Result};

/// Where the q-shift sits on the right-hand side of a QQ line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftConvention {
    /// `Λ_i(z) Q⁺_{i−1}(qz) Q⁺_{i+1}(z)`
    #[default]
    Qqall,
    /// `Λ_i(z) Q⁺_{i−1}(z) Q⁺_{i+1}(qz)`
    Qqatype,
}

#[derive(Debug, Clone)]
pub struct QQSpec {
    pub r: usize,
    pub q: Scalar,
    pub zeta: Vec<Scalar>,
    pub lambda_roots: Vec<Vec<Scalar>>,
    pub lambda_leading: Vec<Scalar>,
    pub q_degrees: Vec<usize>,
    pub convention: ShiftConvention,
}

impl QQSpec {
    pub fn prec(&self) -> u32 {
        self.q.prec()
    }

    /// `ζ_i` with `ζ_0 = ζ_{r+1} = 1`.
    pub fn zeta_at(&self, i: usize) -> Scalar {
        if i == 0 || i > self.r {
            Scalar::one(self.prec())
        } else {
            self.zeta[i - 1].clone()
        }
    }

    /// `ξ_i = ζ_i / ζ_{i−1}` for `i ∈ 1..=r+1`.
    pub fn xi(&self, i: usize) -> Scalar {
        &self.zeta_at(i) / &self.zeta_at(i - 1)
    }

    pub fn xis(&self) -> Vec<Scalar> {
        (1..=self.r + 1).map(|i| self.xi(i)).collect()
    }

    pub fn lambda(&self, i: usize) -> Poly {
        Poly::from_roots(&self.lambda_roots[i - 1], &self.lambda_leading[i - 1])
    }

    /// Upper bound used when searching for minimal-degree chain solutions.
    pub fn degree_cap(&self) -> usize {
        self.q_degrees.iter().sum::<usize>() + self.lambda_roots.iter().map(|v| v.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub struct QQSolution {
    pub q_plus: Vec<Poly>,
    pub q_minus: Vec<Poly>,
    /// Chains `Q⁻_{i..j}` for `i < j`; the diagonal lives in `q_minus`.
    pub chains: BTreeMap<(usize, usize), Poly>,
}

impl QQSolution {
    pub fn r(&self) -> usize {
        self.q_plus.len()
    }

    pub fn prec(&self) -> u32 {
        self.q_plus.first().map(|p| p.prec()).unwrap_or(64)
    }

    /// `Q⁺_i` with the boundary convention.
    pub fn qp(&self, i: usize) -> Poly {
        if i == 0 || i > self.r() {
            Poly::one(self.prec())
        } else {
            self.q_plus[i - 1].clone()
        }
    }

    /// `Q⁻_{i..j}`; `(i, i−1)` means `Q⁺_{i−1}`.
    pub fn chain(&self, i: usize, j: usize) -> Option<Poly> {
        if j + 1 == i {
            return Some(self.qp(i - 1));
        }
        if i == j {
            return self.q_minus.get(i - 1).cloned();
        }
        self.chains.get(&(i, j)).cloned()
    }
}

/// Per-node Bethe roots with the residual at each.
#[derive(Debug, Clone)]
pub struct BetheState {
    pub prec: u32,
    pub roots: Vec<Vec<Scalar>>,
    pub residuals: Vec<Vec<f64>>,
}

impl BetheState {
    pub fn q_plus(&self) -> Vec<Poly> {
        self.roots.iter().map(|rs| Poly::from_roots(rs, &Scalar::one(self.prec))).collect()
    }
}

// ---------------------------------------------------------------------------
// validation

const ROOT_OF_UNITY_ORDER: i64 = 64;
const TWIST_WINDOW: i64 = 64;

pub fn validate_spec(spec: &QQSpec, ctx: &Ctx) -> Vec<String> {
    let mut v = Vec::new();
    let r = spec.r;
    if r == 0 {
        v.push("rank must be positive".to_string());
        return v;
    }
    if spec.zeta.len() != r || spec.lambda_roots.len() != r || spec.lambda_leading.len() != r || spec.q_degrees.len() != r
    {
        v.push(format!("expected {r} entries in zeta, lambda and q_degrees"));
        return v;
    }
    let one = Scalar::one(spec.prec());
    let mut qn = one.clone();
    for n in 1..=ROOT_OF_UNITY_ORDER {
        qn = &qn * &spec.q;
        if qn.dist(&one) <= ctx.tol {
            v.push(format!("q must not be a root of unity (q^{n} = 1)"));
            break;
        }
    }
    if spec.zeta.iter().any(|z| z.is_exact_zero()) {
        v.push("zeta entries must be nonzero".to_string());
        return v;
    }
    for j in 1..=r {
        // ζ_j² / (ζ_{j+1} ζ_{j−1}) ∉ q^ℤ
        let t = &(&spec.zeta_at(j) * &spec.zeta_at(j)) / &(&spec.zeta_at(j + 1) * &spec.zeta_at(j - 1));
        if let Some(n) = in_q_power_window(&t, &spec.q, TWIST_WINDOW, ctx) {
            v.push(format!("twist condition violated at node {j}: zeta_j^2/(zeta_(j+1) zeta_(j-1)) = q^{n}"));
        }
    }
    for i in 1..=r {
        if spec.lambda_roots[i - 1].is_empty() {
            v.push(format!("Lambda_{i} is constant"));
        }
        if spec.lambda_leading[i - 1].is_exact_zero() {
            v.push(format!("Lambda_{i} has zero leading coefficient"));
        }
    }
    v
}

/// Returns `n` if `t = q^n` for some `|n| ≤ window`.
pub fn in_q_power_window(t: &Scalar, q: &Scalar, window: i64, ctx: &Ctx) -> Option<i64> {
    let qi = q.recip();
    let mut up = Scalar::one(q.prec());
    let mut down = Scalar::one(q.prec());
    if t.rel_dist(&up) <= ctx.tol {
        return Some(0);
    }
    for n in 1..=window {
        up = &up * q;
        down = &down * &qi;
        if t.rel_dist(&up) <= ctx.tol {
            return Some(n);
        }
        if t.rel_dist(&down) <= ctx.tol {
            return Some(-n);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// QQ lines

/// Right-hand side `Λ_j · (prev, next)` of the line for chain `(i, j)`.
fn line_rhs(spec: &QQSpec, prev: &Poly, next: &Poly, j: usize) -> Poly {
    let q = &spec.q;
    let lam = spec.lambda(j);
    match spec.convention {
        ShiftConvention::Qqall => lam.mul(&prev.shift(q)).mul(next),
        ShiftConvention::Qqatype => lam.mul(prev).mul(&next.shift(q)),
    }
}

/// Minimal-degree polynomial `X` with `a·A(z)X(z) − b·B(z)X(qz) = rhs`.
pub fn solve_qdiff(
    a: &Scalar,
    pa: &Poly,
    b: &Scalar,
    pb: &Poly,
    q: &Scalar,
    rhs: &Poly,
    cap: usize,
    ctx: &Ctx,
) -> Result<Poly> {
    let prec = ctx.prec;
    if rhs.is_zero() {
        return Ok(Poly::zero(prec));
    }
    let dab = pa.deg().max(pb.deg());
    let d0 = rhs.deg().saturating_sub(dab);
    let cap = cap.max(d0);
    let mut last = String::new();
    for d in d0..=cap {
        let nrows = (d + dab).max(rhs.deg()) + 1;
        let mut m = CMat::zeros(prec, nrows, d + 1);
        let mut qk = Scalar::one(prec);
        for k in 0..=d {
            let bq = b * &qk;
            // column k: (a·A − b q^k B) z^k
            for (j, c) in pa.coeffs().iter().enumerate() {
                let v = &(m.at(j + k, k).clone()) + &(a * c);
                m.set(j + k, k, v);
            }
            for (j, c) in pb.coeffs().iter().enumerate() {
                let v = &(m.at(j + k, k).clone()) - &(&bq * c);
                m.set(j + k, k, v);
            }
            qk = &qk * q;
        }
        let rv: Vec<Scalar> = (0..nrows).map(|j| rhs.coeff(j)).collect();
        match solve_consistent(&m, &rv, ctx) {
            Ok(x) => return Ok(Poly::new(prec, x)),
            Err(LinSolveError::Singular) => {
                return Err(Error::ResonantTwist(format!(
                    "difference operator singular at degree {d} (a/b in q^Z)"
                )))
            }
            Err(LinSolveError::Inconsistent(res)) => last = format!("degree {d}: residual {res:.3e}"),
        }
    }
    Err(Error::ResonantTwist(format!("no polynomial solution up to degree {cap} ({last})")))
}

/// Computes `Q⁻_i` for every node from `Q⁺`.
pub fn extend_minus(spec: &QQSpec, q_plus: &[Poly], ctx: &Ctx) -> Result<Vec<Poly>> {
    let r = spec.r;
    let qp = |i: usize| if i == 0 || i > r { Poly::one(ctx.prec) } else { q_plus[i - 1].clone() };
    (1..=r)
        .map(|i| {
            let rhs = line_rhs(spec, &qp(i - 1), &qp(i + 1), i);
            let q_i = qp(i);
            solve_qdiff(&spec.xi(i), &q_i.shift(&spec.q), &spec.xi(i + 1), &q_i, &spec.q, &rhs, spec.degree_cap(), ctx)
        })
        .collect()
}

/// Solves the chain line `(i, j)` given `Q⁻_{i..j−1}` in `sol`.
pub fn extend_chain(spec: &QQSpec, sol: &QQSolution, i: usize, j: usize, ctx: &Ctx) -> Result<Poly> {
    if i == 0 || j > spec.r || i > j {
        return Err(Error::Index(format!("chain ({i},{j}) for rank {}", spec.r)));
    }
    let prev = sol.chain(i, j - 1).ok_or(Error::MissingChain(i, j - 1))?;
    let rhs = line_rhs(spec, &prev, &sol.qp(j + 1), j);
    let q_j = sol.qp(j);
    solve_qdiff(&spec.xi(i), &q_j.shift(&spec.q), &spec.xi(j + 1), &q_j, &spec.q, &rhs, spec.degree_cap(), ctx)
}

/// Fills every chain `(i, j)` with `i < j`, shortest first.
pub fn complete_chains(spec: &QQSpec, sol: &mut QQSolution, ctx: &Ctx) -> Result<()> {
    sol.chains.clear();
    for len in 1..spec.r {
        for i in 1..=spec.r - len {
            let j = i + len;
            let c = extend_chain(spec, sol, i, j, ctx)?;
            sol.chains.insert((i, j), c);
        }
    }
    Ok(())
}

/// Builds a full solution (Q⁻ and all chains) from monic `Q⁺`.
pub fn solution_from_q_plus(spec: &QQSpec, q_plus: Vec<Poly>, ctx: &Ctx) -> Result<QQSolution> {
    let q_minus = extend_minus(spec, &q_plus, ctx)?;
    let mut sol = QQSolution { q_plus, q_minus, chains: BTreeMap::new() };
    complete_chains(spec, &mut sol, ctx)?;
    Ok(sol)
}

fn sample_count(polys: &[&Poly]) -> usize {
    polys.iter().map(|p| p.deg()).sum::<usize>() + 4
}

/// Residual of the line for chain `(i, j)`; `(i, i)` is the plain QQ line.
pub fn chain_residual(spec: &QQSpec, sol: &QQSolution, i: usize, j: usize, ctx: &Ctx) -> Result<IdentityReport> {
    if i == 0 || j > spec.r || i > j {
        return Err(Error::Index(format!("chain ({i},{j}) for rank {}", spec.r)));
    }
    let c = sol.chain(i, j).ok_or(Error::MissingChain(i, j))?;
    let prev = sol.chain(i, j - 1).ok_or(Error::MissingChain(i, j - 1))?;
    let qj = sol.qp(j);
    let next = sol.qp(j + 1);
    let lam = spec.lambda(j);
    let (xa, xb, q) = (spec.xi(i), spec.xi(j + 1), spec.q.clone());
    let n = sample_count(&[&c, &prev, &qj, &next, &lam]);
    let conv = spec.convention;
    check_terms(n, &[], ctx, |z| {
        let qz = &q * z;
        let t1 = &xa * &(&qj.eval(&qz) * &c.eval(z));
        let t2 = -(&xb * &(&qj.eval(z) * &c.eval(&qz)));
        let t3 = match conv {
            ShiftConvention::Qqall => &lam.eval(z) * &(&prev.eval(&qz) * &next.eval(z)),
            ShiftConvention::Qqatype => &lam.eval(z) * &(&prev.eval(z) * &next.eval(&qz)),
        };
        vec![t1, t2, -t3]
    })
}

pub fn qq_residual(spec: &QQSpec, sol: &QQSolution, i: usize, ctx: &Ctx) -> Result<IdentityReport> {
    if i == 0 || i > spec.r {
        return Err(Error::Index(format!("node {i} for rank {}", spec.r)));
    }
    chain_residual(spec, sol, i, i, ctx)
}

/// Every QQ line and every stored chain line.
pub fn all_residuals(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Result<BTreeMap<(usize, usize), IdentityReport>> {
    let mut out = BTreeMap::new();
    for i in 1..=spec.r {
        for j in i..=spec.r {
            if sol.chain(i, j).is_some() {
                out.insert((i, j), chain_residual(spec, sol, i, j, ctx)?);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Bethe equations

/// One linear factor `sign · ln(α·w − x)` in a log-Bethe equation.
#[derive(Clone, Debug)]
pub(crate) struct Factor {
    pub(crate) sign: f64,
    pub(crate) alpha: Scalar,
    pub(crate) target: Target,
}

#[derive(Clone, Debug)]
pub(crate) enum Target {
    Var(usize),
    Const(Scalar),
}

#[derive(Clone, Debug)]
pub(crate) struct Equation {
    pub(crate) var: usize,
    pub(crate) c: Scalar,
    pub(crate) factors: Vec<Factor>,
}

/// Log form of the Bethe equations: `ln c + Σ sign·ln(αw − x) ∈ 2πiℤ`.
#[derive(Clone, Debug)]
pub(crate) struct BetheSystem {
    pub(crate) eqs: Vec<Equation>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) n: usize,
}

fn bethe_system(spec: &QQSpec) -> BetheSystem {
    let prec = spec.prec();
    let r = spec.r;
    let mut offsets = vec![0usize; r + 2];
    for i in 1..=r {
        offsets[i + 1] = offsets[i] + spec.q_degrees[i - 1];
    }
    let n = offsets[r + 1];
    let q = spec.q.clone();
    let qi = q.recip();
    let one = Scalar::one(prec);
    let vars = |i: usize| -> Vec<usize> {
        if i == 0 || i > r {
            vec![]
        } else {
            (offsets[i]..offsets[i + 1]).collect()
        }
    };
    let mut eqs = Vec::with_capacity(n);
    for i in 1..=r {
        let c = &(&q * &spec.xi(i)) / &spec.xi(i + 1);
        for var in vars(i) {
            let mut f = Vec::new();
            for l in vars(i) {
                if l != var {
                    f.push(Factor { sign: 1.0, alpha: q.clone(), target: Target::Var(l) });
                    f.push(Factor { sign: -1.0, alpha: qi.clone(), target: Target::Var(l) });
                }
            }
            for lam in &spec.lambda_roots[i - 1] {
                f.push(Factor { sign: -1.0, alpha: one.clone(), target: Target::Const(lam.clone()) });
                f.push(Factor { sign: 1.0, alpha: qi.clone(), target: Target::Const(lam.clone()) });
            }
            let (lo, hi) = match spec.convention {
                // Q_{i−1}(qw)/Q_{i−1}(w) and Q_{i+1}(w)/Q_{i+1}(q⁻¹w)
                ShiftConvention::Qqall => ((q.clone(), one.clone()), (one.clone(), qi.clone())),
                // Q_{i−1}(w)/Q_{i−1}(q⁻¹w) and Q_{i+1}(qw)/Q_{i+1}(w)
                ShiftConvention::Qqatype => ((one.clone(), qi.clone()), (q.clone(), one.clone())),
            };
            for u in vars(i - 1) {
                f.push(Factor { sign: -1.0, alpha: lo.0.clone(), target: Target::Var(u) });
                f.push(Factor { sign: 1.0, alpha: lo.1.clone(), target: Target::Var(u) });
            }
            for v in vars(i + 1) {
                f.push(Factor { sign: -1.0, alpha: hi.0.clone(), target: Target::Var(v) });
                f.push(Factor { sign: 1.0, alpha: hi.1.clone(), target: Target::Var(v) });
            }
            eqs.push(Equation { var, c: c.clone(), factors: f });
        }
    }
    BetheSystem { eqs, offsets, n }
}

pub(crate) struct SystemC64 {
    eqs: Vec<(usize, Complex64, Vec<(f64, Complex64, Option<usize>, Complex64)>)>,
    n: usize,
}

impl SystemC64 {
    pub(crate) fn from(sys: &BetheSystem) -> Self {
        let eqs = sys
            .eqs
            .iter()
            .map(|e| {
                let fs = e
                    .factors
                    .iter()
                    .map(|f| match &f.target {
                        Target::Var(m) => (f.sign, f.alpha.to_c64(), Some(*m), Complex64::new(0.0, 0.0)),
                        Target::Const(x) => (f.sign, f.alpha.to_c64(), None, x.to_c64()),
                    })
                    .collect();
                (e.var, e.c.to_c64(), fs)
            })
            .collect();
        SystemC64 { eqs, n: sys.n }
    }

    /// Residual and Jacobian; `tau` scales the twist constant.
    fn eval(&self, w: &[Complex64], tau: Complex64) -> Option<(Vec<Complex64>, Vec<Complex64>)> {
        let n = self.n;
        let mut f = vec![Complex64::new(0.0, 0.0); n];
        let mut jac = vec![Complex64::new(0.0, 0.0); n * n];
        for (row, (var, c, fs)) in self.eqs.iter().enumerate() {
            let mut acc = (c * tau).ln();
            let wv = w[*var];
            for &(s, a, t, x) in fs {
                let xv = match t {
                    Some(m) => w[m],
                    None => x,
                };
                let d = a * wv - xv;
                if d.norm() == 0.0 || !d.norm().is_finite() {
                    return None;
                }
                acc += s * d.ln();
                jac[row * n + var] += s * a / d;
                if let Some(m) = t {
                    jac[row * n + m] -= s / d;
                }
            }
            f[row] = wrap_c64(acc);
        }
        Some((f, jac))
    }
}

fn wrap_c64(z: Complex64) -> Complex64 {
    let tau = 2.0 * std::f64::consts::PI;
    let im = z.im - tau * (z.im / tau).round();
    Complex64::new(z.re, im)
}

fn solve_c64(n: usize, mut a: Vec<Complex64>, mut b: Vec<Complex64>) -> Option<Vec<Complex64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm()))?;
        let pn = a[piv * n + col].norm();
        if pn < 1e-300 || !pn.is_finite() {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                let t = a[col * n + c];
                a[r * n + c] -= f * t;
            }
            let t = b[col];
            b[r] -= f * t;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * x[c];
        }
        x[r] = s / a[r * n + r];
    }
    if x.iter().all(|v| v.norm().is_finite()) {
        Some(x)
    } else {
        None
    }
}

fn norm_inf(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Damped Newton in `f64`. Converged when the residual drops below `1e-11`,
/// or when a full step stalls at rounding level with a small residual (roots
/// pinched against an anchor cannot reach `1e-11` in double precision).
pub(crate) fn newton_c64(sys: &SystemC64, mut w: Vec<Complex64>, tau: Complex64, max_iter: usize) -> Option<Vec<Complex64>> {
    let (mut f, mut j) = sys.eval(&w, tau)?;
    let mut fn_ = norm_inf(&f);
    for _ in 0..max_iter {
        if fn_ < 1e-11 {
            return Some(w);
        }
        let dx = solve_c64(sys.n, j.clone(), f.iter().map(|x| -x).collect())?;
        let rel = w.iter().zip(&dx).map(|(a, d)| d.norm() / a.norm().max(1.0)).fold(0.0, f64::max);
        if rel < 1e-14 && fn_ < 1e-6 {
            return Some(w);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<Complex64> = w.iter().zip(&dx).map(|(a, d)| a + d * step).collect();
            if let Some((f2, j2)) = sys.eval(&trial, tau) {
                let n2 = norm_inf(&f2);
                if n2 < fn_ || (step < 1e-3 && n2.is_finite()) {
                    w = trial;
                    f = f2;
                    j = j2;
                    fn_ = n2;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return if rel < 1e-12 && fn_ < 1e-6 { Some(w) } else { None };
        }
    }
    if fn_ < 1e-11 {
        Some(w)
    } else {
        None
    }
}

/// Newton in working precision on the log system.
pub(crate) fn polish(sys: &BetheSystem, w0: &[Complex64], ctx: &Ctx) -> Option<Vec<Scalar>> {
    let prec = ctx.prec;
    let n = sys.n;
    let mut w: Vec<Scalar> = w0.iter().map(|&c| Scalar::from_c64(prec, c)).collect();
    let target = 2f64.powf(-(prec as f64) + 12.0);
    for _ in 0..40 {
        let mut jac = CMat::zeros(prec, n, n);
        let mut f = Vec::with_capacity(n);
        for (row, e) in sys.eqs.iter().enumerate() {
            let mut prod_num = e.c.clone();
            let mut prod_den = Scalar::one(prec);
            for fac in &e.factors {
                let xv = match &fac.target {
                    Target::Var(m) => w[*m].clone(),
                    Target::Const(x) => x.clone(),
                };
                let d = &(&fac.alpha * &w[e.var]) - &xv;
                if d.is_exact_zero() {
                    return None;
                }
                let dinv = d.recip();
                let sa = Scalar::real(prec, fac.sign);
                let jv = &(jac.at(row, e.var).clone()) + &(&(&sa * &fac.alpha) * &dinv);
                jac.set(row, e.var, jv);
                if let Target::Var(m) = fac.target {
                    let jv = &(jac.at(row, m).clone()) - &(&sa * &dinv);
                    jac.set(row, m, jv);
                }
                if fac.sign > 0.0 {
                    prod_num = &prod_num * &d;
                } else {
                    prod_den = &prod_den * &d;
                }
            }
            // ln of the ratio is single-valued near a solution
            f.push(-(&prod_num / &prod_den).ln());
        }
        let dx = match solve_consistent(&jac, &f, &Ctx { tol: 1e-3, ..*ctx }) {
            Ok(x) => x,
            Err(_) => return None,
        };
        let mut mx: f64 = 0.0;
        for k in 0..n {
            w[k] = &w[k] + &dx[k];
            mx = mx.max(dx[k].abs_f64() / w[k].abs_f64().max(1.0));
        }
        if !mx.is_finite() {
            return None;
        }
        if mx < target {
            return Some(w);
        }
    }
    Some(w)
}

/// Per-root residuals `LHS / RHS − 1`; `None` marks a pole hit.
pub fn bethe_residual(spec: &QQSpec, q_plus: &[Poly]) -> Vec<Vec<Option<f64>>> {
    let prec = spec.prec();
    let r = spec.r;
    let q = &spec.q;
    let qi = q.recip();
    let qp = |i: usize| if i == 0 || i > r { Poly::one(prec) } else { q_plus[i - 1].clone() };
    (1..=r)
        .map(|i| {
            let lam = spec.lambda(i);
            let (qm, qq, qn) = (qp(i - 1), qp(i), qp(i + 1));
            qq.roots()
                .iter()
                .map(|w| {
                    let wq = q * w;
                    let wqi = &qi * w;
                    let (num, den) = match spec.convention {
                        ShiftConvention::Qqall => (
                            &(&spec.xi(i) * &qq.eval(&wq)) * &(&lam.eval(&wqi) * &(&qm.eval(w) * &qn.eval(&wqi))),
                            -(&(&spec.xi(i + 1) * &qq.eval(&wqi)) * &(&lam.eval(w) * &(&qm.eval(&wq) * &qn.eval(w)))),
                        ),
                        ShiftConvention::Qqatype => (
                            &(&spec.xi(i) * &qq.eval(&wq)) * &(&lam.eval(&wqi) * &(&qm.eval(&wqi) * &qn.eval(w))),
                            -(&(&spec.xi(i + 1) * &qq.eval(&wqi)) * &(&lam.eval(w) * &(&qm.eval(w) * &qn.eval(&wq)))),
                        ),
                    };
                    let scale = num.abs_f64().max(1e-300);
                    if den.abs_f64() <= scale * 1e-40 || den.is_exact_zero() {
                        None
                    } else {
                        Some((&(&num / &den) - &Scalar::one(prec)).abs_f64())
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Newton,
    Homotopy,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub seeds: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub exec: Execution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { seeds: 64, seed: 0, strategy: Strategy::Newton, exec: Execution::Parallel }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub states: Vec<BetheState>,
    pub converged_seeds: usize,
    pub diagnostic: String,
}

fn root_scale(spec: &QQSpec) -> f64 {
    let m = spec.lambda_roots.iter().flatten().map(|x| x.abs_f64()).fold(0.0, f64::max);
    m.max(1.0)
}

fn random_seed(spec: &QQSpec, rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let s = root_scale(spec) * spec.q.abs_f64().max(1.0 / spec.q.abs_f64());
    let anchors: Vec<Complex64> = spec.lambda_roots.iter().flatten().map(|x| x.to_c64()).collect();
    let q = spec.q.to_c64();
    (0..n)
        .map(|_| {
            let mode: f64 = rng.gen();
            let noise = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if mode < 0.5 || anchors.is_empty() {
                noise * s * 1.5
            } else {
                let a = anchors[rng.gen_range(0..anchors.len())];
                let pw = rng.gen_range(-2i32..=2);
                a * q.powi(pw) + noise * 0.3 * s
            }
        })
        .collect()
}

/// Starts near the small-twist limit and continues the twist to its value.
///
/// At small twist every root sits next to an anchor: a `Λ_i` root, a root of
/// the neighbouring node, or a q-multiple of a root already placed in the
/// same node. The offset from the anchor is found by fixed-point iteration.
fn homotopy_track(sys: &SystemC64, spec: &QQSpec, rng: &mut ChaCha8Rng) -> Option<Vec<Complex64>> {
    let n = sys.n;
    let r = spec.r;
    let m = &spec.q_degrees;
    let mut offs = vec![0usize; r + 1];
    for i in 1..=r {
        offs[i] = offs[i - 1] + m[i - 1];
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut w = vec![zero; n];
    let mut placed = vec![false; n];
    let mut anchor = vec![0usize; n];
    for i in (1..=r).rev() {
        let mut used: Vec<(Option<usize>, Complex64)> = Vec::new();
        for k in 0..m[i - 1] {
            let var = offs[i - 1] + k;
            let fs = &sys.eqs[var].2;
            let cands: Vec<usize> = (0..fs.len())
                .filter(|&f| {
                    let (s, _, t, x) = fs[f];
                    s < 0.0
                        && t.is_none_or(|v| placed[v])
                        && !used.iter().any(|&(ut, ux)| ut == t && (t.is_some() || ux == x))
                })
                .collect();
            if cands.is_empty() {
                return None;
            }
            let f = cands[rng.gen_range(0..cands.len())];
            let (_, a, t, x) = fs[f];
            used.push((t, x));
            anchor[var] = f;
            w[var] = t.map_or(x, |v| w[v]) / a;
            placed[var] = true;
        }
    }
    let ln_tau0 = (1e-6f64).ln();
    let tau0 = Complex64::new(ln_tau0, 0.0).exp();
    for _ in 0..200 {
        let mut moved: f64 = 0.0;
        for (var, c, fs) in &sys.eqs {
            let mut rest = (c * tau0).ln();
            for (f, &(s, a, t, x)) in fs.iter().enumerate() {
                if f != anchor[*var] {
                    rest += s * (a * w[*var] - t.map_or(x, |v| w[v])).ln();
                }
            }
            let (_, a, t, x) = fs[anchor[*var]];
            let nw = (t.map_or(x, |v| w[v]) + rest.exp()) / a;
            moved = moved.max((nw - w[*var]).norm() / nw.norm().max(1.0));
            w[*var] = nw;
        }
        if !moved.is_finite() {
            return None;
        }
        if moved < 1e-14 {
            break;
        }
    }
    let gamma: f64 = rng.gen_range(-2.0..2.0);
    let tau_at = |s: f64| (Complex64::new((1.0 - s) * ln_tau0, gamma * s * (1.0 - s))).exp();
    let mut w = newton_c64(sys, w, tau_at(0.0), 30)?;
    let mut s: f64 = 0.0;
    let mut ds: f64 = 0.02;
    while s < 1.0 {
        let s2 = (s + ds).min(1.0);
        match newton_c64(sys, w.clone(), tau_at(s2), 8) {
            Some(w2) => {
                w = w2;
                s = s2;
                ds = (ds * 1.5).min(0.1);
            }
            None => {
                ds *= 0.5;
                if ds < 1e-7 {
                    return None;
                }
            }
        }
    }
    Some(w)
}

pub(crate) fn same_state(a: &[Vec<Scalar>], b: &[Vec<Scalar>], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        let mut used = vec![false; y.len()];
        x.iter().all(|u| {
            let hit = y
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .find(|(_, v)| u.dist(v) <= tol * u.abs_f64().max(1.0))
                .map(|(k, _)| k);
            match hit {
                Some(k) => {
                    used[k] = true;
                    true
                }
                None => false,
            }
        })
    })
}

fn accept(spec: &QQSpec, roots: Vec<Vec<Scalar>>, ctx: &Ctx) -> Option<BetheState> {
    for node in &roots {
        for a in 0..node.len() {
            for b in a + 1..node.len() {
                if node[a].dist(&node[b]) < ctx.cluster_tol * node[a].abs_f64().max(1.0) {
                    return None;
                }
            }
        }
    }
    let qp: Vec<Poly> = roots.iter().map(|rs| Poly::from_roots(rs, &Scalar::one(ctx.prec))).collect();
    let res = bethe_residual(spec, &qp);
    let mut residuals = Vec::new();
    for node in res {
        let mut v = Vec::new();
        for x in node {
            let x = x?;
            if !(x <= ctx.tol) {
                return None;
            }
            v.push(x);
        }
        residuals.push(v);
    }
    // residuals were computed on re-found roots; report them against the stored order
    let mut state = BetheState { prec: ctx.prec, roots, residuals: vec![] };
    for node in state.roots.iter_mut() {
        sort_lex(node);
    }
    let res = bethe_residual(spec, &state.q_plus());
    state.residuals = res.into_iter().map(|v| v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()).collect();
    let _ = residuals;
    Some(state)
}

/// Multistart solver for the Bethe equations.
pub fn solve_bethe(spec: &QQSpec, opts: &SolveOptions, ctx: &Ctx) -> SolveOutcome {
    let violations = validate_spec(spec, ctx);
    if !violations.is_empty() {
        return SolveOutcome { states: vec![], converged_seeds: 0, diagnostic: violations.join("; ") };
    }
    let sys = bethe_system(spec);
    if sys.n == 0 {
        let state = BetheState { prec: ctx.prec, roots: vec![vec![]; spec.r], residuals: vec![vec![]; spec.r] };
        return SolveOutcome { states: vec![state], converged_seeds: 1, diagnostic: String::new() };
    }
    let c64 = SystemC64::from(&sys);
    let one = Complex64::new(1.0, 0.0);
    let seeds: Vec<u64> = (0..opts.seeds as u64).collect();
    let found: Vec<Option<BetheState>> = opts.exec.map(seeds, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        let w = match opts.strategy {
            Strategy::Newton => newton_c64(&c64, random_seed(spec, &mut rng, sys.n), one, 100),
            Strategy::Homotopy => homotopy_track(&c64, spec, &mut rng),
        }?;
        let polished = polish(&sys, &w, ctx)?;
        let mut roots = Vec::with_capacity(spec.r);
        for i in 1..=spec.r {
            roots.push(polished[sys.offsets[i]..sys.offsets[i + 1]].to_vec());
        }
        accept(spec, roots, ctx)
    });
    let converged = found.iter().filter(|x| x.is_some()).count();
    let mut states: Vec<BetheState> = Vec::new();
    for s in found.into_iter().flatten() {
        if !states.iter().any(|t| same_state(&t.roots, &s.roots, ctx.cluster_tol)) {
            states.push(s);
        }
    }
    states.sort_by(cmp_states);
    let diagnostic = if states.is_empty() {
        format!("no convergent seed out of {}", opts.seeds)
    } else {
        String::new()
    };
    SolveOutcome { states, converged_seeds: converged, diagnostic }
}

fn cmp_states(a: &BetheState, b: &BetheState) -> std::cmp::Ordering {
    for (x, y) in a.roots.iter().zip(&b.roots) {
        for (u, v) in x.iter().zip(y) {
            let o = u.lex_cmp(v);
            if o != std::cmp::Ordering::Equal {
                return o;
            }
        }
    }
    std::cmp::Ordering::Equal
}

// ---------------------------------------------------------------------------
// Bäcklund

/// Reflection at node `i`: swaps `ξ_i ↔ ξ_{i+1}` and `Q⁺_i ↔ Q⁻_i`.
pub fn backlund(spec: &QQSpec, sol: &QQSolution, i: usize, ctx: &Ctx) -> Result<(QQSpec, QQSolution)> {
    let r = spec.r;
    if i == 0 || i > r {
        return Err(Error::Index(format!("node {i} for rank {r}")));
    }
    if i < r && sol.chain(i, i + 1).is_none() {
        return Err(Error::MissingChain(i, i + 1));
    }
    let mut nspec = spec.clone();
    nspec.zeta[i - 1] = &(&spec.zeta_at(i - 1) * &spec.zeta_at(i + 1)) / &spec.zeta_at(i);
    let qm = sol.q_minus[i - 1].clone();
    if qm.is_zero() {
        return Err(Error::DegenerateBacklund(format!("Q-_{i} vanishes")));
    }
    let (new_plus, lc) = qm.monic();
    let mut nsol = sol.clone();
    nsol.q_plus[i - 1] = new_plus;
    nsol.q_minus[i - 1] = sol.q_plus[i - 1].scale(&(-&lc));
    nspec.q_degrees[i - 1] = nsol.q_plus[i - 1].deg();
    if i < r {
        let c = sol.chain(i, i + 1).expect("checked above");
        nsol.q_minus[i] = c.scale(&lc.recip());
    }
    if i > 1 {
        // the starred neighbour: line i−1 of the reflected system
        let rhs = line_rhs(&nspec, &nsol.qp(i - 2), &nsol.qp(i), i - 1);
        let q_im1 = nsol.qp(i - 1);
        nsol.q_minus[i - 2] = solve_qdiff(
            &nspec.xi(i - 1),
            &q_im1.shift(&nspec.q),
            &nspec.xi(i),
            &q_im1,
            &nspec.q,
            &rhs,
            nspec.degree_cap(),
            ctx,
        )?;
    }
    complete_chains(&nspec, &mut nsol, ctx)?;
    let report = nondegeneracy_check(&nspec, &nsol, ctx);
    if !report.is_empty() {
        return Err(Error::DegenerateBacklund(report.join("; ")));
    }
    Ok((nspec, nsol))
}

// ---------------------------------------------------------------------------
// nondegeneracy

pub const QZ_WINDOW: i64 = 16;

fn q_close(u: &Scalar, v: &Scalar, q: &Scalar, ctx: &Ctx) -> Option<i64> {
    let qi = q.recip();
    let mut a = u.clone();
    let mut b = u.clone();
    let tol = ctx.cluster_tol * v.abs_f64().max(1.0);
    if a.dist(v) <= tol {
        return Some(0);
    }
    for n in 1..=QZ_WINDOW {
        a = &a * q;
        b = &b * &qi;
        if a.dist(v) <= tol {
            return Some(n);
        }
        if b.dist(v) <= tol {
            return Some(-n);
        }
    }
    None
}

/// Lists every pair of zero sets that fail to be q-distinct.
pub fn nondegeneracy_check(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Vec<String> {
    let r = spec.r;
    let plus: Vec<Vec<Scalar>> = (1..=r).map(|i| sol.qp(i).roots()).collect();
    let minus: Vec<Vec<Scalar>> = (1..=r).map(|i| sol.q_minus[i - 1].roots()).collect();
    let lam: Vec<Vec<Scalar>> = spec.lambda_roots.clone();
    let mut out = Vec::new();
    let mut pair = |na: String, a: &[Scalar], nb: String, b: &[Scalar]| {
        for u in a {
            for v in b {
                if let Some(n) = q_close(u, v, &spec.q, ctx) {
                    out.push(format!("{na} root {u} and {nb} root {v} differ by q^{n}"));
                }
            }
        }
    };
    for i in 1..=r {
        pair(format!("Q+_{i}"), &plus[i - 1], format!("Lambda_{i}"), &lam[i - 1]);
        pair(format!("Q-_{i}"), &minus[i - 1], format!("Lambda_{i}"), &lam[i - 1]);
        pair(format!("Q+_{i}"), &plus[i - 1], format!("Q-_{i}"), &minus[i - 1]);
        if i < r {
            pair(format!("Q+_{i}"), &plus[i - 1], format!("Q+_{}", i + 1), &plus[i]);
            pair(format!("Q+_{}", i + 1), &plus[i], format!("Lambda_{i}"), &lam[i - 1]);
            pair(format!("Q+_{i}"), &plus[i - 1], format!("Lambda_{}", i + 1), &lam[i]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// convention change

/// Rewrites a `qqatype` problem as the equivalent `qqall` one via
/// `Q_i(z) = Q̃_i(q^{−(r−i)} z)`, `Λ_i(z) = Λ̃_i(q^{−(r−i)} z)`, with `Q⁺` kept monic.
pub fn to_qqall(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Result<(QQSpec, QQSolution)> {
    if spec.convention == ShiftConvention::Qqall {
        return Ok((spec.clone(), sol.clone()));
    }
    let mut nspec = spec.clone();
    nspec.convention = ShiftConvention::Qqall;
    let mut q_plus = Vec::with_capacity(spec.r);
    for i in 1..=spec.r {
        let s = spec.q.powi((spec.r - i) as i64);
        nspec.lambda_roots[i - 1] = spec.lambda_roots[i - 1].iter().map(|x| x * &s).collect();
        let deg = spec.lambda_roots[i - 1].len() as i64;
        nspec.lambda_leading[i - 1] = &spec.lambda_leading[i - 1] * &s.powi(-deg);
        q_plus.push(sol.qp(i).shift(&s.recip()).monic().0);
    }
    let nsol = solution_from_q_plus(&nspec, q_plus, ctx)?;
    Ok((nspec, nsol))
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 192;

    fn s(x: f64) -> Scalar {
        Scalar::real(P, x)
    }

    pub(crate) fn sl2_spec() -> QQSpec {
        QQSpec {
            r: 1,
            q: s(2.0),
            zeta: vec![s(3.0)],
            lambda_roots: vec![vec![s(1.0)]],
            lambda_leading: vec![Scalar::ratio(P, 17, 3)],
            q_degrees: vec![1],
            convention: ShiftConvention::Qqall,
        }
    }

    fn ctx() -> Ctx {
        Ctx::new(P)
    }

    /// Closed form for `r = 1`, `m = 1`, linear `Λ = c(z − a)`: `w = a(ξ₁q − ξ₂)/(ξ₁ − ξ₂)`.
    fn closed_form_w(x1: &Scalar, x2: &Scalar, q: &Scalar, a: &Scalar) -> Scalar {
        &(a * &(&(x1 * q) - x2)) / &(x1 - x2)
    }

    #[test]
    fn validate_examples() {
        let c = ctx();
        assert!(validate_spec(&sl2_spec(), &c).is_empty());
        let mut bad = sl2_spec();
        bad.q = s(1.0);
        assert!(validate_spec(&bad, &c).iter().any(|v| v.contains("root of unity")));
        let mut bad = sl2_spec();
        // ζ² = q³ violates the twist condition for r = 1
        bad.zeta = vec![s(8.0).sqrt()];
        assert!(validate_spec(&bad, &c).iter().any(|v| v.contains("twist condition")));
    }

    #[test]
    fn sl2_closed_form_residuals() {
        let c = ctx();
        let spec = sl2_spec();
        let w = closed_form_w(&spec.xi(1), &spec.xi(2), &spec.q, &s(1.0));
        assert!(w.dist(&Scalar::ratio(P, 17, 8)) < 1e-55);
        let qp = vec![Poly::from_roots(std::slice::from_ref(&w), &s(1.0))];
        let sol = QQSolution { q_plus: qp.clone(), q_minus: vec![Poly::one(P)], chains: BTreeMap::new() };
        assert!(qq_residual(&spec, &sol, 1, &c).unwrap().pass);
        let b = bethe_residual(&spec, &qp);
        assert!(b[0][0].unwrap() <= c.tol);
        let qm = extend_minus(&spec, &qp, &c).unwrap();
        assert!(qm[0].rel_dist(&Poly::one(P)) < 1e-50);
        // perturbing Q⁻ by +1 leaves a defect of size |ξ₁ − ξ₂|
        let bad = QQSolution { q_minus: vec![Poly::from_f64(P, &[2.0])], ..sol };
        let r = qq_residual(&spec, &bad, 1, &c).unwrap();
        assert!(!r.pass);
        let _ = r;
        assert!(matches!(qq_residual(&spec, &bad, 2, &c), Err(Error::Index(_))));
    }

    #[test]
    fn perturbed_defect_is_linear() {
        // absolute defect of Q⁻ + 1 equals (ξ₁ − ξ₂)·Q⁺ shifted terms; check against direct evaluation
        let spec = sl2_spec();
        let w = Scalar::ratio(P, 17, 8);
        let qp = Poly::from_roots(&[w], &s(1.0));
        let z = Scalar::from_f64(P, 0.3, 0.8);
        let qz = &spec.q * &z;
        let defect = &(&spec.xi(1) * &qp.eval(&qz)) - &(&spec.xi(2) * &qp.eval(&z));
        // at z = 0: (ξ₁ − ξ₂)·Q⁺(0)
        let d0 = &(&spec.xi(1) - &spec.xi(2)) * &qp.eval(&Scalar::zero(P));
        let zero = Scalar::zero(P);
        let at0 = &(&spec.xi(1) * &qp.eval(&(&spec.q * &zero))) - &(&spec.xi(2) * &qp.eval(&zero));
        assert!(at0.dist(&d0) < 1e-50);
        assert!(defect.abs_f64() > 0.0);
    }

    #[test]
    fn trivial_q_plus_linear_solve() {
        // m = 0: Q⁻ = αz + β with α = lc Λ /(ξ₁ − ξ₂ q), β = Λ(0)/(ξ₁ − ξ₂)
        let c = ctx();
        let mut spec = sl2_spec();
        spec.q_degrees = vec![0];
        let qm = extend_minus(&spec, &[Poly::one(P)], &c).unwrap();
        let lam = spec.lambda(1);
        let alpha = &lam.leading() / &(&spec.xi(1) - &(&spec.xi(2) * &spec.q));
        let beta = &lam.coeff(0) / &(&spec.xi(1) - &spec.xi(2));
        assert!(qm[0].coeff(1).dist(&alpha) < 1e-50);
        assert!(qm[0].coeff(0).dist(&beta) < 1e-50);
        let sol = QQSolution { q_plus: vec![Poly::one(P)], q_minus: qm, chains: BTreeMap::new() };
        assert!(qq_residual(&spec, &sol, 1, &c).unwrap().pass);
        let out = solve_bethe(&spec, &SolveOptions::default(), &c);
        assert_eq!(out.states.len(), 1);
        assert!(out.states[0].roots[0].is_empty());
        assert!(bethe_residual(&spec, &[Poly::one(P)])[0].is_empty());
    }

    #[test]
    fn solve_sl2_single_root() {
        let c = ctx();
        let out = solve_bethe(&sl2_spec(), &SolveOptions { seeds: 16, ..Default::default() }, &c);
        assert_eq!(out.states.len(), 1, "{}", out.diagnostic);
        let w = &out.states[0].roots[0][0];
        assert!(w.rel_dist(&Scalar::ratio(P, 17, 8)) < 1e-30);
    }

    #[test]
    fn homotopy_finds_same_root() {
        let c = ctx();
        let opts = SolveOptions { seeds: 8, strategy: Strategy::Homotopy, ..Default::default() };
        let out = solve_bethe(&sl2_spec(), &opts, &c);
        assert_eq!(out.states.len(), 1, "{}", out.diagnostic);
        assert!(out.states[0].roots[0][0].rel_dist(&Scalar::ratio(P, 17, 8)) < 1e-30);
    }

    #[test]
    fn random_point_is_not_a_root() {
        let c = ctx();
        let qp = vec![Poly::from_roots(&[Scalar::from_f64(P, 0.37, 0.21)], &s(1.0))];
        let b = bethe_residual(&sl2_spec(), &qp);
        assert!(b[0][0].unwrap() >= 1e3 * c.tol);
    }

    /// Quadratic for `r = 1`, `m = 1`: `ξ₁(q−1)Λ(w/q) + ξ₂(q⁻¹−1)Λ(w) = 0`.
    fn sl2_m1_oracle(spec: &QQSpec) -> Vec<Scalar> {
        let lam = spec.lambda(1);
        let q = &spec.q;
        let one = s(1.0);
        let a = &spec.xi(1) * &(q - &one);
        let b = &spec.xi(2) * &(&q.recip() - &one);
        let p = lam.shift(&q.recip()).scale(&a).add(&lam.scale(&b));
        let mut r = p.roots();
        sort_lex(&mut r);
        r
    }

    fn dense_seed_oracle(spec: &QQSpec, n_side: usize) -> Vec<Complex64> {
        let sys = SystemC64::from(&bethe_system(spec));
        let mut found: Vec<Complex64> = Vec::new();
        for a in 0..n_side {
            for b in 0..n_side {
                let x = -6.0 + 12.0 * (a as f64 + 0.5) / n_side as f64;
                let y = -6.0 + 12.0 * (b as f64 + 0.5) / n_side as f64;
                if let Some(w) = newton_c64(&sys, vec![Complex64::new(x, y)], Complex64::new(1.0, 0.0), 60) {
                    if !found.iter().any(|f| (f - w[0]).norm() < 1e-8) {
                        found.push(w[0]);
                    }
                }
            }
        }
        found
    }

    #[test]
    fn sl2_deg2_matches_dense_scan_and_quadratic() {
        let c = ctx();
        let spec = QQSpec {
            r: 1,
            q: Scalar::from_f64(P, 1.7, 0.3),
            zeta: vec![Scalar::from_f64(P, 0.8, -0.4)],
            lambda_roots: vec![vec![s(1.0), Scalar::from_f64(P, -0.5, 1.2)]],
            lambda_leading: vec![s(1.0)],
            q_degrees: vec![1],
            convention: ShiftConvention::Qqall,
        };
        let oracle = sl2_m1_oracle(&spec);
        let out = solve_bethe(&spec, &SolveOptions { seeds: 64, ..Default::default() }, &c);
        let mut got: Vec<Scalar> = out.states.iter().map(|st| st.roots[0][0].clone()).collect();
        sort_lex(&mut got);
        // the w = 0 root of the quadratic's prefactor is excluded; oracle already divided it out
        assert_eq!(got.len(), oracle.len());
        for (a, b) in got.iter().zip(&oracle) {
            assert!(a.dist(b) < 1e-40, "{a} vs {b}");
        }
        let scan = dense_seed_oracle(&spec, 100);
        assert_eq!(scan.len(), got.len());
        for w in &scan {
            assert!(got.iter().any(|g| (g.to_c64() - w).norm() < 1e-7));
        }
    }

    fn sl3_spec(conv: ShiftConvention) -> QQSpec {
        QQSpec {
            r: 2,
            q: Scalar::from_f64(P, 1.3, 0.45),
            zeta: vec![Scalar::from_f64(P, 1.7, 0.2), Scalar::from_f64(P, -0.6, 0.9)],
            lambda_roots: vec![vec![s(1.0), Scalar::from_f64(P, 0.2, -0.7)], vec![Scalar::from_f64(P, -1.1, 0.4)]],
            lambda_leading: vec![s(1.0), Scalar::from_f64(P, 2.0, 0.5)],
            q_degrees: vec![1, 1],
            convention: conv,
        }
    }

    fn first_solution(spec: &QQSpec, c: &Ctx) -> QQSolution {
        let out = solve_bethe(spec, &SolveOptions { seeds: 32, ..Default::default() }, c);
        assert!(!out.states.is_empty(), "{}", out.diagnostic);
        solution_from_q_plus(spec, out.states[0].q_plus(), c).unwrap()
    }

    #[test]
    fn sl3_chains_and_backlund() {
        let c = ctx();
        for conv in [ShiftConvention::Qqall, ShiftConvention::Qqatype] {
            let spec = sl3_spec(conv);
            let sol = first_solution(&spec, &c);
            for (k, rep) in all_residuals(&spec, &sol, &c).unwrap() {
                assert!(rep.pass, "{conv:?} {k:?} {rep:?}");
            }
            assert!(nondegeneracy_check(&spec, &sol, &c).is_empty());
            let (s1, b1) = backlund(&spec, &sol, 1, &c).unwrap();
            for (k, rep) in all_residuals(&s1, &b1, &c).unwrap() {
                assert!(rep.pass, "{conv:?} after backlund {k:?} {rep:?}");
            }
            // second line of the reflected system is the old chain line
            let old12 = sol.chain(1, 2).unwrap();
            let lc = sol.q_minus[0].leading();
            assert!(b1.q_minus[1].rel_dist(&old12.scale(&lc.recip())) < 1e-40);
            let (s2, b2) = backlund(&s1, &b1, 1, &c).unwrap();
            for i in 0..2 {
                assert!(s2.xi(i + 1).dist(&spec.xi(i + 1)) < 1e-50);
                assert!(b2.q_plus[i].rel_dist(&sol.q_plus[i]) < 1e-45);
                assert!(b2.q_minus[i].rel_dist(&sol.q_minus[i]) < 1e-40);
            }
        }
    }

    #[test]
    fn homotopy_and_newton_agree_on_sl3() {
        let c = ctx();
        let spec = sl3_spec(ShiftConvention::Qqall);
        let a = solve_bethe(&spec, &SolveOptions { seeds: 48, ..Default::default() }, &c);
        let b = solve_bethe(&spec, &SolveOptions { seeds: 48, strategy: Strategy::Homotopy, ..Default::default() }, &c);
        assert!(!b.states.is_empty(), "{}", b.diagnostic);
        for st in &b.states {
            assert!(a.states.iter().any(|t| same_state(&t.roots, &st.roots, 1e-30)));
        }
    }

    #[test]
    fn resonant_twist_errors() {
        let c = ctx();
        let q = s(2.0);
        // a = b·q³ with A = B = 1: the degree-3 column vanishes
        let rhs = Poly::from_f64(P, &[0.0, 0.0, 0.0, 1.0]);
        let e = solve_qdiff(&s(8.0), &Poly::one(P), &s(1.0), &Poly::one(P), &q, &rhs, 5, &c);
        assert!(matches!(e, Err(Error::ResonantTwist(_))));
    }

    #[test]
    fn nondegeneracy_examples() {
        let c = ctx();
        let spec = sl2_spec();
        let w = Scalar::ratio(P, 17, 8);
        let sol = QQSolution {
            q_plus: vec![Poly::from_roots(&[w], &s(1.0))],
            q_minus: vec![Poly::one(P)],
            chains: BTreeMap::new(),
        };
        assert!(nondegeneracy_check(&spec, &sol, &c).is_empty());
        let bad = QQSolution { q_plus: vec![Poly::from_roots(&[s(2.0)], &s(1.0))], ..sol.clone() };
        assert!(!nondegeneracy_check(&spec, &bad, &c).is_empty());
        let empty = QQSolution { q_plus: vec![Poly::one(P)], ..sol };
        assert!(nondegeneracy_check(&spec, &empty, &c).is_empty());
    }

    #[test]
    fn rootless_state_keeps_precision() {
        let c = ctx();
        let spec = QQSpec { q_degrees: vec![0], ..sl2_spec() };
        let out = solve_bethe(&spec, &SolveOptions::default(), &c);
        let qp = out.states[0].q_plus();
        assert_eq!(qp[0].coeffs()[0].prec(), P);
        let sol = solution_from_q_plus(&spec, qp, &c).unwrap();
        assert!(qq_residual(&spec, &sol, 1, &c).unwrap().max_residual <= c.tol);
    }

    #[test]
    fn conventions_agree_for_rank_one() {
        let c = ctx();
        let mut a = sl2_spec();
        a.convention = ShiftConvention::Qqatype;
        let qp = vec![Poly::from_roots(&[Scalar::ratio(P, 17, 8)], &s(1.0))];
        assert!(bethe_residual(&a, &qp)[0][0].unwrap() <= c.tol);
    }

    #[test]
    fn qqatype_maps_to_qqall() {
        let c = ctx();
        let spec = sl3_spec(ShiftConvention::Qqatype);
        let sol = first_solution(&spec, &c);
        let (s2, sol2) = to_qqall(&spec, &sol, &c).unwrap();
        for (k, rep) in all_residuals(&s2, &sol2, &c).unwrap() {
            assert!(rep.pass, "{k:?} {rep:?}");
        }
        let b = bethe_residual(&s2, &sol2.q_plus);
        assert!(b.iter().flatten().all(|x| x.unwrap() <= c.tol));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]
            #[test]
            fn extend_minus_satisfies_line(re in -2.0f64..2.0, im in -2.0f64..2.0, l0 in -1.5f64..1.5, l1 in -1.5f64..1.5) {
                // any monic Q⁺ of degree 0 gives a solvable line; check its residual
                let c = Ctx::new(P);
                let spec = QQSpec {
                    r: 2,
                    q: Scalar::from_f64(P, 1.4, 0.3),
                    zeta: vec![Scalar::from_f64(P, 1.0 + re.abs(), im), Scalar::from_f64(P, 0.5, 1.0 + re.abs())],
                    lambda_roots: vec![vec![s(l0)], vec![s(l1), Scalar::from_f64(P, re, im)]],
                    lambda_leading: vec![s(1.0), s(1.0)],
                    q_degrees: vec![0, 0],
                    convention: ShiftConvention::Qqall,
                };
                prop_assume!(validate_spec(&spec, &c).is_empty());
                let sol = solution_from_q_plus(&spec, vec![Poly::one(P), Poly::one(P)], &c).unwrap();
                for (_, rep) in all_residuals(&spec, &sol, &c).unwrap() {
                    prop_assert!(rep.pass);
                }
            }
        }
    }
}
