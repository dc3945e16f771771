//! Folding of the GL(∞) QQ-system onto the Â₀ (ADHM) and Â_{𝒩−1} systems,
//! the ADHM Bethe equations, Yang–Yang gradients, and checks of the infinite
//! objects on finite windows.
//!
//! Node `i ∈ ℤ` of the folded lattice carries `Q_i(z) = 𝒬(pⁱz)`,
//! `ξ_i = ξ^{i+1}` and `Λ_i(z) = ξⁱΛ(pⁱz)`. Its line reads
//!
//! `ξ_i Q_i(qz) Q⁻_i(z) − ξ_{i−1} Q_i(z) Q⁻_i(qz) = Λ_i(z) Q_{i+1}(qz) Q_{i−1}(z)`,
//!
//! which at `i = 0` is `ξ𝒬(qz)𝒬⁻(z) − 𝒬(z)𝒬⁻(qz) = Λ(z)𝒬(p⁻¹z)𝒬(pqz)`.
//! Window matrices list nodes in decreasing order, so the connection is
//! upper bidiagonal.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::qq::{
    in_q_power_window, newton_c64, polish, same_state, solve_qdiff, BetheSystem, Equation, Factor, SolveOptions,
    SystemC64, Target, QZ_WINDOW,
};
use crate::ratfield::{check_matrix_fn, check_terms, pi, product_residual, sort_lex, IdentityReport, Poly, RFMatrix, RatFunc, Scalar};
use crate::{Ctx, Error, Result};

#[derive(Debug, Clone)]
pub struct ToroidalSpec {
    pub t1: Scalar,
    pub t2: Scalar,
    pub z_kahler: Scalar,
    pub framing_roots: Vec<Scalar>,
    pub k: usize,
    pub xi: Scalar,
    pub cycle: usize,
}

impl ToroidalSpec {
    /// Spec with `ξ = 𝔷` and `𝒩 = 1`.
    pub fn new(t1: Scalar, t2: Scalar, z_kahler: Scalar, framing_roots: Vec<Scalar>, k: usize) -> Self {
        let xi = z_kahler.clone();
        ToroidalSpec { t1, t2, z_kahler, framing_roots, k, xi, cycle: 1 }
    }

    pub fn prec(&self) -> u32 {
        self.t1.prec()
    }

    pub fn n_framing(&self) -> usize {
        self.framing_roots.len()
    }

    pub fn t1t2(&self) -> Scalar {
        &self.t1 * &self.t2
    }

    pub fn p(&self) -> Scalar {
        self.t1.clone()
    }

    pub fn q(&self) -> Scalar {
        self.t1t2().recip()
    }

    /// `(t1t2)^{n/2}` taken as `exp(n(ln t1 + ln t2)/2)` with principal logs.
    pub fn half_power(&self, n: i64) -> Scalar {
        let l = &self.t1.ln() + &self.t2.ln();
        (&l * &Scalar::ratio(self.prec(), n, 2)).exp()
    }

    /// `κ = (t1t2)^{−N/2} 𝔷`.
    pub fn kappa(&self) -> Scalar {
        &self.half_power(-(self.n_framing() as i64)) * &self.z_kahler
    }

    /// Constant in the linear term of the Yang–Yang function whose critical
    /// points are exactly the Bethe roots with right-hand side `𝔷`.
    pub fn kappa_yy(&self) -> Scalar {
        let n = self.n_framing() as i64;
        let v = &self.half_power(n) * &self.z_kahler;
        if (n + self.k as i64 - 1).rem_euclid(2) == 1 {
            -v
        } else {
            v
        }
    }

    pub fn framing(&self) -> Poly {
        Poly::from_roots(&self.framing_roots, &Scalar::one(self.prec()))
    }

    /// Violated invariants, empty when the spec is usable.
    pub fn validate(&self, ctx: &Ctx) -> Vec<String> {
        let mut v = Vec::new();
        let one = Scalar::one(self.prec());
        if self.t1.is_exact_zero() || self.t2.is_exact_zero() {
            v.push("t1 and t2 must be nonzero".to_string());
            return v;
        }
        let t = self.t1t2();
        if t.rel_dist(&one) <= ctx.tol {
            v.push("q degenerate: t1·t2 = 1".to_string());
        } else if (t.abs_f64() - 1.0).abs() <= ctx.tol {
            let mut pw = t.clone();
            for n in 1..=QZ_WINDOW {
                if pw.rel_dist(&one) <= ctx.tol {
                    v.push(format!("q degenerate: (t1·t2)^{n} = 1"));
                    break;
                }
                pw = &pw * &t;
            }
        }
        if self.xi.rel_dist(&one) <= ctx.tol {
            v.push("ξ = 1 is degenerate".to_string());
        }
        if self.z_kahler.is_exact_zero() {
            v.push("𝔷 must be nonzero".to_string());
        }
        if self.cycle == 0 {
            v.push("cycle length must be at least 1".to_string());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct ToroidalSolution {
    pub q_plus: Poly,
    pub q_minus: Poly,
    /// `X_n` for `n ≥ 1`, see [`chain_family`].
    pub chain_q: BTreeMap<usize, Poly>,
    pub framing: Poly,
}

fn npoints(deg: usize) -> usize {
    (deg + 2).max(8)
}

/// Residual of `ξ𝒬(qz)𝒬⁻(z) − 𝒬(z)𝒬⁻(qz) = Λ(z)𝒬(p⁻¹z)𝒬(pqz)`.
pub fn toroidal_qq_residual(tspec: &ToroidalSpec, tsol: &ToroidalSolution, ctx: &Ctx) -> Result<f64> {
    let (p, q) = (tspec.p(), tspec.q());
    let pi_ = p.recip();
    let pq = &p * &q;
    let (qp, qm, lam) = (&tsol.q_plus, &tsol.q_minus, &tsol.framing);
    let deg = qp.deg() + qm.deg() + lam.deg() + qp.deg();
    let r = check_terms(npoints(deg), &[], ctx, |z| {
        let zq = &q * z;
        vec![
            &(&tspec.xi * &qp.eval(&zq)) * &qm.eval(z),
            -(&qp.eval(z) * &qm.eval(&zq)),
            -(&lam.eval(z) * &(&qp.eval(&(&pi_ * z)) * &qp.eval(&(&pq * z)))),
        ]
    })?;
    Ok(r.max_residual)
}

/// Residual of the same solution read in the other placement,
/// `𝒬(qz)𝒬⁻(z) − ξ'𝒬(z)𝒬⁻(qz) = Λ'(z)𝒬(p'⁻¹qz)𝒬(p'z)` with
/// `ξ' = ξ⁻¹`, `p' = pq`, `Λ' = Λ/ξ`.
pub fn alternate_placement_residual(tspec: &ToroidalSpec, tsol: &ToroidalSolution, ctx: &Ctx) -> Result<f64> {
    let q = tspec.q();
    let xa = tspec.xi.recip();
    let pa = &tspec.p() * &q;
    let pai_q = &pa.recip() * &q;
    let (qp, qm) = (&tsol.q_plus, &tsol.q_minus);
    let lam = tsol.framing.scale(&xa);
    let deg = 2 * qp.deg() + qm.deg() + lam.deg();
    let r = check_terms(npoints(deg), &[], ctx, |z| {
        let zq = &q * z;
        vec![
            &qp.eval(&zq) * &qm.eval(z),
            -(&(&xa * &qp.eval(z)) * &qm.eval(&zq)),
            -(&lam.eval(z) * &(&qp.eval(&(&pai_q * z)) * &qp.eval(&(&pa * z)))),
        ]
    })?;
    Ok(r.max_residual)
}

fn degree_cap(tspec: &ToroidalSpec, extra: usize) -> usize {
    (extra + 2) * (tspec.n_framing() + 1) + 2 * tspec.k + 2
}

/// Linear solve for `𝒬⁻` given `𝒬⁺`; minimal degree.
pub fn q_minus_from_plus(tspec: &ToroidalSpec, q_plus: &Poly, ctx: &Ctx) -> Result<Poly> {
    let (p, q) = (tspec.p(), tspec.q());
    let rhs = tspec.framing().mul(&q_plus.shift(&p.recip())).mul(&q_plus.shift(&(&p * &q)));
    let one = Scalar::one(ctx.prec);
    solve_qdiff(&tspec.xi, &q_plus.shift(&q), &one, q_plus, &q, &rhs, degree_cap(tspec, 0), ctx)
}

/// `X_1..X_nmax` with `X_{−1} = 𝒬⁺`, `X_0 = 𝒬⁻` and
/// `ξ^{n+1}𝒬(qz)X_n(z) − 𝒬(z)X_n(qz) = Λ(z)X_{n−1}(pqz)𝒬(p⁻¹z)`.
pub fn chain_family(tspec: &ToroidalSpec, q_plus: &Poly, q_minus: &Poly, nmax: usize, ctx: &Ctx) -> Result<Vec<Poly>> {
    let (p, q) = (tspec.p(), tspec.q());
    let pq = &p * &q;
    let one = Scalar::one(ctx.prec);
    let lam = tspec.framing();
    let tail = lam.mul(&q_plus.shift(&p.recip()));
    let mut prev = q_minus.clone();
    let mut out = Vec::with_capacity(nmax);
    let mut xin = tspec.xi.clone();
    for n in 1..=nmax {
        xin = &xin * &tspec.xi;
        let rhs = tail.mul(&prev.shift(&pq));
        let x = solve_qdiff(&xin, &q_plus.shift(&q), &one, q_plus, &q, &rhs, degree_cap(tspec, n), ctx)?;
        out.push(x.clone());
        prev = x;
    }
    Ok(out)
}

fn check_resonance(tspec: &ToroidalSpec, ctx: &Ctx) -> Result<()> {
    if let Some(n) = in_q_power_window(&tspec.xi, &tspec.q(), QZ_WINDOW, ctx) {
        return Err(Error::ResonantTwist(format!("ξ = q^{n}")));
    }
    Ok(())
}

/// Full solution from Bethe roots: `𝒬⁺ = ∏(z − s_a)`, `𝒬⁻` and `nchains` chains.
pub fn solution_from_roots(tspec: &ToroidalSpec, roots: &[Scalar], nchains: usize, ctx: &Ctx) -> Result<ToroidalSolution> {
    check_resonance(tspec, ctx)?;
    let q_plus = Poly::from_roots(roots, &Scalar::one(ctx.prec));
    let q_minus = q_minus_from_plus(tspec, &q_plus, ctx)?;
    let chains = chain_family(tspec, &q_plus, &q_minus, nchains, ctx)?;
    Ok(ToroidalSolution {
        q_plus,
        q_minus,
        chain_q: chains.into_iter().enumerate().map(|(n, x)| (n + 1, x)).collect(),
        framing: tspec.framing(),
    })
}

/// Residual of the `X_n` line.
pub fn chain_family_residual(tspec: &ToroidalSpec, tsol: &ToroidalSolution, n: usize, ctx: &Ctx) -> Result<f64> {
    let x = tsol.chain_q.get(&n).ok_or_else(|| Error::Index(format!("chain X_{n} not stored")))?;
    let prev = if n == 1 { &tsol.q_minus } else { tsol.chain_q.get(&(n - 1)).ok_or_else(|| Error::Index(format!("chain X_{}", n - 1)))? };
    let (p, q) = (tspec.p(), tspec.q());
    let pq = &p * &q;
    let pi_ = p.recip();
    let xin = tspec.xi.powi(n as i64 + 1);
    let qp = &tsol.q_plus;
    let deg = 2 * qp.deg() + x.deg() + prev.deg() + tsol.framing.deg();
    let r = check_terms(npoints(deg), &[], ctx, |z| {
        let zq = &q * z;
        vec![
            &(&xin * &qp.eval(&zq)) * &x.eval(z),
            -(&qp.eval(z) * &x.eval(&zq)),
            -(&tsol.framing.eval(z) * &(&prev.eval(&(&pq * z)) * &qp.eval(&(&pi_ * z)))),
        ]
    })?;
    Ok(r.max_residual)
}

// ---------------------------------------------------------------------------
// ADHM Bethe equations

/// `LHS_a/𝔷` per root in product form; `None` at a pole.
pub fn adhm_bethe_ratio(tspec: &ToroidalSpec, roots: &[Scalar]) -> Vec<Option<Scalar>> {
    let (t1, t2, t) = (&tspec.t1, &tspec.t2, tspec.t1t2());
    let prec = tspec.prec();
    roots
        .iter()
        .enumerate()
        .map(|(a, sa)| {
            let mut num = Scalar::one(prec);
            let mut den = tspec.z_kahler.clone();
            for al in &tspec.framing_roots {
                num = &num * &(sa - al);
                den = &den * &(&(&t * sa) - al);
            }
            for (b, sb) in roots.iter().enumerate() {
                if b == a {
                    continue;
                }
                num = &num * &(&(sa - &(t1 * sb)) * &(&(sa - &(t2 * sb)) * &(&(&t * sa) - sb)));
                den = &den * &(&(&(t1 * sa) - sb) * &(&(&(t2 * sa) - sb) * &(sa - &(&t * sb))));
            }
            if den.is_exact_zero() || den.abs_f64() <= num.abs_f64() * 1e-40 {
                None
            } else {
                Some(&num / &den)
            }
        })
        .collect()
}

/// `|LHS_a/𝔷 − 1|` per root; `None` at a pole.
pub fn adhm_bethe_residual(tspec: &ToroidalSpec, roots: &[Scalar]) -> Vec<Option<f64>> {
    let one = Scalar::one(tspec.prec());
    adhm_bethe_ratio(tspec, roots).into_iter().map(|x| x.map(|v| (&v - &one).abs_f64())).collect()
}

/// Log system with every factor written as `αs_a − x`; constant multipliers
/// cancel between numerator and denominator.
fn adhm_system(tspec: &ToroidalSpec) -> BetheSystem {
    let prec = tspec.prec();
    let k = tspec.k;
    let (t1, t2, t) = (tspec.t1.clone(), tspec.t2.clone(), tspec.t1t2());
    let one = Scalar::one(prec);
    let c = tspec.z_kahler.recip();
    let f = |sign: f64, alpha: &Scalar, target: Target| Factor { sign, alpha: alpha.clone(), target };
    let eqs = (0..k)
        .map(|a| {
            let mut fs = Vec::new();
            for al in &tspec.framing_roots {
                fs.push(f(1.0, &one, Target::Const(al.clone())));
                fs.push(f(-1.0, &t, Target::Const(al.clone())));
            }
            for b in (0..k).filter(|&b| b != a) {
                fs.push(f(1.0, &t1.recip(), Target::Var(b)));
                fs.push(f(1.0, &t2.recip(), Target::Var(b)));
                fs.push(f(1.0, &t, Target::Var(b)));
                fs.push(f(-1.0, &t1, Target::Var(b)));
                fs.push(f(-1.0, &t2, Target::Var(b)));
                fs.push(f(-1.0, &t.recip(), Target::Var(b)));
            }
            Equation { var: a, c: c.clone(), factors: fs }
        })
        .collect();
    BetheSystem { eqs, offsets: vec![0, k], n: k }
}

fn adhm_seed(tspec: &ToroidalSpec, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let anchors: Vec<Complex64> = tspec.framing_roots.iter().map(|x| x.to_c64()).collect();
    let (t1, t2) = (tspec.t1.to_c64(), tspec.t2.to_c64());
    let scale = anchors.iter().map(|a| a.norm()).fold(1.0, f64::max);
    (0..tspec.k)
        .map(|_| {
            let noise = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if rng.gen::<f64>() < 0.4 || anchors.is_empty() {
                noise * scale * 2.0
            } else {
                let a = anchors[rng.gen_range(0..anchors.len())];
                a * t1.powi(rng.gen_range(-2..=2)) * t2.powi(rng.gen_range(-2..=2)) + noise * 0.2 * scale
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AdhmOutcome {
    /// Root vectors, each sorted lexicographically; the list is sorted too.
    pub states: Vec<Vec<Scalar>>,
    pub residuals: Vec<Vec<f64>>,
    pub converged_seeds: usize,
    pub diagnostic: String,
}

fn adhm_accept(tspec: &ToroidalSpec, mut roots: Vec<Scalar>, ctx: &Ctx) -> Option<(Vec<Scalar>, Vec<f64>)> {
    let (t1, t2, t) = (&tspec.t1, &tspec.t2, tspec.t1t2());
    for (a, sa) in roots.iter().enumerate() {
        let sc = sa.abs_f64().max(1.0);
        if sa.abs_f64() <= ctx.cluster_tol {
            return None;
        }
        for sb in roots.iter().skip(a + 1) {
            for m in [Scalar::one(ctx.prec), t1.clone(), t2.clone(), t.clone()] {
                if sa.dist(&(&m * sb)) <= ctx.cluster_tol * sc || sb.dist(&(&m * sa)) <= ctx.cluster_tol * sc {
                    return None;
                }
            }
        }
    }
    sort_lex(&mut roots);
    let res: Option<Vec<f64>> = adhm_bethe_residual(tspec, &roots).into_iter().collect();
    let res = res?;
    if res.iter().all(|&x| x <= ctx.tol) {
        Some((roots, res))
    } else {
        None
    }
}

/// Multistart Newton on the ADHM Bethe equations, polished at working precision.
pub fn solve_adhm_bethe(tspec: &ToroidalSpec, opts: &SolveOptions, ctx: &Ctx) -> AdhmOutcome {
    let violations = tspec.validate(ctx);
    if !violations.is_empty() {
        return AdhmOutcome { states: vec![], residuals: vec![], converged_seeds: 0, diagnostic: violations.join("; ") };
    }
    if tspec.k == 0 {
        return AdhmOutcome { states: vec![vec![]], residuals: vec![vec![]], converged_seeds: 1, diagnostic: String::new() };
    }
    let sys = adhm_system(tspec);
    let c64 = SystemC64::from(&sys);
    let one = Complex64::new(1.0, 0.0);
    let seeds: Vec<u64> = (0..opts.seeds as u64).collect();
    let found = opts.exec.map(seeds, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(s));
        let w = newton_c64(&c64, adhm_seed(tspec, &mut rng), one, 100)?;
        let roots = polish(&sys, &w, ctx)?;
        adhm_accept(tspec, roots, ctx)
    });
    let converged = found.iter().filter(|x| x.is_some()).count();
    let mut states: Vec<(Vec<Scalar>, Vec<f64>)> = Vec::new();
    for (r, res) in found.into_iter().flatten() {
        let wrapped = [r.clone()];
        if !states.iter().any(|(t, _)| same_state(std::slice::from_ref(t), &wrapped, ctx.cluster_tol)) {
            states.push((r, res));
        }
    }
    states.sort_by(|a, b| {
        for (u, v) in a.0.iter().zip(&b.0) {
            let o = u.lex_cmp(v);
            if o != std::cmp::Ordering::Equal {
                return o;
            }
        }
        std::cmp::Ordering::Equal
    });
    let diagnostic = if states.is_empty() { format!("no convergent seed out of {}", opts.seeds) } else { String::new() };
    let (states, residuals) = states.into_iter().unzip();
    AdhmOutcome { states, residuals, converged_seeds: converged, diagnostic }
}

// ---------------------------------------------------------------------------
// folding

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub pass: bool,
    /// Bethe residuals of the roots of `𝒬⁺`.
    pub bethe: Vec<f64>,
    /// QQ residual of the input solution and of the one rebuilt from its roots.
    pub qq_input: f64,
    pub qq_rebuilt: f64,
    /// Relative distance between the input `𝒬⁻` and the rebuilt one.
    pub q_minus_dist: f64,
    pub alternate_placement: f64,
}

/// Both directions of the fold: roots of `𝒬⁺` solve the Bethe equations,
/// and those roots rebuild a `𝒬⁻` by a linear solve.
pub fn fold_check(tspec: &ToroidalSpec, tsol: &ToroidalSolution, ctx: &Ctx) -> Result<FoldReport> {
    check_resonance(tspec, ctx)?;
    let roots = tsol.q_plus.roots();
    let bethe: Vec<f64> = adhm_bethe_residual(tspec, &roots).into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    let qq_input = toroidal_qq_residual(tspec, tsol, ctx)?;
    let rebuilt = solution_from_roots(tspec, &roots, 0, ctx)?;
    let qq_rebuilt = toroidal_qq_residual(tspec, &rebuilt, ctx)?;
    let q_minus_dist = rebuilt.q_minus.rel_dist(&tsol.q_minus);
    let alternate_placement = alternate_placement_residual(tspec, tsol, ctx)?;
    let pass = bethe.iter().all(|&x| x <= ctx.tol)
        && qq_input <= ctx.tol
        && qq_rebuilt <= ctx.tol
        && alternate_placement <= ctx.tol;
    Ok(FoldReport { pass, bethe, qq_input, qq_rebuilt, q_minus_dist, alternate_placement })
}

// ---------------------------------------------------------------------------
// Yang–Yang

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YangYangReport {
    /// `|exp(2π ∂Y/∂σ_a) − 1|`.
    pub grad_residual: Vec<f64>,
    /// Distance of `2π ∂Y/∂σ_a` from `ln(LHS_a/𝔷)` modulo `2πi`.
    pub log_mismatch: Vec<f64>,
    /// Finite-difference gradient against the analytic one, relative to `max(|∂Y|, 1)`.
    pub fd_rel_error: Vec<f64>,
    pub branch_flag: Vec<bool>,
}

fn ln_2sinh(x: &Scalar, pi_: &Scalar) -> Scalar {
    let e = (pi_ * x).exp();
    (&e - &e.recip()).ln()
}

/// `ln v` on the branch whose cut points away from `phi`.
fn ln_rotated(v: &Scalar, phi: &Scalar) -> Scalar {
    let rot = (-&(&Scalar::from_f64(v.prec(), 0.0, 1.0) * phi)).exp();
    &(v * &rot).ln() + &(&Scalar::from_f64(v.prec(), 0.0, 1.0) * phi)
}

fn wrap_im(z: &Scalar) -> f64 {
    let c = z.to_c64();
    let tau = 2.0 * std::f64::consts::PI;
    Complex64::new(c.re, c.im - tau * (c.im / tau).round()).norm()
}

/// One `ℓ(Σ c_j σ_j + shift)` term of `Y`.
struct YyTerm {
    coef: Vec<(usize, i32)>,
    shift: Scalar,
}

fn yy_terms(k: usize, alphas: &[Scalar], e1: &Scalar, e2: &Scalar) -> Vec<YyTerm> {
    let e12 = e1 + e2;
    let mut v = Vec::new();
    for a in 0..k {
        for al in alphas {
            v.push(YyTerm { coef: vec![(a, 1)], shift: -al });
            v.push(YyTerm { coef: vec![(a, -1)], shift: al - &e12 });
        }
    }
    for a in 0..k {
        for b in (0..k).filter(|&b| b != a) {
            for s in [-e1, -e2, e12.clone()] {
                v.push(YyTerm { coef: vec![(a, 1), (b, -1)], shift: s });
            }
        }
    }
    v
}

/// Checks the gradient condition of the Yang–Yang function at `roots` and
/// compares the analytic gradient with a central difference of step
/// `h = 2^(−prec/3)`. The difference of `ℓ` across each term is the integral of
/// `ℓ'` over the step, done by 5-point Gauss–Legendre.
pub fn yang_yang_grad_check(tspec: &ToroidalSpec, roots: &[Scalar], ctx: &Ctx) -> Result<YangYangReport> {
    let prec = ctx.prec;
    let k = roots.len();
    if roots.iter().any(|s| s.is_exact_zero()) {
        return Err(Error::Input("Yang–Yang check needs nonzero roots".into()));
    }
    let tau = Scalar { re: pi(prec) * 2u32, im: rug::Float::new(prec) };
    let pi_ = Scalar { re: pi(prec), im: rug::Float::new(prec) };
    let to_sigma = |x: &Scalar| &x.ln() / &tau;
    let sig: Vec<Scalar> = roots.iter().map(to_sigma).collect();
    let alphas: Vec<Scalar> = tspec.framing_roots.iter().map(to_sigma).collect();
    let (e1, e2) = (to_sigma(&tspec.t1), to_sigma(&tspec.t2));
    let e12 = &e1 + &e2;
    let kap = to_sigma(&tspec.kappa_yy());
    let lkap = &kap * &tau;

    // analytic: 2π ∂Y/∂σ_a
    let grad: Vec<Scalar> = (0..k)
        .map(|a| {
            let mut g = -&lkap;
            for al in &alphas {
                g = &g + &ln_2sinh(&(&sig[a] - al), &pi_);
                g = &g - &ln_2sinh(&(&(al - &sig[a]) - &e12), &pi_);
            }
            for b in (0..k).filter(|&b| b != a) {
                let d = &sig[a] - &sig[b];
                for s in [-&e1, -&e2, e12.clone()] {
                    g = &g + &ln_2sinh(&(&d + &s), &pi_);
                    g = &g - &ln_2sinh(&(&(-&d) + &s), &pi_);
                }
            }
            g
        })
        .collect();

    let ratio = adhm_bethe_ratio(tspec, roots);
    let grad_residual: Vec<f64> = grad.iter().map(|g| (&g.exp() - &Scalar::one(prec)).abs_f64()).collect();
    let log_mismatch: Vec<f64> = (0..k)
        .map(|a| match &ratio[a] {
            Some(v) => wrap_im(&(&grad[a] - &v.ln())),
            None => f64::INFINITY,
        })
        .collect();

    // Gauss–Legendre on [−1, 1]
    let gl: [(f64, f64); 5] = [
        (0.0, 128.0 / 225.0),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let gl_nodes = gl_exact(prec, &gl);
    let h = Scalar::real(prec, 2f64.powi(-(prec as i32) / 3));
    let terms = yy_terms(k, &alphas, &e1, &e2);
    let mut fd_rel_error = vec![0.0; k];
    let mut branch_flag = vec![false; k];
    for a in 0..k {
        // 2π · (Y(σ + h e_a) − Y(σ − h e_a)) / 2h
        let mut acc = -&lkap;
        for term in &terms {
            let Some(&(_, c)) = term.coef.iter().find(|(j, _)| *j == a) else { continue };
            let mut x = term.shift.clone();
            for &(j, cj) in &term.coef {
                x = &x + &(&sig[j] * &Scalar::from_int(prec, cj as i64));
            }
            let center = {
                let e = (&pi_ * &x).exp();
                &e - &e.recip()
            };
            if center.is_exact_zero() || !center.is_finite() {
                branch_flag[a] = true;
                continue;
            }
            let phi = Scalar::real(prec, center.to_c64().arg());
            let mut integral = Scalar::zero(prec);
            for (node, weight) in &gl_nodes {
                let y = &x + &(&(&h * node) * &Scalar::from_int(prec, c as i64));
                let e = (&pi_ * &y).exp();
                let v = &e - &e.recip();
                integral = &integral + &(weight * &ln_rotated(&v, &phi));
            }
            // mean of ℓ' over the step times the chain-rule sign
            let mean = &integral * &Scalar::real(prec, 0.5);
            acc = &acc + &(&mean * &Scalar::from_int(prec, c as i64));
        }
        fd_rel_error[a] = acc.dist(&grad[a]) / grad[a].abs_f64().max(1.0);
    }
    Ok(YangYangReport { grad_residual, log_mismatch, fd_rel_error, branch_flag })
}

/// Gauss–Legendre nodes and weights at working precision by Newton on `P_5`.
fn gl_exact(prec: u32, approx: &[(f64, f64)]) -> Vec<(Scalar, Scalar)> {
    use rug::Float;
    approx
        .iter()
        .map(|&(x0, _)| {
            let mut x = Float::with_val(prec, x0);
            let mut dp = Float::with_val(prec, 1);
            for _ in 0..8 {
                // P_5 and its derivative by the three-term recurrence
                let mut p0 = Float::with_val(prec, 1);
                let mut p1 = x.clone();
                for n in 1..5u32 {
                    let p2 = (Float::with_val(prec, 2 * n + 1) * &x * &p1 - Float::with_val(prec, n) * &p0) / (n + 1);
                    p0 = p1;
                    p1 = p2;
                }
                let x2m1 = Float::with_val(prec, &x * &x) - 1u32;
                dp = Float::with_val(prec, 5u32) * (Float::with_val(prec, &x * &p1) - &p0) / &x2m1;
                if x0 == 0.0 {
                    x = Float::with_val(prec, 0);
                    break;
                }
                x -= Float::with_val(prec, &p1 / &dp);
            }
            let x2 = Float::with_val(prec, &x * &x);
            let w = Float::with_val(prec, 2u32) / ((Float::with_val(prec, 1) - &x2) * Float::with_val(prec, &dp * &dp));
            (Scalar { re: x, im: Float::new(prec) }, Scalar { re: w, im: Float::new(prec) })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// lattices and windows

/// Data at one node of the infinite lattice.
#[derive(Debug, Clone)]
pub struct Node {
    pub xi: Scalar,
    pub q_plus: Poly,
    pub q_minus: Poly,
    pub lambda: Poly,
}

/// Any assignment of node data to `i ∈ ℤ`.
pub trait NodeLattice: Sync {
    fn q(&self) -> Scalar;
    fn node(&self, i: i64) -> Node;
}

/// Lattice generated by `𝒩` representative nodes `0..𝒩` through the twisted wrap
/// `Q_{i+𝒩}(z) = Q_i(p^𝒩 z)`, `ξ_{i+𝒩} = ξ^𝒩 ξ_i`, `Λ_{i+𝒩}(z) = ξ^𝒩 Λ_i(p^𝒩 z)`.
#[derive(Debug, Clone)]
pub struct PeriodicLattice {
    pub xi: Scalar,
    pub p: Scalar,
    pub q: Scalar,
    pub nodes: Vec<Node>,
}

impl PeriodicLattice {
    pub fn period(&self) -> usize {
        self.nodes.len()
    }

    pub fn from_toroidal(tspec: &ToroidalSpec, tsol: &ToroidalSolution) -> Self {
        PeriodicLattice {
            xi: tspec.xi.clone(),
            p: tspec.p(),
            q: tspec.q(),
            nodes: vec![Node {
                xi: tspec.xi.clone(),
                q_plus: tsol.q_plus.clone(),
                q_minus: tsol.q_minus.clone(),
                lambda: tsol.framing.clone(),
            }],
        }
    }

    /// Same lattice read with period `n`.
    pub fn regroup(&self, n: usize) -> PeriodicLattice {
        PeriodicLattice {
            xi: self.xi.clone(),
            p: self.p.clone(),
            q: self.q.clone(),
            nodes: (0..n as i64).map(|i| self.node(i)).collect(),
        }
    }

    /// Recomputes every `Q⁻` from its line.
    pub fn fill_minus(&mut self, ctx: &Ctx) -> Result<()> {
        let cap = self.nodes.iter().map(|n| n.q_plus.deg() * 2 + n.lambda.deg()).sum::<usize>() + 4;
        for j in 0..self.period() {
            let i = j as i64;
            let (cur, prev, next) = (self.node(i), self.node(i - 1), self.node(i + 1));
            let rhs = cur.lambda.mul(&next.q_plus.shift(&self.q)).mul(&prev.q_plus);
            let qm = solve_qdiff(&cur.xi, &cur.q_plus.shift(&self.q), &prev.xi, &cur.q_plus, &self.q, &rhs, cap, ctx)?;
            self.nodes[j].q_minus = qm;
        }
        Ok(())
    }
}

impl NodeLattice for PeriodicLattice {
    fn q(&self) -> Scalar {
        self.q.clone()
    }

    fn node(&self, i: i64) -> Node {
        let n = self.period() as i64;
        let j = i.rem_euclid(n);
        let m = (i - j) / n * n;
        let base = &self.nodes[j as usize];
        if m == 0 {
            return base.clone();
        }
        let pm = self.p.powi(m);
        let xm = self.xi.powi(m);
        Node {
            xi: &xm * &base.xi,
            q_plus: base.q_plus.shift(&pm),
            q_minus: base.q_minus.shift(&pm),
            lambda: base.lambda.shift(&pm).scale(&xm),
        }
    }
}

fn node_line_terms(lat: &dyn NodeLattice, i: i64, minus: &Poly, z: &Scalar) -> Vec<Scalar> {
    let q = lat.q();
    let (cur, prev, next) = (lat.node(i), lat.node(i - 1), lat.node(i + 1));
    let zq = &q * z;
    vec![
        &(&cur.xi * &cur.q_plus.eval(&zq)) * &minus.eval(z),
        -(&(&prev.xi * &cur.q_plus.eval(z)) * &minus.eval(&zq)),
        -(&cur.lambda.eval(z) * &(&next.q_plus.eval(&zq) * &prev.q_plus.eval(z))),
    ]
}

fn node_line_residual(lat: &dyn NodeLattice, i: i64, ctx: &Ctx) -> Result<f64> {
    let cur = lat.node(i);
    let deg = 3 * cur.q_plus.deg() + cur.q_minus.deg() + cur.lambda.deg() + 4;
    Ok(check_terms(npoints(deg), &[], ctx, |z| node_line_terms(lat, i, &cur.q_minus, z))?.max_residual)
}

/// Max residual over the `𝒩` cyclic lines of the Â_{𝒩−1} system.
pub fn ntoroidal_qq_residual(lat: &PeriodicLattice, ctx: &Ctx) -> Result<f64> {
    let mut m: f64 = 0.0;
    for j in 0..lat.period() as i64 {
        m = m.max(node_line_residual(lat, j, ctx)?);
    }
    Ok(m)
}

/// `n×n` slices of the connection `A`, the gauge matrix `v⁻¹` and the twist,
/// over nodes `i0..i0+n`; row `a` holds node `i0 + n − 1 − a`.
#[derive(Debug, Clone)]
pub struct WindowOper {
    pub i0: i64,
    pub n: usize,
    pub a: RFMatrix,
    pub vinv: RFMatrix,
    pub z: RFMatrix,
    /// `C(a, l)` for `l ≥ a`; `C(a, a)` is `Q⁻` of row `a`.
    pub chains: BTreeMap<(usize, usize), Poly>,
    pub q: Scalar,
}

impl WindowOper {
    pub fn node_of_row(&self, a: usize) -> i64 {
        self.i0 + self.n as i64 - 1 - a as i64
    }
}

fn chain_cap(lat: &dyn NodeLattice, nodes: &[Node], len: usize) -> usize {
    let _ = lat;
    let dq = nodes.iter().map(|n| n.q_plus.deg()).max().unwrap_or(0);
    let dl = nodes.iter().map(|n| n.lambda.deg()).max().unwrap_or(0);
    (len + 2) * (dl + dq + 1) + 2 * dq + 2
}

/// The `A` slice alone; needs no chains.
pub fn connection_window(lat: &dyn NodeLattice, i0: i64, n: usize, ctx: &Ctx) -> Result<RFMatrix> {
    let q = lat.q();
    let top = i0 + n as i64 - 1;
    let mut a_mat = RFMatrix::zeros(ctx.prec, n, n);
    for a in 0..n {
        let (cur, up) = (lat.node(top - a as i64), lat.node(top - a as i64 + 1));
        let num = cur.q_plus.shift(&q).mul(&up.q_plus).scale(&cur.xi);
        let den = cur.q_plus.mul(&up.q_plus.shift(&q));
        a_mat.set(a, a, RatFunc::new(num, den)?.reduce(ctx));
        if a + 1 < n {
            a_mat.set(a, a + 1, RatFunc::from_poly(cur.lambda.clone()));
        }
    }
    Ok(a_mat)
}

/// Builds the window of the lattice starting at node `i0`.
pub fn unfold_lattice(lat: &dyn NodeLattice, i0: i64, n: usize, ctx: &Ctx) -> Result<WindowOper> {
    if n < 2 {
        return Err(Error::Input(format!("window size {n} < 2")));
    }
    let prec = ctx.prec;
    let q = lat.q();
    let top = i0 + n as i64 - 1;
    // rows 0..n plus one node above the top and one below the bottom
    let node_at = |a: i64| lat.node(top - a);
    let nodes: Vec<Node> = (-1..=n as i64).map(node_at).collect();
    let row = |a: usize| &nodes[a + 1];
    let above = |a: usize| &nodes[a];
    let below = |a: usize| &nodes[a + 2];

    let a_mat = connection_window(lat, i0, n, ctx)?;

    let mut chains = BTreeMap::new();
    for a in 0..n {
        let mut prev = row(a).q_minus.clone();
        chains.insert((a, a), prev.clone());
        for l in a + 1..n {
            let (nl, bl) = (row(l), below(l));
            let rhs = nl.lambda.mul(&prev.shift(&q)).mul(&bl.q_plus);
            let c = solve_qdiff(&row(a).xi, &nl.q_plus.shift(&q), &bl.xi, &nl.q_plus, &q, &rhs, chain_cap(lat, &nodes, l - a), ctx)?;
            chains.insert((a, l), c.clone());
            prev = c;
        }
    }
    let mut vinv = RFMatrix::zeros(prec, n, n);
    for a in 0..n {
        for c in a..n {
            let num = if c == a { above(a).q_plus.clone() } else { chains[&(a, c - 1)].clone() };
            vinv.set(a, c, RatFunc::new(num, row(c).q_plus.clone())?);
        }
    }
    let z = RFMatrix::diagonal(&(0..n).map(|a| RatFunc::constant(row(a).xi.clone())).collect::<Vec<_>>());
    Ok(WindowOper { i0, n, a: a_mat, vinv, z, chains, q })
}

/// Window of the 1-toroidal lattice.
pub fn unfold_window(tspec: &ToroidalSpec, tsol: &ToroidalSolution, i0: i64, n: usize, ctx: &Ctx) -> Result<WindowOper> {
    unfold_lattice(&PeriodicLattice::from_toroidal(tspec, tsol), i0, n, ctx)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowReport {
    pub pass: bool,
    /// QQ lines of every node in the window.
    pub qq: f64,
    /// Chain lines `C(a, l)`, `l > a`.
    pub chains: f64,
    /// `v⁻¹(qz) A(z) = Z v⁻¹(z)`.
    pub gauge: f64,
}

/// Residuals of the GL(∞) relations on a window.
pub fn verify_window(lat: &dyn NodeLattice, win: &WindowOper, ctx: &Ctx) -> Result<WindowReport> {
    let q = &win.q;
    let mut qq: f64 = 0.0;
    for a in 0..win.n {
        qq = qq.max(node_line_residual(lat, win.node_of_row(a), ctx)?);
    }
    let mut ch: f64 = 0.0;
    for a in 0..win.n {
        for l in a + 1..win.n {
            let (ia, il) = (win.node_of_row(a), win.node_of_row(l));
            let (na, nl, bl) = (lat.node(ia), lat.node(il), lat.node(il - 1));
            let c = &win.chains[&(a, l)];
            let prev = &win.chains[&(a, l - 1)];
            let deg = c.deg() + prev.deg() + 2 * nl.q_plus.deg() + nl.lambda.deg() + bl.q_plus.deg();
            let r = check_terms(npoints(deg), &[], ctx, |z| {
                let zq = q * z;
                vec![
                    &(&na.xi * &nl.q_plus.eval(&zq)) * &c.eval(z),
                    -(&(&bl.xi * &nl.q_plus.eval(z)) * &c.eval(&zq)),
                    -(&nl.lambda.eval(z) * &(&prev.eval(&zq) * &bl.q_plus.eval(z))),
                ]
            })?;
            ch = ch.max(r.max_residual);
        }
    }
    let mut poles = win.vinv.poles();
    poles.extend(win.a.poles());
    let qi = q.recip();
    let poles: Vec<Scalar> = poles.iter().flat_map(|p| [p.clone(), p * &qi]).collect();
    let gauge = crate::ratfield::check_points(12, &poles, ctx, |x| {
        let qx = q * x;
        product_residual(&win.vinv.eval(&qx), &win.a.eval(x), &win.z.eval(x).matmul(&win.vinv.eval(x)))
    })?
    .max_residual;
    let pass = qq <= ctx.tol && ch <= ctx.tol && gauge <= ctx.tol;
    Ok(WindowReport { pass, qq, chains: ch, gauge })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShiftReport {
    pub pass: bool,
    pub a_residual: f64,
    pub vinv_residual: f64,
}

/// Compares the windows at `i0` and `i0 + s`: `A` must satisfy
/// `A_{i+s, j+s}(z) = ξ^s A_{ij}(p^s z)` and `v⁻¹` must be invariant under
/// the same shift. Needs `n ≥ 4`.
pub fn lattice_shift_check(
    lat: &dyn NodeLattice,
    s: usize,
    xi: &Scalar,
    p: &Scalar,
    i0: i64,
    n: usize,
    ctx: &Ctx,
) -> Result<ShiftReport> {
    if n < 4 {
        return Err(Error::Input(format!("shift check needs a window of at least 4, got {n}")));
    }
    let a0 = connection_window(lat, i0, n, ctx)?;
    let a1 = connection_window(lat, i0 + s as i64, n, ctx)?;
    let ps = p.powi(s as i64);
    let xs = xi.powi(s as i64);
    let pinv = ps.recip();
    let mut poles = a1.poles();
    poles.extend(a0.poles().iter().map(|x| x * &pinv));
    let a0s = a0.scale(&xs);
    let a_rep: IdentityReport = check_matrix_fn(10, &poles, ctx, |z| (a1.eval(z), a0s.eval(&(&ps * z))))?;
    // data off the pattern may admit no polynomial chains at all
    let vinv_residual = match (unfold_lattice(lat, i0, n, ctx), unfold_lattice(lat, i0 + s as i64, n, ctx)) {
        (Ok(w0), Ok(w1)) => {
            let mut poles = w1.vinv.poles();
            poles.extend(w0.vinv.poles().iter().map(|x| x * &pinv));
            check_matrix_fn(10, &poles, ctx, |z| (w1.vinv.eval(z), w0.vinv.eval(&(&ps * z))))?.max_residual
        }
        _ => f64::INFINITY,
    };
    Ok(ShiftReport {
        pass: a_rep.pass && vinv_residual <= ctx.tol,
        a_residual: a_rep.max_residual,
        vinv_residual,
    })
}

/// `𝒱₁ A(z) 𝒱₁⁻¹ = ξ A(pz)` on windows of the 1-toroidal lattice.
pub fn shift_conjugation_check(tspec: &ToroidalSpec, tsol: &ToroidalSolution, i0: i64, n: usize, ctx: &Ctx) -> Result<ShiftReport> {
    let lat = PeriodicLattice::from_toroidal(tspec, tsol);
    lattice_shift_check(&lat, 1, &tspec.xi, &tspec.p(), i0, n, ctx)
}
