//! Quantum-Wronskian minors: sections, the 𝒟-polynomials, Desnanot–Jacobi
//! checks of the 𝒟𝒟-system and recovery of the QQ-data from minors.
//!
//! Index sets are 1-based subsets of `1..=r+1`. For `I = (i_1, …, i_k)`,
//! `M_I[a][b] = ξ_{i_a}^{k−b} s_{i_a}(q^{b−1} z)` and `D(I) = det M_I / det V_I`,
//! with `V_I` the same matrix at `s ≡ 1`. `D(I)` does not depend on the order of `I`.

use std::collections::BTreeMap;

use crate::qoper::MiuraConnection;
use crate::qq::{to_qqall, QQSolution, QQSpec};
use crate::ratfield::{check_points, check_terms, det_numeric, CMat, IdentityReport, Poly, RFMatrix, RatFunc, Scalar};
use crate::{Ctx, Error, Result};

#[derive(Debug, Clone)]
pub struct SectionData {
    pub q: Scalar,
    pub s: Vec<Poly>,
    pub xi: Vec<Scalar>,
}

impl SectionData {
    pub fn r(&self) -> usize {
        self.s.len() - 1
    }
}

/// Components `(Q⁻_{1..r}, …, Q⁻_{r−1..r}, Q⁻_r, Q⁺_r)` of the section.
pub fn section_from_solution(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Result<SectionData> {
    let (spec, sol) = to_qqall(spec, sol, ctx)?;
    let r = spec.r;
    let mut s = Vec::with_capacity(r + 1);
    for k in 1..=r {
        s.push(sol.chain(k, r).ok_or(Error::MissingChain(k, r))?);
    }
    s.push(sol.qp(r));
    Ok(SectionData { q: spec.q.clone(), s, xi: spec.xis() })
}

fn check_indices(section: &SectionData, idx: &[usize]) -> Result<()> {
    let n = section.s.len();
    let mut seen = vec![false; n + 1];
    let mut dup = Vec::new();
    for &i in idx {
        if i == 0 || i > n {
            return Err(Error::Index(format!("section index {i} outside 1..={n}")));
        }
        if seen[i] {
            dup.push(i);
        }
        seen[i] = true;
    }
    if dup.is_empty() {
        Ok(())
    } else {
        Err(Error::DuplicateIndices(dup))
    }
}

/// `(M_I, V_I)` for the ordered index list `I`.
pub fn build_minor_matrices(section: &SectionData, idx: &[usize]) -> Result<(RFMatrix, CMat)> {
    check_indices(section, idx)?;
    let k = idx.len();
    let prec = section.q.prec();
    let mut qpow = vec![Scalar::one(prec)];
    for b in 1..k {
        qpow.push(&qpow[b - 1] * &section.q);
    }
    let mut v = CMat::zeros(prec, k, k);
    let m = RFMatrix::from_fn(k, k, |a, b| {
        let x = &section.xi[idx[a] - 1];
        let w = x.powi((k - 1 - b) as i64);
        RatFunc::from_poly(section.s[idx[a] - 1].shift(&qpow[b]).scale(&w))
    });
    for a in 0..k {
        for b in 0..k {
            v.set(a, b, section.xi[idx[a] - 1].powi((k - 1 - b) as i64));
        }
    }
    Ok((m, v))
}

/// `det V_I = ∏_{a<b} (ξ_{i_a} − ξ_{i_b})`.
pub fn vandermonde(xi: &[Scalar], idx: &[usize]) -> Scalar {
    let prec = xi[0].prec();
    let mut p = Scalar::one(prec);
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            p = &p * &(&xi[idx[a] - 1] - &xi[idx[b] - 1]);
        }
    }
    p
}

/// `D(I)` as a polynomial. Fails when the twists in `I` collide.
pub fn minor_ratio(section: &SectionData, idx: &[usize], ctx: &Ctx) -> Result<Poly> {
    if idx.is_empty() {
        return Ok(Poly::one(ctx.prec));
    }
    let (m, _) = build_minor_matrices(section, idx)?;
    let vd = vandermonde(&section.xi, idx);
    let scale = idx.iter().map(|&i| section.xi[i - 1].abs_f64()).fold(1.0, f64::max);
    if vd.abs_f64() <= ctx.tol * scale.powi(idx.len() as i32 * idx.len() as i32) {
        return Err(Error::SectionInconsistent(format!("degenerate twist: Vandermonde of {idx:?} vanishes")));
    }
    let d = m.det()?;
    Ok(d.num.scale(&vd.recip()))
}

fn plus_set(r: usize, i: usize) -> Vec<usize> {
    (i + 1..=r + 1).collect()
}

fn minus_set(r: usize, i: usize, j: usize) -> Vec<usize> {
    std::iter::once(i).chain(j + 2..=r + 1).collect()
}

/// The 𝒟-polynomials of a section.
#[derive(Debug, Clone)]
pub struct MinorFrame {
    pub section: SectionData,
    /// `𝒟⁺_i` for `i ∈ 0..=r+1`.
    pub dplus: Vec<Poly>,
    /// `𝒟⁻_{i..j}` for `1 ≤ i ≤ j ≤ r`.
    pub dminus: BTreeMap<(usize, usize), Poly>,
}

impl MinorFrame {
    pub fn r(&self) -> usize {
        self.section.r()
    }

    /// `𝒟⁻_{i..j}`, with `(i, i−1)` meaning `𝒟⁺_{i−1}`.
    pub fn dm(&self, i: usize, j: usize) -> &Poly {
        if j + 1 == i {
            &self.dplus[i - 1]
        } else {
            &self.dminus[&(i, j)]
        }
    }
}

pub fn build_frame(section: &SectionData, ctx: &Ctx) -> Result<MinorFrame> {
    let r = section.r();
    let dplus = (0..=r + 1).map(|i| minor_ratio(section, &plus_set(r, i), ctx)).collect::<Result<Vec<_>>>()?;
    let mut dminus = BTreeMap::new();
    for i in 1..=r {
        for j in i..=r {
            dminus.insert((i, j), minor_ratio(section, &minus_set(r, i, j), ctx)?);
        }
    }
    Ok(MinorFrame { section: section.clone(), dplus, dminus })
}

#[derive(Debug, Clone)]
pub struct DdPolys {
    pub dplus: Poly,
    pub dminus: Poly,
    pub dplus_shifted: Poly,
    pub dminus_shifted: Poly,
}

/// `𝒟⁺_i`, `𝒟⁻_i` and their q-shifts.
pub fn dd_polynomials(frame: &MinorFrame, i: usize) -> Result<DdPolys> {
    let r = frame.r();
    if i == 0 || i > r {
        return Err(Error::Index(format!("node {i} for rank {r}")));
    }
    let q = &frame.section.q;
    let dp = frame.dplus[i].clone();
    let dm = frame.dm(i, i).clone();
    if dp.is_zero() {
        return Err(Error::SectionInconsistent(format!("D+_{i} vanishes")));
    }
    Ok(DdPolys { dplus_shifted: dp.shift(q), dminus_shifted: dm.shift(q), dplus: dp, dminus: dm })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdReport {
    pub pass: bool,
    pub residual: f64,
    pub degenerate_twist: bool,
}

fn sample_count(ps: &[&Poly]) -> usize {
    ps.iter().map(|p| p.deg()).sum::<usize>() + 4
}

/// Line `(i, j)` of the 𝒟𝒟-system, checked on the polynomials and as the
/// Desnanot–Jacobi identity on `M_{i, j+1, …, r+1}` at sampled points.
pub fn verify_dd_chain(frame: &MinorFrame, i: usize, j: usize, ctx: &Ctx) -> Result<DdReport> {
    let r = frame.r();
    if i == 0 || j > r || i > j {
        return Err(Error::Index(format!("chain ({i},{j}) for rank {r}")));
    }
    let xi = &frame.section.xi;
    let (xa, xb) = (&xi[i - 1], &xi[j]);
    let scale = xa.abs_f64().max(xb.abs_f64());
    if xa.dist(xb) <= ctx.tol * scale {
        return Ok(DdReport { pass: false, residual: f64::NAN, degenerate_twist: true });
    }
    let q = frame.section.q.clone();
    let (dpj, dmij, dpj1, dmprev) = (&frame.dplus[j], frame.dm(i, j), &frame.dplus[j + 1], frame.dm(i, j - 1));
    let coef = xa - xb;
    let n = sample_count(&[dpj, dmij, dpj1, dmprev]);
    let direct = check_terms(n, &[], ctx, |z| {
        let qz = &q * z;
        vec![
            &(xa * &dpj.eval(&qz)) * &dmij.eval(z),
            -(&(xb * &dpj.eval(z)) * &dmij.eval(&qz)),
            -(&(&coef * &dpj1.eval(&qz)) * &dmprev.eval(z)),
        ]
    })?;
    let set: Vec<usize> = std::iter::once(i).chain(j + 1..=r + 1).collect();
    let (m, _) = build_minor_matrices(&frame.section, &set)?;
    let dj = check_points(6, &[], ctx, |z| desnanot_jacobi_residual(&m.eval(z)))?;
    let rep = direct.merge(dj);
    Ok(DdReport { pass: rep.pass, residual: rep.max_residual, degenerate_twist: false })
}

/// Line `i` of the 𝒟𝒟-system.
pub fn verify_dd_system(frame: &MinorFrame, i: usize, ctx: &Ctx) -> Result<DdReport> {
    verify_dd_chain(frame, i, i, ctx)
}

/// `det N · N^{12}_{1n} = N^1_1 N^2_n − N^1_n N^2_1` for a numeric square matrix.
pub fn desnanot_jacobi_residual(n: &CMat) -> f64 {
    let k = n.rows;
    if k < 2 {
        return 0.0;
    }
    let sub = |rows_out: &[usize], cols_out: &[usize]| -> Scalar {
        let rows: Vec<usize> = (0..k).filter(|x| !rows_out.contains(x)).collect();
        let cols: Vec<usize> = (0..k).filter(|x| !cols_out.contains(x)).collect();
        if rows.is_empty() {
            return Scalar::one(n.e[0].prec());
        }
        let mut m = CMat::zeros(n.e[0].prec(), rows.len(), cols.len());
        for (a, &ra) in rows.iter().enumerate() {
            for (b, &cb) in cols.iter().enumerate() {
                m.set(a, b, n.at(ra, cb).clone());
            }
        }
        det_numeric(&m)
    };
    let lhs = &det_numeric(n) * &sub(&[0, 1], &[0, k - 1]);
    let t1 = &sub(&[0], &[0]) * &sub(&[1], &[k - 1]);
    let t2 = &sub(&[0], &[k - 1]) * &sub(&[1], &[0]);
    crate::ratfield::term_residual(&[lhs, -t1, t2])
}

/// `Φ_k(z) = ∏_{l=1}^{k−1} P_l(q^{l−1} z)` with `P_l = Λ_r ⋯ Λ_{r−l+1}`; `Φ_0 = Φ_1 = 1`.
pub fn phi(lambdas: &[Poly], q: &Scalar, k: usize) -> Poly {
    let r = lambdas.len();
    let prec = q.prec();
    let mut out = Poly::one(prec);
    let mut p = Poly::one(prec);
    let mut ql = Scalar::one(prec);
    for l in 1..k {
        p = p.mul(&lambdas[r - l]);
        out = out.mul(&p.shift(&ql));
        ql = &ql * q;
    }
    out
}

fn exact_div(num: &Poly, den: &Poly, what: &str, ctx: &Ctx) -> Result<Poly> {
    let (quo, rem) = num.divrem(den)?;
    let scale = num.max_abs().max(f64::MIN_POSITIVE);
    if rem.max_abs() > ctx.cluster_tol * scale {
        return Err(Error::InexactDivision(format!("{what}: remainder {:.3e}", rem.max_abs() / scale)));
    }
    Ok(quo)
}

/// Recovers `Q⁺`, `Q⁻` and all chains from the minors. Output is in the `qqall` convention.
///
/// With `𝒟⁺_i = κ_i Φ_{r+1−i}(z) Q⁺_i(q^{r−i} z)` the chain normalizations
/// follow from the 𝒟𝒟-lines: `η_{i..j} = κ_{i−1} κ_{j+1} / κ_i · ∏_{l=i}^{j} (ξ_i − ξ_{l+1})`.
pub fn q_from_minors(frame: &MinorFrame, lambdas: &[Poly], ctx: &Ctx) -> Result<QQSolution> {
    let r = frame.r();
    let q = &frame.section.q;
    let xi = &frame.section.xi;
    let mut kappa = vec![Scalar::one(ctx.prec); r + 2];
    let mut q_plus = Vec::with_capacity(r);
    let unshift = |p: &Poly, n: usize| p.shift(&q.powi(-(n as i64)));
    for i in 0..=r {
        let f = phi(lambdas, q, r + 1 - i);
        let x = exact_div(&frame.dplus[i], &f, &format!("D+_{i} / F_{i}"), ctx)?;
        if x.is_zero() {
            return Err(Error::VanishingMinor(format!("D+_{i}")));
        }
        let y = unshift(&x, r - i);
        if i == 0 {
            if y.deg() != 0 {
                return Err(Error::SectionInconsistent("D+_0 / F_0 is not constant".into()));
            }
            kappa[0] = y.coeff(0);
        } else {
            let (m, lc) = y.monic();
            kappa[i] = lc;
            q_plus.push(m);
        }
    }
    let mut q_minus = Vec::with_capacity(r);
    let mut chains = BTreeMap::new();
    for i in 1..=r {
        for j in i..=r {
            let f = phi(lambdas, q, r + 1 - j);
            let x = exact_div(frame.dm(i, j), &f, &format!("D-_({i},{j}) / F_{j}"), ctx)?;
            let mut eta = &(&kappa[i - 1] * &kappa[j + 1]) / &kappa[i];
            for l in i..=j {
                eta = &eta * &(&xi[i - 1] - &xi[l]);
            }
            let c = unshift(&x, r - j).scale(&eta.recip());
            if i == j {
                q_minus.push(c);
            } else {
                chains.insert((i, j), c);
            }
        }
    }
    Ok(QQSolution { q_plus, q_minus, chains })
}

/// Swaps `(s_i, ξ_i) ↔ (s_{i+1}, ξ_{i+1})` and checks the permuted minors against
/// the original family: `𝒟'⁺_i = 𝒟⁻_i`, `𝒟'⁻_{i+1} = 𝒟⁻_{i..i+1}`, and the starred
/// `𝒟*⁻_{i−1} = D(i−1, i, i+2, …)` satisfying line `i−1` of the permuted system.
pub fn weyl_permute(frame: &MinorFrame, i: usize, ctx: &Ctx) -> Result<(MinorFrame, IdentityReport)> {
    let r = frame.r();
    if i == 0 || i > r {
        return Err(Error::Index(format!("node {i} for rank {r}")));
    }
    let mut sec = frame.section.clone();
    sec.s.swap(i - 1, i);
    sec.xi.swap(i - 1, i);
    let nf = build_frame(&sec, ctx)?;
    let rel = |a: &Poly, b: &Poly| IdentityReport::from_residual(a.rel_dist(b), ctx.tol);
    let mut rep = rel(&nf.dplus[i], frame.dm(i, i));
    if i < r {
        rep = rep.merge(rel(nf.dm(i + 1, i + 1), frame.dm(i, i + 1)));
    }
    if i > 1 {
        let star = minor_ratio(&frame.section, &[&[i - 1, i][..], &(i + 2..=r + 1).collect::<Vec<_>>()].concat(), ctx)?;
        rep = rep.merge(rel(nf.dm(i - 1, i - 1), &star));
        let line = verify_dd_chain(&nf, i - 1, i - 1, ctx)?;
        rep = rep.merge(IdentityReport { pass: line.pass, max_residual: line.residual });
    }
    Ok((nf, rep))
}

#[derive(Debug, Clone)]
pub struct RegularSingularity {
    pub pass: bool,
    pub alpha: Vec<Scalar>,
    pub max_residual: f64,
}

/// For `k = 1..=r+1`: `det M_{r+2−k..r+1} = α_k W_k 𝒱_k` with `W_k = Φ_k` and
/// `𝒱_k = Q⁺_{r+1−k}(q^{k−1} z)` monic.
pub fn regular_singularity_check(conn: &MiuraConnection, section: &SectionData, ctx: &Ctx) -> Result<RegularSingularity> {
    let r = conn.r;
    let q = &conn.q;
    let mut alpha = Vec::with_capacity(r + 1);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for k in 1..=r + 1 {
        let idx: Vec<usize> = (r + 2 - k..=r + 1).collect();
        let (m, _) = build_minor_matrices(section, &idx)?;
        let det = m.det()?.num;
        let w = phi(&conn.lambda, q, k);
        let (quo, rem) = det.divrem(&w)?;
        let scale = det.max_abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rem.max_abs() / scale);
        if rem.max_abs() > ctx.cluster_tol * scale || quo.is_zero() {
            pass = false;
            alpha.push(Scalar::zero(ctx.prec));
            continue;
        }
        let node = r + 1 - k;
        let target = if node == 0 {
            Poly::one(ctx.prec)
        } else {
            conn.y[node - 1].num.shift(&q.powi(k as i64 - 1))
        };
        let (tm, _) = target.monic();
        let (vm, a) = quo.monic();
        let d = vm.rel_dist(&tm);
        worst = worst.max(d);
        if d > ctx.tol {
            pass = false;
        }
        alpha.push(a);
    }
    Ok(RegularSingularity { pass, alpha, max_residual: worst })
}
