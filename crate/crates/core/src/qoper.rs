//! Miura q-connections `A(z)`, the diagonalizing gauge `v(z)⁻¹`, the twist
//! relation `v(qz)⁻¹ A(z) = Z v(z)⁻¹`, associated 2×2 opers and Bäcklund gauges.
//!
//! Matrix indices in the public API are 1-based to match the node labels.

use crate::qq::{backlund, to_qqall, QQSolution, QQSpec};
use crate::qwronskian::MinorFrame;
use crate::ratfield::{check_points, product_residual, CMat, IdentityReport, Poly, RFMatrix, RatFunc, Scalar};
use crate::{Ctx, Error, Result};

#[derive(Debug, Clone)]
pub struct MiuraConnection {
    pub r: usize,
    pub q: Scalar,
    pub zeta: Vec<Scalar>,
    pub lambda: Vec<Poly>,
    /// Cartan data `y_i`; polynomial (`Q⁺_i`) for Miura–Plücker opers.
    pub y: Vec<RatFunc>,
    /// `g_i = ζ_i y_i(qz) / y_i(z)`.
    pub g: Vec<RatFunc>,
    pub a: RFMatrix,
}

impl MiuraConnection {
    /// `g_i` with `g_0 = g_{r+1} = 1`.
    pub fn g_at(&self, i: usize) -> RatFunc {
        if i == 0 || i > self.r {
            RatFunc::one(self.q.prec())
        } else {
            self.g[i - 1].clone()
        }
    }

    fn y_at(&self, i: usize) -> RatFunc {
        if i == 0 || i > self.r {
            RatFunc::one(self.q.prec())
        } else {
            self.y[i - 1].clone()
        }
    }

    fn zeta_at(&self, i: usize) -> Scalar {
        if i == 0 || i > self.r {
            Scalar::one(self.q.prec())
        } else {
            self.zeta[i - 1].clone()
        }
    }

    pub fn poles(&self) -> Vec<Scalar> {
        self.a.poles()
    }
}

/// Upper-bidiagonal `A` with `A_kk = g_k / g_{k−1}` and `A_{k,k+1} = Λ_k`.
pub fn connection_from_y(q: &Scalar, zeta: &[Scalar], lambda: &[Poly], y: Vec<RatFunc>) -> Result<MiuraConnection> {
    let r = zeta.len();
    if lambda.len() != r || y.len() != r {
        return Err(Error::Shape(format!("rank {r} needs {r} Lambda and y entries")));
    }
    let prec = q.prec();
    let mut g = Vec::with_capacity(r);
    for (i, yi) in y.iter().enumerate() {
        if yi.is_zero() {
            return Err(Error::Input(format!("y_{} vanishes identically", i + 1)));
        }
        g.push(yi.q_shift(q)?.div(yi)?.scale(&zeta[i]));
    }
    let gat = |i: usize| if i == 0 || i > r { RatFunc::one(prec) } else { g[i - 1].clone() };
    let mut a = RFMatrix::zeros(prec, r + 1, r + 1);
    for k in 1..=r + 1 {
        a.set(k - 1, k - 1, gat(k).div(&gat(k - 1))?);
        if k <= r {
            a.set(k - 1, k, RatFunc::from_poly(lambda[k - 1].clone()));
        }
    }
    Ok(MiuraConnection { r, q: q.clone(), zeta: zeta.to_vec(), lambda: lambda.to_vec(), y, g, a })
}

/// Connection of a QQ-solution; `qqatype` data are first rewritten as `qqall`.
pub fn build_connection(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Result<MiuraConnection> {
    let (spec, sol) = to_qqall(spec, sol, ctx)?;
    if let Some(i) = sol.q_plus.iter().position(|p| p.is_zero()) {
        return Err(Error::Input(format!("Q+_{} vanishes identically", i + 1)));
    }
    let lambda: Vec<Poly> = (1..=spec.r).map(|i| spec.lambda(i)).collect();
    let y = sol.q_plus.iter().map(|p| RatFunc::from_poly(p.clone())).collect();
    connection_from_y(&spec.q, &spec.zeta, &lambda, y)
}

#[derive(Debug, Clone)]
pub struct GaugeMatrix {
    pub vinv: RFMatrix,
}

/// `vinv[i][c] = Q⁻_{i..c−1}(z) / Q⁺_c(z)` for `c ≥ i` (so the diagonal is `Q⁺_{i−1}/Q⁺_i`).
pub fn build_gauge_inverse(sol: &QQSolution) -> Result<GaugeMatrix> {
    let r = sol.r();
    let prec = sol.prec();
    let mut v = RFMatrix::zeros(prec, r + 1, r + 1);
    for i in 1..=r + 1 {
        for c in i..=r + 1 {
            let num = sol.chain(i, c - 1).ok_or(Error::MissingChain(i, c - 1))?;
            v.set(i - 1, c - 1, RatFunc::new(num, sol.qp(c))?);
        }
    }
    Ok(GaugeMatrix { vinv: v })
}

/// `Z = diag(ξ_1, …, ξ_{r+1})`.
pub fn twist_matrix(spec: &QQSpec) -> RFMatrix {
    RFMatrix::diagonal(&spec.xis().into_iter().map(RatFunc::constant).collect::<Vec<_>>())
}

fn shifted_poles(poles: &[Scalar], q: &Scalar) -> Vec<Scalar> {
    let qi = q.recip();
    poles.iter().flat_map(|p| [p.clone(), p * &qi]).collect()
}

const GAUGE_POINTS: usize = 12;

/// Checks `v(qz)⁻¹ A(z) = Z v(z)⁻¹` entrywise at sampled points.
pub fn verify_gauge(conn: &MiuraConnection, g: &GaugeMatrix, z: &RFMatrix, ctx: &Ctx) -> Result<IdentityReport> {
    let n = conn.r + 1;
    if g.vinv.rows != n || g.vinv.cols != n || z.rows != n || z.cols != n {
        return Err(Error::Shape(format!("gauge check needs {n}x{n} matrices")));
    }
    let mut poles = conn.poles();
    poles.extend(g.vinv.poles());
    let poles = shifted_poles(&poles, &conn.q);
    let q = conn.q.clone();
    check_points(GAUGE_POINTS, &poles, ctx, |x| {
        let qx = &q * x;
        let lhs_a = g.vinv.eval(&qx);
        let lhs_b = conn.a.eval(x);
        let zv = z.eval(x).matmul(&g.vinv.eval(x));
        product_residual(&lhs_a, &lhs_b, &zv)
    })
}

/// Builds `A`, `v⁻¹` and `Z` from a solution in either convention and runs [`verify_gauge`].
pub fn gauge_check(spec: &QQSpec, sol: &QQSolution, ctx: &Ctx) -> Result<IdentityReport> {
    let (spec, sol) = to_qqall(spec, sol, ctx)?;
    let conn = build_connection(&spec, &sol, ctx)?;
    let g = build_gauge_inverse(&sol)?;
    verify_gauge(&conn, &g, &twist_matrix(&spec), ctx)
}

/// Restriction of an upper-triangular `B` to `span(e_{1..i}, e_{1..i−1,i+1})` in `Λ^i`.
pub fn restrict_wedge(b: &RFMatrix, i: usize) -> RFMatrix {
    let prec = b.prec();
    let mut p = RatFunc::one(prec);
    for l in 1..i {
        p = p.mul(b.get(l - 1, l - 1));
    }
    let mut m = RFMatrix::zeros(prec, 2, 2);
    m.set(0, 0, p.mul(b.get(i - 1, i - 1)));
    m.set(0, 1, p.mul(b.get(i - 1, i)));
    m.set(1, 1, p.mul(b.get(i, i)));
    m
}

#[derive(Debug, Clone)]
pub struct Sl2Oper {
    pub a: RFMatrix,
    pub rho: Poly,
    pub restriction: IdentityReport,
    pub gauge: IdentityReport,
}

/// `A_i = [[g_i, Λ_i g_{i−1}], [0, g_{i−1} g_{i+1} / g_i]]` with its twist check.
///
/// `ρ_i = Λ_i · ζ_{i−1} y_{i−1}(qz) · y_{i+1}(z)` must be a polynomial.
pub fn associated_sl2(conn: &MiuraConnection, spec: &QQSpec, sol: &QQSolution, i: usize, ctx: &Ctx) -> Result<Sl2Oper> {
    let r = conn.r;
    if i == 0 || i > r {
        return Err(Error::Index(format!("node {i} for rank {r}")));
    }
    let q = &conn.q;
    let rho = RatFunc::from_poly(conn.lambda[i - 1].clone())
        .mul(&conn.y_at(i - 1).q_shift(q)?.scale(&conn.zeta_at(i - 1)))
        .mul(&conn.y_at(i + 1))
        .reduce(ctx);
    if !rho.is_poly() {
        return Err(Error::DegenerateMiura(format!("rho_{i} has poles at {:?}", rho.poles().iter().map(|p| p.to_string()).collect::<Vec<_>>())));
    }
    let rho = rho.num;
    let (gm, gi, gp) = (conn.g_at(i - 1), conn.g_at(i), conn.g_at(i + 1));
    let mut a = RFMatrix::zeros(q.prec(), 2, 2);
    a.set(0, 0, gi.clone());
    a.set(0, 1, RatFunc::from_poly(conn.lambda[i - 1].clone()).mul(&gm));
    a.set(1, 1, gm.mul(&gp).div(&gi)?);
    let res = restrict_wedge(&conn.a, i);
    let mut poles = conn.poles();
    poles.extend(a.poles());
    let restriction = check_points(GAUGE_POINTS, &poles, ctx, |x| {
        let (u, v) = (a.eval(x), res.eval(x));
        u.e.iter().zip(&v.e).map(|(s, t)| s.dist(t) / s.abs_f64().max(t.abs_f64()).max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    })?;
    let (spec, sol) = to_qqall(spec, sol, ctx)?;
    let vinv = restrict_wedge(&build_gauge_inverse(&sol)?.vinv, i);
    let xis = spec.xis();
    let prod: Scalar = xis[..i - 1].iter().fold(Scalar::one(q.prec()), |acc, x| &acc * x);
    let z = RFMatrix::diagonal(&[RatFunc::constant(&prod * &xis[i - 1]), RatFunc::constant(&prod * &xis[i])]);
    poles.extend(vinv.poles());
    let poles = shifted_poles(&poles, q);
    let gauge = check_points(GAUGE_POINTS, &poles, ctx, |x| {
        let qx = q * x;
        product_residual(&vinv.eval(&qx), &a.eval(x), &z.eval(x).matmul(&vinv.eval(x)))
    })?;
    Ok(Sl2Oper { a, rho, restriction, gauge })
}

/// Checks every diagonal entry of `A` against the minors:
/// `g_i(z) = ∏_{j>i} Λ_j(q^{i−j} z)/Λ_j(z) · R_i(q^{−(r−i)} z)`, where
/// `R_i(u) = 𝒟⁺_i(qu) / (∏_{a>i} ξ_a · 𝒟⁺_i(u))`.
pub fn diag_ratio_check(conn: &MiuraConnection, frame: &MinorFrame, ctx: &Ctx) -> Result<IdentityReport> {
    let r = conn.r;
    if frame.r() != r {
        return Err(Error::Shape(format!("frame rank {} vs connection rank {r}", frame.r())));
    }
    for (i, d) in frame.dplus.iter().enumerate().take(r + 1).skip(1) {
        if d.is_zero() {
            return Err(Error::VanishingMinor(format!("D+_{i}")));
        }
    }
    let q = conn.q.clone();
    let xi = &frame.section.xi;
    let mut poles = conn.poles();
    for i in 1..=r {
        let s = q.powi(r as i64 - i as i64);
        poles.extend(frame.dplus[i].roots().iter().map(|x| x * &s));
        for j in i + 1..=r {
            poles.extend(conn.lambda[j - 1].roots());
        }
    }
    let g_minor = |i: usize, z: &Scalar| -> Scalar {
        let prec = q.prec();
        if i == 0 || i > r {
            return Scalar::one(prec);
        }
        let mut h = Scalar::one(prec);
        for j in i + 1..=r {
            let lj = &conn.lambda[j - 1];
            h = &h * &(&lj.eval(&(&q.powi(i as i64 - j as i64) * z)) / &lj.eval(z));
        }
        let u = &q.powi(i as i64 - r as i64) * z;
        let xprod = xi[i..].iter().fold(Scalar::one(prec), |acc, x| &acc * x);
        let d = &frame.dplus[i];
        &h * &(&d.eval(&(&q * &u)) / &(&xprod * &d.eval(&u)))
    };
    check_points(GAUGE_POINTS, &shifted_poles(&poles, &q), ctx, |z| {
        (1..=r + 1)
            .map(|k| {
                let lhs = conn.a.get(k - 1, k - 1).eval(z);
                let rhs = &g_minor(k, z) / &g_minor(k - 1, z);
                lhs.rel_dist(&rhs)
            })
            .fold(0.0, f64::max)
    })
}

// ---------------------------------------------------------------------------
// Chevalley generators in the defining representation

/// `u^{α̌_i} = diag(1, …, u, u⁻¹, …, 1)` with `u` in slot `i`.
pub fn coweight(prec: u32, n: usize, i: usize, u: &Scalar) -> CMat {
    let mut m = CMat::zeros(prec, n, n);
    for k in 0..n {
        m.set(k, k, Scalar::one(prec));
    }
    m.set(i - 1, i - 1, u.clone());
    m.set(i, i, u.recip());
    m
}

/// `exp(v e_j) = 1 + v E_{j,j+1}`.
pub fn exp_e(prec: u32, n: usize, j: usize, v: &Scalar) -> CMat {
    let mut m = coweight(prec, n, j, &Scalar::one(prec));
    m.set(j - 1, j, v.clone());
    m
}

/// `exp(v f_j) = 1 + v E_{j+1,j}`.
pub fn exp_f(prec: u32, n: usize, j: usize, v: &Scalar) -> CMat {
    let mut m = coweight(prec, n, j, &Scalar::one(prec));
    m.set(j, j - 1, v.clone());
    m
}

/// Type-A Cartan matrix entry.
pub fn cartan(i: usize, j: usize) -> i64 {
    if i == j {
        2
    } else if i.abs_diff(j) == 1 {
        -1
    } else {
        0
    }
}

/// Residual of `u^{α̌_i} exp(v e_j) = exp(u^{a_ij} v e_j) u^{α̌_i}`.
pub fn commutation_residual(n: usize, i: usize, j: usize, u: &Scalar, v: &Scalar) -> f64 {
    let prec = u.prec();
    let h = coweight(prec, n, i, u);
    let lhs = h.matmul(&exp_e(prec, n, j, v));
    let vv = &u.powi(cartan(i, j)) * v;
    product_residual(&exp_e(prec, n, j, &vv), &h, &lhs)
}

/// Conjugates `A` by `exp(μ_i(qz) f_i) · A · exp(−μ_i(z) f_i)` with
/// `μ_i = Q⁺_{i−1} Q⁺_{i+1} / (Q⁺_i Q⁻_i)` and compares with the connection
/// of the Bäcklund-transformed data.
pub fn backlund_gauge_check(spec: &QQSpec, sol: &QQSolution, i: usize, ctx: &Ctx) -> Result<IdentityReport> {
    let (spec, sol) = to_qqall(spec, sol, ctx)?;
    let conn = build_connection(&spec, &sol, ctx)?;
    let (s2, sol2) = backlund(&spec, &sol, i, ctx)?;
    let conn2 = build_connection(&s2, &sol2, ctx)?;
    let n = spec.r + 1;
    let prec = ctx.prec;
    let num = sol.qp(i - 1).mul(&sol.qp(i + 1));
    let den = sol.qp(i).mul(&sol.q_minus[i - 1]);
    let mu = RatFunc::new(num, den)?;
    let mut poles = conn.poles();
    poles.extend(conn2.poles());
    poles.extend(mu.poles());
    let q = spec.q.clone();
    check_points(GAUGE_POINTS, &shifted_poles(&poles, &q), ctx, |z| {
        let qz = &q * z;
        let left = exp_f(prec, n, i, &mu.eval(&qz)).matmul(&conn.a.eval(z));
        let right = exp_f(prec, n, i, &(-mu.eval(z)));
        product_residual(&left, &right, &conn2.a.eval(z))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qq::{solution_from_q_plus, solve_bethe, ShiftConvention, SolveOptions};
    use crate::qwronskian::{build_frame, regular_singularity_check, section_from_solution};
    use crate::ratfield::det_numeric;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const P: u32 = 192;

    fn c(re: f64, im: f64) -> Scalar {
        Scalar::from_f64(P, re, im)
    }

    fn sl2() -> (QQSpec, QQSolution) {
        let spec = QQSpec {
            r: 1,
            q: c(2.0, 0.0),
            zeta: vec![c(3.0, 0.0)],
            lambda_roots: vec![vec![c(1.0, 0.0)]],
            lambda_leading: vec![Scalar::ratio(P, 17, 3)],
            q_degrees: vec![1],
            convention: ShiftConvention::Qqall,
        };
        let sol = QQSolution {
            q_plus: vec![Poly::from_roots(&[Scalar::ratio(P, 17, 8)], &c(1.0, 0.0))],
            q_minus: vec![Poly::one(P)],
            chains: BTreeMap::new(),
        };
        (spec, sol)
    }

    fn sl3(conv: ShiftConvention) -> (QQSpec, QQSolution) {
        let spec = QQSpec {
            r: 2,
            q: c(1.3, 0.45),
            zeta: vec![c(1.7, 0.2), c(-0.6, 0.9)],
            lambda_roots: vec![vec![c(1.0, 0.0), c(0.2, -0.7)], vec![c(-1.1, 0.4)]],
            lambda_leading: vec![c(1.0, 0.0), c(2.0, 0.5)],
            q_degrees: vec![1, 1],
            convention: conv,
        };
        let ctx = Ctx::new(P);
        let out = solve_bethe(&spec, &SolveOptions { seeds: 32, ..Default::default() }, &ctx);
        let sol = solution_from_q_plus(&spec, out.states[0].q_plus(), &ctx).unwrap();
        (spec, sol)
    }

    #[test]
    fn sl2_connection_matches_closed_form() {
        let ctx = Ctx::new(P);
        let (spec, sol) = sl2();
        let conn = build_connection(&spec, &sol, &ctx).unwrap();
        // g = 3(2z − 17/8)/(z − 17/8)
        let g = RatFunc::new(Poly::new(P, vec![Scalar::ratio(P, -51, 8), c(6.0, 0.0)]), sol.q_plus[0].clone()).unwrap();
        let z = c(0.4, 0.9);
        assert!(conn.g[0].eval(&z).rel_dist(&g.eval(&z)) < 1e-50);
        assert!(conn.a.get(1, 1).eval(&z).rel_dist(&g.eval(&z).recip()) < 1e-50);
        assert!(det_numeric(&conn.a.eval(&z)).dist(&c(1.0, 0.0)) < 1e-50);
        let g = build_gauge_inverse(&sol).unwrap();
        assert!(g.vinv.get(0, 1).num.rel_dist(&Poly::one(P)) < 1e-60);
        assert!(verify_gauge(&conn, &g, &twist_matrix(&spec), &ctx).unwrap().pass);
    }

    #[test]
    fn perturbed_minus_breaks_gauge() {
        let ctx = Ctx::new(P);
        let (spec, sol) = sl2();
        let conn = build_connection(&spec, &sol, &ctx).unwrap();
        let bad = QQSolution { q_minus: vec![Poly::from_f64(P, &[2.0])], ..sol };
        let rep = verify_gauge(&conn, &build_gauge_inverse(&bad).unwrap(), &twist_matrix(&spec), &ctx).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_residual > 1e-3);
    }

    #[test]
    fn trivial_q_gives_constant_diagonal() {
        let ctx = Ctx::new(P);
        let (mut spec, _) = sl2();
        spec.q_degrees = vec![0];
        let sol = solution_from_q_plus(&spec, vec![Poly::one(P)], &ctx).unwrap();
        let conn = build_connection(&spec, &sol, &ctx).unwrap();
        assert!(conn.a.get(0, 0).is_poly() && conn.a.get(0, 0).num.deg() == 0);
        let g = build_gauge_inverse(&sol).unwrap();
        assert!(g.vinv.get(0, 0).num.rel_dist(&Poly::one(P)) < 1e-60);
        assert!(verify_gauge(&conn, &g, &twist_matrix(&spec), &ctx).unwrap().pass);
    }

    #[test]
    fn sl3_gauge_sl2_and_diag_ratio() {
        let ctx = Ctx::new(P);
        for conv in [ShiftConvention::Qqall, ShiftConvention::Qqatype] {
            let (spec, sol) = sl3(conv);
            let conn = build_connection(&spec, &sol, &ctx).unwrap();
            let (s2, sol2) = to_qqall(&spec, &sol, &ctx).unwrap();
            let g = build_gauge_inverse(&sol2).unwrap();
            assert!(g.vinv.get(0, 2).num.rel_dist(&sol2.chains[&(1, 2)]) < 1e-60);
            assert!(verify_gauge(&conn, &g, &twist_matrix(&s2), &ctx).unwrap().pass);
            for i in 1..=2 {
                let o = associated_sl2(&conn, &spec, &sol, i, &ctx).unwrap();
                assert!(o.restriction.pass && o.gauge.pass, "{conv:?} i={i} {o:?}");
            }
            let sec = section_from_solution(&spec, &sol, &ctx).unwrap();
            let frame = build_frame(&sec, &ctx).unwrap();
            let d = diag_ratio_check(&conn, &frame, &ctx).unwrap();
            assert!(d.pass, "{d:?}");
            let rs = regular_singularity_check(&conn, &sec, &ctx).unwrap();
            assert!(rs.pass, "{rs:?}");
        }
    }

    #[test]
    fn sl2_associated_is_itself() {
        let ctx = Ctx::new(P);
        let (spec, sol) = sl2();
        let conn = build_connection(&spec, &sol, &ctx).unwrap();
        let o = associated_sl2(&conn, &spec, &sol, 1, &ctx).unwrap();
        let z = c(0.3, -0.8);
        let (u, v) = (o.a.eval(&z), conn.a.eval(&z));
        for (x, y) in u.e.iter().zip(&v.e) {
            assert!(x.dist(y) < 1e-50);
        }
        assert!(o.gauge.pass);
        let frame = build_frame(&section_from_solution(&spec, &sol, &ctx).unwrap(), &ctx).unwrap();
        assert!(diag_ratio_check(&conn, &frame, &ctx).unwrap().pass);
    }

    #[test]
    fn nonpolynomial_rho_is_degenerate() {
        let ctx = Ctx::new(P);
        let (spec, sol) = sl3(ShiftConvention::Qqall);
        let lambda: Vec<Poly> = (1..=2).map(|i| spec.lambda(i)).collect();
        let y2 = RatFunc::new(Poly::one(P), Poly::from_roots(&[c(5.0, 0.0)], &c(1.0, 0.0))).unwrap();
        let y = vec![RatFunc::from_poly(sol.q_plus[0].clone()), y2];
        let conn = connection_from_y(&spec.q, &spec.zeta, &lambda, y).unwrap();
        assert!(matches!(associated_sl2(&conn, &spec, &sol, 1, &ctx), Err(Error::DegenerateMiura(_))));
    }

    #[test]
    fn backlund_gauge_reproduces_reflected_connection() {
        let ctx = Ctx::new(P);
        let (spec, sol) = sl2();
        assert!(backlund_gauge_check(&spec, &sol, 1, &ctx).unwrap().pass);
        let (spec, sol) = sl3(ShiftConvention::Qqall);
        for i in 1..=2 {
            let rep = backlund_gauge_check(&spec, &sol, i, &ctx).unwrap();
            assert!(rep.pass, "i={i} {rep:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn commutation_lemma(n in 2usize..6, i in 1usize..6, j in 1usize..6,
                             ur in 0.2f64..3.0, ui in -1.0f64..1.0, vr in -2.0f64..2.0, vi in -2.0f64..2.0) {
            prop_assume!(i < n && j < n);
            let r = commutation_residual(n, i, j, &c(ur, ui), &c(vr, vi));
            prop_assert!(r < 1e-50);
        }
    }
}
