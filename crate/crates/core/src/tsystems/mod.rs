//! Checks behind the Gaussian T-system argument.
//!
//! * The polynomial chain `p_i(s) = 2s·p_{i-1}(s - c_i) + p'_{i-1}(s - c_i)`
//!   and the identity
//!   `e^{-s²} d²/ds²[e^{s²} f_{i-1}(s - c_i)] = Σ_{j≤i} p_i^{(j)}(s)² / (2^j j!)`,
//!   verified coefficient by coefficient in exact rationals. The last square
//!   is the constant `2^i i!`, so `f_i > 0` everywhere.
//! * The `(2M+1)`-square determinant built from `e^{-(s-t_i)²}`,
//!   `-(s-t_i)e^{-(s-t_i)²}` and a row of ones, evaluated in double-double so
//!   its sign can be trusted for clustered points.

mod poly;

pub use poly::{rat, Polynomial};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use qd::Quad;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ext;
use crate::simulate::item_rng;

/// Highest order accepted by [`f_sequence_check`]; coefficient sizes grow
/// quickly past this.
pub const MAX_ORDER: usize = 8;

/// `p_0, …, p_r` with `p_i` using shift `c[i-1]`.
pub fn p_sequence(r: usize, c: &[BigRational]) -> Result<Vec<Polynomial>> {
    if c.len() < r {
        return invalid(format!("p-sequence of order {r} needs {r} shifts, got {}", c.len()));
    }
    let two_s = Polynomial::from_ints(&[0, 2]);
    let mut out = vec![Polynomial::from_ints(&[1])];
    for ci in c.iter().take(r) {
        let prev = out.last().expect("starts non-empty").shift(ci);
        let next = &(&two_s * &prev) + &prev.derivative();
        out.push(next);
    }
    Ok(out)
}

/// `e^{-s²} d²/ds² [e^{s²} h(s)] = (4s² + 2) h + 4s h' + h''`.
pub fn gauss_second_derivative(h: &Polynomial) -> Polynomial {
    let a = Polynomial::from_ints(&[2, 0, 4]);
    let b = Polynomial::from_ints(&[0, 4]);
    let h1 = h.derivative();
    let h2 = h1.derivative();
    &(&(&a * h) + &(&b * &h1)) + &h2
}

/// `Σ_{j=0}^{deg p} p^{(j)}(s)² / (2^j j!)`.
pub fn sum_of_squares(p: &Polynomial) -> Polynomial {
    let mut total = Polynomial::zero();
    let mut d = p.clone();
    let mut denom = BigInt::one();
    let mut j = 0u64;
    while !d.is_zero() {
        let w = BigRational::new(BigInt::one(), denom.clone());
        total = &total + &d.square().scale(&w);
        j += 1;
        denom *= BigInt::from(2u64 * j);
        d = d.derivative();
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub order: usize,
    /// `f_i` rendered as text.
    pub f: String,
    pub f_degree: usize,
    /// Leading coefficient of `p_i` (should be `2^i`).
    pub p_leading: String,
    /// The constant term `p_i^{(i)}² / (2^i i!)` (should be `2^i i!`).
    pub constant_square: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FSequenceReport {
    pub orders: Vec<OrderCheck>,
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Runs the `f` recursion through the differential operator and compares it
/// with the sum-of-squares form at every order `1..=r`.
pub fn f_sequence_check(r: usize, c: &[BigRational]) -> Result<FSequenceReport> {
    if r > MAX_ORDER {
        return invalid(format!("order {r} exceeds the supported maximum {MAX_ORDER}"));
    }
    let ps = p_sequence(r, c)?;
    let mut f = Polynomial::from_ints(&[1]);
    let mut orders = vec![OrderCheck {
        order: 0,
        f: f.to_string(),
        f_degree: 0,
        p_leading: "1".into(),
        constant_square: "1".into(),
    }];
    if sum_of_squares(&ps[0]) != f {
        return Err(Error::VerificationFailure {
            order: 0,
            coefficient: 0,
            detail: "f_0 is not 1".into(),
        });
    }

    for i in 1..=r {
        let lhs = gauss_second_derivative(&f.shift(&c[i - 1]));
        let p = &ps[i];
        let rhs = sum_of_squares(p);
        if lhs != rhs {
            let n = lhs.coeffs().len().max(rhs.coeffs().len());
            let k = (0..n).find(|&k| lhs.coeff(k) != rhs.coeff(k)).unwrap_or(0);
            return Err(Error::VerificationFailure {
                order: i,
                coefficient: k,
                detail: format!("operator form {} vs squares {}", lhs.coeff(k), rhs.coeff(k)),
            });
        }

        let two_i = BigRational::from_integer(BigInt::from(2).pow(i as u32));
        if p.degree() != Some(i) || p.leading() != two_i {
            return Err(Error::VerificationFailure {
                order: i,
                coefficient: i,
                detail: format!("p_{i} has degree {:?} and leading coefficient {}", p.degree(), p.leading()),
            });
        }
        let top = p.nth_derivative(i);
        let denom = BigInt::from(2).pow(i as u32) * factorial(i);
        let constant_square = top.square().scale(&BigRational::new(BigInt::one(), denom.clone()));
        if constant_square != Polynomial::constant(BigRational::from_integer(denom.clone())) {
            return Err(Error::VerificationFailure {
                order: i,
                coefficient: 0,
                detail: format!("constant square is {constant_square}, expected {denom}"),
            });
        }

        f = lhs;
        orders.push(OrderCheck {
            order: i,
            f: f.to_string(),
            f_degree: f.degree().unwrap_or(0),
            p_leading: p.leading().to_string(),
            constant_square: denom.to_string(),
        });
    }
    Ok(FSequenceReport { orders })
}

/// `f_0, …, f_r` from the operator recursion, without the comparison.
pub fn f_sequence(r: usize, c: &[BigRational]) -> Result<Vec<Polynomial>> {
    if c.len() < r {
        return invalid(format!("order {r} needs {r} shifts, got {}", c.len()));
    }
    let mut out = vec![Polynomial::from_ints(&[1])];
    for ci in c.iter().take(r) {
        let next = gauss_second_derivative(&out.last().expect("non-empty").shift(ci));
        out.push(next);
    }
    Ok(out)
}

/// Rows `e^{-(s-t_i)²}`, `-(s-t_i)e^{-(s-t_i)²}` for each `t_i`, then ones;
/// one column per `s_j`.
pub fn tsys_matrix(s: &[f64], t: &[f64]) -> Result<Vec<Vec<Quad>>> {
    let m = t.len();
    if s.len() != 2 * m + 1 {
        return invalid(format!(
            "need 2M+1 = {} sample points for M = {m}, got {}",
            2 * m + 1,
            s.len()
        ));
    }
    if s.iter().chain(t).any(|x| !x.is_finite()) {
        return invalid("points must be finite");
    }
    let mut rows = Vec::with_capacity(2 * m + 1);
    for &ti in t {
        let mut e_row = Vec::with_capacity(s.len());
        let mut d_row = Vec::with_capacity(s.len());
        for &sj in s {
            let d = Quad::from(sj) - Quad::from(ti);
            let e = (-(d * d)).exp();
            e_row.push(e);
            d_row.push(-(d * e));
        }
        rows.push(e_row);
        rows.push(d_row);
    }
    rows.push(vec![Quad::ONE; s.len()]);
    Ok(rows)
}

/// Determinant together with a bound on its rounding error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetEstimate {
    pub value: f64,
    pub rounding_bound: f64,
}

impl DetEstimate {
    /// Nonzero with a sign that rounding cannot flip.
    pub fn certified_nonzero(&self) -> bool {
        self.value.abs() > self.rounding_bound
    }
}

pub fn gauss_tsys_det_estimate(s: &[f64], t: &[f64]) -> Result<DetEstimate> {
    let a = tsys_matrix(s, t)?;
    let n = a.len() as f64;
    let bound = 8.0 * n * n * ext::DD_EPS * ext::hadamard_bound(&a);
    let value = ext::det(a);
    Ok(DetEstimate {
        value: value.0 + value.1,
        rounding_bound: bound,
    })
}

/// Determinant of the Gaussian T-system matrix (see [`tsys_matrix`]).
pub fn gauss_tsys_det(s: &[f64], t: &[f64]) -> Result<f64> {
    Ok(gauss_tsys_det_estimate(s, t)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsysMonteCarlo {
    pub m: usize,
    pub draws: usize,
    pub positive: usize,
    pub negative: usize,
    pub uncertified: usize,
    pub min_abs_det: f64,
    /// Smallest `|det| / rounding bound` seen.
    pub min_certainty_ratio: f64,
}

impl TsysMonteCarlo {
    pub fn sign_consistent(&self) -> bool {
        self.positive == 0 || self.negative == 0
    }

    pub fn passed(&self) -> bool {
        self.sign_consistent() && self.uncertified == 0 && self.min_abs_det > 0.0
    }
}

/// Sorted draws of `k` points in `[lo, hi]` at least `gap` apart.
fn spaced_draw(rng: &mut impl Rng, k: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    let slack = hi - lo - gap * (k.saturating_sub(1)) as f64;
    let mut u: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..slack)).collect();
    u.sort_by(f64::total_cmp);
    u.iter().enumerate().map(|(i, x)| lo + x + gap * i as f64).collect()
}

/// Points are drawn in `[-1, 1]` with a minimum spacing of 0.1; without a
/// floor on the spacing the determinant underflows any fixed working
/// precision.
pub const TSYS_RANGE: (f64, f64) = (-1.0, 1.0);
pub const TSYS_MIN_GAP: f64 = 0.1;

/// Monte-Carlo sign check over `draws` ordered `(s, t)` tuples.
pub fn tsys_monte_carlo(m: usize, draws: usize, seed: u64) -> Result<TsysMonteCarlo> {
    if m == 0 {
        return invalid("M must be >= 1");
    }
    let mut report = TsysMonteCarlo {
        m,
        draws,
        positive: 0,
        negative: 0,
        uncertified: 0,
        min_abs_det: f64::INFINITY,
        min_certainty_ratio: f64::INFINITY,
    };
    let (lo, hi) = TSYS_RANGE;
    for k in 0..draws {
        let mut rng = item_rng(seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), k);
        let s = spaced_draw(&mut rng, 2 * m + 1, lo, hi, TSYS_MIN_GAP);
        let t = spaced_draw(&mut rng, m, lo, hi, TSYS_MIN_GAP);
        let est = gauss_tsys_det_estimate(&s, &t)?;
        if !est.certified_nonzero() {
            report.uncertified += 1;
        }
        if est.value > 0.0 {
            report.positive += 1;
        } else if est.value < 0.0 {
            report.negative += 1;
        }
        report.min_abs_det = report.min_abs_det.min(est.value.abs());
        report.min_certainty_ratio = report
            .min_certainty_ratio
            .min(est.value.abs() / est.rounding_bound);
    }
    Ok(report)
}

/// Random rational shifts `a/b` with small numerators and denominators.
pub fn random_shifts(r: usize, seed: u64) -> Vec<BigRational> {
    let mut rng = item_rng(seed, 0);
    (0..r)
        .map(|_| rat(rng.random_range(-20..=20), rng.random_range(1..=9)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p_one_and_two() {
        let c = vec![rat(5, 3), rat(2, 7)];
        let ps = p_sequence(2, &c).unwrap();
        assert_eq!(ps[0], Polynomial::from_ints(&[1]));
        assert_eq!(ps[1], Polynomial::from_ints(&[0, 2]));
        // 4s² - 4cs + 2 with c = c_2
        let cc = &c[1];
        let expected = Polynomial::new(vec![rat(2, 1), -(rat(4, 1) * cc), rat(4, 1)]);
        assert_eq!(ps[2], expected);
    }

    #[test]
    fn p_five_leading_coefficient() {
        let ps = p_sequence(5, &random_shifts(5, 1)).unwrap();
        assert_eq!(ps[5].leading(), rat(32, 1));
    }

    #[test]
    fn p_sequence_needs_enough_shifts() {
        assert!(p_sequence(3, &[rat(1, 1)]).is_err());
    }

    #[test]
    fn degrees_and_leading_up_to_eight() {
        let ps = p_sequence(8, &random_shifts(8, 11)).unwrap();
        for (i, p) in ps.iter().enumerate() {
            assert_eq!(p.degree(), Some(i));
            assert_eq!(p.leading(), rat(1 << i, 1));
        }
    }

    #[test]
    fn f_zero_and_one() {
        let rep = f_sequence_check(0, &[]).unwrap();
        assert_eq!(rep.orders.len(), 1);
        assert_eq!(rep.orders[0].f, "1");
        let rep = f_sequence_check(1, &[rat(-3, 4)]).unwrap();
        assert_eq!(rep.orders[1].f, "4s^2 + 2");
    }

    #[test]
    fn f_identity_up_to_six_random_shifts() {
        for seed in 0..5 {
            let c = random_shifts(6, seed);
            let rep = f_sequence_check(6, &c).unwrap();
            assert_eq!(rep.orders.len(), 7);
            assert_eq!(rep.orders[6].constant_square, (64 * 720).to_string());
        }
    }

    #[test]
    fn mismatch_is_reported() {
        // Break the identity by squaring with a wrong weight.
        let p = Polynomial::from_ints(&[0, 2]);
        let wrong = &sum_of_squares(&p) + &Polynomial::from_ints(&[1]);
        assert_ne!(gauss_second_derivative(&Polynomial::from_ints(&[1])), wrong);
        assert!(f_sequence_check(MAX_ORDER + 1, &random_shifts(9, 0)).is_err());
    }

    #[test]
    fn det_m1_hand_value() {
        // Cofactor expansion of the 3x3 matrix at s = (-1, 0, 1), t = 0:
        // rows [e, 1, e], [e, 0, -e], [1, 1, 1] with e = 1/e₀.
        let e = (-1.0f64).exp();
        let expected = e * (0.0 * 1.0 - (-e) * 1.0) - 1.0 * (e * 1.0 - (-e) * 1.0)
            + e * (e * 1.0 - 0.0 * 1.0);
        let d = gauss_tsys_det(&[-1.0, 0.0, 1.0], &[0.0]).unwrap();
        assert!((d - expected).abs() < 1e-15, "{d} vs {expected}");
        assert!(d != 0.0);
    }

    #[test]
    fn column_swap_flips_sign() {
        let s = [-0.9, -0.2, 0.3, 0.35, 0.8];
        let t = [-0.1, 0.4];
        let d = gauss_tsys_det(&s, &t).unwrap();
        let swapped = [-0.2, -0.9, 0.3, 0.35, 0.8];
        let d2 = gauss_tsys_det(&swapped, &t).unwrap();
        assert!((d + d2).abs() <= 1e-14 * d.abs(), "{d} vs {d2}");
    }

    #[test]
    fn size_mismatch() {
        assert!(gauss_tsys_det(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn monte_carlo_small() {
        for m in 1..=3 {
            let rep = tsys_monte_carlo(m, 500, 3).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }

    proptest! {
        #[test]
        fn f_bounded_below_by_constant_square(
            seed in 0u64..500,
            xs in proptest::collection::vec((-50i64..50, 1i64..8), 20),
        ) {
            let order = 4;
            let fs = f_sequence(order, &random_shifts(order, seed)).unwrap();
            for (i, f) in fs.iter().enumerate() {
                let floor = rat((1i64 << i) * (1..=i as i64).product::<i64>(), 1);
                for &(n, d) in &xs {
                    prop_assert!(f.eval(&rat(n, d)) >= floor);
                }
            }
        }
    }
}
