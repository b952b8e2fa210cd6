//! Padé activation units: `P(x) / (1 + |b_1 x + … + b_n x^n|)` with
//! `P(x) = a_0 + a_1 x + … + a_m x^m`.
//!
//! The absolute value keeps the denominator at least one, so the unit has no
//! poles whatever the coefficients become during training.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_NUM_DEGREE: usize = 5;
pub const DEFAULT_DEN_DEGREE: usize = 4;

/// Interval and grid used for the ReLU fit and the ReLU distance.
pub const FIT_RANGE: (f64, f64) = (-3.0, 3.0);
pub const FIT_POINTS: usize = 601;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauParams {
    /// `a_0 ..= a_m`
    pub numerator: Vec<f64>,
    /// `b_1 ..= b_n`
    pub denominator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauGradient {
    pub dx: f64,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
}

impl PauParams {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Self {
        assert!(!numerator.is_empty(), "a PAU needs at least a_0");
        PauParams {
            numerator,
            denominator,
        }
    }

    pub fn identity() -> Self {
        let mut a = vec![0.0; DEFAULT_NUM_DEGREE + 1];
        a[1] = 1.0;
        PauParams::new(a, vec![0.0; DEFAULT_DEN_DEGREE])
    }

    pub fn num_degree(&self) -> usize {
        self.numerator.len() - 1
    }

    pub fn den_degree(&self) -> usize {
        self.denominator.len()
    }

    pub fn param_count(&self) -> usize {
        self.numerator.len() + self.denominator.len()
    }

    /// `[a_0..a_m, b_1..b_n]`
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.numerator.clone();
        v.extend_from_slice(&self.denominator);
        v
    }

    pub fn from_flat(flat: &[f64], num_degree: usize) -> Self {
        PauParams::new(flat[..=num_degree].to_vec(), flat[num_degree + 1..].to_vec())
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        pau_eval(x, &self.numerator, &self.denominator)
    }

    /// `∫ |f(x) - ReLU(x)| dx` over [`FIT_RANGE`] by the trapezoid rule on [`FIT_POINTS`] points.
    pub fn relu_distance(&self) -> f64 {
        let xs = fit_grid();
        let step = xs[1] - xs[0];
        let d: Vec<f64> = xs.iter().map(|&x| (self.eval(x) - x.max(0.0)).abs()).collect();
        step * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]))
    }

    /// `max |f(x) - ReLU(x)|` over the fit grid.
    pub fn relu_sup_error(&self) -> f64 {
        fit_grid()
            .iter()
            .map(|&x| (self.eval(x) - x.max(0.0)).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn horner<T: Scalar>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

/// `(Σ_k k c_k x^(k-1))` for `c = [c_0, c_1, ...]`.
#[inline]
fn horner_deriv<T: Scalar>(coeffs: &[T], x: T) -> T {
    let mut acc = T::zero();
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + c.scale(k as f64);
    }
    acc
}

/// Denominator polynomial without the constant: `B(x) = Σ_{k≥1} b_k x^k`.
#[inline]
fn den_poly<T: Scalar>(den: &[T], x: T) -> T {
    den.iter().rev().fold(T::zero(), |acc, &b| (acc + b) * x)
}

#[inline]
fn den_poly_deriv<T: Scalar>(den: &[T], x: T) -> T {
    let mut acc = T::zero();
    for (k, &b) in den.iter().enumerate().rev() {
        acc = acc * x + b.scale((k + 1) as f64);
    }
    acc
}

/// Evaluates one unit.
#[inline]
pub fn pau_eval<T: Scalar>(x: T, num: &[T], den: &[T]) -> T {
    horner(num, x) / (T::one() + den_poly(den, x).abs())
}

/// Backward pass of one unit for upstream gradient `g`: returns `∂/∂x` and
/// accumulates coefficient gradients into `d_num`, `d_den`.
#[inline]
pub fn pau_backward<T: Scalar>(x: T, num: &[T], den: &[T], g: T, d_num: &mut [T], d_den: &mut [T]) -> T {
    let p = horner(num, x);
    let b = den_poly(den, x);
    let sign = if b.re() > 0.0 {
        1.0
    } else if b.re() < 0.0 {
        -1.0
    } else {
        0.0
    };
    let q = T::one() + b.abs();
    let inv_q = T::one() / q;
    let f = p * inv_q;
    let mut xk = T::one();
    for da in d_num.iter_mut() {
        *da += g * xk * inv_q;
        xk *= x;
    }
    // ∂f/∂b_k = -f/q · sign(B) · x^k
    let common = -(g * f * inv_q).scale(sign);
    let mut xk = x;
    for db in d_den.iter_mut() {
        *db += common * xk;
        xk *= x;
    }
    let dp = horner_deriv(num, x);
    let dq = den_poly_deriv(den, x).scale(sign);
    g * (dp - f * dq) * inv_q
}

/// Elementwise forward.
pub fn pau_forward(x: &[f64], p: &PauParams) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(x.iter().map(|&v| p.eval(v)).collect())
}

/// Analytic partials at a single point.
pub fn pau_gradient(x: f64, p: &PauParams) -> PauGradient {
    let mut da = vec![0.0; p.numerator.len()];
    let mut db = vec![0.0; p.denominator.len()];
    let dx = pau_backward(x, &p.numerator, &p.denominator, 1.0, &mut da, &mut db);
    PauGradient { dx, da, db }
}

pub(crate) fn fit_grid() -> Vec<f64> {
    let (lo, hi) = FIT_RANGE;
    (0..FIT_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (FIT_POINTS - 1) as f64)
        .collect()
}

/// Least-squares fit of ReLU at the default degrees, computed once.
pub fn init_pau_as_relu() -> PauParams {
    static FIT: OnceLock<PauParams> = OnceLock::new();
    FIT.get_or_init(|| fit_relu(DEFAULT_NUM_DEGREE, DEFAULT_DEN_DEGREE)).clone()
}

/// Fits `P/Q_safe ≈ ReLU` on the 601-point grid over [-3, 3].
///
/// Starts from the linearised problem `P(x) - ReLU(x)·B(x) = ReLU(x)`, which is
/// an ordinary linear least-squares solve, then polishes the true residual with
/// a fixed number of Levenberg-Marquardt steps. Everything is deterministic.
pub fn fit_relu(num_degree: usize, den_degree: usize) -> PauParams {
    let xs = fit_grid();
    let ys: Vec<f64> = xs.iter().map(|x| x.max(0.0)).collect();
    let n_par = num_degree + 1 + den_degree;

    let lin = DMatrix::from_fn(xs.len(), n_par, |r, c| {
        let x = xs[r];
        if c <= num_degree {
            x.powi(c as i32)
        } else {
            -ys[r] * x.powi((c - num_degree) as i32)
        }
    });
    let rhs = DVector::from_column_slice(&ys);
    let start = lin
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("SVD solve of the linearised ReLU fit");
    let mut params = PauParams::from_flat(start.as_slice(), num_degree);

    let residual = |p: &PauParams| -> Vec<f64> { xs.iter().zip(&ys).map(|(&x, &y)| p.eval(x) - y).collect() };
    let sse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = residual(&params);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let jac = DMatrix::from_fn(xs.len(), n_par, |row, col| {
            let g = pau_gradient(xs[row], &params);
            if col <= num_degree {
                g.da[col]
            } else {
                g.db[col - num_degree - 1]
            }
        });
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e10 {
            let mut damped = jtj.clone();
            for i in 0..n_par {
                damped[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let flat: Vec<f64> = params.flat().iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let cand = PauParams::from_flat(&flat, num_degree);
            let rc = residual(&cand);
            if sse(&rc) < sse(&r) {
                params = cand;
                r = rc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    params
}

/// Learnable activations for every activation site of the backbone, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CimParams {
    pub num_degree: usize,
    pub den_degree: usize,
    /// `sites × (num_degree + 1 + den_degree)` coefficients.
    pub coeffs: Vec<f64>,
}

impl CimParams {
    pub fn relu_init(sites: usize) -> Self {
        let fit = init_pau_as_relu();
        CimParams {
            num_degree: fit.num_degree(),
            den_degree: fit.den_degree(),
            coeffs: (0..sites).flat_map(|_| fit.flat()).collect(),
        }
    }

    pub fn per_site(&self) -> usize {
        self.num_degree + 1 + self.den_degree
    }

    pub fn sites(&self) -> usize {
        self.coeffs.len() / self.per_site()
    }

    pub fn site(&self, i: usize) -> PauParams {
        let k = self.per_site();
        PauParams::from_flat(&self.coeffs[i * k..(i + 1) * k], self.num_degree)
    }

    pub fn site_slice(&self, i: usize) -> &[f64] {
        let k = self.per_site();
        &self.coeffs[i * k..(i + 1) * k]
    }

    pub fn reset_site_to_relu(&mut self, i: usize) {
        let k = self.per_site();
        let fit = fit_relu(self.num_degree, self.den_degree);
        self.coeffs[i * k..(i + 1) * k].copy_from_slice(&fit.flat());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_identities() {
        let id = PauParams::identity();
        assert_eq!(pau_forward(&[-2.5, 0.0, 1.25], &id).unwrap(), vec![-2.5, 0.0, 1.25]);
        let one = PauParams::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 4]);
        assert_eq!(pau_forward(&[-7.0, 3.0], &one).unwrap(), vec![1.0, 1.0]);
        assert!(pau_gradient(0.7, &id).dx == 1.0 && pau_gradient(-4.0, &id).dx == 1.0);
    }

    #[test]
    fn rejects_non_finite() {
        let id = PauParams::identity();
        assert!(matches!(pau_forward(&[1.0, f64::NAN], &id), Err(Error::NonFiniteInput)));
        assert!(matches!(pau_forward(&[f64::INFINITY], &id), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn a0_partial_is_inverse_denominator() {
        let p = PauParams::new(vec![0.3, -1.0, 0.5, 0.2, 0.0, 0.1], vec![0.4, -0.7, 0.2, 0.05]);
        for &x in &[-2.0f64, -0.3, 0.0, 0.8, 2.7] {
            let b: f64 = p.denominator.iter().enumerate().map(|(k, b)| b * x.powi(k as i32 + 1)).sum();
            assert!((pau_gradient(x, &p).da[0] - 1.0 / (1.0 + b.abs())).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_fit_quality() {
        let fit = init_pau_as_relu();
        assert_eq!(fit.param_count(), 10);
        assert!(fit.relu_sup_error() <= 0.1, "sup error {}", fit.relu_sup_error());
        assert!(fit.eval(0.0).abs() <= 0.05, "f(0) = {}", fit.eval(0.0));
        // deterministic across independent solves
        assert_eq!(fit_relu(5, 4), fit);
    }

    #[test]
    fn cim_params_layout() {
        let mut phi = CimParams::relu_init(17);
        assert_eq!(phi.coeffs.len(), 170);
        assert_eq!(phi.site(16), init_pau_as_relu());
        phi.coeffs[3] += 1.0;
        phi.reset_site_to_relu(0);
        assert_eq!(phi.site(0), init_pau_as_relu());
    }
}
