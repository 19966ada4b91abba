//! Dense matrix exponential via scaling-and-squaring with diagonal Padé
//! approximants (orders 3/5/7/9/13, 1-norm thresholds from Higham 2005).
//!
//! The chains here never exceed ~10 states, so a dense evaluation is cheap
//! and accurate; no norm estimation tricks are needed at this size.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Assembles (U, V) from even powers so that the order-m approximant is
/// r(A) = (V - U)^{-1} (V + U), with U the odd and V the even part.
fn pade_uv(a: &DMatrix<f64>, even_powers: &[&DMatrix<f64>], coeffs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut u_inner = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for (k, pow) in even_powers.iter().enumerate() {
        // even_powers[k] = A^{2k} (k = 0 is the identity)
        u_inner += pow.scale(coeffs[2 * k + 1]);
        v += pow.scale(coeffs[2 * k]);
    }
    (a * u_inner, v)
}

fn pade13_uv(a: &DMatrix<f64>, a2: &DMatrix<f64>, a4: &DMatrix<f64>, a6: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let u_high = a6 * (a6.scale(B13[13]) + a4.scale(B13[11]) + a2.scale(B13[9]));
    let u_low = a6.scale(B13[7]) + a4.scale(B13[5]) + a2.scale(B13[3]) + id.scale(B13[1]);
    let u = a * (u_high + u_low);
    let v_high = a6 * (a6.scale(B13[12]) + a4.scale(B13[10]) + a2.scale(B13[8]));
    let v = v_high + a6.scale(B13[6]) + a4.scale(B13[4]) + a2.scale(B13[2]) + id.scale(B13[0]);
    (u, v)
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let numer = &v + &u;
    let denom = v - u;
    denom.lu().solve(&numer).ok_or(Error::SingularSystem)
}

/// Computes exp(m * t).
pub fn matrix_exp(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix_exp requires a square matrix");
    if !t.is_finite() || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let a = m.scale(t);
    let id = DMatrix::identity(n, n);
    let norm = one_norm(&a);
    if norm == 0.0 {
        return Ok(id);
    }

    let a2 = &a * &a;
    if norm <= THETA_3 {
        let (u, v) = pade_uv(&a, &[&id, &a2], &B3);
        return solve_pade(u, v);
    }
    let a4 = &a2 * &a2;
    if norm <= THETA_5 {
        let (u, v) = pade_uv(&a, &[&id, &a2, &a4], &B5);
        return solve_pade(u, v);
    }
    let a6 = &a4 * &a2;
    if norm <= THETA_7 {
        let (u, v) = pade_uv(&a, &[&id, &a2, &a4, &a6], &B7);
        return solve_pade(u, v);
    }
    if norm <= THETA_9 {
        let a8 = &a6 * &a2;
        let (u, v) = pade_uv(&a, &[&id, &a2, &a4, &a6, &a8], &B9);
        return solve_pade(u, v);
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
    let scale = 0.5f64.powi(s as i32);
    let a_s = a.scale(scale);
    let a2_s = a2.scale(scale * scale);
    let a4_s = a4.scale(scale.powi(4));
    let a6_s = a6.scale(scale.powi(6));
    let (u, v) = pade13_uv(&a_s, &a2_s, &a4_s, &a6_s);
    let mut r = solve_pade(u, v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}
