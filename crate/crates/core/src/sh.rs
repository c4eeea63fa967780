//! Real spherical-harmonic basis up to degree 3.
//!
//! Sign conventions follow the ones used throughout the splatting ecosystem so
//! that coefficient files interoperate with existing viewers.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH expansion so that zero coefficients yield mid-gray.
pub const SH_OFFSET: f64 = 0.5;

/// Number of coefficients per channel for a given degree.
#[inline]
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`coeff_count`]; `None` if `count` is not a perfect square ≤ 16.
pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

/// DC coefficient that evaluates to `value` (before clamping).
#[inline]
pub fn dc_from_value(value: f64) -> f64 {
    (value - SH_OFFSET) / SH_C0
}

/// Basis values `Y_k(dir)` for `k < coeff_count(degree)`; the rest are zero.
pub fn basis(dir: &Vector3<f64>, degree: usize) -> [f64; 16] {
    let mut out = [0.0; 16];
    out[0] = SH_C0;
    if degree == 0 {
        return out;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = SH_C2[0] * xy;
    out[5] = SH_C2[1] * yz;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * xz;
    out[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return out;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * xy * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    out
}

/// Partial derivatives of each basis polynomial with respect to the raw
/// direction components (treating `dir` as unconstrained).
pub fn basis_gradient(dir: &Vector3<f64>, degree: usize) -> [[f64; 3]; 16] {
    let mut out = [[0.0; 3]; 16];
    if degree == 0 {
        return out;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[1] = [0.0, -SH_C1, 0.0];
    out[2] = [0.0, 0.0, SH_C1];
    out[3] = [-SH_C1, 0.0, 0.0];
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
    out[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
    out[6] = [
        -2.0 * SH_C2[2] * x,
        -2.0 * SH_C2[2] * y,
        4.0 * SH_C2[2] * z,
    ];
    out[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
    out[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    if degree == 2 {
        return out;
    }
    out[9] = [
        SH_C3[0] * 6.0 * x * y,
        SH_C3[0] * (3.0 * xx - 3.0 * yy),
        0.0,
    ];
    out[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
    out[11] = [
        -SH_C3[2] * 2.0 * x * y,
        SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
        SH_C3[2] * 8.0 * y * z,
    ];
    out[12] = [
        -SH_C3[3] * 6.0 * x * z,
        -SH_C3[3] * 6.0 * y * z,
        SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
        -SH_C3[4] * 2.0 * x * y,
        SH_C3[4] * 8.0 * x * z,
    ];
    out[14] = [
        SH_C3[5] * 2.0 * x * z,
        -SH_C3[5] * 2.0 * y * z,
        SH_C3[5] * (xx - yy),
    ];
    out[15] = [
        SH_C3[6] * (3.0 * xx - 3.0 * yy),
        -SH_C3[6] * 6.0 * x * y,
        0.0,
    ];
    out
}

/// Evaluates `channels` SH expansions stored coefficient-major
/// (`coeffs[k * channels + c]`), adds the 0.5 offset and clamps at zero.
///
/// `stored_degree` is the degree the coefficient array was built for and
/// `degree` the (possibly lower) active degree.
pub fn evaluate(
    coeffs: &[f64],
    channels: usize,
    stored_degree: usize,
    degree: usize,
    view_dir: &Vector3<f64>,
) -> Result<Vec<f64>> {
    if degree > stored_degree || coeffs.len() < coeff_count(stored_degree) * channels {
        return Err(Error::Config(format!(
            "SH degree {degree} requested but coefficients only cover degree {stored_degree}"
        )));
    }
    let b = basis(view_dir, degree);
    Ok((0..channels)
        .map(|c| {
            let raw: f64 = (0..coeff_count(degree))
                .map(|k| coeffs[k * channels + c] * b[k])
                .sum();
            (raw + SH_OFFSET).max(0.0)
        })
        .collect())
}
