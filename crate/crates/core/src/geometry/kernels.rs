//! Slice-level Poincaré-ball kernels and their vector-Jacobian products.
//!
//! All maps are taken at the origin. `c` is the (positive) curvature
//! parameter of the ball `{x : c‖x‖² < 1}`. Every function that produces a
//! ball point applies the ε-margin projection, and every `*_vjp` function
//! differentiates through that projection as well.

/// Relative margin kept between ball points and the boundary.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp for artanh arguments.
pub const ARTANH_MAX: f64 = 1.0 - 1e-7;
/// Norms below this are treated as exactly zero.
pub const ZERO_NORM: f64 = 1e-15;
/// Below this value of `√c·‖v‖` the exp/log scale factors switch to series.
const SERIES_CUTOFF: f64 = 1e-3;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Largest norm a projected point may have: `(1 − ε)/√c`.
#[inline]
pub fn max_radius(c: f64) -> f64 {
    (1.0 - BALL_EPS) / c.sqrt()
}

#[inline]
fn artanh(x: f64) -> f64 {
    x.clamp(0.0, ARTANH_MAX).atanh()
}

/// Rescales `x` onto the ε-margin shell if it lies on or beyond it.
/// Returns whether a rescale happened.
pub fn project(x: &mut [f64], c: f64) -> bool {
    let n = norm(x);
    let r = max_radius(c);
    if n >= r {
        let s = r / n;
        x.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// VJP of [`project`] evaluated at the unprojected point `x`.
pub fn project_vjp(x: &[f64], c: f64, g: &[f64], out: &mut [f64]) {
    let n = norm(x);
    let r = max_radius(c);
    if n >= r {
        radial_drop_vjp(x, n, r / n, g, out);
    } else {
        out.copy_from_slice(g);
    }
}

/// VJP of `x ↦ k·x/‖x‖` scaled by `scale = k/‖x‖`: `scale·(g − (g·u)u)`.
fn radial_drop_vjp(x: &[f64], n: f64, scale: f64, g: &[f64], out: &mut [f64]) {
    let gu = dot(g, x) / n;
    for ((o, gi), xi) in out.iter_mut().zip(g).zip(x) {
        *o = scale * (gi - gu * xi / n);
    }
}

/// `exp_o^c(v) = tanh(√c‖v‖)·v/(√c‖v‖)`, projected.
pub fn exp0(v: &[f64], c: f64, out: &mut [f64]) {
    let n = norm(v);
    if n < ZERO_NORM {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let x = c.sqrt() * n;
    let f = x.tanh() / x;
    for (o, vi) in out.iter_mut().zip(v) {
        *o = f * vi;
    }
    project(out, c);
}

pub fn exp0_vjp(v: &[f64], c: f64, g: &[f64], out: &mut [f64]) {
    let n = norm(v);
    if n < ZERO_NORM {
        out.copy_from_slice(g);
        return;
    }
    let s = c.sqrt();
    let x = s * n;
    let t = x.tanh();
    let r = max_radius(c);
    if t / s >= r {
        // projected: output is r·v/‖v‖
        radial_drop_vjp(v, n, r / n, g, out);
        return;
    }
    let f = t / x;
    let df_over_n = if x < SERIES_CUTOFF {
        c * (-2.0 / 3.0 + 8.0 * x * x / 15.0)
    } else {
        c * (x * (1.0 - t * t) - t) / (x * x * x)
    };
    let k = dot(g, v) * df_over_n;
    for ((o, gi), vi) in out.iter_mut().zip(g).zip(v) {
        *o = f * gi + k * vi;
    }
}

/// `log_o^c(y) = artanh(√c‖y‖)·y/(√c‖y‖)`, with `y` first projected into
/// the ε-margin ball.
pub fn log0(y: &[f64], c: f64, out: &mut [f64]) {
    let n = norm(y);
    if n < ZERO_NORM {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = c.sqrt();
    let r = max_radius(c);
    if n >= r {
        let k = artanh(s * r) / s / n;
        for (o, yi) in out.iter_mut().zip(y) {
            *o = k * yi;
        }
        return;
    }
    let x = s * n;
    let f = artanh(x) / x;
    for (o, yi) in out.iter_mut().zip(y) {
        *o = f * yi;
    }
}

pub fn log0_vjp(y: &[f64], c: f64, g: &[f64], out: &mut [f64]) {
    let n = norm(y);
    if n < ZERO_NORM {
        out.copy_from_slice(g);
        return;
    }
    let s = c.sqrt();
    let r = max_radius(c);
    if n >= r {
        radial_drop_vjp(y, n, artanh(s * r) / s / n, g, out);
        return;
    }
    let x = s * n;
    let a = artanh(x);
    let f = a / x;
    let df_over_n = if x < SERIES_CUTOFF {
        c * (2.0 / 3.0 + 4.0 * x * x / 5.0)
    } else if x >= ARTANH_MAX {
        // artanh clamped: f = const/x
        -c * a / (x * x * x)
    } else {
        c * (x / (1.0 - x * x) - a) / (x * x * x)
    };
    let k = dot(g, y) * df_over_n;
    for ((o, gi), yi) in out.iter_mut().zip(g).zip(y) {
        *o = f * gi + k * yi;
    }
}

/// Scalar coefficients of `x ⊕_c y = (A·x + B·y)/D`.
#[inline]
fn mobius_coeffs(x: &[f64], y: &[f64], c: f64) -> (f64, f64, f64, f64, f64, f64) {
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let d = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    (a, b, d, xy, x2, y2)
}

fn mobius_add_raw(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let (a, b, d, ..) = mobius_coeffs(x, y, c);
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = (a * xi + b * yi) / d;
    }
}

/// Möbius addition `x ⊕_c y`, projected.
pub fn mobius_add(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    mobius_add_raw(x, y, c, out);
    project(out, c);
}

/// VJP of [`mobius_add`]; gradients are written (not accumulated) into
/// `gx` and `gy`.
pub fn mobius_add_vjp(x: &[f64], y: &[f64], c: f64, g: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let d_len = x.len();
    let mut pre = vec![0.0; d_len];
    mobius_add_raw(x, y, c, &mut pre);
    let mut gp = vec![0.0; d_len];
    project_vjp(&pre, c, g, &mut gp);

    let (a, b, d, _, x2, y2) = mobius_coeffs(x, y, c);
    let g_x = dot(&gp, x);
    let g_y = dot(&gp, y);
    let g_o = dot(&gp, &pre);
    // ∂A/∂x = 2c·y, ∂B/∂x = −2c·x, ∂D/∂x = 2c·y + 2c²‖y‖²·x
    // ∂A/∂y = 2c·(x + y), ∂B/∂y = 0, ∂D/∂y = 2c·x + 2c²‖x‖²·y
    for i in 0..d_len {
        gx[i] = (a * gp[i] + 2.0 * c * g_x * y[i] - 2.0 * c * g_y * x[i]
            - g_o * (2.0 * c * y[i] + 2.0 * c * c * y2 * x[i]))
            / d;
        gy[i] = (b * gp[i] + 2.0 * c * g_x * (x[i] + y[i])
            - g_o * (2.0 * c * x[i] + 2.0 * c * c * x2 * y[i]))
            / d;
    }
}

/// Möbius scalar multiplication `r ⊗_c a`, projected.
///
/// `r = 1` returns `a` unchanged and `r = 0` returns the origin, so that
/// fusion weights at the ends of `[0, 1]` reproduce a single channel exactly.
pub fn mobius_scale(r: f64, a: &[f64], c: f64, out: &mut [f64]) {
    if r == 1.0 {
        out.copy_from_slice(a);
        return;
    }
    let n = norm(a);
    if r == 0.0 || n < ZERO_NORM {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = c.sqrt();
    let k = (r * artanh(s * n)).tanh() / (s * n);
    for (o, ai) in out.iter_mut().zip(a) {
        *o = k * ai;
    }
    project(out, c);
}

/// `‖(−a) ⊕_c b‖₁` computed without allocating.
pub fn distance(a: &[f64], b: &[f64], c: f64) -> f64 {
    // x = −a
    let xy = -dot(a, b);
    let x2 = dot(a, a);
    let y2 = dot(b, b);
    let ca = 1.0 + 2.0 * c * xy + c * y2;
    let cb = 1.0 - c * x2;
    let d = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    let pre_sq = ca * ca * x2 + 2.0 * ca * cb * xy + cb * cb * y2;
    let pre_norm = pre_sq.max(0.0).sqrt() / d.abs();
    let r = max_radius(c);
    let scale = if pre_norm >= r { r / pre_norm } else { 1.0 };
    let l1: f64 = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| (-ca * ai + cb * bi).abs())
        .sum();
    scale * l1 / d.abs()
}

/// Distance computed through the explicit kernels; used to cross-check
/// [`distance`] and by the backward pass.
pub fn distance_explicit(a: &[f64], b: &[f64], c: f64) -> f64 {
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut m = vec![0.0; a.len()];
    mobius_add(&neg, b, c, &mut m);
    l1_norm(&m)
}

/// Accumulates `g·∂d/∂a` into `ga` and `g·∂d/∂b` into `gb`.
///
/// The subgradient of `|t|` at `t = 0` is taken as 0.
pub fn distance_vjp(a: &[f64], b: &[f64], c: f64, g: f64, ga: &mut [f64], gb: &mut [f64]) {
    let n = a.len();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut m = vec![0.0; n];
    mobius_add(&neg, b, c, &mut m);
    let sign: Vec<f64> = m
        .iter()
        .map(|&v| if v > 0.0 { g } else if v < 0.0 { -g } else { 0.0 })
        .collect();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    mobius_add_vjp(&neg, b, c, &sign, &mut gx, &mut gy);
    for i in 0..n {
        ga[i] -= gx[i];
        gb[i] += gy[i];
    }
}
