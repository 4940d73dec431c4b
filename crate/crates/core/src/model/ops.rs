//! Dense kernels with hand-written backward passes. Matrices are row-major;
//! weights are stored `[in, out]` so both directions walk contiguous rows.

use super::Real;

/// `y[n, dout] = x[n, din] · w[din, dout] + b`
pub fn linear<T: Real>(x: &[T], n: usize, din: usize, w: &[T], b: &[T], dout: usize, y: &mut [T]) {
    debug_assert_eq!(x.len(), n * din);
    debug_assert_eq!(w.len(), din * dout);
    debug_assert_eq!(y.len(), n * dout);
    for r in 0..n {
        let yr = &mut y[r * dout..(r + 1) * dout];
        yr.copy_from_slice(b);
        let xr = &x[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wr = &w[i * dout..(i + 1) * dout];
            for (yo, &wo) in yr.iter_mut().zip(wr) {
                *yo += xi * wo;
            }
        }
    }
}

/// Accumulates weight and bias gradients; adds the input gradient into `dx`
/// when given.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    n: usize,
    din: usize,
    w: &[T],
    dout: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    for r in 0..n {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for (g, &d) in db.iter_mut().zip(dyr) {
            *g += d;
        }
        let xr = &x[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let dwr = &mut dw[i * dout..(i + 1) * dout];
            for (g, &d) in dwr.iter_mut().zip(dyr) {
                *g += xi * d;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..n {
            let dyr = &dy[r * dout..(r + 1) * dout];
            let dxr = &mut dx[r * din..(r + 1) * din];
            for (i, g) in dxr.iter_mut().enumerate() {
                let wr = &w[i * dout..(i + 1) * dout];
                let mut acc = T::zero();
                for (&wo, &d) in wr.iter().zip(dyr) {
                    acc += wo * d;
                }
                *g += acc;
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over rows of width `d`. Keeps the normalized input and inverse
/// standard deviation for the backward pass.
pub fn layer_norm<T: Real>(
    x: &[T],
    n: usize,
    d: usize,
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let eps = T::from_f64(LN_EPS).unwrap();
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let var = xr.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xr[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gamma[c] + beta[c];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Real>(
    xhat: &[T],
    rstd: &[T],
    n: usize,
    d: usize,
    gamma: &[T],
    dy: &[T],
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    for r in 0..n {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for c in 0..d {
            let i = r * d + c;
            let g = dy[i] * gamma[c];
            dgamma[c] += dy[i] * xhat[i];
            dbeta[c] += dy[i];
            sum_g += g;
            sum_gx += g * xhat[i];
        }
        for c in 0..d {
            let i = r * d + c;
            let g = dy[i] * gamma[c];
            dx[i] += rstd[r] * (g - inv_d * sum_g - xhat[i] * inv_d * sum_gx);
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C).unwrap();
    let a = T::from_f64(GELU_A).unwrap();
    let half = T::from_f64(0.5).unwrap();
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C).unwrap();
    let a = T::from_f64(GELU_A).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let three = T::from_f64(3.0).unwrap();
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// In-place softmax of one row.
pub fn softmax_row<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub fn log_softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
    let lse = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp()).ln() + m;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fixed sinusoidal encoding for position `t`, added in place to `row`.
pub fn add_positional<T: Real>(row: &mut [T], t: usize) {
    let d = row.len();
    for (i, v) in row.iter_mut().enumerate() {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
        let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        *v += T::from_f64(pe).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_naive() {
        let x = [1.0f64, 2.0, -1.0, 0.5, 0.0, 3.0];
        let w = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let b = [1.0, -1.0];
        let mut y = [0.0; 4];
        linear(&x, 2, 3, &w, &b, 2, &mut y);
        for r in 0..2 {
            for o in 0..2 {
                let expect = b[o] + (0..3).map(|i| x[r * 3 + i] * w[i * 2 + o]).sum::<f64>();
                assert!((y[r * 2 + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut r = [1000.0f64, 999.0, -5.0];
        softmax_row(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut ls = [0.0; 2];
        log_softmax_row(&[0.0f64, 0.0], &mut ls);
        assert!((ls[0] + std::f64::consts::LN_2).abs() < 1e-12);
    }
}
