//! Row-level dense kernels shared by the batch forward pass, the incremental
//! session and the backward pass. Matrices are row-major `in x out`, so a
//! linear map is `y = x W`.

pub(crate) const LN_EPS: f64 = 1e-5;

/// `out = x W` for one row `x` of width `w.len() / out.len()`.
pub(crate) fn vec_mat(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n_out = out.len();
    debug_assert_eq!(x.len() * n_out, w.len());
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n_out..(i + 1) * n_out];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// Applies [`vec_mat`] to every row of `x` (`n x in`), returning `n x out`.
pub(crate) fn mat_mul(x: &[f64], w: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut out = vec![0.0; rows * n_out];
    for r in 0..rows {
        vec_mat(&x[r * n_in..(r + 1) * n_in], w, &mut out[r * n_out..(r + 1) * n_out]);
    }
    out
}

/// Backward of `y = x W`: accumulates `dW += x^T dy` and returns `dx = dy W^T`.
pub(crate) fn mat_mul_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut dx = vec![0.0; rows * n_in];
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for j in 0..n_out {
                acc += dyr[j] * wrow[j];
                dwrow[j] += xr[i] * dyr[j];
            }
            dxr[i] = acc;
        }
    }
    dx
}

/// Normalized row and reciprocal standard deviation, kept for the backward pass.
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * gain[i] + bias[i];
    }
    rstd
}

pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let s = r * d..(r + 1) * d;
        rstd.push(layer_norm_row(&x[s.clone()], gain, bias, &mut out[s.clone()], &mut xhat[s]));
    }
    (out, NormCache { xhat, rstd })
}

/// Accumulates gain/bias gradients and returns `dx`.
pub(crate) fn layer_norm_backward(
    cache: &NormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let d = gain.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rstd) in cache.rstd.iter().enumerate() {
        let s = r * d..(r + 1) * d;
        let xhat = &cache.xhat[s.clone()];
        let dyr = &dy[s.clone()];
        for i in 0..d {
            dgain[i] += dyr[i] * xhat[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for (i, o) in dx[s].iter_mut().enumerate() {
            *o = rstd * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Softmax in place; entries of `-inf` get probability 0.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Single-query attention for one head. `keys`/`values` hold `n` rows of
/// width `stride`; the head occupies columns `offset..offset + q.len()`.
/// Writes the attended value into `out` and the weights into `probs`.
pub(crate) fn attend_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    stride: usize,
    offset: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let dh = q.len();
    let scale = 1.0 / (dh as f64).sqrt();
    for (j, p) in probs.iter_mut().enumerate() {
        let k = &keys[j * stride + offset..j * stride + offset + dh];
        *p = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
    }
    softmax_in_place(probs);
    out.fill(0.0);
    for (j, &p) in probs.iter().enumerate() {
        let v = &values[j * stride + offset..j * stride + offset + dh];
        for (o, &vj) in out.iter_mut().zip(v) {
            *o += p * vj;
        }
    }
}

pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn add_in_place(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_row_is_standardized() {
        let x = [1.0, 2.0, 3.0, 6.0];
        let mut out = [0.0; 4];
        let mut xhat = [0.0; 4];
        layer_norm_row(&x, &[1.0; 4], &[0.0; 4], &mut out, &mut xhat);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_handles_negative_infinity() {
        let mut v = [0.0, f64::NEG_INFINITY, 0.0];
        softmax_in_place(&mut v);
        assert_eq!(v, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn mat_mul_backward_matches_transpose_products() {
        // x: 1x2, W: 2x3
        let x = [1.0, 2.0];
        let w = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let y = mat_mul(&x, &w, 2, 3);
        assert_eq!(y, vec![5.0, 2.0, 0.0]);
        let mut dw = [0.0; 6];
        let dx = mat_mul_backward(&x, &w, &[1.0, 1.0, 1.0], 2, 3, &mut dw);
        assert_eq!(dx, vec![0.0, 3.5]);
        assert_eq!(dw, [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }
}
