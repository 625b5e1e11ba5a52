//! Small dense kernels used by the layers.
//!
//! Loops are arranged so every inner accumulator is an independent output
//! element (i-k-j order); the compiler vectorizes them without reassociating
//! float sums, which keeps results bit-identical run to run.

/// out[m x n] += a[m x k] * b[k x n]
pub fn matmul_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 16 {
        return matmul_acc_w16(a, b, m, k, out);
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// n == 16 case (attention head width): a stack accumulator keeps the whole
/// output row in registers across the k loop.
fn matmul_acc_w16(a: &[f32], b: &[f32], m: usize, k: usize, out: &mut [f32]) {
    const W: usize = 16;
    for i in 0..m {
        let mut acc = [0.0f32; W];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * W..(kk + 1) * W];
            for j in 0..W {
                acc[j] += aik * brow[j];
            }
        }
        let orow = &mut out[i * W..(i + 1) * W];
        for j in 0..W {
            orow[j] += acc[j];
        }
    }
}

/// out[m x n] = a[m x k] * b[k x n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    matmul_acc(a, b, m, k, n, &mut out);
    out
}

/// b[n x m] = transpose of a[m x n]
pub fn transpose(a: &[f32], m: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * n);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub fn add_inplace(out: &mut [f32], rhs: &[f32]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, r) in out.iter_mut().zip(rhs) {
        *o += r;
    }
}

pub fn scale_inplace(out: &mut [f32], s: f32) {
    for o in out.iter_mut() {
        *o *= s;
    }
}
