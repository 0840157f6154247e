//! Dense matrix kernels underneath the convolution and linear layers.
//!
//! The dot kernel keeps four groups of eight accumulators: each group maps
//! to one SIMD register and the groups are independent chains, so the
//! compiler can vectorize without reassociating a serial sum. The lane
//! layout is fixed, which keeps results bit-identical from run to run; it
//! just differs from a naive left-to-right sum by normal rounding noise.
//! Plain `a * b + c` is used instead of fused multiply-add throughout: the
//! fma intrinsic defeats the auto-vectorizer here and costs about 2.5x.

use super::Scalar;

/// Fixed-order dot product over four independent eight-lane accumulator
/// groups. Each group vectorizes to one SIMD register; four groups keep the
/// FMA pipeline busy instead of serializing on a single register's latency.
#[inline]
pub fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    const LANES: usize = 8;
    const CHAINS: usize = 4;
    const STEP: usize = LANES * CHAINS;
    assert_eq!(x.len(), y.len());
    let chunks = x.len() / STEP;
    let mut acc = [[S::ZERO; LANES]; CHAINS];
    for c in 0..chunks {
        let xb = &x[c * STEP..c * STEP + STEP];
        let yb = &y[c * STEP..c * STEP + STEP];
        for ch in 0..CHAINS {
            for l in 0..LANES {
                let i = ch * LANES + l;
                acc[ch][l] += xb[i] * yb[i];
            }
        }
    }
    let mut lane = [S::ZERO; LANES];
    for l in 0..LANES {
        lane[l] = (acc[0][l] + acc[2][l]) + (acc[1][l] + acc[3][l]);
    }
    let mut tail = S::ZERO;
    for i in chunks * STEP..x.len() {
        tail = x[i].mul_add(y[i], tail);
    }
    (((lane[0] + lane[4]) + (lane[2] + lane[6])) + ((lane[1] + lane[5]) + (lane[3] + lane[7])))
        + tail
}

/// `c[i, j] += dot(a[i, :], b[j, :])` for `a` of shape (m, k) and `b` of
/// shape (n, k), both row-major. Accumulates so callers can sum over batch
/// samples; zero `c` first for plain multiplication.
pub fn gemm_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            crow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[i, :] += sum_p a[i, p] * b[p, :]` for `a` of shape (m, k) and `b` of
/// shape (k, n), both row-major. Accumulates like [`gemm_nt`].
pub fn gemm_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let alpha = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += alpha * brow[j];
            }
        }
    }
}

/// Row-major transpose of `src` (rows, cols) into `dst` (cols, rows).
pub fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize, dst: &mut [S]) {
    assert_eq!(src.len(), rows * cols);
    assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dot_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [0, 1, 7, 8, 9, 64, 301] {
            let x = randvec(&mut rng, len);
            let y = randvec(&mut rng, len);
            let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((dot(&x, &y) - naive).abs() < 1e-10, "len {len}");
        }
    }

    #[test]
    fn gemm_nt_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, n, k) = (5, 7, 19);
        let a = randvec(&mut rng, m * k);
        let b = randvec(&mut rng, n * k);
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &b, &mut c, m, n, k);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[j * k + p]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-10);
            }
        }
        // accumulation: a second call doubles the result
        let snapshot = c.clone();
        gemm_nt(&a, &b, &mut c, m, n, k);
        for (two, one) in c.iter().zip(&snapshot) {
            assert!((two - 2.0 * one).abs() < 1e-10);
        }
    }

    #[test]
    fn gemm_nn_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, k) = (4, 9, 13);
        let a = randvec(&mut rng, m * k);
        let b = randvec(&mut rng, k * n);
        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, n, k);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nt_and_nn_agree_through_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, n, k) = (6, 8, 21);
        let a = randvec(&mut rng, m * k);
        let b_t = randvec(&mut rng, n * k); // (n, k)
        let mut b = vec![0.0; n * k]; // (k, n)
        transpose(&b_t, n, k, &mut b);
        let mut c1 = vec![0.0; m * n];
        let mut c2 = vec![0.0; m * n];
        gemm_nt(&a, &b_t, &mut c1, m, n, k);
        gemm_nn(&a, &b, &mut c2, m, n, k);
        for (x, y) in c1.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    #[ignore = "manual throughput measurement; run with --ignored --nocapture"]
    fn gemm_throughput() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // the classifier's dominant multiply: (64, 288) x (1024, 288)^T
        let (m, n, k) = (64usize, 1024usize, 288usize);
        let a: Vec<f32> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![0.0f32; m * n];
        gemm_nt(&a, &b, &mut c, m, n, k); // warm up
        let reps = 50;
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            gemm_nt(&a, &b, &mut c, m, n, k);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let gflops = (2.0 * m as f64 * n as f64 * k as f64) / dt / 1e9;
        println!("gemm_nt {m}x{n}x{k}: {:.2} ms, {gflops:.1} GFLOP/s", dt * 1e3);

        let mut cnn = vec![0.0f32; m * n];
        let bt: Vec<f32> = {
            let mut t = vec![0.0f32; n * k];
            transpose(&b, n, k, &mut t);
            t
        };
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            gemm_nn(&a, &bt, &mut cnn, m, n, k);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let gflops = (2.0 * m as f64 * n as f64 * k as f64) / dt / 1e9;
        println!("gemm_nn {m}x{n}x{k}: {:.2} ms, {gflops:.1} GFLOP/s", dt * 1e3);
    }

    #[test]
    fn transpose_round_trips() {
        let src: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let mut t = vec![0.0f32; 12];
        let mut back = vec![0.0f32; 12];
        transpose(&src, 3, 4, &mut t);
        transpose(&t, 4, 3, &mut back);
        assert_eq!(src, back);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 4.0); // (1,0) of the 4x3 view = (0,1) of the source
    }
}
