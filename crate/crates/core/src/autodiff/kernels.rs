//! Dense matmul kernels. `a` is `m x k` in every variant.

use super::Tensor;

/// `a (m x k) * b (k x n)`.
pub(crate) fn mm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(m, n, out).expect("mm shape")
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub(crate) fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(m, n, out).expect("mm_nt shape")
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
pub(crate) fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; k * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let brow = &bd[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(k, n, out).expect("mm_tn shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        let a = Tensor::new(3, 4, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let b = Tensor::new(4, 2, (0..8).map(|v| 1.0 - v as f64 * 0.25).collect()).unwrap();
        let expect = naive(&a, &b);
        assert_eq!(mm(&a, &b), expect);
        assert_eq!(mm_nt(&a, &b.transposed()), expect);
        assert_eq!(mm_tn(&a.transposed(), &b), expect);
    }
}
