//! Loop-based reference arithmetic on nested `Vec`s, independent of the
//! tensor engine.

use veritopic::numerics::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    match t.shape() {
        [_] => vec![t.data().to_vec()],
        [_, c] => t.data().chunks(*c).map(|r| r.to_vec()).collect(),
        s => panic!("not a matrix: {s:?}"),
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squash(v: &[f64]) -> Vec<f64> {
    let n2: f64 = v.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return vec![0.0; v.len()];
    }
    let f = n2 / (1.0 + n2) / n2.sqrt();
    v.iter().map(|x| x * f).collect()
}

/// `x W + b` with `b` broadcast over rows.
pub fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    matmul(x, w).into_iter().map(|r| r.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
