use crate::error::{Error, Result};

/// Dense real tensor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent (number of rows for a matrix, length for a vector).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing extents.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }
}

/// Returns `Wx + b`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "weight must be a matrix, got shape {:?}",
            w.shape()
        )));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.shape() != [n] {
        return Err(Error::Dimension(format!(
            "input x has shape {:?} but weight W has shape {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [m] {
        return Err(Error::Dimension(format!(
            "bias b has shape {:?} but weight W has shape {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let mut out = vec![0.0; m];
    affine_into(w.data(), b.data(), x.data(), &mut out);
    Tensor::vector(out)
}

pub fn log_softmax(z: &Tensor) -> Result<Tensor> {
    if z.is_empty() {
        return Err(Error::Dimension("log_softmax of empty input".into()));
    }
    let mut out = z.data().to_vec();
    log_softmax_in_place(&mut out);
    Tensor::new(z.shape().to_vec(), out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(z))` without forming the sigmoid.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn log_sum_exp(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Dimension("log_sum_exp of empty input".into()));
    }
    Ok(lse(z))
}

/// Unchecked log-sum-exp; `-inf` for empty or all `-inf` input.
pub(crate) fn lse(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn log_softmax_in_place(z: &mut [f64]) {
    let norm = lse(z);
    for v in z.iter_mut() {
        *v -= norm;
    }
}

/// `out = W x + b` for a row-major `W` of shape `out.len() x x.len()`.
pub(crate) fn affine_into(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        *o = b[i] + dot(row, x);
    }
}

/// `out = W x` without a bias.
pub(crate) fn matvec_into(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * n..(i + 1) * n], x);
    }
}

/// `out += Wᵀ d` for a row-major `W` of shape `d.len() x out.len()`.
pub(crate) fn matvec_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = &w[i * n..(i + 1) * n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += di * wij;
        }
    }
}

/// `G += d xᵀ`.
pub(crate) fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = &mut g[i * n..(i + 1) * n];
        for (gij, &xj) in row.iter_mut().zip(x) {
            *gij += di * xj;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// Gradient of a log-softmax layer: given upstream `d` on the outputs and the
/// normalized probabilities, returns the gradient on the logits.
pub(crate) fn log_softmax_backward(d: &[f64], probs: &[f64], out: &mut [f64]) {
    let total: f64 = d.iter().sum();
    for ((o, &di), &p) in out.iter_mut().zip(d).zip(probs) {
        *o = di - p * total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            affine(&v(&[1.0, 2.0]), &eye, &v(&[0.0, 0.0]))
                .unwrap()
                .data(),
            &[1.0, 2.0]
        );

        let w = Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap();
        assert_eq!(
            affine(&v(&[1.0, 1.0]), &w, &v(&[1.0])).unwrap().data(),
            &[6.0]
        );

        let w = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.37 - 1.0).collect()).unwrap();
        let out = affine(&Tensor::zeros(&[5]), &w, &v(&[7.0, -2.0])).unwrap();
        assert_eq!(out.data(), &[7.0, -2.0]);
    }

    #[test]
    fn affine_shape_error_names_operands() {
        let w = Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap();
        let err = affine(&v(&[1.0, 1.0, 1.0]), &w, &v(&[1.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x") && msg.contains("W"), "{msg}");
        let err = affine(&v(&[1.0, 1.0]), &w, &v(&[1.0, 2.0])).unwrap_err();
        assert!(err.to_string().contains("bias"));
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::vector(vec![f64::NAN]).is_err());
    }

    #[test]
    fn log_softmax_examples() {
        let out = log_softmax(&v(&[0.0, 0.0])).unwrap();
        for &o in out.data() {
            assert!((o + LN_2).abs() < 1e-15);
        }
        let out = log_softmax(&v(&[1000.0, 0.0])).unwrap();
        assert!(out.data()[0].abs() < 1e-300);
        assert!((out.data()[1] + 1000.0).abs() < 1e-9);
        for c in [-500.0, 0.0, 3.5, 800.0] {
            let out = log_softmax(&v(&[c, c, c])).unwrap();
            for &o in out.data() {
                assert!((o + 3f64.ln()).abs() < 1e-12);
            }
        }
        assert!(matches!(
            log_softmax(&Tensor {
                shape: vec![0],
                data: vec![]
            }),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(50.0);
        assert!(s <= 1.0 && 1.0 - s < 1e-20);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0) <= 0.0);
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 1.25]).unwrap(), 1.25);
        assert!((log_sum_exp(&[-1000.0, -1000.0]).unwrap() - (-1000.0 + LN_2)).abs() < 1e-12);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[]).is_err());
    }

    proptest! {
        #[test]
        fn log_softmax_normalizes(z in prop::collection::vec(-30.0f64..30.0, 1..40)) {
            let out = log_softmax(&v(&z)).unwrap();
            let total: f64 = out.data().iter().map(|o| o.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_softmax_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..40),
            c in -100.0f64..100.0,
        ) {
            let a = log_softmax(&v(&z)).unwrap();
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let b = log_softmax(&v(&shifted)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn log_sum_exp_permutation_and_bound(
            z in prop::collection::vec(-50.0f64..50.0, 1..30),
            seed in any::<u64>(),
        ) {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = log_sum_exp(&z).unwrap();
            prop_assert!(a >= m);
            let mut p = z.clone();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..p.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                p.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = log_sum_exp(&p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn sigmoid_symmetry(z in -40.0f64..40.0) {
            prop_assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() < 1e-15);
        }
    }
}
