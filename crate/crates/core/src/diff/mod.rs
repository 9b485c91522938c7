//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! The tape is generic over [`Scalar`], so running it on [`Dual`] numbers
//! gives forward-over-reverse second derivatives: seed the inputs'
//! tangents with a direction `v`, run the forward pass and the reverse
//! pass, and the tangent parts of the adjoints are `H v`.

mod scalar;
mod tape;
mod tensor;

pub use scalar::{Dual, Scalar};
pub use tape::{Grads, PairIndex, Tape, Unary, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// A scalar function of one `1 x n` input row, written once and evaluated
/// on any scalar type.
pub trait ScalarFn {
    fn eval<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

fn check_output<T: Scalar>(tape: &Tape<T>, out: Var) -> Result<()> {
    if tape.shape(out) != (1, 1) {
        return Err(Error::Dimension(format!(
            "function output must be 1x1, got {:?}",
            tape.shape(out)
        )));
    }
    if !tape.value(out).is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    Ok(())
}

pub fn value_and_grad<F: ScalarFn>(f: &F, at: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::row(at.to_vec()));
    let out = f.eval(&mut tape, x)?;
    check_output(&tape, out)?;
    let g = tape.backward(out)?;
    let grad = g.get_or_zeros(x, (1, at.len())).into_data();
    Ok((tape.value(out).get(0, 0), grad))
}

/// Exact reverse-mode gradient.
pub fn grad<F: ScalarFn>(f: &F, at: &[f64]) -> Result<Vec<f64>> {
    value_and_grad(f, at).map(|(_, g)| g)
}

/// `grad(grad f . dir)`, i.e. the Hessian-vector product `H dir`, by
/// running the reverse pass on dual numbers.
pub fn grad_of_grad_contraction<F: ScalarFn>(f: &F, at: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
    if dir.len() != at.len() {
        return Err(Error::Dimension(format!(
            "direction has length {}, point has {}",
            dir.len(),
            at.len()
        )));
    }
    let mut tape = Tape::<Dual<f64>>::new();
    let seeded = at.iter().zip(dir).map(|(a, d)| Dual::new(*a, *d)).collect();
    let x = tape.param(Tensor::row(seeded));
    let out = f.eval(&mut tape, x)?;
    check_output(&tape, out)?;
    let g = tape.backward(out)?;
    Ok(g.get_or_zeros(x, (1, at.len())).data().iter().map(|d| d.eps).collect())
}

/// Central differences, `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error with an absolute floor of `floor` on the scale.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().map(|x| x.abs()).fold(floor, f64::max);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use std::sync::Arc;

    struct Poly(f64);
    impl ScalarFn for Poly {
        fn eval<T: Scalar>(&self, t: &mut Tape<T>, x: Var) -> Result<Var> {
            let y = t.powf(x, self.0);
            Ok(t.sum(y))
        }
    }

    struct Swish;
    impl ScalarFn for Swish {
        fn eval<T: Scalar>(&self, t: &mut Tape<T>, x: Var) -> Result<Var> {
            let y = t.swish(x);
            Ok(t.sum(y))
        }
    }

    /// Two-layer swish MLP with fixed random weights.
    struct Mlp {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        n: usize,
        h: usize,
    }

    impl Mlp {
        fn new(n: usize, h: usize, seed: u64) -> Self {
            let mut rng = stream(seed, "mlp");
            let mut draw = |k: usize, s: f64| (0..k).map(|_| rng.random_range(-s..s)).collect::<Vec<_>>();
            Self {
                w1: draw(n * h, 1.0 / (n as f64).sqrt()),
                b1: draw(h, 0.5),
                w2: draw(h, 1.0 / (h as f64).sqrt()),
                n,
                h,
            }
        }

        fn plain(&self, x: &[f64]) -> f64 {
            (0..self.h)
                .map(|j| {
                    let z: f64 = (0..self.n).map(|i| x[i] * self.w1[i * self.h + j]).sum::<f64>() + self.b1[j];
                    self.w2[j] * z / (1.0 + (-z).exp())
                })
                .sum()
        }
    }

    impl ScalarFn for Mlp {
        fn eval<T: Scalar>(&self, t: &mut Tape<T>, x: Var) -> Result<Var> {
            let w1 = t.constant(Tensor::from_f64(self.n, self.h, &self.w1)?);
            let b1 = t.constant(Tensor::from_f64(1, self.h, &self.b1)?);
            let w2 = t.constant(Tensor::from_f64(self.h, 1, &self.w2)?);
            let z = t.matmul(x, w1)?;
            let z = t.add_row(z, b1)?;
            let a = t.swish(z);
            t.matmul(a, w2)
        }
    }

    struct Quadratic(Vec<f64>, usize);
    impl ScalarFn for Quadratic {
        fn eval<T: Scalar>(&self, t: &mut Tape<T>, x: Var) -> Result<Var> {
            let a = t.constant(Tensor::from_f64(self.1, self.1, &self.0)?);
            let ax = t.matmul(x, a)?;
            let xax = t.mul(ax, x)?;
            let s = t.sum(xax);
            Ok(t.scale(s, 0.5))
        }
    }

    #[test]
    fn square_and_swish() {
        assert_eq!(grad(&Poly(2.0), &[3.0]).unwrap(), vec![6.0]);
        assert!((grad(&Swish, &[0.0]).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mlp_matches_finite_differences() {
        let f = Mlp::new(20, 16, 1);
        let mut rng = stream(2, "x");
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = grad(&f, &x).unwrap();
        let fd = central_difference(|v| f.plain(v), &x, 1e-5);
        assert!(max_rel_error(&g, &fd, 1e-8) < 1e-4);
    }

    #[test]
    fn cubic_second_derivative() {
        let h = grad_of_grad_contraction(&Poly(3.0), &[2.0], &[1.0]).unwrap();
        assert!((h[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_hvp_is_exact() {
        let a = vec![2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 4.0];
        let dir = [0.5, -1.0, 2.0];
        let hv = grad_of_grad_contraction(&Quadratic(a.clone(), 3), &[0.3, 0.1, -0.7], &dir).unwrap();
        for i in 0..3 {
            let expect: f64 = (0..3).map(|j| a[i * 3 + j] * dir[j]).sum();
            assert_eq!(hv[i], expect);
        }
    }

    #[test]
    fn mlp_hvp_matches_difference_of_gradients() {
        let f = Mlp::new(6, 8, 3);
        let x = [0.2, -0.4, 0.9, 0.1, -0.3, 0.5];
        let dir = [1.0, 0.5, -0.5, 0.0, 0.25, -1.0];
        let hv = grad_of_grad_contraction(&f, &x, &dir).unwrap();
        let h = 1e-5;
        let shifted = |s: f64| {
            let p: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            grad(&f, &p).unwrap()
        };
        let (up, down) = (shifted(h), shifted(-h));
        let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert!(max_rel_error(&hv, &fd, 1e-8) < 1e-3);
    }

    #[test]
    fn unsupported_primitive_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::row(vec![1.0]));
        assert!(matches!(t.unary_named(x, "relu"), Err(Error::Unsupported(_))));
        assert!(t.unary_named(x, "swish").is_ok());
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        struct Const;
        impl ScalarFn for Const {
            fn eval<T: Scalar>(&self, t: &mut Tape<T>, _x: Var) -> Result<Var> {
                Ok(t.constant(Tensor::scalar(T::from_f64(4.0))))
            }
        }
        assert_eq!(grad(&Const, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    /// Exercises every op's adjoint against finite differences.
    struct Everything;
    impl ScalarFn for Everything {
        fn eval<T: Scalar>(&self, t: &mut Tape<T>, x: Var) -> Result<Var> {
            // x is 1 x 12
            let m = t.reshape(x, 4, 3)?;
            let r = t.slice_cols(x, 0, 3)?;
            let c = t.slice_cols(x, 3, 4)?;
            let c = t.reshape(c, 4, 1)?;
            let a = t.add_row(m, r)?;
            let b = t.sub_row(a, r)?;
            let b = t.mul_row(b, r)?;
            let b = t.mul_col(b, c)?;
            let e = t.unary(b, Unary::Sin);
            let e2 = t.unary(m, Unary::Cos);
            let p = t.mul(e, e2)?;
            let q = t.sub(p, m)?;
            let sq = t.square(q);
            let ex = t.exp(sq);
            let pos = t.add_scalar(ex, 0.5);
            let lg = t.ln(pos);
            let sr = t.sqrt(pos);
            let sg = t.unary(lg, Unary::Sigmoid);
            let ng = t.unary(sr, Unary::Neg);
            let at = t.atan2(sg, ng)?;
            let w = t.wrap_angle(at);
            let idx = Arc::new(vec![3, 0, 0, 2]);
            let gth = t.gather_rows(w, idx)?;
            let seg = t.segment_sum(gth, Arc::new(vec![1, 0, 1, 1]), 2)?;
            let cat = t.concat_cols(&[seg, seg])?;
            let perm = Arc::new(vec![5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6]);
            let pm = t.permute(cat, perm, 2, 6)?;
            let sc = t.sum_cols(pm);
            let srow = t.sum_rows(pm);
            let mm = t.matmul(sc, srow)?;
            let pairs = Arc::new(PairIndex {
                center: vec![0, 0, 1, 1, 1],
                member: vec![0, 3, 1, 2, 3],
                n_centers: 2,
            });
            let s = t.slice_cols(m, 0, 2)?;
            let s = t.gather_rows(s, Arc::new(vec![0, 1, 2, 3, 0]))?;
            let outer = t.pair_outer(s, m, pairs.clone())?;
            let k = t.concat_cols(&[s, s, s])?;
            let k = t.slice_cols(k, 0, 6)?;
            let ap = t.pair_apply(k, m, pairs)?;
            let s1 = t.sum(mm);
            let s2 = t.sum(outer);
            let s3 = t.swish(ap);
            let s3 = t.sum(s3);
            let s12 = t.add(s1, s2)?;
            let tot = t.add(s12, s3)?;
            let sc = t.scale(tot, 0.3);
            Ok(t.powf(sc, 2.0))
        }
    }

    #[test]
    fn every_op_adjoint_matches_finite_differences() {
        let mut rng = stream(4, "ops");
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.2..1.0)).collect();
        let g = grad(&Everything, &x).unwrap();
        let fd = central_difference(
            |v| {
                let mut t = Tape::<f64>::new();
                let xv = t.constant(Tensor::row(v.to_vec()));
                let o = Everything.eval(&mut t, xv).unwrap();
                t.value(o).get(0, 0)
            },
            &x,
            1e-6,
        );
        assert!(max_rel_error(&g, &fd, 1e-6) < 1e-6, "{g:?} vs {fd:?}");
        // and the second-order path through every op
        let dir: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let hv = grad_of_grad_contraction(&Everything, &x, &dir).unwrap();
        let h = 1e-5;
        let at = |s: f64| {
            let p: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            grad(&Everything, &p).unwrap()
        };
        let (up, down) = (at(h), at(-h));
        let fd2: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert!(max_rel_error(&hv, &fd2, 1e-6) < 1e-4);
    }

    #[test]
    fn single_precision_tape() {
        let g: Vec<f64> = {
            let mut t = Tape::<f32>::new();
            let x = t.param(Tensor::row(vec![3.0f32]));
            let y = t.square(x);
            let s = t.sum(y);
            t.backward(s).unwrap().get(x).unwrap().to_f64()
        };
        assert_eq!(g, vec![6.0]);
    }
}
