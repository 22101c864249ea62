use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, Var};
use super::{Real, Tensor};
use crate::error::{Result, VolrigError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probabilities entering the cross-entropy are clamped to
/// `[LOSS_CLAMP, 1 − LOSS_CLAMP]`.
pub const LOSS_CLAMP: f64 = 1e-7;

/// Running statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormUpdate<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn same_shape<T: Real>(a: &Var<T>, b: &Var<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(VolrigError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Per-channel sums over all positions, accumulated in f64.
fn channel_sums<T: Real>(data: &[T], c: usize, f: impl Fn(usize, T) -> f64) -> Vec<f64> {
    let mut acc = vec![0.0f64; c];
    for row in data.chunks_exact(c) {
        for (ch, v) in row.iter().enumerate() {
            acc[ch] += f(ch, *v);
        }
    }
    acc
}

impl<T: Real> Graph<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "add")?;
        let data = a.value.data().iter().zip(b.value.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.op("add", value, &[a, b], |g, need| {
            vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]
        })
    }

    /// Concatenation along the trailing (channel) axis.
    pub fn concat(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let Some(first) = parts.first() else {
            return Err(VolrigError::Shape("concat of nothing".into()));
        };
        let lead = &first.shape()[..first.shape().len() - 1];
        for p in parts {
            if &p.shape()[..p.shape().len() - 1] != lead {
                return Err(VolrigError::Shape(format!(
                    "concat: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.value.channels()).collect();
        let total: usize = widths.iter().sum();
        let n: usize = lead.iter().product();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value.data()[i * w..(i + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        self.op("concat", value, parts, move |g, need| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (j, &w) in widths.iter().enumerate() {
                out.push(need[j].then(|| {
                    let d: Vec<T> = g
                        .data()
                        .chunks_exact(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    Tensor::new(shapes[j].clone(), d).expect("shape")
                }));
                offset += w;
            }
            out
        })
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let data = x.value.data().iter().map(|v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let xv = Arc::clone(&x.value);
        self.op("relu", value, &[x], move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                .collect();
            vec![Some(Tensor::new(xv.shape().to_vec(), d).expect("shape"))]
        })
    }

    /// Logistic function, kept strictly inside (0, 1).
    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::of(2.0);
        let data = x
            .value
            .data()
            .iter()
            .map(|v| (T::one() / (T::one() + (-*v).exp())).max(lo).min(hi))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let yv = value.clone();
        self.op("sigmoid", value, &[x], move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(yv.data())
                .map(|(g, y)| *g * *y * (T::one() - *y))
                .collect();
            vec![Some(Tensor::new(yv.shape().to_vec(), d).expect("shape"))]
        })
    }

    /// Inverted dropout; the identity when `train` is false or `p == 0`.
    pub fn dropout(&self, x: &Var<T>, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(VolrigError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.value.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.value.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let shape = x.shape().to_vec();
        self.op("dropout", value, &[x], move |g, _| {
            let d = g.data().iter().zip(&mask).map(|(g, m)| *g * *m).collect();
            vec![Some(Tensor::new(shape, d).expect("shape"))]
        })
    }

    /// Batch normalization over all positions of each channel. In training
    /// mode the batch statistics are used and the updated running statistics
    /// are returned; in eval mode `running` is applied.
    pub fn batchnorm(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running: (&[T], &[T]),
        train: bool,
    ) -> Result<(Var<T>, Option<BatchNormUpdate<T>>)> {
        let c = x.value.channels();
        if gamma.shape() != [c] || beta.shape() != [c] || running.0.len() != c || running.1.len() != c {
            return Err(VolrigError::Shape(format!("batchnorm over {c} channels")));
        }
        let n = x.value.len() / c.max(1);
        if n == 0 {
            return Err(VolrigError::Shape("batchnorm of an empty map".into()));
        }
        let (mean, var, update) = if train {
            let mean: Vec<f64> = channel_sums(x.value.data(), c, |_, v| v.f64())
                .into_iter()
                .map(|s| s / n as f64)
                .collect();
            let var: Vec<f64> = channel_sums(x.value.data(), c, |ch, v| (v.f64() - mean[ch]).powi(2))
                .into_iter()
                .map(|s| s / n as f64)
                .collect();
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let update = BatchNormUpdate {
                mean: (0..c)
                    .map(|i| T::of((1.0 - BN_MOMENTUM) * running.0[i].f64() + BN_MOMENTUM * mean[i]))
                    .collect(),
                var: (0..c)
                    .map(|i| T::of((1.0 - BN_MOMENTUM) * running.1[i].f64() + BN_MOMENTUM * var[i] * unbias))
                    .collect(),
            };
            (mean, var, Some(update))
        } else {
            (
                running.0.iter().map(|v| v.f64()).collect(),
                running.1.iter().map(|v| v.f64()).collect(),
                None,
            )
        };
        let inv: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|m| T::of(*m)).collect();
        let mut xhat = Vec::with_capacity(x.value.len());
        for row in x.value.data().chunks_exact(c) {
            for ch in 0..c {
                xhat.push((row[ch] - mean_t[ch]) * inv[ch]);
            }
        }
        let (gv, bv) = (gamma.value.data().to_vec(), beta.value.data());
        let data: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| gv[i % c] * *h + bv[i % c])
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let shape = x.shape().to_vec();
        let var_out = self.op("batchnorm", value, &[x, gamma, beta], move |g, need| {
            let gd = g.data();
            let dbeta = channel_sums(gd, c, |_, v| v.f64());
            let mut dgamma = vec![0.0f64; c];
            for (grow, hrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    dgamma[ch] += grow[ch].f64() * hrow[ch].f64();
                }
            }
            let dx = need[0].then(|| {
                let nf = n as f64;
                let scale: Vec<T> = (0..c).map(|ch| gv[ch] * inv[ch]).collect();
                let mb: Vec<T> = dbeta.iter().map(|v| T::of(v / nf)).collect();
                let mg: Vec<T> = dgamma.iter().map(|v| T::of(v / nf)).collect();
                let mut d = Vec::with_capacity(gd.len());
                for (i, gy) in gd.iter().enumerate() {
                    let ch = i % c;
                    d.push(if train {
                        scale[ch] * (*gy - mb[ch] - xhat[i] * mg[ch])
                    } else {
                        scale[ch] * *gy
                    });
                }
                Tensor::new(shape.clone(), d).expect("shape")
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_fn(&[c], |i| T::of(dgamma[i]))),
                need[2].then(|| Tensor::from_fn(&[c], |i| T::of(dbeta[i]))),
            ]
        })?;
        Ok((var_out, update))
    }

    /// Maps a scalar to `C` values by `gamma·w + b` and tiles them over the
    /// spatial dims `[D, H, W]`.
    pub fn tile_affine(&self, gamma: T, w: &Var<T>, b: &Var<T>, dims: [usize; 3]) -> Result<Var<T>> {
        same_shape(w, b, "tile_affine")?;
        let c = w.value.len();
        let row: Vec<T> = w
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(w, b)| gamma * *w + *b)
            .collect();
        let n = dims.iter().product::<usize>();
        let data = (0..n).flat_map(|_| row.iter().copied()).collect();
        let value = Tensor::new(vec![dims[0], dims[1], dims[2], c], data)?;
        self.op("tile_affine", value, &[w, b], move |g, need| {
            let s = channel_sums(g.data(), c, |_, v| v.f64());
            vec![
                need[0].then(|| Tensor::from_fn(&[c], |i| T::of(s[i]) * gamma)),
                need[1].then(|| Tensor::from_fn(&[c], |i| T::of(s[i]))),
            ]
        })
    }

    /// Masked soft binary cross-entropy averaged over the masked voxels:
    /// `(1/N) Σ_mask −[t ln p + (1 − t) ln(1 − p)]`.
    pub fn masked_bce(&self, p: &Var<T>, target: &Tensor<T>, mask: &[bool]) -> Result<Var<T>> {
        if p.value.len() != target.len() || p.value.len() != mask.len() {
            return Err(VolrigError::Shape(format!(
                "loss: prediction {}, target {}, mask {}",
                p.value.len(),
                target.len(),
                mask.len()
            )));
        }
        let ns = mask.iter().filter(|&&m| m).count();
        if ns == 0 {
            return Err(VolrigError::Invalid("loss mask is empty".into()));
        }
        let clamp = |v: f64| v.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        let mut total = 0.0f64;
        for ((pv, tv), m) in p.value.data().iter().zip(target.data()).zip(mask) {
            if *m {
                let (q, t) = (clamp(pv.f64()), tv.f64());
                total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
            }
        }
        let value = Tensor::scalar(T::of(total / ns as f64));
        let (pv, tv) = (Arc::clone(&p.value), target.clone());
        let mask = mask.to_vec();
        self.op("masked_bce", value, &[p], move |g, _| {
            let scale = g.item().f64() / ns as f64;
            // evaluated at the clamped probability so saturated outputs still
            // receive a finite, correctly signed gradient
            let d = pv
                .data()
                .iter()
                .zip(tv.data())
                .zip(&mask)
                .map(|((p, t), m)| {
                    if *m {
                        let q = clamp(p.f64());
                        T::of(scale * (q - t.f64()) / (q * (1.0 - q)))
                    } else {
                        T::zero()
                    }
                })
                .collect();
            vec![Some(Tensor::new(pv.shape().to_vec(), d).expect("shape"))]
        })
    }

    pub fn sum_squares(&self, x: &Var<T>) -> Result<Var<T>> {
        let s: f64 = x.value.data().iter().map(|v| v.f64() * v.f64()).sum();
        let xv = Arc::clone(&x.value);
        self.op("sum_squares", Tensor::scalar(T::of(s)), &[x], move |g, _| {
            let k = g.item() * T::of(2.0);
            vec![Some(Tensor::from_fn(xv.shape(), |i| xv.data()[i] * k))]
        })
    }

    /// `Σ x ⊙ r` for a constant `r`.
    pub fn weighted_sum(&self, x: &Var<T>, r: &Tensor<T>) -> Result<Var<T>> {
        if x.value.len() != r.len() {
            return Err(VolrigError::Shape("weighted_sum size mismatch".into()));
        }
        let s = x.value.dot(r);
        let (rv, shape) = (r.clone(), x.shape().to_vec());
        self.op("weighted_sum", Tensor::scalar(T::of(s)), &[x], move |g, _| {
            let k = g.item();
            vec![Some(Tensor::new(shape, rv.data().iter().map(|v| *v * k).collect()).expect("shape"))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_and_sigmoid_values() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::new(vec![4], vec![-3.0, 2.0, 0.0, 3f64.ln()]).unwrap());
        assert_eq!(g.relu(&x).unwrap().value().data(), &[0.0, 2.0, 0.0, 3f64.ln()]);
        let s = g.sigmoid(&x).unwrap();
        assert_eq!(s.value().data()[2], 0.5);
        assert_abs_diff_eq!(s.value().data()[3], 0.75, epsilon = 1e-15);
        let big = g.constant(Tensor::new(vec![2], vec![1e4f64, -1e4]).unwrap());
        let s = g.sigmoid(&big).unwrap();
        assert!(s.value().data()[0] < 1.0 && s.value().data()[1] > 0.0);
        let g32 = Graph::<f32>::no_grad();
        let big = g32.constant(Tensor::new(vec![2], vec![40.0f32, -200.0]).unwrap());
        let s = g32.sigmoid(&big).unwrap();
        assert!(s.value().data()[0] < 1.0 && s.value().data()[1] > 0.0);
    }

    #[test]
    fn batchnorm_train_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_fn(&[4, 4, 4, 3], |_| rng.gen_range(-5.0..9.0));
        let g = Graph::no_grad();
        let (gamma, beta) = (g.constant(Tensor::full(&[3], 1.0)), g.constant(Tensor::zeros(&[3])));
        let (y, upd) = g
            .batchnorm(&g.constant(x.clone()), &gamma, &beta, (&[0.0; 3], &[1.0; 3]), true)
            .unwrap();
        for ch in 0..3 {
            let v: Vec<f64> = y.value().data().iter().skip(ch).step_by(3).copied().collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(upd.is_some());
        let (gamma, beta) = (g.constant(Tensor::full(&[3], 2.0)), g.constant(Tensor::full(&[3], 1.0)));
        let (y, _) = g
            .batchnorm(&g.constant(x.clone()), &gamma, &beta, (&[0.0; 3], &[1.0; 3]), true)
            .unwrap();
        let v: Vec<f64> = y.value().data().iter().step_by(3).copied().collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((m - 1.0).abs() < 1e-5 && (sd - 2.0).abs() < 1e-3);
    }

    #[test]
    fn batchnorm_eval_identity_and_running_update() {
        let g = Graph::<f64>::no_grad();
        let x = Tensor::from_fn(&[2, 2, 2, 1], |i| i as f64);
        let (gamma, beta) = (g.constant(Tensor::full(&[1], 1.0)), g.constant(Tensor::zeros(&[1])));
        let (y, upd) = g
            .batchnorm(&g.constant(x.clone()), &gamma, &beta, (&[0.0], &[1.0]), false)
            .unwrap();
        assert!(upd.is_none());
        for (a, b) in y.value().data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, &(b / (1.0 + BN_EPS).sqrt()), epsilon = 1e-12);
        }
        let (_, upd) = g.batchnorm(&g.constant(x), &gamma, &beta, (&[0.0], &[1.0]), true).unwrap();
        let upd = upd.unwrap();
        // mean 3.5, unbiased variance 6
        assert_abs_diff_eq!(upd.mean[0], 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!(upd.var[0], 0.9 + 0.6, epsilon = 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::full(&[1_000_000], 1.0));
        assert_eq!(g.dropout(&x, 0.2, false, &mut rng).unwrap().value(), x.value());
        assert_eq!(g.dropout(&x, 0.0, true, &mut rng).unwrap().value(), x.value());
        let y = g.dropout(&x, 0.2, true, &mut rng).unwrap();
        let mean = y.value().data().iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
        assert!(g.dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn concat_and_add() {
        let g = Graph::<f32>::no_grad();
        let a = g.constant(Tensor::full(&[4, 4, 4, 2], 1.0));
        let b = g.constant(Tensor::full(&[4, 4, 4, 8], 2.0));
        let c = g.concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[4, 4, 4, 10]);
        assert_eq!(&c.value().data()[..10], &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        let z = g.constant(Tensor::zeros(&[4, 4, 4, 2]));
        assert_eq!(g.add(&a, &z).unwrap().value(), a.value());
        assert!(g.add(&a, &b).is_err());
        let bad = g.constant(Tensor::zeros(&[2, 4, 4, 2]));
        assert!(g.concat(&[&a, &bad]).is_err());
    }

    #[test]
    fn tile_affine_is_affine_in_gamma() {
        let g = Graph::<f64>::no_grad();
        let w = g.constant(Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
        let b = g.constant(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m0 = g.tile_affine(0.0, &w, &b, [3, 3, 3]).unwrap();
        let m1 = g.tile_affine(0.7, &w, &b, [3, 3, 3]).unwrap();
        assert_eq!(m0.shape(), &[3, 3, 3, 4]);
        for (i, (a, c)) in m1.value().data().iter().zip(m0.value().data()).enumerate() {
            assert_abs_diff_eq!(a - c, 0.7 * w.value().data()[i % 4], epsilon = 1e-15);
        }
        assert_eq!(&m0.value().data()[..4], b.value().data());
    }

    #[test]
    fn bce_values() {
        let g = Graph::<f64>::no_grad();
        let p = g.constant(Tensor::new(vec![3], vec![0.5, 0.9, 0.1]).unwrap());
        let t = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        let l = g.masked_bce(&p, &t, &[true, false, false]).unwrap();
        assert_abs_diff_eq!(l.value().item(), 2f64.ln(), epsilon = 1e-15);
        let exact = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let l = g.masked_bce(&exact, &Tensor::new(vec![2], vec![1.0, 0.0]).unwrap(), &[true, true]).unwrap();
        assert!(l.value().item() < 1e-6);
        assert!(g.masked_bce(&p, &t, &[false; 3]).is_err());
    }
}
