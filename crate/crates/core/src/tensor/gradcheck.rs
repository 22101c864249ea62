//! Central finite-difference checks of every differentiable op in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamKind, ParamStore, Tensor, Var};

/// Central-difference step.
pub const H: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOL: f64 = 1e-5;

pub type Build = dyn Fn(&Graph<f64>, &[Var<f64>]) -> Var<f64>;

fn loss_of(g: &Graph<f64>, out: Var<f64>, r: &Tensor<f64>) -> Var<f64> {
    if out.value().len() == 1 {
        out
    } else {
        g.weighted_sum(&out, r).unwrap()
    }
}

/// Worst relative error (norm-wise per input) between backprop and central
/// differences of `Σ r ⊙ build(inputs)`.
pub fn max_rel_error(build: &Build, inputs: Vec<Tensor<f64>>, seed: u64) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t, ParamKind::Weight).unwrap())
        .collect();
    let eval = |store: &ParamStore<f64>, r: Option<&Tensor<f64>>| -> (Var<f64>, Graph<f64>) {
        let g = Graph::with_grad();
        let vars: Vec<_> = ids.iter().map(|&id| g.param(store, id)).collect();
        let out = build(&g, &vars);
        let out = match r {
            Some(r) => loss_of(&g, out, r),
            None => out,
        };
        (out, g)
    };
    let (probe, _) = eval(&store, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::from_fn(probe.shape(), |_| rng.gen_range(-1.0..1.0));
    let (loss, g) = eval(&store, Some(&r));
    g.backward(&loss, &mut store).unwrap();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        let mut num = Vec::new();
        for j in 0..store.value(id).len() {
            let x0 = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = x0 + H;
            let fp = eval(&store, Some(&r)).0.value().item();
            store.value_mut(id).data_mut()[j] = x0 - H;
            let fm = eval(&store, Some(&r)).0.value().item();
            store.value_mut(id).data_mut()[j] = x0;
            num.push((fp - fm) / (2.0 * H));
        }
        let diff: f64 = num.iter().zip(&analytic[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(analytic[k].iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Random entries with magnitude in `[0.05, 1)` and random sign.
pub fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // keep clear of the relu kink so the finite difference stays on one side
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3d_all_kernels_and_strides() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, s) in [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (5, 1), (5, 2)] {
            let x = rand_t(&[4, 6, 4, 3], &mut rng);
            let w = rand_t(&[k, k, k, 3, 2], &mut rng);
            let b = rand_t(&[2], &mut rng);
            let build = move |g: &Graph<f64>, v: &[Var<f64>]| g.conv3d(&v[0], &v[1], Some(&v[2]), s).unwrap();
            let e = max_rel_error(&build, vec![x, w, b], 1);
            assert!(e < TOL, "k={k} s={s}: {e}");
        }
    }

    #[test]
    fn conv_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_t(&[3, 2, 3, 4], &mut rng);
        let w = rand_t(&[2, 2, 2, 4, 3], &mut rng);
        let b = rand_t(&[3], &mut rng);
        let build = |g: &Graph<f64>, v: &[Var<f64>]| g.conv_transpose3d(&v[0], &v[1], Some(&v[2])).unwrap();
        assert!(max_rel_error(&build, vec![x, w, b], 2) < TOL);
    }

    #[test]
    fn batchnorm_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for train in [true, false] {
            let x = rand_t(&[3, 3, 2, 4], &mut rng);
            let gamma = rand_t(&[4], &mut rng);
            let beta = rand_t(&[4], &mut rng);
            let build = move |g: &Graph<f64>, v: &[Var<f64>]| {
                g.batchnorm(&v[0], &v[1], &v[2], (&[0.1, -0.2, 0.3, 0.0], &[1.5, 0.7, 1.0, 2.0]), train)
                    .unwrap()
                    .0
            };
            let e = max_rel_error(&build, vec![x, gamma, beta], 3);
            assert!(e < TOL, "train={train}: {e}");
        }
    }

    #[test]
    fn pointwise_concat_add_tile() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_t(&[3, 3, 3, 2], &mut rng);
        let relu = |g: &Graph<f64>, v: &[Var<f64>]| g.relu(&v[0]).unwrap();
        assert!(max_rel_error(&relu, vec![x.clone()], 4) < TOL);
        let sig = |g: &Graph<f64>, v: &[Var<f64>]| g.sigmoid(&v[0]).unwrap();
        assert!(max_rel_error(&sig, vec![x.clone()], 5) < TOL);
        let y = rand_t(&[3, 3, 3, 3], &mut rng);
        let cat = |g: &Graph<f64>, v: &[Var<f64>]| g.concat(&[&v[0], &v[1]]).unwrap();
        assert!(max_rel_error(&cat, vec![x.clone(), y], 6) < TOL);
        let z = rand_t(&[3, 3, 3, 2], &mut rng);
        let add = |g: &Graph<f64>, v: &[Var<f64>]| g.add(&v[0], &v[1]).unwrap();
        assert!(max_rel_error(&add, vec![x, z], 7) < TOL);
        let tile = |g: &Graph<f64>, v: &[Var<f64>]| g.tile_affine(0.37, &v[0], &v[1], [2, 3, 2]).unwrap();
        assert!(max_rel_error(&tile, vec![rand_t(&[4], &mut rng), rand_t(&[4], &mut rng)], 8) < TOL);
    }

    #[test]
    fn masked_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = Tensor::from_fn(&[4, 4, 4, 1], |_| rng.gen_range(0.05..0.95));
        let t = Tensor::from_fn(&[4, 4, 4, 1], |_| rng.gen_range(0.0..1.0));
        let mask: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.6)).collect();
        let build = move |g: &Graph<f64>, v: &[Var<f64>]| g.masked_bce(&v[0], &t, &mask).unwrap();
        assert!(max_rel_error(&build, vec![p], 9) < TOL);
    }

    #[test]
    fn small_network_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = rand_t(&[4, 4, 4, 2], &mut rng);
        let w1 = rand_t(&[3, 3, 3, 2, 3], &mut rng);
        let w2 = rand_t(&[2, 2, 2, 3, 2], &mut rng);
        let build = |g: &Graph<f64>, v: &[Var<f64>]| {
            let h = g.conv3d(&v[0], &v[1], None, 2).unwrap();
            let h = g.sigmoid(&h).unwrap();
            let u = g.conv_transpose3d(&h, &v[2], None).unwrap();
            g.add(&u, &v[0]).unwrap()
        };
        assert!(max_rel_error(&build, vec![x, w1, w2], 10) < TOL);
    }
}
