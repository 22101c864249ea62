//! Stacked volumetric hourglass network.
//!
//! A pre-block turns the five input channels into the shared feature map
//! `S1`. Each module encodes its input three times by a factor of two,
//! appends the tiled granularity embedding to the code, decodes back with
//! residual skip paths from the encoder, and ends in two prediction branches
//! (joints and bones). Modules after the first read `[Pj, Pb, S1]`.

pub mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::tensor::{BatchNormUpdate, Graph, ParamId, ParamKind, ParamStore, Real, Tensor, Var};

pub use model::{load_model, save_model, ModelMeta};

pub const DEFAULT_GRANULARITY: f64 = 0.02;
pub const GRANULARITY_CHANNELS: usize = 4;

/// Desired minimum diameter of rigged parts, in normalized shape units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Granularity(f64);

impl Granularity {
    pub fn new(v: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&v) {
            return Err(VolrigError::Config(format!("granularity {v} outside [0, 1]")));
        }
        Ok(Granularity(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity(DEFAULT_GRANULARITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub resolution: usize,
    pub num_modules: usize,
    /// Channel widths: `S1`, then the three encoder stages.
    pub widths: [usize; 4],
    pub in_channels: usize,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            resolution: 88,
            num_modules: 4,
            widths: [8, 16, 24, 36],
            in_channels: 5,
            dropout: 0.2,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(VolrigError::Config(format!(
                "resolution {} is not a positive multiple of 8",
                self.resolution
            )));
        }
        if self.num_modules == 0 {
            return Err(VolrigError::Config("at least one hourglass module is needed".into()));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return Err(VolrigError::Config("channel widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(VolrigError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// `ReLU(BN(conv(x)))`.
#[derive(Debug, Clone, Copy)]
struct ConvBnRelu {
    conv: Conv,
    bn: Norm,
    transpose: bool,
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    first: ConvBnRelu,
    conv2: Conv,
    bn2: Norm,
    proj: Option<Conv>,
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    res: ResBlock,
    mid: ConvBnRelu,
    out: Conv,
}

#[derive(Debug, Clone)]
struct Module {
    down: [ConvBnRelu; 3],
    enc: [ResBlock; 3],
    gran_w: ParamId,
    gran_b: ParamId,
    code: ResBlock,
    dec: [ResBlock; 3],
    skip: [ResBlock; 3],
    up: [ConvBnRelu; 3],
    joint: Branch,
    bone: Branch,
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize) -> Result<Conv> {
        let std = (2.0 / (k * k * k * cin) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = Tensor::from_fn(&[k, k, k, cin, cout], |_| T::of(normal.sample(&mut self.rng)));
        Ok(Conv {
            w: self.store.add(format!("{name}.weight"), w, ParamKind::Weight)?,
            b: self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Weight)?,
            stride,
        })
    }

    fn norm(&mut self, name: &str, c: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(&[c], T::one()), ParamKind::Weight)?,
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[c]), ParamKind::Weight)?,
            mean: self.store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?,
            var: self.store.add(format!("{name}.running_var"), Tensor::full(&[c], T::one()), ParamKind::Buffer)?,
        })
    }

    fn cbr(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize) -> Result<ConvBnRelu> {
        Ok(ConvBnRelu {
            conv: self.conv(&format!("{name}.conv"), k, cin, cout, stride)?,
            bn: self.norm(&format!("{name}.bn"), cout)?,
            transpose: false,
        })
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> Result<ConvBnRelu> {
        let mut c = self.cbr(name, 2, cin, cout, 2)?;
        c.transpose = true;
        Ok(c)
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize) -> Result<ResBlock> {
        Ok(ResBlock {
            first: self.cbr(&format!("{name}.conv1"), 3, cin, cout, 1)?,
            conv2: self.conv(&format!("{name}.conv2"), 3, cout, cout, 1)?,
            bn2: self.norm(&format!("{name}.bn2"), cout)?,
            proj: if cin != cout {
                Some(self.conv(&format!("{name}.proj"), 3, cin, cout, 1)?)
            } else {
                None
            },
        })
    }

    fn branch(&mut self, name: &str, c: usize) -> Result<Branch> {
        let half = (c / 2).max(1);
        Ok(Branch {
            res: self.res(&format!("{name}.res"), c, half)?,
            mid: self.cbr(&format!("{name}.mid"), 1, half, half, 1)?,
            out: self.conv(&format!("{name}.out"), 1, half, 1, 1)?,
        })
    }
}

/// Joint and bone probability maps of every module plus `S1`.
pub struct StackOutputs<T> {
    pub joints: Vec<Var<T>>,
    pub bones: Vec<Var<T>>,
    pub s1: Var<T>,
}

/// Per-call state of a forward pass.
pub struct Pass<'r, R> {
    pub train: bool,
    pub rng: &'r mut R,
    /// Batch-norm running statistics to write back after the pass.
    pub updates: Vec<(RunningStats, BatchNormUpdate<f64>)>,
    /// `(layer name, output shape)` in evaluation order, when enabled.
    pub trace: Option<Vec<(String, Vec<usize>)>>,
}

/// Running-statistic buffers of one batch norm.
#[derive(Debug, Clone, Copy)]
pub struct RunningStats {
    pub mean: ParamId,
    pub var: ParamId,
}

impl<'r, R: Rng> Pass<'r, R> {
    pub fn eval(rng: &'r mut R) -> Self {
        Pass {
            train: false,
            rng,
            updates: Vec::new(),
            trace: None,
        }
    }

    pub fn train(rng: &'r mut R) -> Self {
        Pass {
            train: true,
            ..Pass::eval(rng)
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    fn record<T: Real>(&mut self, name: &str, v: &Var<T>) {
        if let Some(t) = &mut self.trace {
            t.push((name.to_string(), v.shape().to_vec()));
        }
    }
}

pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pre: ConvBnRelu,
    pre_res: ResBlock,
    modules: Vec<Module>,
}

impl<T: Real> Network<T> {
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let [c0, c1, c2, c3] = config.widths;
        let pre = b.cbr("pre.conv5", 5, config.in_channels, c0, 1)?;
        let pre_res = b.res("pre.res", c0, c0)?;
        let mut modules = Vec::with_capacity(config.num_modules);
        for m in 0..config.num_modules {
            let p = format!("stack.{m}");
            let cin = if m == 0 { c0 } else { c0 + 2 };
            let code = c3 + GRANULARITY_CHANNELS;
            let down = [
                b.cbr(&format!("{p}.encoder.down0"), 2, cin, cin, 2)?,
                b.cbr(&format!("{p}.encoder.down1"), 2, c1, c1, 2)?,
                b.cbr(&format!("{p}.encoder.down2"), 2, c2, c2, 2)?,
            ];
            let enc = [
                b.res(&format!("{p}.encoder.res0"), cin, c1)?,
                b.res(&format!("{p}.encoder.res1"), c1, c2)?,
                b.res(&format!("{p}.encoder.res2"), c2, c3)?,
            ];
            let normal = Normal::new(0.0, 2f64.sqrt()).expect("positive std");
            let gw = Tensor::from_fn(&[GRANULARITY_CHANNELS], |_| T::of(normal.sample(&mut b.rng)));
            let gran_w = b.store.add(format!("{p}.granularity.weight"), gw, ParamKind::Weight)?;
            let gran_b = b.store.add(
                format!("{p}.granularity.bias"),
                Tensor::zeros(&[GRANULARITY_CHANNELS]),
                ParamKind::Weight,
            )?;
            let code_res = b.res(&format!("{p}.code.res"), code, code)?;
            let dec = [
                b.res(&format!("{p}.decoder.res0"), code, c3)?,
                b.res(&format!("{p}.decoder.res1"), c2, c2)?,
                b.res(&format!("{p}.decoder.res2"), c1, c1)?,
            ];
            let skip = [
                b.res(&format!("{p}.skip0"), c3, c3)?,
                b.res(&format!("{p}.skip1"), c2, c2)?,
                b.res(&format!("{p}.skip2"), c1, c1)?,
            ];
            let up = [
                b.up(&format!("{p}.decoder.up0"), c3, c2)?,
                b.up(&format!("{p}.decoder.up1"), c2, c1)?,
                b.up(&format!("{p}.decoder.up2"), c1, c0)?,
            ];
            let joint = b.branch(&format!("{p}.joint"), c0)?;
            let bone = b.branch(&format!("{p}.bone"), c0)?;
            modules.push(Module {
                down,
                enc,
                gran_w,
                gran_b,
                code: code_res,
                dec,
                skip,
                up,
                joint,
                bone,
            });
        }
        Ok(Network {
            config,
            params,
            pre,
            pre_res,
            modules,
        })
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.num_trainable()
    }

    fn conv(&self, g: &Graph<T>, x: &Var<T>, c: &Conv, transpose: bool) -> Result<Var<T>> {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        if transpose {
            g.conv_transpose3d(x, &w, Some(&b))
        } else {
            g.conv3d(x, &w, Some(&b), c.stride)
        }
    }

    fn norm<R: Rng>(&self, g: &Graph<T>, x: &Var<T>, n: &Norm, pass: &mut Pass<R>) -> Result<Var<T>> {
        let gamma = g.param(&self.params, n.gamma);
        let beta = g.param(&self.params, n.beta);
        let (rm, rv) = (self.params.value(n.mean).data(), self.params.value(n.var).data());
        let (y, upd) = g.batchnorm(x, &gamma, &beta, (rm, rv), pass.train)?;
        if let Some(u) = upd {
            let cast = BatchNormUpdate {
                mean: u.mean.iter().map(|v| v.f64()).collect(),
                var: u.var.iter().map(|v| v.f64()).collect(),
            };
            pass.updates.push((RunningStats { mean: n.mean, var: n.var }, cast));
        }
        Ok(y)
    }

    fn cbr<R: Rng>(&self, g: &Graph<T>, x: &Var<T>, l: &ConvBnRelu, pass: &mut Pass<R>) -> Result<Var<T>> {
        let y = self.conv(g, x, &l.conv, l.transpose)?;
        let y = self.norm(g, &y, &l.bn, pass)?;
        g.relu(&y)
    }

    fn res<R: Rng>(&self, g: &Graph<T>, x: &Var<T>, r: &ResBlock, pass: &mut Pass<R>) -> Result<Var<T>> {
        let h = self.cbr(g, x, &r.first, pass)?;
        let h = self.conv(g, &h, &r.conv2, false)?;
        let h = self.norm(g, &h, &r.bn2, pass)?;
        let skip = match &r.proj {
            Some(p) => self.conv(g, x, p, false)?,
            None => x.clone(),
        };
        g.relu(&g.add(&h, &skip)?)
    }

    fn branch<R: Rng>(&self, g: &Graph<T>, x: &Var<T>, b: &Branch, pass: &mut Pass<R>) -> Result<Var<T>> {
        let h = self.res(g, x, &b.res, pass)?;
        let h = self.cbr(g, &h, &b.mid, pass)?;
        let h = g.dropout(&h, self.config.dropout, pass.train, pass.rng)?;
        let h = self.conv(g, &h, &b.out, false)?;
        g.sigmoid(&h)
    }

    /// Embedding of the granularity for module `m`, tiled over `dims`.
    pub fn embed_granularity(&self, g: &Graph<T>, m: usize, gamma: Granularity, dims: [usize; 3]) -> Result<Var<T>> {
        let md = &self.modules[m];
        let w = g.param(&self.params, md.gran_w);
        let b = g.param(&self.params, md.gran_b);
        g.tile_affine(T::of(gamma.value()), &w, &b, dims)
    }

    fn module<R: Rng>(
        &self,
        g: &Graph<T>,
        m: usize,
        x: &Var<T>,
        gamma: Granularity,
        pass: &mut Pass<R>,
    ) -> Result<(Var<T>, Var<T>)> {
        let md = &self.modules[m];
        let tag = |s: &str| format!("stack.{m}.{s}");
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(3);
        for i in 0..3 {
            h = self.cbr(g, &h, &md.down[i], pass)?;
            pass.record(&tag(&format!("encoder.down{i}")), &h);
            h = self.res(g, &h, &md.enc[i], pass)?;
            pass.record(&tag(&format!("encoder.res{i}")), &h);
            enc.push(h.clone());
        }
        let gmap = self.embed_granularity(g, m, gamma, h.value().spatial()?)?;
        h = g.concat(&[&h, &gmap])?;
        pass.record(&tag("concat"), &h);
        h = self.res(g, &h, &md.code, pass)?;
        pass.record(&tag("code.res"), &h);
        for i in 0..3 {
            let d = self.res(g, &h, &md.dec[i], pass)?;
            let s = self.res(g, &enc[2 - i], &md.skip[i], pass)?;
            h = g.add(&d, &s)?;
            pass.record(&tag(&format!("decoder.res{i}")), &h);
            h = self.cbr(g, &h, &md.up[i], pass)?;
            pass.record(&tag(&format!("decoder.up{i}")), &h);
        }
        let pj = self.branch(g, &h, &md.joint, pass)?;
        pass.record(&tag("joint"), &pj);
        let pb = self.branch(g, &h, &md.bone, pass)?;
        pass.record(&tag("bone"), &pb);
        Ok((pj, pb))
    }

    /// Runs the pre-block and every module on a `[R, R, R, C]` input.
    pub fn forward<R: Rng>(
        &self,
        g: &Graph<T>,
        input: &Tensor<T>,
        gamma: Granularity,
        pass: &mut Pass<R>,
    ) -> Result<StackOutputs<T>> {
        let r = self.config.resolution;
        let want = [r, r, r, self.config.in_channels];
        if input.shape() != want {
            return Err(VolrigError::Shape(format!(
                "network expects input {want:?}, got {:?}",
                input.shape()
            )));
        }
        let x = g.constant(input.clone());
        pass.record("input", &x);
        let h = self.cbr(g, &x, &self.pre, pass)?;
        pass.record("pre.conv5", &h);
        let s1 = self.res(g, &h, &self.pre_res, pass)?;
        pass.record("pre.res", &s1);
        let mut joints = Vec::new();
        let mut bones = Vec::new();
        let mut feed = s1.clone();
        for m in 0..self.modules.len() {
            let (pj, pb) = self.module(g, m, &feed, gamma, pass)?;
            if m + 1 < self.modules.len() {
                feed = g.concat(&[&pj, &pb, &s1])?;
                pass.record(&format!("stack.{}.input", m + 1), &feed);
            }
            joints.push(pj);
            bones.push(pb);
        }
        Ok(StackOutputs { joints, bones, s1 })
    }

    /// Writes batch-norm running statistics gathered by a training pass.
    pub fn apply_updates(&mut self, updates: Vec<(RunningStats, BatchNormUpdate<f64>)>) -> Result<()> {
        for (n, u) in updates {
            let c = u.mean.len();
            self.params.set(n.mean, Tensor::new(vec![c], u.mean.iter().map(|v| T::of(*v)).collect())?)?;
            self.params.set(n.var, Tensor::new(vec![c], u.var.iter().map(|v| T::of(*v)).collect())?)?;
        }
        Ok(())
    }

    /// Final-module maps of an eval-mode pass, as flat `R³` arrays.
    pub fn predict_maps(&self, input: &Tensor<T>, gamma: Granularity) -> Result<(Vec<T>, Vec<T>)> {
        let g = Graph::no_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pass = Pass::eval(&mut rng);
        let out = self.forward(&g, input, gamma, &mut pass)?;
        let pj = out.joints.last().expect("at least one module").value().data().to_vec();
        let pb = out.bones.last().expect("at least one module").value().data().to_vec();
        Ok((pj, pb))
    }
}
