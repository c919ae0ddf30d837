//! Named parameter storage and the basic learnable layers.

use std::collections::HashMap;

use hima_tensor::kernels::conv::out_extent;
use hima_tensor::{Conv2dParams, Real, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cost::CostReport;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter `{name}`");
        self.lookup.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Replaces every tensor, checking names and shapes against `self`.
    pub fn load(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(CoreError::Weights(format!(
                "expected {} parameters, found {}",
                self.tensors.len(),
                named.len()
            )));
        }
        let mut fresh = self.tensors.clone();
        for (name, t) in named {
            let i = *self
                .lookup
                .get(&name)
                .ok_or_else(|| CoreError::Weights(format!("unknown parameter `{name}`")))?;
            if t.shape() != fresh[i].shape() {
                return Err(CoreError::Weights(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    fresh[i].shape()
                )));
            }
            fresh[i] = t;
        }
        self.tensors = fresh;
        Ok(())
    }

    /// Overwrites every parameter with uniform noise in `±scale`. Used to
    /// move zero-initialized branches off their trivial point in tests.
    pub fn randomize(&mut self, rng: &mut ChaCha8Rng, scale: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = T::of(rng.random_range(-scale..scale));
            }
        }
    }

    /// Places every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }
}

/// Parameters placed on a tape, indexed by [`ParamId`].
pub struct Bound<'t, T: Real> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in` for weights and biases.
    Uniform,
    Zero,
    Const(f64),
}

/// Builds parameters from a seeded generator. Values are drawn in `f64` so
/// that `f32` and `f64` models built from one seed agree.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init, fan_in: usize) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zero => vec![T::zero(); n],
            Init::Const(c) => vec![T::of(c); n],
            Init::Uniform => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| T::of(self.rng.random_range(-bound..bound)))
                    .collect()
            }
        };
        self.store
            .add(name, Tensor::new(shape, data).expect("parameter shape"))
    }

    pub fn from_fn(&mut self, name: &str, shape: &[usize], f: impl FnMut(&mut ChaCha8Rng, usize) -> f64) -> ParamId {
        let n: usize = shape.iter().product();
        let mut f = f;
        let data: Vec<T> = (0..n).map(|i| T::of(f(self.rng, i))).collect();
        self.store
            .add(name, Tensor::new(shape, data).expect("parameter shape"))
    }
}

/// 2-D convolution layer with a square kernel.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub p: Conv2dParams,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        bld: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        p: Conv2dParams,
        bias: bool,
        init: Init,
    ) -> Self {
        let fan_in = cin / p.groups * k * k;
        let w = bld.tensor(&format!("{name}.w"), &[cout, cin / p.groups, k, k], init, fan_in);
        let b = bias.then(|| bld.tensor(&format!("{name}.b"), &[cout], init, fan_in));
        Self {
            name: name.to_string(),
            w,
            b,
            cin,
            cout,
            k,
            p,
        }
    }

    /// Stride-1 convolution preserving spatial size.
    pub fn same<T: Real>(bld: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize, init: Init) -> Self {
        Self::new(bld, name, cin, cout, k, Conv2dParams::same(k, 1), true, init)
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(bound.get(self.w), self.b.map(|b| bound.get(b)), self.p)?)
    }

    pub fn params(&self) -> u64 {
        (self.cout * self.cin / self.p.groups * self.k * self.k + if self.b.is_some() { self.cout } else { 0 }) as u64
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_extent(h, self.k, &self.p).unwrap_or(0),
            out_extent(w, self.k, &self.p).unwrap_or(0),
        )
    }

    /// Records this layer applied to an `h×w` input; returns the output extent.
    pub fn cost(&self, report: &mut CostReport, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.out_hw(h, w);
        let macs = self.cout * self.cin / self.p.groups * self.k * self.k * oh * ow;
        report.push(&self.name, self.params(), macs as u64);
        (oh, ow)
    }
}

/// Fully connected layer over the last axis, `w: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, fin: usize, fout: usize, bias: bool, init: Init) -> Self {
        let w = bld.tensor(&format!("{name}.w"), &[fout, fin], init, fin);
        let b = bias.then(|| bld.tensor(&format!("{name}.b"), &[fout], init, fin));
        Self {
            name: name.to_string(),
            w,
            b,
            fin,
            fout,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(bound.get(self.w), self.b.map(|b| bound.get(b)))?)
    }

    pub fn params(&self) -> u64 {
        (self.fin * self.fout + if self.b.is_some() { self.fout } else { 0 }) as u64
    }

    pub fn cost(&self, report: &mut CostReport, rows: usize) {
        report.push(&self.name, self.params(), (rows * self.fin * self.fout) as u64);
    }
}

/// Channel LayerNorm with affine parameters, ε = 1e-6.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

pub const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new<T: Real>(bld: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            weight: bld.tensor(&format!("{name}.weight"), &[channels], Init::Const(1.0), 1),
            bias: bld.tensor(&format!("{name}.bias"), &[channels], Init::Zero, 1),
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.layer_norm_channels(bound.get(self.weight), bound.get(self.bias), T::of(LN_EPS))?)
    }

    pub fn cost(&self, report: &mut CostReport) {
        report.push(&self.name, 2 * self.channels as u64, 0);
    }
}
