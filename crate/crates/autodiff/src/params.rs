//! Named parameter storage and the parametrised layers built on it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Real;
use crate::tensor::{InitSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether weight decay applies (conv weights only).
    pub decay: bool,
}

/// Ordered, uniquely named set of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            decay,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a parameter drawn from `init` on the stream `(seed, name)`.
    pub fn init(&mut self, name: &str, shape: &[usize], init: InitSpec, seed: u64, decay: bool) -> Result<ParamId> {
        let value = Tensor::init_named(shape, init, seed, name)?;
        self.add(name, value, decay)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Records every parameter as a gradient-requiring leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| g.param(e.value.clone())).collect(),
        }
    }

    /// Records every parameter as a constant leaf (inference).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| g.input(e.value.clone())).collect(),
        }
    }
}

/// Graph handles of a [`ParamStore`] recorded on one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars listed in store order, e.g. a frozen binding with one
    /// parameter swapped for a probe variable.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every bound parameter after [`Graph::backward`].
    pub fn grads<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>) -> Result<Vec<Tensor<T>>> {
        self.vars
            .iter()
            .zip(store.entries())
            .map(|(&v, e)| {
                g.grad(v)
                    .cloned()
                    .ok_or_else(|| Error::Graph(format!("no gradient reached parameter `{}`", e.name)))
            })
            .collect()
    }
}

/// A convolution's weight `[Cout,Cin,k,k]`, bias `[Cout]` and geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Registers `<name>.weight` (decayed) and `<name>.bias` (zero, not decayed).
    /// The kernel must be odd; `padding = kernel / 2` keeps "same" geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        weight_init: InitSpec,
        seed: u64,
    ) -> Result<Self> {
        Self::build(store, name, cin, cout, kernel, stride, weight_init, seed, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        weight_init: InitSpec,
        seed: u64,
        decay: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 || cin == 0 || cout == 0 || stride == 0 {
            return Err(Error::Invalid(format!(
                "conv `{name}`: need odd kernel and non-zero sizes (k={kernel}, cin={cin}, cout={cout}, stride={stride})"
            )));
        }
        let weight = store.init(&format!("{name}.weight"), &[cout, cin, kernel, kernel], weight_init, seed, decay)?;
        let bias = store.init(&format!("{name}.bias"), &[cout], InitSpec::Zeros, seed, false)?;
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), p.var(self.bias), self.stride, self.padding)
    }
}

/// Per-pixel full connection across channels: a 1×1 convolution.
pub fn pointwise_fc<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var, fc: &ConvParams) -> Result<Var> {
    if fc.kernel != 1 || fc.stride != 1 {
        return Err(Error::Invalid(format!(
            "pointwise_fc needs a 1x1 stride-1 kernel, got {k}x{k} stride {s}",
            k = fc.kernel,
            s = fc.stride
        )));
    }
    fc.forward(g, p, x)
}

/// Sampling convolution plus the sibling convolution that predicts its
/// `2·k·k` offset channels from the same input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeformConvParams {
    pub main: ConvParams,
    pub offset_predictor: ConvParams,
}

impl DeformConvParams {
    /// The offset predictor (`<name>.offset`) starts at zero and is excluded
    /// from weight decay, so a fresh layer behaves as a plain convolution.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        weight_init: InitSpec,
        seed: u64,
    ) -> Result<Self> {
        let main = ConvParams::new(store, name, cin, cout, kernel, 1, weight_init, seed)?;
        let offset_predictor = ConvParams::build(
            store,
            &format!("{name}.offset"),
            cin,
            2 * kernel * kernel,
            kernel,
            1,
            InitSpec::Zeros,
            seed,
            false,
        )?;
        Ok(Self { main, offset_predictor })
    }
}

pub fn deformable_conv2d<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var, dc: &DeformConvParams) -> Result<Var> {
    let offsets = dc.offset_predictor.forward(g, p, x)?;
    g.deform_conv2d(
        x,
        offsets,
        p.var(dc.main.weight),
        p.var(dc.main.bias),
        dc.main.stride,
        dc.main.padding,
    )
}
