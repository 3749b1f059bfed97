//! Binding a [`ParamSet`] into a [`Graph`] for one forward pass.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::spectral;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: where parameters come from, whether they are
/// differentiable, and which buffers the pass wants to update.
///
/// Buffer updates are only collected; the caller decides whether to apply
/// them with [`ParamSet::apply`].
pub struct Session<'g, 'p> {
    graph: &'g Graph,
    params: &'p ParamSet,
    mode: Mode,
    track: bool,
    bound: RefCell<HashMap<String, Var<'g>>>,
    updates: RefCell<BTreeMap<String, Tensor>>,
}

impl<'g, 'p> Session<'g, 'p> {
    /// Parameters become named differentiable leaves.
    pub fn new(graph: &'g Graph, params: &'p ParamSet, mode: Mode) -> Self {
        Self::with_tracking(graph, params, mode, true)
    }

    /// Parameters become constants; gradients still flow to inputs.
    pub fn frozen(graph: &'g Graph, params: &'p ParamSet, mode: Mode) -> Self {
        Self::with_tracking(graph, params, mode, false)
    }

    fn with_tracking(graph: &'g Graph, params: &'p ParamSet, mode: Mode, track: bool) -> Self {
        Self {
            graph,
            params,
            mode,
            track,
            bound: RefCell::default(),
            updates: RefCell::default(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    /// Binds a parameter once per session; later calls reuse the node.
    pub fn param(&self, name: &str) -> Result<Var<'g>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let t = self.params.tensor(name)?;
        let v = if self.track {
            self.graph.param(name, t)
        } else {
            self.graph.constant(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Latest value of a buffer, including updates made earlier in this pass.
    pub fn buffer(&self, name: &str) -> Result<Arc<Tensor>> {
        if let Some(t) = self.updates.borrow().get(name) {
            return Ok(Arc::new(t.clone()));
        }
        self.params.tensor(name)
    }

    pub fn record(&self, name: &str, value: Tensor) {
        self.updates.borrow_mut().insert(name.to_string(), value);
    }

    pub fn into_updates(self) -> BTreeMap<String, Tensor> {
        self.updates.into_inner()
    }

    /// `prefix.weight` / optional `prefix.bias` convolution.
    pub fn conv2d(&self, x: &Var<'g>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g>> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let bname = format!("{prefix}.bias");
        let b = if self.has(&bname) {
            Some(self.param(&bname)?)
        } else {
            None
        };
        x.conv2d(&w, b.as_ref(), stride, pad)
    }

    /// Spectrally normalized weight; in train mode one power iteration
    /// refreshes `sn_u`/`sn_v` first.
    pub fn sn_weight(&self, prefix: &str) -> Result<Var<'g>> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let (uname, vname) = (format!("{prefix}.sn_u"), format!("{prefix}.sn_v"));
        let u = self.buffer(&uname)?;
        let (u, v) = match self.mode {
            Mode::Train => {
                let it = spectral::power_iterate(&w.value(), u.data(), 1)?;
                self.record(&uname, Tensor::from_vec(&[it.u.len()], it.u.clone())?);
                self.record(&vname, Tensor::from_vec(&[it.v.len()], it.v.clone())?);
                (it.u, it.v)
            }
            Mode::Eval => (u.data().to_vec(), self.buffer(&vname)?.data().to_vec()),
        };
        w.spectral_normalize(&u, &v)
    }

    pub fn sn_conv2d(&self, x: &Var<'g>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g>> {
        let w = self.sn_weight(prefix)?;
        let bname = format!("{prefix}.bias");
        let b = if self.has(&bname) {
            Some(self.param(&bname)?)
        } else {
            None
        };
        x.conv2d(&w, b.as_ref(), stride, pad)
    }

    pub fn batch_norm(&self, x: &Var<'g>, prefix: &str) -> Result<Var<'g>> {
        let gamma = self.param(&format!("{prefix}.weight"))?;
        let beta = self.param(&format!("{prefix}.bias"))?;
        let (mname, vname) = (format!("{prefix}.running_mean"), format!("{prefix}.running_var"));
        let rm = self.buffer(&mname)?;
        let rv = self.buffer(&vname)?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(&gamma, &beta)?;
                let mut m = rm.as_ref().clone();
                let mut v = rv.as_ref().clone();
                stats.fold_into(m.data_mut(), v.data_mut());
                self.record(&mname, m);
                self.record(&vname, v);
                Ok(y)
            }
            Mode::Eval => x.batch_norm_eval(&gamma, &beta, rm.data(), rv.data()),
        }
    }

    pub fn prelu(&self, x: &Var<'g>, prefix: &str) -> Result<Var<'g>> {
        let a = self.param(&format!("{prefix}.weight"))?;
        x.prelu(&a)
    }

    pub fn dense(&self, x: &Var<'g>, prefix: &str) -> Result<Var<'g>> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        x.dense(&w, Some(&b))
    }
}
