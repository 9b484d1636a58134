use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Constant(f64),
}

/// Flat parameter vector with named slices and a gradient buffer of the
/// same length.
#[derive(Clone, Debug)]
pub struct ParamStore {
    tag: u64,
    values: Vec<f64>,
    grads: Vec<f64>,
    slices: Vec<ParamSlice>,
    rng: Option<(u64, u64)>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new(0)
    }
}

impl ParamStore {
    /// `seed` drives the initialization of every slice added later.
    pub fn new(seed: u64) -> Self {
        Self {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            values: Vec::new(),
            grads: Vec::new(),
            slices: Vec::new(),
            rng: Some((seed, 0)),
        }
    }

    pub(crate) fn from_parts(slices: Vec<ParamSlice>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            values,
            grads: vec![0.0; n],
            slices,
            rng: None,
        }
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> ParamId {
        let offset = self.values.len();
        let n = rows * cols;
        let (seed, stream) = self.rng.unwrap_or((0, 0));
        let mut rng = StreamRng::new(seed, stream);
        self.rng = Some((seed, stream + 1));
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.values.extend((0..n).map(|_| match init {
            Init::Zeros => 0.0,
            Init::Constant(c) => c,
            Init::Glorot => rng.uniform_in(-bound, bound),
        }));
        self.grads.extend(std::iter::repeat(0.0).take(n));
        self.slices.push(ParamSlice {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        ParamId(self.slices.len() - 1)
    }

    pub fn slice_info(&self, id: ParamId) -> &ParamSlice {
        &self.slices[id.0]
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let s = &self.slices[id.0];
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = &self.slices[id.0];
        let r = s.offset..s.offset + s.len();
        &mut self.values[r]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        let s = &self.slices[id.0];
        &self.grads[s.offset..s.offset + s.len()]
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = &self.slices[id.0];
        let r = s.offset..s.offset + s.len();
        &mut self.grads[r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale_grads(&mut self, f: f64) {
        self.grads.iter_mut().for_each(|g| *g *= f);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slices.iter().position(|s| s.name == name).map(ParamId)
    }
}
