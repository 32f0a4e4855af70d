//! Named parameters and the encoder-decoder blocks built from them.

use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::{Graph, Tensor};
use crate::{Error, Result};

/// Flat, name-indexed parameter storage. Registration order is the
/// canonical order for optimizer state and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, ArrayD<f64>)>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} registered twice"
        );
        self.entries.push((name.clone(), value));
        let id = ParamId(self.entries.len() - 1);
        self.index.insert(name, id.0);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.entries[id.0].1
    }

    pub fn by_index(&self, i: usize) -> (&str, &ArrayD<f64>) {
        (&self.entries[i].0, &self.entries[i].1)
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        &mut self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Replaces the value of an existing parameter; shapes must match.
    pub fn load(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if self.value(id).shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter {name}: shape {:?} cannot be loaded into {:?}",
                value.shape(),
                self.value(id).shape()
            )));
        }
        *self.value_mut(id) = value;
        Ok(())
    }
}

/// Standard normal sample via Box-Muller; rand's distributions stay out of
/// the dependency tree.
pub(crate) fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A 3x3 convolution layer: weight (OC, IC, 3, 3) and bias (OC).
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    /// He-normal initialization (std = sqrt(2 / fan_in)), zero bias.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Conv {
        let std = (2.0 / (in_ch * 9) as f64).sqrt();
        let weight = ArrayD::from_shape_fn(IxDyn(&[out_ch, in_ch, 3, 3]), |_| normal(rng) * std);
        Conv {
            weight: store.insert(format!("{name}.w"), weight),
            bias: store.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch]))),
            stride,
        }
    }

    /// All-zero initialization: the layer's output starts exactly at zero,
    /// which output heads use so the untrained model is the identity
    /// interpolator.
    pub fn init_zero(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Conv {
        Conv {
            weight: store.insert(
                format!("{name}.w"),
                ArrayD::zeros(IxDyn(&[out_ch, in_ch, 3, 3])),
            ),
            bias: store.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch]))),
            stride,
        }
    }

    pub fn apply(&self, g: &Graph, store: &ParamStore, x: Tensor) -> Tensor {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride)
    }
}

const LEAK: f64 = 0.1;

/// Encoder-decoder with skip connections. `widths[s]` is the channel count
/// at scale `s`; each scale past the first halves the resolution, so inputs
/// must be divisible by 2^(scales-1).
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    stem: Conv,
    down: Vec<(Conv, Conv)>,
    up: Vec<(Conv, Conv)>,
    head: Conv,
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: Vec<usize>,
}

impl EncoderDecoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        widths: &[usize],
    ) -> EncoderDecoder {
        assert!(!widths.is_empty());
        let stem = Conv::init(store, rng, &format!("{prefix}.stem"), in_channels, widths[0], 1);
        let mut down = Vec::new();
        for s in 1..widths.len() {
            let a = Conv::init(
                store,
                rng,
                &format!("{prefix}.down{s}.a"),
                widths[s - 1],
                widths[s],
                2,
            );
            let b = Conv::init(store, rng, &format!("{prefix}.down{s}.b"), widths[s], widths[s], 1);
            down.push((a, b));
        }
        let mut up = Vec::new();
        for s in (1..widths.len()).rev() {
            let a = Conv::init(
                store,
                rng,
                &format!("{prefix}.up{s}.a"),
                widths[s],
                widths[s - 1],
                1,
            );
            let b = Conv::init(
                store,
                rng,
                &format!("{prefix}.up{s}.b"),
                2 * widths[s - 1],
                widths[s - 1],
                1,
            );
            up.push((a, b));
        }
        let head = Conv::init_zero(store, &format!("{prefix}.head"), widths[0], out_channels, 1);
        EncoderDecoder {
            stem,
            down,
            up,
            head,
            in_channels,
            out_channels,
            widths: widths.to_vec(),
        }
    }

    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    /// The factor input resolutions must be divisible by.
    pub fn resolution_divisor(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let d = self.resolution_divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::invalid(format!(
                "resolution {h}x{w} not divisible by {d} (network has {} scales)",
                self.scales()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, g: &Graph, store: &ParamStore, x: Tensor) -> Tensor {
        let mut f = g.leaky_relu(self.stem.apply(g, store, x), LEAK);
        let mut skips = vec![f];
        for (a, b) in &self.down {
            f = g.leaky_relu(a.apply(g, store, f), LEAK);
            f = g.leaky_relu(b.apply(g, store, f), LEAK);
            skips.push(f);
        }
        for (i, (a, b)) in self.up.iter().enumerate() {
            let skip = skips[self.down.len() - 1 - i];
            f = g.upsample2x(f);
            f = g.leaky_relu(a.apply(g, store, f), LEAK);
            f = g.concat(&[f, skip]);
            f = g.leaky_relu(b.apply(g, store, f), LEAK);
        }
        self.head.apply(g, store, f)
    }
}
