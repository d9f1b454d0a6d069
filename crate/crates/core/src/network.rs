//! The fixed VGG-style stack: a stem convolution, BN-ReLU-conv blocks
//! interleaved with 2x2 max pools, global average pooling, and a final
//! bias-free dense layer. Building from a layer list keeps the canonical
//! architecture and small desk-scale variants on the same code path.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Float;

pub const BN_EPS: f64 = 1e-5;
/// new_running = (1 - momentum) * old + momentum * batch
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize },
    BnReluConv { in_ch: usize, out_ch: usize },
    MaxPool,
    GlobalAvgPool,
    Dense { in_features: usize, out: usize },
}

/// The layer list matching the published architecture table row for row.
pub fn canonical_spec(num_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv { in_ch: 1, out_ch: 32 },
        BnReluConv { in_ch: 32, out_ch: 32 },
        MaxPool,
        BnReluConv { in_ch: 32, out_ch: 64 },
        BnReluConv { in_ch: 64, out_ch: 64 },
        MaxPool,
        BnReluConv { in_ch: 64, out_ch: 128 },
        BnReluConv { in_ch: 128, out_ch: 128 },
        MaxPool,
        BnReluConv { in_ch: 128, out_ch: 128 },
        BnReluConv { in_ch: 128, out_ch: 128 },
        MaxPool,
        BnReluConv { in_ch: 128, out_ch: 128 },
        BnReluConv { in_ch: 128, out_ch: 128 },
        GlobalAvgPool,
        Dense { in_features: 128, out: num_classes },
    ]
}

/// Segment boundaries matching the table's row grouping, for the
/// per-segment parameter report: stem conv, each x1/x2 block group, dense.
pub fn canonical_segments() -> Vec<(usize, usize)> {
    // (start, end) layer index ranges into canonical_spec, parameter-bearing rows only
    vec![(0, 1), (1, 2), (3, 5), (6, 8), (9, 11), (12, 14), (15, 16)]
}

/// A narrow stack for fast desk-scale experiments; same topology, three
/// pool stages, 8/16/32 channels.
pub fn compact_spec(num_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv { in_ch: 1, out_ch: 8 },
        BnReluConv { in_ch: 8, out_ch: 8 },
        MaxPool,
        BnReluConv { in_ch: 8, out_ch: 16 },
        BnReluConv { in_ch: 16, out_ch: 16 },
        MaxPool,
        BnReluConv { in_ch: 16, out_ch: 32 },
        BnReluConv { in_ch: 32, out_ch: 32 },
        MaxPool,
        GlobalAvgPool,
        Dense { in_features: 32, out: num_classes },
    ]
}

/// Number of 2x2 pool stages in a spec; input H and W must be divisible
/// by 2^stages.
pub fn pool_stages(spec: &[LayerSpec]) -> usize {
    spec.iter().filter(|l| matches!(l, LayerSpec::MaxPool)).count()
}

#[derive(Debug)]
enum Layer<T> {
    Conv { weight: Tensor<T> },
    BnReluConv {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        weight: Tensor<T>,
    },
    MaxPool,
    GlobalAvgPool,
    Dense { weight: Tensor<T> },
}

/// Handle naming one trainable tensor inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug)]
pub struct Network<T> {
    spec: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    num_classes: usize,
}

fn fanin_uniform<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from(rng.random_range(-bound..bound)).unwrap())
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

impl<T: Float> Network<T> {
    /// Build from a layer list with fan-in-scaled uniform weight init,
    /// gamma = 1, beta = 0, running mean 0 / var 1, all drawn
    /// deterministically from the seed.
    pub fn from_spec(spec: Vec<LayerSpec>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.len());
        let mut num_classes = 0;
        for l in &spec {
            layers.push(match *l {
                LayerSpec::Conv { in_ch, out_ch } => Layer::Conv {
                    weight: fanin_uniform(&mut rng, &[out_ch, in_ch, 3, 3], in_ch * 9),
                },
                LayerSpec::BnReluConv { in_ch, out_ch } => Layer::BnReluConv {
                    gamma: Tensor::full(&[in_ch], T::one()),
                    beta: Tensor::zeros(&[in_ch]),
                    running_mean: vec![T::zero(); in_ch],
                    running_var: vec![T::one(); in_ch],
                    weight: fanin_uniform(&mut rng, &[out_ch, in_ch, 3, 3], in_ch * 9),
                },
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::Dense { in_features, out } => {
                    num_classes = out;
                    Layer::Dense { weight: fanin_uniform(&mut rng, &[in_features, out], in_features) }
                }
            });
        }
        Network { spec, layers, num_classes }
    }

    pub fn canonical(num_classes: usize, seed: u64) -> Self {
        Self::from_spec(canonical_spec(num_classes), seed)
    }

    pub fn spec(&self) -> &[LayerSpec] {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sum of element counts of all trainable tensors; BN running stats
    /// are not trainable and are excluded.
    pub fn count_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weight } | Layer::Dense { weight } => weight.len(),
                Layer::BnReluConv { gamma, beta, weight, .. } => {
                    gamma.len() + beta.len() + weight.len()
                }
                Layer::MaxPool | Layer::GlobalAvgPool => 0,
            })
            .sum()
    }

    /// Trainable parameter count of one layer (0 for pools).
    pub fn layer_parameters(&self, idx: usize) -> usize {
        match &self.layers[idx] {
            Layer::Conv { weight } | Layer::Dense { weight } => weight.len(),
            Layer::BnReluConv { gamma, beta, weight, .. } => gamma.len() + beta.len() + weight.len(),
            Layer::MaxPool | Layer::GlobalAvgPool => 0,
        }
    }

    /// Handles for every trainable tensor, in fixed layer order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        let mut next = 0;
        for l in &self.layers {
            let n = match l {
                Layer::Conv { .. } | Layer::Dense { .. } => 1,
                Layer::BnReluConv { .. } => 3,
                _ => 0,
            };
            for _ in 0..n {
                ids.push(ParamId(next));
                next += 1;
            }
        }
        ids
    }

    fn param_slot(&self, id: ParamId) -> (&Tensor<T>, &'static str) {
        let mut n = 0;
        for (li, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv { weight } | Layer::Dense { weight } => {
                    if n == id.0 {
                        return (weight, if li == 0 { "conv.weight" } else { "dense.weight" });
                    }
                    n += 1;
                }
                Layer::BnReluConv { gamma, beta, weight, .. } => {
                    for (t, name) in [(gamma, "bn.gamma"), (beta, "bn.beta"), (weight, "conv.weight")] {
                        if n == id.0 {
                            return (t, name);
                        }
                        n += 1;
                    }
                }
                _ => {}
            }
        }
        unreachable!("bad ParamId")
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        self.param_slot(id).0
    }

    pub fn param_name(&self, id: ParamId) -> &'static str {
        self.param_slot(id).1
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        let mut n = 0;
        for l in self.layers.iter_mut() {
            match l {
                Layer::Conv { weight } | Layer::Dense { weight } => {
                    if n == id.0 {
                        return weight;
                    }
                    n += 1;
                }
                Layer::BnReluConv { gamma, beta, weight, .. } => {
                    for t in [gamma, beta, weight] {
                        if n == id.0 {
                            return t;
                        }
                        n += 1;
                    }
                }
                _ => {}
            }
        }
        unreachable!("bad ParamId")
    }

    /// BN running statistics per BnReluConv layer, in layer order.
    pub fn running_stats(&self) -> Vec<(&[T], &[T])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BnReluConv { running_mean, running_var, .. } => {
                    Some((running_mean.as_slice(), running_var.as_slice()))
                }
                _ => None,
            })
            .collect()
    }

    pub fn set_running_stats(&mut self, stats: &[(Vec<T>, Vec<T>)]) -> Result<()> {
        let mut it = stats.iter();
        for l in self.layers.iter_mut() {
            if let Layer::BnReluConv { running_mean, running_var, .. } = l {
                let (m, v) = it.next().ok_or(Error::Invalid("too few BN stat pairs".into()))?;
                if m.len() != running_mean.len() || v.len() != running_var.len() {
                    return Err(Error::Invalid("BN stat length mismatch".into()));
                }
                running_mean.copy_from_slice(m);
                running_var.copy_from_slice(v);
            }
        }
        if it.next().is_some() {
            return Err(Error::Invalid("too many BN stat pairs".into()));
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let stages = pool_stages(&self.spec);
        let div = 1usize << stages;
        let ok = shape.len() == 4
            && shape[1] == 1
            && shape[2] % div == 0
            && shape[3] % div == 0
            && shape[2] >= div
            && shape[3] >= div;
        if !ok {
            return Err(Error::BadShape { context: "network input must be [B,1,H,W] with H,W divisible by the pool factor", shape: shape.to_vec() });
        }
        Ok(())
    }

    /// Train-mode forward: records the autodiff graph on `tape`, updates BN
    /// running statistics, and returns the logits plus the tape handle of
    /// every trainable parameter (registered once per call, first call wins
    /// when invoked repeatedly on one tape).
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        params: &mut ParamBinding,
    ) -> Result<Var> {
        self.check_input(input.shape())?;
        let eps = T::from(BN_EPS).unwrap();
        let momentum = T::from(BN_MOMENTUM).unwrap();
        let keep = T::one() - momentum;
        let mut x = tape.leaf(input, false);
        let mut pid = 0;
        let bind = |tape: &mut Tape<T>, binding: &mut ParamBinding, t: &Tensor<T>, pid: usize| -> Var {
            if let Some(v) = binding.vars.get(&pid).copied() {
                v
            } else {
                let v = tape.leaf(t.clone(), true);
                binding.vars.insert(pid, v);
                v
            }
        };
        for l in self.layers.iter_mut() {
            match l {
                Layer::Conv { weight } => {
                    let w = bind(tape, params, weight, pid);
                    pid += 1;
                    x = tape.conv2d(x, w)?;
                }
                Layer::BnReluConv { gamma, beta, running_mean, running_var, weight } => {
                    let g = bind(tape, params, gamma, pid);
                    let b = bind(tape, params, beta, pid + 1);
                    let w = bind(tape, params, weight, pid + 2);
                    pid += 3;
                    let bn = tape.batch_norm(x, g, b, eps)?;
                    // running-stat EMA from the batch statistics just computed
                    let (bm, bv) = tape.bn_batch_stats(bn).expect("bn node");
                    for (r, &m) in running_mean.iter_mut().zip(bm.iter()) {
                        *r = keep * *r + momentum * m;
                    }
                    for (r, &v) in running_var.iter_mut().zip(bv.iter()) {
                        *r = keep * *r + momentum * v;
                    }
                    let a = tape.relu(bn);
                    x = tape.conv2d(a, w)?;
                }
                Layer::MaxPool => x = tape.max_pool2(x)?,
                Layer::GlobalAvgPool => x = tape.global_avg_pool(x)?,
                Layer::Dense { weight } => {
                    let w = bind(tape, params, weight, pid);
                    pid += 1;
                    x = tape.dense(x, w)?;
                }
            }
        }
        Ok(x)
    }

    /// Eval-mode forward: pure function, BN uses running statistics,
    /// nothing is recorded or mutated.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let eps = T::from(BN_EPS).unwrap();
        let mut x = input.clone();
        for l in &self.layers {
            match l {
                Layer::Conv { weight } => x = k::conv2d_forward(&x, weight)?,
                Layer::BnReluConv { gamma, beta, running_mean, running_var, weight } => {
                    let bn = k::bn_forward_eval(&x, gamma, beta, running_mean, running_var, eps)?;
                    let a = k::relu_forward(&bn);
                    x = k::conv2d_forward(&a, weight)?;
                }
                Layer::MaxPool => x = k::max_pool2_forward(&x)?.0,
                Layer::GlobalAvgPool => x = k::global_avg_pool_forward(&x)?,
                Layer::Dense { weight } => x = k::dense_forward(&x, weight)?,
            }
        }
        Ok(x)
    }

    /// Output shape after every layer for a [C=1,H,W] input, channel-first,
    /// spatial dims dropped once pooling collapses them.
    pub fn shape_trace(&self, h: usize, w: usize) -> Result<Vec<Vec<usize>>> {
        self.check_input(&[1, 1, h, w])?;
        let (mut h, mut w) = (h, w);
        let mut trace = Vec::new();
        for l in &self.spec {
            match *l {
                LayerSpec::Conv { out_ch, .. } | LayerSpec::BnReluConv { out_ch, .. } => {
                    trace.push(vec![out_ch, h, w]);
                }
                LayerSpec::MaxPool => {
                    h /= 2;
                    w /= 2;
                    let c = match trace.last() {
                        Some(s) => s[0],
                        None => 1,
                    };
                    trace.push(vec![c, h, w]);
                }
                LayerSpec::GlobalAvgPool => {
                    let c = trace.last().map(|s| s[0]).unwrap_or(1);
                    trace.push(vec![c]);
                }
                LayerSpec::Dense { out, .. } => trace.push(vec![out]),
            }
        }
        Ok(trace)
    }

    pub fn cast<U: Float>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            num_classes: self.num_classes,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv { weight } => Layer::Conv { weight: weight.cast() },
                    Layer::BnReluConv { gamma, beta, running_mean, running_var, weight } => {
                        Layer::BnReluConv {
                            gamma: gamma.cast(),
                            beta: beta.cast(),
                            running_mean: running_mean.iter().map(|&v| U::from(v).unwrap()).collect(),
                            running_var: running_var.iter().map(|&v| U::from(v).unwrap()).collect(),
                            weight: weight.cast(),
                        }
                    }
                    Layer::MaxPool => Layer::MaxPool,
                    Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                    Layer::Dense { weight } => Layer::Dense { weight: weight.cast() },
                })
                .collect(),
        }
    }
}

/// Maps ParamIds to tape Vars for one recorded step, so a labeled forward
/// and two unlabeled-view forwards on the same tape share parameters.
#[derive(Default)]
pub struct ParamBinding {
    vars: alloc::collections::BTreeMap<usize, Var>,
}

impl ParamBinding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape handle of a parameter, if it was bound during forward_train.
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars.get(&id.0).copied()
    }
}

// ParamId is constructed only by Network::param_ids, in the same order
// forward_train binds them, so the raw index is shared between the two.
impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_parameter_count() {
        let net = Network::<f32>::canonical(2, 0);
        assert_eq!(net.count_parameters(), 877_728);
        // 8-class variant: dense grows from 256 to 1024
        let net8 = Network::<f32>::canonical(8, 0);
        assert_eq!(net8.count_parameters(), 877_472 + 128 * 8);
    }

    #[test]
    fn canonical_segment_counts() {
        let net = Network::<f32>::canonical(2, 0);
        let expect = [288, 9_280, 55_488, 221_568, 295_424, 295_424, 256];
        for ((start, end), &want) in canonical_segments().into_iter().zip(expect.iter()) {
            let got: usize = (start..end).map(|i| net.layer_parameters(i)).sum();
            assert_eq!(got, want, "segment {start}..{end}");
        }
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        // bias-free convs, beta=0 BN, relu, pools and dense all map 0 to 0
        let net = Network::<f32>::canonical(2, 7);
        let out = net.forward_eval(&Tensor::zeros(&[1, 1, 32, 32])).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_pure_and_deterministic() {
        let net = Network::<f32>::canonical(2, 3);
        let x = Tensor::full(&[2, 1, 32, 32], 0.25f32);
        let a = net.forward_eval(&x).unwrap();
        let b = net.forward_eval(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Network::<f32>::canonical(2, 42);
        let b = Network::<f32>::canonical(2, 42);
        let c = Network::<f32>::canonical(2, 43);
        let ids = a.param_ids();
        assert!(ids.iter().all(|&id| a.param(id) == b.param(id)));
        assert!(ids.iter().any(|&id| a.param(id) != c.param(id)));
    }

    #[test]
    fn rejects_bad_input_shape() {
        let net = Network::<f32>::canonical(2, 0);
        assert!(net.forward_eval(&Tensor::zeros(&[1, 1, 30, 30])).is_err());
        assert!(net.forward_eval(&Tensor::zeros(&[1, 3, 32, 32])).is_err());
    }
}
