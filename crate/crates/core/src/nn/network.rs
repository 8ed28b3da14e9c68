use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Layer stack plus input shape and the index of the feature-tap layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tap_index: usize,
}

impl Architecture {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, tap_index: usize) -> Self {
        Architecture {
            input_shape,
            layers,
            tap_index,
        }
    }

    /// Per-sample output shape of every layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::arg("layers", "network needs at least one layer"));
        }
        if self.tap_index >= self.layers.len() {
            return Err(Error::arg(
                "tap_index",
                format!("{} out of range for {} layers", self.tap_index, self.layers.len()),
            ));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for (i, spec) in self.layers.iter().enumerate() {
            cur = spec.output_shape(&cur).map_err(|detail| {
                if i == 0 {
                    Error::InvalidLayer {
                        index: 0,
                        layer: spec.to_string(),
                        detail: format!("{detail} (network input {:?})", self.input_shape),
                    }
                } else {
                    Error::IncompatibleLayers {
                        index: i - 1,
                        prev: self.layers[i - 1].to_string(),
                        next_index: i,
                        next: spec.to_string(),
                        detail,
                    }
                }
            })?;
            shapes.push(cur.clone());
        }
        if cur.len() != 1 {
            return Err(Error::InvalidLayer {
                index: self.layers.len() - 1,
                layer: self.layers[self.layers.len() - 1].to_string(),
                detail: format!("final layer must produce a flat logit vector, got {cur:?}"),
            });
        }
        Ok(shapes)
    }
}

/// Parameter initialization rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Every parameter (weights and biases) i.i.d. in `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// He-uniform weights `U(±sqrt(6/fan_in))`, zero biases.
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
    pub tap_index: usize,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Tensor<T>,
    pub outputs: Vec<Tensor<T>>,
    pub(crate) argmax: Vec<Option<Vec<u32>>>,
    pub tap_index: usize,
}

/// One gradient tensor per parameter tensor, grouped by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn init(arch: &Architecture, seed: u64, scheme: InitScheme) -> Result<Self> {
        let shapes = arch.shapes()?;
        if let InitScheme::Uniform { low, high } = scheme {
            if !(low <= high) || !low.is_finite() || !high.is_finite() {
                return Err(Error::arg("init", format!("bad interval [{low}, {high}]")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut in_shape = arch.input_shape.clone();
        for (spec, out_shape) in arch.layers.iter().zip(shapes) {
            let mut params = Vec::new();
            for (pi, shape) in spec.param_shapes().into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let (low, high) = match scheme {
                    InitScheme::Uniform { low, high } => (low, high),
                    InitScheme::Scaled if pi == 0 => {
                        let a = (6.0 / spec.fan_in() as f64).sqrt();
                        (-a, a)
                    }
                    InitScheme::Scaled => (0.0, 0.0),
                };
                let data = (0..n)
                    .map(|_| {
                        if low == high {
                            T::from_f64_lossy(low)
                        } else {
                            let u: f64 = rng.random();
                            T::from_f64_lossy(low + (high - low) * u)
                        }
                    })
                    .collect();
                params.push(Tensor::new(shape, data)?);
            }
            layers.push(Layer {
                spec: *spec,
                in_shape: in_shape.clone(),
                out_shape: out_shape.clone(),
                params,
            });
            in_shape = out_shape;
        }
        Ok(Network {
            input_shape: arch.input_shape.clone(),
            layers,
            tap_index: arch.tap_index,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.spec).collect(),
            tap_index: self.tap_index,
        }
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_shape[0])
    }

    /// Flattened dimensionality of the tap layer output.
    pub fn tap_dim(&self) -> usize {
        self.layers[self.tap_index].out_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                })
                .collect(),
            tap_index: self.tap_index,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![input.rows()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("forward input", &expected, input.shape()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.forward_through(input, self.layers.len() - 1)
    }

    /// Forward pass stopping after layer `last` (inclusive).
    pub fn forward_through(&self, input: &Tensor<T>, last: usize) -> Result<ForwardTrace<T>> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(last + 1);
        let mut argmax = Vec::with_capacity(last + 1);
        for layer in &self.layers[..=last] {
            let x = outputs.last().unwrap_or(input);
            let out = layer.forward(x);
            outputs.push(out.output);
            argmax.push(out.argmax);
        }
        Ok(ForwardTrace {
            input: input.clone(),
            outputs,
            argmax,
            tap_index: self.tap_index,
        })
    }

    /// Parameter gradients for upstream gradients injected at the logits and
    /// at the tap layer. Either may be omitted (treated as zero); with no
    /// tap gradient this is the plain classification gradient.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        logit_grad: Option<&Tensor<T>>,
        tapped_grad: Option<&Tensor<T>>,
    ) -> Result<GradientSet<T>> {
        let depth = trace.outputs.len();
        if depth == 0 || depth > self.layers.len() || trace.tap_index != self.tap_index {
            return Err(Error::arg("trace", "trace was not produced by this network"));
        }
        for (layer, out) in self.layers.iter().zip(&trace.outputs) {
            if out.shape()[1..] != layer.out_shape[..] {
                return Err(Error::shape("trace layer output", &layer.out_shape, &out.shape()[1..]));
            }
        }
        let m = trace.input.rows();
        if let Some(g) = logit_grad {
            if depth != self.layers.len() {
                return Err(Error::arg("logit_grad", "trace stops before the logits"));
            }
            let expected = [m, self.class_count()];
            if g.shape() != expected {
                return Err(Error::shape("logit gradient", &expected, g.shape()));
            }
        }
        if let Some(g) = tapped_grad {
            if self.tap_index >= depth {
                return Err(Error::arg("tapped_grad", "trace stops before the tap layer"));
            }
            let expected = [m, self.tap_dim()];
            if g.rows() != m || g.len() != m * self.tap_dim() {
                return Err(Error::shape("tapped gradient", &expected, g.shape()));
            }
        }

        let mut grads: Vec<Vec<Tensor<T>>> = self
            .layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        let mut upstream: Option<Tensor<T>> = if depth == self.layers.len() {
            logit_grad.cloned()
        } else {
            None
        };
        // Earliest layer that still needs a gradient flowing into it.
        let first_param = self
            .layers
            .iter()
            .position(|l| !l.params.is_empty())
            .unwrap_or(self.layers.len());
        for i in (0..depth).rev() {
            if i == self.tap_index {
                if let Some(tg) = tapped_grad {
                    let tg = Tensor::new(trace.outputs[i].shape().to_vec(), tg.data().to_vec())?;
                    match upstream.as_mut() {
                        Some(u) => u.axpy(T::one(), &tg)?,
                        None => upstream = Some(tg),
                    }
                }
            }
            let Some(g) = upstream.take() else { continue };
            if i < first_param {
                break;
            }
            let layer = &self.layers[i];
            let input = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let (gx, pg) = layer.backward(
                input,
                &trace.outputs[i],
                trace.argmax[i].as_deref(),
                &g,
                i > first_param,
            );
            if !pg.is_empty() {
                grads[i] = pg;
            }
            upstream = gx;
        }
        Ok(GradientSet { layers: grads })
    }
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Pre-softmax outputs `[m × K]`.
    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().expect("non-empty trace")
    }

    /// Flattened tap-layer output `[m × d]`.
    pub fn tapped(&self) -> Tensor<T> {
        self.outputs[self.tap_index].flatten_rows()
    }

    /// Flattened output of layer `index`.
    pub fn layer_output(&self, index: usize) -> Tensor<T> {
        self.outputs[index].flatten_rows()
    }

    /// Hash of every piecewise-linear branch taken (relu signs, max winners).
    /// Two traces with equal patterns lie in the same linear region.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (out, am) in self.outputs.iter().zip(&self.argmax) {
            if let Some(idx) = am {
                idx.hash(&mut h);
            } else {
                for v in out.data() {
                    (*v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten()
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(Tensor::is_finite)
    }
}
