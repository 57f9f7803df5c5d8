use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{
    conv2d_backward_impl, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, flatten, maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
    softmax, softmax_cross_entropy,
};
use super::{NnError, Tensor};

/// Class labels of the spoken-digit classifier, in output order.
pub const DIGIT_LABELS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Model input shape for the default front-end: one channel, 98 frames x 257 bins.
pub const INPUT_SHAPE: [usize; 3] = [1, 98, 257];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv2D {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    MaxPool2D {
        pool: usize,
    },
    ReLU,
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    /// Terminal probability head; must be the last layer if present.
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool2D { .. } => "MaxPool2D",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Softmax => "Softmax",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. })
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn parameter_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kernel,
            } => Some((vec![out_ch, in_ch, kernel, kernel], vec![out_ch])),
            LayerSpec::Dense { in_dim, out_dim } => Some((vec![out_dim, in_dim], vec![out_dim])),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        let ok = match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kernel,
            } => in_ch > 0 && out_ch > 0 && kernel > 0,
            LayerSpec::MaxPool2D { pool } => pool > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            LayerSpec::Dense { in_dim, out_dim } => in_dim > 0 && out_dim > 0,
            LayerSpec::ReLU | LayerSpec::Flatten | LayerSpec::Softmax => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidLayer(format!("invalid layer spec {self:?}")))
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = || {
            NnError::ShapeMismatch(format!(
                "{} cannot accept input of shape {input:?}",
                self.kind_name()
            ))
        };
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kernel,
            } => match *input {
                [c, h, w] if c == in_ch && h >= kernel && w >= kernel => {
                    Ok(vec![out_ch, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(mismatch()),
            },
            LayerSpec::MaxPool2D { pool } => match *input {
                [c, h, w] if h >= pool && w >= pool => Ok(vec![c, h / pool, w / pool]),
                _ => Err(mismatch()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { in_dim, out_dim } => {
                if input.iter().product::<usize>() == in_dim {
                    Ok(vec![out_dim])
                } else {
                    Err(mismatch())
                }
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } | LayerSpec::Softmax => Ok(input.to_vec()),
        }
    }
}

/// A layer spec with its parameters (conv and dense only).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl Layer {
    pub fn parameter_count(&self) -> usize {
        self.weights.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// The default architecture: three conv blocks (16 filters 7x7, 16 filters
/// 5x5, 32 filters 3x3), each followed by ReLU and 2x2 max pooling, then a
/// 128-unit hidden layer with dropout and a 10-way output.
pub fn default_architecture() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2D { in_ch: 1, out_ch: 16, kernel: 7 },
        ReLU,
        MaxPool2D { pool: 2 },
        Conv2D { in_ch: 16, out_ch: 16, kernel: 5 },
        ReLU,
        MaxPool2D { pool: 2 },
        Conv2D { in_ch: 16, out_ch: 32, kernel: 3 },
        ReLU,
        MaxPool2D { pool: 2 },
        Flatten,
        Dropout { rate: 0.3 },
        Dense { in_dim: 32 * 9 * 29, out_dim: 128 },
        ReLU,
        Dropout { rate: 0.3 },
        Dense { in_dim: 128, out_dim: 10 },
        Softmax,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    class_labels: Vec<String>,
    input_shape: Vec<usize>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: Tensor,
    /// Output of every layer, in order. A terminal softmax layer's entry is the
    /// probability vector.
    pub outputs: Vec<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
    masks: Vec<Option<Vec<f32>>>,
    routes: Vec<Option<Vec<usize>>>,
}

impl ForwardPass {
    /// Post-activation maps of each conv block: the output of the ReLU that
    /// directly follows a conv layer (or the conv itself if none does).
    pub fn conv_block_outputs<'a>(&'a self, model: &Model) -> Vec<(usize, &'a Tensor)> {
        model
            .conv_block_taps()
            .into_iter()
            .map(|i| (i, &self.outputs[i]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameter gradients, congruent with the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    l.spec.parameter_shapes().map(|(w, b)| ParamGrads {
                        weights: Tensor::zeros(&w),
                        bias: Tensor::zeros(&b),
                    })
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::ShapeMismatch("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a.weights.shape() != b.weights.shape() || a.bias.shape() != b.bias.shape() {
                        return Err(NnError::ShapeMismatch("gradient shapes differ".into()));
                    }
                    for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                        *x += y;
                    }
                    for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                        *x += y;
                    }
                }
                (None, None) => {}
                _ => return Err(NnError::ShapeMismatch("gradient layouts differ".into())),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.data_mut().iter_mut().for_each(|v| *v *= factor);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
fn init_bound(spec: &LayerSpec) -> f32 {
    let (fan_in, fan_out) = match *spec {
        LayerSpec::Conv2D {
            in_ch,
            out_ch,
            kernel,
        } => (in_ch * kernel * kernel, out_ch * kernel * kernel),
        LayerSpec::Dense { in_dim, out_dim } => (in_dim, out_dim),
        _ => return 0.0,
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

impl Model {
    /// Builds a model with freshly initialized parameters: weights uniform in
    /// the Glorot bound, biases zero.
    pub fn new(
        specs: Vec<LayerSpec>,
        class_labels: Vec<String>,
        input_shape: Vec<usize>,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (weights, bias) = match spec.parameter_shapes() {
                    Some((ws, bs)) => {
                        let bound = init_bound(&spec);
                        let n = ws.iter().product();
                        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                        (Some(Tensor::new(ws, data)?), Some(Tensor::zeros(&bs)))
                    }
                    None => (None, None),
                };
                Ok(Layer {
                    spec,
                    weights,
                    bias,
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Self::from_layers(layers, class_labels, input_shape)
    }

    /// The default digit classifier with seeded initialization.
    pub fn default_digits(seed: u64) -> Self {
        Self::new(
            default_architecture(),
            DIGIT_LABELS.iter().map(|s| s.to_string()).collect(),
            INPUT_SHAPE.to_vec(),
            seed,
        )
        .expect("default architecture is consistent")
    }

    /// Assembles a model from explicit layers, checking that shapes compose and
    /// that the output width equals the number of class labels.
    pub fn from_layers(
        layers: Vec<Layer>,
        class_labels: Vec<String>,
        input_shape: Vec<usize>,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidLayer("model has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.spec.validate()?;
            if layer.spec == LayerSpec::Softmax && i + 1 != layers.len() {
                return Err(NnError::InvalidLayer("softmax must be the final layer".into()));
            }
            let expected = layer.spec.parameter_shapes();
            let actual = match (&layer.weights, &layer.bias) {
                (Some(w), Some(b)) => Some((w.shape().to_vec(), b.shape().to_vec())),
                (None, None) => None,
                _ => return Err(NnError::InvalidLayer(format!("layer {i} has partial parameters"))),
            };
            if expected != actual {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i} ({}) parameters {actual:?} do not match {expected:?}",
                    layer.spec.kind_name()
                )));
            }
            if let (Some(w), Some(b)) = (&layer.weights, &layer.bias) {
                w.check_finite("weights")?;
                b.check_finite("bias")?;
            }
        }
        let model = Self {
            layers,
            class_labels,
            input_shape,
        };
        let shapes = model.output_shapes()?;
        let out: usize = shapes.last().expect("non-empty").iter().product();
        if out != model.class_labels.len() {
            return Err(NnError::ShapeMismatch(format!(
                "model emits {out} outputs for {} class labels",
                model.class_labels.len()
            )));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Replaces one layer's parameters, keeping shapes fixed.
    pub fn set_parameters(&mut self, index: usize, weights: Tensor, bias: Tensor) -> Result<(), NnError> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| NnError::InvalidLayer(format!("no layer {index}")))?;
        let Some((ws, bs)) = layer.spec.parameter_shapes() else {
            return Err(NnError::InvalidLayer(format!("layer {index} has no parameters")));
        };
        if weights.shape() != ws || bias.shape() != bs {
            return Err(NnError::ShapeMismatch(format!(
                "layer {index} expects {ws:?}/{bs:?}"
            )));
        }
        weights.check_finite("weights")?;
        bias.check_finite("bias")?;
        layer.weights = Some(weights);
        layer.bias = Some(bias);
        Ok(())
    }

    /// Mutable flat views of every parameter tensor: weights then bias, per layer.
    pub(crate) fn parameter_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let (Some(w), Some(b)) = (&mut layer.weights, &mut layer.bias) {
                out.push(w.data_mut());
                out.push(b.data_mut());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Output shape of every layer for the model's input shape.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.spec.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Indices of the layers whose output is a conv block's post-activation map.
    pub fn conv_block_taps(&self) -> Vec<usize> {
        let mut taps = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Conv2D { .. } = layer.spec {
                let next_is_relu = self.layers.get(i + 1).map(|l| l.spec) == Some(LayerSpec::ReLU);
                taps.push(if next_is_relu { i + 1 } else { i });
            }
        }
        taps
    }

    /// Inference-mode forward pass (dropout is the identity).
    pub fn forward(&self, input: &Tensor) -> Result<ForwardPass, NnError> {
        self.run(input, None)
    }

    /// Training-mode forward pass; dropout masks are drawn from `rng`.
    pub fn forward_train(&self, input: &Tensor, rng: &mut dyn RngCore) -> Result<ForwardPass, NnError> {
        self.run(input, Some(rng))
    }

    fn run(&self, input: &Tensor, mut rng: Option<&mut dyn RngCore>) -> Result<ForwardPass, NnError> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NnError::ShapeMismatch(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        input.check_finite("model input")?;
        let n = self.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut masks = vec![None; n];
        let mut routes = vec![None; n];
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let y = match layer.spec {
                LayerSpec::Conv2D { .. } => conv2d_forward(
                    x,
                    layer.weights.as_ref().expect("validated"),
                    layer.bias.as_ref().expect("validated"),
                )?,
                LayerSpec::Dense { .. } => dense_forward(
                    x,
                    layer.weights.as_ref().expect("validated"),
                    layer.bias.as_ref().expect("validated"),
                )?,
                LayerSpec::MaxPool2D { pool } => {
                    let (y, r) = maxpool2d_forward(x, pool)?;
                    routes[i] = Some(r);
                    y
                }
                LayerSpec::ReLU => relu_forward(x),
                LayerSpec::Dropout { rate } => {
                    let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
                    let (y, m) = dropout_forward(x, rate, r)?;
                    masks[i] = m;
                    y
                }
                LayerSpec::Flatten => flatten(x),
                LayerSpec::Softmax => {
                    logits = Some(x.clone());
                    softmax(x)
                }
            };
            outputs.push(y);
        }
        let last = outputs.last().expect("non-empty").clone();
        let (logits, probs) = match logits {
            Some(l) => (l, last),
            None => {
                let p = softmax(&last);
                (last, p)
            }
        };
        logits.check_finite("logits")?;
        Ok(ForwardPass {
            input: input.clone(),
            outputs,
            logits,
            probs,
            masks,
            routes,
        })
    }

    /// Backpropagates `grad_logits` (gradient of the loss w.r.t. the logits)
    /// through the recorded pass.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<Gradients, NnError> {
        let n = self.layers.len();
        let mut grads = Gradients {
            layers: vec![None; n],
        };
        let mut end = n;
        if self.layers[n - 1].spec == LayerSpec::Softmax {
            end -= 1;
        }
        if grad_logits.shape() != pass.logits.shape() {
            return Err(NnError::ShapeMismatch("grad_logits does not match logits".into()));
        }
        let mut g = grad_logits.clone();
        for i in (0..end).rev() {
            let layer = &self.layers[i];
            let x = if i == 0 { &pass.input } else { &pass.outputs[i - 1] };
            g = match layer.spec {
                LayerSpec::Conv2D { .. } => {
                    let cg = conv2d_backward_impl(
                        x,
                        layer.weights.as_ref().expect("validated"),
                        &g,
                        i > 0,
                    )?;
                    grads.layers[i] = Some(ParamGrads {
                        weights: cg.weights,
                        bias: cg.bias,
                    });
                    match cg.input {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                LayerSpec::Dense { .. } => {
                    let dg = dense_backward(x, layer.weights.as_ref().expect("validated"), &g)?;
                    grads.layers[i] = Some(ParamGrads {
                        weights: dg.weights,
                        bias: dg.bias,
                    });
                    dg.input
                }
                LayerSpec::MaxPool2D { .. } => maxpool2d_backward(
                    &g,
                    pass.routes[i].as_deref().expect("pool routes recorded"),
                    x.shape(),
                )?,
                LayerSpec::ReLU => relu_backward(x, &g)?,
                LayerSpec::Dropout { .. } => dropout_backward(&g, pass.masks[i].as_deref())?,
                LayerSpec::Flatten => g.reshape(x.shape().to_vec())?,
                LayerSpec::Softmax => unreachable!("softmax only as the final layer"),
            };
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if grads.layers[i].is_none() {
                if let Some((w, b)) = layer.spec.parameter_shapes() {
                    grads.layers[i] = Some(ParamGrads {
                        weights: Tensor::zeros(&w),
                        bias: Tensor::zeros(&b),
                    });
                }
            }
        }
        Ok(grads)
    }

    /// One training example: forward in training mode, cross-entropy against
    /// `class`, backward. Returns `(loss, gradients)`.
    pub fn loss_and_gradients(
        &self,
        input: &Tensor,
        class: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Gradients), NnError> {
        let pass = self.forward_train(input, rng)?;
        let ce = softmax_cross_entropy(&pass.logits, class)?;
        let grads = self.backward(&pass, &ce.grad_logits)?;
        Ok((ce.loss, grads))
    }

    /// Class probabilities in inference mode.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.forward(input)?.probs)
    }
}
