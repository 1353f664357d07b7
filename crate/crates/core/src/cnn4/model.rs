use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Cnn4Config;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, flatten, maxpool2d_backward,
    maxpool2d_forward, relu, relu_backward, softmax, ArgmaxMap, Conv2dLayer, DenseLayer,
    MaxPoolSpec, Padding, Tensor,
};

/// conv → ReLU → 2×2 max-pool blocks, then ReLU dense layers and a softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn4Model {
    config: Cnn4Config,
    convs: Vec<Conv2dLayer>,
    pool: MaxPoolSpec,
    hidden: Vec<DenseLayer>,
    head: DenseLayer,
}

/// Captured activations, in registry order.
pub type TapActivations = Vec<(String, Tensor)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCounts {
    pub layers: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterCounts {
    pub fn get(&self, name: &str) -> Option<usize> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tap {
    /// Output of the n-th (1-based) conv block, after its max-pool.
    ConvPooled(usize),
    /// Output of the n-th (1-based) hidden dense layer, after its ReLU.
    Dense(usize),
}

impl Tap {
    fn name(self) -> String {
        match self {
            Tap::ConvPooled(i) => format!("conv{i}_pooled"),
            Tap::Dense(i) => format!("dense{i}"),
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    conv_inputs: Vec<Tensor>,
    conv_pre: Vec<Tensor>,
    pool_maps: Vec<ArgmaxMap>,
    pooled_shape: Vec<usize>,
    dense_inputs: Vec<Tensor>,
    dense_pre: Vec<Tensor>,
    dropout_masks: Vec<Option<Vec<f32>>>,
    logits: Tensor,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }
}

/// Parameter gradients, ordered like [`Cnn4Model::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(model: &Cnn4Model) -> Self {
        Gradients(
            model
                .parameters()
                .into_iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
        )
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

impl Cnn4Model {
    /// Builds the network with He-normal weights and zero biases.
    pub fn build(config: Cnn4Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel;
        let mut c_in = config.input_shape[2];
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        for &c_out in &config.conv_channels {
            let kernel = he_normal(&[k, k, c_in, c_out], k * k * c_in, &mut rng);
            convs.push(Conv2dLayer::new(kernel, Tensor::zeros(&[c_out]), (1, 1), Padding::Same)?);
            c_in = c_out;
        }
        let pool = MaxPoolSpec::square(2);

        let (mut h, mut w) = (config.input_shape[0], config.input_shape[1]);
        for _ in &convs {
            [h, w, _] = pool.output_shape(h, w, 1)?;
        }
        let mut f_in = h * w * c_in;
        let mut hidden = Vec::with_capacity(config.dense_sizes.len());
        for &f_out in &config.dense_sizes {
            let weights = he_normal(&[f_in, f_out], f_in, &mut rng);
            hidden.push(DenseLayer::new(weights, Tensor::zeros(&[f_out]))?);
            f_in = f_out;
        }
        let head = DenseLayer::new(
            he_normal(&[f_in, config.num_classes], f_in, &mut rng),
            Tensor::zeros(&[config.num_classes]),
        )?;
        Ok(Cnn4Model {
            config,
            convs,
            pool,
            hidden,
            head,
        })
    }

    pub(crate) fn from_parts(config: Cnn4Config, convs: Vec<Conv2dLayer>, hidden: Vec<DenseLayer>, head: DenseLayer) -> Self {
        Cnn4Model {
            config,
            convs,
            pool: MaxPoolSpec::square(2),
            hidden,
            head,
        }
    }

    pub fn config(&self) -> &Cnn4Config {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub(crate) fn convs(&self) -> &[Conv2dLayer] {
        &self.convs
    }

    pub(crate) fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    /// All trainable tensors: each conv kernel and bias, then each dense
    /// weight matrix and bias (head last).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(c.kernel());
            out.push(c.bias());
        }
        for d in self.dense_layers() {
            out.push(d.weights());
            out.push(d.bias());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for c in &mut self.convs {
            let (k, b) = c.params_mut();
            out.push(k);
            out.push(b);
        }
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.head)) {
            let (w, b) = d.params_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    fn taps(&self) -> Vec<Tap> {
        (1..=self.convs.len())
            .map(Tap::ConvPooled)
            .chain((1..=self.hidden.len()).map(Tap::Dense))
            .collect()
    }

    /// Every tap this model exposes, in concatenation order.
    pub fn tap_names(&self) -> Vec<String> {
        self.taps().into_iter().map(Tap::name).collect()
    }

    /// The last conv block plus every hidden dense layer.
    pub fn default_taps(&self) -> Vec<String> {
        std::iter::once(Tap::ConvPooled(self.convs.len()))
            .chain((1..=self.hidden.len()).map(Tap::Dense))
            .map(Tap::name)
            .collect()
    }

    fn resolve_taps<S: AsRef<str>>(&self, requested: &[S]) -> Result<Vec<Tap>> {
        let all = self.taps();
        for r in requested {
            if !all.iter().any(|t| t.name() == r.as_ref()) {
                return Err(Error::UnknownTap(r.as_ref().to_string()));
            }
        }
        Ok(all
            .into_iter()
            .filter(|t| requested.iter().any(|r| r.as_ref() == t.name()))
            .collect())
    }

    /// Requested taps with their activation shapes, in registry order.
    pub fn tap_shapes<S: AsRef<str>>(&self, requested: &[S]) -> Result<Vec<(String, Vec<usize>)>> {
        let shapes = self.layer_shapes()?;
        self.resolve_taps(requested)?
            .into_iter()
            .map(|t| {
                let row = match t {
                    Tap::ConvPooled(i) => format!("pool{i}"),
                    Tap::Dense(i) => format!("dense{i}"),
                };
                let shape = shapes
                    .iter()
                    .find(|s| s.name == row)
                    .map(|s| s.shape.clone())
                    .expect("every tap has a layer row");
                Ok((t.name(), shape))
            })
            .collect()
    }

    /// Output shape of every layer, from the live parameter shapes.
    pub fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        let [mut h, mut w, c0] = self.config.input_shape;
        let mut rows = vec![LayerShape {
            name: "input".into(),
            shape: vec![h, w, c0],
        }];
        for (i, conv) in self.convs.iter().enumerate() {
            let [ch, cw, cc] = conv.output_shape(h, w)?;
            rows.push(LayerShape {
                name: format!("conv{}", i + 1),
                shape: vec![ch, cw, cc],
            });
            let [ph, pw, pc] = self.pool.output_shape(ch, cw, cc)?;
            rows.push(LayerShape {
                name: format!("pool{}", i + 1),
                shape: vec![ph, pw, pc],
            });
            (h, w) = (ph, pw);
        }
        for (i, d) in self.dense_layers().enumerate() {
            rows.push(LayerShape {
                name: format!("dense{}", i + 1),
                shape: vec![d.out_features()],
            });
        }
        Ok(rows)
    }

    /// Parameter count per layer, computed from the live tensors.
    pub fn count_parameters(&self) -> ParameterCounts {
        let mut layers = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            layers.push((format!("conv{}", i + 1), c.parameter_count()));
        }
        for (i, d) in self.dense_layers().enumerate() {
            layers.push((format!("dense{}", i + 1), d.parameter_count()));
        }
        let total = layers.iter().map(|(_, c)| c).sum();
        ParameterCounts { layers, total }
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.config.input_shape {
            return Err(Error::shape(self.config.input_shape, image.shape()));
        }
        Ok(())
    }

    /// Class probabilities plus the post-activation values at the requested
    /// taps (returned in registry order).
    pub fn forward_with_taps<S: AsRef<str>>(&self, image: &Tensor, taps: &[S]) -> Result<(Tensor, TapActivations)> {
        self.check_input(image)?;
        let wanted = self.resolve_taps(taps)?;
        let mut captured = Vec::with_capacity(wanted.len());
        let mut x = image.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let a = relu(&conv2d_forward(&x, conv)?);
            x = maxpool2d_forward(&a, &self.pool)?.0;
            if wanted.contains(&Tap::ConvPooled(i + 1)) {
                captured.push((Tap::ConvPooled(i + 1).name(), x.clone()));
            }
        }
        let mut v = flatten(&x);
        for (i, d) in self.hidden.iter().enumerate() {
            v = relu(&dense_forward(&v, d)?);
            if wanted.contains(&Tap::Dense(i + 1)) {
                captured.push((Tap::Dense(i + 1).name(), v.clone()));
            }
        }
        let probs = softmax(&dense_forward(&v, &self.head)?)?;
        Ok((probs, captured))
    }

    pub fn predict_proba(&self, image: &Tensor) -> Result<Tensor> {
        self.forward_with_taps::<&str>(image, &[]).map(|(p, _)| p)
    }

    /// Forward pass that records what [`Cnn4Model::backward`] needs. When
    /// `dropout` is given, inverted dropout is applied after each hidden ReLU.
    pub fn forward_trace<R: Rng>(&self, image: &Tensor, mut dropout: Option<(f32, &mut R)>) -> Result<ForwardTrace> {
        self.check_input(image)?;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_pre = Vec::with_capacity(self.convs.len());
        let mut pool_maps = Vec::with_capacity(self.convs.len());
        let mut x = image.clone();
        for conv in &self.convs {
            let z = conv2d_forward(&x, conv)?;
            let (pooled, map) = maxpool2d_forward(&relu(&z), &self.pool)?;
            conv_inputs.push(x);
            conv_pre.push(z);
            pool_maps.push(map);
            x = pooled;
        }
        let pooled_shape = x.shape().to_vec();
        let mut v = flatten(&x);
        let mut dense_inputs = Vec::with_capacity(self.hidden.len());
        let mut dense_pre = Vec::with_capacity(self.hidden.len());
        let mut dropout_masks = Vec::with_capacity(self.hidden.len());
        for d in &self.hidden {
            let z = dense_forward(&v, d)?;
            let mut a = relu(&z);
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let mask: Vec<f32> = (0..a.len())
                        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    a.data_mut().iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
                    Some(mask)
                }
                _ => None,
            };
            dense_inputs.push(v);
            dense_pre.push(z);
            dropout_masks.push(mask);
            v = a;
        }
        let logits = dense_forward(&v, &self.head)?;
        dense_inputs.push(v);
        Ok(ForwardTrace {
            conv_inputs,
            conv_pre,
            pool_maps,
            pooled_shape,
            dense_inputs,
            dense_pre,
            dropout_masks,
            logits,
        })
    }

    /// Backpropagates `grad_logits` (∂loss/∂logits) through a recorded pass.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<Gradients> {
        let n_hidden = self.hidden.len();
        let head_grads = dense_backward(&trace.dense_inputs[n_hidden], &self.head, grad_logits)?;
        let mut dense_grads = vec![(head_grads.weights, head_grads.bias)];
        let mut g = head_grads.input;
        for i in (0..n_hidden).rev() {
            if let Some(mask) = &trace.dropout_masks[i] {
                g.data_mut().iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
            }
            g = relu_backward(&trace.dense_pre[i], &g)?;
            let dg = dense_backward(&trace.dense_inputs[i], &self.hidden[i], &g)?;
            dense_grads.push((dg.weights, dg.bias));
            g = dg.input;
        }
        dense_grads.reverse();

        let mut g = g.reshape(trace.pooled_shape.clone())?;
        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for i in (0..self.convs.len()).rev() {
            let g_act = maxpool2d_backward(&trace.pool_maps[i], &g)?;
            let g_pre = relu_backward(&trace.conv_pre[i], &g_act)?;
            let cg = conv2d_backward(&trace.conv_inputs[i], &self.convs[i], &g_pre)?;
            conv_grads.push((cg.kernel, cg.bias));
            g = cg.input;
        }
        conv_grads.reverse();

        let mut out = Vec::with_capacity(2 * (conv_grads.len() + dense_grads.len()));
        for (a, b) in conv_grads.into_iter().chain(dense_grads) {
            out.push(a);
            out.push(b);
        }
        Ok(Gradients(out))
    }
}
