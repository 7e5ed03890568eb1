//! Classifier architectures and their parameters.
//!
//! * [`ModelSpec::Mlp`]: flatten, ReLU hidden layers, linear head.
//! * [`ModelSpec::ConvRelu`]: two 4×4 convolutions (16 and 32 filters,
//!   stride 2, padding 1), a 100-unit fully connected layer and a linear
//!   head, all with ReLU. This stride/padding choice is the only place the
//!   convolution geometry is decided.
//! * [`ModelSpec::MiniResNet`]: a 3×3 stem and three two-convolution
//!   residual blocks (16, 32, 64 channels; the last two downsample), global
//!   average pooling and a linear head. No normalization layers.
//!
//! Weights use Kaiming-uniform fan-in initialization, biases start at zero.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile, CheckpointMeta, Precision};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Objective, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Conv2d, Scalar, Tensor};

/// Architecture and hyperparameters of a classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Mlp {
        /// `(channels, height, width)` of one input.
        input: [usize; 3],
        hidden: Vec<usize>,
        classes: usize,
    },
    ConvRelu {
        input: [usize; 3],
        filters: [usize; 2],
        kernel: usize,
        conv: Conv2d,
        hidden: usize,
        classes: usize,
    },
    MiniResNet {
        input: [usize; 3],
        widths: [usize; 3],
        classes: usize,
    },
}

const CONV_RELU_GEOMETRY: Conv2d = Conv2d {
    stride: 2,
    padding: 1,
};

impl ModelSpec {
    /// 784-100-10 MLP.
    pub fn mlp_mnist() -> Self {
        ModelSpec::Mlp {
            input: [1, 28, 28],
            hidden: vec![100],
            classes: 10,
        }
    }

    pub fn mlp(input: [usize; 3], hidden: Vec<usize>, classes: usize) -> Self {
        ModelSpec::Mlp {
            input,
            hidden,
            classes,
        }
    }

    /// The MNIST convolutional ReLU network.
    pub fn conv_relu_mnist() -> Self {
        Self::conv_relu([1, 28, 28], 10)
    }

    pub fn conv_relu(input: [usize; 3], classes: usize) -> Self {
        ModelSpec::ConvRelu {
            input,
            filters: [16, 32],
            kernel: 4,
            conv: CONV_RELU_GEOMETRY,
            hidden: 100,
            classes,
        }
    }

    pub fn mini_resnet(input: [usize; 3], classes: usize) -> Self {
        ModelSpec::MiniResNet {
            input,
            widths: [16, 32, 64],
            classes,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ModelSpec::Mlp { input, .. }
            | ModelSpec::ConvRelu { input, .. }
            | ModelSpec::MiniResNet { input, .. } => *input,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Mlp { classes, .. }
            | ModelSpec::ConvRelu { classes, .. }
            | ModelSpec::MiniResNet { classes, .. } => *classes,
        }
    }

    /// Short identifier, e.g. `conv-relu`.
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::ConvRelu { .. } => "conv-relu",
            ModelSpec::MiniResNet { .. } => "mini-resnet",
        }
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        match self {
            ModelSpec::Mlp {
                input,
                hidden,
                classes,
            } => {
                let mut fan_in: usize = input.iter().product();
                for (i, &h) in hidden.iter().chain(std::iter::once(classes)).enumerate() {
                    out.push((format!("fc{i}.weight"), vec![h, fan_in]));
                    out.push((format!("fc{i}.bias"), vec![h]));
                    fan_in = h;
                }
            }
            ModelSpec::ConvRelu {
                input,
                filters,
                kernel,
                conv,
                hidden,
                classes,
            } => {
                let [c, h, w] = *input;
                let (h1, w1) = conv.output_hw((h, w), (*kernel, *kernel))?;
                let (h2, w2) = conv.output_hw((h1, w1), (*kernel, *kernel))?;
                out.push(("conv0.weight".into(), vec![filters[0], c, *kernel, *kernel]));
                out.push(("conv0.bias".into(), vec![filters[0]]));
                out.push((
                    "conv1.weight".into(),
                    vec![filters[1], filters[0], *kernel, *kernel],
                ));
                out.push(("conv1.bias".into(), vec![filters[1]]));
                out.push(("fc0.weight".into(), vec![*hidden, filters[1] * h2 * w2]));
                out.push(("fc0.bias".into(), vec![*hidden]));
                out.push(("fc1.weight".into(), vec![*classes, *hidden]));
                out.push(("fc1.bias".into(), vec![*classes]));
            }
            ModelSpec::MiniResNet {
                input,
                widths,
                classes,
            } => {
                let c = input[0];
                out.push(("stem.weight".into(), vec![widths[0], c, 3, 3]));
                out.push(("stem.bias".into(), vec![widths[0]]));
                let mut cin = widths[0];
                for (b, &w) in widths.iter().enumerate() {
                    out.push((format!("block{b}.conv0.weight"), vec![w, cin, 3, 3]));
                    out.push((format!("block{b}.conv0.bias"), vec![w]));
                    out.push((format!("block{b}.conv1.weight"), vec![w, w, 3, 3]));
                    out.push((format!("block{b}.conv1.bias"), vec![w]));
                    if b > 0 || cin != w {
                        out.push((format!("block{b}.shortcut.weight"), vec![w, cin, 1, 1]));
                    }
                    cin = w;
                }
                out.push(("head.weight".into(), vec![*classes, cin]));
                out.push(("head.bias".into(), vec![*classes]));
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }

    /// Seeded Kaiming-uniform weights, zero biases.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ModelParams<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in self.param_shapes()? {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![T::zero(); n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ModelParams {
            names,
            tensors,
            seed,
        })
    }

    /// Records the forward pass and returns the logits node `(N, classes)`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        let expected = self.param_shapes()?;
        if params.len() != expected.len() {
            return Err(Error::Argument(format!(
                "{} expects {} parameter tensors, got {}",
                self.id(),
                expected.len(),
                params.len()
            )));
        }
        for (v, (name, shape)) in params.iter().zip(&expected) {
            if tape.value(*v).shape() != &shape[..] {
                return Err(Error::Argument(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    tape.value(*v).shape()
                )));
            }
        }
        let xs = tape.value(x).shape().to_vec();
        let input = self.input_shape();
        if xs.len() != 4 || xs[1..] != input[..] {
            return Err(Error::shape(self.id(), &xs, &input));
        }
        let mut layer = 0usize;
        let mut checked = |tape: &Tape<T>, v: Var| -> Result<Var> {
            layer += 1;
            tape.value(v)
                .check_finite(&format!("activation of layer {layer}"))?;
            Ok(v)
        };
        match self {
            ModelSpec::Mlp { hidden, .. } => {
                let mut h = tape.flatten(x)?;
                for i in 0..=hidden.len() {
                    let z = tape.linear(h, params[2 * i])?;
                    let z = tape.add_bias(z, params[2 * i + 1])?;
                    h = if i < hidden.len() { tape.relu(z) } else { z };
                    h = checked(tape, h)?;
                }
                Ok(h)
            }
            ModelSpec::ConvRelu { conv, .. } => {
                let mut h = x;
                for i in 0..2 {
                    let z = tape.conv2d(h, params[2 * i], *conv)?;
                    let z = tape.add_bias(z, params[2 * i + 1])?;
                    h = { let r = tape.relu(z); checked(tape, r) }?;
                }
                let h = tape.flatten(h)?;
                let z = tape.linear(h, params[4])?;
                let z = tape.add_bias(z, params[5])?;
                let h = { let r = tape.relu(z); checked(tape, r) }?;
                let z = tape.linear(h, params[6])?;
                let z = tape.add_bias(z, params[7])?;
                checked(tape, z)
            }
            ModelSpec::MiniResNet { widths, .. } => {
                let same = Conv2d::new(1, 1);
                let z = tape.conv2d(x, params[0], same)?;
                let z = tape.add_bias(z, params[1])?;
                let mut h = { let r = tape.relu(z); checked(tape, r) }?;
                let mut p = 2;
                let mut cin = widths[0];
                for (b, &w) in widths.iter().enumerate() {
                    let stride = if b == 0 { 1 } else { 2 };
                    let z = tape.conv2d(h, params[p], Conv2d::new(stride, 1))?;
                    let z = tape.add_bias(z, params[p + 1])?;
                    let a = tape.relu(z);
                    let z = tape.conv2d(a, params[p + 2], same)?;
                    let z = tape.add_bias(z, params[p + 3])?;
                    p += 4;
                    let skip = if b > 0 || cin != w {
                        let s = tape.conv2d(h, params[p], Conv2d::new(stride, 0))?;
                        p += 1;
                        s
                    } else {
                        h
                    };
                    let sum = tape.add(z, skip)?;
                    h = { let r = tape.relu(sum); checked(tape, r) }?;
                    cin = w;
                }
                let pooled = tape.global_avg_pool(h)?;
                let z = tape.linear(pooled, params[p])?;
                let z = tape.add_bias(z, params[p + 1])?;
                checked(tape, z)
            }
        }
    }

    /// Logits for a batch, without recording gradients.
    pub fn logits<T: Scalar>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pv: Vec<Var> = params
            .tensors
            .iter()
            .map(|p| tape.leaf(p.clone(), false))
            .collect();
        let xv = tape.leaf(x.clone(), false);
        let z = self.forward(&mut tape, &pv, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Arg-max class per example (first maximum on ties).
    pub fn predict<T: Scalar>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(params, x)?))
    }
}

impl Objective for ModelSpec {
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        labels: &[usize],
    ) -> Result<Var> {
        let z = self.forward(tape, params, x)?;
        tape.cross_entropy(z, labels)
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.example_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if v.primal() > row[best].primal() {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean softmax cross-entropy of `(N, K)` logits against labels.
pub fn loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::Argument(format!(
            "loss: logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        if y >= k {
            return Err(Error::Label { label: y, classes: k });
        }
        let m = row.iter().map(|v| v.primal()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v.primal() - m).exp()).sum::<f64>().ln();
        total += lse - row[y].primal();
    }
    Ok(total / labels.len() as f64)
}

/// Named parameter tensors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>, seed: u64) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Argument("parameter names and tensors differ in count".into()));
        }
        Ok(ModelParams {
            names,
            tensors,
            seed,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            seed: self.seed,
        }
    }
}
