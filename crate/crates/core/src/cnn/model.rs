use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d, conv2d_backward, cross_entropy, dense, dense_backward, maxpool2, maxpool2_backward,
    relu, relu_backward, softmax_forward, ConvLayer, Pooled,
};
use super::Tensor;
use crate::classic::Prediction;
use crate::dsp::{WaterfallPatch, PATCH_COLS, PATCH_SENSORS};
use crate::{Class, Error, Result};

pub const KERNEL: usize = 5;
pub const FILTERS: usize = 20;
pub const CLASSES: usize = 2;

/// Samples per gradient partial sum. Fixed so the reduction order does not
/// depend on the thread count.
const REDUCE_CHUNK: usize = 8;

/// Layer dimensions of the network: one conv block then a dense softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnShape {
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kernel: usize,
    pub classes: usize,
}

impl Default for CnnShape {
    fn default() -> Self {
        Self::new(PATCH_SENSORS, PATCH_COLS, FILTERS)
    }
}

impl CnnShape {
    pub fn new(in_h: usize, in_w: usize, filters: usize) -> Self {
        Self {
            in_h,
            in_w,
            filters,
            kernel: KERNEL,
            classes: CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate network shape {self:?}")));
        }
        if self.in_h < self.kernel || self.in_w < self.kernel {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} smaller than {}x{} kernel",
                self.in_h, self.in_w, self.kernel, self.kernel
            )));
        }
        let (ch, cw) = self.conv_dims();
        if ch % 2 != 0 || cw % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "conv output {ch}x{cw} cannot be pooled 2x2"
            )));
        }
        Ok(())
    }

    pub fn conv_dims(&self) -> (usize, usize) {
        (self.in_h + 1 - self.kernel, self.in_w + 1 - self.kernel)
    }

    pub fn pool_dims(&self) -> (usize, usize) {
        let (h, w) = self.conv_dims();
        (h / 2, w / 2)
    }

    /// Length of the flattened pooled feature map fed to the dense layer.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.pool_dims();
        self.filters * h * w
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w
    }

    /// Offsets of (conv biases, dense weights, dense biases, end).
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let cb = self.filters * self.kernel * self.kernel;
        let dw = cb + self.filters;
        let db = dw + self.classes * self.flat_len();
        (cb, dw, db, db + self.classes)
    }

    pub fn param_count(&self) -> usize {
        self.offsets().3
    }
}

/// Flat parameters in checkpoint order: filters `[f][ky][kx]`, conv biases,
/// dense weights `[class][feature]`, dense biases. The momentum buffer has the
/// same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub shape: CnnShape,
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub conv: Tensor,
    pub activated: Tensor,
    pub pooled: Pooled,
    pub probabilities: Vec<f64>,
}

impl CnnModel {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases, zero velocity.
    pub fn init(shape: CnnShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cb, dw, db, end) = shape.offsets();
        let mut params = vec![0.0; end];
        let b = 1.0 / ((shape.kernel * shape.kernel) as f64).sqrt();
        params[..cb].iter_mut().for_each(|w| *w = rng.gen_range(-b..b));
        let b = 1.0 / (shape.flat_len() as f64).sqrt();
        params[dw..db].iter_mut().for_each(|w| *w = rng.gen_range(-b..b));
        Ok(Self {
            shape,
            params,
            velocity: vec![0.0; end],
        })
    }

    /// All-zero parameters; every input maps to a uniform output.
    pub fn zeros(shape: CnnShape) -> Result<Self> {
        shape.validate()?;
        let n = shape.param_count();
        Ok(Self {
            shape,
            params: vec![0.0; n],
            velocity: vec![0.0; n],
        })
    }

    pub fn from_parts(shape: CnnShape, params: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        for v in [&params, &velocity] {
            if v.len() != shape.param_count() {
                return Err(Error::DimensionMismatch {
                    expected: shape.param_count(),
                    actual: v.len(),
                });
            }
        }
        Ok(Self {
            shape,
            params,
            velocity,
        })
    }

    fn conv_layer(&self) -> ConvLayer<'_> {
        let (cb, dw, _, _) = self.shape.offsets();
        ConvLayer {
            filters: &self.params[..cb],
            biases: &self.params[cb..dw],
            in_channels: 1,
            kernel: self.shape.kernel,
        }
    }

    fn dense_parts(&self) -> (&[f64], &[f64]) {
        let (_, dw, db, end) = self.shape.offsets();
        (&self.params[dw..db], &self.params[db..end])
    }

    pub fn forward(&self, pixels: &[f64]) -> Result<ForwardTrace> {
        if pixels.len() != self.shape.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_len(),
                actual: pixels.len(),
            });
        }
        let input = Tensor::new(&[1, self.shape.in_h, self.shape.in_w], pixels.to_vec())?;
        let conv = conv2d(&input, &self.conv_layer())?;
        let activated = relu(&conv);
        let pooled = maxpool2(&activated)?;
        let (w, b) = self.dense_parts();
        let logits = dense(pooled.output.data(), w, b)?;
        let probabilities = softmax_forward(&logits);
        Ok(ForwardTrace {
            input,
            conv,
            activated,
            pooled,
            probabilities,
        })
    }

    /// Class probabilities indexed by [`Class::index`].
    pub fn probabilities(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(pixels)?.probabilities)
    }

    /// Cross-entropy of one sample and its gradient over all parameters.
    pub fn sample_gradient(&self, pixels: &[f64], target: Class) -> Result<(f64, Vec<f64>)> {
        let f = self.forward(pixels)?;
        let mut t = vec![0.0; self.shape.classes];
        t[target.index()] = 1.0;
        let loss = cross_entropy(std::slice::from_ref(&f.probabilities), &[t.clone()]);
        let dlogits: Vec<f64> = f.probabilities.iter().zip(&t).map(|(y, t)| y - t).collect();

        let (w, _) = self.dense_parts();
        let (dflat, dw, db) = dense_backward(f.pooled.output.data(), w, &dlogits);
        let dpooled = Tensor::new(f.pooled.output.dims(), dflat)?;
        let dact = maxpool2_backward(f.activated.dims(), &f.pooled, &dpooled)?;
        let dconv = relu_backward(&f.conv, &dact)?;
        let cg = conv2d_backward(&f.input, &self.conv_layer(), &dconv, false)?;

        let mut grad = Vec::with_capacity(self.params.len());
        grad.extend_from_slice(&cg.filters);
        grad.extend_from_slice(&cg.biases);
        grad.extend_from_slice(&dw);
        grad.extend_from_slice(&db);
        Ok((loss, grad))
    }

    /// Summed loss and gradient over a batch. Per-sample work runs in
    /// parallel; partial sums are combined in a fixed order.
    pub fn batch_gradient(&self, batch: &[(&[f64], Class)]) -> Result<(f64, Vec<f64>)> {
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grad = vec![0.0; self.params.len()];
                for (x, t) in chunk {
                    let (l, g) = self.sample_gradient(x, *t)?;
                    loss += l;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }
}

/// Classifies one patch. The probability is the excavator component.
pub fn predict_image(model: &CnnModel, patch: &WaterfallPatch) -> Result<Prediction> {
    let px = &patch.pixels;
    if px.rows != model.shape.in_h || px.cols != model.shape.in_w {
        return Err(Error::DimensionMismatch {
            expected: model.shape.input_len(),
            actual: px.rows * px.cols,
        });
    }
    let p = model.probabilities(&px.data)?;
    let exc = p[Class::Excavator.index()];
    let other = p[Class::Other.index()];
    Ok(Prediction {
        label: if exc > other { Class::Excavator } else { Class::Other },
        probability: exc,
    })
}
