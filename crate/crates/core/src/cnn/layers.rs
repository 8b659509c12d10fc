//! Layer kernels with their backward passes. Tensors are single samples laid
//! out as (channel, height, width).

use super::Tensor;
use crate::{Error, Result};

/// Log floor applied to probabilities before the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-15;

/// Convolution weights: `filters[f][c][ky][kx]` and one bias per filter.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayer<'a> {
    pub filters: &'a [f64],
    pub biases: &'a [f64],
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvLayer<'_> {
    pub fn out_channels(&self) -> usize {
        self.biases.len()
    }
}

/// Gradients of a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub filters: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Valid cross-correlation, stride 1.
pub fn conv2d(input: &Tensor, layer: &ConvLayer<'_>) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let k = layer.kernel;
    if c_in != layer.in_channels {
        return Err(Error::DimensionMismatch {
            expected: layer.in_channels,
            actual: c_in,
        });
    }
    if h < k || w < k {
        return Err(Error::InvalidConfig(format!(
            "input {h}x{w} smaller than {k}x{k} kernel"
        )));
    }
    let f_out = layer.out_channels();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let mut out = vec![0.0; f_out * oh * ow];
    for f in 0..f_out {
        let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = layer.biases[f]);
        for c in 0..c_in {
            let xin = &x[c * h * w..(c + 1) * h * w];
            let kern = &layer.filters[(f * c_in + c) * k * k..(f * c_in + c + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kern[ky * k + kx];
                    for y in 0..oh {
                        let src = &xin[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[f_out, oh, ow], out)
}

/// Backward pass of [`conv2d`]; the input gradient is computed only when
/// `need_input` is set.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer<'_>,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (c_in, h, w) = input.chw()?;
    let (f_out, oh, ow) = grad_out.chw()?;
    let k = layer.kernel;
    if f_out != layer.out_channels() || oh + k - 1 != h || ow + k - 1 != w {
        return Err(Error::DimensionMismatch {
            expected: layer.out_channels() * (h - k + 1) * (w - k + 1),
            actual: grad_out.len(),
        });
    }
    let x = input.data();
    let g = grad_out.data();
    let mut d_filters = vec![0.0; layer.filters.len()];
    let mut d_biases = vec![0.0; f_out];
    let mut d_input = need_input.then(|| vec![0.0; x.len()]);
    for f in 0..f_out {
        let gplane = &g[f * oh * ow..(f + 1) * oh * ow];
        d_biases[f] = gplane.iter().sum();
        for c in 0..c_in {
            let xin = &x[c * h * w..(c + 1) * h * w];
            let base = (f * c_in + c) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let src = &xin[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let gr = &gplane[y * ow..(y + 1) * ow];
                        acc += src.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_filters[base + ky * k + kx] = acc;
                    if let Some(dx) = d_input.as_mut() {
                        let wv = layer.filters[base + ky * k + kx];
                        let dplane = &mut dx[c * h * w..(c + 1) * h * w];
                        for y in 0..oh {
                            let gr = &gplane[y * ow..(y + 1) * ow];
                            let dst = &mut dplane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            for (d, gv) in dst.iter_mut().zip(gr) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: d_input
            .map(|d| Tensor::new(input.dims(), d))
            .transpose()?,
        filters: d_filters,
        biases: d_biases,
    })
}

pub fn relu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(t.dims(), data).expect("shape preserved")
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.dims() != grad_out.dims() {
        return Err(Error::DimensionMismatch {
            expected: input.len(),
            actual: grad_out.len(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(input.dims(), data)
}

/// Output of [`maxpool2`] with the flat input index chosen for each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2; ties resolve to the first cell in
/// row-major order.
pub fn maxpool2(t: &Tensor) -> Result<Pooled> {
    let (c, h, w) = t.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "2x2 pooling needs even dimensions, got {h}x{w}"
        )));
    }
    let (ph, pw) = (h / 2, w / 2);
    let x = t.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut argmax = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            for xo in 0..pw {
                let mut best_i = (ch * h + 2 * y) * w + 2 * xo;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * y + dy) * w + 2 * xo + dx;
                    if x[i] > best {
                        best = x[i];
                        best_i = i;
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[c, ph, pw], out)?,
        argmax,
    })
}

/// Routes each upstream gradient to the cell that won the max.
pub fn maxpool2_backward(input_dims: &[usize], pooled: &Pooled, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != pooled.argmax.len() {
        return Err(Error::DimensionMismatch {
            expected: pooled.argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut d = Tensor::zeros(input_dims);
    for (g, &i) in grad_out.data().iter().zip(&pooled.argmax) {
        d.data_mut()[i] += g;
    }
    Ok(d)
}

/// Dense layer: `logits_k = theta_k . x + b_k`, weights stored row per class.
pub fn dense(x: &[f64], weights: &[f64], biases: &[f64]) -> Result<Vec<f64>> {
    let classes = biases.len();
    if weights.len() != classes * x.len() {
        return Err(Error::DimensionMismatch {
            expected: classes * x.len(),
            actual: weights.len(),
        });
    }
    Ok((0..classes)
        .map(|k| {
            weights[k * x.len()..(k + 1) * x.len()]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + biases[k]
        })
        .collect())
}

/// Gradients of [`dense`]: (input, weights, biases).
pub fn dense_backward(x: &[f64], weights: &[f64], grad_logits: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut dx = vec![0.0; n];
    let mut dw = vec![0.0; weights.len()];
    for (k, g) in grad_logits.iter().enumerate() {
        let row = &weights[k * n..(k + 1) * n];
        for j in 0..n {
            dw[k * n + j] = g * x[j];
            dx[j] += g * row[j];
        }
    }
    (dx, dw, grad_logits.to_vec())
}

/// Max-subtracted softmax.
pub fn softmax_forward(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Summed cross-entropy `-sum_i sum_j t_ij ln y_ij` over a batch.
pub fn cross_entropy(probabilities: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    probabilities
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            y.iter()
                .zip(t)
                .filter(|(_, tj)| **tj != 0.0)
                .map(|(yj, tj)| -tj * yj.max(PROB_FLOOR).ln())
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn delta_filter_crops_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[1, 7, 9], &mut rng);
        let mut filt = vec![0.0; 25];
        filt[12] = 1.0;
        let layer = ConvLayer {
            filters: &filt,
            biases: &[0.0],
            in_channels: 1,
            kernel: 5,
        };
        let y = conv2d(&x, &layer).unwrap();
        assert_eq!(y.dims(), &[1, 3, 5]);
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(y.at3(0, r, c), x.at3(0, r + 2, c + 2));
            }
        }
    }

    #[test]
    fn ones_filter_on_constant() {
        let x = Tensor::new(&[1, 6, 6], vec![0.7; 36]).unwrap();
        let filt = vec![1.0; 25];
        let layer = ConvLayer {
            filters: &filt,
            biases: &[0.0],
            in_channels: 1,
            kernel: 5,
        };
        let y = conv2d(&x, &layer).unwrap();
        for v in y.data() {
            assert!((v - 25.0 * 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_small_input() {
        let x = Tensor::zeros(&[1, 4, 9]);
        let f = vec![0.0; 25];
        let layer = ConvLayer {
            filters: &f,
            biases: &[0.0],
            in_channels: 1,
            kernel: 5,
        };
        assert!(conv2d(&x, &layer).is_err());
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::new(&[4], vec![-1.0, -0.5, -3.0, -1e-9]).unwrap();
        assert!(relu(&neg).data().iter().all(|v| *v == 0.0));
        let pos = Tensor::new(&[3], vec![0.0, 1.0, 2.5]).unwrap();
        assert_eq!(relu(&pos), pos);
        let g = Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&pos, &g).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn pooling_cases() {
        let c = Tensor::new(&[1, 4, 6], vec![2.0; 24]).unwrap();
        let p = maxpool2(&c).unwrap();
        assert_eq!(p.output.dims(), &[1, 2, 3]);
        assert!(p.output.data().iter().all(|v| *v == 2.0));
        // Ties resolve to the first cell of each block.
        assert_eq!(p.argmax[0], 0);

        let b = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2(&b).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        let g = maxpool2_backward(&[1, 2, 2], &p, &Tensor::new(&[1, 1, 1], vec![0.7]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 0.7]);

        assert!(maxpool2(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax_forward(&[0.3, 0.3]), vec![0.5, 0.5]);
        let p = softmax_forward(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax_forward(&[0.1, -2.0, 5.0]);
        let b = softmax_forward(&[1000.1, 998.0, 1005.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(cross_entropy(&t, &t), 0.0);
        let n = 7;
        let uni = vec![vec![0.5, 0.5]; n];
        let tgt: Vec<Vec<f64>> = (0..n).map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        assert!((cross_entropy(&uni, &tgt) - n as f64 * 2f64.ln()).abs() < 1e-12);
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        let tg = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let fwd = cross_entropy(&probs, &tg);
        let mut rp = probs.clone();
        let mut rt = tg.clone();
        rp.reverse();
        rt.reverse();
        assert!((fwd - cross_entropy(&rp, &rt)).abs() < 1e-15);
        assert!(cross_entropy(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]]).is_finite());
    }
}
