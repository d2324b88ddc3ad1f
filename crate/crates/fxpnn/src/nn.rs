//! The receiver network: dense(64, ReLU) → dense(32, ReLU) → dense(M),
//! with a float path for training and a bit-accurate fixed-point path for
//! deployment.
//!
//! The final layer has no bias and no softmax at inference; hard decisions
//! come from the pre-activation argmax. Parameters live in one flat vector
//! ordered layer by layer, weights (row-major, output × input) before
//! biases.

use crate::codebook::PowerOfTwoCodebook;
use crate::fxp::{FixedPointFormat, FxpContext, FxpError, FxpValue};
use rand::Rng;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input length {got} does not match input dimension {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("parameter vector length {got} does not match architecture ({expected})")]
    ParamLength { got: usize, expected: usize },
    #[error("weight at layer {layer}, row {row}, col {col} is {value}, not in the codebook")]
    WeightOffCodebook {
        layer: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("bias at layer {layer}, index {index} is {value}, not on the fixed-point grid")]
    BiasOffGrid {
        layer: usize,
        index: usize,
        value: f64,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Fxp(#[from] FxpError),
}

/// Layer sizes and bias pattern of a dense stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    bias_flags: Vec<bool>,
}

/// Location of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Range<usize>,
    pub bias: Option<Range<usize>>,
}

impl MlpArchitecture {
    /// The receiver stack for `m` messages over `n` complex channel uses:
    /// 2n inputs, hidden layers of 64 and 32 units with ReLU, m outputs.
    /// All layers but the last carry biases.
    pub fn receiver(m: usize, n: usize) -> Self {
        Self {
            input_dim: 2 * n,
            hidden: vec![64, 32],
            output_dim: m,
            bias_flags: vec![true, true, false],
        }
    }

    /// A stack with the standard bias pattern: every layer biased except the
    /// last.
    pub fn with_hidden(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        let mut bias_flags = vec![true; hidden.len()];
        bias_flags.push(false);
        Self {
            input_dim,
            hidden,
            output_dim,
            bias_flags,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn bias_flags(&self) -> &[bool] {
        &self.bias_flags
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// (input, output) size of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.layer_count() + 1);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count `P`.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .zip(&self.bias_flags)
            .map(|(&(i, o), &b)| i * o + if b { o } else { 0 })
            .sum()
    }

    /// Flat-vector layout, layer by layer.
    pub fn layer_spans(&self) -> Vec<LayerSpan> {
        let mut spans = Vec::with_capacity(self.layer_count());
        let mut offset = 0;
        for (&(input_dim, output_dim), &biased) in self.layer_dims().iter().zip(&self.bias_flags) {
            let weights = offset..offset + input_dim * output_dim;
            offset = weights.end;
            let bias = biased.then(|| {
                let r = offset..offset + output_dim;
                offset = r.end;
                r
            });
            spans.push(LayerSpan {
                input_dim,
                output_dim,
                weights,
                bias,
            });
        }
        spans
    }
}

/// Maps `n` complex samples, given as (re, im) pairs, to `2n` interleaved
/// reals: `[re_1, im_1, ..., re_n, im_n]`.
pub fn c2r(symbols: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * symbols.len());
    for &(re, im) in symbols {
        out.push(re);
        out.push(im);
    }
    out
}

/// The float receiver model: architecture plus flat parameter vector ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArchitecture,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn new(arch: MlpArchitecture, params: Vec<f64>) -> Result<Self, NnError> {
        let expected = arch.param_count();
        if params.len() != expected {
            return Err(NnError::ParamLength {
                got: params.len(),
                expected,
            });
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    /// Glorot-uniform weight initialization with zero biases.
    pub fn glorot_init<R: Rng>(arch: MlpArchitecture, rng: &mut R) -> Self {
        let mut params = vec![0.0; arch.param_count()];
        for span in arch.layer_spans() {
            let limit = (6.0 / (span.input_dim + span.output_dim) as f64).sqrt();
            for w in &mut params[span.weights] {
                *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
            }
        }
        Self { arch, params }
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forward pass producing the `M` pre-activation logits.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.arch.input_dim {
            return Err(NnError::InputLength {
                got: x.len(),
                expected: self.arch.input_dim,
            });
        }
        let spans = self.arch.layer_spans();
        let last = spans.len() - 1;
        let mut activation = x.to_vec();
        for (l, span) in spans.iter().enumerate() {
            let mut next = vec![0.0; span.output_dim];
            dense_forward(&self.params, span, &activation, &mut next);
            if l < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activation = next;
        }
        Ok(activation)
    }

    /// Mean categorical cross-entropy over a batch and its exact gradient
    /// with respect to the flat parameter vector.
    ///
    /// `inputs` is row-major, `labels.len()` rows of `input_dim` values.
    pub fn loss_and_gradient(
        &self,
        inputs: &[f64],
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>), NnError> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_and_gradient_into(inputs, labels, &mut grad)?;
        Ok((loss, grad))
    }

    /// As [`Self::loss_and_gradient`], writing the gradient into a caller
    /// buffer.
    pub fn loss_and_gradient_into(
        &self,
        inputs: &[f64],
        labels: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, NnError> {
        let batch = labels.len();
        if batch == 0 {
            return Err(NnError::EmptyBatch);
        }
        let input_dim = self.arch.input_dim;
        if inputs.len() != batch * input_dim {
            return Err(NnError::InputLength {
                got: inputs.len(),
                expected: batch * input_dim,
            });
        }
        if grad.len() != self.params.len() {
            return Err(NnError::ParamLength {
                got: grad.len(),
                expected: self.params.len(),
            });
        }
        let classes = self.arch.output_dim;
        for &label in labels {
            if label >= classes {
                return Err(NnError::LabelOutOfRange { label, classes });
            }
        }
        grad.fill(0.0);
        let spans = self.arch.layer_spans();
        let last = spans.len() - 1;
        // Per-sample activation storage, reused across the batch.
        let mut acts: Vec<Vec<f64>> = spans.iter().map(|s| vec![0.0; s.output_dim]).collect();
        let mut deltas: Vec<Vec<f64>> = acts.clone();
        let mut loss = 0.0;
        let inv_batch = 1.0 / batch as f64;

        for (sample, &label) in labels.iter().enumerate() {
            let x = &inputs[sample * input_dim..(sample + 1) * input_dim];
            // Forward, keeping post-activation values per layer.
            for l in 0..spans.len() {
                let span = &spans[l];
                let (prev, rest) = acts.split_at_mut(l);
                let input: &[f64] = if l == 0 { x } else { &prev[l - 1] };
                let out = &mut rest[0];
                dense_forward(&self.params, span, input, out);
                if l < last {
                    for v in out.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
            // Softmax cross-entropy on the logits.
            let logits = &acts[last];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = max + sum_exp.ln();
            loss += (log_sum - logits[label]) * inv_batch;
            let delta_out = &mut deltas[last];
            for (d, &v) in delta_out.iter_mut().zip(logits) {
                *d = ((v - max).exp() / sum_exp) * inv_batch;
            }
            delta_out[label] -= inv_batch;
            // Backward.
            for l in (0..spans.len()).rev() {
                let span = &spans[l];
                let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
                {
                    let delta = &deltas[l];
                    let wg = &mut grad[span.weights.clone()];
                    for (row, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &mut wg[row * span.input_dim..(row + 1) * span.input_dim];
                        for (g, &xi) in wrow.iter_mut().zip(input) {
                            *g += d * xi;
                        }
                    }
                }
                if let Some(bias) = &span.bias {
                    let delta = &deltas[l];
                    for (g, &d) in grad[bias.clone()].iter_mut().zip(delta) {
                        *g += d;
                    }
                }
                if l > 0 {
                    // Propagate through the weights, then the previous ReLU.
                    let (lower, upper) = deltas.split_at_mut(l);
                    let delta = &upper[0];
                    let prev_delta = &mut lower[l - 1];
                    let weights = &self.params[span.weights.clone()];
                    prev_delta.fill(0.0);
                    for (row, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &weights[row * span.input_dim..(row + 1) * span.input_dim];
                        for (p, &w) in prev_delta.iter_mut().zip(wrow) {
                            *p += d * w;
                        }
                    }
                    for (p, &a) in prev_delta.iter_mut().zip(&acts[l - 1]) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
            }
        }
        Ok(loss)
    }
}

fn dense_forward(params: &[f64], span: &LayerSpan, input: &[f64], out: &mut [f64]) {
    let weights = &params[span.weights.clone()];
    for (row, o) in out.iter_mut().enumerate() {
        let wrow = &weights[row * span.input_dim..(row + 1) * span.input_dim];
        *o = wrow.iter().zip(input).map(|(w, x)| w * x).sum();
    }
    if let Some(bias) = &span.bias {
        for (o, b) in out.iter_mut().zip(&params[bias.clone()]) {
            *o += b;
        }
    }
}

/// A weight after quantization: zero, or a signed power of two applied as a
/// bit shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightCode {
    Zero,
    Pow2 { negative: bool, exponent: i32 },
}

impl WeightCode {
    /// Exact conversion from a real weight, if it is in the codebook for the
    /// given total width.
    pub fn from_value(w: f64, max_abs_exponent: i32) -> Option<Self> {
        if w == 0.0 {
            return Some(WeightCode::Zero);
        }
        if !w.is_finite() {
            return None;
        }
        let exponent = w.abs().log2();
        if exponent != exponent.round() {
            return None;
        }
        let exponent = exponent as i32;
        if exponent.abs() > max_abs_exponent {
            return None;
        }
        Some(WeightCode::Pow2 {
            negative: w < 0.0,
            exponent,
        })
    }

    pub fn to_value(self) -> f64 {
        match self {
            WeightCode::Zero => 0.0,
            WeightCode::Pow2 {
                negative,
                exponent,
            } => {
                let mag = f64::powi(2.0, exponent);
                if negative {
                    -mag
                } else {
                    mag
                }
            }
        }
    }
}

/// The deployed receiver: weights as shift codes, biases as fixed-point
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMlpModel {
    arch: MlpArchitecture,
    format: FixedPointFormat,
    /// One code per weight, in flat-vector order.
    weights: Vec<WeightCode>,
    /// One value per bias of each biased layer, in flat-vector order.
    biases: Vec<FxpValue>,
}

impl QuantizedMlpModel {
    /// Converts a parameter vector whose weights are already codebook members
    /// and whose biases lie on the fixed-point grid. Losslessness is checked;
    /// off-codebook values are rejected.
    pub fn from_quantized_params(
        arch: MlpArchitecture,
        params: &[f64],
        format: FixedPointFormat,
    ) -> Result<Self, NnError> {
        if params.len() != arch.param_count() {
            return Err(NnError::ParamLength {
                got: params.len(),
                expected: arch.param_count(),
            });
        }
        let max_abs_exp = format.total_bits() as i32 - 2;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (layer, span) in arch.layer_spans().iter().enumerate() {
            let w = &params[span.weights.clone()];
            for (i, &value) in w.iter().enumerate() {
                let code = WeightCode::from_value(value, max_abs_exp).ok_or(
                    NnError::WeightOffCodebook {
                        layer,
                        row: i / span.input_dim,
                        col: i % span.input_dim,
                        value,
                    },
                )?;
                weights.push(code);
            }
            if let Some(bias) = &span.bias {
                for (index, &value) in params[bias.clone()].iter().enumerate() {
                    let encoded =
                        FxpValue::encode(value, format).map_err(|_| NnError::BiasOffGrid {
                            layer,
                            index,
                            value,
                        })?;
                    if encoded.decode() != value {
                        return Err(NnError::BiasOffGrid {
                            layer,
                            index,
                            value,
                        });
                    }
                    biases.push(encoded);
                }
            }
        }
        Ok(Self {
            arch,
            format,
            weights,
            biases,
        })
    }

    pub fn from_model(model: &MlpModel, format: FixedPointFormat) -> Result<Self, NnError> {
        Self::from_quantized_params(model.arch().clone(), model.params(), format)
    }

    /// Assembles from explicit codes; lengths must match the architecture.
    pub fn from_codes(
        arch: MlpArchitecture,
        format: FixedPointFormat,
        weights: Vec<WeightCode>,
        biases: Vec<FxpValue>,
    ) -> Result<Self, NnError> {
        let spans = arch.layer_spans();
        let weight_count: usize = spans.iter().map(|s| s.weights.len()).sum();
        let bias_count: usize = spans.iter().filter_map(|s| s.bias.as_ref()).map(Range::len).sum();
        if weights.len() != weight_count || biases.len() != bias_count {
            return Err(NnError::ParamLength {
                got: weights.len() + biases.len(),
                expected: weight_count + bias_count,
            });
        }
        if biases.iter().any(|b| b.format() != format) {
            return Err(NnError::InvalidArchitecture(
                "bias format differs from model format".into(),
            ));
        }
        Ok(Self {
            arch,
            format,
            weights,
            biases,
        })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn weight_codes(&self) -> &[WeightCode] {
        &self.weights
    }

    pub fn biases(&self) -> &[FxpValue] {
        &self.biases
    }

    /// Dequantizes back to a float model. Exact: every code and bias has an
    /// exact real value.
    pub fn to_model(&self) -> MlpModel {
        let mut params = vec![0.0; self.arch.param_count()];
        let mut wi = 0;
        let mut bi = 0;
        for span in self.arch.layer_spans() {
            for slot in &mut params[span.weights] {
                *slot = self.weights[wi].to_value();
                wi += 1;
            }
            if let Some(bias) = span.bias {
                for slot in &mut params[bias] {
                    *slot = self.biases[bi].decode();
                    bi += 1;
                }
            }
        }
        MlpModel::new(self.arch.clone(), params).expect("layout matches architecture")
    }

    /// Bit-accurate forward pass: every multiplication is a bit shift or a
    /// zeroing, every addition saturates per the context mode, ReLU between
    /// hidden layers, no softmax. Saturation events accumulate on `ctx`.
    pub fn forward_fixed(
        &self,
        x: &[FxpValue],
        ctx: &mut FxpContext,
    ) -> Result<Vec<FxpValue>, NnError> {
        if x.len() != self.arch.input_dim {
            return Err(NnError::InputLength {
                got: x.len(),
                expected: self.arch.input_dim,
            });
        }
        for v in x {
            if v.format() != self.format {
                return Err(NnError::Fxp(FxpError::FormatMismatch(
                    v.format(),
                    self.format,
                )));
            }
        }
        let spans = self.arch.layer_spans();
        let last = spans.len() - 1;
        let mut activation = x.to_vec();
        let mut weight_offset = 0;
        let mut bias_offset = 0;
        for (l, span) in spans.iter().enumerate() {
            let mut next = Vec::with_capacity(span.output_dim);
            let mut products = vec![FxpValue::zero(self.format); span.input_dim];
            for row in 0..span.output_dim {
                let codes =
                    &self.weights[weight_offset + row * span.input_dim..weight_offset + (row + 1) * span.input_dim];
                for ((p, &code), &xin) in products.iter_mut().zip(codes).zip(&activation) {
                    *p = match code {
                        WeightCode::Zero => FxpValue::zero(self.format),
                        WeightCode::Pow2 {
                            negative,
                            exponent,
                        } => {
                            let shifted = ctx.mul_pow2(xin, exponent)?;
                            if negative {
                                shifted.negate()
                            } else {
                                shifted
                            }
                        }
                    };
                }
                let mut acc = ctx.accumulate(&products)?;
                if span.bias.is_some() {
                    acc = ctx.add_sat(acc, self.biases[bias_offset + row])?;
                }
                if l < last {
                    acc = acc.relu();
                }
                next.push(acc);
            }
            weight_offset += span.weights.len();
            if let Some(bias) = &span.bias {
                bias_offset += bias.len();
            }
            activation = next;
        }
        Ok(activation)
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_f64(values: &[f64]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            arg = i;
        }
    }
    arg
}

/// Index of the largest fixed-point value; ties go to the smallest index.
pub fn argmax_fxp(values: &[FxpValue]) -> usize {
    let mut best = i64::MIN;
    let mut arg = 0;
    for (i, v) in values.iter().enumerate() {
        if v.raw() > best {
            best = v.raw();
            arg = i;
        }
    }
    arg
}
