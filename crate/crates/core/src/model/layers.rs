//! Forward and backward passes for the supported layer kinds.
//!
//! Activations are flat `f64` buffers. Image tensors use channel-major
//! layout `[channel][row][col]`. All reductions run sequentially in flat
//! index order.

use super::weights::ModelWeights;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Dense {
        input: usize,
        output: usize,
        weight: usize,
        bias: usize,
    },
    Relu {
        size: usize,
    },
    Tanh {
        size: usize,
    },
    /// Valid convolution, stride 1.
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        filters: usize,
        kernel: usize,
        weight: usize,
        bias: usize,
    },
    /// Non-overlapping max pooling; trailing rows/cols are dropped.
    MaxPool {
        channels: usize,
        height: usize,
        width: usize,
        size: usize,
    },
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Relu { size } | Layer::Tanh { size } => size,
            Layer::Conv {
                channels, height, width, ..
            }
            | Layer::MaxPool {
                channels, height, width, ..
            } => channels * height * width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Relu { size } | Layer::Tanh { size } => size,
            Layer::Conv {
                height,
                width,
                filters,
                kernel,
                ..
            } => filters * (height - kernel + 1) * (width - kernel + 1),
            Layer::MaxPool {
                channels,
                height,
                width,
                size,
            } => channels * (height / size) * (width / size),
        }
    }

    /// `argmax` is only written by max pooling.
    pub fn forward(&self, params: &ModelWeights, x: &[f64], y: &mut [f64], argmax: &mut [usize]) {
        match *self {
            Layer::Dense {
                input,
                output,
                weight,
                bias,
            } => {
                let w = &params.tensors()[weight].values;
                let b = &params.tensors()[bias].values;
                for o in 0..output {
                    let row = &w[o * input..(o + 1) * input];
                    let mut s = b[o];
                    for i in 0..input {
                        s += row[i] * x[i];
                    }
                    y[o] = s;
                }
            }
            Layer::Relu { size } => {
                for i in 0..size {
                    y[i] = if x[i] > 0.0 { x[i] } else { 0.0 };
                }
            }
            Layer::Tanh { size } => {
                for i in 0..size {
                    y[i] = x[i].tanh();
                }
            }
            Layer::Conv {
                channels,
                height,
                width,
                filters,
                kernel,
                weight,
                bias,
            } => {
                let w = &params.tensors()[weight].values;
                let b = &params.tensors()[bias].values;
                let (oh, ow) = (height - kernel + 1, width - kernel + 1);
                for f in 0..filters {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut s = b[f];
                            for ch in 0..channels {
                                for kr in 0..kernel {
                                    let xrow = (ch * height + r + kr) * width + c;
                                    let wrow = ((f * channels + ch) * kernel + kr) * kernel;
                                    for kc in 0..kernel {
                                        s += w[wrow + kc] * x[xrow + kc];
                                    }
                                }
                            }
                            y[(f * oh + r) * ow + c] = s;
                        }
                    }
                }
            }
            Layer::MaxPool {
                channels,
                height,
                width,
                size,
            } => {
                let (oh, ow) = (height / size, width / size);
                for ch in 0..channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut best = (ch * height + r * size) * width + c * size;
                            for pr in 0..size {
                                for pc in 0..size {
                                    let idx = (ch * height + r * size + pr) * width + c * size + pc;
                                    if x[idx] > x[best] {
                                        best = idx;
                                    }
                                }
                            }
                            let o = (ch * oh + r) * ow + c;
                            y[o] = x[best];
                            argmax[o] = best;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and, when `dx` is
    /// given, overwrites it with the input gradient.
    pub fn backward(
        &self,
        params: &ModelWeights,
        x: &[f64],
        dy: &[f64],
        argmax: &[usize],
        grads: &mut ModelWeights,
        dx: Option<&mut [f64]>,
    ) {
        match *self {
            Layer::Dense {
                input,
                output,
                weight,
                bias,
            } => {
                {
                    let g = grads.tensors_mut();
                    let gw = &mut g[weight].values;
                    for o in 0..output {
                        let d = dy[o];
                        if d != 0.0 {
                            let row = &mut gw[o * input..(o + 1) * input];
                            for i in 0..input {
                                row[i] += d * x[i];
                            }
                        }
                    }
                    let gb = &mut g[bias].values;
                    for o in 0..output {
                        gb[o] += dy[o];
                    }
                }
                if let Some(dx) = dx {
                    let w = &params.tensors()[weight].values;
                    dx[..input].fill(0.0);
                    for o in 0..output {
                        let d = dy[o];
                        if d != 0.0 {
                            let row = &w[o * input..(o + 1) * input];
                            for i in 0..input {
                                dx[i] += row[i] * d;
                            }
                        }
                    }
                }
            }
            Layer::Relu { size } => {
                if let Some(dx) = dx {
                    for i in 0..size {
                        dx[i] = if x[i] > 0.0 { dy[i] } else { 0.0 };
                    }
                }
            }
            Layer::Tanh { size } => {
                if let Some(dx) = dx {
                    for i in 0..size {
                        let t = x[i].tanh();
                        dx[i] = dy[i] * (1.0 - t * t);
                    }
                }
            }
            Layer::Conv {
                channels,
                height,
                width,
                filters,
                kernel,
                weight,
                bias,
            } => {
                let (oh, ow) = (height - kernel + 1, width - kernel + 1);
                {
                    let g = grads.tensors_mut();
                    for f in 0..filters {
                        for r in 0..oh {
                            for c in 0..ow {
                                let d = dy[(f * oh + r) * ow + c];
                                g[bias].values[f] += d;
                                if d == 0.0 {
                                    continue;
                                }
                                let gw = &mut g[weight].values;
                                for ch in 0..channels {
                                    for kr in 0..kernel {
                                        let xrow = (ch * height + r + kr) * width + c;
                                        let wrow = ((f * channels + ch) * kernel + kr) * kernel;
                                        for kc in 0..kernel {
                                            gw[wrow + kc] += d * x[xrow + kc];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    let w = &params.tensors()[weight].values;
                    dx[..channels * height * width].fill(0.0);
                    for f in 0..filters {
                        for r in 0..oh {
                            for c in 0..ow {
                                let d = dy[(f * oh + r) * ow + c];
                                if d == 0.0 {
                                    continue;
                                }
                                for ch in 0..channels {
                                    for kr in 0..kernel {
                                        let xrow = (ch * height + r + kr) * width + c;
                                        let wrow = ((f * channels + ch) * kernel + kr) * kernel;
                                        for kc in 0..kernel {
                                            dx[xrow + kc] += w[wrow + kc] * d;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::MaxPool { .. } => {
                if let Some(dx) = dx {
                    dx[..self.input_len()].fill(0.0);
                    for (o, &src) in argmax.iter().enumerate().take(self.output_len()) {
                        dx[src] += dy[o];
                    }
                }
            }
        }
    }
}
