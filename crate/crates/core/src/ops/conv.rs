//! 2-D cross-correlation over NCHW batches, lowered to GEMM via im2col.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Convolution parameters: `weights` is `(kernels, channels, kh, kw)`,
/// `bias` is `(kernels)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weights.ndim() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("weights must be 4-d, got {:?}", weights.shape()),
            ));
        }
        if bias.shape() != [weights.dim(0)] {
            return Err(shape_err(
                "conv2d",
                format!(
                    "bias {:?} does not match {} kernels",
                    bias.shape(),
                    weights.dim(0)
                ),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernels(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.weights.dim(2), self.weights.dim(3))
    }

    /// Number of weights in one kernel (`channels * kh * kw`).
    pub fn kernel_volume(&self) -> usize {
        self.weights.len() / self.kernels()
    }

    /// The flat weight slice of kernel `k`.
    pub fn kernel(&self, k: usize) -> &[f64] {
        let v = self.kernel_volume();
        &self.weights.data()[k * v..(k + 1) * v]
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let ph = height + 2 * self.padding;
        let pw = width + 2 * self.padding;
        if ph < kh || pw < kw {
            return Err(shape_err(
                "conv2d",
                format!("padded input {ph}x{pw} smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn geometry(&self, input: &Tensor) -> Result<Geometry> {
        if input.ndim() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("input must be NCHW, got {:?}", input.shape()),
            ));
        }
        let (batch, channels, height, width) =
            (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        if channels != self.in_channels() {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input has {channels} channels, layer expects {}",
                    self.in_channels()
                ),
            ));
        }
        let (kh, kw) = self.kernel_size();
        let (out_h, out_w) = self.output_hw(height, width)?;
        Ok(Geometry {
            batch,
            channels,
            height,
            width,
            kernels: self.kernels(),
            kh,
            kw,
            stride: self.stride,
            pad: self.padding,
            out_h,
            out_w,
        })
    }
}

/// Writes the `(patch, positions)` column matrix of one sample into `cols`.
fn im2col(g: &Geometry, sample: &[f64], cols: &mut [f64]) {
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if x < 0 || x >= g.width as isize {
                            0.0
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one sample's input gradient.
fn col2im(g: &Geometry, cols: &[f64], sample: &mut [f64]) {
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &mut sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            line[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let g = layer.geometry(input)?;
    let (patch, positions) = (g.patch(), g.positions());
    let in_stride = g.channels * g.height * g.width;
    let out_stride = g.kernels * positions;
    let mut out = vec![0.0; g.batch * out_stride];
    let mut cols = vec![0.0; patch * positions];
    for n in 0..g.batch {
        im2col(&g, &input.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        let dst = &mut out[n * out_stride..(n + 1) * out_stride];
        for (k, row) in dst.chunks_mut(positions).enumerate() {
            row.fill(layer.bias.data()[k]);
        }
        gemm(
            g.kernels,
            patch,
            positions,
            1.0,
            layer.weights.data(),
            Layout::Normal,
            &cols,
            Layout::Normal,
            1.0,
            dst,
        );
    }
    Tensor::new(vec![g.batch, g.kernels, g.out_h, g.out_w], out)
}

/// Exact gradients of a scalar loss through [`conv2d`], given the upstream
/// gradient with respect to its output.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer,
    grad_output: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = layer.geometry(input)?;
    let expected = [g.batch, g.kernels, g.out_h, g.out_w];
    if grad_output.shape() != expected {
        return Err(shape_err(
            "conv2d_backward",
            format!(
                "upstream {:?}, expected {:?}",
                grad_output.shape(),
                expected
            ),
        ));
    }
    let (patch, positions) = (g.patch(), g.positions());
    let in_stride = g.channels * g.height * g.width;
    let out_stride = g.kernels * positions;

    let mut grad_w = vec![0.0; layer.weights.len()];
    let mut grad_b = vec![0.0; g.kernels];
    let mut grad_in = if need_input_grad {
        Some(vec![0.0; input.len()])
    } else {
        None
    };
    let mut cols = vec![0.0; patch * positions];
    let mut dcols = vec![0.0; patch * positions];

    for n in 0..g.batch {
        let up = &grad_output.data()[n * out_stride..(n + 1) * out_stride];
        for (k, row) in up.chunks(positions).enumerate() {
            grad_b[k] += row.iter().sum::<f64>();
        }
        im2col(&g, &input.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        // dW += dY (K x P) * cols^T (P x patch)
        gemm(
            g.kernels,
            positions,
            patch,
            1.0,
            up,
            Layout::Normal,
            &cols,
            Layout::Transposed,
            1.0,
            &mut grad_w,
        );
        if let Some(gi) = grad_in.as_mut() {
            // dcols = W^T (patch x K) * dY (K x P)
            gemm(
                patch,
                g.kernels,
                positions,
                1.0,
                layer.weights.data(),
                Layout::Transposed,
                up,
                Layout::Normal,
                0.0,
                &mut dcols,
            );
            col2im(&g, &dcols, &mut gi[n * in_stride..(n + 1) * in_stride]);
        }
    }

    Ok(ConvGrads {
        input: grad_in
            .map(|d| Tensor::new(input.shape().to_vec(), d))
            .transpose()?,
        weights: Tensor::new(layer.weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![g.kernels], grad_b)?,
    })
}
