use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Affine map `y = x W + b` with `W` stored `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.ndim() != 2 || bias.shape() != [weights.dim(1)] {
            return Err(shape_err(
                "linear",
                format!("weights {:?} with bias {:?}", weights.shape(), bias.shape()),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weights.dim(1)
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        if input.ndim() != 2 || input.dim(1) != self.inputs() {
            return Err(shape_err(
                "linear",
                format!(
                    "input {:?} does not match {} features",
                    input.shape(),
                    self.inputs()
                ),
            ));
        }
        Ok(input.dim(0))
    }
}

pub fn linear(input: &Tensor, layer: &LinearLayer) -> Result<Tensor> {
    let n = layer.check_input(input)?;
    let (f, g) = (layer.inputs(), layer.outputs());
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(layer.bias.data());
    }
    gemm(
        n,
        f,
        g,
        1.0,
        input.data(),
        Layout::Normal,
        layer.weights.data(),
        Layout::Normal,
        1.0,
        &mut out,
    );
    Tensor::new(vec![n, g], out)
}

pub fn linear_backward(
    input: &Tensor,
    layer: &LinearLayer,
    grad_output: &Tensor,
) -> Result<LinearGrads> {
    let n = layer.check_input(input)?;
    let (f, g) = (layer.inputs(), layer.outputs());
    if grad_output.shape() != [n, g] {
        return Err(shape_err(
            "linear_backward",
            format!("upstream {:?}, expected [{n}, {g}]", grad_output.shape()),
        ));
    }
    let up = grad_output.data();
    let mut grad_in = vec![0.0; n * f];
    gemm(
        n,
        g,
        f,
        1.0,
        up,
        Layout::Normal,
        layer.weights.data(),
        Layout::Transposed,
        0.0,
        &mut grad_in,
    );
    let mut grad_w = vec![0.0; f * g];
    gemm(
        f,
        n,
        g,
        1.0,
        input.data(),
        Layout::Transposed,
        up,
        Layout::Normal,
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0; g];
    for row in up.chunks(g) {
        for (b, v) in grad_b.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![n, f], grad_in)?,
        weights: Tensor::new(vec![f, g], grad_w)?,
        bias: Tensor::new(vec![g], grad_b)?,
    })
}
