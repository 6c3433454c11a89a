use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn check(input: &Tensor) -> Result<(usize, usize, usize)> {
    if input.ndim() != 4 {
        return Err(shape_err(
            "maxpool2",
            format!("input must be NCHW, got {:?}", input.shape()),
        ));
    }
    let (h, w) = (input.dim(2), input.dim(3));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(
            "maxpool2",
            format!("spatial dims {h}x{w} must be even"),
        ));
    }
    Ok((input.dim(0) * input.dim(1), h, w))
}

/// Flat input index of each window's maximum; first occurrence in row-major
/// order wins ties.
fn argmax_indices(input: &Tensor, planes: usize, h: usize, w: usize) -> Vec<usize> {
    let x = input.data();
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let (planes, h, w) = check(input)?;
    let x = input.data();
    let data = argmax_indices(input, planes, h, w)
        .into_iter()
        .map(|i| x[i])
        .collect();
    let s = input.shape();
    Tensor::new(vec![s[0], s[1], h / 2, w / 2], data)
}

/// Routes each upstream value to the argmax position of its window.
pub fn maxpool2_backward(input: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    let (planes, h, w) = check(input)?;
    let s = input.shape();
    let expected = [s[0], s[1], h / 2, w / 2];
    if grad_output.shape() != expected {
        return Err(shape_err(
            "maxpool2_backward",
            format!("upstream {:?}, expected {expected:?}", grad_output.shape()),
        ));
    }
    let mut grad = Tensor::zeros(s);
    let g = grad.data_mut();
    for (i, up) in argmax_indices(input, planes, h, w)
        .into_iter()
        .zip(grad_output.data())
    {
        g[i] += up;
    }
    Ok(grad)
}
