use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Gradient and momentum buffers, one per parameter tensor and of the same
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStore {
    pub grads: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
}

impl GradientStore {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            grads: zeros.clone(),
            velocity: zeros,
        }
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + g`, `w <- w - lr * v`.
///
/// Entries with `frozen[i] == true` keep their exact value and get their
/// velocity reset to zero.
pub fn sgd_momentum_step(
    params: &mut Tensor,
    grads: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    frozen: Option<&[bool]>,
) -> Result<()> {
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "sgd requires lr > 0 and 0 <= momentum < 1, got lr={lr} momentum={momentum}"
        )));
    }
    if params.shape() != grads.shape() || params.shape() != velocity.shape() {
        return Err(shape_err(
            "sgd_momentum_step",
            format!(
                "params {:?}, grads {:?}, velocity {:?}",
                params.shape(),
                grads.shape(),
                velocity.shape()
            ),
        ));
    }
    if let Some(mask) = frozen {
        if mask.len() != params.len() {
            return Err(shape_err(
                "sgd_momentum_step",
                format!("frozen mask has {} entries for {}", mask.len(), params.len()),
            ));
        }
    }
    let w = params.data_mut();
    let v = velocity.data_mut();
    for (i, &g) in grads.data().iter().enumerate() {
        if frozen.is_some_and(|m| m[i]) {
            v[i] = 0.0;
            continue;
        }
        v[i] = momentum * v[i] + g;
        w[i] -= lr * v[i];
    }
    Ok(())
}
