use super::Gradients;
use crate::error::{Result, SnnError};
use crate::snn::NetworkParams;

/// Central-difference gradient of `loss` with respect to every weight, and
/// every time constant when `include_tau` is set.
///
/// Costs two loss evaluations per parameter; meant for networks with at
/// most a few thousand parameters.
pub fn finite_difference_gradient<L>(
    params: &NetworkParams,
    epsilon: f64,
    include_tau: bool,
    mut loss: L,
) -> Result<Gradients>
where
    L: FnMut(&NetworkParams) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(SnnError::InvalidParameter(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    let layer_count = params.hidden.len() + 1;
    for l in 0..layer_count {
        for which in [Field::Weights, Field::Tau] {
            if which == Field::Tau && !include_tau {
                continue;
            }
            let len = field(&probe, l, which).len();
            for i in 0..len {
                let original = field(&probe, l, which)[i];
                field_mut(&mut probe, l, which)[i] = original + epsilon;
                let up = loss(&probe)?;
                field_mut(&mut probe, l, which)[i] = original - epsilon;
                let down = loss(&probe)?;
                field_mut(&mut probe, l, which)[i] = original;
                let g = (up - down) / (2.0 * epsilon);
                let layer = if l < params.hidden.len() {
                    &mut grads.hidden[l]
                } else {
                    &mut grads.readout
                };
                match which {
                    Field::Weights => layer.weights[i] = g,
                    Field::Tau => layer.tau[i] = g,
                }
            }
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Weights,
    Tau,
}

fn field(params: &NetworkParams, layer: usize, which: Field) -> &[f64] {
    let p = params.layers().nth(layer).expect("layer index");
    match which {
        Field::Weights => &p.weights,
        Field::Tau => &p.tau,
    }
}

fn field_mut(params: &mut NetworkParams, layer: usize, which: Field) -> &mut Vec<f64> {
    let p = params.layers_mut().nth(layer).expect("layer index");
    match which {
        Field::Weights => &mut p.weights,
        Field::Tau => &mut p.tau,
    }
}
