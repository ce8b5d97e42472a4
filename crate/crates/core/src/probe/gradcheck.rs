use super::decoder::ProbeDecoder;
use super::nn::Tensor;
use super::train::{batch_loss, ProbeTask};
use crate::error::Result;

/// Agreement between backpropagated and central-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-5)`.
    pub max_rel_error: f64,
}

/// Compares the decoder's parameter gradients under the task loss with
/// central differences of step `h`, on a small fixed network and batch.
/// About a fifth of the entries of every parameter tensor are probed.
pub fn gradient_check(task: ProbeTask, h: f64) -> Result<GradCheck> {
    let mut dec = ProbeDecoder::with_widths(3, [3, 3, 2, 2], task.activation(), 7)?;
    let x = Tensor::from_vec(2, 3, 1, 2, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4 + 0.05 * i as f64).collect());
    let targets: Vec<Vec<f64>> = (0..2)
        .map(|s| {
            (0..16 * 32)
                .map(|i| match task {
                    ProbeTask::Edges => ((i + s) % 7 == 0) as u8 as f64,
                    ProbeTask::Depth => ((i as f64 * 0.013 + s as f64).sin() + 1.0) / 2.0,
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    dec.zero_grad();
    dec.train_step(&x, |out| batch_loss(task, out, &refs))?;
    let analytic: Vec<Vec<f64>> = dec.params_mut().iter().map(|p| p.grad.clone()).collect();
    let mut eval = |pi: usize, idx: usize, delta: f64| -> Result<f64> {
        dec.params_mut()[pi].value[idx] += delta;
        let out = dec.forward_train(&x);
        dec.params_mut()[pi].value[idx] -= delta;
        Ok(batch_loss(task, &out?, &refs)?.0)
    };
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for idx in (0..grads.len()).step_by((grads.len() / 5).max(1)) {
            let numeric = (eval(pi, idx, h)? - eval(pi, idx, -h)?) / (2.0 * h);
            let a = grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
