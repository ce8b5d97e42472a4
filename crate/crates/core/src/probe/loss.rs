use super::nn::sigmoid;
use crate::error::{Error, Result};

pub const DICE_EPS: f64 = 1.0;
pub const DEPTH_GRAD_WEIGHT: f64 = 0.1;

fn check(pred: &[f64], target: &[f64], what: &str) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} prediction")));
    }
    Ok(())
}

/// `0.5·BCE(σ(z), t) + 0.5·(1 − (2Σpt + ε)/(Σp + Σt + ε))` for one map and
/// its gradient with respect to the logits. BCE is evaluated in logit space.
pub fn edge_loss_and_grad(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(logits, target, "edge loss")?;
    let n = logits.len() as f64;
    let p: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let bce = logits
        .iter()
        .zip(target)
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    let inter: f64 = p.iter().zip(target).map(|(p, t)| p * t).sum();
    let s = p.iter().sum::<f64>() + target.iter().sum::<f64>() + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    let dice = 1.0 - num / s;
    let grad = p
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d_bce = (p - t) / n;
            let d_dice_dp = -(2.0 * t * s - num) / (s * s);
            0.5 * d_bce + 0.5 * d_dice_dp * p * (1.0 - p)
        })
        .collect();
    Ok((0.5 * bce + 0.5 * dice, grad))
}

pub fn probe_loss_edges(logits: &[f64], target: &[f64]) -> Result<f64> {
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidParameter("edge targets must be 0 or 1".into()));
    }
    Ok(edge_loss_and_grad(logits, target)?.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean|p − t| + 0.1·(mean|∂x p − ∂x t| + mean|∂y p − ∂y t|)` with forward
/// differences, and its (sub)gradient with respect to `pred`.
pub fn depth_loss_and_grad(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<(f64, Vec<f64>)> {
    check(pred, target, "depth loss")?;
    if pred.len() != height * width {
        return Err(Error::ShapeMismatch(format!("depth map is not {height}x{width}")));
    }
    if pred.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParameter("depth prediction outside [0, 1]".into()));
    }
    let n = pred.len() as f64;
    let mut grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| sign(p - t) / n).collect();
    let mut loss = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let d = |i: usize, j: usize| (pred[j] - pred[i]) - (target[j] - target[i]);
    if width > 1 {
        let m = (height * (width - 1)) as f64;
        let mut term = 0.0;
        for y in 0..height {
            for x in 0..width - 1 {
                let (i, j) = (y * width + x, y * width + x + 1);
                let v = d(i, j);
                term += v.abs();
                let g = DEPTH_GRAD_WEIGHT * sign(v) / m;
                grad[j] += g;
                grad[i] -= g;
            }
        }
        loss += DEPTH_GRAD_WEIGHT * term / m;
    }
    if height > 1 {
        let m = ((height - 1) * width) as f64;
        let mut term = 0.0;
        for y in 0..height - 1 {
            for x in 0..width {
                let (i, j) = (y * width + x, (y + 1) * width + x);
                let v = d(i, j);
                term += v.abs();
                let g = DEPTH_GRAD_WEIGHT * sign(v) / m;
                grad[j] += g;
                grad[i] -= g;
            }
        }
        loss += DEPTH_GRAD_WEIGHT * term / m;
    }
    Ok((loss, grad))
}

pub fn probe_loss_depth(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<f64> {
    Ok(depth_loss_and_grad(pred, target, height, width)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_edges_give_near_zero_loss() {
        let t = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let z: Vec<f64> = t.iter().map(|&t| if t == 1.0 { 12.0 } else { -12.0 }).collect();
        let l = probe_loss_edges(&z, &t).unwrap();
        assert!((0.0..1e-4).contains(&l), "{l}");
    }

    #[test]
    fn uniform_half_probability() {
        let t = [1.0, 0.0, 0.0, 0.0];
        let l = probe_loss_edges(&[0.0; 4], &t).unwrap();
        // Σp = 2, Σt = 1, Σpt = 0.5
        let dice = 1.0 - (2.0 * 0.5 + 1.0) / (2.0 + 1.0 + 1.0);
        // BCE term 0.5·ln 2
        assert!((l - (0.5 * 2f64.ln() + 0.5 * dice)).abs() < 1e-12);
    }

    #[test]
    fn depth_cases() {
        let t: Vec<f64> = (0..16).map(|i| i as f64 / 20.0).collect();
        assert_eq!(probe_loss_depth(&t, &t, 4, 4).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((probe_loss_depth(&shifted, &t, 4, 4).unwrap() - 0.1).abs() < 1e-12);
        assert!(probe_loss_depth(&[1.5; 4], &[0.0; 4], 2, 2).is_err());
        assert!(probe_loss_edges(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let t = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let z = [0.3, -1.2, 2.0, 0.7, -0.1, -0.4];
        let (_, g) = edge_loss_and_grad(&z, &t).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let (mut a, mut b) = (z, z);
            a[i] += h;
            b[i] -= h;
            let fd = (edge_loss_and_grad(&a, &t).unwrap().0 - edge_loss_and_grad(&b, &t).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
        let p = [0.2, 0.5, 0.9, 0.4, 0.33, 0.71];
        let tt = [0.1, 0.8, 0.3, 0.45, 0.2, 0.6];
        let (_, g) = depth_loss_and_grad(&p, &tt, 2, 3).unwrap();
        for i in 0..p.len() {
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (probe_loss_depth(&a, &tt, 2, 3).unwrap() - probe_loss_depth(&b, &tt, 2, 3).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
