//! Emission-absorption quadrature along a ray.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Error, Result};
use crate::nn;

/// Composites one ray. `feats` is `N_s × C` row-major. Returns the
/// accumulated feature and the per-sample weights
/// `w_j = T_j (1 - exp(-σ_j δ_j))` with `T_j = Π_{k<j} (1 - α_k)`.
pub fn composite(
    sigmas: &[f64],
    feats: &[f64],
    deltas: &[f64],
    background: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sigmas.len();
    let c = background.len();
    if deltas.len() != n || feats.len() != n * c {
        return Err(shape_err(format!(
            "composite: {n} sigmas, {} deltas, {} feature values for {c} channels",
            deltas.len(),
            feats.len()
        )));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidInput(format!("negative or NaN density {s}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidInput(format!("non-positive sample spacing {d}")));
    }
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = 1.0;
    let mut out = vec![0.0; c];
    let mut total = 0.0;
    for j in 0..n {
        let alpha = 1.0 - (-sigmas[j] * deltas[j]).exp();
        // capped so rounding never pushes the running sum past one
        let w = (transmittance * alpha).min(1.0 - total);
        for (o, f) in out.iter_mut().zip(&feats[j * c..(j + 1) * c]) {
            *o += w * f;
        }
        weights.push(w);
        total += w;
        transmittance *= 1.0 - alpha;
    }
    for (o, b) in out.iter_mut().zip(background) {
        *o += (1.0 - total) * b;
    }
    Ok((out, weights))
}

/// Batched, differentiable compositing.
///
/// `sigmas`: (R, N_s), `feats`: (R, N_s, C), `deltas`: (R, N_s),
/// `background`: (C,). Returns `(features (R, C), weights (R, N_s))`.
pub fn composite_tensor(
    sigmas: &Tensor,
    feats: &Tensor,
    deltas: &Tensor,
    background: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let tau = (sigmas * deltas)?;
    let alpha = (tau.neg()?.exp()?.neg()? + 1.0)?;
    let transmittance = nn::exclusive_cumsum(&tau)?.neg()?.exp()?;
    let weights = (transmittance * alpha)?;
    let acc = feats.broadcast_mul(&weights.unsqueeze(D::Minus1)?)?.sum(1)?;
    let rest = (weights.sum_keepdim(1)?.neg()? + 1.0)?;
    let out = acc.broadcast_add(&rest.broadcast_mul(&background.unsqueeze(0)?)?)?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn empty_space_returns_background() {
        let (f, w) = composite(&[0.0; 4], &[1.0; 8], &[0.1; 4], &[0.25, -3.0]).unwrap();
        assert_eq!(f, vec![0.25, -3.0]);
        assert_eq!(w, vec![0.0; 4]);
    }

    #[test]
    fn half_opacity_sample() {
        let ln2 = std::f64::consts::LN_2;
        let (f, w) = composite(&[ln2], &[2.0], &[1.0], &[1.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((f[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn opaque_first_sample() {
        let (f, w) = composite(&[50.0, 3.0, 1.0], &[0.7, 0.1, 0.2], &[1.0; 3], &[9.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        assert!(w[1..].iter().all(|&x| x.abs() < 1e-9));
        assert!((f[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn rejects_negative_density() {
        assert!(composite(&[-0.1], &[0.0], &[1.0], &[0.0]).is_err());
        assert!(composite(&[0.1], &[0.0], &[0.0], &[0.0]).is_err());
        assert!(composite(&[0.1, 0.2], &[0.0], &[1.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn tensor_path_matches_scalar() {
        let sig = [0.3, 2.0, 0.0, 5.0];
        let feats = [0.1, 0.9, 0.4, 0.2, 0.5, 0.5, 0.0, 1.0];
        let del = [0.2, 0.1, 0.3, 0.25];
        let bg = [0.3, 0.6];
        let (fs, ws) = composite(&sig, &feats, &del, &bg).unwrap();
        let d = Device::Cpu;
        let (ft, wt) = composite_tensor(
            &Tensor::new(&[sig], &d).unwrap(),
            &Tensor::from_slice(&feats, (1, 4, 2), &d).unwrap(),
            &Tensor::new(&[del], &d).unwrap(),
            &Tensor::new(&bg, &d).unwrap(),
        )
        .unwrap();
        let ft: Vec<f64> = ft.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let wt: Vec<f64> = wt.flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in fs.iter().zip(&ft) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ws.iter().zip(&wt) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
