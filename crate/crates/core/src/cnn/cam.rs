use serde::{Deserialize, Serialize};

use super::model::{forward, DenseNet, Mode};
use super::{Batch, CnnError};
use crate::cohort::Label;
use crate::scalar::Scalar;
use crate::stats::{ci95_half_width, mean};

/// Saliency over input positions, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamMap {
    pub intensities: Vec<f64>,
    /// The logit that was explained.
    pub class: Label,
}

/// Min-max normalization; a constant positive map becomes all ones and an
/// all-zero map stays zero.
pub fn normalize_cam(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else if hi == lo {
        values.iter_mut().for_each(|v| *v = 1.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
}

/// Linear interpolation of `src` onto `len` positions, aligning sample
/// centers.
fn upsample(src: &[f64], len: usize) -> Vec<f64> {
    let m = src.len();
    if m == 1 {
        return vec![src[0]; len];
    }
    (0..len)
        .map(|x| {
            let u = ((x as f64 + 0.5) * m as f64 / len as f64 - 0.5).clamp(0.0, (m - 1) as f64);
            let i = (u.floor() as usize).min(m - 2);
            let f = u - i as f64;
            src[i] * (1.0 - f) + src[i + 1] * f
        })
        .collect()
}

/// `normalize(upsample(relu(sum_k alpha_k A_k)))` for one map `A` laid out
/// `[channels, length]`.
pub fn cam_from_activations<T: Scalar>(activations: &[T], alpha: &[T], input_length: usize, class: Label) -> CamMap {
    let c = alpha.len();
    let len = activations.len() / c;
    let raw: Vec<f64> = (0..len)
        .map(|l| {
            let s: T = (0..c).map(|k| alpha[k] * activations[k * len + l]).sum();
            s.to_f64_lossy().max(0.0)
        })
        .collect();
    let mut intensities = upsample(&raw, input_length);
    normalize_cam(&mut intensities);
    CamMap { intensities, class }
}

/// Grad-CAM for every row of `batch` (eval mode). The map is the final
/// batch-normalized, rectified feature map; the gradient of the target logit
/// with respect to it is the classifier row spread evenly by the average
/// pool, so `alpha_k = W[target, k] / length`.
pub fn grad_cam_batch<T: Scalar>(net: &DenseNet<T>, batch: &Batch<T>, target: Label) -> Result<Vec<CamMap>, CnnError> {
    let out = forward(net, batch, Mode::Eval)?;
    let fc = net.config.final_channels();
    let fl = net.config.final_length();
    let t = target.class_index();
    let inv = T::one() / T::from_usize_lossy(fl);
    let alpha: Vec<T> = net.weights.fc_w[t * fc..(t + 1) * fc]
        .iter()
        .map(|&w| w * inv)
        .collect();
    let a = out.cache.final_activations();
    Ok((0..batch.n)
        .map(|b| {
            cam_from_activations(
                &a[b * fc * fl..(b + 1) * fc * fl],
                &alpha,
                net.config.input_length,
                target,
            )
        })
        .collect())
}

pub fn grad_cam<T: Scalar>(net: &DenseNet<T>, instance: &[T], target: Label) -> Result<CamMap, CnnError> {
    let batch = Batch::from_rows(&[instance], net.config.input_channels, net.config.input_length)?;
    Ok(grad_cam_batch(net, &batch, target)?.remove(0))
}

/// Position-wise mean and 95% t-interval half-width of a class's maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamSummary {
    pub class: Label,
    pub n: usize,
    pub mean: Vec<f64>,
    pub ci95: Vec<f64>,
}

pub fn summarize_cams(class: Label, maps: &[CamMap]) -> Result<CamSummary, CnnError> {
    if maps.len() < 2 {
        return Err(CnnError::InsufficientSamples {
            needed: 2,
            got: maps.len(),
        });
    }
    let len = maps[0].intensities.len();
    let mut m = Vec::with_capacity(len);
    let mut ci = Vec::with_capacity(len);
    let mut column = vec![0.0; maps.len()];
    for p in 0..len {
        for (c, map) in column.iter_mut().zip(maps) {
            *c = map.intensities[p];
        }
        m.push(mean(&column));
        ci.push(ci95_half_width(&column));
    }
    Ok(CamSummary {
        class,
        n: maps.len(),
        mean: m,
        ci95: ci,
    })
}

/// Class-averaged Grad-CAM: each group's instances are explained for the
/// group's own class.
pub fn average_cam<T: Scalar>(net: &DenseNet<T>, groups: &[(Label, Vec<Vec<T>>)]) -> Result<Vec<CamSummary>, CnnError> {
    groups
        .iter()
        .map(|(label, rows)| {
            if rows.len() < 2 {
                return Err(CnnError::InsufficientSamples {
                    needed: 2,
                    got: rows.len(),
                });
            }
            let mut maps = Vec::with_capacity(rows.len());
            for chunk in rows.chunks(64) {
                let refs: Vec<&[T]> = chunk.iter().map(Vec::as_slice).collect();
                let batch = Batch::from_rows(&refs, net.config.input_channels, net.config.input_length)?;
                maps.extend(grad_cam_batch(net, &batch, *label)?);
            }
            summarize_cams(*label, &maps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_edge_cases() {
        let mut z = vec![0.0; 5];
        normalize_cam(&mut z);
        assert_eq!(z, vec![0.0; 5]);
        let mut c = vec![0.3; 5];
        normalize_cam(&mut c);
        assert_eq!(c, vec![1.0; 5]);
        let mut r = vec![1.0, 3.0, 2.0];
        normalize_cam(&mut r);
        assert_eq!(r, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn upsample_preserves_constants_and_endpoints() {
        assert_eq!(upsample(&[2.0, 2.0, 2.0], 12), vec![2.0; 12]);
        let u = upsample(&[0.0, 1.0], 4);
        assert_eq!(u, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn summary_of_two_maps() {
        let a = CamMap {
            intensities: vec![0.0, 1.0],
            class: Label::Ards,
        };
        let b = CamMap {
            intensities: vec![1.0, 1.0],
            class: Label::Ards,
        };
        let s = summarize_cams(Label::Ards, &[a.clone(), b]).unwrap();
        assert_eq!(s.mean, vec![0.5, 1.0]);
        assert_eq!(s.ci95[1], 0.0);
        assert!(summarize_cams(Label::Ards, &[a]).is_err());
    }
}
