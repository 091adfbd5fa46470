//! Local attention fusion: per-pixel softmax over all (frame, spatial
//! offset within a radius) candidates, with dot-product key matching.

use ndarray::Array3;
use rand::Rng;

use super::conv::Conv2d;
use super::{FeatureMap, KernelError};

/// Key projector and window configuration for attention fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSpec {
    /// 1x1 projection from feature channels to key dimension D.
    pub key_projector: Conv2d,
    /// Local window half-width in pixels.
    pub radius: usize,
}

impl AttentionSpec {
    pub fn zeros(channels: usize, key_dim: usize, radius: usize) -> Self {
        AttentionSpec {
            key_projector: Conv2d::zeros(key_dim, channels, 1, 1),
            radius,
        }
    }

    pub fn seeded(channels: usize, key_dim: usize, radius: usize, rng: &mut impl Rng) -> Self {
        AttentionSpec {
            key_projector: Conv2d::seeded(key_dim, channels, 1, 1, rng),
            radius,
        }
    }
}

fn check_stack(maps: &[Array3<f64>]) -> Result<(usize, usize, usize), KernelError> {
    let first = maps
        .first()
        .ok_or(KernelError::EmptyWindow)?;
    let shape = first.shape();
    if maps.iter().any(|m| m.shape() != shape) {
        return Err(KernelError::ShapeMismatch(
            "all frames must share a shape".into(),
        ));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// The candidate set for output pixel `(m, n)`: every frame crossed with
/// every in-bounds location within the radius. Logit = key_i(u, v) .
/// key_center(m, n); plain dot products, no scaling.
fn candidate_logits(
    keys: &[Array3<f64>],
    radius: usize,
    center_frame: usize,
    m: usize,
    n: usize,
) -> Vec<(usize, usize, usize, f64)> {
    let (d, h, w) = (keys[0].shape()[0], keys[0].shape()[1], keys[0].shape()[2]);
    let r = radius as isize;
    let mut out = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        for du in -r..=r {
            let u = m as isize + du;
            if u < 0 || u >= h as isize {
                continue;
            }
            for dv in -r..=r {
                let v = n as isize + dv;
                if v < 0 || v >= w as isize {
                    continue;
                }
                let (u, v) = (u as usize, v as usize);
                let mut dot = 0.0;
                for c in 0..d {
                    dot += key[[c, u, v]] * keys[center_frame][[c, m, n]];
                }
                out.push((i, u, v, dot));
            }
        }
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Attention fusion with explicit keys; the candidate set of each output
/// pixel is softmax-normalized and the neighbor features are sampled at
/// the candidate locations.
pub fn fuse_with_keys(
    features: &[Array3<f64>],
    keys: &[Array3<f64>],
    radius: usize,
    center_frame: usize,
) -> Result<Array3<f64>, KernelError> {
    let (c, h, w) = check_stack(features)?;
    let (_, kh, kw) = check_stack(keys)?;
    if keys.len() != features.len() || kh != h || kw != w {
        return Err(KernelError::ShapeMismatch(
            "keys must be one per frame with matching spatial size".into(),
        ));
    }
    let mut out = Array3::zeros((c, h, w));
    for m in 0..h {
        for n in 0..w {
            let cands = candidate_logits(keys, radius, center_frame, m, n);
            if cands.is_empty() {
                return Err(KernelError::EmptyWindow);
            }
            let probs = softmax(&cands.iter().map(|&(_, _, _, l)| l).collect::<Vec<_>>());
            for ((i, u, v, _), p) in cands.iter().zip(probs.iter()) {
                for ch in 0..c {
                    out[[ch, m, n]] += p * features[*i][[ch, *u, *v]];
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `sum(cotangent * output)` with respect to the keys, via
/// the softmax adjoint. Returns one gradient tensor per frame.
pub fn fuse_key_gradients(
    features: &[Array3<f64>],
    keys: &[Array3<f64>],
    radius: usize,
    center_frame: usize,
    cotangent: &Array3<f64>,
) -> Result<Vec<Array3<f64>>, KernelError> {
    let (c, h, w) = check_stack(features)?;
    let d = keys[0].shape()[0];
    let mut grads: Vec<Array3<f64>> = keys.iter().map(|k| Array3::zeros(k.raw_dim())).collect();
    for m in 0..h {
        for n in 0..w {
            let cands = candidate_logits(keys, radius, center_frame, m, n);
            let probs = softmax(&cands.iter().map(|&(_, _, _, l)| l).collect::<Vec<_>>());
            // g_a = cot(m,n) . F_a ; dJ/dlogit_a = p_a (g_a - sum_b p_b g_b)
            let gs: Vec<f64> = cands
                .iter()
                .map(|&(i, u, v, _)| {
                    (0..c).map(|ch| cotangent[[ch, m, n]] * features[i][[ch, u, v]]).sum()
                })
                .collect();
            let mean: f64 = probs.iter().zip(gs.iter()).map(|(p, g)| p * g).sum();
            for ((&(i, u, v, _), &p), &g) in cands.iter().zip(probs.iter()).zip(gs.iter()) {
                let dlogit = p * (g - mean);
                for ch in 0..d {
                    grads[i][[ch, u, v]] += dlogit * keys[center_frame][[ch, m, n]];
                    grads[center_frame][[ch, m, n]] += dlogit * keys[i][[ch, u, v]];
                }
            }
        }
    }
    Ok(grads)
}

/// Softmax probabilities of one output pixel's candidate set, for
/// property checks. Returns `(frame, u, v, probability)` tuples.
pub fn attention_probabilities(
    keys: &[Array3<f64>],
    radius: usize,
    center_frame: usize,
    m: usize,
    n: usize,
) -> Vec<(usize, usize, usize, f64)> {
    let cands = candidate_logits(keys, radius, center_frame, m, n);
    let probs = softmax(&cands.iter().map(|&(_, _, _, l)| l).collect::<Vec<_>>());
    cands
        .into_iter()
        .zip(probs)
        .map(|((i, u, v, _), p)| (i, u, v, p))
        .collect()
}

/// Full fusion op: project keys from the aligned features, then fuse.
/// The center frame is the middle of the (odd-length) window.
pub fn local_attention_fuse(
    aligned: &[FeatureMap],
    spec: &AttentionSpec,
) -> Result<FeatureMap, KernelError> {
    if aligned.is_empty() {
        return Err(KernelError::EmptyWindow);
    }
    if aligned.len() % 2 == 0 {
        return Err(KernelError::LengthMismatch(
            "attention window length must be odd".into(),
        ));
    }
    let values: Vec<Array3<f64>> = aligned.iter().map(|f| f.values.clone()).collect();
    let keys: Vec<Array3<f64>> = aligned
        .iter()
        .map(|f| spec.key_projector.forward(&f.values))
        .collect::<Result<_, _>>()?;
    let center = aligned.len() / 2;
    Ok(FeatureMap::new(fuse_with_keys(
        &values,
        &keys,
        spec.radius,
        center,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_stack(t: usize, c: usize, h: usize, w: usize, seed: u64) -> Vec<Array3<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn equal_keys_average_all_candidates() {
        let features = random_stack(3, 2, 4, 4, 1);
        let keys: Vec<Array3<f64>> = (0..3).map(|_| Array3::from_elem((2, 4, 4), 0.5)).collect();
        let out = fuse_with_keys(&features, &keys, 1, 1).unwrap();
        // At an interior pixel, output = arithmetic mean over 3 frames x 9
        // window positions.
        let (m, n) = (2, 2);
        for ch in 0..2 {
            let mut mean = 0.0;
            for f in &features {
                for u in 1..=3 {
                    for v in 1..=3 {
                        mean += f[[ch, u, v]];
                    }
                }
            }
            mean /= 27.0;
            assert!((out[[ch, m, n]] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_softmax_selects_the_argmax_candidate() {
        let features = random_stack(3, 2, 4, 4, 2);
        let mut keys = random_stack(3, 3, 4, 4, 3);
        for k in keys.iter_mut() {
            for v in k.iter_mut() {
                *v *= 50.0;
            }
        }
        let out = fuse_with_keys(&features, &keys, 1, 1).unwrap();
        for m in 0..4 {
            for n in 0..4 {
                let probs = attention_probabilities(&keys, 1, 1, m, n);
                let best = probs
                    .iter()
                    .max_by(|a, b| a.3.partial_cmp(&b.3).unwrap())
                    .unwrap();
                for ch in 0..2 {
                    let argmax = features[best.0][[ch, best.1, best.2]];
                    assert!(
                        (out[[ch, m, n]] - argmax).abs() < 1e-3,
                        "softmax not saturated at ({m},{n})"
                    );
                }
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let keys = random_stack(3, 4, 6, 6, 4);
        for m in 0..6 {
            for n in 0..6 {
                let total: f64 = attention_probabilities(&keys, 2, 1, m, n)
                    .iter()
                    .map(|&(_, _, _, p)| p)
                    .sum();
                assert!((total - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn large_radius_equals_global_attention() {
        let features = random_stack(3, 2, 8, 8, 5);
        let keys = random_stack(3, 3, 8, 8, 6);
        let local = fuse_with_keys(&features, &keys, 8, 1).unwrap();
        // Brute-force global attention: every frame, every location.
        let (c, h, w) = (2, 8usize, 8usize);
        for m in 0..h {
            for n in 0..w {
                let mut logits = Vec::new();
                let mut cands = Vec::new();
                for (i, key) in keys.iter().enumerate() {
                    for u in 0..h {
                        for v in 0..w {
                            let dot: f64 =
                                (0..3).map(|d| key[[d, u, v]] * keys[1][[d, m, n]]).sum();
                            logits.push(dot);
                            cands.push((i, u, v));
                        }
                    }
                }
                let probs = softmax(&logits);
                for ch in 0..c {
                    let expect: f64 = cands
                        .iter()
                        .zip(probs.iter())
                        .map(|(&(i, u, v), &p)| p * features[i][[ch, u, v]])
                        .sum();
                    assert!((local[[ch, m, n]] - expect).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_features_are_reproduced_exactly_up_to_roundoff() {
        let features: Vec<Array3<f64>> =
            (0..3).map(|_| Array3::from_elem((2, 4, 4), 1.25)).collect();
        let keys = random_stack(3, 3, 4, 4, 7);
        let out = fuse_with_keys(&features, &keys, 1, 1).unwrap();
        assert!(out.iter().all(|&v| (v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn probability_derivative_sums_to_zero() {
        // Perturbing any key element keeps the candidate probabilities a
        // distribution, so the derivative of their sum is zero.
        let keys = random_stack(3, 2, 4, 4, 8);
        let (m, n) = (2, 1);
        let cands = candidate_logits(&keys, 1, 1, m, n);
        let probs = softmax(&cands.iter().map(|&(_, _, _, l)| l).collect::<Vec<_>>());
        // d logit_a / d theta for theta = keys[0][[0, 2, 2]]:
        let dlogit: Vec<f64> = cands
            .iter()
            .map(|&(i, u, v, _)| {
                if i == 0 && (u, v) == (2, 2) {
                    keys[1][[0, m, n]]
                } else {
                    0.0
                }
            })
            .collect();
        let mean: f64 = probs.iter().zip(dlogit.iter()).map(|(p, d)| p * d).sum();
        let sum_dp: f64 = probs
            .iter()
            .zip(dlogit.iter())
            .map(|(p, d)| p * (d - mean))
            .sum();
        assert!(sum_dp.abs() <= 1e-8);
    }

    #[test]
    fn local_attention_fuse_rejects_even_windows() {
        let f: Vec<FeatureMap> = random_stack(2, 2, 4, 4, 9)
            .into_iter()
            .map(FeatureMap::new)
            .collect();
        let spec = AttentionSpec::zeros(2, 3, 1);
        assert!(local_attention_fuse(&f, &spec).is_err());
    }
}
