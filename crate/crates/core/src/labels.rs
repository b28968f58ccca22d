//! Soft-label targets and the KL objective used to train classifier heads.

use crate::emotion::{BlendAnnotation, EmotionDistribution, Salience, NUM_EMOTIONS};
use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Target distribution encoding an annotation's blend ratio.
///
/// At most two entries are non-zero and they are one of `{1.0}`,
/// `{0.7, 0.3}` or `{0.5, 0.5}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabel([f64; NUM_EMOTIONS]);

impl SoftLabel {
    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    pub fn as_distribution(&self) -> EmotionDistribution {
        EmotionDistribution::new(self.0).expect("soft labels are valid distributions")
    }
}

pub fn encode_soft_label(annotation: &BlendAnnotation) -> SoftLabel {
    let mut y = [0.0; NUM_EMOTIONS];
    let p = annotation.primary().index();
    match (annotation.secondary(), annotation.salience()) {
        (Some(s), Salience::Dominant) => {
            y[p] = 0.7;
            y[s.index()] = 0.3;
        }
        (Some(s), _) => {
            y[p] = 0.5;
            y[s.index()] = 0.5;
        }
        (None, _) => y[p] = 1.0,
    }
    SoftLabel(y)
}

/// Forward KL divergence `KL(y || p)`, with `0 * ln(0 / p) = 0` and `p`
/// clamped to `[PROB_FLOOR, 1]`.
pub fn kl_loss(y: &SoftLabel, p: &[f64; NUM_EMOTIONS]) -> Result<f64> {
    if let Some(v) = p.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("probability {v} in kl_loss")));
    }
    Ok(kl_unchecked(y.values(), p))
}

pub(crate) fn kl_unchecked(y: &[f64], p: &[f64]) -> f64 {
    y.iter()
        .zip(p)
        .filter(|(&yi, _)| yi > 0.0)
        .map(|(&yi, &pi)| yi * (yi / pi.clamp(PROB_FLOOR, 1.0)).ln())
        .sum()
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient of `kl_loss(y, softmax(z))` with respect to the logits `z`,
/// which is `softmax(z) - y`.
pub fn kl_grad_logits(y: &SoftLabel, z: &[f64; NUM_EMOTIONS]) -> Result<[f64; NUM_EMOTIONS]> {
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit {v} in kl_grad_logits")));
    }
    let p = softmax(z);
    let mut g = [0.0; NUM_EMOTIONS];
    for i in 0..NUM_EMOTIONS {
        g[i] = p[i] - y.0[i];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label(a: BlendAnnotation) -> SoftLabel {
        encode_soft_label(&a)
    }

    #[test]
    fn encoding_examples() {
        use Emotion::*;
        assert_eq!(
            label(BlendAnnotation::dominant(Anger, Fear).unwrap()).values(),
            &[0.7, 0.0, 0.3, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            label(BlendAnnotation::single(Happiness)).values(),
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            label(BlendAnnotation::even(Disgust, Surprise).unwrap()).values(),
            &[0.0, 0.5, 0.0, 0.0, 0.0, 0.5]
        );
    }

    #[test]
    fn kl_examples() {
        let y = label(BlendAnnotation::dominant(Emotion::Anger, Emotion::Fear).unwrap());
        assert_eq!(kl_loss(&y, y.values()).unwrap(), 0.0);

        // 0.7 ln 4.2 + 0.3 ln 1.8, evaluated with mpmath at 30 digits
        let uniform = [1.0 / 6.0; 6];
        assert_abs_diff_eq!(
            kl_loss(&y, &uniform).unwrap(),
            1.180_895_167_173_161_5,
            epsilon = 1e-12
        );

        let happy = label(BlendAnnotation::single(Emotion::Happiness));
        let p = [0.1, 0.1, 0.1, 0.5, 0.1, 0.1];
        assert_abs_diff_eq!(kl_loss(&happy, &p).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);

        assert!(kl_loss(&y, &[f64::NAN, 0.0, 0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn kl_is_finite_on_saturated_predictions() {
        let y = label(BlendAnnotation::dominant(Emotion::Anger, Emotion::Fear).unwrap());
        let p = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let v = kl_loss(&y, &p).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn gradient_examples() {
        let y = label(BlendAnnotation::dominant(Emotion::Anger, Emotion::Fear).unwrap());
        let g = kl_grad_logits(&y, &[0.0; 6]).unwrap();
        let s = 1.0 / 6.0;
        let expected = [s - 0.7, s, s - 0.3, s, s, s];
        for (a, b) in g.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }

        // y equal to softmax(z): logits ln(y) on the support, very negative elsewhere
        let even = label(BlendAnnotation::even(Emotion::Sadness, Emotion::Fear).unwrap());
        let z = [-800.0, -800.0, 0.0, -800.0, 0.0, -800.0];
        let g = kl_grad_logits(&even, &z).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-300));

        assert!(kl_grad_logits(&even, &[f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    fn central_difference(y: &SoftLabel, z: &[f64; 6], i: usize, h: f64) -> f64 {
        let mut plus = *z;
        let mut minus = *z;
        plus[i] += h;
        minus[i] -= h;
        let fp = kl_unchecked(y.values(), &softmax(&plus));
        let fm = kl_unchecked(y.values(), &softmax(&minus));
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = Emotion::ALL[rng.random_range(0..6)];
            let b = Emotion::ALL[(a.index() + rng.random_range(1..6)) % 6];
            let ann = match rng.random_range(0..3) {
                0 => BlendAnnotation::single(a),
                1 => BlendAnnotation::dominant(a, b).unwrap(),
                _ => BlendAnnotation::even(a, b).unwrap(),
            };
            let y = label(ann);
            let z: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let g = kl_grad_logits(&y, &z).unwrap();
            for i in 0..6 {
                let num = central_difference(&y, &z, i, 1e-5);
                let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
                assert!(rel <= 1e-5, "component {i}: analytic {} vs numeric {num}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            a in 0usize..6, b in 1usize..6, kind in 0u8..3,
            raw in prop::array::uniform6(1e-6f64..1.0),
        ) {
            let ea = Emotion::ALL[a];
            let eb = Emotion::ALL[(a + b) % 6];
            let ann = match kind {
                0 => BlendAnnotation::single(ea),
                1 => BlendAnnotation::dominant(ea, eb).unwrap(),
                _ => BlendAnnotation::even(ea, eb).unwrap(),
            };
            let y = label(ann);
            let s: f64 = y.values().iter().sum();
            prop_assert_eq!(s, 1.0);
            prop_assert!(y.values().iter().filter(|v| **v > 0.0).count() <= 2);
            let total: f64 = raw.iter().sum();
            let p = raw.map(|v| v / total);
            prop_assert!(kl_loss(&y, &p).unwrap() >= -1e-12);
        }
    }
}
