//! Soft-Dice + binary cross-entropy over the three slices of a sequence.

use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, softplus, Tensor};
use crate::error::{Error, Result};
use crate::metrics::EPSILON_SMOOTH;
use crate::volume::Slice2D;

/// Smallest probability distance from 0 and 1 used when the loss is
/// evaluated on probabilities rather than logits.
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 1.0, bce: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `1 - mean soft-Dice`, in `[0, 1]`.
    pub dice_term: f64,
    /// Mean per-pixel binary cross-entropy.
    pub bce_term: f64,
}

fn check_targets(targets: &[Slice2D], dims: &[(usize, usize)]) -> Result<()> {
    if targets.len() != dims.len() {
        return Err(Error::Shape(format!("{} targets for {} predictions", targets.len(), dims.len())));
    }
    for (t, &(w, h)) in targets.iter().zip(dims) {
        if t.width != w || t.height != h {
            return Err(Error::Shape("target and prediction differ in size".into()));
        }
        if !t.is_binary() {
            return Err(Error::Validation("loss target mask is not binary".into()));
        }
    }
    Ok(())
}

fn soft_dice(p: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s = p.iter().sum::<f64>() + g.iter().sum::<f64>() + EPSILON_SMOOTH;
    let i2 = 2.0 * inter + EPSILON_SMOOTH;
    (i2 / s, i2, s)
}

/// Loss of predicted probability maps against binary targets.
pub fn loss(pred: &[Slice2D], targets: &[Slice2D], w: LossWeights) -> Result<LossBreakdown> {
    let dims: Vec<(usize, usize)> = pred.iter().map(|p| (p.width, p.height)).collect();
    check_targets(targets, &dims)?;
    let k = pred.len() as f64;
    let mut dice = 0.0;
    let mut bce = 0.0;
    for (p, g) in pred.iter().zip(targets) {
        dice += soft_dice(&p.data, &g.data).0;
        let n = p.data.len() as f64;
        bce += p
            .data
            .iter()
            .zip(&g.data)
            .map(|(&pv, &gv)| {
                let pv = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(gv * pv.ln() + (1.0 - gv) * (1.0 - pv).ln())
            })
            .sum::<f64>()
            / n;
    }
    let dice_term = 1.0 - dice / k;
    let bce_term = bce / k;
    Ok(LossBreakdown {
        total: w.dice * dice_term + w.bce * bce_term,
        dice_term,
        bce_term,
    })
}

/// Loss from head logits together with its gradient with respect to them.
pub fn loss_from_logits(logits: &[Tensor], targets: &[Slice2D], w: LossWeights) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let dims: Vec<(usize, usize)> = logits.iter().map(|z| (z.w, z.h)).collect();
    check_targets(targets, &dims)?;
    let k = logits.len() as f64;
    let mut dice = 0.0;
    let mut bce = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, g) in logits.iter().zip(targets) {
        let n = z.data.len() as f64;
        let p: Vec<f64> = z.data.iter().map(|&v| sigmoid(v)).collect();
        let (d, i2, s) = soft_dice(&p, &g.data);
        dice += d;
        bce += z.data.iter().zip(&g.data).map(|(&zv, &gv)| softplus(zv) - gv * zv).sum::<f64>() / n;
        let grad: Vec<f64> = p
            .iter()
            .zip(&g.data)
            .map(|(&pv, &gv)| {
                let ddice_dp = (2.0 * gv * s - i2) / (s * s);
                let dice_part = -w.dice / k * ddice_dp * pv * (1.0 - pv);
                let bce_part = w.bce * (pv - gv) / (k * n);
                dice_part + bce_part
            })
            .collect();
        grads.push(Tensor::from_data(1, z.h, z.w, grad));
    }
    let dice_term = 1.0 - dice / k;
    let bce_term = bce / k;
    Ok((
        LossBreakdown {
            total: w.dice * dice_term + w.bce * bce_term,
            dice_term,
            bce_term,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_maps(rng: &mut impl Rng, w: usize, h: usize) -> (Vec<Slice2D>, Vec<Slice2D>) {
        let p = (0..3).map(|_| Slice2D::new(w, h, (0..w * h).map(|_| rng.gen_range(0.01..0.99)).collect()).unwrap()).collect();
        let g = (0..3).map(|_| Slice2D::new(w, h, (0..w * h).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect()).unwrap()).collect();
        (p, g)
    }

    #[test]
    fn perfect_prediction_has_no_dice_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, g) = rand_maps(&mut rng, 6, 6);
        let l = loss(&g, &g, LossWeights::default()).unwrap();
        assert!(l.dice_term.abs() < 1e-6);
        assert!(l.bce_term < 1e-9);
    }

    #[test]
    fn half_probability_on_empty_target() {
        let p = vec![Slice2D::filled(4, 4, 0.5); 3];
        let g = vec![Slice2D::filled(4, 4, 0.0); 3];
        let l = loss(&p, &g, LossWeights::default()).unwrap();
        assert!((l.bce_term - 2f64.ln()).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&l.dice_term));
    }

    #[test]
    fn matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, g) = rand_maps(&mut rng, 5, 7);
        let w = LossWeights { dice: 0.7, bce: 1.3 };
        let l = loss(&p, &g, w).unwrap();
        let mut dsum = 0.0;
        let mut bsum = 0.0;
        for t in 0..3 {
            let (mut inter, mut sp, mut sg, mut b) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..35 {
                let (pv, gv) = (p[t].data[i], g[t].data[i]);
                inter += pv * gv;
                sp += pv;
                sg += gv;
                b -= if gv > 0.5 { pv.ln() } else { (1.0 - pv).ln() };
            }
            dsum += (2.0 * inter + 1e-5) / (sp + sg + 1e-5);
            bsum += b / 35.0;
        }
        let expect = 0.7 * (1.0 - dsum / 3.0) + 1.3 * bsum / 3.0;
        assert!((l.total - expect).abs() < 1e-12);
    }

    #[test]
    fn logit_form_agrees_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: Vec<Tensor> = (0..3)
            .map(|_| Tensor::from_data(1, 4, 5, (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect()))
            .collect();
        let g: Vec<Slice2D> = (0..3)
            .map(|_| Slice2D::new(5, 4, (0..20).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).unwrap())
            .collect();
        let w = LossWeights { dice: 1.0, bce: 0.5 };
        let probs: Vec<Slice2D> = z
            .iter()
            .map(|t| Slice2D::new(5, 4, t.data.iter().map(|&v| sigmoid(v)).collect()).unwrap())
            .collect();
        let (lz, grad) = loss_from_logits(&z, &g, w).unwrap();
        assert!((lz.total - loss(&probs, &g, w).unwrap().total).abs() < 1e-12);
        let h = 1e-6;
        for (t, i) in [(0, 0), (1, 7), (2, 19)] {
            let mut zp = z.clone();
            zp[t].data[i] += h;
            let mut zm = z.clone();
            zm[t].data[i] -= h;
            let fd = (loss_from_logits(&zp, &g, w).unwrap().0.total - loss_from_logits(&zm, &g, w).unwrap().0.total) / (2.0 * h);
            assert!((fd - grad[t].data[i]).abs() < 1e-8, "{fd} vs {}", grad[t].data[i]);
        }
    }

    #[test]
    fn rejects_soft_targets() {
        let p = vec![Slice2D::filled(2, 2, 0.5); 3];
        let g = vec![Slice2D::filled(2, 2, 0.5); 3];
        assert!(loss(&p, &g, LossWeights::default()).is_err());
    }
}
