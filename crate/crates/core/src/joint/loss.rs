use crate::error::{ensure, Result};
use crate::tensor::{ops, Tensor};

/// One-hot target scaled by the sample's weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelVector {
    pub class: usize,
    pub num_classes: usize,
    pub weight: f64,
}

impl LabelVector {
    pub fn new(class: usize, num_classes: usize, weight: f64) -> Result<Self> {
        ensure!(class < num_classes, Contract, "class {class} out of range for {num_classes}");
        ensure!(weight > 0.0, Contract, "sample weight must be positive, got {weight}");
        Ok(LabelVector {
            class,
            num_classes,
            weight,
        })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = 1.0;
        v
    }

    /// `weight × one_hot`
    pub fn scaled(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = self.weight;
        v
    }
}

/// Batch mean of `−Σ_t y'_t · log y_t` with `y'` the weight-scaled one-hot label.
/// Probabilities under [`ops::LOG_CLAMP`] are clamped and counted.
pub fn weighted_cross_entropy(probs: &Tensor, labels: &[LabelVector]) -> Result<f64> {
    let (n, c) = probs.dims2()?;
    ensure!(labels.len() == n, Contract, "{} labels for {n} rows", labels.len());
    ensure!(
        labels.iter().all(|l| l.num_classes == c),
        Contract,
        "label width does not match {c} classes"
    );
    let targets: Vec<usize> = labels.iter().map(|l| l.class).collect();
    let weights: Vec<f64> = labels.iter().map(|l| l.weight).collect();
    ops::weighted_nll(probs, &targets, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(classes: &[usize], c: usize, w: f64) -> Vec<LabelVector> {
        classes.iter().map(|&k| LabelVector::new(k, c, w).unwrap()).collect()
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(weighted_cross_entropy(&p, &labels(&[0, 2], 3, 3.5)).unwrap(), 0.0);
    }

    #[test]
    fn uniform_probs_give_log_c() {
        let p = Tensor::filled(&[4, 5], 0.2);
        let l = weighted_cross_entropy(&p, &labels(&[0, 1, 2, 3], 5, 1.0)).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_single_sample() {
        let p = Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let l = weighted_cross_entropy(&p, &labels(&[0], 2, 2.5)).unwrap();
        // closed form 2.5·(−ln 0.8)
        assert!((l - 2.5 * -(0.8f64).ln()).abs() < 1e-12);
        assert!((l - 0.557859).abs() < 1e-6);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let before = ops::clamped_log_count();
        let l = weighted_cross_entropy(&p, &labels(&[1], 2, 1.0)).unwrap();
        assert!((l + ops::LOG_CLAMP.ln()).abs() < 1e-9);
        assert!(ops::clamped_log_count() > before);
    }

    #[test]
    fn scaled_label_equals_loss_multiplier() {
        let p = Tensor::new(vec![2, 3], vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]).unwrap();
        let ls = vec![
            LabelVector::new(1, 3, 0.7).unwrap(),
            LabelVector::new(2, 3, 1.9).unwrap(),
        ];
        // Direct evaluation of −Σ y'_t log y_t with dense scaled labels.
        let dense: f64 = ls
            .iter()
            .zip(p.data().chunks(3))
            .map(|(l, row)| -l.scaled().iter().zip(row).map(|(y, q)| y * q.ln()).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((weighted_cross_entropy(&p, &ls).unwrap() - dense).abs() < 1e-15);
        assert_eq!(ls[0].one_hot().iter().sum::<f64>(), 1.0);
    }
}
