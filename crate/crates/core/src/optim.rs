//! SGD with Nesterov momentum and the SGDR warm-restart cosine schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Cosine annealing with warm restarts. Cycle `c` lasts `t0·t_mult^c` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdrSchedule {
    pub l_max: f64,
    pub l_min: f64,
    pub t0: u64,
    pub t_mult: u64,
}

impl Default for SgdrSchedule {
    fn default() -> Self {
        SgdrSchedule {
            l_max: 0.1,
            l_min: 0.0,
            t0: 1,
            t_mult: 2,
        }
    }
}

/// Where an epoch position falls in the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclePosition {
    pub cycle: u32,
    pub length: f64,
    pub t: f64,
}

impl SgdrSchedule {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.t0 >= 1, Config, "T0 must be at least 1");
        ensure!(self.t_mult >= 1, Config, "Tmult must be at least 1");
        ensure!(
            self.l_min >= 0.0 && self.l_max >= self.l_min && self.l_max.is_finite(),
            Config,
            "need 0 <= l_min <= l_max, got l_min={} l_max={}",
            self.l_min,
            self.l_max
        );
        Ok(())
    }

    /// Epochs needed to finish the first `cycles` cycles.
    pub fn total_epochs(&self, cycles: u32) -> u64 {
        (0..cycles).map(|c| self.t0 * self.t_mult.pow(c)).sum()
    }

    pub fn locate(&self, epoch_frac: f64) -> CyclePosition {
        let mut start = 0.0;
        let mut len = self.t0 as f64;
        let mut cycle = 0;
        while epoch_frac >= start + len {
            start += len;
            len *= self.t_mult as f64;
            cycle += 1;
        }
        CyclePosition {
            cycle,
            length: len,
            t: epoch_frac - start,
        }
    }

    pub fn lr_at(&self, epoch_frac: f64) -> f64 {
        let pos = self.locate(epoch_frac.max(0.0));
        if pos.t == 0.0 {
            return self.l_max;
        }
        let lr = self.l_min + 0.5 * (self.l_max - self.l_min) * (1.0 + (PI * pos.t / pos.length).cos());
        lr.clamp(self.l_min, self.l_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl MomentumState {
    pub fn new(params: &[Tensor], momentum: f64, weight_decay: f64) -> Self {
        MomentumState {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// `v ← m·v − lr·g`, then `p ← p + m·v − lr·g`. Gradients are read from each
/// parameter's `grad`; parameters without one are left untouched. Nothing is
/// modified if any gradient holds a NaN or infinity.
pub fn nesterov_step(params: &mut [Tensor], state: &mut MomentumState, lr: f64) -> Result<()> {
    ensure!(
        params.len() == state.velocity.len(),
        Contract,
        "{} parameters but {} velocity buffers",
        params.len(),
        state.velocity.len()
    );
    for (i, p) in params.iter().enumerate() {
        ensure!(
            state.velocity[i].len() == p.numel(),
            Contract,
            "velocity {i} has {} entries for a parameter of {}",
            state.velocity[i].len(),
            p.numel()
        );
        if let Some(g) = p.grad() {
            ensure!(
                g.iter().all(|v| v.is_finite()),
                Numeric,
                "non-finite gradient in parameter {i}; step refused"
            );
        }
    }
    let (m, wd) = (state.momentum, state.weight_decay);
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        let Some(g) = p.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for ((x, vi), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            let g = if wd != 0.0 { gi + wd * *x } else { gi };
            *vi = m * *vi - lr * g;
            *x += m * *vi - lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restarts_and_midpoints() {
        let s = SgdrSchedule::default();
        let mut start = 0u64;
        for c in 0..9 {
            let len = 1u64 << c;
            assert_eq!(s.lr_at(start as f64), 0.1);
            assert!((s.lr_at(start as f64 + len as f64 / 2.0) - 0.05).abs() < 1e-12);
            start += len;
        }
        assert_eq!(start, 511);
        assert_eq!(s.total_epochs(9), 511);
        assert_eq!(s.total_epochs(4), 15);
    }

    #[test]
    fn lr_stays_in_range() {
        let s = SgdrSchedule {
            l_min: 0.01,
            ..Default::default()
        };
        for i in 0..2000 {
            let lr = s.lr_at(i as f64 * 0.0137);
            assert!((0.01..=0.1).contains(&lr));
        }
    }

    #[test]
    fn locate_cycles() {
        let s = SgdrSchedule::default();
        assert_eq!(s.locate(0.5).cycle, 0);
        let p = s.locate(2.0);
        assert_eq!((p.cycle, p.length, p.t), (1, 2.0, 1.0));
        assert_eq!(s.locate(3.0).cycle, 2);
    }

    fn scalar_param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::scalar(v);
        t.set_grad(vec![g]).unwrap();
        t
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = vec![scalar_param(1.5, 0.3)];
        let mut st = MomentumState::new(&p, 0.0, 0.0);
        nesterov_step(&mut p, &mut st, 0.1).unwrap();
        assert_eq!(p[0].item().unwrap(), 1.5 - 0.1 * 0.3);
    }

    #[test]
    fn zero_grad_decays_velocity() {
        let mut p = vec![scalar_param(0.0, 0.0)];
        let mut st = MomentumState::new(&p, 0.9, 0.0);
        st.velocity[0][0] = 1.0;
        for k in 1..=5 {
            nesterov_step(&mut p, &mut st, 0.1).unwrap();
            assert!((st.velocity[0][0] - 0.9f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = vec![scalar_param(1.0, 1.0)];
        let mut st = MomentumState::new(&p, 0.9, 0.0);
        let mut steps = 0;
        while p[0].item().unwrap().abs() >= 1e-6 {
            let x = p[0].item().unwrap();
            p[0].set_grad(vec![x]).unwrap();
            nesterov_step(&mut p, &mut st, 0.1).unwrap();
            steps += 1;
            assert!(steps <= 200, "no convergence after 200 steps");
        }
    }

    #[test]
    fn nan_gradient_refused() {
        let mut p = vec![scalar_param(1.0, 0.5), scalar_param(2.0, f64::NAN)];
        let mut st = MomentumState::new(&p, 0.9, 0.0);
        assert!(matches!(nesterov_step(&mut p, &mut st, 0.1), Err(crate::Error::Numeric(_))));
        assert_eq!(p[0].item().unwrap(), 1.0);
    }
}
