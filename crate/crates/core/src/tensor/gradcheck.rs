//! Central finite-difference checks of taped gradients.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::exec::Exec;
use crate::joint::HeadWeights;
use crate::nn::{Mode, MultiHeadNetwork};
use crate::seed::{stream_rng, Stream};

/// Step used by every check.
pub const FD_STEP: f64 = 1e-5;

/// Steps tried, coarsest first, when probing a whole network.
pub const STEP_LADDER: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Two successive central differences this close (relative, same floor as
/// [`rel_err`]) are taken as converged.
pub const LADDER_AGREEMENT: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, 1e-3)`. The floor keeps entries whose true
/// gradient is ~0 from turning rounding noise into a large ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Reduce `f(inputs)` to the scalar `Σ out ⊙ R` (R fixed by `seed`) and return
/// the worst relative error over every input entry.
pub fn check_op(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor], want_grad: bool| {
        let mut tape = Tape::new(Exec::Sequential);
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), want_grad)).collect();
        let out = f(&mut tape, &vars);
        let mut r = stream_rng(seed, Stream::Probe, &[]);
        let shape = tape.value(out).shape().to_vec();
        let weights = tape.leaf(Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0)), false);
        let prod = tape.mul(out, weights).expect("same shape");
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(inputs, true);
    tape.backward(loss).expect("scalar loss");
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf requires grad").to_vec())
        .collect();
    let value = |xs: &[Tensor]| {
        let (t, _, l) = eval(xs, false);
        t.value(l).item().expect("scalar")
    };
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[i][j], numeric));
        }
    }
    worst
}

/// One probed network parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Step at which the central difference converged, or the last one tried.
    pub step: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

fn combined_loss(
    net: &MultiHeadNetwork,
    x: &Tensor,
    targets: &[usize],
    weights: &[f64],
    hw: &HeadWeights,
) -> crate::Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new(Exec::Sequential);
    let fwd = net.forward_on(&mut tape, x, Mode::Train, true)?;
    let mut terms = Vec::with_capacity(fwd.heads.len());
    for (&h, &a) in fwd.heads.iter().zip(&hw.alpha) {
        terms.push((tape.weighted_nll(h, targets, weights)?, a));
    }
    let loss = tape.weighted_sum(&terms)?;
    Ok((tape, fwd.params, loss))
}

/// Probe `n` parameter entries of `net` under the combined loss `Σ α_i·L_i`
/// (training-mode batchnorm). Every parameter tensor is probed at least once.
///
/// The numeric value walks [`STEP_LADDER`] until two successive central
/// differences agree. A ReLU kink closer than the step, or strong curvature,
/// shows up as disagreement and pushes the step down. The analytic value is
/// never consulted when picking the step.
pub fn probe_network(
    net: &MultiHeadNetwork,
    x: &Tensor,
    targets: &[usize],
    weights: &[f64],
    hw: &HeadWeights,
    n: usize,
    seed: u64,
) -> crate::Result<Vec<Probe>> {
    let (mut tape, pvars, loss) = combined_loss(net, x, targets, weights, hw)?;
    tape.backward(loss)?;
    let mut r = stream_rng(seed, Stream::Probe, &[1]);
    let count = net.params().len();
    let mut picks: Vec<(usize, usize)> = (0..count)
        .map(|p| (p, r.random_range(0..net.params()[p].numel())))
        .collect();
    while picks.len() < n.max(count) {
        let p = r.random_range(0..count);
        picks.push((p, r.random_range(0..net.params()[p].numel())));
    }
    let loss_at = |net: &MultiHeadNetwork| -> crate::Result<f64> {
        let (t, _, l) = combined_loss(net, x, targets, weights, hw)?;
        t.value(l).item()
    };
    picks
        .into_iter()
        .map(|(p, j)| {
            let central = |h: f64| -> crate::Result<f64> {
                let mut plus = net.clone();
                plus.params_mut()[p].data_mut()[j] += h;
                let mut minus = net.clone();
                minus.params_mut()[p].data_mut()[j] -= h;
                Ok((loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h))
            };
            let mut prev = central(STEP_LADDER[0])?;
            let mut numeric = prev;
            let mut step = STEP_LADDER[0];
            for &h in &STEP_LADDER[1..] {
                let d = central(h)?;
                numeric = d;
                step = h;
                if rel_err(prev, d) < LADDER_AGREEMENT {
                    break;
                }
                prev = d;
            }
            Ok(Probe {
                param: net.param_names()[p].clone(),
                index: j,
                analytic: tape.grad(pvars[p]).map_or(0.0, |g| g[j]),
                numeric,
                step,
            })
        })
        .collect()
}
