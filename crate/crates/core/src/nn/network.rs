use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, BlockKind};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::seed::{stream_rng, Stream};
use crate::tensor::{BatchStats, Tape, Tensor, Var};

/// Which auxiliary head gets α index 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadOrder {
    /// Index grows from the deepest auxiliary part toward the input.
    #[default]
    DeepFirst,
    /// Index 2 is the shallowest attached part.
    ShallowFirst,
}

impl std::str::FromStr for HeadOrder {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep-first" => Ok(HeadOrder::DeepFirst),
            "shallow-first" => Ok(HeadOrder::ShallowFirst),
            _ => Err(crate::Error::Config(format!("unknown head order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub m: usize,
    pub order: HeadOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm.
    Train,
    /// Running statistics in batchnorm.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    weight: usize,
    bn: Bn,
    pad: usize,
}

#[derive(Debug, Clone)]
enum Unit {
    Pool,
    Plain(ConvBn),
    Residual {
        first: ConvBn,
        second: ConvBn,
        proj: Option<ConvBn>,
    },
}

#[derive(Debug, Clone)]
struct Head {
    part: usize,
    bn: Option<Bn>,
    act: bool,
    weight: usize,
    bias: usize,
}

/// Running mean/variance for one batchnorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

const BN_MOMENTUM: f64 = 0.9;

/// A backbone cut into parts by feature-map scale, with one softmax head per
/// attached part. `heads[0]` is the network's original classifier on the last
/// part; `heads[i]` carries weight α_{i+1}.
#[derive(Debug, Clone)]
pub struct MultiHeadNetwork {
    arch: ArchSpec,
    head_config: HeadConfig,
    parts: Vec<Vec<Unit>>,
    heads: Vec<Head>,
    param_names: Vec<String>,
    params: Vec<Tensor>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats>,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats>,
}

impl Builder {
    fn he_normal(&mut self, name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> usize {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let t = Tensor::from_fn(shape, |_| dist.sample(rng));
        self.push(name, t)
    }

    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Bn {
        let gamma = self.push(format!("{prefix}.bn.gamma"), Tensor::filled(&[c], 1.0));
        let beta = self.push(format!("{prefix}.bn.beta"), Tensor::zeros(&[c]));
        self.stat_names.push(format!("{prefix}.bn"));
        self.stats.push(RunningStats {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        Bn {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn conv_bn(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvBn {
        let weight = self.he_normal(format!("{prefix}.weight"), &[cout, cin, k, k], cin * k * k, rng);
        ConvBn {
            weight,
            bn: self.bn(prefix, cout),
            pad: k / 2,
        }
    }
}

/// Build a backbone with heads on its last `m` parts.
///
/// Backbone weights come from `(seed, Init)`; each head's weights come from
/// `(seed, HeadInit, part)`, so the same seed yields the same backbone and the
/// same head-1 classifier for every `m`.
pub fn build_multihead(spec: &ArchSpec, m: usize, order: HeadOrder, seed: u64) -> Result<MultiHeadNetwork> {
    spec.validate()?;
    let n_parts = spec.num_parts();
    ensure!(
        m >= 1 && m <= n_parts,
        Config,
        "m = {m} heads requested but {} has {n_parts} scale parts",
        spec.name
    );
    let mut b = Builder {
        names: vec![],
        params: vec![],
        stat_names: vec![],
        stats: vec![],
    };
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let stage_parts = spec.stage_parts();
    let mut parts: Vec<Vec<Unit>> = vec![vec![]; n_parts];
    let mut cin = spec.stages[0].channels;
    parts[0].push(Unit::Plain(b.conv_bn("stem", spec.input_channels, cin, 3, &mut rng)));
    for (si, stage) in spec.stages.iter().enumerate() {
        let units = &mut parts[stage_parts[si]];
        if stage.downsample {
            units.push(Unit::Pool);
        }
        for bi in 0..stage.blocks {
            let prefix = format!("stage{si}.block{bi}");
            let cout = stage.channels;
            units.push(match stage.kind {
                BlockKind::PlainConv => Unit::Plain(b.conv_bn(&prefix, cin, cout, 3, &mut rng)),
                BlockKind::Residual => {
                    let first = b.conv_bn(&format!("{prefix}.conv1"), cin, cout, 3, &mut rng);
                    let second = b.conv_bn(&format!("{prefix}.conv2"), cout, cout, 3, &mut rng);
                    let proj = (cin != cout).then(|| b.conv_bn(&format!("{prefix}.proj"), cin, cout, 1, &mut rng));
                    Unit::Residual { first, second, proj }
                }
            });
            cin = cout;
        }
    }

    let chans = spec.part_channels();
    let last = n_parts - 1;
    let mut attach = vec![last];
    let aux: Vec<usize> = (last + 1 - m..last).rev().collect();
    match order {
        HeadOrder::DeepFirst => attach.extend(aux),
        HeadOrder::ShallowFirst => attach.extend(aux.into_iter().rev()),
    }
    let k = spec.num_classes;
    let mut heads = Vec::with_capacity(m);
    for (i, &part) in attach.iter().enumerate() {
        let mut hrng = stream_rng(seed, Stream::HeadInit, &[part as u64]);
        let prefix = format!("head{}", i + 1);
        let c = chans[part];
        let aux = i > 0;
        let bn = (aux && spec.head_options.use_batchnorm).then(|| b.bn(&prefix, c));
        let weight = b.he_normal(format!("{prefix}.fc.weight"), &[k, c], c, &mut hrng);
        let bias = b.push(format!("{prefix}.fc.bias"), Tensor::zeros(&[k]));
        heads.push(Head {
            part,
            bn,
            act: aux && spec.head_options.use_activation,
            weight,
            bias,
        });
    }

    Ok(MultiHeadNetwork {
        arch: spec.clone(),
        head_config: HeadConfig { m, order },
        parts,
        heads,
        param_names: b.names,
        params: b.params,
        stat_names: b.stat_names,
        stats: b.stats,
    })
}

/// Result of a taped forward pass.
pub struct Forward {
    /// Softmax outputs, `heads[0]` = head 1.
    pub heads: Vec<Var>,
    /// Parameter leaves, aligned with [`MultiHeadNetwork::params`].
    pub params: Vec<Var>,
    bn_stats: Vec<(usize, BatchStats)>,
}

impl MultiHeadNetwork {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn head_config(&self) -> HeadConfig {
        self.head_config
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Part index each head reads from, in α order.
    pub fn head_parts(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.part).collect()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.arch.input_channels, self.arch.input_size, self.arch.input_size]
    }

    /// Drop heads `keep+1..=m` along with their parameters.
    pub fn truncate_heads(&mut self, keep: usize) -> Result<()> {
        ensure!(
            keep >= 1 && keep <= self.heads.len(),
            Config,
            "cannot keep {keep} of {} heads",
            self.heads.len()
        );
        if keep == self.heads.len() {
            return Ok(());
        }
        let first_dropped = &self.heads[keep];
        let p_cut = first_dropped.bn.map_or(first_dropped.weight, |bn| bn.gamma);
        let s_cut = self.heads[keep..]
            .iter()
            .filter_map(|h| h.bn.map(|bn| bn.stats))
            .min()
            .unwrap_or(self.stats.len());
        self.heads.truncate(keep);
        self.params.truncate(p_cut);
        self.param_names.truncate(p_cut);
        self.stats.truncate(s_cut);
        self.stat_names.truncate(s_cut);
        self.head_config.m = keep;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        ensure!(
            [c, h, w] == self.input_shape(),
            Dimension,
            "network expects [N, {}, {}, {}] input, got {:?}",
            self.arch.input_channels,
            self.arch.input_size,
            self.arch.input_size,
            x.shape()
        );
        Ok(())
    }

    /// Record a forward pass on `tape`. Parameters become leaves that require
    /// gradients iff `track_params`.
    pub fn forward_on(&self, tape: &mut Tape, input: &Tensor, mode: Mode, track_params: bool) -> Result<Forward> {
        self.check_input(input)?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone(), track_params))
            .collect();
        let mut bn_stats = Vec::new();
        let mut x = tape.leaf(input.clone(), false);
        let mut part_out = Vec::with_capacity(self.parts.len());
        for units in &self.parts {
            for unit in units {
                x = match unit {
                    Unit::Pool => tape.avg_pool2(x)?,
                    Unit::Plain(cb) => {
                        let y = self.conv_bn(tape, &params, x, cb, mode, &mut bn_stats)?;
                        tape.relu(y)
                    }
                    Unit::Residual { first, second, proj } => {
                        let y = self.conv_bn(tape, &params, x, first, mode, &mut bn_stats)?;
                        let y = tape.relu(y);
                        let y = self.conv_bn(tape, &params, y, second, mode, &mut bn_stats)?;
                        let short = match proj {
                            Some(p) => self.conv_bn(tape, &params, x, p, mode, &mut bn_stats)?,
                            None => x,
                        };
                        let sum = tape.add(y, short)?;
                        tape.relu(sum)
                    }
                };
            }
            part_out.push(x);
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut h = part_out[head.part];
            if let Some(bn) = &head.bn {
                h = self.bn(tape, &params, h, bn, mode, &mut bn_stats)?;
            }
            if head.act {
                h = tape.relu(h);
            }
            let pooled = tape.global_avg_pool(h)?;
            let logits = tape.linear(pooled, params[head.weight], params[head.bias])?;
            heads.push(tape.softmax(logits)?);
        }
        Ok(Forward {
            heads,
            params,
            bn_stats,
        })
    }

    fn conv_bn(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        cb: &ConvBn,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        let y = tape.conv2d(x, params[cb.weight], 1, cb.pad)?;
        self.bn(tape, params, y, &cb.bn, mode, stats)
    }

    fn bn(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        bn: &Bn,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        match mode {
            Mode::Train => {
                let (y, s) = tape.batchnorm(x, params[bn.gamma], params[bn.beta])?;
                stats.push((bn.stats, s));
                Ok(y)
            }
            Mode::Eval => {
                let rs = &self.stats[bn.stats];
                tape.batchnorm_eval(x, params[bn.gamma], params[bn.beta], &rs.mean, &rs.var)
            }
        }
    }

    /// Fold the batch statistics of a training-mode forward into the running
    /// estimates: `running = 0.9·running + 0.1·batch` (unbiased batch variance).
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        for (idx, s) in &fwd.bn_stats {
            let rs = &mut self.stats[*idx];
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            for c in 0..rs.mean.len() {
                rs.mean[c] = BN_MOMENTUM * rs.mean[c] + (1.0 - BN_MOMENTUM) * s.mean[c];
                rs.var[c] = BN_MOMENTUM * rs.var[c] + (1.0 - BN_MOMENTUM) * s.var[c] * unbias;
            }
        }
    }

    /// Copy gradients from a completed backward pass into each parameter's `grad`.
    pub fn collect_grads(&mut self, tape: &Tape, fwd: &Forward) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&fwd.params) {
            match tape.grad(*v) {
                Some(g) => p.set_grad(g.to_vec())?,
                None => p.set_grad(vec![0.0; p.numel()])?,
            }
        }
        Ok(())
    }

    /// Inference-mode outputs of every head, `[0]` = head 1.
    pub fn forward_all_heads(&self, batch: &Tensor, exec: Exec) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new(exec);
        let fwd = self.forward_on(&mut tape, batch, Mode::Eval, false)?;
        Ok(fwd.heads.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// [`forward_all_heads`](Self::forward_all_heads) over a whole image set in
    /// chunks of `batch` rows; each head's rows are concatenated.
    pub fn predict(&self, images: &Tensor, batch: usize, exec: Exec) -> Result<Vec<Tensor>> {
        let n = images.shape()[0];
        let k = self.arch.num_classes;
        let mut outs: Vec<Vec<f64>> = vec![Vec::with_capacity(n * k); self.heads.len()];
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let chunk = images.gather_rows(&idx);
            for (o, h) in outs.iter_mut().zip(self.forward_all_heads(&chunk, exec)?) {
                o.extend_from_slice(h.data());
            }
            start = end;
        }
        outs.into_iter().map(|d| Tensor::new(vec![n, k], d)).collect()
    }

    /// Overwrite a parameter or running-stat tensor by name (checkpoint loading).
    pub(crate) fn assign(&mut self, name: &str, t: Tensor) -> Result<()> {
        if let Some(i) = self.param_names.iter().position(|n| n == name) {
            if self.params[i].shape() != t.shape() {
                return Err(Error::format(
                    0,
                    format!(
                        "parameter {name}: stored shape {:?}, expected {:?}",
                        t.shape(),
                        self.params[i].shape()
                    ),
                ));
            }
            self.params[i] = t;
            return Ok(());
        }
        let (base, field) = name.rsplit_once('.').unwrap_or((name, ""));
        if let Some(i) = self.stat_names.iter().position(|n| n == base) {
            let rs = &mut self.stats[i];
            let slot = match field {
                "running_mean" => &mut rs.mean,
                "running_var" => &mut rs.var,
                _ => return Err(Error::format(0, format!("unknown tensor {name}"))),
            };
            if slot.len() != t.numel() {
                return Err(Error::format(
                    0,
                    format!("running stat {name}: stored length {}, expected {}", t.numel(), slot.len()),
                ));
            }
            *slot = t.into_data();
            return Ok(());
        }
        Err(Error::format(0, format!("unknown tensor {name}")))
    }

    /// Every stored tensor in checkpoint order: parameters, then running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .param_names
            .iter()
            .cloned()
            .zip(self.params.iter().map(|p| {
                let mut p = p.clone();
                p.clear_grad();
                p
            }))
            .collect();
        for (name, rs) in self.stat_names.iter().zip(&self.stats) {
            let c = rs.mean.len();
            out.push((format!("{name}.running_mean"), Tensor::from_parts(vec![c], rs.mean.clone())));
            out.push((format!("{name}.running_var"), Tensor::from_parts(vec![c], rs.var.clone())));
        }
        out
    }
}

/// Random parameter perturbation used by tests and probes.
pub fn jitter_params(net: &mut MultiHeadNetwork, scale: f64, rng: &mut impl Rng) {
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}
