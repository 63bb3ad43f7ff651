//! Acceptance suite. Each test prints one `[acceptance]` line with its verdict.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use jointdec::cli::{cmd_boost, cmd_train, RunConfig};
use jointdec::data::{encode_cifar10, make_toy_set, parse_cifar10, read_cifar10, Split, RECORD_LEN};
use jointdec::joint::{
    boost_train, head_weights, joint_network_output, multilayer_output, network_weight, update_sample_weights,
    weighted_cross_entropy, BoostConfig, HeadWeights, Judge, LabelVector, ReweightMode, SampleWeightTable, ACC_CLAMP,
};
use jointdec::nn::checkpoint::{load_network, save_network, CheckpointMeta};
use jointdec::nn::{build_multihead, jitter_params, scale_channels, ArchSpec, HeadOrder, ScalingFactor};
use jointdec::optim::SgdrSchedule;
use jointdec::seed::{stream_rng, Stream};
use jointdec::tensor::gradcheck::{check_op, probe_network};
use jointdec::train::{evaluate, member_init_seed, train_network};
use jointdec::{Exec, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Print the verdict line (bypassing the test harness's output capture) and
/// fail the test if the criterion does not hold.
fn verdict(n: u32, what: &str, pass: bool, detail: String) {
    let line = format!(
        "[acceptance] criterion {n} ({what}): {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rng(tag: u64) -> ChaCha8Rng {
    stream_rng(tag, Stream::Probe, &[0xacce])
}

fn random(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

fn random_probs(n: usize, c: usize, r: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(&[n, c], 0.01, 1.0, r);
    for row in t.data_mut().chunks_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_1_gradients() {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst_op = 0.0f64;
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3, 4], -1.0, 1.0, &mut r);
    worst_op = worst_op.max(check_op(&[a.clone(), b.clone()], 1, |t, v| t.add(v[0], v[1]).unwrap()));
    worst_op = worst_op.max(check_op(&[a.clone(), b.clone()], 2, |t, v| t.mul(v[0], v[1]).unwrap()));
    worst_op = worst_op.max(check_op(&[a.clone()], 3, |t, v| t.scale(v[0], 1.7)));
    worst_op = worst_op.max(check_op(&[a.clone(), b], 4, |t, v| {
        let s0 = t.sum(v[0]);
        let s1 = t.sum(v[1]);
        t.weighted_sum(&[(s0, 0.3), (s1, -0.9)]).unwrap()
    }));
    let off_kink = Tensor::from_fn(&[2, 5], |i| if i % 3 == 0 { -0.4 - 0.1 * i as f64 } else { 0.2 + 0.1 * i as f64 });
    worst_op = worst_op.max(check_op(&[off_kink], 5, |t, v| t.relu(v[0])));
    let x = random(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let k = random(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    worst_op = worst_op.max(check_op(&[x.clone(), k], 6, |t, v| t.conv2d(v[0], v[1], 1, 1).unwrap()));
    let g = random(&[3], 0.5, 1.5, &mut r);
    let be = random(&[3], -0.5, 0.5, &mut r);
    worst_op = worst_op.max(check_op(&[x.clone(), g.clone(), be.clone()], 7, |t, v| {
        t.batchnorm(v[0], v[1], v[2]).unwrap().0
    }));
    let (rm, rv) = (vec![0.1, 0.0, -0.1], vec![0.8, 1.2, 1.0]);
    worst_op = worst_op.max(check_op(&[x.clone(), g, be], 8, |t, v| {
        t.batchnorm_eval(v[0], v[1], v[2], &rm, &rv).unwrap()
    }));
    worst_op = worst_op.max(check_op(&[x.clone()], 9, |t, v| t.avg_pool2(v[0]).unwrap()));
    worst_op = worst_op.max(check_op(&[x], 10, |t, v| t.global_avg_pool(v[0]).unwrap()));
    let f = random(&[4, 5], -1.0, 1.0, &mut r);
    let w = random(&[3, 5], -0.5, 0.5, &mut r);
    let bias = random(&[3], -0.5, 0.5, &mut r);
    worst_op = worst_op.max(check_op(&[f.clone(), w, bias], 11, |t, v| t.linear(v[0], v[1], v[2]).unwrap()));
    worst_op = worst_op.max(check_op(&[f], 12, |t, v| {
        let s = t.softmax(v[0]).unwrap();
        t.weighted_nll(s, &[0, 4, 2, 1], &[1.0, 2.0, 0.5, 1.5]).unwrap()
    }));

    let mut net = build_multihead(&ArchSpec::res_tiny(3, 16, 3), 3, HeadOrder::DeepFirst, 77).unwrap();
    jitter_params(&mut net, 0.05, &mut r);
    let input = random(&[6, 3, 16, 16], -1.0, 1.0, &mut r);
    let hw = HeadWeights::new(1.0, 1.0, 0.5, 3).unwrap();
    let probes = probe_network(&net, &input, &[0, 1, 2, 2, 1, 0], &[1.0, 0.7, 1.3, 0.9, 1.1, 1.0], &hw, 24, 5).unwrap();
    let worst_net = probes.iter().map(|p| p.rel_err()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient correctness",
        worst_op < 1e-5 && worst_net < 1e-5 && probes.len() >= 20 && elapsed < Duration::from_secs(60),
        format!(
            "ops max rel err {worst_op:.2e}, res-tiny m=3 over {} probes {worst_net:.2e} (tol 1e-5), {:.1}s",
            probes.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_formula_oracles() {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut bump = |a: f64, b: f64| worst = worst.max((a - b).abs() / b.abs().max(1.0));
    for _ in 0..200 {
        // head weights: repeated division oracle
        let (a1, k, m) = (r.random_range(0.1..5.0), r.random_range(0.2..5.0), r.random_range(1..7usize));
        let hw = head_weights(a1, k, m).unwrap();
        let mut expect = a1;
        for (i, &a) in hw.iter().enumerate() {
            if i == 1 {
                expect = a1 / k / std::f64::consts::E;
            } else if i > 1 {
                expect /= std::f64::consts::E;
            }
            bump(a, expect);
        }

        // network weight: log-ratio oracle on the clamped accuracy
        let acc: f64 = r.random_range(0.0..=1.0);
        let eps = r.random_range(0.5..20.0);
        let c = acc.max(ACC_CLAMP.0).min(ACC_CLAMP.1);
        bump(network_weight(acc, eps).unwrap(), (c.ln() - (1.0 - c).ln()) / eps);

        // sample weights: explicit loop then mean division
        let n = r.random_range(1..30usize);
        let table = SampleWeightTable {
            weights: (0..n).map(|_| r.random_range(0.2..3.0)).collect(),
            round: 0,
        };
        let correct: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
        let lambda = r.random_range(-0.5..0.8);
        let got = update_sample_weights(&table, &correct, lambda, ReweightMode::Verbatim).unwrap();
        let mut raw = Vec::new();
        for i in 0..n {
            let f = if correct[i] { 2.0 * (-lambda).exp() } else { 0.5 * lambda.exp() };
            raw.push(table.weights[i] * f);
        }
        let total: f64 = raw.iter().sum();
        for i in 0..n {
            bump(got.weights[i], raw[i] * n as f64 / total);
        }

        // weighted cross entropy: dense scaled one-hot dotted with log p
        let (rows, cls) = (r.random_range(1..8usize), r.random_range(2..6usize));
        let p = random_probs(rows, cls, &mut r);
        let labels: Vec<LabelVector> = (0..rows)
            .map(|_| LabelVector::new(r.random_range(0..cls), cls, r.random_range(0.1..3.0)).unwrap())
            .collect();
        let mut dense = 0.0;
        for (i, l) in labels.iter().enumerate() {
            for (j, y) in l.scaled().iter().enumerate() {
                dense -= y * p.data()[i * cls + j].ln();
            }
        }
        bump(weighted_cross_entropy(&p, &labels).unwrap(), dense / rows as f64);

        // multi-layer output: per-element loop
        let heads = r.random_range(1..5usize);
        let outs: Vec<Tensor> = (0..heads).map(|_| random_probs(rows, cls, &mut r)).collect();
        let hw = HeadWeights::new(a1, k, r.random_range(0.0..2.0), heads).unwrap();
        let got = multilayer_output(&outs, &hw).unwrap();
        for e in 0..rows * cls {
            let mut s = hw.alpha[0] * outs[0].data()[e];
            for h in 1..heads {
                s += hw.mu * hw.alpha[h] * outs[h].data()[e];
            }
            bump(got.data()[e], s);
        }

        // ensemble output: per-element loop
        let members = r.random_range(1..5usize);
        let outs: Vec<Tensor> = (0..members).map(|_| random_probs(rows, cls, &mut r)).collect();
        let lambdas: Vec<f64> = (0..members).map(|_| r.random_range(0.01..1.0)).collect();
        let got = joint_network_output(&outs, &lambdas).unwrap();
        for e in 0..rows * cls {
            let s: f64 = outs.iter().zip(&lambdas).map(|(o, l)| l * o.data()[e]).sum();
            bump(got.data()[e], s);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "formula oracles",
        worst < 1e-9 && elapsed < Duration::from_secs(10),
        format!("200 random cases per formula, max deviation {worst:.2e} (tol 1e-9), {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_fixed_point_and_antisymmetry() {
    let mut r = rng(3);
    let mut worst_fixed = 0.0f64;
    let mut worst_anti = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..50usize);
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..5.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let table = SampleWeightTable {
            weights: raw.iter().map(|w| w / mean).collect(),
            round: 0,
        };
        let correct: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let next = update_sample_weights(&table, &correct, 2f64.ln(), ReweightMode::Verbatim).unwrap();
        for (a, b) in next.weights.iter().zip(&table.weights) {
            worst_fixed = worst_fixed.max((a - b).abs());
        }
        let a = r.random_range(ACC_CLAMP.0..ACC_CLAMP.1);
        let eps = r.random_range(0.1..50.0);
        let l = network_weight(a, eps).unwrap();
        worst_anti = worst_anti.max((l + network_weight(1.0 - a, eps).unwrap()).abs());
    }
    verdict(
        3,
        "ln 2 fixed point and lambda antisymmetry",
        worst_fixed < 1e-12 && worst_anti < 1e-12,
        format!("1000 draws each: fixed-point drift {worst_fixed:.1e}, antisymmetry residual {worst_anti:.1e} (tol 1e-12)"),
    );
}

#[test]
fn criterion_4_schedule_identity() {
    let s = SgdrSchedule::default();
    let total = s.total_epochs(9);
    let mut start = 0.0;
    let mut restarts_exact = true;
    let mut worst_mid = 0.0f64;
    for c in 0..9 {
        let len = (1u64 << c) as f64;
        restarts_exact &= s.lr_at(start) == 0.1;
        worst_mid = worst_mid.max((s.lr_at(start + len / 2.0) - 0.05).abs());
        start += len;
    }
    verdict(
        4,
        "SGDR schedule identity",
        total == 511 && start == 511.0 && restarts_exact && worst_mid <= 1e-12,
        format!("cycles 1..9 sum to {total} epochs, restart lr exactly 0.1: {restarts_exact}, mid-cycle deviation {worst_mid:.1e}"),
    );
}

#[test]
fn criterion_5_parameter_scaling() {
    let start = Instant::now();
    let base = ArchSpec::res_tiny(3, 16, 3);
    let mut pass = true;
    let mut parts = Vec::new();
    for (f, target) in [(0.5f64.sqrt(), 0.5), (0.5, 0.25), (0.25, 0.0625)] {
        let scaled = scale_channels(&base, ScalingFactor::new(f).unwrap());
        for m in [1, 3] {
            let ratio = scaled.param_count(m) as f64 / base.param_count(m) as f64;
            let ok = (ratio / target - 1.0).abs() <= 0.10;
            pass &= ok;
            parts.push(format!("{f:.3}/m={m}: {ratio:.4} vs {target}"));
        }
    }
    pass &= start.elapsed() < Duration::from_secs(1);
    verdict(5, "parameter scaling", pass, parts.join(", "));
}

/// Desk-scale toy sets shared by criteria 6 and 7.
fn toy_config() -> RunConfig {
    RunConfig::default()
}

struct Prepared {
    train: jointdec::data::LabeledImageSet,
    test: jointdec::data::LabeledImageSet,
    cfg: RunConfig,
    policy: jointdec::data::AugmentPolicy,
}

fn prepared() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| {
        let cfg = toy_config();
        let (train, test, policy) = cfg.load_prepared().unwrap();
        Prepared { train, test, cfg, policy }
    })
}

/// Head-1 test error of a single full-size res-tiny with one head, per seed.
/// Used as the baseline by both directional criteria.
fn baseline_errors() -> &'static Vec<f64> {
    static B: OnceLock<Vec<f64>> = OnceLock::new();
    B.get_or_init(|| SEEDS.iter().map(|&s| train_single(1, s)).collect())
}

fn train_single(m: usize, seed: u64) -> f64 {
    let p = prepared();
    let mut cfg = p.cfg.clone();
    cfg.m = m;
    cfg.seed = seed;
    let arch = cfg.base_arch().unwrap();
    let mut net = build_multihead(&arch, m, cfg.head_order, member_init_seed(seed, 0)).unwrap();
    let tc = cfg.train_config(p.policy.clone()).unwrap();
    train_network(&mut net, &p.train, &p.test, &SampleWeightTable::uniform(p.train.len()), &tc, |_| Ok(())).unwrap();
    evaluate(&net, &p.test, &cfg.head_weights().unwrap(), Exec::default()).unwrap().joint_error
}

#[test]
fn criterion_6_multi_layer_direction() {
    let start = Instant::now();
    let base = baseline_errors().clone();
    let joint: Vec<f64> = SEEDS.iter().map(|&s| train_single(3, s)).collect();
    let (mb, mj) = (median(&base), median(&joint));
    let elapsed = start.elapsed();
    verdict(
        6,
        "multi-layer heads vs single head",
        mj <= mb && elapsed < Duration::from_secs(15 * 60),
        format!(
            "median joint test error m=3 {:.4} vs baseline m=1 {:.4}; per seed {joint:?} vs {base:?}; {:.0}s",
            mj,
            mb,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_multi_network_direction() {
    let start = Instant::now();
    let p = prepared();
    let base = baseline_errors().clone();
    let mut ensemble = Vec::new();
    let mut ratio = 0.0;
    for &seed in &SEEDS {
        let mut cfg = p.cfg.clone();
        cfg.m = 1;
        cfg.seed = seed;
        cfg.gamma = 2;
        let arch = scale_channels(&cfg.base_arch().unwrap(), ScalingFactor::new(0.5f64.sqrt()).unwrap());
        ratio = arch.param_count(1) as f64 / cfg.base_arch().unwrap().param_count(1) as f64;
        let bc = BoostConfig {
            gamma: 2,
            epsilon: cfg.epsilon,
            mode: ReweightMode::Verbatim,
            judge: Judge::Joint,
            arch,
            m: 1,
            order: cfg.head_order,
            train: cfg.train_config(p.policy.clone()).unwrap(),
            out_dir: None,
            channel_mean: p.policy.channel_mean.clone(),
            channel_std: p.policy.channel_std.clone(),
            code_version: String::new(),
        };
        ensemble.push(boost_train(&p.train, &p.test, &bc, |_| Ok(())).unwrap().joint_test_error);
    }
    let (mb, me) = (median(&base), median(&ensemble));
    let elapsed = start.elapsed();
    verdict(
        7,
        "boosted half-size pair vs full-size network",
        me <= mb && elapsed < Duration::from_secs(20 * 60),
        format!(
            "median test error gamma=2 (member param ratio {ratio:.3}) {me:.4} vs single {mb:.4}; per seed {ensemble:?} vs {base:?}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.toy_train = 120;
    cfg.toy_test = 60;
    cfg.batch_size = 32;
    cfg.epochs = 3;
    cfg.seed = 17;
    let run = |cmd: &str, name: &str| {
        let mut c = cfg.clone();
        c.out = dir.path().join(name);
        match cmd {
            "train" => cmd_train(&c).unwrap(),
            _ => {
                c.gamma = 2;
                cmd_boost(&c).unwrap()
            }
        };
        std::fs::read(c.out.join("metrics.csv")).unwrap()
    };
    let train_same = run("train", "t1") == run("train", "t2");
    let boost_same = run("boost", "b1") == run("boost", "b2");
    verdict(
        8,
        "determinism",
        train_same && boost_same,
        format!("train metrics.csv identical: {train_same}, boost metrics.csv identical: {boost_same}"),
    );
}

#[test]
fn criterion_9_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(9);
    let record = |r: &mut ChaCha8Rng| {
        let mut rec = vec![r.random_range(0..10u8)];
        rec.extend((0..RECORD_LEN - 1).map(|_| r.random::<u8>()));
        rec
    };
    let mut files_exact = true;
    for name in ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"] {
        let bytes: Vec<u8> = (0..3).flat_map(|_| record(&mut r)).collect();
        let set = parse_cifar10(&bytes, Split::Train).unwrap();
        files_exact &= encode_cifar10(&set).unwrap() == bytes;
        std::fs::write(dir.path().join(name), &bytes).unwrap();
    }
    let (train, test) = read_cifar10(dir.path()).unwrap();
    let counts_ok = train.len() == 15 && test.len() == 3;

    let (tr, te) = make_toy_set(3, 30, 40).unwrap();
    let mut net = build_multihead(&ArchSpec::res_tiny(3, 16, 3), 3, HeadOrder::DeepFirst, 5).unwrap();
    let cfg = RunConfig {
        epochs: 1,
        batch_size: 10,
        ..RunConfig::default()
    };
    let policy = cfg.policy_for(&tr);
    let tc = cfg.train_config(policy.clone()).unwrap();
    let trn = jointdec::data::normalize(&tr, &policy).unwrap();
    let ten = jointdec::data::normalize(&te, &policy).unwrap();
    train_network(&mut net, &trn, &ten, &SampleWeightTable::uniform(30), &tc, |_| Ok(())).unwrap();
    let hw = cfg.head_weights().unwrap();
    let before = evaluate(&net, &ten, &hw, Exec::default()).unwrap();
    let path = dir.path().join("net.jdec");
    let meta = CheckpointMeta {
        kind: "network".into(),
        arch: net.arch().clone(),
        heads: net.head_config(),
        alpha1: 1.0,
        k: 1.0,
        mu: 0.5,
        channel_mean: policy.channel_mean.clone(),
        channel_std: policy.channel_std.clone(),
        code_version: "test".into(),
    };
    save_network(&path, &net, &meta).unwrap();
    let (loaded, _) = load_network(&path).unwrap();
    let after = evaluate(&loaded, &ten, &hw, Exec::default()).unwrap();
    let bits_equal = before.joint_error.to_bits() == after.joint_error.to_bits()
        && before.head_errors == after.head_errors
        && before.joint_output == after.joint_output;
    verdict(
        9,
        "format round-trips",
        files_exact && counts_ok && bits_equal,
        format!(
            "CIFAR-10 fixtures byte-exact: {files_exact}, reader counts ok: {counts_ok}, checkpoint eval bit-identical: {bits_equal} (error {})",
            after.joint_error
        ),
    );
}
