//! Analytic gradients against central finite differences.

use jointdec::joint::HeadWeights;
use jointdec::nn::{build_multihead, jitter_params, ArchSpec, HeadOrder};
use jointdec::seed::{stream_rng, Stream};
use jointdec::tensor::gradcheck::{check_op, probe_network};
use jointdec::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

fn rng(tag: u64) -> ChaCha8Rng {
    stream_rng(tag, Stream::Probe, &[])
}

fn random(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let seed = name.bytes().fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
    let worst = check_op(inputs, seed, f);
    println!("{name}: max relative error {worst:.3e}");
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3, 4], -1.0, 1.0, &mut r);
    check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
    check("scale", &[a.clone()], |t, v| t.scale(v[0], -2.5));
    check("sum", &[a.clone()], |t, v| t.sum(v[0]));
    check("weighted_sum", &[a, b], |t, v| {
        let sa = t.sum(v[0]);
        let sq = t.mul(v[1], v[1]).unwrap();
        let sb = t.sum(sq);
        t.weighted_sum(&[(sa, 0.7), (sb, -1.3)]).unwrap()
    });
    // keep inputs away from the kink at 0
    let c = Tensor::from_fn(&[3, 4], |i| if i % 2 == 0 { 0.3 + 0.1 * i as f64 } else { -0.2 - 0.05 * i as f64 });
    check("relu", &[c], |t, v| t.relu(v[0]));
}

#[test]
fn convolution() {
    let mut r = rng(2);
    let x = random(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let k3 = random(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let k1 = random(&[2, 3, 1, 1], -0.5, 0.5, &mut r);
    check("conv2d 3x3 pad 1", &[x.clone(), k3.clone()], |t, v| t.conv2d(v[0], v[1], 1, 1).unwrap());
    check("conv2d 3x3 pad 0", &[x, k3], |t, v| t.conv2d(v[0], v[1], 1, 0).unwrap());
    let x7 = random(&[2, 3, 7, 7], -1.0, 1.0, &mut r);
    check("conv2d 1x1 stride 2", &[x7, k1], |t, v| t.conv2d(v[0], v[1], 2, 0).unwrap());
}

#[test]
fn normalization_and_pooling() {
    let mut r = rng(3);
    let x = random(&[4, 3, 4, 4], -2.0, 2.0, &mut r);
    let g = random(&[3], 0.5, 1.5, &mut r);
    let b = random(&[3], -0.5, 0.5, &mut r);
    check("batchnorm (batch stats)", &[x.clone(), g.clone(), b.clone()], |t, v| {
        t.batchnorm(v[0], v[1], v[2]).unwrap().0
    });
    let mean = vec![0.1, -0.2, 0.3];
    let var = vec![0.5, 1.5, 2.0];
    check("batchnorm (running stats)", &[x.clone(), g, b], |t, v| {
        t.batchnorm_eval(v[0], v[1], v[2], &mean, &var).unwrap()
    });
    check("avg_pool2", &[x.clone()], |t, v| t.avg_pool2(v[0]).unwrap());
    check("global_avg_pool", &[x], |t, v| t.global_avg_pool(v[0]).unwrap());
}

#[test]
fn classifier_ops() {
    let mut r = rng(4);
    let x = random(&[5, 6], -1.0, 1.0, &mut r);
    let w = random(&[4, 6], -0.5, 0.5, &mut r);
    let b = random(&[4], -0.5, 0.5, &mut r);
    check("linear", &[x.clone(), w, b], |t, v| t.linear(v[0], v[1], v[2]).unwrap());
    check("softmax", &[x.clone()], |t, v| t.softmax(v[0]).unwrap());
    let p = random(&[5, 6], 0.1, 1.0, &mut r);
    let targets = [0, 5, 2, 2, 3];
    let weights = [0.5, 1.0, 2.0, 1.5, 0.25];
    check("weighted_nll", &[p], |t, v| t.weighted_nll(v[0], &targets, &weights).unwrap());
    check("softmax + weighted_nll", &[x], |t, v| {
        let s = t.softmax(v[0]).unwrap();
        t.weighted_nll(s, &targets, &weights).unwrap()
    });
}

#[test]
fn full_network_under_combined_loss() {
    for (arch, order) in [
        (ArchSpec::res_tiny(3, 16, 3), HeadOrder::DeepFirst),
        (ArchSpec::vgg_tiny(3, 16, 3), HeadOrder::ShallowFirst),
    ] {
        let mut net = build_multihead(&arch, 3, order, 21).unwrap();
        let mut r = rng(5);
        jitter_params(&mut net, 0.05, &mut r);
        let x = random(&[6, 3, 16, 16], -1.0, 1.0, &mut r);
        let targets = [0, 1, 2, 0, 1, 2];
        let w = [1.0, 0.5, 2.0, 1.2, 0.8, 0.5];
        let hw = HeadWeights::new(1.0, 1.0, 0.5, 3).unwrap();
        let probes = probe_network(&net, &x, &targets, &w, &hw, 40, 3).unwrap();
        assert!(probes.len() >= 40);
        for p in &probes {
            assert!(p.rel_err() < TOL, "{} {}[{}]: {:?}", arch.name, p.param, p.index, p);
        }
    }
}
