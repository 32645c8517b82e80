//! Optimised kernels against naive reference loops.

use ngauss::activations::softmax;
use ngauss::nn::{conv2d_forward, dense_forward, maxpool_forward};
use ngauss::train::cross_entropy;
use ngauss::{ActivationKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= TOL, "{what}[{i}]: {x} vs {y}");
    }
}

#[test]
fn conv2d_matches_nested_loops() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let (kh, kw) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let stride = rng.gen_range(1..3);
        let h = kh + stride * rng.gen_range(0..5);
        let w = kw + stride * rng.gen_range(0..5);
        let x = random(&mut rng, &[ci, h, w]);
        let wt = random(&mut rng, &[co, ci, kh, kw]);
        let b = random(&mut rng, &[co]);
        let got = conv2d_forward(&x, &wt, &b, stride).unwrap();

        let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        assert_eq!(got.shape(), &[co, oh, ow]);
        let mut want = Vec::new();
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b.data()[o];
                    for c in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                s += wt.get(&[o, c, u, v]).unwrap()
                                    * x.get(&[c, i * stride + u, j * stride + v]).unwrap();
                            }
                        }
                    }
                    want.push(s);
                }
            }
        }
        assert_close(got.data(), &want, "conv");
    }
}

#[test]
fn maxpool_matches_window_scan() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let c = rng.gen_range(1..4);
        let window = rng.gen_range(1..4);
        let stride = rng.gen_range(1..4);
        let h = window + stride * rng.gen_range(0..5);
        let w = window + stride * rng.gen_range(0..5);
        let x = random(&mut rng, &[c, h, w]);
        let (got, idx) = maxpool_forward(&x, window, stride).unwrap();
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let mut want = Vec::new();
        let mut want_idx = Vec::new();
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0u32);
                    for u in 0..window {
                        for v in 0..window {
                            let val = x.get(&[ch, i * stride + u, j * stride + v]).unwrap();
                            if val > best.0 {
                                best = (val, (u * window + v) as u32);
                            }
                        }
                    }
                    want.push(best.0);
                    want_idx.push(best.1);
                }
            }
        }
        assert_close(got.data(), &want, "pool");
        assert_eq!(idx.offsets, want_idx);
    }
}

#[test]
fn maxpool_ties_pick_first() {
    let x = Tensor::from_vec(&[1, 2, 2], vec![0.5; 4]).unwrap();
    let (_, idx) = maxpool_forward(&x, 2, 2).unwrap();
    assert_eq!(idx.offsets, vec![0]);
}

#[test]
fn dense_matches_matmul_then_map() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (b, n_in, n_out) = (rng.gen_range(1..6), rng.gen_range(1..40), rng.gen_range(1..20));
        let act = ActivationKind::ALL[seed as usize % 3];
        let x = random(&mut rng, &[b, n_in]);
        let wt = random(&mut rng, &[n_out, n_in]);
        let bias = random(&mut rng, &[n_out]);
        let got = dense_forward(&x, &wt, &bias, Some(act)).unwrap();
        let mut want = Vec::new();
        for r in 0..b {
            for o in 0..n_out {
                let mut s = 0.0;
                for i in 0..n_in {
                    s += wt.get(&[o, i]).unwrap() * x.get(&[r, i]).unwrap();
                }
                want.push(act.apply(s + bias.data()[o]));
            }
        }
        assert_close(got.data(), &want, "dense");

        let single = Tensor::from_vec(&[n_in], x.data()[..n_in].to_vec()).unwrap();
        let got1 = dense_forward(&single, &wt, &bias, None).unwrap();
        assert_eq!(got1.shape(), &[n_out]);
    }
}

#[test]
fn matmul_matches_triple_loop_bitwise() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (m, k, n) = (rng.gen_range(1..12), rng.gen_range(1..12), rng.gen_range(1..12));
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let got = a.matmul(&b).unwrap();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]).unwrap() * b.get(&[p, j]).unwrap();
                }
                want[i * n + j] = s;
            }
        }
        // same ascending-p accumulation order, so results agree exactly
        assert_eq!(got.data(), want.as_slice());
    }
}

#[test]
fn softmax_matches_direct_formula() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let k = rng.gen_range(1..12);
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = z.iter().map(|v| v.exp() / denom).collect();
        assert_close(&softmax(&z).unwrap(), &want, "softmax");
    }
}

#[test]
fn softmax_fixed_values() {
    let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
    assert_close(&p, &[0.09003057317038046, 0.24472847105479765, 0.6652409557748219], "softmax");
}

#[test]
fn cross_entropy_matches_direct_formula() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (b, k) = (rng.gen_range(1..6), rng.gen_range(2..12));
        let z = random(&mut rng, &[b, k]);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let (loss, grad) = cross_entropy(&z, &labels).unwrap();
        let mut want_loss = 0.0;
        let mut want_grad = Vec::new();
        for (r, &y) in labels.iter().enumerate() {
            let row = &z.data()[r * k..(r + 1) * k];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want_loss += -(row[y].exp() / denom).ln();
            for (j, v) in row.iter().enumerate() {
                let onehot = if j == y { 1.0 } else { 0.0 };
                want_grad.push((v.exp() / denom - onehot) / b as f64);
            }
        }
        assert!((loss - want_loss / b as f64).abs() <= TOL);
        assert_close(grad.data(), &want_grad, "ce grad");
    }
}

#[test]
fn cross_entropy_fixed_values() {
    // -ln softmax([1, 2, 3])[0] = ln(e + e^2 + e^3) - 1
    let z: Tensor = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let (loss, _) = cross_entropy(&z, &[0]).unwrap();
    assert!((loss - 2.4076059644443803).abs() <= TOL);
    let (loss, _) = cross_entropy(&z, &[2]).unwrap();
    assert!((loss - 0.40760596444438035).abs() <= TOL);
}
