//! Straight-line re-implementation of the network equations, written
//! against the parameter block names only, compared with the library
//! forward pass.

use std::collections::HashMap;

use probseg_core::model::{forward, ModelConfig, ModelParams};
use probseg_core::sequence::SliceSequence;
use probseg_core::{Plane, Slice2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Img = Vec<Vec<Vec<f64>>>;

struct P<'a> {
    by_name: HashMap<String, &'a [f64]>,
}

impl<'a> P<'a> {
    fn new(params: &'a ModelParams) -> Self {
        let by_name = params
            .blocks()
            .into_iter()
            .map(|b| (b.name, &params.values[b.offset..b.offset + b.len]))
            .collect();
        P { by_name }
    }

    fn get(&self, name: &str) -> &'a [f64] {
        self.by_name.get(name).unwrap_or_else(|| panic!("missing block {name}"))
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dims(x: &Img) -> (usize, usize, usize) {
    (x.len(), x[0].len(), x[0][0].len())
}

fn conv(x: &Img, w: &[f64], b: &[f64], k: usize) -> Img {
    let (cin, h, wd) = dims(x);
    let cout = b.len();
    assert_eq!(w.len(), cout * cin * k * k);
    let p = (k / 2) as i64;
    let mut out = vec![vec![vec![0.0; wd]; h]; cout];
    for co in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let yy = y as i64 + ky as i64 - p;
                            let xi = xx as i64 + kx as i64 - p;
                            if yy >= 0 && xi >= 0 && yy < h as i64 && xi < wd as i64 {
                                s += w[((co * cin + ci) * k + ky) * k + kx] * x[ci][yy as usize][xi as usize];
                            }
                        }
                    }
                }
                out[co][y][xx] = s;
            }
        }
    }
    out
}

fn norm_relu(x: &Img, gamma: &[f64], beta: &[f64]) -> Img {
    x.iter()
        .enumerate()
        .map(|(c, ch)| {
            let vals: Vec<f64> = ch.iter().flatten().copied().collect();
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            ch.iter()
                .map(|row| row.iter().map(|v| (gamma[c] * (v - mu) / (var + 1e-5).sqrt() + beta[c]).max(0.0)).collect())
                .collect()
        })
        .collect()
}

fn block(p: &P, name: &str, x: &Img) -> Img {
    let g = |s: &str| p.get(&format!("{name}.{s}"));
    let a = norm_relu(&conv(x, g("conv1.weight"), g("conv1.bias"), 3), g("norm1.gamma"), g("norm1.beta"));
    norm_relu(&conv(&a, g("conv2.weight"), g("conv2.bias"), 3), g("norm2.gamma"), g("norm2.beta"))
}

fn attention(p: &P, name: &str, x: &Img) -> Img {
    let (c, h, w) = dims(x);
    let g = |s: &str| p.get(&format!("{name}.{s}"));
    let (w1, b1, w2, b2) = (g("channel.fc1.weight"), g("channel.fc1.bias"), g("channel.fc2.weight"), g("channel.fc2.bias"));
    let r = b1.len();
    let m: Vec<f64> = x.iter().map(|ch| ch.iter().flatten().sum::<f64>() / (h * w) as f64).collect();
    let hid: Vec<f64> = (0..r).map(|j| (b1[j] + (0..c).map(|i| w1[j * c + i] * m[i]).sum::<f64>()).max(0.0)).collect();
    let gate: Vec<f64> = (0..c).map(|i| 2.0 * sig(b2[i] + (0..r).map(|j| w2[i * r + j] * hid[j]).sum::<f64>())).collect();
    let y: Img = x.iter().enumerate().map(|(i, ch)| ch.iter().map(|row| row.iter().map(|v| v * gate[i]).collect()).collect()).collect();
    let mut pooled = vec![vec![vec![0.0; w]; h]; 2];
    for yy in 0..h {
        for xx in 0..w {
            pooled[0][yy][xx] = (0..c).map(|i| y[i][yy][xx]).sum::<f64>() / c as f64;
            pooled[1][yy][xx] = (0..c).map(|i| y[i][yy][xx]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let s = conv(&pooled, g("spatial.conv.weight"), g("spatial.conv.bias"), 3);
    y.iter()
        .map(|ch| {
            ch.iter()
                .enumerate()
                .map(|(yy, row)| row.iter().enumerate().map(|(xx, v)| v * 2.0 * sig(s[0][yy][xx])).collect())
                .collect()
        })
        .collect()
}

fn pool(x: &Img) -> Img {
    x.iter()
        .map(|ch| {
            (0..ch.len() / 2)
                .map(|y| {
                    (0..ch[0].len() / 2)
                        .map(|xx| 0.25 * (ch[2 * y][2 * xx] + ch[2 * y][2 * xx + 1] + ch[2 * y + 1][2 * xx] + ch[2 * y + 1][2 * xx + 1]))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn upsample(x: &Img) -> Img {
    x.iter()
        .map(|ch| (0..2 * ch.len()).map(|y| (0..2 * ch[0].len()).map(|xx| ch[y / 2][xx / 2]).collect()).collect())
        .collect()
}

fn cat(a: &Img, b: &Img) -> Img {
    a.iter().chain(b.iter()).cloned().collect()
}

fn lstm(p: &P, name: &str, x: &Img, h: &Img, c: &Img) -> (Img, Img) {
    let bias: Vec<f64> = ["bias_i", "bias_f", "bias_og"].iter().flat_map(|s| p.get(&format!("{name}.{s}")).to_vec()).collect();
    let z = conv(&cat(x, h), p.get(&format!("{name}.weight")), &bias, 3);
    let hid = h.len();
    let (_, hh, ww) = dims(h);
    let mut nh = h.clone();
    let mut nc = c.clone();
    for k in 0..hid {
        for y in 0..hh {
            for xx in 0..ww {
                let i = sig(z[k][y][xx]);
                let f = sig(z[hid + k][y][xx]);
                let o = sig(z[2 * hid + k][y][xx]);
                let g = z[3 * hid + k][y][xx].tanh();
                nc[k][y][xx] = f * c[k][y][xx] + i * g;
                nh[k][y][xx] = o * nc[k][y][xx].tanh();
            }
        }
    }
    (nh, nc)
}

fn reference(params: &ModelParams, seq: &SliceSequence) -> Vec<Img> {
    let p = P::new(params);
    let cfg = &params.config;
    let to_img = |s: &Slice2D| -> Vec<Vec<f64>> { (0..s.height).map(|y| (0..s.width).map(|x| s.get(x, y)).collect()).collect() };
    let mut skips: Vec<Vec<Img>> = Vec::new();
    let mut bottom: Vec<Img> = Vec::new();
    for t in 0..3 {
        let mut cur: Img = vec![to_img(&seq.ct[t]), to_img(&seq.pet[t])];
        let mut sk = Vec::new();
        for l in 0..cfg.depth {
            let y = attention(&p, &format!("enc{l}.attn"), &block(&p, &format!("enc{l}"), &cur));
            cur = pool(&y);
            sk.push(y);
        }
        skips.push(sk);
        bottom.push(cur);
    }
    let (_, bh, bw) = dims(&bottom[0]);
    let zero = vec![vec![vec![0.0; bw]; bh]; cfg.recurrent_hidden];
    let mut hf = vec![zero.clone(); 3];
    let (mut h, mut c) = (zero.clone(), zero.clone());
    for t in 0..3 {
        (h, c) = lstm(&p, "lstm_fwd", &bottom[t], &h, &c);
        hf[t] = h.clone();
    }
    let mut hb = vec![zero.clone(); 3];
    let (mut h, mut c) = (zero.clone(), zero);
    for t in (0..3).rev() {
        (h, c) = lstm(&p, "lstm_bwd", &bottom[t], &h, &c);
        hb[t] = h.clone();
    }
    (0..3)
        .map(|t| {
            let s = conv(&cat(&hf[t], &hb[t]), p.get("fusion.weight"), p.get("fusion.bias"), 1);
            let fused: Img = (0..s.len())
                .map(|k| {
                    (0..bh)
                        .map(|y| {
                            (0..bw)
                                .map(|x| {
                                    let g = sig(s[k][y][x]);
                                    g * hf[t][k][y][x] + (1.0 - g) * hb[t][k][y][x]
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let mut cur = attention(&p, "fusion.attn", &fused);
            for l in (0..cfg.depth).rev() {
                cur = block(&p, &format!("dec{l}"), &cat(&upsample(&cur), &skips[t][l]));
            }
            let z = conv(&cur, p.get("head.weight"), p.get("head.bias"), 1);
            vec![z[0].iter().map(|row| row.iter().map(|&v| sig(v)).collect()).collect()]
        })
        .collect()
}

#[test]
fn library_forward_matches_reference() {
    let cfg = ModelConfig {
        image_size: 16,
        width_growth: 2,
        base_width: 4,
        seed: 9,
        ..ModelConfig::desk()
    };
    let params = ModelParams::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut rand_slice = || Slice2D::new(16, 16, (0..256).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let seq = SliceSequence {
        patient_id: "ref".into(),
        plane: Plane::Axial,
        start_k: 1,
        ct: [rand_slice(), rand_slice(), rand_slice()],
        pet: [rand_slice(), rand_slice(), rand_slice()],
        gtv: std::array::from_fn(|_| Slice2D::filled(16, 16, 0.0)),
    };
    let got = forward(&params, &seq).unwrap();
    let want = reference(&params, &seq);
    let mut worst: f64 = 0.0;
    for t in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                worst = worst.max((got.maps[t].get(x, y) - want[t][0][y][x]).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst}");
}

#[test]
fn wrong_size_is_a_shape_error() {
    let params = ModelParams::init(&ModelConfig::desk()).unwrap();
    let s = Slice2D::filled(16, 16, 0.0);
    let seq = SliceSequence {
        patient_id: "x".into(),
        plane: Plane::Axial,
        start_k: 1,
        ct: [s.clone(), s.clone(), s.clone()],
        pet: [s.clone(), s.clone(), s.clone()],
        gtv: [s.clone(), s.clone(), s],
    };
    assert!(matches!(forward(&params, &seq), Err(probseg_core::Error::Shape(_))));
}
