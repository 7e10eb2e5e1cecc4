//! Parameterised layers with explicit forward caches and backward passes.
//!
//! Layers only hold offsets into the flat parameter vector; the vector
//! itself (and the gradient vector of the same layout) is passed in.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{conv2d, conv2d_backward, sigmoid, Tensor};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Normal { fan_in: usize, gain: f64 },
    Const { value: f64 },
}

impl Init {
    fn he(fan_in: usize) -> Self {
        Init::Normal {
            fan_in,
            gain: std::f64::consts::SQRT_2,
        }
    }
}

/// One named, contiguous run of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

#[derive(Debug, Default)]
pub struct Alloc {
    pub blocks: Vec<ParamBlock>,
    pub len: usize,
}

impl Alloc {
    fn take(&mut self, name: String, len: usize, init: Init) -> usize {
        let offset = self.len;
        self.blocks.push(ParamBlock { name, offset, len, init });
        self.len += len;
        offset
    }

    pub fn initialise(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.blocks {
            match b.init {
                Init::Const { value } => out.extend(std::iter::repeat_n(value, b.len)),
                Init::Normal { fan_in, gain } => {
                    let n = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
                    out.extend((0..b.len).map(|_| n.sample(rng)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

impl Conv {
    pub fn new(a: &mut Alloc, name: &str, cin: usize, cout: usize, k: usize, w_init: Init, b_init: Init) -> Self {
        let w = a.take(format!("{name}.weight"), cout * cin * k * k, w_init);
        let b = a.take(format!("{name}.bias"), cout, b_init);
        Conv { cin, cout, k, w, b }
    }

    pub fn he(a: &mut Alloc, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(a, name, cin, cout, k, Init::he(cin * k * k), Init::Const { value: 0.0 })
    }

    fn wlen(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.cin);
        conv2d(x, &p[self.w..self.w + self.wlen()], &p[self.b..self.b + self.cout], self.cout, self.k)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Tensor, dout: &Tensor) -> Tensor {
        let (dw, rest) = g[self.w..].split_at_mut(self.b - self.w);
        conv2d_backward(x, &p[self.w..self.w + self.wlen()], dout, self.k, &mut dw[..self.wlen()], &mut rest[..self.cout])
    }
}

/// Per-channel instance normalisation with affine scale and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub c: usize,
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl Norm {
    pub fn new(a: &mut Alloc, name: &str, c: usize) -> Self {
        let gamma = a.take(format!("{name}.gamma"), c, Init::Const { value: 1.0 });
        let beta = a.take(format!("{name}.beta"), c, Init::Const { value: 0.0 });
        Norm { c, gamma, beta }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, NormCache) {
        let n = x.plane() as f64;
        let mut xhat = Tensor::zeros_like(x);
        let mut y = Tensor::zeros_like(x);
        let mut inv_std = Vec::with_capacity(x.c);
        for c in 0..x.c {
            let xi = x.channel(c);
            let mu = xi.iter().sum::<f64>() / n;
            let var = xi.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(is);
            let (ga, be) = (p[self.gamma + c], p[self.beta + c]);
            for (i, &v) in xi.iter().enumerate() {
                let h = (v - mu) * is;
                xhat.channel_mut(c)[i] = h;
                y.channel_mut(c)[i] = ga * h + be;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &NormCache, dy: &Tensor) -> Tensor {
        let n = dy.plane() as f64;
        let mut dx = Tensor::zeros_like(dy);
        for c in 0..dy.c {
            let (d, h) = (dy.channel(c), cache.xhat.channel(c));
            let ga = p[self.gamma + c];
            let sum_d: f64 = d.iter().sum();
            let sum_dh: f64 = d.iter().zip(h).map(|(a, b)| a * b).sum();
            g[self.gamma + c] += sum_dh;
            g[self.beta + c] += sum_d;
            let (m1, m2) = (ga * sum_d / n, ga * sum_dh / n);
            let is = cache.inv_std[c];
            for ((o, &dv), &hv) in dx.channel_mut(c).iter_mut().zip(d).zip(h) {
                *o = is * (ga * dv - m1 - hv * m2);
            }
        }
        dx
    }
}

fn relu(x: &Tensor) -> Tensor {
    Tensor::from_data(x.c, x.h, x.w, x.data.iter().map(|&v| v.max(0.0)).collect())
}

fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    Tensor::from_data(
        dy.c,
        dy.h,
        dy.w,
        dy.data.iter().zip(&y.data).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
    )
}

/// conv3x3 → norm → ReLU, twice.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Tensor,
    n1: NormCache,
    a1: Tensor,
    n2: NormCache,
    a2: Tensor,
}

impl ConvBlock {
    pub fn new(a: &mut Alloc, name: &str, cin: usize, cout: usize) -> Self {
        ConvBlock {
            conv1: Conv::he(a, &format!("{name}.conv1"), cin, cout, 3),
            norm1: Norm::new(a, &format!("{name}.norm1"), cout),
            conv2: Conv::he(a, &format!("{name}.conv2"), cout, cout, 3),
            norm2: Norm::new(a, &format!("{name}.norm2"), cout),
        }
    }

    pub fn cout(&self) -> usize {
        self.conv2.cout
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, BlockCache) {
        let (z1, n1) = self.norm1.forward(p, &self.conv1.forward(p, x));
        let a1 = relu(&z1);
        let (z2, n2) = self.norm2.forward(p, &self.conv2.forward(p, &a1));
        let a2 = relu(&z2);
        (
            a2.clone(),
            BlockCache {
                x: x.clone(),
                n1,
                a1,
                n2,
                a2,
            },
        )
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], c: &BlockCache, dy: &Tensor) -> Tensor {
        let d = relu_backward(&c.a2, dy);
        let d = self.norm2.backward(p, g, &c.n2, &d);
        let d = self.conv2.backward(p, g, &c.a1, &d);
        let d = relu_backward(&c.a1, &d);
        let d = self.norm1.backward(p, g, &c.n1, &d);
        self.conv1.backward(p, g, &c.x, &d)
    }
}

/// Squeeze-style channel gate `2 σ(W2 relu(W1 mean(x) + b1) + b2)`. With
/// `W2 = 0, b2 = 0` the gate is exactly 1.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    c: usize,
    r: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelCache {
    x: Tensor,
    m: Vec<f64>,
    hidden: Vec<f64>,
    s: Vec<f64>,
}

impl ChannelAttention {
    pub fn new(a: &mut Alloc, name: &str, c: usize) -> Self {
        let r = (c / 2).max(1);
        let w1 = a.take(format!("{name}.fc1.weight"), r * c, Init::he(c));
        let b1 = a.take(format!("{name}.fc1.bias"), r, Init::Const { value: 0.0 });
        let w2 = a.take(format!("{name}.fc2.weight"), c * r, Init::Normal { fan_in: r, gain: 0.5 });
        let b2 = a.take(format!("{name}.fc2.bias"), c, Init::Const { value: 0.0 });
        ChannelAttention { c, r, w1, b1, w2, b2 }
    }

    pub fn gate_params(&self) -> [(usize, usize); 2] {
        [(self.w2, self.c * self.r), (self.b2, self.c)]
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, ChannelCache) {
        let (c, r) = (self.c, self.r);
        let n = x.plane() as f64;
        let m: Vec<f64> = (0..c).map(|i| x.channel(i).iter().sum::<f64>() / n).collect();
        let hidden: Vec<f64> = (0..r)
            .map(|j| {
                let z = p[self.b1 + j] + (0..c).map(|i| p[self.w1 + j * c + i] * m[i]).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let s: Vec<f64> = (0..c)
            .map(|i| sigmoid(p[self.b2 + i] + (0..r).map(|j| p[self.w2 + i * r + j] * hidden[j]).sum::<f64>()))
            .collect();
        let mut y = x.clone();
        for i in 0..c {
            let gate = 2.0 * s[i];
            y.channel_mut(i).iter_mut().for_each(|v| *v *= gate);
        }
        (
            y,
            ChannelCache {
                x: x.clone(),
                m,
                hidden,
                s,
            },
        )
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &ChannelCache, dy: &Tensor) -> Tensor {
        let (c, r) = (self.c, self.r);
        let x = &cache.x;
        let n = x.plane() as f64;
        let mut dx = Tensor::zeros_like(dy);
        let mut ds = vec![0.0; c];
        for i in 0..c {
            let gate = 2.0 * cache.s[i];
            let dgate: f64 = dy.channel(i).iter().zip(x.channel(i)).map(|(a, b)| a * b).sum();
            ds[i] = dgate * 2.0 * cache.s[i] * (1.0 - cache.s[i]);
            for (o, &d) in dx.channel_mut(i).iter_mut().zip(dy.channel(i)) {
                *o = gate * d;
            }
        }
        let mut dh = vec![0.0; r];
        for i in 0..c {
            g[self.b2 + i] += ds[i];
            for j in 0..r {
                g[self.w2 + i * r + j] += ds[i] * cache.hidden[j];
                dh[j] += ds[i] * p[self.w2 + i * r + j];
            }
        }
        let mut dm = vec![0.0; c];
        for j in 0..r {
            if cache.hidden[j] <= 0.0 {
                continue;
            }
            g[self.b1 + j] += dh[j];
            for i in 0..c {
                g[self.w1 + j * c + i] += dh[j] * cache.m[i];
                dm[i] += dh[j] * p[self.w1 + j * c + i];
            }
        }
        for i in 0..c {
            let add = dm[i] / n;
            dx.channel_mut(i).iter_mut().for_each(|v| *v += add);
        }
        dx
    }
}

/// Spatial gate `2 σ(conv3x3([mean_c x, max_c x]))`; zero conv parameters
/// give a gate of exactly 1.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv: Conv,
}

#[derive(Debug, Clone)]
pub struct SpatialCache {
    x: Tensor,
    pooled: Tensor,
    argmax: Vec<usize>,
    s: Vec<f64>,
}

impl SpatialAttention {
    pub fn new(a: &mut Alloc, name: &str) -> Self {
        SpatialAttention {
            conv: Conv::new(
                a,
                &format!("{name}.conv"),
                2,
                1,
                3,
                Init::Normal { fan_in: 18, gain: 0.5 },
                Init::Const { value: 0.0 },
            ),
        }
    }

    pub fn gate_params(&self) -> [(usize, usize); 2] {
        [(self.conv.w, 18), (self.conv.b, 1)]
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, SpatialCache) {
        let np = x.plane();
        let mut pooled = Tensor::zeros(2, x.h, x.w);
        let mut argmax = vec![0usize; np];
        for q in 0..np {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            for c in 0..x.c {
                let v = x.data[c * np + q];
                sum += v;
                if v > best {
                    best = v;
                    argmax[q] = c;
                }
            }
            pooled.data[q] = sum / x.c as f64;
            pooled.data[np + q] = best;
        }
        let logits = self.conv.forward(p, &pooled);
        let s: Vec<f64> = logits.data.iter().map(|&z| sigmoid(z)).collect();
        let mut y = x.clone();
        for c in 0..x.c {
            for (v, &sv) in y.channel_mut(c).iter_mut().zip(&s) {
                *v *= 2.0 * sv;
            }
        }
        (
            y,
            SpatialCache {
                x: x.clone(),
                pooled,
                argmax,
                s,
            },
        )
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &SpatialCache, dy: &Tensor) -> Tensor {
        let x = &cache.x;
        let np = x.plane();
        let mut dlogit = Tensor::zeros(1, x.h, x.w);
        let mut dx = Tensor::zeros_like(dy);
        for q in 0..np {
            let sv = cache.s[q];
            let mut dgate = 0.0;
            for c in 0..x.c {
                let i = c * np + q;
                dgate += dy.data[i] * x.data[i];
                dx.data[i] = dy.data[i] * 2.0 * sv;
            }
            dlogit.data[q] = dgate * 2.0 * sv * (1.0 - sv);
        }
        let dpooled = self.conv.backward(p, g, &cache.pooled, &dlogit);
        for q in 0..np {
            let dmean = dpooled.data[q] / x.c as f64;
            for c in 0..x.c {
                dx.data[c * np + q] += dmean;
            }
            dx.data[cache.argmax[q] * np + q] += dpooled.data[np + q];
        }
        dx
    }
}

/// Channel attention followed by spatial attention.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

#[derive(Debug, Clone)]
pub struct CbamCache {
    ch: ChannelCache,
    sp: SpatialCache,
}

impl Cbam {
    pub fn new(a: &mut Alloc, name: &str, c: usize) -> Self {
        Cbam {
            channel: ChannelAttention::new(a, &format!("{name}.channel"), c),
            spatial: SpatialAttention::new(a, &format!("{name}.spatial")),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, CbamCache) {
        let (y, ch) = self.channel.forward(p, x);
        let (y, sp) = self.spatial.forward(p, &y);
        (y, CbamCache { ch, sp })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], c: &CbamCache, dy: &Tensor) -> Tensor {
        let d = self.spatial.backward(p, g, &c.sp, dy);
        self.channel.backward(p, g, &c.ch, &d)
    }
}

/// Convolutional LSTM cell; gates come from one 3x3 convolution over
/// `[x, h_prev]` in the order input, forget, output, candidate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub cin: usize,
    pub hid: usize,
    conv: Conv,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    xh: Tensor,
    i: Tensor,
    f: Tensor,
    o: Tensor,
    g: Tensor,
    c_prev: Tensor,
    tanh_c: Tensor,
}

impl LstmCell {
    pub fn new(a: &mut Alloc, name: &str, cin: usize, hid: usize) -> Self {
        let fan_in = (cin + hid) * 9;
        let w = a.take(format!("{name}.weight"), 4 * hid * fan_in, Init::Normal { fan_in, gain: 1.0 });
        let b_in = a.take(format!("{name}.bias_i"), hid, Init::Const { value: 0.0 });
        a.take(format!("{name}.bias_f"), hid, Init::Const { value: 1.0 });
        a.take(format!("{name}.bias_og"), 2 * hid, Init::Const { value: 0.0 });
        LstmCell {
            cin,
            hid,
            conv: Conv {
                cin: cin + hid,
                cout: 4 * hid,
                k: 3,
                w,
                b: b_in,
            },
        }
    }

    /// Returns `(h, c, cache)`.
    pub fn forward(&self, p: &[f64], x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> (Tensor, Tensor, LstmCache) {
        let xh = Tensor::concat(&[x, h_prev]);
        let z = self.conv.forward(p, &xh);
        let parts = z.split(&[self.hid; 4]);
        let act = |t: &Tensor, f: fn(f64) -> f64| Tensor::from_data(t.c, t.h, t.w, t.data.iter().map(|&v| f(v)).collect());
        let i = act(&parts[0], sigmoid);
        let f = act(&parts[1], sigmoid);
        let o = act(&parts[2], sigmoid);
        let g = act(&parts[3], f64::tanh);
        let mut c = Tensor::zeros_like(c_prev);
        for q in 0..c.data.len() {
            c.data[q] = f.data[q] * c_prev.data[q] + i.data[q] * g.data[q];
        }
        let tanh_c = act(&c, f64::tanh);
        let h = Tensor::from_data(c.c, c.h, c.w, o.data.iter().zip(&tanh_c.data).map(|(a, b)| a * b).collect());
        (
            h,
            c,
            LstmCache {
                xh,
                i,
                f,
                o,
                g,
                c_prev: c_prev.clone(),
                tanh_c,
            },
        )
    }

    /// Given the gradients reaching `h` and `c`, returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn backward(&self, p: &[f64], grad: &mut [f64], k: &LstmCache, dh: &Tensor, dc_next: &Tensor) -> (Tensor, Tensor, Tensor) {
        let n = dh.data.len();
        let mut dz = Tensor::zeros(4 * self.hid, dh.h, dh.w);
        let mut dc_prev = Tensor::zeros_like(dh);
        for q in 0..n {
            let (i, f, o, g, tc) = (k.i.data[q], k.f.data[q], k.o.data[q], k.g.data[q], k.tanh_c.data[q]);
            let dhq = dh.data[q];
            let dc = dc_next.data[q] + dhq * o * (1.0 - tc * tc);
            dc_prev.data[q] = dc * f;
            dz.data[q] = dc * g * i * (1.0 - i);
            dz.data[n + q] = dc * k.c_prev.data[q] * f * (1.0 - f);
            dz.data[2 * n + q] = dhq * tc * o * (1.0 - o);
            dz.data[3 * n + q] = dc * i * (1.0 - g * g);
        }
        let dxh = self.conv.backward(p, grad, &k.xh, &dz);
        let mut parts = dxh.split(&[self.cin, self.hid]).into_iter();
        let dx = parts.next().unwrap();
        let dh_prev = parts.next().unwrap();
        (dx, dh_prev, dc_prev)
    }
}

/// Per-pixel gated blend of forward and backward recurrent states:
/// `s = σ(conv1x1([hf, hb]))`, `out = s hf + (1 - s) hb`.
#[derive(Debug, Clone)]
pub struct Fusion {
    conv: Conv,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    cat: Tensor,
    s: Tensor,
}

impl Fusion {
    pub fn new(a: &mut Alloc, name: &str, hid: usize) -> Self {
        Fusion {
            conv: Conv::new(
                a,
                name,
                2 * hid,
                hid,
                1,
                Init::Normal { fan_in: 2 * hid, gain: 1.0 },
                Init::Const { value: 0.0 },
            ),
        }
    }

    pub fn forward(&self, p: &[f64], hf: &Tensor, hb: &Tensor) -> (Tensor, FusionCache) {
        let cat = Tensor::concat(&[hf, hb]);
        let z = self.conv.forward(p, &cat);
        let s = Tensor::from_data(z.c, z.h, z.w, z.data.iter().map(|&v| sigmoid(v)).collect());
        let mut out = Tensor::zeros_like(hf);
        for q in 0..out.data.len() {
            out.data[q] = s.data[q] * hf.data[q] + (1.0 - s.data[q]) * hb.data[q];
        }
        (out, FusionCache { cat, s })
    }

    /// Returns `(dhf, dhb)`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], c: &FusionCache, dy: &Tensor) -> (Tensor, Tensor) {
        let n = dy.data.len();
        let mut dz = Tensor::zeros_like(dy);
        let mut dhf = Tensor::zeros_like(dy);
        let mut dhb = Tensor::zeros_like(dy);
        for q in 0..n {
            let (s, hf, hb) = (c.s.data[q], c.cat.data[q], c.cat.data[n + q]);
            dz.data[q] = dy.data[q] * (hf - hb) * s * (1.0 - s);
            dhf.data[q] = dy.data[q] * s;
            dhb.data[q] = dy.data[q] * (1.0 - s);
        }
        let dcat = self.conv.backward(p, g, &c.cat, &dz);
        dhf.add_assign(&Tensor::from_data(dy.c, dy.h, dy.w, dcat.data[..n].to_vec()));
        dhb.add_assign(&Tensor::from_data(dy.c, dy.h, dy.w, dcat.data[n..].to_vec()));
        (dhf, dhb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, rng: &mut impl Rng, lo: f64) -> Tensor {
        Tensor::from_data(c, h, w, (0..c * h * w).map(|_| rng.gen_range(lo..1.0)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    /// Central differences of `<f(p, x), r>` against the analytic
    /// parameter and input gradients.
    fn check(
        n_params: usize,
        p: &[f64],
        x: &Tensor,
        r: &Tensor,
        f: &dyn Fn(&[f64], &Tensor) -> Tensor,
        grads: &dyn Fn(&[f64], &mut [f64], &Tensor, &Tensor) -> Tensor,
    ) {
        let h = 1e-6;
        let mut g = vec![0.0; n_params];
        let dx = grads(p, &mut g, x, r);
        for i in 0..n_params {
            let (mut a, mut b) = (p.to_vec(), p.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (dot(&f(&a, x), r) - dot(&f(&b, x), r)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..x.data.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (dot(&f(p, &a), r) - dot(&f(p, &b), r)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6 * fd.abs().max(1.0), "input {i}: {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = Alloc::default();
        let n = Norm::new(&mut a, "n", 3);
        let p: Vec<f64> = (0..a.len).map(|_| rng.gen_range(0.5..1.5)).collect();
        let x = random(3, 4, 5, &mut rng, -1.0);
        let r = random(3, 4, 5, &mut rng, -1.0);
        check(a.len, &p, &x, &r, &|p, x| n.forward(p, x).0, &|p, g, x, r| {
            let (_, c) = n.forward(p, x);
            n.backward(p, g, &c, r)
        });
    }

    #[test]
    fn channel_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = Alloc::default();
        let ca = ChannelAttention::new(&mut a, "ca", 4);
        let mut p = a.initialise(&mut rng);
        // keep both hidden units active
        p[ca.b1] = 2.0;
        p[ca.b1 + 1] = 2.0;
        let x = random(4, 3, 3, &mut rng, -1.0);
        let r = random(4, 3, 3, &mut rng, -1.0);
        check(a.len, &p, &x, &r, &|p, x| ca.forward(p, x).0, &|p, g, x, r| {
            let (_, c) = ca.forward(p, x);
            ca.backward(p, g, &c, r)
        });
    }

    #[test]
    fn spatial_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Alloc::default();
        let sa = SpatialAttention::new(&mut a, "sa");
        let p = a.initialise(&mut rng);
        let x = random(3, 4, 4, &mut rng, -1.0);
        let r = random(3, 4, 4, &mut rng, -1.0);
        check(a.len, &p, &x, &r, &|p, x| sa.forward(p, x).0, &|p, g, x, r| {
            let (_, c) = sa.forward(p, x);
            sa.backward(p, g, &c, r)
        });
    }

    #[test]
    fn lstm_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = Alloc::default();
        let cell = LstmCell::new(&mut a, "l", 2, 3);
        let p = a.initialise(&mut rng);
        let hp = random(3, 3, 3, &mut rng, -1.0);
        let cp = random(3, 3, 3, &mut rng, -1.0);
        let x = random(2, 3, 3, &mut rng, -1.0);
        // objective <h, r1> + <c, r2> packed as one output
        let r = random(6, 3, 3, &mut rng, -1.0);
        let f = |p: &[f64], x: &Tensor| {
            let (h, c, _) = cell.forward(p, x, &hp, &cp);
            Tensor::concat(&[&h, &c])
        };
        check(a.len, &p, &x, &r, &f, &|p, g, x, r| {
            let (_, _, k) = cell.forward(p, x, &hp, &cp);
            let parts = r.split(&[3, 3]);
            cell.backward(p, g, &k, &parts[0], &parts[1]).0
        });
    }

    #[test]
    fn fusion_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = Alloc::default();
        let fu = Fusion::new(&mut a, "f", 2);
        let p = a.initialise(&mut rng);
        let x = random(4, 3, 3, &mut rng, -1.0);
        let r = random(2, 3, 3, &mut rng, -1.0);
        let f = |p: &[f64], x: &Tensor| {
            let s = x.split(&[2, 2]);
            fu.forward(p, &s[0], &s[1]).0
        };
        check(a.len, &p, &x, &r, &f, &|p, g, x, r| {
            let s = x.split(&[2, 2]);
            let (_, c) = fu.forward(p, &s[0], &s[1]);
            let (a, b) = fu.backward(p, g, &c, r);
            Tensor::concat(&[&a, &b])
        });
    }

    #[test]
    fn conv_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = Alloc::default();
        let b = ConvBlock::new(&mut a, "b", 2, 3);
        let p = a.initialise(&mut rng);
        let x = random(2, 4, 4, &mut rng, -1.0);
        let r = random(3, 4, 4, &mut rng, -1.0);
        check(a.len, &p, &x, &r, &|p, x| b.forward(p, x).0, &|p, g, x, r| {
            let (_, c) = b.forward(p, x);
            b.backward(p, g, &c, r)
        });
    }
}
