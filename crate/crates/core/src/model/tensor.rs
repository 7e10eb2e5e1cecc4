//! Channel-major 2D feature maps and the raw kernels used by the layers.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Tensor { c, h, w, data }
    }

    pub fn zeros_like(t: &Tensor) -> Self {
        Self::zeros(t.c, t.h, t.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.data.len(), o.data.len());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.data.len()).sum());
        for t in parts {
            assert!(t.h == h && t.w == w, "concat spatial mismatch");
            data.extend_from_slice(&t.data);
        }
        Tensor::from_data(parts.iter().map(|t| t.c).sum(), h, w, data)
    }

    /// Splits along channels into pieces of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Vec<Tensor> {
        let p = self.plane();
        let mut out = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &c in sizes {
            out.push(Tensor::from_data(c, self.h, self.w, self.data[at * p..(at + c) * p].to_vec()));
            at += c;
        }
        assert_eq!(at, self.c, "split sizes");
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Patch matrix of a zero-padded `k x k` neighbourhood: row
/// `(ci, ky, kx)`, column `y * w + x`.
fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let (h, w) = (x.h, x.w);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; x.c * k * k * hw];
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let yi = y as isize + dy;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let s0 = (yi as usize) * w;
                    for xx in x0..x1 {
                        row[y * w + xx] = src[s0 + (xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = out.channel_mut(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let yi = y as isize + dy;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let d0 = (yi as usize) * w;
                    for xx in x0..x1 {
                        dst[d0 + (xx as isize + dx) as usize] += row[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, with `a` and `b`
/// optionally read transposed from row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the `m x k`, `k x n` and
    // `m x n` elements whose bounds were just checked.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded "same" convolution. `w` is `[cout][cin][k][k]`, `b` is `[cout]`.
pub fn conv2d(x: &Tensor, w: &[f64], b: &[f64], cout: usize, k: usize) -> Tensor {
    let hw = x.plane();
    let kk = x.c * k * k;
    let mut out = Tensor::zeros(cout, x.h, x.w);
    for co in 0..cout {
        out.channel_mut(co).fill(b[co]);
    }
    if k == 1 {
        gemm(cout, kk, hw, w, false, &x.data, false, 1.0, &mut out.data);
    } else {
        let cols = im2col(x, k);
        gemm(cout, kk, hw, w, false, &cols, false, 1.0, &mut out.data);
    }
    out
}

/// Backward of [`conv2d`]: accumulates weight and bias gradients into `dw`,
/// `db` and returns the input gradient.
pub fn conv2d_backward(x: &Tensor, w: &[f64], dout: &Tensor, k: usize, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let hw = x.plane();
    let cout = dout.c;
    let kk = x.c * k * k;
    for co in 0..cout {
        db[co] += dout.channel(co).iter().sum::<f64>();
    }
    let owned;
    let cols: &[f64] = if k == 1 {
        &x.data
    } else {
        owned = im2col(x, k);
        &owned
    };
    gemm(cout, hw, kk, &dout.data, false, cols, true, 1.0, dw);
    let mut dcols = vec![0.0; kk * hw];
    gemm(kk, cout, hw, w, true, &dout.data, false, 0.0, &mut dcols);
    if k == 1 {
        Tensor::from_data(x.c, x.h, x.w, dcols)
    } else {
        col2im(&dcols, x.c, x.h, x.w, k)
    }
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let i = x.channel(c);
        let o = out.channel_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let a = (2 * y) * x.w + 2 * xx;
                o[y * w + xx] = 0.25 * (i[a] + i[a + 1] + i[a + x.w] + i[a + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(dout: &Tensor, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        let g = dout.channel(c);
        let d = dx.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                d[y * w + x] = 0.25 * g[(y / 2) * dout.w + x / 2];
            }
        }
    }
    dx
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let i = x.channel(c);
        let o = out.channel_mut(c);
        for y in 0..h {
            for xx in 0..w {
                o[y * w + xx] = i[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(dout.c, dout.h / 2, dout.w / 2);
    for c in 0..dout.c {
        let g = dout.channel(c);
        let w = dx.w;
        let d = dx.channel_mut(c);
        for y in 0..dout.h {
            for x in 0..dout.w {
                d[(y / 2) * w + x / 2] += g[y * dout.w + x];
            }
        }
    }
    dx
}
