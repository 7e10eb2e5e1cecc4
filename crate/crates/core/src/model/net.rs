//! The sequence segmentation network: a per-slice attention U-Net encoder,
//! a bidirectional ConvLSTM over the three slice positions at the
//! bottleneck, gated fusion with a second attention pair, and a per-slice
//! decoder with a sigmoid head.

use super::layers::{Alloc, Cbam, Conv, ConvBlock, Fusion, Init, LstmCell, ParamBlock};
use super::tensor::{avg_pool2, avg_pool2_backward, upsample2, upsample2_backward, Tensor};
use super::{ModelConfig, ModelParams};
use crate::sequence::SEQ_LEN;

#[derive(Debug, Clone)]
pub struct Net {
    pub config: ModelConfig,
    enc: Vec<(ConvBlock, Cbam)>,
    fwd: LstmCell,
    bwd: LstmCell,
    fusion: Fusion,
    post: Cbam,
    dec: Vec<ConvBlock>,
    head: Conv,
    pub blocks: Vec<ParamBlock>,
    pub n_params: usize,
}

struct SliceEncoding {
    input: Tensor,
    blocks: Vec<super::layers::BlockCache>,
    attn: Vec<super::layers::CbamCache>,
    skips: Vec<Tensor>,
}

struct SliceDecoding {
    post: super::layers::CbamCache,
    blocks: Vec<super::layers::BlockCache>,
    head_in: Tensor,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    enc: Vec<SliceEncoding>,
    fwd: Vec<super::layers::LstmCache>,
    bwd: Vec<super::layers::LstmCache>,
    fusion: Vec<super::layers::FusionCache>,
    dec: Vec<SliceDecoding>,
    /// Head logits per slice.
    pub logits: Vec<Tensor>,
}

impl Net {
    pub fn new(config: &ModelConfig) -> Self {
        let mut a = Alloc::default();
        let depth = config.depth;
        let mut enc = Vec::with_capacity(depth);
        let mut cin = config.input_channels;
        for l in 0..depth {
            let c = config.width(l);
            enc.push((
                ConvBlock::new(&mut a, &format!("enc{l}"), cin, c),
                Cbam::new(&mut a, &format!("enc{l}.attn"), c),
            ));
            cin = c;
        }
        let hid = config.recurrent_hidden;
        let fwd = LstmCell::new(&mut a, "lstm_fwd", cin, hid);
        let bwd = LstmCell::new(&mut a, "lstm_bwd", cin, hid);
        let fusion = Fusion::new(&mut a, "fusion", hid);
        let post = Cbam::new(&mut a, "fusion.attn", hid);
        let mut dec = Vec::with_capacity(depth);
        let mut below = hid;
        for l in (0..depth).rev() {
            let c = config.width(l);
            dec.push(ConvBlock::new(&mut a, &format!("dec{l}"), below + c, c));
            below = c;
        }
        dec.reverse();
        let head = Conv::new(
            &mut a,
            "head",
            below,
            1,
            1,
            Init::Normal { fan_in: below, gain: 1.0 },
            Init::Const { value: -2.0 },
        );
        Net {
            config: config.clone(),
            enc,
            fwd,
            bwd,
            fusion,
            post,
            dec,
            head,
            n_params: a.len,
            blocks: a.blocks,
        }
    }

    pub fn init_params(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let mut a = Alloc::default();
        a.blocks = self.blocks.clone();
        a.len = self.n_params;
        a.initialise(rng)
    }

    /// Parameter ranges whose zeroing makes every attention gate exactly 1.
    pub fn attention_gate_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for cbam in self.enc.iter().map(|(_, c)| c).chain(std::iter::once(&self.post)) {
            out.extend(cbam.channel.gate_params());
            out.extend(cbam.spatial.gate_params());
        }
        out
    }

    pub fn head_range(&self) -> (usize, usize) {
        (self.head.w, self.head.cin + 1)
    }

    /// Forward pass on `SEQ_LEN` two-channel inputs.
    pub fn forward(&self, p: &[f64], inputs: &[Tensor]) -> ForwardTrace {
        assert_eq!(inputs.len(), SEQ_LEN);
        let mut enc = Vec::with_capacity(SEQ_LEN);
        let mut bottleneck = Vec::with_capacity(SEQ_LEN);
        for x in inputs {
            let mut cur = x.clone();
            let mut blocks = Vec::new();
            let mut attn = Vec::new();
            let mut skips = Vec::new();
            for (block, cbam) in &self.enc {
                let (y, bc) = block.forward(p, &cur);
                let (y, ac) = cbam.forward(p, &y);
                blocks.push(bc);
                attn.push(ac);
                cur = avg_pool2(&y);
                skips.push(y);
            }
            bottleneck.push(cur);
            enc.push(SliceEncoding {
                input: x.clone(),
                blocks,
                attn,
                skips,
            });
        }

        let (bh, bw) = (bottleneck[0].h, bottleneck[0].w);
        let hid = self.config.recurrent_hidden;
        let zero = Tensor::zeros(hid, bh, bw);
        let run = |cell: &LstmCell, order: &mut dyn Iterator<Item = usize>| {
            let mut h = zero.clone();
            let mut c = zero.clone();
            let mut hs = vec![zero.clone(); SEQ_LEN];
            let mut caches: Vec<Option<super::layers::LstmCache>> = vec![None; SEQ_LEN];
            for t in order {
                let (nh, nc, cache) = cell.forward(p, &bottleneck[t], &h, &c);
                hs[t] = nh.clone();
                caches[t] = Some(cache);
                h = nh;
                c = nc;
            }
            (hs, caches.into_iter().map(Option::unwrap).collect::<Vec<_>>())
        };
        let (hf, fwd) = run(&self.fwd, &mut (0..SEQ_LEN));
        let (hb, bwd) = run(&self.bwd, &mut (0..SEQ_LEN).rev());

        let mut fusion = Vec::with_capacity(SEQ_LEN);
        let mut dec = Vec::with_capacity(SEQ_LEN);
        let mut logits = Vec::with_capacity(SEQ_LEN);
        for t in 0..SEQ_LEN {
            let (fused, fc) = self.fusion.forward(p, &hf[t], &hb[t]);
            fusion.push(fc);
            let (mut cur, post) = self.post.forward(p, &fused);
            let mut blocks = Vec::new();
            for l in (0..self.config.depth).rev() {
                let up = upsample2(&cur);
                let (y, bc) = self.dec[l].forward(p, &Tensor::concat(&[&up, &enc[t].skips[l]]));
                blocks.push(bc);
                cur = y;
            }
            logits.push(self.head.forward(p, &cur));
            dec.push(SliceDecoding {
                post,
                blocks,
                head_in: cur,
            });
        }
        ForwardTrace {
            enc,
            fwd,
            bwd,
            fusion,
            dec,
            logits,
        }
    }

    /// Accumulates into `g` the gradient of a loss whose derivative with
    /// respect to the head logits is `dlogits`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], trace: &ForwardTrace, dlogits: &[Tensor]) {
        let depth = self.config.depth;
        let hid = self.config.recurrent_hidden;
        let mut dskips: Vec<Vec<Tensor>> = Vec::with_capacity(SEQ_LEN);
        let mut dhf = Vec::with_capacity(SEQ_LEN);
        let mut dhb = Vec::with_capacity(SEQ_LEN);
        for t in 0..SEQ_LEN {
            let d = &trace.dec[t];
            let mut cur = self.head.backward(p, g, &d.head_in, &dlogits[t]);
            let mut ds: Vec<Option<Tensor>> = vec![None; depth];
            for l in 0..depth {
                let dcat = self.dec[l].backward(p, g, &d.blocks[depth - 1 - l], &cur);
                let below = dcat.c - self.config.width(l);
                let mut parts = dcat.split(&[below, self.config.width(l)]).into_iter();
                cur = upsample2_backward(&parts.next().unwrap());
                ds[l] = parts.next();
            }
            let dfused = self.post.backward(p, g, &d.post, &cur);
            let (a, b) = self.fusion.backward(p, g, &trace.fusion[t], &dfused);
            dhf.push(a);
            dhb.push(b);
            dskips.push(ds.into_iter().map(Option::unwrap).collect());
        }

        let shape = (dhf[0].h, dhf[0].w);
        let zero = Tensor::zeros(hid, shape.0, shape.1);
        let mut dbottle: Vec<Tensor> = vec![Tensor::zeros(self.fwd.cin, shape.0, shape.1); SEQ_LEN];
        // forward direction ran 0..SEQ_LEN, so its gradient flows back from the end
        let mut dh = zero.clone();
        let mut dc = zero.clone();
        for t in (0..SEQ_LEN).rev() {
            let mut dht = dhf[t].clone();
            dht.add_assign(&dh);
            let (dx, dhp, dcp) = self.fwd.backward(p, g, &trace.fwd[t], &dht, &dc);
            dbottle[t].add_assign(&dx);
            dh = dhp;
            dc = dcp;
        }
        let mut dh = zero.clone();
        let mut dc = zero;
        for t in 0..SEQ_LEN {
            let mut dht = dhb[t].clone();
            dht.add_assign(&dh);
            let (dx, dhp, dcp) = self.bwd.backward(p, g, &trace.bwd[t], &dht, &dc);
            dbottle[t].add_assign(&dx);
            dh = dhp;
            dc = dcp;
        }

        for t in 0..SEQ_LEN {
            let e = &trace.enc[t];
            let mut dpooled = dbottle[t].clone();
            for l in (0..depth).rev() {
                let skip = &e.skips[l];
                let mut dy = avg_pool2_backward(&dpooled, skip.h, skip.w);
                dy.add_assign(&dskips[t][l]);
                let (block, cbam) = &self.enc[l];
                let d = cbam.backward(p, g, &e.attn[l], &dy);
                dpooled = block.backward(p, g, &e.blocks[l], &d);
            }
            debug_assert_eq!(dpooled.data.len(), e.input.data.len());
        }
    }
}

impl ModelParams {
    pub fn net(&self) -> Net {
        Net::new(&self.config)
    }
}
