use rand::Rng as _;

use super::ops::{self, add_positional, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward};
use super::{Arch, Block, Body, Heads, Lin, Model, Norm, Real};
use crate::error::{Error, Result};
use crate::rng::Rng;

impl Lin {
    fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.din * self.dout]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.dout]
    }

    fn grads<'a, T>(&self, g: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        let (gw, rest) = g[self.w..].split_at_mut(self.din * self.dout);
        (gw, &mut rest[self.b - self.w - self.din * self.dout..][..self.dout])
    }

    fn apply<T: Real>(&self, p: &[T], x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.dout];
        linear(x, n, self.din, self.weight(p), self.bias(p), self.dout, &mut y);
        y
    }

    fn backprop<T: Real>(&self, p: &[T], g: &mut [T], x: &[T], n: usize, dy: &[T], dx: Option<&mut [T]>) {
        let (gw, gb) = self.grads(g);
        linear_backward(x, n, self.din, self.weight(p), self.dout, dy, dx, gw, gb);
    }
}

impl Norm {
    fn apply<T: Real>(&self, p: &[T], x: &[T], n: usize) -> (Vec<T>, NormCache<T>) {
        let mut y = vec![T::zero(); n * self.d];
        let mut xhat = vec![T::zero(); n * self.d];
        let mut rstd = vec![T::zero(); n];
        layer_norm(
            x,
            n,
            self.d,
            &p[self.g..self.g + self.d],
            &p[self.b..self.b + self.d],
            &mut y,
            &mut xhat,
            &mut rstd,
        );
        (y, NormCache { xhat, rstd })
    }

    fn backprop<T: Real>(&self, p: &[T], g: &mut [T], c: &NormCache<T>, n: usize, dy: &[T], dx: &mut [T]) {
        let (gg, rest) = g[self.g..].split_at_mut(self.d);
        let gb = &mut rest[self.b - self.g - self.d..][..self.d];
        layer_norm_backward(&c.xhat, &c.rstd, n, self.d, &p[self.g..self.g + self.d], dy, dx, gg, gb);
    }
}

#[derive(Clone, Debug)]
struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    ln1: NormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_mask: Option<Vec<T>>,
    ln2: NormCache<T>,
    b: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    ffn_mask: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
enum BodyCache<T> {
    Transformer {
        blocks: Vec<BlockCache<T>>,
        final_norm: NormCache<T>,
        z: Vec<T>,
    },
    Feedforward {
        /// Inputs to every dense layer, the flattened embedding first.
        inputs: Vec<Vec<T>>,
        pres: Vec<Vec<T>>,
        masks: Vec<Option<Vec<T>>>,
    },
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    x: Vec<T>,
    embed_mask: Option<Vec<T>>,
    body: BodyCache<T>,
}

/// Per-timestep head outputs: `k` rows of action logits/values and `k` rows
/// of state logits/values.
#[derive(Clone, Debug, PartialEq)]
pub struct Output<T> {
    pub k: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub action: Vec<T>,
    pub state: Vec<T>,
}

impl<T: Real> Output<T> {
    pub fn zeros(k: usize, action_dim: usize, state_dim: usize) -> Self {
        Self {
            k,
            action_dim,
            state_dim,
            action: vec![T::zero(); k * action_dim],
            state: vec![T::zero(); k * state_dim],
        }
    }

    pub fn action_row(&self, t: usize) -> &[T] {
        &self.action[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn state_row(&self, t: usize) -> &[T] {
        &self.state[t * self.state_dim..(t + 1) * self.state_dim]
    }
}

fn dropout_mask<T: Real>(n: usize, p: f32, rng: Option<&mut Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::from_f32(1.0 / (1.0 - p)).unwrap();
    Some(
        (0..n)
            .map(|_| if rng.random::<f32>() < p { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, s) in x.iter_mut().zip(m) {
            *v *= *s;
        }
    }
}

fn check_finite<T: Real>(x: &[T], layer: impl Into<String>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure { layer: layer.into() })
    }
}

impl<T: Real> Model<T> {
    /// Eval-mode forward pass, dropout off.
    pub fn forward(&self, x: &[T]) -> Result<Output<T>> {
        Ok(self.forward_cached(x, None)?.0)
    }

    /// Forward pass that keeps activations; dropout is active when `rng` is given.
    pub fn forward_cached(&self, x: &[T], mut rng: Option<&mut Rng>) -> Result<(Output<T>, Cache<T>)> {
        let c = &self.config;
        let p = &self.params;
        let (k, e) = (c.k, c.embed_dim);
        if x.len() != k * c.input_dim() {
            return Err(Error::Config(format!(
                "input has {} values, expected {}",
                x.len(),
                k * c.input_dim()
            )));
        }
        let layout = self.layout();
        let mut h = layout.embed.apply(p, x, k);
        for t in 0..k {
            add_positional(&mut h[t * e..(t + 1) * e], t);
        }
        let embed_mask = dropout_mask(k * e, c.dropout, rng.as_deref_mut());
        apply_mask(&mut h, &embed_mask);
        check_finite(&h, "embed")?;

        let mut out = Output::zeros(k, c.action_dim(), c.state_dim());
        let body = match &layout.body {
            Body::Transformer { blocks, heads } => {
                let mut caches = Vec::with_capacity(blocks.len());
                for (l, blk) in blocks.iter().enumerate() {
                    let cache = self.block_forward(blk, &mut h, rng.as_deref_mut());
                    check_finite(&h, format!("block{l}"))?;
                    caches.push(cache);
                }
                let (z, final_norm) = heads.norm.apply(p, &h, k);
                out.action = heads.action.apply(p, &z, k);
                out.state = heads.state.apply(p, &z, k);
                BodyCache::Transformer {
                    blocks: caches,
                    final_norm,
                    z,
                }
            }
            Body::Feedforward { hidden, out: head } => {
                let mut inputs = Vec::with_capacity(hidden.len() + 1);
                let mut pres = Vec::with_capacity(hidden.len());
                let mut masks = Vec::with_capacity(hidden.len());
                let mut u = h;
                for (l, lin) in hidden.iter().enumerate() {
                    let pre = lin.apply(p, &u, 1);
                    let mut act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
                    let mask = dropout_mask(act.len(), c.dropout, rng.as_deref_mut());
                    apply_mask(&mut act, &mask);
                    check_finite(&act, format!("hidden{l}"))?;
                    inputs.push(u);
                    pres.push(pre);
                    masks.push(mask);
                    u = act;
                }
                let y = head.apply(p, &u, 1);
                inputs.push(u);
                let (a, s) = (c.action_dim(), c.state_dim());
                for t in 0..k {
                    let row = &y[t * (a + s)..(t + 1) * (a + s)];
                    out.action[t * a..(t + 1) * a].copy_from_slice(&row[..a]);
                    out.state[t * s..(t + 1) * s].copy_from_slice(&row[a..]);
                }
                BodyCache::Feedforward { inputs, pres, masks }
            }
        };
        check_finite(&out.action, "head.action")?;
        check_finite(&out.state, "head.state")?;
        Ok((
            out,
            Cache {
                x: x.to_vec(),
                embed_mask,
                body,
            },
        ))
    }

    fn block_forward(&self, blk: &Block, h: &mut [T], mut rng: Option<&mut Rng>) -> BlockCache<T> {
        let c = &self.config;
        let p = &self.params;
        let (k, e) = (c.k, c.embed_dim);
        let (a, ln1) = blk.ln1.apply(p, h, k);
        let q = blk.q.apply(p, &a, k);
        let kk = blk.k.apply(p, &a, k);
        let v = blk.v.apply(p, &a, k);
        let (probs, ctx) = self.attention(&q, &kk, &v);
        let mut o = blk.o.apply(p, &ctx, k);
        let attn_mask = dropout_mask(k * e, c.dropout, rng.as_deref_mut());
        apply_mask(&mut o, &attn_mask);
        for (hv, ov) in h.iter_mut().zip(&o) {
            *hv += *ov;
        }
        let (b, ln2) = blk.ln2.apply(p, h, k);
        let pre = blk.ff1.apply(p, &b, k);
        let act: Vec<T> = pre.iter().map(|&x| gelu(x)).collect();
        let mut f = blk.ff2.apply(p, &act, k);
        let ffn_mask = dropout_mask(k * e, c.dropout, rng.as_deref_mut());
        apply_mask(&mut f, &ffn_mask);
        for (hv, fv) in h.iter_mut().zip(&f) {
            *hv += *fv;
        }
        BlockCache {
            ln1,
            a,
            q,
            k: kk,
            v,
            probs,
            ctx,
            attn_mask,
            ln2,
            b,
            pre,
            act,
            ffn_mask,
        }
    }

    /// Multi-head scaled dot-product attention across timesteps. Returns the
    /// `[heads, k, k]` probabilities and the `[k, e]` context.
    fn attention(&self, q: &[T], kk: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let c = &self.config;
        let (k, e, nh, dh) = (c.k, c.embed_dim, c.num_heads, c.head_dim());
        let causal = c.arch == Arch::Causal;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut probs = vec![T::zero(); nh * k * k];
        let mut ctx = vec![T::zero(); k * e];
        for hd in 0..nh {
            let off = hd * dh;
            for t in 0..k {
                let visible = if causal { t + 1 } else { k };
                let row = &mut probs[(hd * k + t) * k..(hd * k + t) * k + visible];
                let qt = &q[t * e + off..t * e + off + dh];
                for (s, r) in row.iter_mut().enumerate() {
                    let ks = &kk[s * e + off..s * e + off + dh];
                    let mut dot = T::zero();
                    for (x, y) in qt.iter().zip(ks) {
                        dot += *x * *y;
                    }
                    *r = dot * scale;
                }
                ops::softmax_row(row);
                let ct = &mut ctx[t * e + off..t * e + off + dh];
                for (s, &pw) in row.iter().enumerate() {
                    let vs = &v[s * e + off..s * e + off + dh];
                    for (o, x) in ct.iter_mut().zip(vs) {
                        *o += pw * *x;
                    }
                }
            }
        }
        (probs, ctx)
    }

    /// Accumulates parameter gradients of `sum(d_action * action) + sum(d_state * state)`.
    pub fn backward(&self, cache: &Cache<T>, d_action: &[T], d_state: &[T], grads: &mut [T]) {
        let c = &self.config;
        let p = &self.params;
        let (k, e) = (c.k, c.embed_dim);
        let layout = self.layout();
        let mut dh = vec![T::zero(); k * e];
        match (&layout.body, &cache.body) {
            (
                Body::Transformer { blocks, heads },
                BodyCache::Transformer {
                    blocks: caches,
                    final_norm,
                    z,
                },
            ) => {
                let mut dz = vec![T::zero(); k * e];
                let Heads { norm, action, state } = heads;
                action.backprop(p, grads, z, k, d_action, Some(&mut dz));
                state.backprop(p, grads, z, k, d_state, Some(&mut dz));
                norm.backprop(p, grads, final_norm, k, &dz, &mut dh);
                for (blk, bc) in blocks.iter().zip(caches).rev() {
                    self.block_backward(blk, bc, &mut dh, grads);
                }
            }
            (Body::Feedforward { hidden, out }, BodyCache::Feedforward { inputs, pres, masks }) => {
                let (a, s) = (c.action_dim(), c.state_dim());
                let mut dy = vec![T::zero(); k * (a + s)];
                for t in 0..k {
                    dy[t * (a + s)..t * (a + s) + a].copy_from_slice(&d_action[t * a..(t + 1) * a]);
                    dy[t * (a + s) + a..(t + 1) * (a + s)].copy_from_slice(&d_state[t * s..(t + 1) * s]);
                }
                let last = inputs.last().expect("feedforward cache has the head input");
                let mut du = vec![T::zero(); last.len()];
                out.backprop(p, grads, last, 1, &dy, Some(&mut du));
                for l in (0..hidden.len()).rev() {
                    let mut dpre = du;
                    if let Some(m) = &masks[l] {
                        for (d, s) in dpre.iter_mut().zip(m) {
                            *d *= *s;
                        }
                    }
                    for (d, &x) in dpre.iter_mut().zip(&pres[l]) {
                        *d *= gelu_grad(x);
                    }
                    let mut dx = vec![T::zero(); inputs[l].len()];
                    hidden[l].backprop(p, grads, &inputs[l], 1, &dpre, Some(&mut dx));
                    du = dx;
                }
                dh = du;
            }
            _ => unreachable!("cache built by a different architecture"),
        }
        if let Some(m) = &cache.embed_mask {
            for (d, s) in dh.iter_mut().zip(m) {
                *d *= *s;
            }
        }
        layout.embed.backprop(p, grads, &cache.x, k, &dh, None);
    }

    fn block_backward(&self, blk: &Block, bc: &BlockCache<T>, dh: &mut [T], grads: &mut [T]) {
        let c = &self.config;
        let p = &self.params;
        let (k, e, f) = (c.k, c.embed_dim, c.ffn_dim);

        // feedforward sublayer
        let mut df = dh.to_vec();
        apply_mask(&mut df, &bc.ffn_mask);
        let mut dact = vec![T::zero(); k * f];
        blk.ff2.backprop(p, grads, &bc.act, k, &df, Some(&mut dact));
        for (d, &x) in dact.iter_mut().zip(&bc.pre) {
            *d *= gelu_grad(x);
        }
        let mut db = vec![T::zero(); k * e];
        blk.ff1.backprop(p, grads, &bc.b, k, &dact, Some(&mut db));
        blk.ln2.backprop(p, grads, &bc.ln2, k, &db, dh);

        // attention sublayer
        let mut d_o = dh.to_vec();
        apply_mask(&mut d_o, &bc.attn_mask);
        let mut dctx = vec![T::zero(); k * e];
        blk.o.backprop(p, grads, &bc.ctx, k, &d_o, Some(&mut dctx));
        let (dq, dk, dv) = self.attention_backward(bc, &dctx);
        let mut da = vec![T::zero(); k * e];
        blk.q.backprop(p, grads, &bc.a, k, &dq, Some(&mut da));
        blk.k.backprop(p, grads, &bc.a, k, &dk, Some(&mut da));
        blk.v.backprop(p, grads, &bc.a, k, &dv, Some(&mut da));
        blk.ln1.backprop(p, grads, &bc.ln1, k, &da, dh);
    }

    fn attention_backward(&self, bc: &BlockCache<T>, dctx: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let c = &self.config;
        let (k, e, nh, dh) = (c.k, c.embed_dim, c.num_heads, c.head_dim());
        let causal = c.arch == Arch::Causal;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dq = vec![T::zero(); k * e];
        let mut dk = vec![T::zero(); k * e];
        let mut dv = vec![T::zero(); k * e];
        let mut dp = vec![T::zero(); k];
        for hd in 0..nh {
            let off = hd * dh;
            for t in 0..k {
                let visible = if causal { t + 1 } else { k };
                let probs = &bc.probs[(hd * k + t) * k..(hd * k + t) * k + visible];
                let dct = &dctx[t * e + off..t * e + off + dh];
                let mut weighted = T::zero();
                for s in 0..visible {
                    let vs = &bc.v[s * e + off..s * e + off + dh];
                    let mut dot = T::zero();
                    for (x, y) in dct.iter().zip(vs) {
                        dot += *x * *y;
                    }
                    dp[s] = dot;
                    weighted += dot * probs[s];
                    let dvs = &mut dv[s * e + off..s * e + off + dh];
                    for (g, x) in dvs.iter_mut().zip(dct) {
                        *g += probs[s] * *x;
                    }
                }
                for s in 0..visible {
                    let ds = probs[s] * (dp[s] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for j in 0..dh {
                        dq[t * e + off + j] += ds * bc.k[s * e + off + j];
                        dk[s * e + off + j] += ds * bc.q[t * e + off + j];
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}
