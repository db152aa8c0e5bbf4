//! Dilated causal convolutional encoder with hand-written backpropagation.
//!
//! Inputs are channel-major `D x len` matrices. Each block is a causal
//! dilated convolution followed by leaky ReLU plus a residual path (identity
//! when the channel count is unchanged, a bias-free 1x1 projection
//! otherwise). A global max-pool over time feeds a linear projection.
//! All parameters live in one flat vector; [`Layout`] maps them.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub emb_dim: usize,
}

/// Slope of the leaky ReLU on negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    c_in: usize,
    dilation: usize,
    w: usize,
    b: usize,
    proj: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    blocks: Vec<BlockLayout>,
    fw: usize,
    fb: usize,
    total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Result<Self> {
        if arch.in_channels == 0
            || arch.conv_channels == 0
            || arch.kernel_size == 0
            || arch.emb_dim == 0
            || arch.dilations.is_empty()
            || arch.dilations.contains(&0)
        {
            return Err(Error::Config(format!("invalid encoder architecture {arch:?}")));
        }
        let c = arch.conv_channels;
        let k = arch.kernel_size;
        let mut off = 0;
        let mut blocks = Vec::new();
        let mut c_in = arch.in_channels;
        for &dilation in &arch.dilations {
            let w = off;
            off += c * c_in * k;
            let b = off;
            off += c;
            let proj = (c_in != c).then(|| {
                let p = off;
                off += c * c_in;
                p
            });
            blocks.push(BlockLayout {
                c_in,
                dilation,
                w,
                b,
                proj,
            });
            c_in = c;
        }
        let fw = off;
        off += arch.emb_dim * c;
        let fb = off;
        off += arch.emb_dim;
        Ok(Self {
            blocks,
            fw,
            fb,
            total: off,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Fan-in of every parameter, for initialization.
    fn fan_ins(&self, arch: &Architecture) -> Vec<usize> {
        let mut f = vec![1; self.total];
        let c = arch.conv_channels;
        for bl in &self.blocks {
            let conv_fan = bl.c_in * arch.kernel_size;
            f[bl.w..bl.b].fill(conv_fan);
            f[bl.b..bl.b + c].fill(conv_fan);
            if let Some(p) = bl.proj {
                f[p..p + c * bl.c_in].fill(bl.c_in);
            }
        }
        f[self.fw..self.total].fill(c);
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl EncoderParams {
    /// Uniform in `+-1/sqrt(fan_in)` for every weight and bias.
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        let theta = layout
            .fan_ins(&arch)
            .into_iter()
            .map(|fan| {
                let a = 1.0 / (fan as f64).sqrt();
                rng.random_range(-a..=a)
            })
            .collect();
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = Layout::new(&arch)?.len();
        Ok(Self {
            arch,
            theta: vec![0.0; n],
        })
    }

    pub fn layout(&self) -> Result<Layout> {
        let l = Layout::new(&self.arch)?;
        if l.len() != self.theta.len() {
            return Err(Error::Internal(format!(
                "parameter vector has {} entries, architecture needs {}",
                self.theta.len(),
                l.len()
            )));
        }
        Ok(l)
    }

    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.emb)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        let layout = self.layout()?;
        forward(&self.arch, &layout, &self.theta, x)
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    len: usize,
    /// Input of each block, then the final block output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    argmax: Vec<usize>,
    pooled: Vec<f64>,
    pub emb: Vec<f64>,
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn forward(arch: &Architecture, layout: &Layout, theta: &[f64], x: ArrayView2<'_, f64>) -> Result<Forward> {
    let (d, len) = x.dim();
    if d != arch.in_channels {
        return Err(domain(format!(
            "encoder expects {} channels, got {d}",
            arch.in_channels
        )));
    }
    if len < arch.kernel_size {
        return Err(domain(format!(
            "segment length {len} is shorter than the kernel ({})",
            arch.kernel_size
        )));
    }
    let c = arch.conv_channels;
    let k = arch.kernel_size;
    let mut acts = vec![x.iter().copied().collect::<Vec<f64>>()];
    let mut pre = Vec::with_capacity(layout.blocks.len());
    for bl in &layout.blocks {
        let input = acts.last().expect("input present");
        let mut y = vec![0.0; c * len];
        for o in 0..c {
            let row = &mut y[o * len..(o + 1) * len];
            row.fill(theta[bl.b + o]);
            for i in 0..bl.c_in {
                let xin = &input[i * len..(i + 1) * len];
                for kk in 0..k {
                    let w = theta[bl.w + (o * bl.c_in + i) * k + kk];
                    let back = (k - 1 - kk) * bl.dilation;
                    if back >= len {
                        continue;
                    }
                    for (r, &xv) in row[back..].iter_mut().zip(xin) {
                        *r += w * xv;
                    }
                }
            }
        }
        let mut h: Vec<f64> = y.iter().map(|&v| leaky(v)).collect();
        match bl.proj {
            None => {
                for (hv, &xv) in h.iter_mut().zip(input) {
                    *hv += xv;
                }
            }
            Some(p) => {
                for o in 0..c {
                    for i in 0..bl.c_in {
                        let w = theta[p + o * bl.c_in + i];
                        for t in 0..len {
                            h[o * len + t] += w * input[i * len + t];
                        }
                    }
                }
            }
        }
        pre.push(y);
        acts.push(h);
    }
    let last = acts.last().expect("output present");
    let mut argmax = vec![0; c];
    let mut pooled = vec![0.0; c];
    for o in 0..c {
        let row = &last[o * len..(o + 1) * len];
        let mut best = 0;
        for t in 1..len {
            if row[t] > row[best] {
                best = t;
            }
        }
        argmax[o] = best;
        pooled[o] = row[best];
    }
    let emb = (0..arch.emb_dim)
        .map(|e| {
            theta[layout.fb + e]
                + (0..c)
                    .map(|o| theta[layout.fw + e * c + o] * pooled[o])
                    .sum::<f64>()
        })
        .collect();
    Ok(Forward {
        len,
        acts,
        pre,
        argmax,
        pooled,
        emb,
    })
}

/// Accumulates `d(loss)/d(theta)` into `grad` given `d(loss)/d(emb)`.
pub fn backward(params: &EncoderParams, fwd: &Forward, d_emb: &[f64], grad: &mut [f64]) -> Result<()> {
    let layout = params.layout()?;
    let arch = &params.arch;
    let theta = &params.theta;
    if grad.len() != theta.len() || d_emb.len() != arch.emb_dim {
        return Err(Error::Internal("gradient buffer shape mismatch".into()));
    }
    let c = arch.conv_channels;
    let k = arch.kernel_size;
    let len = fwd.len;

    let mut d_pool = vec![0.0; c];
    for (e, &g) in d_emb.iter().enumerate() {
        grad[layout.fb + e] += g;
        for o in 0..c {
            grad[layout.fw + e * c + o] += g * fwd.pooled[o];
            d_pool[o] += g * theta[layout.fw + e * c + o];
        }
    }
    let mut dh = vec![0.0; c * len];
    for o in 0..c {
        dh[o * len + fwd.argmax[o]] = d_pool[o];
    }

    for (bi, bl) in layout.blocks.iter().enumerate().rev() {
        let input = &fwd.acts[bi];
        let y = &fwd.pre[bi];
        let mut dx = vec![0.0; bl.c_in * len];
        match bl.proj {
            None => dx.copy_from_slice(&dh),
            Some(p) => {
                for o in 0..c {
                    for i in 0..bl.c_in {
                        let w = theta[p + o * bl.c_in + i];
                        let mut gw = 0.0;
                        for t in 0..len {
                            let g = dh[o * len + t];
                            gw += g * input[i * len + t];
                            dx[i * len + t] += w * g;
                        }
                        grad[p + o * bl.c_in + i] += gw;
                    }
                }
            }
        }
        let dy: Vec<f64> = dh.iter().zip(y).map(|(&g, &v)| g * leaky_grad(v)).collect();
        for o in 0..c {
            let dyo = &dy[o * len..(o + 1) * len];
            grad[bl.b + o] += dyo.iter().sum::<f64>();
            for i in 0..bl.c_in {
                let xin = &input[i * len..(i + 1) * len];
                for kk in 0..k {
                    let back = (k - 1 - kk) * bl.dilation;
                    if back >= len {
                        continue;
                    }
                    let widx = bl.w + (o * bl.c_in + i) * k + kk;
                    let w = theta[widx];
                    let mut gw = 0.0;
                    let dxi = &mut dx[i * len..(i + 1) * len];
                    for (t, &g) in dyo[back..].iter().enumerate() {
                        gw += g * xin[t];
                        dxi[t] += w * g;
                    }
                    grad[widx] += gw;
                }
            }
        }
        dh = dx;
    }
    Ok(())
}
