//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use convivit::train::gradcheck::GradCheckConfig;
use convivit::{Conv3dSpec, Ctx, ParamStore, Tensor, TokenGrid, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Triple loop over row-major `m x k` and `k x n`.
pub fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0f64;
            for l in 0..k {
                s += a[i * k + l] as f64 * b[l * n + j] as f64;
            }
            out[i * n + j] = s as f32;
        }
    }
    out
}

/// Direct nested-loop cross-correlation with zero padding and groups.
pub fn naive_conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv3dSpec) -> Tensor {
    let s = x.shape();
    let (n, c, t, h, wd) = (s[0], s[1], s[2], s[3], s[4]);
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let ot = (t + 2 * pt - kt) / st + 1;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (wd + 2 * pw - kw) / sw + 1;
    let co = spec.out_channels;
    let cin_g = c / spec.groups;
    let cout_g = co / spec.groups;
    let xd = x.data();
    let wdt = w.data();
    let mut out = vec![0f32; n * co * ot * oh * ow];
    for bi in 0..n {
        for oc in 0..co {
            let grp = oc / cout_g;
            for a in 0..ot {
                for bb in 0..oh {
                    for cc in 0..ow {
                        let mut acc = b.map(|b| b.data()[oc] as f64).unwrap_or(0.0);
                        for ic in 0..cin_g {
                            let ch = grp * cin_g + ic;
                            for i in 0..kt {
                                for j in 0..kh {
                                    for l in 0..kw {
                                        let ti = (a * st + i) as isize - pt as isize;
                                        let hi = (bb * sh + j) as isize - ph as isize;
                                        let wi = (cc * sw + l) as isize - pw as isize;
                                        if ti < 0 || hi < 0 || wi < 0 || ti >= t as isize || hi >= h as isize || wi >= wd as isize {
                                            continue;
                                        }
                                        let xv = xd[(((bi * c + ch) * t + ti as usize) * h + hi as usize) * wd + wi as usize];
                                        let wv = wdt[(((oc * cin_g + ic) * kt + i) * kh + j) * kw + l];
                                        acc += xv as f64 * wv as f64;
                                    }
                                }
                            }
                        }
                        out[(((bi * co + oc) * ot + a) * oh + bb) * ow + cc] = acc as f32;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, co, ot, oh, ow], out).unwrap()
}

/// Single-head attention by explicit loops: `softmax(Q K^T / sqrt(d)) V`.
/// `q, k, v` are `s x d` row-major; returns `(output, weights)`.
pub fn naive_attention(q: &[f32], k: &[f32], v: &[f32], s: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![0f64; s * s];
    for i in 0..s {
        let mut row = vec![0f64; s];
        for j in 0..s {
            row[j] = (0..d).map(|l| q[i * d + l] as f64 * k[j * d + l] as f64).sum::<f64>() * scale;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|r| (r - max).exp()).sum();
        for j in 0..s {
            weights[i * s + j] = (row[j] - max).exp() / z;
        }
    }
    let mut out = vec![0f64; s * d];
    for i in 0..s {
        for l in 0..d {
            out[i * d + l] = (0..s).map(|j| weights[i * s + j] * v[j * d + l] as f64).sum();
        }
    }
    (out, weights)
}

/// `x @ w + b` on an `r x i` input with an `i x o` weight.
pub fn naive_linear(x: &[f32], w: &[f32], b: &[f32], r: usize, i: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0f64; r * o];
    for a in 0..r {
        for c in 0..o {
            out[a * o + c] = b[c] as f64 + (0..i).map(|l| x[a * i + l] as f64 * w[l * o + c] as f64).sum::<f64>();
        }
    }
    out
}

/// Small-extent conv sweep: every `T, H, W` in `1..=5` crossed with cubic
/// kernels, strides, paddings and three channel/group layouts, plus every
/// anisotropic kernel up to 5 on a `5x5x5` input. Cases whose output would be
/// empty are skipped.
pub fn conv_sweep() -> Vec<(Vec<usize>, Conv3dSpec)> {
    let mut cases = Vec::new();
    let layouts = [(2, 3, 1), (4, 4, 2), (4, 4, 4)];
    for t in 1..=5 {
        for h in 1..=5 {
            for w in 1..=5 {
                for k in 1..=3 {
                    for s in 1..=2 {
                        for p in 0..=1 {
                            let (cin, cout, g) = layouts[(t + h + w + k + s + p) % 3];
                            if k > t.min(h).min(w) + 2 * p {
                                continue;
                            }
                            let spec = Conv3dSpec::new(cin, cout, [k; 3]).stride([s; 3]).padding([p; 3]).groups(g);
                            cases.push((vec![2, cin, t, h, w], spec));
                        }
                    }
                }
            }
        }
    }
    for kt in 1..=5 {
        for kh in 1..=5 {
            for kw in 1..=5 {
                let p = (kt + kh + kw) % 3;
                let spec = Conv3dSpec::new(2, 2, [kt, kh, kw]).padding([p, p / 2, 0]).stride([1, 1 + p % 2, 2]);
                cases.push((vec![1, 2, 5, 5, 5], spec));
            }
        }
    }
    cases
}

/// Gradient-check settings for `sum(out * probe)` objectives. Their loss
/// accumulates rounding from every `f32` output element, which puts the
/// numeric derivative's noise near 1e-4 to 1e-3 absolute, hence the
/// wider floor.
pub fn op_gradcheck() -> GradCheckConfig {
    GradCheckConfig { floor: 1e-1, ..GradCheckConfig::default() }
}

pub fn zero_all(store: &mut ParamStore, prefix: &str) {
    let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).name.starts_with(prefix)).collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
}

pub fn set_named(store: &mut ParamStore, name: &str, value: Tensor) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.set(id, value).unwrap();
}

/// Runs `f` on a fresh eval-mode context and returns the value of its output.
pub fn eval(store: &ParamStore, f: impl FnOnce(&mut Ctx) -> convivit::Result<Var>) -> Tensor {
    let mut ctx = Ctx::inference(store);
    let v = f(&mut ctx).unwrap();
    ctx.value(v).clone()
}

/// Spatial grid of `B x T x N x D` tokens laid out as `h x w`, permuted by
/// `perm` along N.
pub fn permute_tokens(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let (b, t, n, d) = (s[0], s[1], s[2], s[3]);
    Tensor::from_fn(s, |i| {
        let (rest, k) = (i / d, i % d);
        let (bt, j) = (rest / n, rest % n);
        debug_assert!(bt < b * t);
        x.data()[(bt * n + perm[j]) * d + k]
    })
}

pub fn run_block(store: &ParamStore, x: &Tensor, h: usize, w: usize, f: impl Fn(&mut Ctx, TokenGrid) -> convivit::Result<TokenGrid>) -> Tensor {
    eval(store, |ctx| {
        let v = ctx.input(x.clone());
        let grid = TokenGrid::from_var(ctx, v, h, w)?;
        Ok(f(ctx, grid)?.tokens)
    })
}

/// Copies dot-product parameters into a self-variant store so both compute
/// the same function when every attention sequence has length one.
pub fn align_variants(self_store: &mut ParamStore, dot_store: &ParamStore, depth: usize) {
    let names: Vec<String> = self_store.entries().iter().map(|e| e.name.clone()).collect();
    for name in names {
        let mut source = name.clone();
        for l in 0..depth {
            let p = format!("blocks.{l}.");
            if let Some(rest) = name.strip_prefix(&p) {
                source = if let Some(r) = rest.strip_prefix("norm_s.") {
                    format!("{p}norm_attn.{r}")
                } else if let Some(r) = rest.strip_prefix("attn_s.") {
                    format!("{p}attn.{r}")
                } else {
                    name.clone()
                };
            }
        }
        if let Some(id) = dot_store.find(&source) {
            set_named(self_store, &name, dot_store.get(id).clone());
        }
    }
    for l in 0..depth {
        zero_all(self_store, &format!("blocks.{l}.attn_t.out."));
    }
}
