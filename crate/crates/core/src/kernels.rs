//! Raw buffer kernels behind the tape ops. Nothing here knows about the tape.

use std::ops::Range;

use crate::tensor::strides;

/// Strided matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Mat {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
    }
}

/// `c = alpha * a @ b + beta * c` on strided views.
pub(crate) fn gemm(alpha: f32, a: &[f32], av: Mat, b: &[f32], bv: Mat, beta: f32, c: &mut [f32], cv: Mat) {
    assert_eq!(av.cols, bv.rows);
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols));
    if av.rows == 0 || bv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() >= av.span() && b.len() >= bv.span() && c.len() >= cv.span());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

pub(crate) fn permute(data: &[f32], shape: &[usize], order: &[usize]) -> Vec<f32> {
    let rank = shape.len();
    if order.iter().enumerate().all(|(i, &a)| i == a) {
        return data.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = order.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    // Innermost output axis handled as a strided run.
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Numpy-style broadcast of two shapes, right-aligned.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed in `out_shape`, zero along broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out_shape`.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += a_strides[ax];
            ib += b_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            ia -= a_strides[ax] * out_shape[ax];
            ib -= b_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Sums `grad` (shaped `out_shape`) down to `shape` along broadcast axes.
pub(crate) fn reduce_to_shape(grad: &[f32], out_shape: &[usize], shape: &[usize]) -> Vec<f32> {
    if out_shape == shape {
        return grad.to_vec();
    }
    let bs = broadcast_strides(shape, out_shape);
    let mut acc = vec![0f64; shape.iter().product()];
    for_each_broadcast(out_shape, &bs, &bs, |o, i, _| acc[i] += grad[o] as f64);
    acc.into_iter().map(|v| v as f32).collect()
}

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let at = |k: usize| base + k * inner;
            let max = (0..len).map(|k| x[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0f64;
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e as f64;
            }
            let inv = (1.0 / sum) as f32;
            for k in 0..len {
                out[at(k)] *= inv;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f32], dy: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![0f32; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len)
                .map(|k| (y[base + k * inner] * dy[base + k * inner]) as f64)
                .sum();
            let dot = dot as f32;
            for k in 0..len {
                let j = base + k * inner;
                dx[j] = y[j] * (dy[j] - dot);
            }
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)
const GELU_A: f32 = 0.044_715;

/// `tanh` through one `exp`, several times faster than `f32::tanh`. The
/// absolute error stays within a few ulp of 1, which is all GELU needs.
#[inline]
fn tanh(z: f32) -> f32 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let t = tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Geometry of one 3D convolution call over an `N x C x T x H x W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }
    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }
    fn col_rows(&self) -> usize {
        self.cin_g() * self.taps()
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Output positions `o` along `dim` for which `o * stride + k - pad` is inside the input.
    fn valid_range(&self, dim: usize, k: usize) -> (usize, usize, isize) {
        let (s, p, n_in, n_out) = (
            self.stride[dim] as isize,
            self.pad[dim] as isize,
            self.input[dim] as isize,
            self.output[dim] as isize,
        );
        let shift = k as isize - p;
        // o * s + shift >= 0  and  o * s + shift < n_in
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi = if n_in - shift <= 0 { 0 } else { ((n_in - shift - 1) / s + 1).min(n_out) };
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize, shift)
    }
}

/// Unfolds output rows `rows` (one row = one `(t, h)` pair) of one group of
/// one sample into a `(cin_g * taps) x (rows.len() * ow)` matrix.
fn im2col(x: &[f32], g: &ConvGeom, rows: Range<usize>, col: &mut [f32]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let p = rows.len() * ow;
    let col = &mut col[..g.col_rows() * p];
    col.fill(0.0);
    let mut row = 0;
    for c in 0..g.cin_g() {
        let xc = &x[c * g.in_vol()..(c + 1) * g.in_vol()];
        for a in 0..kt {
            let (t_lo, t_hi, t_sh) = g.valid_range(0, a);
            for b in 0..kh {
                let (h_lo, h_hi, h_sh) = g.valid_range(1, b);
                for d in 0..kw {
                    let (w_lo, w_hi, w_sh) = g.valid_range(2, d);
                    let dst = &mut col[row * p..(row + 1) * p];
                    for r in rows.clone() {
                        let (t, h) = (r / oh, r % oh);
                        if t < t_lo || t >= t_hi || h < h_lo || h >= h_hi {
                            continue;
                        }
                        let it = (t as isize * g.stride[0] as isize + t_sh) as usize;
                        let ihh = (h as isize * g.stride[1] as isize + h_sh) as usize;
                        let src = &xc[(it * ih + ihh) * iw..(it * ih + ihh + 1) * iw];
                        let out_row = &mut dst[(r - rows.start) * ow..(r - rows.start + 1) * ow];
                        if g.stride[2] == 1 {
                            let first = (w_lo as isize + w_sh) as usize;
                            out_row[w_lo..w_hi].copy_from_slice(&src[first..first + w_hi - w_lo]);
                        } else {
                            for w in w_lo..w_hi {
                                out_row[w] = src[(w as isize * g.stride[2] as isize + w_sh) as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds the column tile back into `dx`.
fn col2im(col: &[f32], g: &ConvGeom, rows: Range<usize>, dx: &mut [f32]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let p = rows.len() * ow;
    let mut row = 0;
    for c in 0..g.cin_g() {
        let dxc = &mut dx[c * g.in_vol()..(c + 1) * g.in_vol()];
        for a in 0..kt {
            let (t_lo, t_hi, t_sh) = g.valid_range(0, a);
            for b in 0..kh {
                let (h_lo, h_hi, h_sh) = g.valid_range(1, b);
                for d in 0..kw {
                    let (w_lo, w_hi, w_sh) = g.valid_range(2, d);
                    let src = &col[row * p..(row + 1) * p];
                    for r in rows.clone() {
                        let (t, h) = (r / oh, r % oh);
                        if t < t_lo || t >= t_hi || h < h_lo || h >= h_hi {
                            continue;
                        }
                        let it = (t as isize * g.stride[0] as isize + t_sh) as usize;
                        let ihh = (h as isize * g.stride[1] as isize + h_sh) as usize;
                        let base = (it * ih + ihh) * iw;
                        let in_row = &src[(r - rows.start) * ow..(r - rows.start + 1) * ow];
                        if g.stride[2] == 1 {
                            let first = base + (w_lo as isize + w_sh) as usize;
                            for (d, s) in dxc[first..first + w_hi - w_lo].iter_mut().zip(&in_row[w_lo..w_hi]) {
                                *d += s;
                            }
                        } else {
                            for w in w_lo..w_hi {
                                dxc[base + (w as isize * g.stride[2] as isize + w_sh) as usize] += in_row[w];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Output-row tiles sized so one column tile stays cache-resident.
fn row_tiles(g: &ConvGeom) -> impl Iterator<Item = Range<usize>> {
    const TILE_FLOATS: usize = 1 << 18;
    let [ot, oh, ow] = g.output;
    let rows = ot * oh;
    let per = (TILE_FLOATS / (g.col_rows() * ow).max(1)).clamp(1, rows);
    (0..rows).step_by(per).map(move |r| r..(r + per).min(rows))
}

/// Visits every in-bounds (output row, input row) pair of a single-channel
/// convolution; `f(out_offset, in_offset, tap, w_lo, w_hi, w_shift)`.
fn depthwise_rows(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize, isize)) {
    let [_, ih, iw] = g.input;
    let [ot, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    for a in 0..kt {
        let (t_lo, t_hi, t_sh) = g.valid_range(0, a);
        for b in 0..kh {
            let (h_lo, h_hi, h_sh) = g.valid_range(1, b);
            for d in 0..kw {
                let (w_lo, w_hi, w_sh) = g.valid_range(2, d);
                let tap = (a * kh + b) * kw + d;
                for t in t_lo..t_hi.min(ot) {
                    let it = (t as isize * g.stride[0] as isize + t_sh) as usize;
                    for h in h_lo..h_hi {
                        let ihh = (h as isize * g.stride[1] as isize + h_sh) as usize;
                        f((t * oh + h) * ow, (it * ih + ihh) * iw, tap, w_lo, w_hi, w_sh);
                    }
                }
            }
        }
    }
}

/// `out[lo..hi] += wv * x[first + i * stride]`, vectorizable at stride 1.
#[inline]
fn axpy_strided(out: &mut [f32], wv: f32, x: &[f32], first: usize, stride: usize) {
    if stride == 1 {
        let len = out.len();
        for (o, &v) in out.iter_mut().zip(&x[first..first + len]) {
            *o += wv * v;
        }
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o += wv * x[first + i * stride];
        }
    }
}

/// `sum_i dy[i] * x[first + i * stride]`.
#[inline]
fn dot_strided(dy: &[f32], x: &[f32], first: usize, stride: usize) -> f32 {
    if stride == 1 {
        dy.iter().zip(&x[first..first + dy.len()]).map(|(a, b)| a * b).sum()
    } else {
        dy.iter().enumerate().map(|(i, a)| a * x[first + i * stride]).sum()
    }
}

pub(crate) fn conv3d_forward(x: &[f32], w: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let p = g.out_vol();
    let ow = g.output[2];
    let mut out = vec![0f32; g.batch * g.cout * p];
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.col_rows());
    let sw = g.stride[2];
    let tiled = !(g.is_depthwise() || g.is_pointwise());
    let mut col = if tiled { vec![0f32; row_tiles(g).map(|r| r.len() * ow * k).max().unwrap_or(0)] } else { Vec::new() };
    for n in 0..g.batch {
        let xn = &x[n * g.cin * g.in_vol()..(n + 1) * g.cin * g.in_vol()];
        let on = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        if g.is_depthwise() {
            for c in 0..g.cout {
                let xc = &xn[c * g.in_vol()..(c + 1) * g.in_vol()];
                let oc = &mut on[c * p..(c + 1) * p];
                let wc = &w[c * g.taps()..(c + 1) * g.taps()];
                depthwise_rows(g, |o, i, tap, lo, hi, sh| {
                    let first = (i as isize + lo as isize * sw as isize + sh) as usize;
                    axpy_strided(&mut oc[o + lo..o + hi], wc[tap], xc, first, sw);
                });
            }
        } else {
            for grp in 0..g.groups {
                let xg = &xn[grp * cin_g * g.in_vol()..(grp + 1) * cin_g * g.in_vol()];
                let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
                let og = &mut on[grp * cout_g * p..(grp + 1) * cout_g * p];
                if !tiled {
                    gemm(1.0, wg, Mat::row_major(cout_g, k), xg, Mat::row_major(k, p), 0.0, og, Mat::row_major(cout_g, p));
                    continue;
                }
                for rows in row_tiles(g) {
                    let tp = rows.len() * ow;
                    im2col(xg, g, rows.clone(), &mut col);
                    gemm(
                        1.0,
                        wg,
                        Mat::row_major(cout_g, k),
                        &col,
                        Mat::row_major(k, tp),
                        0.0,
                        &mut og[rows.start * ow..],
                        Mat { rows: cout_g, cols: tp, rs: p, cs: 1 },
                    );
                }
            }
        }
        if let Some(b) = bias {
            for (c, oc) in on.chunks_mut(p).enumerate() {
                oc.iter_mut().for_each(|v| *v += b[c]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub(crate) fn conv3d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let p = g.out_vol();
    let ow = g.output[2];
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.col_rows());
    let sw = g.stride[2];
    let mut dx = need[0].then(|| vec![0f32; x.len()]);
    let mut dw = need[1].then(|| vec![0f32; w.len()]);
    let db = need[2].then(|| {
        let mut acc = vec![0f64; g.cout];
        for n in 0..g.batch {
            for c in 0..g.cout {
                let s = (n * g.cout + c) * p;
                acc[c] += dy[s..s + p].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    });
    if !need[0] && !need[1] {
        return ConvGrads { dx, dw, db };
    }
    let tiled = !(g.is_depthwise() || g.is_pointwise());
    let tile_len = if tiled { row_tiles(g).map(|r| r.len() * ow * k).max().unwrap_or(0) } else { 0 };
    let mut col = vec![0f32; if need[1] { tile_len } else { 0 }];
    let mut dcol = vec![0f32; if need[0] { tile_len } else { 0 }];
    let mut dw_acc = need[1].then(|| vec![0f64; w.len()]);
    let mut dw_tmp = vec![0f32; cout_g * k];
    for n in 0..g.batch {
        let xn = &x[n * g.cin * g.in_vol()..(n + 1) * g.cin * g.in_vol()];
        let dyn_ = &dy[n * g.cout * p..(n + 1) * g.cout * p];
        if g.is_depthwise() {
            for c in 0..g.cout {
                let xc = &xn[c * g.in_vol()..(c + 1) * g.in_vol()];
                let dyc = &dyn_[c * p..(c + 1) * p];
                let wc = &w[c * g.taps()..(c + 1) * g.taps()];
                let mut tap_acc = vec![0f64; g.taps()];
                let dxc_off = (n * g.cin + c) * g.in_vol();
                depthwise_rows(g, |o, i, tap, lo, hi, sh| {
                    let first = (i as isize + lo as isize * sw as isize + sh) as usize;
                    let dy_row = &dyc[o + lo..o + hi];
                    if need[1] {
                        tap_acc[tap] += dot_strided(dy_row, xc, first, sw) as f64;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxc = &mut dx[dxc_off..dxc_off + g.in_vol()];
                        let wv = wc[tap];
                        if sw == 1 {
                            for (d, &v) in dxc[first..first + dy_row.len()].iter_mut().zip(dy_row) {
                                *d += wv * v;
                            }
                        } else {
                            for (j, &v) in dy_row.iter().enumerate() {
                                dxc[first + j * sw] += wv * v;
                            }
                        }
                    }
                });
                if let Some(acc) = dw_acc.as_mut() {
                    for (t, v) in tap_acc.into_iter().enumerate() {
                        acc[c * g.taps() + t] += v;
                    }
                }
            }
            continue;
        }
        for grp in 0..g.groups {
            let xg = &xn[grp * cin_g * g.in_vol()..(grp + 1) * cin_g * g.in_vol()];
            let dyg = &dyn_[grp * cout_g * p..(grp + 1) * cout_g * p];
            let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
            let dx_off = (n * g.cin + grp * cin_g) * g.in_vol();
            if !tiled {
                if need[1] {
                    gemm(1.0, dyg, Mat::row_major(cout_g, p), xg, Mat::row_major(k, p).t(), 0.0, &mut dw_tmp, Mat::row_major(cout_g, k));
                }
                if let Some(dx) = dx.as_mut() {
                    let dxg = &mut dx[dx_off..dx_off + cin_g * g.in_vol()];
                    gemm(1.0, wg, Mat::row_major(cout_g, k).t(), dyg, Mat::row_major(cout_g, p), 1.0, dxg, Mat::row_major(k, p));
                }
            } else {
                for (i, rows) in row_tiles(g).enumerate() {
                    let tp = rows.len() * ow;
                    let dy_tile = &dyg[rows.start * ow..];
                    let dy_view = Mat { rows: cout_g, cols: tp, rs: p, cs: 1 };
                    if need[1] {
                        im2col(xg, g, rows.clone(), &mut col);
                        let beta = if i == 0 { 0.0 } else { 1.0 };
                        gemm(1.0, dy_tile, dy_view, &col, Mat::row_major(k, tp).t(), beta, &mut dw_tmp, Mat::row_major(cout_g, k));
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(1.0, wg, Mat::row_major(cout_g, k).t(), dy_tile, dy_view, 0.0, &mut dcol, Mat::row_major(k, tp));
                        col2im(&dcol, g, rows, &mut dx[dx_off..dx_off + cin_g * g.in_vol()]);
                    }
                }
            }
            if let Some(acc) = dw_acc.as_mut() {
                for (a, &v) in acc[grp * cout_g * k..(grp + 1) * cout_g * k].iter_mut().zip(&dw_tmp) {
                    *a += v as f64;
                }
            }
        }
    }
    if let (Some(dw), Some(acc)) = (dw.as_mut(), dw_acc) {
        for (d, a) in dw.iter_mut().zip(acc) {
            *d = a as f32;
        }
    }
    ConvGrads { dx, dw, db }
}
