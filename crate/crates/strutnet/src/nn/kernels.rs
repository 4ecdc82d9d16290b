//! Raw forward/backward convolution, pooling and smoothing kernels.
//!
//! These operate on flat `f64` slices in `[c,h,w]` layout. Parallelism is
//! over disjoint output planes only and every per-element reduction runs in
//! a fixed sequential order, so results are bit-reproducible regardless of
//! thread scheduling.

use rayon::prelude::*;

/// Work threshold (MACs) below which a kernel runs single-threaded; tiny
/// patch convolutions lose more to thread handoff than they gain.
const PAR_MIN_MACS: usize = 4_000_000;

fn run_plane_loop<F: Fn(usize, &mut [f64]) + Sync>(out: &mut [f64], plane: usize, macs: usize, f: F) {
    if macs >= PAR_MIN_MACS {
        out.par_chunks_mut(plane).enumerate().for_each(|(i, p)| f(i, p));
    } else {
        out.chunks_mut(plane).enumerate().for_each(|(i, p)| f(i, p));
    }
}

/// Stride / zero-padding / dilation of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvCfg {
    pub fn unit(pad: usize) -> Self {
        ConvCfg {
            stride: 1,
            pad,
            dilation: 1,
        }
    }

    pub fn out_dim(&self, n: usize, k: usize) -> usize {
        let span = self.dilation * (k - 1) + 1;
        assert!(
            n + 2 * self.pad >= span,
            "input dim {} too small for kernel span {}",
            n,
            span
        );
        (n + 2 * self.pad - span) / self.stride + 1
    }
}

/// `y = conv2d(x, w) + b`; `x: [cin,h,w]`, `w: [cout,cin,kh,kw]`, `b: [cout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    wt: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    cfg: ConvCfg,
    y: &mut [f64],
) {
    let oh = cfg.out_dim(h, kh);
    let ow = cfg.out_dim(w, kw);
    debug_assert_eq!(x.len(), cin * h * w);
    debug_assert_eq!(wt.len(), cout * cin * kh * kw);
    debug_assert_eq!(y.len(), cout * oh * ow);

    let macs = cout * oh * ow * cin * kh * kw;
    run_plane_loop(y, oh * ow, macs, |co, yp| {
        let b = bias.map_or(0.0, |b| b[co]);
        yp.fill(b);
        for ci in 0..cin {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if cfg.stride == 1 {
                        // iy = oy + dy0, ix = ox + dx0
                        let dy0 = (ky * cfg.dilation) as isize - cfg.pad as isize;
                        let dx0 = (kx * cfg.dilation) as isize - cfg.pad as isize;
                        let oy_lo = (-dy0).max(0) as usize;
                        let oy_hi = (h as isize - dy0).min(oh as isize).max(0) as usize;
                        let ox_lo = (-dx0).max(0) as usize;
                        let ox_hi = (w as isize - dx0).min(ow as isize).max(0) as usize;
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy0) as usize;
                            let ix0 = (ox_lo as isize + dx0) as usize;
                            let yr = &mut yp[oy * ow + ox_lo..oy * ow + ox_hi];
                            let xr = &xp[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                            for (o, i) in yr.iter_mut().zip(xr.iter()) {
                                *o += wv * i;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * cfg.stride + ky * cfg.dilation) as isize
                                - cfg.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * cfg.stride + kx * cfg.dilation) as isize
                                    - cfg.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                yp[oy * ow + ox] += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Input gradient of `conv2d_forward`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    dy: &[f64],
    (cout, oh, ow): (usize, usize, usize),
    wt: &[f64],
    (cin, kh, kw): (usize, usize, usize),
    cfg: ConvCfg,
    (h, w): (usize, usize),
    dx: &mut [f64],
) {
    debug_assert_eq!(dx.len(), cin * h * w);
    let macs = cout * oh * ow * cin * kh * kw;
    run_plane_loop(dx, h * w, macs, |ci, dxp| {
        dxp.fill(0.0);
        for co in 0..cout {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if cfg.stride == 1 {
                        let dy0 = (ky * cfg.dilation) as isize - cfg.pad as isize;
                        let dx0 = (kx * cfg.dilation) as isize - cfg.pad as isize;
                        let oy_lo = (-dy0).max(0) as usize;
                        let oy_hi = (h as isize - dy0).min(oh as isize).max(0) as usize;
                        let ox_lo = (-dx0).max(0) as usize;
                        let ox_hi = (w as isize - dx0).min(ow as isize).max(0) as usize;
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy0) as usize;
                            let ix0 = (ox_lo as isize + dx0) as usize;
                            let dr = &mut dxp[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                            let gr = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                            for (d, g) in dr.iter_mut().zip(gr.iter()) {
                                *d += wv * g;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * cfg.stride + ky * cfg.dilation) as isize
                                - cfg.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * cfg.stride + kx * cfg.dilation) as isize
                                    - cfg.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dxp[iy as usize * w + ix as usize] += wv * dyp[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Weight and bias gradients of `conv2d_forward`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_params(
    dy: &[f64],
    (cout, oh, ow): (usize, usize, usize),
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    cfg: ConvCfg,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    debug_assert_eq!(dw.len(), cout * cin * kh * kw);
    let macs = cout * oh * ow * cin * kh * kw;
    run_plane_loop(dw, cin * kh * kw, macs, |co, dwp| {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..cin {
                let xp = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        if cfg.stride == 1 {
                            let dy0 = (ky * cfg.dilation) as isize - cfg.pad as isize;
                            let dx0 = (kx * cfg.dilation) as isize - cfg.pad as isize;
                            let oy_lo = (-dy0).max(0) as usize;
                            let oy_hi = (h as isize - dy0).min(oh as isize).max(0) as usize;
                            let ox_lo = (-dx0).max(0) as usize;
                            let ox_hi = (w as isize - dx0).min(ow as isize).max(0) as usize;
                            if ox_lo < ox_hi {
                                for oy in oy_lo..oy_hi {
                                    let iy = (oy as isize + dy0) as usize;
                                    let ix0 = (ox_lo as isize + dx0) as usize;
                                    let gr = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                                    let xr = &xp[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                                    for (g, xv) in gr.iter().zip(xr.iter()) {
                                        acc += g * xv;
                                    }
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let iy = (oy * cfg.stride + ky * cfg.dilation) as isize
                                    - cfg.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for ox in 0..ow {
                                    let ix = (ox * cfg.stride + kx * cfg.dilation) as isize
                                        - cfg.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += dyp[oy * ow + ox] * xp[iy as usize * w + ix as usize];
                                }
                            }
                        }
                        dwp[(ci * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });
    if let Some(db) = db {
        for co in 0..cout {
            db[co] = dy[co * oh * ow..(co + 1) * oh * ow].iter().sum();
        }
    }
}

/// `y = conv_transpose2d(x, w) + b` with square kernel `k` and stride `s`
/// (no padding); output is `(h-1)*s + k` per axis. Kernel layout is
/// `[cin, cout, k, k]`.
pub fn conv_transpose2d_forward(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    wt: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    bias: Option<&[f64]>,
    y: &mut [f64],
) {
    let oh = (h - 1) * s + k;
    let ow = (w - 1) * s + k;
    debug_assert_eq!(y.len(), cout * oh * ow);
    let macs = cout * oh * ow * cin * k * k;
    run_plane_loop(y, oh * ow, macs, |co, yp| {
        let b = bias.map_or(0.0, |b| b[co]);
        yp.fill(b);
        for ci in 0..cin {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((ci * cout + co) * k + ky) * k + kx];
                    for iy in 0..h {
                        let oy = iy * s + ky;
                        let yr = &mut yp[oy * ow + kx..oy * ow + kx + (w - 1) * s + 1];
                        let xr = &xp[iy * w..(iy + 1) * w];
                        for (ix, xv) in xr.iter().enumerate() {
                            yr[ix * s] += wv * xv;
                        }
                    }
                }
            }
        }
    });
}

/// Input gradient of `conv_transpose2d_forward`.
pub fn conv_transpose2d_backward_input(
    dy: &[f64],
    (cout, oh, ow): (usize, usize, usize),
    wt: &[f64],
    cin: usize,
    k: usize,
    s: usize,
    (h, w): (usize, usize),
    dx: &mut [f64],
) {
    debug_assert_eq!(dx.len(), cin * h * w);
    let macs = cout * oh * ow * cin * k * k;
    run_plane_loop(dx, h * w, macs, |ci, dxp| {
        dxp.fill(0.0);
        for co in 0..cout {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((ci * cout + co) * k + ky) * k + kx];
                    for iy in 0..h {
                        let oy = iy * s + ky;
                        for ix in 0..w {
                            dxp[iy * w + ix] += wv * dyp[oy * ow + ix * s + kx];
                        }
                    }
                }
            }
        }
    });
}

/// Weight/bias gradients of `conv_transpose2d_forward`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward_params(
    dy: &[f64],
    (cout, oh, ow): (usize, usize, usize),
    x: &[f64],
    (_cin, h, w): (usize, usize, usize),
    k: usize,
    s: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    let macs = _cin * cout * h * w * k * k;
    run_plane_loop(dw, cout * k * k, macs, |ci, dwp| {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for co in 0..cout {
                let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for iy in 0..h {
                            let oy = iy * s + ky;
                            for ix in 0..w {
                                acc += xp[iy * w + ix] * dyp[oy * ow + ix * s + kx];
                            }
                        }
                        dwp[(co * k + ky) * k + kx] = acc;
                    }
                }
            }
        });
    if let Some(db) = db {
        for co in 0..cout {
            db[co] = dy[co * oh * ow..(co + 1) * oh * ow].iter().sum();
        }
    }
}

/// 2×2 max pooling with stride 2. Records the flat in-plane argmax index of
/// every output element (ties resolved to the first element in scan order).
pub fn maxpool2_forward(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    y: &mut [f64],
    argmax: &mut [u32],
) {
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 requires even dims");
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        let yp = &mut y[ci * oh * ow..(ci + 1) * oh * ow];
        let ap = &mut argmax[ci * oh * ow..(ci + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if xp[idx] > best {
                            best = xp[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                yp[oy * ow + ox] = best;
                ap[oy * ow + ox] = best_idx;
            }
        }
    }
}

pub fn maxpool2_backward(
    dy: &[f64],
    (c, oh, ow): (usize, usize, usize),
    argmax: &[u32],
    (h, w): (usize, usize),
    dx: &mut [f64],
) {
    dx.fill(0.0);
    for ci in 0..c {
        let dyp = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let ap = &argmax[ci * oh * ow..(ci + 1) * oh * ow];
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        for (g, &idx) in dyp.iter().zip(ap.iter()) {
            dxp[idx as usize] += g;
        }
    }
}

/// Mirror index without edge repetition: -1 maps to 1, n maps to n-2.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r), "reflection out of range");
    r as usize
}

/// Normalized 1-D Gaussian taps truncated at ±⌈3σ⌉.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0);
    let r = (3.0 * sigma).ceil() as usize;
    let mut taps: Vec<f64> = (-(r as isize)..=r as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian convolution with reflect padding, applied per channel.
pub fn gaussian_reflect_forward(x: &[f64], (c, h, w): (usize, usize, usize), taps: &[f64], y: &mut [f64]) {
    let r = taps.len() / 2;
    assert!(r < h && r < w, "grid {}x{} too small for kernel radius {}", h, w, r);
    let mut tmp = vec![0.0; h * w];
    for ci in 0..c {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        let yp = &mut y[ci * h * w..(ci + 1) * h * w];
        // horizontal
        for yr in 0..h {
            for xc in 0..w {
                let mut acc = 0.0;
                for (j, t) in taps.iter().enumerate() {
                    acc += t * xp[yr * w + reflect(xc as isize + j as isize - r as isize, w)];
                }
                tmp[yr * w + xc] = acc;
            }
        }
        // vertical
        for yr in 0..h {
            for xc in 0..w {
                let mut acc = 0.0;
                for (j, t) in taps.iter().enumerate() {
                    acc += t * tmp[reflect(yr as isize + j as isize - r as isize, h) * w + xc];
                }
                yp[yr * w + xc] = acc;
            }
        }
    }
}

/// Adjoint of `gaussian_reflect_forward` (scatter through the same index map).
pub fn gaussian_reflect_backward(dy: &[f64], (c, h, w): (usize, usize, usize), taps: &[f64], dx: &mut [f64]) {
    let r = taps.len() / 2;
    let mut tmp = vec![0.0; h * w];
    dx.fill(0.0);
    for ci in 0..c {
        let dyp = &dy[ci * h * w..(ci + 1) * h * w];
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        // adjoint of vertical pass
        tmp.fill(0.0);
        for yr in 0..h {
            for xc in 0..w {
                let g = dyp[yr * w + xc];
                for (j, t) in taps.iter().enumerate() {
                    tmp[reflect(yr as isize + j as isize - r as isize, h) * w + xc] += t * g;
                }
            }
        }
        // adjoint of horizontal pass
        for yr in 0..h {
            for xc in 0..w {
                let g = tmp[yr * w + xc];
                for (j, t) in taps.iter().enumerate() {
                    dxp[yr * w + reflect(xc as isize + j as isize - r as isize, w)] += t * g;
                }
            }
        }
    }
}
