//! Layer primitives with hand-written reverse-mode gradients.
//!
//! Tensors are flat `f64` slices with explicit dimensions. Feature maps are
//! laid out `(channel, bin, frame)` with frames contiguous; sequences are
//! `(frame, dim)` with dims contiguous. Every `*_backward` returns exact
//! gradients for the matching forward, checked against finite differences
//! in the tests below.

/// Same-padding 2D convolution with an odd square kernel.
/// `x` is `(ci, fi, ti)`, `w` is `(co, ci, k, k)`, output is `(co, fi, ti)`.
pub(crate) fn conv_forward(
    x: &[f64],
    ci: usize,
    fi: usize,
    ti: usize,
    w: &[f64],
    b: &[f64],
    co: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = fi * ti;
    let mut y = vec![0.0; co * plane];
    for (oc, bias) in b.iter().enumerate() {
        y[oc * plane..(oc + 1) * plane].fill(*bias);
    }
    for oc in 0..co {
        for ic in 0..ci {
            for kf in 0..k {
                let df = kf as isize - pad;
                let f_lo = (-df).max(0) as usize;
                let f_hi = ((fi as isize - df).min(fi as isize)).max(0) as usize;
                for kt in 0..k {
                    let dt = kt as isize - pad;
                    let t_lo = (-dt).max(0) as usize;
                    let t_hi = ((ti as isize - dt).min(ti as isize)).max(0) as usize;
                    if t_lo >= t_hi || f_lo >= f_hi {
                        continue;
                    }
                    let wv = w[((oc * ci + ic) * k + kf) * k + kt];
                    for f in f_lo..f_hi {
                        let src = (ic * fi + (f as isize + df) as usize) * ti;
                        let dst = (oc * fi + f) * ti;
                        let xs = &x[src + (t_lo as isize + dt) as usize
                            ..src + (t_hi as isize + dt) as usize];
                        let ys = &mut y[dst + t_lo..dst + t_hi];
                        for (yv, xv) in ys.iter_mut().zip(xs) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv_forward`]: returns `(dx, dw, db)`.
pub(crate) fn conv_backward(
    x: &[f64],
    ci: usize,
    fi: usize,
    ti: usize,
    w: &[f64],
    co: usize,
    k: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (k / 2) as isize;
    let plane = fi * ti;
    let mut dx = vec![0.0; ci * plane];
    let mut dw = vec![0.0; co * ci * k * k];
    let mut db = vec![0.0; co];
    for (oc, d) in db.iter_mut().enumerate() {
        *d = dy[oc * plane..(oc + 1) * plane].iter().sum();
    }
    for oc in 0..co {
        for ic in 0..ci {
            for kf in 0..k {
                let df = kf as isize - pad;
                let f_lo = (-df).max(0) as usize;
                let f_hi = ((fi as isize - df).min(fi as isize)).max(0) as usize;
                for kt in 0..k {
                    let dt = kt as isize - pad;
                    let t_lo = (-dt).max(0) as usize;
                    let t_hi = ((ti as isize - dt).min(ti as isize)).max(0) as usize;
                    if t_lo >= t_hi || f_lo >= f_hi {
                        continue;
                    }
                    let widx = ((oc * ci + ic) * k + kf) * k + kt;
                    let wv = w[widx];
                    let mut wacc = 0.0;
                    for f in f_lo..f_hi {
                        let src = (ic * fi + (f as isize + df) as usize) * ti;
                        let lo = src + (t_lo as isize + dt) as usize;
                        let hi = src + (t_hi as isize + dt) as usize;
                        let dst = (oc * fi + f) * ti;
                        let gy = &dy[dst + t_lo..dst + t_hi];
                        let xs = &x[lo..hi];
                        let mut s = 0.0;
                        for (xv, gv) in xs.iter().zip(gy) {
                            s += xv * gv;
                        }
                        wacc += s;
                        let dxs = &mut dx[lo..hi];
                        for (dv, gv) in dxs.iter_mut().zip(gy) {
                            *dv += wv * gv;
                        }
                    }
                    dw[widx] = wacc;
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given its (cached) output: the kink passes
/// gradient only where the output is strictly positive.
pub(crate) fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, v) in dy.iter_mut().zip(y) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping average pooling; trailing rows/columns that do not fill
/// a window are dropped. Returns the pooled map and its `(f, t)` dims.
pub(crate) fn avg_pool_forward(
    x: &[f64],
    ch: usize,
    fi: usize,
    ti: usize,
    pf: usize,
    pt: usize,
) -> (Vec<f64>, usize, usize) {
    let fo = fi / pf;
    let to = ti / pt;
    let inv = 1.0 / (pf * pt) as f64;
    let mut y = vec![0.0; ch * fo * to];
    for c in 0..ch {
        for f in 0..fo {
            for t in 0..to {
                let mut s = 0.0;
                for df in 0..pf {
                    let row = (c * fi + f * pf + df) * ti + t * pt;
                    for v in &x[row..row + pt] {
                        s += v;
                    }
                }
                y[(c * fo + f) * to + t] = s * inv;
            }
        }
    }
    (y, fo, to)
}

pub(crate) fn avg_pool_backward(
    dy: &[f64],
    ch: usize,
    fo: usize,
    to: usize,
    pf: usize,
    pt: usize,
    fi: usize,
    ti: usize,
) -> Vec<f64> {
    let inv = 1.0 / (pf * pt) as f64;
    let mut dx = vec![0.0; ch * fi * ti];
    for c in 0..ch {
        for f in 0..fo {
            for t in 0..to {
                let g = dy[(c * fo + f) * to + t] * inv;
                for df in 0..pf {
                    let row = (c * fi + f * pf + df) * ti + t * pt;
                    for v in &mut dx[row..row + pt] {
                        *v += g;
                    }
                }
            }
        }
    }
    dx
}

/// Row-wise affine map: `y[r] = W x[r] + b` over a `(rows, din)` sequence.
pub(crate) fn affine_forward(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    b: &[f64],
    dout: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        let yr = &mut y[r * dout..(r + 1) * dout];
        for (o, out) in yr.iter_mut().enumerate() {
            let wrow = &w[o * din..(o + 1) * din];
            let mut s = b[o];
            for (wv, xv) in wrow.iter().zip(xr) {
                s += wv * xv;
            }
            *out = s;
        }
    }
    y
}

/// Gradients of [`affine_forward`]: returns `(dx, dw, db)`.
pub(crate) fn affine_backward(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * din];
    let mut dw = vec![0.0; dout * din];
    let mut db = vec![0.0; dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        let gr = &dy[r * dout..(r + 1) * dout];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for (o, g) in gr.iter().enumerate() {
            db[o] += g;
            let wrow = &w[o * din..(o + 1) * din];
            let dwrow = &mut dw[o * din..(o + 1) * din];
            for i in 0..din {
                dxr[i] += wrow[i] * g;
                dwrow[i] += xr[i] * g;
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Immutable views into one GRU cell's parameters.
/// `w*` are `(hidden, din)`, `u*` are `(hidden, hidden)`, `b*` are `hidden`.
pub(crate) struct GruViews<'a> {
    pub wr: &'a [f64],
    pub ur: &'a [f64],
    pub br: &'a [f64],
    pub wz: &'a [f64],
    pub uz: &'a [f64],
    pub bz: &'a [f64],
    pub wn: &'a [f64],
    pub un: &'a [f64],
    pub bn: &'a [f64],
}

/// Per-step activations the backward pass needs (each `(t_len, hidden)`).
#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `Un * h_prev` per step, saved to avoid recomputing it backward.
    pub uhn: Vec<f64>,
}

pub(crate) struct GruGrads {
    pub dwr: Vec<f64>,
    pub dur: Vec<f64>,
    pub dbr: Vec<f64>,
    pub dwz: Vec<f64>,
    pub duz: Vec<f64>,
    pub dbz: Vec<f64>,
    pub dwn: Vec<f64>,
    pub dun: Vec<f64>,
    pub dbn: Vec<f64>,
}

fn gemv_add(y: &mut [f64], w: &[f64], x: &[f64]) {
    let din = x.len();
    for (o, out) in y.iter_mut().enumerate() {
        let row = &w[o * din..(o + 1) * din];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *out += s;
    }
}

/// `y += W^T g`, the adjoint of [`gemv_add`].
fn gemv_t_add(y: &mut [f64], w: &[f64], g: &[f64]) {
    let din = y.len();
    for (o, gv) in g.iter().enumerate() {
        let row = &w[o * din..(o + 1) * din];
        for (yv, wv) in y.iter_mut().zip(row) {
            *yv += wv * gv;
        }
    }
}

fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let din = x.len();
    for (o, gv) in g.iter().enumerate() {
        let row = &mut dw[o * din..(o + 1) * din];
        for (dv, xv) in row.iter_mut().zip(x) {
            *dv += gv * xv;
        }
    }
}

/// Single-layer unidirectional gated recurrent pass over a `(t_len, din)`
/// sequence, initial state zero. Gate equations (single-bias form):
///
/// ```text
/// r = sig(Wr x + Ur h + br)
/// z = sig(Wz x + Uz h + bz)
/// n = tanh(Wn x + r .* (Un h) + bn)
/// h' = (1 - z) .* n + z .* h
/// ```
pub(crate) fn gru_forward(
    x: &[f64],
    t_len: usize,
    din: usize,
    hidden: usize,
    p: &GruViews,
) -> (Vec<f64>, GruCache) {
    let mut h = vec![0.0; t_len * hidden];
    let mut cache = GruCache {
        r: vec![0.0; t_len * hidden],
        z: vec![0.0; t_len * hidden],
        n: vec![0.0; t_len * hidden],
        uhn: vec![0.0; t_len * hidden],
    };
    let zero = vec![0.0; hidden];
    for t in 0..t_len {
        let xt = &x[t * din..(t + 1) * din];
        let hp: Vec<f64> = if t == 0 {
            zero.clone()
        } else {
            h[(t - 1) * hidden..t * hidden].to_vec()
        };
        let s = t * hidden;
        let (r, z) = {
            let mut pre_r = p.br.to_vec();
            gemv_add(&mut pre_r, p.wr, xt);
            gemv_add(&mut pre_r, p.ur, &hp);
            let mut pre_z = p.bz.to_vec();
            gemv_add(&mut pre_z, p.wz, xt);
            gemv_add(&mut pre_z, p.uz, &hp);
            (pre_r, pre_z)
        };
        for i in 0..hidden {
            cache.r[s + i] = sigmoid(r[i]);
            cache.z[s + i] = sigmoid(z[i]);
        }
        let mut uhn = vec![0.0; hidden];
        gemv_add(&mut uhn, p.un, &hp);
        cache.uhn[s..s + hidden].copy_from_slice(&uhn);
        let mut pre_n = p.bn.to_vec();
        gemv_add(&mut pre_n, p.wn, xt);
        for i in 0..hidden {
            pre_n[i] += cache.r[s + i] * uhn[i];
            cache.n[s + i] = pre_n[i].tanh();
        }
        for i in 0..hidden {
            let zi = cache.z[s + i];
            h[s + i] = (1.0 - zi) * cache.n[s + i] + zi * hp[i];
        }
    }
    (h, cache)
}

/// Full backpropagation through time for [`gru_forward`]. `dh_seq` holds
/// the loss gradient w.r.t. every step's output state.
pub(crate) fn gru_backward(
    x: &[f64],
    h: &[f64],
    cache: &GruCache,
    t_len: usize,
    din: usize,
    hidden: usize,
    p: &GruViews,
    dh_seq: &[f64],
) -> (Vec<f64>, GruGrads) {
    let mut g = GruGrads {
        dwr: vec![0.0; hidden * din],
        dur: vec![0.0; hidden * hidden],
        dbr: vec![0.0; hidden],
        dwz: vec![0.0; hidden * din],
        duz: vec![0.0; hidden * hidden],
        dbz: vec![0.0; hidden],
        dwn: vec![0.0; hidden * din],
        dun: vec![0.0; hidden * hidden],
        dbn: vec![0.0; hidden],
    };
    let mut dx = vec![0.0; t_len * din];
    let mut carry = vec![0.0; hidden];
    let zero = vec![0.0; hidden];
    for t in (0..t_len).rev() {
        let s = t * hidden;
        let xt = &x[t * din..(t + 1) * din];
        let hp = if t == 0 {
            &zero[..]
        } else {
            &h[(t - 1) * hidden..t * hidden]
        };
        let (r, z, n, uhn) = (
            &cache.r[s..s + hidden],
            &cache.z[s..s + hidden],
            &cache.n[s..s + hidden],
            &cache.uhn[s..s + hidden],
        );
        let mut dh = vec![0.0; hidden];
        for i in 0..hidden {
            dh[i] = dh_seq[s + i] + carry[i];
        }
        let mut dh_prev = vec![0.0; hidden];
        let mut dn_pre = vec![0.0; hidden];
        let mut dz_pre = vec![0.0; hidden];
        let mut dr_pre = vec![0.0; hidden];
        let mut duhn = vec![0.0; hidden];
        for i in 0..hidden {
            let dz = dh[i] * (hp[i] - n[i]);
            let dn = dh[i] * (1.0 - z[i]);
            dh_prev[i] = dh[i] * z[i];
            dn_pre[i] = dn * (1.0 - n[i] * n[i]);
            let dr = dn_pre[i] * uhn[i];
            duhn[i] = dn_pre[i] * r[i];
            dz_pre[i] = dz * z[i] * (1.0 - z[i]);
            dr_pre[i] = dr * r[i] * (1.0 - r[i]);
        }
        let dxt = &mut dx[t * din..(t + 1) * din];
        outer_add(&mut g.dwn, &dn_pre, xt);
        outer_add(&mut g.dun, &duhn, hp);
        outer_add(&mut g.dwz, &dz_pre, xt);
        outer_add(&mut g.duz, &dz_pre, hp);
        outer_add(&mut g.dwr, &dr_pre, xt);
        outer_add(&mut g.dur, &dr_pre, hp);
        for i in 0..hidden {
            g.dbn[i] += dn_pre[i];
            g.dbz[i] += dz_pre[i];
            g.dbr[i] += dr_pre[i];
        }
        gemv_t_add(dxt, p.wn, &dn_pre);
        gemv_t_add(dxt, p.wz, &dz_pre);
        gemv_t_add(dxt, p.wr, &dr_pre);
        gemv_t_add(&mut dh_prev, p.un, &duhn);
        gemv_t_add(&mut dh_prev, p.uz, &dz_pre);
        gemv_t_add(&mut dh_prev, p.ur, &dr_pre);
        carry = dh_prev;
    }
    (dx, g)
}
