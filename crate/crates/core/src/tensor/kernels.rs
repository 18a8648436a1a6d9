//! Raw numeric kernels shared by forward evaluation and backward rules.
//!
//! Everything operates on row-major `f64` slices. Loop orders are chosen for
//! sequential memory access; these inner loops dominate training wall time.

/// C[p,r] += A[p,q] * B[q,r]
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for j in 0..r {
                c_row[j] += aik * b_row[j];
            }
        }
    }
}

/// dA[p,q] += dC[p,r] * B[q,r]^T  (row dot products)
pub fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let dc_row = &dc[i * r..(i + 1) * r];
        let da_row = &mut da[i * q..(i + 1) * q];
        for k in 0..q {
            let b_row = &b[k * r..(k + 1) * r];
            let mut s = 0.0;
            for j in 0..r {
                s += dc_row[j] * b_row[j];
            }
            da_row[k] += s;
        }
    }
}

/// dB[q,r] += A[p,q]^T * dC[p,r]
pub fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let dc_row = &dc[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let db_row = &mut db[k * r..(k + 1) * r];
            for j in 0..r {
                db_row[j] += aik * dc_row[j];
            }
        }
    }
}

pub struct Conv2dDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// out[co,oy,ox] += sum_{ci,ky,kx} w[co,ci,ky,kx] * in[ci, oy*s+ky-p, ox*s+kx-p]
pub fn conv2d_forward(input: &[f64], weight: &[f64], d: &Conv2dDims, out: &mut [f64]) {
    for co in 0..d.c_out {
        let out_plane = &mut out[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
        for ci in 0..d.c_in {
            let in_plane = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = weight[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let out_row = &mut out_plane[oy * d.ow..(oy + 1) * d.ow];
                        for ox in 0..d.ow {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            out_row[ox] += wv * in_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_grad_input(gout: &[f64], weight: &[f64], d: &Conv2dDims, gin: &mut [f64]) {
    for co in 0..d.c_out {
        let g_plane = &gout[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
        for ci in 0..d.c_in {
            let gin_plane = &mut gin[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = weight[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let g_row = &g_plane[oy * d.ow..(oy + 1) * d.ow];
                        let gin_row =
                            &mut gin_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        for ox in 0..d.ow {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            gin_row[ix as usize] += wv * g_row[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_grad_weight(input: &[f64], gout: &[f64], d: &Conv2dDims, gw: &mut [f64]) {
    for co in 0..d.c_out {
        let g_plane = &gout[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
        for ci in 0..d.c_in {
            let in_plane = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let mut s = 0.0;
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let g_row = &g_plane[oy * d.ow..(oy + 1) * d.ow];
                        for ox in 0..d.ow {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            s += in_row[ix as usize] * g_row[ox];
                        }
                    }
                    gw[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx] += s;
                }
            }
        }
    }
}

/// One bilinear read of a `[C,H,W]` map at a normalized point, pixel centers
/// at `(i + 0.5) / size`. Out-of-grid texels read zero; a point outside the
/// unit box reads zero entirely. Returns per-channel values.
pub struct BilinearTap {
    pub inside: bool,
    pub x0: isize,
    pub y0: isize,
    pub wx: f64,
    pub wy: f64,
}

pub fn bilinear_tap(x: f64, y: f64, w: usize, h: usize) -> BilinearTap {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return BilinearTap { inside: false, x0: 0, y0: 0, wx: 0.0, wy: 0.0 };
    }
    let u = x * w as f64 - 0.5;
    let v = y * h as f64 - 0.5;
    let x0 = u.floor();
    let y0 = v.floor();
    BilinearTap {
        inside: true,
        x0: x0 as isize,
        y0: y0 as isize,
        wx: u - x0,
        wy: v - y0,
    }
}

#[inline]
pub fn texel(map: &[f64], c: usize, h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        map[c * h * w + y as usize * w + x as usize]
    }
}

/// Copy `src` (row-major, `shape`) into the layout given by `perm`:
/// output axis `i` is input axis `perm[i]`.
pub fn permute_copy(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; ndim];
    for d in (0..ndim.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let numel: usize = shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut idx = vec![0usize; ndim];
    for slot in out.iter_mut() {
        let mut off = 0;
        for d in 0..ndim {
            off += idx[d] * in_strides[perm[d]];
        }
        *slot = src[off];
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Decompose a shape around `axis` into (outer, n, inner) loop bounds.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, n, inner)
}
