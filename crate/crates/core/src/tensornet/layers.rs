//! Forward and backward kernels of the primitive layers.
//!
//! Backward functions accumulate parameter gradients (`+=`) and return the
//! gradient with respect to the layer input.

use super::tensor::{gemm, Scalar, Tensor4D};

/// Geometry of a stride-1 "same" convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

/// Unfold one `(cin, h, w)` item into `(cin*k*k, h*w)` columns.
fn im2col<F: Scalar>(x: &[F], g: &ConvGeom, h: usize, w: usize, cols: &mut [F]) {
    let (k, pad) = (g.k, g.pad() as isize);
    let hw = h * w;
    for c in 0..g.cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].iter_mut().for_each(|v| *v = F::zero());
                    out[x_hi..].iter_mut().for_each(|v| *v = F::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Fold columns back, summing overlapping contributions.
fn col2im<F: Scalar>(cols: &[F], g: &ConvGeom, h: usize, w: usize, x: &mut [F]) {
    let (k, pad) = (g.k, g.pad() as isize);
    let hw = h * w;
    x.iter_mut().for_each(|v| *v = F::zero());
    for c in 0..g.cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x_lo as isize + dx) as usize;
                    for (d, &v) in dst[s0..s0 + (x_hi - x_lo)].iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Weights are `(cout, cin, k, k)`.
pub fn conv2d_forward<F: Scalar>(x: &Tensor4D<F>, weight: &[F], bias: Option<&[F]>, g: &ConvGeom) -> Tensor4D<F> {
    let [n, c, h, w] = x.shape();
    assert_eq!(c, g.cin, "conv input channels");
    let hw = h * w;
    let ckk = g.cin * g.k * g.k;
    let mut y = Tensor4D::zeros([n, g.cout, h, w]);
    let mut cols = vec![F::zero(); if g.k == 1 { 0 } else { ckk * hw }];
    for i in 0..n {
        let src: &[F] = if g.k == 1 {
            x.item(i)
        } else {
            im2col(x.item(i), g, h, w, &mut cols);
            &cols
        };
        let out = y.item_mut(i);
        gemm(false, false, g.cout, hw, ckk, weight, src, F::zero(), out);
        if let Some(b) = bias {
            for (co, plane) in out.chunks_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + b[co]);
            }
        }
    }
    y
}

pub fn conv2d_backward<F: Scalar>(
    x: &Tensor4D<F>,
    weight: &[F],
    dy: &Tensor4D<F>,
    g: &ConvGeom,
    dweight: &mut [F],
    dbias: Option<&mut [F]>,
    need_dx: bool,
) -> Option<Tensor4D<F>> {
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let ckk = g.cin * g.k * g.k;
    let mut cols = vec![F::zero(); if g.k == 1 { 0 } else { ckk * hw }];
    let mut dcols = vec![F::zero(); if need_dx { ckk * hw } else { 0 }];
    let mut dx = need_dx.then(|| Tensor4D::zeros(x.shape()));
    for i in 0..n {
        let src: &[F] = if g.k == 1 {
            x.item(i)
        } else {
            im2col(x.item(i), g, h, w, &mut cols);
            &cols
        };
        let d = dy.item(i);
        gemm(false, true, g.cout, ckk, hw, d, src, F::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            if g.k == 1 {
                gemm(true, false, ckk, hw, g.cout, weight, d, F::zero(), dx.item_mut(i));
            } else {
                gemm(true, false, ckk, hw, g.cout, weight, d, F::zero(), &mut dcols);
                col2im(&dcols, g, h, w, dx.item_mut(i));
            }
        }
    }
    if let Some(db) = dbias {
        for i in 0..n {
            for (co, plane) in dy.item(i).chunks(hw).enumerate() {
                db[co] = db[co] + plane.iter().copied().sum::<F>();
            }
        }
    }
    dx
}

/// Saved state of a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BnCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    pub shape: [usize; 4],
}

fn per_channel<F: Scalar>(x: &Tensor4D<F>, c: usize) -> impl Iterator<Item = &[F]> {
    (0..x.n()).map(move |i| x.channel(i, c))
}

/// Normalize with mini-batch statistics (biased variance) and fold them into
/// the running estimates: `running = (1 - momentum) running + momentum batch`,
/// using the unbiased variance for the running estimate.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train<F: Scalar>(
    x: &Tensor4D<F>,
    gamma: &[F],
    beta: &[F],
    running_mean: &mut [F],
    running_var: &mut [F],
    momentum: f64,
    eps: f64,
) -> (Tensor4D<F>, BnCache<F>) {
    let [n, c, h, w] = x.shape();
    let count = (n * h * w) as f64;
    let mut y = Tensor4D::zeros(x.shape());
    let mut xhat = vec![F::zero(); x.data().len()];
    let mut inv_std = vec![F::zero(); c];
    let plane = h * w;
    for ch in 0..c {
        let mean = per_channel(x, ch).flat_map(|p| p.iter()).map(|v| v.f64()).sum::<f64>() / count;
        let var = per_channel(x, ch)
            .flat_map(|p| p.iter())
            .map(|v| (v.f64() - mean).powi(2))
            .sum::<f64>()
            / count;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[ch] = F::of(istd);
        let (mean_f, istd_f) = (F::of(mean), F::of(istd));
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                let xh = (x.data()[j] - mean_f) * istd_f;
                xhat[j] = xh;
                y.data_mut()[j] = gamma[ch] * xh + beta[ch];
            }
        }
        let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
        running_mean[ch] = F::of((1.0 - momentum) * running_mean[ch].f64() + momentum * mean);
        running_var[ch] = F::of((1.0 - momentum) * running_var[ch].f64() + momentum * unbiased);
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            shape: x.shape(),
        },
    )
}

pub fn batchnorm_eval<F: Scalar>(
    x: &Tensor4D<F>,
    gamma: &[F],
    beta: &[F],
    running_mean: &[F],
    running_var: &[F],
    eps: f64,
) -> Tensor4D<F> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut y = x.clone();
    for ch in 0..c {
        let scale = gamma[ch].f64() / (running_var[ch].f64() + eps).sqrt();
        let shift = beta[ch].f64() - running_mean[ch].f64() * scale;
        let (s, t) = (F::of(scale), F::of(shift));
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for v in &mut y.data_mut()[off..off + plane] {
                *v = *v * s + t;
            }
        }
    }
    y
}

pub fn batchnorm_backward<F: Scalar>(
    dy: &Tensor4D<F>,
    cache: &BnCache<F>,
    gamma: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Tensor4D<F> {
    let [n, c, h, w] = cache.shape;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = Tensor4D::zeros(cache.shape);
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                let d = dy.data()[j].f64();
                sum_dy += d;
                sum_dy_xhat += d * cache.xhat[j].f64();
            }
        }
        dbeta[ch] = dbeta[ch] + F::of(sum_dy);
        dgamma[ch] = dgamma[ch] + F::of(sum_dy_xhat);
        let k = gamma[ch].f64() * cache.inv_std[ch].f64() / m;
        let (mean_dy, mean_dyx) = (sum_dy / m, sum_dy_xhat / m);
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                let v = k * m * (dy.data()[j].f64() - mean_dy - cache.xhat[j].f64() * mean_dyx);
                dx.data_mut()[j] = F::of(v);
            }
        }
    }
    dx
}

pub fn relu_inplace<F: Scalar>(x: &mut Tensor4D<F>) {
    for v in x.data_mut() {
        if !(*v > F::zero()) {
            *v = F::zero();
        }
    }
}

/// Zero the gradient wherever the pre-activation was not positive.
pub fn relu_backward_inplace<F: Scalar>(dy: &mut Tensor4D<F>, pre_activation_positive: impl Fn(usize) -> bool) {
    for (j, d) in dy.data_mut().iter_mut().enumerate() {
        if !pre_activation_positive(j) {
            *d = F::zero();
        }
    }
}

/// 2x2 stride-2 max pooling; also returns the flat input index of each maximum.
pub fn maxpool2_forward<F: Scalar>(x: &Tensor4D<F>) -> (Tensor4D<F>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor4D::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let src = x.data();
    for nc in 0..n * c {
        let ibase = nc * h * w;
        let obase = nc * ho * wo;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_i = ibase + 2 * oy * w + 2 * ox;
                let mut best = src[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ibase + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > best {
                        best = src[i];
                        best_i = i;
                    }
                }
                y.data_mut()[obase + oy * wo + ox] = best;
                arg[obase + oy * wo + ox] = best_i as u32;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<F: Scalar>(dy: &Tensor4D<F>, argmax: &[u32], input_shape: [usize; 4]) -> Tensor4D<F> {
    let mut dx = Tensor4D::zeros(input_shape);
    for (&i, &d) in argmax.iter().zip(dy.data()) {
        let slot = &mut dx.data_mut()[i as usize];
        *slot = *slot + d;
    }
    dx
}

/// 2x2 stride-2 transposed convolution, weights `(cin, cout, 2, 2)`.
pub fn conv_transpose2_forward<F: Scalar>(x: &Tensor4D<F>, weight: &[F], bias: &[F], cout: usize) -> Tensor4D<F> {
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let mut z = vec![F::zero(); cout * 4 * hw];
    let mut y = Tensor4D::zeros([n, cout, 2 * h, 2 * w]);
    let (h2, w2) = (2 * h, 2 * w);
    for i in 0..n {
        gemm(true, false, cout * 4, hw, cin, weight, x.item(i), F::zero(), &mut z);
        let out = y.item_mut(i);
        for co in 0..cout {
            for a in 0..2 {
                for b in 0..2 {
                    let zr = &z[(co * 4 + a * 2 + b) * hw..][..hw];
                    for yy in 0..h {
                        let orow = &mut out[co * h2 * w2 + (2 * yy + a) * w2..][..w2];
                        for xx in 0..w {
                            orow[2 * xx + b] = zr[yy * w + xx] + bias[co];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn conv_transpose2_backward<F: Scalar>(
    x: &Tensor4D<F>,
    weight: &[F],
    dy: &Tensor4D<F>,
    cout: usize,
    dweight: &mut [F],
    dbias: &mut [F],
) -> Tensor4D<F> {
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let (h2, w2) = (2 * h, 2 * w);
    let mut dz = vec![F::zero(); cout * 4 * hw];
    let mut dx = Tensor4D::zeros(x.shape());
    for i in 0..n {
        let d = dy.item(i);
        for co in 0..cout {
            let mut s = F::zero();
            for a in 0..2 {
                for b in 0..2 {
                    let zr = &mut dz[(co * 4 + a * 2 + b) * hw..][..hw];
                    for yy in 0..h {
                        let drow = &d[co * h2 * w2 + (2 * yy + a) * w2..][..w2];
                        for xx in 0..w {
                            let v = drow[2 * xx + b];
                            zr[yy * w + xx] = v;
                            s = s + v;
                        }
                    }
                }
            }
            dbias[co] = dbias[co] + s;
        }
        gemm(false, true, cin, cout * 4, hw, x.item(i), &dz, F::one(), dweight);
        gemm(false, false, cin, hw, cout * 4, weight, &dz, F::zero(), dx.item_mut(i));
    }
    dx
}

pub fn upsample2_forward<F: Scalar>(x: &Tensor4D<F>) -> Tensor4D<F> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor4D::zeros([n, c, 2 * h, 2 * w]);
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..][..h * w];
        let dst = &mut y.data_mut()[nc * 4 * h * w..][..4 * h * w];
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<F: Scalar>(dy: &Tensor4D<F>) -> Tensor4D<F> {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4D::zeros([n, c, h, w]);
    for nc in 0..n * c {
        let src = &dy.data()[nc * h2 * w2..][..h2 * w2];
        let dst = &mut dx.data_mut()[nc * h * w..][..h * w];
        for yy in 0..h2 {
            for xx in 0..w2 {
                let slot = &mut dst[(yy / 2) * w + xx / 2];
                *slot = *slot + src[yy * w2 + xx];
            }
        }
    }
    dx
}

/// Stack `a` and `b` along the channel axis.
pub fn concat_channels<F: Scalar>(a: &Tensor4D<F>, b: &Tensor4D<F>) -> Tensor4D<F> {
    let [n, ca, h, w] = a.shape();
    assert_eq!([n, h, w], [b.n(), b.h(), b.w()], "concat shapes");
    let cb = b.c();
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor4D::new([n, ca + cb, h, w], data).expect("concat size")
}

/// Inverse of [`concat_channels`]: the first `ca` channels, then the rest.
pub fn split_channels<F: Scalar>(x: &Tensor4D<F>, ca: usize) -> (Tensor4D<F>, Tensor4D<F>) {
    let [n, c, h, w] = x.shape();
    let p = h * w;
    let mut a = Vec::with_capacity(n * ca * p);
    let mut b = Vec::with_capacity(n * (c - ca) * p);
    for i in 0..n {
        let item = x.item(i);
        a.extend_from_slice(&item[..ca * p]);
        b.extend_from_slice(&item[ca * p..]);
    }
    (
        Tensor4D::new([n, ca, h, w], a).expect("split size"),
        Tensor4D::new([n, c - ca, h, w], b).expect("split size"),
    )
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
