//! 2-D convolution (cross-correlation) via im2col + GEMM.

use super::{Element, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output columns `lo..hi` whose stride-1 input column `oj + kj - pad`
/// lies inside the image.
fn valid_span(kj: usize, g: &Geometry) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).min(g.w_out);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.w_out).max(lo);
    (lo, hi)
}

fn im2col<T: Element>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let n_cols = g.cols();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oi in 0..g.h_out {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.w_out..(oi + 1) * g.w_out];
                    if ii < 0 || ii >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(kj, g);
                        line[..lo].iter_mut().for_each(|v| *v = T::zero());
                        line[hi..].iter_mut().for_each(|v| *v = T::zero());
                        let off = lo + kj - g.pad;
                        line[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        continue;
                    }
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let n_cols = g.cols();
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oi in 0..g.h_out {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(kj, g);
                        let off = lo + kj - g.pad;
                        let row = &src[oi * g.w_out + lo..oi * g.w_out + hi];
                        for (d, &v) in line[off..off + hi - lo].iter_mut().zip(row) {
                            *d = *d + v;
                        }
                        continue;
                    }
                    for oj in 0..g.w_out {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            line[jj as usize] = line[jj as usize] + src[oi * g.w_out + oj];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Var<T> {
    /// Zero-padded convolution. `weight` is `[C_out, C_in, k, k]`, `bias` is `[C_out]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Var<T> {
        let (n, c_in, h, w) = self.value().dims4();
        let ws = weight.shape();
        assert!(
            ws.len() == 4 && ws[1] == c_in && ws[2] == ws[3],
            "conv2d: weight {ws:?} incompatible with input channels {c_in}"
        );
        let (c_out, k) = (ws[0], ws[2]);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel larger than padded input");
        let g = Geometry {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        };
        if let Some(b) = bias {
            assert_eq!(b.shape(), [c_out], "conv2d: bias shape");
        }
        let (rows, n_cols) = (g.rows(), g.cols());
        let x = self.value().data();
        let wd = weight.value().data();
        let mut cols = vec![T::zero(); rows * n_cols];
        let mut out = vec![T::zero(); n * c_out * n_cols];
        for b in 0..n {
            im2col(&x[b * c_in * h * w..(b + 1) * c_in * h * w], &g, &mut cols);
            let dst = &mut out[b * c_out * n_cols..(b + 1) * c_out * n_cols];
            T::gemm(c_out, rows, n_cols, wd, false, &cols, false, dst, false);
            if let Some(bias) = bias {
                for (o, &bv) in bias.value().data().iter().enumerate() {
                    dst[o * n_cols..(o + 1) * n_cols].iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c_out, g.h_out, g.w_out], out).expect("conv2d");
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Var::from_op(
            value,
            parents,
            Box::new(move |grad, p, _| {
                let gd = grad.data();
                let x = p[0].value().data();
                let wd = p[1].value().data();
                let need_x = p[0].requires_grad();
                let need_w = p[1].requires_grad();
                let mut cols = vec![T::zero(); rows * n_cols];
                let mut dcols = vec![T::zero(); rows * n_cols];
                let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
                let mut dw = need_w.then(|| vec![T::zero(); wd.len()]);
                for b in 0..n {
                    let go = &gd[b * c_out * n_cols..(b + 1) * c_out * n_cols];
                    if let Some(dw) = dw.as_mut() {
                        im2col(&x[b * c_in * h * w..(b + 1) * c_in * h * w], &g, &mut cols);
                        // dW += gO · colsᵀ
                        T::gemm(c_out, n_cols, rows, go, false, &cols, true, dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcols = Wᵀ · gO
                        T::gemm(rows, c_out, n_cols, wd, true, go, false, &mut dcols, false);
                        col2im(&dcols, &g, &mut dx[b * c_in * h * w..(b + 1) * c_in * h * w]);
                    }
                }
                let mut grads = vec![
                    dx.map(|d| Tensor::from_vec(&[n, c_in, h, w], d).expect("conv dx")),
                    dw.map(|d| Tensor::from_vec(&[c_out, c_in, k, k], d).expect("conv dw")),
                ];
                if has_bias {
                    let mut db = vec![T::zero(); c_out];
                    for b in 0..n {
                        for (o, acc) in db.iter_mut().enumerate() {
                            let s = &gd[(b * c_out + o) * n_cols..(b * c_out + o + 1) * n_cols];
                            *acc = *acc + s.iter().copied().sum::<T>();
                        }
                    }
                    grads.push(Some(Tensor::from_vec(&[c_out], db).expect("conv db")));
                }
                grads
            }),
        )
    }
}
