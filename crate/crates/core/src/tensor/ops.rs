use super::{Element, Tensor, Var};

fn same_shape<T: Element>(op: &str, a: &Var<T>, b: &Var<T>) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

impl<T: Element> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        same_shape("add", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        same_shape("sub", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        same_shape("mul", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a * b);
        Var::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, p, _| {
                vec![
                    Some(g.zip_map(p[1].value(), |g, b| g * b)),
                    Some(g.zip_map(p[0].value(), |g, a| g * a)),
                ]
            }),
        )
    }

    /// Sum of several same-shaped nodes.
    pub fn sum_all(parts: &[Var<T>]) -> Var<T> {
        assert!(!parts.is_empty(), "sum_all of nothing");
        let mut value = parts[0].value().clone();
        for p in &parts[1..] {
            assert_eq!(p.shape(), value.shape(), "sum_all shape mismatch");
            value.add_assign(p.value());
        }
        let n = parts.len();
        Var::from_op(value, parts.to_vec(), Box::new(move |g, _, _| vec![Some(g.clone()); n]))
    }

    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        Var::from_op(
            self.value().map(|v| v * c),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.map(|v| v * c))]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        Var::from_op(
            self.value().map(|v| v + c),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.clone())]),
        )
    }

    /// Element-wise product with a constant tensor.
    pub fn mul_const(&self, c: &Tensor<T>) -> Var<T> {
        assert_eq!(self.shape(), c.shape(), "mul_const shape mismatch");
        let c = c.clone();
        Var::from_op(
            self.value().zip_map(&c, |a, b| a * b),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.zip_map(&c, |g, b| g * b))]),
        )
    }

    /// Element-wise sum with a constant tensor.
    pub fn add_const(&self, c: &Tensor<T>) -> Var<T> {
        assert_eq!(self.shape(), c.shape(), "add_const shape mismatch");
        Var::from_op(
            self.value().zip_map(c, |a, b| a + b),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.clone())]),
        )
    }

    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
        Var::from_op(
            self.value().map(f),
            vec![self.clone()],
            Box::new(move |g, p, y| {
                let x = p[0].value().data();
                let y = y.data();
                let out: Vec<T> =
                    g.data().iter().enumerate().map(|(i, &g)| g * df(x[i], y[i])).collect();
                vec![Some(Tensor::from_vec(g.shape(), out).expect("same shape"))]
            }),
        )
    }

    pub fn tanh(&self) -> Var<T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(|v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        self.unary(
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn square(&self) -> Var<T> {
        self.unary(|v| v * v, |x, _| x + x)
    }

    /// Clamp with gradient passed where `lo <= x <= hi`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Round half away from zero in the forward pass, identity gradient.
    pub fn round_ste(&self) -> Var<T> {
        self.unary(|v| v.round(), |_, _| T::one())
    }

    /// Cubic soft staircase `round(v) + (v - round(v))^3`.
    pub fn soft_round(&self) -> Var<T> {
        let three = T::of(3.0);
        self.unary(
            |v| {
                let r = v.round();
                let d = v - r;
                r + d * d * d
            },
            move |x, _| {
                let d = x - x.round();
                three * d * d
            },
        )
    }

    pub fn sum(&self) -> Var<T> {
        let shape = self.shape().to_vec();
        Var::from_op(
            Tensor::scalar(self.value().sum()),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean squared difference, as a scalar.
    pub fn mse(&self, target: &Var<T>) -> Var<T> {
        same_shape("mse", self, target);
        let n = T::of(self.value().len().max(1) as f64);
        let total: T = self
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Var::from_op(
            Tensor::scalar(total / n),
            vec![self.clone(), target.clone()],
            Box::new(move |g, p, _| {
                let k = g.item() * T::of(2.0) / n;
                let da = p[0].value().zip_map(p[1].value(), |a, b| (a - b) * k);
                let db = da.map(|v| -v);
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let from = self.shape().to_vec();
        let value = self.value().reshape(shape).expect("reshape");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.reshape(&from).expect("reshape back"))]),
        )
    }

    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Var<T> {
        let full = self.shape().to_vec();
        let value = self.value().narrow(dim, start, len).expect("narrow");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let before = start;
                let after = full[dim] - start - len;
                let mut pieces = Vec::new();
                let mut pad_shape = full.clone();
                let zeros_before = (before > 0).then(|| {
                    pad_shape[dim] = before;
                    Tensor::zeros(&pad_shape)
                });
                let zeros_after = (after > 0).then(|| {
                    pad_shape[dim] = after;
                    Tensor::zeros(&pad_shape)
                });
                if let Some(z) = &zeros_before {
                    pieces.push(z);
                }
                pieces.push(g);
                if let Some(z) = &zeros_after {
                    pieces.push(z);
                }
                vec![Some(Tensor::cat(&pieces, dim).expect("pad narrow grad"))]
            }),
        )
    }

    pub fn cat(parts: &[Var<T>], dim: usize) -> Var<T> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let value = Tensor::cat(&values, dim).expect("cat");
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[dim]).collect();
        Var::from_op(
            value,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let mut offset = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let piece = g.narrow(dim, offset, s).expect("split cat grad");
                        offset += s;
                        Some(piece)
                    })
                    .collect()
            }),
        )
    }

    /// Per-sample, per-channel normalisation over the spatial extent.
    pub fn instance_norm(&self, eps: f64) -> Var<T> {
        let (n, c, h, w) = self.value().dims4();
        let plane = h * w;
        let x = self.value().data();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let eps = T::of(eps);
        let count = T::of(plane as f64);
        for p in 0..n * c {
            let xs = &x[p * plane..(p + 1) * plane];
            let mean = xs.iter().copied().sum::<T>() / count;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = T::one() / (var + eps).sqrt();
            inv_std[p] = is;
            for (o, &v) in out[p * plane..(p + 1) * plane].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
        }
        let value = Tensor::from_vec(self.shape(), out).expect("instance_norm");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, y| {
                let gd = g.data();
                let yd = y.data();
                let mut dx = vec![T::zero(); gd.len()];
                for p in 0..n * c {
                    let r = p * plane..(p + 1) * plane;
                    let gs = &gd[r.clone()];
                    let ys = &yd[r.clone()];
                    let mean_g = gs.iter().copied().sum::<T>() / count;
                    let mean_gy = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((d, &gv), &yv) in dx[r].iter_mut().zip(gs).zip(ys) {
                        *d = inv_std[p] * (gv - mean_g - yv * mean_gy);
                    }
                }
                vec![Some(Tensor::from_vec(g.shape(), dx).expect("instance_norm grad"))]
            }),
        )
    }

    /// Nearest-neighbour 2× upsampling of a `[N, C, H, W]` tensor.
    pub fn upsample2x(&self) -> Var<T> {
        let (n, c, h, w) = self.value().dims4();
        let x = self.value().data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h2, w2], out).expect("upsample");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dst[(i / 2) * w + j / 2] = dst[(i / 2) * w + j / 2] + src[i * w2 + j];
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&[n, c, h, w], dx).expect("upsample grad"))]
            }),
        )
    }

    /// Per-pixel affine colour map: `y[o] = Σ_c m[o][c]·x[c] + offset[o]`.
    pub fn channel_affine(&self, m: &[Vec<f64>], offset: &[f64]) -> Var<T> {
        let (n, c_in, h, w) = self.value().dims4();
        let c_out = m.len();
        assert!(m.iter().all(|row| row.len() == c_in), "channel_affine: matrix width != channels");
        assert_eq!(offset.len(), c_out, "channel_affine: offset length");
        let mat: Vec<T> = m.iter().flatten().map(|&v| T::of(v)).collect();
        let off: Vec<T> = offset.iter().map(|&v| T::of(v)).collect();
        let plane = h * w;
        let x = self.value().data();
        let mut out = vec![T::zero(); n * c_out * plane];
        for b in 0..n {
            for o in 0..c_out {
                let dst = &mut out[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
                dst.iter_mut().for_each(|d| *d = off[o]);
                for ci in 0..c_in {
                    let k = mat[o * c_in + ci];
                    let src = &x[(b * c_in + ci) * plane..(b * c_in + ci + 1) * plane];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + k * s;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n, c_out, h, w], out).expect("channel_affine");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); n * c_in * plane];
                for b in 0..n {
                    for ci in 0..c_in {
                        let dst = &mut dx[(b * c_in + ci) * plane..(b * c_in + ci + 1) * plane];
                        for o in 0..c_out {
                            let k = mat[o * c_in + ci];
                            let src = &gd[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + k * s;
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&[n, c_in, h, w], dx).expect("channel_affine grad"))]
            }),
        )
    }

    /// Separable linear map on every plane: `Y = rows · X · colsᵀ`, where
    /// `rows` is `[H_out, H]` and `cols` is `[W_out, W]`.
    pub fn spatial_linear(&self, rows: &Tensor<T>, cols: &Tensor<T>) -> Var<T> {
        let (n, c, h, w) = self.value().dims4();
        let (ho, hr) = (rows.shape()[0], rows.shape()[1]);
        let (wo, wc) = (cols.shape()[0], cols.shape()[1]);
        assert!(hr == h && wc == w, "spatial_linear: operator {hr}x{wc} vs image {h}x{w}");
        let value = Tensor::from_vec(
            &[n, c, ho, wo],
            apply_separable(self.value().data(), n * c, h, w, rows.data(), false, ho, cols.data(), false, wo),
        )
        .expect("spatial_linear");
        let (rows, cols) = (rows.clone(), cols.clone());
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let dx = apply_separable(g.data(), n * c, ho, wo, rows.data(), true, h, cols.data(), true, w);
                vec![Some(Tensor::from_vec(&[n, c, h, w], dx).expect("spatial_linear grad"))]
            }),
        )
    }

    /// Applies `B ↦ M·B·Mᵀ` to every non-overlapping 8×8 block of every plane.
    pub fn block8x8(&self, m: &[f64; 64]) -> Var<T> {
        let (n, c, h, w) = self.value().dims4();
        assert!(h % 8 == 0 && w % 8 == 0, "block8x8 needs sides divisible by 8, got {h}x{w}");
        let fwd: [T; 64] = std::array::from_fn(|i| T::of(m[i]));
        let bwd: [T; 64] = std::array::from_fn(|i| T::of(m[(i % 8) * 8 + i / 8]));
        let value = Tensor::from_vec(self.shape(), blockwise(self.value().data(), n * c, h, w, &fwd))
            .expect("block8x8");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(Tensor::from_vec(g.shape(), blockwise(g.data(), n * c, h, w, &bwd)).expect("block grad"))]
            }),
        )
    }

    /// Correlation of every plane with a fixed odd-sized kernel, reflect padded.
    pub fn filter2d_reflect(&self, kernel: &Tensor<T>) -> Var<T> {
        let (n, c, h, w) = self.value().dims4();
        let k = kernel.shape()[0];
        assert!(k % 2 == 1 && kernel.shape() == [k, k], "filter2d_reflect: kernel must be odd and square");
        let r = k / 2;
        assert!(r < h && r < w, "filter2d_reflect: kernel radius {r} too large for {h}x{w}");
        let kern = kernel.data().to_vec();
        let x = self.value().data();
        let mut out = vec![T::zero(); x.len()];
        let (ri, rj) = (reflect_table(h, r), reflect_table(w, r));
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = T::zero();
                    for a in 0..k {
                        let row = ri[i + a] * w;
                        for b in 0..k {
                            acc = acc + kern[a * k + b] * src[row + rj[j + b]];
                        }
                    }
                    dst[i * w + j] = acc;
                }
            }
        }
        let value = Tensor::from_vec(self.shape(), out).expect("filter2d");
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); gd.len()];
                for p in 0..n * c {
                    let src = &gd[p * h * w..(p + 1) * h * w];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let gv = src[i * w + j];
                            for a in 0..k {
                                let row = ri[i + a] * w;
                                for b in 0..k {
                                    let idx = row + rj[j + b];
                                    dst[idx] = dst[idx] + kern[a * k + b] * gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_vec(g.shape(), dx).expect("filter2d grad"))]
            }),
        )
    }
}

/// Source index for padded position `p` (0-based in the padded frame).
fn reflect_table(len: usize, r: usize) -> Vec<usize> {
    (0..len + 2 * r)
        .map(|p| {
            let i = p as isize - r as isize;
            let last = len as isize - 1;
            let m = if i < 0 {
                -i
            } else if i > last {
                2 * last - i
            } else {
                i
            };
            m as usize
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn apply_separable<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    rows: &[T],
    rows_t: bool,
    ho: usize,
    cols: &[T],
    cols_t: bool,
    wo: usize,
) -> Vec<T> {
    // rows: ho×h (or stored h×ho when rows_t); cols: wo×w (or w×wo when cols_t)
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        // tmp = X · colsᵀ
        T::gemm(h, w, wo, src, false, cols, !cols_t, &mut tmp, false);
        // out = rows · tmp
        T::gemm(ho, h, wo, rows, rows_t, &tmp, false, &mut out[p * ho * wo..(p + 1) * ho * wo], false);
    }
    out
}

fn blockwise<T: Element>(x: &[T], planes: usize, h: usize, w: usize, m: &[T; 64]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let mut block = [T::zero(); 64];
    let mut tmp = [T::zero(); 64];
    for p in 0..planes {
        let base = p * h * w;
        for bi in (0..h).step_by(8) {
            for bj in (0..w).step_by(8) {
                for u in 0..8 {
                    block[u * 8..u * 8 + 8]
                        .copy_from_slice(&x[base + (bi + u) * w + bj..base + (bi + u) * w + bj + 8]);
                }
                // tmp = M · B
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = T::zero();
                        for t in 0..8 {
                            acc = acc + m[u * 8 + t] * block[t * 8 + v];
                        }
                        tmp[u * 8 + v] = acc;
                    }
                }
                // out = tmp · Mᵀ
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = T::zero();
                        for t in 0..8 {
                            acc = acc + tmp[u * 8 + t] * m[v * 8 + t];
                        }
                        out[base + (bi + u) * w + bj + v] = acc;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx against autograd.
    fn check(f: impl Fn(&Var<f64>) -> Var<f64>, x: Tensor<f64>, tol: f64) {
        let probe = f(&Var::constant(x.clone()));
        let weights = Tensor::from_fn(probe.shape(), |i| ((i * 37 % 11) as f64 - 5.0) / 7.0);
        let leaf = Var::param(x.clone());
        f(&leaf).mul_const(&weights).sum().backward();
        let grad = leaf.grad().unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp = f(&Var::constant(xp)).mul_const(&weights).sum().value().item();
            let fm = f(&Var::constant(xm)).mul_const(&weights).sum().value().item();
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.data()[i];
            assert!((fd - an).abs() <= tol * (1.0 + fd.abs()), "index {i}: fd {fd} vs analytic {an}");
        }
    }

    fn sample(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 7919 % 101) as f64 / 101.0 - 0.5) * 1.7 + 0.013)
    }

    #[test]
    fn elementwise_gradients() {
        let x = sample(&[2, 3, 4, 4]);
        check(|v| v.tanh(), x.clone(), 1e-6);
        check(|v| v.leaky_relu(0.2), x.clone(), 1e-6);
        check(|v| v.square().scale(0.3).add_scalar(1.0), x.clone(), 1e-6);
        check(|v| v.mul(&v.tanh()), x.clone(), 1e-6);
        check(|v| v.sub(&v.square()), x, 1e-6);
    }

    #[test]
    fn structural_gradients() {
        let x = sample(&[2, 3, 8, 8]);
        check(|v| v.instance_norm(1e-5), x.clone(), 1e-5);
        check(|v| v.upsample2x(), x.clone(), 1e-6);
        check(|v| Var::cat(&[v.clone(), v.square()], 1).narrow(1, 2, 3), x.clone(), 1e-6);
        check(
            |v| v.channel_affine(&[vec![0.3, -0.2, 0.9], vec![1.0, 0.5, 0.25]], &[0.1, -0.4]),
            x.clone(),
            1e-6,
        );
        let m: [f64; 64] = std::array::from_fn(|i| ((i * 13 % 17) as f64 - 8.0) / 9.0);
        check(|v| v.block8x8(&m), x.clone(), 1e-6);
        let kernel = t(&[3, 3], &[0.1, 0.2, 0.05, 0.3, 0.0, -0.1, 0.2, 0.1, 0.15]);
        check(|v| v.filter2d_reflect(&kernel), x.clone(), 1e-6);
        let rows = Tensor::from_fn(&[5, 8], |i| (i as f64 * 0.37).sin());
        let cols = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.11).cos());
        check(|v| v.spatial_linear(&rows, &cols), x, 1e-6);
    }

    #[test]
    fn reductions() {
        let x = sample(&[1, 1, 3, 5]);
        let target = Var::constant(Tensor::full(&[1, 1, 3, 5], 0.25));
        check(|v| v.mse(&target).reshape(&[1]), x.clone(), 1e-6);
        check(|v| v.mean().reshape(&[1]), x, 1e-6);
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect_table(4, 2), vec![2, 1, 0, 1, 2, 3, 2, 1]);
    }

    #[test]
    fn gradients_accumulate_over_shared_nodes() {
        let x = Var::param(t(&[2], &[1.0, 2.0]));
        let y = x.add(&x).mul(&x).sum();
        y.backward();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn constants_do_not_record_graph() {
        let c = Var::constant(t(&[2], &[1.0, 2.0]));
        let y = c.tanh().add(&c);
        assert!(!y.requires_grad());
    }

    #[test]
    fn soft_round_keeps_lattice_points() {
        let x = Var::constant(t(&[5], &[-3.0, -1.0, 0.0, 2.0, 7.0]));
        assert_eq!(x.soft_round().value().data(), x.value().data());
        let y = Var::constant(t(&[2], &[0.25, -1.75]));
        let out = y.soft_round();
        assert!((out.value().data()[0] - 0.015625).abs() < 1e-12);
        assert!((out.value().data()[1] - (-2.0 + 0.015625)).abs() < 1e-12);
    }
}
