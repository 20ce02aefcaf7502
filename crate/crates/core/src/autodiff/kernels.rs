//! Plain loops for the dense products used by matmul and conv2d.

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `[C,H,W]` image into `[C*kh*kw, out_h*out_w]` columns.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[r * ol..(r + 1) * ol];
                for oy in 0..g.out_h {
                    let src_row = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = x[src_row + ox * g.stride];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[r * ol..(r + 1) * ol];
                for oy in 0..g.out_h {
                    let dst_row = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    for ox in 0..g.out_w {
                        dx[dst_row + ox * g.stride] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        gemm_nn(&a, &b, m, k, n, &mut out);
        assert_eq!(out, want);

        let mut out = vec![0.0; m * n];
        gemm_nt(&a, &transpose(&b, k, n), m, k, n, &mut out);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut out = vec![0.0; m * n];
        gemm_tn(&transpose(&a, m, k), &b, m, k, n, &mut out);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
