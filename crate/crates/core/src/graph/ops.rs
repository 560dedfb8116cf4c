//! Layer kernels on single-image tensors.
//!
//! Convolutions are computed one output row at a time (im2col + sgemm) and
//! rows are distributed with rayon. The work for a row never depends on how
//! rows are scheduled, so results are bit-identical for any thread count.

use rayon::prelude::*;

use super::{conv_out_len, same_padding, ConvParams, GraphError, Padding, Shape, Tensor};

fn op_err(op: &str, reason: String) -> GraphError {
    GraphError::InvalidParam {
        layer: op.to_string(),
        reason,
    }
}

fn check_len(op: &str, what: &str, got: usize, want: usize) -> Result<(), GraphError> {
    if got == want {
        Ok(())
    } else {
        Err(op_err(op, format!("{what} has {got} values, expected {want}")))
    }
}

/// C (m×n, row stride `rsc`) += A (m×k) · B (k×n), all row-major with the
/// given row strides for A and C; B is contiguous unless `b_strides` says
/// otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    b: &[f32],
    b_strides: (usize, usize),
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + k);
    assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserts above bound every element sgemm reads or writes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            1,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Cross-correlation with kernel layout (kh, kw, cin, cout).
pub fn conv2d(x: &Tensor, p: &ConvParams, kernel: &[f32], bias: &[f32]) -> Result<Tensor, GraphError> {
    let (kh, kw) = p.kernel;
    let Shape { h, w, c: cin } = x.shape;
    let cout = p.out_channels;
    check_len("conv2d", "kernel", kernel.len(), kh * kw * cin * cout)?;
    check_len("conv2d", "bias", bias.len(), cout)?;
    let (Some(oh), Some(ow)) = (
        conv_out_len(h, kh, p.stride, p.dilation, p.padding),
        conv_out_len(w, kw, p.stride, p.dilation, p.padding),
    ) else {
        return Err(GraphError::NonPositiveOutput {
            layer: "conv2d".into(),
            input: x.shape,
        });
    };
    let (pad_t, pad_l) = match p.padding {
        Padding::Same => (
            same_padding(h, kh, p.stride, p.dilation).0,
            same_padding(w, kw, p.stride, p.dilation).0,
        ),
        Padding::Valid => (0, 0),
    };
    let out_shape = Shape::new(oh, ow, cout);
    let mut out = vec![0f32; out_shape.elements()];
    let pointwise = kh == 1 && kw == 1 && p.stride == 1 && pad_t == 0 && pad_l == 0;
    let kdim = kh * kw * cin;

    out.par_chunks_mut(ow * cout).enumerate().for_each_init(
        || vec![0f32; if pointwise { 0 } else { ow * kdim }],
        |patches, (oy, row)| {
            for px in row.chunks_exact_mut(cout) {
                px.copy_from_slice(bias);
            }
            if pointwise {
                let src = &x.data[oy * w * cin..(oy + 1) * w * cin];
                gemm_acc(ow, cin, cout, src, cin, kernel, (cout, 1), row, cout);
                return;
            }
            for ox in 0..ow {
                let dst = &mut patches[ox * kdim..(ox + 1) * kdim];
                for ky in 0..kh {
                    let iy = (oy * p.stride + ky * p.dilation) as isize - pad_t as isize;
                    for kx in 0..kw {
                        let ix = (ox * p.stride + kx * p.dilation) as isize - pad_l as isize;
                        let d = &mut dst[(ky * kw + kx) * cin..(ky * kw + kx + 1) * cin];
                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                            d.fill(0.0);
                        } else {
                            let s = (iy as usize * w + ix as usize) * cin;
                            d.copy_from_slice(&x.data[s..s + cin]);
                        }
                    }
                }
            }
            gemm_acc(ow, kdim, cout, patches, kdim, kernel, (cout, 1), row, cout);
        },
    );
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

/// Transposed convolution, kernel 2, stride 2, kernel layout (2, 2, cout, cin).
pub fn deconv2d(x: &Tensor, out_channels: usize, kernel: &[f32], bias: &[f32]) -> Result<Tensor, GraphError> {
    let Shape { h, w, c: cin } = x.shape;
    let cout = out_channels;
    check_len("deconv2d", "kernel", kernel.len(), 4 * cout * cin)?;
    check_len("deconv2d", "bias", bias.len(), cout)?;
    let out_shape = Shape::new(2 * h, 2 * w, cout);
    let ow = 2 * w;
    let mut out = vec![0f32; out_shape.elements()];
    // each input row fills two output rows
    out.par_chunks_mut(2 * ow * cout).enumerate().for_each(|(iy, rows)| {
        for px in rows.chunks_exact_mut(cout) {
            px.copy_from_slice(bias);
        }
        let src = &x.data[iy * w * cin..(iy + 1) * w * cin];
        for dy in 0..2 {
            for dx in 0..2 {
                let k = &kernel[(dy * 2 + dx) * cout * cin..(dy * 2 + dx + 1) * cout * cin];
                let dst = &mut rows[(dy * ow + dx) * cout..];
                // B[ci][co] = k[co * cin + ci]
                gemm_acc(w, cin, cout, src, cin, k, (1, cin), dst, 2 * cout);
            }
        }
    });
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

pub fn batchnorm(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    epsilon: f32,
) -> Result<Tensor, GraphError> {
    let c = x.shape.c;
    for (what, v) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("variance", var)] {
        check_len("batchnorm", what, v.len(), c)?;
    }
    let (scale, shift): (Vec<f32>, Vec<f32>) = (0..c)
        .map(|i| {
            let s = gamma[i] / (var[i] + epsilon).sqrt();
            (s, beta[i] - mean[i] * s)
        })
        .unzip();
    let mut out = x.clone();
    out.data.par_chunks_mut(c * 64).for_each(|chunk| {
        for px in chunk.chunks_exact_mut(c) {
            for ((v, s), t) in px.iter_mut().zip(&scale).zip(&shift) {
                *v = *v * s + t;
            }
        }
    });
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data.par_chunks_mut(1 << 14).for_each(|c| {
        for v in c {
            *v = v.max(0.0);
        }
    });
}

/// Max pooling; positions outside the input never win.
pub fn maxpool(x: &Tensor, pool: usize, stride: usize, padding: Padding) -> Result<Tensor, GraphError> {
    let Shape { h, w, c } = x.shape;
    if pool == 0 || stride == 0 || pool > h || pool > w {
        return Err(GraphError::PoolTooLarge {
            layer: "maxpool".into(),
            pool,
            input: x.shape,
        });
    }
    let (oh, ow) = (
        conv_out_len(h, pool, stride, 1, padding).unwrap(),
        conv_out_len(w, pool, stride, 1, padding).unwrap(),
    );
    let (pad_t, pad_l) = match padding {
        Padding::Same => (same_padding(h, pool, stride, 1).0, same_padding(w, pool, stride, 1).0),
        Padding::Valid => (0, 0),
    };
    let shape = Shape::new(oh, ow, c);
    let mut out = vec![f32::NEG_INFINITY; shape.elements()];
    out.par_chunks_mut(ow * c).enumerate().for_each(|(oy, row)| {
        let y0 = (oy * stride) as isize - pad_t as isize;
        for ox in 0..ow {
            let x0 = (ox * stride) as isize - pad_l as isize;
            let dst = &mut row[ox * c..(ox + 1) * c];
            for iy in y0.max(0)..(y0 + pool as isize).min(h as isize) {
                for ix in x0.max(0)..(x0 + pool as isize).min(w as isize) {
                    let s = (iy as usize * w + ix as usize) * c;
                    for (d, &v) in dst.iter_mut().zip(&x.data[s..s + c]) {
                        *d = d.max(v);
                    }
                }
            }
        }
    });
    Ok(Tensor { shape, data: out })
}

pub(crate) fn concat(parts: &[&Tensor], shape: Shape) -> Vec<f32> {
    let mut out = Vec::with_capacity(shape.elements());
    for px in 0..shape.h * shape.w {
        for p in parts {
            let c = p.shape.c;
            out.extend_from_slice(&p.data[px * c..(px + 1) * c]);
        }
    }
    out
}

/// Each position's channel vector scaled to unit length, then by `scale[c]`.
pub fn l2norm(x: &Tensor, scale: &[f32], epsilon: f32) -> Result<Tensor, GraphError> {
    let c = x.shape.c;
    check_len("l2norm", "scale", scale.len(), c)?;
    let mut out = x.clone();
    out.data.par_chunks_mut(c).for_each(|px| {
        let norm = (px.iter().map(|v| v * v).sum::<f32>() + epsilon).sqrt();
        for (v, s) in px.iter_mut().zip(scale) {
            *v = *v / norm * s;
        }
    });
    Ok(out)
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let c = x.shape.c;
    let mut acc = vec![0f64; c];
    for px in x.data.chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += f64::from(v);
        }
    }
    let n = (x.shape.h * x.shape.w) as f64;
    Tensor {
        shape: Shape::new(1, 1, c),
        data: acc.into_iter().map(|a| (a / n) as f32).collect(),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, GraphError> {
    if a.shape != b.shape {
        return Err(GraphError::ShapeMismatch {
            layer: "add".into(),
            expected: a.shape,
            actual: b.shape,
        });
    }
    let mut out = a.clone();
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    Ok(out)
}

pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor, GraphError> {
    let c = x.shape.c;
    if len == 0 || start + len > c {
        return Err(GraphError::ChannelMismatch {
            layer: "slice".into(),
            expected: start + len,
            actual: c,
        });
    }
    let data = x
        .data
        .chunks_exact(c)
        .flat_map(|px| px[start..start + len].iter().copied())
        .collect();
    Ok(Tensor {
        shape: Shape::new(x.shape.h, x.shape.w, len),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor {
            shape,
            data: (0..shape.elements()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Direct 7-loop convolution in f64.
    fn conv_oracle(x: &Tensor, p: &ConvParams, k: &[f32], b: &[f32]) -> Vec<f64> {
        let Shape { h, w, c: cin } = x.shape;
        let (kh, kw) = p.kernel;
        let oh = conv_out_len(h, kh, p.stride, p.dilation, p.padding).unwrap();
        let ow = conv_out_len(w, kw, p.stride, p.dilation, p.padding).unwrap();
        let (pt, pl) = match p.padding {
            Padding::Same => (
                same_padding(h, kh, p.stride, p.dilation).0,
                same_padding(w, kw, p.stride, p.dilation).0,
            ),
            Padding::Valid => (0, 0),
        };
        let cout = p.out_channels;
        let mut out = vec![0f64; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = f64::from(b[co]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * p.stride + ky * p.dilation) as isize - pt as isize;
                            let ix = (ox * p.stride + kx * p.dilation) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += f64::from(x.at(iy as usize, ix as usize, ci))
                                    * f64::from(k[((ky * kw + kx) * cin + ci) * cout + co]);
                            }
                        }
                    }
                    out[(oy * ow + ox) * cout + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases = [
            (Shape::new(9, 7, 3), ConvParams::new(5, 3, 1)),
            (Shape::new(9, 7, 3), ConvParams::new(4, 3, 2)),
            (Shape::new(10, 10, 2), ConvParams::new(3, 2, 2)),
            (Shape::new(6, 8, 4), ConvParams::new(6, 1, 1)),
            (Shape::new(6, 8, 4), ConvParams::new(6, 1, 2)),
            (Shape::new(19, 19, 2), ConvParams::new(3, 3, 1).dilated(6)),
            (Shape::new(8, 9, 3), ConvParams::new(2, 3, 1).valid()),
            (Shape::new(15, 15, 3), ConvParams::new(4, 7, 2)),
        ];
        for (shape, p) in cases {
            let x = random(shape, &mut rng);
            let k: Vec<f32> = (0..p.kernel.0 * p.kernel.1 * shape.c * p.out_channels)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let b: Vec<f32> = (0..p.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = conv2d(&x, &p, &k, &b).unwrap();
            let want = conv_oracle(&x, &p, &k, &b);
            assert_eq!(got.data.len(), want.len());
            for (g, w) in got.data.iter().zip(&want) {
                assert!((f64::from(*g) - w).abs() < 1e-4, "{p:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(Shape::new(5, 4, 3), &mut rng);
        let mut k = vec![0f32; 9];
        for i in 0..3 {
            k[i * 3 + i] = 1.0;
        }
        let y = conv2d(&x, &ConvParams::new(3, 1, 1), &k, &[0.0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let x = Tensor::filled(Shape::new(5, 5, 1), 1.0);
        let y = conv2d(&x, &ConvParams::new(1, 3, 1).valid(), &[1.0; 9], &[0.0]).unwrap();
        assert_eq!(y.shape, Shape::new(3, 3, 1));
        assert!(y.data.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_rejects_bad_kernel_length() {
        let x = Tensor::zeros(Shape::new(4, 4, 2));
        assert!(conv2d(&x, &ConvParams::new(3, 3, 1), &[0.0; 10], &[0.0; 3]).is_err());
    }

    #[test]
    fn deconv_replicates_single_pixel() {
        let x = Tensor::filled(Shape::new(1, 1, 1), 2.5);
        let y = deconv2d(&x, 1, &[1.0; 4], &[0.0]).unwrap();
        assert_eq!(y.shape, Shape::new(2, 2, 1));
        assert_eq!(y.data, vec![2.5; 4]);
    }

    #[test]
    fn deconv_is_adjoint_of_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, a, b) in [(4, 6, 3, 5), (38, 38, 4, 2), (2, 2, 1, 1)] {
            let x = random(Shape::new(h, w, a), &mut rng);
            let y = random(Shape::new(h / 2, w / 2, b), &mut rng);
            // conv (kh,kw,cin=a,cout=b) and deconv (kh,kw,cout=a,cin=b) share storage
            let k: Vec<f32> = (0..4 * a * b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cx = conv2d(&x, &ConvParams::new(b, 2, 2).valid(), &k, &vec![0.0; b]).unwrap();
            let dy = deconv2d(&y, a, &k, &vec![0.0; a]).unwrap();
            let lhs: f64 = cx
                .data
                .iter()
                .zip(&y.data)
                .map(|(p, q)| f64::from(*p) * f64::from(*q))
                .sum();
            let rhs: f64 = x
                .data
                .iter()
                .zip(&dy.data)
                .map(|(p, q)| f64::from(*p) * f64::from(*q))
                .sum();
            assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn batchnorm_cases() {
        let x = Tensor::filled(Shape::new(2, 2, 1), 10.0);
        let y = batchnorm(&x, &[7.0], &[3.0], &[10.0], &[4.0], 1e-3).unwrap();
        assert!(y.data.iter().all(|&v| v == 3.0));
        let id = batchnorm(&x, &[1.0], &[0.0], &[0.0], &[1.0], 0.0).unwrap();
        assert_eq!(id, x);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(Shape::new(3, 5, 6), &mut rng);
        let mut p = || (0..6).map(|_| rng.random_range(0.1..2.0)).collect::<Vec<f32>>();
        let (g, b, m, v) = (p(), p(), p(), p());
        let y = batchnorm(&x, &g, &b, &m, &v, 1e-5).unwrap();
        for (i, (&xi, &yi)) in x.data.iter().zip(&y.data).enumerate() {
            let c = i % 6;
            let want =
                f64::from(g[c]) * (f64::from(xi) - f64::from(m[c])) / (f64::from(v[c]) + 1e-5).sqrt() + f64::from(b[c]);
            assert!((f64::from(yi) - want).abs() < 1e-6, "{yi} vs {want}");
        }
        assert!(batchnorm(&x, &g[..5], &b, &m, &v, 1e-5).is_err());
    }

    #[test]
    fn simple_ops() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data, vec![0.0, 2.0]);
        let g = global_avg_pool(&Tensor::filled(Shape::new(4, 4, 3), 3.0));
        assert_eq!(g.data, vec![3.0; 3]);
        let parts = Tensor::filled(Shape::new(38, 38, 64), 1.0);
        let cat = Tensor::concat(&[&parts, &parts, &parts]).unwrap();
        assert_eq!(cat.shape, Shape::new(38, 38, 192));
        let s = slice_channels(&cat, 64, 64).unwrap();
        assert_eq!(s.shape, Shape::new(38, 38, 64));
        assert!(add(&s, &parts).unwrap().data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn maxpool_same_and_valid() {
        let data: Vec<f32> = (0..25).map(|v| v as f32).collect();
        let x = Tensor::from_vec(Shape::new(5, 5, 1), data).unwrap();
        let v = maxpool(&x, 2, 2, Padding::Valid).unwrap();
        assert_eq!(v.data, vec![6.0, 8.0, 16.0, 18.0]);
        let s = maxpool(&x, 2, 2, Padding::Same).unwrap();
        assert_eq!(s.shape, Shape::new(3, 3, 1));
        assert_eq!(s.data, vec![6.0, 8.0, 9.0, 16.0, 18.0, 19.0, 21.0, 23.0, 24.0]);
        let neg = Tensor::filled(Shape::new(3, 3, 1), -5.0);
        let p = maxpool(&neg, 3, 1, Padding::Same).unwrap();
        assert!(p.data.iter().all(|&v| v == -5.0));
        assert!(maxpool(&x, 6, 1, Padding::Valid).is_err());
    }

    #[test]
    fn l2norm_unit_vectors() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2), vec![3.0, 4.0]).unwrap();
        let y = l2norm(&x, &[20.0, 20.0], 1e-10).unwrap();
        assert!((y.data[0] - 12.0).abs() < 1e-5 && (y.data[1] - 16.0).abs() < 1e-5);
        let z = l2norm(&Tensor::zeros(Shape::new(1, 1, 2)), &[1.0, 1.0], 1e-10).unwrap();
        assert!(z.is_finite());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Shape::new(23, 17, 16), &mut rng);
        let p = ConvParams::new(32, 3, 1);
        let k: Vec<f32> = (0..9 * 16 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1; 32];
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| conv2d(&x, &p, &k, &b).unwrap())
        };
        let one = run(1);
        assert_eq!(one.data, run(4).data);
        assert_eq!(one.data, run(7).data);
    }
}
