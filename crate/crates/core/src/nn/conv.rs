//! Standard and depthwise-separable 2-D convolution (cross-correlation, zero
//! padding) lowered to im2col + GEMM per image.

use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Stride and zero padding shared by every convolution in this module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Output extent of a convolution along one axis, `None` when it would be < 1.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    sy: usize,
    sx: usize,
    py: usize,
    px: usize,
    oh: usize,
    ow: usize,
}

impl Dims {
    fn resolve(op: &'static str, x: &[usize], w: &[usize], geom: Conv2dGeometry) -> Result<Self> {
        let (&[_, c, h, wd], &[o, wc, kh, kw]) = (x, w) else {
            return Err(TensorError::Shape {
                op,
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        };
        if c != wc {
            return Err(TensorError::Contract(format!(
                "{op}: input has {c} channels but the kernel expects {wc} (input {x:?}, kernel {w:?})"
            )));
        }
        let (sy, sx) = geom.stride;
        let (py, px) = geom.padding;
        let (Some(oh), Some(ow)) = (output_extent(h, kh, sy, py), output_extent(wd, kw, sx, px)) else {
            return Err(TensorError::Contract(format!(
                "{op}: output would be empty for input {x:?}, kernel {kh}x{kw}, stride {:?}, padding {:?}",
                geom.stride, geom.padding
            )));
        };
        Ok(Self {
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            sy,
            sx,
            py,
            px,
            oh,
            ow,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.o * self.pixels()
    }

    fn single_channel(&self) -> Self {
        Self { c: 1, o: 1, ..*self }
    }
}

fn im2col<T: Scalar>(x: &[T], d: &Dims, cols: &mut [T]) {
    let p = d.pixels();
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut cols[((c * d.kh + ky) * d.kw + kx) * p..][..p];
                for oy in 0..d.oh {
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    let iy = (oy * d.sy + ky) as isize - d.py as isize;
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.sx + kx) as isize - d.px as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], d: &Dims, dx: &mut [T]) {
    let p = d.pixels();
    for c in 0..d.c {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &cols[((c * d.kh + ky) * d.kw + kx) * p..][..p];
                for oy in 0..d.oh {
                    let iy = (oy * d.sy + ky) as isize - d.py as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, &g) in row[oy * d.ow..(oy + 1) * d.ow].iter().enumerate() {
                        let ix = (ox * d.sx + kx) as isize - d.px as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

/// One image: `out[o×P] = weight[o×CKK] · cols[CKK×P]`.
fn forward_image<T: Scalar>(x: &[T], weight: &[T], d: &Dims, cols: &mut [T], out: &mut [T]) {
    im2col(x, d, cols);
    let (k, p) = (d.patch(), d.pixels());
    T::gemm(
        d.o,
        k,
        p,
        T::one(),
        (weight, k as isize, 1),
        (cols, p as isize, 1),
        T::zero(),
        (out, p as isize, 1),
    );
}

/// Accumulates `dweight += dy·colsᵀ` and, when `dx` is given, `dx += col2im(weightᵀ·dy)`.
fn backward_image<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &Dims,
    cols: &mut [T],
    dweight: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let (k, p) = (d.patch(), d.pixels());
    if let Some(dw) = dweight {
        im2col(x, d, cols);
        T::gemm(
            d.o,
            p,
            k,
            T::one(),
            (dy, p as isize, 1),
            (cols, 1, p as isize),
            T::one(),
            (dw, k as isize, 1),
        );
    }
    if let Some(dx) = dx {
        T::gemm(
            k,
            d.o,
            p,
            T::one(),
            (weight, 1, k as isize),
            (dy, p as isize, 1),
            T::zero(),
            (cols, p as isize, 1),
        );
        col2im_add(cols, d, dx);
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], pixels: usize) {
    for (plane, &b) in out.chunks_mut(pixels).zip(bias.iter().cycle()) {
        for v in plane {
            *v = *v + b;
        }
    }
}

fn bias_grad<T: Scalar>(grad: &[T], channels: usize, pixels: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for (i, plane) in grad.chunks(pixels).enumerate() {
        let s = plane.iter().fold(T::zero(), |acc, &g| acc + g);
        db[i % channels] = db[i % channels] + s;
    }
    db
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(TensorError::Shape {
            op,
            lhs: vec![channels],
            rhs: b.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

struct Conv2dRule {
    geom: Conv2dGeometry,
}

impl<T: Scalar> Backward<T> for Conv2dRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let d = Dims::resolve("conv2d", x.shape(), w.shape(), self.geom)?;
        let n = x.shape()[0];
        let mut cols = vec![T::zero(); d.patch() * d.pixels()];
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        for i in 0..n {
            backward_image(
                &x.data()[i * d.in_len()..(i + 1) * d.in_len()],
                w.data(),
                &grad.data()[i * d.out_len()..(i + 1) * d.out_len()],
                &d,
                &mut cols,
                dw.as_deref_mut(),
                dx.as_mut().map(|dx| &mut dx[i * d.in_len()..(i + 1) * d.in_len()]),
            );
        }
        let mut out = vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(w.shape(), v)).transpose()?,
        ];
        if inputs.len() > 2 {
            out.push(
                needs[2]
                    .then(|| Tensor::new(&[d.o], bias_grad(grad.data(), d.o, d.pixels())))
                    .transpose()?,
            );
        }
        Ok(out)
    }
}

fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let d = Dims::resolve("conv2d", x.shape(), w.shape(), geom)?;
    check_bias("conv2d bias", bias, d.o)?;
    let n = x.shape()[0];
    let mut out = vec![T::zero(); n * d.out_len()];
    let mut cols = vec![T::zero(); d.patch() * d.pixels()];
    for i in 0..n {
        forward_image(
            &x.data()[i * d.in_len()..(i + 1) * d.in_len()],
            w.data(),
            &d,
            &mut cols,
            &mut out[i * d.out_len()..(i + 1) * d.out_len()],
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), d.pixels());
    }
    Tensor::new(&[n, d.o, d.oh, d.ow], out)
}

/// `x [N×C×H×W]` cross-correlated with `weight [O×C×kh×kw]`, plus an optional
/// per-output-channel bias.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    geom: Conv2dGeometry,
) -> Result<Var> {
    let value = conv2d_forward(tape.value(x), tape.value(weight), bias.map(|b| tape.value(b)), geom)?;
    let rule = Conv2dRule { geom };
    Ok(match bias {
        Some(b) => tape.record(value, &[x, weight, b], rule),
        None => tape.record(value, &[x, weight], rule),
    })
}

/// Depthwise stage: each channel convolved with its own `[kh×kw]` filter.
struct DepthwiseRule {
    geom: Conv2dGeometry,
}

fn depthwise_dims(x: &[usize], w: &[usize], geom: Conv2dGeometry) -> Result<Dims> {
    let &[c, kh, kw] = w else {
        return Err(TensorError::Shape {
            op: "depthwise",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    };
    Dims::resolve("depthwise", x, &[c, c, kh, kw], geom)
}

impl<T: Scalar> Backward<T> for DepthwiseRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let d = depthwise_dims(x.shape(), w.shape(), self.geom)?;
        let one = d.single_channel();
        let (n, plane_in, plane_out, k) = (x.shape()[0], d.h * d.w, d.pixels(), d.kh * d.kw);
        let mut cols = vec![T::zero(); k * plane_out];
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        for i in 0..n {
            for c in 0..d.c {
                let plane = i * d.c + c;
                backward_image(
                    &x.data()[plane * plane_in..(plane + 1) * plane_in],
                    &w.data()[c * k..(c + 1) * k],
                    &grad.data()[plane * plane_out..(plane + 1) * plane_out],
                    &one,
                    &mut cols,
                    dw.as_mut().map(|dw| &mut dw[c * k..(c + 1) * k]),
                    dx.as_mut().map(|dx| &mut dx[plane * plane_in..(plane + 1) * plane_in]),
                );
            }
        }
        Ok(vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(w.shape(), v)).transpose()?,
        ])
    }
}

/// Depthwise convolution with channel multiplier 1, `weight [C×kh×kw]`.
///
/// Each channel goes through the same per-image kernel as a single-channel
/// [`conv2d`], so the result is bit-identical to convolving channels one at a
/// time.
pub fn depthwise_conv2d<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, geom: Conv2dGeometry) -> Result<Var> {
    let (xv, wv) = (tape.value(x), tape.value(weight));
    let d = depthwise_dims(xv.shape(), wv.shape(), geom)?;
    let one = d.single_channel();
    let (n, plane_in, plane_out, k) = (xv.shape()[0], d.h * d.w, d.pixels(), d.kh * d.kw);
    let mut out = vec![T::zero(); n * d.c * plane_out];
    let mut cols = vec![T::zero(); k * plane_out];
    for i in 0..n {
        for c in 0..d.c {
            let plane = i * d.c + c;
            forward_image(
                &xv.data()[plane * plane_in..(plane + 1) * plane_in],
                &wv.data()[c * k..(c + 1) * k],
                &one,
                &mut cols,
                &mut out[plane * plane_out..(plane + 1) * plane_out],
            );
        }
    }
    let value = Tensor::new(&[n, d.c, d.oh, d.ow], out)?;
    Ok(tape.record(value, &[x, weight], DepthwiseRule { geom }))
}

fn stage_error(stage: &str, err: TensorError) -> TensorError {
    TensorError::Contract(format!("{stage} stage: {err}"))
}

/// Depthwise spatial filtering (geometry applied here) followed by a 1×1
/// pointwise convolution with optional bias.
pub fn depthwise_separable_conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    depthwise: Var,
    pointwise: Var,
    bias: Option<Var>,
    geom: Conv2dGeometry,
) -> Result<Var> {
    let pw = tape.shape(pointwise);
    if pw.len() != 4 || pw[2] != 1 || pw[3] != 1 {
        return Err(stage_error(
            "pointwise",
            TensorError::Contract(format!("kernel must be [O×C×1×1], got {pw:?}")),
        ));
    }
    let mid = depthwise_conv2d(tape, x, depthwise, geom).map_err(|e| stage_error("depthwise", e))?;
    conv2d(tape, mid, pointwise, bias, Conv2dGeometry::default()).map_err(|e| stage_error("pointwise", e))
}

/// Tensor-valued parameters of a standard convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: Conv2dGeometry,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weights, self.bias.as_ref(), self.geometry)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseSeparableParams<T: Scalar> {
    pub depthwise: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: Conv2dGeometry,
}

impl<T: Scalar> DepthwiseSeparableParams<T> {
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let dw = tape.constant(self.depthwise.clone());
        let pw = tape.constant(self.pointwise.clone());
        let b = self.bias.clone().map(|b| tape.constant(b));
        let out = depthwise_separable_conv2d(&mut tape, xv, dw, pw, b, self.geometry)?;
        Ok(tape.value(out).clone())
    }

    pub fn parameter_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Parameters of a biased dense convolution, `O·C·k² + O`.
pub fn dense_conv_parameter_count(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
    out_ch * in_ch * kernel * kernel + out_ch
}

/// Parameters of a biased depthwise-separable convolution, `C·k² + C·O + O`.
pub fn separable_conv_parameter_count(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
    in_ch * kernel * kernel + in_ch * out_ch + out_ch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn one_by_one_scalar_case() {
        let p = Conv2dParams {
            weights: Tensor::<f32>::full(&[1, 1, 1, 1], 3.0),
            bias: Some(Tensor::full(&[1], 0.5)),
            geometry: Conv2dGeometry::default(),
        };
        let out = p.apply(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(out.data(), &[6.5]);
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f32> = random(&mut rng, &[2, 1, 5, 6]);
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let p = Conv2dParams {
            weights: Tensor::new(&[1, 1, 3, 3], w).unwrap(),
            bias: None,
            geometry: Conv2dGeometry::new(1, 1),
        };
        assert_eq!(p.apply(&x).unwrap(), x);
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let p = Conv2dParams {
            weights: Tensor::<f32>::zeros(&[2, 3, 3, 3]),
            bias: None,
            geometry: Conv2dGeometry::default(),
        };
        assert!(p.apply(&Tensor::zeros(&[1, 2, 5, 5])).is_err());
        assert!(p.apply(&Tensor::zeros(&[1, 3, 2, 2])).is_err());
        let bad_bias = Conv2dParams {
            bias: Some(Tensor::zeros(&[3])),
            ..p
        };
        assert!(bad_bias.apply(&Tensor::zeros(&[1, 3, 5, 5])).is_err());
    }

    #[test]
    fn separable_errors_name_the_stage() {
        let p = DepthwiseSeparableParams {
            depthwise: Tensor::<f32>::zeros(&[3, 3, 3]),
            pointwise: Tensor::zeros(&[4, 2, 1, 1]),
            bias: None,
            geometry: Conv2dGeometry::default(),
        };
        let msg = p.apply(&Tensor::zeros(&[1, 3, 5, 5])).unwrap_err().to_string();
        assert!(msg.contains("pointwise"), "{msg}");
        let msg = p.apply(&Tensor::zeros(&[1, 2, 5, 5])).unwrap_err().to_string();
        assert!(msg.contains("depthwise"), "{msg}");
    }

    #[test]
    fn separable_identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f32> = random(&mut rng, &[1, 3, 6, 6]);
        let depthwise = Tensor::from_fn(&[3, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
        let p = DepthwiseSeparableParams {
            depthwise,
            pointwise: Tensor::eye(3).reshape(&[3, 3, 1, 1]).unwrap(),
            bias: None,
            geometry: Conv2dGeometry::new(1, 1),
        };
        assert_eq!(p.apply(&x).unwrap(), x);
    }

    #[test]
    fn single_channel_pointwise_is_a_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor<f32> = random(&mut rng, &[2, 1, 7, 7]);
        let depthwise: Tensor<f32> = random(&mut rng, &[1, 3, 3]);
        let w = 0.75f32;
        let p = DepthwiseSeparableParams {
            depthwise: depthwise.clone(),
            pointwise: Tensor::full(&[1, 1, 1, 1], w),
            bias: None,
            geometry: Conv2dGeometry::new(2, 1),
        };
        let dw_only = Conv2dParams {
            weights: depthwise.reshape(&[1, 1, 3, 3]).unwrap(),
            bias: None,
            geometry: Conv2dGeometry::new(2, 1),
        }
        .apply(&x)
        .unwrap();
        let out = p.apply(&x).unwrap();
        for (a, b) in out.data().iter().zip(dw_only.data()) {
            assert_eq!(*a, w * b);
        }
    }

    #[test]
    fn separable_has_fewer_parameters_than_dense() {
        for c in 1..8 {
            for o in 2..8 {
                for k in 2..6 {
                    assert!(separable_conv_parameter_count(c, o, k) < dense_conv_parameter_count(c, o, k));
                }
            }
        }
        let p = DepthwiseSeparableParams {
            depthwise: Tensor::<f32>::zeros(&[3, 3, 3]),
            pointwise: Tensor::zeros(&[4, 3, 1, 1]),
            bias: Some(Tensor::zeros(&[4])),
            geometry: Conv2dGeometry::default(),
        };
        assert_eq!(p.parameter_count(), separable_conv_parameter_count(3, 4, 3));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geom = Conv2dGeometry {
                stride: (1 + seed as usize % 2, 1),
                padding: (1, seed as usize % 2),
            };
            let params = vec![
                ("x".to_string(), random::<f64>(&mut rng, &[2, 2, 5, 4])),
                ("w".to_string(), random(&mut rng, &[3, 2, 3, 2])),
                ("b".to_string(), random(&mut rng, &[3])),
                ("dw".to_string(), random(&mut rng, &[2, 3, 2])),
                ("pw".to_string(), random(&mut rng, &[3, 2, 1, 1])),
            ];
            let report = grad_check(
                |tape, p| {
                    let a = conv2d(tape, p[0], p[1], Some(p[2]), geom)?;
                    let s = depthwise_separable_conv2d(tape, p[0], p[3], p[4], Some(p[2]), geom)?;
                    let a2 = crate::tensor::ops::mul(tape, a, a)?;
                    let s2 = crate::tensor::ops::mul(tape, s, a)?;
                    let t = crate::tensor::ops::add(tape, a2, s2)?;
                    Ok(crate::tensor::ops::sum(tape, t))
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}
