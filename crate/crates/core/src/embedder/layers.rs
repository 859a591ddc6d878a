//! Network building blocks operating on plain f64 tensors.
//!
//! Convolutions are valid (no padding), stride 1, and run as im2col plus a
//! matrix product. Pooling is average pooling with stride equal to the
//! kernel; trailing rows/columns that do not fill a window are dropped.

use ndarray::Array2;

use crate::{Error, Result};

/// Activation shapes flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Chw { data: Vec<f64>, c: usize, h: usize, w: usize },
    Flat(Vec<f64>),
}

impl Tensor {
    pub fn zeros_like(t: &Tensor) -> Tensor {
        match t {
            Tensor::Chw { data, c, h, w } => {
                Tensor::Chw { data: vec![0.0; data.len()], c: *c, h: *h, w: *w }
            }
            Tensor::Flat(v) => Tensor::Flat(vec![0.0; v.len()]),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::Chw { data, .. } => data,
            Tensor::Flat(v) => v,
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Chw { data, .. } => data,
            Tensor::Flat(v) => v,
        }
    }
}

/// Logical shape of a tensor, used to validate stacks at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        /// out_ch x (in_ch * kh * kw)
        weight: Array2<f64>,
        bias: Vec<f64>,
    },
    Relu,
    AvgPool2d { kh: usize, kw: usize },
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
        /// out_dim x in_dim
        weight: Array2<f64>,
        bias: Vec<f64>,
    },
}

impl Layer {
    pub fn n_params(&self) -> usize {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Shape a layer produces for a given input shape, or an error when the
    /// combination is impossible (kernel larger than the input, flat input
    /// into a spatial layer, and so on).
    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        let spatial = |what: &str| {
            Error::ShapeMismatch(format!("{what} needs a channel-height-width input"))
        };
        match self {
            Layer::Conv2d { in_ch, out_ch, kh, kw, .. } => match input {
                Shape::Chw(c, h, w) => {
                    if c != *in_ch {
                        return Err(Error::ShapeMismatch(format!(
                            "convolution expects {in_ch} channels, input has {c}"
                        )));
                    }
                    if h < *kh || w < *kw {
                        return Err(Error::ShapeMismatch(format!(
                            "{kh}x{kw} kernel does not fit a {h}x{w} input"
                        )));
                    }
                    Ok(Shape::Chw(*out_ch, h - kh + 1, w - kw + 1))
                }
                Shape::Flat(_) => Err(spatial("convolution")),
            },
            Layer::Relu => Ok(input),
            Layer::AvgPool2d { kh, kw } => match input {
                Shape::Chw(c, h, w) => {
                    let (oh, ow) = (h / kh, w / kw);
                    if oh == 0 || ow == 0 {
                        return Err(Error::ShapeMismatch(format!(
                            "{kh}x{kw} pooling collapses a {h}x{w} input to zero size"
                        )));
                    }
                    Ok(Shape::Chw(c, oh, ow))
                }
                Shape::Flat(_) => Err(spatial("pooling")),
            },
            Layer::Flatten => match input {
                Shape::Chw(c, h, w) => Ok(Shape::Flat(c * h * w)),
                Shape::Flat(n) => Ok(Shape::Flat(n)),
            },
            Layer::Dense { in_dim, out_dim, .. } => match input {
                Shape::Flat(n) if n == *in_dim => Ok(Shape::Flat(*out_dim)),
                Shape::Flat(n) => Err(Error::ShapeMismatch(format!(
                    "dense layer expects {in_dim} inputs, got {n}"
                ))),
                Shape::Chw(..) => {
                    Err(Error::ShapeMismatch("dense layer needs a flat input".into()))
                }
            },
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d { out_ch, kh, kw, weight, bias, .. } => {
                let Tensor::Chw { data, c, h, w } = x else {
                    return Err(Error::ShapeMismatch("convolution on a flat tensor".into()));
                };
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let k = im2col(data, *c, *h, *w, *kh, *kw);
                let mut out = weight.dot(&k);
                for (mut row, b) in out.rows_mut().into_iter().zip(bias) {
                    row += *b;
                }
                let (raw, _) = out.into_raw_vec_and_offset();
                Ok(Tensor::Chw { data: raw, c: *out_ch, h: oh, w: ow })
            }
            Layer::Relu => {
                let mut y = x.clone();
                for v in y.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                Ok(y)
            }
            Layer::AvgPool2d { kh, kw } => {
                let Tensor::Chw { data, c, h, w } = x else {
                    return Err(Error::ShapeMismatch("pooling on a flat tensor".into()));
                };
                let (oh, ow) = (h / kh, w / kw);
                let inv = 1.0 / (kh * kw) as f64;
                let mut out = vec![0.0; c * oh * ow];
                for ci in 0..*c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..*kh {
                                let base = ci * h * w + (oy * kh + ky) * w + ox * kw;
                                for kx in 0..*kw {
                                    acc += data[base + kx];
                                }
                            }
                            out[ci * oh * ow + oy * ow + ox] = acc * inv;
                        }
                    }
                }
                Ok(Tensor::Chw { data: out, c: *c, h: oh, w: ow })
            }
            Layer::Flatten => Ok(Tensor::Flat(x.data().to_vec())),
            Layer::Dense { out_dim, weight, bias, .. } => {
                let Tensor::Flat(v) = x else {
                    return Err(Error::ShapeMismatch("dense layer on a spatial tensor".into()));
                };
                let mut y = bias.clone();
                for o in 0..*out_dim {
                    let row = weight.row(o);
                    let mut acc = 0.0;
                    for (wv, xv) in row.iter().zip(v) {
                        acc += wv * xv;
                    }
                    y[o] += acc;
                }
                Ok(Tensor::Flat(y))
            }
        }
    }

    /// Propagate `dy` back through the layer given the input `x` it saw in
    /// the forward pass. Parameter gradients accumulate into `dparams`
    /// (this layer's slice: weights row-major, then biases).
    pub fn backward(&self, x: &Tensor, dy: &Tensor, dparams: &mut [f64]) -> Result<Tensor> {
        match self {
            Layer::Conv2d { in_ch, out_ch, kh, kw, weight, .. } => {
                let Tensor::Chw { data, c, h, w } = x else {
                    return Err(Error::ShapeMismatch("convolution on a flat tensor".into()));
                };
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let k = im2col(data, *c, *h, *w, *kh, *kw);
                let dy_mat =
                    Array2::from_shape_vec((*out_ch, oh * ow), dy.data().to_vec())
                        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                let dw = dy_mat.dot(&k.t());
                let wlen = weight.len();
                for (g, d) in dparams[..wlen].iter_mut().zip(dw.iter()) {
                    *g += d;
                }
                for (o, g) in dparams[wlen..].iter_mut().enumerate() {
                    *g += dy_mat.row(o).sum();
                }
                let dk = weight.t().dot(&dy_mat);
                let dx = col2im(&dk, *in_ch, *h, *w, *kh, *kw);
                Ok(Tensor::Chw { data: dx, c: *in_ch, h: *h, w: *w })
            }
            Layer::Relu => {
                let mut dx = dy.clone();
                for (g, v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if *v <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok(dx)
            }
            Layer::AvgPool2d { kh, kw } => {
                let Tensor::Chw { c, h, w, .. } = x else {
                    return Err(Error::ShapeMismatch("pooling on a flat tensor".into()));
                };
                let (oh, ow) = (h / kh, w / kw);
                let inv = 1.0 / (kh * kw) as f64;
                let dyd = dy.data();
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..*c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dyd[ci * oh * ow + oy * ow + ox] * inv;
                            for ky in 0..*kh {
                                let base = ci * h * w + (oy * kh + ky) * w + ox * kw;
                                for kx in 0..*kw {
                                    dx[base + kx] += g;
                                }
                            }
                        }
                    }
                }
                Ok(Tensor::Chw { data: dx, c: *c, h: *h, w: *w })
            }
            Layer::Flatten => match x {
                Tensor::Chw { c, h, w, .. } => {
                    Ok(Tensor::Chw { data: dy.data().to_vec(), c: *c, h: *h, w: *w })
                }
                Tensor::Flat(_) => Ok(Tensor::Flat(dy.data().to_vec())),
            },
            Layer::Dense { in_dim, out_dim, weight, .. } => {
                let Tensor::Flat(v) = x else {
                    return Err(Error::ShapeMismatch("dense layer on a spatial tensor".into()));
                };
                let dyd = dy.data();
                let wlen = weight.len();
                for o in 0..*out_dim {
                    let g = dyd[o];
                    let row = &mut dparams[o * in_dim..(o + 1) * in_dim];
                    for (slot, xv) in row.iter_mut().zip(v) {
                        *slot += g * xv;
                    }
                }
                for (o, slot) in dparams[wlen..].iter_mut().enumerate() {
                    *slot += dyd[o];
                }
                let mut dx = vec![0.0; *in_dim];
                for o in 0..*out_dim {
                    let g = dyd[o];
                    for (slot, wv) in dx.iter_mut().zip(weight.row(o)) {
                        *slot += g * wv;
                    }
                }
                Ok(Tensor::Flat(dx))
            }
        }
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                out.extend(weight.iter());
                out.extend_from_slice(bias);
            }
            _ => {}
        }
    }

    pub fn load_params(&mut self, src: &[f64]) {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                let wlen = weight.len();
                for (slot, v) in weight.iter_mut().zip(&src[..wlen]) {
                    *slot = *v;
                }
                bias.copy_from_slice(&src[wlen..]);
            }
            _ => {}
        }
    }
}

/// Patch matrix for a valid convolution: row `ci*kh*kw + ky*kw + kx`,
/// column `oy*ow + ox` holds input[ci][oy+ky][ox+kx].
fn im2col(data: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Array2<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut k = Array2::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = ci * kh * kw + ky * kw + kx;
                let mut row = k.row_mut(r);
                for oy in 0..oh {
                    let src = ci * h * w + (oy + ky) * w + kx;
                    for ox in 0..ow {
                        row[oy * ow + ox] = data[src + ox];
                    }
                }
            }
        }
    }
    k
}

/// Scatter-add the patch-matrix gradient back onto the input grid.
fn col2im(dk: &Array2<f64>, c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = ci * kh * kw + ky * kw + kx;
                let row = dk.row(r);
                for oy in 0..oh {
                    let dst = ci * h * w + (oy + ky) * w + kx;
                    for ox in 0..ow {
                        dx[dst + ox] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(in_ch: usize, out_ch: usize, k: usize, fill: impl Fn(usize) -> f64) -> Layer {
        let n = out_ch * in_ch * k * k;
        let weight =
            Array2::from_shape_vec((out_ch, in_ch * k * k), (0..n).map(fill).collect()).unwrap();
        Layer::Conv2d { in_ch, out_ch, kh: k, kw: k, weight, bias: vec![0.0; out_ch] }
    }

    #[test]
    fn conv_matches_direct_cross_correlation() {
        let layer = conv(2, 3, 3, |i| (i as f64 * 0.13).sin());
        let (c, h, w) = (2, 5, 6);
        let data: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.29).cos()).collect();
        let x = Tensor::Chw { data: data.clone(), c, h, w };
        let y = layer.forward(&x).unwrap();
        let Tensor::Chw { data: yd, c: oc, h: oh, w: ow } = &y else { panic!() };
        assert_eq!((*oc, *oh, *ow), (3, 3, 4));
        let Layer::Conv2d { weight, .. } = &layer else { panic!() };
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..4 {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += weight[(o, ci * 9 + ky * 3 + kx)]
                                    * data[ci * h * w + (oy + ky) * w + (ox + kx)];
                            }
                        }
                    }
                    let got = yd[o * 12 + oy * 4 + ox];
                    assert!((got - acc).abs() < 1e-12, "mismatch at {o},{oy},{ox}");
                }
            }
        }
    }

    #[test]
    fn avg_pool_drops_trailing_remainder() {
        // 1x5x5 pooled by 2 -> 2x2 outputs; row 4 and column 4 are ignored.
        let data: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let x = Tensor::Chw { data, c: 1, h: 5, w: 5 };
        let layer = Layer::AvgPool2d { kh: 2, kw: 2 };
        let y = layer.forward(&x).unwrap();
        let Tensor::Chw { data: yd, c, h, w } = y else { panic!() };
        assert_eq!((c, h, w), (1, 2, 2));
        assert_eq!(yd, vec![3.0, 5.0, 13.0, 15.0]);

        // Backward spreads gradients only over the pooled cells.
        let dy = Tensor::Chw { data: vec![4.0, 8.0, 12.0, 16.0], c: 1, h: 2, w: 2 };
        let x2 = Tensor::Chw { data: vec![0.0; 25], c: 1, h: 5, w: 5 };
        let dx = layer.backward(&x2, &dy, &mut []).unwrap();
        let Tensor::Chw { data: dxd, .. } = dx else { panic!() };
        assert_eq!(dxd[0], 1.0);
        assert_eq!(dxd[24], 0.0);
        assert_eq!(dxd[4], 0.0);
        let total: f64 = dxd.iter().sum();
        assert_eq!(total, 40.0);
    }

    #[test]
    fn shape_validation_catches_impossible_stacks() {
        let layer = conv(1, 2, 3, |_| 0.0);
        assert!(layer.out_shape(Shape::Chw(1, 2, 2)).is_err());
        assert!(layer.out_shape(Shape::Chw(2, 10, 10)).is_err());
        assert!(layer.out_shape(Shape::Flat(10)).is_err());
        assert_eq!(layer.out_shape(Shape::Chw(1, 10, 10)).unwrap(), Shape::Chw(2, 8, 8));
        let pool = Layer::AvgPool2d { kh: 4, kw: 4 };
        assert!(pool.out_shape(Shape::Chw(1, 3, 8)).is_err());
        assert_eq!(pool.out_shape(Shape::Chw(1, 8, 9)).unwrap(), Shape::Chw(1, 2, 2));
    }

    #[test]
    fn params_round_trip_through_flat_slices() {
        let mut layer = conv(2, 3, 3, |i| i as f64);
        let mut flat = Vec::new();
        layer.append_params(&mut flat);
        assert_eq!(flat.len(), layer.n_params());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        layer.load_params(&doubled);
        let mut back = Vec::new();
        layer.append_params(&mut back);
        assert_eq!(back, doubled);
    }
}
