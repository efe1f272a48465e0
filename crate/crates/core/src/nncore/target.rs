//! The target CNN: `conv(5x5) -> ReLU -> maxpool(2x2)` twice, then a dense layer
//! producing one logit per class.
//!
//! Convolutions are valid (no padding) with stride 1; pooling is 2x2 with stride 2 and
//! floors odd sizes. Internally activations are laid out `[channel][batch][h][w]` so
//! that a whole batch goes through each convolution as one im2col GEMM.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cross_entropy_grad, matmul, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const MNIST: ImageShape = ImageShape { channels: 1, height: 28, width: 28 };

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

/// One layer of the target network. Every `Conv` is followed by ReLU and 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize },
    Dense { width: usize },
}

/// Resolved shapes of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGeometry {
    Conv {
        in_c: usize,
        in_h: usize,
        in_w: usize,
        filters: usize,
        kernel: usize,
        out_h: usize,
        out_w: usize,
        pool_h: usize,
        pool_w: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerGeometry {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerGeometry::Conv { in_c, filters, kernel, .. } => vec![filters, in_c, kernel, kernel],
            LayerGeometry::Dense { in_features, out_features } => vec![out_features, in_features],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerGeometry::Conv { filters, .. } => filters,
            LayerGeometry::Dense { out_features, .. } => out_features,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerGeometry::Conv { in_c, kernel, .. } => in_c * kernel * kernel,
            LayerGeometry::Dense { in_features, .. } => in_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetNetSpec {
    pub input: ImageShape,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl TargetNetSpec {
    /// Two 32-filter 5x5 conv layers and a 10-way dense layer over 28x28x1 inputs.
    pub fn mnist() -> Self {
        Self::new(ImageShape::MNIST, [32, 32], 5, 10).expect("built-in spec is valid")
    }

    pub fn new(input: ImageShape, filters: [usize; 2], kernel: usize, classes: usize) -> Result<Self> {
        let spec = Self {
            input,
            layers: vec![
                LayerSpec::Conv { filters: filters[0], kernel },
                LayerSpec::Conv { filters: filters[1], kernel },
                LayerSpec::Dense { width: classes },
            ],
            classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of layers (always 3).
    pub fn n(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().map(|_| ())
    }

    pub fn geometry(&self) -> Result<Vec<LayerGeometry>> {
        if !matches!(
            self.layers.as_slice(),
            [LayerSpec::Conv { .. }, LayerSpec::Conv { .. }, LayerSpec::Dense { .. }]
        ) {
            return Err(Error::mismatch("target net must be conv, conv, dense"));
        }
        if self.input.is_empty() || self.classes < 2 {
            return Err(Error::mismatch("target net needs a non-empty input and >= 2 classes"));
        }
        let (mut c, mut h, mut w) = (self.input.channels, self.input.height, self.input.width);
        let mut out = Vec::with_capacity(3);
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv { filters, kernel } => {
                    if filters == 0 || kernel == 0 || kernel > h || kernel > w {
                        return Err(Error::mismatch(format!("conv {filters}x{kernel} does not fit {h}x{w}")));
                    }
                    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                    if oh < 2 || ow < 2 {
                        return Err(Error::mismatch("conv output too small to pool"));
                    }
                    out.push(LayerGeometry::Conv {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        filters,
                        kernel,
                        out_h: oh,
                        out_w: ow,
                        pool_h: oh / 2,
                        pool_w: ow / 2,
                    });
                    c = filters;
                    h = oh / 2;
                    w = ow / 2;
                }
                LayerSpec::Dense { width } => {
                    if width != self.classes {
                        return Err(Error::mismatch(format!(
                            "dense width {width} != class count {}",
                            self.classes
                        )));
                    }
                    out.push(LayerGeometry::Dense { in_features: c * h * w, out_features: width });
                }
            }
        }
        Ok(out)
    }

    /// Weight+bias count of each layer.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.geometry()
            .map(|g| g.iter().map(LayerGeometry::param_count).collect())
            .unwrap_or_default()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// A full parameter set of the target network.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> TargetWeights<T> {
    pub fn zeros(spec: &TargetNetSpec) -> Result<Self> {
        let layers = spec
            .geometry()?
            .iter()
            .map(|g| LayerParams {
                weight: Tensor::zeros(g.weight_shape()),
                bias: Tensor::zeros(vec![g.bias_len()]),
            })
            .collect();
        Ok(Self { layers })
    }

    /// He-normal weights, zero biases.
    pub fn random<R: Rng + ?Sized>(spec: &TargetNetSpec, rng: &mut R) -> Result<Self> {
        let geo = spec.geometry()?;
        let mut w = Self::zeros(spec)?;
        for (layer, g) in w.layers.iter_mut().zip(&geo) {
            let std = (2.0 / g.fan_in() as f64).sqrt();
            for v in layer.weight.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::of(z * std);
            }
        }
        Ok(w)
    }

    /// Build from one flat vector per layer laid out as `weights ‖ bias`, row-major.
    pub fn from_layer_flats(spec: &TargetNetSpec, flats: &[&[T]]) -> Result<Self> {
        let geo = spec.geometry()?;
        if flats.len() != geo.len() {
            return Err(Error::mismatch(format!("{} layer vectors for {} layers", flats.len(), geo.len())));
        }
        let mut layers = Vec::with_capacity(geo.len());
        for (i, (g, flat)) in geo.iter().zip(flats).enumerate() {
            if flat.len() != g.param_count() {
                return Err(Error::mismatch(format!(
                    "layer {i}: got {} values, need {}",
                    flat.len(),
                    g.param_count()
                )));
            }
            let (w, b) = flat.split_at(g.weight_len());
            layers.push(LayerParams {
                weight: Tensor::new(g.weight_shape(), w.to_vec())?,
                bias: Tensor::new(vec![g.bias_len()], b.to_vec())?,
            });
        }
        Ok(Self { layers })
    }

    /// Layer `i` flattened as `weights ‖ bias`.
    pub fn layer_flat(&self, i: usize) -> Vec<T> {
        let l = &self.layers[i];
        let mut v = Vec::with_capacity(l.weight.len() + l.bias.len());
        v.extend_from_slice(l.weight.data());
        v.extend_from_slice(l.bias.data());
        v
    }

    /// All parameters, layer by layer, each `weights ‖ bias`.
    pub fn flatten(&self) -> Vec<T> {
        (0..self.layers.len()).flat_map(|i| self.layer_flat(i)).collect()
    }

    pub fn element_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn check(&self, spec: &TargetNetSpec) -> Result<()> {
        let geo = spec.geometry()?;
        if geo.len() != self.layers.len() {
            return Err(Error::mismatch("layer count differs from spec"));
        }
        for (i, (g, l)) in geo.iter().zip(&self.layers).enumerate() {
            if l.weight.shape() != g.weight_shape().as_slice() || l.bias.shape() != [g.bias_len()] {
                return Err(Error::mismatch(format!(
                    "layer {i}: weight {:?} bias {:?}, spec wants {:?} [{}]",
                    l.weight.shape(),
                    l.bias.shape(),
                    g.weight_shape(),
                    g.bias_len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn cast<U: Real>(&self) -> TargetWeights<U> {
        TargetWeights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { weight: l.weight.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }
}

struct ConvCache<T> {
    cols: Vec<T>,
    relu_out: Vec<T>,
    argmax: Vec<u32>,
}

/// Intermediate activations of a batched forward pass, enough for both backward passes.
pub struct ActivationCache<T = f32> {
    batch: usize,
    convs: Vec<ConvCache<T>>,
    dense_in: Vec<T>,
    logits: Vec<T>,
}

impl<T: Real> ActivationCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Logits as `[batch][classes]`.
    pub fn logits(&self) -> &[T] {
        &self.logits
    }
}

/// Gradients from [`target_backward`]; each part is present only when requested.
pub struct TargetGrads<T = f32> {
    pub weights: Option<TargetWeights<T>>,
    /// `[batch, channels, height, width]`.
    pub input: Option<Tensor<T>>,
}

fn im2col<T: Real>(input: &[T], c: usize, b: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let ncols = b * oh * ow;
    let mut cols = vec![T::zero(); c * k * k * ncols];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for bi in 0..b {
                    for y in 0..oh {
                        let src = ((ci * b + bi) * h + y + ki) * w + kj;
                        let dst = (bi * oh + y) * ow;
                        row[dst..dst + ow].copy_from_slice(&input[src..src + ow]);
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], out: &mut [T], c: usize, b: usize, h: usize, w: usize, k: usize) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let ncols = b * oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for bi in 0..b {
                    for y in 0..oh {
                        let dst = ((ci * b + bi) * h + y + ki) * w + kj;
                        let src = (bi * oh + y) * ow;
                        for (o, v) in out[dst..dst + ow].iter_mut().zip(&row[src..src + ow]) {
                            *o += *v;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2/2 max-pool over `planes` planes of `h x w`. Ties go to the first element in
/// row-major window order.
fn maxpool2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ph * pw);
    let mut idx = Vec::with_capacity(planes * ph * pw);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..ph {
            for xq in 0..pw {
                let mut best = base + 2 * y * w + 2 * xq;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * w + 2 * xq + dx;
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

fn bchw_to_cbhw<T: Real>(x: &[T], b: usize, c: usize, plane: usize) -> Vec<T> {
    if c == 1 {
        return x.to_vec();
    }
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(ci * b + bi) * plane..][..plane].copy_from_slice(&x[(bi * c + ci) * plane..][..plane]);
        }
    }
    out
}

fn cbhw_to_bchw<T: Real>(x: &[T], b: usize, c: usize, plane: usize) -> Vec<T> {
    if c == 1 {
        return x.to_vec();
    }
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * plane..][..plane].copy_from_slice(&x[(ci * b + bi) * plane..][..plane]);
        }
    }
    out
}

/// Forward a batch of images stored `[batch][channels][h][w]`.
///
/// Returns logits `[batch, classes]` and the activation cache for [`target_backward`].
pub fn target_forward_batch<T: Real>(
    spec: &TargetNetSpec,
    w: &TargetWeights<T>,
    images: &[T],
    batch: usize,
) -> Result<(Tensor<T>, ActivationCache<T>)> {
    let geo = spec.geometry()?;
    w.check(spec)?;
    if batch == 0 || images.len() != batch * spec.input.len() {
        return Err(Error::mismatch(format!(
            "expected {batch} images of {} values, got {} values",
            spec.input.len(),
            images.len()
        )));
    }
    let mut act = bchw_to_cbhw(images, batch, spec.input.channels, spec.input.height * spec.input.width);
    let mut convs = Vec::with_capacity(2);
    let mut dense_in = Vec::new();
    let mut logits = Vec::new();
    for (g, p) in geo.iter().zip(&w.layers) {
        match *g {
            LayerGeometry::Conv { in_c, in_h, in_w, filters, kernel, out_h, out_w, .. } => {
                let cols = im2col(&act, in_c, batch, in_h, in_w, kernel);
                let ncols = batch * out_h * out_w;
                let mut out = vec![T::zero(); filters * ncols];
                matmul(p.weight.data(), false, &cols, false, &mut out, filters, in_c * kernel * kernel, ncols, false);
                for (row, &bias) in out.chunks_exact_mut(ncols).zip(p.bias.data()) {
                    for v in row {
                        *v += bias;
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                }
                let (pooled, argmax) = maxpool2(&out, filters * batch, out_h, out_w);
                convs.push(ConvCache { cols, relu_out: out, argmax });
                act = pooled;
            }
            LayerGeometry::Dense { in_features, out_features } => {
                // [C][B][P] -> [B][C*P]
                let c = match geo[1] {
                    LayerGeometry::Conv { filters, .. } => filters,
                    _ => unreachable!(),
                };
                let plane = in_features / c;
                dense_in = cbhw_to_bchw(&act, batch, c, plane);
                logits = vec![T::zero(); batch * out_features];
                matmul(&dense_in, false, p.weight.data(), true, &mut logits, batch, in_features, out_features, false);
                for row in logits.chunks_exact_mut(out_features) {
                    for (v, &b) in row.iter_mut().zip(p.bias.data()) {
                        *v += b;
                    }
                }
            }
        }
    }
    if !super::all_finite(&logits) {
        return Err(Error::NonFinite("target_forward"));
    }
    let cache = ActivationCache { batch, convs, dense_in, logits: logits.clone() };
    Ok((Tensor::new(vec![batch, spec.classes], logits)?, cache))
}

/// Forward one image of shape `[channels, height, width]`.
pub fn target_forward<T: Real>(
    spec: &TargetNetSpec,
    w: &TargetWeights<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, ActivationCache<T>)> {
    if x.shape() != spec.input.dims().as_slice() {
        return Err(Error::mismatch(format!(
            "input shape {:?}, spec wants {:?}",
            x.shape(),
            spec.input.dims()
        )));
    }
    let (logits, cache) = target_forward_batch(spec, w, x.data(), 1)?;
    Ok((logits.reshape(vec![spec.classes])?, cache))
}

/// Backpropagate `dlogits` (`[batch][classes]`) through a cached forward pass.
///
/// Weight gradients are summed over the batch.
pub fn target_backward<T: Real>(
    spec: &TargetNetSpec,
    w: &TargetWeights<T>,
    cache: &ActivationCache<T>,
    dlogits: &[T],
    want_weights: bool,
    want_input: bool,
) -> Result<TargetGrads<T>> {
    let geo = spec.geometry()?;
    w.check(spec)?;
    let batch = cache.batch;
    if dlogits.len() != batch * spec.classes {
        return Err(Error::mismatch("dlogits length does not match batch x classes"));
    }
    let mut grads = if want_weights { Some(TargetWeights::zeros(spec)?) } else { None };

    let LayerGeometry::Dense { in_features, out_features } = geo[2] else { unreachable!() };
    let dense = &w.layers[2];
    if let Some(g) = grads.as_mut() {
        let gl = &mut g.layers[2];
        matmul(dlogits, true, &cache.dense_in, false, gl.weight.data_mut(), out_features, batch, in_features, false);
        let db = gl.bias.data_mut();
        for row in dlogits.chunks_exact(out_features) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    let mut d_in = vec![T::zero(); batch * in_features];
    matmul(dlogits, false, dense.weight.data(), false, &mut d_in, batch, out_features, in_features, false);
    let c2 = match geo[1] {
        LayerGeometry::Conv { filters, .. } => filters,
        _ => unreachable!(),
    };
    // [B][C*P] -> [C][B][P]
    let mut d_act = bchw_to_cbhw(&d_in, batch, c2, in_features / c2);

    for li in (0..2).rev() {
        let LayerGeometry::Conv { in_c, in_h, in_w, filters, kernel, out_h, out_w, .. } = geo[li] else {
            unreachable!()
        };
        let cc = &cache.convs[li];
        let ncols = batch * out_h * out_w;
        let mut dpre = vec![T::zero(); filters * ncols];
        for (&j, &g) in cc.argmax.iter().zip(&d_act) {
            dpre[j as usize] += g;
        }
        for (d, &o) in dpre.iter_mut().zip(&cc.relu_out) {
            if o <= T::zero() {
                *d = T::zero();
            }
        }
        let ckk = in_c * kernel * kernel;
        if let Some(g) = grads.as_mut() {
            let gl = &mut g.layers[li];
            matmul(&dpre, false, &cc.cols, true, gl.weight.data_mut(), filters, ncols, ckk, false);
            for (b, row) in gl.bias.data_mut().iter_mut().zip(dpre.chunks_exact(ncols)) {
                *b = row.iter().copied().sum();
            }
        }
        if li == 0 && !want_input {
            d_act = Vec::new();
            break;
        }
        let mut dcols = vec![T::zero(); ckk * ncols];
        matmul(w.layers[li].weight.data(), true, &dpre, false, &mut dcols, ckk, filters, ncols, false);
        let mut d_prev = vec![T::zero(); in_c * batch * in_h * in_w];
        col2im(&dcols, &mut d_prev, in_c, batch, in_h, in_w, kernel);
        d_act = d_prev;
    }

    let input = if want_input {
        let shape = spec.input;
        let data = cbhw_to_bchw(&d_act, batch, shape.channels, shape.height * shape.width);
        Some(Tensor::new(vec![batch, shape.channels, shape.height, shape.width], data)?)
    } else {
        None
    };
    Ok(TargetGrads { weights: grads, input })
}

/// `d cross_entropy(f(x), y) / dx` for one image.
pub fn grad_input<T: Real>(spec: &TargetNetSpec, w: &TargetWeights<T>, x: &Tensor<T>, y: usize) -> Result<Tensor<T>> {
    let (logits, cache) = target_forward(spec, w, x)?;
    let dl = cross_entropy_grad(logits.data(), y)?;
    let g = target_backward(spec, w, &cache, &dl, false, true)?;
    g.input.expect("requested").reshape(spec.input.dims())
}

/// `d cross_entropy(f(x), y) / d theta` for one image.
pub fn grad_weights<T: Real>(
    spec: &TargetNetSpec,
    w: &TargetWeights<T>,
    x: &Tensor<T>,
    y: usize,
) -> Result<TargetWeights<T>> {
    let (logits, cache) = target_forward(spec, w, x)?;
    let dl = cross_entropy_grad(logits.data(), y)?;
    Ok(target_backward(spec, w, &cache, &dl, true, false)?.weights.expect("requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{argmax, softmax};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_param_count_is_31594() {
        let spec = TargetNetSpec::mnist();
        // 28 -> conv5 -> 24 -> pool -> 12 -> conv5 -> 8 -> pool -> 4
        assert_eq!(spec.layer_param_counts(), vec![32 * 25 + 32, 32 * 32 * 25 + 32, 10 * 32 * 16 + 10]);
        assert_eq!(spec.layer_param_counts(), vec![832, 25_632, 5_130]);
        assert_eq!(spec.param_count(), 31_594);
        assert_eq!(TargetWeights::<f32>::zeros(&spec).unwrap().element_count(), 31_594);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = TargetNetSpec::mnist();
        let w = TargetWeights::<f32>::zeros(&spec).unwrap();
        let x = Tensor::new(spec.input.dims(), (0..784).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let (logits, _) = target_forward(&spec, &w, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let g = grad_input(&spec, &w, &x, 3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let spec = TargetNetSpec::mnist();
        let w = TargetWeights::<f32>::zeros(&spec).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 27, 28]);
        assert!(matches!(target_forward(&spec, &w, &x), Err(Error::SpecMismatch(_))));
        let small = TargetNetSpec::new(ImageShape { channels: 1, height: 12, width: 12 }, [2, 2], 3, 3).unwrap();
        let wrong = TargetWeights::<f32>::zeros(&small).unwrap();
        let x = Tensor::<f32>::zeros(spec.input.dims());
        assert!(matches!(target_forward(&spec, &wrong, &x), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn bad_label_errors() {
        let spec = TargetNetSpec::mnist();
        let w = TargetWeights::<f32>::zeros(&spec).unwrap();
        let x = Tensor::<f32>::zeros(spec.input.dims());
        assert!(matches!(grad_input(&spec, &w, &x, 10), Err(Error::BadLabel { .. })));
        assert!(matches!(grad_weights(&spec, &w, &x, 11), Err(Error::BadLabel { .. })));
    }

    #[test]
    fn spec_rejects_wrong_dense_width() {
        let mut spec = TargetNetSpec::mnist();
        spec.layers[2] = LayerSpec::Dense { width: 9 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dense_bias_grad_is_softmax_minus_onehot() {
        let spec = TargetNetSpec::mnist();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = TargetWeights::<f64>::random(&spec, &mut rng).unwrap();
        let x = Tensor::new(spec.input.dims(), (0..784).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (logits, _) = target_forward(&spec, &w, &x).unwrap();
        let g = grad_weights(&spec, &w, &x, 6).unwrap();
        let p = softmax(logits.data());
        for (c, (&gb, &pc)) in g.layers[2].bias.data().iter().zip(&p).enumerate() {
            let want = pc - if c == 6 { 1.0 } else { 0.0 };
            assert!((gb - want).abs() < 1e-12);
        }
        assert_eq!(argmax(logits.data()), argmax(&p));
    }

    #[test]
    fn duplicate_sample_doubles_batch_gradient() {
        let spec = TargetNetSpec::new(ImageShape { channels: 1, height: 10, width: 10 }, [3, 4], 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = TargetWeights::<f64>::random(&spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let single = grad_weights(&spec, &w, &Tensor::new(spec.input.dims(), x.clone()).unwrap(), 2).unwrap();
        let mut pair = x.clone();
        pair.extend_from_slice(&x);
        let (logits, cache) = target_forward_batch(&spec, &w, &pair, 2).unwrap();
        let mut dl = cross_entropy_grad(&logits.data()[..4], 2).unwrap();
        dl.extend(cross_entropy_grad(&logits.data()[4..], 2).unwrap());
        let g = target_backward(&spec, &w, &cache, &dl, true, false).unwrap().weights.unwrap();
        for (a, b) in g.flatten().iter().zip(single.flatten()) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn untouched_pixel_has_zero_gradient() {
        // With width 11 and kernel 3: conv1 -> 9 -> pool 4 (rows/cols 8 dropped) -> conv2 ...
        // The last input column only feeds conv1 column 8, which the floor-pool discards.
        let spec = TargetNetSpec::new(ImageShape { channels: 1, height: 11, width: 11 }, [2, 2], 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = TargetWeights::<f64>::random(&spec, &mut rng).unwrap();
        let x = Tensor::new(spec.input.dims(), (0..121).map(|_| rng.random::<f64>()).collect()).unwrap();
        let g = grad_input(&spec, &w, &x, 1).unwrap();
        for row in 0..11 {
            assert_eq!(g.data()[row * 11 + 10], 0.0);
        }
        assert!(g.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = [1.0f32, 1.0, 1.0, 1.0];
        let (out, idx) = maxpool2(&x, 1, 2, 2);
        assert_eq!(out, vec![1.0]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = TargetNetSpec::mnist();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = TargetWeights::<f32>::random(&spec, &mut rng).unwrap();
        let x = Tensor::new(spec.input.dims(), (0..784).map(|_| rng.random::<f32>()).collect()).unwrap();
        let a = target_forward(&spec, &w, &x).unwrap().0;
        let b = target_forward(&spec, &w, &x).unwrap().0;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn multichannel_batch_matches_single() {
        let spec = TargetNetSpec::new(ImageShape { channels: 2, height: 9, width: 8 }, [3, 2], 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = TargetWeights::<f64>::random(&spec, &mut rng).unwrap();
        let xs: Vec<f64> = (0..3 * spec.input.len()).map(|_| rng.random()).collect();
        let (batch, _) = target_forward_batch(&spec, &w, &xs, 3).unwrap();
        for b in 0..3 {
            let x = Tensor::new(spec.input.dims(), xs[b * spec.input.len()..][..spec.input.len()].to_vec()).unwrap();
            let (one, _) = target_forward(&spec, &w, &x).unwrap();
            for (p, q) in one.data().iter().zip(&batch.data()[b * 3..][..3]) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
