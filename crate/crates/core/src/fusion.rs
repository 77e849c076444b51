//! Reference forward passes for mask-feature mixup, the inverted-residual
//! feature extractor and the image/mask feature merger.
//!
//! All convolutions are stride 1 with zero "same" padding. Weights come from
//! the caller (or a weight file); nothing here is trained.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Channel-major `(channels, height, width)` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("feature grid dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} grid with {} values",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature grid"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![T::zero(); channels * height * width])
    }

    pub fn random<R: Rng>(channels: usize, height: usize, width: usize, bound: f64, rng: &mut R) -> Result<Self> {
        let data = (0..channels * height * width)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Self::new(channels, height, width, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "feature grids {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch("concat needs equal spatial size".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            data,
            ..*self
        })
    }

    fn split_channels(&self, at: usize) -> (Self, Self) {
        let cut = at * self.plane();
        (
            Self {
                channels: at,
                data: self.data[..cut].to_vec(),
                ..*self
            },
            Self {
                channels: self.channels - at,
                data: self.data[cut..].to_vec(),
                ..*self
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupParams {
    pub delta: f64,
    pub seed: u64,
}

impl MixupParams {
    pub const DELTA_RANGE: (f64, f64) = (0.2, 0.4);

    pub fn new(delta: f64, seed: u64) -> Result<Self> {
        let (lo, hi) = Self::DELTA_RANGE;
        if !(lo..=hi).contains(&delta) {
            return Err(Error::InvalidArgument(format!(
                "mixup delta {delta} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self { delta, seed })
    }
}

/// Draws from `Beta(a, b)` with Jöhnk's two-uniform acceptance method, which
/// is valid (and efficient) for shape parameters below one. Works in log
/// space so tiny powers cannot underflow; the result is strictly inside
/// `(0, 1)`.
pub fn sample_beta<R: Rng>(rng: &mut R, a: f64, b: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if u == 0.0 || v == 0.0 {
            continue;
        }
        let lx = u.ln() / a;
        let ly = v.ln() / b;
        let hi = lx.max(ly);
        let lsum = hi + ((lx - hi).exp() + (ly - hi).exp()).ln();
        if lsum <= 0.0 {
            let x = (lx - lsum).exp();
            if x > 0.0 && x < 1.0 {
                return x;
            }
        }
    }
}

/// Mixing coefficient drawn from `Beta(delta, delta)`; the same parameters
/// always give the same value.
pub fn sample_lambda(params: &MixupParams) -> f64 {
    sample_beta(&mut rng::stream(params.seed, 0), params.delta, params.delta)
}

/// `lambda * strong + (1 - lambda) * weak`, element-wise.
pub fn mixup<T: Scalar>(strong: &FeatureGrid<T>, weak: &FeatureGrid<T>, lambda: T) -> Result<FeatureGrid<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::InvalidArgument(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let rest = T::one() - lambda;
    strong.zip_with(weak, |s, w| lambda * s + rest * w)
}

fn relu<T: Scalar>(v: T) -> T {
    v.max(T::zero())
}

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF through `erf`.
pub fn gelu<T: Scalar>(v: T) -> T {
    let x = v.to_f64_lossy();
    T::lit(0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
}

/// 1x1 convolution, weights `[out][in]` row-major.
fn conv1x1<T: Scalar>(f: &FeatureGrid<T>, w: &[T], b: &[T], out_c: usize) -> FeatureGrid<T> {
    let plane = f.plane();
    let mut data = vec![T::zero(); out_c * plane];
    for o in 0..out_c {
        let dst = &mut data[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..f.channels {
            let k = w[o * f.channels + i];
            for (d, &s) in dst.iter_mut().zip(f.channel(i)) {
                *d = *d + k * s;
            }
        }
    }
    FeatureGrid {
        channels: out_c,
        data,
        ..*f
    }
}

/// Depthwise 3x3 convolution with channel multiplier `mult`; output channel
/// `c * mult + m` reads input channel `c`. Kernels `[c * mult + m][3][3]`.
fn depthwise3x3<T: Scalar>(f: &FeatureGrid<T>, w: &[T], b: &[T], mult: usize) -> FeatureGrid<T> {
    let (h, wd) = (f.height as isize, f.width as isize);
    let plane = f.plane();
    let out_c = f.channels * mult;
    let mut data = vec![T::zero(); out_c * plane];
    for c in 0..f.channels {
        let src = f.channel(c);
        for m in 0..mult {
            let o = c * mult + m;
            let k = &w[o * 9..o * 9 + 9];
            for y in 0..h {
                for x in 0..wd {
                    let mut acc = b[o];
                    for ky in -1..=1isize {
                        for kx in -1..=1isize {
                            let (sy, sx) = (y + ky, x + kx);
                            if sy < 0 || sx < 0 || sy >= h || sx >= wd {
                                continue;
                            }
                            let tap = k[((ky + 1) * 3 + kx + 1) as usize];
                            acc = acc + tap * src[(sy * wd + sx) as usize];
                        }
                    }
                    data[o * plane + (y * wd + x) as usize] = acc;
                }
            }
        }
    }
    FeatureGrid {
        channels: out_c,
        data,
        ..*f
    }
}

/// A shaped `f32` tensor as stored in a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor shape {shape:?} with {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    fn from_scalars<T: Scalar>(shape: Vec<usize>, v: &[T]) -> Self {
        Self {
            shape,
            data: v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect(),
        }
    }

    fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&x| T::lit(f64::from(x))).collect()
    }
}

const WEIGHT_MAGIC: &[u8; 4] = b"PMW1";

/// Weight file layout (all integers `u32` little-endian, values `f32`
/// little-endian):
///
/// ```text
/// "PMW1" | tensor count | per tensor: rank, dims... | all tensor data in order
/// ```
pub fn write_weights(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_weights(tensors))?;
    f.flush()?;
    Ok(())
}

pub fn encode_weights(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = WEIGHT_MAGIC.to_vec();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, tensors.len());
    for t in tensors {
        u32le(&mut out, t.shape.len());
        for &d in &t.shape {
            u32le(&mut out, d);
        }
    }
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if bytes.get(..4) != Some(WEIGHT_MAGIC.as_slice()) {
        return Err(Error::Parse("not a weight file".into()));
    }
    let read_u32 = |bytes: &[u8], pos: &mut usize| -> Result<usize> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::Parse("weight file truncated".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let mut pos = 4usize;
    let count = read_u32(bytes, &mut pos)?;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = read_u32(bytes, &mut pos)?;
        let shape = (0..rank)
            .map(|_| read_u32(bytes, &mut pos))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(shape);
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = bytes
            .get(pos..pos + 4 * n)
            .ok_or_else(|| Error::Parse("weight file truncated".into()))?;
        pos += 4 * n;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor { shape, data });
    }
    if pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after weight data".into()));
    }
    Ok(tensors)
}

fn expect_shape(t: &Tensor, want: &[usize], name: &str) -> Result<()> {
    if t.shape != want {
        return Err(Error::ShapeMismatch(format!(
            "{name}: expected {want:?}, got {:?}",
            t.shape
        )));
    }
    Ok(())
}

/// Inverted-residual extractor weights: two 1x1 convolutions followed by a
/// 3x3 depthwise convolution, all `C -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeWeights<T> {
    pub channels: usize,
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub dw_w: Vec<T>,
    pub dw_b: Vec<T>,
}

impl<T: Scalar> FeWeights<T> {
    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        Self {
            channels,
            conv1_w: vec![T::zero(); c * c],
            conv1_b: vec![T::zero(); c],
            conv2_w: vec![T::zero(); c * c],
            conv2_b: vec![T::zero(); c],
            dw_w: vec![T::zero(); c * 9],
            dw_b: vec![T::zero(); c],
        }
    }

    pub fn random<R: Rng>(channels: usize, bound: f64, rng: &mut R) -> Self {
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect() };
        let c = channels;
        Self {
            channels,
            conv1_w: draw(c * c),
            conv1_b: draw(c),
            conv2_w: draw(c * c),
            conv2_b: draw(c),
            dw_w: draw(c * 9),
            dw_b: draw(c),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels;
        let checks = [
            ("conv1_w", self.conv1_w.len(), c * c),
            ("conv1_b", self.conv1_b.len(), c),
            ("conv2_w", self.conv2_w.len(), c * c),
            ("conv2_b", self.conv2_b.len(), c),
            ("dw_w", self.dw_w.len(), c * 9),
            ("dw_b", self.dw_b.len(), c),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: expected {want} values, got {got}")));
            }
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let c = self.channels;
        vec![
            Tensor::from_scalars(vec![c, c], &self.conv1_w),
            Tensor::from_scalars(vec![c], &self.conv1_b),
            Tensor::from_scalars(vec![c, c], &self.conv2_w),
            Tensor::from_scalars(vec![c], &self.conv2_b),
            Tensor::from_scalars(vec![c, 3, 3], &self.dw_w),
            Tensor::from_scalars(vec![c], &self.dw_b),
        ]
    }

    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        if t.len() != 6 {
            return Err(Error::ShapeMismatch(format!("extractor needs 6 tensors, got {}", t.len())));
        }
        let c = *t[1].shape.first().unwrap_or(&0);
        expect_shape(&t[0], &[c, c], "conv1_w")?;
        expect_shape(&t[1], &[c], "conv1_b")?;
        expect_shape(&t[2], &[c, c], "conv2_w")?;
        expect_shape(&t[3], &[c], "conv2_b")?;
        expect_shape(&t[4], &[c, 3, 3], "dw_w")?;
        expect_shape(&t[5], &[c], "dw_b")?;
        Ok(Self {
            channels: c,
            conv1_w: t[0].to_scalars(),
            conv1_b: t[1].to_scalars(),
            conv2_w: t[2].to_scalars(),
            conv2_b: t[3].to_scalars(),
            dw_w: t[4].to_scalars(),
            dw_b: t[5].to_scalars(),
        })
    }
}

/// `ReLU(DWConv(ReLU(Conv(Conv(f))))) + f`.
pub fn fe_forward<T: Scalar>(f: &FeatureGrid<T>, w: &FeWeights<T>) -> Result<FeatureGrid<T>> {
    w.validate()?;
    if w.channels != f.channels {
        return Err(Error::ShapeMismatch(format!(
            "extractor weights for {} channels, features have {}",
            w.channels, f.channels
        )));
    }
    let c = f.channels;
    let h = conv1x1(f, &w.conv1_w, &w.conv1_b, c);
    let h = conv1x1(&h, &w.conv2_w, &w.conv2_b, c).map(relu);
    let h = depthwise3x3(&h, &w.dw_w, &w.dw_b, 1).map(relu);
    h.zip_with(f, |a, b| a + b)
}

/// Merger weights for `C` image channels: a depthwise 3x3 expansion of the
/// `2C` concatenation with multiplier 4 (to `8C`), then a 1x1 projection of
/// the gated `4C` half back to `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmWeights<T> {
    pub channels: usize,
    pub expand_w: Vec<T>,
    pub expand_b: Vec<T>,
    pub proj_w: Vec<T>,
    pub proj_b: Vec<T>,
}

impl<T: Scalar> FmWeights<T> {
    pub const EXPANSION: usize = 4;

    pub fn random<R: Rng>(channels: usize, bound: f64, rng: &mut R) -> Self {
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect() };
        let c = channels;
        Self {
            channels,
            expand_w: draw(8 * c * 9),
            expand_b: draw(8 * c),
            proj_w: draw(c * 4 * c),
            proj_b: draw(c),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels;
        let checks = [
            ("expand_w", self.expand_w.len(), 8 * c * 9),
            ("expand_b", self.expand_b.len(), 8 * c),
            ("proj_w", self.proj_w.len(), c * 4 * c),
            ("proj_b", self.proj_b.len(), c),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: expected {want} values, got {got}")));
            }
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let c = self.channels;
        vec![
            Tensor::from_scalars(vec![2 * c, Self::EXPANSION, 3, 3], &self.expand_w),
            Tensor::from_scalars(vec![8 * c], &self.expand_b),
            Tensor::from_scalars(vec![c, 4 * c], &self.proj_w),
            Tensor::from_scalars(vec![c], &self.proj_b),
        ]
    }

    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        if t.len() != 4 {
            return Err(Error::ShapeMismatch(format!("merger needs 4 tensors, got {}", t.len())));
        }
        let c = *t[3].shape.first().unwrap_or(&0);
        expect_shape(&t[0], &[2 * c, Self::EXPANSION, 3, 3], "expand_w")?;
        expect_shape(&t[1], &[8 * c], "expand_b")?;
        expect_shape(&t[2], &[c, 4 * c], "proj_w")?;
        expect_shape(&t[3], &[c], "proj_b")?;
        Ok(Self {
            channels: c,
            expand_w: t[0].to_scalars(),
            expand_b: t[1].to_scalars(),
            proj_w: t[2].to_scalars(),
            proj_b: t[3].to_scalars(),
        })
    }
}

/// Merges image and mask features into a grid shaped like the image
/// features. The expanded tensor is split in two `4C` halves; the first
/// (image-derived) half is gated through GELU and multiplied element-wise
/// with the second before projection.
pub fn fm_forward<T: Scalar>(
    image: &FeatureGrid<T>,
    mask: &FeatureGrid<T>,
    w: &FmWeights<T>,
) -> Result<FeatureGrid<T>> {
    if image.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "image features {:?}, mask features {:?}",
            image.shape(),
            mask.shape()
        )));
    }
    w.validate()?;
    if w.channels != image.channels {
        return Err(Error::ShapeMismatch(format!(
            "merger weights for {} channels, features have {}",
            w.channels, image.channels
        )));
    }
    let c = image.channels;
    let joined = image.concat(mask)?;
    let expanded = depthwise3x3(&joined, &w.expand_w, &w.expand_b, FmWeights::<T>::EXPANSION);
    let (gate, value) = expanded.split_channels(4 * c);
    let mixed = gate.map(gelu).zip_with(&value, |a, b| a * b)?;
    Ok(conv1x1(&mixed, &w.proj_w, &w.proj_b, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixup_examples() {
        let s = FeatureGrid::new(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let w = FeatureGrid::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(mixup(&s, &w, 1.0).unwrap(), s);
        assert_eq!(mixup(&s, &w, 0.0).unwrap(), w);
        assert_eq!(mixup(&s, &w, 0.5).unwrap().data(), &[1.0, 2.0]);
        assert!(mixup(&s, &FeatureGrid::zeros(2, 1, 1).unwrap(), 0.5).is_err());
        assert!(mixup(&s, &w, 1.5).is_err());
    }

    #[test]
    fn lambda_is_deterministic_and_inside() {
        let p = MixupParams::new(0.3, 42).unwrap();
        assert_eq!(sample_lambda(&p), sample_lambda(&p));
        let mut r = rng::stream(9, 3);
        for _ in 0..10_000 {
            let l = sample_beta(&mut r, 0.3, 0.3);
            assert!(l > 0.0 && l < 1.0);
        }
        assert!(MixupParams::new(0.5, 0).is_err());
    }

    #[test]
    fn fe_zero_weights_is_identity() {
        let mut r = rng::stream(1, 0);
        let f = FeatureGrid::<f64>::random(3, 5, 4, 2.0, &mut r).unwrap();
        assert_eq!(fe_forward(&f, &FeWeights::zeros(3)).unwrap(), f);
    }

    #[test]
    fn fe_scalar_trace() {
        let mut w = FeWeights::<f64>::zeros(1);
        w.conv1_w[0] = 1.0;
        w.conv2_w[0] = 1.0;
        w.dw_w.iter_mut().for_each(|k| *k = 1.0);
        for v in [0.5, 3.0] {
            let f = FeatureGrid::new(1, 1, 1, vec![v]).unwrap();
            assert_eq!(fe_forward(&f, &w).unwrap().data(), &[2.0 * v]);
        }
        let f = FeatureGrid::new(1, 1, 1, vec![-2.0]).unwrap();
        assert_eq!(fe_forward(&f, &w).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn fe_rejects_bad_weights() {
        let f = FeatureGrid::<f64>::zeros(2, 3, 3).unwrap();
        assert!(fe_forward(&f, &FeWeights::zeros(3)).is_err());
        let mut w = FeWeights::zeros(2);
        w.dw_w.pop();
        assert!(fe_forward(&f, &w).is_err());
    }

    #[test]
    fn fe_random_output_finite() {
        let mut r = rng::stream(2, 0);
        let f = FeatureGrid::<f32>::random(4, 8, 8, 1.0, &mut r).unwrap();
        let w = FeWeights::<f32>::random(4, 1.0, &mut r);
        let out = fe_forward(&f, &w).unwrap();
        assert_eq!(out.shape(), (4, 8, 8));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fm_scalar_trace() {
        let w = FmWeights::<f64> {
            channels: 1,
            // only the centre tap sees a 1x1 grid
            expand_w: (0..8)
                .flat_map(|o| (0..9).map(move |t| if t == 4 { 0.5 + o as f64 * 0.25 } else { 9.0 }))
                .collect(),
            expand_b: (0..8).map(|o| 0.1 * o as f64).collect(),
            proj_w: vec![1.0, -1.0, 0.5, 2.0],
            proj_b: vec![0.3],
        };
        let (a, b) = (0.7, -1.2);
        let img = FeatureGrid::new(1, 1, 1, vec![a]).unwrap();
        let msk = FeatureGrid::new(1, 1, 1, vec![b]).unwrap();
        let out = fm_forward(&img, &msk, &w).unwrap();

        let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()));
        let mut want = 0.3;
        for m in 0..4 {
            let e = (0.5 + m as f64 * 0.25) * a + 0.1 * m as f64;
            let v = (0.5 + (m + 4) as f64 * 0.25) * b + 0.1 * (m + 4) as f64;
            want += w.proj_w[m] * (e * phi(e)) * v;
        }
        assert!((out.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn fm_zero_projection_gives_zero() {
        let mut r = rng::stream(3, 0);
        let img = FeatureGrid::<f64>::random(2, 4, 5, 1.0, &mut r).unwrap();
        let msk = FeatureGrid::<f64>::random(2, 4, 5, 1.0, &mut r).unwrap();
        let mut w = FmWeights::random(2, 1.0, &mut r);
        w.proj_w.iter_mut().for_each(|v| *v = 0.0);
        w.proj_b.iter_mut().for_each(|v| *v = 0.0);
        let out = fm_forward(&img, &msk, &w).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(fm_forward(&img, &FeatureGrid::zeros(2, 4, 4).unwrap(), &w).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn weight_file_round_trip() {
        let mut r = rng::stream(4, 0);
        let fe = FeWeights::<f32>::random(3, 1.0, &mut r);
        let bytes = encode_weights(&fe.to_tensors());
        assert_eq!(&bytes[..4], b"PMW1");
        let back = FeWeights::<f32>::from_tensors(&decode_weights(&bytes).unwrap()).unwrap();
        assert_eq!(back, fe);
        let fm = FmWeights::<f32>::random(2, 1.0, &mut r);
        let back = FmWeights::<f32>::from_tensors(&decode_weights(&encode_weights(&fm.to_tensors())).unwrap()).unwrap();
        assert_eq!(back, fm);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        assert!(FmWeights::<f32>::from_tensors(&fe.to_tensors()).is_err());
    }
}
