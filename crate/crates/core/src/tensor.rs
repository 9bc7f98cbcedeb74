//! Validated per-pixel tensors and their binary file format.
//!
//! All files are little-endian: a 4-byte magic, `u32` version (1), the
//! dimensions as `u32`, then the payload in row-major pixel order with the
//! channel index varying fastest.
//!
//! | type         | magic  | dims          | payload           |
//! |--------------|--------|---------------|-------------------|
//! | [`SoftmaxMap`] | `SOFT` | H, W, q     | H·W·q `f32`       |
//! | [`LabelMap`]   | `LABL` | H, W, q     | H·W `i32`         |
//! | [`HeatMap`]    | `HEAT` | H, W        | H·W `f32`         |
//! | [`FeatureMap`] | `FEAT` | H, W, d     | H·W·d `f32`       |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Lower clamp applied to probabilities at construction.
pub const PROB_FLOOR: f32 = 1e-12;

/// Allowed deviation of a pixel's channel sum from one.
pub const NORMALIZATION_TOL: f64 = 1e-4;

/// Label marking pixels excluded from every evaluation.
pub const IGNORE_LABEL: i32 = -1;

/// Per-pixel class probabilities, `values[(h * width + w) * q + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxMap {
    height: usize,
    width: usize,
    num_classes: usize,
    values: Vec<f32>,
}

impl SoftmaxMap {
    /// Validates and clamps `values` into `[PROB_FLOOR, 1]`.
    pub fn new(height: usize, width: usize, num_classes: usize, mut values: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "softmax map needs at least 2 classes, got {num_classes}"
            )));
        }
        let expected = height * width * num_classes;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{num_classes} softmax map needs {expected} values, got {}",
                values.len()
            )));
        }
        for (pixel, row) in values.chunks_exact_mut(num_classes).enumerate() {
            let mut sum = 0.0f64;
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(pixel * num_classes + j));
                }
                if *v < 0.0 || *v > 1.0 + NORMALIZATION_TOL as f32 {
                    return Err(Error::Format(format!(
                        "probability {v} out of range at pixel {pixel}"
                    )));
                }
                sum += *v as f64;
            }
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Normalization { pixel, sum });
            }
            for v in row.iter_mut() {
                *v = v.clamp(PROB_FLOOR, 1.0);
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Probability vector at flat pixel index `h * width + w`.
    pub fn pixel(&self, index: usize) -> &[f32] {
        let q = self.num_classes;
        &self.values[index * q..(index + 1) * q]
    }

    pub fn at(&self, h: usize, w: usize) -> &[f32] {
        self.pixel(h * self.width + w)
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.num_classes)
    }
}

/// Ground truth: `0..q` in-distribution classes, `q` OoD, `-1` ignore.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<i32>) -> Result<Self> {
        check_dims(height, width)?;
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let ood = num_classes as i32;
        if let Some((pixel, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l < IGNORE_LABEL || l > ood)
        {
            return Err(Error::IllegalLabel {
                pixel,
                label,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> i32 {
        self.labels[index]
    }

    /// The label value used for ground-truth OoD pixels.
    pub fn ood_label(&self) -> i32 {
        self.num_classes as i32
    }

    pub fn is_ood(&self, index: usize) -> bool {
        self.labels[index] == self.ood_label()
    }

    pub fn is_ignored(&self, index: usize) -> bool {
        self.labels[index] == IGNORE_LABEL
    }
}

/// Per-pixel score in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl HeatMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} heat map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Format(format!("heat value {v} outside [0,1] at {i}")));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f32 {
        self.values[index]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// Real-valued per-pixel input features (`d` channels).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if values.len() != height * width * dim {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{dim} feature map needs {} values, got {}",
                height * width * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            dim,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "map dimensions must be positive, got {height}x{width}"
        )));
    }
    if height > u32::MAX as usize || width > u32::MAX as usize {
        return Err(Error::InvalidArgument("map dimensions exceed u32".into()));
    }
    Ok(())
}

/// Checks that a softmax map and its labels describe the same image.
pub fn validate_pair(softmax: &SoftmaxMap, labels: &LabelMap) -> Result<()> {
    if softmax.height != labels.height || softmax.width != labels.width {
        return Err(Error::DimensionMismatch(format!(
            "softmax is {}x{}, labels are {}x{}",
            softmax.height, softmax.width, labels.height, labels.width
        )));
    }
    if softmax.num_classes != labels.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "softmax has q = {}, labels declare q = {}",
            softmax.num_classes, labels.num_classes
        )));
    }
    let ood = labels.ood_label();
    if let Some((pixel, &label)) = labels
        .labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l < IGNORE_LABEL || l > ood)
    {
        return Err(Error::IllegalLabel {
            pixel,
            label,
            num_classes: labels.num_classes,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary encoding

const SOFT_MAGIC: &[u8; 4] = b"SOFT";
const LABEL_MAGIC: &[u8; 4] = b"LABL";
const HEAT_MAGIC: &[u8; 4] = b"HEAT";
const FEAT_MAGIC: &[u8; 4] = b"FEAT";

fn header(magic: &[u8; 4], dims: &[usize], payload_words: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * payload_words);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

impl SoftmaxMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [self.height, self.width, self.num_classes];
        let mut out = header(SOFT_MAGIC, &dims, self.values.len());
        self.values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, SOFT_MAGIC)?;
        let (h, w, q) = (r.dim()?, r.dim()?, r.dim()?);
        let values = r.f32_payload(h * w * q)?;
        Self::new(h, w, q, values)
    }
}

impl LabelMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [self.height, self.width, self.num_classes];
        let mut out = header(LABEL_MAGIC, &dims, self.labels.len());
        self.labels
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, LABEL_MAGIC)?;
        let (h, w, q) = (r.dim()?, r.dim()?, r.dim()?);
        let labels = r.i32_payload(h * w)?;
        Self::new(h, w, q, labels)
    }
}

impl HeatMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(HEAT_MAGIC, &[self.height, self.width], self.values.len());
        self.values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, HEAT_MAGIC)?;
        let (h, w) = (r.dim()?, r.dim()?);
        let values = r.f32_payload(h * w)?;
        Self::new(h, w, values)
    }
}

impl FeatureMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [self.height, self.width, self.dim];
        let mut out = header(FEAT_MAGIC, &dims, self.values.len());
        self.values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, FEAT_MAGIC)?;
        let (h, w, d) = (r.dim()?, r.dim()?, r.dim()?);
        let values = r.f32_payload(h * w * d)?;
        Self::new(h, w, d, values)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("file shorter than header".into()));
        }
        if &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn word(&mut self) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        let word = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        self.pos = end;
        Ok(word.try_into().expect("slice of length 4"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.word().map(u32::from_le_bytes)
    }

    fn dim(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn payload(&self, words: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        let need = words
            .checked_mul(4)
            .ok_or_else(|| Error::Format("declared size overflows".into()))?;
        if have != need {
            return Err(Error::Format(format!(
                "payload is {have} bytes, header declares {need}"
            )));
        }
        Ok(&self.bytes[self.pos..])
    }

    fn f32_payload(&self, words: usize) -> Result<Vec<f32>> {
        Ok(self
            .payload(words)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    fn i32_payload(&self, words: usize) -> Result<Vec<i32>> {
        Ok(self
            .payload(words)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// File helpers

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn load_softmax(path: impl AsRef<Path>) -> Result<SoftmaxMap> {
    SoftmaxMap::from_bytes(&read_file(path.as_ref())?)
}

pub fn store_softmax(map: &SoftmaxMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &map.to_bytes())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    LabelMap::from_bytes(&read_file(path.as_ref())?)
}

pub fn store_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &map.to_bytes())
}

pub fn load_heatmap(path: impl AsRef<Path>) -> Result<HeatMap> {
    HeatMap::from_bytes(&read_file(path.as_ref())?)
}

pub fn store_heatmap(map: &HeatMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &map.to_bytes())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    FeatureMap::from_bytes(&read_file(path.as_ref())?)
}

pub fn store_features(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &map.to_bytes())
}
