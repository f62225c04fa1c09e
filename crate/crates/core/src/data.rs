//! Datasets: the IDX container used by MNIST-family files and a seeded
//! Gaussian-blob generator.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::Sample;
use crate::error::{domain, Error, Result};
use crate::linalg::norm2;
use crate::rngs;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Row-major inputs (`n × m_x`) and one-hot targets (`n × m_y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    input_dim: usize,
    target_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, input_dim: usize, targets: Vec<f64>, target_dim: usize) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 {
            return domain("dataset dimensions must be positive");
        }
        if !inputs.len().is_multiple_of(input_dim) || !targets.len().is_multiple_of(target_dim) {
            return domain("dataset buffers are not whole rows");
        }
        if inputs.len() / input_dim != targets.len() / target_dim {
            return domain(format!(
                "{} input rows but {} target rows",
                inputs.len() / input_dim,
                targets.len() / target_dim
            ));
        }
        Ok(Self {
            inputs,
            targets,
            input_dim,
            target_dim,
        })
    }

    /// One-hot targets from class labels.
    pub fn from_labels(inputs: Vec<f64>, input_dim: usize, labels: &[usize], classes: usize) -> Result<Self> {
        let mut targets = vec![0.0; labels.len() * classes];
        for (i, &c) in labels.iter().enumerate() {
            if c >= classes {
                return domain(format!("label {c} at row {i} is not below {classes}"));
            }
            targets[i * classes + c] = 1.0;
        }
        Self::new(inputs, input_dim, targets, classes)
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.target_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        (self.input(i), self.target(i))
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices.iter().map(|&i| self.sample(i)).collect()
    }

    /// Index of the largest target entry.
    pub fn label(&self, i: usize) -> usize {
        argmax(self.target(i))
    }

    /// Rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut targets = Vec::with_capacity(indices.len() * self.target_dim);
        for &i in indices {
            if i >= self.len() {
                return domain(format!("row {i} outside a dataset of {}", self.len()));
            }
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Dataset::new(inputs, self.input_dim, targets, self.target_dim)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            msg: "truncated header".into(),
        })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let got = read_u32(bytes, 0)?;
    if got != magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!("magic {got:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

/// `(count, rows, cols, pixels)` from an IDX image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    expect_magic(bytes, IDX_IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated pixel data: {need} bytes expected, {} present", body.len()),
        });
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    expect_magic(bytes, IDX_LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated label data: {n} labels expected, {} present", body.len()),
        });
    }
    Ok(&body[..n])
}

/// Pixels scaled by `1/255`; label `c` becomes the one-hot row `e_c`
/// (zero-based).
pub fn decode_idx(images: &[u8], labels: &[u8], class_count: usize) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if lab.len() != n {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{} labels for {n} images", lab.len()),
        });
    }
    if rows * cols == 0 {
        return Err(Error::Format {
            offset: 8,
            msg: "zero-sized images".into(),
        });
    }
    let mut targets = vec![0.0; n * class_count];
    for (i, &c) in lab.iter().enumerate() {
        if c as usize >= class_count {
            return Err(Error::Format {
                offset: 8 + i,
                msg: format!("label {c} is not below {class_count}"),
            });
        }
        targets[i * class_count + c as usize] = 1.0;
    }
    let inputs = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(inputs, rows * cols, targets, class_count)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, class_count: usize) -> Result<Dataset> {
    if class_count == 0 {
        return domain("class count must be positive");
    }
    decode_idx(&fs::read(images_path)?, &fs::read(labels_path)?, class_count)
}

/// IDX encodings of a dataset whose inputs are `rows × cols` images with
/// pixels in `[0, 1]`; pixels are rounded to the nearest `k/255`.
pub fn encode_idx(ds: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.input_dim() {
        return domain(format!(
            "{rows}×{cols} images do not match input dimension {}",
            ds.input_dim()
        ));
    }
    if ds.inputs().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return domain("IDX pixels must lie in [0, 1]");
    }
    if ds.target_dim() > 256 {
        return domain("IDX labels are single bytes");
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.inputs().len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for d in [n, rows as u32, cols as u32] {
        img.extend_from_slice(&d.to_be_bytes());
    }
    img.extend(ds.inputs().iter().map(|v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend((0..ds.len()).map(|i| ds.label(i) as u8));
    Ok((img, lab))
}

pub fn write_idx(ds: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (img, lab) = encode_idx(ds, rows, cols)?;
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Gaussian blobs: class `c` is centred at `separation·u_c` for a random unit
/// direction `u_c`, with identity covariance. Rows cycle through the classes.
pub fn synthetic(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return domain("synthetic data needs positive class count, class size and dimension");
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return domain(format!("separation must be finite and non-negative, got {separation}"));
    }
    let mut rng = rngs::seeded(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = norm2(&u).max(f64::MIN_POSITIVE);
            u.iter().map(|v| separation * v / n).collect()
        })
        .collect();
    let n = classes * per_class;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for mu in &centres[c] {
            inputs.push(mu + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset::from_labels(inputs, dim, &labels, classes)
}

/// `n` rows drawn uniformly without replacement, in random order.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return domain(format!("subset size {n} must lie in 1..={}", ds.len()));
    }
    let mut rng = rngs::seeded(seed);
    let idx = index::sample(&mut rng, ds.len(), n).into_vec();
    ds.gather(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_bytes() {
        assert_eq!(IDX_IMAGE_MAGIC.to_be_bytes(), [0x00, 0x00, 0x08, 0x03]);
        assert_eq!(IDX_LABEL_MAGIC.to_be_bytes(), [0x00, 0x00, 0x08, 0x01]);
    }

    #[test]
    fn label_seven_is_one_hot() {
        let ds = Dataset::from_labels(vec![0.0], 1, &[7], 10).unwrap();
        let mut want = vec![0.0; 10];
        want[7] = 1.0;
        assert_eq!(ds.target(0), want.as_slice());
        assert_eq!(ds.label(0), 7);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let good_lab = [0, 0, 8, 1, 0, 0, 0, 1, 3];
        let img = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9];
        assert!(decode_idx(&img, &good_lab, 4).is_ok());
        match decode_idx(&good_lab, &good_lab, 4) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_idx(&img[..16], &good_lab, 4) {
            Err(Error::Format { offset: 16, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_idx(&img, &good_lab, 3) {
            Err(Error::Format { offset: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_idx(&img[..6], &good_lab, 4),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic(3, 5, 4, 2.0, 1).unwrap();
        assert_eq!(a, synthetic(3, 5, 4, 2.0, 1).unwrap());
        assert_ne!(a, synthetic(3, 5, 4, 2.0, 2).unwrap());
        assert_eq!(a.len(), 15);
        for i in 0..15 {
            assert_eq!(a.label(i), i % 3);
            assert_eq!(a.target(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn zero_separation_shares_means() {
        let ds = synthetic(2, 20_000, 3, 0.0, 5).unwrap();
        for c in 0..2 {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == c).collect();
            for d in 0..3 {
                let m = rows.iter().map(|&i| ds.input(i)[d]).sum::<f64>() / rows.len() as f64;
                assert!(m.abs() < 0.05);
            }
        }
    }

    #[test]
    fn subset_examples() {
        let ds = synthetic(2, 10, 2, 1.0, 0).unwrap();
        let all = subset(&ds, 20, 3).unwrap();
        let mut a: Vec<String> = all.samples().iter().map(|s| format!("{s:?}")).collect();
        let mut b: Vec<String> = ds.samples().iter().map(|s| format!("{s:?}")).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(subset(&ds, 5, 9).unwrap(), subset(&ds, 5, 9).unwrap());
        assert!(subset(&ds, 0, 0).is_err());
        assert!(subset(&ds, 21, 0).is_err());
    }
}
