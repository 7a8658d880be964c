//! Skeleton datasets, the SKDS file format, preprocessing and augmentation.

pub mod augment;
pub mod synth;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Layout;
use crate::tensor::Tensor;

pub use augment::{
    inject_frame_loss, mirror_clip, mmfi_preprocess, pad_frames, random_rotate_translate, segment_and_mirror,
    zero_frame_fraction,
};
pub use synth::{synth_generate, SynthConfig};

pub const SKDS_MAGIC: &[u8; 4] = b"SKDS";
pub const SKDS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Imported,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: usize,
    /// `[C, T, N, M]`.
    pub data: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonDataset {
    pub class_count: usize,
    pub layout: Layout,
    pub provenance: Provenance,
    /// `(C, T, N, M)` shared by every sample.
    pub dims: [usize; 4],
    pub samples: Vec<Sample>,
}

impl SkeletonDataset {
    pub fn new(class_count: usize, layout: Layout, dims: [usize; 4], provenance: Provenance) -> Self {
        Self { class_count, layout, provenance, dims, samples: Vec::new() }
    }

    pub fn push(&mut self, label: usize, data: Tensor<f32>) -> Result<()> {
        if label >= self.class_count {
            return Err(Error::contract(format!("label {label} out of range for {} classes", self.class_count)));
        }
        if data.shape() != self.dims {
            return Err(Error::dim(format!("sample shape {:?} differs from dataset shape {:?}", data.shape(), self.dims)));
        }
        self.samples.push(Sample { label, data });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.dims[1]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the selected samples into `[B, C, T, N, M]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let per: usize = self.dims.iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend_from_slice(s.data.data());
            labels.push(s.label);
        }
        let [c, t, n, m] = self.dims;
        Ok((Tensor::new(vec![indices.len(), c, t, n, m], data)?, labels))
    }

    /// Applies `f` to every sample, keeping labels. The new shape is taken from
    /// the first output.
    pub fn map_samples(&self, f: impl Fn(usize, &Tensor<f32>) -> Result<Tensor<f32>> + Sync) -> Result<Self> {
        use rayon::prelude::*;
        let mapped: Vec<Tensor<f32>> =
            self.samples.par_iter().enumerate().map(|(i, s)| f(i, &s.data)).collect::<Result<_>>()?;
        let dims = match mapped.first() {
            Some(t) => dims4(t)?,
            None => self.dims,
        };
        let mut out = SkeletonDataset::new(self.class_count, self.layout, dims, self.provenance);
        for (s, data) in self.samples.iter().zip(mapped) {
            out.push(s.label, data)?;
        }
        Ok(out)
    }

    /// Zero-pads every sample to `target` frames.
    pub fn padded(&self, target: usize) -> Result<Self> {
        if target < self.frames() {
            return Err(Error::contract(format!("cannot pad {} frames down to {target}", self.frames())));
        }
        let mut out = self.map_samples(|_, t| pad_frames(t, target))?;
        out.dims[1] = target;
        Ok(out)
    }

    /// Zero-pads the person axis up to `persons` slots.
    pub fn with_persons(&self, persons: usize) -> Result<Self> {
        let [c, t, n, m] = self.dims;
        if persons < m {
            return Err(Error::contract(format!("cannot reduce {m} person slots to {persons}")));
        }
        let mut out = self.map_samples(|_, s| {
            let mut d = Tensor::zeros(&[c, t, n, persons]);
            for (row, dst) in s.data().chunks(m).zip(d.data_mut().chunks_mut(persons)) {
                dst[..m].copy_from_slice(row);
            }
            Ok(d)
        })?;
        out.dims[3] = persons;
        Ok(out)
    }
}

fn dims4(t: &Tensor<f32>) -> Result<[usize; 4]> {
    match t.shape() {
        &[c, t, n, m] => Ok([c, t, n, m]),
        s => Err(Error::dim(format!("expected a [C, T, N, M] sample, got {s:?}"))),
    }
}

pub fn save_dataset(ds: &SkeletonDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io_at(path))?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(ds: &SkeletonDataset, w: &mut impl Write) -> Result<()> {
    w.write_all(SKDS_MAGIC)?;
    let header = [
        SKDS_VERSION,
        to_u32(ds.class_count)?,
        to_u32(ds.samples.len())?,
        to_u32(ds.dims[0])?,
        to_u32(ds.dims[1])?,
        to_u32(ds.dims[2])?,
        to_u32(ds.dims[3])?,
        ds.layout.id(),
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in &ds.samples {
        w.write_all(&to_u32(s.label)?.to_le_bytes())?;
        for v in s.data.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<SkeletonDataset> {
    read_dataset(&mut BufReader::new(File::open(path).map_err(Error::io_at(path))?))
}

pub fn read_dataset(r: &mut impl Read) -> Result<SkeletonDataset> {
    let mut r = ByteReader::new(r);
    let magic = r.bytes::<4>("magic")?;
    if &magic != SKDS_MAGIC {
        return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"SKDS\"")));
    }
    let version = r.u32("version")?;
    if version != SKDS_VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let class_count = r.u32("class_count")? as usize;
    let sample_count = r.u32("sample_count")? as usize;
    let mut dims = [0usize; 4];
    for (d, name) in dims.iter_mut().zip(["C", "T", "N", "M"]) {
        *d = r.u32(name)? as usize;
        if *d == 0 {
            return Err(r.error_at(r.offset - 4, format!("dimension {name} is zero")));
        }
    }
    let layout_offset = r.offset;
    let layout = Layout::from_id(r.u32("layout_id")?).map_err(|e| r.error_at(layout_offset, e.to_string()))?;
    if layout.joint_count() != dims[2] {
        return Err(r.error_at(
            layout_offset,
            format!("layout {layout} has {} joints but N = {}", layout.joint_count(), dims[2]),
        ));
    }
    let per: usize = dims.iter().product();
    let mut ds = SkeletonDataset::new(class_count, layout, dims, Provenance::Imported);
    ds.samples.reserve(sample_count);
    let mut buf = vec![0u8; per * 4];
    for i in 0..sample_count {
        let label_offset = r.offset;
        let label = r.u32("label")? as usize;
        if label >= class_count {
            return Err(r.error_at(label_offset, format!("sample {i} label {label} >= class_count {class_count}")));
        }
        r.fill(&mut buf, "sample data")?;
        let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        ds.samples.push(Sample { label, data: Tensor::new(dims.to_vec(), data)? });
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(r.error_at(r.offset, "trailing bytes after the last sample"));
    }
    Ok(ds)
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit the 32-bit file field")))
}

/// Little-endian reader that tracks its byte offset for diagnostics.
pub(crate) struct ByteReader<'a, R: Read> {
    inner: &'a mut R,
    pub offset: u64,
}

impl<'a, R: Read> ByteReader<'a, R> {
    pub fn new(inner: &'a mut R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn error_at(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::Format { offset, message: message.into() }
    }

    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(self.error_at(
                        self.offset + got as u64,
                        format!("truncated while reading {what}: needed {} bytes, found {got}", buf.len()),
                    ))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>(what)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SkeletonDataset {
        let mut ds = SkeletonDataset::new(3, Layout::Kinetics18, [3, 4, 18, 1], Provenance::Synthetic);
        for i in 0..5 {
            ds.push(i % 3, Tensor::from_fn(&[3, 4, 18, 1], |j| (i * 1000 + j) as f32 * 0.25 - 7.0)).unwrap();
        }
        ds
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = tiny();
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 36 + 5 * (4 + 3 * 4 * 18 * 4));
        let back = read_dataset(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!((back.class_count, back.dims, back.layout), (3, ds.dims, Layout::Kinetics18));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = SkeletonDataset::new(2, Layout::Coco17, [3, 30, 17, 1], Provenance::Synthetic);
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        let back = read_dataset(&mut bytes.as_slice()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dims, ds.dims);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let mut bytes = Vec::new();
        write_dataset(&tiny(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&mut bad.as_slice()), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset(&mut bad.as_slice()), Err(Error::Format { offset: 4, .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_dataset(&mut &cut[..]), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_dataset(&mut long.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn person_padding() {
        let ds = tiny().with_persons(2).unwrap();
        assert_eq!(ds.dims, [3, 4, 18, 2]);
        let s = &ds.samples[1].data;
        assert_eq!(s.at(&[1, 2, 3, 0]), tiny().samples[1].data.at(&[1, 2, 3, 0]));
        assert_eq!(s.at(&[1, 2, 3, 1]), 0.0);
    }
}
