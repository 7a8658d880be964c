//! SKCK checkpoint files.
//!
//! Layout (little-endian): magic `SKCK` | version u32 | config fingerprint (32 bytes)
//! | class_count u32 | entry_count u32 | entries. Each entry is name length u32,
//! UTF-8 name, frozen u8, rank u32, rank dims as u32, then the f32 payload.
//! Batch-norm running statistics are stored as ordinary entries.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::ByteReader;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

pub const SKCK_MAGIC: &[u8; 4] = b"SKCK";
pub const SKCK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub frozen: bool,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: [u8; 32],
    pub class_count: usize,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        Self {
            version: SKCK_VERSION,
            fingerprint: net.fingerprint(),
            class_count: net.config.class_count,
            entries: net
                .store
                .iter()
                .map(|(_, p)| Entry { name: p.name.clone(), frozen: p.frozen, value: p.value.clone() })
                .collect(),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copies every parameter into `net`. Names and shapes are checked before
    /// the fingerprint so schema mismatches are reported by parameter name.
    /// Entries for which `skip` returns true are neither checked nor copied.
    pub fn apply_filtered(&self, net: &mut Network, skip: impl Fn(&str) -> bool) -> Result<()> {
        let ours: HashMap<&str, &Entry> =
            self.entries.iter().filter(|e| !skip(&e.name)).map(|e| (e.name.as_str(), e)).collect();
        let theirs: HashSet<String> =
            net.store.iter().map(|(_, p)| p.name.clone()).filter(|n| !skip(n)).collect();
        let mut missing: Vec<&str> = theirs.iter().map(String::as_str).filter(|n| !ours.contains_key(n)).collect();
        let mut extra: Vec<&str> = ours.keys().copied().filter(|n| !theirs.contains(*n)).collect();
        missing.sort_unstable();
        extra.sort_unstable();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Load(format!(
                "checkpoint does not match the network: missing parameters [{}], unexpected parameters [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        for (_, p) in net.store.iter() {
            if let Some(e) = ours.get(p.name.as_str()) {
                if e.value.shape() != p.value.shape() {
                    return Err(Error::Load(format!(
                        "shape mismatch for {}: checkpoint {:?}, network {:?}",
                        p.name,
                        e.value.shape(),
                        p.value.shape()
                    )));
                }
            }
        }
        if self.fingerprint != net.fingerprint() {
            return Err(Error::Load("checkpoint was saved from a different network configuration".into()));
        }
        for p in net.store.iter_mut() {
            if let Some(e) = ours.get(p.name.as_str()) {
                p.value = e.value.clone();
                p.frozen = e.frozen;
            }
        }
        Ok(())
    }

    pub fn apply(&self, net: &mut Network) -> Result<()> {
        if self.class_count != net.config.class_count {
            return Err(Error::Load(format!(
                "checkpoint has {} classes, network has {}",
                self.class_count, net.config.class_count
            )));
        }
        self.apply_filtered(net, |_| false)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SKCK_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.fingerprint)?;
        w.write_all(&u32_of(self.class_count)?.to_le_bytes())?;
        w.write_all(&u32_of(self.entries.len())?.to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&u32_of(e.name.len())?.to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.frozen as u8])?;
            w.write_all(&u32_of(e.value.rank())?.to_le_bytes())?;
            for &d in e.value.shape() {
                w.write_all(&u32_of(d)?.to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut r = ByteReader::new(r);
        let magic = r.bytes::<4>("magic")?;
        if &magic != SKCK_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"SKCK\"")));
        }
        let version = r.u32("version")?;
        if version != SKCK_VERSION {
            return Err(Error::Load(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint = r.bytes::<32>("fingerprint")?;
        let class_count = r.u32("class_count")? as usize;
        let count = r.u32("entry_count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name_offset = r.offset;
            let mut name = vec![0u8; len];
            r.fill(&mut name, "parameter name")?;
            let name = String::from_utf8(name).map_err(|_| r.error_at(name_offset, "parameter name is not UTF-8"))?;
            let frozen = match r.u8("frozen flag")? {
                0 => false,
                1 => true,
                f => return Err(r.error_at(r.offset - 1, format!("frozen flag {f} of {name} is not 0 or 1"))),
            };
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.error_at(r.offset - 4, format!("implausible rank {rank} for {name}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u32("dimension")? as usize;
                if d == 0 {
                    return Err(r.error_at(r.offset - 4, format!("zero dimension in {name}")));
                }
                dims.push(d);
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(r.f32(&name)?);
            }
            entries.push(Entry { name, frozen, value: Tensor::new(dims, data)? });
        }
        Ok(Self { version, fingerprint, class_count, entries })
    }
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit a 32-bit checkpoint field")))
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io_at(path))?);
    Checkpoint::from_network(net).write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(&mut BufReader::new(File::open(path).map_err(Error::io_at(path))?))
}
