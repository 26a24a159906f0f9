//! Bounded per-class replay buffer of embeddings, kept spread out in time.
//!
//! Each class holds at most `capacity` embeddings. Once a class is full an
//! incoming sample replaces whichever stored sample most increases the sum of
//! nearest-neighbour time gaps of the class, or is dropped if no replacement
//! increases it.

use crate::fe::EmbeddingSample;
use crate::relation::ClassSamples;
use crate::{ClassId, Error, Result};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"HARCLRPL";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Sum over samples of the time gap to the nearest other sample; 0 for fewer
/// than two timestamps.
pub fn d_m(timestamps: &[f64]) -> f64 {
    let k = timestamps.len();
    if k < 2 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| timestamps[a].total_cmp(&timestamps[b]));
    let mut nearest = vec![0.0; k];
    for pos in 0..k {
        let i = order[pos];
        let left = if pos > 0 { (timestamps[i] - timestamps[order[pos - 1]]).abs() } else { f64::INFINITY };
        let right = if pos + 1 < k { (timestamps[i] - timestamps[order[pos + 1]]).abs() } else { f64::INFINITY };
        nearest[i] = left.min(right);
    }
    // summed in input order so the value does not depend on the sort
    nearest.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainReason {
    NewClass,
    Replacement,
}

impl RetrainReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrainReason::NewClass => "new_class",
            RetrainReason::Replacement => "replacement",
        }
    }
}

/// What one call to [`ReplayBuffer::update`] did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: usize,
    pub new_classes: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    dim: usize,
    store: ClassSamples,
    replaced_since_retrain: BTreeMap<ClassId, usize>,
    new_class_pending: bool,
}

impl ReplayBuffer {
    /// An empty buffer.
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidConfig("replay capacity and embedding dim must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            store: BTreeMap::new(),
            replaced_since_retrain: BTreeMap::new(),
            new_class_pending: false,
        })
    }

    /// Seeds the buffer with a uniform random subset of at most `capacity`
    /// embeddings per base class.
    pub fn init_from_base<R: Rng + ?Sized>(
        embeddings_by_class: &ClassSamples,
        capacity: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = embeddings_by_class
            .values()
            .flat_map(|v| v.first())
            .map(EmbeddingSample::dim)
            .next()
            .ok_or_else(|| Error::EmptyInput("no base-class embeddings".into()))?;
        let mut buf = Self::new(capacity, dim)?;
        for (&class, samples) in embeddings_by_class {
            if samples.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            let mut idx = sample_indices(rng, samples.len(), capacity.min(samples.len())).into_vec();
            idx.sort_unstable();
            let mut kept = Vec::with_capacity(idx.len());
            for i in idx {
                let s = &samples[i];
                buf.check_sample(s)?;
                kept.push(EmbeddingSample { label: Some(class), ..s.clone() });
            }
            buf.store.insert(class, kept);
            buf.replaced_since_retrain.insert(class, 0);
        }
        Ok(buf)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &ClassSamples {
        &self.store
    }

    pub fn known_classes(&self) -> BTreeSet<ClassId> {
        self.store.keys().copied().collect()
    }

    pub fn replaced_since_retrain(&self) -> &BTreeMap<ClassId, usize> {
        &self.replaced_since_retrain
    }

    pub fn new_class_pending(&self) -> bool {
        self.new_class_pending
    }

    pub fn len(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Timestamp sparsity of one class.
    pub fn class_d_m(&self, class: ClassId) -> f64 {
        self.store.get(&class).map_or(0.0, |v| d_m(&v.iter().map(|s| s.timestamp).collect::<Vec<_>>()))
    }

    fn check_sample(&self, s: &EmbeddingSample) -> Result<()> {
        if s.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: s.dim() });
        }
        if !s.timestamp.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite timestamp {}", s.timestamp)));
        }
        Ok(())
    }

    /// Offers labeled samples to the buffer in order.
    pub fn update(&mut self, incoming: &[EmbeddingSample]) -> Result<UpdateReport> {
        for s in incoming {
            self.check_sample(s)?;
            if s.label.is_none() {
                return Err(Error::InsufficientData("replay update received an unlabeled sample".into()));
            }
        }
        let mut report = UpdateReport::default();
        for s in incoming {
            let class = s.label.expect("checked above");
            let cap = self.capacity;
            let list = match self.store.get_mut(&class) {
                Some(list) => list,
                None => {
                    self.store.insert(class, vec![s.clone()]);
                    self.replaced_since_retrain.insert(class, 0);
                    self.new_class_pending = true;
                    report.new_classes.push(class);
                    report.inserted += 1;
                    continue;
                }
            };
            if list.len() < cap {
                list.push(s.clone());
                report.inserted += 1;
                continue;
            }
            let mut ts: Vec<f64> = list.iter().map(|e| e.timestamp).collect();
            let current = d_m(&ts);
            // (value, evicted timestamp, index)
            let mut best: Option<(f64, f64, usize)> = None;
            for j in 0..ts.len() {
                let evicted = ts[j];
                ts[j] = s.timestamp;
                let v = d_m(&ts);
                ts[j] = evicted;
                if v > current {
                    let better = match best {
                        None => true,
                        Some((bv, bt, _)) => v > bv || (v == bv && evicted < bt),
                    };
                    if better {
                        best = Some((v, evicted, j));
                    }
                }
            }
            match best {
                Some((_, _, j)) => {
                    list[j] = s.clone();
                    *self.replaced_since_retrain.entry(class).or_insert(0) += 1;
                    report.replaced += 1;
                }
                None => report.rejected += 1,
            }
        }
        Ok(report)
    }

    /// Replacements per class that fire a retrain: a quarter of the
    /// capacity, rounded up.
    pub fn replacement_threshold(&self) -> usize {
        self.capacity.div_ceil(4)
    }

    pub fn should_retrain(&self) -> Option<RetrainReason> {
        if self.new_class_pending {
            return Some(RetrainReason::NewClass);
        }
        let threshold = self.replacement_threshold();
        if self.replaced_since_retrain.values().any(|&r| r >= threshold) {
            return Some(RetrainReason::Replacement);
        }
        None
    }

    pub fn reset_trigger(&mut self) {
        self.replaced_since_retrain.values_mut().for_each(|v| *v = 0);
        self.new_class_pending = false;
    }

    /// Snapshot encoding.
    ///
    /// ```text
    /// magic "HARCLRPL", version u32, dim u32, capacity u32, flags u32,
    /// n_classes u32, then per class: id u32, count u32, replaced u32 and
    /// count × (dim × f32 + f64 timestamp), all little-endian
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.len() * (self.dim * 4 + 8) + self.store.len() * 12);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        for v in [
            SNAPSHOT_VERSION,
            self.dim as u32,
            self.capacity as u32,
            self.new_class_pending as u32,
            self.store.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (&class, list) in &self.store {
            let replaced = self.replaced_since_retrain.get(&class).copied().unwrap_or(0);
            for v in [class, list.len() as u32, replaced as u32] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for s in list {
                for &x in &s.vector {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&s.timestamp.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Reader { buf, pos: 0 };
        if c.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::CorruptArtifact("bad replay snapshot magic".into()));
        }
        let version = c.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::VersionMismatch { expected: SNAPSHOT_VERSION, found: version });
        }
        let dim = c.u32()? as usize;
        let capacity = c.u32()? as usize;
        let flags = c.u32()?;
        if flags > 1 {
            return Err(Error::CorruptArtifact(format!("unknown replay flags {flags:#x}")));
        }
        let n_classes = c.u32()? as usize;
        let mut buffer = ReplayBuffer::new(capacity, dim).map_err(|e| Error::CorruptArtifact(e.to_string()))?;
        buffer.new_class_pending = flags == 1;
        for _ in 0..n_classes {
            let class = c.u32()?;
            let count = c.u32()? as usize;
            let replaced = c.u32()? as usize;
            if count > capacity || buffer.store.contains_key(&class) {
                return Err(Error::CorruptArtifact(format!("bad record header for class {class}")));
            }
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let vector = c
                    .take(dim * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                let timestamp = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
                list.push(EmbeddingSample { vector, label: Some(class), timestamp });
            }
            buffer.store.insert(class, list);
            buffer.replaced_since_retrain.insert(class, replaced);
        }
        if c.pos != buf.len() {
            return Err(Error::CorruptArtifact(format!("{} trailing bytes in replay snapshot", buf.len() - c.pos)));
        }
        Ok(buffer)
    }

    pub fn snapshot_save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn snapshot_load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptArtifact(format!("replay snapshot truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
