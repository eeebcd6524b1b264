//! `LLGA` sequence files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   magic "LLGA" | u32 version | u8 template | u32 feature_dim
//!          | u32 lap_dim | u32 seq_len | u64 sample_count | u64 seed
//!          | u32 crc32 of every record byte
//! record   u8 c | c x u64 center id | u8 task code
//!          | c x pad bitset (ceil(seq_len/8) bytes, bit i = row i, LSB first)
//!          | c x seq_len x (feature_dim + lap_dim) f32
//! ```
//!
//! A record for `c` centers holds `c` sequences back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::linalg::Matrix;
use crate::sequence::EmbeddingSequence;

pub const SEQ_MAGIC: [u8; 4] = *b"LLGA";
pub const HEADER_LEN: u64 = 41;
const COUNT_OFFSET: u64 = 21;
const CRC_OFFSET: u64 = 37;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Nd,
    Ho,
    Center,
}

impl TemplateKind {
    pub fn code(self) -> u8 {
        match self {
            TemplateKind::Nd => 0,
            TemplateKind::Ho => 1,
            TemplateKind::Center => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TemplateKind::Nd),
            1 => Ok(TemplateKind::Ho),
            2 => Ok(TemplateKind::Center),
            _ => Err(Error::invalid(format!("unknown template code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Nd => "nd",
            TemplateKind::Ho => "ho",
            TemplateKind::Center => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nd" => Ok(TemplateKind::Nd),
            "ho" => Ok(TemplateKind::Ho),
            "none" | "center" => Ok(TemplateKind::Center),
            _ => Err(Error::invalid(format!("unknown template {s:?} (expected nd, ho or none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceHeader {
    pub template: TemplateKind,
    pub feature_dim: usize,
    pub lap_dim: usize,
    pub seq_len: usize,
    pub sample_count: u64,
    pub seed: u64,
    pub checksum: u32,
}

impl SequenceHeader {
    /// Header for a file about to be written; count and checksum are filled
    /// in by the writer.
    pub fn new(template: TemplateKind, feature_dim: usize, lap_dim: usize, seq_len: usize, seed: u64) -> Self {
        Self {
            template,
            feature_dim,
            lap_dim,
            seq_len,
            sample_count: 0,
            seed,
            checksum: 0,
        }
    }

    pub fn row_dim(&self) -> usize {
        self.feature_dim + self.lap_dim
    }

    pub fn bitset_len(&self) -> usize {
        self.seq_len.div_ceil(8)
    }

    /// Bytes after the center-id block for a record with `centers` sequences.
    fn body_len(&self, centers: usize) -> usize {
        1 + centers * (self.bitset_len() + self.seq_len * self.row_dim() * 4)
    }

    /// Center ids plus body for `centers`, or `None` on overflow.
    fn checked_record_len(&self, centers: u64) -> Option<u64> {
        let (len, dim) = (self.seq_len as u64, self.row_dim() as u64);
        let per_seq = len.checked_mul(dim)?.checked_mul(4)?.checked_add(len.div_ceil(8))?;
        per_seq.checked_add(8)?.checked_mul(centers)?.checked_add(1)
    }

    fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.row_dim() == 0 {
            return Err(Error::shape("sequence files need seq_len >= 1 and row_dim >= 1"));
        }
        if self.template != TemplateKind::Nd && self.lap_dim != 0 {
            return Err(Error::shape(format!(
                "{} template carries no positional columns, got lap_dim {}",
                self.template.name(),
                self.lap_dim
            )));
        }
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&SEQ_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&[self.template.code()])?;
        w.write_all(&binio::u32_dim(self.feature_dim, "feature_dim")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.lap_dim, "lap_dim")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.seq_len, "seq_len")?.to_le_bytes())?;
        w.write_all(&self.sample_count.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.checksum.to_le_bytes())?;
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, SEQ_MAGIC)?;
        binio::read_version(r)?;
        let header = Self {
            template: TemplateKind::from_code(binio::read_u8(r, "template")?)?,
            feature_dim: binio::read_u32(r, "feature_dim")? as usize,
            lap_dim: binio::read_u32(r, "lap_dim")? as usize,
            seq_len: binio::read_u32(r, "seq_len")? as usize,
            sample_count: binio::read_u64(r, "sample_count")?,
            seed: binio::read_u64(r, "seed")?,
            checksum: binio::read_u32(r, "checksum")?,
        };
        header.validate()?;
        Ok(header)
    }
}

/// One stored sample with its float32 payload exactly as written.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub centers: Vec<NodeId>,
    pub task_code: u8,
    pub pad_masks: Vec<Vec<bool>>,
    /// `centers.len() * seq_len * row_dim` values, sequence-major.
    pub values: Vec<f32>,
}

impl SequenceRecord {
    /// Widens the stored floats back into embedding sequences.
    pub fn sequences(&self, header: &SequenceHeader) -> Result<Vec<EmbeddingSequence>> {
        let per_seq = header.seq_len * header.row_dim();
        self.pad_masks
            .iter()
            .zip(self.values.chunks_exact(per_seq))
            .map(|(mask, vals)| {
                EmbeddingSequence::new(
                    Matrix::from_vec(header.seq_len, header.row_dim(), vals.iter().map(|&x| f64::from(x)).collect()),
                    mask.clone(),
                    header.lap_dim,
                )
            })
            .collect()
    }
}

/// Streams records to disk; `finish` back-patches count and checksum.
pub struct SequenceWriter<W: Write + Seek> {
    out: W,
    header: SequenceHeader,
    hasher: crc32fast::Hasher,
    buf: Vec<u8>,
}

impl SequenceWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: SequenceHeader) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(file), header)
    }
}

impl<W: Write + Seek> SequenceWriter<W> {
    pub fn new(mut out: W, header: SequenceHeader) -> Result<Self> {
        header.validate()?;
        let header = SequenceHeader {
            sample_count: 0,
            checksum: 0,
            ..header
        };
        header.write_to(&mut out)?;
        Ok(Self {
            out,
            header,
            hasher: crc32fast::Hasher::new(),
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &SequenceHeader {
        &self.header
    }

    pub fn write_sample(&mut self, centers: &[NodeId], task_code: u8, seqs: &[&EmbeddingSequence]) -> Result<()> {
        let h = &self.header;
        if centers.is_empty() || centers.len() > u8::MAX as usize || centers.len() != seqs.len() {
            return Err(Error::shape(format!(
                "record needs 1..=255 centers with one sequence each, got {} centers and {} sequences",
                centers.len(),
                seqs.len()
            )));
        }
        for s in seqs {
            if s.len() != h.seq_len || s.feature_dim() != h.feature_dim || s.lap_dim() != h.lap_dim {
                return Err(Error::shape(format!(
                    "sequence {}x({}+{}) does not match file shape {}x({}+{})",
                    s.len(),
                    s.feature_dim(),
                    s.lap_dim(),
                    h.seq_len,
                    h.feature_dim,
                    h.lap_dim
                )));
            }
        }
        let masks: Vec<&[bool]> = seqs.iter().map(|s| s.pad_mask()).collect();
        let values = seqs.iter().flat_map(|s| s.rows().as_slice().iter().map(|&x| x as f32));
        self.emit(centers, task_code, &masks, values)
    }

    /// Writes a record read from another file without re-rounding.
    pub fn write_record(&mut self, rec: &SequenceRecord) -> Result<()> {
        let h = &self.header;
        let c = rec.centers.len();
        if c == 0
            || c > u8::MAX as usize
            || rec.pad_masks.len() != c
            || rec.pad_masks.iter().any(|m| m.len() != h.seq_len)
            || rec.values.len() != c * h.seq_len * h.row_dim()
        {
            return Err(Error::shape("record does not match file shape"));
        }
        let masks: Vec<&[bool]> = rec.pad_masks.iter().map(Vec::as_slice).collect();
        self.emit(&rec.centers, rec.task_code, &masks, rec.values.iter().copied())
    }

    fn emit(&mut self, centers: &[NodeId], task_code: u8, masks: &[&[bool]], values: impl Iterator<Item = f32>) -> Result<()> {
        self.buf.clear();
        self.buf.push(centers.len() as u8);
        for &c in centers {
            self.buf.extend_from_slice(&(c as u64).to_le_bytes());
        }
        self.buf.push(task_code);
        let bitset_len = self.header.bitset_len();
        for mask in masks {
            let start = self.buf.len();
            self.buf.resize(start + bitset_len, 0);
            for (i, _) in mask.iter().enumerate().filter(|(_, &pad)| pad) {
                self.buf[start + i / 8] |= 1 << (i % 8);
            }
        }
        for x in values {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self.hasher.update(&self.buf);
        self.out.write_all(&self.buf)?;
        self.header.sample_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<SequenceHeader> {
        self.header.checksum = self.hasher.clone().finalize();
        self.out.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.out.write_all(&self.header.sample_count.to_le_bytes())?;
        self.out.seek(SeekFrom::Start(CRC_OFFSET))?;
        self.out.write_all(&self.header.checksum.to_le_bytes())?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.header)
    }
}

/// Writes a whole file from `(centers, task code, sequences)` samples.
pub fn write_sequences<'a, I>(path: impl AsRef<Path>, header: SequenceHeader, samples: I) -> Result<SequenceHeader>
where
    I: IntoIterator<Item = (&'a [NodeId], u8, Vec<&'a EmbeddingSequence>)>,
{
    let mut w = SequenceWriter::create(path, header)?;
    for (centers, task, seqs) in samples {
        w.write_sample(centers, task, &seqs)?;
    }
    w.finish()
}

/// Lazy record iterator. Opening validates framing and checksum in one
/// streaming pass, so iteration only fails on I/O errors.
pub struct SequenceReader<R: Read + Seek> {
    input: R,
    header: SequenceHeader,
    remaining: u64,
}

impl SequenceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file))
    }
}

fn read_center_count<R: Read>(r: &mut R, index: u64) -> Result<usize> {
    let c = binio::read_u8(r, &format!("record {index}"))? as usize;
    if c == 0 {
        return Err(Error::shape(format!("record {index} has zero centers")));
    }
    Ok(c)
}

impl<R: Read + Seek> SequenceReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let header = SequenceHeader::read_from(&mut input)?;
        let mut left = input.seek(SeekFrom::End(0))?.saturating_sub(HEADER_LEN);
        input.seek(SeekFrom::Start(HEADER_LEN))?;
        let mut hasher = crc32fast::Hasher::new();
        let mut buf = Vec::new();
        for index in 0..header.sample_count {
            let c = read_center_count(&mut input, index)?;
            hasher.update(&[c as u8]);
            // never allocate more than the file can hold (the count byte is already read)
            let need = header
                .checked_record_len(c as u64)
                .filter(|&n| n < left)
                .ok_or_else(|| Error::Truncated(format!("record {index}")))?;
            left -= need + 1;
            buf.resize(c * 8 + header.body_len(c), 0);
            binio::read_exact_or(&mut input, &mut buf, &format!("record {index}"))?;
            hasher.update(&buf);
        }
        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::shape(format!(
                "trailing bytes after {} records",
                header.sample_count
            )));
        }
        let actual = hasher.finalize();
        if actual != header.checksum {
            return Err(Error::Checksum {
                expected: header.checksum,
                actual,
            });
        }
        input.seek(SeekFrom::Start(HEADER_LEN))?;
        Ok(Self {
            input,
            remaining: header.sample_count,
            header,
        })
    }

    pub fn header(&self) -> &SequenceHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<SequenceRecord> {
        let h = self.header;
        let index = h.sample_count - self.remaining;
        let what = format!("record {index}");
        let c = read_center_count(&mut self.input, index)?;
        let centers = (0..c)
            .map(|_| binio::read_u64(&mut self.input, &what).map(|id| id as NodeId))
            .collect::<Result<Vec<_>>>()?;
        let task_code = binio::read_u8(&mut self.input, &what)?;
        let mut bits = vec![0u8; h.bitset_len()];
        let mut pad_masks = Vec::with_capacity(c);
        for _ in 0..c {
            binio::read_exact_or(&mut self.input, &mut bits, &what)?;
            pad_masks.push((0..h.seq_len).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        let values = binio::read_f32s(&mut self.input, c * h.seq_len * h.row_dim(), &what)?;
        Ok(SequenceRecord {
            centers,
            task_code,
            pad_masks,
            values,
        })
    }
}

impl<R: Read + Seek> Iterator for SequenceReader<R> {
    type Item = Result<SequenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let rec = self.read_record();
        self.remaining = if rec.is_ok() { self.remaining - 1 } else { 0 };
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<(SequenceHeader, SequenceReader<BufReader<File>>)> {
    let reader = SequenceReader::open(path)?;
    Ok((*reader.header(), reader))
}
