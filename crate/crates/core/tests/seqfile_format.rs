//! Byte-level checks of the sequence and feature files against a
//! hand-written parser.

use graphseq::graph::FeatureMatrix;
use graphseq::linalg::Matrix;
use graphseq::seqfile::{read_sequences, SequenceHeader, SequenceReader, SequenceWriter, TemplateKind};
use graphseq::EmbeddingSequence;

/// Bitwise CRC-32 (IEEE, reflected).
fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> &[u8] {
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        a
    }
    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
}

#[derive(Debug, PartialEq)]
struct RawRecord {
    centers: Vec<u64>,
    task: u8,
    masks: Vec<Vec<bool>>,
    values: Vec<f32>,
}

fn sequence(len: usize, fdim: usize, ldim: usize, base: f64, pads: &[usize]) -> EmbeddingSequence {
    let d = fdim + ldim;
    let rows = Matrix::from_vec(len, d, (0..len * d).map(|i| base + i as f64 * 0.25).collect());
    let mask = (0..len).map(|i| pads.contains(&i)).collect();
    EmbeddingSequence::new(rows, mask, ldim).unwrap()
}

fn sample_file(dir: &std::path::Path) -> (std::path::PathBuf, Vec<EmbeddingSequence>) {
    let path = dir.join("s.llga");
    let seqs = vec![
        sequence(10, 3, 2, 0.0, &[]),
        sequence(10, 3, 2, 100.0, &[0, 8, 9]),
        sequence(10, 3, 2, -50.0, &[3]),
    ];
    let mut w = SequenceWriter::create(&path, SequenceHeader::new(TemplateKind::Nd, 3, 2, 10, 77)).unwrap();
    w.write_sample(&[5], 1, &[&seqs[0]]).unwrap();
    w.write_sample(&[9, 300], 2, &[&seqs[1], &seqs[2]]).unwrap();
    w.finish().unwrap();
    (path, seqs)
}

#[test]
fn bytes_match_independent_parser() {
    let dir = tempfile::tempdir().unwrap();
    let (path, seqs) = sample_file(dir.path());
    let bytes = std::fs::read(&path).unwrap();
    let mut c = Cursor(&bytes);
    assert_eq!(c.take(4), b"LLGA");
    assert_eq!(c.u32(), 1);
    assert_eq!(c.u8(), 0);
    let (fdim, ldim, len) = (c.u32() as usize, c.u32() as usize, c.u32() as usize);
    assert_eq!((fdim, ldim, len), (3, 2, 10));
    let count = c.u64();
    assert_eq!(count, 2);
    assert_eq!(c.u64(), 77);
    let crc = c.u32();
    assert_eq!(bytes.len() - c.0.len(), 41);
    assert_eq!(crc, crc32(c.0));

    let mut records = Vec::new();
    for _ in 0..count {
        let n = c.u8() as usize;
        let centers = (0..n).map(|_| c.u64()).collect();
        let task = c.u8();
        let masks = (0..n)
            .map(|_| {
                let bits = c.take(len.div_ceil(8)).to_vec();
                (0..len).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect()
            })
            .collect();
        let values = (0..n * len * (fdim + ldim)).map(|_| c.f32()).collect();
        records.push(RawRecord { centers, task, masks, values });
    }
    assert!(c.0.is_empty());
    assert_eq!(records[0].centers, vec![5]);
    assert_eq!(records[1].centers, vec![9, 300]);
    assert_eq!(records[1].task, 2);
    assert_eq!(records[1].masks[0], seqs[1].pad_mask());
    assert_eq!(records[1].masks[1], seqs[2].pad_mask());
    let expect: Vec<f32> = seqs[1..].iter().flat_map(|s| s.rows().as_slice().iter().map(|&x| x as f32)).collect();
    assert_eq!(records[1].values, expect);

    let (header, reader) = read_sequences(&path).unwrap();
    assert_eq!(header.sample_count, 2);
    assert_eq!(header.checksum, crc);
    let parsed: Vec<RawRecord> = reader
        .map(|r| {
            let r = r.unwrap();
            RawRecord {
                centers: r.centers.iter().map(|&v| v as u64).collect(),
                task: r.task_code,
                masks: r.pad_masks,
                values: r.values,
            }
        })
        .collect();
    assert_eq!(parsed, records);
}

#[test]
fn empty_file_is_a_bare_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.llga");
    SequenceWriter::create(&path, SequenceHeader::new(TemplateKind::Ho, 4, 0, 5, 1))
        .unwrap()
        .finish()
        .unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 41);
    assert_eq!(&bytes[21..29], &0u64.to_le_bytes());
    assert_eq!(&bytes[37..41], &crc32(&[]).to_le_bytes());
    let (h, mut r) = read_sequences(&path).unwrap();
    assert_eq!(h.template, TemplateKind::Ho);
    assert!(r.next().is_none());
}

#[test]
fn every_flipped_byte_is_rejected_at_open() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = sample_file(dir.path());
    let bytes = std::fs::read(&path).unwrap();
    // skip the seed field, which carries no integrity information
    for i in (0..bytes.len()).filter(|i| !(29..37).contains(i)) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(
            SequenceReader::new(std::io::Cursor::new(bad)).is_err(),
            "flip at byte {i} went unnoticed"
        );
    }
}

#[test]
fn truncation_and_trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = sample_file(dir.path());
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 4, 40, 41, 50, bytes.len() - 1] {
        assert!(SequenceReader::new(std::io::Cursor::new(bytes[..cut].to_vec())).is_err(), "cut {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(SequenceReader::new(std::io::Cursor::new(longer)).is_err());
}

#[test]
fn feature_matrix_layout() {
    let m = FeatureMatrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1e-3]).unwrap();
    let mut bytes = Vec::new();
    m.write_to(&mut bytes).unwrap();
    let mut c = Cursor(&bytes);
    assert_eq!(c.take(4), b"LGFM");
    assert_eq!(c.u32(), 1);
    assert_eq!((c.u32(), c.u32()), (2, 3));
    let vals: Vec<f32> = (0..6).map(|_| c.f32()).collect();
    assert!(c.0.is_empty());
    assert_eq!(vals, m.values().iter().map(|&x| x as f32).collect::<Vec<_>>());
    let back = FeatureMatrix::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.values()[5], 1e-3f32 as f64);
    assert!(FeatureMatrix::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
}
