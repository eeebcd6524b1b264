//! Hop-Field Overview template: iterated neighbor means of node features.
//!
//! `H^0` is the feature matrix and row `v` of `H^i` is the mean of `H^{i-1}`
//! over `v`'s 1-hop neighbors (zero for isolated nodes). A center is
//! represented by its rows `h_v^0 .. h_v^{K-1}` in hop order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, GraphStore, NodeId};
use crate::linalg::Matrix;
use crate::par::Executor;
use crate::sequence::EmbeddingSequence;

const HOP_MAGIC: [u8; 4] = *b"LGHT";

pub const DEFAULT_NUM_HOPS: usize = 4;

// rows per parallel task within one sweep
const SWEEP_CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct HopTable {
    dim: usize,
    hops: Vec<Matrix>,
}

impl HopTable {
    pub fn num_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.hops[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hop(&self, i: usize) -> &Matrix {
        &self.hops[i]
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&HOP_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.num_hops(), "K")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.num_nodes(), "rows")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.dim, "dim")?.to_le_bytes())?;
        for h in &self.hops {
            binio::write_f32s(w, h.as_slice().iter().copied())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    /// Values come back at float32 precision.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, HOP_MAGIC)?;
        binio::read_version(r)?;
        let k = binio::read_u32(r, "K")? as usize;
        let rows = binio::read_u32(r, "rows")? as usize;
        let dim = binio::read_u32(r, "dim")? as usize;
        if k == 0 || dim == 0 {
            return Err(Error::shape("hop table needs K >= 1 and dim >= 1"));
        }
        let hops = (0..k)
            .map(|i| {
                let vals = binio::read_f32s(r, rows * dim, &format!("hop {i}"))?;
                Ok(Matrix::from_vec(rows, dim, vals.into_iter().map(f64::from).collect()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, hops })
    }
}

/// Computes `H^0 .. H^{K-1}`. Each sweep reads only the previous hop, and
/// every row sums its neighbors in ascending id order, so the result does
/// not depend on the executor's thread count.
pub fn compute_hops(g: &GraphStore, feats: &FeatureMatrix, num_hops: usize, exec: &Executor) -> Result<HopTable> {
    if num_hops == 0 {
        return Err(Error::invalid("number of hops must be >= 1"));
    }
    if feats.rows() != g.num_nodes() {
        return Err(Error::shape(format!(
            "{} feature rows for {} nodes",
            feats.rows(),
            g.num_nodes()
        )));
    }
    let dim = feats.dim();
    let n = g.num_nodes();
    let mut hops = Vec::with_capacity(num_hops);
    hops.push(Matrix::from_vec(n, dim, feats.values().to_vec()));
    for _ in 1..num_hops {
        let prev = hops.last().expect("H^0 present");
        let mut next = Matrix::zeros(n, dim);
        exec.for_each_chunk_mut(next.as_mut_slice(), SWEEP_CHUNK_ROWS * dim, |chunk_idx, out| {
            let first = chunk_idx * SWEEP_CHUNK_ROWS;
            for (offset, row) in out.chunks_exact_mut(dim).enumerate() {
                let v = first + offset;
                let nbrs = g.neighbors_unchecked(v);
                if nbrs.is_empty() {
                    continue;
                }
                for &w in nbrs {
                    for (o, x) in row.iter_mut().zip(prev.row(w)) {
                        *o += x;
                    }
                }
                let inv = 1.0 / nbrs.len() as f64;
                row.iter_mut().for_each(|o| *o *= inv);
            }
        });
        hops.push(next);
    }
    Ok(HopTable { dim, hops })
}

/// Rows `[h_v^0, .., h_v^{K-1}]`.
pub fn assemble_ho(table: &HopTable, v: NodeId, num_hops: usize) -> Result<EmbeddingSequence> {
    if v >= table.num_nodes() {
        return Err(Error::NodeOutOfRange {
            id: v,
            num_nodes: table.num_nodes(),
        });
    }
    if num_hops == 0 || num_hops > table.num_hops() {
        return Err(Error::invalid(format!(
            "requested {num_hops} hops, table holds {}",
            table.num_hops()
        )));
    }
    let mut data = Vec::with_capacity(num_hops * table.dim);
    for h in &table.hops[..num_hops] {
        data.extend_from_slice(h.row(v));
    }
    EmbeddingSequence::new(
        Matrix::from_vec(num_hops, table.dim, data),
        vec![false; num_hops],
        0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn feats(rows: usize, dim: usize) -> FeatureMatrix {
        FeatureMatrix::new(rows, dim, (0..rows * dim).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn triangle_first_hop() {
        let g = GraphStore::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = feats(3, 2);
        let t = compute_hops(&g, &f, 2, &Executor::sequential()).unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(
                t.hop(1)[(0, c)],
                (f.row(1)[c] + f.row(2)[c]) / 2.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn path_second_hop_returns_to_center() {
        let g = GraphStore::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let f = feats(3, 3);
        let t = compute_hops(&g, &f, 3, &Executor::sequential()).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(t.hop(2)[(1, c)], f.row(1)[c], epsilon = 1e-15);
        }
    }

    #[test]
    fn isolated_node_zero_rows() {
        let g = GraphStore::from_edges(3, [(0, 1)]).unwrap();
        let t = compute_hops(&g, &feats(3, 2), 4, &Executor::sequential()).unwrap();
        for i in 1..4 {
            assert!(t.hop(i).row(2).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn assemble_examples() {
        let g = GraphStore::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let f = feats(4, 5);
        let t = compute_hops(&g, &f, 4, &Executor::sequential()).unwrap();
        let one = assemble_ho(&t, 2, 1).unwrap();
        assert_eq!(one.row(0), f.row(2));
        let four = assemble_ho(&t, 2, 4).unwrap();
        assert_eq!((four.len(), four.row_dim(), four.lap_dim()), (4, 5, 0));
        assert!(four.pad_mask().iter().all(|&p| !p));
        assert!(assemble_ho(&t, 4, 1).is_err());
        assert!(assemble_ho(&t, 0, 5).is_err());
        assert!(compute_hops(&g, &f, 0, &Executor::sequential()).is_err());
    }

    #[test]
    fn constant_features_stay_constant() {
        let g = GraphStore::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let f = FeatureMatrix::new(4, 2, vec![0.5; 8]).unwrap();
        let t = compute_hops(&g, &f, 4, &Executor::sequential()).unwrap();
        let s = assemble_ho(&t, 3, 4).unwrap();
        assert!(s.rows().as_slice().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let n = 3000;
        let g = GraphStore::from_edges(n, (0..n).map(|i| (i, (i * 7 + 3) % n))).unwrap();
        let f = feats(n, 3);
        let a = compute_hops(&g, &f, 4, &Executor::sequential()).unwrap();
        let b = compute_hops(&g, &f, 4, &Executor::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cache_round_trip() {
        let g = GraphStore::from_edges(3, [(0, 1)]).unwrap();
        let t = compute_hops(&g, &feats(3, 2), 2, &Executor::sequential()).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 2 * 3 * 2 * 4);
        let back = HopTable::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.num_hops(), 2);
        assert!(back.hop(1).max_abs_diff(t.hop(1)) < 1e-7);
    }
}
