//! Neighborhood Detail template.
//!
//! A center node is expanded into a perfect computational tree of fixed
//! shape. Each real node at level `ℓ` receives `n_{ℓ+1}` child slots filled
//! from its 1-hop neighbor set: all neighbors in ascending id order when
//! they fit, otherwise a seeded sample without replacement (then sorted).
//! Unused slots are padding, and padding only ever has padding children.
//! The level-order slot list is the node sequence; each row of the
//! embedding sequence is `feature || positional column`.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, GraphStore, NodeId};
use crate::laplacian::{LaplacianBasis, TreeShape};
use crate::linalg::Matrix;
use crate::rng;
use crate::sequence::EmbeddingSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct NdConfig {
    pub shape: TreeShape,
    pub seed: u64,
    /// Keep the tree parent in a node's candidate neighbor set.
    pub include_parent: bool,
}

impl NdConfig {
    pub fn new(branching: Vec<usize>, seed: u64) -> Result<Self> {
        Ok(Self {
            shape: TreeShape::new(branching)?,
            seed,
            include_parent: true,
        })
    }
}

impl Default for NdConfig {
    fn default() -> Self {
        Self::new(vec![10, 10], 0).expect("default shape is valid")
    }
}

/// Level-order tree slots; `None` is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSequence {
    pub center: NodeId,
    pub entries: Vec<Option<NodeId>>,
}

impl NodeSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_tree(g: &GraphStore, v: NodeId, cfg: &NdConfig) -> Result<NodeSequence> {
    g.neighbors(v)?;
    let mut entries = Vec::new();
    fill_tree(g, v, cfg, &mut entries);
    Ok(NodeSequence { center: v, entries })
}

/// Writes the slots for `v` into `entries`, reusing its allocation.
pub(crate) fn fill_tree(g: &GraphStore, v: NodeId, cfg: &NdConfig, entries: &mut Vec<Option<NodeId>>) {
    let shape = &cfg.shape;
    entries.clear();
    entries.resize(shape.size(), None);
    entries[0] = Some(v);
    let mut candidates: Vec<NodeId> = Vec::new();

    for (level, &n) in shape.branching().iter().enumerate() {
        let child_level_start = shape.level_offsets()[level + 1];
        let level_start = shape.level_offsets()[level];
        for p in shape.level_range(level) {
            let Some(u) = entries[p] else { continue };
            let neighbors = g.neighbors_unchecked(u);
            let pool: &[NodeId] = if cfg.include_parent {
                neighbors
            } else {
                let parent_id = shape.parent(p).and_then(|pp| entries[pp]);
                candidates.clear();
                candidates.extend(neighbors.iter().copied().filter(|&w| Some(w) != parent_id));
                &candidates
            };
            let first_child = child_level_start + (p - level_start) * n;
            let slots = &mut entries[first_child..first_child + n];
            if pool.len() <= n {
                for (slot, &w) in slots.iter_mut().zip(pool) {
                    *slot = Some(w);
                }
            } else {
                let mut rng = rng::rng_for(&[rng::TAG_TREE, cfg.seed, v as u64, p as u64]);
                let mut picked: Vec<NodeId> = index::sample(&mut rng, pool.len(), n)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                picked.sort_unstable();
                for (slot, w) in slots.iter_mut().zip(picked) {
                    *slot = Some(w);
                }
            }
        }
    }
}

/// Row `i` is `φ(x) || U_i` for real entries and `0 || U_i` for padding.
pub fn assemble_nd(
    seq: &NodeSequence,
    feats: &FeatureMatrix,
    basis: &LaplacianBasis,
) -> Result<EmbeddingSequence> {
    let mut rows = Matrix::zeros(0, 0);
    let mut mask = Vec::new();
    assemble_nd_into(&seq.entries, feats, basis, &mut rows, &mut mask)?;
    EmbeddingSequence::new(rows, mask, basis.embedding_dim())
}

pub(crate) fn assemble_nd_into(
    entries: &[Option<NodeId>],
    feats: &FeatureMatrix,
    basis: &LaplacianBasis,
    rows: &mut Matrix,
    mask: &mut Vec<bool>,
) -> Result<()> {
    let size = basis.shape().size();
    if entries.len() != size {
        return Err(Error::shape(format!(
            "node sequence has {} entries, basis tree has {size} positions",
            entries.len()
        )));
    }
    let fdim = feats.dim();
    let ldim = basis.embedding_dim();
    if rows.rows() != size || rows.cols() != fdim + ldim {
        *rows = Matrix::zeros(size, fdim + ldim);
    }
    mask.clear();
    for (i, entry) in entries.iter().enumerate() {
        let row = rows.row_mut(i);
        let (feat_seg, lap_seg) = row.split_at_mut(fdim);
        match entry {
            Some(id) => {
                let f = feats.get_row(*id).ok_or_else(|| {
                    Error::shape(format!("no feature row for node {id} ({} rows)", feats.rows()))
                })?;
                feat_seg.copy_from_slice(f);
                mask.push(false);
            }
            None => {
                feat_seg.fill(0.0);
                mask.push(true);
            }
        }
        lap_seg.copy_from_slice(basis.position_embedding(i)?);
    }
    Ok(())
}

/// Template-free layout: the center's own feature row only.
pub fn assemble_center_only(v: NodeId, feats: &FeatureMatrix) -> Result<EmbeddingSequence> {
    let row = feats
        .get_row(v)
        .ok_or_else(|| Error::shape(format!("no feature row for node {v}")))?;
    EmbeddingSequence::new(Matrix::from_vec(1, row.len(), row.to_vec()), vec![false], 0)
}

/// A tree configuration bound to its precomputed basis.
#[derive(Debug, Clone)]
pub struct NdEncoder {
    cfg: NdConfig,
    basis: LaplacianBasis,
}

impl NdEncoder {
    pub fn new(cfg: NdConfig, lap_dim: Option<usize>) -> Result<Self> {
        let basis = LaplacianBasis::new(cfg.shape.clone(), lap_dim)?;
        Ok(Self { cfg, basis })
    }

    pub fn with_basis(cfg: NdConfig, basis: LaplacianBasis) -> Result<Self> {
        if basis.shape() != &cfg.shape {
            return Err(Error::shape("basis was computed for a different tree shape"));
        }
        Ok(Self { cfg, basis })
    }

    pub fn config(&self) -> &NdConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &LaplacianBasis {
        &self.basis
    }

    pub fn encode(&self, g: &GraphStore, feats: &FeatureMatrix, v: NodeId) -> Result<EmbeddingSequence> {
        let seq = build_tree(g, v, &self.cfg)?;
        assemble_nd(&seq, feats, &self.basis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // A=0 B=1 C=2 D=3 E=4 F=5 G=6
    fn figure_graph() -> GraphStore {
        GraphStore::from_edges(7, [(0, 1), (0, 2), (0, 3), (1, 6), (3, 4), (3, 5)]).unwrap()
    }

    #[test]
    fn figure_example_sequence() {
        let g = figure_graph();
        let (a, b, c, d, e, f, gg) = (0, 1, 2, 3, 4, 5, 6);
        let want = vec![
            Some(a),
            Some(b),
            Some(c),
            Some(d),
            Some(a),
            Some(gg),
            None,
            Some(a),
            None,
            None,
            Some(a),
            Some(e),
            Some(f),
        ];
        for seed in [0, 1, 42, u64::MAX] {
            let cfg = NdConfig::new(vec![3, 3], seed).unwrap();
            assert_eq!(build_tree(&g, a, &cfg).unwrap().entries, want);
        }
    }

    #[test]
    fn isolated_center_pads() {
        let g = GraphStore::from_edges(3, [(1, 2)]).unwrap();
        let cfg = NdConfig::new(vec![2], 5).unwrap();
        assert_eq!(build_tree(&g, 0, &cfg).unwrap().entries, vec![Some(0), None, None]);
        assert!(build_tree(&g, 3, &cfg).is_err());
    }

    #[test]
    fn parent_exclusion() {
        let g = figure_graph();
        let mut cfg = NdConfig::new(vec![3, 3], 0).unwrap();
        cfg.include_parent = false;
        let seq = build_tree(&g, 0, &cfg).unwrap();
        // B's children: G only; D's children: E, F
        assert_eq!(&seq.entries[4..7], &[Some(6), None, None]);
        assert_eq!(&seq.entries[10..13], &[Some(4), Some(5), None]);
    }

    #[test]
    fn sampling_is_seeded() {
        let star = GraphStore::from_edges(21, (1..21).map(|i| (0, i))).unwrap();
        let cfg = NdConfig::new(vec![5], 11).unwrap();
        let s1 = build_tree(&star, 0, &cfg).unwrap();
        assert_eq!(s1, build_tree(&star, 0, &cfg).unwrap());
        let picked: Vec<_> = s1.entries[1..].iter().map(|e| e.unwrap()).collect();
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let other = build_tree(&star, 0, &NdConfig::new(vec![5], 12).unwrap()).unwrap();
        assert_ne!(s1, other);
    }

    #[test]
    fn assembly_rows() {
        let g = figure_graph();
        let feats = FeatureMatrix::new(7, 4, (0..28).map(|x| x as f64 + 1.0).collect()).unwrap();
        let enc = NdEncoder::new(NdConfig::new(vec![3, 3], 0).unwrap(), None).unwrap();
        let es = enc.encode(&g, &feats, 0).unwrap();
        assert_eq!((es.len(), es.row_dim()), (13, 17));
        assert_eq!(&es.row(0)[..4], feats.row(0));
        assert_eq!(&es.row(0)[4..], enc.basis().position_embedding(0).unwrap());
        assert!(es.pad_mask()[6]);
        assert!(es.row(6)[..4].iter().all(|&x| x == 0.0));
        assert_eq!(&es.row(6)[4..], enc.basis().position_embedding(6).unwrap());
    }

    #[test]
    fn assembly_errors() {
        let g = figure_graph();
        let small = FeatureMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let enc = NdEncoder::new(NdConfig::new(vec![3, 3], 0).unwrap(), None).unwrap();
        assert!(enc.encode(&g, &small, 0).is_err());
        let seq = build_tree(&g, 0, &NdConfig::new(vec![2], 0).unwrap()).unwrap();
        let feats = FeatureMatrix::new(7, 1, vec![0.0; 7]).unwrap();
        assert!(assemble_nd(&seq, &feats, enc.basis()).is_err());
    }

    #[test]
    fn center_only() {
        let feats = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let es = assemble_center_only(1, &feats).unwrap();
        assert_eq!((es.len(), es.row_dim()), (1, 2));
        assert_eq!(es.row(0), feats.row(1));
        assert_eq!(es.pad_mask(), &[false]);
        assert!(assemble_center_only(3, &feats).is_err());
    }
}
