//! Batched encoding of many centers with any template.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, GraphStore, NodeId};
use crate::ho::{assemble_ho, compute_hops, HopTable};
use crate::laplacian::LaplacianBasis;
use crate::linalg::Matrix;
use crate::nd::{assemble_center_only, assemble_nd_into, fill_tree, NdConfig, NdEncoder};
use crate::par::Executor;
use crate::seqfile::{SequenceHeader, SequenceWriter, TemplateKind};
use crate::sequence::EmbeddingSequence;

/// Nodes encoded per parallel batch before results are handed to the writer.
pub const ENCODE_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub enum Template {
    Nd(NdEncoder),
    Ho { table: HopTable, num_hops: usize },
    Center,
}

impl Template {
    pub fn nd(cfg: NdConfig, lap_dim: Option<usize>) -> Result<Self> {
        Ok(Template::Nd(NdEncoder::new(cfg, lap_dim)?))
    }

    pub fn nd_with_basis(cfg: NdConfig, basis: LaplacianBasis) -> Result<Self> {
        Ok(Template::Nd(NdEncoder::with_basis(cfg, basis)?))
    }

    pub fn ho(g: &GraphStore, feats: &FeatureMatrix, num_hops: usize, exec: &Executor) -> Result<Self> {
        Ok(Template::Ho {
            table: compute_hops(g, feats, num_hops, exec)?,
            num_hops,
        })
    }

    pub fn kind(&self) -> TemplateKind {
        match self {
            Template::Nd(_) => TemplateKind::Nd,
            Template::Ho { .. } => TemplateKind::Ho,
            Template::Center => TemplateKind::Center,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Template::Nd(enc) => enc.config().shape.size(),
            Template::Ho { num_hops, .. } => *num_hops,
            Template::Center => 1,
        }
    }

    pub fn lap_dim(&self) -> usize {
        match self {
            Template::Nd(enc) => enc.basis().embedding_dim(),
            _ => 0,
        }
    }

    pub fn header(&self, feature_dim: usize, seed: u64) -> SequenceHeader {
        SequenceHeader::new(self.kind(), feature_dim, self.lap_dim(), self.seq_len(), seed)
    }

    pub fn encode(&self, g: &GraphStore, feats: &FeatureMatrix, v: NodeId) -> Result<EmbeddingSequence> {
        match self {
            Template::Nd(enc) => enc.encode(g, feats, v),
            Template::Ho { table, num_hops } => assemble_ho(table, v, *num_hops),
            Template::Center => {
                g.neighbors(v)?;
                assemble_center_only(v, feats)
            }
        }
    }
}

/// Encodes `nodes` in input order. Each worker reuses its scratch buffers
/// across the ND nodes it handles.
pub fn encode_nodes(
    tpl: &Template,
    g: &GraphStore,
    feats: &FeatureMatrix,
    nodes: &[NodeId],
    exec: &Executor,
) -> Result<Vec<EmbeddingSequence>> {
    if let Some(&v) = nodes.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            id: v,
            num_nodes: g.num_nodes(),
        });
    }
    let results = match tpl {
        Template::Nd(enc) => {
            let per_task = nodes.len().div_ceil(exec.threads().max(1) * 4).max(1);
            let chunks: Vec<&[NodeId]> = nodes.chunks(per_task).collect();
            exec.map(&chunks, |chunk| encode_nd_chunk(enc, g, feats, chunk))
                .into_iter()
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect()
        }
        _ => exec
            .map(nodes, |&v| tpl.encode(g, feats, v))
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(results)
}

fn encode_nd_chunk(
    enc: &NdEncoder,
    g: &GraphStore,
    feats: &FeatureMatrix,
    chunk: &[NodeId],
) -> Result<Vec<EmbeddingSequence>> {
    let mut entries = Vec::new();
    let mut out = Vec::with_capacity(chunk.len());
    for &v in chunk {
        fill_tree(g, v, enc.config(), &mut entries);
        let mut rows = Matrix::zeros(0, 0);
        let mut mask = Vec::new();
        assemble_nd_into(&entries, feats, enc.basis(), &mut rows, &mut mask)?;
        out.push(EmbeddingSequence::new(rows, mask, enc.basis().embedding_dim())?);
    }
    Ok(out)
}

/// Writes one record per node (task code 0), in the order given, encoding
/// `ENCODE_CHUNK` nodes at a time so memory stays bounded.
pub fn write_node_sequences(
    path: impl AsRef<Path>,
    tpl: &Template,
    g: &GraphStore,
    feats: &FeatureMatrix,
    nodes: &[NodeId],
    seed: u64,
    exec: &Executor,
) -> Result<SequenceHeader> {
    let mut w = SequenceWriter::create(path, tpl.header(feats.dim(), seed))?;
    for chunk in nodes.chunks(ENCODE_CHUNK) {
        let seqs = encode_nodes(tpl, g, feats, chunk, exec)?;
        for (&v, s) in chunk.iter().zip(&seqs) {
            w.write_sample(&[v], 0, &[s])?;
        }
    }
    w.finish()
}
