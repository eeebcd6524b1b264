//! Positional basis of the fixed-shape computational tree.
//!
//! The tree for branching `[n_1, .., n_L]` is perfect: every position at
//! level `ℓ` has exactly `n_{ℓ+1}` child positions, indexed in level order.
//! Its symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}` is
//! diagonalized once as `L = Uᵀ diag(Λ) U`, where row `r` of `U` is the
//! `r`-th eigenvector. Sequence position `i` is embedded as column `i` of `U`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const BASIS_MAGIC: [u8; 4] = *b"LGLB";

pub const DEFAULT_JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
// Eigenvalues closer than this are treated as one degenerate eigenvalue.
const DEGENERACY_TOL: f64 = 1e-9;
// Components whose magnitudes differ by less than this count as tied when
// choosing the sign-defining component.
const MAGNITUDE_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeShape {
    branching: Vec<usize>,
    level_offsets: Vec<usize>,
    size: usize,
}

impl TreeShape {
    /// An empty branching list is the degenerate single-position tree.
    pub fn new(branching: Vec<usize>) -> Result<Self> {
        if branching.contains(&0) {
            return Err(Error::invalid(format!(
                "branching factors must be >= 1, got {branching:?}"
            )));
        }
        let mut level_offsets = Vec::with_capacity(branching.len() + 1);
        let mut start = 0usize;
        let mut width = 1usize;
        level_offsets.push(0);
        for &n in &branching {
            start = start
                .checked_add(width)
                .ok_or_else(|| Error::invalid("tree too large"))?;
            width = width
                .checked_mul(n)
                .ok_or_else(|| Error::invalid("tree too large"))?;
            level_offsets.push(start);
        }
        let size = start + width;
        Ok(Self {
            branching,
            level_offsets,
            size,
        })
    }

    pub fn branching(&self) -> &[usize] {
        &self.branching
    }

    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    /// Start index of each level; `level_offsets()[0] == 0` is the root.
    pub fn level_offsets(&self) -> &[usize] {
        &self.level_offsets
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn level_range(&self, level: usize) -> Range<usize> {
        let start = self.level_offsets[level];
        let end = self
            .level_offsets
            .get(level + 1)
            .copied()
            .unwrap_or(self.size);
        start..end
    }

    pub fn level_of(&self, position: usize) -> usize {
        assert!(position < self.size);
        self.level_offsets
            .partition_point(|&off| off <= position)
            - 1
    }

    /// Index of child `j` of `position`, or `None` on the last level.
    pub fn child(&self, position: usize, j: usize) -> Option<usize> {
        let level = self.level_of(position);
        let n = *self.branching.get(level)?;
        assert!(j < n);
        Some(self.level_offsets[level + 1] + (position - self.level_offsets[level]) * n + j)
    }

    pub fn parent(&self, position: usize) -> Option<usize> {
        let level = self.level_of(position);
        if level == 0 {
            return None;
        }
        let n = self.branching[level - 1];
        Some(self.level_offsets[level - 1] + (position - self.level_offsets[level]) / n)
    }
}

/// Dense 0/1 adjacency of the perfect tree in level order.
pub fn tree_adjacency(shape: &TreeShape) -> Matrix {
    let mut a = Matrix::zeros(shape.size(), shape.size());
    for level in 0..shape.depth() {
        let n = shape.branching[level];
        for p in shape.level_range(level) {
            for j in 0..n {
                let c = shape.child(p, j).expect("inner level has children");
                a[(p, c)] = 1.0;
                a[(c, p)] = 1.0;
            }
        }
    }
    a
}

/// `I - D^{-1/2} A D^{-1/2}`; rows and columns of isolated vertices are zero.
pub fn normalized_laplacian(adjacency: &Matrix) -> Result<Matrix> {
    if let Some((row, col)) = adjacency.is_symmetric(0.0) {
        return Err(Error::NotSymmetric { row, col });
    }
    let n = adjacency.rows();
    if let Some(i) = (0..n).find(|&i| adjacency[(i, i)] != 0.0) {
        return Err(Error::invalid(format!("adjacency has nonzero diagonal at {i}")));
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adjacency.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        if inv_sqrt_deg[i] > 0.0 {
            l[(i, i)] = 1.0;
        }
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 {
                l[(i, j)] -= a * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
    }
    Ok(l)
}

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Row `r` is the unit eigenvector for `values[r]`.
    pub vectors: Matrix,
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut m: f64 = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            m = m.max(a[(p, q)].abs());
        }
    }
    m
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps rotate every `(p, q)` pair in row-major order until the largest
/// off-diagonal magnitude is at most `tol`. Output is canonicalized: each
/// eigenvector's largest-magnitude component (lowest index on ties) is
/// positive, pairs are sorted by ascending eigenvalue, and eigenvectors of
/// a degenerate eigenvalue are ordered lexicographically descending.
pub fn eigendecompose(matrix: &Matrix, tol: f64) -> Result<Eigen> {
    if matrix.rows() != matrix.cols() {
        return Err(Error::shape("eigendecompose needs a square matrix"));
    }
    if let Some((row, col)) = matrix.is_symmetric(1e-12) {
        return Err(Error::NotSymmetric { row, col });
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("jacobi tolerance must be positive"));
    }
    let n = matrix.rows();
    let mut a = matrix.clone();
    let mut v = Matrix::identity(n);

    let mut sweeps = 0;
    loop {
        let off = max_off_diagonal(&a);
        if off <= tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_diagonal: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    // columns of v are eigenvectors
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|r| {
            let mut vec: Vec<f64> = (0..n).map(|k| v[(k, r)]).collect();
            fix_sign(&mut vec);
            (a[(r, r)], vec)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut values = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n * n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= DEGENERACY_TOL {
            end += 1;
        }
        let cluster = &mut pairs[start..end];
        let mean = cluster.iter().map(|p| p.0).sum::<f64>() / cluster.len() as f64;
        cluster.sort_by(|x, y| lexicographic(&y.1, &x.1));
        for (_, vec) in cluster.iter() {
            values.push(mean);
            rows.extend_from_slice(vec);
        }
        start = end;
    }
    Ok(Eigen {
        values,
        vectors: Matrix::from_vec(n, n, rows),
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(lead) = v.iter().find(|x| x.abs() >= max - MAGNITUDE_TIE_TOL) {
        if *lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBasis {
    shape: TreeShape,
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    embedding_dim: usize,
    // position-major copy: row i holds the embedding of position i
    positions: Matrix,
}

impl LaplacianBasis {
    /// Full spectrum when `embedding_dim` is `None`; otherwise the eigenpairs
    /// with the `embedding_dim` smallest eigenvalues.
    pub fn new(shape: TreeShape, embedding_dim: Option<usize>) -> Result<Self> {
        let l = normalized_laplacian(&tree_adjacency(&shape))?;
        let eig = eigendecompose(&l, DEFAULT_JACOBI_TOL)?;
        // the spectrum of a normalized Laplacian lies in [0, 2]; drop rounding noise
        let values = eig.values.into_iter().map(|v| v.clamp(0.0, 2.0)).collect();
        Self::from_parts(shape, values, eig.vectors, embedding_dim)
    }

    fn from_parts(
        shape: TreeShape,
        eigenvalues: Vec<f64>,
        eigenvectors: Matrix,
        embedding_dim: Option<usize>,
    ) -> Result<Self> {
        let size = shape.size();
        let embedding_dim = embedding_dim.unwrap_or(size);
        if embedding_dim == 0 || embedding_dim > size {
            return Err(Error::invalid(format!(
                "embedding_dim {embedding_dim} must lie in 1..={size}"
            )));
        }
        let mut positions = Matrix::zeros(size, embedding_dim);
        for i in 0..size {
            for r in 0..embedding_dim {
                positions[(i, r)] = eigenvectors[(r, i)];
            }
        }
        Ok(Self {
            shape,
            eigenvalues,
            eigenvectors,
            embedding_dim,
            positions,
        })
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn position_embedding(&self, i: usize) -> Result<&[f64]> {
        if i >= self.shape.size() {
            return Err(Error::invalid(format!(
                "position {i} out of range for tree of size {}",
                self.shape.size()
            )));
        }
        Ok(self.positions.row(i))
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
        w.write_all(&BASIS_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.shape.size(), "size")?.to_le_bytes())?;
        w.write_all(&binio::u32_dim(self.embedding_dim, "embedding_dim")?.to_le_bytes())?;
        binio::write_f64s(w, &self.eigenvalues)?;
        binio::write_f64s(w, self.eigenvectors.as_slice())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, shape: TreeShape) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), shape)
    }

    /// The file does not record branching factors, so the caller supplies
    /// the shape; its size must match the stored one.
    pub fn read_from<R: Read>(r: &mut R, shape: TreeShape) -> Result<Self> {
        binio::read_magic(r, BASIS_MAGIC)?;
        binio::read_version(r)?;
        let size = binio::read_u32(r, "size")? as usize;
        let embedding_dim = binio::read_u32(r, "embedding_dim")? as usize;
        if size != shape.size() {
            return Err(Error::shape(format!(
                "basis file has size {size}, shape has {}",
                shape.size()
            )));
        }
        let values = binio::read_f64s(r, size, "eigenvalues")?;
        let vectors = binio::read_f64s(r, size * size, "eigenvectors")?;
        Self::from_parts(
            shape,
            values,
            Matrix::from_vec(size, size, vectors),
            Some(embedding_dim),
        )
    }
}

/// `max |U Uᵀ - I|`
pub fn orthonormality_residual(u: &Matrix) -> f64 {
    u.matmul(&u.transpose())
        .max_abs_diff(&Matrix::identity(u.rows()))
}

/// `max |Uᵀ diag(Λ) U - L|`
pub fn reconstruction_residual(values: &[f64], u: &Matrix, l: &Matrix) -> f64 {
    let mut scaled = u.clone();
    for (r, &lambda) in values.iter().enumerate() {
        scaled.row_mut(r).iter_mut().for_each(|x| *x *= lambda);
    }
    u.transpose().matmul(&scaled).max_abs_diff(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shape_sizes() {
        assert_eq!(TreeShape::new(vec![3, 3]).unwrap().size(), 13);
        assert_eq!(TreeShape::new(vec![10, 10]).unwrap().size(), 111);
        assert_eq!(TreeShape::new(vec![2, 3, 4]).unwrap().size(), 1 + 2 + 6 + 24);
        assert_eq!(TreeShape::new(vec![]).unwrap().size(), 1);
        assert!(TreeShape::new(vec![3, 0]).is_err());
        let s = TreeShape::new(vec![3, 3]).unwrap();
        assert_eq!(s.level_offsets(), &[0, 1, 4]);
        assert_eq!(s.child(2, 1), Some(8));
        assert_eq!(s.parent(8), Some(2));
        assert_eq!(s.child(8, 0), None);
    }

    #[test]
    fn adjacency_examples() {
        let a = tree_adjacency(&TreeShape::new(vec![1]).unwrap());
        assert_eq!(a.as_slice(), &[0.0, 1.0, 1.0, 0.0]);

        let a = tree_adjacency(&TreeShape::new(vec![3, 3]).unwrap());
        assert_eq!(a.rows(), 13);
        let root: Vec<f64> = a.row(0).to_vec();
        assert_eq!(&root[1..4], &[1.0, 1.0, 1.0]);
        assert!(root[4..].iter().all(|&x| x == 0.0));

        let a = tree_adjacency(&TreeShape::new(vec![2]).unwrap());
        assert_eq!(a[(1, 2)], 0.0);
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(0, 2)], 1.0);
    }

    #[test]
    fn laplacian_examples() {
        let edge = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            normalized_laplacian(&edge).unwrap().as_slice(),
            &[1.0, -1.0, -1.0, 1.0]
        );

        let star = tree_adjacency(&TreeShape::new(vec![3]).unwrap());
        let l = normalized_laplacian(&star).unwrap();
        for leaf in 1..4 {
            assert_abs_diff_eq!(l[(0, leaf)], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        }

        let zero = Matrix::zeros(1, 1);
        assert_eq!(normalized_laplacian(&zero).unwrap().as_slice(), &[0.0]);

        let asym = Matrix::from_vec(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            normalized_laplacian(&asym),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn two_by_two_analytic() {
        let l = Matrix::from_vec(2, 2, vec![1.0, -1.0, -1.0, 1.0]);
        let eig = eigendecompose(&l, DEFAULT_JACOBI_TOL).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(eig.values[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-14);
        let u = eig.vectors.as_slice();
        for (got, want) in u.iter().zip([h, h, h, -h]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let asym = Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            eigendecompose(&asym, 1e-10),
            Err(Error::NotSymmetric { .. })
        ));
        let l = Matrix::identity(2);
        assert!(eigendecompose(&l, 0.0).is_err());
    }

    #[test]
    fn single_edge_basis_position_zero() {
        let basis = LaplacianBasis::new(TreeShape::new(vec![1]).unwrap(), None).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let e = basis.position_embedding(0).unwrap();
        assert_abs_diff_eq!(e[0], h, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], h, epsilon = 1e-14);
        assert!(basis.position_embedding(2).is_err());
    }

    #[test]
    fn column_norms_sum_to_embedding_dim() {
        let basis = LaplacianBasis::new(TreeShape::new(vec![3, 2]).unwrap(), Some(4)).unwrap();
        let mut total = 0.0;
        for i in 0..basis.shape().size() {
            let e = basis.position_embedding(i).unwrap();
            assert_eq!(e.len(), 4);
            let sq: f64 = e.iter().map(|x| x * x).sum();
            assert!(sq <= 1.0 + 1e-12);
            total += sq;
        }
        assert_abs_diff_eq!(total, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn truncation_bounds() {
        let shape = TreeShape::new(vec![2]).unwrap();
        assert!(LaplacianBasis::new(shape.clone(), Some(0)).is_err());
        assert!(LaplacianBasis::new(shape, Some(4)).is_err());
    }

    #[test]
    fn cache_file_round_trip() {
        let shape = TreeShape::new(vec![3, 3]).unwrap();
        let basis = LaplacianBasis::new(shape.clone(), Some(5)).unwrap();
        let mut buf = Vec::new();
        basis.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 13 * 8 + 169 * 8);
        let back = LaplacianBasis::read_from(&mut buf.as_slice(), shape).unwrap();
        assert_eq!(back, basis);
        let other = TreeShape::new(vec![2]).unwrap();
        assert!(LaplacianBasis::read_from(&mut buf.as_slice(), other).is_err());
    }
}
