//! The trainable map from node-embedding rows to token-embedding space.
//!
//! `e = W2 · act(W1 · h + b1) + b2`. All math is float64; weight files
//! store float32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::binio;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

const WEIGHT_MAGIC: [u8; 4] = *b"LGPJ";

// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// tanh approximation
    Gelu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Gelu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Gelu),
            2 => Ok(Activation::Identity),
            c => Err(Error::invalid(format!("unknown activation code {c}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

/// Same layout as [`ProjectorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ProjectorParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, activation: Activation, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("projector dims must be >= 1"));
        }
        let mut rng = rng::rng_for(&[rng::TAG_INIT, seed]);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect())
        };
        let w1 = glorot(hidden_dim, in_dim);
        let w2 = glorot(out_dim, hidden_dim);
        Ok(Self {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>, activation: Activation) -> Result<Self> {
        if w1.rows() != b1.len() || w2.cols() != w1.rows() || w2.rows() != b2.len() || w1.cols() == 0 {
            return Err(Error::shape("inconsistent projector parameter shapes"));
        }
        let p = Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        };
        if p.flat().any(|x| !x.is_finite()) {
            return Err(Error::invalid("projector parameters must be finite"));
        }
        Ok(p)
    }

    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Parameters in declaration order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .as_slice()
            .iter()
            .chain(&self.b1)
            .chain(self.w2.as_slice())
            .chain(&self.b2)
            .copied()
    }

    pub(crate) fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .as_mut_slice()
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.as_mut_slice().iter_mut())
            .chain(self.b2.iter_mut())
    }

    fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        let n_w1 = self.w1.as_slice().len();
        if i < n_w1 {
            return &mut self.w1.as_mut_slice()[i];
        }
        i -= n_w1;
        if i < self.b1.len() {
            return &mut self.b1[i];
        }
        i -= self.b1.len();
        let n_w2 = self.w2.as_slice().len();
        if i < n_w2 {
            return &mut self.w2.as_mut_slice()[i];
        }
        &mut self.b2[i - n_w2]
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "projector expects {} inputs, got {}",
                self.in_dim(),
                h.len()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.w1.matvec(h);
        z.iter_mut().zip(&self.b1).for_each(|(z, b)| *z += b);
        z
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_input(h)?;
        let a: Vec<f64> = self
            .pre_activation(h)
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect();
        let mut e = self.w2.matvec(&a);
        e.iter_mut().zip(&self.b2).for_each(|(e, b)| *e += b);
        Ok(e)
    }

    pub fn backward(&self, h: &[f64], grad_e: &[f64]) -> Result<(ProjectorGrads, Vec<f64>)> {
        let mut grads = ProjectorGrads::zeros_like(self);
        let grad_h = self.backward_accumulate(h, grad_e, &mut grads)?;
        Ok((grads, grad_h))
    }

    /// Adds this row's parameter gradients into `grads`; returns `∂/∂h`.
    pub fn backward_accumulate(&self, h: &[f64], grad_e: &[f64], grads: &mut ProjectorGrads) -> Result<Vec<f64>> {
        self.check_input(h)?;
        if grad_e.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "gradient has {} entries, projector outputs {}",
                grad_e.len(),
                self.out_dim()
            )));
        }
        let z = self.pre_activation(h);
        let a: Vec<f64> = z.iter().map(|&z| self.activation.apply(z)).collect();

        for (o, &g) in grad_e.iter().enumerate() {
            grads.b2[o] += g;
            if g != 0.0 {
                for (w, &ak) in grads.w2.row_mut(o).iter_mut().zip(&a) {
                    *w += g * ak;
                }
            }
        }
        let grad_a = self.w2.matvec_t(grad_e);
        let grad_z: Vec<f64> = grad_a
            .iter()
            .zip(&z)
            .map(|(ga, &z)| ga * self.activation.derivative(z))
            .collect();
        for (k, &g) in grad_z.iter().enumerate() {
            grads.b1[k] += g;
            if g != 0.0 {
                for (w, &hj) in grads.w1.row_mut(k).iter_mut().zip(h) {
                    *w += g * hj;
                }
            }
        }
        Ok(self.w1.matvec_t(&grad_z))
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
        w.write_all(&WEIGHT_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        for d in [self.in_dim(), self.hidden_dim(), self.out_dim()] {
            w.write_all(&binio::u32_dim(d, "projector dim")?.to_le_bytes())?;
        }
        w.write_all(&[self.activation.code()])?;
        binio::write_f32s(w, self.flat())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, WEIGHT_MAGIC)?;
        binio::read_version(r)?;
        let in_dim = binio::read_u32(r, "in_dim")? as usize;
        let hidden = binio::read_u32(r, "hidden_dim")? as usize;
        let out = binio::read_u32(r, "out_dim")? as usize;
        let activation = Activation::from_code(binio::read_u8(r, "activation")?)?;
        let mut take = |n: usize, what: &str| -> Result<Vec<f64>> {
            Ok(binio::read_f32s(r, n, what)?.into_iter().map(f64::from).collect())
        };
        let w1 = Matrix::from_vec(hidden, in_dim, take(hidden * in_dim, "W1")?);
        let b1 = take(hidden, "b1")?;
        let w2 = Matrix::from_vec(out, hidden, take(out * hidden, "W2")?);
        let b2 = take(out, "b2")?;
        Self::from_parts(w1, b1, w2, b2, activation)
    }
}

impl ProjectorGrads {
    pub fn zeros_like(p: &ProjectorParams) -> Self {
        Self {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: vec![0.0; p.b1.len()],
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .as_slice()
            .iter()
            .chain(&self.b1)
            .chain(self.w2.as_slice())
            .chain(&self.b2)
            .copied()
    }

    pub(crate) fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .as_mut_slice()
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.as_mut_slice().iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn scale(&mut self, s: f64) {
        self.flat_mut().for_each(|g| *g *= s);
    }

    pub fn add_assign(&mut self, other: &ProjectorGrads) {
        for (a, b) in self.flat_mut().zip(other.flat()) {
            *a += b;
        }
    }
}

/// Below this magnitude gradients are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
const GRAD_CHECK_FULL_LIMIT: usize = 10_000;
const GRAD_CHECK_SAMPLE: usize = 1_000;

/// Compares the analytic gradient returned by `loss` against central
/// differences and returns the largest relative error
/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
///
/// Every coordinate is checked unless the projector has more than 10⁴
/// parameters, in which case a seeded subsample of 1000 is used.
pub fn grad_check<F>(p: &ProjectorParams, loss: F, eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&ProjectorParams) -> Result<(f64, ProjectorGrads)>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let (value, analytic) = loss(p)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let analytic: Vec<f64> = analytic.flat().collect();
    let n = p.num_params();
    let coords: Vec<usize> = if n > GRAD_CHECK_FULL_LIMIT {
        let mut rng = rng::rng_for(&[rng::TAG_GRADCHECK, seed]);
        let mut c = index::sample(&mut rng, n, GRAD_CHECK_SAMPLE).into_vec();
        c.sort_unstable();
        c
    } else {
        (0..n).collect()
    };

    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = *probe.coord_mut(i);
        *probe.coord_mut(i) = orig + eps;
        let plus = loss(&probe)?.0;
        *probe.coord_mut(i) = orig - eps;
        let minus = loss(&probe)?.0;
        *probe.coord_mut(i) = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
