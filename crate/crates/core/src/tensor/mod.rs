//! Dense `f64` tensors with a tape-based reverse-mode gradient graph, the
//! AdamW optimizer and a finite-difference gradient checker.

mod check;
mod graph;
mod optim;

pub use check::grad_check;
pub use graph::{log_softmax, Graph, Var};
pub use optim::{AdamW, AdamWConfig};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("query row {0} has every key masked")]
    AllMaskedRow(usize),
}

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "data length does not match shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor { shape: vec![rows.len(), cols], data: rows.concat() }
    }

    /// Uniform draws in `[-bound, bound)`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Prng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a matrix; vectors are treated as a single row.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Seeded xoshiro256++ generator; the only randomness source in the crate.
#[derive(Debug, Clone)]
pub struct Prng(Xoshiro256PlusPlus);

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Independent stream for a (seed, a, b) triple, e.g. (run seed, step, example).
    pub fn derived(seed: u64, a: u64, b: u64) -> Self {
        let mix = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17);
        Prng::new(mix)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn inner(&mut self) -> &mut Xoshiro256PlusPlus {
        &mut self.0
    }
}
