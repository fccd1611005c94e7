//! Sobol low-discrepancy points with optional linear matrix scrambling and
//! a random digital shift.

use rand::Rng;

use super::sobol_table::DIRECTIONS;
use crate::error::{LesError, Result};
use crate::gp::BoxDomain;
use crate::rng::rng_from_seed;

const BITS: usize = 32;

/// Largest supported dimension.
pub const MAX_SOBOL_DIM: usize = DIRECTIONS.len();

#[derive(Debug, Clone)]
pub struct SobolSequence {
    /// `BITS` direction numbers per dimension, most significant digit first.
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    /// Plain (unscrambled) sequence starting at the origin.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(LesError::Argument(format!(
                "Sobol dimension must lie in 1..={MAX_SOBOL_DIM}, got {dim}"
            )));
        }
        let directions: Vec<[u32; BITS]> = DIRECTIONS[..dim]
            .iter()
            .map(|(poly, m)| direction_numbers(*poly, m))
            .collect();
        Ok(Self {
            directions,
            shift: vec![0; dim],
            state: vec![0; dim],
            index: 0,
        })
    }

    /// Randomized sequence: each dimension gets a random lower-triangular
    /// binary matrix applied to its direction numbers and a digital shift.
    pub fn scrambled(dim: usize, rng_seed: u64) -> Result<Self> {
        let mut seq = Self::new(dim)?;
        let mut rng = rng_from_seed(rng_seed);
        for dirs in &mut seq.directions {
            // row i of the matrix acts on digit i (bit 31 - i)
            let rows: Vec<u32> = (0..BITS)
                .map(|i| {
                    let diag = 1u32 << (BITS - 1 - i);
                    let above = if i == 0 { 0 } else { !((diag << 1) - 1) };
                    (rng.random::<u32>() & above) | diag
                })
                .collect();
            for v in dirs.iter_mut() {
                let mut out = 0u32;
                for (i, row) in rows.iter().enumerate() {
                    out |= ((row & *v).count_ones() & 1) << (BITS - 1 - i);
                }
                *v = out;
            }
        }
        seq.shift = (0..dim).map(|_| rng.random()).collect();
        seq.state = seq.shift.clone();
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Next point in `[0, 1)^d`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let point = self.state.iter().map(|s| *s as f64 / 4_294_967_296.0).collect();
        // Gray-code update: flip the direction of the lowest zero bit of the index.
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS {
            for (s, dirs) in self.state.iter_mut().zip(&self.directions) {
                *s ^= dirs[c];
            }
        }
        self.index += 1;
        point
    }
}

fn direction_numbers(poly: u32, m_init: &[u32]) -> [u32; BITS] {
    let degree = (31 - poly.leading_zeros()) as usize;
    let mut m = [0u32; BITS];
    if degree == 0 {
        m = [1; BITS];
    } else {
        m[..degree].copy_from_slice(&m_init[..degree]);
        for k in degree..BITS {
            let mut next = m[k - degree] ^ (m[k - degree] << degree);
            for i in 1..degree {
                if (poly >> (degree - i)) & 1 == 1 {
                    next ^= m[k - i] << i;
                }
            }
            m[k] = next;
        }
    }
    let mut v = [0u32; BITS];
    for (k, vk) in v.iter_mut().enumerate() {
        *vk = m[k] << (BITS - 1 - k);
    }
    v
}

/// The first `budget` points of a scrambled Sobol sequence, mapped onto `domain`.
pub fn sobol_baseline(domain: &BoxDomain, budget: usize, rng_seed: u64) -> Result<Vec<Vec<f64>>> {
    if budget == 0 {
        return Err(LesError::Argument("budget must be positive".into()));
    }
    let mut seq = SobolSequence::scrambled(domain.dim(), rng_seed)?;
    Ok((0..budget).map(|_| domain.from_unit(&seq.next_point())).collect())
}
