use super::SparseDenseGrid;
use crate::{Error, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

impl SparseDenseGrid {
    /// `n` points drawn uniformly over the union of allocated blocks: a block
    /// is chosen uniformly, then a point uniformly inside it. Deterministic
    /// for a fixed seed.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_uniform_with(n, &mut rng)
    }

    pub fn sample_uniform_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
        if self.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let l = self.block_size();
        let coords = self.coords();
        Ok((0..n)
            .map(|_| {
                let b = coords[rng.gen_range(0..coords.len())];
                Vec3::new(
                    (b.x as f64 + rng.gen::<f64>()) * l,
                    (b.y as f64 + rng.gen::<f64>()) * l,
                    (b.z as f64 + rng.gen::<f64>()) * l,
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BlockCoord;

    #[test]
    fn empty_grid_is_an_error() {
        let g = SparseDenseGrid::new(0.015, 8, 0);
        assert!(matches!(g.sample_uniform(4, 0), Err(Error::EmptyGrid)));
    }

    #[test]
    fn single_block_contains_all_samples() {
        let mut g = SparseDenseGrid::new(0.015, 8, 0);
        g.insert_block(BlockCoord::new(2, -1, 0)).unwrap();
        for p in g.sample_uniform(1000, 1).unwrap() {
            assert_eq!(g.block_of_point(&p), BlockCoord::new(2, -1, 0));
        }
    }

    #[test]
    fn two_blocks_split_evenly_and_deterministically() {
        let mut g = SparseDenseGrid::new(0.015, 8, 0);
        g.insert_block(BlockCoord::new(0, 0, 0)).unwrap();
        g.insert_block(BlockCoord::new(5, 5, 5)).unwrap();
        let n = 100_000;
        let pts = g.sample_uniform(n, 42).unwrap();
        let first = pts.iter().filter(|p| g.block_of_point(p) == BlockCoord::new(0, 0, 0)).count();
        // binomial(n, 1/2): sigma = sqrt(n)/2
        let sigma = (n as f64).sqrt() / 2.0;
        assert!((first as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma);
        assert_eq!(pts, g.sample_uniform(n, 42).unwrap());
    }
}
