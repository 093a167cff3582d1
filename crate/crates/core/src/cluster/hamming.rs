//! Hamming distances over bit-packed binary rows.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

/// Row-major bit-packed copy of a binary matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitRows {
    n_rows: usize,
    n_bits: usize,
    words: usize,
    data: Vec<u64>,
}

impl BitRows {
    pub fn pack(x: ArrayView2<'_, u8>) -> Self {
        let (n_rows, n_bits) = x.dim();
        let words = n_bits.div_ceil(64).max(1);
        let mut data = vec![0u64; n_rows * words];
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0 {
                    data[i * words + j / 64] |= 1u64 << (j % 64);
                }
            }
        }
        Self {
            n_rows,
            n_bits,
            words,
            data,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> u32 {
        hamming(self.row(i), self.row(j))
    }
}

#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `D(i, j)` = number of positions where rows `i` and `j` differ.
pub fn hamming_distance_matrix(x: ArrayView2<'_, u8>) -> Array2<u32> {
    let bits = BitRows::pack(x);
    let n = bits.n_rows();
    let mut d = Array2::<u32>::zeros((n, n));
    d.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = bits.distance(i, j);
            }
        });
    d
}

#[cfg(test)]
mod tests {
    use ndarray::arr2;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn small_cases() {
        let x = arr2(&[[0u8, 1, 1, 0], [1, 1, 0, 0], [0, 1, 1, 0]]);
        let d = hamming_distance_matrix(x.view());
        assert_eq!(d[(0, 1)], 2);
        assert_eq!(d[(0, 2)], 0);
        assert_eq!(d[(1, 1)], 0);
    }

    #[test]
    fn complement_of_240_is_240() {
        let mut x = Array2::<u8>::zeros((2, 240));
        for j in 0..240 {
            x[(0, j)] = (j % 3 == 0) as u8;
            x[(1, j)] = 1 - x[(0, j)];
        }
        assert_eq!(hamming_distance_matrix(x.view())[(0, 1)], 240);
    }

    proptest! {
        #[test]
        fn matches_naive_count(rows in prop::collection::vec(prop::collection::vec(0u8..2, 70), 2..6)) {
            let n = rows.len();
            let x = Array2::from_shape_vec((n, 70), rows.concat()).unwrap();
            let d = hamming_distance_matrix(x.view());
            for i in 0..n {
                for j in 0..n {
                    let naive = (0..70).filter(|&c| x[(i, c)] != x[(j, c)]).count() as u32;
                    prop_assert_eq!(d[(i, j)], naive);
                    prop_assert_eq!(d[(i, j)], d[(j, i)]);
                }
            }
        }
    }
}
