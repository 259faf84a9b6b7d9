//! Loop consistency check on an over-complete set of joint expectation values.
//!
//! The 4×4 grid of correlations is embedded into a 6×6 matrix whose 3×3
//! corners share measurement settings. For data that factorize as
//! `E_ij = a_iᵀ T b_j` the partial determinant `A⁻¹ B D⁻¹ C` is exactly the
//! identity; deviations flag correlated errors between the two sides.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{invert3, Mat3};
use crate::simulator::{ExpectationGrid, SETTINGS_PER_SIDE};

/// Default |mean|/std threshold above which false correlations are reported.
pub const DEFAULT_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corner {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Corner::A => "A",
            Corner::B => "B",
            Corner::C => "C",
            Corner::D => "D",
        };
        f.write_str(name)
    }
}

/// Which source row/column feeds each row/column of the 6×6 loop matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopEmbedding {
    pub rows: [usize; 6],
    pub cols: [usize; 6],
}

impl LoopEmbedding {
    /// Overlapping triples (0,1,2) and (1,2,3) on both sides.
    pub const OVERLAPPING_TRIPLES: LoopEmbedding = LoopEmbedding {
        rows: [0, 1, 2, 1, 2, 3],
        cols: [0, 1, 2, 1, 2, 3],
    };
}

impl Default for LoopEmbedding {
    fn default() -> Self {
        Self::OVERLAPPING_TRIPLES
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopMatrix {
    pub e6: [[f64; 6]; 6],
    pub embedding: LoopEmbedding,
}

impl LoopMatrix {
    pub fn corners(&self) -> CornerSet {
        let block = |r0: usize, c0: usize| Mat3::from_fn(|i, j| self.e6[r0 + i][c0 + j]);
        CornerSet {
            a: block(0, 0),
            b: block(0, 3),
            c: block(3, 0),
            d: block(3, 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet {
    pub a: Mat3,
    pub b: Mat3,
    pub c: Mat3,
    pub d: Mat3,
}

pub fn embed_loop(grid: &ExpectationGrid) -> LoopMatrix {
    embed_loop_with(grid, LoopEmbedding::default())
}

pub fn embed_loop_with(grid: &ExpectationGrid, embedding: LoopEmbedding) -> LoopMatrix {
    debug_assert!(embedding
        .rows
        .iter()
        .chain(&embedding.cols)
        .all(|&k| k < SETTINGS_PER_SIDE));
    let mut e6 = [[0.0; 6]; 6];
    for (r, &src_r) in embedding.rows.iter().enumerate() {
        for (c, &src_c) in embedding.cols.iter().enumerate() {
            e6[r][c] = grid.0[src_r][src_c];
        }
    }
    LoopMatrix { e6, embedding }
}

/// `Δ = A⁻¹ B D⁻¹ C`
pub fn partial_determinant(corners: &CornerSet) -> Result<Mat3> {
    let a_inv = invert3(&corners.a).map_err(|_| Error::SingularCorner { corner: Corner::A })?;
    let d_inv = invert3(&corners.d).map_err(|_| Error::SingularCorner { corner: Corner::D })?;
    Ok(a_inv * corners.b * d_inv * corners.c)
}

/// Embeds, partitions and evaluates Δ for one grid.
pub fn grid_delta(grid: &ExpectationGrid) -> Result<Mat3> {
    partial_determinant(&embed_loop(grid).corners())
}

/// Elementwise statistics of Δ − I over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStats {
    pub mean: Mat3,
    /// Sample standard deviation (n − 1 denominator).
    pub std: Mat3,
    /// |mean| / std; 0 for a round-off mean, +∞ for a round-off spread under a real mean.
    pub ratio: Mat3,
    pub trials_used: usize,
    /// Trials dropped because a corner could not be inverted.
    pub trials_excluded: usize,
}

impl DeltaStats {
    pub fn max_ratio(&self) -> f64 {
        self.ratio.rows().iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Means and spreads at or below this are round-off, not signal.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

fn ratio(mean: f64, std: f64) -> f64 {
    if mean.abs() <= ROUNDOFF_FLOOR {
        0.0
    } else if std > ROUNDOFF_FLOOR {
        mean.abs() / std
    } else {
        f64::INFINITY
    }
}

pub fn delta_statistics(deltas: &[Mat3]) -> Result<DeltaStats> {
    delta_statistics_with_exclusions(deltas, 0)
}

fn delta_statistics_with_exclusions(deltas: &[Mat3], excluded: usize) -> Result<DeltaStats> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::InsufficientTrials {
            usable: n,
            excluded,
        });
    }
    let deviations: Vec<Mat3> = deltas.iter().map(|d| *d - Mat3::IDENTITY).collect();
    let mean = deviations.iter().fold(Mat3::ZERO, |acc, d| acc + *d) * (1.0 / n as f64);
    let var = deviations.iter().fold(Mat3::ZERO, |acc, d| {
        let r = *d - mean;
        acc + Mat3::from_fn(|i, j| r[(i, j)] * r[(i, j)])
    }) * (1.0 / (n - 1) as f64);
    let std = var.map(f64::sqrt);
    let ratio = Mat3::from_fn(|i, j| ratio(mean[(i, j)], std[(i, j)]));
    Ok(DeltaStats {
        mean,
        std,
        ratio,
        trials_used: n,
        trials_excluded: excluded,
    })
}

/// Computes Δ for each grid, drops trials with a singular corner and
/// aggregates the rest.
pub fn analyze_grids(grids: &[ExpectationGrid]) -> Result<DeltaStats> {
    let mut deltas = Vec::with_capacity(grids.len());
    let mut excluded = 0;
    for grid in grids {
        match grid_delta(grid) {
            Ok(d) => deltas.push(d),
            Err(Error::SingularCorner { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    delta_statistics_with_exclusions(&deltas, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub detected: bool,
    pub max_ratio: f64,
    pub threshold: f64,
}

pub fn verdict(stats: &DeltaStats, threshold: f64) -> Result<Verdict> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidThreshold(threshold));
    }
    let max_ratio = stats.max_ratio();
    Ok(Verdict {
        detected: max_ratio > threshold,
        max_ratio,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_with_ratio(r: f64) -> DeltaStats {
        DeltaStats {
            mean: Mat3::ZERO,
            std: Mat3::ZERO,
            ratio: Mat3::from_fn(|_, _| r),
            trials_used: 10,
            trials_excluded: 0,
        }
    }

    #[test]
    fn embedding_bookkeeping() {
        let grid = ExpectationGrid(std::array::from_fn(|i| std::array::from_fn(|j| (4 * i + j) as f64)));
        let e = embed_loop(&grid);
        assert_eq!(e.e6[0][0], 0.0);
        assert_eq!(e.e6[3][3], 5.0);
        assert_eq!(e.e6[5][5], 15.0);
        assert_eq!(e.e6[0][3], grid.0[0][1]);
        let corners = e.corners();
        assert_eq!(corners.b[(0, 0)], e.e6[0][3]);
        assert_eq!(corners.c[(2, 1)], e.e6[5][1]);
        assert_eq!(corners.d[(2, 2)], 15.0);
    }

    #[test]
    fn identity_corners() {
        let id = Mat3::IDENTITY;
        let corners = CornerSet {
            a: id,
            b: id,
            c: id,
            d: id,
        };
        assert_eq!(partial_determinant(&corners).unwrap(), id);
    }

    #[test]
    fn singular_corner_is_named() {
        let id = Mat3::IDENTITY;
        let mut corners = CornerSet {
            a: id,
            b: id,
            c: id,
            d: Mat3::ZERO,
        };
        assert_eq!(
            partial_determinant(&corners),
            Err(Error::SingularCorner { corner: Corner::D })
        );
        corners.a = Mat3::ZERO;
        assert_eq!(
            partial_determinant(&corners),
            Err(Error::SingularCorner { corner: Corner::A })
        );
    }

    #[test]
    fn statistics_examples() {
        let s = delta_statistics(&[Mat3::IDENTITY; 3]).unwrap();
        assert_eq!(s.mean, Mat3::ZERO);
        assert_eq!(s.std, Mat3::ZERO);
        assert_eq!(s.ratio, Mat3::ZERO);

        let eps = 0.01;
        let mut up = Mat3::IDENTITY;
        up[(1, 2)] += eps;
        let mut down = Mat3::IDENTITY;
        down[(1, 2)] -= eps;
        let s = delta_statistics(&[up, down]).unwrap();
        assert_eq!(s.mean[(1, 2)], 0.0);
        assert!((s.std[(1, 2)] - 2f64.sqrt() * eps).abs() < 1e-15);
        assert_eq!(s.ratio[(1, 2)], 0.0);

        let mut shifted = Mat3::IDENTITY;
        shifted[(0, 0)] += 0.5;
        let s = delta_statistics(&[shifted, shifted]).unwrap();
        assert_eq!(s.ratio[(0, 0)], f64::INFINITY);

        let mut roundoff = Mat3::IDENTITY;
        roundoff[(2, 1)] += 2e-16;
        let s = delta_statistics(&[roundoff, roundoff]).unwrap();
        assert_eq!(s.ratio[(2, 1)], 0.0);

        assert_eq!(
            delta_statistics(&[Mat3::IDENTITY]),
            Err(Error::InsufficientTrials {
                usable: 1,
                excluded: 0
            })
        );
    }

    #[test]
    fn singular_trials_are_excluded() {
        let good = ExpectationGrid([
            [1.0, 0.2, 0.1, 0.3],
            [0.0, 1.0, 0.4, 0.2],
            [0.3, 0.1, 1.0, 0.5],
            [0.2, 0.6, 0.1, 1.0],
        ]);
        let bad = ExpectationGrid([[0.0; 4]; 4]);
        let s = analyze_grids(&[good, bad, good]).unwrap();
        assert_eq!(s.trials_used, 2);
        assert_eq!(s.trials_excluded, 1);
        assert!(matches!(
            analyze_grids(&[good, bad]),
            Err(Error::InsufficientTrials {
                usable: 1,
                excluded: 1
            })
        ));
    }

    #[test]
    fn verdict_boundaries() {
        assert!(!verdict(&stats_with_ratio(0.5), 5.0).unwrap().detected);
        let mut s = stats_with_ratio(0.5);
        s.ratio[(2, 1)] = 6.2;
        let v = verdict(&s, 5.0).unwrap();
        assert!(v.detected);
        assert_eq!(v.max_ratio, 6.2);
        assert!(!verdict(&stats_with_ratio(5.0), 5.0).unwrap().detected);
        assert!(verdict(&s, 0.0).is_err());
    }

    fn arb_invertible() -> impl Strategy<Value = Mat3> {
        proptest::collection::vec(-1.0f64..1.0, 9)
            .prop_map(|v| Mat3::from_fn(|i, j| v[3 * i + j] + if i == j { 1.5 } else { 0.0 }))
    }

    proptest! {
        #[test]
        fn factorizable_grid_gives_identity(
            t in arb_invertible(),
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let av: Vec<[f64; 3]> = a.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let bv: Vec<[f64; 3]> = b.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let grid = ExpectationGrid(std::array::from_fn(|i| {
                std::array::from_fn(|j| crate::numerics::dot3(av[i], t.mul_vec(bv[j])))
            }));
            let corners = embed_loop(&grid).corners();
            prop_assume!(crate::numerics::condition_number(&corners.a) < 1e4);
            prop_assume!(crate::numerics::condition_number(&corners.d) < 1e4);
            let delta = partial_determinant(&corners).unwrap();
            prop_assert!(delta.max_abs_diff(&Mat3::IDENTITY) <= 1e-8);
        }

        #[test]
        fn scaling_leaves_delta_unchanged(
            v in proptest::collection::vec(-1.0f64..1.0, 16),
            alpha in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        ) {
            let grid = ExpectationGrid(std::array::from_fn(|i| std::array::from_fn(|j| v[4 * i + j])));
            let scaled = ExpectationGrid(grid.0.map(|row| row.map(|x| alpha * x)));
            let corners = embed_loop(&grid).corners();
            prop_assume!(crate::numerics::condition_number(&corners.a) < 1e3);
            prop_assume!(crate::numerics::condition_number(&corners.d) < 1e3);
            let d1 = grid_delta(&grid).unwrap();
            let d2 = grid_delta(&scaled).unwrap();
            prop_assert!(d1.max_abs_diff(&d2) <= 1e-9 * d1.max_abs().max(1.0));
        }

        #[test]
        fn embedding_preserves_rank(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            // rank-3 grid: sum of three outer products
            let grid = ExpectationGrid(std::array::from_fn(|i| {
                std::array::from_fn(|j| (0..3).map(|k| a[3 * i + k] * b[3 * j + k]).sum())
            }));
            let e6 = embed_loop(&grid).e6;
            prop_assert_eq!(numerical_rank(&e6, 1e-9), numerical_rank_4(&grid.0, 1e-9));
        }
    }

    fn numerical_rank<const N: usize>(m: &[[f64; N]; N], tol: f64) -> usize {
        // Gaussian elimination with full pivoting
        let mut a = *m;
        let scale = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        let mut rank = 0;
        let mut used_rows = [false; N];
        let mut used_cols = [false; N];
        for _ in 0..N {
            let mut best = (0.0, 0, 0);
            for i in (0..N).filter(|&i| !used_rows[i]) {
                for j in (0..N).filter(|&j| !used_cols[j]) {
                    if a[i][j].abs() > best.0 {
                        best = (a[i][j].abs(), i, j);
                    }
                }
            }
            if best.0 <= tol * scale {
                break;
            }
            let (_, p, q) = best;
            used_rows[p] = true;
            used_cols[q] = true;
            rank += 1;
            for i in (0..N).filter(|&i| !used_rows[i]) {
                let f = a[i][q] / a[p][q];
                for j in 0..N {
                    a[i][j] -= f * a[p][j];
                }
            }
        }
        rank
    }

    fn numerical_rank_4(m: &[[f64; 4]; 4], tol: f64) -> usize {
        numerical_rank(m, tol)
    }
}
