//! Second right singular vector by power iteration on the Gram matrix.
//!
//! The sample matrix is used as is, without centering. The top eigenvector
//! of `DᵀD` is found first, deflated out, and the iteration is repeated on
//! the remainder. A Rayleigh-Ritz step on the span of both iterates then
//! removes the leakage a slightly inexact top vector leaves in the second.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

/// Convergence threshold on the angle between successive iterates.
pub const POWER_TOLERANCE: f64 = 1e-6;
pub const POWER_MAX_ITERATIONS: usize = 500;

const START_SEED: u64 = 0x05ee_d0fa_9d00;
/// Relative eigenvalue floor below which the sample counts as rank 1.
const RANK_FLOOR: f64 = 1e-10;

/// Unit second right singular vector of `sample`, signed so that its first
/// nonzero component is positive.
pub fn second_singular_vector(sample: &Dataset) -> Result<Vec<f64>> {
    second_singular_vector_rows(sample.dim(), sample.iter().map(|(_, v)| v))
}

pub(crate) fn second_singular_vector_rows<'a, I>(dim: usize, rows: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    if dim < 2 {
        return Err(invalid("second singular vector needs dimension >= 2"));
    }
    let (gram, n) = gram(dim, rows);
    if n < 2 {
        return Err(Error::SampleTooSmall { required: 2, actual: n });
    }
    let start = start_vector(dim);

    let (v1, lambda1) = power_iterate(&gram, dim, start.clone(), None, 0.0)?;
    if lambda1 <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let mut deflated = gram.clone();
    for i in 0..dim {
        for j in 0..dim {
            deflated[i * dim + j] -= lambda1 * v1[i] * v1[j];
        }
    }
    let (v2, _) = power_iterate(&deflated, dim, start, Some(&v1), RANK_FLOOR * lambda1)?;

    let mut h = rayleigh_ritz_second(&gram, dim, &v1, &v2);
    if let Some(first) = h.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            h.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(h)
}

fn gram<'a, I>(dim: usize, rows: I) -> (Vec<f64>, usize)
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut g = vec![0.0f64; dim * dim];
    let mut row64 = vec![0.0f64; dim];
    let mut n = 0;
    for row in rows {
        for (dst, &src) in row64.iter_mut().zip(row) {
            *dst = f64::from(src);
        }
        for i in 0..dim {
            let xi = row64[i];
            if xi == 0.0 {
                continue;
            }
            let line = &mut g[i * dim..i * dim + dim];
            for j in i..dim {
                line[j] += xi * row64[j];
            }
        }
        n += 1;
    }
    for i in 0..dim {
        for j in 0..i {
            g[i * dim + j] = g[j * dim + i];
        }
    }
    (g, n)
}

fn start_vector(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

fn mat_vec(m: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(dim)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn remove_component(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    v.iter_mut().zip(unit).for_each(|(x, u)| *x -= c * u);
}

/// Returns the dominant unit eigenvector and its Rayleigh quotient.
/// With `orthogonal_to`, iterates stay orthogonal to that unit vector, and a
/// matrix-vector product shorter than `floor` means the remaining spectrum is
/// empty.
fn power_iterate(
    m: &[f64],
    dim: usize,
    mut x: Vec<f64>,
    orthogonal_to: Option<&[f64]>,
    floor: f64,
) -> Result<(Vec<f64>, f64)> {
    if let Some(u) = orthogonal_to {
        remove_component(&mut x, u);
    }
    if normalize(&mut x) == 0.0 {
        return Err(Error::RankDeficient);
    }
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERATIONS {
        let mut y = mat_vec(m, dim, &x);
        if let Some(u) = orthogonal_to {
            remove_component(&mut y, u);
        }
        let len = normalize(&mut y);
        if len <= floor || len == 0.0 {
            return Err(Error::RankDeficient);
        }
        let sign = if dot(&x, &y) < 0.0 { -1.0 } else { 1.0 };
        let diff = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - sign * a).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = 2.0 * (diff / 2.0).min(1.0).asin();
        x = y;
        if residual < POWER_TOLERANCE {
            let rayleigh = dot(&x, &mat_vec(m, dim, &x));
            return Ok((x, rayleigh));
        }
    }
    Err(Error::NotConverged {
        iterations: POWER_MAX_ITERATIONS,
        residual,
    })
}

/// Eigenvector for the smaller Ritz value of `gram` on span{v1, v2}.
fn rayleigh_ritz_second(gram: &[f64], dim: usize, v1: &[f64], v2: &[f64]) -> Vec<f64> {
    let mut b = v2.to_vec();
    remove_component(&mut b, v1);
    normalize(&mut b);
    let gv1 = mat_vec(gram, dim, v1);
    let gb = mat_vec(gram, dim, &b);
    let (t11, t12, t22) = (dot(v1, &gv1), dot(v1, &gb), dot(&b, &gb));

    let mean = 0.5 * (t11 + t22);
    let radius = (0.25 * (t11 - t22).powi(2) + t12 * t12).sqrt();
    let mu = mean - radius;
    // Two candidate eigenvectors of the 2x2 matrix; keep the better scaled one.
    let c1 = (t12, mu - t11);
    let c2 = (mu - t22, t12);
    let (a, c) = if c1.0.hypot(c1.1) >= c2.0.hypot(c2.1) { c1 } else { c2 };
    let (a, c) = if a == 0.0 && c == 0.0 { (0.0, 1.0) } else { (a, c) };

    let mut h: Vec<f64> = v1.iter().zip(&b).map(|(x, y)| a * x + c * y).collect();
    normalize(&mut h);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::uniform;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        let c = dot(a, b).abs() / (dot(a, a).sqrt() * dot(b, b).sqrt());
        c.min(1.0).acos()
    }

    /// Independent dense SVD; returns the right singular vector of the
    /// second largest singular value.
    fn svd_oracle(ds: &Dataset) -> Vec<f64> {
        let m = DMatrix::from_row_iterator(ds.len(), ds.dim(), ds.as_flat().iter().map(|&v| f64::from(v)));
        let svd = m.svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        vt.row(order[1]).iter().copied().collect()
    }

    #[test]
    fn diagonal_gram() {
        let ds = Dataset::from_rows(2, [[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let h = second_singular_vector(&ds).unwrap();
        assert!((h[0]).abs() < 1e-9 && (h[1] - 1.0).abs() < 1e-9, "{h:?}");
    }

    #[test]
    fn hand_eigendecomposition() {
        // Gram [[6,4],[4,6]]: eigenvalues 10 along (1,1), 2 along (1,-1).
        let ds = Dataset::from_rows(2, [[1.0, 1.0], [2.0, 2.0], [1.0, -1.0]]).unwrap();
        let h = second_singular_vector(&ds).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h[0] - r).abs() < 1e-9 && (h[1] + r).abs() < 1e-9, "{h:?}");
    }

    #[test]
    fn matches_dense_svd_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        // Distinct column scales keep the spectral gaps away from 1.
        let data: Vec<f32> = (0..200 * 8)
            .map(|i| (8 - i % 8) as f32 * rng.random_range(-1.0f32..1.0))
            .collect();
        let ds = Dataset::from_flat(8, data).unwrap();
        let h = second_singular_vector(&ds).unwrap();
        let oracle = svd_oracle(&ds);
        assert!(angle(&h, &oracle) <= 1e-4, "angle {}", angle(&h, &oracle));
        assert!((dot(&h, &h).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_svd_on_offset_data() {
        let ds = uniform(500, 16, 8);
        let h = second_singular_vector(&ds).unwrap();
        assert!(angle(&h, &svd_oracle(&ds)) <= 1e-4);
    }

    #[test]
    fn sign_convention() {
        let ds = uniform(300, 6, 17);
        let h = second_singular_vector(&ds).unwrap();
        assert!(h.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
    }

    #[test]
    fn degenerate_inputs() {
        let rank_one = Dataset::from_rows(2, [[1.0, 1.0], [2.0, 2.0], [-3.0, -3.0]]).unwrap();
        assert!(matches!(second_singular_vector(&rank_one), Err(Error::RankDeficient)));
        let zeros = Dataset::from_rows(3, [[0.0; 3], [0.0; 3]]).unwrap();
        assert!(matches!(second_singular_vector(&zeros), Err(Error::RankDeficient)));
        let single = Dataset::from_rows(2, [[1.0, 2.0]]).unwrap();
        assert!(second_singular_vector(&single).is_err());
        let one_dim = Dataset::from_rows(1, [[1.0], [2.0]]).unwrap();
        assert!(second_singular_vector(&one_dim).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        // Gram diag(100, 1, 0.99, 0.01): the second stage contracts at 0.99
        // per step, too slow to settle within the iteration cap.
        let ds = Dataset::from_rows(
            4,
            [
                [10.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.99f32.sqrt(), 0.0],
                [0.0, 0.0, 0.0, 0.1],
            ],
        )
        .unwrap();
        match second_singular_vector(&ds) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, POWER_MAX_ITERATIONS);
                assert!(residual >= POWER_TOLERANCE);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
