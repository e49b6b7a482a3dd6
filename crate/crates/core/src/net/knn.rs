//! Brute-force k-nearest-neighbour search and farthest point sampling.

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Indices of the `k` nearest keys per query, flattened row-major
/// (`queries.len() x k`), nearest first. Equal distances keep the lower index.
pub fn knn(queries: &[Vec3], keys: &[Vec3], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > keys.len() {
        return Err(Error::Domain(format!(
            "k = {k} neighbours requested from {} keys",
            keys.len()
        )));
    }
    let mut out = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(keys.len());
    for &q in queries {
        scratch.clear();
        scratch.extend(keys.iter().enumerate().map(|(i, &p)| (vec3::dist_sq(q, p), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(cmp);
        out.extend(scratch.iter().map(|&(_, i)| i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key() {
        let q = [[0.0; 3], [5.0, 1.0, 2.0]];
        assert_eq!(knn(&q, &[[1.0, 1.0, 1.0]], 1).unwrap(), vec![0, 0]);
    }

    #[test]
    fn nearest_two() {
        let keys = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        assert_eq!(knn(&[[0.0; 3]], &keys, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let keys = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]];
        assert_eq!(knn(&[[0.0; 3]], &keys, 3).unwrap(), vec![3, 0, 1]);
    }

    #[test]
    fn too_many_neighbours() {
        assert!(matches!(knn(&[[0.0; 3]], &[[0.0; 3]], 2), Err(Error::Domain(_))));
    }
}
