//! Expanded features: a single index `s` that runs over the first-order
//! features and then every ordered feature pair, together with the frozen
//! per-term weights extracted from a trained model.
//!
//! Indices are 0-based throughout: `s < D` denotes feature `s` itself and
//! `s >= D` denotes the pair `pair_of(s) = (l1, l2)` with `l1 < l2`,
//! enumerated lexicographically: `(0,1) -> D`, `(0,2) -> D+1`, ...,
//! `(D-2, D-1) -> D(D+1)/2 - 1`.

use crate::error::{Error, Result};
use crate::ffm::FfmParams;

/// Index map between expanded features and (feature, feature-pair) terms.
#[derive(Debug, Clone)]
pub struct ExpandedIndex {
    n_base: usize,
    pairs: Vec<(u32, u32)>,
}

impl ExpandedIndex {
    /// Build the index for `d` base features.
    pub fn new(d: usize) -> Result<ExpandedIndex> {
        if d < 2 {
            return Err(Error::Dimension {
                msg: format!("expanded index needs at least 2 base features, got {d}"),
            });
        }
        let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
        for l1 in 0..d {
            for l2 in (l1 + 1)..d {
                pairs.push((l1 as u32, l2 as u32));
            }
        }
        Ok(ExpandedIndex { n_base: d, pairs })
    }

    /// Number of base features D.
    pub fn n_base(&self) -> usize {
        self.n_base
    }

    /// Number of cross terms, C(D, 2).
    pub fn n_cross(&self) -> usize {
        self.pairs.len()
    }

    /// Total expanded count S = D(D+1)/2.
    pub fn total(&self) -> usize {
        self.n_base + self.pairs.len()
    }

    /// The feature pair of a cross term, or `None` for a first-order index.
    pub fn pair_of(&self, s: usize) -> Option<(usize, usize)> {
        if s < self.n_base {
            None
        } else {
            let (l1, l2) = self.pairs[s - self.n_base];
            Some((l1 as usize, l2 as usize))
        }
    }

    /// Expanded index of the pair `(l1, l2)` with `l1 < l2`.
    pub fn index_of_pair(&self, l1: usize, l2: usize) -> usize {
        assert!(l1 < l2 && l2 < self.n_base, "pair out of range");
        let d = self.n_base;
        d + l1 * (2 * d - l1 - 1) / 2 + (l2 - l1 - 1)
    }
}

/// Frozen expanded-term weights: the linear block is copied from `w`, the
/// cross block holds the latent inner products of the trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub alpha: Vec<f64>,
}

impl AlphaVector {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Expand a binary row: first-order entries verbatim, then the product of
/// every feature pair.
pub fn expand_row(x_row: &[u8], index: &ExpandedIndex) -> Vec<u8> {
    assert_eq!(x_row.len(), index.n_base(), "row width must match index");
    let mut out = Vec::with_capacity(index.total());
    out.extend_from_slice(x_row);
    for &(l1, l2) in &index.pairs {
        out.push(x_row[l1 as usize] & x_row[l2 as usize]);
    }
    out
}

/// Expanded indices with value 1, computed from the active base features.
pub fn active_expanded(active_base: &[usize], index: &ExpandedIndex) -> Vec<usize> {
    let mut out = Vec::with_capacity(active_base.len() * (active_base.len() + 1) / 2);
    out.extend_from_slice(active_base);
    for (a, &l1) in active_base.iter().enumerate() {
        for &l2 in &active_base[a + 1..] {
            out.push(index.index_of_pair(l1.min(l2), l1.max(l2)));
        }
    }
    out
}

/// Freeze trained parameters into one weight per expanded feature.
pub fn extract_alpha(params: &FfmParams, field_of: &[usize], index: &ExpandedIndex) -> AlphaVector {
    assert_eq!(params.w.len(), index.n_base(), "model width must match index");
    let mut alpha = Vec::with_capacity(index.total());
    alpha.extend_from_slice(&params.w);
    for &(l1, l2) in &index.pairs {
        alpha.push(params.cross_weight(field_of, l1 as usize, l2 as usize));
    }
    AlphaVector { alpha }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffm::FfmParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_sized_index() {
        let index = ExpandedIndex::new(38).unwrap();
        assert_eq!(index.total(), 741);
        assert_eq!(index.n_cross(), 703);
        // first pair (0,1) sits right after the 38 first-order terms
        assert_eq!(index.index_of_pair(0, 1), 38);
        assert_eq!(index.pair_of(38), Some((0, 1)));
        // last pair
        assert_eq!(index.index_of_pair(36, 37), 740);
        assert_eq!(index.pair_of(740), Some((36, 37)));
    }

    #[test]
    fn three_feature_enumeration() {
        let index = ExpandedIndex::new(3).unwrap();
        assert_eq!(index.total(), 6);
        assert_eq!(index.pair_of(3), Some((0, 1)));
        assert_eq!(index.pair_of(4), Some((0, 2)));
        assert_eq!(index.pair_of(5), Some((1, 2)));
        assert_eq!(index.pair_of(2), None);
    }

    #[test]
    fn index_is_a_bijection() {
        let index = ExpandedIndex::new(21).unwrap();
        for s in index.n_base()..index.total() {
            let (l1, l2) = index.pair_of(s).unwrap();
            assert_eq!(index.index_of_pair(l1, l2), s);
        }
    }

    #[test]
    fn too_small_dimension_is_an_error() {
        assert!(ExpandedIndex::new(1).is_err());
        assert!(ExpandedIndex::new(0).is_err());
    }

    /// Reference-shaped layout: 9 fields of 4 groups plus one of 2.
    fn reference_layout() -> (Vec<usize>, usize) {
        let mut field_of = Vec::new();
        let groups = [4usize, 2, 4, 4, 4, 4, 4, 4, 4, 4];
        for (f, &g) in groups.iter().enumerate() {
            for _ in 0..g {
                field_of.push(f);
            }
        }
        (field_of, groups.len())
    }

    fn one_hot_row(field_of: &[usize], n_fields: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut row = vec![0u8; field_of.len()];
        for f in 0..n_fields {
            let cols: Vec<usize> = (0..field_of.len()).filter(|&l| field_of[l] == f).collect();
            row[cols[rng.random_range(0..cols.len())]] = 1;
        }
        row
    }

    #[test]
    fn one_hot_row_expands_to_55_active_terms() {
        let (field_of, n_fields) = reference_layout();
        let index = ExpandedIndex::new(field_of.len()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row = one_hot_row(&field_of, n_fields, &mut rng);
        let expanded = expand_row(&row, &index);
        let ones = expanded.iter().filter(|&&v| v == 1).count();
        assert_eq!(ones, 10 + 45);

        let active: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(l, _)| l)
            .collect();
        let mut sparse = active_expanded(&active, &index);
        sparse.sort_unstable();
        let dense: Vec<usize> = expanded
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(s, _)| s)
            .collect();
        assert_eq!(sparse, dense);
    }

    #[test]
    fn zero_row_expands_to_zero() {
        let index = ExpandedIndex::new(6).unwrap();
        let expanded = expand_row(&[0; 6], &index);
        assert!(expanded.iter().all(|&v| v == 0));
        assert_eq!(expanded.len(), 21);
    }

    #[test]
    fn same_field_cross_terms_are_never_active_on_one_hot_rows() {
        let (field_of, n_fields) = reference_layout();
        let index = ExpandedIndex::new(field_of.len()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let row = one_hot_row(&field_of, n_fields, &mut rng);
            let expanded = expand_row(&row, &index);
            for s in index.n_base()..index.total() {
                let (l1, l2) = index.pair_of(s).unwrap();
                if field_of[l1] == field_of[l2] {
                    assert_eq!(expanded[s], 0);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_alpha() {
        let (field_of, n_fields) = reference_layout();
        let params = FfmParams::zeros(field_of.len(), n_fields, 4);
        let index = ExpandedIndex::new(field_of.len()).unwrap();
        let alpha = extract_alpha(&params, &field_of, &index);
        assert_eq!(alpha.len(), 741);
        assert!(alpha.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn expanded_dot_product_equals_model_prediction() {
        let (field_of, n_fields) = reference_layout();
        let d = field_of.len();
        let index = ExpandedIndex::new(d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        for trial in 0..20 {
            let mut params = FfmParams::zeros(d, n_fields, 4);
            params.w0 = rng.random_range(-1.0..1.0);
            for w in &mut params.w {
                *w = rng.random_range(-1.0..1.0);
            }
            for v in params.v.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            let alpha = extract_alpha(&params, &field_of, &index);
            let row = one_hot_row(&field_of, n_fields, &mut rng);
            let expanded = expand_row(&row, &index);

            let dot: f64 = expanded
                .iter()
                .zip(&alpha.alpha)
                .map(|(&x, &a)| f64::from(x) * a)
                .sum();
            let direct = params.predict(&row, &field_of);
            assert!(
                (params.w0 + dot - direct).abs() < 1e-12,
                "trial {trial}: {} vs {direct}",
                params.w0 + dot
            );
        }
    }
}
