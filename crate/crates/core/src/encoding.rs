//! Quartile-group categorical encoding.
//!
//! Each quantitative column is converted into an ordinal category by
//! rank-splitting the fitting data into four blocks of (near-)equal
//! population; the binary `sex` column keeps its two levels. Encoding a
//! dataset yields a one-hot design matrix with one field per original
//! column, so every encoded row carries exactly one 1 per field.

use ndarray::Array2;

use crate::dataset::RawDataset;
use crate::error::{Error, Result};

/// Groups per quantitative feature in the reference pipeline.
pub const QUARTILE_GROUPS: usize = 4;

/// Name of the column encoded by exact value match instead of quartiles.
const BINARY_COLUMN: &str = "sex";

/// Fitted per-column binning rules.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FeatureBins {
    /// Rank-based quartile thresholds: value v maps to the number of
    /// boundaries strictly below it, clamping out-of-range values to the
    /// outer groups.
    Quartile {
        boundaries: Vec<f64>,
        train_counts: Vec<usize>,
    },
    /// Two exact levels, ascending.
    Binary {
        values: [f64; 2],
        train_counts: [usize; 2],
    },
}

impl FeatureBins {
    pub fn n_groups(&self) -> usize {
        match self {
            FeatureBins::Quartile { boundaries, .. } => boundaries.len() + 1,
            FeatureBins::Binary { .. } => 2,
        }
    }
}

/// Binning rules for every feature column, in column order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuartileBins {
    pub feature_names: Vec<String>,
    pub per_feature: Vec<FeatureBins>,
}

impl QuartileBins {
    /// Total one-hot width.
    pub fn n_columns(&self) -> usize {
        self.per_feature.iter().map(FeatureBins::n_groups).sum()
    }
}

/// One-hot encoded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// n_samples x D binary design matrix.
    pub x: Array2<u8>,
    /// Field index of each one-hot column.
    pub field_of: Vec<usize>,
    /// Within-field group id of each one-hot column.
    pub group_of_feature: Vec<usize>,
    pub n_fields: usize,
}

impl EncodedDataset {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Column range of one field's one-hot block.
    pub fn field_columns(&self, field: usize) -> Result<std::ops::Range<usize>> {
        if field >= self.n_fields {
            return Err(Error::InvalidField {
                field,
                n_fields: self.n_fields,
            });
        }
        let start = self.field_of.iter().position(|&f| f == field).unwrap();
        let len = self.field_of.iter().filter(|&&f| f == field).count();
        Ok(start..start + len)
    }

    /// Row subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> EncodedDataset {
        let x = Array2::from_shape_fn((indices.len(), self.x.ncols()), |(i, j)| {
            self.x[[indices[i], j]]
        });
        EncodedDataset {
            x,
            field_of: self.field_of.clone(),
            group_of_feature: self.group_of_feature.clone(),
            n_fields: self.n_fields,
        }
    }
}

/// Membership of each sample in one group of the focus field.
#[derive(Debug, Clone)]
pub struct GroupMembership {
    pub focus_field: usize,
    pub group_count: usize,
    /// n_samples x group_count, exactly one 1 per row.
    pub p: Array2<u8>,
}

impl GroupMembership {
    /// Group id of sample `i`.
    pub fn group_of(&self, i: usize) -> usize {
        (0..self.group_count)
            .find(|&g| self.p[[i, g]] == 1)
            .expect("each row has exactly one active group")
    }
}

/// Fit binning rules on training data.
///
/// Quantitative columns are sorted ascending (stable in sample order) and
/// split into four contiguous rank blocks whose sizes differ by at most
/// one (larger blocks first); the boundaries are the values at the block
/// edges. The binary column must carry exactly two distinct values.
pub fn fit_bins(train: &RawDataset) -> Result<QuartileBins> {
    let mut per_feature = Vec::with_capacity(train.feature_names.len());
    for (j, name) in train.feature_names.iter().enumerate() {
        let col: Vec<f64> = train.features.column(j).to_vec();
        let bins = if name.eq_ignore_ascii_case(BINARY_COLUMN) {
            fit_binary(&col, j, name)?
        } else {
            fit_quartile(&col, QUARTILE_GROUPS, j, name)?
        };
        per_feature.push(bins);
    }
    Ok(QuartileBins {
        feature_names: train.feature_names.clone(),
        per_feature,
    })
}

fn fit_binary(col: &[f64], column: usize, name: &str) -> Result<FeatureBins> {
    let mut distinct: Vec<f64> = col.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::NotBinary {
            column: column + 1,
            name: name.to_string(),
            distinct: distinct.len(),
        });
    }
    let values = [distinct[0], distinct[1]];
    let mut counts = [0usize; 2];
    for &v in col {
        counts[usize::from(v == values[1])] += 1;
    }
    Ok(FeatureBins::Binary {
        values,
        train_counts: counts,
    })
}

fn fit_quartile(col: &[f64], n_groups: usize, column: usize, name: &str) -> Result<FeatureBins> {
    let first = col[0];
    if col.iter().all(|&v| v == first) {
        return Err(Error::ConstantColumn {
            column: column + 1,
            name: name.to_string(),
        });
    }

    // stable sort keeps tied values in sample order
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));

    let n = col.len();
    let base = n / n_groups;
    let rem = n % n_groups;
    let mut boundaries = Vec::with_capacity(n_groups - 1);
    let mut pos = 0;
    for k in 0..n_groups - 1 {
        pos += base + usize::from(k < rem);
        boundaries.push(col[order[pos - 1]]);
    }

    let mut train_counts = vec![0usize; n_groups];
    for &v in col {
        train_counts[assign_group(v, &boundaries)] += 1;
    }
    Ok(FeatureBins::Quartile {
        boundaries,
        train_counts,
    })
}

fn assign_group(v: f64, boundaries: &[f64]) -> usize {
    boundaries.iter().filter(|&&b| v > b).count()
}

/// One-hot encode a dataset with previously fitted bins.
///
/// Columns are ordered field-major, group-minor. Quantitative values
/// outside the fitted range clamp to the outer groups; an unseen value in
/// the binary column is an error.
pub fn encode(data: &RawDataset, bins: &QuartileBins) -> Result<EncodedDataset> {
    if data.feature_names.len() != bins.per_feature.len() {
        return Err(Error::Dimension {
            msg: format!(
                "dataset has {} feature columns, bins were fitted on {}",
                data.feature_names.len(),
                bins.per_feature.len()
            ),
        });
    }

    let n_fields = bins.per_feature.len();
    let d = bins.n_columns();
    let mut field_of = Vec::with_capacity(d);
    let mut group_of_feature = Vec::with_capacity(d);
    for (f, fb) in bins.per_feature.iter().enumerate() {
        for g in 0..fb.n_groups() {
            field_of.push(f);
            group_of_feature.push(g);
        }
    }

    let n = data.n_samples();
    let mut x = Array2::<u8>::zeros((n, d));
    for i in 0..n {
        let mut col0 = 0;
        for (f, fb) in bins.per_feature.iter().enumerate() {
            let v = data.features[[i, f]];
            let g = match fb {
                FeatureBins::Quartile { boundaries, .. } => assign_group(v, boundaries),
                FeatureBins::Binary { values, .. } => {
                    if v == values[0] {
                        0
                    } else if v == values[1] {
                        1
                    } else {
                        return Err(Error::UnseenBinaryValue {
                            column: f + 1,
                            name: bins.feature_names[f].clone(),
                            value: v,
                        });
                    }
                }
            };
            x[[i, col0 + g]] = 1;
            col0 += fb.n_groups();
        }
    }

    Ok(EncodedDataset {
        x,
        field_of,
        group_of_feature,
        n_fields,
    })
}

/// Copy the focus field's one-hot block out as group membership.
pub fn group_membership(encoded: &EncodedDataset, focus_field: usize) -> Result<GroupMembership> {
    let cols = encoded.field_columns(focus_field)?;
    let group_count = cols.len();
    let n = encoded.n_samples();
    let p = Array2::from_shape_fn((n, group_count), |(i, g)| encoded.x[[i, cols.start + g]]);
    Ok(GroupMembership {
        focus_field,
        group_count,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, make_split, standardize};
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::path::Path;

    fn dataset_from_columns(cols: Vec<(&str, Vec<f64>)>) -> RawDataset {
        let n = cols[0].1.len();
        let features = Array2::from_shape_fn((n, cols.len()), |(i, j)| cols[j].1[i]);
        RawDataset {
            feature_names: cols.iter().map(|(name, _)| name.to_string()).collect(),
            features,
            target: vec![0.0; n],
        }
    }

    fn reference_encoded() -> (RawDataset, QuartileBins, EncodedDataset) {
        let data = load_dataset(Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/diabetes.csv"
        )))
        .unwrap();
        let bins = fit_bins(&data).unwrap();
        let encoded = encode(&data, &bins).unwrap();
        (data, bins, encoded)
    }

    #[test]
    fn eight_distinct_values_split_in_pairs() {
        let data = dataset_from_columns(vec![("x", (1..=8).map(f64::from).collect())]);
        let bins = fit_bins(&data).unwrap();
        match &bins.per_feature[0] {
            FeatureBins::Quartile {
                boundaries,
                train_counts,
            } => {
                assert_eq!(boundaries, &vec![2.0, 4.0, 6.0]);
                assert_eq!(train_counts, &vec![2, 2, 2, 2]);
            }
            other => panic!("unexpected bins: {other:?}"),
        }
        let encoded = encode(&data, &bins).unwrap();
        let groups: Vec<usize> = (0..8)
            .map(|i| (0..4).find(|&g| encoded.x[[i, g]] == 1).unwrap())
            .collect();
        assert_eq!(groups, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn constant_column_is_an_error() {
        let data = dataset_from_columns(vec![("x", vec![5.0; 8])]);
        assert!(matches!(
            fit_bins(&data),
            Err(Error::ConstantColumn { column: 1, .. })
        ));
    }

    #[test]
    fn sex_with_three_levels_is_an_error() {
        let data = dataset_from_columns(vec![(
            "sex",
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0],
        )]);
        assert!(matches!(
            fit_bins(&data),
            Err(Error::NotBinary { distinct: 3, .. })
        ));
    }

    #[test]
    fn distinct_332_value_column_splits_into_83s() {
        let values: Vec<f64> = (0..332).map(|i| (i as f64) * 0.37 - 50.0).collect();
        let data = dataset_from_columns(vec![("x", values)]);
        let bins = fit_bins(&data).unwrap();
        match &bins.per_feature[0] {
            FeatureBins::Quartile { train_counts, .. } => {
                assert_eq!(train_counts, &vec![83, 83, 83, 83]);
            }
            other => panic!("unexpected bins: {other:?}"),
        }
    }

    #[test]
    fn reference_training_split_has_balanced_quartiles() {
        let data = load_dataset(Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/diabetes.csv"
        )))
        .unwrap();
        let split = make_split(data.n_samples(), 1);
        let train = data.subset(&split.train_indices);
        let (std_train, _) = standardize(&train, None).unwrap();
        let bins = fit_bins(&std_train).unwrap();
        for fb in &bins.per_feature {
            if let FeatureBins::Quartile { train_counts, .. } = fb {
                assert_eq!(train_counts.iter().sum::<usize>(), 332);
            }
        }
        // s2 is nearly tie-free, so its groups stay close to 332/4
        match &bins.per_feature[5] {
            FeatureBins::Quartile { train_counts, .. } => {
                for &c in train_counts {
                    assert!((78..=88).contains(&c), "s2 group count {c}");
                }
            }
            other => panic!("unexpected bins: {other:?}"),
        }
    }

    #[test]
    fn reference_dataset_encodes_to_38_columns_over_10_fields() {
        let (_, bins, encoded) = reference_encoded();
        assert_eq!(bins.n_columns(), 38);
        assert_eq!(encoded.n_features(), 38);
        assert_eq!(encoded.n_fields, 10);
        let sum: usize = bins.per_feature.iter().map(FeatureBins::n_groups).sum();
        assert_eq!(sum, 9 * 4 + 2);
    }

    #[test]
    fn every_encoded_row_has_one_hot_per_field() {
        let (_, _, encoded) = reference_encoded();
        for i in 0..encoded.n_samples() {
            for f in 0..encoded.n_fields {
                let cols = encoded.field_columns(f).unwrap();
                let ones: u32 = cols.clone().map(|c| u32::from(encoded.x[[i, c]])).sum();
                assert_eq!(ones, 1, "row {i} field {f}");
            }
        }
    }

    #[test]
    fn out_of_range_values_clamp_to_outer_groups() {
        let train = dataset_from_columns(vec![("x", (10..=17).map(f64::from).collect())]);
        let bins = fit_bins(&train).unwrap();
        let probe = dataset_from_columns(vec![("x", vec![-100.0, 0.0, 100.0, 10.0, 17.0, 13.0, 11.0, 12.0])]);
        let encoded = encode(&probe, &bins).unwrap();
        assert_eq!(encoded.x[[0, 0]], 1); // below range -> group 0
        assert_eq!(encoded.x[[2, 3]], 1); // above range -> group 3
    }

    #[test]
    fn unseen_binary_value_is_an_error() {
        let train = dataset_from_columns(vec![("sex", vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0])]);
        let bins = fit_bins(&train).unwrap();
        let probe = dataset_from_columns(vec![("sex", vec![3.0; 8])]);
        assert!(matches!(
            encode(&probe, &bins),
            Err(Error::UnseenBinaryValue { .. })
        ));
    }

    #[test]
    fn age_focus_field_has_four_groups() {
        let (_, _, encoded) = reference_encoded();
        let membership = group_membership(&encoded, 0).unwrap();
        assert_eq!(membership.group_count, 4);
        for i in 0..encoded.n_samples() {
            let ones: u32 = (0..4).map(|g| u32::from(membership.p[[i, g]])).sum();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn sex_focus_field_has_two_groups() {
        let (_, _, encoded) = reference_encoded();
        let membership = group_membership(&encoded, 1).unwrap();
        assert_eq!(membership.group_count, 2);
    }

    #[test]
    fn invalid_focus_field_is_an_error() {
        let (_, _, encoded) = reference_encoded();
        assert!(matches!(
            group_membership(&encoded, 10),
            Err(Error::InvalidField { field: 10, .. })
        ));
    }

    proptest! {
        // rank-based binning is invariant under strictly increasing transforms
        #[test]
        fn monotone_transform_preserves_encoding(
            vals in proptest::collection::vec(-100.0f64..100.0, 9..40),
            scale in 0.01f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let sex: Vec<f64> = (0..vals.len()).map(|i| f64::from(i as u8 % 2)).collect();
            let base = dataset_from_columns(vec![("x", vals.clone()), ("sex", sex.clone())]);
            let transformed: Vec<f64> = vals.iter().map(|v| v * scale + shift).collect();
            let alt = dataset_from_columns(vec![("x", transformed), ("sex", sex)]);

            let bins_a = fit_bins(&base);
            let bins_b = fit_bins(&alt);
            prop_assume!(bins_a.is_ok() && bins_b.is_ok());
            let enc_a = encode(&base, &bins_a.unwrap()).unwrap();
            let enc_b = encode(&alt, &bins_b.unwrap()).unwrap();
            prop_assert_eq!(enc_a.x, enc_b.x);
        }
    }
}
