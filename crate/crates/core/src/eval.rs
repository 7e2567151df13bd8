//! Masked prediction and generalization reporting: overall and per-group
//! R^2, the per-cardinality sweep, and selection statistics.

use ndarray::Array2;
use rayon::prelude::*;

use crate::encoding::GroupMembership;
use crate::error::{Error, Result};
use crate::expansion::AlphaVector;
use crate::qubo::{build_qubo, QuboBuildInputs};
use crate::seeds;
use crate::solver::{solve_blocks, SolverConfig};

/// Per-group feature selection: `q[[s, g]] = 1` when group `g` keeps
/// expanded feature `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    pub q: Array2<u8>,
}

impl SelectionMask {
    /// Reshape a stacked solver assignment (layout `g*S + s`).
    pub fn from_stacked(q: &[u8], g_total: usize, s_total: usize) -> SelectionMask {
        assert_eq!(q.len(), g_total * s_total, "assignment length mismatch");
        SelectionMask {
            q: Array2::from_shape_fn((s_total, g_total), |(s, g)| q[g * s_total + s]),
        }
    }

    pub fn all_ones(s_total: usize, g_total: usize) -> SelectionMask {
        SelectionMask {
            q: Array2::ones((s_total, g_total)),
        }
    }

    pub fn all_zeros(s_total: usize, g_total: usize) -> SelectionMask {
        SelectionMask {
            q: Array2::zeros((s_total, g_total)),
        }
    }

    pub fn n_features(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.q.ncols()
    }

    /// Selected-feature count per group.
    pub fn selected_per_group(&self) -> Vec<usize> {
        (0..self.n_groups())
            .map(|g| (0..self.n_features()).filter(|&s| self.q[[s, g]] == 1).count())
            .collect()
    }

    /// How many groups selected feature `s`.
    pub fn groups_selecting(&self, s: usize) -> usize {
        (0..self.n_groups()).filter(|&g| self.q[[s, g]] == 1).count()
    }
}

/// Masked prediction: `w0 + sum_s alpha_s X_s q_{s,g}`.
pub fn predict_masked(
    w0: f64,
    alpha: &AlphaVector,
    x_expanded_row: &[u8],
    group: usize,
    mask: &SelectionMask,
) -> f64 {
    assert_eq!(x_expanded_row.len(), alpha.len(), "expanded row width mismatch");
    let mut y = w0;
    for (s, (&x, &a)) in x_expanded_row.iter().zip(&alpha.alpha).enumerate() {
        if x == 1 && mask.q[[s, group]] == 1 {
            y += a;
        }
    }
    y
}

/// Masked predictions for a whole expanded design matrix.
pub fn predict_all_masked(
    w0: f64,
    alpha: &AlphaVector,
    x_expanded: &Array2<u8>,
    groups: &[usize],
    mask: &SelectionMask,
) -> Vec<f64> {
    assert_eq!(x_expanded.nrows(), groups.len(), "row/group count mismatch");
    (0..x_expanded.nrows())
        .map(|i| {
            predict_masked(
                w0,
                alpha,
                x_expanded.row(i).as_slice().expect("contiguous row"),
                groups[i],
                mask,
            )
        })
        .collect()
}

/// Coefficient of determination `1 - RSS/TSS` with the mean of `y_true`
/// over the evaluated set as the null model.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    assert_eq!(y_true.len(), y_pred.len(), "prediction length mismatch");
    assert!(!y_true.is_empty(), "cannot score an empty set");
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let tss: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if tss == 0.0 {
        return Err(Error::UndefinedR2 {
            msg: "y_true is constant".to_string(),
        });
    }
    let rss: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - rss / tss)
}

/// Per-group scores; `None` when the group has fewer than two samples or a
/// constant target on that side.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupScore {
    pub group: usize,
    pub r2_train: Option<f64>,
    pub r2_test: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlphaCountRow {
    pub s: usize,
    pub alpha: f64,
    pub n_groups_selected: usize,
}

/// Full evaluation of a masked model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub r2_train: f64,
    pub r2_test: f64,
    pub per_group: Vec<GroupScore>,
    /// Entry k: number of expanded features selected by exactly k groups.
    pub selection_histogram: Vec<usize>,
    pub selected_per_group: Vec<usize>,
    pub alpha_by_count: Vec<AlphaCountRow>,
}

pub struct EvalInputs<'a> {
    pub y_train: &'a [f64],
    pub pred_train: &'a [f64],
    pub group_train: &'a [usize],
    pub y_test: &'a [f64],
    pub pred_test: &'a [f64],
    pub group_test: &'a [usize],
    pub mask: &'a SelectionMask,
    pub alpha: &'a AlphaVector,
}

/// Score masked predictions overall and within each group, and summarize
/// which expanded features the groups agreed on.
pub fn evaluate(inputs: &EvalInputs) -> Result<EvalReport> {
    let g_total = inputs.mask.n_groups();
    let s_total = inputs.mask.n_features();
    assert_eq!(inputs.alpha.len(), s_total, "alpha/mask width mismatch");

    let r2_train = r_squared(inputs.y_train, inputs.pred_train)?;
    let r2_test = r_squared(inputs.y_test, inputs.pred_test)?;

    let subset_score = |ys: &[f64], preds: &[f64], groups: &[usize], g: usize| {
        let sel: Vec<usize> = (0..ys.len()).filter(|&i| groups[i] == g).collect();
        let n = sel.len();
        if n < 2 {
            return (None, n);
        }
        let y: Vec<f64> = sel.iter().map(|&i| ys[i]).collect();
        let p: Vec<f64> = sel.iter().map(|&i| preds[i]).collect();
        (r_squared(&y, &p).ok(), n)
    };

    let per_group = (0..g_total)
        .map(|g| {
            let (r2_train, n_train) =
                subset_score(inputs.y_train, inputs.pred_train, inputs.group_train, g);
            let (r2_test, n_test) =
                subset_score(inputs.y_test, inputs.pred_test, inputs.group_test, g);
            GroupScore {
                group: g,
                r2_train,
                r2_test,
                n_train,
                n_test,
            }
        })
        .collect();

    let mut selection_histogram = vec![0usize; g_total + 1];
    let mut alpha_by_count = Vec::with_capacity(s_total);
    for s in 0..s_total {
        let count = inputs.mask.groups_selecting(s);
        selection_histogram[count] += 1;
        alpha_by_count.push(AlphaCountRow {
            s,
            alpha: inputs.alpha.alpha[s],
            n_groups_selected: count,
        });
    }

    Ok(EvalReport {
        r2_train,
        r2_test,
        per_group,
        selection_histogram,
        selected_per_group: inputs.mask.selected_per_group(),
        alpha_by_count,
    })
}

/// One row of the cardinality sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepPoint {
    pub m_f: usize,
    pub r2_train: f64,
    pub r2_test: f64,
}

/// Fixed model context for a cardinality sweep.
pub struct SweepContext<'a> {
    pub y_train: &'a [f64],
    pub y_test: &'a [f64],
    pub w0: f64,
    pub alpha: &'a AlphaVector,
    /// Expanded training design matrix.
    pub x_train: &'a Array2<u8>,
    /// Expanded test design matrix.
    pub x_test: &'a Array2<u8>,
    pub membership: &'a GroupMembership,
    pub group_test: &'a [usize],
    pub penalty_a: f64,
    /// Base solver configuration; each row derives its own seed from the
    /// configured seed and its cardinality value.
    pub solver: &'a SolverConfig,
}

/// Solve the selection problem once per cardinality value and score the
/// resulting masks. Rows run concurrently; every row's outcome depends
/// only on the context and its own derived seed.
pub fn sweep_mf(ctx: &SweepContext, mf_values: &[usize]) -> Result<Vec<SweepPoint>> {
    let group_train: Vec<usize> = (0..ctx.y_train.len())
        .map(|i| ctx.membership.group_of(i))
        .collect();
    mf_values
        .par_iter()
        .map(|&m_f| {
            let problem = build_qubo(&QuboBuildInputs {
                y: ctx.y_train,
                w0: ctx.w0,
                alpha: ctx.alpha,
                x_expanded: ctx.x_train,
                membership: ctx.membership,
                m_f,
                penalty_a: ctx.penalty_a,
            })?;
            let row_solver = ctx
                .solver
                .with_seed(seeds::derive(ctx.solver.seed(), m_f as u64));
            let (q, _) = solve_blocks(
                &problem,
                ctx.membership.group_count,
                ctx.alpha.len(),
                &row_solver,
            )?;
            let mask = SelectionMask::from_stacked(&q, ctx.membership.group_count, ctx.alpha.len());
            let pred_train =
                predict_all_masked(ctx.w0, ctx.alpha, ctx.x_train, &group_train, &mask);
            let pred_test =
                predict_all_masked(ctx.w0, ctx.alpha, ctx.x_test, ctx.group_test, &mask);
            Ok(SweepPoint {
                m_f,
                r2_train: r_squared(ctx.y_train, &pred_train)?,
                r2_test: r_squared(ctx.y_test, &pred_test)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{expand_row, extract_alpha, ExpandedIndex};
    use crate::ffm::FfmParams;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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
    fn identity_mask_reproduces_model_predictions() {
        let (field_of, n_fields) = reference_layout();
        let d = field_of.len();
        let index = ExpandedIndex::new(d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);

        let mut params = FfmParams::zeros(d, n_fields, 4);
        params.w0 = 0.4;
        for w in &mut params.w {
            *w = rng.random_range(-1.0..1.0);
        }
        for v in params.v.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let alpha = extract_alpha(&params, &field_of, &index);
        let mask = SelectionMask::all_ones(index.total(), 3);

        for _ in 0..20 {
            let row = one_hot_row(&field_of, n_fields, &mut rng);
            let expanded = expand_row(&row, &index);
            let masked = predict_masked(params.w0, &alpha, &expanded, 1, &mask);
            let direct = params.predict(&row, &field_of);
            assert!((masked - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mask_predicts_bias_only() {
        let alpha = AlphaVector {
            alpha: vec![1.0, -2.0, 3.0],
        };
        let mask = SelectionMask::all_zeros(3, 2);
        assert_eq!(predict_masked(0.7, &alpha, &[1, 1, 1], 0, &mask), 0.7);
    }

    #[test]
    fn single_selected_term() {
        let alpha = AlphaVector {
            alpha: vec![1.5, -2.0, 3.0],
        };
        let mut mask = SelectionMask::all_zeros(3, 2);
        mask.q[[0, 1]] = 1;
        assert_eq!(predict_masked(0.5, &alpha, &[1, 0, 1], 1, &mask), 2.0);
    }

    #[test]
    fn perfect_fit_scores_one() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let y = [1.0, 2.0, 3.0];
        let pred = [2.0, 2.0, 2.0];
        assert!(r_squared(&y, &pred).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_target_is_undefined() {
        assert!(matches!(
            r_squared(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::UndefinedR2 { .. })
        ));
    }

    fn toy_eval_inputs<'a>(
        mask: &'a SelectionMask,
        alpha: &'a AlphaVector,
    ) -> (Vec<f64>, Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>, Vec<usize>) {
        let _ = (mask, alpha);
        let y_train = vec![1.0, 2.0, 3.0, 4.0];
        let pred_train = vec![1.1, 1.9, 3.2, 3.8];
        let group_train = vec![0, 0, 1, 1];
        let y_test = vec![0.5, 1.5, 2.5];
        let pred_test = vec![0.4, 1.7, 2.4];
        let group_test = vec![0, 0, 1];
        (y_train, pred_train, group_train, y_test, pred_test, group_test)
    }

    #[test]
    fn evaluate_reports_groups_and_histogram() {
        let alpha = AlphaVector {
            alpha: vec![0.5, -0.5, 1.0, 0.0],
        };
        let mut mask = SelectionMask::all_zeros(4, 2);
        mask.q[[0, 0]] = 1;
        mask.q[[0, 1]] = 1;
        mask.q[[2, 1]] = 1;
        let (y_train, pred_train, group_train, y_test, pred_test, group_test) =
            toy_eval_inputs(&mask, &alpha);

        let report = evaluate(&EvalInputs {
            y_train: &y_train,
            pred_train: &pred_train,
            group_train: &group_train,
            y_test: &y_test,
            pred_test: &pred_test,
            group_test: &group_test,
            mask: &mask,
            alpha: &alpha,
        })
        .unwrap();

        assert_eq!(report.selection_histogram, vec![2, 1, 1]);
        assert_eq!(
            report.selection_histogram.iter().sum::<usize>(),
            mask.n_features()
        );
        assert_eq!(report.selected_per_group, vec![1, 2]);
        // group 1 has a single test sample: undefined
        assert_eq!(report.per_group[1].n_test, 1);
        assert!(report.per_group[1].r2_test.is_none());
        assert!(report.per_group[0].r2_test.is_some());

        let weighted: usize = report
            .selection_histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| k * c)
            .sum();
        assert_eq!(weighted, report.selected_per_group.iter().sum::<usize>());
    }

    proptest! {
        // R^2 is invariant under a common affine transform of target and
        // prediction
        #[test]
        fn r_squared_is_affine_invariant(
            y in proptest::collection::vec(-10.0f64..10.0, 3..20),
            noise in proptest::collection::vec(-1.0f64..1.0, 3..20),
            scale in 0.1f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let n = y.len().min(noise.len());
            let y = &y[..n];
            let pred: Vec<f64> = (0..n).map(|i| y[i] + noise[i]).collect();
            prop_assume!(r_squared(y, &pred).is_ok());
            let base = r_squared(y, &pred).unwrap();

            let y2: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let p2: Vec<f64> = pred.iter().map(|v| v * scale + shift).collect();
            let transformed = r_squared(&y2, &p2).unwrap();
            prop_assert!((base - transformed).abs() < 1e-8 * base.abs().max(1.0));
        }
    }
}
