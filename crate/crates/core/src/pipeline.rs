//! End-to-end orchestration: configuration, stage functions, and file
//! artifacts. Every stage reads its predecessors' artifacts from the
//! output directory, so expensive steps (training, solving) can be rerun
//! independently.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::{load_dataset, make_split_with_ratio, standardize, RawDataset, SplitSpec, StandardizationStats};
use crate::encoding::{encode, fit_bins, group_membership, EncodedDataset, FeatureBins, GroupMembership, QuartileBins};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, predict_all_masked, r_squared, sweep_mf, EvalInputs, EvalReport, SelectionMask,
    SweepContext, SweepPoint,
};
use crate::expansion::{expand_row, extract_alpha, AlphaVector, ExpandedIndex};
use crate::ffm::{grid_search_cv, train, CvGrid, FfmParams, LrSchedule};
use crate::qubo::{build_qubo, QuboBuildInputs, QuboProblem};
use crate::seeds;
use crate::solver::{
    solve_blocks, verify_cardinality, CardinalityCheck, SaConfig, SolveResult, SolverChoice,
    SolverConfig, TabuConfig,
};

const STREAM_TRAIN: u64 = 1;
const STREAM_CV: u64 = 2;
const STREAM_SOLVE: u64 = 3;
const STREAM_SWEEP: u64 = 4;

/// Environment variable supplying the default output directory.
pub const OUT_DIR_ENV: &str = "FFM_ISING_OUT";

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BINS_FILE: &str = "bins.json";
pub const QUBO_FILE: &str = "qubo.txt";
pub const MASK_FILE: &str = "mask.json";
pub const REPORT_FILE: &str = "report.json";
pub const FIGURE1_FILE: &str = "figure1.csv";
pub const FIGURE2_FILE: &str = "figure2.csv";
pub const FIGURE3_FILE: &str = "figure3.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reproducibility-first run configuration. Unknown keys in a config file
/// are rejected.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// train:test ratio, e.g. "3:1"; train size is the ceiling share.
    pub split_ratio: String,
    pub epochs: usize,
    pub latent_dim: usize,
    /// Standard deviation of the latent initialization draws.
    pub latent_init_std: f64,
    pub focus_field: String,
    pub m_f: usize,
    pub penalty_a: f64,
    /// Pin the learning-rate schedule; when either is absent the schedule
    /// comes from grid-search cross-validation.
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub cv_grid: CvGrid,
    pub solver: SolverChoice,
    pub tabu_tenure: Option<usize>,
    pub tabu_max_iterations: Option<usize>,
    pub tabu_restarts: usize,
    pub sa_sweeps: usize,
    pub sa_beta0: f64,
    pub sa_beta1: f64,
    /// Cardinality values for the sweep stage.
    pub sweep_mf: Vec<usize>,
    /// Also write the fitted bin boundaries as a debug artifact.
    pub dump_bins: bool,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            data_path: PathBuf::from("data/diabetes.csv"),
            out_dir: std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out")),
            seed: 1,
            split_ratio: "3:1".to_string(),
            epochs: 300,
            latent_dim: 4,
            latent_init_std: crate::ffm::LATENT_INIT_STD,
            focus_field: "age".to_string(),
            m_f: 80,
            penalty_a: 10.0,
            a1: None,
            a2: None,
            cv_grid: CvGrid::default(),
            solver: SolverChoice::Tabu,
            tabu_tenure: None,
            tabu_max_iterations: None,
            tabu_restarts: 5,
            sa_sweeps: 500,
            sa_beta0: 0.01,
            sa_beta1: 50.0,
            sweep_mf: (1..=10).map(|k| k * 10).collect(),
            dump_bins: false,
        }
    }
}

impl PipelineConfig {
    /// Load a JSON config file and apply it over the defaults.
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config {
                msg: format!("{}: {e}", path.display()),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Structural validation that needs no data access.
    pub fn validate(&self) -> Result<()> {
        self.split_parts()?;
        if self.latent_dim == 0 {
            return Err(Error::Config {
                msg: "latent_dim must be at least 1".into(),
            });
        }
        if !(self.latent_init_std > 0.0) {
            return Err(Error::Config {
                msg: format!("latent_init_std must be positive, got {}", self.latent_init_std),
            });
        }
        if self.penalty_a <= 0.0 {
            return Err(Error::Config {
                msg: format!("penalty_a must be positive, got {}", self.penalty_a),
            });
        }
        for (name, v) in [("a1", self.a1), ("a2", self.a2)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config {
                        msg: format!("{name} must be positive, got {v}"),
                    });
                }
            }
        }
        if self.cv_grid.a1_candidates.is_empty() || self.cv_grid.a2_candidates.is_empty() {
            return Err(Error::Config {
                msg: "cv_grid candidate lists must be non-empty".into(),
            });
        }
        if self
            .cv_grid
            .a1_candidates
            .iter()
            .chain(&self.cv_grid.a2_candidates)
            .any(|&v| !(v > 0.0))
        {
            return Err(Error::Config {
                msg: "cv_grid candidates must be positive".into(),
            });
        }
        if self.tabu_restarts == 0 {
            return Err(Error::Config {
                msg: "tabu_restarts must be at least 1".into(),
            });
        }
        if self.sa_sweeps == 0 || self.sa_beta0 <= 0.0 || self.sa_beta0 > self.sa_beta1 {
            return Err(Error::Config {
                msg: "simulated annealing needs sweeps >= 1 and 0 < beta0 <= beta1".into(),
            });
        }
        if self.focus_field.trim().is_empty() {
            return Err(Error::Config {
                msg: "focus_field must name a feature column".into(),
            });
        }
        Ok(())
    }

    fn split_parts(&self) -> Result<(usize, usize)> {
        let parts: Vec<&str> = self.split_ratio.split(':').collect();
        let parse = |s: &str| s.trim().parse::<usize>().ok().filter(|&v| v > 0);
        match parts.as_slice() {
            [a, b] => match (parse(a), parse(b)) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::Config {
                    msg: format!("invalid split_ratio {:?}", self.split_ratio),
                }),
            },
            _ => Err(Error::Config {
                msg: format!("invalid split_ratio {:?}, expected \"train:test\"", self.split_ratio),
            }),
        }
    }

    fn solver_config(&self, seed: u64) -> SolverConfig {
        match self.solver {
            SolverChoice::Tabu => SolverConfig::Tabu(TabuConfig {
                tenure: self.tabu_tenure,
                max_iterations: self.tabu_max_iterations,
                restarts: self.tabu_restarts,
                seed,
            }),
            SolverChoice::SimulatedAnnealing => SolverConfig::SimulatedAnnealing(SaConfig {
                sweeps: self.sa_sweeps,
                beta0: self.sa_beta0,
                beta1: self.sa_beta1,
                seed,
            }),
        }
    }

    pub fn seed_manifest(&self) -> SeedManifest {
        SeedManifest {
            base: self.seed,
            split: self.seed,
            train: seeds::derive(self.seed, STREAM_TRAIN),
            cv: seeds::derive(self.seed, STREAM_CV),
            solver: seeds::derive(self.seed, STREAM_SOLVE),
            sweep: seeds::derive(self.seed, STREAM_SWEEP),
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Parse a sweep specification: "start:end:step", a comma list, or a
/// single value.
pub fn parse_mf_spec(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config {
        msg: format!("invalid cardinality spec {spec:?}; use N, N,M,... or start:end:step"),
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if step == 0 || end < start {
            return Err(bad());
        }
        Ok((start..=end).step_by(step).collect())
    } else {
        let values: Vec<usize> = spec
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if values.is_empty() {
            return Err(bad());
        }
        Ok(values)
    }
}

/// All derived random streams of a run.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedManifest {
    pub base: u64,
    pub split: u64,
    pub train: u64,
    pub cv: u64,
    pub solver: u64,
    pub sweep: u64,
}

/// Outcome of the data stages: standardized split plus encodings.
pub struct PreparedData {
    pub split: SplitSpec,
    pub stats: StandardizationStats,
    pub bins: QuartileBins,
    pub encoded_train: EncodedDataset,
    pub encoded_test: EncodedDataset,
    pub y_train: Vec<f64>,
    pub y_test: Vec<f64>,
    pub focus_field_index: usize,
    pub membership_train: GroupMembership,
    pub group_train: Vec<usize>,
    pub group_test: Vec<usize>,
}

/// Load, split, standardize against training statistics, fit bins on the
/// training split only, and encode both splits.
pub fn prepare_data(config: &PipelineConfig) -> Result<PreparedData> {
    let (num, den) = config.split_parts()?;
    let data = load_dataset(&config.data_path).map_err(|e| e.in_stage("ingest"))?;
    let split = make_split_with_ratio(data.n_samples(), config.seed, num, den);

    let train_raw = data.subset(&split.train_indices);
    let test_raw = data.subset(&split.test_indices);
    let (std_train, stats) = standardize(&train_raw, None).map_err(|e| e.in_stage("ingest"))?;
    let (std_test, _) = standardize(&test_raw, Some(&stats)).map_err(|e| e.in_stage("ingest"))?;

    let focus_field_index = resolve_focus_field(&data, &config.focus_field)?;
    let bins = fit_bins(&std_train).map_err(|e| e.in_stage("encode"))?;
    let encoded_train = encode(&std_train, &bins).map_err(|e| e.in_stage("encode"))?;
    let encoded_test = encode(&std_test, &bins).map_err(|e| e.in_stage("encode"))?;

    let membership_train =
        group_membership(&encoded_train, focus_field_index).map_err(|e| e.in_stage("encode"))?;
    let membership_test =
        group_membership(&encoded_test, focus_field_index).map_err(|e| e.in_stage("encode"))?;
    let group_train: Vec<usize> = (0..encoded_train.n_samples())
        .map(|i| membership_train.group_of(i))
        .collect();
    let group_test: Vec<usize> = (0..encoded_test.n_samples())
        .map(|i| membership_test.group_of(i))
        .collect();

    Ok(PreparedData {
        split,
        stats,
        bins,
        encoded_train,
        encoded_test,
        y_train: std_train.target,
        y_test: std_test.target,
        focus_field_index,
        membership_train,
        group_train,
        group_test,
    })
}

fn resolve_focus_field(data: &RawDataset, name: &str) -> Result<usize> {
    data.feature_names
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config {
            msg: format!(
                "focus_field {name:?} is not one of {:?}",
                data.feature_names
            ),
        })
}

/// A trained model together with its provenance.
pub struct TrainedModel {
    pub params: FfmParams,
    pub field_of: Vec<usize>,
    pub schedule: LrSchedule,
    pub train_seed: u64,
    pub cv_used: bool,
}

/// Resolve the learning-rate schedule (pinned or cross-validated) and
/// train the final model on the full training split.
pub fn train_stage(config: &PipelineConfig, data: &PreparedData) -> Result<TrainedModel> {
    let (a1, a2, cv_used) = match (config.a1, config.a2) {
        (Some(a1), Some(a2)) => (a1, a2, false),
        _ => {
            let folds = data.split.train_local_folds();
            let (a1, a2) = grid_search_cv(
                &data.encoded_train,
                &data.y_train,
                &folds,
                &config.cv_grid,
                config.epochs,
                config.latent_dim,
                config.latent_init_std,
                seeds::derive(config.seed, STREAM_CV),
            )
            .map_err(|e| e.in_stage("cross-validation"))?;
            (a1, a2, true)
        }
    };

    let schedule = LrSchedule::new(a1, a2, config.epochs);
    let train_seed = seeds::derive(config.seed, STREAM_TRAIN);
    let params = train(
        &data.encoded_train,
        &data.y_train,
        &schedule,
        config.latent_dim,
        config.latent_init_std,
        train_seed,
    )
    .map_err(|e| e.in_stage("train"))?;

    Ok(TrainedModel {
        params,
        field_of: data.encoded_train.field_of.clone(),
        schedule,
        train_seed,
        cv_used,
    })
}

/// Frozen expanded-feature view of a trained model over both splits.
pub struct ExpandedModel {
    pub index: ExpandedIndex,
    pub alpha: AlphaVector,
    pub x_train: Array2<u8>,
    pub x_test: Array2<u8>,
}

pub fn expand_stage(data: &PreparedData, model: &TrainedModel) -> Result<ExpandedModel> {
    let index = ExpandedIndex::new(data.encoded_train.n_features())
        .map_err(|e| e.in_stage("expand"))?;
    let alpha = extract_alpha(&model.params, &model.field_of, &index);
    Ok(ExpandedModel {
        x_train: expand_matrix(&data.encoded_train, &index),
        x_test: expand_matrix(&data.encoded_test, &index),
        index,
        alpha,
    })
}

fn expand_matrix(encoded: &EncodedDataset, index: &ExpandedIndex) -> Array2<u8> {
    let n = encoded.n_samples();
    let mut out = Array2::<u8>::zeros((n, index.total()));
    for i in 0..n {
        let row = expand_row(
            encoded.x.row(i).as_slice().expect("contiguous row"),
            index,
        );
        for (s, &v) in row.iter().enumerate() {
            out[[i, s]] = v;
        }
    }
    out
}

/// Result of the selection stage.
pub struct SelectionOutcome {
    pub problem: QuboProblem,
    pub mask: SelectionMask,
    pub block_results: Vec<SolveResult>,
    pub cardinality: CardinalityCheck,
}

/// Build the selection QUBO at the configured cardinality and solve it
/// block by block.
pub fn select_stage(
    config: &PipelineConfig,
    data: &PreparedData,
    expanded: &ExpandedModel,
    w0: f64,
) -> Result<SelectionOutcome> {
    let s_total = expanded.index.total();
    if config.m_f > s_total {
        return Err(Error::Config {
            msg: format!("m_f = {} exceeds expanded feature count {s_total}", config.m_f),
        });
    }

    let problem = build_qubo(&QuboBuildInputs {
        y: &data.y_train,
        w0,
        alpha: &expanded.alpha,
        x_expanded: &expanded.x_train,
        membership: &data.membership_train,
        m_f: config.m_f,
        penalty_a: config.penalty_a,
    })
    .map_err(|e| e.in_stage("qubo-build"))?;

    let solver = config.solver_config(seeds::derive(config.seed, STREAM_SOLVE));
    let (q, block_results) = solve_blocks(
        &problem,
        data.membership_train.group_count,
        s_total,
        &solver,
    )
    .map_err(|e| e.in_stage("solve"))?;

    let cardinality = verify_cardinality(
        &q,
        data.membership_train.group_count,
        s_total,
        config.m_f,
    );
    let mask = SelectionMask::from_stacked(&q, data.membership_train.group_count, s_total);

    Ok(SelectionOutcome {
        problem,
        mask,
        block_results,
        cardinality,
    })
}

/// Unmasked model scores.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FfmScores {
    pub r2_train: f64,
    pub r2_test: f64,
}

pub fn ffm_scores(data: &PreparedData, model: &TrainedModel) -> Result<FfmScores> {
    let predict_split = |encoded: &EncodedDataset| -> Vec<f64> {
        (0..encoded.n_samples())
            .map(|i| {
                model.params.predict(
                    encoded.x.row(i).as_slice().expect("contiguous row"),
                    &model.field_of,
                )
            })
            .collect()
    };
    Ok(FfmScores {
        r2_train: r_squared(&data.y_train, &predict_split(&data.encoded_train))?,
        r2_test: r_squared(&data.y_test, &predict_split(&data.encoded_test))?,
    })
}

/// Published external baselines on this dataset (original quantitative
/// features), echoed in reports for comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReferenceBaselines {
    pub random_forest_test_r2: f64,
    pub elastic_net_test_r2: f64,
}

pub const REFERENCE_BASELINES: ReferenceBaselines = ReferenceBaselines {
    random_forest_test_r2: 0.4689,
    elastic_net_test_r2: 0.4728,
};

/// Focus-field summary for reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocusInfo {
    pub name: String,
    pub index: usize,
    pub group_count: usize,
    /// Group boundaries on the standardized scale (empty for binary).
    pub boundaries: Vec<f64>,
}

/// Selection-stage summary for reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionSummary {
    pub m_f: usize,
    pub penalty_a: f64,
    pub n_vars: usize,
    pub block_energies: Vec<f64>,
    pub cardinality: CardinalityCheck,
}

/// The full run report written to `report.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seeds: SeedManifest,
    pub schedule: LrSchedule,
    pub cv_used: bool,
    pub focus: FocusInfo,
    pub ffm: FfmScores,
    pub selection: SelectionSummary,
    pub masked: EvalReport,
    pub reference_baselines: ReferenceBaselines,
}

fn focus_info(config: &PipelineConfig, data: &PreparedData) -> FocusInfo {
    let boundaries = match &data.bins.per_feature[data.focus_field_index] {
        FeatureBins::Quartile { boundaries, .. } => boundaries.clone(),
        FeatureBins::Binary { .. } => Vec::new(),
    };
    FocusInfo {
        name: config.focus_field.clone(),
        index: data.focus_field_index,
        group_count: data.membership_train.group_count,
        boundaries,
    }
}

/// Evaluate a mask over both splits and assemble the report.
pub fn report_for_mask(
    config: &PipelineConfig,
    data: &PreparedData,
    model: &TrainedModel,
    expanded: &ExpandedModel,
    mask: &SelectionMask,
    selection: SelectionSummary,
) -> Result<RunReport> {
    let pred_train = predict_all_masked(
        model.params.w0,
        &expanded.alpha,
        &expanded.x_train,
        &data.group_train,
        mask,
    );
    let pred_test = predict_all_masked(
        model.params.w0,
        &expanded.alpha,
        &expanded.x_test,
        &data.group_test,
        mask,
    );
    let masked = evaluate(&EvalInputs {
        y_train: &data.y_train,
        pred_train: &pred_train,
        group_train: &data.group_train,
        y_test: &data.y_test,
        pred_test: &pred_test,
        group_test: &data.group_test,
        mask,
        alpha: &expanded.alpha,
    })
    .map_err(|e| e.in_stage("evaluate"))?;

    Ok(RunReport {
        config: config.clone(),
        seeds: config.seed_manifest(),
        schedule: model.schedule,
        cv_used: model.cv_used,
        focus: focus_info(config, data),
        ffm: ffm_scores(data, model).map_err(|e| e.in_stage("evaluate"))?,
        selection,
        masked,
        reference_baselines: REFERENCE_BASELINES,
    })
}

// ---------------------------------------------------------------------------
// file artifacts

/// Serialized model checkpoint (latent tensor as nested arrays).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<Vec<Vec<f64>>>,
    pub k: usize,
    pub d: usize,
    pub f: usize,
    pub field_of: Vec<usize>,
    pub train_seed: u64,
    pub schedule: LrSchedule,
    pub cv_used: bool,
    pub config: PipelineConfig,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, config: &PipelineConfig) -> Checkpoint {
        let (d, f, k) = (
            model.params.n_features(),
            model.params.n_fields(),
            model.params.latent_dim(),
        );
        let v = (0..d)
            .map(|l| {
                (0..f)
                    .map(|fld| (0..k).map(|m| model.params.v[[l, fld, m]]).collect())
                    .collect()
            })
            .collect();
        Checkpoint {
            w0: model.params.w0,
            w: model.params.w.clone(),
            v,
            k,
            d,
            f,
            field_of: model.field_of.clone(),
            train_seed: model.train_seed,
            schedule: model.schedule,
            cv_used: model.cv_used,
            config: config.clone(),
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        use ndarray::Array3;
        if self.w.len() != self.d || self.field_of.len() != self.d {
            return Err(Error::Config {
                msg: "checkpoint dimensions are inconsistent".into(),
            });
        }
        let mut v = Array3::zeros((self.d, self.f, self.k));
        for l in 0..self.d {
            for fld in 0..self.f {
                for m in 0..self.k {
                    v[[l, fld, m]] = self.v[l][fld][m];
                }
            }
        }
        Ok(TrainedModel {
            params: FfmParams {
                w0: self.w0,
                w: self.w.clone(),
                v,
            },
            field_of: self.field_of.clone(),
            schedule: self.schedule,
            train_seed: self.train_seed,
            cv_used: self.cv_used,
        })
    }

    /// The checkpoint must come from the same data preparation as the
    /// current config, otherwise downstream stages would silently mix
    /// incompatible splits.
    pub fn check_compatible(&self, config: &PipelineConfig) -> Result<()> {
        let mismatches: Vec<&str> = [
            ("data_path", self.config.data_path != config.data_path),
            ("seed", self.config.seed != config.seed),
            ("split_ratio", self.config.split_ratio != config.split_ratio),
        ]
        .iter()
        .filter(|(_, bad)| *bad)
        .map(|(name, _)| *name)
        .collect();
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                msg: format!(
                    "checkpoint was produced with different {}; re-run train",
                    mismatches.join(", ")
                ),
            })
        }
    }
}

/// Serialized selection mask plus solver provenance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MaskFile {
    pub s_total: usize,
    pub g_total: usize,
    pub m_f: usize,
    pub penalty_a: f64,
    pub n_vars: usize,
    /// Selected expanded-feature ids per group, ascending.
    pub selected: Vec<Vec<usize>>,
    pub block_energies: Vec<f64>,
    pub block_iterations: Vec<usize>,
    pub cardinality: CardinalityCheck,
}

impl MaskFile {
    pub fn from_outcome(outcome: &SelectionOutcome, config: &PipelineConfig) -> MaskFile {
        let mask = &outcome.mask;
        let selected = (0..mask.n_groups())
            .map(|g| {
                (0..mask.n_features())
                    .filter(|&s| mask.q[[s, g]] == 1)
                    .collect()
            })
            .collect();
        MaskFile {
            s_total: mask.n_features(),
            g_total: mask.n_groups(),
            m_f: config.m_f,
            penalty_a: config.penalty_a,
            n_vars: outcome.problem.n_vars,
            selected,
            block_energies: outcome.block_results.iter().map(|r| r.best_energy).collect(),
            block_iterations: outcome
                .block_results
                .iter()
                .map(|r| r.iterations_used)
                .collect(),
            cardinality: outcome.cardinality.clone(),
        }
    }

    pub fn to_mask(&self) -> SelectionMask {
        let mut mask = SelectionMask::all_zeros(self.s_total, self.g_total);
        for (g, sel) in self.selected.iter().enumerate() {
            for &s in sel {
                mask.q[[s, g]] = 1;
            }
        }
        mask
    }

    pub fn selection_summary(&self) -> SelectionSummary {
        SelectionSummary {
            m_f: self.m_f,
            penalty_a: self.penalty_a,
            n_vars: self.n_vars,
            block_energies: self.block_energies.clone(),
            cardinality: self.cardinality.clone(),
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config {
        msg: format!("serialization failed: {e}"),
    })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            produced_by: produced_by.to_string(),
        });
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        msg: format!("{}: {e}", path.display()),
    })
}

fn write_figure1(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("mf,r2_train,r2_test\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.m_f, p.r2_train, p.r2_test));
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_figure2(
    path: &Path,
    data: &PreparedData,
    pred_train: &[f64],
    pred_test: &[f64],
) -> Result<()> {
    let mut out = String::from("split,group,y_true,y_pred\n");
    for (i, &p) in pred_train.iter().enumerate() {
        out.push_str(&format!(
            "train,{},{},{}\n",
            data.group_train[i], data.y_train[i], p
        ));
    }
    for (i, &p) in pred_test.iter().enumerate() {
        out.push_str(&format!(
            "test,{},{},{}\n",
            data.group_test[i], data.y_test[i], p
        ));
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_figure3(path: &Path, expanded: &ExpandedModel, mask: &SelectionMask) -> Result<()> {
    let mut out = String::from("s,l1,l2,alpha,n_groups_selected\n");
    for s in 0..expanded.index.total() {
        let (l1, l2) = match expanded.index.pair_of(s) {
            Some((l1, l2)) => (l1.to_string(), l2.to_string()),
            None => (s.to_string(), String::new()),
        };
        out.push_str(&format!(
            "{s},{l1},{l2},{},{}\n",
            expanded.alpha.alpha[s],
            mask.groups_selecting(s)
        ));
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config: &'a PipelineConfig,
    seeds: SeedManifest,
    artifacts: Vec<&'a str>,
}

fn ensure_out_dir(config: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir).map_err(|source| Error::Io {
        path: config.out_dir.clone(),
        source,
    })
}

// ---------------------------------------------------------------------------
// subcommand entry points

/// Data prep + (optional) grid search + final training; writes the
/// checkpoint artifact.
pub fn cmd_train(config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    ensure_out_dir(config)?;
    let data = prepare_data(config)?;
    let model = train_stage(config, &data)?;
    let scores = ffm_scores(&data, &model).map_err(|e| e.in_stage("evaluate"))?;

    write_json(
        &config.artifact(CHECKPOINT_FILE),
        &Checkpoint::from_model(&model, config),
    )?;
    if config.dump_bins {
        write_json(&config.artifact(BINS_FILE), &data.bins)?;
    }
    println!(
        "trained: a1 = {}, a2 = {} ({}), train R^2 = {:.4}, test R^2 = {:.4}",
        model.schedule.a1,
        model.schedule.a2,
        if model.cv_used { "cross-validated" } else { "pinned" },
        scores.r2_train,
        scores.r2_test
    );
    println!("wrote {}", config.artifact(CHECKPOINT_FILE).display());
    Ok(())
}

fn load_checkpoint(config: &PipelineConfig) -> Result<(TrainedModel, PipelineConfig)> {
    let checkpoint: Checkpoint = read_json(&config.artifact(CHECKPOINT_FILE), "train")?;
    checkpoint.check_compatible(config)?;
    Ok((checkpoint.to_model()?, checkpoint.config.clone()))
}

/// Build, export, and solve the selection QUBO from an existing
/// checkpoint; writes mask, report, and scatter/weight figures.
pub fn cmd_select(config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    ensure_out_dir(config)?;
    let (model, _) = load_checkpoint(config)?;
    let data = prepare_data(config)?;
    let expanded = expand_stage(&data, &model)?;
    let outcome = select_stage(config, &data, &expanded, model.params.w0)?;

    outcome
        .problem
        .write_file(&config.artifact(QUBO_FILE))
        .map_err(|e| e.in_stage("qubo-export"))?;
    let mask_file = MaskFile::from_outcome(&outcome, config);
    write_json(&config.artifact(MASK_FILE), &mask_file)?;

    let report = report_for_mask(
        config,
        &data,
        &model,
        &expanded,
        &outcome.mask,
        mask_file.selection_summary(),
    )?;
    write_outputs_for_report(config, &data, &model, &expanded, &outcome.mask, &report)?;

    println!(
        "selected {} features per group (cardinality {}): masked train R^2 = {:.4}, test R^2 = {:.4}",
        config.m_f,
        if outcome.cardinality.pass { "satisfied" } else { "violated" },
        report.masked.r2_train,
        report.masked.r2_test
    );
    Ok(())
}

fn write_outputs_for_report(
    config: &PipelineConfig,
    data: &PreparedData,
    model: &TrainedModel,
    expanded: &ExpandedModel,
    mask: &SelectionMask,
    report: &RunReport,
) -> Result<()> {
    let pred_train = predict_all_masked(
        model.params.w0,
        &expanded.alpha,
        &expanded.x_train,
        &data.group_train,
        mask,
    );
    let pred_test = predict_all_masked(
        model.params.w0,
        &expanded.alpha,
        &expanded.x_test,
        &data.group_test,
        mask,
    );
    write_json(&config.artifact(REPORT_FILE), report)?;
    write_figure2(&config.artifact(FIGURE2_FILE), data, &pred_train, &pred_test)?;
    write_figure3(&config.artifact(FIGURE3_FILE), expanded, mask)?;
    Ok(())
}

/// Re-evaluate an existing mask without re-solving.
pub fn cmd_report(config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    ensure_out_dir(config)?;
    let (model, _) = load_checkpoint(config)?;
    let mask_file: MaskFile = read_json(&config.artifact(MASK_FILE), "select")?;
    let data = prepare_data(config)?;
    let expanded = expand_stage(&data, &model)?;
    let mask = mask_file.to_mask();

    let report = report_for_mask(
        config,
        &data,
        &model,
        &expanded,
        &mask,
        mask_file.selection_summary(),
    )?;
    write_outputs_for_report(config, &data, &model, &expanded, &mask, &report)?;
    println!(
        "report: ffm test R^2 = {:.4}, masked test R^2 = {:.4}",
        report.ffm.r2_test, report.masked.r2_test
    );
    Ok(())
}

/// One selection solve per cardinality value; writes the sweep figure.
pub fn cmd_sweep(config: &PipelineConfig, mf_values: &[usize]) -> Result<()> {
    config.validate()?;
    ensure_out_dir(config)?;
    let (model, _) = load_checkpoint(config)?;
    let data = prepare_data(config)?;
    let expanded = expand_stage(&data, &model)?;

    let s_total = expanded.index.total();
    if let Some(&bad) = mf_values.iter().find(|&&m| m > s_total) {
        return Err(Error::Config {
            msg: format!("sweep cardinality {bad} exceeds expanded feature count {s_total}"),
        });
    }

    let solver = config.solver_config(seeds::derive(config.seed, STREAM_SWEEP));
    let points = sweep_mf(
        &SweepContext {
            y_train: &data.y_train,
            y_test: &data.y_test,
            w0: model.params.w0,
            alpha: &expanded.alpha,
            x_train: &expanded.x_train,
            x_test: &expanded.x_test,
            membership: &data.membership_train,
            group_test: &data.group_test,
            penalty_a: config.penalty_a,
            solver: &solver,
        },
        mf_values,
    )
    .map_err(|e| e.in_stage("sweep"))?;

    write_figure1(&config.artifact(FIGURE1_FILE), &points)?;
    for p in &points {
        println!("m_f = {:>4}: train R^2 = {:.4}, test R^2 = {:.4}", p.m_f, p.r2_train, p.r2_test);
    }
    println!("wrote {}", config.artifact(FIGURE1_FILE).display());
    Ok(())
}

/// The whole pipeline: ingest through report, plus the sweep when
/// configured, and a manifest of every seed and artifact.
pub fn run_full(config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    ensure_out_dir(config)?;

    let data = prepare_data(config)?;
    let model = train_stage(config, &data)?;
    let expanded = expand_stage(&data, &model)?;
    let outcome = select_stage(config, &data, &expanded, model.params.w0)?;

    write_json(
        &config.artifact(CHECKPOINT_FILE),
        &Checkpoint::from_model(&model, config),
    )?;
    if config.dump_bins {
        write_json(&config.artifact(BINS_FILE), &data.bins)?;
    }
    outcome
        .problem
        .write_file(&config.artifact(QUBO_FILE))
        .map_err(|e| e.in_stage("qubo-export"))?;
    let mask_file = MaskFile::from_outcome(&outcome, config);
    write_json(&config.artifact(MASK_FILE), &mask_file)?;

    let report = report_for_mask(
        config,
        &data,
        &model,
        &expanded,
        &outcome.mask,
        mask_file.selection_summary(),
    )?;
    write_outputs_for_report(config, &data, &model, &expanded, &outcome.mask, &report)?;

    let mut artifacts = vec![CHECKPOINT_FILE, QUBO_FILE, MASK_FILE, REPORT_FILE, FIGURE2_FILE, FIGURE3_FILE];
    if config.dump_bins {
        artifacts.push(BINS_FILE);
    }

    if !config.sweep_mf.is_empty() {
        let solver = config.solver_config(seeds::derive(config.seed, STREAM_SWEEP));
        let points = sweep_mf(
            &SweepContext {
                y_train: &data.y_train,
                y_test: &data.y_test,
                w0: model.params.w0,
                alpha: &expanded.alpha,
                x_train: &expanded.x_train,
                x_test: &expanded.x_test,
                membership: &data.membership_train,
                group_test: &data.group_test,
                penalty_a: config.penalty_a,
                solver: &solver,
            },
            &config.sweep_mf,
        )
        .map_err(|e| e.in_stage("sweep"))?;
        write_figure1(&config.artifact(FIGURE1_FILE), &points)?;
        artifacts.push(FIGURE1_FILE);
    }

    artifacts.push(MANIFEST_FILE);
    write_json(
        &config.artifact(MANIFEST_FILE),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds: config.seed_manifest(),
            artifacts,
        },
    )?;

    println!(
        "ffm: train R^2 = {:.4}, test R^2 = {:.4} (a1 = {}, a2 = {}, {})",
        report.ffm.r2_train,
        report.ffm.r2_test,
        report.schedule.a1,
        report.schedule.a2,
        if report.cv_used { "cross-validated" } else { "pinned" }
    );
    println!(
        "masked (m_f = {}): train R^2 = {:.4}, test R^2 = {:.4}, cardinality {}",
        config.m_f,
        report.masked.r2_train,
        report.masked.r2_test,
        if report.selection.cardinality.pass { "satisfied" } else { "violated" }
    );
    for g in &report.masked.per_group {
        println!(
            "  group {}: train R^2 = {}, test R^2 = {} ({} / {} samples)",
            g.group,
            g.r2_train.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            g.r2_test.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            g.n_train,
            g.n_test
        );
    }
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}
