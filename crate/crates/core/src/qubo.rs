//! QUBO assembly for group-wise L0 feature selection.
//!
//! The objective is the training residual of the frozen expanded-feature
//! model plus a cardinality penalty per group:
//!
//! ```text
//! F(q) = sum_i ( (y_i - w0) - sum_s alpha_s X_is q_{s,g(i)} )^2
//!      + A * sum_g ( sum_s q_sg - M_f )^2
//! ```
//!
//! Expanding both squares (and using q^2 = q) yields linear, pairwise, and
//! constant coefficients. Because every sample belongs to exactly one
//! group, no pairwise term couples variables of different groups: the
//! problem is block-diagonal with one block per group.
//!
//! Variable layout: `index(s, g) = g * S + s` over `n_vars = G * S`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;

use crate::encoding::GroupMembership;
use crate::error::{Error, Result};
use crate::expansion::AlphaVector;

/// Sparse upper-triangular QUBO with an additive constant.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    pub n_vars: usize,
    pub linear: Vec<f64>,
    /// Sorted by key; `i < j`; coefficients are nonzero.
    pub quadratic: Vec<((u32, u32), f64)>,
    pub constant: f64,
}

impl QuboProblem {
    /// Exact objective value of an assignment (compensated summation).
    pub fn energy(&self, q: &[u8]) -> f64 {
        assert_eq!(q.len(), self.n_vars, "assignment length mismatch");
        let mut sum = self.constant;
        let mut comp = 0.0f64;
        let add = |sum: &mut f64, comp: &mut f64, term: f64| {
            let t = *sum + term;
            if sum.abs() >= term.abs() {
                *comp += (*sum - t) + term;
            } else {
                *comp += (term - t) + *sum;
            }
            *sum = t;
        };
        for (i, &c) in self.linear.iter().enumerate() {
            if q[i] == 1 && c != 0.0 {
                add(&mut sum, &mut comp, c);
            }
        }
        for &((i, j), c) in &self.quadratic {
            if q[i as usize] == 1 && q[j as usize] == 1 {
                add(&mut sum, &mut comp, c);
            }
        }
        sum + comp
    }

    /// Quadratic coefficient at `(i, j)` (any order), 0 when absent.
    pub fn quadratic_at(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j) as u32, i.max(j) as u32);
        match self.quadratic.binary_search_by_key(&key, |&(k, _)| k) {
            Ok(pos) => self.quadratic[pos].1,
            Err(_) => 0.0,
        }
    }

    /// Write the text exchange format: `# vars`, `# constant`, then
    /// `i i coeff` lines for linear terms and `i j coeff` for quadratic
    /// terms, 0-based.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# vars {}", self.n_vars)?;
        writeln!(w, "# constant {}", self.constant)?;
        for (i, &c) in self.linear.iter().enumerate() {
            if c != 0.0 {
                writeln!(w, "{i} {i} {c}")?;
            }
        }
        for &((i, j), c) in &self.quadratic {
            writeln!(w, "{i} {j} {c}")?;
        }
        Ok(())
    }

    /// Parse the text exchange format. Duplicate entries accumulate.
    pub fn read_text<R: BufRead>(r: R) -> Result<QuboProblem> {
        let mut n_vars: Option<usize> = None;
        let mut constant = 0.0;
        let mut linear: HashMap<usize, f64> = HashMap::new();
        let mut quadratic: HashMap<(u32, u32), f64> = HashMap::new();
        let mut max_index = 0usize;

        let bad = |line_no: usize, line: &str| Error::Format {
            path: "<qubo>".into(),
            msg: format!("line {}: cannot parse {line:?}", line_no + 1),
        };

        for (line_no, line) in r.lines().enumerate() {
            let line = line.map_err(|source| Error::Io {
                path: "<qubo>".into(),
                source,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("vars"), Some(v)) => {
                        n_vars = Some(v.parse().map_err(|_| bad(line_no, trimmed))?);
                    }
                    (Some("constant"), Some(v)) => {
                        constant = v.parse().map_err(|_| bad(line_no, trimmed))?;
                    }
                    _ => {} // unknown comments are ignored
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad(line_no, trimmed));
            }
            let i: usize = fields[0].parse().map_err(|_| bad(line_no, trimmed))?;
            let j: usize = fields[1].parse().map_err(|_| bad(line_no, trimmed))?;
            let c: f64 = fields[2].parse().map_err(|_| bad(line_no, trimmed))?;
            max_index = max_index.max(i).max(j);
            if i == j {
                *linear.entry(i).or_insert(0.0) += c;
            } else {
                let key = (i.min(j) as u32, i.max(j) as u32);
                *quadratic.entry(key).or_insert(0.0) += c;
            }
        }

        let n = n_vars.unwrap_or(max_index + 1);
        if max_index >= n {
            return Err(Error::Format {
                path: "<qubo>".into(),
                msg: format!("index {max_index} exceeds declared vars {n}"),
            });
        }
        let mut lin = vec![0.0; n];
        for (i, c) in linear {
            lin[i] = c;
        }
        Ok(QuboProblem {
            n_vars: n,
            linear: lin,
            quadratic: sorted_entries(quadratic),
            constant,
        })
    }

    pub fn read_file(path: &Path) -> Result<QuboProblem> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        QuboProblem::read_text(std::io::BufReader::new(file))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_text(std::io::BufWriter::new(file))
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

fn sorted_entries(map: HashMap<(u32, u32), f64>) -> Vec<((u32, u32), f64)> {
    let mut entries: Vec<((u32, u32), f64)> = map.into_iter().filter(|&(_, c)| c != 0.0).collect();
    entries.sort_unstable_by_key(|&(k, _)| k);
    entries
}

/// Everything needed to assemble the selection objective.
#[derive(Debug)]
pub struct QuboBuildInputs<'a> {
    /// Standardized training targets, one per row of `x_expanded`.
    pub y: &'a [f64],
    pub w0: f64,
    pub alpha: &'a AlphaVector,
    /// Training rows by expanded features (binary).
    pub x_expanded: &'a Array2<u8>,
    pub membership: &'a GroupMembership,
    /// Required number of selected features per group.
    pub m_f: usize,
    /// Penalty strength A.
    pub penalty_a: f64,
}

/// Assemble the group-wise selection QUBO.
pub fn build_qubo(inputs: &QuboBuildInputs) -> Result<QuboProblem> {
    let n = inputs.y.len();
    let s_total = inputs.alpha.len();
    let g_total = inputs.membership.group_count;

    if inputs.x_expanded.nrows() != n
        || inputs.membership.p.nrows() != n
        || inputs.x_expanded.ncols() != s_total
    {
        return Err(Error::Dimension {
            msg: format!(
                "inconsistent inputs: {} targets, {}x{} design, {}x{} membership, {} alphas",
                n,
                inputs.x_expanded.nrows(),
                inputs.x_expanded.ncols(),
                inputs.membership.p.nrows(),
                inputs.membership.p.ncols(),
                s_total
            ),
        });
    }
    if inputs.m_f > s_total {
        return Err(Error::Config {
            msg: format!("m_f = {} exceeds expanded feature count {s_total}", inputs.m_f),
        });
    }
    if inputs.penalty_a <= 0.0 {
        return Err(Error::Config {
            msg: format!("penalty strength must be positive, got {}", inputs.penalty_a),
        });
    }

    let n_vars = g_total * s_total;
    let mut linear = vec![0.0f64; n_vars];
    let mut quadratic: HashMap<(u32, u32), f64> = HashMap::new();
    let mut constant = 0.0f64;

    // data term, block by block: each sample contributes only to the
    // variables of its own group
    for i in 0..n {
        let c_i = inputs.y[i] - inputs.w0;
        constant += c_i * c_i;

        let ones: Vec<usize> = (0..g_total).filter(|&g| inputs.membership.p[[i, g]] == 1).collect();
        if ones.len() != 1 {
            return Err(Error::Dimension {
                msg: format!("sample {i} belongs to {} groups, expected exactly 1", ones.len()),
            });
        }
        let g = ones[0];
        let base = g * s_total;

        let active: Vec<usize> = (0..s_total)
            .filter(|&s| inputs.x_expanded[[i, s]] == 1 && inputs.alpha.alpha[s] != 0.0)
            .collect();
        for (a, &s1) in active.iter().enumerate() {
            let a1 = inputs.alpha.alpha[s1];
            linear[base + s1] += a1 * (a1 - 2.0 * c_i);
            for &s2 in &active[a + 1..] {
                let key = ((base + s1) as u32, (base + s2) as u32);
                *quadratic.entry(key).or_insert(0.0) += 2.0 * a1 * inputs.alpha.alpha[s2];
            }
        }
    }

    // cardinality penalty: A * (sum_s q_sg - m_f)^2 per group
    let a = inputs.penalty_a;
    let m = inputs.m_f as f64;
    for g in 0..g_total {
        let base = g * s_total;
        constant += a * m * m;
        for s in 0..s_total {
            linear[base + s] += a * (1.0 - 2.0 * m);
        }
        for s1 in 0..s_total {
            for s2 in (s1 + 1)..s_total {
                let key = ((base + s1) as u32, (base + s2) as u32);
                *quadratic.entry(key).or_insert(0.0) += 2.0 * a;
            }
        }
    }

    Ok(QuboProblem {
        n_vars,
        linear,
        quadratic: sorted_entries(quadratic),
        constant,
    })
}

/// Split a block-diagonal problem built with layout `index(s, g) = g*S + s`
/// into its `g_total` independent per-group problems.
///
/// The joint constant is divided evenly so that block constants sum to it;
/// any quadratic entry connecting two blocks is an error.
pub fn split_blocks(problem: &QuboProblem, g_total: usize, s_total: usize) -> Result<Vec<QuboProblem>> {
    if problem.n_vars != g_total * s_total {
        return Err(Error::Dimension {
            msg: format!(
                "problem has {} variables, expected {} groups x {} features",
                problem.n_vars, g_total, s_total
            ),
        });
    }

    let mut blocks: Vec<QuboProblem> = (0..g_total)
        .map(|_| QuboProblem {
            n_vars: s_total,
            linear: vec![0.0; s_total],
            quadratic: Vec::new(),
            constant: problem.constant / g_total as f64,
        })
        .collect();

    for (i, &c) in problem.linear.iter().enumerate() {
        blocks[i / s_total].linear[i % s_total] = c;
    }
    for &((i, j), c) in &problem.quadratic {
        let (gi, gj) = (i as usize / s_total, j as usize / s_total);
        if gi != gj {
            return Err(Error::CrossBlockCoupling {
                i: i as usize,
                j: j as usize,
            });
        }
        blocks[gi]
            .quadratic
            .push(((i - (gi * s_total) as u32, j - (gi * s_total) as u32), c));
    }
    Ok(blocks)
}
