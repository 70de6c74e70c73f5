//! Node importance scores over flow matrices: activity, eigenvector
//! centrality, weighted PageRank, gravity residual and introversion.
//!
//! Eigenvector centrality follows the row (outgoing) convention
//! `x_i = (1/λ) Σ_j m_ij x_j`. PageRank ranks by incoming endorsement: a
//! node passes its rank along its outgoing edges in proportion to their
//! weights, dangling nodes spread their rank uniformly, and teleportation
//! is uniform.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::flow::{FlowMatrix, MatrixKind};
use crate::numeric::CompensatedSum;
use crate::spatial::Level;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    ActivityRaw,
    ActivityNormalized,
    Eigenvector,
    PageRank,
    GravityResidual,
    Introversion,
    /// A named behavioral indicator used as a model feature.
    Indicator(String),
}

impl Measure {
    pub fn as_str(&self) -> &str {
        match self {
            Measure::ActivityRaw => "activity_raw",
            Measure::ActivityNormalized => "activity_normalized",
            Measure::Eigenvector => "eigenvector",
            Measure::PageRank => "pagerank",
            Measure::GravityResidual => "gravity_residual",
            Measure::Introversion => "introversion",
            Measure::Indicator(name) => name,
        }
    }

    pub fn parse(s: &str) -> Measure {
        match s {
            "activity_raw" => Measure::ActivityRaw,
            "activity_normalized" => Measure::ActivityNormalized,
            "eigenvector" => Measure::Eigenvector,
            "pagerank" => Measure::PageRank,
            "gravity_residual" => Measure::GravityResidual,
            "introversion" => Measure::Introversion,
            other => Measure::Indicator(other.to_string()),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which flows an activity score aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Outgoing,
    Incoming,
    Within,
    Total,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Outgoing,
        Direction::Incoming,
        Direction::Within,
        Direction::Total,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Outgoing => "outgoing",
            Direction::Incoming => "incoming",
            Direction::Within => "within",
            Direction::Total => "total",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One score per unit, in the hierarchy's unit order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScoreVector {
    pub level: Level,
    pub measure: Measure,
    /// Only set for activity scores.
    pub direction: Option<Direction>,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl NodeScoreVector {
    pub fn new(level: Level, measure: Measure, ids: Vec<String>, scores: Vec<f64>) -> Self {
        NodeScoreVector {
            level,
            measure,
            direction: None,
            ids,
            scores,
        }
    }

    /// `measure` or `measure:direction`, unique within a score file.
    pub fn label(&self) -> String {
        match self.direction {
            Some(d) => alloc::format!("{}:{}", self.measure, d),
            None => self.measure.to_string(),
        }
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|u| u == id).map(|i| self.scores[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.ids.iter().map(String::as_str).zip(self.scores.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Stopping rule shared by the power iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Successive-iterate L1 distance at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

pub const DEFAULT_DAMPING: f64 = 0.85;

fn score_vector(m: &FlowMatrix, measure: Measure, scores: Vec<f64>) -> NodeScoreVector {
    NodeScoreVector::new(m.level(), measure, m.ids().to_vec(), scores)
}

fn row_col_diag(m: &FlowMatrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = m.n();
    let mut out = alloc::vec![CompensatedSum::new(); n];
    let mut inc = alloc::vec![CompensatedSum::new(); n];
    let mut diag = alloc::vec![0.0; n];
    for (i, j, v) in m.nonzeros() {
        if i == j {
            diag[i] = v;
        } else {
            out[i].add(v);
            inc[j].add(v);
        }
    }
    (
        out.iter().map(CompensatedSum::value).collect(),
        inc.iter().map(CompensatedSum::value).collect(),
        diag,
    )
}

/// Aggregate flows per unit; self-flows count only towards `Within` and
/// `Total`.
pub fn activity(m: &FlowMatrix, direction: Direction) -> NodeScoreVector {
    let (out, inc, diag) = row_col_diag(m);
    let scores = match direction {
        Direction::Outgoing => out,
        Direction::Incoming => inc,
        Direction::Within => diag,
        Direction::Total => (0..m.n()).map(|i| out[i] + inc[i] + diag[i]).collect(),
    };
    let measure = match m.kind() {
        MatrixKind::Raw => Measure::ActivityRaw,
        MatrixKind::Normalized => Measure::ActivityNormalized,
    };
    let mut v = score_vector(m, measure, scores);
    v.direction = Some(direction);
    v
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)));
    acc.value()
}

fn normalize_l1(x: &mut [f64]) {
    let total = crate::numeric::sum(x.iter().copied());
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Leading eigenvector of `m` in row form, L1-normalized.
///
/// Iterates the lazy operator `x ← (x + Mx/λ)/2` from the uniform vector,
/// with `λ = ‖Mx‖₁`. It has the same fixed point as plain power iteration but
/// also converges when `m` is periodic (e.g. bipartite), where plain power
/// iteration oscillates.
pub fn eigenvector_centrality(m: &FlowMatrix, conv: Convergence) -> Result<NodeScoreVector> {
    let n = m.n();
    if n == 0 {
        return Err(Error::DegenerateMatrix("empty matrix"));
    }
    let csr = m.csr();
    if csr.vals.is_empty() {
        return Err(Error::DegenerateMatrix("all-zero matrix has no leading eigenvector"));
    }
    if is_acyclic(&csr) {
        return Err(Error::DegenerateMatrix("acyclic flow graph has spectral radius zero"));
    }
    let mut x = alloc::vec![1.0 / n as f64; n];
    let mut y = alloc::vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..conv.max_iter {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = CompensatedSum::new();
            acc.extend(csr.row(i).map(|(j, v)| v * x[j]));
            *yi = acc.value();
        }
        let lambda = crate::numeric::sum(y.iter().copied());
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DegenerateMatrix("iterate vanished (nilpotent matrix)"));
        }
        let mut next: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| 0.5 * (xi + yi / lambda))
            .collect();
        normalize_l1(&mut next);
        residual = l1_distance(&next, &x);
        x = next;
        if residual < conv.tol {
            return Ok(score_vector(m, Measure::Eigenvector, x));
        }
    }
    Err(Error::NotConverged {
        iterations: conv.max_iter,
        residual,
    })
}

// Kahn's algorithm over the nonzero pattern. A nonnegative matrix is
// nilpotent exactly when its graph has no cycle.
fn is_acyclic(csr: &crate::flow::Csr) -> bool {
    let n = csr.n;
    let mut indegree = alloc::vec![0usize; n];
    for &j in &csr.cols {
        indegree[j] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut removed = 0;
    while let Some(i) = stack.pop() {
        removed += 1;
        for (j, _) in csr.row(i) {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                stack.push(j);
            }
        }
    }
    removed == n
}

/// Weighted directed PageRank by power iteration from the uniform vector:
/// `PR_i = (1−d)/N + d·Σ_j (m_ji / out_j)·PR_j + d·(dangling mass)/N`.
pub fn pagerank(m: &FlowMatrix, damping: f64, conv: Convergence) -> Result<NodeScoreVector> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::InvalidParameter {
            name: "damping",
            reason: alloc::format!("{damping} is not in (0, 1)"),
        });
    }
    let n = m.n();
    if n == 0 {
        return Ok(score_vector(m, Measure::PageRank, Vec::new()));
    }
    let csr = m.csr();
    let out: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = CompensatedSum::new();
            acc.extend(csr.row(i).map(|(_, v)| v));
            acc.value()
        })
        .collect();
    let nf = n as f64;
    let teleport = (1.0 - damping) / nf;
    let mut rank = alloc::vec![1.0 / nf; n];
    let mut residual = f64::INFINITY;
    for _ in 0..conv.max_iter {
        let mut dangling = CompensatedSum::new();
        let mut incoming = alloc::vec![CompensatedSum::new(); n];
        for i in 0..n {
            if out[i] > 0.0 {
                let share = rank[i] / out[i];
                for (j, w) in csr.row(i) {
                    incoming[j].add(w * share);
                }
            } else {
                dangling.add(rank[i]);
            }
        }
        let spread = damping * dangling.value() / nf;
        let mut next: Vec<f64> = incoming
            .iter()
            .map(|acc| teleport + spread + damping * acc.value())
            .collect();
        normalize_l1(&mut next);
        residual = l1_distance(&next, &rank);
        rank = next;
        if residual < conv.tol {
            return Ok(score_vector(m, Measure::PageRank, rank));
        }
    }
    Err(Error::NotConverged {
        iterations: conv.max_iter,
        residual,
    })
}

/// Total outgoing residual flow per node of a normalized matrix.
pub fn gravity_residual(m: &FlowMatrix) -> Result<NodeScoreVector> {
    m.require_kind(MatrixKind::Normalized)?;
    let n = m.n();
    let mut rows = alloc::vec![CompensatedSum::new(); n];
    for (i, _, v) in m.nonzeros() {
        rows[i].add(v);
    }
    Ok(score_vector(
        m,
        Measure::GravityResidual,
        rows.iter().map(CompensatedSum::value).collect(),
    ))
}

/// Share of a unit's originated volume that stays inside it,
/// `m_ii / Σ_j m_ij` (diagonal included in the denominator).
///
/// A unit with no outgoing volume scores 0; its id is returned in the
/// second element so callers can warn about it.
pub fn introversion(m: &FlowMatrix) -> Result<(NodeScoreVector, Vec<String>)> {
    m.require_kind(MatrixKind::Raw)?;
    let (out, _, diag) = row_col_diag(m);
    let mut empty = Vec::new();
    let scores = (0..m.n())
        .map(|i| {
            let total = out[i] + diag[i];
            if total > 0.0 {
                diag[i] / total
            } else {
                empty.push(m.ids()[i].clone());
                0.0
            }
        })
        .collect();
    Ok((score_vector(m, Measure::Introversion, scores), empty))
}
