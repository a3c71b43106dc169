//! Per-window correlation graphs.

use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::WindowedSample;
use crate::error::{Error, Result};

/// Thresholded correlation graph of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSnapshot {
    /// `N × N`, symmetric, zero diagonal; nonzero entries have `|ρ| ≥ δ`.
    pub adjacency: Tensor,
    pub segment: Tensor,
    pub node_count: usize,
}

/// Pearson correlation, clamped to `[-1, 1]`.
///
/// A series with zero centered norm correlates with nothing (returns 0).
/// The computation is symmetric in its arguments down to the last bit.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("pearson", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::Contract(format!(
            "pearson needs at least 2 points, got {}",
            x.len()
        )));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

// The mean of a constant series can round away from its value, which would
// leave a tiny nonzero centered norm, so constants are caught exactly here.
fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Builds `A_t`: `A_ij = ρ_ij` when `|ρ_ij| ≥ δ` (sign kept), otherwise 0; `A_ii = 0`.
pub fn build_snapshot(window: &WindowedSample, delta: f64) -> Result<GraphSnapshot> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!("threshold must lie in [0, 1), got {delta}")));
    }
    let n = window.num_vars();
    let columns: Vec<Vec<f64>> = (0..n).map(|j| window.variable(j)).collect();
    let mut adjacency = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let rho = pearson(&columns[i], &columns[j])?;
            let weight = if rho.abs() >= delta { rho } else { 0.0 };
            adjacency.set(i, j, weight);
            adjacency.set(j, i, weight);
        }
    }
    Ok(GraphSnapshot {
        adjacency,
        segment: window.segment.clone(),
        node_count: n,
    })
}

/// `N(i) = { j ≠ i : A_ij ≠ 0 }`.
pub fn neighbor_sets(snapshot: &GraphSnapshot) -> Vec<Vec<usize>> {
    neighbors_of(&snapshot.adjacency)
}

pub(crate) fn neighbors_of(adjacency: &Tensor) -> Vec<Vec<usize>> {
    let n = adjacency.rows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && adjacency.at(i, j) != 0.0)
                .collect()
        })
        .collect()
}

pub fn edge_count(snapshot: &GraphSnapshot) -> usize {
    neighbor_sets(snapshot).iter().map(Vec::len).sum::<usize>() / 2
}

/// Adjacency as a headerless CSV matrix.
pub fn write_adjacency_csv(snapshot: &GraphSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..snapshot.node_count {
        let row: Vec<String> = snapshot.adjacency.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Undirected edge list `i,j,weight` with `i < j`, 0-based node ids.
pub fn write_edge_list(snapshot: &GraphSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "i,j,weight").map_err(io)?;
    for i in 0..snapshot.node_count {
        for j in i + 1..snapshot.node_count {
            let a = snapshot.adjacency.at(i, j);
            if a != 0.0 {
                writeln!(w, "{i},{j},{a}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
