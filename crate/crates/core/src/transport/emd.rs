//! Exact discrete optimal transport by the transportation simplex.
//!
//! The basis is a spanning tree over the `n + m` row and column nodes with
//! `n + m - 1` basic cells, degenerate (zero-flow) cells included. Each pivot
//! computes node potentials on the tree, brings in the first cell with a
//! negative reduced cost and pushes flow around the unique cycle it closes.
//! Entering and leaving choices follow Bland's rule, which rules out cycling
//! on the heavily degenerate uniform-marginal instances used here.

use std::collections::VecDeque;

use super::{check_marginal, Coupling, CostMatrix};
use crate::diff::Matrix;
use crate::error::{Error, Result};

/// Solves `min <π, C>` subject to `π 1 = a`, `πᵀ 1 = b`, `π ≥ 0` exactly.
pub fn emd_exact(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<Coupling> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::Parameter(format!(
            "marginal lengths ({}, {}) do not match cost shape {n}x{m}",
            a.len(),
            b.len()
        )));
    }
    check_marginal("source", a)?;
    check_marginal("target", b)?;
    let c = cost.values();

    let mut basis = north_west_corner(a, b);
    let tol = 1e-12 * (1.0 + c.max_abs());
    let max_pivots = 1000 + 50 * n * m * (n + m);
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];

    for _ in 0..max_pivots {
        build_adjacency(&basis, n, &mut adjacency);
        potentials(&basis, c, n, &adjacency, &mut u, &mut v);

        let entering = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .find(|&(i, j)| c[(i, j)] - u[i] - v[j] < -tol);
        let Some((ei, ej)) = entering else {
            return Ok(basis.into_coupling(n, m, a, b));
        };

        let path = tree_path(&adjacency, n + ej, ei, n + m);
        // Odd positions along the path from column `ej` lose flow.
        let mut leave: Option<(usize, f64)> = None;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = basis.flow[cell];
                let better = match leave {
                    None => true,
                    Some((best, bf)) => f < bf || (f == bf && basis.cells[cell] < basis.cells[best]),
                };
                if better {
                    leave = Some((cell, f));
                }
            }
        }
        let (leave_cell, theta) = leave.expect("pivot cycle has a decreasing edge");
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[cell] -= theta;
            } else {
                basis.flow[cell] += theta;
            }
        }
        basis.cells[leave_cell] = (ei, ej);
        basis.flow[leave_cell] = theta;
    }
    Err(Error::Numerical(format!(
        "transportation simplex did not terminate within {max_pivots} pivots"
    )))
}

struct Basis {
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    fn into_coupling(self, n: usize, m: usize, a: &[f64], b: &[f64]) -> Coupling {
        let mut plan = Matrix::zeros(n, m);
        for (&(i, j), &f) in self.cells.iter().zip(&self.flow) {
            plan[(i, j)] += f.max(0.0);
        }
        Coupling {
            plan,
            row_marginal: a.to_vec(),
            col_marginal: b.to_vec(),
        }
    }
}

/// Staircase initial basis: exactly `n + m - 1` cells forming a tree.
fn north_west_corner(a: &[f64], b: &[f64]) -> Basis {
    let (n, m) = (a.len(), b.len());
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(n + m - 1);
    let mut flow = Vec::with_capacity(n + m - 1);
    for _ in 0..n + m - 1 {
        let x = supply[i].min(demand[j]).max(0.0);
        cells.push((i, j));
        flow.push(x);
        supply[i] -= x;
        demand[j] -= x;
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || supply[i] <= demand[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    Basis { cells, flow }
}

fn build_adjacency(basis: &Basis, n: usize, adjacency: &mut [Vec<(usize, usize)>]) {
    for adj in adjacency.iter_mut() {
        adj.clear();
    }
    for (e, &(i, j)) in basis.cells.iter().enumerate() {
        adjacency[i].push((n + j, e));
        adjacency[n + j].push((i, e));
    }
}

/// Solves `u_i + v_j = c_ij` on the basic cells with `u_0 = 0`.
fn potentials(basis: &Basis, c: &Matrix, n: usize, adjacency: &[Vec<(usize, usize)>], u: &mut [f64], v: &mut [f64]) {
    let total = adjacency.len();
    let mut seen = vec![false; total];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = queue.pop_front() {
        for &(next, e) in &adjacency[node] {
            if seen[next] {
                continue;
            }
            let (i, j) = basis.cells[e];
            if node < n {
                v[j] = c[(i, j)] - u[i];
            } else {
                u[i] = c[(i, j)] - v[j];
            }
            seen[next] = true;
            queue.push_back(next);
        }
    }
}

/// Basic cells on the tree path from `from` to `to`, in walking order.
fn tree_path(adjacency: &[Vec<(usize, usize)>], from: usize, to: usize, total: usize) -> Vec<usize> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
    let mut seen = vec![false; total];
    let mut queue = VecDeque::from([to]);
    seen[to] = true;
    while let Some(node) = queue.pop_front() {
        if node == from {
            break;
        }
        for &(next, e) in &adjacency[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, e));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = from;
    while node != to {
        let (prev, e) = parent[node].expect("basis is a spanning tree");
        path.push(e);
        node = prev;
    }
    path
}
