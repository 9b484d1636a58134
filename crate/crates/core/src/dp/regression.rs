//! Local affine regression on an adaptive partition: equal-count bins on
//! every coordinate, one affine fit per cell of the product partition.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    dim: usize,
    /// Interior bin edges per coordinate.
    edges: Vec<Vec<f64>>,
    /// Per cell: centre and `targets x (dim + 1)` coefficients.
    cells: Vec<Cell>,
    targets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Cell {
    centre: Vec<f64>,
    coef: Vec<f64>,
}

impl Regressor {
    /// Fits every column of `y` (`n x targets`, row-major) on the rows of
    /// `x` (`n x dim`). Cells with fewer than `dim + 1` samples, or whose
    /// samples do not span the space, fall back to the pooled fit.
    pub fn fit(x: &[f64], dim: usize, y: &[f64], targets: usize, bins_per_dim: usize) -> Self {
        let n = if dim == 0 { y.len() / targets.max(1) } else { x.len() / dim };
        let bins = bins_per_dim.max(1);
        let mut edges = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut col: Vec<f64> = (0..n).map(|i| x[i * dim + d]).collect();
            col.sort_by(f64::total_cmp);
            let mut e = Vec::new();
            if col.first() != col.last() {
                for b in 1..bins {
                    let v = col[(b * n / bins).min(n - 1)];
                    if e.last().map_or(true, |&l| v > l) && v > col[0] {
                        e.push(v);
                    }
                }
            }
            edges.push(e);
        }
        let mut r = Self {
            dim,
            edges,
            cells: Vec::new(),
            targets,
        };
        let n_cells: usize = r.edges.iter().map(|e| e.len() + 1).product();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
        for i in 0..n {
            members[r.cell_of(&x[i * dim..(i + 1) * dim])].push(i);
        }
        let all: Vec<usize> = (0..n).collect();
        let pooled = fit_cell(x, dim, y, targets, &all);
        let mut merged = 0;
        r.cells = members
            .iter()
            .map(|m| match fit_cell(x, dim, y, targets, m) {
                Some(c) if m.len() > dim => c,
                _ => {
                    merged += 1;
                    pooled.clone().unwrap_or_else(|| constant_cell(dim, y, targets, &all))
                }
            })
            .collect();
        if merged > 0 {
            log::debug!("{merged} of {n_cells} regression cells fell back to the pooled fit");
        }
        r
    }

    fn cell_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for (d, e) in self.edges.iter().enumerate() {
            let b = e.partition_point(|&v| v <= x[d]);
            idx = idx * (e.len() + 1) + b;
        }
        idx
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Predictions for every target at `x`, written into `out`.
    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let c = &self.cells[self.cell_of(x)];
        let w = self.dim + 1;
        for (t, o) in out.iter_mut().enumerate().take(self.targets) {
            let coef = &c.coef[t * w..(t + 1) * w];
            let mut v = coef[0];
            for d in 0..self.dim {
                v += coef[d + 1] * (x[d] - c.centre[d]);
            }
            *o = v;
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.targets];
        self.predict_into(x, &mut out);
        out
    }
}

fn constant_cell(dim: usize, y: &[f64], targets: usize, m: &[usize]) -> Cell {
    let w = dim + 1;
    let mut coef = vec![0.0; targets * w];
    let k = m.len().max(1) as f64;
    for &i in m {
        for t in 0..targets {
            coef[t * w] += y[i * targets + t] / k;
        }
    }
    Cell {
        centre: vec![0.0; dim],
        coef,
    }
}

/// Centred least squares; `None` when the cell is empty. Directions with no
/// spread are dropped so a degenerate cell still gets a constant fit.
fn fit_cell(x: &[f64], dim: usize, y: &[f64], targets: usize, m: &[usize]) -> Option<Cell> {
    if m.is_empty() {
        return None;
    }
    let k = m.len() as f64;
    let mut centre = vec![0.0; dim];
    for &i in m {
        for d in 0..dim {
            centre[d] += x[i * dim + d] / k;
        }
    }
    let w = dim + 1;
    let mut ata = vec![0.0; w * w];
    let mut aty = vec![0.0; w * targets];
    let mut row = vec![0.0; w];
    for &i in m {
        row[0] = 1.0;
        for d in 0..dim {
            row[d + 1] = x[i * dim + d] - centre[d];
        }
        for a in 0..w {
            for b in 0..w {
                ata[a * w + b] += row[a] * row[b];
            }
            for t in 0..targets {
                aty[a * targets + t] += row[a] * y[i * targets + t];
            }
        }
    }
    let active: Vec<usize> = (0..w).filter(|&a| a == 0 || ata[a * w + a] > 1e-12 * k).collect();
    let coef_active = solve_spd(&ata, w, &aty, targets, &active)?;
    let mut coef = vec![0.0; targets * w];
    for t in 0..targets {
        for (ai, &a) in active.iter().enumerate() {
            coef[t * w + a] = coef_active[ai * targets + t];
        }
    }
    Some(Cell { centre, coef })
}

/// Gaussian elimination with partial pivoting on the `active` sub-block.
fn solve_spd(a: &[f64], w: usize, b: &[f64], targets: usize, active: &[usize]) -> Option<Vec<f64>> {
    let n = active.len();
    let mut m: Vec<f64> = Vec::with_capacity(n * n);
    for &r in active {
        for &c in active {
            m.push(a[r * w + c]);
        }
    }
    let mut rhs: Vec<f64> = Vec::with_capacity(n * targets);
    for &r in active {
        rhs.extend_from_slice(&b[r * targets..(r + 1) * targets]);
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            for t in 0..targets {
                rhs.swap(col * targets + t, piv * targets + t);
            }
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r * n + c] -= f * m[col * n + c];
            }
            for t in 0..targets {
                rhs[r * targets + t] -= f * rhs[col * targets + t];
            }
        }
    }
    let mut x = vec![0.0; n * targets];
    for r in (0..n).rev() {
        for t in 0..targets {
            let mut v = rhs[r * targets + t];
            for c in r + 1..n {
                v -= m[r * n + c] * x[c * targets + t];
            }
            x[r * targets + t] = v / m[r * n + r];
        }
    }
    Some(x)
}
