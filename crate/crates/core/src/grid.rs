//! Cell-centered structured grids in one to three dimensions and the
//! homogeneous-Neumann (no-flux) finite-difference operators used by the
//! model.
//!
//! Every flux-form operator walks the interior faces of each axis once and
//! scatters the face flux into its two neighbouring cells. Wall faces carry
//! zero flux, which is the same as mirroring the adjacent interior value into
//! a ghost cell.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("dimension {dim} does not match {what} length {len}")]
    DimensionMismatch { dim: usize, what: &'static str, len: usize },
    #[error("axis {axis}: length must be positive and finite, got {value}")]
    BadLength { axis: usize, value: f64 },
    #[error("axis {axis}: need at least 2 cells, got {value}")]
    TooFewCells { axis: usize, value: usize },
    #[error("field has {got} values but grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("malformed field dump: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GridError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// A box domain `[0, L_1] x ... x [0, L_d]` split into `n_i` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    lengths: Vec<f64>,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

/// Builds a grid, rejecting non-positive lengths, fewer than two cells on an
/// axis, and dimension mismatches.
pub fn make_grid(dim: usize, lengths: &[f64], cells: &[usize]) -> Result<GridSpec, GridError> {
    if !(1..=3).contains(&dim) {
        return Err(GridError::BadDimension(dim));
    }
    if lengths.len() != dim {
        return Err(GridError::DimensionMismatch { dim, what: "lengths", len: lengths.len() });
    }
    if cells.len() != dim {
        return Err(GridError::DimensionMismatch { dim, what: "cells", len: cells.len() });
    }
    for (axis, &l) in lengths.iter().enumerate() {
        if !(l.is_finite() && l > 0.0) {
            return Err(GridError::BadLength { axis, value: l });
        }
    }
    for (axis, &n) in cells.iter().enumerate() {
        if n < 2 {
            return Err(GridError::TooFewCells { axis, value: n });
        }
    }
    let spacing = lengths.iter().zip(cells).map(|(l, &n)| l / n as f64).collect();
    // Row-major: the last axis is contiguous.
    let mut strides = vec![1; dim];
    for d in (0..dim.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * cells[d + 1];
    }
    Ok(GridSpec { dim, lengths: lengths.to_vec(), cells: cells.to_vec(), spacing, strides })
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multi-index of a flattened cell index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for (o, &s) in out.iter_mut().zip(&self.strides[..self.dim]) {
            *o = idx / s;
            idx %= s;
        }
        out
    }

    /// Physical coordinates of a cell center; unused axes are zero.
    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let ijk = self.unflatten(idx);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = (ijk[d] as f64 + 0.5) * self.spacing[d];
        }
        x
    }

    /// Calls `visit(left, right)` for every interior face normal to `axis`.
    #[inline]
    fn for_each_face(&self, axis: usize, mut visit: impl FnMut(usize, usize)) {
        let n = self.cells[axis];
        let stride = self.strides[axis];
        let outer: usize = self.cells[..axis].iter().product();
        for o in 0..outer {
            let base = o * n * stride;
            for i in 0..n - 1 {
                let row = base + i * stride;
                for left in row..row + stride {
                    visit(left, left + stride);
                }
            }
        }
    }

    /// Calls `visit(cell, lower, upper)` with the mirrored neighbours of each
    /// cell along `axis` (a wall neighbour is the cell itself).
    #[inline]
    fn for_each_neighbour_pair(&self, axis: usize, mut visit: impl FnMut(usize, usize, usize)) {
        let n = self.cells[axis];
        let stride = self.strides[axis];
        let outer: usize = self.cells[..axis].iter().product();
        for o in 0..outer {
            let base = o * n * stride;
            for i in 0..n {
                let row = base + i * stride;
                for c in row..row + stride {
                    let lo = if i == 0 { c } else { c - stride };
                    let hi = if i + 1 == n { c } else { c + stride };
                    visit(c, lo, hi);
                }
            }
        }
    }
}

/// One real value per cell, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<GridSpec>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<GridSpec>, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.n_cells();
        if values.len() != expected {
            return Err(GridError::LengthMismatch { expected, got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<GridSpec>, c: f64) -> Self {
        let n = grid.n_cells();
        Self { grid, values: vec![c; n] }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Arc<GridSpec>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|i| f(grid.cell_center(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_grid(other));
        let values = self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect();
        Self { grid: self.grid.clone(), values }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self { grid: self.grid.clone(), values }
    }

    /// Writes the text dump: a header `dim n1 [n2 [n3]] h1 [h2 [h3]]` followed by
    /// one value per line with 17 significant digits.
    pub fn to_dump(&self) -> String {
        let g = &self.grid;
        let mut s = String::with_capacity(self.values.len() * 26 + 64);
        write!(s, "{}", g.dim).unwrap();
        for n in &g.cells {
            write!(s, " {n}").unwrap();
        }
        for h in &g.spacing {
            write!(s, " {h:.16e}").unwrap();
        }
        s.push('\n');
        for v in &self.values {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    /// Parses a field dump. The domain lengths are recovered as `n_i * h_i`.
    pub fn read_dump(reader: impl Read) -> Result<Self, GridError> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| GridError::Parse("empty input".into()))??;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let dim: usize = tokens
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GridError::Parse(format!("bad header `{header}`")))?;
        if tokens.len() != 1 + 2 * dim {
            return Err(GridError::Parse(format!("header `{header}` does not match dim {dim}")));
        }
        let cells = tokens[1..=dim]
            .iter()
            .map(|t| t.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| GridError::Parse(e.to_string()))?;
        let spacing = tokens[1 + dim..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| GridError::Parse(e.to_string()))?;
        let lengths: Vec<f64> = cells.iter().zip(&spacing).map(|(&n, h)| n as f64 * h).collect();
        let grid = Arc::new(make_grid(dim, &lengths, &cells)?);
        let mut values = Vec::with_capacity(grid.n_cells());
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(line.parse::<f64>().map_err(|e| GridError::Parse(format!("`{line}`: {e}")))?);
        }
        ScalarField::new(grid, values)
    }
}

/// Second-order Neumann Laplacian, `(f_{i+1} - 2 f_i + f_{i-1}) / h^2` per axis.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid.clone();
    let mut out = f.zeros_like();
    let fv = &f.values;
    for axis in 0..g.dim {
        let inv_h2 = 1.0 / (g.spacing[axis] * g.spacing[axis]);
        g.for_each_face(axis, |l, r| {
            let flux = (fv[r] - fv[l]) * inv_h2;
            out[l] += flux;
            out[r] -= flux;
        });
    }
    f.with_values(out)
}

/// `e^{-v} div(e^v grad a)` in flux form with arithmetic-mean face weights.
pub fn weighted_laplacian(a: &ScalarField, v: &ScalarField) -> ScalarField {
    let ev: Vec<f64> = v.values.iter().map(|x| x.exp()).collect();
    weighted_laplacian_exp(a, &ev)
}

/// Same as [`weighted_laplacian`] with `e^v` precomputed.
pub(crate) fn weighted_laplacian_exp(a: &ScalarField, ev: &[f64]) -> ScalarField {
    let g = a.grid.clone();
    let mut out = a.zeros_like();
    let av = &a.values;
    for axis in 0..g.dim {
        let inv_h2 = 1.0 / (g.spacing[axis] * g.spacing[axis]);
        g.for_each_face(axis, |l, r| {
            let weight = 0.5 * (ev[l] + ev[r]);
            let flux = weight * (av[r] - av[l]) * inv_h2;
            out[l] += flux;
            out[r] -= flux;
        });
    }
    for (o, e) in out.iter_mut().zip(ev) {
        *o /= e;
    }
    a.with_values(out)
}

/// `grad v . grad a` from central differences with mirrored ghosts.
pub fn grad_dot(v: &ScalarField, a: &ScalarField) -> ScalarField {
    let g = v.grid.clone();
    let mut out = v.zeros_like();
    let (vv, av) = (&v.values, &a.values);
    for axis in 0..g.dim {
        let inv = 1.0 / (4.0 * g.spacing[axis] * g.spacing[axis]);
        g.for_each_neighbour_pair(axis, |c, lo, hi| {
            out[c] += (vv[hi] - vv[lo]) * (av[hi] - av[lo]) * inv;
        });
    }
    v.with_values(out)
}

/// `div(u grad v)` with arithmetic-mean face values of `u` and zero wall flux.
/// Returned without the minus sign that appears in the model.
pub fn div_flux(u: &ScalarField, v: &ScalarField) -> ScalarField {
    let g = u.grid.clone();
    let mut out = u.zeros_like();
    let (uv, vv) = (&u.values, &v.values);
    for axis in 0..g.dim {
        let inv_h2 = 1.0 / (g.spacing[axis] * g.spacing[axis]);
        g.for_each_face(axis, |l, r| {
            let flux = 0.5 * (uv[l] + uv[r]) * (vv[r] - vv[l]) * inv_h2;
            out[l] += flux;
            out[r] -= flux;
        });
    }
    u.with_values(out)
}

/// Cell-averaged face gradient per axis: the mean of the two adjacent face
/// differences, with wall faces counted as zero. Returns one vector of
/// components per axis.
pub(crate) fn cell_gradient(f: &ScalarField) -> Vec<Vec<f64>> {
    let g = f.grid.clone();
    let fv = &f.values;
    (0..g.dim)
        .map(|axis| {
            let mut comp = vec![0.0; fv.len()];
            let half_inv_h = 0.5 / g.spacing[axis];
            g.for_each_face(axis, |l, r| {
                let d = (fv[r] - fv[l]) * half_inv_h;
                comp[l] += d;
                comp[r] += d;
            });
            comp
        })
        .collect()
}

/// Sum of values times cell volume.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dim: usize, l: &[f64], n: &[usize]) -> Arc<GridSpec> {
        Arc::new(make_grid(dim, l, n).unwrap())
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(1, &[1.0], &[4]).unwrap();
        assert_eq!(g.spacing(), &[0.25]);
        assert_eq!(g.n_cells(), 4);

        let g = make_grid(2, &[1.0, 2.0], &[10, 20]).unwrap();
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15 && (g.spacing()[1] - 0.1).abs() < 1e-15);
        assert_eq!(g.n_cells(), 200);

        let g = make_grid(3, &[1.0; 3], &[32; 3]).unwrap();
        assert_eq!(g.n_cells(), 32768);
        assert_eq!(g.cell_volume(), (1.0f64 / 32.0).powi(3));
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert_eq!(make_grid(0, &[], &[]), Err(GridError::BadDimension(0)));
        assert!(matches!(make_grid(2, &[1.0], &[4, 4]), Err(GridError::DimensionMismatch { .. })));
        assert!(matches!(make_grid(1, &[0.0], &[4]), Err(GridError::BadLength { .. })));
        assert!(matches!(make_grid(1, &[-1.0], &[4]), Err(GridError::BadLength { .. })));
        assert!(matches!(make_grid(1, &[1.0], &[1]), Err(GridError::TooFewCells { .. })));
    }

    #[test]
    fn row_major_layout() {
        let g = make_grid(3, &[1.0, 1.0, 1.0], &[2, 3, 4]).unwrap();
        assert_eq!(g.unflatten(0), [0, 0, 0]);
        assert_eq!(g.unflatten(1), [0, 0, 1]);
        assert_eq!(g.unflatten(4), [0, 1, 0]);
        assert_eq!(g.unflatten(12), [1, 0, 0]);
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = ScalarField::constant(grid(2, &[1.0, 1.0], &[5, 7]), 3.5);
        assert!(laplacian(&f).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_exact_on_quadratic_interior() {
        let g = grid(1, &[1.0], &[10]);
        let f = ScalarField::from_fn(g, |x| x[0] * x[0]);
        let l = laplacian(&f);
        for &x in &l.values()[1..9] {
            assert!((x - 2.0).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn laplacian_mirror_boundary() {
        let g = grid(1, &[4.0], &[4]);
        let f = ScalarField::new(g, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(laplacian(&f).values(), &[0.0, 1.0, -2.0, 1.0]);
    }

    #[test]
    fn weighted_laplacian_reduces_to_laplacian() {
        let g = grid(2, &[1.0, 2.0], &[6, 5]);
        let a = ScalarField::from_fn(g.clone(), |x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let v = ScalarField::constant(g.clone(), 0.0);
        let w = weighted_laplacian(&a, &v);
        let l = laplacian(&a);
        for (x, y) in w.values().iter().zip(l.values()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        let c = ScalarField::constant(g.clone(), 2.0);
        let v = ScalarField::from_fn(g, |x| x[0] + 0.3 * x[1]);
        assert!(weighted_laplacian(&c, &v).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weighted_laplacian_second_order() {
        // a = cos(pi x), v = x: e^{-v}(e^v a')' = a'' + a' = -pi^2 cos(pi x) - pi sin(pi x)
        let exact = |x: f64| {
            let p = std::f64::consts::PI;
            -p * p * (p * x).cos() - p * (p * x).sin()
        };
        let errs: Vec<f64> = [16usize, 32, 64, 128]
            .iter()
            .map(|&n| {
                let g = grid(1, &[1.0], &[n]);
                let a = ScalarField::from_fn(g.clone(), |x| (std::f64::consts::PI * x[0]).cos());
                let v = ScalarField::from_fn(g.clone(), |x| x[0]);
                let w = weighted_laplacian(&a, &v);
                (0..n).map(|i| (w.values()[i] - exact(g.cell_center(i)[0])).abs()).fold(0.0, f64::max)
            })
            .collect();
        for pair in errs.windows(2) {
            assert!(pair[0] / pair[1] >= 3.5, "{errs:?}");
        }
    }

    #[test]
    fn grad_dot_examples() {
        let g = grid(1, &[1.0], &[8]);
        let c = ScalarField::constant(g.clone(), 1.0);
        let x = ScalarField::from_fn(g.clone(), |x| x[0]);
        assert!(grad_dot(&c, &x).values().iter().all(|&v| v == 0.0));
        let d = grad_dot(&x, &x);
        for &v in &d.values()[1..7] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn div_flux_examples() {
        let g = grid(2, &[1.0, 1.0], &[6, 6]);
        let u = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] * x[1]);
        let c = ScalarField::constant(g.clone(), 0.7);
        assert!(div_flux(&u, &c).values().iter().all(|&v| v == 0.0));
        let v = ScalarField::from_fn(g.clone(), |x| (2.0 * x[0]).sin() * x[1]);
        let lhs = div_flux(&c, &v);
        let rhs = laplacian(&v);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - 0.7 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(integrate(&div_flux(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let f = ScalarField::constant(grid(2, &[1.0, 1.0], &[4, 4]), 1.0);
        assert!((integrate(&f) - 1.0).abs() < 1e-15);
        let f = ScalarField::constant(grid(2, &[1.0, 0.5], &[4, 3]), 2.0);
        assert!((integrate(&f) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dump_round_trip() {
        let g = grid(2, &[1.0, 3.0], &[3, 4]);
        let f = ScalarField::from_fn(g, |x| (x[0] * 7.1).exp() - x[1] / 3.0);
        let text = f.to_dump();
        assert!(text.starts_with("2 3 4 "));
        let back = ScalarField::read_dump(text.as_bytes()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid().cells(), f.grid().cells());
        assert!(ScalarField::read_dump("1 4 0.25\n1\n2\n".as_bytes()).is_err());
    }
}
