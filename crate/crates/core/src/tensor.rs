//! Dense tensor time series and the reorder algebra.
//!
//! Storage is mode-1-fastest everywhere: for a tensor of shape `(D1, .., DN, T)`
//! the element at zero-based index `(d1, .., dN, t)` lives at
//! `d1 + D1 * (d2 + D2 * (.. + DN * t))`. Consequently each time step `X_t` is a
//! contiguous block of `D = D1 * .. * DN` values equal to `vec(X_t)`.
//!
//! Mode and time indices in the public operations are 1-based.

use crate::error::{Error, Result};

/// One group of a reorder partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModeGroup {
    /// Explicit 1-based modes, in the order they are combined (first varies fastest).
    Modes(Vec<usize>),
    /// All modes not named by another group, ascending.
    Rest,
}

impl ModeGroup {
    pub fn single(mode: usize) -> Self {
        ModeGroup::Modes(vec![mode])
    }

    /// Parses the `{-1}` notation: a group consisting solely of `-1` is [`ModeGroup::Rest`].
    pub fn from_signed(modes: &[i64]) -> Result<Self> {
        if modes == [-1] {
            return Ok(ModeGroup::Rest);
        }
        modes
            .iter()
            .map(|&m| {
                usize::try_from(m)
                    .ok()
                    .filter(|&m| m >= 1)
                    .ok_or_else(|| Error::InvalidPartition(format!("mode {m} is not a valid index")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ModeGroup::Modes)
    }
}

/// Resolves a partition against a tensor order, expanding `Rest`.
/// Returns zero-based mode lists.
fn resolve_partition(order: usize, partition: &[ModeGroup]) -> Result<Vec<Vec<usize>>> {
    let mut used = vec![false; order];
    let mut rest_seen = false;
    for group in partition {
        match group {
            ModeGroup::Rest => {
                if rest_seen {
                    return Err(Error::InvalidPartition("more than one {-1} group".into()));
                }
                rest_seen = true;
            }
            ModeGroup::Modes(modes) => {
                if modes.is_empty() {
                    return Err(Error::InvalidPartition("empty mode group".into()));
                }
                for &m in modes {
                    if m == 0 || m > order {
                        return Err(Error::InvalidPartition(format!(
                            "mode {m} outside 1..={order}"
                        )));
                    }
                    if used[m - 1] {
                        return Err(Error::InvalidPartition(format!("mode {m} appears twice")));
                    }
                    used[m - 1] = true;
                }
            }
        }
    }
    let rest: Vec<usize> = (0..order).filter(|&m| !used[m]).collect();
    if !rest_seen && !rest.is_empty() {
        return Err(Error::InvalidPartition(format!(
            "modes {:?} are not covered",
            rest.iter().map(|m| m + 1).collect::<Vec<_>>()
        )));
    }
    Ok(partition
        .iter()
        .map(|g| match g {
            ModeGroup::Rest => rest.clone(),
            ModeGroup::Modes(modes) => modes.iter().map(|m| m - 1).collect(),
        })
        .collect())
}

/// Source-flat-index to target-flat-index map of a reorder.
///
/// Returns the output shape and a permutation `map` with
/// `out[map[src]] = src_data[src]`.
pub fn reorder_index_map(shape: &[usize], partition: &[ModeGroup]) -> Result<(Vec<usize>, Vec<usize>)> {
    let groups = resolve_partition(shape.len(), partition)?;
    let out_shape: Vec<usize> = groups
        .iter()
        .map(|g| g.iter().map(|&m| shape[m]).product())
        .collect();

    // Target stride contributed by each source mode.
    let mut mode_stride = vec![0usize; shape.len()];
    let mut group_stride = 1usize;
    for (g, modes) in groups.iter().enumerate() {
        let mut inner = 1usize;
        for &m in modes {
            mode_stride[m] = group_stride * inner;
            inner *= shape[m];
        }
        group_stride *= out_shape[g];
    }

    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut target = 0usize;
    for _ in 0..total {
        map.push(target);
        // odometer increment, first mode fastest
        for m in 0..shape.len() {
            idx[m] += 1;
            target += mode_stride[m];
            if idx[m] < shape[m] {
                break;
            }
            target -= mode_stride[m] * shape[m];
            idx[m] = 0;
        }
    }
    Ok((out_shape, map))
}

/// A dense array of arbitrary order, stored first-index-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element at a zero-based multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.shape) {
            flat += i * stride;
            stride *= d;
        }
        self.data[flat]
    }

    /// Reorders the modes into the given groups.
    pub fn reorder(&self, partition: &[ModeGroup]) -> Result<DenseArray> {
        let (out_shape, map) = reorder_index_map(&self.shape, partition)?;
        let mut out = vec![0.0; self.data.len()];
        for (src, &dst) in map.iter().enumerate() {
            out[dst] = self.data[src];
        }
        Ok(DenseArray { shape: out_shape, data: out })
    }

    /// Inverse of [`DenseArray::reorder`]: recovers the array of `original_shape`.
    pub fn unreorder(&self, original_shape: &[usize], partition: &[ModeGroup]) -> Result<DenseArray> {
        let (out_shape, map) = reorder_index_map(original_shape, partition)?;
        if out_shape != self.shape {
            return Err(Error::DimensionMismatch(format!(
                "array shape {:?} does not match reordered shape {:?}",
                self.shape, out_shape
            )));
        }
        let data = map.iter().map(|&dst| self.data[dst]).collect();
        Ok(DenseArray { shape: original_shape.to_vec(), data })
    }

    /// `vec(X)`: reorder with the single group `{-1}`.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Mode-n matricization `({n}, {-1})`, a `D_n x p^(n)` matrix.
    pub fn matricize(&self, mode: usize) -> Result<DenseArray> {
        self.reorder(&[ModeGroup::single(mode), ModeGroup::Rest])
    }
}

/// Index arithmetic for the fibres of one mode inside a `vec(X_t)` block.
///
/// Fibre `d` (0-based, remaining modes first-fastest) element `i` sits at
/// `a + i * inner + b * inner * dim` with `a = d % inner`, `b = d / inner`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ModeLayout {
    pub inner: usize,
    pub dim: usize,
    pub outer: usize,
}

impl ModeLayout {
    pub fn new(dims: &[usize], mode0: usize) -> Self {
        ModeLayout {
            inner: dims[..mode0].iter().product(),
            dim: dims[mode0],
            outer: dims[mode0 + 1..].iter().product(),
        }
    }

    pub fn probdim(&self) -> usize {
        self.inner * self.outer
    }

    #[inline]
    pub fn offset(&self, d: usize, i: usize) -> usize {
        let a = d % self.inner;
        let b = d / self.inner;
        a + i * self.inner + b * self.inner * self.dim
    }

    /// Calls `f(d, fibre)` for every fibre of `block`, reusing `buf`.
    #[inline]
    pub fn for_each_fibre(&self, block: &[f64], buf: &mut Vec<f64>, mut f: impl FnMut(usize, &[f64])) {
        buf.resize(self.dim, 0.0);
        for b in 0..self.outer {
            for a in 0..self.inner {
                let base = a + b * self.inner * self.dim;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = block[base + i * self.inner];
                }
                f(a + b * self.inner, buf);
            }
        }
    }
}

/// A tensor time series: an `(N+1)`-order dense tensor whose last mode is time.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTS {
    shape: Vec<usize>,
    data: Vec<f64>,
    mode_labels: Option<Vec<Vec<String>>>,
}

impl TensorTS {
    /// `shape` is `[D1, .., DN, T]`; `data` is in mode-1-fastest order.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "need at least one variable mode and the time mode, got {shape:?}"
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("zero-length mode in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidShape(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { shape, data, mode_labels: None })
    }

    /// Builds a series from one `vec(X_t)` row per time step.
    pub fn from_rows(dims: &[usize], rows: &[Vec<f64>]) -> Result<Self> {
        let d: usize = dims.iter().product();
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidShape(format!("row {} has {} values, expected {d}", bad + 1, rows[bad].len())));
        }
        let mut shape = dims.to_vec();
        shape.push(rows.len());
        Self::new(shape, rows.concat())
    }

    pub fn with_mode_labels(mut self, labels: Vec<Vec<String>>) -> Result<Self> {
        if labels.len() != self.n_modes() {
            return Err(Error::InvalidShape(format!(
                "{} label lists for {} modes",
                labels.len(),
                self.n_modes()
            )));
        }
        for (n, l) in labels.iter().enumerate() {
            if l.len() != self.shape[n] {
                return Err(Error::InvalidShape(format!(
                    "mode {} has {} labels for {} variables",
                    n + 1,
                    l.len(),
                    self.shape[n]
                )));
            }
        }
        self.mode_labels = Some(labels);
        Ok(self)
    }

    pub fn mode_labels(&self) -> Option<&[Vec<String>]> {
        self.mode_labels.as_deref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Variable-mode dimensions `[D1, .., DN]`.
    pub fn dims(&self) -> &[usize] {
        &self.shape[..self.shape.len() - 1]
    }

    /// Number of non-temporal modes `N`.
    pub fn n_modes(&self) -> usize {
        self.shape.len() - 1
    }

    /// Number of time steps `T`.
    pub fn len_t(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    /// Number of variables per time step `D`.
    pub fn var_count(&self) -> usize {
        self.dims().iter().product()
    }

    /// `p^(n)`: product of the other variable modes (1-based `n`).
    pub fn probdim(&self, mode: usize) -> usize {
        self.var_count() / self.shape[mode - 1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `vec(X_t)` for zero-based `t`.
    pub fn row(&self, t0: usize) -> &[f64] {
        let d = self.var_count();
        &self.data[t0 * d..(t0 + 1) * d]
    }

    pub fn as_dense(&self) -> DenseArray {
        DenseArray { shape: self.shape.clone(), data: self.data.clone() }
    }

    /// `X_t` as an N-order array (1-based `t`).
    pub fn step(&self, t: usize) -> Result<DenseArray> {
        if t == 0 || t > self.len_t() {
            return Err(Error::OutOfRange(format!("time step {t} outside 1..={}", self.len_t())));
        }
        Ok(DenseArray { shape: self.dims().to_vec(), data: self.row(t - 1).to_vec() })
    }

    pub(crate) fn layout(&self, mode: usize) -> ModeLayout {
        ModeLayout::new(self.dims(), mode - 1)
    }

    /// The `(T, p^(n), D_n)` fibre view of mode `n` (1-based).
    pub fn mode_slices(&self, mode: usize) -> Result<ModeSlices> {
        if mode == 0 || mode > self.n_modes() {
            return Err(Error::OutOfRange(format!("mode {mode} outside 1..={}", self.n_modes())));
        }
        let layout = self.layout(mode);
        let p = layout.probdim();
        let dim = layout.dim;
        let t_len = self.len_t();
        let mut data = Vec::with_capacity(self.data.len());
        let mut buf = Vec::new();
        for t in 0..t_len {
            layout.for_each_fibre(self.row(t), &mut buf, |_, fibre| data.extend_from_slice(fibre));
        }
        Ok(ModeSlices { t_len, probdim: p, dim, data })
    }

    /// Time steps `a..b-1` (1-based, `b` exclusive).
    pub fn slice_time(&self, a: usize, b: usize) -> Result<TensorTS> {
        let t_len = self.len_t();
        if a == 0 || a >= b || b > t_len + 1 {
            return Err(Error::InvalidTimeRange { start: a, end: b, len: t_len });
        }
        let d = self.var_count();
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = b - a;
        Ok(TensorTS {
            shape,
            data: self.data[(a - 1) * d..(b - 1) * d].to_vec(),
            mode_labels: self.mode_labels.clone(),
        })
    }

    /// Standardizes every variable within each period to zero mean and unit
    /// (population) standard deviation. `boundaries` are 1-based period starts
    /// followed by `T+1`. Variables constant within a period become zeros.
    pub fn normalize_periods(&self, boundaries: &[usize]) -> Result<TensorTS> {
        let t_len = self.len_t();
        if boundaries.len() < 2 || boundaries[0] != 1 || *boundaries.last().unwrap() != t_len + 1 {
            return Err(Error::InvalidBoundaries(format!(
                "boundaries must start at 1 and end at {}",
                t_len + 1
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBoundaries("boundaries must be strictly increasing".into()));
        }
        let d = self.var_count();
        let mut out = self.data.clone();
        for w in boundaries.windows(2) {
            let (a, b) = (w[0] - 1, w[1] - 1);
            let count = (b - a) as f64;
            for v in 0..d {
                let mean = (a..b).map(|t| self.data[t * d + v]).sum::<f64>() / count;
                let var = (a..b).map(|t| (self.data[t * d + v] - mean).powi(2)).sum::<f64>() / count;
                let sd = var.sqrt();
                for t in a..b {
                    out[t * d + v] = if sd < 1e-12 { 0.0 } else { (self.data[t * d + v] - mean) / sd };
                }
            }
        }
        Ok(TensorTS { shape: self.shape.clone(), data: out, mode_labels: self.mode_labels.clone() })
    }

    /// Period boundaries for fixed-length periods of `len` steps; the last
    /// period takes the remainder.
    pub fn fixed_periods(t_len: usize, len: usize) -> Vec<usize> {
        let mut b: Vec<usize> = (0..t_len.div_ceil(len.max(1))).map(|i| 1 + i * len.max(1)).collect();
        b.push(t_len + 1);
        b
    }
}

/// Fills NaN entries of each variable by linear interpolation over time.
///
/// `data` is laid out as `T` rows of `d` values. Gaps touching the first or
/// last time step cannot be interpolated and are rejected.
pub fn interpolate_missing(data: &mut [f64], d: usize) -> Result<usize> {
    if d == 0 || data.len() % d != 0 {
        return Err(Error::InvalidShape("data length is not a multiple of the row width".into()));
    }
    let t_len = data.len() / d;
    let mut filled = 0;
    for v in 0..d {
        let mut last_good: Option<usize> = None;
        let mut t = 0;
        while t < t_len {
            if data[t * d + v].is_nan() {
                let start = t;
                while t < t_len && data[t * d + v].is_nan() {
                    t += 1;
                }
                let (Some(lo), true) = (last_good, t < t_len) else {
                    return Err(Error::InsufficientData(format!(
                        "variable {} has a missing run at the series edge (steps {}..{})",
                        v + 1,
                        start + 1,
                        t
                    )));
                };
                let (y0, y1) = (data[lo * d + v], data[t * d + v]);
                let span = (t - lo) as f64;
                for s in start..t {
                    data[s * d + v] = y0 + (y1 - y0) * (s - lo) as f64 / span;
                    filled += 1;
                }
            }
            last_good = Some(t);
            t += 1;
        }
    }
    Ok(filled)
}

/// The `(T, p^(n), D_n)` reordering `({N+1}, {-1}, {n})` of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSlices {
    pub t_len: usize,
    pub probdim: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ModeSlices {
    pub fn new(t_len: usize, probdim: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t_len * probdim * dim {
            return Err(Error::InvalidShape(format!(
                "({t_len}, {probdim}, {dim}) slices need {} values, got {}",
                t_len * probdim * dim,
                data.len()
            )));
        }
        Ok(Self { t_len, probdim, dim, data })
    }

    /// The fibre `[t, d, :]` (zero-based).
    pub fn fibre(&self, t: usize, d: usize) -> &[f64] {
        let start = (t * self.probdim + d) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Scatters the fibres back into a tensor of the given variable dims and mode.
    pub fn to_tensor(&self, dims: &[usize], mode: usize) -> Result<TensorTS> {
        let layout = ModeLayout::new(dims, mode - 1);
        if layout.dim != self.dim || layout.probdim() != self.probdim {
            return Err(Error::DimensionMismatch(format!(
                "slices ({}, {}) do not fit dims {dims:?} at mode {mode}",
                self.probdim, self.dim
            )));
        }
        let d = self.probdim * self.dim;
        let mut data = vec![0.0; self.data.len()];
        for t in 0..self.t_len {
            for fd in 0..self.probdim {
                for (i, &v) in self.fibre(t, fd).iter().enumerate() {
                    data[t * d + layout.offset(fd, i)] = v;
                }
            }
        }
        let mut shape = dims.to_vec();
        shape.push(self.t_len);
        TensorTS::new(shape, data)
    }
}
