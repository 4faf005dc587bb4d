//! Axis-aligned boxes, grid partitions of the domain and noise-support cells.
//!
//! Grid cells are half-open `[lo, hi)` along every axis except the last cell of
//! each axis, which is closed so that the cells tile the closed domain. The
//! region outside the domain is represented implicitly by index
//! [`Partition::outside`].

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;

/// Bitmask over a list of atomic propositions.
pub type Label = u32;

/// Relative tolerance used to decide whether a coordinate lies on a grid plane.
const GRID_ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid box: lower bound exceeds upper bound in dimension {0}")]
    Inverted(usize),
    #[error("cell count must be at least 1 in every dimension")]
    ZeroCount,
    #[error("region `{label}` is not contained in the domain")]
    RegionOutsideDomain { label: String },
    #[error("region `{label}` boundary {value} in dimension {dim} is not on a grid plane")]
    Misaligned { label: String, dim: usize, value: f64 },
    #[error("too many atomic propositions ({0}); at most 32 are supported")]
    TooManyPropositions(usize),
    #[error("malformed partition: {0}")]
    Malformed(String),
}

/// Closed axis-aligned box `[lo, hi]`.
///
/// An empty box is never constructed; operations that can collapse a box
/// return `Option<Rect>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
            return Err(GeometryError::Inverted(i));
        }
        Ok(Rect { lo, hi })
    }

    pub fn point(x: &[f64]) -> Self {
        Rect {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn from_intervals(iv: &[Interval]) -> Self {
        Rect {
            lo: iv.iter().map(|i| i.lo).collect(),
            hi: iv.iter().map(|i| i.hi).collect(),
        }
    }

    /// The cube `[-r, r]^n`.
    pub fn centered_cube(dim: usize, r: f64) -> Self {
        Rect {
            lo: vec![-r; dim],
            hi: vec![r; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval {
            lo: self.lo[i],
            hi: self.hi[i],
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        (0..self.dim()).map(|i| self.interval(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }

    pub fn contains(&self, other: &Rect) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Closed-box intersection test (shared faces count as intersecting).
    pub fn intersects(&self, other: &Rect) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn hull(&self, other: &Rect) -> Rect {
        Rect {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    /// Minkowski sum of two boxes.
    pub fn minkowski_sum(&self, other: &Rect) -> Rect {
        Rect {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a + b).collect(),
        }
    }

    /// Shrinks every face inward by `eps[i]`; `None` once any width collapses
    /// below zero.
    pub fn erode(&self, eps: &[f64]) -> Option<Rect> {
        debug_assert!(eps.iter().all(|e| *e >= 0.0));
        let lo: Vec<f64> = self.lo.iter().zip(eps).map(|(l, e)| l + e).collect();
        let hi: Vec<f64> = self.hi.iter().zip(eps).map(|(h, e)| h - e).collect();
        lo.iter().zip(&hi).all(|(l, h)| l <= h).then_some(Rect { lo, hi })
    }

    /// Grows every face outward by `eps[i]`.
    pub fn dilate(&self, eps: &[f64]) -> Rect {
        debug_assert!(eps.iter().all(|e| *e >= 0.0));
        Rect {
            lo: self.lo.iter().zip(eps).map(|(l, e)| l - e).collect(),
            hi: self.hi.iter().zip(eps).map(|(h, e)| h + e).collect(),
        }
    }

    /// Splits the box into `parts^n` equal sub-boxes in row-major order.
    pub fn subdivide(&self, parts: usize) -> Vec<Rect> {
        let parts = parts.max(1);
        if parts == 1 || self.is_degenerate() {
            return vec![self.clone()];
        }
        let n = self.dim();
        let edge = |i: usize, k: usize| -> f64 {
            if k == parts {
                self.hi[i]
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * (k as f64) / (parts as f64)
            }
        };
        let total = parts.pow(n as u32);
        (0..total)
            .map(|mut flat| {
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                for i in (0..n).rev() {
                    let k = flat % parts;
                    flat /= parts;
                    lo[i] = edge(i, k);
                    hi[i] = edge(i, k + 1);
                }
                Rect { lo, hi }
            })
            .collect()
    }

    /// Largest coordinate-wise distance between the two boxes' bounds.
    pub fn hausdorff(&self, other: &Rect) -> f64 {
        (0..self.dim())
            .map(|i| {
                (self.lo[i] - other.lo[i])
                    .abs()
                    .max((self.hi[i] - other.hi[i]).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// A grid cell with the half-open convention made explicit: along axis `i`
/// the cell is `[lo, hi)` unless `closed_upper[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellShape {
    pub rect: Rect,
    pub closed_upper: Vec<bool>,
}

impl CellShape {
    /// Whether the closed box `b` lies inside this cell.
    pub fn contains(&self, b: &Rect) -> bool {
        (0..b.dim()).all(|i| {
            let upper_ok = if self.closed_upper[i] {
                b.hi()[i] <= self.rect.hi()[i]
            } else {
                b.hi()[i] < self.rect.hi()[i]
            };
            self.rect.lo()[i] <= b.lo()[i] && upper_ok
        })
    }

    /// Whether the closed box `b` meets this cell.
    pub fn intersects(&self, b: &Rect) -> bool {
        (0..b.dim()).all(|i| {
            let below_top = if self.closed_upper[i] {
                b.lo()[i] <= self.rect.hi()[i]
            } else {
                b.lo()[i] < self.rect.hi()[i]
            };
            below_top && self.rect.lo()[i] <= b.hi()[i]
        })
    }

    pub fn erode(&self, eps: &[f64]) -> Option<CellShape> {
        self.rect.erode(eps).map(|rect| CellShape {
            rect,
            closed_upper: self.closed_upper.clone(),
        })
    }

    pub fn dilate(&self, eps: &[f64]) -> CellShape {
        CellShape {
            rect: self.rect.dilate(eps),
            closed_upper: self.closed_upper.clone(),
        }
    }
}

/// A labeled region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub rect: Rect,
}

/// Uniform grid over the domain plus the implicit outside state.
///
/// Cells are indexed row-major (last axis fastest); the outside state has
/// index `num_cells()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    domain: Rect,
    counts: Vec<usize>,
    ap: Vec<String>,
    labels: Vec<Label>,
    outside_label: Label,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    version: u32,
    domain: Rect,
    counts: Vec<usize>,
    ap: Vec<String>,
    cell_labels: Vec<Label>,
    outside_label: Label,
}

impl Partition {
    /// Builds the grid and labels it from `regions`. The outside state gets
    /// the proposition `outside`.
    ///
    /// Fails when a region boundary does not fall on a grid plane.
    pub fn build(
        domain: &Rect,
        counts: &[usize],
        regions: &[Region],
        outside: &str,
    ) -> Result<Partition, GeometryError> {
        let n = domain.dim();
        if counts.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(GeometryError::ZeroCount);
        }
        let mut ap: Vec<String> = regions.iter().map(|r| r.label.clone()).collect();
        ap.push(outside.to_string());
        ap.sort();
        ap.dedup();
        if ap.len() > 32 {
            return Err(GeometryError::TooManyPropositions(ap.len()));
        }
        let bit = |name: &str| -> Label { 1 << ap.iter().position(|a| a == name).unwrap() };

        let strides = row_major_strides(counts);
        let total: usize = counts.iter().product();
        let mut labels = vec![0 as Label; total];

        for region in regions {
            if region.rect.dim() != n {
                return Err(GeometryError::Dimension {
                    expected: n,
                    got: region.rect.dim(),
                });
            }
            if !domain.contains(&region.rect) {
                return Err(GeometryError::RegionOutsideDomain {
                    label: region.label.clone(),
                });
            }
            let mut ranges = Vec::with_capacity(n);
            for i in 0..n {
                let a = grid_plane(domain, counts, i, region.rect.lo()[i]).ok_or_else(|| {
                    GeometryError::Misaligned {
                        label: region.label.clone(),
                        dim: i,
                        value: region.rect.lo()[i],
                    }
                })?;
                let b = grid_plane(domain, counts, i, region.rect.hi()[i]).ok_or_else(|| {
                    GeometryError::Misaligned {
                        label: region.label.clone(),
                        dim: i,
                        value: region.rect.hi()[i],
                    }
                })?;
                ranges.push(a..b);
            }
            let b = bit(&region.label);
            for_each_multi_index(&ranges, |idx| {
                let flat: usize = idx.iter().zip(&strides).map(|(k, s)| k * s).sum();
                labels[flat] |= b;
            });
        }

        Ok(Partition {
            domain: domain.clone(),
            counts: counts.to_vec(),
            outside_label: bit(outside),
            ap,
            labels,
            strides,
        })
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn ap(&self) -> &[String] {
        &self.ap
    }

    pub fn num_cells(&self) -> usize {
        self.labels.len()
    }

    /// Cells plus the outside state.
    pub fn num_states(&self) -> usize {
        self.labels.len() + 1
    }

    /// Index of the state representing the complement of the domain.
    pub fn outside(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, state: usize) -> Label {
        if state == self.outside() {
            self.outside_label
        } else {
            self.labels[state]
        }
    }

    /// Labels of all states, outside state last.
    pub fn labels(&self) -> Vec<Label> {
        let mut l = self.labels.clone();
        l.push(self.outside_label);
        l
    }

    /// Coordinate of the `k`-th grid plane along axis `i`.
    pub fn plane(&self, i: usize, k: usize) -> f64 {
        plane(&self.domain, &self.counts, i, k)
    }

    pub fn multi_index(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = cell % self.counts[i];
            cell /= self.counts[i];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn cell(&self, cell: usize) -> Rect {
        let idx = self.multi_index(cell);
        Rect {
            lo: (0..self.dim()).map(|i| self.plane(i, idx[i])).collect(),
            hi: (0..self.dim()).map(|i| self.plane(i, idx[i] + 1)).collect(),
        }
    }

    pub fn cell_shape(&self, cell: usize) -> CellShape {
        let idx = self.multi_index(cell);
        CellShape {
            rect: self.cell(cell),
            closed_upper: (0..self.dim()).map(|i| idx[i] + 1 == self.counts[i]).collect(),
        }
    }

    /// State index of the point `x`, or [`Partition::outside`].
    pub fn locate(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim());
        let mut flat = 0;
        for i in 0..self.dim() {
            let v = x[i];
            if !(self.domain.lo()[i] <= v && v <= self.domain.hi()[i]) {
                return self.outside();
            }
            let c = self.counts[i];
            let h = (self.domain.hi()[i] - self.domain.lo()[i]) / c as f64;
            let mut k = if h > 0.0 {
                (((v - self.domain.lo()[i]) / h).floor().max(0.0) as usize).min(c - 1)
            } else {
                0
            };
            while k > 0 && v < self.plane(i, k) {
                k -= 1;
            }
            while k + 1 < c && v >= self.plane(i, k + 1) {
                k += 1;
            }
            flat += k * self.strides[i];
        }
        flat
    }

    /// Per-axis ranges of cells whose closure can meet the closed box `b`.
    /// Empty ranges mean no cell meets it.
    pub fn cell_ranges(&self, b: &Rect) -> Vec<Range<usize>> {
        (0..self.dim())
            .map(|i| {
                let c = self.counts[i];
                let lo = self.domain.lo()[i];
                let h = (self.domain.hi()[i] - lo) / c as f64;
                if b.hi()[i] < lo || b.lo()[i] > self.domain.hi()[i] {
                    return 0..0;
                }
                let a = ((b.lo()[i] - lo) / h).floor() - 1.0;
                let z = ((b.hi()[i] - lo) / h).floor() + 2.0;
                let a = a.max(0.0) as usize;
                let z = (z.max(0.0) as usize).min(c);
                a.min(c)..z
            })
            .collect()
    }

    /// Calls `f` with every cell index inside the per-axis ranges.
    pub fn for_each_cell_in(&self, ranges: &[Range<usize>], mut f: impl FnMut(usize)) {
        for_each_multi_index(ranges, |idx| f(self.flat_index(idx)));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PartitionFile {
            version: 1,
            domain: self.domain.clone(),
            counts: self.counts.clone(),
            ap: self.ap.clone(),
            cell_labels: self.labels.clone(),
            outside_label: self.outside_label,
        })
        .expect("partition serializes")
    }

    pub fn from_json(s: &str) -> Result<Partition, GeometryError> {
        let f: PartitionFile =
            serde_json::from_str(s).map_err(|e| GeometryError::Malformed(e.to_string()))?;
        if f.version != 1 {
            return Err(GeometryError::Malformed(format!(
                "unsupported version {}",
                f.version
            )));
        }
        let total: usize = f.counts.iter().product();
        if f.cell_labels.len() != total || f.counts.len() != f.domain.dim() {
            return Err(GeometryError::Malformed("label count mismatch".into()));
        }
        if f.counts.iter().any(|&c| c == 0) {
            return Err(GeometryError::ZeroCount);
        }
        Ok(Partition {
            strides: row_major_strides(&f.counts),
            domain: f.domain,
            counts: f.counts,
            ap: f.ap,
            labels: f.cell_labels,
            outside_label: f.outside_label,
        })
    }
}

fn row_major_strides(counts: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; counts.len()];
    for i in (0..counts.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * counts[i + 1];
    }
    strides
}

fn plane(domain: &Rect, counts: &[usize], i: usize, k: usize) -> f64 {
    let c = counts[i];
    if k >= c {
        domain.hi()[i]
    } else {
        let lo = domain.lo()[i];
        lo + (domain.hi()[i] - lo) * (k as f64) / (c as f64)
    }
}

/// Index of the grid plane equal to `value` along axis `i`, if any.
fn grid_plane(domain: &Rect, counts: &[usize], i: usize, value: f64) -> Option<usize> {
    let lo = domain.lo()[i];
    let width = domain.hi()[i] - lo;
    if width == 0.0 {
        return (value == lo).then_some(0);
    }
    let t = (value - lo) / width * counts[i] as f64;
    let k = t.round();
    ((t - k).abs() <= GRID_ALIGN_TOL * counts[i] as f64 && k >= 0.0 && k <= counts[i] as f64)
        .then_some(k as usize)
}

fn for_each_multi_index(ranges: &[Range<usize>], mut f: impl FnMut(&[usize])) {
    if ranges.iter().any(|r| r.is_empty()) {
        return;
    }
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    loop {
        f(&idx);
        let mut i = ranges.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < ranges[i].end {
                break;
            }
            idx[i] = ranges[i].start;
        }
    }
}

/// A cell of the noise support with its probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCell {
    pub rect: Rect,
    pub prob: f64,
}

/// Partition of the noise support `[-σ_v, σ_v]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCells {
    cells: Vec<NoiseCell>,
}

impl NoiseCells {
    /// Uniform grid over `[-sigma, sigma]^n` under the uniform noise density,
    /// so each cell has mass `Π 1/counts[i]`.
    pub fn uniform(sigma: f64, counts: &[usize]) -> Result<NoiseCells, GeometryError> {
        if counts.iter().any(|&c| c == 0) {
            return Err(GeometryError::ZeroCount);
        }
        let support = Rect::centered_cube(counts.len(), sigma.abs());
        let mass: f64 = counts.iter().map(|&c| 1.0 / c as f64).product();
        let ranges: Vec<Range<usize>> = counts.iter().map(|&c| 0..c).collect();
        let mut cells = Vec::with_capacity(counts.iter().product());
        for_each_multi_index(&ranges, |idx| {
            let lo = (0..counts.len())
                .map(|i| plane(&support, counts, i, idx[i]))
                .collect();
            let hi = (0..counts.len())
                .map(|i| plane(&support, counts, i, idx[i] + 1))
                .collect();
            cells.push(NoiseCell {
                rect: Rect { lo, hi },
                prob: mass,
            });
        });
        Ok(NoiseCells { cells })
    }

    /// Explicit cells; masses must sum to 1 within `1e-12`.
    pub fn new(cells: Vec<NoiseCell>) -> Result<NoiseCells, GeometryError> {
        let total: f64 = cells.iter().map(|c| c.prob).sum();
        if cells.is_empty() || (total - 1.0).abs() > 1e-12 || cells.iter().any(|c| !(c.prob >= 0.0)) {
            return Err(GeometryError::Malformed(format!(
                "noise cell masses must be nonnegative and sum to 1, got {total}"
            )));
        }
        Ok(NoiseCells { cells })
    }

    pub fn cells(&self) -> &[NoiseCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(lo: f64, hi: f64) -> Rect {
        Rect::new(vec![lo, lo], vec![hi, hi]).unwrap()
    }

    #[test]
    fn empty_grid_has_sixteen_cells() {
        let p = Partition::build(&square(-2.0, 2.0), &[4, 4], &[], "b").unwrap();
        assert_eq!(p.num_cells(), 16);
        assert_eq!(p.num_states(), 17);
        assert_eq!(p.ap(), &["b".to_string()]);
        assert!((0..16).all(|c| p.label(c) == 0));
        assert_eq!(p.label(p.outside()), 1);
    }

    #[test]
    fn aligned_region_labels_one_cell() {
        let regions = [Region {
            label: "o".into(),
            rect: square(0.0, 1.0),
        }];
        let p = Partition::build(&square(-2.0, 2.0), &[4, 4], &regions, "b").unwrap();
        let o = 1 << p.ap().iter().position(|a| a == "o").unwrap();
        let labeled: Vec<usize> = (0..16).filter(|&c| p.label(c) & o != 0).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!(p.cell(labeled[0]), square(0.0, 1.0));
    }

    #[test]
    fn misaligned_region_is_rejected() {
        let regions = [Region {
            label: "o".into(),
            rect: square(0.0, 0.5),
        }];
        let err = Partition::build(&square(-2.0, 2.0), &[4, 4], &regions, "b").unwrap_err();
        assert!(matches!(err, GeometryError::Misaligned { .. }));
    }

    #[test]
    fn erode_and_dilate_examples() {
        let unit = square(0.0, 1.0);
        assert_eq!(unit.erode(&[0.0, 0.0]), Some(unit.clone()));
        assert_eq!(unit.erode(&[0.6, 0.1]), None);
        assert_eq!(
            unit.dilate(&[0.1, 0.2]),
            Rect::new(vec![-0.1, -0.2], vec![1.1, 1.2]).unwrap()
        );
    }

    #[test]
    fn locate_uses_half_open_cells() {
        let p = Partition::build(&square(-2.0, 2.0), &[4, 4], &[], "b").unwrap();
        // x = 0 lies on a shared face; the upper neighbour owns it.
        assert_eq!(p.multi_index(p.locate(&[0.0, 0.0])), vec![2, 2]);
        // The domain's upper face belongs to the last cell.
        assert_eq!(p.multi_index(p.locate(&[2.0, 2.0])), vec![3, 3]);
        assert_eq!(p.locate(&[2.0 + 1e-12, 0.0]), p.outside());
        assert_eq!(p.locate(&[-2.0, -2.0]), 0);
    }

    #[test]
    fn noise_cells_single_and_quartered() {
        let one = NoiseCells::uniform(0.01, &[1, 1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.cells()[0].prob, 1.0);
        let four = NoiseCells::uniform(0.01, &[2, 2]).unwrap();
        assert_eq!(four.len(), 4);
        assert!(four.cells().iter().all(|c| c.prob == 0.25));
    }

    #[test]
    fn half_open_cell_tests() {
        let cell = CellShape {
            rect: square(0.0, 1.0),
            closed_upper: vec![false, true],
        };
        let touching_top_x = Rect::new(vec![0.5, 0.5], vec![1.0, 0.6]).unwrap();
        assert!(!cell.contains(&touching_top_x));
        let touching_top_y = Rect::new(vec![0.5, 0.5], vec![0.6, 1.0]).unwrap();
        assert!(cell.contains(&touching_top_y));
        let beyond_x = Rect::new(vec![1.0, 0.5], vec![1.5, 0.6]).unwrap();
        assert!(!cell.intersects(&beyond_x));
    }

    #[test]
    fn json_round_trip() {
        let regions = [Region {
            label: "w".into(),
            rect: square(0.0, 1.0),
        }];
        let p = Partition::build(&square(-2.0, 2.0), &[8, 4], &regions, "b").unwrap();
        let q = Partition::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }
}
