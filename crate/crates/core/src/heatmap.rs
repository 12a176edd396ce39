//! Probability heatmaps: one cell per patch footprint.
//!
//! Cells are addressed `(x, y)` = (column, row). Thresholding is strict
//! (`p > t`), components use 8-connectivity, and region moments treat every
//! cell as a unit square so single cells have well-defined second moments.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::classifier::PatchScore;
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, Point};
use crate::raster::BinaryGrid;

/// Value written for cells no patch was scored for.
pub const UNSCORED: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    /// Level-0 pixels per cell (the patch stride).
    pub cell_size: u64,
    /// Level-0 offset of cell `(0, 0)`.
    pub origin: (u64, u64),
    values: Vec<f64>,
    coverage: Vec<bool>,
}

impl Heatmap {
    pub fn unscored(slide_id: impl Into<String>, width: usize, height: usize, cell_size: u64) -> Self {
        Self {
            slide_id: slide_id.into(),
            width,
            height,
            cell_size,
            origin: (0, 0),
            values: vec![UNSCORED; width * height],
            coverage: vec![false; width * height],
        }
    }

    /// Builds a heatmap from a row-major grid where negative entries mean unscored.
    pub fn from_grid(
        slide_id: impl Into<String>,
        width: usize,
        height: usize,
        cell_size: u64,
        origin: (u64, u64),
        grid: Vec<f64>,
    ) -> Result<Self> {
        if grid.len() != width * height {
            return Err(Error::Shape(format!("{} values for {width}x{height}", grid.len())));
        }
        let mut coverage = Vec::with_capacity(grid.len());
        let mut values = Vec::with_capacity(grid.len());
        for v in grid {
            if v < 0.0 {
                coverage.push(false);
                values.push(UNSCORED);
            } else if v <= 1.0 {
                coverage.push(true);
                values.push(v);
            } else {
                return Err(Error::Data(format!("heatmap value {v} outside [0, 1]")));
            }
        }
        Ok(Self { slide_id: slide_id.into(), width, height, cell_size, origin, values, coverage })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.coverage[i].then(|| self.values[i])
    }

    /// Raw row-major values, [`UNSCORED`] where uncovered.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn scored_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    pub fn scored_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.coverage).filter_map(|(&v, &c)| c.then_some(v))
    }

    pub fn set(&mut self, x: usize, y: usize, p: f64) {
        let i = y * self.width + x;
        self.values[i] = p;
        self.coverage[i] = true;
    }

    /// Level-0 center of cell `(x, y)`.
    pub fn cell_center(&self, x: usize, y: usize) -> (u64, u64) {
        (
            self.origin.0 + x as u64 * self.cell_size + self.cell_size / 2,
            self.origin.1 + y as u64 * self.cell_size + self.cell_size / 2,
        )
    }
}

/// Places each patch score in the cell its top-left corner falls on.
pub fn assemble_heatmap(
    slide_id: &str,
    scores: &[PatchScore],
    level0_dims: (u64, u64),
    stride: u64,
) -> Result<Heatmap> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let width = level0_dims.0.div_ceil(stride) as usize;
    let height = level0_dims.1.div_ceil(stride) as usize;
    let mut hm = Heatmap::unscored(slide_id, width, height, stride);
    let Some(first) = scores.first() else {
        return Ok(hm);
    };
    for s in scores {
        let p = &s.patch;
        if p.level != first.patch.level || p.size != first.patch.size {
            return Err(Error::Alignment(format!(
                "patch at ({}, {}) has level {} size {}, expected level {} size {}",
                p.x, p.y, p.level, p.size, first.patch.level, first.patch.size
            )));
        }
        if p.x % stride != 0 || p.y % stride != 0 {
            return Err(Error::Alignment(format!("patch at ({}, {}) is not on the {stride}-pixel grid", p.x, p.y)));
        }
        let (cx, cy) = ((p.x / stride) as usize, (p.y / stride) as usize);
        if cx >= width || cy >= height {
            return Err(Error::Alignment(format!("patch at ({}, {}) lies outside the slide", p.x, p.y)));
        }
        if !(0.0..=1.0).contains(&s.p_tumor) {
            return Err(Error::Data(format!("probability {} outside [0, 1]", s.p_tumor)));
        }
        if hm.get(cx, cy).is_some() {
            return Err(Error::DuplicatePatch { x: p.x, y: p.y });
        }
        hm.set(cx, cy, s.p_tumor);
    }
    Ok(hm)
}

/// Scored cells with `p > t`.
pub fn threshold_heatmap(hm: &Heatmap, t: f64) -> BinaryGrid {
    BinaryGrid::from_fn(hm.width, hm.height, |x, y| hm.get(x, y).is_some_and(|p| p > t))
}

/// 8-connected foreground components.
///
/// Each component's cells are in raster order. Components are sorted by area
/// (largest first), then by their first cell in raster order.
pub fn connected_components(grid: &BinaryGrid) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (grid.width(), grid.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !grid.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut cells = Vec::new();
            seen[y * w + x] = true;
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                cells.push((cx, cy));
                for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        if grid.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            cells.sort_by_key(|&(x, y)| (y, x));
            regions.push(cells);
        }
    }
    // Discovery order is already raster order of first cells; stable sort keeps it for ties.
    regions.sort_by(|a, b| b.len().cmp(&a.len()));
    regions
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub cells: Vec<(usize, usize)>,
    pub area: usize,
    /// (x, y) in cell units.
    pub centroid: (f64, f64),
    pub major_axis_length: f64,
    pub minor_axis_length: f64,
    pub eccentricity: f64,
    pub extent: f64,
    pub solidity: f64,
    pub perimeter: usize,
    pub mean_p: f64,
    pub max_p: f64,
    /// (min_x, min_y, max_x, max_y), inclusive.
    pub bbox: (usize, usize, usize, usize),
}

/// Second-moment eigenvalues (λ1 ≥ λ2) of a cell set, each cell a unit square.
pub fn cell_moments(cells: &[(usize, usize)]) -> (f64, f64) {
    // Exact integer central moments: n²·var = n·Σx² − (Σx)².
    let n = cells.len() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in cells {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let n2 = (n * n) as f64;
    let sxx = (n * sxx - sx * sx) as f64 / n2;
    let syy = (n * syy - sy * sy) as f64 / n2;
    let sxy = (n * sxy - sx * sy) as f64 / n2;
    let a = sxx + 1.0 / 12.0;
    let c = syy + 1.0 / 12.0;
    let b = sxy;
    let half_sum = (a + c) / 2.0;
    let root = libm::sqrt(((a - c) / 2.0) * ((a - c) / 2.0) + b * b);
    (half_sum + root, (half_sum - root).max(0.0))
}

/// Whether `p` lies inside or on a counter-clockwise convex polygon. A hull of
/// one or two points only bounds `p` to a line; callers restrict candidates to
/// the bounding box.
fn inside_convex(hull: &[Point], p: Point) -> bool {
    (0..hull.len()).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

/// Properties of one component. Solidity divides the area by the number of
/// cells whose centers fall inside or on the convex hull of the region's cell centers.
pub fn region_properties(id: usize, cells: &[(usize, usize)], hm: &Heatmap) -> Region {
    assert!(!cells.is_empty(), "region must contain at least one cell");
    let n = cells.len();
    let nf = n as f64;
    let cx = cells.iter().map(|c| c.0 as f64).sum::<f64>() / nf;
    let cy = cells.iter().map(|c| c.1 as f64).sum::<f64>() / nf;

    let (l1, l2) = cell_moments(cells);
    let eccentricity = if l1 > 0.0 { libm::sqrt((1.0 - l2 / l1).max(0.0)) } else { 0.0 };

    let mut bbox = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in cells {
        bbox.0 = bbox.0.min(x);
        bbox.1 = bbox.1.min(y);
        bbox.2 = bbox.2.max(x);
        bbox.3 = bbox.3.max(y);
    }
    let bbox_area = (bbox.2 - bbox.0 + 1) * (bbox.3 - bbox.1 + 1);

    let centers: Vec<Point> = cells.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
    let hull = convex_hull(&centers);
    let convex_cells = (bbox.1..=bbox.3)
        .flat_map(|y| (bbox.0..=bbox.2).map(move |x| Point::new(x as f64, y as f64)))
        .filter(|&c| inside_convex(&hull, c))
        .count();
    let solidity = nf / convex_cells as f64;

    let mut cells_sorted = cells.to_vec();
    cells_sorted.sort_by_key(|&(x, y)| (y, x));
    let member = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && cells_sorted.binary_search_by_key(&(y as usize, x as usize), |&(cx, cy)| (cy, cx)).is_ok()
    };
    let mut perimeter = 0;
    for &(x, y) in &cells_sorted {
        let (x, y) = (x as isize, y as isize);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if !member(x + dx, y + dy) {
                perimeter += 1;
            }
        }
    }

    let ps: Vec<f64> = cells.iter().map(|&(x, y)| hm.get(x, y).unwrap_or(0.0)).collect();
    let mean_p = ps.iter().sum::<f64>() / nf;
    let max_p = ps.iter().copied().fold(0.0, f64::max);

    Region {
        id,
        cells: cells_sorted,
        area: n,
        centroid: (cx, cy),
        major_axis_length: 4.0 * libm::sqrt(l1),
        minor_axis_length: 4.0 * libm::sqrt(l2),
        eccentricity,
        extent: nf / bbox_area as f64,
        solidity,
        perimeter,
        mean_p,
        max_p,
        bbox,
    }
}

/// Components of `threshold_heatmap(hm, t)` with all properties, largest first.
pub fn regions_at(hm: &Heatmap, t: f64) -> Vec<Region> {
    connected_components(&threshold_heatmap(hm, t))
        .iter()
        .enumerate()
        .map(|(id, cells)| region_properties(id, cells, hm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::PatchRef;

    fn score(x: u64, y: u64, p: f64) -> PatchScore {
        PatchScore {
            patch: PatchRef { slide_id: "s".into(), level: 0, x, y, size: 256, label: None },
            p_tumor: p,
            model_id: "m".into(),
        }
    }

    fn hm_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Heatmap {
        let grid = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Heatmap::from_grid("s", w, h, 256, (0, 0), grid).unwrap()
    }

    #[test]
    fn assemble_full_grid() {
        let scores: Vec<_> =
            (0..4).flat_map(|y| (0..4).map(move |x| score(x * 256, y * 256, (x + 4 * y) as f64 / 16.0))).collect();
        let hm = assemble_heatmap("s", &scores, (1024, 1024), 256).unwrap();
        assert_eq!((hm.width, hm.height, hm.scored_count()), (4, 4, 16));
        for s in &scores {
            assert_eq!(hm.get((s.patch.x / 256) as usize, (s.patch.y / 256) as usize), Some(s.p_tumor));
        }
    }

    #[test]
    fn assemble_errors() {
        let empty = assemble_heatmap("s", &[], (1024, 1024), 256).unwrap();
        assert_eq!(empty.scored_count(), 0);
        let dup = [score(0, 0, 0.1), score(0, 0, 0.2)];
        assert_eq!(assemble_heatmap("s", &dup, (1024, 1024), 256), Err(Error::DuplicatePatch { x: 0, y: 0 }));
        let off = [score(10, 0, 0.1)];
        assert!(matches!(assemble_heatmap("s", &off, (1024, 1024), 256), Err(Error::Alignment(_))));
    }

    #[test]
    fn strict_threshold() {
        let hm = hm_from(3, 3, |x, _| [0.2, 0.9, 1.0][x]);
        assert!(threshold_heatmap(&hm, 1.0).is_empty());
        assert_eq!(threshold_heatmap(&hm, 0.9).count_ones(), 3);
        assert_eq!(threshold_heatmap(&hm, 0.0).count_ones(), 9);
    }

    #[test]
    fn diagonal_cells_join() {
        let mut g = BinaryGrid::new(4, 4);
        g.set(0, 0, true);
        g.set(1, 1, true);
        g.set(3, 3, true);
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], vec![(0, 0), (1, 1)]);
        assert!(connected_components(&BinaryGrid::new(3, 3)).is_empty());
    }

    #[test]
    fn single_cell_properties() {
        let hm = hm_from(5, 5, |x, y| if (x, y) == (2, 2) { 0.95 } else { 0.0 });
        let r = region_properties(0, &[(2, 2)], &hm);
        assert_eq!((r.area, r.eccentricity, r.extent, r.solidity, r.perimeter), (1, 0.0, 1.0, 1.0, 4));
        assert!((r.major_axis_length - 4.0 * (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!((r.mean_p, r.max_p), (0.95, 0.95));
    }

    #[test]
    fn horizontal_bar_eccentricity() {
        let hm = hm_from(12, 3, |_, _| 0.7);
        let cells: Vec<_> = (1..11).map(|x| (x, 1)).collect();
        let r = region_properties(0, &cells, &hm);
        // Unit squares along a 10-cell run: λ1 = 10²/12, λ2 = 1/12.
        let closed_form = (1.0 - (1.0 / 12.0) / (100.0 / 12.0f64)).sqrt();
        assert!((r.eccentricity - closed_form).abs() < 1e-12);
        assert!((r.eccentricity - 0.99499).abs() < 1e-4);
        assert_eq!((r.extent, r.solidity, r.perimeter), (1.0, 1.0, 22));
    }

    #[test]
    fn square_block_axis() {
        let hm = hm_from(6, 6, |_, _| 1.0);
        let cells: Vec<_> = (1..4).flat_map(|y| (1..4).map(move |x| (x, y))).collect();
        let r = region_properties(0, &cells, &hm);
        // var{0,1,2} = 2/3, plus 1/12.
        assert!((r.major_axis_length - 4.0 * 0.75f64.sqrt()).abs() < 1e-12);
        assert!(r.eccentricity.abs() < 1e-12);
    }

    #[test]
    fn l_shape_solidity_below_one() {
        let hm = hm_from(4, 4, |_, _| 1.0);
        let cells = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)];
        let r = region_properties(0, &cells, &hm);
        // Hull triangle (0,0), (0,2), (2,2) also covers (1, 1).
        assert!((r.solidity - 5.0 / 6.0).abs() < 1e-12, "{}", r.solidity);
        assert!((r.extent - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn digital_disc_is_nearly_convex() {
        let hm = hm_from(17, 17, |_, _| 1.0);
        let cells: Vec<_> = (0..17usize)
            .flat_map(|y| (0..17usize).map(move |x| (x, y)))
            .filter(|&(x, y)| (x as i64 - 8).pow(2) + (y as i64 - 8).pow(2) <= 64)
            .collect();
        let r = region_properties(0, &cells, &hm);
        assert!(r.solidity >= 0.95 && r.solidity <= 1.0, "{}", r.solidity);
        assert!(r.eccentricity <= 0.1);
    }
}
