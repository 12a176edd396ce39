//! Binary erosion, dilation, opening and closing with a disc element.
//!
//! Pixels outside the grid never contribute: dilation ignores them and
//! erosion only inspects in-bounds neighbours. The pair is an adjunction on
//! the grid window, so opening and closing are idempotent.

use alloc::vec::Vec;

use crate::raster::BinaryGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Open,
    Close,
}

/// Offsets `(dx, dy)` with `dx² + dy² ≤ r²`.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn neighbours<'a>(
    grid: &'a BinaryGrid,
    x: usize,
    y: usize,
    se: &'a [(isize, isize)],
) -> impl Iterator<Item = bool> + 'a {
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let (x, y) = (x as isize, y as isize);
    se.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| grid.get(nx as usize, ny as usize))
    })
}

pub fn erode(grid: &BinaryGrid, radius: usize) -> BinaryGrid {
    if radius == 0 {
        return grid.clone();
    }
    let se = disc_offsets(radius);
    BinaryGrid::from_fn(grid.width(), grid.height(), |x, y| grid.get(x, y) && neighbours(grid, x, y, &se).all(|v| v))
}

pub fn dilate(grid: &BinaryGrid, radius: usize) -> BinaryGrid {
    if radius == 0 {
        return grid.clone();
    }
    let se = disc_offsets(radius);
    BinaryGrid::from_fn(grid.width(), grid.height(), |x, y| grid.get(x, y) || neighbours(grid, x, y, &se).any(|v| v))
}

pub fn open(grid: &BinaryGrid, radius: usize) -> BinaryGrid {
    dilate(&erode(grid, radius), radius)
}

pub fn close(grid: &BinaryGrid, radius: usize) -> BinaryGrid {
    erode(&dilate(grid, radius), radius)
}

pub fn binary_morphology(grid: &BinaryGrid, op: MorphOp, radius: usize) -> BinaryGrid {
    match op {
        MorphOp::Open => open(grid, radius),
        MorphOp::Close => close(grid, radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_strategy() -> impl Strategy<Value = BinaryGrid> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |cells| BinaryGrid::from_cells(w, h, cells).unwrap())
        })
    }

    // Reference that shifts the structuring element explicitly instead of
    // scanning neighbourhoods.
    fn reference_close(grid: &BinaryGrid, r: usize) -> BinaryGrid {
        let se = disc_offsets(r);
        let (w, h) = (grid.width() as isize, grid.height() as isize);
        let mut dil = BinaryGrid::new(grid.width(), grid.height());
        for y in 0..h {
            for x in 0..w {
                if grid.get(x as usize, y as usize) {
                    for &(dx, dy) in &se {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            dil.set(nx as usize, ny as usize, true);
                        }
                    }
                }
            }
        }
        let mut out = dil.clone();
        for y in 0..h {
            for x in 0..w {
                if !dil.get(x as usize, y as usize) {
                    for &(dx, dy) in &se {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            out.set(nx as usize, ny as usize, false);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn disc_radius_one_is_a_cross() {
        assert_eq!(disc_offsets(1).len(), 5);
        assert_eq!(disc_offsets(2).len(), 13);
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let mut g = BinaryGrid::new(9, 9);
        g.set(4, 4, true);
        assert!(open(&g, 1).is_empty());
    }

    #[test]
    fn closing_fills_pinhole() {
        let mut g = BinaryGrid::from_fn(20, 20, |x, y| (3..17).contains(&x) && (3..17).contains(&y));
        g.set(10, 10, false);
        let closed = close(&g, 1);
        assert!(closed.get(10, 10));
        assert_eq!(closed, reference_close(&g, 1));
    }

    proptest! {
        #[test]
        fn radius_zero_is_identity(g in grid_strategy()) {
            prop_assert_eq!(open(&g, 0), g.clone());
            prop_assert_eq!(close(&g, 0), g);
        }

        #[test]
        fn open_and_close_are_idempotent(g in grid_strategy(), r in 1usize..3) {
            let o = open(&g, r);
            prop_assert_eq!(open(&o, r), o);
            let c = close(&g, r);
            prop_assert_eq!(close(&c, r), c);
        }

        #[test]
        fn close_matches_shift_reference(g in grid_strategy(), r in 1usize..3) {
            prop_assert_eq!(close(&g, r), reference_close(&g, r));
        }

        #[test]
        fn open_is_anti_extensive_close_is_extensive(g in grid_strategy(), r in 1usize..3) {
            let o = open(&g, r);
            let c = close(&g, r);
            for i in 0..g.cells().len() {
                prop_assert!(!o.cells()[i] || g.cells()[i]);
                prop_assert!(!g.cells()[i] || c.cells()[i]);
            }
        }
    }
}
