//! Binary morphology and connected components.
//!
//! Out-of-domain neighbours are ignored: erosion treats them as set, dilation
//! as unset. Openings and closings built from these are idempotent.

use crate::model::Grid;

/// 1-D erosion with a centered window of `len` samples.
pub fn erode_1d(x: &[bool], len: usize) -> Vec<bool> {
    let h = (len / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| (-h..=h).all(|d| !(0..n).contains(&(i + d)) || x[(i + d) as usize]))
        .collect()
}

pub fn dilate_1d(x: &[bool], len: usize) -> Vec<bool> {
    let h = (len / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| (-h..=h).any(|d| (0..n).contains(&(i + d)) && x[(i + d) as usize]))
        .collect()
}

pub fn open_1d(x: &[bool], len: usize) -> Vec<bool> {
    dilate_1d(&erode_1d(x, len), len)
}

pub fn close_1d(x: &[bool], len: usize) -> Vec<bool> {
    erode_1d(&dilate_1d(x, len), len)
}

/// Symmetric structuring element given as `(row, col)` offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    /// Discrete disk fitting a `size x size` window (size 5 gives the 21-pixel disk).
    pub fn disk(size: usize) -> Self {
        let h = (size / 2) as isize;
        let lim = h * h + 1;
        let mut offsets = Vec::new();
        for dr in -h..=h {
            for dc in -h..=h {
                if dr * dr + dc * dc <= lim {
                    offsets.push((dr, dc));
                }
            }
        }
        Self { offsets }
    }

    pub fn square(size: usize) -> Self {
        let h = (size / 2) as isize;
        let offsets = (-h..=h).flat_map(|dr| (-h..=h).map(move |dc| (dr, dc))).collect();
        Self { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

/// Neighbour row index, wrapping if `periodic_rows`.
#[inline]
fn neighbour_row(r: usize, dr: isize, rows: usize, periodic: bool) -> Option<usize> {
    let rr = r as isize + dr;
    if periodic {
        Some(rr.rem_euclid(rows as isize) as usize)
    } else if (0..rows as isize).contains(&rr) {
        Some(rr as usize)
    } else {
        None
    }
}

pub fn erode(mask: &Grid<bool>, se: &StructuringElement, periodic_rows: bool) -> Grid<bool> {
    let (rows, cols) = (mask.rows(), mask.cols());
    Grid::from_fn(rows, cols, |r, c| {
        if !mask.at(r, c) {
            return false;
        }
        se.offsets.iter().all(|&(dr, dc)| {
            let cc = c as isize + dc;
            if !(0..cols as isize).contains(&cc) {
                return true;
            }
            match neighbour_row(r, dr, rows, periodic_rows) {
                Some(rr) => mask.at(rr, cc as usize),
                None => true,
            }
        })
    })
}

pub fn dilate(mask: &Grid<bool>, se: &StructuringElement, periodic_rows: bool) -> Grid<bool> {
    let (rows, cols) = (mask.rows(), mask.cols());
    Grid::from_fn(rows, cols, |r, c| {
        if mask.at(r, c) {
            return true;
        }
        se.offsets.iter().any(|&(dr, dc)| {
            let cc = c as isize - dc;
            if !(0..cols as isize).contains(&cc) {
                return false;
            }
            match neighbour_row(r, -dr, rows, periodic_rows) {
                Some(rr) => mask.at(rr, cc as usize),
                None => false,
            }
        })
    })
}

pub fn open(mask: &Grid<bool>, se: &StructuringElement, periodic_rows: bool) -> Grid<bool> {
    dilate(&erode(mask, se, periodic_rows), se, periodic_rows)
}

pub fn close(mask: &Grid<bool>, se: &StructuringElement, periodic_rows: bool) -> Grid<bool> {
    erode(&dilate(mask, se, periodic_rows), se, periodic_rows)
}

/// 8-connected components of a mask; returns a component id per pixel (0 = unset)
/// and the size of each component (index `id - 1`).
pub fn components_8(mask: &Grid<bool>, periodic_rows: bool) -> (Grid<u32>, Vec<usize>) {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut ids = Grid::<u32>::new(rows, cols);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !mask.at(r, c) || ids.at(r, c) != 0 {
                continue;
            }
            let id = sizes.len() as u32 + 1;
            let mut size = 0usize;
            ids.set(r, c, id);
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                size += 1;
                for dr in -1isize..=1 {
                    let Some(nr) = neighbour_row(pr, dr, rows, periodic_rows) else {
                        continue;
                    };
                    for dc in -1isize..=1 {
                        let nc = pc as isize + dc;
                        if !(0..cols as isize).contains(&nc) {
                            continue;
                        }
                        let nc = nc as usize;
                        if mask.at(nr, nc) && ids.at(nr, nc) == 0 {
                            ids.set(nr, nc, id);
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (ids, sizes)
}

pub fn remove_small_components(mask: &Grid<bool>, min_size: usize, periodic_rows: bool) -> Grid<bool> {
    let (ids, sizes) = components_8(mask, periodic_rows);
    ids.map(|&id| id != 0 && sizes[id as usize - 1] >= min_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x != 0).collect()
    }

    #[test]
    fn closing_fills_single_gap() {
        assert_eq!(close_1d(&b(&[1, 1, 0, 1, 1]), 3), b(&[1, 1, 1, 1, 1]));
        assert_eq!(open_1d(&b(&[1, 1, 0, 1, 1]), 3), b(&[1, 1, 0, 1, 1]));
    }

    #[test]
    fn opening_removes_isolated_frame() {
        assert_eq!(open_1d(&b(&[0, 1, 0]), 3), b(&[0, 0, 0]));
    }

    #[test]
    fn disk_kernel_sizes() {
        assert_eq!(StructuringElement::disk(5).len(), 21);
        assert_eq!(StructuringElement::disk(3).len(), 9);
        assert_eq!(StructuringElement::square(5).len(), 25);
    }

    #[test]
    fn opening_removes_small_island() {
        let mut m = Grid::<bool>::new(20, 20);
        for c in 5..8 {
            m.set(10, c, true);
        }
        let o = open(&m, &StructuringElement::disk(5), false);
        assert!(o.as_slice().iter().all(|&v| !v));
    }

    #[test]
    fn components_wrap_rows() {
        let mut m = Grid::<bool>::new(10, 5);
        m.set(0, 2, true);
        m.set(9, 3, true);
        let (_, sizes) = components_8(&m, true);
        assert_eq!(sizes, vec![2]);
        let (_, sizes) = components_8(&m, false);
        assert_eq!(sizes.len(), 2);
    }

    proptest! {
        #[test]
        fn open_close_1d_idempotent(v in proptest::collection::vec(any::<bool>(), 1..60)) {
            let once = close_1d(&open_1d(&v, 3), 3);
            let twice = close_1d(&open_1d(&once, 3), 3);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn open_2d_idempotent(bits in proptest::collection::vec(any::<bool>(), 144), periodic in any::<bool>()) {
            let m = Grid::from_vec(12, 12, bits).unwrap();
            let se = StructuringElement::disk(5);
            let once = open(&m, &se, periodic);
            prop_assert_eq!(open(&once, &se, periodic), once.clone());
            let c = close(&m, &se, periodic);
            prop_assert_eq!(close(&c, &se, periodic), c);
        }
    }
}
