//! Jump-bounded optimal paths through score grids.
//!
//! Rows are steps along the path, columns are states. A path picks one state
//! per row and may move at most `jump` states between consecutive rows.
//! Cells scored `-inf` are forbidden. Ties prefer the smallest move, then the
//! smaller state.

use crate::model::Grid;

/// Move order used for tie-breaking: 0, -1, +1, -2, +2, ...
fn moves(jump: usize) -> Vec<isize> {
    let mut m = vec![0isize];
    for d in 1..=jump as isize {
        m.push(-d);
        m.push(d);
    }
    m
}

#[inline]
fn step(state: usize, d: isize, n: usize, wrap: bool) -> Option<usize> {
    let s = state as isize + d;
    if wrap {
        Some(s.rem_euclid(n as isize) as usize)
    } else if (0..n as isize).contains(&s) {
        Some(s as usize)
    } else {
        None
    }
}

fn forward(scores: &Grid<f64>, jump: usize, wrap: bool, start: Option<usize>) -> (Vec<f64>, Vec<i8>) {
    let (rows, cols) = (scores.rows(), scores.cols());
    let mv = moves(jump);
    let mut value = vec![f64::NEG_INFINITY; cols];
    match start {
        Some(s) => value[s] = scores.at(0, s),
        None => value.copy_from_slice(scores.row(0)),
    }
    let mut back = vec![0i8; rows * cols];
    let mut next = vec![f64::NEG_INFINITY; cols];
    for r in 1..rows {
        let row = scores.row(r);
        let (lo, hi) = match start {
            Some(s) if !wrap => (s.saturating_sub(jump * r), (s + jump * r + 1).min(cols)),
            _ => (0, cols),
        };
        next.fill(f64::NEG_INFINITY);
        for c in lo..hi {
            if row[c] == f64::NEG_INFINITY {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0i8;
            for &d in &mv {
                // predecessor sits at c - d so that the move into c is d
                if let Some(p) = step(c, -d, cols, wrap) {
                    if value[p] > best {
                        best = value[p];
                        arg = d as i8;
                    }
                }
            }
            if best > f64::NEG_INFINITY {
                next[c] = best + row[c];
                back[r * cols + c] = arg;
            }
        }
        std::mem::swap(&mut value, &mut next);
    }
    (value, back)
}

fn trace(back: &[i8], rows: usize, cols: usize, end: usize, wrap: bool) -> Vec<usize> {
    let mut path = vec![0usize; rows];
    path[rows - 1] = end;
    for r in (1..rows).rev() {
        let d = back[r * cols + path[r]] as isize;
        path[r - 1] = step(path[r], -d, cols, wrap).expect("valid backpointer");
    }
    path
}

fn argmax(values: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v > f64::NEG_INFINITY && allowed(i) && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Best open path. `wrap` makes the state axis circular.
pub fn optimal_open_path(scores: &Grid<f64>, jump: usize, wrap: bool) -> (Vec<usize>, f64) {
    let (rows, cols) = (scores.rows(), scores.cols());
    if rows == 0 || cols == 0 {
        return (Vec::new(), 0.0);
    }
    let (value, back) = forward(scores, jump, wrap, None);
    let Some(end) = argmax(&value, |_| true) else {
        return (vec![0; rows], f64::NEG_INFINITY);
    };
    (trace(&back, rows, cols, end, wrap), value[end])
}

/// Suffix bound: best open-path value from each state of row 0 onward.
fn backward_bound(scores: &Grid<f64>, jump: usize) -> Vec<f64> {
    let (rows, cols) = (scores.rows(), scores.cols());
    let mut value = scores.row(rows - 1).to_vec();
    let mut next = vec![f64::NEG_INFINITY; cols];
    for r in (0..rows - 1).rev() {
        let row = scores.row(r);
        for c in 0..cols {
            let lo = c.saturating_sub(jump);
            let hi = (c + jump).min(cols - 1);
            let best = value[lo..=hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            next[c] = if row[c] == f64::NEG_INFINITY { f64::NEG_INFINITY } else { row[c] + best };
        }
        std::mem::swap(&mut value, &mut next);
    }
    value
}

fn closes(path: &[usize], jump: usize) -> bool {
    path.first().zip(path.last()).is_some_and(|(a, b)| a.abs_diff(*b) <= jump)
}

/// Best closed path: the last state must also be within `jump` of the first.
/// The state axis itself is not circular.
///
/// Exact. The open optimum is returned when it already closes; otherwise start
/// states are tried in decreasing order of their open-path bound until the
/// bound cannot beat the best closed path found.
pub fn optimal_closed_path(scores: &Grid<f64>, jump: usize) -> (Vec<usize>, f64) {
    let (rows, cols) = (scores.rows(), scores.cols());
    if rows == 0 || cols == 0 {
        return (Vec::new(), 0.0);
    }
    let (path, value) = optimal_open_path(scores, jump, false);
    if value == f64::NEG_INFINITY || closes(&path, jump) {
        return (path, value);
    }
    let bound = backward_bound(scores, jump);
    let mut order: Vec<usize> = (0..cols).filter(|&c| bound[c] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| bound[b].total_cmp(&bound[a]).then(a.cmp(&b)));
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in order {
        if let Some((_, v)) = &best {
            if bound[s] <= *v {
                break;
            }
        }
        let (value, back) = forward(scores, jump, false, Some(s));
        if let Some(end) = argmax(&value, |c| c.abs_diff(s) <= jump) {
            let better = match &best {
                Some((bp, bv)) => value[end] > *bv || (value[end] == *bv && s < bp[0]),
                None => true,
            };
            if better {
                best = Some((trace(&back, rows, cols, end, false), value[end]));
            }
        }
    }
    best.unwrap_or((vec![0; rows], f64::NEG_INFINITY))
}
