use super::MatchError;

/// Dense row-major cost matrix; rows are predictions, columns targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatchError> {
        if data.len() != rows * cols {
            return Err(MatchError::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatchError::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatchError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MatchError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

/// Injective `(prediction, target)` pairs sorted by prediction index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// Validates injectivity and sorts.
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Result<Self, MatchError> {
        pairs.sort_unstable();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        cols.sort_unstable();
        let dup_row = pairs.windows(2).any(|w| w[0].0 == w[1].0);
        let dup_col = cols.windows(2).any(|w| w[0] == w[1]);
        if dup_row || dup_col {
            return Err(MatchError::Contract("assignment is not injective".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Target matched to prediction `i`, if any.
    pub fn target_of(&self, i: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&i, |p| p.0)
            .ok()
            .map(|k| self.pairs[k].1)
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| c.get(i, j)).sum()
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs. Among optimal
/// assignments the lexicographically smallest sorted pair list is returned.
pub fn hungarian(c: &CostMatrix) -> Result<(Assignment, f64), MatchError> {
    if let Some(k) = c.data.iter().position(|v| !v.is_finite()) {
        return Err(MatchError::NonFinite {
            row: k / c.cols,
            col: k % c.cols,
        });
    }
    if c.is_empty() {
        return Ok((Assignment::default(), 0.0));
    }
    let n = c.rows.max(c.cols);
    // Padding cells all cost the same, so they never change which real
    // pairs are optimal; zero keeps the duals well scaled.
    let cost = |i: usize, j: usize| {
        if i < c.rows && j < c.cols {
            c.get(i, j)
        } else {
            0.0
        }
    };
    let (row_match, u, v) = solve_square(n, &cost);

    let scale = c.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| cost(i, j) - u[i] - v[j] <= tol;
    let raw = collect(c, &row_match);
    let raw_cost = raw.cost(c);

    let tie_broken = lexicographic(n, c.cols, row_match, &tight).map(|m| collect(c, &m));
    let best = match tie_broken {
        Some(a) if a.cost(c) <= raw_cost + tol * n as f64 => a,
        _ => raw,
    };
    let total = best.cost(c);
    Ok((best, total))
}

fn collect(c: &CostMatrix, row_match: &[usize]) -> Assignment {
    let pairs = row_match
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < c.rows && j < c.cols)
        .map(|(i, &j)| (i, j))
        .collect();
    Assignment { pairs }
}

/// Shortest augmenting path with potentials on a square matrix. Returns the
/// column of each row and the duals, `cost(i, j) - u[i] - v[j] >= 0` with
/// equality on the matching.
fn solve_square(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_match = vec![0usize; n];
    for j in 1..=n {
        row_match[p[j] - 1] = j - 1;
    }
    (row_match, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment uses tight edges only and every perfect
/// matching of tight edges is optimal, so the lexicographic optimum is found
/// greedily: fix rows in order, trying real columns in ascending order
/// before padding, and repair the rest of the matching by an alternating
/// path.
fn lexicographic(
    n: usize,
    real_cols: usize,
    mut row_match: Vec<usize>,
    tight: &dyn Fn(usize, usize) -> bool,
) -> Option<Vec<usize>> {
    let mut col_match = vec![0usize; n];
    for (i, &j) in row_match.iter().enumerate() {
        col_match[j] = i;
    }
    if (0..n).any(|i| !tight(i, row_match[i])) {
        return None;
    }
    let mut fixed_col = vec![false; n];
    for i in 0..n {
        let mut done = false;
        for j in 0..n {
            if fixed_col[j] || !tight(i, j) {
                continue;
            }
            if j >= real_cols && row_match[i] >= real_cols {
                // any padding column is as good as another
                done = true;
                break;
            }
            if row_match[i] == j {
                done = true;
                break;
            }
            let freed = row_match[i];
            let r = col_match[j];
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            if reroute(r, freed, j, tight, &row_match, &col_match, &fixed_col, &mut visited, &mut path) {
                // path: (row, new column) pairs
                for &(row, col) in &path {
                    row_match[row] = col;
                    col_match[col] = row;
                }
                row_match[i] = j;
                col_match[j] = i;
                done = true;
                break;
            }
        }
        if !done {
            return None;
        }
        fixed_col[row_match[i]] = true;
    }
    Some(row_match)
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    banned: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    row_match: &[usize],
    col_match: &[usize],
    fixed_col: &[bool],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..row_match.len() {
        if c == banned || fixed_col[c] || visited[c] || c == row_match[row] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = col_match[c];
        if reroute(next, target, banned, tight, row_match, col_match, fixed_col, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search; ties resolved to the smallest sorted pair list.
    fn brute(c: &CostMatrix) -> (Vec<(usize, usize)>, f64) {
        let k = c.rows().min(c.cols());
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        fn rec(
            c: &CostMatrix,
            i: usize,
            k: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if cur.len() == k {
                let cost: f64 = cur.iter().map(|&(a, b)| c.get(a, b)).sum();
                let better = match best {
                    None => true,
                    Some((bc, bp)) => cost < *bc || (cost == *bc && cur < bp),
                };
                if better {
                    *best = Some((cost, cur.clone()));
                }
                return;
            }
            if i == c.rows() || c.rows() - i < k - cur.len() {
                return;
            }
            for j in 0..c.cols() {
                if !used[j] {
                    used[j] = true;
                    cur.push((i, j));
                    rec(c, i + 1, k, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
            rec(c, i + 1, k, used, cur, best);
        }
        rec(c, 0, k, &mut vec![false; c.cols()], &mut Vec::new(), &mut best);
        let (cost, pairs) = best.unwrap_or((0.0, Vec::new()));
        (pairs, cost)
    }

    #[test]
    fn identity_favouring() {
        let n = 5;
        let data = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        let (a, cost) = hungarian(&CostMatrix::new(n, n, data).unwrap()).unwrap();
        assert_eq!(a.pairs(), (0..n).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn two_by_two() {
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let (a, cost) = hungarian(&m).unwrap();
        assert_eq!(a.pairs(), &[(0, 0), (1, 1)]);
        assert_eq!(cost, 2.0);
    }

    #[test]
    fn all_ties_pick_smallest_list() {
        let m = CostMatrix::new(3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(hungarian(&m).unwrap().0.pairs(), &[(0, 0), (1, 1), (2, 2)]);
        let tall = CostMatrix::new(4, 2, vec![0.0; 8]).unwrap();
        assert_eq!(hungarian(&tall).unwrap().0.pairs(), &[(0, 0), (1, 1)]);
        let wide = CostMatrix::new(2, 4, vec![3.0; 8]).unwrap();
        assert_eq!(hungarian(&wide).unwrap().0.pairs(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_nan_and_handles_empty() {
        assert!(matches!(
            CostMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(MatchError::NonFinite { row: 0, col: 1 })
        ));
        let (a, c) = hungarian(&CostMatrix::new(3, 0, vec![]).unwrap()).unwrap();
        assert!(a.is_empty());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn assignment_validation() {
        assert!(Assignment::new(vec![(0, 1), (1, 1)]).is_err());
        assert!(Assignment::new(vec![(0, 1), (0, 2)]).is_err());
        let a = Assignment::new(vec![(2, 0), (0, 1)]).unwrap();
        assert_eq!(a.pairs(), &[(0, 1), (2, 0)]);
        assert_eq!(a.target_of(2), Some(0));
        assert_eq!(a.target_of(1), None);
    }

    #[test]
    fn six_by_six_random_against_permutations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let data: Vec<f64> = (0..36).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = CostMatrix::new(6, 6, data).unwrap();
            let (a, cost) = hungarian(&m).unwrap();
            let (bp, bc) = brute(&m);
            assert!((cost - bc).abs() < 1e-9);
            assert_eq!(a.pairs(), bp.as_slice());
        }
    }

    fn int_matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0i32..4, r * c)
                .prop_map(move |d| CostMatrix::new(r, c, d.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_brute_force_with_ties(m in int_matrix()) {
            let (a, cost) = hungarian(&m).unwrap();
            let (bp, bc) = brute(&m);
            prop_assert_eq!(cost, bc);
            prop_assert_eq!(a.pairs(), bp.as_slice());
            prop_assert_eq!(a.len(), m.rows().min(m.cols()));
        }

        #[test]
        fn row_and_column_shifts(m in int_matrix(), k in -3.0f64..3.0, which in 0usize..7, by_row in any::<bool>()) {
            let (a, cost) = hungarian(&m).unwrap();
            let (r, c) = (m.rows(), m.cols());
            let mut data = m.data.clone();
            let line = if by_row { which % r } else { which % c };
            for i in 0..r {
                for j in 0..c {
                    if (by_row && i == line) || (!by_row && j == line) {
                        data[i * c + j] += k;
                    }
                }
            }
            let shifted = CostMatrix::new(r, c, data).unwrap();
            let (_, cost2) = hungarian(&shifted).unwrap();
            // only lines that are always covered shift the total
            let covered = if by_row { r <= c } else { c <= r };
            if covered {
                prop_assert!((cost2 - cost - k).abs() < 1e-9);
                prop_assert!((a.cost(&shifted) - cost2).abs() < 1e-9);
            }
        }
    }
}
