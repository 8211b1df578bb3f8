//! Linear assignment on dense square cost matrices.
//!
//! Small problems use the shortest-augmenting-path Hungarian method, which is
//! exact. Large problems use Bertsekas' auction with ε-scaling, stopped once
//! the duality gap is below a relative tolerance.

/// A perfect matching `row -> assignment[row]` and its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

/// Square cost matrix in row-major order.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "cost matrix must be square");
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn total(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Exact minimum-cost perfect matching.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let n = c.size();
    if n == 0 {
        return Assignment {
            assignment: vec![],
            cost: 0.0,
        };
    }
    // Potentials u (rows) and v (columns); p[j] is the row matched to column j,
    // with index 0 reserved as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = c.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let cost = c.total(&assignment);
    Assignment { assignment, cost }
}

/// Auction matching whose cost is within `rel_gap` of optimal.
///
/// The gap is certified by the dual bound `Σ_i min_j (c_ij + p_j) - Σ_j p_j`.
pub fn auction(c: &CostMatrix, rel_gap: f64) -> Assignment {
    let n = c.size();
    if n == 0 {
        return Assignment {
            assignment: vec![],
            cost: 0.0,
        };
    }
    let (lo, hi) = c
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let spread = (hi - lo).max(f64::MIN_POSITIVE);
    let mut prices = vec![0.0; n];
    let mut eps = spread / 4.0;
    let floor = spread * 1e-12 / n as f64;
    loop {
        let owner = auction_round(c, &mut prices, eps);
        let mut assignment = vec![0usize; n];
        for (j, &i) in owner.iter().enumerate() {
            assignment[i] = j;
        }
        let cost = c.total(&assignment);
        let dual: f64 = (0..n)
            .map(|i| {
                c.row(i)
                    .iter()
                    .zip(&prices)
                    .map(|(cij, pj)| cij + pj)
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            - prices.iter().sum::<f64>();
        let gap = cost - dual;
        if gap <= rel_gap * cost.abs().max(f64::MIN_POSITIVE) || eps <= floor {
            return Assignment { assignment, cost };
        }
        eps = (eps / 5.0).max(floor);
    }
}

/// One ε-phase of the Gauss–Seidel auction; returns the owner of each column.
fn auction_round(c: &CostMatrix, prices: &mut [f64], eps: f64) -> Vec<usize> {
    let n = c.size();
    let mut owner = vec![usize::MAX; n];
    let mut assigned = vec![usize::MAX; n];
    let mut queue: Vec<usize> = (0..n).rev().collect();
    while let Some(i) = queue.pop() {
        let row = c.row(i);
        // benefit -c_ij - p_j; track the best and second best
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..n {
            let val = -row[j] - prices[j];
            if val > best {
                second = best;
                best = val;
                best_j = j;
            } else if val > second {
                second = val;
            }
        }
        let raise = if second.is_finite() { best - second } else { 0.0 };
        prices[best_j] += raise + eps;
        let prev = owner[best_j];
        owner[best_j] = i;
        assigned[i] = best_j;
        if prev != usize::MAX {
            assigned[prev] = usize::MAX;
            queue.push(prev);
        }
    }
    owner
}

/// Exact for `n <= 512`, auction with relative gap `1e-3` above.
pub fn solve(c: &CostMatrix) -> Assignment {
    if c.size() <= 512 {
        hungarian(c)
    } else {
        auction(c, 1e-3)
    }
}
