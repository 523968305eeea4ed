//! Optimal-transport kernels: the Stage B weight update and 2-Wasserstein
//! distances between discrete distributions.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::Vector2;

use crate::density::format_float;
use crate::scalar::{compensated_sum, lit, mass_tol, to_f64, Real};
use crate::{Error, Result};

/// Default per-side atom limit for [`wasserstein2_exact`].
pub const DEFAULT_EXACT_LIMIT: usize = 500;

/// Mass moved from sample-points into one agent-point.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T: Real> {
    /// `(sample index, γ*)` pairs with `γ* > 0`, in fill order.
    pub entries: Vec<(usize, T)>,
    /// Agent-point receiving the mass.
    pub target: Vector2<T>,
    /// Demanded mass.
    pub alpha: T,
}

impl<T: Real> TransportPlan<T> {
    pub fn empty(target: Vector2<T>) -> Self {
        TransportPlan {
            entries: Vec::new(),
            target,
            alpha: T::zero(),
        }
    }

    /// Total transported mass.
    pub fn mass(&self) -> T {
        compensated_sum(self.entries.iter().map(|e| e.1))
    }

    /// `Σ γ*_j ‖y − q_j‖²`.
    pub fn cost(&self, positions: &[Vector2<T>]) -> T {
        compensated_sum(
            self.entries
                .iter()
                .map(|&(j, g)| g * (positions[j] - self.target).norm_squared()),
        )
    }

    pub fn gamma(&self, j: usize) -> T {
        self.entries
            .iter()
            .filter(|e| e.0 == j)
            .fold(T::zero(), |acc, e| acc + e.1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fills `alpha` from the nearest sample-points (squared distance, ties by
/// index), which is optimal for a single sink.
pub fn weight_update_plan<T: Real>(
    y_next: &Vector2<T>,
    beta: &[T],
    positions: &[Vector2<T>],
    alpha: T,
) -> Result<TransportPlan<T>> {
    if beta.len() != positions.len() {
        return Err(Error::Dimension {
            what: "remaining weights",
            expected: positions.len(),
            got: beta.len(),
        });
    }
    if alpha < T::zero() {
        return Err(Error::Contract(format!("demanded mass must be nonnegative, got {alpha}")));
    }
    let available = compensated_sum(beta.iter().copied());
    if alpha > available + mass_tol() {
        return Err(Error::InsufficientMass {
            demanded: to_f64(alpha),
            available: to_f64(available),
        });
    }
    let mut ranked: Vec<(T, usize)> = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b > T::zero())
        .map(|(j, _)| ((positions[j] - y_next).norm_squared(), j))
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

    let mut entries = Vec::new();
    let mut left = alpha;
    for &(_, j) in &ranked {
        if left <= T::zero() {
            break;
        }
        let take = beta[j].min(left);
        entries.push((j, take));
        left -= take;
    }
    Ok(TransportPlan {
        entries,
        target: *y_next,
        alpha,
    })
}

/// `β_j − γ*_j`, with results in `[−tol, 0)` clamped to zero.
pub fn apply_transport<T: Real>(beta: &[T], plan: &TransportPlan<T>) -> Result<Vec<T>> {
    let mut out = beta.to_vec();
    apply_transport_in_place(&mut out, plan)?;
    Ok(out)
}

pub fn apply_transport_in_place<T: Real>(beta: &mut [T], plan: &TransportPlan<T>) -> Result<()> {
    let tol = mass_tol::<T>();
    for &(j, g) in &plan.entries {
        if j >= beta.len() {
            return Err(Error::Contract(format!("plan references sample {j} of {}", beta.len())));
        }
        if g < T::zero() || g > beta[j] + tol {
            return Err(Error::Contract(format!(
                "plan moves {g} from sample {j} holding {}",
                beta[j]
            )));
        }
    }
    for &(j, g) in &plan.entries {
        let v = beta[j] - g;
        beta[j] = if v < T::zero() { T::zero() } else { v };
    }
    Ok(())
}

/// Weighted point set with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<T: Real> {
    atoms: Vec<Vector2<T>>,
    weights: Vec<T>,
}

impl<T: Real> DiscreteDistribution<T> {
    pub fn new(atoms: Vec<Vector2<T>>, weights: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::NoData("distribution has no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::Dimension {
                what: "distribution weights",
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > T::zero()) || !w.is_finite()) {
            return Err(Error::Validation(format!("atom {i} has non-positive weight {w}")));
        }
        if let Some(i) = atoms.iter().position(|a| !a.x.is_finite() || !a.y.is_finite()) {
            return Err(Error::Validation(format!("atom {i} has a non-finite position")));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - T::one()).abs() > mass_tol() {
            return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
        }
        Ok(DiscreteDistribution { atoms, weights })
    }

    /// Equal weights `1/len`.
    pub fn uniform(atoms: Vec<Vector2<T>>) -> Result<Self> {
        let w = T::one() / lit::<T>(atoms.len().max(1) as f64);
        let weights = vec![w; atoms.len()];
        Self::new(atoms, weights)
    }

    /// Rescales arbitrary positive masses to sum to one; zero masses are dropped.
    pub fn normalized(atoms: Vec<Vector2<T>>, masses: Vec<T>) -> Result<Self> {
        if atoms.len() != masses.len() {
            return Err(Error::Dimension {
                what: "distribution weights",
                expected: atoms.len(),
                got: masses.len(),
            });
        }
        let (atoms, masses): (Vec<_>, Vec<_>) = atoms.into_iter().zip(masses).filter(|(_, m)| *m > T::zero()).unzip();
        let total = compensated_sum(masses.iter().copied());
        if !(total > T::zero()) {
            return Err(Error::NoData("distribution has no positive mass".into()));
        }
        let weights = masses.into_iter().map(|m| m / total).collect();
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[Vector2<T>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Writes `x,y,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "weight"])?;
        for (a, m) in self.atoms.iter().zip(&self.weights) {
            w.write_record([
                format_float(to_f64(a.x)),
                format_float(to_f64(a.y)),
                format_float(to_f64(*m)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "weight"] {
            return Err(Error::Validation(format!(
                "expected header x,y,weight, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<T> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .map(lit::<T>)
                    .ok_or_else(|| Error::Validation(format!("row {}: column {} is not a number", row + 2, i + 1)))
            };
            atoms.push(Vector2::new(field(0)?, field(1)?));
            weights.push(field(2)?);
        }
        Self::new(atoms, weights)
    }
}

impl DiscreteDistribution<f64> {
    pub fn from_cloud(cloud: &crate::density::SamplePointCloud) -> Result<Self> {
        Self::new(cloud.positions.clone(), cloud.weights.clone())
    }
}

/// Optimal coupling found by the exact solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTransport {
    /// Minimal `Σ π_ij ‖a_i − b_j‖²`.
    pub cost: f64,
    /// Nonzero `(i, j, π_ij)` entries.
    pub flows: Vec<(usize, usize, f64)>,
    pub pivots: usize,
}

impl ExactTransport {
    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }
}

/// Exact 2-Wasserstein distance with the default size limit.
pub fn wasserstein2_exact<T: Real>(a: &DiscreteDistribution<T>, b: &DiscreteDistribution<T>) -> Result<T> {
    wasserstein2_exact_with_limit(a, b, DEFAULT_EXACT_LIMIT)
}

pub fn wasserstein2_exact_with_limit<T: Real>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    limit: usize,
) -> Result<T> {
    Ok(lit(solve_exact(a, b, limit)?.distance()))
}

/// Solves the balanced transportation problem between `a` and `b` with a
/// primal network simplex on the bipartite graph.
pub fn solve_exact<T: Real>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    limit: usize,
) -> Result<ExactTransport> {
    if a.len() > limit || b.len() > limit {
        return Err(Error::SizeLimit {
            rows: a.len(),
            cols: b.len(),
            limit,
        });
    }
    let to64 = |d: &DiscreteDistribution<T>| -> (Vec<[f64; 2]>, Vec<f64>) {
        (
            d.atoms.iter().map(|p| [to_f64(p.x), to_f64(p.y)]).collect(),
            d.weights.iter().map(|&w| to_f64(w)).collect(),
        )
    };
    let (pa, wa) = to64(a);
    let (pb, wb) = to64(b);
    let max_pivots = 200 * (pa.len() + pb.len()) + 100_000;
    transport_simplex(&pa, &wa, &pb, &wb, max_pivots).map(|(t, _)| t)
}

/// Sides larger than this are first solved on a grid-clustered copy whose
/// potentials order the starting allocation.
const COARSE_ATOMS: usize = 2000;

/// Merges atoms that share a cell of a roughly `target`-cell grid. Returns
/// the cluster centroids, their masses and each atom's cluster.
fn cluster(p: &[[f64; 2]], w: &[f64], target: usize) -> (Vec<[f64; 2]>, Vec<f64>, Vec<usize>) {
    let (lo, hi) = p.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), q| {
        ([lo[0].min(q[0]), lo[1].min(q[1])], [hi[0].max(q[0]), hi[1].max(q[1])])
    });
    let side = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / (target as f64).sqrt()).max(1e-300);
    let nx = (((hi[0] - lo[0]) / side) as usize + 1).max(1);
    let mut slot: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut centers: Vec<[f64; 2]> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    let mut label = Vec::with_capacity(p.len());
    for (q, &wq) in p.iter().zip(w) {
        let cx = ((q[0] - lo[0]) / side) as usize;
        let cy = ((q[1] - lo[1]) / side) as usize;
        let k = *slot.entry(cy * nx + cx).or_insert_with(|| {
            centers.push([0.0; 2]);
            mass.push(0.0);
            centers.len() - 1
        });
        centers[k][0] += wq * q[0];
        centers[k][1] += wq * q[1];
        mass[k] += wq;
        label.push(k);
    }
    for (c, &mk) in centers.iter_mut().zip(&mass) {
        c[0] /= mk;
        c[1] /= mk;
    }
    (centers, mass, label)
}

/// Network simplex on the full problem, warm-ordered by the potentials of a
/// clustered copy when either side is large.
fn transport_simplex(
    pa: &[[f64; 2]],
    wa: &[f64],
    pb: &[[f64; 2]],
    wb: &[f64],
    max_pivots: usize,
) -> Result<(ExactTransport, Vec<f64>)> {
    let (m, n) = (pa.len(), pb.len());
    let mut shift = None;
    if m > COARSE_ATOMS || n > COARSE_ATOMS {
        let coarse = |p: &[[f64; 2]], w: &[f64]| {
            if p.len() > COARSE_ATOMS {
                cluster(p, w, p.len() / 4)
            } else {
                (p.to_vec(), w.to_vec(), (0..p.len()).collect())
            }
        };
        let (ca, cwa, la) = coarse(pa, wa);
        let (cb, cwb, lb) = coarse(pb, wb);
        if ca.len() < m || cb.len() < n {
            let (_, pot) = transport_simplex(&ca, &cwa, &cb, &cwb, max_pivots)?;
            let fu: Vec<f64> = la.iter().map(|&k| pot[k]).collect();
            let fv: Vec<f64> = lb.iter().map(|&k| pot[ca.len() + k]).collect();
            shift = Some((fu, fv));
        }
    }
    NetworkSimplex::new(pa, wa, pb, wb, shift.as_ref()).solve(max_pivots)
}

/// Bipartite transportation simplex. Sources are nodes `0..m`, sinks
/// `m..m+n`; the basis is a spanning tree with `m + n − 1` cells.
struct NetworkSimplex<'a> {
    pa: &'a [[f64; 2]],
    pb: &'a [[f64; 2]],
    m: usize,
    n: usize,
    cell: Vec<(usize, usize)>,
    flow: Vec<f64>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_slot: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    queue: VecDeque<usize>,
    up_a: Vec<usize>,
    up_b: Vec<usize>,
    via: Vec<usize>,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    tol: f64,
}

impl<'a> NetworkSimplex<'a> {
    fn new(
        pa: &'a [[f64; 2]],
        wa: &[f64],
        pb: &'a [[f64; 2]],
        wb: &[f64],
        shift: Option<&(Vec<f64>, Vec<f64>)>,
    ) -> Self {
        let m = pa.len();
        let n = pb.len();
        // Least-cost-cell start: allocate in ascending cost, closing one
        // exhausted line per allocation so the cells form a spanning tree.
        let sq = |i: usize, j: usize| {
            let dx = pa[i][0] - pb[j][0];
            let dy = pa[i][1] - pb[j][1];
            dx * dx + dy * dy
        };
        let key = |c: usize| {
            let (i, j) = (c / n, c % n);
            match shift {
                Some((u, v)) => sq(i, j) - u[i] - v[j],
                None => sq(i, j),
            }
        };
        let mut order: Vec<(f64, usize)> = (0..m * n).map(|c| (key(c), c)).collect();
        order.sort_unstable_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1)));
        let mut supply = wa.to_vec();
        let mut demand = wb.to_vec();
        let mut row_open = vec![true; m];
        let mut col_open = vec![true; n];
        let (mut rows_left, mut cols_left) = (m, n);
        let mut cell = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        for &(_, c) in &order {
            let (i, j) = (c / n, c % n);
            if !row_open[i] || !col_open[j] {
                continue;
            }
            let x = supply[i].min(demand[j]).max(0.0);
            cell.push((i, j));
            flow.push(x);
            let source_done = supply[i] <= demand[j];
            supply[i] -= x;
            demand[j] -= x;
            if rows_left == 1 && cols_left == 1 {
                break;
            }
            if (source_done && rows_left > 1) || cols_left == 1 {
                row_open[i] = false;
                rows_left -= 1;
            } else {
                col_open[j] = false;
                cols_left -= 1;
            }
        }
        debug_assert_eq!(cell.len(), m + n - 1);
        let mut adj = vec![Vec::new(); m + n];
        for (s, &(ci, cj)) in cell.iter().enumerate() {
            adj[ci].push(s);
            adj[m + cj].push(s);
        }
        let bbox = |p: &[[f64; 2]]| {
            p.iter().fold([f64::MAX, f64::MIN, f64::MAX, f64::MIN], |b, q| {
                [b[0].min(q[0]), b[1].max(q[0]), b[2].min(q[1]), b[3].max(q[1])]
            })
        };
        let (ba, bb) = (bbox(pa), bbox(pb));
        let dx = ba[1].max(bb[1]) - ba[0].min(bb[0]);
        let dy = ba[3].max(bb[3]) - ba[2].min(bb[2]);
        let max_cost = dx * dx + dy * dy;
        NetworkSimplex {
            pa,
            pb,
            m,
            n,
            cell,
            flow,
            adj,
            parent: vec![usize::MAX; m + n],
            parent_slot: vec![usize::MAX; m + n],
            depth: vec![0; m + n],
            pot: vec![0.0; m + n],
            queue: VecDeque::with_capacity(m + n),
            up_a: Vec::new(),
            up_b: Vec::new(),
            via: vec![usize::MAX; m + n],
            order_x: Vec::with_capacity(m + n),
            order_y: Vec::with_capacity(m + n),
            tol: 1e-12 * max_cost.max(1e-300),
        }
    }

    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        let dx = self.pa[i][0] - self.pb[j][0];
        let dy = self.pa[i][1] - self.pb[j][1];
        dx * dx + dy * dy
    }

    /// Roots the basis tree at node 0 and recomputes potentials so that
    /// `u_i + v_j = c_ij` on every basic cell.
    fn rebuild(&mut self) {
        let m = self.m;
        self.parent.iter_mut().for_each(|p| *p = usize::MAX);
        self.parent[0] = 0;
        self.parent_slot[0] = usize::MAX;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        self.queue.clear();
        self.queue.push_back(0);
        while let Some(node) = self.queue.pop_front() {
            for k in 0..self.adj[node].len() {
                let s = self.adj[node][k];
                let (ci, cj) = self.cell[s];
                let other = if node == ci { m + cj } else { ci };
                if self.parent[other] != usize::MAX {
                    continue;
                }
                self.parent[other] = node;
                self.parent_slot[other] = s;
                self.depth[other] = self.depth[node] + 1;
                self.pot[other] = self.cost(ci, cj) - self.pot[node];
                self.queue.push_back(other);
            }
        }
        debug_assert!(self.parent.iter().all(|&p| p != usize::MAX), "basis is not spanning");
    }

    /// Most negative reduced cost in row `i`, scanning sinks as flat arrays.
    #[inline]
    fn row_min(&self, i: usize, bx: &[f64], by: &[f64]) -> (f64, usize) {
        let [xi, yi] = self.pa[i];
        let ui = self.pot[i];
        let v = &self.pot[self.m..];
        let rc = |j: usize| {
            let dx = xi - bx[j];
            let dy = yi - by[j];
            dx * dx + dy * dy - ui - v[j]
        };
        let low = (0..bx.len()).map(rc).fold(f64::INFINITY, f64::min);
        if low >= -self.tol {
            return (low, usize::MAX);
        }
        let j = (0..bx.len()).find(|&j| rc(j) == low).unwrap_or(usize::MAX);
        (low, j)
    }

    fn solve(mut self, max_pivots: usize) -> Result<(ExactTransport, Vec<f64>)> {
        let (m, n) = (self.m, self.n);
        let bx: Vec<f64> = self.pb.iter().map(|p| p[0]).collect();
        let by: Vec<f64> = self.pb.iter().map(|p| p[1]).collect();
        // Block pricing over whole source rows, about sqrt(mn) cells a block.
        let block = ((((m * n) as f64).sqrt().ceil() as usize).max(64)).div_ceil(n).max(1);
        let mut row = 0usize;
        let mut pivots = 0usize;
        self.rebuild();
        loop {
            let mut best = (-self.tol, usize::MAX, usize::MAX);
            let mut scanned = 0usize;
            while scanned < m {
                let end = (scanned + block).min(m);
                for _ in scanned..end {
                    let (rc, j) = self.row_min(row, &bx, &by);
                    if j != usize::MAX && rc < best.0 {
                        best = (rc, row, j);
                    }
                    row += 1;
                    if row == m {
                        row = 0;
                    }
                }
                scanned = end;
                if best.1 != usize::MAX {
                    break;
                }
            }
            if best.1 == usize::MAX {
                break;
            }
            if pivots >= max_pivots {
                return Err(Error::PivotLimit(max_pivots));
            }
            self.pivot(best.1, best.2);
            pivots += 1;
        }
        let mut cost = 0.0;
        let mut comp = 0.0;
        let mut flows = Vec::new();
        for (s, &(i, j)) in self.cell.iter().enumerate() {
            let f = self.flow[s];
            if f > 0.0 {
                let term = f * self.cost(i, j);
                let t = cost + term;
                comp += if cost >= term { (cost - t) + term } else { (term - t) + cost };
                cost = t;
                flows.push((i, j, f));
            }
        }
        flows.sort_by_key(|f| (f.0, f.1));
        Ok((
            ExactTransport {
                cost: cost + comp,
                flows,
                pivots,
            },
            self.pot,
        ))
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let m = self.m;
        // Walk both endpoints up to their common ancestor.
        self.up_a.clear();
        self.up_b.clear();
        let (mut a, mut b) = (i, m + j);
        while self.depth[a] > self.depth[b] {
            self.up_a.push(self.parent_slot[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            self.up_b.push(self.parent_slot[b]);
            b = self.parent[b];
        }
        while a != b {
            self.up_a.push(self.parent_slot[a]);
            a = self.parent[a];
            self.up_b.push(self.parent_slot[b]);
            b = self.parent[b];
        }
        // Cycle from the sink back to the source alternates −, +, −, …
        let nb = self.up_b.len();
        let len = nb + self.up_a.len();
        let at = |k: usize, up_a: &[usize], up_b: &[usize]| {
            if k < nb {
                up_b[k]
            } else {
                up_a[up_a.len() - 1 - (k - nb)]
            }
        };
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        let mut leave_k = 0;
        for k in (0..len).step_by(2) {
            let s = at(k, &self.up_a, &self.up_b);
            if self.flow[s] < theta {
                theta = self.flow[s];
                leave = s;
                leave_k = k;
            }
        }
        for k in 0..len {
            let s = at(k, &self.up_a, &self.up_b);
            if k % 2 == 0 {
                self.flow[s] = (self.flow[s] - theta).max(0.0);
            } else {
                self.flow[s] += theta;
            }
        }
        let (li, lj) = self.cell[leave];
        let cut_top = if self.depth[li] > self.depth[m + lj] { li } else { m + lj };
        let cut_has_source = leave_k >= nb;
        self.adj[li].retain(|&s| s != leave);
        self.adj[m + lj].retain(|&s| s != leave);
        // Explore both components in lockstep; the smaller one is re-hung.
        let small_is_source = self.smaller_side(i, m + j);
        self.cell[leave] = (i, j);
        self.flow[leave] = theta;
        self.adj[i].push(leave);
        self.adj[m + j].push(leave);
        let (start, anchor) = if small_is_source { (i, m + j) } else { (m + j, i) };
        if small_is_source != cut_has_source {
            self.parent[cut_top] = cut_top;
            self.parent_slot[cut_top] = usize::MAX;
        }
        self.rehang(start, anchor, leave, small_is_source);
    }

    /// Returns whether the component holding `x` is no larger than the one
    /// holding `y`, leaving its breadth-first order in the scratch list.
    fn smaller_side(&mut self, x: usize, y: usize) -> bool {
        let m = self.m;
        self.order_x.clear();
        self.order_y.clear();
        self.order_x.push(x);
        self.order_y.push(y);
        self.via[x] = usize::MAX;
        self.via[y] = usize::MAX;
        let (mut hx, mut hy) = (0usize, 0usize);
        loop {
            if hx == self.order_x.len() {
                return true;
            }
            if hy == self.order_y.len() {
                return false;
            }
            for side in 0..2 {
                let (order, head) = if side == 0 {
                    (&mut self.order_x, &mut hx)
                } else {
                    (&mut self.order_y, &mut hy)
                };
                let node = order[*head];
                *head += 1;
                for &s in &self.adj[node] {
                    if s == self.via[node] {
                        continue;
                    }
                    let (ci, cj) = self.cell[s];
                    let other = if node == ci { m + cj } else { ci };
                    self.via[other] = s;
                    order.push(other);
                }
            }
        }
    }

    fn rehang(&mut self, start: usize, anchor: usize, slot: usize, from_x: bool) {
        let m = self.m;
        let (ci, cj) = self.cell[slot];
        self.parent[start] = anchor;
        self.parent_slot[start] = slot;
        self.depth[start] = self.depth[anchor] + 1;
        self.pot[start] = self.cost(ci, cj) - self.pot[anchor];
        let order = std::mem::take(if from_x { &mut self.order_x } else { &mut self.order_y });
        for &node in &order[1..] {
            let s = self.via[node];
            let (ci, cj) = self.cell[s];
            let up = if node == ci { m + cj } else { ci };
            self.parent[node] = up;
            self.parent_slot[node] = s;
            self.depth[node] = self.depth[up] + 1;
            self.pot[node] = self.cost(ci, cj) - self.pot[up];
        }
        if from_x {
            self.order_x = order;
        } else {
            self.order_y = order;
        }
    }
}

/// Outcome of the entropic solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornResult<T: Real> {
    /// Transport cost `Σ P_ij C_ij` of the regularized plan.
    pub cost: T,
    pub iterations: usize,
    /// `‖P 1 − a‖₁` after the last column update.
    pub marginal_violation: T,
    pub converged: bool,
}

impl<T: Real> SinkhornResult<T> {
    pub fn distance(&self) -> T {
        self.cost.max(T::zero()).sqrt()
    }
}

/// Log-domain Sinkhorn iterations on the squared-distance cost.
pub fn wasserstein2_sinkhorn<T: Real>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    epsilon: T,
    max_iters: usize,
    tol: T,
) -> Result<SinkhornResult<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = a.len();
    let n = b.len();
    let eps = to_f64(epsilon);
    let tol = to_f64(tol);
    let cost: Vec<f64> = a
        .atoms
        .iter()
        .flat_map(|p| {
            b.atoms
                .iter()
                .map(move |q| to_f64((p - q).norm_squared()))
        })
        .collect();
    let log_a: Vec<f64> = a.weights.iter().map(|&w| to_f64(w).ln()).collect();
    let log_b: Vec<f64> = b.weights.iter().map(|&w| to_f64(w).ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; m.max(n)];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                scratch[j] = (g[j] - row[j]) / eps;
            }
            f[i] = eps * (log_a[i] - log_sum_exp(&scratch[..n]));
        }
        for j in 0..n {
            for i in 0..m {
                scratch[i] = (f[i] - cost[i * n + j]) / eps;
            }
            g[j] = eps * (log_b[j] - log_sum_exp(&scratch[..m]));
        }
        // Columns are exact after the g update; measure the row marginals.
        violation = 0.0;
        for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += ((f[i] + g[j] - row[j]) / eps).exp();
            }
            violation += (s - to_f64(a.weights[i])).abs();
        }
        if violation < tol {
            converged = true;
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let c = cost[i * n + j];
            total += ((f[i] + g[j] - c) / eps).exp() * c;
        }
    }
    if !converged {
        log::warn!("sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}");
    }
    Ok(SinkhornResult {
        cost: lit(total),
        iterations,
        marginal_violation: lit(violation),
        converged,
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
