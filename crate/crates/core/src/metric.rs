//! Reduction from metric contexts to similar-trial indices.
//!
//! Each trial's context is matched against the contexts seen so far; the
//! trial that first produced the nearest stored context becomes `n(t)`.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// A distance on context vectors of equal length.
pub trait Metric {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Euclidean;

impl Metric for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Which search structure a [`MetricStore`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Linear scan over every stored point.
    ExactScan,
    /// Uniform buckets over `[0, 1]^d` searched in growing shells. Also
    /// exact, so its approximation factor is 1, but it only accepts
    /// contexts inside the unit cube and assumes the euclidean metric.
    Grid { cells: usize },
}

impl BackendKind {
    /// The `c` of the c-nearest-neighbour guarantee.
    pub fn approximation(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone)]
struct Grid {
    cells: usize,
    buckets: HashMap<Vec<usize>, Vec<usize>>,
}

impl Grid {
    fn cell(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .map(|&c| ((c * self.cells as f64) as usize).min(self.cells - 1))
            .collect()
    }
}

/// Stored contexts, each remembered with the first trial that produced it.
#[derive(Debug, Clone)]
pub struct MetricStore<M = Euclidean> {
    dim: usize,
    metric: M,
    points: Vec<(Vec<f64>, usize)>,
    exact: HashMap<Vec<u64>, usize>,
    grid: Option<Grid>,
}

fn key(x: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same context
    x.iter().map(|c| (c + 0.0).to_bits()).collect()
}

impl MetricStore<Euclidean> {
    pub fn new(dim: usize, backend: BackendKind) -> Result<Self> {
        Self::with_metric(dim, backend, Euclidean)
    }
}

impl<M: Metric> MetricStore<M> {
    pub fn with_metric(dim: usize, backend: BackendKind, metric: M) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("context dimension must be positive".into()));
        }
        let grid = match backend {
            BackendKind::ExactScan => None,
            BackendKind::Grid { cells: 0 } => {
                return Err(Error::Config("grid needs at least one cell".into()))
            }
            BackendKind::Grid { cells } => Some(Grid {
                cells,
                buckets: HashMap::new(),
            }),
        };
        Ok(Self {
            dim,
            metric,
            points: Vec::new(),
            exact: HashMap::new(),
            grid,
        })
    }

    pub fn backend(&self) -> BackendKind {
        match &self.grid {
            None => BackendKind::ExactScan,
            Some(g) => BackendKind::Grid { cells: g.cells },
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(
                "context has a non-finite component".into(),
            ));
        }
        if self.grid.is_some() && x.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Range(
                "grid backend needs contexts in [0, 1]^d".into(),
            ));
        }
        Ok(())
    }

    /// Stores `x` as seen on `trial`. A repeated context keeps the smaller
    /// trial index.
    pub fn insert(&mut self, x: &[f64], trial: usize) -> Result<()> {
        self.check(x)?;
        let k = key(x);
        if let Some(&i) = self.exact.get(&k) {
            let stored = &mut self.points[i].1;
            *stored = (*stored).min(trial);
            return Ok(());
        }
        let i = self.points.len();
        self.points.push((x.to_vec(), trial));
        self.exact.insert(k, i);
        if let Some(g) = self.grid.as_mut() {
            let c = g.cell(x);
            g.buckets.entry(c).or_default().push(i);
        }
        Ok(())
    }

    fn better(&self, d: f64, i: usize, best: Option<(f64, usize)>) -> bool {
        match best {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && self.points[i].1 < self.points[bi].1),
        }
    }

    /// The nearest stored context and its trial index. Among equidistant
    /// contexts the one with the smallest trial index wins.
    pub fn query(&self, x: &[f64]) -> Result<(&[f64], usize)> {
        self.check(x)?;
        if self.points.is_empty() {
            return Err(Error::Empty);
        }
        let best = match &self.grid {
            None => self.scan(x, 0..self.points.len(), None),
            Some(g) => self.shell_search(g, x),
        };
        let (_, i) = best.expect("store is nonempty");
        let (p, t) = &self.points[i];
        Ok((p, *t))
    }

    fn scan(
        &self,
        x: &[f64],
        ids: impl IntoIterator<Item = usize>,
        mut best: Option<(f64, usize)>,
    ) -> Option<(f64, usize)> {
        for i in ids {
            let d = self.metric.distance(x, &self.points[i].0);
            if self.better(d, i, best) {
                best = Some((d, i));
            }
        }
        best
    }

    fn shell_search(&self, g: &Grid, x: &[f64]) -> Option<(f64, usize)> {
        let width = 1.0 / g.cells as f64;
        let centre = g.cell(x);
        let mut best = None;
        for r in 0..g.cells {
            let mut cell = vec![0usize; self.dim];
            self.visit_shell(g, x, &centre, r, 0, false, &mut cell, &mut best);
            // everything outside the searched cube is at least r cells away
            if let Some((d, _)) = best {
                if d < r as f64 * width {
                    break;
                }
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn visit_shell(
        &self,
        g: &Grid,
        x: &[f64],
        centre: &[usize],
        r: usize,
        axis: usize,
        on_face: bool,
        cell: &mut Vec<usize>,
        best: &mut Option<(f64, usize)>,
    ) {
        if axis == self.dim {
            if on_face || r == 0 {
                if let Some(ids) = g.buckets.get(cell.as_slice()) {
                    *best = self.scan(x, ids.iter().copied(), *best);
                }
            }
            return;
        }
        let lo = centre[axis] as isize - r as isize;
        let hi = centre[axis] as isize + r as isize;
        for c in lo.max(0)..=hi.min(g.cells as isize - 1) {
            cell[axis] = c as usize;
            let face = on_face || c == lo || c == hi;
            self.visit_shell(g, x, centre, r, axis + 1, face, cell, best);
        }
    }
}

/// Rounds contexts in `[0, 1]^d` to the grid of multiples of `1 / q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridQuantiser {
    pub q: usize,
    pub d: usize,
}

impl GridQuantiser {
    pub fn new(q: usize, d: usize) -> Result<Self> {
        if q == 0 || d == 0 {
            return Err(Error::Config(format!(
                "grid needs q >= 1 and d >= 1, got q={q}, d={d}"
            )));
        }
        Ok(Self { q, d })
    }

    /// Integer grid coordinates of the nearest grid point. Halfway cases
    /// round down.
    pub fn coordinates(&self, z: &[f64]) -> Result<Vec<usize>> {
        if z.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: z.len(),
            });
        }
        let q = self.q as f64;
        z.iter()
            .map(|&c| {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Range(format!("component {c} is outside [0, 1]")));
                }
                let scaled = c * q;
                let k = scaled.floor();
                let k = if scaled - k > 0.5 { k + 1.0 } else { k };
                Ok((k as usize).min(self.q))
            })
            .collect()
    }

    pub fn quantise(&self, z: &[f64]) -> Result<Vec<f64>> {
        let q = self.q as f64;
        Ok(self
            .coordinates(z)?
            .into_iter()
            .map(|k| k as f64 / q)
            .collect())
    }
}

/// `q = ceil((T/K)^(1/(d+1)))` and `rho = q^((d-1)/2)`.
pub fn default_params(horizon: usize, actions: usize, d: usize) -> Result<(usize, f64)> {
    if actions < 2 || horizon < actions || d == 0 {
        return Err(Error::Config(format!(
            "need T >= K >= 2 and d >= 1, got T={horizon}, K={actions}, d={d}"
        )));
    }
    // smallest q with q^(d+1) * K >= T, computed exactly
    let reaches = |q: usize| {
        (q as u128)
            .checked_pow(d as u32 + 1)
            .and_then(|p| p.checked_mul(actions as u128))
            .is_none_or(|p| p >= horizon as u128)
    };
    let mut q = ((horizon as f64 / actions as f64)
        .powf(1.0 / (d as f64 + 1.0))
        .ceil() as usize)
        .max(1);
    while q > 1 && reaches(q - 1) {
        q -= 1;
    }
    while !reaches(q) {
        q += 1;
    }
    Ok((q, (q as f64).powf((d as f64 - 1.0) / 2.0)))
}

/// Distance from `x` to the nearest point of `set` labelled differently,
/// or infinity if there is none.
pub fn gamma_margin<F: Fn(&[f64]) -> usize>(x: &[f64], labels: F, set: &[Vec<f64>]) -> f64 {
    let own = labels(x);
    set.iter()
        .filter(|p| labels(p) != own)
        .map(|p| Euclidean.distance(x, p))
        .fold(f64::INFINITY, f64::min)
}

/// Feeds contexts in trial order and yields the similar earlier trial of
/// each one.
#[derive(Debug, Clone)]
pub struct Reduction<M = Euclidean> {
    store: MetricStore<M>,
    t: usize,
}

impl<M: Metric> Reduction<M> {
    pub fn new(store: MetricStore<M>) -> Self {
        Self { store, t: 0 }
    }

    /// Registers the next trial's context and returns `n(t)`, which is
    /// `None` on trial 1.
    pub fn next(&mut self, x: &[f64]) -> Result<Option<usize>> {
        let t = self.t + 1;
        let n = if t == 1 {
            None
        } else {
            Some(self.store.query(x)?.1)
        };
        self.store.insert(x, t)?;
        self.t = t;
        Ok(n)
    }

    pub fn trial(&self) -> usize {
        self.t
    }

    pub fn store(&self) -> &MetricStore<M> {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[(Vec<f64>, usize)], x: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (p, t) in points {
            let d = Euclidean.distance(x, p);
            if d < best.0 || (d == best.0 && *t < best.1) {
                best = (d, *t);
            }
        }
        best
    }

    #[test]
    fn insert_and_dedupe() {
        let mut s = MetricStore::new(1, BackendKind::ExactScan).unwrap();
        s.insert(&[0.5], 1).unwrap();
        assert_eq!(s.len(), 1);
        s.insert(&[0.5], 4).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.query(&[0.5]).unwrap().1, 1);
    }

    #[test]
    fn query_basics() {
        let mut s = MetricStore::new(1, BackendKind::ExactScan).unwrap();
        assert!(matches!(s.query(&[0.0]), Err(Error::Empty)));
        s.insert(&[0.0], 1).unwrap();
        s.insert(&[1.0], 2).unwrap();
        assert_eq!(s.query(&[0.4]).unwrap(), (&[0.0][..], 1));
        assert_eq!(s.query(&[1.0]).unwrap().1, 2);
        assert_eq!(s.query(&[0.5]).unwrap().1, 1);
        assert!(matches!(
            s.insert(&[0.0, 1.0], 3),
            Err(Error::Dimension {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn grid_rejects_outside_cube() {
        let mut s = MetricStore::new(2, BackendKind::Grid { cells: 4 }).unwrap();
        assert!(matches!(s.insert(&[1.5, 0.0], 1), Err(Error::Range(_))));
    }

    #[test]
    fn backends_agree_with_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=3 {
            let mut exact = MetricStore::new(d, BackendKind::ExactScan).unwrap();
            let mut grid = MetricStore::new(d, BackendKind::Grid { cells: 8 }).unwrap();
            let mut points = Vec::new();
            for t in 1..=1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                if t > 1 {
                    let (bd, bt) = brute(&points, &x);
                    let (p, et) = exact.query(&x).unwrap();
                    assert_eq!((Euclidean.distance(&x, p), et), (bd, bt));
                    let (p, gt) = grid.query(&x).unwrap();
                    assert_eq!((Euclidean.distance(&x, p), gt), (bd, bt));
                }
                exact.insert(&x, t).unwrap();
                grid.insert(&x, t).unwrap();
                points.push((x, t));
            }
        }
    }

    #[test]
    fn grid_ties_pick_smallest_trial() {
        let mut s = MetricStore::new(1, BackendKind::Grid { cells: 10 }).unwrap();
        s.insert(&[0.75], 1).unwrap();
        s.insert(&[0.25], 2).unwrap();
        s.insert(&[0.0], 3).unwrap();
        assert_eq!(s.query(&[0.5]).unwrap().1, 1);
        assert_eq!(s.query(&[0.125]).unwrap().1, 2);
    }

    #[test]
    fn quantise_examples() {
        let g = GridQuantiser::new(4, 1).unwrap();
        assert_eq!(g.quantise(&[0.3]).unwrap(), vec![0.25]);
        assert_eq!(g.quantise(&[0.75]).unwrap(), vec![0.75]);
        assert_eq!(
            GridQuantiser::new(2, 1).unwrap().quantise(&[0.25]).unwrap(),
            vec![0.0]
        );
        assert!(matches!(g.quantise(&[1.2]), Err(Error::Range(_))));
    }

    #[test]
    fn quantise_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let g = GridQuantiser::new(rng.random_range(1..50), 3).unwrap();
            let z: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let once = g.quantise(&z).unwrap();
            assert_eq!(g.quantise(&once).unwrap(), once);
        }
    }

    #[test]
    fn params_examples() {
        assert_eq!(default_params(1024, 2, 1).unwrap(), (23, 1.0));
        assert_eq!(default_params(4, 4, 3).unwrap().0, 1);
        let (q, rho) = default_params(100_000, 4, 2).unwrap();
        assert_eq!(q, 30);
        assert!((rho - 30f64.sqrt()).abs() < 1e-12);
        assert_eq!(default_params(8, 2, 1).unwrap().0, 2);
        assert!(default_params(1, 2, 1).is_err());
    }

    #[test]
    fn margin_examples() {
        let set = vec![vec![0.0], vec![1.0]];
        assert_eq!(gamma_margin(&[0.0], |_| 0, &set), f64::INFINITY);
        assert_eq!(gamma_margin(&[0.0], |p| usize::from(p[0] > 0.5), &set), 1.0);
    }

    #[test]
    fn reduction_points_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r = Reduction::new(MetricStore::new(2, BackendKind::ExactScan).unwrap());
        assert_eq!(r.next(&[0.1, 0.1]).unwrap(), None);
        for t in 2..500 {
            let x = [rng.random(), rng.random()];
            let n = r.next(&x).unwrap().unwrap();
            assert!((1..t).contains(&n));
        }
    }
}
