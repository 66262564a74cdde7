//! Incremental belief propagation on binary bayesian networks.
//!
//! Every vertex `u` of the network carries a binary state, a transition
//! matrix `tau(u)` from its parent's state to its own, and evidence
//! `kappa(u)` weighting its own state. The root's transition is the
//! identity from an implicit phantom parent.
//!
//! Potentials are cached on the vertices of a TST of the network. An open
//! TST vertex `s` stores `Psi_i(s)`, the total weight of its fragment given
//! that the fragment root's parent is in state `i`. A closed vertex stores
//! `Omega_{i,i'}(s)`, the same but with the hole vertex `mu'(s)` pinned to
//! state `i'`. A leaf marginal is then read off by pushing outside messages
//! `omega` down a single root-to-leaf TST path.

use crate::error::{Error, Result};
use crate::tst::{Aggregator, BaseTree, Kind, Tst, TstVertex};

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// Lower clamp for evidence values and normalisers.
pub const FLOOR: f64 = 1e-300;

/// A binary tree carrying transition matrices and evidence.
pub trait Network: BaseTree {
    /// Transition into `u`; the identity at the root.
    fn tau(&self, u: usize) -> Mat2;
    fn kappa(&self, u: usize) -> [f64; 2];
}

/// Cached potential of one TST vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Open([f64; 2]),
    Closed(Mat2),
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Open([0.0; 2])
    }
}

impl Potential {
    fn psi(&self) -> [f64; 2] {
        match *self {
            Potential::Open(p) => p,
            Potential::Closed(_) => panic!("open potential expected"),
        }
    }

    fn omega(&self) -> Mat2 {
        match *self {
            Potential::Closed(m) => m,
            Potential::Open(_) => panic!("closed potential expected"),
        }
    }

    /// Largest relative difference between matching entries.
    pub fn rel_diff(&self, other: &Potential) -> f64 {
        let flat = |p: &Potential| match *p {
            Potential::Open(v) => vec![v[0], v[1]],
            Potential::Closed(m) => vec![m[0][0], m[0][1], m[1][0], m[1][1]],
        };
        let (a, b) = (flat(self), flat(other));
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter()
            .zip(&b)
            .map(|(x, y)| rel_err(*x, *y))
            .fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Recomputes potentials from a network's `tau` and `kappa`.
pub struct Propagator<'a, N>(pub &'a N);

impl<N: Network> Aggregator for Propagator<'_, N> {
    type Value = Potential;

    fn leaf(&self, vertex: &TstVertex) -> Potential {
        let u = vertex.mu();
        let tau = self.0.tau(u);
        let kappa = self.0.kappa(u);
        match vertex.kind {
            Kind::Open => Potential::Open([
                tau[0][0] * kappa[0] + tau[0][1] * kappa[1],
                tau[1][0] * kappa[0] + tau[1][1] * kappa[1],
            ]),
            Kind::Closed => Potential::Closed([
                [tau[0][0] * kappa[0], tau[0][1] * kappa[1]],
                [tau[1][0] * kappa[0], tau[1][1] * kappa[1]],
            ]),
        }
    }

    fn combine(&self, vertex: &TstVertex, cs: [(&TstVertex, &Potential); 3]) -> Potential {
        let centre = cs[1].1.omega();
        match vertex.kind {
            Kind::Open => {
                let (l, r) = (cs[0].1.psi(), cs[2].1.psi());
                let mut psi = [0.0; 2];
                for (i, out) in psi.iter_mut().enumerate() {
                    *out = (0..2).map(|k| centre[i][k] * l[k] * r[k]).sum();
                }
                Potential::Open(psi)
            }
            Kind::Closed => {
                let (closed, open) = closed_open(cs);
                let (m, p) = (closed.omega(), open.psi());
                let mut out = [[0.0; 2]; 2];
                for (i, row) in out.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = (0..2).map(|k| centre[i][k] * m[k][j] * p[k]).sum();
                    }
                }
                Potential::Closed(out)
            }
        }
    }
}

// (closed side child, open side child) of a closed internal vertex
fn closed_open<'a>(cs: [(&TstVertex, &'a Potential); 3]) -> (&'a Potential, &'a Potential) {
    if cs[0].0.kind == Kind::Closed {
        (cs[0].1, cs[2].1)
    } else {
        (cs[2].1, cs[0].1)
    }
}

/// `Lambda(u_hat)`: total weight of all state assignments with `u_hat` in
/// state 1, read from the cached potentials in `O(height)` time.
pub fn lambda<N: Network>(tst: &Tst<Potential>, net: &N, u_hat: usize) -> Result<f64> {
    if !net.contains(u_hat) || net.children(u_hat).is_some() {
        return Err(Error::Precondition(format!("vertex {u_hat} is not a leaf")));
    }
    let target = tst.leaf_of(u_hat)?;
    let mut path = Vec::with_capacity(tst.vertex(target).depth() + 1);
    let mut s = target;
    while let Some(p) = tst.vertex(s).parent() {
        path.push(s);
        s = p;
    }
    let mut omega = [1.0, 1.0];
    let mut omega_hole = [0.0, 0.0];
    let pot = |s: usize| tst.aggregate(s);
    for &c in path.iter().rev() {
        let v = tst.vertex(s);
        let [l, m, r] = v.children().expect("path vertex is internal");
        let centre = pot(m).omega();
        // sum_i omega_i Omega_{i,j}(centre)
        let through = |j: usize| omega[0] * centre[0][j] + omega[1] * centre[1][j];
        match v.kind {
            Kind::Open => {
                let (pl, pr) = (pot(l).psi(), pot(r).psi());
                if c == m {
                    omega_hole = [pl[0] * pr[0], pl[1] * pr[1]];
                } else {
                    let other = if c == l { pr } else { pl };
                    omega = [other[0] * through(0), other[1] * through(1)];
                }
            }
            Kind::Closed => {
                let (sc, so) = if tst.vertex(l).kind == Kind::Closed {
                    (l, r)
                } else {
                    (r, l)
                };
                let (mc, po) = (pot(sc).omega(), pot(so).psi());
                // sum_i' Omega_{j,i'}(closed side) omega'_i'
                let below = |j: usize| mc[j][0] * omega_hole[0] + mc[j][1] * omega_hole[1];
                if c == m {
                    omega_hole = [po[0] * below(0), po[1] * below(1)];
                } else if c == sc {
                    omega = [po[0] * through(0), po[1] * through(1)];
                } else {
                    omega = [through(0) * below(0), through(1) * below(1)];
                }
            }
        }
        s = c;
    }
    debug_assert_eq!(s, target);
    let tau = net.tau(u_hat);
    let k1 = net.kappa(u_hat)[1];
    Ok((omega[0] * tau[0][1] + omega[1] * tau[1][1]) * k1)
}

/// `Lambda(u_hat) / 4`.
pub fn marginal<N: Network>(tst: &Tst<Potential>, net: &N, u_hat: usize) -> Result<f64> {
    lambda(tst, net, u_hat).map(|x| x / 4.0)
}

/// Largest number of binary states enumerated by the exhaustive references.
pub const ENUMERATION_LIMIT: usize = 20;

/// `Lambda(u_hat)` by explicit enumeration of all `2^|J|` assignments.
/// Evidence at the root is included, matching the phantom-parent reading.
pub fn lambda_exhaustive<N: Network>(net: &N, u_hat: usize) -> Result<f64> {
    let verts = preorder(net, net.root(), None);
    if verts.len() > ENUMERATION_LIMIT {
        return Err(Error::Size(format!(
            "{} vertices exceed the enumeration limit",
            verts.len()
        )));
    }
    let pos = index_of(net, &verts);
    let target = *pos
        .get(u_hat)
        .and_then(|p| p.as_ref())
        .ok_or_else(|| Error::Lookup(format!("vertex {u_hat} is not in the network")))?;
    let mut total = 0.0;
    for f in 0..(1usize << verts.len()) {
        if f >> target & 1 == 0 {
            continue;
        }
        total += weight_of(net, &verts, &pos, f, None);
    }
    Ok(total)
}

/// A TST vertex's potential recomputed by summing over every assignment of
/// its fragment.
pub fn potential_by_definition<N: Network>(
    tst: &Tst<Potential>,
    net: &N,
    s: usize,
) -> Result<Potential> {
    let v = tst.vertex(s);
    let hole = v.mu_prime();
    let verts = preorder(net, v.mu(), hole);
    if verts.len() > ENUMERATION_LIMIT {
        return Err(Error::Size(format!(
            "fragment of {} vertices exceeds the enumeration limit",
            verts.len()
        )));
    }
    let pos = index_of(net, &verts);
    let mut acc = [[0.0; 2]; 2];
    for f in 0..(1usize << verts.len()) {
        for (i, row) in acc.iter_mut().enumerate() {
            let w = weight_of(net, &verts, &pos, f, Some(i));
            let slot = match hole {
                Some(h) => f >> pos[h].expect("hole is in its fragment") & 1,
                None => 0,
            };
            row[slot] += w;
        }
    }
    Ok(match v.kind {
        Kind::Open => Potential::Open([acc[0][0], acc[1][0]]),
        Kind::Closed => Potential::Closed(acc),
    })
}

/// Largest relative gap between any cached potential and its definition.
pub fn audit<N: Network>(tst: &Tst<Potential>, net: &N) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut stack = vec![tst.root()];
    while let Some(s) = stack.pop() {
        let want = potential_by_definition(tst, net, s)?;
        worst = worst.max(tst.aggregate(s).rel_diff(&want));
        if let Some(cs) = tst.vertex(s).children() {
            stack.extend(cs);
        }
    }
    Ok(worst)
}

fn preorder<N: Network>(net: &N, top: usize, hole: Option<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![top];
    while let Some(x) = stack.pop() {
        out.push(x);
        if Some(x) == hole {
            continue;
        }
        if let Some([l, r]) = net.children(x) {
            stack.push(r);
            stack.push(l);
        }
    }
    out
}

fn index_of<N: Network>(net: &N, verts: &[usize]) -> Vec<Option<usize>> {
    let mut pos = vec![None; net.id_bound()];
    for (k, &u) in verts.iter().enumerate() {
        pos[u] = Some(k);
    }
    pos
}

// weight of assignment `f` (bit k = state of verts[k]); the parent of the
// first vertex is pinned to `top_parent`, or to its own state when absent
fn weight_of<N: Network>(
    net: &N,
    verts: &[usize],
    pos: &[Option<usize>],
    f: usize,
    top_parent: Option<usize>,
) -> f64 {
    let mut w = 1.0;
    for (k, &u) in verts.iter().enumerate() {
        let own = f >> k & 1;
        let up = match net.parent(u).and_then(|p| pos[p]) {
            Some(pk) if k > 0 => f >> pk & 1,
            _ => top_parent.unwrap_or(own),
        };
        let tau = if k == 0 && top_parent.is_none() {
            IDENTITY
        } else {
            net.tau(u)
        };
        w *= tau[up][own] * net.kappa(u)[own];
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tst::BinaryTree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        tree: BinaryTree,
        tau: Vec<Mat2>,
        kappa: Vec<[f64; 2]>,
    }

    impl BaseTree for Toy {
        fn root(&self) -> usize {
            self.tree.root()
        }
        fn parent(&self, u: usize) -> Option<usize> {
            self.tree.parent(u)
        }
        fn children(&self, u: usize) -> Option<[usize; 2]> {
            self.tree.children(u)
        }
        fn id_bound(&self) -> usize {
            self.tree.id_bound()
        }
        fn contains(&self, u: usize) -> bool {
            self.tree.contains(u)
        }
    }

    impl Network for Toy {
        fn tau(&self, u: usize) -> Mat2 {
            if u == self.root() {
                IDENTITY
            } else {
                self.tau[u]
            }
        }
        fn kappa(&self, u: usize) -> [f64; 2] {
            self.kappa[u]
        }
    }

    fn flip(p: f64) -> Mat2 {
        [[1.0 - p, p], [p, 1.0 - p]]
    }

    fn random_toy(leaves: usize, rng: &mut impl Rng) -> Toy {
        let mut tree = BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap();
        while tree.len().div_ceil(2) < leaves {
            let u = rng.random_range(1..tree.len());
            tree.splice(u, rng.random_bool(0.5)).unwrap();
        }
        let n = tree.len();
        let tau = (0..n).map(|_| flip(rng.random_range(0.0..0.5))).collect();
        let kappa = (0..n)
            .map(|u| {
                if tree.children(u).is_none() {
                    [1.0, rng.random_range(0.1..10.0)]
                } else {
                    [1.0, 1.0]
                }
            })
            .collect();
        Toy { tree, tau, kappa }
    }

    #[test]
    fn closed_leaf_base_case() {
        let toy = Toy {
            tree: BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap(),
            tau: vec![IDENTITY, IDENTITY, flip(0.25)],
            kappa: vec![[1.0, 1.0]; 3],
        };
        let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
        // the closed leaf of the root sees the identity; check the flip leaf directly
        let leaf = tst.leaf_of(2).unwrap();
        let mut v = tst.vertex(leaf).clone();
        v.kind = Kind::Closed;
        assert_eq!(Propagator(&toy).leaf(&v), Potential::Closed(flip(0.25)));
    }

    #[test]
    fn open_leaf_selects_kappa_under_identity() {
        let toy = Toy {
            tree: BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap(),
            tau: vec![IDENTITY; 3],
            kappa: vec![[1.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
        };
        let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
        assert_eq!(
            *tst.aggregate(tst.leaf_of(1).unwrap()),
            Potential::Open([1.0, 0.0])
        );
    }

    #[test]
    fn unit_evidence_gives_unit_root() {
        let toy = Toy {
            tree: BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap(),
            tau: vec![IDENTITY, IDENTITY, flip(0.1)],
            kappa: vec![[1.0, 1.0]; 3],
        };
        let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
        assert_eq!(*tst.aggregate(tst.root()), Potential::Open([1.0, 1.0]));
        assert!((marginal(&tst, &toy, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn marginal_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let toy = random_toy(rng.random_range(2..=8), &mut rng);
            let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
            assert!(audit(&tst, &toy).unwrap() < 1e-10);
            for u in 0..toy.tree.len() {
                if toy.children(u).is_none() {
                    let fast = lambda(&tst, &toy, u).unwrap();
                    let slow = lambda_exhaustive(&toy, u).unwrap();
                    assert!(rel_err(fast, slow) < 1e-9, "{fast} vs {slow}");
                }
            }
        }
    }

    #[test]
    fn marginal_rejects_internal_vertex() {
        let toy = random_toy(3, &mut ChaCha8Rng::seed_from_u64(1));
        let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
        assert!(matches!(lambda(&tst, &toy, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_evidence_kills_marginal() {
        let mut toy = random_toy(6, &mut ChaCha8Rng::seed_from_u64(2));
        let leaf = (0..toy.tree.len())
            .find(|&u| toy.children(u).is_none())
            .unwrap();
        toy.kappa[leaf][1] = 0.0;
        let tst: Tst<Potential> = Tst::build(&toy, &Propagator(&toy)).unwrap();
        assert_eq!(lambda(&tst, &toy, leaf).unwrap(), 0.0);
    }
}
