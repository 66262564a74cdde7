//! Contractions of the trajectory tree and their bayesian-network weights.
//!
//! A contraction keeps a subset of the trajectory tree's vertices, always
//! including the root, such that left/right subtree containment and leaf-ness
//! are preserved. Each non-root vertex `u` carries the flip matrix `tau(u)`
//! with off-diagonal `phi(delta(u))`, where `delta(u)` is the depth gap
//! between `u` and its contraction parent, and evidence `kappa(u)`.
//!
//! Public methods address vertices by their trajectory-tree id.

use crate::belief::{self, Mat2, Network, Potential, Propagator, IDENTITY};
use crate::error::{structure, Error, Result};
use crate::trajectory::TrajectoryTree;
use crate::tst::{BaseTree, Side, Slot, Tst, NIL};

/// Flip probabilities of a lazy random walk with switch rate `1/T`.
///
/// Values are appended on demand by [`PhiTable::extend_to`], so the cost is
/// constant per trial when extended once per trial.
#[derive(Debug, Clone)]
pub struct PhiTable {
    horizon: usize,
    values: Vec<f64>,
}

impl PhiTable {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            horizon,
            values: vec![0.0],
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Computes values up to index `j`.
    pub fn extend_to(&mut self, j: usize) -> Result<()> {
        if j > self.horizon {
            return Err(Error::Range(format!(
                "phi index {j} exceeds horizon {}",
                self.horizon
            )));
        }
        let step = 1.0 / self.horizon as f64;
        while self.values.len() <= j {
            let p = *self.values.last().expect("phi_0 present");
            self.values.push((1.0 - step) * p + step * (1.0 - p));
        }
        Ok(())
    }

    /// `phi_j`, extending the table if needed.
    pub fn phi(&mut self, j: usize) -> Result<f64> {
        self.extend_to(j)?;
        Ok(self.values[j])
    }

    /// `phi_j` if already computed.
    pub fn get(&self, j: usize) -> Option<f64> {
        self.values.get(j).copied()
    }

    /// `(1 - (1 - 2/T)^j) / 2`.
    pub fn closed_form(horizon: usize, j: usize) -> f64 {
        (1.0 - (1.0 - 2.0 / horizon as f64).powi(j as i32)) / 2.0
    }

    /// The flip matrix with off-diagonal `p`.
    pub fn flip(p: f64) -> Mat2 {
        [[1.0 - p, p], [p, 1.0 - p]]
    }
}

#[derive(Debug, Clone)]
struct CVertex {
    parent: u32,
    children: [u32; 2],
    z: u32,
    tau: Mat2,
    kappa: [f64; 2],
}

/// The vertex table of a contraction, indexed by dense local ids.
#[derive(Debug, Clone)]
pub struct Net {
    verts: Vec<CVertex>,
    // trajectory id -> local id
    local: Vec<u32>,
}

impl Net {
    fn local_of(&self, z_u: usize) -> Result<usize> {
        match self.local.get(z_u) {
            Some(&l) if l != NIL => Ok(l as usize),
            _ => Err(Error::Lookup(format!(
                "vertex {z_u} is not in the contraction"
            ))),
        }
    }

    fn push(&mut self, v: CVertex) -> usize {
        let z = v.z as usize;
        if self.local.len() <= z {
            self.local.resize(z + 1, NIL);
        }
        self.local[z] = self.verts.len() as u32;
        self.verts.push(v);
        self.verts.len() - 1
    }
}

impl BaseTree for Net {
    fn root(&self) -> usize {
        0
    }
    fn parent(&self, u: usize) -> Option<usize> {
        let p = self.verts[u].parent;
        (p != NIL).then_some(p as usize)
    }
    fn children(&self, u: usize) -> Option<[usize; 2]> {
        let [l, r] = self.verts[u].children;
        (l != NIL).then_some([l as usize, r as usize])
    }
    fn id_bound(&self) -> usize {
        self.verts.len()
    }
    fn contains(&self, u: usize) -> bool {
        u < self.verts.len()
    }
}

impl Network for Net {
    fn tau(&self, u: usize) -> Mat2 {
        if u == 0 {
            IDENTITY
        } else {
            self.verts[u].tau
        }
    }
    fn kappa(&self, u: usize) -> [f64; 2] {
        self.verts[u].kappa
    }
}

/// A contraction with its TST of cached potentials.
#[derive(Debug, Clone)]
pub struct Contraction {
    net: Net,
    tst: Tst<Potential>,
}

impl Contraction {
    /// A copy of the three-vertex tree `Z_2` (root and the leaves of the first
    /// two nodes) with unit evidence.
    pub fn new_z2(z: &TrajectoryTree, phi: &mut PhiTable) -> Result<Self> {
        let (x1, x2) = (z.gamma(0), z.gamma(2));
        if z.leaf_of(x1)? != 1 || z.leaf_of(x2)? != 2 {
            return Err(structure("trajectory tree does not start from Z_2"));
        }
        let mut net = Net {
            verts: Vec::with_capacity(16),
            local: Vec::new(),
        };
        let vertex = |parent, children, z_id: u32, tau| CVertex {
            parent,
            children,
            z: z_id,
            tau,
            kappa: [1.0, 1.0],
        };
        net.push(vertex(NIL, [1, 2], 0, IDENTITY));
        let tau1 = PhiTable::flip(phi.phi(z.d(1) - z.d(0))?);
        let tau2 = PhiTable::flip(phi.phi(z.d(2) - z.d(0))?);
        net.push(vertex(0, [NIL; 2], 1, tau1));
        net.push(vertex(0, [NIL; 2], 2, tau2));
        let tst = Tst::build(&net, &Propagator(&net))?;
        Ok(Self { net, tst })
    }

    /// Adds the leaf of node `x_t` to the contraction, splicing in its
    /// branching vertex. Returns `(u_star, u_t)` as trajectory ids.
    pub fn insert(
        &mut self,
        z: &TrajectoryTree,
        x_t: usize,
        phi: &mut PhiTable,
    ) -> Result<(usize, usize)> {
        let u_t = z.leaf_of(x_t)?;
        if self.contains(u_t) {
            return Err(Error::Precondition(format!(
                "node {x_t} is already in the contraction"
            )));
        }
        // descend this TST to the vertex whose edge hides u_t
        let mut s = self.tst.root();
        while !self.tst.vertex(s).is_leaf() {
            let v = self.tst.vertex(s);
            let xi = self.net.verts[v.xi().expect("internal")].z as usize;
            let slot = match z.nu(xi, u_t)? {
                Side::Left => Slot::Left,
                Side::Right => Slot::Right,
                Side::Neither => Slot::Centre,
            };
            s = v.child(slot).expect("internal");
        }
        let hat_local = self.tst.vertex(s).mu();
        let hat = self.net.verts[hat_local].z as usize;
        if hat_local == 0 {
            return Err(structure("descent ended at the contraction root"));
        }
        // descend the trajectory TST to the branching point of u_t and u_hat
        let e = z.tst();
        let mut s = e.root();
        while !e.vertex(s).is_leaf() {
            let v = e.vertex(s);
            let xi = v.xi().expect("internal");
            let a = z.nu(xi, u_t)?;
            let slot = if a == z.nu(xi, hat)? {
                match a {
                    Side::Left => Slot::Left,
                    Side::Right => Slot::Right,
                    Side::Neither => Slot::Centre,
                }
            } else {
                Slot::Centre
            };
            s = v.child(slot).expect("internal");
        }
        let star = e.vertex(s).mu();
        if self.contains(star) {
            return Err(structure(format!(
                "branching vertex {star} is already in the contraction"
            )));
        }

        let parent_local = self.net.verts[hat_local].parent;
        let hat_left = z.nu(star, hat)? == Side::Left;
        let star_local = self.net.verts.len() as u32;
        let leaf_local = star_local + 1;
        let slot =
            usize::from(self.net.verts[parent_local as usize].children[0] != hat_local as u32);
        self.net.verts[parent_local as usize].children[slot] = star_local;
        self.net.verts[hat_local].parent = star_local;
        let children = if hat_left {
            [hat_local as u32, leaf_local]
        } else {
            [leaf_local, hat_local as u32]
        };
        let tau_of = |phi: &mut PhiTable, u: usize, up: usize| -> Result<Mat2> {
            let (du, dp) = (z.d(u), z.d(up));
            if du < dp {
                return Err(structure(format!(
                    "vertex {u} is shallower than its contraction parent {up}"
                )));
            }
            Ok(PhiTable::flip(phi.phi(du - dp)?))
        };
        let parent_z = self.net.verts[parent_local as usize].z as usize;
        let star_tau = tau_of(phi, star, parent_z)?;
        self.net.verts[hat_local].tau = tau_of(phi, hat, star)?;
        let leaf_tau = tau_of(phi, u_t, star)?;
        self.net.push(CVertex {
            parent: parent_local,
            children,
            z: star as u32,
            tau: star_tau,
            kappa: [1.0, 1.0],
        });
        self.net.push(CVertex {
            parent: star_local,
            children: [NIL; 2],
            z: u_t as u32,
            tau: leaf_tau,
            kappa: [1.0, 1.0],
        });
        self.tst.insert_splice(
            &self.net,
            star_local as usize,
            leaf_local as usize,
            &Propagator(&self.net),
        )?;
        Ok((star, u_t))
    }

    /// Sets `kappa_1` at a vertex and refreshes the cached potentials on its
    /// TST path. `kappa_0` stays as it is.
    pub fn evidence(&mut self, z_u: usize, kappa1: f64) -> Result<()> {
        if !kappa1.is_finite() || kappa1 < 0.0 {
            return Err(Error::Validation(format!(
                "evidence {kappa1} must be finite and nonnegative"
            )));
        }
        let u = self.net.local_of(z_u)?;
        self.net.verts[u].kappa[1] = kappa1;
        self.tst.refresh_path(u, &Propagator(&self.net))
    }

    /// `Lambda(u_hat) / 4` for a leaf `u_hat`.
    pub fn marginal(&self, z_u: usize) -> Result<f64> {
        let u = self.net.local_of(z_u)?;
        belief::marginal(&self.tst, &self.net, u)
    }

    /// `Lambda(u_hat)` by enumerating every assignment (small contractions).
    pub fn lambda_exhaustive(&self, z_u: usize) -> Result<f64> {
        let u = self.net.local_of(z_u)?;
        belief::lambda_exhaustive(&self.net, u)
    }

    /// Largest relative gap between cached potentials and their definitions.
    pub fn audit_potentials(&self) -> Result<f64> {
        belief::audit(&self.tst, &self.net)
    }

    /// Discards and rebuilds the whole TST.
    pub fn rebuild_tst(&mut self) {
        self.tst.rebuild_all(&self.net, &Propagator(&self.net));
    }

    pub fn contains(&self, z_u: usize) -> bool {
        self.net.local_of(z_u).is_ok()
    }

    pub fn len(&self) -> usize {
        self.net.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net.verts.is_empty()
    }

    /// Trajectory ids of all vertices, in insertion order.
    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        self.net.verts.iter().map(|v| v.z as usize)
    }

    /// Trajectory ids of the leaves.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.net
            .verts
            .iter()
            .filter(|v| v.children[0] == NIL)
            .map(|v| v.z as usize)
    }

    pub fn parent(&self, z_u: usize) -> Result<Option<usize>> {
        let u = self.net.local_of(z_u)?;
        Ok(self.net.parent(u).map(|p| self.net.verts[p].z as usize))
    }

    pub fn children(&self, z_u: usize) -> Result<Option<[usize; 2]>> {
        let u = self.net.local_of(z_u)?;
        Ok(self
            .net
            .children(u)
            .map(|cs| cs.map(|c| self.net.verts[c].z as usize)))
    }

    /// Transition into `z_u`; `None` at the root.
    pub fn tau(&self, z_u: usize) -> Result<Option<Mat2>> {
        let u = self.net.local_of(z_u)?;
        Ok((u != 0).then(|| self.net.verts[u].tau))
    }

    pub fn kappa(&self, z_u: usize) -> Result<[f64; 2]> {
        let u = self.net.local_of(z_u)?;
        Ok(self.net.verts[u].kappa)
    }

    pub fn tst(&self) -> &Tst<Potential> {
        &self.tst
    }

    /// Overwrites `tau` without refreshing potentials. For fault injection.
    #[doc(hidden)]
    pub fn corrupt_tau(&mut self, z_u: usize, tau: Mat2) -> Result<()> {
        let u = self.net.local_of(z_u)?;
        self.net.verts[u].tau = tau;
        Ok(())
    }

    /// Overwrites `kappa` without refreshing potentials. For fault injection.
    #[doc(hidden)]
    pub fn corrupt_kappa(&mut self, z_u: usize, kappa: [f64; 2]) -> Result<()> {
        let u = self.net.local_of(z_u)?;
        self.net.verts[u].kappa = kappa;
        Ok(())
    }

    /// Checks the contraction rules against `z`, the `tau`/depth agreement
    /// and the TST structure. Each entry names the offending vertex.
    pub fn validate(&self, z: &TrajectoryTree, phi: &PhiTable) -> Vec<String> {
        let mut errs = Vec::new();
        let net = &self.net;
        if net.verts.is_empty() || net.verts[0].z != 0 || net.verts[0].parent != NIL {
            errs.push("root must be the trajectory root".to_string());
            return errs;
        }
        let mut reached = 0usize;
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            reached += 1;
            if reached > net.verts.len() {
                errs.push("contraction contains a cycle".into());
                return errs;
            }
            let v = &net.verts[u];
            let zu = v.z as usize;
            if !z.contains(zu) {
                errs.push(format!("vertex {zu}: not in the trajectory tree"));
                continue;
            }
            if net.local.get(zu).copied() != Some(u as u32) {
                errs.push(format!("vertex {zu}: index out of sync"));
            }
            if v.kappa.iter().any(|k| !k.is_finite() || *k < 0.0) {
                errs.push(format!(
                    "vertex {zu}: evidence {:?} is not finite and nonnegative",
                    v.kappa
                ));
            }
            if u != 0 {
                let pz = net.verts[v.parent as usize].z as usize;
                match z.d(zu).checked_sub(z.d(pz)) {
                    None => errs.push(format!("vertex {zu}: negative depth gap to parent {pz}")),
                    Some(delta) => match phi.get(delta) {
                        None => errs.push(format!("vertex {zu}: phi_{delta} not computed")),
                        Some(p) => {
                            let want = PhiTable::flip(p);
                            let bad = (0..2)
                                .any(|i| (0..2).any(|j| (v.tau[i][j] - want[i][j]).abs() > 1e-12));
                            if bad {
                                errs.push(format!(
                                    "vertex {zu}: tau {:?} disagrees with delta {delta}",
                                    v.tau
                                ));
                            }
                        }
                    },
                }
            }
            match net.children(u) {
                None => {
                    if z.children(zu).is_some() {
                        errs.push(format!(
                            "vertex {zu}: contraction leaf is internal in the trajectory tree"
                        ));
                    }
                }
                Some([l, r]) => {
                    let Some([zl, zr]) = z.children(zu) else {
                        errs.push(format!(
                            "vertex {zu}: internal in the contraction but a trajectory leaf"
                        ));
                        continue;
                    };
                    for (c, side) in [(l, zl), (r, zr)] {
                        let cz = net.verts[c].z as usize;
                        if net.verts[c].parent as usize != u {
                            errs.push(format!("vertex {cz}: parent link does not point to {zu}"));
                        }
                        if !z.contains(cz) || !z.is_descendant(side, cz) {
                            errs.push(format!("vertex {cz}: not below the matching child of {zu}"));
                        }
                    }
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        if reached != net.verts.len() {
            errs.push(format!(
                "{} vertices unreachable from the root",
                net.verts.len() - reached
            ));
        }
        errs.extend(self.tst.check(net).into_iter().map(|e| format!("tst: {e}")));
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_values() {
        let mut phi = PhiTable::new(4).unwrap();
        assert_eq!(phi.phi(0).unwrap(), 0.0);
        assert_eq!(phi.phi(1).unwrap(), 0.25);
        assert_eq!(phi.phi(2).unwrap(), 0.375);
        assert!((PhiTable::closed_form(4, 2) - 0.375).abs() < 1e-15);
        assert!(matches!(phi.phi(5), Err(Error::Range(_))));
    }

    #[test]
    fn phi_closed_form_agrees() {
        for horizon in [2usize, 3, 10, 1000, 100_000] {
            let mut phi = PhiTable::new(horizon).unwrap();
            phi.extend_to(horizon).unwrap();
            let mut last = 0.0;
            for j in 0..=horizon {
                let p = phi.get(j).unwrap();
                assert!((p - PhiTable::closed_form(horizon, j)).abs() <= 1e-12);
                assert!((0.0..=0.5).contains(&p) && p >= last);
                last = p;
            }
        }
    }

    #[test]
    fn z2_copy() {
        let z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(4).unwrap();
        let j = Contraction::new_z2(&z, &mut phi).unwrap();
        assert_eq!(j.tau(2).unwrap(), Some([[0.75, 0.25], [0.25, 0.75]]));
        assert_eq!(j.tau(1).unwrap(), Some(IDENTITY));
        assert_eq!(j.tau(0).unwrap(), None);
        assert!(j.validate(&z, &phi).is_empty());
        assert!((j.marginal(2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn first_insert_hand_trace() {
        let mut z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(8).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        j.evidence(1, 0.5).unwrap();
        let u3 = z.grow(3, 1).unwrap();
        let up = z.parent(u3).unwrap();
        let (star, ut) = j.insert(&z, 3, &mut phi).unwrap();
        assert_eq!((star, ut), (up, u3));
        assert_eq!(j.children(0).unwrap().unwrap()[0], up);
        assert_eq!(j.children(up).unwrap(), Some([u3, 1]));
        assert_eq!(j.tau(up).unwrap(), Some(IDENTITY));
        assert_eq!(j.tau(1).unwrap(), Some(IDENTITY));
        assert_eq!(j.tau(u3).unwrap(), Some(PhiTable::flip(1.0 / 8.0)));
        assert_eq!(j.kappa(1).unwrap(), [1.0, 0.5]);
        assert_eq!(j.kappa(up).unwrap(), [1.0, 1.0]);
        assert_eq!(j.kappa(u3).unwrap(), [1.0, 1.0]);
        assert!(j.validate(&z, &phi).is_empty());
        assert!(matches!(
            j.insert(&z, 3, &mut phi),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn full_insertion_reproduces_trajectory_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(64).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        for t in 3..=64 {
            z.grow(t, rng.random_range(1..t)).unwrap();
            j.insert(&z, t, &mut phi).unwrap();
        }
        assert_eq!(j.len(), z.len());
        for u in 0..z.len() {
            assert_eq!(j.children(u).unwrap(), z.children(u));
        }
        assert!(j.validate(&z, &phi).is_empty());
    }

    #[test]
    fn random_inserts_stay_valid_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let horizon = 1000;
        let mut z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(horizon).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        for t in 3..=horizon {
            z.grow(t, rng.random_range(1..t)).unwrap();
            if rng.random_bool(0.4) {
                let (_, ut) = j.insert(&z, t, &mut phi).unwrap();
                j.evidence(ut, rng.random_range(0.5..2.0)).unwrap();
            }
        }
        assert!(j.validate(&z, &phi).is_empty());
        // the belief layer still matches a fresh build
        let before: Vec<f64> = j.leaves().map(|u| j.marginal(u).unwrap()).collect();
        j.rebuild_tst();
        for (u, b) in j.leaves().collect::<Vec<_>>().into_iter().zip(before) {
            assert!(rel_err(j.marginal(u).unwrap(), b) < 1e-10);
        }
    }

    #[test]
    fn corrupted_tau_is_reported() {
        let z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(4).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        j.corrupt_tau(2, IDENTITY).unwrap();
        let report = j.validate(&z, &phi);
        assert_eq!(report.len(), 1);
        assert!(report[0].starts_with("vertex 2:"));
    }

    #[test]
    fn unit_evidence_normalises() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(50).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        for t in 3..=50 {
            z.grow(t, rng.random_range(1..t)).unwrap();
            if rng.random_bool(0.5) {
                j.insert(&z, t, &mut phi).unwrap();
            }
        }
        for u in j.leaves().collect::<Vec<_>>() {
            assert!((j.marginal(u).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn evidence_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let mut z = TrajectoryTree::new(1, 2).unwrap();
            let mut phi = PhiTable::new(8).unwrap();
            let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
            for t in 3..=8 {
                z.grow(t, rng.random_range(1..t)).unwrap();
                if rng.random_bool(0.7) {
                    j.insert(&z, t, &mut phi).unwrap();
                }
            }
            for u in j.leaves().collect::<Vec<_>>() {
                j.evidence(u, rng.random_range(0.1..10.0)).unwrap();
            }
            assert!(j.audit_potentials().unwrap() < 1e-10);
            for u in j.leaves().collect::<Vec<_>>() {
                let fast = j.marginal(u).unwrap() * 4.0;
                assert!(rel_err(fast, j.lambda_exhaustive(u).unwrap()) < 1e-9);
            }
        }
    }

    #[test]
    fn bad_evidence_rejected() {
        let z = TrajectoryTree::new(1, 2).unwrap();
        let mut phi = PhiTable::new(4).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        assert!(matches!(j.evidence(1, f64::NAN), Err(Error::Validation(_))));
        assert!(matches!(j.evidence(9, 1.0), Err(Error::Lookup(_))));
    }
}
