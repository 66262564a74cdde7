//! Ternary search trees (TSTs) over dynamic full binary trees.
//!
//! A TST recursively splits a full binary tree into fragments. Every TST
//! vertex `s` owns a fragment of the base tree: an *open* vertex owns the
//! whole subtree below `mu(s)`, a *closed* vertex owns the subtree below
//! `mu(s)` minus the proper descendants of `mu_prime(s)`. An internal vertex
//! splits its fragment at `xi(s)` into a left part (below the left child of
//! `xi`), a right part (below the right child of `xi`) and the centre part
//! (everything else, which is closed at `xi`). Every base vertex ends up as
//! the sole member of exactly one TST leaf.
//!
//! Insertion supports the single splice shape produced by the trajectory
//! tree and by contractions: a new internal vertex placed between an
//! existing non-root vertex and its parent, with a new leaf as its other
//! child. Balance is kept by weight-balanced partial rebuilds.
//!
//! Optional per-vertex aggregates are maintained through an [`Aggregator`],
//! which recomputes one vertex from its three children.

use crate::error::{structure, Error, Result};

/// Sentinel for absent ids in the compact vertex table.
pub const NIL: u32 = u32::MAX;

/// Read access to a rooted full binary tree with dense vertex ids.
pub trait BaseTree {
    fn root(&self) -> usize;
    fn parent(&self, u: usize) -> Option<usize>;
    /// `[left, right]` for internal vertices, `None` for leaves.
    fn children(&self, u: usize) -> Option<[usize; 2]>;
    /// One past the largest vertex id in use.
    fn id_bound(&self) -> usize;
    fn contains(&self, u: usize) -> bool;

    /// True iff `u` lies in the subtree rooted at `anc` (inclusive).
    fn is_descendant(&self, anc: usize, mut u: usize) -> bool {
        loop {
            if u == anc {
                return true;
            }
            match self.parent(u) {
                Some(p) => u = p,
                None => return false,
            }
        }
    }
}

/// A plain full binary tree, mostly useful for tests and standalone TSTs.
#[derive(Debug, Clone)]
pub struct BinaryTree {
    parent: Vec<Option<usize>>,
    children: Vec<Option<[usize; 2]>>,
    root: usize,
}

impl BinaryTree {
    pub fn singleton() -> Self {
        Self {
            parent: vec![None],
            children: vec![None],
            root: 0,
        }
    }

    /// Builds a tree from per-vertex child lists. Every vertex must have zero
    /// or two children and there must be exactly one root.
    pub fn from_children(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        if n == 0 {
            return Err(structure("empty tree"));
        }
        let mut parent = vec![None; n];
        let mut children = vec![None; n];
        for (u, list) in lists.iter().enumerate() {
            match list.as_slice() {
                [] => {}
                &[l, r] => {
                    for c in [l, r] {
                        if c >= n || c == u {
                            return Err(structure(format!("vertex {u} has invalid child {c}")));
                        }
                        if parent[c].is_some() {
                            return Err(structure(format!("vertex {c} has two parents")));
                        }
                        parent[c] = Some(u);
                    }
                    children[u] = Some([l, r]);
                }
                other => {
                    return Err(structure(format!(
                        "vertex {u} has {} children; a full binary tree needs 0 or 2",
                        other.len()
                    )))
                }
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&u| parent[u].is_none()).collect();
        if roots.len() != 1 {
            return Err(structure(format!(
                "expected one root, found {}",
                roots.len()
            )));
        }
        let tree = Self {
            parent,
            children,
            root: roots[0],
        };
        // reject cycles detached from the root
        let mut seen = 0usize;
        let mut stack = vec![tree.root];
        while let Some(u) = stack.pop() {
            seen += 1;
            if let Some([l, r]) = tree.children[u] {
                stack.push(l);
                stack.push(r);
            }
        }
        if seen != n {
            return Err(structure("tree is not connected"));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Splices a new internal vertex above the non-root vertex `u` and hangs
    /// a new leaf on its other side. Returns `(new_internal, new_leaf)`.
    pub fn splice(&mut self, u: usize, leaf_on_left: bool) -> Result<(usize, usize)> {
        let p =
            self.parent.get(u).copied().flatten().ok_or_else(|| {
                structure(format!("cannot splice above root or unknown vertex {u}"))
            })?;
        let inner = self.parent.len();
        let leaf = inner + 1;
        self.parent.push(Some(p));
        self.parent.push(Some(inner));
        self.children
            .push(Some(if leaf_on_left { [leaf, u] } else { [u, leaf] }));
        self.children.push(None);
        self.parent[u] = Some(inner);
        let pc = self.children[p].as_mut().expect("parent is internal");
        if pc[0] == u {
            pc[0] = inner;
        } else {
            pc[1] = inner;
        }
        Ok((inner, leaf))
    }
}

impl BaseTree for BinaryTree {
    fn root(&self) -> usize {
        self.root
    }
    fn parent(&self, u: usize) -> Option<usize> {
        self.parent[u]
    }
    fn children(&self, u: usize) -> Option<[usize; 2]> {
        self.children[u]
    }
    fn id_bound(&self) -> usize {
        self.parent.len()
    }
    fn contains(&self, u: usize) -> bool {
        u < self.parent.len()
    }
}

/// Whether a TST vertex owns a whole subtree or a subtree with a hole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Open,
    Closed,
}

/// Child slots of an internal TST vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Left = 0,
    Centre = 1,
    Right = 2,
}

/// Answer of the subtree-side query: where `u2` sits relative to `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `u2` is below the left child of `u`.
    Left,
    /// `u2` is below the right child of `u`.
    Right,
    /// `u2` is not a proper descendant of `u`.
    Neither,
}

#[derive(Debug, Clone)]
pub struct TstVertex {
    pub kind: Kind,
    mu: u32,
    mu_prime: u32,
    xi: u32,
    children: [u32; 3],
    parent: u32,
    depth: u32,
    weight: u32,
}

impl TstVertex {
    pub fn mu(&self) -> usize {
        self.mu as usize
    }
    pub fn mu_prime(&self) -> Option<usize> {
        opt(self.mu_prime)
    }
    pub fn xi(&self) -> Option<usize> {
        opt(self.xi)
    }
    pub fn child(&self, slot: Slot) -> Option<usize> {
        opt(self.children[slot as usize])
    }
    pub fn children(&self) -> Option<[usize; 3]> {
        if self.children[0] == NIL {
            None
        } else {
            Some(self.children.map(|c| c as usize))
        }
    }
    pub fn parent(&self) -> Option<usize> {
        opt(self.parent)
    }
    pub fn depth(&self) -> usize {
        self.depth as usize
    }
    /// Number of base vertices in this vertex's fragment.
    pub fn weight(&self) -> usize {
        self.weight as usize
    }
    pub fn is_leaf(&self) -> bool {
        self.children[0] == NIL
    }
}

fn opt(x: u32) -> Option<usize> {
    (x != NIL).then_some(x as usize)
}

/// Recomputes a per-vertex aggregate from the vertex's children.
pub trait Aggregator {
    type Value: Clone + Default;
    fn leaf(&self, vertex: &TstVertex) -> Self::Value;
    /// `children` are in left, centre, right order.
    fn combine(&self, vertex: &TstVertex, children: [(&TstVertex, &Self::Value); 3])
        -> Self::Value;
}

/// Aggregator for TSTs that carry no payload.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAggregate;

impl Aggregator for NoAggregate {
    type Value = ();
    fn leaf(&self, _: &TstVertex) {}
    fn combine(&self, _: &TstVertex, _: [(&TstVertex, &()); 3]) {}
}

#[derive(Debug, Clone, Copy)]
struct Fragment {
    kind: Kind,
    mu: usize,
    mu_prime: usize,
}

/// Height bound asserted by callers: `height <= 4 * log2(size) + 4`.
pub fn height_bound(size: usize) -> f64 {
    4.0 * (size.max(1) as f64).log2() + 4.0
}

/// A ternary search tree over some [`BaseTree`], with aggregates of type `V`.
#[derive(Debug, Clone)]
pub struct Tst<V> {
    nodes: Vec<TstVertex>,
    aggs: Vec<V>,
    free: Vec<u32>,
    root: u32,
    leaf_index: Vec<u32>,
    size: usize,
    depth_hist: Vec<usize>,
    // scratch for fragment enumeration, indexed by base id
    sub: Vec<u32>,
}

impl<V: Clone + Default> Tst<V> {
    /// Builds a TST of `base` by recursive centroid splitting.
    pub fn build<B, A>(base: &B, agg: &A) -> Result<Self>
    where
        B: BaseTree,
        A: Aggregator<Value = V>,
    {
        let root = base.root();
        if !base.contains(root) || base.parent(root).is_some() {
            return Err(structure("base tree root is invalid"));
        }
        // full-binary and parent-link consistency
        let mut count = 0usize;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            count += 1;
            if count > base.id_bound() {
                return Err(structure("base tree contains a cycle"));
            }
            if let Some(cs) = base.children(u) {
                for c in cs {
                    if base.parent(c) != Some(u) {
                        return Err(structure(format!(
                            "vertex {c} does not point back to parent {u}"
                        )));
                    }
                    stack.push(c);
                }
            }
        }
        let mut tst = Self {
            nodes: Vec::with_capacity(2 * count),
            aggs: Vec::with_capacity(2 * count),
            free: Vec::new(),
            root: NIL,
            leaf_index: vec![NIL; base.id_bound()],
            size: count,
            depth_hist: Vec::new(),
            sub: vec![0; base.id_bound()],
        };
        let frag = Fragment {
            kind: Kind::Open,
            mu: root,
            mu_prime: usize::MAX,
        };
        tst.root = tst.build_fragment(base, agg, frag, NIL, 0);
        Ok(tst)
    }

    pub fn root(&self) -> usize {
        self.root as usize
    }

    pub fn vertex(&self, s: usize) -> &TstVertex {
        &self.nodes[s]
    }

    pub fn aggregate(&self, s: usize) -> &V {
        &self.aggs[s]
    }

    /// Number of base-tree vertices covered.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn height(&self) -> usize {
        self.depth_hist.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    /// Number of live TST vertices.
    pub fn vertex_count(&self) -> usize {
        self.depth_hist.iter().sum()
    }

    /// The unique leaf whose fragment is `{u}`.
    pub fn leaf_of(&self, u: usize) -> Result<usize> {
        match self.leaf_index.get(u) {
            Some(&s) if s != NIL => Ok(s as usize),
            _ => Err(Error::Lookup(format!("base vertex {u} is not in this TST"))),
        }
    }

    /// True iff `s` is a vertex of the subtree rooted at `anc`.
    pub fn in_subtree(&self, anc: usize, s: usize) -> bool {
        let target = self.nodes[anc].depth;
        let mut x = s as u32;
        while self.nodes[x as usize].depth > target {
            x = self.nodes[x as usize].parent;
        }
        x as usize == anc
    }

    /// Least common ancestor of two TST vertices.
    pub fn lca(&self, s: usize, s2: usize) -> Result<usize> {
        self.lca_split(s, s2).map(|(star, _, _)| star)
    }

    /// LCA plus the children of the LCA on the way to `s` and `s2`
    /// (`None` where the argument is the LCA itself).
    pub fn lca_split(&self, s: usize, s2: usize) -> Result<(usize, Option<usize>, Option<usize>)> {
        let live = |x: usize| {
            x < self.nodes.len() && (x as u32 == self.root || self.nodes[x].parent != NIL)
        };
        if !live(s) || !live(s2) {
            return Err(structure(format!(
                "vertices {s} and {s2} do not both belong to this TST"
            )));
        }
        let (mut x, mut y) = (s as u32, s2 as u32);
        let (mut cx, mut cy) = (NIL, NIL);
        while self.nodes[x as usize].depth > self.nodes[y as usize].depth {
            cx = x;
            x = self.nodes[x as usize].parent;
        }
        while self.nodes[y as usize].depth > self.nodes[x as usize].depth {
            cy = y;
            y = self.nodes[y as usize].parent;
        }
        while x != y {
            cx = x;
            cy = y;
            x = self.nodes[x as usize].parent;
            y = self.nodes[y as usize].parent;
            if x == NIL || y == NIL {
                return Err(structure("vertices lie in different trees"));
            }
        }
        Ok((x as usize, opt(cx), opt(cy)))
    }

    /// Where `u2` sits relative to `u` in the base tree, answered through
    /// this TST alone in `O(height)` time.
    pub fn side(&self, u: usize, u2: usize) -> Result<Side> {
        self.side_counted(u, u2).map(|(side, _)| side)
    }

    /// [`Tst::side`] plus the number of TST vertices visited.
    ///
    /// Both leaves climb to their LCA in one pass. While the leaf of `u`
    /// climbs it records the latest deciding vertex, which after the climb
    /// is the topmost one below the LCA.
    pub fn side_counted(&self, u: usize, u2: usize) -> Result<(Side, usize)> {
        if u == u2 {
            return Ok((Side::Neither, 0));
        }
        let leaf = self.leaf_of(u)? as u32;
        let leaf2 = self.leaf_of(u2)? as u32;
        let depth = |x: u32| self.nodes[x as usize].depth;
        let mut visits = 2usize;
        let mut decision = None;
        let (mut x, mut y) = (leaf, leaf2);
        let (mut cx, mut cy) = (NIL, NIL);
        let step_x = |x: &mut u32, cx: &mut u32, decision: &mut Option<Side>| {
            let v = &self.nodes[*x as usize];
            if v.kind == Kind::Open {
                *decision = Some(Side::Neither);
            } else if v.xi == u as u32 {
                if self.nodes[v.children[Slot::Left as usize] as usize].kind == Kind::Closed {
                    *decision = Some(Side::Left);
                } else if self.nodes[v.children[Slot::Right as usize] as usize].kind == Kind::Closed
                {
                    *decision = Some(Side::Right);
                }
            }
            *cx = *x;
            *x = v.parent;
        };
        while depth(x) > depth(y) {
            step_x(&mut x, &mut cx, &mut decision);
            visits += 1;
        }
        while depth(y) > depth(x) {
            cy = y;
            y = self.nodes[y as usize].parent;
            visits += 1;
        }
        while x != y {
            step_x(&mut x, &mut cx, &mut decision);
            cy = y;
            y = self.nodes[y as usize].parent;
            visits += 2;
            if x == NIL || y == NIL {
                return Err(structure("leaves lie in different trees"));
            }
        }
        if cx == NIL || cy == NIL {
            return Err(structure("distinct leaves cannot be nested"));
        }
        let sv = &self.nodes[x as usize];
        if cx != sv.children[Slot::Centre as usize] {
            return Ok((Side::Neither, visits));
        }
        if sv.xi == u as u32 {
            if cy == sv.children[Slot::Left as usize] {
                return Ok((Side::Left, visits));
            }
            if cy == sv.children[Slot::Right as usize] {
                return Ok((Side::Right, visits));
            }
        }
        decision.map(|d| (d, visits)).ok_or_else(|| {
            structure(format!(
                "side({u}, {u2}) did not terminate within the TST height"
            ))
        })
    }

    /// Registers the splice `new_internal` above an existing vertex, with
    /// `new_leaf` as its other child, and rebalances. `base` must already
    /// contain the splice. Aggregates on every vertex whose fragment changed
    /// are recomputed bottom-up.
    pub fn insert_splice<B, A>(
        &mut self,
        base: &B,
        new_internal: usize,
        new_leaf: usize,
        agg: &A,
    ) -> Result<()>
    where
        B: BaseTree,
        A: Aggregator<Value = V>,
    {
        let bad = |m: &str| structure(format!("splice ({new_internal}, {new_leaf}): {m}"));
        if !base.contains(new_internal) || !base.contains(new_leaf) {
            return Err(bad("vertices missing from base tree"));
        }
        if self.leaf_of(new_internal).is_ok() || self.leaf_of(new_leaf).is_ok() {
            return Err(bad("vertices already indexed"));
        }
        if base.children(new_leaf).is_some() || base.parent(new_leaf) != Some(new_internal) {
            return Err(bad(
                "new leaf must be a leaf child of the new internal vertex",
            ));
        }
        let [l, r] = base
            .children(new_internal)
            .ok_or_else(|| bad("new internal vertex has no children"))?;
        let leaf_on_left = l == new_leaf;
        let old = if leaf_on_left { r } else { l };
        if old == new_leaf || base.parent(old) != Some(new_internal) {
            return Err(bad("children do not point back to the new internal vertex"));
        }
        let p = base
            .parent(new_internal)
            .ok_or_else(|| bad("new internal vertex has no parent"))?;
        if self.leaf_of(p).is_err() {
            return Err(bad("parent of the new internal vertex is not indexed"));
        }
        let expanded = self
            .leaf_of(old)
            .map_err(|_| bad("spliced-under vertex is not indexed"))?;

        if self.leaf_index.len() < base.id_bound() {
            self.leaf_index.resize(base.id_bound(), NIL);
            self.sub.resize(base.id_bound(), 0);
        }

        // Every fragment containing `old` gains both new vertices; those
        // rooted at `old` become rooted at `new_internal`.
        let mut a = self.nodes[expanded].parent;
        while a != NIL {
            let v = &mut self.nodes[a as usize];
            if v.mu == old as u32 {
                v.mu = new_internal as u32;
            }
            v.weight += 2;
            a = v.parent;
        }

        // The leaf of `old` becomes a three-leaf split at `new_internal`.
        let depth = self.nodes[expanded].depth + 1;
        let kind = self.nodes[expanded].kind;
        let new_leaf_vertex = self.alloc_leaf(Kind::Open, new_leaf, NIL, expanded as u32, depth);
        let old_vertex = match kind {
            Kind::Open => self.alloc_leaf(Kind::Open, old, NIL, expanded as u32, depth),
            Kind::Closed => self.alloc_leaf(Kind::Closed, old, old as u32, expanded as u32, depth),
        };
        let centre = self.alloc_leaf(
            Kind::Closed,
            new_internal,
            new_internal as u32,
            expanded as u32,
            depth,
        );
        {
            let v = &mut self.nodes[expanded];
            v.mu = new_internal as u32;
            v.xi = new_internal as u32;
            v.weight = 3;
            v.children = if leaf_on_left {
                [new_leaf_vertex, centre, old_vertex]
            } else {
                [old_vertex, centre, new_leaf_vertex]
            };
        }
        for s in [new_leaf_vertex, centre, old_vertex] {
            self.aggs[s as usize] = agg.leaf(&self.nodes[s as usize]);
        }
        self.size += 2;

        // highest weight-unbalanced vertex on the path gets rebuilt
        let mut path = Vec::with_capacity(depth as usize);
        let mut x = expanded as u32;
        while x != NIL {
            path.push(x);
            x = self.nodes[x as usize].parent;
        }
        let scapegoat = path
            .iter()
            .rev()
            .copied()
            .find(|&s| self.unbalanced(s as usize));
        let refresh_from = match scapegoat {
            Some(s) => {
                let parent = self.nodes[s as usize].parent;
                self.rebuild(base, agg, s as usize);
                parent
            }
            None => expanded as u32,
        };
        self.refresh_upward(agg, refresh_from);
        Ok(())
    }

    /// Recomputes aggregates on the path from the leaf of `u` to the root;
    /// call after data attached to base vertex `u` changed.
    pub fn refresh_path<A: Aggregator<Value = V>>(&mut self, u: usize, agg: &A) -> Result<()> {
        let leaf = self.leaf_of(u)?;
        self.aggs[leaf] = agg.leaf(&self.nodes[leaf]);
        let parent = self.nodes[leaf].parent;
        self.refresh_upward(agg, parent);
        Ok(())
    }

    /// Discards the whole TST and rebuilds it from `base`.
    pub fn rebuild_all<B, A>(&mut self, base: &B, agg: &A)
    where
        B: BaseTree,
        A: Aggregator<Value = V>,
    {
        let root = self.root as usize;
        self.rebuild(base, agg, root);
    }

    /// Base vertices of the fragment owned by `s`, in preorder.
    pub fn fragment<B: BaseTree>(&self, base: &B, s: usize) -> Vec<usize> {
        let v = &self.nodes[s];
        let frag = Fragment {
            kind: v.kind,
            mu: v.mu as usize,
            mu_prime: opt(v.mu_prime).unwrap_or(usize::MAX),
        };
        enumerate_fragment(base, frag)
    }

    /// Replays the splitting rules from the root and reports every
    /// disagreement with the stored tree. Empty means valid.
    pub fn check<B: BaseTree>(&self, base: &B) -> Vec<String> {
        let mut errs = Vec::new();
        let root = self.root as usize;
        let rv = &self.nodes[root];
        if rv.kind != Kind::Open
            || rv.mu as usize != base.root()
            || rv.parent != NIL
            || rv.depth != 0
        {
            errs.push(format!(
                "root {root} must be open at depth 0 with mu = base root"
            ));
        }
        let mut hist = vec![0usize; self.depth_hist.len()];
        let mut leaves = 0usize;
        let mut stack = vec![(
            root,
            Fragment {
                kind: Kind::Open,
                mu: base.root(),
                mu_prime: usize::MAX,
            },
        )];
        while let Some((s, want)) = stack.pop() {
            let v = &self.nodes[s];
            if v.kind != want.kind || v.mu as usize != want.mu {
                errs.push(format!(
                    "vertex {s}: expected {:?} mu={}, found {:?} mu={}",
                    want.kind, want.mu, v.kind, v.mu
                ));
                continue;
            }
            if want.kind == Kind::Closed && v.mu_prime as usize != want.mu_prime {
                errs.push(format!(
                    "vertex {s}: expected mu'={}, found {}",
                    want.mu_prime, v.mu_prime
                ));
                continue;
            }
            if want.kind == Kind::Open && v.mu_prime != NIL {
                errs.push(format!("open vertex {s} carries mu'"));
            }
            if let Some(h) = hist.get_mut(v.depth as usize) {
                *h += 1;
            } else {
                errs.push(format!("vertex {s}: depth {} beyond histogram", v.depth));
            }
            let frag = enumerate_fragment(base, want);
            if frag.len() != v.weight as usize {
                errs.push(format!(
                    "vertex {s}: weight {} but fragment has {} vertices",
                    v.weight,
                    frag.len()
                ));
            }
            match v.children() {
                None => {
                    leaves += 1;
                    if frag.len() != 1 {
                        errs.push(format!("leaf {s} owns {} base vertices", frag.len()));
                    }
                    if self.leaf_index.get(v.mu as usize).copied() != Some(s as u32) {
                        errs.push(format!(
                            "leaf index of base vertex {} does not point to leaf {s}",
                            v.mu
                        ));
                    }
                    match v.kind {
                        Kind::Open if base.children(v.mu as usize).is_some() => {
                            errs.push(format!("open leaf {s} has non-leaf mu {}", v.mu))
                        }
                        Kind::Closed
                            if v.mu != v.mu_prime || base.children(v.mu as usize).is_none() =>
                        {
                            errs.push(format!("closed leaf {s} must have mu = mu' internal"))
                        }
                        _ => {}
                    }
                }
                Some(cs) => {
                    let xi = v.xi as usize;
                    if v.xi == NIL
                        || !base.contains(xi)
                        || base.children(xi).is_none()
                        || !frag.contains(&xi)
                        || xi == want.mu_prime
                    {
                        errs.push(format!(
                            "vertex {s}: split vertex {} is not an internal fragment vertex",
                            v.xi
                        ));
                        continue;
                    }
                    let toward = toward_hole(base, want, xi);
                    if want.kind == Kind::Closed && toward.is_none() {
                        errs.push(format!(
                            "vertex {s}: split vertex {xi} is off the mu..mu' path"
                        ));
                        continue;
                    }
                    for (slot, &c) in cs.iter().enumerate() {
                        let cv = &self.nodes[c];
                        if cv.parent as usize != s || cv.depth != v.depth + 1 {
                            errs.push(format!("vertex {c}: bad parent/depth link under {s}"));
                        }
                        stack.push((c, child_fragment(base, want, xi, toward, slot)));
                    }
                }
            }
        }
        if hist != self.depth_hist {
            errs.push("depth histogram out of sync".into());
        }
        if leaves != self.size {
            errs.push(format!(
                "{leaves} TST leaves for {} base vertices",
                self.size
            ));
        }
        errs
    }

    fn unbalanced(&self, s: usize) -> bool {
        let v = &self.nodes[s];
        if v.is_leaf() {
            return false;
        }
        v.children.iter().any(|&c| {
            let cv = &self.nodes[c as usize];
            // a closed vertex cannot choose the size of its open child
            if v.kind == Kind::Closed && cv.kind == Kind::Open {
                return false;
            }
            3 * cv.weight as u64 > 2 * v.weight as u64 + 3
        })
    }

    fn refresh_upward<A: Aggregator<Value = V>>(&mut self, agg: &A, mut x: u32) {
        while x != NIL {
            let s = x as usize;
            let cs = self.nodes[s].children;
            let value = agg.combine(
                &self.nodes[s],
                [
                    (&self.nodes[cs[0] as usize], &self.aggs[cs[0] as usize]),
                    (&self.nodes[cs[1] as usize], &self.aggs[cs[1] as usize]),
                    (&self.nodes[cs[2] as usize], &self.aggs[cs[2] as usize]),
                ],
            );
            self.aggs[s] = value;
            x = self.nodes[s].parent;
        }
    }

    fn rebuild<B, A>(&mut self, base: &B, agg: &A, s: usize)
    where
        B: BaseTree,
        A: Aggregator<Value = V>,
    {
        if self.leaf_index.len() < base.id_bound() {
            self.leaf_index.resize(base.id_bound(), NIL);
        }
        if self.sub.len() < base.id_bound() {
            self.sub.resize(base.id_bound(), 0);
        }
        let v = &self.nodes[s];
        let frag = Fragment {
            kind: v.kind,
            mu: v.mu as usize,
            mu_prime: opt(v.mu_prime).unwrap_or(usize::MAX),
        };
        let parent = v.parent;
        let depth = v.depth;
        let slot = (parent != NIL).then(|| {
            self.nodes[parent as usize]
                .children
                .iter()
                .position(|&c| c as usize == s)
                .expect("child linked from parent")
        });
        // free the old subtree
        let mut stack = vec![s as u32];
        while let Some(x) = stack.pop() {
            let xv = &mut self.nodes[x as usize];
            if xv.children[0] != NIL {
                stack.extend(xv.children);
            }
            self.depth_hist[xv.depth as usize] -= 1;
            xv.parent = NIL;
            xv.children = [NIL; 3];
            self.free.push(x);
        }
        let fresh = self.build_fragment(base, agg, frag, parent, depth);
        match slot {
            Some(i) => self.nodes[parent as usize].children[i] = fresh,
            None => self.root = fresh,
        }
    }

    fn alloc(&mut self, vertex: TstVertex) -> u32 {
        let depth = vertex.depth as usize;
        if self.depth_hist.len() <= depth {
            self.depth_hist.resize(depth + 1, 0);
        }
        self.depth_hist[depth] += 1;
        match self.free.pop() {
            Some(id) => {
                self.nodes[id as usize] = vertex;
                id
            }
            None => {
                self.nodes.push(vertex);
                self.aggs.push(V::default());
                (self.nodes.len() - 1) as u32
            }
        }
    }

    fn alloc_leaf(&mut self, kind: Kind, mu: usize, mu_prime: u32, parent: u32, depth: u32) -> u32 {
        let id = self.alloc(TstVertex {
            kind,
            mu: mu as u32,
            mu_prime,
            xi: NIL,
            children: [NIL; 3],
            parent,
            depth,
            weight: 1,
        });
        self.leaf_index[mu] = id;
        id
    }

    fn build_fragment<B, A>(
        &mut self,
        base: &B,
        agg: &A,
        frag: Fragment,
        parent: u32,
        depth: u32,
    ) -> u32
    where
        B: BaseTree,
        A: Aggregator<Value = V>,
    {
        let order = enumerate_fragment(base, frag);
        let w = order.len() as u32;
        if w == 1 {
            let mu_prime = if frag.kind == Kind::Closed {
                frag.mu_prime as u32
            } else {
                NIL
            };
            let id = self.alloc_leaf(frag.kind, frag.mu, mu_prime, parent, depth);
            self.aggs[id as usize] = agg.leaf(&self.nodes[id as usize]);
            return id;
        }
        // subtree sizes restricted to the fragment
        for &x in order.iter().rev() {
            let mut total = 1;
            if x != frag.mu_prime {
                if let Some([l, r]) = base.children(x) {
                    total += self.sub[l] + self.sub[r];
                }
            }
            self.sub[x] = total;
        }
        let mut toward = None;
        let xi = match frag.kind {
            Kind::Open => {
                order
                    .iter()
                    .copied()
                    .filter_map(|x| {
                        let [l, r] = base.children(x)?;
                        let (sl, sr) = (self.sub[l], self.sub[r]);
                        Some(((sl.max(sr).max(w - sl - sr)), x))
                    })
                    .min()
                    .expect("fragment with more than one vertex has an internal vertex")
                    .1
            }
            Kind::Closed => {
                let mut best: Option<((u32, u32, usize), usize, usize)> = None;
                let mut below = frag.mu_prime;
                while below != frag.mu {
                    let x = base.parent(below).expect("mu' lies below mu");
                    let [l, r] = base.children(x).expect("internal");
                    let hang = if l == below { r } else { l };
                    let (sb, sh) = (self.sub[below], self.sub[hang]);
                    let above = w - sb - sh;
                    let key = (above.max(sb), above.max(sb).max(sh), x);
                    if best.is_none_or(|(k, _, _)| key < k) {
                        best = Some((key, x, below));
                    }
                    below = x;
                }
                let (_, x, b) = best.expect("closed fragment with more than one vertex");
                toward = Some(b);
                x
            }
        };
        let id = self.alloc(TstVertex {
            kind: frag.kind,
            mu: frag.mu as u32,
            mu_prime: if frag.kind == Kind::Closed {
                frag.mu_prime as u32
            } else {
                NIL
            },
            xi: xi as u32,
            children: [NIL; 3],
            parent,
            depth,
            weight: w,
        });
        let mut cs = [NIL; 3];
        for (slot, c) in cs.iter_mut().enumerate() {
            let cf = child_fragment(base, frag, xi, toward, slot);
            *c = self.build_fragment(base, agg, cf, id, depth + 1);
        }
        self.nodes[id as usize].children = cs;
        let value = agg.combine(
            &self.nodes[id as usize],
            [
                (&self.nodes[cs[0] as usize], &self.aggs[cs[0] as usize]),
                (&self.nodes[cs[1] as usize], &self.aggs[cs[1] as usize]),
                (&self.nodes[cs[2] as usize], &self.aggs[cs[2] as usize]),
            ],
        );
        self.aggs[id as usize] = value;
        id
    }
}

// `toward` is the child of `xi` leading to the hole of a closed parent.
fn child_fragment<B: BaseTree>(
    base: &B,
    parent: Fragment,
    xi: usize,
    toward: Option<usize>,
    slot: usize,
) -> Fragment {
    let [l, r] = base.children(xi).expect("split vertex is internal");
    let side = |c: usize| {
        if parent.kind == Kind::Closed && toward == Some(c) {
            Fragment {
                kind: Kind::Closed,
                mu: c,
                mu_prime: parent.mu_prime,
            }
        } else {
            Fragment {
                kind: Kind::Open,
                mu: c,
                mu_prime: usize::MAX,
            }
        }
    };
    match slot {
        1 => Fragment {
            kind: Kind::Closed,
            mu: parent.mu,
            mu_prime: xi,
        },
        0 => side(l),
        _ => side(r),
    }
}

// The child of `xi` on the path from `xi` down to `frag.mu_prime`, if `xi`
// lies strictly above the hole on that path. Walks only inside the fragment.
fn toward_hole<B: BaseTree>(base: &B, frag: Fragment, xi: usize) -> Option<usize> {
    if frag.kind != Kind::Closed {
        return None;
    }
    let mut below = frag.mu_prime;
    while below != frag.mu {
        let x = base.parent(below)?;
        if x == xi {
            return Some(below);
        }
        below = x;
    }
    None
}

fn enumerate_fragment<B: BaseTree>(base: &B, frag: Fragment) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![frag.mu];
    while let Some(x) = stack.pop() {
        out.push(x);
        if frag.kind == Kind::Closed && x == frag.mu_prime {
            continue;
        }
        if let Some([l, r]) = base.children(x) {
            stack.push(r);
            stack.push(l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three() -> BinaryTree {
        BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap()
    }

    fn random_tree(leaves: usize, rng: &mut impl Rng) -> BinaryTree {
        let mut t = three();
        while t.len().div_ceil(2) < leaves {
            let u = rng.random_range(1..t.len());
            t.splice(u, rng.random_bool(0.5)).unwrap();
        }
        t
    }

    // quadratic reference: is u2 strictly below the left/right child of u?
    fn brute_side(t: &BinaryTree, u: usize, u2: usize) -> Side {
        match t.children(u) {
            Some([l, _]) if t.is_descendant(l, u2) => Side::Left,
            Some([_, r]) if t.is_descendant(r, u2) => Side::Right,
            _ => Side::Neither,
        }
    }

    #[test]
    fn three_vertex_shape() {
        let t = three();
        let tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let root = tst.vertex(tst.root());
        assert_eq!(root.kind, Kind::Open);
        assert_eq!(root.xi(), Some(0));
        let [l, c, r] = root.children().unwrap();
        assert_eq!((tst.vertex(l).kind, tst.vertex(l).mu()), (Kind::Open, 1));
        assert_eq!((tst.vertex(r).kind, tst.vertex(r).mu()), (Kind::Open, 2));
        let cv = tst.vertex(c);
        assert_eq!(
            (cv.kind, cv.mu(), cv.mu_prime()),
            (Kind::Closed, 0, Some(0))
        );
        assert!(cv.is_leaf());
        assert_eq!(tst.leaf_of(1).unwrap(), l);
        assert_eq!(tst.leaf_of(0).unwrap(), c);
        assert!(tst.check(&t).is_empty());
    }

    #[test]
    fn singleton_is_open_leaf() {
        let t = BinaryTree::singleton();
        let tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let v = tst.vertex(tst.root());
        assert!(v.is_leaf());
        assert_eq!(v.kind, Kind::Open);
        assert_eq!(tst.height(), 0);
    }

    #[test]
    fn non_full_tree_rejected() {
        let err = BinaryTree::from_children(&[vec![1], vec![]]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        let err = BinaryTree::from_children(&[vec![1, 2, 3], vec![], vec![], vec![]]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn unknown_vertex_lookup_fails() {
        let tst: Tst<()> = Tst::build(&three(), &NoAggregate).unwrap();
        assert!(matches!(tst.leaf_of(7), Err(Error::Lookup(_))));
    }

    #[test]
    fn lca_basics() {
        let tst: Tst<()> = Tst::build(&three(), &NoAggregate).unwrap();
        let a = tst.leaf_of(1).unwrap();
        let b = tst.leaf_of(2).unwrap();
        assert_eq!(tst.lca(a, a).unwrap(), a);
        assert_eq!(tst.lca(a, b).unwrap(), tst.root());
    }

    #[test]
    fn lca_matches_ancestor_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tree(200, &mut rng);
        let tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let ancestors = |mut s: usize| {
            let mut v = vec![s];
            while let Some(p) = tst.vertex(s).parent() {
                v.push(p);
                s = p;
            }
            v
        };
        for _ in 0..500 {
            let a = tst.leaf_of(rng.random_range(0..t.len())).unwrap();
            let b = tst.leaf_of(rng.random_range(0..t.len())).unwrap();
            let (aa, bb) = (ancestors(a), ancestors(b));
            let want = *aa
                .iter()
                .filter(|x| bb.contains(x))
                .max_by_key(|&&x| tst.vertex(x).depth())
                .unwrap();
            assert_eq!(tst.lca(a, b).unwrap(), want);
        }
    }

    #[test]
    fn lca_rejects_foreign_vertices() {
        let tst: Tst<()> = Tst::build(&three(), &NoAggregate).unwrap();
        assert!(matches!(tst.lca(0, 99), Err(Error::Structure(_))));
    }

    #[test]
    fn splice_into_three_vertex_tree() {
        let mut t = three();
        let mut tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let (i, l) = t.splice(1, true).unwrap();
        tst.insert_splice(&t, i, l, &NoAggregate).unwrap();
        assert_eq!(tst.size(), 5);
        assert!(tst.check(&t).is_empty(), "{:?}", tst.check(&t));
        for u in 0..5 {
            assert_eq!(tst.vertex(tst.leaf_of(u).unwrap()).mu(), u);
        }
    }

    #[test]
    fn bad_splice_shape_rejected() {
        let mut t = three();
        let mut tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let (i, l) = t.splice(2, false).unwrap();
        // arguments swapped: the "leaf" is internal
        assert!(matches!(
            tst.insert_splice(&t, l, i, &NoAggregate),
            Err(Error::Structure(_))
        ));
        tst.insert_splice(&t, i, l, &NoAggregate).unwrap();
        // second registration of the same splice
        assert!(tst.insert_splice(&t, i, l, &NoAggregate).is_err());
    }

    #[test]
    fn random_build_is_valid_and_shallow() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tree(512, &mut rng);
        assert_eq!(t.len(), 1023);
        let tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        assert!(tst.check(&t).is_empty());
        assert!((tst.height() as f64) <= height_bound(t.len()));
        for u in 0..t.len() {
            assert_eq!(tst.vertex(tst.leaf_of(u).unwrap()).mu(), u);
        }
    }

    #[test]
    fn fragments_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = random_tree(64, &mut rng);
        let mut tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        for _ in 0..150 {
            let u = rng.random_range(1..t.len());
            let (i, l) = t.splice(u, rng.random_bool(0.5)).unwrap();
            tst.insert_splice(&t, i, l, &NoAggregate).unwrap();
        }
        assert!(t.len() <= 512);
        let mut stack = vec![tst.root()];
        while let Some(s) = stack.pop() {
            if let Some(cs) = tst.vertex(s).children() {
                let mut whole = tst.fragment(&t, s);
                let mut parts: Vec<usize> = cs.iter().flat_map(|&c| tst.fragment(&t, c)).collect();
                whole.sort_unstable();
                parts.sort_unstable();
                assert_eq!(
                    whole, parts,
                    "fragment of {s} is not partitioned by its children"
                );
                stack.extend(cs);
            }
        }
    }

    #[test]
    fn side_matches_brute_force_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = random_tree(20, &mut rng);
        let mut tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        for round in 0..40 {
            for u in 0..t.len() {
                for u2 in 0..t.len() {
                    assert_eq!(
                        tst.side(u, u2).unwrap(),
                        brute_side(&t, u, u2),
                        "round {round} ({u},{u2})"
                    );
                }
            }
            let u = rng.random_range(1..t.len());
            let (i, l) = t.splice(u, rng.random_bool(0.5)).unwrap();
            tst.insert_splice(&t, i, l, &NoAggregate).unwrap();
        }
    }

    #[test]
    fn spine_insertions_stay_balanced() {
        let mut t = three();
        let mut tst: Tst<()> = Tst::build(&t, &NoAggregate).unwrap();
        let mut tip = 2;
        for _ in 0..2000 {
            let (i, l) = t.splice(tip, false).unwrap();
            tst.insert_splice(&t, i, l, &NoAggregate).unwrap();
            tip = l;
            assert!((tst.height() as f64) <= height_bound(t.len()));
        }
        assert!(tst.check(&t).is_empty());
    }

    #[derive(Default, Clone, Debug, PartialEq)]
    struct Count(usize);

    struct Counter;
    impl Aggregator for Counter {
        type Value = Count;
        fn leaf(&self, _: &TstVertex) -> Count {
            Count(1)
        }
        fn combine(&self, _: &TstVertex, cs: [(&TstVertex, &Count); 3]) -> Count {
            Count(cs.iter().map(|(_, c)| c.0).sum())
        }
    }

    #[test]
    fn aggregates_follow_restructuring() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut t = three();
        let mut tst: Tst<Count> = Tst::build(&t, &Counter).unwrap();
        for _ in 0..3000 {
            let u = rng.random_range(1..t.len());
            let (i, l) = t.splice(u, rng.random_bool(0.5)).unwrap();
            tst.insert_splice(&t, i, l, &Counter).unwrap();
            assert_eq!(tst.aggregate(tst.root()).0, t.len());
        }
        for s in 0..tst.nodes.len() {
            if tst.nodes[s].parent != NIL || s == tst.root() {
                assert_eq!(tst.aggregate(s).0, tst.vertex(s).weight());
            }
        }
    }
}
