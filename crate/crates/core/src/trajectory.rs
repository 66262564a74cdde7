//! The trajectory tree: a binarisation of the trial tree in which every
//! trial node hangs below its similar earlier trial.
//!
//! Vertex ids are dense and assigned in creation order: `Z_2` holds the root
//! `0`, its left leaf `1` (node `x_1`) and its right leaf `2` (node `x_2`).
//! Every [`TrajectoryTree::grow`] adds an internal vertex and then a leaf.

use crate::error::{Error, Result};
use crate::tst::{BaseTree, NoAggregate, Side, Tst, NIL};

#[derive(Debug, Clone)]
struct ZVertex {
    parent: u32,
    children: [u32; 2],
    gamma: u32,
    d: u32,
}

#[derive(Debug, Clone)]
struct Shape {
    verts: Vec<ZVertex>,
}

/// The growing binary tree `Z` together with its TST.
#[derive(Debug, Clone)]
pub struct TrajectoryTree {
    shape: Shape,
    // node id -> leaf vertex carrying it
    leaf_of_node: Vec<u32>,
    // node id -> similar earlier node
    parent_node: Vec<u32>,
    tst: Tst<()>,
}

impl TrajectoryTree {
    /// Builds `Z_2` from the first two trial nodes.
    pub fn new(x1: usize, x2: usize) -> Result<Self> {
        if x1 == x2 {
            return Err(Error::Precondition(format!(
                "first two nodes must differ, both are {x1}"
            )));
        }
        let v = |parent, children, gamma: usize, d| ZVertex {
            parent,
            children,
            gamma: gamma as u32,
            d,
        };
        let verts = vec![
            v(NIL, [1, 2], x1, 0),
            v(0, [NIL; 2], x1, 0),
            v(0, [NIL; 2], x2, 1),
        ];
        let bound = x1.max(x2) + 1;
        let mut leaf_of_node = vec![NIL; bound];
        leaf_of_node[x1] = 1;
        leaf_of_node[x2] = 2;
        let mut parent_node = vec![NIL; bound];
        parent_node[x2] = x1 as u32;
        let shape = Shape { verts };
        let tst = Tst::build(&shape, &NoAggregate)?;
        Ok(Self {
            shape,
            leaf_of_node,
            parent_node,
            tst,
        })
    }

    /// Adds trial node `x_t` below its similar node `parent_node` and
    /// returns the new leaf `u_t`. The new internal vertex is `u_t - 1`.
    pub fn grow(&mut self, x_t: usize, parent_node: usize) -> Result<usize> {
        let u = self.leaf_of(parent_node)?;
        if self.leaf_of(x_t).is_ok() {
            return Err(Error::Precondition(format!(
                "node {x_t} is already in the trajectory tree"
            )));
        }
        let up = self.shape.verts[u].parent;
        let u1 = self.shape.verts.len() as u32;
        let u2 = u1 + 1;
        let d = self.shape.verts[u].d;
        let slot = usize::from(self.shape.verts[up as usize].children[0] != u as u32);
        self.shape.verts[up as usize].children[slot] = u1;
        self.shape.verts.push(ZVertex {
            parent: up,
            children: [u2, u as u32],
            gamma: parent_node as u32,
            d,
        });
        self.shape.verts.push(ZVertex {
            parent: u1,
            children: [NIL; 2],
            gamma: x_t as u32,
            d: d + 1,
        });
        self.shape.verts[u].parent = u1;
        if self.leaf_of_node.len() <= x_t {
            self.leaf_of_node.resize(x_t + 1, NIL);
            self.parent_node.resize(x_t + 1, NIL);
        }
        self.leaf_of_node[x_t] = u2;
        self.parent_node[x_t] = parent_node as u32;
        self.tst
            .insert_splice(&self.shape, u1 as usize, u2 as usize, &NoAggregate)?;
        Ok(u2 as usize)
    }

    /// Where `u2` sits relative to `u`: below its left child, below its
    /// right child, or neither.
    pub fn nu(&self, u: usize, u2: usize) -> Result<Side> {
        self.tst.side(u, u2)
    }

    /// [`TrajectoryTree::nu`] plus the number of TST vertices visited.
    pub fn nu_counted(&self, u: usize, u2: usize) -> Result<(Side, usize)> {
        self.tst.side_counted(u, u2)
    }

    /// The leaf carrying trial node `x`.
    pub fn leaf_of(&self, x: usize) -> Result<usize> {
        match self.leaf_of_node.get(x) {
            Some(&u) if u != NIL => Ok(u as usize),
            _ => Err(Error::Lookup(format!(
                "node {x} is not in the trajectory tree"
            ))),
        }
    }

    /// The similar earlier node of `x` (`None` for the first node).
    pub fn parent_node(&self, x: usize) -> Option<usize> {
        self.parent_node
            .get(x)
            .copied()
            .filter(|&p| p != NIL)
            .map(|p| p as usize)
    }

    /// Trial nodes inserted so far, in no particular order.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.leaf_of_node
            .iter()
            .enumerate()
            .filter(|(_, &u)| u != NIL)
            .map(|(x, _)| x)
    }

    pub fn gamma(&self, u: usize) -> usize {
        self.shape.verts[u].gamma as usize
    }

    pub fn d(&self, u: usize) -> usize {
        self.shape.verts[u].d as usize
    }

    pub fn len(&self) -> usize {
        self.shape.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.verts.is_empty()
    }

    pub fn is_leaf(&self, u: usize) -> bool {
        self.shape.verts[u].children[0] == NIL
    }

    pub fn tst(&self) -> &Tst<()> {
        &self.tst
    }
}

impl BaseTree for Shape {
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

impl BaseTree for TrajectoryTree {
    fn root(&self) -> usize {
        0
    }
    fn parent(&self, u: usize) -> Option<usize> {
        self.shape.parent(u)
    }
    fn children(&self, u: usize) -> Option<[usize; 2]> {
        self.shape.children(u)
    }
    fn id_bound(&self) -> usize {
        self.shape.id_bound()
    }
    fn contains(&self, u: usize) -> bool {
        self.shape.contains(u)
    }
}
