//! Four-level parent-child quadtree rooted at each 5x anchor.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Patch side in pixels at every level.
pub const PATCH: usize = 512;
/// Native (40x) pixels covered by one 5x anchor.
pub const ANCHOR_NATIVE: usize = 4096;
/// Patches per anchor: 1 + 4 + 16 + 64.
pub const BAG_SIZE: usize = 85;
/// Immediate parent-child edges per anchor.
pub const EDGES_PER_ANCHOR: usize = 84;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    X5,
    X10,
    X20,
    X40,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::X5, Level::X10, Level::X20, Level::X40];

    pub fn magnification(self) -> u32 {
        match self {
            Level::X5 => 5,
            Level::X10 => 10,
            Level::X20 => 20,
            Level::X40 => 40,
        }
    }

    pub fn from_magnification(m: u32) -> Result<Level> {
        match m {
            5 => Ok(Level::X5),
            10 => Ok(Level::X10),
            20 => Ok(Level::X20),
            40 => Ok(Level::X40),
            _ => Err(Error::InvalidArgument(alloc::format!(
                "magnification must be one of 5, 10, 20, 40, got {m}"
            ))),
        }
    }

    /// 0 for 5x up to 3 for 40x.
    pub fn depth(self) -> usize {
        self as usize
    }

    /// Patches per side within one anchor.
    pub fn grid(self) -> usize {
        1 << self.depth()
    }

    /// Native pixels per patch pixel.
    pub fn scale(self) -> usize {
        8 >> self.depth()
    }

    /// Native side of one patch footprint.
    pub fn footprint(self) -> usize {
        PATCH * self.scale()
    }

    /// Row offset of this level's first member in level-major order.
    pub fn offset(self) -> usize {
        [0, 1, 5, 21][self.depth()]
    }

    pub fn coarser(self) -> Option<Level> {
        match self {
            Level::X5 => None,
            Level::X10 => Some(Level::X5),
            Level::X20 => Some(Level::X10),
            Level::X40 => Some(Level::X20),
        }
    }

    pub fn finer(self) -> Option<Level> {
        match self {
            Level::X5 => Some(Level::X10),
            Level::X10 => Some(Level::X20),
            Level::X20 => Some(Level::X40),
            Level::X40 => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.magnification())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchId {
    pub slide: u32,
    pub anchor: u32,
    pub level: Level,
    pub row: u8,
    pub col: u8,
}

impl PatchId {
    pub fn anchor(slide: u32, anchor: u32) -> PatchId {
        PatchId {
            slide,
            anchor,
            level: Level::X5,
            row: 0,
            col: 0,
        }
    }

    pub fn new(slide: u32, anchor: u32, level: Level, row: usize, col: usize) -> Result<PatchId> {
        if row >= level.grid() || col >= level.grid() {
            return Err(Error::OutOfRange(alloc::format!(
                "({row}, {col}) outside the {0}x{0} grid at {level}",
                level.grid()
            )));
        }
        Ok(PatchId {
            slide,
            anchor,
            level,
            row: row as u8,
            col: col as u8,
        })
    }

    /// Position in the level-major member order of its bag.
    pub fn member_index(&self) -> usize {
        let g = self.level.grid();
        self.level.offset() + self.row as usize * g + self.col as usize
    }

    pub fn parent(&self) -> Option<PatchId> {
        let level = self.level.coarser()?;
        Some(PatchId {
            level,
            row: self.row / 2,
            col: self.col / 2,
            ..*self
        })
    }

    pub fn children(&self) -> Option<[PatchId; 4]> {
        let level = self.level.finer()?;
        let (r, c) = (self.row * 2, self.col * 2);
        let mk = |dr: u8, dc: u8| PatchId {
            level,
            row: r + dr,
            col: c + dc,
            ..*self
        };
        Some([mk(0, 0), mk(0, 1), mk(1, 0), mk(1, 1)])
    }

    /// Native-pixel footprint `(y, x, side)` given the anchor's native origin.
    pub fn footprint(&self, origin: (usize, usize)) -> (usize, usize, usize) {
        let side = self.level.footprint();
        (
            origin.0 + self.row as usize * side,
            origin.1 + self.col as usize * side,
            side,
        )
    }
}

/// Quadtree of one anchor: members in level-major order plus adjacency by
/// member position.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTree {
    pub anchor: PatchId,
    /// native `(y, x)` of the anchor's top-left corner
    pub origin: (usize, usize),
    pub members: Vec<PatchId>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Option<[usize; 4]>>,
}

impl AnchorTree {
    /// Immediate `(parent, child)` member-index pairs, level by level.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(EDGES_PER_ANCHOR);
        for (p, ch) in self.children.iter().enumerate() {
            if let Some(ch) = ch {
                for &c in ch {
                    out.push((p, c));
                }
            }
        }
        out
    }

    pub fn level_members(&self, level: Level) -> core::ops::Range<usize> {
        let n = level.grid() * level.grid();
        level.offset()..level.offset() + n
    }
}

/// Builds the 85-node quadtree below a 5x anchor.
pub fn expand_children(anchor: PatchId, origin: (usize, usize)) -> Result<AnchorTree> {
    if anchor.level != Level::X5 || anchor.row != 0 || anchor.col != 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "expand_children needs a 5x anchor, got {} ({}, {})",
            anchor.level,
            anchor.row,
            anchor.col
        )));
    }
    let mut members = Vec::with_capacity(BAG_SIZE);
    for level in Level::ALL {
        let g = level.grid();
        for r in 0..g {
            for c in 0..g {
                members.push(PatchId::new(anchor.slide, anchor.anchor, level, r, c)?);
            }
        }
    }
    let parent = members.iter().map(|m| m.parent().map(|p| p.member_index())).collect();
    let children = members
        .iter()
        .map(|m| m.children().map(|ch| ch.map(|c| c.member_index())))
        .collect();
    Ok(AnchorTree {
        anchor,
        origin,
        members,
        parent,
        children,
    })
}

/// Quadtrees of every sampled anchor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchIndex {
    pub trees: Vec<AnchorTree>,
}

impl PatchIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tree: AnchorTree) {
        self.trees.push(tree);
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn tree(&self, slide: u32, anchor: u32) -> Option<&AnchorTree> {
        self.trees
            .iter()
            .find(|t| t.anchor.slide == slide && t.anchor.anchor == anchor)
    }

    pub fn parent(&self, id: &PatchId) -> Option<PatchId> {
        let t = self.tree(id.slide, id.anchor)?;
        let p = t.parent[id.member_index()]?;
        Some(t.members[p])
    }

    pub fn children(&self, id: &PatchId) -> Option<[PatchId; 4]> {
        let t = self.tree(id.slide, id.anchor)?;
        let ch = t.children[id.member_index()]?;
        Some(ch.map(|c| t.members[c]))
    }

    /// Checks counts and mutual consistency of every tree.
    pub fn validate(&self) -> Result<()> {
        for t in &self.trees {
            if t.members.len() != BAG_SIZE {
                return Err(Error::InvalidArgument(alloc::format!(
                    "anchor {}/{} has {} members",
                    t.anchor.slide,
                    t.anchor.anchor,
                    t.members.len()
                )));
            }
            for (i, m) in t.members.iter().enumerate() {
                if m.member_index() != i {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "member {i} out of level-major order"
                    )));
                }
                match (m.level, t.parent[i]) {
                    (Level::X5, None) => {}
                    (Level::X5, Some(_)) | (_, None) => {
                        return Err(Error::InvalidArgument(alloc::format!("bad parent link at member {i}")))
                    }
                    (_, Some(p)) => {
                        let ok = t.children[p].is_some_and(|ch| ch.contains(&i));
                        if !ok {
                            return Err(Error::InvalidArgument(alloc::format!(
                                "member {i} missing from its parent's children"
                            )));
                        }
                    }
                }
            }
            if t.edges().len() != EDGES_PER_ANCHOR {
                return Err(Error::InvalidArgument("edge count is not 84".into()));
            }
        }
        Ok(())
    }
}
