//! Four-connected grid graph with static obstacles.
//!
//! Cells are addressed either by [`Vertex`] (row/column coordinates) or by a
//! dense `usize` index. The index form is what the solver and oracle use in
//! their inner loops; the vertex form is what crosses every public boundary.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid cell. `x` indexes `0..size_x`, `y` indexes `0..size_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Vertex {
    pub x: u32,
    pub y: u32,
}

impl Vertex {
    pub const fn new(x: u32, y: u32) -> Self {
        Vertex { x, y }
    }
}

impl From<[u32; 2]> for Vertex {
    fn from([x, y]: [u32; 2]) -> Self {
        Vertex { x, y }
    }
}

impl From<Vertex> for [u32; 2] {
    fn from(v: Vertex) -> Self {
        [v.x, v.y]
    }
}

impl From<(u32, u32)> for Vertex {
    fn from((x, y): (u32, u32)) -> Self {
        Vertex { x, y }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Manhattan distance between two cells.
pub fn manhattan(a: Vertex, b: Vertex) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid dimensions must be at least 1x1, got {size_x}x{size_y}")]
    InvalidDimensions { size_x: u32, size_y: u32 },
    #[error("obstacle {0} is out of bounds")]
    ObstacleOutOfBounds(Vertex),
    #[error("obstacle {0} listed more than once")]
    DuplicateObstacle(Vertex),
    #[error("grid has no free cells")]
    NoFreeCells,
    #[error("invalid argument: {0} is out of bounds or a static obstacle")]
    InvalidVertex(Vertex),
}

/// Immutable four-connected grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    size_x: u32,
    size_y: u32,
    blocked: Vec<bool>,
    obstacles: Vec<Vertex>,
}

impl GridGraph {
    pub fn new(
        size_x: u32,
        size_y: u32,
        obstacles: impl IntoIterator<Item = Vertex>,
    ) -> Result<Self, GridError> {
        if size_x == 0 || size_y == 0 {
            return Err(GridError::InvalidDimensions { size_x, size_y });
        }
        let mut blocked = vec![false; size_x as usize * size_y as usize];
        let mut list = Vec::new();
        for v in obstacles {
            if v.x >= size_x || v.y >= size_y {
                return Err(GridError::ObstacleOutOfBounds(v));
            }
            let i = (v.y * size_x + v.x) as usize;
            if blocked[i] {
                return Err(GridError::DuplicateObstacle(v));
            }
            blocked[i] = true;
            list.push(v);
        }
        if list.len() == blocked.len() {
            return Err(GridError::NoFreeCells);
        }
        Ok(GridGraph {
            size_x,
            size_y,
            blocked,
            obstacles: list,
        })
    }

    /// Obstacle-free grid.
    pub fn open(size_x: u32, size_y: u32) -> Result<Self, GridError> {
        Self::new(size_x, size_y, std::iter::empty())
    }

    pub fn size_x(&self) -> u32 {
        self.size_x
    }

    pub fn size_y(&self) -> u32 {
        self.size_y
    }

    /// Static obstacles in the order they were given.
    pub fn obstacles(&self) -> &[Vertex] {
        &self.obstacles
    }

    pub fn num_cells(&self) -> usize {
        self.blocked.len()
    }

    pub fn num_free(&self) -> usize {
        self.blocked.len() - self.obstacles.len()
    }

    pub fn in_bounds(&self, v: Vertex) -> bool {
        v.x < self.size_x && v.y < self.size_y
    }

    /// In bounds and not a static obstacle.
    pub fn is_free(&self, v: Vertex) -> bool {
        self.in_bounds(v) && !self.blocked[self.index(v)]
    }

    pub fn is_free_index(&self, i: usize) -> bool {
        !self.blocked[i]
    }

    pub fn is_perimeter(&self, v: Vertex) -> bool {
        v.x == 0 || v.y == 0 || v.x + 1 == self.size_x || v.y + 1 == self.size_y
    }

    /// Dense index of an in-bounds vertex.
    #[inline]
    pub fn index(&self, v: Vertex) -> usize {
        debug_assert!(self.in_bounds(v));
        (v.y * self.size_x + v.x) as usize
    }

    #[inline]
    pub fn vertex(&self, i: usize) -> Vertex {
        let i = i as u32;
        Vertex::new(i % self.size_x, i / self.size_x)
    }

    /// Free vertices in index order.
    pub fn free_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.blocked.len())
            .filter(|&i| !self.blocked[i])
            .map(|i| self.vertex(i))
    }

    /// Free neighbors in the fixed order (+x, -x, +y, -y).
    pub fn neighbors(&self, v: Vertex) -> Result<Vec<Vertex>, GridError> {
        if !self.is_free(v) {
            return Err(GridError::InvalidVertex(v));
        }
        Ok(self
            .neighbor_indices(self.index(v))
            .map(|i| self.vertex(i))
            .collect())
    }

    /// Index form of [`GridGraph::neighbors`]; `i` must be in range.
    #[inline]
    pub fn neighbor_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let sx = self.size_x as usize;
        let x = i % sx;
        let y = i / sx;
        let cand = [
            (x + 1 < sx).then(|| i + 1),
            (x > 0).then(|| i - 1),
            (y + 1 < self.size_y as usize).then(|| i + sx),
            (y > 0).then(|| i - sx),
        ];
        cand.into_iter().flatten().filter(move |&j| !self.blocked[j])
    }

    /// Whether `a` and `b` are joined by a grid edge.
    pub fn adjacent(&self, a: Vertex, b: Vertex) -> bool {
        manhattan(a, b) == 1
    }

    /// Breadth-first distances from `from` to every cell; `None` for static
    /// obstacles and unreachable cells.
    pub fn distances_from(&self, from: Vertex) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.blocked.len()];
        if !self.is_free(from) {
            return dist;
        }
        let s = self.index(from);
        dist[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap() + 1;
            for w in self.neighbor_indices(u) {
                if dist[w].is_none() {
                    dist[w] = Some(d);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Shortest obstacle-avoiding path length, or `None` when disconnected.
    pub fn grid_distance(&self, a: Vertex, b: Vertex) -> Option<u32> {
        if !self.is_free(a) || !self.is_free(b) {
            return None;
        }
        if a == b {
            return Some(0);
        }
        let target = self.index(b);
        let mut seen = vec![false; self.blocked.len()];
        let s = self.index(a);
        seen[s] = true;
        let mut queue = VecDeque::from([(s, 0u32)]);
        while let Some((u, d)) = queue.pop_front() {
            for w in self.neighbor_indices(u) {
                if w == target {
                    return Some(d + 1);
                }
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back((w, d + 1));
                }
            }
        }
        None
    }

    /// True when all free cells form one four-connected component.
    pub fn is_connected(&self) -> bool {
        let Some(first) = self.free_vertices().next() else {
            return false;
        };
        self.distances_from(first)
            .iter()
            .enumerate()
            .all(|(i, d)| self.blocked[i] || d.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: u32, y: u32) -> Vertex {
        Vertex::new(x, y)
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan(v(0, 0), v(2, 3)), 5);
        assert_eq!(manhattan(v(1, 1), v(1, 1)), 0);
        assert_eq!(manhattan(v(4, 0), v(0, 2)), 6);
    }

    #[test]
    fn neighbor_order_and_obstacles() {
        let g = GridGraph::open(3, 3).unwrap();
        assert_eq!(
            g.neighbors(v(1, 1)).unwrap(),
            vec![v(2, 1), v(0, 1), v(1, 2), v(1, 0)]
        );
        assert_eq!(g.neighbors(v(0, 0)).unwrap(), vec![v(1, 0), v(0, 1)]);

        let g = GridGraph::new(3, 3, [v(1, 0)]).unwrap();
        assert_eq!(g.neighbors(v(0, 0)).unwrap(), vec![v(0, 1)]);
        assert_eq!(g.neighbors(v(1, 0)), Err(GridError::InvalidVertex(v(1, 0))));
        assert_eq!(g.neighbors(v(3, 0)), Err(GridError::InvalidVertex(v(3, 0))));
    }

    #[test]
    fn grid_distance_examples() {
        let g = GridGraph::open(5, 5).unwrap();
        assert_eq!(g.grid_distance(v(0, 0), v(4, 4)), Some(8));

        let g = GridGraph::new(3, 1, [v(1, 0)]).unwrap();
        assert_eq!(g.grid_distance(v(0, 0), v(2, 0)), None);

        // ring of 8 cells around the centre pillar
        let g = GridGraph::new(3, 3, [v(1, 1)]).unwrap();
        assert_eq!(g.grid_distance(v(1, 0), v(1, 2)), Some(4));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            GridGraph::open(0, 3),
            Err(GridError::InvalidDimensions { .. })
        ));
        assert_eq!(
            GridGraph::new(2, 2, [v(2, 0)]),
            Err(GridError::ObstacleOutOfBounds(v(2, 0)))
        );
        assert_eq!(
            GridGraph::new(2, 2, [v(1, 0), v(1, 0)]),
            Err(GridError::DuplicateObstacle(v(1, 0)))
        );
        assert_eq!(
            GridGraph::new(1, 2, [v(0, 0), v(0, 1)]),
            Err(GridError::NoFreeCells)
        );
    }

    #[test]
    fn index_roundtrip() {
        let g = GridGraph::open(7, 4).unwrap();
        for i in 0..g.num_cells() {
            assert_eq!(g.index(g.vertex(i)), i);
        }
    }

    fn grid_and_pair() -> impl Strategy<Value = (GridGraph, Vertex, Vertex)> {
        (1u32..8, 1u32..8)
            .prop_flat_map(|(sx, sy)| {
                let n = (sx * sy) as usize;
                (
                    Just(sx),
                    Just(sy),
                    proptest::collection::vec(proptest::bool::weighted(0.25), n),
                    0..sx,
                    0..sy,
                    0..sx,
                    0..sy,
                )
            })
            .prop_filter_map("endpoints must be free", |(sx, sy, mask, ax, ay, bx, by)| {
                let a = Vertex::new(ax, ay);
                let b = Vertex::new(bx, by);
                let obstacles = (0..sx * sy)
                    .map(|i| Vertex::new(i % sx, i / sx))
                    .filter(|&o| mask[(o.y * sx + o.x) as usize] && o != a && o != b);
                let g = GridGraph::new(sx, sy, obstacles).ok()?;
                Some((g, a, b))
            })
    }

    proptest! {
        #[test]
        fn manhattan_is_a_metric(ax in 0u32..20, ay in 0u32..20, bx in 0u32..20, by in 0u32..20, cx in 0u32..20, cy in 0u32..20) {
            let (a, b, c) = (v(ax, ay), v(bx, by), v(cx, cy));
            prop_assert_eq!(manhattan(a, b), manhattan(b, a));
            prop_assert!(manhattan(a, c) <= manhattan(a, b) + manhattan(b, c));
            prop_assert_eq!(manhattan(a, b) == 0, a == b);
        }

        #[test]
        fn grid_distance_dominates_manhattan((g, a, b) in grid_and_pair()) {
            if let Some(d) = g.grid_distance(a, b) {
                prop_assert!(d >= manhattan(a, b));
            }
            if g.obstacles().is_empty() {
                prop_assert_eq!(g.grid_distance(a, b), Some(manhattan(a, b)));
            }
            prop_assert_eq!(g.grid_distance(a, b), g.distances_from(a)[g.index(b)]);
        }

        #[test]
        fn neighbors_are_deterministic_and_distinct((g, a, _b) in grid_and_pair()) {
            let n1 = g.neighbors(a).unwrap();
            let n2 = g.neighbors(a).unwrap();
            prop_assert_eq!(&n1, &n2);
            let set: std::collections::HashSet<_> = n1.iter().collect();
            prop_assert_eq!(set.len(), n1.len());
            prop_assert!(n1.len() <= 4);
            for n in n1 {
                prop_assert_eq!(manhattan(a, n), 1);
                prop_assert!(g.is_free(n));
            }
        }
    }
}
