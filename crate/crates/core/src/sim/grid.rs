use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn step(self, heading: Heading) -> Cell {
        let (dx, dy) = heading.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn offset(self, by: Cell) -> Cell {
        Cell::new(self.x + by.x, self.y + by.y)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn neighbors(self) -> impl Iterator<Item = Cell> {
        Heading::ALL.into_iter().map(move |h| self.step(h))
    }

    pub fn heading_to(self, next: Cell) -> Option<Heading> {
        Heading::ALL.into_iter().find(|h| self.step(*h) == next)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Compass heading; `y` grows southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heading {
    #[default]
    North,
    East,
    South,
    West,
}

impl Heading {
    /// Neighbour expansion order everywhere in the simulator.
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Occupancy {
    Free,
    Static,
    Object(EntityId),
}

impl Occupancy {
    pub fn blocks(self) -> bool {
        !matches!(self, Occupancy::Free)
    }
}

/// Occupancy grid whose border cells are always static.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Occupancy>,
}

impl GridMap {
    pub fn new(width: usize, height: usize) -> Self {
        let mut grid = GridMap {
            width,
            height,
            cells: vec![Occupancy::Free; width * height],
        };
        for x in 0..width as i32 {
            grid.cells[x as usize] = Occupancy::Static;
            let bottom = grid.index(Cell::new(x, height as i32 - 1));
            grid.cells[bottom] = Occupancy::Static;
        }
        for y in 0..height as i32 {
            let left = grid.index(Cell::new(0, y));
            let right = grid.index(Cell::new(width as i32 - 1, y));
            grid.cells[left] = Occupancy::Static;
            grid.cells[right] = Occupancy::Static;
        }
        grid
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    fn is_border(&self, c: Cell) -> bool {
        c.x == 0 || c.y == 0 || c.x as usize == self.width - 1 || c.y as usize == self.height - 1
    }

    fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn get(&self, c: Cell) -> Option<Occupancy> {
        self.in_bounds(c).then(|| self.cells[self.index(c)])
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.get(c) == Some(Occupancy::Free)
    }

    /// Sets a cell; border cells stay static.
    pub fn set(&mut self, c: Cell, occ: Occupancy) {
        if self.in_bounds(c) && !self.is_border(c) {
            let i = self.index(c);
            self.cells[i] = occ;
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, Occupancy)> + '_ {
        (0..self.height as i32).flat_map(move |y| {
            (0..self.width as i32).map(move |x| {
                let c = Cell::new(x, y);
                (c, self.cells[self.index(c)])
            })
        })
    }
}

/// Breadth-first shortest path from `start` to the first cell satisfying
/// `is_goal`, expanding neighbours in [`Heading::ALL`] order. The returned
/// path excludes `start`; an empty path means `start` is already a goal.
pub fn shortest_path(
    grid: &GridMap,
    start: Cell,
    is_goal: impl Fn(Cell) -> bool,
    passable: impl Fn(Cell) -> bool,
) -> Option<Vec<Cell>> {
    if is_goal(start) {
        return Some(Vec::new());
    }
    let mut parent: Vec<Option<Cell>> = vec![None; grid.width * grid.height];
    let mut seen = vec![false; grid.width * grid.height];
    seen[grid.index(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        for next in cur.neighbors() {
            if !grid.in_bounds(next) || seen[grid.index(next)] {
                continue;
            }
            let goal = is_goal(next);
            if !goal && !passable(next) {
                continue;
            }
            seen[grid.index(next)] = true;
            parent[grid.index(next)] = Some(cur);
            if goal {
                let mut path = vec![next];
                let mut at = cur;
                while at != start {
                    path.push(at);
                    at = parent[grid.index(at)].expect("bfs parent");
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_is_static_and_sticky() {
        let mut g = GridMap::new(5, 4);
        assert_eq!(g.get(Cell::new(0, 0)), Some(Occupancy::Static));
        assert_eq!(g.get(Cell::new(4, 3)), Some(Occupancy::Static));
        assert!(g.is_free(Cell::new(2, 2)));
        g.set(Cell::new(0, 2), Occupancy::Free);
        assert_eq!(g.get(Cell::new(0, 2)), Some(Occupancy::Static));
        assert_eq!(g.get(Cell::new(5, 0)), None);
    }

    #[test]
    fn bfs_length_matches_manhattan_in_open_room() {
        let g = GridMap::new(10, 10);
        let start = Cell::new(1, 1);
        let goal = Cell::new(7, 5);
        let path = shortest_path(&g, start, |c| c == goal, |c| g.is_free(c)).unwrap();
        assert_eq!(path.len() as u32, start.manhattan(goal));
        assert_eq!(*path.last().unwrap(), goal);
    }

    #[test]
    fn bfs_routes_around_walls() {
        let mut g = GridMap::new(7, 7);
        for y in 1..5 {
            g.set(Cell::new(3, y), Occupancy::Static);
        }
        let path = shortest_path(&g, Cell::new(1, 1), |c| c == Cell::new(5, 1), |c| g.is_free(c)).unwrap();
        // down to row 5, across, back up
        assert_eq!(path.len(), 4 + 4 + 4);
        g.set(Cell::new(3, 5), Occupancy::Static);
        assert!(shortest_path(&g, Cell::new(1, 1), |c| c == Cell::new(5, 1), |c| g.is_free(c)).is_none());
    }
}
