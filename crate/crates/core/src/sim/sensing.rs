use serde::Serialize;

use super::grid::{Cell, GridMap, Occupancy};
use super::world::{ObjectModel, World};
use crate::skill::Tick;

/// Cells on the Bresenham line from `a` to `b`, both endpoints included.
pub fn line(a: Cell, b: Cell) -> Vec<Cell> {
    let (dx, dy) = ((b.x - a.x).abs(), -(b.y - a.y).abs());
    let (sx, sy) = ((b.x - a.x).signum(), (b.y - a.y).signum());
    let mut err = dx + dy;
    let mut cur = a;
    let mut out = vec![cur];
    while cur != b {
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            cur.x += sx;
        }
        if e2 <= dx {
            err += dx;
            cur.y += sy;
        }
        out.push(cur);
    }
    out
}

fn within_radius(origin: Cell, target: Cell, radius: u32) -> bool {
    let (dx, dy) = ((target.x - origin.x) as i64, (target.y - origin.y) as i64);
    dx * dx + dy * dy <= (radius as i64) * (radius as i64)
}

/// A cell is visible when it lies within `radius` and no blocking cell
/// sits strictly between it and `origin` on the ray.
pub fn visible_from(grid: &GridMap, origin: Cell, radius: u32, target: Cell) -> bool {
    if !grid.in_bounds(target) || !within_radius(origin, target, radius) {
        return false;
    }
    let ray = line(origin, target);
    if ray.len() <= 2 {
        return true;
    }
    ray[1..ray.len() - 1]
        .iter()
        .all(|c| !grid.get(*c).is_some_and(Occupancy::blocks))
}

/// Occupancy as seen from one robot pose; `None` marks unseen cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SensorFrame {
    pub tick: Tick,
    pub origin: Cell,
    pub radius: u32,
    width: usize,
    height: usize,
    cells: Vec<Option<Occupancy>>,
}

impl SensorFrame {
    pub fn capture(grid: &GridMap, origin: Cell, radius: u32, tick: Tick) -> Self {
        let cells = grid
            .cells()
            .map(|(c, occ)| visible_from(grid, origin, radius, c).then_some(occ))
            .collect();
        SensorFrame {
            tick,
            origin,
            radius,
            width: grid.width(),
            height: grid.height(),
            cells,
        }
    }

    pub fn get(&self, c: Cell) -> Option<Occupancy> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
            return None;
        }
        self.cells[c.y as usize * self.width + c.x as usize]
    }

    pub fn is_visible(&self, c: Cell) -> bool {
        self.get(c).is_some()
    }

    pub fn visible_cells(&self) -> impl Iterator<Item = (Cell, Occupancy)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, occ)| {
            occ.map(|o| (Cell::new((i % self.width) as i32, (i / self.width) as i32), o))
        })
    }
}

pub fn sense_ground(world: &World) -> SensorFrame {
    SensorFrame::capture(&world.grid, world.robot.cell, world.config.visibility_radius, world.tick)
}

/// 4-connected clusters of visible cells whose occupancy differs from
/// `baseline`. Each cluster is in row-major order; clusters are ordered
/// by their first (top-left) cell.
pub fn ground_map_diff(baseline: &GridMap, frame: &SensorFrame) -> Vec<Vec<Cell>> {
    let changed = |c: Cell| frame.get(c).is_some_and(|occ| baseline.get(c) != Some(occ));
    let mut seen = std::collections::HashSet::new();
    let mut clusters = Vec::new();
    for (start, _) in frame.visible_cells() {
        if !changed(start) || !seen.insert(start) {
            continue;
        }
        let mut cluster = vec![start];
        let mut stack = vec![start];
        while let Some(cur) = stack.pop() {
            for n in cur.neighbors() {
                if changed(n) && seen.insert(n) {
                    cluster.push(n);
                    stack.push(n);
                }
            }
        }
        cluster.sort_by_key(|c| (c.y, c.x));
        clusters.push(cluster);
    }
    clusters
}

/// Movable when the object has a curved surface and at most two
/// accumulated degrees of freedom.
pub fn classify_movable(obj: &ObjectModel) -> bool {
    movable(obj.curved_surface, obj.dof)
}

pub fn movable(curved_surface: bool, dof: u32) -> bool {
    curved_surface && dof <= 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_endpoints_and_adjacency() {
        let l = line(Cell::new(1, 1), Cell::new(6, 3));
        assert_eq!(l[0], Cell::new(1, 1));
        assert_eq!(*l.last().unwrap(), Cell::new(6, 3));
        for w in l.windows(2) {
            assert!(w[0].x.abs_diff(w[1].x) <= 1 && w[0].y.abs_diff(w[1].y) <= 1);
        }
    }

    #[test]
    fn radius_zero_sees_only_own_cell() {
        let g = GridMap::new(8, 8);
        let f = SensorFrame::capture(&g, Cell::new(3, 3), 0, 0);
        let seen: Vec<_> = f.visible_cells().map(|(c, _)| c).collect();
        assert_eq!(seen, vec![Cell::new(3, 3)]);
    }

    #[test]
    fn occluder_hides_cells_behind_it() {
        let mut g = GridMap::new(12, 5);
        g.set(Cell::new(4, 2), Occupancy::Static);
        let f = SensorFrame::capture(&g, Cell::new(1, 2), 20, 0);
        assert!(f.is_visible(Cell::new(4, 2)));
        assert!(!f.is_visible(Cell::new(5, 2)));
        assert!(!f.is_visible(Cell::new(11, 2)));
        assert!(f.is_visible(Cell::new(3, 2)));
    }

    #[test]
    fn diff_is_empty_for_unchanged_grid() {
        let g = GridMap::new(10, 10);
        let f = SensorFrame::capture(&g, Cell::new(5, 5), 12, 0);
        assert!(ground_map_diff(&g, &f).is_empty());
    }

    #[test]
    fn movability_rule() {
        assert!(movable(true, 2));
        assert!(!movable(true, 3));
        assert!(!movable(false, 0));
    }
}
