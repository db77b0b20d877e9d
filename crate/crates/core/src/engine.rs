//! Two-state Moore-neighbourhood simulation on a finite, growable grid.
//!
//! Cells are packed 64 to a word along each row. A dead ring is kept around
//! the stored region, so for rules without B0 nothing outside the region can
//! ever be born and the finite grid behaves exactly like the unbounded plane.
//!
//! [`Grid::step`] computes neighbour counts with a bit-sliced adder over whole
//! words; [`Grid::step_reference`] counts neighbours one cell at a time and is
//! kept as the oracle for the fast path.

use std::fmt;

use thiserror::Error;

use crate::rules::Rule;

/// Extra cells added on each side whenever the region has to grow.
const GROW_MARGIN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("rule {0} contains B0; classify it and run the emulation plan instead")]
    BirthOnZero(Rule),
    #[error("cell ({x}, {y}) is outside the stored region")]
    OutsideRegion { x: i64, y: i64 },
}

/// Live neighbours of a cell, `0..=8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeighbourCount(u8);

impl NeighbourCount {
    pub fn new(value: u8) -> Option<Self> {
        (value <= 8).then_some(NeighbourCount(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// Inclusive rectangle of cell coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl Rect {
    pub fn width(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64
    }

    pub fn height(&self) -> u64 {
        (self.y_max - self.y_min + 1) as u64
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn expand(&self, by: i64) -> Rect {
        Rect {
            x_min: self.x_min - by,
            y_min: self.y_min - by,
            x_max: self.x_max + by,
            y_max: self.y_max + by,
        }
    }

    fn union(&self, other: &Rect) -> Rect {
        Rect {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    origin_x: i64,
    origin_y: i64,
    width: usize,
    height: usize,
    words_per_row: usize,
    cells: Vec<u64>,
    generation: u64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new()
    }
}

impl Grid {
    /// An empty grid with no stored region.
    pub fn new() -> Self {
        Grid {
            origin_x: 0,
            origin_y: 0,
            width: 0,
            height: 0,
            words_per_row: 0,
            cells: Vec::new(),
            generation: 0,
        }
    }

    /// An all-dead grid whose stored region is exactly `region`.
    pub fn with_region(region: Rect) -> Self {
        let width = region.width() as usize;
        let height = region.height() as usize;
        let words_per_row = width.div_ceil(64);
        Grid {
            origin_x: region.x_min,
            origin_y: region.y_min,
            width,
            height,
            words_per_row,
            cells: vec![0; words_per_row * height],
            generation: 0,
        }
    }

    pub fn from_cells<I: IntoIterator<Item = (i64, i64)>>(cells: I) -> Self {
        let cells: Vec<_> = cells.into_iter().collect();
        let mut grid = Grid::new();
        if let Some(bbox) = bounding_rect(&cells) {
            grid.reserve(bbox);
        }
        for (x, y) in cells {
            grid.set(x, y, true);
        }
        grid
    }

    /// Parses rows of `.` (dead) and `o` (live); row 0 is `y = 0`, column 0 is `x = 0`.
    pub fn from_plaintext(text: &str) -> Self {
        let cells = text.lines().enumerate().flat_map(|(y, line)| {
            line.chars()
                .enumerate()
                .filter(|&(_, c)| c == 'o' || c == 'O' || c == '*')
                .map(move |(x, _)| (x as i64, y as i64))
        });
        Grid::from_cells(cells)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_generation(&mut self, generation: u64) {
        self.generation = generation;
    }

    /// The stored region, or `None` when nothing is stored.
    pub fn region(&self) -> Option<Rect> {
        (self.width > 0 && self.height > 0).then(|| Rect {
            x_min: self.origin_x,
            y_min: self.origin_y,
            x_max: self.origin_x + self.width as i64 - 1,
            y_max: self.origin_y + self.height as i64 - 1,
        })
    }

    fn interior(&self) -> Option<Rect> {
        (self.width > 2 && self.height > 2).then(|| self.region().unwrap().expand(-1))
    }

    fn index(&self, x: i64, y: i64) -> Option<(usize, u32)> {
        let cx = x.checked_sub(self.origin_x)?;
        let cy = y.checked_sub(self.origin_y)?;
        if cx < 0 || cy < 0 || cx as usize >= self.width || cy as usize >= self.height {
            return None;
        }
        let (cx, cy) = (cx as usize, cy as usize);
        Some((cy * self.words_per_row + cx / 64, (cx % 64) as u32))
    }

    /// State of a cell; cells outside the stored region are dead.
    pub fn get(&self, x: i64, y: i64) -> bool {
        match self.index(x, y) {
            Some((word, bit)) => self.cells[word] >> bit & 1 == 1,
            None => false,
        }
    }

    pub fn set(&mut self, x: i64, y: i64, alive: bool) {
        if alive {
            let cell = Rect {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            };
            self.reserve(cell);
        }
        if let Some((word, bit)) = self.index(x, y) {
            if alive {
                self.cells[word] |= 1 << bit;
            } else {
                self.cells[word] &= !(1 << bit);
            }
        }
    }

    /// Grows the stored region so every cell of `area` lies strictly inside it.
    pub fn reserve(&mut self, area: Rect) {
        if let Some(interior) = self.interior() {
            if interior.contains(area.x_min, area.y_min)
                && interior.contains(area.x_max, area.y_max)
            {
                return;
            }
        }
        let wanted = area.expand(1 + GROW_MARGIN as i64);
        let target = match self.region() {
            Some(region) => region.union(&wanted),
            None => wanted,
        };
        self.relocate(target);
    }

    fn relocate(&mut self, target: Rect) {
        let mut grown = Grid::with_region(target);
        grown.generation = self.generation;
        for (x, y) in self.live_cells() {
            let (word, bit) = grown.index(x, y).expect("target covers old region");
            grown.cells[word] |= 1 << bit;
        }
        *self = grown;
    }

    pub fn population(&self) -> u64 {
        self.cells.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&w| w == 0)
    }

    /// Live cells in row-major order (by `y`, then `x`).
    pub fn live_cells(&self) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for w in 0..self.words_per_row {
                let mut word = self.cells[row * self.words_per_row + w];
                while word != 0 {
                    let bit = word.trailing_zeros() as usize;
                    word &= word - 1;
                    out.push((
                        self.origin_x + (w * 64 + bit) as i64,
                        self.origin_y + row as i64,
                    ));
                }
            }
        }
        out
    }

    fn row(&self, row: usize) -> &[u64] {
        let start = row * self.words_per_row;
        &self.cells[start..start + self.words_per_row]
    }

    /// First and last stored rows containing a live cell.
    fn live_rows(&self) -> Option<(usize, usize)> {
        let first = (0..self.height).find(|&r| self.row(r).iter().any(|&w| w != 0))?;
        let last = (first..self.height)
            .rev()
            .find(|&r| self.row(r).iter().any(|&w| w != 0))?;
        Some((first, last))
    }

    /// Minimal rectangle containing every live cell, `None` when the grid is empty.
    pub fn bounding_box(&self) -> Option<Rect> {
        let (first, last) = self.live_rows()?;
        let mut x_lo = usize::MAX;
        let mut x_hi = 0;
        for r in first..=last {
            for (w, &word) in self.row(r).iter().enumerate() {
                if word != 0 {
                    x_lo = x_lo.min(w * 64 + word.trailing_zeros() as usize);
                    x_hi = x_hi.max(w * 64 + 63 - word.leading_zeros() as usize);
                }
            }
        }
        Some(Rect {
            x_min: self.origin_x + x_lo as i64,
            y_min: self.origin_y + first as i64,
            x_max: self.origin_x + x_hi as i64,
            y_max: self.origin_y + last as i64,
        })
    }

    /// Live Moore neighbours of a cell inside the stored region.
    pub fn neighbour_count(&self, x: i64, y: i64) -> Result<NeighbourCount, EngineError> {
        if self.index(x, y).is_none() {
            return Err(EngineError::OutsideRegion { x, y });
        }
        Ok(NeighbourCount(self.count_around(x, y)))
    }

    fn count_around(&self, x: i64, y: i64) -> u8 {
        let mut n = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy) != (0, 0) && self.get(x + dx, y + dy) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn translate(&mut self, dx: i64, dy: i64) {
        self.origin_x += dx;
        self.origin_y += dy;
    }

    /// Advances one generation using the word-parallel stepper.
    pub fn step(&self, rule: Rule) -> Result<Grid, EngineError> {
        check_rule(rule)?;
        let mut next = vec![0u64; self.cells.len()];
        if let Some((first, last)) = self.live_rows() {
            let masks = RuleMasks::new(rule);
            let wpr = self.words_per_row;
            let empty = vec![0u64; wpr];
            // The dead ring guarantees first >= 1 and last + 1 < height.
            for r in first.saturating_sub(1)..=(last + 1).min(self.height - 1) {
                let above = if r > 0 { self.row(r - 1) } else { &empty };
                let below = if r + 1 < self.height {
                    self.row(r + 1)
                } else {
                    &empty
                };
                let centre = self.row(r);
                let out = &mut next[r * wpr..(r + 1) * wpr];
                for w in 0..wpr {
                    out[w] = masks.apply(
                        centre[w],
                        Neighbourhood::gather(above, w),
                        Neighbourhood::gather(centre, w),
                        Neighbourhood::gather(below, w),
                    );
                }
                if let Some(last_word) = out.last_mut() {
                    *last_word &= tail_mask(self.width);
                }
            }
        }
        Ok(self.finish(next))
    }

    /// Advances one generation by counting each cell's neighbours directly.
    pub fn step_reference(&self, rule: Rule) -> Result<Grid, EngineError> {
        check_rule(rule)?;
        let mut next = vec![0u64; self.cells.len()];
        for row in 0..self.height {
            for col in 0..self.width {
                let x = self.origin_x + col as i64;
                let y = self.origin_y + row as i64;
                if rule.next_state(self.get(x, y), self.count_around(x, y)) {
                    next[row * self.words_per_row + col / 64] |= 1 << (col % 64);
                }
            }
        }
        Ok(self.finish(next))
    }

    /// Installs the next generation and restores the dead ring if needed.
    fn finish(&self, cells: Vec<u64>) -> Grid {
        let mut next = Grid {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            width: self.width,
            height: self.height,
            words_per_row: self.words_per_row,
            cells,
            generation: self.generation + 1,
        };
        if let Some(bbox) = next.bounding_box() {
            next.reserve(bbox);
        }
        next
    }

    /// Rows of `.` and `o` covering the bounding box; empty string for an empty grid.
    pub fn to_plaintext(&self) -> String {
        let Some(bbox) = self.bounding_box() else {
            return String::new();
        };
        let mut out = String::new();
        for y in bbox.y_min..=bbox.y_max {
            for x in bbox.x_min..=bbox.x_max {
                out.push(if self.get(x, y) { 'o' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("region", &self.region())
            .field("generation", &self.generation)
            .field("population", &self.population())
            .finish()?;
        if !self.is_empty() {
            write!(f, "\n{}", self.to_plaintext())?;
        }
        Ok(())
    }
}

fn check_rule(rule: Rule) -> Result<(), EngineError> {
    if rule.has_b0() {
        Err(EngineError::BirthOnZero(rule))
    } else {
        Ok(())
    }
}

fn bounding_rect(cells: &[(i64, i64)]) -> Option<Rect> {
    let (&(x0, y0), rest) = cells.split_first()?;
    let mut r = Rect {
        x_min: x0,
        y_min: y0,
        x_max: x0,
        y_max: y0,
    };
    for &(x, y) in rest {
        r.x_min = r.x_min.min(x);
        r.y_min = r.y_min.min(y);
        r.x_max = r.x_max.max(x);
        r.y_max = r.y_max.max(y);
    }
    Some(r)
}

fn tail_mask(width: usize) -> u64 {
    match width % 64 {
        0 => u64::MAX,
        rem => (1u64 << rem) - 1,
    }
}

/// A word of a row together with its horizontally shifted neighbours.
#[derive(Clone, Copy)]
struct Neighbourhood {
    west: u64,
    centre: u64,
    east: u64,
}

impl Neighbourhood {
    #[inline]
    fn gather(row: &[u64], w: usize) -> Self {
        let centre = row[w];
        let carry_in = if w > 0 { row[w - 1] >> 63 } else { 0 };
        let carry_out = if w + 1 < row.len() {
            row[w + 1] << 63
        } else {
            0
        };
        Neighbourhood {
            // bit j of `west` holds the cell at column j - 1
            west: centre << 1 | carry_in,
            centre,
            east: centre >> 1 | carry_out,
        }
    }
}

#[inline]
fn half_add(a: u64, b: u64) -> (u64, u64) {
    (a ^ b, a & b)
}

#[inline]
fn full_add(a: u64, b: u64, c: u64) -> (u64, u64) {
    let t = a ^ b;
    (t ^ c, (a & b) | (t & c))
}

/// Per-rule selection of neighbour counts, applied to bit-sliced counts.
struct RuleMasks {
    born: Vec<u8>,
    survive: Vec<u8>,
}

impl RuleMasks {
    fn new(rule: Rule) -> Self {
        RuleMasks {
            born: rule.born.iter().collect(),
            survive: rule.survive.iter().collect(),
        }
    }

    #[inline]
    fn apply(
        &self,
        cells: u64,
        above: Neighbourhood,
        row: Neighbourhood,
        below: Neighbourhood,
    ) -> u64 {
        let (s0, c0) = full_add(above.west, above.centre, above.east);
        let (s1, c1) = full_add(below.west, below.centre, below.east);
        let (s2, c2) = half_add(row.west, row.east);
        let (ones, c3) = full_add(s0, s1, s2);
        let (t, f0) = full_add(c0, c1, c2);
        let (twos, f1) = half_add(t, c3);
        let (fours, eights) = half_add(f0, f1);
        let planes = [ones, twos, fours, eights];

        let select = |digits: &[u8]| {
            digits.iter().fold(0u64, |acc, &n| {
                let mut hit = u64::MAX;
                for (bit, plane) in planes.iter().enumerate() {
                    hit &= if n >> bit & 1 == 1 { *plane } else { !*plane };
                }
                acc | hit
            })
        };
        (!cells & select(&self.born)) | (cells & select(&self.survive))
    }
}
