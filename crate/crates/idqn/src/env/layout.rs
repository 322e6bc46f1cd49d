//! Layout text files.
//!
//! One character per cell: `#` wall, `.` pellet, `A` agent spawn, space
//! empty. Rows must be rectangular and exactly one agent must be present.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A fixed grid map, usually parsed from a layout file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<(usize, usize)>,
    pub pellets: BTreeSet<(usize, usize)>,
    pub agent: (usize, usize),
}

impl GridMap {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("layout has zero extent"));
        }
        let inside =
            |&(r, c): &(usize, usize)| -> bool { r < self.height && c < self.width };
        if !inside(&self.agent) {
            return Err(Error::config("agent outside the grid"));
        }
        if self.walls.contains(&self.agent) {
            return Err(Error::config("agent placed on a wall"));
        }
        if let Some(p) = self.walls.intersection(&self.pellets).next() {
            return Err(Error::config(format!("pellet on wall at {:?}", p)));
        }
        if let Some(p) = self.walls.iter().chain(&self.pellets).find(|p| !inside(p)) {
            return Err(Error::config(format!("cell {:?} outside the grid", p)));
        }
        Ok(())
    }
}

/// Parses a layout file body into a [`GridMap`].
pub fn parse_layout(text: &str) -> Result<GridMap> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(Error::config("layout file is empty"));
    }
    let width = lines[0].chars().count();
    if width == 0 {
        return Err(Error::config("layout rows must be non-empty"));
    }
    let mut walls = BTreeSet::new();
    let mut pellets = BTreeSet::new();
    let mut agent = None;
    for (r, line) in lines.iter().enumerate() {
        if line.chars().count() != width {
            return Err(Error::config(format!(
                "layout row {} has {} cells, expected {}",
                r,
                line.chars().count(),
                width
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            match ch {
                '#' => {
                    walls.insert((r, c));
                }
                '.' => {
                    pellets.insert((r, c));
                }
                'A' => {
                    if agent.replace((r, c)).is_some() {
                        return Err(Error::config("layout has more than one agent"));
                    }
                }
                ' ' => {}
                other => {
                    return Err(Error::config(format!(
                        "layout row {} col {}: unknown cell `{}`",
                        r, c, other
                    )));
                }
            }
        }
    }
    let agent = agent.ok_or_else(|| Error::config("layout has no agent (`A`)"))?;
    let map = GridMap {
        width,
        height: lines.len(),
        walls,
        pellets,
        agent,
    };
    map.validate()?;
    Ok(map)
}

/// Serializes a map back to layout text (inverse of [`parse_layout`]).
pub fn to_text(map: &GridMap) -> String {
    let mut out = String::with_capacity((map.width + 1) * map.height);
    for r in 0..map.height {
        for c in 0..map.width {
            let ch = if (r, c) == map.agent {
                'A'
            } else if map.walls.contains(&(r, c)) {
                '#'
            } else if map.pellets.contains(&(r, c)) {
                '.'
            } else {
                ' '
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Snapshot of a live state as layout text. The agent is drawn over any
/// pellet it happens to share a cell with (possible via edits).
pub fn state_to_text(state: &super::GridState) -> String {
    let map = GridMap {
        width: state.width,
        height: state.height,
        walls: state.walls.clone(),
        pellets: state.pellets.clone(),
        agent: state.agent,
    };
    to_text(&map)
}
