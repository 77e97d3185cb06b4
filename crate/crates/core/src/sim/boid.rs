//! Zonal flocking model (repulsion, orientation, attraction) with directed,
//! signed pairwise rules.
//!
//! `relations[i][j]` is the effect of agent `i` on agent `j`: `+1` attraction,
//! `-1` repulsion, `0` agent `j` ignores `i` in every zone. Zone radii are
//! stored per ordered pair as seen by the observer `j`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::series::{CausalGraph, SeriesKind, TrajectorySeries};

pub const ARENA: f64 = 30.0;
pub const STEP: f64 = 0.01;
pub const MAX_TURN: f64 = 30.0 * PI / 180.0;
pub const REPULSION_ATTRACTIVE: f64 = 1.0;
pub const REPULSION_REPULSIVE: f64 = 10.0;
pub const ORIENTATION: f64 = 2.0;
pub const ATTRACTION: f64 = 8.0;
pub const NOISE_SD: f64 = 0.2;
pub const MIN_RADIUS: f64 = 0.1;
const MIN_SPEED: f64 = 0.1;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoidState {
    pub positions: Vec<Vec2>,
    pub directions: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoidWorld {
    pub speed: Vec<f64>,
    /// `[i][j]` radii used by observer `j` for neighbour `i`.
    pub r_repulsion: Vec<Vec<f64>>,
    pub r_orientation: Vec<Vec<f64>>,
    pub r_attraction: Vec<Vec<f64>>,
    pub max_turn: f64,
    pub arena: f64,
    pub dt: f64,
    pub relations: CausalGraph,
    pub initial: BoidState,
}

fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

fn normalized(v: Vec2) -> Option<Vec2> {
    let n = norm(v);
    (n > 1e-12).then(|| [v[0] / n, v[1] / n])
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn mean(vs: &[Vec2]) -> Vec2 {
    let n = vs.len() as f64;
    let (x, y) = vs.iter().fold((0.0, 0.0), |(x, y), v| (x + v[0], y + v[1]));
    [x / n, y / n]
}

impl BoidWorld {
    /// Random relations, noisy per-agent speeds and radii, agents on a circle
    /// of random radius in `[6, 16]` m around the arena centre.
    pub fn sample(p: usize, rng: &mut Rng) -> Result<Self> {
        if p < 2 {
            return Err(Error::Domain(format!("need at least 2 boids, got {p}")));
        }
        let mut relations = CausalGraph::empty(p);
        for (i, j) in CausalGraph::off_diagonal(p) {
            relations.set(i, j, rng.below(3) as i8 - 1);
        }
        let speed: Vec<f64> = (0..p).map(|_| rng.normal(1.0, NOISE_SD).max(MIN_SPEED)).collect();
        let noise: Vec<[f64; 3]> = (0..p)
            .map(|_| [rng.normal(0.0, NOISE_SD), rng.normal(0.0, NOISE_SD), rng.normal(0.0, NOISE_SD)])
            .collect();
        let mut r_repulsion = vec![vec![0.0; p]; p];
        let mut r_orientation = vec![vec![0.0; p]; p];
        let mut r_attraction = vec![vec![0.0; p]; p];
        for (i, j) in CausalGraph::off_diagonal(p) {
            let base = if relations.get(i, j) < 0 { REPULSION_REPULSIVE } else { REPULSION_ATTRACTIVE };
            r_repulsion[i][j] = (base + noise[j][0]).max(MIN_RADIUS);
            r_orientation[i][j] = (ORIENTATION + noise[j][1]).max(MIN_RADIUS);
            r_attraction[i][j] = (ATTRACTION + noise[j][2]).max(MIN_RADIUS);
        }
        let radius = rng.uniform(6.0, 16.0);
        let centre = ARENA / 2.0;
        let mut positions = Vec::with_capacity(p);
        let mut directions = Vec::with_capacity(p);
        for _ in 0..p {
            let a = rng.uniform(0.0, TAU);
            positions.push([centre + radius * a.cos(), centre + radius * a.sin()]);
            let h = rng.uniform(0.0, TAU);
            directions.push([h.cos(), h.sin()]);
        }
        Ok(Self {
            speed,
            r_repulsion,
            r_orientation,
            r_attraction,
            max_turn: MAX_TURN,
            arena: ARENA,
            dt: STEP,
            relations,
            initial: BoidState { positions, directions },
        })
    }

    pub fn agents(&self) -> usize {
        self.speed.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.agents();
        if self.relations.agents() != p || self.initial.positions.len() != p || self.initial.directions.len() != p {
            return Err(Error::Dimension("boid world components disagree on agent count".into()));
        }
        if self.speed.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain("speeds must be positive".into()));
        }
        if !(self.max_turn > 0.0 && self.max_turn < PI) {
            return Err(Error::Domain("max turn must lie in (0, pi)".into()));
        }
        for (i, j) in CausalGraph::off_diagonal(p) {
            let radii = [self.r_repulsion[i][j], self.r_orientation[i][j], self.r_attraction[i][j]];
            if radii.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::Domain("zone radii must be positive".into()));
            }
        }
        Ok(())
    }

    /// The same world with agent `k` removed.
    pub fn without_agent(&self, k: usize) -> Self {
        let keep: Vec<usize> = (0..self.agents()).filter(|&a| a != k).collect();
        let sub = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            keep.iter().map(|&i| keep.iter().map(|&j| m[i][j]).collect()).collect()
        };
        let rel = keep
            .iter()
            .map(|&i| keep.iter().map(|&j| self.relations.get(i, j)).collect())
            .collect();
        Self {
            speed: keep.iter().map(|&i| self.speed[i]).collect(),
            r_repulsion: sub(&self.r_repulsion),
            r_orientation: sub(&self.r_orientation),
            r_attraction: sub(&self.r_attraction),
            max_turn: self.max_turn,
            arena: self.arena,
            dt: self.dt,
            relations: CausalGraph::new(rel).expect("sub-graph of a valid graph"),
            initial: BoidState {
                positions: keep.iter().map(|&i| self.initial.positions[i]).collect(),
                directions: keep.iter().map(|&i| self.initial.directions[i]).collect(),
            },
        }
    }

    /// Social target heading of agent `j`. Repulsion has priority; otherwise
    /// the orientation and attraction means are averaged (halved when both
    /// zones are occupied). With no neighbours the heading is kept.
    pub fn desired_direction(&self, state: &BoidState, j: usize) -> Vec2 {
        let current = state.directions[j];
        let mut repel = Vec::new();
        let mut orient = Vec::new();
        let mut attract = Vec::new();
        for i in 0..self.agents() {
            if i == j || self.relations.get(i, j) == 0 {
                continue;
            }
            let offset = [state.positions[i][0] - state.positions[j][0], state.positions[i][1] - state.positions[j][1]];
            let dist = norm(offset);
            let Some(unit) = normalized(offset) else { continue };
            if dist < self.r_repulsion[i][j] {
                repel.push(unit);
            } else if dist < self.r_orientation[i][j] {
                orient.push(state.directions[i]);
            } else if dist < self.r_attraction[i][j] {
                attract.push(unit);
            }
        }
        let target = if !repel.is_empty() {
            let m = mean(&repel);
            [-m[0], -m[1]]
        } else {
            match (orient.is_empty(), attract.is_empty()) {
                (true, true) => return current,
                (false, true) => mean(&orient),
                (true, false) => mean(&attract),
                (false, false) => {
                    let (o, a) = (mean(&orient), mean(&attract));
                    [0.5 * (o[0] + a[0]), 0.5 * (o[1] + a[1])]
                }
            }
        };
        normalized(target).unwrap_or(current)
    }

    /// Advance every agent one step: move along the current heading, then
    /// turn (at most `max_turn`) toward the social or wall-reflected target.
    pub fn step(&self, state: &BoidState) -> BoidState {
        let p = self.agents();
        let mut positions = state.positions.clone();
        for j in 0..p {
            for u in 0..2 {
                positions[j][u] += self.speed[j] * state.directions[j][u] * self.dt;
            }
        }
        let moved = BoidState { positions, directions: state.directions.clone() };
        let directions = (0..p)
            .map(|j| {
                let desired = self.wall_reflection(&moved, j).unwrap_or_else(|| self.desired_direction(&moved, j));
                clamp_turn(moved.directions[j], desired, self.max_turn)
            })
            .collect();
        BoidState { positions: moved.positions, directions }
    }

    fn wall_reflection(&self, state: &BoidState, j: usize) -> Option<Vec2> {
        let mut d = state.directions[j];
        let mut hit = false;
        for u in 0..2 {
            let x = state.positions[j][u];
            if (x < 0.0 && d[u] < 0.0) || (x > self.arena && d[u] > 0.0) {
                d[u] = -d[u];
                hit = true;
            }
        }
        hit.then_some(d)
    }

    /// Simulate `steps` frames; frame `t` holds positions and the velocity
    /// `speed * direction` that carries the agent to frame `t + 1`.
    pub fn simulate(&self, steps: usize) -> Result<(TrajectorySeries, Vec<BoidState>)> {
        self.validate()?;
        if steps < 2 {
            return Err(Error::Length { needed: 2, got: steps });
        }
        let p = self.agents();
        let mut values = Vec::with_capacity(steps * p * 4);
        let mut states = Vec::with_capacity(steps);
        let mut state = self.initial.clone();
        for t in 0..steps {
            let finite = state.positions.iter().chain(&state.directions).all(|v| v[0].is_finite() && v[1].is_finite());
            if !finite {
                return Err(Error::Simulation { step: t });
            }
            for j in 0..p {
                let pos = state.positions[j];
                let d = state.directions[j];
                values.extend_from_slice(&[pos[0], pos[1], self.speed[j] * d[0], self.speed[j] * d[1]]);
            }
            let next = if t + 1 < steps { Some(self.step(&state)) } else { None };
            states.push(state);
            match next {
                Some(n) => state = n,
                None => break,
            }
        }
        let series = TrajectorySeries::new(values, steps, p, 4, self.dt, SeriesKind::Positional)?;
        Ok((series, states))
    }
}

/// Return `desired` when it is within `max_turn` of `current`, otherwise
/// `current` rotated by exactly `max_turn` toward it. An exact reversal turns
/// counterclockwise.
pub fn clamp_turn(current: Vec2, desired: Vec2, max_turn: f64) -> Vec2 {
    let dot = (current[0] * desired[0] + current[1] * desired[1]).clamp(-1.0, 1.0);
    let angle = dot.acos();
    if angle <= max_turn {
        return desired;
    }
    let cross = current[0] * desired[1] - current[1] * desired[0];
    let turned = rotate(current, if cross >= 0.0 { max_turn } else { -max_turn });
    normalized(turned).unwrap_or(current)
}
