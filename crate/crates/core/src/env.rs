//! Coordinated two-agent object-transportation grid world.
//!
//! Two agents must flank an item of goods, pick it up by standing on the
//! cells immediately left and right of it, and carry it to a drop-zone.
//! While attached the trio only moves when both agents pick the same
//! direction and all three target cells are walkable. Reward is paid once,
//! on delivery, and is identical for both agents.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Number of actions available to each agent.
pub const ACTION_COUNT: usize = 5;

/// Pixel codes used when rendering entities, before normalization by 250.
pub const PIXEL_AGENT1: f64 = 250.0;
pub const PIXEL_AGENT2: f64 = 200.0;
pub const PIXEL_GOODS: f64 = 150.0;
pub const PIXEL_OBSTACLE: f64 = 50.0;
/// Normalization divisor for pixel codes.
pub const PIXEL_SCALE: f64 = 250.0;

/// Standard deviation of the multiplicative per-cell observation noise.
pub const NOISE_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Stay = 0,
    Left = 1,
    Right = 2,
    Up = 3,
    Down = 4,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::Stay,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Row/column displacement; `None` for `Stay`.
    pub fn delta(self) -> Option<(i32, i32)> {
        match self {
            Action::Stay => None,
            Action::Left => Some((0, -1)),
            Action::Right => Some((0, 1)),
            Action::Up => Some((-1, 0)),
            Action::Down => Some((1, 0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: u8,
    pub col: u8,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Pos {
        Pos {
            row: row as u8,
            col: col as u8,
        }
    }

    fn shifted(self, delta: (i32, i32)) -> Pos {
        Pos {
            row: (self.row as i32 + delta.0) as u8,
            col: (self.col as i32 + delta.1) as u8,
        }
    }

    /// Cell immediately left of `self`.
    pub fn left(self) -> Pos {
        Pos {
            row: self.row,
            col: self.col - 1,
        }
    }

    /// Cell immediately right of `self`.
    pub fn right(self) -> Pos {
        Pos {
            row: self.row,
            col: self.col + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
    /// Index into `Layout::dropzones`.
    Dropzone(usize),
}

/// Reward distribution of one drop-zone: a list of (reward, probability) outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub outcomes: Vec<(f64, f64)>,
}

impl RewardSpec {
    pub fn deterministic(reward: f64) -> RewardSpec {
        RewardSpec {
            outcomes: vec![(reward, 1.0)],
        }
    }

    pub fn expected_value(&self) -> f64 {
        self.outcomes.iter().map(|(r, p)| r * p).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.outcomes.len() == 1 {
            return self.outcomes[0].0;
        }
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        for &(reward, p) in &self.outcomes {
            acc += p;
            if x < acc {
                return reward;
            }
        }
        self.outcomes.last().expect("non-empty outcomes").0
    }

    fn validate(&self) -> Result<(), String> {
        if self.outcomes.is_empty() {
            return Err("no outcomes".into());
        }
        let mut sum = 0.0;
        for &(reward, p) in &self.outcomes {
            if !reward.is_finite() {
                return Err(format!("non-finite reward {reward}"));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("probabilities sum to {sum}, expected 1.0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropzone {
    pub id: char,
    pub reward: RewardSpec,
}

/// A validated grid: static geometry plus entity start positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub agent1_start: Pos,
    pub agent2_start: Pos,
    pub goods_start: Pos,
    pub dropzones: Vec<Dropzone>,
}

impl Layout {
    pub fn cell(&self, p: Pos) -> Cell {
        self.cells[p.row as usize * self.width + p.col as usize]
    }

    fn in_bounds(&self, row: i32, col: i32) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Cells agents (and carried goods) may occupy.
    pub fn walkable(&self, p: Pos) -> bool {
        !matches!(self.cell(p), Cell::Obstacle)
    }

    /// Index of the drop-zone with the highest expected reward.
    pub fn best_dropzone(&self) -> usize {
        let mut best = 0;
        for (i, dz) in self.dropzones.iter().enumerate() {
            if dz.reward.expected_value() > self.dropzones[best].reward.expected_value() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("line {line}: grid is not rectangular (expected width {expected}, got {got})")]
    NotRectangular {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}, column {col}: unknown cell character {ch:?}")]
    UnknownChar { line: usize, col: usize, ch: char },
    #[error("line {line}, column {col}: duplicate {entity:?} marker")]
    DuplicateEntity {
        entity: char,
        line: usize,
        col: usize,
    },
    #[error("missing {entity:?} marker in grid")]
    MissingEntity { entity: char },
    #[error("grid has no drop-zone cells")]
    NoDropzone,
    #[error("grid must be at least 3x3 with an obstacle border")]
    TooSmall,
    #[error("line {line}, column {col}: border cell is not an obstacle")]
    OpenBorder { line: usize, col: usize },
    #[error("drop-zone {id:?} has no reward spec in the [dropzones] section")]
    MissingRewardSpec { id: char },
    #[error("reward spec for {id:?} does not match any drop-zone cell")]
    UnusedRewardSpec { id: char },
    #[error("line {line}: bad reward spec: {reason}")]
    BadRewardSpec { line: usize, reason: String },
    #[error("drop-zone {id:?}: {reason}")]
    InvalidRewardSpec { id: char, reason: String },
    #[error("goods must have free cells immediately left and right of it")]
    GoodsNotFlankable,
    #[error("line {line}: unexpected content outside the grid or [dropzones] section")]
    UnexpectedLine { line: usize },
}

/// Parses the ASCII layout format.
///
/// Legend: `#` obstacle, `.` free, `1`/`2` agent starts, `G` goods,
/// `A`..`Z` (except `G`) drop-zone ids. The grid is followed by a
/// `[dropzones]` section with one `ID = (reward,probability),...` line
/// per zone id.
pub fn parse_layout(text: &str) -> Result<Layout, LayoutError> {
    let mut grid_rows: Vec<(usize, &str)> = Vec::new();
    let mut reward_lines: Vec<(usize, &str)> = Vec::new();
    let mut in_rewards = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.trim() == "[dropzones]" {
            in_rewards = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if in_rewards {
            reward_lines.push((line_no, line));
        } else {
            grid_rows.push((line_no, line));
        }
    }

    if grid_rows.len() < 3 {
        return Err(LayoutError::TooSmall);
    }
    let width = grid_rows[0].1.chars().count();
    if width < 3 {
        return Err(LayoutError::TooSmall);
    }
    let height = grid_rows.len();

    let mut cells = vec![Cell::Free; width * height];
    let mut agent1 = None;
    let mut agent2 = None;
    let mut goods = None;
    let mut zone_ids: Vec<char> = Vec::new();
    let mut zone_cells: Vec<(usize, char)> = Vec::new();

    for (r, &(line_no, line)) in grid_rows.iter().enumerate() {
        let row_chars: Vec<char> = line.chars().collect();
        if row_chars.len() != width {
            return Err(LayoutError::NotRectangular {
                line: line_no,
                expected: width,
                got: row_chars.len(),
            });
        }
        for (c, &ch) in row_chars.iter().enumerate() {
            let idx = r * width + c;
            match ch {
                '#' => cells[idx] = Cell::Obstacle,
                '.' => {}
                '1' | '2' | 'G' => {
                    let slot = match ch {
                        '1' => &mut agent1,
                        '2' => &mut agent2,
                        _ => &mut goods,
                    };
                    if slot.is_some() {
                        return Err(LayoutError::DuplicateEntity {
                            entity: ch,
                            line: line_no,
                            col: c + 1,
                        });
                    }
                    *slot = Some(Pos::new(r, c));
                }
                'A'..='Z' => {
                    if !zone_ids.contains(&ch) {
                        zone_ids.push(ch);
                    }
                    zone_cells.push((idx, ch));
                }
                _ => {
                    return Err(LayoutError::UnknownChar {
                        line: line_no,
                        col: c + 1,
                        ch,
                    });
                }
            }
        }
    }

    let agent1_start = agent1.ok_or(LayoutError::MissingEntity { entity: '1' })?;
    let agent2_start = agent2.ok_or(LayoutError::MissingEntity { entity: '2' })?;
    let goods_start = goods.ok_or(LayoutError::MissingEntity { entity: 'G' })?;
    if zone_ids.is_empty() {
        return Err(LayoutError::NoDropzone);
    }

    let mut specs: Vec<(char, RewardSpec, usize)> = Vec::new();
    for &(line_no, line) in &reward_lines {
        let (id_part, spec_part) =
            line.split_once('=')
                .ok_or_else(|| LayoutError::BadRewardSpec {
                    line: line_no,
                    reason: "expected `ID = (reward,probability),...`".into(),
                })?;
        let id_str = id_part.trim();
        let mut id_chars = id_str.chars();
        let id = match (id_chars.next(), id_chars.next()) {
            (Some(ch @ 'A'..='Z'), None) if ch != 'G' => ch,
            _ => {
                return Err(LayoutError::BadRewardSpec {
                    line: line_no,
                    reason: format!("bad drop-zone id {id_str:?}"),
                });
            }
        };
        let outcomes = parse_outcomes(spec_part).map_err(|reason| LayoutError::BadRewardSpec {
            line: line_no,
            reason,
        })?;
        specs.push((id, RewardSpec { outcomes }, line_no));
    }

    let mut dropzones = Vec::new();
    for &id in &zone_ids {
        let spec = specs
            .iter()
            .find(|(sid, _, _)| *sid == id)
            .ok_or(LayoutError::MissingRewardSpec { id })?;
        spec.1
            .validate()
            .map_err(|reason| LayoutError::InvalidRewardSpec { id, reason })?;
        dropzones.push(Dropzone {
            id,
            reward: spec.1.clone(),
        });
    }
    for (id, _, _) in &specs {
        if !zone_ids.contains(id) {
            return Err(LayoutError::UnusedRewardSpec { id: *id });
        }
    }
    for (idx, id) in zone_cells {
        let zone = zone_ids.iter().position(|z| z == &id).expect("zone listed");
        cells[idx] = Cell::Dropzone(zone);
    }

    let layout = Layout {
        width,
        height,
        cells,
        agent1_start,
        agent2_start,
        goods_start,
        dropzones,
    };

    // The border must be fully closed.
    for r in 0..height {
        for c in 0..width {
            let edge = r == 0 || c == 0 || r == height - 1 || c == width - 1;
            if edge && layout.cell(Pos::new(r, c)) != Cell::Obstacle {
                return Err(LayoutError::OpenBorder {
                    line: grid_rows[r].0,
                    col: c + 1,
                });
            }
        }
    }
    // Pickup must be possible: both flanking cells free.
    let g = layout.goods_start;
    if layout.cell(g.left()) != Cell::Free || layout.cell(g.right()) != Cell::Free {
        return Err(LayoutError::GoodsNotFlankable);
    }
    Ok(layout)
}

fn parse_outcomes(s: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut outcomes = Vec::new();
    let s = s.trim();
    let mut rest = s;
    while !rest.is_empty() {
        let rest2 = rest
            .strip_prefix('(')
            .ok_or_else(|| format!("expected `(` at {rest:?}"))?;
        let (inner, tail) = rest2
            .split_once(')')
            .ok_or_else(|| format!("unclosed `(` at {rest:?}"))?;
        let (r_str, p_str) = inner
            .split_once(',')
            .ok_or_else(|| format!("expected `reward,probability` in ({inner})"))?;
        let reward: f64 = r_str
            .trim()
            .parse()
            .map_err(|_| format!("bad reward {:?}", r_str.trim()))?;
        let prob: f64 = p_str
            .trim()
            .parse()
            .map_err(|_| format!("bad probability {:?}", p_str.trim()))?;
        outcomes.push((reward, prob));
        rest = tail.trim_start();
        if let Some(t) = rest.strip_prefix(',') {
            rest = t.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("unexpected trailing {rest:?}"));
        }
    }
    if outcomes.is_empty() {
        return Err("empty outcome list".into());
    }
    Ok(outcomes)
}

/// Grayscale observation of the full grid, normalized to roughly [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rows: usize,
    pub cols: usize,
    pub noisy: bool,
    data: Arc<[f64]>,
}

impl Observation {
    pub fn from_vec(rows: usize, cols: usize, noisy: bool, data: Vec<f64>) -> Observation {
        assert_eq!(data.len(), rows * cols);
        Observation {
            rows,
            cols,
            noisy,
            data: data.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stable byte serialization used by the exact hashing scheme.
    pub fn key_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(16 + self.data.len() * 8);
        bytes.extend_from_slice(&(self.rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in self.data.iter() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        bytes
    }
}

/// Mutable episode state. All static geometry lives in [`Layout`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub agent1: Pos,
    pub agent2: Pos,
    pub goods: Pos,
    pub attached: bool,
    pub steps_taken: u32,
    pub terminal: bool,
    pub timeout: bool,
    pub last_joint_action: Option<(Action, Action)>,
}

/// Outcome of one joint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    /// Drop-zone index if the goods were delivered this step.
    pub delivered: Option<usize>,
    /// Episode ended by hitting the step limit.
    pub timeout: bool,
    /// The goods translated this step (attached phase only).
    pub goods_moved: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step() called on a terminal state")]
    StepAfterTerminal,
}

/// Immutable environment dynamics: layout plus step limit and slip probability.
#[derive(Debug, Clone)]
pub struct Cmotp {
    pub layout: Arc<Layout>,
    /// Probability that an agent's action is replaced by a uniformly random one.
    pub slip_prob: f64,
    pub step_limit: u32,
}

pub const DEFAULT_STEP_LIMIT: u32 = 10_000;
pub const DEFAULT_SLIP_PROB: f64 = 0.10;

impl Cmotp {
    pub fn new(layout: Layout) -> Cmotp {
        Cmotp {
            layout: Arc::new(layout),
            slip_prob: 0.0,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn with_slip(mut self, slip_prob: f64) -> Cmotp {
        self.slip_prob = slip_prob;
        self
    }

    pub fn with_step_limit(mut self, step_limit: u32) -> Cmotp {
        self.step_limit = step_limit;
        self
    }

    /// Fresh episode state at the layout's start positions.
    pub fn reset(&self) -> EnvState {
        EnvState {
            agent1: self.layout.agent1_start,
            agent2: self.layout.agent2_start,
            goods: self.layout.goods_start,
            attached: false,
            steps_taken: 0,
            terminal: false,
            timeout: false,
            last_joint_action: None,
        }
    }

    fn slip<R: Rng>(&self, action: Action, rng: &mut R) -> Action {
        if self.slip_prob > 0.0 && rng.gen::<f64>() < self.slip_prob {
            Action::ALL[rng.gen_range(0..ACTION_COUNT)]
        } else {
            action
        }
    }

    /// Target cell for an unattached agent; moves into obstacles or the
    /// goods cell are cancelled.
    fn agent_target(&self, from: Pos, action: Action, goods: Pos) -> Pos {
        let Some(delta) = action.delta() else {
            return from;
        };
        let row = from.row as i32 + delta.0;
        let col = from.col as i32 + delta.1;
        if !self.layout.in_bounds(row, col) {
            return from;
        }
        let to = Pos::new(row as usize, col as usize);
        if !self.layout.walkable(to) || to == goods {
            from
        } else {
            to
        }
    }

    /// Advances `state` by one joint step, mutating it in place.
    pub fn step<R: Rng>(
        &self,
        state: &mut EnvState,
        a1: Action,
        a2: Action,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        let eff1 = self.slip(a1, rng);
        let eff2 = self.slip(a2, rng);

        let mut outcome = StepOutcome {
            reward: 0.0,
            terminal: false,
            delivered: None,
            timeout: false,
            goods_moved: false,
        };

        if state.attached {
            if eff1 == eff2 {
                if let Some(delta) = eff1.delta() {
                    let targets = [
                        state.agent1.shifted(delta),
                        state.agent2.shifted(delta),
                        state.goods.shifted(delta),
                    ];
                    let ok = targets.iter().all(|&t| {
                        self.layout.in_bounds(t.row as i32, t.col as i32)
                            && self.layout.walkable(t)
                    });
                    if ok {
                        state.agent1 = targets[0];
                        state.agent2 = targets[1];
                        state.goods = targets[2];
                        outcome.goods_moved = true;
                        if let Cell::Dropzone(zone) = self.layout.cell(state.goods) {
                            outcome.terminal = true;
                            outcome.delivered = Some(zone);
                            outcome.reward = self.layout.dropzones[zone].reward.sample(rng);
                        }
                    }
                }
            }
        } else {
            let mut t1 = self.agent_target(state.agent1, eff1, state.goods);
            let mut t2 = self.agent_target(state.agent2, eff2, state.goods);
            if t1 == t2 {
                // Same-target conflict (also covers moving into a stationary agent).
                t1 = state.agent1;
                t2 = state.agent2;
            } else if t1 == state.agent2 && t2 == state.agent1 {
                // Head-on swap.
                t1 = state.agent1;
                t2 = state.agent2;
            }
            state.agent1 = t1;
            state.agent2 = t2;

            let flanks = (state.goods.left(), state.goods.right());
            if (state.agent1 == flanks.0 && state.agent2 == flanks.1)
                || (state.agent1 == flanks.1 && state.agent2 == flanks.0)
            {
                state.attached = true;
            }
        }

        state.steps_taken += 1;
        if !outcome.terminal && state.steps_taken >= self.step_limit {
            outcome.terminal = true;
            outcome.timeout = true;
            state.timeout = true;
        }
        state.terminal = outcome.terminal;
        state.last_joint_action = Some((a1, a2));
        Ok(outcome)
    }

    /// Renders the state as a grayscale tensor.
    ///
    /// Clean mode: background 0, entity cells `code / 250`. Noisy mode:
    /// background 1.0, entity cells `code / 250`, then every cell is
    /// multiplied by a fresh independent draw from `N(1.0, 0.01)`.
    pub fn render<R: Rng>(&self, state: &EnvState, noisy: bool, rng: &mut R) -> Observation {
        let layout = &self.layout;
        let background = if noisy { 1.0 } else { 0.0 };
        let mut data = vec![background; layout.width * layout.height];
        for r in 0..layout.height {
            for c in 0..layout.width {
                if layout.cell(Pos::new(r, c)) == Cell::Obstacle {
                    data[r * layout.width + c] = PIXEL_OBSTACLE / PIXEL_SCALE;
                }
            }
        }
        let idx = |p: Pos| p.row as usize * layout.width + p.col as usize;
        data[idx(state.goods)] = PIXEL_GOODS / PIXEL_SCALE;
        data[idx(state.agent2)] = PIXEL_AGENT2 / PIXEL_SCALE;
        data[idx(state.agent1)] = PIXEL_AGENT1 / PIXEL_SCALE;
        if noisy {
            let noise = Normal::new(1.0, NOISE_STD).expect("valid normal");
            for v in data.iter_mut() {
                *v *= noise.sample(rng);
            }
        }
        Observation::from_vec(layout.height, layout.width, noisy, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_layout() -> Layout {
        // 7x7: goods center, dropzone row at top, agents below goods.
        let text = "\
#######
#AAAAA#
#.....#
#..G..#
#.1.2.#
#.....#
#######

[dropzones]
A = (1.0,1.0)
";
        parse_layout(text).expect("tiny layout parses")
    }

    #[test]
    fn parse_rejects_missing_goods() {
        let text = "\
#####
#A.1#
#.2.#
#####

[dropzones]
A = (1.0,1.0)
";
        assert_eq!(
            parse_layout(text).unwrap_err(),
            LayoutError::MissingEntity { entity: 'G' }
        );
    }

    #[test]
    fn parse_rejects_dropzone_without_spec() {
        let text = "\
#######
#AA.BB#
#.....#
#.1G2.#
#######

[dropzones]
A = (1.0,1.0)
";
        assert_eq!(
            parse_layout(text).unwrap_err(),
            LayoutError::MissingRewardSpec { id: 'B' }
        );
    }

    #[test]
    fn parse_rejects_bad_probabilities() {
        let text = "\
#######
#AAAAA#
#.....#
#.1G2.#
#######

[dropzones]
A = (1.0,0.6),(0.4,0.3)
";
        assert!(matches!(
            parse_layout(text).unwrap_err(),
            LayoutError::InvalidRewardSpec { id: 'A', .. }
        ));
    }

    #[test]
    fn parse_stochastic_two_zone_layout() {
        let text = "\
########
#AA..BB#
#......#
#.1G2..#
########

[dropzones]
A = (0.8,1.0)
B = (1.0,0.6),(0.4,0.4)
";
        let layout = parse_layout(text).expect("parses");
        assert_eq!(layout.dropzones.len(), 2);
        assert_eq!(layout.dropzones[0].reward.expected_value(), 0.8);
        assert!((layout.dropzones[1].reward.expected_value() - 0.76).abs() < 1e-12);
        assert_eq!(layout.best_dropzone(), 0);
    }

    #[test]
    fn reset_is_idempotent() {
        let env = Cmotp::new(tiny_layout());
        assert_eq!(env.reset(), env.reset());
        let s = env.reset();
        assert_eq!(s.agent1, Pos::new(4, 2));
        assert_eq!(s.agent2, Pos::new(4, 4));
        assert_eq!(s.goods, Pos::new(3, 3));
        assert!(!s.attached);
    }

    #[test]
    fn reset_after_terminal_is_fresh() {
        let env = Cmotp::new(tiny_layout()).with_step_limit(3);
        let pristine = env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        for _ in 0..3 {
            env.step(&mut s, Action::Left, Action::Down, &mut rng).unwrap();
        }
        assert!(s.terminal && s.timeout);
        assert_eq!(env.reset(), pristine);
    }

    #[test]
    fn step_after_terminal_is_error() {
        let env = Cmotp::new(tiny_layout()).with_step_limit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        env.step(&mut s, Action::Stay, Action::Stay, &mut rng).unwrap();
        assert_eq!(
            env.step(&mut s, Action::Stay, Action::Stay, &mut rng),
            Err(EnvError::StepAfterTerminal)
        );
    }

    #[test]
    fn attachment_by_flanking() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        // Agents at (4,2) and (4,4); goods at (3,3) with flanks (3,2), (3,4).
        env.step(&mut s, Action::Up, Action::Up, &mut rng).unwrap();
        assert!(s.attached);
        assert_eq!(s.agent1, Pos::new(3, 2));
        assert_eq!(s.agent2, Pos::new(3, 4));
    }

    #[test]
    fn attached_coordinated_move_and_delivery() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        env.step(&mut s, Action::Up, Action::Up, &mut rng).unwrap();
        assert!(s.attached);
        // Miscoordination: nothing moves, reward 0.
        let before = s.clone();
        let out = env.step(&mut s, Action::Left, Action::Right, &mut rng).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.goods_moved);
        assert_eq!(s.goods, before.goods);
        assert_eq!(s.agent1, before.agent1);
        // Coordinated up: the trio shifts.
        let out = env.step(&mut s, Action::Up, Action::Up, &mut rng).unwrap();
        assert!(out.goods_moved);
        assert_eq!(s.goods, Pos::new(2, 3));
        // One more up delivers into the zone row.
        let out = env.step(&mut s, Action::Up, Action::Up, &mut rng).unwrap();
        assert!(out.terminal);
        assert_eq!(out.delivered, Some(0));
        assert_eq!(out.reward, 1.0);
        assert!(s.terminal);
    }

    #[test]
    fn head_on_swap_and_same_target_cancel() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        // Walk agents side by side: 1 at (4,2), 2 at (4,4). Move both toward
        // each other's side: same target (4,3) cancels both.
        let out = env.step(&mut s, Action::Right, Action::Left, &mut rng).unwrap();
        assert!(!out.terminal);
        assert_eq!(s.agent1, Pos::new(4, 2));
        assert_eq!(s.agent2, Pos::new(4, 4));
        // Bring them adjacent, then attempt a swap.
        env.step(&mut s, Action::Right, Action::Stay, &mut rng).unwrap();
        assert_eq!(s.agent1, Pos::new(4, 3));
        let out = env.step(&mut s, Action::Right, Action::Left, &mut rng).unwrap();
        assert!(!out.terminal);
        assert_eq!(s.agent1, Pos::new(4, 3));
        assert_eq!(s.agent2, Pos::new(4, 4));
    }

    #[test]
    fn follower_may_enter_vacated_cell() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset();
        env.step(&mut s, Action::Right, Action::Stay, &mut rng).unwrap();
        assert_eq!(s.agent1, Pos::new(4, 3));
        assert_eq!(s.agent2, Pos::new(4, 4));
        // Both move right: agent1 follows agent2 into (4,4).
        env.step(&mut s, Action::Right, Action::Right, &mut rng).unwrap();
        assert_eq!(s.agent1, Pos::new(4, 4));
        assert_eq!(s.agent2, Pos::new(4, 5));
        // Agent2 blocked by the wall, so agent1 may not take its cell.
        env.step(&mut s, Action::Right, Action::Right, &mut rng).unwrap();
        assert_eq!(s.agent1, Pos::new(4, 4));
        assert_eq!(s.agent2, Pos::new(4, 5));
    }

    #[test]
    fn clean_render_codes() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.reset();
        let obs = env.render(&s, false, &mut rng);
        assert_eq!(obs.get(4, 2), 1.0); // agent 1 = 250/250
        assert_eq!(obs.get(4, 4), 200.0 / 250.0);
        assert_eq!(obs.get(3, 3), 150.0 / 250.0);
        assert_eq!(obs.get(0, 0), 50.0 / 250.0);
        assert_eq!(obs.get(2, 2), 0.0);
        assert_eq!(obs.get(1, 1), 0.0); // drop-zone renders as background
        let again = env.render(&s, false, &mut rng);
        assert_eq!(obs, again);
    }

    #[test]
    fn noisy_render_background_deviation() {
        let env = Cmotp::new(tiny_layout());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = env.reset();
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..2000 {
            let obs = env.render(&s, true, &mut rng);
            // (2,2) is a background cell, set to 1.0 before noise.
            sum += (obs.get(2, 2) - 1.0).abs();
            count += 1;
        }
        let mad = sum / count as f64;
        let expected = NOISE_STD * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mad - expected).abs() < 0.0008,
            "mad {mad} vs expected {expected}"
        );
    }

    #[test]
    fn seeded_determinism_with_slip_and_noise() {
        let env = Cmotp::new(tiny_layout()).with_slip(0.10);
        let actions = [
            (Action::Up, Action::Up),
            (Action::Left, Action::Right),
            (Action::Up, Action::Up),
            (Action::Down, Action::Left),
            (Action::Right, Action::Right),
        ];
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = env.reset();
            let mut trace = Vec::new();
            for &(a1, a2) in &actions {
                if s.terminal {
                    break;
                }
                let out = env.step(&mut s, a1, a2, &mut rng).unwrap();
                let obs = env.render(&s, true, &mut rng);
                trace.push((s.clone(), out, obs.as_slice().to_vec()));
            }
            trace
        };
        assert_eq!(run(42), run(42));
        // A different seed diverges somewhere (slip or noise).
        let a = run(42);
        let b = run(43);
        assert!(a.iter().zip(b.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn stochastic_dropzone_mean() {
        let spec = RewardSpec {
            outcomes: vec![(1.0, 0.6), (0.4, 0.4)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| spec.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.76).abs() < 0.02, "mean {mean}");
    }
}
