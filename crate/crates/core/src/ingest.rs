//! Visual words and clip documents from pre-extracted motion events.
//!
//! Image coordinates have `y` growing downward, so a negative `dy` is
//! upward motion. A word is the cell position plus one of four quantised
//! directions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MctmError, Result};
use crate::model::{Corpus, Document, ModelSpec, WordId};

pub const NUM_DIRECTIONS: usize = 4;
pub const DEFAULT_CELL: u32 = 8;
/// Clips with fewer words are dropped from the corpus.
pub const DEFAULT_MIN_WORDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Left,
    Down,
    Right,
}

impl Direction {
    pub const ALL: [Direction; NUM_DIRECTIONS] =
        [Direction::Up, Direction::Left, Direction::Down, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    /// Unit vector in image coordinates.
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::Up => (0.0, -1.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Down => (0.0, 1.0),
            Direction::Right => (1.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Left => "left",
            Direction::Down => "down",
            Direction::Right => "right",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = MctmError;

    /// Accepts a name (`up`, `left`, `down`, `right`) or an index `0..4`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Direction::from_index(i)
                .ok_or_else(|| MctmError::InvalidInput(format!("direction index {i} out of range")));
        }
        Direction::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MctmError::InvalidInput(format!("unknown direction {s:?}")))
    }
}

/// Nearest axis direction; exact diagonals go to the horizontal axis.
pub fn quantise_direction(dx: f64, dy: f64) -> Result<Direction> {
    if !dx.is_finite() || !dy.is_finite() {
        return Err(MctmError::InvalidInput("motion vector is not finite".into()));
    }
    if dx == 0.0 && dy == 0.0 {
        return Err(MctmError::InvalidInput("zero motion vector has no direction".into()));
    }
    Ok(if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dy > 0.0 {
        Direction::Down
    } else {
        Direction::Up
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub frame_w: u32,
    pub frame_h: u32,
    pub cell: u32,
}

impl FrameLayout {
    pub fn new(frame_w: u32, frame_h: u32, cell: u32) -> Result<FrameLayout> {
        if cell == 0 || frame_w < cell || frame_h < cell {
            return Err(MctmError::InvalidInput(format!(
                "frame {frame_w}x{frame_h} holds no whole {cell}-pixel cell"
            )));
        }
        Ok(FrameLayout {
            frame_w,
            frame_h,
            cell,
        })
    }

    /// Whole cells across; a trailing partial column is dropped.
    pub fn cols(&self) -> usize {
        (self.frame_w / self.cell) as usize
    }

    pub fn rows(&self) -> usize {
        (self.frame_h / self.cell) as usize
    }

    /// Pixels lost to partial cells on the right and bottom edges.
    pub fn dropped_pixels(&self) -> (u32, u32) {
        (self.frame_w % self.cell, self.frame_h % self.cell)
    }

    pub fn vocab_size(&self) -> usize {
        self.cols() * self.rows() * NUM_DIRECTIONS
    }

    pub fn word_id(&self, cell_x: usize, cell_y: usize, dir: Direction) -> Result<WordId> {
        if cell_x >= self.cols() || cell_y >= self.rows() {
            return Err(MctmError::InvalidInput(format!(
                "cell ({cell_x}, {cell_y}) outside the {}x{} grid",
                self.cols(),
                self.rows()
            )));
        }
        Ok(((cell_y * self.cols() + cell_x) * NUM_DIRECTIONS + dir.index()) as WordId)
    }

    /// Inverse of [`FrameLayout::word_id`]: `(cell_x, cell_y, direction)`.
    pub fn decode(&self, word: WordId) -> Result<(usize, usize, Direction)> {
        let w = word as usize;
        if w >= self.vocab_size() {
            return Err(MctmError::InvalidInput(format!(
                "word {word} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        let dir = Direction::ALL[w % NUM_DIRECTIONS];
        let cell = w / NUM_DIRECTIONS;
        Ok((cell % self.cols(), cell / self.cols(), dir))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub frame: u64,
    pub cell_x: usize,
    pub cell_y: usize,
    pub dir: Direction,
}

/// One event per line: `frame,cell_x,cell_y,dir`. A first line whose frame
/// field is not a number is taken as a header; `#` lines and blank lines are skipped.
pub fn parse_events(text: &str) -> Result<Vec<MotionEvent>> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if n == 0 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        let bad = |what: &str| MctmError::InvalidInput(format!("event line {}: {what}", n + 1));
        if fields.len() != 4 {
            return Err(bad("expected frame,cell_x,cell_y,dir"));
        }
        events.push(MotionEvent {
            frame: fields[0].parse().map_err(|_| bad("bad frame"))?,
            cell_x: fields[1].parse().map_err(|_| bad("bad cell_x"))?,
            cell_y: fields[2].parse().map_err(|_| bad("bad cell_y"))?,
            dir: fields[3].parse().map_err(|_| bad("bad direction"))?,
        });
    }
    Ok(events)
}

pub fn format_events(events: &[MotionEvent]) -> String {
    let mut out = String::from("frame,cell_x,cell_y,dir\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.frame, e.cell_x, e.cell_y, e.dir));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub fps: f64,
    pub clip_seconds: f64,
    pub min_words: usize,
}

impl ClipConfig {
    pub fn new(fps: f64) -> ClipConfig {
        ClipConfig {
            fps,
            clip_seconds: 1.0,
            min_words: DEFAULT_MIN_WORDS,
        }
    }

    pub fn frames_per_clip(&self) -> Result<u64> {
        let f = (self.fps * self.clip_seconds).ceil();
        if !(f.is_finite() && f >= 1.0) {
            return Err(MctmError::InvalidInput(format!(
                "fps {} and clip length {} s give no whole frame per clip",
                self.fps, self.clip_seconds
            )));
        }
        Ok(f as u64)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltCorpus {
    pub corpus: Corpus,
    /// `kept_windows[t]` is the clip index of document `t`.
    pub kept_windows: Vec<usize>,
    /// Clips spanned by the event stream, kept or not.
    pub num_windows: usize,
}

/// Groups frame-ordered events into non-overlapping clips, one document per clip.
pub fn build_corpus(events: &[MotionEvent], layout: &FrameLayout, clip: &ClipConfig) -> Result<BuiltCorpus> {
    let per_clip = clip.frames_per_clip()?;
    if let Some(i) = events.windows(2).position(|w| w[1].frame < w[0].frame) {
        return Err(MctmError::InvalidInput(format!(
            "events are not frame-ordered at event {}",
            i + 1
        )));
    }
    let spec = ModelSpec::new(layout.vocab_size(), 1, 1)?;
    let num_windows = events
        .last()
        .map_or(0, |e| (e.frame / per_clip) as usize + 1);
    let mut windows: Vec<Vec<WordId>> = vec![Vec::new(); num_windows];
    for e in events {
        let w = layout.word_id(e.cell_x, e.cell_y, e.dir)?;
        windows[(e.frame / per_clip) as usize].push(w);
    }
    let min = clip.min_words.max(1);
    let mut kept_windows = Vec::new();
    let mut docs = Vec::new();
    for (i, words) in windows.into_iter().enumerate() {
        if words.len() >= min {
            kept_windows.push(i);
            docs.push(Document::new(words));
        }
    }
    Ok(BuiltCorpus {
        corpus: Corpus::new(spec, docs)?,
        kept_windows,
        num_windows,
    })
}
