//! Data harness: synthetic RGB-T sequence generation, benchmark-format
//! sequence I/O, precision/success evaluation, and the experiment drivers
//! behind the CLI.

pub mod eval;
pub mod experiment;
pub mod seqio;
pub mod synth;

use crate::backbone::FramePair;
use crate::geom::BoundingBox;
use crate::{Error, Result};

/// A loaded or generated sequence: aligned frame pairs, per-frame ground
/// truth, and attribute tags (occlusion, fast motion, ...).
#[derive(Clone)]
pub struct SequenceRecord {
    pub frames: Vec<FramePair>,
    pub gt: Vec<BoundingBox>,
    pub tags: Vec<String>,
}

impl SequenceRecord {
    pub fn new(frames: Vec<FramePair>, gt: Vec<BoundingBox>, tags: Vec<String>) -> Result<Self> {
        if frames.len() != gt.len() {
            return Err(Error::Sequence(format!(
                "{} frames but {} ground-truth boxes",
                frames.len(),
                gt.len()
            )));
        }
        if frames.is_empty() {
            return Err(Error::Sequence("empty sequence".into()));
        }
        Ok(SequenceRecord { frames, gt, tags })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}
