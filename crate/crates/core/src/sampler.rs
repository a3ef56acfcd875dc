//! Segment-based frame selection.
//!
//! Random streams are ChaCha8 generators keyed by a 64-bit seed. Derived
//! streams mix a global seed with stream coordinates through SplitMix64,
//! so every (seed, epoch, instance) triple owns an independent stream.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FanError, Result};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream addressed by `coords` under `seed`.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, coords))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub frames: usize,
    pub segments: usize,
    /// One half-open range per segment; empty ranges occur only when
    /// `frames < segments`.
    pub boundaries: Vec<Range<usize>>,
}

/// Segment `s` covers `[floor(s·n/K), floor((s+1)·n/K))`.
pub fn plan_segments(frames: usize, segments: usize) -> Result<SegmentPlan> {
    if frames == 0 || segments == 0 {
        return Err(FanError::Domain(format!(
            "segment plan needs n >= 1 and K >= 1, got n={frames}, K={segments}"
        )));
    }
    let boundaries = (0..segments)
        .map(|s| (s * frames / segments)..((s + 1) * frames / segments))
        .collect();
    Ok(SegmentPlan {
        frames,
        segments,
        boundaries,
    })
}

/// One uniformly drawn frame per segment.
///
/// An empty segment repeats the draw of the nearest preceding non-empty
/// segment; leading empty segments repeat the first draw. The result is
/// non-decreasing and always `K` long.
pub fn sample_training<R: Rng + ?Sized>(
    frames: usize,
    segments: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let plan = plan_segments(frames, segments)?;
    let mut picks: Vec<Option<usize>> = plan
        .boundaries
        .iter()
        .map(|r| (!r.is_empty()).then(|| rng.random_range(r.clone())))
        .collect();
    let first = picks
        .iter()
        .flatten()
        .copied()
        .next()
        .expect("n >= 1 gives a non-empty segment");
    let mut last = first;
    for p in picks.iter_mut() {
        match p {
            Some(i) => last = *i,
            None => *p = Some(last),
        }
    }
    Ok(picks.into_iter().map(|p| p.expect("filled")).collect())
}

pub fn frames_for_eval(frames: usize) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(FanError::Domain("a video needs at least one frame".into()));
    }
    Ok((0..frames).collect())
}
