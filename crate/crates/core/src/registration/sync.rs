//! Temporal alignment between the event and RGB clocks.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::events::{AccumulationConfig, CountFrame, Event, EventStream};

/// Lag found by cross-correlating per-frame activity of the two sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Frames by which the event series trails the RGB series:
    /// `event[i] ≈ rgb[i - lag]`.
    pub lag_frames: i64,
    /// `lag_frames · Δt`, the event-minus-RGB clock offset.
    pub offset_us: i64,
    /// Pearson correlation at the chosen lag.
    pub score: f64,
}

/// Searches lags in `[-max_lag, max_lag]` for the highest normalised
/// cross-correlation. Ties go to the lag closest to zero (negative first).
pub fn estimate_temporal_offset(
    event_activity: &[f64],
    rgb_activity: &[f64],
    max_lag: usize,
    cfg: &AccumulationConfig,
) -> Result<OffsetEstimate, RegistrationError> {
    const MIN_LEN: usize = 8;
    if event_activity.len() < MIN_LEN || rgb_activity.len() < MIN_LEN {
        return Err(RegistrationError::Parameter(format!(
            "activity series need at least {MIN_LEN} samples"
        )));
    }
    if event_activity
        .iter()
        .chain(rgb_activity)
        .any(|v| !v.is_finite())
    {
        return Err(RegistrationError::Parameter("non-finite activity".into()));
    }
    if is_constant(event_activity) || is_constant(rgb_activity) {
        return Err(RegistrationError::UndefinedOffset(
            "activity series has zero variance".into(),
        ));
    }
    // keep at least half of the shorter series overlapping
    let min_overlap = (event_activity.len().min(rgb_activity.len()) / 2).max(2);
    let max_lag = max_lag as i64;

    let mut best: Option<(i64, f64)> = None;
    let mut lags: Vec<i64> = (-max_lag..=max_lag).collect();
    lags.sort_by_key(|&k| (k.abs(), k));
    for k in lags {
        let pairs: Vec<(f64, f64)> = (0..event_activity.len() as i64)
            .filter_map(|i| {
                let j = i - k;
                (j >= 0 && (j as usize) < rgb_activity.len())
                    .then(|| (event_activity[i as usize], rgb_activity[j as usize]))
            })
            .collect();
        if pairs.len() < min_overlap {
            continue;
        }
        let Some(r) = pearson(&pairs) else { continue };
        if best.is_none_or(|(_, s)| r > s) {
            best = Some((k, r));
        }
    }
    let (lag, score) = best.ok_or_else(|| {
        RegistrationError::UndefinedOffset("no lag with a non-degenerate overlap".into())
    })?;
    Ok(OffsetEstimate {
        lag_frames: lag,
        offset_us: lag * cfg.interval_us() as i64,
        score,
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Total events per accumulated frame.
pub fn event_activity(frames: &[CountFrame]) -> Vec<f64> {
    frames.iter().map(|f| f.event_count() as f64).collect()
}

/// Sum of absolute differences between consecutive frames; the first entry
/// is 0.
pub fn rgb_activity(frames: &[GrayImage]) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if i == 0 {
            out.push(0.0);
            continue;
        }
        let prev = &frames[i - 1];
        let e: u64 = f
            .as_raw()
            .iter()
            .zip(prev.as_raw())
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        out.push(e as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub kept: u64,
    /// Events whose shifted timestamp would be negative or overflow.
    pub dropped: u64,
}

/// Moves events onto the RGB clock: `t ← t − t_offset`.
pub fn apply_offset(stream: &EventStream, t_offset_us: i64) -> (EventStream, OffsetReport) {
    let mut dropped = 0u64;
    let events: Vec<Event> = stream
        .events()
        .iter()
        .filter_map(|e| {
            let t = e.t as i128 - t_offset_us as i128;
            if t < 0 || t > u64::MAX as i128 {
                dropped += 1;
                None
            } else {
                Some(Event { t: t as u64, ..*e })
            }
        })
        .collect();
    let kept = events.len() as u64;
    let out = EventStream::new(stream.width(), stream.height(), events)
        .expect("shifting preserves order and bounds");
    (out, OffsetReport { kept, dropped })
}
