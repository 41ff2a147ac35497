use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{EventError, EventStream, Polarity};

const US_PER_S: u128 = 1_000_000;

/// Frame rate `F = num/den` and the derived accumulation interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulationConfig {
    fps_num: u64,
    fps_den: u64,
}

impl AccumulationConfig {
    pub fn new(fps_num: u64, fps_den: u64) -> Result<Self, EventError> {
        if fps_num == 0 || fps_den == 0 {
            return Err(EventError::Config(format!(
                "fps must be positive, got {fps_num}/{fps_den}"
            )));
        }
        let cfg = Self { fps_num, fps_den };
        if cfg.interval_us() == 0 {
            return Err(EventError::Config(format!(
                "fps {fps_num}/{fps_den} gives an interval below 1 µs"
            )));
        }
        Ok(cfg)
    }

    pub fn from_fps(fps: u32) -> Result<Self, EventError> {
        Self::new(fps as u64, 1)
    }

    /// Accepts integral or decimal fps such as `29.97`, stored exactly as a
    /// rational with a power-of-ten denominator.
    pub fn from_fps_f64(fps: f64) -> Result<Self, EventError> {
        if !fps.is_finite() || fps <= 0.0 {
            return Err(EventError::Config(format!("fps must be positive, got {fps}")));
        }
        let den = 1000u64;
        let num = (fps * den as f64).round() as u64;
        let g = gcd(num, den);
        Self::new(num / g.max(1), den / g.max(1))
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn fps_ratio(&self) -> (u64, u64) {
        (self.fps_num, self.fps_den)
    }

    /// `Δt = 1/F` rounded to the nearest microsecond (33 333 µs at 30 fps).
    pub fn interval_us(&self) -> u64 {
        let num = self.fps_num as u128;
        let den = self.fps_den as u128;
        ((2 * US_PER_S * den + num) / (2 * num)) as u64
    }

    /// `ceil(duration · F / 10⁶)`, in integer arithmetic.
    pub fn frame_count(&self, duration_us: u64) -> usize {
        let n = duration_us as u128 * self.fps_num as u128;
        let d = US_PER_S * self.fps_den as u128;
        n.div_ceil(d) as usize
    }

    /// `[start, end)` of frame `index` in microseconds.
    pub fn frame_window(&self, index: usize) -> (u64, u64) {
        let dt = self.interval_us();
        (index as u64 * dt, (index as u64 + 1) * dt)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Per-pixel ON/OFF event counts over one accumulation interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountFrame {
    pub index: usize,
    width: u16,
    height: u16,
    on: Vec<u32>,
    off: Vec<u32>,
}

impl CountFrame {
    pub fn zeros(index: usize, width: u16, height: u16) -> Self {
        let n = width as usize * height as usize;
        Self {
            index,
            width,
            height,
            on: vec![0; n],
            off: vec![0; n],
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    #[inline]
    fn offset(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn on(&self, x: u16, y: u16) -> u32 {
        self.on[self.offset(x, y)]
    }

    pub fn off(&self, x: u16, y: u16) -> u32 {
        self.off[self.offset(x, y)]
    }

    pub fn total(&self, x: u16, y: u16) -> u32 {
        let i = self.offset(x, y);
        self.on[i] + self.off[i]
    }

    pub fn on_counts(&self) -> &[u32] {
        &self.on
    }

    pub fn off_counts(&self) -> &[u32] {
        &self.off
    }

    pub fn event_count(&self) -> u64 {
        self.on.iter().chain(&self.off).map(|&c| c as u64).sum()
    }

    pub fn add(&mut self, x: u16, y: u16, p: Polarity) {
        let i = self.offset(x, y);
        match p {
            Polarity::On => self.on[i] += 1,
            Polarity::Off => self.off[i] += 1,
        }
    }
}

/// Events not assigned to any frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub total_events: u64,
    /// `t >= duration`.
    pub after_duration: u64,
    /// `t < duration` but `floor(t/Δt)` is past the last frame. Only
    /// happens in the sub-interval tail left by rounding `Δt`.
    pub past_last_frame: u64,
}

impl DropReport {
    pub fn dropped(&self) -> u64 {
        self.after_duration + self.past_last_frame
    }
}

#[derive(Debug, Clone)]
pub struct Accumulation {
    pub frames: Vec<CountFrame>,
    pub report: DropReport,
}

/// Bins `stream` into `ceil(duration·F/10⁶)` frames. An event at `t` goes
/// to frame `floor(t/Δt)`.
pub fn accumulate(stream: &EventStream, cfg: &AccumulationConfig, duration_us: u64) -> Accumulation {
    let n_frames = cfg.frame_count(duration_us);
    let dt = cfg.interval_us();
    let (w, h) = (stream.width(), stream.height());
    let mut frames: Vec<CountFrame> = (0..n_frames).map(|i| CountFrame::zeros(i, w, h)).collect();
    let mut report = DropReport {
        total_events: stream.len() as u64,
        ..Default::default()
    };
    let width = w as usize;
    for e in stream.events() {
        if e.t >= duration_us {
            // sorted input: everything after this is also past the duration
            report.after_duration += 1;
            continue;
        }
        let idx = (e.t / dt) as usize;
        let Some(frame) = frames.get_mut(idx) else {
            report.past_last_frame += 1;
            continue;
        };
        let px = e.y as usize * width + e.x as usize;
        match e.p {
            Polarity::On => frame.on[px] += 1,
            Polarity::Off => frame.off[px] += 1,
        }
    }
    Accumulation { frames, report }
}

/// Accumulates a single frame without materialising the others.
pub fn accumulate_window(stream: &EventStream, cfg: &AccumulationConfig, index: usize) -> CountFrame {
    let (start, end) = cfg.frame_window(index);
    let mut frame = CountFrame::zeros(index, stream.width(), stream.height());
    for e in stream.slice_time(start, end) {
        frame.add(e.x, e.y, e.p);
    }
    frame
}

/// Gray background (128), ON-dominant pixels white (255), OFF-dominant black (0).
pub fn render_frame(frame: &CountFrame) -> GrayImage {
    let data = frame
        .on
        .iter()
        .zip(&frame.off)
        .map(|(&on, &off)| match on.cmp(&off) {
            std::cmp::Ordering::Greater => 255u8,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => 128,
        })
        .collect();
    GrayImage::from_raw(frame.width as u32, frame.height as u32, data)
        .expect("buffer size matches frame dimensions")
}
