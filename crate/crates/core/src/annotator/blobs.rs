use serde::{Deserialize, Serialize};

use super::{BoxAnnotation, BoxSource, UNASSIGNED_TRACK};
use crate::events::CountFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    Eight,
}

/// Tuning knobs of the blob detector and the frame-to-frame linker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    /// Minimum `on + off` count for a pixel to be active.
    pub threshold: u32,
    pub connectivity: Connectivity,
    /// Component size bounds in pixels, inclusive.
    pub min_area: u32,
    pub max_area: u32,
    /// Maximum centroid displacement between consecutive frames.
    pub link_distance: f64,
    /// Tracks with fewer boxes are discarded.
    pub min_track_len: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            threshold: 2,
            connectivity: Connectivity::Eight,
            min_area: 9,
            max_area: 10_000,
            link_distance: 40.0,
            min_track_len: 5,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.threshold < 1 {
            return Err("threshold must be at least 1".into());
        }
        if self.min_area == 0 || self.min_area > self.max_area {
            return Err(format!(
                "area bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.min_area, self.max_area
            ));
        }
        if !(self.link_distance >= 0.0) {
            return Err("link distance must be non-negative".into());
        }
        Ok(())
    }
}

/// A connected set of active pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub area: u32,
    pub min_x: u16,
    pub min_y: u16,
    pub max_x: u16,
    pub max_y: u16,
}

/// Connected components of pixels with `on + off >= threshold`, in
/// raster order of their first pixel. Two-pass union-find labelling.
pub fn label_components(frame: &CountFrame, threshold: u32, conn: Connectivity) -> Vec<Component> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let on = frame.on_counts();
    let off = frame.off_counts();
    let active = |i: usize| on[i] + off[i] >= threshold;

    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    fn find(parent: &mut [u32], mut a: u32) -> u32 {
        while parent[a as usize] != a {
            parent[a as usize] = parent[parent[a as usize] as usize];
            a = parent[a as usize];
        }
        a
    }

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !active(i) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(labels[i - 1]);
            }
            if y > 0 {
                push(labels[i - w]);
                if conn == Connectivity::Eight {
                    if x > 0 {
                        push(labels[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(labels[i - w + 1]);
                    }
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[i] = l;
                continue;
            }
            let mut root = find(&mut parent, neighbours[0]);
            for &l in &neighbours[1..n] {
                let r = find(&mut parent, l);
                if r != root {
                    let (lo, hi) = (root.min(r), root.max(r));
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            labels[i] = root;
        }
    }

    let mut slot = vec![usize::MAX; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let r = find(&mut parent, l) as usize;
            if slot[r] == usize::MAX {
                slot[r] = comps.len();
                comps.push(Component {
                    area: 0,
                    min_x: x as u16,
                    min_y: y as u16,
                    max_x: x as u16,
                    max_y: y as u16,
                });
            }
            let c = &mut comps[slot[r]];
            c.area += 1;
            c.min_x = c.min_x.min(x as u16);
            c.max_x = c.max_x.max(x as u16);
            c.max_y = y as u16;
        }
    }
    comps
}

/// Tight boxes around area-filtered components, largest first. Boxes carry
/// `source = auto` and no track.
pub fn detect_blobs(frame: &CountFrame, params: &BlobParams) -> Vec<BoxAnnotation> {
    let mut comps: Vec<Component> = label_components(frame, params.threshold, params.connectivity)
        .into_iter()
        .filter(|c| (params.min_area..=params.max_area).contains(&c.area))
        .collect();
    comps.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then((a.min_y, a.min_x).cmp(&(b.min_y, b.min_x)))
    });
    comps
        .into_iter()
        .map(|c| {
            BoxAnnotation::new(
                frame.index as u32,
                UNASSIGNED_TRACK,
                c.min_x as f64,
                c.min_y as f64,
                (c.max_x - c.min_x + 1) as f64,
                (c.max_y - c.min_y + 1) as f64,
                BoxSource::Auto,
            )
        })
        .collect()
}
