use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthConfig;

/// Square placement on the canvas, top-left corner in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl Slot {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.side && y < self.y + self.side
    }
}

/// Greedy shelf packing of up to `count` squares, starting in the lower
/// right corner. Shelves stack bottom to top and fill right to left; a
/// shelf is as tall as its tallest square. Each side is drawn uniformly
/// from `min_side` up to the space left. Packing stops early once the
/// remaining space is smaller than `min_side`.
pub fn plan_layout<R: Rng>(rng: &mut R, count: usize, cfg: &SynthConfig) -> Vec<Slot> {
    let mut slots = Vec::with_capacity(count);
    let mut bottom = cfg.canvas_size;
    while slots.len() < count && bottom >= cfg.min_side {
        let mut right = cfg.canvas_size;
        let mut shelf = 0;
        while slots.len() < count {
            let limit = cfg.max_side.min(right).min(bottom);
            if limit < cfg.min_side {
                break;
            }
            let side = rng.random_range(cfg.min_side..=limit);
            slots.push(Slot {
                x: right - side,
                y: bottom - side,
                side,
            });
            right -= side;
            shelf = shelf.max(side);
        }
        bottom -= shelf;
    }
    slots
}

/// Largest square of the canvas that no slot touches, preferring the
/// topmost then leftmost one.
pub fn largest_free_square(slots: &[Slot], canvas: u32) -> Slot {
    let n = canvas as usize;
    // dp[y][x]: side of the largest free square whose bottom-right corner is (x, y)
    let mut dp = vec![0u32; n * n];
    let mut best = Slot { x: 0, y: 0, side: 0 };
    for y in 0..n {
        for x in 0..n {
            if slots.iter().any(|s| s.contains(x as u32, y as u32)) {
                continue;
            }
            let v = if x == 0 || y == 0 {
                1
            } else {
                1 + dp[(y - 1) * n + x].min(dp[y * n + x - 1]).min(dp[(y - 1) * n + x - 1])
            };
            dp[y * n + x] = v;
            let (tx, ty) = (x as u32 + 1 - v, y as u32 + 1 - v);
            if v > best.side || (v == best.side && (ty, tx) < (best.y, best.x)) {
                best = Slot { x: tx, y: ty, side: v };
            }
        }
    }
    best
}
