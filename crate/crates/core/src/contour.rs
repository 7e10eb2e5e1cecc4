//! Iso-contours of a probability slice by marching squares.
//!
//! Sample points are pixel centres, so pixel `(col, row)` sits at the point
//! `(col, row)` of the output coordinate system. The slice is padded with a
//! one-pixel background border, which makes every contour a closed ring.
//! Rings keep the region above the threshold on their left in `(col, row)`
//! coordinates: outer boundaries have positive shoelace area and holes
//! negative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::reconstruct::{check_threshold, ProbVolume};
use crate::volume::Slice2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    /// Vertices of a closed ring; the last vertex connects back to the first.
    pub points: Vec<[f64; 2]>,
}

impl Contour {
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut acc = 0.0;
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        0.5 * acc
    }

    pub fn is_hole(&self) -> bool {
        self.signed_area() < 0.0
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Contour {
        Contour {
            points: self.points.iter().map(|&[x, y]| [x * sx, y * sy]).collect(),
        }
    }
}

/// Grid edge in padded coordinates. `Horizontal(i, j)` joins `(i, j)` and
/// `(i + 1, j)`; `Vertical(i, j)` joins `(i, j)` and `(i, j + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    Horizontal(usize, usize),
    Vertical(usize, usize),
}

struct Padded<'a> {
    s: &'a Slice2D,
    th: f64,
}

impl Padded<'_> {
    fn value(&self, i: usize, j: usize) -> f64 {
        if i == 0 || j == 0 || i > self.s.width || j > self.s.height {
            f64::NEG_INFINITY
        } else {
            self.s.get(i - 1, j - 1)
        }
    }

    fn inside(&self, i: usize, j: usize) -> bool {
        self.value(i, j) > self.th
    }

    fn crossing(&self, e: Edge) -> [f64; 2] {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::Horizontal(i, j) => ((i, j), (i + 1, j)),
            Edge::Vertical(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (self.value(i0, j0), self.value(i1, j1));
        // Border samples have no value; their crossing sits half a pixel
        // outside the image.
        let t = if a.is_infinite() || b.is_infinite() {
            0.5
        } else {
            ((self.th - a) / (b - a)).clamp(0.0, 1.0)
        };
        let x = i0 as f64 + t * (i1 as f64 - i0 as f64) - 1.0;
        let y = j0 as f64 + t * (j1 as f64 - j0 as f64) - 1.0;
        [x, y]
    }
}

/// Closed iso-contours of `{value > th}`.
pub fn contours(slice: &Slice2D, th: f64) -> Result<Vec<Contour>> {
    check_threshold(th)?;
    let grid = Padded { s: slice, th };
    let (cw, ch) = (slice.width + 1, slice.height + 1);

    // start edge -> end edge, one entry per oriented segment
    let mut next: BTreeMap<Edge, Edge> = BTreeMap::new();
    for j in 0..ch {
        for i in 0..cw {
            // corners counter-clockwise in (col, row): TL, TR, BR, BL
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let inside = corners.map(|(a, b)| grid.inside(a, b));
            let edges = [
                Edge::Horizontal(i, j),
                Edge::Vertical(i + 1, j),
                Edge::Horizontal(i, j + 1),
                Edge::Vertical(i, j),
            ];
            let crossings = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).count();
            match crossings {
                0 => {}
                2 => {
                    let start = (0..4).find(|&k| inside[k] && !inside[(k + 1) % 4]).unwrap();
                    let end = (0..4).find(|&k| !inside[k] && inside[(k + 1) % 4]).unwrap();
                    next.insert(edges[start], edges[end]);
                }
                _ => {
                    let centre = corners.iter().map(|&(a, b)| grid.value(a, b)).sum::<f64>() / 4.0;
                    let joined = centre > th;
                    for k in 0..4 {
                        // cut off corner k when it is the odd one out locally
                        let cut = if joined { !inside[k] } else { inside[k] };
                        if !cut {
                            continue;
                        }
                        let before = edges[(k + 3) % 4];
                        let after = edges[k];
                        if inside[k] {
                            next.insert(after, before);
                        } else {
                            next.insert(before, after);
                        }
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    while let Some((&first, _)) = next.iter().next() {
        let mut points = Vec::new();
        let mut e = first;
        while let Some(n) = next.remove(&e) {
            points.push(grid.crossing(e));
            e = n;
        }
        debug_assert_eq!(e, first, "marching squares ring did not close");
        out.push(Contour { points });
    }
    Ok(out)
}

/// Even-odd point-in-polygon test over a set of rings.
pub fn contains(rings: &[Contour], x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.points.len();
        for i in 0..n {
            let [xi, yi] = ring.points[i];
            let [xj, yj] = ring.points[(i + 1) % n];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Contours of `out_k` (1-based) of a reconstructed plane.
pub fn extract_contours(v: &ProbVolume, k: usize, th: f64) -> Result<Vec<Contour>> {
    contours(v.slice(k)?, th)
}
