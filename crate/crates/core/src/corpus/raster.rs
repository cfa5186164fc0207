use super::{CorpusError, StrokeSketch};

/// Blank border kept on every side of the drawing, in pixels.
pub const RASTER_MARGIN: usize = 2;

/// Single-channel `side x side` intensity grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterSketch {
    side: usize,
    grid: Vec<f64>,
}

impl RasterSketch {
    pub fn from_grid(side: usize, grid: Vec<f64>) -> Result<Self, CorpusError> {
        if grid.len() != side * side {
            return Err(CorpusError::Format(format!(
                "grid of {} values for side {side}",
                grid.len()
            )));
        }
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CorpusError::Format("intensity outside [0, 1]".into()));
        }
        Ok(RasterSketch { side, grid })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.side + col]
    }

    pub fn ink_count(&self) -> usize {
        self.grid.iter().filter(|v| **v >= 0.5).count()
    }

    /// Three identical brightness channels for encoders that expect RGB input.
    pub fn tiled_channels(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::repeat_n(self.grid.as_slice(), 3)
    }

    fn plot(&mut self, x: i64, y: i64) {
        let side = self.side as i64;
        if (0..side).contains(&x) && (0..side).contains(&y) {
            self.grid[(y * side + x) as usize] = 1.0;
        }
    }

    /// Bresenham segment between integer endpoints, both inclusive.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.plot(x, y);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Renders a sketch with 1-pixel lines of intensity 1 on a 0 background.
///
/// The drawing is scaled uniformly so its bounding box fits inside the grid
/// minus [`RASTER_MARGIN`] on each side, then centred. A sketch whose points
/// all coincide becomes a single pixel at the grid centre.
pub fn rasterize(sketch: &StrokeSketch, side: usize) -> Result<RasterSketch, CorpusError> {
    if side < 16 {
        return Err(CorpusError::RasterTooSmall(side));
    }
    if sketch.is_empty() {
        return Err(CorpusError::EmptySequence);
    }
    let mut raster = RasterSketch {
        side,
        grid: vec![0.0; side * side],
    };
    let polylines = sketch.polylines();
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in polylines.iter().flatten() {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let (w, h) = (max_x - min_x, max_y - min_y);
    let extent = w.max(h);
    if extent <= 0.0 {
        let c = (side / 2) as i64;
        raster.plot(c, c);
        return Ok(raster);
    }
    let avail = (side - 1 - 2 * RASTER_MARGIN) as f64;
    let scale = avail / extent;
    let off_x = RASTER_MARGIN as f64 + (avail - w * scale) / 2.0;
    let off_y = RASTER_MARGIN as f64 + (avail - h * scale) / 2.0;
    let to_px = |(x, y): (f64, f64)| -> (i64, i64) {
        (
            (off_x + (x - min_x) * scale).round() as i64,
            (off_y + (y - min_y) * scale).round() as i64,
        )
    };
    for line in &polylines {
        let mut prev = to_px(line[0]);
        raster.plot(prev.0, prev.1);
        for &p in &line[1..] {
            let cur = to_px(p);
            raster.line(prev, cur);
            prev = cur;
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{to_stroke_sequence, RawSketch};

    fn sketch(strokes: Vec<Vec<(i32, i32)>>) -> StrokeSketch {
        to_stroke_sequence(&RawSketch::new(strokes, "t").unwrap(), 0).unwrap()
    }

    fn ink_rows(r: &RasterSketch) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..r.side())
            .filter(|&y| (0..r.side()).any(|x| r.get(y, x) > 0.0))
            .collect();
        rows.dedup();
        rows
    }

    #[test]
    fn horizontal_stroke_is_one_row() {
        let r = rasterize(&sketch(vec![vec![(10, 40), (90, 40)]]), 64).unwrap();
        assert_eq!(ink_rows(&r).len(), 1);
        assert_eq!(r.ink_count(), 64 - 2 * RASTER_MARGIN);
    }

    #[test]
    fn degenerate_sketch_marks_centre() {
        let r = rasterize(&sketch(vec![vec![(5, 5)]]), 32).unwrap();
        assert_eq!(r.ink_count(), 1);
        assert_eq!(r.get(16, 16), 1.0);
        let r = rasterize(&sketch(vec![vec![(5, 5), (5, 5)], vec![(5, 5)]]), 32).unwrap();
        assert_eq!(r.ink_count(), 1);
    }

    #[test]
    fn too_small_side_rejected() {
        assert!(rasterize(&sketch(vec![vec![(0, 0)]]), 15).is_err());
    }

    #[test]
    fn values_are_binary_and_within_margin() {
        let r = rasterize(&sketch(vec![vec![(0, 0), (50, 20), (10, 80)], vec![(30, 30)]]), 48).unwrap();
        assert!(r.grid().iter().all(|v| *v == 0.0 || *v == 1.0));
        for y in 0..48 {
            for x in 0..48 {
                if r.get(y, x) > 0.0 {
                    assert!((2..46).contains(&x) && (2..46).contains(&y));
                }
            }
        }
        assert_eq!(r.tiled_channels().count(), 3);
    }

    #[test]
    fn scale_invariant_in_offsets() {
        let s = sketch(vec![vec![(0, 0), (30, 10), (12, 40)]]);
        let half = s.normalized(&crate::corpus::OffsetNormalizer { scale: 2.0 });
        assert_eq!(rasterize(&s, 64).unwrap(), rasterize(&half, 64).unwrap());
    }
}
