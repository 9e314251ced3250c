//! Region similarity (IoU) and boundary F-measure between binary masks, and
//! aggregation of per-frame scores into reports.

mod report;

use crate::error::{Error, Result};

pub use report::{
    aggregate, read_csv, write_csv, ConditionSummary, EvalReport, EvalRow, SeedMean, SequenceMean,
    MEAN_MARKER,
};

/// Binary H×W mask, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn empty(width: usize, height: usize) -> Self {
        SegMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Rejects buffers of the wrong length or with values outside {0, 1}.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::input(format!(
                "{} mask values for a {width}×{height} mask",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::input(format!("mask value {v} is not binary")));
        }
        Ok(SegMask {
            width,
            height,
            data,
        })
    }

    /// Foreground wherever `labels` is nonzero.
    pub fn from_labels(width: usize, height: usize, labels: &[u8]) -> Result<Self> {
        Self::new(width, height, labels.iter().map(|&v| u8::from(v != 0)).collect())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        SegMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Nearest-neighbour resize; stays binary.
    pub fn resize_nearest(&self, width: usize, height: usize) -> SegMask {
        let xs = crate::raster::nearest_taps(self.width, width);
        let ys = crate::raster::nearest_taps(self.height, height);
        SegMask::from_fn(width, height, |x, y| self.get(xs[x], ys[y]))
    }

    /// Foreground pixels with at least one background 4-neighbour; pixels
    /// outside the image count as background.
    pub fn boundary(&self) -> SegMask {
        let (w, h) = (self.width, self.height);
        SegMask::from_fn(w, h, |x, y| {
            self.get(x, y)
                && (x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !self.get(x - 1, y)
                    || !self.get(x + 1, y)
                    || !self.get(x, y - 1)
                    || !self.get(x, y + 1))
        })
    }

    /// Marks every pixel within Euclidean distance `radius` of a foreground pixel.
    pub fn dilate_disc(&self, radius: usize) -> SegMask {
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = SegMask::empty(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if !self.get(x as usize, y as usize) {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        out.data[(ny * w + nx) as usize] = 1;
                    }
                }
            }
        }
        out
    }
}

fn check_dims(m: &SegMask, g: &SegMask) -> Result<()> {
    if (m.width, m.height) != (g.width, g.height) {
        return Err(Error::input(format!(
            "masks are {}×{} and {}×{}",
            m.width, m.height, g.width, g.height
        )));
    }
    Ok(())
}

/// `|m ∩ g| / |m ∪ g|`; two empty masks agree perfectly (1.0).
pub fn iou(m: &SegMask, g: &SegMask) -> Result<f64> {
    check_dims(m, g)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in m.data.iter().zip(&g.data) {
        inter += usize::from(a != 0 && b != 0);
        union += usize::from(a != 0 || b != 0);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `ceil(0.0075 · diagonal)` pixels.
pub fn default_tolerance(width: usize, height: usize) -> usize {
    (0.0075 * ((width * width + height * height) as f64).sqrt()).ceil() as usize
}

/// Boundary F-measure. A boundary pixel of one mask is matched when a
/// boundary pixel of the other lies within `tolerance` pixels (Euclidean).
/// Two empty masks score 1.0; `P + R = 0` scores 0.0.
pub fn boundary_f(m: &SegMask, g: &SegMask, tolerance: Option<usize>) -> Result<f64> {
    check_dims(m, g)?;
    let tol = tolerance.unwrap_or_else(|| default_tolerance(m.width, m.height));
    let mb = m.boundary();
    let gb = g.boundary();
    let (m_count, g_count) = (mb.count(), gb.count());
    if m_count == 0 && g_count == 0 {
        return Ok(1.0);
    }
    if m_count == 0 || g_count == 0 {
        return Ok(0.0);
    }
    let g_near = gb.dilate_disc(tol);
    let m_near = mb.dilate_disc(tol);
    let matched = |b: &SegMask, near: &SegMask| {
        b.data
            .iter()
            .zip(&near.data)
            .filter(|(&a, &n)| a != 0 && n != 0)
            .count()
    };
    let precision = matched(&mb, &g_near) as f64 / m_count as f64;
    let recall = matched(&gb, &m_near) as f64 / g_count as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(size: usize, left: usize, top: usize, side: usize) -> SegMask {
        SegMask::from_fn(size, size, |x, y| {
            (left..left + side).contains(&x) && (top..top + side).contains(&y)
        })
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = square(8, 1, 1, 3);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = square(8, 5, 5, 2);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_one_shared_pixel_of_four() {
        let mut m = vec![0u8; 16];
        let mut g = vec![0u8; 16];
        m[0] = 1;
        m[5] = 1;
        g[5] = 1;
        g[10] = 1;
        g[15] = 1;
        let m = SegMask::new(4, 4, m).unwrap();
        let g = SegMask::new(4, 4, g).unwrap();
        assert_eq!(iou(&m, &g).unwrap(), 0.25);
    }

    #[test]
    fn empty_masks_agree() {
        let e = SegMask::empty(5, 5);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(boundary_f(&e, &e, None).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = SegMask::empty(4, 4);
        let b = SegMask::empty(4, 5);
        assert!(iou(&a, &b).is_err());
        assert!(boundary_f(&a, &b, Some(1)).is_err());
    }

    #[test]
    fn non_binary_values_rejected() {
        assert!(SegMask::new(2, 1, vec![0, 2]).is_err());
        assert_eq!(
            SegMask::from_labels(3, 1, &[0, 2, 3]).unwrap().data(),
            &[0, 1, 1]
        );
    }

    #[test]
    fn boundary_f_identical_and_empty_prediction() {
        let g = square(12, 2, 3, 5);
        assert_eq!(boundary_f(&g, &g, None).unwrap(), 1.0);
        assert_eq!(boundary_f(&SegMask::empty(12, 12), &g, None).unwrap(), 0.0);
        assert_eq!(boundary_f(&g, &SegMask::empty(12, 12), None).unwrap(), 0.0);
    }

    #[test]
    fn boundary_f_one_pixel_shift_within_tolerance() {
        let a = square(20, 4, 4, 10);
        let b = square(20, 5, 4, 10);
        assert_eq!(boundary_f(&a, &b, Some(2)).unwrap(), 1.0);
        assert!(boundary_f(&a, &b, Some(0)).unwrap() < 1.0);
    }

    #[test]
    fn boundary_ring_of_square() {
        let b = square(6, 1, 1, 4).boundary();
        assert_eq!(b.count(), 12);
        assert!(!b.get(2, 2));
        // border pixels of a full mask are boundary pixels
        assert_eq!(SegMask::from_fn(3, 3, |_, _| true).boundary().count(), 8);
    }

    #[test]
    fn default_tolerance_follows_diagonal() {
        assert_eq!(default_tolerance(16, 16), 1);
        assert_eq!(default_tolerance(96, 96), 2);
        assert_eq!(default_tolerance(854, 480), 8);
    }

    #[test]
    fn nearest_resize_stays_binary() {
        let m = square(7, 1, 2, 3).resize_nearest(16, 9);
        assert!(m.data().iter().all(|&v| v <= 1));
        assert_eq!((m.width(), m.height()), (16, 9));
    }
}
