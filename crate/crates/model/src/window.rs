//! Window partitioning with optional cyclic shift and padding masks.

use std::rc::Rc;

use fuseg3d_tensor::{PadMode, Tensor, WindowMask};

/// Shift applied along an axis of length `len`: half a window, or nothing
/// when the axis fits in a single window.
pub fn shift_for(len: usize, window: usize, shifted: bool) -> usize {
    if shifted && len > window {
        window / 2
    } else {
        0
    }
}

/// Relative-position lookup for an `m³` window: entry `i * m³ + j` indexes a
/// `(2m - 1)³` table by the coordinate offset between tokens `i` and `j`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m * m;
    let span = 2 * m - 1;
    let coord = |t: usize| (t / (m * m), (t / m) % m, t % m);
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        let (a0, b0, c0) = coord(i);
        for j in 0..n {
            let (a1, b1, c1) = coord(j);
            let da = a0 + m - 1 - a1;
            let db = b0 + m - 1 - b1;
            let dc = c0 + m - 1 - c1;
            index.push((da * span + db) * span + dc);
        }
    }
    index
}

/// How a `(B, h, w, d, C)` token grid is cut into `M³` windows.
///
/// Each axis is zero-padded up to a multiple of `M`, rolled back by the
/// shift, then partitioned. Padding tokens and token pairs that were not
/// neighbours before the roll are excluded through the mask.
#[derive(Debug, Clone)]
pub struct WindowLayout {
    pub grid: [usize; 3],
    pub padded: [usize; 3],
    pub window: usize,
    pub shift: [usize; 3],
    pub mask: Option<Rc<WindowMask>>,
}

impl WindowLayout {
    pub fn new(grid: [usize; 3], window: usize, shifted: bool) -> Self {
        assert!(window >= 1);
        let padded = grid.map(|l| l.div_ceil(window) * window);
        let shift = grid.map(|l| shift_for(l, window, shifted));
        let mut layout = WindowLayout { grid, padded, window, shift, mask: None };
        if padded != grid || shift.iter().any(|&s| s > 0) {
            layout.mask = Some(Rc::new(layout.labels()));
        }
        layout
    }

    pub fn counts(&self) -> [usize; 3] {
        self.padded.map(|p| p / self.window)
    }

    pub fn num_windows(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.pow(3)
    }

    /// Token labels on the rolled grid: `-1` for padding, otherwise a region
    /// id from the three bands `[0, L - M)`, `[L - M, L - s)`, `[L - s, L)`
    /// of every shifted axis.
    fn labels(&self) -> WindowMask {
        let m = self.window;
        let [nh, nw, nd] = self.counts();
        let n = m * m * m;
        let region = |axis: usize, r: usize| -> i32 {
            let (l, s) = (self.padded[axis], self.shift[axis]);
            if s == 0 || r < l - m {
                0
            } else if r < l - s {
                1
            } else {
                2
            }
        };
        let is_pad = |axis: usize, r: usize| (r + self.shift[axis]) % self.padded[axis] >= self.grid[axis];
        let mut labels = Vec::with_capacity(nh * nw * nd * n);
        for a in 0..nh {
            for b in 0..nw {
                for c in 0..nd {
                    for t in 0..n {
                        let r = [a * m + t / (m * m), b * m + (t / m) % m, c * m + t % m];
                        if (0..3).any(|ax| is_pad(ax, r[ax])) {
                            labels.push(-1);
                        } else {
                            labels.push((region(0, r[0]) * 3 + region(1, r[1])) * 3 + region(2, r[2]));
                        }
                    }
                }
            }
        }
        WindowMask { windows: nh * nw * nd, tokens: n, labels }
    }

    /// `(B, h, w, d, C)` → `(B · nW, M³, C)`.
    pub fn partition(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        assert_eq!(&s[1..4], &self.grid, "token grid does not match layout");
        let (b, c, m) = (s[0], s[4], self.window);
        let pads = [(0, 0), (0, self.padded[0] - self.grid[0]), (0, self.padded[1] - self.grid[1]), (0, self.padded[2] - self.grid[2]), (0, 0)];
        let x = x.pad(&pads, PadMode::Zeros);
        let shifts = [0, -(self.shift[0] as isize), -(self.shift[1] as isize), -(self.shift[2] as isize), 0];
        let x = x.roll(&shifts);
        let [nh, nw, nd] = self.counts();
        x.reshape(&[b, nh, m, nw, m, nd, m, c]).permute(&[0, 1, 3, 5, 2, 4, 6, 7]).reshape(&[b * nh * nw * nd, m * m * m, c])
    }

    /// Inverse of [`partition`](Self::partition).
    pub fn unpartition(&self, windows: &Tensor, batch: usize) -> Tensor {
        let c = windows.dim(2);
        let m = self.window;
        let [nh, nw, nd] = self.counts();
        let x = windows
            .reshape(&[batch, nh, nw, nd, m, m, m, c])
            .permute(&[0, 1, 4, 2, 5, 3, 6, 7])
            .reshape(&[batch, self.padded[0], self.padded[1], self.padded[2], c]);
        let shifts = [0, self.shift[0] as isize, self.shift[1] as isize, self.shift[2] as isize, 0];
        x.roll(&shifts).crop_to(&[batch, self.grid[0], self.grid[1], self.grid[2], c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_index_is_symmetric_about_centre() {
        let idx = relative_position_index(2);
        assert_eq!(idx.len(), 64);
        // Same token → centre of the 3³ table.
        assert!((0..8).all(|i| idx[i * 8 + i] == 13));
        assert_eq!(idx[7], 0); // token 0 vs token 7 = offset (-1,-1,-1)
        assert_eq!(idx[7 * 8], 26);
    }

    #[test]
    fn unshifted_exact_grid_needs_no_mask() {
        let l = WindowLayout::new([14, 14, 14], 7, false);
        assert!(l.mask.is_none());
        assert_eq!(l.num_windows(), 8);
        assert_eq!(WindowLayout::new([14, 14, 14], 7, true).shift, [3, 3, 3]);
        assert_eq!(WindowLayout::new([14, 14, 7], 7, true).shift, [3, 3, 0]);
    }
}
