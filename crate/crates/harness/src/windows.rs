//! Depth-wise sliding windows and overlap-averaged stitching.

use fuseg3d_core::{Modality, Volume3D};

use crate::error::{HarnessError, Result};

/// Start slices of windows of `depth` stepping by `stride`; the last window
/// is aligned to the end so every slice is covered. A volume shallower than
/// `depth` gets the single offset 0.
pub fn window_offsets(total: usize, depth: usize, stride: usize) -> Result<Vec<usize>> {
    if depth == 0 || stride == 0 {
        return Err(HarnessError::Config("window depth and stride must be >= 1".into()));
    }
    if total <= depth {
        return Ok(vec![0]);
    }
    let mut offsets: Vec<usize> = (0..).map(|i| i * stride).take_while(|o| o + depth < total).collect();
    offsets.push(total - depth);
    offsets.dedup();
    Ok(offsets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub offset: usize,
    pub volume: Volume3D,
}

/// Cuts `v` into depth windows; volumes shallower than `depth` are
/// zero-padded at the end.
pub fn sliding_windows(v: &Volume3D, depth: usize, stride: usize) -> Result<Vec<Window>> {
    let total = v.dims()[2];
    window_offsets(total, depth, stride)?
        .into_iter()
        .map(|offset| {
            let volume = if total < depth { pad_depth(v, depth)? } else { v.depth_range(offset, depth)? };
            Ok(Window { offset, volume })
        })
        .collect()
}

fn pad_depth(v: &Volume3D, depth: usize) -> Result<Volume3D> {
    let [h, w, d] = v.dims();
    let mut data = Vec::with_capacity(h * w * depth);
    for row in v.data().chunks(d) {
        data.extend_from_slice(row);
        data.resize(data.len() + depth - d, 0.0);
    }
    Ok(Volume3D::new(data, [h, w, depth], v.spacing_mm(), v.modality(), v.patient_id())?)
}

/// Averages window predictions back onto the grid of `like`. Windows are
/// accumulated in offset order, so the result does not depend on the order
/// they are passed in.
pub fn stitch(windows: &[Window], like: &Volume3D) -> Result<Volume3D> {
    let [h, w, d] = like.dims();
    let mut sorted: Vec<&Window> = windows.iter().collect();
    sorted.sort_by_key(|win| win.offset);
    let mut sum = vec![0.0; h * w * d];
    let mut count = vec![0u32; d];
    for win in sorted {
        let [wh, ww, wd] = win.volume.dims();
        if wh != h || ww != w {
            return Err(HarnessError::Data(format!("window grid {:?} does not match volume {:?}", win.volume.dims(), like.dims())));
        }
        let span = wd.min(d.saturating_sub(win.offset));
        for (row, src) in sum.chunks_mut(d).zip(win.volume.data().chunks(wd)) {
            for k in 0..span {
                row[win.offset + k] += src[k];
            }
        }
        for c in &mut count[win.offset..win.offset + span] {
            *c += 1;
        }
    }
    if let Some(k) = count.iter().position(|&c| c == 0) {
        return Err(HarnessError::Data(format!("slice {k} is not covered by any window")));
    }
    for row in sum.chunks_mut(d) {
        for (v, &c) in row.iter_mut().zip(&count) {
            *v /= c as f64;
        }
    }
    Ok(like.with_data(sum, Modality::Prob)?)
}
