//! Gather index maps. Each map lists, for every output element in row-major
//! order, the flat input index it reads. Rearrangements (permutes, shuffles,
//! shifts, padding, crops, nearest upsampling) are all expressed this way so
//! a single gather/scatter-add pair covers their forward and backward passes.

use crate::error::{Result, TensorError};
use crate::kernels::dft::{fftshift_source, ifftshift_source};
use crate::tensor::{numel, strides};

pub struct IndexMap {
    pub shape: Vec<usize>,
    pub src: Vec<usize>,
}

fn dims4(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            shape: shape.to_vec(),
        }),
    }
}

/// Map for a tensor whose last two axes are rearranged by `f(y, x) -> (sy, sx)`.
fn spatial_map(
    shape: &[usize],
    oh: usize,
    ow: usize,
    f: impl Fn(usize, usize) -> (usize, usize),
) -> IndexMap {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let outer = numel(&shape[..r - 2]);
    let mut src = Vec::with_capacity(outer * oh * ow);
    let table: Vec<usize> = (0..oh)
        .flat_map(|y| (0..ow).map(move |x| (y, x)))
        .map(|(y, x)| {
            let (sy, sx) = f(y, x);
            sy * w + sx
        })
        .collect();
    for o in 0..outer {
        src.extend(table.iter().map(|&t| o * h * w + t));
    }
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    IndexMap {
        shape: out_shape,
        src,
    }
}

fn need_rank2(shape: &[usize], op: &'static str) -> Result<()> {
    if shape.len() < 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

pub fn permute(shape: &[usize], perm: &[usize]) -> Result<IndexMap> {
    let r = shape.len();
    let mut seen = vec![false; r];
    if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::Invalid {
            op: "permute",
            msg: format!("{perm:?} is not a permutation of rank {r}"),
        });
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n = numel(shape);
    let mut src = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    for _ in 0..n {
        src.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
        for ax in (0..r).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(IndexMap {
        shape: out_shape,
        src,
    })
}

/// `[B, C·r², H, W] → [B, C, r·H, r·W]`, channel `c·r² + i·r + j` landing at
/// sub-pixel `(i, j)`.
pub fn pixel_shuffle(shape: &[usize], r: usize) -> Result<IndexMap> {
    let [b, c, h, w] = dims4(shape, "pixel_shuffle")?;
    if r == 0 || c % (r * r) != 0 {
        return Err(TensorError::Dimension {
            op: "pixel_shuffle",
            dim: "channels",
            expected: format!("a multiple of r²={}", r * r),
            got: c,
        });
    }
    let co = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut src = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ci in 0..co {
            for y in 0..oh {
                for x in 0..ow {
                    let ch = ci * r * r + (y % r) * r + (x % r);
                    src.push(((bi * c + ch) * h + y / r) * w + x / r);
                }
            }
        }
    }
    Ok(IndexMap {
        shape: vec![b, co, oh, ow],
        src,
    })
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(shape: &[usize], r: usize) -> Result<IndexMap> {
    let [b, c, h, w] = dims4(shape, "pixel_unshuffle")?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(TensorError::Dimension {
            op: "pixel_unshuffle",
            dim: if r != 0 && h % r != 0 { "height" } else { "width" },
            expected: format!("a multiple of r={r}"),
            got: if r != 0 && h % r != 0 { h } else { w },
        });
    }
    let (oh, ow) = (h / r, w / r);
    let co = c * r * r;
    let mut src = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ch in 0..co {
            let (ci, i, j) = (ch / (r * r), (ch % (r * r)) / r, ch % r);
            for y in 0..oh {
                for x in 0..ow {
                    src.push(((bi * c + ci) * h + y * r + i) * w + x * r + j);
                }
            }
        }
    }
    Ok(IndexMap {
        shape: vec![b, co, oh, ow],
        src,
    })
}

pub fn fftshift(shape: &[usize]) -> Result<IndexMap> {
    need_rank2(shape, "fftshift")?;
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    Ok(spatial_map(shape, h, w, |y, x| (fftshift_source(y, h), fftshift_source(x, w))))
}

pub fn ifftshift(shape: &[usize]) -> Result<IndexMap> {
    need_rank2(shape, "ifftshift")?;
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    Ok(spatial_map(shape, h, w, |y, x| (ifftshift_source(y, h), ifftshift_source(x, w))))
}

/// Mirror index without edge repeat, folded repeatedly so any pad is valid.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflective padding of the last two axes: `[top, bottom, left, right]`.
/// Pads larger than the extent keep reflecting back and forth.
pub fn reflect_pad(shape: &[usize], pads: [usize; 4]) -> Result<IndexMap> {
    need_rank2(shape, "reflect_pad")?;
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let [t, bo, l, ri] = pads;
    if h == 0 || w == 0 {
        return Err(TensorError::Invalid {
            op: "reflect_pad",
            msg: format!("cannot pad an empty {h}x{w} plane"),
        });
    }
    Ok(spatial_map(shape, h + t + bo, w + l + ri, |y, x| {
        (reflect(y as isize - t as isize, h), reflect(x as isize - l as isize, w))
    }))
}

/// Window `[y0, y0+h) × [x0, x0+w)` of the last two axes.
pub fn crop(shape: &[usize], y0: usize, x0: usize, h: usize, w: usize) -> Result<IndexMap> {
    need_rank2(shape, "crop")?;
    let r = shape.len();
    if y0 + h > shape[r - 2] || x0 + w > shape[r - 1] {
        return Err(TensorError::Invalid {
            op: "crop",
            msg: format!("window {h}x{w}+{y0}+{x0} exceeds {:?}", &shape[r - 2..]),
        });
    }
    Ok(spatial_map(shape, h, w, |y, x| (y0 + y, x0 + x)))
}

/// Nearest-neighbour upsampling of the last two axes by integer `f`.
pub fn upsample_nearest(shape: &[usize], f: usize) -> Result<IndexMap> {
    need_rank2(shape, "upsample_nearest")?;
    let r = shape.len();
    Ok(spatial_map(shape, shape[r - 2] * f, shape[r - 1] * f, |y, x| (y / f, x / f)))
}

/// Elements `start..start+len` along `axis`.
pub fn narrow(shape: &[usize], axis: usize, start: usize, len: usize) -> Result<IndexMap> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            op: "narrow",
            axis,
            rank: shape.len(),
        });
    }
    if start + len > shape[axis] {
        return Err(TensorError::Invalid {
            op: "narrow",
            msg: format!("range {start}..{} exceeds extent {}", start + len, shape[axis]),
        });
    }
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    let mut src = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * shape[axis] * inner + start * inner;
        src.extend(base..base + len * inner);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Ok(IndexMap {
        shape: out_shape,
        src,
    })
}

/// Reverses the last axis (`horizontal`) or the second-to-last.
pub fn flip(shape: &[usize], horizontal: bool) -> Result<IndexMap> {
    need_rank2(shape, "flip")?;
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    Ok(spatial_map(shape, h, w, |y, x| {
        if horizontal {
            (y, w - 1 - x)
        } else {
            (h - 1 - y, x)
        }
    }))
}
