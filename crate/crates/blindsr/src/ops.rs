//! Linear operators of the degradation pipeline: "same"-size convolution,
//! integer decimation, their exact adjoints, and bicubic upsampling.
//!
//! Adjoints are implemented as the literal scatter transpose of the forward
//! gather, so `<A x, u> = <x, A' u>` holds to machine precision for both
//! boundary modes. Kernels that carry per-component 1-D profiles (anything
//! built from bandwidths) convolve separably; explicit grids convolve
//! directly. Forward and adjoint dispatch on the same condition, so the pair
//! always matches.

use crate::error::{Error, Result};
use crate::kernel::MixtureKernel;
use crate::tensor::{BoundaryMode, ImageTensor};

/// Source index table for one axis: entry `i * p + t` is the (wrapped or
/// clamped) source position read by output `i` at kernel tap `t`.
fn axis_indices(n: usize, p: usize, boundary: BoundaryMode) -> Vec<usize> {
    let c = (p as isize - 1) / 2;
    let mut tab = Vec::with_capacity(n * p);
    for i in 0..n as isize {
        for t in 0..p as isize {
            let src = i - (t - c);
            let src = match boundary {
                BoundaryMode::Circular => src.rem_euclid(n as isize),
                BoundaryMode::Replicate => src.clamp(0, n as isize - 1),
            };
            tab.push(src as usize);
        }
    }
    tab
}

fn check_conv_shapes(x: &ImageTensor, k: &MixtureKernel, boundary: BoundaryMode) -> Result<()> {
    if boundary == BoundaryMode::Replicate && (k.support() > x.height() || k.support() > x.width())
    {
        return Err(Error::Dimension(format!(
            "kernel support {} exceeds image {}x{} under replicate boundary",
            k.support(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// "Same"-size 2-D convolution of each channel with `k` (true convolution:
/// the kernel is flipped relative to correlation).
pub fn conv2d(x: &ImageTensor, k: &MixtureKernel, boundary: BoundaryMode) -> Result<ImageTensor> {
    check_conv_shapes(x, k, boundary)?;
    let p = k.support();
    let (ch, h, w) = x.shape();
    let row_tab = axis_indices(h, p, boundary);
    let col_tab = axis_indices(w, p, boundary);
    let mut out = ImageTensor::zeros(ch, h, w);

    if let Some((profiles, scale)) = k.separable_profiles() {
        let mut tmp = vec![0.0; h * w];
        let mut acc = vec![0.0; h * w];
        for c in 0..ch {
            let plane = x.plane(c);
            acc.iter_mut().for_each(|v| *v = 0.0);
            for prof in profiles {
                // horizontal pass: gather along width
                for i in 0..h {
                    for j in 0..w {
                        let mut s = 0.0;
                        for (t, pw) in prof.iter().enumerate() {
                            s += pw * plane[i * w + col_tab[j * p + t]];
                        }
                        tmp[i * w + j] = s;
                    }
                }
                // vertical pass: gather along height
                for i in 0..h {
                    for j in 0..w {
                        let mut s = 0.0;
                        for (t, pw) in prof.iter().enumerate() {
                            s += pw * tmp[row_tab[i * p + t] * w + j];
                        }
                        acc[i * w + j] += s;
                    }
                }
            }
            let out_plane = out.plane_mut(c);
            for (o, a) in out_plane.iter_mut().zip(&acc) {
                *o = scale * a;
            }
        }
        return Ok(out);
    }

    let grid = k.grid();
    for c in 0..ch {
        let plane = x.plane(c);
        let out_plane = out.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for u in 0..p {
                    let row = row_tab[i * p + u] * w;
                    let krow = u * p;
                    for v in 0..p {
                        s += grid[krow + v] * plane[row + col_tab[j * p + v]];
                    }
                }
                out_plane[i * w + j] = s;
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`conv2d`] with the same kernel and boundary: the scatter
/// transpose of the forward gather (equivalently, correlation with `k`).
pub fn conv2d_adjoint(
    u: &ImageTensor,
    k: &MixtureKernel,
    boundary: BoundaryMode,
) -> Result<ImageTensor> {
    check_conv_shapes(u, k, boundary)?;
    let p = k.support();
    let (ch, h, w) = u.shape();
    let row_tab = axis_indices(h, p, boundary);
    let col_tab = axis_indices(w, p, boundary);
    let mut out = ImageTensor::zeros(ch, h, w);

    if let Some((profiles, scale)) = k.separable_profiles() {
        let mut tmp = vec![0.0; h * w];
        let mut acc = vec![0.0; h * w];
        for c in 0..ch {
            let plane = u.plane(c);
            acc.iter_mut().for_each(|v| *v = 0.0);
            for prof in profiles {
                // transpose of the vertical pass: scatter along height
                tmp.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let g = plane[i * w + j];
                        for (t, pw) in prof.iter().enumerate() {
                            tmp[row_tab[i * p + t] * w + j] += pw * g;
                        }
                    }
                }
                // transpose of the horizontal pass: scatter along width
                for i in 0..h {
                    for j in 0..w {
                        let g = tmp[i * w + j];
                        for (t, pw) in prof.iter().enumerate() {
                            acc[i * w + col_tab[j * p + t]] += pw * g;
                        }
                    }
                }
            }
            let out_plane = out.plane_mut(c);
            for (o, a) in out_plane.iter_mut().zip(&acc) {
                *o = scale * a;
            }
        }
        return Ok(out);
    }

    let grid = k.grid();
    for c in 0..ch {
        let plane = u.plane(c);
        let out_plane = out.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                let g = plane[i * w + j];
                for a in 0..p {
                    let row = row_tab[i * p + a] * w;
                    let krow = a * p;
                    for b in 0..p {
                        out_plane[row + col_tab[j * p + b]] += grid[krow + b] * g;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_scale(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::Domain("scale factor must be >= 1".into()));
    }
    Ok(())
}

/// Top-left-phase s-fold decimation: `out[i,j] = z[s*i, s*j]`.
pub fn downsample(z: &ImageTensor, s: usize) -> Result<ImageTensor> {
    check_scale(s)?;
    let (ch, h, w) = z.shape();
    if h % s != 0 || w % s != 0 {
        return Err(Error::Dimension(format!(
            "image {h}x{w} not divisible by scale {s}"
        )));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = ImageTensor::zeros(ch, oh, ow);
    for c in 0..ch {
        let plane = z.plane(c);
        let out_plane = out.plane_mut(c);
        for i in 0..oh {
            for j in 0..ow {
                out_plane[i * ow + j] = plane[(s * i) * w + s * j];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`downsample`]: places `u[i,j]` at `(s*i, s*j)` and zero-fills
/// every off-grid position.
pub fn downsample_adjoint(u: &ImageTensor, s: usize) -> Result<ImageTensor> {
    check_scale(s)?;
    let (ch, h, w) = u.shape();
    let (oh, ow) = (h * s, w * s);
    let mut out = ImageTensor::zeros(ch, oh, ow);
    for c in 0..ch {
        let plane = u.plane(c);
        let out_plane = out.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                out_plane[(s * i) * ow + s * j] = plane[i * w + j];
            }
        }
    }
    Ok(out)
}

/// One axis of bicubic interpolation: four clamped source indices and their
/// normalized weights per output position.
struct BicubicTap {
    idx: [usize; 4],
    w: [f64; 4],
}

/// Catmull-Rom cubic (a = -0.5) evaluated at |t|.
fn catmull_rom(t: f64) -> f64 {
    let x = t.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * (((x - 5.0) * x + 8.0) * x - 4.0)
    } else {
        0.0
    }
}

fn bicubic_axis_taps(n_src: usize, s: usize) -> Vec<BicubicTap> {
    let n_dst = n_src * s;
    let mut taps = Vec::with_capacity(n_dst);
    for d in 0..n_dst {
        // center-aligned source coordinate of output sample d
        let src = (d as f64 + 0.5) / s as f64 - 0.5;
        let i0 = src.floor();
        let t = src - i0;
        let i0 = i0 as isize;
        let mut idx = [0usize; 4];
        let mut w = [0.0f64; 4];
        for m in 0..4 {
            idx[m] = (i0 - 1 + m as isize).clamp(0, n_src as isize - 1) as usize;
            w[m] = catmull_rom(t - (m as f64 - 1.0));
        }
        let sum: f64 = w.iter().sum();
        for wm in &mut w {
            *wm /= sum;
        }
        taps.push(BicubicTap { idx, w });
    }
    taps
}

/// Bicubic (Catmull-Rom, a = -0.5) upsampling by an integer factor, edges
/// replicated, output clamped to [0,1].
pub fn upsample_bicubic(y: &ImageTensor, s: usize) -> Result<ImageTensor> {
    check_scale(s)?;
    let (ch, h, w) = y.shape();
    let (oh, ow) = (h * s, w * s);
    let col_taps = bicubic_axis_taps(w, s);
    let row_taps = bicubic_axis_taps(h, s);
    let mut wide = vec![0.0; h * ow];
    let mut out = ImageTensor::zeros(ch, oh, ow);
    for c in 0..ch {
        let plane = y.plane(c);
        for i in 0..h {
            for (dj, tap) in col_taps.iter().enumerate() {
                let mut acc = 0.0;
                for m in 0..4 {
                    acc += tap.w[m] * plane[i * w + tap.idx[m]];
                }
                wide[i * ow + dj] = acc;
            }
        }
        let out_plane = out.plane_mut(c);
        for (di, tap) in row_taps.iter().enumerate() {
            for dj in 0..ow {
                let mut acc = 0.0;
                for m in 0..4 {
                    acc += tap.w[m] * wide[tap.idx[m] * ow + dj];
                }
                out_plane[di * ow + dj] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
