//! Pixel-grid primitives shared by loading and augmentation.
//!
//! Images are `H×W×3` arrays with values in `[0, 1]`; batches are `N×H×W×3`.

use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::Scalar;

pub type Image<T> = Array3<T>;

/// How sample coordinates outside the image are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Clamp to the closest edge pixel.
    #[default]
    Nearest,
    /// Taps outside the image read this constant.
    Constant(f64),
}

/// Bilinearly samples all channels at column `x`, row `y` (pixel-center coordinates).
pub fn sample_bilinear<T: Scalar>(img: &ArrayView3<'_, T>, x: f64, y: f64, fill: FillPolicy, out: &mut [T]) {
    let (h, w, c) = img.dim();
    let (x, y) = match fill {
        FillPolicy::Nearest => (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64)),
        FillPolicy::Constant(_) => (x, y),
    };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);

    let tap = |yy: isize, xx: isize, ch: usize| -> T {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            img[[yy as usize, xx as usize, ch]]
        } else {
            match fill {
                FillPolicy::Constant(v) => T::of(v),
                // unreachable after clamping, except for the zero-weight neighbour
                FillPolicy::Nearest => img[[(yy.max(0) as usize).min(h - 1), (xx.max(0) as usize).min(w - 1), ch]],
            }
        }
    };

    if fx == 0.0 && fy == 0.0 {
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            *o = tap(y0, x0, ch);
        }
        return;
    }

    let tx = T::of(fx);
    let ty = T::of(fy);
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let top = lerp(tap(y0, x0, ch), tap(y0, x0 + 1, ch), tx);
        let bottom = lerp(tap(y0 + 1, x0, ch), tap(y0 + 1, x0 + 1, ch), tx);
        *o = lerp(top, bottom, ty);
    }
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    if t == T::zero() {
        a
    } else {
        a + (b - a) * t
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &ArrayView3<'_, T>, out_h: usize, out_w: usize) -> Image<T> {
    let (h, w, c) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.to_owned();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Array3::zeros((out_h, out_w, c));
    let mut px = vec![T::zero(); c];
    for oy in 0..out_h {
        let y = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let x = (ox as f64 + 0.5) * sx - 0.5;
            sample_bilinear(img, x, y, FillPolicy::Nearest, &mut px);
            for (ch, v) in px.iter().enumerate() {
                out[[oy, ox, ch]] = *v;
            }
        }
    }
    out
}

/// Mirrors the columns of an image.
pub fn flip_horizontal<T: Scalar>(img: &ArrayView3<'_, T>) -> Image<T> {
    let mut out = img.to_owned();
    out.invert_axis(Axis(1));
    out.as_standard_layout().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            (y * w + x) as f64 / (h * w) as f64 + c as f64 * 0.01
        })
    }

    #[test]
    fn integer_coordinates_read_exact_pixels() {
        let img = ramp(3, 4);
        let mut px = [0.0; 3];
        for y in 0..3 {
            for x in 0..4 {
                sample_bilinear(&img.view(), x as f64, y as f64, FillPolicy::Constant(0.5), &mut px);
                assert_eq!(px[1], img[[y, x, 1]]);
            }
        }
    }

    #[test]
    fn constant_fill_outside() {
        let img = ramp(2, 2);
        let mut px = [0.0; 3];
        sample_bilinear(&img.view(), -5.0, 0.0, FillPolicy::Constant(0.25), &mut px);
        assert_eq!(px, [0.25; 3]);
        sample_bilinear(&img.view(), -5.0, 0.0, FillPolicy::Nearest, &mut px);
        assert_eq!(px[0], img[[0, 0, 0]]);
    }

    #[test]
    fn same_size_resize_is_a_copy() {
        let img = ramp(5, 7);
        assert_eq!(resize_bilinear(&img.view(), 5, 7), img);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = ramp(2, 3);
        let f = flip_horizontal(&img.view());
        assert_eq!(f[[1, 0, 2]], img[[1, 2, 2]]);
        assert_eq!(flip_horizontal(&f.view()), img);
    }
}
