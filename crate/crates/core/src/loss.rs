//! Photometric loss `(1 - lambda) L1 + lambda (1 - SSIM)`, its image
//! gradient, and PSNR.
//!
//! SSIM uses an 11-tap Gaussian window (sigma 1.5) applied separably with
//! half-sample reflection at the borders, `C1 = 0.01^2`, `C2 = 0.03^2`, and is
//! averaged over every pixel and channel.

use crate::error::{Error, Result};
use crate::scene::Image;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const TAPS: usize = 2 * RADIUS + 1;

fn window() -> [f64; TAPS] {
    let mut w = [0.0; TAPS];
    for (k, x) in w.iter_mut().enumerate() {
        let d = k as f64 - RADIUS as f64;
        *x = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable filter on a single-channel plane, or its adjoint.
fn blur(plane: &[f64], w: usize, h: usize, adjoint: bool) -> Vec<f64> {
    let win = window();
    // The adjoint runs the transposed passes in reverse order.
    if adjoint {
        blur_rows(&blur_cols(plane, w, h, &win, true), w, &win, true)
    } else {
        blur_cols(&blur_rows(plane, w, &win, false), w, h, &win, false)
    }
}

/// Horizontal pass, one line at a time through a reflected, padded buffer.
fn blur_rows(src: &[f64], w: usize, win: &[f64; TAPS], adjoint: bool) -> Vec<f64> {
    let index: Vec<usize> = (0..w + TAPS - 1).map(|k| reflect(k as isize - RADIUS as isize, w)).collect();
    let mut out = vec![0.0; src.len()];
    let mut buf = vec![0.0; w + TAPS - 1];
    for (line, dst) in src.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
        if adjoint {
            buf.fill(0.0);
            for (i, &g) in line.iter().enumerate() {
                let b: &mut [f64; TAPS] = (&mut buf[i..i + TAPS]).try_into().expect("window fits the padded line");
                for k in 0..TAPS {
                    b[k] += win[k] * g;
                }
            }
            for (&b, &j) in buf.iter().zip(&index) {
                dst[j] += b;
            }
        } else {
            for (b, &j) in buf.iter_mut().zip(&index) {
                *b = line[j];
            }
            for (i, o) in dst.iter_mut().enumerate() {
                let b: &[f64; TAPS] = buf[i..i + TAPS].try_into().expect("window fits the padded line");
                let mut acc = 0.0;
                for k in 0..TAPS {
                    acc += win[k] * b[k];
                }
                *o = acc;
            }
        }
    }
    out
}

/// Vertical pass, accumulating whole rows.
fn blur_cols(src: &[f64], w: usize, h: usize, win: &[f64; TAPS], adjoint: bool) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (k, &wk) in win.iter().enumerate() {
            let j = reflect(y as isize + k as isize - RADIUS as isize, h);
            let (from, to) = if adjoint { (y, j) } else { (j, y) };
            let row = &src[from * w..(from + 1) * w];
            for (o, &v) in out[to * w..(to + 1) * w].iter_mut().zip(row) {
                *o += wk * v;
            }
        }
    }
    out
}

fn planes(img: &Image) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| img.data.iter().skip(c).step_by(3).copied().collect())
}

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height)))
    }
}

/// Mean SSIM and, when requested, its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_shape(x, y)?;
    let (w, h) = (x.width, x.height);
    let n = (w * h * 3) as f64;
    let (xs, ys) = (planes(x), planes(y));
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));
    for c in 0..3 {
        let (xp, yp) = (&xs[c], &ys[c]);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = blur(xp, w, h, false);
        let my = blur(yp, w, h, false);
        let exx = blur(&sq(xp, xp), w, h, false);
        let eyy = blur(&sq(yp, yp), w, h, false);
        let exy = blur(&sq(xp, yp), w, h, false);
        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let (ux, uy) = (mx[p], my[p]);
            let vx = exx[p] - ux * ux;
            let vy = eyy[p] - uy * uy;
            let cxy = exy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mx[p] = 2.0 * uy * (a2 - a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_exx[p] = -s / b2;
                d_exy[p] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = blur(&d_mx, w, h, true);
            let gxx = blur(&d_exx, w, h, true);
            let gxy = blur(&d_exy, w, h, true);
            for p in 0..w * h {
                g.data[p * 3 + c] = (gm[p] + 2.0 * xp[p] * gxx[p] + yp[p] * gxy[p]) / n;
            }
        }
    }
    Ok((total / n, grad))
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    Ok(ssim_with_grad(x, y, false)?.0)
}

/// Loss and `dL/d rendered`.
pub fn photometric_loss(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Image)> {
    check_shape(rendered, target)?;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = (1.0 - lambda_ssim) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n;
    }
    let mut loss = (1.0 - lambda_ssim) * l1 / n;
    if lambda_ssim > 0.0 {
        let (s, sg) = ssim_with_grad(rendered, target, true)?;
        loss += lambda_ssim * (1.0 - s);
        for (g, d) in grad.data.iter_mut().zip(&sg.expect("requested").data) {
            *g -= lambda_ssim * d;
        }
    }
    Ok((loss, grad))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn psnr(rendered: &Image, target: &Image) -> Result<f64> {
    let e = mse(rendered, target)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}
