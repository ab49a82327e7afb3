//! 1-D convolutions over `(channels, width)` arrays.
//!
//! `Conv1d` pads on the right with zeros so that the output width is
//! `ceil(width / stride)` regardless of kernel size. `ConvTranspose1d` is its
//! exact adjoint (same flat weight layout, roles of the channel axes swapped),
//! scattering each input position into a stride-spaced window and cropping the
//! tail to a requested width — so an encoder/decoder pair built from the two
//! mirrors shapes: `W → ceil(W/s) → W`.

use crate::rng::SeedRng;

use super::Param;

/// `ceil(w / stride)`.
pub fn conv_out_width(w: usize, stride: usize) -> usize {
    (w + stride - 1) / stride
}

/// Strided 1-D convolution, weight `(c_out, c_in, k)` flat row-major.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param,
    pub b: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut SeedRng) -> Self {
        assert!(k >= 1 && stride >= 1);
        let std = (2.0 / (c_in * k) as f64).sqrt();
        Self {
            w: Param::gaussian(c_out * c_in * k, std, true, rng),
            b: Param::zeros(c_out, false),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    fn wi(&self, o: usize, ci: usize, kk: usize) -> usize {
        (o * self.c_in + ci) * self.k + kk
    }

    /// `x` is `(c_in, w)`; returns `(c_out, ceil(w/stride))`.
    pub fn forward(&self, x: &[f64], w: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.c_in * w);
        let t_out = conv_out_width(w, self.stride);
        let mut y = vec![0.0; self.c_out * t_out];
        for o in 0..self.c_out {
            for t in 0..t_out {
                let mut acc = self.b.w[o];
                let start = t * self.stride;
                for ci in 0..self.c_in {
                    for kk in 0..self.k {
                        let pos = start + kk;
                        if pos < w {
                            acc += self.w.w[self.wi(o, ci, kk)] * x[ci * w + pos];
                        }
                    }
                }
                y[o * t_out + t] = acc;
            }
        }
        y
    }

    /// Accumulates weight/bias grads; returns `dx` of shape `(c_in, w)`.
    pub fn backward(&mut self, x: &[f64], w: usize, dy: &[f64]) -> Vec<f64> {
        let t_out = conv_out_width(w, self.stride);
        debug_assert_eq!(dy.len(), self.c_out * t_out);
        let mut dx = vec![0.0; self.c_in * w];
        for o in 0..self.c_out {
            for t in 0..t_out {
                let g = dy[o * t_out + t];
                if g == 0.0 {
                    continue;
                }
                self.b.g[o] += g;
                let start = t * self.stride;
                for ci in 0..self.c_in {
                    for kk in 0..self.k {
                        let pos = start + kk;
                        if pos < w {
                            let idx = self.wi(o, ci, kk);
                            self.w.g[idx] += g * x[ci * w + pos];
                            dx[ci * w + pos] += g * self.w.w[idx];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Transposed counterpart of [`Conv1d`]: weight `(c_in, c_out, k)` flat, which
/// is byte-compatible with a `Conv1d` weight whose output channels equal this
/// layer's input channels. Output is cropped on the right to the requested
/// width.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: Param,
    pub b: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut SeedRng) -> Self {
        assert!(k >= 1 && stride >= 1);
        let std = (2.0 / (c_in * k) as f64).sqrt();
        Self {
            w: Param::gaussian(c_in * c_out * k, std, true, rng),
            b: Param::zeros(c_out, false),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    fn wi(&self, ci: usize, o: usize, kk: usize) -> usize {
        (ci * self.c_out + o) * self.k + kk
    }

    /// `x` is `(c_in, t_in)`; returns `(c_out, w_out)`. `w_out` must be the
    /// width whose strided convolution yields `t_in` positions.
    pub fn forward(&self, x: &[f64], t_in: usize, w_out: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.c_in * t_in);
        assert_eq!(
            conv_out_width(w_out, self.stride),
            t_in,
            "target width {w_out} does not map back to {t_in} positions at stride {}",
            self.stride
        );
        let mut y = vec![0.0; self.c_out * w_out];
        for o in 0..self.c_out {
            for tau in 0..w_out {
                y[o * w_out + tau] = self.b.w[o];
            }
        }
        for ci in 0..self.c_in {
            for t in 0..t_in {
                let xv = x[ci * t_in + t];
                if xv == 0.0 {
                    continue;
                }
                let start = t * self.stride;
                for o in 0..self.c_out {
                    for kk in 0..self.k {
                        let tau = start + kk;
                        if tau < w_out {
                            y[o * w_out + tau] += self.w.w[self.wi(ci, o, kk)] * xv;
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &[f64], t_in: usize, w_out: usize, dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.c_out * w_out);
        for o in 0..self.c_out {
            for tau in 0..w_out {
                self.b.g[o] += dy[o * w_out + tau];
            }
        }
        let mut dx = vec![0.0; self.c_in * t_in];
        for ci in 0..self.c_in {
            for t in 0..t_in {
                let start = t * self.stride;
                let mut acc = 0.0;
                for o in 0..self.c_out {
                    for kk in 0..self.k {
                        let tau = start + kk;
                        if tau < w_out {
                            let g = dy[o * w_out + tau];
                            let idx = self.wi(ci, o, kk);
                            acc += g * self.w.w[idx];
                            self.w.g[idx] += g * x[ci * t_in + t];
                        }
                    }
                }
                dx[ci * t_in + t] += acc;
            }
        }
        dx
    }

    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;

    use rand::Rng;

    use super::*;
    use crate::nn::fd;
    use crate::rng::rng_from_seed;

    #[test]
    fn conv_hand_example_with_right_padding() {
        let mut rng = rng_from_seed(0);
        let mut conv = Conv1d::new(1, 1, 2, 1, &mut rng);
        conv.w.w = vec![1.0, 2.0];
        conv.b.w = vec![0.5];
        // Window at t=2 reads x[2] and the zero pad.
        let y = conv.forward(&[1.0, 2.0, 3.0], 3);
        assert_eq!(y, vec![5.5, 8.5, 3.5]);
    }

    #[test]
    fn strided_conv_width_is_ceil() {
        let mut rng = rng_from_seed(1);
        let conv = Conv1d::new(1, 1, 3, 2, &mut rng);
        assert_eq!(conv.forward(&vec![1.0; 5], 5).len(), 3);
        assert_eq!(conv.forward(&vec![1.0; 4], 4).len(), 2);
        assert_eq!(conv.forward(&vec![1.0; 1], 1).len(), 1);
        assert_eq!(conv_out_width(8, 4), 2);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(2);
        let conv = Conv1d::new(2, 3, 3, 2, &mut rng);
        let w = 5;
        let x: Vec<f64> = (0..2 * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t_out = conv_out_width(w, 2);
        let c: Vec<f64> = (0..3 * t_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = RefCell::new(conv);
        let loss = |m: &Conv1d, xs: &[f64]| -> f64 {
            m.forward(xs, w).iter().zip(&c).map(|(y, ci)| y * ci).sum()
        };
        let dx = model.borrow_mut().backward(&x, w, &c);
        let analytic = fd::snapshot_grads(&model, Conv1d::collect_params);
        fd::check_param_grads(
            &model,
            Conv1d::collect_params,
            |m| loss(m, &x),
            &analytic,
            1e-6,
            1e-7,
        );
        let mut x_var = x.clone();
        fd::check_input_grad(&mut x_var, |xs| loss(&model.borrow(), xs), &dx, 1e-6, 1e-7);
    }

    #[test]
    fn transpose_hand_example_mirrors_stride() {
        let mut rng = rng_from_seed(3);
        let mut up = ConvTranspose1d::new(1, 1, 2, 2, &mut rng);
        up.w.w = vec![3.0, 4.0];
        up.b.w = vec![0.25];
        // Two positions scatter into widths [0,1] and [2,3].
        let y = up.forward(&[1.0, 10.0], 2, 4);
        assert_eq!(y, vec![3.25, 4.25, 30.25, 40.25]);
        // Crop: width 3 keeps ceil(3/2) = 2 source positions.
        let y = up.forward(&[1.0, 10.0], 2, 3);
        assert_eq!(y, vec![3.25, 4.25, 30.25]);
    }

    #[test]
    fn transpose_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(4);
        let up = ConvTranspose1d::new(3, 2, 3, 2, &mut rng);
        let t_in = 3;
        let w_out = 5; // ceil(5/2) = 3
        let x: Vec<f64> = (0..3 * t_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..2 * w_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = RefCell::new(up);
        let loss = |m: &ConvTranspose1d, xs: &[f64]| -> f64 {
            m.forward(xs, t_in, w_out)
                .iter()
                .zip(&c)
                .map(|(y, ci)| y * ci)
                .sum()
        };
        let dx = model.borrow_mut().backward(&x, t_in, w_out, &c);
        let analytic = fd::snapshot_grads(&model, ConvTranspose1d::collect_params);
        fd::check_param_grads(
            &model,
            ConvTranspose1d::collect_params,
            |m| loss(m, &x),
            &analytic,
            1e-6,
            1e-7,
        );
        let mut x_var = x.clone();
        fd::check_input_grad(
            &mut x_var,
            |xs| loss(&model.borrow(), xs),
            &dx,
            1e-6,
            1e-7,
        );
    }

    #[test]
    fn transpose_with_shared_weights_is_the_exact_adjoint() {
        // ⟨Conv(x), u⟩ = ⟨x, ConvT(u)⟩ when the flat weight buffers are equal
        // and biases are zero.
        let mut rng = rng_from_seed(5);
        for &(c_in, c_out, k, stride, w) in
            &[(1usize, 1usize, 2usize, 1usize, 4usize), (2, 3, 3, 2, 7), (3, 2, 4, 4, 9)]
        {
            let conv = Conv1d::new(c_in, c_out, k, stride, &mut rng);
            let mut up = ConvTranspose1d::new(c_out, c_in, k, stride, &mut rng);
            up.w.w.copy_from_slice(&conv.w.w);
            up.b.w.iter_mut().for_each(|b| *b = 0.0);
            let t_out = conv_out_width(w, stride);
            let x: Vec<f64> = (0..c_in * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..c_out * t_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cx = {
                let mut c0 = conv.clone();
                c0.b.w.iter_mut().for_each(|b| *b = 0.0);
                c0.forward(&x, w)
            };
            let ctu = up.forward(&u, t_out, w);
            let lhs: f64 = cx.iter().zip(&u).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&ctu).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-12,
                "adjoint identity broke for ({c_in},{c_out},{k},{stride},{w}): {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn zero_weights_yield_pure_bias_output() {
        let mut rng = rng_from_seed(6);
        let mut up = ConvTranspose1d::new(2, 3, 2, 2, &mut rng);
        up.w.w.iter_mut().for_each(|w| *w = 0.0);
        up.b.w = vec![1.0, 2.0, 3.0];
        let y = up.forward(&[0.5, -0.5], 1, 2);
        assert_eq!(y, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    #[should_panic(expected = "does not map back")]
    fn transpose_rejects_inconsistent_target_width() {
        let mut rng = rng_from_seed(7);
        let up = ConvTranspose1d::new(1, 1, 2, 2, &mut rng);
        up.forward(&[1.0, 2.0], 2, 8); // ceil(8/2)=4 ≠ 2
    }
}
