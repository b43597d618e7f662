//! Reference implementations written straight from the index definitions.
//! They use `i64`/`f64` and share nothing with the library kernels.
#![allow(dead_code)]

use l3unet::{Data, Kernel4D, Shape, Tensor};
use rand::Rng;

/// Dense CHW array of `i64` used by the oracles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arr {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<i64>,
}

impl Arr {
    pub fn at(&self, c: usize, y: usize, x: usize) -> i64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn from_tensor(t: &Tensor) -> Arr {
        let s = t.shape();
        Arr { c: s.channels, h: s.height, w: s.width, v: t.data().to_f64().iter().map(|&e| e as i64).collect() }
    }

    pub fn to_i32_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(self.c, self.h, self.w), self.v.iter().map(|&e| e as i32).collect::<Vec<_>>()).unwrap()
    }
}

/// `(O, C, kh, kw)` weights plus bias as `i64`.
#[derive(Debug, Clone)]
pub struct Filt {
    pub o: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub w: Vec<i64>,
    pub b: Vec<i64>,
}

impl Filt {
    pub fn at(&self, o: usize, c: usize, r: usize, t: usize) -> i64 {
        self.w[((o * self.c + c) * self.kh + r) * self.kw + t]
    }

    pub fn from_kernel(k: &Kernel4D) -> Filt {
        let ints = |d: &Data| d.to_f64().iter().map(|&e| e as i64).collect();
        Filt { o: k.out_channels, c: k.in_channels, kh: k.kh, kw: k.kw, w: ints(k.weights()), b: ints(k.bias()) }
    }
}

/// `y[(dh*a + dw)*C + c][i][j] = x[c][i*a + dh][j*a + dw]`.
pub fn fold_oracle(x: &Arr, a: usize) -> Arr {
    let (h, w) = (x.h / a, x.w / a);
    let mut v = vec![0; x.v.len()];
    for dh in 0..a {
        for dw in 0..a {
            for c in 0..x.c {
                let f = (dh * a + dw) * x.c + c;
                for i in 0..h {
                    for j in 0..w {
                        v[(f * h + i) * w + j] = x.at(c, i * a + dh, j * a + dw);
                    }
                }
            }
        }
    }
    Arr { c: x.c * a * a, h, w, v }
}

/// Cross-correlation with zero padding.
pub fn conv_oracle(x: &Arr, k: &Filt, stride: usize, pad: usize) -> Arr {
    let oh = (x.h + 2 * pad - k.kh) / stride + 1;
    let ow = (x.w + 2 * pad - k.kw) / stride + 1;
    let get = |c: usize, y: isize, xx: isize| -> i64 {
        if y < 0 || xx < 0 || y >= x.h as isize || xx >= x.w as isize {
            0
        } else {
            x.at(c, y as usize, xx as usize)
        }
    };
    let mut v = Vec::with_capacity(k.o * oh * ow);
    for o in 0..k.o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = k.b[o];
                for c in 0..k.c {
                    for r in 0..k.kh {
                        for t in 0..k.kw {
                            let y = (i * stride + r) as isize - pad as isize;
                            let xx = (j * stride + t) as isize - pad as isize;
                            acc += k.at(o, c, r, t) * get(c, y, xx);
                        }
                    }
                }
                v.push(acc);
            }
        }
    }
    Arr { c: k.o, h: oh, w: ow, v }
}

/// Transposed convolution as a gather: output `(i, j)` collects every
/// input `(a, b)` and tap `(r, t)` with `a*s + r - p = i`, `b*s + t - p = j`.
pub fn conv_transpose_oracle(x: &Arr, k: &Filt, s: usize, p: usize, op: usize) -> Arr {
    let oh = (x.h - 1) * s + k.kh + op - 2 * p;
    let ow = (x.w - 1) * s + k.kw + op - 2 * p;
    let mut v = Vec::with_capacity(k.o * oh * ow);
    for o in 0..k.o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = k.b[o];
                for c in 0..k.c {
                    for r in 0..k.kh {
                        for t in 0..k.kw {
                            let (ni, nj) = (i + p, j + p);
                            if ni < r || nj < t || (ni - r) % s != 0 || (nj - t) % s != 0 {
                                continue;
                            }
                            let (a, b) = ((ni - r) / s, (nj - t) / s);
                            if a < x.h && b < x.w {
                                acc += k.at(o, c, r, t) * x.at(c, a, b);
                            }
                        }
                    }
                }
                v.push(acc);
            }
        }
    }
    Arr { c: k.o, h: oh, w: ow, v }
}

pub fn maxpool_oracle(x: &Arr) -> Arr {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut v = Vec::new();
    for c in 0..x.c {
        for i in 0..h {
            for j in 0..w {
                let cands = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| x.at(c, 2 * i + dy, 2 * j + dx));
                v.push(*cands.iter().max().unwrap());
            }
        }
    }
    Arr { c: x.c, h, w, v }
}

/// Round half away from zero of `acc / 2^shift`, then clamp to int8.
pub fn requantize_oracle(acc: i64, shift: i32) -> i64 {
    let scaled = acc as f64 / 2f64.powi(shift);
    (scaled.abs() + 0.5).floor().copysign(scaled).clamp(-128.0, 127.0) as i64
}

pub fn random_i8_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor {
    Tensor::new(shape, (0..shape.len()).map(|_| rng.gen::<i8>()).collect::<Vec<_>>()).unwrap()
}

pub fn random_i8_kernel(rng: &mut impl Rng, o: usize, c: usize, kh: usize, kw: usize) -> Kernel4D {
    let w: Vec<i8> = (0..o * c * kh * kw).map(|_| rng.gen()).collect();
    let b: Vec<i32> = (0..o).map(|_| rng.gen_range(-5000..=5000)).collect();
    Kernel4D::new(o, c, kh, kw, w, b).unwrap()
}

/// Confusion counts by direct per-pixel tally.
pub fn tally(gt: &[u8], pred: &[u8], n: usize) -> Vec<u64> {
    let mut m = vec![0u64; n * n];
    for (&g, &p) in gt.iter().zip(pred) {
        m[g as usize * n + p as usize] += 1;
    }
    m
}

/// Accuracy and mIoU straight from per-pixel comparisons.
pub fn metrics_oracle(gt: &[u8], pred: &[u8], n: usize) -> (f64, f64) {
    let correct = gt.iter().zip(pred).filter(|(g, p)| g == p).count();
    let mut ious = Vec::new();
    for c in 0..n as u8 {
        let inter = gt.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count();
        let union = gt.iter().zip(pred).filter(|&(&g, &p)| g == c || p == c).count();
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    (correct as f64 / gt.len() as f64, ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Transposed convolution by inserting `s - 1` zeros between inputs,
/// padding by `k - 1 - p` (plus `op` at the bottom/right) and correlating
/// with the spatially flipped kernel.
pub fn zero_insert_oracle(x: &Arr, k: &Filt, s: usize, p: usize, op: usize) -> Arr {
    let (bh, bw) = (k.kh - 1 - p, k.kw - 1 - p);
    let (h, w) = ((x.h - 1) * s + 1 + 2 * bh + op, (x.w - 1) * s + 1 + 2 * bw + op);
    let mut up = Arr { c: x.c, h, w, v: vec![0; x.c * h * w] };
    for c in 0..x.c {
        for i in 0..x.h {
            for j in 0..x.w {
                up.v[(c * h + bh + i * s) * w + bw + j * s] = x.at(c, i, j);
            }
        }
    }
    let mut flipped = k.clone();
    for o in 0..k.o {
        for c in 0..k.c {
            for r in 0..k.kh {
                for t in 0..k.kw {
                    flipped.w[((o * k.c + c) * k.kh + r) * k.kw + t] = k.at(o, c, k.kh - 1 - r, k.kw - 1 - t);
                }
            }
        }
    }
    conv_oracle(&up, &flipped, 1, 0)
}
