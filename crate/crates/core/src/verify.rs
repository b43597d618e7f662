//! Seeded randomized self-checks of the folding and layer engine against
//! naive reference implementations.
//!
//! The references here are written directly from the index definitions
//! with `i64`/`f64` arithmetic and share no code with `nn::ops`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fold::{fold, fold_kernel, unfold, FoldSpec};
use crate::nn::batchnorm::{fuse_batchnorm, BatchNormParams};
use crate::nn::ops::{conv2d, conv2d_accumulate, conv_transpose2d_accumulate, ConvParams, ConvTransposeParams};
use crate::tensor::{Data, Kernel4D, Shape, Tensor};

pub const FUSION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub cases: usize,
    /// Negative control: swaps the row/column offset order of every folded
    /// kernel so the equivalence check must fail.
    pub corrupt_kernel_order: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, cases: 100, corrupt_kernel_order: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub case: usize,
    pub description: String,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<Counterexample>,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub properties: Vec<PropertyOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(PropertyOutcome::passed)
    }

    pub fn first_failure(&self) -> Option<(&'static str, &Counterexample)> {
        self.properties.iter().find_map(|p| p.first_failure.as_ref().map(|c| (p.name, c)))
    }
}

type Check = fn(&mut ChaCha8Rng, usize, &VerifyOptions) -> Result<(), Counterexample>;

pub fn run_verification(opts: &VerifyOptions) -> VerifyReport {
    let checks: [(&'static str, Check); 4] = [
        ("fold-roundtrip", check_roundtrip),
        ("folded-conv-equivalence", check_folded_conv),
        ("conv-transpose-oracle", check_transpose),
        ("batchnorm-fusion", check_fusion),
    ];
    let properties = checks
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(31).wrapping_add(i as u64));
            let mut outcome = PropertyOutcome { name, cases: opts.cases, failures: 0, first_failure: None };
            for case in 0..opts.cases {
                if let Err(cx) = check(&mut rng, case, opts) {
                    outcome.failures += 1;
                    outcome.first_failure.get_or_insert(cx);
                }
            }
            outcome
        })
        .collect();
    VerifyReport { properties }
}

/// Plain cross-correlation over `i64`, zero padding, written from the
/// definition. Returns `(output, out_h, out_w)`.
#[allow(clippy::too_many_arguments)]
pub fn reference_conv(
    x: &[i64],
    (c, h, w): (usize, usize, usize),
    k: &[i64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[i64],
    stride: usize,
    padding: usize,
) -> (Vec<i64>, usize, usize) {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut y = vec![0i64; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for r in 0..kh {
                        for t in 0..kw {
                            let yy = (i * stride + r) as i64 - padding as i64;
                            let xx = (j * stride + t) as i64 - padding as i64;
                            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            acc += k[((oc * c + ic) * kh + r) * kw + t] * x[(ic * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                y[(oc * oh + i) * ow + j] = acc;
            }
        }
    }
    (y, oh, ow)
}

/// Transposed convolution as zero insertion, border padding and a
/// correlation with the spatially flipped kernel. Needs `padding < k`.
#[allow(clippy::too_many_arguments)]
pub fn reference_conv_transpose(
    x: &[i64],
    (c, h, w): (usize, usize, usize),
    k: &[i64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[i64],
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> (Vec<i64>, usize, usize) {
    let (top, left) = (kh - 1 - padding, kw - 1 - padding);
    let zh = (h - 1) * stride + 1 + 2 * top + output_padding;
    let zw = (w - 1) * stride + 1 + 2 * left + output_padding;
    let mut z = vec![0i64; c * zh * zw];
    for ic in 0..c {
        for i in 0..h {
            for j in 0..w {
                z[(ic * zh + top + i * stride) * zw + left + j * stride] = x[(ic * h + i) * w + j];
            }
        }
    }
    let mut flipped = vec![0i64; k.len()];
    for oc in 0..o {
        for ic in 0..c {
            for r in 0..kh {
                for t in 0..kw {
                    flipped[((oc * c + ic) * kh + r) * kw + t] =
                        k[((oc * c + ic) * kh + (kh - 1 - r)) * kw + (kw - 1 - t)];
                }
            }
        }
    }
    reference_conv(&z, (c, zh, zw), &flipped, (o, kh, kw), bias, 1, 0)
}

fn ints(t: &Data) -> Vec<i64> {
    match t {
        Data::F32(v) => v.iter().map(|&e| e as i64).collect(),
        Data::I8(v) => v.iter().map(|&e| e as i64).collect(),
        Data::I32(v) => v.iter().map(|&e| e as i64).collect(),
    }
}

fn random_i8(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen()).collect()
}

fn kernel_tensor(k: &Kernel4D) -> Tensor {
    Tensor::new(Shape::new(k.out_channels * k.in_channels, k.kh, k.kw), k.weights().clone()).expect("kernel shape")
}

fn int_tensor(v: Vec<i64>, shape: Shape) -> Tensor {
    Tensor::new(shape, v.into_iter().map(|e| e as i32).collect::<Vec<_>>()).expect("shape")
}

/// Swaps the `(dh, dw)` offset blocks of a folded kernel to `(dw, dh)`.
fn corrupt_offsets(k: &Kernel4D, alpha: usize) -> Kernel4D {
    let cin = k.in_channels / (alpha * alpha);
    let block = cin * k.kh * k.kw;
    let Data::I8(w) = k.weights() else { return k.clone() };
    let mut out = w.clone();
    for o in 0..k.out_channels {
        let base = o * k.in_channels * k.kh * k.kw;
        for dh in 0..alpha {
            for dw in 0..alpha {
                let src = base + (dh * alpha + dw) * block;
                let dst = base + (dw * alpha + dh) * block;
                out[dst..dst + block].copy_from_slice(&w[src..src + block]);
            }
        }
    }
    Kernel4D::new(k.out_channels, k.in_channels, k.kh, k.kw, out, k.bias().clone()).expect("same shape")
}

fn check_roundtrip(rng: &mut ChaCha8Rng, case: usize, _: &VerifyOptions) -> Result<(), Counterexample> {
    let alpha = rng.gen_range(1..=4);
    let shape = Shape::new(rng.gen_range(1..=4), alpha * rng.gen_range(1..=6), alpha * rng.gen_range(1..=6));
    let x = match case % 3 {
        0 => Tensor::new(shape, random_i8(rng, shape.len())),
        1 => Tensor::new(shape, (0..shape.len()).map(|_| rng.gen::<i32>()).collect::<Vec<_>>()),
        _ => Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>()),
    }
    .expect("valid shape");
    let spec = FoldSpec::new(alpha).expect("alpha >= 1");
    let folded = fold(&x, spec).expect("divisible");
    let back = unfold(&folded, spec).expect("divisible");
    let mut a = x.data().to_f64();
    let mut b = folded.data().to_f64();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if back == x && a == b {
        return Ok(());
    }
    Err(Counterexample {
        case,
        description: format!("alpha={alpha} shape={shape}: unfold(fold(x)) != x"),
        tensors: vec![("input".into(), x), ("folded".into(), folded), ("roundtrip".into(), back)],
    })
}

fn check_folded_conv(rng: &mut ChaCha8Rng, case: usize, opts: &VerifyOptions) -> Result<(), Counterexample> {
    // Cycle alpha so every factor appears even in short runs.
    let alpha = 1 + case % 4;
    let k = rng.gen_range(1..=3);
    let s = rng.gen_range(1..=2);
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let h = alpha * (s * rng.gen_range(0..4) + k);
    let w = alpha * (s * rng.gen_range(0..4) + k);
    let kk = alpha * k;

    let x = Tensor::new(Shape::new(cin, h, w), random_i8(rng, cin * h * w)).expect("shape");
    let bias: Vec<i32> = (0..cout).map(|_| rng.gen_range(-1000..=1000)).collect();
    let kernel = Kernel4D::new(cout, cin, kk, kk, random_i8(rng, cout * cin * kk * kk), bias.clone()).expect("kernel");

    let (expected, oh, ow) = reference_conv(
        &ints(x.data()),
        (cin, h, w),
        &ints(kernel.weights()),
        (cout, kk, kk),
        &bias.iter().map(|&b| b as i64).collect::<Vec<_>>(),
        alpha * s,
        0,
    );

    let spec = FoldSpec::new(alpha).expect("alpha >= 1");
    let mut folded_kernel = fold_kernel(&kernel, spec).expect("divisible kernel");
    if opts.corrupt_kernel_order {
        folded_kernel = corrupt_offsets(&folded_kernel, alpha);
    }
    let actual = fold(&x, spec).and_then(|fx| conv2d_accumulate(&fx, &folded_kernel, s, 0));
    let description = format!("alpha={alpha} k={k} stride={s} cin={cin} cout={cout} input={h}x{w}");
    let expected_t = int_tensor(expected, Shape::new(cout, oh, ow));
    match actual {
        Ok(y) if y == expected_t => Ok(()),
        other => {
            let mut tensors =
                vec![("input".into(), x), ("kernel".into(), kernel_tensor(&kernel)), ("expected".into(), expected_t)];
            if let Ok(y) = other {
                tensors.push(("actual".into(), y));
            }
            Err(Counterexample { case, description, tensors })
        }
    }
}

fn check_transpose(rng: &mut ChaCha8Rng, case: usize, _: &VerifyOptions) -> Result<(), Counterexample> {
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (k, p, h, w) = if case.is_multiple_of(10) {
        (3, ConvTransposeParams::doubling(), 88, 88)
    } else {
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=3);
        let p = rng.gen_range(0..k);
        let op = rng.gen_range(0..s);
        (k, ConvTransposeParams::new(s, p, op), rng.gen_range(1..=6), rng.gen_range(1..=6))
    };
    let x = Tensor::new(Shape::new(cin, h, w), random_i8(rng, cin * h * w)).expect("shape");
    let bias: Vec<i32> = (0..cout).map(|_| rng.gen_range(-1000..=1000)).collect();
    let kernel = Kernel4D::new(cout, cin, k, k, random_i8(rng, cout * cin * k * k), bias.clone()).expect("kernel");

    let description = format!(
        "k={k} stride={} padding={} output_padding={} cin={cin} cout={cout} input={h}x{w}",
        p.stride, p.padding, p.output_padding
    );
    let out_len = |n: usize| (n - 1) * p.stride + k + p.output_padding;
    if out_len(h) <= 2 * p.padding || out_len(w) <= 2 * p.padding {
        return match conv_transpose2d_accumulate(&x, &kernel, &p) {
            Err(_) => Ok(()),
            Ok(y) => Err(Counterexample {
                case,
                description: format!("{description}: expected an empty-output error"),
                tensors: vec![("input".into(), x), ("actual".into(), y)],
            }),
        };
    }
    let (expected, oh, ow) = reference_conv_transpose(
        &ints(x.data()),
        (cin, h, w),
        &ints(kernel.weights()),
        (cout, k, k),
        &bias.iter().map(|&b| b as i64).collect::<Vec<_>>(),
        p.stride,
        p.padding,
        p.output_padding,
    );
    let expected_t = int_tensor(expected, Shape::new(cout, oh, ow));
    match conv_transpose2d_accumulate(&x, &kernel, &p) {
        Ok(y) if y == expected_t => Ok(()),
        other => {
            let mut tensors =
                vec![("input".into(), x), ("kernel".into(), kernel_tensor(&kernel)), ("expected".into(), expected_t)];
            if let Ok(y) = other {
                tensors.push(("actual".into(), y));
            }
            Err(Counterexample { case, description, tensors })
        }
    }
}

/// Random float conv layer plus batchnorm in the ranges used by the
/// fusion check.
pub fn random_conv_bn(rng: &mut ChaCha8Rng) -> (Kernel4D, usize, BatchNormParams) {
    let (cin, cout, k) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=3));
    let padding = rng.gen_range(0..k);
    let bound = 1.0 / ((cin * k * k) as f32).sqrt();
    let weights: Vec<f32> = (0..cout * cin * k * k).map(|_| rng.gen_range(-bound..bound)).collect();
    let bias: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let kernel = Kernel4D::new(cout, cin, k, k, weights, bias).expect("kernel");
    let bn = BatchNormParams {
        gamma: (0..cout).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        running_mean: (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        running_var: (0..cout).map(|_| rng.gen_range(0.01..1.0)).collect(),
        epsilon: 1e-5,
    };
    (kernel, padding, bn)
}

/// `bn(conv(x))` evaluated entirely in `f64`.
pub fn reference_conv_bn(x: &Tensor, kernel: &Kernel4D, padding: usize, bn: &BatchNormParams) -> Vec<f64> {
    let s = x.shape();
    let (Data::F32(w), Data::F32(b)) = (kernel.weights(), kernel.bias()) else { panic!("float kernel expected") };
    let xs = x.data().to_f64();
    let (oh, ow) = ((s.height + 2 * padding - kernel.kh) + 1, (s.width + 2 * padding - kernel.kw) + 1);
    let mut y = Vec::with_capacity(kernel.out_channels * oh * ow);
    for o in 0..kernel.out_channels {
        let scale = bn.gamma[o] as f64 / (bn.running_var[o] as f64 + bn.epsilon as f64).sqrt();
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o] as f64;
                for c in 0..kernel.in_channels {
                    for r in 0..kernel.kh {
                        for t in 0..kernel.kw {
                            let (yy, xx) = ((i + r) as i64 - padding as i64, (j + t) as i64 - padding as i64);
                            if yy >= 0 && xx >= 0 && (yy as usize) < s.height && (xx as usize) < s.width {
                                acc += w[kernel.weight_index(o, c, r, t)] as f64
                                    * xs[(c * s.height + yy as usize) * s.width + xx as usize];
                            }
                        }
                    }
                }
                y.push((acc - bn.running_mean[o] as f64) * scale + bn.beta[o] as f64);
            }
        }
    }
    y
}

fn check_fusion(rng: &mut ChaCha8Rng, case: usize, _: &VerifyOptions) -> Result<(), Counterexample> {
    let (kernel, padding, bn) = random_conv_bn(rng);
    let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
    let shape = Shape::new(kernel.in_channels, h, w);
    let x =
        Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect::<Vec<_>>()).expect("shape");
    let expected = reference_conv_bn(&x, &kernel, padding, &bn);
    let fused = fuse_batchnorm(&kernel, &bn).expect("valid batchnorm");
    let y = conv2d(&x, &fused, &ConvParams::new(1, padding)).expect("valid conv");
    let max_diff = y.data().to_f64().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if max_diff <= FUSION_TOLERANCE {
        return Ok(());
    }
    let expected_t = Tensor::new(y.shape(), expected.iter().map(|&v| v as f32).collect::<Vec<_>>()).expect("shape");
    Err(Counterexample {
        case,
        description: format!("max |fused - conv+bn| = {max_diff:e} exceeds {FUSION_TOLERANCE:e}"),
        tensors: vec![
            ("input".into(), x),
            ("kernel".into(), kernel_tensor(&fused)),
            ("expected".into(), expected_t),
            ("actual".into(), y),
        ],
    })
}
