//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use l3unet::accel::{conv_workload, graph_cost_report, AcceleratorSpec};
use l3unet::arch::{build_l3unet, randomize_weights, ArchConfig};
use l3unet::eval::{ClassMap, ConfusionMatrix};
use l3unet::nn::ops::{conv2d, conv2d_accumulate, conv_transpose2d_accumulate, ConvParams, ConvTransposeParams};
use l3unet::nn::{batchnorm_forward, fuse_batchnorm, param_count, run_graph, BatchNormParams, ExecMode, LayerKind};
use l3unet::{fold, fold_kernel, unfold, Dtype, FoldSpec, Kernel4D, Shape, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:?}, limit {limit:?}"))
}

fn c01_fold_shape_law() -> Outcome {
    let a = Tensor::zeros(Shape::new(3, 8, 8), Dtype::I8).unwrap();
    let b = Tensor::zeros(Shape::new(3, 352, 352), Dtype::I8).unwrap();
    let t = Instant::now();
    let ya = fold(&a, FoldSpec::new(4).unwrap()).map_err(|e| e.to_string())?;
    let yb = fold(&b, FoldSpec::new(2).unwrap()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    check(ya.shape() == Shape::new(48, 2, 2), format!("3x8x8 a=4 gave {}", ya.shape()))?;
    check(yb.shape() == Shape::new(12, 176, 176), format!("3x352x352 a=2 gave {}", yb.shape()))?;
    within(elapsed, Duration::from_millis(1))?;
    Ok(format!("48x2x2 and 12x176x176 in {elapsed:?}"))
}

fn c02_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Instant::now();
    let cases = 250;
    for i in 0..cases {
        let a = rng.gen_range(1..=4);
        let shape = Shape::new(rng.gen_range(1..=6), a * rng.gen_range(1..=12), a * rng.gen_range(1..=12));
        let x = match i % 3 {
            0 => random_i8_tensor(&mut rng, shape),
            1 => Tensor::new(shape, (0..shape.len()).map(|_| rng.gen::<i32>()).collect::<Vec<_>>()).unwrap(),
            _ => Tensor::new(shape, (0..shape.len()).map(|_| rng.gen::<f32>()).collect::<Vec<_>>()).unwrap(),
        };
        let spec = FoldSpec::new(a).unwrap();
        let back = unfold(&fold(&x, spec).unwrap(), spec).unwrap();
        check(back == x, format!("case {i}: alpha={a} shape={shape}"))?;
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{cases} cases in {:?}", t.elapsed()))
}

fn c03_folded_conv_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Instant::now();
    let mut cases = 0;
    for a in 1..=4 {
        for k in 1..=3 {
            for s in 1..=2 {
                for _ in 0..5 {
                    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
                    let h = a * (s * rng.gen_range(0..5) + k);
                    let w = a * (s * rng.gen_range(0..5) + k);
                    let x = random_i8_tensor(&mut rng, Shape::new(cin, h, w));
                    let kern = random_i8_kernel(&mut rng, cout, cin, a * k, a * k);
                    let spec = FoldSpec::new(a).unwrap();
                    let lhs =
                        conv2d_accumulate(&fold(&x, spec).unwrap(), &fold_kernel(&kern, spec).unwrap(), s, 0).unwrap();
                    let rhs = conv_oracle(&Arr::from_tensor(&x), &Filt::from_kernel(&kern), a * s, 0);
                    check(Arr::from_tensor(&lhs) == rhs, format!("alpha={a} k={k} s={s} {cin}x{h}x{w}"))?;
                    cases += 1;
                }
            }
        }
    }
    within(t.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{cases} exact matches over alpha 1-4, k 1-3, s 1-2 in {:?}", t.elapsed()))
}

fn c04_quartering_law() -> Outcome {
    let spec = AcceleratorSpec::default();
    let t = Instant::now();
    // Same 3x3, 8-output, same-padded conv on the raw and folded input.
    let max = |a: usize| {
        let side = 352 / a;
        conv_workload("conv", "Conv2d", 3 * a * a, Shape::new(8, side, side), 3, 3, &spec).max_macs
    };
    let (m1, m2, m4) = (max(1), max(2), max(4));
    let elapsed = t.elapsed();
    check(m1 == 352 * 352 * 8 * 9, format!("alpha=1 max MACs {m1}"))?;
    check(m2 * 4 == m1 && m4 * 16 == m1, format!("ratios broken: {m1} {m2} {m4}"))?;
    within(elapsed, Duration::from_millis(1))?;
    Ok(format!("{m1} : {m2} : {m4} = 1 : 1/4 : 1/16"))
}

fn random_bn_layer(rng: &mut ChaCha8Rng) -> (Kernel4D, usize, BatchNormParams) {
    let (cin, cout, k) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=3));
    let bound = 1.0 / ((cin * k * k) as f32).sqrt();
    let w: Vec<f32> = (0..cout * cin * k * k).map(|_| rng.gen_range(-bound..bound)).collect();
    let b: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let bn = BatchNormParams {
        gamma: (0..cout).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        running_mean: (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        running_var: (0..cout).map(|_| rng.gen_range(0.01..1.0)).collect(),
        epsilon: 1e-5,
    };
    (Kernel4D::new(cout, cin, k, k, w, b).unwrap(), k / 2, bn)
}

fn c05_batchnorm_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (kern, pad, bn) = random_bn_layer(&mut rng);
        let shape = Shape::new(kern.in_channels, 12, 12);
        let x = Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect::<Vec<_>>()).unwrap();
        let p = ConvParams::new(1, pad);
        let unfused = batchnorm_forward(&conv2d(&x, &kern, &p).unwrap(), &bn).unwrap();
        let fused = conv2d(&x, &fuse_batchnorm(&kern, &bn).unwrap(), &p).unwrap();
        for (a, b) in unfused.data().to_f64().iter().zip(fused.data().to_f64()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-5, format!("max abs difference {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("50 layers, max abs difference {worst:.2e}"))
}

fn c06_transpose_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = Instant::now();
    let mut cases = 0;
    for i in 0..60 {
        let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (k, p, h, w) = if i % 6 == 0 {
            (3, ConvTransposeParams::doubling(), 88, 88)
        } else {
            let k = rng.gen_range(1..=4);
            let s = rng.gen_range(1..=3);
            let p = ConvTransposeParams::new(s, rng.gen_range(0..k), rng.gen_range(0..s));
            let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            if (h - 1) * s + k + p.output_padding <= 2 * p.padding
                || (w - 1) * s + k + p.output_padding <= 2 * p.padding
            {
                continue;
            }
            (k, p, h, w)
        };
        let x = random_i8_tensor(&mut rng, Shape::new(cin, h, w));
        let kern = random_i8_kernel(&mut rng, cout, cin, k, k);
        let y = conv_transpose2d_accumulate(&x, &kern, &p).unwrap();
        if i % 6 == 0 {
            check(y.shape() == Shape::new(cout, 176, 176), format!("doubling gave {}", y.shape()))?;
        }
        let expected =
            zero_insert_oracle(&Arr::from_tensor(&x), &Filt::from_kernel(&kern), p.stride, p.padding, p.output_padding);
        check(
            Arr::from_tensor(&y) == expected,
            format!("case {i}: k={k} s={} p={} op={}", p.stride, p.padding, p.output_padding),
        )?;
        cases += 1;
    }
    check(cases >= 50, format!("only {cases} cases ran"))?;
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{cases} exact matches incl. 88->176 doubling in {:?}", t.elapsed()))
}

fn c07_architecture_census() -> Outcome {
    let g = build_l3unet(&ArchConfig::default()).map_err(|e| e.to_string())?;
    let kinds: Vec<&str> = g.layers().iter().map(|l| l.kind.label()).collect();
    let mut want = vec!["Fold", "Conv2d", "Conv2d", "Conv2d", "Conv2d"];
    for _ in 0..3 {
        want.extend(["MaxPool2d", "Conv2d"]);
    }
    for _ in 0..3 {
        want.extend(["ConvTranspose2d", "Concat"]);
    }
    want.extend(["Conv2d"; 6]);
    want.push("Unfold");
    check(kinds == want, format!("layer sequence {kinds:?}"))?;

    let shapes = g.shapes().map_err(|e| e.to_string())?;
    let trace: Vec<usize> = g
        .layers()
        .iter()
        .zip(&shapes)
        .filter(|(l, _)| matches!(l.kind, LayerKind::MaxPool2d | LayerKind::ConvTranspose2d { .. }))
        .map(|(_, s)| s.output.height)
        .collect();
    let first = shapes.iter().zip(g.layers()).find(|(_, l)| l.kind == LayerKind::Conv2d).unwrap().0.output.height;
    let mut res = vec![first];
    res.extend(trace);
    check(res == [88, 44, 22, 11, 22, 44, 88], format!("resolution trace {res:?}"))?;
    let out = g.output_shape().map_err(|e| e.to_string())?;
    check(g.input_shape() == Shape::new(3, 352, 352) && out == Shape::new(4, 352, 352), format!("end to end {out}"))?;
    Ok("24 layers, 88>44>22>11>22>44>88, 3x352x352 -> 4x352x352".into())
}

fn c08_parameter_accounting() -> Outcome {
    let g = build_l3unet(&ArchConfig::default()).map_err(|e| e.to_string())?;
    let stored: usize = g.kernels().map(|(_, k)| k.weights().len() + k.bias().len()).sum();
    // Independent tally from the layer widths: (cin, cout, k) per conv.
    let convs = [
        (48, 64, 1),
        (64, 64, 1),
        (64, 32, 1),
        (32, 24, 3),
        (24, 48, 3),
        (48, 64, 3),
        (64, 96, 3),
        (96, 64, 3),
        (128, 48, 3),
        (96, 24, 3),
        (48, 32, 3),
        (32, 48, 3),
        (48, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
    ];
    let by_formula: usize = convs.iter().map(|&(ci, co, k)| co * ci * k * k + co).sum();
    let counted = param_count(&g);
    check(
        counted == stored && counted == by_formula,
        format!("param_count {counted}, stored {stored}, formula {by_formula}"),
    )?;
    let report = graph_cost_report(&g, &AcceleratorSpec::default()).map_err(|e| e.to_string())?;
    check(report.weight_bytes == counted && report.spec.weight_memory_bytes == 452_608, "weight bytes mismatch")?;
    check(report.fits_weight_memory, report.budget_line())?;
    Ok(report.budget_line())
}

fn c09_metrics_oracle() -> Outcome {
    let t = Instant::now();
    let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
    let (acc, miou) = (cm.pixel_accuracy().unwrap(), cm.mean_iou().unwrap());
    check((acc - 0.75).abs() < 1e-12 && (miou - 0.6).abs() < 1e-12, format!("worked example {acc} {miou}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..150 {
        let n = rng.gen_range(2..=6);
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let gt: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..n as u8)).collect();
        let pred: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..n as u8)).collect();
        let mut cm = ConfusionMatrix::new(n);
        cm.accumulate(&ClassMap::new(h, w, gt.clone()).unwrap(), &ClassMap::new(h, w, pred.clone()).unwrap()).unwrap();
        let (a, m) = metrics_oracle(&gt, &pred, n);
        check(cm.counts() == tally(&gt, &pred, n).as_slice(), format!("pair {i}: counts"))?;
        check((cm.pixel_accuracy().unwrap() - a).abs() < 1e-12, format!("pair {i}: accuracy"))?;
        check((cm.mean_iou().unwrap() - m).abs() < 1e-12, format!("pair {i}: mIoU"))?;
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok("worked example 0.75 / 0.6; 150 random pairs match the direct tally".into())
}

fn c10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_l3unet");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ppm = b"P6\n352 352\n255\n".to_vec();
    ppm.extend((0..352 * 352 * 3).map(|_| rng.gen::<u8>()));
    std::fs::write(d.join("in.ppm"), ppm).unwrap();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).current_dir(d).output().map_err(|e| e.to_string())?;
        check(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    run(&["init-weights", "--seed", "4", "--output", "w.l3uw"])?;
    for tag in ["a", "b"] {
        let (pgm, csv) = (format!("{tag}.pgm"), format!("{tag}.csv"));
        run(&[
            "infer",
            "--weights",
            "w.l3uw",
            "--input",
            "in.ppm",
            "--output",
            &pgm,
            "--csv",
            &csv,
            "--mode",
            "quant",
        ])?;
    }
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    check(read("a.pgm") == read("b.pgm"), "PGM outputs differ")?;
    check(read("a.csv") == read("b.csv"), "CSV outputs differ")?;
    Ok("two quantized runs gave byte-identical PGM and CSV".into())
}

fn c11_float_latency() -> Outcome {
    let mut g = build_l3unet(&ArchConfig::default()).map_err(|e| e.to_string())?;
    randomize_weights(&mut g, 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::new(3, 352, 352);
    let x = Tensor::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>()).unwrap();
    let t = Instant::now();
    let y = run_graph(&g, &x, ExecMode::Float).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    check(y.shape() == Shape::new(4, 352, 352), format!("output {}", y.shape()))?;
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("float inference in {elapsed:?}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("fold shape law", c01_fold_shape_law),
        ("fold/unfold roundtrip", c02_roundtrip),
        ("folded convolution equivalence", c03_folded_conv_equivalence),
        ("quartering law", c04_quartering_law),
        ("batchnorm fusion", c05_batchnorm_fusion),
        ("transposed conv oracle", c06_transpose_oracle),
        ("architecture census", c07_architecture_census),
        ("parameter accounting", c08_parameter_accounting),
        ("metrics oracle", c09_metrics_oracle),
        ("inference determinism", c10_determinism),
        ("float inference latency", c11_float_latency),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
