//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Criteria 8 and 9 run the full default pipeline twice
//! through the binary, so this target takes several minutes on one core.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use storyxai::autograd::Graph;
use storyxai::data::dataset::{build_sample, generate_scene};
use storyxai::data::{load_dataset, DatasetConfig, Example, Vocabulary};
use storyxai::distill::{
    bce_with_logits, dice_loss, distill_binary, distill_rows, distillation_loss, masked_cross_entropy,
    temperature_softmax, DICE_EPS, PAD_ID,
};
use storyxai::interpret::{grad_cam, grad_cam_map, grad_cam_pp_map, near_region, CamLayer};
use storyxai::interpret::lime::{design_matrix, kernel_weights};
use storyxai::interpret::{lime_explain, segment_grid, LimeConfig, SegmentMap};
use storyxai::models::{attention_on_graph, load_student, scaled_dot_attention, student_forward, AttentionInputs};
use storyxai::story::predicted_classes;
use storyxai::tensor::Tensor;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// 1

fn softmax_suite() -> Outcome {
    let mut r = rng(11);
    let (mut t1, mut shift) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.gen_range(2..12);
        let z = uniform(&mut r, n, 20.0);
        let t = r.gen_range(0.05..50.0);
        let p = temperature_softmax(&z, t).map_err(|e| e.to_string())?;
        let c = r.gen_range(-100.0..100.0);
        let zc: Vec<f64> = z.iter().map(|v| v + c).collect();
        let q = temperature_softmax(&zc, t).map_err(|e| e.to_string())?;
        shift = shift.max(max_abs_diff(&p.probabilities, &q.probabilities));
        let sum: f64 = p.probabilities.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-9, format!("sum {sum}"))?;
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ensure(z[p.argmax()] == zmax, "argmax not preserved")?;

        let m = zmax;
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let plain: Vec<f64> = e.iter().map(|v| v / s).collect();
        let p1 = temperature_softmax(&z, 1.0).map_err(|e| e.to_string())?;
        t1 = t1.max(max_abs_diff(&p1.probabilities, &plain));
    }
    ensure(t1 <= 1e-9, format!("T=1 deviates by {t1:e}"))?;
    ensure(shift <= 1e-9, format!("shift deviates by {shift:e}"))?;
    let z = [3.0f64, -1.0, 7.5, 0.2];
    let p = temperature_softmax(&z, 1e4).map_err(|e| e.to_string())?;
    let dev = p.probabilities.iter().map(|v| (v - 0.25).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-3, format!("uniform limit {dev:e}"))?;
    Ok(format!("T=1 {t1:.1e}, shift {shift:.1e}, uniform limit {dev:.1e}, 1000 argmax pairs"))
}

// 2

fn distillation_oracle() -> Outcome {
    let v = distillation_loss(&[0.0, 0.0], &[2f64.ln(), 0.0], 1.0).map_err(|e| e.to_string())?;
    ensure((v - 0.056633).abs() <= 1e-5, format!("oracle {v}"))?;
    let mut r = rng(12);
    let mut worst_zero = 0.0f64;
    for _ in 0..1000 {
        let n = r.gen_range(2..10);
        let s = uniform(&mut r, n, 10.0);
        let t = uniform(&mut r, n, 10.0);
        let temp = r.gen_range(0.5..8.0);
        let l = distillation_loss(&s, &t, temp).map_err(|e| e.to_string())?;
        ensure(l >= 0.0, format!("negative loss {l}"))?;
        worst_zero = worst_zero.max(distillation_loss(&s, &s, temp).map_err(|e| e.to_string())?.abs());
    }
    ensure(worst_zero <= 1e-9, format!("zero at equality {worst_zero:e}"))?;
    Ok(format!("oracle {v:.6}, 1000 nonnegative pairs, equality {worst_zero:.1e}"))
}

// 3

fn attention(q: &[f64], k: &[f64], v: &[f64], n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> (Vec<f64>, Vec<f64>) {
    let inp = AttentionInputs {
        q: Tensor::from_vec(&[n_q, d_k], q.to_vec()).unwrap(),
        k: Tensor::from_vec(&[n_k, d_k], k.to_vec()).unwrap(),
        v: Tensor::from_vec(&[n_k, d_v], v.to_vec()).unwrap(),
        d_k,
    };
    let (out, w) = scaled_dot_attention(&inp).unwrap();
    (out.data().to_vec(), w.rows().flatten().copied().collect())
}

fn attention_suite() -> Outcome {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n_q, n_k, d) = (r.gen_range(1..6), r.gen_range(1..9), r.gen_range(1..6));
        let (_, w) = attention(&uniform(&mut r, n_q * d, 5.0), &uniform(&mut r, n_k * d, 5.0), &uniform(&mut r, n_k * 2, 1.0), n_q, n_k, d, 2);
        for row in w.chunks(n_k) {
            ensure(row.iter().all(|&x| x >= 0.0), "negative weight")?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, format!("row sums off by {worst:e}"))?;

    let (out, w) = attention(&[0.3, -2.0], &[1.5, 4.0], &[7.0, -3.0], 1, 1, 2, 2);
    ensure(w == [1.0] && out == [7.0, -3.0], "single key is not the identity")?;
    let (out, w) = attention(&[1.0, 2.0, -1.0, 0.5], &[0.4, 0.4, 0.4, 0.4, 0.4, 0.4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3, 2, 2);
    ensure(w.iter().all(|&x| x == 1.0 / 3.0), format!("identical keys are not uniform: {w:?}"))?;
    ensure(max_abs_diff(&out, &[3.0, 4.0, 3.0, 4.0]) <= 1e-12, "uniform output is not the value mean")?;

    let (out, w) = attention(&[1.0, 0.0, 0.0, 1.0], &[1.0, 2.0, 3.0, -1.0], &[2.0, -1.0, 0.5, 3.0], 2, 2, 2, 2);
    let want_w = [0.19557032, 0.80442968, 0.89295820, 0.10704180];
    let want_o = [0.79335548, 2.21771873, 1.83943730, -0.57183279];
    ensure(max_abs_diff(&w, &want_w) <= 1e-8, format!("weights {w:?}"))?;
    ensure(max_abs_diff(&out, &want_o) <= 1e-8, format!("outputs {out:?}"))?;
    Ok(format!("row sums {worst:.1e}, degeneracies exact, 2x2 case to 1e-8"))
}

// 4

fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = x[i];
            x[i] = o + h;
            let up = f(&x);
            x[i] = o - h;
            let down = f(&x);
            x[i] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(n)).max(1e-12)
}

fn gradient_checks() -> Outcome {
    let mut r = rng(14);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..10 {
        let z = uniform(&mut r, 6, 4.0);
        let y: Vec<f64> = (0..6).map(|_| f64::from(r.gen_range(0..2u8))).collect();
        note("bce", rel_err(&bce_with_logits(&z, &y).unwrap().grad, &numeric(&z, |z| bce_with_logits(z, &y).unwrap().value)));
        let z = uniform(&mut r, 16, 3.0);
        let m: Vec<f64> = (0..16).map(|_| f64::from(r.gen_range(0..2u8))).collect();
        note("dice", rel_err(&dice_loss(&z, &m, DICE_EPS).unwrap().grad, &numeric(&z, |z| dice_loss(z, &m, DICE_EPS).unwrap().value)));
        let z = uniform(&mut r, 5 * 6, 3.0);
        let mut t: Vec<usize> = (0..5).map(|_| r.gen_range(1..6)).collect();
        t[4] = PAD_ID;
        note(
            "masked_ce",
            rel_err(&masked_cross_entropy(&z, 6, &t).unwrap().grad, &numeric(&z, |z| masked_cross_entropy(z, 6, &t).unwrap().value)),
        );
        let temp = r.gen_range(1.0..5.0);
        let s = uniform(&mut r, 12, 4.0);
        let t = uniform(&mut r, 12, 4.0);
        note(
            "distill",
            rel_err(&distill_rows(&s, &t, 4, temp).unwrap().grad, &numeric(&s, |s| distill_rows(s, &t, 4, temp).unwrap().value)),
        );
        note(
            "distill_binary",
            rel_err(&distill_binary(&s, &t, temp).unwrap().grad, &numeric(&s, |s| distill_binary(s, &t, temp).unwrap().value)),
        );

        let (n_q, n_k, d_k, d_v) = (2, 4, 3, 2);
        let x = uniform(&mut r, n_q * d_k + n_k * d_k + n_k * d_v, 2.0);
        let c = uniform(&mut r, n_q * d_v, 1.0);
        let (a, b) = (n_q * d_k, (n_q + n_k) * d_k);
        let f = |x: &[f64]| {
            let (out, _) = attention(&x[..a], &x[a..b], &x[b..], n_q, n_k, d_k, d_v);
            out.iter().zip(&c).map(|(o, w)| o * w).sum::<f64>()
        };
        let mut g = Graph::new();
        let qv = g.constant(Tensor::from_vec(&[n_q, d_k], x[..a].to_vec()).unwrap());
        let kv = g.constant(Tensor::from_vec(&[n_k, d_k], x[a..b].to_vec()).unwrap());
        let vv = g.constant(Tensor::from_vec(&[n_k, d_v], x[b..].to_vec()).unwrap());
        let (out, _) = attention_on_graph(&mut g, qv, kv, vv, d_k).unwrap();
        let value = g.value(out).data().iter().zip(&c).map(|(o, w)| o * w).sum();
        let root = g.loss(out, value, c.clone()).unwrap();
        let grads = g.backward(root);
        let mut analytic = Vec::new();
        for v in [qv, kv, vv] {
            analytic.extend_from_slice(grads.get(v).unwrap().data());
        }
        note("attention", rel_err(&analytic, &numeric(&x, f)));
    }
    for (name, e) in &worst {
        ensure(*e <= 1e-4, format!("{name}: relative error {e:e}"))?;
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    Ok(format!("{} functions x 10 points, worst relative error {max:.1e}", worst.len()))
}

// 5, 8, 9: pipeline runs through the binary

fn storyxai(root: &Path, config: Option<&Path>, args: &[&str]) -> std::result::Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_storyxai"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    let o = cmd.arg("--out").arg(root).arg("--quiet").args(args).env_remove("DISTILL_STORY_OUT").output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), format!("storyxai {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim()))
}

fn full_run(root: &Path) -> std::result::Result<(), String> {
    for cmd in ["gen-data", "train-teachers", "distill", "evaluate", "story"] {
        storyxai(root, None, &[cmd])?;
    }
    Ok(())
}

fn read_json(path: &Path) -> std::result::Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn freeze_contract(work: &Path) -> Outcome {
    let root = work.join("freeze");
    let cfg = work.join("freeze.json");
    fs::write(
        &cfg,
        r#"{"dataset": {"n_samples": 200}, "teacher": {"epochs": 2}, "distill": {"epochs": 3},
            "floors": {"macro_f1": 0.0, "dice": 0.0, "token_accuracy": 0.0}}"#,
    )
    .unwrap();
    for cmd in ["gen-data", "train-teachers", "distill"] {
        storyxai(&root, Some(&cfg), &[cmd])?;
    }
    let proofs = read_json(&root.join("student/frozen_checksums.json"))?;
    let phases = proofs.as_array().ok_or("checksums are not a list")?;
    ensure(phases.len() == 3, format!("{} phases", phases.len()))?;
    let mut checkpoints = 0;
    for p in phases {
        let cps = p["checkpoints"].as_array().ok_or("missing checkpoints")?;
        ensure(cps.len() >= 2, "too few checkpoints")?;
        ensure(cps.windows(2).all(|w| w[0] == w[1]), format!("frozen heads changed in phase {}", p["phase"]))?;
        checkpoints += cps.len();
    }
    Ok(format!("3 phases, {checkpoints} checkpoints, frozen heads bit-identical"))
}

fn end_to_end(root: &Path) -> Outcome {
    let m = read_json(&root.join("metrics.json"))?;
    let floors = [("report", 0.85), ("abnormality", 0.9), ("segmentation", 0.8)];
    let mut parts = Vec::new();
    for t in m["tasks"].as_array().ok_or("no tasks")? {
        let task = t["task"].as_str().unwrap_or_default();
        let floor = floors.iter().find(|f| f.0 == task).ok_or(format!("unknown task {task}"))?.1;
        let (teacher, agreement) = (t["teacher"].as_f64().unwrap_or(0.0), t["agreement"].as_f64().unwrap_or(0.0));
        ensure(teacher >= floor, format!("teacher {task} {teacher:.4} below {floor}"))?;
        ensure(agreement >= 0.85, format!("student {task} agreement {agreement:.4}"))?;
        parts.push(format!("{task} teacher {teacher:.3} agreement {agreement:.3}"));
    }
    ensure(parts.len() == 3, "expected three tasks")?;
    let retention = m["abnormality_retention"].as_f64().unwrap_or(0.0);
    ensure(retention >= 0.95, format!("retention {retention:.4}"))?;
    Ok(format!("{}; retention {retention:.3}", parts.join(", ")))
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(a: &Path, b: &Path) -> Outcome {
    let mut compared = vec![PathBuf::from("data/manifest.jsonl"), PathBuf::from("metrics.json"), PathBuf::from("student/train_log.json")];
    for t in ["report", "abnormality", "segmentation"] {
        compared.push(PathBuf::from(format!("teachers/{t}/train_log.json")));
    }
    let stories: Vec<PathBuf> = files(&a.join("story")).into_iter().filter(|p| p.ends_with("story.json")).collect();
    ensure(!stories.is_empty(), "run A has no stories")?;
    ensure(stories == files(&b.join("story")).into_iter().filter(|p| p.ends_with("story.json")).collect::<Vec<_>>(), "story sets differ")?;
    compared.extend(stories.iter().map(|p| Path::new("story").join(p)));
    for rel in &compared {
        let (x, y) = (fs::read(a.join(rel)), fs::read(b.join(rel)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), format!("{} differs", rel.display()))?;
    }
    Ok(format!("{} files byte-identical", compared.len()))
}

// 6

fn cam_suite(run_a: &Path) -> Outcome {
    let mut r = rng(16);
    for _ in 0..100 {
        let (c, h, w) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6));
        let a: Vec<f64> = (0..c * h * w).map(|_| r.gen_range(0.0..3.0)).collect();
        let g = uniform(&mut r, c * h * w, 2.0);
        let a = Tensor::from_vec(&[c, h, w], a).unwrap();
        let g = Tensor::from_vec(&[c, h, w], g).unwrap();
        ensure(grad_cam_map(&a, &g).unwrap().iter().all(|&v| v >= 0.0), "negative Grad-CAM value")?;
        ensure(grad_cam_pp_map(&a, &g).unwrap().iter().all(|&v| v >= 0.0), "negative Grad-CAM++ value")?;
        let zero = Tensor::zeros(&[c, h, w]);
        ensure(grad_cam_map(&zero, &g).unwrap().iter().all(|&v| v == 0.0), "zero activations give a nonzero map")?;
    }
    let a = Tensor::from_vec(&[2, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
    let g = Tensor::from_vec(&[2, 2, 2], vec![0.5, 0.5, 0.5, 0.5, -0.25, -0.25, -0.25, -0.25]).unwrap();
    let m = grad_cam_map(&a, &g).unwrap();
    ensure(max_abs_diff(&m, &[0.5, 0.0, 0.0, 0.0]) <= 1e-9, format!("2x2 case {m:?}"))?;

    let (student, _) = load_student::<f64>(&run_a.join("student")).map_err(|e| e.to_string())?;
    let net = student.network();
    for _ in 0..100 {
        let img = Tensor::from_vec(&[1, 64, 64], (0..64 * 64).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let hm = grad_cam(net, &img, r.gen_range(0..4), CamLayer::default()).map_err(|e| e.to_string())?;
        ensure(hm.raw_min >= 0.0 && hm.values.iter().all(|&v| v >= 0.0), "negative heatmap on a trained student")?;
    }

    // Held-out scenes from the training distribution under another seed.
    let cfg = DatasetConfig { master_seed: 99, ..DatasetConfig::default() };
    let vocab = Vocabulary::for_classes(&cfg.classes).map_err(|e| e.to_string())?;
    let (mut hits, mut n, mut i) = (0, 0, 0);
    while n < 100 {
        let scene = generate_scene(&cfg, i);
        i += 1;
        if scene.abnormalities.len() != 1 {
            continue;
        }
        let s = build_sample(&cfg, &vocab, i, scene.clone()).map_err(|e| e.to_string())?;
        let ex = Example::<f64>::from_sample(&s);
        let a = &scene.abnormalities[0];
        let hm = grad_cam(net, &ex.image, a.class_id, CamLayer::default()).map_err(|e| e.to_string())?;
        hits += usize::from(near_region(&a.region, cfg.image_size, hm.argmax(), 16.0));
        n += 1;
    }
    ensure(hits >= 70, format!("localization {hits}/100"))?;
    Ok(format!("nonnegative on 200 maps, 2x2 case exact, localization {hits}/100"))
}

// 7

fn indicators(img: &[f64], segments: &SegmentMap) -> Vec<f64> {
    let mut z = vec![0.0; segments.n_segments];
    for (&v, &s) in img.iter().zip(&segments.ids) {
        if v != 0.0 {
            z[s] = 1.0;
        }
    }
    z
}

fn lime_suite() -> Outcome {
    let segments = segment_grid(16, 16, 4).map_err(|e| e.to_string())?;
    let image = vec![1.0; 256];
    let config = |ridge| LimeConfig { n_samples: 400, ridge, grid: 4, fill_value: 0.0, ..Default::default() };

    let beta: Vec<f64> = (0..16).map(|i| ((i * 5 % 13) as f64 - 6.0) / 3.0).collect();
    let linear = |img: &[f64]| -> storyxai::Result<f64> { Ok(indicators(img, &segments).iter().zip(&beta).map(|(z, b)| z * b).sum()) };
    let e = lime_explain(linear, &image, 0, &segments, &config(1e-6)).map_err(|e| e.to_string())?;
    let rec = max_abs_diff(&e.weights, &beta);
    ensure(rec <= 1e-3, format!("linear recovery {rec:e}"))?;

    let f = |z: &[f64]| (1.5 * z[2] - z[9] + z[2] * z[14]).tanh() + 0.2 * z[5];
    let mut worst = 0.0f64;
    for ridge in [1e-6, 1e-2, 1.0] {
        let cfg = config(ridge);
        let predict = |img: &[f64]| -> storyxai::Result<f64> { Ok(f(&indicators(img, &segments))) };
        let e = lime_explain(predict, &image, 0, &segments, &cfg).map_err(|e| e.to_string())?;
        let p = design_matrix(segments.n_segments, &cfg);
        let (n, s) = (p.rows.len(), segments.n_segments);
        let x = nalgebra::DMatrix::from_fn(n, s + 1, |i, j| if j == s { 1.0 } else { f64::from(p.rows[i][j]) });
        let y: Vec<f64> = p.rows.iter().map(|row| f(&row.iter().map(|&b| f64::from(b)).collect::<Vec<_>>())).collect();
        let pi = kernel_weights(&p.rows, cfg.sigma(s));
        let w = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&pi));
        let mut lhs = x.transpose() * &w * &x;
        for j in 0..s {
            lhs[(j, j)] += ridge;
        }
        let theta = lhs.lu().solve(&(x.transpose() * &w * nalgebra::DVector::from_column_slice(&y))).ok_or("singular oracle")?;
        worst = worst.max(max_abs_diff(&e.weights, &theta.as_slice()[..s])).max((e.intercept - theta[s]).abs());
        let again = lime_explain(predict, &image, 0, &segments, &cfg).map_err(|e| e.to_string())?;
        ensure(again == e, "not deterministic")?;
    }
    ensure(worst <= 1e-6, format!("oracle mismatch {worst:e}"))?;
    Ok(format!("recovery {rec:.1e}, oracle {worst:.1e}, deterministic"))
}

// 10

fn story_contract(run_a: &Path) -> Outcome {
    let ds = load_dataset::<f32>(&run_a.join("data")).map_err(|e| e.to_string())?;
    let (student, _) = load_student::<f32>(&run_a.join("student")).map_err(|e| e.to_string())?;
    let mut chosen = None;
    for &i in &ds.splits.test {
        let out = student_forward(&student, &ds.examples[i].image).map_err(|e| e.to_string())?;
        let pos = predicted_classes(&out.class_logits, 0.5);
        if pos.len() == 2 {
            chosen = Some((i, pos));
            break;
        }
    }
    let (id, positives) = chosen.ok_or("no test sample with two predicted positives")?;
    storyxai(run_a, None, &["story", "--samples", &id.to_string()])?;
    let dir = run_a.join("story").join(format!("{id:06}"));
    let kinds = |s: &Value| -> Vec<String> {
        s["sections"].as_array().into_iter().flatten().map(|x| x["kind"].as_str().unwrap_or_default().to_string()).collect()
    };
    let de = read_json(&dir.join("domain_expert/story.json"))?;
    let ml = read_json(&dir.join("ml_practitioner/story.json"))?;
    let technical = ["metrics", "lime_table"];
    ensure(!kinds(&de).iter().any(|k| technical.contains(&k.as_str())), format!("technical section in domain_expert: {:?}", kinds(&de)))?;
    let ml_kinds = kinds(&ml);
    for need in ["metrics", "lime_table", "cam_gallery", "attention_gallery"] {
        ensure(ml_kinds.iter().any(|k| k == need), format!("ml_practitioner lacks {need}"))?;
    }
    ensure(ml_kinds.iter().filter(|k| *k == "lime_table").count() == 2, "expected one LIME table per finding")?;
    for story in [&de, &ml] {
        let findings: Vec<u64> = story["sections"]
            .as_array()
            .into_iter()
            .flatten()
            .filter(|s| s["kind"] == "finding")
            .filter_map(|s| s["class_id"].as_u64())
            .collect();
        ensure(findings.len() == 2, format!("{} findings", findings.len()))?;
        ensure(findings.iter().all(|&c| positives.contains(&(c as usize))), "finding for a class that is not predicted positive")?;
    }
    ensure(dir.join("domain_expert/index.html").is_file() && dir.join("ml_practitioner/index.html").is_file(), "missing html")?;
    Ok(format!("sample {id}: findings {positives:?}, {} ml sections, no technical sections for domain experts", ml_kinds.len()))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (work.path().join("run_a"), work.path().join("run_b"));
    let mut results: BTreeMap<u8, (Outcome, f64)> = BTreeMap::new();
    let mut run = |id: u8, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        results.insert(id, (outcome, start.elapsed().as_secs_f64()));
    };
    run(1, &softmax_suite);
    run(2, &distillation_oracle);
    run(3, &attention_suite);
    run(4, &gradient_checks);
    run(7, &lime_suite);
    run(5, &|| freeze_contract(work.path()));
    run(8, &|| full_run(&run_a).and_then(|_| end_to_end(&run_a)));
    run(6, &|| cam_suite(&run_a));
    run(9, &|| full_run(&run_b).and_then(|_| reproducibility(&run_a, &run_b)));
    run(10, &|| story_contract(&run_a));

    let names = [
        "temperature softmax",
        "distillation loss oracle",
        "scaled dot-product attention",
        "gradient checks",
        "freeze contract",
        "Grad-CAM",
        "LIME oracle",
        "end-to-end pipeline",
        "reproducibility",
        "story contract",
    ];
    let mut failed = 0;
    for (id, (outcome, secs)) in &results {
        let name = names[usize::from(*id) - 1];
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} ({secs:.1}s)");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
