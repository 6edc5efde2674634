//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use aae_core::dataset::{
    class_weights_from_counts, ratio_from_counts, stratified_kfold, ClassWeights, DatasetManifest,
    ImageRecord, WeightScheme,
};
use aae_core::image::ImageTensor;
use aae_core::model::{FeatureMap, Matrix, Model, ModelConfig};
use aae_core::preprocess::segment_roi;
use aae_core::training::{
    classification_loss, discriminator_loss, generator_loss, one_hot, phase_gradients,
    reconstruction_loss, train_batch_observed, GradTargets, LossContext, OptimizerSpec, Optimizers,
    Phase, PhaseInputs, PhaseObserver, ReconstructionMode,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{name}: got {got}, expected {want} ± {tol}"))
}

// 1. Loss analytics.

fn loss_analytics() -> Check {
    let ln2 = 2f64.ln();
    let ln3 = 3f64.ln();
    let tol = 1e-6;
    let m = |rows: &[&[f64]]| Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>());

    let mut target = FeatureMap::zeros(1, 1, 2, 2);
    target.data.copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
    let mut shifted = target.clone();
    shifted.data.iter_mut().for_each(|v| *v += 0.5);
    for mode in [ReconstructionMode::SumPerImage, ReconstructionMode::PerPixel] {
        close("L1 identity", reconstruction_loss(&target, &target, mode).unwrap(), 0.0, tol)?;
    }
    close("L1 literal", reconstruction_loss(&shifted, &target, ReconstructionMode::SumPerImage).unwrap(), 1.0, tol)?;
    close("L1 per-pixel", reconstruction_loss(&shifted, &target, ReconstructionMode::PerPixel).unwrap(), 0.25, tol)?;
    let twice = |f: &FeatureMap| {
        let mut d = FeatureMap::zeros(2, 1, 2, 2);
        d.data[..4].copy_from_slice(&f.data);
        d.data[4..].copy_from_slice(&f.data);
        d
    };
    for mode in [ReconstructionMode::SumPerImage, ReconstructionMode::PerPixel] {
        let single = reconstruction_loss(&shifted, &target, mode).unwrap();
        let doubled = reconstruction_loss(&twice(&shifted), &twice(&target), mode).unwrap();
        close("L1 duplicated batch", doubled, single, tol)?;
    }

    close("L2 perfect", discriminator_loss(&m(&[&[0.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap(), 0.0, tol)?;
    close("L2 equilibrium", discriminator_loss(&m(&[&[0.5, 0.5]]), &m(&[&[0.5, 0.5]])).unwrap(), 2.0 * ln2, tol)?;
    close("L2 half", discriminator_loss(&m(&[&[0.5, 0.5]]), &m(&[&[1.0, 0.0]])).unwrap(), ln2, tol)?;

    close("L3 fooled", generator_loss(&m(&[&[0.0, 1.0]])).unwrap(), 0.0, tol)?;
    close("L3 equilibrium", generator_loss(&m(&[&[0.5, 0.5]])).unwrap(), ln2, tol)?;
    close("L3 clamped", generator_loss(&m(&[&[1.0 - 1e-12, 1e-12]])).unwrap(), -(1e-12f64).ln(), tol)?;
    let saturated = generator_loss(&m(&[&[1.0, 0.0]])).unwrap();
    ensure(saturated.is_finite(), "L3 not finite at a zero probability")?;

    let third = 1.0 / 3.0;
    let uniform = m(&[&[third, third, third]]);
    close("L4 perfect", classification_loss(&one_hot(&[1], 3), &one_hot(&[1], 3), &ClassWeights::uniform(3)).unwrap(), 0.0, tol)?;
    for class in 0..3 {
        close("L4 uniform", classification_loss(&uniform, &one_hot(&[class], 3), &ClassWeights::uniform(3)).unwrap(), ln3, tol)?;
    }
    let weights = ClassWeights { scheme: WeightScheme::Balanced, weights: vec![2.0, 1.0, 1.0] };
    close("L4 weighted", classification_loss(&uniform, &one_hot(&[0], 3), &weights).unwrap(), 2.0 * ln3, tol)?;
    Ok("reconstruction, discriminator, generator and classification examples within 1e-6".into())
}

// 2. Gradients against central finite differences.

fn tiny_model(seed: u64) -> Model {
    let mut model = Model::new(ModelConfig {
        input_side: 8,
        latent_length: 2,
        num_classes: 3,
        widths: vec![4, 8],
        seed,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    for v in model.discriminator.params_mut().values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    model
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let batch = 3;
    let mut images = FeatureMap::zeros(batch, 3, 8, 8);
    images.data.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
    let mut prior = Matrix::zeros(batch, 3);
    for i in 0..batch {
        prior.row_mut(i)[rng.random_range(0..3)] = 1.0;
    }
    let inputs = PhaseInputs { images: &images, labels: &labels, real_prior: &prior };
    let ctx = LossContext {
        weights: ClassWeights { scheme: WeightScheme::Balanced, weights: vec![0.7, 1.1, 1.2] },
        ..LossContext::unweighted(3)
    };
    let none = GradTargets { encoder: false, decoder: false, discriminator: false };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for phase in Phase::ALL {
        let mut model = tiny_model(phase as u64 + 1);
        let (_, g) = phase_gradients(&model, phase, inputs, &ctx, GradTargets::ALL).unwrap();
        let analytic = [g.encoder, g.decoder, g.discriminator];
        for (gi, name) in ["encoder", "decoder", "discriminator"].iter().enumerate() {
            let mut numeric = vec![0.0; analytic[gi].len()];
            for (i, n) in numeric.iter_mut().enumerate() {
                let v = model.groups_mut()[gi].values()[i];
                model.groups_mut()[gi].values_mut()[i] = v + h;
                let plus = phase_gradients(&model, phase, inputs, &ctx, none).unwrap().0;
                model.groups_mut()[gi].values_mut()[i] = v - h;
                let minus = phase_gradients(&model, phase, inputs, &ctx, none).unwrap().0;
                model.groups_mut()[gi].values_mut()[i] = v;
                *n = (plus - minus) / (2.0 * h);
            }
            let scale = norm(&analytic[gi]).max(norm(&numeric));
            if scale < 1e-9 {
                continue;
            }
            let diff: Vec<f64> = analytic[gi].iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let rel = norm(&diff) / scale;
            worst = worst.max(rel);
            ensure(rel <= 1e-4, format!("{phase} w.r.t. {name}: relative error {rel:.3e}"))?;
        }
    }
    Ok(format!("worst relative error {worst:.2e} (limit 1e-4)"))
}

// 3. Gradient routing.

fn snapshot(model: &Model) -> [Vec<u64>; 3] {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect();
    [
        bits(model.encoder.params().values()),
        bits(model.decoder.params().values()),
        bits(model.discriminator.params().values()),
    ]
}

#[derive(Default)]
struct RoutingAudit {
    before: Option<[Vec<u64>; 3]>,
    checks: usize,
    violations: usize,
}

impl PhaseObserver for RoutingAudit {
    fn before(&mut self, _phase: Phase, model: &Model) {
        self.before = Some(snapshot(model));
    }

    fn after(&mut self, phase: Phase, model: &Model) {
        let before = self.before.take().unwrap();
        let after = snapshot(model);
        let t = phase.targets();
        for (g, targeted) in [t.encoder, t.decoder, t.discriminator].into_iter().enumerate() {
            if !targeted {
                self.checks += 1;
                self.violations += usize::from(before[g] != after[g]);
            }
        }
    }
}

fn routing() -> Check {
    let mut model = Model::new(ModelConfig {
        input_side: 16,
        latent_length: 4,
        num_classes: 3,
        widths: vec![4, 8],
        seed: 8,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut opts = Optimizers::new(&model, OptimizerSpec::default());
    let ctx = LossContext::unweighted(3);
    let mut prior_rng = ChaCha8Rng::seed_from_u64(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut audit = RoutingAudit::default();
    for _ in 0..100 {
        let n = rng.random_range(1..9);
        let mut images = FeatureMap::zeros(n, 3, 16, 16);
        images.data.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        train_batch_observed(&mut model, &images, &labels, &mut opts, &ctx, &mut prior_rng, &mut audit)
            .map_err(|e| e.to_string())?;
    }
    ensure(audit.violations == 0, format!("{} routing violations", audit.violations))?;
    Ok(format!("{} untargeted group checks over 100 batches, 0 violations", audit.checks))
}

// 6. Class weights on the reference counts.

fn class_weights() -> Check {
    let counts = [1438usize, 4345, 2426];
    // Balanced: w_i = C * prod_{j != i} n_j / sum_k prod_{j != k} n_j, in exact integers.
    let prod_except = |i: usize| -> u128 {
        counts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &n)| n as u128).product()
    };
    let denom: u128 = (0..3).map(prod_except).sum();
    let balanced_oracle: Vec<f64> = (0..3).map(|i| 3.0 * prod_except(i) as f64 / denom as f64).collect();
    // Inverse square root: w_i = C / sum_j sqrt(n_i / n_j).
    let sqrt_oracle: Vec<f64> = (0..3)
        .map(|i| 3.0 / (0..3).map(|j| (counts[i] as f64 / counts[j] as f64).sqrt()).sum::<f64>())
        .collect();
    let balanced = class_weights_from_counts(&counts, WeightScheme::Balanced).unwrap();
    let sqrt = class_weights_from_counts(&counts, WeightScheme::InverseSqrt).unwrap();
    for i in 0..3 {
        close("balanced", balanced.weights[i], balanced_oracle[i], 1e-9)?;
        close("inverse-sqrt", sqrt.weights[i], sqrt_oracle[i], 1e-9)?;
    }
    let ratio: Vec<String> = ratio_from_counts(&counts).unwrap().iter().map(|r| format!("{r:.2}")).collect();
    ensure(ratio == ["1.00", "3.02", "1.69"], format!("ratio {ratio:?}"))?;
    Ok(format!(
        "balanced {:.6?}, inverse-sqrt {:.6?}, ratio 1:{}:{}",
        balanced.weights, sqrt.weights, ratio[1], ratio[2]
    ))
}

// 7. Fold properties.

fn fold_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = Vec::new();
    for trial in 0..1000 {
        let k = rng.random_range(2..=7);
        let classes = rng.random_range(2..=5);
        let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(k..k + 60)).collect();
        let mut records = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                records.push(ImageRecord { id: format!("r{label}_{i}"), path: "x.png".into(), label, fold: None });
            }
        }
        records.shuffle(&mut rng);
        let manifest = DatasetManifest::new(records, classes, ".").unwrap();
        let seed = rng.random();
        let folds = stratified_kfold(&manifest, k, seed).unwrap();

        let mut seen = BTreeSet::new();
        let mut disjoint = true;
        for f in 0..k {
            for i in folds.held_out(&manifest, f) {
                disjoint &= seen.insert(i);
            }
        }
        if !disjoint {
            violations.push(format!("trial {trial}: overlapping folds"));
        }
        if seen.len() != manifest.len() {
            violations.push(format!("trial {trial}: {} of {} records covered", seen.len(), manifest.len()));
        }
        for class in 0..classes {
            let sizes: Vec<usize> = (0..k)
                .map(|f| folds.held_out(&manifest, f).iter().filter(|&&i| manifest.records[i].label == class).count())
                .collect();
            if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
                violations.push(format!("trial {trial}: class {class} sizes {sizes:?}"));
            }
        }
        if stratified_kfold(&manifest, k, seed).unwrap() != folds {
            violations.push(format!("trial {trial}: not deterministic"));
        }
    }
    ensure(violations.is_empty(), format!("{} violations, first: {}", violations.len(), violations.first().cloned().unwrap_or_default()))?;
    Ok("1000 trials, 0 violations".into())
}

// 8. Segmentation sanity on disks with known geometry.

fn segmentation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let side = 64usize;
    let mut good = 0;
    let mut worst = 1.0f64;
    for _ in 0..100 {
        let radius = rng.random_range(0.18..0.32) * side as f64;
        let cy = side as f64 / 2.0 + rng.random_range(-0.1..0.1) * side as f64;
        let cx = side as f64 / 2.0 + rng.random_range(-0.1..0.1) * side as f64;
        let fg = rng.random_range(0.55f64..0.9);
        let bg = rng.random_range(0.05f64..0.3);
        let noise = 0.04f64;
        let inside = |r: usize, c: usize| {
            let (y, x) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            (y * y + x * x).sqrt() <= radius
        };
        let image = ImageTensor::from_fn(side, side, |r, c| {
            let base = if inside(r, c) { fg } else { bg };
            let v = (base + rng.random_range(-noise..noise)).clamp(0.0, 1.0);
            [v, v * 0.8, v * 0.7]
        });
        let roi = segment_roi(&image, 300, 1e-4).map_err(|e| e.to_string())?;
        let (mut total, mut covered) = (0usize, 0usize);
        for r in 0..side {
            for c in 0..side {
                if inside(r, c) {
                    total += 1;
                    covered += usize::from(roi.bbox.contains(r, c));
                }
            }
        }
        let frac = covered as f64 / total as f64;
        worst = worst.min(frac);
        good += usize::from(frac >= 0.99);
    }
    ensure(good >= 95, format!("{good}/100 boxes contain at least 99% of the disk"))?;
    for level in [0.0, 0.2, 0.5, 0.73, 1.0] {
        let flat = ImageTensor::filled(side, side, [level; 3]);
        let roi = segment_roi(&flat, 300, 1e-4).map_err(|e| e.to_string())?;
        ensure(roi.fallback_used, format!("constant {level} image did not fall back"))?;
    }
    Ok(format!("{good}/100 disks covered at >= 99% (worst {worst:.3}); constant images fall back"))
}

// 4, 5 and 9: CLI runs on the synthetic dataset.

fn aae(workspace: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_aae"))
        .args(args)
        .env("AAE_WORKSPACE", workspace)
        .env("RUST_LOG", "warn")
        .current_dir(workspace)
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), format!("aae {} exited with {status}", args.join(" ")))
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    serde_json::from_str(&read(path)?).map_err(|e| e.to_string())
}

/// Per-epoch mean of the L2 column.
fn l2_per_epoch(losses_csv: &str) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for line in losses_csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let epoch: usize = f[0].parse().unwrap();
        if sums.len() < epoch {
            sums.resize(epoch, (0.0, 0));
        }
        sums[epoch - 1].0 += f[3].parse::<f64>().unwrap();
        sums[epoch - 1].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

fn equilibrium(ws: &Path) -> Check {
    let history = l2_per_epoch(&read(&ws.join("proposed/losses.csv"))?);
    let window = history.len().div_ceil(4).max(1);
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let reference = 2.0 * 2f64.ln();
    let reported = json(&ws.join("proposed/equilibrium.json"))?;
    close("equilibrium.json mean", reported["mean"].as_f64().unwrap_or(f64::NAN), mean, 1e-5)?;
    close("discriminator loss", mean, reference, 0.15)?;
    Ok(format!(
        "mean L2 over the last {window} of {} epochs = {mean:.4} (2 ln 2 = {reference:.4}, |diff| {:.4})",
        history.len(),
        (mean - reference).abs()
    ))
}

fn end_to_end(ws: &Path) -> Check {
    let proposed = json(&ws.join("proposed/metrics_validation.json"))?;
    let baseline = json(&ws.join("baseline/metrics_validation.json"))?;
    let epochs = read(&ws.join("proposed/val_metrics.csv"))?.lines().count() - 1;
    let best_logged = read(&ws.join("proposed/val_metrics.csv"))?
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(0.0f64, f64::max);
    let p_run = json(&ws.join("proposed/run.json"))?;
    let b_run = json(&ws.join("baseline/run.json"))?;
    ensure(
        p_run["fold"] == b_run["fold"]
            && p_run["validation_records"] == b_run["validation_records"]
            && p_run["config"]["data"] == b_run["config"]["data"]
            && p_run["seeds"]["train"] == b_run["seeds"]["train"],
        "baseline and proposed runs used different folds or data",
    )?;
    let table = read(&ws.join("report/comparison.csv"))?;
    ensure(
        table.starts_with("run,method,Accuracy,Average Precision,Average Recall\n") && table.lines().count() == 3,
        format!("unexpected comparison table:\n{table}"),
    )?;
    for line in table.lines() {
        println!("    {line}");
    }
    let acc = proposed["accuracy"].as_f64().unwrap_or(0.0);
    close("best checkpoint vs logged best", acc, best_logged, 1e-6)?;
    ensure(epochs <= 50, format!("{epochs} epochs"))?;
    ensure(acc >= 0.90, format!("proposed validation accuracy {acc} < 0.90"))?;
    Ok(format!(
        "proposed {acc:.4} within {epochs} epochs; baseline {:.4} on the same fold",
        baseline["accuracy"].as_f64().unwrap_or(f64::NAN)
    ))
}

fn reproducibility(ws: &Path, manifest: &str) -> Check {
    aae(ws, &["train", "--manifest", manifest, "--out", "proposed_again"])?;
    let a = fs::read(ws.join("proposed/losses.csv")).map_err(|e| e.to_string())?;
    let b = fs::read(ws.join("proposed_again/losses.csv")).map_err(|e| e.to_string())?;
    ensure(a == b, "losses.csv differs between identical invocations")?;
    Ok(format!("identical losses.csv ({} bytes, {} rows)", a.len(), a.iter().filter(|&&c| c == b'\n').count() - 1))
}

struct Outcome {
    id: u8,
    name: &'static str,
    result: Check,
    seconds: f64,
}

fn run(id: u8, name: &'static str, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let outcome = Outcome { id, name, result, seconds: start.elapsed().as_secs_f64() };
    print_line(&outcome);
    outcome
}

fn print_line(o: &Outcome) {
    let (tag, detail) = match &o.result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {} [{tag}] {} ({:.1}s): {detail}", o.id, o.name, o.seconds);
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        run(1, "loss analytics", loss_analytics),
        run(2, "gradient correctness", gradient_check),
        run(3, "gradient routing", routing),
        run(6, "class-weight formulas", class_weights),
        run(7, "fold properties", fold_properties),
        run(8, "segmentation sanity", segmentation),
    ];

    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path();
    let manifest = ws.join("data/manifest.csv").display().to_string();
    let setup_start = Instant::now();
    let setup = aae(ws, &["gen-data", "--count", "1000", "--seed", "42", "--out", "data"])
        .and_then(|_| aae(ws, &["train", "--manifest", &manifest, "--out", "proposed"]))
        .and_then(|_| aae(ws, &["train", "--baseline", "--manifest", &manifest, "--out", "baseline"]))
        .and_then(|_| aae(ws, &["report", "proposed", "baseline", "--out", "report"]));
    println!("shared synthetic runs took {:.1}s", setup_start.elapsed().as_secs_f64());
    let shared = |f: &dyn Fn() -> Check| match &setup {
        Ok(()) => f(),
        Err(e) => Err(format!("shared run failed: {e}")),
    };
    outcomes.push(run(4, "discriminator equilibrium", || shared(&|| equilibrium(ws))));
    outcomes.push(run(5, "end-to-end learning", || shared(&|| end_to_end(ws))));
    outcomes.push(run(9, "reproducibility", || shared(&|| reproducibility(ws, &manifest))));

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &outcomes {
        print_line(o);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| o.result.is_err()).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
