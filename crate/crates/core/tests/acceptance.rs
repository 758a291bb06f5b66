//! Acceptance suite: one test per release criterion, each printing a single
//! `criterion N (...): pass` line (visible with `--nocapture`). Oracles here
//! are written independently of the library code they check.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

use bytenet_core::augment::{apply_policy, norm_stats, AugmentPolicy, RealImage};
use bytenet_core::byte2image::{bit_window_matrix, emit_pgm, sector_to_image, NGramImage};
use bytenet_core::corpus::{
    derive_rng, generate_sector, generate_synthetic, load_dataset, save_dataset, GeneratorKind,
    Sector, SectorDataset, Split, SynthSpec,
};
use bytenet_core::model::{
    bytes_to_tensor, count_params_and_macs, images_to_tensor, load_checkpoint, save_checkpoint,
    BranchMode, ByteNetModel, CheckpointData, ModelConfig, Preset, Variant,
};
use bytenet_core::tensor::{batch_norm, group_norm, Tensor};
use bytenet_core::trainer::{lr_at, train, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} — {detail}",
        if ok { "pass" } else { "fail" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

/// CPU time of the calling thread in seconds, immune to wall-clock
/// contention from other processes.
fn thread_cpu_s() -> f64 {
    let stat = std::fs::read_to_string("/proc/thread-self/stat").unwrap();
    let after = stat.rsplit(')').next().unwrap();
    let f: Vec<&str> = after.split_whitespace().collect();
    let ticks: u64 = f[11].parse::<u64>().unwrap() + f[12].parse::<u64>().unwrap();
    ticks as f64 / 100.0
}

// ---------------------------------------------------------------------------
// criterion 1: bit-window matrix equals a naive bit-string-slicing oracle

/// Independent oracle: index straight into the conceptual zero-padded bit
/// string, one bit at a time.
fn oracle_window(sector: &[u8], bit_offset: usize) -> u8 {
    let mut v = 0u8;
    for t in 0..8 {
        let idx = bit_offset + t;
        let bit = if idx / 8 < sector.len() {
            (sector[idx / 8] >> (7 - idx % 8)) & 1
        } else {
            0
        };
        v = (v << 1) | bit;
    }
    v
}

#[test]
fn criterion_01_byte2image_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = derive_rng(0xacc1, &[]);
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let sector: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        let m = bit_window_matrix(&sector).unwrap();
        for j in 0..512 {
            for i in 0..8 {
                if m.get(j, i) != oracle_window(&sector, 8 * j + i) {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "byte2image oracle equivalence",
        mismatches == 0 && secs < 10.0,
        &format!("1000 sectors, {mismatches} mismatches, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: n-gram duplication invariant and exact image shapes

#[test]
fn criterion_02_ngram_duplication_invariant() {
    let mut rng = derive_rng(0xacc2, &[]);
    let mut violations = 0usize;
    let mut bad_shapes = 0usize;
    for _ in 0..100 {
        let sector: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        for n in [2usize, 4, 8, 16] {
            let img = sector_to_image(&sector, n).unwrap();
            if (img.height, img.width) != (512 - n + 1, 8 * n) {
                bad_shapes += 1;
            }
            for h in 0..img.height {
                for k in 0..n {
                    if h + k >= img.height {
                        continue;
                    }
                    for c in 0..8 {
                        if img.get(h, 8 * k + c, 0) != img.get(h + k, c, 0) {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    let img16 = sector_to_image(&vec![0xa5u8; 512], 16).unwrap();
    let shape_497x128 = (img16.height, img16.width) == (497, 128);
    report(
        2,
        "n-gram duplication invariant",
        violations == 0 && bad_shapes == 0 && shape_497x128,
        &format!(
            "100 sectors x n in {{2,4,8,16}}: {violations} violations, {bad_shapes} bad shapes, n=16 gives 497x128: {shape_497x128}"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 3: per-op and end-to-end gradient checks vs central differences

const PER_OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;
const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn randt(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Bounded away from zero so kinked ops (relu, max) see no crossings.
fn randt_offset(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.2..1.0)
        })
        .collect();
    Tensor::param(shape, data)
}

fn weights(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Max relative error of analytic vs central-difference gradients over every
/// element of every input.
fn max_grad_err(inputs: &[&Tensor<f64>], f: &dyn Fn() -> Tensor<f64>) -> f64 {
    for t in inputs {
        t.zero_grad();
    }
    f().backward().unwrap();
    let grads: Vec<Vec<f64>> = inputs.iter().map(|t| t.grad().unwrap()).collect();
    let mut worst = 0.0f64;
    for (t, g) in inputs.iter().zip(&grads) {
        for i in 0..t.len() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + H;
            let up = f().item();
            t.data_mut()[i] = orig - H;
            let down = f().item();
            t.data_mut()[i] = orig;
            worst = worst.max(rel_err(g[i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

fn tiny_config(variant: Variant, classes: usize) -> ModelConfig {
    ModelConfig {
        variant,
        preset: Preset::Mini,
        sector_size: 512,
        ngram_n: 4,
        num_classes: classes,
        shallow_dim: 8,
        stage_depths: [1, 1, 1, 1],
        stage_channels: [4, 4, 8, 8],
        embed_dim: 4,
        patch_size: 8,
        mlp_ratio: 2,
        ngram_embed_k: 4,
        pool_subtract_input: false,
    }
}

/// Worst relative error over 20 random parameter elements of a full
/// forward+backward in f64.
fn e2e_grad_err(variant: Variant, seed: u64) -> f64 {
    let cfg = tiny_config(variant, 3);
    let model = ByteNetModel::<f64>::new(&cfg, seed).unwrap();
    let mut rng = derive_rng(seed, &[0xe2e]);
    let sectors: Vec<Vec<u8>> = (0..2).map(|_| (0..512).map(|_| rng.gen()).collect()).collect();
    let refs: Vec<&[u8]> = sectors.iter().map(|s| s.as_slice()).collect();
    let (h, w, c) = cfg.image_dims();
    let images: Vec<RealImage> = (0..2)
        .map(|_| RealImage {
            pixels: (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0f32)).collect(),
            height: h,
            width: w,
            channels: c,
        })
        .collect();
    let mut targets = vec![0.0f64; 2 * 3];
    for row in targets.chunks_mut(3) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(0.1..1.0);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let bytes = bytes_to_tensor::<f64>(&refs);
    let imgs = images_to_tensor::<f64>(&images);
    let loss_fn = || {
        model
            .forward(&bytes, &imgs, true, BranchMode::Both)
            .unwrap()
            .nll_loss(&targets)
            .unwrap()
    };
    let params = model.parameters();
    // the fusion head is zero-initialized; randomize it so gradients reach
    // the backbone and the check is non-degenerate
    for (name, p) in &params {
        if name.starts_with("fusion") {
            for v in p.data_mut().iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    model.zero_grads();
    loss_fn().backward().unwrap();
    let grads: Vec<Option<Vec<f64>>> = params.iter().map(|(_, p)| p.grad()).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 20 {
        let pi = rng.gen_range(0..params.len());
        let (_, p) = &params[pi];
        let Some(g) = &grads[pi] else { continue };
        let i = rng.gen_range(0..p.len());
        let orig = p.data()[i];
        p.data_mut()[i] = orig + H;
        let up = loss_fn().item();
        p.data_mut()[i] = orig - H;
        let down = loss_fn().item();
        p.data_mut()[i] = orig;
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * H)));
        checked += 1;
    }
    worst
}

#[test]
fn criterion_03_gradient_checks() {
    let start = Instant::now();
    let mut rng = derive_rng(0xacc3, &[]);
    let mut per_op = 0.0f64;

    let a = randt(&[3, 4], &mut rng);
    let b = randt(&[3, 4], &mut rng);
    let w = Tensor::from_vec(&[3, 4], weights(12, &mut rng));
    per_op = per_op.max(max_grad_err(&[&a, &b], &|| a.add(&b).unwrap().mul(&w).unwrap().sum()));
    per_op = per_op.max(max_grad_err(&[&a, &b], &|| a.mul(&b).unwrap().mul(&w).unwrap().sum()));
    per_op = per_op.max(max_grad_err(&[&a], &|| a.mul_scalar(1.7).mul(&w).unwrap().sum()));

    let bias = randt(&[4], &mut rng);
    per_op = per_op.max(max_grad_err(&[&a, &bias], &|| {
        a.add_row_bias(&bias).unwrap().mul(&w).unwrap().sum()
    }));

    let x = randt_offset(&[4, 6], &mut rng);
    let wx = Tensor::from_vec(&[4, 6], weights(24, &mut rng));
    per_op = per_op.max(max_grad_err(&[&x], &|| x.relu().mul(&wx).unwrap().sum()));
    per_op = per_op.max(max_grad_err(&[&x], &|| x.gelu().mul(&wx).unwrap().sum()));

    let ma = randt(&[3, 5], &mut rng);
    let mb = randt(&[5, 2], &mut rng);
    let wm = Tensor::from_vec(&[3, 2], weights(6, &mut rng));
    per_op = per_op.max(max_grad_err(&[&ma, &mb], &|| {
        ma.matmul(&mb).unwrap().mul(&wm).unwrap().sum()
    }));

    let s = randt(&[2, 3, 4], &mut rng);
    let ws = Tensor::from_vec(&[24], weights(24, &mut rng));
    per_op = per_op.max(max_grad_err(&[&s], &|| {
        s.reshape(&[24]).unwrap().mul(&ws).unwrap().sum()
    }));
    let wp = Tensor::from_vec(&[4, 2, 3], weights(24, &mut rng));
    per_op = per_op.max(max_grad_err(&[&s], &|| {
        s.permute(&[2, 0, 1]).unwrap().mul(&wp).unwrap().sum()
    }));
    let wt = Tensor::from_vec(&[5, 3], weights(15, &mut rng));
    per_op = per_op.max(max_grad_err(&[&ma], &|| {
        ma.transpose().unwrap().mul(&wt).unwrap().sum()
    }));
    let cb = randt(&[3, 2], &mut rng);
    let wc = Tensor::from_vec(&[3, 7], weights(21, &mut rng));
    per_op = per_op.max(max_grad_err(&[&ma, &cb], &|| {
        Tensor::concat(&[ma.clone(), cb.clone()], 1).unwrap().mul(&wc).unwrap().sum()
    }));

    let cx = randt(&[2, 3, 5, 6], &mut rng);
    let ck = randt(&[4, 3, 3, 3], &mut rng);
    let cbias = randt(&[4], &mut rng);
    let out = cx.conv2d(&ck, Some(&cbias), 2, 1).unwrap();
    let wconv = Tensor::from_vec(out.shape(), weights(out.len(), &mut rng));
    per_op = per_op.max(max_grad_err(&[&cx, &ck, &cbias], &|| {
        cx.conv2d(&ck, Some(&cbias), 2, 1).unwrap().mul(&wconv).unwrap().sum()
    }));
    let pout = cx.pad_bottom_right(2, 1).unwrap();
    let wpad = Tensor::from_vec(pout.shape(), weights(pout.len(), &mut rng));
    per_op = per_op.max(max_grad_err(&[&cx], &|| {
        cx.pad_bottom_right(2, 1).unwrap().mul(&wpad).unwrap().sum()
    }));

    let px = randt(&[2, 2, 6, 6], &mut rng);
    let aout = px.avg_pool2d(3, 2, 1).unwrap();
    let wavg = Tensor::from_vec(aout.shape(), weights(aout.len(), &mut rng));
    per_op = per_op.max(max_grad_err(&[&px], &|| {
        px.avg_pool2d(3, 2, 1).unwrap().mul(&wavg).unwrap().sum()
    }));
    let mx = randt(&[2, 2, 6, 6], &mut rng);
    let mout = mx.max_pool2d(3, 2, 1).unwrap();
    let wmax = Tensor::from_vec(mout.shape(), weights(mout.len(), &mut rng));
    per_op = per_op.max(max_grad_err(&[&mx], &|| {
        mx.max_pool2d(3, 2, 1).unwrap().mul(&wmax).unwrap().sum()
    }));
    let gx = randt(&[2, 3, 4, 5], &mut rng);
    let wgap = Tensor::from_vec(&[2, 3], weights(6, &mut rng));
    per_op = per_op.max(max_grad_err(&[&gx], &|| {
        gx.global_avg_pool().unwrap().mul(&wgap).unwrap().sum()
    }));

    let nx = randt(&[3, 2, 4, 4], &mut rng);
    let gamma = randt(&[2], &mut rng);
    let beta = randt(&[2], &mut rng);
    let wn = Tensor::from_vec(&[3, 2, 4, 4], weights(96, &mut rng));
    let mean = Rc::new(RefCell::new(vec![0.0f64; 2]));
    let var = Rc::new(RefCell::new(vec![1.0f64; 2]));
    per_op = per_op.max(max_grad_err(&[&nx, &gamma, &beta], &|| {
        batch_norm(&nx, &gamma, &beta, &mean, &var, 0.1, 1e-5, true)
            .unwrap()
            .mul(&wn)
            .unwrap()
            .sum()
    }));
    let gnx = randt(&[2, 4, 3, 3], &mut rng);
    let g2 = randt(&[4], &mut rng);
    let b2 = randt(&[4], &mut rng);
    let wgn = Tensor::from_vec(&[2, 4, 3, 3], weights(72, &mut rng));
    per_op = per_op.max(max_grad_err(&[&gnx, &g2, &b2], &|| {
        group_norm(&gnx, 2, &g2, &b2, 1e-5).unwrap().mul(&wgn).unwrap().sum()
    }));

    let sx = randt(&[3, 5], &mut rng);
    let wsm = Tensor::from_vec(&[3, 5], weights(15, &mut rng));
    per_op = per_op.max(max_grad_err(&[&sx], &|| {
        sx.softmax_rows().unwrap().mul(&wsm).unwrap().sum()
    }));
    per_op = per_op.max(max_grad_err(&[&sx], &|| {
        sx.log_softmax_rows().unwrap().mul(&wsm).unwrap().sum()
    }));
    let mut targets = vec![0.0f64; 15];
    for row in targets.chunks_mut(5) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(0.1..1.0);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    per_op = per_op.max(max_grad_err(&[&sx], &|| {
        sx.log_softmax_rows().unwrap().nll_loss(&targets).unwrap()
    }));

    let e2e = e2e_grad_err(Variant::ByteResnet, 21).max(e2e_grad_err(Variant::ByteFormer, 22));
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "gradient checks",
        per_op < PER_OP_TOL && e2e < E2E_TOL && secs < 120.0,
        &format!("per-op max rel err {per_op:.2e}, end-to-end max rel err {e2e:.2e}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// criterion 4: parameter budgets and stage shape chains

#[test]
fn criterion_04_architecture_audit() {
    let former = count_params_and_macs(&ModelConfig::preset(Variant::ByteFormer, Preset::Paper512, 75));
    let resnet = count_params_and_macs(&ModelConfig::preset(Variant::ByteResnet, Preset::Paper512, 75));
    let former_dev = former.param_count as f64 / 30.35e6 - 1.0;
    let resnet_dev = resnet.param_count as f64 / 11.25e6 - 1.0;

    let former4096 =
        count_params_and_macs(&ModelConfig::preset(Variant::ByteFormer, Preset::Paper4096, 75));
    let resnet4096 =
        count_params_and_macs(&ModelConfig::preset(Variant::ByteResnet, Preset::Paper4096, 75));
    let mini_f = count_params_and_macs(&ModelConfig::preset(Variant::ByteFormer, Preset::Mini, 4));
    let mini_r = count_params_and_macs(&ModelConfig::preset(Variant::ByteResnet, Preset::Mini, 4));
    let chains_ok = former.shape_chain == vec![(63, 16), (32, 8), (16, 4), (8, 2), (8, 2)]
        && resnet.shape_chain == vec![(125, 24), (125, 24), (63, 12), (32, 6), (16, 3)]
        // 4,096-byte sectors widen channels, not the spatial map
        && former4096.shape_chain == former.shape_chain
        && resnet4096.shape_chain == resnet.shape_chain
        && mini_f.shape_chain == vec![(64, 8), (32, 4), (16, 2), (8, 1), (8, 1)]
        && mini_r.shape_chain == vec![(127, 8), (127, 8), (64, 4), (32, 2), (16, 1)];
    report(
        4,
        "architecture audit",
        former_dev.abs() < 0.05 && resnet_dev.abs() < 0.05 && chains_ok,
        &format!(
            "params {} ({:+.1}% of 30.35M) / {} ({:+.1}% of 11.25M), shape chains exact: {chains_ok}",
            former.param_count,
            former_dev * 100.0,
            resnet.param_count,
            resnet_dev * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 5: initial loss near ln T on label-independent data

/// Mean initial loss of an untrained model on balanced classes whose content
/// is identically distributed (uniform random bytes), so no class is
/// separable and the ideal prediction is uniform.
fn initial_loss(variant: Variant, t: usize) -> f64 {
    let cfg = ModelConfig::preset(variant, Preset::Mini, t);
    let model = ByteNetModel::<f32>::new(&cfg, 31).unwrap();
    let mut rng = derive_rng(0xacc5, &[t as u64]);
    let batch = 2 * t;
    let sectors: Vec<Vec<u8>> = (0..batch).map(|_| (0..512).map(|_| rng.gen()).collect()).collect();
    let refs: Vec<&[u8]> = sectors.iter().map(|s| s.as_slice()).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % t).collect();
    let images: Vec<_> = refs.iter().map(|s| sector_to_image(s, cfg.ngram_n).unwrap()).collect();
    let (norm_mean, norm_std) = norm_stats(&images).unwrap();
    let policy = AugmentPolicy { norm_mean, norm_std, ..AugmentPolicy::default() };
    let samples = apply_policy(&images, &labels, t, &policy, false, &mut rng).unwrap();
    let mut targets = Vec::new();
    let imgs: Vec<RealImage> = samples
        .into_iter()
        .map(|s| {
            targets.extend_from_slice(&s.soft_label);
            s.image
        })
        .collect();
    let out = model
        .forward(&bytes_to_tensor(&refs), &images_to_tensor(&imgs), false, BranchMode::Both)
        .unwrap();
    out.nll_loss(&targets).unwrap().item() as f64
}

#[test]
fn criterion_05_initial_loss_near_ln_t() {
    let mut ok = true;
    let mut detail = String::new();
    for t in [4usize, 16] {
        for variant in [Variant::ByteResnet, Variant::ByteFormer] {
            let loss = initial_loss(variant, t);
            let expected = (t as f64).ln();
            let dev = (loss - expected) / expected;
            ok &= dev.abs() <= 0.10;
            detail.push_str(&format!("{variant:?} T={t}: {loss:.3} vs ln T {expected:.3} ({dev:+.1}%); ", dev = dev * 100.0));
        }
    }
    report(5, "initial loss near ln T", ok, detail.trim_end_matches("; "));
}

// ---------------------------------------------------------------------------
// criterion 6: desk-scale end-to-end training to >= 95% test accuracy

fn synth_corpus(per_class: usize, seed: u64, split: Split) -> SectorDataset {
    let mut ds = generate_synthetic(&SynthSpec {
        classes: vec![
            GeneratorKind::VlcStream,
            GeneratorKind::AsciiText,
            GeneratorKind::Periodic,
            GeneratorKind::ZeroRuns,
        ],
        per_class_count: per_class,
        sector_size: 512,
        seed,
    })
    .unwrap();
    ds.split = split;
    ds
}

#[test]
fn criterion_06_desk_scale_end_to_end() {
    let train_ds = synth_corpus(2000, 42, Split::Train);
    let test_ds = synth_corpus(250, 43, Split::Test);
    let mut ok = true;
    let mut detail = String::new();
    for variant in [Variant::ByteFormer, Variant::ByteResnet] {
        let cpu0 = thread_cpu_s();
        let cfg = TrainConfig {
            epochs: 10,
            warmup_epochs: 2,
            batch_size: 32,
            eval_every: 10,
            seed: 7,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(
            &ModelConfig::preset(variant, Preset::Mini, 4),
            &cfg,
            &AugmentPolicy::default(),
            &train_ds,
            Some(&test_ds),
            dir.path(),
            None,
            None,
        )
        .unwrap();
        let acc = outcome.final_val_acc.unwrap();
        let mins = (thread_cpu_s() - cpu0) / 60.0;
        ok &= acc >= 0.95 && mins < 20.0;
        detail.push_str(&format!("{variant:?}: test acc {:.1}% in {mins:.1} cpu-min; ", acc * 100.0));
    }
    report(6, "desk-scale end-to-end", ok, detail.trim_end_matches("; "));
}

// ---------------------------------------------------------------------------
// criterion 7: full model beats byte-branch-only on bit-structure data

/// Two classes with identical byte histograms: packed variable-length-coded
/// streams, and the same streams with bytes shuffled (destroying the bit
/// patterns that cross byte boundaries).
fn vlc_pair_corpus(per_class: usize, seed: u64, split: Split) -> SectorDataset {
    let mut records = Vec::with_capacity(2 * per_class);
    for i in 0..per_class {
        let mut rng = derive_rng(seed, &[0, i as u64]);
        records.push(Sector {
            bytes: generate_sector(GeneratorKind::VlcStream, 512, &mut rng),
            label: 0,
        });
    }
    for i in 0..per_class {
        let mut rng = derive_rng(seed, &[1, i as u64]);
        let mut bytes = generate_sector(GeneratorKind::VlcStream, 512, &mut rng);
        bytes.shuffle(&mut rng);
        records.push(Sector { bytes, label: 1 });
    }
    let mut ds = SectorDataset::new(
        512,
        vec!["vlc_stream".into(), "vlc_shuffled".into()],
        records,
        split,
    )
    .unwrap();
    ds.split = split;
    ds
}

#[test]
fn criterion_07_intrabyte_benefit() {
    let train_ds = vlc_pair_corpus(400, 17, Split::Train);
    let test_ds = vlc_pair_corpus(100, 18, Split::Test);
    let model_cfg = ModelConfig::preset(Variant::ByteResnet, Preset::Mini, 2);
    let run = |branch: BranchMode| {
        let cfg = TrainConfig {
            epochs: 8,
            warmup_epochs: 1,
            batch_size: 32,
            eval_every: 8,
            seed: 19,
            branch,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        train(
            &model_cfg,
            &cfg,
            &AugmentPolicy::default(),
            &train_ds,
            Some(&test_ds),
            dir.path(),
            None,
            None,
        )
        .unwrap()
        .final_val_acc
        .unwrap()
    };
    let full = run(BranchMode::Both);
    let byte_only = run(BranchMode::ByteOnly);
    report(
        7,
        "intrabyte benefit",
        full - byte_only >= 0.10,
        &format!(
            "full model {:.1}% vs byte branch only {:.1}% ({:+.1}pp)",
            full * 100.0,
            byte_only * 100.0,
            (full - byte_only) * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: identical seeds give bit-identical runs

#[test]
fn criterion_08_determinism() {
    let ds = synth_corpus(30, 5, Split::Train);
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        batch_size: 8,
        seed: 23,
        ..TrainConfig::default()
    };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        train(
            &tiny_config(Variant::ByteResnet, 4),
            &cfg,
            &AugmentPolicy::default(),
            &ds,
            None,
            dir.path(),
            None,
            None,
        )
        .unwrap();
        (
            std::fs::read(dir.path().join("metrics.jsonl")).unwrap(),
            std::fs::read(dir.path().join("best.bnck")).unwrap(),
            std::fs::read(dir.path().join("last.bnck")).unwrap(),
        )
    };
    let (m1, b1, l1) = run();
    let (m2, b2, l2) = run();
    report(
        8,
        "determinism",
        m1 == m2 && b1 == b2 && l1 == l2,
        &format!(
            "metrics identical: {}, best checkpoint identical: {}, last checkpoint identical: {}",
            m1 == m2,
            b1 == b2,
            l1 == l2
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 9: learning-rate schedule endpoints and continuity

#[test]
fn criterion_09_schedule_conformance() {
    let (start, peak) = (5e-7f64, 5e-4f64);
    let mut ok = true;
    for (warmup, total) in [(100usize, 1000usize), (500, 2500)] {
        ok &= lr_at(0, warmup, total, start, peak) == start;
        ok &= lr_at(warmup, warmup, total, start, peak) == peak;
        ok &= lr_at(total, warmup, total, start, peak) == 0.0;
        // continuity: one step across the boundary moves lr by < 1% of peak
        let after = lr_at(warmup + 1, warmup, total, start, peak);
        ok &= (after - peak).abs() < 0.01 * peak;
        let before = lr_at(warmup - 1, warmup, total, start, peak);
        ok &= (peak - before) < 0.02 * peak;
    }
    report(
        9,
        "schedule conformance",
        ok,
        "lr(0)=5e-7, lr(warmup)=5e-4, lr(total)=0 exact; continuous at the boundary",
    );
}

// ---------------------------------------------------------------------------
// criterion 10: byte-faithful container round-trips and exact PGM header

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();

    let mut ds = synth_corpus(5, 2, Split::Test);
    let mut tags = std::collections::BTreeMap::new();
    tags.insert("vlc_stream".to_string(), "coded".to_string());
    tags.insert("ascii_text".to_string(), "text".to_string());
    ds.group_tags = Some(tags);
    let sds_path = dir.path().join("ds.sds");
    save_dataset(&ds, &sds_path).unwrap();
    let bytes1 = std::fs::read(&sds_path).unwrap();
    let loaded = load_dataset(&sds_path).unwrap();
    let sds_struct_ok = loaded == ds;
    save_dataset(&loaded, &sds_path).unwrap();
    let sds_bytes_ok = std::fs::read(&sds_path).unwrap() == bytes1;

    let model_cfg = tiny_config(Variant::ByteFormer, 3);
    let model = ByteNetModel::<f32>::new(&model_cfg, 3).unwrap();
    let ck = CheckpointData {
        config: model_cfg,
        augment: AugmentPolicy::default(),
        class_names: vec!["a".into(), "b".into(), "c".into()],
        trainer_state: serde_json::json!({"step": 12, "completed_epochs": 1}),
        tensors: model.state_blobs(),
    };
    let ck_path = dir.path().join("m.bnck");
    save_checkpoint(&ck, &ck_path).unwrap();
    let ck_bytes1 = std::fs::read(&ck_path).unwrap();
    let ck_loaded = load_checkpoint(&ck_path).unwrap();
    let ck_struct_ok = ck_loaded == ck;
    save_checkpoint(&ck_loaded, &ck_path).unwrap();
    let ck_bytes_ok = std::fs::read(&ck_path).unwrap() == ck_bytes1;

    let img = NGramImage {
        pixels: vec![0, 255, 128, 64],
        height: 2,
        width: 2,
        channels: 1,
        n: 1,
    };
    let pgm_path = dir.path().join("img.pgm");
    emit_pgm(&img, &pgm_path).unwrap();
    let pgm_ok = std::fs::read(&pgm_path).unwrap() == b"P5\n2 2\n255\n\x00\xFF\x80\x40";

    report(
        10,
        "format round-trips",
        sds_struct_ok && sds_bytes_ok && ck_struct_ok && ck_bytes_ok && pgm_ok,
        &format!(
            "sds load equality {sds_struct_ok}, sds re-save identical {sds_bytes_ok}, checkpoint load equality {ck_struct_ok}, checkpoint re-save identical {ck_bytes_ok}, pgm bytes exact {pgm_ok}"
        ),
    );
}
