//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use warpstyle::adaptation::{color_align, run_adaptation, TrainConfig, Trainer};
use warpstyle::backends::{StubIdentity, StubPerceptual};
use warpstyle::generator::{style_mix, Deform, Generator, LatentCode, ReferencePair, LATENT_ROWS};
use warpstyle::imageops::synthetic_blob;
use warpstyle::objectives::{
    consistency_loss, directional_loss, pair_count, similarity_distribution, write_loss_csv, Domain,
};
use warpstyle::semantics::self_similarity_batch;
use warpstyle::toolkit::{alpha_sweep, evaluate, pair_metrics, Bundle};
use warpstyle::warp::{make_identity_field_like, smoothness_regularizer, smoothness_value, tps_warp, WarpField};

const DEV: Device = Device::Cpu;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
    Tensor::from_vec(v, shape, &DEV).unwrap()
}

fn vec1(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    vec1(a).iter().zip(vec1(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn blob_pair(device: &Device) -> (Tensor, Tensor) {
    let src = synthetic_blob(64, (0.0, 0.05), (0.45, 0.55), [0.7, 0.35, 0.2], [-0.7, -0.6, -0.5], device).unwrap();
    // warped copy: horizontal stretch plus a vertical squash via a TPS field
    let mut d = vec![0f32; 5 * 5 * 2];
    for i in 0..5 {
        for j in 0..5 {
            let u = j as f32 / 2.0 - 1.0;
            let v = i as f32 / 2.0 - 1.0;
            d[(i * 5 + j) * 2] = -0.25 * u * (1.0 - v * v);
            d[(i * 5 + j) * 2 + 1] = 0.15 * v;
        }
    }
    let field = WarpField::new(Tensor::from_vec(d, (1, 5, 5, 2), device).unwrap()).unwrap();
    let warped = tps_warp(&src, &field).unwrap();
    // recolor: channel swap and a brightness shift
    let r = warped.narrow(1, 0, 1).unwrap();
    let g = warped.narrow(1, 1, 1).unwrap();
    let b = warped.narrow(1, 2, 1).unwrap();
    let recolored = Tensor::cat(&[&b, &r, &g], 1).unwrap().affine(0.9, 0.15).unwrap().clamp(-1f32, 1f32).unwrap();
    (src, recolored)
}

fn quick_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.inversion.steps = 40;
    cfg.log_every = 50;
    cfg.checkpoint_every = 0;
    cfg
}

// 1 ---------------------------------------------------------------------

fn warp_identity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let x = randn(&mut rng, &[1, 4, 8, 8], 1.0).to_dtype(DType::F32).unwrap();
        let g = [4, 5, 8][k % 3];
        let field = make_identity_field_like(1, g, g, DType::F32, &DEV).unwrap();
        let y = tps_warp(&x, &field).unwrap();
        worst = worst.max(max_abs_diff(&x, &y));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && secs < 5.0, format!("max |Δ| {worst:.2e} (< 1e-5), {secs:.2} s (< 5 s)"))
}

// 2 ---------------------------------------------------------------------

fn smoothness_oracle(d: &[f64], gh: usize, gw: usize) -> f64 {
    let at = |i: usize, j: usize| [d[(i * gw + j) * 2], d[(i * gw + j) * 2 + 1]];
    let sim = |a: [f64; 2], b: [f64; 2]| {
        let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
        if na < 1e-12 || nb < 1e-12 {
            1.0
        } else {
            (a[0] * b[0] + a[1] * b[1]) / (na * nb)
        }
    };
    let mut total = 0.0;
    for i in 1..gh {
        for j in 1..gw {
            total += 2.0 - sim(at(i, j - 1), at(i, j)) - sim(at(i - 1, j), at(i, j));
        }
    }
    total
}

fn smoothness_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let g = 3 + k % 8;
        let d = randn(&mut rng, &[1, g, g, 2], 0.1);
        let ours = smoothness_value(&WarpField::new(d.clone()).unwrap()).unwrap();
        let oracle = smoothness_oracle(&vec1(&d), g, g);
        worst = worst.max((ours - oracle).abs() / oracle.abs().max(1e-300));
    }
    let mut uniform_max: f64 = 0.0;
    for k in 0..10 {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let g = 4 + k;
        let d = Tensor::from_vec(v.repeat(g * g), (1, g, g, 2), &DEV).unwrap();
        uniform_max = uniform_max.max(smoothness_value(&WarpField::new(d).unwrap()).unwrap().abs());
    }
    outcome(
        worst < 1e-6 && uniform_max == 0.0,
        format!("max rel err {worst:.2e} (< 1e-6) over 50 fields; uniform fields {uniform_max:e} (exactly 0)"),
    )
}

// 3 ---------------------------------------------------------------------

/// Worst relative error between the autograd gradient of `f` at `var` and
/// central differences with step `h` on the listed flat indices.
fn grad_check_step(var: &Var, indices: &[usize], h: f64, f: &dyn Fn() -> Tensor) -> f64 {
    let base = var.as_tensor().detach().copy().unwrap();
    let shape = base.dims().to_vec();
    let grads = f().backward().unwrap();
    let analytic = vec1(&grads.get(var.as_tensor()).expect("gradient recorded").flatten_all().unwrap());
    let mut worst: f64 = 0.0;
    for &i in indices {
        let mut v = vec1(&base);
        v[i] += h;
        var.set(&Tensor::from_vec(v.clone(), shape.as_slice(), &DEV).unwrap().to_dtype(base.dtype()).unwrap())
            .unwrap();
        let fp = scalar(&f());
        v[i] -= 2.0 * h;
        var.set(&Tensor::from_vec(v, shape.as_slice(), &DEV).unwrap().to_dtype(base.dtype()).unwrap()).unwrap();
        let fm = scalar(&f());
        var.set(&base).unwrap();
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-10);
        worst = worst.max(rel);
    }
    worst
}

fn grad_check(var: &Var, indices: &[usize], f: &dyn Fn() -> Tensor) -> f64 {
    grad_check_step(var, indices, 1e-3, f)
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut notes = Vec::new();
    let mut pass = true;

    // TPS warp w.r.t. control displacements: a uniform offset of 0.3 px plus
    // small noise keeps every bilinear sample away from pixel-grid kinks
    let x = randn(&mut rng, &[1, 3, 8, 8], 1.0);
    let weights = randn(&mut rng, &[1, 3, 8, 8], 1.0);
    let noise = vec1(&randn(&mut rng, &[1, 4, 4, 2], 0.01));
    let offset = 0.3 * 2.0 / 8.0;
    let d0: Vec<f64> = noise.iter().map(|v| v + offset).collect();
    let disp = Var::from_tensor(&Tensor::from_vec(d0, (1, 4, 4, 2), &DEV).unwrap()).unwrap();
    let e = grad_check(&disp, &(0..32).collect::<Vec<_>>(), &|| {
        let field = WarpField::new(disp.as_tensor().clone()).unwrap();
        (tps_warp(&x, &field).unwrap() * &weights).unwrap().sum_all().unwrap()
    });
    pass &= e < 1e-3;
    notes.push(format!("tps {e:.1e}"));

    let f = Var::from_tensor(&randn(&mut rng, &[1, 6, 6, 2], 0.2)).unwrap();
    let e = grad_check(&f, &(0..72).collect::<Vec<_>>(), &|| {
        smoothness_regularizer(&WarpField::new(f.as_tensor().clone()).unwrap()).unwrap()
    });
    pass &= e < 1e-3;
    notes.push(format!("smooth {e:.1e}"));

    let dw = Var::from_tensor(&randn(&mut rng, &[3, 10], 1.0)).unwrap();
    let dref = randn(&mut rng, &[10], 1.0);
    let e = grad_check(&dw, &(0..30).collect::<Vec<_>>(), &|| directional_loss(dw.as_tensor(), &dref).unwrap());
    pass &= e < 1e-3;
    notes.push(format!("direct {e:.1e}"));

    let ds = randn(&mut rng, &[4, 12], 1.0);
    let rs = randn(&mut rng, &[12], 1.0);
    let rt = randn(&mut rng, &[12], 1.0);
    let dt = Var::from_tensor(&randn(&mut rng, &[4, 12], 1.0)).unwrap();
    let e = grad_check(&dt, &(0..48).collect::<Vec<_>>(), &|| {
        let a = similarity_distribution(&ds, &rs, 1.0, Domain::Source).unwrap();
        let b = similarity_distribution(dt.as_tensor(), &rt, 1.0, Domain::Target).unwrap();
        (consistency_loss(&a, &b).unwrap() * 1e3).unwrap()
    });
    pass &= e < 1e-3;
    notes.push(format!("cons {e:.1e}"));

    // composed generator objective w.r.t. STN head weights, float64
    let cfg = TrainConfig::default();
    let g_s = Generator::load(&cfg.generator, DType::F64, &DEV).unwrap();
    let encoder = cfg.semantics.build(DType::F64, &DEV).unwrap();
    let (s, t) = blob_pair(&DEV);
    let refs = ReferencePair::new(
        s.to_dtype(DType::F64).unwrap(),
        t.to_dtype(DType::F64).unwrap(),
        g_s.sample_latent(21, 1.0).unwrap(),
        g_s.sample_latent(22, 1.0).unwrap(),
    )
    .unwrap();
    let trainer = Trainer::new(cfg, g_s, encoder, refs).unwrap();
    let store = trainer.target_generator().store();
    // generic evaluation point: TPS control displacements well away from zero
    let heads = [
        "synthesis.b32.transform.basic.fc1",
        "synthesis.b32.transform.tps.fc1",
        "synthesis.b64.transform.basic.fc1",
        "synthesis.b64.transform.tps.fc1",
    ];
    for head in heads {
        let bias_std = if head.contains("tps") { 0.1 } else { 0.02 };
        for (suffix, std) in [("weight", 0.002), ("bias", bias_std)] {
            let name = format!("{head}.{suffix}");
            let dims = store.get(&name).unwrap().dims().to_vec();
            store.set(&name, &randn(&mut rng, &dims, std)).unwrap();
        }
    }
    let mut worst: f64 = 0.0;
    // small-step agreement is reported alongside; it does not decide the outcome
    let mut worst_fine: f64 = 0.0;
    for head in heads {
        for suffix in ["weight", "bias"] {
            let name = format!("{head}.{suffix}");
            let var = store.var(&name).unwrap();
            let len = var.as_tensor().elem_count();
            let idx: Vec<usize> = (0..2).map(|_| rng.random_range(0..len)).collect();
            let objective = || trainer.generator_objective().unwrap().total;
            worst = worst.max(grad_check(var, &idx, &objective));
            worst_fine = worst_fine.max(grad_check_step(var, &idx, 1e-6, &objective));
        }
    }
    pass &= worst < 1e-2;
    notes.push(format!("pipeline {worst:.1e} (< 1e-2; {worst_fine:.1e} at step 1e-6)"));
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    outcome(pass, format!("{} (< 1e-3), {secs:.1} s (< 120 s)", notes.join(", ")))
}

// 4 ---------------------------------------------------------------------

fn directional_boundaries() -> Outcome {
    let u = Tensor::new(&[[0.3f64, -1.2, 2.0, 0.5]], &DEV).unwrap();
    let v = Tensor::new(&[[1.2f64, 0.3, 0.0, 0.0]], &DEV).unwrap();
    let loss = |a: &Tensor, b: &Tensor| scalar(&directional_loss(a, b).unwrap());
    let par = loss(&u, &u);
    let anti = loss(&u.neg().unwrap(), &u);
    let orth = loss(&v, &u);
    let mut scale_worst: f64 = 0.0;
    for c in [1e-3, 1.0, 1e3] {
        scale_worst = scale_worst.max(loss(&(&u * c).unwrap(), &u).abs());
    }
    let pass = par.abs() < 1e-7 && (anti - 2.0).abs() < 1e-7 && (orth - 1.0).abs() < 1e-7 && scale_worst < 1e-7;
    outcome(
        pass,
        format!("parallel {par:.1e}, antiparallel {anti:.9}, orthogonal {orth:.9}, scaled {scale_worst:.1e}"),
    )
}

// 5 ---------------------------------------------------------------------

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn distribution_oracle(rows: &[Vec<f64>], reference: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let mut pairs = Vec::new();
    for i in 1..n {
        for j in 0..i {
            pairs.push(cosine(&rows[i], &rows[j]));
        }
    }
    let refs: Vec<f64> = rows.iter().map(|r| cosine(r, reference)).collect();
    let mut out = softmax(&pairs);
    out.extend(softmax(&refs));
    out
}

fn distribution_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pass = true;
    let mut sum_err: f64 = 0.0;
    for n in [2usize, 3, 4, 8] {
        let d = randn(&mut rng, &[n, 16], 1.0);
        let r = randn(&mut rng, &[16], 1.0);
        let c = similarity_distribution(&d, &r, 1.0, Domain::Source).unwrap();
        let p = vec1(&c.probs);
        pass &= p.len() == n * (n - 1) / 2 + n && p.len() == pair_count(n) + n;
        let k = n * (n - 1) / 2;
        sum_err = sum_err.max((p[..k].iter().sum::<f64>() - 1.0).abs());
        sum_err = sum_err.max((p[k..].iter().sum::<f64>() - 1.0).abs());
        pass &= scalar(&consistency_loss(&c, &c).unwrap()) == 0.0;
    }
    let mut oracle_err: f64 = 0.0;
    for k in 0..100 {
        let n = 2 + k % 7;
        let d = randn(&mut rng, &[n, 10], 1.0);
        let r = randn(&mut rng, &[10], 1.0);
        let ours = vec1(&similarity_distribution(&d, &r, 1.0, Domain::Target).unwrap().probs);
        let rows = d.to_vec2::<f64>().unwrap();
        let want = distribution_oracle(&rows, &vec1(&r));
        for (a, b) in ours.iter().zip(&want) {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }
    pass &= sum_err < 1e-6 && oracle_err < 1e-6;
    outcome(
        pass,
        format!("lengths ok, group sums within {sum_err:.1e}, C vs C = 0, oracle max |Δ| {oracle_err:.1e} (< 1e-6)"),
    )
}

// 6 ---------------------------------------------------------------------

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Tensor {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = m.qr().q();
    let v: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::from_vec(v, (d, d), &DEV).unwrap()
}

fn self_similarity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut loop_err: f64 = 0.0;
    let mut orth_err: f64 = 0.0;
    for (p, d) in [(2usize, 3usize), (9, 8), (16, 16), (33, 20), (64, 32)] {
        let tokens = randn(&mut rng, &[1, p, d], 1.0);
        let ours = vec1(&self_similarity_batch(&tokens).unwrap());
        let rows = tokens.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        for i in 0..p {
            for j in 0..p {
                loop_err = loop_err.max((ours[i * p + j] - cosine(&rows[i], &rows[j])).abs());
            }
        }
        let q = random_orthogonal(&mut rng, d);
        let rotated = tokens.broadcast_matmul(&q).unwrap();
        let rot = vec1(&self_similarity_batch(&rotated).unwrap());
        for (a, b) in ours.iter().zip(&rot) {
            orth_err = orth_err.max((a - b).abs());
        }
    }
    // f32 token matrices exercise the single-precision path too
    let tokens = randn(&mut rng, &[1, 64, 32], 1.0).to_dtype(DType::F32).unwrap();
    let ours = vec1(&self_similarity_batch(&tokens).unwrap());
    let rows = tokens.squeeze(0).unwrap().to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap();
    for i in 0..64 {
        for j in 0..64 {
            loop_err = loop_err.max((ours[i * 64 + j] - cosine(&rows[i], &rows[j])).abs());
        }
    }
    outcome(
        loop_err < 1e-6 && orth_err < 1e-5,
        format!("double-loop max |Δ| {loop_err:.1e} (< 1e-6), orthogonal invariance {orth_err:.1e} (< 1e-5)"),
    )
}

// 7 ---------------------------------------------------------------------

fn identity_at_init() -> Outcome {
    let t0 = Instant::now();
    let cfg = TrainConfig::default();
    let g_s = Generator::load(&cfg.generator, DType::F32, &DEV).unwrap();
    let g_t = g_s.clone_for_adaptation().unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let w = g_s.sample_latent(1000 + seed, 0.7).unwrap();
        let a = g_s.synthesize(&w, Deform::Off).unwrap();
        let b = g_t.synthesize(&w, Deform::On).unwrap();
        worst = worst.max(max_abs_diff(&a, &b));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0 && g_t.has_transforms(),
        format!("max pixel |Δ| {worst:.1e} (< 1e-4) on 10 probes, {secs:.1} s (< 30 s)"),
    )
}

// 8 ---------------------------------------------------------------------

fn style_mix_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = LatentCode::new(randn(&mut rng, &[18, 512], 1.0)).unwrap();
    let r = LatentCode::new(randn(&mut rng, &[18, 512], 1.0)).unwrap();
    let mut pass = true;
    for split in [1usize, 9, 18] {
        let m = style_mix(&w, &r, split).unwrap();
        for row in 1..=LATENT_ROWS {
            let want = if row < split { w.row(row).unwrap() } else { r.row(row).unwrap() };
            pass &= vec1(&m.row(row).unwrap()) == vec1(&want);
        }
    }
    let refs = ReferencePair::new(
        Tensor::zeros((1, 3, 8, 8), DType::F64, &DEV).unwrap(),
        Tensor::zeros((1, 3, 8, 8), DType::F64, &DEV).unwrap(),
        r.clone(),
        LatentCode::new(randn(&mut rng, &[18, 512], 1.0)).unwrap(),
    )
    .unwrap();
    let (ws, wt) = color_align(&w, &refs, 9).unwrap();
    for row in 1..=8 {
        pass &= vec1(&ws.row(row).unwrap()) == vec1(&wt.row(row).unwrap());
        pass &= vec1(&ws.row(row).unwrap()) == vec1(&w.row(row).unwrap());
    }
    for row in 9..=18 {
        pass &= vec1(&wt.row(row).unwrap()) == vec1(&refs.w_ref_t.row(row).unwrap());
    }
    outcome(pass, "splits 1, 9, 18 and color alignment rows match their sources exactly")
}

// 9 ---------------------------------------------------------------------

fn deformation_control(trained: &Trainer) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.tar");
    Bundle::from_trainer(trained, "blob").unwrap().save(&path).unwrap();
    let bundle = Bundle::load(&path, &DEV).unwrap();
    let g = bundle.generator();
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in [3u64, 4] {
        let w = g.sample_latent(seed, 0.7).unwrap();
        let off = g.synthesize(&w, Deform::Off).unwrap();
        let on = g.synthesize(&w, Deform::On).unwrap();
        let a0 = g.synthesize(&w, Deform::Alpha(0.0)).unwrap();
        let a1 = g.synthesize(&w, Deform::Alpha(1.0)).unwrap();
        pass &= vec1(&off) == vec1(&a0) && vec1(&on) == vec1(&a1);
        let frames = alpha_sweep(g, &w, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        for t in 0..frames[0].displacement_norms.len() {
            let norms: Vec<f64> = frames.iter().map(|f| f.displacement_norms[t]).collect();
            pass &= norms.windows(2).all(|p| p[1] >= p[0]);
            pass &= norms[4] > 0.0;
            notes.push(format!("{:.2e}", norms[4]));
        }
    }
    outcome(
        pass,
        format!("α=0 ≡ off and α=1 ≡ on exactly; norms nondecreasing over 5 α values (α=1 norms {})", notes.join(", ")),
    )
}

// 10 --------------------------------------------------------------------

fn optimization_progress() -> (Outcome, Option<Trainer>) {
    let cfg = TrainConfig {
        iterations: 300,
        batch_size: 4,
        ..quick_config()
    };
    let (s, t) = blob_pair(&DEV);
    let fresh_hash = Generator::load(&cfg.generator, DType::F32, &DEV).unwrap().base_hash().unwrap();
    let t0 = Instant::now();
    let trainer = match run_adaptation(&s, &t, &cfg, None) {
        Ok(t) => t,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let elapsed = t0.elapsed();
    let h = trainer.history();
    let first = h[0].direct;
    let last = h[h.len() - 1].direct;
    let finite = h.iter().all(|r| r.total.is_finite());
    let hash_ok = trainer.source_generator().base_hash().unwrap() == fresh_hash;
    let pass = h.len() == 300 && last < 0.5 * first && finite && hash_ok && elapsed < Duration::from_secs(600);
    (
        outcome(
            pass,
            format!(
                "L_direct {first:.4} -> {last:.4} (ratio {:.3}, < 0.5), total finite: {finite}, source hash unchanged: {hash_ok}, {:.0} s (< 600 s)",
                last / first,
                elapsed.as_secs_f64()
            ),
        ),
        Some(trainer),
    )
}

// 11 --------------------------------------------------------------------

fn determinism_and_resume() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        iterations: 4,
        ..quick_config()
    };
    let mut cfg = cfg;
    cfg.inversion.steps = 5;
    let (s, t) = blob_pair(&DEV);
    let csv = |trainer: &Trainer, name: &str| -> Vec<u8> {
        let p = dir.path().join(name);
        write_loss_csv(&p, trainer.history()).unwrap();
        std::fs::read(p).unwrap()
    };
    let a = run_adaptation(&s, &t, &cfg, None).unwrap();
    let b = run_adaptation(&s, &t, &cfg, None).unwrap();
    let same_seed = csv(&a, "a.csv") == csv(&b, "b.csv");

    let g_s = Generator::load(&cfg.generator, DType::F32, &DEV).unwrap();
    let encoder = cfg.semantics.build(DType::F32, &DEV).unwrap();
    let mut part = Trainer::new(cfg.clone(), g_s, encoder, a.references().clone()).unwrap();
    part.train_step().unwrap();
    part.train_step().unwrap();
    let ckpt = dir.path().join("ckpt");
    part.save_checkpoint(&ckpt).unwrap();
    drop(part);
    let mut resumed = Trainer::resume(&ckpt, &DEV).unwrap();
    resumed.run(None).unwrap();
    let resumed_same = csv(&a, "full.csv") == csv(&resumed, "resumed.csv");
    let weights_same = a.target_generator().store().content_hash().unwrap()
        == resumed.target_generator().store().content_hash().unwrap();
    outcome(
        same_seed && resumed_same && weights_same,
        format!("same-seed CSVs identical: {same_seed}; resumed CSV identical: {resumed_same}; weights identical: {weights_same}"),
    )
}

// 12 --------------------------------------------------------------------

fn metric_identities() -> Outcome {
    let perceptual = StubPerceptual::new(0, DType::F32, &DEV).unwrap();
    let identity = StubIdentity::new(0, DType::F32, &DEV).unwrap();
    let (s, t) = blob_pair(&DEV);
    let m = pair_metrics(&s, &t, &s, &t, &perceptual, &identity).unwrap()[0];
    let self_ok = (m.1 - 1.0).abs() < 1e-6 && (m.2 - 1.0).abs() < 1e-6;

    let cfg = TrainConfig {
        iterations: 0,
        ..quick_config()
    };
    let g_s = Generator::load(&cfg.generator, DType::F32, &DEV).unwrap();
    let encoder = cfg.semantics.build(DType::F32, &DEV).unwrap();
    let refs = ReferencePair::new(s, t, g_s.sample_latent(1, 1.0).unwrap(), g_s.sample_latent(2, 1.0).unwrap()).unwrap();
    let mut trainer = Trainer::new(cfg, g_s, encoder, refs).unwrap();
    trainer.run(None).unwrap();
    let bundle = Bundle::from_trainer(&trainer, "blob").unwrap();
    let source = bundle.source_generator().unwrap();
    let report = evaluate(&bundle, &source, &perceptual, &identity, &(0..8).collect::<Vec<_>>()).unwrap();
    let lpips_max = report.rows.iter().map(|r| r.lpips).fold(0.0, f64::max);
    outcome(
        self_ok && lpips_max == 0.0,
        format!(
            "self-referenced dir-CC {:.9}, dir-ID {:.9}; iterations=0 LPIPS max {lpips_max:e} over 8 probes",
            m.1, m.2
        ),
    )
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => (o.pass, o.detail),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "{} [{id:02}] {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    pass
}

fn main() {
    // optional criterion ids on the command line select a subset
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| only.is_empty() || only.contains(&id);
    let mut results = Vec::new();
    let simple: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "warp identity", warp_identity),
        (2, "smoothness oracle", smoothness_equivalence),
        (3, "gradient checks", gradient_checks),
        (4, "directional loss boundaries", directional_boundaries),
        (5, "similarity distributions", distribution_suite),
        (6, "self-similarity oracle", self_similarity_oracle),
        (7, "identity at init", identity_at_init),
        (8, "style-mix contract", style_mix_contract),
    ];
    for (id, name, f) in simple {
        if wanted(id) {
            results.push(run(id, name, f));
        }
    }

    if wanted(9) || wanted(10) {
        let mut trained = None;
        let progress = run(10, "optimization progress", || {
            let (o, t) = optimization_progress();
            trained = t;
            o
        });
        if wanted(10) {
            results.push(progress);
        }
        if wanted(9) {
            results.push(match &trained {
                Some(t) => run(9, "deformation control", || deformation_control(t)),
                None => run(9, "deformation control", || outcome(false, "no trained model")),
            });
        }
    }
    if wanted(11) {
        results.push(run(11, "determinism and resume", determinism_and_resume));
    }
    if wanted(12) {
        results.push(run(12, "metric identities", metric_identities));
    }

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
