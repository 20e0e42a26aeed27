//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `ACCEPTANCE_ONLY=1,4,8` runs a subset. The process exits 0 even when a
//! criterion fails, so a slow or unattainable criterion is reported rather
//! than hidden; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero
//! exit.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{align_variants, conv_sweep, naive_conv3d, op_gradcheck, permute_tokens, rng, run_block, uniform};
use convivit::data::{generate_dataset, load_clip, save_clip, SynthTaskSpec};
use convivit::model::{load_checkpoint, save_checkpoint, FactorizedDotProductBlock, FactorizedSelfBlock, PositionEmbed};
use convivit::nn::{self, AttentionSpec, MultiHeadAttention, RecordTag, Stage};
use convivit::train::ablation::run_ablation;
use convivit::train::gradcheck::{check_model, check_op, GradCheckConfig};
use convivit::train::probe::{frame0_probe, ProbeConfig};
use convivit::train::{count_flops, init_model, Control, TrainConfig, Trainer};
use convivit::{Conv3dSpec, ConViViT, Ctx, Graph, ModelConfig, NormMode, ParamStore, Result, RunConfig, Tensor, Var, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn conv_weight(spec: &Conv3dSpec, r: &mut ChaCha8Rng) -> Tensor {
    let shape = spec.weight_shape();
    let bound = 1.0 / (shape[1..].iter().product::<usize>() as f32).sqrt();
    Tensor::uniform(&shape, -bound, bound, r)
}

fn conv_error(shape: &[usize], spec: &Conv3dSpec, r: &mut ChaCha8Rng) -> f32 {
    let x = uniform(shape, r);
    let w = conv_weight(spec, r);
    let b = uniform(&[spec.out_channels], r);
    let mut g = Graph::no_grad();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = nn::conv3d(&mut g, xv, wv, Some(bv), spec).unwrap();
    g.value(y).max_abs_diff(&naive_conv3d(&x, &w, Some(&b), spec))
}

fn random_conv_case(r: &mut ChaCha8Rng) -> (Vec<usize>, Conv3dSpec) {
    let (cin, cout, groups) = match r.gen_range(0..3) {
        0 => {
            let c = r.gen_range(1..=8);
            (c, c, c)
        }
        1 => {
            let g = [2, 4][r.gen_range(0..2)];
            (g * r.gen_range(1..=3), g * r.gen_range(1..=3), g)
        }
        _ => (r.gen_range(1..=8), r.gen_range(1..=8), 1),
    };
    let dims = [r.gen_range(3..=8), r.gen_range(6..=16), r.gen_range(6..=16)];
    let mut kernel = [0; 3];
    let mut stride = [0; 3];
    let mut padding = [0; 3];
    for a in 0..3 {
        padding[a] = r.gen_range(0..=2);
        kernel[a] = r.gen_range(1..=5.min(dims[a] + 2 * padding[a]));
        stride[a] = r.gen_range(1..=2);
    }
    let spec = Conv3dSpec::new(cin, cout, kernel).stride(stride).padding(padding).groups(groups);
    (vec![r.gen_range(1..=2), cin, dims[0], dims[1], dims[2]], spec)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let sweep = conv_sweep();
    let depthwise = sweep.iter().filter(|(_, s)| s.groups > 1 && s.groups == s.in_channels).count();
    let mut worst = 0f32;
    for (shape, spec) in &sweep {
        worst = worst.max(conv_error(shape, spec, &mut r));
    }
    let mut worst_large = 0f32;
    for _ in 0..100 {
        let (shape, spec) = random_conv_case(&mut r);
        worst_large = worst_large.max(conv_error(&shape, &spec, &mut r));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.max(worst_large) < 1e-5 && secs < 120.0,
        format!(
            "{} sweep cases ({depthwise} depthwise) max err {worst:.2e}, 100 random larger cases max err {worst_large:.2e}; tolerance 1e-5; {secs:.1}s of 120s",
            sweep.len()
        ),
    )
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("add", vec![vec![3, 4], vec![4]], |g, v| g.add(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 1]], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![5]], |g, v| g.scale(v[0], -1.7)),
        ("gelu", vec![vec![2, 5]], |g, v| g.gelu(v[0])),
        ("reshape", vec![vec![2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        ("permute", vec![vec![2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1])),
        ("narrow", vec![vec![3, 5, 2]], |g, v| g.narrow(v[0], 1, 1, 3)),
        ("concat", vec![vec![2, 3], vec![2, 2]], |g, v| g.concat(&[v[0], v[1]], 1)),
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], |g, v| g.matmul(v[0], v[1])),
        ("softmax", vec![vec![3, 4]], |g, v| g.softmax(v[0], 1)),
        ("sum_all", vec![vec![3, 2]], |g, v| g.sum_all(v[0])),
        ("mean_axis", vec![vec![2, 3, 4]], |g, v| g.mean_axis(v[0], 1)),
        ("linear", vec![vec![4, 3], vec![3, 5], vec![5]], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |g, v| g.layer_norm(v[0], v[1], v[2])),
        ("cross_entropy", vec![vec![3, 4]], |g, v| g.cross_entropy(v[0], &[0, 3, 1])),
        ("batch_norm", vec![vec![3, 2, 2, 3, 3], vec![2], vec![2]], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], (&[0.0; 2], &[1.0; 2]), NormMode::Train)?.0)
        }),
        ("conv3d", vec![vec![2, 2, 3, 4, 4], vec![3, 2, 2, 3, 2], vec![3]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), &Conv3dSpec::new(2, 3, [2, 3, 2]).padding([1, 1, 0]))
        }),
        ("conv3d_strided", vec![vec![2, 2, 3, 4, 4], vec![2, 2, 3, 3, 3], vec![2]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), &Conv3dSpec::new(2, 2, [3, 3, 3]).stride([1, 2, 2]).padding([1, 1, 1]))
        }),
        ("conv3d_grouped", vec![vec![2, 4, 3, 4, 4], vec![6, 2, 1, 2, 2], vec![6]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), &Conv3dSpec::new(4, 6, [1, 2, 2]).groups(2))
        }),
        ("conv3d_depthwise", vec![vec![2, 3, 3, 4, 4], vec![3, 1, 3, 3, 3], vec![3]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), &Conv3dSpec::depthwise(3, [3, 3, 3]).padding([1, 1, 1]))
        }),
        ("conv3d_pointwise", vec![vec![2, 3, 3, 4, 4], vec![4, 3, 1, 1, 1], vec![4]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), &Conv3dSpec::new(3, 4, [1, 1, 1]))
        }),
    ];
    cases.push(("attention_core", vec![vec![2, 5, 4], vec![2, 5, 4], vec![2, 5, 4]], |g, v| {
        let kt = g.permute(v[1], &[0, 2, 1])?;
        let s = g.matmul(v[0], kt)?;
        let s = g.scale(s, 0.5)?;
        let p = g.softmax(s, 2)?;
        g.matmul(p, v[2])
    }));
    let config = op_gradcheck();
    let mut worst_op = (0f64, "");
    let mut failures = Vec::new();
    for (name, shapes, build) in &cases {
        for trial in 0..5 {
            let mut r = rng(200 + trial);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(s, &mut r)).collect();
            let report = check_op(*build, &inputs, &config, &mut r).unwrap();
            if report.max_rel_err() > worst_op.0 {
                worst_op = (report.max_rel_err(), name);
            }
            if !report.passed() {
                failures.push(format!("{name}#{trial}"));
            }
        }
    }
    let model_config = GradCheckConfig { samples_per_group: Some(10), ..GradCheckConfig::default() };
    let mut model_detail = Vec::new();
    for variant in Variant::ALL {
        let (model, store) = ConViViT::new(ModelConfig { variant, ..ModelConfig::micro() }, &mut rng(210)).unwrap();
        let x = uniform(&[2, 3, 2, 16, 16], &mut rng(211));
        let report = check_model(&model, &store, &x, &[0, 2], &model_config, &mut rng(212)).unwrap();
        if !report.passed() {
            failures.push(format!("micro {variant}: {:?}", report.failing().map(|g| g.name.clone()).collect::<Vec<_>>()));
        }
        model_detail.push(format!("micro {variant} {} scalars max {:.2e}", report.checked(), report.max_rel_err()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && secs < 600.0,
        format!(
            "{} ops x 5 trials, worst {:.2e} ({}); {}; tolerance 1e-2; {secs:.1}s of 600s{}",
            cases.len(),
            worst_op.0,
            worst_op.1,
            model_detail.join("; "),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut r = rng(301);
    let (mut rows, mut worst) = (0usize, 0f64);
    let mut negative = false;
    for i in 0..100 {
        let variant = Variant::ALL[i % 2];
        let config = ModelConfig { variant, depth: r.gen_range(1..=2), heads: [2, 4][r.gen_range(0..2)], ..ModelConfig::micro() };
        let (model, store) = ConViViT::new(config, &mut rng(310 + i as u64)).unwrap();
        let shape = [1, 3, r.gen_range(1..=4), 8 * r.gen_range(1..=3), 8 * r.gen_range(1..=3)];
        let amplitude = 10f32.powf(r.gen_range(-1.0..1.0));
        let x = uniform(&shape, &mut r).map(|v| amplitude * v);
        let mut ctx = Ctx::inference(&store).with_sink();
        let xv = ctx.input(x);
        model.forward(&mut ctx, xv).unwrap();
        for rec in &ctx.sink.as_ref().unwrap().records {
            let keys = rec.weights.shape()[1];
            for row in rec.weights.data().chunks(keys) {
                negative |= row.iter().any(|&w| w < 0.0);
                worst = worst.max((row.iter().map(|&w| w as f64).sum::<f64>() - 1.0).abs());
                rows += 1;
            }
        }
    }
    verdict(
        worst < 1e-5 && !negative && rows > 0,
        format!("100 clips, {rows} attention rows (spatial and temporal, both variants), max |sum-1| {worst:.2e}, tolerance 1e-5"),
    )
}

fn criterion_4() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for variant in Variant::ALL {
        let config = ModelConfig { variant, ..ModelConfig::default() };
        let (model, store) = ConViViT::new(config, &mut rng(401)).unwrap();
        let mut ctx = Ctx::inference(&store).with_taps();
        let xv = ctx.input(uniform(&[1, 3, 8, 64, 64], &mut rng(402)));
        let logits = model.forward(&mut ctx, xv).unwrap();
        let stem = ctx.tapped("stem.1").unwrap().shape().to_vec();
        ok &= stem[1] == 128 && ctx.value(logits).shape() == [1, 4];
        let grids: Vec<Vec<usize>> = (0..model.config.depth).map(|l| ctx.tapped(&format!("blocks.{l}")).unwrap().shape().to_vec()).collect();
        ok &= grids.iter().all(|g| g == &[1, 8, 16, 128]);
        if variant == Variant::FactorizedSelf {
            notes.push(format!("stem output {stem:?}"));
        }
        notes.push(format!("{variant} token grid [B,T,N,D] {:?} at all {} blocks", grids[0], grids.len()));
    }
    let depth = 2;
    let mk = |v| ConViViT::new(ModelConfig { depth, variant: v, ..ModelConfig::micro() }, &mut rng(403)).unwrap();
    let (self_model, mut self_store) = mk(Variant::FactorizedSelf);
    let (dot_model, dot_store) = mk(Variant::FactorizedDotProduct);
    align_variants(&mut self_store, &dot_store, depth);
    let [t, h, w] = self_model.config.min_clip();
    let x = uniform(&[4, 3, t, h, w], &mut rng(404));
    let a = self_model.predict(&self_store, x.clone()).unwrap();
    let b = dot_model.predict(&dot_store, x).unwrap();
    let agree = a.bitwise_eq(&b) && self_model.config.token_grid(t, h, w).unwrap() == [1, 1, 1];
    ok &= agree;
    notes.push(format!("variants at N=T=1 bitwise equal: {agree}"));
    verdict(ok, notes.join("; "))
}

fn random_perm(n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    while p.iter().enumerate().all(|(i, &v)| i == v) {
        p.shuffle(r);
    }
    p
}

fn criterion_5() -> Verdict {
    let mut r = rng(501);
    let mut attn_worst = 0f32;
    let mut block_worst = 0f32;
    let mut dpe_min = f32::INFINITY;
    for trial in 0..10 {
        let (d, heads, s) = (8, 2, 6);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::init(&mut store, "attn", AttentionSpec::new(d, heads).unwrap(), &mut r);
        let x = uniform(&[2, s, d], &mut r).map(|v| 2.0 * v);
        let perm = random_perm(s, &mut r);
        let run = |x: &Tensor| {
            let mut ctx = Ctx::inference(&store);
            let xv = ctx.input(x.clone());
            let tag = RecordTag { layer: 0, stage: Stage::Spatial, slices: 1, head_offset: 0 };
            let y = mha.forward(&mut ctx, xv, xv, xv, Some(tag)).unwrap();
            ctx.value(y).clone()
        };
        let as4 = |t: &Tensor| t.reshape(&[2, 1, s, d]).unwrap();
        let a = permute_tokens(&as4(&run(&x)), &perm);
        let b = as4(&run(&permute_tokens(&as4(&x), &perm).reshape(&[2, s, d]).unwrap()));
        attn_worst = attn_worst.max(a.max_abs_diff(&b));

        // Whole factorized blocks, same permutation in every frame.
        let spec = AttentionSpec::new(d, heads).unwrap();
        let mut bs = ParamStore::new();
        let sb = FactorizedSelfBlock::init(&mut bs, "blocks.0", spec, 2, &mut r);
        let db = FactorizedDotProductBlock::init(&mut bs, "blocks.1", spec, 2, &mut r).unwrap();
        let x = uniform(&[2, 3, 6, d], &mut r);
        for f in [&|ctx: &mut Ctx, g| sb.forward(ctx, g, 0), &|ctx: &mut Ctx, g| db.forward(ctx, g, 1)] as [&dyn Fn(&mut Ctx, convivit::TokenGrid) -> Result<convivit::TokenGrid>; 2] {
            let a = permute_tokens(&run_block(&bs, &x, 2, 3, f), &perm);
            let b = run_block(&bs, &permute_tokens(&x, &perm), 2, 3, f);
            block_worst = block_worst.max(a.max_abs_diff(&b));
        }

        let mut ps = ParamStore::new();
        let dpe = PositionEmbed::init(&mut ps, d, &mut rng(510 + trial)).unwrap();
        let x = uniform(&[1, 3, 9, d], &mut r);
        let perm9 = random_perm(9, &mut r);
        let a = permute_tokens(&run_block(&ps, &x, 3, 3, |ctx, g| dpe.forward(ctx, g)), &perm9);
        let b = run_block(&ps, &permute_tokens(&x, &perm9), 3, 3, |ctx, g| dpe.forward(ctx, g));
        dpe_min = dpe_min.min(a.max_abs_diff(&b));
    }
    verdict(
        attn_worst < 1e-5 && block_worst < 1e-5 && dpe_min > 1e-3,
        format!(
            "10 random trials: attention max deviation {attn_worst:.2e}, factorized blocks {block_worst:.2e} (tol 1e-5); DPE smallest deviation {dpe_min:.2e} (must exceed 1e-3)"
        ),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let run = RunConfig::default();
    assert_eq!(run.model.variant, Variant::FactorizedSelf);
    let (train, test) = run.datasets().unwrap();
    let (model, mut store) = init_model(&run.model, run.train.seed).unwrap();
    let mut trainer = Trainer::new(&model, &mut store, run.train.clone()).unwrap();
    let history = trainer
        .fit(&train, Some(&test), |m, _| {
            println!("      {} seconds={:.1}", m.to_line(), m.seconds);
            if m.test_accuracy.unwrap_or(0.0) >= 0.95 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let last = history.last().unwrap();
    let best = history.iter().filter_map(|m| m.test_accuracy).fold(0.0, f64::max);
    let reached = best >= 0.95;
    let losses: Vec<String> = history.iter().map(|m| format!("{:.3}", m.loss)).collect();

    let probe = frame0_probe(&train, &test, run.data.synth.num_classes, &ProbeConfig::default()).unwrap();
    let chance = 1.0 / run.data.synth.num_classes as f64;
    let probe_ok = (probe.test.accuracy - chance).abs() <= 0.10;
    verdict(
        reached && history.len() <= 30 && train_secs < 1800.0 && probe_ok,
        format!(
            "test accuracy {:.1}% after {} epochs (best {:.1}%, target 95% within 30) in {:.0}s of 1800s, losses [{}]; frame-0 probe test accuracy {:.1}% (train {:.1}%) vs chance {:.0}% +/- 10",
            100.0 * last.test_accuracy.unwrap(),
            history.len(),
            100.0 * best,
            train_secs,
            losses.join(", "),
            100.0 * probe.test.accuracy,
            100.0 * probe.train_accuracy,
            100.0 * chance
        ),
    )
}

/// Shared ablation budget: one epoch over the 400 training clips per cell.
const ABLATION_EPOCHS: usize = 1;

fn criterion_7() -> Verdict {
    let run = RunConfig::default();
    let (train, test) = run.datasets().unwrap();
    let budget = TrainConfig { epochs: ABLATION_EPOCHS, ..run.train.clone() };
    let report = run_ablation(&run.model, &budget, &train, &test, |c, m| {
        println!("      variant={} cnn_blocks={} {} seconds={:.1}", c.variant, c.cnn_blocks, m.to_line(), m.seconds);
    })
    .unwrap();
    for line in report.to_string().lines() {
        println!("      {line}");
    }
    let cells: Vec<String> = report
        .cells
        .iter()
        .map(|c| match c.test_accuracy() {
            Some(a) => format!("{}/{}blk {:.0}%", c.variant, c.cnn_blocks, 100.0 * a),
            None => format!("{}/{}blk failed", c.variant, c.cnn_blocks),
        })
        .collect();
    verdict(
        report.self_two_blocks_on_top(),
        format!("{ABLATION_EPOCHS}-epoch budget per cell, shared seed and data order: {}", cells.join(", ")),
    )
}

/// Default configuration evaluated by hand, one stage at a time: clip
/// 8x64x64, B = 1, stem 64 -> 128 channels, patch 1x4x4, T = 8, N = 16,
/// D = 128, depth 4, MLP hidden 512, 4 classes.
fn hand_default() -> (u64, u64, u64) {
    // Block 1 on 8x64x64 (32768 voxels) -> 8x32x32 (8192), mid width 16.
    let block1 = 3 * 32768 * 27 + 32768 * 3 * 16 + 8192 * 16 * 16 * 125 + 8192 * 16 * 64 + 8192 * 3 * 64;
    // Block 2 on 8x32x32 (8192) -> 8x16x16 (2048), mid width 32.
    let block2 = 64 * 8192 * 27 + 8192 * 64 * 32 + 2048 * 32 * 32 * 125 + 2048 * 32 * 128 + 2048 * 64 * 128;
    assert_eq!(block1 + block2, 594_575_360);
    // Patch projection to 8x4x4 = 128 tokens, then the depthwise DPE conv.
    let embed = 128 * 128 * (128 * 16) + 128 * 128 * 27;
    let mlp = 4 * 2 * 128 * 128 * 512;
    let head = 128 * 4;
    let shared = block1 + block2 + embed + mlp + head;
    let self_attn = 4 * (8 * (2 * 16 * 16 * 128 + 4 * 16 * 128 * 128) + 16 * (2 * 8 * 8 * 128 + 4 * 8 * 128 * 128));
    let dot_attn = 4 * (4 * 128 * 128 * 128 + 8 * 16 * 16 * 128 + 16 * 8 * 8 * 128);
    let joint_attn = 4 * (4 * 128 * 128 * 128 + 2 * 128 * 128 * 128);
    (shared + self_attn, shared + dot_attn, shared + joint_attn)
}

fn criterion_8() -> Verdict {
    let mut r = rng(801);
    let (mut checked, mut self_violations, mut dot_violations) = (0, 0, 0);
    let mut example = None;
    for _ in 0..500 {
        let heads = [2, 4][r.gen_range(0..2)];
        let config = ModelConfig {
            embed_dim: heads * [4, 8, 16, 32, 64][r.gen_range(0..5)],
            heads,
            depth: r.gen_range(1..=6),
            patch: [1, r.gen_range(1..=2), r.gen_range(1..=2)],
            cnn_blocks: r.gen_range(1..=2),
            ..ModelConfig::default()
        };
        let stride = config.stem_stride();
        let (t, gh, gw) = (r.gen_range(2..=16), r.gen_range(1..=8), r.gen_range(1..=8));
        if gh * gw < 2 {
            continue;
        }
        let clip = [t, gh * stride * config.patch[1], gw * stride * config.patch[2]];
        let f = count_flops(&config, r.gen_range(1..=4), clip).unwrap();
        checked += 1;
        if f.total(Variant::FactorizedDotProduct) >= f.joint_total() {
            dot_violations += 1;
        }
        if f.total(Variant::FactorizedSelf) >= f.joint_total() {
            self_violations += 1;
            example.get_or_insert((f.frames, f.tokens, f.dim));
        }
    }
    let d = count_flops(&ModelConfig::default(), 1, [8, 64, 64]).unwrap();
    let (hand_self, hand_dot, hand_joint) = hand_default();
    let spot = d.total(Variant::FactorizedSelf) == hand_self && d.total(Variant::FactorizedDotProduct) == hand_dot && d.joint_total() == hand_joint;
    let analysis = match example {
        Some((t, n, dim)) => format!(
            "; factorized-self pays two sets of q/k/v/out projections and is cheaper than joint only when T*N > T+N+2D (e.g. T={t}, N={n}, D={dim} fails; default T=8, N=16, D=128 fails)"
        ),
        None => String::new(),
    };
    verdict(
        dot_violations == 0 && self_violations == 0 && spot,
        format!(
            "{checked} random configs with T,N >= 2: factorized-dot-product >= joint in {dot_violations}, factorized-self >= joint in {self_violations}; default spot values self {} / dot-product {} / joint {} MACs, hand recomputation {}{analysis}",
            d.total(Variant::FactorizedSelf),
            d.total(Variant::FactorizedDotProduct),
            d.joint_total(),
            if spot { "matches" } else { "DIFFERS" }
        ),
    )
}

fn criterion_9() -> Verdict {
    let task = SynthTaskSpec { frames: 2, height: 16, width: 16, radius: 1.5, speed: 2.0, distractors: 1, ..SynthTaskSpec::default() };
    let clips = generate_dataset(&task, 12, 901).unwrap();
    let train = |seed| {
        let (model, mut store) = init_model(&ModelConfig::micro(), seed).unwrap();
        let config = TrainConfig { batch_size: 4, epochs: 3, seed, ..TrainConfig::default() };
        let history = Trainer::new(&model, &mut store, config).unwrap().fit(&clips, Some(&clips[..4]), |_, _| Control::Continue).unwrap();
        (model, store, history.iter().map(|m| m.to_line()).collect::<Vec<_>>())
    };
    let (model, a, log_a) = train(7);
    let (_, b, log_b) = train(7);
    let runs_equal = a.bitwise_eq(&b) && log_a == log_b;

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.cvvtw"), dir.path().join("b.cvvtw"));
    save_checkpoint(&p1, &model, &a).unwrap();
    let (loaded_model, loaded) = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &loaded_model, &loaded).unwrap();
    let ckpt_equal = loaded.bitwise_eq(&a) && loaded_model.config == model.config && std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    let clip_path = dir.path().join("c.cvvtc");
    let clip = generate_dataset(&SynthTaskSpec::default(), 1, 902).unwrap().remove(0);
    save_clip(&clip, &clip_path).unwrap();
    let clip_equal = load_clip(&clip_path).unwrap().video.bitwise_eq(&clip.video);
    verdict(
        runs_equal && ckpt_equal && clip_equal,
        format!("two 3-epoch seeded runs bitwise equal: {runs_equal}; checkpoint round trip bitwise: {ckpt_equal}; clip round trip bitwise: {clip_equal}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "conv3d oracle equivalence", criterion_1),
        (2, "gradient suite", criterion_2),
        (3, "normalization invariants", criterion_3),
        (4, "architecture contracts", criterion_4),
        (5, "equivariance and position embedding", criterion_5),
        (6, "toy training and frame-0 probe", criterion_6),
        (7, "ablation direction", criterion_7),
        (8, "FLOP inequality", criterion_8),
        (9, "reproducibility", criterion_9),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut passed, mut failed) = (0, 0);
    let total = Instant::now();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = Duration::as_secs_f64(&start.elapsed());
        if outcome.pass {
            passed += 1;
        } else {
            failed += 1;
        }
        println!("{} [{id}] {name}: {} ({secs:.1}s)", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    println!("acceptance: {passed} passed, {failed} failed in {:.0}s", total.elapsed().as_secs_f64());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
