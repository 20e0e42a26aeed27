use std::path::Path;
use std::time::Instant;

use convivit::data::{generate_dataset, load_clip, load_frames_dir, save_feature_pgm, save_heatmap_ppm, Clip, SynthTaskSpec};
use convivit::model::{export_attention_maps, load_checkpoint, save_checkpoint};
use convivit::train::ablation::run_ablation;
use convivit::train::gradcheck::{check_model, GradCheckConfig};
use convivit::train::{count_flops, evaluate, init_model, Control, Trainer};
use convivit::{Ctx, Tensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::run::{Failure, RunSpec};

const CHECKPOINT: &str = "checkpoint.cvvtw";

pub fn train(run: &RunSpec) -> Result<(), Failure> {
    let c = &run.config;
    let (train, test) = c.datasets()?;
    let (model, mut store) = init_model(&c.model, c.train.seed)?;
    let mut log = run.log("metrics.log")?;
    println!(
        "training {} ({} parameters) on {} clips, testing on {}",
        c.model.variant,
        store.num_trainable(),
        train.len(),
        test.len()
    );
    let mut trainer = Trainer::new(&model, &mut store, c.train.clone())?;
    let mut log_error = None;
    let result = trainer.fit(&train, Some(&test), |m, _| {
        println!("{} seconds={:.1}", m.to_line(), m.seconds);
        match log.line(&m.to_line()) {
            Ok(()) => Control::Continue,
            Err(e) => {
                log_error = Some(e);
                Control::Stop
            }
        }
    });
    if let Some(e) = log_error {
        return Err(e);
    }
    result?;
    save_checkpoint(&run.out_path(CHECKPOINT).unwrap(), &model, &store)?;
    let report = evaluate(&model, &store, &test, c.train.batch_size)?;
    log.line(&format!("final test_acc={:.4} correct={} total={}", report.accuracy, report.correct, report.total))?;
    run.write("eval.txt", format!("{report}\n").as_bytes())?;
    println!("final test accuracy {:.2}% ({}/{})", 100.0 * report.accuracy, report.correct, report.total);
    Ok(())
}

pub fn ablate(run: &RunSpec) -> Result<(), Failure> {
    let c = &run.config;
    let (train, test) = c.datasets()?;
    let mut log = run.log("metrics.log")?;
    let mut log_error = None;
    let report = run_ablation(&c.model, &c.train, &train, &test, |cell, m| {
        let line = format!("variant={} cnn_blocks={} {}", cell.variant, cell.cnn_blocks, m.to_line());
        println!("{line} seconds={:.1}", m.seconds);
        if let Err(e) = log.line(&line) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    run.write("ablation.csv", report.to_csv().as_bytes())?;
    run.write("ablation.txt", format!("{report}\n").as_bytes())?;
    println!("{report}");
    Ok(())
}

fn read_input_clip(path: &Path) -> Result<Clip, Failure> {
    Ok(if path.is_dir() { load_frames_dir(path)? } else { load_clip(path)? })
}

pub fn infer(run: &RunSpec, checkpoint: &Path, clip: &Path) -> Result<(), Failure> {
    let (model, store) = load_checkpoint(checkpoint)?;
    let clip = read_input_clip(clip)?;
    let logits = model.predict(&store, Clip::batch(&[&clip])?)?;
    let values = logits.data();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Failure::numerical("non-finite logits"));
    }
    let class = values.iter().enumerate().fold(0, |b, (i, &v)| if v > values[b] { i } else { b });
    let name = if model.config.num_classes <= 4 { SynthTaskSpec::class_name(class) } else { "?" };
    let logit_text: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
    let text = format!("class={class} name={name} logits={}\n", logit_text.join(","));
    print!("{text}");
    run.write("prediction.txt", text.as_bytes())
}

pub fn gradcheck(run: &RunSpec, samples: usize) -> Result<(), Failure> {
    let c = &run.config;
    let (model, store) = init_model(&c.model, c.train.seed)?;
    let clips = generate_dataset(&c.data.synth, 2, c.data.seed)?;
    let refs: Vec<&Clip> = clips.iter().collect();
    let labels: Vec<usize> = clips.iter().map(|x| x.label.unwrap_or(0)).collect();
    let config = GradCheckConfig { samples_per_group: (samples > 0).then_some(samples), ..GradCheckConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(c.train.seed);
    let report = check_model(&model, &store, &Clip::batch(&refs)?, &labels, &config, &mut rng)?;
    run.write("gradcheck.txt", format!("{report}\n").as_bytes())?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let worst: Vec<&str> = report.failing().map(|g| g.name.as_str()).collect();
        Err(Failure::numerical(format!(
            "gradient check failed for {} (max relative error {:.3e}, tolerance {:e})",
            worst.join(", "),
            report.max_rel_err(),
            config.tolerance
        )))
    }
}

/// Mean absolute activation over channels of one frame of a `1 x C x T x H x W` map.
fn feature_frame(t: &Tensor, frame: usize) -> (Vec<f32>, usize, usize) {
    let s = t.shape();
    let (c, frames, h, w) = (s[1], s[2], s[3], s[4]);
    let mut out = vec![0f32; h * w];
    for ch in 0..c {
        let base = (ch * frames + frame) * h * w;
        for (o, v) in out.iter_mut().zip(&t.data()[base..base + h * w]) {
            *o += v.abs() / c as f32;
        }
    }
    (out, h, w)
}

pub fn export_attention(run: &RunSpec, checkpoint: &Path, clip: &Path, layer: usize, head: usize) -> Result<(), Failure> {
    let (model, store) = load_checkpoint(checkpoint)?;
    let clip = read_input_clip(clip)?;
    let [_, frames, height, width] = <[usize; 4]>::try_from(clip.video.shape()).unwrap();
    let [_, gh, gw] = model.config.token_grid(frames, height, width)?;
    let mut ctx = Ctx::inference(&store).with_sink().with_taps();
    let x = ctx.input(Clip::batch(&[&clip])?);
    model.forward(&mut ctx, x)?;
    let records = &ctx.sink.as_ref().expect("sink enabled").records;
    let maps = export_attention_maps(records, gh, gw, layer, head, 0)?;
    for (t, map) in maps.iter().enumerate() {
        let up = map.upsample(height / gh, width / gw);
        save_heatmap_ppm(&up, &run.out_path(&format!("attention_l{layer}_h{head}_t{t:03}.ppm")).unwrap())?;
    }
    let mut features = 0;
    for block in 0..model.config.cnn_blocks {
        let tapped = ctx.tapped(&format!("stem.{block}")).expect("taps enabled");
        for t in 0..tapped.shape()[2] {
            let (values, h, w) = feature_frame(tapped, t);
            save_feature_pgm(&values, h, w, &run.out_path(&format!("stem{}_t{t:03}.pgm", block + 1)).unwrap())?;
            features += 1;
        }
    }
    println!(
        "wrote {} attention heatmaps ({}x{} tokens upsampled to {}x{}) and {features} stem feature maps",
        maps.len(),
        gh,
        gw,
        height,
        width
    );
    Ok(())
}

pub fn bench(run: &RunSpec, batch: usize) -> Result<(), Failure> {
    let c = &run.config;
    let s = &c.data.synth;
    let extents = [s.frames, s.height, s.width];
    let report = count_flops(&c.model, batch, extents)?;
    run.write("flops.csv", report.to_csv().as_bytes())?;
    run.write("flops.txt", format!("{report}\n").as_bytes())?;
    println!("{report}");

    let mut timings = String::from("variant,batch,forward_seconds\n");
    let mut rng = ChaCha8Rng::seed_from_u64(c.train.seed);
    let input = Tensor::uniform(&[batch, c.model.in_channels, s.frames, s.height, s.width], 0.0, 1.0, &mut rng);
    for variant in Variant::ALL {
        let config = convivit::ModelConfig { variant, ..c.model.clone() };
        let (model, store) = init_model(&config, c.train.seed)?;
        let start = Instant::now();
        model.predict(&store, input.clone())?;
        timings.push_str(&format!("{variant},{batch},{:.4}\n", start.elapsed().as_secs_f64()));
    }
    run.write("timings.csv", timings.as_bytes())?;
    println!("forward wall-clock seconds (informational)\n{timings}");
    Ok(())
}
