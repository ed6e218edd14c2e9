//! Worked examples for every operation, each checked against a hand value
//! or an independent brute-force oracle. Shared by the per-example tests
//! and the acceptance target.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfgc_autograd::{Tape, Tensor, Var};
use tfgc_core::audio::{
    alignment_positions, audio_head, encode, intermediate_features, EncoderAdapter, LogMel, MapVars,
};
use tfgc_core::dctam::{
    axis_reshape, axis_restore, dctam_apply, discrepancy_update, multigrain_aggregate, project_qkv,
    temporal_scores, variance_activate, DctamVars,
};
use tfgc_core::head::{head_forward, joint_loss_value, DetectionOutput, FusionHead, HeadConfig, HeadVars, SeparableVars};
use tfgc_core::lfs::{band_index, band_stats, block_dct, dct2, dct_matrix, idct2, LOG_EPS};
use tfgc_core::media_io::{
    load_clip, normalize, pearson, synth_pair, synth_pair_with_truth, Authenticity, Clip, SynthMode, Waveform,
};
use tfgc_core::params::ParamStore;
use tfgc_core::rsfdm::{frame_diffs, pad_sum_diffs, rsfdm_apply};
use tfgc_core::scenario::{derive_labels, enumerate_scenarios, split_report, ScenarioRecord, Split};
use tfgc_core::vafm::{
    attention_weights, build_qkv, cross_attend, fuse, split_heads, Divisor, FuseVars, FusionState, QkvVars,
};
use tfgc_core::Error;

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl Into<String>) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub fn close(got: f64, want: f64, tol: f64, what: &str) -> Check {
    ensure((got - want).abs() <= tol, format!("{what}: got {got}, want {want} (tol {tol})"))
}

pub fn all_close(got: &[f64], want: &[f64], tol: f64, what: &str) -> Check {
    ensure(got.len() == want.len(), format!("{what}: length {} vs {}", got.len(), want.len()))?;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        close(*g, *w, tol, &format!("{what}[{i}]"))?;
    }
    Ok(())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

fn unit_t(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random::<f64>())
}

fn eye(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
}

fn err<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

// ---------------------------------------------------------------- media

fn write_frames(dir: &Path, count: usize, side: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let img = image::RgbImage::from_fn(side, side, |x, y| {
            image::Rgb([
                ((x * 7 + y * 3 + i as u32) % 256) as u8,
                ((x + 2 * y) % 200 + 20) as u8,
                ((x * y + 5 * i as u32) % 256) as u8,
            ])
        });
        img.save(dir.join(format!("{i:05}.png"))).unwrap();
    }
}

pub fn load_clip_identity_resize() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(tmp.path(), 16, 256);
    let clip = err(load_clip(tmp.path(), 16, 256))?;
    ensure(clip.frames().shape() == [16, 3, 256, 256], format!("shape {:?}", clip.frames().shape()))?;
    let img = image::open(tmp.path().join("00005.png")).unwrap().to_rgb8();
    for (x, y, c) in [(0, 0, 0), (17, 200, 1), (255, 255, 2), (100, 3, 0)] {
        let want = img.get_pixel(x, y)[c] as f64 / 255.0;
        let got = clip.frames().at(&[5, c, y as usize, x as usize]);
        ensure(got == want, format!("pixel ({x},{y},{c}): {got} vs {want}"))?;
    }
    Ok(())
}

pub fn load_clip_missing_frames() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(tmp.path(), 3, 16);
    match load_clip(tmp.path(), 8, 16) {
        Err(Error::MissingFrames { needed: 8, found: 3, .. }) => Ok(()),
        other => Err(format!("expected MissingFrames, got {other:?}")),
    }
}

pub fn load_clip_downscale_range() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(tmp.path(), 16, 512);
    let clip = err(load_clip(tmp.path(), 8, 64))?;
    ensure(clip.frames().shape() == [8, 3, 64, 64], format!("shape {:?}", clip.frames().shape()))?;
    // a triangle filter is a convex combination: output stays within the
    // source's per-channel range
    for ti in 0..8 {
        let img = image::open(tmp.path().join(format!("{ti:05}.png"))).unwrap().to_rgb8();
        for c in 0..3 {
            let (lo, hi) = img
                .pixels()
                .fold((255u8, 0u8), |(a, b), p| (a.min(p[c]), b.max(p[c])));
            let frame = clip.frames().index_axis0(ti).index_axis0(c);
            let (glo, ghi) = frame
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            ensure(glo >= 0.0 && ghi <= 1.0, "values outside [0,1]")?;
            ensure(
                glo >= lo as f64 / 255.0 - 1e-12 && ghi <= hi as f64 / 255.0 + 1e-12,
                format!("frame {ti} channel {c}: [{glo},{ghi}] escapes source [{lo},{hi}]"),
            )?;
        }
    }
    Ok(())
}

pub fn synth_determinism() -> Check {
    let a = err(synth_pair(7, SynthMode::Coherent, 8, 32))?;
    let b = err(synth_pair(7, SynthMode::Coherent, 8, 32))?;
    ensure(a.clip.frames().data() == b.clip.frames().data(), "frames differ")?;
    ensure(a.waveform.samples() == b.waveform.samples(), "audio differs")
}

pub fn synth_jitter_labels() -> Check {
    let p = err(synth_pair(7, SynthMode::Jitter, 8, 32))?;
    ensure(
        p.video_label == Authenticity::Fake && p.audio_label == Authenticity::Real,
        format!("labels {:?}/{:?}", p.video_label, p.audio_label),
    )
}

pub fn synth_sync_correlation() -> Check {
    let (_, coherent) = err(synth_pair_with_truth(7, SynthMode::Coherent, 8, 32))?;
    let (_, desync) = err(synth_pair_with_truth(7, SynthMode::Desync, 8, 32))?;
    let rc = pearson(&coherent.aperture, &coherent.envelope);
    let rd = pearson(&desync.aperture, &desync.envelope);
    ensure(rc > 0.9, format!("coherent correlation {rc}"))?;
    ensure(rd < 0.3, format!("desync correlation {rd}"))
}

pub fn normalize_constant_clip() -> Check {
    let clip = err(Clip::new(Tensor::full(&[4, 3, 8, 8], 0.37), 25.0, "c"))?;
    let n = normalize(&clip);
    ensure(n.frames.data().iter().all(|&v| v == 0.0), "constant clip not all zero")
}

fn channel_moments(x: &Tensor) -> Vec<(f64, f64)> {
    let s = x.shape();
    let (tn, c, plane) = (s[0], s[1], s[2] * s[3]);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..tn)
                .flat_map(|ti| x.data()[(ti * c + ch) * plane..(ti * c + ch + 1) * plane].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            (m, v)
        })
        .collect()
}

pub fn normalize_zero_mean() -> Check {
    for seed in 0..5 {
        let p = err(synth_pair(seed, SynthMode::ALL[seed as usize % 3], 8, 32))?;
        for (ch, (m, _)) in channel_moments(&normalize(&p.clip).frames).into_iter().enumerate() {
            ensure(m.abs() < 1e-6, format!("seed {seed} channel {ch} mean {m}"))?;
        }
    }
    Ok(())
}

pub fn normalize_unit_variance() -> Check {
    let clip = err(Clip::new(unit_t(&[6, 3, 16, 16], 3), 25.0, "r"))?;
    for (ch, (_, v)) in channel_moments(&normalize(&clip).frames).into_iter().enumerate() {
        close(v, 1.0, 1e-5, &format!("channel {ch} variance"))?;
    }
    Ok(())
}

// ------------------------------------------------------------- scenarios

pub fn scenarios_count() -> Check {
    ensure(enumerate_scenarios().len() == 11, "expected 11 scenarios")
}

pub fn scenarios_fundamental_pair() -> Check {
    let all = enumerate_scenarios();
    let real: Vec<_> = all.iter().filter(|d| d.audio_authentic).collect();
    let forged: Vec<_> = all.iter().filter(|d| !d.audio_authentic).collect();
    ensure(forged.len() == 1, "exactly one forged-audio scenario")?;
    let twin = real
        .iter()
        .find(|d| d.generator_family == forged[0].generator_family && d.slots == forged[0].slots);
    ensure(twin.is_some(), "forged-audio scenario has no genuine-audio twin")
}

pub fn scenarios_ids_unique() -> Check {
    let mut ids: Vec<u8> = enumerate_scenarios().iter().map(|d| d.scenario_id).collect();
    ids.sort();
    ensure(ids == (1..=11).collect::<Vec<u8>>(), format!("ids {ids:?}"))
}

fn record(id: u8, split: Split) -> ScenarioRecord {
    ScenarioRecord {
        clip_id: format!("clip{id}"),
        scenario_id: id,
        source_video_id: "v1".into(),
        source_audio_id: if id == 0 { "v1".into() } else { "a9".into() },
        split,
    }
}

pub fn labels_pristine() -> Check {
    let l = err(derive_labels(&record(0, Split::Train)))?;
    ensure(l == (Authenticity::Real, Authenticity::Real), format!("{l:?}"))
}

pub fn labels_forged_audio() -> Check {
    let forged = enumerate_scenarios().into_iter().find(|d| !d.audio_authentic).unwrap();
    let l = err(derive_labels(&record(forged.scenario_id, Split::Test)))?;
    ensure(l == (Authenticity::Fake, Authenticity::Fake), format!("{l:?}"))
}

pub fn labels_unknown_scenario() -> Check {
    match derive_labels(&record(12, Split::Train)) {
        Err(Error::Schema(_)) => Ok(()),
        other => Err(format!("expected Schema error, got {other:?}")),
    }
}

pub fn report_counts() -> Check {
    let recs: Vec<_> = (0..10)
        .map(|i| record(if i < 4 { 0 } else { 1 + i as u8 }, if i % 2 == 0 { Split::Train } else { Split::Test }))
        .collect();
    let r = err(split_report(&recs))?;
    ensure(r.total == 10 && r.real == 4 && r.fake == 6, format!("{r:?}"))
}

pub fn report_all_train() -> Check {
    let recs: Vec<_> = (0..6).map(|i| record(i as u8, Split::Train)).collect();
    let r = err(split_report(&recs))?;
    ensure(r.per_split.test == 0, "test split not empty")?;
    ensure(r.per_scenario.values().all(|c| c.test == 0), "per-scenario test counts not zero")
}

/// 37,059 pristine and 106,695 forged records spread over all scenarios.
pub fn table_totals_fixture() -> Vec<ScenarioRecord> {
    let mut recs = Vec::with_capacity(143_754);
    for i in 0..37_059 {
        let mut r = record(0, if i % 5 == 0 { Split::Test } else { Split::Train });
        r.clip_id = format!("real{i}");
        recs.push(r);
    }
    for i in 0..106_695 {
        let mut r = record(1 + (i % 11) as u8, if i % 5 == 0 { Split::Test } else { Split::Train });
        r.clip_id = format!("fake{i}");
        recs.push(r);
    }
    recs
}

pub fn report_table_totals() -> Check {
    let r = err(split_report(&table_totals_fixture()))?;
    ensure(r.real == 37_059 && r.fake == 106_695, format!("real {} fake {}", r.real, r.fake))?;
    ensure(r.total == 143_754, format!("total {}", r.total))
}

// ---------------------------------------------------------------- rsfdm

fn scalar_clip(vals: &[f64]) -> Tensor {
    t(&[vals.len(), 1, 1, 1], vals.to_vec())
}

pub fn diffs_scalar() -> Check {
    let d = err(frame_diffs(&scalar_clip(&[1.0, 2.0, 4.0])))?;
    ensure(d.data() == [1.0, 2.0], format!("{:?}", d.data()))
}

pub fn diffs_constant() -> Check {
    let d = err(frame_diffs(&Tensor::full(&[5, 2, 3, 3], 0.4)))?;
    ensure(d.data().iter().all(|&v| v == 0.0), "non-zero diff")
}

pub fn diffs_reversed() -> Check {
    let f = rand_t(&[5, 2, 3, 3], 11);
    let n = f.shape()[0];
    let rev = Tensor::stack(&(0..n).rev().map(|i| f.index_axis0(i)).collect::<Vec<_>>()).unwrap();
    let fwd = err(frame_diffs(&f))?;
    let bwd = err(frame_diffs(&rev))?;
    for i in 0..n - 1 {
        let a = fwd.index_axis0(i);
        let b = bwd.index_axis0(n - 2 - i);
        ensure(a.data().iter().zip(b.data()).all(|(x, y)| *x == -*y), format!("step {i}"))?;
    }
    Ok(())
}

pub fn pad_sum_scalar() -> Check {
    let d = err(pad_sum_diffs(&scalar_clip(&[1.0, 2.0])))?;
    ensure(d.data() == [2.0, 3.0, 4.0], format!("{:?}", d.data()))
}

pub fn pad_sum_zero() -> Check {
    let d = err(pad_sum_diffs(&Tensor::zeros(&[3, 2, 2, 2])))?;
    ensure(d.shape() == [4, 2, 2, 2] && d.data().iter().all(|&v| v == 0.0), "not zero")
}

pub fn pad_sum_single() -> Check {
    let d = err(pad_sum_diffs(&scalar_clip(&[1.75])))?;
    ensure(d.data() == [3.5, 3.5], format!("{:?}", d.data()))
}

fn rsfdm_eval(f: &Tensor, mixer: &Tensor) -> Result<Tensor, String> {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let m = tape.constant(mixer.clone());
    let out = err(rsfdm_apply(&mut tape, fv, m))?;
    Ok(tape.value(out).clone())
}

pub fn rsfdm_static_identity() -> Check {
    let frame = rand_t(&[1, 3, 4, 4], 2);
    let f = Tensor::stack(&vec![frame.index_axis0(0); 6]).unwrap();
    let out = rsfdm_eval(&f, &rand_t(&[3, 3], 3))?;
    ensure(out == f, "static clip modified")
}

pub fn rsfdm_zero_mixer() -> Check {
    let f = rand_t(&[5, 3, 4, 4], 4);
    ensure(rsfdm_eval(&f, &Tensor::zeros(&[3, 3]))? == f, "zero mixer modified clip")
}

pub fn rsfdm_hand_example() -> Check {
    let out = rsfdm_eval(&scalar_clip(&[1.0, 2.0, 4.0]), &t(&[1, 1], vec![0.5]))?;
    ensure(out.data() == [2.0, 5.0, 12.0], format!("{:?}", out.data()))
}

// ---------------------------------------------------------------- dctam

fn qkv_eval(f: &Tensor, w: [&Tensor; 3]) -> Result<[Tensor; 3], String> {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let [a, b, c] = w.map(|x| tape.constant(x.clone()));
    let (q, k, v) = err(project_qkv(&mut tape, fv, a, b, c))?;
    Ok([q, k, v].map(|x| tape.value(x).clone()))
}

pub fn qkv_identity() -> Check {
    let f = rand_t(&[4, 3, 2, 2], 5);
    let id = eye(3);
    let out = qkv_eval(&f, [&id, &id, &id])?;
    ensure(out.iter().all(|x| *x == f), "identity projection changed features")
}

pub fn qkv_zero() -> Check {
    let f = rand_t(&[4, 3, 2, 2], 5);
    let z = Tensor::zeros(&[3, 3]);
    let out = qkv_eval(&f, [&z, &z, &z])?;
    ensure(out.iter().all(|x| x.data().iter().all(|&v| v == 0.0)), "non-zero output")
}

pub fn qkv_explicit() -> Check {
    let f = rand_t(&[3, 4, 3, 2], 5);
    let ws = [rand_t(&[4, 4], 51), rand_t(&[4, 4], 52), rand_t(&[4, 4], 53)];
    let out = qkv_eval(&f, [&ws[0], &ws[1], &ws[2]])?;
    for (w, o) in ws.iter().zip(&out) {
        for ti in 0..3 {
            for oc in 0..4 {
                for y in 0..3 {
                    for x in 0..2 {
                        let want: f64 = (0..4).map(|c| w.at(&[oc, c]) * f.at(&[ti, c, y, x])).sum();
                        close(o.at(&[ti, oc, y, x]), want, 1e-12, "projection")?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn scores_constant_frames() -> Check {
    let frame = rand_t(&[1, 3, 2, 2], 6);
    let f = Tensor::stack(&vec![frame.index_axis0(0); 4]).unwrap();
    let a = err(temporal_scores(&f, &f))?;
    for pix in a.data().chunks(16) {
        ensure(pix.iter().all(|&v| v == pix[0]), "scores vary over (t,s)")?;
    }
    Ok(())
}

pub fn scores_orthogonal() -> Check {
    let f = Tensor::from_fn(&[3, 3, 2, 2], |i| if i[0] == i[1] { 1.5 } else { 0.0 });
    let a = err(temporal_scores(&f, &f))?;
    for (idx, v) in a.data().iter().enumerate() {
        let (ti, s) = ((idx / 3) % 3, idx % 3);
        if ti != s {
            ensure(*v == 0.0, format!("off-diagonal {v}"))?;
        }
    }
    Ok(())
}

pub fn scores_row_sums() -> Check {
    let f = scalar_clip(&[1.0, 2.0, 4.0]);
    let a = err(temporal_scores(&f, &f))?;
    let sums: Vec<f64> = a.data().chunks(3).map(|r| r.iter().sum()).collect();
    ensure(sums == [7.0, 14.0, 28.0], format!("{sums:?}"))
}

pub fn variance_static() -> Check {
    let frame = rand_t(&[1, 2, 3, 3], 7);
    let f = Tensor::stack(&vec![frame.index_axis0(0); 4]).unwrap();
    let a = err(temporal_scores(&f, &f))?;
    for k in 1..=9 {
        let vm = err(variance_activate(&a, k))?;
        ensure(vm.variance.data().iter().all(|&v| v == 0.0), "non-zero variance")?;
        ensure(vm.active() == 0, format!("k={k}: mask not empty"))?;
    }
    Ok(())
}

/// Scores whose row sums over `T = 4` have the given population variances.
fn scores_with_variance(values: &[u32]) -> Tensor {
    let rows = |v: u32| -> [f64; 4] {
        match v {
            1 => [1.0, -1.0, 1.0, -1.0],
            2 => [2.0, -2.0, 0.0, 0.0],
            3 => [3.0, -1.0, -1.0, -1.0],
            4 => [2.0, -2.0, 2.0, -2.0],
            _ => unreachable!(),
        }
    };
    let mut data = Vec::new();
    for &v in values {
        for s in rows(v) {
            data.extend([s, 0.0, 0.0, 0.0]);
        }
    }
    t(&[2, 2, 4, 4], data)
}

pub fn variance_order_statistic() -> Check {
    let vm = err(variance_activate(&scores_with_variance(&[3, 1, 4, 2]), 2))?;
    ensure(vm.variance.data() == [3.0, 1.0, 4.0, 2.0], format!("{:?}", vm.variance.data()))?;
    ensure(vm.threshold == 2.0, format!("threshold {}", vm.threshold))?;
    ensure(vm.mask.data() == [1.0, 0.0, 1.0, 0.0], format!("{:?}", vm.mask.data()))
}

pub fn variance_k_max() -> Check {
    let vm = err(variance_activate(&scores_with_variance(&[3, 1, 4, 2]), 4))?;
    ensure(vm.active() == 0, "mask not empty at k = H*W")
}

fn update_eval(f: &Tensor, alpha: f64, k: usize) -> Result<(Tensor, usize), String> {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let a = tape.constant(t(&[1], vec![alpha]));
    let (out, vm) = err(discrepancy_update(&mut tape, fv, (fv, fv, fv), a, k))?;
    Ok((tape.value(out).clone(), vm.active()))
}

pub fn update_alpha_zero() -> Check {
    let f = rand_t(&[4, 2, 3, 3], 8);
    ensure(update_eval(&f, 0.0, 3)?.0 == f, "alpha 0 changed features")
}

pub fn update_static() -> Check {
    let frame = rand_t(&[1, 2, 3, 3], 9);
    let f = Tensor::stack(&vec![frame.index_axis0(0); 4]).unwrap();
    let (out, active) = update_eval(&f, 0.8, 2)?;
    ensure(active == 0 && out == f, "static clip changed")
}

pub fn update_single_pixel() -> Check {
    // pixel 0 is static, pixel 1 carries [1, 3] over two frames
    let f = t(&[2, 1, 1, 2], vec![1.0, 1.0, 1.0, 3.0]);
    let alpha = 0.5;
    let (out, active) = update_eval(&f, alpha, 1)?;
    ensure(active == 1, format!("{active} active pixels"))?;
    let v = [1.0, 3.0];
    for ti in 0..2 {
        let logits: Vec<f64> = v.iter().map(|s| v[ti] * s).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let att: f64 = logits.iter().zip(v).map(|(l, s)| l.exp() / z * s).sum();
        close(out.at(&[ti, 0, 0, 1]), v[ti] + alpha * att, 1e-12, "active pixel")?;
        ensure(out.at(&[ti, 0, 0, 0]) == 1.0, "inactive pixel changed")?;
    }
    Ok(())
}

fn indexed(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| (i[0] * 1000 + i[1] * 100 + i[2] * 10 + i[3]) as f64)
}

pub fn axis_round_trip() -> Check {
    let f = rand_t(&[4, 3, 5, 2], 10);
    let (v, h) = err(axis_restore(&err(axis_reshape(&f))?))?;
    ensure(v == f && h == f, "round trip changed tensor")
}

pub fn axis_multiset() -> Check {
    let f = rand_t(&[4, 3, 5, 2], 10);
    let views = err(axis_reshape(&f))?;
    let sorted = |x: &Tensor| {
        let mut d = x.data().to_vec();
        d.sort_by(f64::total_cmp);
        d
    };
    ensure(sorted(&views.f_v) == sorted(&f) && sorted(&views.f_h) == sorted(&f), "multiset changed")
}

pub fn axis_index_map() -> Check {
    let (tn, c, h, w) = (3, 2, 4, 5);
    let f = indexed(&[tn, c, h, w]);
    let views = err(axis_reshape(&f))?;
    ensure(views.f_v.shape() == [w, c, h, tn], "vertical view shape")?;
    ensure(views.f_h.shape() == [h, c, tn, w], "horizontal view shape")?;
    for ti in 0..tn {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let want = f.at(&[ti, ci, y, x]);
                    ensure(views.f_v.at(&[x, ci, y, ti]) == want, "f_v index")?;
                    ensure(views.f_h.at(&[y, ci, ti, x]) == want, "f_h index")?;
                }
            }
        }
    }
    Ok(())
}

fn identity_kernel(c: usize) -> Tensor {
    Tensor::from_fn(&[c, c, 1, 3], |i| if i[0] == i[1] && i[3] == 1 { 1.0 } else { 0.0 })
}

fn aggregate_eval(view: &Tensor, kernels: [&Tensor; 3]) -> Result<Tensor, String> {
    let mut tape = Tape::new();
    let v = tape.constant(view.clone());
    let ks = kernels.map(|k| tape.constant(k.clone()));
    let out = err(multigrain_aggregate(&mut tape, v, ks))?;
    Ok(tape.value(out).clone())
}

pub fn aggregate_constant() -> Check {
    let view = Tensor::full(&[2, 3, 2, 8], 0.7);
    let k = identity_kernel(3);
    let out = aggregate_eval(&view, [&k, &k, &k])?;
    all_close(out.data(), view.data(), 1e-15, "constant")
}

pub fn aggregate_zero() -> Check {
    let z = Tensor::zeros(&[2, 2, 1, 3]);
    let out = aggregate_eval(&rand_t(&[3, 2, 2, 8], 12), [&z, &z, &z])?;
    ensure(out.data().iter().all(|&v| v == 0.0), "non-zero output")
}

pub fn aggregate_ramp() -> Check {
    let k = identity_kernel(1);
    let out = aggregate_eval(&t(&[1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]), [&k, &k, &k])?;
    let want: Vec<f64> = (0..4)
        .map(|i| ([0.0, 1.0, 2.0, 3.0][i] + [0.5, 0.5, 2.5, 2.5][i] + 1.5) / 3.0)
        .collect();
    all_close(out.data(), &want, 1e-15, "ramp")
}

pub fn dctam_vars(tape: &mut Tape, c: usize, alpha: f64, kernels: Option<u64>) -> DctamVars {
    let id = eye(c);
    let mut k = |s: u64| match kernels {
        Some(seed) => tape.constant(rand_t(&[c, c, 1, 3], seed + s)),
        None => tape.constant(Tensor::zeros(&[c, c, 1, 3])),
    };
    let vertical = [k(0), k(1), k(2)];
    let horizontal = [k(3), k(4), k(5)];
    DctamVars {
        wq: tape.constant(id.clone()),
        wk: tape.constant(id.clone()),
        wv: tape.constant(id),
        alpha: tape.constant(t(&[1], vec![alpha])),
        vertical,
        horizontal,
    }
}

pub fn dctam_bypass() -> Check {
    let f = rand_t(&[4, 3, 4, 4], 13);
    let mut tape = Tape::new();
    let vars = dctam_vars(&mut tape, 3, 0.0, None);
    let fv = tape.constant(f.clone());
    let (out, _) = err(dctam_apply(&mut tape, fv, &vars, 8))?;
    ensure(*tape.value(out) == f, "bypass changed features")
}

pub fn dctam_shape() -> Check {
    let f = rand_t(&[8, 4, 16, 16], 14);
    let mut tape = Tape::new();
    let vars = dctam_vars(&mut tape, 4, 0.3, Some(100));
    let fv = tape.constant(f);
    let (out, _) = err(dctam_apply(&mut tape, fv, &vars, 128))?;
    ensure(tape.shape(out) == [8, 4, 16, 16], format!("{:?}", tape.shape(out)))
}

// ---------------------------------------------------------------- audio

pub fn logmel_silence() -> Check {
    let w = err(Waveform::new(vec![0.0; 16_000], 16_000, "s"))?;
    let f = err(encode(&w, &LogMel::default()))?;
    ensure(f.data.data().iter().all(|&v| v == -10.0), "silence is not the log floor")
}

pub fn logmel_determinism() -> Check {
    let mut r = rng(15);
    let samples: Vec<f64> = (0..8000).map(|_| r.random_range(-0.5..0.5)).collect();
    let w = err(Waveform::new(samples, 16_000, "n"))?;
    let enc = LogMel::default();
    ensure(err(encode(&w, &enc))? == err(encode(&w, &enc))?, "encodings differ")
}

pub fn logmel_step_count() -> Check {
    let w = err(Waveform::new(vec![0.1; 16_000], 16_000, "one"))?;
    let enc = LogMel::default();
    let f = err(encode(&w, &enc))?;
    ensure(f.steps() == 50, format!("{} steps", f.steps()))?;
    close(f.hop, 0.02, 1e-15, "hop")?;
    close(f.steps() as f64 * f.hop, 1.0, 1e-12, "covered duration")?;
    ensure(f.dim() == enc.output_dim(), "feature width")
}

fn head_logit(f_a: &Tensor, w: &Tensor, b: f64) -> Result<f64, String> {
    let mut tape = Tape::new();
    let fa = tape.constant(f_a.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(t(&[1], vec![b]));
    let out = err(audio_head(&mut tape, fa, wv, bv))?;
    Ok(tape.value(out).item())
}

pub fn audio_head_zero() -> Check {
    let l = head_logit(&Tensor::zeros(&[6, 5]), &Tensor::zeros(&[1, 5]), 0.0)?;
    ensure(l == 0.0, format!("logit {l}"))
}

pub fn audio_head_permutation() -> Check {
    let f = rand_t(&[6, 5], 16);
    let w = rand_t(&[1, 5], 17);
    let perm = [3, 0, 5, 1, 4, 2];
    let p = Tensor::stack(&perm.iter().map(|&i| f.index_axis0(i)).collect::<Vec<_>>()).unwrap();
    close(head_logit(&p, &w, 0.3)?, head_logit(&f, &w, 0.3)?, 1e-12, "permuted logit")
}

fn map_vars(tape: &mut Tape, c_in: usize, c: usize, seed: Option<u64>) -> MapVars {
    let mut mk = |s: &[usize], k: u64| match seed {
        Some(sd) => tape.constant(rand_t(s, sd + k)),
        None => tape.constant(Tensor::zeros(s)),
    };
    MapVars {
        w1: mk(&[c, c_in, 3, 3], 0),
        b1: mk(&[c], 1),
        w2: mk(&[c, c, 3, 3], 2),
        b2: mk(&[c], 3),
    }
}

pub fn audio_map_zero() -> Check {
    let mut tape = Tape::new();
    let p = map_vars(&mut tape, 1, 4, None);
    let fa = tape.constant(rand_t(&[16, 64], 18));
    let out = err(intermediate_features(&mut tape, fa, 8, &p))?;
    ensure(tape.value(out).data().iter().all(|&v| v == 0.0), "non-zero map")
}

pub fn audio_alignment() -> Check {
    let (tn, duration) = (8usize, 0.32);
    let t_a = 2 * tn;
    let hop = duration / t_a as f64;
    for (i, u) in alignment_positions(tn, t_a).into_iter().enumerate() {
        // audio step j covers [j·hop, (j+1)·hop); its centre sits at (j+0.5)·hop
        let at = (u + 0.5) * hop;
        let want = (i as f64 + 0.5) / tn as f64 * duration;
        ensure((at - want).abs() <= hop, format!("step {i}: {at} vs {want}"))?;
    }
    Ok(())
}

pub fn audio_map_shape() -> Check {
    let mut tape = Tape::new();
    let p = map_vars(&mut tape, 2, 3, Some(19));
    let fa = tape.constant(rand_t(&[21, 100], 20));
    let out = err(intermediate_features(&mut tape, fa, 7, &p))?;
    ensure(tape.shape(out) == [7, 3, 8, 8], format!("{:?}", tape.shape(out)))
}

// ----------------------------------------------------------------- vafm

pub fn qkv_vars(tape: &mut Tape, ca: usize, cv: usize, w: usize, seed: Option<u64>) -> QkvVars {
    let mut mk = |s: &[usize], k: u64| match seed {
        Some(sd) => tape.constant(rand_t(s, sd + k).scale(0.3)),
        None => tape.constant(Tensor::zeros(s)),
    };
    QkvVars {
        align_w: mk(&[w, ca], 0),
        align_b: mk(&[w], 1),
        query_w: mk(&[w, w, 3, 3, 3], 2),
        query_b: mk(&[w], 3),
        key_w: mk(&[w, cv, 3, 3, 3], 4),
        key_b: mk(&[w], 5),
        value_w: mk(&[w, ca + cv], 6),
        value_b: mk(&[w], 7),
    }
}

pub fn vafm_zero_params() -> Check {
    let mut tape = Tape::new();
    let p = qkv_vars(&mut tape, 3, 2, 4, None);
    let a = tape.constant(rand_t(&[4, 3, 4, 4], 21));
    let v = tape.constant(rand_t(&[4, 2, 8, 8], 22));
    let st = err(build_qkv(&mut tape, a, v, &p, 2))?;
    for x in [st.query, st.key, st.value] {
        ensure(tape.value(x).data().iter().all(|&v| v == 0.0), "non-zero projection")?;
    }
    Ok(())
}

pub fn vafm_head_shapes() -> Check {
    let mut tape = Tape::new();
    let p = qkv_vars(&mut tape, 8, 8, 64, Some(23));
    let a = tape.constant(rand_t(&[8, 8, 8, 8], 24));
    let v = tape.constant(rand_t(&[8, 8, 16, 16], 25));
    let st = err(build_qkv(&mut tape, a, v, &p, 4))?;
    for x in [st.query, st.key, st.value] {
        let s = err(split_heads(tape.value(x), 4))?;
        ensure(s.shape() == [4, 16, 8, 8, 8], format!("{:?}", s.shape()))?;
    }
    Ok(())
}

pub fn vafm_value_selects_audio() -> Check {
    let (ca, cv) = (3, 2);
    let mut tape = Tape::new();
    let mut p = qkv_vars(&mut tape, ca, cv, ca, Some(26));
    p.value_w = tape.constant(Tensor::from_fn(&[ca, ca + cv], |i| if i[0] == i[1] { 1.0 } else { 0.0 }));
    p.value_b = tape.constant(Tensor::zeros(&[ca]));
    let audio = rand_t(&[4, ca, 4, 4], 27);
    let a = tape.constant(audio.clone());
    let v = tape.constant(rand_t(&[4, cv, 8, 8], 28));
    let st = err(build_qkv(&mut tape, a, v, &p, 1))?;
    ensure(*tape.value(st.value) == audio, "value differs from audio map")
}

fn state(tape: &mut Tape, q: Tensor, k: Tensor, v: Tensor, heads: usize) -> FusionState {
    FusionState {
        query: tape.constant(q),
        key: tape.constant(k),
        value: tape.constant(v),
        heads,
    }
}

pub fn attention_uniform_keys() -> Check {
    let mut tape = Tape::new();
    let frame = rand_t(&[1, 4, 2, 2], 29);
    let k = Tensor::stack(&vec![frame.index_axis0(0); 5]).unwrap();
    let st = state(&mut tape, rand_t(&[5, 4, 2, 2], 30), k, rand_t(&[5, 4, 2, 2], 31), 2);
    let w = err(attention_weights(&tape, &st, Divisor::Sqrt))?;
    all_close(w.data(), &vec![0.2; w.len()], 1e-15, "weights")
}

pub fn attention_matching_key() -> Check {
    for scale in [10.0, 20.0] {
        // tokens are 4-channel 1x1 maps; key 2 equals every query
        let e = |j: usize| Tensor::from_fn(&[1, 4, 1, 1], |i| if i[1] == j { scale } else { 0.0 });
        let q = Tensor::stack(&vec![e(0).index_axis0(0); 4]).unwrap();
        let k = Tensor::stack(&[1, 2, 0, 3].map(|j| e(j).index_axis0(0))).unwrap();
        let mut tape = Tape::new();
        let st = state(&mut tape, q, k, rand_t(&[4, 4, 1, 1], 32), 1);
        let w = err(attention_weights(&tape, &st, Divisor::Sqrt))?;
        for ti in 0..4 {
            let row = &w.data()[ti * 4..ti * 4 + 4];
            // closed form: exp(s²/2) / (exp(s²/2) + 3)
            let z = (scale * scale / 2.0).exp();
            close(row[2], z / (z + 3.0), 1e-12, "matching weight")?;
            ensure(row[2] > 0.9, format!("scale {scale}: weight {}", row[2]))?;
        }
    }
    Ok(())
}

pub fn attention_row_stochastic() -> Check {
    let mut tape = Tape::new();
    let st = state(
        &mut tape,
        rand_t(&[6, 8, 3, 3], 33).scale(3.0),
        rand_t(&[6, 8, 3, 3], 34).scale(3.0),
        rand_t(&[6, 8, 3, 3], 35),
        4,
    );
    for div in [Divisor::Sqrt, Divisor::Height] {
        let w = err(attention_weights(&tape, &st, div))?;
        for row in w.data().chunks(6) {
            ensure(row.iter().all(|&x| x >= 0.0), "negative weight")?;
            close(row.iter().sum(), 1.0, 1e-6, "row sum")?;
        }
    }
    Ok(())
}

pub fn fuse_vars(tape: &mut Tape, w: usize, seed: u64, zero_out: bool, zero_psi: bool) -> FuseVars {
    let mut mk = |s: &[usize], k: u64, zero: bool| {
        if zero {
            tape.constant(Tensor::zeros(s))
        } else {
            tape.constant(rand_t(s, seed + k).scale(0.5))
        }
    };
    FuseVars {
        out_w: mk(&[w, w], 0, zero_out),
        out_b: mk(&[w], 1, zero_out),
        psi_w1: mk(&[w, w], 2, false),
        psi_b1: mk(&[w], 3, false),
        psi_w2: mk(&[w, w], 4, zero_psi),
        psi_b2: mk(&[w], 5, zero_psi),
    }
}

pub fn fuse_identity_psi() -> Check {
    let mut tape = Tape::new();
    let p = fuse_vars(&mut tape, 4, 36, true, true);
    let v = rand_t(&[3, 4, 2, 2], 37);
    let att = tape.constant(rand_t(&[3, 4, 2, 2], 38));
    let vv = tape.constant(v.clone());
    let out = err(fuse(&mut tape, att, vv, &p))?;
    ensure(*tape.value(out) == v, "output differs from V")
}

pub fn fuse_pure_projection() -> Check {
    let mut tape = Tape::new();
    let mut p = fuse_vars(&mut tape, 4, 39, false, true);
    p.psi_w1 = tape.constant(Tensor::zeros(&[4, 4]));
    p.psi_b1 = tape.constant(Tensor::zeros(&[4]));
    let att = tape.constant(rand_t(&[3, 4, 2, 2], 40));
    let vv = tape.constant(Tensor::zeros(&[3, 4, 2, 2]));
    let out = err(fuse(&mut tape, att, vv, &p))?;
    let proj = err(tape.channel_mix(att, p.out_w, Some(p.out_b)))?;
    ensure(tape.value(out) == tape.value(proj), "output is not the projected attention")
}

// ------------------------------------------------------------------ lfs

pub fn dct_constant_block() -> Check {
    let n = 10;
    let basis = dct_matrix(n);
    let c = dct2(&vec![0.3; n * n], n, &basis);
    close(c[0], 0.3 * n as f64, 1e-12, "DC")?;
    ensure(c[1..].iter().all(|v| v.abs() < 1e-12), "AC coefficients not zero")
}

pub fn dct_round_trip() -> Check {
    for n in [4, 8, 10] {
        let basis = dct_matrix(n);
        let x = rand_t(&[n * n], 41 + n as u64);
        let back = idct2(&dct2(x.data(), n, &basis), n, &basis);
        all_close(&back, x.data(), 1e-10, "round trip")?;
    }
    Ok(())
}

pub fn dct_parseval() -> Check {
    let n = 8;
    let basis = dct_matrix(n);
    let mut x = vec![0.0; n * n];
    x[3 * n + 5] = 0.9;
    let c = dct2(&x, n, &basis);
    close(c.iter().map(|v| v * v).sum(), 0.81, 1e-10, "energy")
}

fn frame_stats(frame: &Tensor, window: usize, bands: usize) -> Tensor {
    band_stats(&block_dct(frame, window, window).unwrap(), bands).unwrap()
}

pub fn lfs_constant_image() -> Check {
    let s = frame_stats(&Tensor::full(&[3, 16, 16], 0.5), 8, 6);
    let floor = LOG_EPS.log10();
    for blk in 0..4 {
        ensure(s.data()[blk].is_finite(), "band 0 not finite")?;
        for b in 1..6 {
            close(s.data()[b * 4 + blk], floor, 1e-6, &format!("band {b}"))?;
        }
    }
    Ok(())
}

/// Direct double-sum DCT and per-band mean, no shared code with the
/// library path.
pub fn band_oracle(luma: &[f64], w: usize, y0: usize, x0: usize, n: usize, bands: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut acc = vec![0.0; bands];
    let mut count = vec![0usize; bands];
    for u in 0..n {
        for v in 0..n {
            let au = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let av = if v == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let mut c = 0.0;
            for y in 0..n {
                for x in 0..n {
                    c += luma[(y0 + y) * w + x0 + x]
                        * (PI * (2 * y + 1) as f64 * u as f64 / (2 * n) as f64).cos()
                        * (PI * (2 * x + 1) as f64 * v as f64 / (2 * n) as f64).cos();
                }
            }
            let b = (u + v) * bands / (2 * n - 1);
            acc[b] += (au * av * c).abs();
            count[b] += 1;
        }
    }
    (0..bands).map(|b| (acc[b] / count[b] as f64 + LOG_EPS).log10()).collect()
}

pub fn lfs_white_noise() -> Check {
    let frame = unit_t(&[1, 16, 16], 1);
    let (n, bands) = (8, 6);
    let s = frame_stats(&frame, n, bands);
    for by in 0..2 {
        for bx in 0..2 {
            let want = band_oracle(frame.data(), 16, by * n, bx * n, n, bands);
            for b in 0..bands {
                close(s.at(&[b, by, bx]), want[b], 1e-10, &format!("band {b}"))?;
            }
            // the mean lifts band 0 above every AC band
            ensure((1..bands).all(|b| want[0] > want[b]), "band 0 not dominant")?;
        }
    }
    Ok(())
}

/// Partition-and-mean over given coefficients, same traversal order as the
/// library so the comparison is exact.
pub fn band_stats_exact() -> Check {
    let (n, bands) = (8, 6);
    let coeffs = rand_t(&[3, 2, n, n], 46).scale(5.0);
    let s = err(band_stats(&coeffs, bands))?;
    for by in 0..3 {
        for bx in 0..2 {
            let mut acc = vec![0.0; bands];
            let mut count = vec![0usize; bands];
            for u in 0..n {
                for v in 0..n {
                    let b = (u + v) * bands / (2 * n - 1);
                    acc[b] += coeffs.at(&[by, bx, u, v]).abs();
                    count[b] += 1;
                }
            }
            for b in 0..bands {
                let want = (acc[b] / count[b] as f64 + LOG_EPS).log10();
                ensure(s.at(&[b, by, bx]) == want, format!("block ({by},{bx}) band {b}"))?;
            }
        }
    }
    Ok(())
}

pub fn lfs_brightness_doubling() -> Check {
    let dim = frame_stats(&Tensor::full(&[3, 16, 16], 0.3), 8, 6);
    let bright = frame_stats(&Tensor::full(&[3, 16, 16], 0.6), 8, 6);
    for blk in 0..4 {
        // ε perturbs the shift by about ε / (2 · band-0 mean · ln 10) ≈ 5e-9
        close(bright.data()[blk] - dim.data()[blk], 2f64.log10(), 1e-7, "band 0 shift")?;
        for b in 1..6 {
            close(bright.data()[b * 4 + blk], dim.data()[b * 4 + blk], 1e-6, "AC band")?;
        }
    }
    Ok(())
}

pub fn band_partition() -> Check {
    let (n, bands) = (10, 6);
    let mut seen = vec![0usize; bands];
    for u in 0..n {
        for v in 0..n {
            let b = band_index(u, v, n, bands);
            ensure(b < bands, "band out of range")?;
            seen[b] += 1;
        }
    }
    ensure(seen.iter().all(|&c| c > 0), format!("empty band {seen:?}"))
}

// ----------------------------------------------------------------- head

pub fn head_vars(tape: &mut Tape, c: usize, w: usize, k: usize, seed: Option<u64>) -> HeadVars {
    let mut mk = |s: &[usize], j: u64| match seed {
        Some(sd) => tape.constant(rand_t(s, sd + j).scale(0.5)),
        None => tape.constant(Tensor::zeros(s)),
    };
    let sep = |mk: &mut dyn FnMut(&[usize], u64) -> Var, ci: usize, j: u64| SeparableVars {
        depth_w: mk(&[ci, 1, k, k], j),
        depth_b: mk(&[ci], j + 1),
        point_w: mk(&[w, ci], j + 2),
        point_b: mk(&[w], j + 3),
    };
    let b0 = sep(&mut mk, c, 0);
    let b1 = sep(&mut mk, w, 4);
    HeadVars {
        blocks: [b0, b1],
        fc_w: mk(&[1, w], 8),
        fc_b: mk(&[1], 9),
    }
}

pub fn head_zero_weights() -> Check {
    let mut tape = Tape::new();
    let p = head_vars(&mut tape, 3, 4, 3, None);
    let x = tape.constant(rand_t(&[4, 2, 8, 8], 42));
    let fq = tape.constant(rand_t(&[4, 1, 8, 8], 43));
    let l = err(head_forward(&mut tape, x, Some(fq), &p))?;
    let out = DetectionOutput::from_logits(tape.value(l).item(), 0.0);
    ensure(out.video_logit == 0.0 && out.video_prob == 0.5, format!("{out:?}"))
}

pub fn head_permutation_pointwise() -> Check {
    let mut store = ParamStore::new();
    let head = FusionHead::new(&mut store, 5, HeadConfig { width: 6, kernel: 1 }, &mut rng(44));
    let x = rand_t(&[6, 5, 8, 8], 45);
    let perm = [2, 5, 0, 4, 1, 3];
    let xp = Tensor::stack(&perm.iter().map(|&i| x.index_axis0(i)).collect::<Vec<_>>()).unwrap();
    let logit = |input: &Tensor| -> Result<f64, String> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let v = tape.constant(input.clone());
        let l = err(head.forward(&mut tape, &bound, v, None))?;
        Ok(tape.value(l).item())
    };
    close(logit(&xp)?, logit(&x)?, 1e-12, "permuted logit")
}

pub fn loss_confident() -> Check {
    let out = DetectionOutput::from_logits(30.0, -30.0);
    let l = joint_loss_value(&out, (Authenticity::Fake, Authenticity::Real), 1.0);
    ensure(l < 1e-6, format!("loss {l}"))
}

pub fn loss_zero_logits() -> Check {
    let l = joint_loss_value(&DetectionOutput::from_logits(0.0, 0.0), (Authenticity::Real, Authenticity::Fake), 1.0);
    close(l, 2.0 * std::f64::consts::LN_2, 1e-15, "loss")
}

pub fn loss_video_only() -> Check {
    for (z, label) in [(1.3, Authenticity::Real), (-0.4, Authenticity::Fake), (6.0, Authenticity::Fake)] {
        let y = label.target();
        let p = 1.0 / (1.0 + (-z as f64).exp());
        let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let l = joint_loss_value(&DetectionOutput::from_logits(z, 9.0), (label, Authenticity::Real), 0.0);
        close(l, direct, 1e-12, "video-only loss")?;
    }
    Ok(())
}

pub type Example = (&'static str, fn() -> Check);

pub const EXAMPLES: &[Example] = &[
    ("load_clip_identity_resize", load_clip_identity_resize),
    ("load_clip_missing_frames", load_clip_missing_frames),
    ("load_clip_downscale_range", load_clip_downscale_range),
    ("synth_determinism", synth_determinism),
    ("synth_jitter_labels", synth_jitter_labels),
    ("synth_sync_correlation", synth_sync_correlation),
    ("normalize_constant_clip", normalize_constant_clip),
    ("normalize_zero_mean", normalize_zero_mean),
    ("normalize_unit_variance", normalize_unit_variance),
    ("scenarios_count", scenarios_count),
    ("scenarios_fundamental_pair", scenarios_fundamental_pair),
    ("scenarios_ids_unique", scenarios_ids_unique),
    ("labels_pristine", labels_pristine),
    ("labels_forged_audio", labels_forged_audio),
    ("labels_unknown_scenario", labels_unknown_scenario),
    ("report_counts", report_counts),
    ("report_all_train", report_all_train),
    ("report_table_totals", report_table_totals),
    ("diffs_scalar", diffs_scalar),
    ("diffs_constant", diffs_constant),
    ("diffs_reversed", diffs_reversed),
    ("pad_sum_scalar", pad_sum_scalar),
    ("pad_sum_zero", pad_sum_zero),
    ("pad_sum_single", pad_sum_single),
    ("rsfdm_static_identity", rsfdm_static_identity),
    ("rsfdm_zero_mixer", rsfdm_zero_mixer),
    ("rsfdm_hand_example", rsfdm_hand_example),
    ("qkv_identity", qkv_identity),
    ("qkv_zero", qkv_zero),
    ("qkv_explicit", qkv_explicit),
    ("scores_constant_frames", scores_constant_frames),
    ("scores_orthogonal", scores_orthogonal),
    ("scores_row_sums", scores_row_sums),
    ("variance_static", variance_static),
    ("variance_order_statistic", variance_order_statistic),
    ("variance_k_max", variance_k_max),
    ("update_alpha_zero", update_alpha_zero),
    ("update_static", update_static),
    ("update_single_pixel", update_single_pixel),
    ("axis_round_trip", axis_round_trip),
    ("axis_multiset", axis_multiset),
    ("axis_index_map", axis_index_map),
    ("aggregate_constant", aggregate_constant),
    ("aggregate_zero", aggregate_zero),
    ("aggregate_ramp", aggregate_ramp),
    ("dctam_bypass", dctam_bypass),
    ("dctam_shape", dctam_shape),
    ("logmel_silence", logmel_silence),
    ("logmel_determinism", logmel_determinism),
    ("logmel_step_count", logmel_step_count),
    ("audio_head_zero", audio_head_zero),
    ("audio_head_permutation", audio_head_permutation),
    ("audio_map_zero", audio_map_zero),
    ("audio_alignment", audio_alignment),
    ("audio_map_shape", audio_map_shape),
    ("vafm_zero_params", vafm_zero_params),
    ("vafm_head_shapes", vafm_head_shapes),
    ("vafm_value_selects_audio", vafm_value_selects_audio),
    ("attention_uniform_keys", attention_uniform_keys),
    ("attention_matching_key", attention_matching_key),
    ("attention_row_stochastic", attention_row_stochastic),
    ("fuse_identity_psi", fuse_identity_psi),
    ("fuse_pure_projection", fuse_pure_projection),
    ("dct_constant_block", dct_constant_block),
    ("dct_round_trip", dct_round_trip),
    ("dct_parseval", dct_parseval),
    ("lfs_constant_image", lfs_constant_image),
    ("lfs_white_noise", lfs_white_noise),
    ("band_stats_exact", band_stats_exact),
    ("lfs_brightness_doubling", lfs_brightness_doubling),
    ("band_partition", band_partition),
    ("head_zero_weights", head_zero_weights),
    ("head_permutation_pointwise", head_permutation_pointwise),
    ("loss_confident", loss_confident),
    ("loss_zero_logits", loss_zero_logits),
    ("loss_video_only", loss_video_only),
];

pub fn run_all(list: &[Example]) -> Vec<(&'static str, Check)> {
    list.iter().map(|(name, f)| (*name, f())).collect()
}

// ------------------------------------------------------------ gradients

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Weighted sum against fixed random weights so every output entry matters.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> tfgc_autograd::Result<Var> {
    let w = tape.constant(rand_t(tape.shape(y), seed));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn lift(e: Error) -> tfgc_autograd::TensorError {
    tfgc_autograd::TensorError::Invalid {
        op: "core",
        msg: e.to_string(),
    }
}

fn gradcheck(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> tfgc_autograd::Result<Var>,
) -> Check {
    let r = err(tfgc_autograd::gradcheck::check_gradients(inputs, GRAD_EPS, f))?;
    ensure(
        r.max_rel_err < GRAD_TOL,
        format!("{name}: max relative error {:.3e} at {:?}", r.max_rel_err, r.worst),
    )
}

pub fn grad_rsfdm() -> Check {
    gradcheck("rsfdm_apply", &[rand_t(&[4, 2, 3, 3], 60), rand_t(&[2, 2], 61)], |tape, v| {
        let y = rsfdm_apply(tape, v[0], v[1]).map_err(lift)?;
        probe(tape, y, 62)
    })
}

pub fn grad_dctam() -> Check {
    let (c, k) = (2, 8);
    let mut inputs = vec![
        rand_t(&[4, c, 4, 4], 63),
        rand_t(&[c, c], 64),
        rand_t(&[c, c], 65),
        rand_t(&[c, c], 66),
        t(&[1], vec![0.7]),
    ];
    inputs.extend((0..6).map(|i| rand_t(&[c, c, 1, 3], 67 + i)));
    gradcheck("dctam_apply", &inputs, move |tape, v| {
        let vars = DctamVars {
            wq: v[1],
            wk: v[2],
            wv: v[3],
            alpha: v[4],
            vertical: [v[5], v[6], v[7]],
            horizontal: [v[8], v[9], v[10]],
        };
        let (y, vm) = dctam_apply(tape, v[0], &vars, k).map_err(lift)?;
        assert!(vm.active() > 0, "toy input must activate some pixels");
        probe(tape, y, 73)
    })
}

pub fn grad_cross_attend_fuse() -> Check {
    let (tn, w, g, heads) = (4, 8, 4, 2);
    let mut inputs = vec![
        rand_t(&[tn, w, g, g], 74),
        rand_t(&[tn, w, g, g], 75),
        rand_t(&[tn, w, g, g], 76),
    ];
    for (i, s) in [[w, w].as_slice(), &[w], &[w, w], &[w], &[w, w], &[w]].iter().enumerate() {
        inputs.push(rand_t(s, 77 + i as u64).scale(0.5));
    }
    gradcheck("cross_attend+fuse", &inputs, move |tape, v| {
        let st = FusionState {
            query: v[0],
            key: v[1],
            value: v[2],
            heads,
        };
        let att = cross_attend(tape, &st, Divisor::Sqrt).map_err(lift)?;
        let p = FuseVars {
            out_w: v[3],
            out_b: v[4],
            psi_w1: v[5],
            psi_b1: v[6],
            psi_w2: v[7],
            psi_b2: v[8],
        };
        let y = fuse(tape, att, v[2], &p).map_err(lift)?;
        probe(tape, y, 83)
    })
}

pub fn grad_build_qkv() -> Check {
    let (tn, ca, cv, w) = (4, 2, 3, 4);
    let shapes: [&[usize]; 8] = [&[w, ca], &[w], &[w, w, 3, 3, 3], &[w], &[w, cv, 3, 3, 3], &[w], &[w, ca + cv], &[w]];
    let mut inputs = vec![rand_t(&[tn, ca, 4, 4], 84), rand_t(&[tn, cv, 8, 8], 85)];
    inputs.extend(shapes.iter().enumerate().map(|(i, s)| rand_t(s, 86 + i as u64).scale(0.4)));
    gradcheck("build_qkv+cross_attend", &inputs, |tape, v| {
        let p = QkvVars {
            align_w: v[2],
            align_b: v[3],
            query_w: v[4],
            query_b: v[5],
            key_w: v[6],
            key_b: v[7],
            value_w: v[8],
            value_b: v[9],
        };
        let st = build_qkv(tape, v[0], v[1], &p, 2).map_err(lift)?;
        let y = cross_attend(tape, &st, Divisor::Sqrt).map_err(lift)?;
        probe(tape, y, 94)
    })
}

pub fn grad_head() -> Check {
    let (c, fq, w, k) = (3, 2, 4, 3);
    let shapes: [&[usize]; 10] = [
        &[c + fq, 1, k, k],
        &[c + fq],
        &[w, c + fq],
        &[w],
        &[w, 1, k, k],
        &[w],
        &[w, w],
        &[w],
        &[1, w],
        &[1],
    ];
    let mut inputs = vec![rand_t(&[3, c, 4, 4], 95), rand_t(&[3, fq, 4, 4], 96)];
    inputs.extend(shapes.iter().enumerate().map(|(i, s)| rand_t(s, 97 + i as u64).scale(0.6)));
    gradcheck("head_forward", &inputs, |tape, v| {
        let sep = |o: usize| SeparableVars {
            depth_w: v[o],
            depth_b: v[o + 1],
            point_w: v[o + 2],
            point_b: v[o + 3],
        };
        let p = HeadVars {
            blocks: [sep(2), sep(6)],
            fc_w: v[10],
            fc_b: v[11],
        };
        head_forward(tape, v[0], Some(v[1]), &p).map_err(lift)
    })
}

pub fn grad_joint_loss() -> Check {
    for (labels, wa) in [
        ((Authenticity::Fake, Authenticity::Real), 1.0),
        ((Authenticity::Real, Authenticity::Fake), 0.3),
    ] {
        gradcheck("joint_loss", &[t(&[1], vec![0.8]), t(&[1], vec![-1.7])], move |tape, v| {
            tfgc_core::head::joint_loss(tape, v[0], v[1], labels, wa).map_err(lift)
        })?;
    }
    Ok(())
}

pub fn grad_audio_head() -> Check {
    gradcheck(
        "audio_head",
        &[rand_t(&[6, 5], 103), rand_t(&[1, 5], 104), t(&[1], vec![0.2])],
        |tape, v| audio_head(tape, v[0], v[1], v[2]).map_err(lift),
    )
}

pub fn grad_audio_stream() -> Check {
    use tfgc_core::audio::{residual_block, ResidualVars};
    let (ta, d, r, c) = (10, 70, 6, 2);
    let shapes: [&[usize]; 8] = [&[r, d], &[r], &[d, r], &[d], &[c, 2, 3, 3], &[c], &[c, c, 3, 3], &[c]];
    let mut inputs = vec![rand_t(&[ta, d], 105)];
    inputs.extend(shapes.iter().enumerate().map(|(i, s)| rand_t(s, 106 + i as u64).scale(0.5)));
    gradcheck("audio residual+map", &inputs, |tape, v| {
        let p = ResidualVars {
            w1: v[1],
            b1: v[2],
            w2: v[3],
            b2: v[4],
        };
        let x = residual_block(tape, v[0], &p).map_err(lift)?;
        let m = MapVars {
            w1: v[5],
            b1: v[6],
            w2: v[7],
            b2: v[8],
        };
        let y = intermediate_features(tape, x, 4, &m).map_err(lift)?;
        probe(tape, y, 114)
    })
}

pub const GRADIENTS: &[Example] = &[
    ("grad_rsfdm", grad_rsfdm),
    ("grad_dctam", grad_dctam),
    ("grad_cross_attend_fuse", grad_cross_attend_fuse),
    ("grad_build_qkv", grad_build_qkv),
    ("grad_head", grad_head),
    ("grad_joint_loss", grad_joint_loss),
    ("grad_audio_head", grad_audio_head),
    ("grad_audio_stream", grad_audio_stream),
];

// ------------------------------------------------------ variance oracle

/// Explicit-loop variance activation: returns (variance, threshold, mask).
pub fn variance_oracle(a: &Tensor, k: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let s = a.shape();
    let (h, w, tn) = (s[0], s[1], s[2]);
    let mut var = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sums = vec![0.0; tn];
            for ti in 0..tn {
                for si in 0..tn {
                    sums[ti] += a.at(&[y, x, ti, si]);
                }
            }
            let mean = sums.iter().sum::<f64>() / tn as f64;
            var.push(sums.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tn as f64);
        }
    }
    // k-th smallest by repeated minimum extraction
    let mut pool = var.clone();
    let mut threshold = f64::NAN;
    for _ in 0..k {
        let (i, &m) = pool
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        threshold = m;
        pool.remove(i);
    }
    let mask = var.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect();
    (var, threshold, mask)
}

pub fn variance_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let tn = r.random_range(1..=4);
    let h = r.random_range(1..=3);
    let w = r.random_range(1..=3);
    let c = r.random_range(1..=3);
    let q = Tensor::uniform(&[tn, c, h, w], 2.0, &mut r);
    let kt = Tensor::uniform(&[tn, c, h, w], 2.0, &mut r);
    let a = err(temporal_scores(&q, &kt))?;
    let k = r.random_range(1..=h * w);
    let got = err(variance_activate(&a, k))?;
    let (var, threshold, mask) = variance_oracle(&a, k);
    all_close(got.variance.data(), &var, 1e-12, &format!("seed {seed} variance"))?;
    close(got.threshold, threshold, 1e-12, &format!("seed {seed} threshold"))?;
    ensure(got.mask.data() == mask.as_slice(), format!("seed {seed}: mask differs"))
}

pub const VARIANCE_CASES: u64 = 100;

pub fn variance_oracle_suite() -> Check {
    (0..VARIANCE_CASES).try_for_each(variance_case)
}

// ----------------------------------------------------------- invariants

pub fn invariant_static_rsfdm() -> Check {
    for seed in 0..10 {
        let frame = unit_t(&[1, 3, 5, 5], 200 + seed);
        let f = Tensor::stack(&vec![frame.index_axis0(0); 2 + seed as usize]).unwrap();
        ensure(rsfdm_eval(&f, &rand_t(&[3, 3], 300 + seed))? == f, format!("seed {seed}"))?;
    }
    Ok(())
}

pub fn invariant_static_mask() -> Check {
    for seed in 0..10 {
        let frame = rand_t(&[1, 4, 4, 4], 400 + seed);
        let f = Tensor::stack(&vec![frame.index_axis0(0); 4]).unwrap();
        let mut tape = Tape::new();
        let vars = dctam_vars(&mut tape, 4, 0.5, Some(500 + seed));
        let fv = tape.constant(f);
        for k in [1, 8, 16] {
            let (_, vm) = err(dctam_apply(&mut tape, fv, &vars, k))?;
            ensure(vm.active() == 0, format!("seed {seed} k {k}: {} active", vm.active()))?;
        }
    }
    Ok(())
}

pub fn invariant_dctam_identity() -> Check {
    for seed in 0..10 {
        let f = rand_t(&[4, 3, 4, 8], 600 + seed);
        let mut tape = Tape::new();
        let mut vars = dctam_vars(&mut tape, 3, 0.0, None);
        vars.wq = tape.constant(rand_t(&[3, 3], 700 + seed));
        vars.wk = tape.constant(rand_t(&[3, 3], 800 + seed));
        let fv = tape.constant(f.clone());
        let (out, _) = err(dctam_apply(&mut tape, fv, &vars, 5))?;
        ensure(*tape.value(out) == f, format!("seed {seed}: not the identity"))?;
    }
    Ok(())
}

pub const INVARIANTS: &[Example] = &[
    ("invariant_static_rsfdm", invariant_static_rsfdm),
    ("invariant_static_mask", invariant_static_mask),
    ("invariant_dctam_identity", invariant_dctam_identity),
];

// ------------------------------------------------------ scenario tables

pub fn test_data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn scenario_golden() -> Check {
    let text = std::fs::read_to_string(test_data("golden/scenarios.json")).map_err(|e| e.to_string())?;
    let want: Vec<tfgc_core::scenario::ScenarioDescriptor> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let got = enumerate_scenarios();
    ensure(got.len() == want.len(), format!("{} scenarios, golden has {}", got.len(), want.len()))?;
    for (g, w) in got.iter().zip(&want) {
        ensure(g == w, format!("scenario {}: {g:?} vs golden {w:?}", w.scenario_id))?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct LabelCase {
    record: ScenarioRecord,
    video: Authenticity,
    audio: Authenticity,
}

pub fn scenario_label_fixture() -> Check {
    let text = std::fs::read_to_string(test_data("fixtures/scenario_labels.json")).map_err(|e| e.to_string())?;
    let cases: Vec<LabelCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cases.len() == 22, format!("{} fixture records", cases.len()))?;
    for c in &cases {
        let got = err(derive_labels(&c.record))?;
        ensure(got == (c.video, c.audio), format!("{}: {got:?}", c.record.clip_id))?;
    }
    Ok(())
}

pub const SCENARIO_SUITE: &[Example] = &[
    ("scenario_golden", scenario_golden),
    ("scenario_label_fixture", scenario_label_fixture),
    ("scenarios_count", scenarios_count),
    ("scenarios_fundamental_pair", scenarios_fundamental_pair),
    ("labels_unknown_scenario", labels_unknown_scenario),
    ("report_table_totals", report_table_totals),
];

pub const LFS_SUITE: &[Example] = &[
    ("dct_constant_block", dct_constant_block),
    ("dct_round_trip", dct_round_trip),
    ("dct_parseval", dct_parseval),
    ("lfs_constant_image", lfs_constant_image),
    ("lfs_white_noise", lfs_white_noise),
    ("band_stats_exact", band_stats_exact),
    ("lfs_brightness_doubling", lfs_brightness_doubling),
    ("band_partition", band_partition),
];
