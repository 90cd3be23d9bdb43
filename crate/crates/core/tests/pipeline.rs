use std::fs;
use std::path::Path;

use bgsub_core::flow::load_gray;
use bgsub_core::pipeline::{
    generate_synthetic_sequence, run_sequence, FrameResult, GroundTruthFrame, PatchMotion, PatchSpec, PipelineConfig,
    PipelineError, Rect, Scenario,
};
use bgsub_core::regression::Label;

fn run_all(frames: &Path, cfg: &PipelineConfig) -> Vec<FrameResult> {
    run_sequence(frames, cfg).unwrap().collect()
}

#[test]
fn static_pair_gives_one_result_without_moving_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let scenario = Scenario {
        frames: 2,
        texture_seed: 3,
        ..Scenario::default()
    };
    generate_synthetic_sequence(&cfg, &scenario, dir.path()).unwrap();
    let results = run_all(&dir.path().join("frames"), &cfg);
    assert_eq!(results.len(), 1);
    let r = &results[0];
    assert_eq!(r.frame_index, 0);
    assert!(r.error.is_none(), "{:?}", r.error);
    let c = r.counts();
    assert_eq!(c.total(), r.labeled.len());
    eprintln!("static pair: {c:?}");
    assert_eq!(c.moving, 0);
}

/// Fraction of vectors labeled Moving on the mask and well away from it.
fn moving_rates(r: &FrameResult, truth: &GroundTruthFrame, root: &Path, band: i64) -> (f64, f64) {
    let mask = load_gray(&root.join(&truth.mask)).unwrap();
    let (w, h) = mask.dimensions();
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && mask.get(x as u32, y as u32) == 255;
    let (mut on_hit, mut on_n, mut off_hit, mut off_n) = (0, 0, 0, 0);
    for l in &r.labeled {
        let (x, y) = (l.vector.base.u.round() as i64, l.vector.base.v.round() as i64);
        let moving = (l.label == Label::Moving) as usize;
        if on(x, y) {
            on_n += 1;
            on_hit += moving;
        } else if !(-band..=band).any(|dy| (-band..=band).any(|dx| on(x + dx, y + dy))) {
            off_n += 1;
            off_hit += moving;
        }
    }
    (on_hit as f64 / on_n.max(1) as f64, off_hit as f64 / off_n.max(1) as f64)
}

#[test]
fn moving_labels_concentrate_on_the_patch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let scenario = Scenario {
        frames: 10,
        texture_seed: 3,
        patches: vec![PatchSpec {
            rect: Rect {
                x: 760.0,
                y: 548.0,
                width: 260.0,
                height: 52.0,
            },
            motion: PatchMotion::FlowScale(3.0),
            texture_seed: 5,
        }],
        ..Scenario::default()
    };
    let truth = generate_synthetic_sequence(&cfg, &scenario, dir.path()).unwrap();
    let results = run_all(&dir.path().join("frames"), &cfg);
    assert_eq!(results.len(), 9);
    let band = (cfg.lk.window_radius + 1) as i64;
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.frame_index, i);
        assert!(r.error.is_none(), "{:?}", r.error);
        let (on, off) = moving_rates(r, &truth[i], dir.path(), band);
        eprintln!("frame {i}: moving on patch {on:.3}, elsewhere {off:.3}");
        assert!(on > off, "frame {i}: {on:.3} on patch vs {off:.3} elsewhere");
    }
}

#[test]
fn ramp_ground_truth_follows_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let scenario = Scenario {
        frames: 10,
        speed_start_kmh: 50.0,
        speed_end_kmh: Some(100.0),
        ..Scenario::default()
    };
    let truth = generate_synthetic_sequence(&cfg, &scenario, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("ground_truth.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    for (i, t) in truth.iter().enumerate() {
        assert_eq!(t.speed_kmh, 50.0 + 50.0 * i as f64 / 9.0);
    }
}

#[test]
fn mismatched_frame_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    generate_synthetic_sequence(&cfg, &Scenario { frames: 2, ..Scenario::default() }, dir.path()).unwrap();
    let frames = dir.path().join("frames");
    let small = image::GrayImage::new(64, 48);
    small.save(frames.join("frame_0002.pgm")).unwrap();
    match run_sequence(&frames, &cfg) {
        Err(PipelineError::DimensionMismatch { actual, expected, .. }) => {
            assert_eq!(actual, (64, 48));
            assert_eq!(expected, (1280, 1024));
        }
        other => panic!("expected DimensionMismatch, got {:?}", other.map(|s| s.pair_count())),
    }
}
