use monoball::geometry::project;
use monoball::io::{read_ground_truth, FrameReader};
use monoball::simulator::{simulate, EventKind, SimConfig, SimError, Simulation};
use monoball::state_model::Mode;

fn clean(seed: u64, duration: u64) -> SimConfig {
    SimConfig { seed, duration, occlusion_prob: 0.0, pixel_noise_sigma: 0.0, ..SimConfig::default() }
}

#[test]
fn noiseless_detections_are_exact_projections() {
    let cfg = clean(3, 1500);
    let (gt, frames) = simulate(&cfg).unwrap();
    let mut seen = 0;
    for (g, o) in gt.frames.iter().zip(&frames) {
        if g.visible {
            seen += 1;
            assert_eq!(o.detections.len(), 1, "frame {}", g.frame);
            let px = project(&g.position, &cfg.calib).unwrap();
            assert!((o.detections[0] - px).norm() < 1e-9);
        } else {
            assert!(o.detections.is_empty(), "frame {}", g.frame);
        }
    }
    assert!(seen > 100);
}

#[test]
fn same_seed_same_clip() {
    let cfg = SimConfig { seed: 11, duration: 600, ..SimConfig::default() };
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    let other = SimConfig { seed: 12, ..cfg.clone() };
    assert_ne!(simulate(&cfg).unwrap().0, simulate(&other).unwrap().0);
}

#[test]
fn occlusion_drops_about_the_requested_share() {
    let cfg = SimConfig {
        seed: 5,
        duration: 10_000,
        occlusion_prob: 0.5,
        pixel_noise_sigma: 0.0,
        occlude_by_players: false,
        ..SimConfig::default()
    };
    let (gt, _) = simulate(&cfg).unwrap();
    // In-flight frames after the first sighting; the sighting itself is
    // visible by construction.
    let flight: Vec<_> = gt.frames.windows(2).filter(|w| w[0].mode == Mode::J && w[1].mode == Mode::J).collect();
    let shown = flight.iter().filter(|w| w[1].visible).count() as f64 / flight.len() as f64;
    assert!(flight.len() > 2000, "{}", flight.len());
    assert!((shown - 0.5).abs() < 0.02, "{shown}");
}

#[test]
fn ground_truth_respects_the_model() {
    for seed in 0..4 {
        let cfg = SimConfig { seed, duration: 3000, ..SimConfig::default() };
        let (gt, frames) = simulate(&cfg).unwrap();
        assert_eq!(gt.len(), 3000);
        assert_eq!(frames.len(), 3000);
        let r = cfg.physics.ball_radius;
        for (i, g) in gt.frames.iter().enumerate() {
            assert_eq!(g.frame, i as u64);
            assert!(g.position.z >= r - 1e-9, "frame {} below ground", g.frame);
            if g.mode != Mode::O {
                assert!(cfg.pitch.contains(&g.position), "frame {} off the pitch in {:?}", g.frame, g.mode);
            }
            if g.events.contains(&EventKind::OutOfPitch) {
                assert_eq!(g.mode, Mode::O);
            }
            if g.events.contains(&EventKind::Kick) {
                assert_eq!(g.mode, Mode::W);
            }
        }
        for w in gt.frames.windows(2) {
            assert!(w[0].mode.allows(w[1].mode), "{:?} -> {:?} at {}", w[0].mode, w[1].mode, w[1].frame);
            let kicked = w[0].mode == Mode::P && w[1].mode == Mode::W;
            assert_eq!(kicked, w[1].events.contains(&EventKind::Kick));
            let out = w[0].mode == Mode::J && w[1].mode == Mode::O;
            assert_eq!(out, w[1].events.contains(&EventKind::OutOfPitch));
        }
        assert!(!gt.events(EventKind::Kick).is_empty());
    }
}

#[test]
fn flight_follows_the_parabola() {
    let cfg = SimConfig { seed: 9, duration: 3000, ..SimConfig::default() };
    let (gt, _) = simulate(&cfg).unwrap();
    let dt = 1.0 / cfg.fps;
    let mut checked = 0;
    for w in gt.frames.windows(3) {
        let flying = w.iter().all(|f| matches!(f.mode, Mode::J | Mode::W));
        // High enough that no bounce fits between the samples.
        if !flying || w.iter().any(|f| f.position.z < 1.5) {
            continue;
        }
        let d2 = w[2].position - 2.0 * w[1].position + w[0].position;
        assert!(d2.x.abs() < 1e-6 && d2.y.abs() < 1e-6, "frame {}", w[1].frame);
        assert!((d2.z + cfg.physics.gravity * dt * dt).abs() < 1e-6, "frame {}", w[1].frame);
        checked += 1;
    }
    assert!(checked > 50, "{checked}");
}

#[test]
fn the_frame_after_a_kick_is_never_seen() {
    let (gt, _) = simulate(&clean(2, 3000)).unwrap();
    for k in gt.events(EventKind::Kick) {
        assert!(!gt.frames[k as usize].visible);
    }
}

#[test]
fn streaming_matches_batch() {
    let cfg = SimConfig { seed: 4, duration: 400, ..SimConfig::default() };
    let (gt, frames) = simulate(&cfg).unwrap();
    let streamed: Vec<_> = Simulation::new(cfg).unwrap().collect();
    assert_eq!(streamed.len(), 400);
    for ((g, o), (sg, so)) in gt.frames.iter().zip(&frames).zip(&streamed) {
        assert_eq!(g, sg);
        assert_eq!(o, so);
    }
}

#[test]
fn replay_round_trips_through_the_parsers() {
    let cfg = SimConfig { seed: 8, duration: 300, ..SimConfig::default() };
    let (gt, frames) = simulate(&cfg).unwrap();
    let mut sidecar = Vec::new();
    let stream = monoball::io::replay_to_stream(&gt, &frames, Vec::new(), &mut sidecar).unwrap();
    let text = String::from_utf8(stream.clone()).unwrap();
    assert_eq!(text.lines().count(), 300);
    let parsed: Vec<_> = FrameReader::new(stream.as_slice()).collect::<Result<_, _>>().unwrap();
    assert_eq!(parsed, frames);
    let back = read_ground_truth(sidecar.as_slice()).unwrap();
    assert_eq!(back, gt);
    assert_eq!(back.events(EventKind::Kick), gt.events(EventKind::Kick));
}

#[test]
fn three_frames_three_records() {
    let (gt, frames) = simulate(&SimConfig { duration: 3, ..SimConfig::default() }).unwrap();
    let mut sidecar = Vec::new();
    let stream = monoball::io::replay_to_stream(&gt, &frames, Vec::new(), &mut sidecar).unwrap();
    assert_eq!(stream.iter().filter(|b| **b == b'\n').count(), 3);
    assert_eq!(sidecar.iter().filter(|b| **b == b'\n').count(), 3);
    let short = &frames[..2];
    assert!(matches!(
        monoball::io::replay_to_stream(&gt, short, Vec::new(), &mut Vec::new()),
        Err(SimError::LengthMismatch { .. })
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SimConfig { occlusion_prob: 1.5, ..SimConfig::default() },
        SimConfig { duration: 0, ..SimConfig::default() },
        SimConfig { fps: 0.0, ..SimConfig::default() },
        SimConfig { n_players: 0, ..SimConfig::default() },
        SimConfig { pixel_noise_sigma: -1.0, ..SimConfig::default() },
    ] {
        assert!(matches!(simulate(&cfg), Err(SimError::ConfigInvalid(_))));
    }
}
