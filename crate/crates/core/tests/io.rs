use monoball::beam_filter::TrajectoryRecord;
use monoball::geometry::{CalibrationRecord, Pixel, Vec3};
use monoball::io::{
    read_trajectory, write_trajectory_record, Config, ConfigError, FrameReader, FrameWriter, IoError,
};
use monoball::simulator::broadcast_camera;
use monoball::state_model::Mode;
use monoball::transition_gen::{FrameObservations, PitchPoint};

fn calib_json() -> String {
    serde_json::to_string(&CalibrationRecord::from(&broadcast_camera())).unwrap()
}

fn read(text: &str) -> Vec<Result<FrameObservations, IoError>> {
    FrameReader::new(text.as_bytes()).collect()
}

#[test]
fn calibration_carries_over() {
    let text = format!(
        "{{\"frame\":0,\"detections\":[[10.5,20.25]],\"players\":[[1,2]],\"calib\":{}}}\n\n{{\"frame\":1}}\n",
        calib_json()
    );
    let frames: Vec<_> = read(&text).into_iter().collect::<Result<_, _>>().unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames[0].detections, vec![Pixel::new(10.5, 20.25)]);
    assert_eq!(frames[0].players, vec![PitchPoint::new(1.0, 2.0)]);
    assert_eq!(frames[1].calib, broadcast_camera());
    assert!(frames[1].detections.is_empty());
}

#[test]
fn errors_name_the_line() {
    let good = format!("{{\"frame\":0,\"calib\":{}}}", calib_json());
    let mut lines: Vec<String> = vec![good];
    for f in 1..16 {
        lines.push(format!("{{\"frame\":{f}}}"));
    }
    lines.push("{\"frame\":16,\"detections\":[[1,\"x\"]]}".into());
    let text = lines.join("\n");
    let out = read(&text);
    assert_eq!(out.len(), 17);
    let err = out.into_iter().find_map(Result::err).unwrap();
    assert_eq!(err.line(), Some(17));
    assert!(err.to_string().starts_with("line 17:"), "{err}");
}

#[test]
fn stream_rules_are_enforced() {
    let first = format!("{{\"frame\":0,\"calib\":{}}}", calib_json());
    let gap = format!("{first}\n{{\"frame\":2}}");
    assert_eq!(read(&gap)[1].as_ref().unwrap_err().line(), Some(2));
    assert!(read("{\"frame\":0}")[0].is_err());
    assert!(read(&format!("{{\"frame\":0,\"bogus\":1,\"calib\":{}}}", calib_json()))[0].is_err());
    assert!(read("not json")[0].as_ref().unwrap_err().line() == Some(1));
}

#[test]
fn writer_omits_unchanged_calibration_and_round_trips() {
    let obs = |frame: u64, u: f64| FrameObservations {
        frame,
        detections: vec![Pixel::new(u, 0.1 + u / 3.0)],
        players: vec![PitchPoint::new(-1.0 / 3.0, 2.0)],
        calib: broadcast_camera(),
    };
    let frames = vec![obs(0, 1.0), obs(1, 2.0), obs(2, 3.0)];
    let mut w = FrameWriter::new(Vec::new());
    for f in &frames {
        w.write(f).unwrap();
    }
    let bytes = w.into_inner();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.matches("calib").count(), 1);
    let back: Vec<_> = FrameReader::new(bytes.as_slice()).collect::<Result<_, _>>().unwrap();
    assert_eq!(back, frames);
}

#[test]
fn trajectory_lines_round_trip() {
    let recs = vec![
        TrajectoryRecord { frame: 0, position: Vec3::new(0.1, -2.0 / 3.0, 0.11), mode: Mode::P, log_weight: -1.5, finalized: true },
        TrajectoryRecord { frame: 1, position: Vec3::new(1e-7, 3.0, 7.25), mode: Mode::J, log_weight: 2.0, finalized: false },
    ];
    let mut buf = Vec::new();
    for r in &recs {
        write_trajectory_record(&mut buf, r).unwrap();
    }
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().next().unwrap().contains("\"mode\":\"P\""));
    assert_eq!(read_trajectory(buf.as_slice()).unwrap(), recs);
    let err = read_trajectory("{\"frame\":0}\n".as_bytes()).unwrap_err();
    assert_eq!(err.line(), Some(1));
}

#[test]
fn empty_config_means_defaults() {
    let cfg = Config::from_toml_str("").unwrap();
    assert_eq!(cfg, Config::default());
    let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_overrides_and_checks() {
    let cfg = Config::from_toml_str("[model]\nbeam_width = 250\nlag = 7\n[physics]\ngravity = 9.0\n[sim]\nseed = 4\n").unwrap();
    assert_eq!(cfg.model.beam_width, 250);
    assert_eq!(cfg.model_params().lag, 7);
    assert_eq!(cfg.model_params().physics.gravity, 9.0);
    assert_eq!(cfg.sim_config().physics.gravity, 9.0);
    assert_eq!(cfg.sim_config().seed, 4);

    assert!(matches!(Config::from_toml_str("[model]\nbeam_widht = 3\n"), Err(ConfigError::Parse(_))));
    assert!(matches!(Config::from_toml_str("[nope]\n"), Err(ConfigError::Parse(_))));
    assert!(matches!(Config::from_toml_str("[model]\nray_step = -1.0\n"), Err(ConfigError::Invalid(_))));
    assert!(matches!(Config::from_toml_str("[sim]\nocclusion_prob = 2.0\n"), Err(ConfigError::Invalid(_))));
    assert!(matches!(Config::from_toml_str("[physics]\nrestitution = 1.5\n"), Err(ConfigError::Invalid(_))));
}
