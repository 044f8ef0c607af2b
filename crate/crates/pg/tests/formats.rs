use pg::config::{Config, GroundMode};
use pg::raster::{
    decode_feature, decode_instance, decode_png, decode_range, encode_feature, encode_instance, encode_png,
    encode_range, load_bundle, save_bundle,
};
use pg::scene_io::{decode_scene, encode_scene, load_scene_trajectory, save_sidecar, sidecar_path, Sidecar};
use pg::PgError;
use pg_core::geom::Vec3;
use pg_core::panorama::{FeatureRaster, PanoramaBundle};
use pg_core::scene::{FeatureField, SceneError, SceneModel, ScenePoint};
use pg_core::synth::{make_synth_scene, random_room_spec, RandomRoomParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(seed: u64, n: usize, d: usize) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<ScenePoint> = (0..n)
        .map(|_| {
            // f32-representable so the round trip is exact.
            let c = |r: &mut ChaCha8Rng| f64::from(r.random_range(-50.0f32..50.0));
            ScenePoint::new(
                Vec3::new(c(&mut rng), c(&mut rng), c(&mut rng)),
                rng.random(),
                rng.random(),
                rng.random(),
            )
        })
        .collect();
    let tris = (0..n / 3)
        .map(|_| {
            [
                rng.random_range(0..n as u32),
                rng.random_range(0..n as u32),
                rng.random_range(0..n as u32),
            ]
        })
        .collect();
    let field = (d > 0).then(|| FeatureField::from_flat(d, (0..n * d).map(|_| rng.random()).collect()));
    SceneModel::new(points, tris, field).unwrap()
}

#[test]
fn scene_round_trip_is_bit_exact() {
    for (seed, d) in [(1, 0), (2, 4), (3, 16)] {
        let s = random_scene(seed, 300, d);
        let bytes = encode_scene(&s);
        let back = decode_scene(&bytes).unwrap();
        assert_eq!(encode_scene(&back), bytes);
        for (a, b) in s.points().iter().zip(back.points()) {
            assert_eq!(a.position, b.position);
            assert_eq!(
                (a.color, a.instance_id, a.class_id),
                (b.color, b.instance_id, b.class_id)
            );
        }
        assert_eq!(s.triangles(), back.triangles());
        assert_eq!(
            s.features().map(|f| f.as_slice().to_vec()),
            back.features().map(|f| f.as_slice().to_vec())
        );
    }
}

#[test]
fn scene_rejects_bad_bytes() {
    let bytes = encode_scene(&random_scene(4, 10, 2));
    assert!(matches!(
        decode_scene(&bytes[..bytes.len() - 1]),
        Err(SceneError::Truncated { .. })
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_scene(&extra), Err(SceneError::MalformedHeader(_))));
    assert!(matches!(
        decode_scene(b"PGSCENE v2 0 0 0\n"),
        Err(SceneError::MalformedHeader(_))
    ));
    assert!(matches!(
        decode_scene(b"PLY 0 0 0\n"),
        Err(SceneError::MalformedHeader(_))
    ));
    assert!(matches!(
        decode_scene(b"PGSCENE v1 x 0 0\n"),
        Err(SceneError::MalformedHeader(_))
    ));

    let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    let mut nan = bytes.clone();
    nan[header_len..header_len + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        decode_scene(&nan),
        Err(SceneError::NonFiniteCoordinate { index: 0 })
    ));

    let mut tri = b"PGSCENE v1 1 1 0\n".to_vec();
    tri.extend_from_slice(&[0; 23]);
    tri.extend([0u32, 0, 5].iter().flat_map(|i| i.to_le_bytes()));
    assert!(matches!(decode_scene(&tri), Err(SceneError::IndexOutOfRange { .. })));
}

#[test]
fn sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = make_synth_scene(&random_room_spec(3, &RandomRoomParams::default())).unwrap();
    let scene_path = dir.path().join("scene.pgs");
    assert!(load_scene_trajectory(&scene_path).unwrap().views().is_empty());
    save_sidecar(&sidecar_path(&scene_path), &Sidecar::from_trajectory(&s.trajectory)).unwrap();
    let back = load_scene_trajectory(&scene_path).unwrap();
    assert_eq!(back.views().len(), s.trajectory.views().len());
    for (a, b) in back.views().iter().zip(s.trajectory.views()) {
        assert_eq!(a.pose.position, b.pose.position);
        assert_eq!(a.pose.rotation, b.pose.rotation);
    }

    let mut bad = Sidecar::from_trajectory(&s.trajectory);
    bad.trajectory[0].rotation[0] = 2.0;
    save_sidecar(&sidecar_path(&scene_path), &bad).unwrap();
    let err = load_scene_trajectory(&scene_path).unwrap_err();
    assert!(matches!(
        err,
        PgError::Scene {
            source: SceneError::NotOrthonormal { index: 0, .. },
            ..
        }
    ));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn raster_codecs_round_trip() {
    let p = "x".as_ref();
    let range: Vec<f32> = (0..12).map(|i| i as f32 * 0.25).collect();
    assert_eq!(
        decode_range(&encode_range(4, 3, &range), p).unwrap(),
        (4, 3, range.clone())
    );
    let inst: Vec<u32> = (0..12).collect();
    assert_eq!(decode_instance(&encode_instance(4, 3, &inst), p).unwrap(), (4, 3, inst));
    let f = FeatureRaster {
        width: 2,
        height: 2,
        dim: 3,
        data: (0..12).map(|i| i as f32).collect(),
    };
    assert_eq!(decode_feature(&encode_feature(&f), p).unwrap(), f);
    let rgb: Vec<[u8; 3]> = (0..12u8).map(|i| [i, 2 * i, 255 - i]).collect();
    assert_eq!(decode_png(&encode_png(4, 3, &rgb), p).unwrap(), (4, 3, rgb));

    let mut short = encode_range(4, 3, &range);
    short.pop();
    assert!(decode_range(&short, p).is_err());
    assert!(decode_instance(&encode_range(4, 3, &range), p).is_err());
}

#[test]
fn bundle_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = PanoramaBundle::empty(Vec3::new(1.0, 2.0, 1.5), 0.0, 8, 4);
    for (i, r) in b.range.iter_mut().enumerate() {
        *r = i as f32;
    }
    b.instance[3] = 7;
    b.rgb[5] = [1, 2, 3];
    b.feature = Some(FeatureRaster::constant(2, 2, &[0.5, 1.5]));
    save_bundle(dir.path(), 0, &b).unwrap();
    let back = load_bundle(dir.path(), 0, b.position, 0.0).unwrap();
    assert_eq!(
        (back.range, back.instance, back.rgb, back.feature),
        (b.range, b.instance, b.rgb, b.feature)
    );
}

#[test]
fn config_parsing_and_validation() {
    assert_eq!(Config::parse("").unwrap(), Config::default());
    let cfg = Config::parse("[pano]\nwidth = 64\nheight = 32\n[ground]\ntta = 2\n").unwrap();
    assert_eq!((cfg.pano.width, cfg.pano.height, cfg.ground.tta), (64, 32, 2));

    for bad in [
        "[pano]\nwidht = 3\n",
        "[nope]\n",
        "[ground]\ntta = 0\n",
        "[ground]\nmode = \"remote\"\n",
        "[ground]\nmask = \"remote\"\n",
        "[ground.noise]\nmiss_rate = 1.5\n",
        "[remote]\nattempts = 0\n",
        "[agg]\nk = 0\n",
        "[pano]\nwidth = \"wide\"\n",
    ] {
        let err = Config::parse(bad).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad:?} gave {err}");
    }
    let remote = Config::parse("[ground]\nmode = \"remote\"\n[remote]\nendpoint = \"http://127.0.0.1:1\"\n").unwrap();
    assert_eq!(remote.ground.mode, GroundMode::Remote);
}
