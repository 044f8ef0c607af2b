use pg_core::floor::{estimate_floor, RansacParams};
use pg_core::geom::{tight_box_on_ring, Box3D, PixelBox};
use pg_core::grounder::{
    decode_value, digits_to_value, encode_value, format_box_text, parse_box_text, value_to_digits,
};
use pg_core::losses::{check_gradient, softmax, DigitDistribution};
use pg_core::panorama::{direction_to_pixel, pixel_to_direction};
use pg_core::synth::{make_synth_scene, random_room_spec, RandomRoomParams};
use proptest::prelude::*;

fn pixel_box() -> impl Strategy<Value = PixelBox> {
    (0u32..500, 0u32..500, 0u32..500, 0u32..500).prop_map(|(a, b, c, d)| PixelBox::from_corners(a, b, c, d))
}

proptest! {
    #[test]
    fn pixel_survives_code(size in 1u32..=1000, frac in 0.0f64..1.0) {
        let v = ((f64::from(size - 1)) * frac) as u32;
        prop_assert_eq!(decode_value(encode_value(v, size), size), v);
    }

    #[test]
    fn digits_round_trip(n in 0u16..1000) {
        prop_assert_eq!(digits_to_value(value_to_digits(n)), n);
    }

    #[test]
    fn box_text_round_trip(v in prop::array::uniform4(0u16..1000)) {
        prop_assert_eq!(parse_box_text(&format_box_text(v)), Some(v));
    }

    #[test]
    fn iou_bounds(a in pixel_box(), b in pixel_box()) {
        let x = a.iou(&b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, b.iou(&a));
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn box3d_overlap_bounded(
        a in prop::array::uniform3(-5.0f64..5.0),
        da in prop::array::uniform3(0.01f64..3.0),
        b in prop::array::uniform3(-5.0f64..5.0),
        db in prop::array::uniform3(0.01f64..3.0),
    ) {
        let x = Box3D::new(a, [a[0] + da[0], a[1] + da[1], a[2] + da[2]]);
        let y = Box3D::new(b, [b[0] + db[0], b[1] + db[1], b[2] + db[2]]);
        let inter = x.intersection_volume(&y);
        prop_assert!(inter >= 0.0);
        prop_assert!(inter <= x.volume().min(y.volume()) + 1e-12);
    }

    #[test]
    fn ring_box_of_one_arc(start in 0u32..100, len in 1u32..40, v in 0u32..50) {
        // A contiguous arc that does not cross the seam comes back exactly.
        let w = 200;
        let px: Vec<(u32, u32)> = (start..start + len).map(|u| (u, v)).collect();
        let b = tight_box_on_ring(px.iter().copied(), w).unwrap();
        prop_assert_eq!(b, PixelBox::from_corners(start, v, start + len - 1, v));
    }

    #[test]
    fn pixel_direction_round_trip(u in 0.0f64..489.0, v in 0.5f64..488.5, yaw in -3.0f64..3.0) {
        let d = pixel_to_direction(u, v, 490, 490, yaw).unwrap();
        prop_assert!((d.norm() - 1.0).abs() < 1e-12);
        let (u2, v2) = direction_to_pixel(&d, 490, 490, yaw);
        let du = (u2 - u).abs().min(490.0 - (u2 - u).abs());
        prop_assert!(du < 1e-6 && (v2 - v).abs() < 1e-6, "{u},{v} -> {u2},{v2}");
    }

    #[test]
    fn softmax_is_distribution(logits in prop::array::uniform10(-30.0f64..30.0)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn gradient_matches_differences(
        logits in prop::array::uniform10(-4.0f64..4.0),
        target in 0u8..10,
        weight in 0.1f64..2.0,
        lambda in 0.0f64..2.0,
    ) {
        let d = DigitDistribution::new(logits, target, weight);
        prop_assert!(check_gradient(&d, lambda, 1e-5) < 1e-5);
    }
}

#[test]
fn floor_of_synthetic_rooms() {
    for seed in 0..5 {
        let s = make_synth_scene(&random_room_spec(seed, &RandomRoomParams::default())).unwrap();
        let f = estimate_floor(&s.scene, &RansacParams::default()).unwrap();
        assert!(f.normal.z.abs() > 0.999, "seed {seed}: normal {:?}", f.normal);
        assert!(f.height_at(1.0, 1.0).abs() < 0.02, "seed {seed}: offset {}", f.offset);
    }
}
