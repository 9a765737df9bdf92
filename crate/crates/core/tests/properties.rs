use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use sssp_core::harness::{Checkpoint, TensorData};
use sssp_core::image::Image;
use sssp_core::metrics::{psnr, ssim};
use sssp_core::render::{composite, Camera, RegionKind, RegionSpec};
use sssp_core::triplane::{Point3, TriPlane};
use sssp_core::vq::{depth_to_space, space_to_depth, Codebook};

fn planes(c: usize, r: usize) -> impl Strategy<Value = TriPlane> {
    prop::collection::vec(-2.0f64..2.0, 3 * c * r * r)
        .prop_map(move |v| TriPlane::new(Tensor::from_vec(v, (3, c, r, r), &Device::Cpu).unwrap(), 1.0).unwrap())
}

fn point() -> impl Strategy<Value = Point3> {
    (-1.3f64..1.3, -1.3f64..1.3, -1.3f64..1.3).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn ray() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..24, 1usize..4).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0, 0.0f64..1e5], n),
            prop::collection::vec(0.0f64..1.0, n * c),
            prop::collection::vec(1e-4f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mirror_query_identity(f in planes(3, 6), p in point()) {
        let a = f.query(p).unwrap();
        let b = f.flip().unwrap().query(p.mirror()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn flip_is_an_involution(f in planes(2, 5)) {
        let back = f.flip().unwrap().flip().unwrap();
        let a: Vec<f64> = f.tensor().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = back.tensor().flatten_all().unwrap().to_vec1().unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn outside_the_cube_reads_zero(f in planes(2, 4), p in point(), over in 1e-9f64..0.5) {
        let mut p = p;
        p.x = if p.x < 0.0 { -1.0 - over } else { 1.0 + over };
        p.y = if p.y < 0.0 { -1.0 - over } else { 1.0 + over };
        p.z = if p.z < 0.0 { -1.0 - over } else { 1.0 + over };
        prop_assert!(f.query(p).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn composite_conserves_weight((sigmas, feats, deltas, bg) in ray()) {
        let (out, w) = composite(&sigmas, &feats, &deltas, &bg).unwrap();
        prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(w.iter().sum::<f64>() <= 1.0);
        // a convex combination of sample features and the background
        let c = bg.len();
        for k in 0..c {
            let lo = feats.iter().skip(k).step_by(c).chain([&bg[k]]).cloned().fold(f64::INFINITY, f64::min);
            let hi = feats.iter().skip(k).step_by(c).chain([&bg[k]]).cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[k] >= lo - 1e-12 && out[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn quantize_is_nearest_entry(
        entries in prop::collection::vec(-2i8..=2, 8 * 3),
        cells in prop::collection::vec(-2.5f64..2.5, 3 * 4 * 4),
    ) {
        let e: Vec<f64> = entries.iter().map(|&v| v as f64).collect();
        let book = Codebook::from_tensor(Tensor::from_vec(e.clone(), (8, 3), &Device::Cpu).unwrap()).unwrap();
        let z = Tensor::from_vec(cells.clone(), (1, 3, 4, 4), &Device::Cpu).unwrap();
        let (tokens, _) = book.quantize(&z).unwrap();
        for (i, &t) in tokens.flat().iter().enumerate() {
            let cell: Vec<f64> = (0..3).map(|c| cells[c * 16 + i]).collect();
            let d: Vec<f64> = e.chunks(3).map(|r| r.iter().zip(&cell).map(|(a, b)| (a - b).powi(2)).sum()).collect();
            let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(t as usize, d.iter().position(|&x| x == best).unwrap());
        }
    }

    #[test]
    fn space_to_depth_round_trip(p in 1usize..4, c in 1usize..3, g in 1usize..4, seed in 0u64..1000) {
        let n = c * (g * p) * (g * p);
        let v: Vec<f32> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f32).collect();
        let x = Tensor::from_vec(v.clone(), (1, c, g * p, g * p), &Device::Cpu).unwrap();
        let y = space_to_depth(&x, p).unwrap();
        prop_assert_eq!(y.dims(), &[1, c * p * p, g, g]);
        let back: Vec<f32> = depth_to_space(&y, p).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn png_round_trip_of_8bit_images(levels in prop::collection::vec(0u8..=255, 3 * 5 * 7)) {
        let img = Image::from_vec(3, 5, 7, levels.iter().map(|&l| l as f32 / 255.0).collect()).unwrap();
        let back = Image::from_png(&img.to_png().unwrap(), false).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn image_hflip_is_an_involution(v in prop::collection::vec(0.0f32..1.0, 2 * 4 * 6)) {
        let img = Image::from_vec(2, 4, 6, v).unwrap();
        prop_assert_eq!(img.hflip().hflip(), img);
    }

    #[test]
    fn similarity_metrics_are_symmetric(
        a in prop::collection::vec(0.0f32..1.0, 16 * 16),
        b in prop::collection::vec(0.0f32..1.0, 16 * 16),
    ) {
        let a = Image::from_vec(1, 16, 16, a).unwrap();
        let b = Image::from_vec(1, 16, 16, b).unwrap();
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn camera_and_region_mirrors_are_involutions(yaw in -1.0f64..1.0, pitch in -0.5f64..0.5, cx in 0.1f64..0.9, cy in 0.1f64..0.9) {
        let cam = Camera::orbit(yaw, pitch);
        prop_assert_eq!(cam.mirror().mirror(), cam);
        let r = RegionSpec { kind: RegionKind::LeftEye, center: (cx, cy), scale: 0.2 };
        let m = r.mirror().mirror();
        prop_assert_eq!(m.kind, r.kind);
        prop_assert!((m.center.0 - cx).abs() < 1e-15 && m.center.1 == cy);
    }

    #[test]
    fn checkpoint_bytes_round_trip(v in prop::collection::vec(any::<f32>(), 1..40), step in any::<u64>()) {
        let mut ck = Checkpoint::new(serde_json::json!({ "note": "prop" }), step);
        let t = Tensor::from_vec(v.clone(), v.len(), &Device::Cpu).unwrap();
        ck.tensors.insert("w".into(), TensorData::from_tensor(&t).unwrap());
        ck.tensors.insert("b".into(), TensorData::from_tensor(&t.to_dtype(DType::F64).unwrap()).unwrap());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.step, step);
    }
}
