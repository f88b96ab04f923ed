use proptest::prelude::*;
use reid_core::preprocess::{self, BinaryMask, RgbImage, TransformConfig};

fn config(target: usize) -> TransformConfig {
    TransformConfig {
        target,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn letterbox_fits_and_keeps_long_side(h in 1usize..300, w in 1usize..300, t in 1usize..128) {
        let b = preprocess::letterbox_geometry(h, w, t);
        prop_assert!(b.top + b.height <= t && b.left + b.width <= t);
        prop_assert!(b.height >= 1 && b.width >= 1);
        prop_assert_eq!(b.height.max(b.width), t);
        // Slack split floor before, ceil after.
        prop_assert_eq!(b.top, (t - b.height) / 2);
        prop_assert_eq!(b.left, (t - b.width) / 2);
    }

    #[test]
    fn canvas_is_square_and_padded(h in 1usize..40, w in 1usize..40, t in 2usize..48, v in 0.0f64..1.0) {
        let img = RgbImage::filled(h, w, [v, v, v]).unwrap();
        let canvas = preprocess::resize_pad_square(&img, &config(t)).unwrap();
        prop_assert_eq!((canvas.height(), canvas.width()), (t, t));
        let b = preprocess::letterbox_geometry(h, w, t);
        for y in 0..t {
            for x in 0..t {
                let inside = y >= b.top && y < b.top + b.height && x >= b.left && x < b.left + b.width;
                let want = if inside { v } else { 0.0 };
                prop_assert!((canvas.pixel(y, x)[0] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_round_trips(t in 1usize..16, seed in any::<u64>()) {
        let mut rng = reid_core::RngStream::new(seed);
        let data: Vec<f64> = (0..t * t * 3).map(|_| rng.uniform()).collect();
        let img = RgbImage::new(t, t, data.clone()).unwrap();
        let cfg = config(t);
        let tensor = preprocess::normalize(&img, &cfg).unwrap();
        let back = preprocess::denormalize(&tensor, t, &cfg).unwrap();
        for (a, b) in back.iter().zip(&data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_contains_mask_and_zeroes_background(h in 4usize..30, w in 4usize..30, y0 in 0usize..4, x0 in 0usize..4, pad in 0usize..4) {
        let mask = BinaryMask::from_fn(h, w, |y, x| y >= y0 && x >= x0 && (y + x) % 3 != 0);
        prop_assume!(mask.count() > 0);
        let img = RgbImage::filled(h, w, [0.5, 0.6, 0.7]).unwrap();
        let b = preprocess::crop_box(&mask, pad).unwrap();
        let crop = preprocess::crop_instance(&img, &mask, pad).unwrap();
        prop_assert_eq!((crop.height(), crop.width()), (b.height, b.width));
        for y in 0..b.height {
            for x in 0..b.width {
                let on = mask.get(b.top + y, b.left + x);
                let want = if on { 0.5 } else { 0.0 };
                prop_assert_eq!(crop.pixel(y, x)[0], want);
            }
        }
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) {
                    prop_assert!(y >= b.top && y < b.top + b.height && x >= b.left && x < b.left + b.width);
                }
            }
        }
    }
}

#[test]
fn stats_of_constant_canvases_are_degenerate() {
    let img = RgbImage::filled(4, 4, [0.2, 0.2, 0.2]).unwrap();
    assert!(preprocess::compute_stats(&[img]).is_err());
}

#[test]
fn stats_of_two_tone_canvas() {
    let mut data = vec![0.0; 2 * 3];
    data[3..].copy_from_slice(&[1.0, 1.0, 1.0]);
    let img = RgbImage::new(1, 2, data).unwrap();
    let s = preprocess::compute_stats(&[img]).unwrap();
    assert_eq!(s.mean, [0.5; 3]);
    assert_eq!(s.std, [0.5; 3]);
}
