use expseg::grid::{BinaryMask, ExtremePoints, Pixel, ProbMask};
use expseg::io::{
    decode_mask, decode_matrix, decode_netpbm, decode_prob_mask, encode_mask, encode_matrix,
    encode_netpbm, encode_prob_mask, format_annotations, parse_annotations, AnnotationRecord,
    Netpbm,
};
use expseg::metrics::{iou, point_label_counts, EvalReport};
use expseg::retrieval::{Hops, Label, PseudoPointLabels};
use expseg::tpm::Matrix;
use proptest::prelude::*;

fn arb_mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(0u8..2, w * h),
            prop::collection::vec(0u8..2, w * h),
        )
            .prop_map(move |(a, b)| {
                (BinaryMask::from_vec(w, h, a).unwrap(), BinaryMask::from_vec(w, h, b).unwrap())
            })
    })
}

fn arb_labels() -> impl Strategy<Value = (PseudoPointLabels, Vec<bool>)> {
    prop::collection::vec((0u8..3, any::<bool>()), 1..80).prop_map(|v| {
        let labels = v
            .iter()
            .map(|(l, _)| [Label::Fg, Label::Bg, Label::Unlabeled][usize::from(*l)])
            .collect();
        let gt = v.iter().map(|(_, g)| *g).collect();
        (
            PseudoPointLabels {
                labels,
                tau_fg: 1e-3,
                tau_bg: -1e-4,
                hops: Hops::Power { alpha: 3 },
            },
            gt,
        )
    })
}

fn arb_extremes() -> impl Strategy<Value = ExtremePoints> {
    (0i32..100, 0i32..100, 1i32..50, 1i32..50, 0i32..50, 0i32..50, 0i32..50, 0i32..50).prop_map(
        |(x0, y0, w, h, a, b, c, d)| {
            ExtremePoints::new(
                Pixel::new(x0 + a % w, y0),
                Pixel::new(x0, y0 + b % h),
                Pixel::new(x0 + c % w, y0 + h - 1),
                Pixel::new(x0 + w - 1, y0 + d % h),
            )
            .unwrap()
        },
    )
}

#[test]
fn half_overlapping_rectangles() {
    let a = BinaryMask::from_fn(8, 4, |x, _| x < 4).unwrap();
    let b = BinaryMask::from_fn(8, 4, |x, _| (2..6).contains(&x)).unwrap();
    assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn file_sizes() {
    let m = ProbMask::constant(3, 2, 0.5).unwrap();
    assert_eq!(encode_prob_mask(&m).len(), 16 + 24);
    assert_eq!(encode_matrix(&Matrix::zeros(1024)).len(), 16 + 4 * 1024 * 1024);
}

#[test]
fn empty_annotation_file() {
    assert!(parse_annotations(&b""[..]).unwrap().is_empty());
}

proptest! {
    #[test]
    fn iou_properties((a, b) in arb_mask_pair()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        prop_assert!((0.0..=1.0).contains(&ab));
        // add one pixel that b has and a lacks
        if let Some(k) = (0..a.values().len()).find(|&k| b.values()[k] == 1 && a.values()[k] == 0) {
            let mut v = a.values().to_vec();
            v[k] = 1;
            let grown = BinaryMask::from_vec(a.width(), a.height(), v).unwrap();
            prop_assert!(iou(&grown, &b).unwrap() >= ab);
        }
    }

    #[test]
    fn precision_times_predicted_is_true_positives((labels, gt) in arb_labels()) {
        let c = point_label_counts(&labels, &gt).unwrap();
        let s = c.scores();
        if let Some(p) = s.precision_fg {
            prop_assert_eq!((p * c.fg_predicted as f64).round() as usize, c.fg_true_pos);
        } else {
            prop_assert_eq!(c.fg_predicted, 0);
        }
        if let Some(p) = s.precision_bg {
            prop_assert_eq!((p * c.bg_predicted as f64).round() as usize, c.bg_true_pos);
        }
        let direct_fg_tp = labels.labels.iter().zip(&gt).filter(|(l, g)| **l == Label::Fg && **g).count();
        prop_assert_eq!(c.fg_true_pos, direct_fg_tp);
    }

    #[test]
    fn mean_iou_is_arithmetic_mean(ious in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let r = EvalReport::new(ious.clone(), &Default::default());
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        prop_assert_eq!(r.mean_iou, Some(mean));
    }

    #[test]
    fn prob_mask_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u32>()) {
        // f32 payload: values representable in f32 survive exactly
        let v: Vec<f64> = (0..w * h).map(|k| f64::from(((k as u32 ^ seed) % 1000) as f32 / 999.0)).collect();
        let m = ProbMask::new(w, h, v).unwrap();
        prop_assert_eq!(decode_prob_mask(&encode_prob_mask(&m)).unwrap(), m);
    }

    #[test]
    fn matrix_round_trip(n in 1usize..20, seed in any::<u32>()) {
        let m = Matrix::from_fn(n, |i, j| f64::from(((i * 31 + j) as u32 ^ seed) as f32 / 4e9));
        prop_assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
    }

    #[test]
    fn mask_and_netpbm_round_trip((a, _) in arb_mask_pair(), rgb in any::<bool>()) {
        prop_assert_eq!(decode_mask(&encode_mask(&a)).unwrap(), a.clone());
        let channels = if rgb { 3 } else { 1 };
        let img = Netpbm {
            width: a.width(),
            height: a.height(),
            channels,
            data: (0..a.width() * a.height() * channels).map(|k| (k * 37 % 256) as u8).collect(),
        };
        prop_assert_eq!(decode_netpbm(&encode_netpbm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn annotations_round_trip(eps in prop::collection::vec(arb_extremes(), 0..100)) {
        let records: Vec<AnnotationRecord> = eps
            .into_iter()
            .enumerate()
            .map(|(k, extreme)| AnnotationRecord {
                object_id: k as u64 * 3,
                class_id: k as u32 + 2,
                extreme,
                image: format!("img_{k}.ppm"),
            })
            .collect();
        let text = format_annotations(&records);
        prop_assert_eq!(parse_annotations(text.as_bytes()).unwrap(), records);
    }
}
