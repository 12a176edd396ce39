use proptest::prelude::*;
use wsi_core::eval::{froc, roc_auc, Detection, DEFAULT_FP_RATES};
use wsi_core::geometry::{Point, Polygon};
use wsi_core::heatmap::{regions_at, Heatmap};
use wsi_core::otsu::otsu_threshold;
use wsi_core::patch::Annotation;
use wsi_core::pyramid::PyramidGeometry;

fn grid_values(w: usize, h: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(-1.0), Just(0.5), Just(0.9), 0.0f64..=1.0], w * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn region_properties_stay_in_range(vals in grid_values(12, 9), t in prop_oneof![Just(0.5), Just(0.9), 0.0f64..1.0]) {
        let hm = Heatmap::from_grid("s", 12, 9, 256, (0, 0), vals).unwrap();
        let regions = regions_at(&hm, t);
        for pair in regions.windows(2) {
            prop_assert!(pair[0].area >= pair[1].area);
        }
        for r in &regions {
            let bbox = (r.bbox.2 - r.bbox.0 + 1) * (r.bbox.3 - r.bbox.1 + 1);
            prop_assert!(r.area <= bbox && bbox <= 12 * 9);
            prop_assert!(r.extent > 0.0 && r.extent <= 1.0);
            prop_assert!(r.solidity > 0.0 && r.solidity <= 1.0);
            prop_assert!((0.0..1.0).contains(&r.eccentricity));
            prop_assert!(r.major_axis_length >= r.minor_axis_length);
            prop_assert!(r.cells.iter().all(|&(x, y)| hm.get(x, y).is_some_and(|p| p > t)));
            prop_assert!(r.perimeter >= 4 && r.perimeter <= 4 * r.area);
        }
    }

    #[test]
    fn auc_is_rank_based(scores in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let auc = roc_auc(&scores).unwrap().auc;
        prop_assert!((0.0..=1.0).contains(&auc));
        let squashed: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (s * s * 0.5 + 0.1, l)).collect();
        prop_assert_eq!(roc_auc(&squashed).unwrap().auc, auc);
        let flipped: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (s, !l)).collect();
        prop_assert!((roc_auc(&flipped).unwrap().auc - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn froc_sensitivity_is_monotone_and_bounded(
        dets in proptest::collection::vec((0u64..100, 0u64..100, 0.0f64..1.0, 0usize..3), 0..20),
        lesions in proptest::collection::vec((0usize..3, 0.0f64..80.0, 0.0f64..80.0, 2.0f64..30.0), 1..6),
    ) {
        let mut gt: Vec<Annotation> = (0..3).map(|s| Annotation::new(format!("s{s}"), vec![])).collect();
        for (s, x, y, r) in lesions {
            let sq = Polygon::new(vec![Point::new(x, y), Point::new(x + r, y), Point::new(x + r, y + r), Point::new(x, y + r)]);
            gt[s].polygons.push(sq);
        }
        let dets: Vec<Detection> = dets
            .into_iter()
            .map(|(x, y, c, s)| Detection { slide_id: format!("s{s}"), x, y, confidence: c })
            .collect();
        let r = froc(&dets, &gt, &DEFAULT_FP_RATES).unwrap();
        prop_assert!(r.sensitivities.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.sensitivities.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(r.curve.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }

    #[test]
    fn otsu_separates_occupied_bins(spikes in proptest::collection::vec((0usize..256, 1u64..500), 1..10)) {
        let mut h = [0u64; 256];
        for (b, c) in spikes {
            h[b] += c;
        }
        let t = otsu_threshold(&h).unwrap() as usize;
        let lo = h.iter().position(|&c| c > 0).unwrap();
        let hi = h.iter().rposition(|&c| c > 0).unwrap();
        if lo == hi {
            prop_assert_eq!(t, lo);
        } else {
            prop_assert!(lo <= t && t < hi);
        }
    }

    #[test]
    fn level_mapping_round_trips(w in 64u64..5000, h in 64u64..5000, x in 0u64..5000, y in 0u64..5000) {
        let g = PyramidGeometry::from_steps(w, h, &[2, 4]).unwrap();
        let (x, y) = (x % w, y % h);
        let (cx, cy) = g.map_point(0, 2, (x, y)).unwrap();
        prop_assert_eq!((cx, cy), (x / 8, y / 8));
        let (bx, by) = g.map_point(2, 0, (cx, cy)).unwrap();
        prop_assert!(bx <= x && x - bx < 8 && by <= y && y - by < 8);
    }
}
