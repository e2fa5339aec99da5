use proptest::prelude::*;

use streetscape::geo::{
    export_geojson, haversine_m, parse_network, sample_points, CameraSide, LonLat, MapBins, StreetSegment,
    EARTH_RADIUS_M,
};
use streetscape::pipeline::SegmentScore;

/// Random walk polyline: start anywhere away from the poles and the
/// antimeridian, then 1–7 steps of up to ~1.4 km each.
fn polyline() -> impl Strategy<Value = Vec<LonLat>> {
    (
        -170.0f64..170.0,
        -60.0f64..60.0,
        proptest::collection::vec((-0.01f64..0.01, -0.01f64..0.01), 1..8),
    )
        .prop_map(|(lon, lat, steps)| {
            let mut pts = vec![LonLat { lon, lat }];
            for (dlon, dlat) in steps {
                let last = *pts.last().unwrap();
                pts.push(LonLat { lon: last.lon + dlon, lat: last.lat + dlat });
            }
            pts
        })
}

/// Distance from `p` to the polyline, measured against a dense linear
/// (lon, lat) interpolation of every edge.
fn distance_to_chain(p: LonLat, chain: &[LonLat]) -> f64 {
    let mut best = f64::INFINITY;
    for w in chain.windows(2) {
        let steps = 2000;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let q = LonLat { lon: w[0].lon + t * (w[1].lon - w[0].lon), lat: w[0].lat + t * (w[1].lat - w[0].lat) };
            best = best.min(haversine_m(p, q));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn count_law_and_exact_offsets(chain in polyline(), interval in 10.0f64..400.0) {
        let seg = StreetSegment::new("s", chain.clone()).unwrap();
        let length: f64 = chain.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
        prop_assert!((seg.length_m() - length).abs() <= 1e-6 * length.max(1.0));
        let pts = sample_points(&seg, interval, CameraSide::Right).unwrap();
        if length > 0.0 {
            prop_assert_eq!(pts.len(), (length / interval).floor() as usize + 1);
        }
        for (i, p) in pts.iter().enumerate() {
            prop_assert_eq!(p.offset_m, i as f64 * interval);
            prop_assert!(p.offset_m <= seg.length_m());
            prop_assert!((0.0..360.0).contains(&p.heading_deg));
        }
        prop_assert!(pts.windows(2).all(|w| w[0].offset_m < w[1].offset_m));
    }

    #[test]
    fn points_lie_on_the_chain(chain in polyline()) {
        let seg = StreetSegment::new("s", chain.clone()).unwrap();
        prop_assume!(seg.length_m() < 10_000.0);
        for p in sample_points(&seg, 200.0, CameraSide::Right).unwrap() {
            prop_assert!(distance_to_chain(p.position, &chain) <= 0.5);
        }
    }

    #[test]
    fn left_side_is_opposite(chain in polyline()) {
        let seg = StreetSegment::new("s", chain).unwrap();
        let right = sample_points(&seg, 150.0, CameraSide::Right).unwrap();
        let left = sample_points(&seg, 150.0, CameraSide::Left).unwrap();
        for (r, l) in right.iter().zip(&left) {
            let diff = (r.heading_deg - l.heading_deg).rem_euclid(360.0);
            prop_assert!((diff - 180.0).abs() < 1e-9 || seg.length_m() == 0.0);
        }
    }

    #[test]
    fn export_is_pure_and_ordered(n in 1usize..12, seed in 0u64..1000) {
        let segments: Vec<StreetSegment> = (0..n)
            .map(|i| {
                let lon = 116.0 + i as f64 * 0.01;
                StreetSegment::new(format!("seg-{:02}", (i * 7 + seed as usize) % 97), vec![
                    LonLat { lon, lat: 39.9 },
                    LonLat { lon, lat: 39.905 },
                ]).unwrap()
            })
            .collect();
        let mut scores: Vec<SegmentScore> = segments
            .iter()
            .enumerate()
            .map(|(i, s)| SegmentScore {
                segment_id: s.segment_id().to_string(),
                quality_mean: Some(1.0 + (i % 4) as f64),
                continuity_share: Some((i % 5) as f64 / 4.0),
                n_images: i + 1,
            })
            .collect();
        let a = export_geojson(&scores, &segments, &MapBins::default()).unwrap();
        scores.reverse();
        let b = export_geojson(&scores, &segments, &MapBins::default()).unwrap();
        prop_assert_eq!(&a, &b);
        let doc: serde_json::Value = serde_json::from_str(&a).unwrap();
        let ids: Vec<&str> = doc["features"].as_array().unwrap().iter()
            .map(|f| f["properties"]["segment_id"].as_str().unwrap()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        prop_assert_eq!(ids, sorted);
    }
}

#[test]
fn haversine_reference_values() {
    // values computed independently from the haversine formula with R = 6 371 000 m
    let d = haversine_m(LonLat { lon: 116.0, lat: 39.90 }, LonLat { lon: 116.0, lat: 39.91 });
    assert!((d - 1_111.949_266_445_518).abs() < 1e-6, "{d}");
    let q = haversine_m(LonLat { lon: 0.0, lat: 0.0 }, LonLat { lon: 0.0, lat: 90.0 });
    assert!((q - std::f64::consts::FRAC_PI_2 * EARTH_RADIUS_M).abs() < 1e-6);
    assert_eq!(haversine_m(LonLat { lon: 116.0, lat: 39.9 }, LonLat { lon: 116.0, lat: 39.9 }), 0.0);
}

#[test]
fn network_round_trip_and_export_numbers() {
    let segs = vec![
        StreetSegment::new("b", vec![LonLat { lon: 116.123456789012, lat: 39.9 }, LonLat { lon: 116.2, lat: 39.9 }]).unwrap(),
        StreetSegment::new("a", vec![LonLat { lon: 116.0, lat: 39.9 }, LonLat { lon: 116.0, lat: 39.95 }]).unwrap(),
    ];
    let text = streetscape::geo::network_to_geojson(&segs);
    let back = parse_network(&text).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].segment_id(), "a");

    let scores = vec![SegmentScore { segment_id: "b".into(), quality_mean: Some(3.0), continuity_share: Some(0.5), n_images: 2 }];
    let out = export_geojson(&scores, &segs, &MapBins::default()).unwrap();
    // 9 significant digits at most
    assert!(out.contains("116.123457"));
    assert!(!out.contains("116.1234567890"));
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    let props = &doc["features"][0]["properties"];
    assert_eq!(props["quality_mean"], 3.0);
    assert_eq!(props["quality_bin"], 2);
    assert_eq!(props["continuity_bin"], 2);
}
