use octopus_core::model::{Contour, PolarFrame, Pullback};
use octopus_core::phantom::{
    generate, GroundTruth, GuidewireSpec, IntensityModel, LumenSpec, PhantomSpec, StrutSpec,
};
use octopus_core::stent::corpus::default_models;
use octopus_core::stent::*;

fn ring_spec(noise: f64, struts: Vec<StrutSpec>) -> PhantomSpec {
    PhantomSpec {
        id: "ring".into(),
        n_frames: 1,
        n_alines: 504,
        n_r: 704,
        r_pixel_um: 5.0,
        frame_spacing_mm: 0.2,
        lumen: LumenSpec::circle(1.5),
        guidewire: None,
        calcium: vec![],
        struts,
        noise,
        intensity: IntensityModel::default(),
    }
}

fn eight_struts(coverage_mm: f64, offset_mm: f64) -> Vec<StrutSpec> {
    (0..8)
        .map(|k| StrutSpec {
            frame: 0,
            angle_deg: 10.0 + 45.0 * k as f64,
            offset_mm,
            coverage_mm,
        })
        .collect()
}

fn render(spec: &PhantomSpec, seed: u64) -> (Pullback, GroundTruth) {
    generate(spec, seed).unwrap()
}

fn truth_border(gt: &GroundTruth, f: usize) -> Contour {
    gt.lumen[f].clone()
}

fn circular_gap(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

fn scaled(frame: &PolarFrame, s: f64) -> PolarFrame {
    PolarFrame {
        index: frame.index,
        pixels: frame.pixels.map(|&v| (v as f64 * s).round().clamp(0.0, 65535.0) as u16),
    }
}

#[test]
fn no_struts_no_candidates() {
    let (pb, gt) = render(&ring_spec(0.0, vec![]), 1);
    let c = detect_candidates(pb.frame(0), &truth_border(&gt, 0), &[false; 504], &StentConfig::default());
    assert!(c.is_empty());
}

#[test]
fn eight_struts_found_at_truth() {
    for (cov, off) in [(0.0, 0.0), (0.08, 0.0), (0.0, 0.3)] {
        let (pb, gt) = render(&ring_spec(0.0, eight_struts(cov, off)), 2);
        let c = detect_candidates(pb.frame(0), &truth_border(&gt, 0), &[false; 504], &StentConfig::default());
        assert_eq!(c.len(), 8, "coverage {cov} offset {off}");
        for t in &gt.struts {
            let m = c
                .iter()
                .find(|c| circular_gap(c.aline, t.aline, 504) <= 1)
                .expect("strut detected");
            assert!((m.center_px - t.center_px).abs() <= 2.0);
            assert_eq!(m.lead_px, t.lead_px);
            assert_eq!(m.width, 5);
        }
    }
}

#[test]
fn guidewire_hides_overlapping_strut() {
    let mut spec = ring_spec(0.0, eight_struts(0.0, 0.0));
    spec.guidewire = Some(GuidewireSpec {
        center_deg: 100.0,
        width_deg: 20.0,
        drift_deg: 0.0,
        radius_fraction: 0.55,
    });
    let (pb, gt) = render(&spec, 3);
    let band = gt.guidewire.as_ref().unwrap();
    let c = detect_candidates(pb.frame(0), &truth_border(&gt, 0), &band.mask(0), &StentConfig::default());
    assert_eq!(c.len(), 7);
    let hidden = octopus_core::model::aline_for_degrees(100.0, 504);
    assert!(c.iter().all(|c| circular_gap(c.aline, hidden, 504) > 10));
}

#[test]
fn features_are_defined_and_deterministic() {
    let (pb, gt) = render(&ring_spec(1.0, eight_struts(0.1, 0.0)), 4);
    let cfg = StentConfig::default();
    let c = detect_candidates(pb.frame(0), &truth_border(&gt, 0), &[false; 504], &cfg);
    let a = extract_features(&c[0], pb.frame(0), &cfg);
    let b = extract_features(&c[0].clone(), pb.frame(0), &cfg);
    assert_eq!(a, b);
    assert_eq!(a.values.len(), DETECTOR_FEATURES + COVERAGE_FEATURES);
    assert!(a.values.iter().all(|v| v.is_finite()));

    let zero = PolarFrame {
        index: 0,
        pixels: pb.frame(0).pixels.map(|_| 0u16),
    };
    let mut cand = c[0].clone();
    cand.tissue = 0.0;
    cand.peak = 0.0;
    cand.shadow_mean = 0.0;
    cand.lumen_px = cand.lead_px as f64;
    let z = extract_features(&cand, &zero, &cfg);
    let nonzero: Vec<(usize, f64)> = z.values.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
    // only the geometric features (bloom extent, shadow width) survive an empty frame
    assert!(nonzero.iter().all(|(i, _)| *i == 1 || *i == 3), "{nonzero:?}");
}

#[test]
fn covered_and_uncovered_center_patches_differ() {
    let cfg = StentConfig::default();
    let mut cov = Vec::new();
    let mut unc = Vec::new();
    for seed in 0..6 {
        for (coverage, out) in [(0.08, &mut cov), (0.0, &mut unc)] {
            let (pb, gt) = render(&ring_spec(1.0, eight_struts(coverage, 0.0)), 10 + seed);
            for c in detect_candidates(pb.frame(0), &truth_border(&gt, 0), &[false; 504], &cfg) {
                // coverage feature 0: center patch mean
                out.push(extract_features(&c, pb.frame(0), &cfg).coverage()[0]);
            }
        }
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let (m1, v1) = stats(&cov);
    let (m0, v0) = stats(&unc);
    let effect = (m1 - m0) / ((v1 + v0) / 2.0).sqrt();
    assert!(effect > 1.0, "effect size {effect}");
}

#[test]
fn classification_examples() {
    let models = default_models();
    assert!(classify_struts(&[], &[], &models.detector, 0.5, 504).unwrap().is_empty());
    assert!(matches!(
        classify_struts(&[], &[], &models.coverage, 0.5, 504),
        Err(StentError::ModelKindMismatch { .. })
    ));
    let cfg = StentConfig::default();
    let cal = octopus_core::model::Calibration::default();

    let (pb, gt) = render(&ring_spec(1.0, eight_struts(0.08, 0.0)), 21);
    let recs = analyze_frame(pb.frame(0), &truth_border(&gt, 0), &[false; 504], models, &cal, &cfg).unwrap();
    assert_eq!(recs.len(), 8);
    for r in &recs {
        assert!(r.covered());
        assert!((r.coverage_um - 80.0).abs() <= 5.0, "coverage {}", r.coverage_um);
        assert_eq!(r.malapposition_um, 0.0);
    }

    let (pb, gt) = render(&ring_spec(1.0, eight_struts(0.0, 0.0)), 22);
    let recs = analyze_frame(pb.frame(0), &truth_border(&gt, 0), &[false; 504], models, &cal, &cfg).unwrap();
    assert_eq!(recs.len(), 8);
    assert!(recs.iter().all(|r| !r.covered() && r.coverage_um == 0.0 && !r.malapposed));

    let (pb, gt) = render(&ring_spec(1.0, eight_struts(0.0, 0.3)), 23);
    let recs = analyze_frame(pb.frame(0), &truth_border(&gt, 0), &[false; 504], models, &cal, &cfg).unwrap();
    assert_eq!(recs.len(), 8);
    for (r, t) in recs.iter().zip(&gt.struts) {
        assert!(r.malapposed);
        assert!((r.malapposition_um - 300.0).abs() <= 10.0, "{}", r.malapposition_um);
        assert!((r.malapposition_um - t.malapposition_um).abs() <= 10.0);
    }
}

#[test]
fn calcium_rim_blooms_are_rejected() {
    use octopus_core::phantom::CalciumLesionSpec;
    let mut spec = ring_spec(1.0, eight_struts(0.0, 0.0));
    spec.n_frames = 4;
    spec.struts = (0..4).flat_map(|f| eight_struts(0.0, 0.0).into_iter().map(move |s| StrutSpec { frame: f, ..s })).collect();
    spec.calcium = vec![CalciumLesionSpec {
        frames: [0, 3],
        center_deg: 32.0,
        arc_deg: 30.0,
        depth_mm: 0.05,
        thickness_mm: 0.6,
        end_thickness_mm: None,
        end_arc_deg: None,
    }];
    let (pb, gt) = render(&spec, 31);
    let cal = pb.calibration;
    let models = default_models();
    let cfg = StentConfig::default();
    for f in 0..4 {
        let recs = analyze_frame(pb.frame(f), &truth_border(&gt, f), &[false; 504], models, &cal, &cfg).unwrap();
        let truth: Vec<_> = gt.struts.iter().filter(|s| s.frame == f).collect();
        assert_eq!(recs.len(), truth.len(), "frame {f}");
        for t in truth {
            assert!(recs.iter().any(|r| circular_gap(r.aline, t.aline, 504) <= 1));
        }
    }
}

#[test]
fn intensity_scaling_keeps_strut_set() {
    let models = default_models();
    let cfg = StentConfig::default();
    let mut spec = ring_spec(0.0, eight_struts(0.0, 0.0));
    spec.n_frames = 3;
    spec.struts = vec![];
    for (f, (cov, off)) in [(0.1, 0.0), (0.0, 0.0), (0.0, 0.25)].into_iter().enumerate() {
        spec.struts
            .extend(eight_struts(cov, off).into_iter().map(|s| StrutSpec { frame: f, ..s }));
    }
    let (pb, gt) = render(&spec, 5);
    let cal = pb.calibration;
    for f in 0..3 {
        let base = analyze_frame(pb.frame(f), &truth_border(&gt, f), &[false; 504], models, &cal, &cfg).unwrap();
        assert_eq!(base.len(), 8);
        let key = |rs: &[StrutRecord]| -> Vec<(usize, usize, bool)> {
            rs.iter().map(|r| (r.aline, r.lead_px, r.covered())).collect()
        };
        for s in [0.7, 0.85, 1.15, 1.3] {
            let frame = scaled(pb.frame(f), s);
            let got = analyze_frame(&frame, &truth_border(&gt, f), &[false; 504], models, &cal, &cfg).unwrap();
            assert_eq!(key(&got), key(&base), "frame {f} scale {s}");
        }
    }
}

#[test]
fn covered_iff_positive_coverage_on_random_phantoms() {
    use octopus_core::phantom::RandomPhantomOptions;
    use octopus_core::stent::corpus::prepare;
    let models = default_models();
    let opts = RandomPhantomOptions {
        n_frames: 6,
        struts_per_frame: 8,
        ..Default::default()
    };
    for seed in 300..303 {
        let p = prepare(seed, &opts);
        let a = analyze_stent(&p.pullback, &p.borders, p.band.as_ref(), models, &StentConfig::default()).unwrap();
        assert!(!a.records.is_empty());
        for r in &a.records {
            assert_eq!(r.covered(), r.coverage_um > 0.0);
            assert!(r.coverage_um >= 0.0 && r.malapposition_um >= 0.0);
            assert!(!(r.covered() && r.malapposed));
        }
        assert_eq!(a.contours.len(), 6);
        assert!(a.contours.iter().all(Option::is_some));
    }
}

#[test]
fn stent_contour_tracks_struts() {
    use octopus_core::phantom::RandomPhantomOptions;
    use octopus_core::stent::corpus::prepare;
    let opts = RandomPhantomOptions {
        n_frames: 4,
        struts_per_frame: 8,
        p_covered: 0.0,
        p_malapposed: 0.0,
        ..Default::default()
    };
    let p = prepare(77, &opts);
    let a = analyze_stent(&p.pullback, &p.borders, p.band.as_ref(), default_models(), &StentConfig::default()).unwrap();
    for f in 0..4 {
        let truth: Vec<(f64, f64)> = p
            .truth
            .struts
            .iter()
            .filter(|s| s.frame == f)
            .map(|s| (s.aline as f64, s.center_px))
            .collect();
        let want = fit_stent_contour(&truth, 504).unwrap();
        let got = a.contours[f].as_ref().unwrap();
        let rms = (want.radii.iter().zip(&got.radii).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 504.0).sqrt();
        assert!(rms <= 3.0, "frame {f} rms {rms}");
    }
}
