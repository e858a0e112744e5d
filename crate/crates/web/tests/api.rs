//! Demo entry points on the native target.

use akit_web::{compare_filters, explore_beams};

#[test]
fn clean_beams_recover_the_velocity() {
    let r = explore_beams([1.5, -0.4, 0.2], 20.0, 30.0, 0, 0.0).unwrap();
    assert!(r.error.iter().all(|e| e.abs() <= 1e-12), "{:?}", r.error);
}

#[test]
fn single_beam_error_spreads_by_least_squares() {
    let r = explore_beams([2.0, 0.0, 0.0], 20.0, 0.0, 2, 0.1).unwrap();
    // the pseudo-inverse column of one beam: (d_x, d_y) / (2 sin^2 a) and d_z / (4 cos^2 a)
    let a = 20f64.to_radians();
    let (d, c) = (r.geometry[2], a.cos());
    let s = a.sin();
    let expect = [
        0.1 * d[0] / (2.0 * s * s),
        0.1 * d[1] / (2.0 * s * s),
        0.1 * d[2] / (4.0 * c * c),
    ];
    for (e, x) in r.error.iter().zip(expect) {
        assert!((e - x).abs() <= 1e-12, "{e} vs {x}");
    }
    assert!(explore_beams([1.0, 0.0, 0.0], 20.0, 0.0, 4, 0.1).is_err());
}

#[test]
fn comparison_returns_aligned_series() {
    let c = compare_filters("lawnmower", 40.0, 5.0, 0.15, 3).unwrap();
    assert_eq!(c.tracks.len(), 2);
    assert_eq!(c.t.len(), c.truth_north.len());
    for t in &c.tracks {
        assert_eq!(t.velocity_error.len(), c.t.len());
        assert_eq!(t.north.len(), c.t.len());
        assert!(t.vrmse.is_finite() && t.vrmse > 0.0);
    }
    assert!(compare_filters("spiral", 40.0, 1.0, 0.15, 3).is_err());
}
