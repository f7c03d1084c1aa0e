// scratch: ICP stall analysis across geometry
use rfslam::geom::Pose2;
use rfslam::turning::{extract_segment, icp_match, Segment, TurningConfig};
use std::f64::consts::FRAC_PI_2;

fn staircase_track(stroke: usize, strokes: usize) -> Vec<Pose2> {
    let mut poses = vec![Pose2::origin()];
    let mut x = 0.0;
    let mut y = 0.0;
    for s in 0..strokes {
        let east = s % 2 == 0;
        for _ in 0..stroke {
            if east { x += 1.0; } else { y += 1.0; }
            poses.push(Pose2::new(x, y, if east { 0.0 } else { FRAC_PI_2 }));
        }
    }
    poses
}

fn probe(name: &str, seg: &Segment) {
    let mut shifted = seg.clone();
    for p in shifted.resampled.iter_mut() {
        p[0] += 0.5;
        p[1] += 0.3;
    }
    let cfg_k = TurningConfig { icp_max_iterations: 200, icp_tolerance: 0.0, ..Default::default() };
    let (t, fit) = icp_match(seg, &shifted, &cfg_k).unwrap();
    println!("{name}  t = ({:+.4}, {:+.4}, {:+.5})  fitness {:.3e}  pts {}", t.dx, t.dy, t.dtheta, fit, seg.resampled.len());
}

fn main() {
    // staircase: 10 strokes of 4 m, window 40 centered mid-track
    let track = staircase_track(4, 10);
    let cfg = TurningConfig::default();
    let seg = extract_segment(&track, 20, &cfg).unwrap();
    probe("staircase", &seg);

    // compact L: 4 m legs, window 8
    let mut l = Vec::new();
    for i in 0..=4 { l.push(Pose2::new(i as f64, 0.0, 0.0)); }
    for i in 1..=4 { l.push(Pose2::new(4.0, i as f64, FRAC_PI_2)); }
    let cfg8 = TurningConfig { window: 8, ..Default::default() };
    let seg_l = extract_segment(&l, 4, &cfg8).unwrap();
    probe("compact-L", &seg_l);
}
