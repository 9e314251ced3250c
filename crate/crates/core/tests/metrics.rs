use std::collections::HashSet;

use mcseg_core::metrics::{aggregate, boundary_f, default_tolerance, iou, EvalRow, SegMask};
use proptest::prelude::*;

fn points(m: &SegMask) -> HashSet<(i64, i64)> {
    let mut s = HashSet::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                s.insert((x as i64, y as i64));
            }
        }
    }
    s
}

fn oracle_iou(m: &SegMask, g: &SegMask) -> f64 {
    let (a, b) = (points(m), points(g));
    let u = a.union(&b).count();
    if u == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / u as f64
    }
}

fn edge(m: &SegMask) -> Vec<(i64, i64)> {
    let s = points(m);
    s.iter()
        .copied()
        .filter(|(x, y)| [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !s.contains(&(x + dx, y + dy))))
        .collect()
}

fn oracle_f(m: &SegMask, g: &SegMask, r: usize) -> f64 {
    let (a, b) = (edge(m), edge(g));
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let r2 = (r * r) as i64;
    let hit = |p: &(i64, i64), set: &[(i64, i64)]| set.iter().any(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2) <= r2);
    let p = a.iter().filter(|p| hit(p, &b)).count() as f64 / a.len() as f64;
    let rc = b.iter().filter(|q| hit(q, &a)).count() as f64 / b.len() as f64;
    if p + rc == 0.0 {
        0.0
    } else {
        2.0 * p * rc / (p + rc)
    }
}

fn mask_strategy() -> impl Strategy<Value = (SegMask, SegMask)> {
    (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(0u8..2, w * h),
            prop::collection::vec(0u8..2, w * h),
        )
            .prop_map(move |(a, b)| (SegMask::new(w, h, a).unwrap(), SegMask::new(w, h, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn iou_matches_set_oracle((m, g) in mask_strategy()) {
        prop_assert_eq!(iou(&m, &g).unwrap(), oracle_iou(&m, &g));
    }

    #[test]
    fn boundary_f_matches_brute_force((m, g) in mask_strategy(), r in 0usize..4) {
        let got = boundary_f(&m, &g, Some(r)).unwrap();
        prop_assert!((got - oracle_f(&m, &g, r)).abs() <= 1e-12);
        let d = default_tolerance(m.width(), m.height());
        let got = boundary_f(&m, &g, None).unwrap();
        prop_assert!((got - oracle_f(&m, &g, d)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_symmetric((m, g) in mask_strategy()) {
        prop_assert_eq!(iou(&m, &g).unwrap(), iou(&g, &m).unwrap());
        prop_assert_eq!(boundary_f(&m, &g, Some(1)).unwrap(), boundary_f(&g, &m, Some(1)).unwrap());
    }
}

#[test]
fn tolerance_scales_with_diagonal() {
    assert_eq!(default_tolerance(854, 480), 8);
    assert_eq!(default_tolerance(16, 16), 1);
}

#[test]
fn size_mismatch_is_an_error() {
    assert!(iou(&SegMask::empty(3, 3), &SegMask::empty(3, 4)).is_err());
    assert!(boundary_f(&SegMask::empty(3, 3), &SegMask::empty(4, 3), None).is_err());
}

fn row(seed: u64, sequence: &str, frame: u32, iou: f64) -> EvalRow {
    EvalRow {
        condition: "stationary".into(),
        variant: "dual_diff".into(),
        seed,
        fold: 0,
        sequence: sequence.into(),
        frame,
        f: iou,
        iou,
    }
}

#[test]
fn sequences_weigh_equally_regardless_of_length() {
    let rows = vec![
        row(0, "long", 0, 1.0),
        row(0, "long", 1, 1.0),
        row(0, "long", 2, 1.0),
        row(0, "short", 0, 0.0),
        row(1, "long", 0, 0.5),
        row(1, "short", 0, 0.5),
    ];
    let report = aggregate(rows).unwrap();
    let s = &report.summaries[0];
    assert_eq!(s.seeds.len(), 2);
    assert_eq!(s.seeds[0].iou, 0.5);
    assert_eq!(s.iou, 0.5);
    assert!((s.frame_iou - 4.0 / 6.0).abs() < 1e-12);
}
