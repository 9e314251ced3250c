//! Middlebury color-wheel rendering of flow fields.

use super::FlowField;
use crate::raster::Image;

/// (length, saturated channel, ramped channel) per wheel segment.
const SEGMENTS: [(usize, usize, usize); 6] = [
    (15, 0, 1), // red → yellow
    (6, 1, 0),  // yellow → green
    (4, 1, 2),  // green → cyan
    (11, 2, 1), // cyan → blue
    (13, 2, 0), // blue → magenta
    (6, 0, 2),  // magenta → red
];

/// The 55-entry wheel. Each segment holds one channel at 255 and ramps
/// another up (even segments) or down (odd segments).
fn color_wheel() -> Vec<[f32; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (s, &(len, full, ramp)) in SEGMENTS.iter().enumerate() {
        for i in 0..len {
            let step = (255 * i / len) as f32;
            let mut c = [0.0f32; 3];
            c[full] = 255.0;
            c[ramp] = if s % 2 == 0 { step } else { 255.0 - step };
            wheel.push(c.map(|v| v / 255.0));
        }
    }
    wheel
}

/// Renders flow as RGB in [0, 1]. Direction picks the hue; magnitude,
/// normalized by the field's 99th-percentile magnitude, picks saturation.
/// Zero flow is white; magnitudes beyond the percentile are darkened.
pub fn flow_to_rgb(flow: &FlowField) -> Image {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let mags: Vec<f32> = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(u, v)| (u * u + v * v).sqrt())
        .collect();
    let norm = percentile(&mags, 0.99);
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };

    let mut out = Image::new(flow.width(), flow.height(), 3);
    for (i, px) in out.data_mut().chunks_mut(3).enumerate() {
        let (fx, fy) = (flow.u()[i] * scale, flow.v()[i] * scale);
        let rad = (fx * fx + fy * fy).sqrt();
        let a = (-fy).atan2(-fx) / std::f32::consts::PI;
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f32;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f32;
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            px[c] = if rad <= 1.0 {
                1.0 - rad * (1.0 - col)
            } else {
                col * 0.75
            };
        }
    }
    out
}

/// Nearest-rank percentile; 0 for an empty slice.
fn percentile(values: &[f32], q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_saturated_colors() {
        let wheel = color_wheel();
        assert_eq!(wheel.len(), 55);
        assert_eq!(wheel[0], [1.0, 0.0, 0.0]);
        assert!(wheel.iter().all(|c| c.iter().any(|&v| v == 1.0)));
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_rgb(&FlowField::zeros(5, 4));
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_flow_is_one_non_white_color() {
        let img = flow_to_rgb(&FlowField::uniform(6, 3, 1.0, 0.0));
        let first = [img.get(0, 0, 0), img.get(0, 0, 1), img.get(0, 0, 2)];
        assert!(first.iter().any(|&v| v < 0.99));
        for px in img.data().chunks(3) {
            assert_eq!(px, first);
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }
}
