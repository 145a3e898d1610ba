use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Result};
use crate::latent::ImageBuffer;
use crate::masks::{components, dilate, erode_ignoring_border, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractParams {
    /// Cut on the per-pixel RGB-mean absolute difference.
    pub threshold: f64,
    /// Radius in pixels of the min-pool then max-pool pass.
    pub pool_radius: usize,
    pub min_component: usize,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            pool_radius: 2,
            min_component: 16,
        }
    }
}

/// Per-pixel mean over RGB of `|a - b|`.
pub fn difference_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<Vec<f64>> {
    check_dims("image", a.dims(), b.dims())?;
    Ok(a.data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .map(|(p, q)| ((p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()) / 3.0)
        .collect())
}

/// Region changed between `input` and `output`, as a union of convex blobs.
pub fn extract_edit_mask(input: &ImageBuffer, output: &ImageBuffer, params: &ExtractParams) -> Result<BinaryMask> {
    let diff = difference_map(input, output)?;
    let (w, h) = input.dims();
    let raw = BinaryMask::new(w, h, diff.iter().map(|&d| d > params.threshold).collect())?;
    let opened = dilate(&erode_ignoring_border(&raw, params.pool_radius), params.pool_radius);

    let mut kept = BinaryMask::new_empty(w, h);
    for comp in components(&opened) {
        if comp.len() >= params.min_component {
            for i in comp {
                kept.set(i % w, i / w, true);
            }
        }
    }
    Ok(hull_union(&kept))
}

/// Replaces each component with its convex hull until no two hulls touch.
fn hull_union(mask: &BinaryMask) -> BinaryMask {
    let mut current = mask.clone();
    loop {
        let (w, h) = current.dims();
        let mut next = BinaryMask::new_empty(w, h);
        for comp in components(&current) {
            let points: Vec<(i64, i64)> = comp.iter().map(|&i| ((i % w) as i64, (i / w) as i64)).collect();
            fill_hull(&mut next, &convex_hull(points));
        }
        if next == current {
            return next;
        }
        current = next;
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, no collinear vertices.
pub fn convex_hull(mut points: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    points.sort_unstable();
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &points {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in points.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_hull(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

fn fill_hull(mask: &mut BinaryMask, hull: &[(i64, i64)]) {
    if hull.is_empty() {
        return;
    }
    let x0 = hull.iter().map(|p| p.0).min().unwrap_or(0);
    let x1 = hull.iter().map(|p| p.0).max().unwrap_or(0);
    let y0 = hull.iter().map(|p| p.1).min().unwrap_or(0);
    let y1 = hull.iter().map(|p| p.1).max().unwrap_or(0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if inside_hull(hull, (x, y)) {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
}

/// Pixels inside the convex hull of `mask`'s set cells.
pub fn hull_of(mask: &BinaryMask) -> BinaryMask {
    let w = mask.width();
    let points = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| ((i % w) as i64, (i / w) as i64))
        .collect();
    let mut out = BinaryMask::new_empty(mask.width(), mask.height());
    fill_hull(&mut out, &convex_hull(points));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk_pair(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> (ImageBuffer, ImageBuffer, BinaryMask) {
        let base = ImageBuffer::from_fn(w, h, |x, y| {
            [0.2 + 0.3 * x as f64 / w as f64, 0.4, 0.2 + 0.2 * y as f64 / h as f64]
        })
        .unwrap();
        let support = BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        });
        let edited = ImageBuffer::from_fn(w, h, |x, y| {
            let p = base.pixel(x, y);
            if support.get(x, y) {
                [p[0] + 0.5, p[1] + 0.5, p[2] + 0.5]
            } else {
                p
            }
        })
        .unwrap();
        (base, edited, support)
    }

    #[test]
    fn identical_images_give_empty_mask() {
        let (a, _, _) = disk_pair(40, 30, 10.0, 10.0, 5.0);
        assert!(extract_edit_mask(&a, &a, &ExtractParams::default()).unwrap().is_empty());
    }

    #[test]
    fn swap_symmetry() {
        let (a, b, _) = disk_pair(48, 40, 20.0, 18.0, 9.0);
        let p = ExtractParams::default();
        assert_eq!(extract_edit_mask(&a, &b, &p).unwrap(), extract_edit_mask(&b, &a, &p).unwrap());
    }

    #[test]
    fn disk_edit_recovers_hull() {
        let (a, b, support) = disk_pair(64, 64, 30.0, 33.0, 12.0);
        let mask = extract_edit_mask(&a, &b, &ExtractParams::default()).unwrap();
        assert!(mask.iou(&hull_of(&support)) >= 0.8);
    }

    #[test]
    fn small_speckles_are_dropped() {
        let (a, _, _) = disk_pair(32, 32, 0.0, 0.0, 0.0);
        let speck = ImageBuffer::from_fn(32, 32, |x, y| {
            let p = a.pixel(x, y);
            if (x, y) == (5, 5) || (x, y) == (20, 9) {
                [1.0, 1.0, 1.0]
            } else {
                p
            }
        })
        .unwrap();
        assert!(extract_edit_mask(&a, &speck, &ExtractParams::default()).unwrap().is_empty());
    }

    #[test]
    fn hull_of_known_shapes() {
        assert_eq!(convex_hull(vec![(0, 0), (2, 0), (1, 1), (2, 2), (0, 2), (1, 0)]), vec![
            (0, 0),
            (2, 0),
            (2, 2),
            (0, 2)
        ]);
        // An L shape fills to its triangle hull.
        let l = BinaryMask::from_fn(5, 5, |x, y| x == 0 || y == 4);
        let hull = hull_of(&l);
        let expected = BinaryMask::from_fn(5, 5, |x, y| x <= y);
        assert_eq!(hull, expected);
        // Collinear points stay a segment.
        let seg = BinaryMask::from_fn(6, 3, |x, y| y == 1 && (x == 1 || x == 4));
        assert_eq!(hull_of(&seg), BinaryMask::from_fn(6, 3, |x, y| y == 1 && (1..=4).contains(&x)));
    }

    proptest! {
        #[test]
        fn output_components_are_convex(
            bits in proptest::collection::vec(prop::bool::weighted(0.3), 24 * 24),
        ) {
            let a = ImageBuffer::filled(24, 24, [0.5; 3]).unwrap();
            let b = ImageBuffer::from_fn(24, 24, |x, y| if bits[y * 24 + x] { [0.0; 3] } else { [0.5; 3] }).unwrap();
            let params = ExtractParams { threshold: 0.05, pool_radius: 0, min_component: 1 };
            let mask = extract_edit_mask(&a, &b, &params).unwrap();
            for comp in components(&mask) {
                let mut single = BinaryMask::new_empty(24, 24);
                for i in comp { single.set(i % 24, i / 24, true); }
                prop_assert_eq!(hull_of(&single), single);
            }
        }
    }
}
