use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageTensor;

/// Gray image split by the line through `(cx, cy)` with normal angle
/// `theta`; one side is `lo`, the other `hi`.
pub fn step_edge_image(id: &str, side: usize, cx: f64, cy: f64, theta: f64, lo: f64, hi: f64) -> ImageTensor {
    let (nx, ny) = (theta.cos(), theta.sin());
    let mut plane = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let d = (x as f64 + 0.5 - cx) * nx + (y as f64 + 0.5 - cy) * ny;
            plane.push(if d >= 0.0 { hi } else { lo });
        }
    }
    ImageTensor::from_gray(id, side, side, &plane).expect("values in range")
}

/// Gray image with a filled disc of radius `r` at `(cx, cy)`.
pub fn blob_image(id: &str, side: usize, cx: f64, cy: f64, r: f64, fg: f64, bg: f64) -> ImageTensor {
    let mut plane = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            plane.push(if dx * dx + dy * dy <= r * r { fg } else { bg });
        }
    }
    ImageTensor::from_gray(id, side, side, &plane).expect("values in range")
}

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

/// One image of the shapes set: a coloured background with one to three
/// rectangles or discs and a faint horizontal gradient.
fn shapes_image(id: String, side: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let bg = colour(rng);
    let tilt = rng.gen_range(-0.15..0.15);
    let mut data = vec![0.0; 3 * side * side];
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                data[(c * side + y) * side + x] = bg[c] + tilt * (x as f64 / side as f64 - 0.5);
            }
        }
    }
    let s = side as f64;
    for _ in 0..rng.gen_range(1..=3) {
        let fg = colour(rng);
        let disc = rng.gen_bool(0.5);
        let (cx, cy) = (rng.gen_range(0.2 * s..0.8 * s), rng.gen_range(0.2 * s..0.8 * s));
        let (a, b) = (rng.gen_range(0.1 * s..0.3 * s), rng.gen_range(0.1 * s..0.3 * s));
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc { dx * dx + dy * dy <= a * a } else { dx.abs() <= a && dy.abs() <= b };
                if inside {
                    for c in 0..3 {
                        data[(c * side + y) * side + x] = fg[c];
                    }
                }
            }
        }
    }
    ImageTensor::from_clamped(id, side, side, data).expect("finite values")
}

/// `n` seeded shape images with ids `img_0000`, `img_0001`, ...; image `i`
/// depends only on `(seed, i)`.
pub fn shapes_dataset(n: usize, side: usize, seed: u64) -> Vec<ImageTensor> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            shapes_image(format!("img_{i:04}"), side, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_seeded_and_distinct() {
        let a = shapes_dataset(6, 32, 7);
        let b = shapes_dataset(6, 32, 7);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        for i in 0..a.len() {
            for j in 0..i {
                assert_ne!(a[i].data(), a[j].data());
            }
        }
        // a prefix of a larger set is the smaller set
        assert_eq!(shapes_dataset(3, 32, 7)[2].data(), a[2].data());
    }

    #[test]
    fn step_and_blob_values() {
        let s = step_edge_image("s", 8, 4.0, 4.0, 0.0, 0.0, 1.0);
        assert_eq!(s.plane(0)[0], 0.0);
        assert_eq!(s.plane(0)[7], 1.0);
        let b = blob_image("b", 8, 4.0, 4.0, 1.0, 1.0, 0.0);
        assert_eq!(b.plane(1)[3 * 8 + 3], 1.0);
        assert_eq!(b.plane(1)[0], 0.0);
    }
}
