use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ensure_finite, Comparison, ConditionMap, Projector, ProjectorKind};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, grayscale, sobel};

/// Canny parameters. Thresholds apply to the gradient magnitude divided by
/// its per-image maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannyParams {
    pub blur_sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("canny blur sigma {}", self.blur_sigma)));
        }
        if !(0.0 < self.low && self.low < self.high && self.high <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "canny thresholds must satisfy 0 < low < high <= 1 (low={}, high={})",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Blur kernel radius: `ceil(2σ)`, i.e. 5 taps at σ = 1.
    pub fn blur_radius(&self) -> usize {
        (2.0 * self.blur_sigma).ceil().max(1.0) as usize
    }

    pub fn stamp(&self) -> String {
        format!(
            "canny(sigma={},radius={},low={},high={},luma=601,nms=4dir,hyst=8conn)",
            self.blur_sigma,
            self.blur_radius(),
            self.low,
            self.high
        )
    }
}

// Relative slack for magnitude comparisons; keeps NMS tie-breaking stable
// under rounding noise.
const TIE_EPS: f64 = 1e-9;

/// Canny edges of a grayscale plane as a `{0, 1}` map.
pub fn canny_plane(gray: &[f64], height: usize, width: usize, params: &CannyParams) -> Result<Vec<f64>> {
    params.validate()?;
    if gray.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("canny input".into()));
    }
    let blurred = gaussian_blur(gray, height, width, params.blur_sigma, params.blur_radius());
    let (gx, gy) = sobel(&blurred, height, width);
    let mut mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if !(max > 1e-12) {
        return Ok(vec![0.0; gray.len()]);
    }
    mag.iter_mut().for_each(|m| *m /= max);

    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            0.0
        } else {
            mag[y as usize * width + x as usize]
        }
    };

    // Non-maximum suppression along the gradient direction quantized to
    // 0/45/90/135 degrees. A pixel survives if it is strictly larger than
    // its neighbour against the gradient and not smaller than the one along
    // it, so a symmetric ridge keeps exactly one pixel.
    let mut thin = vec![0.0; gray.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let m = mag[i];
            if m <= TIE_EPS {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dy, dx): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let before = at(yi - dy, xi - dx);
            let after = at(yi + dy, xi + dx);
            if m > before + TIE_EPS && m >= after - TIE_EPS {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: strong pixels seed an 8-connected flood through weak ones.
    let mut edges = vec![0.0; gray.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= params.high {
            edges[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / width) as isize, (i % width) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if edges[j] == 0.0 && thin[j] >= params.low {
                    edges[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(edges)
}

/// Canny edge map of an image: BT.601 luma, Gaussian blur, 3x3 Sobel,
/// 4-direction non-maximum suppression, hysteresis.
pub fn canny(image: &ImageTensor, params: &CannyParams) -> Result<ConditionMap> {
    ensure_finite(image)?;
    let gray = grayscale(image);
    let edges = canny_plane(&gray, image.height(), image.width(), params)?;
    ConditionMap::spatial("canny", image.height(), image.width(), edges)
}

#[derive(Clone, Debug, Default)]
pub struct CannyProjector {
    pub params: CannyParams,
}

impl CannyProjector {
    pub fn new(params: CannyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Projector for CannyProjector {
    fn name(&self) -> &str {
        "canny"
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::SpatialMap
    }

    fn comparison(&self) -> Comparison {
        Comparison::L1Mean
    }

    fn stamp(&self) -> String {
        self.params.stamp()
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        canny(image, &self.params)
    }
}
