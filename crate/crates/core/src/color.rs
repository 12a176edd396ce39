//! RGB to HSV (hexcone model).

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(px: [u8; 3]) -> Hsv {
    let [r, g, b] = px;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == min {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let delta = (max - min) as f64;
    let s = delta / max as f64;
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let sector = if max == px[0] {
        (g - b) / delta
    } else if max == px[1] {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

/// Saturation only, the channel the tissue detector thresholds.
#[inline]
pub fn saturation(px: [u8; 3]) -> f64 {
    let max = px[0].max(px[1]).max(px[2]);
    let min = px[0].min(px[1]).min(px[2]);
    if max == 0 {
        0.0
    } else {
        (max - min) as f64 / max as f64
    }
}

/// Saturation quantized to a histogram bin in `0..=255`.
#[inline]
pub fn saturation_byte(px: [u8; 3]) -> u8 {
    libm::round(saturation(px) * 255.0) as u8
}
