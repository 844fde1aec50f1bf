//! Conversion of raw DICOM pixel data into policy-filtered, windowed,
//! square 8-bit images.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::{tags, DicomInstance, Photometric, PixelData, TagValue};

pub const DEFAULT_SIZE: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("invalid window: center {center}, width {width}")]
    InvalidWindow { center: f64, width: f64 },
    #[error("no window candidate produces a non-monochrome image")]
    NoValidWindow,
    #[error("no frame passes the value policy")]
    NoMeaningfulFrame,
    #[error("instance has no pixel data")]
    MissingPixelData,
    #[error("shape policy rejected image (r_S = {0:.4})")]
    ShapeRejected(f64),
    #[error("PNG encoding failed: {0}")]
    Png(String),
}

impl ImageError {
    /// Short machine-readable reason used in manifests.
    pub fn reason(&self) -> &'static str {
        match self {
            ImageError::InvalidWindow { .. } => "invalid_window",
            ImageError::NoValidWindow => "no_valid_window",
            ImageError::NoMeaningfulFrame => "value_policy",
            ImageError::MissingPixelData => "missing_pixel_data",
            ImageError::ShapeRejected(_) => "shape_policy",
            ImageError::Png(_) => "png_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowingParams {
    pub slope: f64,
    pub intercept: f64,
    pub center: f64,
    pub width: f64,
}

impl WindowingParams {
    pub fn lower(&self) -> f64 {
        self.center - self.width / 2.0
    }

    pub fn upper(&self) -> f64 {
        self.center + self.width / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyThresholds {
    pub value: f64,
    pub shape: f64,
}

impl Default for PolicyThresholds {
    fn default() -> Self {
        Self { value: 0.1, shape: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportOptions {
    pub thresholds: PolicyThresholds,
    /// Output edge length in pixels.
    pub size: usize,
    /// Invert MONOCHROME1 images after windowing.
    pub invert_monochrome1: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { thresholds: PolicyThresholds::default(), size: DEFAULT_SIZE, invert_monochrome1: true }
    }
}

/// Outcome of a value or shape policy check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyCheck {
    pub ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedImage {
    pub instance_id: String,
    pub size: usize,
    /// Row-major `size × size` intensities.
    pub pixels: Vec<u8>,
    pub window: WindowingParams,
    pub frame: usize,
    pub value_ratio: f64,
    pub shape_ratio: f64,
}

/// `x' = slope · x + intercept`, elementwise and unclamped.
pub fn rescale(raw: &[f64], slope: f64, intercept: f64) -> Vec<f64> {
    raw.iter().map(|&x| slope * x + intercept).collect()
}

/// Maps rescaled values into `[0, 255]` through the window `[W_l, W_u]`.
///
/// Inside the window the linear ramp is rounded half away from zero and
/// clamped. With `invert` set every output `v` becomes `255 − v`.
pub fn window_to_8bit(x: &[f64], center: f64, width: f64, invert: bool) -> Result<Vec<u8>, ImageError> {
    if !(width > 0.0) || !width.is_finite() || !center.is_finite() {
        return Err(ImageError::InvalidWindow { center, width });
    }
    let lower = center - width / 2.0;
    let upper = center + width / 2.0;
    Ok(x.iter()
        .map(|&v| {
            let out = if v <= lower {
                0
            } else if v >= upper {
                255
            } else {
                ((1.0 / width) * (v - center + width / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8
            };
            if invert {
                255 - out
            } else {
                out
            }
        })
        .collect())
}

fn is_monochrome(img: &[u8]) -> bool {
    img.windows(2).all(|w| w[0] == w[1])
}

/// Pairs window centers and widths. A scalar list is broadcast against a
/// multi-valued one; otherwise pairs are taken positionally.
pub fn window_candidates(centers: &[f64], widths: &[f64]) -> Vec<(f64, f64)> {
    match (centers.len(), widths.len()) {
        (0, _) | (_, 0) => Vec::new(),
        (1, n) => widths.iter().take(n).map(|&w| (centers[0], w)).collect(),
        (n, 1) => centers.iter().take(n).map(|&c| (c, widths[0])).collect(),
        _ => centers.iter().copied().zip(widths.iter().copied()).collect(),
    }
}

/// First candidate window whose output is not a single intensity.
/// Candidates with a non-positive width are skipped.
pub fn select_window(candidates: &[(f64, f64)], x: &[f64], invert: bool) -> Result<(f64, f64), ImageError> {
    for &(c, w) in candidates {
        match window_to_8bit(x, c, w, invert) {
            Ok(img) if !is_monochrome(&img) => return Ok((c, w)),
            _ => continue,
        }
    }
    Err(ImageError::NoValidWindow)
}

/// Ratio of distinct intensities to the 256 possible ones; accepted when
/// strictly above the threshold.
pub fn value_policy(img: &[u8], threshold: f64) -> PolicyCheck {
    let mut seen = [false; 256];
    for &v in img {
        seen[usize::from(v)] = true;
    }
    let distinct = seen.iter().filter(|&&s| s).count();
    let ratio = distinct as f64 / 256.0;
    PolicyCheck { ratio, accepted: !img.is_empty() && ratio > threshold }
}

/// `min(rows, cols) / max(rows, cols)`; accepted when strictly above the
/// threshold.
pub fn shape_policy(rows: usize, cols: usize, threshold: f64) -> PolicyCheck {
    let ratio = rows.min(cols) as f64 / rows.max(cols).max(1) as f64;
    PolicyCheck { ratio, accepted: ratio > threshold }
}

/// Window candidates from the instance tags, with a full-range fallback when
/// the tags are absent.
fn tag_window_candidates(inst: &DicomInstance, rescaled: &[f64]) -> Vec<(f64, f64)> {
    let numbers = |v: Option<&TagValue>| -> Vec<f64> {
        v.map(|v| v.values().iter().filter_map(|s| s.trim().parse::<f64>().ok()).collect())
            .unwrap_or_default()
    };
    let c = numbers(inst.get(tags::WINDOW_CENTER));
    let w = numbers(inst.get(tags::WINDOW_WIDTH));
    let mut cands = window_candidates(&c, &w);
    if cands.is_empty() {
        let (lo, hi) = rescaled
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            cands.push(((lo + hi) / 2.0, hi - lo));
        }
    }
    cands
}

/// Selected frame with the window that was applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    pub frame: usize,
    pub center: f64,
    pub width: f64,
    pub image: Vec<u8>,
    pub value: PolicyCheck,
}

/// Picks the window (from the first frame that admits one) and then the
/// lowest frame whose windowed image passes the value policy.
pub fn select_frame(
    pixels: &PixelData,
    slope: f64,
    intercept: f64,
    candidates: impl Fn(&[f64]) -> Vec<(f64, f64)>,
    threshold: f64,
    invert: bool,
) -> Result<FrameSelection, ImageError> {
    let frames: Vec<Vec<f64>> = (0..pixels.n_frames)
        .map(|f| rescale(&pixels.frame_values(f), slope, intercept))
        .collect();
    let Some((center, width)) = frames.iter().find_map(|x| select_window(&candidates(x), x, invert).ok()) else {
        let all_blank = frames.iter().all(|x| x.windows(2).all(|p| p[0] == p[1]));
        return Err(if all_blank { ImageError::NoMeaningfulFrame } else { ImageError::NoValidWindow });
    };
    for (frame, x) in frames.iter().enumerate() {
        let image = window_to_8bit(x, center, width, invert)?;
        let value = value_policy(&image, threshold);
        if value.accepted {
            return Ok(FrameSelection { frame, center, width, image, value });
        }
    }
    Err(ImageError::NoMeaningfulFrame)
}

/// Bilinear resize so the longer side becomes `size`, then centre on a
/// zero-filled `size × size` canvas. The extra padding pixel of an odd
/// split goes to the bottom/right.
pub fn resize_pad(img: &[u8], rows: usize, cols: usize, size: usize) -> Vec<u8> {
    assert_eq!(img.len(), rows * cols, "image buffer does not match {rows}x{cols}");
    assert!(rows >= 1 && cols >= 1 && size >= 1);
    let longest = rows.max(cols) as f64;
    let scaled = |n: usize| (((n as f64) * size as f64 / longest).round() as usize).clamp(1, size);
    let (nh, nw) = (scaled(rows), scaled(cols));
    let (top, left) = ((size - nh) / 2, (size - nw) / 2);

    // pixel-centre alignment: source = (dst + 0.5) * scale - 0.5
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..nw).map(|x| axis(x, cols, nw)).collect();

    let mut out = vec![0u8; size * size];
    for y in 0..nh {
        let (y0, y1, fy) = axis(y, rows, nh);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p = |r: usize, c: usize| f64::from(img[r * cols + c]);
            let top_row = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom_row = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            let v = top_row * (1.0 - fy) + bottom_row * fy;
            out[(top + y) * size + left + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Full export of one instance: shape policy, rescale, window selection,
/// frame selection with the value policy, and resize.
pub fn export_instance(inst: &DicomInstance, opts: &ExportOptions) -> Result<ExportedImage, ImageError> {
    let pixels = inst.pixels.as_ref().ok_or(ImageError::MissingPixelData)?;
    let shape = shape_policy(pixels.rows, pixels.cols, opts.thresholds.shape);
    if !shape.accepted {
        return Err(ImageError::ShapeRejected(shape.ratio));
    }
    let slope = inst.number(tags::RESCALE_SLOPE).unwrap_or(1.0);
    let intercept = inst.number(tags::RESCALE_INTERCEPT).unwrap_or(0.0);
    let invert = opts.invert_monochrome1 && pixels.photometric == Photometric::Monochrome1;
    let sel = select_frame(
        pixels,
        slope,
        intercept,
        |x| tag_window_candidates(inst, x),
        opts.thresholds.value,
        invert,
    )?;
    Ok(ExportedImage {
        instance_id: inst.instance_id.clone(),
        size: opts.size,
        pixels: resize_pad(&sel.image, pixels.rows, pixels.cols, opts.size),
        window: WindowingParams { slope, intercept, center: sel.center, width: sel.width },
        frame: sel.frame,
        value_ratio: sel.value.ratio,
        shape_ratio: shape.ratio,
    })
}

impl ExportedImage {
    /// Row-major flattening used as the image feature vector, scaled to `[0, 1]`.
    pub fn flattened(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<(), ImageError> {
        write_gray_png(w, &self.pixels, self.size, self.size)
    }
}

pub fn write_gray_png<W: Write>(w: W, pixels: &[u8], width: usize, height: usize) -> Result<(), ImageError> {
    let err = |e: png::EncodingError| ImageError::Png(e.to_string());
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(pixels).map_err(err)?;
    writer.finish().map_err(err)
}

pub fn read_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| ImageError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Png("expected 8-bit grayscale".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// One manifest row per attempted export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub instance_id: String,
    pub exam_id: String,
    pub frame: Option<usize>,
    pub window_center: Option<f64>,
    pub window_width: Option<f64>,
    pub value_ratio: Option<f64>,
    pub shape_ratio: Option<f64>,
    pub reject_reason: String,
}

impl ManifestRow {
    pub fn accepted(img: &ExportedImage, exam_id: &str) -> Self {
        Self {
            instance_id: img.instance_id.clone(),
            exam_id: exam_id.to_owned(),
            frame: Some(img.frame),
            window_center: Some(img.window.center),
            window_width: Some(img.window.width),
            value_ratio: Some(img.value_ratio),
            shape_ratio: Some(img.shape_ratio),
            reject_reason: String::new(),
        }
    }

    pub fn rejected(instance_id: &str, exam_id: &str, err: &ImageError) -> Self {
        Self {
            instance_id: instance_id.to_owned(),
            exam_id: exam_id.to_owned(),
            frame: None,
            window_center: None,
            window_width: None,
            value_ratio: None,
            shape_ratio: match err {
                ImageError::ShapeRejected(r) => Some(*r),
                _ => None,
            },
            reject_reason: err.reason().to_owned(),
        }
    }
}
