//! Frames, frame triplets and datasets.
//!
//! Frames are `(1, 3, h, w)` tensors with values in `[0, 1]`. On disk they
//! are binary PPM (`P6`, maxval 255) or 8-bit RGB PNG; bytes map to `p / 255`
//! on read and values are clamped and rounded half-up on write.

use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{read_exact, read_u32, Rng, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Tensor<f32>,
    pub source_index: usize,
}

impl Frame {
    pub fn new(pixels: Tensor<f32>, source_index: usize) -> Result<Self> {
        let s = pixels.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Shape(format!("a frame is (1, 3, h, w), got {s}")));
        }
        if pixels.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("frame values must lie in [0, 1]".into()));
        }
        Ok(Frame { pixels, source_index })
    }

    /// Clamps to `[0, 1]` first; used for network outputs.
    pub fn from_clamped(pixels: &Tensor<f32>, source_index: usize) -> Result<Self> {
        Frame::new(pixels.map(|v| v.clamp(0.0, 1.0)), source_index)
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.shape().h
    }

    pub fn width(&self) -> usize {
        self.pixels.shape().w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

/// Interleaved 8-bit RGB to a `(1, 3, h, w)` tensor.
fn rgb_bytes_to_tensor(bytes: &[u8], h: usize, w: usize) -> Tensor<f32> {
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_raw(Shape::new(1, 3, h, w), data)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

fn tensor_to_rgb_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let s = t.shape();
    let plane = s.plane();
    let data = t.as_slice();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(data[c * plane + i]));
        }
    }
    out
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("not a binary PPM (P6)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse::<usize>().map_err(|_| format!("bad {what}"))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = 3 * w * h;
    let raster = bytes.get(start..start + need).ok_or("truncated pixel data")?;
    Ok(rgb_bytes_to_tensor(raster, h, w))
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported bit depth {:?}", info.bit_depth));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let rows = &buf[..info.line_size * h];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => rows.chunks_exact(info.line_size).flat_map(|r| &r[..3 * w]).copied().collect(),
        png::ColorType::Rgba => rows
            .chunks_exact(info.line_size)
            .flat_map(|r| r[..4 * w].chunks_exact(4).flat_map(|p| &p[..3]))
            .copied()
            .collect(),
        other => return Err(format!("unsupported color type {other:?}")),
    };
    Ok(rgb_bytes_to_tensor(&rgb, h, w))
}

/// Reads a PPM or PNG frame, detected from the file signature.
pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let decoded = if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err("unsupported image format".to_string())
    };
    let pixels = decoded.map_err(|reason| Error::Decode { path: path.to_path_buf(), reason })?;
    Frame::new(pixels, 0)
}

pub fn encode_frame(frame: &Frame, format: ImageFormat) -> Result<Vec<u8>> {
    encode_rgb(frame.pixels(), format)
}

fn encode_rgb(pixels: &Tensor<f32>, format: ImageFormat) -> Result<Vec<u8>> {
    let s = pixels.shape();
    if !pixels.all_finite() {
        return Err(Error::Numeric("cannot encode non-finite pixels".into()));
    }
    let rgb = tensor_to_rgb_bytes(pixels);
    let mut out = Vec::new();
    match format {
        ImageFormat::Ppm => {
            write!(out, "P6\n{} {}\n255\n", s.w, s.h)?;
            out.extend_from_slice(&rgb);
        }
        ImageFormat::Png => {
            let mut enc = png::Encoder::new(&mut out, s.w as u32, s.h as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let png_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
            let mut writer = enc.write_header().map_err(png_err)?;
            writer.write_image_data(&rgb).map_err(png_err)?;
            writer.finish().map_err(png_err)?;
        }
    }
    Ok(out)
}

pub fn write_frame(frame: &Frame, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    fs::write(path, encode_frame(frame, format)?)?;
    Ok(())
}

/// Predicted frame on the left, ground truth on the right, with an optional
/// white separator column of `separator` pixels between them.
pub fn side_by_side(left: &Frame, right: &Frame, separator: usize) -> Result<Frame> {
    if left.dims() != right.dims() {
        return Err(Error::Shape("side-by-side frames must share dimensions".into()));
    }
    let (h, w) = left.dims();
    let out_w = 2 * w + separator;
    let mut data = vec![1.0f32; 3 * h * out_w];
    for c in 0..3 {
        for y in 0..h {
            let row = &mut data[(c * h + y) * out_w..(c * h + y + 1) * out_w];
            row[..w].copy_from_slice(&left.pixels().sample(0)[(c * h + y) * w..(c * h + y + 1) * w]);
            row[w + separator..].copy_from_slice(&right.pixels().sample(0)[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    Frame::new(Tensor::from_raw(Shape::new(1, 3, h, out_w), data), 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameTriplet {
    pub frame_a: Frame,
    pub frame_mid: Frame,
    pub frame_b: Frame,
}

impl FrameTriplet {
    pub fn new(frame_a: Frame, frame_mid: Frame, frame_b: Frame) -> Result<Self> {
        if frame_a.dims() != frame_mid.dims() || frame_a.dims() != frame_b.dims() {
            return Err(Error::Shape("triplet frames must share dimensions".into()));
        }
        if !(frame_a.source_index < frame_mid.source_index && frame_mid.source_index < frame_b.source_index) {
            return Err(Error::Dataset(format!(
                "triplet source indices must increase, got {}, {}, {}",
                frame_a.source_index, frame_mid.source_index, frame_b.source_index
            )));
        }
        Ok(FrameTriplet { frame_a, frame_mid, frame_b })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frame_a.dims()
    }
}

/// Windows `(s, s+1, s+2)` for `s = 0, stride, 2*stride, ...`.
pub fn extract_triplets(frames: &[Frame], stride: usize) -> Result<Vec<FrameTriplet>> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if frames.len() < 3 {
        return Err(Error::Dataset(format!("need at least 3 frames, got {}", frames.len())));
    }
    let dims = frames[0].dims();
    if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
        return Err(Error::Shape(format!("mixed frame sizes: {dims:?} and {:?}", f.dims())));
    }
    (0..frames.len() - 2)
        .step_by(stride)
        .map(|s| FrameTriplet::new(frames[s].clone(), frames[s + 1].clone(), frames[s + 2].clone()))
        .collect()
}

/// Per-pixel mean of the two outer frames.
pub fn average_baseline(triplet: &FrameTriplet) -> Frame {
    let a = triplet.frame_a.pixels();
    let b = triplet.frame_b.pixels();
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect();
    Frame { pixels: Tensor::from_raw(a.shape(), data), source_index: triplet.frame_mid.source_index }
}

/// Which part of a [`Dataset`] a triplet belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    triplets: Vec<FrameTriplet>,
}

const DATASET_MAGIC: &[u8; 4] = b"FWDS";
const DATASET_VERSION: u32 = 1;
pub const PACKED_DATASET_FILE: &str = "dataset.fwds";

impl Dataset {
    pub fn new(triplets: Vec<FrameTriplet>) -> Result<Self> {
        let first = triplets.first().ok_or_else(|| Error::Dataset("dataset is empty".into()))?.dims();
        if triplets.iter().any(|t| t.dims() != first) {
            return Err(Error::Shape("all triplets in a dataset must share dimensions".into()));
        }
        Ok(Dataset { triplets })
    }

    pub fn triplets(&self) -> &[FrameTriplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.triplets[0].dims()
    }

    /// The last `ceil(val_fraction * len)` triplets are validation, capped so
    /// at least one training triplet remains. A single-triplet dataset is
    /// its own validation set.
    pub fn split_tags(&self, val_fraction: f64) -> Vec<Split> {
        let n = self.len();
        let val = if n == 1 { 0 } else { ((val_fraction * n as f64).ceil() as usize).clamp(1, n - 1) };
        (0..n).map(|i| if i >= n - val { Split::Val } else { Split::Train }).collect()
    }

    pub fn split_indices(&self, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let tags = self.split_tags(val_fraction);
        let train: Vec<usize> = (0..tags.len()).filter(|&i| tags[i] == Split::Train).collect();
        let val: Vec<usize> = (0..tags.len()).filter(|&i| tags[i] == Split::Val).collect();
        if val.is_empty() {
            return (train.clone(), train);
        }
        (train, val)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.triplets[i].clone()).collect())
    }

    /// `FWDS` magic, u32 version, u32 triplet count, then three `FWTN`
    /// tensor blocks (a, mid, b) per triplet.
    pub fn write_packed<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.triplets.len() as u32).to_le_bytes())?;
        for t in &self.triplets {
            for f in [&t.frame_a, &t.frame_mid, &t.frame_b] {
                f.pixels().write_dump(w)?;
            }
        }
        Ok(())
    }

    /// Unpacked triplets get source indices 0, 1, 2.
    pub fn read_packed<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a packed dataset (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let count = read_u32(r)?;
        let mut triplets = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut frame = |i| -> Result<Frame> {
                Frame::new(Tensor::read_dump(r)?, i).map_err(|e| Error::Integrity(e.to_string()))
            };
            let (a, m, b) = (frame(0)?, frame(1)?, frame(2)?);
            triplets.push(FrameTriplet::new(a, m, b)?);
        }
        Dataset::new(triplets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_packed(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_packed(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_packed(&mut bytes.as_slice())
    }
}

/// `frame_NNNNNN.ppm|png` files in `dir`, sorted by name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir.as_ref())? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some((stem, ext)) = name.rsplit_once('.') else { continue };
        if !matches!(ext.to_ascii_lowercase().as_str(), "ppm" | "png") {
            continue;
        }
        if let Some(idx) = stem.strip_prefix("frame_").and_then(|d| d.parse::<usize>().ok()) {
            found.push((name.to_string(), idx, path));
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found.into_iter().map(|(_, i, p)| (i, p)).collect())
}

pub fn read_frame_sequence(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    list_frames(dir)?
        .into_iter()
        .map(|(i, p)| {
            let mut f = read_frame(&p)?;
            f.source_index = i;
            Ok(f)
        })
        .collect()
}

/// Loads a packed dataset file, a directory holding `dataset.fwds`, or a
/// directory of numbered frames (consecutive windows, stride 1).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path.is_file() {
        return Dataset::load_packed(path);
    }
    let packed = path.join(PACKED_DATASET_FILE);
    if packed.is_file() {
        return Dataset::load_packed(packed);
    }
    let frames = read_frame_sequence(path)?;
    Dataset::new(extract_triplets(&frames, 1)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Rect { half_w: f64, half_h: f64 },
    Circle { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sprite {
    pub kind: ShapeKind,
    /// Center at the first frame, in pixel coordinates (pixel `x` spans `[x, x+1)`).
    pub center: (f64, f64),
    pub color: [f32; 3],
}

/// A synthetic scene: sprites over a solid background, all translating by
/// `velocity` (x, y) pixels between the first and last frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub background: [f32; 3],
    pub sprites: Vec<Sprite>,
    pub velocity: (f64, f64),
}

pub const MAX_SPEED: f64 = 3.0;

impl Scene {
    pub fn random(rng: &mut Rng, h: usize, w: usize) -> Scene {
        let color = |rng: &mut Rng| [rng.uniform() as f32, rng.uniform() as f32, rng.uniform() as f32];
        let background = color(rng);
        let count = 1 + rng.below(3) as usize;
        let min_side = h.min(w) as f64;
        let sprites = (0..count)
            .map(|_| {
                let kind = if rng.below(2) == 0 {
                    ShapeKind::Rect {
                        half_w: 2.0 + rng.uniform() * (min_side / 6.0),
                        half_h: 2.0 + rng.uniform() * (min_side / 6.0),
                    }
                } else {
                    ShapeKind::Circle { radius: 2.5 + rng.uniform() * (min_side / 7.0) }
                };
                let center = (rng.uniform() * w as f64, rng.uniform() * h as f64);
                Sprite { kind, center, color: color(rng) }
            })
            .collect();
        let speed = rng.uniform() * MAX_SPEED;
        let angle = rng.uniform() * std::f64::consts::TAU;
        Scene { background, sprites, velocity: (speed * angle.cos(), speed * angle.sin()) }
    }

    /// Renders the scene at time `t` (0 = first frame, 1 = last frame) with
    /// coverage-weighted anti-aliasing.
    pub fn render(&self, h: usize, w: usize, t: f64) -> Tensor<f32> {
        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].fill(self.background[c]);
        }
        let (dx, dy) = (t * self.velocity.0, t * self.velocity.1);
        for sprite in &self.sprites {
            let (cx, cy) = (sprite.center.0 + dx, sprite.center.1 + dy);
            for y in 0..h {
                for x in 0..w {
                    let cov = coverage(sprite.kind, cx, cy, x as f64, y as f64) as f32;
                    if cov <= 0.0 {
                        continue;
                    }
                    for c in 0..3 {
                        let p = &mut data[c * plane + y * w + x];
                        *p = sprite.color[c] * cov + *p * (1.0 - cov);
                    }
                }
            }
        }
        Tensor::from_raw(Shape::new(1, 3, h, w), data)
    }

    pub fn triplet(&self, h: usize, w: usize) -> Result<FrameTriplet> {
        FrameTriplet::new(
            Frame::new(self.render(h, w, 0.0), 0)?,
            Frame::new(self.render(h, w, 0.5), 1)?,
            Frame::new(self.render(h, w, 1.0), 2)?,
        )
    }
}

/// Fraction of the pixel square `[x, x+1) x [y, y+1)` covered by the shape.
/// Exact for rectangles; a one-pixel linear ramp across the edge for circles.
fn coverage(kind: ShapeKind, cx: f64, cy: f64, x: f64, y: f64) -> f64 {
    match kind {
        ShapeKind::Rect { half_w, half_h } => {
            let ox = ((x + 1.0).min(cx + half_w) - x.max(cx - half_w)).clamp(0.0, 1.0);
            let oy = ((y + 1.0).min(cy + half_h) - y.max(cy - half_h)).clamp(0.0, 1.0);
            ox * oy
        }
        ShapeKind::Circle { radius } => {
            let d = ((x + 0.5 - cx).powi(2) + (y + 0.5 - cy).powi(2)).sqrt();
            (radius - d + 0.5).clamp(0.0, 1.0)
        }
    }
}

/// `count` random moving-shape triplets of size `h x w`; triplet `i` is
/// drawn from `rng.split(i)`.
pub fn synth_motion_dataset(count: usize, size: (usize, usize), rng: &Rng) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Parameter("count must be >= 1".into()));
    }
    let (h, w) = size;
    if h < 16 || w < 16 {
        return Err(Error::Parameter(format!("synthetic frames must be at least 16x16, got {h}x{w}")));
    }
    let triplets = (0..count)
        .map(|i| Scene::random(&mut rng.split(i as u64), h, w).triplet(h, w))
        .collect::<Result<_>>()?;
    Dataset::new(triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::mse_pixel;

    fn ppm(w: usize, h: usize, fill: u8) -> Vec<u8> {
        let mut v = format!("P6\n{w} {h}\n255\n").into_bytes();
        v.extend(std::iter::repeat_n(fill, 3 * w * h));
        v
    }

    fn frame_from_bytes(bytes: &[u8]) -> Result<Frame> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ppm");
        fs::write(&p, bytes).unwrap();
        read_frame(&p)
    }

    #[test]
    fn white_and_black_ppm() {
        let f = frame_from_bytes(&ppm(2, 2, 255)).unwrap();
        assert!(f.pixels().as_slice().iter().all(|&v| v == 1.0));
        let f = frame_from_bytes(&ppm(2, 2, 0)).unwrap();
        assert!(f.pixels().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ppm_with_comment_and_channel_order() {
        let mut bytes = b"P6 # comment\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let f = frame_from_bytes(&bytes).unwrap();
        assert_eq!(f.pixels().get(0, 0, 0, 0), 1.0);
        assert_eq!(f.pixels().get(0, 2, 0, 0), 0.0);
        assert_eq!(f.pixels().get(0, 2, 0, 1), 1.0);
    }

    #[test]
    fn decode_errors_name_the_path() {
        let mut short = ppm(4, 4, 9);
        short.truncate(short.len() - 5);
        assert!(matches!(frame_from_bytes(&short), Err(Error::Decode { .. })));
        assert!(matches!(frame_from_bytes(b"P3\n1 1\n255\n0 0 0"), Err(Error::Decode { .. })));
        assert!(matches!(frame_from_bytes(b"P6\n1 1\n65535\n"), Err(Error::Decode { .. })));
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
    }

    #[test]
    fn random_frame_round_trip_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Tensor<f32> = Rng::new(3).uniform_tensor((1, 3, 7, 5), 0.0, 1.0).unwrap();
        let f = Frame::new(pixels, 0).unwrap();
        for fmt in [ImageFormat::Ppm, ImageFormat::Png] {
            let p = dir.path().join(format!("x.{}", fmt.extension()));
            write_frame(&f, &p, fmt).unwrap();
            let back = read_frame(&p).unwrap();
            let err = back.pixels().max_abs_diff(f.pixels()).unwrap();
            assert!(err <= 1.0 / 510.0 + 1e-7, "{fmt:?}: {err}");
            // re-encoding a quantized frame is byte-identical
            let first = fs::read(&p).unwrap();
            write_frame(&back, &p, fmt).unwrap();
            assert_eq!(fs::read(&p).unwrap(), first);
        }
    }

    #[test]
    fn triplet_windows() {
        let frames: Vec<Frame> =
            (0..5).map(|i| Frame::new(Tensor::new((1, 3, 2, 2), i as f32 / 10.0).unwrap(), i).unwrap()).collect();
        let t = extract_triplets(&frames, 1).unwrap();
        let idx: Vec<_> = t.iter().map(|t| (t.frame_a.source_index, t.frame_mid.source_index, t.frame_b.source_index)).collect();
        assert_eq!(idx, [(0, 1, 2), (1, 2, 3), (2, 3, 4)]);
        let t = extract_triplets(&frames, 3).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].frame_b.source_index, 2);
        assert!(matches!(extract_triplets(&frames[..2], 1), Err(Error::Dataset(_))));

        let mut mixed = frames.clone();
        mixed[3] = Frame::new(Tensor::new((1, 3, 3, 2), 0.0).unwrap(), 3).unwrap();
        assert!(matches!(extract_triplets(&mixed, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn baseline_mean() {
        let a = Frame::new(Tensor::zeros((1, 3, 4, 4)).unwrap(), 0).unwrap();
        let m = Frame::new(Tensor::zeros((1, 3, 4, 4)).unwrap(), 1).unwrap();
        let b = Frame::new(Tensor::new((1, 3, 4, 4), 1.0).unwrap(), 2).unwrap();
        let t = FrameTriplet::new(a.clone(), m.clone(), b).unwrap();
        assert!(average_baseline(&t).pixels().as_slice().iter().all(|&v| v == 0.5));
        let t = FrameTriplet::new(a.clone(), m, Frame { source_index: 2, ..a.clone() }).unwrap();
        assert_eq!(average_baseline(&t).pixels(), a.pixels());
    }

    #[test]
    fn static_scene_is_constant_in_time() {
        let mut scene = Scene::random(&mut Rng::new(5), 32, 32);
        scene.velocity = (0.0, 0.0);
        let t = scene.triplet(32, 32).unwrap();
        assert_eq!(t.frame_a.pixels(), t.frame_mid.pixels());
        assert_eq!(t.frame_a.pixels(), t.frame_b.pixels());
        assert_eq!(mse_pixel(t.frame_a.pixels(), t.frame_mid.pixels()).unwrap().value, 0.0);
        let base = average_baseline(&t);
        assert_eq!(crate::loss::paper_scale_mse(base.pixels(), t.frame_mid.pixels()).unwrap(), 0.0);
    }

    #[test]
    fn mid_frame_is_half_displacement() {
        let scene = Scene {
            background: [0.1, 0.2, 0.3],
            sprites: vec![Sprite { kind: ShapeKind::Rect { half_w: 3.3, half_h: 2.6 }, center: (10.2, 12.7), color: [0.9, 0.5, 0.1] }],
            velocity: (2.0, 0.0),
        };
        let t = scene.triplet(24, 24).unwrap();
        let (a, m) = (t.frame_a.pixels(), t.frame_mid.pixels());
        for c in 0..3 {
            for y in 0..24 {
                for x in 0..23 {
                    assert_eq!(m.get(0, c, y, x + 1), a.get(0, c, y, x));
                }
            }
        }
        let shifted = Scene { sprites: vec![Sprite { center: (11.2, 12.7), ..scene.sprites[0] }], ..scene.clone() };
        assert_eq!(&shifted.render(24, 24, 0.0), m);
    }

    #[test]
    fn synth_is_seeded_and_valid() {
        let a = synth_motion_dataset(6, (20, 24), &Rng::new(1)).unwrap();
        let b = synth_motion_dataset(6, (20, 24), &Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (20, 24));
        assert!(synth_motion_dataset(0, (20, 24), &Rng::new(1)).is_err());
        assert!(synth_motion_dataset(1, (15, 24), &Rng::new(1)).is_err());
        for s in (0..50).map(|i| Scene::random(&mut Rng::new(i), 32, 32)) {
            let v = (s.velocity.0.powi(2) + s.velocity.1.powi(2)).sqrt();
            assert!(v <= MAX_SPEED);
            assert!((1..=3).contains(&s.sprites.len()));
        }
    }

    #[test]
    fn packed_round_trip_and_corruption() {
        let d = synth_motion_dataset(3, (16, 18), &Rng::new(4)).unwrap();
        let mut buf = Vec::new();
        d.write_packed(&mut buf).unwrap();
        assert_eq!(Dataset::read_packed(&mut buf.as_slice()).unwrap(), d);
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(Dataset::read_packed(&mut bad.as_slice()), Err(Error::Format(_))));
        buf.truncate(buf.len() - 10);
        assert!(matches!(Dataset::read_packed(&mut buf.as_slice()), Err(Error::Integrity(_))));
    }

    #[test]
    fn split_takes_tail_for_validation() {
        let d = synth_motion_dataset(10, (16, 16), &Rng::new(2)).unwrap();
        let (train, val) = d.split_indices(0.1);
        assert_eq!(val, vec![9]);
        assert_eq!(train.len(), 9);
        let (train, val) = d.split_indices(0.25);
        assert_eq!(val, vec![7, 8, 9]);
        assert_eq!(train, (0..7).collect::<Vec<_>>());
        let one = d.subset(&[0]).unwrap();
        assert_eq!(one.split_indices(0.1), (vec![0], vec![0]));
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            let f = Frame::new(Tensor::new((1, 3, 3, 4), i as f32 / 4.0).unwrap(), i).unwrap();
            write_frame(&f, dir.path().join(format!("frame_{i:06}.ppm")), ImageFormat::Ppm).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.triplets()[1].frame_a.source_index, 1);
        assert_eq!(d.triplets()[1].frame_b.pixels().get(0, 0, 0, 0), quantize(0.75) as f32 / 255.0);
    }

    #[test]
    fn side_by_side_layout() {
        let l = Frame::new(Tensor::zeros((1, 3, 4, 5)).unwrap(), 0).unwrap();
        let r = Frame::new(Tensor::new((1, 3, 4, 5), 0.5).unwrap(), 0).unwrap();
        let s = side_by_side(&l, &r, 0).unwrap();
        assert_eq!(s.dims(), (4, 10));
        assert_eq!(s.pixels().get(0, 1, 2, 4), 0.0);
        assert_eq!(s.pixels().get(0, 1, 2, 5), 0.5);
        let s = side_by_side(&l, &r, 2).unwrap();
        assert_eq!(s.dims(), (4, 12));
        assert_eq!(s.pixels().get(0, 0, 0, 5), 1.0);
    }
}
