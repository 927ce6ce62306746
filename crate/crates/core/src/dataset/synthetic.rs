//! Procedural face videos with spliced forgeries.
//!
//! Real videos are a cartoon face (skin ellipse, two eyes, a mouth arc) over a
//! shaded background, drifting slightly from frame to frame. Fake videos take
//! the same render and paste in a square from a second identity whose skin is
//! a clearly different tone, feathered over two pixels and shifted +8 in
//! green. Sensor noise is drawn once per
//! frame and added to both renders, so a fake differs from its real base only
//! inside the pasted square and its feather.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{
    encode_ppm, frame_file_name, io_err, load_dataset, DatasetError, DatasetManifest, FaceBox, Result, RgbImage,
    FACES_FILE, LABELS_FILE,
};

const NOISE_SIGMA: f64 = 3.0;
const GREEN_SHIFT: f64 = 8.0;
const FEATHER: [f64; 2] = [2.0 / 3.0, 1.0 / 3.0];
const SKIN_CONTRAST: (f64, f64) = (60.0, 90.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    pub blend_rect_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_videos: 20,
            frames_per_video: 8,
            image_size: (32, 32),
            blend_rect_fraction: 0.4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(m));
        if self.n_videos < 2 || !self.n_videos.is_multiple_of(2) {
            return bad(format!(
                "video count must be even and at least 2, got {}",
                self.n_videos
            ));
        }
        if self.frames_per_video == 0 {
            return bad("frames per video must be at least 1".into());
        }
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return bad(format!("image size {h}x{w} is below 16x16"));
        }
        if !(self.blend_rect_fraction > 0.0 && self.blend_rect_fraction < 1.0) {
            return bad(format!("blend fraction {} is outside (0, 1)", self.blend_rect_fraction));
        }
        if self.rect_side() == 0 {
            return bad("blend rectangle rounds to zero pixels".into());
        }
        Ok(())
    }

    pub fn rect_side(&self) -> usize {
        (self.blend_rect_fraction * self.image_size.0.min(self.image_size.1) as f64).round() as usize
    }

    pub fn video_id(index: usize) -> String {
        format!("vid_{index:04}")
    }

    pub fn is_fake(index: usize) -> bool {
        index % 2 == 1
    }
}

/// Pasted square in pixel coordinates, `(x, y)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlendRect {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl BlendRect {
    /// Chebyshev distance from the square; 0 inside.
    pub fn distance(&self, px: usize, py: usize) -> usize {
        let gap = |p: usize, lo: usize| {
            if p < lo {
                lo - p
            } else if p >= lo + self.side {
                p + 1 - (lo + self.side)
            } else {
                0
            }
        };
        gap(px, self.x).max(gap(py, self.y))
    }
}

struct Identity {
    background: [f64; 3],
    gradient: f64,
    skin: [f64; 3],
    center: (f64, f64),
    radii: (f64, f64),
    eye_offset: (f64, f64),
    eye_radius: f64,
    eye_color: [f64; 3],
    mouth_drop: f64,
    mouth_half_width: f64,
    mouth_curve: f64,
    mouth_color: [f64; 3],
}

fn uniform3(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| rng.random_range(lo[c]..hi[c]))
}

impl Identity {
    fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let radii = (wf * rng.random_range(0.24..0.32), hf * rng.random_range(0.30..0.38));
        Self {
            background: uniform3(rng, [90.0; 3], [160.0; 3]),
            gradient: rng.random_range(-40.0..40.0),
            skin: uniform3(rng, [150.0, 100.0, 70.0], [240.0, 190.0, 160.0]),
            center: (wf * rng.random_range(0.42..0.58), hf * rng.random_range(0.42..0.58)),
            radii,
            eye_offset: (
                radii.0 * rng.random_range(0.35..0.5),
                radii.1 * rng.random_range(0.2..0.35),
            ),
            eye_radius: wf.min(hf) * rng.random_range(0.04..0.07),
            eye_color: uniform3(rng, [10.0; 3], [70.0; 3]),
            mouth_drop: radii.1 * rng.random_range(0.35..0.5),
            mouth_half_width: radii.0 * rng.random_range(0.3..0.5),
            mouth_curve: rng.random_range(-0.25..0.35),
            mouth_color: uniform3(rng, [120.0, 20.0, 30.0], [200.0, 70.0, 80.0]),
        }
    }

    /// Float RGB render with the face shifted by `shift` pixels.
    fn render(&self, h: usize, w: usize, shift: (f64, f64)) -> Vec<f64> {
        let (cx, cy) = (self.center.0 + shift.0, self.center.1 + shift.1);
        let (rx, ry) = self.radii;
        let eyes = [
            (cx - self.eye_offset.0, cy - self.eye_offset.1),
            (cx + self.eye_offset.0, cy - self.eye_offset.1),
        ];
        let mouth_y = cy + self.mouth_drop;
        let mouth_thickness = (h.min(w) as f64 * 0.03).max(0.8);
        let mut out = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let shade = self.gradient * (py / h as f64 - 0.5);
                let mut color = self.background.map(|c| c + shade);
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    color = self.skin;
                    let u = (px - cx) / self.mouth_half_width;
                    let arc_y = mouth_y + self.mouth_curve * self.mouth_half_width * (1.0 - u * u);
                    if u.abs() <= 1.0 && (py - arc_y).abs() <= mouth_thickness {
                        color = self.mouth_color;
                    }
                    for &(ex, ey) in &eyes {
                        if (px - ex).powi(2) + (py - ey).powi(2) <= self.eye_radius.powi(2) {
                            color = self.eye_color;
                        }
                    }
                }
                out.extend_from_slice(&color);
            }
        }
        out
    }
}

/// A skin tone offset from `skin` by 60..90 levels in every channel, darker
/// or brighter at random unless only one direction stays in range.
fn contrasting_skin(rng: &mut ChaCha8Rng, skin: [f64; 3]) -> [f64; 3] {
    let tone = rng.random_range(SKIN_CONTRAST.0..SKIN_CONTRAST.1);
    let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let fits = |sign: f64| skin.iter().all(|&c| (0.0..=255.0).contains(&(c + sign * tone)));
    if !fits(sign) && fits(-sign) {
        sign = -sign;
    }
    skin.map(|c| (c + sign * tone).clamp(0.0, 255.0))
}

fn quantize(values: &[f64], w: usize, h: usize) -> RgbImage {
    let data = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::new(w, h, data).expect("render buffer matches image size")
}

/// Frames of one synthetic video. `base` is the untampered render; for real
/// videos `frames == base` and `rect` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedVideo {
    pub base: Vec<RgbImage>,
    pub frames: Vec<RgbImage>,
    pub rect: Option<BlendRect>,
}

/// Renders video `index` of the corpus described by `cfg`; the RNG is seeded
/// with `seed ^ index` so videos are independent of each other.
pub fn render_video(cfg: &SyntheticConfig, index: usize) -> Result<RenderedVideo> {
    cfg.validate()?;
    let (h, w) = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let identity = Identity::sample(&mut rng, h, w);
    let mut donor = Identity::sample(&mut rng, h, w);
    donor.skin = contrasting_skin(&mut rng, identity.skin);
    let side = cfg.rect_side();
    // centered on the face, jittered, kept inside the frame
    let place = |rng: &mut ChaCha8Rng, center: f64, extent: usize| {
        let jitter = rng.random_range(-0.25..0.25) * side as f64;
        (center - side as f64 / 2.0 + jitter)
            .round()
            .clamp(0.0, (extent - side) as f64) as usize
    };
    let rect = BlendRect {
        x: place(&mut rng, identity.center.0, w),
        y: place(&mut rng, identity.center.1, h),
        side,
    };
    let amplitude = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let fake = SyntheticConfig::is_fake(index);

    let mut base_frames = Vec::with_capacity(cfg.frames_per_video);
    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    for f in 0..cfg.frames_per_video {
        let t = phase + std::f64::consts::TAU * f as f64 / cfg.frames_per_video as f64;
        let shift = (amplitude.0 * t.sin(), amplitude.1 * t.cos());
        let frame_noise: Vec<f64> = (0..h * w * 3).map(|_| noise.sample(&mut rng)).collect();
        let base = identity.render(h, w, shift);
        let noisy = |v: &[f64]| v.iter().zip(&frame_noise).map(|(a, n)| a + n).collect::<Vec<_>>();
        base_frames.push(quantize(&noisy(&base), w, h));
        if !fake {
            continue;
        }
        let donor_render = donor.render(h, w, shift);
        let mut composite = base.clone();
        for y in 0..h {
            for x in 0..w {
                let alpha = match rect.distance(x, y) {
                    0 => 1.0,
                    d if d <= FEATHER.len() => FEATHER[d - 1],
                    _ => continue,
                };
                let i = (y * w + x) * 3;
                for c in 0..3 {
                    let shift = if c == 1 && alpha == 1.0 { GREEN_SHIFT } else { 0.0 };
                    composite[i + c] = alpha * (donor_render[i + c] + shift) + (1.0 - alpha) * base[i + c];
                }
            }
        }
        frames.push(quantize(&noisy(&composite), w, h));
    }
    if !fake {
        frames = base_frames.clone();
    }
    Ok(RenderedVideo {
        base: base_frames,
        frames,
        rect: fake.then_some(rect),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub manifest: DatasetManifest,
    pub files_written: usize,
    pub files_unchanged: usize,
}

/// Writes `bytes` unless the file already holds exactly them.
fn write_if_changed(path: &Path, bytes: &[u8], written: &mut usize, unchanged: &mut usize) -> Result<()> {
    if fs::read(path).is_ok_and(|existing| existing == bytes) {
        *unchanged += 1;
        return Ok(());
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    *written += 1;
    Ok(())
}

/// Renders the corpus into `out_root`: even indices real, odd indices fake.
/// Files already holding the right bytes are left alone, and frames beyond
/// `frames_per_video` left over from a previous run are removed.
pub fn generate_synthetic(cfg: &SyntheticConfig, out_root: &Path) -> Result<SyntheticOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_root).map_err(io_err(out_root))?;
    let (mut written, mut unchanged) = (0, 0);
    let mut labels = String::from("video_id,label\n");
    let faces =
        serde_json::to_string(&vec![Some(FaceBox::full_frame()); cfg.frames_per_video]).expect("face boxes serialize");
    for index in 0..cfg.n_videos {
        let id = SyntheticConfig::video_id(index);
        let dir = out_root.join(&id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let video = render_video(cfg, index)?;
        for (f, frame) in video.frames.iter().enumerate() {
            write_if_changed(
                &dir.join(frame_file_name(f)),
                &encode_ppm(frame),
                &mut written,
                &mut unchanged,
            )?;
        }
        for stale in (cfg.frames_per_video..)
            .map(|f| dir.join(frame_file_name(f)))
            .take_while(|p| p.exists())
        {
            fs::remove_file(&stale).map_err(io_err(&stale))?;
            written += 1;
        }
        write_if_changed(&dir.join(FACES_FILE), faces.as_bytes(), &mut written, &mut unchanged)?;
        labels.push_str(&format!("{id},{}\n", u8::from(SyntheticConfig::is_fake(index))));
    }
    write_if_changed(
        &out_root.join(LABELS_FILE),
        labels.as_bytes(),
        &mut written,
        &mut unchanged,
    )?;
    Ok(SyntheticOutput {
        manifest: load_dataset(out_root)?,
        files_written: written,
        files_unchanged: unchanged,
    })
}
