//! Grayscale frame sequences on disk: binary PGM frames plus a key/value
//! manifest that records geometry, frame rate and speech intervals.

use std::fs;
use std::path::{Path, PathBuf};

use crate::kv::KvFile;
use crate::{Error, Result};

/// A single intensity image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                op: "grid",
                expected: format!("{} values", width * height),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Intensity at column `x`, row `y`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Ordered grayscale frames sharing one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    fps: f64,
    frames: Vec<Grid>,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, fps: f64, frames: Vec<Grid>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Precondition(format!(
                "frames must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Precondition(format!("fps must be positive, got {fps}")));
        }
        if frames.len() < 2 {
            return Err(Error::Precondition(format!(
                "a frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        for (index, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(Error::DimensionMismatch {
                    index,
                    expected_w: width,
                    expected_h: height,
                    found_w: f.width,
                    found_h: f.height,
                });
            }
            if let Some(v) = f.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Precondition(format!(
                    "frame {index}: intensity {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Grid] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

/// Binds a set of frame files to their geometry, frame rate and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// One or more frame paths or file-name patterns (`*`, `?` wildcards in
    /// the last path component). Relative entries resolve against `base_dir`.
    pub frame_sources: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// `(start_s, end_s)` speech intervals, sorted and non-overlapping.
    pub speech_intervals: Vec<(f64, f64)>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let kv = KvFile::parse(text, "manifest")?;
        let frame_sources: Vec<String> = kv.get_all("frames").map(str::to_string).collect();
        if frame_sources.is_empty() {
            return Err(Error::Manifest("missing `frames` key".into()));
        }
        let req = |key: &str| -> Result<&str> {
            kv.get(key)
                .ok_or_else(|| Error::Manifest(format!("missing `{key}` key")))
        };
        let num = |key: &str| -> Result<f64> {
            req(key)?
                .parse::<f64>()
                .map_err(|e| Error::Manifest(format!("`{key}`: {e}")))
        };
        let width = req("width")?
            .parse::<usize>()
            .map_err(|e| Error::Manifest(format!("`width`: {e}")))?;
        let height = req("height")?
            .parse::<usize>()
            .map_err(|e| Error::Manifest(format!("`height`: {e}")))?;
        let fps = num("fps")?;
        let mut speech_intervals = Vec::new();
        for v in kv.get_all("speech_interval") {
            let (a, b) = v
                .split_once(',')
                .ok_or_else(|| Error::Manifest(format!("speech_interval {v:?}: expected start,end")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Manifest(format!("speech_interval {v:?}: {e}")))
            };
            speech_intervals.push((parse(a)?, parse(b)?));
        }
        let m = Self {
            frame_sources,
            width,
            height,
            fps,
            speech_intervals,
            base_dir: base_dir.into(),
        };
        m.validate(None)?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn render(&self) -> String {
        let mut kv = KvFile::default();
        for s in &self.frame_sources {
            kv.push("frames", s);
        }
        kv.push("width", self.width);
        kv.push("height", self.height);
        kv.push("fps", self.fps);
        for (a, b) in &self.speech_intervals {
            kv.push("speech_interval", format!("{a},{b}"));
        }
        kv.render()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Check geometry and interval invariants; with `n_frames`, also check
    /// that every interval ends within the recording.
    pub fn validate(&self, n_frames: Option<usize>) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Manifest(format!(
                "frames must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Manifest(format!("fps must be positive, got {}", self.fps)));
        }
        validate_intervals(&self.speech_intervals, n_frames.map(|n| n as f64 / self.fps))
            .map_err(Error::Manifest)
    }

    /// Frame paths in load order: sources in manifest order, each pattern
    /// expanded in lexicographic order.
    pub fn frame_paths(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for src in &self.frame_sources {
            let full = self.base_dir.join(src);
            let name = full
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !name.contains(['*', '?']) {
                out.push(full);
                continue;
            }
            let dir = full.parent().map(Path::to_path_buf).unwrap_or_default();
            let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut matched = Vec::new();
            for entry in listing {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let fname = entry.file_name().to_string_lossy().into_owned();
                if wildcard_match(&name, &fname) {
                    matched.push(fname);
                }
            }
            matched.sort();
            if matched.is_empty() {
                return Err(Error::MissingFrame {
                    index: out.len(),
                    path: full,
                });
            }
            out.extend(matched.into_iter().map(|f| dir.join(f)));
        }
        Ok(out)
    }
}

pub(crate) fn validate_intervals(
    intervals: &[(f64, f64)],
    duration_s: Option<f64>,
) -> std::result::Result<(), String> {
    let mut prev_end = f64::NEG_INFINITY;
    for &(a, b) in intervals {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && a < b) {
            return Err(format!("speech interval ({a}, {b}) must satisfy 0 <= start < end"));
        }
        if a < prev_end {
            return Err(format!("speech interval ({a}, {b}) overlaps or is out of order"));
        }
        if let Some(d) = duration_s {
            if b > d + 1e-9 {
                return Err(format!(
                    "speech interval ({a}, {b}) ends after the recording ({d} s)"
                ));
            }
        }
        prev_end = b;
    }
    Ok(())
}

fn wildcard_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let s: Vec<char> = name.chars().collect();
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == s[si]) {
            pi += 1;
            si += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Load every frame named by the manifest, rescaled to `[0, 1]`.
pub fn load_frames(manifest: &Manifest) -> Result<FrameSequence> {
    let paths = manifest.frame_paths()?;
    let mut frames = Vec::with_capacity(paths.len());
    for (index, path) in paths.iter().enumerate() {
        if !path.is_file() {
            return Err(Error::MissingFrame {
                index,
                path: path.clone(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let grid = decode_pgm(&bytes).map_err(|reason| Error::BadPixels { index, reason })?;
        if grid.width != manifest.width || grid.height != manifest.height {
            return Err(Error::DimensionMismatch {
                index,
                expected_w: manifest.width,
                expected_h: manifest.height,
                found_w: grid.width,
                found_h: grid.height,
            });
        }
        frames.push(grid);
    }
    manifest.validate(Some(frames.len()))?;
    FrameSequence::new(manifest.width, manifest.height, manifest.fps, frames)
}

/// Write each frame as `frame_NNNNN.pgm` (8-bit) under `dir` and return a
/// manifest that loads them back. The manifest itself is not written.
pub fn write_frames(seq: &FrameSequence, dir: &Path) -> Result<Manifest> {
    if seq.len() < 2 {
        return Err(Error::Precondition("cannot write fewer than 2 frames".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digits = seq.len().to_string().len().max(5);
    for (i, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{i:0digits$}.pgm"));
        fs::write(&path, encode_pgm(frame)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(Manifest {
        frame_sources: vec!["frame_*.pgm".into()],
        width: seq.width(),
        height: seq.height(),
        fps: seq.fps(),
        speech_intervals: Vec::new(),
        base_dir: dir.to_path_buf(),
    })
}

/// 8-bit binary PGM (`P5`, maxval 255).
pub fn encode_pgm(frame: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(
        frame
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Decode a binary (`P5`) or plain (`P2`) graymap. 16-bit binary samples are
/// big-endian, as the format requires.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Grid, String> {
    let mut pos = 0usize;
    let magic = header_token(bytes, &mut pos).ok_or("empty file")?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(format!("unsupported magic {other:?}")),
    };
    let mut field = |what: &str| -> std::result::Result<usize, String> {
        header_token(bytes, &mut pos)
            .ok_or_else(|| format!("truncated header ({what})"))?
            .parse::<usize>()
            .map_err(|e| format!("{what}: {e}"))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let count = width * height;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        let bpp = if maxval < 256 { 1 } else { 2 };
        if raster.len() < count * bpp {
            return Err(format!(
                "raster has {} bytes, expected {}",
                raster.len(),
                count * bpp
            ));
        }
        for i in 0..count {
            let v = if bpp == 1 {
                raster[i] as usize
            } else {
                ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
            };
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64 / scale);
        }
    } else {
        for i in 0..count {
            let v = field(&format!("sample {i}"))?;
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64 / scale);
        }
    }
    Ok(Grid {
        width,
        height,
        data,
    })
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}
