//! RGB images and depth maps, with their on-disk encodings.
//!
//! Images are stored as 8-bit RGB PNG. Depth maps use a small binary format:
//! the magic `HZDM`, then little-endian `u32` height, width and a reserved
//! word, followed by `height × width` little-endian `f32` depths in row-major
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const CHANNELS: usize = 3;
pub const DEPTH_MAGIC: &[u8; 4] = b"HZDM";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: png decode failed: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("{path}: not a depth map (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated depth map, expected {expected} bytes of samples, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image dimensions {width}x{height} do not match {len} samples")]
    Dimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Height × width × 3 image with interleaved channels, values nominally in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height * CHANNELS || width == 0 || height == 0 {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Per-pixel channel mean.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks(CHANNELS)
            .map(|p| p.iter().sum::<f64>() / CHANNELS as f64)
            .collect()
    }

    /// Rounds every sample to the nearest multiple of 1/255 after clamping to [0,1].
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// 8-bit RGB PNG bytes.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            // Writing into a Vec cannot fail for a well-formed header.
            let mut writer = enc.write_header().expect("png header");
            writer.write_image_data(&self.to_u8()).expect("png data");
            writer.finish().expect("png finish");
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
        f.write_all(&self.encode_png()).map_err(io_err(path))?;
        f.flush().map_err(io_err(path))
    }

    /// Loads an 8-bit RGB or RGBA PNG; alpha is dropped.
    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let file = File::open(path).map_err(io_err(path))?;
        let decode_err = |detail: String| ImageError::Decode {
            path: path.to_path_buf(),
            detail,
        };
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| decode_err("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| decode_err(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            other => return Err(decode_err(format!("unsupported color type {other:?}"))),
        };
        Self::from_u8(w, h, &rgb)
    }
}

pub fn quantize(v: f64) -> f64 {
    to_byte(v) as f64 / 255.0
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Height × width scene depths in normalized depth units.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|d| d.is_finite() && *d >= 0.0)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for &d in &self.data {
            out.extend_from_slice(&(d as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, ImageError> {
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(ImageError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (height, width) = (word(4), word(8));
        let expected = height * width * 4;
        let body = &bytes[16..];
        if body.len() != expected {
            return Err(ImageError::Truncated {
                path: path.to_path_buf(),
                expected,
                found: body.len(),
            });
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(width, height, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = File::create(path).map_err(io_err(path))?;
        f.write_all(&self.encode()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::decode(&bytes, path)
    }
}
