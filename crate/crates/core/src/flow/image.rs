use std::path::Path;

use super::FlowError;

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, FlowError> {
        if pixels.len() != width as usize * height as usize {
            return Err(FlowError::BufferSize {
                width,
                height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }

    pub(crate) fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32).collect()
    }
}

/// Reads a PGM (P5) or PNG frame. Color inputs are reduced to the mean of
/// their channels.
pub fn load_gray(path: &Path) -> Result<GrayImage, FlowError> {
    let decoded = ::image::open(path).map_err(|source| FlowError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    let gray = match decoded {
        ::image::DynamicImage::ImageLuma8(g) => g,
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb
                .pixels()
                .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16 + 1) / 3) as u8)
                .collect();
            ::image::GrayImage::from_raw(w, h, data).expect("buffer sized from source")
        }
    };
    let (w, h) = gray.dimensions();
    GrayImage::new(w, h, gray.into_raw())
}

/// Writes a grayscale frame; the format follows the extension (`.pgm` or `.png`).
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<(), FlowError> {
    let buf = ::image::GrayImage::from_raw(img.width, img.height, img.pixels.clone())
        .expect("GrayImage keeps width*height pixels");
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let result = if is_pgm {
        let file = std::fs::File::create(path).map_err(|e| FlowError::Encode {
            path: path.display().to_string(),
            source: ::image::ImageError::IoError(e),
        })?;
        let enc = ::image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file)).with_subtype(
            ::image::codecs::pnm::PnmSubtype::Graymap(::image::codecs::pnm::SampleEncoding::Binary),
        );
        buf.write_with_encoder(enc)
    } else {
        buf.save(path)
    };
    result.map_err(|source| FlowError::Encode {
        path: path.display().to_string(),
        source,
    })
}
