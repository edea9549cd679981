use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Produces a fixed-length embedding per image. Implementations need not
/// normalize; [`Descriptor::new`] does.
pub trait DescriptorBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn describe(&self, image: &DynamicImage) -> Result<Vec<f32>>;
}

/// Downscaled grayscale intensities, mean-centered. Deterministic and
/// robust to re-encoding and mild rescaling; a stand-in for a learned
/// copy-detection model.
#[derive(Debug, Clone)]
pub struct GrayscaleBackend {
    pub side: u32,
}

impl Default for GrayscaleBackend {
    fn default() -> Self {
        Self { side: 16 }
    }
}

impl DescriptorBackend for GrayscaleBackend {
    fn id(&self) -> &str {
        "grayscale16"
    }

    fn dim(&self) -> usize {
        (self.side * self.side) as usize
    }

    fn describe(&self, image: &DynamicImage) -> Result<Vec<f32>> {
        let small = image.resize_exact(self.side, self.side, image::imageops::FilterType::Triangle).to_luma8();
        let v: Vec<f32> = small.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        let centered: Vec<f32> = v.iter().map(|x| x - mean).collect();
        if centered.iter().any(|x| x.abs() > 1e-6) {
            Ok(centered)
        } else {
            Ok(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub vector: Vec<f32>,
    pub backend_id: String,
}

impl Descriptor {
    /// Unit-normalize `raw`; the zero vector has no direction and is rejected.
    pub fn new(raw: Vec<f32>, backend_id: &str) -> Result<Self> {
        let norm = raw.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 1e-12) {
            return Err(Error::Image("descriptor has zero norm".into()));
        }
        Ok(Self {
            vector: raw.iter().map(|x| (f64::from(*x) / norm) as f32).collect(),
            backend_id: backend_id.to_string(),
        })
    }

    pub fn cosine(&self, other: &Descriptor) -> f32 {
        dot(&self.vector, &other.vector)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn describe_bytes(backend: &dyn DescriptorBackend, bytes: &[u8]) -> Result<Descriptor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    let raw = backend.describe(&img)?;
    if raw.len() != backend.dim() {
        return Err(Error::Contract(format!(
            "backend {} returned {} values, expected {}",
            backend.id(),
            raw.len(),
            backend.dim()
        )));
    }
    Descriptor::new(raw, backend.id())
}

/// Descriptors keyed by id, all from one backend.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub backend_id: String,
    pub dim: usize,
    pub items: BTreeMap<String, Descriptor>,
}

impl DescriptorSet {
    pub fn new(backend_id: &str, dim: usize) -> Self {
        Self { backend_id: backend_id.to_string(), dim, items: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: String, d: Descriptor) -> Result<()> {
        if d.backend_id != self.backend_id || d.vector.len() != self.dim {
            return Err(Error::Config(format!(
                "descriptor from {} (dim {}) does not fit a {} (dim {}) set",
                d.backend_id,
                d.vector.len(),
                self.backend_id,
                self.dim
            )));
        }
        self.items.insert(id, d);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

const MAGIC: &[u8; 8] = b"KGDESC01";

/// Binary cache: magic, backend id, dimension, count, then (id, f32 x dim)
/// records, all little-endian.
pub fn write_descriptor_cache(path: &Path, set: &DescriptorSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::file(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(set.backend_id.len() as u32).map_err(io)?;
    w.write_all(set.backend_id.as_bytes()).map_err(io)?;
    w.write_u32::<LittleEndian>(set.dim as u32).map_err(io)?;
    w.write_u64::<LittleEndian>(set.items.len() as u64).map_err(io)?;
    for (id, d) in &set.items {
        w.write_u32::<LittleEndian>(id.len() as u32).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
        for x in &d.vector {
            w.write_f32::<LittleEndian>(*x).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_descriptor_cache(path: &Path) -> Result<DescriptorSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::file(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Schema(format!("{}: not a descriptor cache", path.display())));
    }
    let read_str = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(io)?;
        String::from_utf8(buf).map_err(|e| Error::Schema(e.to_string()))
    };
    let backend_id = read_str(&mut r)?;
    let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(io)?;
    let mut set = DescriptorSet::new(&backend_id, dim);
    for _ in 0..count {
        let id = read_str(&mut r)?;
        let mut vector = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut vector).map_err(io)?;
        set.items.insert(id, Descriptor { vector, backend_id: backend_id.clone() });
    }
    Ok(set)
}

/// Describe every `(id, path)` in parallel. Failures are returned
/// separately; those images stay out of dedup.
pub fn compute_descriptors(
    images: &[(String, std::path::PathBuf)],
    backend: &dyn DescriptorBackend,
) -> (DescriptorSet, Vec<(String, String)>) {
    let described: Vec<(String, Result<Descriptor>)> = images
        .par_iter()
        .map(|(id, path)| {
            let d =
                std::fs::read(path).map_err(|e| Error::file(path, e)).and_then(|bytes| describe_bytes(backend, &bytes));
            (id.clone(), d)
        })
        .collect();
    let mut set = DescriptorSet::new(backend.id(), backend.dim());
    let mut failed = Vec::new();
    for (id, d) in described {
        match d.and_then(|d| set.insert(id.clone(), d)) {
            Ok(()) => {}
            Err(e) => failed.push((id, e.to_string())),
        }
    }
    (set, failed)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Cursor;

    pub(crate) fn encode(img: &DynamicImage, format: image::ImageFormat) -> Vec<u8> {
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), format).unwrap();
        out
    }

    pub(crate) fn gradient(w: u32, h: u32) -> DynamicImage {
        DynamicImage::ImageRgb8(image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 255 / w) as u8, (y * 255 / h) as u8, 128])
        }))
    }

    pub(crate) fn checker(w: u32, h: u32, cell: u32) -> DynamicImage {
        DynamicImage::ImageRgb8(image::RgbImage::from_fn(w, h, |x, y| {
            let on = ((x / cell) + (y / cell)).is_multiple_of(2);
            if on {
                image::Rgb([240, 240, 240])
            } else {
                image::Rgb([20, 30, 40])
            }
        }))
    }

    #[test]
    fn reencoded_copy_is_close_and_unrelated_is_far() {
        let b = GrayscaleBackend::default();
        let g = gradient(200, 150);
        let png = describe_bytes(&b, &encode(&g, image::ImageFormat::Png)).unwrap();
        let rgb = DynamicImage::ImageRgb8(g.to_rgb8());
        let jpg = describe_bytes(&b, &encode(&rgb, image::ImageFormat::Jpeg)).unwrap();
        assert!(png.cosine(&jpg) >= 0.99, "{}", png.cosine(&jpg));
        let again = describe_bytes(&b, &encode(&g, image::ImageFormat::Png)).unwrap();
        assert_eq!(png, again);
        let other = describe_bytes(&b, &encode(&checker(200, 150, 10), image::ImageFormat::Png)).unwrap();
        assert!(png.cosine(&other) < 0.8, "{}", png.cosine(&other));
        let norm: f32 = png.vector.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_and_black_images() {
        let b = GrayscaleBackend::default();
        let gray = DynamicImage::ImageLuma8(image::GrayImage::from_pixel(20, 20, image::Luma([90])));
        assert!(describe_bytes(&b, &encode(&gray, image::ImageFormat::Png)).is_ok());
        let black = DynamicImage::ImageLuma8(image::GrayImage::new(20, 20));
        assert!(describe_bytes(&b, &encode(&black, image::ImageFormat::Png)).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = DescriptorSet::new("b", 3);
        set.insert("x".into(), Descriptor::new(vec![1.0, 2.0, 2.0], "b").unwrap()).unwrap();
        set.insert("y".into(), Descriptor::new(vec![0.0, 0.0, 5.0], "b").unwrap()).unwrap();
        assert!(set.insert("z".into(), Descriptor::new(vec![1.0], "other").unwrap()).is_err());
        let p = dir.path().join("d.bin");
        write_descriptor_cache(&p, &set).unwrap();
        assert_eq!(read_descriptor_cache(&p).unwrap(), set);
    }
}
