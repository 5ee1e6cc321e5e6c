use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spins::SpinDataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images, row-major, one byte per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, k: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[k * size..(k + 1) * size]
    }

    /// Pixel intensities scaled to `[0, 1]`.
    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &k in indices {
            pixels.extend_from_slice(self.image(k));
        }
        ImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels,
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_idx_header<R: Read>(r: &mut R, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let found = read_u32(r)?;
    if found != magic {
        return Err(Error::Parse(format!("bad IDX magic {found:#010x}, expected {magic:#010x}")));
    }
    (0..dims).map(|_| Ok(read_u32(r)? as usize)).collect()
}

/// Reads an IDX image file (big-endian magic `0x00000803`).
pub fn read_idx_images(path: &Path) -> Result<ImageSet> {
    let mut r = BufReader::new(File::open(path)?);
    let dims = read_idx_header(&mut r, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::Parse(format!("IDX image file truncated: expected {count} images of {rows}x{cols}")))?;
    Ok(ImageSet { rows, cols, pixels })
}

/// Reads an IDX label file (big-endian magic `0x00000801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    let count = read_idx_header(&mut r, IDX_LABELS_MAGIC, 1)?[0];
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Parse(format!("IDX label file truncated: expected {count} labels")))?;
    Ok(labels)
}

pub fn write_idx_images(path: &Path, images: &ImageSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Box-filter resize: every output pixel averages the input block it covers.
pub fn downsample(images: &ImageSet, out_rows: usize, out_cols: usize) -> Result<ImageSet> {
    if out_rows == 0 || out_cols == 0 || out_rows > images.rows || out_cols > images.cols {
        return Err(Error::InvalidParameter(format!(
            "cannot downsample {}x{} to {out_rows}x{out_cols}",
            images.rows, images.cols
        )));
    }
    let span = |k: usize, out: usize, full: usize| (k * full / out, ((k + 1) * full / out).max(k * full / out + 1));
    let mut pixels = Vec::with_capacity(images.len() * out_rows * out_cols);
    for n in 0..images.len() {
        let img = images.image(n);
        for r in 0..out_rows {
            let (r0, r1) = span(r, out_rows, images.rows);
            for c in 0..out_cols {
                let (c0, c1) = span(c, out_cols, images.cols);
                let mut sum = 0u32;
                for rr in r0..r1 {
                    for cc in c0..c1 {
                        sum += img[rr * images.cols + cc] as u32;
                    }
                }
                let count = ((r1 - r0) * (c1 - c0)) as u32;
                pixels.push(((sum + count / 2) / count) as u8);
            }
        }
    }
    Ok(ImageSet {
        rows: out_rows,
        cols: out_cols,
        pixels,
    })
}

/// Stochastic binarization: each entry becomes `+1` with probability equal to its
/// intensity in `[0, 1]`, else `−1`. `raw` is row-major with `n` columns.
pub fn binarize_images(raw: &[f64], n: usize, seed: u64) -> Result<SpinDataset> {
    if n == 0 || raw.len() % n != 0 {
        return Err(Error::DimensionMismatch {
            what: "image matrix",
            expected: n,
            found: raw.len(),
        });
    }
    if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!("intensity {v} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spins = raw
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1 } else { -1 })
        .collect();
    SpinDataset::new(n, spins, None)
}

/// Which images to keep and how to turn them into labeled spins.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagePipeline {
    /// Digit classes mapped to labels `+1` and `−1`.
    pub classes: (u8, u8),
    /// Images are box-filtered to `side × side`.
    pub side: usize,
    /// Keep at most this many images (in file order) after class filtering.
    pub limit: Option<usize>,
}

impl Default for ImagePipeline {
    fn default() -> Self {
        Self {
            classes: (0, 1),
            side: 8,
            limit: None,
        }
    }
}

/// Filters two classes, downsamples and binarizes stochastically with `seed`.
pub fn image_dataset(images: &ImageSet, labels: &[u8], pipeline: &ImagePipeline, seed: u64) -> Result<SpinDataset> {
    if labels.len() != images.len() {
        return Err(Error::DimensionMismatch {
            what: "image labels",
            expected: images.len(),
            found: labels.len(),
        });
    }
    let (pos, neg) = pipeline.classes;
    if pos == neg {
        return Err(Error::InvalidParameter("the two classes must differ".into()));
    }
    let mut keep: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == pos || labels[k] == neg).collect();
    if let Some(limit) = pipeline.limit {
        keep.truncate(limit);
    }
    if keep.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let small = downsample(&images.select(&keep), pipeline.side, pipeline.side)?;
    let spins = binarize_images(&small.intensities(), pipeline.side * pipeline.side, seed)?;
    let y = keep.iter().map(|&k| if labels[k] == pos { 1 } else { -1 }).collect();
    spins.with_labels(y)
}

/// Writes a dataset as CSV: header `x0,…,x{n−1}` plus a trailing `y` column when labeled.
pub fn write_dataset<W: Write>(data: &SpinDataset, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let mut header: Vec<String> = (0..data.n()).map(|i| format!("x{i}")).collect();
    if data.labels().is_some() {
        header.push("y".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (k, row) in data.rows().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = data.labels() {
            fields.push(l[k].to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<SpinDataset> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or(Error::EmptyDataset)??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let labeled = cols.last() == Some(&"y");
    let n = cols.len() - usize::from(labeled);
    for (i, c) in cols[..n].iter().enumerate() {
        if *c != format!("x{i}") {
            return Err(Error::Parse(format!("unexpected column `{c}` at position {i}")));
        }
    }
    let mut spins = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.trim().split(',').collect();
        if vals.len() != cols.len() {
            return Err(Error::Parse(format!(
                "row {}: expected {} fields, found {}",
                line_no + 1,
                cols.len(),
                vals.len()
            )));
        }
        for (c, v) in vals.iter().enumerate() {
            let s: i8 = v
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: `{v}` is not a spin", line_no + 1)))?;
            if s != 1 && s != -1 {
                return Err(Error::NotASpin {
                    row: line_no,
                    col: c,
                    value: s as f64,
                });
            }
            if c < n {
                spins.push(s);
            } else {
                labels.push(s);
            }
        }
    }
    SpinDataset::new(n, spins, labeled.then_some(labels))
}

/// Binary PGM (P5) with 8-bit gray levels.
pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch {
            what: "PGM pixels",
            expected: width * height,
            found: pixels.len(),
        });
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

/// Tiles equally sized `rows × cols` images left to right with a one-pixel gap.
/// Values are probabilities in `[0, 1]`; returns `(width, height, pixels)`.
pub fn tile_images(images: &[Vec<f64>], rows: usize, cols: usize) -> (usize, usize, Vec<u8>) {
    let count = images.len();
    let width = if count == 0 { 0 } else { count * (cols + 1) - 1 };
    let mut pixels = vec![0u8; width * rows];
    for (k, img) in images.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let v = img[r * cols + c].clamp(0.0, 1.0);
                pixels[r * width + k * (cols + 1) + c] = (v * 255.0).round() as u8;
            }
        }
    }
    (width, rows, pixels)
}

/// Two-class synthetic handwriting: class 0 draws a ring, class 1 a slanted bar.
/// Position, size, slant and stroke width vary per image; edges are antialiased and
/// a little background noise is added.
pub fn synthetic_digits(count: usize, side: usize, seed: u64) -> (ImageSet, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    let s = side as f64;
    for _ in 0..count {
        let class: u8 = rng.random_range(0..2);
        let cx = s * (0.5 + rng.random_range(-0.08..0.08));
        let cy = s * (0.5 + rng.random_range(-0.08..0.08));
        let stroke = s * rng.random_range(0.07..0.12);
        let slant = rng.random_range(-0.35..0.35);
        let (ry, rx) = (s * rng.random_range(0.26..0.36), s * rng.random_range(0.16..0.26));
        for r in 0..side {
            for c in 0..side {
                let y = r as f64 + 0.5 - cy;
                let x = c as f64 + 0.5 - cx - slant * y;
                let dist = if class == 0 {
                    let rho = ((x / rx).powi(2) + (y / ry).powi(2)).sqrt();
                    (rho - 1.0).abs() * rx.min(ry)
                } else if y.abs() <= ry {
                    x.abs()
                } else {
                    x.hypot(y.abs() - ry)
                };
                let ink = (1.0 - (dist - stroke) / (0.6 * stroke)).clamp(0.0, 1.0);
                let noise: f64 = rng.random_range(0.0..0.08);
                pixels.push(((ink + noise).min(1.0) * 255.0).round() as u8);
            }
        }
        labels.push(class);
    }
    (
        ImageSet {
            rows: side,
            cols: side,
            pixels,
        },
        labels,
    )
}
