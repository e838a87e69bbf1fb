//! PNG persistence: RGB8 rasters and palette-indexed class maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::legend::Legend;
use crate::raster::{ClassMap, RasterImage};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn write_rgb(path: &Path, img: &RasterImage) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
    w.write_image_data(&img.to_rgb8())
        .map_err(|e| png_err(path, e))
}

/// Reads any 8-bit PNG (gray, RGB, RGBA, indexed) as an RGB raster.
pub fn read_rgb(path: &Path) -> Result<RasterImage> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut dec = png::Decoder::new(file);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => bytes.to_vec(),
        png::ColorType::Rgba => bytes
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => bytes
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => return Err(png_err(path, "palette was not expanded")),
    };
    RasterImage::from_rgb8(w, h, &rgb)
}

/// Writes a class map as an indexed PNG whose palette is the legend.
pub fn write_classmap(path: &Path, map: &ClassMap) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, map.width() as u32, map.height() as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let palette: Vec<u8> = map.legend().entries.iter().flat_map(|e| e.rgb()).collect();
    enc.set_palette(palette);
    let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
    w.write_image_data(map.data()).map_err(|e| png_err(path, e))
}

/// Reads an indexed PNG, checking that its palette equals `legend`.
pub fn read_classmap(path: &Path, legend: &Arc<Legend>) -> Result<ClassMap> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let dec = png::Decoder::new(file);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let palette = reader
        .info()
        .palette
        .as_ref()
        .map(|p| p.to_vec())
        .ok_or_else(|| Error::data(format!("{} is not an indexed PNG", path.display())))?;
    let expected: Vec<u8> = legend.entries.iter().flat_map(|e| e.rgb()).collect();
    if palette != expected {
        return Err(Error::data(format!(
            "{}: palette does not match legend `{}`",
            path.display(),
            legend.name
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::data(format!(
            "{}: expected 8-bit indices",
            path.display()
        )));
    }
    ClassMap::new(
        info.width as usize,
        info.height as usize,
        buf[..info.buffer_size()].to_vec(),
        legend.clone(),
    )
}
