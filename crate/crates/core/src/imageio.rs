//! Image decoding/encoding and atomic file writes.

use std::fs;
use std::io::{self, Cursor, Write};
use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::seed::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: String, message: String },
    #[error("cannot encode png: {0}")]
    Encode(String),
}

/// Decode any supported image file to 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage, ImageIoError> {
    let reader = ImageReader::open(path)
        .map_err(|source| ImageIoError::Io {
            path: path.display().to_string(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let img = reader.decode().map_err(|e| ImageIoError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, ImageIoError> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImageIoError::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| ImageIoError::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, ImageIoError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// SHA-256 hex digest of PNG-encoded pixels.
pub fn png_checksum(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

pub fn file_checksum(path: &Path) -> Result<String, ImageIoError> {
    let bytes = fs::read(path).map_err(|source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Write bytes to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
