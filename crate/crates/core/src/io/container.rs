//! Binary container: one line of JSON header, a newline, then the payload as
//! little-endian `f64`s. The header carries a SHA-256 of the payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cube::SpectralCube;
use crate::endmembers::PixelEndmemberTensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "GMMU1";
pub const DTYPE: &str = "f64le";
pub const LAYOUT_PIXELS: &str = "band-interleaved-by-pixel";
pub const LAYOUT_PLANES: &str = "endmember-planes";

const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub magic: String,
    /// What the payload holds: `cube`, `abundances` or `endmembers`.
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    /// Number of planes for the `endmember-planes` layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    pub checksum: String,
}

impl Header {
    fn expected_len(&self) -> Result<usize> {
        let planes = match self.layout.as_str() {
            LAYOUT_PIXELS => 1,
            LAYOUT_PLANES => self
                .planes
                .ok_or_else(|| Error::Format("endmember-planes layout needs `planes`".into()))?,
            other => return Err(Error::Format(format!("unknown layout {other:?}"))),
        };
        self.rows
            .checked_mul(self.cols)
            .and_then(|v| v.checked_mul(self.bands))
            .and_then(|v| v.checked_mul(planes))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))
    }
}

/// A header plus its decoded payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub payload: Vec<f64>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

impl Container {
    fn new(kind: &str, rows: usize, cols: usize, bands: usize, layout: &str, planes: Option<usize>, payload: Vec<f64>) -> Self {
        Container {
            header: Header {
                magic: MAGIC.into(),
                kind: kind.into(),
                rows,
                cols,
                bands,
                dtype: DTYPE.into(),
                layout: layout.into(),
                planes,
                wavelengths: None,
                checksum: digest(&encode(&payload)),
            },
            payload,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let bytes = encode(&self.payload);
        let mut header = self.header.clone();
        header.checksum = digest(&bytes);
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Parses and validates a container: magic, dtype, layout, payload
    /// length and checksum.
    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = Vec::new();
        reader.by_ref().take(MAX_HEADER).read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("missing header line".into()));
        }
        line.pop();
        let header: Header = serde_json::from_slice(&line).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected {MAGIC:?}", header.magic)));
        }
        if header.dtype != DTYPE {
            return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
        }
        let expected = header.expected_len()?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                expected * 8
            )));
        }
        let actual = digest(&bytes);
        if actual != header.checksum {
            return Err(Error::Checksum {
                expected: header.checksum.clone(),
                actual,
            });
        }
        let payload = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
            .collect();
        Ok(Container { header, payload })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }

    fn expect_kind(&self, kind: &str, layout: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Format(format!("expected a {kind} container, found {:?}", self.header.kind)));
        }
        if self.header.layout != layout {
            return Err(Error::Format(format!("{kind} containers use layout {layout:?}, found {:?}", self.header.layout)));
        }
        Ok(())
    }

    pub fn from_cube(cube: &SpectralCube) -> Self {
        let mut c = Container::new("cube", cube.rows(), cube.cols(), cube.n_bands(), LAYOUT_PIXELS, None, cube.to_pixel_major());
        c.header.wavelengths = cube.wavelengths().map(|w| w.to_vec());
        c
    }

    pub fn to_cube(&self) -> Result<SpectralCube> {
        self.expect_kind("cube", LAYOUT_PIXELS)?;
        let h = &self.header;
        let cube = SpectralCube::from_pixel_major(&self.payload, h.rows, h.cols, h.bands).map_err(|e| Error::Format(e.to_string()))?;
        match &h.wavelengths {
            Some(w) => cube.with_wavelengths(w.clone()).map_err(|e| Error::Format(e.to_string())),
            None => Ok(cube),
        }
    }

    /// Abundances as an `(rows * cols) x M` map; `bands` holds `M`.
    pub fn from_abundances(a: &DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != a.nrows() {
            return Err(Error::dim("abundance rows", rows * cols, a.nrows()));
        }
        let payload = (0..a.nrows()).flat_map(|n| a.row(n).iter().copied().collect::<Vec<_>>()).collect();
        Ok(Container::new("abundances", rows, cols, a.ncols(), LAYOUT_PIXELS, None, payload))
    }

    pub fn to_abundances(&self) -> Result<DMatrix<f64>> {
        self.expect_kind("abundances", LAYOUT_PIXELS)?;
        let h = &self.header;
        Ok(DMatrix::from_row_slice(h.rows * h.cols, h.bands, &self.payload))
    }

    /// Per-pixel endmember spectra, one plane per endmember, each plane in
    /// pixel-major order.
    pub fn from_endmembers(spectra: &[DMatrix<f64>], rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != spectra.len() {
            return Err(Error::dim("endmember pixels", rows * cols, spectra.len()));
        }
        let (m, b) = spectra.first().map_or((0, 0), |s| s.shape());
        if spectra.iter().any(|s| s.shape() != (m, b)) {
            return Err(Error::InvalidArgument("per-pixel spectra must all be M x B".into()));
        }
        let mut payload = Vec::with_capacity(m * spectra.len() * b);
        for j in 0..m {
            for s in spectra {
                payload.extend(s.row(j).iter());
            }
        }
        Ok(Container::new("endmembers", rows, cols, b, LAYOUT_PLANES, Some(m), payload))
    }

    pub fn from_tensor(t: &PixelEndmemberTensor, rows: usize, cols: usize) -> Result<Self> {
        Self::from_endmembers(&t.spectra, rows, cols)
    }

    pub fn to_endmembers(&self) -> Result<Vec<DMatrix<f64>>> {
        self.expect_kind("endmembers", LAYOUT_PLANES)?;
        let h = &self.header;
        let (n, b, m) = (h.rows * h.cols, h.bands, h.planes.unwrap_or(0));
        Ok((0..n)
            .map(|p| DMatrix::from_fn(m, b, |j, l| self.payload[(j * n + p) * b + l]))
            .collect())
    }
}
