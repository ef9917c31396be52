//! Model container: magic `SCNM`, a u32 format version, then tagged
//! little-endian sections (4-byte tag, u64 length, payload).

use std::path::Path;

use crate::classifier::{ClassifierModel, HiddenLayer};
use crate::dataset::ZcaTransform;
use crate::error::{ensure, Error, Result};
use crate::features::FeatureExtractorConfig;
use crate::filterbank::{decode_filters_with, encode_filters_with, FilterBank, FilterSource, FloatWidth};
use crate::linalg::Matrix;

use super::preprocess::Preprocessing;

pub const MODEL_FILE_MAGIC: [u8; 4] = *b"SCNM";
pub const MODEL_FILE_VERSION: u32 = 1;

const SECTIONS: [&[u8; 4]; 8] = [b"DIMS", b"STG1", b"FILT", b"PROV", b"PREP", b"WIN ", b"WOUT", b"RIDG"];

/// Everything needed to classify raw images of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub dataset: String,
    /// Raw `(channels, side)` of the images the model expects.
    pub input_channels: usize,
    pub input_side: usize,
    pub preprocessing: Preprocessing,
    pub stage1: FeatureExtractorConfig,
    pub bank: FilterBank,
    pub classifier: ClassifierModel,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.0.reserve(v.len() * 8);
        for &x in v {
            self.f64(x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len());
        self.0.extend_from_slice(v);
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows());
        self.u64(m.cols());
        self.f64s(m.as_slice());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.buf.len() >= n,
            Format,
            "section {} truncated: needs {n} more bytes, has {}",
            self.what,
            self.buf.len()
        );
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("section {}: size {v} too large", self.what)))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("section {}: length overflow", self.what)))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        self.take(n)
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()?;
        let cols = self.u64()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("section {}: matrix size overflow", self.what)))?;
        let data = self.f64s(n)?;
        Matrix::from_col_major(rows, cols, data)
    }
    fn done(&self) -> Result<()> {
        ensure!(self.buf.is_empty(), Format, "section {} has {} trailing bytes", self.what, self.buf.len());
        Ok(())
    }
}

fn flag(r: &mut Reader) -> Result<bool> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::Format(format!("section {}: flag byte {b}", r.what))),
    }
}

pub fn encode_model(m: &SavedModel) -> Result<Vec<u8>> {
    let layer = m.classifier.layer();
    let mut sections: Vec<Vec<u8>> = Vec::with_capacity(SECTIONS.len());

    let mut w = Writer::default();
    w.bytes(m.dataset.as_bytes());
    for v in [
        m.input_channels,
        m.input_side,
        m.bank.channels(),
        m.bank.len(),
        layer.feature_len(),
        layer.hidden(),
        m.classifier.num_classes(),
    ] {
        w.u64(v);
    }
    w.u8(layer.intercept() as u8);
    sections.push(w.0);

    let mut w = Writer::default();
    let s = &m.stage1;
    w.u64(s.w);
    w.u64(s.q);
    w.u64(s.d);
    w.f64(s.p1);
    w.f64(s.p2);
    w.f64(s.epsilon_norm);
    sections.push(w.0);

    sections.push(encode_filters_with(&m.bank, FloatWidth::F64)?);

    let prov: Vec<String> = m.bank.provenance().iter().map(|p| p.to_string()).collect();
    sections.push(prov.join("\n").into_bytes());

    let mut w = Writer::default();
    let p = &m.preprocessing;
    w.u8(p.scale as u8);
    w.u8(p.greyscale as u8);
    w.u64(p.downsample.unwrap_or(0));
    match &p.zca {
        None => w.u8(0),
        Some(t) => {
            w.u8(1);
            w.f64(t.epsilon);
            w.u64(t.side);
            w.u64(t.channels());
            for (mean, mat) in t.means.iter().zip(&t.matrices) {
                w.f64s(mean);
                w.matrix(mat);
            }
        }
    }
    sections.push(w.0);

    let mut w = Writer::default();
    w.matrix(layer.w_in());
    sections.push(w.0);
    let mut w = Writer::default();
    w.matrix(m.classifier.w_out());
    sections.push(w.0);
    let mut w = Writer::default();
    w.f64(m.classifier.c());
    sections.push(w.0);

    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_FILE_MAGIC);
    out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    for (tag, payload) in SECTIONS.iter().zip(sections) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel> {
    ensure!(bytes.len() >= 8, Format, "model file is {} bytes, too short for a header", bytes.len());
    ensure!(
        bytes[..4] == MODEL_FILE_MAGIC,
        Format,
        "model file magic {:?}, expected {:?}",
        String::from_utf8_lossy(&bytes[..4]),
        std::str::from_utf8(&MODEL_FILE_MAGIC).expect("ascii")
    );
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    ensure!(
        version == MODEL_FILE_VERSION,
        Format,
        "model file version {version}, this build reads version {MODEL_FILE_VERSION}"
    );
    let mut rest = &bytes[8..];
    let mut payloads = Vec::with_capacity(SECTIONS.len());
    for tag in SECTIONS {
        let name = std::str::from_utf8(tag).expect("ascii").trim_end();
        ensure!(rest.len() >= 12, Format, "model file truncated before section {name}");
        ensure!(
            &rest[..4] == tag,
            Format,
            "expected section {name}, found {:?}",
            String::from_utf8_lossy(&rest[..4])
        );
        let len = u64::from_le_bytes(rest[4..12].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| Error::Format(format!("section {name} too large")))?;
        rest = &rest[12..];
        ensure!(rest.len() >= len, Format, "model file truncated inside section {name}");
        payloads.push(&rest[..len]);
        rest = &rest[len..];
    }
    ensure!(rest.is_empty(), Format, "model file has {} trailing bytes", rest.len());

    let mut r = Reader { buf: payloads[0], what: "DIMS" };
    let dataset = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Format("dataset name is not UTF-8".into()))?;
    let input_channels = r.u64()?;
    let input_side = r.u64()?;
    let bank_channels = r.u64()?;
    let filters = r.u64()?;
    let feature_len = r.u64()?;
    let hidden = r.u64()?;
    let num_classes = r.u64()?;
    let intercept = flag(&mut r)?;
    r.done()?;

    let mut r = Reader { buf: payloads[1], what: "STG1" };
    let stage1 = FeatureExtractorConfig {
        w: r.u64()?,
        q: r.u64()?,
        d: r.u64()?,
        p1: r.f64()?,
        p2: r.f64()?,
        epsilon_norm: r.f64()?,
    };
    r.done()?;
    stage1.validate().map_err(|e| Error::Format(format!("stored stage-1 settings invalid: {e}")))?;

    let bank = decode_filters_with(payloads[2], FloatWidth::F64)?;
    let prov_text = std::str::from_utf8(payloads[3]).map_err(|_| Error::Format("provenance is not UTF-8".into()))?;
    let provenance = if prov_text.is_empty() {
        Vec::new()
    } else {
        prov_text.split('\n').map(str::parse).collect::<Result<Vec<FilterSource>>>()?
    };
    let bank = bank.with_provenance(provenance).map_err(|e| Error::Format(e.to_string()))?;

    let mut r = Reader { buf: payloads[4], what: "PREP" };
    let scale = flag(&mut r)?;
    let greyscale = flag(&mut r)?;
    let downsample = match r.u64()? {
        0 => None,
        s => Some(s),
    };
    let zca = if flag(&mut r)? {
        let epsilon = r.f64()?;
        let side = r.u64()?;
        let channels = r.u64()?;
        let d = side
            .checked_mul(side)
            .ok_or_else(|| Error::Format("ZCA side overflow".into()))?;
        let mut means = Vec::with_capacity(channels.min(64));
        let mut matrices = Vec::with_capacity(channels.min(64));
        for _ in 0..channels {
            means.push(r.f64s(d)?);
            let m = r.matrix()?;
            ensure!(m.rows() == d && m.cols() == d, Format, "ZCA matrix is {}x{}, expected {d}x{d}", m.rows(), m.cols());
            matrices.push(m);
        }
        Some(ZcaTransform {
            side,
            epsilon,
            means,
            matrices,
        })
    } else {
        None
    };
    r.done()?;
    let preprocessing = Preprocessing {
        scale,
        greyscale,
        downsample,
        zca,
    };

    let mut r = Reader { buf: payloads[5], what: "WIN" };
    let w_in = r.matrix()?;
    r.done()?;
    let mut r = Reader { buf: payloads[6], what: "WOUT" };
    let w_out = r.matrix()?;
    r.done()?;
    let mut r = Reader { buf: payloads[7], what: "RIDG" };
    let c = r.f64()?;
    r.done()?;

    let layer = HiddenLayer::new(w_in, intercept);
    ensure!(
        bank.channels() == bank_channels && bank.len() == filters && bank.side() == stage1.w,
        Format,
        "filter bank shape disagrees with the dimension table"
    );
    ensure!(
        layer.hidden() == hidden && layer.feature_len() == feature_len,
        Format,
        "W_in is {}x{}, dimension table says {hidden}x{feature_len}",
        layer.hidden(),
        layer.feature_len()
    );
    ensure!(w_out.rows() == num_classes, Format, "W_out has {} rows, expected {num_classes}", w_out.rows());
    let (channels, side) = preprocessing
        .output_shape(input_channels, input_side)
        .map_err(|e| Error::Format(e.to_string()))?;
    ensure!(
        channels == bank_channels && stage1.feature_len(filters, channels, side) == feature_len,
        Format,
        "stored feature length {feature_len} disagrees with the stage-1 geometry"
    );
    let classifier = ClassifierModel::new(layer, w_out, c).map_err(|e| Error::Format(e.to_string()))?;
    Ok(SavedModel {
        dataset,
        input_channels,
        input_side,
        preprocessing,
        stage1,
        bank,
        classifier,
    })
}

pub fn save_model(m: &SavedModel, path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = encode_model(m)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
