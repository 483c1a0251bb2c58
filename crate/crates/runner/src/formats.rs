//! Dataset files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"AFLD"
//! version u32 = 1
//! samples u64
//! dims    u32 channels, u32 height, u32 width
//! classes u32
//! samples × (label u32, channels·height·width × f32 row-major)
//! ```
//!
//! CSV layout: a header record `samples,channels,height,width,classes`, one
//! record with those values, then one record per sample: the label
//! followed by the row-major feature values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use approxfl_core::dataset::{synthetic, Dataset, SyntheticSpec};

use crate::error::{Result, RunnerError};

const MAGIC: &[u8; 4] = b"AFLD";
const VERSION: u32 = 1;
const HEADER: [&str; 5] = ["samples", "channels", "height", "width", "classes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    Binary,
    Csv,
}

impl DatasetFormat {
    /// Guess from the file extension (`.csv` is CSV, anything else binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Binary,
        }
    }
}

/// Generator parameters of the bundled desk-scale dataset.
pub fn bundled_spec() -> SyntheticSpec {
    SyntheticSpec::default()
}

static BUNDLED_TRAIN: &[u8] = include_bytes!("../data/desk_train.bin");
static BUNDLED_TEST: &[u8] = include_bytes!("../data/desk_test.bin");

/// The bundled `(train, test)` desk-scale synthetic dataset.
pub fn bundled() -> Result<(Dataset, Dataset)> {
    Ok((
        decode_binary(BUNDLED_TRAIN, Path::new("<bundled train>"))?,
        decode_binary(BUNDLED_TEST, Path::new("<bundled test>"))?,
    ))
}

/// Regenerate the bundled dataset from its generator.
pub fn generate_bundled() -> Result<(Dataset, Dataset)> {
    Ok(synthetic(&bundled_spec())?)
}

pub fn read_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
                .map_err(|e| RunnerError::io(path, e))?;
            decode_binary(&bytes, path)
        }
        DatasetFormat::Csv => read_csv(path),
    }
}

pub fn write_dataset(path: &Path, data: &Dataset, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Binary => {
            let bytes = encode_binary(data);
            let mut w = BufWriter::new(File::create(path).map_err(|e| RunnerError::io(path, e))?);
            w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| RunnerError::io(path, e))
        }
        DatasetFormat::Csv => write_csv(path, data),
    }
}

pub fn encode_binary(data: &Dataset) -> Vec<u8> {
    let [c, h, w] = data.sample_shape();
    let n = data.sample_len();
    let mut out = Vec::with_capacity(32 + data.len() * (4 + 4 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for d in [c, h, w, data.classes()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for i in 0..data.len() {
        out.extend_from_slice(&data.labels()[i].to_le_bytes());
        for v in data.sample(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(RunnerError::format(self.path, format!("truncated file: {what} missing")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(RunnerError::format(path, "empty file"));
    }
    let mut cur = Cursor { bytes, path };
    if cur.take(4, "magic")? != MAGIC {
        return Err(RunnerError::format(path, "not a dataset file (bad magic)"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(RunnerError::format(path, format!("unsupported dataset version {version}")));
    }
    let samples = usize::try_from(cur.u64("sample count")?).map_err(|_| RunnerError::format(path, "sample count too large"))?;
    let dims = [
        cur.u32("channels")? as usize,
        cur.u32("height")? as usize,
        cur.u32("width")? as usize,
    ];
    let classes = cur.u32("class count")? as usize;
    let n: usize = dims.iter().product();
    if n == 0 {
        return Err(RunnerError::format(path, "sample dimensions must be positive"));
    }
    let record = 4 + 4 * n;
    let expected = samples
        .checked_mul(record)
        .ok_or_else(|| RunnerError::format(path, "sample count too large"))?;
    if cur.bytes.len() < expected {
        return Err(RunnerError::format(
            path,
            format!(
                "truncated file: {samples} samples need {expected} data bytes, found {}",
                cur.bytes.len()
            ),
        ));
    }
    if cur.bytes.len() > expected {
        return Err(RunnerError::format(path, "trailing bytes after the last sample"));
    }
    let mut labels = Vec::with_capacity(samples);
    let mut features = Vec::with_capacity(samples * n);
    for _ in 0..samples {
        labels.push(cur.u32("label")?);
        let raw = cur.take(4 * n, "features")?;
        features.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))));
    }
    Dataset::new(dims, classes, features, labels).map_err(|e| RunnerError::format(path, e.to_string()))
}

fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| RunnerError::format(path, e.to_string()))?;
    let [c, h, wd] = data.sample_shape();
    w.write_record(HEADER)?;
    w.write_record([data.len(), c, h, wd, data.classes()].map(|v| v.to_string()))?;
    let mut row = Vec::with_capacity(1 + data.sample_len());
    for i in 0..data.len() {
        row.clear();
        row.push(data.labels()[i].to_string());
        row.extend(data.sample(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| RunnerError::io(path, e))
}

fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| RunnerError::format(path, e.to_string()))?;
    let bad = |msg: String| RunnerError::format(path, msg);
    let header = r.headers()?.clone();
    if header.is_empty() || header.iter().collect::<Vec<_>>() != HEADER {
        return Err(bad(format!("expected header `{}`", HEADER.join(","))));
    }
    let mut records = r.records();
    let dims_rec = records.next().ok_or_else(|| bad("missing dimension record".into()))??;
    let dims: Vec<usize> = dims_rec
        .iter()
        .map(|v| v.trim().parse::<usize>().map_err(|_| bad(format!("bad dimension value {v:?}"))))
        .collect::<Result<_>>()?;
    let [samples, c, h, w, classes] = dims[..] else {
        return Err(bad("dimension record needs five values".into()));
    };
    let n = c * h * w;
    let mut labels = Vec::with_capacity(samples);
    let mut features = Vec::with_capacity(samples * n);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(bad(format!("sample {i}: {} values, expected label plus {n} features", rec.len())));
        }
        labels.push(
            rec[0]
                .trim()
                .parse::<u32>()
                .map_err(|_| bad(format!("sample {i}: bad label {:?}", &rec[0])))?,
        );
        for v in rec.iter().skip(1) {
            features.push(v.trim().parse::<f32>().map_err(|_| bad(format!("sample {i}: bad value {v:?}")))?);
        }
    }
    if labels.len() != samples {
        return Err(bad(format!("header declares {samples} samples, file holds {}", labels.len())));
    }
    Dataset::new([c, h, w], classes, features, labels).map_err(|e| bad(e.to_string()))
}

/// Standardise every channel of both sets with the training set's
/// per-channel mean and standard deviation.
pub fn standardize(train: &mut Dataset, test: &mut Dataset) {
    let [c_n, h, w] = train.sample_shape();
    let plane = h * w;
    let mut stats = Vec::with_capacity(c_n);
    for c in 0..c_n {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for i in 0..train.len() {
            for &v in &train.sample(i)[c * plane..][..plane] {
                sum += f64::from(v);
                sq += f64::from(v) * f64::from(v);
            }
        }
        let count = (train.len() * plane).max(1) as f64;
        let mean = sum / count;
        let std = (sq / count - mean * mean).max(0.0).sqrt();
        stats.push((mean, if std > 0.0 { std } else { 1.0 }));
    }
    for data in [train, test] {
        let mut features = data.features().to_vec();
        for sample in features.chunks_mut(c_n * plane) {
            for (c, &(mean, std)) in stats.iter().enumerate() {
                for v in &mut sample[c * plane..][..plane] {
                    *v = ((f64::from(*v) - mean) / std) as f32;
                }
            }
        }
        *data = Dataset::new(data.sample_shape(), data.classes(), features, data.labels().to_vec())
            .expect("standardising keeps the dataset shape");
    }
}
