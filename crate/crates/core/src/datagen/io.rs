//! JSON-Lines dataset files.
//!
//! Layout: one header line, one line per sample, then a trailer
//! `{"checksum":"<16 hex digits>","count":N}`. The checksum is the 64-bit
//! FNV-1a hash of every sample line including its newline. Floats are written
//! with 17 significant digits so a round trip is exact.

use std::fs::File;
use std::hash::Hasher;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{ConfigRange, DatagenError, Sample};

pub const FORMAT_NAME: &str = "ugcl-dataset";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub schema_version: u32,
    pub seed: u64,
    pub range: ConfigRange,
}

impl DatasetHeader {
    pub fn new(range: &ConfigRange) -> Self {
        DatasetHeader {
            format: FORMAT_NAME.to_string(),
            schema_version: SCHEMA_VERSION,
            seed: range.seed,
            range: range.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    checksum: String,
    count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub count: u64,
    pub checksum: u64,
}

impl DatasetSummary {
    pub fn checksum_hex(&self) -> String {
        format!("{:016x}", self.checksum)
    }
}

struct Exact;

impl serde_json::ser::Formatter for Exact {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

fn to_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1024);
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact);
    value
        .serialize(&mut ser)
        .expect("dataset records serialize infallibly");
    buf.push(b'\n');
    buf
}

/// Streams samples to a file, hashing as it goes.
pub struct DatasetWriter<W: Write> {
    out: W,
    hasher: FnvHasher,
    count: u64,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &DatasetHeader) -> Result<Self, DatagenError> {
        DatasetWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, header: &DatasetHeader) -> Result<Self, DatagenError> {
        out.write_all(&to_line(header))?;
        Ok(DatasetWriter {
            out,
            hasher: FnvHasher::default(),
            count: 0,
        })
    }

    pub fn write_sample(&mut self, sample: &Sample) -> Result<(), DatagenError> {
        let line = to_line(sample);
        self.hasher.write(&line);
        self.out.write_all(&line)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetSummary, DatagenError> {
        let summary = DatasetSummary {
            count: self.count,
            checksum: self.hasher.finish(),
        };
        let trailer = Trailer {
            checksum: summary.checksum_hex(),
            count: summary.count,
        };
        self.out.write_all(&to_line(&trailer))?;
        self.out.flush()?;
        Ok(summary)
    }
}

pub fn write_dataset(
    path: &Path,
    header: &DatasetHeader,
    samples: &[Sample],
) -> Result<DatasetSummary, DatagenError> {
    let mut w = DatasetWriter::create(path, header)?;
    for s in samples {
        w.write_sample(s)?;
    }
    w.finish()
}

fn parse_header(line: &str) -> Result<DatasetHeader, DatagenError> {
    let header: DatasetHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| DatagenError::SchemaVersionMismatch(format!("unreadable header ({e})")))?;
    if header.format != FORMAT_NAME || header.schema_version != SCHEMA_VERSION {
        return Err(DatagenError::SchemaVersionMismatch(format!(
            "expected {FORMAT_NAME} v{SCHEMA_VERSION}, found {} v{}",
            header.format, header.schema_version
        )));
    }
    Ok(header)
}

/// Reads one line; `None` at end of file.
fn next_line(r: &mut impl BufRead, buf: &mut String) -> io::Result<Option<()>> {
    buf.clear();
    Ok((r.read_line(buf)? > 0).then_some(()))
}

/// Checks header and checksum without holding more than one line in memory.
fn verify(path: &Path) -> Result<(DatasetHeader, DatasetSummary), DatagenError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    if next_line(&mut r, &mut line)?.is_none() {
        return Err(DatagenError::SchemaVersionMismatch("empty file".into()));
    }
    let header = parse_header(&line)?;
    let mut hasher = FnvHasher::default();
    let mut count = 0u64;
    let mut pending = String::new();
    let mut have_pending = false;
    while next_line(&mut r, &mut line)?.is_some() {
        if have_pending {
            hasher.write(pending.as_bytes());
            count += 1;
        }
        std::mem::swap(&mut pending, &mut line);
        have_pending = true;
    }
    let missing = || DatagenError::ChecksumMismatch("missing or truncated trailer".into());
    if !have_pending {
        return Err(missing());
    }
    let trailer: Trailer = serde_json::from_str(pending.trim_end()).map_err(|_| missing())?;
    let actual = DatasetSummary {
        count,
        checksum: hasher.finish(),
    };
    if trailer.checksum != actual.checksum_hex() || trailer.count != count {
        return Err(DatagenError::ChecksumMismatch(format!(
            "trailer says {} over {} samples, body hashes to {} over {}",
            trailer.checksum,
            trailer.count,
            actual.checksum_hex(),
            count
        )));
    }
    Ok((header, actual))
}

/// Streaming reader. The file is verified in full before the first sample is
/// yielded, so a damaged file never produces a partial dataset.
pub struct DatasetReader {
    header: DatasetHeader,
    summary: DatasetSummary,
    path: PathBuf,
    lines: io::Lines<BufReader<File>>,
    yielded: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatagenError> {
        let (header, summary) = verify(path)?;
        let mut lines = BufReader::new(File::open(path)?).lines();
        lines.next().transpose()?;
        Ok(DatasetReader {
            header,
            summary,
            path: path.to_path_buf(),
            lines,
            yielded: 0,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn summary(&self) -> DatasetSummary {
        self.summary
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample, DatagenError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.yielded >= self.summary.count {
            return None;
        }
        self.yielded += 1;
        let line_no = self.yielded as usize + 1;
        Some(match self.lines.next() {
            Some(Ok(line)) => serde_json::from_str(&line).map_err(|e| DatagenError::Malformed {
                line: line_no,
                message: e.to_string(),
            }),
            Some(Err(e)) => Err(e.into()),
            None => Err(DatagenError::ChecksumMismatch("file changed while reading".into())),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.summary.count - self.yielded) as usize;
        (left, Some(left))
    }
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Sample>), DatagenError> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header().clone();
    let samples = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;

    fn fixture(dir: &Path, count: usize) -> (PathBuf, Vec<Sample>, DatasetSummary) {
        let range = ConfigRange {
            points_per_sample: 4,
            ..ConfigRange::default()
        };
        let samples = generate_dataset(&range, count).unwrap();
        let path = dir.join("d.jsonl");
        let summary = write_dataset(&path, &DatasetHeader::new(&range), &samples).unwrap();
        (path, samples, summary)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (path, samples, summary) = fixture(dir.path(), 25);
        let (header, back) = read_dataset(&path).unwrap();
        assert_eq!(header.schema_version, SCHEMA_VERSION);
        assert_eq!(back, samples);
        assert_eq!(summary.count, 25);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 27);
    }

    #[test]
    fn checksum_covers_body_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, summary) = fixture(dir.path(), 5);
        let text = std::fs::read_to_string(&path).unwrap();
        let body: String = text.split_inclusive('\n').skip(1).take(5).collect();
        let mut h = FnvHasher::default();
        h.write(body.as_bytes());
        assert_eq!(h.finish(), summary.checksum);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path(), 3);
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.jsonl");
        let step = (bytes.len() / 97).max(1);
        for len in (0..bytes.len() - 1).step_by(step).chain([bytes.len() - 2]) {
            std::fs::write(&cut, &bytes[..len]).unwrap();
            match DatasetReader::open(&cut) {
                Err(DatagenError::SchemaVersionMismatch(_)) | Err(DatagenError::ChecksumMismatch(_)) => {}
                other => panic!("length {len}: {:?}", other.map(|r| r.summary())),
            }
        }
    }

    #[test]
    fn flipped_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path(), 3);
        let mut text = std::fs::read_to_string(&path).unwrap();
        let pos = text.find("\"points3d\"").unwrap() + 14;
        let digit = text.as_bytes()[pos];
        let replacement = if digit == b'1' { "2" } else { "1" };
        text.replace_range(pos..pos + 1, replacement);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            DatasetReader::open(&path),
            Err(DatagenError::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _, _) = fixture(dir.path(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"schema_version\":1", "\"schema_version\":2", 1)).unwrap();
        assert!(matches!(
            DatasetReader::open(&path),
            Err(DatagenError::SchemaVersionMismatch(_))
        ));
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let line = String::from_utf8(to_line(&[0.1f64, -1.0 / 3.0, 1e-300])).unwrap();
        assert_eq!(line, "[1.0000000000000001e-1,-3.3333333333333331e-1,1.0000000000000000e-300]\n");
        let back: Vec<f64> = serde_json::from_str(&line).unwrap();
        assert_eq!(back, vec![0.1, -1.0 / 3.0, 1e-300]);
    }
}
