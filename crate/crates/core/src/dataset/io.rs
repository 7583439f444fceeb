//! Dataset file formats.
//!
//! Binary `FSF1` layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "FSF1"
//! dim        u32
//! classes    u32
//! samples    u32
//! relu_flag  u8, then 3 reserved zero bytes
//! class ids  classes x u32
//! records    samples x (u32 label, dim x f32)
//! ```
//!
//! Text format is CSV with header `label,f0,...,f{d-1}`. Two optional comment
//! lines before the header (`# relu_constraint=<bool>` and
//! `# classes=<id>;<id>;...`) carry the metadata the CSV columns cannot.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_row, FeatureDataset, FeatureVector, LabeledFeature};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSF1";
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Text,
}

impl Format {
    /// `.csv` and `.txt` are text; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("txt") => Format::Text,
            _ => Format::Binary,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let file = fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), format, &name)
}

pub fn save_dataset(ds: &FeatureDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_dataset(ds, &mut out, format)?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset(mut reader: impl Read, format: Format, name: &str) -> Result<FeatureDataset> {
    match format {
        Format::Binary => {
            let mut buf = Vec::new();
            reader.read_to_end(&mut buf)?;
            decode_binary(&buf, name)
        }
        Format::Text => {
            let mut text = String::new();
            reader.read_to_string(&mut text)?;
            decode_text(&text, name)
        }
    }
}

pub fn write_dataset(ds: &FeatureDataset, mut writer: impl Write, format: Format) -> Result<()> {
    match format {
        Format::Binary => writer.write_all(&encode_binary(ds))?,
        Format::Text => writer.write_all(encode_text(ds).as_bytes())?,
    }
    Ok(())
}

fn encode_binary(ds: &FeatureDataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * ds.classes.len() + ds.len() * (4 + 4 * ds.dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.classes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.samples.len() as u32).to_le_bytes());
    buf.push(ds.relu_constraint as u8);
    buf.extend_from_slice(&[0, 0, 0]);
    for c in &ds.classes {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for s in &ds.samples {
        buf.extend_from_slice(&s.label.to_le_bytes());
        for v in s.feature.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

fn decode_binary(buf: &[u8], name: &str) -> Result<FeatureDataset> {
    let header = |msg: &str| Error::MalformedHeader(msg.to_string());
    if buf.len() < HEADER_LEN {
        return Err(header("file shorter than header"));
    }
    if &buf[..4] != MAGIC {
        return Err(header("bad magic bytes"));
    }
    let mut cur = Cursor { buf, pos: 4 };
    let dim = cur.u32().unwrap() as usize;
    let class_count = cur.u32().unwrap() as usize;
    let sample_count = cur.u32().unwrap() as usize;
    let flags = cur.take(4).unwrap();
    let relu = match flags[0] {
        0 => false,
        1 => true,
        other => return Err(Error::MalformedHeader(format!("relu flag {other}"))),
    };
    if flags[1..] != [0, 0, 0] {
        return Err(header("reserved bytes not zero"));
    }
    if dim == 0 {
        return Err(Error::ZeroDimensionality);
    }
    let mut classes = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        classes.push(cur.u32().ok_or_else(|| header("truncated class table"))?);
    }
    let expected = HEADER_LEN + 4 * class_count + sample_count * (4 + 4 * dim);
    if buf.len() != expected {
        let row = (buf.len().saturating_sub(HEADER_LEN + 4 * class_count)) / (4 + 4 * dim);
        return Err(Error::Parse {
            row,
            msg: format!("file has {} bytes, header implies {expected}", buf.len()),
        });
    }
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let label = cur.u32().unwrap();
        let values: Vec<f32> = (0..dim).map(|_| cur.f32().unwrap()).collect();
        samples.push(LabeledFeature {
            feature: FeatureVector(values),
            label,
        });
    }
    FeatureDataset::new(name, dim, classes, samples, relu)
}

fn encode_text(ds: &FeatureDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# relu_constraint={}", ds.relu_constraint);
    let ids: Vec<String> = ds.classes.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "# classes={}", ids.join(";"));
    out.push_str("label");
    for j in 0..ds.dim {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for s in &ds.samples {
        let _ = write!(out, "{}", s.label);
        for v in s.feature.as_slice() {
            // Display for f32 prints the shortest string that parses back to
            // the same value.
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn decode_text(text: &str, name: &str) -> Result<FeatureDataset> {
    let mut relu = false;
    let mut classes: Option<Vec<u32>> = None;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();

    while let Some((_, line)) = lines.peek() {
        let Some(meta) = line.strip_prefix('#') else { break };
        let meta = meta.trim();
        if let Some(v) = meta.strip_prefix("relu_constraint=") {
            relu = v
                .trim()
                .parse()
                .map_err(|_| Error::MalformedHeader(format!("relu_constraint={v}")))?;
        } else if let Some(v) = meta.strip_prefix("classes=") {
            let ids = v
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedHeader(format!("classes: {e}")))?;
            classes = Some(ids);
        }
        lines.next();
    }

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(Error::MalformedHeader("first column must be `label`".into()));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::MalformedHeader(format!("column {} is `{c}`, expected `f{j}`", j + 1)));
        }
    }
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(Error::ZeroDimensionality);
    }

    let mut samples = Vec::new();
    for (row, (_, line)) in lines.enumerate() {
        let mut fields = line.split(',').map(str::trim);
        let label_str = fields.next().unwrap_or("");
        let label = label_str.parse::<u32>().map_err(|e| Error::Parse {
            row,
            msg: format!("label `{label_str}`: {e}"),
        })?;
        let values = fields
            .map(|f| {
                f.parse::<f32>().map_err(|e| Error::Parse {
                    row,
                    msg: format!("value `{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        validate_row(row, dim, relu, &values)?;
        samples.push(LabeledFeature {
            feature: FeatureVector(values),
            label,
        });
    }

    let classes = match classes {
        Some(c) => c,
        None => {
            let mut ids: Vec<u32> = samples.iter().map(|s| s.label).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };
    FeatureDataset::new(name, dim, classes, samples, relu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> FeatureDataset {
        let s = |label, v: [f32; 3]| LabeledFeature {
            feature: FeatureVector(v.to_vec()),
            label,
        };
        FeatureDataset::new(
            "two",
            3,
            vec![4, 7],
            vec![
                s(4, [0.1, 0.2, 0.3]),
                s(7, [1.5, 0.0, 2.25]),
                s(4, [1e-7, 3.0, 0.333_333_34]),
                s(7, [0.0, 0.0, 9.0]),
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let ds = two_class();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf, Format::Binary).unwrap();
        assert_eq!(&buf[..4], &[0x46, 0x53, 0x46, 0x31]);
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(buf[16], 1);
        assert_eq!(&buf[17..20], &[0, 0, 0]);
        assert_eq!(buf.len(), 20 + 8 + 4 * 16);
        let back = read_dataset(&buf[..], Format::Binary, "two").unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.class_count(), 2);
        assert_eq!(back.len(), 4);
    }

    #[test]
    fn text_round_trip() {
        let ds = two_class();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf, Format::Text).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("label,f0,f1,f2\n"));
        let back = read_dataset(&buf[..], Format::Text, "two").unwrap();
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.feature.as_slice().iter().zip(b.feature.as_slice()) {
                assert!((*x as f64 - *y as f64).abs() <= 1e-9);
            }
        }
        assert_eq!(back.classes(), ds.classes());
    }

    #[test]
    fn text_dimension_mismatch_reports_row() {
        let mut text = String::from("label,f0,f1,f2\n");
        for _ in 0..5 {
            text.push_str("0,1,2,3\n");
        }
        text.push_str("0,1,2\n");
        let err = read_dataset(text.as_bytes(), Format::Text, "x").unwrap_err();
        assert!(err.to_string().contains("dimension mismatch at row 5"), "{err}");
    }

    #[test]
    fn text_negative_under_relu() {
        let text = "# relu_constraint=true\nlabel,f0\n0,0.5\n0,-0.1\n";
        let err = read_dataset(text.as_bytes(), Format::Text, "x").unwrap_err();
        assert!(err.to_string().contains("negative activation"), "{err}");
        let ok = "label,f0\n0,0.5\n0,-0.1\n";
        assert!(read_dataset(ok.as_bytes(), Format::Text, "x").is_ok());
    }

    #[test]
    fn binary_rejects_unknown_class_and_bad_header() {
        let ds = two_class();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf, Format::Binary).unwrap();
        let mut bad = buf.clone();
        let rec = 20 + 8 + 16;
        bad[rec..rec + 4].copy_from_slice(&99u32.to_le_bytes());
        let err = read_dataset(&bad[..], Format::Binary, "x").unwrap_err();
        assert!(matches!(err, Error::UnknownClassAtRow { row: 1, class: 99 }));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_dataset(&bad[..], Format::Binary, "x"),
            Err(Error::MalformedHeader(_))
        ));
        let truncated = &buf[..buf.len() - 3];
        assert!(read_dataset(truncated, Format::Binary, "x").is_err());
        let mut bad = buf;
        bad[18] = 1;
        assert!(matches!(
            read_dataset(&bad[..], Format::Binary, "x"),
            Err(Error::MalformedHeader(_))
        ));
    }
}
