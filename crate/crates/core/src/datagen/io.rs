//! Line-delimited dataset files.
//!
//! Line 1 is a JSON header carrying the modality registry, vocabulary size,
//! class count and label kind. Every further line is one JSON sample record:
//!
//! ```text
//! {"label":5,"pattern":"it","text":[1,7,9,2],"h":2,"w":2,"image":[2.0000000000000001e-1,...]}
//! ```
//!
//! Pixels are written with 17 significant digits so reading a file back
//! reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::registry::{MissingPattern, Modality, ModalityRegistry};
use super::sample::{Dataset, ImageGrid, Label, LabelKind, PlaceholderPolicy, Sample};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "msplab-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    modalities: Vec<Modality>,
    vocab_size: usize,
    n_classes: usize,
    label_kind: LabelKind,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelField {
    Class(usize),
    Multi(Vec<u8>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    label: LabelField,
    pattern: String,
    text: Vec<u32>,
    h: usize,
    w: usize,
    image: Vec<f64>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        modalities: ds.registry.modalities().to_vec(),
        vocab_size: ds.vocab_size,
        n_classes: ds.n_classes,
        label_kind: ds.label_kind,
    };
    let io = |e: std::io::Error| Error::io("<dataset writer>", e);
    let header = serde_json::to_string(&header).expect("header serializes");
    writeln!(out, "{header}").map_err(io)?;
    let mut line = String::new();
    for s in &ds.samples {
        line.clear();
        line.push_str("{\"label\":");
        match &s.label {
            Label::Class(c) => write!(line, "{c}").unwrap(),
            Label::MultiHot(v) => line.push_str(&serde_json::to_string(v).unwrap()),
        }
        write!(
            line,
            ",\"pattern\":\"{}\",\"text\":{},\"h\":{},\"w\":{},\"image\":[",
            s.pattern.to_ids(&ds.registry),
            serde_json::to_string(&s.text).unwrap(),
            s.image.h,
            s.image.w
        )
        .unwrap();
        for (i, p) in s.image.pixels.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(*p));
        }
        line.push_str("]}");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, BufWriter::new(f))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(BufReader::new(f))
}

pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset> {
    let mut lines = BufReader::new(input).lines();
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected a header".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, format!("header: {e}")))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let registry = ModalityRegistry::new(header.modalities).map_err(|e| Error::Validation {
        line: 1,
        msg: e.to_string(),
    })?;
    let mut ds = Dataset {
        registry,
        vocab_size: header.vocab_size,
        n_classes: header.n_classes,
        label_kind: header.label_kind,
        samples: Vec::new(),
    };
    let pol = PlaceholderPolicy::default();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let sample = validate_record(&ds, &pol, rec).map_err(|msg| Error::Validation { line: lineno, msg })?;
        ds.samples.push(sample);
    }
    Ok(ds)
}

fn validate_record(ds: &Dataset, pol: &PlaceholderPolicy, rec: Record) -> std::result::Result<Sample, String> {
    let pattern = MissingPattern::parse(&rec.pattern, &ds.registry).map_err(|e| e.to_string())?;
    let label = match (rec.label, ds.label_kind) {
        (LabelField::Class(c), LabelKind::Multiclass) if c < ds.n_classes => Label::Class(c),
        (LabelField::Multi(v), LabelKind::Multilabel) if v.len() == ds.n_classes && v.iter().all(|&x| x <= 1) => {
            Label::MultiHot(v)
        }
        _ => return Err("label does not match the header's label kind or class count".into()),
    };
    let (h, w) = ds.image_dims();
    if (rec.h, rec.w) != (h, w) || rec.image.len() != h * w {
        return Err(format!(
            "image is {}x{} with {} pixels, header says {h}x{w}",
            rec.h,
            rec.w,
            rec.image.len()
        ));
    }
    if rec.text.len() > ds.max_text_len() {
        return Err(format!("text has {} tokens, max is {}", rec.text.len(), ds.max_text_len()));
    }
    if let Some(t) = rec.text.iter().find(|&&t| t as usize >= ds.vocab_size) {
        return Err(format!("token {t} outside vocabulary of {}", ds.vocab_size));
    }
    let image = ImageGrid {
        h,
        w,
        pixels: rec.image,
    };
    if !pattern.contains(ds.text_index()) && !pol.is_text_placeholder(&rec.text) {
        return Err("text is marked missing but is not the placeholder".into());
    }
    if !pattern.contains(ds.image_index()) && !pol.is_image_placeholder(&image) {
        return Err("image is marked missing but is not the placeholder".into());
    }
    Ok(Sample {
        text: rec.text,
        image,
        label,
        pattern,
    })
}
