//! Segment records, speaker bookkeeping, and the on-disk embedding format.
//!
//! An embedding file is a little-endian `u32` header length, a JSON header
//! `{n, m, dtype, byte_order, version}`, then `n * m` row-major `f32` values.
//! The companion manifest is a UTF-8 TSV with a header row naming at least
//! `segment_id`, `speaker_id`, `label` and `row_index`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// File names used inside a dataset directory.
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const MANIFEST_FILE: &str = "manifest.tsv";

const MANIFEST_COLUMNS: [&str; 4] = ["segment_id", "speaker_id", "label", "row_index"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Healthy = 0,
    Pd = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Pd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Pd),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("invalid label {v}"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub speaker_id: String,
    pub label: Label,
    pub embedding: Vec<f64>,
    /// Provenance only; empty when unknown.
    pub utterance_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEntry {
    pub label: Label,
    /// Node indices of this speaker's segments, ascending.
    pub segments: Vec<usize>,
}

/// Speakers keyed by id, iterated in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeakerTable {
    entries: BTreeMap<String, SpeakerEntry>,
}

impl SpeakerTable {
    pub fn from_records(records: &[SegmentRecord]) -> Result<Self> {
        let mut entries: BTreeMap<String, SpeakerEntry> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let e = entries
                .entry(r.speaker_id.clone())
                .or_insert_with(|| SpeakerEntry {
                    label: r.label,
                    segments: Vec::new(),
                });
            if e.label != r.label {
                return Err(Error::InconsistentSpeakerLabel(r.speaker_id.clone()));
            }
            e.segments.push(i);
        }
        Ok(SpeakerTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, speaker: &str) -> Option<&SpeakerEntry> {
        self.entries.get(speaker)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SpeakerEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Speaker ids of one class, sorted.
    pub fn speakers_of(&self, label: Label) -> Vec<&str> {
        self.iter()
            .filter(|(_, e)| e.label == label)
            .map(|(id, _)| id)
            .collect()
    }
}

/// A validated, immutable record set with its speaker table.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<SegmentRecord>,
    speakers: SpeakerTable,
    dim: usize,
}

impl Dataset {
    pub fn new(records: Vec<SegmentRecord>) -> Result<Self> {
        let dim = validate_records(&records)?;
        let speakers = SpeakerTable::from_records(&records)?;
        Ok(Dataset {
            records,
            speakers,
            dim,
        })
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Dataset::new(load_dataset(
            dir.join(EMBEDDINGS_FILE),
            dir.join(MANIFEST_FILE),
        )?)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_dataset(
            &self.records,
            dir.join(EMBEDDINGS_FILE),
            dir.join(MANIFEST_FILE),
        )
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn speakers(&self) -> &SpeakerTable {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// n×m feature matrix in record order.
    pub fn features(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.records.len(), self.dim));
        for (mut row, r) in x.rows_mut().into_iter().zip(&self.records) {
            row.iter_mut().zip(&r.embedding).for_each(|(a, b)| *a = *b);
        }
        x
    }
}

/// Checks the record-level invariants and returns the shared dimension.
fn validate_records(records: &[SegmentRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let dim = first.embedding.len();
    if dim == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                segment: r.segment_id.clone(),
                expected: dim,
                got: r.embedding.len(),
            });
        }
        if !seen.insert(r.segment_id.as_str()) {
            return Err(Error::DuplicateSegment(r.segment_id.clone()));
        }
    }
    Ok(dim)
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    n: usize,
    m: usize,
    dtype: String,
    byte_order: String,
    version: u32,
}

/// Writes `u32 LE header length | header | payload`.
pub(crate) fn write_framed(header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

/// Splits a framed buffer into header bytes and payload bytes.
pub(crate) fn read_framed(bytes: &[u8]) -> std::result::Result<(&[u8], &[u8]), String> {
    if bytes.len() < 4 {
        return Err("missing header length prefix".into());
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let rest = &bytes[4..];
    if rest.len() < len {
        return Err(format!(
            "header length {len} exceeds file size {}",
            bytes.len()
        ));
    }
    Ok(rest.split_at(len))
}

fn parse_embedding_file(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let (header, payload) = read_framed(bytes).map_err(Error::MalformedHeader)?;
    let header: EmbeddingHeader =
        serde_json::from_slice(header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::MalformedHeader(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.byte_order != "little" {
        return Err(Error::MalformedHeader(format!(
            "unsupported byte order {:?}",
            header.byte_order
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let expected = header
        .n
        .checked_mul(header.m)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("n*m overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header.n, header.m, values))
}

struct ManifestRow {
    segment_id: String,
    speaker_id: String,
    label: Label,
    row: usize,
    utterance_id: String,
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(Error::MalformedManifest {
        line: 1,
        reason: "missing header row".into(),
    })?;
    let cols: Vec<&str> = head.split('\t').collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = find(name).ok_or_else(|| Error::MalformedManifest {
            line: 1,
            reason: format!("missing column {name}"),
        })?;
    }
    let utt = find("utterance_id");

    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::MalformedManifest {
                line: i + 1,
                reason: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let label = match fields[idx[2]] {
            "0" => Label::Healthy,
            "1" => Label::Pd,
            other => return Err(Error::InvalidLabel(other.to_string())),
        };
        let row = fields[idx[3]]
            .parse::<usize>()
            .map_err(|e| Error::MalformedManifest {
                line: i + 1,
                reason: format!("row_index: {e}"),
            })?;
        rows.push(ManifestRow {
            segment_id: fields[idx[0]].to_string(),
            speaker_id: fields[idx[1]].to_string(),
            label,
            row,
            utterance_id: utt.map(|u| fields[u].to_string()).unwrap_or_default(),
        });
    }
    Ok(rows)
}

/// Loads an embedding file plus manifest. Records come back ordered by row
/// index, with embeddings widened to `f64`.
pub fn load_dataset(
    embedding_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<Vec<SegmentRecord>> {
    let embedding_path = embedding_path.as_ref();
    let manifest_path = manifest_path.as_ref();
    let bytes = fs::read(embedding_path).map_err(|e| Error::io(embedding_path, e))?;
    let (n, m, values) = parse_embedding_file(&bytes)?;
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let rows = parse_manifest(&text)?;

    if rows.len() != n {
        return Err(Error::RowCountMismatch {
            manifest: rows.len(),
            header: n,
        });
    }
    let mut slots: Vec<Option<SegmentRecord>> = vec![None; n];
    for r in rows {
        if r.row >= n {
            return Err(Error::RowOutOfRange { row: r.row, n });
        }
        if slots[r.row].is_some() {
            return Err(Error::DuplicateRow(r.row));
        }
        let embedding = values[r.row * m..(r.row + 1) * m]
            .iter()
            .map(|&v| v as f64)
            .collect();
        slots[r.row] = Some(SegmentRecord {
            segment_id: r.segment_id,
            speaker_id: r.speaker_id,
            label: r.label,
            embedding,
            utterance_id: r.utterance_id,
        });
    }
    // n rows, all distinct and in range, so every slot is filled.
    let records: Vec<SegmentRecord> = slots.into_iter().map(Option::unwrap).collect();
    validate_records(&records)?;
    SpeakerTable::from_records(&records)?;
    Ok(records)
}

/// Writes records in order; record `i` becomes row `i`.
pub fn write_dataset(
    records: &[SegmentRecord],
    embedding_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<()> {
    let m = validate_records(records)?;
    SpeakerTable::from_records(records)?;
    for r in records {
        for field in [&r.segment_id, &r.speaker_id, &r.utterance_id] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::MalformedManifest {
                    line: 0,
                    reason: format!("field {field:?} contains a tab or newline"),
                });
            }
        }
    }

    let header = serde_json::to_vec(&EmbeddingHeader {
        n: records.len(),
        m,
        dtype: "f32".into(),
        byte_order: "little".into(),
        version: FORMAT_VERSION,
    })
    .expect("header serializes");
    let mut payload = Vec::with_capacity(records.len() * m * 4);
    for r in records {
        for &v in &r.embedding {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let embedding_path = embedding_path.as_ref();
    fs::write(embedding_path, write_framed(&header, &payload))
        .map_err(|e| Error::io(embedding_path, e))?;

    let manifest_path = manifest_path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{}\tutterance_id", MANIFEST_COLUMNS.join("\t")).unwrap();
    for (i, r) in records.iter().enumerate() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.segment_id, r.speaker_id, r.label, i, r.utterance_id
        )
        .unwrap();
    }
    fs::write(manifest_path, out).map_err(|e| Error::io(manifest_path, e))
}
