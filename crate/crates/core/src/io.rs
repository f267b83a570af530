//! Binary file formats and the dataset manifest.
//!
//! Everything on disk is little-endian. Coordinates, features and flow vectors are
//! stored as `f32` and widened to `f64` on read, so values already representable in
//! `f32` round-trip exactly. Checkpoints keep parameters in `f64`.
//!
//! ```text
//! PCSQ  magic "PCSQ" | version u16 | T u16 | dims u8 (=3) | channels u16
//!       per frame: count u32 | count x (f32 x 3) | count x (f32 x channels)
//! PCFL  magic "PCFL" | version u16 | source frame u16 (1-based) | count u32 | count x (f32 x 3)
//! MTRW  magic "MTRW" | version u16 | config length u32 | config (UTF-8 TOML)
//!       | param count u32 | per param: name length u16 | name | rows u32 | cols u32 | f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Frame, Point3, Sequence};
use crate::grouping::FlowField;
use crate::nncore::Tensor;

pub const PCSQ_MAGIC: &[u8; 4] = b"PCSQ";
pub const PCFL_MAGIC: &[u8; 4] = b"PCFL";
pub const MTRW_MAGIC: &[u8; 4] = b"MTRW";
pub const FORMAT_VERSION: u16 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Maps a short read to a format error; other I/O errors pass through.
fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        format_err("file truncated")
    } else {
        Error::Io(e)
    }
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(eof)?;
    if &got != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u16::<LE>().map_err(eof)?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    Ok(())
}

fn to_f32(v: f64, what: &str) -> Result<f32> {
    let x = v as f32;
    if !x.is_finite() {
        return Err(Error::input(format!("{what} value {v} is not representable as f32")));
    }
    Ok(x)
}

fn checked_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::input(format!("{what} {v} exceeds the u16 field")))
}

fn checked_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::input(format!("{what} {v} exceeds the u32 field")))
}

fn write_point(w: &mut impl Write, p: &Point3, what: &str) -> Result<()> {
    for &v in p {
        w.write_f32::<LE>(to_f32(v, what)?)?;
    }
    Ok(())
}

fn read_point(r: &mut impl Read) -> Result<Point3> {
    let mut p = [0.0; 3];
    for v in &mut p {
        *v = r.read_f32::<LE>().map_err(eof)? as f64;
    }
    Ok(p)
}

pub fn write_sequence(w: &mut impl Write, seq: &Sequence) -> Result<()> {
    w.write_all(PCSQ_MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    w.write_u16::<LE>(checked_u16(seq.len(), "frame count")?)?;
    w.write_u8(3)?;
    w.write_u16::<LE>(checked_u16(seq.channels(), "channel count")?)?;
    for f in seq.frames() {
        w.write_u32::<LE>(checked_u32(f.len(), "point count")?)?;
        for p in f.coords() {
            write_point(w, p, "coordinate")?;
        }
        for &v in f.features() {
            w.write_f32::<LE>(to_f32(v, "feature")?)?;
        }
    }
    Ok(())
}

pub fn read_sequence(r: &mut impl Read) -> Result<Sequence> {
    read_header(r, PCSQ_MAGIC)?;
    let t = r.read_u16::<LE>().map_err(eof)? as usize;
    let dims = r.read_u8().map_err(eof)?;
    if dims != 3 {
        return Err(format_err(format!("coordinate dimension {dims}, expected 3")));
    }
    let c = r.read_u16::<LE>().map_err(eof)? as usize;
    if t == 0 {
        return Err(format_err("sequence has no frames"));
    }
    let mut frames = Vec::with_capacity(t);
    for k in 0..t {
        let n = r.read_u32::<LE>().map_err(eof)? as usize;
        if n == 0 {
            return Err(format_err(format!("frame {} is empty", k + 1)));
        }
        let coords = (0..n).map(|_| read_point(r)).collect::<Result<Vec<_>>>()?;
        let mut features = vec![0f32; n * c];
        r.read_f32_into::<LE>(&mut features).map_err(eof)?;
        let features = features.into_iter().map(f64::from).collect();
        frames.push(Frame::new(coords, features, c, k + 1).map_err(|e| format_err(e.to_string()))?);
    }
    Sequence::new(frames)
}

pub fn write_flow(w: &mut impl Write, flow: &FlowField) -> Result<()> {
    w.write_all(PCFL_MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    w.write_u16::<LE>(checked_u16(flow.source_frame + 1, "source frame")?)?;
    w.write_u32::<LE>(checked_u32(flow.vectors.len(), "vector count")?)?;
    for v in &flow.vectors {
        write_point(w, v, "flow")?;
    }
    Ok(())
}

pub fn read_flow(r: &mut impl Read) -> Result<FlowField> {
    read_header(r, PCFL_MAGIC)?;
    let source = r.read_u16::<LE>().map_err(eof)? as usize;
    if source == 0 {
        return Err(format_err("source frame index is 1-based"));
    }
    let n = r.read_u32::<LE>().map_err(eof)? as usize;
    let vectors = (0..n).map(|_| read_point(r)).collect::<Result<Vec<_>>>()?;
    FlowField::new(source - 1, vectors).map_err(|e| format_err(e.to_string()))
}

/// Model checkpoint: the architecture as TOML plus every named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: Vec<(String, Tensor)>,
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MTRW_MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(checked_u32(ckpt.config.len(), "config length")?)?;
    w.write_all(ckpt.config.as_bytes())?;
    w.write_u32::<LE>(checked_u32(ckpt.params.len(), "parameter count")?)?;
    for (name, t) in &ckpt.params {
        w.write_u16::<LE>(checked_u16(name.len(), "parameter name length")?)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(checked_u32(t.rows(), "rows")?)?;
        w.write_u32::<LE>(checked_u32(t.cols(), "cols")?)?;
        for &v in t.data() {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(eof)?;
    String::from_utf8(buf).map_err(|_| format_err("string is not valid UTF-8"))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    read_header(r, MTRW_MAGIC)?;
    let len = r.read_u32::<LE>().map_err(eof)? as usize;
    let config = read_string(r, len)?;
    let count = r.read_u32::<LE>().map_err(eof)? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(eof)? as usize;
        let name = read_string(r, len)?;
        let rows = r.read_u32::<LE>().map_err(eof)? as usize;
        let cols = r.read_u32::<LE>().map_err(eof)? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| format_err("parameter shape overflows"))?;
        let mut data = vec![0f64; n];
        r.read_f64_into::<LE>(&mut data).map_err(eof)?;
        params.push((name, Tensor::new(rows, cols, data)?));
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn save_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_flow(&mut w, flow)?;
    w.flush()?;
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<FlowField> {
    read_flow(&mut BufReader::new(File::open(path)?))
}

pub fn save_sequence(path: &Path, seq: &Sequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequence(&mut w, seq)?;
    w.flush()?;
    Ok(())
}

pub fn load_sequence(path: &Path) -> Result<Sequence> {
    read_sequence(&mut BufReader::new(File::open(path)?))
}

/// One row of a dataset manifest. Sequences of a split are concatenated PCSQ records in
/// `file`; `offset` and `length` locate this sample in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub label: Option<usize>,
    pub file: String,
    pub offset: u64,
    pub length: u64,
    /// Optional PCFL file holding ground-truth flow for the last frame.
    pub flow: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

pub fn write_manifest(w: impl Write, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    for e in entries {
        out.serialize(e).map_err(|e| format_err(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(r: impl Read) -> Result<Vec<ManifestEntry>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| format_err(format!("manifest: {e}"))))
        .collect()
}

/// A dataset directory: a manifest plus the sequence files it points into.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: std::path::PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Ok(Self { root: root.to_path_buf(), entries: read_manifest(BufReader::new(file))? })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == name)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Sequence> {
        let mut f = File::open(self.root.join(&entry.file))?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut r = BufReader::new(f.take(entry.length));
        read_sequence(&mut r)
    }

    pub fn load_flow(&self, entry: &ManifestEntry) -> Result<Option<FlowField>> {
        entry.flow.as_ref().map(|f| load_flow(&self.root.join(f))).transpose()
    }

    /// Loads every sample of a split together with its label.
    pub fn load_split(&self, name: &str) -> Result<Vec<(Sequence, Option<usize>)>> {
        self.split(name).map(|e| Ok((self.load(e)?, e.label))).collect()
    }
}

/// Writes `samples` of one split as concatenated PCSQ records into `root/file` and
/// returns their manifest rows.
pub fn write_split(
    root: &Path,
    split: &str,
    file: &str,
    samples: &[(String, &Sequence, Option<usize>)],
) -> Result<Vec<ManifestEntry>> {
    let mut buf = Vec::new();
    let mut entries = Vec::with_capacity(samples.len());
    for (id, seq, label) in samples {
        let offset = buf.len() as u64;
        write_sequence(&mut buf, seq)?;
        entries.push(ManifestEntry {
            id: id.clone(),
            split: split.to_string(),
            label: *label,
            file: file.to_string(),
            offset,
            length: buf.len() as u64 - offset,
            flow: None,
        });
    }
    std::fs::write(root.join(file), buf)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Sequence {
        let f1 = Frame::new(vec![[0.5, 1.0, -2.0], [3.25, 0.0, 1.0]], vec![1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
        let f2 = Frame::new(vec![[7.0, 8.0, 9.0]], vec![0.125, -1.0], 2, 2).unwrap();
        Sequence::new(vec![f1, f2]).unwrap()
    }

    #[test]
    fn sequence_round_trip() {
        let mut buf = Vec::new();
        write_sequence(&mut buf, &sample()).unwrap();
        // header 11 bytes, frame 1: 4 + 24 + 16, frame 2: 4 + 12 + 8
        assert_eq!(buf.len(), 11 + 44 + 24);
        assert_eq!(&buf[..4], b"PCSQ");
        assert_eq!(read_sequence(&mut buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn f32_boundary() {
        let f = Frame::from_coords(vec![[0.1, 1.0 / 3.0, 1e-3]], 1).unwrap();
        let seq = Sequence::new(vec![f]).unwrap();
        let mut buf = Vec::new();
        write_sequence(&mut buf, &seq).unwrap();
        let back = read_sequence(&mut buf.as_slice()).unwrap();
        let p = back.frame(0).coords()[0];
        assert_eq!(p[0], 0.1f32 as f64);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-7);
        let big = Frame::from_coords(vec![[1e300, 0.0, 0.0]], 1).unwrap();
        assert!(write_sequence(&mut Vec::new(), &Sequence::new(vec![big]).unwrap()).is_err());
    }

    #[test]
    fn corrupt_headers_rejected() {
        let mut buf = Vec::new();
        write_sequence(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_sequence(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_sequence(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 2;
        assert!(matches!(read_sequence(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_sequence(&mut &short[..]), Err(Error::Format(_))));
        assert!(matches!(read_flow(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn flow_round_trip() {
        let flow = FlowField::new(2, vec![[0.5, -0.25, 4.0], [0.0, 0.0, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_flow(&mut buf, &flow).unwrap();
        assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 3);
        assert_eq!(read_flow(&mut buf.as_slice()).unwrap(), flow);
        buf[4] = 0;
        buf[5] = 7;
        assert!(read_flow(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ckpt = Checkpoint {
            config: "name = \"x\"\n".into(),
            params: vec![
                ("a.weight".into(), Tensor::new(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap()),
                ("a.bias".into(), Tensor::zeros(1, 2)),
            ],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), ckpt);
        buf[1] = b'Z';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        let mut entries = write_split(
            dir.path(),
            "train",
            "train.pcsq",
            &[("a".into(), &s, Some(1)), ("b".into(), &s, None)],
        )
        .unwrap();
        entries[1].flow = Some("b.pcfl".into());
        write_manifest(File::create(dir.path().join(MANIFEST_FILE)).unwrap(), &entries).unwrap();
        save_flow(&dir.path().join("b.pcfl"), &FlowField::zeros(1, 1)).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.entries(), entries.as_slice());
        assert_eq!(ds.entries()[1].offset, 79);
        let loaded = ds.load_split("train").unwrap();
        assert_eq!(loaded[1], (s, None));
        assert!(ds.load_flow(&ds.entries()[1]).unwrap().is_some());
        assert_eq!(ds.split("val").count(), 0);
    }

    fn f32_vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-1e4f32..1e4).prop_map(f64::from), n)
    }

    proptest! {
        #[test]
        fn representable_sequences_round_trip(
            counts in prop::collection::vec(1usize..6, 1..4),
            c in 0usize..3,
            seed in f32_vals(64),
        ) {
            let mut it = seed.iter().cycle();
            let frames = counts.iter().enumerate().map(|(k, &n)| {
                let coords = (0..n).map(|_| [*it.next().unwrap(), *it.next().unwrap(), *it.next().unwrap()]).collect();
                let feats = (0..n * c).map(|_| *it.next().unwrap()).collect();
                Frame::new(coords, feats, c, k + 1).unwrap()
            }).collect();
            let seq = Sequence::new(frames).unwrap();
            let mut buf = Vec::new();
            write_sequence(&mut buf, &seq).unwrap();
            prop_assert_eq!(read_sequence(&mut buf.as_slice()).unwrap(), seq);
        }
    }
}
