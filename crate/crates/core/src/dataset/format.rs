//! Binary dataset container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "GQNDSET1"            8 bytes
//! n_scenes, K, H, W, C  5 × u32
//! per scene, K views of:
//!   x, y, z, yaw, pitch 5 × f32
//!   pixels              H·W·C × u8, row-major RGB
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Frame, PoseRaw, SceneRecord, View, CHANNELS};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GQNDSET1";
pub const HEADER_BYTES: usize = 28;
pub const POSE_BYTES: usize = 20;

/// Writes `records` and returns the CRC32 of everything after the header.
pub fn write_dataset(records: &[SceneRecord], path: &Path) -> Result<u32> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let k = first.len();
    let (h, w) = (first.views[0].frame.height(), first.views[0].frame.width());
    for (i, r) in records.iter().enumerate() {
        if r.len() != k {
            return Err(Error::Format(format!("scene {i} has {} views, expected {k}", r.len())));
        }
        if r.views.iter().any(|v| v.frame.height() != h || v.frame.width() != w) {
            return Err(Error::Format(format!("scene {i} frame size differs from {h}x{w}")));
        }
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_BYTES);
    header.extend_from_slice(MAGIC);
    for v in [records.len(), k, h, w, CHANNELS] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("header field {v} exceeds u32")))?;
        header.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&header).map_err(Error::io(path))?;
    let mut crc = crc32fast::Hasher::new();
    let mut buf = Vec::with_capacity(POSE_BYTES + h * w * CHANNELS);
    for r in records {
        for v in &r.views {
            buf.clear();
            for f in [v.pose.x, v.pose.y, v.pose.z, v.pose.yaw, v.pose.pitch] {
                buf.extend_from_slice(&f.to_le_bytes());
            }
            buf.extend_from_slice(&v.frame.to_bytes());
            crc.update(&buf);
            out.write_all(&buf).map_err(Error::io(path))?;
        }
    }
    out.flush().map_err(Error::io(path))?;
    Ok(crc.finalize())
}

pub fn read_dataset(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut input = BufReader::new(file);
    let mut header = [0u8; HEADER_BYTES];
    read_full(&mut input, &mut header, path).map_err(|e| match e {
        Truncated::Short => Error::Format("truncated header".into()),
        Truncated::Io(e) => e,
    })?;
    if &header[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, k, h, w, c) = (field(0), field(1), field(2), field(3), field(4));
    if c != CHANNELS {
        return Err(Error::Format(format!("unsupported channel count {c}")));
    }
    if n == 0 {
        return Err(Error::Format("dataset declares zero scenes".into()));
    }
    if k < 2 || h == 0 || w == 0 {
        return Err(Error::Format(format!("invalid header: K={k} H={h} W={w}")));
    }
    let mut records = Vec::with_capacity(n);
    let mut pose_buf = [0u8; POSE_BYTES];
    let mut pixels = vec![0u8; h * w * c];
    for scene in 0..n {
        let truncated = |e: Truncated| match e {
            Truncated::Short => Error::Format(format!("truncated in scene {scene}")),
            Truncated::Io(e) => e,
        };
        let mut views = Vec::with_capacity(k);
        for _ in 0..k {
            read_full(&mut input, &mut pose_buf, path).map_err(truncated)?;
            read_full(&mut input, &mut pixels, path).map_err(truncated)?;
            let f = |i: usize| f32::from_le_bytes(pose_buf[4 * i..4 * i + 4].try_into().unwrap());
            let pose = PoseRaw { x: f(0), y: f(1), z: f(2), yaw: f(3), pitch: f(4) };
            views.push(View { pose, frame: Frame::from_bytes(h, w, &pixels)? });
        }
        records.push(SceneRecord::new(views)?);
    }
    let mut extra = [0u8; 1];
    match input.read(&mut extra) {
        Ok(0) => Ok(records),
        Ok(_) => Err(Error::Format("trailing bytes after last scene".into())),
        Err(e) => Err(Error::Io { path: path.to_path_buf(), source: e }),
    }
}

enum Truncated {
    Short,
    Io(Error),
}

fn read_full(input: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<(), Truncated> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Truncated::Short
        } else {
            Truncated::Io(Error::Io { path: path.to_path_buf(), source: e })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, seed: u8) -> SceneRecord {
        let views = (0..k)
            .map(|i| View {
                pose: PoseRaw { x: i as f32 * 0.5, y: 1.0, z: -(i as f32), yaw: 0.25 * i as f32 - 1.0, pitch: -0.3 },
                frame: Frame::from_bytes(
                    64,
                    64,
                    &(0..64 * 64 * 3).map(|p| (p as u32 * 7 + seed as u32 * 13 + i as u32) as u8).collect::<Vec<_>>(),
                )
                .unwrap(),
            })
            .collect();
        SceneRecord::new(views).unwrap()
    }

    #[test]
    fn roundtrip_is_exact_and_sized_by_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let records = vec![record(5, 1)];
        write_dataset(&records, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, HEADER_BYTES + 5 * 12308);
        assert_eq!(read_dataset(&path).unwrap(), records);
    }

    #[test]
    fn checksum_covers_payload_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let crc = write_dataset(&[record(3, 2), record(3, 3)], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(crc, crc32fast::hash(&bytes[HEADER_BYTES..]));
    }

    #[test]
    fn empty_and_inconsistent_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        assert!(matches!(write_dataset(&[], &path), Err(Error::EmptyDataset)));
        assert_eq!(Error::EmptyDataset.to_string(), "empty dataset");
        assert!(matches!(write_dataset(&[record(3, 0), record(4, 0)], &path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&[record(2, 0), record(2, 1)], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(m)) if m.contains("magic")));

        // Cut inside the second scene.
        let cut = HEADER_BYTES + 2 * 12308 + 100;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match read_dataset(&path) {
            Err(Error::Format(m)) => assert!(m.contains("scene 1"), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
