//! Per-rank checkpoint image and the manifest that ties a set of them
//! together.
//!
//! Image layout, all integers little-endian:
//!
//! ```text
//! magic "MCKP" | version u32 | rank u32 | nranks u32 | sent u64 | recv u64
//! log_len u32 | log_len × entry | blob_len u64 | blob
//!
//! entry = vid u32 | recipe_tag u8 | recipe fields | recorded_size u32
//!         | recorded_rank u32 | freed u8
//!
//! recipe fields by tag:
//!   0 predefined       name_len u8 | name bytes
//!   1 comm dup         parent u32
//!   2 comm split       parent u32 | color i32 | key i32
//!   3 type contiguous  count u32 | base u32
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::recipe::{CreationLog, CreationRecipe, LogEntry, VirtualId};
use crate::abi::Predefined;
use crate::backends::{NativeHandle, INDEX_MARKER, REF_KEY_BASE};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"MCKP";
pub const IMAGE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

const TAG_PREDEFINED: u8 = 0;
const TAG_COMM_DUP: u8 = 1;
const TAG_COMM_SPLIT: u8 = 2;
const TAG_TYPE_CONTIGUOUS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub format_version: u32,
    pub rank: u32,
    pub nranks: u32,
    pub sent: u64,
    pub recv: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointImage {
    pub header: ImageHeader,
    pub log: CreationLog,
    pub app_state: Vec<u8>,
}

pub fn image_file_name(rank: u32) -> String {
    format!("rank{rank}.img")
}

impl CheckpointImage {
    pub fn serialize(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(64 + self.log.len() * 24 + self.app_state.len());
        w.extend_from_slice(&IMAGE_MAGIC);
        w.extend_from_slice(&self.header.format_version.to_le_bytes());
        w.extend_from_slice(&self.header.rank.to_le_bytes());
        w.extend_from_slice(&self.header.nranks.to_le_bytes());
        w.extend_from_slice(&self.header.sent.to_le_bytes());
        w.extend_from_slice(&self.header.recv.to_le_bytes());
        w.extend_from_slice(&(self.log.len() as u32).to_le_bytes());
        for e in self.log.entries() {
            w.extend_from_slice(&e.vid.raw().to_le_bytes());
            match e.recipe {
                CreationRecipe::Predefined(p) => {
                    let name = p.name().as_bytes();
                    w.push(TAG_PREDEFINED);
                    w.push(name.len() as u8);
                    w.extend_from_slice(name);
                }
                CreationRecipe::CommDup { parent } => {
                    w.push(TAG_COMM_DUP);
                    w.extend_from_slice(&parent.raw().to_le_bytes());
                }
                CreationRecipe::CommSplit { parent, color, key } => {
                    w.push(TAG_COMM_SPLIT);
                    w.extend_from_slice(&parent.raw().to_le_bytes());
                    w.extend_from_slice(&color.to_le_bytes());
                    w.extend_from_slice(&key.to_le_bytes());
                }
                CreationRecipe::TypeContiguous { count, base } => {
                    w.push(TAG_TYPE_CONTIGUOUS);
                    w.extend_from_slice(&count.to_le_bytes());
                    w.extend_from_slice(&base.raw().to_le_bytes());
                }
            }
            w.extend_from_slice(&e.recorded_size.to_le_bytes());
            w.extend_from_slice(&e.recorded_rank.to_le_bytes());
            w.push(e.freed as u8);
        }
        w.extend_from_slice(&(self.app_state.len() as u64).to_le_bytes());
        w.extend_from_slice(&self.app_state);
        w
    }

    pub fn deserialize(bytes: &[u8]) -> Result<CheckpointImage> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != IMAGE_MAGIC {
            return Err(Error::BackendFailure("not a checkpoint image (bad magic)".into()));
        }
        let format_version = r.u32()?;
        if format_version != IMAGE_VERSION {
            return Err(Error::BackendFailure(format!(
                "unsupported image version {format_version}, expected {IMAGE_VERSION}"
            )));
        }
        let header = ImageHeader {
            format_version,
            rank: r.u32()?,
            nranks: r.u32()?,
            sent: r.u64()?,
            recv: r.u64()?,
        };
        let log_len = r.u32()? as usize;
        let mut entries = Vec::with_capacity(log_len.min(4096));
        for _ in 0..log_len {
            let vid = VirtualId::from_raw(r.u32()?);
            let recipe = match r.u8()? {
                TAG_PREDEFINED => {
                    let n = r.u8()? as usize;
                    let name = std::str::from_utf8(r.take(n)?)
                        .map_err(|_| Error::BackendFailure("predefined name is not UTF-8".into()))?;
                    let p = Predefined::from_name(name).ok_or_else(|| {
                        Error::BackendFailure(format!("unknown predefined constant {name:?}"))
                    })?;
                    CreationRecipe::Predefined(p)
                }
                TAG_COMM_DUP => CreationRecipe::CommDup { parent: VirtualId::from_raw(r.u32()?) },
                TAG_COMM_SPLIT => CreationRecipe::CommSplit {
                    parent: VirtualId::from_raw(r.u32()?),
                    color: r.i32()?,
                    key: r.i32()?,
                },
                TAG_TYPE_CONTIGUOUS => CreationRecipe::TypeContiguous {
                    count: r.u32()?,
                    base: VirtualId::from_raw(r.u32()?),
                },
                tag => return Err(Error::BackendFailure(format!("unknown recipe tag {tag}"))),
            };
            let recorded_size = r.u32()?;
            let recorded_rank = r.u32()?;
            let freed = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::BackendFailure(format!("bad freed flag {b}"))),
            };
            entries.push(LogEntry { vid, recipe, recorded_size, recorded_rank, freed });
        }
        let blob_len = r.u64()?;
        let app_state = r.take(usize::try_from(blob_len).map_err(|_| truncated())?)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::BackendFailure(format!(
                "{} trailing bytes after image",
                bytes.len() - r.pos
            )));
        }
        let log = CreationLog::from_entries(entries)
            .map_err(|e| Error::BackendFailure(format!("corrupt creation log: {e}")))?;
        Ok(CheckpointImage { header, log, app_state })
    }

    /// Number of leading bytes holding header and log, i.e. everything but
    /// the application blob.
    pub fn metadata_len(&self) -> usize {
        self.serialize().len() - self.app_state.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<CheckpointImage> {
        let bytes = fs::read(path)
            .map_err(|e| Error::BackendFailure(format!("cannot read {}: {e}", path.display())))?;
        CheckpointImage::deserialize(&bytes)
    }
}

fn truncated() -> Error {
    Error::BackendFailure("checkpoint image is truncated".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
}

/// `manifest.txt`: `nranks N` followed by one `rank I <file>` line per rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub nranks: u32,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn for_ranks(nranks: u32) -> Manifest {
        Manifest { nranks, files: (0..nranks).map(image_file_name).collect() }
    }

    pub fn render(&self) -> String {
        let mut out = format!("nranks {}\n", self.nranks);
        for (i, f) in self.files.iter().enumerate() {
            out.push_str(&format!("rank {i} {f}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let bad = |line: &str| Error::BackendFailure(format!("malformed manifest line {line:?}"));
        let mut nranks = None;
        let mut files: Vec<Option<String>> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["nranks", n] => {
                    let n: u32 = n.parse().map_err(|_| bad(line))?;
                    nranks = Some(n);
                    files = vec![None; n as usize];
                }
                ["rank", i, file] => {
                    let i: usize = i.parse().map_err(|_| bad(line))?;
                    let slot = files.get_mut(i).ok_or_else(|| bad(line))?;
                    *slot = Some((*file).to_string());
                }
                _ => return Err(bad(line)),
            }
        }
        let nranks = nranks.ok_or_else(|| Error::BackendFailure("manifest lacks nranks".into()))?;
        let files = files
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.ok_or_else(|| Error::BackendFailure(format!("manifest lacks rank {i}"))))
            .collect::<Result<_>>()?;
        Ok(Manifest { nranks, files })
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::BackendFailure(format!("cannot read {}: {e}", path.display())))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.render())?;
        Ok(())
    }

    pub fn image_path(&self, dir: &Path, rank: u32) -> Result<PathBuf> {
        self.files
            .get(rank as usize)
            .map(|f| dir.join(f))
            .ok_or_else(|| Error::BackendFailure(format!("manifest has no image for rank {rank}")))
    }
}

/// A native-handle value found inside a serialized image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    /// Header or log field name, or `byte <offset>` for raw byte matches.
    pub location: String,
    pub value: u64,
    pub reason: &'static str,
}

fn looks_native(v: u64) -> Option<&'static str> {
    if v >> 32 == 0 && (v >> 24) as u64 == INDEX_MARKER {
        Some("index-backend handle pattern")
    } else if (REF_KEY_BASE..REF_KEY_BASE + (1 << 40)).contains(&v) {
        Some("ref-backend key range")
    } else {
        None
    }
}

/// Scans a serialized image for values from the backends' native handle
/// spaces.
///
/// Every numeric field of the header and creation log is decoded and tested
/// against both backends' handle patterns; a byte-window scan would trip
/// over ASCII in predefined names. Then every byte offset of the whole
/// image, application blob included, is checked for the values in `issued`
/// (32-bit little-endian for handles that fit, 64-bit otherwise).
pub fn scan_for_native_values(bytes: &[u8], issued: &[NativeHandle]) -> Result<Vec<Leak>> {
    let image = CheckpointImage::deserialize(bytes)?;
    let h = &image.header;
    let mut fields: Vec<(String, u64)> = vec![
        ("header.rank".into(), h.rank as u64),
        ("header.nranks".into(), h.nranks as u64),
        ("header.sent".into(), h.sent),
        ("header.recv".into(), h.recv),
    ];
    for (i, e) in image.log.entries().iter().enumerate() {
        fields.push((format!("log[{i}].vid"), e.vid.raw() as u64));
        fields.push((format!("log[{i}].recorded_size"), e.recorded_size as u64));
        fields.push((format!("log[{i}].recorded_rank"), e.recorded_rank as u64));
        match e.recipe {
            CreationRecipe::Predefined(_) => {}
            CreationRecipe::CommDup { parent } => {
                fields.push((format!("log[{i}].parent"), parent.raw() as u64));
            }
            CreationRecipe::CommSplit { parent, color, key } => {
                fields.push((format!("log[{i}].parent"), parent.raw() as u64));
                fields.push((format!("log[{i}].color"), color as u32 as u64));
                fields.push((format!("log[{i}].key"), key as u32 as u64));
            }
            CreationRecipe::TypeContiguous { count, base } => {
                fields.push((format!("log[{i}].count"), count as u64));
                fields.push((format!("log[{i}].base"), base.raw() as u64));
            }
        }
    }
    let mut leaks: Vec<Leak> = fields
        .into_iter()
        .filter_map(|(location, value)| looks_native(value).map(|reason| Leak { location, value, reason }))
        .collect();

    let narrow: HashSet<u32> = issued.iter().filter(|h| h.0 >> 32 == 0).map(|h| h.0 as u32).collect();
    let wide: HashSet<u64> = issued.iter().filter(|h| h.0 >> 32 != 0).map(|h| h.0).collect();
    for (off, w) in bytes.windows(4).enumerate() {
        let v = u32::from_le_bytes(w.try_into().unwrap());
        if narrow.contains(&v) {
            leaks.push(Leak { location: format!("byte {off}"), value: v as u64, reason: "issued native handle" });
        }
    }
    for (off, w) in bytes.windows(8).enumerate() {
        let v = u64::from_le_bytes(w.try_into().unwrap());
        if wide.contains(&v) {
            leaks.push(Leak { location: format!("byte {off}"), value: v, reason: "issued native handle" });
        }
    }
    Ok(leaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abi::HandleKind;

    fn sample() -> CheckpointImage {
        let world = VirtualId::predefined(Predefined::CommWorld);
        let f64t = VirtualId::predefined(Predefined::F64);
        let split = VirtualId::new(HandleKind::Comm, 4096).unwrap();
        let dt = VirtualId::new(HandleKind::Datatype, 4096).unwrap();
        let log = CreationLog::from_entries(vec![
            LogEntry {
                vid: world,
                recipe: CreationRecipe::Predefined(Predefined::CommWorld),
                recorded_size: 4,
                recorded_rank: 2,
                freed: false,
            },
            LogEntry {
                vid: f64t,
                recipe: CreationRecipe::Predefined(Predefined::F64),
                recorded_size: 0,
                recorded_rank: 0,
                freed: false,
            },
            LogEntry {
                vid: split,
                recipe: CreationRecipe::CommSplit { parent: world, color: 0, key: -2 },
                recorded_size: 2,
                recorded_rank: 1,
                freed: true,
            },
            LogEntry {
                vid: dt,
                recipe: CreationRecipe::TypeContiguous { count: 3, base: f64t },
                recorded_size: 0,
                recorded_rank: 0,
                freed: false,
            },
        ])
        .unwrap();
        CheckpointImage {
            header: ImageHeader { format_version: 1, rank: 2, nranks: 4, sent: 7, recv: 9 },
            log,
            app_state: b"state".to_vec(),
        }
    }

    #[test]
    fn round_trip_and_magic() {
        let img = sample();
        let bytes = img.serialize();
        assert_eq!(&bytes[..4], &[0x4D, 0x43, 0x4B, 0x50]);
        assert_eq!(CheckpointImage::deserialize(&bytes).unwrap(), img);
        assert_eq!(img.metadata_len(), bytes.len() - 5);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().serialize();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CheckpointImage::deserialize(&bad), Err(Error::BackendFailure(_))));
        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(CheckpointImage::deserialize(&bad), Err(Error::BackendFailure(_))));
        for cut in [3, 10, 40, bytes.len() - 1] {
            assert!(CheckpointImage::deserialize(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(CheckpointImage::deserialize(&long).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest::for_ranks(3);
        assert_eq!(m.render(), "nranks 3\nrank 0 rank0.img\nrank 1 rank1.img\nrank 2 rank2.img\n");
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
        assert!(Manifest::parse("nranks 2\nrank 0 a.img\n").is_err());
        assert!(Manifest::parse("rank 0 a.img\n").is_err());
        assert!(Manifest::parse("nranks 1\nrank 5 a.img\n").is_err());
    }

    #[test]
    fn scan_flags_native_values() {
        let img = sample();
        let clean = img.serialize();
        assert!(scan_for_native_values(&clean, &[]).unwrap().is_empty());

        let mut dirty = img.clone();
        dirty.app_state = 0x4420_0003u32.to_le_bytes().to_vec();
        let bytes = dirty.serialize();
        let issued = [NativeHandle(0x4420_0003)];
        assert_eq!(scan_for_native_values(&bytes, &issued).unwrap().len(), 1);

        let mut dirty = img;
        dirty.header.sent = REF_KEY_BASE + 0x40;
        let bytes = dirty.serialize();
        let leaks = scan_for_native_values(&bytes, &[]).unwrap();
        assert!(leaks.iter().any(|l| l.value == REF_KEY_BASE + 0x40 && l.location == "header.sent"));
    }
}
