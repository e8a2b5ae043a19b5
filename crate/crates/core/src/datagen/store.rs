//! Dataset construction and the on-disk format.
//!
//! A dataset directory holds, per split, `<split>.programs.txt` (one program
//! per line) and `<split>.rollouts.bin`, plus `manifest.json`.
//!
//! Rollout file layout (little endian):
//!
//! ```text
//! magic "KRLR" | u32 version | u32 record count
//! record: u32 byte length | u32 rollout count | rollout*
//! rollout: u16 h | u16 w | h*w wall bytes | h*w marker bytes
//!          | u16 row | u16 col | u8 dir | u32 n | n action bytes | n perception bytes
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use super::{collect_rollouts, sample_program, Demo, GenConfig};
use crate::dsl::{parse_text, Program, Token};
use crate::error::DataError;
use crate::rng::{derive_seed, seeded};
use crate::world::{Action, Direction, GridState, Perception};

pub const ROLLOUT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KRLR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub program: Program,
    pub rollouts: Vec<Demo>,
}

impl DatasetRecord {
    pub fn tokens(&self) -> Vec<Token> {
        self.program.to_tokens()
    }
}

/// Stable id: leading 16 hex digits of the SHA-256 of the program text.
pub fn program_id(program: &Program) -> String {
    let digest = Sha256::digest(program.to_text().as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub cfg: GenConfig,
    pub counts: BTreeMap<String, usize>,
    /// SHA-256 of every data file, keyed by file name.
    pub hashes: BTreeMap<String, String>,
    pub candidates_drawn: usize,
    pub duplicates_discarded: usize,
    pub coverage_rejections: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

#[derive(Default)]
struct Stats {
    drawn: usize,
    duplicates: usize,
    rejected: usize,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[DatasetRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes all split files and the manifest into `dir`.
    pub fn save(&self, dir: &Path, manifest: &mut Manifest) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        manifest.hashes.clear();
        manifest.counts.clear();
        for s in Split::ALL {
            let recs = self.split(s);
            let prog_name = format!("{}.programs.txt", s.name());
            let roll_name = format!("{}.rollouts.bin", s.name());
            let mut text = Vec::new();
            write_programs(&mut text, recs)?;
            let mut bin = Vec::new();
            write_rollouts(&mut bin, recs)?;
            fs::write(dir.join(&prog_name), &text)?;
            fs::write(dir.join(&roll_name), &bin)?;
            manifest.hashes.insert(prog_name, hex::encode(Sha256::digest(&text)));
            manifest.hashes.insert(roll_name, hex::encode(Sha256::digest(&bin)));
            manifest.counts.insert(s.name().to_string(), recs.len());
        }
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Dataset, Manifest), DataError> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let mut ds = Dataset::default();
        for s in Split::ALL {
            let programs = read_programs(&fs::read_to_string(dir.join(format!("{}.programs.txt", s.name())))?)?;
            let rollouts = read_rollouts(&fs::read(dir.join(format!("{}.rollouts.bin", s.name())))?)?;
            if programs.len() != rollouts.len() {
                return Err(DataError::Format(format!(
                    "{} split has {} programs but {} rollout records",
                    s.name(),
                    programs.len(),
                    rollouts.len()
                )));
            }
            let recs = programs
                .into_iter()
                .zip(rollouts)
                .map(|(program, rollouts)| DatasetRecord {
                    id: program_id(&program),
                    program,
                    rollouts,
                })
                .collect();
            match s {
                Split::Train => ds.train = recs,
                Split::Val => ds.val = recs,
                Split::Test => ds.test = recs,
            }
        }
        Ok((ds, manifest))
    }
}

/// Samples unique programs with covering rollouts until the configured
/// split sizes are filled. Candidate `i` draws from its own stream derived
/// from `seed`, and candidates are merged in index order, so the result
/// does not depend on the thread count.
pub fn build_dataset(cfg: &GenConfig, seed: u64) -> Result<(Dataset, Manifest), DataError> {
    cfg.validate()?;
    let total = cfg.splits.total();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(total);
    let mut stats = Stats::default();
    let chunk = 256;
    let mut next = 0u64;
    while records.len() < total {
        let batch: Vec<Result<Option<DatasetRecord>, DataError>> = (next..next + chunk)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeded(derive_seed(seed, i));
                let program = sample_program(cfg, &mut rng)?;
                Ok(collect_rollouts(&program, cfg, &mut rng).map(|rs| DatasetRecord {
                    id: program_id(&program),
                    rollouts: rs.into_iter().map(Demo::from).collect(),
                    program,
                }))
            })
            .collect();
        next += chunk;
        for cand in batch {
            if records.len() == total {
                break;
            }
            stats.drawn += 1;
            match cand? {
                None => stats.rejected += 1,
                Some(rec) => {
                    if seen.insert(rec.program.to_tokens()) {
                        records.push(rec);
                    } else {
                        stats.duplicates += 1;
                    }
                }
            }
        }
    }
    let test = records.split_off(cfg.splits.train + cfg.splits.val);
    let val = records.split_off(cfg.splits.train);
    let ds = Dataset {
        train: records,
        val,
        test,
    };
    let counts = Split::ALL
        .iter()
        .map(|s| (s.name().to_string(), ds.split(*s).len()))
        .collect();
    let manifest = Manifest {
        format_version: ROLLOUT_FORMAT_VERSION,
        seed,
        cfg: cfg.clone(),
        counts,
        hashes: BTreeMap::new(),
        candidates_drawn: stats.drawn,
        duplicates_discarded: stats.duplicates,
        coverage_rejections: stats.rejected,
    };
    Ok((ds, manifest))
}

pub fn write_programs(out: &mut Vec<u8>, records: &[DatasetRecord]) -> Result<(), DataError> {
    for r in records {
        out.extend_from_slice(r.program.to_text().as_bytes());
        out.push(b'\n');
    }
    Ok(())
}

pub fn read_programs(text: &str) -> Result<Vec<Program>, DataError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_text(l).map_err(DataError::from))
        .collect()
}

fn put_u16(out: &mut Vec<u8>, v: usize) -> Result<(), DataError> {
    let v = u16::try_from(v).map_err(|_| DataError::Format(format!("value {v} exceeds u16")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), DataError> {
    let v = u32::try_from(v).map_err(|_| DataError::Format(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode_demo(out: &mut Vec<u8>, d: &Demo) -> Result<(), DataError> {
    let g = &d.initial;
    put_u16(out, g.height())?;
    put_u16(out, g.width())?;
    out.extend(g.walls().iter().map(|&b| b as u8));
    out.extend_from_slice(g.markers());
    let (r, c) = g.agent_pos();
    put_u16(out, r)?;
    put_u16(out, c)?;
    out.push(g.agent_dir().index());
    if d.actions.len() != d.perceptions.len() {
        return Err(DataError::Format("actions and perceptions differ in length".into()));
    }
    put_u32(out, d.actions.len())?;
    out.extend(d.actions.iter().map(|a| a.index() as u8));
    out.extend(d.perceptions.iter().map(|p| p.to_bits()));
    Ok(())
}

pub fn write_rollouts(out: &mut Vec<u8>, records: &[DatasetRecord]) -> Result<(), DataError> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ROLLOUT_FORMAT_VERSION.to_le_bytes());
    put_u32(out, records.len())?;
    let mut body = Vec::new();
    for rec in records {
        body.clear();
        put_u32(&mut body, rec.rollouts.len())?;
        for d in &rec.rollouts {
            encode_demo(&mut body, d)?;
        }
        put_u32(out, body.len())?;
        out.extend_from_slice(&body);
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DataError::Format(format!("truncated rollout file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<usize, DataError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32(&mut self) -> Result<usize, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn demo(&mut self) -> Result<Demo, DataError> {
        let h = self.u16()?;
        let w = self.u16()?;
        let walls = self.take(h * w)?.iter().map(|&b| b != 0).collect();
        let markers = self.take(h * w)?.to_vec();
        let r = self.u16()?;
        let c = self.u16()?;
        let dir = self.take(1)?[0];
        let dir = Direction::from_index(dir).ok_or_else(|| DataError::Format(format!("bad direction {dir}")))?;
        let initial = GridState::from_parts(h, w, walls, markers, (r, c), dir)?;
        let n = self.u32()?;
        let actions = self
            .take(n)?
            .iter()
            .map(|&a| Action::from_index(a as usize).ok_or_else(|| DataError::Format(format!("bad action {a}"))))
            .collect::<Result<_, _>>()?;
        let perceptions = self.take(n)?.iter().map(|&p| Perception::from_bits(p)).collect();
        Ok(Demo {
            initial,
            actions,
            perceptions,
        })
    }
}

pub fn read_rollouts(buf: &[u8]) -> Result<Vec<Vec<Demo>>, DataError> {
    let mut rd = Reader { buf, pos: 0 };
    if rd.take(4)? != MAGIC {
        return Err(DataError::Format("not a rollout file".into()));
    }
    let version = rd.u32()? as u32;
    if version != ROLLOUT_FORMAT_VERSION {
        return Err(DataError::Format(format!("unsupported rollout format version {version}")));
    }
    let count = rd.u32()?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = rd.u32()?;
        let mut rec = Reader {
            buf: rd.take(len)?,
            pos: 0,
        };
        let n = rec.u32()?;
        let demos = (0..n).map(|_| rec.demo()).collect::<Result<Vec<_>, _>>()?;
        if rec.pos != len {
            return Err(DataError::Format("trailing bytes in rollout record".into()));
        }
        out.push(demos);
    }
    if rd.pos != buf.len() {
        return Err(DataError::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SplitSizes;

    fn small_cfg() -> GenConfig {
        GenConfig {
            splits: SplitSizes {
                train: 40,
                val: 5,
                test: 5,
            },
            ..GenConfig::default()
        }
    }

    #[test]
    fn splits_sum_to_total_and_programs_are_unique() {
        let (ds, m) = build_dataset(&small_cfg(), 11).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (40, 5, 5));
        let all: HashSet<_> = Split::ALL
            .iter()
            .flat_map(|s| ds.split(*s).iter().map(|r| r.program.to_tokens()))
            .collect();
        assert_eq!(all.len(), 50);
        assert_eq!(m.candidates_drawn, 50 + m.duplicates_discarded + m.coverage_rejections);
    }

    #[test]
    fn round_trip_through_disk() {
        let (ds, mut m) = build_dataset(&small_cfg(), 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), &mut m).unwrap();
        let (back, m2) = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m2, m);
    }

    #[test]
    fn same_seed_same_manifest_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let (ds, mut m) = build_dataset(&small_cfg(), 13).unwrap();
            ds.save(d.path(), &mut m).unwrap();
        }
        let ma = fs::read(a.path().join("manifest.json")).unwrap();
        let mb = fs::read(b.path().join("manifest.json")).unwrap();
        assert_eq!(Sha256::digest(&ma), Sha256::digest(&mb));
    }

    #[test]
    fn corrupted_rollout_file_is_rejected() {
        let (ds, _) = build_dataset(&small_cfg(), 14).unwrap();
        let mut bin = Vec::new();
        write_rollouts(&mut bin, &ds.train).unwrap();
        assert!(read_rollouts(&bin[..bin.len() - 1]).is_err());
        bin[4] = 9;
        assert!(read_rollouts(&bin).is_err());
    }
}
