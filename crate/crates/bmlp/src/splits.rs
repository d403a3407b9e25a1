//! On-disk split directory: `train.bin`, `valid.bin`, `test.bin`,
//! `intent.bin`, `vocab.bin` and `manifest.json`.
//!
//! Every `.bin` file starts with a 4-byte tag and a `u32` format version,
//! followed by little-endian fields. Events are `(item u32, behavior u32,
//! timestamp u64)`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bmlp_core::data::{DatasetSplit, EvalSample, Event, SplitStats, UserSequence};
use bmlp_core::encoding::Vocab;

use crate::binio::{DecodeError, Reader, Writer};

pub const SPLIT_VERSION: u32 = 1;

const VOCAB_TAG: &[u8; 4] = b"BMVC";
const TRAIN_TAG: &[u8; 4] = b"BMTR";
const SAMPLES_TAG: &[u8; 4] = b"BMEV";

const EVENT_BYTES: usize = 16;

fn header(w: &mut Writer, tag: &[u8; 4]) {
    w.bytes(tag);
    w.u32(SPLIT_VERSION);
}

fn check_header(r: &mut Reader, tag: &[u8; 4]) -> Result<()> {
    let got = r.take(4)?;
    if got != tag {
        bail!("expected tag {:?}, found {:?}", tag, got);
    }
    let v = r.u32()?;
    if v != SPLIT_VERSION {
        bail!("split format version {v} is not supported (expected {SPLIT_VERSION})");
    }
    Ok(())
}

fn put_event(w: &mut Writer, e: &Event) {
    w.u32(e.item);
    w.u32(e.behavior);
    w.u64(e.timestamp);
}

fn get_event(r: &mut Reader) -> Result<Event, DecodeError> {
    Ok(Event {
        item: r.u32()?,
        behavior: r.u32()?,
        timestamp: r.u64()?,
    })
}

fn put_events(w: &mut Writer, events: &[Event]) {
    w.u64(events.len() as u64);
    for e in events {
        put_event(w, e);
    }
}

fn get_events(r: &mut Reader) -> Result<Vec<Event>, DecodeError> {
    let n = r.count(EVENT_BYTES)?;
    (0..n).map(|_| get_event(r)).collect()
}

pub fn encode_vocab(v: &Vocab) -> Vec<u8> {
    let mut w = Writer::new();
    header(&mut w, VOCAB_TAG);
    w.str(v.target_behavior_name());
    for list in [v.items(), v.behaviors()] {
        w.u64(list.len() as u64);
        for s in list {
            w.str(s);
        }
    }
    w.into_inner()
}

pub fn decode_vocab(buf: &[u8]) -> Result<Vocab> {
    let mut r = Reader::new(buf);
    check_header(&mut r, VOCAB_TAG)?;
    let target = r.str()?.to_string();
    let mut lists = Vec::new();
    for _ in 0..2 {
        let n = r.count(8)?;
        lists.push((0..n).map(|_| r.str().map(str::to_string)).collect::<Result<Vec<_>, _>>()?);
    }
    r.finish()?;
    let behaviors = lists.pop().expect("two lists");
    let items = lists.pop().expect("two lists");
    Ok(Vocab::from_parts(items, behaviors, &target)?)
}

fn encode_train(split: &DatasetSplit) -> Vec<u8> {
    let mut w = Writer::new();
    header(&mut w, TRAIN_TAG);
    w.u64(split.users.len() as u64);
    for u in &split.users {
        w.str(u);
    }
    let s = &split.stats;
    for v in [
        s.users,
        s.train_events,
        s.validation,
        s.test,
        s.validation_cold_start,
        s.test_cold_start,
        s.skipped_users,
    ] {
        w.u64(v as u64);
    }
    w.u64(split.train.len() as u64);
    for seq in &split.train {
        w.u32(seq.user);
        put_events(&mut w, &seq.events);
    }
    w.into_inner()
}

fn decode_train(buf: &[u8]) -> Result<(Vec<String>, SplitStats, Vec<UserSequence>)> {
    let mut r = Reader::new(buf);
    check_header(&mut r, TRAIN_TAG)?;
    let n = r.count(8)?;
    let users = (0..n).map(|_| r.str().map(str::to_string)).collect::<Result<Vec<_>, _>>()?;
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = r.u64()? as usize;
    }
    let stats = SplitStats {
        users: f[0],
        train_events: f[1],
        validation: f[2],
        test: f[3],
        validation_cold_start: f[4],
        test_cold_start: f[5],
        skipped_users: f[6],
    };
    let n = r.count(12)?;
    let mut train = Vec::with_capacity(n);
    for _ in 0..n {
        let user = r.u32()?;
        if user as usize >= users.len() {
            bail!("train sequence names unknown user index {user}");
        }
        train.push(UserSequence {
            user,
            events: get_events(&mut r)?,
        });
    }
    r.finish()?;
    Ok((users, stats, train))
}

pub fn encode_samples(samples: &[EvalSample]) -> Vec<u8> {
    let mut w = Writer::new();
    header(&mut w, SAMPLES_TAG);
    w.u64(samples.len() as u64);
    for s in samples {
        w.u32(s.user);
        w.u64(s.position as u64);
        put_events(&mut w, &s.history);
        put_event(&mut w, &s.target);
    }
    w.into_inner()
}

pub fn decode_samples(buf: &[u8]) -> Result<Vec<EvalSample>> {
    let mut r = Reader::new(buf);
    check_header(&mut r, SAMPLES_TAG)?;
    let n = r.count(36)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let user = r.u32()?;
        let position = r.u64()? as usize;
        let history = get_events(&mut r)?;
        let target = get_event(&mut r)?;
        if history.len() != position {
            bail!("sample for user {user} has a history of {} events but position {position}", history.len());
        }
        out.push(EvalSample {
            user,
            position,
            history,
            target,
        });
    }
    r.finish()?;
    Ok(out)
}

/// Everything `preprocess` writes apart from the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDir {
    pub vocab: Vocab,
    pub split: DatasetSplit,
    pub intent: Vec<EvalSample>,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let p = dir.join(name);
    fs::read(&p).with_context(|| format!("reading {}", p.display()))
}

impl SplitDir {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(dir, "vocab.bin", &encode_vocab(&self.vocab))?;
        write(dir, "train.bin", &encode_train(&self.split))?;
        write(dir, "valid.bin", &encode_samples(&self.split.validation))?;
        write(dir, "test.bin", &encode_samples(&self.split.test))?;
        write(dir, "intent.bin", &encode_samples(&self.intent))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ctx = |name: &str| format!("decoding {}", dir.join(name).display());
        let vocab = decode_vocab(&read(dir, "vocab.bin")?).with_context(|| ctx("vocab.bin"))?;
        let (users, stats, train) = decode_train(&read(dir, "train.bin")?).with_context(|| ctx("train.bin"))?;
        let validation = decode_samples(&read(dir, "valid.bin")?).with_context(|| ctx("valid.bin"))?;
        let test = decode_samples(&read(dir, "test.bin")?).with_context(|| ctx("test.bin"))?;
        let intent = decode_samples(&read(dir, "intent.bin")?).with_context(|| ctx("intent.bin"))?;
        Ok(SplitDir {
            vocab,
            split: DatasetSplit {
                users,
                train,
                validation,
                test,
                stats,
            },
            intent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(item: u32, behavior: u32, timestamp: u64) -> Event {
        Event {
            item,
            behavior,
            timestamp,
        }
    }

    #[test]
    fn vocab_round_trip() {
        let v = Vocab::from_parts(vec!["a".into(), "b".into()], vec!["click".into(), "buy".into()], "buy").unwrap();
        assert_eq!(decode_vocab(&encode_vocab(&v)).unwrap(), v);
    }

    #[test]
    fn samples_round_trip_and_reject_garbage() {
        let s = vec![EvalSample {
            user: 3,
            position: 2,
            history: vec![ev(1, 1, 5), ev(2, 2, 6)],
            target: ev(1, 2, 9),
        }];
        let buf = encode_samples(&s);
        assert_eq!(decode_samples(&buf).unwrap(), s);
        assert!(decode_samples(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(decode_samples(&bad).unwrap_err().to_string().contains("version"));
    }
}
