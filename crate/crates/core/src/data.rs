//! Preprocessing of raw interaction logs: deduplication, threshold
//! filtering, the leave-last-two-purchases split, training-instance
//! generation and the leakage audit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoding::{extract_aux, HeteroSequence, Vocab};
use crate::error::{Error, Result};
use crate::model::{InstanceId, TrainingInstance};

/// One raw log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub behavior: String,
    pub timestamp: u64,
}

/// Keeps the earliest record of every `(user, item, behavior)` triple.
/// Ties keep the first in input order; survivors stay in input order.
pub fn dedup_earliest(records: &[InteractionRecord]) -> Vec<InteractionRecord> {
    let mut best: BTreeMap<(&str, &str, &str), usize> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        let key = (r.user.as_str(), r.item.as_str(), r.behavior.as_str());
        match best.get(&key) {
            Some(&prev) if records[prev].timestamp <= r.timestamp => {}
            _ => {
                best.insert(key, k);
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|k| records[k].clone()).collect()
}

/// Rewrites rating logs: a rating equal to `purchase_rating` becomes
/// `purchase`, any other rating becomes `auxiliary`. The rating is read from
/// the behavior field.
pub fn ratings_to_behaviors(
    records: &[InteractionRecord],
    purchase_rating: u32,
    purchase: &str,
    auxiliary: &str,
) -> Result<Vec<InteractionRecord>> {
    records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let rating: u32 = r.behavior.trim().parse().map_err(|_| Error::CorruptData {
                position: k,
                reason: format!("rating `{}` is not an integer", r.behavior),
            })?;
            let behavior = if rating == purchase_rating { purchase } else { auxiliary };
            Ok(InteractionRecord {
                behavior: behavior.to_string(),
                ..r.clone()
            })
        })
        .collect()
}

/// Drops every record with `start <= timestamp < end`.
pub fn exclude_time_range(records: &[InteractionRecord], start: u64, end: u64) -> Vec<InteractionRecord> {
    records
        .iter()
        .filter(|r| r.timestamp < start || r.timestamp >= end)
        .cloned()
        .collect()
}

/// Counts reported by [`iterative_filter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Passes that removed at least one record.
    pub rounds: usize,
    pub records_in: usize,
    pub records_out: usize,
    pub users_out: usize,
    pub items_out: usize,
}

fn purchase_counts<'a>(
    records: &'a [InteractionRecord],
    target: &str,
    key: impl Fn(&'a InteractionRecord) -> &'a str,
) -> BTreeMap<&'a str, usize> {
    let mut counts = BTreeMap::new();
    for r in records.iter().filter(|r| r.behavior == target) {
        *counts.entry(key(r)).or_insert(0) += 1;
    }
    counts
}

/// Alternately removes items purchased fewer than `min_item_purchases` times
/// and users with fewer than `min_user_purchases` purchases until nothing
/// changes. Records of removed entities go regardless of behavior.
pub fn iterative_filter(
    records: &[InteractionRecord],
    min_item_purchases: usize,
    min_user_purchases: usize,
    target_behavior: &str,
) -> Result<(Vec<InteractionRecord>, FilterStats)> {
    if min_item_purchases == 0 || min_user_purchases == 0 {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }
    let mut recs = records.to_vec();
    let mut rounds = 0;
    loop {
        let before = recs.len();
        let items = purchase_counts(&recs, target_behavior, |r| r.item.as_str());
        let keep: Vec<bool> = recs
            .iter()
            .map(|r| items.get(r.item.as_str()).copied().unwrap_or(0) >= min_item_purchases)
            .collect();
        let mut it = keep.into_iter();
        recs.retain(|_| it.next().unwrap_or(false));

        let users = purchase_counts(&recs, target_behavior, |r| r.user.as_str());
        let keep: Vec<bool> = recs
            .iter()
            .map(|r| users.get(r.user.as_str()).copied().unwrap_or(0) >= min_user_purchases)
            .collect();
        let mut it = keep.into_iter();
        recs.retain(|_| it.next().unwrap_or(false));

        if recs.len() == before {
            break;
        }
        rounds += 1;
    }
    if recs.is_empty() {
        return Err(Error::EmptyDataset { stage: "filter" });
    }
    let users: BTreeSet<&str> = recs.iter().map(|r| r.user.as_str()).collect();
    let items: BTreeSet<&str> = recs.iter().map(|r| r.item.as_str()).collect();
    let stats = FilterStats {
        rounds,
        records_in: records.len(),
        records_out: recs.len(),
        users_out: users.len(),
        items_out: items.len(),
    };
    Ok((recs, stats))
}

/// An encoded event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: u32,
    pub behavior: u32,
    pub timestamp: u64,
}

/// Time-ordered events of one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: u32,
    pub events: Vec<Event>,
}

/// A held-out target with everything the user did before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub user: u32,
    /// Offset of the target in the user's full sequence.
    pub position: usize,
    pub history: Vec<Event>,
    pub target: Event,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub users: usize,
    pub train_events: usize,
    pub validation: usize,
    pub test: usize,
    pub validation_cold_start: usize,
    pub test_cold_start: usize,
    /// Users with fewer than two purchases, left out entirely.
    pub skipped_users: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    /// Raw user ids; `UserSequence::user` indexes this list.
    pub users: Vec<String>,
    pub train: Vec<UserSequence>,
    pub validation: Vec<EvalSample>,
    pub test: Vec<EvalSample>,
    pub stats: SplitStats,
}

/// Encodes and groups records per user (users sorted by raw id), each
/// sequence stable-sorted by time so equal timestamps keep input order.
pub fn group_users(records: &[InteractionRecord], vocab: &Vocab) -> Result<(Vec<String>, Vec<UserSequence>)> {
    let mut per: BTreeMap<&str, Vec<Event>> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        let item = vocab.item_id(&r.item).ok_or_else(|| Error::CorruptData {
            position: k,
            reason: format!("item `{}` missing from vocabulary", r.item),
        })?;
        let behavior = vocab
            .behavior_id(&r.behavior)
            .ok_or_else(|| Error::UnknownBehavior(r.behavior.clone()))?;
        per.entry(r.user.as_str()).or_default().push(Event {
            item,
            behavior,
            timestamp: r.timestamp,
        });
    }
    let mut names = Vec::with_capacity(per.len());
    let mut seqs = Vec::with_capacity(per.len());
    for (u, (name, mut events)) in per.into_iter().enumerate() {
        events.sort_by_key(|e| e.timestamp);
        names.push(name.to_string());
        seqs.push(UserSequence {
            user: u as u32,
            events,
        });
    }
    Ok((names, seqs))
}

fn purchase_positions(events: &[Event], target: u32) -> Vec<usize> {
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.behavior == target)
        .map(|(k, _)| k)
        .collect()
}

fn sample(user: u32, events: &[Event], position: usize) -> EvalSample {
    EvalSample {
        user,
        position,
        history: events[..position].to_vec(),
        target: events[position],
    }
}

/// Leave-last-two-purchases split. The last purchase is the test target and
/// the one before it the validation target; each history is every earlier
/// event. Training data is everything before the validation target. Samples
/// whose target item never occurs in training are dropped.
pub fn split(records: &[InteractionRecord], vocab: &Vocab) -> Result<DatasetSplit> {
    let (users, seqs) = group_users(records, vocab)?;
    let target = vocab.target_behavior();
    let mut stats = SplitStats::default();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for s in &seqs {
        let buys = purchase_positions(&s.events, target);
        if buys.len() < 2 {
            stats.skipped_users += 1;
            continue;
        }
        let (v, t) = (buys[buys.len() - 2], buys[buys.len() - 1]);
        train.push(UserSequence {
            user: s.user,
            events: s.events[..v].to_vec(),
        });
        validation.push(sample(s.user, &s.events, v));
        test.push(sample(s.user, &s.events, t));
    }
    let known: BTreeSet<u32> = train.iter().flat_map(|s| s.events.iter().map(|e| e.item)).collect();
    let (nv, nt) = (validation.len(), test.len());
    validation.retain(|s| known.contains(&s.target.item));
    test.retain(|s| known.contains(&s.target.item));
    stats.users = train.len();
    stats.train_events = train.iter().map(|s| s.events.len()).sum();
    stats.validation = validation.len();
    stats.test = test.len();
    stats.validation_cold_start = nv - validation.len();
    stats.test_cold_start = nt - test.len();
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    Ok(DatasetSplit {
        users,
        train,
        validation,
        test,
        stats,
    })
}

/// Window lengths used to cut instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceOptions {
    pub len: usize,
    pub aux_len: usize,
    /// Emit an instance for every next event, not only purchases.
    pub all_targets: bool,
}

/// Builds the model input predicting `events[position]` from the events
/// before it.
pub fn make_instance(
    user: u32,
    events: &[Event],
    position: usize,
    vocab: &Vocab,
    len: usize,
    aux_len: usize,
) -> TrainingInstance {
    let prefix: Vec<(u32, u32)> = events[..position].iter().map(|e| (e.item, e.behavior)).collect();
    let target_item = events[position].item;
    TrainingInstance {
        hetero: HeteroSequence::from_history(&prefix, len, target_item, user),
        aux: extract_aux(&prefix, aux_len, vocab),
        target_item,
        id: InstanceId { user, position },
    }
}

/// Model input for a held-out sample.
pub fn sample_instance(s: &EvalSample, vocab: &Vocab, len: usize, aux_len: usize) -> TrainingInstance {
    let mut events = s.history.clone();
    events.push(s.target);
    make_instance(s.user, &events, s.position, vocab, len, aux_len)
}

/// Sliding-window instances: one per purchase in each training sequence
/// that has at least one earlier event.
pub fn gen_instances(train: &[UserSequence], vocab: &Vocab, opts: InstanceOptions) -> Vec<TrainingInstance> {
    let target = vocab.target_behavior();
    let mut out = Vec::new();
    for s in train {
        for (k, e) in s.events.iter().enumerate().skip(1) {
            if opts.all_targets || e.behavior == target {
                out.push(make_instance(s.user, &s.events, k, vocab, opts.len, opts.aux_len));
            }
        }
    }
    out
}

/// Alternative test set: per user, the latest auxiliary event strictly
/// between the last two purchases, with every earlier event as history.
pub fn intent_testset(seqs: &[UserSequence], vocab: &Vocab) -> Result<Vec<EvalSample>> {
    let target = vocab.target_behavior();
    let mut out = Vec::new();
    for s in seqs {
        let buys = purchase_positions(&s.events, target);
        if buys.len() < 2 {
            continue;
        }
        let (a, b) = (buys[buys.len() - 2], buys[buys.len() - 1]);
        if let Some(p) = (a + 1..b).rev().find(|&k| s.events[k].behavior != target) {
            out.push(sample(s.user, &s.events, p));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySplit("intent"));
    }
    Ok(out)
}

/// Outcome of [`audit_leakage`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub instances_checked: usize,
    pub samples_checked: usize,
    pub violations: Vec<String>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Pairs each source offset with the item in the real (suffix) part of a
/// left-padded window.
fn suffix_sources<'a>(items: &'a [u32], source: &'a [usize]) -> impl Iterator<Item = (usize, u32)> + 'a {
    let pad = items.len().saturating_sub(source.len());
    source.iter().zip(&items[pad..]).map(|(&k, &i)| (k, i))
}

/// Checks that no instance window or sample history contains its own target
/// event or anything after it. `seqs` are the full per-user sequences the
/// instances and samples were cut from.
pub fn audit_leakage(
    seqs: &[UserSequence],
    instances: &[TrainingInstance],
    samples: &[EvalSample],
) -> LeakageReport {
    let by_user: BTreeMap<u32, &[Event]> = seqs.iter().map(|s| (s.user, s.events.as_slice())).collect();
    let mut report = LeakageReport::default();
    for inst in instances {
        report.instances_checked += 1;
        let InstanceId { user, position } = inst.id;
        let Some(events) = by_user.get(&user).copied().filter(|e| position < e.len()) else {
            report.violations.push(format!("instance {user}:{position} has no source event"));
            continue;
        };
        let target = events[position];
        if target.item != inst.target_item {
            report.violations.push(format!("instance {user}:{position} target mismatch"));
        }
        let hetero = suffix_sources(&inst.hetero.items, &inst.hetero.source);
        let aux = inst
            .aux
            .slots
            .iter()
            .flat_map(|slot| suffix_sources(&slot.items, &slot.source));
        let sources: Vec<(usize, u32)> = hetero.chain(aux).collect();
        for (k, item) in sources {
            if k >= position || events[k].timestamp > target.timestamp {
                report
                    .violations
                    .push(format!("instance {user}:{position} window holds event {k}"));
            } else if events[k].item != item {
                report
                    .violations
                    .push(format!("instance {user}:{position} window disagrees with event {k}"));
            }
        }
    }
    for s in samples {
        report.samples_checked += 1;
        let (user, position) = (s.user, s.position);
        let Some(events) = by_user.get(&user).copied().filter(|e| position < e.len()) else {
            report.violations.push(format!("sample {user}:{position} has no source event"));
            continue;
        };
        if events[position] != s.target {
            report.violations.push(format!("sample {user}:{position} target mismatch"));
        }
        if s.history.len() != position || s.history[..] != events[..position] {
            report
                .violations
                .push(format!("sample {user}:{position} history is not the prefix before its target"));
        }
        if s.history.iter().any(|e| e.timestamp > s.target.timestamp) {
            report
                .violations
                .push(format!("sample {user}:{position} history postdates its target"));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(u: &str, i: &str, b: &str, t: u64) -> InteractionRecord {
        InteractionRecord {
            user: u.into(),
            item: i.into(),
            behavior: b.into(),
            timestamp: t,
        }
    }

    #[test]
    fn dedup_keeps_earliest() {
        let r = vec![rec("u", "a", "click", 5), rec("u", "b", "buy", 4), rec("u", "a", "click", 3)];
        assert_eq!(dedup_earliest(&r), vec![rec("u", "b", "buy", 4), rec("u", "a", "click", 3)]);
        let r = vec![rec("u", "a", "click", 9), rec("u", "a", "buy", 9), rec("v", "a", "click", 1)];
        assert_eq!(dedup_earliest(&r), r);
    }

    #[test]
    fn dedup_tie_keeps_first() {
        let r = vec![rec("u", "a", "click", 2), rec("u", "b", "buy", 1), rec("u", "a", "click", 2)];
        let d = dedup_earliest(&r);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0], r[0]);
    }

    #[test]
    fn filter_identity_when_above_threshold() {
        let r = vec![
            rec("u", "a", "buy", 1),
            rec("v", "a", "buy", 2),
            rec("u", "a", "click", 3),
        ];
        let (out, stats) = iterative_filter(&r, 2, 1, "buy").unwrap();
        assert_eq!(out, r);
        assert_eq!(stats.rounds, 0);
    }

    #[test]
    fn filter_single_purchase_is_empty() {
        let r = vec![rec("u", "a", "buy", 1)];
        assert_eq!(
            iterative_filter(&r, 1, 2, "buy").unwrap_err(),
            Error::EmptyDataset { stage: "filter" }
        );
        assert!(matches!(iterative_filter(&r, 0, 2, "buy"), Err(Error::Config(_))));
    }

    #[test]
    fn filter_cascades_to_fixed_point() {
        // Removing v (one purchase) drops b below threshold, which takes u
        // down to one purchase in the next pass.
        let r = vec![
            rec("u", "a", "buy", 1),
            rec("u", "b", "buy", 2),
            rec("v", "b", "buy", 3),
            rec("w", "a", "buy", 4),
            rec("w", "a", "fav", 5),
            rec("w", "c", "buy", 6),
            rec("x", "c", "buy", 7),
            rec("x", "a", "buy", 8),
        ];
        let (out, stats) = iterative_filter(&r, 2, 2, "buy").unwrap();
        let (again, s2) = iterative_filter(&out, 2, 2, "buy").unwrap();
        assert_eq!(out, again);
        assert_eq!(s2.rounds, 0);
        assert!(stats.rounds >= 1);
        for r in &out {
            assert!(out.iter().filter(|o| o.item == r.item && o.behavior == "buy").count() >= 2);
            assert!(out.iter().filter(|o| o.user == r.user && o.behavior == "buy").count() >= 2);
        }
    }

    #[test]
    fn ratings_map_to_behaviors() {
        let r = vec![rec("u", "a", "5", 1), rec("u", "b", "3", 2)];
        let out = ratings_to_behaviors(&r, 5, "buy", "rate").unwrap();
        assert_eq!(out[0].behavior, "buy");
        assert_eq!(out[1].behavior, "rate");
        let bad = vec![rec("u", "a", "x", 1)];
        assert!(matches!(
            ratings_to_behaviors(&bad, 5, "buy", "rate"),
            Err(Error::CorruptData { position: 0, .. })
        ));
    }

    #[test]
    fn time_range_is_half_open() {
        let r = vec![rec("u", "a", "buy", 9), rec("u", "a", "buy", 10), rec("u", "a", "buy", 20)];
        assert_eq!(exclude_time_range(&r, 10, 20), vec![r[0].clone(), r[2].clone()]);
    }

    fn walk_records() -> Vec<InteractionRecord> {
        vec![
            rec("u", "A", "click", 1),
            rec("u", "A", "buy", 2),
            rec("u", "B", "click", 3),
            rec("u", "B", "buy", 4),
            rec("w", "A", "click", 1),
            rec("w", "B", "buy", 2),
            rec("w", "A", "buy", 3),
            rec("w", "B", "click", 4),
            rec("w", "B", "buy", 5),
        ]
    }

    #[test]
    fn split_hand_walk() {
        let r = walk_records();
        let vocab = crate::encoding::build_vocab(&r, "buy").unwrap();
        let s = split(&r, &vocab).unwrap();
        let (a, b) = (vocab.item_id("A").unwrap(), vocab.item_id("B").unwrap());
        let (click, buy) = (vocab.behavior_id("click").unwrap(), vocab.behavior_id("buy").unwrap());
        let t = &s.test[0];
        assert_eq!(t.user, 0);
        assert_eq!(t.target.item, b);
        assert_eq!(
            t.history.iter().map(|e| (e.item, e.behavior)).collect::<Vec<_>>(),
            vec![(a, click), (a, buy), (b, click)]
        );
        let v = &s.validation[0];
        assert_eq!(v.target.item, a);
        assert_eq!(v.history.iter().map(|e| (e.item, e.behavior)).collect::<Vec<_>>(), vec![(a, click)]);
        assert_eq!(s.train[0].events.len(), 1);
        assert_eq!(s.stats.validation_cold_start, 0);
    }

    #[test]
    fn split_drops_cold_start_targets() {
        let mut r = walk_records();
        r.push(rec("z", "A", "buy", 1));
        r.push(rec("z", "C", "buy", 2));
        let vocab = crate::encoding::build_vocab(&r, "buy").unwrap();
        let s = split(&r, &vocab).unwrap();
        assert_eq!(s.stats.test_cold_start, 1);
        assert!(s.test.iter().all(|t| t.target.item != vocab.item_id("C").unwrap()));
        assert_eq!(s.stats.skipped_users, 0);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let r = vec![rec("u", "b", "click", 5), rec("u", "a", "click", 5), rec("u", "c", "buy", 1)];
        let vocab = crate::encoding::build_vocab(&r, "buy").unwrap();
        let (_, seqs) = group_users(&r, &vocab).unwrap();
        let items: Vec<u32> = seqs[0].events.iter().map(|e| e.item).collect();
        assert_eq!(items, vec![3, 1, 2]);
    }

    fn seq(events: &[(u32, u32)]) -> UserSequence {
        UserSequence {
            user: 0,
            events: events
                .iter()
                .enumerate()
                .map(|(k, &(item, behavior))| Event {
                    item,
                    behavior,
                    timestamp: k as u64,
                })
                .collect(),
        }
    }

    fn vocab_cfb() -> Vocab {
        Vocab::from_parts(
            (1..=9).map(|k| format!("i{k}")).collect(),
            vec!["click".into(), "fav".into(), "buy".into()],
            "buy",
        )
        .unwrap()
    }

    #[test]
    fn instances_per_purchase() {
        let v = vocab_cfb();
        let opts = InstanceOptions {
            len: 3,
            aux_len: 2,
            all_targets: false,
        };
        let s = seq(&[(1, 1), (2, 3), (3, 1), (4, 3), (5, 2), (6, 3)]);
        assert_eq!(gen_instances(&[s], &v, opts).len(), 3);
        let s = seq(&[(2, 3), (3, 1), (4, 3), (6, 3)]);
        let inst = gen_instances(core::slice::from_ref(&s), &v, opts);
        assert_eq!(inst.len(), 2);
        let l = &inst[1];
        assert_eq!(l.target_item, 6);
        assert_eq!(l.hetero.items, vec![2, 3, 4]);
        assert_eq!(l.hetero.source, vec![0, 1, 2]);
        let all = gen_instances(
            &[s],
            &v,
            InstanceOptions {
                all_targets: true,
                ..opts
            },
        );
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn long_prefix_keeps_recent_window() {
        let v = vocab_cfb();
        let s = seq(&[(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (9, 3)]);
        let inst = gen_instances(
            &[s],
            &v,
            InstanceOptions {
                len: 3,
                aux_len: 2,
                all_targets: false,
            },
        );
        assert_eq!(inst[0].hetero.items, vec![3, 4, 5]);
        assert_eq!(inst[0].aux.slots[0].items, vec![4, 5]);
        assert_eq!(inst[0].aux.slots[1].items, vec![0, 0]);
    }

    #[test]
    fn intent_picks_latest_auxiliary() {
        let v = vocab_cfb();
        let s = seq(&[(1, 1), (2, 3), (3, 1), (4, 2), (5, 3)]);
        let out = intent_testset(&[s], &v).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].target.item, 4);
        assert_eq!(out[0].position, 3);
        assert_eq!(out[0].history.len(), 3);
        let s = seq(&[(1, 1), (2, 3), (5, 3)]);
        assert_eq!(intent_testset(&[s], &v).unwrap_err(), Error::EmptySplit("intent"));
    }

    #[test]
    fn audit_flags_planted_leak() {
        let v = vocab_cfb();
        let s = seq(&[(1, 1), (2, 3), (3, 1), (4, 3)]);
        let opts = InstanceOptions {
            len: 4,
            aux_len: 2,
            all_targets: false,
        };
        let mut inst = gen_instances(core::slice::from_ref(&s), &v, opts);
        let samples = vec![sample(0, &s.events, 3)];
        let clean = audit_leakage(core::slice::from_ref(&s), &inst, &samples);
        assert!(clean.is_clean(), "{clean:?}");
        assert_eq!(clean.instances_checked, 2);

        let last = inst[0].hetero.source.len() - 1;
        inst[0].hetero.source[last] = 1;
        assert!(!audit_leakage(core::slice::from_ref(&s), &inst, &[]).is_clean());
        let mut bad = samples.clone();
        bad[0].history.push(s.events[3]);
        assert!(!audit_leakage(&[s], &[], &bad).is_clean());
    }
}
