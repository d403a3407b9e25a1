//! Vocabularies, embedding tables and the two model inputs: the
//! heterogeneous sequence matrix and the auxiliary-behavior tensor.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Index reserved for padding in both item and behavior vocabularies.
pub const PAD: u32 = 0;

/// Next-behavior slot used for the final position of a window. It shares
/// index 0 with padding because a real event is never followed by padding.
pub const TERMINAL: u32 = 0;

/// Dense item and behavior ids; index 0 of each is padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    items: Vec<String>,
    behaviors: Vec<String>,
    target_behavior: u32,
    item_index: BTreeMap<String, u32>,
    behavior_index: BTreeMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    items: Vec<String>,
    behaviors: Vec<String>,
    target: String,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::from_parts(r.items, r.behaviors, &r.target)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            target: v.target_behavior_name().to_string(),
            items: v.items,
            behaviors: v.behaviors,
        }
    }
}

impl Vocab {
    /// `items[k]` and `behaviors[k]` name dense index `k + 1`.
    pub fn from_parts(items: Vec<String>, behaviors: Vec<String>, target: &str) -> Result<Self> {
        let item_index: BTreeMap<String, u32> = items
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k as u32 + 1))
            .collect();
        let behavior_index: BTreeMap<String, u32> = behaviors
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k as u32 + 1))
            .collect();
        if item_index.len() != items.len() || behavior_index.len() != behaviors.len() {
            return Err(Error::Config("duplicate vocabulary entry".into()));
        }
        let target_behavior = *behavior_index
            .get(target)
            .ok_or_else(|| Error::UnknownBehavior(target.to_string()))?;
        Ok(Vocab {
            items,
            behaviors,
            target_behavior,
            item_index,
            behavior_index,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn target_behavior(&self) -> u32 {
        self.target_behavior
    }

    pub fn target_behavior_name(&self) -> &str {
        &self.behaviors[self.target_behavior as usize - 1]
    }

    pub fn item_id(&self, raw: &str) -> Option<u32> {
        self.item_index.get(raw).copied()
    }

    pub fn behavior_id(&self, name: &str) -> Option<u32> {
        self.behavior_index.get(name).copied()
    }

    pub fn item_name(&self, id: u32) -> Option<&str> {
        self.items.get((id as usize).checked_sub(1)?).map(String::as_str)
    }

    pub fn behavior_name(&self, id: u32) -> Option<&str> {
        self.behaviors.get((id as usize).checked_sub(1)?).map(String::as_str)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    /// Non-target behaviors in index order; slot `j` of the auxiliary tensor
    /// holds behavior `aux_behaviors()[j]`.
    pub fn aux_behaviors(&self) -> Vec<u32> {
        (1..=self.behaviors.len() as u32)
            .filter(|&b| b != self.target_behavior)
            .collect()
    }
}

/// Builds a vocabulary in first-appearance order of `records`.
pub fn build_vocab(records: &[InteractionRecord], target_behavior: &str) -> Result<Vocab> {
    if records.is_empty() {
        return Err(Error::EmptyDataset { stage: "vocab" });
    }
    let mut items = Vec::new();
    let mut behaviors = Vec::new();
    let mut seen_items = BTreeMap::new();
    let mut seen_behaviors = BTreeMap::new();
    for r in records {
        if seen_items.insert(r.item.clone(), ()).is_none() {
            items.push(r.item.clone());
        }
        if seen_behaviors.insert(r.behavior.clone(), ()).is_none() {
            behaviors.push(r.behavior.clone());
        }
    }
    Vocab::from_parts(items, behaviors, target_behavior)
}

/// How behavior information enters the heterogeneous sequence rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Items only.
    S,
    /// Behavior-type embedding.
    B,
    /// Behavior-transition embedding.
    T,
    /// Sum of type and transition embeddings.
    BT,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::S, Variant::B, Variant::T, Variant::BT];

    fn uses_type(self) -> bool {
        matches!(self, Variant::B | Variant::BT)
    }

    fn uses_transition(self) -> bool {
        matches!(self, Variant::T | Variant::BT)
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            Variant::S => "S",
            Variant::B => "B",
            Variant::T => "T",
            Variant::BT => "BT",
        };
        f.write_str(s)
    }
}

/// Item, behavior and behavior-transition embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    /// `(|I|+1) × d`
    pub item: Tensor,
    /// `(|B|+1) × d`
    pub behavior: Tensor,
    /// `(|B|+1)² × d`, row `b·(|B|+1) + next`.
    pub transition: Tensor,
}
visit_fields!(EmbeddingTables { item, behavior, transition });

impl EmbeddingTables {
    pub fn zeros(num_items: usize, num_behaviors: usize, d: usize) -> Self {
        let nb = num_behaviors + 1;
        EmbeddingTables {
            item: Tensor::zeros(&[num_items + 1, d]),
            behavior: Tensor::zeros(&[nb, d]),
            transition: Tensor::zeros(&[nb * nb, d]),
        }
    }

    /// Uniform `±0.1/√d`; padding rows (and transitions out of padding) stay zero.
    pub fn init(num_items: usize, num_behaviors: usize, d: usize, rng: &mut RngStream) -> Self {
        let mut t = Self::zeros(num_items, num_behaviors, d);
        let a = 0.1 / libm::sqrt(d as f64);
        let nb = num_behaviors + 1;
        for table in [&mut t.item, &mut t.behavior] {
            for i in 1..table.rows() {
                table.row_mut(i).iter_mut().for_each(|x| *x = rng.uniform(-a, a));
            }
        }
        for i in nb..t.transition.rows() {
            t.transition.row_mut(i).iter_mut().for_each(|x| *x = rng.uniform(-a, a));
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.item.cols()
    }

    pub fn num_items(&self) -> usize {
        self.item.rows() - 1
    }

    pub fn num_behaviors(&self) -> usize {
        self.behavior.rows() - 1
    }

    pub fn transition_index(&self, behavior: u32, next: u32) -> usize {
        behavior as usize * (self.num_behaviors() + 1) + next as usize
    }

    /// Inverse of [`EmbeddingTables::transition_index`].
    pub fn decode_transition(&self, index: usize) -> (u32, u32) {
        let nb = self.num_behaviors() + 1;
        ((index / nb) as u32, (index % nb) as u32)
    }
}

/// A left-padded window of the most recent `L` events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroSequence {
    pub items: Vec<u32>,
    pub behaviors: Vec<u32>,
    /// `true` for real events; always a suffix.
    pub mask: Vec<bool>,
    pub target_item: u32,
    pub user: u32,
    /// Offsets of the real entries in the history the window was cut from.
    pub source: Vec<usize>,
}

impl HeteroSequence {
    /// Keeps the last `len` events of `history`, left-padding with zeros.
    pub fn from_history(history: &[(u32, u32)], len: usize, target_item: u32, user: u32) -> Self {
        let start = history.len().saturating_sub(len);
        let tail = &history[start..];
        let pad = len - tail.len();
        let mut items = vec![PAD; pad];
        let mut behaviors = vec![PAD; pad];
        let mut mask = vec![false; pad];
        for &(i, b) in tail {
            items.push(i);
            behaviors.push(b);
            mask.push(true);
        }
        HeteroSequence {
            items,
            behaviors,
            mask,
            target_item,
            user,
            source: (start..history.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Next-behavior index used by the transition embedding at `pos`.
    pub fn next_behavior(&self, pos: usize) -> u32 {
        if pos + 1 < self.len() {
            self.behaviors[pos + 1]
        } else {
            TERMINAL
        }
    }
}

/// Recent events for one auxiliary behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxSlot {
    pub behavior: u32,
    pub items: Vec<u32>,
    pub behaviors: Vec<u32>,
    pub mask: Vec<bool>,
    /// Offsets of the real entries in the source history.
    pub source: Vec<usize>,
}

impl AuxSlot {
    pub fn is_padded(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxSubsequences {
    pub len: usize,
    pub slots: Vec<AuxSlot>,
}

impl AuxSubsequences {
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.slots.iter().map(|s| s.mask.clone()).collect()
    }
}

/// The last `len` events of each auxiliary behavior in `history`.
pub fn extract_aux(history: &[(u32, u32)], len: usize, vocab: &Vocab) -> AuxSubsequences {
    let slots = vocab
        .aux_behaviors()
        .into_iter()
        .map(|b| {
            let hits: Vec<(usize, u32)> = history
                .iter()
                .enumerate()
                .filter(|(_, e)| e.1 == b)
                .map(|(k, e)| (k, e.0))
                .collect();
            let tail = &hits[hits.len().saturating_sub(len)..];
            let pad = len - tail.len();
            let mut items = vec![PAD; pad];
            let mut behaviors = vec![PAD; pad];
            let mut mask = vec![false; pad];
            for &(_, item) in tail {
                items.push(item);
                behaviors.push(b);
                mask.push(true);
            }
            AuxSlot {
                behavior: b,
                items,
                behaviors,
                mask,
                source: tail.iter().map(|&(k, _)| k).collect(),
            }
        })
        .collect();
    AuxSubsequences { len, slots }
}

fn check_index(pos: usize, what: &str, idx: u32, bound: usize) -> Result<()> {
    if idx as usize > bound {
        return Err(Error::CorruptData {
            position: pos,
            reason: format!("{what} index {idx} exceeds {bound}"),
        });
    }
    Ok(())
}

/// The `L × 2d` heterogeneous input; row `t` is `concat(M_t, V_t)`.
pub fn encode_hetero(seq: &HeteroSequence, tables: &EmbeddingTables, variant: Variant) -> Result<Tensor> {
    let d = tables.dim();
    let mut x = Tensor::zeros(&[seq.len(), 2 * d]);
    for t in 0..seq.len() {
        let (item, beh) = (seq.items[t], seq.behaviors[t]);
        check_index(t, "item", item, tables.num_items())?;
        check_index(t, "behavior", beh, tables.num_behaviors())?;
        if !seq.mask[t] {
            if item != PAD || beh != PAD {
                return Err(Error::CorruptData {
                    position: t,
                    reason: "masked position carries an event".into(),
                });
            }
            continue;
        }
        if item == PAD || beh == PAD {
            return Err(Error::CorruptData {
                position: t,
                reason: "real position carries padding".into(),
            });
        }
        let row = x.row_mut(t);
        if variant.uses_type() {
            for (o, v) in row[..d].iter_mut().zip(tables.behavior.row(beh as usize)) {
                *o += v;
            }
        }
        if variant.uses_transition() {
            let tr = tables.transition_index(beh, seq.next_behavior(t));
            for (o, v) in row[..d].iter_mut().zip(tables.transition.row(tr)) {
                *o += v;
            }
        }
        row[d..].copy_from_slice(tables.item.row(item as usize));
    }
    Ok(x)
}

/// The `L' × m × 2d` auxiliary tensor; `[t, j, :]` is `concat(B_b, V_i)`.
pub fn encode_aux(aux: &AuxSubsequences, tables: &EmbeddingTables) -> Result<Tensor> {
    let d = tables.dim();
    let m = aux.slots.len();
    let mut h = Tensor::zeros(&[aux.len, m, 2 * d]);
    let w = 2 * d;
    for (j, slot) in aux.slots.iter().enumerate() {
        for t in 0..aux.len {
            if !slot.mask[t] {
                continue;
            }
            let (item, beh) = (slot.items[t], slot.behaviors[t]);
            check_index(t, "item", item, tables.num_items())?;
            check_index(t, "behavior", beh, tables.num_behaviors())?;
            let off = (t * m + j) * w;
            let out = &mut h.data_mut()[off..off + w];
            out[..d].copy_from_slice(tables.behavior.row(beh as usize));
            out[d..].copy_from_slice(tables.item.row(item as usize));
        }
    }
    Ok(h)
}

/// Scatter-adds `grad_rows[k]` into row `indices[k]` of `table_grad`;
/// the padding row stays zero.
pub fn embedding_backward(grad_rows: &Tensor, indices: &[u32], table_grad: &mut Tensor) {
    for (k, &idx) in indices.iter().enumerate() {
        if idx == PAD {
            continue;
        }
        for (g, v) in table_grad.row_mut(idx as usize).iter_mut().zip(grad_rows.row(k)) {
            *g += v;
        }
    }
}

/// Routes the gradient of [`encode_hetero`]'s output back into the tables.
pub fn hetero_backward(
    seq: &HeteroSequence,
    dx: &Tensor,
    variant: Variant,
    grads: &mut EmbeddingTables,
) {
    let d = grads.dim();
    let real: Vec<usize> = (0..seq.len()).filter(|&t| seq.mask[t]).collect();
    let idx = |f: &dyn Fn(usize) -> u32| -> Vec<u32> { real.iter().map(|&t| f(t)).collect() };
    let dm = Tensor::from_vec(
        &[real.len(), d],
        real.iter().flat_map(|&t| dx.row(t)[..d].iter().copied()).collect(),
    )
    .expect("rows sized by d");
    let dv = Tensor::from_vec(
        &[real.len(), d],
        real.iter().flat_map(|&t| dx.row(t)[d..].iter().copied()).collect(),
    )
    .expect("rows sized by d");
    embedding_backward(&dv, &idx(&|t| seq.items[t]), &mut grads.item);
    if variant.uses_type() {
        embedding_backward(&dm, &idx(&|t| seq.behaviors[t]), &mut grads.behavior);
    }
    if variant.uses_transition() {
        for (k, &t) in real.iter().enumerate() {
            let tr = grads.transition_index(seq.behaviors[t], seq.next_behavior(t));
            for (g, v) in grads.transition.row_mut(tr).iter_mut().zip(dm.row(k)) {
                *g += v;
            }
        }
    }
}

/// Routes the gradient of [`encode_aux`]'s output back into the tables.
pub fn aux_backward(aux: &AuxSubsequences, dh: &Tensor, grads: &mut EmbeddingTables) {
    let d = grads.dim();
    let m = aux.slots.len();
    let w = 2 * d;
    for (j, slot) in aux.slots.iter().enumerate() {
        for t in 0..aux.len {
            if !slot.mask[t] {
                continue;
            }
            let off = (t * m + j) * w;
            let g = &dh.data()[off..off + w];
            for (o, v) in grads.behavior.row_mut(slot.behaviors[t] as usize).iter_mut().zip(&g[..d]) {
                *o += v;
            }
            for (o, v) in grads.item.row_mut(slot.items[t] as usize).iter_mut().zip(&g[d..]) {
                *o += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionRecord;

    fn rec(u: &str, i: &str, b: &str, t: u64) -> InteractionRecord {
        InteractionRecord {
            user: u.into(),
            item: i.into(),
            behavior: b.into(),
            timestamp: t,
        }
    }

    fn vocab3() -> Vocab {
        Vocab::from_parts(
            ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
            ["click", "fav", "buy"].iter().map(|s| s.to_string()).collect(),
            "buy",
        )
        .unwrap()
    }

    /// Tables with `d = 4` whose rows are distinguishable by value.
    fn marked_tables() -> EmbeddingTables {
        let mut t = EmbeddingTables::zeros(5, 3, 4);
        for i in 1..=5 {
            t.item.row_mut(i).copy_from_slice(&[i as f64, 0.0, 0.0, 0.0]);
        }
        for b in 1..=3 {
            t.behavior.row_mut(b).copy_from_slice(&[0.0, b as f64, 0.0, 0.0]);
        }
        for r in 0..16 {
            t.transition.row_mut(r).copy_from_slice(&[0.0, 0.0, 10.0 + r as f64, 1.0]);
        }
        t
    }

    #[test]
    fn vocab_counts_and_padding() {
        let recs = [
            rec("u", "A", "click", 1),
            rec("u", "B", "click", 2),
            rec("u", "A", "buy", 3),
        ];
        let v = build_vocab(&recs, "buy").unwrap();
        assert_eq!((v.num_items(), v.num_behaviors()), (2, 2));
        assert_eq!(v.item_id("A"), Some(1));
        assert_eq!(v.behavior_name(v.target_behavior()), Some("buy"));
        assert_eq!(v.aux_behaviors(), vec![1]);
        assert_eq!(build_vocab(&recs, "buy").unwrap(), v);
        assert_eq!(
            build_vocab(&recs, "cart"),
            Err(Error::UnknownBehavior("cart".into()))
        );
    }

    #[test]
    fn variant_s_zeroes_behavior_half() {
        let t = marked_tables();
        let seq = HeteroSequence::from_history(&[(1, 1), (2, 2), (3, 1)], 5, 4, 0);
        let x = encode_hetero(&seq, &t, Variant::S).unwrap();
        for r in 0..5 {
            assert!(x.row(r)[..4].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn all_pad_sequence_encodes_to_zero() {
        let t = marked_tables();
        let seq = HeteroSequence::from_history(&[], 4, 1, 0);
        let x = encode_hetero(&seq, &t, Variant::BT).unwrap();
        assert_eq!(x, Tensor::zeros(&[4, 8]));
    }

    #[test]
    fn bt_rows_match_hand_assembly() {
        let t = marked_tables();
        // history: click a, fav b, click c; L = 4 → one pad row
        let seq = HeteroSequence::from_history(&[(1, 1), (2, 2), (3, 1)], 4, 4, 0);
        let x = encode_hetero(&seq, &t, Variant::BT).unwrap();
        // transition(b, next) row index is b·4 + next; TERMINAL = 0
        let expect = Tensor::from_rows(&[
            &[0.0; 8],
            &[0.0, 1.0, 10.0 + 6.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            &[0.0, 2.0, 10.0 + 9.0, 1.0, 2.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 10.0 + 4.0, 1.0, 3.0, 0.0, 0.0, 0.0],
        ]);
        assert_eq!(x, expect);
    }

    #[test]
    fn variant_additivity() {
        let mut rng = RngStream::new(8);
        let t = EmbeddingTables::init(5, 3, 4, &mut rng);
        let seq = HeteroSequence::from_history(&[(1, 1), (4, 3), (2, 2), (5, 1)], 6, 3, 0);
        let e = |v| encode_hetero(&seq, &t, v).unwrap();
        let lhs = e(Variant::BT).add(&e(Variant::B).map(|x| -x)).unwrap();
        let rhs = e(Variant::T).add(&e(Variant::S).map(|x| -x)).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn transition_indices_decode() {
        let t = marked_tables();
        let seq = HeteroSequence::from_history(&[(1, 1), (2, 3), (3, 2)], 3, 4, 0);
        for pos in 0..3 {
            let idx = t.transition_index(seq.behaviors[pos], seq.next_behavior(pos));
            assert_eq!(t.decode_transition(idx), (seq.behaviors[pos], seq.next_behavior(pos)));
        }
        assert_eq!(seq.next_behavior(2), TERMINAL);
    }

    #[test]
    fn out_of_bounds_index_names_position() {
        let t = marked_tables();
        let seq = HeteroSequence::from_history(&[(1, 1), (9, 1)], 3, 4, 0);
        match encode_hetero(&seq, &t, Variant::B) {
            Err(Error::CorruptData { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extract_aux_keeps_recent_tail() {
        let v = vocab3();
        let (click, fav, buy) = (1, 2, 3);
        let mut h = Vec::new();
        for i in 1..=5 {
            h.push((i, click));
        }
        h.push((1, buy));
        h.push((2, click));
        h.push((3, click));
        let aux = extract_aux(&h, 5, &v);
        assert_eq!(aux.slots.len(), 2);
        assert_eq!(aux.slots[0].items, vec![3, 4, 5, 2, 3]);
        assert!(aux.slots[0].mask.iter().all(|&m| m));
        assert!(aux.slots[1].is_padded());
        assert_eq!(aux.slots[1].behavior, fav);

        let only_buys = extract_aux(&[(1, buy), (2, buy)], 3, &v);
        assert!(only_buys.slots.iter().all(AuxSlot::is_padded));
    }

    #[test]
    fn extract_aux_mixed_history() {
        let v = vocab3();
        // click a, fav b, click c, buy c, fav d, click e, fav a
        let h = [(1, 1), (2, 2), (3, 1), (3, 3), (4, 2), (5, 1), (1, 2)];
        let aux = extract_aux(&h, 2, &v);
        assert_eq!(aux.slots[0].items, vec![3, 5]);
        assert_eq!(aux.slots[0].source, vec![2, 5]);
        assert_eq!(aux.slots[1].items, vec![4, 1]);
        assert_eq!(aux.slots[1].behaviors, vec![2, 2]);
        let aux3 = extract_aux(&h[..3], 3, &v);
        assert_eq!(aux3.slots[0].items, vec![0, 1, 3]);
        assert_eq!(aux3.slots[0].mask, vec![false, true, true]);
        assert_eq!(aux3.slots[1].items, vec![0, 0, 2]);
    }

    #[test]
    fn extract_aux_ignores_future_events() {
        let v = vocab3();
        let h = [(1, 1), (2, 2), (3, 1)];
        let mut longer = h.to_vec();
        longer.extend_from_slice(&[(4, 1), (5, 2)]);
        assert_eq!(extract_aux(&h, 3, &v), extract_aux(&longer[..h.len()], 3, &v));
    }

    #[test]
    fn encode_aux_rows() {
        let v = vocab3();
        let t = marked_tables();
        let empty = extract_aux(&[], 3, &v);
        assert_eq!(encode_aux(&empty, &t).unwrap(), Tensor::zeros(&[3, 2, 8]));

        let one = extract_aux(&[(2, 1)], 3, &v);
        let h = encode_aux(&one, &t).unwrap();
        let nonzero: Vec<usize> = (0..6)
            .filter(|&r| h.data()[r * 8..r * 8 + 8].iter().any(|&x| x != 0.0))
            .collect();
        // row (t = 2, j = 0) → flat row 4
        assert_eq!(nonzero, vec![4]);
        assert_eq!(&h.data()[32..40], &[0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);

        // fav b, click c, fav d → slot 0 (click) [_, _, c], slot 1 (fav) [_, b, d]
        let mixed = extract_aux(&[(2, 2), (3, 1), (4, 2)], 3, &v);
        let h = encode_aux(&mixed, &t).unwrap();
        let row = |tt: usize, j: usize| h.data()[(tt * 2 + j) * 8..(tt * 2 + j) * 8 + 8].to_vec();
        assert_eq!(row(2, 0), vec![0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(row(1, 1), vec![0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(row(2, 1), vec![0.0, 2.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
        assert_eq!(row(0, 1), vec![0.0; 8]);
    }

    #[test]
    fn embedding_backward_accumulates_and_skips_padding() {
        let mut g = Tensor::zeros(&[4, 2]);
        let rows = Tensor::from_rows(&[&[1.0, 2.0], &[0.5, 0.5], &[9.0, 9.0]]);
        embedding_backward(&rows, &[2, 2, 0], &mut g);
        assert_eq!(g.row(2), &[1.5, 2.5]);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn hetero_backward_matches_finite_differences() {
        use crate::numerics::{grad_check, ParamSet};
        let mut rng = RngStream::new(21);
        let tables = EmbeddingTables::init(5, 3, 3, &mut rng);
        let seq = HeteroSequence::from_history(&[(1, 1), (4, 3), (1, 2), (5, 1)], 5, 2, 0);
        let probe = Tensor::from_vec(&[5, 6], (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut params = vec![tables.item.clone(), tables.behavior.clone(), tables.transition.clone()];
        let as_tables = |p: &Vec<Tensor>| EmbeddingTables {
            item: p[0].clone(),
            behavior: p[1].clone(),
            transition: p[2].clone(),
        };
        let f = |p: &Vec<Tensor>| {
            let x = encode_hetero(&seq, &as_tables(p), Variant::BT).unwrap();
            x.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = EmbeddingTables::zeros(5, 3, 3);
        hetero_backward(&seq, &probe, Variant::BT, &mut g);
        let analytic = vec![g.item, g.behavior, g.transition];
        let r = grad_check(f, &mut params, &analytic, 1e-5, 64, &mut rng);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(params.tensors().len(), 3);
    }
}
