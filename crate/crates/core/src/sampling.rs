//! Triplet and pair construction for metric-learning training, plus
//! semi-hard negative mining for the baselines.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchRecord;
use crate::error::{Error, Result};
use crate::losses::euclidean;

/// Anchor/positive share a class; the negative comes from another class.
#[derive(Debug, Clone)]
pub struct Triplet<'a> {
    pub anchor: &'a PatchRecord,
    pub positive: &'a PatchRecord,
    pub negative: &'a PatchRecord,
}

/// A batch of triplets drawn from one split.
#[derive(Debug, Clone)]
pub struct TripletBatch<'a> {
    pub triplets: Vec<Triplet<'a>>,
    pub batch_id: usize,
}

fn group_by_class(split: &[PatchRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in split.iter().enumerate() {
        by_class.entry(p.label.index).or_default().push(i);
    }
    by_class
}

/// Sample `n_triplets` triplets: the anchor class uniform over classes, the
/// positive uniform within the anchor's class (excluding the anchor), the
/// negative uniform over all other classes' patches. Deterministic in `seed`.
pub fn make_triplets(split: &[PatchRecord], n_triplets: usize, seed: u64) -> Result<Vec<Triplet<'_>>> {
    let by_class = group_by_class(split);
    let classes: Vec<usize> = by_class.keys().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Sampling(format!(
            "triplets need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let anchor_classes: Vec<usize> =
        classes.iter().copied().filter(|c| by_class[c].len() >= 2).collect();
    if anchor_classes.is_empty() {
        return Err(Error::Sampling(
            "no class has the 2 patches required for an anchor/positive pair".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_triplets);
    for _ in 0..n_triplets {
        let class = anchor_classes[rng.gen_range(0..anchor_classes.len())];
        let members = &by_class[&class];
        let anchor = members[rng.gen_range(0..members.len())];
        let positive = loop {
            let p = members[rng.gen_range(0..members.len())];
            if p != anchor {
                break p;
            }
        };
        let negatives: Vec<usize> = classes
            .iter()
            .filter(|&&c| c != class)
            .flat_map(|c| by_class[c].iter().copied())
            .collect();
        if negatives.is_empty() {
            return Err(Error::Sampling(format!(
                "no negative patch available outside class index {class}"
            )));
        }
        let negative = negatives[rng.gen_range(0..negatives.len())];
        out.push(Triplet {
            anchor: &split[anchor],
            positive: &split[positive],
            negative: &split[negative],
        });
    }
    Ok(out)
}

/// Pack triplets into fixed-size batches; each batch owns its own random
/// stream keyed by `(seed, batch_id)` upstream in [`make_triplets`].
pub fn batch_triplets<'a>(triplets: Vec<Triplet<'a>>, batch_size: usize) -> Vec<TripletBatch<'a>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut batch_id = 0;
    for t in triplets {
        current.push(t);
        if current.len() == batch_size {
            batches.push(TripletBatch { triplets: std::mem::take(&mut current), batch_id });
            batch_id += 1;
        }
    }
    if !current.is_empty() {
        batches.push(TripletBatch { triplets: current, batch_id });
    }
    batches
}

/// Sample pairs with a 50/50 positive/negative mix in expectation.
pub fn make_pairs(
    split: &[PatchRecord],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(&PatchRecord, &PatchRecord, bool)>> {
    let by_class = group_by_class(split);
    let classes: Vec<usize> = by_class.keys().copied().collect();
    let positive_classes: Vec<usize> =
        classes.iter().copied().filter(|c| by_class[c].len() >= 2).collect();
    if positive_classes.is_empty() {
        return Err(Error::Sampling(
            "no class has the 2 patches required for a positive pair".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let want_positive = rng.gen_bool(0.5);
        if want_positive {
            let class = positive_classes[rng.gen_range(0..positive_classes.len())];
            let members = &by_class[&class];
            let a = members[rng.gen_range(0..members.len())];
            let b = loop {
                let b = members[rng.gen_range(0..members.len())];
                if b != a {
                    break b;
                }
            };
            out.push((&split[a], &split[b], true));
        } else {
            if classes.len() < 2 {
                return Err(Error::Sampling(
                    "negative pairs need at least 2 classes".into(),
                ));
            }
            let ca = classes[rng.gen_range(0..classes.len())];
            let cb = loop {
                let cb = classes[rng.gen_range(0..classes.len())];
                if cb != ca {
                    break cb;
                }
            };
            let a = by_class[&ca][rng.gen_range(0..by_class[&ca].len())];
            let b = by_class[&cb][rng.gen_range(0..by_class[&cb].len())];
            out.push((&split[a], &split[b], false));
        }
    }
    Ok(out)
}

/// Pick the semi-hard negative: the one with the smallest `d(a, n)` inside
/// the open interval `(d(a, p), d(a, p) + margin)`. Returns `None` when no
/// negative qualifies.
pub fn mine_semi_hard(
    anchor_emb: &[f64],
    positive_emb: &[f64],
    negative_embs: &[Vec<f64>],
    margin: f64,
) -> Result<Option<usize>> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("mining margin must be > 0, got {margin}")));
    }
    if negative_embs.is_empty() {
        return Err(Error::RejectedInput("empty negative list".into()));
    }
    let d_ap = euclidean(anchor_emb, positive_emb)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, n) in negative_embs.iter().enumerate() {
        let d_an = euclidean(anchor_emb, n)?;
        if d_an > d_ap && d_an < d_ap + margin {
            if best.map_or(true, |(_, b)| d_an < b) {
                best = Some((i, d_an));
            }
        }
    }
    Ok(best.map(|(i, _)| i))
}
