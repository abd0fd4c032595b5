//! Negative pools for the contrastive term: standard frames, patch-shuffled
//! non-semantic frames and top-k hardest-negative filtering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, Matrix, SeededRng};

/// Tile size for patch shuffling: `w` time steps by `h` feature dims.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub w: usize,
    pub h: usize,
}

impl PatchSpec {
    pub fn new(w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Domain(format!("patch size {w}x{h} must be positive")));
        }
        Ok(Self { w, h })
    }

    /// `w` and `h` drawn independently and uniformly from `lo..=hi`.
    pub fn sample(range: PatchRange, rng: &mut SeededRng) -> Result<Self> {
        range.validate()?;
        let w = rng.int_inclusive(range.lo, range.hi);
        let h = rng.int_inclusive(range.lo, range.hi);
        Self::new(w, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRange {
    pub lo: usize,
    pub hi: usize,
}

impl PatchRange {
    pub const BASE: PatchRange = PatchRange { lo: 30, hi: 50 };
    pub const DESK: PatchRange = PatchRange { lo: 3, hi: 5 };

    pub fn validate(&self) -> Result<()> {
        if self.lo == 0 || self.lo > self.hi {
            return Err(Error::Config(format!(
                "patch range [{}, {}] needs 1 <= lo <= hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// One tile of the grid: top-left corner and extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub t0: usize,
    pub d0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Tiles of a `t x d` grid in row-major tile order; edge tiles are truncated.
pub fn tile_grid(t: usize, d: usize, spec: PatchSpec) -> Vec<Tile> {
    let mut tiles = Vec::new();
    for t0 in (0..t).step_by(spec.w) {
        for d0 in (0..d).step_by(spec.h) {
            tiles.push(Tile {
                t0,
                d0,
                rows: spec.w.min(t - t0),
                cols: spec.h.min(d - d0),
            });
        }
    }
    tiles
}

/// Groups tile indices by shape, in order of first appearance.
fn shape_classes(tiles: &[Tile]) -> Vec<Vec<usize>> {
    let mut classes: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (i, tile) in tiles.iter().enumerate() {
        let shape = (tile.rows, tile.cols);
        match classes.iter_mut().find(|(s, _)| *s == shape) {
            Some((_, members)) => members.push(i),
            None => classes.push((shape, vec![i])),
        }
    }
    classes.into_iter().map(|(_, m)| m).collect()
}

/// Shuffles tiles uniformly within each class of identically shaped tiles.
pub fn patch_shuffle(f: &FeatureSequence, spec: PatchSpec, rng: &mut SeededRng) -> FeatureSequence {
    let tiles = tile_grid(f.len(), f.dim(), spec);
    let mut perm: Vec<usize> = (0..tiles.len()).collect();
    for class in shape_classes(&tiles) {
        let p = rng.permutation(class.len());
        for (slot, &src) in class.iter().zip(&p) {
            perm[*slot] = class[src];
        }
    }
    relocate(f, &tiles, &perm)
}

/// Output tile `i` receives input tile `perm[i]`. `perm` must be a
/// permutation that maps each tile to one of the same shape.
pub fn patch_shuffle_with(f: &FeatureSequence, spec: PatchSpec, perm: &[usize]) -> Result<FeatureSequence> {
    let tiles = tile_grid(f.len(), f.dim(), spec);
    if perm.len() != tiles.len() {
        return Err(Error::Shape(format!(
            "permutation has {} entries for {} tiles",
            perm.len(),
            tiles.len()
        )));
    }
    let mut seen = vec![false; tiles.len()];
    for (i, &p) in perm.iter().enumerate() {
        if p >= tiles.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Domain(format!("{perm:?} is not a permutation")));
        }
        if (tiles[i].rows, tiles[i].cols) != (tiles[p].rows, tiles[p].cols) {
            return Err(Error::Shape(format!("tile {p} does not fit the shape of tile {i}")));
        }
    }
    Ok(relocate(f, &tiles, perm))
}

fn relocate(f: &FeatureSequence, tiles: &[Tile], perm: &[usize]) -> FeatureSequence {
    let src = f.frames();
    let mut out = src.clone();
    for (dst, &from) in tiles.iter().zip(perm) {
        let s = tiles[from];
        for r in 0..dst.rows {
            out.row_mut(dst.t0 + r)[dst.d0..dst.d0 + dst.cols].copy_from_slice(&src.row(s.t0 + r)[s.d0..s.d0 + s.cols]);
        }
    }
    FeatureSequence::new(out).expect("entries are moved, not changed")
}

/// `n` time indices other than `positive_t`, uniform; with replacement only
/// when `n` exceeds the `T - 1` candidates.
pub fn sample_standard_negatives(t: usize, n: usize, positive_t: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 frames for standard negatives, got {t}"
        )));
    }
    if positive_t >= t {
        return Err(Error::Domain(format!("positive index {positive_t} outside 0..{t}")));
    }
    if n < t {
        return rng.choice(t, n, &[positive_t]);
    }
    Ok((0..n)
        .map(|_| {
            let i = rng.index(t - 1);
            if i >= positive_t {
                i + 1
            } else {
                i
            }
        })
        .collect())
}

/// `n` time indices of the shuffled sequence, uniform; with replacement only
/// when `n > T`.
pub fn sample_nonsemantic_negatives(t: usize, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::Domain("no frames to draw non-semantic negatives from".into()));
    }
    if n <= t {
        return rng.choice(t, n, &[]);
    }
    Ok((0..n).map(|_| rng.index(t)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Standard,
    NonSemantic,
}

/// Negative frames with their provenance and source time index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativePool {
    frames: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
    sources: Vec<usize>,
}

impl NegativePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: Vec<f64>, provenance: Provenance, source: usize) {
        self.frames.push(frame);
        self.provenance.push(provenance);
        self.sources.push(source);
    }

    /// Gathers rows `indices` of `from` with one provenance tag.
    pub fn extend_from(&mut self, from: &Matrix, indices: &[usize], provenance: Provenance) {
        for &i in indices {
            self.push(from.row(i).to_vec(), provenance, i);
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }

    /// Cosine similarity of `anchor` with every frame.
    pub fn similarities(&self, anchor: &[f64]) -> Result<Vec<f64>> {
        self.frames.iter().map(|f| cosine_similarity(anchor, f)).collect()
    }

    fn select(&self, order: &[usize]) -> Self {
        Self {
            frames: order.iter().map(|&i| self.frames[i].clone()).collect(),
            provenance: order.iter().map(|&i| self.provenance[i]).collect(),
            sources: order.iter().map(|&i| self.sources[i]).collect(),
        }
    }
}

/// Order used by [`filter_top_k`]: similarity descending, then source index
/// ascending, then standard before non-semantic.
pub fn rank_order(sims: &[f64], pool: &NegativePool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then(pool.sources[a].cmp(&pool.sources[b]))
            .then(pool.provenance[a].cmp(&pool.provenance[b]))
    });
    order
}

/// Keeps the `k` frames most cosine-similar to `anchor`, in rank order.
pub fn filter_top_k(anchor: &[f64], pool: &NegativePool, k: usize) -> Result<NegativePool> {
    if k == 0 || k > pool.len() {
        return Err(Error::Domain(format!("k = {k} outside 1..={}", pool.len())));
    }
    let sims = pool.similarities(anchor)?;
    let order = rank_order(&sims, pool);
    Ok(pool.select(&order[..k]))
}

/// Linear anneal of the kept count from the full pool size down to `k`
/// over `steps` updates.
pub fn annealed_k(pool_size: usize, k: usize, step: u64, steps: u64) -> usize {
    if steps == 0 || step >= steps || pool_size <= k {
        return k;
    }
    let frac = step as f64 / steps as f64;
    let v = pool_size as f64 - (pool_size - k) as f64 * frac;
    (v.round() as usize).clamp(k, pool_size)
}

/// Configured negative counts per masked step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeCounts {
    pub standard: usize,
    pub non_semantic: usize,
    /// Kept after hardest-negative filtering.
    pub k: usize,
    /// Anneal the kept count from the full pool down to `k` over this many
    /// steps; 0 keeps `k` fixed.
    pub k_anneal_steps: u64,
}

impl Default for NegativeCounts {
    fn default() -> Self {
        Self {
            standard: 50,
            non_semantic: 50,
            k: 50,
            k_anneal_steps: 0,
        }
    }
}

/// Resolved pool recipe for one training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolPlan {
    pub standard: usize,
    pub non_semantic: usize,
    pub keep: Option<usize>,
}

impl PoolPlan {
    pub fn pool_size(&self) -> usize {
        self.standard + self.non_semantic
    }

    /// Entries per masked step after filtering.
    pub fn kept(&self) -> usize {
        self.keep.unwrap_or(self.pool_size())
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size() == 0 {
            return Err(Error::Config("negative pool is empty".into()));
        }
        if let Some(k) = self.keep {
            if k == 0 || k > self.pool_size() {
                return Err(Error::Config(format!("k = {k} must lie in 1..={}", self.pool_size())));
            }
        }
        Ok(())
    }
}

/// Pools for every masked step `t` (ascending), built from the targets
/// `c_tar`, filtered against the predictions `c_pre` when the plan keeps
/// only the hardest negatives.
pub fn build_pools(
    c_pre: &Matrix,
    c_tar: &FeatureSequence,
    masked: &[usize],
    plan: &PoolPlan,
    patch_range: PatchRange,
    rng: &SeededRng,
) -> Result<Vec<NegativePool>> {
    plan.validate()?;
    if c_pre.shape() != c_tar.frames().shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} and targets {:?} differ",
            c_pre.shape(),
            c_tar.frames().shape()
        )));
    }
    let t = c_tar.len();
    let shuffled = if plan.non_semantic > 0 {
        let spec = PatchSpec::sample(patch_range, &mut rng.child("patch"))?;
        Some(patch_shuffle(c_tar, spec, &mut rng.child("shuffle")))
    } else {
        None
    };
    masked
        .iter()
        .map(|&pos| {
            let mut r = rng.child(format!("step{pos}"));
            let mut pool = NegativePool::new();
            if plan.standard > 0 {
                let idx = sample_standard_negatives(t, plan.standard, pos, &mut r)?;
                pool.extend_from(c_tar.frames(), &idx, Provenance::Standard);
            }
            if let Some(sh) = &shuffled {
                let idx = sample_nonsemantic_negatives(t, plan.non_semantic, &mut r)?;
                pool.extend_from(sh.frames(), &idx, Provenance::NonSemantic);
            }
            match plan.keep {
                Some(k) => filter_top_k(c_pre.row(pos), &pool, k),
                None => Ok(pool),
            }
        })
        .collect()
}
