//! Lattice points, the sup-norm metric and elementary regions.
//!
//! An elementary region of size `N` is the cube `[-N, N]^d` around a center,
//! optionally with the orthant-like corner `{q : q_i ς_i 0}` removed, where the
//! sign pattern `ς` constrains at least two axes. Point sets are always kept in
//! lexicographic order so that matrices indexed by them are reproducible.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticePoint(coords)
    }

    pub fn origin(dim: usize) -> Self {
        LatticePoint(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn translate(&self, t: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(&t.0).map(|(a, b)| a + b).collect())
    }

    pub fn offset_from(&self, origin: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(&origin.0).map(|(a, b)| a - b).collect())
    }

    /// Sup-norm `|n| = max_i |n_i|`.
    pub fn norm(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(v: Vec<i64>) -> Self {
        LatticePoint(v)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Sup-norm distance of raw coordinates of equal length.
pub fn sup_dist_raw(p: &[i64], q: &[i64]) -> u64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a.abs_diff(*b))
        .max()
        .unwrap_or(0)
}

/// `max_i |p_i - q_i|`.
pub fn sup_distance(p: &LatticePoint, q: &LatticePoint) -> Result<u64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(sup_dist_raw(&p.0, &q.0))
}

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

/// Stand-in for an unbounded side of a half-space.
const UNBOUNDED: i64 = i64::MAX / 4;

/// Inclusive axis-aligned box of lattice points. Empty when any `lo > hi`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl IBox {
    pub fn cube(center: &[i64], radius: u64) -> Self {
        let r = radius as i64;
        IBox {
            lo: center.iter().map(|c| c - r).collect(),
            hi: center.iter().map(|c| c + r).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn intersect(&self, other: &IBox) -> IBox {
        IBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| *a.max(b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| *a.min(b)).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &IBox) -> bool {
        self.is_empty()
            || self
                .lo
                .iter()
                .zip(&self.hi)
                .zip(other.lo.iter().zip(&other.hi))
                .all(|((l, h), (ol, oh))| ol <= l && h <= oh)
    }

    pub fn is_disjoint(&self, other: &IBox) -> bool {
        self.intersect(other).is_empty()
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &IBox) -> IBox {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        IBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| *a.max(b)).collect(),
        }
    }

    pub fn cardinality(&self) -> u64 {
        if self.is_empty() {
            return 0;
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l + 1) as u64)
            .product()
    }

    /// Lattice points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut cur = self.lo.clone();
        loop {
            out.push(cur.clone());
            let mut axis = self.dim();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if cur[axis] < self.hi[axis] {
                    cur[axis] += 1;
                    for a in axis + 1..self.dim() {
                        cur[a] = self.lo[a];
                    }
                    break;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sign patterns and elementary regions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "lt")]
    Lt,
    #[serde(rename = "gt")]
    Gt,
    #[serde(rename = "none")]
    Free,
}

/// The `ς` of a carved corner: which offsets are removed from the cube.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sign>", into = "Vec<Sign>")]
pub struct SignPattern(Vec<Sign>);

impl TryFrom<Vec<Sign>> for SignPattern {
    type Error = Error;

    fn try_from(v: Vec<Sign>) -> Result<Self> {
        SignPattern::new(v)
    }
}

impl From<SignPattern> for Vec<Sign> {
    fn from(p: SignPattern) -> Self {
        p.0
    }
}

impl SignPattern {
    pub fn new(entries: Vec<Sign>) -> Result<Self> {
        let active = entries.iter().filter(|s| **s != Sign::Free).count();
        if active < 2 {
            return Err(Error::input(format!(
                "a carving pattern needs at least two constrained axes, got {active}"
            )));
        }
        Ok(SignPattern(entries))
    }

    pub fn entries(&self) -> &[Sign] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// All admissible patterns in `d` dimensions, in enumeration order
    /// (base-3 counting with `Free < Lt < Gt`, first axis most significant).
    pub fn all(d: usize) -> Vec<SignPattern> {
        let symbols = [Sign::Free, Sign::Lt, Sign::Gt];
        let total = 3usize.pow(d as u32);
        let mut out = Vec::new();
        for code in 0..total {
            let mut entries = vec![Sign::Free; d];
            let mut c = code;
            for axis in (0..d).rev() {
                entries[axis] = symbols[c % 3];
                c /= 3;
            }
            if let Ok(p) = SignPattern::new(entries) {
                out.push(p);
            }
        }
        out
    }

    /// True when the offset lies in the removed corner.
    pub fn removes(&self, offset: &[i64]) -> bool {
        self.0.iter().zip(offset).all(|(s, q)| match s {
            Sign::Lt => *q < 0,
            Sign::Gt => *q > 0,
            Sign::Free => true,
        })
    }

    /// The removed corner as an (unbounded) box around `center`.
    fn notch(&self, center: &[i64]) -> IBox {
        let mut lo = Vec::with_capacity(center.len());
        let mut hi = Vec::with_capacity(center.len());
        for (s, c) in self.0.iter().zip(center) {
            match s {
                Sign::Lt => {
                    lo.push(-UNBOUNDED);
                    hi.push(c - 1);
                }
                Sign::Gt => {
                    lo.push(c + 1);
                    hi.push(UNBOUNDED);
                }
                Sign::Free => {
                    lo.push(-UNBOUNDED);
                    hi.push(UNBOUNDED);
                }
            }
        }
        IBox { lo, hi }
    }
}

/// A translate of an elementary region of size `N`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementaryRegion {
    pub center: LatticePoint,
    pub size: u64,
    pub carve: Option<SignPattern>,
}

impl ElementaryRegion {
    pub fn cube(center: LatticePoint, size: u64) -> Self {
        ElementaryRegion {
            center,
            size,
            carve: None,
        }
    }

    pub fn carved(center: LatticePoint, size: u64, pattern: SignPattern) -> Result<Self> {
        if pattern.dim() != center.dim() {
            return Err(Error::DimensionMismatch {
                expected: center.dim(),
                got: pattern.dim(),
            });
        }
        Ok(ElementaryRegion {
            center,
            size,
            carve: Some(pattern),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn bounding_box(&self) -> IBox {
        IBox::cube(&self.center.0, self.size)
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        if sup_dist_raw(p, &self.center.0) > self.size {
            return false;
        }
        match &self.carve {
            None => true,
            Some(pat) => {
                let off: Vec<i64> = p.iter().zip(&self.center.0).map(|(a, b)| a - b).collect();
                !pat.removes(&off)
            }
        }
    }

    pub fn translate(&self, t: &LatticePoint) -> Self {
        ElementaryRegion {
            center: self.center.translate(t),
            size: self.size,
            carve: self.carve.clone(),
        }
    }

    /// Cover of the region by boxes (overlapping in general).
    pub fn boxes(&self) -> Vec<IBox> {
        let bb = self.bounding_box();
        match &self.carve {
            None => vec![bb],
            Some(pat) => {
                let c = &self.center.0;
                let mut out = Vec::new();
                for (axis, s) in pat.entries().iter().enumerate() {
                    let mut b = bb.clone();
                    match s {
                        // the corner is q_axis < 0, so keep q_axis >= 0
                        Sign::Lt => b.lo[axis] = b.lo[axis].max(c[axis]),
                        Sign::Gt => b.hi[axis] = b.hi[axis].min(c[axis]),
                        Sign::Free => continue,
                    }
                    if !b.is_empty() {
                        out.push(b);
                    }
                }
                out
            }
        }
    }

    fn notch(&self) -> Option<IBox> {
        self.carve.as_ref().map(|p| p.notch(&self.center.0))
    }

    /// True when the whole box lies inside this region.
    pub fn contains_box(&self, b: &IBox) -> bool {
        if b.is_empty() {
            return true;
        }
        if !b.is_subset_of(&self.bounding_box()) {
            return false;
        }
        match self.notch() {
            None => true,
            Some(n) => b.is_disjoint(&n),
        }
    }

    /// True when `other` is a subset of this region.
    pub fn contains_region(&self, other: &ElementaryRegion) -> bool {
        other.boxes().iter().all(|b| self.contains_box(b))
    }

    pub fn intersects_box(&self, b: &IBox) -> bool {
        self.boxes().iter().any(|rb| !rb.is_disjoint(b))
    }

    pub fn points(&self) -> PointSet {
        let pts = self
            .bounding_box()
            .points()
            .into_iter()
            .filter(|p| self.contains(p))
            .map(LatticePoint);
        PointSet::from_sorted_unchecked(self.dim(), pts.collect())
    }

    pub fn cardinality(&self) -> u64 {
        match &self.carve {
            None => self.bounding_box().cardinality(),
            Some(_) => self.points().len() as u64,
        }
    }

    pub fn descriptor(&self) -> RegionDescriptor {
        RegionDescriptor {
            center: self.center.clone(),
            size: self.size,
            carve: self.carve.clone(),
            points_hash: self.points().content_hash(),
        }
    }
}

/// JSON shape of a region: `{center, size, carve, points_hash}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub center: LatticePoint,
    pub size: u64,
    pub carve: Option<SignPattern>,
    pub points_hash: String,
}

/// `E_N^0`: the cube plus one carved region per admissible pattern, with point
/// sets deduplicated.
pub fn enumerate_elementary_regions(n: u64, d: usize) -> Result<Vec<ElementaryRegion>> {
    if n == 0 || d == 0 {
        return Err(Error::input("elementary regions need N >= 1 and d >= 1"));
    }
    let origin = LatticePoint::origin(d);
    let mut out = vec![ElementaryRegion::cube(origin.clone(), n)];
    let mut seen = std::collections::HashSet::new();
    seen.insert(out[0].points().content_hash());
    for pat in SignPattern::all(d) {
        let r = ElementaryRegion::carved(origin.clone(), n, pat)?;
        if seen.insert(r.points().content_hash()) {
            out.push(r);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Point sets
// ---------------------------------------------------------------------------

/// Finite set of lattice points in lexicographic order with an index map.
#[derive(Clone, Debug)]
pub struct PointSet {
    dim: usize,
    points: Vec<LatticePoint>,
    index: HashMap<LatticePoint, usize>,
}

impl PartialEq for PointSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points
    }
}

impl PointSet {
    pub fn from_points<I: IntoIterator<Item = LatticePoint>>(dim: usize, pts: I) -> Result<Self> {
        let mut v: Vec<LatticePoint> = pts.into_iter().collect();
        if let Some(bad) = v.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        v.sort();
        v.dedup();
        Ok(Self::from_sorted_unchecked(dim, v))
    }

    fn from_sorted_unchecked(dim: usize, points: Vec<LatticePoint>) -> Self {
        let index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        PointSet { dim, points, index }
    }

    pub fn empty(dim: usize) -> Self {
        Self::from_sorted_unchecked(dim, Vec::new())
    }

    pub fn cube(center: &LatticePoint, n: u64) -> Self {
        ElementaryRegion::cube(center.clone(), n).points()
    }

    pub fn from_box(b: &IBox) -> Self {
        Self::from_sorted_unchecked(b.dim(), b.points().into_iter().map(LatticePoint).collect())
    }

    /// Integer interval `[a, b]` in one dimension.
    pub fn interval(a: i64, b: i64) -> Self {
        Self::from_sorted_unchecked(1, (a..=b).map(|i| LatticePoint(vec![i])).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatticePoint> {
        self.points.iter()
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        self.index.contains_key(p)
    }

    pub fn contains_raw(&self, p: &[i64]) -> bool {
        // HashMap<LatticePoint, _> cannot be probed with a slice directly
        self.index.contains_key(&LatticePoint(p.to_vec()))
    }

    pub fn index_of(&self, p: &LatticePoint) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn translate(&self, t: &LatticePoint) -> Self {
        // translation preserves lexicographic order
        Self::from_sorted_unchecked(self.dim, self.points.iter().map(|p| p.translate(t)).collect())
    }

    pub fn difference(&self, other: &PointSet) -> Self {
        Self::from_sorted_unchecked(
            self.dim,
            self.points
                .iter()
                .filter(|p| !other.contains(p))
                .cloned()
                .collect(),
        )
    }

    pub fn intersection(&self, other: &PointSet) -> Self {
        Self::from_sorted_unchecked(
            self.dim,
            self.points
                .iter()
                .filter(|p| other.contains(p))
                .cloned()
                .collect(),
        )
    }

    pub fn union(&self, other: &PointSet) -> Self {
        let mut v = self.points.clone();
        v.extend(other.points.iter().cloned());
        v.sort();
        v.dedup();
        Self::from_sorted_unchecked(self.dim, v)
    }

    pub fn is_subset_of(&self, other: &PointSet) -> bool {
        self.points.iter().all(|p| other.contains(p))
    }

    pub fn is_disjoint(&self, other: &PointSet) -> bool {
        self.points.iter().all(|p| !other.contains(p))
    }

    /// Sup-norm diameter; the per-axis ranges give it exactly.
    pub fn diameter(&self) -> u64 {
        if self.points.is_empty() {
            return 0;
        }
        (0..self.dim)
            .map(|a| {
                let lo = self.points.iter().map(|p| p.0[a]).min().unwrap();
                let hi = self.points.iter().map(|p| p.0[a]).max().unwrap();
                (hi - lo) as u64
            })
            .max()
            .unwrap_or(0)
    }

    pub fn bounding_box(&self) -> Option<IBox> {
        if self.points.is_empty() {
            return None;
        }
        let lo = (0..self.dim)
            .map(|a| self.points.iter().map(|p| p.0[a]).min().unwrap())
            .collect();
        let hi = (0..self.dim)
            .map(|a| self.points.iter().map(|p| p.0[a]).max().unwrap())
            .collect();
        Some(IBox { lo, hi })
    }

    /// `dist(p, self)`, `None` for the empty set.
    pub fn distance_to(&self, p: &[i64]) -> Option<u64> {
        self.points.iter().map(|q| sup_dist_raw(p, &q.0)).min()
    }

    /// Stable SHA-256 of the lexicographic point list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for p in &self.points {
            for c in &p.0 {
                h.update(c.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub diam_a: u64,
    /// `None` when `B` is empty (the infimum over an empty set).
    pub dist_a_b: Option<u64>,
}

/// `diam(A)` and `dist(A, B)` in the sup-norm.
pub fn region_metrics(a: &PointSet, b: &PointSet) -> Result<RegionMetrics> {
    if a.is_empty() {
        return Err(Error::input("region_metrics needs a nonempty A"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let dist = a.iter().filter_map(|p| b.distance_to(&p.0)).min();
    Ok(RegionMetrics {
        diam_a: a.diameter(),
        dist_a_b: dist,
    })
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

/// A set that windows must fit into.
pub trait Domain {
    fn dim(&self) -> usize;
    fn contains(&self, p: &[i64]) -> bool;
    fn contains_region(&self, w: &ElementaryRegion) -> bool {
        w.points().iter().all(|p| self.contains(&p.0))
    }
}

impl Domain for PointSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn contains(&self, p: &[i64]) -> bool {
        self.contains_raw(p)
    }
}

/// An elementary region with boxes punched out of it. Containment tests are
/// analytic, so large domains cost nothing to query.
#[derive(Clone, Debug)]
pub struct PunchedRegion {
    pub outer: ElementaryRegion,
    pub holes: Vec<IBox>,
}

impl Domain for PunchedRegion {
    fn dim(&self) -> usize {
        self.outer.dim()
    }

    fn contains(&self, p: &[i64]) -> bool {
        self.outer.contains(p) && !self.holes.iter().any(|h| h.contains(p))
    }

    fn contains_region(&self, w: &ElementaryRegion) -> bool {
        if !self.outer.contains_region(w) {
            return false;
        }
        let wb = w.boxes();
        self.holes
            .iter()
            .all(|h| wb.iter().all(|b| b.is_disjoint(h)))
    }
}

/// Offsets `t` with `|t| <= r`, sorted by sup-norm then lexicographically.
pub(crate) fn offsets_by_distance(d: usize, r: u64) -> Vec<Vec<i64>> {
    let mut v = IBox::cube(&vec![0; d], r).points();
    v.sort_by(|a, b| {
        let na = sup_dist_raw(a, &vec![0; d]);
        let nb = sup_dist_raw(b, &vec![0; d]);
        na.cmp(&nb).then_with(|| a.cmp(b))
    });
    v
}

/// Largest integer `h` with `h < M/2`, i.e. the radius of the ball that must
/// stay inside a window of size `M`.
pub(crate) fn half_ball_radius(m: u64) -> i64 {
    if m == 0 {
        -1
    } else {
        ((m - 1) / 2) as i64
    }
}

fn window_admissible<D: Domain + ?Sized>(k: &[i64], domain: &D, w: &ElementaryRegion, h: i64) -> bool {
    if !w.contains(k) || !domain.contains_region(w) {
        return false;
    }
    if h < 0 {
        return true;
    }
    IBox::cube(k, h as u64)
        .points()
        .iter()
        .all(|q| !domain.contains(q) || w.contains(q))
}

/// Find `W ∈ E_M` with `k ∈ W ⊆ domain` and `dist(k, domain \ W) >= M/2`.
///
/// Search order: the full cube first, then carved shapes in enumeration
/// order; within a shape, translates by increasing sup-distance from `k`.
pub fn find_window<D: Domain + ?Sized>(k: &LatticePoint, domain: &D, m: u64) -> Option<ElementaryRegion> {
    find_window_with(k, domain, m, &window_search_table(k.dim(), m))
}

/// Precomputed shape list and offsets for repeated window searches.
pub(crate) struct WindowSearch {
    shapes: Vec<Option<SignPattern>>,
    offsets: Vec<Vec<i64>>,
}

pub(crate) fn window_search_table(d: usize, m: u64) -> WindowSearch {
    let mut shapes = vec![None];
    shapes.extend(SignPattern::all(d).into_iter().map(Some));
    WindowSearch {
        shapes,
        offsets: offsets_by_distance(d, m),
    }
}

pub(crate) fn find_window_with<D: Domain + ?Sized>(
    k: &LatticePoint,
    domain: &D,
    m: u64,
    table: &WindowSearch,
) -> Option<ElementaryRegion> {
    if !domain.contains(&k.0) || m == 0 {
        return None;
    }
    let h = half_ball_radius(m);
    for shape in &table.shapes {
        for off in &table.offsets {
            let center = LatticePoint(k.0.iter().zip(off).map(|(a, b)| a + b).collect());
            let w = ElementaryRegion {
                center,
                size: m,
                carve: shape.clone(),
            };
            if window_admissible(&k.0, domain, &w, h) {
                return Some(w);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Region adjustment near the boundary
// ---------------------------------------------------------------------------

/// `ceil(n^{1/(10d)})`: the smallest integer `r` with `r^{10d} >= n`.
pub fn scale_root(n: u64, d: usize) -> u64 {
    let e = (10 * d) as u32;
    let mut r = 1u64;
    loop {
        match (r as u128).checked_pow(e) {
            Some(p) if p < n as u128 => r += 1,
            _ => return r,
        }
    }
}

/// Desk-scale inner scale `max(ceil(n^{1/(10d)}), N1)`, used for the
/// diameter allowance of the inner region.
pub fn inner_scale(n: u64, n1: u64, d: usize) -> u64 {
    scale_root(n, d).max(n1)
}

/// Lower bound on the adjusted size: `max(ceil(N̄/4), 4 N1)`.
pub fn size_floor(n_bar: u64, n1: u64) -> u64 {
    n_bar.div_ceil(4).max(4 * n1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjustCase {
    /// `n + Λ ⊆ Q`: nothing to shrink.
    Interior,
    /// Shrunk outer region, inner cube unchanged.
    Shrunk,
    /// Shrunk outer region and an inner region grown out to the boundary.
    Collared,
}

/// `Λ_new` together with `Λ̄_new`.
#[derive(Clone, Debug)]
pub struct RegionPair {
    pub outer: ElementaryRegion,
    pub inner: PointSet,
}

#[derive(Clone, Debug)]
pub struct RegionAdjustment {
    pub pair: RegionPair,
    pub case: AdjustCase,
    /// The adjusted size `Ñ`.
    pub size: u64,
    /// Radius of the original inner cube, `ceil(N̄^{1/(10d)})`.
    pub inner_radius: u64,
    /// Smallest size the search was allowed to shrink to.
    pub floor: u64,
}

/// Shrink `n + [-N̄, N̄]^d` into `Q` and grow the inner cube
/// `n + [-r, r]^d` so that every point of the annulus between them owns an
/// `N1`-window.
///
/// The returned pair satisfies, with `Ñ` the adjusted size:
/// `Λ_new ⊆ (n+Λ) ∩ Q`, `(n+Λ̄) ∩ Q ⊆ Λ̄_new ⊆ Λ_new`,
/// `dist(n, Q \ Λ_new) >= Ñ/2`, `diam(Λ̄_new) <= 4·max(ceil(Ñ^{1/(10d)}), N1)`,
/// and every `k ∈ Λ_new \ Λ̄_new` admits a window in `Λ_new \ Λ̄_new`.
pub fn adjust_region(
    n: &LatticePoint,
    q: &ElementaryRegion,
    n_bar: u64,
    n1: u64,
) -> Result<RegionAdjustment> {
    adjust_region_with_floor(n, q, n_bar, n1, size_floor(n_bar, n1))
}

/// [`adjust_region`] with an explicit lower bound on `Ñ`.
pub fn adjust_region_with_floor(
    n: &LatticePoint,
    q: &ElementaryRegion,
    n_bar: u64,
    n1: u64,
    floor: u64,
) -> Result<RegionAdjustment> {
    let d = n.dim();
    if q.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: q.dim(),
        });
    }
    if n1 == 0 || n_bar == 0 {
        return Err(Error::input("adjust_region needs N̄ >= 1 and N1 >= 1"));
    }
    if !q.contains(&n.0) {
        return Err(Error::input(format!("{n} is not in the region")));
    }
    let floor = floor.max(1);
    let top = n_bar.min(q.size);
    if floor > top {
        return Err(Error::Infeasible {
            condition: "size floor".into(),
            detail: format!("floor {floor} exceeds min(N̄, N) = {top}"),
        });
    }
    let r = scale_root(n_bar, d);
    let outer_cube = IBox::cube(&n.0, n_bar);
    let core = IBox::cube(&n.0, r);
    let interior = q.contains_box(&outer_cube);

    let mut last_failure = Error::Infeasible {
        condition: "centering".into(),
        detail: "no elementary region of admissible size fits inside Q around n".into(),
    };
    for size in (floor..=top).rev() {
        let Some(outer) = shrink_candidate(n, q, n_bar, size, &outer_cube) else {
            continue;
        };
        match grow_inner(n, &outer, &core, size, n1) {
            Ok((inner, grown)) => {
                let case = if grown {
                    AdjustCase::Collared
                } else if interior && size == n_bar && outer.carve.is_none() && outer.center == *n {
                    AdjustCase::Interior
                } else {
                    AdjustCase::Shrunk
                };
                return Ok(RegionAdjustment {
                    pair: RegionPair { outer, inner },
                    case,
                    size,
                    inner_radius: r,
                    floor,
                });
            }
            Err(e) => last_failure = e,
        }
    }
    Err(last_failure)
}

/// First region of size `size` (in the documented preference order) that
/// sits inside `(n+Λ) ∩ Q`, contains `n`, and keeps `Q`'s points within
/// `size/2` of `n`.
fn shrink_candidate(
    n: &LatticePoint,
    q: &ElementaryRegion,
    n_bar: u64,
    size: u64,
    outer_cube: &IBox,
) -> Option<ElementaryRegion> {
    let d = n.dim();
    let slack = (n_bar - size) as i64;
    let s = size as i64;
    let qbb = q.bounding_box();
    let notch_corner = q.carve.as_ref().map(|_| &q.center.0);

    // candidate center coordinates per axis, as offsets from n
    let mut axis_offsets: Vec<Vec<i64>> = Vec::with_capacity(d);
    for a in 0..d {
        let lo = qbb.lo[a] + s;
        let hi = qbb.hi[a] - s;
        let mut c = vec![n.0[a], n.0[a].clamp(lo.min(hi), hi.max(lo)), lo, hi];
        if let Some(corner) = notch_corner {
            c.extend([corner[a], corner[a] + s, corner[a] - 1 - s]);
        }
        let mut offs: Vec<i64> = c
            .into_iter()
            .map(|x| x - n.0[a])
            .filter(|o| o.abs() <= slack && o.abs() <= s)
            .collect();
        offs.sort_by_key(|o| (o.abs(), *o));
        offs.dedup();
        if offs.is_empty() {
            return None;
        }
        axis_offsets.push(offs);
    }
    let mut combos: Vec<Vec<i64>> = vec![vec![]];
    for offs in &axis_offsets {
        combos = combos
            .into_iter()
            .flat_map(|pre| {
                offs.iter().map(move |o| {
                    let mut v = pre.clone();
                    v.push(*o);
                    v
                })
            })
            .collect();
    }
    combos.sort_by(|a, b| {
        let na = a.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        let nb = b.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        na.cmp(&nb).then_with(|| a.cmp(b))
    });

    let h = half_ball_radius(size);
    let ball = IBox::cube(&n.0, h.max(0) as u64);
    let q_near: Vec<IBox> = q
        .boxes()
        .iter()
        .map(|b| b.intersect(&ball))
        .filter(|b| !b.is_empty())
        .collect();

    let mut shapes = vec![None];
    shapes.extend(SignPattern::all(d).into_iter().map(Some));
    for shape in &shapes {
        for off in &combos {
            let center = LatticePoint(n.0.iter().zip(off).map(|(a, b)| a + b).collect());
            let cand = ElementaryRegion {
                center,
                size,
                carve: shape.clone(),
            };
            if !cand.bounding_box().is_subset_of(outer_cube) {
                continue;
            }
            if !cand.contains(&n.0) || !q.contains_region(&cand) {
                continue;
            }
            if h >= 0 && !q_near.iter().all(|b| cand.contains_box(b)) {
                continue;
            }
            return Some(cand);
        }
    }
    None
}

/// Grow the inner box until every annulus point has an `N1`-window. Returns
/// the inner point set and whether any growth happened.
fn grow_inner(
    n: &LatticePoint,
    outer: &ElementaryRegion,
    core: &IBox,
    size: u64,
    n1: u64,
) -> Result<(PointSet, bool)> {
    let d = n.dim();
    let h = half_ball_radius(size);
    if core.lo.iter().zip(&n.0).any(|(l, c)| c - l > h) {
        return Err(Error::Infeasible {
            condition: "centering".into(),
            detail: format!(
                "inner cube radius {} is not below Ñ/2 = {}",
                n.0[0] - core.lo[0],
                size as f64 / 2.0
            ),
        });
    }
    let outer_points = outer.points();
    let table = window_search_table(d, n1);
    let mut inner_box = core.intersect(&outer.bounding_box());
    let mut grown = false;
    loop {
        let domain = PunchedRegion {
            outer: outer.clone(),
            holes: vec![inner_box.clone()],
        };
        let failures: Vec<&LatticePoint> = outer_points
            .iter()
            .filter(|k| !inner_box.contains(&k.0))
            .filter(|k| find_window_with(k, &domain, n1, &table).is_none())
            .collect();
        if failures.is_empty() {
            break;
        }
        for k in failures {
            inner_box = inner_box.hull(&IBox {
                lo: k.0.clone(),
                hi: k.0.clone(),
            });
        }
        grown = true;
    }
    let inner = PointSet::from_sorted_unchecked(
        d,
        outer_points
            .iter()
            .filter(|p| inner_box.contains(&p.0))
            .cloned()
            .collect(),
    );
    let allowance = 4 * inner_scale(size, n1, d);
    if inner.diameter() > allowance {
        return Err(Error::Infeasible {
            condition: "inner diameter".into(),
            detail: format!(
                "inner region diameter {} exceeds 4·max(ceil(Ñ^(1/10d)), N1) = {allowance}",
                inner.diameter()
            ),
        });
    }
    Ok((inner, grown))
}

/// A condition of the region adjustment that an exhaustive scan found broken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryViolation {
    pub condition: String,
    pub detail: String,
}

/// Re-verify an adjustment by brute-force point scans, without using the
/// box algebra of [`adjust_region`].
pub fn check_region_pair(
    n: &LatticePoint,
    q: &ElementaryRegion,
    n_bar: u64,
    n1: u64,
    adj: &RegionAdjustment,
) -> Vec<GeometryViolation> {
    let mut out = Vec::new();
    let mut fail = |c: &str, detail: String| {
        out.push(GeometryViolation {
            condition: c.to_string(),
            detail,
        })
    };
    let d = n.dim();
    let outer = adj.pair.outer.points();
    let inner = &adj.pair.inner;
    let q_pts = q.points();
    let lambda = PointSet::cube(n, n_bar);
    let r = scale_root(n_bar, d);
    let lambda_bar_in_q = PointSet::cube(n, r).intersection(&q_pts);
    let size = adj.pair.outer.size;

    if size < adj.floor || size > n_bar {
        fail("size", format!("Ñ = {size} outside [{}, {n_bar}]", adj.floor));
    }
    if !outer.is_subset_of(&lambda) || !outer.is_subset_of(&q_pts) {
        fail("containment", "Λ_new is not inside (n+Λ) ∩ Q".into());
    }
    if !lambda_bar_in_q.is_subset_of(inner) {
        fail("containment", "(n+Λ̄) ∩ Q is not inside Λ̄_new".into());
    }
    if !inner.is_subset_of(&outer) {
        fail("inner", "Λ̄_new is not inside Λ_new".into());
    }
    if !outer.contains(n) {
        fail("centering", format!("{n} not in Λ_new"));
    }
    let rest = q_pts.difference(&outer);
    if let Some(dist) = rest.distance_to(&n.0) {
        if 2 * dist < size {
            fail("centering", format!("dist(n, Q \\ Λ_new) = {dist} < Ñ/2"));
        }
    }
    let allowance = 4 * inner_scale(size, n1, d);
    if inner.diameter() > allowance {
        fail("inner diameter", format!("diam(Λ̄_new) = {} > {allowance}", inner.diameter()));
    }
    let annulus = outer.difference(inner);
    for k in annulus.iter() {
        if !brute_force_window_exists(k, &annulus, n1) {
            fail("window availability", format!("no {n1}-window for {k}"));
        }
    }
    out
}

fn brute_force_window_exists(k: &LatticePoint, domain: &PointSet, m: u64) -> bool {
    let d = k.dim();
    let mut shapes = vec![None];
    shapes.extend(SignPattern::all(d).into_iter().map(Some));
    let near: Vec<&LatticePoint> = domain
        .iter()
        .filter(|p| 2 * sup_dist_raw(&p.0, &k.0) < m)
        .collect();
    for c in IBox::cube(&k.0, m).points() {
        for shape in &shapes {
            let w = ElementaryRegion {
                center: LatticePoint(c.clone()),
                size: m,
                carve: shape.clone(),
            };
            let pts = w.points();
            if pts.contains(k) && pts.is_subset_of(domain) && near.iter().all(|p| pts.contains(p)) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[i64]) -> LatticePoint {
        LatticePoint(v.to_vec())
    }

    #[test]
    fn sup_distance_examples() {
        assert_eq!(sup_distance(&p(&[0, 0]), &p(&[0, 0])).unwrap(), 0);
        assert_eq!(sup_distance(&p(&[1, -3]), &p(&[2, 4])).unwrap(), 7);
        assert_eq!(sup_distance(&p(&[5]), &p(&[-5])).unwrap(), 10);
        assert!(sup_distance(&p(&[5]), &p(&[1, 2])).is_err());
    }

    #[test]
    fn region_counts() {
        assert_eq!(enumerate_elementary_regions(1, 1).unwrap().len(), 1);
        assert_eq!(enumerate_elementary_regions(2, 2).unwrap().len(), 5);
        assert_eq!(enumerate_elementary_regions(1, 3).unwrap().len(), 21);
        assert!(enumerate_elementary_regions(0, 2).is_err());
    }

    #[test]
    fn carved_cardinality_matches_predicate_count() {
        for region in enumerate_elementary_regions(2, 3).unwrap() {
            let mut count = 0;
            for q in IBox::cube(&[0, 0, 0], 2).points() {
                let removed = region.carve.as_ref().is_some_and(|pat| {
                    pat.entries().iter().zip(&q).all(|(s, x)| match s {
                        Sign::Lt => *x < 0,
                        Sign::Gt => *x > 0,
                        Sign::Free => true,
                    })
                });
                if !removed {
                    count += 1;
                }
            }
            assert_eq!(region.cardinality(), count);
            assert!(region.points().diameter() <= 4);
        }
    }

    #[test]
    fn pattern_needs_two_constraints() {
        assert!(SignPattern::new(vec![Sign::Lt, Sign::Free]).is_err());
        assert!(SignPattern::new(vec![Sign::Lt, Sign::Gt]).is_ok());
    }

    #[test]
    fn metrics_examples() {
        let zero = PointSet::from_points(2, [p(&[0, 0])]).unwrap();
        let m = region_metrics(&zero, &zero).unwrap();
        assert_eq!((m.diam_a, m.dist_a_b), (0, Some(0)));
        let cube = PointSet::cube(&p(&[0, 0]), 2);
        assert_eq!(region_metrics(&cube, &zero).unwrap().diam_a, 4);
        let far = PointSet::from_points(2, [p(&[3, 1])]).unwrap();
        assert_eq!(region_metrics(&zero, &far).unwrap().dist_a_b, Some(3));
        assert!(region_metrics(&PointSet::empty(2), &zero).is_err());
    }

    #[test]
    fn box_decomposition_covers_carved_region() {
        let pat = SignPattern::new(vec![Sign::Lt, Sign::Gt, Sign::Free]).unwrap();
        let r = ElementaryRegion::carved(p(&[1, -2, 0]), 3, pat).unwrap();
        let from_boxes: PointSet = PointSet::from_points(
            3,
            r.boxes().iter().flat_map(|b| b.points()).map(LatticePoint),
        )
        .unwrap();
        assert_eq!(from_boxes, r.points());
    }

    #[test]
    fn window_interior_point_gets_cube() {
        let dom = PointSet::cube(&p(&[0, 0]), 10);
        let w = find_window(&p(&[0, 0]), &dom, 2).unwrap();
        assert_eq!(w, ElementaryRegion::cube(p(&[0, 0]), 2));
    }

    #[test]
    fn window_none_without_room() {
        let dom = PointSet::from_points(1, [p(&[0])]).unwrap();
        assert!(find_window(&p(&[0]), &dom, 2).is_none());
    }

    #[test]
    fn scale_root_is_ceiling() {
        assert_eq!(scale_root(1, 1), 1);
        assert_eq!(scale_root(24, 1), 2);
        assert_eq!(scale_root(1024, 1), 2);
        assert_eq!(scale_root(1025, 1), 3);
        assert_eq!(scale_root(40, 3), 2);
    }

    #[test]
    fn descriptor_json_shape() {
        let r = ElementaryRegion::cube(p(&[0, 1]), 2);
        let v = serde_json::to_value(r.descriptor()).unwrap();
        assert_eq!(v["center"], serde_json::json!([0, 1]));
        assert_eq!(v["size"], 2);
        assert!(v["carve"].is_null());
        assert_eq!(v["points_hash"].as_str().unwrap().len(), 64);
        let pat = SignPattern::new(vec![Sign::Lt, Sign::Gt]).unwrap();
        let c = ElementaryRegion::carved(p(&[0, 0]), 1, pat).unwrap();
        let v = serde_json::to_value(c.descriptor()).unwrap();
        assert_eq!(v["carve"], serde_json::json!(["lt", "gt"]));
    }
}
