//! Box rasterization into per-class bit planes and the pixel observation matrix.
//!
//! A [`RasterStack`] stores one annotator's view of one image as a single
//! flat bit vector of `C * H * W` bits in channel-major, then row-major
//! order: bit `c * H * W + y * W + x` is set iff pixel `(x, y)` lies inside
//! at least one of the annotator's boxes of class `c`. The same flattened
//! index is the unit id of the observation matrix.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;

use crate::datamodel::{ImageRef, LabeledBox};
use crate::error::{Error, Result};
use crate::rng;

pub const WORD_BITS: usize = 64;

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Set bits `[start, end)`.
pub(crate) fn set_range(words: &mut [u64], start: usize, end: usize) {
    if start >= end {
        return;
    }
    let (first, last) = (start / WORD_BITS, (end - 1) / WORD_BITS);
    let head = !0u64 << (start % WORD_BITS);
    let tail = !0u64 >> (WORD_BITS - 1 - (end - 1) % WORD_BITS);
    if first == last {
        words[first] |= head & tail;
        return;
    }
    words[first] |= head;
    for w in &mut words[first + 1..last] {
        *w = !0;
    }
    words[last] |= tail;
}

/// Clear every bit outside `[start, end)`.
fn keep_range(words: &mut [u64], start: usize, end: usize) {
    let mut window = vec![0u64; words.len()];
    set_range(&mut window, start, end);
    for (w, m) in words.iter_mut().zip(window) {
        *w &= m;
    }
}

pub(crate) fn count_range(words: &[u64], start: usize, end: usize) -> u64 {
    let mut window = vec![0u64; words.len()];
    set_range(&mut window, start, end);
    words
        .iter()
        .zip(&window)
        .map(|(w, m)| u64::from((w & m).count_ones()))
        .sum()
}

fn get_bit(words: &[u64], i: usize) -> bool {
    words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterStack {
    pub image_id: String,
    pub annotator_id: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<String>,
    /// Flattened channel planes, `words_for(C * H * W)` words.
    pub bits: Vec<u64>,
    pub labeled_pixel_count: Vec<u64>,
}

impl RasterStack {
    pub fn channel_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn channel_count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_set(&self, channel: usize, x: u32, y: u32) -> bool {
        let i = channel * self.channel_len() + y as usize * self.width as usize + x as usize;
        get_bit(&self.bits, i)
    }

    /// Binary PGM (P5) image of one channel; labeled pixels are white.
    pub fn to_pgm(&self, channel: usize) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        let base = channel * self.channel_len();
        out.extend((0..self.channel_len()).map(|i| if get_bit(&self.bits, base + i) { 255 } else { 0 }));
        out
    }
}

/// Paint one annotator's boxes on one image into per-class bit planes.
/// Overlapping boxes of the same class are unioned.
pub fn rasterize(
    image: &ImageRef,
    annotator_id: &str,
    boxes: &[&LabeledBox],
    labels: &[String],
) -> Result<RasterStack> {
    let width = image.width as usize;
    let plane = image.pixel_count();
    let mut bits = vec![0u64; words_for(plane * labels.len())];
    for b in boxes {
        let Some(c) = labels.iter().position(|l| *l == b.label) else {
            return Err(Error::Vocabulary(format!(
                "label `{}` not in vocabulary {labels:?}",
                b.label
            )));
        };
        if b.image_id != image.id || b.annotator_id != annotator_id {
            return Err(Error::Consistency(format!(
                "box for ({}, {}) passed to raster of ({}, {annotator_id})",
                b.image_id, b.annotator_id, image.id
            )));
        }
        if !b.bbox.fits(image.width, image.height) {
            return Err(Error::Consistency(format!(
                "box {:?} exceeds {}x{} image `{}`",
                b.bbox, image.width, image.height, image.id
            )));
        }
        let base = c * plane;
        let (x0, x1) = (b.bbox.x as usize, b.bbox.right() as usize);
        for y in b.bbox.y as usize..b.bbox.bottom() as usize {
            let row = base + y * width;
            set_range(&mut bits, row + x0, row + x1);
        }
    }
    let labeled_pixel_count = (0..labels.len())
        .map(|c| count_range(&bits, c * plane, (c + 1) * plane))
        .collect();
    Ok(RasterStack {
        image_id: image.id.clone(),
        annotator_id: annotator_id.to_string(),
        width: image.width,
        height: image.height,
        labels: labels.to_vec(),
        bits,
        labeled_pixel_count,
    })
}

/// Number of units kept out of `total` when dropping `drop_fraction`.
pub fn retained_count(total: usize, drop_fraction: f64) -> usize {
    (((1.0 - drop_fraction) * total as f64).round() as usize).min(total)
}

/// Bit mask over `total` units with `retained_count(total, drop_fraction)`
/// bits set. The dropped units are the first `total - retained` positions of
/// a partial Fisher-Yates shuffle of `0..total` driven by `seed`; the result
/// depends only on `(seed, total, drop_fraction)`.
pub fn retained_mask(total: usize, drop_fraction: f64, seed: u64) -> Vec<u64> {
    let mut mask = vec![0u64; words_for(total)];
    set_range(&mut mask, 0, total);
    let dropped = total - retained_count(total, drop_fraction);
    if dropped == 0 {
        return mask;
    }
    let mut rng = rng::seeded(seed);
    let mut perm: Vec<u32> = (0..total as u32).collect();
    for i in 0..dropped {
        let j = i + rng.random_range(0..(total - i) as u64) as usize;
        perm.swap(i, j);
        let unit = perm[i] as usize;
        mask[unit / WORD_BITS] &= !(1u64 << (unit % WORD_BITS));
    }
    mask
}

/// One rater's value for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observation {
    Unlabeled,
    Labeled,
    Missing,
}

/// Retained pixel-channel units of one image rated by every annotator.
///
/// Values are kept bit-packed: each participating rater contributes the
/// flattened bits of its [`RasterStack`]; a non-participating rater is
/// `None` and reads as [`Observation::Missing`] on every unit.
#[derive(Debug, Clone)]
pub struct ObservationMatrix {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<String>,
    pub raters: Vec<String>,
    pub seed: u64,
    pub drop_fraction: f64,
    /// Channel the matrix is restricted to, if any.
    pub class: Option<usize>,
    values: Vec<Option<Arc<[u64]>>>,
    mask: Vec<u64>,
    unit_count: usize,
}

impl ObservationMatrix {
    pub fn total_units(&self) -> usize {
        self.width as usize * self.height as usize * self.labels.len()
    }

    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn mask(&self) -> &[u64] {
        &self.mask
    }

    /// Packed values of rater `r`, or `None` if the rater is missing.
    pub fn rater_bits(&self, r: usize) -> Option<&[u64]> {
        self.values[r].as_deref()
    }

    pub fn is_missing(&self, r: usize) -> bool {
        self.values[r].is_none()
    }

    pub fn participant_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Retained flattened unit indices, ascending.
    pub fn units(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.unit_count);
        for (wi, &w) in self.mask.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push((wi * WORD_BITS) as u64 + u64::from(w.trailing_zeros()));
                w &= w - 1;
            }
        }
        out
    }

    pub fn value(&self, unit: u64, rater: usize) -> Observation {
        match &self.values[rater] {
            None => Observation::Missing,
            Some(bits) if get_bit(bits, unit as usize) => Observation::Labeled,
            Some(_) => Observation::Unlabeled,
        }
    }

    /// Same units, with rater `id` marked missing everywhere.
    pub fn without_rater(&self, id: &str) -> Result<ObservationMatrix> {
        let Some(r) = self.raters.iter().position(|x| x == id) else {
            return Err(Error::Config(format!("unknown rater `{id}`")));
        };
        let mut out = self.clone();
        out.values[r] = None;
        Ok(out)
    }
}

/// Flatten per-annotator stacks of one image into an observation matrix and
/// drop a seeded random `drop_fraction` of the units. Annotators mapped to
/// `false` (or absent) in `participation` become missing raters.
pub fn build_observation_matrix(
    stacks: &[RasterStack],
    participation: &BTreeMap<String, bool>,
    drop_fraction: f64,
    seed: u64,
) -> Result<ObservationMatrix> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Config(format!("drop_fraction {drop_fraction} outside [0, 1)")));
    }
    let Some(first) = stacks.first() else {
        return Err(Error::Consistency("no raster stacks supplied".into()));
    };
    for s in stacks {
        if s.image_id != first.image_id
            || (s.width, s.height) != (first.width, first.height)
            || s.labels != first.labels
        {
            return Err(Error::Consistency(format!(
                "stack ({}, {}) {}x{} {:?} does not match ({}, {}) {}x{} {:?}",
                s.image_id,
                s.annotator_id,
                s.width,
                s.height,
                s.labels,
                first.image_id,
                first.annotator_id,
                first.width,
                first.height,
                first.labels
            )));
        }
    }
    let total = first.channel_len() * first.labels.len();
    let mask = retained_mask(total, drop_fraction, seed);
    let values = stacks
        .iter()
        .map(|s| {
            participation
                .get(&s.annotator_id)
                .copied()
                .unwrap_or(false)
                .then(|| Arc::from(s.bits.as_slice()))
        })
        .collect();
    Ok(ObservationMatrix {
        image_id: first.image_id.clone(),
        width: first.width,
        height: first.height,
        labels: first.labels.clone(),
        raters: stacks.iter().map(|s| s.annotator_id.clone()).collect(),
        seed,
        drop_fraction,
        class: None,
        values,
        unit_count: retained_count(total, drop_fraction),
        mask,
    })
}

/// Keep only the units of one class channel.
pub fn restrict_to_class(matrix: &ObservationMatrix, class: &str) -> Result<ObservationMatrix> {
    let Some(c) = matrix.labels.iter().position(|l| l == class) else {
        return Err(Error::Vocabulary(format!(
            "class `{class}` not in vocabulary {:?}",
            matrix.labels
        )));
    };
    let plane = matrix.width as usize * matrix.height as usize;
    let mut out = matrix.clone();
    keep_range(&mut out.mask, c * plane, (c + 1) * plane);
    out.unit_count = out.mask.iter().map(|w| w.count_ones() as usize).sum();
    out.class = Some(c);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::BBox;
    use proptest::prelude::*;

    fn labels() -> Vec<String> {
        vec!["person".into(), "vehicle".into(), "bicycle".into()]
    }

    fn lb(ann: &str, label: &str, b: BBox) -> LabeledBox {
        LabeledBox::new("img", ann, label, b)
    }

    #[test]
    fn single_box_fills_its_channel() {
        let img = ImageRef::new("img", 100, 100);
        let b = lb("a", "person", BBox::new(3, 4, 10, 10));
        let s = rasterize(&img, "a", &[&b], &labels()).unwrap();
        assert_eq!(s.labeled_pixel_count, vec![100, 0, 0]);
        assert!(s.is_set(0, 3, 4) && s.is_set(0, 12, 13));
        assert!(!s.is_set(0, 13, 13) && !s.is_set(0, 2, 4));
    }

    #[test]
    fn overlapping_boxes_union() {
        let img = ImageRef::new("img", 100, 100);
        let a = lb("a", "vehicle", BBox::new(0, 0, 10, 10));
        let b = lb("a", "vehicle", BBox::new(5, 0, 10, 10));
        let s = rasterize(&img, "a", &[&a, &b], &labels()).unwrap();
        assert_eq!(s.labeled_pixel_count, vec![0, 150, 0]);
    }

    #[test]
    fn no_boxes_no_pixels() {
        let img = ImageRef::new("img", 7, 5);
        let s = rasterize(&img, "a", &[], &labels()).unwrap();
        assert_eq!(s.labeled_pixel_count, vec![0, 0, 0]);
        assert!(s.bits.iter().all(|w| *w == 0));
    }

    #[test]
    fn unknown_label_rejected() {
        let img = ImageRef::new("img", 10, 10);
        let b = lb("a", "cart", BBox::new(0, 0, 2, 2));
        assert!(matches!(rasterize(&img, "a", &[&b], &labels()), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn pgm_dump_has_header_and_pixels() {
        let img = ImageRef::new("img", 4, 2);
        let b = lb("a", "person", BBox::new(1, 0, 2, 1));
        let s = rasterize(&img, "a", &[&b], &labels()).unwrap();
        let pgm = s.to_pgm(0);
        assert!(pgm.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 8..], &[0, 255, 255, 0, 0, 0, 0, 0]);
    }

    fn stacks(n: usize, img: &ImageRef) -> Vec<RasterStack> {
        let b = BBox::new(2, 2, 5, 3);
        (0..n)
            .map(|i| {
                let id = format!("r{i}");
                let bx = LabeledBox::new(&img.id, &id, "vehicle", b);
                rasterize(img, &id, &[&bx], &labels()).unwrap()
            })
            .collect()
    }

    fn everyone(stacks: &[RasterStack]) -> BTreeMap<String, bool> {
        stacks.iter().map(|s| (s.annotator_id.clone(), true)).collect()
    }

    #[test]
    fn identical_stacks_never_disagree() {
        let img = ImageRef::new("img", 20, 10);
        let st = stacks(2, &img);
        let m = build_observation_matrix(&st, &everyone(&st), 0.0, 1).unwrap();
        assert_eq!(m.unit_count(), 600);
        assert!(m.units().iter().all(|&u| m.value(u, 0) == m.value(u, 1)));
    }

    #[test]
    fn full_resolution_retained_count() {
        assert_eq!(retained_count(1200 * 800 * 3, 0.2), 2_304_000);
        let mask = retained_mask(1200 * 800 * 3, 0.2, 42);
        let kept: u64 = mask.iter().map(|w| u64::from(w.count_ones())).sum();
        assert_eq!(kept, 2_304_000);
    }

    #[test]
    fn same_seed_same_units() {
        let img = ImageRef::new("img", 33, 17);
        let st = stacks(3, &img);
        let a = build_observation_matrix(&st, &everyone(&st), 0.35, 9).unwrap();
        let b = build_observation_matrix(&st, &everyone(&st), 0.35, 9).unwrap();
        let c = build_observation_matrix(&st, &everyone(&st), 0.35, 10).unwrap();
        assert_eq!(a.units(), b.units());
        assert_ne!(a.units(), c.units());
        assert_eq!(a.units().len(), retained_count(33 * 17 * 3, 0.35));
    }

    #[test]
    fn non_participants_are_missing() {
        let img = ImageRef::new("img", 8, 8);
        let st = stacks(3, &img);
        let mut part = everyone(&st);
        part.insert("r1".into(), false);
        let m = build_observation_matrix(&st, &part, 0.0, 0).unwrap();
        assert_eq!(m.participant_count(), 2);
        assert_eq!(m.value(0, 1), Observation::Missing);
        assert_eq!(m.value(0, 0), Observation::Unlabeled);
    }

    #[test]
    fn mismatched_stacks_rejected() {
        let st_a = stacks(1, &ImageRef::new("img", 8, 8));
        let st_b = stacks(1, &ImageRef::new("img", 9, 8));
        let both = vec![st_a[0].clone(), RasterStack { annotator_id: "x".into(), ..st_b[0].clone() }];
        assert!(matches!(
            build_observation_matrix(&both, &everyone(&both), 0.0, 0),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            build_observation_matrix(&st_a, &everyone(&st_a), 1.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn class_restriction_partitions_units() {
        let img = ImageRef::new("img", 13, 7);
        let st = stacks(2, &img);
        let m = build_observation_matrix(&st, &everyone(&st), 0.3, 5).unwrap();
        let mut union = Vec::new();
        for (c, l) in labels().iter().enumerate() {
            let r = restrict_to_class(&m, l).unwrap();
            let plane = 13 * 7;
            assert!(r.units().iter().all(|&u| u as usize / plane == c));
            assert_eq!(r.units().len(), r.unit_count());
            let again = restrict_to_class(&r, l).unwrap();
            assert_eq!(again.units(), r.units());
            union.extend(r.units());
        }
        union.sort_unstable();
        assert_eq!(union, m.units());
        // bicycle is never labeled: still a valid, all-unlabeled matrix
        let bike = restrict_to_class(&m, "bicycle").unwrap();
        assert!(bike.units().iter().all(|&u| m.value(u, 0) == Observation::Unlabeled));
        assert!(matches!(restrict_to_class(&m, "cart"), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn retention_frequency_is_unbiased() {
        // 16 units, drop 0.25 -> keep exactly 12. Over 1000 seeds every unit
        // should be retained within 3 sigma of the binomial expectation.
        let (total, f, trials) = (16usize, 0.25, 1000u64);
        let mut hits = vec![0u32; total];
        for seed in 0..trials {
            let mask = retained_mask(total, f, rng::derive_seed_indexed(77, seed));
            for (u, h) in hits.iter_mut().enumerate() {
                *h += (mask[0] >> u & 1) as u32;
            }
        }
        let p = 1.0 - f;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (u, &h) in hits.iter().enumerate() {
            assert!((h as f64 - mean).abs() <= 3.0 * sigma, "unit {u}: {h} vs {mean}");
        }
    }

    proptest! {
        #[test]
        fn raster_matches_pointwise_membership(
            w in 1u32..40, h in 1u32..40,
            raw in prop::collection::vec((0u32..40, 0u32..40, 1u32..20, 1u32..20, 0usize..3), 0..6),
        ) {
            let img = ImageRef::new("img", w, h);
            let boxes: Vec<LabeledBox> = raw
                .into_iter()
                .filter_map(|(x, y, bw, bh, c)| {
                    BBox::clamp_raw([x as i64, y as i64, bw as i64, bh as i64], w, h)
                        .map(|b| lb("a", &labels()[c], b))
                })
                .collect();
            let refs: Vec<&LabeledBox> = boxes.iter().collect();
            let s = rasterize(&img, "a", &refs, &labels()).unwrap();
            for c in 0..3 {
                let mut count = 0;
                for y in 0..h {
                    for x in 0..w {
                        let inside = boxes.iter().any(|b| {
                            b.label == labels()[c]
                                && x >= b.bbox.x && x < b.bbox.right()
                                && y >= b.bbox.y && y < b.bbox.bottom()
                        });
                        prop_assert_eq!(s.is_set(c, x, y), inside);
                        count += inside as u64;
                    }
                }
                prop_assert_eq!(s.labeled_pixel_count[c], count);
            }
        }

        #[test]
        fn mask_keeps_exact_count(total in 1usize..5000, f in 0.0f64..0.99, seed: u64) {
            let mask = retained_mask(total, f, seed);
            let kept: usize = mask.iter().map(|w| w.count_ones() as usize).sum();
            prop_assert_eq!(kept, retained_count(total, f));
            prop_assert!(mask.last().is_none_or(|w| total % 64 == 0 || w >> (total % 64) == 0));
        }
    }
}
