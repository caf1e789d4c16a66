//! Derived datasets: leave-annotator-out sets and ground-truth selection.
//!
//! Ground truth is always *selected*, never merged: every image of a
//! [`GroundTruthSet`] carries the boxes of exactly one source annotator.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    apply_label_mapping, parse_annotation_set, AnnotationSet, Annotator, Assignment, InputFormat, LabelMap, Tier,
};
use crate::error::{Error, Result};
use crate::rng;

/// Pseudo-annotator id given to imported reference labels.
pub const ORIGINAL_ANNOTATOR: &str = "original";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// gt1: per image, a random pick among the top annotators.
    MixedTop,
    /// gt2: one random top annotator for every image.
    SingleTop,
    /// gt3: labels shipped with the source dataset.
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    #[serde(flatten)]
    pub base: AnnotationSet,
    pub provenance: BTreeMap<String, String>,
    pub recipe: Recipe,
    pub seed: u64,
}

impl GroundTruthSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth sets always serialize")
    }

    pub fn from_json(payload: &[u8]) -> Result<Self> {
        let gt: GroundTruthSet = serde_json::from_slice(payload)?;
        gt.base.check()?;
        gt.check()?;
        Ok(gt)
    }

    fn check(&self) -> Result<()> {
        for img in &self.base.images {
            let Some(source) = self.provenance.get(&img.id) else {
                return Err(Error::Consistency(format!("image `{}` has no provenance", img.id)));
            };
            if let Some(b) = self.base.boxes.iter().find(|b| b.image_id == img.id && b.annotator_id != *source) {
                return Err(Error::Consistency(format!(
                    "image `{}` mixes boxes of `{}` and `{source}`",
                    img.id, b.annotator_id
                )));
            }
        }
        Ok(())
    }
}

/// Remove every box and assignment of annotator `k`. Images stay even if no
/// annotator covers them anymore.
pub fn drop_annotator(set: &AnnotationSet, k: &str) -> Result<AnnotationSet> {
    if set.annotator(k).is_none() {
        return Err(Error::UnknownAnnotator(k.to_string()));
    }
    let mut out = set.clone();
    out.annotators.retain(|a| a.id != k);
    out.boxes.retain(|b| b.annotator_id != k);
    out.assignments.retain(|a| a.annotator_id != k);
    Ok(out)
}

fn check_top(set: &AnnotationSet, top: &[String]) -> Result<Vec<String>> {
    if top.is_empty() {
        return Err(Error::Config("no top annotators given".into()));
    }
    for t in top {
        if set.annotator(t).is_none() {
            return Err(Error::UnknownAnnotator(t.clone()));
        }
    }
    let sorted: BTreeSet<String> = top.iter().cloned().collect();
    Ok(sorted.into_iter().collect())
}

fn resolve_images(set: &AnnotationSet, images: &[String]) -> Result<Vec<String>> {
    if images.is_empty() {
        return Ok(set.images.iter().map(|i| i.id.clone()).collect());
    }
    for id in images {
        if set.image(id).is_none() {
            return Err(Error::Referential(format!("unknown image `{id}`")));
        }
    }
    Ok(images.to_vec())
}

fn assemble(
    set: &AnnotationSet,
    provenance: BTreeMap<String, String>,
    images: &[String],
    recipe: Recipe,
    seed: u64,
) -> GroundTruthSet {
    let used: BTreeSet<&str> = provenance.values().map(String::as_str).collect();
    let base = AnnotationSet {
        images: images
            .iter()
            .filter_map(|id| set.image(id).cloned())
            .collect(),
        annotators: set
            .annotators
            .iter()
            .filter(|a| used.contains(a.id.as_str()))
            .cloned()
            .collect(),
        labels: set.labels.clone(),
        boxes: set
            .boxes
            .iter()
            .filter(|b| provenance.get(&b.image_id) == Some(&b.annotator_id))
            .cloned()
            .collect(),
        assignments: provenance
            .iter()
            .map(|(img, ann)| Assignment::new(img, ann))
            .collect(),
    };
    GroundTruthSet {
        base,
        provenance,
        recipe,
        seed,
    }
}

/// gt1: for each image, pick uniformly among the top annotators that
/// processed it. Each image draws from its own seeded stream, so the choice
/// for an image does not depend on which other images are included.
/// An empty `images` list means every image of the set.
pub fn build_gt_mixed(set: &AnnotationSet, top: &[String], images: &[String], seed: u64) -> Result<GroundTruthSet> {
    let top = check_top(set, top)?;
    let images = resolve_images(set, images)?;
    let participation = set.participation();
    let mut provenance = BTreeMap::new();
    let mut uncovered = Vec::new();
    for id in &images {
        let who = &participation[id.as_str()];
        let candidates: Vec<&String> = top.iter().filter(|t| who.contains(t.as_str())).collect();
        if candidates.is_empty() {
            uncovered.push(id.clone());
            continue;
        }
        let mut r = rng::seeded(rng::derive_seed(seed, id));
        let pick = candidates[r.random_range(0..candidates.len() as u64) as usize];
        provenance.insert(id.clone(), pick.clone());
    }
    if !uncovered.is_empty() {
        return Err(Error::Coverage {
            context: format!("no top annotator among {top:?} processed these images"),
            images: uncovered,
        });
    }
    Ok(assemble(set, provenance, &images, Recipe::MixedTop, seed))
}

/// gt2: one annotator drawn uniformly from the top annotators supplies every
/// image. Fails rather than substituting when that annotator has gaps.
pub fn build_gt_single(set: &AnnotationSet, top: &[String], images: &[String], seed: u64) -> Result<GroundTruthSet> {
    let top = check_top(set, top)?;
    let images = resolve_images(set, images)?;
    let mut r = rng::seeded(seed);
    let chosen = &top[r.random_range(0..top.len() as u64) as usize];
    let participation = set.participation();
    let uncovered: Vec<String> = images
        .iter()
        .filter(|id| !participation[id.as_str()].contains(chosen.as_str()))
        .cloned()
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::Coverage {
            context: format!("annotator `{chosen}` did not process every image"),
            images: uncovered,
        });
    }
    let provenance = images.iter().map(|id| (id.clone(), chosen.clone())).collect();
    Ok(assemble(set, provenance, &images, Recipe::SingleTop, seed))
}

/// gt3: labels released with the source dataset, relabeled through `map` and
/// attributed to the [`ORIGINAL_ANNOTATOR`] pseudo-annotator.
pub fn import_original_gt(payload: &[u8], format: InputFormat<'_>, map: &LabelMap) -> Result<GroundTruthSet> {
    let parsed = parse_annotation_set(payload, format)?;
    original_gt(&parsed.set, map)
}

pub fn original_gt(set: &AnnotationSet, map: &LabelMap) -> Result<GroundTruthSet> {
    let (mut set, _) = apply_label_mapping(set, map)?;
    let tier = set.annotators.first().map_or(Tier::Professional, |a| a.tier);
    set.annotators = vec![Annotator::new(ORIGINAL_ANNOTATOR, tier)];
    for b in &mut set.boxes {
        b.annotator_id = ORIGINAL_ANNOTATOR.to_string();
    }
    set.assignments = set
        .images
        .iter()
        .map(|i| Assignment::new(&i.id, ORIGINAL_ANNOTATOR))
        .collect();
    let provenance = set
        .images
        .iter()
        .map(|i| (i.id.clone(), ORIGINAL_ANNOTATOR.to_string()))
        .collect();
    Ok(GroundTruthSet {
        base: set,
        provenance,
        recipe: Recipe::Original,
        seed: 0,
    })
}
