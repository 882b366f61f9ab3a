//! COCO-style JSON for scenes, keypoint results and segmentation results.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{KdcError, Result};
use crate::field::SubPixel;
use crate::rle::Rle;
use crate::scene::{PersonGT, Scene};
use crate::skeleton::{Skeleton, JOINT_NAMES, NUM_JOINTS};

pub const PERSON_CATEGORY: u32 = 1;
/// COCO visibility: labeled and visible.
pub const VISIBLE: u8 = 2;
/// COCO visibility: labeled but not visible.
pub const OCCLUDED: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub height: usize,
    pub width: usize,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `x, y, v` triplets.
    pub keypoints: Vec<f64>,
    pub num_keypoints: usize,
    pub segmentation: Rle,
    pub area: f64,
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    pub iscrowd: u8,
    /// Small or crowded instance excluded from training targets.
    #[serde(default)]
    pub ignore: bool,
    /// Fraction of the body hidden by other instances.
    #[serde(default)]
    pub occlusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub keypoints: Vec<String>,
    pub skeleton: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointResult {
    pub image_id: u64,
    pub category_id: u32,
    /// `x, y, score` triplets; absent joints are all zero.
    pub keypoints: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub image_id: u64,
    pub category_id: u32,
    pub segmentation: Rle,
    pub score: f64,
}

pub fn person_category() -> CocoCategory {
    CocoCategory {
        id: PERSON_CATEGORY,
        name: "person".into(),
        keypoints: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        skeleton: Skeleton::coco().coco_skeleton(),
    }
}

impl CocoDataset {
    /// Builds a dataset from `(image_id, scene)` pairs; annotation ids are assigned sequentially from 1.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = (u64, &'a Scene)>) -> Self {
        let mut images = Vec::new();
        let mut annotations = Vec::new();
        for (image_id, scene) in scenes {
            images.push(CocoImage {
                id: image_id,
                height: scene.height,
                width: scene.width,
                file_name: format!("scene_{image_id:05}.pgm"),
            });
            for p in &scene.persons {
                let next_id = annotations.len() as u64 + 1;
                annotations.push(annotation_from_person(next_id, image_id, p));
            }
        }
        CocoDataset {
            images,
            annotations,
            categories: vec![person_category()],
        }
    }

    /// Rebuilds one scene per image, in image order.
    ///
    /// Only owned masks are serialized, so each loaded person's `body` equals its `mask`.
    pub fn to_scenes(&self) -> Result<Vec<(u64, Scene)>> {
        self.images
            .iter()
            .map(|img| {
                let persons = self
                    .annotations
                    .iter()
                    .filter(|a| a.image_id == img.id)
                    .enumerate()
                    .map(|(k, a)| person_from_annotation(k as u32, a, img))
                    .collect::<Result<Vec<_>>>()?;
                Ok((
                    img.id,
                    Scene {
                        height: img.height,
                        width: img.width,
                        persons,
                    },
                ))
            })
            .collect()
    }
}

fn annotation_from_person(id: u64, image_id: u64, p: &PersonGT) -> CocoAnnotation {
    let mut keypoints = Vec::with_capacity(NUM_JOINTS * 3);
    for j in 0..NUM_JOINTS {
        let q = p.keypoints[j];
        keypoints.extend([q.x, q.y, if p.visible[j] { VISIBLE } else { OCCLUDED } as f64]);
    }
    let bbox = match p.mask.bbox() {
        Some((x0, y0, x1, y1)) => [x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64],
        None => [0.0; 4],
    };
    CocoAnnotation {
        id,
        image_id,
        category_id: PERSON_CATEGORY,
        keypoints,
        num_keypoints: p.num_visible(),
        segmentation: Rle::encode(&p.mask),
        area: p.mask.area() as f64,
        bbox,
        iscrowd: 0,
        ignore: p.ignore,
        occlusion: p.occlusion,
    }
}

fn person_from_annotation(instance_id: u32, a: &CocoAnnotation, img: &CocoImage) -> Result<PersonGT> {
    if a.keypoints.len() != NUM_JOINTS * 3 {
        return Err(KdcError::Format(format!(
            "annotation {} has {} keypoint values, expected {}",
            a.id,
            a.keypoints.len(),
            NUM_JOINTS * 3
        )));
    }
    if a.segmentation.size != [img.height, img.width] {
        return Err(KdcError::Format(format!(
            "annotation {} mask size {:?} does not match image {}x{}",
            a.id, a.segmentation.size, img.height, img.width
        )));
    }
    let mask = a.segmentation.decode()?;
    let mut keypoints = [SubPixel::default(); NUM_JOINTS];
    let mut visible = [false; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        keypoints[j] = SubPixel::new(a.keypoints[3 * j], a.keypoints[3 * j + 1]);
        visible[j] = a.keypoints[3 * j + 2] >= VISIBLE as f64;
    }
    Ok(PersonGT {
        instance_id,
        keypoints,
        visible,
        body: mask.clone(),
        mask,
        ignore: a.ignore,
        occlusion: a.occlusion,
    })
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, occlude_scene};

    #[test]
    fn dataset_roundtrip_preserves_ground_truth() {
        let s = generate_scene(2, (160, 200), 4).unwrap();
        let s = occlude_scene(&s, (0, 1), 0.4, 4).unwrap().scene;
        let ds = CocoDataset::from_scenes([(7, &s)]);
        assert_eq!(ds.annotations.len(), 2);
        assert_eq!(ds.annotations[0].keypoints.len(), 51);
        let text = serde_json::to_string(&ds).unwrap();
        let back: CocoDataset = serde_json::from_str(&text).unwrap();
        let scenes = back.to_scenes().unwrap();
        assert_eq!(scenes.len(), 1);
        let (id, loaded) = &scenes[0];
        assert_eq!(*id, 7);
        for (a, b) in loaded.persons.iter().zip(&s.persons) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.visible, b.visible);
            assert_eq!(a.keypoints, b.keypoints);
            assert_eq!(a.occlusion, b.occlusion);
        }
    }

    #[test]
    fn rejects_truncated_keypoints() {
        let s = generate_scene(1, (128, 128), 1).unwrap();
        let mut ds = CocoDataset::from_scenes([(1, &s)]);
        ds.annotations[0].keypoints.pop();
        assert!(ds.to_scenes().is_err());
    }

    #[test]
    fn category_lists_coco_joints() {
        let c = person_category();
        assert_eq!(c.keypoints.len(), 17);
        assert_eq!(c.keypoints[0], "nose");
        assert_eq!(c.skeleton.len(), 16);
    }
}
