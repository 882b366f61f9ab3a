use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kdc_core::ablation::{centroid_mode_trial, igo_trial, mean, radius_trial, IgoTrial, ModeTrial, RadiusTrial};
use kdc_core::coco::{read_json, write_json, CocoDataset, KeypointResult, SegmentationResult};
use kdc_core::encode::{encode_scene, CentroidMode, MaskCentroidSet};
use kdc_core::eval::{evaluate_keypoints, evaluate_masks, ApSummary, EvalConfig, EvalReport};
use kdc_core::field::{BinaryMask, DenseField};
use kdc_core::losses::{heatmap_bce, keycentroid_l1, offset_l1};
use kdc_core::pipeline::{decode as decode_fields, to_results, FieldSet, NoiseConfig};
use kdc_core::scene::{generate_occluded, generate_scene};
use kdc_core::skeleton::Skeleton;
use kdc_core::{kdcf, KdcError};
use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::render;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))
}

fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    read_json(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    write_json(path, value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_field(path: &Path) -> CliResult<DenseField> {
    kdcf::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn save_field(path: &Path, field: &DenseField) -> CliResult<()> {
    kdcf::write(path, field).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn image_seed(seed: u64, image_id: u64) -> u64 {
    seed.wrapping_add(image_id)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenImage {
    pub image_id: u64,
    pub seed: u64,
    pub persons: usize,
    pub max_occlusion: f64,
    /// Measured covered fraction of the second person, when occlusion was requested.
    pub achieved: Option<f64>,
    pub reached: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenSidecar {
    pub seed: u64,
    pub canvas: usize,
    pub occlude: Option<f64>,
    pub images: Vec<GenImage>,
}

pub fn gen(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let mut scenes = Vec::with_capacity(cfg.count);
    let mut images = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count as u64 {
        let base_seed = image_seed(cfg.seed, i);
        let (scene, seed, occ) = match cfg.occlude {
            Some(f) => {
                let (occ, seed) = generate_occluded(cfg.persons, (cfg.canvas, cfg.canvas), f, base_seed)?;
                if !occ.reached {
                    log::warn!("image {i}: requested occlusion {f} not reachable, best {:.4}", occ.achieved);
                }
                (occ.scene.clone(), seed, Some(occ))
            }
            None => (generate_scene(cfg.persons, (cfg.canvas, cfg.canvas), base_seed)?, base_seed, None),
        };
        let (achieved, reached) = (occ.as_ref().map(|o| o.achieved), occ.as_ref().map(|o| o.reached));
        let labels = render::labels_to_gray(&scene.owner_map());
        render::write_pgm(&out.join(format!("scene_{i:05}.pgm")), scene.height, scene.width, &labels)?;
        images.push(GenImage {
            image_id: i,
            seed,
            persons: scene.persons.len(),
            max_occlusion: scene.max_occlusion(),
            achieved,
            reached,
        });
        scenes.push((i, scene));
    }
    save_json(&out.join("dataset.json"), &CocoDataset::from_scenes(scenes.iter().map(|(i, s)| (*i, s))))?;
    save_json(
        &out.join("gen.json"),
        &GenSidecar {
            seed: cfg.seed,
            canvas: cfg.canvas,
            occlude: cfg.occlude,
            images,
        },
    )?;
    info!("wrote {} scenes to {}", cfg.count, out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeManifest {
    pub radius: f64,
    pub sigma_instance: f64,
    pub images: Vec<EncodedImage>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodedImage {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub dir: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CentroidFile {
    #[serde(rename = "static")]
    static_: MaskCentroidSet,
    dynamic: MaskCentroidSet,
}

fn mask_to_field(m: &BinaryMask) -> DenseField {
    let data = m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    DenseField::from_vec(m.height(), m.width(), 1, data).expect("mask shape")
}

fn field_to_mask(f: &DenseField) -> CliResult<BinaryMask> {
    if f.channels() != 1 {
        return Err(CliError::config(format!("foreground must have 1 channel, got {}", f.shape_string())));
    }
    Ok(BinaryMask::from_vec(f.height(), f.width(), f.data().iter().map(|&v| v > 0.5).collect())?)
}

pub fn encode(cfg: &RunConfig, dataset: &Path, out: &Path) -> CliResult<()> {
    let ds: CocoDataset = load_json(dataset)?;
    let scenes = ds.to_scenes().map_err(|e| CliError::config(format!("{}: {e}", dataset.display())))?;
    create_dir(out)?;
    let images = scenes
        .par_iter()
        .map(|(id, scene)| -> CliResult<EncodedImage> {
            let enc = encode_scene(scene, cfg.radius, cfg.sigma_instance)?;
            let name = format!("image_{id:05}");
            let dir = out.join(&name);
            create_dir(&dir)?;
            save_field(&dir.join("heatmap.kdcf"), &enc.heatmaps)?;
            save_field(&dir.join("keycentroid.kdcf"), &enc.keycentroid.base)?;
            save_field(&dir.join("response.kdcf"), &enc.keycentroid.response)?;
            save_field(&dir.join("offsets_static.kdcf"), &enc.offsets_static.field)?;
            save_field(&dir.join("offsets_dynamic.kdcf"), &enc.offsets_dynamic.field)?;
            save_field(&dir.join("foreground.kdcf"), &mask_to_field(&enc.foreground))?;
            save_json(
                &dir.join("centroids.json"),
                &CentroidFile {
                    static_: enc.centroids_static.clone(),
                    dynamic: enc.centroids_dynamic.clone(),
                },
            )?;
            Ok(EncodedImage {
                image_id: *id,
                height: scene.height,
                width: scene.width,
                dir: name,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    save_json(
        &out.join("encode.json"),
        &EncodeManifest {
            radius: cfg.radius,
            sigma_instance: cfg.sigma_instance,
            images,
        },
    )?;
    info!("encoded {} images into {}", scenes.len(), out.display());
    Ok(())
}

fn load_fields(dir: &Path, mode: CentroidMode) -> CliResult<FieldSet> {
    let fields = FieldSet {
        heatmaps: load_field(&dir.join("heatmap.kdcf"))?,
        keycentroid: load_field(&dir.join("keycentroid.kdcf"))?,
        offsets: load_field(&dir.join(format!("offsets_{mode}.kdcf")))?,
        foreground: field_to_mask(&load_field(&dir.join("foreground.kdcf"))?)?,
    };
    fields
        .validate()
        .map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    Ok(fields)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedImage {
    pub image_id: u64,
    pub poses: usize,
    pub masks: usize,
    pub instances: usize,
    pub candidates: usize,
    pub clustering_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub mode: CentroidMode,
    pub radius: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub images: Vec<DecodedImage>,
}

pub fn decode(cfg: &RunConfig, fields_dir: &Path, out: &Path) -> CliResult<()> {
    let manifest: EncodeManifest = load_json(&fields_dir.join("encode.json"))?;
    if manifest.radius != cfg.radius {
        log::warn!("decoding with R={} fields encoded at R={}", cfg.radius, manifest.radius);
    }
    let decode_cfg = cfg.decode_config();
    let noise = cfg.noise();
    let skeleton = Skeleton::coco();
    let per_image = manifest
        .images
        .par_iter()
        .map(|img| -> CliResult<_> {
            let mut fields = load_fields(&fields_dir.join(&img.dir), cfg.mode)?;
            if !noise.is_zero() {
                fields = fields.perturbed(&noise, image_seed(cfg.seed, img.image_id))?;
            }
            let out = decode_fields(&fields, &skeleton, &decode_cfg)?;
            let (kps, segs) = to_results(img.image_id, out.instances());
            let summary = DecodedImage {
                image_id: img.image_id,
                poses: out.pose.poses.len(),
                masks: segs.len(),
                instances: out.instances().len(),
                candidates: out.pose.candidates.len(),
                clustering_iterations: out.seg.iterations,
                converged: out.seg.converged,
            };
            Ok((kps, segs, summary))
        })
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(out)?;
    let mut keypoints = Vec::new();
    let mut segm = Vec::new();
    let mut images = Vec::new();
    for (k, s, summary) in per_image {
        keypoints.extend(k);
        segm.extend(s);
        images.push(summary);
    }
    save_json(&out.join("keypoints.json"), &keypoints)?;
    save_json(&out.join("segm.json"), &segm)?;
    save_json(
        &out.join("decode.json"),
        &DecodeSummary {
            mode: cfg.mode,
            radius: cfg.radius,
            noise,
            seed: cfg.seed,
            images,
        },
    )?;
    info!("decoded {} poses and {} masks", keypoints.len(), segm.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    task: &'a str,
    metric: String,
    value: f64,
}

fn metric_rows<'a>(task: &'a str, s: &ApSummary) -> Vec<MetricRow<'a>> {
    let row = |metric: String, value: f64| MetricRow { task, metric, value };
    let mut rows = vec![row("ap".into(), s.ap)];
    rows.extend(s.ap50.map(|v| row("ap50".into(), v)));
    rows.extend(s.ap75.map(|v| row("ap75".into(), v)));
    for (split, v) in &s.splits {
        rows.push(row(format!("ap_{}", serde_json::to_value(split).unwrap().as_str().unwrap()), *v));
    }
    for (t, v) in &s.per_threshold {
        rows.push(row(format!("ap@{t:.2}"), *v));
    }
    rows
}

pub fn eval(dataset: &Path, results: &Path, out: &Path) -> CliResult<()> {
    let ds: CocoDataset = load_json(dataset)?;
    let gt = ds.to_scenes().map_err(|e| CliError::config(format!("{}: {e}", dataset.display())))?;
    let kps: Vec<KeypointResult> = load_json(&results.join("keypoints.json"))?;
    let segm: Vec<SegmentationResult> = load_json(&results.join("segm.json"))?;
    let cfg = EvalConfig::default();
    let metric_err = |e: KdcError| CliError::eval(format!("evaluation failed: {e}"));
    let report = EvalReport {
        keypoints: evaluate_keypoints(&gt, &kps, &cfg).map_err(metric_err)?,
        masks: evaluate_masks(&gt, &segm, &cfg).map_err(metric_err)?,
        images: gt.len(),
    };
    create_dir(out)?;
    save_json(&out.join("metrics.json"), &report)?;
    let csv_path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::config(format!("{}: {e}", csv_path.display())))?;
    for r in metric_rows("keypoints", &report.keypoints)
        .into_iter()
        .chain(metric_rows("masks", &report.masks))
    {
        w.serialize(r).map_err(|e| CliError::config(e.to_string()))?;
    }
    w.flush()?;
    println!("keypoint AP {:.4}  mask AP {:.4}", report.keypoints.ap, report.masks.ap);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub threads: usize,
    pub iters: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Serialize)]
struct BenchWork {
    persons: usize,
    height: usize,
    width: usize,
    candidates: usize,
    poses: usize,
    instances: usize,
}

#[derive(Debug, Serialize)]
struct BenchLosses {
    heatmap_bce: f64,
    keycentroid_l1: f64,
    offset_l1: f64,
}

#[derive(Debug, Serialize)]
struct BenchTimings {
    single: Timing,
    parallel: Timing,
    speedup: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    seed: u64,
    mode: CentroidMode,
    radius: f64,
    warmup: usize,
    work: BenchWork,
    losses: BenchLosses,
    /// Wall-clock measurements; the only non-deterministic part of the report.
    timing: BenchTimings,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

fn time_decode(fields: &FieldSet, cfg: &RunConfig, threads: usize) -> CliResult<Timing> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    let skel = Skeleton::coco();
    let decode_cfg = cfg.decode_config();
    let samples = pool.install(|| -> CliResult<Vec<f64>> {
        for _ in 0..cfg.bench_warmup {
            decode_fields(fields, &skel, &decode_cfg)?;
        }
        let mut samples = Vec::with_capacity(cfg.bench_iters);
        for _ in 0..cfg.bench_iters {
            let t = Instant::now();
            let out = decode_fields(fields, &skel, &decode_cfg)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
        Ok(samples)
    })?;
    Ok(Timing {
        threads: pool.current_num_threads(),
        iters: samples.len(),
        p50_ms: percentile(&samples, 50.0),
        p90_ms: percentile(&samples, 90.0),
        mean_ms: mean(samples.iter().copied()),
    })
}

pub fn bench(cfg: &RunConfig, out: Option<&Path>) -> CliResult<()> {
    let scene = generate_scene(cfg.persons, (cfg.canvas, cfg.canvas), cfg.seed)?;
    let enc = encode_scene(&scene, cfg.radius, cfg.sigma_instance)?;
    let fields = FieldSet::from_encoded(&enc, cfg.mode).perturbed(&cfg.noise(), cfg.seed)?;
    let pred_offsets = kdc_core::encode::OffsetField::new(fields.offsets.clone(), fields.foreground.clone())?;
    let losses = BenchLosses {
        heatmap_bce: heatmap_bce(&fields.heatmaps, &enc.heatmaps, &enc.exclusion)?.value,
        keycentroid_l1: keycentroid_l1(&fields.keycentroid, &enc.keycentroid)?.value,
        offset_l1: offset_l1(&pred_offsets, enc.offsets(cfg.mode))?.value,
    };
    let reference = decode_fields(&fields, &Skeleton::coco(), &cfg.decode_config())?;
    let work = BenchWork {
        persons: scene.persons.len(),
        height: scene.height,
        width: scene.width,
        candidates: reference.pose.candidates.len(),
        poses: reference.pose.poses.len(),
        instances: reference.instances().len(),
    };
    let single = time_decode(&fields, cfg, 1)?;
    let parallel = time_decode(&fields, cfg, cfg.workers)?;
    let speedup = single.p50_ms / parallel.p50_ms;
    let report = BenchReport {
        seed: cfg.seed,
        mode: cfg.mode,
        radius: cfg.radius,
        warmup: cfg.bench_warmup,
        work,
        losses,
        timing: BenchTimings {
            single,
            parallel,
            speedup,
        },
    };
    match out {
        Some(p) => save_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::config(e.to_string()))?),
    }
    Ok(())
}

pub fn render(input: &Path, out: &Path, channel: usize, image_id: Option<u64>) -> CliResult<()> {
    let bytes = fs::read(input).map_err(|e| CliError::config(format!("{}: {e}", input.display())))?;
    if bytes.starts_with(kdcf::MAGIC) {
        let field = kdcf::decode(&bytes).map_err(|e| CliError::config(format!("{}: {e}", input.display())))?;
        if channel >= field.channels() {
            return Err(CliError::config(format!(
                "channel {channel} out of range for {} channels",
                field.channels()
            )));
        }
        return render::write_pgm(out, field.height(), field.width(), &render::channel_to_gray(&field, channel));
    }
    let results: Vec<SegmentationResult> = serde_json::from_slice(&bytes)
        .map_err(|_| CliError::config(format!("{}: neither a KDCF field nor segmentation results", input.display())))?;
    let id = match image_id.or_else(|| results.first().map(|r| r.image_id)) {
        Some(id) => id,
        None => return Err(CliError::config(format!("{}: no segmentation results to render", input.display()))),
    };
    let masks = results
        .iter()
        .filter(|r| r.image_id == id)
        .map(|r| r.segmentation.decode())
        .collect::<Result<Vec<_>, _>>()?;
    let Some(first) = masks.first() else {
        return Err(CliError::config(format!("no segmentation results for image {id}")));
    };
    let (h, w) = (first.height(), first.width());
    let mut labels = vec![None; h * w];
    for (k, m) in masks.iter().enumerate() {
        if !m.same_shape(first) {
            return Err(CliError::config(format!("mask {k} of image {id} has a different size")));
        }
        for (i, &v) in m.data().iter().enumerate() {
            if v {
                labels[i] = Some(k);
            }
        }
    }
    render::write_pgm(out, h, w, &render::labels_to_gray(&labels))
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    static_iou: f64,
    dynamic_iou: f64,
    margin: f64,
}

#[derive(Debug, Serialize)]
struct RadiusSummary {
    radius: f64,
    mean_error: f64,
    scored: usize,
}

#[derive(Debug, Serialize)]
struct IgoSummary {
    sigma: f64,
    boundary_iou: f64,
}

#[derive(Debug, Serialize)]
struct AblationSummary {
    seeds: Vec<u64>,
    overlap: f64,
    offset_noise: f64,
    heatmap_noise: f64,
    mode: ModeSummary,
    radius: Vec<RadiusSummary>,
    igo: Vec<IgoSummary>,
}

fn write_csv<T: Serialize>(path: PathBuf, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let a = &cfg.ablation;
    let trial = cfg.trial_scene();
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| image_seed(cfg.seed, i)).collect();
    let modes: Vec<ModeTrial> = seeds
        .par_iter()
        .map(|&s| centroid_mode_trial(&trial, a.offset_noise, s))
        .collect::<Result<_, _>>()?;
    let noise = NoiseConfig {
        offset: a.offset_noise,
        heatmap: a.heatmap_noise,
    };
    let radii: Vec<RadiusTrial> = a
        .radii
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(r, s)| radius_trial(&trial, r, &noise, s))
        .collect::<Result<_, _>>()?;
    let igos: Vec<IgoTrial> = a
        .igo_sigmas
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(g, s)| igo_trial(&trial, g, a.offset_noise, s))
        .collect::<Result<_, _>>()?;

    let static_iou = mean(modes.iter().map(|m| m.static_iou));
    let dynamic_iou = mean(modes.iter().map(|m| m.dynamic_iou));
    let summary = AblationSummary {
        seeds: seeds.clone(),
        overlap: a.overlap,
        offset_noise: a.offset_noise,
        heatmap_noise: a.heatmap_noise,
        mode: ModeSummary {
            static_iou,
            dynamic_iou,
            margin: dynamic_iou - static_iou,
        },
        radius: a
            .radii
            .iter()
            .map(|&r| {
                let rows: Vec<&RadiusTrial> = radii.iter().filter(|t| t.radius == r).collect();
                RadiusSummary {
                    radius: r,
                    mean_error: mean(rows.iter().map(|t| t.mean_error)),
                    scored: rows.iter().map(|t| t.scored).sum(),
                }
            })
            .collect(),
        igo: a
            .igo_sigmas
            .iter()
            .map(|&g| IgoSummary {
                sigma: g,
                boundary_iou: mean(igos.iter().filter(|t| t.sigma == g).map(|t| t.boundary_iou)),
            })
            .collect(),
    };
    create_dir(out)?;
    write_csv(out.join("mode.csv"), &modes)?;
    write_csv(out.join("radius.csv"), &radii)?;
    write_csv(out.join("igo.csv"), &igos)?;
    save_json(&out.join("ablation.json"), &summary)?;
    println!(
        "mode: static {:.4} dynamic {:.4} (margin {:+.4})",
        static_iou,
        dynamic_iou,
        dynamic_iou - static_iou
    );
    for r in &summary.radius {
        println!("radius {}: mean error {:.4} px over {} keypoints", r.radius, r.mean_error, r.scored);
    }
    for g in &summary.igo {
        println!("igo sigma {}: boundary IoU {:.4}", g.sigma, g.boundary_iou);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 50.0), 3.0);
        assert_eq!(percentile(&s, 90.0), 5.0);
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&[7.0], 90.0), 7.0);
    }

    #[test]
    fn mask_field_roundtrip() {
        let mut m = BinaryMask::new(3, 5);
        m.set(4, 2, true);
        m.set(0, 1, true);
        assert_eq!(field_to_mask(&mask_to_field(&m)).unwrap(), m);
        assert!(field_to_mask(&DenseField::zeros(3, 5, 2)).is_err());
    }
}
