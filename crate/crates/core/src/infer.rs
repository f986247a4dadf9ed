//! Image preprocessing and batched inference.

use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, DatasetFile, ImageRecord, Meta};
use crate::error::{Error, Result};
use crate::eval::{decode_detections, nms, Detection, Letterbox, DEFAULT_NMS_IOU, MAX_DETS_PER_IMAGE, PREDICTION_FLOOR};
use crate::net::{AnchorConfig, Checkpoint, Network, Normalization, Tensor};

/// A letterboxed `size × size` RGB image, row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub pixels: Vec<u8>,
    pub size: usize,
    pub letterbox: Letterbox,
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

/// Resizes keeping aspect and pads to a centred square.
pub fn letterbox_image(img: &RgbImage, size: usize, pad_value: u8) -> Prepared {
    let lb = Letterbox::fit(img.width(), img.height(), size);
    let nw = ((img.width() as f64 * lb.scale).round() as u32).clamp(1, size as u32);
    let nh = ((img.height() as f64 * lb.scale).round() as u32).clamp(1, size as u32);
    let resized;
    let src = if (nw, nh) == img.dimensions() {
        img
    } else {
        resized = imageops::resize(img, nw, nh, imageops::FilterType::Triangle);
        &resized
    };
    let mut pixels = vec![pad_value; size * size * 3];
    let (px, py) = (lb.pad_x as usize, lb.pad_y as usize);
    for y in 0..nh as usize {
        let row = &src.as_raw()[y * nw as usize * 3..(y + 1) * nw as usize * 3];
        let start = ((y + py) * size + px) * 3;
        pixels[start..start + row.len()].copy_from_slice(row);
    }
    Prepared {
        pixels,
        size,
        letterbox: lb,
    }
}

/// Stacks HWC byte images into an NCHW tensor scaled by `pixel_scale`.
pub fn to_tensor(images: &[&[u8]], size: usize, pixel_scale: f64) -> Tensor {
    let plane = size * size;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    let s = pixel_scale as f32;
    for (i, px) in images.iter().enumerate() {
        let out = &mut data[i * 3 * plane..(i + 1) * 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                out[c * plane + p] = px[p * 3 + c] as f32 * s;
            }
        }
    }
    Tensor::from_vec([images.len(), 3, size, size], data)
}

/// Detection post-processing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Postprocess {
    pub conf_floor: f64,
    pub nms_iou: f64,
    /// Most confident candidates entering NMS.
    pub max_candidates: usize,
    pub max_detections: usize,
}

impl Default for Postprocess {
    fn default() -> Self {
        Self {
            conf_floor: PREDICTION_FLOOR,
            nms_iou: DEFAULT_NMS_IOU,
            max_candidates: 3000,
            max_detections: MAX_DETS_PER_IMAGE,
        }
    }
}

/// NMS with candidate and output caps.
pub fn postprocess(mut dets: Vec<Detection>, post: &Postprocess) -> Vec<Detection> {
    if dets.len() > post.max_candidates {
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        dets.truncate(post.max_candidates);
    }
    let mut kept = nms(&dets, post.conf_floor, post.nms_iou);
    kept.truncate(post.max_detections);
    kept
}

/// Runs the network in evaluation mode over prepared images.
pub fn predict_prepared(
    net: &mut Network,
    anchors: &AnchorConfig,
    images: &[Prepared],
    normalization: &Normalization,
    batch_size: usize,
    post: &Postprocess,
) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let size = chunk[0].size;
        let refs: Vec<&[u8]> = chunk.iter().map(|p| p.pixels.as_slice()).collect();
        let grids = net.forward(&to_tensor(&refs, size, normalization.pixel_scale), false)?;
        for (i, p) in chunk.iter().enumerate() {
            let dets = decode_detections(&grids, i, anchors, &p.letterbox, post.conf_floor)?;
            out.push(postprocess(dets, post));
        }
    }
    Ok(out)
}

/// A trained model ready for inference.
pub struct Predictor {
    pub net: Network,
    pub anchors: AnchorConfig,
    pub input_size: usize,
    pub normalization: Normalization,
}

impl Predictor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            net: ck.build_network()?,
            anchors: ck.header.anchors.clone(),
            input_size: ck.header.input_size,
            normalization: ck.header.normalization,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn prepare(&self, img: &RgbImage) -> Prepared {
        letterbox_image(img, self.input_size, self.normalization.pad_value)
    }

    pub fn predict(&mut self, images: &[Prepared], post: &Postprocess) -> Result<Vec<Vec<Detection>>> {
        predict_prepared(&mut self.net, &self.anchors, images, &self.normalization, 8, post)
    }

    /// Predicts every image record, reading files relative to `root`, and
    /// returns a prediction file carrying the same image ids.
    pub fn predict_records(&mut self, records: &[ImageRecord], root: &Path, post: &Postprocess) -> Result<DatasetFile> {
        let mut file = DatasetFile::new(Meta {
            schema_version: crate::datamodel::SCHEMA_VERSION,
            generator: "predict".into(),
            seed: None,
        });
        let mut next_id = 1;
        for chunk in records.chunks(8) {
            let prepared = chunk
                .iter()
                .map(|r| {
                    let img = load_rgb(&root.join(&r.file_name))?;
                    if img.dimensions() != (r.width, r.height) {
                        return Err(Error::Validation(format!(
                            "image {}: file is {}x{}, record says {}x{}",
                            r.id,
                            img.width(),
                            img.height(),
                            r.width,
                            r.height
                        )));
                    }
                    Ok(self.prepare(&img))
                })
                .collect::<Result<Vec<_>>>()?;
            let dets = self.predict(&prepared, post)?;
            for (r, ds) in chunk.iter().zip(dets) {
                for d in ds {
                    let mut a = Annotation::new(next_id, r.id, d.bbox, d.pose);
                    a.confidence = Some(d.confidence);
                    file.annotations.push(a);
                    next_id += 1;
                }
            }
        }
        file.images = records.to_vec();
        Ok(file)
    }
}

/// PNG files under `dir`, sorted, as records with ids
/// `1..` and file names relative to `dir`.
pub fn scan_images(dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (width, height) = image::image_dimensions(p).map_err(|source| Error::Image {
                path: p.clone(),
                source,
            })?;
            let rel = p.strip_prefix(dir).unwrap_or(p);
            Ok(ImageRecord {
                id: i as u64 + 1,
                file_name: rel.to_string_lossy().replace('\\', "/"),
                width,
                height,
            })
        })
        .collect()
}
