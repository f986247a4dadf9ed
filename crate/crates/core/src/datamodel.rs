//! COCO-style dataset files with a per-annotation pose extension.
//!
//! Files are written canonically: keys sorted, records sorted by id, two-space
//! indentation and every non-integer number printed with six decimals, so the
//! same dataset always produces the same bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::EulerPose;

pub const SCHEMA_VERSION: u32 = 1;
pub const HEAD_CATEGORY: u64 = 1;
/// Slack for bounds checks on values that went through 6-decimal rounding.
const BOUNDS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    /// Corner format `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    /// `[pitch, yaw, roll]` in degrees.
    pub pose: [f64; 3],
    #[serde(default = "default_category")]
    pub category_id: u64,
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    /// Present on predictions only.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "score")]
    pub confidence: Option<f64>,
}

fn default_category() -> u64 {
    HEAD_CATEGORY
}

impl Annotation {
    pub fn new(id: u64, image_id: u64, bbox: [f64; 4], pose: EulerPose) -> Self {
        Self {
            id,
            image_id,
            bbox,
            pose: pose.as_array(),
            category_id: HEAD_CATEGORY,
            area: bbox[2] * bbox[3],
            iscrowd: 0,
            confidence: None,
        }
    }

    pub fn euler(&self) -> EulerPose {
        EulerPose::from_array(self.pose)
    }

    /// Center-format box.
    pub fn center_box(&self) -> [f64; 4] {
        let [x, y, w, h] = self.bbox;
        [x + w / 2.0, y + h / 2.0, w, h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub generator: String,
    pub seed: Option<u64>,
}

impl Default for Meta {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            generator: String::new(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    #[serde(default = "head_categories")]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub meta: Meta,
}

fn head_categories() -> Vec<Category> {
    vec![Category {
        id: HEAD_CATEGORY,
        name: "head".into(),
    }]
}

impl DatasetFile {
    pub fn new(meta: Meta) -> Self {
        Self {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: head_categories(),
            meta,
        }
    }

    /// Checks referential integrity, box geometry and pose ranges.
    pub fn validate(&self) -> Result<()> {
        if self.meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.meta.schema_version
            )));
        }
        let mut sizes = BTreeMap::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!("image {}: zero size", img.id)));
            }
            if sizes.insert(img.id, (img.width as f64, img.height as f64)).is_some() {
                return Err(Error::Validation(format!("image {}: duplicate id", img.id)));
            }
        }
        let mut seen = HashSet::new();
        for a in &self.annotations {
            let fail = |m: String| Err(Error::Validation(format!("annotation {}: {m}", a.id)));
            if !seen.insert(a.id) {
                return fail("duplicate id".into());
            }
            let Some(&(w, h)) = sizes.get(&a.image_id) else {
                return fail(format!("references missing image {}", a.image_id));
            };
            let [bx, by, bw, bh] = a.bbox;
            if a.bbox.iter().chain(&a.pose).any(|v| !v.is_finite()) {
                return fail("non-finite value".into());
            }
            if !(bw > 0.0 && bh > 0.0) {
                return fail(format!("non-positive box size {bw}×{bh}"));
            }
            if bx < -BOUNDS_TOL || by < -BOUNDS_TOL || bx + bw > w + BOUNDS_TOL || by + bh > h + BOUNDS_TOL {
                return fail(format!("box {:?} outside {w}×{h} image", a.bbox));
            }
            if let Err(e) = a.euler().validate() {
                return fail(e.to_string());
            }
            if let Some(c) = a.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return fail(format!("confidence {c} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Sorts records by id so that serialization is construction-order free.
    pub fn canonicalize(&mut self) {
        self.images.sort_by_key(|i| i.id);
        self.annotations.sort_by_key(|a| a.id);
        self.categories.sort_by_key(|c| c.id);
        for a in &mut self.annotations {
            a.area = a.bbox[2] * a.bbox[3];
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: DatasetFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = self.to_canonical_json();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_canonical_json(&self) -> String {
        let mut ds = self.clone();
        ds.canonicalize();
        let value = serde_json::to_value(&ds).expect("dataset serializes to JSON");
        canonical_json(&value)
    }

    /// Annotations grouped by image id; every image present, possibly empty.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> = self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }
}

/// Pretty JSON with sorted keys and six-decimal floats.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap_or(0.0);
                let s = format!("{x:.6}");
                // Avoid "-0.000000".
                out.push_str(if s.trim_start_matches('-').bytes().all(|c| c == b'0' || c == b'.') { "0.000000" } else { &s });
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, indent);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (k, item) in items.iter().enumerate() {
                    pad(out, indent + 2);
                    write_value(out, item, indent + 2);
                    out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
                }
                pad(out, indent);
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(out, &map[*key], indent + 2);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}
