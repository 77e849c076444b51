//! Annotation and prediction records: one JSON document per image, either a
//! single document, a JSON array of documents, or JSON lines.
//!
//! ```json
//! {"image": {"id": "a", "width": 640, "height": 640},
//!  "annotations": [{"class": "villi", "points": [[1, 2], [3, 4]], "confidence": 0.9}],
//!  "shoulder": [[0, 100], [640, 110]],
//!  "border": [[0, 300], [640, 290]]}
//! ```

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geom::{ClassLabel, Point, Polyline};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub class: ClassLabel,
    pub points: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Annotation {
    pub fn polyline(&self) -> Result<Polyline<f64>> {
        Polyline::with_confidence(
            self.points.iter().map(|&[x, y]| Point::new(x, y)).collect(),
            self.class,
            self.confidence.unwrap_or(1.0),
        )
    }

    pub fn from_polyline(p: &Polyline<f64>, with_confidence: bool) -> Self {
        Self {
            class: p.class,
            points: p.points().iter().map(|q| [q.x, q.y]).collect(),
            confidence: with_confidence.then_some(p.confidence),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub image: ImageInfo,
    pub annotations: Vec<Annotation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shoulder: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub border: Option<Vec<[f64; 2]>>,
}

impl ImageRecord {
    pub fn polylines(&self) -> Result<Vec<Polyline<f64>>> {
        self.annotations.iter().map(Annotation::polyline).collect()
    }
}

/// Parsed records plus the non-fatal problems found on the way (unknown
/// fields, clamped points).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parsed {
    pub records: Vec<ImageRecord>,
    pub warnings: Vec<String>,
}

pub fn parse_records(path: impl AsRef<Path>) -> Result<Parsed> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_records_str(&text)
}

pub fn parse_records_str(text: &str) -> Result<Parsed> {
    let mut out = Parsed::default();
    let stream = serde_json::Deserializer::from_str(text).into_iter::<Value>();
    for value in stream {
        let value = value.map_err(|e| Error::Parse(format!("record {}: {e}", out.records.len())))?;
        match value {
            Value::Array(items) => {
                for item in items {
                    let rec = parse_record(&item, out.records.len(), &mut out.warnings)?;
                    out.records.push(rec);
                }
            }
            other => {
                let rec = parse_record(&other, out.records.len(), &mut out.warnings)?;
                out.records.push(rec);
            }
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

struct Ctx<'a> {
    record: usize,
    warnings: &'a mut Vec<String>,
}

impl Ctx<'_> {
    fn err(&self, path: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Schema {
            record: self.record,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warn(&mut self, path: &str, message: &str) {
        self.warnings.push(format!("record {}: {path}: {message}", self.record));
    }

    fn object<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err(path, "expected an object"))
    }

    fn check_keys(&mut self, obj: &Map<String, Value>, path: &str, known: &[&str]) {
        for k in obj.keys() {
            if !known.contains(&k.as_str()) {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                self.warn(&p, "unknown field ignored");
            }
        }
    }

    fn required<'v>(&self, obj: &'v Map<String, Value>, key: &str, path: &str) -> Result<&'v Value> {
        obj.get(key).ok_or_else(|| self.err(path, "missing required field"))
    }

    fn dimension(&self, v: &Value, path: &str) -> Result<u32> {
        v.as_u64()
            .filter(|&d| d > 0)
            .and_then(|d| u32::try_from(d).ok())
            .ok_or_else(|| self.err(path, "expected a positive integer"))
    }

    fn points(&mut self, v: &Value, path: &str, info: &ImageInfo) -> Result<Vec<[f64; 2]>> {
        let items = v.as_array().ok_or_else(|| self.err(path, "expected a list of [x, y] pairs"))?;
        let mut out = Vec::with_capacity(items.len());
        let mut clamped = false;
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}[{i}]");
            let pair = item
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| self.err(&p, "expected an [x, y] pair"))?;
            let mut xy = [0.0; 2];
            for (k, (c, bound)) in pair.iter().zip([info.width, info.height]).enumerate() {
                let v = c
                    .as_f64()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(&p, "coordinates must be finite numbers"))?;
                let b = f64::from(bound);
                xy[k] = v.clamp(0.0, b);
                clamped |= xy[k] != v;
            }
            out.push(xy);
        }
        if clamped {
            self.warn(path, "points clamped to the image bounds");
        }
        Ok(out)
    }
}

fn parse_record(v: &Value, record: usize, warnings: &mut Vec<String>) -> Result<ImageRecord> {
    let mut cx = Ctx { record, warnings };
    let top = cx.object(v, "")?;
    cx.check_keys(top, "", &["image", "annotations", "shoulder", "border"]);

    let img = cx.object(cx.required(top, "image", "image")?, "image")?;
    cx.check_keys(img, "image", &["id", "width", "height"]);
    let id = cx
        .required(img, "id", "image.id")?
        .as_str()
        .ok_or_else(|| cx.err("image.id", "expected a string"))?
        .to_string();
    let width = cx.dimension(cx.required(img, "width", "image.width")?, "image.width")?;
    let height = cx.dimension(cx.required(img, "height", "image.height")?, "image.height")?;
    let info = ImageInfo { id, width, height };

    let anns = cx
        .required(top, "annotations", "annotations")?
        .as_array()
        .ok_or_else(|| cx.err("annotations", "expected a list"))?;
    let mut annotations = Vec::with_capacity(anns.len());
    for (i, a) in anns.iter().enumerate() {
        let path = format!("annotations[{i}]");
        let obj = cx.object(a, &path)?;
        cx.check_keys(obj, &path, &["class", "points", "confidence"]);
        let cpath = format!("{path}.class");
        let class = match cx.required(obj, "class", &cpath)?.as_str() {
            Some("villi") => ClassLabel::Villi,
            Some("crypt") => ClassLabel::Crypt,
            Some(other) => {
                return Err(cx.err(cpath, format!("unknown class {other:?}; expected \"villi\" or \"crypt\"")))
            }
            None => return Err(cx.err(cpath, "expected a string")),
        };
        let ppath = format!("{path}.points");
        let points = cx.points(cx.required(obj, "points", &ppath)?, &ppath, &info)?;
        if !(2..=4).contains(&points.len()) {
            return Err(cx.err(ppath, format!("points: expected 2–4, got {}", points.len())));
        }
        let confidence = match obj.get("confidence") {
            None | Some(Value::Null) => None,
            Some(c) => Some(
                c.as_f64()
                    .filter(|c| (0.0..=1.0).contains(c))
                    .ok_or_else(|| cx.err(format!("{path}.confidence"), "expected a number in [0, 1]"))?,
            ),
        };
        annotations.push(Annotation {
            class,
            points,
            confidence,
        });
    }

    let mut curve = |key: &str| -> Result<Option<Vec<[f64; 2]>>> {
        match top.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => cx.points(v, key, &info).map(Some),
        }
    };
    let shoulder = curve("shoulder")?;
    let border = curve("border")?;

    Ok(ImageRecord {
        image: info,
        annotations,
        shoulder,
        border,
    })
}

/// One compact JSON document per line.
pub fn write_records(records: &[ImageRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_string(records: &[ImageRecord]) -> String {
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// An image id with its Vd:Cd ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEntry {
    pub id: String,
    pub vd_cd: f64,
}

/// Ratios as a JSON stream or array of either bare numbers (ids become
/// their position) or `{"id": .., "vd_cd": ..}` objects.
pub fn parse_ratios_str(text: &str) -> Result<Vec<RatioEntry>> {
    let mut out = Vec::new();
    let push = |v: &Value, out: &mut Vec<RatioEntry>| -> Result<()> {
        let idx = out.len();
        let err = |path: &str, msg: &str| Error::Schema {
            record: idx,
            path: path.into(),
            message: msg.into(),
        };
        let entry = match v {
            Value::Number(n) => RatioEntry {
                id: idx.to_string(),
                vd_cd: n.as_f64().ok_or_else(|| err("", "not a finite number"))?,
            },
            Value::Object(o) => RatioEntry {
                id: match o.get("id") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Number(n)) => n.to_string(),
                    None => idx.to_string(),
                    _ => return Err(err("id", "expected a string")),
                },
                vd_cd: o
                    .get("vd_cd")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| err("vd_cd", "missing or not a number"))?,
            },
            _ => return Err(err("", "expected a number or an object")),
        };
        out.push(entry);
        Ok(())
    };
    for value in serde_json::Deserializer::from_str(text).into_iter::<Value>() {
        let value = value.map_err(|e| Error::Parse(format!("ratio {}: {e}", out.len())))?;
        match &value {
            Value::Array(items) => {
                for item in items {
                    push(item, &mut out)?;
                }
            }
            v => push(v, &mut out)?,
        }
    }
    Ok(out)
}
