//! Detections and the shared JSON-lines detections file
//! (`{scene_id, dets:[{cx,cy,w,l,yaw,score}]}` per line).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::OrientedBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: OrientedBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: OrientedBox, score: f64) -> Self {
        Detection { bbox, score }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        self.bbox.validate(field)?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::validation(
                format!("{field}.score"),
                format!("score must lie in [0, 1], got {}", self.score),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDetections {
    pub scene_id: u64,
    pub dets: Vec<Detection>,
}

pub fn save_detections(path: impl AsRef<Path>, rows: &[SceneDetections]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<SceneDetections>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: SceneDetections = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for (k, d) in row.dets.iter().enumerate() {
            d.validate(&format!("line {}: dets[{k}]", i + 1))?;
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_json_roundtrip() {
        let rows = vec![SceneDetections {
            scene_id: 3,
            dets: vec![Detection::new(OrientedBox::new(1.0, -2.0, 1.9, 4.5, 0.1), 0.75)],
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_detections(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"cx\":1.0") && text.contains("\"score\":0.75"), "{text}");
        assert_eq!(load_detections(&p).unwrap(), rows);
    }

    #[test]
    fn bad_score_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, r#"{"scene_id":0,"dets":[{"cx":0,"cy":0,"w":1,"l":1,"yaw":0,"score":1.5}]}"#).unwrap();
        assert!(load_detections(&p).is_err());
    }
}
