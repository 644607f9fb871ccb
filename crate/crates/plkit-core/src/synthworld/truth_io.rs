//! Hidden-truth log: JSON-lines persistence of the world's object records,
//! class centers, and simulator events, enough to rebuild the oracle
//! feature function outside the generating process.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HiddenObject, SimEvent, SimulatorOutput, WorldTruth};
use crate::datamodel::DataError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TruthRecord {
    Center { class_id: u32, vector: Vec<f32> },
    Object(HiddenObject),
    Event(SimEvent),
}

/// In-memory form of a truth log file.
#[derive(Debug, Clone, Default)]
pub struct TruthLog {
    pub class_centers: Vec<(u32, Vec<f32>)>,
    pub objects: Vec<HiddenObject>,
    pub events: Vec<SimEvent>,
}

impl TruthLog {
    pub fn object_by_ann(&self, ann_id: u64) -> Option<&HiddenObject> {
        self.objects.iter().find(|o| o.ann_id == ann_id)
    }

    pub fn source_of(&self, det_id: u64) -> Option<u64> {
        self.events.iter().find_map(|e| match e {
            SimEvent::Emitted { det_id: d, ann_id, .. } if *d == det_id => Some(*ann_id),
            _ => None,
        })
    }

    pub fn center_of(&self, class_id: u32) -> Option<&[f32]> {
        self.class_centers
            .iter()
            .find(|(c, _)| *c == class_id)
            .map(|(_, v)| v.as_slice())
    }
}

/// Writes world truth and the simulator's event log as JSON lines.
pub fn write_truth_log(
    world: &WorldTruth,
    sim: &SimulatorOutput,
    path: &Path,
) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |record: &TruthRecord| -> Result<(), DataError> {
        let line = serde_json::to_string(record).expect("truth record serializes");
        writeln!(out, "{line}").map_err(|e| DataError::io(path, e))
    };
    for (i, center) in world.class_centers.iter().enumerate() {
        write(&TruthRecord::Center {
            class_id: (i + 1) as u32,
            vector: center.clone(),
        })?;
    }
    for obj in &world.objects {
        write(&TruthRecord::Object(obj.clone()))?;
    }
    for event in &sim.events {
        write(&TruthRecord::Event(event.clone()))?;
    }
    Ok(())
}

/// Reads a truth log written by [`write_truth_log`].
pub fn read_truth_log(path: &Path) -> Result<TruthLog, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut log = TruthLog::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TruthRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        match record {
            TruthRecord::Center { class_id, vector } => log.class_centers.push((class_id, vector)),
            TruthRecord::Object(obj) => log.objects.push(obj),
            TruthRecord::Event(event) => log.events.push(event),
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, simulate_detector, NoiseConfig, WorldConfig};

    #[test]
    fn truth_log_roundtrips() {
        let cfg = WorldConfig {
            n_images: 10,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, 2).unwrap();
        let noise = NoiseConfig::default().expand(cfg.n_base, cfg.n_novel);
        let sim = simulate_detector(&world, &noise, 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        write_truth_log(&world, &sim, &path).unwrap();
        let log = read_truth_log(&path).unwrap();

        assert_eq!(log.objects, world.objects);
        assert_eq!(log.events, sim.events);
        assert_eq!(log.class_centers.len(), cfg.n_classes());
        assert_eq!(log.center_of(1).unwrap(), world.center_of(crate::datamodel::CategoryId(1)));
        for det in &sim.detections {
            assert_eq!(log.source_of(det.det_id), sim.source_of(det.det_id));
        }
    }
}
