//! JSON-lines frame dumps: one frame per line with its id, a row-major 3×4
//! pose and an optional pointmap file reference.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::ChunkPrediction;
use crate::error::{Error, Result};
use crate::geometry::{Pointmap, PoseSE3, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_index: Option<usize>,
    pub frame_id: usize,
    pub pose: [f64; 12],
    /// Path of a JSON pointmap, relative to the dump file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointmap: Option<String>,
}

pub fn write_records<W: Write>(records: &[FrameRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn trajectory_records(traj: &Trajectory) -> Vec<FrameRecord> {
    traj.entries()
        .iter()
        .map(|(id, p)| FrameRecord {
            chunk_index: None,
            frame_id: *id,
            pose: p.to_row_major_3x4(),
            pointmap: None,
        })
        .collect()
}

pub fn records_to_trajectory(records: &[FrameRecord]) -> Result<Trajectory> {
    Trajectory::new(records.iter().map(|r| (r.frame_id, PoseSE3::from_row_major_3x4(&r.pose))).collect())
}

fn pointmap_dir(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dump");
    path.with_file_name(format!("{stem}.pointmaps"))
}

/// Write raw chunk predictions; pointmaps go to a sibling `<stem>.pointmaps/` directory.
pub fn write_prediction_dump(chunks: &[ChunkPrediction], path: &Path) -> Result<()> {
    let dir = pointmap_dir(path);
    let dir_name = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let mut records = Vec::new();
    for c in chunks {
        c.validate()?;
        if !c.pointmaps.is_empty() {
            std::fs::create_dir_all(&dir)?;
        }
        for (i, (id, pose)) in c.frame_ids.iter().zip(&c.poses).enumerate() {
            let pointmap = match c.pointmaps.get(i) {
                Some(pm) => {
                    let name = format!("c{}_f{}.json", c.chunk_index, id);
                    std::fs::write(dir.join(&name), serde_json::to_vec(pm)?)?;
                    Some(format!("{dir_name}/{name}"))
                }
                None => None,
            };
            records.push(FrameRecord {
                chunk_index: Some(c.chunk_index),
                frame_id: *id,
                pose: pose.to_row_major_3x4(),
                pointmap,
            });
        }
    }
    write_records(&records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Group frame records back into chunks, loading referenced pointmaps.
pub fn read_prediction_dump(path: &Path) -> Result<Vec<ChunkPrediction>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let records = read_records(file)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut chunks: Vec<ChunkPrediction> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let m = r.chunk_index.ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "prediction records need a chunk_index".into(),
        })?;
        if chunks.last().is_none_or(|c| c.chunk_index != m) {
            if chunks.iter().any(|c| c.chunk_index == m) {
                return Err(Error::Data(format!("records of chunk {m} are not contiguous")));
            }
            chunks.push(ChunkPrediction {
                chunk_index: m,
                frame_ids: Vec::new(),
                poses: Vec::new(),
                pointmaps: Vec::new(),
            });
        }
        let c = chunks.last_mut().expect("pushed above");
        let pose = PoseSE3::from_row_major_3x4(&r.pose);
        pose.validate().map_err(|e| Error::Pose(format!("record {}: {e}", i + 1)))?;
        c.frame_ids.push(r.frame_id);
        c.poses.push(pose);
        if let Some(rel) = &r.pointmap {
            let pm: Pointmap = serde_json::from_slice(&std::fs::read(base.join(rel))?)?;
            c.pointmaps.push(pm);
        }
    }
    for c in &chunks {
        c.validate()?;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_scene, oracle_predict, partition_chunks, GaugeMode, MotionModel, OracleConfig};

    #[test]
    fn trajectory_records_round_trip() {
        let scene = generate_scene(7, MotionModel::Turn, 1).unwrap();
        let mut buf = Vec::new();
        write_records(&trajectory_records(&scene.trajectory), &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 7);
        let back = records_to_trajectory(&read_records(&buf[..]).unwrap()).unwrap();
        assert_eq!(back, scene.trajectory);
    }

    #[test]
    fn prediction_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let scene = generate_scene(20, MotionModel::Loop, 2).unwrap();
        let plan = partition_chunks(20, 6, 2).unwrap();
        let cfg = OracleConfig {
            gauge_mode: GaugeMode::PerChunkSim3,
            seed: 3,
            ..OracleConfig::default()
        };
        let preds = oracle_predict(&scene, &plan, &cfg).unwrap();
        write_prediction_dump(&preds, &path).unwrap();
        assert_eq!(read_prediction_dump(&path).unwrap(), preds);
    }

    #[test]
    fn bad_lines_report_their_number() {
        let text = "{\"frame_id\":0,\"pose\":[1,0,0,0,0,1,0,0,0,0,1,0]}\n{\"frame_id\":1}\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
