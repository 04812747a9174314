//! File formats: track CSV and the JSON documents written by the CLI.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{ProjectionMatrix, RealSpaceGeometry};
use crate::homography::AmbiguityResolution;
use crate::simulation::{write_histogram_csv, MonteCarloReport, Scenario};
use crate::solver::CalibrationResult;
use crate::trajectory::{SinusoidParams, TrackSamples};

/// One row of a track CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub marker: u32,
    pub view: usize,
    pub phi_rad: f64,
    pub h_px: f64,
    pub v_px: f64,
}

pub fn write_tracks<W: Write>(tracks: &[TrackSamples], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in tracks {
        for j in 0..t.len() {
            w.serialize(TrackRow { marker: t.marker, view: j, phi_rad: t.phi[j], h_px: t.h[j], v_px: t.v[j] })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a track CSV. Rows may come in any order; every marker needs the
/// views `0..N` exactly once. Tracks are returned sorted by marker id.
pub fn read_tracks<R: Read>(input: R) -> Result<Vec<TrackSamples>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut by_marker: BTreeMap<u32, BTreeMap<usize, TrackRow>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: TrackRow = row?;
        if by_marker.entry(row.marker).or_default().insert(row.view, row).is_some() {
            return Err(CalibError::InvalidTrack(format!("marker {}: view {} appears twice", row.marker, row.view)));
        }
    }
    if by_marker.is_empty() {
        return Err(CalibError::InvalidTrack("no samples".into()));
    }
    by_marker
        .into_iter()
        .map(|(marker, rows)| {
            let n = rows.len();
            if rows.keys().next_back() != Some(&(n - 1)) {
                return Err(CalibError::InvalidTrack(format!("marker {marker}: views are not numbered 0..{n}")));
            }
            let phi = rows.values().map(|r| r.phi_rad).collect();
            let h = rows.values().map(|r| r.h_px).collect();
            let v = rows.values().map(|r| r.v_px).collect();
            TrackSamples::from_parts(marker, phi, h, v)
        })
        .collect()
}

/// Sinusoid parameters of one marker, as written by `extract`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerParams {
    pub marker: u32,
    #[serde(flatten)]
    pub params: SinusoidParams,
}

/// Calibration output: the resolved solution plus how it was resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    #[serde(flatten)]
    pub result: CalibrationResult,
    pub tilt_degenerate: bool,
    pub ambiguity: AmbiguityResolution,
    pub geometry: RealSpaceGeometry,
}

/// Ground truth written by `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub matrix: ProjectionMatrix,
    pub noise_sigma: f64,
    pub n_views: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CalibError::File { path: path.into(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CalibError::File { path: path.into(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_tracks_file(path: &Path) -> Result<Vec<TrackSamples>> {
    read_tracks(open(path)?)
}

pub fn write_tracks_file(path: &Path, tracks: &[TrackSamples]) -> Result<()> {
    write_tracks(tracks, create(path)?)
}

pub fn write_histogram_file(path: &Path, report: &MonteCarloReport) -> Result<()> {
    write_histogram_csv(report, create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(marker: u32, n: usize) -> TrackSamples {
        let h = (0..n).map(|j| 0.1 * j as f64 + marker as f64).collect();
        let v = (0..n).map(|j| -1.0 / (j as f64 + 3.0)).collect();
        TrackSamples::new(marker, h, v).unwrap()
    }

    #[test]
    fn tracks_round_trip_exactly() {
        let tracks = vec![track(3, 8), track(7, 8)];
        let mut buf = Vec::new();
        write_tracks(&tracks, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("marker,view,phi_rad,h_px,v_px\n"));
        assert_eq!(read_tracks(buf.as_slice()).unwrap(), tracks);
    }

    #[test]
    fn rows_in_any_order() {
        let tracks = vec![track(1, 6), track(2, 6)];
        let mut buf = Vec::new();
        write_tracks(&tracks, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        assert_eq!(read_tracks(shuffled.as_bytes()).unwrap(), tracks);
    }

    #[test]
    fn missing_and_duplicate_views_are_rejected() {
        let head = "marker,view,phi_rad,h_px,v_px\n";
        let dup = format!("{head}0,0,0,1,1\n0,0,0,1,1\n");
        assert!(matches!(read_tracks(dup.as_bytes()), Err(CalibError::InvalidTrack(_))));
        let gap = format!("{head}0,0,0,1,1\n0,2,0,1,1\n");
        assert!(matches!(read_tracks(gap.as_bytes()), Err(CalibError::InvalidTrack(_))));
        assert!(matches!(read_tracks(head.as_bytes()), Err(CalibError::InvalidTrack(_))));
    }

    #[test]
    fn marker_params_are_flat() {
        let p = MarkerParams {
            marker: 4,
            params: SinusoidParams {
                a_h: 1.0,
                a_v: 2.0,
                a_w: 0.01,
                phi0_h: 0.1,
                phi0_v: 0.2,
                phi0_w: 0.3,
                o_h: 5.0,
                o_v: 6.0,
            },
        };
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v["marker"], 4);
        assert_eq!(v["a_h"], 1.0);
        assert_eq!(v["phi0_w"], 0.3);
        assert_eq!(serde_json::from_value::<MarkerParams>(v).unwrap(), p);
    }
}
