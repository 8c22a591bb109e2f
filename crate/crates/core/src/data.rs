//! Trajectory ingestion in the ETH/UCY text layout, sliding windows and
//! leave-one-out splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zono::Vec2;

pub const PAST: usize = 8;
pub const FUTURE: usize = 8;
pub const WINDOW: usize = PAST + FUTURE;
pub const NEIGHBOR_RADIUS: f64 = 4.0;
pub const STORE_VERSION: u32 = 1;

/// Column positions (0-based) of a whitespace-delimited trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub frame: usize,
    pub id: usize,
    pub x: usize,
    pub y: usize,
    /// Frame-number increment between consecutive 0.4 s samples.
    pub frame_stride: i64,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self { frame: 0, id: 1, x: 2, y: 3, frame_stride: 10 }
    }
}

/// A contiguous trajectory; `frames` increase by exactly one stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: i64,
    pub frames: Vec<i64>,
    pub points: Vec<Vec2>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn at(&self, frame: i64) -> Option<Vec2> {
        self.frames.binary_search(&frame).ok().map(|i| self.points[i])
    }
}

fn parse_num(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Parse { line, msg: format!("missing {what} column") })?;
    let v: f64 = tok.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} value {tok:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite {what}") });
    }
    Ok(v)
}

/// Parses trajectory text. Rows are sorted per agent by frame; a gap
/// larger than one stride splits a track.
pub fn parse_tracks(text: &str, cols: &ColumnSpec) -> Result<Vec<Track>> {
    if cols.frame_stride <= 0 {
        return Err(Error::Config("frame stride must be positive".into()));
    }
    let mut by_id: BTreeMap<i64, Vec<(i64, Vec2)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let frame = parse_num(toks.get(cols.frame).copied(), line, "frame")?;
        let id = parse_num(toks.get(cols.id).copied(), line, "id")?;
        let x = parse_num(toks.get(cols.x).copied(), line, "x")?;
        let y = parse_num(toks.get(cols.y).copied(), line, "y")?;
        by_id.entry(id.round() as i64).or_default().push((frame.round() as i64, Vec2::new(x, y)));
    }
    let mut tracks = Vec::new();
    for (id, mut rows) in by_id {
        rows.sort_by_key(|r| r.0);
        rows.dedup_by_key(|r| r.0);
        let mut cur = Track { id, frames: Vec::new(), points: Vec::new() };
        for (f, p) in rows {
            if let Some(&last) = cur.frames.last() {
                if f - last != cols.frame_stride {
                    tracks.push(std::mem::replace(&mut cur, Track { id, frames: Vec::new(), points: Vec::new() }));
                }
            }
            cur.frames.push(f);
            cur.points.push(p);
        }
        if !cur.is_empty() {
            tracks.push(cur);
        }
    }
    Ok(tracks)
}

pub fn load_raw(path: &Path, cols: &ColumnSpec) -> Result<Vec<Track>> {
    parse_tracks(&fs::read_to_string(path)?, cols)
}

/// Writes `frame id x y` rows ordered by frame then id.
pub fn write_raw(path: &Path, tracks: &[Track]) -> Result<()> {
    let mut rows: Vec<(i64, i64, Vec2)> = tracks
        .iter()
        .flat_map(|t| t.frames.iter().zip(&t.points).map(move |(&f, &p)| (f, t.id, p)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (f, id, p) in rows {
        writeln!(out, "{f}\t{id}\t{}\t{}", p.x, p.y)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: i64,
    pub past: Vec<Vec2>,
    pub future: Vec<Vec2>,
}

/// One training sample: an ego agent with its neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub scene: String,
    pub ego_id: i64,
    pub start_frame: i64,
    pub ego_past: Vec<Vec2>,
    pub ego_future: Vec<Vec2>,
    pub goal: Vec2,
    pub neighbors: Vec<Neighbor>,
}

impl Window {
    pub fn current(&self) -> Vec2 {
        self.ego_past[PAST - 1]
    }
}

/// Sliding 16-frame windows, one per (ego, start frame). Neighbours need full
/// coverage of the same 16 frames and must be strictly within `radius` of
/// the ego at the last past frame.
pub fn make_windows(scene: &str, tracks: &[Track], radius: f64) -> Vec<Window> {
    let mut out = Vec::new();
    for (ei, ego) in tracks.iter().enumerate() {
        if ego.len() < WINDOW {
            continue;
        }
        let goal = *ego.points.last().unwrap();
        for s in 0..=(ego.len() - WINDOW) {
            let frames = &ego.frames[s..s + WINDOW];
            let now = ego.points[s + PAST - 1];
            let mut neighbors = Vec::new();
            for (ni, other) in tracks.iter().enumerate() {
                if ni == ei {
                    continue;
                }
                let pts: Option<Vec<Vec2>> = frames.iter().map(|&f| other.at(f)).collect();
                let Some(pts) = pts else { continue };
                if (pts[PAST - 1] - now).norm() < radius {
                    neighbors.push(Neighbor { id: other.id, past: pts[..PAST].to_vec(), future: pts[PAST..].to_vec() });
                }
            }
            out.push(Window {
                scene: scene.to_string(),
                ego_id: ego.id,
                start_frame: frames[0],
                ego_past: ego.points[s..s + PAST].to_vec(),
                ego_future: ego.points[s + PAST..s + WINDOW].to_vec(),
                goal,
                neighbors,
            });
        }
    }
    out
}

/// Scenes other than `held_out` become training data.
pub fn loo_split(scenes: &[(String, Vec<Window>)], held_out: &str) -> (Vec<Window>, Vec<Window>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (name, w) in scenes {
        if name == held_out {
            test.extend(w.iter().cloned());
        } else {
            train.extend(w.iter().cloned());
        }
    }
    (train, test)
}

#[derive(Serialize, Deserialize)]
struct WindowStore {
    version: u32,
    windows: Vec<Window>,
}

pub fn save_windows(path: &Path, windows: &[Window]) -> Result<()> {
    let store = WindowStore { version: STORE_VERSION, windows: windows.to_vec() };
    fs::write(path, serde_json::to_vec(&store)?)?;
    Ok(())
}

pub fn load_windows(path: &Path) -> Result<Vec<Window>> {
    let store: WindowStore = serde_json::from_slice(&fs::read(path)?)?;
    if store.version != STORE_VERSION {
        return Err(Error::Integrity(format!("window store version {} (expected {STORE_VERSION})", store.version)));
    }
    Ok(store.windows)
}

/// Loads every `<scene>.txt` under `dir` and windows it.
pub fn load_corpus(dir: &Path, cols: &ColumnSpec) -> Result<Vec<(String, Vec<Window>)>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let name = f.file_stem().unwrap().to_string_lossy().into_owned();
        let tracks = load_raw(&f, cols)?;
        out.push((name.clone(), make_windows(&name, &tracks, NEIGHBOR_RADIUS)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_track(id: i64, n: usize, y: f64) -> Track {
        Track {
            id,
            frames: (0..n as i64).map(|f| f * 10).collect(),
            points: (0..n).map(|i| Vec2::new(0.4 * i as f64, y)).collect(),
        }
    }

    #[test]
    fn two_line_file() {
        let t = parse_tracks("0 1 0.0 0.0\n10 1 0.5 0.0\n", &ColumnSpec::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 2);
    }

    #[test]
    fn out_of_order_frames_are_sorted() {
        let t = parse_tracks("20 1 2 0\n0 1 0 0\n10 1 1 0\n", &ColumnSpec::default()).unwrap();
        assert_eq!(t[0].frames, vec![0, 10, 20]);
        assert_eq!(t[0].points[2].x, 2.0);
    }

    #[test]
    fn gap_splits_track() {
        let t = parse_tracks("0 1 0 0\n10 1 1 0\n30 1 3 0\n", &ColumnSpec::default()).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn parse_error_reports_line() {
        let e = parse_tracks("0 1 0 0\n10 1 abc 0\n", &ColumnSpec::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_tracks("0 1 0\n", &ColumnSpec::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn custom_columns() {
        let cols = ColumnSpec { frame: 1, id: 0, x: 3, y: 2, frame_stride: 1 };
        let t = parse_tracks("7 0 5.0 1.0\n7 1 6.0 2.0\n", &cols).unwrap();
        assert_eq!(t[0].id, 7);
        assert_eq!(t[0].points[1], Vec2::new(2.0, 6.0));
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows("s", &[line_track(1, 16, 0.0)], 4.0).len(), 1);
        assert!(make_windows("s", &[line_track(1, 16, 0.0)], 4.0)[0].neighbors.is_empty());
        assert_eq!(make_windows("s", &[line_track(1, 17, 0.0)], 4.0).len(), 2);
        assert!(make_windows("s", &[line_track(1, 15, 0.0)], 4.0).is_empty());
    }

    #[test]
    fn neighbor_radius_rule() {
        let w = make_windows("s", &[line_track(1, 16, 0.0), line_track(2, 16, 3.9)], 4.0);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].neighbors.len(), 1);
        let w = make_windows("s", &[line_track(1, 16, 0.0), line_track(2, 16, 4.1)], 4.0);
        assert!(w[0].neighbors.is_empty());
    }

    #[test]
    fn goal_is_track_end() {
        let w = make_windows("s", &[line_track(1, 20, 0.0)], 4.0);
        assert!(w.iter().all(|w| w.goal == Vec2::new(0.4 * 19.0, 0.0)));
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        let w = make_windows("s", &[line_track(1, 18, 0.0), line_track(2, 18, 1.0)], 4.0);
        save_windows(&p, &w).unwrap();
        assert_eq!(load_windows(&p).unwrap(), w);
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.txt");
        let tracks = vec![line_track(1, 5, 0.0), line_track(2, 3, 1.0)];
        write_raw(&p, &tracks).unwrap();
        assert_eq!(load_raw(&p, &ColumnSpec::default()).unwrap(), tracks);
    }
}
