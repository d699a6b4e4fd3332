//! Dataset manifest and per-frame file layout.
//!
//! A manifest is a line-oriented text file:
//!
//! ```text
//! stride 10
//! history 2
//! <id> <frame_count> <relative_dir>
//! ```
//!
//! `frame_count` is the number of stored frames; frames `0, stride, 2*stride, ...`
//! below it are sampled. Each scenario directory holds `rgb/NNNN.png`,
//! `recon/NNNN.f32t`, `pred/NNNN_k.f32t` for k = 1..history, `masks/NNNN.png`
//! and `gt/NNNN.png`, where NNNN is the stored frame index. Blank lines and
//! lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const DEFAULT_STRIDE: usize = 10;
pub const DEFAULT_HISTORY: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    /// Stored frames, before stride sampling.
    pub frame_count: usize,
    /// Directory as written in the manifest, relative to the manifest file.
    pub relative_dir: PathBuf,
    pub dir: PathBuf,
}

/// Files backing one sampled frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePaths {
    pub rgb: PathBuf,
    pub recon: PathBuf,
    /// `preds[k - 1]` is the prediction made k sampled steps earlier.
    pub preds: Vec<PathBuf>,
    pub masks: PathBuf,
    pub gt: PathBuf,
}

/// Reference to a sampled frame of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRef {
    pub scenario: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub stride: usize,
    pub history: usize,
    pub scenarios: Vec<Scenario>,
}

pub fn frame_name(frame: usize) -> String {
    format!("{frame:04}")
}

impl Scenario {
    pub fn frame_paths(&self, frame: usize, history: usize) -> FramePaths {
        let name = frame_name(frame);
        FramePaths {
            rgb: self.dir.join("rgb").join(format!("{name}.png")),
            recon: self.dir.join("recon").join(format!("{name}.f32t")),
            preds: (1..=history)
                .map(|k| self.dir.join("pred").join(format!("{name}_{k}.f32t")))
                .collect(),
            masks: self.dir.join("masks").join(format!("{name}.png")),
            gt: self.dir.join("gt").join(format!("{name}.png")),
        }
    }
}

impl DatasetManifest {
    /// Parses manifest text; relative scenario directories resolve against `root`.
    pub fn parse(text: &str, root: &Path, source: &Path) -> Result<Self> {
        let bad = |line_no: usize, msg: String| {
            Error::format(source, "manifest", format!("line {line_no}: {msg}"))
        };
        let mut stride = DEFAULT_STRIDE;
        let mut history = DEFAULT_HISTORY;
        let mut scenarios = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let positive = |s: &str, what: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(bad(line_no, format!("{what} must be a positive integer, got {s:?}"))),
                }
            };
            match fields.as_slice() {
                ["stride", v] => stride = positive(v, "stride")?,
                ["history", v] => history = positive(v, "history")?,
                [id, count, dir] => {
                    let frame_count = positive(count, "frame count")?;
                    if !seen.insert(id.to_string()) {
                        return Err(bad(line_no, format!("duplicate scenario id {id}")));
                    }
                    scenarios.push(Scenario {
                        id: id.to_string(),
                        frame_count,
                        relative_dir: PathBuf::from(dir),
                        dir: root.join(dir),
                    });
                }
                _ => return Err(bad(line_no, format!("unrecognised line {line:?}"))),
            }
        }
        Ok(Self {
            stride,
            history,
            scenarios,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("stride {}\nhistory {}\n", self.stride, self.history);
        for s in &self.scenarios {
            let _ = writeln!(out, "{} {} {}", s.id, s.frame_count, s.relative_dir.display());
        }
        out
    }

    /// Sampled stored-frame indices of a scenario, ascending.
    pub fn sampled_frames(&self, scenario: &Scenario) -> Vec<usize> {
        (0..scenario.frame_count).step_by(self.stride).collect()
    }

    /// Every sampled frame in manifest order.
    pub fn frames(&self) -> Vec<FrameRef> {
        self.scenarios
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                self.sampled_frames(s)
                    .into_iter()
                    .map(move |frame| FrameRef { scenario: si, frame })
            })
            .collect()
    }

    pub fn frame_paths(&self, frame: FrameRef) -> FramePaths {
        self.scenarios[frame.scenario].frame_paths(frame.frame, self.history)
    }

    /// Checks that every file of every sampled frame exists.
    pub fn verify(&self) -> Result<()> {
        for f in self.frames() {
            let scenario = &self.scenarios[f.scenario];
            let paths = self.frame_paths(f);
            let roles = [
                ("rgb", &paths.rgb),
                ("recon", &paths.recon),
                ("masks", &paths.masks),
                ("gt", &paths.gt),
            ];
            let preds = paths.preds.iter().map(|p| ("pred", p));
            for (role, path) in roles.into_iter().chain(preds) {
                if !path.is_file() {
                    return Err(Error::MissingFrameFile {
                        scenario: scenario.id.clone(),
                        frame: f.frame,
                        role,
                        path: path.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Same manifest with a different history depth, re-verified.
    pub fn with_history(mut self, history: usize) -> Result<Self> {
        if history == 0 {
            return Err(Error::Config("history depth must be positive".into()));
        }
        self.history = history;
        self.verify()?;
        Ok(self)
    }
}

/// Reads, parses and verifies a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = DatasetManifest::parse(&text, root, path)?;
    manifest.verify()?;
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_frame(dir: &Path, frame: usize, history: usize) {
        let s = Scenario {
            id: String::new(),
            frame_count: 0,
            relative_dir: PathBuf::new(),
            dir: dir.to_path_buf(),
        };
        let p = s.frame_paths(frame, history);
        for path in [&p.rgb, &p.recon, &p.masks, &p.gt].into_iter().chain(p.preds.iter()) {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, b"").unwrap();
        }
    }

    fn build(root: &Path, scenarios: &[(&str, usize)], stride: usize, history: usize) -> PathBuf {
        let mut text = format!("stride {stride}\nhistory {history}\n");
        for (id, count) in scenarios {
            for frame in (0..*count).step_by(stride) {
                touch_frame(&root.join(id), frame, history);
            }
            text.push_str(&format!("{id} {count} {id}\n"));
        }
        let path = root.join("manifest.txt");
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn two_scenarios_all_present() {
        let dir = tempfile::tempdir().unwrap();
        let path = build(dir.path(), &[("a", 20), ("b", 20)], 1, 2);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.scenarios.len(), 2);
        assert_eq!(m.frames().len(), 40);
        assert_eq!(m, load_manifest(&path).unwrap());
    }

    #[test]
    fn stride_ten_over_two_hundred_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = build(dir.path(), &[("s", 200)], 10, 2);
        let m = load_manifest(&path).unwrap();
        let frames = m.sampled_frames(&m.scenarios[0]);
        assert_eq!(frames.len(), 20);
        assert_eq!(frames[1], 10);
        assert_eq!(*frames.last().unwrap(), 190);
    }

    #[test]
    fn missing_reconstruction_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = build(dir.path(), &[("a", 3)], 1, 1);
        fs::remove_file(dir.path().join("a/recon/0002.f32t")).unwrap();
        match load_manifest(&path).unwrap_err() {
            Error::MissingFrameFile {
                scenario,
                frame,
                role,
                ..
            } => {
                assert_eq!(scenario, "a");
                assert_eq!(frame, 2);
                assert_eq!(role, "recon");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn deeper_history_needs_more_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = build(dir.path(), &[("a", 2)], 1, 2);
        let m = load_manifest(&path).unwrap();
        assert!(m.clone().with_history(1).is_ok());
        assert!(matches!(
            m.with_history(3),
            Err(Error::MissingFrameFile { role: "pred", .. })
        ));
    }

    #[test]
    fn defaults_and_parse_errors() {
        let root = Path::new("/data");
        let m = DatasetManifest::parse("# c\n\nx 5 dir\n", root, Path::new("m")).unwrap();
        assert_eq!(m.stride, DEFAULT_STRIDE);
        assert_eq!(m.history, DEFAULT_HISTORY);
        assert_eq!(m.scenarios[0].dir, root.join("dir"));
        assert_eq!(
            DatasetManifest::parse(&m.to_text(), root, Path::new("m")).unwrap(),
            m
        );
        for bad in ["stride 0\n", "x y\n", "a 1 d\na 2 d\n", "a -1 d\n", "history two\n"] {
            assert!(DatasetManifest::parse(bad, root, Path::new("m")).is_err(), "{bad}");
        }
    }
}
