//! JSON/CSV file formats for skeletons and motions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSeq, Skeleton};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub joints: Vec<String>,
    pub edges: Vec<[usize; 2]>,
}

impl SkeletonFile {
    pub fn from_skeleton(skeleton: &Skeleton) -> Self {
        let joints = match skeleton.joint_names() {
            Some(names) => names.to_vec(),
            None => (0..skeleton.joint_count()).map(|j| format!("j{j}")).collect(),
        };
        SkeletonFile {
            joints,
            edges: skeleton.edges().iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn into_skeleton(self) -> Result<Skeleton> {
        let edges = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Skeleton::new(self.joints.len(), edges, Some(self.joints))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkeletonRef {
    Path(String),
    Inline(SkeletonFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionFile {
    pub fps: f64,
    pub skeleton: SkeletonRef,
    pub frames: Vec<Vec<[f64; 3]>>,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_skeleton(text: &str) -> Result<Skeleton> {
    from_json::<SkeletonFile>(text, "skeleton")?.into_skeleton()
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    parse_skeleton(&read_text(path.as_ref())?)
}

pub fn save_skeleton(path: impl AsRef<Path>, skeleton: &Skeleton) -> Result<()> {
    write_text(path.as_ref(), &to_json(&SkeletonFile::from_skeleton(skeleton))?)
}

/// A loaded motion file.
#[derive(Debug, Clone)]
pub struct LoadedMotion {
    pub motion: MotionSeq,
    pub fps: f64,
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<LoadedMotion> {
    let path = path.as_ref();
    let file: MotionFile = from_json(&read_text(path)?, "motion")?;
    let skeleton = match file.skeleton {
        SkeletonRef::Inline(s) => s.into_skeleton()?,
        SkeletonRef::Path(p) => {
            let mut full = PathBuf::from(&p);
            if full.is_relative() {
                if let Some(dir) = path.parent() {
                    full = dir.join(full);
                }
            }
            load_skeleton(full)?
        }
    };
    let skeleton = Arc::new(skeleton);
    let joints = skeleton.joint_count();
    let n_frames = file.frames.len();
    let mut data = Vec::with_capacity(n_frames * joints);
    for (n, frame) in file.frames.into_iter().enumerate() {
        if frame.len() != joints {
            return Err(Error::Parse(format!(
                "frame {n} has {} joints, skeleton has {joints}",
                frame.len()
            )));
        }
        data.extend(frame);
    }
    Ok(LoadedMotion {
        motion: MotionSeq::new(skeleton, n_frames, data)?,
        fps: file.fps,
    })
}

/// Writes a motion file. With `skeleton_path = None` the skeleton is stored inline.
pub fn save_motion(path: impl AsRef<Path>, motion: &MotionSeq, fps: f64, skeleton_path: Option<&str>) -> Result<()> {
    let skeleton = match skeleton_path {
        Some(p) => SkeletonRef::Path(p.to_string()),
        None => SkeletonRef::Inline(SkeletonFile::from_skeleton(motion.skeleton())),
    };
    let frames = (0..motion.frames()).map(|n| motion.frame(n).to_vec()).collect();
    let file = MotionFile { fps, skeleton, frames };
    write_text(path.as_ref(), &to_json(&file)?)
}

/// One row per frame, columns `j0_x, j0_y, j0_z, j1_x, ...`.
pub fn motion_to_csv(motion: &MotionSeq) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..motion.joints())
        .flat_map(|j| ["x", "y", "z"].map(|a| format!("j{j}_{a}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..motion.frames() {
        let row: Vec<String> = motion
            .frame(n)
            .iter()
            .flat_map(|p| p.iter().map(|v| format!("{v:?}")))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn save_motion_csv(path: impl AsRef<Path>, motion: &MotionSeq) -> Result<()> {
    write_text(path.as_ref(), &motion_to_csv(motion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_joint_chain_parses() {
        let s = parse_skeleton(r#"{"joints": ["a", "b"], "edges": [[0, 1]]}"#).unwrap();
        assert_eq!(s.joint_count(), 2);
    }

    #[test]
    fn disconnected_file_is_rejected() {
        let err = parse_skeleton(r#"{"joints": ["a", "b", "c"], "edges": [[0, 1]]}"#).unwrap_err();
        assert!(matches!(err, Error::Skeleton(_)));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_skeleton("{joints"), Err(Error::Parse(_))));
    }

    #[test]
    fn motion_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let skel = Arc::new(Skeleton::humanml3d());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = (0..7 * 22)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>() * 1e-7,
                    -rng.random::<f64>() * 1e5,
                ]
            })
            .collect();
        let m = MotionSeq::new(skel, 7, data).unwrap();
        let path = dir.path().join("m.json");
        save_motion(&path, &m, 20.0, None).unwrap();
        let back = load_motion(&path).unwrap();
        let diff = m
            .vectorize()
            .iter()
            .zip(back.motion.vectorize())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12);
        assert_eq!(back.fps, 20.0);
    }

    #[test]
    fn motion_with_skeleton_path() {
        let dir = tempfile::tempdir().unwrap();
        let skel = Skeleton::chain(3).unwrap();
        save_skeleton(dir.path().join("s.json"), &skel).unwrap();
        let m = MotionSeq::zeros(Arc::new(skel), 2);
        save_motion(dir.path().join("m.json"), &m, 30.0, Some("s.json")).unwrap();
        let back = load_motion(dir.path().join("m.json")).unwrap();
        assert_eq!(back.motion.joints(), 3);
    }

    #[test]
    fn motion_shape_mismatch() {
        let text = r#"{"fps": 20, "skeleton": {"joints": ["a","b"], "edges": [[0,1]]},
                       "frames": [[[0,0,0]]]}"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_motion(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn csv_layout() {
        let skel = Arc::new(Skeleton::chain(2).unwrap());
        let m = MotionSeq::new(skel, 1, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]).unwrap();
        let csv = motion_to_csv(&m);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "j0_x,j0_y,j0_z,j1_x,j1_y,j1_z");
        assert_eq!(lines[1], "1.0,2.0,3.0,4.0,5.0,6.5");
    }
}
