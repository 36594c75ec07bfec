//! Parser for COLMAP's sparse-model text export (`cameras.txt`,
//! `images.txt`, `points3D.txt`).
//!
//! Only the undistorted `PINHOLE` and `SIMPLE_PINHOLE` camera models are
//! accepted; COLMAP distortion models are rejected so the caller never
//! silently renders through ignored distortion parameters.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{CameraError, Intrinsics, Pose, SparsePoint};

/// One registered image: its intrinsics, world-to-camera pose, and file name.
#[derive(Debug, Clone)]
pub struct ColmapView {
    pub image_id: u32,
    pub name: String,
    pub intrinsics: Intrinsics<f64>,
    pub pose: Pose<f64>,
}

/// Parses a COLMAP text model directory. Views come back sorted by image id;
/// points keep only tracks observed in at least two images.
pub fn parse_colmap(dir: &Path) -> Result<(Vec<ColmapView>, Vec<SparsePoint>), CameraError> {
    let cameras = parse_cameras(&read(dir, "cameras.txt")?)?;
    let mut views = parse_images(&read(dir, "images.txt")?, &cameras)?;
    views.sort_by_key(|v| v.image_id);
    let points = parse_points(&read(dir, "points3D.txt")?)?;
    Ok((views, points))
}

fn read(dir: &Path, name: &str) -> Result<(String, String), CameraError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)
        .map_err(|_| CameraError::MissingFile(path.display().to_string()))?;
    Ok((name.to_string(), text))
}

fn err(file: &str, line: usize, msg: impl Into<String>) -> CameraError {
    CameraError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(
    tok: Option<&str>,
    file: &str,
    line: usize,
    what: &str,
) -> Result<T, CameraError> {
    tok.ok_or_else(|| err(file, line, format!("missing {what}")))?
        .parse::<T>()
        .map_err(|_| err(file, line, format!("invalid {what}")))
}

fn parse_cameras(
    (file, text): &(String, String),
) -> Result<HashMap<u32, Intrinsics<f64>>, CameraError> {
    let mut out = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let id: u32 = parse_num(toks.next(), file, line, "camera id")?;
        let model = toks
            .next()
            .ok_or_else(|| err(file, line, "missing camera model"))?;
        let width: u32 = parse_num(toks.next(), file, line, "width")?;
        let height: u32 = parse_num(toks.next(), file, line, "height")?;
        let k = match model {
            "PINHOLE" => {
                let fx: f64 = parse_num(toks.next(), file, line, "fx")?;
                let fy: f64 = parse_num(toks.next(), file, line, "fy")?;
                let cx: f64 = parse_num(toks.next(), file, line, "cx")?;
                let cy: f64 = parse_num(toks.next(), file, line, "cy")?;
                Intrinsics::new(fx, fy, cx, cy, width, height)?
            }
            "SIMPLE_PINHOLE" => {
                let f: f64 = parse_num(toks.next(), file, line, "f")?;
                let cx: f64 = parse_num(toks.next(), file, line, "cx")?;
                let cy: f64 = parse_num(toks.next(), file, line, "cy")?;
                Intrinsics::new(f, f, cx, cy, width, height)?
            }
            other => {
                return Err(err(
                    file,
                    line,
                    format!(
                        "camera model {other} is not supported; only PINHOLE and \
                         SIMPLE_PINHOLE (undistorted) models are accepted"
                    ),
                ))
            }
        };
        out.insert(id, k);
    }
    Ok(out)
}

fn parse_images(
    (file, text): &(String, String),
    cameras: &HashMap<u32, Intrinsics<f64>>,
) -> Result<Vec<ColmapView>, CameraError> {
    let mut out = Vec::new();
    // images.txt alternates a pose line with a 2D-observations line; the
    // observations line may be completely empty and must still be consumed.
    let mut expect_points_line = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if expect_points_line {
            expect_points_line = false;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let image_id: u32 = parse_num(toks.next(), file, line, "image id")?;
        let qw: f64 = parse_num(toks.next(), file, line, "quaternion qw")?;
        let qx: f64 = parse_num(toks.next(), file, line, "quaternion qx")?;
        let qy: f64 = parse_num(toks.next(), file, line, "quaternion qy")?;
        let qz: f64 = parse_num(toks.next(), file, line, "quaternion qz")?;
        let tx: f64 = parse_num(toks.next(), file, line, "translation tx")?;
        let ty: f64 = parse_num(toks.next(), file, line, "translation ty")?;
        let tz: f64 = parse_num(toks.next(), file, line, "translation tz")?;
        let camera_id: u32 = parse_num(toks.next(), file, line, "camera id")?;
        let name = toks
            .next()
            .ok_or_else(|| err(file, line, "missing image name"))?
            .to_string();
        let intrinsics = *cameras
            .get(&camera_id)
            .ok_or_else(|| err(file, line, format!("unknown camera id {camera_id}")))?;
        let pose = Pose::from_quaternion([qw, qx, qy, qz], [tx, ty, tz]);
        out.push(ColmapView {
            image_id,
            name,
            intrinsics,
            pose,
        });
        expect_points_line = true;
    }
    Ok(out)
}

fn parse_points((file, text): &(String, String)) -> Result<Vec<SparsePoint>, CameraError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let _id: u64 = parse_num(toks.next(), file, line, "point id")?;
        let x: f64 = parse_num(toks.next(), file, line, "x")?;
        let y: f64 = parse_num(toks.next(), file, line, "y")?;
        let z: f64 = parse_num(toks.next(), file, line, "z")?;
        let r: f64 = parse_num(toks.next(), file, line, "r")?;
        let g: f64 = parse_num(toks.next(), file, line, "g")?;
        let b: f64 = parse_num(toks.next(), file, line, "b")?;
        let _error: f64 = parse_num(toks.next(), file, line, "error")?;
        let track: Vec<&str> = toks.collect();
        if track.len() % 2 != 0 {
            return Err(err(file, line, "track has an odd number of entries"));
        }
        if !x.is_finite() || !y.is_finite() || !z.is_finite() {
            return Err(err(file, line, "non-finite point position"));
        }
        // Track pairs are (image_id, point2d_idx); short tracks are unstable
        // triangulations.
        if track.len() / 2 >= 2 {
            out.push(SparsePoint {
                position: [x, y, z],
                color: [r / 255.0, g / 255.0, b / 255.0],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, cameras: &str, images: &str, points: &str) {
        fs::write(dir.join("cameras.txt"), cameras).unwrap();
        fs::write(dir.join("images.txt"), images).unwrap();
        fs::write(dir.join("points3D.txt"), points).unwrap();
    }

    #[test]
    fn minimal_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "# cameras\n1 PINHOLE 640 480 500 510 320 240\n",
            "# images\n7 1 0 0 0 0.5 -1 2 1 view_000.png\n\n",
            "# points\n3 1 2 3 255 0 0 0.5 7 0 8 1\n",
        );
        let (views, points) = parse_colmap(dir.path()).unwrap();
        assert_eq!(views.len(), 1);
        let v = &views[0];
        assert_eq!(v.image_id, 7);
        assert_eq!(v.name, "view_000.png");
        assert_eq!(v.intrinsics.fx, 500.0);
        assert_eq!(v.intrinsics.fy, 510.0);
        assert_eq!(v.intrinsics.width, 640);
        // Identity quaternion.
        assert_eq!(v.pose.rot[0][0], 1.0);
        assert_eq!(v.pose.t, [0.5, -1.0, 2.0]);
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].position, [1.0, 2.0, 3.0]);
        assert_eq!(points[0].color, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_points_file_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "1 SIMPLE_PINHOLE 64 64 50 32 32\n",
            "1 1 0 0 0 0 0 0 1 a.png\n\n",
            "# nothing here\n",
        );
        let (views, points) = parse_colmap(dir.path()).unwrap();
        assert_eq!(views.len(), 1);
        assert!(points.is_empty());
    }

    #[test]
    fn truncated_quaternion_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "1 PINHOLE 64 64 50 50 32 32\n",
            "# header\n1 1 0 0\n",
            "",
        );
        match parse_colmap(dir.path()) {
            Err(CameraError::Parse { file, line, .. }) => {
                assert_eq!(file, "images.txt");
                assert_eq!(line, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_tracks_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "1 PINHOLE 64 64 50 50 32 32\n",
            "1 1 0 0 0 0 0 0 1 a.png\n\n",
            "1 0 0 1 10 10 10 0.1 1 0\n2 0 0 2 10 10 10 0.1 1 0 1 1\n",
        );
        let (_, points) = parse_colmap(dir.path()).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].position[2], 2.0);
    }

    #[test]
    fn distortion_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "1 SIMPLE_RADIAL 64 64 50 32 32 0.01\n",
            "",
            "",
        );
        let e = parse_colmap(dir.path()).unwrap_err();
        assert!(e.to_string().contains("SIMPLE_RADIAL"));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cameras.txt"), "").unwrap();
        assert!(matches!(
            parse_colmap(dir.path()),
            Err(CameraError::MissingFile(_))
        ));
    }
}
