//! The on-disk scene bundle.
//!
//! ```text
//! scene/
//!   scene.toml            view list, labeled subset, classes, palette
//!   colmap/               cameras.txt / images.txt / points3D.txt
//!   images/<id>.png       RGB per view
//!   labels/<id>.png       ground-truth labels, sparse labeled subset only
//!   labels_full/<id>.png  dense oracle labels for every view (synthetic
//!                         scenes only; evaluation ground truth)
//!   instances/<id>.png    instance-id maps standing in for the external
//!                         segmenter, plus manifest.toml (view -> file)
//!   pseudo/<id>_label.png / <id>_mask.png   written by the pseudo command
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semsplat_core::camera::parse_colmap;
use semsplat_core::image::InstanceMap;
use semsplat_core::trainer::Scene;
use semsplat_core::View;

use crate::pngio;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub width: u32,
    pub height: u32,
    /// Total class count including background class 0.
    pub num_classes: usize,
    /// View ids in order; each has `images/<id>.png`.
    pub views: Vec<String>,
    /// Subset of `views` with ground-truth labels in `labels/`.
    pub labeled: Vec<String>,
    /// Display palette, one RGB per class.
    pub class_colors: Vec<[u8; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub view: String,
    pub file: String,
}

pub struct BundlePaths {
    pub root: PathBuf,
}

impl BundlePaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn meta(&self) -> PathBuf {
        self.root.join("scene.toml")
    }
    pub fn colmap(&self) -> PathBuf {
        self.root.join("colmap")
    }
    pub fn image(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }
    pub fn label(&self, id: &str) -> PathBuf {
        self.root.join("labels").join(format!("{id}.png"))
    }
    pub fn label_full(&self, id: &str) -> PathBuf {
        self.root.join("labels_full").join(format!("{id}.png"))
    }
    pub fn instances_dir(&self) -> PathBuf {
        self.root.join("instances")
    }
    pub fn manifest(&self) -> PathBuf {
        self.instances_dir().join("manifest.toml")
    }
    pub fn pseudo_label(&self, id: &str) -> PathBuf {
        self.root.join("pseudo").join(format!("{id}_label.png"))
    }
    pub fn pseudo_mask(&self, id: &str) -> PathBuf {
        self.root.join("pseudo").join(format!("{id}_mask.png"))
    }
}

pub fn read_meta(paths: &BundlePaths) -> Result<SceneMeta, CliError> {
    let path = paths.meta();
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn write_meta(paths: &BundlePaths, meta: &SceneMeta) -> Result<(), CliError> {
    let path = paths.meta();
    let text = toml::to_string_pretty(meta)
        .map_err(|e| CliError::Format(format!("scene.toml serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn read_manifest(paths: &BundlePaths) -> Result<InstanceManifest, CliError> {
    let path = paths.manifest();
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn write_manifest(paths: &BundlePaths, manifest: &InstanceManifest) -> Result<(), CliError> {
    let path = paths.manifest();
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| CliError::Format(format!("manifest serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Loads instance maps for every view listed in the scene metadata; a view
/// missing from the manifest is an explicit error naming it.
pub fn read_instances(
    paths: &BundlePaths,
    meta: &SceneMeta,
) -> Result<Vec<(String, InstanceMap)>, CliError> {
    let manifest = read_manifest(paths)?;
    let by_view: BTreeMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.view.as_str(), e.file.as_str()))
        .collect();
    let mut out = Vec::with_capacity(meta.views.len());
    for id in &meta.views {
        let file = by_view.get(id.as_str()).ok_or_else(|| {
            CliError::Config(format!(
                "instance manifest has no entry for view {id}"
            ))
        })?;
        let map = pngio::read_instance_map(&paths.instances_dir().join(file))?;
        out.push((id.clone(), map));
    }
    Ok(out)
}

/// Loads the whole bundle into a training scene: COLMAP cameras and points,
/// RGB images, ground-truth labels where present, pseudo labels where
/// present.
pub fn load_scene(paths: &BundlePaths) -> Result<Scene<f32>, CliError> {
    let meta = read_meta(paths)?;
    let (colmap_views, points) = parse_colmap(&paths.colmap())?;
    let by_name: BTreeMap<String, usize> = colmap_views
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), i))
        .collect();

    let mut views = Vec::with_capacity(meta.views.len());
    for id in &meta.views {
        let name = format!("{id}.png");
        let cv = by_name.get(&name).ok_or_else(|| {
            CliError::Config(format!("view {id} has no pose in colmap/images.txt"))
        })?;
        let cv = &colmap_views[*cv];
        let image = pngio::read_rgb(&paths.image(id))?;
        if image.h != meta.height as usize || image.w != meta.width as usize {
            return Err(CliError::Shape(format!(
                "{}: image is {}x{}, scene.toml says {}x{}",
                paths.image(id).display(),
                image.w,
                image.h,
                meta.width,
                meta.height
            )));
        }
        let label = if paths.label(id).exists() {
            Some(pngio::read_label_map(&paths.label(id))?)
        } else {
            None
        };
        let pseudo = if paths.pseudo_label(id).exists() && paths.pseudo_mask(id).exists() {
            Some((
                pngio::read_label_map(&paths.pseudo_label(id))?,
                pngio::read_label_map(&paths.pseudo_mask(id))?,
            ))
        } else {
            None
        };
        views.push(View {
            id: id.clone(),
            intrinsics: cv.intrinsics.cast::<f32>(),
            pose: cv.pose.cast::<f32>(),
            image,
            label,
            pseudo,
        });
    }
    Ok(Scene {
        views,
        init_points: points,
        num_classes: meta.num_classes,
    })
}

/// Camera list (id, intrinsics, pose) without loading any images.
pub fn load_cameras(
    paths: &BundlePaths,
) -> Result<
    (
        SceneMeta,
        Vec<(String, semsplat_core::Intrinsics<f32>, semsplat_core::Pose<f32>)>,
    ),
    CliError,
> {
    let meta = read_meta(paths)?;
    let (colmap_views, _) = parse_colmap(&paths.colmap())?;
    let by_name: BTreeMap<String, usize> = colmap_views
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), i))
        .collect();
    let mut out = Vec::with_capacity(meta.views.len());
    for id in &meta.views {
        let name = format!("{id}.png");
        let idx = by_name.get(&name).ok_or_else(|| {
            CliError::Config(format!("view {id} has no pose in colmap/images.txt"))
        })?;
        out.push((
            id.clone(),
            colmap_views[*idx].intrinsics.cast::<f32>(),
            colmap_views[*idx].pose.cast::<f32>(),
        ));
    }
    Ok((meta, out))
}
