//! Independent oracles the test suites check the fast implementations
//! against: a naive per-pixel blender, central finite differences through
//! the whole render/decode/loss stack, exhaustive nearest-neighbor scans,
//! and a direct windowed SSIM.
//!
//! Everything here favors obviousness over speed and shares as little code
//! as possible with the paths it verifies.

pub mod blend;
pub mod fdcheck;
pub mod knn;
pub mod scenes;
pub mod ssim;

/// Relative-error gate with an absolute floor near zero: passes when
/// `|a - b| < abs_floor` or `|a - b| / max(|a|, |b|) < rel_tol`.
pub fn close(a: f64, b: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (a - b).abs();
    if diff < abs_floor {
        return true;
    }
    diff / a.abs().max(b.abs()) < rel_tol
}
