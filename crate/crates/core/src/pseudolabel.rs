//! Pseudo-label construction from externally produced instance masks.
//!
//! The segmenter (run outside this crate) delivers per-view instance maps
//! whose ids are consistent across views. On one reference view that also
//! has a ground-truth label map, each instance votes for a class; instances
//! close to the image border are flagged as boundary instances. Flagged,
//! classed instances then produce a pseudo label map `S^p` and a boundary
//! mask `B` in every view: the masked cross-entropy trains exactly on the
//! `B = 1` pixels.

use thiserror::Error;

use crate::image::{InstanceMap, LabelMap, IGNORE_LABEL};

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("shape mismatch: instance map {im_h}x{im_w} vs label map {lm_h}x{lm_w}")]
    ShapeMismatch {
        im_h: usize,
        im_w: usize,
        lm_h: usize,
        lm_w: usize,
    },
    #[error("reference view {0} has no ground-truth label")]
    MissingReferenceLabel(String),
    #[error("margin fraction {0} outside (0, 0.5)")]
    BadMargin(f64),
}

/// Pseudo label map and boundary mask for one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoView {
    /// Class indices; `255` where unassigned.
    pub label: LabelMap,
    /// `{0, 1}`; `1` on pixels of boundary-flagged, classed instances.
    pub boundary: LabelMap,
}

/// Flags the instances that reach within `margin_fraction * min(H, W)` of
/// the image border, and returns the union of their pixels as a mask.
/// `flags[id]` is indexed by instance id (entry 0 is unused).
pub fn derive_boundary_mask(
    instances: &InstanceMap,
    margin_fraction: f64,
) -> Result<(Vec<bool>, LabelMap), PseudoError> {
    if !(margin_fraction > 0.0 && margin_fraction < 0.5) {
        return Err(PseudoError::BadMargin(margin_fraction));
    }
    let (h, w) = (instances.h, instances.w);
    let margin = (margin_fraction * h.min(w) as f64) as usize;
    let mut flags = vec![false; instances.max_id() as usize + 1];
    for y in 0..h {
        for x in 0..w {
            let id = instances.at(y, x);
            if id == 0 {
                continue;
            }
            let near_border =
                y < margin || x < margin || y + margin >= h || x + margin >= w;
            if near_border {
                flags[id as usize] = true;
            }
        }
    }
    let mut mask = LabelMap::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            let id = instances.at(y, x);
            if id != 0 && flags[id as usize] {
                mask.set(y, x, 1);
            }
        }
    }
    Ok((flags, mask))
}

/// Majority ground-truth class per instance id. Ties pick the smaller class;
/// instances with no overlap with valid labels get `255`.
pub fn assign_pseudo_class(
    instances: &InstanceMap,
    gt: &LabelMap,
) -> Result<Vec<u8>, PseudoError> {
    if instances.h != gt.h || instances.w != gt.w {
        return Err(PseudoError::ShapeMismatch {
            im_h: instances.h,
            im_w: instances.w,
            lm_h: gt.h,
            lm_w: gt.w,
        });
    }
    let k = instances.max_id() as usize;
    // votes[id][class]
    let mut votes = vec![[0u32; 256]; k + 1];
    for (id, lab) in instances.data.iter().zip(&gt.data) {
        if *id == 0 || *lab == IGNORE_LABEL {
            continue;
        }
        votes[*id as usize][*lab as usize] += 1;
    }
    let classes = votes
        .iter()
        .map(|v| {
            let mut best = IGNORE_LABEL;
            let mut best_count = 0u32;
            for (class, &count) in v.iter().enumerate().take(255) {
                if count > best_count {
                    best_count = count;
                    best = class as u8;
                }
            }
            best
        })
        .collect();
    Ok(classes)
}

/// Builds pseudo labels for every view by propagating the reference view's
/// per-instance classes through the shared instance ids.
///
/// Returns one `PseudoView` per input view, in input order. `S^p` carries a
/// class on every pixel of a classed instance; `B` is restricted to
/// boundary-flagged instances that also received a class, so `S^p != 255`
/// wherever `B = 1`.
pub fn build_pseudo_labels(
    views: &[(String, InstanceMap)],
    reference_view: &str,
    gt: Option<&LabelMap>,
    margin_fraction: f64,
) -> Result<Vec<(String, PseudoView)>, PseudoError> {
    let reference = views
        .iter()
        .find(|(id, _)| id == reference_view)
        .map(|(_, m)| m);
    let (reference, gt) = match (reference, gt) {
        (Some(r), Some(g)) => (r, g),
        _ => return Err(PseudoError::MissingReferenceLabel(reference_view.to_string())),
    };

    let (flags, _) = derive_boundary_mask(reference, margin_fraction)?;
    let classes = assign_pseudo_class(reference, gt)?;

    let mut out = Vec::with_capacity(views.len());
    for (id, instances) in views {
        let (h, w) = (instances.h, instances.w);
        let mut label = LabelMap::filled(h, w, IGNORE_LABEL);
        let mut boundary = LabelMap::filled(h, w, 0);
        for y in 0..h {
            for x in 0..w {
                let inst = instances.at(y, x) as usize;
                if inst == 0 || inst >= classes.len() {
                    continue;
                }
                let class = classes[inst];
                if class == IGNORE_LABEL {
                    continue;
                }
                label.set(y, x, class);
                if *flags.get(inst).unwrap_or(&false) {
                    boundary.set(y, x, 1);
                }
            }
        }
        out.push((id.clone(), PseudoView { label, boundary }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_instance(map: &mut InstanceMap, y0: usize, x0: usize, size: usize, id: u16) {
        for y in y0..(y0 + size) {
            for x in x0..(x0 + size) {
                map.set(y, x, id);
            }
        }
    }

    #[test]
    fn interior_instance_is_not_flagged() {
        let mut m = InstanceMap::filled(20, 20, 0);
        square_instance(&mut m, 8, 8, 4, 1);
        let (flags, mask) = derive_boundary_mask(&m, 0.1).unwrap();
        assert!(!flags[1]);
        assert!(mask.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn border_touching_instance_is_flagged() {
        let mut m = InstanceMap::filled(20, 20, 0);
        square_instance(&mut m, 0, 5, 3, 1);
        let (flags, mask) = derive_boundary_mask(&m, 0.1).unwrap();
        assert!(flags[1]);
        assert_eq!(mask.at(0, 5), 1);
        assert_eq!(mask.at(2, 7), 1);
        assert_eq!(mask.at(10, 10), 0);
    }

    #[test]
    fn margin_monotonicity() {
        let mut m = InstanceMap::filled(32, 32, 0);
        square_instance(&mut m, 4, 4, 4, 1); // near border
        square_instance(&mut m, 14, 14, 4, 2); // center
        let flagged = |margin: f64| -> Vec<bool> { derive_boundary_mask(&m, margin).unwrap().0 };
        let small = flagged(0.05);
        let mid = flagged(0.2);
        let large = flagged(0.49);
        for id in 1..=2 {
            assert!(!small[id] || mid[id], "flagging must grow with margin");
            assert!(!mid[id] || large[id]);
        }
        assert!(!small[2] && large[2]);
    }

    #[test]
    fn boundary_mask_hand_enumeration_8x8() {
        // Instance 1 occupies rows 0..2 x cols 0..2 (touches the border);
        // instance 2 occupies rows 4..6 x cols 4..6 (interior).
        // margin 0.25 * 8 = 2 pixels.
        let mut m = InstanceMap::filled(8, 8, 0);
        square_instance(&mut m, 0, 0, 2, 1);
        square_instance(&mut m, 4, 4, 2, 2);
        let (flags, mask) = derive_boundary_mask(&m, 0.25).unwrap();
        assert!(flags[1]);
        assert!(!flags[2]);
        let mut want = LabelMap::filled(8, 8, 0);
        want.set(0, 0, 1);
        want.set(0, 1, 1);
        want.set(1, 0, 1);
        want.set(1, 1, 1);
        assert_eq!(mask, want);
    }

    #[test]
    fn majority_vote_and_ties() {
        // Instance 1: 6 pixels of class 1 vs 4 pixels of class 2 -> class 1.
        // Instance 2: 5 vs 5 tie between classes 2 and 4 -> class 2.
        // Instance 3: all pixels unlabeled -> 255.
        let mut inst = InstanceMap::filled(3, 10, 0);
        let mut gt = LabelMap::filled(3, 10, IGNORE_LABEL);
        for x in 0..10 {
            inst.set(0, x, 1);
            gt.set(0, x, if x < 6 { 1 } else { 2 });
            inst.set(1, x, 2);
            gt.set(1, x, if x < 5 { 4 } else { 2 });
            inst.set(2, x, 3);
        }
        let classes = assign_pseudo_class(&inst, &gt).unwrap();
        assert_eq!(classes[1], 1);
        assert_eq!(classes[2], 2);
        assert_eq!(classes[3], IGNORE_LABEL);
    }

    #[test]
    fn unanimous_instance_takes_its_class() {
        let mut inst = InstanceMap::filled(4, 4, 0);
        let mut gt = LabelMap::filled(4, 4, 3);
        square_instance(&mut inst, 1, 1, 2, 1);
        gt.set(0, 0, 0);
        let classes = assign_pseudo_class(&inst, &gt).unwrap();
        assert_eq!(classes[1], 3);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let inst = InstanceMap::filled(4, 4, 0);
        let gt = LabelMap::filled(4, 5, 0);
        assert!(matches!(
            assign_pseudo_class(&inst, &gt),
            Err(PseudoError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn three_view_fixture_matches_hand_enumeration() {
        // 8x8 views. Instance 7 hugs the border of the reference view and is
        // class 4 there; instance 3 sits in the middle with class 1.
        let mut ref_inst = InstanceMap::filled(8, 8, 0);
        square_instance(&mut ref_inst, 0, 0, 2, 7);
        square_instance(&mut ref_inst, 3, 3, 2, 3);
        let mut gt = LabelMap::filled(8, 8, 0);
        for y in 0..2 {
            for x in 0..2 {
                gt.set(y, x, 4);
            }
        }
        for y in 3..5 {
            for x in 3..5 {
                gt.set(y, x, 1);
            }
        }

        // Second view sees instance 7 somewhere else entirely.
        let mut v2 = InstanceMap::filled(8, 8, 0);
        square_instance(&mut v2, 5, 5, 3, 7);
        // Third view sees only instance 3.
        let mut v3 = InstanceMap::filled(8, 8, 0);
        square_instance(&mut v3, 2, 2, 2, 3);

        let views = vec![
            ("a".to_string(), ref_inst),
            ("b".to_string(), v2),
            ("c".to_string(), v3),
        ];
        let out = build_pseudo_labels(&views, "a", Some(&gt), 0.25).unwrap();
        assert_eq!(out.len(), 3);

        // Reference view: instance 7 pixels are class 4 with boundary 1;
        // instance 3 pixels are class 1 with boundary 0.
        let a = &out[0].1;
        assert_eq!(a.label.at(0, 0), 4);
        assert_eq!(a.boundary.at(0, 0), 1);
        assert_eq!(a.label.at(3, 3), 1);
        assert_eq!(a.boundary.at(3, 3), 0);
        assert_eq!(a.label.at(7, 7), IGNORE_LABEL);

        // Propagation: instance 7 keeps class 4 and its boundary flag in b.
        let b = &out[1].1;
        assert_eq!(b.label.at(5, 5), 4);
        assert_eq!(b.boundary.at(5, 5), 1);
        assert_eq!(b.label.at(0, 0), IGNORE_LABEL);
        assert_eq!(b.boundary.at(0, 0), 0);

        // Instance 3 is absent from b and contributes nothing there.
        // In c it keeps class 1, still unflagged.
        let c = &out[2].1;
        assert_eq!(c.label.at(2, 2), 1);
        assert_eq!(c.boundary.at(2, 2), 0);

        // Invariant: label defined wherever boundary is set, in every view.
        for (_, pv) in &out {
            for (lab, b) in pv.label.data.iter().zip(&pv.boundary.data) {
                if *b == 1 {
                    assert_ne!(*lab, IGNORE_LABEL);
                }
            }
        }
    }

    #[test]
    fn missing_reference_label_is_error() {
        let views = vec![("a".to_string(), InstanceMap::filled(4, 4, 0))];
        assert!(matches!(
            build_pseudo_labels(&views, "a", None, 0.2),
            Err(PseudoError::MissingReferenceLabel(_))
        ));
        assert!(matches!(
            build_pseudo_labels(&views, "zzz", Some(&LabelMap::filled(4, 4, 0)), 0.2),
            Err(PseudoError::MissingReferenceLabel(_))
        ));
    }
}
