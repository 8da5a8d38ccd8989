use std::ops::Range;

use crate::error::{invalid, Result};

/// Where joint positions live inside a motion feature vector, and which
/// joint pairs form bones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonSpec {
    pub name: String,
    /// One `xyz` index range per joint.
    pub position_slices: Vec<Range<usize>>,
    /// `(u, v)` pairs; the bone vector is `X(u) − X(v)`.
    pub bone_pairs: Vec<(usize, usize)>,
    pub feature_width: usize,
}

impl SkeletonSpec {
    pub fn new(name: impl Into<String>, position_slices: Vec<Range<usize>>, bone_pairs: Vec<(usize, usize)>, feature_width: usize) -> Result<Self> {
        let s = SkeletonSpec {
            name: name.into(),
            position_slices,
            bone_pairs,
            feature_width,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn joint_count(&self) -> usize {
        self.position_slices.len()
    }

    fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.feature_width];
        for r in &self.position_slices {
            if r.len() != 3 || r.end > self.feature_width {
                return invalid(format!("position slice {r:?} must be 3 wide inside [0, {})", self.feature_width));
            }
            for i in r.clone() {
                if std::mem::replace(&mut used[i], true) {
                    return invalid(format!("position slices overlap at feature {i}"));
                }
            }
        }
        let j = self.joint_count();
        if self.bone_pairs.iter().any(|&(u, v)| u >= j || v >= j || u == v) {
            return invalid("bone pair references an unknown joint");
        }
        // Union-find: the bone graph must be acyclic (a tree or a forest).
        let mut parent: Vec<usize> = (0..j).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(u, v) in &self.bone_pairs {
            let (a, b) = (root(&mut parent, u), root(&mut parent, v));
            if a == b {
                return invalid(format!("bone ({u}, {v}) closes a cycle"));
            }
            parent[a] = b;
        }
        Ok(())
    }

    /// Whether the bones connect every joint into a single tree.
    pub fn is_tree(&self) -> bool {
        self.bone_pairs.len() + 1 == self.joint_count()
    }

    /// Five-joint chain used by the synthetic data: root, spine, head and
    /// two limbs, three position coordinates each.
    pub fn synthetic() -> Self {
        Self::new(
            "synthetic5",
            (0..5).map(|j| 3 * j..3 * j + 3).collect(),
            vec![(1, 0), (2, 1), (3, 1), (4, 0)],
            15,
        )
        .expect("valid preset")
    }

    /// HumanML3D 263-wide layout. Root-relative positions of joints 1..=21
    /// sit at `4 + 3·(j−1)`; the root itself has no position triple, so
    /// bones touching it are omitted and the bones form a forest.
    pub fn humanml3d() -> Self {
        let chains: &[&[usize]] = &[&[0, 2, 5, 8, 11], &[0, 1, 4, 7, 10], &[0, 3, 6, 9, 12, 15], &[9, 14, 17, 19, 21], &[9, 13, 16, 18, 20]];
        Self::from_chains("humanml3d", 22, chains, 263)
    }

    /// KIT-ML 251-wide layout, same conventions with 21 joints.
    pub fn kit() -> Self {
        let chains: &[&[usize]] = &[&[0, 11, 12, 13, 14, 15], &[0, 16, 17, 18, 19, 20], &[0, 1, 2, 3, 4], &[3, 5, 6, 7], &[3, 8, 9, 10]];
        Self::from_chains("kit", 21, chains, 251)
    }

    fn from_chains(name: &str, joints: usize, chains: &[&[usize]], width: usize) -> Self {
        let slices = (1..joints).map(|j| 4 + 3 * (j - 1)..4 + 3 * j).collect();
        let mut bones = Vec::new();
        for chain in chains {
            for w in chain.windows(2) {
                if w[0] != 0 {
                    bones.push((w[1] - 1, w[0] - 1));
                }
            }
        }
        Self::new(name, slices, bones, width).expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "synthetic5" => Ok(Self::synthetic()),
            "humanml3d" => Ok(Self::humanml3d()),
            "kit" => Ok(Self::kit()),
            other => invalid(format!("unknown skeleton preset `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        let s = SkeletonSpec::synthetic();
        assert_eq!((s.joint_count(), s.feature_width), (5, 15));
        assert!(s.is_tree());
        let h = SkeletonSpec::humanml3d();
        assert_eq!(h.joint_count(), 21);
        assert_eq!(h.bone_pairs.len(), 18);
        assert_eq!(h.position_slices.last().unwrap().end, 67);
        let k = SkeletonSpec::kit();
        assert_eq!(k.joint_count(), 20);
        assert_eq!(k.position_slices.last().unwrap().end, 64);
        assert!(SkeletonSpec::preset("nope").is_err());
    }

    #[test]
    fn rejects_overlaps_and_cycles() {
        assert!(SkeletonSpec::new("x", vec![0..3, 2..5], vec![], 6).is_err());
        assert!(SkeletonSpec::new("x", vec![0..3, 3..6, 6..9], vec![(0, 1), (1, 2), (2, 0)], 9).is_err());
        assert!(SkeletonSpec::new("x", vec![0..3], vec![(0, 1)], 3).is_err());
    }
}
