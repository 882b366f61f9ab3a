//! The 17-joint COCO person skeleton.

use std::collections::VecDeque;

pub const NUM_JOINTS: usize = 17;

/// COCO joint labels in annotation order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

pub mod joint {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

/// Smoothing class of a joint: high-variance (limb extremities) or low-variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceClass {
    High,
    Low,
}

/// Kinematic tree over the 17 joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    edges: Vec<(usize, usize)>,
    classes: [VarianceClass; NUM_JOINTS],
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::coco()
    }
}

impl Skeleton {
    pub fn coco() -> Self {
        use joint::*;
        let edges = vec![
            (NOSE, LEFT_EYE),
            (NOSE, RIGHT_EYE),
            (LEFT_EYE, LEFT_EAR),
            (RIGHT_EYE, RIGHT_EAR),
            (NOSE, LEFT_SHOULDER),
            (NOSE, RIGHT_SHOULDER),
            (LEFT_SHOULDER, LEFT_ELBOW),
            (LEFT_ELBOW, LEFT_WRIST),
            (RIGHT_SHOULDER, RIGHT_ELBOW),
            (RIGHT_ELBOW, RIGHT_WRIST),
            (LEFT_SHOULDER, LEFT_HIP),
            (RIGHT_SHOULDER, RIGHT_HIP),
            (LEFT_HIP, LEFT_KNEE),
            (LEFT_KNEE, LEFT_ANKLE),
            (RIGHT_HIP, RIGHT_KNEE),
            (RIGHT_KNEE, RIGHT_ANKLE),
        ];
        let mut classes = [VarianceClass::Low; NUM_JOINTS];
        for j in [
            LEFT_WRIST,
            RIGHT_WRIST,
            LEFT_ANKLE,
            RIGHT_ANKLE,
            LEFT_ELBOW,
            RIGHT_ELBOW,
            LEFT_KNEE,
            RIGHT_KNEE,
        ] {
            classes[j] = VarianceClass::High;
        }
        Self { edges, classes }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn variance_class(&self, joint: usize) -> VarianceClass {
        self.classes[joint]
    }

    pub fn neighbors(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == joint {
                Some(b)
            } else if b == joint {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Breadth-first `(parent, child)` traversal order from `root`.
    pub fn bfs_edges(&self, root: usize) -> Vec<(usize, usize)> {
        let mut seen = [false; NUM_JOINTS];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut order = Vec::with_capacity(NUM_JOINTS - 1);
        while let Some(j) = queue.pop_front() {
            for n in self.neighbors(j) {
                if !seen[n] {
                    seen[n] = true;
                    order.push((j, n));
                    queue.push_back(n);
                }
            }
        }
        order
    }

    /// COCO-style 1-based limb list.
    pub fn coco_skeleton(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_is_connected_and_acyclic() {
        let s = Skeleton::coco();
        assert_eq!(s.edges().len(), NUM_JOINTS - 1);
        for root in 0..NUM_JOINTS {
            assert_eq!(s.bfs_edges(root).len(), NUM_JOINTS - 1);
        }
    }

    #[test]
    fn variance_classes() {
        let s = Skeleton::coco();
        for j in [joint::LEFT_WRIST, joint::RIGHT_ANKLE, joint::LEFT_ELBOW, joint::RIGHT_KNEE] {
            assert_eq!(s.variance_class(j), VarianceClass::High);
        }
        for j in [joint::NOSE, joint::LEFT_SHOULDER, joint::RIGHT_HIP, joint::LEFT_EYE, joint::RIGHT_EAR] {
            assert_eq!(s.variance_class(j), VarianceClass::Low);
        }
    }
}
