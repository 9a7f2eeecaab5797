//! Identifier newtypes shared by every layer of the sweep stack.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn new(index: usize) -> Self {
                Self(u32::try_from(index).expect(concat!(stringify!($name), " overflow")))
            }

            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Dense cell index, `0..N`.
    CellId,
    "c"
);
id_type!(
    /// Dense patch index, `0..P`.
    PatchId,
    "p"
);
id_type!(
    /// Index of a discrete ordinate in a [`DirectionSet`](crate::mesh::DirectionSet).
    AngleId,
    "a"
);

id_type!(
    /// Index of a coarse vertex within one coarsened graph.
    CoarseVertexId,
    "cv"
);

/// A `(cell, angle)` pair: the unit of data-driven computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SweepVertex {
    pub cell: CellId,
    pub angle: AngleId,
}

impl SweepVertex {
    pub fn new(cell: CellId, angle: AngleId) -> Self {
        Self { cell, angle }
    }
}

impl fmt::Display for SweepVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.cell, self.angle)
    }
}

/// Identifies a patch-program: the task `task` running on patch `patch`.
///
/// For sweeps the task tag is the angle index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProgramId {
    pub patch: PatchId,
    pub task: AngleId,
}

impl ProgramId {
    pub fn new(patch: PatchId, task: AngleId) -> Self {
        Self { patch, task }
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}>", self.patch, self.task)
    }
}
