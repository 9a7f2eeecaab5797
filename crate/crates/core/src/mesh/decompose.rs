use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{MeshError, UnstructuredMesh};
use crate::ids::{CellId, PatchId};

/// A block of owned cells plus the one-layer halo it reads from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub patch_id: PatchId,
    /// Ascending.
    pub local_cells: Vec<CellId>,
    /// Ascending.
    pub ghost_cells: Vec<CellId>,
    pub owner_of_ghost: BTreeMap<CellId, PatchId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    patches: Vec<Patch>,
    patch_of_cell: Vec<PatchId>,
    patch_adjacency: Vec<BTreeSet<PatchId>>,
}

impl Decomposition {
    /// Builds patches, ghosts and adjacency from an explicit cell → patch map.
    ///
    /// Patch ids must be dense: every id in `0..=max` owns at least one cell.
    pub fn from_assignment(
        mesh: &UnstructuredMesh,
        patch_of_cell: Vec<PatchId>,
    ) -> Result<Self, MeshError> {
        if mesh.is_empty() {
            return Err(MeshError::Argument("cannot decompose an empty mesh".into()));
        }
        if patch_of_cell.len() != mesh.num_cells() {
            return Err(MeshError::Argument(format!(
                "assignment covers {} cells, mesh has {}",
                patch_of_cell.len(),
                mesh.num_cells()
            )));
        }
        let num_patches = patch_of_cell.iter().map(|p| p.index()).max().unwrap_or(0) + 1;
        let mut local: Vec<Vec<CellId>> = vec![Vec::new(); num_patches];
        for (c, p) in patch_of_cell.iter().enumerate() {
            local[p.index()].push(CellId::new(c));
        }
        if let Some(empty) = local.iter().position(Vec::is_empty) {
            return Err(MeshError::Argument(format!(
                "patch ids must be dense; p{empty} owns no cells"
            )));
        }

        let mut patches = Vec::with_capacity(num_patches);
        let mut patch_adjacency = vec![BTreeSet::new(); num_patches];
        for (pi, cells) in local.into_iter().enumerate() {
            let pid = PatchId::new(pi);
            let mut owner_of_ghost = BTreeMap::new();
            for &c in &cells {
                for nb in mesh.neighbors(c) {
                    let owner = patch_of_cell[nb.index()];
                    if owner != pid {
                        owner_of_ghost.insert(nb, owner);
                        patch_adjacency[pi].insert(owner);
                    }
                }
            }
            patches.push(Patch {
                patch_id: pid,
                local_cells: cells,
                ghost_cells: owner_of_ghost.keys().copied().collect(),
                owner_of_ghost,
            });
        }
        Ok(Self {
            patches,
            patch_of_cell,
            patch_adjacency,
        })
    }

    /// One patch holding the entire mesh.
    pub fn single(mesh: &UnstructuredMesh) -> Result<Self, MeshError> {
        Self::from_assignment(mesh, vec![PatchId(0); mesh.num_cells()])
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn patch(&self, id: PatchId) -> &Patch {
        &self.patches[id.index()]
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_of(&self, cell: CellId) -> PatchId {
        self.patch_of_cell[cell.index()]
    }

    pub fn patch_of_cell(&self) -> &[PatchId] {
        &self.patch_of_cell
    }

    pub fn adjacent(&self, id: PatchId) -> &BTreeSet<PatchId> {
        &self.patch_adjacency[id.index()]
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = super::Fnv::default();
        for p in &self.patch_of_cell {
            h.write_u64(p.0 as u64);
        }
        h.finish()
    }

    /// Exhaustive check of the partition, ghost-closure and symmetry invariants.
    pub fn check_invariants(&self, mesh: &UnstructuredMesh) -> Result<(), String> {
        let n = mesh.num_cells();
        let mut seen = vec![false; n];
        for patch in &self.patches {
            for &c in &patch.local_cells {
                if seen[c.index()] {
                    return Err(format!("{c} owned by more than one patch"));
                }
                seen[c.index()] = true;
                if self.patch_of(c) != patch.patch_id {
                    return Err(format!("patch_of({c}) disagrees with {}", patch.patch_id));
                }
                if patch.ghost_cells.binary_search(&c).is_ok() {
                    return Err(format!("{c} is both local and ghost in {}", patch.patch_id));
                }
            }
            for (&g, &owner) in &patch.owner_of_ghost {
                if self.patch_of(g) != owner {
                    return Err(format!("ghost {g} has wrong owner {owner}"));
                }
                let touches = patch
                    .local_cells
                    .iter()
                    .any(|&c| mesh.neighbors(c).any(|nb| nb == g));
                if !touches {
                    return Err(format!("ghost {g} is not adjacent to {}", patch.patch_id));
                }
            }
            // Closure: every cut neighbor is a ghost.
            for &c in &patch.local_cells {
                for nb in mesh.neighbors(c) {
                    if self.patch_of(nb) != patch.patch_id
                        && patch.owner_of_ghost.get(&nb) != Some(&self.patch_of(nb))
                    {
                        return Err(format!("cut neighbor {nb} of {c} missing from ghosts"));
                    }
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(format!("c{c} not owned by any patch"));
        }
        for (p, adj) in self.patch_adjacency.iter().enumerate() {
            for q in adj {
                if !self.patch_adjacency[q.index()].contains(&PatchId::new(p)) {
                    return Err(format!("adjacency p{p} -> {q} is not symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Axis-aligned block decomposition of a structured mesh.
///
/// The last block along an axis absorbs the remainder and may be smaller.
pub fn decompose_structured(
    mesh: &UnstructuredMesh,
    patch_dims: [usize; 3],
) -> Result<Decomposition, MeshError> {
    if patch_dims.contains(&0) {
        return Err(MeshError::Argument(format!(
            "patch dims must be positive, got {patch_dims:?}"
        )));
    }
    let spec = mesh.structured().ok_or_else(|| {
        MeshError::Argument("structured decomposition needs a structured mesh".into())
    })?;
    let blocks: Vec<usize> = (0..3)
        .map(|a| spec.dims[a].div_ceil(patch_dims[a]))
        .collect();
    let assignment = (0..mesh.num_cells())
        .map(|c| {
            let ijk = spec.ijk(CellId::new(c));
            let b = [
                ijk[0] / patch_dims[0],
                ijk[1] / patch_dims[1],
                ijk[2] / patch_dims[2],
            ];
            PatchId::new(b[0] + blocks[0] * (b[1] + blocks[1] * b[2]))
        })
        .collect();
    Decomposition::from_assignment(mesh, assignment)
}

/// Greedy breadth-first partition.
///
/// Each patch grows from the lowest unassigned cell id until it holds
/// `target_cells_per_patch` cells or its component is exhausted. The result
/// depends only on the mesh and the target; `_seed` is reserved for a
/// randomized variant.
pub fn decompose_unstructured(
    mesh: &UnstructuredMesh,
    target_cells_per_patch: usize,
    _seed: u64,
) -> Result<Decomposition, MeshError> {
    if target_cells_per_patch == 0 {
        return Err(MeshError::Argument(
            "target cells per patch must be ≥ 1".into(),
        ));
    }
    if mesh.is_empty() {
        return Err(MeshError::Argument("cannot decompose an empty mesh".into()));
    }
    let n = mesh.num_cells();
    let mut owner: Vec<Option<PatchId>> = vec![None; n];
    let mut next_seed = 0usize;
    let mut patch = 0usize;
    let mut queue = VecDeque::new();
    while next_seed < n {
        if owner[next_seed].is_some() {
            next_seed += 1;
            continue;
        }
        let pid = PatchId::new(patch);
        let mut size = 0;
        queue.clear();
        queue.push_back(CellId::new(next_seed));
        owner[next_seed] = Some(pid);
        while let Some(c) = queue.pop_front() {
            size += 1;
            if size == target_cells_per_patch {
                break;
            }
            for nb in mesh.neighbors(c) {
                if owner[nb.index()].is_none() && size + queue.len() < target_cells_per_patch {
                    owner[nb.index()] = Some(pid);
                    queue.push_back(nb);
                }
            }
        }
        // Cells claimed but not yet popped still belong to this patch.
        patch += 1;
    }
    let assignment = owner
        .into_iter()
        .map(|p| p.expect("all cells assigned"))
        .collect();
    Decomposition::from_assignment(mesh, assignment)
}
