//! JSON mesh format:
//!
//! ```json
//! {"cells": [{"id": 0, "centroid": [x, y, z], "volume": 1.0,
//!             "faces": [{"area": 1.0, "normal": [1, 0, 0], "neighbor": 1},
//!                       {"area": 1.0, "normal": [-1, 0, 0], "neighbor": "BOUNDARY"}]}]}
//! ```
//!
//! `neighbor` is a cell id, the string `"BOUNDARY"`, or `null`. `volume` is
//! optional and defaults to `1.0`.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::{Cell, Face, MeshError, Neighbor, UnstructuredMesh};
use crate::ids::CellId;

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    cells: Vec<CellDoc>,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    id: u32,
    centroid: [f64; 3],
    #[serde(default = "unit_volume")]
    volume: f64,
    faces: Vec<FaceDoc>,
}

fn unit_volume() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct FaceDoc {
    area: f64,
    normal: [f64; 3],
    neighbor: NeighborDoc,
}

struct NeighborDoc(Neighbor);

impl Serialize for NeighborDoc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Neighbor::Cell(c) => s.serialize_u32(c.0),
            Neighbor::Boundary => s.serialize_str("BOUNDARY"),
        }
    }
}

impl<'de> Deserialize<'de> for NeighborDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Tag(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(NeighborDoc(Neighbor::Cell(CellId(id)))),
            Raw::Tag(t) if t.eq_ignore_ascii_case("boundary") => {
                Ok(NeighborDoc(Neighbor::Boundary))
            }
            Raw::Tag(t) => Err(de::Error::custom(format!("unknown neighbor tag {t:?}"))),
            Raw::Null(()) => Ok(NeighborDoc(Neighbor::Boundary)),
        }
    }
}

pub fn mesh_from_json(text: &str) -> Result<UnstructuredMesh, MeshError> {
    let doc: MeshDoc = serde_json::from_str(text)?;
    let cells = doc
        .cells
        .into_iter()
        .map(|c| Cell {
            id: CellId(c.id),
            centroid: c.centroid,
            volume: c.volume,
            faces: c
                .faces
                .into_iter()
                .map(|f| Face {
                    area: f.area,
                    normal: f.normal,
                    neighbor: f.neighbor.0,
                })
                .collect(),
        })
        .collect();
    UnstructuredMesh::new(cells)
}

pub fn mesh_to_json(mesh: &UnstructuredMesh) -> String {
    let doc = MeshDoc {
        cells: mesh
            .cells()
            .iter()
            .map(|c| CellDoc {
                id: c.id.0,
                centroid: c.centroid,
                volume: c.volume,
                faces: c
                    .faces
                    .iter()
                    .map(|f| FaceDoc {
                        area: f.area,
                        normal: f.normal,
                        neighbor: NeighborDoc(f.neighbor),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("mesh serialization is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, StructuredMeshSpec};

    #[test]
    fn parses_handwritten_document() {
        let text = r#"{"cells": [
            {"id": 0, "centroid": [0.5, 0, 0],
             "faces": [{"area": 1, "normal": [1, 0, 0], "neighbor": 1},
                       {"area": 1, "normal": [-1, 0, 0], "neighbor": "BOUNDARY"}]},
            {"id": 1, "centroid": [1.5, 0, 0], "volume": 2.0,
             "faces": [{"area": 1, "normal": [-1, 0, 0], "neighbor": 0},
                       {"area": 1, "normal": [1, 0, 0], "neighbor": null}]}
        ]}"#;
        let mesh = mesh_from_json(text).unwrap();
        assert_eq!(mesh.num_cells(), 2);
        assert_eq!(mesh.cell(CellId(0)).volume, 1.0);
        assert_eq!(mesh.cell(CellId(1)).volume, 2.0);
        assert_eq!(mesh.cell(CellId(1)).faces[1].neighbor, Neighbor::Boundary);
    }

    #[test]
    fn round_trips_structured_geometry() {
        let mesh =
            build_structured_mesh(&StructuredMeshSpec::new([3, 2, 2], [0.5, 1.0, 2.0]).unwrap())
                .unwrap();
        let back = mesh_from_json(&mesh_to_json(&mesh)).unwrap();
        assert_eq!(back.cells(), mesh.cells());
    }

    #[test]
    fn rejects_unknown_neighbor_tag() {
        let text = r#"{"cells": [{"id": 0, "centroid": [0,0,0],
            "faces": [{"area": 1, "normal": [1,0,0], "neighbor": "wall"}]}]}"#;
        assert!(mesh_from_json(text).is_err());
    }
}
