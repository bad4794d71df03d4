//! Quiver combinatorics: vertices with framing/representation dimensions,
//! arrows, acyclicity, path enumeration, and the moduli dimension formula.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuiverError {
    #[error("duplicate vertex id {0}")]
    DuplicateVertexId(u32),
    #[error("duplicate arrow id {0}")]
    DuplicateArrowId(u32),
    #[error("arrow {arrow} references unknown vertex {vertex}")]
    UnknownArrowEndpoint { arrow: u32, vertex: u32 },
    #[error("unknown vertex {0}")]
    UnknownVertex(u32),
    #[error("quiver has a directed cycle through vertices {0:?}")]
    CycleError(Vec<u32>),
    #[error("vertex {vertex}: representation dimension must be >= 1")]
    ZeroRepresentationDim { vertex: u32 },
    #[error("path enumeration into vertex {vertex} exceeded the cap of {cap} paths")]
    PathCapExceeded { vertex: u32, cap: usize },
    #[error("empty moduli: vertex {vertex} has m_i = {m} < d_i = {d}")]
    EmptyModuli { vertex: u32, m: usize, d: usize },
}

/// Role of a vertex in the machine (which framing block it provides).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Output,
    Memory,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSpec {
    pub id: u32,
    /// Framing dimension n_i >= 0.
    pub n: usize,
    /// Representation dimension d_i >= 1.
    pub d: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowSpec {
    pub id: u32,
    /// Tail vertex t(a).
    pub src: u32,
    /// Head vertex h(a).
    pub dst: u32,
}

/// A path in the quiver: arrow ids listed in application order (first arrow
/// leaves the source). The empty list is the trivial path at a vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub arrows: Vec<u32>,
    pub source: u32,
    pub target: u32,
}

impl Path {
    pub fn trivial(v: u32) -> Self {
        Path {
            arrows: vec![],
            source: v,
            target: v,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    /// Key used for per-path signature coefficients, in composition order
    /// (last arrow first), e.g. "a3.a1" for the path a1 then a3.
    pub fn key(&self) -> String {
        self.arrows
            .iter()
            .rev()
            .map(|a| format!("a{a}"))
            .collect::<Vec<_>>()
            .join(".")
    }
}

/// Default cap on the number of paths enumerated into one vertex.
pub const DEFAULT_PATH_CAP: usize = 100_000;

/// Finite acyclic quiver with framing and representation dimension vectors.
///
/// Immutable after construction; all derived data (topological order, path
/// lists) is precomputed eagerly.
#[derive(Debug, Clone, PartialEq)]
pub struct Quiver {
    vertices: Vec<VertexSpec>,
    arrows: Vec<ArrowSpec>,
    vidx: BTreeMap<u32, usize>,
    aidx: BTreeMap<u32, usize>,
    topo: Vec<u32>,
    /// paths_into, indexed like `vertices`, in (length, lex arrow ids) order.
    paths: Vec<Vec<Path>>,
}

impl Quiver {
    pub fn new(vertices: Vec<VertexSpec>, arrows: Vec<ArrowSpec>) -> Result<Self, QuiverError> {
        Self::with_path_cap(vertices, arrows, DEFAULT_PATH_CAP)
    }

    pub fn with_path_cap(
        vertices: Vec<VertexSpec>,
        arrows: Vec<ArrowSpec>,
        cap: usize,
    ) -> Result<Self, QuiverError> {
        let mut vidx = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if vidx.insert(v.id, i).is_some() {
                return Err(QuiverError::DuplicateVertexId(v.id));
            }
            if v.d == 0 {
                return Err(QuiverError::ZeroRepresentationDim { vertex: v.id });
            }
        }
        let mut aidx = BTreeMap::new();
        for (i, a) in arrows.iter().enumerate() {
            if aidx.insert(a.id, i).is_some() {
                return Err(QuiverError::DuplicateArrowId(a.id));
            }
            for end in [a.src, a.dst] {
                if !vidx.contains_key(&end) {
                    return Err(QuiverError::UnknownArrowEndpoint {
                        arrow: a.id,
                        vertex: end,
                    });
                }
            }
        }
        let mut q = Quiver {
            vertices,
            arrows,
            vidx,
            aidx,
            topo: vec![],
            paths: vec![],
        };
        q.topo = q.compute_topological_order()?;
        q.paths = q.enumerate_paths(cap)?;
        Ok(q)
    }

    pub fn vertices(&self) -> &[VertexSpec] {
        &self.vertices
    }

    pub fn arrows(&self) -> &[ArrowSpec] {
        &self.arrows
    }

    pub fn vertex(&self, id: u32) -> Result<&VertexSpec, QuiverError> {
        self.vidx
            .get(&id)
            .map(|&i| &self.vertices[i])
            .ok_or(QuiverError::UnknownVertex(id))
    }

    pub fn arrow(&self, id: u32) -> Option<&ArrowSpec> {
        self.aidx.get(&id).map(|&i| &self.arrows[i])
    }

    pub fn vertex_index(&self, id: u32) -> usize {
        self.vidx[&id]
    }

    pub fn arrow_index(&self, id: u32) -> usize {
        self.aidx[&id]
    }

    /// Arrows with head at `v`, ascending arrow id.
    pub fn arrows_into(&self, v: u32) -> Vec<&ArrowSpec> {
        let mut list: Vec<&ArrowSpec> = self.arrows.iter().filter(|a| a.dst == v).collect();
        list.sort_by_key(|a| a.id);
        list
    }

    /// The unique input-role vertex, if there is exactly one.
    pub fn input_vertex(&self) -> Option<u32> {
        let mut it = self.vertices.iter().filter(|v| v.role == Role::Input);
        match (it.next(), it.next()) {
            (Some(v), None) => Some(v.id),
            _ => None,
        }
    }

    pub fn output_vertex(&self) -> Option<u32> {
        let mut it = self.vertices.iter().filter(|v| v.role == Role::Output);
        match (it.next(), it.next()) {
            (Some(v), None) => Some(v.id),
            _ => None,
        }
    }

    fn compute_topological_order(&self) -> Result<Vec<u32>, QuiverError> {
        // Kahn's algorithm; ties broken by ascending vertex id.
        let mut indeg: BTreeMap<u32, usize> = self.vertices.iter().map(|v| (v.id, 0)).collect();
        for a in &self.arrows {
            *indeg.get_mut(&a.dst).unwrap() += 1;
        }
        let mut order = Vec::with_capacity(self.vertices.len());
        loop {
            let next = indeg
                .iter()
                .filter(|(_, &deg)| deg == 0)
                .map(|(&id, _)| id)
                .min();
            match next {
                None => break,
                Some(id) => {
                    indeg.remove(&id);
                    for a in &self.arrows {
                        if a.src == id {
                            if let Some(d) = indeg.get_mut(&a.dst) {
                                *d -= 1;
                            }
                        }
                    }
                    order.push(id);
                }
            }
        }
        if order.len() != self.vertices.len() {
            let mut leftover: Vec<u32> = indeg.keys().copied().collect();
            leftover.sort_unstable();
            return Err(QuiverError::CycleError(leftover));
        }
        Ok(order)
    }

    fn enumerate_paths(&self, cap: usize) -> Result<Vec<Vec<Path>>, QuiverError> {
        // Topological induction: paths into i of length L+1 extend paths into
        // t(a) of length L by an arrow a with h(a) = i. Order: by length, then
        // lexicographic arrow-id sequence; the trivial path comes first.
        let mut by_id: BTreeMap<u32, Vec<Path>> = BTreeMap::new();
        for &v in &self.topo {
            let mut all = vec![Path::trivial(v)];
            let mut level: Vec<Path> = all.clone();
            loop {
                // Length-(L+1) paths into v are a∘gamma for arrows a with
                // h(a)=v and gamma of length L into t(a).
                let mut next_level: Vec<Path> = Vec::new();
                let target_len = level.first().map(|p| p.len() + 1).unwrap_or(1);
                for a in self.arrows_into(v) {
                    for gamma in by_id
                        .get(&a.src)
                        .into_iter()
                        .flatten()
                        .filter(|g| g.len() + 1 == target_len)
                    {
                        let mut arrows = gamma.arrows.clone();
                        arrows.push(a.id);
                        next_level.push(Path {
                            arrows,
                            source: gamma.source,
                            target: v,
                        });
                    }
                }
                if next_level.is_empty() {
                    break;
                }
                next_level.sort_by(|p, q| p.arrows.cmp(&q.arrows));
                all.extend(next_level.iter().cloned());
                if all.len() > cap {
                    return Err(QuiverError::PathCapExceeded { vertex: v, cap });
                }
                level = next_level;
            }
            by_id.insert(v, all);
        }
        Ok(self
            .vertices
            .iter()
            .map(|v| by_id.remove(&v.id).unwrap())
            .collect())
    }

    /// Vertex ids in topological order (arrows go from earlier to later;
    /// ties broken by ascending id).
    pub fn topological_order(&self) -> &[u32] {
        &self.topo
    }

    /// All paths ending at `i`, trivial path first, then by (length, lex ids).
    pub fn paths_into(&self, i: u32) -> Result<&[Path], QuiverError> {
        let idx = *self.vidx.get(&i).ok_or(QuiverError::UnknownVertex(i))?;
        Ok(&self.paths[idx])
    }

    /// `m_i = n_i + sum over arrows a with h(a)=i of d_{t(a)}` — the fiber
    /// Grassmannian dimension parameter at vertex i.
    pub fn m_at(&self, i: u32) -> Result<usize, QuiverError> {
        let v = self.vertex(i)?;
        let extra: usize = self
            .arrows_into(i)
            .iter()
            .map(|a| self.vertex(a.src).map(|w| w.d))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum();
        Ok(v.n + extra)
    }

    /// `N_i = sum over paths gamma into i of n_{t(gamma)}` — total number of
    /// columns of the assembled path matrix at vertex i.
    pub fn n_total_at(&self, i: u32) -> Result<usize, QuiverError> {
        Ok(self
            .paths_into(i)?
            .iter()
            .map(|p| self.vertex(p.source).unwrap().n)
            .sum())
    }

    /// Dimension of the framed quiver moduli: sum of d_i (m_i - d_i).
    ///
    /// Errors with `EmptyModuli` when some Grassmannian stage is empty
    /// (m_i < d_i), which also covers N_i < d_i.
    pub fn moduli_dimension(&self) -> Result<usize, QuiverError> {
        let mut total = 0usize;
        for v in &self.vertices {
            let m = self.m_at(v.id)?;
            if m < v.d {
                return Err(QuiverError::EmptyModuli {
                    vertex: v.id,
                    m,
                    d: v.d,
                });
            }
            total += v.d * (m - v.d);
        }
        Ok(total)
    }

    /// `dim R_{n,d} = sum_a d_{h(a)} d_{t(a)} + sum_i n_i d_i`.
    pub fn ambient_dimension(&self) -> usize {
        let arrow_dim: usize = self
            .arrows
            .iter()
            .map(|a| self.vertex(a.dst).unwrap().d * self.vertex(a.src).unwrap().d)
            .sum();
        let framing_dim: usize = self.vertices.iter().map(|v| v.n * v.d).sum();
        arrow_dim + framing_dim
    }

    /// `sum_i d_i^2`, the dimension of the gauge group.
    pub fn gauge_dimension(&self) -> usize {
        self.vertices.iter().map(|v| v.d * v.d).sum()
    }
}

// ---- standard fixtures used across tests and the CLI checks ---------------

/// A1: single vertex, no arrows.
pub fn a1_quiver(n: usize, d: usize) -> Quiver {
    Quiver::new(
        vec![VertexSpec {
            id: 1,
            n,
            d,
            role: Role::Input,
        }],
        vec![],
    )
    .unwrap()
}

/// A2: vertices 1 -> 2 with a single arrow a1.
pub fn a2_quiver(n: (usize, usize), d: (usize, usize)) -> Quiver {
    Quiver::new(
        vec![
            VertexSpec {
                id: 1,
                n: n.0,
                d: d.0,
                role: Role::Input,
            },
            VertexSpec {
                id: 2,
                n: n.1,
                d: d.1,
                role: Role::Output,
            },
        ],
        vec![ArrowSpec {
            id: 1,
            src: 1,
            dst: 2,
        }],
    )
    .unwrap()
}

/// The diamond quiver: 1 -> 2 -> 4 and 1 -> 3 -> 4, arrows a1..a4.
pub fn diamond_quiver(n: [usize; 4], d: [usize; 4]) -> Quiver {
    Quiver::new(
        vec![
            VertexSpec {
                id: 1,
                n: n[0],
                d: d[0],
                role: Role::Input,
            },
            VertexSpec {
                id: 2,
                n: n[1],
                d: d[1],
                role: Role::Memory,
            },
            VertexSpec {
                id: 3,
                n: n[2],
                d: d[2],
                role: Role::Memory,
            },
            VertexSpec {
                id: 4,
                n: n[3],
                d: d[3],
                role: Role::Output,
            },
        ],
        vec![
            ArrowSpec {
                id: 1,
                src: 1,
                dst: 2,
            },
            ArrowSpec {
                id: 2,
                src: 1,
                dst: 3,
            },
            ArrowSpec {
                id: 3,
                src: 2,
                dst: 4,
            },
            ArrowSpec {
                id: 4,
                src: 3,
                dst: 4,
            },
        ],
    )
    .unwrap()
}
