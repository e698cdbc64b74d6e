//! Adaptive equal-area triangular classification mesh.
//!
//! The mesh starts as a structured grid of `rows` sin-latitude bands by `cols`
//! longitude sectors, two geodesic triangles per sector, and is refined by
//! quadrisecting any leaf that holds more than `refinement_limit` points.
//! Leaves holding at least `minimum_examples` points are *active*; the sorted
//! list of active cell ids defines the geo-class numbering `0..N`.

mod io;

pub use io::{load_mesh, save_mesh, MESH_FORMAT_VERSION};

use crate::sphere::{
    geodesic_midpoint, point_in_spherical_triangle, spherical_triangle_area, triangle_centroid,
    triangle_margin, triple_product, GeoPoint, UnitVector,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub type CellId = u32;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    InvalidParams(String),
    #[error("refinement needs at least one point")]
    NoPoints,
    #[error("cell {0} is active but contains no points for an imagery centroid")]
    MissingPopulation(CellId),
    #[error("unknown cell id {0}")]
    UnknownCell(CellId),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported mesh format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("mesh file is truncated")]
    Truncated,
    #[error("mesh file checksum mismatch (stored {stored}, computed {computed})")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("malformed mesh file: {0}")]
    Malformed(String),
}

/// Refinement and pruning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshParams {
    pub init_rows: u32,
    pub init_cols: u32,
    pub refinement_limit: u64,
    pub minimum_examples: u64,
    pub max_depth: u32,
}

/// The three shipped parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshPreset {
    Coarse,
    Fine,
    FineP,
}

impl MeshPreset {
    pub fn params(self) -> MeshParams {
        let (refinement_limit, minimum_examples) = match self {
            MeshPreset::Coarse => (8000, 1000),
            MeshPreset::Fine => (5000, 500),
            MeshPreset::FineP => (10000, 50),
        };
        MeshParams {
            refinement_limit,
            minimum_examples,
            ..MeshParams::default()
        }
    }
}

impl std::str::FromStr for MeshPreset {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coarse" => Ok(MeshPreset::Coarse),
            "fine" => Ok(MeshPreset::Fine),
            "fine_p" | "fine-p" => Ok(MeshPreset::FineP),
            other => Err(MeshError::InvalidParams(format!("unknown preset `{other}`"))),
        }
    }
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            init_rows: 31,
            init_cols: 31,
            refinement_limit: 8000,
            minimum_examples: 1000,
            max_depth: 12,
        }
    }
}

impl MeshParams {
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.init_rows < 2 || self.init_cols < 2 {
            return Err(MeshError::InvalidParams(format!(
                "init grid must be at least 2x2, got {}x{}",
                self.init_rows, self.init_cols
            )));
        }
        // Two sectors of 180 degrees only form proper geodesic triangles when
        // every band is a polar cap.
        if self.init_cols == 2 && self.init_rows > 2 {
            return Err(MeshError::InvalidParams(
                "init_cols = 2 is only supported with init_rows = 2".into(),
            ));
        }
        if self.minimum_examples == 0 {
            return Err(MeshError::InvalidParams("minimum_examples must be > 0".into()));
        }
        if self.refinement_limit <= self.minimum_examples {
            return Err(MeshError::InvalidParams(format!(
                "refinement_limit ({}) must exceed minimum_examples ({})",
                self.refinement_limit, self.minimum_examples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCell {
    pub id: CellId,
    pub vertex_ids: [u32; 3],
    pub parent: Option<CellId>,
    pub depth: u32,
    pub children: Option<[CellId; 4]>,
    pub training_count: u64,
    pub active: bool,
}

impl MeshCell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Non-fatal conditions found while refining or populating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshWarning {
    /// A leaf still exceeds the refinement limit because it reached `max_depth`.
    DepthLimitReached { cell_id: CellId, count: u64 },
    /// No leaf reached `minimum_examples`; the mesh has zero geo-classes.
    EmptyMesh,
}

impl fmt::Display for MeshWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshWarning::DepthLimitReached { cell_id, count } => write!(
                f,
                "cell {cell_id} holds {count} points but reached the maximum depth"
            ),
            MeshWarning::EmptyMesh => write!(f, "no cell reached minimum_examples; mesh is empty"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefineReport {
    pub passes: u32,
    pub cells_split: u32,
    pub warnings: Vec<MeshWarning>,
}

/// Point counts after populating a mesh with a (possibly different) point set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PopulateReport {
    pub total: u64,
    pub in_active: u64,
    pub warnings: Vec<MeshWarning>,
}

/// How a representative label point is chosen for each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Normalized vertex average of the triangle.
    CellCentroid,
    /// Normalized 3-vector mean of the points inside the cell.
    ImageryCentroid,
}

impl std::str::FromStr for LabelMode {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cell-centroid" | "cell_centroid" => Ok(LabelMode::CellCentroid),
            "imagery-centroid" | "imagery_centroid" => Ok(LabelMode::ImageryCentroid),
            other => Err(MeshError::InvalidParams(format!("unknown label mode `{other}`"))),
        }
    }
}

/// Label point per geo-class (indexed by class, aligned with `active_index`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    pub mode: LabelMode,
    pub cell_ids: Vec<CellId>,
    pub points: Vec<GeoPoint>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, class: usize) -> Option<GeoPoint> {
        self.points.get(class).copied()
    }
}

/// Hierarchical spherical triangulation.
#[derive(Debug, Clone)]
pub struct Mesh {
    params: MeshParams,
    vertices: Vec<UnitVector>,
    cells: Vec<MeshCell>,
    active_index: Vec<CellId>,
    midpoints: HashMap<(u32, u32), u32>,
}

impl Mesh {
    /// Builds the structured sin-latitude grid with `2 * rows * cols` leaves.
    pub fn build_initial(params: MeshParams) -> Result<Self, MeshError> {
        params.validate()?;
        let rows = params.init_rows as usize;
        let cols = params.init_cols as usize;

        let mut mesh = Mesh {
            params,
            vertices: Vec::new(),
            cells: Vec::with_capacity(2 * rows * cols),
            active_index: Vec::new(),
            midpoints: HashMap::new(),
        };

        let south = mesh.push_vertex(UnitVector::from_raw(0.0, 0.0, -1.0));
        let north = mesh.push_vertex(UnitVector::from_raw(0.0, 0.0, 1.0));
        let lons: Vec<f64> = (0..cols)
            .map(|j| (-180.0 + 360.0 * j as f64 / cols as f64).to_radians())
            .collect();
        // ring[k - 1][j] is the vertex on band boundary k (1..rows) at sector j.
        let mut ring = Vec::with_capacity(rows - 1);
        for k in 1..rows {
            let sin_lat = -1.0 + 2.0 * k as f64 / rows as f64;
            let cos_lat = (1.0 - sin_lat * sin_lat).sqrt();
            let ids: Vec<u32> = lons
                .iter()
                .map(|lon| {
                    mesh.push_vertex(UnitVector::from_raw(
                        cos_lat * lon.cos(),
                        cos_lat * lon.sin(),
                        sin_lat,
                    ))
                })
                .collect();
            ring.push(ids);
        }

        for band in 0..rows {
            for col in 0..cols {
                let next = (col + 1) % cols;
                let tris: [[u32; 3]; 2] = if band == 0 {
                    let (w, e) = (ring[0][col], ring[0][next]);
                    let m = mesh.cap_midpoint(w, e, lons[col], band + 1);
                    [[south, w, m], [south, m, e]]
                } else if band == rows - 1 {
                    let (w, e) = (ring[band - 1][col], ring[band - 1][next]);
                    let m = mesh.cap_midpoint(w, e, lons[col], band);
                    [[w, m, north], [m, e, north]]
                } else {
                    let (sw, se) = (ring[band - 1][col], ring[band - 1][next]);
                    let (nw, ne) = (ring[band][col], ring[band][next]);
                    [[sw, se, ne], [sw, ne, nw]]
                };
                for tri in tris {
                    let id = mesh.cells.len() as CellId;
                    let vertex_ids = mesh.orient(tri);
                    mesh.cells.push(MeshCell {
                        id,
                        vertex_ids,
                        parent: None,
                        depth: 0,
                        children: None,
                        training_count: 0,
                        active: false,
                    });
                }
            }
        }
        Ok(mesh)
    }

    /// Midpoint of a polar-cap boundary arc, registered so that quadrisecting
    /// the neighbouring band triangle reuses the same vertex.
    fn cap_midpoint(&mut self, w: u32, e: u32, west_lon: f64, boundary: usize) -> u32 {
        let key = (w.min(e), w.max(e));
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let (a, b) = (self.vertices[w as usize], self.vertices[e as usize]);
        let v = match geodesic_midpoint(&a, &b) {
            Ok(v) => v,
            Err(_) => {
                // Antipodal ends only occur on the equator of a 2-column grid;
                // the equator is itself a great circle, so take its midpoint.
                let rows = self.params.init_rows as f64;
                let sin_lat = -1.0 + 2.0 * boundary as f64 / rows;
                let cos_lat = (1.0 - sin_lat * sin_lat).sqrt();
                let lon = west_lon + std::f64::consts::PI / self.params.init_cols as f64;
                UnitVector::from_raw(cos_lat * lon.cos(), cos_lat * lon.sin(), sin_lat)
            }
        };
        let id = self.push_vertex(v);
        self.midpoints.insert(key, id);
        id
    }

    fn push_vertex(&mut self, v: UnitVector) -> u32 {
        self.vertices.push(v);
        (self.vertices.len() - 1) as u32
    }

    fn orient(&self, tri: [u32; 3]) -> [u32; 3] {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        if triple_product(&a, &b, &c) < 0.0 {
            [tri[0], tri[2], tri[1]]
        } else {
            tri
        }
    }

    fn midpoint_vertex(&mut self, a: u32, b: u32) -> u32 {
        let key = (a.min(b), a.max(b));
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let v = geodesic_midpoint(&self.vertices[a as usize], &self.vertices[b as usize])
            .expect("edges of mesh cells are shorter than a half circle");
        let id = self.push_vertex(v);
        self.midpoints.insert(key, id);
        id
    }

    /// Splits a leaf into four children via its edge midpoints.
    fn subdivide(&mut self, id: CellId) -> [CellId; 4] {
        let cell = &self.cells[id as usize];
        debug_assert!(cell.is_leaf());
        let [a, b, c] = cell.vertex_ids;
        let depth = cell.depth + 1;
        let ab = self.midpoint_vertex(a, b);
        let bc = self.midpoint_vertex(b, c);
        let ca = self.midpoint_vertex(c, a);
        let first = self.cells.len() as CellId;
        let child_ids = [first, first + 1, first + 2, first + 3];
        for (offset, vertex_ids) in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
            .into_iter()
            .enumerate()
        {
            self.cells.push(MeshCell {
                id: first + offset as CellId,
                vertex_ids,
                parent: Some(id),
                depth,
                children: None,
                training_count: 0,
                active: false,
            });
        }
        self.cells[id as usize].children = Some(child_ids);
        child_ids
    }

    pub fn params(&self) -> &MeshParams {
        &self.params
    }

    pub fn cells(&self) -> &[MeshCell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> Option<&MeshCell> {
        self.cells.get(id as usize)
    }

    pub fn vertices(&self) -> &[UnitVector] {
        &self.vertices
    }

    pub fn leaves(&self) -> impl Iterator<Item = &MeshCell> {
        self.cells.iter().filter(|c| c.is_leaf())
    }

    pub fn initial_cell_count(&self) -> usize {
        2 * self.params.init_rows as usize * self.params.init_cols as usize
    }

    /// Sorted active cell ids; position = geo-class.
    pub fn active_index(&self) -> &[CellId] {
        &self.active_index
    }

    /// Number of geo-classes `N`.
    pub fn num_classes(&self) -> usize {
        self.active_index.len()
    }

    pub fn class_of(&self, cell: CellId) -> Option<usize> {
        self.active_index.binary_search(&cell).ok()
    }

    pub fn cell_id_of_class(&self, class: usize) -> Option<CellId> {
        self.active_index.get(class).copied()
    }

    pub fn cell_vertices(&self, id: CellId) -> [UnitVector; 3] {
        self.cells[id as usize]
            .vertex_ids
            .map(|v| self.vertices[v as usize])
    }

    pub fn cell_area(&self, id: CellId) -> f64 {
        let [a, b, c] = self.cell_vertices(id);
        spherical_triangle_area(&a, &b, &c)
    }

    /// Normalized vertex average of the cell triangle.
    pub fn cell_centroid(&self, id: CellId) -> GeoPoint {
        triangle_centroid(&self.cell_vertices(id)).to_geo()
    }

    pub fn contains(&self, id: CellId, p: &UnitVector) -> bool {
        point_in_spherical_triangle(p, &self.cell_vertices(id))
    }

    /// Leaf containing `p`; on shared boundaries the lowest leaf id wins.
    pub fn locate(&self, p: GeoPoint) -> CellId {
        self.locate_vector(&p.to_unit_vector())
    }

    pub fn locate_vector(&self, p: &UnitVector) -> CellId {
        let mut roots = self.candidate_roots(p);
        if roots.is_empty() {
            roots = (0..self.initial_cell_count() as CellId)
                .filter(|&id| self.contains(id, p))
                .collect();
        }
        if roots.is_empty() {
            roots.push(self.best_margin(0..self.initial_cell_count() as CellId, p));
        }
        let mut best = CellId::MAX;
        for root in roots {
            self.descend(root, p, &mut best);
        }
        best
    }

    /// Geo-class of the leaf containing `p`, if that leaf is active.
    pub fn assign(&self, p: GeoPoint) -> Option<usize> {
        self.class_of(self.locate(p))
    }

    fn best_margin(&self, ids: impl Iterator<Item = CellId>, p: &UnitVector) -> CellId {
        ids.map(|id| (id, triangle_margin(p, &self.cell_vertices(id))))
            .fold((CellId::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0
    }

    fn descend(&self, id: CellId, p: &UnitVector, best: &mut CellId) {
        match self.cells[id as usize].children {
            None => *best = (*best).min(id),
            Some(children) => {
                let mut any = false;
                for child in children {
                    if self.contains(child, p) {
                        any = true;
                        self.descend(child, p, best);
                    }
                }
                if !any {
                    // Rounding can leave a point accepted by the parent but just
                    // outside every child; follow the nearest child.
                    let child = self.best_margin(children.into_iter(), p);
                    self.descend(child, p, best);
                }
            }
        }
    }

    /// Initial triangles near the band/sector the point falls in.
    fn candidate_roots(&self, p: &UnitVector) -> Vec<CellId> {
        let rows = self.params.init_rows as i64;
        let cols = self.params.init_cols as i64;
        let band = (((p.z + 1.0) / 2.0 * rows as f64).floor() as i64).clamp(0, rows - 1);
        let lon = p.y.atan2(p.x).to_degrees();
        let col = (((lon + 180.0) / 360.0 * cols as f64).floor() as i64).rem_euclid(cols);
        // Every sector of a cap meets at the pole, so near it scan them all.
        let near_pole = p.x.hypot(p.y) < 1e-6;
        let sectors: Vec<i64> = if near_pole {
            (0..cols).collect()
        } else {
            (-1..=1).map(|dc| (col + dc).rem_euclid(cols)).collect()
        };
        let mut out = Vec::with_capacity(18);
        for b in (band - 1).max(0)..=(band + 1).min(rows - 1) {
            for &c in &sectors {
                for half in 0..2 {
                    let id = (2 * (b * cols + c) + half) as CellId;
                    if !out.contains(&id) && self.contains(id, p) {
                        out.push(id);
                    }
                }
            }
        }
        out
    }

    /// Leaf counts for a point set, indexed by cell id (zero for internal cells).
    fn leaf_counts(&self, points: &[UnitVector]) -> Vec<u64> {
        let mut counts = vec![0u64; self.cells.len()];
        for p in points {
            counts[self.locate_vector(p) as usize] += 1;
        }
        counts
    }

    /// Writes subtree counts into every cell given leaf counts.
    fn store_counts(&mut self, mut counts: Vec<u64>) {
        // Children always have larger ids than their parent.
        for id in (0..self.cells.len()).rev() {
            if let Some(children) = self.cells[id].children {
                counts[id] = children.iter().map(|&c| counts[c as usize]).sum();
            }
        }
        for (cell, count) in self.cells.iter_mut().zip(counts) {
            cell.training_count = count;
        }
    }

    /// Quadrisects over-full leaves until every leaf holds at most
    /// `refinement_limit` points or has reached `max_depth`, then prunes.
    pub fn refine_and_prune(&mut self, points: &[GeoPoint]) -> Result<RefineReport, MeshError> {
        if points.is_empty() {
            return Err(MeshError::NoPoints);
        }
        let uvs: Vec<UnitVector> = points.iter().map(GeoPoint::to_unit_vector).collect();
        let mut report = RefineReport::default();
        let counts = loop {
            let counts = self.leaf_counts(&uvs);
            let over: Vec<CellId> = self
                .leaves()
                .filter(|c| {
                    counts[c.id as usize] > self.params.refinement_limit
                        && c.depth < self.params.max_depth
                })
                .map(|c| c.id)
                .collect();
            if over.is_empty() {
                break counts;
            }
            report.passes += 1;
            report.cells_split += over.len() as u32;
            for id in over {
                self.subdivide(id);
            }
        };
        for leaf in self.leaves() {
            let count = counts[leaf.id as usize];
            if count > self.params.refinement_limit {
                report.warnings.push(MeshWarning::DepthLimitReached {
                    cell_id: leaf.id,
                    count,
                });
            }
        }
        self.store_counts(counts);
        report.warnings.extend(self.prune());
        Ok(report)
    }

    /// Recounts with a new point set without refining, then prunes again.
    pub fn populate(&mut self, points: &[GeoPoint]) -> PopulateReport {
        let uvs: Vec<UnitVector> = points.iter().map(GeoPoint::to_unit_vector).collect();
        let counts = self.leaf_counts(&uvs);
        self.store_counts(counts);
        let warnings = self.prune();
        let in_active = self
            .active_index
            .iter()
            .map(|&id| self.cells[id as usize].training_count)
            .sum();
        PopulateReport {
            total: points.len() as u64,
            in_active,
            warnings,
        }
    }

    fn prune(&mut self) -> Vec<MeshWarning> {
        let min = self.params.minimum_examples;
        for cell in &mut self.cells {
            cell.active = cell.is_leaf() && cell.training_count >= min;
        }
        self.active_index = self
            .cells
            .iter()
            .filter(|c| c.active)
            .map(|c| c.id)
            .collect();
        if self.active_index.is_empty() {
            vec![MeshWarning::EmptyMesh]
        } else {
            Vec::new()
        }
    }

    /// Label point per active cell.
    pub fn compute_cell_labels(
        &self,
        points: &[GeoPoint],
        mode: LabelMode,
    ) -> Result<LabelTable, MeshError> {
        let labels = match mode {
            LabelMode::CellCentroid => self
                .active_index
                .iter()
                .map(|&id| self.cell_centroid(id))
                .collect(),
            LabelMode::ImageryCentroid => {
                let mut sums = vec![[0.0f64; 3]; self.active_index.len()];
                let mut counts = vec![0u64; self.active_index.len()];
                for p in points {
                    if let Some(class) = self.assign(*p) {
                        let v = p.to_unit_vector();
                        sums[class][0] += v.x;
                        sums[class][1] += v.y;
                        sums[class][2] += v.z;
                        counts[class] += 1;
                    }
                }
                let mut labels = Vec::with_capacity(sums.len());
                for (class, (sum, count)) in sums.iter().zip(&counts).enumerate() {
                    let cell_id = self.active_index[class];
                    if *count == 0 {
                        return Err(MeshError::MissingPopulation(cell_id));
                    }
                    let mean = UnitVector::new(sum[0], sum[1], sum[2])
                        .map_err(|_| MeshError::MissingPopulation(cell_id))?;
                    labels.push(mean.to_geo());
                }
                labels
            }
        };
        Ok(LabelTable {
            mode,
            cell_ids: self.active_index.clone(),
            points: labels,
        })
    }

    /// Reassembles a mesh from stored parts; used by the loader.
    fn from_parts(
        params: MeshParams,
        vertices: Vec<UnitVector>,
        cells: Vec<MeshCell>,
        active_index: Vec<CellId>,
    ) -> Result<Self, MeshError> {
        params.validate()?;
        let mut midpoints = HashMap::new();
        for (i, cell) in cells.iter().enumerate() {
            if cell.id as usize != i {
                return Err(MeshError::Malformed(format!("cell {i} has id {}", cell.id)));
            }
            if cell.vertex_ids.iter().any(|&v| v as usize >= vertices.len()) {
                return Err(MeshError::Malformed(format!("cell {i} references a missing vertex")));
            }
            if let Some(children) = cell.children {
                if children.iter().any(|&c| c as usize >= cells.len() || c <= cell.id) {
                    return Err(MeshError::Malformed(format!("cell {i} has invalid children")));
                }
                let [a, b, c] = cell.vertex_ids;
                // Child layout: [a, ab, ca], [ab, b, bc], ...
                let first = cells[children[0] as usize].vertex_ids;
                let second = cells[children[1] as usize].vertex_ids;
                midpoints.insert((a.min(b), a.max(b)), first[1]);
                midpoints.insert((c.min(a), c.max(a)), first[2]);
                midpoints.insert((b.min(c), b.max(c)), second[2]);
            }
        }
        let mut sorted = active_index.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != active_index {
            return Err(MeshError::Malformed("active_index is not sorted and unique".into()));
        }
        for &id in &active_index {
            match cells.get(id as usize) {
                Some(c) if c.active && c.is_leaf() => {}
                _ => return Err(MeshError::Malformed(format!("active cell {id} is not an active leaf"))),
            }
        }
        let mut mesh = Mesh {
            params,
            vertices,
            cells,
            active_index,
            midpoints,
        };
        // Cap midpoints are not recoverable from children; rebuild them from the grid.
        mesh.register_cap_midpoints();
        Ok(mesh)
    }

    fn register_cap_midpoints(&mut self) {
        let rows = self.params.init_rows as usize;
        let cols = self.params.init_cols as usize;
        for band in [0, rows - 1] {
            for col in 0..cols {
                let base = 2 * (band * cols + col);
                let first = self.cells[base].vertex_ids;
                let second = self.cells[base + 1].vertex_ids;
                // The shared vertex of the two cap halves other than the pole
                // is the arc midpoint; the remaining ones are the arc ends.
                let pole = if band == 0 { 0 } else { 1 };
                let shared: Vec<u32> = first
                    .iter()
                    .copied()
                    .filter(|v| *v != pole && second.contains(v))
                    .collect();
                let ends: Vec<u32> = first
                    .iter()
                    .chain(second.iter())
                    .copied()
                    .filter(|v| *v != pole && !shared.contains(v))
                    .collect();
                if let (Some(&m), [w, e]) = (shared.first(), ends.as_slice()) {
                    self.midpoints.entry((*w.min(e), *w.max(e))).or_insert(m);
                }
            }
        }
    }
}
