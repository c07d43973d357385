//! Point cloud voxelization, cube meshes for occupied voxels, and label
//! transfer between voxels, cube faces and points.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Point};
use crate::labels::{ElementKind, LabelId, LabelMap, VOID};
use crate::mesh::{PointCloud, TriangleMesh};

/// Identity of the cloud a grid was built from; used to reject transfers
/// onto a different cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsSignature {
    pub point_count: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundsSignature {
    pub fn of(cloud: &PointCloud) -> Self {
        let b = cloud.bounds();
        Self {
            point_count: cloud.len(),
            min: [b.min.x, b.min.y, b.min.z],
            max: [b.max.x, b.max.y, b.max.z],
        }
    }
}

/// Dense grid with sparse occupancy. Elements of a voxel [`LabelMap`] are
/// the occupied voxels in ascending linear-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Point,
    pub step: f64,
    pub dims: [u64; 3],
    pub min_points: u32,
    /// Occupied voxel linear indices, ascending.
    occupied: Vec<u64>,
    /// Point count of every voxel that received a point (ascending index).
    counts: Vec<(u64, u32)>,
    pub signature: Option<BoundsSignature>,
}

impl VoxelGrid {
    pub fn occupied(&self) -> &[u64] {
        &self.occupied
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    /// Counts for all voxels that received at least one point.
    pub fn counts(&self) -> &[(u64, u32)] {
        &self.counts
    }

    pub fn count(&self, linear: u64) -> u32 {
        self.counts
            .binary_search_by_key(&linear, |&(i, _)| i)
            .map(|k| self.counts[k].1)
            .unwrap_or(0)
    }

    pub fn linear(&self, ijk: [u64; 3]) -> u64 {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn unlinear(&self, linear: u64) -> [u64; 3] {
        let i = linear % self.dims[0];
        let r = linear / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: &Point) -> Option<[u64; 3]> {
        let mut ijk = [0u64; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.step).floor();
            if f < 0.0 {
                return None;
            }
            let i = f as u64;
            // Points on the max face round to dims; they belong to the last cell.
            ijk[a] = if i == self.dims[a] { i - 1 } else { i };
            if ijk[a] >= self.dims[a] {
                return None;
            }
        }
        Some(ijk)
    }

    /// Ordinal of an occupied voxel (its element id), if occupied.
    pub fn element_of(&self, linear: u64) -> Option<usize> {
        self.occupied.binary_search(&linear).ok()
    }

    pub fn voxel_center(&self, linear: u64) -> Point {
        let [i, j, k] = self.unlinear(linear);
        let h = 0.5 * self.step;
        Point::new(
            self.origin.x + i as f64 * self.step + h,
            self.origin.y + j as f64 * self.step + h,
            self.origin.z + k as f64 * self.step + h,
        )
    }

    /// Centers of occupied voxels in element order.
    pub fn element_centers(&self) -> Vec<Point> {
        self.occupied.iter().map(|&l| self.voxel_center(l)).collect()
    }

    pub fn bounds(&self) -> Aabb {
        let max = Point::new(
            self.origin.x + self.dims[0] as f64 * self.step,
            self.origin.y + self.dims[1] as f64 * self.step,
            self.origin.z + self.dims[2] as f64 * self.step,
        );
        Aabb {
            min: self.origin,
            max,
        }
    }
}

/// Bins points on a grid of spacing `step` whose origin is snapped to a
/// multiple of `step`. A voxel is occupied when its count exceeds
/// `min_points`.
pub fn voxelize(cloud: &PointCloud, step: f64, min_points: u32) -> Result<VoxelGrid> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!("voxel step must be positive, got {step}")));
    }
    if cloud.is_empty() {
        return Err(Error::Invalid("cannot voxelize an empty cloud".into()));
    }
    if let Some(i) = cloud.points().iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::Invalid(format!("point {i} has non-finite coordinates")));
    }
    let b = cloud.bounds();
    let mut origin = Point::new(
        (b.min.x / step).floor() * step,
        (b.min.y / step).floor() * step,
        (b.min.z / step).floor() * step,
    );
    for a in 0..3 {
        // Rounding in floor(min / step) * step can land just above min.
        if origin[a] > b.min[a] {
            origin[a] -= step;
        }
    }
    let mut dims = [0u64; 3];
    for a in 0..3 {
        dims[a] = ((b.max[a] - origin[a]) / step).floor() as u64 + 1;
    }
    let mut grid = VoxelGrid {
        origin,
        step,
        dims,
        min_points,
        occupied: Vec::new(),
        counts: Vec::new(),
        signature: Some(BoundsSignature::of(cloud)),
    };
    let mut idx: Vec<u64> = cloud
        .points()
        .par_iter()
        .map(|p| {
            let v = grid.voxel_of(p).expect("point lies inside its own bounds");
            grid.linear(v)
        })
        .collect();
    idx.par_sort_unstable();
    let mut counts: Vec<(u64, u32)> = Vec::new();
    for i in idx {
        match counts.last_mut() {
            Some((last, c)) if *last == i => *c += 1,
            _ => counts.push((i, 1)),
        }
    }
    grid.occupied = counts
        .iter()
        .filter(|&&(_, c)| c > min_points)
        .map(|&(i, _)| i)
        .collect();
    grid.counts = counts;
    Ok(grid)
}

/// Cube corner offsets and outward-wound faces of a unit cube.
const CUBE_CORNERS: [[f64; 3]; 8] = [
    [0., 0., 0.],
    [1., 0., 0.],
    [1., 1., 0.],
    [0., 1., 0.],
    [0., 0., 1.],
    [1., 0., 1.],
    [1., 1., 1.],
    [0., 1., 1.],
];

pub(crate) const CUBE_FACES: [[u32; 3]; 12] = [
    [0, 2, 1],
    [0, 3, 2],
    [4, 5, 6],
    [4, 6, 7],
    [0, 1, 5],
    [0, 5, 4],
    [1, 2, 6],
    [1, 6, 5],
    [2, 3, 7],
    [2, 7, 6],
    [3, 0, 4],
    [3, 4, 7],
];

/// Cube mesh of occupied voxels: 8 vertices and 12 faces per voxel, cubes
/// not merged. The second value maps each face to its voxel element id.
pub fn voxel_cube_mesh(grid: &VoxelGrid) -> (TriangleMesh, Vec<u32>) {
    let mut vertices = Vec::with_capacity(grid.occupied.len() * 8);
    let mut faces = Vec::with_capacity(grid.occupied.len() * 12);
    let mut provenance = Vec::with_capacity(grid.occupied.len() * 12);
    for (e, &lin) in grid.occupied.iter().enumerate() {
        let [i, j, k] = grid.unlinear(lin);
        let base = vertices.len() as u32;
        for c in CUBE_CORNERS {
            vertices.push(Point::new(
                grid.origin.x + (i as f64 + c[0]) * grid.step,
                grid.origin.y + (j as f64 + c[1]) * grid.step,
                grid.origin.z + (k as f64 + c[2]) * grid.step,
            ));
        }
        for f in CUBE_FACES {
            faces.push([base + f[0], base + f[1], base + f[2]]);
            provenance.push(e as u32);
        }
    }
    let mesh = TriangleMesh::new(vertices, faces).expect("cube faces are valid");
    (mesh, provenance)
}

fn majority(votes: &mut [LabelId]) -> LabelId {
    votes.sort_unstable();
    let mut best = (0usize, VOID);
    let mut i = 0;
    while i < votes.len() {
        let mut j = i;
        while j < votes.len() && votes[j] == votes[i] {
            j += 1;
        }
        // Ascending order means strict > keeps the smallest id on ties.
        if j - i > best.0 {
            best = (j - i, votes[i]);
        }
        i = j;
    }
    best.1
}

/// Voxel labels from cube-face labels: the most frequent non-void label
/// over the voxel's faces, ties to the smallest id.
pub fn voxel_labels_from_faces(
    face_labels: &LabelMap,
    provenance: &[u32],
    voxel_count: usize,
) -> Result<LabelMap> {
    if face_labels.len() != provenance.len() {
        return Err(Error::SceneMismatch(format!(
            "{} face labels for {} cube faces",
            face_labels.len(),
            provenance.len()
        )));
    }
    let mut votes: Vec<Vec<LabelId>> = vec![Vec::new(); voxel_count];
    for (f, l) in face_labels.entries() {
        votes[provenance[f] as usize].push(l);
    }
    let labels = votes.iter_mut().map(|v| majority(v)).collect();
    Ok(LabelMap::from_labels(face_labels.scene_id(), ElementKind::Voxel, labels))
}

/// Expands voxel labels onto the 12 faces of each cube.
pub fn face_labels_from_voxels(voxel_labels: &LabelMap, provenance: &[u32]) -> LabelMap {
    let labels = provenance
        .iter()
        .map(|&v| voxel_labels.get(v as usize))
        .collect();
    LabelMap::from_labels(voxel_labels.scene_id(), ElementKind::Face, labels)
}

/// Voxel labels from point labels (majority of non-void point labels).
pub fn voxel_labels_from_points(grid: &VoxelGrid, cloud: &PointCloud, points: &LabelMap) -> Result<LabelMap> {
    check_signature(grid, cloud)?;
    let mut votes: Vec<Vec<LabelId>> = vec![Vec::new(); grid.occupied_count()];
    for (i, l) in points.entries() {
        if let Some(e) = grid
            .voxel_of(&cloud.points()[i])
            .and_then(|v| grid.element_of(grid.linear(v)))
        {
            votes[e].push(l);
        }
    }
    let labels = votes.iter_mut().map(|v| majority(v)).collect();
    Ok(LabelMap::from_labels(points.scene_id(), ElementKind::Voxel, labels))
}

fn check_signature(grid: &VoxelGrid, cloud: &PointCloud) -> Result<()> {
    match grid.signature {
        Some(sig) if sig != BoundsSignature::of(cloud) => Err(Error::SceneMismatch(
            "point cloud does not match the grid's source bounds".into(),
        )),
        _ => Ok(()),
    }
}

/// Each point inside an occupied voxel takes that voxel's label; all other
/// points stay void.
pub fn transfer_voxel_labels(grid: &VoxelGrid, voxel_labels: &LabelMap, cloud: &PointCloud) -> Result<LabelMap> {
    check_signature(grid, cloud)?;
    if voxel_labels.len() != grid.occupied_count() {
        return Err(Error::SceneMismatch(format!(
            "{} voxel labels for {} occupied voxels",
            voxel_labels.len(),
            grid.occupied_count()
        )));
    }
    let labels = cloud
        .points()
        .par_iter()
        .map(|p| {
            grid.voxel_of(p)
                .and_then(|v| grid.element_of(grid.linear(v)))
                .map(|e| voxel_labels.get(e))
                .unwrap_or(VOID)
        })
        .collect();
    Ok(LabelMap::from_labels(voxel_labels.scene_id(), ElementKind::Point, labels))
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    origin: [f64; 3],
    step: f64,
    dims: [u64; 3],
    min_points: u32,
    #[serde(default)]
    signature: Option<BoundsSignature>,
}

/// Writes `grid.json` and `occupied.csv` (`index,count`) into `dir`.
pub fn save_grid(grid: &VoxelGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = GridFile {
        origin: [grid.origin.x, grid.origin.y, grid.origin.z],
        step: grid.step,
        dims: grid.dims,
        min_points: grid.min_points,
        signature: grid.signature,
    };
    let p = dir.join("grid.json");
    fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&p, e))?;
    let p = dir.join("occupied.csv");
    let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    w.write_record(["index", "count"])?;
    for &lin in &grid.occupied {
        w.write_record([lin.to_string(), grid.count(lin).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn load_grid(dir: &Path) -> Result<VoxelGrid> {
    let p = dir.join("grid.json");
    let meta: GridFile =
        serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
    let p = dir.join("occupied.csv");
    let mut rdr = csv::Reader::from_path(&p)?;
    let total = meta.dims.iter().product::<u64>();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let at = rec.position().map(|p| p.byte()).unwrap_or(0);
        let lin: u64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(at, "bad voxel index"))?;
        let c: u32 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(at, "bad voxel count"))?;
        if lin >= total {
            return Err(Error::OutOfRange {
                what: "voxel index",
                index: lin,
                limit: total,
            });
        }
        counts.push((lin, c));
    }
    counts.sort_unstable();
    Ok(VoxelGrid {
        origin: Point::from(meta.origin),
        step: meta.step,
        dims: meta.dims,
        min_points: meta.min_points,
        occupied: counts.iter().map(|&(i, _)| i).collect(),
        counts,
        signature: meta.signature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points.into_iter().map(Point::from).collect(), None).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        let six = cloud((0..6).map(|i| [0.1 + 0.1 * i as f64, 0.5, 0.5]).collect());
        assert_eq!(voxelize(&six, 1.0, 5).unwrap().occupied_count(), 1);
        let five = cloud((0..5).map(|i| [0.1 + 0.1 * i as f64, 0.5, 0.5]).collect());
        let g = voxelize(&five, 1.0, 5).unwrap();
        assert_eq!(g.occupied_count(), 0);
        assert_eq!(g.counts(), &[(0, 5)]);
    }

    #[test]
    fn matches_brute_force_binning() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..100_000)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0)])
            .collect();
        let c = cloud(pts.clone());
        let step = 0.2;
        let g = voxelize(&c, step, 5).unwrap();
        // Independent pass: per-point floor binning into a map of cell triples.
        let min = pts.iter().fold([f64::INFINITY; 3], |m, p| [m[0].min(p[0]), m[1].min(p[1]), m[2].min(p[2])]);
        let o: Vec<f64> = min.iter().map(|m| (m / step).floor() * step).collect();
        let mut bins: BTreeMap<[i64; 3], u32> = BTreeMap::new();
        for p in &pts {
            let k = [0, 1, 2].map(|a| ((p[a] - o[a]) / step).floor() as i64);
            *bins.entry(k).or_default() += 1;
        }
        let mut expect: Vec<u64> = bins
            .iter()
            .filter(|(_, &c)| c > 5)
            .map(|(k, _)| g.linear([k[0] as u64, k[1] as u64, k[2] as u64]))
            .collect();
        expect.sort_unstable();
        assert_eq!(g.occupied(), expect.as_slice());
    }

    #[test]
    fn non_finite_rejected() {
        let err = PointCloud::new(vec![Point::new(f64::NAN, 0., 0.)], None);
        assert!(err.is_err());
    }

    #[test]
    fn cube_mesh_counts_and_area() {
        let one = cloud((0..6).map(|_| [0.5, 0.5, 0.5]).collect());
        let g = voxelize(&one, 1.0, 5).unwrap();
        let (m, prov) = voxel_cube_mesh(&g);
        assert_eq!((m.vertex_count(), m.face_count()), (8, 12));
        assert_eq!(prov, vec![0; 12]);

        let none = voxelize(&cloud(vec![[0., 0., 0.]]), 1.0, 5).unwrap();
        assert!(voxel_cube_mesh(&none).0.is_empty());

        let step = 0.3;
        let mut pts = Vec::new();
        for c in [[0.1, 0.1, 0.1], [0.4, 0.1, 0.1], [0.1, 0.7, 0.4]] {
            pts.extend(std::iter::repeat_n(c, 7));
        }
        let g = voxelize(&cloud(pts), step, 5).unwrap();
        assert_eq!(g.occupied_count(), 3);
        let (m, _) = voxel_cube_mesh(&g);
        let total: f64 = m.face_areas().iter().sum();
        assert!((total - 3.0 * 6.0 * step * step).abs() < 1e-9);
        // Outward winding: normals point away from cube centers.
        for f in 0..m.face_count() as u32 {
            let e = f as usize / 12;
            let c = g.voxel_center(g.occupied()[e]);
            let n = m.face_normal(f).unwrap();
            assert!(n.dot(&(m.face_centroid(f).unwrap() - c)) > 0.0);
        }
    }

    #[test]
    fn transfer_labels() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [0.1 * i as f64, 0.2, 0.3]).collect();
        let c = cloud(pts);
        let g = voxelize(&c, 1.0, 5).unwrap();
        let vl = LabelMap::from_labels("s", ElementKind::Voxel, vec![4]);
        let pl = transfer_voxel_labels(&g, &vl, &c).unwrap();
        assert!(pl.labels().iter().all(|&l| l == 4));

        // A sparse voxel next to the dense one stays unlabeled.
        let mut pts: Vec<[f64; 3]> = (0..8).map(|i| [0.1 * i as f64, 0.2, 0.3]).collect();
        pts.push([1.5, 0.2, 0.3]);
        let c = cloud(pts);
        let g = voxelize(&c, 1.0, 5).unwrap();
        let pl = transfer_voxel_labels(&g, &vl, &c).unwrap();
        assert_eq!(pl.get(8), VOID);
        assert_eq!(pl.get(0), 4);

        let other = cloud(vec![[0.0, 0.0, 0.0]; 9]);
        assert!(matches!(transfer_voxel_labels(&g, &vl, &other), Err(Error::SceneMismatch(_))));
    }

    #[test]
    fn random_transfer_equals_lookup() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..20_000)
            .map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)])
            .collect();
        let c = cloud(pts.clone());
        let g = voxelize(&c, 0.25, 5).unwrap();
        let vl = LabelMap::from_labels(
            "s",
            ElementKind::Voxel,
            (0..g.occupied_count()).map(|_| rng.random_range(0..12)).collect(),
        );
        let pl = transfer_voxel_labels(&g, &vl, &c).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let ijk = [0, 1, 2].map(|a| ((p[a] - g.origin[a]) / g.step).floor() as u64);
            let lin = ijk[0] + g.dims[0] * (ijk[1] + g.dims[1] * ijk[2]);
            let expect = match g.occupied().iter().position(|&o| o == lin) {
                Some(e) => vl.get(e),
                None => VOID,
            };
            assert_eq!(pl.get(i), expect);
        }
    }

    #[test]
    fn grid_file_round_trip() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [0.05 * i as f64, 0.1, 0.2]).collect();
        let g = voxelize(&cloud(pts), 0.5, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_grid(&g, dir.path()).unwrap();
        let back = load_grid(dir.path()).unwrap();
        assert_eq!(back.occupied(), g.occupied());
        assert_eq!(back.dims, g.dims);
        assert_eq!(back.origin, g.origin);
    }

    #[test]
    fn majority_prefers_smallest_on_tie() {
        assert_eq!(majority(&mut [5, 2, 5, 2]), 2);
        assert_eq!(majority(&mut []), VOID);
        assert_eq!(majority(&mut [3, 3, 1]), 3);
    }
}
