//! Paint sessions over a preprocessed scene.
//!
//! A stroke hits the level-0 mesh (by ray or explicit seed face) and labels
//! every face of the seed face's chunk whose centroid lies within the stroke
//! radius of the hit point. The seed face itself is always labeled. The
//! working map is fully determined by the initial map plus the strokes
//! before the undo cursor.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Ray, Vector};
use crate::labels::{ElementKind, LabelId, LabelMap};
use crate::mesh::FaceId;
use crate::metrics;
use crate::preprocess::{merge_chunks, voxel};
use crate::scene::Scene;
use crate::taxonomy::LabelTaxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayTarget {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeTarget {
    Ray(RayTarget),
    Face(FaceId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    #[serde(flatten)]
    pub target: StrokeTarget,
    pub radius: f64,
    pub label: LabelId,
    #[serde(default)]
    pub annotator: String,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub ts: u64,
}

impl Stroke {
    pub fn ray(origin: Point, direction: Vector, radius: f64, label: LabelId) -> Self {
        Self {
            target: StrokeTarget::Ray(RayTarget {
                origin: origin.into(),
                direction: direction.into(),
            }),
            radius,
            label,
            annotator: String::new(),
            ts: 0,
        }
    }

    pub fn face(face: FaceId, radius: f64, label: LabelId) -> Self {
        Self {
            target: StrokeTarget::Face(face),
            radius,
            label,
            annotator: String::new(),
            ts: 0,
        }
    }

    pub fn by(mut self, annotator: impl Into<String>) -> Self {
        self.annotator = annotator.into();
        self
    }

    pub fn at(mut self, ts: u64) -> Self {
        self.ts = ts;
        self
    }

    pub fn validate(&self, taxonomy: &LabelTaxonomy, face_count: usize) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Invalid(format!("stroke radius must be positive, got {}", self.radius)));
        }
        taxonomy.check(self.label as u32)?;
        match self.target {
            StrokeTarget::Ray(r) => {
                let d = Vector::from(r.direction);
                if !r.origin.iter().all(|c| c.is_finite()) || ((d.norm() - 1.0).abs() > 1e-6) {
                    return Err(Error::Invalid("stroke ray needs a finite origin and unit direction".into()));
                }
            }
            StrokeTarget::Face(f) if f as usize >= face_count => {
                return Err(Error::OutOfRange {
                    what: "face id",
                    index: f as u64,
                    limit: face_count as u64,
                })
            }
            StrokeTarget::Face(_) => {}
        }
        Ok(())
    }
}

/// A stroke as stored in the log, numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub stroke: Stroke,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Also paint faces in the 26 neighboring chunk cells.
    pub cross_chunk: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub face: FaceId,
    pub point: Point,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct Session {
    scene: Arc<Scene>,
    taxonomy: LabelTaxonomy,
    config: SessionConfig,
    initial: LabelMap,
    working: LabelMap,
    log: Vec<StrokeRecord>,
    cursor: usize,
}

impl Session {
    /// Starts a session. An initial map may be over faces, or for point-cloud
    /// scenes over points or voxels; it is converted to paint faces.
    pub fn new(
        scene: Arc<Scene>,
        taxonomy: LabelTaxonomy,
        initial: Option<&LabelMap>,
        config: SessionConfig,
    ) -> Result<Self> {
        let working = match initial {
            None => LabelMap::unlabeled(&scene.id, ElementKind::Face, scene.face_count()),
            Some(m) => {
                if m.scene_id() != scene.id {
                    return Err(Error::SceneMismatch(format!(
                        "initial labels belong to scene '{}', not '{}'",
                        m.scene_id(),
                        scene.id
                    )));
                }
                m.validate(&taxonomy)?;
                scene.face_labels(m)?
            }
        };
        Ok(Self {
            scene,
            taxonomy,
            config,
            initial: working.clone(),
            working,
            log: Vec::new(),
            cursor: 0,
        })
    }

    /// Rebuilds a session by applying `records` in order.
    pub fn replay(
        scene: Arc<Scene>,
        taxonomy: LabelTaxonomy,
        initial: Option<&LabelMap>,
        config: SessionConfig,
        records: &[StrokeRecord],
    ) -> Result<Self> {
        let mut s = Self::new(scene, taxonomy, initial, config)?;
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 + 1 {
                return Err(Error::Invalid(format!("stroke log out of order: seq {} at line {}", r.seq, i + 1)));
            }
            s.paint(r.stroke.clone())?;
        }
        Ok(s)
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    /// Face labels of the level-0 paint mesh.
    pub fn labels(&self) -> &LabelMap {
        &self.working
    }

    /// Strokes currently in effect.
    pub fn strokes(&self) -> &[StrokeRecord] {
        &self.log[..self.cursor]
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn next_seq(&self) -> u64 {
        self.cursor as u64 + 1
    }

    pub fn raycast(&self, origin: Point, direction: Vector) -> Option<Hit> {
        let ray = Ray::new(origin, direction);
        self.scene
            .bvh()
            .first_hit(&self.scene.mesh, &ray)
            .map(|(face, t)| Hit {
                face,
                point: ray.at(t),
                t,
            })
    }

    /// Seed face and paint center of a stroke.
    pub fn resolve(&self, target: &StrokeTarget) -> Result<(FaceId, Point)> {
        match *target {
            StrokeTarget::Ray(r) => self
                .raycast(Point::from(r.origin), Vector::from(r.direction))
                .map(|h| (h.face, h.point))
                .ok_or(Error::RayMiss),
            StrokeTarget::Face(f) => Ok((f, self.scene.centroids()[f as usize])),
        }
    }

    /// Faces a stroke centered at `p` with seed `seed` would label, ascending.
    pub fn affected_faces(&self, seed: FaceId, p: &Point, radius: f64) -> Vec<FaceId> {
        let chunks = &self.scene.chunks;
        let home = chunks.chunk_of_face(seed).expect("every face has a chunk");
        let domain = if self.config.cross_chunk {
            chunks.neighborhood(home)
        } else {
            vec![home]
        };
        let centroids = self.scene.centroids();
        let mut out: Vec<FaceId> = domain
            .iter()
            .flat_map(|c| c.face_ids.iter().copied())
            .filter(|&f| f == seed || (centroids[f as usize] - p).norm() <= radius)
            .collect();
        out.sort_unstable();
        out
    }

    /// Applies a stroke and appends it to the log, discarding any undone
    /// strokes. A missed ray leaves the session unchanged.
    pub fn paint(&mut self, stroke: Stroke) -> Result<Vec<FaceId>> {
        stroke.validate(&self.taxonomy, self.scene.face_count())?;
        let (seed, p) = self.resolve(&stroke.target)?;
        let affected = self.affected_faces(seed, &p, stroke.radius);
        let labels = self.working.labels_mut();
        for &f in &affected {
            labels[f as usize] = stroke.label;
        }
        self.log.truncate(self.cursor);
        self.log.push(StrokeRecord {
            seq: self.cursor as u64 + 1,
            stroke,
        });
        self.cursor += 1;
        Ok(affected)
    }

    /// Reverts the last stroke in effect.
    pub fn undo(&mut self) -> Result<()> {
        if self.cursor == 0 {
            return Err(Error::EmptyUndo);
        }
        self.cursor -= 1;
        let mut working = self.initial.clone();
        for r in &self.log[..self.cursor] {
            let (seed, p) = self.resolve(&r.stroke.target)?;
            let labels = working.labels_mut();
            for f in self.affected_faces(seed, &p, r.stroke.radius) {
                labels[f as usize] = r.stroke.label;
            }
        }
        self.working = working;
        Ok(())
    }

    pub fn unlabeled_elements(&self) -> Vec<FaceId> {
        self.working.unlabeled_elements()
    }

    /// Labeled share of the paint surface area, in percent.
    pub fn progress(&self) -> f64 {
        metrics::perc_area(&self.working, self.scene.areas()).unwrap_or(0.0)
    }

    /// Labels over the source mesh faces, or over the source points for
    /// point-cloud scenes.
    pub fn export(&self) -> Result<LabelMap> {
        let split = self.scene.chunks.split_labels(&self.working)?;
        let merged = merge_chunks(&self.scene.chunks, &self.scene.id, &split)?;
        match &self.scene.voxels {
            None => Ok(merged),
            Some(v) => {
                let vox = voxel::voxel_labels_from_faces(&merged, &v.face_voxel, v.grid.occupied_count())?;
                voxel::transfer_voxel_labels(&v.grid, &vox, &v.cloud)
            }
        }
    }
}

pub fn write_log<W: Write>(records: &[StrokeRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<stroke log>", e))?;
    }
    Ok(())
}

pub fn log_line(record: &StrokeRecord) -> String {
    serde_json::to_string(record).expect("stroke serializes") + "\n"
}

/// Parses a JSON Lines stroke log. Blank lines are ignored.
pub fn parse_log<R: BufRead>(input: R) -> Result<Vec<StrokeRecord>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in input.split(b'\n') {
        let line = line.map_err(|e| Error::io("<stroke log>", e))?;
        let at = offset;
        offset += line.len() as u64 + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: StrokeRecord =
            serde_json::from_slice(&line).map_err(|e| Error::parse(at, format!("stroke record: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::PreprocessConfig;
    use crate::synth;
    use rand::Rng;

    fn scene(mesh: crate::mesh::TriangleMesh, cell: f64) -> Arc<Scene> {
        let cfg = PreprocessConfig {
            cell_size: cell,
            ..Default::default()
        };
        Arc::new(Scene::from_mesh("s", mesh, cfg).unwrap())
    }

    fn session(s: &Arc<Scene>) -> Session {
        Session::new(s.clone(), LabelTaxonomy::eigen13(), None, SessionConfig::default()).unwrap()
    }

    fn down(x: f64, y: f64, h: f64) -> Stroke {
        Stroke::ray(Point::new(x, y, h), Vector::new(0.0, 0.0, -1.0), 0.5, 3)
    }

    #[test]
    fn fresh_and_full_progress() {
        let s = scene(synth::grid_mesh(4, 4, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        assert_eq!(ss.progress(), 0.0);
        assert_eq!(ss.unlabeled_elements().len(), 32);
        ss.paint(Stroke::face(0, 1e9, 2)).unwrap();
        assert_eq!(ss.progress(), 100.0);
        assert!(ss.unlabeled_elements().is_empty());
        let full = ss.export().unwrap();
        let again = Session::new(s.clone(), LabelTaxonomy::eigen13(), Some(&full), SessionConfig::default()).unwrap();
        assert_eq!(again.progress(), 100.0);
    }

    #[test]
    fn ray_down_onto_square() {
        let s = scene(synth::grid_mesh(1, 1, 1.0, 0.0, 0), 100.0);
        let ss = session(&s);
        let h = ss.raycast(Point::new(0.25, 0.6, 3.0), Vector::new(0.0, 0.0, -1.0)).unwrap();
        assert!(h.face < 2);
        assert_eq!(h.t, 3.0);
        assert!(ss.raycast(Point::new(0.25, 0.6, 3.0), Vector::new(1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn tiny_radius_paints_only_the_seed() {
        let s = scene(synth::grid_mesh(6, 6, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        let mut st = down(2.3, 2.6, 1.0);
        st.radius = 1e-9;
        let hit = ss.raycast(Point::new(2.3, 2.6, 1.0), Vector::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(ss.paint(st).unwrap(), vec![hit.face]);
    }

    #[test]
    fn miss_changes_nothing() {
        let s = scene(synth::grid_mesh(2, 2, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        let err = ss.paint(down(50.0, 50.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::RayMiss));
        assert_eq!(ss.cursor(), 0);
    }

    #[test]
    fn invalid_strokes_are_rejected() {
        let s = scene(synth::grid_mesh(2, 2, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        assert!(ss.paint(Stroke::face(0, 0.0, 1)).is_err());
        assert!(ss.paint(Stroke::face(0, 1.0, 99)).is_err());
        assert!(ss.paint(Stroke::face(8, 1.0, 1)).is_err());
        let skew = Stroke::ray(Point::origin(), Vector::new(0.0, 0.0, -2.0), 1.0, 1);
        assert!(ss.paint(skew).is_err());
    }

    #[test]
    fn undo_restores_previous_states() {
        let s = scene(synth::grid_mesh(6, 6, 1.0, 0.0, 0), 3.0);
        let mut ss = session(&s);
        let start = ss.labels().clone();
        ss.paint(down(1.0, 1.0, 2.0)).unwrap();
        let after_one = ss.labels().clone();
        ss.paint(Stroke::ray(Point::new(1.2, 1.1, 2.0), Vector::new(0.0, 0.0, -1.0), 2.0, 7)).unwrap();
        ss.undo().unwrap();
        assert_eq!(ss.labels(), &after_one);
        ss.undo().unwrap();
        assert_eq!(ss.labels(), &start);
        assert!(matches!(ss.undo(), Err(Error::EmptyUndo)));
        ss.paint(down(4.0, 4.0, 2.0)).unwrap();
        assert_eq!(ss.strokes().len(), 1);
        assert_eq!(ss.strokes()[0].seq, 1);
    }

    #[test]
    fn painting_one_chunk_leaves_the_other_unlabeled() {
        // Two chunks: x in [0,4) and [4,8) with cell size 4.
        let s = scene(synth::grid_mesh(8, 2, 1.0, 0.0, 0), 4.0);
        assert_eq!(s.chunks.chunks.len(), 2);
        let mut ss = session(&s);
        ss.paint(Stroke::face(0, 1e6, 1)).unwrap();
        let other: Vec<FaceId> = s.chunks.chunk_of_face(s.face_count() as u32 - 1).unwrap().face_ids.clone();
        assert_eq!(ss.unlabeled_elements(), other);
    }

    #[test]
    fn cross_chunk_reaches_neighbors() {
        let s = scene(synth::grid_mesh(8, 2, 1.0, 0.0, 0), 4.0);
        let cfg = SessionConfig { cross_chunk: true };
        let mut ss = Session::new(s.clone(), LabelTaxonomy::eigen13(), None, cfg).unwrap();
        ss.paint(Stroke::face(0, 1e6, 1)).unwrap();
        assert!(ss.unlabeled_elements().is_empty());
    }

    #[test]
    fn initial_map_must_match_scene() {
        let s = scene(synth::grid_mesh(2, 2, 1.0, 0.0, 0), 100.0);
        let wrong = LabelMap::unlabeled("other", ElementKind::Face, 8);
        assert!(Session::new(s.clone(), LabelTaxonomy::eigen13(), Some(&wrong), SessionConfig::default()).is_err());
        let short = LabelMap::unlabeled("s", ElementKind::Face, 3);
        assert!(Session::new(s.clone(), LabelTaxonomy::eigen13(), Some(&short), SessionConfig::default()).is_err());
    }

    #[test]
    fn half_area_progress() {
        // 2x1 grid of unit quads: faces 0,1 are the left quad.
        let s = scene(synth::grid_mesh(2, 1, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        ss.paint(Stroke::face(0, 0.4, 1)).unwrap();
        ss.paint(Stroke::face(1, 0.4, 1)).unwrap();
        assert_eq!(ss.labels().labeled_count(), 2);
        assert!((ss.progress() - 50.0).abs() < 1e-9);
    }

    fn random_strokes(s: &Scene, n: usize, seed: u64) -> Vec<Stroke> {
        let mut r = synth::rng(seed);
        let b = s.mesh.bounds();
        (0..n)
            .map(|i| {
                let label = r.random_range(0..12);
                let radius = r.random_range(0.05..3.0);
                if r.random_bool(0.5) {
                    Stroke::face(r.random_range(0..s.face_count() as u32), radius, label)
                } else {
                    let o = Point::new(r.random_range(b.min.x..b.max.x), r.random_range(b.min.y..b.max.y), b.max.z + 5.0);
                    let d = Vector::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), -1.0).normalize();
                    Stroke::ray(o, d, radius, label)
                }
                .by("tester")
                .at(i as u64)
            })
            .collect()
    }

    #[test]
    fn paint_matches_distance_filter_and_stays_in_chunk() {
        let s = scene(synth::random_terrain(30, 30, 40.0, 9), 8.0);
        assert!(s.chunks.chunks.len() > 4);
        let mut ss = session(&s);
        for st in random_strokes(&s, 150, 10) {
            let Ok((seed, p)) = ss.resolve(&st.target) else { continue };
            let before = ss.labels().clone();
            let got = ss.paint(st.clone()).unwrap();
            let chunk = s.chunks.chunk_of_face(seed).unwrap();
            let mut expect: Vec<FaceId> = (0..s.face_count() as u32)
                .filter(|&f| s.chunks.chunk_of_face(f).unwrap().id == chunk.id)
                .filter(|&f| f == seed || (s.mesh.face_centroid(f).unwrap() - p).norm() <= st.radius)
                .collect();
            expect.sort_unstable();
            assert_eq!(got, expect);
            for f in 0..s.face_count() {
                if s.chunks.chunk_of_face(f as u32).unwrap().id != chunk.id {
                    assert_eq!(ss.labels().get(f), before.get(f));
                }
            }
        }
    }

    #[test]
    fn log_round_trip_and_replay() {
        let s = scene(synth::random_terrain(20, 20, 30.0, 4), 8.0);
        let mut ss = session(&s);
        for st in random_strokes(&s, 100, 5) {
            let _ = ss.paint(st);
        }
        let mut buf = Vec::new();
        write_log(ss.strokes(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"seq\":1,"));
        let back = parse_log(&buf[..]).unwrap();
        assert_eq!(back, ss.strokes());
        let re = Session::replay(s.clone(), LabelTaxonomy::eigen13(), None, SessionConfig::default(), &back).unwrap();
        assert_eq!(re.labels(), ss.labels());
        assert_eq!(re.export().unwrap(), ss.export().unwrap());
    }

    #[test]
    fn record_json_shape() {
        let r = StrokeRecord {
            seq: 4,
            stroke: Stroke::face(12, 0.5, 2).by("ann").at(99),
        };
        let v: serde_json::Value = serde_json::from_str(&log_line(&r)).unwrap();
        assert_eq!(v["face"], 12);
        assert_eq!(v["seq"], 4);
        assert_eq!(v["annotator"], "ann");
        let ray = r#"{"seq":1,"annotator":"a","ray":{"origin":[0,0,1],"direction":[0,0,-1]},"radius":0.5,"label":3,"ts":0}"#;
        let p = parse_log(ray.as_bytes()).unwrap();
        assert!(matches!(p[0].stroke.target, StrokeTarget::Ray(_)));
        assert!(matches!(parse_log(&b"{\"seq\":1}\n"[..]), Err(Error::Parse { .. })));
    }

    #[test]
    fn eraser_and_monotonicity() {
        let s = scene(synth::grid_mesh(6, 6, 1.0, 0.0, 0), 100.0);
        let mut ss = session(&s);
        let mut unl = ss.unlabeled_elements().len();
        for (i, st) in random_strokes(&s, 60, 3).into_iter().enumerate() {
            let label = st.label;
            if ss.paint(st).is_err() {
                continue;
            }
            let now = ss.unlabeled_elements().len();
            if label == 0 {
                assert!(now >= unl, "stroke {i}");
            } else {
                assert!(now <= unl, "stroke {i}");
            }
            unl = now;
        }
    }

    #[test]
    fn cloud_session_exports_points() {
        let cloud = synth::random_cloud(4000, [0.0; 3], [1.0, 1.0, 0.3], 2);
        let cfg = PreprocessConfig {
            voxel_step: 0.2,
            ..Default::default()
        };
        let s = Arc::new(Scene::from_cloud("c", cloud, cfg).unwrap());
        let mut ss = session(&s);
        assert!(ss.export().unwrap().labels().iter().all(|&l| l == 0));
        ss.paint(Stroke::face(0, 1e6, 4)).unwrap();
        let out = ss.export().unwrap();
        assert_eq!(out.kind(), ElementKind::Point);
        let v = s.voxels.as_ref().unwrap();
        for (i, p) in v.cloud.points().iter().enumerate() {
            let occupied = v.grid.voxel_of(p).and_then(|x| v.grid.element_of(v.grid.linear(x))).is_some();
            assert_eq!(out.get(i) == 4, occupied);
        }
    }
}
