//! Procedural voxel shape families and labeled depth-view datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{render_depth, sample_pose, CameraIntrinsics, DepthImage, PoseMode, RotVec};
use crate::io::{self, ManifestRecord};
use crate::shapespace::{learn_class_subspace, merge_subspaces, project, Retained, ShapeVector, SubspaceModel, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Body with a raised cabin set toward the back.
    Boxcar,
    /// Fuselage, wings and a tail fin.
    Winged,
    /// Thin plate with a bump on one corner.
    Slab,
    /// Base plate with two blocks on opposite corners; unchanged by a half
    /// turn about the vertical axis.
    SymmetricTwin,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Boxcar, Family::Winged, Family::Slab, Family::SymmetricTwin];

    pub fn name(self) -> &'static str {
        match self {
            Family::Boxcar => "boxcar",
            Family::Winged => "winged",
            Family::Slab => "slab",
            Family::SymmetricTwin => "symmetric-twin",
        }
    }

    /// Default ranges of the shape parameters, as fractions of the grid side.
    pub fn default_ranges(self) -> BTreeMap<String, [f64; 2]> {
        let pairs: &[(&str, [f64; 2])] = match self {
            Family::Boxcar => &[
                ("length", [0.7, 0.95]),
                ("width", [0.35, 0.55]),
                ("height", [0.2, 0.32]),
                ("cabin_length", [0.25, 0.45]),
                ("cabin_height", [0.15, 0.25]),
            ],
            Family::Winged => &[
                ("length", [0.75, 0.95]),
                ("body", [0.12, 0.2]),
                ("span", [0.6, 0.95]),
                ("chord", [0.15, 0.3]),
                ("fin_height", [0.15, 0.3]),
            ],
            Family::Slab => &[
                ("length", [0.6, 0.95]),
                ("width", [0.4, 0.8]),
                ("thickness", [0.1, 0.2]),
                ("bump", [0.15, 0.3]),
            ],
            Family::SymmetricTwin => &[
                ("length", [0.55, 0.9]),
                ("width", [0.5, 0.9]),
                ("thickness", [0.1, 0.2]),
                ("block", [0.15, 0.3]),
                ("block_height", [0.2, 0.45]),
            ],
        };
        pairs.iter().map(|(k, r)| (k.to_string(), *r)).collect()
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFamilyConfig {
    pub family: Family,
    /// Training objects.
    pub count: usize,
    pub views_per_object: usize,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    /// Overrides of [`Family::default_ranges`].
    #[serde(default)]
    pub ranges: BTreeMap<String, [f64; 2]>,
    /// Replaces the dataset seed for this family.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_grid_side() -> usize {
    16
}

impl SyntheticFamilyConfig {
    pub fn new(family: Family, count: usize, views_per_object: usize) -> Self {
        Self {
            family,
            count,
            views_per_object,
            grid_side: default_grid_side(),
            ranges: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("family count must be at least 1"));
        }
        if ![8, 16, 32, 64].contains(&self.grid_side) {
            return Err(Error::invalid(format!("grid_side {} not in {{8,16,32,64}}", self.grid_side)));
        }
        let defaults = self.family.default_ranges();
        for (k, r) in &self.ranges {
            if !defaults.contains_key(k) {
                return Err(Error::invalid(format!("{} has no parameter '{k}'", self.family.name())));
            }
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(Error::invalid(format!("range for '{k}' must satisfy 0 < lo <= hi <= 1")));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> BTreeMap<String, [f64; 2]> {
        let mut r = self.family.default_ranges();
        r.extend(self.ranges.clone());
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub families: Vec<SyntheticFamilyConfig>,
    pub test_count: usize,
    pub test_views_per_object: usize,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    /// Principal directions kept per family before merging.
    #[serde(default = "default_retained")]
    pub retained_per_family: usize,
}

fn default_retained() -> usize {
    6
}

impl Default for DatasetConfig {
    /// Three families, 60 training objects with 30 views each and 15 test
    /// objects with 20 views each, on 16³ grids.
    fn default() -> Self {
        Self {
            families: [Family::Boxcar, Family::Winged, Family::SymmetricTwin]
                .into_iter()
                .map(|f| SyntheticFamilyConfig::new(f, 60, 30))
                .collect(),
            test_count: 15,
            test_views_per_object: 20,
            camera: CameraIntrinsics::default(),
            retained_per_family: default_retained(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::invalid("dataset needs at least one family"));
        }
        for f in &self.families {
            f.validate()?;
            if f.grid_side != self.families[0].grid_side {
                return Err(Error::invalid("all families must share one grid_side"));
            }
            if f.count < 2 {
                return Err(Error::InsufficientShapes(f.count));
            }
        }
        if self.retained_per_family == 0 {
            return Err(Error::invalid("retained_per_family must be positive"));
        }
        self.camera.validate()
    }
}

/// Voxel count for a fraction of the grid side, at least one.
fn extent(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).clamp(1, n)
}

/// Start index that centers `len` cells in `n`.
fn centered(len: usize, n: usize) -> usize {
    (n - len) / 2
}

/// One object of `family` with parameters drawn from `ranges`. The grid's
/// `y` axis is the object's vertical axis.
pub fn generate_object<R: Rng + ?Sized>(
    family: Family,
    grid_side: usize,
    ranges: &BTreeMap<String, [f64; 2]>,
    rng: &mut R,
) -> VoxelGrid {
    let n = grid_side;
    let mut draw = |name: &str| {
        let [lo, hi] = ranges[name];
        extent(if lo < hi { rng.random_range(lo..=hi) } else { lo }, n)
    };
    let mut g = VoxelGrid::cube(n);
    match family {
        Family::Boxcar => {
            let (l, w, h) = (draw("length"), draw("width"), draw("height"));
            let (cl, ch) = (draw("cabin_length").min(l), draw("cabin_height"));
            let total = (h + ch).min(n);
            let (x0, z0, y0) = (centered(l, n), centered(w, n), centered(total, n));
            g.fill_box([x0, y0, z0], [x0 + l, y0 + h, z0 + w]);
            // Cabin flush with the back end, slightly narrower than the body.
            let inset = w / 6;
            g.fill_box([x0, y0 + h, z0 + inset], [x0 + cl, y0 + total, z0 + w - inset]);
        }
        Family::Winged => {
            let (l, b, span, chord, fin) = (draw("length"), draw("body"), draw("span"), draw("chord"), draw("fin_height"));
            let (x0, y0, z0) = (centered(l, n), centered(b, n), centered(b, n));
            g.fill_box([x0, y0, z0], [x0 + l, y0 + b, z0 + b]);
            // Wings ahead of the middle, one or two cells thick.
            let wx = x0 + l / 2;
            let wt = (b / 2).max(1);
            let sz = centered(span, n);
            g.fill_box([wx, y0, sz], [wx + chord, y0 + wt, sz + span]);
            // Tail fin at the back, standing up from the top of the body.
            let fin_chord = (chord / 2).max(1);
            g.fill_box([x0, y0 + b, z0 + b / 2], [x0 + fin_chord, y0 + b + fin, z0 + b / 2 + 1]);
        }
        Family::Slab => {
            let (l, w, t, bump) = (draw("length"), draw("width"), draw("thickness"), draw("bump"));
            let (x0, y0, z0) = (centered(l, n), centered(2 * t, n), centered(w, n));
            g.fill_box([x0, y0, z0], [x0 + l, y0 + t, z0 + w]);
            let (bx, bz) = (bump.min(l), bump.min(w));
            g.fill_box([x0 + l - bx, y0 + t, z0], [x0 + l, y0 + 2 * t, z0 + bz]);
        }
        Family::SymmetricTwin => {
            let (l, w, t, blk, bh) = (draw("length"), draw("width"), draw("thickness"), draw("block"), draw("block_height"));
            let total = (t + bh).min(n);
            let (x0, y0, z0) = (centered(l, n), centered(total, n), centered(w, n));
            g.fill_box([x0, y0, z0], [x0 + l, y0 + t, z0 + w]);
            let (bx, bz) = (blk.min(l), blk.min(w));
            g.fill_box([x0 + l - bx, y0 + t, z0 + w - bz], [x0 + l, y0 + total, z0 + w]);
            symmetrize_half_turn(&mut g);
        }
    }
    g
}

/// Union of the grid with its half-turn about the vertical axis,
/// `(ix, iz) → (N−1−ix, N−1−iz)`.
pub fn symmetrize_half_turn(g: &mut VoxelGrid) {
    let [nx, ny, nz] = g.dims();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                if g.get(ix, iy, iz) {
                    g.set(nx - 1 - ix, iy, nz - 1 - iz, true);
                }
            }
        }
    }
}

/// A rendered view of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub object: usize,
    pub pose: RotVec,
    pub depth: DepthImage,
}

/// Objects of one split with their category ids, and the rendered views.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub objects: Vec<(VoxelGrid, u32)>,
    pub views: Vec<View>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

fn family_rng(seed: u64, family_index: usize, split: SplitKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 32) | family_index as u64);
    rng
}

/// Generates `count` objects per family with `views` training-view renders
/// each. Category ids are family positions in `families`.
pub fn generate_split(
    families: &[(SyntheticFamilyConfig, usize, usize)],
    cam: &CameraIntrinsics,
    seed: u64,
    split: SplitKind,
) -> Result<Split> {
    let mut objects = Vec::new();
    let mut views = Vec::new();
    for (fi, (fc, count, n_views)) in families.iter().enumerate() {
        fc.validate()?;
        let mut rng = family_rng(fc.seed.unwrap_or(seed), fi, split);
        let ranges = fc.ranges();
        for _ in 0..*count {
            let grid = generate_object(fc.family, fc.grid_side, &ranges, &mut rng);
            for _ in 0..*n_views {
                let pose = sample_pose(PoseMode::TrainingView, &mut rng);
                let depth = render_depth(&grid, &pose, cam)?;
                views.push(View { object: objects.len(), pose, depth });
            }
            objects.push((grid, fi as u32));
        }
    }
    Ok(Split { objects, views })
}

/// Per-family PCA on the training objects, merged into one basis and
/// rounded to storage precision.
pub fn learn_subspace(train: &Split, n_families: usize, retained: usize) -> Result<SubspaceModel> {
    let dims = train.objects.first().ok_or(Error::Empty("training objects"))?.0.dims();
    let mut classes = Vec::with_capacity(n_families);
    for fi in 0..n_families as u32 {
        let shapes: Vec<ShapeVector> = train
            .objects
            .iter()
            .filter(|(_, c)| *c == fi)
            .map(|(g, _)| g.to_shape_vector())
            .collect();
        let k = retained.min(shapes.len().saturating_sub(1)).max(1);
        classes.push(learn_class_subspace(&shapes, Retained::Dim(k), fi)?);
    }
    let mut model = merge_subspaces(&classes)?.with_grid_dims(dims)?;
    model.round_to_f32();
    Ok(model)
}

/// Writes voxel files, depth files and `manifest.jsonl` for a split, with
/// coefficients projected onto `subspace`. Returns the manifest records.
pub fn write_split(dir: &Path, split: &Split, subspace: &SubspaceModel) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir.join("voxels"))?;
    fs::create_dir_all(dir.join("depth"))?;
    let mut coeffs = Vec::with_capacity(split.objects.len());
    for (i, (grid, _)) in split.objects.iter().enumerate() {
        io::write_voxels(&dir.join(voxel_name(i)), grid)?;
        coeffs.push(project(&grid.to_shape_vector(), subspace)?);
    }
    let mut records = Vec::with_capacity(split.views.len());
    for (i, view) in split.views.iter().enumerate() {
        let depth_path = format!("depth/view_{i:05}.dpm");
        io::write_depth(&dir.join(&depth_path), &view.depth)?;
        records.push(ManifestRecord {
            depth_path,
            pose: view.pose.0,
            shape_coeffs: coeffs[view.object].0.clone(),
            category: split.objects[view.object].1,
            voxel_path: Some(voxel_name(view.object)),
        });
    }
    io::write_manifest(&dir.join(MANIFEST_NAME), &records)?;
    Ok(records)
}

fn voxel_name(i: usize) -> String {
    format!("voxels/object_{i:04}.vxg")
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const SUBSPACE_DIR: &str = "subspace";

/// Everything `gen_dataset` wrote, as held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub subspace: SubspaceModel,
    pub train: Vec<LabeledView>,
    pub test: Vec<LabeledView>,
}

/// A manifest record with its depth image loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub record: ManifestRecord,
    pub depth: DepthImage,
}

fn labeled(records: Vec<ManifestRecord>, split: &Split) -> Vec<LabeledView> {
    records
        .into_iter()
        .zip(&split.views)
        .map(|(record, v)| LabeledView { record, depth: v.depth.clone() })
        .collect()
}

/// Generates train and test splits, learns the subspace from the training
/// objects and writes `subspace/`, `train/` and `test/` under `out`.
pub fn gen_dataset(cfg: &DatasetConfig, out: &Path, seed: u64) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let train_plan: Vec<_> = cfg.families.iter().map(|f| (f.clone(), f.count, f.views_per_object)).collect();
    let test_plan: Vec<_> = cfg
        .families
        .iter()
        .map(|f| (f.clone(), cfg.test_count, cfg.test_views_per_object))
        .collect();
    let train = generate_split(&train_plan, &cfg.camera, seed, SplitKind::Train)?;
    let test = generate_split(&test_plan, &cfg.camera, seed, SplitKind::Test)?;
    let subspace = learn_subspace(&train, cfg.families.len(), cfg.retained_per_family)?;

    fs::create_dir_all(out)?;
    io::save_subspace(&out.join(SUBSPACE_DIR), &subspace)?;
    let train_records = write_split(&out.join(SplitKind::Train.dir_name()), &train, &subspace)?;
    let test_records = write_split(&out.join(SplitKind::Test.dir_name()), &test, &subspace)?;
    let mut config_text = serde_json::to_string_pretty(cfg)?;
    config_text.push('\n');
    fs::write(out.join("config.json"), config_text)?;
    Ok(GeneratedDataset {
        subspace,
        train: labeled(train_records, &train),
        test: labeled(test_records, &test),
    })
}

/// Loads a split directory's manifest and depth images.
pub fn load_split(dir: &Path) -> Result<Vec<LabeledView>> {
    let manifest = dir.join(MANIFEST_NAME);
    io::read_manifest(&manifest)?
        .into_iter()
        .map(|record| {
            let depth = io::read_depth(&io::resolve(&manifest, &record.depth_path))?;
            Ok(LabeledView { record, depth })
        })
        .collect()
}

/// Reads back a directory written by [`gen_dataset`].
pub fn load_dataset(dir: &Path) -> Result<GeneratedDataset> {
    Ok(GeneratedDataset {
        subspace: io::load_subspace(&dir.join(SUBSPACE_DIR))?,
        train: load_split(&dir.join(SplitKind::Train.dir_name()))?,
        test: load_split(&dir.join(SplitKind::Test.dir_name()))?,
    })
}

pub fn split_dir(data: &Path, split: SplitKind) -> PathBuf {
    data.join(split.dir_name())
}
