//! Linear shape subspaces over voxelized objects.
//!
//! Each category gets a PCA subspace (basis plus mean) learned from its
//! training shapes. The per-category bases and means are stacked and reduced
//! to one orthonormal basis `W` shared by every category; shapes are encoded
//! as `Wᵀo` and decoded as `Wc`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when merging subspaces.
pub const MERGE_RANK_TOLERANCE: f64 = 1e-8;

/// Entries with magnitude at or below this count as zero for the column sign
/// convention.
const SIGN_EPS: f64 = 1e-12;

/// Binary occupancy grid. Linear index is `(ix * n + iy) * o + iz`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    occupancy: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], occupancy: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("voxel grid dims must be positive"));
        }
        Error::check_len(dims[0] * dims[1] * dims[2], occupancy.len())?;
        if occupancy.iter().any(|&v| v > 1) {
            return Err(Error::invalid("voxel occupancy must be 0 or 1"));
        }
        Ok(Self { dims, occupancy })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        let len = dims[0] * dims[1] * dims[2];
        assert!(len > 0, "voxel grid dims must be positive");
        Self {
            dims,
            occupancy: vec![0; len],
        }
    }

    pub fn cube(side: usize) -> Self {
        Self::empty([side; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.occupancy[self.index(ix, iy, iz)] != 0
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, occupied: bool) {
        let i = self.index(ix, iy, iz);
        self.occupancy[i] = occupied as u8;
    }

    /// Marks every voxel in the half-open index box `lo..hi` (clamped to the
    /// grid) as occupied.
    pub fn fill_box(&mut self, lo: [usize; 3], hi: [usize; 3]) {
        let hi = [
            hi[0].min(self.dims[0]),
            hi[1].min(self.dims[1]),
            hi[2].min(self.dims[2]),
        ];
        for ix in lo[0]..hi[0] {
            for iy in lo[1]..hi[1] {
                for iz in lo[2]..hi[2] {
                    self.set(ix, iy, iz, true);
                }
            }
        }
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_shape_vector(&self) -> ShapeVector {
        ShapeVector(self.occupancy.iter().map(|&v| v as f64).collect())
    }
}

/// A voxel object flattened to `d = m·n·o` reals, same layout as [`VoxelGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVector(pub Vec<f64>);

impl ShapeVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Low-dimensional coordinates of a shape in a [`SubspaceModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(pub Vec<f64>);

impl Coefficients {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// How many principal directions a class subspace keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retained {
    Dim(usize),
    /// Smallest dimension whose principal directions explain at least this
    /// fraction of the total variance.
    VarianceFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubspace {
    pub basis: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub category_id: u32,
    /// Singular values of the centered data matrix, descending, all of them.
    pub singular_values: Vec<f64>,
}

impl ClassSubspace {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn retained(&self) -> usize {
        self.basis.ncols()
    }
}

/// Merged orthonormal basis shared by all categories.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    basis: DMatrix<f64>,
    category_means: Vec<DVector<f64>>,
    category_ids: Vec<u32>,
    dims: [usize; 3],
}

impl SubspaceModel {
    pub(crate) fn from_parts(
        basis: DMatrix<f64>,
        category_means: Vec<DVector<f64>>,
        category_ids: Vec<u32>,
        dims: [usize; 3],
    ) -> Result<Self> {
        let d = basis.nrows();
        Error::check_len(d, dims[0] * dims[1] * dims[2])?;
        Error::check_len(category_means.len(), category_ids.len())?;
        for m in &category_means {
            Error::check_len(d, m.len())?;
        }
        Ok(Self {
            basis,
            category_means,
            category_ids,
            dims,
        })
    }

    /// Attaches the voxel grid shape the flattened vectors came from.
    pub fn with_grid_dims(mut self, dims: [usize; 3]) -> Result<Self> {
        Error::check_len(self.dim(), dims[0] * dims[1] * dims[2])?;
        self.dims = dims;
        Ok(self)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn category_means(&self) -> &[DVector<f64>] {
        &self.category_means
    }

    pub fn category_ids(&self) -> &[u32] {
        &self.category_ids
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Retained dimension `k`.
    pub fn retained_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Rounds the basis and means to `f32`, the precision they are stored
    /// at on disk.
    pub fn round_to_f32(&mut self) {
        for v in self.basis.iter_mut() {
            *v = *v as f32 as f64;
        }
        for m in &mut self.category_means {
            for v in m.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Flips each column so its first non-negligible entry is positive.
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if let Some(&first) = col.iter().find(|v| v.abs() > SIGN_EPS) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Thin SVD with singular values sorted descending. Returns (U, σ).
fn sorted_left_singular(x: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite matrix entry".into()));
    }
    let svd = x.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::NumericFailure("svd did not produce U".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    Ok((u, sigma))
}

/// PCA subspace of one category: the sample mean and the top principal
/// directions of the mean-centered shapes.
pub fn learn_class_subspace(
    shapes: &[ShapeVector],
    retained: Retained,
    category_id: u32,
) -> Result<ClassSubspace> {
    if shapes.len() < 2 {
        return Err(Error::InsufficientShapes(shapes.len()));
    }
    let d = shapes[0].len();
    if d == 0 {
        return Err(Error::Empty("shape vector"));
    }
    for s in shapes {
        Error::check_len(d, s.len())?;
    }
    let count = shapes.len();
    let max_k = (count - 1).min(d);

    let mut mean = DVector::zeros(d);
    for s in shapes {
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v;
        }
    }
    mean /= count as f64;

    let centered = DMatrix::from_fn(d, count, |r, c| shapes[c].0[r] - mean[r]);
    let (u, sigma) = sorted_left_singular(centered)?;

    let k = match retained {
        Retained::Dim(k) => {
            if k == 0 || k > max_k {
                return Err(Error::invalid(format!(
                    "retained dimension {k} outside 1..={max_k}"
                )));
            }
            k
        }
        Retained::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!(
                    "variance fraction {f} outside (0, 1]"
                )));
            }
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            if total == 0.0 {
                1
            } else {
                let mut acc = 0.0;
                let mut k = max_k;
                for (i, s) in sigma.iter().enumerate() {
                    acc += s * s;
                    if acc >= f * total {
                        k = i + 1;
                        break;
                    }
                }
                k.min(max_k)
            }
        }
    };

    let mut basis = u.columns(0, k).into_owned();
    fix_column_signs(&mut basis);
    Ok(ClassSubspace {
        basis,
        mean,
        category_id,
        singular_values: sigma,
    })
}

/// Stacks every class basis and mean and keeps the left singular vectors
/// whose singular value is at least `MERGE_RANK_TOLERANCE` times the largest.
pub fn merge_subspaces(subspaces: &[ClassSubspace]) -> Result<SubspaceModel> {
    let first = subspaces.first().ok_or(Error::Empty("subspace list"))?;
    let d = first.dim();
    for s in subspaces {
        Error::check_len(d, s.dim())?;
        Error::check_len(d, s.basis.nrows())?;
    }
    let cols: usize = subspaces.iter().map(|s| s.retained() + 1).sum();
    let mut stacked = DMatrix::zeros(d, cols);
    let mut c = 0;
    for s in subspaces {
        stacked.columns_mut(c, s.retained()).copy_from(&s.basis);
        c += s.retained();
    }
    for s in subspaces {
        stacked.set_column(c, &s.mean);
        c += 1;
    }

    let (u, sigma) = sorted_left_singular(stacked)?;
    let largest = sigma.first().copied().unwrap_or(0.0);
    let rank = if largest > 0.0 {
        sigma
            .iter()
            .take_while(|&&s| s >= MERGE_RANK_TOLERANCE * largest)
            .count()
    } else {
        0
    };
    if rank == 0 {
        return Err(Error::NumericFailure("merged subspace has rank 0".into()));
    }
    let mut basis = u.columns(0, rank).into_owned();
    fix_column_signs(&mut basis);

    SubspaceModel::from_parts(
        basis,
        subspaces.iter().map(|s| s.mean.clone()).collect(),
        subspaces.iter().map(|s| s.category_id).collect(),
        [d, 1, 1],
    )
}

/// `o' = Wᵀo`. No mean subtraction: the merged basis spans the means.
pub fn project(o: &ShapeVector, model: &SubspaceModel) -> Result<Coefficients> {
    Error::check_len(model.dim(), o.len())?;
    let v = DVector::from_column_slice(o.as_slice());
    let c = model.basis.tr_mul(&v);
    Ok(Coefficients(c.as_slice().to_vec()))
}

/// `ô = Wc`.
pub fn reconstruct(c: &Coefficients, model: &SubspaceModel) -> Result<ShapeVector> {
    Error::check_len(model.retained_dim(), c.len())?;
    let v = DVector::from_column_slice(c.as_slice());
    let o = &model.basis * v;
    Ok(ShapeVector(o.as_slice().to_vec()))
}

/// Occupied where `value >= threshold`.
pub fn binarize(v: &ShapeVector, threshold: f64, dims: [usize; 3]) -> Result<VoxelGrid> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    VoxelGrid::new(
        dims,
        v.as_slice().iter().map(|&x| (x >= threshold) as u8).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_shapes(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<ShapeVector> {
        (0..count)
            .map(|_| ShapeVector((0..d).map(|_| rng.random::<f64>()).collect()))
            .collect()
    }

    fn orthonormality_error(w: &DMatrix<f64>) -> f64 {
        let g = w.tr_mul(w);
        (g - DMatrix::identity(w.ncols(), w.ncols())).amax()
    }

    #[test]
    fn two_point_pca_axis() {
        let shapes = vec![ShapeVector(vec![0.0, 0.0]), ShapeVector(vec![2.0, 2.0])];
        let sub = learn_class_subspace(&shapes, Retained::Dim(1), 0).unwrap();
        assert!((sub.mean[0] - 1.0).abs() < 1e-12 && (sub.mean[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // Sign convention makes the first entry positive.
        assert!((sub.basis[(0, 0)] - h).abs() < 1e-12);
        assert!((sub.basis[(1, 0)] - h).abs() < 1e-12);
    }

    #[test]
    fn identical_shapes_have_orthonormal_basis_and_zero_error() {
        let s = ShapeVector(vec![0.3, 0.7, 1.0, 0.0, 0.5]);
        let shapes = vec![s.clone(), s.clone(), s.clone(), s.clone()];
        let sub = learn_class_subspace(&shapes, Retained::Dim(3), 0).unwrap();
        assert!(orthonormality_error(&sub.basis) < 1e-9);
        for (m, v) in sub.mean.iter().zip(s.as_slice()) {
            assert!((m - v).abs() < 1e-12);
        }
        let frac = learn_class_subspace(&shapes, Retained::VarianceFraction(0.9), 0).unwrap();
        assert_eq!(frac.retained(), 1);
    }

    #[test]
    fn errors_on_bad_input() {
        let one = vec![ShapeVector(vec![1.0, 2.0])];
        assert!(matches!(
            learn_class_subspace(&one, Retained::Dim(1), 0),
            Err(Error::InsufficientShapes(1))
        ));
        let mixed = vec![ShapeVector(vec![1.0, 2.0]), ShapeVector(vec![1.0])];
        assert!(matches!(
            learn_class_subspace(&mixed, Retained::Dim(1), 0),
            Err(Error::DimensionMismatch { .. })
        ));
        let two = vec![ShapeVector(vec![1.0, 2.0]), ShapeVector(vec![0.0, 1.0])];
        assert!(learn_class_subspace(&two, Retained::Dim(2), 0).is_err());
        assert!(matches!(merge_subspaces(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn truncated_reconstruction_error_matches_discarded_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shapes = random_shapes(&mut rng, 10, 27);
        let sub = learn_class_subspace(&shapes, Retained::Dim(5), 0).unwrap();

        // Oracle: eigen-decomposition of the scatter matrix, independent of
        // the SVD path. Discarded eigenvalues are the squared singular values.
        let d = 27;
        let mean = DVector::from_fn(d, |r, _| {
            shapes.iter().map(|s| s.0[r]).sum::<f64>() / 10.0
        });
        let x = DMatrix::from_fn(d, 10, |r, c| shapes[c].0[r] - mean[r]);
        let scatter = &x * x.transpose();
        let mut eig: Vec<f64> = scatter.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let discarded: f64 = eig[5..].iter().sum::<f64>() / 10.0;

        let mut err = 0.0;
        for s in &shapes {
            let c = DVector::from_column_slice(s.as_slice()) - &sub.mean;
            let rec = &sub.basis * sub.basis.tr_mul(&c);
            err += (rec - c).norm_squared();
        }
        err /= 10.0;
        assert!((err - discarded).abs() < 1e-9, "{err} vs {discarded}");
    }

    #[test]
    fn single_category_merge_spans_basis_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shapes = random_shapes(&mut rng, 8, 20);
        let sub = learn_class_subspace(&shapes, Retained::Dim(4), 7).unwrap();
        let model = merge_subspaces(std::slice::from_ref(&sub)).unwrap();
        assert!(model.retained_dim() <= 5);
        assert_eq!(model.category_ids(), &[7]);
        let w = model.basis();
        for v in sub.basis.column_iter().map(|c| c.into_owned()).chain([sub.mean.clone()]) {
            let back = w * w.tr_mul(&v);
            assert!((back - &v).norm() <= 1e-6 * v.norm().max(1.0));
        }
    }

    #[test]
    fn duplicate_subspaces_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shapes = random_shapes(&mut rng, 8, 20);
        let sub = learn_class_subspace(&shapes, Retained::Dim(4), 0).unwrap();
        let one = merge_subspaces(std::slice::from_ref(&sub)).unwrap();
        let two = merge_subspaces(&[sub.clone(), sub]).unwrap();
        assert_eq!(one.retained_dim(), two.retained_dim());
    }

    #[test]
    fn projection_of_zero_and_basis_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let subs: Vec<_> = (0..2)
            .map(|i| learn_class_subspace(&random_shapes(&mut rng, 6, 27), Retained::Dim(3), i).unwrap())
            .collect();
        let model = merge_subspaces(&subs).unwrap();
        let k = model.retained_dim();
        let zero = project(&ShapeVector(vec![0.0; 27]), &model).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        for j in 0..k {
            let col = ShapeVector(model.basis().column(j).iter().copied().collect());
            let c = project(&col, &model).unwrap();
            for (i, v) in c.as_slice().iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9);
            }
        }
        let rec = reconstruct(&Coefficients::zeros(k), &model).unwrap();
        assert!(rec.as_slice().iter().all(|&v| v == 0.0));
        assert!(project(&ShapeVector(vec![0.0; 26]), &model).is_err());
        assert!(reconstruct(&Coefficients::zeros(k + 1), &model).is_err());
    }

    #[test]
    fn reconstruct_of_project_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let subs: Vec<_> = (0..2)
            .map(|i| learn_class_subspace(&random_shapes(&mut rng, 6, 27), Retained::Dim(3), i).unwrap())
            .collect();
        let model = merge_subspaces(&subs).unwrap();
        let w = model.basis();
        let o: Vec<f64> = (0..27).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let got = reconstruct(&project(&ShapeVector(o.clone()), &model).unwrap(), &model).unwrap();
        // Dense oracle: explicit loops over P = W Wᵀ.
        for r in 0..27 {
            let mut want = 0.0;
            for c in 0..27 {
                let mut p = 0.0;
                for j in 0..w.ncols() {
                    p += w[(r, j)] * w[(c, j)];
                }
                want += p * o[c];
            }
            assert!((got.0[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn binarize_matches_scalar_loop() {
        let dims = [2, 3, 4];
        let hi = binarize(&ShapeVector(vec![0.9; 24]), 0.5, dims).unwrap();
        assert_eq!(hi.occupied_count(), 24);
        let lo = binarize(&ShapeVector(vec![0.1; 24]), 0.5, dims).unwrap();
        assert_eq!(lo.occupied_count(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
        let g = binarize(&ShapeVector(v.clone()), 0.5, dims).unwrap();
        let mut i = 0;
        for ix in 0..2 {
            for iy in 0..3 {
                for iz in 0..4 {
                    assert_eq!(g.get(ix, iy, iz), v[i] >= 0.5);
                    i += 1;
                }
            }
        }
        assert!(binarize(&ShapeVector(v), 1.0, dims).is_err());
    }

    #[test]
    fn learning_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shapes = random_shapes(&mut rng, 7, 30);
        let a = learn_class_subspace(&shapes, Retained::Dim(4), 0).unwrap();
        let b = learn_class_subspace(&shapes, Retained::Dim(4), 0).unwrap();
        assert_eq!(a, b);
        for col in a.basis.column_iter() {
            let first = col.iter().find(|v| v.abs() > SIGN_EPS).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn voxel_grid_validation() {
        assert!(VoxelGrid::new([2, 2, 2], vec![0; 7]).is_err());
        assert!(VoxelGrid::new([2, 2, 2], vec![2; 8]).is_err());
        let mut g = VoxelGrid::cube(4);
        g.fill_box([1, 1, 1], [3, 9, 2]);
        assert_eq!(g.occupied_count(), 2 * 3);
        assert_eq!(g.index(1, 2, 3), (4 + 2) * 4 + 3);
    }
}
