//! Hyper-boxes, matched-group membership, and the error/variance
//! diagnostics both solvers optimize against.

use thiserror::Error;

use crate::data::Dataset;
use crate::predictor::Predictions;

#[derive(Debug, Error)]
pub enum BoxError {
    #[error("axis {axis}: lower bound {lower} exceeds upper bound {upper}")]
    InvertedBounds { axis: usize, lower: f64, upper: f64 },
    #[error("bounds have {lower} lower and {upper} upper entries")]
    MismatchedLengths { lower: usize, upper: usize },
    #[error("axis {axis}: owner coordinate {x} lies outside [{lower}, {upper}]")]
    OwnerOutside {
        axis: usize,
        x: f64,
        lower: f64,
        upper: f64,
    },
    #[error("box contains no units")]
    EmptyGroup,
}

/// Closed axis-aligned box [a₁,b₁]×…×[a_p,b_p] owned by one query unit.
/// Units exactly on a bound are inside.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    owner: usize,
}

impl HyperBox {
    pub fn new(owner: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoxError> {
        if lower.len() != upper.len() {
            return Err(BoxError::MismatchedLengths {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (axis, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if a > b {
                return Err(BoxError::InvertedBounds { axis, lower: a, upper: b });
            }
        }
        Ok(HyperBox { lower, upper, owner })
    }

    /// The zero-volume box holding exactly the owner's coordinates — the
    /// fast solver's starting point.
    pub fn degenerate_at(data: &Dataset, owner: usize) -> Self {
        let x = data.row(owner).to_vec();
        HyperBox {
            lower: x.clone(),
            upper: x,
            owner,
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn p(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        assert_eq!(
            x.len(),
            self.p(),
            "point dimension {} does not match box dimension {}",
            x.len(),
            self.p()
        );
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(x)
            .all(|((&a, &b), &v)| a <= v && v <= b)
    }

    /// New box grown along `axis` just enough to cover `value`. Other axes
    /// are untouched; growing toward an interior value is a no-op.
    pub fn expanded_to(&self, axis: usize, value: f64) -> HyperBox {
        let mut out = self.clone();
        out.lower[axis] = out.lower[axis].min(value);
        out.upper[axis] = out.upper[axis].max(value);
        out
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.p()).map(|j| self.width(j)).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.p()).map(|j| self.width(j)).product()
    }

    /// All units of `data` inside the box.
    pub fn mmg(&self, data: &Dataset) -> MatchedGroup {
        assert_eq!(
            data.p(),
            self.p(),
            "data dimension {} does not match box dimension {}",
            data.p(),
            self.p()
        );
        let members: Vec<usize> = (0..data.n())
            .filter(|&k| self.contains(data.row(k)))
            .collect();
        MatchedGroup::from_sorted_members(members, data)
    }

    /// Shrinks bounds to the bounding box of `members` — the tightest box
    /// with identical membership. Bounds land on data coordinates.
    pub fn tightened(&self, data: &Dataset, members: &[usize]) -> HyperBox {
        assert!(!members.is_empty());
        let p = self.p();
        let mut lower = vec![f64::INFINITY; p];
        let mut upper = vec![f64::NEG_INFINITY; p];
        for &k in members {
            for (j, &v) in data.row(k).iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        HyperBox {
            lower,
            upper,
            owner: self.owner,
        }
    }
}

/// Units contained in one owner's box, with per-arm counts. Member indices
/// are kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedGroup {
    members: Vec<usize>,
    n_treated: usize,
    n_control: usize,
}

impl MatchedGroup {
    pub fn from_members(mut members: Vec<usize>, data: &Dataset) -> Self {
        members.sort_unstable();
        members.dedup();
        Self::from_sorted_members(members, data)
    }

    fn from_sorted_members(members: Vec<usize>, data: &Dataset) -> Self {
        let n_treated = members.iter().filter(|&&k| data.is_treated(k)).count();
        MatchedGroup {
            n_control: members.len() - n_treated,
            members,
            n_treated,
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.members.binary_search(&unit).is_ok()
    }

    pub fn treated_members<'a>(&'a self, data: &'a Dataset) -> impl Iterator<Item = usize> + 'a {
        self.members.iter().copied().filter(|&k| data.is_treated(k))
    }

    pub fn control_members<'a>(&'a self, data: &'a Dataset) -> impl Iterator<Item = usize> + 'a {
        self.members
            .iter()
            .copied()
            .filter(|&k| !data.is_treated(k))
    }
}

fn member_means(
    bbox: &HyperBox,
    preds: &Predictions,
    data: &Dataset,
) -> Result<(MatchedGroup, f64, f64), BoxError> {
    let group = bbox.mmg(data);
    if group.is_empty() {
        return Err(BoxError::EmptyGroup);
    }
    let n = group.len() as f64;
    let mean0 = group.members().iter().map(|&k| preds.f0(k)).sum::<f64>() / n;
    let mean1 = group.members().iter().map(|&k| preds.f1(k)).sum::<f64>() / n;
    Ok((group, mean0, mean1))
}

/// |f̂₀(xᵢ) − mean f̂₀ over members| + |f̂₁(xᵢ) − mean f̂₁ over members|:
/// how far the box's average predicted outcomes drift from the owner's.
pub fn err_diagnostic(
    bbox: &HyperBox,
    preds: &Predictions,
    data: &Dataset,
) -> Result<f64, BoxError> {
    let (_, mean0, mean1) = member_means(bbox, preds, data)?;
    let i = bbox.owner();
    Ok((preds.f0(i) - mean0).abs() + (preds.f1(i) - mean1).abs())
}

/// Population variance (divide by group size) of member predictions under
/// f̂₀ plus the same under f̂₁.
pub fn var_diagnostic(
    bbox: &HyperBox,
    preds: &Predictions,
    data: &Dataset,
) -> Result<f64, BoxError> {
    let (group, mean0, mean1) = member_means(bbox, preds, data)?;
    let n = group.len() as f64;
    let mut v0 = 0.0;
    let mut v1 = 0.0;
    for &k in group.members() {
        v0 += (preds.f0(k) - mean0).powi(2);
        v1 += (preds.f1(k) - mean1).powi(2);
    }
    Ok(v0 / n + v1 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnMeta;
    use proptest::prelude::*;

    fn line_dataset(xs: &[f64], t: &[u8]) -> Dataset {
        let ids = (0..xs.len()).map(|i| format!("u{i}")).collect();
        Dataset::from_parts(
            xs.to_vec(),
            t.to_vec(),
            None,
            vec![ColumnMeta::continuous("x1")],
            ids,
        )
        .unwrap()
    }

    fn unit_square_box(owner: usize) -> HyperBox {
        HyperBox::new(owner, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn boundary_points_are_inside() {
        assert!(unit_square_box(0).contains(&[0.0, 1.0]));
    }

    #[test]
    fn degenerate_box_contains_its_point() {
        let data = line_dataset(&[0.3, 0.7], &[0, 1]);
        let bbox = HyperBox::degenerate_at(&data, 1);
        assert!(bbox.contains(&[0.7]));
        assert!(!bbox.contains(&[0.699]));
    }

    #[test]
    fn outside_any_axis_means_outside() {
        assert!(!unit_square_box(0).contains(&[1.0001, 0.5]));
    }

    #[test]
    #[should_panic(expected = "does not match box dimension")]
    fn dimension_mismatch_panics() {
        unit_square_box(0).contains(&[0.5]);
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let err = HyperBox::new(0, vec![1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, BoxError::InvertedBounds { axis: 0, .. }));
    }

    #[test]
    fn mmg_of_degenerate_box_is_the_owner_alone() {
        let data = line_dataset(&[0.0, 0.3, 0.6, 1.0], &[0, 1, 0, 1]);
        let group = HyperBox::degenerate_at(&data, 1).mmg(&data);
        assert_eq!(group.members(), &[1]);
        assert_eq!(group.len(), 1);
    }

    #[test]
    fn mmg_of_universal_box_is_everyone() {
        let data = line_dataset(&[0.0, 0.3, 0.6, 1.0], &[0, 1, 0, 1]);
        let bbox = HyperBox::new(0, vec![0.0], vec![1.0]).unwrap();
        let group = bbox.mmg(&data);
        assert_eq!(group.len(), 4);
        assert_eq!(group.n_treated(), 2);
        assert_eq!(group.n_control(), 2);
    }

    #[test]
    fn mmg_selects_interior_units() {
        let data = line_dataset(&[0.0, 0.3, 0.6, 1.0], &[0, 1, 0, 1]);
        let bbox = HyperBox::new(1, vec![0.25], vec![0.65]).unwrap();
        assert_eq!(bbox.mmg(&data).members(), &[1, 2]);
    }

    #[test]
    fn err_diagnostic_is_zero_for_singleton_group() {
        let data = line_dataset(&[0.0, 5.0], &[1, 0]);
        let preds = Predictions::from_vecs(vec![1.0, 9.0], vec![2.0, 7.0]);
        let bbox = HyperBox::degenerate_at(&data, 0);
        assert_eq!(err_diagnostic(&bbox, &preds, &data).unwrap(), 0.0);
    }

    #[test]
    fn err_diagnostic_is_zero_under_constant_predictions() {
        let data = line_dataset(&[0.0, 0.5, 1.0], &[1, 0, 0]);
        let preds = Predictions::from_vecs(vec![4.0; 3], vec![-2.0; 3]);
        let bbox = HyperBox::new(0, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(err_diagnostic(&bbox, &preds, &data).unwrap(), 0.0);
    }

    #[test]
    fn err_diagnostic_measures_owner_to_mean_drift() {
        let data = line_dataset(&[0.0, 0.5, 1.0], &[1, 0, 0]);
        let preds = Predictions::from_vecs(vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        let bbox = HyperBox::new(0, vec![0.0], vec![1.0]).unwrap();
        // f̂₀ mean over members is 2, owner's is 1.
        assert_eq!(err_diagnostic(&bbox, &preds, &data).unwrap(), 1.0);
    }

    #[test]
    fn var_diagnostic_is_zero_for_singleton() {
        let data = line_dataset(&[0.0, 5.0], &[1, 0]);
        let preds = Predictions::from_vecs(vec![1.0, 9.0], vec![2.0, 7.0]);
        let bbox = HyperBox::degenerate_at(&data, 0);
        assert_eq!(var_diagnostic(&bbox, &preds, &data).unwrap(), 0.0);
    }

    #[test]
    fn var_diagnostic_uses_population_variance() {
        let data = line_dataset(&[0.0, 1.0], &[1, 0]);
        let preds = Predictions::from_vecs(vec![0.0, 2.0], vec![3.0, 3.0]);
        let bbox = HyperBox::new(0, vec![0.0], vec![1.0]).unwrap();
        // ((0−1)² + (2−1)²)/2 = 1 from f̂₀; f̂₁ is constant.
        assert_eq!(var_diagnostic(&bbox, &preds, &data).unwrap(), 1.0);
    }

    #[test]
    fn empty_box_diagnostics_error() {
        let data = line_dataset(&[0.0, 1.0], &[1, 0]);
        let preds = Predictions::from_vecs(vec![0.0, 2.0], vec![3.0, 3.0]);
        let bbox = HyperBox::new(0, vec![0.4], vec![0.6]).unwrap();
        assert!(matches!(
            err_diagnostic(&bbox, &preds, &data),
            Err(BoxError::EmptyGroup)
        ));
    }

    #[test]
    fn tightened_box_preserves_membership() {
        let data = line_dataset(&[0.1, 0.3, 0.6, 0.95], &[0, 1, 0, 1]);
        let bbox = HyperBox::new(1, vec![0.0], vec![0.7]).unwrap();
        let group = bbox.mmg(&data);
        let tight = bbox.tightened(&data, group.members());
        assert_eq!(tight.lower(), &[0.1]);
        assert_eq!(tight.upper(), &[0.6]);
        assert_eq!(tight.mmg(&data), group);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (2usize..8, 1usize..4).prop_flat_map(|(n, p)| {
            (
                proptest::collection::vec(0.0f64..1.0, n * p),
                proptest::collection::vec(0u8..2, n),
            )
                .prop_map(move |(x, t)| {
                    let cols = (0..p)
                        .map(|j| ColumnMeta::continuous(format!("x{j}")))
                        .collect();
                    let ids = (0..n).map(|i| format!("u{i}")).collect();
                    Dataset::from_parts(x, t, None, cols, ids).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn enlarging_a_box_never_removes_members(data in arb_dataset(),
                                                 seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = data.p();
            let owner = rng.gen_range(0..data.n());
            let mut small = HyperBox::degenerate_at(&data, owner);
            for j in 0..p {
                small = small.expanded_to(j, rng.gen_range(0.0..1.0));
            }
            let mut big = small.clone();
            for j in 0..p {
                big = big.expanded_to(j, rng.gen_range(-0.5..1.5));
            }
            let small_members = small.mmg(&data);
            let big_members = big.mmg(&data);
            for k in small_members.members() {
                prop_assert!(big_members.contains(*k));
            }
        }

        #[test]
        fn err_diagnostic_bounded_by_triangle_surrogate(data in arb_dataset(),
                                                        seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = data.n();
            let f0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f1: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let preds = Predictions::from_vecs(f0, f1);
            let owner = rng.gen_range(0..n);
            let mut bbox = HyperBox::degenerate_at(&data, owner);
            for j in 0..data.p() {
                bbox = bbox.expanded_to(j, rng.gen_range(0.0..1.0));
            }
            let group = bbox.mmg(&data);
            let err = err_diagnostic(&bbox, &preds, &data).unwrap();
            let surrogate: f64 = group.members().iter().map(|&k| {
                (preds.f0(owner) - preds.f0(k)).abs() + (preds.f1(owner) - preds.f1(k)).abs()
            }).sum::<f64>() / group.len() as f64;
            prop_assert!(err <= surrogate + 1e-12);
        }
    }
}
