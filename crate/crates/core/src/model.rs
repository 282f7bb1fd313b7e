//! Problem parameters, grids and grid functions.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw system parameters as read from a config or a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub m: usize,
    pub mu: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    pub dim: usize,
    pub lengths: Vec<f64>,
}

/// Sign-split extremes of the self-interaction and coupling coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mu_max_pos: f64,
    pub beta_max_pos: f64,
    pub mu_min_neg: f64,
    pub beta_min_neg: f64,
}

/// Parameters that passed [`validate_params`], with aggregates cached.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidParams {
    #[serde(flatten)]
    params: SystemParams,
    aggregates: Aggregates,
}

impl Deref for ValidParams {
    type Target = SystemParams;

    fn deref(&self) -> &SystemParams {
        &self.params
    }
}

impl ValidParams {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn aggregates(&self) -> Aggregates {
        self.aggregates
    }

    pub fn into_inner(self) -> SystemParams {
        self.params
    }

    /// Same system with a different mass vector.
    pub fn with_masses(&self, masses: &[f64]) -> Result<ValidParams> {
        let mut p = self.params.clone();
        p.masses = masses.to_vec();
        validate_params(p)
    }

    /// The reduced system on the listed components, in the given order.
    pub fn restrict(&self, active: &[usize]) -> Result<ValidParams> {
        if active.is_empty() {
            return Err(Error::InvalidParams("active set is empty".into()));
        }
        if let Some(&bad) = active.iter().find(|&&i| i >= self.m) {
            return Err(Error::InvalidParams(format!("component {bad} out of range")));
        }
        let p = SystemParams {
            m: active.len(),
            mu: active.iter().map(|&i| self.mu[i]).collect(),
            beta: active
                .iter()
                .map(|&i| active.iter().map(|&j| self.beta[i][j]).collect())
                .collect(),
            masses: active.iter().map(|&i| self.masses[i]).collect(),
            dim: self.dim,
            lengths: self.lengths.clone(),
        };
        validate_params(p)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

fn finite_all(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

pub fn validate_params(params: SystemParams) -> Result<ValidParams> {
    let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));

    // Zero couplings are reported before any shape problem so that a
    // truncated matrix with a zero entry still names the real defect.
    for (k, row) in params.beta.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            if k != j && b == 0.0 {
                return bad("coupling must be nonzero");
            }
        }
    }
    let m = params.m;
    if m == 0 {
        return bad("component count m must be positive");
    }
    if params.mu.len() != m || params.masses.len() != m {
        return bad("mu and masses must have m entries");
    }
    if params.beta.len() != m || params.beta.iter().any(|r| r.len() != m) {
        return bad("beta must be an m x m matrix");
    }
    if !(1..=3).contains(&params.dim) {
        return bad("dim must be 1, 2 or 3");
    }
    if params.lengths.len() != params.dim {
        return bad("lengths must have dim entries");
    }
    if !finite_all(&params.mu) || !finite_all(&params.masses) || !finite_all(&params.lengths) {
        return bad("parameters must be finite");
    }
    if params.beta.iter().any(|r| !finite_all(r)) {
        return bad("parameters must be finite");
    }
    if params.mu.iter().any(|&x| x == 0.0) {
        return bad("self-interaction mu must be nonzero");
    }
    if params.masses.iter().any(|&c| c <= 0.0) {
        return bad("masses must be positive");
    }
    if params.lengths.iter().any(|&l| l <= 0.0) {
        return bad("box lengths must be positive");
    }
    for k in 0..m {
        if params.beta[k][k] != 0.0 {
            return bad("beta diagonal must be zero");
        }
        for j in 0..k {
            if params.beta[k][j] != params.beta[j][k] {
                return bad("coupling matrix must be symmetric");
            }
        }
    }

    let mut agg = Aggregates {
        mu_max_pos: 0.0,
        beta_max_pos: 0.0,
        mu_min_neg: 0.0,
        beta_min_neg: 0.0,
    };
    for &x in &params.mu {
        agg.mu_max_pos = agg.mu_max_pos.max(x);
        agg.mu_min_neg = agg.mu_min_neg.min(x);
    }
    for (k, row) in params.beta.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            if k != j {
                agg.beta_max_pos = agg.beta_max_pos.max(b);
                agg.beta_min_neg = agg.beta_min_neg.min(b);
            }
        }
    }
    Ok(ValidParams {
        params,
        aggregates: agg,
    })
}

#[derive(Clone, Debug, Deserialize)]
struct GridRepr {
    lengths: Vec<f64>,
    sizes: Vec<usize>,
}

/// Interior nodes of a tensor grid on a box with zero boundary values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct Grid {
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub lengths: Vec<f64>,
    pub spacings: Vec<f64>,
    pub node_count: usize,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Grid> {
        Grid::new(&r.lengths, &r.sizes)
    }
}

impl Grid {
    pub fn new(lengths: &[f64], sizes: &[usize]) -> Result<Grid> {
        let dim = lengths.len();
        if !(1..=3).contains(&dim) || sizes.len() != dim {
            return Err(Error::InvalidParams(
                "grid needs 1 to 3 axes with one size per length".into(),
            ));
        }
        if sizes.iter().any(|&n| n == 0) || lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParams("grid sizes and lengths must be positive".into()));
        }
        let spacings = lengths
            .iter()
            .zip(sizes)
            .map(|(&l, &n)| l / (n as f64 + 1.0))
            .collect();
        Ok(Grid {
            dim,
            sizes: sizes.to_vec(),
            lengths: lengths.to_vec(),
            spacings,
            node_count: sizes.iter().product(),
        })
    }

    /// Quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacings.iter().product()
    }

    /// Index stride of each axis; the last axis varies fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim];
        for a in (0..self.dim.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.sizes[a + 1];
        }
        s
    }

    /// Node index along `axis` of the flat index `idx`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides()[axis]) % self.sizes[axis]
    }

    /// Physical coordinates of the flat node index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let strides = self.strides();
        (0..self.dim)
            .map(|a| ((idx / strides[a]) % self.sizes[a] + 1) as f64 * self.spacings[a])
            .collect()
    }

    pub fn check(&self, f: &Field) -> Result<()> {
        if f.values.len() != self.node_count {
            return Err(Error::GridMismatch {
                expected: self.node_count,
                found: f.values.len(),
            });
        }
        Ok(())
    }
}

/// A grid function; boundary values are implicit zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Field {
        Field { values: vec![0.0; n] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Field {
        Field {
            values: (0..grid.node_count).map(|i| f(&grid.point(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise min(u, 0).
    pub fn negative_part(&self) -> Field {
        Field {
            values: self.values.iter().map(|&x| x.min(0.0)).collect(),
        }
    }

    /// Pointwise max(u, 0).
    pub fn positive_part(&self) -> Field {
        Field {
            values: self.values.iter().map(|&x| x.max(0.0)).collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
struct VecFieldRepr {
    grid: Grid,
    components: Vec<Field>,
}

/// An m-tuple of fields on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VecFieldRepr")]
pub struct VecField {
    pub grid: Grid,
    pub components: Vec<Field>,
}

impl TryFrom<VecFieldRepr> for VecField {
    type Error = Error;

    fn try_from(r: VecFieldRepr) -> Result<VecField> {
        VecField::new(r.grid, r.components)
    }
}

impl VecField {
    pub fn new(grid: Grid, components: Vec<Field>) -> Result<VecField> {
        if components.is_empty() {
            return Err(Error::InvalidParams("a vector field needs at least one component".into()));
        }
        for c in &components {
            grid.check(c)?;
        }
        Ok(VecField { grid, components })
    }

    pub fn zeros(grid: &Grid, m: usize) -> VecField {
        VecField {
            grid: grid.clone(),
            components: vec![Field::zeros(grid.node_count); m],
        }
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Field {
        &self.components[i]
    }

    /// `self + a * other`, component-wise.
    pub fn axpy(&self, a: f64, other: &VecField) -> VecField {
        VecField {
            grid: self.grid.clone(),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(x, y)| x.axpy(a, y))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<VecField> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentTag {
    Zero,
    Positive,
    Negative,
    SignChanging,
}

impl ComponentTag {
    pub fn is_one_signed(self) -> bool {
        matches!(self, ComponentTag::Positive | ComponentTag::Negative)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionTag {
    Trivial,
    SemiTrivial,
    SignChanging,
    SemiNodal(usize),
    Positive,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub tag: SolutionTag,
    pub per_component: Vec<ComponentTag>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(mu: [f64; 2], b: f64) -> SystemParams {
        SystemParams {
            m: 2,
            mu: mu.to_vec(),
            beta: vec![vec![0.0, b], vec![b, 0.0]],
            masses: vec![0.1, 0.1],
            dim: 1,
            lengths: vec![std::f64::consts::PI],
        }
    }

    #[test]
    fn aggregates_of_positive_system() {
        let v = validate_params(two([1.0, 1.0], 0.5)).unwrap();
        let a = v.aggregates();
        assert_eq!(a.mu_max_pos, 1.0);
        assert_eq!(a.beta_max_pos, 0.5);
        assert_eq!(a.mu_min_neg, 0.0);
        assert_eq!(a.beta_min_neg, 0.0);
        assert_eq!(v.params(), &two([1.0, 1.0], 0.5));
    }

    #[test]
    fn aggregates_split_signs() {
        let a = validate_params(two([-1.0, 2.0], -0.3)).unwrap().aggregates();
        assert_eq!(a.mu_min_neg, -1.0);
        assert_eq!(a.beta_min_neg, -0.3);
        assert_eq!(a.mu_max_pos, 2.0);
        assert_eq!(a.beta_max_pos, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let msg = validate_params(two([1.0, 1.0], 0.0)).unwrap_err().to_string();
        assert!(msg.contains("coupling must be nonzero"), "{msg}");

        assert!(validate_params(two([0.0, 1.0], 0.2)).is_err());

        let mut p = two([1.0, 1.0], 0.2);
        p.beta[0][1] = 0.3;
        assert!(validate_params(p).is_err());

        let mut p = two([1.0, 1.0], 0.2);
        p.masses[1] = 0.0;
        assert!(validate_params(p).is_err());

        let mut p = two([1.0, 1.0], 0.2);
        p.dim = 4;
        p.lengths = vec![1.0; 4];
        assert!(validate_params(p).is_err());
    }

    #[test]
    fn truncated_zero_coupling_names_the_coupling() {
        let mut p = two([1.0, 1.0], 0.2);
        p.beta = vec![vec![0.0, 0.0]];
        let msg = validate_params(p).unwrap_err().to_string();
        assert!(msg.contains("coupling must be nonzero"));
    }

    #[test]
    fn restrict_keeps_selected_entries() {
        let mut p = two([1.0, 3.0], 0.2);
        p.masses = vec![0.1, 0.4];
        let v = validate_params(p).unwrap();
        let r = v.restrict(&[1]).unwrap();
        assert_eq!(r.m, 1);
        assert_eq!(r.mu, vec![3.0]);
        assert_eq!(r.masses, vec![0.4]);
        assert_eq!(r.beta, vec![vec![0.0]]);
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(&[2.0, 3.0], &[3, 5]).unwrap();
        assert_eq!(g.node_count, 15);
        assert_eq!(g.spacings, vec![0.5, 0.5]);
        assert_eq!(g.strides(), vec![5, 1]);
        assert_eq!(g.point(7), vec![1.0, 1.5]);
        assert_eq!(g.axis_index(7, 0), 1);
        assert_eq!(g.axis_index(7, 1), 2);
        assert!(Grid::new(&[1.0], &[0]).is_err());
    }

    #[test]
    fn vecfield_rejects_wrong_length() {
        let g = Grid::new(&[1.0], &[4]).unwrap();
        assert!(VecField::new(g.clone(), vec![Field::zeros(3)]).is_err());
        let bad = r#"{"grid":{"lengths":[1.0],"sizes":[4]},"components":[{"values":[1.0]}]}"#;
        assert!(VecField::from_json(bad).is_err());
    }

    #[test]
    fn vecfield_json_round_trip_is_exact() {
        let g = Grid::new(&[std::f64::consts::PI], &[7]).unwrap();
        let f = Field::from_fn(&g, |x| (x[0] * 1.234_567).sin() / 3.0 + 1e-300);
        let u = VecField::new(g, vec![f.clone(), f.scaled(-0.1)]).unwrap();
        let back = VecField::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(u, back);
        for (a, b) in u.components[0].values.iter().zip(&back.components[0].values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
