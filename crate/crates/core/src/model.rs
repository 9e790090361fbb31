//! The LSI-MDP data model.
//!
//! A state is a pair `(x_o, x_u)`: `x_o` is observed by the controller, `x_u`
//! never is. The joint kernel is stored dense, indexed
//! `[a][x_o][x_u][x_o'][x_u']`, and costs are indexed `[a][x_o][x_u]`.
//! Models are immutable once built and every constructor validates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of every distribution must be within this of one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Transition factors `p(x_o'|x_o,a)` and `p(x_u'|x_u,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredKernel {
    /// `[a][x_o][x_o']`
    pub p_obs: Vec<Vec<Vec<f64>>>,
    /// `[a][x_u][x_u']`
    pub p_unobs: Vec<Vec<Vec<f64>>>,
}

impl FactoredKernel {
    pub fn n_actions(&self) -> usize {
        self.p_obs.len()
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.p_unobs.len() != self.p_obs.len() {
            return Err(Error::Dimension(format!(
                "p_obs has {} actions but p_unobs has {}",
                self.p_obs.len(),
                self.p_unobs.len()
            )));
        }
        let n_obs = self.p_obs.first().map_or(0, Vec::len);
        let n_unobs = self.p_unobs.first().map_or(0, Vec::len);
        check_square_stochastic("p_obs", &self.p_obs, n_obs)?;
        check_square_stochastic("p_unobs", &self.p_unobs, n_unobs)?;
        Ok((n_obs, n_unobs))
    }
}

fn check_square_stochastic(what: &'static str, mats: &[Vec<Vec<f64>>], n: usize) -> Result<()> {
    for (a, mat) in mats.iter().enumerate() {
        if mat.len() != n {
            return Err(Error::Dimension(format!(
                "{what}[{a}] has {} rows, expected {n}",
                mat.len()
            )));
        }
        for (i, row) in mat.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "{what}[{a}][{i}] has {} entries, expected {n}",
                    row.len()
                )));
            }
            check_distribution(what, row, &[a, i])?;
        }
    }
    Ok(())
}

/// Checks entries in [0, 1] and a unit sum.
pub(crate) fn check_distribution(what: &'static str, probs: &[f64], index: &[usize]) -> Result<()> {
    for (j, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            let mut idx = index.to_vec();
            idx.push(j);
            return Err(Error::ProbabilityOutOfRange {
                what,
                index: idx,
                value: p,
            });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic {
            what,
            index: index.to_vec(),
            sum,
        });
    }
    Ok(())
}

/// A finite LSI-MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct LsiModel {
    n_obs: usize,
    n_unobs: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    cost: Vec<f64>,
    discount: f64,
    alpha_obs: Vec<f64>,
    alpha_unobs: Vec<f64>,
    factors: Option<FactoredKernel>,
}

impl LsiModel {
    /// Builds a model from a flat joint kernel (`[a][x_o][x_u][x_o'][x_u']`)
    /// and flat costs (`[a][x_o][x_u]`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_obs: usize,
        n_unobs: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        cost: Vec<f64>,
        discount: f64,
        alpha_obs: Vec<f64>,
        alpha_unobs: Vec<f64>,
    ) -> Result<Self> {
        let model = LsiModel {
            n_obs,
            n_unobs,
            n_actions,
            kernel,
            cost,
            discount,
            alpha_obs,
            alpha_unobs,
            factors: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a model whose kernel is the product of the two factors.
    /// The factors are retained and written back out by [`LsiModel::to_json`].
    pub fn from_factors(
        factors: FactoredKernel,
        cost: Vec<f64>,
        discount: f64,
        alpha_obs: Vec<f64>,
        alpha_unobs: Vec<f64>,
    ) -> Result<Self> {
        let (n_obs, n_unobs) = factors.validate()?;
        let n_actions = factors.n_actions();
        let kernel = expand_factors(&factors, n_obs, n_unobs);
        let mut model = LsiModel::new(
            n_obs,
            n_unobs,
            n_actions,
            kernel,
            cost,
            discount,
            alpha_obs,
            alpha_unobs,
        )?;
        model.factors = Some(factors);
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let (no, nu, na) = (self.n_obs, self.n_unobs, self.n_actions);
        if no == 0 || nu == 0 || na == 0 {
            return Err(Error::Dimension(format!(
                "state and action counts must be positive (n_obs={no}, n_unobs={nu}, n_actions={na})"
            )));
        }
        let joint = no * nu;
        if self.kernel.len() != na * joint * joint {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected {}",
                self.kernel.len(),
                na * joint * joint
            )));
        }
        if self.cost.len() != na * joint {
            return Err(Error::Dimension(format!(
                "cost has {} entries, expected {}",
                self.cost.len(),
                na * joint
            )));
        }
        if self.alpha_obs.len() != no {
            return Err(Error::Dimension(format!(
                "alpha_obs has {} entries, expected {no}",
                self.alpha_obs.len()
            )));
        }
        if self.alpha_unobs.len() != nu {
            return Err(Error::Dimension(format!(
                "alpha_unobs has {} entries, expected {nu}",
                self.alpha_unobs.len()
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidDiscount(self.discount));
        }
        for a in 0..na {
            for xo in 0..no {
                for xu in 0..nu {
                    check_distribution("kernel", self.kernel_row(a, xo, xu), &[a, xo, xu])?;
                    let c = self.cost(a, xo, xu);
                    if !c.is_finite() || c < 0.0 {
                        return Err(Error::InvalidCost {
                            index: vec![a, xo, xu],
                            value: c,
                        });
                    }
                }
            }
        }
        check_distribution("alpha_obs", &self.alpha_obs, &[])?;
        check_distribution("alpha_unobs", &self.alpha_unobs, &[])?;
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_unobs(&self) -> usize {
        self.n_unobs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn alpha_obs(&self) -> &[f64] {
        &self.alpha_obs
    }

    /// Initial distribution of `x_u`, which is also the initial belief.
    pub fn alpha_unobs(&self) -> &[f64] {
        &self.alpha_unobs
    }

    /// Factors the model was built from, if it was loaded in factored form.
    pub fn factors(&self) -> Option<&FactoredKernel> {
        self.factors.as_ref()
    }

    /// `p(x_o', x_u' | x_o, x_u, a)`
    #[inline]
    pub fn kernel(&self, a: usize, xo: usize, xu: usize, xo2: usize, xu2: usize) -> f64 {
        self.kernel_row(a, xo, xu)[xo2 * self.n_unobs + xu2]
    }

    /// Next-state distribution from `(x_o, x_u)` under `a`, flattened as
    /// `x_o' * n_unobs + x_u'`.
    #[inline]
    pub fn kernel_row(&self, a: usize, xo: usize, xu: usize) -> &[f64] {
        let joint = self.n_obs * self.n_unobs;
        let start = ((a * self.n_obs + xo) * self.n_unobs + xu) * joint;
        &self.kernel[start..start + joint]
    }

    #[inline]
    pub fn cost(&self, a: usize, xo: usize, xu: usize) -> f64 {
        self.cost[(a * self.n_obs + xo) * self.n_unobs + xu]
    }

    /// Largest stage cost.
    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Upper bound `c_max / (1 - beta)` on every discounted value.
    pub fn value_bound(&self) -> f64 {
        self.max_cost() / (1.0 - self.discount)
    }

    pub fn flat_kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn flat_cost(&self) -> &[f64] {
        &self.cost
    }

    /// Copy of the model with a different initial belief over `x_u`.
    pub fn with_alpha_unobs(&self, alpha_unobs: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.alpha_unobs = alpha_unobs;
        m.validate()?;
        Ok(m)
    }

    /// Copy of the model with a different initial distribution over `x_o`.
    pub fn with_alpha_obs(&self, alpha_obs: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.alpha_obs = alpha_obs;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<LsiModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    LsiModel::from_json_str(&text)
}

fn expand_factors(f: &FactoredKernel, no: usize, nu: usize) -> Vec<f64> {
    let mut kernel = Vec::with_capacity(f.n_actions() * no * nu * no * nu);
    for a in 0..f.n_actions() {
        for xo in 0..no {
            for xu in 0..nu {
                for xo2 in 0..no {
                    for xu2 in 0..nu {
                        kernel.push(f.p_obs[a][xo][xo2] * f.p_unobs[a][xu][xu2]);
                    }
                }
            }
        }
    }
    kernel
}

/// Returns the factors when the kernel decomposes as
/// `p(x_o'|x_o,a) p(x_u'|x_u,a)` with reconstruction error at most `tol`.
///
/// Candidates are the marginals taken at `x_u = 0` (resp. `x_o = 0`); they
/// must be constant across the conditioning variable within `tol`.
pub fn check_factorization(model: &LsiModel, tol: f64) -> Option<FactoredKernel> {
    let (no, nu, na) = (model.n_obs, model.n_unobs, model.n_actions);
    let obs_marginal = |a: usize, xo: usize, xu: usize| -> Vec<f64> {
        let row = model.kernel_row(a, xo, xu);
        (0..no)
            .map(|xo2| row[xo2 * nu..(xo2 + 1) * nu].iter().sum())
            .collect()
    };
    let unobs_marginal = |a: usize, xo: usize, xu: usize| -> Vec<f64> {
        let row = model.kernel_row(a, xo, xu);
        (0..nu)
            .map(|xu2| (0..no).map(|xo2| row[xo2 * nu + xu2]).sum())
            .collect()
    };
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol);

    let mut p_obs = Vec::with_capacity(na);
    let mut p_unobs = Vec::with_capacity(na);
    for a in 0..na {
        let mut po = Vec::with_capacity(no);
        for xo in 0..no {
            let cand = obs_marginal(a, xo, 0);
            if !(1..nu).all(|xu| close(&cand, &obs_marginal(a, xo, xu))) {
                return None;
            }
            po.push(cand);
        }
        let mut pu = Vec::with_capacity(nu);
        for xu in 0..nu {
            let cand = unobs_marginal(a, 0, xu);
            if !(1..no).all(|xo| close(&cand, &unobs_marginal(a, xo, xu))) {
                return None;
            }
            pu.push(cand);
        }
        p_obs.push(po);
        p_unobs.push(pu);
    }
    let factors = FactoredKernel { p_obs, p_unobs };
    let err = max_reconstruction_error(model, &factors);
    (err <= tol).then_some(factors)
}

/// Largest absolute difference between the kernel and the product of `factors`.
pub fn max_reconstruction_error(model: &LsiModel, factors: &FactoredKernel) -> f64 {
    let product = expand_factors(factors, model.n_obs, model.n_unobs);
    product
        .iter()
        .zip(&model.kernel)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n_obs: usize,
    n_unobs: usize,
    n_actions: usize,
    discount: f64,
    alpha_obs: Vec<f64>,
    alpha_unobs: Vec<f64>,
    cost: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Vec<Vec<Vec<Vec<Vec<f64>>>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factored: Option<FactoredKernel>,
}

impl ModelFile {
    fn from_model(m: &LsiModel) -> Self {
        let (no, nu, na) = (m.n_obs, m.n_unobs, m.n_actions);
        let cost = (0..na)
            .map(|a| {
                (0..no)
                    .map(|xo| (0..nu).map(|xu| m.cost(a, xo, xu)).collect())
                    .collect()
            })
            .collect();
        let kernel = match m.factors {
            Some(_) => None,
            None => Some(
                (0..na)
                    .map(|a| {
                        (0..no)
                            .map(|xo| {
                                (0..nu)
                                    .map(|xu| {
                                        m.kernel_row(a, xo, xu)
                                            .chunks(nu)
                                            .map(<[f64]>::to_vec)
                                            .collect()
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
            ),
        };
        ModelFile {
            n_obs: no,
            n_unobs: nu,
            n_actions: na,
            discount: m.discount,
            alpha_obs: m.alpha_obs.clone(),
            alpha_unobs: m.alpha_unobs.clone(),
            cost,
            kernel,
            factored: m.factors.clone(),
        }
    }

    fn into_model(self) -> Result<LsiModel> {
        let (no, nu, na) = (self.n_obs, self.n_unobs, self.n_actions);
        let cost = flatten_exact("cost", self.cost, &[na, no, nu])?;
        match (self.kernel, self.factored) {
            (Some(_), Some(_)) => Err(Error::Dimension(
                "model file has both `kernel` and `factored`; give exactly one".into(),
            )),
            (None, None) => Err(Error::Dimension(
                "model file needs one of `kernel` or `factored`".into(),
            )),
            (Some(kernel), None) => {
                let mut flat = Vec::with_capacity(na * no * nu * no * nu);
                check_len("kernel", kernel.len(), na, &[])?;
                for (a, per_a) in kernel.into_iter().enumerate() {
                    check_len("kernel", per_a.len(), no, &[a])?;
                    for (xo, per_xo) in per_a.into_iter().enumerate() {
                        check_len("kernel", per_xo.len(), nu, &[a, xo])?;
                        for (xu, next) in per_xo.into_iter().enumerate() {
                            flat.extend(flatten_exact_at("kernel", next, &[no, nu], &[a, xo, xu])?);
                        }
                    }
                }
                LsiModel::new(
                    no,
                    nu,
                    na,
                    flat,
                    cost,
                    self.discount,
                    self.alpha_obs,
                    self.alpha_unobs,
                )
            }
            (None, Some(factors)) => {
                check_len("factored.p_obs", factors.p_obs.len(), na, &[])?;
                check_len("factored.p_unobs", factors.p_unobs.len(), na, &[])?;
                for (a, mat) in factors.p_obs.iter().enumerate() {
                    check_len("factored.p_obs", mat.len(), no, &[a])?;
                }
                for (a, mat) in factors.p_unobs.iter().enumerate() {
                    check_len("factored.p_unobs", mat.len(), nu, &[a])?;
                }
                LsiModel::from_factors(
                    factors,
                    cost,
                    self.discount,
                    self.alpha_obs,
                    self.alpha_unobs,
                )
            }
        }
    }
}

fn check_len(what: &str, got: usize, expected: usize, at: &[usize]) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension(format!(
            "{what}{at:?} has {got} entries, expected {expected}"
        )));
    }
    Ok(())
}

fn flatten_exact(what: &str, nested: Vec<Vec<Vec<f64>>>, dims: &[usize; 3]) -> Result<Vec<f64>> {
    check_len(what, nested.len(), dims[0], &[])?;
    let mut out = Vec::with_capacity(dims.iter().product());
    for (i, mid) in nested.into_iter().enumerate() {
        out.extend(flatten_exact_at(what, mid, &dims[1..], &[i])?);
    }
    Ok(out)
}

fn flatten_exact_at(what: &str, nested: Vec<Vec<f64>>, dims: &[usize], at: &[usize]) -> Result<Vec<f64>> {
    check_len(what, nested.len(), dims[0], at)?;
    let mut out = Vec::with_capacity(dims[0] * dims[1]);
    for (j, row) in nested.into_iter().enumerate() {
        let mut idx = at.to_vec();
        idx.push(j);
        check_len(what, row.len(), dims[1], &idx)?;
        out.extend(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example_model;

    #[test]
    fn example_loads_with_expected_shape() {
        let m = example_model();
        assert_eq!((m.n_obs(), m.n_unobs(), m.n_actions()), (2, 2, 2));
        assert_eq!(m.discount(), 0.5);
        // P_o(1)[1][0] * P_u(1)[1][1] = 0.8 * 0.5
        assert!((m.kernel(1, 1, 1, 0, 1) - 0.4).abs() < 1e-15);
        assert_eq!(m.cost(0, 0, 0), 2.0);
        assert_eq!(m.cost(1, 0, 1), 0.4);
    }

    #[test]
    fn single_state_model_is_valid() {
        let m = LsiModel::new(1, 1, 1, vec![1.0], vec![0.0], 0.0, vec![1.0], vec![1.0]).unwrap();
        assert_eq!(m.max_cost(), 0.0);
    }

    #[test]
    fn row_summing_to_point_nine_is_rejected() {
        let err = LsiModel::new(
            1,
            2,
            1,
            vec![0.5, 0.5, 0.4, 0.5],
            vec![0.0, 0.0],
            0.5,
            vec![1.0],
            vec![0.5, 0.5],
        )
        .unwrap_err();
        match err {
            Error::NotStochastic { index, sum, .. } => {
                assert_eq!(index, vec![0, 0, 1]);
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_cost_and_discount() {
        let bad_cost = LsiModel::new(1, 1, 1, vec![1.0], vec![-1.0], 0.5, vec![1.0], vec![1.0]);
        assert!(matches!(bad_cost, Err(Error::InvalidCost { .. })));
        let bad_beta = LsiModel::new(1, 1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], vec![1.0]);
        assert!(matches!(bad_beta, Err(Error::InvalidDiscount(_))));
        let bad_alpha = LsiModel::new(1, 1, 1, vec![1.0], vec![0.0], 0.5, vec![0.9], vec![1.0]);
        assert!(matches!(bad_alpha, Err(Error::NotStochastic { what: "alpha_obs", .. })));
    }

    #[test]
    fn unknown_fields_and_double_kernel_rejected() {
        let text = example_model().to_json();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(
            LsiModel::from_json_str(&v.to_string()),
            Err(Error::Parse(_))
        ));
        v.as_object_mut().unwrap().remove("extra");
        v["kernel"] = serde_json::json!([]);
        assert!(matches!(
            LsiModel::from_json_str(&v.to_string()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn factored_and_joint_files_agree_bitwise() {
        let factored = example_model();
        let joint = LsiModel::new(
            2,
            2,
            2,
            factored.flat_kernel().to_vec(),
            factored.flat_cost().to_vec(),
            0.5,
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        )
        .unwrap();
        let reloaded = LsiModel::from_json_str(&joint.to_json()).unwrap();
        assert!(reloaded.factors().is_none());
        let a: Vec<u64> = reloaded.flat_kernel().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = factored.flat_kernel().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn factorization_recovers_example_matrices() {
        let m = example_model();
        let f = check_factorization(&m, 1e-12).expect("example factorizes");
        let want = m.factors().unwrap();
        let pairs = f.p_obs.iter().flatten().flatten().zip(want.p_obs.iter().flatten().flatten());
        let pairs = pairs.chain(f.p_unobs.iter().flatten().flatten().zip(want.p_unobs.iter().flatten().flatten()));
        for (x, y) in pairs {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_unobservable_transition_does_not_factor() {
        // x_u' copies x_o: the x_u' marginal depends on x_o.
        let mut kernel = Vec::new();
        for xo in 0..2 {
            for _xu in 0..2 {
                for xo2 in 0..2 {
                    for xu2 in 0..2 {
                        let _ = xo2;
                        kernel.push(if xu2 == xo { 0.5 } else { 0.0 });
                    }
                }
            }
        }
        let m = LsiModel::new(2, 2, 1, kernel, vec![0.0; 4], 0.5, vec![0.5, 0.5], vec![0.5, 0.5])
            .unwrap();
        assert!(check_factorization(&m, 1e-6).is_none());
    }

    #[test]
    fn perturbed_factorization_respects_tolerance() {
        let m = example_model();
        let mut kernel = m.flat_kernel().to_vec();
        // keep the row stochastic: move 1e-3 of mass within row (a=0, x_o=0, x_u=0)
        kernel[0] += 1e-3;
        kernel[1] -= 1e-3;
        let p = LsiModel::new(2, 2, 2, kernel, m.flat_cost().to_vec(), 0.5, vec![0.5; 2], vec![0.5; 2])
            .unwrap();
        assert!(check_factorization(&p, 1e-6).is_none());
        let f = check_factorization(&p, 1e-2).expect("within 1e-2");
        let err = max_reconstruction_error(&p, &f);
        assert!(err > 1e-6 && err <= 1e-2, "reconstruction error {err}");
    }
}
