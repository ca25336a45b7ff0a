//! Linear score regressors: Ridge, Lasso, and PLS followed by a linear
//! ε-insensitive SVR. Every fitted model collapses to `w·z + b`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::metrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    PlsSvr,
    Lasso,
    Ridge,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::PlsSvr, Method::Lasso, Method::Ridge];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PlsSvr => "PLS_SVR",
            Method::Lasso => "LASSO",
            Method::Ridge => "RIDGE",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PLS_SVR" => Ok(Method::PlsSvr),
            "LASSO" => Ok(Method::Lasso),
            "RIDGE" => Ok(Method::Ridge),
            other => Err(Error::Config(format!("unknown regressor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Hyper {
    Ridge { alpha: f64 },
    Lasso { alpha: f64 },
    PlsSvr { components: usize, c: f64, epsilon: f64 },
}

impl Hyper {
    pub fn method(&self) -> Method {
        match self {
            Hyper::Ridge { .. } => Method::Ridge,
            Hyper::Lasso { .. } => Method::Lasso,
            Hyper::PlsSvr { .. } => Method::PlsSvr,
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::Ridge { alpha } | Hyper::Lasso { alpha } => write!(f, "alpha={alpha}"),
            Hyper::PlsSvr { components, c, epsilon } => write!(f, "k={components} C={c} eps={epsilon}"),
        }
    }
}

/// Search grids. Regularization strengths apply to standardized features
/// and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub ridge_alpha: Vec<f64>,
    pub lasso_alpha: Vec<f64>,
    pub pls_components: Vec<usize>,
    pub svr_c: Vec<f64>,
    pub svr_epsilon: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            ridge_alpha: vec![1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4],
            lasso_alpha: vec![1e-4, 1e-3, 1e-2, 0.1],
            pls_components: vec![16, 32, 64, 128],
            svr_c: vec![0.1, 1.0, 10.0],
            svr_epsilon: vec![0.1, 0.5],
        }
    }
}

impl Grids {
    /// Candidates for `method`, with PLS component counts capped at what
    /// `n` samples of dimension `d` support.
    pub fn candidates(&self, method: Method, n: usize, d: usize) -> Vec<Hyper> {
        match method {
            Method::Ridge => self.ridge_alpha.iter().map(|&alpha| Hyper::Ridge { alpha }).collect(),
            Method::Lasso => self.lasso_alpha.iter().map(|&alpha| Hyper::Lasso { alpha }).collect(),
            Method::PlsSvr => {
                let cap = d.min(n.saturating_sub(1)).max(1);
                let mut ks: Vec<usize> = self.pls_components.iter().map(|&k| k.min(cap)).collect();
                ks.sort_unstable();
                ks.dedup();
                let mut out = Vec::new();
                for &components in &ks {
                    for &c in &self.svr_c {
                        for &epsilon in &self.svr_epsilon {
                            out.push(Hyper::PlsSvr { components, c, epsilon });
                        }
                    }
                }
                out
            }
        }
    }
}

/// A fitted predictor `w·z + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub hyper: Hyper,
}

impl LinearModel {
    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "feature length {} but the model expects {}",
                z.len(),
                self.weights.len()
            )));
        }
        Ok(self.intercept + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>())
    }

    pub fn predict_all(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        zs.iter().map(|z| self.predict(z)).collect()
    }
}

/// Column standardization. Constant columns keep scale 1 so they map to 0.
struct Standardized {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn standardize(zs: &[Vec<f64>], ys: &[f64]) -> Result<Standardized> {
    let n = zs.len();
    let d = zs.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(Error::Data("no training features".into()));
    }
    if zs.iter().any(|z| z.len() != d) || ys.len() != n {
        return Err(Error::Shape("ragged feature matrix".into()));
    }
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let y_scale = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(y_scale > 1e-12 * y_mean.abs().max(1.0)) {
        return Err(Error::Data("targets are constant; nothing to regress".into()));
    }
    let mut x_mean = vec![0.0; d];
    let mut x_scale = vec![0.0; d];
    for j in 0..d {
        let m = zs.iter().map(|z| z[j]).sum::<f64>() / n as f64;
        let s = (zs.iter().map(|z| (z[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        x_mean[j] = m;
        x_scale[j] = if s > 1e-12 { s } else { 1.0 };
    }
    let x = DMatrix::from_fn(n, d, |i, j| (zs[i][j] - x_mean[j]) / x_scale[j]);
    let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_scale));
    Ok(Standardized {
        x,
        y,
        x_mean,
        x_scale,
        y_mean,
        y_scale,
    })
}

impl Standardized {
    /// Maps a model `w_s·x_s + b_s` in standardized units back to raw units.
    fn unstandardize(&self, w: &DVector<f64>, b: f64, hyper: Hyper) -> LinearModel {
        let weights: Vec<f64> = (0..w.len()).map(|j| self.y_scale * w[j] / self.x_scale[j]).collect();
        let shift: f64 = weights.iter().zip(&self.x_mean).map(|(w, m)| w * m).sum();
        LinearModel {
            intercept: self.y_mean + self.y_scale * b - shift,
            weights,
            hyper,
        }
    }
}

fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    let singular = || Error::Numerical("ridge system is not positive definite".into());
    if d <= n {
        let a = x.transpose() * x + DMatrix::identity(d, d) * alpha;
        let chol = a.cholesky().ok_or_else(singular)?;
        Ok(chol.solve(&(x.transpose() * y)))
    } else {
        // Dual form: w = Xᵀ (XXᵀ + αI)⁻¹ y.
        let a = x * x.transpose() + DMatrix::identity(n, n) * alpha;
        let chol = a.cholesky().ok_or_else(singular)?;
        Ok(x.transpose() * chol.solve(y))
    }
}

/// Coordinate descent on `(1/2n)‖y − Xw‖² + α‖w‖₁`.
fn lasso(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let (n, d) = x.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..d).map(|j| x.column(j).norm_squared() / nf).collect();
    let mut w: DVector<f64> = DVector::zeros(d);
    let mut r = y.clone();
    for _ in 0..2000 {
        let mut max_delta: f64 = 0.0;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho: f64 = col.dot(&r) / nf + col_sq[j] * w[j];
            let new = rho.signum() * (rho.abs() - alpha).max(0.0) / col_sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                r.axpy(-delta, &col, 1.0);
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-7 {
            break;
        }
    }
    w
}

/// PLS1 (NIPALS). Returns the rotation `R` (d × k) with scores `T = X R`.
fn pls_rotation(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let d = x.ncols();
    let mut xr = x.clone();
    let mut yr = y.clone();
    let mut ws: Vec<DVector<f64>> = Vec::new();
    let mut ps: Vec<DVector<f64>> = Vec::new();
    for _ in 0..k {
        let mut w = xr.transpose() * &yr;
        let norm = w.norm();
        if norm < 1e-12 {
            break;
        }
        w /= norm;
        let t = &xr * &w;
        let tt = t.norm_squared();
        if tt < 1e-12 {
            break;
        }
        let p = xr.transpose() * &t / tt;
        let q = yr.dot(&t) / tt;
        xr -= &t * p.transpose();
        yr.axpy(-q, &t, 1.0);
        ws.push(w);
        ps.push(p);
    }
    if ws.is_empty() {
        return DMatrix::zeros(d, 1);
    }
    let w = DMatrix::from_columns(&ws);
    let p = DMatrix::from_columns(&ps);
    // PᵀW is upper triangular with a unit diagonal, so always invertible.
    let ptw = p.transpose() * &w;
    let inv = ptw.try_inverse().unwrap_or_else(|| DMatrix::identity(ws.len(), ws.len()));
    w * inv
}

/// Linear SVR with the ε-insensitive (L1) loss, solved by dual coordinate
/// descent. A constant feature absorbs the bias. Returns `(w, b)`.
fn linear_svr(t: &DMatrix<f64>, y: &DVector<f64>, c: f64, epsilon: f64, seed: u64) -> (DVector<f64>, f64) {
    let (n, k) = t.shape();
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_iterator(k + 1, t.row(i).iter().copied().chain(std::iter::once(1.0))))
        .collect();
    let q: Vec<f64> = rows.iter().map(|r| r.norm_squared()).collect();
    let mut beta = vec![0.0; n];
    let mut w = DVector::zeros(k + 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        order.shuffle(&mut rng);
        let mut max_violation: f64 = 0.0;
        for &i in &order {
            let g = w.dot(&rows[i]) - y[i];
            let (gp, gn) = (g + epsilon, g - epsilon);
            let violation = if beta[i] == 0.0 {
                (-gp).max(gn).max(0.0)
            } else if beta[i] >= c {
                gp.max(0.0)
            } else if beta[i] <= -c {
                (-gn).max(0.0)
            } else if beta[i] > 0.0 {
                gp.abs()
            } else {
                gn.abs()
            };
            max_violation = max_violation.max(violation);
            let h = q[i];
            let step = if gp < h * beta[i] {
                -gp / h
            } else if gn > h * beta[i] {
                -gn / h
            } else {
                -beta[i]
            };
            let new = (beta[i] + step).clamp(-c, c);
            let delta = new - beta[i];
            if delta != 0.0 {
                w.axpy(delta, &rows[i], 1.0);
                beta[i] = new;
            }
        }
        if max_violation < 1e-4 {
            break;
        }
    }
    let b = w[k];
    (w.rows(0, k).into_owned(), b)
}

/// Fits one regressor with fixed hyperparameters.
pub fn fit_with(zs: &[Vec<f64>], ys: &[f64], hyper: Hyper) -> Result<LinearModel> {
    let s = standardize(zs, ys)?;
    let (w, b) = match hyper {
        Hyper::Ridge { alpha } => (ridge(&s.x, &s.y, alpha)?, 0.0),
        Hyper::Lasso { alpha } => (lasso(&s.x, &s.y, alpha), 0.0),
        Hyper::PlsSvr { components, c, epsilon } => {
            let r = pls_rotation(&s.x, &s.y, components);
            let t = &s.x * &r;
            let (v, b) = linear_svr(&t, &s.y, c, epsilon, components as u64);
            (r * v, b)
        }
    };
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical(format!("{} fit produced non-finite weights", hyper.method())));
    }
    Ok(s.unstandardize(&w, b, hyper))
}

/// Score of one hyperparameter setting under `folds`-fold cross-validation:
/// the mean over folds of (PCC + SROCC)/2. Folds where a correlation is
/// undefined score −1.
fn inner_score(zs: &[Vec<f64>], ys: &[f64], hyper: Hyper, folds: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for held in folds {
        let mut is_held = vec![false; zs.len()];
        held.iter().for_each(|&i| is_held[i] = true);
        let train: Vec<usize> = (0..zs.len()).filter(|&i| !is_held[i]).collect();
        let tz: Vec<Vec<f64>> = train.iter().map(|&i| zs[i].clone()).collect();
        let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
        let score = fit_with(&tz, &ty, hyper)
            .and_then(|m| {
                let pred: Vec<f64> = held.iter().map(|&i| m.predict(&zs[i])).collect::<Result<_>>()?;
                let truth: Vec<f64> = held.iter().map(|&i| ys[i]).collect();
                metrics(&pred, &truth)
            })
            .map_or(-1.0, |m| m.selection_score());
        total += score;
    }
    total / folds.len() as f64
}

/// Picks the method and hyperparameters maximizing the inner
/// cross-validated (PCC + SROCC)/2, then refits on all records.
pub fn fit_regressor(
    zs: &[Vec<f64>],
    ys: &[f64],
    methods: &[Method],
    grids: &Grids,
    inner_folds: usize,
    seed: u64,
) -> Result<LinearModel> {
    fit_regressor_grouped(zs, ys, None, methods, grids, inner_folds, seed)
}

/// Inner folds of whole groups, so that records sharing a group never sit
/// on both sides of a model-selection split. Uses fewer folds when there
/// are fewer groups than `inner_folds`.
fn group_folds(groups: &[&str], inner_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut ids: Vec<&str> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Data(format!("{} content group(s) are too few for model selection", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = inner_folds.min(ids.len());
    let fold_of: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (i, g) in groups.iter().enumerate() {
        folds[fold_of[g]].push(i);
    }
    Ok(folds)
}

/// [`fit_regressor`] with optional per-record group labels for the inner
/// split.
pub fn fit_regressor_grouped(
    zs: &[Vec<f64>],
    ys: &[f64],
    groups: Option<&[&str]>,
    methods: &[Method],
    grids: &Grids,
    inner_folds: usize,
    seed: u64,
) -> Result<LinearModel> {
    let n = zs.len();
    if inner_folds < 2 || n < 2 * inner_folds {
        return Err(Error::Data(format!(
            "{n} records are too few for {inner_folds}-fold model selection"
        )));
    }
    if methods.is_empty() {
        return Err(Error::Config("no regression methods selected".into()));
    }
    standardize(zs, ys)?;
    let folds: Vec<Vec<usize>> = match groups {
        Some(g) if g.len() == n => group_folds(g, inner_folds, seed)?,
        Some(g) => return Err(Error::Shape(format!("{} group labels for {n} records", g.len()))),
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (0..inner_folds)
                .map(|f| order.iter().copied().skip(f).step_by(inner_folds).collect())
                .collect()
        }
    };
    let d = zs[0].len();
    let inner_n = n - folds.iter().map(Vec::len).max().unwrap_or(0);
    let mut best: Option<(f64, Hyper)> = None;
    for &method in methods {
        for hyper in grids.candidates(method, inner_n, d) {
            let score = inner_score(zs, ys, hyper, &folds);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, hyper));
            }
        }
    }
    let (_, hyper) = best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?;
    fit_with(zs, ys, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::metrics::spearman;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn synthetic(n: usize, d: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let zs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let ys = zs
            .iter()
            .map(|z| 3.0 + z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (zs, ys, w)
    }

    #[test]
    fn grouped_inner_folds_keep_groups_whole() {
        let groups: Vec<String> = (0..40).map(|i| format!("g{}", i % 7)).collect();
        let refs: Vec<&str> = groups.iter().map(String::as_str).collect();
        let folds = group_folds(&refs, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 40);
        for (a, fa) in folds.iter().enumerate() {
            for fb in &folds[a + 1..] {
                assert!(fa.iter().all(|&i| fb.iter().all(|&j| refs[i] != refs[j])));
            }
        }
        assert_eq!(group_folds(&refs[..1], 5, 0).unwrap_err().class(), crate::ErrorClass::Data);
        assert_eq!(group_folds(&["a", "b", "a"], 5, 0).unwrap().len(), 2);
    }

    #[test]
    fn grouped_fit_rejects_mislabelled_groups() {
        let (zs, ys, _) = synthetic(30, 3, 0.0, 2);
        let g = ["x"; 29];
        let err = fit_regressor_grouped(&zs, &ys, Some(&g), &[Method::Ridge], &Grids::default(), 5, 0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn ridge_recovers_linear_targets() {
        let (zs, ys, _) = synthetic(170, 10, 0.0, 1);
        let m = fit_regressor(&zs[..120], &ys[..120], &[Method::Ridge], &Grids::default(), 5, 0).unwrap();
        let pred = m.predict_all(&zs[120..]).unwrap();
        assert!((spearman(&pred, &ys[120..]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn every_method_fits_linear_data() {
        let (zs, ys, _) = synthetic(100, 8, 0.01, 2);
        for method in Method::ALL {
            let m = fit_regressor(&zs, &ys, &[method], &Grids::default(), 5, 0).unwrap();
            assert_eq!(m.hyper.method(), method);
            let pred = m.predict_all(&zs).unwrap();
            assert!(spearman(&pred, &ys).unwrap() > 0.98, "{method}");
        }
    }

    #[test]
    fn noise_targets_do_not_generalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let zs: Vec<Vec<f64>> = (0..400).map(|_| (0..10).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let m = fit_regressor(&zs[..200], &ys[..200], &[Method::Ridge], &Grids::default(), 5, 0).unwrap();
        let pred = m.predict_all(&zs[200..]).unwrap();
        assert!(spearman(&pred, &ys[200..]).unwrap().abs() < 0.3);
    }

    #[test]
    fn predictions_are_linear() {
        let (zs, ys, _) = synthetic(60, 6, 0.1, 3);
        let (a, b) = (&zs[0], &zs[1]);
        let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.3 * x + 0.7 * y).collect();
        for hyper in [
            Hyper::Ridge { alpha: 1.0 },
            Hyper::Lasso { alpha: 0.01 },
            Hyper::PlsSvr { components: 4, c: 1.0, epsilon: 0.1 },
        ] {
            let m = fit_with(&zs, &ys, hyper).unwrap();
            let expect = 0.3 * m.predict(a).unwrap() + 0.7 * m.predict(b).unwrap();
            assert!((m.predict(&mix).unwrap() - expect).abs() < 1e-9, "{hyper}");
        }
    }

    #[test]
    fn lasso_selects_sparse_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs: Vec<Vec<f64>> = (0..80).map(|_| (0..12).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<f64> = zs.iter().map(|z| 2.0 * z[0] - z[3]).collect();
        let m = fit_with(&zs, &ys, Hyper::Lasso { alpha: 0.05 }).unwrap();
        for (j, w) in m.weights.iter().enumerate() {
            if j != 0 && j != 3 {
                assert_eq!(*w, 0.0, "coefficient {j}");
            }
        }
        assert!(m.weights[0] > 0.0 && m.weights[3] < 0.0);
    }

    #[test]
    fn pls_with_full_rank_matches_least_squares() {
        let (zs, ys, w) = synthetic(40, 5, 0.0, 5);
        let s = standardize(&zs, &ys).unwrap();
        let r = pls_rotation(&s.x, &s.y, 5);
        let t = &s.x * &r;
        let coef = (t.transpose() * &t).try_inverse().unwrap() * t.transpose() * &s.y;
        let model = s.unstandardize(&(r * coef), 0.0, Hyper::Ridge { alpha: 0.0 });
        for (a, b) in model.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        assert!(matches!(fit_regressor(&zs, &[1.0; 20], &Method::ALL, &Grids::default(), 5, 0), Err(Error::Data(_))));
        let ys: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(fit_regressor(&zs[..8], &ys[..8], &Method::ALL, &Grids::default(), 5, 0), Err(Error::Data(_))));
    }
}
