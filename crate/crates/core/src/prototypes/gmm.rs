//! Class-wise Gaussian mixtures with fixed uniform priors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EmbeddingSample;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmMode {
    /// M-step normalized by the weighted responsibility mass.
    Standard,
    /// M-step normalized by the class set size.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Draw from the component Gaussian.
    Gaussian,
    /// `mu + xi * Sigma u` with `xi ~ U[0, 1]` and `u` a random unit vector.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture {
    pub initialized: bool,
    pub live: Vec<Component>,
    /// Exponential moving average of `live`, used for sampling.
    pub shadow: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmBank {
    pub num_classes: usize,
    pub components: usize,
    pub dim: usize,
    /// Ridge added to every covariance.
    pub eps: f64,
    pub covariance: CovarianceKind,
    pub classes: Vec<ClassMixture>,
}

/// Per-class outcome of one [`GmmBank::em_update`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmReport {
    /// Confidence-weighted log-likelihood before the first and after every
    /// iteration; empty for skipped classes.
    pub log_likelihood: Vec<Vec<f64>>,
    pub initialized_now: Vec<bool>,
}

fn cholesky(cov: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    cov.clone().cholesky()
}

/// `log N(z | mean, cov)` for every row of `data` against one component.
fn log_densities(
    data: &[DVector<f64>],
    comp: &Component,
    class: usize,
    m: usize,
) -> Result<Vec<f64>> {
    let chol = cholesky(&comp.cov).ok_or_else(|| {
        Error::Numeric(format!("covariance of class {class} component {m} is not positive definite"))
    })?;
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let dim = comp.mean.len() as f64;
    Ok(data
        .iter()
        .map(|z| {
            let diff = z - &comp.mean;
            let y = l.solve_lower_triangular(&diff).expect("triangular solve");
            -0.5 * (dim * LN_2PI + log_det + y.norm_squared())
        })
        .collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl GmmBank {
    pub fn new(
        num_classes: usize,
        components: usize,
        dim: usize,
        eps: f64,
        covariance: CovarianceKind,
    ) -> Result<GmmBank> {
        if num_classes == 0 || components == 0 || dim == 0 || !(eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid GMM bank: {num_classes} classes, {components} components, dim {dim}, eps {eps}"
            )));
        }
        let blank = Component {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        };
        let class = ClassMixture {
            initialized: false,
            live: vec![blank.clone(); components],
            shadow: vec![blank; components],
        };
        Ok(GmmBank {
            num_classes,
            components,
            dim,
            eps,
            covariance,
            classes: vec![class; num_classes],
        })
    }

    /// Fixed mixture weight of every component.
    pub fn prior(&self) -> f64 {
        1.0 / self.components as f64
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.classes[class].initialized
    }

    fn regularize(&self, cov: &mut DMatrix<f64>) {
        let sym = (&*cov + cov.transpose()) * 0.5;
        *cov = sym;
        if self.covariance == CovarianceKind::Diagonal {
            let d = cov.diagonal();
            *cov = DMatrix::from_diagonal(&d);
        }
        for i in 0..self.dim {
            cov[(i, i)] += self.eps;
        }
    }

    /// Confidence-weighted log-likelihood of samples under the live mixture.
    pub fn log_likelihood(&self, class: usize, samples: &[EmbeddingSample]) -> Result<f64> {
        let data: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_column_slice(&s.z)).collect();
        let (ll, _) = self.e_step(class, &self.classes[class].live, &data, samples)?;
        Ok(ll)
    }

    /// Responsibilities (`n x M`) and the weighted log-likelihood.
    fn e_step(
        &self,
        class: usize,
        comps: &[Component],
        data: &[DVector<f64>],
        samples: &[EmbeddingSample],
    ) -> Result<(f64, DMatrix<f64>)> {
        let n = data.len();
        let m = comps.len();
        let log_prior = self.prior().ln();
        let mut logp = DMatrix::zeros(n, m);
        for (k, comp) in comps.iter().enumerate() {
            let d = log_densities(data, comp, class, k)?;
            for i in 0..n {
                logp[(i, k)] = log_prior + d[i];
            }
        }
        let mut ll = 0.0;
        let mut resp = DMatrix::zeros(n, m);
        let mut row = vec![0.0; m];
        for i in 0..n {
            for k in 0..m {
                row[k] = logp[(i, k)];
            }
            let lse = log_sum_exp(&row);
            ll += samples[i].confidence * lse;
            for k in 0..m {
                resp[(i, k)] = (row[k] - lse).exp();
            }
        }
        Ok((ll, resp))
    }

    fn m_step(
        &self,
        comps: &mut [Component],
        data: &[DVector<f64>],
        samples: &[EmbeddingSample],
        resp: &DMatrix<f64>,
        mode: EmMode,
    ) {
        let n = data.len();
        for (k, comp) in comps.iter_mut().enumerate() {
            let weights: Vec<f64> = (0..n).map(|i| samples[i].confidence * resp[(i, k)]).collect();
            let mass: f64 = weights.iter().sum();
            let norm = match mode {
                EmMode::Standard => mass,
                EmMode::Literal => n as f64,
            };
            if !(mass > 1e-300) || !(norm > 0.0) {
                // No responsibility reached this component; keep it.
                continue;
            }
            let mut mean = DVector::zeros(self.dim);
            for (z, &w) in data.iter().zip(&weights) {
                mean.axpy(w, z, 1.0);
            }
            mean /= norm;
            let mut cov = DMatrix::zeros(self.dim, self.dim);
            for (z, &w) in data.iter().zip(&weights) {
                let d = z - &mean;
                cov.ger(w, &d, &d, 1.0);
            }
            cov /= norm;
            self.regularize(&mut cov);
            comp.mean = mean;
            comp.cov = cov;
        }
    }

    /// k-means++ seeding of the means; every covariance starts at the class
    /// sample covariance.
    fn initialize<R: Rng>(&mut self, class: usize, data: &[DVector<f64>], rng: &mut R) {
        let n = data.len();
        let mut centres: Vec<usize> = vec![rng.random_range(0..n)];
        let mut d2: Vec<f64> = data.iter().map(|z| (z - &data[centres[0]]).norm_squared()).collect();
        while centres.len() < self.components {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centres.push(next);
            for (i, z) in data.iter().enumerate() {
                d2[i] = d2[i].min((z - &data[next]).norm_squared());
            }
        }
        let mean_all = data.iter().fold(DVector::zeros(self.dim), |acc, z| acc + z) / n as f64;
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for z in data {
            let d = z - &mean_all;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= n as f64;
        self.regularize(&mut cov);
        let live: Vec<Component> = centres
            .iter()
            .map(|&c| Component {
                mean: data[c].clone(),
                cov: cov.clone(),
            })
            .collect();
        let mix = &mut self.classes[class];
        mix.shadow = live.clone();
        mix.live = live;
        mix.initialized = true;
    }

    /// Runs `iters` EM iterations per class on its sample set. Classes with
    /// fewer than `components` samples, or no confidence mass, are skipped.
    pub fn em_update<R: Rng>(
        &mut self,
        sets: &[Vec<EmbeddingSample>],
        iters: usize,
        mode: EmMode,
        rng: &mut R,
    ) -> Result<EmReport> {
        if sets.len() != self.num_classes {
            return Err(Error::Argument(format!(
                "{} sample sets for {} classes",
                sets.len(),
                self.num_classes
            )));
        }
        let mut report = EmReport {
            log_likelihood: vec![Vec::new(); self.num_classes],
            initialized_now: vec![false; self.num_classes],
        };
        for (class, set) in sets.iter().enumerate() {
            let mass: f64 = set.iter().map(|s| s.confidence).sum();
            if set.len() < self.components || !(mass > 0.0) {
                continue;
            }
            if let Some(bad) = set.iter().find(|s| s.z.len() != self.dim) {
                return Err(Error::Argument(format!(
                    "embedding of length {} in a bank of dim {}",
                    bad.z.len(),
                    self.dim
                )));
            }
            let data: Vec<DVector<f64>> = set.iter().map(|s| DVector::from_column_slice(&s.z)).collect();
            if !self.classes[class].initialized {
                self.initialize(class, &data, rng);
                report.initialized_now[class] = true;
            }
            let mut comps = self.classes[class].live.clone();
            let mut trace = Vec::with_capacity(iters + 1);
            for _ in 0..iters {
                let (ll, resp) = self.e_step(class, &comps, &data, set)?;
                trace.push(ll);
                self.m_step(&mut comps, &data, set, &resp, mode);
            }
            let (ll, _) = self.e_step(class, &comps, &data, set)?;
            trace.push(ll);
            self.classes[class].live = comps;
            report.log_likelihood[class] = trace;
        }
        Ok(report)
    }

    /// `shadow <- alpha * shadow + (1 - alpha) * live` on initialized classes.
    pub fn ema_update(&mut self, alpha: f64) {
        for mix in self.classes.iter_mut().filter(|m| m.initialized) {
            for (s, l) in mix.shadow.iter_mut().zip(&mix.live) {
                s.mean = &s.mean * alpha + &l.mean * (1.0 - alpha);
                let cov = &s.cov * alpha + &l.cov * (1.0 - alpha);
                s.cov = (&cov + cov.transpose()) * 0.5;
            }
        }
    }

    /// Unnormalized draws from the shadow mixture of `class`.
    pub fn sample_raw<R: Rng>(
        &self,
        class: usize,
        count: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        if class >= self.num_classes {
            return Err(Error::Argument(format!("class {class} out of range")));
        }
        let mix = &self.classes[class];
        if !mix.initialized {
            return Err(Error::State(format!("GMM of class {class} is not initialized")));
        }
        if count == 0 {
            return Ok(Vec::new());
        }
        let factors: Vec<DMatrix<f64>> = match mode {
            SamplingMode::Gaussian => mix
                .shadow
                .iter()
                .enumerate()
                .map(|(m, c)| {
                    cholesky(&c.cov).map(|ch| ch.l()).ok_or_else(|| {
                        Error::Numeric(format!(
                            "covariance of class {class} component {m} is not positive definite"
                        ))
                    })
                })
                .collect::<Result<_>>()?,
            SamplingMode::Literal => Vec::new(),
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let m = rng.random_range(0..self.components);
            let comp = &mix.shadow[m];
            let xi = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = match mode {
                SamplingMode::Gaussian => &comp.mean + &factors[m] * xi,
                SamplingMode::Literal => {
                    let u = xi.normalize();
                    let scale: f64 = rng.random_range(0.0..=1.0);
                    &comp.mean + (&comp.cov * u) * scale
                }
            };
            out.push(s);
        }
        Ok(out)
    }

    /// Unit-length virtual prototypes for `class`.
    pub fn sample_prototypes<R: Rng>(
        &self,
        class: usize,
        count: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .sample_raw(class, count, mode, rng)?
            .into_iter()
            .map(|s| {
                let n = s.norm().max(1e-12);
                s.iter().map(|x| x / n).collect()
            })
            .collect())
    }
}
