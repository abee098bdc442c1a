use super::treatment::{fit_treatment_models_with, iptw_weights_with, truncate, FittedTreatmentModels};
use super::{Averaging, EstimationError, EstimationSpecs, EstimatorKind, EstimatorWarning, PhiTable, TmleStep};
use crate::glm::{fit_glm, fit_logit_intercept, CompiledDesign, Family, FitResult, Link, ModelSpec, WlsFactor};
use crate::linalg::Matrix;
use crate::panel::{adherence, validate_staggered, AdherenceMatrix, LongPanel, Regime};
use crate::scalar::{expit, logit, Real};

/// Cached regression inputs for ICE/TMLE step `m`.
struct Step<T> {
    spec: ModelSpec,
    /// Units adherent through `m`, ascending.
    fit_units: Vec<usize>,
    /// Position of each fit unit among the prediction units (those adherent
    /// through `m - 1`, every unit at `m = 0`).
    fit_in_pred: Vec<usize>,
    x_fit: Matrix<T>,
    x_pred: Matrix<T>,
    w_fit: Vec<T>,
    factor: Option<WlsFactor<T>>,
}

/// Everything about one dataset that does not depend on which outcome
/// `Y_j` is being targeted: adherence, treatment fits, and per-step design
/// matrices and factorizations. One workspace serves every `(j, k)` cell
/// and every estimator.
pub struct Workspace<'a, T: Real> {
    panel: &'a LongPanel<T>,
    adh: AdherenceMatrix,
    specs: EstimationSpecs,
    t_max: usize,
    fit_w: Vec<T>,
    avg_w: Vec<T>,
    treatment: Option<FittedTreatmentModels<T>>,
    steps: Vec<Step<T>>,
}

impl<'a, T: Real> Workspace<'a, T> {
    /// Validates the design and prepares what `kinds` need through `t_max`.
    pub fn new(
        panel: &'a LongPanel<T>,
        regime: &Regime,
        specs: &EstimationSpecs,
        kinds: &[EstimatorKind],
        t_max: usize,
    ) -> Result<Self, EstimationError> {
        if t_max >= panel.n_times() {
            return Err(EstimationError::TimeOutOfRange { t: t_max, n_times: panel.n_times() });
        }
        validate_staggered(panel, regime)?;
        let adh = adherence(panel, regime);
        let fit_w = panel.fit_weights();
        let avg_w = match specs.averaging {
            Averaging::FitWeights => fit_w.clone(),
            Averaging::Trials => match panel.trials() {
                Some(tr) => tr.iter().map(|&n| T::from_u64(n).unwrap()).collect(),
                None => vec![T::one(); panel.n_units()],
            },
        };
        let needs_g = kinds.iter().any(|k| matches!(k, EstimatorKind::Iptw | EstimatorKind::Tmle));
        let needs_q = kinds.iter().any(|k| matches!(k, EstimatorKind::Ice | EstimatorKind::Tmle));
        let treatment = if needs_g {
            Some(fit_treatment_models_with(
                panel,
                &adh,
                &specs.numerator,
                &specs.denominator,
                specs.pooled_treatment,
            )?)
        } else {
            None
        };
        let mut ws = Self { panel, adh, specs: specs.clone(), t_max, fit_w, avg_w, treatment, steps: Vec::new() };
        if needs_q {
            ws.steps = (0..=t_max).map(|m| ws.build_step(m)).collect::<Result<_, _>>()?;
        }
        Ok(ws)
    }

    fn build_step(&self, m: usize) -> Result<Step<T>, EstimationError> {
        let spec = self.specs.outcome.for_step(m)?.clone();
        let fit_units = self.adh.adherent_units(Some(m));
        if fit_units.is_empty() {
            return Err(EstimationError::NoAdherentUnits(m));
        }
        let pred_units = self.adh.adherent_units(m.checked_sub(1));
        let mut fit_in_pred = Vec::with_capacity(fit_units.len());
        let mut p = 0;
        for &u in &fit_units {
            while pred_units[p] != u {
                p += 1;
            }
            fit_in_pred.push(p);
        }
        let ctx = || format!("outcome model at step m={m}");
        let compiled = CompiledDesign::new(self.panel, &spec, m).map_err(|e| EstimationError::glm(ctx(), e))?;
        let x_pred = compiled.rows(self.panel, &self.adh, &pred_units).map_err(|e| EstimationError::glm(ctx(), e))?;
        let x_fit = x_pred.select_rows(&fit_in_pred);
        let w_fit: Vec<T> = fit_units.iter().map(|&i| self.fit_w[i]).collect();
        let factor = if spec.family == Family::Gaussian {
            Some(WlsFactor::new(&x_fit, &w_fit).map_err(|e| EstimationError::glm(ctx(), e))?)
        } else {
            None
        };
        Ok(Step { spec, fit_units, fit_in_pred, x_fit, x_pred, w_fit, factor })
    }

    pub fn panel(&self) -> &LongPanel<T> {
        self.panel
    }

    pub fn adherence(&self) -> &AdherenceMatrix {
        &self.adh
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn specs(&self) -> &EstimationSpecs {
        &self.specs
    }

    pub fn treatment_models(&self) -> Option<&FittedTreatmentModels<T>> {
        self.treatment.as_ref()
    }

    pub fn averaging_weights(&self) -> &[T] {
        &self.avg_w
    }

    /// Stabilized weights `π_k` (truncated if configured).
    pub fn iptw_weights(&self, k: usize) -> Result<Vec<T>, EstimationError> {
        let fits = self.treatment.as_ref().ok_or(EstimationError::MissingTreatmentModels(k))?;
        let mut w = iptw_weights_with(self.panel, &self.adh, fits, k)?;
        if let Some(t) = self.specs.truncation {
            truncate(&mut w, &self.adh.adherent_units(Some(k)), t);
        }
        Ok(w)
    }

    /// IPTW estimate of `φ_{j,k}` for the outcome column `y` (all units):
    /// the `π_k`-weighted mean among units adherent through `k`.
    pub fn phi_iptw(&self, y: &[T], k: usize) -> Result<T, EstimationError> {
        let units = self.adh.adherent_units(Some(k));
        if units.is_empty() {
            return Err(EstimationError::NoAdherentUnits(k));
        }
        let pi = if k == 0 { vec![T::one(); self.panel.n_units()] } else { self.iptw_weights(k)? };
        let mut num = T::zero();
        let mut den = T::zero();
        for &i in &units {
            let w = pi[i] * self.fit_w[i];
            num += w * y[i];
            den += w;
        }
        Ok(num / den)
    }

    fn step(&self, m: usize) -> &Step<T> {
        &self.steps[m]
    }

    fn fit_step(&self, step: &Step<T>, q: &[T], m: usize) -> Result<Vec<T>, EstimationError> {
        match &step.factor {
            Some(f) => Ok(f.coefficients(&step.x_fit, &step.w_fit, q)),
            None => {
                let off = vec![T::zero(); q.len()];
                fit_glm(&step.x_fit, q, &step.w_fit, &off, step.spec.family, step.spec.link)
                    .map(|r| r.coefficients)
                    .map_err(|e| EstimationError::glm(format!("outcome model at step m={m}"), e))
            }
        }
    }

    fn linear_predictor(x: &Matrix<T>, beta: &[T], link: Link) -> Vec<T> {
        let eta = x.mul_vec(beta);
        match link {
            Link::Identity => eta,
            Link::Logit => eta.into_iter().map(expit).collect(),
        }
    }

    fn final_mean(&self, q: &[T]) -> T {
        // Step 0 predicts for every unit, in order.
        crate::stats::weighted_mean(q, &self.avg_w)
    }

    /// ICE estimate of `φ_{j,k}` for the outcome column `y`.
    pub fn phi_ice(&self, y: &[T], k: usize) -> Result<T, EstimationError> {
        self.require_steps(k)?;
        let mut q: Vec<T> = self.step(k).fit_units.iter().map(|&i| y[i]).collect();
        for m in (0..=k).rev() {
            let step = self.step(m);
            let beta = self.fit_step(step, &q, m)?;
            q = Self::linear_predictor(&step.x_pred, &beta, step.spec.link);
        }
        Ok(self.final_mean(&q))
    }

    fn require_steps(&self, k: usize) -> Result<(), EstimationError> {
        if self.steps.len() <= k {
            return Err(EstimationError::MissingOutcomeSteps(k));
        }
        Ok(())
    }

    /// Bounds `(L, U)` for the TMLE logit scale of outcome column `y`.
    pub fn tmle_bounds(&self, y: &[T], k: usize) -> Result<(T, T), EstimationError> {
        if let Some((l, u)) = self.specs.tmle.bounds {
            let (l, u) = (T::lit(l), T::lit(u));
            let inside = self.step(k).fit_units.iter().all(|&i| y[i] > l && y[i] < u);
            if !(l < u) || !inside {
                return Err(EstimationError::InvalidBounds(format!(
                    "bounds ({l}, {u}) must strictly contain the outcome"
                )));
            }
            return Ok((l, u));
        }
        if self.step(k).spec.link == Link::Logit {
            return Ok((T::zero(), T::one()));
        }
        let (lo, hi) = y.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
        let pad = if hi > lo { (hi - lo) * T::lit(0.05) } else { T::one() };
        Ok((lo - pad, hi + pad))
    }

    /// TMLE estimate of `φ_{j,k}`; targeting diagnostics are appended to `trace`.
    pub fn phi_tmle(
        &self,
        y: &[T],
        j: usize,
        k: usize,
        trace: &mut Vec<TmleStep>,
        warnings: &mut Vec<EstimatorWarning>,
    ) -> Result<T, EstimationError> {
        self.require_steps(k)?;
        let fits = self.treatment.as_ref().ok_or(EstimationError::MissingTreatmentModels(k))?;
        let (lo, hi) = self.tmle_bounds(y, k)?;
        let span = hi - lo;
        let clip = T::lit(self.specs.tmle.clip);
        let scale = |v: T| ((v - lo) / span).max(T::zero()).min(T::one());
        let clip_logit = |v: T| logit(scale(v).max(clip).min(T::one() - clip));

        // Incoming pseudo-outcome on the fit units of step m, original scale.
        let mut q: Vec<T> = self.step(k).fit_units.iter().map(|&i| y[i]).collect();
        for m in (0..=k).rev() {
            let step = self.step(m);
            let beta = self.fit_step(step, &q, m)?;
            let init_pred = Self::linear_predictor(&step.x_pred, &beta, step.spec.link);
            let off_pred: Vec<T> = init_pred.iter().map(|&v| clip_logit(v)).collect();
            let off_fit: Vec<T> = step.fit_in_pred.iter().map(|&p| off_pred[p]).collect();
            let resp: Vec<T> = q.iter().map(|&v| scale(v)).collect();
            let mut max_w = T::zero();
            let wts: Vec<T> = step
                .fit_units
                .iter()
                .zip(&step.w_fit)
                .map(|(&i, &w)| {
                    let inv = T::one() / fits.cumulative_follow(m, i);
                    max_w = max_w.max(inv);
                    w * inv
                })
                .collect();
            if max_w.as_f64() > self.specs.tmle.weight_cap {
                warnings.push(EstimatorWarning::ExtremeWeights { j, k, m, max_weight: max_w.as_f64() });
            }
            let flu: FitResult<T> = fit_logit_intercept(&resp, &wts, &off_fit, Family::Quasibinomial)
                .map_err(|e| EstimationError::glm(format!("TMLE fluctuation j={j} k={k} m={m}"), e))?;
            let eps = flu.coefficients[0];
            let mut num = T::zero();
            let mut den = T::zero();
            for ((&r, &o), &w) in resp.iter().zip(&off_fit).zip(&wts) {
                num += w * (r - expit(o + eps));
                den += w;
            }
            trace.push(TmleStep { j, k, m, epsilon: eps.as_f64(), score: (num / den).as_f64() });
            q = off_pred.iter().map(|&o| lo + span * expit(o + eps)).collect();
        }
        Ok(self.final_mean(&q))
    }

    /// `φ̂` cells `(k, k)` and `(k-1, k)` for `k = 0..=t`, with the outcome
    /// column for `(j, k)` supplied by `outcome`.
    pub fn phi_table(
        &self,
        kind: EstimatorKind,
        t: usize,
        outcome: &dyn Fn(usize, usize) -> Result<Vec<T>, EstimationError>,
        trace: &mut Vec<TmleStep>,
        warnings: &mut Vec<EstimatorWarning>,
    ) -> Result<PhiTable<T>, EstimationError> {
        if t > self.t_max {
            return Err(EstimationError::TimeOutOfRange { t, n_times: self.t_max + 1 });
        }
        let mut table = PhiTable::new(kind, t);
        for k in 0..=t {
            for j in [Some(k), k.checked_sub(1)].into_iter().flatten() {
                let y = outcome(j, k)?;
                let v = match kind {
                    EstimatorKind::Iptw => self.phi_iptw(&y, k)?,
                    EstimatorKind::Ice => self.phi_ice(&y, k)?,
                    EstimatorKind::Tmle => self.phi_tmle(&y, j, k, trace, warnings)?,
                };
                table.set(j, k, v);
            }
        }
        Ok(table)
    }

    /// Observed outcome column `Y_j` on the modelling scale.
    pub fn response(&self, j: usize) -> Vec<T> {
        self.panel.response_column(j)
    }

    /// Weighted mean of `Y_t` under the configured averaging.
    pub fn natural_course(&self, t: usize) -> T {
        crate::stats::weighted_mean(&self.panel.response_column(t), &self.avg_w)
    }

}
