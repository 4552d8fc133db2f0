//! Exponential saturation model `h(y) = h0 + a (1 - exp(-b (y - y0)))`.
//!
//! `h0` and `y0` are held fixed; `a` and `b` are fitted by projected gradient
//! descent on the squared-error loss `L = Σ (q_i - h(y_i))²`. The step size
//! is adaptive: a step that would raise the loss is rejected and the step
//! halved, an accepted step grows it. Accepted iterates therefore never
//! increase the loss.

use alloc::vec::Vec;

use crate::sum::CompensatedSum;

/// Lower bound enforced on the rate `b` after every step.
pub const MIN_RATE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaturationModel {
    pub h0: f64,
    pub y0: f64,
    pub a: f64,
    pub b: f64,
    pub final_loss: f64,
    pub iterations_run: u64,
    pub converged: bool,
}

impl SaturationModel {
    /// A model with given parameters and no fit history.
    pub fn from_parameters(h0: f64, y0: f64, a: f64, b: f64) -> Self {
        Self { h0, y0, a, b, final_loss: 0.0, iterations_run: 0, converged: false }
    }

    /// `1 - exp(-b (y - y0))`.
    pub fn shape(&self, y: f64) -> f64 {
        -libm::expm1(-self.b * (y - self.y0))
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.h0 + self.a * self.shape(y)
    }

    /// `h0 + a`, the limit as `y` grows.
    pub fn asymptote(&self) -> f64 {
        self.h0 + self.a
    }
}

pub fn model_eval(model: &SaturationModel, y: f64) -> f64 {
    model.eval(y)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("no observations")]
    EmptyData,
    #[error("need at least 3 distinct years, got {distinct}")]
    TooFewPoints { distinct: usize },
    #[error("observation {index} is not finite")]
    NonFiniteData { index: usize },
    #[error("loss diverged at iteration {iteration} (a = {a}, b = {b}, loss = {loss})")]
    DivergedLoss { iteration: u64, a: f64, b: f64, loss: f64 },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(&'static str),
}

fn sorted_by_year(data: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = data.to_vec();
    sorted.sort_by(|l, r| l.0.total_cmp(&r.0));
    sorted
}

/// Sum of squared residuals, accumulated in ascending-year order.
pub fn loss(model: &SaturationModel, data: &[(f64, f64)]) -> Result<f64, FitError> {
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    Ok(sorted_by_year(data)
        .iter()
        .map(|&(y, q)| {
            let r = q - model.eval(y);
            r * r
        })
        .collect::<CompensatedSum>()
        .value())
}

/// `(dL/da, dL/db)`. With `d = y - y0`, `r = q - h(y)`:
/// `dL/da = -2 Σ r (1 - e^{-bd})`, `dL/db = -2 Σ r a d e^{-bd}`.
pub fn loss_gradient(model: &SaturationModel, data: &[(f64, f64)]) -> Result<(f64, f64), FitError> {
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    let mut ga = CompensatedSum::new();
    let mut gb = CompensatedSum::new();
    for (y, q) in sorted_by_year(data) {
        let d = y - model.y0;
        let decay = libm::exp(-model.b * d);
        let r = q - model.eval(y);
        ga.add(-2.0 * r * model.shape(y));
        gb.add(-2.0 * r * model.a * d * decay);
    }
    Ok((ga.value(), gb.value()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Initial step size.
    pub learning_rate: f64,
    pub max_iterations: u64,
    /// Stop once the projected gradient's ∞-norm falls below this. A fit
    /// that stalls at loss precision counts as converged when the gradient is
    /// below its square root.
    pub grad_tolerance: f64,
    /// Defaults to `max(q) - min(q)`.
    pub init_a: Option<f64>,
    pub init_b: f64,
    /// Defaults to the observation at the earliest year.
    pub h0: Option<f64>,
    /// Defaults to the earliest year.
    pub y0: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_iterations: 200_000,
            grad_tolerance: 1e-10,
            init_a: None,
            init_b: 0.1,
            h0: None,
            y0: None,
        }
    }
}

const STEP_GROWTH: f64 = 1.5;

/// Squared-error objective in coordinates shifted by `y0`.
struct Objective {
    h0: f64,
    points: Vec<(f64, f64)>,
}

impl Objective {
    fn model(&self, a: f64, b: f64) -> SaturationModel {
        SaturationModel::from_parameters(self.h0, 0.0, a, b)
    }

    fn loss(&self, a: f64, b: f64) -> f64 {
        loss(&self.model(a, b), &self.points).unwrap_or(f64::NAN)
    }

    fn gradient(&self, a: f64, b: f64) -> (f64, f64) {
        loss_gradient(&self.model(a, b), &self.points).unwrap_or((f64::NAN, f64::NAN))
    }
}

fn project(a: f64, b: f64) -> (f64, f64) {
    (a.max(0.0), b.max(MIN_RATE))
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected_gradient(a: f64, b: f64, (ga, gb): (f64, f64)) -> (f64, f64) {
    let ga = if a <= 0.0 && ga > 0.0 { 0.0 } else { ga };
    let gb = if b <= MIN_RATE && gb > 0.0 { 0.0 } else { gb };
    (ga, gb)
}

/// Fits `a` and `b` with `h0`, `y0` held fixed.
pub fn fit(data: &[(f64, f64)], config: &FitConfig) -> Result<SaturationModel, FitError> {
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(FitError::InvalidConfig("learning_rate must be positive"));
    }
    if [config.h0, config.y0, config.init_a].iter().flatten().any(|x| !x.is_finite()) {
        return Err(FitError::InvalidConfig("h0, y0 and init_a must be finite when set"));
    }
    if config.max_iterations < 1 {
        return Err(FitError::InvalidConfig("max_iterations must be at least 1"));
    }
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    if let Some(index) = data.iter().position(|(y, q)| !y.is_finite() || !q.is_finite()) {
        return Err(FitError::NonFiniteData { index });
    }
    let sorted = sorted_by_year(data);
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1].0 != w[0].0 {
            distinct += 1;
        }
    }
    if distinct < 3 {
        return Err(FitError::TooFewPoints { distinct });
    }

    let (first_year, first_q) = sorted[0];
    let y0 = config.y0.unwrap_or(first_year);
    let h0 = config.h0.unwrap_or(first_q);
    let (q_min, q_max) =
        sorted.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, q)| (lo.min(q), hi.max(q)));
    let objective = Objective { h0, points: sorted.iter().map(|&(y, q)| (y - y0, q)).collect() };

    let (mut a, mut b) = project(config.init_a.unwrap_or(q_max - q_min), config.init_b);
    let mut current = objective.loss(a, b);
    if !current.is_finite() {
        return Err(FitError::DivergedLoss { iteration: 0, a, b, loss: current });
    }
    let mut step = config.learning_rate;
    let mut converged = false;
    let mut iteration = 0;
    while iteration < config.max_iterations {
        let grad = objective.gradient(a, b);
        let (pa, pb) = projected_gradient(a, b, grad);
        if pa.abs().max(pb.abs()) < config.grad_tolerance {
            converged = true;
            break;
        }
        iteration += 1;
        // Backtrack until the loss does not increase.
        let mut last_rejected = current;
        loop {
            let (na, nb) = project(a - step * grad.0, b - step * grad.1);
            let candidate = objective.loss(na, nb);
            if candidate.is_finite() && candidate <= current {
                if na == a && nb == b {
                    // Step too small to move in floating point.
                    step = 0.0;
                } else {
                    a = na;
                    b = nb;
                    current = candidate;
                    step *= STEP_GROWTH;
                }
                break;
            }
            last_rejected = candidate;
            step *= 0.5;
            if step < f64::MIN_POSITIVE {
                break;
            }
        }
        if step < f64::MIN_POSITIVE {
            if !last_rejected.is_finite() {
                return Err(FitError::DivergedLoss { iteration, a, b, loss: last_rejected });
            }
            // No representable step decreases the loss. Once residuals are
            // non-zero the loss cannot resolve gradients much below ~1e-9, so
            // this is accepted as convergence when the gradient is small.
            let (pa, pb) = projected_gradient(a, b, objective.gradient(a, b));
            converged = pa.abs().max(pb.abs()) < libm::sqrt(config.grad_tolerance);
            break;
        }
    }
    Ok(SaturationModel { h0, y0, a, b, final_loss: current, iterations_run: iteration, converged })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaturationError {
    #[error("saturation fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("rate b must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("saturation levels must be strictly ascending")]
    LevelsNotAscending,
}

/// Year at which `1 - exp(-b (y - y0))` reaches `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaturationYear {
    pub level: f64,
    pub exact_year: f64,
    /// `floor(exact_year)`: the calendar year during which the level is crossed.
    pub reported_year: i64,
}

pub fn saturation_year(model: &SaturationModel, level: f64) -> Result<SaturationYear, SaturationError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SaturationError::InvalidFraction(level));
    }
    if model.b.is_nan() || model.b <= 0.0 {
        return Err(SaturationError::NonPositiveRate(model.b));
    }
    let exact_year = model.y0 - libm::log1p(-level) / model.b;
    Ok(SaturationYear { level, exact_year, reported_year: libm::floor(exact_year) as i64 })
}

pub fn saturation_table(model: &SaturationModel, levels: &[f64]) -> Result<Vec<SaturationYear>, SaturationError> {
    if levels.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(core::cmp::Ordering::Less)) {
        return Err(SaturationError::LevelsNotAscending);
    }
    levels.iter().map(|&x| saturation_year(model, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn published() -> SaturationModel {
        SaturationModel::from_parameters(0.35, 2013.0, 0.0935, 0.1029)
    }

    fn generated(model: &SaturationModel, years: core::ops::RangeInclusive<i32>) -> Vec<(f64, f64)> {
        years.map(|y| (f64::from(y), model.eval(f64::from(y)))).collect()
    }

    #[test]
    fn eval_examples() {
        let m = published();
        assert_eq!(model_eval(&m, 2013.0), 0.35);
        assert!((m.eval(1e6) - 0.4435).abs() < 1e-15);
        assert_eq!(m.asymptote(), 0.35 + 0.0935);
        let flat = SaturationModel::from_parameters(0.2, 2000.0, 0.0, 0.7);
        for y in [1990.0, 2000.0, 2030.5] {
            assert_eq!(flat.eval(y), 0.2);
        }
    }

    #[test]
    fn loss_examples() {
        let m = published();
        assert!(loss(&m, &generated(&m, 2013..=2025)).unwrap() < 1e-24);
        assert!((loss(&m, &[(2013.0, 0.45)]).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(loss(&m, &[]), Err(FitError::EmptyData));
        assert_eq!(loss_gradient(&m, &[]), Err(FitError::EmptyData));
    }

    #[test]
    fn loss_ignores_input_order() {
        let m = published();
        let mut data = vec![(2015.0, 0.4), (2013.0, 0.3), (2020.0, 0.41)];
        let l1 = loss(&m, &data).unwrap();
        data.reverse();
        assert_eq!(l1, loss(&m, &data).unwrap());
    }

    #[test]
    fn gradient_vanishes_at_generating_parameters() {
        let m = published();
        let (ga, gb) = loss_gradient(&m, &generated(&m, 2013..=2025)).unwrap();
        assert!(ga.abs() < 1e-12 && gb.abs() < 1e-12, "{ga} {gb}");
    }

    #[test]
    fn gradient_in_rate_vanishes_without_amplitude() {
        let m = SaturationModel::from_parameters(0.35, 2013.0, 0.0, 0.3);
        let data = [(2013.0, 0.1), (2016.0, 0.9), (2020.0, 0.4)];
        assert_eq!(loss_gradient(&m, &data).unwrap().1, 0.0);
    }

    #[test]
    fn noiseless_recovery() {
        let truth = published();
        let cfg = FitConfig { h0: Some(0.35), y0: Some(2013.0), ..FitConfig::default() };
        let m = fit(&generated(&truth, 2013..=2025), &cfg).unwrap();
        assert!(m.converged);
        assert!((m.a / 0.0935 - 1.0).abs() < 1e-4, "{m:?}");
        assert!((m.b / 0.1029 - 1.0).abs() < 1e-4, "{m:?}");
        assert!(m.final_loss < 1e-12);
    }

    #[test]
    fn default_anchor_is_first_observation() {
        let truth = published();
        let m = fit(&generated(&truth, 2013..=2025), &FitConfig::default()).unwrap();
        assert_eq!(m.h0, 0.35);
        assert_eq!(m.y0, 2013.0);
        assert!(m.converged);
    }

    #[test]
    fn constant_data_collapses_amplitude() {
        let data: Vec<(f64, f64)> = (2013..=2025).map(|y| (f64::from(y), 0.42)).collect();
        let m = fit(&data, &FitConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.a.abs() < 1e-4);
        // Non-zero starting amplitude must still be driven back to zero.
        let m = fit(&data, &FitConfig { init_a: Some(0.05), ..FitConfig::default() }).unwrap();
        assert!(m.converged, "{m:?}");
        assert!(m.a.abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn too_few_points() {
        let data = [(2013.0, 0.3), (2014.0, 0.31), (2014.0, 0.32)];
        assert_eq!(fit(&data, &FitConfig::default()), Err(FitError::TooFewPoints { distinct: 2 }));
        assert_eq!(fit(&[], &FitConfig::default()), Err(FitError::EmptyData));
        assert_eq!(fit(&[(2013.0, f64::NAN)], &FitConfig::default()), Err(FitError::NonFiniteData { index: 0 }));
    }

    #[test]
    fn invalid_config() {
        let data = [(2013.0, 0.3), (2014.0, 0.31), (2015.0, 0.32)];
        let bad = FitConfig { learning_rate: 0.0, ..FitConfig::default() };
        assert!(matches!(fit(&data, &bad), Err(FitError::InvalidConfig(_))));
        let bad = FitConfig { max_iterations: 0, ..FitConfig::default() };
        assert!(matches!(fit(&data, &bad), Err(FitError::InvalidConfig(_))));
    }

    #[test]
    fn non_consecutive_years() {
        let truth = published();
        let data: Vec<(f64, f64)> =
            [2013, 2016, 2017, 2021, 2024].iter().map(|&y| (f64::from(y), truth.eval(f64::from(y)))).collect();
        let m = fit(&data, &FitConfig::default()).unwrap();
        assert!(m.converged);
        assert!((m.b / 0.1029 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn diverging_initial_loss_is_reported() {
        let data = [(0.0, 0.3), (1.0, 0.31), (2.0, 0.32)];
        // exp(+b*1e4) overflows for points before y0.
        let cfg = FitConfig { y0: Some(1e4), init_b: 1.0, ..FitConfig::default() };
        assert!(matches!(fit(&data, &cfg), Err(FitError::DivergedLoss { iteration: 0, .. })));
    }

    #[test]
    fn published_saturation_table() {
        let rows = saturation_table(&published(), &[0.90, 0.95, 0.99]).unwrap();
        let reported: Vec<i64> = rows.iter().map(|r| r.reported_year).collect();
        assert_eq!(reported, vec![2035, 2042, 2057]);
        for (row, exact) in rows.iter().zip([2035.38, 2042.11, 2057.75]) {
            assert!((row.exact_year - exact).abs() < 0.01, "{row:?}");
        }
    }

    #[test]
    fn half_saturation() {
        // 2013 + ln(2) / 0.1029 = 2019.7361...
        let row = saturation_year(&published(), 0.5).unwrap();
        assert!((row.exact_year - 2_019.736_1).abs() < 1e-4);
        assert_eq!(row.reported_year, 2019);
    }

    #[test]
    fn table_validation() {
        let m = published();
        assert!(saturation_table(&m, &[]).unwrap().is_empty());
        assert_eq!(saturation_year(&m, 1.0), Err(SaturationError::InvalidFraction(1.0)));
        assert_eq!(saturation_year(&m, 0.0), Err(SaturationError::InvalidFraction(0.0)));
        assert!(matches!(saturation_year(&m, f64::NAN), Err(SaturationError::InvalidFraction(_))));
        assert_eq!(saturation_table(&m, &[0.9, 0.5]), Err(SaturationError::LevelsNotAscending));
        assert_eq!(saturation_table(&m, &[0.9, 1.5]), Err(SaturationError::InvalidFraction(1.5)));
        let flat = SaturationModel::from_parameters(0.35, 2013.0, 0.1, 0.0);
        assert_eq!(saturation_year(&flat, 0.5), Err(SaturationError::NonPositiveRate(0.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn inversion_consistency(a in 0.001f64..1.0, b in 0.001f64..2.0, h0 in -1.0f64..1.0, y0 in 1900.0f64..2100.0, x in 0.01f64..0.99) {
            let m = SaturationModel::from_parameters(h0, y0, a, b);
            let s = saturation_year(&m, x).unwrap();
            prop_assert!((m.eval(s.exact_year) - (h0 + a * x)).abs() < 1e-9);
        }

        #[test]
        fn translation_invariance(shift in -500i32..500, a in 0.02f64..0.2, b in 0.03f64..0.4) {
            let truth = SaturationModel::from_parameters(0.3, 2013.0, a, b);
            let data = generated(&truth, 2013..=2025);
            let moved: Vec<(f64, f64)> = data.iter().map(|&(y, q)| (y + f64::from(shift), q)).collect();
            let m1 = fit(&data, &FitConfig::default()).unwrap();
            let m2 = fit(&moved, &FitConfig::default()).unwrap();
            prop_assert!((m1.a - m2.a).abs() < 1e-8 && (m1.b - m2.b).abs() < 1e-8);
        }
    }
}
