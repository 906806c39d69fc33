use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BoundParams, NumericsError, ParamGroup, Tape, Var};

/// Settings for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor: entries whose gradients are both below it are compared absolutely.
    pub abs_floor: f64,
    /// Multiple of the central difference's rounding error `ε·|f|/step` below which a
    /// discrepancy is treated as noise. The effective floor is
    /// `max(abs_floor, roundoff_factor · ε·|f| / (step · tol))`.
    pub roundoff_factor: f64,
    /// Entries checked per parameter tensor; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-8,
            roundoff_factor: 10.0,
            max_entries: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub id: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    /// Denominator floor actually used.
    pub floor: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err > self.tol)
    }
}

/// Relative error with a floored denominator.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic gradients of a scalar function against central differences.
///
/// `f` records a scalar on a fresh tape from bound parameters. `analytic`, when
/// supplied, replaces the tape's own gradients (used to exercise the checker
/// itself against a corrupted gradient).
pub fn grad_check<F>(
    f: F,
    params: &ParamGroup<f64>,
    config: &GradCheckConfig,
    analytic: Option<&super::ParamGrads<f64>>,
) -> Result<GradCheckReport, NumericsError>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &BoundParams) -> Result<Var, NumericsError>,
{
    let computed;
    let analytic = match analytic {
        Some(a) => a,
        None => {
            let mut tape = Tape::new();
            let bound = tape.bind(params);
            let out = f(&mut tape, &bound)?;
            let grads = tape.backward(out)?;
            computed = bound.collect(&grads);
            &computed
        }
    };

    let eval = |p: &ParamGroup<f64>| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let bound = tape.bind(p);
        let out = f(&mut tape, &bound)?;
        Ok(tape.item(out))
    };

    let f0 = eval(params)?;
    let roundoff = f64::EPSILON * f0.abs() / config.step;
    let floor = config.abs_floor.max(config.roundoff_factor * roundoff / config.tol);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        tol: config.tol,
        floor,
        params: Vec::new(),
    };
    let ids: Vec<String> = params.ids().map(str::to_string).collect();
    for id in ids {
        let n = params.require(&id)?.len();
        let entries: Vec<usize> = if n <= config.max_entries {
            (0..n).collect()
        } else {
            let mut e = sample(&mut rng, n, config.max_entries).into_vec();
            e.sort_unstable();
            e
        };
        let a_grad = analytic.get(&id);
        let mut check = ParamCheck {
            id: id.clone(),
            checked: entries.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &j in &entries {
            let orig = work.require(&id)?.values()[j];
            work.get_mut(&id).expect("present").values_mut()[j] = orig + config.step;
            let up = eval(&work)?;
            work.get_mut(&id).expect("present").values_mut()[j] = orig - config.step;
            let down = eval(&work)?;
            work.get_mut(&id).expect("present").values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let a = a_grad.map_or(0.0, |g| g[j]);
            let e = rel_err(a, numeric, floor);
            if e > check.max_rel_err || (e.is_nan() && !check.max_rel_err.is_nan()) {
                check.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
                check.worst_index = j;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
