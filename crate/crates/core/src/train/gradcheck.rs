//! Analytic-vs-numeric gradient comparison for the ranking loss.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_loss, loss_value, GradientTape, LossTerms, Objective};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::NormalizedGraph;
use crate::model::ChannelModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// How many coordinates to sample (all of them if fewer exist).
    pub coordinates: usize,
    /// Coordinates where both gradients are below this are skipped.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coordinates: 200,
            noise_floor: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub sampled: usize,
    pub checked: usize,
    /// Perturbation crossed a hinge, ReLU or |·| kink.
    pub skipped_kink: usize,
    /// Both gradients below the noise floor.
    pub skipped_floor: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sampled_coordinates\t{}", self.sampled)?;
        writeln!(f, "checked_coordinates\t{}", self.checked)?;
        writeln!(f, "skipped_kink\t{}", self.skipped_kink)?;
        writeln!(f, "skipped_noise_floor\t{}", self.skipped_floor)?;
        writeln!(f, "max_relative_error\t{:e}", self.max_rel_error)?;
        if let Some(w) = &self.worst {
            writeln!(
                f,
                "worst_coordinate\t{}[{},{}]\tanalytic={:e}\tnumeric={:e}",
                w.param, w.row, w.col, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares the hand-written backward pass against central differences.
pub fn gradient_check(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    terms: &LossTerms,
    objective: Objective,
    opts: &GradCheckOptions,
    exec: Exec,
) -> Result<GradCheckReport> {
    gradient_check_with(model, graph, terms, objective, opts, exec, |m| {
        evaluate_loss(m, graph, terms, objective, exec).map(|e| e.tape)
    })
}

/// Like [`gradient_check`] with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    model: &ChannelModel,
    graph: &NormalizedGraph,
    terms: &LossTerms,
    objective: Objective,
    opts: &GradCheckOptions,
    exec: Exec,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ChannelModel) -> Result<GradientTape>,
{
    let tape = analytic(model)?;
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|(_, p)| p.dim()).collect();
    if tape.len() != names.len() {
        return Err(Error::InvalidInput("gradient tape does not cover every parameter".into()));
    }
    for ((name, g), shape) in tape.iter().zip(&shapes) {
        if g.dim() != *shape {
            return Err(Error::InvalidInput(format!("gradient shape mismatch for {name}")));
        }
    }
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks = index::sample(&mut rng, total, opts.coordinates.min(total)).into_vec();
    picks.sort_unstable();

    let (_, base_pattern) = loss_value(model, graph, terms, objective, exec)?;
    let grads = tape.tensors();
    let mut report = GradCheckReport {
        sampled: picks.len(),
        checked: 0,
        skipped_kink: 0,
        skipped_floor: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let h = opts.step;
    for flat in picks {
        let (p, local) = locate(&shapes, flat);
        let (row, col) = (local / shapes[p].1, local % shapes[p].1);
        let eval_at = |delta: f64| -> Result<(f64, Vec<i8>)> {
            let mut m = model.clone();
            m.params_mut()[p][[row, col]] += delta;
            loss_value(&m, graph, terms, objective, exec)
        };
        let (lp, pat_p) = eval_at(h)?;
        let (lm, pat_m) = eval_at(-h)?;
        if pat_p != base_pattern || pat_m != base_pattern {
            report.skipped_kink += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let a = grads[p][[row, col]];
        if a.abs() < opts.noise_floor && numeric.abs() < opts.noise_floor {
            report.skipped_floor += 1;
            continue;
        }
        report.checked += 1;
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(WorstCoordinate {
                param: names[p].clone(),
                row,
                col,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

fn locate(shapes: &[(usize, usize)], mut flat: usize) -> (usize, usize) {
    for (p, (r, c)) in shapes.iter().enumerate() {
        if flat < r * c {
            return (p, flat);
        }
        flat -= r * c;
    }
    unreachable!("coordinate index out of range")
}
