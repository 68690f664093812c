//! Solver-neutral mixed-integer linear model and the HiGHS backend.

use highs::{HighsModelStatus, RowProblem, Sense};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub terms: Vec<(usize, f64)>,
}

/// Minimisation model: `min c'x + offset` s.t. `lower <= Ax <= upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearModel {
    pub columns: Vec<Column>,
    pub constraints: Vec<Constraint>,
    pub objective_offset: f64,
}

impl LinearModel {
    pub fn add_column(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.columns.push(Column {
            name: name.into(),
            lower,
            upper,
            cost,
            integer: false,
        });
        self.columns.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.columns.push(Column {
            name: name.into(),
            lower: 0.0,
            upper: 1.0,
            cost,
            integer: true,
        });
        self.columns.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        terms: Vec<(usize, f64)>,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            lower,
            upper,
            terms,
        });
        self.constraints.len() - 1
    }

    pub fn add_equality(&mut self, name: impl Into<String>, rhs: f64, terms: Vec<(usize, f64)>) -> usize {
        self.add_constraint(name, rhs, rhs, terms)
    }

    pub fn integer_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| self.columns[j].integer)
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_offset
            + self
                .columns
                .iter()
                .zip(x)
                .map(|(c, v)| c.cost * v)
                .sum::<f64>()
    }

    /// Largest bound, row or integrality violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (c, &v) in self.columns.iter().zip(x) {
            worst = worst.max(c.lower - v).max(v - c.upper);
            if c.integer {
                worst = worst.max((v - v.round()).abs());
            }
        }
        for r in &self.constraints {
            let a: f64 = r.terms.iter().map(|&(j, k)| k * x[j]).sum();
            worst = worst.max(r.lower - a).max(a - r.upper);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub mip_rel_gap: f64,
    pub time_limit_s: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mip_rel_gap: 1e-4,
            time_limit_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub mip_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Infeasible,
    Failed,
}

pub fn solve(model: &LinearModel, opts: &SolveOptions) -> std::result::Result<MilpSolution, (Outcome, String)> {
    if model.columns.is_empty() {
        return Ok(MilpSolution {
            values: Vec::new(),
            objective: model.objective_offset,
            mip_gap: 0.0,
        });
    }
    let mut pb = RowProblem::default();
    let cols: Vec<_> = model
        .columns
        .iter()
        .map(|c| pb.add_column_with_integrality(c.cost, c.lower..=c.upper, c.integer))
        .collect();
    for r in &model.constraints {
        let terms: Vec<_> = r.terms.iter().map(|&(j, k)| (cols[j], k)).collect();
        pb.add_row(r.lower..=r.upper, &terms);
    }
    let mut m = pb.optimise(Sense::Minimise);
    m.make_quiet();
    m.set_option("mip_rel_gap", opts.mip_rel_gap);
    if let Some(t) = opts.time_limit_s {
        m.set_option("time_limit", t);
    }
    let solved = m.solve();
    match solved.status() {
        HighsModelStatus::Optimal => {}
        HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
            return Err((Outcome::Infeasible, format!("{:?}", solved.status())))
        }
        s => return Err((Outcome::Failed, format!("solver stopped with status {s:?}"))),
    }
    let values = solved.get_solution().columns().to_vec();
    let mut values = values;
    for (v, c) in values.iter_mut().zip(&model.columns) {
        if c.integer {
            *v = v.round();
        }
    }
    let objective = model.objective(&values);
    let mip_gap = if model.columns.iter().any(|c| c.integer) {
        solved.mip_gap()
    } else {
        0.0
    };
    Ok(MilpSolution {
        values,
        objective,
        mip_gap,
    })
}

pub(crate) fn solver_error((outcome, msg): (Outcome, String)) -> Error {
    match outcome {
        Outcome::Infeasible => Error::Infeasible(vec![msg]),
        Outcome::Failed => Error::Solver(msg),
    }
}

/// Convenience for callers that only want a `Result`.
pub fn solve_model(model: &LinearModel, opts: &SolveOptions) -> Result<MilpSolution> {
    solve(model, opts).map_err(solver_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_mixed_integer_problem() {
        // min -x - 2y, x + y <= 3.5, x - y >= 1, y integer
        let mut m = LinearModel::default();
        let x = m.add_column("x", 0.0, f64::INFINITY, -1.0);
        let y = m.columns.len();
        m.columns.push(Column {
            name: "y".into(),
            lower: 0.0,
            upper: f64::INFINITY,
            cost: -2.0,
            integer: true,
        });
        m.add_constraint("c1", f64::NEG_INFINITY, 3.5, vec![(x, 1.0), (y, 1.0)]);
        m.add_constraint("c2", 1.0, f64::INFINITY, vec![(x, 1.0), (y, -1.0)]);
        let s = solve_model(&m, &SolveOptions::default()).unwrap();
        assert!((s.values[x] - 2.5).abs() < 1e-9);
        assert_eq!(s.values[y], 1.0);
        assert!((s.objective + 4.5).abs() < 1e-9);
        assert!(m.max_violation(&s.values) < 1e-9);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut m = LinearModel::default();
        let x = m.add_column("x", 0.0, 1.0, 1.0);
        m.add_constraint("c", 2.0, f64::INFINITY, vec![(x, 1.0)]);
        assert!(matches!(solve(&m, &SolveOptions::default()), Err((Outcome::Infeasible, _))));
    }
}
