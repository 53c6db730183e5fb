//! 24-hour grid-vs-PV production dispatch: minimize cost_grid·ΣP_grid +
//! cost_pv·ΣP_pv subject to per-hour balance P_load = P_grid + P_pv,
//! P_grid ≥ 0 and 0 ≤ P_pv ≤ P_pv,max. Hours decouple and the feasible
//! region per hour is an interval, so a closed form is optimal; an
//! independent brute-force validator guards that argument.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::plot::{self, PlotError, Series};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("{what}[{hour}] = {value} is negative")]
    NegativeInput {
        what: &'static str,
        hour: usize,
        value: f64,
    },
    #[error("{what} = {value} must be a non-negative finite cost")]
    BadCost { what: &'static str, value: f64 },
    #[error("{what} contain non-finite values")]
    NonFinite { what: &'static str },
    #[error("problem has no hours")]
    EmptyHorizon,
    #[error("load has {load} hours but pv_max has {pv_max}")]
    LengthMismatch { load: usize, pv_max: usize },
    #[error("solution horizon {got} does not match problem horizon {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("{path}:{line}: {reason}")]
    BadCsv {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Plot(#[from] PlotError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    /// kW demand per hour.
    pub load: Vec<f64>,
    /// kW PV cap per hour.
    pub pv_max: Vec<f64>,
    /// $/kWh.
    pub cost_grid: f64,
    pub cost_pv: f64,
}

impl DispatchProblem {
    /// Flat profile over `hours` hours; handy for fixtures.
    pub fn uniform(
        hours: usize,
        load: f64,
        pv_max: f64,
        cost_grid: f64,
        cost_pv: f64,
    ) -> DispatchProblem {
        DispatchProblem {
            load: vec![load; hours],
            pv_max: vec![pv_max; hours],
            cost_grid,
            cost_pv,
        }
    }

    pub fn horizon(&self) -> usize {
        self.load.len()
    }

    fn validate(&self) -> Result<(), DispatchError> {
        if self.load.is_empty() {
            return Err(DispatchError::EmptyHorizon);
        }
        if self.load.len() != self.pv_max.len() {
            return Err(DispatchError::LengthMismatch {
                load: self.load.len(),
                pv_max: self.pv_max.len(),
            });
        }
        for (what, series) in [("load", &self.load), ("pv_max", &self.pv_max)] {
            for (hour, &v) in series.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DispatchError::NonFinite { what: "profiles" });
                }
                if v < 0.0 {
                    return Err(DispatchError::NegativeInput { what, hour, value: v });
                }
            }
        }
        for (what, c) in [("cost_grid", self.cost_grid), ("cost_pv", self.cost_pv)] {
            if !(c.is_finite() && c >= 0.0) {
                return Err(DispatchError::BadCost { what, value: c });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSolution {
    pub p_grid: Vec<f64>,
    pub p_pv: Vec<f64>,
    pub total_cost: f64,
}

fn schedule_cost(problem: &DispatchProblem, p_grid: &[f64], p_pv: &[f64]) -> f64 {
    problem.cost_grid * p_grid.iter().sum::<f64>() + problem.cost_pv * p_pv.iter().sum::<f64>()
}

/// Per-hour closed form: when PV is no costlier than grid it serves as much
/// of the load as its cap allows (ties prefer PV); otherwise it stays idle.
pub fn solve_dispatch(problem: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    problem.validate()?;
    let mut p_pv = Vec::with_capacity(problem.horizon());
    let mut p_grid = Vec::with_capacity(problem.horizon());
    for (&load, &cap) in problem.load.iter().zip(&problem.pv_max) {
        let pv = if problem.cost_pv <= problem.cost_grid {
            load.min(cap)
        } else {
            0.0
        };
        p_pv.push(pv);
        p_grid.push(load - pv);
    }
    let total_cost = schedule_cost(problem, &p_grid, &p_pv);
    Ok(DispatchSolution {
        p_grid,
        p_pv,
        total_cost,
    })
}

/// Negative forecast loads are regression noise, not demand; clamp to zero
/// and report which hours were touched so the caller can log it.
pub fn sanitize_load(load: &mut [f64]) -> Vec<usize> {
    let mut clamped = Vec::new();
    for (hour, v) in load.iter_mut().enumerate() {
        if *v < 0.0 {
            *v = 0.0;
            clamped.push(hour);
        }
    }
    clamped
}

#[derive(Debug, Clone)]
pub struct ConstraintResiduals {
    /// |load − grid − pv| per hour.
    pub balance: Vec<f64>,
    /// Bound violations per hour, 0 when satisfied.
    pub grid_lower: Vec<f64>,
    pub pv_lower: Vec<f64>,
    pub pv_upper: Vec<f64>,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        [&self.balance, &self.grid_lower, &self.pv_lower, &self.pv_upper]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &r| acc.max(r))
    }
}

#[derive(Debug, Clone)]
pub struct DispatchVerdict {
    pub feasible: bool,
    pub optimal: bool,
    pub max_residual: f64,
    /// Declared total_cost minus Eq.-style evaluation of the schedule.
    pub cost_residual: f64,
    /// Schedule cost minus the brute-force cost (may be slightly negative:
    /// the brute force is discretized).
    pub cost_gap: f64,
    pub residuals: ConstraintResiduals,
}

const FEASIBILITY_TOL: f64 = 1e-9;
const BRUTE_STEPS: usize = 10_000;

fn brute_force_hour(load: f64, pv_max: f64, cost_grid: f64, cost_pv: f64) -> f64 {
    if pv_max == 0.0 {
        return cost_grid * load;
    }
    let delta = pv_max / BRUTE_STEPS as f64;
    let mut best = f64::INFINITY;
    for k in 0..=BRUTE_STEPS {
        let pv = k as f64 * delta;
        if pv > load {
            break;
        }
        let cost = cost_grid * (load - pv) + cost_pv * pv;
        if cost < best {
            best = cost;
        }
    }
    best
}

/// Check feasibility (balance and bounds to 1e-9) and optimality against an
/// independent per-hour exhaustive search over p_pv ∈ {0, δ, …, pv_max},
/// δ = pv_max/10⁴. Optimal iff the cost gap is within the discretization
/// bound cost_grid·δ·T.
pub fn validate_dispatch(
    problem: &DispatchProblem,
    solution: &DispatchSolution,
) -> Result<DispatchVerdict, DispatchError> {
    problem.validate()?;
    let horizon = problem.horizon();
    if solution.p_grid.len() != horizon || solution.p_pv.len() != horizon {
        return Err(DispatchError::HorizonMismatch {
            expected: horizon,
            got: solution.p_grid.len().max(solution.p_pv.len()),
        });
    }
    let mut residuals = ConstraintResiduals {
        balance: Vec::with_capacity(horizon),
        grid_lower: Vec::with_capacity(horizon),
        pv_lower: Vec::with_capacity(horizon),
        pv_upper: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let grid = solution.p_grid[t];
        let pv = solution.p_pv[t];
        residuals
            .balance
            .push((problem.load[t] - grid - pv).abs());
        residuals.grid_lower.push((-grid).max(0.0));
        residuals.pv_lower.push((-pv).max(0.0));
        residuals.pv_upper.push((pv - problem.pv_max[t]).max(0.0));
    }
    let max_residual = residuals.max();
    let evaluated = schedule_cost(problem, &solution.p_grid, &solution.p_pv);
    let cost_residual = (solution.total_cost - evaluated).abs();
    let feasible = max_residual <= FEASIBILITY_TOL && cost_residual <= FEASIBILITY_TOL;

    let brute: f64 = problem
        .load
        .iter()
        .zip(&problem.pv_max)
        .map(|(&l, &c)| brute_force_hour(l, c, problem.cost_grid, problem.cost_pv))
        .sum();
    let cost_gap = evaluated - brute;
    let delta_max = problem
        .pv_max
        .iter()
        .fold(0.0f64, |acc, &c| acc.max(c / BRUTE_STEPS as f64));
    let tolerance = problem.cost_grid * delta_max * horizon as f64 + FEASIBILITY_TOL;
    let optimal = feasible && cost_gap <= tolerance;
    Ok(DispatchVerdict {
        feasible,
        optimal,
        max_residual,
        cost_residual,
        cost_gap,
        residuals,
    })
}

/// Read a problem profile from a `hour,load_kw,pv_max_kw` CSV. Hours must
/// be consecutive integers (starting at 0 or 1); costs come from the caller
/// because the file carries only the physical profile.
pub fn read_problem_csv(
    path: &Path,
    cost_grid: f64,
    cost_pv: f64,
) -> Result<DispatchProblem, DispatchError> {
    let text = std::fs::read_to_string(path).map_err(|source| DispatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, reason: String| DispatchError::BadCsv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    if header.trim() != "hour,load_kw,pv_max_kw" {
        return Err(bad(1, format!("expected header hour,load_kw,pv_max_kw, got {header:?}")));
    }
    let mut load = Vec::new();
    let mut pv_max = Vec::new();
    let mut prev_hour: Option<i64> = None;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(lineno, format!("expected 3 fields, got {}", fields.len())));
        }
        let hour: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| bad(lineno, format!("hour: {e}")))?;
        match prev_hour {
            None if hour == 0 || hour == 1 => {}
            None => return Err(bad(lineno, format!("hours must start at 0 or 1, got {hour}"))),
            Some(prev) if hour == prev + 1 => {}
            Some(prev) => {
                return Err(bad(lineno, format!("hour {hour} does not follow {prev}")));
            }
        }
        prev_hour = Some(hour);
        load.push(
            fields[1]
                .trim()
                .parse()
                .map_err(|e| bad(lineno, format!("load_kw: {e}")))?,
        );
        pv_max.push(
            fields[2]
                .trim()
                .parse()
                .map_err(|e| bad(lineno, format!("pv_max_kw: {e}")))?,
        );
    }
    let problem = DispatchProblem {
        load,
        pv_max,
        cost_grid,
        cost_pv,
    };
    problem.validate()?;
    Ok(problem)
}

/// `hour,load_kw,pv_kw,grid_kw` schedule rows.
pub fn write_solution_csv(
    problem: &DispatchProblem,
    solution: &DispatchSolution,
    path: &Path,
) -> Result<(), DispatchError> {
    let mut out = String::from("hour,load_kw,pv_kw,grid_kw\n");
    for t in 0..problem.horizon() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t, problem.load[t], solution.p_pv[t], solution.p_grid[t]
        ));
    }
    std::fs::write(path, out).map_err(|source| DispatchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchSummary {
    pub horizon: usize,
    pub total_cost: f64,
    pub grid_energy_kwh: f64,
    pub pv_energy_kwh: f64,
    pub cost_grid: f64,
    pub cost_pv: f64,
}

pub fn solution_summary(problem: &DispatchProblem, solution: &DispatchSolution) -> DispatchSummary {
    DispatchSummary {
        horizon: problem.horizon(),
        total_cost: solution.total_cost,
        grid_energy_kwh: solution.p_grid.iter().sum(),
        pv_energy_kwh: solution.p_pv.iter().sum(),
        cost_grid: problem.cost_grid,
        cost_pv: problem.cost_pv,
    }
}

/// Stacked-area chart of the schedule: PV at the bottom, grid on top.
pub fn dispatch_svg(
    problem: &DispatchProblem,
    solution: &DispatchSolution,
) -> Result<String, DispatchError> {
    let hours: Vec<f64> = (0..problem.horizon()).map(|t| t as f64).collect();
    let pv = Series::new(
        "pv",
        hours.iter().cloned().zip(solution.p_pv.iter().cloned()).collect(),
    );
    let grid = Series::new(
        "grid",
        hours.iter().cloned().zip(solution.p_grid.iter().cloned()).collect(),
    );
    Ok(plot::stacked_area_svg(
        "dispatch schedule",
        "hour",
        "kW",
        &hours,
        &[pv, grid],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;
    use proptest::prelude::*;

    fn reference_cost_fixture() -> DispatchProblem {
        DispatchProblem::uniform(24, 10.0, 4.0, 1.0, 0.4)
    }

    fn random_problem(prng: &mut Prng, hours: usize) -> DispatchProblem {
        DispatchProblem {
            load: (0..hours).map(|_| prng.uniform() * 10.0).collect(),
            pv_max: (0..hours).map(|_| prng.uniform() * 10.0).collect(),
            cost_grid: prng.uniform() * 2.0,
            cost_pv: prng.uniform() * 2.0,
        }
    }

    #[test]
    fn reference_cost_fixture_totals_182_40() {
        let problem = reference_cost_fixture();
        let solution = solve_dispatch(&problem).unwrap();
        assert!(solution.p_pv.iter().all(|&p| p == 4.0));
        assert!(solution.p_grid.iter().all(|&p| p == 6.0));
        assert!((solution.total_cost - 182.40).abs() < 1e-9);
        let verdict = validate_dispatch(&problem, &solution).unwrap();
        assert!(verdict.feasible && verdict.optimal);
        assert!(verdict.max_residual < 1e-9);
    }

    #[test]
    fn zero_cap_forces_all_grid() {
        let problem = DispatchProblem::uniform(24, 5.0, 0.0, 1.0, 0.4);
        let solution = solve_dispatch(&problem).unwrap();
        assert!(solution.p_pv.iter().all(|&p| p == 0.0));
        assert!((solution.total_cost - 120.0).abs() < 1e-9);
    }

    #[test]
    fn ample_cheap_pv_saturates_demand() {
        let problem = DispatchProblem::uniform(24, 3.0, 7.5, 1.0, 0.4);
        let solution = solve_dispatch(&problem).unwrap();
        assert!(solution.p_grid.iter().all(|&g| g == 0.0));
        assert!(solution.p_pv.iter().all(|&p| p == 3.0));
    }

    #[test]
    fn expensive_pv_stays_idle() {
        let problem = DispatchProblem::uniform(24, 3.0, 7.5, 0.4, 1.0);
        let solution = solve_dispatch(&problem).unwrap();
        assert!(solution.p_pv.iter().all(|&p| p == 0.0));
        assert!(solution.p_grid.iter().all(|&g| g == 3.0));
    }

    #[test]
    fn cost_tie_prefers_pv() {
        let problem = DispatchProblem::uniform(6, 5.0, 2.0, 0.7, 0.7);
        let solution = solve_dispatch(&problem).unwrap();
        assert!(solution.p_pv.iter().all(|&p| p == 2.0));
    }

    #[test]
    fn injected_balance_violation_is_reported() {
        let problem = reference_cost_fixture();
        let mut solution = solve_dispatch(&problem).unwrap();
        solution.p_grid[3] += 0.5;
        solution.total_cost = schedule_cost(&problem, &solution.p_grid, &solution.p_pv);
        let verdict = validate_dispatch(&problem, &solution).unwrap();
        assert!(!verdict.feasible);
        assert!((verdict.residuals.balance[3] - 0.5).abs() < 1e-12);
        assert!((verdict.max_residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn suboptimal_schedule_is_flagged() {
        let problem = reference_cost_fixture();
        let all_grid = DispatchSolution {
            p_grid: problem.load.clone(),
            p_pv: vec![0.0; 24],
            total_cost: problem.cost_grid * problem.load.iter().sum::<f64>(),
        };
        let verdict = validate_dispatch(&problem, &all_grid).unwrap();
        assert!(verdict.feasible);
        assert!(!verdict.optimal);
        assert!(verdict.cost_gap > 10.0);
    }

    #[test]
    fn hours_are_separable() {
        let mut prng = Prng::new(5);
        let problem = random_problem(&mut prng, 24);
        let whole = solve_dispatch(&problem).unwrap();
        for t in 0..24 {
            let single = DispatchProblem {
                load: vec![problem.load[t]],
                pv_max: vec![problem.pv_max[t]],
                cost_grid: problem.cost_grid,
                cost_pv: problem.cost_pv,
            };
            let hour = solve_dispatch(&single).unwrap();
            assert_eq!(hour.p_pv[0], whole.p_pv[t]);
            assert_eq!(hour.p_grid[0], whole.p_grid[t]);
        }
    }

    #[test]
    fn solver_matches_brute_force_on_random_instances() {
        let mut prng = Prng::new(77);
        for i in 0..100 {
            let hours = 1 + prng.below(24);
            let problem = random_problem(&mut prng, hours);
            let solution = solve_dispatch(&problem).unwrap();
            let verdict = validate_dispatch(&problem, &solution).unwrap();
            assert!(
                verdict.feasible && verdict.optimal,
                "instance {i}: gap {}",
                verdict.cost_gap
            );
        }
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut problem = reference_cost_fixture();
        problem.load[5] = -1.0;
        assert!(matches!(
            solve_dispatch(&problem),
            Err(DispatchError::NegativeInput { what: "load", hour: 5, .. })
        ));
        let mut problem = reference_cost_fixture();
        problem.cost_pv = -0.4;
        assert!(matches!(
            solve_dispatch(&problem),
            Err(DispatchError::BadCost { what: "cost_pv", .. })
        ));
        let problem = DispatchProblem {
            load: vec![1.0, 2.0],
            pv_max: vec![1.0],
            cost_grid: 1.0,
            cost_pv: 0.4,
        };
        assert!(matches!(
            solve_dispatch(&problem),
            Err(DispatchError::LengthMismatch { .. })
        ));
        assert!(matches!(
            solve_dispatch(&DispatchProblem::uniform(0, 1.0, 1.0, 1.0, 0.4)),
            Err(DispatchError::EmptyHorizon)
        ));
    }

    #[test]
    fn validator_rejects_horizon_mismatch() {
        let problem = reference_cost_fixture();
        let short = DispatchSolution {
            p_grid: vec![6.0; 23],
            p_pv: vec![4.0; 23],
            total_cost: 0.0,
        };
        assert!(matches!(
            validate_dispatch(&problem, &short),
            Err(DispatchError::HorizonMismatch { expected: 24, got: 23 })
        ));
    }

    #[test]
    fn sanitize_clamps_negative_forecasts() {
        let mut load = vec![-0.5, 3.0, -0.1, 0.0];
        let clamped = sanitize_load(&mut load);
        assert_eq!(load, vec![0.0, 3.0, 0.0, 0.0]);
        assert_eq!(clamped, vec![0, 2]);
    }

    #[test]
    fn csv_and_summary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("profile.csv");
        let mut text = String::from("hour,load_kw,pv_max_kw\n");
        for t in 0..24 {
            text.push_str(&format!("{t},10,4\n"));
        }
        std::fs::write(&input, text).unwrap();
        let problem = read_problem_csv(&input, 1.0, 0.4).unwrap();
        assert_eq!(problem, reference_cost_fixture());

        let solution = solve_dispatch(&problem).unwrap();
        let schedule = dir.path().join("schedule.csv");
        write_solution_csv(&problem, &solution, &schedule).unwrap();
        let written = std::fs::read_to_string(&schedule).unwrap();
        assert_eq!(written.lines().count(), 25);
        assert!(written.starts_with("hour,load_kw,pv_kw,grid_kw\n"));

        let summary = solution_summary(&problem, &solution);
        assert_eq!(summary.horizon, 24);
        assert!((summary.pv_energy_kwh - 96.0).abs() < 1e-9);
        assert!((summary.grid_energy_kwh - 144.0).abs() < 1e-9);

        let svg = dispatch_svg(&problem, &solution).unwrap();
        assert_eq!(svg.matches("class=\"layer\"").count(), 2);
    }

    #[test]
    fn malformed_csv_is_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "hour,load_kw,pv_max_kw\n0,1,1\n2,1,1\n").unwrap();
        match read_problem_csv(&path, 1.0, 0.4) {
            Err(DispatchError::BadCsv { line: 3, .. }) => {}
            other => panic!("expected BadCsv at line 3, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn raising_pv_caps_never_raises_cost(
            seed in any::<u64>(),
            hours in 1usize..24,
        ) {
            let mut prng = Prng::new(seed);
            let problem = random_problem(&mut prng, hours);
            let base = solve_dispatch(&problem).unwrap();
            let mut raised = problem.clone();
            for cap in raised.pv_max.iter_mut() {
                *cap += prng.uniform() * 3.0;
            }
            let better = solve_dispatch(&raised).unwrap();
            prop_assert!(better.total_cost <= base.total_cost + 1e-12);
        }

        #[test]
        fn scaling_costs_scales_cost_but_not_the_schedule(
            seed in any::<u64>(),
            scale in 0.01f64..100.0,
        ) {
            let mut prng = Prng::new(seed);
            let problem = random_problem(&mut prng, 24);
            let base = solve_dispatch(&problem).unwrap();
            let scaled_problem = DispatchProblem {
                cost_grid: problem.cost_grid * scale,
                cost_pv: problem.cost_pv * scale,
                ..problem.clone()
            };
            let scaled = solve_dispatch(&scaled_problem).unwrap();
            prop_assert_eq!(&scaled.p_pv, &base.p_pv);
            prop_assert_eq!(&scaled.p_grid, &base.p_grid);
            let expected = base.total_cost * scale;
            let err = (scaled.total_cost - expected).abs();
            prop_assert!(err <= 1e-12 * expected.abs().max(1.0), "err {}", err);
        }
    }
}
