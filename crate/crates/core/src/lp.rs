//! Dense two-phase primal simplex for `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Pivoting uses Dantzig's rule and falls back to Bland's rule after a run of
//! degenerate pivots, which rules out cycling.

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    /// Row-major `rows x vars`.
    constraints: Vec<f64>,
    rhs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexOptions {
    /// Pivot and feasibility tolerance.
    pub tol: f64,
    pub max_pivots: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { tol: 1e-9, max_pivots: 50_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, constraints: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let vars = objective.len();
        if constraints.len() != rhs.len() {
            return invalid(format!("{} constraint rows but {} right-hand sides", constraints.len(), rhs.len()));
        }
        if let Some(r) = constraints.iter().position(|row| row.len() != vars) {
            return invalid(format!("constraint row {r} does not have {vars} coefficients"));
        }
        let finite = |v: &f64| v.is_finite();
        if !objective.iter().all(finite) || !rhs.iter().all(finite) || !constraints.iter().flatten().all(finite) {
            return invalid("linear program data must be finite");
        }
        Ok(LinearProgram { objective, constraints: constraints.concat(), rhs })
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn solve(&self, options: SimplexOptions) -> Result<LpSolution> {
        Tableau::new(self).run(self, options)
    }
}

struct Tableau {
    rows: usize,
    /// original variables followed by one artificial per row
    cols: usize,
    vars: usize,
    /// `rows x (cols + 1)`; last column is the rhs
    a: Vec<f64>,
    /// reduced costs, last entry is minus the objective value
    cost: Vec<f64>,
    basis: Vec<usize>,
    /// columns allowed to enter
    active: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let (rows, vars) = (lp.rows(), lp.vars());
        let cols = vars + rows;
        let width = cols + 1;
        let mut a = vec![0.0; rows * width];
        for r in 0..rows {
            let sign = if lp.rhs[r] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..vars {
                a[r * width + j] = sign * lp.constraints[r * vars + j];
            }
            a[r * width + vars + r] = 1.0;
            a[r * width + cols] = sign * lp.rhs[r];
        }
        Tableau {
            rows,
            cols,
            vars,
            a,
            cost: vec![0.0; width],
            basis: (vars..cols).collect(),
            active: vec![true; cols],
            pivots: 0,
        }
    }

    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    /// Reduced costs for objective `c` given the current basis.
    fn price(&mut self, c: &[f64]) {
        let w = self.width();
        self.cost = c.to_vec();
        self.cost.resize(w, 0.0);
        for r in 0..self.rows {
            let cb = c[self.basis[r]];
            if cb != 0.0 {
                for j in 0..w {
                    self.cost[j] -= cb * self.a[r * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.a[pr * w + pc];
        for j in 0..w {
            self.a[pr * w + j] /= p;
        }
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                for (a, &pv) in self.a[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                    *a -= f * pv;
                }
                self.a[r * w + pc] = 0.0;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (c, &pv) in self.cost.iter_mut().zip(&pivot_row) {
                *c -= f * pv;
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Iterates to optimality for the currently priced objective.
    fn optimize(&mut self, options: SimplexOptions) -> Result<()> {
        let mut degenerate_run = 0;
        loop {
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -options.tol;
            for j in 0..self.cols {
                if !self.active[j] || self.cost[j] >= -options.tol {
                    continue;
                }
                if bland {
                    enter = Some(j);
                    break;
                }
                if self.cost[j] < best {
                    best = self.cost[j];
                    enter = Some(j);
                }
            }
            let Some(pc) = enter else {
                return Ok(());
            };
            if self.pivots >= options.max_pivots {
                return Err(Error::IterationLimit(options.max_pivots));
            }
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let coef = self.at(r, pc);
                if coef > options.tol {
                    let ratio = self.at(r, self.cols) / coef;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - options.tol
                                || (ratio <= lratio + options.tol && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Err(Error::Unbounded);
            };
            degenerate_run = if ratio.abs() <= options.tol { degenerate_run + 1 } else { 0 };
            self.pivot(pr, pc);
        }
    }

    fn run(mut self, lp: &LinearProgram, options: SimplexOptions) -> Result<LpSolution> {
        let scale = lp.rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));

        // phase 1: drive the artificials to zero
        let mut phase1 = vec![0.0; self.cols];
        phase1[self.vars..].iter_mut().for_each(|c| *c = 1.0);
        self.price(&phase1);
        self.optimize(options)?;
        if -self.cost[self.cols] > options.tol * scale * (self.rows.max(1) as f64) {
            return Err(Error::Infeasible);
        }

        // pivot remaining artificials out, dropping redundant rows
        let mut r = 0;
        while r < self.rows {
            if self.basis[r] >= self.vars {
                let col = (0..self.vars).find(|&j| self.at(r, j).abs() > 1e3 * options.tol);
                match col {
                    Some(j) => self.pivot(r, j),
                    None => {
                        self.remove_row(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
        for j in self.vars..self.cols {
            self.active[j] = false;
        }

        // phase 2
        let mut c = lp.objective.clone();
        c.resize(self.cols, 0.0);
        self.price(&c);
        self.optimize(options)?;

        let mut x = vec![0.0; self.vars];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.vars {
                x[b] = self.at(r, self.cols).max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: self.pivots })
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width();
        self.a.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}
