//! End-to-end runs over a [`Scenario`]: sample sheets, build fields, weigh
//! paths, simulate bonds, and assemble the checks.
//!
//! When η is deterministic everything except the sheet itself is computed
//! once; for a grid-adapted η the market price of risk, kernel and bond
//! drift are rebuilt per path.

use ndarray::Array2;
use serde::Serialize;

use crate::bonds::{
    BondStepper, BondSurface, MartingaleAccumulator, MartingaleReport, ResolvedMarket,
};
use crate::ensemble::{run_ensemble, EnsemblePlan, PathTask};
use crate::error::Result;
use crate::field::{field_scales, fill_field};
use crate::grid::GridSpec;
use crate::measure::{
    lambda_time_integral, DensityCoefficients, NodePair, SheetMomentAccumulator, SheetTestReport,
};
use crate::mpr::{
    evaluate_conditions, evaluate_conditions_adapted, girsanov_kernel, lambda_from_eta,
    AdaptedConditionReport, ConditionReport, KernelGrid, MprSurface,
};
use crate::rng::PathStream;
use crate::scenario::Scenario;
use crate::sheet::{SheetPath, SheetSampler};
use crate::verify::{CheckResult, Criterion, Estimate, Merge, VerificationReport, WeightedStats};
use crate::warp::FieldKind;

/// Everything derived from η for one path (or for all paths when η is
/// deterministic).
struct Model {
    lambda: MprSurface,
    kernel: KernelGrid,
    density: DensityCoefficients,
    shift: Array2<f64>,
    stepper: BondStepper,
}

impl Model {
    fn build(sc: &Scenario, market: &ResolvedMarket, sheet: Option<&SheetPath>) -> Result<Self> {
        let eta = sc.eta.realize(&sc.grid, sheet)?;
        let lambda = lambda_from_eta(&eta, &sc.grid)?;
        let kernel = girsanov_kernel(&eta, &lambda, &sc.kind, &sc.grid)?;
        let density = DensityCoefficients::new(&kernel, &sc.grid)?;
        let shift = lambda_time_integral(&lambda, &sc.grid)?;
        let stepper = BondStepper::new(market, &lambda, &sc.grid)?;
        Ok(Self {
            lambda,
            kernel,
            density,
            shift,
            stepper,
        })
    }
}

/// Exact expectations of the discrete scheme for a deterministic η, by
/// `(time node, maturity node)`.
#[derive(Debug, Clone)]
pub struct DiscretePredictions {
    /// `E_P̃[Z̃]`: zero in continuous time, first order in the grid here.
    pub shifted_mean: Array2<f64>,
    /// `E_P̃[D] / P(0, T)`.
    pub reweighted_ratio: Array2<f64>,
    /// `E_P[D] / P(0, T) = exp(Σ λ σ Δt)`.
    pub physical_ratio: Array2<f64>,
}

pub struct Pipeline {
    scenario: Scenario,
    sampler: SheetSampler,
    h: Vec<f64>,
    market: ResolvedMarket,
    fixed: Option<Model>,
}

impl Pipeline {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let grid = &scenario.grid;
        let sampler = match &scenario.kind {
            FieldKind::Normalized => SheetSampler::plain(grid),
            FieldKind::Scaled(w) => SheetSampler::warped(grid, w)?,
        };
        let h = field_scales(&scenario.kind, grid);
        let market = scenario.market.resolve(grid)?;
        let fixed = if scenario.eta.is_deterministic() {
            Some(Model::build(&scenario, &market, None)?)
        } else {
            None
        };
        Ok(Self {
            scenario,
            sampler,
            h,
            market,
            fixed,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn grid(&self) -> &GridSpec {
        &self.scenario.grid
    }

    fn plan(&self, workers: usize) -> EnsemblePlan {
        EnsemblePlan::new(self.scenario.n_paths, self.scenario.seed)
            .with_chunk_paths(self.scenario.chunk_paths)
            .with_workers(workers)
    }

    fn with_model<R>(&self, sheet: &SheetPath, f: impl FnOnce(&Model) -> R) -> Result<R> {
        match &self.fixed {
            Some(m) => Ok(f(m)),
            None => Ok(f(&Model::build(&self.scenario, &self.market, Some(sheet))?)),
        }
    }

    pub fn predictions(&self) -> Option<DiscretePredictions> {
        let m = self.fixed.as_ref()?;
        let grid = self.grid();
        let dt = grid.dt();
        let widths = grid.cell_widths();
        let dims = (grid.time_nodes(), grid.maturity_nodes());
        let mut shifted_mean = Array2::zeros(dims);
        let mut log_q = Array2::<f64>::zeros(dims);
        let mut log_p = Array2::<f64>::zeros(dims);
        for i in 1..dims.0 {
            let k = i - 1;
            let mut gw = 0.0;
            for j in 0..dims.1 {
                gw += m.kernel.g[(k, j)] * widths[j];
                let lambda = m.lambda.lambda[(k, j)];
                let sigma = self.market.sigma[(k, j)];
                let mu = lambda - gw / self.h[j];
                shifted_mean[(i, j)] = shifted_mean[(k, j)] + mu * dt;
                log_q[(i, j)] = log_q[(k, j)] + sigma * mu * dt;
                log_p[(i, j)] = log_p[(k, j)] + sigma * lambda * dt;
            }
        }
        Some(DiscretePredictions {
            shifted_mean,
            reweighted_ratio: log_q.mapv(f64::exp),
            physical_ratio: log_p.mapv(f64::exp),
        })
    }

    /// Bond surface of a single path, as sampled inside every ensemble.
    pub fn bond_surface(&self, path: u64) -> Result<BondSurface> {
        let mut stream = PathStream::new(self.scenario.seed, path);
        let sheet = self.sampler.sample(&mut stream);
        let mut field = Array2::zeros(sheet.sheet.dim());
        fill_field(&sheet, &self.h, &mut field);
        self.with_model(&sheet, |m| m.stepper.simulate(&field))?
    }

    fn run(&self, parts: Parts, workers: usize) -> Result<EnsembleAcc> {
        let task = EnsembleTask {
            p: self,
            parts,
            probes: self.scenario.probes_or_default(),
        };
        run_ensemble(&task, &self.plan(workers))
    }

    /// Martingale summary at the scenario's checkpoints and maturities.
    pub fn simulate(&self, workers: usize) -> Result<MartingaleReport> {
        let acc = self.run(
            Parts {
                bonds: true,
                ..Parts::default()
            },
            workers,
        )?;
        Ok(self.martingale_report(&acc))
    }

    fn martingale_report(&self, acc: &EnsembleAcc) -> MartingaleReport {
        let sc = &self.scenario;
        acc.martingale.finish(
            &sc.grid,
            &self.market.log_initial,
            sc.martingale_tolerance,
            &sc.policy,
        )
    }

    /// Unweighted covariance of the field `Z` at the probe pairs.
    pub fn covariance(&self, workers: usize) -> Result<SheetTestReport> {
        let acc = self.run(
            Parts {
                field_moments: true,
                ..Parts::default()
            },
            workers,
        )?;
        acc.field_moments
            .finish(&self.scenario.kind, self.grid(), &self.scenario.policy)
    }

    pub fn verify(&self, workers: usize, negative_control: bool) -> Result<VerifyOutcome> {
        let acc = self.run(
            Parts {
                bonds: true,
                weighted: true,
                field_moments: false,
            },
            workers,
        )?;
        self.assemble(&acc, negative_control)
    }

    fn assemble(&self, acc: &EnsembleAcc, negative_control: bool) -> Result<VerifyOutcome> {
        let sc = &self.scenario;
        let grid = &sc.grid;
        let policy = &sc.policy;
        let z = Criterion::ZScore {
            bound: policy.z_bound,
        };
        let pred = self.predictions();
        let mut checks = Vec::new();

        for (k, &i) in sc.checkpoints.iter().enumerate() {
            checks.push(CheckResult::evaluate(
                "mean_one",
                format!("t={}", grid.time(i)),
                acc.mean_one[k].importance_estimate(),
                1.0,
                z,
                policy,
            ));
        }

        let martingale = self.martingale_report(acc);
        for row in &martingale.reweighted {
            let label = format!("t={},T={}", row.t_years, row.maturity_years);
            let ratio = ratio_estimate(&row.estimate, row.initial_price);
            checks.push(CheckResult::evaluate(
                "martingale",
                label.clone(),
                ratio,
                1.0,
                Criterion::Absolute {
                    tol: sc.martingale_tolerance,
                },
                policy,
            ));
            if let Some(p) = &pred {
                checks.push(CheckResult::evaluate(
                    "martingale_discrete",
                    label,
                    ratio,
                    p.reweighted_ratio[(row.time_node, row.maturity_node)],
                    z,
                    policy,
                ));
            }
        }

        let sheet = acc.weighted_sheet.finish(&sc.kind, grid, policy)?;
        for row in &sheet.rows {
            checks.push(CheckResult::evaluate(
                "sheet_covariance",
                row.label.clone(),
                row.estimate,
                row.expected,
                z,
                policy,
            ));
        }

        let mut k = 0;
        for &i in &sc.checkpoints {
            for &j in &sc.maturities {
                let est = acc.drift[k].self_normalized_estimate()?;
                k += 1;
                let criterion = match &pred {
                    Some(p) => Criterion::ZScorePlusBias {
                        bound: policy.z_bound,
                        bias: p.shifted_mean[(i, j)].abs(),
                    },
                    None => z,
                };
                checks.push(CheckResult::evaluate(
                    "shifted_drift",
                    format!("t={},T={}", grid.time(i), grid.maturity(j)),
                    est,
                    0.0,
                    criterion,
                    policy,
                ));
            }
        }

        if negative_control {
            if let Some(p) = &pred {
                for row in &martingale.physical {
                    checks.push(CheckResult::evaluate(
                        "physical_drift",
                        format!("t={},T={}", row.t_years, row.maturity_years),
                        ratio_estimate(&row.estimate, row.initial_price),
                        p.physical_ratio[(row.time_node, row.maturity_node)],
                        z,
                        policy,
                    ));
                }
            }
            // The premium accumulates over time and maturity, so the
            // unweighted deviation is largest at the last pair.
            if let Some(row) = martingale.physical.last() {
                checks.push(CheckResult::evaluate(
                    "unweighted_martingale",
                    format!("t={},T={}", row.t_years, row.maturity_years),
                    ratio_estimate(&row.estimate, row.initial_price),
                    1.0,
                    Criterion::Deviation {
                        threshold: sc.negative_control_threshold,
                    },
                    policy,
                ));
            }
        }

        Ok(VerifyOutcome {
            report: VerificationReport::new(checks, policy),
            martingale,
            sheet,
        })
    }

    pub fn conditions(&self) -> Result<ConditionsOutcome> {
        let sc = &self.scenario;
        if sc.eta.is_deterministic() {
            Ok(ConditionsOutcome::Deterministic(evaluate_conditions(
                &sc.eta, &sc.grid, &sc.kind,
            )?))
        } else {
            Ok(ConditionsOutcome::Adapted(evaluate_conditions_adapted(
                &sc.eta, &sc.grid, &sc.kind, sc.n_paths, sc.seed,
            )?))
        }
    }
}

fn ratio_estimate(est: &Estimate, p0: f64) -> Estimate {
    Estimate {
        mean: est.mean / p0,
        std_error: est.std_error / p0,
        ..*est
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub report: VerificationReport,
    pub martingale: MartingaleReport,
    pub sheet: SheetTestReport,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum ConditionsOutcome {
    Deterministic(ConditionReport),
    Adapted(AdaptedConditionReport),
}

impl ConditionsOutcome {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Parts {
    bonds: bool,
    weighted: bool,
    field_moments: bool,
}

struct EnsembleAcc {
    martingale: MartingaleAccumulator,
    mean_one: Vec<WeightedStats>,
    drift: Vec<WeightedStats>,
    weighted_sheet: SheetMomentAccumulator,
    field_moments: SheetMomentAccumulator,
}

impl Merge for EnsembleAcc {
    fn merge(&mut self, other: Self) {
        self.martingale.merge(other.martingale);
        self.mean_one.merge(other.mean_one);
        self.drift.merge(other.drift);
        self.weighted_sheet.merge(other.weighted_sheet);
        self.field_moments.merge(other.field_moments);
    }
}

struct Scratch {
    sheet: SheetPath,
    field: Array2<f64>,
    shifted: Array2<f64>,
    log_density: Vec<f64>,
    columns: Vec<Vec<f64>>,
    unweighted: Vec<f64>,
}

struct EnsembleTask<'p> {
    p: &'p Pipeline,
    parts: Parts,
    probes: Vec<NodePair>,
}

impl PathTask for EnsembleTask<'_> {
    type Acc = EnsembleAcc;
    type Scratch = Scratch;

    fn accumulator(&self) -> EnsembleAcc {
        let sc = &self.p.scenario;
        let pairs = sc.checkpoints.len() * sc.maturities.len();
        EnsembleAcc {
            martingale: MartingaleAccumulator::new(sc.checkpoints.clone(), sc.maturities.clone()),
            mean_one: vec![WeightedStats::default(); sc.checkpoints.len()],
            drift: vec![WeightedStats::default(); pairs],
            weighted_sheet: SheetMomentAccumulator::new(self.probes.clone()),
            field_moments: SheetMomentAccumulator::new(self.probes.clone()),
        }
    }

    fn scratch(&self) -> Scratch {
        let grid = self.p.grid();
        let dims = (grid.time_nodes(), grid.maturity_nodes());
        Scratch {
            sheet: SheetPath::zeros(grid),
            field: Array2::zeros(dims),
            shifted: Array2::zeros(dims),
            log_density: Vec::with_capacity(dims.0),
            columns: vec![vec![0.0; dims.0]; self.p.scenario.maturities.len()],
            unweighted: vec![0.0; dims.0],
        }
    }

    fn run_path(
        &self,
        stream: &mut PathStream,
        s: &mut Scratch,
        acc: &mut EnsembleAcc,
    ) -> Result<()> {
        let p = self.p;
        let sc = &p.scenario;
        p.sampler.sample_into(stream, &mut s.sheet);
        fill_field(&s.sheet, &p.h, &mut s.field);
        if self.parts.field_moments {
            acc.field_moments.observe(&s.field, &s.unweighted);
        }
        if !(self.parts.bonds || self.parts.weighted) {
            return Ok(());
        }
        let sheet = &s.sheet;
        p.with_model(sheet, |m| -> Result<()> {
            m.density.density_into(&s.sheet, &mut s.log_density);
            let l = &s.log_density;
            for (stats, &i) in acc.mean_one.iter_mut().zip(&sc.checkpoints) {
                stats.push(l[i], 1.0);
            }
            if self.parts.weighted {
                s.shifted.assign(&s.field);
                s.shifted += &m.shift;
                acc.weighted_sheet.observe(&s.shifted, l);
                let mut k = 0;
                for &i in &sc.checkpoints {
                    for &j in &sc.maturities {
                        acc.drift[k].push(l[i], s.shifted[(i, j)]);
                        k += 1;
                    }
                }
            }
            if self.parts.bonds {
                for (col, &j) in s.columns.iter_mut().zip(&sc.maturities) {
                    m.stepper.column_into(&s.field, j, col)?;
                }
                let cum = m.stepper.cumulative_rate();
                let columns = &s.columns;
                acc.martingale.observe_with(
                    |i, j| {
                        let c = sc
                            .maturities
                            .iter()
                            .position(|&x| x == j)
                            .expect("known maturity");
                        (columns[c][i] - cum[i]).exp()
                    },
                    l,
                );
            }
            Ok(())
        })?
    }
}
