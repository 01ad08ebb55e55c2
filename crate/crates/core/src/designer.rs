//! Sensing-secure power allocation design: comb spacing selection, PSL
//! budget, the weighted SNR-loss / rate program and trade-off sweeps.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::acf::{expected_sq_acf_exact, metrics_from_pqk};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::scene::{rate_from_gains, CommChannel, OfdmGrid};
use crate::waveform::{is_dominant, CombStructure, PowerAllocation, POWER_FLOOR};

/// Smallest power-of-two comb spacing whose ISL reaches `eps_isl` at PSL
/// `eps_psl` (both linear).
pub fn select_kappa(eps_isl: f64, eps_psl: f64, mu4: f64, n: usize) -> Result<usize> {
    if !n.is_power_of_two() {
        return Err(Error::Config(format!("N = {n} is not a power of two")));
    }
    if !(eps_psl > 0.0 && eps_psl < 1.0) {
        return Err(Error::InfeasibleSecurity(format!(
            "PSL target {eps_psl} outside (0, 1)"
        )));
    }
    if !(eps_isl.is_finite() && eps_isl > 0.0) {
        return Err(Error::InfeasibleSecurity(format!(
            "ISL target {eps_isl} is not positive"
        )));
    }
    let arg = (eps_isl - mu4 + 1.0) / (eps_psl * mu4) + 1.0;
    let exponent = if arg > 0.0 { arg.log2().floor() + 1.0 } else { 1.0 };
    let kappa = 2f64.powf(exponent.max(1.0));
    if kappa > (n / 2) as f64 {
        return Err(Error::InfeasibleSecurity(format!(
            "required comb spacing {kappa} exceeds N/2 = {}",
            n / 2
        )));
    }
    Ok(kappa as usize)
}

/// Upper bound on the total complement-set power `N (kappa-1)/kappa (1 - sqrt(eps_psl))`.
pub fn psl_budget(eps_psl: f64, kappa: usize, n: usize) -> f64 {
    let k = kappa as f64;
    n as f64 * (k - 1.0) / k * (1.0 - eps_psl.clamp(0.0, 1.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DominantOffset {
    Fixed(usize),
    Search(SearchTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchTag {
    Search,
}

impl Default for DominantOffset {
    fn default() -> Self {
        DominantOffset::Fixed(1)
    }
}

#[derive(Debug, Clone)]
pub struct DesignRequest {
    pub rho: f64,
    pub eps_psl: f64,
    pub eps_isl: f64,
    pub channel: CommChannel,
    pub constellation: Constellation,
    pub grid: OfdmGrid,
    pub n0: DominantOffset,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedMetrics {
    /// bit/s
    pub rate: f64,
    /// linear
    pub snr_loss: f64,
    pub psl: f64,
    pub isl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub alloc: PowerAllocation,
    pub kappa: usize,
    pub n0: usize,
    pub predicted: PredictedMetrics,
    pub objective_value: f64,
    /// `psl - eps_psl` and `isl - eps_isl`; non-negative when met.
    pub psl_slack: f64,
    pub isl_slack: f64,
    pub iterations: usize,
    pub pg_norm: f64,
    /// Best achievable SNR loss under the same constraints (linear).
    pub loss_norm: f64,
    /// Best achievable rate per unit bandwidth under the same constraints.
    pub rate_norm: f64,
}

/// Feasible set `{sum a = N, sum_{complement} a <= budget, a >= floor}`.
#[derive(Debug, Clone)]
pub struct Polytope {
    n: usize,
    dominant: Vec<bool>,
    budget: f64,
    floor: f64,
}

impl Polytope {
    pub fn new(n: usize, kappa: usize, n0: usize, budget: f64, floor: f64) -> Result<Self> {
        let dominant: Vec<bool> = (0..n).map(|i| is_dominant(i, kappa, n0)).collect();
        let n_dom = dominant.iter().filter(|d| **d).count();
        let n_comp = n - n_dom;
        if budget < n_comp as f64 * floor * (1.0 - 1e-12) || (n as f64 - budget) < n_dom as f64 * floor {
            return Err(Error::InfeasibleSecurity(format!(
                "complement budget {budget:.6} leaves no allocation above the power floor"
            )));
        }
        Ok(Self {
            n,
            dominant,
            budget,
            floor,
        })
    }

    pub fn dominant(&self) -> &[bool] {
        &self.dominant
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        let total: f64 = a.iter().sum();
        let comp: f64 = a.iter().zip(&self.dominant).filter(|(_, d)| !**d).map(|(v, _)| v).sum();
        (total - self.n as f64).abs() <= tol * self.n as f64
            && comp <= self.budget + tol * self.n as f64
            && a.iter().all(|v| *v >= self.floor - tol)
    }

    /// Euclidean projection.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let total = self.n as f64;
        let all: Vec<usize> = (0..self.n).collect();
        let mut out = vec![0.0; self.n];
        project_capped_simplex(v, &all, total, self.floor, &mut out);
        let comp_sum: f64 = out
            .iter()
            .zip(&self.dominant)
            .filter(|(_, d)| !**d)
            .map(|(x, _)| x)
            .sum();
        if comp_sum <= self.budget {
            return out;
        }
        // Budget active: the problem splits into two independent simplices.
        let comp: Vec<usize> = all.iter().copied().filter(|&i| !self.dominant[i]).collect();
        let dom: Vec<usize> = all.iter().copied().filter(|&i| self.dominant[i]).collect();
        project_capped_simplex(v, &comp, self.budget, self.floor, &mut out);
        project_capped_simplex(v, &dom, total - self.budget, self.floor, &mut out);
        out
    }

    /// Uniformly weighted random feasible point.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let idx_c: Vec<usize> = (0..self.n).filter(|&i| !self.dominant[i]).collect();
        let idx_d: Vec<usize> = (0..self.n).filter(|&i| self.dominant[i]).collect();
        let lo = idx_c.len() as f64 * self.floor;
        let hi = self.budget.min(self.n as f64 - idx_d.len() as f64 * self.floor);
        let s_c = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut a = vec![0.0; self.n];
        let mut fill = |idx: &[usize], sum: f64, rng: &mut R| {
            let w: Vec<f64> = idx.iter().map(|_| Exp1.sample(rng)).collect();
            let tw: f64 = w.iter().sum();
            let spare = sum - idx.len() as f64 * self.floor;
            for (&i, wi) in idx.iter().zip(&w) {
                a[i] = self.floor + spare * wi / tw;
            }
        };
        fill(&idx_c, s_c, rng);
        fill(&idx_d, self.n as f64 - s_c, rng);
        a
    }
}

/// Projects `v[idx]` onto `{x : sum x = total, x >= floor}` and writes into
/// `out[idx]`.
fn project_capped_simplex(v: &[f64], idx: &[usize], total: f64, floor: f64, out: &mut [f64]) {
    if idx.is_empty() {
        return;
    }
    let target = total - idx.len() as f64 * floor;
    let mut u: Vec<f64> = idx.iter().map(|&i| v[i] - floor).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - target) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for &i in idx {
        out[i] = floor + (v[i] - floor - theta).max(0.0);
    }
}

/// Smooth objective to be minimized over the polytope.
trait Objective {
    fn value(&self, a: &[f64]) -> f64;
    fn gradient(&self, a: &[f64], g: &mut [f64]);
}

/// `-(1 - rho) w_l L(a) + rho w_r R(a) / B`, negated for minimization.
struct Weighted<'a> {
    rho: f64,
    w_loss: f64,
    w_rate: f64,
    nu: f64,
    gains: &'a [f64],
}

impl Weighted<'_> {
    fn loss(&self, a: &[f64]) -> f64 {
        self.nu * a.iter().map(|x| 1.0 / x).sum::<f64>() / a.len() as f64
    }

    fn rate_per_hz(&self, a: &[f64]) -> f64 {
        rate_from_gains(self.gains, a, 1.0)
    }
}

impl Objective for Weighted<'_> {
    fn value(&self, a: &[f64]) -> f64 {
        let mut v = 0.0;
        if self.rho < 1.0 {
            v += (1.0 - self.rho) * self.w_loss * self.loss(a);
        }
        if self.rho > 0.0 {
            v -= self.rho * self.w_rate * self.rate_per_hz(a);
        }
        v
    }

    fn gradient(&self, a: &[f64], g: &mut [f64]) {
        let n = a.len() as f64;
        let ln2 = std::f64::consts::LN_2;
        for ((gi, &x), &h) in g.iter_mut().zip(a).zip(self.gains) {
            let dl = -self.nu / (n * x * x);
            let dr = h / ((1.0 + h * x) * ln2 * n);
            *gi = (1.0 - self.rho) * self.w_loss * dl - self.rho * self.w_rate * dr;
        }
    }
}

struct SpgOutcome {
    a: Vec<f64>,
    iterations: usize,
    pg_norm: f64,
}

fn pg_norm(poly: &Polytope, a: &[f64], g: &[f64]) -> f64 {
    let step: Vec<f64> = a.iter().zip(g).map(|(x, gi)| x - gi).collect();
    let p = poly.project(&step);
    p.iter().zip(a).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Spectral projected gradient with a non-monotone Armijo search.
fn spg(poly: &Polytope, f: &dyn Objective, x0: Vec<f64>, opts: &SolverOptions) -> Result<SpgOutcome> {
    const MEMORY: usize = 10;
    const GAMMA: f64 = 1e-4;
    let (lam_min, lam_max) = (1e-12, 1e12);
    let n = x0.len();
    let mut x = poly.project(&x0);
    let mut fx = f.value(&x);
    let mut g = vec![0.0; n];
    f.gradient(&x, &mut g);
    let mut history = vec![fx];
    let mut pg = pg_norm(poly, &x, &g);
    let inf_norm = {
        let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let p = poly.project(&step);
        p.iter().zip(&x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    };
    let mut lambda = if inf_norm > 0.0 {
        (1.0 / inf_norm).clamp(lam_min, lam_max)
    } else {
        1.0
    };
    let mut g_new = vec![0.0; n];
    for it in 0..opts.max_iterations {
        if pg < opts.tolerance {
            return Ok(SpgOutcome {
                a: x,
                iterations: it,
                pg_norm: pg,
            });
        }
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - lambda * b).collect();
        let d: Vec<f64> = poly.project(&trial).iter().zip(&x).map(|(p, a)| p - a).collect();
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut x_new: Vec<f64>;
        let mut f_new;
        loop {
            x_new = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            f_new = f.value(&x_new);
            if f_new <= f_ref + GAMMA * t * gd || t < 1e-20 {
                break;
            }
            // Safeguarded quadratic backtracking.
            let t_q = -0.5 * gd * t * t / (f_new - fx - t * gd);
            t = if t_q >= 0.1 * t && t_q <= 0.5 * t { t_q } else { 0.5 * t };
        }
        f.gradient(&x_new, &mut g_new);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        lambda = if sy <= 0.0 {
            lam_max
        } else {
            (ss / sy).clamp(lam_min, lam_max)
        };
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
        pg = pg_norm(poly, &x, &g);
    }
    Err(Error::Solver {
        iterations: opts.max_iterations,
        pg_norm: pg,
        reason: "projected-gradient tolerance not reached".into(),
    })
}

fn check_request(req: &DesignRequest) -> Result<usize> {
    req.grid.validate()?;
    if !(0.0..=1.0).contains(&req.rho) {
        return Err(Error::Config(format!("rho = {} outside [0, 1]", req.rho)));
    }
    if req.channel.gains.len() != req.grid.n {
        return Err(Error::LengthMismatch {
            expected: req.grid.n,
            got: req.channel.gains.len(),
        });
    }
    select_kappa(req.eps_isl, req.eps_psl, req.constellation.mu4(), req.grid.n)
}

/// Solves the design problem for one dominant-set offset.
fn solve_fixed(req: &DesignRequest, kappa: usize, n0: usize) -> Result<DesignResult> {
    let n = req.grid.n;
    let budget = psl_budget(req.eps_psl, kappa, n);
    let poly = Polytope::new(n, kappa, n0, budget, POWER_FLOOR)?;
    let gains = req.channel.snr_gains();
    let nu = req.constellation.nu_m2();
    let start = vec![1.0; n];
    let single = |rho: f64| Weighted {
        rho,
        w_loss: 1.0,
        w_rate: 1.0,
        nu,
        gains: &gains,
    };
    let loss_opt = spg(&poly, &single(0.0), start.clone(), &req.solver)?;
    let loss_ref = single(0.0).loss(&loss_opt.a);
    let rate_opt = spg(&poly, &single(1.0), start, &req.solver)?;
    let rate_ref = single(1.0).rate_per_hz(&rate_opt.a);
    let f = Weighted {
        rho: req.rho,
        w_loss: 1.0 / loss_ref,
        w_rate: if rate_ref > 0.0 { 1.0 / rate_ref } else { 0.0 },
        nu,
        gains: &gains,
    };
    let warm = if req.rho < 0.5 { loss_opt.a } else { rate_opt.a };
    let sol = spg(&poly, &f, warm, &req.solver)?;
    let objective_value = -f.value(&sol.a);
    let dominant = poly.dominant();
    let mean = |want: bool| {
        let (s, c) = sol
            .a
            .iter()
            .zip(dominant)
            .filter(|(_, d)| **d == want)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        s / c.max(1) as f64
    };
    let structure = CombStructure {
        p: mean(true),
        q: mean(false),
        kappa,
        n0,
    };
    let alloc = PowerAllocation::normalized(sol.a, Some(structure))?;
    let predicted = predict(&alloc, &req.constellation, &req.channel, &req.grid)?;
    Ok(DesignResult {
        kappa,
        n0,
        objective_value,
        psl_slack: predicted.psl - req.eps_psl,
        isl_slack: predicted.isl - req.eps_isl,
        predicted,
        alloc,
        iterations: sol.iterations,
        pg_norm: sol.pg_norm,
        loss_norm: loss_ref,
        rate_norm: rate_ref,
    })
}

/// Rate, SNR loss and expectation-profile PSL/ISL of an allocation.
pub fn predict(
    alloc: &PowerAllocation,
    c: &Constellation,
    channel: &CommChannel,
    grid: &OfdmGrid,
) -> Result<PredictedMetrics> {
    let acf = expected_sq_acf_exact(alloc, c);
    Ok(PredictedMetrics {
        rate: crate::scene::comm_rate(channel, alloc, grid)?,
        snr_loss: crate::receivers::snr_loss_closed_form(alloc, c),
        psl: acf.psl(),
        isl: acf.isl(),
    })
}

pub fn solve_p2(req: &DesignRequest) -> Result<DesignResult> {
    let kappa = check_request(req)?;
    match req.n0 {
        DominantOffset::Fixed(n0) => {
            if n0 == 0 || n0 > kappa {
                return Err(Error::Config(format!("n0 = {n0} outside 1..={kappa}")));
            }
            solve_fixed(req, kappa, n0)
        }
        DominantOffset::Search(_) => {
            let mut best: Option<DesignResult> = None;
            for n0 in 1..=kappa {
                let r = solve_fixed(req, kappa, n0)?;
                if best.as_ref().is_none_or(|b| r.objective_value > b.objective_value) {
                    best = Some(r);
                }
            }
            Ok(best.expect("kappa >= 1"))
        }
    }
}

/// Normalized design objective of an arbitrary allocation vector, using
/// the normalizers of a solved request. Used for optimality audits.
pub fn objective_at(req: &DesignRequest, result: &DesignResult, a: &[f64]) -> f64 {
    let gains = req.channel.snr_gains();
    -weighted(req, result, &gains).value(a)
}

fn weighted<'a>(req: &DesignRequest, result: &DesignResult, gains: &'a [f64]) -> Weighted<'a> {
    Weighted {
        rho: req.rho,
        w_loss: 1.0 / result.loss_norm,
        w_rate: if result.rate_norm > 0.0 {
            1.0 / result.rate_norm
        } else {
            0.0
        },
        nu: req.constellation.nu_m2(),
        gains,
    }
}

/// Feasible polytope of a solved design.
pub fn feasible_set(req: &DesignRequest, result: &DesignResult) -> Result<Polytope> {
    Polytope::new(
        req.grid.n,
        result.kappa,
        result.n0,
        psl_budget(req.eps_psl, result.kappa, req.grid.n),
        POWER_FLOOR,
    )
}

/// Projected-gradient norm of the design objective at `a`.
pub fn projected_gradient_norm(req: &DesignRequest, result: &DesignResult, a: &[f64]) -> Result<f64> {
    let poly = feasible_set(req, result)?;
    let gains = req.channel.snr_gains();
    let mut g = vec![0.0; a.len()];
    weighted(req, result, &gains).gradient(a, &mut g);
    Ok(pg_norm(&poly, a, &g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub kappa: usize,
    pub p: f64,
    pub q: f64,
    pub rate: f64,
    pub snr_loss: f64,
    pub psl: f64,
    pub isl: f64,
    pub anchor: Option<Anchor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    SensingOptimal,
    SecurityOptimal,
}

/// Enumerates two-level comb allocations over `kappas` and complement
/// levels `qs`, plus the sensing-optimal (`kappa = 1`) and security-optimal
/// (`kappa = N/2`, `q` at the floor) anchors.
pub fn tradeoff_sweep(
    kappas: &[usize],
    qs: &[f64],
    c: &Constellation,
    channel: &CommChannel,
    grid: &OfdmGrid,
) -> Result<Vec<TradeoffRow>> {
    let n = grid.n;
    let gains = channel.snr_gains();
    let row = |kappa: usize, q: f64, anchor| -> Result<TradeoffRow> {
        let p = kappa as f64 - (kappa as f64 - 1.0) * q;
        let power: Vec<f64> = (0..n).map(|i| if is_dominant(i, kappa, 1) { p } else { q }).collect();
        let rate = rate_from_gains(&gains, &power, grid.bandwidth_hz);
        let snr_loss = c.nu_m2() / kappa as f64 * (1.0 / p + (kappa as f64 - 1.0) / q);
        let m = if kappa == 1 {
            crate::acf::SecurityMetrics::from_linear(0.0, c.mu4() - 1.0)
        } else {
            metrics_from_pqk(p, q, kappa, c.mu4())
        };
        Ok(TradeoffRow {
            kappa,
            p,
            q,
            rate,
            snr_loss,
            psl: m.psl_linear,
            isl: m.isl_linear,
            anchor,
        })
    };
    let mut rows = vec![row(1, 1.0, Some(Anchor::SensingOptimal))?];
    for &kappa in kappas {
        if kappa < 2 || !n.is_multiple_of(kappa) || kappa > n / 2 {
            return Err(Error::Divisibility { kappa, n });
        }
        for &q in qs {
            if !(POWER_FLOOR..1.0).contains(&q) {
                return Err(Error::Floor {
                    value: q,
                    floor: POWER_FLOOR,
                });
            }
            rows.push(row(kappa, q, None)?);
        }
    }
    rows.push(row(n / 2, POWER_FLOOR, Some(Anchor::SecurityOptimal))?);
    Ok(rows)
}

pub fn write_tradeoff_csv<W: Write>(out: W, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "kappa",
        "p",
        "q",
        "rate_bps",
        "snr_loss_db",
        "psl_db",
        "isl_db",
        "anchor",
    ])?;
    for r in rows {
        w.write_record([
            r.kappa.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.rate.to_string(),
            crate::units::linear_to_db(r.snr_loss).to_string(),
            crate::units::linear_to_db(r.psl).to_string(),
            crate::units::linear_to_db(r.isl).to_string(),
            match r.anchor {
                Some(Anchor::SensingOptimal) => "sensing_optimal".into(),
                Some(Anchor::SecurityOptimal) => "security_optimal".into(),
                None => String::new(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::make_constellation;
    use crate::seed::seeded_rng;
    use crate::units::{db_to_linear, linear_to_db};

    fn request(rho: f64, channel: CommChannel) -> DesignRequest {
        DesignRequest {
            rho,
            eps_psl: db_to_linear(-5.0),
            eps_isl: db_to_linear(7.0),
            channel,
            constellation: make_constellation("16QAM").unwrap(),
            grid: OfdmGrid::default(),
            n0: DominantOffset::Fixed(1),
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn kappa_selection() {
        assert_eq!(
            select_kappa(db_to_linear(7.0), db_to_linear(-5.0), 1.32, 256).unwrap(),
            16
        );
        assert_eq!(select_kappa(0.32, 0.5, 1.32, 256).unwrap(), 2);
        assert_eq!(
            select_kappa(db_to_linear(-0.5), db_to_linear(-5.0), 1.32, 256).unwrap(),
            4
        );
        assert!(matches!(select_kappa(1.0, 0.5, 1.32, 96), Err(Error::Config(_))));
        assert!(matches!(
            select_kappa(1e6, 0.5, 1.32, 256),
            Err(Error::InfeasibleSecurity(_))
        ));
        assert!(matches!(
            select_kappa(2.0, 1.0, 1.32, 256),
            Err(Error::InfeasibleSecurity(_))
        ));
    }

    #[test]
    fn selected_kappa_meets_isl_target() {
        let (ei, ep, mu4) = (db_to_linear(4.0), db_to_linear(-2.5), 1.32);
        let kappa = select_kappa(ei, ep, mu4, 256).unwrap();
        let q = 1.0 - ep.sqrt();
        let isl = mu4 * (kappa as f64 - 1.0) * (1.0 - q).powi(2) + mu4 - 1.0;
        assert!(isl >= ei);
        // Half the spacing would miss it.
        let isl_half = mu4 * (kappa as f64 / 2.0 - 1.0) * (1.0 - q).powi(2) + mu4 - 1.0;
        assert!(isl_half < ei);
    }

    #[test]
    fn budget_values() {
        let b = psl_budget(db_to_linear(-5.0), 16, 256);
        assert!((b - 240.0 * (1.0 - db_to_linear(-5.0).sqrt())).abs() < 1e-12);
        assert!((b - 105.0).abs() < 0.1);
        assert_eq!(psl_budget(1.0, 4, 64), 0.0);
        assert!((psl_budget(1e-300, 4, 64) - 48.0).abs() < 1e-9);
        // The boundary allocation has exactly the requested PSL.
        let q = b / 240.0;
        let m = metrics_from_pqk(16.0 - 15.0 * q, q, 16, 1.32);
        assert!((m.psl_linear - db_to_linear(-5.0)).abs() < 1e-12);
        assert!(matches!(
            Polytope::new(64, 4, 1, 0.0, POWER_FLOOR),
            Err(Error::InfeasibleSecurity(_))
        ));
    }

    #[test]
    fn projection_matches_brute_force() {
        let mut rng = seeded_rng(3);
        let poly = Polytope::new(16, 4, 2, 6.0, 0.01).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..4.0)).collect();
            let p = poly.project(&v);
            assert!(poly.contains(&p, 1e-12));
            let d0: f64 = p.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            // No feasible point, random or perturbed, is closer.
            for _ in 0..200 {
                let r = poly.random_point(&mut rng);
                let mix: Vec<f64> = p.iter().zip(&r).map(|(a, b)| 0.99 * a + 0.01 * b).collect();
                for cand in [r, mix] {
                    let d: f64 = cand.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
                    assert!(d >= d0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn rho0_flat_matches_kkt_symmetric_solution() {
        let req = request(0.0, CommChannel::flat(256, 10.0));
        let r = solve_p2(&req).unwrap();
        assert_eq!(r.kappa, 16);
        let b = psl_budget(req.eps_psl, 16, 256);
        let (q, p) = (b / 240.0, (256.0 - b) / 16.0);
        for (i, a) in r.alloc.power().iter().enumerate() {
            let expect = if is_dominant(i, 16, 1) { p } else { q };
            assert!((a - expect).abs() < 1e-6, "{i}: {a} vs {expect}");
        }
        assert!((r.objective_value + 1.0).abs() < 1e-9);
        assert!(r.pg_norm < 1e-8);
        assert!(r.psl_slack >= -1e-6 && r.isl_slack >= -1e-6);
    }

    #[test]
    fn rho1_flat_is_most_uniform_feasible_point() {
        // Budget binding: equal power would need 240 > 105 on the complement.
        let req = request(1.0, CommChannel::flat(256, 10.0));
        let r = solve_p2(&req).unwrap();
        let b = psl_budget(req.eps_psl, 16, 256);
        let (q, p) = (b / 240.0, (256.0 - b) / 16.0);
        for (i, a) in r.alloc.power().iter().enumerate() {
            let expect = if is_dominant(i, 16, 1) { p } else { q };
            assert!((a - expect).abs() < 1e-6);
        }
        // A vanishing PSL target leaves equal power (almost) feasible.
        let mut loose = request(1.0, CommChannel::flat(256, 10.0));
        loose.eps_psl = 1e-12;
        loose.eps_isl = loose.constellation.mu4() - 1.0;
        let r = solve_p2(&loose).unwrap();
        assert_eq!(r.kappa, 2);
        assert!(r.alloc.power().iter().all(|a| (a - 1.0).abs() < 1e-5));
    }

    /// Two-level water-filling from the KKT conditions, solved by bisection
    /// on the water levels independently of the solver.
    fn water_fill(gains: &[f64], idx: &[usize], total: f64, floor: f64) -> Vec<(usize, f64)> {
        let level = |mu: f64| -> f64 { idx.iter().map(|&i| (mu - 1.0 / gains[i]).max(floor)).sum() };
        let (mut lo, mut hi) = (0.0, total + 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if level(mid) > total {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        idx.iter().map(|&i| (i, (lo - 1.0 / gains[i]).max(floor))).collect()
    }

    #[test]
    fn rho1_selective_channel_matches_water_filling() {
        let mut rng = seeded_rng(11);
        let ch = CommChannel::rayleigh(256, 8, 10.0, &mut rng);
        let req = request(1.0, ch.clone());
        let r = solve_p2(&req).unwrap();
        let gains = ch.snr_gains();
        let dom: Vec<usize> = (0..256).filter(|&i| is_dominant(i, 16, 1)).collect();
        let comp: Vec<usize> = (0..256).filter(|&i| !is_dominant(i, 16, 1)).collect();
        let b = psl_budget(req.eps_psl, 16, 256);
        // Unconstrained water-filling violates the budget here, so both
        // water levels are separate.
        let free = water_fill(&gains, &(0..256).collect::<Vec<_>>(), 256.0, POWER_FLOOR);
        let comp_free: f64 = free
            .iter()
            .filter(|(i, _)| !is_dominant(*i, 16, 1))
            .map(|(_, a)| a)
            .sum();
        assert!(comp_free > b);
        for (i, a) in water_fill(&gains, &comp, b, POWER_FLOOR).into_iter().chain(water_fill(
            &gains,
            &dom,
            256.0 - b,
            POWER_FLOOR,
        )) {
            assert!(
                (r.alloc.power()[i] - a).abs() < 1e-5,
                "{i}: {} vs {a}",
                r.alloc.power()[i]
            );
        }
    }

    #[test]
    fn beats_random_feasible_points() {
        let mut rng = seeded_rng(5);
        let ch = CommChannel::rayleigh(256, 8, 10.0, &mut rng);
        let req = request(0.5, ch);
        let r = solve_p2(&req).unwrap();
        let poly = feasible_set(&req, &r).unwrap();
        let best = objective_at(&req, &r, r.alloc.power());
        assert!((best - r.objective_value).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&best));
        for _ in 0..100 {
            let a = poly.random_point(&mut rng);
            assert!(objective_at(&req, &r, &a) <= best);
        }
        assert!(projected_gradient_norm(&req, &r, r.alloc.power()).unwrap() <= 1e-6);
    }

    #[test]
    fn predicted_metrics_recompute() {
        let mut rng = seeded_rng(6);
        let ch = CommChannel::rayleigh(256, 8, 10.0, &mut rng);
        let req = request(0.3, ch.clone());
        let r = solve_p2(&req).unwrap();
        let again = predict(&r.alloc, &req.constellation, &ch, &req.grid).unwrap();
        assert!((again.rate - r.predicted.rate).abs() <= 1e-6 * r.predicted.rate);
        assert!((again.snr_loss - r.predicted.snr_loss).abs() < 1e-6);
        assert!(r.psl_slack >= -1e-6, "{}", r.psl_slack);
        assert!(r.isl_slack >= -1e-6, "{}", r.isl_slack);
    }

    #[test]
    fn frontier_is_monotone() {
        let mut rng = seeded_rng(8);
        let ch = CommChannel::rayleigh(256, 8, 10.0, &mut rng);
        let mut last: Option<PredictedMetrics> = None;
        for i in 0..10 {
            let r = solve_p2(&request(i as f64 / 9.0, ch.clone())).unwrap();
            if let Some(l) = last {
                assert!(r.predicted.rate >= l.rate * (1.0 - 1e-9));
                assert!(r.predicted.snr_loss >= l.snr_loss * (1.0 - 1e-9));
            }
            last = Some(r.predicted);
        }
    }

    #[test]
    fn n0_search_covers_every_offset() {
        let mut rng = seeded_rng(9);
        let ch = CommChannel::rayleigh(64, 4, 10.0, &mut rng);
        let mut req = request(1.0, ch);
        req.grid = OfdmGrid::new(64, 16, 50e6, 1).unwrap();
        req.eps_isl = db_to_linear(3.0);
        req.n0 = DominantOffset::Search(SearchTag::Search);
        let best = solve_p2(&req).unwrap();
        for n0 in 1..=best.kappa {
            req.n0 = DominantOffset::Fixed(n0);
            assert!(solve_p2(&req).unwrap().objective_value <= best.objective_value + 1e-12);
        }
        let json: DominantOffset = serde_json::from_str("\"search\"").unwrap();
        assert_eq!(json, DominantOffset::Search(SearchTag::Search));
        assert_eq!(
            serde_json::from_str::<DominantOffset>("3").unwrap(),
            DominantOffset::Fixed(3)
        );
    }

    #[test]
    fn sweep_anchors_and_identity() {
        let c = make_constellation("16QAM").unwrap();
        let grid = OfdmGrid::default();
        let rows = tradeoff_sweep(
            &[2, 4, 16],
            &[0.25, 0.5, 0.75],
            &c,
            &CommChannel::flat(256, 10.0),
            &grid,
        )
        .unwrap();
        let first = rows[0];
        assert_eq!(first.anchor, Some(Anchor::SensingOptimal));
        assert!((first.snr_loss - c.nu_m2()).abs() < 1e-12);
        assert_eq!(first.psl, 0.0);
        assert!((first.isl - (c.mu4() - 1.0)).abs() < 1e-12);
        let last = rows.last().unwrap();
        assert_eq!(last.kappa, 128);
        assert!((last.psl - 1.0).abs() < 1e-3);
        assert!((last.isl - (c.mu4() * 128.0 - 1.0)).abs() / (c.mu4() * 128.0) < 1e-3);
        for r in &rows[1..] {
            let expect = c.mu4() * (r.kappa as f64 - 1.0) * r.psl + c.mu4() - 1.0;
            assert!((r.isl - expect).abs() < 1e-9);
        }
        assert!(linear_to_db(rows[0].rate) > 0.0);
    }
}
