//! Wall-clock timing of full batch-gradient evaluations per gradient engine,
//! with log-log slope fits across dimensions.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grad::{self, oracle, GradientFlavor, LayerGradient};
use crate::linalg::{self, dense_matmul, relative_frobenius_error, Rng, Vector};
use crate::model::{init_network, BaseDistribution, Network, Nonlinearity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchFlavor {
    /// Relative gradient, matvec and outer products only.
    Relative,
    /// Euclidean gradient with one explicit inverse per layer.
    Ordinary,
    /// Euclidean gradient through per-sample explicit Jacobians.
    Jacobian,
}

impl BenchFlavor {
    pub const ALL: [BenchFlavor; 3] = [
        BenchFlavor::Relative,
        BenchFlavor::Ordinary,
        BenchFlavor::Jacobian,
    ];
}

impl fmt::Display for BenchFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchFlavor::Relative => "relative",
            BenchFlavor::Ordinary => "ordinary",
            BenchFlavor::Jacobian => "jacobian",
        })
    }
}

impl FromStr for BenchFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(BenchFlavor::Relative),
            "ordinary" => Ok(BenchFlavor::Ordinary),
            "jacobian" | "explicit-jacobian" => Ok(BenchFlavor::Jacobian),
            other => Err(Error::InvalidArgument(format!(
                "unknown benchmark flavor '{other}' (expected relative, ordinary or jacobian)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub batch: usize,
    pub layers: usize,
    pub reps: usize,
    pub flavors: Vec<BenchFlavor>,
    pub seed: u64,
    /// Largest dimension for the explicit-Jacobian engine.
    pub jacobian_bound: usize,
    /// Cross-check the engines against each other before timing.
    pub verify: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: vec![128, 256, 512, 1024],
            batch: 100,
            layers: 2,
            reps: 10,
            flavors: vec![
                BenchFlavor::Relative,
                BenchFlavor::Ordinary,
                BenchFlavor::Jacobian,
            ],
            seed: 0,
            jacobian_bound: oracle::ORACLE_BOUND,
            verify: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub dim: usize,
    pub flavor: BenchFlavor,
    pub mean_s: f64,
    pub min_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub flavor: BenchFlavor,
    /// Least-squares slope of `log(min time)` against `log D`.
    pub slope: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<TimingRow>,
    pub slopes: Vec<SlopeFit>,
    /// Human-readable notices, e.g. skipped engines.
    pub notices: Vec<String>,
    /// Worst relative mismatch seen in the pre-timing cross-check.
    pub max_crosscheck_error: f64,
    /// `dense_matmul` calls made while timing the relative engine.
    pub relative_matmul_calls: u64,
}

impl BenchReport {
    pub fn row(&self, dim: usize, flavor: BenchFlavor) -> Option<&TimingRow> {
        self.rows
            .iter()
            .find(|r| r.dim == dim && r.flavor == flavor)
    }

    pub fn slope(&self, flavor: BenchFlavor) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.flavor == flavor)
            .map(|s| s.slope)
    }

    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "dim,flavor,mean_s,min_s")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.9},{:.9}", r.dim, r.flavor, r.mean_s, r.min_s)?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut w: impl Write) -> Result<()> {
        for s in &self.slopes {
            writeln!(
                w,
                "slope {}: {:.3} over {} dims",
                s.flavor, s.slope, s.points
            )?;
        }
        for n in &self.notices {
            writeln!(w, "note: {n}")?;
        }
        Ok(())
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn run(
    flavor: BenchFlavor,
    net: &Network,
    bd: BaseDistribution,
    batch: &[Vector],
    bound: usize,
) -> Result<Vec<LayerGradient>> {
    match flavor {
        BenchFlavor::Relative => {
            Ok(grad::batch_gradient(net, bd, batch, GradientFlavor::RelativeRight)?.layers)
        }
        BenchFlavor::Ordinary => {
            Ok(grad::batch_gradient(net, bd, batch, GradientFlavor::Ordinary)?.layers)
        }
        BenchFlavor::Jacobian => oracle::batch_jacobian_gradient(net, bd, batch, bound),
    }
}

/// Check `relative = ordinary · WᵀW` per layer (biases are off here).
fn crosscheck(
    net: &Network,
    relative: &[LayerGradient],
    ordinary: &[LayerGradient],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ((layer, r), o) in net.layers().iter().zip(relative).zip(ordinary) {
        let w = &layer.weight;
        let wtw = dense_matmul(&w.transpose(), w)?;
        let want = dense_matmul(&o.d_weight, &wtw)?;
        worst = worst.max(relative_frobenius_error(&r.d_weight, &want));
    }
    Ok(worst)
}

pub fn bench_gradients(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "reps must be >= 3, got {}",
            cfg.reps
        )));
    }
    if cfg.dims.is_empty() || cfg.dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "dims must be non-empty and strictly ascending".into(),
        ));
    }
    if cfg.batch == 0 || cfg.layers == 0 || cfg.flavors.is_empty() {
        return Err(Error::InvalidArgument(
            "batch, layers and flavors must be non-empty".into(),
        ));
    }
    let bd = BaseDistribution::StandardNormal;
    let nl = Nonlinearity::default();
    let mut report = BenchReport::default();

    for &dim in &cfg.dims {
        let mut rng = Rng::new(cfg.seed ^ dim as u64);
        let net = init_network(&mut rng, dim, cfg.layers, nl, false, false, None)?;
        let batch: Vec<Vector> = (0..cfg.batch)
            .map(|_| linalg::random_normal_vector(&mut rng, dim))
            .collect();

        let flavors: Vec<BenchFlavor> = cfg
            .flavors
            .iter()
            .copied()
            .filter(|f| {
                let keep = *f != BenchFlavor::Jacobian || dim <= cfg.jacobian_bound;
                if !keep {
                    report.notices.push(format!(
                        "jacobian skipped at D={dim} (bound {})",
                        cfg.jacobian_bound
                    ));
                }
                keep
            })
            .collect();

        // warm-up, doubling as the cross-check
        let mut outputs = Vec::new();
        for &f in &flavors {
            outputs.push((f, run(f, &net, bd, &batch, cfg.jacobian_bound)?));
        }
        if cfg.verify {
            let find = |want: BenchFlavor| outputs.iter().find(|(f, _)| *f == want).map(|(_, g)| g);
            let reference = find(BenchFlavor::Ordinary).or_else(|| find(BenchFlavor::Jacobian));
            if let (Some(rel), Some(reference)) = (find(BenchFlavor::Relative), reference) {
                let err = crosscheck(&net, rel, reference)?;
                report.max_crosscheck_error = report.max_crosscheck_error.max(err);
            }
            if let (Some(ord), Some(jac)) =
                (find(BenchFlavor::Ordinary), find(BenchFlavor::Jacobian))
            {
                for (a, b) in ord.iter().zip(jac) {
                    let err = relative_frobenius_error(&a.d_weight, &b.d_weight);
                    report.max_crosscheck_error = report.max_crosscheck_error.max(err);
                }
            }
        }
        drop(outputs);

        for &f in &flavors {
            let calls_before = linalg::dense_matmul_calls();
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let start = Instant::now();
                let g = run(f, &net, bd, &batch, cfg.jacobian_bound)?;
                times.push(start.elapsed().as_secs_f64());
                std::hint::black_box(g);
            }
            if f == BenchFlavor::Relative {
                report.relative_matmul_calls += linalg::dense_matmul_calls() - calls_before;
            }
            let mean_s = times.iter().sum::<f64>() / times.len() as f64;
            let min_s = times.iter().copied().fold(f64::INFINITY, f64::min);
            report.rows.push(TimingRow {
                dim,
                flavor: f,
                mean_s,
                min_s,
            });
        }
    }

    for &f in &cfg.flavors {
        let (xs, ys): (Vec<f64>, Vec<f64>) = report
            .rows
            .iter()
            .filter(|r| r.flavor == f)
            .map(|r| ((r.dim as f64).ln(), r.min_s.ln()))
            .unzip();
        if xs.len() >= 2 {
            report.slopes.push(SlopeFit {
                flavor: f,
                slope: fit_slope(&xs, &ys),
                points: xs.len(),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|x| (3.0 * x.powi(2)).ln())
            .collect();
        assert!((fit_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_run_cross_checks_all_engines() {
        let cfg = BenchConfig {
            dims: vec![16, 32, 64],
            batch: 10,
            reps: 3,
            ..Default::default()
        };
        let r = bench_gradients(&cfg).unwrap();
        assert_eq!(r.rows.len(), 9);
        assert!(r.max_crosscheck_error < 1e-9, "{}", r.max_crosscheck_error);
        assert_eq!(r.relative_matmul_calls, 0);
        assert!(r.notices.is_empty());
        let mut table = Vec::new();
        r.write_table(&mut table).unwrap();
        let text = String::from_utf8(table).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn jacobian_skipped_above_bound() {
        let cfg = BenchConfig {
            dims: vec![8, 80],
            batch: 4,
            reps: 3,
            ..Default::default()
        };
        let r = bench_gradients(&cfg).unwrap();
        assert!(r.row(80, BenchFlavor::Jacobian).is_none());
        assert!(r.row(8, BenchFlavor::Jacobian).is_some());
        assert_eq!(r.notices.len(), 1);
    }

    #[test]
    fn single_flavor_and_validation() {
        let cfg = BenchConfig {
            dims: vec![8, 16],
            batch: 4,
            reps: 3,
            flavors: vec![BenchFlavor::Relative],
            ..Default::default()
        };
        let r = bench_gradients(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.flavor == BenchFlavor::Relative));
        assert!(bench_gradients(&BenchConfig {
            reps: 2,
            ..cfg.clone()
        })
        .is_err());
        assert!(bench_gradients(&BenchConfig {
            dims: vec![16, 8],
            ..cfg
        })
        .is_err());
    }
}
