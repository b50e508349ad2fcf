//! Projector construction timing and memory tables.

use std::time::Instant;

use lotus_core::linalg::RngState;
use lotus_core::subspace::{compute_projector, ProjectionMethod, ProjectorConfig};
use lotus_core::{memory_accounting, AccountingMode, AccountingReport};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdBench {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub randomized_us: Vec<u64>,
    pub exact_us: Vec<u64>,
}

pub fn median(values: &[u64]) -> u64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    match v.len() {
        0 => 0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2,
    }
}

impl SvdBench {
    pub fn randomized_median_us(&self) -> u64 {
        median(&self.randomized_us)
    }

    pub fn exact_median_us(&self) -> u64 {
        median(&self.exact_us)
    }

    /// Randomized over exact median time.
    pub fn ratio(&self) -> f64 {
        self.randomized_median_us() as f64 / self.exact_median_us().max(1) as f64
    }
}

/// Times `runs` projector builds of each kind on fresh Gaussian matrices.
/// Both methods see the same matrix in each run.
pub fn bench_svd(rows: usize, cols: usize, rank: usize, runs: usize, seed: u64) -> Result<SvdBench> {
    let rng = RngState::new(seed);
    let randomized = ProjectorConfig::default();
    let exact = ProjectorConfig {
        method: ProjectionMethod::Exact,
        ..randomized
    };
    let mut out = SvdBench {
        rows,
        cols,
        rank,
        randomized_us: Vec::with_capacity(runs),
        exact_us: Vec::with_capacity(runs),
    };
    for run in 0..runs {
        let g = rng.fork(run as u64).gaussian_matrix(rows, cols);
        let clock = Instant::now();
        compute_projector(&g, rank, rng.fork(1000 + run as u64), &randomized, 0)?;
        out.randomized_us.push(clock.elapsed().as_micros() as u64);
        let clock = Instant::now();
        compute_projector(&g, rank, rng, &exact, 0)?;
        out.exact_us.push(clock.elapsed().as_micros() as u64);
    }
    Ok(out)
}

pub fn format_svd_table(rows: &[SvdBench]) -> String {
    let mut out = format!(
        "{:>11} {:>6} {:>5} {:>14} {:>14} {:>7}\n",
        "shape", "rank", "runs", "rsvd_med_ms", "exact_med_ms", "ratio"
    );
    for b in rows {
        out.push_str(&format!(
            "{:>11} {:>6} {:>5} {:>14.3} {:>14.3} {:>7.4}\n",
            format!("{}x{}", b.rows, b.cols),
            b.rank,
            b.randomized_us.len(),
            b.randomized_median_us() as f64 / 1e3,
            b.exact_median_us() as f64 / 1e3,
            b.ratio()
        ));
    }
    out
}

/// Low-rank accounting for every `(shape, rank)` pair whose rank fits the
/// shorter side.
pub fn account_table(shapes: &[(usize, usize)], ranks: &[usize]) -> Vec<AccountingReport> {
    shapes
        .iter()
        .flat_map(|&s| {
            ranks
                .iter()
                .filter(move |&&r| r >= 1 && r <= s.0.min(s.1))
                .map(move |&r| memory_accounting(s, r, AccountingMode::LowRank))
        })
        .collect()
}

pub fn format_account_table(reports: &[AccountingReport]) -> String {
    let mut out = format!(
        "{:>11} {:>6} {:>12} {:>12} {:>12} {:>14} {:>14} {:>10}\n",
        "shape", "rank", "gradient", "projector", "moments", "total", "full_adam", "reduction"
    );
    for r in reports {
        out.push_str(&format!(
            "{:>11} {:>6} {:>12} {:>12} {:>12} {:>14} {:>14} {:>9.2}%\n",
            format!("{}x{}", r.rows, r.cols),
            r.rank,
            r.gradient,
            r.projector,
            r.moments,
            r.total,
            r.full_adam_total,
            100.0 * r.reduction
        ));
    }
    out
}
