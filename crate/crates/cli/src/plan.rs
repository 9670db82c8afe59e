//! Experiment plans: parse a config, fan out over a sweep axis and method
//! list, and emit a stable CSV plus a JSON summary.
//!
//! Output contract: every rate-producing command writes `rates.csv` with the
//! fixed column set
//! `experiment_id,kind,method,M1,M2,N,S,mu,P_dBm,l1,epsilon,trials,seed,R1,R2,sum,status,runtime_ms`
//! and a `summary.json` next to it carrying the fully resolved config, its
//! hash, and tool versions. Identical (plan, seed) produce byte-identical
//! artifacts; per-row wall-clock timing is opt-in (`--timings`) because it
//! would break that guarantee.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use gsvnoma::freedet::{FixedPointSolver, SolveOptions};
use gsvnoma::model::{self, MeanSpec, Regime, SystemConfig};
use gsvnoma::rates::{self, Method, RateReport};
use gsvnoma::rayleigh::{self, Dims};
use gsvnoma::sampler::{self, SingularPolicy};
use gsvnoma::{C64, CMatrix};

const CSV_HEADER: &str =
    "experiment_id,kind,method,M1,M2,N,S,mu,P_dBm,l1,epsilon,trials,seed,R1,R2,sum,status,runtime_ms";

#[derive(Parser, Debug)]
#[command(
    name = "gsvnoma",
    about = "GSVD-based MIMO-NOMA rate and spectrum experiments",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Key-value config file; omitted keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config trial count.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Comma-separated methods: monte-carlo, freedet, rayleigh-closed.
    #[arg(long, default_value = "monte-carlo,freedet")]
    pub methods: String,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Report rates in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
    /// Fixed-point solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Record real wall-clock runtimes per row (breaks byte-for-byte
    /// reproducibility of the CSV).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Average user rates for one configuration.
    Rates(CommonArgs),
    /// GSV density: analytic column plus Monte Carlo histogram.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of grid points.
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Histogram bin count.
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Cauchy transforms G_L and G_omega on a z grid.
    CauchyScan {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid start (must be < 0).
        #[arg(long, default_value_t = -10.0)]
        z_min: f64,
        /// Grid end (must be < 0).
        #[arg(long, default_value_t = -0.1)]
        z_max: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Sweep transmit power (dBm).
    SweepSnr {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated P values in dBm.
        #[arg(long, default_value = "20,30,40")]
        p_dbm: String,
        /// Also emit the time-division OMA baseline rows.
        #[arg(long)]
        oma: bool,
    },
    /// Sweep the antenna-scale coefficient mu: dims become (mu*M1, mu*M2, mu*N).
    SweepScale {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated integer mu values.
        #[arg(long, default_value = "1,2,4")]
        mu: String,
    },
    /// Sweep the augmentation parameter of the analytic method; the Monte
    /// Carlo reference keeps the config epsilon.
    SweepEpsilon {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated epsilon values.
        #[arg(long, default_value = "10,1,0.25,0.001")]
        epsilon: String,
    },
    /// All applicable methods on one configuration.
    Compare(CommonArgs),
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rates(common) => {
            let plan = Plan::new("rates", &common)?;
            plan.run_rates()
        }
        Command::Spectrum { common, grid, bins } => {
            let plan = Plan::new("spectrum", &common)?;
            plan.run_spectrum(grid, bins)
        }
        Command::CauchyScan { common, z_min, z_max, points } => {
            let plan = Plan::new("cauchy-scan", &common)?;
            plan.run_cauchy_scan(z_min, z_max, points)
        }
        Command::SweepSnr { common, p_dbm, oma } => {
            let plan = Plan::new("sweep-snr", &common)?;
            plan.run_sweep_snr(&parse_values(&p_dbm)?, oma)
        }
        Command::SweepScale { common, mu } => {
            let plan = Plan::new("sweep-scale", &common)?;
            let mus: Vec<u64> = mu
                .split(',')
                .map(|v| v.trim().parse::<u64>().context("bad mu value"))
                .collect::<Result<_>>()?;
            plan.run_sweep_scale(&mus)
        }
        Command::SweepEpsilon { common, epsilon } => {
            let plan = Plan::new("sweep-epsilon", &common)?;
            plan.run_sweep_epsilon(&parse_values(&epsilon)?)
        }
        Command::Compare(common) => {
            let plan = Plan::new("compare", &common)?;
            plan.run_compare()
        }
    }
}

fn parse_values(list: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().context("bad sweep value"))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("empty sweep axis");
    }
    let increasing = values.windows(2).all(|p| p[0] < p[1]);
    let decreasing = values.windows(2).all(|p| p[0] > p[1]);
    if values.len() > 1 && !increasing && !decreasing {
        bail!("sweep values must be strictly monotone: {values:?}");
    }
    Ok(values)
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .map(|m| match m.trim() {
            "monte-carlo" | "mc" => Ok(Method::MonteCarlo),
            "freedet" => Ok(Method::Freedet),
            "rayleigh-closed" | "closed" => Ok(Method::RayleighClosed),
            other => bail!("unknown method `{other}`"),
        })
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        bail!("methods list is empty");
    }
    Ok(methods)
}

/// One resolved experiment: base config, mean spec, methods, output paths.
struct Plan {
    kind: &'static str,
    config: SystemConfig,
    mean_spec: MeanSpec,
    methods: Vec<Method>,
    out_dir: PathBuf,
    bits: bool,
    timings: bool,
    tol: Option<f64>,
}

/// One emitted CSV row.
struct Row {
    method: String,
    config: SystemConfig,
    mu: u64,
    epsilon: f64,
    report: Option<RateReport>,
    status: String,
}

impl Plan {
    fn new(kind: &'static str, common: &CommonArgs) -> Result<Self> {
        let (mut config, mean_spec) = match &common.config {
            Some(path) => model::parse_config_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => (SystemConfig::default(), MeanSpec::Zero),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(trials) = common.trials {
            config.trials = trials;
        }
        config.validate()?;
        Ok(Plan {
            kind,
            config,
            mean_spec,
            methods: parse_methods(&common.methods)?,
            out_dir: common.out.clone(),
            bits: common.bits,
            timings: common.timings,
            tol: common.tol,
        })
    }

    fn means(&self, config: &SystemConfig) -> Result<(CMatrix, CMatrix)> {
        let (h1, h2) = model::build_mean_matrices(&self.mean_spec, config)?;
        if let Some(warning) = config.sic_ordering_warning(&h1, &h2) {
            eprintln!("warning: {warning}");
        }
        Ok((h1, h2))
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.tol.unwrap_or(1e-10), ..SolveOptions::default() }
    }

    /// Rates for one (config, method); Err is mapped to a failed row.
    fn rates_for(
        &self,
        config: &SystemConfig,
        method: Method,
        analytic_epsilon: Option<f64>,
    ) -> Result<RateReport> {
        match method {
            Method::MonteCarlo => {
                let (h1, h2) = self.means(config)?;
                let run = sampler::run_trials(config, &h1, &h2, SingularPolicy::Resample)?;
                Ok(sampler::empirical_rates(&run, config))
            }
            Method::Freedet => {
                let (h1, h2) = self.means(config)?;
                let solve_config = SystemConfig {
                    epsilon: analytic_epsilon.unwrap_or(config.epsilon),
                    ..config.clone()
                };
                let solver = FixedPointSolver::new(
                    &h1,
                    &h2,
                    solve_config.regime(),
                    solve_config.epsilon,
                )?;
                let transform = rates::FreedetTransform::new(solver, self.solve_options());
                Ok(rates::rates_from_transform(&transform, &solve_config, Method::Freedet)?)
            }
            Method::RayleighClosed => {
                if self.mean_spec != MeanSpec::Zero {
                    bail!("rayleigh-closed applies only to zero means (mean_kind = zero)");
                }
                Ok(rayleigh::closed_rates(config)?)
            }
        }
    }

    fn row_for(
        &self,
        config: &SystemConfig,
        method: Method,
        mu: u64,
        analytic_epsilon: Option<f64>,
    ) -> Row {
        let epsilon = analytic_epsilon.unwrap_or(config.epsilon);
        match self.rates_for(config, method, analytic_epsilon) {
            Ok(report) => Row {
                method: method.to_string(),
                config: config.clone(),
                mu,
                epsilon,
                report: Some(report),
                status: "ok".to_string(),
            },
            Err(err) => Row {
                method: method.to_string(),
                config: config.clone(),
                mu,
                epsilon,
                report: None,
                status: format!("error: {}", compact(&err.to_string())),
            },
        }
    }

    // -- commands ----------------------------------------------------------

    fn run_rates(&self) -> Result<()> {
        let rows: Vec<Row> =
            self.methods.iter().map(|&m| self.row_for(&self.config, m, 1, None)).collect();
        self.finish(rows)
    }

    fn run_compare(&self) -> Result<()> {
        let mut methods = vec![Method::MonteCarlo, Method::Freedet];
        if self.mean_spec == MeanSpec::Zero {
            methods.push(Method::RayleighClosed);
        }
        let rows: Vec<Row> =
            methods.iter().map(|&m| self.row_for(&self.config, m, 1, None)).collect();
        self.finish(rows)
    }

    fn run_sweep_snr(&self, p_values: &[f64], oma: bool) -> Result<()> {
        let mut rows = Vec::new();
        for &p_dbm in p_values {
            let config = SystemConfig { p_dbm, ..self.config.clone() };
            for &m in &self.methods {
                rows.push(self.row_for(&config, m, 1, None));
            }
            if oma {
                rows.push(self.oma_row(&config));
            }
        }
        self.finish(rows)
    }

    fn oma_row(&self, config: &SystemConfig) -> Row {
        let outcome = self.means(config).and_then(|(h1, h2)| {
            let run = sampler::run_trials(config, &h1, &h2, SingularPolicy::Resample)?;
            Ok(sampler::oma_baseline_rates(&run, config))
        });
        match outcome {
            Ok(report) => Row {
                method: "oma-baseline".to_string(),
                config: config.clone(),
                mu: 1,
                epsilon: config.epsilon,
                report: Some(report),
                status: "ok".to_string(),
            },
            Err(err) => Row {
                method: "oma-baseline".to_string(),
                config: config.clone(),
                mu: 1,
                epsilon: config.epsilon,
                report: None,
                status: format!("error: {}", compact(&err.to_string())),
            },
        }
    }

    fn run_sweep_scale(&self, mus: &[u64]) -> Result<()> {
        if mus.is_empty() {
            bail!("empty mu axis");
        }
        let mut rows = Vec::new();
        for &mu in mus {
            if mu < 1 {
                bail!("mu must be >= 1");
            }
            let config = SystemConfig {
                m1: self.config.m1 * mu as usize,
                m2: self.config.m2 * mu as usize,
                n: self.config.n * mu as usize,
                ..self.config.clone()
            };
            for &m in &self.methods {
                rows.push(self.row_for(&config, m, mu, None));
            }
        }
        self.finish(rows)
    }

    fn run_sweep_epsilon(&self, epsilons: &[f64]) -> Result<()> {
        // Monte Carlo reference once, at the config epsilon (the numerical
        // GSVs do not depend on the analytic augmentation parameter)
        let mut rows = Vec::new();
        if self.methods.contains(&Method::MonteCarlo) {
            rows.push(self.row_for(&self.config, Method::MonteCarlo, 1, None));
        }
        for &eps in epsilons {
            if !(eps > 0.0) {
                bail!("epsilon values must be positive");
            }
            for &m in &self.methods {
                if m != Method::MonteCarlo {
                    rows.push(self.row_for(&self.config, m, 1, Some(eps)));
                }
            }
        }
        self.finish(rows)
    }

    fn run_cauchy_scan(&self, z_min: f64, z_max: f64, points: usize) -> Result<()> {
        if !(z_min < 0.0 && z_max < 0.0) {
            bail!("cauchy-scan requires a grid on the negative real axis");
        }
        if points < 2 {
            bail!("need at least 2 grid points");
        }
        let config = &self.config;
        let (h1, h2) = self.means(config)?;
        let regime = config.regime();
        if matches!(regime, Regime::Swapped | Regime::Degenerate) {
            bail!("cauchy-scan requires a normalized non-degenerate pair (M1 <= M2, M1+M2 > N)");
        }

        let want_mc = self.methods.contains(&Method::MonteCarlo);
        let l_spectra = if want_mc {
            Some(sampler::run_l_spectra(config, &h1, &h2, SingularPolicy::Resample)?)
        } else {
            None
        };
        let solver = self
            .methods
            .iter()
            .any(|&m| m == Method::Freedet)
            .then(|| FixedPointSolver::new(&h1, &h2, regime, config.epsilon))
            .transpose()?;
        let dims = self
            .methods
            .contains(&Method::RayleighClosed)
            .then(|| {
                if self.mean_spec != MeanSpec::Zero {
                    bail!("rayleigh-closed applies only to zero means");
                }
                Ok(Dims::from_config(config)?)
            })
            .transpose()?;

        let mut lines = vec!["z,method,G_L_re,G_L_im,G_omega_re,G_omega_im,status".to_string()];
        let opts = self.solve_options();
        for k in 0..points {
            let z = z_min + (z_max - z_min) * k as f64 / (points - 1) as f64;
            let zc = C64::new(z, 0.0);
            for &m in &self.methods {
                let outcome: Result<(C64, C64)> = match m {
                    Method::MonteCarlo => {
                        let spectra = l_spectra.as_ref().unwrap();
                        let pooled: Vec<f64> =
                            spectra.iter().flat_map(|s| s.iter().copied()).collect();
                        let g_l = sampler::empirical_cauchy(&pooled, zc);
                        let g_w = gsvnoma::freedet::cauchy_omega(
                            g_l,
                            zc,
                            config.m1,
                            config.subchannels(),
                            regime,
                        );
                        Ok((g_l, g_w))
                    }
                    Method::Freedet => solver
                        .as_ref()
                        .unwrap()
                        .cauchy_point(zc, &opts)
                        .map(|p| (p.g_l, p.g_omega))
                        .map_err(Into::into),
                    Method::RayleighClosed => {
                        let dims = dims.as_ref().unwrap();
                        rayleigh::closed_cauchy_l(zc, dims)
                            .map(|g_l| {
                                let g_w = gsvnoma::freedet::cauchy_omega(
                                    g_l,
                                    zc,
                                    config.m1,
                                    config.subchannels(),
                                    regime,
                                );
                                (g_l, g_w)
                            })
                            .map_err(Into::into)
                    }
                };
                let line = match outcome {
                    Ok((g_l, g_w)) => format!(
                        "{z},{m},{},{},{},{},ok",
                        fmt_f(g_l.re),
                        fmt_f(g_l.im),
                        fmt_f(g_w.re),
                        fmt_f(g_w.im)
                    ),
                    Err(e) => format!("{z},{m},,,,,error: {}", compact(&e.to_string())),
                };
                lines.push(line);
            }
        }
        fs::create_dir_all(&self.out_dir)?;
        write_lines(&self.out_dir.join("cauchy_scan.csv"), &lines)?;
        self.write_summary(serde_json::json!({
            "points": points, "z_min": z_min, "z_max": z_max,
        }))?;
        Ok(())
    }

    fn run_spectrum(&self, grid: usize, bins: usize) -> Result<()> {
        if grid < 2 {
            bail!("need at least 2 grid points");
        }
        let config = &self.config;
        let regime = config.regime();
        if matches!(regime, Regime::Swapped | Regime::Degenerate) {
            bail!("spectrum requires a normalized non-degenerate pair");
        }

        // analytic column only for zero means
        let dims = (self.mean_spec == MeanSpec::Zero)
            .then(|| Dims::from_config(config))
            .transpose()?;

        let histogram = if config.trials > 0 {
            let (h1, h2) = self.means(config)?;
            let run = sampler::run_trials(config, &h1, &h2, SingularPolicy::Resample)?;
            Some(sampler::empirical_spectrum(&run, bins)?)
        } else {
            None
        };

        // grid over the analytic support when known, else over the data range
        let (lo, hi) = if let Some(d) = &dims {
            match d.support() {
                rayleigh::Support::Bounded(x1, x2) => (x1.max(0.0), x2),
                rayleigh::Support::HalfLine(x1) => {
                    let hi = histogram
                        .as_ref()
                        .map(|h| h.samples().last().copied().unwrap_or(1.0))
                        .unwrap_or(x1 + 30.0);
                    (x1.max(0.0), hi)
                }
            }
        } else {
            let h = histogram
                .as_ref()
                .context("spectrum with nonzero means needs trials > 0 for the histogram")?;
            (h.samples().first().copied().unwrap(), h.samples().last().copied().unwrap())
        };

        let mut header = "x,f_omega".to_string();
        if histogram.is_some() {
            header.push_str(",hist_density");
        }
        let mut lines = vec![header];
        for k in 0..grid {
            let x = lo + (hi - lo) * k as f64 / (grid - 1) as f64;
            let analytic = dims.as_ref().map(|d| rayleigh::pdf_omega(x, d));
            let mut line = format!("{},{}", fmt_f(x), fmt_f(analytic.unwrap_or(f64::NAN)));
            if let Some(h) = &histogram {
                line.push_str(&format!(",{}", fmt_f(hist_density_at(h, x))));
            }
            lines.push(line);
        }
        fs::create_dir_all(&self.out_dir)?;
        write_lines(&self.out_dir.join("density.csv"), &lines)?;
        self.write_summary(serde_json::json!({ "grid": grid, "bins": bins }))?;
        Ok(())
    }

    // -- output ------------------------------------------------------------

    fn finish(&self, rows: Vec<Row>) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        let mut lines = vec![CSV_HEADER.to_string()];
        let scale = if self.bits { std::f64::consts::LN_2.recip() } else { 1.0 };
        let mut any_error = false;
        for (idx, row) in rows.iter().enumerate() {
            any_error |= row.status != "ok";
            let c = &row.config;
            let (r1, r2, sum, runtime) = match &row.report {
                Some(rep) => (
                    fmt_f(rep.r1 * scale),
                    fmt_f(rep.r2 * scale),
                    fmt_f(rep.sum * scale),
                    if self.timings { rep.meta.runtime_ms } else { 0 },
                ),
                None => (String::new(), String::new(), String::new(), 0),
            };
            lines.push(format!(
                "{idx},{kind},{method},{m1},{m2},{n},{s},{mu},{p},{l1},{eps},{trials},{seed},{r1},{r2},{sum},{status},{runtime}",
                kind = self.kind,
                method = row.method,
                m1 = c.m1,
                m2 = c.m2,
                n = c.n,
                s = c.subchannels(),
                mu = row.mu,
                p = fmt_f(c.p_dbm),
                l1 = fmt_f(c.l1),
                eps = fmt_f(row.epsilon),
                trials = c.trials,
                seed = c.seed,
                status = row.status,
            ));
        }
        write_lines(&self.out_dir.join("rates.csv"), &lines)?;
        self.write_summary(serde_json::json!({ "rows": rows.len() }))?;
        if any_error {
            bail!("one or more rows failed; see the status column");
        }
        Ok(())
    }

    fn write_summary(&self, extra: serde_json::Value) -> Result<()> {
        let c = &self.config;
        let resolved = serde_json::json!({
            "m1": c.m1, "m2": c.m2, "n": c.n,
            "s": c.subchannels(),
            "regime": c.regime().to_string(),
            "d1": c.d1, "d2": c.d2, "tau": c.tau, "t": c.t,
            "p_dbm": c.p_dbm, "pn_dbm": c.pn_dbm, "rho": c.rho(),
            "l1": c.l1, "epsilon": c.epsilon,
            "seed": c.seed, "trials": c.trials,
            "mean_spec": format!("{:?}", self.mean_spec),
            "units": if self.bits { "bits" } else { "nats" },
        });
        let hash = {
            let mut hasher = Sha256::new();
            hasher.update(resolved.to_string().as_bytes());
            format!("{:x}", hasher.finalize())
        };
        let summary = serde_json::json!({
            "kind": self.kind,
            "config": resolved,
            "config_hash": hash,
            "methods": self.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "versions": {
                "gsvnoma": env!("CARGO_PKG_VERSION"),
            },
            "detail": extra,
        });
        fs::write(
            self.out_dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
        Ok(())
    }
}

/// Histogram density at x (0 outside the sampled range).
fn hist_density_at(spectrum: &sampler::EmpiricalSpectrum, x: f64) -> f64 {
    let edges = &spectrum.bin_edges;
    if x < edges[0] || x > *edges.last().unwrap() {
        return 0.0;
    }
    let idx = edges.partition_point(|&e| e <= x).saturating_sub(1).min(spectrum.densities.len() - 1);
    spectrum.densities[idx]
}

/// Shortest-roundtrip float formatting; empty cells stay empty.
fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Keep status cells on one CSV line.
fn compact(text: &str) -> String {
    text.replace(['\n', ','], ";")
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut body = lines.join("\n");
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
