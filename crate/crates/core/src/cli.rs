//! Command-line front end.
//!
//! Data goes to `--output` (or stdout). Run metadata goes to side files next
//! to the output (`.provenance.json`, plus `.meta.json` / `.summary.json` where a
//! subcommand has one), or to stderr when writing to stdout. Data files depend
//! only on the configuration, never on timing or worker count.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremes::{
    convergence_report, default_x_grid, gumbel_comparison, Measure, MonteCarloSpec,
};
use crate::laws::ExcursionLaw;
use crate::renewal_dp::{brute_force_oracle, renewal_mass, LongestLaw};
use crate::sampler::{run_experiment, run_overshoot_chain, Mode};
use crate::tilt::{TiltOptions, TiltedModel, DEFAULT_EPS_TRUNC, DEFAULT_TOL};

pub const THREADS_ENV: &str = "EXCURSION_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "excursion-lab",
    version,
    about = "Longest excursion of a pinned renewal polymer"
)]
struct Cli {
    /// Plain-text key=value file supplying defaults for flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Free energy, mean excursion, centering constant and truncation of the tilted law.
    FreeEnergy(ModelArgs),
    /// Exact constrained cdf of the longest excursion.
    ExactCdf {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Caps to evaluate; defaults to 1..=min(N, M).
        #[arg(long = "m", value_delimiter = ',')]
        m: Vec<usize>,
    },
    /// Brute-force enumeration of all compositions (N <= 16).
    Oracle {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<usize>,
    },
    /// Monte Carlo samples of the longest excursion.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Pinned)]
        mode: Mode,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Compare the exact constrained cdf with the Gumbel law over a grid of x.
    VerifyGumbel {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "N", value_delimiter = ',', default_value = "1000,10000,100000")]
        n: Vec<usize>,
        /// `lo:hi:step` or a comma-separated list.
        #[arg(long = "x-grid", allow_hyphen_values = true)]
        x_grid: Option<String>,
        /// Pinned Monte Carlo samples per N for the KS column; 0 disables it.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Run the overshoot chain and summarize its renewal visits.
    OvershootChain {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModelArgs {
    /// zeta:alpha=<a> | twopoint:q=<q> | srw1d | table:path=<file>[,D=<d>,alpha=<a>]
    #[arg(long, default_value = "zeta:alpha=2")]
    law: String,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long = "eps-trunc", default_value_t = DEFAULT_EPS_TRUNC)]
    eps_trunc: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct WorkerArgs {
    /// Worker threads; falls back to $EXCURSION_LAB_THREADS, then to the CPU count.
    #[arg(long)]
    workers: Option<usize>,
}

impl WorkerArgs {
    fn resolve(&self) -> Result<usize> {
        if let Some(w) = self.workers {
            return Ok(w.max(1));
        }
        if let Ok(v) = std::env::var(THREADS_ENV) {
            return v.trim().parse::<usize>().map(|w| w.max(1)).map_err(|_| {
                Error::InvalidParameter(format!("{THREADS_ENV}=`{v}` is not a count"))
            });
        }
        Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

impl ModelArgs {
    fn build(&self) -> Result<TiltedModel> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        for (name, v) in [("eps-trunc", self.eps_trunc), ("tol", self.tol)] {
            if !(v > 0.0 && v <= 1e-6) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1e-6], got {v}"
                )));
            }
        }
        let law: ExcursionLaw = self.law.parse()?;
        TiltedModel::build(
            law,
            self.beta,
            TiltOptions {
                eps_trunc: self.eps_trunc,
                tol: self.tol,
            },
        )
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..16).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, v)
    } else {
        format!("{v:.16e}")
    }
}

struct Sink<'a> {
    output: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Sink<'_> {
    fn data(&mut self, body: &str) -> Result<()> {
        match &self.output {
            Some(path) => fs::write(path, body)?,
            None => self.stdout.write_all(body.as_bytes())?,
        }
        Ok(())
    }

    /// Side document: `<output>.<suffix>` or one line on stderr.
    fn side(&mut self, suffix: &str, value: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string(value).expect("json values serialize");
        match &self.output {
            Some(path) => fs::write(side_path(path, suffix), text + "\n")?,
            None => writeln!(self.stderr, "{text}")?,
        }
        Ok(())
    }
}

fn side_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("bad x-grid `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, step] = parts[..] else {
            return Err(bad());
        };
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| lo + step * i as f64).collect())
    } else {
        spec.split(',').map(num).collect()
    }
}

/// The `free-energy` document, keys in their documented order.
fn free_energy_json(model: &TiltedModel) -> String {
    #[derive(Serialize)]
    struct FreeEnergyOut {
        beta: f64,
        #[serde(rename = "F")]
        f: f64,
        mu: f64,
        #[serde(rename = "C")]
        c: Option<f64>,
        #[serde(rename = "M")]
        m: usize,
        residual: f64,
    }
    serde_json::to_string(&FreeEnergyOut {
        beta: model.beta(),
        f: model.free_energy(),
        mu: model.mean_excursion(),
        c: model.centering_constant().ok(),
        m: model.truncation(),
        residual: model.residual(),
    })
    .expect("json values serialize")
}

fn execute(cli: &Cli, sink: &mut Sink<'_>) -> Result<serde_json::Value> {
    match &cli.command {
        Command::FreeEnergy(args) => {
            let model = args.build()?;
            sink.data(&(free_energy_json(&model) + "\n"))?;
            Ok(serde_json::json!({ "period": model.law().period() }))
        }
        Command::ExactCdf { model: args, n, m } => {
            let model = args.build()?;
            let mut out = String::from("N,m,cdf\n");
            for &horizon in n {
                let table = renewal_mass(&model, horizon)?;
                let law = LongestLaw::exact(&model, &table, horizon)?;
                let caps: Vec<usize> = if m.is_empty() {
                    (1..=horizon.min(model.truncation())).collect()
                } else {
                    m.clone()
                };
                for cap in caps {
                    out.push_str(&format!("{horizon},{cap},{}\n", fmt17(law.cdf(cap as i64))));
                }
            }
            sink.data(&out)?;
            Ok(serde_json::json!({ "period": model.law().period(), "M": model.truncation() }))
        }
        Command::Oracle { model: args, n } => {
            let law: ExcursionLaw = args.law.parse()?;
            if !(args.beta > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "beta must be > 0, got {}",
                    args.beta
                )));
            }
            let mut out = String::from("N,m,cdf,log_zc\n");
            for &horizon in n {
                let res = brute_force_oracle(&law, args.beta, horizon)?;
                let lz = fmt17(res.log_zc);
                for (i, c) in res.cdf().into_iter().enumerate() {
                    out.push_str(&format!("{horizon},{},{},{lz}\n", i + 1, fmt17(c.min(1.0))));
                }
            }
            sink.data(&out)?;
            Ok(serde_json::json!({ "period": law.period() }))
        }
        Command::Simulate {
            model: args,
            n,
            samples,
            seed,
            mode,
            workers,
        } => {
            let model = args.build()?;
            let w = workers.resolve()?;
            let recs = run_experiment(&model, *mode, *n, *samples, *seed, w)?;
            let mut out = String::with_capacity(recs.len() * 16 + 16);
            out.push_str("sample,gamma,k\n");
            for (s, r) in recs.iter().enumerate() {
                out.push_str(&format!("{s},{},{}\n", r.gamma, r.k));
            }
            sink.data(&out)?;
            sink.side(
                "meta.json",
                &serde_json::json!({ "seed": seed, "N": n, "mode": mode, "n_samples": samples }),
            )?;
            Ok(serde_json::json!({ "period": model.law().period(), "workers": w }))
        }
        Command::VerifyGumbel {
            model: args,
            n,
            x_grid,
            samples,
            seed,
            workers,
        } => {
            let model = args.build()?;
            let grid = match x_grid {
                Some(spec) => parse_grid(spec)?,
                None => default_x_grid(),
            };
            let mc = if *samples > 0 {
                Some(MonteCarloSpec {
                    n_samples: *samples,
                    seed: *seed,
                    workers: workers.resolve()?,
                })
            } else {
                None
            };
            let report = convergence_report(&model, n, &grid, mc)?;
            let mut out = String::from("N,x,exact_cdf,gumbel_cdf,gap\n");
            for rec in &report.records {
                let table = renewal_mass(&model, rec.horizon)?;
                let cmp = gumbel_comparison(&model, &table, rec.horizon, &grid, Measure::Pinned)?;
                for p in &cmp.points {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        rec.horizon,
                        fmt17(p.x),
                        fmt17(p.exact_cdf),
                        fmt17(p.gumbel_cdf),
                        fmt17(p.gap)
                    ));
                }
            }
            sink.data(&out)?;
            let pick = |f: fn(&crate::extremes::ConvergenceRecord) -> f64| -> Vec<f64> {
                report.records.iter().map(f).collect()
            };
            sink.side(
                "summary.json",
                &serde_json::json!({
                    "sup_gaps": pick(|r| r.sup_gap),
                    "lln_ratios": pick(|r| r.lln_ratio),
                    "renewal_gaps": pick(|r| r.renewal_gap),
                }),
            )?;
            Ok(serde_json::to_value(&report).expect("json values serialize"))
        }
        Command::OvershootChain {
            model: args,
            steps,
            seed,
        } => {
            let model = args.build()?;
            let summary = run_overshoot_chain(&model, *steps, *seed)?;
            let body = serde_json::to_string(&summary).expect("json values serialize");
            sink.data(&(body + "\n"))?;
            Ok(serde_json::json!({ "period": model.law().period() }))
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::FreeEnergy(_) => "free-energy",
            Command::ExactCdf { .. } => "exact-cdf",
            Command::Oracle { .. } => "oracle",
            Command::Simulate { .. } => "simulate",
            Command::VerifyGumbel { .. } => "verify-gumbel",
            Command::OvershootChain { .. } => "overshoot-chain",
        }
    }

    fn model_args(&self) -> &ModelArgs {
        match self {
            Command::FreeEnergy(m)
            | Command::ExactCdf { model: m, .. }
            | Command::Oracle { model: m, .. }
            | Command::Simulate { model: m, .. }
            | Command::VerifyGumbel { model: m, .. }
            | Command::OvershootChain { model: m, .. } => m,
        }
    }
}

/// Reads `key=value` lines (`#` comments allowed).
fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        pairs.push((
            k.trim().trim_start_matches("--").to_string(),
            v.trim().to_string(),
        ));
    }
    Ok(pairs)
}

/// Splices config-file defaults into argv after the subcommand name, skipping
/// keys the command line already sets.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let config = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(config) = config else {
        return Ok(args);
    };
    let pairs = read_config(Path::new(&config))?;

    let command = Cli::command();
    let Some((pos, sub)) = strs
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| command.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(args);
    };
    let accepted: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let known_anywhere = |k: &str| {
        command
            .get_subcommands()
            .any(|s| s.get_arguments().any(|a| a.get_long() == Some(k)))
    };

    let mut extra = Vec::new();
    for (k, v) in pairs {
        if !known_anywhere(&k) {
            return Err(Error::InvalidParameter(format!("unknown config key `{k}`")));
        }
        if !accepted.contains(&k) {
            continue;
        }
        let flag = format!("--{k}");
        let set = strs
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !set {
            extra.push(OsString::from(format!("{flag}={v}")));
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, extra);
    Ok(out)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 on usage or
/// validation errors, 1 on runtime errors.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };

    let started = Instant::now();
    let model_args = cli.command.model_args().clone();
    let mut sink = Sink {
        output: model_args.output.clone(),
        stdout,
        stderr,
    };
    match execute(&cli, &mut sink) {
        Ok(extra) => {
            let mut config = serde_json::to_value(&model_args).expect("json values serialize");
            if let serde_json::Value::Object(map) = &mut config {
                map.remove("output");
            }
            let provenance = serde_json::json!({
                "tool": "excursion-lab",
                "version": env!("CARGO_PKG_VERSION"),
                "command": cli.command.name(),
                "argv": argv,
                "config": config,
                "details": extra,
                "wall_time_s": started.elapsed().as_secs_f64(),
            });
            match sink.side("provenance.json", &provenance) {
                Ok(()) => 0,
                Err(e) => {
                    let _ = writeln!(sink.stderr, "error: {e}");
                    1
                }
            }
        }
        Err(e) => {
            let _ = writeln!(sink.stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(std::env::args_os(), &mut out, &mut err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["excursion-lab"];
        argv.extend_from_slice(args);
        let code = run_with(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn fmt17_digits() {
        assert_eq!(fmt17(0.5), "0.50000000000000000");
        assert_eq!(fmt17(std::f64::consts::E.recip()), "0.36787944117144233");
        assert_eq!(fmt17(1.0), "1.0000000000000000");
        assert_eq!(fmt17(1e-69), "9.9999999999999996e-70");
        assert_eq!(fmt17(-2.5), "-2.5000000000000000");
        for v in [0.1, 1.0 / 3.0, 123.456, 7e-300, 2.5e20] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn free_energy_json_keys() {
        let (code, out, _) = run_capture(&[
            "free-energy",
            "--law",
            "twopoint:q=0.5",
            "--beta",
            "0.9808292530117262",
        ]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut expected = vec!["beta", "F", "mu", "C", "M", "residual"];
        expected.sort();
        let mut keys_sorted = keys.clone();
        keys_sorted.sort();
        assert_eq!(keys_sorted, expected);
        assert!((v["F"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(v["C"].is_null());
        assert!(out.starts_with("{\"beta\":"));
    }

    #[test]
    fn validation_errors_exit_2() {
        assert_eq!(run_capture(&["free-energy", "--beta", "-1"]).0, 2);
        assert_eq!(run_capture(&["free-energy", "--law", "nope"]).0, 2);
        assert_eq!(run_capture(&["free-energy", "--bogus"]).0, 2);
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        assert_eq!(run_capture(&["oracle", "--N", "17"]).0, 2);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        // odd horizons are unreachable when K(2) = 1
        let (code, _, err) = run_capture(&["exact-cdf", "--law", "twopoint:q=0", "--N", "3"]);
        assert_eq!(code, 1, "{err}");
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid("-1:1:0.5").unwrap(),
            vec![-1.0, -0.5, 0.0, 0.5, 1.0]
        );
        assert_eq!(parse_grid("0,2.5").unwrap(), vec![0.0, 2.5]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn config_defaults_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            "# defaults\nlaw = twopoint:q=0.5\nbeta=0.9808292530117262\nsteps=10\n",
        )
        .unwrap();
        let cfg = cfg.to_str().unwrap();
        let (code, out, err) = run_capture(&["free-energy", "--config", cfg]);
        assert_eq!(code, 0, "{err}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["F"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);

        let (code, out, _) = run_capture(&["free-energy", "--config", cfg, "--beta", "2"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["beta"].as_f64().unwrap(), 2.0);

        let bad = dir.path().join("bad.cfg");
        fs::write(&bad, "color=blue\n").unwrap();
        assert_eq!(
            run_capture(&["free-energy", "--config", bad.to_str().unwrap()]).0,
            2
        );
    }
}
