//! Shared run configuration: exponents, grid level, seed, output directory.
//!
//! Values come from (in increasing precedence) built-in defaults, an
//! optional key=value config file, and command-line flags. Unknown keys in
//! the file are rejected. Exponent inequalities are enforced at parse time
//! and the violated inequality is quoted in the error.

use clap::Args;
use roughfbm::grid::ExponentConfig;
use std::path::PathBuf;

#[derive(Args, Clone, Debug)]
pub struct CommonOpts {
    /// Hurst index H in (1/3, 1/2) [default 0.4]
    #[arg(long)]
    pub h: Option<f64>,
    /// bracketing exponent H- [default H - 0.05]
    #[arg(long)]
    pub h_minus: Option<f64>,
    /// bracketing exponent H+ [default H + 0.05]
    #[arg(long)]
    pub h_plus: Option<f64>,
    /// drift regularity exponent [default 0.1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// negative test exponent in (-1/(2H), 0) [default -0.9]
    #[arg(long)]
    pub gamma_neg: Option<f64>,
    /// dyadic grid level (2^n cells on [0, 1]) [default 7]
    #[arg(long)]
    pub n: Option<u32>,
    /// master seed [default 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// output directory (default: $ROUGHFBM_OUT or ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key=value config file; flags override file entries
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum GermChoice {
    L,
    K,
    Increment,
    Planted,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub exponents: ExponentConfig,
    pub level: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Default)]
struct FileValues {
    h: Option<f64>,
    h_minus: Option<f64>,
    h_plus: Option<f64>,
    alpha: Option<f64>,
    gamma_neg: Option<f64>,
    level: Option<u32>,
    seed: Option<u64>,
}

fn parse_file(path: &std::path::Path) -> Result<FileValues, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("config file: {e}"))?;
    let mut vals = FileValues::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_f = || value.parse::<f64>().map_err(|e| format!("config {key}: {e}"));
        match key {
            "H" => vals.h = Some(parse_f()?),
            "H_minus" => vals.h_minus = Some(parse_f()?),
            "H_plus" => vals.h_plus = Some(parse_f()?),
            "alpha" => vals.alpha = Some(parse_f()?),
            "gamma_neg" => vals.gamma_neg = Some(parse_f()?),
            "level" => {
                vals.level = Some(value.parse::<u32>().map_err(|e| format!("config level: {e}"))?)
            }
            "seed" => {
                vals.seed = Some(value.parse::<u64>().map_err(|e| format!("config seed: {e}"))?)
            }
            other => return Err(format!("unknown config key '{other}'")),
        }
    }
    Ok(vals)
}

pub fn resolve(common: &CommonOpts) -> Result<RunConfig, String> {
    let file = match &common.config {
        Some(path) => parse_file(path)?,
        None => FileValues::default(),
    };
    // precedence: flag > file > default
    let h = common.h.or(file.h).unwrap_or(0.4);
    let h_minus = common.h_minus.or(file.h_minus).unwrap_or(h - 0.05);
    let h_plus = common.h_plus.or(file.h_plus).unwrap_or(h + 0.05);
    let alpha = common.alpha.or(file.alpha).unwrap_or(0.1);
    let gamma_neg = common.gamma_neg.or(file.gamma_neg).unwrap_or(-0.9);
    let level = common.n.or(file.level).unwrap_or(7);
    let seed = common.seed.or(file.seed).unwrap_or(1);

    let exponents =
        ExponentConfig::new(h, h_minus, h_plus, alpha, gamma_neg).map_err(|e| e.to_string())?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("ROUGHFBM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunConfig { exponents, level, seed, out_dir })
}
