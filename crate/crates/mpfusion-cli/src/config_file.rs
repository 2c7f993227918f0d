//! Flat `key = value` configuration parsing (with `#` comments) and the
//! fuse-debug input format. Every config key maps one-to-one onto a
//! `--set key=value` override.

use std::fs;
use std::path::Path;

use mpfusion::experiment::{Algorithm, ExperimentConfig};
use mpfusion::gaussian::Gaussian;
use nalgebra::{DMatrix, DVector};

pub fn load_config(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected 'key = value', got '{raw}'", idx + 1))?;
            apply_kv(&mut cfg, k.trim(), v.trim()).map_err(|e| format!("config line {}: {e}", idx + 1))?;
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got '{s}'"))?;
        apply_kv(&mut cfg, k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("invalid value '{value}' for key '{key}'"))
}

fn apply_kv(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "d_x" => cfg.d_x = parse_num(key, value)?,
        "d_theta_g" => cfg.d_theta_g = parse_num(key, value)?,
        "theta_full" => {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            if parts.len() != 5 {
                return Err(format!("theta_full needs 5 comma-separated values, got {}", parts.len()));
            }
            for (i, p) in parts.iter().enumerate() {
                cfg.theta_full[i] = parse_num(key, p)?;
            }
        }
        "sigma_u2" => cfg.sigma_u2 = parse_num(key, value)?,
        "sigma_v2" => cfg.sigma_v2 = parse_num(key, value)?,
        "T" => cfg.t_steps = parse_num(key, value)?,
        "K" => cfg.k_partitions = parse_num(key, value)?,
        "particles_per_unit" => cfg.particles_per_unit = parse_num(key, value)?,
        "realizations" => cfg.realizations = parse_num(key, value)?,
        "algorithms" => {
            let mut algs = Vec::new();
            for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let a = Algorithm::parse(part)
                    .ok_or_else(|| format!("unknown algorithm '{part}' for key 'algorithms'"))?;
                algs.push(a);
            }
            cfg.algorithms = algs;
        }
        "master_seed" => cfg.master_seed = parse_num(key, value)?,
        "sigma_rw2" => cfg.sigma_rw2 = parse_num(key, value)?,
        "pd_floor" => cfg.pd_floor = parse_num(key, value)?,
        _ => return Err(format!("unknown config key '{key}'")),
    }
    Ok(())
}

fn parse_floats(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse_num::<f64>(key, p))
        .collect()
}

/// Parses a fuse-debug input file: a `dim = N` line, one `prior_mean` /
/// `prior_cov` pair, and K repeated `local_mean` / `local_cov` pairs.
/// Means are comma-separated length-N lists, covariances are row-major
/// length-N*N lists.
pub fn parse_fuse_inputs(text: &str) -> Result<(Vec<Gaussian>, Gaussian), String> {
    let mut dim: Option<usize> = None;
    let mut prior_mean: Option<Vec<f64>> = None;
    let mut prior_cov: Option<Vec<f64>> = None;
    let mut local_means: Vec<Vec<f64>> = Vec::new();
    let mut local_covs: Vec<Vec<f64>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("input line {}: expected 'key = value', got '{raw}'", idx + 1))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "dim" => dim = Some(parse_num(k, v)?),
            "prior_mean" => prior_mean = Some(parse_floats(k, v)?),
            "prior_cov" => prior_cov = Some(parse_floats(k, v)?),
            "local_mean" => local_means.push(parse_floats(k, v)?),
            "local_cov" => local_covs.push(parse_floats(k, v)?),
            _ => return Err(format!("input line {}: unknown key '{k}'", idx + 1)),
        }
    }

    let d = dim.ok_or("missing 'dim' line")?;
    if d == 0 {
        return Err("dim must be positive".into());
    }
    let build = |mean: Vec<f64>, cov: Vec<f64>, what: &str| -> Result<Gaussian, String> {
        if mean.len() != d {
            return Err(format!("{what} mean needs {d} values, got {}", mean.len()));
        }
        if cov.len() != d * d {
            return Err(format!("{what} covariance needs {} values, got {}", d * d, cov.len()));
        }
        Gaussian::new(DVector::from_vec(mean), DMatrix::from_row_slice(d, d, &cov)).map_err(|e| e.to_string())
    };

    let prior = build(
        prior_mean.ok_or("missing 'prior_mean' line")?,
        prior_cov.ok_or("missing 'prior_cov' line")?,
        "prior",
    )?;
    if local_means.is_empty() {
        return Err("at least one local_mean/local_cov pair is required".into());
    }
    if local_means.len() != local_covs.len() {
        return Err(format!(
            "unpaired local entries: {} means vs {} covariances",
            local_means.len(),
            local_covs.len()
        ));
    }
    let locals = local_means
        .into_iter()
        .zip(local_covs)
        .enumerate()
        .map(|(i, (m, c))| build(m, c, &format!("local {}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((locals, prior))
}

/// Comma-separated shortest round-trip formatting.
pub fn format_vector<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
