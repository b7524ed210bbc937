//! Parallel sweeps with ordered, resumable CSV output.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::genie::genie_mmse_baseline;
use super::{simulate_on, trial_seed, ExperimentSpec, HarnessError};
use crate::metrics::TrialRecord;
use crate::model::generate_scenario;
use crate::theory::{predict, Prediction};

/// Floats are written with 17 significant digits; absent values as `NA`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NA".to_string()
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), format_float)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Estimator rows with theory columns.
    Sweep,
    /// As `Sweep` plus the genie reference columns.
    Compare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryColumns {
    pub dad_error: f64,
    pub mse_limit: f64,
    pub ser_bound: Option<f64>,
    pub tau_star: f64,
}

impl From<&Prediction> for TheoryColumns {
    fn from(p: &Prediction) -> Self {
        TheoryColumns { dad_error: p.dad_error, mse_limit: p.mse_limit, ser_bound: p.ser_bound, tau_star: p.trace.tau_star() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: Vec<f64>,
    pub trial: usize,
    pub record: TrialRecord,
    pub theory: TheoryColumns,
    pub genie: Option<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub workers: usize,
    pub resume: bool,
    pub mode: SweepMode,
}

fn header(spec: &ExperimentSpec, mode: SweepMode) -> String {
    let mut cols: Vec<&str> = spec.sweep.iter().map(|a| a.param.name()).collect();
    cols.extend([
        "trial",
        "seed",
        "converged",
        "iterations",
        "runtime_ms",
        "dad_error",
        "n_false_alarm",
        "n_miss",
        "ce_mse",
        "ser",
        "theory_dad_error",
        "theory_mse_limit",
        "theory_ser_bound",
        "theory_tau_star",
    ]);
    if mode == SweepMode::Compare {
        cols.extend(["genie_ce_mse", "genie_ser"]);
    }
    cols.join(",")
}

fn format_point(spec: &ExperimentSpec, point: &[f64]) -> Vec<String> {
    spec.sweep
        .iter()
        .zip(point)
        .map(|(a, &v)| if a.param.is_integer() { format!("{}", v as u64) } else { format_float(v) })
        .collect()
}

fn format_row(spec: &ExperimentSpec, row: &ResultRow) -> String {
    let r = &row.record;
    let mut f = format_point(spec, &row.point);
    f.push(row.trial.to_string());
    f.push(r.seed.to_string());
    f.push(r.converged.to_string());
    f.push(r.iterations.to_string());
    f.push(if spec.record_runtime { format_float(r.runtime_ms) } else { "NA".into() });
    f.push(format_float(r.dad_error));
    f.push(r.n_false_alarm.to_string());
    f.push(r.n_miss.to_string());
    f.push(format_opt(r.ce_mse));
    f.push(format_opt(r.ser));
    f.push(format_float(row.theory.dad_error));
    f.push(format_float(row.theory.mse_limit));
    f.push(format_opt(row.theory.ser_bound));
    f.push(format_float(row.theory.tau_star));
    if let Some(g) = &row.genie {
        f.push(format_opt(g.ce_mse));
        f.push(format_opt(g.ser));
    }
    f.join(",")
}

struct Job {
    point_index: usize,
    trial: usize,
}

fn compute_row(
    spec: &ExperimentSpec,
    points: &[Vec<f64>],
    theory: &[TheoryColumns],
    job: &Job,
    mode: SweepMode,
) -> Result<ResultRow, HarnessError> {
    let point = &points[job.point_index];
    let cfg = spec.point_config(point)?;
    let seed = trial_seed(spec.system.seed, point, job.trial);
    let sc = generate_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let genie = match mode {
        SweepMode::Compare => Some(genie_mmse_baseline(&cfg, &sc).record),
        SweepMode::Sweep => None,
    };
    let run = simulate_on(&cfg, &spec.bigamp, sc, seed)?;
    Ok(ResultRow {
        point: point.clone(),
        trial: job.trial,
        record: run.record,
        theory: theory[job.point_index].clone(),
        genie,
    })
}

fn jobs(spec: &ExperimentSpec, n_points: usize) -> Vec<Job> {
    (0..n_points)
        .flat_map(|p| (0..spec.n_trials).map(move |t| Job { point_index: p, trial: t }))
        .collect()
}

fn theory_columns(spec: &ExperimentSpec, points: &[Vec<f64>]) -> Result<Vec<TheoryColumns>, HarnessError> {
    points
        .iter()
        .map(|p| Ok(TheoryColumns::from(&predict(&spec.point_config(p)?, spec.rho)?)))
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every (point, trial) pair and returns rows in canonical order.
pub fn sweep_rows(spec: &ExperimentSpec, workers: usize, mode: SweepMode) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let points = spec.points();
    let theory = theory_columns(spec, &points)?;
    let all = jobs(spec, points.len());
    pool(workers)?.install(|| all.par_iter().map(|j| compute_row(spec, &points, &theory, j, mode)).collect())
}

/// Number of complete data rows in `path`; truncates a trailing partial line.
fn prepare_resume(path: &Path, head: &str) -> Result<usize, HarnessError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let complete = match text.rfind('\n') {
        Some(i) => i + 1,
        None => 0,
    };
    let body = &text[..complete];
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h == head => {}
        None => {
            let mut f = File::create(path)?;
            writeln!(f, "{head}")?;
            return Ok(0);
        }
        Some(_) => return Err(HarnessError::Config(format!("{} has a different header; cannot resume", path.display()))),
    }
    let done = lines.count();
    if complete < text.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
    }
    Ok(done)
}

/// Runs the sweep and writes CSV rows to `out` in canonical order, flushing
/// after each batch. With `resume`, rows already present are kept and skipped.
/// Returns the number of rows written by this call.
pub fn run_sweep(spec: &ExperimentSpec, out: &Path, opts: SweepOptions) -> Result<usize, HarnessError> {
    spec.validate()?;
    let points = spec.points();
    let theory = theory_columns(spec, &points)?;
    let all = jobs(spec, points.len());
    let head = header(spec, opts.mode);

    let done = if opts.resume && out.exists() { prepare_resume(out, &head)? } else { 0 };
    if done > all.len() {
        return Err(HarnessError::Config(format!("{} has more rows than the sweep defines", out.display())));
    }
    let mut file = if done > 0 || (opts.resume && out.exists()) {
        let mut f = OpenOptions::new().append(true).open(out)?;
        f.seek(SeekFrom::End(0))?;
        BufWriter::new(f)
    } else {
        let mut f = BufWriter::new(File::create(out)?);
        writeln!(f, "{head}")?;
        f
    };

    let pool = pool(opts.workers)?;
    let batch = (opts.workers.max(1) * 4).max(8);
    let mut written = 0;
    for chunk in all[done..].chunks(batch) {
        let rows: Vec<ResultRow> =
            pool.install(|| chunk.par_iter().map(|j| compute_row(spec, &points, &theory, j, opts.mode)).collect::<Result<_, _>>())?;
        for row in &rows {
            writeln!(file, "{}", format_row(spec, row))?;
        }
        file.flush()?;
        written += rows.len();
    }
    Ok(written)
}

/// Theory table: one row per state-evolution step per sweep point.
pub fn theory_rows(spec: &ExperimentSpec) -> Result<String, HarnessError> {
    spec.validate()?;
    let mut cols: Vec<&str> = spec.sweep.iter().map(|a| a.param.name()).collect();
    cols.extend([
        "t",
        "v_p",
        "v_r",
        "v_q",
        "tau",
        "fixed_point",
        "tau_star",
        "v_r_star",
        "v_q_star",
        "c1",
        "c2",
        "l_ok",
        "m_ok",
        "dad_error_prob",
        "ce_mse_limit",
        "ser_bound",
    ]);
    let mut out = cols.join(",");
    out.push('\n');
    for point in spec.points() {
        let p = predict(&spec.point_config(&point)?, spec.rho)?;
        let last = *p.trace.last();
        let mut tail = vec![
            p.trace.fixed_point.to_string(),
            format_float(last.tau),
            format_float(last.v_r),
            format_float(last.v_q),
            format_float(p.check.c1),
            format_float(p.check.c2),
            p.check.l_ok.to_string(),
            p.check.m_ok.to_string(),
            format_float(p.dad_error),
            format_float(p.mse_limit),
        ];
        tail.push(format_opt(p.ser_bound));
        let head = format_point(spec, &point);
        for r in &p.trace.records {
            let mut f = head.clone();
            f.push(r.t.to_string());
            for v in [r.v_p, r.v_r, r.v_q, r.tau] {
                f.push(format_float(v));
            }
            f.extend(tail.iter().cloned());
            out.push_str(&f.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn theory_command(spec: &ExperimentSpec, out: &Path) -> Result<(), HarnessError> {
    std::fs::write(out, theory_rows(spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{SweepAxis, SweepParam};
    use crate::model::SystemConfig;

    fn tiny() -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(SystemConfig {
            n_devices: 20,
            n_antennas: 6,
            pilot_len: 10,
            data_len: 5,
            activity_prob: 0.1,
            snr_db: 15.0,
            codebook_size: 4,
            seed: 3,
            ..SystemConfig::default()
        });
        spec.sweep = vec![SweepAxis { param: SweepParam::NAntennas, values: vec![4.0, 6.0] }];
        spec.n_trials = 3;
        spec
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::NAN), "NA");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn one_point_one_trial() {
        let mut spec = tiny();
        spec.sweep[0].values = vec![4.0];
        spec.n_trials = 1;
        let rows = sweep_rows(&spec, 1, SweepMode::Sweep).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn csv_shape_and_resume() {
        let spec = tiny();
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.csv");
        let opts = SweepOptions { workers: 2, resume: false, mode: SweepMode::Compare };
        assert_eq!(run_sweep(&spec, &full, opts).unwrap(), 6);
        let text = std::fs::read_to_string(&full).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(!text.contains('\r'));
        assert!(lines[0].starts_with("n_antennas,trial,seed,converged"));

        // cut the file mid-row and resume
        let part = dir.path().join("part.csv");
        let cut = text.find(&lines[3][..10]).unwrap() + 5;
        std::fs::write(&part, &text[..cut]).unwrap();
        let resumed = SweepOptions { resume: true, ..opts };
        assert_eq!(run_sweep(&spec, &part, resumed).unwrap(), 4);
        assert_eq!(std::fs::read_to_string(&part).unwrap(), text);
        assert_eq!(run_sweep(&spec, &part, resumed).unwrap(), 0);
    }

    #[test]
    fn theory_table_has_constant_summary() {
        let spec = tiny();
        let text = theory_rows(&spec).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let first: Vec<&str> = lines[1].split(',').collect();
        let second: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(first[0], "4");
        assert_eq!(first[6..], second[6..]);
    }
}
