//! Report files of an evaluation.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::{checkpoints, evaluation_count_report, judge_success, rmse_metrics, EvalConfig, ModelKind, RunResult};

/// Table row for one model and particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub particles: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean and standard deviation over successful runs.
    pub location_rmse: Option<(f64, f64)>,
    pub yaw_rmse: Option<(f64, f64)>,
    pub mean_evaluations: f64,
    pub mean_step_seconds: f64,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn aggregate(results: &[RunResult], cfg: &EvalConfig) -> Vec<AggregateRow> {
    let mut groups: Vec<(ModelKind, usize)> = results.iter().map(|r| (r.model, r.particles)).collect();
    groups.sort();
    groups.dedup();
    groups
        .into_iter()
        .map(|(model, particles)| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.model == model && r.particles == particles).collect();
            let ok: Vec<&RunResult> = runs.iter().copied().filter(|r| judge_success(r, cfg)).collect();
            let metrics: Vec<(f64, f64)> = ok.iter().filter_map(|r| rmse_metrics(r)).collect();
            let steps: usize = runs.iter().map(|r| r.len()).sum::<usize>().max(1);
            AggregateRow {
                model,
                particles,
                runs: runs.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / runs.len() as f64,
                location_rmse: mean_std(&metrics.iter().map(|m| m.0).collect::<Vec<_>>()),
                yaw_rmse: mean_std(&metrics.iter().map(|m| m.1).collect::<Vec<_>>()),
                mean_evaluations: runs.iter().flat_map(|r| &r.evaluations).sum::<usize>() as f64 / steps as f64,
                mean_step_seconds: runs.iter().flat_map(|r| &r.step_seconds).sum::<f64>() / steps as f64,
            }
        })
        .collect()
}

fn pm(v: Option<(f64, f64)>) -> String {
    v.map_or("-".into(), |(m, s)| format!("{m:.2} ± {s:.2}"))
}

fn csv_opt(v: Option<(f64, f64)>) -> String {
    v.map_or(",".into(), |(m, s)| format!("{m:.6},{s:.6}"))
}

fn run_log(run: &RunResult, cfg: &EvalConfig) -> String {
    let mut s = String::new();
    let converged = run.convergence_frame();
    writeln!(s, "# model {} particles {} seed {} start_frame {}", run.model, run.particles, run.seed, run.start_frame).unwrap();
    writeln!(
        s,
        "# convergence: positional spread < {} m; converged_at {}",
        cfg.convergence_spread,
        converged.map_or("never".into(), |c| c.to_string())
    )
    .unwrap();
    if let Some(c) = converged {
        let checks: Vec<String> = checkpoints(c, run.len(), cfg.check_interval)
            .into_iter()
            .map(|f| format!("{f}:{:.2}", run.location_error(f)))
            .collect();
        writeln!(s, "# checkpoints (frame:error m, radius {} m): {}", cfg.success_radius, checks.join(" ")).unwrap();
    }
    writeln!(s, "# success {}", judge_success(run, cfg)).unwrap();
    if let Some((loc, yaw)) = rmse_metrics(run) {
        writeln!(s, "# rmse_location_m {loc:.4} rmse_yaw_deg {yaw:.4}").unwrap();
    }
    writeln!(s, "# frame x y theta true_x true_y true_theta converged spread ess evaluations seconds").unwrap();
    for f in 0..run.len() {
        let (e, t) = (&run.estimates[f], &run.truth[f]);
        writeln!(
            s,
            "{} {:.4} {:.4} {:.5} {:.4} {:.4} {:.5} {} {:.3} {:.2} {} {:.4}",
            f,
            e.pose.x,
            e.pose.y,
            e.pose.theta,
            t.x,
            t.y,
            t.theta,
            e.converged as u8,
            e.spread,
            run.ess[f],
            run.evaluations[f],
            run.step_seconds[f]
        )
        .unwrap();
    }
    s
}

/// Localization output, one line per frame:
/// `timestamp x y theta converged ess evaluations`, where the timestamp is
/// the frame index in the input sequence.
pub fn format_trajectory(run: &RunResult) -> String {
    let mut s = String::new();
    for (f, e) in run.estimates.iter().enumerate() {
        writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {} {:.6} {}",
            run.start_frame + f,
            e.pose.x,
            e.pose.y,
            e.pose.theta,
            e.converged as u8,
            run.ess[f],
            run.evaluations[f]
        )
        .unwrap();
    }
    s
}

/// Writes `runs/<model>_n<N>_run<k>.txt`, `summary.txt`, `summary.csv` and
/// `evaluations.csv` under `dir`.
pub fn write_report(dir: &Path, results: &[RunResult], cfg: &EvalConfig, occupied_cells: Option<usize>) -> io::Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut index = std::collections::HashMap::new();
    for run in results {
        let k = index.entry((run.model, run.particles)).or_insert(0usize);
        fs::write(runs_dir.join(format!("{}_n{}_run{}.txt", run.model, run.particles, k)), run_log(run, cfg))?;
        *k += 1;
    }

    let rows = aggregate(results, cfg);
    let mut txt = String::new();
    writeln!(
        txt,
        "success: converged and within {} m at every {}-frame checkpoint after convergence and at the last frame",
        cfg.success_radius, cfg.check_interval
    )
    .unwrap();
    writeln!(txt, "convergence: weighted positional spread < {} m", cfg.convergence_spread).unwrap();
    writeln!(txt).unwrap();
    writeln!(
        txt,
        "{:<10} {:>9} {:>9} {:>8} {:>18} {:>18} {:>12} {:>10}",
        "model", "particles", "success", "rate", "location RMSE [m]", "yaw RMSE [deg]", "evals/step", "s/step"
    )
    .unwrap();
    let mut csv = String::from(
        "model,particles,runs,successes,success_rate,location_rmse_mean,location_rmse_std,yaw_rmse_mean,yaw_rmse_std,mean_evaluations,mean_step_seconds\n",
    );
    for r in &rows {
        writeln!(
            txt,
            "{:<10} {:>9} {:>9} {:>8.2} {:>18} {:>18} {:>12.1} {:>10.4}",
            r.model.to_string(),
            r.particles,
            format!("{}/{}", r.successes, r.runs),
            r.success_rate,
            pm(r.location_rmse),
            pm(r.yaw_rmse),
            r.mean_evaluations,
            r.mean_step_seconds
        )
        .unwrap();
        writeln!(
            csv,
            "{},{},{},{},{:.6},{},{},{:.6},{:.6}",
            r.model,
            r.particles,
            r.runs,
            r.successes,
            r.success_rate,
            csv_opt(r.location_rmse),
            csv_opt(r.yaw_rmse),
            r.mean_evaluations,
            r.mean_step_seconds
        )
        .unwrap();
    }
    fs::write(dir.join("summary.txt"), txt)?;
    fs::write(dir.join("summary.csv"), csv)?;

    let counts = evaluation_count_report(results, occupied_cells);
    let len = counts.iter().map(|c| c.mean_per_step.len()).max().unwrap_or(0);
    let mut csv = String::from("frame");
    for c in &counts {
        write!(csv, ",{}_n{}", c.model, c.particles).unwrap();
    }
    csv.push('\n');
    for f in 0..len {
        write!(csv, "{f}").unwrap();
        for c in &counts {
            match c.mean_per_step.get(f) {
                Some(v) => write!(csv, ",{v:.2}").unwrap(),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    fs::write(dir.join("evaluations.csv"), csv)
}
