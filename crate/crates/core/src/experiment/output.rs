use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::svg::emit_plot;
use super::{ExperimentConfig, SweepResult};
use crate::format::sig17;

pub const CSV_HEADER: &str = "sweep_value,mean_error,stderr,bound,n_seeds,n_steps";
pub const SEED_CSV_HEADER: &str = "sweep_value,seed,final_error,tail_mean_error,max_iterate_norm";

/// One row per sweep point, ascending in the swept value.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    let mut points: Vec<_> = result.points.iter().collect();
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sig17(p.value),
            sig17(p.mean_error),
            sig17(p.stderr),
            sig17(p.bound),
            p.n_successful(),
            result.n_steps
        ));
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> io::Result<()> {
    fs::write(path, sweep_csv(result))
}

/// Per-seed raw values, including the tail-mean error. Failed seeds are
/// written with `nan`.
pub fn emit_seed_csv(result: &SweepResult, path: &Path) -> io::Result<()> {
    let mut out = format!("{SEED_CSV_HEADER}\n");
    for p in &result.points {
        for s in &p.seeds {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                sig17(p.value),
                s.seed_index,
                sig17(s.final_error),
                sig17(s.tail_error),
                sig17(s.max_iterate_norm)
            ));
        }
    }
    fs::write(path, out)
}

#[derive(Debug, Clone, Default)]
pub struct OutputFiles {
    pub csv: Vec<PathBuf>,
    pub seed_csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Writes `<op>_<axis>.csv`, `<op>_<axis>_seeds.csv`, `<op>_<axis>.svg` for
/// every result and a `manifest.json` with the effective config, tags and
/// failures.
pub fn write_outputs(
    results: &[SweepResult],
    cfg: &ExperimentConfig,
    dir: &Path,
) -> io::Result<OutputFiles> {
    fs::create_dir_all(dir)?;
    let mut files = OutputFiles::default();
    for r in results {
        let stem = r.stem();
        let csv = dir.join(format!("{stem}.csv"));
        emit_csv(r, &csv)?;
        let seeds = dir.join(format!("{stem}_seeds.csv"));
        emit_seed_csv(r, &seeds)?;
        let svg = dir.join(format!("{stem}.svg"));
        emit_plot(r, &svg)?;
        files.csv.push(csv);
        files.seed_csv.push(seeds);
        files.svg.push(svg);
    }
    let manifest = serde_json::json!({
        "config": cfg,
        "results": results.iter().map(|r| serde_json::json!({
            "operator": r.operator,
            "axis": r.axis,
            "protocol": r.protocol,
            "n_steps": r.n_steps,
            "q_star": r.q_star,
            "points": r.points.iter().map(|p| serde_json::json!({
                "value": p.value,
                "alpha": p.alpha,
                "beta": p.beta,
                "mean_error": p.mean_error,
                "mean_tail_error": p.mean_tail_error,
                "bound": if p.bound.is_finite() { serde_json::json!(p.bound) } else { serde_json::json!("inf") },
                "d_min": p.d_min,
                "d_max": p.d_max,
                "tags": p.tags,
                "failures": p.seeds.iter().filter_map(|s| s.failure.as_ref().map(|f| serde_json::json!({"seed": s.seed_index, "error": f}))).collect::<Vec<_>>(),
                "sandwich_violations": p.seeds.iter().filter_map(|s| s.sandwich_violations).sum::<usize>(),
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    files.manifest = dir.join("manifest.json");
    fs::write(
        &files.manifest,
        serde_json::to_string_pretty(&manifest).expect("json") + "\n",
    )?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{OperatorKind, Protocol, SeedOutcome, SweepAxis, SweepPoint};

    fn one_point(value: f64, mean: f64, bound: f64) -> SweepPoint {
        SweepPoint {
            value,
            alpha: 0.001,
            beta: value,
            mean_error: mean,
            stderr: 0.1 * mean,
            mean_tail_error: mean,
            bound,
            d_min: 0.25,
            d_max: 0.25,
            seeds: vec![SeedOutcome {
                seed_index: 0,
                final_error: mean,
                tail_error: mean,
                max_iterate_norm: 1.0,
                visit_counts: vec![],
                sandwich_violations: None,
                failure: None,
            }],
            tags: vec![],
        }
    }

    fn result(points: Vec<SweepPoint>) -> SweepResult {
        SweepResult {
            operator: OperatorKind::Lse,
            axis: SweepAxis::Beta,
            n_steps: 10,
            protocol: Protocol::Iid,
            q_star: vec![0.0; 4],
            points,
        }
    }

    #[test]
    fn single_row_is_two_lines() {
        let csv = sweep_csv(&result(vec![one_point(10.0, 0.1 + 0.2, 5.0)]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(
            fields[1].parse::<f64>().unwrap().to_bits(),
            (0.1f64 + 0.2).to_bits()
        );
        assert_eq!(fields[4], "1");
        assert_eq!(fields[5], "10");
    }

    #[test]
    fn rows_sorted_ascending() {
        let csv = sweep_csv(&result(vec![
            one_point(100.0, 1.0, 5.0),
            one_point(10.0, 2.0, 5.0),
        ]));
        let first: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(first, vec![10.0, 100.0]);
    }

    #[test]
    fn written_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = result(vec![one_point(
            1e3,
            std::f64::consts::PI / 7.0,
            872.123456789,
        )]);
        let cfg = ExperimentConfig::default();
        let files = write_outputs(std::slice::from_ref(&r), &cfg, dir.path()).unwrap();
        let text = fs::read_to_string(&files.csv[0]).unwrap();
        let row: Vec<f64> = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|f| f.parse().unwrap())
            .collect();
        assert_eq!(row[1].to_bits(), r.points[0].mean_error.to_bits());
        assert_eq!(row[3].to_bits(), r.points[0].bound.to_bits());
        assert!(files.manifest.exists());
        assert!(files.svg[0].exists());
    }
}
