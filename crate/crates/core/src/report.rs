//! Comparison tables over finished run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adversary::AdversaryKind;
use crate::sim::{MetricsLog, Summary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {why}")]
    Parse { path: PathBuf, why: String },
    #[error("no run directories given")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: Summary,
    pub metrics: MetricsLog,
}

fn read(path: PathBuf) -> Result<Vec<u8>, ReportError> {
    fs::read(&path).map_err(|source| ReportError::Io { path, source })
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts, ReportError> {
    let sp = dir.join("summary.json");
    let summary = serde_json::from_slice(&read(sp.clone())?).map_err(|e| ReportError::Parse {
        path: sp,
        why: e.to_string(),
    })?;
    let mp = dir.join("metrics.csv");
    let metrics = MetricsLog::from_csv(&read(mp.clone())?).map_err(|e| ReportError::Parse {
        path: mp,
        why: e.to_string(),
    })?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        summary,
        metrics,
    })
}

/// (level, mean rewards, runners)
type LevelRow = (f64, f64, usize);

/// Mean of `rewards` grouped by a per-runner level, in level order.
fn by_level(s: &Summary, level: impl Fn(&crate::sim::RunnerSummary) -> f64) -> Vec<LevelRow> {
    let mut groups: BTreeMap<u64, (f64, u64, usize)> = BTreeMap::new();
    for r in &s.runners {
        let l = level(r);
        let e = groups.entry(l.to_bits()).or_insert((l, 0, 0));
        e.1 += r.rewards;
        e.2 += 1;
    }
    let mut out: Vec<LevelRow> = groups.into_values().map(|(l, sum, n)| (l, sum as f64 / n as f64, n)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn render(runs: &[RunArtifacts]) -> Result<String, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = String::new();
    let budgets: Vec<u64> = runs.iter().map(|r| r.summary.iterations).collect();
    if budgets.iter().any(|b| *b != budgets[0]) {
        let _ = writeln!(
            out,
            "warning: runs completed different iteration budgets ({budgets:?}); accuracy is not directly comparable\n"
        );
    }

    let _ = writeln!(out, "## Accuracy\n");
    let _ = writeln!(out, "| run | framework | seed | iterations | end tick | final | best | genesis |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for r in runs {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} |",
            r.dir.display(),
            s.framework,
            s.seed,
            s.iterations,
            s.end_tick,
            s.final_accuracy,
            s.best_accuracy,
            s.genesis_accuracy
        );
    }

    let _ = writeln!(out, "\n## Rewards by profile class\n");
    let mut table = String::new();
    for r in runs {
        let s = &r.summary;
        let axes: [(&str, Vec<LevelRow>); 3] = [
            ("cpu", by_level(s, |x| x.cpu)),
            ("bandwidth", by_level(s, |x| x.bandwidth)),
            ("memory", by_level(s, |x| x.memory as f64)),
        ];
        for (name, levels) in axes {
            if levels.len() < 2 {
                continue;
            }
            for (level, mean, n) in levels {
                let _ = writeln!(table, "| {} | {name} | {level} | {n} | {mean:.2} |", r.dir.display());
            }
        }
    }
    if table.is_empty() {
        let _ = writeln!(out, "All runners share one profile.");
    } else {
        let _ = writeln!(out, "| run | factor | level | runners | mean rewards |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        out.push_str(&table);
    }

    let _ = writeln!(out, "\n## Attack outcomes\n");
    let _ = writeln!(
        out,
        "| run | kind | runners | rewards | backdoor success | PoL invalidated | honest invalidated |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    for r in runs {
        let s = &r.summary;
        for kind in AdversaryKind::ALL {
            let n = s.runners.iter().filter(|x| x.kind == kind).count();
            if n == 0 {
                continue;
            }
            let rewards = s.rewards_by_kind.get(&kind).copied().unwrap_or(0);
            let bd = match (kind, s.backdoor_success) {
                (AdversaryKind::Backdoor, Some(b)) => format!("{b:.3}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                "| {} | {kind} | {n} | {rewards} | {bd} | {} | {} |",
                r.dir.display(),
                s.pol.invalidated,
                s.pol.honest_invalidated
            );
        }
    }
    let failing: Vec<&RunArtifacts> = runs.iter().filter(|r| !r.summary.invariants_hold()).collect();
    if !failing.is_empty() {
        let _ = writeln!(out, "\n## Invariant failures\n");
        for r in failing {
            for f in &r.summary.invariant_failures {
                let _ = writeln!(out, "- {}: {f}", r.dir.display());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_experiment, ExperimentConfig};

    #[test]
    fn test_report_over_written_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut runs = Vec::new();
        for (fw, iters) in [("dag", "3"), ("google", "4")] {
            let cfg = ExperimentConfig::default()
                .with_overrides([
                    ("framework", fw),
                    ("iterations", iters),
                    ("pol.enabled", "false"),
                    ("runners.cpu", "1,2"),
                ])
                .unwrap();
            let dir = tmp.path().join(fw);
            run_experiment(&cfg).unwrap().write(&dir).unwrap();
            runs.push(load_run(&dir).unwrap());
        }
        let text = render(&runs).unwrap();
        assert!(text.starts_with("warning: runs completed different iteration budgets"));
        assert!(text.contains("| cpu | 2 |"));
        assert!(matches!(render(&[]), Err(ReportError::Empty)));
    }
}
