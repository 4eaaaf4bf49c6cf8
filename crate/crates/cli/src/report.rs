//! Aggregates traces, run summaries and profiles across seeds into
//! tab-separated tables: medians with interquartile bands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bo4io::bo::{read_trace, TraceRow};
use bo4io::profile::{total_width, ProfileResult};
use bo4io::{Error, Result};

use crate::commands::{read_toml, RunSummary};

/// Linear-interpolation quantile of unsorted values; `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// `median, q25, q75` as tab-separated text.
fn band(values: &[f64]) -> String {
    let q = |p| quantile(values, p).expect("non-empty");
    format!("{}\t{}\t{}", median(values).expect("non-empty"), q(0.25), q(0.75))
}

#[derive(Default)]
struct Inputs {
    traces: Vec<Vec<TraceRow>>,
    summaries: Vec<RunSummary>,
    profiles: Vec<ProfileResult>,
}

impl Inputs {
    fn is_empty(&self) -> bool {
        self.traces.is_empty() && self.summaries.is_empty() && self.profiles.is_empty()
    }

    fn add_file(&mut self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "toml") {
            self.summaries.push(read_toml(path)?);
            return Ok(());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.starts_with("iter\t") {
            self.traces.push(read_trace(path)?);
        } else if text.starts_with("theta_k\t") {
            self.profiles.push(ProfileResult::parse(&text).map_err(|e| Error::format(path.display(), e))?);
        } else {
            return Err(Error::Input(format!("{} is not a trace, profile or run summary", path.display())));
        }
        Ok(())
    }

    /// A run directory contributes its trace, summary and profiles.
    fn add_dir(&mut self, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name == "trace.tsv" || name == "result.toml" || (name.starts_with("profile_") && name.ends_with(".tsv")) {
                self.add_file(&p)?;
            }
        }
        Ok(())
    }
}

/// Writes `convergence.tsv`, `summary.tsv` and `ci_width.tsv` (each only
/// when it has data) and returns their paths.
pub fn report(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut inputs = Inputs::default();
    for p in paths {
        if p.is_dir() {
            inputs.add_dir(p)?;
        } else {
            inputs.add_file(p)?;
        }
    }
    if inputs.is_empty() {
        return Err(Error::Input("report found no traces, profiles or run summaries".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    if !inputs.traces.is_empty() {
        emit("convergence.tsv", convergence(&inputs.traces))?;
    }
    if !inputs.summaries.is_empty() {
        emit("summary.tsv", summary(&inputs.summaries))?;
    }
    if !inputs.profiles.is_empty() {
        emit("ci_width.tsv", ci_widths(&inputs.profiles))?;
    }
    Ok(written)
}

/// Best-so-far loss by evaluation index across runs.
fn convergence(traces: &[Vec<TraceRow>]) -> String {
    let mut s = String::from("eval\titer\truns\tmedian_best\tq25_best\tq75_best\n");
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        let rows: Vec<&TraceRow> = traces.iter().filter_map(|t| t.get(i)).collect();
        let best: Vec<f64> = rows.iter().map(|r| r.best).collect();
        s.push_str(&format!("{}\t{}\t{}\t{}\n", i + 1, rows[0].iter, rows.len(), band(&best)));
    }
    s
}

type Metric = (&'static str, fn(&RunSummary) -> Option<f64>);

fn summary(runs: &[RunSummary]) -> String {
    let metrics: [Metric; 7] = [
        ("incumbent_loss", |r| Some(r.incumbent_loss)),
        ("train_decision_error", |r| r.train_decision_error),
        ("test_decision_error", |r| r.test_decision_error),
        ("parameter_error", |r| r.parameter_error),
        ("bo_time_s", |r| Some(r.bo_time_s)),
        ("fop_time_s", |r| Some(r.fop_time_s)),
        ("wall_time_s", |r| Some(r.wall_time_s)),
    ];
    let mut s = String::from("metric\truns\tmedian\tq25\tq75\n");
    for (name, get) in metrics {
        let v: Vec<f64> = runs.iter().filter_map(get).collect();
        if !v.is_empty() {
            s.push_str(&format!("{name}\t{}\t{}\n", v.len(), band(&v)));
        }
    }
    s
}

/// OA and IA widths by parameter and iteration.
fn ci_widths(profiles: &[ProfileResult]) -> String {
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in profiles {
        let g = groups.entry((p.k + 1, p.iteration.unwrap_or(0))).or_default();
        g.0.push(total_width(&p.oa_ci));
        g.1.push(total_width(&p.ia_ci));
    }
    let mut s = String::from("parameter\titeration\truns\tmedian_oa_width\tq25_oa_width\tq75_oa_width\tmedian_ia_width\tq25_ia_width\tq75_ia_width\n");
    for ((k, t), (oa, ia)) in groups {
        s.push_str(&format!("{k}\t{t}\t{}\t{}\t{}\n", oa.len(), band(&oa), band(&ia)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn identical_traces_aggregate_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let trace = "iter\ttheta1\tloss\tbest\n0\t0.1\t3\t3\n0\t0.2\t1\t1\n1\t0.3\t2\t1\n";
        let mut paths = Vec::new();
        for i in 0..5 {
            let p = dir.path().join(format!("t{i}.tsv"));
            std::fs::write(&p, trace).unwrap();
            paths.push(p);
        }
        let out = report(&paths, &dir.path().join("out")).unwrap();
        let text = std::fs::read_to_string(&out[0]).unwrap();
        assert_eq!(text.lines().nth(3).unwrap(), "3\t1\t5\t1\t1\t1");
        let single = report(&paths[..1], &dir.path().join("one")).unwrap();
        let one = std::fs::read_to_string(&single[0]).unwrap();
        // Identical apart from the run count column.
        let strip = |t: &str| -> Vec<Vec<String>> {
            t.lines()
                .map(|l| l.split('\t').enumerate().filter(|(i, _)| *i != 2).map(|(_, f)| f.to_string()).collect())
                .collect()
        };
        assert_eq!(strip(&one), strip(&text));
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(report(&[dir.path().to_path_buf()], &dir.path().join("out")).is_err());
    }
}
