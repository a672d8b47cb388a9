//! Line-delimited JSON traces and the CSV batch summary.
//!
//! A trace file starts with one `header` line, then for each episode an
//! `episode` line (seed, goals, obstacles), one `step` line per step, a
//! terminal `state` line and an `end` line with the stored flags. Floats are
//! written in shortest round-trip form, so parsing reproduces every stored
//! value bit for bit and identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Action, AgentState, Configuration, JointAction, JointState, Point, Scenario};

use super::{
    audit, reached_goal, safe_throughout, summarize, BatchSummary, EpisodeRecord, RewardParams, RewardTerms,
    ShieldMode, StepRecord,
};

pub const TRACE_FORMAT: &str = "mamps-trace";
const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub preset: String,
    pub mode: String,
    /// Goal-reached radius used for the stored flags.
    pub epsilon: f64,
    pub scenario: Scenario,
}

impl TraceHeader {
    pub fn new(preset: &str, mode: ShieldMode, scenario: Scenario, epsilon: f64) -> Self {
        Self {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            preset: preset.to_string(),
            mode: mode.to_string(),
            epsilon,
            scenario,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Episode {
        episode: usize,
        seed: u64,
        goals: Vec<[f64; 2]>,
        obstacles: Vec<[f64; 2]>,
    },
    Step {
        episode: usize,
        t: usize,
        agents: Vec<[f64; 4]>,
        action: Vec<[f64; 2]>,
        config: String,
        fell_back: bool,
        precondition: Option<bool>,
        iterations: usize,
        reward: [f64; 4],
    },
    State {
        episode: usize,
        t: usize,
        agents: Vec<[f64; 4]>,
    },
    End {
        episode: usize,
        safe: Vec<bool>,
        reached: Vec<bool>,
    },
}

fn agents_row(x: &JointState) -> Vec<[f64; 4]> {
    x.agents.iter().map(|a| [a.x, a.y, a.v, a.theta]).collect()
}

fn points_row(p: &[Point]) -> Vec<[f64; 2]> {
    p.iter().map(|p| [p.x, p.y]).collect()
}

pub fn trace_file_name(preset: &str, mode: &str) -> String {
    format!("{preset}__{mode}.jsonl")
}

pub fn write_traces(path: &Path, header: &TraceHeader, records: &[EpisodeRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut emit = |line: &TraceLine| -> Result<()> {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    emit(&TraceLine::Header(header.clone()))?;
    for r in records {
        let first = r.states.first();
        emit(&TraceLine::Episode {
            episode: r.episode,
            seed: r.seed,
            goals: first.map(|x| points_row(&x.goals)).unwrap_or_default(),
            obstacles: first.map(|x| points_row(&x.obstacles)).unwrap_or_default(),
        })?;
        for (t, (x, st)) in r.states.iter().zip(&r.steps).enumerate() {
            emit(&TraceLine::Step {
                episode: r.episode,
                t,
                agents: agents_row(x),
                action: st.action.actions.iter().map(|u| [u.a, u.delta]).collect(),
                config: st.config.to_string(),
                fell_back: st.fell_back,
                precondition: st.precondition_held,
                iterations: st.iterations,
                reward: [st.reward.goal, st.reward.bonus, st.reward.safe, st.reward.total],
            })?;
        }
        if let Some(last) = r.states.get(r.steps.len()) {
            emit(&TraceLine::State {
                episode: r.episode,
                t: r.steps.len(),
                agents: agents_row(last),
            })?;
        }
        emit(&TraceLine::End {
            episode: r.episode,
            safe: r.safe.clone(),
            reached: r.reached.clone(),
        })?;
    }
    out.flush()?;
    Ok(())
}

struct Partial {
    episode: usize,
    seed: u64,
    goals: Vec<Point>,
    obstacles: Vec<Point>,
    states: Vec<JointState>,
    steps: Vec<StepRecord>,
}

impl Partial {
    fn state(&self, agents: Vec<[f64; 4]>) -> Result<JointState, String> {
        let agents = agents
            .into_iter()
            .map(|[x, y, v, th]| AgentState::new(x, y, v, th))
            .collect();
        JointState::new(agents, self.goals.clone(), self.obstacles.clone()).map_err(|e| e.to_string())
    }
}

pub fn read_traces(path: &Path) -> Result<(TraceHeader, Vec<EpisodeRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let fail = |line: usize, msg: String| Error::Trace {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut header = None;
    let mut records = Vec::new();
    let mut current: Option<Partial> = None;
    for (idx, text) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(&text).map_err(|e| fail(line_no, e.to_string()))?;
        match line {
            TraceLine::Header(h) => {
                if header.is_some() || line_no != 1 {
                    return Err(fail(line_no, "header must be the first and only header line".into()));
                }
                if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                    return Err(fail(line_no, format!("unsupported trace {} v{}", h.format, h.version)));
                }
                header = Some(h);
            }
            _ if header.is_none() => return Err(fail(line_no, "missing header".into())),
            TraceLine::Episode {
                episode,
                seed,
                goals,
                obstacles,
            } => {
                if current.is_some() {
                    return Err(fail(line_no, "episode started before previous ended".into()));
                }
                let to_points = |v: Vec<[f64; 2]>| v.into_iter().map(|[x, y]| Point::new(x, y)).collect();
                current = Some(Partial {
                    episode,
                    seed,
                    goals: to_points(goals),
                    obstacles: to_points(obstacles),
                    states: Vec::new(),
                    steps: Vec::new(),
                });
            }
            TraceLine::Step {
                episode,
                t,
                agents,
                action,
                config,
                fell_back,
                precondition,
                iterations,
                reward,
            } => {
                let p = current
                    .as_mut()
                    .filter(|p| p.episode == episode && p.steps.len() == t)
                    .ok_or_else(|| fail(line_no, format!("unexpected step {t} of episode {episode}")))?;
                let x = p.state(agents).map_err(|m| fail(line_no, m))?;
                let n = x.n_agents();
                let bits = config
                    .chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(fail(line_no, format!("bad configuration bit `{other}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let config = Configuration::new(bits, n).map_err(|e| fail(line_no, e.to_string()))?;
                p.states.push(x);
                p.steps.push(StepRecord {
                    action: JointAction::from(action.into_iter().map(|[a, d]| Action::new(a, d)).collect::<Vec<_>>()),
                    config,
                    fell_back,
                    precondition_held: precondition,
                    iterations,
                    reward: RewardTerms {
                        goal: reward[0],
                        bonus: reward[1],
                        safe: reward[2],
                        total: reward[3],
                    },
                });
            }
            TraceLine::State { episode, t, agents } => {
                let p = current
                    .as_mut()
                    .filter(|p| p.episode == episode && p.steps.len() == t && p.states.len() == t)
                    .ok_or_else(|| fail(line_no, format!("unexpected terminal state of episode {episode}")))?;
                let x = p.state(agents).map_err(|m| fail(line_no, m))?;
                p.states.push(x);
            }
            TraceLine::End { episode, safe, reached } => {
                let p = current
                    .take()
                    .filter(|p| p.episode == episode)
                    .ok_or_else(|| fail(line_no, format!("unexpected end of episode {episode}")))?;
                records.push(EpisodeRecord {
                    episode: p.episode,
                    seed: p.seed,
                    states: p.states,
                    steps: p.steps,
                    safe,
                    reached,
                });
            }
        }
    }
    if current.is_some() {
        return Err(fail(0, "truncated trace: last episode has no end line".into()));
    }
    let header = header.ok_or_else(|| fail(0, "empty trace file".into()))?;
    Ok((header, records))
}

pub fn write_summary(path: &Path, rows: &[BatchSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<BatchSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub rows_checked: usize,
    pub episodes_checked: usize,
    /// Stored values that differ from their recomputation.
    pub mismatches: Vec<String>,
    /// Invariant violations found in the traces themselves.
    pub audit_failures: Vec<String>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.audit_failures.is_empty()
    }
}

/// Recomputes every flag and summary metric from the traces under
/// `dir/traces/` and compares them with the stored values and with
/// `dir/summary.csv`, then audits the recorded episodes.
pub fn check_outputs(dir: &Path) -> Result<CheckReport> {
    let rows = read_summary(&dir.join("summary.csv"))?;
    let mut report = CheckReport::default();
    for row in rows {
        let trace: PathBuf = dir.join("traces").join(trace_file_name(&row.preset, &row.mode));
        let (header, mut records) = read_traces(&trace)?;
        let mode: ShieldMode = header.mode.parse().map_err(|m| Error::Trace {
            path: trace.clone(),
            line: 1,
            msg: m,
        })?;
        let s = header.scenario;
        for r in &mut records {
            let safe = safe_throughout(&r.states, &s);
            let reached = reached_goal(&r.states, header.epsilon);
            if safe != r.safe || reached != r.reached {
                report.mismatches.push(format!(
                    "{}/{} episode {}: stored flags differ from recomputed",
                    row.preset, row.mode, r.episode
                ));
            }
            r.safe = safe;
            r.reached = reached;
        }
        let recomputed = summarize(&row.preset, mode, &s, &records)?;
        if recomputed != row {
            report.mismatches.push(format!(
                "{}/{}: summary row {:?} differs from recomputed {:?}",
                row.preset, row.mode, row, recomputed
            ));
        }
        let params = RewardParams {
            epsilon: header.epsilon,
            ..RewardParams::for_scenario(&s)
        };
        report.audit_failures.extend(
            audit(mode, &s, &records, &params)
                .into_iter()
                .map(|f| format!("{}: {f}", row.preset)),
        );
        report.rows_checked += 1;
        report.episodes_checked += records.len();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_episode, RewardParams};
    use crate::policy::{ControllerGains, ProportionalTask};

    fn short() -> Scenario {
        Scenario {
            episode_len: 25,
            ..Scenario::preset("3A4O").unwrap()
        }
    }

    fn records(s: &Scenario, mode: ShieldMode) -> Vec<EpisodeRecord> {
        let task = ProportionalTask::new(*s, ControllerGains::default());
        let p = RewardParams::for_scenario(s);
        (0..3)
            .map(|i| run_episode(s, mode, &task, i, 40 + i as u64, &p).unwrap())
            .collect()
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = short();
        let recs = records(&s, ShieldMode::Mamps);
        let header = TraceHeader::new("3A4O", ShieldMode::Mamps, s, s.r_goal);
        let path = dir.path().join("t.jsonl");
        write_traces(&path, &header, &recs).unwrap();
        let (h, back) = read_traces(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, recs);
        let first = std::fs::read(&path).unwrap();
        write_traces(&path, &header, &recs).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        for r in &back {
            assert_eq!(safe_throughout(&r.states, &h.scenario), r.safe);
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let header = TraceHeader::new("x", ShieldMode::None, short(), 0.05);
        write_traces(&path, &header, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("{\"kind\":\"header\""));
        let (_, back) = read_traces(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let s = short();
        let header = TraceHeader::new("3A4O", ShieldMode::Mamps, s, s.r_goal);
        write_traces(&path, &header, &records(&s, ShieldMode::Mamps)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(10).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(read_traces(&path), Err(Error::Trace { .. })));
        let no_header: Vec<&str> = text.lines().skip(1).collect();
        std::fs::write(&path, no_header.join("\n")).unwrap();
        assert!(matches!(read_traces(&path), Err(Error::Trace { line: 1, .. })));
    }

    #[test]
    fn check_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let s = short();
        std::fs::create_dir(dir.path().join("traces")).unwrap();
        let mut rows = Vec::new();
        for mode in [ShieldMode::Mamps, ShieldMode::None] {
            let recs = records(&s, mode);
            let header = TraceHeader::new("3A4O", mode, s, s.r_goal);
            let path = dir.path().join("traces").join(trace_file_name("3A4O", mode.as_str()));
            write_traces(&path, &header, &recs).unwrap();
            rows.push(summarize("3A4O", mode, &s, &recs).unwrap());
        }
        write_summary(&dir.path().join("summary.csv"), &rows).unwrap();
        assert_eq!(read_summary(&dir.path().join("summary.csv")).unwrap(), rows);
        let report = check_outputs(dir.path()).unwrap();
        assert!(report.ok(), "{:?}", report.mismatches);
        assert_eq!(report.rows_checked, 2);

        rows[0].pr_reach_goal = 0.123;
        write_summary(&dir.path().join("summary.csv"), &rows).unwrap();
        let report = check_outputs(dir.path()).unwrap();
        assert_eq!(report.mismatches.len(), 1);
        assert!(report.audit_failures.is_empty());
    }
}
