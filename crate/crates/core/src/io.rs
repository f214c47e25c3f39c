//! File schemas for MDPs, constraint sets and tabular outputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constraints::Candidate;
use crate::error::{Error, Result};
use crate::gridworld::CellMapping;
use crate::inference::IterationTrace;
use crate::mdp::{Mdp, MdpBuilder};
use crate::soft_bellman::SoftBackup;

/// On-disk MDP. Transition entries not listed are 0; reward entries not
/// listed are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub transitions: Vec<(usize, usize, usize, f64)>,
    #[serde(default)]
    pub running_reward: Vec<(usize, usize, f64)>,
    pub terminal_reward: Vec<f64>,
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        let mut running_reward = Vec::new();
        for x in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                running_reward.push((x, a, mdp.reward(x, a)));
            }
        }
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            horizon: mdp.horizon(),
            transitions: mdp.transitions().collect(),
            running_reward,
            terminal_reward: mdp.terminal_rewards().to_vec(),
        }
    }
}

impl TryFrom<MdpFile> for Mdp {
    type Error = Error;

    fn try_from(file: MdpFile) -> Result<Mdp> {
        if file.terminal_reward.len() != file.num_states {
            return Err(Error::LengthMismatch {
                what: "terminal_reward",
                got: file.terminal_reward.len(),
                expected: file.num_states,
            });
        }
        let mut b = MdpBuilder::new(file.num_states, file.num_actions, file.horizon);
        let mut seen = BTreeSet::new();
        for (x, a, y, p) in file.transitions {
            if !seen.insert((x, a, y)) {
                return Err(Error::DuplicateTransition {
                    state: x,
                    action: a,
                    next: y,
                });
            }
            b.add_transition(x, a, y, p)?;
        }
        for (x, a, r) in file.running_reward {
            b.running_reward(x, a, r)?;
        }
        for (x, w) in file.terminal_reward.into_iter().enumerate() {
            b.terminal_reward(x, w)?;
        }
        b.build()
    }
}

#[derive(Debug, Serialize)]
struct ValueRow {
    t: usize,
    x: usize,
    v: f64,
}

/// `V_t(x)` as CSV with columns `t,x,v`.
pub fn write_values_csv<W: std::io::Write>(backup: &SoftBackup, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in 0..=backup.horizon() {
        for x in 0..backup.num_states() {
            w.serialize(ValueRow {
                t,
                x,
                v: backup.v(t, x),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TraceRow {
    candidate_kind: &'static str,
    candidate_target: usize,
    log_f_at_start: f64,
    psi: Option<f64>,
    score: f64,
    admissible: bool,
}

/// One iteration's scoreboard: `candidate_kind,candidate_target,log_f_at_start,psi,score,admissible`.
pub fn write_trace_csv<W: std::io::Write>(trace: &IterationTrace, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "candidate_kind",
        "candidate_target",
        "log_f_at_start",
        "psi",
        "score",
        "admissible",
    ])?;
    for s in &trace.candidates {
        w.serialize(TraceRow {
            candidate_kind: s.candidate.kind_name(),
            candidate_target: s.candidate.target(),
            log_f_at_start: s.log_f_at_start,
            psi: match s.candidate {
                Candidate::State { psi, .. } => Some(psi),
                _ => None,
            },
            score: s.score,
            admissible: s.admissible,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct HeatmapRow {
    candidate_kind: &'static str,
    candidate_target: usize,
    col: Option<usize>,
    row: Option<usize>,
    log_f_at_start: f64,
}

/// Heatmap data for one iteration. State candidates get `col,row` when a
/// mapping is given; action candidates never do.
pub fn write_heatmap_csv<W: std::io::Write>(
    trace: &IterationTrace,
    mapping: Option<&CellMapping>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "candidate_kind",
        "candidate_target",
        "col",
        "row",
        "log_f_at_start",
    ])?;
    for s in &trace.candidates {
        let cell = match (s.candidate, mapping) {
            (Candidate::State { state, .. }, Some(m)) if state < m.cells.len() => {
                Some(m.cell(state))
            }
            _ => None,
        };
        w.serialize(HeatmapRow {
            candidate_kind: s.candidate.kind_name(),
            candidate_target: s.candidate.target(),
            col: cell.map(|c| c[0]),
            row: cell.map(|c| c[1]),
            log_f_at_start: s.log_f_at_start,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{build_gridworld, GridSpec};

    #[test]
    fn mdp_file_round_trip() {
        let spec = GridSpec {
            width: 3,
            height: 2,
            slip: 0.1,
            start: [0, 0],
            goal: [2, 1],
            horizon: 4,
            true_constraints: vec![],
        };
        let g = build_gridworld(&spec).unwrap();
        let json = serde_json::to_string(&MdpFile::from(&g.mdp)).unwrap();
        let file: MdpFile = serde_json::from_str(&json).unwrap();
        let back = Mdp::try_from(file).unwrap();
        assert_eq!(back, g.mdp);
    }

    #[test]
    fn duplicate_entries_rejected() {
        let json = r#"{"num_states":1,"num_actions":1,"horizon":1,
            "transitions":[[0,0,0,0.5],[0,0,0,0.5]],"terminal_reward":[0]}"#;
        let file: MdpFile = serde_json::from_str(json).unwrap();
        assert!(matches!(
            Mdp::try_from(file),
            Err(Error::DuplicateTransition { .. })
        ));
    }

    #[test]
    fn omitted_rewards_default_to_zero() {
        let json = r#"{"num_states":2,"num_actions":1,"horizon":1,
            "transitions":[[0,0,1,1.0],[1,0,1,1.0]],"terminal_reward":[0, 2.5]}"#;
        let mdp = Mdp::try_from(serde_json::from_str::<MdpFile>(json).unwrap()).unwrap();
        assert_eq!(mdp.reward(0, 0), 0.0);
        assert_eq!(mdp.terminal(1), 2.5);
        assert!(mdp.validate().is_empty());
    }

    #[test]
    fn heatmap_rows() {
        use crate::inference::ScoredCandidate;
        let mut trace = IterationTrace {
            iteration: 0,
            base_log_likelihood: -1.0,
            candidates: vec![],
        };
        let mut buf = Vec::new();
        write_heatmap_csv(&trace, None, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "candidate_kind,candidate_target,col,row,log_f_at_start\n"
        );

        trace.candidates = vec![
            ScoredCandidate {
                candidate: Candidate::State { state: 4, psi: 0.1 },
                score: -2.0,
                log_f_at_start: -0.5,
                admissible: true,
            },
            ScoredCandidate {
                candidate: Candidate::Action { action: 8 },
                score: 0.0,
                log_f_at_start: 0.0,
                admissible: true,
            },
        ];
        let mapping = CellMapping::new(3, 2);
        let mut buf = Vec::new();
        write_heatmap_csv(&trace, Some(&mapping), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "state,4,1,1,-0.5");
        assert_eq!(lines[2], "action,8,,,0.0");
    }

    #[test]
    fn values_csv_layout() {
        let json = r#"{"num_states":1,"num_actions":2,"horizon":1,
            "transitions":[[0,0,0,1.0],[0,1,0,1.0]],"terminal_reward":[0]}"#;
        let mdp = Mdp::try_from(serde_json::from_str::<MdpFile>(json).unwrap()).unwrap();
        let b = crate::soft_bellman::soft_backup(
            &mdp,
            &crate::constraints::ConstraintSet::unconstrained(1),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_values_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,v");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0,0.693147"));
        assert_eq!(lines[2], "1,0,0.0");
    }
}
