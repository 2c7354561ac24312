//! JSON-lines trajectory log, one record per environment step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::board::Action;
use crate::EnvError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

pub struct TrajectoryWriter<W: Write> {
    out: W,
    step: u64,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        TrajectoryWriter { out, step: 0 }
    }

    pub fn record(&mut self, action: Action, reward: f64, done: bool) -> Result<(), EnvError> {
        let rec = TrajectoryRecord {
            step: self.step,
            action,
            reward,
            done,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.step += 1;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>, EnvError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::from)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = TrajectoryWriter::new(Vec::new());
        w.record(Action::Left, -0.01, false).unwrap();
        w.record(Action::Up, 0.99, true).unwrap();
        let bytes = w.into_inner();
        let recs = read_trajectory(&bytes[..]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].step, 1);
        assert_eq!(recs[1].action, Action::Up);
        assert_eq!(recs[0].reward, -0.01);
    }
}
