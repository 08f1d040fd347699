//! Line-delimited JSON protocol between the Kernel Manager and an external
//! simulator process.
//!
//! Simulator to manager:
//!
//! ```text
//! {"writable":["position","terrain_sensor"]}        once, first line
//! {"state":[1.0,0.0],"reward":0.0,"done":false}     initial observation, then one per action
//! ```
//!
//! Manager to simulator:
//!
//! ```text
//! {"action":[5.0]}
//! {"config":{"channel":"position","value":2.5}}     no reply; applies before the next action
//! ```

use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manager::{ConfigCommand, Observation, PhiManifest, SimSession};
use crate::state::{ActionVector, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimMessage {
    Manifest {
        writable: Vec<String>,
    },
    State {
        state: Vec<f64>,
        reward: f64,
        done: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManagerMessage {
    Action { action: Vec<f64> },
    Config { config: ConfigCommand },
}

fn read_line<R: BufRead>(reader: &mut R, line_no: &mut usize) -> Result<Option<String>> {
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| Error::io("reading protocol stream", e))?;
        if n == 0 {
            return Ok(None);
        }
        *line_no += 1;
        if !buf.trim().is_empty() {
            return Ok(Some(buf.trim_end().to_string()));
        }
    }
}

fn write_msg<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<()> {
    let text =
        serde_json::to_string(msg).map_err(|e| Error::format("protocol message", e.to_string()))?;
    writeln!(w, "{text}")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io("writing protocol stream", e))
}

/// Manager-side session over a pair of byte streams.
pub struct LineSession<R, W> {
    reader: R,
    writer: W,
    manifest: PhiManifest,
    pending_initial: Option<Observation>,
    line_no: usize,
}

impl<R: BufRead, W: Write> LineSession<R, W> {
    /// Reads the manifest and the initial observation.
    pub fn connect(mut reader: R, writer: W) -> Result<Self> {
        let mut line_no = 0;
        let manifest = match Self::next_msg(&mut reader, &mut line_no)? {
            SimMessage::Manifest { writable } => PhiManifest { writable },
            SimMessage::State { .. } => {
                return Err(Error::Session(
                    "expected the manifest as the first line".into(),
                ))
            }
        };
        let initial = match Self::next_msg(&mut reader, &mut line_no)? {
            SimMessage::State {
                state,
                reward,
                done,
            } => Observation {
                state: StateVector(state),
                reward,
                done,
            },
            SimMessage::Manifest { .. } => {
                return Err(Error::Session("manifest sent twice".into()))
            }
        };
        Ok(LineSession {
            reader,
            writer,
            manifest,
            pending_initial: Some(initial),
            line_no,
        })
    }

    fn next_msg(reader: &mut R, line_no: &mut usize) -> Result<SimMessage> {
        let line = read_line(reader, line_no)?
            .ok_or_else(|| Error::Session("simulator closed the stream".into()))?;
        serde_json::from_str(&line)
            .map_err(|e| Error::Session(format!("line {line_no}: malformed message: {e}")))
    }

    pub fn into_inner(self) -> (R, W) {
        (self.reader, self.writer)
    }
}

impl<R: BufRead, W: Write> SimSession for LineSession<R, W> {
    fn manifest(&self) -> &PhiManifest {
        &self.manifest
    }

    fn initial(&mut self) -> Result<Observation> {
        self.pending_initial
            .take()
            .ok_or_else(|| Error::Session("initial observation already consumed".into()))
    }

    fn act(&mut self, action: &ActionVector) -> Result<Observation> {
        self.pending_initial = None;
        write_msg(
            &mut self.writer,
            &ManagerMessage::Action {
                action: action.0.clone(),
            },
        )?;
        match Self::next_msg(&mut self.reader, &mut self.line_no)? {
            SimMessage::State {
                state,
                reward,
                done,
            } => Ok(Observation {
                state: StateVector(state),
                reward,
                done,
            }),
            SimMessage::Manifest { .. } => {
                Err(Error::Session("unexpected manifest mid-session".into()))
            }
        }
    }

    fn configure(&mut self, cmd: &ConfigCommand) -> Result<()> {
        write_msg(
            &mut self.writer,
            &ManagerMessage::Config {
                config: cmd.clone(),
            },
        )
    }
}

/// Simulator side: exposes `sim` over the protocol until the manager closes
/// its end. Rejected configuration writes are logged and the session goes on.
pub fn serve<S, R, W>(sim: &mut S, mut reader: R, mut writer: W) -> Result<()>
where
    S: SimSession + ?Sized,
    R: BufRead,
    W: Write,
{
    write_msg(
        &mut writer,
        &SimMessage::Manifest {
            writable: sim.manifest().writable.clone(),
        },
    )?;
    let obs = sim.initial()?;
    write_msg(&mut writer, &state_msg(obs))?;
    let mut line_no = 0;
    while let Some(line) = read_line(&mut reader, &mut line_no)? {
        let msg: ManagerMessage = serde_json::from_str(&line)
            .map_err(|e| Error::Session(format!("line {line_no}: malformed message: {e}")))?;
        match msg {
            ManagerMessage::Config { config } => {
                if let Err(e) = sim.configure(&config) {
                    warn!("rejected write to '{}': {e}", config.channel);
                }
            }
            ManagerMessage::Action { action } => {
                let obs = sim.act(&ActionVector(action))?;
                write_msg(&mut writer, &state_msg(obs))?;
            }
        }
    }
    Ok(())
}

fn state_msg(obs: Observation) -> SimMessage {
    SimMessage::State {
        state: obs.state.0,
        reward: obs.reward,
        done: obs.done,
    }
}
