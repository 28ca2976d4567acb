//! Client side of the JSONL oracle protocol over a child process's stdio or
//! a TCP connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::debug;

use super::protocol::{encode, Op, Request, Response};
use super::{ModelInput, Oracle, OracleInfo, Target};
use crate::error::{Error, Result};
use crate::toydiff::GradientRecord;
use crate::types::PredictionDistribution;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

enum Incoming {
    Line { offset: u64, text: String },
    Eof { offset: u64 },
    Failed(std::io::Error),
}

/// One session with an external oracle. At most one request is in flight;
/// the handshake runs on construction.
pub struct RemoteOracle {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<Incoming>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
    info: Option<OracleInfo>,
    read_offset: u64,
}

impl std::fmt::Debug for RemoteOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteOracle")
            .field("next_id", &self.next_id)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl RemoteOracle {
    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot start oracle {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Self::handshake(Box::new(stdin), stdout, Some(child), timeout)
    }

    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Oracle(format!("cannot connect to oracle at {addr}: {e}")))?;
        let reader = stream.try_clone()?;
        Self::handshake(Box::new(stream), reader, None, timeout)
    }

    /// Uses an already established byte stream pair.
    pub fn from_streams(
        writer: Box<dyn Write + Send>,
        reader: impl Read + Send + 'static,
        timeout: Duration,
    ) -> Result<Self> {
        Self::handshake(writer, reader, None, timeout)
    }

    fn handshake(
        writer: Box<dyn Write + Send>,
        reader: impl Read + Send + 'static,
        child: Option<Child>,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            let mut offset = 0u64;
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        let _ = tx.send(Incoming::Eof { offset });
                        break;
                    }
                    Ok(n) => {
                        let start = offset;
                        offset += n as u64;
                        if tx
                            .send(Incoming::Line {
                                offset: start,
                                text: line,
                            })
                            .is_err()
                        {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Incoming::Failed(e));
                        break;
                    }
                }
            }
        });
        let mut oracle = Self {
            writer,
            incoming: rx,
            child,
            next_id: 1,
            timeout,
            info: None,
            read_offset: 0,
        };
        let response = oracle.call(Op::Info, None, None)?;
        let offset = oracle.read_offset;
        let info = response.info.ok_or_else(|| Error::Protocol {
            offset,
            message: "info response lacks model dimensions".into(),
        })?;
        info.validate().map_err(|e| Error::Protocol {
            offset,
            message: e.to_string(),
        })?;
        oracle.info = Some(info);
        Ok(oracle)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn call(&mut self, op: Op, payload: Option<&ModelInput>, target: Option<&Target>) -> Result<Response> {
        let id = self.next_id;
        self.next_id += 1;
        let request = Request {
            id,
            op,
            payload: payload.cloned(),
            target: target.cloned(),
        };
        let mut line = encode(&request);
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|()| self.writer.flush())
            .map_err(|e| Error::Oracle(format!("cannot write request {id}: {e}")))?;
        debug!("oracle request {id} ({op:?})");

        let (offset, text) = match self.incoming.recv_timeout(self.timeout) {
            Ok(Incoming::Line { offset, text }) => (offset, text),
            Ok(Incoming::Eof { offset }) => {
                return Err(Error::Protocol {
                    offset,
                    message: format!("oracle closed the stream before answering request {id}"),
                })
            }
            Ok(Incoming::Failed(e)) => return Err(Error::Oracle(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(Error::OracleTimeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(Error::Oracle("oracle reader stopped".into())),
        };
        self.read_offset = offset;
        let response: Response = serde_json::from_str(text.trim_end()).map_err(|e| Error::Protocol {
            offset,
            message: format!("malformed response line: {e}"),
        })?;
        if response.id != Some(id) {
            return Err(Error::Protocol {
                offset,
                message: format!("response id {:?} does not match request {id}", response.id),
            });
        }
        if let Some(message) = response.error {
            return Err(Error::Oracle(message));
        }
        Ok(response)
    }

    fn cached_info(&self) -> &OracleInfo {
        self.info
            .as_ref()
            .expect("handshake completed in the constructor")
    }

    fn check_payload(&self, input: &ModelInput) -> Result<()> {
        let info = self.cached_info();
        let [regions, width] = info.vis_dims;
        if input.text.rows() > 0 && input.text.cols() != info.embed_dim {
            return Err(Error::invalid(format!(
                "text width {} != oracle embed_dim {}",
                input.text.cols(),
                info.embed_dim
            )));
        }
        if input.visual.rows() > 0
            && (input.visual.cols() != width || (regions > 0 && input.visual.rows() != regions))
        {
            return Err(Error::invalid(format!(
                "visual shape {:?} incompatible with oracle dims {:?}",
                input.visual.shape(),
                info.vis_dims
            )));
        }
        Ok(())
    }
}

impl Oracle for RemoteOracle {
    fn info(&mut self) -> Result<OracleInfo> {
        Ok(self.cached_info().clone())
    }

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution> {
        self.check_payload(input)?;
        let response = self.call(Op::Predict, Some(input), None)?;
        let offset = self.read_offset;
        let probs = response.probs.ok_or_else(|| Error::Protocol {
            offset,
            message: "predict response lacks probs".into(),
        })?;
        if probs.len() != self.cached_info().classes {
            return Err(Error::Protocol {
                offset,
                message: format!(
                    "{} probabilities for {} classes",
                    probs.len(),
                    self.cached_info().classes
                ),
            });
        }
        PredictionDistribution::new(probs).map_err(|e| Error::Protocol {
            offset,
            message: e.to_string(),
        })
    }

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        self.check_payload(input)?;
        let response = self.call(Op::Gradient, Some(input), Some(target))?;
        let offset = self.read_offset;
        let grads = response.grads.ok_or_else(|| Error::Protocol {
            offset,
            message: "gradient response lacks grads".into(),
        })?;
        let text_ok =
            grads.text.shape() == input.text.shape() || (input.text.rows() == 0 && grads.text.rows() == 0);
        let visual_ok = grads.visual.shape() == input.visual.shape()
            || (input.visual.rows() == 0 && grads.visual.rows() == 0);
        if !text_ok || !visual_ok {
            return Err(Error::Protocol {
                offset,
                message: format!(
                    "gradient shapes text {:?} / visual {:?} do not match input {:?} / {:?}",
                    grads.text.shape(),
                    grads.visual.shape(),
                    input.text.shape(),
                    input.visual.shape()
                ),
            });
        }
        Ok(GradientRecord {
            value: response.value,
            text: input.text.with_data_of(grads.text),
            visual: input.visual.with_data_of(grads.visual),
        })
    }
}

impl Drop for RemoteOracle {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
