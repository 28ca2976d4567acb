use std::io::{BufRead, Write};

use super::protocol::{encode, Grads, Op, Request, Response};
use super::Oracle;
use crate::error::Result;

/// Answers protocol requests read from `input` until end of stream.
///
/// Malformed or failing requests produce an `{id, error}` line and the loop
/// continues. Returns the number of requests handled.
pub fn serve<O: Oracle>(oracle: &mut O, input: impl BufRead, mut output: impl Write) -> Result<usize> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(request) => answer(oracle, request),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
                Response::error(id, format!("malformed request: {e}"))
            }
        };
        writeln!(output, "{}", encode(&response))?;
        output.flush()?;
        handled += 1;
    }
    Ok(handled)
}

fn answer<O: Oracle>(oracle: &mut O, request: Request) -> Response {
    let id = Some(request.id);
    let result = match request.op {
        Op::Info => oracle.info().map(|info| Response {
            id,
            info: Some(info),
            ..Response::default()
        }),
        Op::Predict => match request.payload {
            None => return Response::error(id, "predict requires a payload"),
            Some(input) => oracle.predict(&input).map(|p| Response {
                id,
                probs: Some(p.probs().to_vec()),
                ..Response::default()
            }),
        },
        Op::Gradient => match (request.payload, request.target) {
            (Some(input), Some(target)) => oracle.gradient(&input, &target).map(|g| Response {
                id,
                value: g.value,
                grads: Some(Grads {
                    text: g.text,
                    visual: g.visual,
                }),
                ..Response::default()
            }),
            _ => return Response::error(id, "gradient requires a payload and a target"),
        },
    };
    result.unwrap_or_else(|e| Response::error(id, e.to_string()))
}
