use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use conebellman::ldp::LdpSolution;
use conebellman::lqr::LqrSolution;
use conebellman::problem_file::rows_of;
use conebellman::ssp::{SspGraphSolution, SspSolution};

/// Pretty JSON with every float written to 17 significant digits in
/// exponent form, so repeated runs give identical bytes and values
/// round-trip exactly.
pub struct ExactFloats<'a>(PrettyFormatter<'a>);

impl ExactFloats<'_> {
    pub fn new() -> Self {
        ExactFloats(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_exact_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats::new());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn vector(v: &nalgebra::DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn ssp_json(sol: &SspSolution) -> Value {
    json!({
        "type": "ssp",
        "status": "solved",
        "lambda": vector(&sol.lambda),
        "gain": rows_of(&sol.gain),
        "iterations": sol.trace.len(),
        "stationarity_residual": sol.stationarity_residual,
        "closed_loop_radius": sol.closed_loop_radius,
    })
}

pub fn graph_json(sol: &SspGraphSolution) -> Value {
    let mut v = ssp_json(&sol.solution);
    v["type"] = json!("ssp-graph");
    v["node_values"] = json!(sol.node_values);
    v["policy"] = json!(sol.policy);
    v
}

pub fn lqr_json(sol: &LqrSolution) -> Value {
    json!({
        "type": "lqr",
        "status": "solved",
        "lambda": rows_of(&sol.value),
        "gain": rows_of(&sol.gain),
        "iterations": sol.trace.len(),
        "stationarity_residual": sol.stationarity_residual,
        "riccati_residual": sol.riccati_residual,
        "closed_loop_radius": sol.closed_loop_radius,
    })
}

pub fn ldp_json(sol: &LdpSolution) -> Value {
    json!({
        "type": "ldp",
        "status": "solved",
        "states": sol.reduced.states(),
        "z": vector(&sol.z),
        "lambda": vector(&sol.lambda),
        "Pstar": rows_of(&sol.pstar),
        "affine_residual": sol.affine_residual,
        "bellman_residual": sol.bellman_residual,
        "spectral_radius": sol.spectral_radius,
        "closed_loop_radius": sol.closed_loop_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let text = to_exact_json(&json!({"x": [0.1, 1.0], "y": f64::NAN})).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.contains("\"y\": null"));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"][0].as_f64(), Some(0.1));
    }
}
