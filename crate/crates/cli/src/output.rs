//! Number formatting, CSV writing and the machine-readable error type.

use std::fmt::Write as _;
use std::io::{self, Write as _};

use pgflow::optimize::OptimizeTrace;
use serde::Serialize;

/// Exit status and JSON payload of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {"kind": self.kind, "message": self.message, "exit_code": self.code}
        })
        .to_string()
    }
}

impl From<pgflow::Error> for Failure {
    fn from(e: pgflow::Error) -> Self {
        Failure {
            code: if e.is_numeric() { 3 } else { 2 },
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::input("Io", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::input("Schema", e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// `x` rounded to 10 significant digits, printed in its shortest form.
pub fn csv_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("formatted float parses");
    // Normalise −0 so identical runs print identical bytes.
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

/// `k,J,grad_norm,step,theta_0..theta_{p-1}`, one row per record.
pub fn trace_csv(trace: &OptimizeTrace, p: usize) -> String {
    let mut out = String::from("k,J,grad_norm,step");
    for j in 0..p {
        let _ = write!(out, ",theta_{j}");
    }
    out.push('\n');
    for r in &trace.records {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.k,
            csv_number(r.objective),
            csv_number(r.grad_norm),
            csv_number(r.step)
        );
        for x in &r.theta {
            let _ = write!(out, ",{}", csv_number(*x));
        }
        out.push('\n');
    }
    out
}

pub fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value)?;
    print_text(&format!("{text}\n"))
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
pub fn print_text(text: &str) -> CmdResult {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(csv_number(0.1 + 0.2), "0.3");
        assert_eq!(csv_number(1.0 / 3.0), "0.3333333333");
        assert_eq!(csv_number(123456.789012345), "123456.789");
        assert_eq!(csv_number(-0.0), "0");
        assert_eq!(csv_number(4.0), "4");
        assert_eq!(csv_number(2.5e-12), "0.0000000000025");
    }

    #[test]
    fn failure_codes() {
        let f: Failure = pgflow::Error::NoConvergence {
            iterations: 3,
            residual: 1.0,
        }
        .into();
        assert_eq!(f.code, 3);
        let f: Failure = pgflow::Error::InvalidModel("x".into()).into();
        assert_eq!(f.code, 2);
        let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(v["error"]["exit_code"], 2);
    }
}
