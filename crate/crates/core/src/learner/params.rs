use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

/// Shape of a stacked LSTM with a scalar linear head.
///
/// Each LSTM layer owns an input matrix `W` (4h × in), a recurrent matrix
/// `U` (4h × h) and a bias `b` (4h), stored row-major in that order. Gate rows
/// are ordered input, forget, candidate, output. The head is `w` (h) then `b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub input: usize,
    pub hidden: Vec<usize>,
}

/// Offsets of one LSTM layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub input: usize,
    pub hidden: usize,
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
}

impl Layout {
    pub fn new(input: usize, hidden: Vec<usize>) -> Result<Self, LearnerError> {
        if input == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(LearnerError::Config(format!(
                "layer sizes must be positive (input {input}, hidden {hidden:?})"
            )));
        }
        Ok(Layout { input, hidden })
    }

    /// `depth` identical layers of `width` units.
    pub fn stacked(input: usize, width: usize, depth: usize) -> Result<Self, LearnerError> {
        Layout::new(input, vec![width; depth])
    }

    pub fn spans(&self) -> Vec<LayerSpan> {
        let mut at = 0;
        let mut fan = self.input;
        self.hidden
            .iter()
            .map(|&h| {
                let w = at..at + 4 * h * fan;
                let u = w.end..w.end + 4 * h * h;
                let b = u.end..u.end + 4 * h;
                at = b.end;
                let span = LayerSpan {
                    input: fan,
                    hidden: h,
                    w,
                    u,
                    b,
                };
                fan = h;
                span
            })
            .collect()
    }

    /// Range of the head weights followed by the head bias.
    pub fn head(&self) -> Range<usize> {
        let start = self.spans().last().map_or(0, |s| s.b.end);
        start..start + self.top() + 1
    }

    pub fn top(&self) -> usize {
        *self.hidden.last().expect("layout has at least one layer")
    }

    pub fn param_count(&self) -> usize {
        self.head().end
    }
}

/// Flat parameter vector plus its layout and the global round it derives from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layout: Layout,
    pub values: Vec<f64>,
    pub version: u64,
}

impl ModelParams {
    pub fn new(layout: Layout, values: Vec<f64>, version: u64) -> Result<Self, LearnerError> {
        let p = ModelParams {
            layout,
            values,
            version,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        ModelParams {
            layout,
            values: vec![0.0; n],
            version: 0,
        }
    }

    /// Length congruence and finiteness.
    pub fn validate(&self) -> Result<(), LearnerError> {
        let expected = self.layout.param_count();
        if self.values.len() != expected {
            return Err(LearnerError::Dimension(format!(
                "{} values for a layout of {expected} parameters",
                self.values.len()
            )));
        }
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(LearnerError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Population standard deviation of all parameter values.
    pub fn value_stdev(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        (self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Text checkpoint; every value is written in shortest round-trip form.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let hidden: Vec<String> = self.layout.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "roadfl-model 1");
        let _ = writeln!(out, "version {}", self.version);
        let _ = writeln!(out, "input {}", self.layout.input);
        let _ = writeln!(out, "hidden {}", hidden.join(" "));
        let _ = writeln!(out, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, LearnerError> {
        let bad = |msg: &str| LearnerError::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String, LearnerError> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| LearnerError::Checkpoint(format!("expected `{key}`, got `{line}`")))
        };
        if header("roadfl-model")? != "1" {
            return Err(bad("unsupported checkpoint version"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let version = header("version")?.parse::<u64>().map_err(|_| bad("bad version"))?;
        let input = int(&header("input")?)?;
        let hidden = header("hidden")?
            .split_whitespace()
            .map(int)
            .collect::<Result<Vec<_>, _>>()?;
        let count = int(&header("values")?)?;
        let values = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != count {
            return Err(bad("value count does not match header"));
        }
        ModelParams::new(Layout::new(input, hidden)?, values, version)
    }
}

/// Seeded initialization: weights uniform in ±1/√fan_in, biases zero except the
/// forget gate, which starts at 1.
pub fn init_params(layout: &Layout, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.param_count()];
    for span in layout.spans() {
        let bound = 1.0 / ((span.input + span.hidden) as f64).sqrt();
        for v in &mut values[span.w.start..span.u.end] {
            *v = rng.random_range(-bound..bound);
        }
        let h = span.hidden;
        for v in &mut values[span.b.start + h..span.b.start + 2 * h] {
            *v = 1.0;
        }
    }
    let head = layout.head();
    let bound = 1.0 / (layout.top() as f64).sqrt();
    for v in &mut values[head.start..head.end - 1] {
        *v = rng.random_range(-bound..bound);
    }
    ModelParams {
        layout: layout.clone(),
        values,
        version: 0,
    }
}
