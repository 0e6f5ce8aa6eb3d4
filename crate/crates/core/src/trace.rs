//! Run traces, burn-in detection and the versioned CSV trace format.

use std::io::Write;

use crate::error::Result;

/// First line of every CSV trace.
pub const TRACE_SCHEMA: &str = "# trace schema v1";

/// Per-row record of which hypotheses of the guarantees were breached.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContractFlags {
    /// `|λʲ - λ̃ʲ| > ασ₀` for some `j` at this iteration.
    pub multiplier_gap: bool,
    /// The realized objective left its theoretical bracket.
    pub bracket: bool,
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub k: usize,
    /// Index into the action set of the action chosen at `k`, when discrete.
    pub action: Option<usize>,
    pub z: Vec<f64>,
    /// `F(z_k)` for descent runs, `f(z_{k+1})` for constrained runs.
    pub objective: f64,
    pub lambda: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
    /// `L(z_{k+1}, λ̃_k)`
    pub lagrangian: Option<f64>,
    /// `q(λ_k)` from the reference oracle (checkpoints only).
    pub dual_value: Option<f64>,
    /// `f(z◇_k)`
    pub diamond_objective: Option<f64>,
    /// `g(z◇_k)`, empty before the averaging window opens.
    pub diamond_constraints: Vec<f64>,
    /// `(λ◇_k)ᵀg(z◇_k)`
    pub slackness: Option<f64>,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub flags: ContractFlags,
}

/// Sequence of logged rows plus the final iterate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_z: Vec<f64>,
    pub iterations: usize,
}

impl RunTrace {
    pub fn objectives(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows.iter().map(|r| (r.k, r.objective))
    }

    /// Writes the trace as CSV with a schema line and a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_SCHEMA}")?;
        let n = self.rows.first().map_or(self.final_z.len(), |r| r.z.len());
        let m = self.rows.first().map_or(0, |r| r.lambda.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "action".to_string()];
        header.extend((1..=n).map(|i| format!("z{i}")));
        header.extend((1..=m).map(|j| format!("lambda{j}")));
        header.extend((1..=m).map(|j| format!("lambda_tilde{j}")));
        header.extend(
            ["objective", "lagrangian", "dual_value", "diamond_objective"].map(String::from),
        );
        header.extend((1..=m).map(|j| format!("g_diamond{j}")));
        header.extend(
            [
                "slackness",
                "bound_lower",
                "bound_upper",
                "multiplier_gap_flag",
                "bracket_flag",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string(), r.action.map_or(String::new(), |a| a.to_string())];
            rec.extend(r.z.iter().map(|v| fmt_float(*v)));
            rec.extend(r.lambda.iter().map(|v| fmt_float(*v)));
            rec.extend(r.lambda_tilde.iter().map(|v| fmt_float(*v)));
            rec.push(fmt_float(r.objective));
            for v in [r.lagrangian, r.dual_value, r.diamond_objective] {
                rec.push(v.map_or(String::new(), fmt_float));
            }
            for j in 0..m {
                rec.push(r.diamond_constraints.get(j).map_or(String::new(), |v| fmt_float(*v)));
            }
            for v in [r.slackness, r.bound_lower, r.bound_upper] {
                rec.push(v.map_or(String::new(), fmt_float));
            }
            rec.push(u8::from(r.flags.multiplier_gap).to_string());
            rec.push(u8::from(r.flags.bracket).to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_io(e: csv::Error) -> crate::error::Error {
    std::io::Error::other(e).into()
}

/// Burn-in indices detected along a sampled sequence of gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BurnIn {
    /// First sampled `k` with `gap <= threshold`.
    pub first_hit: Option<usize>,
    /// Start of the first run of at least `window` consecutive satisfying samples.
    pub confirmed: Option<usize>,
    /// Largest sampled `k` with `gap > threshold`.
    pub last_violation: Option<usize>,
}

impl BurnIn {
    /// `true` if every sample from `k` on satisfied the threshold.
    pub fn holds_from(&self, k: usize) -> bool {
        self.last_violation.is_none_or(|v| v < k)
    }
}

/// Scans `(k, gap)` samples in increasing `k`.
pub fn detect_burn_in<I>(samples: I, threshold: f64, window: usize) -> BurnIn
where
    I: IntoIterator<Item = (usize, f64)>,
{
    let mut out = BurnIn::default();
    let mut run_start = None;
    let mut run_len = 0usize;
    for (k, gap) in samples {
        if gap <= threshold {
            out.first_hit.get_or_insert(k);
            if run_len == 0 {
                run_start = Some(k);
            }
            run_len += 1;
            if run_len >= window.max(1) && out.confirmed.is_none() {
                out.confirmed = run_start;
            }
        } else {
            run_len = 0;
            out.last_violation = Some(k);
        }
    }
    out
}

/// Incremental burn-in detector for long runs that cannot keep every sample.
#[derive(Debug, Clone)]
pub struct BurnInDetector {
    threshold: f64,
    window: usize,
    run_start: Option<usize>,
    run_len: usize,
    result: BurnIn,
}

impl BurnInDetector {
    pub fn new(threshold: f64, window: usize) -> Self {
        Self {
            threshold,
            window: window.max(1),
            run_start: None,
            run_len: 0,
            result: BurnIn::default(),
        }
    }

    pub fn observe(&mut self, k: usize, gap: f64) {
        if gap <= self.threshold {
            self.result.first_hit.get_or_insert(k);
            if self.run_len == 0 {
                self.run_start = Some(k);
            }
            self.run_len += 1;
            if self.run_len >= self.window && self.result.confirmed.is_none() {
                self.result.confirmed = self.run_start;
            }
        } else {
            self.run_len = 0;
            self.result.last_violation = Some(k);
        }
    }

    /// `true` once a confirmation window has been completed.
    pub fn is_confirmed(&self) -> bool {
        self.result.confirmed.is_some()
    }

    pub fn result(&self) -> BurnIn {
        self.result
    }
}
