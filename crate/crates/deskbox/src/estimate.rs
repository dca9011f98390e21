use std::fmt::Write;

use deskbox_core::memory::{
    estimate, estimate_bytes, min_gpus, preset, report_table, GpuProfile, MemoryEstimate,
    TableAssumptions, TrainingShape, PRESETS,
};
use serde::Serialize;

use crate::error::{Error, Result};

/// Estimator inputs as given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateArgs {
    pub params: Option<u64>,
    pub gpus: Option<u64>,
    pub layers: Option<u64>,
    pub batch: Option<u64>,
    pub seq_len: Option<u64>,
    pub hidden: Option<u64>,
    pub vocab: Option<u64>,
    pub preset: Option<String>,
    /// `a100`, `a6000` or `NAME=GIB`; several allowed in table mode.
    pub gpu: Vec<String>,
    pub n_max: u64,
    pub table: bool,
    pub json: bool,
}

/// Parses `a100`, `a6000` or a custom `NAME=GIB` profile.
pub fn parse_gpu(spec: &str) -> Result<GpuProfile> {
    if let Some(g) = GpuProfile::named(spec) {
        return Ok(g);
    }
    let (name, cap) = spec.split_once('=').ok_or_else(|| {
        Error::Usage(format!("unknown GPU {spec:?}; use a100, a6000 or NAME=GIB"))
    })?;
    let cap: f64 = cap
        .parse()
        .map_err(|_| Error::Usage(format!("GPU capacity {cap:?} is not a number")))?;
    if cap.is_nan() || cap <= 0.0 || name.is_empty() {
        return Err(Error::Usage(format!("invalid GPU profile {spec:?}")));
    }
    Ok(GpuProfile::new(name, cap))
}

fn required(v: Option<u64>, flag: &str) -> Result<u64> {
    v.ok_or_else(|| Error::Usage(format!("missing required flag {flag}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ByteReport {
    pub param_numerator: u128,
    pub activation: u128,
    pub logits: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub shape: TrainingShape,
    pub estimate: MemoryEstimate,
    /// Exact byte terms; the parameter term is `param_numerator / gpus`.
    pub bytes: ByteReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu: Option<GpuProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fits: Option<bool>,
    /// Set when `gpus` was searched rather than given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub searched: Option<bool>,
}

/// Builds the training shape, expanding a preset when one is named.
pub fn shape_from(args: &EstimateArgs) -> Result<(TrainingShape, bool)> {
    let (params, layers, hidden, vocab, preset_seq) = match &args.preset {
        Some(name) => {
            let clash: Vec<&str> = [
                ("-p/--params", args.params.is_some()),
                ("-l/--layers", args.layers.is_some()),
                ("-h/--hidden", args.hidden.is_some()),
                ("-v/--vocab", args.vocab.is_some()),
            ]
            .iter()
            .filter(|(_, set)| *set)
            .map(|(f, _)| *f)
            .collect();
            if !clash.is_empty() {
                return Err(Error::Usage(format!(
                    "--preset conflicts with {}; a preset fixes the model dimensions",
                    clash.join(", ")
                )));
            }
            let p = preset(name).ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                Error::Usage(format!(
                    "unknown preset {name:?}; known presets: {}",
                    known.join(", ")
                ))
            })?;
            (p.params, p.layers, p.hidden, p.vocab, Some(p.max_seq_len))
        }
        None => (
            required(args.params, "-p/--params")?,
            required(args.layers, "-l/--layers")?,
            required(args.hidden, "-h/--hidden")?,
            required(args.vocab, "-v/--vocab")?,
            None,
        ),
    };
    let seq_len = required(args.seq_len.or(preset_seq), "-s/--seq-len")?;
    let batch = required(args.batch, "-b/--batch")?;
    let searched = args.gpus.is_none();
    let gpus = match args.gpus {
        Some(n) => n,
        None if args.gpu.is_empty() => {
            return Err(Error::Usage(
                "missing required flag -n/--gpus (or give --gpu to search for it)".into(),
            ))
        }
        None => 1,
    };
    let shape = TrainingShape {
        params,
        gpus,
        layers,
        batch,
        seq_len,
        hidden,
        vocab,
    };
    shape.validate()?;
    Ok((shape, searched))
}

pub fn estimate_report(args: &EstimateArgs) -> Result<EstimateReport> {
    if args.gpu.len() > 1 {
        return Err(Error::Usage(
            "several --gpu profiles are only allowed with --table".into(),
        ));
    }
    let gpu = args.gpu.first().map(|g| parse_gpu(g)).transpose()?;
    let (mut shape, searched) = shape_from(args)?;
    let mut fits = None;
    if let Some(g) = &gpu {
        if searched {
            match min_gpus(&shape, g, args.n_max) {
                Some(n) => shape = shape.with_gpus(n),
                None => {
                    shape = shape.with_gpus(args.n_max);
                    fits = Some(false);
                }
            }
        }
        let e = estimate(&shape);
        fits.get_or_insert(e.total <= g.capacity_gib);
    }
    let b = estimate_bytes(&shape);
    Ok(EstimateReport {
        shape,
        estimate: estimate(&shape),
        bytes: ByteReport {
            param_numerator: b.param_numerator,
            activation: b.activation,
            logits: b.logits,
        },
        gpu,
        fits,
        searched: (searched && fits.is_some()).then_some(true),
    })
}

impl EstimateReport {
    pub fn render(&self) -> String {
        let s = &self.shape;
        let e = &self.estimate;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "p={} n={} l={} b={} s={} h={} v={}",
            s.params, s.gpus, s.layers, s.batch, s.seq_len, s.hidden, s.vocab
        );
        let _ = writeln!(out, "param_term      {:>10.2} GiB", e.param_term);
        let _ = writeln!(out, "activation_term {:>10.2} GiB", e.activation_term);
        let _ = writeln!(out, "logits_term     {:>10.2} GiB", e.logits_term);
        let _ = writeln!(out, "total           {:>10.2} GiB", e.total);
        if let (Some(g), Some(fits)) = (&self.gpu, self.fits) {
            match (self.searched, fits) {
                (Some(true), true) => {
                    let _ = writeln!(
                        out,
                        "min_gpus on {} ({} GiB): {}",
                        g.name, g.capacity_gib, s.gpus
                    );
                }
                (Some(true), false) => {
                    let _ = writeln!(
                        out,
                        "min_gpus on {} ({} GiB): infeasible up to n={}",
                        g.name, g.capacity_gib, s.gpus
                    );
                }
                _ => {
                    let verdict = if fits { "fits" } else { "does not fit" };
                    let _ = writeln!(out, "{} ({} GiB): {verdict}", g.name, g.capacity_gib);
                }
            }
        }
        out
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Text or JSON output of the `estimate` subcommand.
pub fn run_estimate(args: &EstimateArgs) -> Result<String> {
    if args.table {
        let explicit = [args.params, args.gpus, args.layers, args.hidden, args.vocab];
        if explicit.iter().any(Option::is_some) || args.preset.is_some() {
            return Err(Error::Usage(
                "--table covers every preset; only -b, -s, --gpu and --n-max apply".into(),
            ));
        }
        let defaults = TableAssumptions::default();
        let assumptions = TableAssumptions {
            batch: args.batch.unwrap_or(defaults.batch),
            seq_len: args.seq_len.unwrap_or(defaults.seq_len),
            n_max: args.n_max,
        };
        let gpus = if args.gpu.is_empty() {
            vec![GpuProfile::a100(), GpuProfile::a6000()]
        } else {
            args.gpu
                .iter()
                .map(|g| parse_gpu(g))
                .collect::<Result<_>>()?
        };
        let table = report_table(&PRESETS, &gpus, assumptions);
        return if args.json {
            to_json(&table)
        } else {
            Ok(table.render())
        };
    }
    let report = estimate_report(args)?;
    if args.json {
        to_json(&report)
    } else {
        Ok(report.render())
    }
}
