//! `qqbf`: batch front end for the Bernoulli-factory simulator.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qqbf_core::blocks::{addition_unitary, inversion, product_unitary, run_block, BlockKind, BranchLabel};
use qqbf_core::fock::{matrix_from_rows, unitarity_deviation, ComplexEntry, UnitaryMatrix, TOL_UNITARY};
use qqbf_core::mesh::{compose, decompose, preset, run_preset, MeshProgram, PresetName};
use qqbf_core::noise::{preset_branch_fidelity, simulate_block_partial, OverlapSpec};
use qqbf_core::pipeline::{
    characterize, sweep_critical, write_sweep_csv, Accidentals, CharacterizeConfig, Grid, Operation, DEFAULT_BINS,
    DEFAULT_REP_RATE, DEFAULT_SAMPLES,
};
use qqbf_core::qubit::{fidelity_pure, FieldResult, RiemannPoint};

#[derive(Parser, Debug)]
#[command(name = "qqbf", version, about = "Quantum-to-quantum Bernoulli factory simulator")]
struct Cli {
    /// JSON object whose keys override the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single building block on two input qubits.
    RunBlock(RunBlockArgs),
    /// Monte-Carlo fidelity characterization over Haar-random inputs.
    Characterize(CharacterizeArgs),
    /// Decompose a 6x6 unitary (or a preset) into a mesh program.
    Compile(CompileArgs),
    /// Check a mesh program (or a preset round trip) against its unitary.
    Verify(VerifyArgs),
    /// Success-probability map around a block's critical point, as CSV.
    Sweep(SweepArgs),
    /// Branch fidelities of the concatenated presets with distinguishable photons.
    NoiseTable(NoiseTableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BlockChoice {
    Product,
    Addition,
    Inversion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Json,
    Text,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunBlockArgs {
    /// Block to run.
    #[arg(long, value_enum)]
    kind: Option<BlockChoice>,
    /// First input qubit, `a+bi` or `inf`.
    #[arg(long, allow_hyphen_values = true)]
    z1: Option<String>,
    /// Second input qubit (unused by inversion).
    #[arg(long, allow_hyphen_values = true)]
    z2: Option<String>,
    /// Free phases phi1,phi2,phi5,phi6 in radians.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    phases: Option<Vec<f64>>,
    /// Two-photon HOM visibility in [0,1]; reports mixed output states.
    #[arg(long)]
    visibility: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CharacterizeArgs {
    /// `inversion`, `product`, `addition` or `preset:<name>`.
    #[arg(long)]
    operation: Option<String>,
    /// RNG seed (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Haar-random input samples.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Source pulses per sample; omit for exact probabilities.
    #[arg(long)]
    shots: Option<u64>,
    /// JSON overlap specification (`gram`, `c_same_pair`, `c_cross_pair`).
    #[arg(long)]
    overlap_file: Option<PathBuf>,
    /// Overlap of photons 1 and 2 (Gram entry).
    #[arg(long)]
    c_same: Option<f64>,
    /// Overlap of every other photon pair (Gram entry).
    #[arg(long)]
    c_cross: Option<f64>,
    /// Uncorrelated background rate per detector (Hz); enables accidentals.
    #[arg(long)]
    background_rate: Option<f64>,
    /// Source repetition rate (Hz).
    #[arg(long, default_value_t = DEFAULT_REP_RATE)]
    rep_rate: f64,
    /// Histogram bins.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Add bootstrap error bars to finite-shot estimates.
    #[arg(long)]
    bootstrap: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompileArgs {
    /// JSON file holding a 6x6 matrix: rows of numbers or `[re, im]` pairs,
    /// optionally wrapped as `{"matrix": rows}`.
    #[arg(long, conflicts_with = "preset")]
    unitary: Option<PathBuf>,
    /// Compile a preset's unitary instead.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyArgs {
    /// Mesh program JSON; when absent with `--preset`, the preset is
    /// decomposed and recomposed.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Reference unitary JSON.
    #[arg(long, conflicts_with = "preset")]
    unitary: Option<PathBuf>,
    /// Reference preset.
    #[arg(long)]
    preset: Option<String>,
    /// Largest accepted Frobenius residual.
    #[arg(long, default_value_t = TOL_UNITARY)]
    tolerance: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepArgs {
    /// `product` or `addition`.
    #[arg(long, value_enum)]
    op: Option<BlockChoice>,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    hi: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseTableArgs {
    /// Overlap of photons 1 and 2 (Gram entry).
    #[arg(long, default_value_t = 1.0)]
    c_same: f64,
    /// Overlap of every other photon pair (Gram entry).
    #[arg(long, default_value_t = 0.9)]
    c_cross: f64,
    /// JSON overlap specification; replaces the two scalars.
    #[arg(long)]
    overlap_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) => m,
        }
    }
}

impl From<qqbf_core::Error> for Failure {
    fn from(e: qqbf_core::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref().map(read_json).transpose()?;
    let config = config.as_ref();
    match cli.command {
        Command::RunBlock(a) => cmd_run_block(overlay(a, config, "run-block")?),
        Command::Characterize(a) => cmd_characterize(overlay(a, config, "characterize")?),
        Command::Compile(a) => cmd_compile(overlay(a, config, "compile")?),
        Command::Verify(a) => cmd_verify(overlay(a, config, "verify")?),
        Command::Sweep(a) => cmd_sweep(overlay(a, config, "sweep")?),
        Command::NoiseTable(a) => cmd_noise_table(overlay(a, config, "noise-table")?),
    }
}

/// Replaces flag values with the config file's keys. A `command` key, if
/// present, must name the subcommand being run.
fn overlay<T: Serialize + DeserializeOwned>(args: T, config: Option<&Value>, command: &str) -> CliResult<T> {
    let Some(config) = config else { return Ok(args) };
    let cfg = config
        .as_object()
        .ok_or_else(|| usage("config file must hold a JSON object"))?;
    let mut merged = serde_json::to_value(&args).map_err(|e| usage(e.to_string()))?;
    let fields = merged.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in cfg {
        if key == "command" {
            if value.as_str() != Some(command) {
                return Err(usage(format!("config is for command {value}, not `{command}`")));
            }
            continue;
        }
        if !fields.contains_key(key) {
            return Err(usage(format!("unknown config field `{key}` for `{command}`")));
        }
        fields.insert(key.clone(), value.clone());
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("invalid config: {e}")))
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{} is not valid JSON: {e}", path.display())))
}

fn read_as<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_value(read_json(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| usage(format!("cannot write to stdout: {e}"))),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn parse_point(s: &str, flag: &str) -> CliResult<RiemannPoint> {
    s.parse().map_err(|e: qqbf_core::Error| usage(format!("--{flag}: {e}")))
}

fn parse_preset(s: &str) -> CliResult<PresetName> {
    s.parse().map_err(|e: qqbf_core::Error| usage(e.to_string()))
}

#[derive(Serialize)]
struct BranchRow {
    branch: String,
    target: FieldResult,
    output: FieldResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<qqbf_core::qubit::QubitDensity>,
    probability: f64,
    fidelity: Option<f64>,
}

fn cmd_run_block(args: RunBlockArgs) -> CliResult<()> {
    let kind = required(args.kind, "kind")?;
    let z1 = parse_point(&required(args.z1.clone(), "z1")?, "z1")?;
    let rows = if kind == BlockChoice::Inversion {
        if args.z2.is_some() || args.visibility.is_some() || args.phases.is_some() {
            return Err(usage("inversion takes only --z1"));
        }
        let out = inversion(&z1);
        vec![BranchRow {
            branch: "deterministic".into(),
            target: FieldResult::Point(out),
            output: FieldResult::Point(out),
            rho: None,
            probability: 1.0,
            fidelity: Some(1.0),
        }]
    } else {
        let z2 = parse_point(&required(args.z2.clone(), "z2")?, "z2")?;
        let phases: [f64; 4] = match &args.phases {
            None => [0.0; 4],
            Some(v) => v
                .as_slice()
                .try_into()
                .map_err(|_| usage("--phases takes exactly four values"))?,
        };
        let block = match kind {
            BlockChoice::Product => product_unitary(phases),
            _ => addition_unitary(phases),
        };
        match args.visibility {
            None => run_block(&block, &z1, &z2)?
                .into_iter()
                .map(|o| {
                    let target = o.branch.apply(&z1, &z2);
                    let fidelity = match (target.point(), o.output.point()) {
                        (Some(t), Some(out)) => Some(fidelity_pure(&out, &t)),
                        _ => None,
                    };
                    BranchRow {
                        branch: o.branch.to_string(),
                        target,
                        output: o.output,
                        rho: None,
                        probability: o.probability,
                        fidelity,
                    }
                })
                .collect(),
            Some(c) => {
                let gram = OverlapSpec::two_photon(c)?.gram_matrix(2)?;
                simulate_block_partial(&block, &z1, &z2, &gram)?
                    .into_iter()
                    .map(|o| {
                        let label = o.branch[0];
                        let target = label.apply(&z1, &z2);
                        let fidelity = target.point().and_then(|t| o.fidelity(&t));
                        BranchRow {
                            branch: label.to_string(),
                            target,
                            output: FieldResult::Indeterminate,
                            rho: o.rho,
                            probability: o.probability,
                            fidelity,
                        }
                    })
                    .collect()
            }
        }
    };
    let text = match args.format {
        Format::Json => to_json(&json!({ "config": &args, "branches": rows })),
        Format::Text => branch_table(&rows, args.visibility.is_some()),
    };
    emit(&text, args.output.as_deref())
}

fn branch_table(rows: &[BranchRow], mixed: bool) -> String {
    let mut s = format!(
        "{:<14} {:<28} {:>12} {:>10}\n",
        "branch", "output", "probability", "fidelity"
    );
    for r in rows {
        let out = if mixed {
            match &r.rho {
                Some(_) => format!("mixed, target {}", r.target),
                None => "indeterminate".into(),
            }
        } else {
            r.output.to_string()
        };
        let fid = r.fidelity.map_or("-".into(), |f| format!("{f:.6}"));
        s.push_str(&format!(
            "{:<14} {:<28} {:>12.6} {:>10}\n",
            r.branch, out, r.probability, fid
        ));
    }
    s
}

fn overlap_spec(file: Option<&Path>, c_same: Option<f64>, c_cross: Option<f64>) -> CliResult<OverlapSpec> {
    match file {
        Some(p) => {
            if c_same.is_some() || c_cross.is_some() {
                return Err(usage("give either an overlap file or --c-same/--c-cross"));
            }
            read_as(p)
        }
        None => Ok(OverlapSpec::pairs(c_same.unwrap_or(1.0), c_cross.unwrap_or(1.0))),
    }
}

fn cmd_characterize(args: CharacterizeArgs) -> CliResult<()> {
    let operation: Operation = required(args.operation.as_deref(), "operation")?
        .parse()
        .map_err(|e: qqbf_core::Error| usage(e.to_string()))?;
    let seed = required(args.seed, "seed")?;
    let accidentals = args.background_rate.map(|background_rate| Accidentals {
        rep_rate: args.rep_rate,
        background_rate,
    });
    if accidentals.is_some() && args.shots.is_none() {
        return Err(usage("--background-rate needs --shots"));
    }
    let cfg = CharacterizeConfig {
        operation,
        samples: args.samples,
        shots: args.shots,
        overlap: overlap_spec(args.overlap_file.as_deref(), args.c_same, args.c_cross)?,
        accidentals,
        seed,
        bins: args.bins,
        bootstrap: args.bootstrap,
    };
    let report = characterize(&cfg)?;
    for b in &report.branches {
        eprintln!("{}", serde_json::to_string(b).expect("summary serializes"));
    }
    emit(&to_json(&report), args.output.as_deref())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Rows(Vec<Vec<ComplexEntry>>),
    Wrapped { matrix: Vec<Vec<ComplexEntry>> },
}

fn read_unitary(path: &Path) -> CliResult<UnitaryMatrix> {
    let rows = match read_as::<MatrixFile>(path)? {
        MatrixFile::Rows(r) | MatrixFile::Wrapped { matrix: r } => r,
    };
    Ok(UnitaryMatrix::new(matrix_from_rows(&rows)?)?)
}

fn reference_unitary(unitary: Option<&Path>, preset_name: Option<&str>) -> CliResult<UnitaryMatrix> {
    match (unitary, preset_name) {
        (Some(p), None) => read_unitary(p),
        (None, Some(name)) => Ok(preset(parse_preset(name)?).unitary()),
        _ => Err(usage("give exactly one of --unitary or --preset")),
    }
}

fn cmd_compile(args: CompileArgs) -> CliResult<()> {
    let u = reference_unitary(args.unitary.as_deref(), args.preset.as_deref())?;
    let d = decompose(&u)?;
    emit(
        &to_json(&json!({ "config": &args, "program": d.program, "residual": d.residual })),
        args.output.as_deref(),
    )
}

fn frobenius_distance(a: &UnitaryMatrix, b: &UnitaryMatrix) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Runs a preset on every combination of the inputs 0, 1, -1, i and inf with a
/// determinate target and returns the largest infidelity.
fn function_check(name: PresetName) -> CliResult<Value> {
    let p = preset(name);
    let grid = ["0", "1", "-1", "1i", "inf"].map(|s| s.parse::<RiemannPoint>().expect("literal"));
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let n = p.photons();
    for idx in 0..grid.len().pow(n as u32) {
        let zs: Vec<RiemannPoint> = (0..n)
            .map(|k| grid[idx / grid.len().pow(k as u32) % grid.len()])
            .collect();
        for o in run_preset(&p, &zs)? {
            let target = p.expected(&o.branch.labels, &zs)?;
            if let (Some(t), Some(out)) = (target.point(), o.output.point()) {
                worst = worst.max(1.0 - fidelity_pure(&out, &t));
                checked += 1;
            }
        }
    }
    Ok(json!({ "cases": checked, "max_infidelity": worst }))
}

fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(usage("--tolerance must be non-negative"));
    }
    let reference = reference_unitary(args.unitary.as_deref(), args.preset.as_deref())?;
    let program = match &args.program {
        Some(p) => read_as::<MeshProgram>(p)?,
        None if args.preset.is_some() => decompose(&reference)?.program,
        None => return Err(usage("--unitary needs --program")),
    };
    let composed = compose(&program)?;
    let residual = frobenius_distance(&composed, &reference);
    let mut report = json!({
        "config": &args,
        "residual": residual,
        "unitarity_deviation": unitarity_deviation(composed.matrix()),
        "pass": residual <= args.tolerance,
    });
    if let Some(name) = &args.preset {
        report["function_check"] = function_check(parse_preset(name)?)?;
    }
    emit(&to_json(&report), args.output.as_deref())?;
    if residual <= args.tolerance {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "residual {residual:.3e} exceeds tolerance {:.3e}",
            args.tolerance
        )))
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let op = match required(args.op, "op")? {
        BlockChoice::Product => BlockKind::Product,
        BlockChoice::Addition => BlockKind::Addition,
        BlockChoice::Inversion => return Err(usage("sweep supports product and addition")),
    };
    let points = sweep_critical(
        op,
        &Grid {
            lo: args.lo,
            hi: args.hi,
            points: args.points,
        },
    )?;
    let mut buf = Vec::new();
    write_sweep_csv(&points, &mut buf).expect("writing to memory");
    emit(&String::from_utf8(buf).expect("CSV is UTF-8"), args.output.as_deref())
}

/// Preset, branch and input triples of one table.
type NoiseTable = (PresetName, [BranchLabel; 2], [[&'static str; 3]; 5]);

fn noise_table_inputs() -> [NoiseTable; 2] {
    use BranchLabel::{Plus, Sum};
    [
        (
            PresetName::ProductThenAddition,
            [Plus, Sum],
            [
                ["0", "0", "0"],
                ["inf", "inf", "0"],
                ["1", "1", "0"],
                ["0", "0", "1"],
                ["1", "1", "1"],
            ],
        ),
        (
            PresetName::AdditionThenProduct,
            [Sum, Plus],
            [
                ["0", "0", "1"],
                ["inf", "0", "1"],
                ["1", "0", "1"],
                ["0", "1", "1"],
                ["1", "1", "1"],
            ],
        ),
    ]
}

fn cmd_noise_table(args: NoiseTableArgs) -> CliResult<()> {
    let spec = match &args.overlap_file {
        Some(p) => read_as(p)?,
        None => OverlapSpec::pairs(args.c_same, args.c_cross),
    };
    let mut tables = Vec::new();
    let mut text = String::new();
    for (name, labels, inputs) in noise_table_inputs() {
        let p = preset(name);
        let branch = labels.map(|l| l.symbol()).join(",");
        text.push_str(&format!("{name} branch {branch}\n"));
        text.push_str(&format!(
            "{:<16} {:<12} {:>10} {:>12}\n",
            "inputs", "target", "fidelity", "probability"
        ));
        let mut rows = Vec::new();
        for zs in inputs {
            let zs: Vec<RiemannPoint> = zs.iter().map(|s| s.parse().expect("literal")).collect();
            let row = preset_branch_fidelity(&p, &labels, &zs, &spec)?;
            let shown: Vec<String> = zs.iter().map(|z| z.to_string()).collect();
            let fid = row.fidelity.map_or("-".into(), |f| format!("{f:.4}"));
            text.push_str(&format!(
                "{:<16} {:<12} {:>10} {:>12.6}\n",
                format!("({})", shown.join(", ")),
                row.target.to_string(),
                fid,
                row.probability
            ));
            rows.push(row);
        }
        text.push('\n');
        tables.push(json!({ "preset": name, "branch": branch, "rows": rows }));
    }
    let out = match args.format {
        Format::Json => to_json(&json!({ "config": &args, "overlap": spec, "tables": tables })),
        Format::Text => text,
    };
    emit(&out, args.output.as_deref())
}
