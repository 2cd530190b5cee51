//! Command implementations behind the `airtime` binary.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: 0 on success, 2 for usage and parse errors, 3 for scenarios or
//! rates that parse but are not valid, 1 for I/O failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use airtime::analytic::{self, BaselineTable, ComparisonReport};
use airtime::calibrate::{Calibration, DEFAULT_CALIBRATION_US};
use airtime::metrics::{self, WindowMetrics};
use airtime::node::{DataRate, NodeSpec};
use airtime::scenario::{Scenario, SchedulerKind};
use airtime::sim::{self, SimOutput};
use airtime::tbr::SNAPSHOT_HEADER;
use airtime::trace;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "airtime",
    version,
    about = "Airtime fairness simulator and analysis tools"
)]
pub struct Cli {
    /// Override the scenario's RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Write CSV files only.
    Csv,
    /// Print a human-readable summary only.
    Summary,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Summary
    }

    fn summary(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file.
    Simulate(SimulateArgs),
    /// Measure baseline throughputs by simulation.
    Calibrate(CalibrateArgs),
    /// Compare throughput-based and time-based allocations in closed form.
    Analytic(AnalyticArgs),
    /// Analyze a packet trace.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Override the scenario's scheduler.
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
    /// Width of the tumbling windows in windows.csv.
    #[arg(long, default_value_t = 1_000_000)]
    pub window_us: u64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Comma-separated rates in Mbps.
    #[arg(long, value_delimiter = ',', default_values_t = ["1".to_string(), "2".to_string(), "5.5".to_string(), "11".to_string()])]
    pub rates: Vec<String>,
    #[arg(long, default_value_t = 1500)]
    pub packet_bytes: u32,
    /// Simulated time per rate.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_US)]
    pub duration_us: u64,
    /// Output file name, relative to --out.
    #[arg(long, default_value = "baseline.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyticArgs {
    /// Baseline table CSV. Defaults to the built-in 802.11b reference table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Comma-separated node rates in Mbps.
    #[arg(long, value_delimiter = ',', required = true)]
    pub nodes: Vec<String>,
    #[arg(long, default_value_t = 1500)]
    pub packet_bytes: u32,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub trace: PathBuf,
    /// Write rate_distribution.csv.
    #[arg(long)]
    pub rate_dist: bool,
    /// Write busy_intervals.csv.
    #[arg(long)]
    pub busy: bool,
    /// Write heaviest_user.csv (over busy intervals).
    #[arg(long)]
    pub heaviest: bool,
    #[arg(long, default_value_t = trace::DEFAULT_BUSY_THRESHOLD_MBPS)]
    pub threshold: f64,
    #[arg(long, default_value_t = trace::DEFAULT_BUSY_WINDOW_US)]
    pub window_us: u64,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::new(EXIT_IO, format!("{}: {err}", path.display()))
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a, stdout),
        Command::Calibrate(a) => calibrate(cli, a, stdout),
        Command::Analytic(a) => analytic_cmd(cli, a, stdout),
        Command::Trace(a) => trace_cmd(cli, a, stdout),
    }
}

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> Result<(), Box<dyn std::error::Error>>,
) -> CmdResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(dir, e))?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| Failure::io(path, e))?;
        w.flush().map_err(|e| Failure::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn say(stdout: &mut dyn Write, text: &str) -> CmdResult {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")))
}

fn simulate(cli: &Cli, args: &SimulateArgs, stdout: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(&args.scenario).map_err(|e| Failure::io(&args.scenario, e))?;
    let mut scenario = Scenario::parse(&text)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", args.scenario.display())))?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(kind) = args.scheduler {
        scenario.scheduler = kind;
    }
    if args.window_us == 0 {
        return Err(Failure::new(EXIT_USAGE, "--window-us must be positive"));
    }
    let out = sim::run(&scenario)
        .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", args.scenario.display())))?;
    let whole =
        metrics::window_metrics(&out.log, 0, out.end_time_us.max(1)).expect("nonempty horizon");

    if cli.format.csv() {
        ensure_out_dir(&cli.out)?;
        write_atomic(&cli.out.join("events.csv"), |w| Ok(out.log.write_csv(w)?))?;
        let windows = tumbling_windows(&out, args.window_us);
        write_atomic(&cli.out.join("windows.csv"), |w| {
            Ok(metrics::write_window_csv(&windows, w)?)
        })?;
        if !out.snapshots.is_empty() {
            write_atomic(&cli.out.join("snapshots.csv"), |w| write_snapshots(&out, w))?;
        }
    }
    if cli.format.summary() {
        say(stdout, &simulate_summary(&scenario, &out, &whole))?;
    }
    Ok(())
}

fn tumbling_windows(out: &SimOutput, width: u64) -> Vec<WindowMetrics> {
    let end = out.end_time_us.max(1);
    (0..end.div_ceil(width))
        .map(|k| {
            let t1 = k * width;
            metrics::window_metrics(&out.log, t1, (t1 + width).min(end)).expect("t1 < t2")
        })
        .collect()
}

fn write_snapshots(out: &SimOutput, w: &mut dyn Write) -> Result<(), Box<dyn std::error::Error>> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SNAPSHOT_HEADER)?;
    for s in &out.snapshots {
        csv.write_record([
            s.time_us.to_string(),
            s.node_id.to_string(),
            format!("{:.6}", s.rate_share),
            format!("{:.1}", s.tokens_us),
            format!("{:.0}", s.actual_us),
            s.queue_len.to_string(),
            s.drops.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn simulate_summary(scenario: &Scenario, out: &SimOutput, m: &WindowMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scheduler {}  seed {}  horizon {} us  frames {}",
        scenario.scheduler,
        scenario.seed,
        out.end_time_us,
        out.log.records.len()
    );
    let _ = writeln!(
        s,
        "{:<12} {:>6} {:>10} {:>9} {:>9} {:>14}",
        "node", "rate", "thru_mbps", "alpha_t", "alpha_r", "completion_us"
    );
    for (spec, n) in scenario.nodes.iter().zip(&m.nodes) {
        let done = out
            .stats(&n.id)
            .and_then(|st| st.completion_time_us)
            .map_or("-".to_string(), |t| t.to_string());
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>10.4} {:>9.4} {:>9.4} {:>14}",
            n.id.as_str(),
            spec.rate.to_string(),
            n.throughput_mbps,
            n.alpha_time,
            n.alpha_throughput,
            done
        );
    }
    let busy: f64 = m.alpha_time().iter().sum();
    let _ = writeln!(
        s,
        "total {:.4} Mbps  channel busy {:.4}",
        m.aggr_throughput_mbps, busy
    );
    if let Ok(report) = metrics::task_report(out) {
        let _ = writeln!(
            s,
            "avg task time {:.0} us  final task time {} us",
            report.avg_task_time_us, report.final_task_time_us
        );
    }
    s
}

fn parse_rates(raw: &[String]) -> Result<Vec<DataRate>, Failure> {
    raw.iter()
        .map(|r| {
            let mbps: f64 = r
                .trim()
                .parse()
                .map_err(|_| Failure::new(EXIT_USAGE, format!("`{r}` is not a rate in Mbps")))?;
            DataRate::from_mbps_80211b(mbps).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))
        })
        .collect()
}

fn calibrate(cli: &Cli, args: &CalibrateArgs, stdout: &mut dyn Write) -> CmdResult {
    let rates = parse_rates(&args.rates)?;
    if rates.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "no rates given"));
    }
    if args.packet_bytes == 0 || args.duration_us == 0 {
        return Err(Failure::new(
            EXIT_INVALID,
            "packet size and duration must be positive",
        ));
    }
    let cal = Calibration {
        duration_us: args.duration_us,
        seed: cli.seed.unwrap_or(0),
        ..Calibration::default()
    };
    let table = cal
        .table(&rates, args.packet_bytes)
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    if cli.format.csv() {
        ensure_out_dir(&cli.out)?;
        let path = cli.out.join(&args.output);
        write_atomic(&path, |w| Ok(table.write_csv(w)?))?;
    }
    if cli.format.summary() {
        let mut s = String::from("rate_mbps  packet_bytes  gamma_mbps\n");
        for (rate, bytes, g) in table.iter() {
            let _ = writeln!(s, "{:>9}  {:>12}  {:>10.4}", rate.to_string(), bytes, g);
        }
        say(stdout, &s)?;
    }
    Ok(())
}

fn load_table(path: Option<&Path>) -> Result<BaselineTable, Failure> {
    match path {
        None => Ok(BaselineTable::reference_80211b()),
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| Failure::io(p, e))?;
            BaselineTable::read_csv(file, p.display().to_string())
                .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", p.display())))
        }
    }
}

fn analytic_cmd(cli: &Cli, args: &AnalyticArgs, stdout: &mut dyn Write) -> CmdResult {
    let table = load_table(args.table.as_deref())?;
    let nodes: Vec<NodeSpec> =
        args.nodes
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mbps: f64 = r.trim().parse().map_err(|_| {
                    Failure::new(EXIT_USAGE, format!("`{r}` is not a rate in Mbps"))
                })?;
                let rate = DataRate::from_mbps(mbps)
                    .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
                Ok(NodeSpec::new(
                    format!("n{}", i + 1),
                    rate,
                    args.packet_bytes,
                ))
            })
            .collect::<Result<_, Failure>>()?;
    let report = analytic::compare_regimes(&nodes, &table)
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let csv_text = comparison_csv(&nodes, &report);
    if cli.format.csv() {
        ensure_out_dir(&cli.out)?;
        write_atomic(&cli.out.join("analytic.csv"), |w| {
            Ok(w.write_all(csv_text.as_bytes())?)
        })?;
    }
    if cli.format.summary() {
        let mut s = csv_text;
        let _ = writeln!(
            s,
            "RF total {:.4} Mbps  TF total {:.4} Mbps  improvement {:.1}%",
            report.rf.total_mbps,
            report.tf.total_mbps,
            report.improvement * 100.0
        );
        say(stdout, &s)?;
    }
    Ok(())
}

pub fn comparison_csv(nodes: &[NodeSpec], report: &ComparisonReport) -> String {
    let mut s = String::from("regime,node_id,rate_mbps,share,throughput_mbps\n");
    for alloc in [&report.rf, &report.tf] {
        for (spec, n) in nodes.iter().zip(&alloc.nodes) {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4}",
                alloc.regime, n.id, spec.rate, n.share, n.throughput_mbps
            );
        }
        let _ = writeln!(s, "{},total,,1.0000,{:.4}", alloc.regime, alloc.total_mbps);
    }
    s
}

fn trace_cmd(cli: &Cli, args: &TraceArgs, stdout: &mut dyn Write) -> CmdResult {
    if args.window_us == 0 || args.threshold.is_nan() || args.threshold < 0.0 {
        return Err(Failure::new(
            EXIT_USAGE,
            "window must be positive and threshold nonnegative",
        ));
    }
    let file = fs::File::open(&args.trace).map_err(|e| Failure::io(&args.trace, e))?;
    let records = trace::read_trace(file)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", args.trace.display())))?;
    let (want_dist, want_busy, want_heavy) = if !(args.rate_dist || args.busy || args.heaviest) {
        (true, true, true)
    } else {
        (args.rate_dist, args.busy, args.heaviest)
    };
    let dist = if want_dist {
        match trace::rate_distribution(&records) {
            Ok(d) => Some(d),
            Err(trace::TraceError::EmptyTrace) if !args.rate_dist => None,
            Err(e) => return Err(Failure::new(EXIT_INVALID, e.to_string())),
        }
    } else {
        None
    };
    let busy = trace::busy_intervals(&records, args.threshold, args.window_us);
    let heavy = trace::heaviest_user_fraction(&records, &busy);
    let mut summary = format!("{} records\n", records.len());
    if cli.format.csv() {
        ensure_out_dir(&cli.out)?;
    }
    if let Some(d) = &dist {
        if cli.format.csv() {
            write_atomic(&cli.out.join("rate_distribution.csv"), |w| {
                Ok(trace::write_rate_distribution(d, w)?)
            })?;
        }
        for (rate, f) in d {
            let _ = writeln!(summary, "rate {rate} Mbps: {:.4} of bytes", f);
        }
    }
    if want_busy {
        if cli.format.csv() {
            write_atomic(&cli.out.join("busy_intervals.csv"), |w| {
                Ok(trace::write_intervals(&busy, w)?)
            })?;
        }
        let _ = writeln!(summary, "{} busy intervals", busy.len());
    }
    if want_heavy {
        if cli.format.csv() {
            write_atomic(&cli.out.join("heaviest_user.csv"), |w| {
                Ok(trace::write_heaviest(&heavy, w)?)
            })?;
        }
        if !heavy.is_empty() {
            let mean = heavy.iter().map(|h| h.fraction).sum::<f64>() / heavy.len() as f64;
            let _ = writeln!(summary, "mean heaviest-user fraction {:.4}", mean);
        }
    }
    if cli.format.summary() {
        say(stdout, &summary)?;
    }
    Ok(())
}
