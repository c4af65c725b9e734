use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rrsim::calibration::{
    characterize, fit_profile_onto, min_stress_for_separation, read_records_csv, write_records_csv, CalibrationProfile,
};
use rrsim::codec::{decode, encode, generate_key, DecodeConfig, DecodeMethod, HidingKey, Payload};
use rrsim::device::{load_state, save_state, ChipGeometry, ChipModel};
use rrsim::harness::{
    attack_wrong_base, attack_wrong_key, encode_time, endurance_cost, honest_report, sweep_initial_stress,
    sweep_post_hiding, sweep_replica_size, write_csv, Experiment, OffsetMode, SweepRow, UsagePattern,
};
use rrsim::{Error, Op};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_AMBIGUOUS: u8 = 4;
const EXIT_WEAR_OUT: u8 = 5;

#[derive(Parser)]
#[command(name = "rrsim", version, about = "Simulate ReRAM wear timing and hide data in it")]
struct Cli {
    /// Calibration profile (JSON). Defaults to the built-in profile.
    #[arg(long, global = true, env = "RRSIM_PROFILE")]
    profile: Option<PathBuf>,

    /// Ambient temperature in Celsius applied to the simulated chip.
    #[arg(long, global = true, allow_hyphen_values = true)]
    temperature: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stress a random address sample and record latency envelopes, then fit a profile.
    Characterize(CharacterizeArgs),
    /// Refit a profile from a characterization CSV.
    Fit(FitArgs),
    /// Hide a payload in a simulated chip.
    Hide(HideArgs),
    /// Recover a payload using a key file.
    Retrieve(RetrieveArgs),
    /// Decode with a perturbed key on freshly hidden chips.
    Attack(AttackArgs),
    /// Run an evaluation sweep and write a CSV report.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CharacterizeArgs {
    /// Number of addresses sampled for characterization.
    #[arg(long, default_value_t = 2048)]
    addresses: usize,
    #[arg(long, default_value_t = 1_000_000)]
    max_pairs: u64,
    #[arg(long, default_value_t = 50_000)]
    interval: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    profile_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size of the simulated chip.
    #[arg(long, default_value_t = 1 << 17)]
    chip_addresses: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    profile_out: PathBuf,
}

#[derive(Args)]
struct HideArgs {
    /// Payload as 0x-prefixed hex or 0b-prefixed binary.
    #[arg(long)]
    payload: String,
    #[arg(long)]
    key_out: PathBuf,
    #[arg(long)]
    state_out: PathBuf,
    /// Continue from an existing chip state instead of a fresh chip.
    #[arg(long)]
    state_in: Option<PathBuf>,
    #[arg(long, default_value_t = 15_000)]
    n_stress: u64,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    #[arg(long, default_value_t = 256)]
    replica_size: u64,
    #[arg(long, default_value_t = 65_536)]
    base: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size of a fresh simulated chip.
    #[arg(long, default_value_t = 1 << 17)]
    addresses: u64,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    state: PathBuf,
    /// kmeans, threshold:SECONDS, reference or reference:START-END
    #[arg(long, default_value = "kmeans")]
    method: String,
    #[arg(long, default_value = "set")]
    signal: Op,
    /// Persist the chip after the measurement writes.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackMode {
    Honest,
    Case1,
    Case2,
    Case3,
    WrongKey,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    mode: AttackMode,
    #[arg(long, default_value = "0xECE3038B")]
    payload: String,
    #[arg(long, default_value_t = 15_000)]
    n_stress: u64,
    #[arg(long, default_value_t = 256)]
    replica_size: u64,
    /// Replica rows; the wrong-key attack needs more than one.
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    #[arg(long, default_value = "set")]
    signal: Op,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    PostHiding,
    ReplicaSize,
    InitialStress,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Worst,
    Realistic,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    kind: SweepKind,
    /// start:step:end, inclusive. Post-stress pairs, replica sizes or initial stress.
    #[arg(long)]
    grid: String,
    /// Hiding stress values; post-hiding sweeps accept a comma-separated list.
    #[arg(long, default_value = "15000")]
    n_stress: String,
    #[arg(long, default_value = "set")]
    op: Op,
    #[arg(long, default_value_t = 8)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PatternArg::Worst)]
    pattern: PatternArg,
    #[arg(long, default_value = "0xECE3038B")]
    payload: String,
    #[arg(long, default_value_t = 256)]
    replica_size: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Key file contents: the hiding key plus the seed that produced it.
#[derive(Serialize, Deserialize)]
struct KeyFile {
    #[serde(flatten)]
    key: HidingKey,
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::OutOfBounds { .. } | Error::NotSeparable { .. } => EXIT_USAGE,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => EXIT_FORMAT,
            Error::WornOut { .. } | Error::EncodeWearOut { .. } => EXIT_WEAR_OUT,
            _ => EXIT_OTHER,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Like `println!`, but a closed pipe (e.g. `| head`) is not an error.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let outcome = run(&cli);
    eprintln!("wall time: {:.3} s", started.elapsed().as_secs_f64());
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let profile = Arc::new(match &cli.profile {
        Some(p) => CalibrationProfile::load(p)?,
        None => CalibrationProfile::default(),
    });
    let ctx = Context { profile, temperature: cli.temperature };
    match &cli.command {
        Command::Characterize(a) => ctx.characterize(a),
        Command::Fit(a) => ctx.fit(a),
        Command::Hide(a) => ctx.hide(a),
        Command::Retrieve(a) => ctx.retrieve(a),
        Command::Attack(a) => ctx.attack(a),
        Command::Sweep(a) => ctx.sweep(a),
    }
}

struct Context {
    profile: Arc<CalibrationProfile>,
    temperature: Option<f64>,
}

impl Context {
    fn new_chip(&self, addresses: u64, seed: u64) -> rrsim::Result<ChipModel> {
        let mut chip = ChipModel::new(ChipGeometry::with_addresses(addresses), Arc::clone(&self.profile), seed)?;
        if let Some(t) = self.temperature {
            chip.set_temperature(t)?;
        }
        Ok(chip)
    }

    fn load_chip(&self, path: &Path) -> rrsim::Result<ChipModel> {
        let mut chip = load_state(&fs::read(path)?, Arc::clone(&self.profile))?;
        if let Some(t) = self.temperature {
            chip.set_temperature(t)?;
        }
        Ok(chip)
    }

    fn experiment(&self, payload: &str, replica_size: u64) -> rrsim::Result<Experiment> {
        Ok(Experiment {
            profile: Arc::clone(&self.profile),
            payload: Payload::from_hex(payload)?,
            replica_size,
            ..Experiment::default()
        })
    }

    fn characterize(&self, a: &CharacterizeArgs) -> CmdResult {
        if a.addresses == 0 || a.addresses as u64 > a.chip_addresses {
            return Err(Error::Config(format!("--addresses must be 1..={}", a.chip_addresses)).into());
        }
        let mut chip = self.new_chip(a.chip_addresses, a.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut sample: Vec<u64> = rand::seq::index::sample(&mut rng, a.chip_addresses as usize, a.addresses)
            .into_iter()
            .map(|i| i as u64)
            .collect();
        sample.sort_unstable();
        let run = characterize(&mut chip, &sample, a.max_pairs, a.interval)?;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &run.records, a.seed)?;
        write_file(&a.out, &buf)?;
        out!("levels: {}{}", run.records.len(), if run.truncated { " (truncated at endurance limit)" } else { "" });
        out!("simulated characterization time: {:.3} s", chip.clock());
        if let Some(path) = &a.profile_out {
            if run.records.len() < 3 {
                warn!("only {} stress level(s); skipping profile fit", run.records.len());
            } else {
                let fitted = fit_profile_onto(&run.records, &self.profile)?;
                write_file(path, fitted.to_json()?.as_bytes())?;
            }
        }
        Ok(())
    }

    fn fit(&self, a: &FitArgs) -> CmdResult {
        let records = read_records_csv(fs::File::open(&a.records).map_err(Error::from)?)?;
        let fitted = fit_profile_onto(&records, &self.profile)?;
        write_file(&a.profile_out, fitted.to_json()?.as_bytes())?;
        Ok(())
    }

    fn hide(&self, a: &HideArgs) -> CmdResult {
        let payload = Payload::from_hex(&a.payload)?;
        let mut chip = match &a.state_in {
            Some(p) => self.load_chip(p)?,
            None => self.new_chip(a.addresses, a.seed)?,
        };
        let key = generate_key(chip.geometry(), payload.len(), a.base, a.replica_size, a.replicas, a.n_stress, a.seed)?;
        let before = chip.clock();
        let report = encode(&mut chip, &key, &payload)?;
        let formula = encode_time(a.n_stress, payload.len() as u64, exact_seconds(self.profile.pair_time));
        let cost = endurance_cost(a.n_stress, self.profile.endurance_rated);
        out!("simulated encode time: {} s (pairs x bits x pair time)", ratio_text(formula));
        out!("simulated device clock: {:.3} s", chip.clock() - before);
        out!("stressed cells: {}", report.stressed_addresses);
        out!("endurance cost: {}%", ratio_text(cost * num_rational::Ratio::from_integer(100)));
        let cells = (key.cells_per_bit()).max(1) as usize;
        match min_stress_for_separation(&self.profile, cells, 200) {
            Ok(min) if a.n_stress < min => {
                warn!("stress {} is below the {min} pairs needed to separate {cells}-cell means", a.n_stress)
            }
            Ok(_) => {}
            Err(e) => warn!("{e}"),
        }
        let file = KeyFile { key, seed: a.seed };
        let json = serde_json::to_string_pretty(&file).map_err(Error::from)?;
        write_file(&a.key_out, json.as_bytes())?;
        write_file(&a.state_out, &save_state(&chip))?;
        Ok(())
    }

    fn retrieve(&self, a: &RetrieveArgs) -> CmdResult {
        let text = fs::read_to_string(&a.key).map_err(|e| Error::Format(format!("cannot read key file: {e}")))?;
        let file: KeyFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad key file: {e}")))?;
        let key = file.key;
        let mut chip = self.load_chip(&a.state)?;
        key.validate(chip.geometry()).map_err(|e| Error::Format(format!("key does not match chip: {e}")))?;
        let method = parse_method(&a.method, &key, chip.geometry())?;
        let before = chip.clock();
        let result = decode(&mut chip, &key, &DecodeConfig { method, signal: a.signal })?;
        out!("payload: {}", result.bits.to_hex());
        out!("threshold: {:.9} s", result.threshold.threshold());
        for (i, m) in result.means.iter().enumerate() {
            out!("bit {i:>3}: mean {:.9} s margin {:+.9} s", m, m - result.threshold.threshold());
        }
        out!("simulated retrieve time: {:.6} s", chip.clock() - before);
        if let Some(p) = &a.state_out {
            write_file(p, &save_state(&chip))?;
        }
        if result.ambiguous {
            warn!("ambiguous decode: clusters are not clearly separated (smallest margin {:.3e} s)", result.confidence);
            return Err(Failure { code: EXIT_AMBIGUOUS, message: "decode is ambiguous".into() });
        }
        Ok(())
    }

    fn attack(&self, a: &AttackArgs) -> CmdResult {
        let exp = self.experiment(&a.payload, a.replica_size)?;
        let config = DecodeConfig { method: exp.method.clone(), signal: a.signal };
        let label = match a.mode {
            AttackMode::Honest => "honest",
            AttackMode::Case1 => "case1",
            AttackMode::Case2 => "case2",
            AttackMode::Case3 => "case3",
            AttackMode::WrongKey => "wrong_key",
        };
        if matches!(a.mode, AttackMode::WrongKey) && a.replicas < 2 {
            return Err(Error::Config("the wrong-key attack needs a replicated key (--replicas > 1)".into()).into());
        }
        let mut rows = Vec::new();
        for t in 0..a.trials {
            let seed = a.seed + t;
            let mut chip = exp.chip(seed)?;
            let key = generate_key(
                &exp.geometry,
                exp.payload.len(),
                exp.base_address,
                a.replica_size,
                a.replicas,
                a.n_stress,
                seed,
            )?;
            encode(&mut chip, &key, &exp.payload)?;
            if let Some(c) = self.temperature {
                chip.set_temperature(c)?;
            }
            let report = match a.mode {
                AttackMode::Honest => honest_report(&mut chip, &key, &exp.payload, &config)?,
                AttackMode::Case1 => attack_wrong_base(&mut chip, &key, &exp.payload, OffsetMode::Case1, &config)?,
                AttackMode::Case2 => attack_wrong_base(&mut chip, &key, &exp.payload, OffsetMode::Case2, &config)?,
                AttackMode::Case3 => attack_wrong_base(&mut chip, &key, &exp.payload, OffsetMode::Case3, &config)?,
                AttackMode::WrongKey => attack_wrong_key(&mut chip, &key, &exp.payload, seed ^ 0xa77a_c4, &config)?,
            };
            rows.push(SweepRow {
                sweep_id: format!("attack_{label}:{seed}"),
                n: a.n_stress,
                post_stress: 0,
                op: a.signal,
                replica_size: a.replica_size,
                min_distance_s: report.min_distance,
                ber: report.ber,
                errors: report.bit_error_count,
            });
        }
        let separated = rows.iter().filter(|r| r.min_distance_s > 0.0).count();
        let mean_ber = rows.iter().map(|r| r.ber).sum::<f64>() / rows.len().max(1) as f64;
        out!("trials: {}, separated: {separated}, mean BER: {mean_ber:.4}", rows.len());
        emit_csv(&a.out, &rows)
    }

    fn sweep(&self, a: &SweepArgs) -> CmdResult {
        let grid = parse_grid(&a.grid)?;
        let ns = a
            .n_stress
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad stress value `{s}`"))))
            .collect::<rrsim::Result<Vec<_>>>()?;
        let seeds: Vec<u64> = (a.seed..a.seed + a.trials).collect();
        let pattern = match a.pattern {
            PatternArg::Worst => UsagePattern::WorstCaseToggle,
            PatternArg::Realistic => UsagePattern::realistic(),
        };
        let single_n = || match ns.as_slice() {
            [n] => Ok(*n),
            _ => Err(Error::Config("this sweep takes a single --n-stress value".into())),
        };
        let rows = match a.kind {
            SweepKind::PostHiding => {
                let exp = self.experiment(&a.payload, a.replica_size)?;
                let sweep = sweep_post_hiding(&exp, &ns, &grid, a.op, &seeds, pattern)?;
                for t in &sweep.table {
                    out!(
                        "N={} {}: zero-error {:.0}, <=1 error {:.0}, <=2 errors {:.0} (mean over chips)",
                        t.n,
                        t.op,
                        t.mean_zero_error(),
                        t.mean_max_one_error(),
                        t.mean_max_two_errors()
                    );
                }
                sweep.rows
            }
            SweepKind::ReplicaSize => {
                let max = grid.iter().copied().max().unwrap_or(a.replica_size);
                let exp = self.experiment(&a.payload, max)?;
                sweep_replica_size(&exp, &grid, a.op, single_n()?, &seeds)?.rows
            }
            SweepKind::InitialStress => {
                let exp = self.experiment(&a.payload, a.replica_size)?;
                sweep_initial_stress(&exp, &grid, single_n()?, a.op, &seeds, pattern)?.rows
            }
        };
        emit_csv(&a.out, &rows)
    }
}

fn parse_method(text: &str, key: &HidingKey, geometry: &ChipGeometry) -> rrsim::Result<DecodeMethod> {
    let bad = || Error::Config(format!("unknown decode method `{text}`"));
    if text == "kmeans" {
        return Ok(DecodeMethod::KMeans2);
    }
    if let Some(v) = text.strip_prefix("threshold:") {
        return v.parse().map(DecodeMethod::Threshold).map_err(|_| bad());
    }
    if text == "reference" {
        // Cells just past the footprint, or just before it when the footprint ends the chip.
        let len = key.cells_per_bit().max(1);
        let end = key.base_address + key.footprint();
        let range = if end + len <= geometry.address_count {
            end..end + len
        } else if key.base_address >= len {
            key.base_address - len..key.base_address
        } else {
            return Err(Error::Config("no room for reference cells; pass reference:START-END".into()));
        };
        return Ok(DecodeMethod::Reference(range.collect()));
    }
    if let Some(r) = text.strip_prefix("reference:") {
        let (s, e) = r.split_once('-').ok_or_else(bad)?;
        let (s, e): (u64, u64) = (s.parse().map_err(|_| bad())?, e.parse().map_err(|_| bad())?);
        if s >= e {
            return Err(bad());
        }
        return Ok(DecodeMethod::Reference((s..e).collect()));
    }
    Err(bad())
}

fn parse_grid(text: &str) -> rrsim::Result<Vec<u64>> {
    let bad = || Error::Config(format!("grid `{text}` is not start:step:end"));
    let parts: Vec<u64> = text.split(':').map(|p| p.trim().parse::<u64>().map_err(|_| bad())).collect::<rrsim::Result<_>>()?;
    let [start, step, end] = parts[..] else { return Err(bad()) };
    if step == 0 {
        return Err(bad());
    }
    if start > end {
        return Ok(Vec::new());
    }
    Ok((start..=end).step_by(step as usize).collect())
}

fn emit_csv(path: &Path, rows: &[SweepRow]) -> CmdResult {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure { code: EXIT_OTHER, message: format!("cannot write {}: {e}", path.display()) })
}

fn exact_seconds(x: f64) -> num_rational::Ratio<u64> {
    // Profile times are short decimals; a nanosecond grid keeps them exact.
    num_rational::Ratio::new((x * 1e9).round() as u64, 1_000_000_000)
}

fn ratio_text(r: num_rational::Ratio<u64>) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{:.6}", *r.numer() as f64 / *r.denom() as f64)
    }
}
