use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bitrade::config::{CertifyConfig, EvalConfig};
use bitrade::evaluation::{format_sig, EvalReport, DEFAULT_QUAD_TOL};
use bitrade::mechanisms::MechanismLiteral;
use bitrade::scenarios::{sweep, Scenario, SweepRow};
use bitrade::verification::certify;
use bitrade::{DistributionLiteral, Error};
use clap::{Args, Parser, Subcommand};

const TOL_VAR: &str = "BITRADE_QUAD_TOL";

/// Posted-price mechanisms for bilateral trade: evaluation, sweeps and
/// incentive certification.
#[derive(Debug, Parser)]
#[command(name = "bitrade", version)]
struct Cli {
    /// Seed for every Monte Carlo cross-check.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a mechanism on a seller/buyer pair.
    Eval(EvalArgs),
    /// Sweep a scenario family over its parameter.
    Sweep(SweepArgs),
    /// Exhaustively certify a finite instance.
    Certify(CertifyArgs),
    /// Inspect the named scenario families.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON run descriptor.
    #[arg(long, conflicts_with_all = ["seller", "buyer", "mechanism", "buyer_grid", "mc_samples"])]
    config: Option<PathBuf>,
    /// Seller distribution literal (JSON).
    #[arg(long, required_unless_present = "config")]
    seller: Option<String>,
    /// Buyer distribution literal (JSON).
    #[arg(long, required_unless_present = "config")]
    buyer: Option<String>,
    /// Mechanism kind or JSON literal.
    #[arg(long, required_unless_present = "config")]
    mechanism: Option<String>,
    /// Comma-separated fixed buyer values, one extra row each.
    #[arg(long)]
    buyer_grid: Option<String>,
    /// Monte Carlo samples for the cross-check column (0 skips it).
    #[arg(long)]
    mc_samples: Option<u64>,
    /// Write `<OUT>.json` and `<OUT>.csv` instead of printing CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scenario name, see `scenario list`.
    scenario: String,
    /// Comma-separated parameter values; empty for none.
    #[arg(long, conflicts_with = "range")]
    params: Option<String>,
    /// Evenly spaced parameters as `start:stop:count`.
    #[arg(long)]
    range: Option<String>,
    /// Mechanism kind or JSON literal; defaults to the scenario's own.
    #[arg(long)]
    mechanism: Option<String>,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// JSON instance file.
    instance: PathBuf,
    /// Certificate output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    /// Print every scenario with its parameter and defaults.
    List,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Io(String),
    Refused(String),
    Uncertified,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Uncertified => 1,
            Failure::Input(_) | Failure::Io(_) => 2,
            Failure::Refused(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InstanceTooLarge { .. } => Failure::Refused(e.to_string()),
            e => Failure::Input(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn quad_tol() -> std::result::Result<f64, Failure> {
    parse_tol(std::env::var(TOL_VAR).ok().as_deref())
}

fn parse_tol(raw: Option<&str>) -> std::result::Result<f64, Failure> {
    let Some(raw) = raw else {
        return Ok(DEFAULT_QUAD_TOL);
    };
    match raw.trim().parse::<f64>() {
        Ok(t) if t.is_finite() && t > 0.0 => Ok(t),
        _ => Err(Failure::Input(format!(
            "{TOL_VAR} must be a positive number, got `{raw}`"
        ))),
    }
}

fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, Failure> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Failure::Input(format!("not a number: `{s}`")))
        })
        .collect()
}

fn parse_range(raw: &str) -> std::result::Result<Vec<f64>, Failure> {
    let bad = || Failure::Input(format!("range must be `start:stop:count`, got `{raw}`"));
    let parts: Vec<&str> = raw.split(':').collect();
    let [start, stop, count] = parts[..] else {
        return Err(bad());
    };
    let start: f64 = start.trim().parse().map_err(|_| bad())?;
    let stop: f64 = stop.trim().parse().map_err(|_| bad())?;
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    if !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    Ok(match count {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    })
}

fn eval_config(args: &EvalArgs) -> std::result::Result<EvalConfig, Failure> {
    if let Some(path) = &args.config {
        return Ok(EvalConfig::from_json(&read(path)?)?);
    }
    let literal =
        |what: &str, raw: &Option<String>| -> std::result::Result<DistributionLiteral, Failure> {
            let raw = raw.as_deref().unwrap_or_default();
            serde_json::from_str(raw).map_err(|e| Failure::Input(format!("{what}: {e}")))
        };
    Ok(EvalConfig {
        seller: literal("seller", &args.seller)?,
        buyer: literal("buyer", &args.buyer)?,
        mechanism: args
            .mechanism
            .as_deref()
            .unwrap_or_default()
            .parse::<MechanismLiteral>()?,
        buyer_grid: parse_list(args.buyer_grid.as_deref().unwrap_or_default())?,
        monte_carlo_samples: args.mc_samples.unwrap_or(0),
    })
}

fn eval_csv(reports: &[EvalReport]) -> String {
    let mut text = EvalReport::csv_header() + "\n";
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

fn cmd_eval(args: &EvalArgs, seed: u64) -> Outcome {
    let config = eval_config(args)?;
    let reports = config.run(quad_tol()?, seed)?;
    let csv = eval_csv(&reports);
    match &args.out {
        Some(stem) => {
            let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
            write(&stem.with_extension("json"), &json)?;
            write(&stem.with_extension("csv"), &csv)
        }
        None => emit(None, &csv),
    }
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut text = SweepRow::CSV_COLUMNS.join(",") + "\n";
    for r in rows {
        let fields = [r.param, r.mech_value, r.opt_value, r.ratio].map(format_sig);
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    text
}

fn cmd_sweep(args: &SweepArgs) -> Outcome {
    let scenario: Scenario = args.scenario.parse()?;
    let params = match (&args.params, &args.range) {
        (Some(list), _) => parse_list(list)?,
        (None, Some(range)) => parse_range(range)?,
        (None, None) => scenario.default_params(),
    };
    let mechanism = match &args.mechanism {
        Some(m) => m.parse::<MechanismLiteral>()?,
        None => scenario.default_mechanism(),
    };
    let rows = sweep(scenario, &params, &mechanism, quad_tol()?)?;
    emit(args.out.as_deref(), &sweep_csv(&rows))
}

fn cmd_certify(args: &CertifyArgs) -> Outcome {
    let config = CertifyConfig::from_json(&read(&args.instance)?)?;
    let game = config.build()?;
    let cert = certify(game.as_ref())?;
    let json = serde_json::to_string_pretty(&cert).expect("certificate serializes") + "\n";
    emit(args.out.as_deref(), &json)?;
    if cert.passed() {
        return Ok(());
    }
    for v in cert.witnesses() {
        let mut line = format!(
            "{:?} fails at profile [{}]",
            v.property,
            v.labels.join(", ")
        );
        if let Some(p) = v.player {
            line.push_str(&format!(", player {p}"));
        }
        if let Some(m) = v.misreport {
            line.push_str(&format!(", misreport {m}"));
        }
        eprintln!("{line}, amount {}", format_sig(v.amount));
    }
    Err(Failure::Uncertified)
}

fn cmd_scenarios() -> Outcome {
    println!("name\tparameter\tdefaults\tmechanism\tdescription");
    for sc in Scenario::ALL {
        let defaults: Vec<String> = sc.default_params().into_iter().map(format_sig).collect();
        println!(
            "{}\t{}\t{}\t{}\t{}",
            sc.name(),
            sc.parameter(),
            defaults.join(","),
            sc.default_mechanism().name(),
            sc.description()
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Eval(args) => cmd_eval(args, cli.seed),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Scenario {
            action: ScenarioAction::List,
        } => cmd_scenarios(),
    }
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) | Failure::Io(m) | Failure::Refused(m) => eprintln!("error: {m}"),
                Failure::Uncertified => eprintln!("certification failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIFORM: &str = r#"{"type":"uniform","params":{"lo":0,"hi":1}}"#;

    fn fixture(name: &str) -> String {
        format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("bitrade").chain(args.iter().copied())).unwrap()
    }

    fn code(args: &[&str]) -> u8 {
        match run(&parse(args)) {
            Ok(()) => 0,
            Err(f) => f.code(),
        }
    }

    fn column(csv: &str, name: &str) -> Vec<f64> {
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let k = header.iter().position(|h| *h == name).unwrap();
        lines
            .map(|l| l.split(',').nth(k).unwrap().parse().unwrap())
            .collect()
    }

    #[test]
    fn eval_writes_json_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("median");
        let stem = stem.to_str().unwrap();
        let args = [
            "eval",
            "--seller",
            UNIFORM,
            "--buyer",
            UNIFORM,
            "--mechanism",
            "median",
            "--out",
            stem,
        ];
        assert_eq!(code(&args), 0);
        let csv = fs::read_to_string(format!("{stem}.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), EvalReport::csv_header());
        assert_eq!(column(&csv, "ratio"), vec![0.9375]);
        let json: Vec<EvalReport> =
            serde_json::from_str(&fs::read_to_string(format!("{stem}.json")).unwrap()).unwrap();
        assert!((json[0].ratio - 0.9375).abs() < 1e-12);
    }

    #[test]
    fn eval_random_quantile_over_a_buyer_grid() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("rq.json");
        let grid: Vec<String> = (1..=20).map(|k| format!("{}", k as f64 / 20.0)).collect();
        fs::write(
            &config,
            format!(
                r#"{{"seller":{UNIFORM},"buyer":{UNIFORM},"mechanism":{{"kind":"random_quantile"}},"buyer_grid":[{}]}}"#,
                grid.join(",")
            ),
        )
        .unwrap();
        let stem = dir.path().join("rq");
        assert_eq!(
            code(&[
                "eval",
                "--config",
                config.to_str().unwrap(),
                "--out",
                stem.to_str().unwrap()
            ]),
            0
        );
        let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
        let ratios = column(&csv, "ratio");
        assert_eq!(ratios.len(), 21);
        assert!(ratios.iter().all(|&r| r >= 0.6321));
    }

    #[test]
    fn malformed_eval_input_exits_2() {
        assert_eq!(
            code(&[
                "eval",
                "--seller",
                UNIFORM,
                "--buyer",
                UNIFORM,
                "--mechanism",
                "vickrey"
            ]),
            2
        );
        assert_eq!(
            code(&[
                "eval",
                "--seller",
                "{",
                "--buyer",
                UNIFORM,
                "--mechanism",
                "median"
            ]),
            2
        );
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("bad.json");
        fs::write(
            &config,
            r#"{"seller":{"type":"uniform","params":{"lo":1,"hi":0}}}"#,
        )
        .unwrap();
        assert_eq!(code(&["eval", "--config", config.to_str().unwrap()]), 2);
        assert_eq!(code(&["eval", "--config", "/no/such/file.json"]), 2);
        let err = Cli::try_parse_from(["bitrade", "eval", "--seller", UNIFORM]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn quad_tol_override_is_validated() {
        assert_eq!(parse_tol(None).unwrap(), DEFAULT_QUAD_TOL);
        assert_eq!(parse_tol(Some("1e-9")).unwrap(), 1e-9);
        for bad in ["0", "-1", "abc", "inf"] {
            assert_eq!(parse_tol(Some(bad)).unwrap_err().code(), 2);
        }
    }

    #[test]
    fn sweep_tables() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("gft.csv");
        assert_eq!(code(&["sweep", "gft", "--out", out.to_str().unwrap()]), 0);
        let csv = fs::read_to_string(&out).unwrap();
        assert_eq!(column(&csv, "param"), vec![5.0, 10.0, 15.0, 20.0]);
        let ratios = column(&csv, "ratio");
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        let t_ratio: Vec<f64> = [5.0, 10.0, 15.0, 20.0]
            .iter()
            .zip(&ratios)
            .map(|(t, r)| t * r)
            .collect();
        assert!(
            t_ratio.iter().all(|&x| (1.0..3.0).contains(&x)),
            "{t_ratio:?}"
        );

        assert_eq!(
            code(&[
                "sweep",
                "prop31s",
                "--params",
                "0.001,0.1,0.01",
                "--out",
                out.to_str().unwrap()
            ]),
            0
        );
        let csv = fs::read_to_string(&out).unwrap();
        assert_eq!(column(&csv, "param"), vec![0.001, 0.01, 0.1]);
        assert!(column(&csv, "ratio").iter().all(|r| (r - 0.5).abs() < 1e-3));
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("empty.csv");
        assert_eq!(
            code(&[
                "sweep",
                "gft",
                "--params",
                "",
                "--out",
                out.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(
            fs::read_to_string(&out).unwrap(),
            "param,mech_value,opt_value,ratio\n"
        );
        assert_eq!(
            code(&[
                "sweep",
                "gft",
                "--range",
                "5:10:0",
                "--out",
                out.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(
            fs::read_to_string(&out).unwrap(),
            "param,mech_value,opt_value,ratio\n"
        );
    }

    #[test]
    fn sweep_input_errors() {
        assert_eq!(code(&["sweep", "nope"]), 2);
        assert_eq!(code(&["sweep", "gft", "--params", "5,x"]), 2);
        assert_eq!(code(&["sweep", "gft", "--range", "5:10"]), 2);
        assert_eq!(code(&["sweep", "gft", "--mechanism", "vickrey"]), 2);
        assert_eq!(code(&["sweep", "prop31s", "--params", "2"]), 2);
    }

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(parse_range("5:20:4").unwrap(), vec![5.0, 10.0, 15.0, 20.0]);
        assert_eq!(parse_range("3:9:1").unwrap(), vec![3.0]);
    }

    #[test]
    fn shipped_fixtures_certify() {
        let dir = tempfile::tempdir().unwrap();
        for name in [
            "partnership_three.json",
            "partnership_four.json",
            "bilateral_weighted_median.json",
        ] {
            let out = dir.path().join(name);
            assert_eq!(
                code(&["certify", &fixture(name), "--out", out.to_str().unwrap()]),
                0,
                "{name}"
            );
            let cert: bitrade::verification::Certificate =
                serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
            assert!(cert.passed());
        }
    }

    #[test]
    fn broken_fixture_fails_with_witness() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("broken.json");
        assert_eq!(
            code(&[
                "certify",
                &fixture("broken_first_price.json"),
                "--out",
                out.to_str().unwrap()
            ]),
            1
        );
        let cert: bitrade::verification::Certificate =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        let witness = cert.dsic.witness.expect("witness");
        let config = CertifyConfig::from_json(
            &fs::read_to_string(fixture("broken_first_price.json")).unwrap(),
        )
        .unwrap();
        assert!(witness.replay(config.build().unwrap().as_ref()));
    }

    #[test]
    fn oversize_fixture_exits_3() {
        assert_eq!(code(&["certify", &fixture("oversize.json")]), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let outputs: Vec<String> = ["42", "42", "7"]
            .iter()
            .enumerate()
            .map(|(i, seed)| {
                let stem = dir.path().join(format!("run{i}"));
                let args = [
                    "--seed",
                    seed,
                    "eval",
                    "--seller",
                    UNIFORM,
                    "--buyer",
                    UNIFORM,
                    "--mechanism",
                    "random_quantile",
                    "--mc-samples",
                    "2000",
                    "--out",
                    stem.to_str().unwrap(),
                ];
                assert_eq!(code(&args), 0);
                fs::read_to_string(stem.with_extension("json")).unwrap()
                    + &fs::read_to_string(stem.with_extension("csv")).unwrap()
            })
            .collect();
        assert_eq!(outputs[0], outputs[1]);
        assert_ne!(outputs[0], outputs[2]);
    }
}
