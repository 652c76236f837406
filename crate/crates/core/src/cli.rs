//! Command-line front end.
//!
//! A `--config <file>` TOML document may hold one table per subcommand, e.g.
//!
//! ```toml
//! [threeway]
//! alpha-cw = 0.5
//! cfn = 5
//! ```
//!
//! Its entries are inserted as flags directly after the subcommand name, so
//! anything given on the command line overrides them.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bootstrap::{bootstrap_many, BootstrapSpec, Metric, METHOD};
use crate::crc_binary::{calibrate_fnr, fnr_sweep, parse_grid, write_sweep_csv};
use crate::crc_threeway::{assign_zones, calibrate_three_way};
use crate::domain::{CostSpec, QuantileRule, RiskSpec, ScoreMapSet, ShiftInterval};
use crate::error::{Error, Result};
use crate::io::report::{
    to_text, write_document, ApplyDocument, EvaluationDocument, McDocument, Provenance,
    SplitDocument, ThresholdDocument, ZonesDocument,
};
use crate::io::{load_scores, save_scores, split, write_zone_container, SplitSpec};
use crate::metrics::evaluate;
use crate::synth::{
    closed_form_set_size, generate, mc_fnr_guarantee, mc_set_size, mc_threeway_check,
    model_from_auroc, BiNormalModel, McOutcome, McSpec,
};

/// Largest fraction of three-way trials allowed to exceed their decided-set
/// bound before `mc-check threeway` fails.
pub const MAX_VIOLATION_FRACTION: f64 = 0.05;

#[derive(Parser, Debug)]
#[command(name = "pixcrc", version, about = "Risk-controlled thresholds for pixel score maps")]
pub struct Cli {
    /// TOML file whose [<subcommand>] table supplies default flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// FNR-controlling threshold from a calibration set
    Calibrate(CalibrateArgs),
    /// Test-set metrics at a threshold, optionally with bootstrap intervals
    Evaluate(EvaluateArgs),
    /// FNR and set size over a threshold grid, as CSV
    Sweep(SweepArgs),
    /// Shift-aware three-way zone thresholds
    Threeway(ThreewayArgs),
    /// Route pixels into zones and report zone statistics
    Apply(ApplyArgs),
    /// Draw synthetic bi-normal score maps
    Simulate(SimulateArgs),
    /// Monte-Carlo check of a calibration guarantee
    McCheck(McCheckArgs),
    /// Seeded image-level train/calibration/test split
    Split(SplitArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long = "quantile-rule", value_enum, default_value_t = Rule::Ceil)]
    pub quantile_rule: Rule,
    #[arg(long)]
    pub out: PathBuf,
}

/// Order-statistic index rule for FNR calibration.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// k = ceil(alpha (m + 1))
    Ceil,
    /// k = floor(alpha (m + 1)); expected FNR never exceeds alpha
    Floor,
}

impl Rule {
    fn risk(self, alpha: f64) -> Result<RiskSpec> {
        let rule = match self {
            Rule::Ceil => QuantileRule::Ceil,
            Rule::Floor => QuantileRule::Floor,
        };
        Ok(RiskSpec::new(alpha)?.with_rule(rule))
    }

    fn name(self) -> &'static str {
        match self {
            Rule::Ceil => "ceil",
            Rule::Floor => "floor",
        }
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Threshold document written by `calibrate`
    #[arg(long, required_unless_present = "lambda", conflicts_with = "lambda")]
    pub threshold: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Bootstrap resamples; 0 disables intervals
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Inclusive grid `start:stop:step`
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct ShiftArgs {
    #[arg(long = "alpha-cw")]
    pub alpha_cw: Option<f64>,
    #[arg(long)]
    pub cfn: Option<f64>,
    #[arg(long)]
    pub cfp: Option<f64>,
    #[arg(long = "rho-lo")]
    pub rho_lo: Option<f64>,
    #[arg(long = "rho-hi")]
    pub rho_hi: Option<f64>,
}

impl ShiftArgs {
    fn resolve(&self) -> Result<(f64, CostSpec, ShiftInterval)> {
        let need = |v: Option<f64>, flag: &str| {
            v.ok_or_else(|| Error::InvalidParameter(format!("--{flag} is required")))
        };
        let alpha_cw = need(self.alpha_cw, "alpha-cw")?;
        let cost = CostSpec::new(need(self.cfn, "cfn")?, need(self.cfp, "cfp")?)?;
        let shift = ShiftInterval::new(need(self.rho_lo, "rho-lo")?, need(self.rho_hi, "rho-hi")?)?;
        Ok((alpha_cw, cost, shift))
    }

    fn record(&self, mut p: Provenance) -> Provenance {
        for (k, v) in [
            ("alpha_cw", self.alpha_cw),
            ("c_fn", self.cfn),
            ("c_fp", self.cfp),
            ("rho_lo", self.rho_lo),
            ("rho_hi", self.rho_hi),
        ] {
            if let Some(v) = v {
                p = p.param(k, v);
            }
        }
        p
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ThreewayArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub shift: ShiftArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ApplyArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Zones document written by `threeway`
    #[arg(long)]
    pub zones: PathBuf,
    /// Zone container output
    #[arg(long)]
    pub out: PathBuf,
    /// Zone report; defaults to the container path with a .report.toml extension
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct ModelArgs {
    #[arg(long)]
    pub auroc: f64,
    #[arg(long)]
    pub prevalence: f64,
    /// Logit offset added to latent scores before the logistic link
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub intercept: f64,
}

impl ModelArgs {
    fn model(&self) -> Result<BiNormalModel> {
        model_from_auroc(self.auroc, self.prevalence)?.with_logit_offset(self.intercept)
    }

    fn record(&self, p: Provenance) -> Provenance {
        p.param("auroc", self.auroc)
            .param("prevalence", self.prevalence)
            .param("intercept", self.intercept)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub images: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; `.csv` writes CSV, anything else the binary container
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    /// Mean test FNR at the calibrated threshold is at most alpha + 2 SE
    Fnr,
    /// Mean set size matches the closed form within --tolerance
    Setsize,
    /// Decided-set risk stays below its bound
    Threeway,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct McCheckArgs {
    #[arg(value_enum)]
    pub mode: McMode,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "quantile-rule", value_enum, default_value_t = Rule::Ceil)]
    pub quantile_rule: Rule,
    #[command(flatten)]
    pub shift: ShiftArgs,
    /// Deployment prevalence ratio; drawn uniformly from the interval if absent
    #[arg(long = "deploy-rho")]
    pub deploy_rho: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long = "cal-pixels", default_value_t = 50_000)]
    pub cal_pixels: usize,
    #[arg(long = "test-pixels", default_value_t = 50_000)]
    pub test_pixels: usize,
    /// Relative tolerance for the set-size check
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SplitArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Train, calibration and test fractions
    #[arg(long, value_delimiter = ',', default_value = "0.70,0.15,0.15")]
    pub ratios: Vec<f64>,
    /// Writes <prefix>_train.crs, <prefix>_cal.crs, <prefix>_test.crs and
    /// <prefix>_split.toml
    #[arg(long = "out-prefix")]
    pub out_prefix: String,
}

/// Parses `argv` (including the program name), applies any config file and
/// runs the selected command. Usage errors exit the process through clap.
pub fn run(argv: Vec<OsString>) -> Result<()> {
    let argv = expand_config(argv)?;
    execute(Cli::parse_from(argv))
}

/// Splices the `[<subcommand>]` table of a `--config` file into `argv` right
/// after the subcommand name.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else if sub.is_none() && !arg.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (config, sub) else {
        return Ok(argv);
    };
    let table: toml::Table = fs::read_to_string(&path)?
        .parse()
        .map_err(|e: toml::de::Error| Error::Format(format!("{}: {e}", path.display())))?;
    let name = argv[sub].to_string_lossy().into_owned();
    let Some(section) = table.get(&name) else {
        return Ok(argv);
    };
    let section = section.as_table().ok_or_else(|| {
        Error::Format(format!("config entry [{name}] must be a table"))
    })?;
    let mut extra = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => extra.push(flag),
            toml::Value::Boolean(false) => {}
            v => {
                extra.push(flag);
                extra.push(config_value(key, v)?);
            }
        }
    }
    let mut out = argv[..=sub].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}

fn config_value(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| config_value(key, x))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => return Err(Error::Format(format!("unsupported config value for {key}"))),
    })
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate(a) => calibrate(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Threeway(a) => threeway(&a),
        Command::Apply(a) => apply(&a),
        Command::Simulate(a) => simulate(&a),
        Command::McCheck(a) => mc_check(&a),
        Command::Split(a) => split_cmd(&a),
    }
}

fn load(path: &Path) -> Result<ScoreMapSet> {
    load_scores(path)
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let risk = a.quantile_rule.risk(a.alpha)?;
    let set = load(&a.scores)?;
    let calibration = calibrate_fnr(&set, &risk)?;
    let provenance = Provenance::new("calibrate")
        .param("alpha", a.alpha)
        .param("quantile_rule", a.quantile_rule.name())
        .input(&a.scores)?;
    write_document(
        &a.out,
        &ThresholdDocument {
            provenance,
            calibration,
        },
    )
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let mut provenance = Provenance::new("evaluate");
    let lambda = match (&a.threshold, a.lambda) {
        (Some(path), _) => {
            let doc: ThresholdDocument = crate::io::report::read_document(path)?;
            provenance = provenance.input(path)?;
            doc.calibration.lambda_hat
        }
        (None, Some(l)) => l,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "--threshold or --lambda is required".into(),
            ))
        }
    };
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda {lambda}")));
    }
    let set = load(&a.scores)?;
    let mut metrics = evaluate(&set, lambda)?;
    let mut conventions = BTreeMap::from([
        (
            "auroc".to_string(),
            "pooled over valid pixels of all images; ties count one half".to_string(),
        ),
        (
            "auprc".to_string(),
            "step-wise average precision, ties grouped by score".to_string(),
        ),
        (
            "flagged".to_string(),
            "a pixel is flagged when score >= lambda".to_string(),
        ),
    ]);
    provenance = provenance.param("lambda", lambda).input(&a.scores)?;
    if a.bootstrap > 0 {
        let spec = BootstrapSpec::new(a.bootstrap, a.confidence, a.seed)?;
        provenance = provenance
            .param("bootstrap", a.bootstrap as i64)
            .param("confidence", a.confidence)
            .seed(a.seed);
        conventions.insert("ci".into(), METHOD.into());
        let mut undefined = Vec::new();
        for (metric, result) in bootstrap_many(&set, &Metric::ALL, Some(lambda), &spec) {
            match result {
                Ok(ci) => {
                    metrics.ci.insert(metric.name().to_string(), ci);
                }
                Err(Error::MetricUndefined(_) | Error::NoPositives | Error::NoNegatives) => {
                    undefined.push(metric.name())
                }
                Err(e) => return Err(e),
            }
        }
        if !undefined.is_empty() {
            conventions.insert("ci_undefined".into(), undefined.join(","));
        }
    }
    write_document(
        &a.out,
        &EvaluationDocument {
            provenance,
            conventions,
            metrics,
        },
    )
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let set = load(&a.scores)?;
    let points = fnr_sweep(&set, &grid)?;
    write_sweep_csv(&points, BufWriter::new(File::create(&a.out)?))
}

fn threeway(a: &ThreewayArgs) -> Result<()> {
    let (alpha_cw, cost, shift) = a.shift.resolve()?;
    let set = load(&a.scores)?;
    let zones = calibrate_three_way(&set, &cost, alpha_cw, &shift)?;
    let provenance = a.shift.record(Provenance::new("threeway")).input(&a.scores)?;
    write_document(&a.out, &ZonesDocument { provenance, zones })
}

fn apply(a: &ApplyArgs) -> Result<()> {
    let zones_doc: ZonesDocument = crate::io::report::read_document(&a.zones)?;
    let set = load(&a.scores)?;
    let (maps, report) = assign_zones(&set, &zones_doc.zones)?;
    write_zone_container(&maps, BufWriter::new(File::create(&a.out)?))?;
    let provenance = Provenance::new("apply")
        .input(&a.scores)?
        .input(&a.zones)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_extension("report.toml"));
    write_document(
        &report_path,
        &ApplyDocument {
            provenance,
            zones: zones_doc.zones,
            report,
        },
    )
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let model = a.model.model()?;
    let set = generate(&model, a.images, a.height, a.width, a.seed)?;
    save_scores(&a.out, &set)?;
    Ok(())
}

fn mc_check(a: &McCheckArgs) -> Result<()> {
    let model = a.model.model()?;
    let spec = McSpec::with_pixels(a.trials, a.cal_pixels, a.test_pixels, a.seed)?;
    let need_alpha = || {
        a.alpha
            .ok_or_else(|| Error::InvalidParameter("--alpha is required".into()))
    };
    let mut provenance = a
        .model
        .record(Provenance::new("mc-check"))
        .param("trials", a.trials as i64)
        .param("cal_pixels", spec.cal_pixels() as i64)
        .param("test_pixels", spec.test_pixels() as i64)
        .seed(a.seed);
    let mut checks = BTreeMap::new();
    let (outcome, passed, mode) = match a.mode {
        McMode::Fnr => {
            let alpha = need_alpha()?;
            provenance = provenance
                .param("alpha", alpha)
                .param("quantile_rule", a.quantile_rule.name());
            let r = mc_fnr_guarantee(&model, &a.quantile_rule.risk(alpha)?, &spec)?;
            let bound = alpha + 2.0 * r.std_error();
            checks.insert("bound".to_string(), bound);
            (McOutcome::Fnr(r), r.mean_risk <= bound, "fnr")
        }
        McMode::Setsize => {
            let alpha = need_alpha()?;
            provenance = provenance
                .param("alpha", alpha)
                .param("quantile_rule", a.quantile_rule.name())
                .param("tolerance", a.tolerance);
            let r = mc_set_size(&model, &a.quantile_rule.risk(alpha)?, &spec)?;
            let closed = closed_form_set_size(&model, alpha)?;
            let rel = (r.mean_set_size - closed).abs() / closed;
            checks.insert("closed_form".to_string(), closed);
            checks.insert("relative_error".to_string(), rel);
            (McOutcome::SetSize(r), rel <= a.tolerance, "setsize")
        }
        McMode::Threeway => {
            let (alpha_cw, cost, shift) = a.shift.resolve()?;
            provenance = a.shift.record(provenance);
            if let Some(rho) = a.deploy_rho {
                provenance = provenance.param("deploy_rho", rho);
            }
            let r = mc_threeway_check(&model, &cost, alpha_cw, &shift, a.deploy_rho, &spec)?;
            checks.insert("max_violation_fraction".to_string(), MAX_VIOLATION_FRACTION);
            let passed = r.result.violation_fraction <= MAX_VIOLATION_FRACTION
                && r.result.mean_risk <= r.mean_bound;
            (McOutcome::ThreeWay(r), passed, "threeway")
        }
    };
    let doc = McDocument {
        provenance: provenance.param("mode", mode),
        outcome,
        checks,
        passed,
    };
    print!("{}", to_text(&doc)?);
    if let Some(out) = &a.out {
        write_document(out, &doc)?;
    }
    if passed {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("{mode} check did not hold")))
    }
}

fn split_cmd(a: &SplitArgs) -> Result<()> {
    let ratios: [f64; 3] = a.ratios.as_slice().try_into().map_err(|_| {
        Error::InvalidParameter(format!("--ratios needs 3 values, got {}", a.ratios.len()))
    })?;
    let spec = SplitSpec::new(a.seed, ratios)?;
    let set = load(&a.scores)?;
    let (train, cal, test) = split(&set, &spec)?;
    let ids = |s: &ScoreMapSet| s.maps().iter().map(|m| m.image_id()).collect::<Vec<_>>();
    for (part, name) in [(&train, "train"), (&cal, "cal"), (&test, "test")] {
        if !part.is_empty() {
            save_scores(Path::new(&format!("{}_{name}.crs", a.out_prefix)), part)?;
        }
    }
    let provenance = Provenance::new("split")
        .param(
            "ratios",
            toml::Value::Array(ratios.iter().map(|&r| r.into()).collect()),
        )
        .seed(a.seed)
        .input(&a.scores)?;
    write_document(
        Path::new(&format!("{}_split.toml", a.out_prefix)),
        &SplitDocument {
            provenance,
            train: train.len(),
            calibration: cal.len(),
            test: test.len(),
            train_ids: ids(&train),
            calibration_ids: ids(&cal),
            test_ids: ids(&test),
        },
    )
}
