//! `run_experiment`: spec parsing, analyses and artifact emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stats::{self, EstimateReport, HillEstimate, KsResult, LaplaceEstimate, TailDiagnosis};
use super::{parse_toml, LabError};
use crate::cumulant::{scalar_tolerance, solve_v};
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, LevyMeasure};
use crate::moments::{self, CriterionResult, Family, MomentFunction, Verdict};
use crate::simulator::{self, SimConfig};

const KS_FIRST_INDEX: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    LaplaceMatch,
    MomentEstimate,
    Hill,
    KsCoupling,
    CriterionCrosscheck,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Self::LaplaceMatch => "laplace_match",
            Self::MomentEstimate => "moment_estimate",
            Self::Hill => "hill",
            Self::KsCoupling => "ks_coupling",
            Self::CriterionCrosscheck => "criterion_crosscheck",
        }
    }

    fn needs_ensemble(self) -> bool {
        matches!(self, Self::LaplaceMatch | Self::MomentEstimate | Self::Hill)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { x0: f64 },
    /// One state per line; `#` starts a comment. Paths cycle through it.
    Sample { file: PathBuf },
}

impl Default for InitialLaw {
    fn default() -> Self {
        Self::Point { x0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceSection {
    pub lambdas: Vec<f64>,
}

impl Default for LaplaceSection {
    fn default() -> Self {
        Self { lambdas: vec![0.5, 1.0, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HillSection {
    pub k_frac: f64,
}

impl Default for HillSection {
    fn default() -> Self {
        Self { k_frac: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsSection {
    pub x: f64,
    pub y: f64,
    pub repetitions: usize,
}

impl Default for KsSection {
    fn default() -> Self {
        Self { x: 1.0, y: 2.0, repetitions: 1 }
    }
}

/// Grid of `Power(p)` against `PowerTail(c, α)` branching measures, with
/// optional `PowerTail(c, α_n)` immigration on `(1, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrosscheckSection {
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
    pub c: f64,
    pub immigration_alpha: Option<f64>,
}

impl Default for CrosscheckSection {
    fn default() -> Self {
        Self { p: vec![0.5, 1.2, 1.4, 1.8, 2.5], alpha: vec![1.1, 1.5, 1.9], c: 1.0, immigration_alpha: None }
    }
}

fn default_f() -> MomentFunction {
    MomentFunction::power(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mechanism: BranchingMechanism,
    #[serde(default)]
    pub immigration: Option<ImmigrationMechanism>,
    #[serde(default = "default_f")]
    pub f: MomentFunction,
    #[serde(default)]
    pub initial: InitialLaw,
    pub t: Vec<f64>,
    pub n_paths: usize,
    /// `t_max` defaults to the largest observation time.
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub laplace: LaplaceSection,
    #[serde(default)]
    pub hill: HillSection,
    #[serde(default)]
    pub ks_coupling: KsSection,
    #[serde(default)]
    pub criterion_crosscheck: CrosscheckSection,
}

/// Line of `key` inside `[section]` (or at top level), for error anchoring.
fn key_line(src: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    let mut header_line = 1;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if section == Some(name.as_str()) {
                header_line = i + 1;
            }
            current = Some(name);
            continue;
        }
        let in_scope = match section {
            None => current.is_none(),
            Some(s) => current.as_deref() == Some(s),
        };
        let dotted = section.map(|s| format!("{s}.{key}"));
        let hit = |k: &str| {
            line.strip_prefix(k).is_some_and(|r| r.trim_start().starts_with('='))
        };
        if (in_scope && hit(key)) || (current.is_none() && dotted.as_deref().is_some_and(hit)) {
            return i + 1;
        }
    }
    header_line
}

/// Parse and validate an experiment spec; `file` labels error messages.
pub fn parse_spec(src: &str, file: &str) -> Result<ExperimentSpec, LabError> {
    let mut spec: ExperimentSpec = parse_toml(src, file)?;
    let raw: toml::Table = parse_toml(src, file)?;
    let config = |section: Option<&str>, key: &str, message: String| LabError::Config {
        file: file.to_string(),
        line: key_line(src, section, key),
        message,
    };

    if spec.n_paths < 100 {
        return Err(config(None, "n_paths", format!("n_paths must be >= 100 (got {})", spec.n_paths)));
    }
    if spec.t.is_empty() {
        return Err(config(None, "t", "t must list at least one time".into()));
    }
    if let Some(bad) = spec.t.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(config(None, "t", format!("times must be finite and >= 0 (got {bad})")));
    }
    if spec.t.windows(2).any(|w| w[1] < w[0]) {
        return Err(config(None, "t", "times must be nondecreasing".into()));
    }
    let t_last = *spec.t.last().expect("nonempty");
    let explicit_horizon = raw.get("sim").and_then(|s| s.get("t_max")).is_some();
    if !explicit_horizon {
        spec.sim.t_max = if t_last > 0.0 { t_last } else { 1.0 };
    } else if t_last > spec.sim.t_max * (1.0 + 1e-12) {
        return Err(config(None, "t", format!("time {t_last} exceeds the horizon sim.t_max = {}", spec.sim.t_max)));
    }
    spec.sim
        .validate(&spec.mechanism, spec.immigration.as_ref())
        .map_err(|e| config(Some("sim"), "dt", e.to_string()))?;
    spec.f.validate().map_err(|e| config(Some("f"), "family", e.to_string()))?;
    if let InitialLaw::Point { x0 } = spec.initial {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(config(Some("initial"), "x0", format!("x0 must be >= 0 (got {x0})")));
        }
    }
    if let Some(bad) = spec.laplace.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(config(Some("laplace"), "lambdas", format!("lambdas must be >= 0 (got {bad})")));
    }
    if !(spec.hill.k_frac > 0.0 && spec.hill.k_frac <= 0.1) {
        return Err(config(Some("hill"), "k_frac", format!("k_frac must lie in (0, 0.1] (got {})", spec.hill.k_frac)));
    }
    let ks = &spec.ks_coupling;
    if !(ks.x >= 0.0 && ks.y >= ks.x && ks.y.is_finite()) {
        return Err(config(Some("ks_coupling"), "y", format!("need 0 <= x <= y (got x={}, y={})", ks.x, ks.y)));
    }
    if ks.repetitions == 0 {
        return Err(config(Some("ks_coupling"), "repetitions", "repetitions must be >= 1".into()));
    }
    let cc = &spec.criterion_crosscheck;
    if let Some(bad) = cc.alpha.iter().chain(cc.immigration_alpha.iter()).find(|a| !(**a > 0.0 && **a < 2.0)) {
        return Err(config(Some("criterion_crosscheck"), "alpha", format!("tail indices must lie in (0, 2) (got {bad})")));
    }
    if let Some(bad) = cc.p.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(config(Some("criterion_crosscheck"), "p", format!("exponents must be > 0 (got {bad})")));
    }
    if !(cc.c > 0.0 && cc.c.is_finite()) {
        return Err(config(Some("criterion_crosscheck"), "c", format!("c must be > 0 (got {})", cc.c)));
    }
    let mut seen = Vec::new();
    spec.analyses.retain(|a| {
        let fresh = !seen.contains(a);
        seen.push(*a);
        fresh
    });
    Ok(spec)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestAnalysis {
    pub name: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub spec_file: String,
    /// SHA-256 over the spec bytes and any initial-sample bytes.
    pub inputs_digest: String,
    pub seed: u64,
    pub n_paths: usize,
    pub t: Vec<f64>,
    pub sim: SimConfig,
    pub analyses: Vec<ManifestAnalysis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Some analysis errored; the process should exit nonzero.
    pub failed: bool,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_sample(path: &Path) -> Result<(Vec<f64>, Vec<u8>), LabError> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let file = path.display().to_string();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let column = text.lines().nth(i).and_then(|l| l.find(line)).unwrap_or(0) + 1;
        let v: f64 = line.parse().map_err(|_| LabError::Parse {
            file: file.clone(),
            line: i + 1,
            column,
            message: format!("expected a number, found {line:?}"),
        })?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(LabError::Config { file: file.clone(), line: i + 1, message: format!("initial states must be >= 0 (got {v})") });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(LabError::Config { file, line: 1, message: "initial sample is empty".into() });
    }
    Ok((values, bytes))
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<ManifestFile>,
}

impl Writer<'_> {
    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), LabError> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| LabError::io(&path, e))?;
        self.files.push(ManifestFile { name: name.to_string(), sha256: hex(&Sha256::digest(data)) });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), LabError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), LabError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        }
        let data = w.into_inner().map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        self.bytes(name, &data)
    }
}

#[derive(Serialize)]
struct PlotRow {
    series: String,
    x: f64,
    y: f64,
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    starts: &'a [f64],
    /// `states[path][k]` at `spec.t[k]`.
    states: Option<&'a [Vec<f64>]>,
}

impl Context<'_> {
    fn column(&self, k: usize) -> Vec<f64> {
        self.states.expect("ensemble simulated").iter().map(|s| s[k]).collect()
    }

    fn start_of(&self, i: usize) -> f64 {
        self.starts[i % self.starts.len()]
    }
}

/// `E e^{-λ X_t}` averaged over the paths' initial states.
fn exact_laplace(ctx: &Context, lambda: f64, t: f64) -> Result<f64, LabError> {
    let spec = ctx.spec;
    let (v, immigration) = if lambda == 0.0 || t == 0.0 {
        (lambda, 0.0)
    } else {
        let sol = solve_v(&spec.mechanism, lambda, t, scalar_tolerance(1e-10))?;
        let im = match &spec.immigration {
            Some(imm) if !imm.is_trivial() => sol.integrate(t, |v| imm.psi(v.max(0.0)).unwrap_or(f64::NAN)),
            _ => 0.0,
        };
        (sol.v_at(t), im)
    };
    let n = spec.n_paths;
    Ok((0..n).map(|i| (-ctx.start_of(i) * v - immigration).exp()).sum::<f64>() / n as f64)
}

#[derive(Serialize)]
struct LaplaceRow {
    t: f64,
    lambda: f64,
    empirical: f64,
    se: f64,
    exact: f64,
    abs_err: f64,
    z_score: f64,
}

fn laplace_match(ctx: &Context, out: &mut Writer) -> Result<(), LabError> {
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for (k, &t) in ctx.spec.t.iter().enumerate() {
        let est: Vec<LaplaceEstimate> = stats::empirical_laplace(&ctx.column(k), &ctx.spec.laplace.lambdas)?;
        for e in est {
            let exact = exact_laplace(ctx, e.lambda, t)?;
            let abs_err = (e.estimate - exact).abs();
            let z_score = if e.se > 0.0 { abs_err / e.se } else if abs_err == 0.0 { 0.0 } else { f64::INFINITY };
            plot.push(PlotRow { series: format!("empirical t={t}"), x: e.lambda, y: e.estimate });
            plot.push(PlotRow { series: format!("exact t={t}"), x: e.lambda, y: exact });
            rows.push(LaplaceRow { t, lambda: e.lambda, empirical: e.estimate, se: e.se, exact, abs_err, z_score });
        }
    }
    out.csv("laplace_match.csv", &rows)?;
    out.csv("laplace_match_plot.csv", &plot)
}

#[derive(Serialize)]
struct Oracle {
    name: &'static str,
    value: f64,
    z_score: f64,
}

#[derive(Serialize)]
struct MomentEntry {
    t: f64,
    report: EstimateReport,
    criterion: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Oracle>,
}

fn moment_oracle(ctx: &Context, t: f64, report: &EstimateReport) -> Result<Option<Oracle>, LabError> {
    let spec = ctx.spec;
    let integer_p = match spec.f.family {
        Family::Power { p } if spec.f.shift_a == 0.0 && p.fract() == 0.0 && (1.0..=4.0).contains(&p) => p as usize,
        _ => return Ok(None),
    };
    if spec.immigration.as_ref().is_some_and(|i| !i.is_trivial()) || ctx.starts.len() != 1 {
        return Ok(None);
    }
    let value = match moments::integer_moment(&spec.mechanism, ctx.starts[0], integer_p, t)?.value() {
        Some(v) => v,
        None => return Ok(None),
    };
    let z_score = if report.se > 0.0 { (report.estimate - value).abs() / report.se } else { 0.0 };
    Ok(Some(Oracle { name: "integer_moment", value, z_score }))
}

fn criterion(spec: &ExperimentSpec, f: &MomentFunction) -> CriterionResult {
    match &spec.immigration {
        Some(imm) => moments::cbi_f_moment_finite(&spec.mechanism, imm, f, true),
        None => moments::cb_f_moment_finite(&spec.mechanism, f, true),
    }
}

fn moment_estimate(ctx: &Context, out: &mut Writer) -> Result<(), LabError> {
    let mut entries = Vec::new();
    let mut plot = Vec::new();
    for (k, &t) in ctx.spec.t.iter().enumerate() {
        let report = stats::mc_f_moment(&ctx.column(k), &ctx.spec.f)?;
        for p in &report.trajectory {
            plot.push(PlotRow { series: format!("t={t}"), x: p.n_paths as f64, y: p.estimate });
        }
        let oracle = moment_oracle(ctx, t, &report)?;
        entries.push(MomentEntry { t, criterion: criterion(ctx.spec, &ctx.spec.f).to_json(), report, oracle });
    }
    out.json("moment_estimate.json", &entries)?;
    out.csv("moment_estimate_plot.csv", &plot)
}

#[derive(Serialize)]
struct HillEntry {
    t: f64,
    estimate: HillEstimate,
    sweep: Vec<HillEstimate>,
    diagnosis: TailDiagnosis,
}

fn hill(ctx: &Context, out: &mut Writer) -> Result<(), LabError> {
    let mut entries = Vec::new();
    let mut plot = Vec::new();
    for (k, &t) in ctx.spec.t.iter().enumerate() {
        let col = ctx.column(k);
        let estimate = stats::hill_tail_index(&col, ctx.spec.hill.k_frac)?;
        let (sweep, diagnosis) = stats::hill_sweep(&col);
        for e in &sweep {
            plot.push(PlotRow { series: format!("t={t}"), x: e.k_frac, y: e.alpha });
        }
        entries.push(HillEntry { t, estimate, sweep, diagnosis });
    }
    out.json("hill.json", &entries)?;
    out.csv("hill_plot.csv", &plot)
}

#[derive(Serialize)]
struct KsRow {
    repetition: usize,
    statistic: f64,
    critical_95: f64,
    passed: bool,
}

#[derive(Serialize)]
struct KsSummary {
    x: f64,
    y: f64,
    t: f64,
    n_paths: usize,
    repetitions: Vec<KsRow>,
    pass_fraction: f64,
    order_violations: usize,
}

fn ks_coupling(ctx: &Context, out: &mut Writer) -> Result<(), LabError> {
    let spec = ctx.spec;
    let KsSection { x, y, repetitions } = spec.ks_coupling;
    let n = spec.n_paths;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut order_violations = 0;
    for r in 0..repetitions {
        let base = KS_FIRST_INDEX + (2 * r * n) as u64;
        let pairs = simulator::coupled_ensemble(&spec.mechanism, x, y, &spec.sim, n, base)?;
        order_violations += pairs.iter().filter(|p| !p.ordered).count();
        let increments: Vec<f64> = pairs.iter().map(|p| p.increment).collect();
        let fresh: Vec<f64> =
            simulator::ensemble(&spec.mechanism, None, y - x, &spec.sim, n, base + n as u64, &[spec.sim.t_max])?
                .into_iter()
                .map(|s| s[0])
                .collect();
        let ks: KsResult = stats::ks_two_sample(&increments, &fresh)?;
        if r == 0 {
            for (series, sample) in [("increment", &increments), ("fresh", &fresh)] {
                let mut sorted = sample.clone();
                sorted.sort_by(f64::total_cmp);
                let step = (sorted.len() / 200).max(1);
                for (i, v) in sorted.iter().enumerate().step_by(step) {
                    plot.push(PlotRow { series: series.into(), x: *v, y: (i + 1) as f64 / sorted.len() as f64 });
                }
            }
        }
        rows.push(KsRow { repetition: r, statistic: ks.statistic, critical_95: ks.critical_95, passed: ks.passed() });
    }
    let pass_fraction = rows.iter().filter(|r| r.passed).count() as f64 / rows.len() as f64;
    out.csv("ks_coupling.csv", &rows)?;
    out.csv("ks_coupling_plot.csv", &plot)?;
    out.json(
        "ks_coupling.json",
        &KsSummary { x, y, t: spec.sim.t_max, n_paths: n, repetitions: rows, pass_fraction, order_violations },
    )
}

#[derive(Serialize)]
struct CrosscheckRow {
    p: f64,
    alpha: f64,
    expected_finite: bool,
    finite: Option<bool>,
    agree: bool,
    reason: String,
}

#[derive(Serialize)]
struct CrosscheckSummary {
    c: f64,
    immigration_alpha: Option<f64>,
    rows: Vec<CrosscheckRow>,
    all_agree: bool,
}

fn criterion_crosscheck(ctx: &Context, out: &mut Writer) -> Result<(), LabError> {
    let spec = ctx.spec;
    let cc = &spec.criterion_crosscheck;
    let imm = match cc.immigration_alpha {
        Some(a) => Some(
            ImmigrationMechanism::new(0.0, LevyMeasure::PowerTail { c: cc.c, alpha: a, z_lo: 1.0 })
                .map_err(crate::moments::MomentError::Mechanism)?,
        ),
        None => None,
    };
    let mut rows = Vec::new();
    for &alpha in &cc.alpha {
        let mech = BranchingMechanism::new(spec.mechanism.beta(), spec.mechanism.sigma(), LevyMeasure::power_tail(cc.c, alpha))
            .map_err(crate::moments::MomentError::Mechanism)?;
        for &p in &cc.p {
            let f = MomentFunction::power(p);
            let result = match &imm {
                Some(imm) => moments::cbi_f_moment_finite(&mech, imm, &f, true),
                None => moments::cb_f_moment_finite(&mech, &f, true),
            };
            let expected_finite = p < alpha && cc.immigration_alpha.is_none_or(|a| p < a);
            let finite = match result.verdict {
                Verdict::Finite => Some(true),
                Verdict::Infinite => Some(false),
                Verdict::Undetermined => None,
            };
            rows.push(CrosscheckRow { p, alpha, expected_finite, finite, agree: finite == Some(expected_finite), reason: result.reason });
        }
    }
    let all_agree = rows.iter().all(|r| r.agree);
    out.csv("criterion_crosscheck.csv", &rows)?;
    out.json("criterion_crosscheck.json", &CrosscheckSummary { c: cc.c, immigration_alpha: cc.immigration_alpha, rows, all_agree })
}

/// Run every analysis of the spec at `spec_path`, writing artifacts and a
/// `manifest.json` into the output directory.
///
/// Parse and configuration errors abort; analysis errors are recorded in the
/// manifest and set [`RunOutcome::failed`].
pub fn run_experiment(spec_path: &Path, opts: &RunOptions) -> Result<RunOutcome, LabError> {
    let src_bytes = fs::read(spec_path).map_err(|e| LabError::io(spec_path, e))?;
    let src = String::from_utf8(src_bytes.clone()).map_err(|_| LabError::Io {
        path: spec_path.to_path_buf(),
        message: "spec is not valid UTF-8".into(),
    })?;
    let file_label = spec_path.display().to_string();
    let mut spec = parse_spec(&src, &file_label)?;
    if let Some(seed) = opts.seed {
        spec.sim.seed = seed;
    }
    let spec_dir = spec_path.parent().unwrap_or(Path::new("."));

    let mut hasher = Sha256::new();
    hasher.update(&src_bytes);
    let starts = match &spec.initial {
        InitialLaw::Point { x0 } => vec![*x0],
        InitialLaw::Sample { file } => {
            let (values, bytes) = load_sample(&spec_dir.join(file))?;
            hasher.update([0u8]);
            hasher.update(&bytes);
            values
        }
    };
    let inputs_digest = hex(&hasher.finalize());

    let out_dir = match (&opts.out_dir, &spec.output_dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => spec_dir.join(dir),
        (None, None) => {
            let stem = spec_path.file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned());
            spec_dir.join(format!("{stem}-out"))
        }
    };
    fs::create_dir_all(&out_dir).map_err(|e| LabError::io(&out_dir, e))?;

    let ensemble = if spec.analyses.iter().any(|a| a.needs_ensemble()) {
        Some(simulator::ensemble_from(
            &spec.mechanism,
            spec.immigration.as_ref(),
            &starts,
            &spec.sim,
            spec.n_paths,
            0,
            &spec.t,
        ))
    } else {
        None
    };

    let mut analyses = Vec::new();
    for &analysis in &spec.analyses {
        let mut writer = Writer { dir: &out_dir, files: Vec::new() };
        let result = match (&ensemble, analysis.needs_ensemble()) {
            (Some(Err(e)), true) => Err(LabError::Sim(e.clone())),
            (ens, _) => {
                let states = match ens {
                    Some(Ok(s)) => Some(s.as_slice()),
                    _ => None,
                };
                let ctx = Context { spec: &spec, starts: &starts, states };
                match analysis {
                    Analysis::LaplaceMatch => laplace_match(&ctx, &mut writer),
                    Analysis::MomentEstimate => moment_estimate(&ctx, &mut writer),
                    Analysis::Hill => hill(&ctx, &mut writer),
                    Analysis::KsCoupling => ks_coupling(&ctx, &mut writer),
                    Analysis::CriterionCrosscheck => criterion_crosscheck(&ctx, &mut writer),
                }
            }
        };
        let (status, error) = match result {
            Ok(()) => ("ok", None),
            Err(e) => ("error", Some(e.to_string())),
        };
        analyses.push(ManifestAnalysis { name: analysis.name(), status, error, files: writer.files });
    }

    let failed = analyses.iter().any(|a| a.status == "error");
    let manifest = Manifest {
        tool: "cb-lab",
        version: env!("CARGO_PKG_VERSION"),
        spec_file: spec_path.file_name().map_or(file_label.clone(), |s| s.to_string_lossy().into_owned()),
        inputs_digest,
        seed: spec.sim.seed,
        n_paths: spec.n_paths,
        t: spec.t.clone(),
        sim: spec.sim.clone(),
        analyses,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
    text.push('\n');
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, text).map_err(|e| LabError::io(&manifest_path, e))?;
    Ok(RunOutcome { out_dir, manifest, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FELLER: &str = r#"
n_paths = 2000
t = [0.5, 1.0]
analyses = ["laplace_match", "moment_estimate", "criterion_crosscheck"]

[mechanism]
sigma = 1.4142135623730951

[sim]
dt = 0.01
seed = 11
"#;

    #[test]
    fn spec_defaults_and_horizon() {
        let spec = parse_spec(FELLER, "feller.toml").unwrap();
        assert_eq!(spec.sim.t_max, 1.0);
        assert_eq!(spec.initial, InitialLaw::Point { x0: 1.0 });
        assert_eq!(spec.laplace.lambdas, vec![0.5, 1.0, 2.0]);
        assert_eq!(spec.f, MomentFunction::power(1.0));
    }

    #[test]
    fn config_errors_are_line_anchored() {
        let src = FELLER.replace("n_paths = 2000", "n_paths = 20");
        match parse_spec(&src, "s.toml") {
            Err(LabError::Config { line, file, .. }) => assert_eq!((line, file.as_str()), (2, "s.toml")),
            other => panic!("{other:?}"),
        }
        let src = FELLER.replace("seed = 11", "seed = 11\nt_max = 0.75");
        match parse_spec(&src, "s.toml") {
            Err(LabError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let src = FELLER.replace("dt = 0.01", "dt = -1.0");
        match parse_spec(&src, "s.toml") {
            Err(LabError::Config { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
        let src = FELLER.replace("analyses = [", "analyses = [\"plot\", ");
        match parse_spec(&src, "s.toml") {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let src = FELLER.replace("[sim]", "[sim]\nwidth = 3");
        assert!(matches!(parse_spec(&src, "s.toml"), Err(LabError::Parse { line: 10, .. })));
    }

    #[test]
    fn key_lines_respect_sections() {
        let src = "a = 1\n[s]\na = 2\n[u]\nb = 1\n";
        assert_eq!(key_line(src, None, "a"), 1);
        assert_eq!(key_line(src, Some("s"), "a"), 3);
        assert_eq!(key_line(src, Some("u"), "a"), 4);
        assert_eq!(key_line("s.a = 1\n", Some("s"), "a"), 1);
    }

    #[test]
    fn empty_analyses_write_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.toml");
        fs::write(&path, "n_paths = 100\nt = [1.0]\n[mechanism]\nbeta = 1.0\n").unwrap();
        let out = run_experiment(&path, &RunOptions::default()).unwrap();
        assert!(!out.failed);
        let names: Vec<_> = fs::read_dir(&out.out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("manifest.json")]);
    }

    #[test]
    fn feller_run_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feller.toml");
        fs::write(&path, FELLER).unwrap();
        let run = |name: &str| {
            let opts = RunOptions { seed: None, out_dir: Some(dir.path().join(name)) };
            run_experiment(&path, &opts).unwrap()
        };
        let (a, b) = (run("a"), run("b"));
        assert!(!a.failed, "{:?}", a.manifest);
        assert_eq!(a.manifest, b.manifest);
        for f in a.manifest.analyses.iter().flat_map(|x| &x.files) {
            assert_eq!(fs::read(a.out_dir.join(&f.name)).unwrap(), fs::read(b.out_dir.join(&f.name)).unwrap());
        }
        let csv = fs::read_to_string(a.out_dir.join("laplace_match.csv")).unwrap();
        assert!(csv.starts_with("t,lambda,empirical,se,exact,abs_err,z_score\n"));
        assert_eq!(csv.lines().count(), 7);
        let table: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(a.out_dir.join("criterion_crosscheck.json")).unwrap()).unwrap();
        assert_eq!(table["all_agree"], true);
        let other = run_experiment(&path, &RunOptions { seed: Some(12), out_dir: Some(dir.path().join("c")) }).unwrap();
        assert_ne!(fs::read(other.out_dir.join("laplace_match.csv")).unwrap(), csv.into_bytes());
    }

    #[test]
    fn sample_initial_law_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("init.txt"), "# states\n0.5\n1.5\n").unwrap();
        let spec = "n_paths = 400\nt = [1.0]\nanalyses = [\"laplace_match\", \"hill\"]\n\
                    [initial]\nkind = \"sample\"\nfile = \"init.txt\"\n[mechanism]\nbeta = 1.0\n[sim]\ndt = 0.05\n";
        let path = dir.path().join("s.toml");
        fs::write(&path, spec).unwrap();
        let out = run_experiment(&path, &RunOptions::default()).unwrap();
        // 400 paths leave too few exceedances for the Hill estimator
        assert!(out.failed);
        assert_eq!(out.manifest.analyses[0].status, "ok");
        assert_eq!(out.manifest.analyses[1].status, "error");
        let csv = fs::read_to_string(out.out_dir.join("laplace_match.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert!(cols[5] < 1e-9, "{line}");
        }
        fs::write(dir.path().join("init.txt"), "0.5\nwide\n").unwrap();
        match run_experiment(&path, &RunOptions::default()) {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
