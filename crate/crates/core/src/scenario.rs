//! Scenario configs (TOML), named presets, the batch executor, and the
//! versioned binary field-dump format.

use crate::bundle::{
    BundleError, FlatHiggsBundle, bundle_preset, metric_constant, metric_conformal_scale,
    metric_equivariant_interpolation, metric_from_log_perturbation, random_hermitian_field,
    validate_metric_section,
};
use crate::chart::{Chart, ChartError, Topology};
use crate::diagnostics::{CSV_HEADER, DiagnosticsError};
use crate::field::{MatrixField, ScalarField, TwistKind};
use crate::flow::{
    FlowConfig, FlowError, FlowReport, Termination, einstein_factor, run_closed,
    run_dirichlet, run_exhaustion,
};
use crate::geometry::{GeometryError, MetricField, MetricPreset, check_gauduchon};
use crate::linalg::{C64, Mat};
use crate::poisson::{PoissonError, poisson_normalize};
use crate::stability::{StabilityError, extract_destabilizer, slope_table};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("toml parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Curvature(#[from] crate::curvature::CurvatureError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("field dump: {0}")]
    Dump(String),
}

impl ScenarioError {
    /// CLI exit code classification: 1 usage/config, 2 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::Toml(_) | ScenarioError::Chart(_) => 1,
            ScenarioError::Io { .. } | ScenarioError::Dump(_) => 1,
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// config schema

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartSpec {
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub origin: Vec<f64>,
    pub npts: Vec<usize>,
    pub topology: Vec<Topology>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    pub preset: String,
    #[serde(default)]
    pub amplitude: Option<f64>,
    /// volume-form constant `c_nu` (defaults to 1)
    #[serde(default)]
    pub c_nu: Option<f64>,
}

/// A complex matrix in configs: rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

fn parse_matrix(spec: &MatrixSpec) -> Result<Mat, ScenarioError> {
    let r = spec.len();
    if r < 1 || r > 4 || spec.iter().any(|row| row.len() != r) {
        return Err(ScenarioError::Config(format!("matrix must be square with rank 1..=4, got {r} rows")));
    }
    let mut m = Mat::zeros(r);
    for (i, row) in spec.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            m[(i, j)] = C64::new(z[0], z[1]);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub rank: Option<usize>,
    /// one matrix per periodic axis (identity when omitted)
    #[serde(default)]
    pub holonomy: Vec<MatrixSpec>,
    /// one matrix per chart axis (zero when omitted)
    #[serde(default)]
    pub higgs: Vec<MatrixSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InitialSpec {
    /// constant | log-sin | random-log | equivariant-interpolation | file
    pub kind: String,
    #[serde(default)]
    pub matrix: Option<MatrixSpec>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub mode: Option<usize>,
    #[serde(default)]
    pub modes: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub path: Option<String>,
    /// apply the conformal Poisson normalization to the initial metric
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSpec {
    /// auto | explicit
    pub mode: String,
    #[serde(default)]
    pub value: Option<f64>,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec { mode: "auto".into(), value: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    /// closed | dirichlet | exhaustion | verify-identities | stability-only
    pub mode: String,
    #[serde(default)]
    pub domains: Vec<f64>,
    #[serde(default)]
    pub spacing: Option<f64>,
    #[serde(default)]
    pub probe: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub fields: Option<String>,
    #[serde(default)]
    pub dump_phi: bool,
    #[serde(default)]
    pub dump_s: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub chart: ChartSpec,
    pub metric: MetricSpec,
    pub bundle: BundleSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Scenario::from_toml(&text)
    }
}

// ---------------------------------------------------------------------------
// embedded scenario presets

pub const SCENARIO_PRESETS: &[(&str, &str)] = &[
    ("heat-circle", include_str!("../presets/heat-circle.toml")),
    ("stationary", include_str!("../presets/stationary.toml")),
    ("diag-higgs2", include_str!("../presets/diag-higgs2.toml")),
    ("nilpotent-higgs2", include_str!("../presets/nilpotent-higgs2.toml")),
    ("unipotent2", include_str!("../presets/unipotent2.toml")),
    ("semistable-split", include_str!("../presets/semistable-split.toml")),
    ("sech-exhaustion", include_str!("../presets/sech-exhaustion.toml")),
    ("dirichlet-interval", include_str!("../presets/dirichlet-interval.toml")),
];

pub fn scenario_preset(name: &str) -> Result<Scenario, ScenarioError> {
    SCENARIO_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_toml(text))
        .unwrap_or_else(|| Err(ScenarioError::Config(format!("unknown scenario preset `{name}`"))))
}

// ---------------------------------------------------------------------------
// assembly

pub struct Assembled {
    pub chart: Chart,
    pub metric: MetricField,
    pub bundle: FlatHiggsBundle,
    pub h0: MatrixField,
    pub lambda: f64,
    pub flow: FlowConfig,
}

pub fn assemble(scn: &Scenario) -> Result<Assembled, ScenarioError> {
    let n = scn.chart.lengths.len();
    if scn.chart.npts.len() != n || scn.chart.topology.len() != n {
        return Err(ScenarioError::Config(
            "chart lengths/npts/topology must have matching dimension".into(),
        ));
    }
    let origin = if scn.chart.origin.is_empty() {
        vec![0.0; n]
    } else if scn.chart.origin.len() == n {
        scn.chart.origin.clone()
    } else {
        return Err(ScenarioError::Config("chart origin has wrong dimension".into()));
    };
    let chart = Chart::new(&origin, &scn.chart.lengths, &scn.chart.npts, &scn.chart.topology)?;

    let preset = MetricPreset::parse(&scn.metric.preset, scn.metric.amplitude)?;
    let c_nu = scn.metric.c_nu.unwrap_or(1.0);
    if !(c_nu > 0.0) {
        return Err(ScenarioError::Config("c_nu must be positive".into()));
    }
    let metric = preset.build_with(&chart, c_nu)?;

    let bundle = build_bundle(&chart, &scn.bundle)?;
    let h0 = build_initial(&chart, &bundle, &scn.initial)?;
    validate_metric_section(&h0)?;

    let lam_spec = scn.lambda.clone().unwrap_or_default();
    let mut lambda = match lam_spec.mode.as_str() {
        "auto" => einstein_factor(&h0, &bundle, &metric)?,
        "explicit" => lam_spec
            .value
            .ok_or_else(|| ScenarioError::Config("lambda.mode = explicit needs lambda.value".into()))?,
        other => return Err(ScenarioError::Config(format!("unknown lambda mode `{other}`"))),
    };

    let mut h0 = h0;
    if scn.initial.normalize {
        let norm = poisson_normalize(&h0, &bundle, &metric, lambda, 1e-10)?;
        h0 = norm.h_bar;
        if lam_spec.mode == "auto" {
            lambda = einstein_factor(&h0, &bundle, &metric)?;
        }
    }

    let flow = scn.flow.clone().unwrap_or_default();
    Ok(Assembled { chart, metric, bundle, h0, lambda, flow })
}

fn build_bundle(chart: &Chart, spec: &BundleSpec) -> Result<FlatHiggsBundle, ScenarioError> {
    if let Some(name) = &spec.preset {
        return Ok(bundle_preset(chart, name)?);
    }
    let rank = spec
        .rank
        .ok_or_else(|| ScenarioError::Config("bundle needs `preset` or `rank`".into()))?;
    let mut rho: Vec<Option<Mat>> = Vec::new();
    for m in &spec.holonomy {
        rho.push(Some(parse_matrix(m)?));
    }
    let mut theta: Vec<Mat> = Vec::new();
    for m in &spec.higgs {
        theta.push(parse_matrix(m)?);
    }
    Ok(FlatHiggsBundle::new(chart, rank, rho, theta)?)
}

fn build_initial(
    chart: &Chart,
    bundle: &FlatHiggsBundle,
    spec: &InitialSpec,
) -> Result<MatrixField, ScenarioError> {
    let r = bundle.rank();
    match spec.kind.as_str() {
        "constant" => {
            let m = match &spec.matrix {
                Some(ms) => parse_matrix(ms)?,
                None => Mat::identity(r),
            };
            if m.rank() != r {
                return Err(ScenarioError::Config("initial matrix rank mismatch".into()));
            }
            Ok(metric_constant(chart, m))
        }
        "log-sin" => {
            // H = exp(amp sin(2 pi k x^1 / L)) Id
            let amp = spec.amplitude.unwrap_or(1.0);
            let k = spec.mode.unwrap_or(1) as f64;
            let l = chart.len_axis(0);
            let x0 = chart.origin(0);
            let base = metric_constant(chart, Mat::identity(r));
            let phi = ScalarField::from_fn(chart, |x| {
                amp * (std::f64::consts::TAU * k * (x[0] - x0) / l).sin()
            });
            Ok(metric_conformal_scale(&base, &phi))
        }
        "log-gauss" => {
            // H = exp(amp e^{-x^2}) Id; a fixed ambient profile, suitable for
            // exhaustion runs where every truncation sees the same data
            let amp = spec.amplitude.unwrap_or(1.0);
            let base = metric_constant(chart, Mat::identity(r));
            let phi = ScalarField::from_fn(chart, |x| amp * (-x[0] * x[0]).exp());
            Ok(metric_conformal_scale(&base, &phi))
        }
        "log-ramp-sin" => {
            // H = exp(x + amp sin(pi (x - x0)/L)) Id: boundary values e^{x0},
            // e^{x0+L} with an interior bump
            let amp = spec.amplitude.unwrap_or(0.5);
            let l = chart.len_axis(0);
            let x0 = chart.origin(0);
            let base = metric_constant(chart, Mat::identity(r));
            let phi = ScalarField::from_fn(chart, |x| {
                x[0] + amp * (std::f64::consts::PI * (x[0] - x0) / l).sin()
            });
            Ok(metric_conformal_scale(&base, &phi))
        }
        "random-log" => {
            if !bundle.twists().is_trivial() {
                return Err(ScenarioError::Config(
                    "random-log initial metrics need trivial holonomy".into(),
                ));
            }
            let s = random_hermitian_field(
                chart,
                r,
                spec.amplitude.unwrap_or(0.3),
                spec.modes.unwrap_or(2),
                spec.seed.unwrap_or(1),
            );
            Ok(metric_from_log_perturbation(&metric_constant(chart, Mat::identity(r)), &s)?)
        }
        "equivariant-interpolation" => Ok(metric_equivariant_interpolation(chart, bundle)?),
        "file" => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| ScenarioError::Config("initial.kind = file needs a path".into()))?;
            let dump = read_field_dump(Path::new(path))?;
            if dump.npts != (0..chart.dim()).map(|a| chart.npts(a)).collect::<Vec<_>>()
                || dump.rank != r
            {
                return Err(ScenarioError::Config("field dump shape mismatch".into()));
            }
            let mut h = MatrixField::new(chart, r, TwistKind::MetricLike);
            h.data = dump.h;
            validate_metric_section(&h)?;
            Ok(h)
        }
        other => Err(ScenarioError::Config(format!("unknown initial kind `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// binary field dumps

pub const DUMP_MAGIC: &[u8; 4] = b"AHYM";
pub const DUMP_VERSION: u32 = 1;

pub struct FieldDump {
    pub npts: Vec<usize>,
    pub rank: usize,
    pub h: Vec<Mat>,
    pub phi: Option<Vec<Mat>>,
    pub s: Option<Vec<Mat>>,
}

fn write_mat_block(out: &mut Vec<u8>, field: &[Mat], rank: usize) {
    for m in field {
        for i in 0..rank {
            for j in 0..rank {
                out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
                out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
            }
        }
    }
}

/// Serialize fields: magic `AHYM`, u32 version, u32 n, u32 N_i list, u32 r,
/// then row-major complex entries as little-endian f64 pairs, fields ordered
/// `(H, optional Phi, optional s)`; trailing fields are present when the
/// payload length covers them.
pub fn write_field_dump(
    path: &Path,
    chart: &Chart,
    h: &MatrixField,
    phi: Option<&MatrixField>,
    s: Option<&MatrixField>,
) -> Result<(), ScenarioError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(chart.dim() as u32).to_le_bytes());
    for a in 0..chart.dim() {
        out.extend_from_slice(&(chart.npts(a) as u32).to_le_bytes());
    }
    out.extend_from_slice(&(h.r as u32).to_le_bytes());
    write_mat_block(&mut out, &h.data, h.r);
    if let Some(p) = phi {
        write_mat_block(&mut out, &p.data, h.r);
        if let Some(sv) = s {
            write_mat_block(&mut out, &sv.data, h.r);
        }
    } else if s.is_some() {
        return Err(ScenarioError::Dump("`s` requires `Phi` to be dumped too (field order is H, Phi, s)".into()));
    }
    std::fs::write(path, out).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_field_dump(path: &Path) -> Result<FieldDump, ScenarioError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
    let bad = |m: &str| ScenarioError::Dump(m.to_string());
    if buf.len() < 16 || &buf[0..4] != DUMP_MAGIC {
        return Err(bad("missing AHYM magic"));
    }
    let rd_u32 = |off: usize| -> u32 { u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) };
    let version = rd_u32(4);
    if version != DUMP_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = rd_u32(8) as usize;
    if n < 1 || n > 3 || buf.len() < 16 + 4 * n {
        return Err(bad("corrupt header"));
    }
    let mut npts = Vec::with_capacity(n);
    for a in 0..n {
        npts.push(rd_u32(12 + 4 * a) as usize);
    }
    let rank = rd_u32(12 + 4 * n) as usize;
    if rank < 1 || rank > 4 {
        return Err(bad("rank out of range"));
    }
    let header = 16 + 4 * n;
    let size: usize = npts.iter().product();
    let field_bytes = size * rank * rank * 16;
    let payload = buf.len() - header;
    if field_bytes == 0 || payload % field_bytes != 0 {
        return Err(bad("payload length is not a whole number of fields"));
    }
    let nfields = payload / field_bytes;
    if nfields < 1 || nfields > 3 {
        return Err(bad("expected 1..=3 fields (H, Phi, s)"));
    }
    let read_block = |which: usize| -> Vec<Mat> {
        let base = header + which * field_bytes;
        let mut out = Vec::with_capacity(size);
        for p in 0..size {
            let mut m = Mat::zeros(rank);
            for i in 0..rank {
                for j in 0..rank {
                    let off = base + (p * rank * rank + i * rank + j) * 16;
                    let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                    let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
                    m[(i, j)] = C64::new(re, im);
                }
            }
            out.push(m);
        }
        out
    };
    Ok(FieldDump {
        npts,
        rank,
        h: read_block(0),
        phi: (nfields >= 2).then(|| read_block(1)),
        s: (nfields >= 3).then(|| read_block(2)),
    })
}

// ---------------------------------------------------------------------------
// execution

#[derive(Debug, Serialize)]
pub struct ScenarioOutcome {
    pub mode: String,
    pub lambda: f64,
    pub gauduchon_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<crate::flow::FlowSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<crate::stability::StabilityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destabilizer: Option<crate::stability::DestabilizerReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustion_pairs: Option<Vec<((usize, usize), f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustion_certificate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux_bound: Option<FluxBound>,
    /// process exit code implied by the outcome
    pub exit_code: i32,
}

#[derive(Debug, Serialize)]
pub struct FluxBound {
    pub sup_v: f64,
    /// worst `int_0^t sup|Phi| - sup v`; the estimate holds when negative
    pub defect: f64,
}

#[derive(Debug, Serialize)]
pub struct IdentityReport {
    pub key_identity_residual: f64,
    pub gauge_norm_defect: f64,
    pub gauge_deriv_defect: f64,
}

fn write_text(path: &Path, text: &str) -> Result<(), ScenarioError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ScenarioError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(text.as_bytes()).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn csv_text(rows: &[crate::diagnostics::DiagnosticsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

fn flow_exit_code(term: Termination) -> i32 {
    match term {
        Termination::Converged | Termination::TMax | Termination::DivergenceDetected => 0,
        Termination::BlowupGuard => 2,
    }
}

/// Execute a scenario, writing the requested artifacts under `out_dir`.
pub fn run_scenario(scn: &Scenario, out_dir: &Path) -> Result<ScenarioOutcome, ScenarioError> {
    let asm = assemble(scn)?;
    let g_resid = check_gauduchon(&asm.metric);
    let csv_path = out_dir.join(scn.output.csv.as_deref().unwrap_or("series.csv"));
    let summary_path = out_dir.join(scn.output.summary.as_deref().unwrap_or("summary.json"));

    let mut outcome = ScenarioOutcome {
        mode: scn.run.mode.clone(),
        lambda: asm.lambda,
        gauduchon_residual: g_resid,
        flow: None,
        stability: None,
        destabilizer: None,
        exhaustion_pairs: None,
        exhaustion_certificate: None,
        identities: None,
        flux_bound: None,
        exit_code: 0,
    };

    match scn.run.mode.as_str() {
        "closed" => {
            let rep = run_closed(&asm.h0, &asm.bundle, &asm.metric, asm.lambda, &asm.flow)?;
            finish_flow(scn, &asm, rep, &csv_path, out_dir, &mut outcome)?;
        }
        "dirichlet" => {
            let rep = run_dirichlet(
                &asm.h0,
                &asm.h0,
                &asm.h0,
                &asm.bundle,
                &asm.metric,
                asm.lambda,
                &asm.flow,
            )?;
            let (_, sup_v) =
                crate::poisson::dirichlet_flux_bound(&asm.h0, &asm.bundle, &asm.metric, asm.lambda)?;
            outcome.flux_bound = Some(FluxBound {
                sup_v,
                defect: crate::flow::flux_bound_defect(&rep.rows, sup_v),
            });
            finish_flow(scn, &asm, rep, &csv_path, out_dir, &mut outcome)?;
        }
        "exhaustion" => {
            if scn.run.domains.len() < 2 {
                return Err(ScenarioError::Config("exhaustion needs >= 2 domain radii".into()));
            }
            let spacing = scn
                .run
                .spacing
                .ok_or_else(|| ScenarioError::Config("exhaustion needs run.spacing".into()))?;
            let probe = scn
                .run
                .probe
                .ok_or_else(|| ScenarioError::Config("exhaustion needs run.probe".into()))?;
            let preset = MetricPreset::parse(&scn.metric.preset, scn.metric.amplitude)?;
            let init_spec = scn.initial.clone();
            let bundle_spec = scn.bundle.clone();
            let rep = run_exhaustion(
                &scn.run.domains,
                spacing,
                (probe[0], probe[1]),
                |chart| preset.build(chart),
                |chart| build_bundle(chart, &bundle_spec).expect("bundle buildable on truncation"),
                |chart| {
                    let b = build_bundle(chart, &bundle_spec).expect("bundle");
                    build_initial(chart, &b, &init_spec).expect("initial metric buildable")
                },
                |x| x.cosh().ln(),
                asm.lambda,
                &asm.flow,
            )?;
            for (i, dom) in rep.domains.iter().enumerate() {
                let p = out_dir.join(format!(
                    "{}.domain{}.csv",
                    scn.output.csv.as_deref().unwrap_or("series").trim_end_matches(".csv"),
                    i
                ));
                write_text(&p, &csv_text(&dom.report.rows))?;
            }
            outcome.exhaustion_pairs = Some(rep.pairs.clone());
            outcome.exhaustion_certificate = Some(rep.certificate);
        }
        "verify-identities" => {
            let s = random_hermitian_field(&asm.chart, asm.bundle.rank(), 0.4, 2, 7);
            let h = metric_from_log_perturbation(&asm.h0, &s)?;
            let key = crate::diagnostics::key_identity_residual(
                &asm.h0,
                &h,
                &asm.bundle,
                &asm.metric,
                asm.lambda,
            )?;
            let (norm_defect, deriv_defect) = crate::diagnostics::gauge_equivalence_defect(
                &asm.h0,
                &h,
                &asm.bundle,
                &asm.metric,
                asm.lambda,
            )?;
            outcome.identities = Some(IdentityReport {
                key_identity_residual: key,
                gauge_norm_defect: norm_defect,
                gauge_deriv_defect: deriv_defect,
            });
        }
        "stability-only" => {
            let verdict = slope_table(&asm.bundle, &asm.h0, &asm.metric)?;
            outcome.stability = Some(verdict);
        }
        other => return Err(ScenarioError::Config(format!("unknown run mode `{other}`"))),
    }

    let json = serde_json::to_string_pretty(&outcome).expect("serializable outcome");
    write_text(&summary_path, &json)?;
    Ok(outcome)
}

fn finish_flow(
    scn: &Scenario,
    asm: &Assembled,
    rep: FlowReport,
    csv_path: &Path,
    out_dir: &Path,
    outcome: &mut ScenarioOutcome,
) -> Result<(), ScenarioError> {
    write_text(csv_path, &csv_text(&rep.rows))?;
    outcome.exit_code = flow_exit_code(rep.summary.termination);
    if rep.summary.termination == Termination::DivergenceDetected {
        // stability dichotomy: hand the trailing normalized logs to the extractor
        match extract_destabilizer(&rep.snapshots, &asm.h0, &asm.bundle, &asm.metric)? {
            Some(ext) => outcome.destabilizer = Some(ext.report),
            None => {}
        }
        let verdict = slope_table(&asm.bundle, &asm.h0, &asm.metric)?;
        outcome.stability = Some(verdict);
    }
    if let Some(fields) = &scn.output.fields {
        let phi = crate::curvature::phi_field(&rep.final_h, &asm.bundle, &asm.metric, asm.lambda)?;
        let s = crate::diagnostics::endo_log(&asm.h0, &rep.final_h, &asm.chart)?;
        write_field_dump(
            &out_dir.join(fields),
            &asm.chart,
            &rep.final_h,
            scn.output.dump_phi.then_some(&phi),
            (scn.output.dump_phi && scn.output.dump_s).then_some(&s),
        )?;
    }
    outcome.flow = Some(rep.summary);
    Ok(())
}

/// Documentation text for `ahym dump-schema`.
pub fn dump_schema_text() -> String {
    format!(
        "Field dump (binary, little endian):\n\
         offset 0:  4 bytes  magic \"AHYM\"\n\
         offset 4:  u32      version (currently {DUMP_VERSION})\n\
         offset 8:  u32      n (chart dimension, 1..=3)\n\
         offset 12: u32*n    N_i (points per axis)\n\
         then:      u32      r (fiber rank, 1..=4)\n\
         then:      fields, each N_1*...*N_n * r * r complex entries,\n\
                    row-major over the grid (axis 0 slowest), row-major over\n\
                    the r x r fiber, each entry two little-endian f64 (re, im).\n\
         Field order: H, then optionally Phi, then optionally s; trailing\n\
         fields are present iff the payload length covers them.\n\n\
         CSV schema (one row per sample):\n  {CSV_HEADER}\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn presets_parse_and_assemble() {
        for (name, _) in SCENARIO_PRESETS {
            let scn = scenario_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            if scn.run.mode == "exhaustion" {
                continue; // assembled per-domain at run time
            }
            assemble(&scn).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn dump_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let chart = Chart::circle(16);
        let h = crate::bundle::random_hermitian_field(&chart, 2, 0.5, 2, 3);
        let mut hpd = MatrixField::new(&chart, 2, TwistKind::MetricLike);
        for (o, m) in hpd.data.iter_mut().zip(h.data.iter()) {
            *o = m.exp_hermitian().unwrap();
        }
        let phi = crate::bundle::random_hermitian_field(&chart, 2, 0.1, 2, 4);
        let path = dir.path().join("f.ahym");
        write_field_dump(&path, &chart, &hpd, Some(&phi), None).unwrap();
        let back = read_field_dump(&path).unwrap();
        assert_eq!(back.npts, vec![16]);
        assert_eq!(back.rank, 2);
        for (a, b) in back.h.iter().zip(hpd.data.iter()) {
            for i in 0..2 {
                for j in 0..2 {
                    assert!(a[(i, j)].re.to_bits() == b[(i, j)].re.to_bits());
                    assert!(a[(i, j)].im.to_bits() == b[(i, j)].im.to_bits());
                }
            }
        }
        assert!(back.phi.is_some() && back.s.is_none());

        // round-trip through a second write is byte-identical
        let path2 = dir.path().join("g.ahym");
        let mut h2 = MatrixField::new(&chart, 2, TwistKind::MetricLike);
        h2.data = back.h;
        let mut p2 = MatrixField::new(&chart, 2, TwistKind::AdjointLike);
        p2.data = back.phi.unwrap();
        write_field_dump(&path2, &chart, &h2, Some(&p2), None).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(&path2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn dump_rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ahym");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_field_dump(&path).is_err());
    }

    #[test]
    fn stationary_preset_runs_deterministically() {
        let dir = tempdir().unwrap();
        let scn = scenario_preset("stationary").unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        std::fs::create_dir_all(&out1).unwrap();
        std::fs::create_dir_all(&out2).unwrap();
        let o1 = run_scenario(&scn, &out1).unwrap();
        let o2 = run_scenario(&scn, &out2).unwrap();
        assert_eq!(o1.exit_code, 0);
        assert_eq!(o2.exit_code, 0);
        let c1 = std::fs::read(out1.join("series.csv")).unwrap();
        let c2 = std::fs::read(out2.join("series.csv")).unwrap();
        assert_eq!(c1, c2, "CSV output must be bit-identical across runs");
    }

    #[test]
    fn bad_config_reports_usage_error() {
        let r = Scenario::from_toml("this is not toml [");
        assert!(matches!(r, Err(ScenarioError::Toml(_))));
        let scn = scenario_preset("stationary").unwrap();
        let mut broken = scn.clone();
        broken.run.mode = "warp".into();
        let dir = tempdir().unwrap();
        let err = run_scenario(&broken, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
